//! AND-OR circuits compiled from derivation forests.
//!
//! Every answer of the forest becomes an OR over its alternatives and every
//! alternative an AND of its rule's leaf and the answers it uses, so tabled
//! answers turn into shared sub-circuits. Nodes are stored children-first.

use std::collections::{BTreeMap, HashMap};

use crate::grammar::softmax;
use crate::leaf::{Leaf, LeafKey, ParamError, Params};
use crate::oracle::OracleKey;
use crate::resolver::{AltItem, Derivation, DerivationForest};
use crate::terms::Term;

/// Below this leaf value evaluation switches to log space.
pub const LOG_SPACE_THRESHOLD: f64 = 1e-12;

pub type NodeId = usize;

#[derive(Clone, Debug, PartialEq)]
pub enum Node {
    Zero,
    One,
    Leaf(usize),
    And(Vec<NodeId>),
    Or(Vec<NodeId>),
}

pub trait Semiring {
    fn zero() -> f64;
    fn one() -> f64;
    fn plus(a: f64, b: f64) -> f64;
    fn times(a: f64, b: f64) -> f64;
    /// Maps a probability into the semiring's carrier.
    fn lift(p: f64) -> f64;
}

pub struct SumProduct;
pub struct MaxProduct;
/// Sum-product over log probabilities.
pub struct LogSumProduct;
/// Max-product over log probabilities.
pub struct LogMaxProduct;

impl Semiring for SumProduct {
    fn zero() -> f64 {
        0.0
    }
    fn one() -> f64 {
        1.0
    }
    fn plus(a: f64, b: f64) -> f64 {
        a + b
    }
    fn times(a: f64, b: f64) -> f64 {
        a * b
    }
    fn lift(p: f64) -> f64 {
        p
    }
}

impl Semiring for MaxProduct {
    fn zero() -> f64 {
        0.0
    }
    fn one() -> f64 {
        1.0
    }
    fn plus(a: f64, b: f64) -> f64 {
        if b > a {
            b
        } else {
            a
        }
    }
    fn times(a: f64, b: f64) -> f64 {
        a * b
    }
    fn lift(p: f64) -> f64 {
        p
    }
}

pub fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

impl Semiring for LogSumProduct {
    fn zero() -> f64 {
        f64::NEG_INFINITY
    }
    fn one() -> f64 {
        0.0
    }
    fn plus(a: f64, b: f64) -> f64 {
        log_add_exp(a, b)
    }
    fn times(a: f64, b: f64) -> f64 {
        a + b
    }
    fn lift(p: f64) -> f64 {
        p.ln()
    }
}

impl Semiring for LogMaxProduct {
    fn zero() -> f64 {
        f64::NEG_INFINITY
    }
    fn one() -> f64 {
        0.0
    }
    fn plus(a: f64, b: f64) -> f64 {
        MaxProduct::plus(a, b)
    }
    fn times(a: f64, b: f64) -> f64 {
        a + b
    }
    fn lift(p: f64) -> f64 {
        p.ln()
    }
}

#[derive(Clone, Debug)]
pub struct Circuit {
    nodes: Vec<Node>,
    leaves: Vec<Leaf>,
    root: NodeId,
    /// Node of each forest answer reachable from the root.
    answer_nodes: HashMap<(usize, usize), NodeId>,
}

/// Result of a forward pass.
#[derive(Clone, Debug)]
pub struct Evaluation {
    /// Node values, as logarithms when `log_space` is set.
    pub node_values: Vec<f64>,
    pub log_space: bool,
}

impl Evaluation {
    pub fn root_value(&self, c: &Circuit) -> f64 {
        let v = self.node_values[c.root];
        if self.log_space {
            v.exp()
        } else {
            v
        }
    }

    pub fn root_log_value(&self, c: &Circuit) -> f64 {
        let v = self.node_values[c.root];
        if self.log_space {
            v
        } else {
            v.ln()
        }
    }
}

/// The most probable derivation.
#[derive(Clone, Debug)]
pub struct Best {
    pub probability: f64,
    pub log_probability: f64,
    pub derivation: Derivation,
    pub tokens: Vec<Term>,
}

/// Gradients chained back to the parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    /// With respect to the unnormalised weights of each learnable group.
    pub learnable: BTreeMap<String, Vec<f64>>,
    /// With respect to each oracle distribution entry, for export.
    pub oracle: BTreeMap<OracleKey, Vec<f64>>,
    /// With respect to each static rule probability.
    pub statics: BTreeMap<usize, f64>,
}

struct Builder {
    nodes: Vec<Node>,
    leaves: Vec<Leaf>,
    leaf_index: HashMap<LeafKey, NodeId>,
    answer_nodes: HashMap<(usize, usize), NodeId>,
    zero: Option<NodeId>,
    one: Option<NodeId>,
}

impl Builder {
    fn push(&mut self, n: Node) -> NodeId {
        self.nodes.push(n);
        self.nodes.len() - 1
    }

    fn one(&mut self) -> NodeId {
        match self.one {
            Some(id) => id,
            None => {
                let id = self.push(Node::One);
                self.one = Some(id);
                id
            }
        }
    }

    fn leaf(&mut self, leaf: &Leaf) -> Option<NodeId> {
        if *leaf == Leaf::One {
            return None;
        }
        let key = leaf.key();
        if let Some(&id) = self.leaf_index.get(&key) {
            return Some(id);
        }
        self.leaves.push(leaf.clone());
        let id = self.push(Node::Leaf(self.leaves.len() - 1));
        self.leaf_index.insert(key, id);
        Some(id)
    }

    fn combine(&mut self, mut children: Vec<NodeId>, and: bool) -> NodeId {
        match children.len() {
            0 if and => self.one(),
            1 => children.pop().unwrap(),
            _ if and => self.push(Node::And(children)),
            _ => self.push(Node::Or(children)),
        }
    }

    fn answer(&mut self, f: &DerivationForest, t: usize, a: usize) -> NodeId {
        if let Some(&id) = self.answer_nodes.get(&(t, a)) {
            return id;
        }
        let mut alt_nodes = Vec::new();
        for alt in &f.tables()[t].answers[a].alts {
            let mut children: Vec<NodeId> = self.leaf(&alt.leaf).into_iter().collect();
            for item in &alt.items {
                if let AltItem::Child { table, answer, .. } = item {
                    children.push(self.answer(f, *table, *answer));
                }
            }
            alt_nodes.push(self.combine(children, true));
        }
        let id = self.combine(alt_nodes, false);
        self.answer_nodes.insert((t, a), id);
        id
    }
}

/// Compiles a forest; shared table answers become shared sub-circuits.
pub fn compile(forest: &DerivationForest) -> Circuit {
    let mut b = Builder {
        nodes: Vec::new(),
        leaves: Vec::new(),
        leaf_index: HashMap::new(),
        answer_nodes: HashMap::new(),
        zero: None,
        one: None,
    };
    let roots: Vec<NodeId> =
        forest.root_answers().iter().map(|&a| b.answer(forest, forest.root_table(), a)).collect();
    let root = if roots.is_empty() {
        let id = b.push(Node::Zero);
        b.zero = Some(id);
        id
    } else {
        b.combine(roots, false)
    };
    Circuit { nodes: b.nodes, leaves: b.leaves, root, answer_nodes: b.answer_nodes }
}

impl Circuit {
    /// Builds a circuit directly; `nodes` must list children before parents.
    pub fn from_parts(nodes: Vec<Node>, leaves: Vec<Leaf>, root: NodeId) -> Self {
        for (i, n) in nodes.iter().enumerate() {
            match n {
                Node::And(cs) | Node::Or(cs) => {
                    assert!(!cs.is_empty() && cs.iter().all(|&c| c < i), "children must precede node {i}")
                }
                Node::Leaf(l) => assert!(*l < leaves.len(), "leaf {l} out of range"),
                _ => {}
            }
        }
        assert!(root < nodes.len());
        Circuit { nodes, leaves, root, answer_nodes: HashMap::new() }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn leaves(&self) -> &[Leaf] {
        &self.leaves
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn is_zero(&self) -> bool {
        self.nodes[self.root] == Node::Zero
    }

    /// Number of parents of each node.
    pub fn in_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.nodes.len()];
        for n in &self.nodes {
            if let Node::And(cs) | Node::Or(cs) = n {
                cs.iter().for_each(|&c| deg[c] += 1);
            }
        }
        deg
    }

    /// Node of a forest answer.
    pub fn answer_node(&self, table: usize, answer: usize) -> Option<NodeId> {
        self.answer_nodes.get(&(table, answer)).copied()
    }

    pub fn leaf_values(&self, params: &Params) -> Result<Vec<f64>, ParamError> {
        self.leaves.iter().map(|l| params.value(l)).collect()
    }

    fn needs_log_space(&self, leaf_values: &[f64]) -> bool {
        leaf_values.iter().any(|&v| v < LOG_SPACE_THRESHOLD)
    }

    /// Forward pass under an arbitrary semiring.
    pub fn forward<S: Semiring>(&self, leaf_values: &[f64]) -> Vec<f64> {
        let mut vals = Vec::with_capacity(self.nodes.len());
        for n in &self.nodes {
            let v = match n {
                Node::Zero => S::zero(),
                Node::One => S::one(),
                Node::Leaf(l) => S::lift(leaf_values[*l]),
                Node::And(cs) => cs.iter().fold(S::one(), |acc, &c| S::times(acc, vals[c])),
                Node::Or(cs) => cs.iter().fold(S::zero(), |acc, &c| S::plus(acc, vals[c])),
            };
            vals.push(v);
        }
        vals
    }

    /// Total probability of the forest's derivations.
    pub fn sum_product(&self, leaf_values: &[f64]) -> Evaluation {
        if self.needs_log_space(leaf_values) {
            Evaluation { node_values: self.forward::<LogSumProduct>(leaf_values), log_space: true }
        } else {
            Evaluation { node_values: self.forward::<SumProduct>(leaf_values), log_space: false }
        }
    }

    /// Max-product values with, for every OR node, the first child attaining
    /// the maximum.
    pub fn max_product(&self, leaf_values: &[f64]) -> (Evaluation, Vec<usize>) {
        let log_space = self.needs_log_space(leaf_values);
        let node_values = if log_space {
            self.forward::<LogMaxProduct>(leaf_values)
        } else {
            self.forward::<MaxProduct>(leaf_values)
        };
        let argmax = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| match n {
                Node::Or(cs) => cs.iter().position(|&c| node_values[c] == node_values[i]).unwrap_or(0),
                _ => 0,
            })
            .collect();
        (Evaluation { node_values, log_space }, argmax)
    }

    /// The most probable derivation of `forest`, which must be the forest
    /// this circuit was compiled from.
    pub fn best(&self, forest: &DerivationForest, leaf_values: &[f64]) -> Option<Best> {
        if forest.is_empty() {
            return None;
        }
        let (eval, argmax) = self.max_product(leaf_values);
        let choose = |t: usize, a: usize| {
            let alts = forest.tables()[t].answers[a].alts.len();
            if alts == 1 {
                0
            } else {
                argmax[self.answer_nodes[&(t, a)]]
            }
        };
        let roots = forest.root_answers();
        let root = if roots.len() == 1 { roots[0] } else { roots[argmax[self.root]] };
        let (derivation, tokens) = forest.reconstruct(root, &choose)?;
        Some(Best {
            probability: eval.root_value(self),
            log_probability: eval.root_log_value(self),
            derivation,
            tokens,
        })
    }

    /// Partial derivatives of the root value with respect to each leaf.
    pub fn backward(&self, leaf_values: &[f64]) -> Vec<f64> {
        if self.needs_log_space(leaf_values) {
            self.backward_log_adjoints(leaf_values).into_iter().map(f64::exp).collect()
        } else {
            self.backward_linear(leaf_values)
        }
    }

    /// Partial derivatives of the log of the root value with respect to each
    /// leaf; stable when the root value is tiny.
    pub fn backward_log(&self, leaf_values: &[f64]) -> Vec<f64> {
        if self.needs_log_space(leaf_values) {
            let lv = self.forward::<LogSumProduct>(leaf_values)[self.root];
            self.backward_log_adjoints(leaf_values).into_iter().map(|la| (la - lv).exp()).collect()
        } else {
            let v = self.forward::<SumProduct>(leaf_values)[self.root];
            self.backward_linear(leaf_values).into_iter().map(|g| g / v).collect()
        }
    }

    fn backward_linear(&self, leaf_values: &[f64]) -> Vec<f64> {
        let vals = self.forward::<SumProduct>(leaf_values);
        let mut adj = vec![0.0; self.nodes.len()];
        let mut grads = vec![0.0; self.leaves.len()];
        adj[self.root] = 1.0;
        for i in (0..self.nodes.len()).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            match &self.nodes[i] {
                Node::Leaf(l) => grads[*l] += a,
                Node::Or(cs) => cs.iter().for_each(|&c| adj[c] += a),
                Node::And(cs) => {
                    // Products of the other children via prefix and suffix sweeps.
                    let mut suffix = vec![1.0; cs.len() + 1];
                    for k in (0..cs.len()).rev() {
                        suffix[k] = suffix[k + 1] * vals[cs[k]];
                    }
                    let mut prefix = 1.0;
                    for (k, &c) in cs.iter().enumerate() {
                        adj[c] += a * prefix * suffix[k + 1];
                        prefix *= vals[c];
                    }
                }
                Node::Zero | Node::One => {}
            }
        }
        grads
    }

    /// Log of each leaf's adjoint.
    fn backward_log_adjoints(&self, leaf_values: &[f64]) -> Vec<f64> {
        let vals = self.forward::<LogSumProduct>(leaf_values);
        let mut adj = vec![f64::NEG_INFINITY; self.nodes.len()];
        let mut grads = vec![f64::NEG_INFINITY; self.leaves.len()];
        adj[self.root] = 0.0;
        for i in (0..self.nodes.len()).rev() {
            let a = adj[i];
            if a == f64::NEG_INFINITY {
                continue;
            }
            match &self.nodes[i] {
                Node::Leaf(l) => grads[*l] = log_add_exp(grads[*l], a),
                Node::Or(cs) => cs.iter().for_each(|&c| adj[c] = log_add_exp(adj[c], a)),
                Node::And(cs) => {
                    let mut suffix = vec![0.0; cs.len() + 1];
                    for k in (0..cs.len()).rev() {
                        suffix[k] = suffix[k + 1] + vals[cs[k]];
                    }
                    let mut prefix = 0.0;
                    for (k, &c) in cs.iter().enumerate() {
                        adj[c] = log_add_exp(adj[c], a + prefix + suffix[k + 1]);
                        prefix += vals[c];
                    }
                }
                Node::Zero | Node::One => {}
            }
        }
        grads
    }

    /// Routes per-leaf gradients to the parameters they depend on, through
    /// the softmax of each learnable group.
    pub fn chain(&self, leaf_grads: &[f64], params: &Params) -> Gradients {
        let mut out = Gradients::default();
        let mut group_grads: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for (leaf, &g) in self.leaves.iter().zip(leaf_grads) {
            if let Some((group, branch, size)) = params.learnable_source(leaf) {
                let n = params.groups.get(&group).map_or(size, Vec::len);
                group_grads.entry(group).or_insert_with(|| vec![0.0; n])[branch] += g;
                continue;
            }
            match leaf {
                Leaf::Static { rule, .. } => *out.statics.entry(*rule).or_default() += g,
                Leaf::Oracle { request, index } => {
                    out.oracle.entry(request.key()).or_insert_with(|| vec![0.0; request.domain().len()])[*index] += g
                }
                _ => {}
            }
        }
        for (group, gp) in group_grads {
            let p = match params.groups.get(&group) {
                Some(w) => softmax(w),
                None => vec![1.0 / gp.len() as f64; gp.len()],
            };
            let mean: f64 = p.iter().zip(&gp).map(|(p, g)| p * g).sum();
            let gw = p.iter().zip(&gp).map(|(p, g)| p * (g - mean)).collect();
            out.learnable.insert(group, gw);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;
    use std::sync::Arc;

    use proptest::prelude::*;

    use super::*;
    use crate::grammar::parse_grammar_source;
    use crate::oracle::{FnHandle, OracleRegistry, OracleRequest, OracleSession, RawAnswer};
    use crate::resolver::fixtures::workflow;
    use crate::resolver::{derive, tokens_to_strings, Goal};
    use crate::terms::Atom;

    fn statics(ps: &[f64]) -> Vec<Leaf> {
        ps.iter().enumerate().map(|(i, &p)| Leaf::Static { rule: i, p }).collect()
    }

    #[test]
    fn and_chain_and_or_gradients() {
        let and = Circuit::from_parts(vec![Node::Leaf(0), Node::Leaf(1), Node::And(vec![0, 1])], statics(&[0.3, 0.8]), 2);
        let g = and.backward(&[0.3, 0.8]);
        assert!((g[0] - 0.8).abs() < 1e-15 && (g[1] - 0.3).abs() < 1e-15);

        let or = Circuit::from_parts(vec![Node::Leaf(0), Node::Leaf(1), Node::Or(vec![0, 1])], statics(&[0.3, 0.6]), 2);
        assert_eq!(or.backward(&[0.3, 0.6]), vec![1.0, 1.0]);
    }

    #[test]
    fn log_space_backward_matches_linear() {
        let nodes = vec![
            Node::Leaf(0),
            Node::Leaf(1),
            Node::Leaf(2),
            Node::And(vec![0, 1]),
            Node::And(vec![1, 2, 2]),
            Node::Or(vec![3, 4]),
        ];
        let c = Circuit::from_parts(nodes, statics(&[0.3, 0.5, 0.2]), 5);
        let lin = c.backward(&[0.3, 0.5, 0.2]);
        // A tiny leaf forces log space; compare against the linear formula.
        let vals = [0.3, 0.5, 1e-13];
        let lg = c.backward(&vals);
        let expected = [0.5, 0.3 + 1e-26, 2.0 * 0.5 * 1e-13];
        for (g, e) in lg.iter().zip(expected) {
            assert!((g - e).abs() <= 1e-12 * e.abs().max(1e-300), "{g} vs {e}");
        }
        assert!((lin[2] - 2.0 * 0.5 * 0.2).abs() < 1e-15);
        let ev = c.sum_product(&vals);
        assert!(ev.log_space);
        assert!((ev.root_value(&c) - 0.15).abs() < 1e-15);
    }

    fn fig1_session(column: Vec<f64>) -> OracleRegistry {
        OracleRegistry::with_default(Arc::new(FnHandle(move |r: &OracleRequest| {
            Ok(RawAnswer::Probs(match r.oracle_id() {
                "table_lm" => vec![0.2, 0.2, 0.6],
                _ if r.domain().len() == 3 => column.clone(),
                _ => vec![0.5, 0.5],
            }))
        })))
    }

    fn nl_goal(tokens: Option<&[&str]>) -> Goal {
        let atom = Atom::new("query", vec![Term::constant("nl"), Term::constant("dog_kennels")]);
        match tokens {
            Some(t) => Goal::known(atom, t.iter().map(|s| s.to_string()).collect()),
            None => Goal::unknown(atom),
        }
    }

    #[test]
    fn worked_example_product() {
        let g = workflow();
        let reg = fig1_session(vec![0.1, 0.2, 0.7]);
        let session = OracleSession::new(&reg);
        let groups = BTreeMap::new();
        let params = Params::new(&groups, Some(&session));
        let forest = derive(&nl_goal(Some(&["SELECT", "prof_id", "FROM", "Treatments"])), &g).unwrap();
        let c = compile(&forest);
        let vals = c.leaf_values(&params).unwrap();
        let v = c.sum_product(&vals).root_value(&c);
        assert!((v - 0.42).abs() < 1e-12, "{v}");
        assert!(!c.nodes().iter().any(|n| matches!(n, Node::Or(_))));

        let empty = derive(&nl_goal(Some(&["SELECT", "treat_id", "FROM", "Dogs"])), &g).unwrap();
        let c0 = compile(&empty);
        assert!(c0.is_zero());
        assert_eq!(c0.sum_product(&[]).root_value(&c0), 0.0);
        assert!(c0.best(&empty, &[]).is_none());
    }

    #[test]
    fn max_product_picks_best_and_breaks_ties_in_rule_order() {
        let g = workflow();
        let reg = fig1_session(vec![0.1, 0.2, 0.7]);
        let session = OracleSession::new(&reg);
        let groups = BTreeMap::new();
        let params = Params::new(&groups, Some(&session));
        let forest = derive(&nl_goal(None), &g).unwrap();
        let c = compile(&forest);
        let vals = c.leaf_values(&params).unwrap();
        let best = c.best(&forest, &vals).unwrap();
        assert!((best.probability - 0.42).abs() < 1e-15);
        assert_eq!(tokens_to_strings(&best.tokens).unwrap(), ["SELECT", "prof_id", "FROM", "Treatments"]);
        let total = c.sum_product(&vals).root_value(&c);
        assert!((total - 1.0).abs() < 1e-12);

        let tie = parse_grammar_source("0.5 :: s --> [\"a\"]\n0.5 :: s --> [\"b\"]\n").unwrap();
        let f = derive(&Goal::unknown(Atom::new("s", vec![])), &tie).unwrap();
        let c = compile(&f);
        let b = c.best(&f, &c.leaf_values(&Params::new(&groups, None)).unwrap()).unwrap();
        assert_eq!(b.derivation.steps[0].rule, 0);
        assert_eq!(b.probability, 0.5);
    }

    #[test]
    fn single_derivation_has_no_or_and_equal_semirings() {
        let g = parse_grammar_source("s --> a, b\n0.4 :: a --> [\"x\"]\n0.6 :: a --> [\"y\"]\nb --> [\"z\"]\n").unwrap();
        let f = derive(&Goal::known(Atom::new("s", vec![]), vec!["x".into(), "z".into()]), &g).unwrap();
        let c = compile(&f);
        assert!(!c.nodes().iter().any(|n| matches!(n, Node::Or(_))));
        let groups = BTreeMap::new();
        let vals = c.leaf_values(&Params::new(&groups, None)).unwrap();
        let sp = c.sum_product(&vals).root_value(&c);
        let mp = c.best(&f, &vals).unwrap().probability;
        assert_eq!(sp, mp);
        assert!((sp - 0.4).abs() < 1e-15);

        let certain = parse_grammar_source("s --> [\"a\"]\n").unwrap();
        let f = derive(&Goal::unknown(Atom::new("s", vec![])), &certain).unwrap();
        let c = compile(&f);
        assert_eq!(c.sum_product(&[]).root_value(&c), 1.0);
    }

    #[test]
    fn shared_subgoal_has_in_degree_two() {
        let g = parse_grammar_source(
            "0.5 :: s --> a, x\n0.5 :: s --> b, x\na --> [\"a\"]\nb --> [\"b\"]\n0.3 :: x --> [\"x\"]\n0.7 :: x --> [\"y\"]\n",
        )
        .unwrap();
        let f = derive(&Goal::unknown(Atom::new("s", vec![])), &g).unwrap();
        let c = compile(&f);
        let deg = c.in_degrees();
        let shared = deg.iter().enumerate().filter(|(i, &d)| d == 2 && matches!(c.nodes()[*i], Node::Or(_))).count();
        assert_eq!(shared, 1);
    }

    #[test]
    fn learnable_gradients_chain_through_softmax() {
        let g = parse_grammar_source("learnable(g) :: s --> [\"a\"]\nlearnable(g) :: s --> [\"b\"]\nlearnable(g) :: s --> [\"c\"]\n")
            .unwrap();
        let mut groups = g.learnable_groups.clone();
        groups.insert("g".into(), vec![0.1, -0.4, 0.9]);
        let f = derive(&Goal::known(Atom::new("s", vec![]), vec!["b".into()]), &g).unwrap();
        let c = compile(&f);
        let params = Params::new(&groups, None);
        let vals = c.leaf_values(&params).unwrap();
        let grads = c.chain(&c.backward_log(&vals), &params);
        // d log softmax_b / d w = onehot(b) - p
        let p = softmax(&groups["g"]);
        let expect = [-p[0], 1.0 - p[1], -p[2]];
        for (a, b) in grads.learnable["g"].iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    fn lsp(a: f64, b: f64) -> f64 {
        LogSumProduct::plus(a.ln(), b.ln()).exp()
    }

    proptest! {
        #[test]
        fn sum_product_laws(a in 0.0f64..1.0, b in 0.0f64..1.0, c in 0.0f64..1.0) {
            type S = SumProduct;
            prop_assert!((S::plus(S::plus(a, b), c) - S::plus(a, S::plus(b, c))).abs() < 1e-15);
            prop_assert!((S::times(S::times(a, b), c) - S::times(a, S::times(b, c))).abs() < 1e-15);
            prop_assert_eq!(S::plus(a, S::zero()), a);
            prop_assert_eq!(S::times(a, S::one()), a);
            prop_assert_eq!(S::times(a, S::zero()), 0.0);
            prop_assert!((S::times(a, S::plus(b, c)) - S::plus(S::times(a, b), S::times(a, c))).abs() < 1e-15);
            prop_assert!((lsp(a, b) - (a + b)).abs() < 1e-14);
        }

        #[test]
        fn max_product_laws(a in 0.0f64..1.0, b in 0.0f64..1.0, c in 0.0f64..1.0) {
            type S = MaxProduct;
            prop_assert_eq!(S::plus(S::plus(a, b), c), S::plus(a, S::plus(b, c)));
            prop_assert_eq!(S::plus(a, b), S::plus(b, a));
            prop_assert_eq!(S::plus(a, S::zero()), a);
            prop_assert_eq!(S::times(a, S::one()), a);
            prop_assert!((S::times(a, S::plus(b, c)) - S::plus(S::times(a, b), S::times(a, c))).abs() < 1e-15);
            type L = LogMaxProduct;
            prop_assert_eq!(L::plus(a.ln(), L::zero()), a.ln());
            prop_assert!((L::times(a.ln(), L::plus(b.ln(), c.ln())) - L::plus(L::times(a.ln(), b.ln()), L::times(a.ln(), c.ln()))).abs() < 1e-12);
        }
    }
}
