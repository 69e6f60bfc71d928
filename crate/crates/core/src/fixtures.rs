//! Random recursion-free grammars and circuits for cross-checking the
//! engines against each other.

use std::collections::hash_map::DefaultHasher;
use std::fmt::Write as _;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use rand::rngs::StdRng;
use rand::seq::IndexedRandom;
use rand::{RngExt, SeedableRng};

use crate::circuit::{Circuit, Node};
use crate::grammar::{parse_grammar_source, Grammar};
use crate::leaf::Leaf;
use crate::oracle::{FnHandle, OracleRegistry, OracleRequest, RawAnswer};
use crate::resolver::{enumerate_derivations, Goal};
use crate::terms::{Atom, Term};

/// A generated grammar with everything needed to evaluate it.
pub struct RandomGrammar {
    pub source: String,
    pub grammar: Grammar,
    pub goal: Goal,
    /// Oracles answer with a distribution derived from a hash of the prompt.
    pub registry: OracleRegistry,
}

const CONSTS: [&str; 3] = ["a", "b", "c"];

/// Scores that depend only on the seed and the prompt text.
pub fn hashed_scores(seed: u64, req: &OracleRequest) -> Vec<f64> {
    let mut h = DefaultHasher::new();
    (seed, req.oracle_id(), req.text()).hash(&mut h);
    let mut rng = StdRng::seed_from_u64(h.finish());
    (0..req.domain().len()).map(|_| rng.random_range(-2.0..2.0)).collect()
}

pub fn hashed_registry(seed: u64) -> OracleRegistry {
    OracleRegistry::with_default(Arc::new(FnHandle(move |r: &OracleRequest| {
        Ok(RawAnswer::Scores(hashed_scores(seed, r)))
    })))
}

struct Pred {
    name: String,
    arity: usize,
}

fn call_arg(rng: &mut StdRng, head_var: bool) -> String {
    match rng.random_range(0..3) {
        0 if head_var => "X".into(),
        1 => format!("\"{}\"", CONSTS.choose(rng).unwrap()),
        _ => "Y".into(),
    }
}

fn gen_source(rng: &mut StdRng) -> String {
    let layers = rng.random_range(2..=4);
    let mut preds: Vec<Vec<Pred>> = Vec::new();
    for l in 0..layers {
        let n = if l == 0 { 1 } else { rng.random_range(1..=3) };
        preds.push(
            (0..n)
                .map(|i| Pred {
                    name: format!("n{l}_{i}"),
                    arity: if l == 0 { 0 } else { rng.random_range(0..=1) },
                })
                .collect(),
        );
    }
    let mut src = String::new();
    for c in CONSTS {
        if rng.random_bool(0.8) || c == "a" {
            writeln!(src, "dom(\"{c}\").").unwrap();
        }
        if rng.random_bool(0.6) {
            writeln!(src, "f(\"{c}\").").unwrap();
        }
    }
    writeln!(src, "f(\"a\").").unwrap();

    let mut group = 0;
    for l in 0..layers {
        for p in &preds[l] {
            let head = if p.arity == 1 { format!("{}(X)", p.name) } else { p.name.clone() };
            // 0 certain, 1 static, 2 learnable, 3 oracle
            let kind = if l == 0 { rng.random_range(0..3) } else { rng.random_range(0..4) };
            let n_rules = if kind == 3 { 1 } else { rng.random_range(1..=3) };
            let probs: Vec<f64> = {
                let raw: Vec<f64> = (0..n_rules).map(|_| rng.random_range(0.1..1.0)).collect();
                let total: f64 = raw.iter().sum();
                raw.iter().map(|r| r / total).collect()
            };
            for weight in &probs {
                let mut items: Vec<String> = Vec::new();
                let mut y_bound = false;
                let n_items = rng.random_range(1..=3);
                for _ in 0..n_items {
                    let deeper: Vec<&Pred> = preds[l + 1..].iter().flatten().collect();
                    match rng.random_range(0..4) {
                        0 | 1 if !deeper.is_empty() => {
                            let callee = deeper.choose(rng).unwrap();
                            if callee.arity == 1 {
                                let arg = call_arg(rng, p.arity == 1);
                                items.push(format!("{}({arg})", callee.name));
                            } else {
                                items.push(callee.name.clone());
                            }
                        }
                        2 => {
                            items.push("{f(Y)}".into());
                            y_bound = true;
                        }
                        _ => {
                            let t = ["t", "u"].choose(rng).unwrap();
                            if y_bound && rng.random_bool(0.5) {
                                items.push(format!("[\"{t}\", Y]"));
                            } else if rng.random_bool(0.15) {
                                items.push("[]".into());
                            } else {
                                items.push(format!("[\"{t}\"]"));
                            }
                        }
                    }
                }
                if kind == 3 && p.arity == 1 {
                    items.push("[X]".into());
                }
                let head = if p.arity == 1 && kind != 3 && rng.random_bool(0.3) {
                    format!("{}(\"{}\")", p.name, CONSTS.choose(rng).unwrap())
                } else {
                    head.clone()
                };
                let body = items.join(", ");
                match kind {
                    0 => writeln!(src, "{head} --> {body}"),
                    1 => writeln!(src, "{:?} :: {head} --> {body}", weight),
                    2 => writeln!(src, "learnable(g{group}) :: {head} --> {body}"),
                    _ => {
                        let (out, dom) = if p.arity == 1 { ("X", "dom(X)") } else { ("Z", "dom(Z)") };
                        let body = if p.arity == 1 { body } else { format!("{body}, [Z]") };
                        let head = if p.arity == 1 { head } else { p.name.clone() };
                        writeln!(src, "{head} --> {body} :: oracle(o{}, [\"q\"], {out}, {dom}, \"the answer should be Answer \")", p.name)
                    }
                }
                .unwrap();
            }
            if kind == 2 {
                group += 1;
            }
        }
    }
    src
}

/// A random grammar whose goal has between 1 and `max_derivations`
/// derivations. Learnable weights are drawn at random.
pub fn random_grammar(rng: &mut StdRng, max_derivations: usize) -> RandomGrammar {
    loop {
        let source = gen_source(rng);
        let mut grammar = match parse_grammar_source(&source) {
            Ok(g) => g,
            Err(e) => panic!("generated grammar does not parse: {e}\n{source}"),
        };
        for w in grammar.learnable_groups.values_mut() {
            w.iter_mut().for_each(|x| *x = rng.random_range(-1.5..1.5));
        }
        let goal = Goal::unknown(Atom::new("n0_0", vec![]));
        let Ok(all) = enumerate_derivations(&goal, &grammar, max_derivations) else {
            continue;
        };
        if all.truncated || all.derivations.is_empty() {
            continue;
        }
        let goal = if rng.random_bool(0.5) {
            // Pin a sequence that some derivation produces.
            let (_, toks) = all.derivations.choose(rng).unwrap();
            match toks.iter().map(|t| t.as_const().map(str::to_string)).collect::<Option<Vec<_>>>() {
                Some(t) => Goal::known(goal.atom, t),
                None => goal,
            }
        } else {
            goal
        };
        let seed = rng.random();
        return RandomGrammar { source, grammar, goal, registry: hashed_registry(seed) };
    }
}

/// A random layered AND-OR circuit over static leaves with values in
/// `[0.05, 1)`.
pub fn random_circuit(rng: &mut StdRng) -> (Circuit, Vec<f64>) {
    let n_leaves = rng.random_range(2..8);
    let leaves: Vec<Leaf> = (0..n_leaves).map(|i| Leaf::Static { rule: i, p: 0.0 }).collect();
    let values: Vec<f64> = (0..n_leaves).map(|_| rng.random_range(0.05..1.0)).collect();
    let mut nodes: Vec<Node> = (0..n_leaves).map(Node::Leaf).collect();
    let n_inner = rng.random_range(1..12);
    for _ in 0..n_inner {
        let k = rng.random_range(1..=3.min(nodes.len()));
        let children: Vec<usize> = (0..k).map(|_| rng.random_range(0..nodes.len())).collect();
        nodes.push(if rng.random_bool(0.5) { Node::And(children) } else { Node::Or(children) });
    }
    // Tie everything reachable into one root.
    let all: Vec<usize> = (n_leaves..nodes.len()).collect();
    nodes.push(Node::Or(all));
    let root = nodes.len() - 1;
    (Circuit::from_parts(nodes, leaves, root), values)
}

/// Renders a term list for diagnostics.
pub fn show_tokens(tokens: &[Term]) -> String {
    tokens.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(" ")
}
