//! Depth-first expansion without tabling.
//!
//! Pending body items sit on an explicit stack that is restored on
//! backtracking. The order in which a call's alternatives are tried is the
//! only difference between the exhaustive, greedy, sampling and replay
//! strategies.

use rand::rngs::StdRng;
use rand::seq::SliceRandom;

use crate::grammar::{BodyItem, Grammar};
use crate::leaf::Params;
use crate::terms::{Atom, Substitution, Term, VarGen};

use super::{check_defined, match_terminals, rule_instances, Derivation, Goal, ResolveError, RuleInstance, Step, DEFAULT_MAX_DEPTH};

enum Pending {
    Call { atom: Atom, depth: usize },
    Tokens(Vec<Term>),
    Embedded { atom: Atom, step: usize },
}

enum Order<'a> {
    Rules,
    Probability(&'a Params<'a>),
    Shuffled(&'a mut StdRng),
    Forced(&'a Derivation),
}

struct Search<'a> {
    g: &'a Grammar,
    input: Option<&'a [String]>,
    max_depth: usize,
    gen: VarGen,
    order: Order<'a>,
    work: Vec<Pending>,
    steps: Vec<Step>,
    toks: Vec<Term>,
}

type Visit<'v> = dyn FnMut(Derivation, Vec<Term>) -> bool + 'v;

impl<'a> Search<'a> {
    fn new(goal: &'a Goal, g: &'a Grammar, order: Order<'a>) -> Self {
        let mut first = g.first_free_var_id();
        if let Some(m) = goal.atom.max_var_id() {
            first = first.max(m + 1);
        }
        Search {
            g,
            input: goal.known_tokens(),
            max_depth: DEFAULT_MAX_DEPTH,
            gen: VarGen::starting_at(first),
            order,
            work: vec![Pending::Call { atom: goal.atom.clone(), depth: 0 }],
            steps: Vec::new(),
            toks: Vec::new(),
        }
    }

    fn run(&mut self, s: Substitution, pos: usize, visit: &mut Visit) -> Result<bool, ResolveError> {
        let Some(item) = self.work.pop() else {
            if self.input.is_some_and(|input| input.len() != pos) {
                return Ok(true);
            }
            let steps = self
                .steps
                .iter()
                .map(|st| Step { head: s.apply_atom(&st.head), ..st.clone() })
                .collect();
            let toks = self.toks.iter().map(|t| s.apply(t)).collect();
            return Ok(visit(Derivation { steps }, toks));
        };
        let result = self.step(&item, s, pos, visit);
        self.work.push(item);
        result
    }

    fn step(&mut self, item: &Pending, s: Substitution, pos: usize, visit: &mut Visit) -> Result<bool, ResolveError> {
        match item {
            Pending::Tokens(ts) => {
                let mut s2 = s;
                let Some(next) = match_terminals(ts, self.input, pos, &mut s2) else {
                    return Ok(true);
                };
                let n = self.toks.len();
                self.toks.extend(ts.iter().cloned());
                let cont = self.run(s2, next, visit);
                self.toks.truncate(n);
                cont
            }
            Pending::Embedded { atom, step } => {
                let mut sols = self.g.solve_facts_indexed(atom, &s);
                if let Order::Forced(d) = &self.order {
                    let k = self.steps[*step].facts.len();
                    let want = d.steps.get(*step).and_then(|st| st.facts.get(k)).copied();
                    sols.retain(|(f, _)| Some(*f) == want);
                }
                for (fact, s2) in sols {
                    self.steps[*step].facts.push(fact);
                    let cont = self.run(s2, pos, visit);
                    self.steps[*step].facts.pop();
                    if !cont? {
                        return Ok(false);
                    }
                }
                Ok(true)
            }
            Pending::Call { atom, depth } => {
                let call = s.apply_atom(atom);
                if *depth > self.max_depth {
                    return Err(ResolveError::DepthLimit {
                        predicate: call.predicate.to_string(),
                        limit: self.max_depth,
                    });
                }
                check_defined(self.g, &call)?;
                let mut insts: Vec<RuleInstance> = Vec::new();
                for &rule in self.g.rules_for(&call.predicate, call.arity()) {
                    insts.extend(rule_instances(self.g, rule, &call, &s, &self.gen)?);
                }
                self.order_instances(&mut insts)?;
                for inst in insts {
                    let step = self.steps.len();
                    self.steps.push(Step {
                        rule: inst.rule,
                        head: inst.head.clone(),
                        choice: inst.choice,
                        facts: Vec::new(),
                        leaf: inst.leaf.clone(),
                    });
                    let mark = self.work.len();
                    for b in inst.body.iter().rev() {
                        self.work.push(match b {
                            BodyItem::NonTerminal(a) => Pending::Call { atom: a.clone(), depth: depth + 1 },
                            BodyItem::Terminals(ts) => Pending::Tokens(ts.clone()),
                            BodyItem::Embedded(a) => Pending::Embedded { atom: a.clone(), step },
                        });
                    }
                    let cont = self.run(inst.s, pos, visit);
                    self.work.truncate(mark);
                    self.steps.pop();
                    if !cont? {
                        return Ok(false);
                    }
                }
                Ok(true)
            }
        }
    }

    fn order_instances(&mut self, insts: &mut Vec<RuleInstance>) -> Result<(), ResolveError> {
        match &mut self.order {
            Order::Rules => {}
            Order::Probability(params) => {
                let mut keyed = Vec::with_capacity(insts.len());
                for inst in insts.drain(..) {
                    keyed.push((params.value(&inst.leaf)?, inst));
                }
                // Stable: equal probabilities keep rule order.
                keyed.sort_by(|a, b| b.0.total_cmp(&a.0));
                insts.extend(keyed.into_iter().map(|(_, i)| i));
            }
            Order::Shuffled(rng) => insts.shuffle(*rng),
            Order::Forced(d) => {
                let want = d.steps.get(self.steps.len());
                insts.retain(|i| want.is_some_and(|w| w.rule == i.rule && w.choice == i.choice));
            }
        }
        Ok(())
    }
}

/// Derivations found by naive depth-first expansion.
#[derive(Debug, Default)]
pub struct Enumeration {
    pub derivations: Vec<(Derivation, Vec<Term>)>,
    /// More than `max` derivations exist.
    pub truncated: bool,
}

/// Exhaustive expansion in rule order, independent of the tabled engine.
pub fn enumerate_derivations(goal: &Goal, g: &Grammar, max: usize) -> Result<Enumeration, ResolveError> {
    let mut out = Enumeration::default();
    let mut search = Search::new(goal, g, Order::Rules);
    search.run(Substitution::new(), 0, &mut |d, t| {
        if out.derivations.len() == max {
            out.truncated = true;
            return false;
        }
        out.derivations.push((d, t));
        true
    })?;
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct SearchResult {
    pub derivation: Derivation,
    pub tokens: Vec<Term>,
    pub probability: f64,
}

fn first(goal: &Goal, g: &Grammar, order: Order) -> Result<Option<(Derivation, Vec<Term>)>, ResolveError> {
    let mut found = None;
    let mut search = Search::new(goal, g, order);
    search.run(Substitution::new(), 0, &mut |d, t| {
        found = Some((d, t));
        false
    })?;
    Ok(found)
}

/// Left-to-right expansion that tries the most probable alternative first
/// at every choice and backtracks only when unification fails.
pub fn greedy(goal: &Goal, g: &Grammar, params: &Params) -> Result<Option<SearchResult>, ResolveError> {
    let Some((derivation, tokens)) = first(goal, g, Order::Probability(params))? else {
        return Ok(None);
    };
    let probability = derivation.probability(params)?;
    Ok(Some(SearchResult { derivation, tokens, probability }))
}

/// One derivation chosen by trying alternatives in random order.
pub fn sample(goal: &Goal, g: &Grammar, rng: &mut StdRng) -> Result<Option<(Derivation, Vec<Term>)>, ResolveError> {
    first(goal, g, Order::Shuffled(rng))
}

/// Re-executes a derivation's rule choices; `None` if they no longer apply.
pub fn replay(goal: &Goal, g: &Grammar, d: &Derivation) -> Result<Option<Vec<Term>>, ResolveError> {
    Ok(first(goal, g, Order::Forced(d))?
        .filter(|(found, _)| found.steps.len() == d.steps.len())
        .map(|(_, t)| t))
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;
    use std::sync::Arc;

    use rand::SeedableRng;

    use super::*;
    use crate::grammar::parse_grammar_source;
    use crate::oracle::{FnHandle, OracleRegistry, OracleRequest, OracleSession, RawAnswer};
    use crate::resolver::fixtures::workflow;
    use crate::resolver::{derive, tokens_to_strings};

    fn unknown_query() -> Goal {
        Goal::unknown(Atom::new("query", vec![Term::constant("nl"), Term::constant("dog_kennels")]))
    }

    fn strings(t: &[Term]) -> Vec<String> {
        tokens_to_strings(t).unwrap()
    }

    #[test]
    fn example_grammar_has_seven_distinct_sequences() {
        let e = enumerate_derivations(&unknown_query(), &workflow(), 1000).unwrap();
        assert!(!e.truncated);
        assert_eq!(e.derivations.len(), 7);
        let mut seqs: Vec<_> = e.derivations.iter().map(|(_, t)| strings(t)).collect();
        seqs.sort();
        seqs.dedup();
        assert_eq!(seqs.len(), 7);
    }

    #[test]
    fn known_sequence_filters_the_enumeration() {
        let g = workflow();
        let all = enumerate_derivations(&unknown_query(), &g, 1000).unwrap();
        let target = ["SELECT", "dog_id", "FROM", "Treatments"].map(String::from).to_vec();
        let goal = Goal::known(unknown_query().atom, target.clone());
        let known = enumerate_derivations(&goal, &g, 1000).unwrap();
        let expected: Vec<String> = all
            .derivations
            .iter()
            .filter(|(_, t)| strings(t) == target)
            .map(|(d, _)| d.signature())
            .collect();
        let got: Vec<String> = known.derivations.iter().map(|(d, _)| d.signature()).collect();
        assert_eq!(got, expected);
        assert_eq!(got.len(), 1);
    }

    #[test]
    fn two_rules_same_sequence() {
        let g = parse_grammar_source("0.5 :: s --> [\"a\"]\n0.5 :: s --> [\"a\"]\n").unwrap();
        let e = enumerate_derivations(&Goal::unknown(Atom::new("s", vec![])), &g, 10).unwrap();
        assert_eq!(e.derivations.len(), 2);
        assert_eq!(strings(&e.derivations[0].1), strings(&e.derivations[1].1));
    }

    #[test]
    fn truncation_flag() {
        let e = enumerate_derivations(&unknown_query(), &workflow(), 3).unwrap();
        assert_eq!(e.derivations.len(), 3);
        assert!(e.truncated);
    }

    #[test]
    fn forest_and_search_agree() {
        let g = workflow();
        let goal = unknown_query();
        let mut a: Vec<String> = enumerate_derivations(&goal, &g, 1000)
            .unwrap()
            .derivations
            .iter()
            .map(|(d, _)| d.signature())
            .collect();
        let mut b: Vec<String> = derive(&goal, &g).unwrap().derivations(1000).0.iter().map(|(d, _)| d.signature()).collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }

    #[test]
    fn replay_and_sampling() {
        let g = workflow();
        let goal = unknown_query();
        let all = enumerate_derivations(&goal, &g, 1000).unwrap();
        for (d, t) in &all.derivations {
            assert_eq!(replay(&goal, &g, d).unwrap().as_deref(), Some(&t[..]));
        }
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..20 {
            let (d, t) = sample(&goal, &g, &mut rng).unwrap().unwrap();
            assert!(all.derivations.iter().any(|(d2, t2)| d2.signature() == d.signature() && t2 == &t));
        }
    }

    #[test]
    fn greedy_takes_most_probable_branches() {
        let g = workflow();
        let handle = FnHandle(|r: &OracleRequest| {
            let n = r.domain().len();
            let probs = match r.oracle_id() {
                "table_lm" => vec![0.2, 0.2, 0.6],
                _ => (0..n).map(|i| if i + 1 == n { 0.5 } else { 0.5 / (n - 1) as f64 }).collect(),
            };
            Ok(RawAnswer::Probs(probs))
        });
        let registry = OracleRegistry::with_default(Arc::new(handle));
        let session = OracleSession::new(&registry);
        let groups = BTreeMap::new();
        let params = Params::new(&groups, Some(&session));
        let r = greedy(&unknown_query(), &g, &params).unwrap().unwrap();
        assert_eq!(strings(&r.tokens), ["SELECT", "prof_id", "FROM", "Treatments"]);
        assert!((r.probability - 0.3).abs() < 1e-12);
    }
}
