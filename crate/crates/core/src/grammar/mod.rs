//! Facts and stochastic DCG rules.

mod dsl;

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use thiserror::Error;

use crate::terms::{Atom, Substitution, Symbol, Term, Var};

pub use dsl::parse_grammar_source;

/// Tolerance for the per-predicate sum of static probabilities.
pub const STATIC_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub enum BodyItem {
    NonTerminal(Atom),
    /// Terminal symbols; variables are filled by unification. May be empty.
    Terminals(Vec<Term>),
    /// A `{goal}` resolved against the facts only.
    Embedded(Atom),
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleSpec {
    pub oracle_id: String,
    /// The first input is the natural-language sentence; any further inputs
    /// are joined into the positional state shown to the model.
    pub inputs: Vec<Term>,
    pub output: Var,
    /// Resolved against the facts; the distinct bindings of `output`, in
    /// fact order, form the indexed domain.
    pub domain_goal: Atom,
    pub prompt: String,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ProbabilitySource {
    Certain,
    Static(f64),
    Learnable { group: String, branch: usize },
    Oracle(OracleSpec),
}

impl ProbabilitySource {
    fn kind(&self) -> &'static str {
        match self {
            ProbabilitySource::Certain => "certain",
            ProbabilitySource::Static(_) => "static",
            ProbabilitySource::Learnable { .. } => "learnable",
            ProbabilitySource::Oracle(_) => "oracle",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GrammarRule {
    pub head: Atom,
    pub body: Vec<BodyItem>,
    pub prob: ProbabilitySource,
}

impl GrammarRule {
    pub fn new(head: Atom, body: Vec<BodyItem>, prob: ProbabilitySource) -> Self {
        GrammarRule { head, body, prob }
    }

    pub fn vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        self.head.collect_vars(&mut out);
        for item in &self.body {
            match item {
                BodyItem::NonTerminal(a) | BodyItem::Embedded(a) => a.collect_vars(&mut out),
                BodyItem::Terminals(ts) => ts.iter().for_each(|t| t.collect_vars(&mut out)),
            }
        }
        out
    }

    fn max_var_id(&self) -> Option<u64> {
        let mut ids: Vec<u64> = self.vars().iter().map(|v| v.id).collect();
        if let ProbabilitySource::Oracle(spec) = &self.prob {
            ids.push(spec.output.id);
            ids.extend(spec.inputs.iter().filter_map(Term::max_var_id));
            ids.extend(spec.domain_goal.max_var_id());
        }
        ids.into_iter().max()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Fact(pub Atom);

pub type LearnableParams = BTreeMap<String, Vec<f64>>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GrammarError {
    #[error("{line}:{col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("{line}:{col}: unknown probability source `{keyword}`")]
    UnknownProbabilityKeyword { line: usize, col: usize, keyword: String },
    #[error("rule `{rule}`: probability variable `{var}` does not occur in the rule")]
    UnboundProbabilityVariable { rule: String, var: String },
    #[error("fact `{0}` is not ground")]
    NonGroundFact(String),
    #[error("static probability {p} of rule `{rule}` is outside [0, 1]")]
    ProbabilityOutOfRange { rule: String, p: f64 },
    #[error("learnable group `{group}` has {expected} branches but {found} weights")]
    GroupSizeMismatch { group: String, expected: usize, found: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    /// Static probabilities of one predicate do not sum to one.
    StaticSum { predicate: String, arity: usize, sum: f64 },
    /// A predicate mixes probability kinds, or carries several oracle rules.
    MixedSources { predicate: String, arity: usize },
    /// A learnable group covers rules of several predicates, or does not
    /// cover every rule of its predicate.
    GroupScope { group: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::StaticSum { predicate, arity, sum } => {
                write!(f, "{predicate}/{arity}: static probabilities sum to {sum}")
            }
            Violation::MixedSources { predicate, arity } => {
                write!(f, "{predicate}/{arity}: rules mix probability sources")
            }
            Violation::GroupScope { group } => {
                write!(f, "learnable group `{group}` does not partition one predicate")
            }
        }
    }
}

/// A logic program: grammar rules plus ground facts.
#[derive(Clone, Debug)]
pub struct Grammar {
    rules: Vec<GrammarRule>,
    facts: Vec<Fact>,
    /// Unnormalised weights per learnable group; probabilities are their softmax.
    pub learnable_groups: LearnableParams,
    rule_index: HashMap<(Symbol, usize), Vec<usize>>,
    fact_index: HashMap<(Symbol, usize), Vec<usize>>,
    max_var_id: u64,
}

impl Grammar {
    pub fn new(rules: Vec<GrammarRule>, facts: Vec<Fact>) -> Result<Self, GrammarError> {
        let mut groups: LearnableParams = BTreeMap::new();
        for rule in &rules {
            if let ProbabilitySource::Learnable { group, branch } = &rule.prob {
                let weights = groups.entry(group.clone()).or_default();
                if weights.len() <= *branch {
                    weights.resize(branch + 1, 0.0);
                }
            }
        }
        Self::with_params(rules, facts, groups)
    }

    /// Like [`Grammar::new`] but with explicit starting weights for the
    /// learnable groups.
    pub fn with_params(
        rules: Vec<GrammarRule>,
        facts: Vec<Fact>,
        learnable_groups: LearnableParams,
    ) -> Result<Self, GrammarError> {
        for fact in &facts {
            if !fact.0.is_ground() {
                return Err(GrammarError::NonGroundFact(fact.0.to_string()));
            }
        }
        let mut sizes: BTreeMap<&str, usize> = BTreeMap::new();
        for rule in &rules {
            check_probability_vars(rule)?;
            match &rule.prob {
                ProbabilitySource::Static(p) if !(0.0..=1.0).contains(p) => {
                    return Err(GrammarError::ProbabilityOutOfRange {
                        rule: rule.to_string(),
                        p: *p,
                    })
                }
                ProbabilitySource::Learnable { group, branch } => {
                    let n = sizes.entry(group).or_default();
                    *n = (*n).max(branch + 1);
                }
                _ => {}
            }
        }
        for (group, expected) in &sizes {
            let found = learnable_groups.get(*group).map_or(0, Vec::len);
            if found != *expected {
                return Err(GrammarError::GroupSizeMismatch {
                    group: group.to_string(),
                    expected: *expected,
                    found,
                });
            }
        }

        let mut rule_index: HashMap<(Symbol, usize), Vec<usize>> = HashMap::new();
        for (i, r) in rules.iter().enumerate() {
            rule_index.entry(r.head.key()).or_default().push(i);
        }
        let mut fact_index: HashMap<(Symbol, usize), Vec<usize>> = HashMap::new();
        for (i, f) in facts.iter().enumerate() {
            fact_index.entry(f.0.key()).or_default().push(i);
        }
        let max_var_id = rules.iter().filter_map(GrammarRule::max_var_id).max().unwrap_or(0);
        Ok(Grammar { rules, facts, learnable_groups, rule_index, fact_index, max_var_id })
    }

    pub fn rules(&self) -> &[GrammarRule] {
        &self.rules
    }

    pub fn rule(&self, index: usize) -> &GrammarRule {
        &self.rules[index]
    }

    pub fn facts(&self) -> &[Fact] {
        &self.facts
    }

    /// Rule indices for `(predicate, arity)` in source order.
    pub fn rules_for(&self, predicate: &str, arity: usize) -> &[usize] {
        self.rule_index
            .get(&(Symbol::from(predicate), arity))
            .map_or(&[], Vec::as_slice)
    }

    pub fn has_predicate(&self, predicate: &str, arity: usize) -> bool {
        self.rule_index.contains_key(&(Symbol::from(predicate), arity))
    }

    /// First id safe to hand out for renamed variables.
    pub fn first_free_var_id(&self) -> u64 {
        self.max_var_id + 1
    }

    /// Appends facts, keeping the fact index in sync.
    pub fn add_facts(&mut self, facts: impl IntoIterator<Item = Fact>) -> Result<(), GrammarError> {
        for fact in facts {
            if !fact.0.is_ground() {
                return Err(GrammarError::NonGroundFact(fact.0.to_string()));
            }
            self.fact_index.entry(fact.0.key()).or_default().push(self.facts.len());
            self.facts.push(fact);
        }
        Ok(())
    }

    /// All extensions of `s` under which `goal` matches a fact, in fact order.
    pub fn solve_facts(&self, goal: &Atom, s: &Substitution) -> Vec<Substitution> {
        self.solve_facts_indexed(goal, s).into_iter().map(|(_, s)| s).collect()
    }

    /// Like [`Grammar::solve_facts`], paired with the index of the matching fact.
    pub fn solve_facts_indexed(&self, goal: &Atom, s: &Substitution) -> Vec<(usize, Substitution)> {
        let goal = s.apply_atom(goal);
        self.fact_index
            .get(&goal.key())
            .into_iter()
            .flatten()
            .filter_map(|&i| {
                let mut out = s.clone();
                out.unify_atoms_in_place(&goal, &self.facts[i].0).then_some((i, out))
            })
            .collect()
    }

    /// Softmax probabilities of a learnable group.
    pub fn group_probabilities(&self, group: &str) -> Option<Vec<f64>> {
        self.learnable_groups.get(group).map(|w| softmax(w))
    }

    /// Checks the SDCG sum-to-one constraint. Certain-only predicates are
    /// deterministic and exempt; learnable and oracle sources are normalised
    /// by construction.
    pub fn validate_stochastic_constraint(&self) -> Vec<Violation> {
        let mut violations = Vec::new();
        let mut keys: Vec<&(Symbol, usize)> = self.rule_index.keys().collect();
        keys.sort();
        let mut group_owner: BTreeMap<&str, Vec<(Symbol, usize)>> = BTreeMap::new();
        for key in keys {
            let rules: Vec<&GrammarRule> =
                self.rule_index[key].iter().map(|&i| &self.rules[i]).collect();
            let mut kinds: Vec<&str> = rules.iter().map(|r| r.prob.kind()).collect();
            kinds.sort_unstable();
            kinds.dedup();
            let oracle_rules = rules
                .iter()
                .filter(|r| matches!(r.prob, ProbabilitySource::Oracle(_)))
                .count();
            let (predicate, arity) = (key.0.to_string(), key.1);
            if kinds.len() > 1 || oracle_rules > 1 {
                violations.push(Violation::MixedSources { predicate, arity });
                continue;
            }
            match kinds.first() {
                Some(&"static") => {
                    let sum: f64 = rules
                        .iter()
                        .map(|r| match r.prob {
                            ProbabilitySource::Static(p) => p,
                            _ => 0.0,
                        })
                        .sum();
                    if (sum - 1.0).abs() > STATIC_SUM_TOLERANCE {
                        violations.push(Violation::StaticSum { predicate, arity, sum });
                    }
                }
                Some(&"learnable") => {
                    for r in &rules {
                        if let ProbabilitySource::Learnable { group, .. } = &r.prob {
                            let owners = group_owner.entry(group).or_default();
                            if !owners.contains(key) {
                                owners.push(key.clone());
                            }
                        }
                    }
                }
                _ => {}
            }
        }
        for (group, owners) in group_owner {
            let covered = self
                .rules
                .iter()
                .filter(|r| matches!(&r.prob, ProbabilitySource::Learnable { group: g, .. } if g == group))
                .count();
            let owner_rules = owners.first().map_or(0, |k| self.rule_index[k].len());
            if owners.len() > 1 || covered != owner_rules {
                violations.push(Violation::GroupScope { group: group.to_string() });
            }
        }
        violations
    }
}

/// Numerically stable softmax (max subtraction).
pub fn softmax(weights: &[f64]) -> Vec<f64> {
    let max = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return vec![1.0 / weights.len() as f64; weights.len()];
    }
    let exps: Vec<f64> = weights.iter().map(|w| (w - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn check_probability_vars(rule: &GrammarRule) -> Result<(), GrammarError> {
    let ProbabilitySource::Oracle(spec) = &rule.prob else {
        return Ok(());
    };
    let rule_vars = rule.vars();
    let mut prob_vars = vec![spec.output.clone()];
    spec.inputs.iter().for_each(|t| t.collect_vars(&mut prob_vars));
    for v in prob_vars {
        if !rule_vars.contains(&v) {
            return Err(GrammarError::UnboundProbabilityVariable {
                rule: rule.head.to_string(),
                var: v.name.to_string(),
            });
        }
    }
    Ok(())
}

impl fmt::Display for Grammar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for fact in &self.facts {
            writeln!(f, "{}.", fact.0)?;
        }
        for rule in &self.rules {
            writeln!(f, "{rule}")?;
        }
        Ok(())
    }
}

pub(crate) use dsl::write_rule;

impl fmt::Display for GrammarRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_rule(f, self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(src: &str) -> Grammar {
        parse_grammar_source(src).unwrap()
    }

    #[test]
    fn complementary_statics_pass() {
        let g = parse("0.3 :: p(a) --> [\"x\"]\n0.7 :: p(b) --> [\"y\"]\n");
        assert!(g.validate_stochastic_constraint().is_empty());
    }

    #[test]
    fn short_statics_are_reported() {
        let g = parse("0.3 :: p(a) --> [\"x\"]\n0.3 :: p(b) --> [\"y\"]\n");
        let v = g.validate_stochastic_constraint();
        assert_eq!(v.len(), 1);
        match &v[0] {
            Violation::StaticSum { predicate, arity, sum } => {
                assert_eq!((predicate.as_str(), *arity), ("p", 1));
                assert!((sum - 0.6).abs() < 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn lone_half_rule_fails_validation() {
        let g = parse("0.5 :: s --> []");
        assert_eq!(g.rules().len(), 1);
        assert_eq!(g.validate_stochastic_constraint().len(), 1);
    }

    #[test]
    fn workflow_program_is_valid() {
        let src = r#"
database("dog_kennels", ["Dogs", "Professionals", "Treatments"]).
table_domain("dog_kennels", "Dogs").
table_domain("dog_kennels", "Professionals").
table_domain("dog_kennels", "Treatments").
column_domain("dog_kennels", "Dogs", "dog_id").
query(NL, DB) --> table(NL, DB, T), ["SELECT"], column(NL, DB, T, C), ["FROM"], token(T)
table(NL, DB, T) --> [] :: oracle(table_lm, [NL], T, table_domain(DB, T), "the answer should be Answer ")
column(NL, DB, T, C) --> [C] :: oracle(column_lm, [NL], C, column_domain(DB, T, C), "the answer should be Answer ")
token(T) --> [T]
"#;
        let g = parse(src);
        assert!(g.validate_stochastic_constraint().is_empty());
    }

    #[test]
    fn mixing_sources_is_a_violation() {
        let g = parse("0.5 :: p --> [\"a\"]\np --> [\"b\"]\n");
        assert!(matches!(
            g.validate_stochastic_constraint()[..],
            [Violation::MixedSources { .. }]
        ));
    }

    #[test]
    fn learnable_group_spanning_predicates_is_a_violation() {
        let g = parse("learnable(g) :: p --> [\"a\"]\nlearnable(g) :: q --> [\"b\"]\n");
        assert!(g
            .validate_stochastic_constraint()
            .iter()
            .any(|v| matches!(v, Violation::GroupScope { .. })));
        let ok = parse("learnable(g) :: p --> [\"a\"]\nlearnable(g) :: p --> [\"b\"]\n");
        assert!(ok.validate_stochastic_constraint().is_empty());
        assert_eq!(ok.learnable_groups["g"], vec![0.0, 0.0]);
    }

    #[test]
    fn fact_lookup_respects_order() {
        let g = parse("t(\"db\", \"A\").\nt(\"db\", \"B\").\nt(\"other\", \"C\").\n");
        let x = Term::var(1000, "X");
        let goal = Atom::new("t", vec![Term::constant("db"), x.clone()]);
        let sols = g.solve_facts(&goal, &Substitution::new());
        let vals: Vec<Term> = sols.iter().map(|s| s.apply(&x)).collect();
        assert_eq!(vals, vec![Term::constant("A"), Term::constant("B")]);
    }

    #[test]
    fn softmax_is_stable() {
        let p = softmax(&[0.0, 1000.0]);
        assert!(p[0] < 1e-300 && (p[1] - 1.0).abs() < 1e-15);
        let u = softmax(&[0.0, 0.0, 0.0]);
        assert!(u.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-15));
    }
}
