//! Resolution of grammar goals against token sequences.
//!
//! [`derive`] builds a tabled derivation forest; the depth-first engine in
//! [`search`] expands goals naively and serves as the reference
//! implementation, and as the greedy, sampling and replay strategies.

mod forest;
mod search;

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::grammar::{BodyItem, Grammar, ProbabilitySource};
use crate::leaf::{Leaf, ParamError, Params};
use crate::oracle::{OracleError, OracleRequest};
use crate::terms::{Atom, Renaming, Substitution, Term, Var, VarGen};

pub use forest::{derive, derive_with, Alt, AltItem, Answer, DeriveOptions, DerivationForest, Table};
pub use search::{
    enumerate_derivations, greedy, replay, sample, Enumeration, SearchResult,
};

/// Rule applications allowed on one path before resolution gives up.
pub const DEFAULT_MAX_DEPTH: usize = 512;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Tokens {
    Known(Vec<String>),
    Unknown,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Goal {
    pub atom: Atom,
    pub tokens: Tokens,
}

impl Goal {
    pub fn known(atom: Atom, tokens: Vec<String>) -> Self {
        Goal { atom, tokens: Tokens::Known(tokens) }
    }

    pub fn unknown(atom: Atom) -> Self {
        Goal { atom, tokens: Tokens::Unknown }
    }

    fn known_tokens(&self) -> Option<&[String]> {
        match &self.tokens {
            Tokens::Known(t) => Some(t),
            Tokens::Unknown => None,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ResolveError {
    #[error("depth limit {limit} exceeded while expanding `{predicate}`")]
    DepthLimit { predicate: String, limit: usize },
    #[error("`{predicate}` calls a variant of itself; tabled resolution needs a recursion-free grammar")]
    Recursion { predicate: String },
    #[error("no rule defines `{predicate}/{arity}`")]
    UnknownPredicate { predicate: String, arity: usize },
    #[error("oracle `{oracle_id}` in rule for `{head}`: input `{input}` is not a ground constant")]
    NonGroundOracleInput { oracle_id: String, head: String, input: String },
    #[error("oracle `{oracle_id}`: domain value `{value}` is not a constant")]
    NonConstantDomainValue { oracle_id: String, value: String },
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Param(#[from] ParamError),
}

/// One rule application in a derivation.
#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub rule: usize,
    /// The rule head under the derivation's final substitution.
    pub head: Atom,
    /// Oracle answer index (0-based) chosen by this application.
    pub choice: Option<usize>,
    /// Facts matched by the rule's embedded goals, in body order.
    pub facts: Vec<usize>,
    pub leaf: Leaf,
}

/// Rule applications in pre-order (parent before children, left to right).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Derivation {
    pub steps: Vec<Step>,
}

impl Derivation {
    /// Product of the leaf values, one factor per rule application.
    pub fn probability(&self, params: &Params) -> Result<f64, ParamError> {
        self.steps.iter().try_fold(1.0, |acc, s| Ok(acc * params.value(&s.leaf)?))
    }

    /// A variable-naming-independent rendering, for comparing derivations
    /// produced by different engines.
    pub fn signature(&self) -> String {
        let mut vars: Vec<Var> = Vec::new();
        for s in &self.steps {
            s.head.collect_vars(&mut vars);
        }
        let mut seen = HashMap::new();
        let mut sub = Substitution::new();
        for v in vars {
            let n = seen.len();
            seen.entry(v.id).or_insert_with(|| {
                sub.unify_in_place(&Term::Var(v.clone()), &Term::var(u64::MAX - n as u64, &format!("_{n}")));
            });
        }
        let parts: Vec<String> = self
            .steps
            .iter()
            .map(|s| {
                let choice = s.choice.map_or(String::new(), |c| format!("#{c}"));
                format!("{}{}{:?} {}", s.rule, choice, s.facts, sub.apply_atom(&s.head))
            })
            .collect();
        parts.join("; ")
    }
}

impl fmt::Display for Derivation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, s) in self.steps.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "r{}:{}", s.rule, s.head)?;
        }
        Ok(())
    }
}

/// Token terms as text; `None` if any token is not a ground constant.
pub fn tokens_to_strings(tokens: &[Term]) -> Option<Vec<String>> {
    tokens.iter().map(|t| t.as_const().map(str::to_string)).collect()
}

/// A rule renamed apart, its head unified with a call, and (for oracle
/// rules) its output variable bound to one domain value.
pub(crate) struct RuleInstance {
    pub rule: usize,
    pub head: Atom,
    pub body: Vec<BodyItem>,
    pub s: Substitution,
    pub leaf: Leaf,
    pub choice: Option<usize>,
}

fn rename_body(body: &[BodyItem], ren: &mut Renaming, gen: &VarGen) -> Vec<BodyItem> {
    body.iter()
        .map(|item| match item {
            BodyItem::NonTerminal(a) => BodyItem::NonTerminal(ren.atom(a, gen)),
            BodyItem::Embedded(a) => BodyItem::Embedded(ren.atom(a, gen)),
            BodyItem::Terminals(ts) => BodyItem::Terminals(ts.iter().map(|t| ren.term(t, gen)).collect()),
        })
        .collect()
}

/// Every way rule `rule` applies to `call` under `s`.
pub(crate) fn rule_instances(
    g: &Grammar,
    rule: usize,
    call: &Atom,
    s: &Substitution,
    gen: &VarGen,
) -> Result<Vec<RuleInstance>, ResolveError> {
    let r = g.rule(rule);
    let mut ren = Renaming::default();
    let head = ren.atom(&r.head, gen);
    let mut s1 = s.clone();
    if !s1.unify_atoms_in_place(call, &head) {
        return Ok(Vec::new());
    }
    let body = rename_body(&r.body, &mut ren, gen);
    let single = |leaf| {
        vec![RuleInstance { rule, head: head.clone(), body: body.clone(), s: s1.clone(), leaf, choice: None }]
    };
    Ok(match &r.prob {
        ProbabilitySource::Certain => single(Leaf::One),
        ProbabilitySource::Static(p) => single(Leaf::Static { rule, p: *p }),
        ProbabilitySource::Learnable { group, branch } => single(Leaf::Learnable {
            group: group.clone(),
            branch: *branch,
            size: g.learnable_groups.get(group).map_or(0, Vec::len),
        }),
        ProbabilitySource::Oracle(spec) => {
            let mut texts = Vec::with_capacity(spec.inputs.len());
            for input in &spec.inputs {
                let t = s1.apply(&ren.term(input, gen));
                let text = t.as_const().ok_or_else(|| ResolveError::NonGroundOracleInput {
                    oracle_id: spec.oracle_id.clone(),
                    head: s1.apply_atom(&head).to_string(),
                    input: t.to_string(),
                })?;
                texts.push(text.to_string());
            }
            let output = Term::Var(ren.var(&spec.output, gen));
            let goal = ren.atom(&spec.domain_goal, gen);
            let mut domain: Vec<String> = Vec::new();
            for sol in g.solve_facts(&goal, &s1) {
                let v = sol.apply(&output);
                let value = v.as_const().ok_or_else(|| ResolveError::NonConstantDomainValue {
                    oracle_id: spec.oracle_id.clone(),
                    value: v.to_string(),
                })?;
                if !domain.iter().any(|d| d == value) {
                    domain.push(value.to_string());
                }
            }
            let state = texts[1..].join(", ");
            let request = Arc::new(OracleRequest::new(
                &spec.oracle_id,
                &texts[0],
                Some(&state),
                domain,
                &spec.prompt,
            )?);
            let mut out = Vec::new();
            for (i, value) in request.domain().iter().enumerate() {
                let mut s2 = s1.clone();
                if s2.unify_in_place(&output, &Term::constant(value)) {
                    out.push(RuleInstance {
                        rule,
                        head: head.clone(),
                        body: body.clone(),
                        s: s2,
                        leaf: Leaf::Oracle { request: request.clone(), index: i },
                        choice: Some(i),
                    });
                }
            }
            out
        }
    })
}

pub(crate) fn check_defined(g: &Grammar, call: &Atom) -> Result<(), ResolveError> {
    if g.rules_for(&call.predicate, call.arity()).is_empty() {
        return Err(ResolveError::UnknownPredicate {
            predicate: call.predicate.to_string(),
            arity: call.arity(),
        });
    }
    Ok(())
}

/// Matches terminal terms against the known input at `pos`.
pub(crate) fn match_terminals(
    ts: &[Term],
    input: Option<&[String]>,
    pos: usize,
    s: &mut Substitution,
) -> Option<usize> {
    let Some(input) = input else {
        return Some(pos);
    };
    if pos + ts.len() > input.len() {
        return None;
    }
    for (t, tok) in ts.iter().zip(&input[pos..]) {
        if !s.unify_in_place(t, &Term::constant(tok)) {
            return None;
        }
    }
    Some(pos + ts.len())
}
