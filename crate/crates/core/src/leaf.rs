//! Probability handles attached to rule applications, and their values
//! under a parameter snapshot.

use std::sync::Arc;

use thiserror::Error;

use crate::grammar::{softmax, LearnableParams};
use crate::oracle::{learned_group, OracleError, OracleKey, OracleRequest, OracleSession};

#[derive(Clone, Debug, PartialEq)]
pub enum Leaf {
    /// A certain rule.
    One,
    Static { rule: usize, p: f64 },
    Learnable { group: String, branch: usize, size: usize },
    /// Entry `index` (0-based) of the oracle's distribution for `request`.
    Oracle { request: Arc<OracleRequest>, index: usize },
}

/// Identity of a leaf for sharing and gradient accumulation.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LeafKey {
    One,
    Static { rule: usize, bits: u64 },
    Learnable { group: String, branch: usize },
    Oracle { key: OracleKey, index: usize },
}

impl Leaf {
    pub fn key(&self) -> LeafKey {
        match self {
            Leaf::One => LeafKey::One,
            Leaf::Static { rule, p } => LeafKey::Static { rule: *rule, bits: p.to_bits() },
            Leaf::Learnable { group, branch, .. } => {
                LeafKey::Learnable { group: group.clone(), branch: *branch }
            }
            Leaf::Oracle { request, index } => LeafKey::Oracle { key: request.key(), index: *index },
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamError {
    #[error("learnable group `{group}` has no entry {branch}")]
    MissingGroup { group: String, branch: usize },
    #[error("oracle leaf `{0}` cannot be resolved without an oracle session")]
    NoSession(String),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

/// A frozen view of everything a leaf's value depends on.
#[derive(Clone, Copy)]
pub struct Params<'a> {
    pub groups: &'a LearnableParams,
    pub oracles: Option<&'a OracleSession<'a>>,
}

impl<'a> Params<'a> {
    pub fn new(groups: &'a LearnableParams, oracles: Option<&'a OracleSession<'a>>) -> Self {
        Params { groups, oracles }
    }

    fn group_prob(&self, group: &str, branch: usize, size: usize) -> Result<f64, ParamError> {
        match self.groups.get(group) {
            Some(w) if branch < w.len() => Ok(softmax(w)[branch]),
            // A learned oracle group nobody has trained yet is uniform.
            None if branch < size => Ok(1.0 / size as f64),
            _ => Err(ParamError::MissingGroup { group: group.to_string(), branch }),
        }
    }

    pub fn value(&self, leaf: &Leaf) -> Result<f64, ParamError> {
        match leaf {
            Leaf::One => Ok(1.0),
            Leaf::Static { p, .. } => Ok(*p),
            Leaf::Learnable { group, branch, .. } => self.group_prob(group, *branch, 0),
            Leaf::Oracle { request, index } => {
                let session = self
                    .oracles
                    .ok_or_else(|| ParamError::NoSession(request.oracle_id().to_string()))?;
                if session.registry().is_learned(request.oracle_id()) {
                    let group = learned_group(&request.key());
                    return self.group_prob(&group, *index, request.domain().len());
                }
                Ok(session.query(request)?.probs()[*index])
            }
        }
    }

    /// The learnable group a leaf reads, if any, as `(group, branch, size)`.
    pub fn learnable_source(&self, leaf: &Leaf) -> Option<(String, usize, usize)> {
        match leaf {
            Leaf::Learnable { group, branch, size } => Some((group.clone(), *branch, *size)),
            Leaf::Oracle { request, index } => {
                let learned = self.oracles?.registry().is_learned(request.oracle_id());
                learned.then(|| (learned_group(&request.key()), *index, request.domain().len()))
            }
            _ => None,
        }
    }
}
