//! Generation and scoring of SQL queries under a schema grammar.

use std::str::FromStr;

use dcg_core::circuit::compile;
use dcg_core::grammar::{Grammar, GrammarError};
use dcg_core::leaf::{ParamError, Params};
use dcg_core::oracle::{OracleRegistry, OracleSession};
use dcg_core::resolver::{self, derive, tokens_to_strings, Derivation, Goal, ResolveError};
use dcg_core::trainer::TrainingExample;
use rand::rngs::StdRng;
use thiserror::Error;

use crate::grammar::{build_cfg_ablation_grammar, build_dcg_grammar, query_atom, ColumnDomain, Scope};
use crate::schema::{Direction, NameMap, Schema, SchemaError};
use crate::tokens::{detokenize, extract_values, fill_values, map_semantic_names, tokenize, TokenError};

/// Default cap on the number of derivations for exact generation.
pub const EXACT_BUDGET: u128 = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Exact,
    Greedy,
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exact" => Ok(Mode::Exact),
            "greedy" => Ok(Mode::Greedy),
            _ => Err(format!("unknown mode {s:?}; expected exact or greedy")),
        }
    }
}

#[derive(Debug, Error)]
pub enum SqlError {
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error(transparent)]
    Resolve(#[from] ResolveError),
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error(transparent)]
    Token(#[from] TokenError),
    #[error("the grammar derives no query")]
    NoDerivation,
    #[error("{count} derivations exceed the exact-inference budget of {budget}; use greedy mode")]
    OverBudget { count: u128, budget: u128 },
    #[error("derived tokens are not ground: {0}")]
    NonGround(String),
}

#[derive(Clone, Debug)]
pub struct GenerationResult {
    /// Query text with original identifiers and filled values.
    pub sql: String,
    /// Grammar tokens in semantic names, value slots unfilled.
    pub tokens: Vec<String>,
    pub probability: f64,
    pub derivation: Derivation,
    pub mode: Mode,
}

/// A schema with its grammar.
#[derive(Clone, Debug)]
pub struct SqlModel {
    pub schema: Schema,
    pub names: NameMap,
    pub grammar: Grammar,
    pub scope: Scope,
    pub columns: ColumnDomain,
    pub exact_budget: u128,
}

impl SqlModel {
    pub fn new(schema: Schema, scope: Scope, columns: ColumnDomain) -> Result<Self, SqlError> {
        schema.validate()?;
        let names = schema.names()?;
        let grammar = match columns {
            ColumnDomain::Table => build_dcg_grammar(&schema, scope)?,
            ColumnDomain::Database => build_cfg_ablation_grammar(&schema, scope)?,
        };
        Ok(SqlModel { schema, names, grammar, scope, columns, exact_budget: EXACT_BUDGET })
    }

    pub fn dcg(schema: Schema, scope: Scope) -> Result<Self, SqlError> {
        Self::new(schema, scope, ColumnDomain::Table)
    }

    pub fn cfg_ablation(schema: Schema, scope: Scope) -> Result<Self, SqlError> {
        Self::new(schema, scope, ColumnDomain::Database)
    }

    pub fn open_goal(&self, nl: &str) -> Goal {
        Goal::unknown(query_atom(nl, &self.schema))
    }

    /// Semantic-name tokens with value slots, plus the values taken out.
    pub fn grammar_tokens(&self, sql: &str) -> Result<(Vec<String>, Vec<String>), SqlError> {
        let (slotted, values) = extract_values(&tokenize(sql)?);
        Ok((map_semantic_names(&slotted, &self.names, Direction::ToSemantic)?, values))
    }

    pub fn known_goal(&self, nl: &str, sql: &str) -> Result<Goal, SqlError> {
        let (tokens, _) = self.grammar_tokens(sql)?;
        Ok(Goal::known(query_atom(nl, &self.schema), tokens))
    }

    pub fn example(&self, nl: &str, sql: &str) -> Result<TrainingExample, SqlError> {
        Ok(TrainingExample::new(self.known_goal(nl, sql)?))
    }

    /// Renders grammar tokens as SQL text.
    pub fn render(&self, tokens: &[String], values: &[String]) -> Result<String, SqlError> {
        let original = map_semantic_names(tokens, &self.names, Direction::ToOriginal)?;
        Ok(detokenize(&fill_values(&original, values)))
    }

    fn ground(tokens: &[dcg_core::terms::Term]) -> Result<Vec<String>, SqlError> {
        tokens_to_strings(tokens).ok_or_else(|| {
            SqlError::NonGround(tokens.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(" "))
        })
    }

    /// The most probable query (exact) or the argmax-per-choice walk
    /// (greedy) for `nl`.
    pub fn generate(
        &self,
        nl: &str,
        registry: &OracleRegistry,
        mode: Mode,
        values: &[String],
    ) -> Result<GenerationResult, SqlError> {
        let goal = self.open_goal(nl);
        let session = OracleSession::new(registry);
        let params = Params::new(&self.grammar.learnable_groups, Some(&session));
        let (derivation, terms, probability) = match mode {
            Mode::Exact => {
                let forest = derive(&goal, &self.grammar)?;
                let count = forest.count_derivations();
                if count > self.exact_budget {
                    return Err(SqlError::OverBudget { count, budget: self.exact_budget });
                }
                let c = compile(&forest);
                let vals = c.leaf_values(&params)?;
                let best = c.best(&forest, &vals).ok_or(SqlError::NoDerivation)?;
                (best.derivation, best.tokens, best.probability)
            }
            Mode::Greedy => {
                let found = resolver::greedy(&goal, &self.grammar, &params)?.ok_or(SqlError::NoDerivation)?;
                (found.derivation, found.tokens, found.probability)
            }
        };
        let tokens = Self::ground(&terms)?;
        let sql = self.render(&tokens, values)?;
        Ok(GenerationResult { sql, tokens, probability, derivation, mode })
    }

    /// Probability of producing `sql` for `nl`; zero when the grammar
    /// cannot derive it.
    pub fn score(&self, nl: &str, registry: &OracleRegistry, sql: &str) -> Result<f64, SqlError> {
        let goal = self.known_goal(nl, sql)?;
        let forest = derive(&goal, &self.grammar)?;
        if forest.is_empty() {
            return Ok(0.0);
        }
        let session = OracleSession::new(registry);
        let params = Params::new(&self.grammar.learnable_groups, Some(&session));
        let c = compile(&forest);
        Ok(c.sum_product(&c.leaf_values(&params)?).root_value(&c))
    }

    /// Up to `limit` derivable token sequences, and whether more exist.
    pub fn enumerate(&self, limit: usize) -> Result<(Vec<Vec<String>>, bool), SqlError> {
        let forest = derive(&self.open_goal(""), &self.grammar)?;
        let (all, truncated) = forest.derivations(limit);
        let seqs = all.iter().map(|(_, t)| Self::ground(t)).collect::<Result<_, _>>()?;
        Ok((seqs, truncated))
    }

    /// Streams every derivable token sequence to `visit` until it returns
    /// false. Returns the number visited.
    pub fn for_each_query(&self, visit: &mut dyn FnMut(Vec<String>) -> bool) -> Result<usize, SqlError> {
        let forest = derive(&self.open_goal(""), &self.grammar)?;
        let mut n = 0;
        let mut err = None;
        forest.walk(None, &|_, _| None, &mut |_, t| match Self::ground(&t) {
            Ok(seq) => {
                n += 1;
                visit(seq)
            }
            Err(e) => {
                err = Some(e);
                false
            }
        });
        err.map_or(Ok(n), Err)
    }

    pub fn count(&self) -> Result<u128, SqlError> {
        Ok(derive(&self.open_goal(""), &self.grammar)?.count_derivations())
    }

    /// A derivable token sequence picked by random choices.
    pub fn sample(&self, rng: &mut StdRng) -> Result<Vec<String>, SqlError> {
        let (_, t) = resolver::sample(&self.open_goal(""), &self.grammar, rng)?.ok_or(SqlError::NoDerivation)?;
        Self::ground(&t)
    }
}
