//! Text-to-SQL on stochastic definite clause grammars: schema facts, DCG
//! and CFG-ablation grammars, generation, scoring and execution checks.

pub mod dataset;
pub mod exec;
pub mod grammar;
pub mod model;
pub mod random;
pub mod schema;
pub mod tokens;

pub use grammar::{build_cfg_ablation_grammar, build_dcg_grammar, schema_facts, ColumnDomain, Scope};
pub use model::{GenerationResult, Mode, SqlError, SqlModel};
pub use schema::{dog_kennels, Schema};
