//! Line-delimited training records and synthetic datasets.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use dcg_core::grammar::{Grammar, ProbabilitySource};
use dcg_core::oracle::OracleRegistry;
use serde::{Deserialize, Serialize};

use crate::model::{Mode, SqlError, SqlModel};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub nl: String,
    pub db: String,
    pub sql: String,
    #[serde(default)]
    pub values: Vec<String>,
}

pub fn read_records(r: impl BufRead) -> anyhow::Result<Vec<Record>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| anyhow::anyhow!("line {}: {e}", i + 1))?);
    }
    Ok(out)
}

pub fn write_records(mut w: impl Write, records: &[Record]) -> std::io::Result<()> {
    for r in records {
        writeln!(w, "{}", serde_json::to_string(r)?)?;
    }
    Ok(())
}

/// Oracle ids used by a grammar, sorted.
pub fn oracle_ids(g: &Grammar) -> BTreeSet<String> {
    g.rules()
        .iter()
        .filter_map(|r| match &r.prob {
            ProbabilitySource::Oracle(spec) => Some(spec.oracle_id.clone()),
            _ => None,
        })
        .collect()
}

/// Every oracle of the grammar replaced by per-prompt learnable weights.
pub fn learned_registry(g: &Grammar) -> OracleRegistry {
    let mut reg = OracleRegistry::new();
    for id in oracle_ids(g) {
        reg.bind_learned(&id);
    }
    reg
}

/// `intents` questions, each repeated `repeats` times, labelled with the
/// teacher's exact-mode query.
pub fn synthetic(
    model: &SqlModel,
    teacher: &OracleRegistry,
    intents: usize,
    repeats: usize,
) -> Result<Vec<Record>, SqlError> {
    let mut out = Vec::new();
    for i in 0..intents {
        let nl = format!("question {i} about {}", model.schema.db);
        let sql = model.generate(&nl, teacher, Mode::Exact, &[])?.sql;
        for _ in 0..repeats {
            out.push(Record { nl: nl.clone(), db: model.schema.db.clone(), sql: sql.clone(), values: Vec::new() });
        }
    }
    Ok(out)
}
