//! Random schemas for property tests.

use std::sync::Arc;

use dcg_core::fixtures::hashed_scores;
use dcg_core::oracle::{FnHandle, OracleRegistry, OracleRequest, RawAnswer};
use rand::rngs::StdRng;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::RngExt;

use crate::schema::{Column, ForeignKey, Schema, Table};

const TABLE_WORDS: [&str; 16] = [
    "singer", "concert", "stadium", "pet", "student", "course", "teacher", "album", "track", "artist", "airport",
    "flight", "museum", "visitor", "ship", "captain",
];

const COLUMN_WORDS: [&str; 20] = [
    "id", "name", "age", "city", "country", "price", "year", "rating", "title", "capacity", "salary", "budget", "code",
    "weight", "height", "color", "status", "score", "email", "phone",
];

/// A schema with 2-6 tables of 2-10 columns and 0-4 foreign keys.
/// Identifiers use `_` where the semantic names use spaces.
pub fn random_schema(rng: &mut StdRng, index: usize) -> Schema {
    let n_tables = rng.random_range(2..=6);
    let mut words = TABLE_WORDS.to_vec();
    words.shuffle(rng);
    let mut tables = Vec::new();
    for w in &words[..n_tables] {
        let n_cols = rng.random_range(2..=10);
        let mut cols: Vec<String> = Vec::new();
        while cols.len() < n_cols {
            let base = COLUMN_WORDS.choose(rng).unwrap();
            // Half the columns are table-specific, which keeps some tables
            // disjoint.
            let name = if rng.random_bool(0.5) { format!("{w}_{base}") } else { base.to_string() };
            if !cols.contains(&name) {
                cols.push(name);
            }
        }
        tables.push(Table {
            name: format!("{w}_t"),
            semantic_name: Some(format!("{w} t")),
            columns: cols
                .iter()
                .map(|c| Column {
                    name: c.clone(),
                    semantic_name: Some(c.replace('_', " ")),
                    sql_type: Some(if rng.random_bool(0.5) { "number" } else { "text" }.into()),
                })
                .collect(),
        });
    }
    // Shared column names must share a type.
    for i in 0..tables.len() {
        for j in 0..tables[i].columns.len() {
            let name = tables[i].columns[j].name.clone();
            let ty = tables
                .iter()
                .flat_map(|t| &t.columns)
                .find(|c| c.name == name)
                .and_then(|c| c.sql_type.clone());
            tables[i].columns[j].sql_type = ty;
        }
    }
    let mut foreign_keys: Vec<ForeignKey> = Vec::new();
    for _ in 0..rng.random_range(0..=4) {
        let (a, b) = (rng.random_range(0..n_tables), rng.random_range(0..n_tables));
        if a == b {
            continue;
        }
        let fk = ForeignKey {
            table: tables[a].name.clone(),
            column: tables[a].columns.choose(rng).unwrap().name.clone(),
            ref_table: tables[b].name.clone(),
            ref_column: tables[b].columns.choose(rng).unwrap().name.clone(),
        };
        if !foreign_keys.contains(&fk) {
            foreign_keys.push(fk);
        }
    }
    let s = Schema { db: format!("random_{index}"), tables, foreign_keys };
    s.validate().expect("generated schemas are valid");
    s
}

/// Oracles whose scores are a fixed function of the seed and prompt,
/// multiplied by `sharpness`.
pub fn hashed_oracles(seed: u64, sharpness: f64) -> OracleRegistry {
    OracleRegistry::with_default(Arc::new(FnHandle(move |r: &OracleRequest| {
        Ok(RawAnswer::Scores(hashed_scores(seed, r).into_iter().map(|x| x * sharpness).collect()))
    })))
}

/// Whether two tables share no column name.
pub fn has_disjoint_tables(s: &Schema) -> bool {
    s.tables.iter().enumerate().any(|(i, a)| {
        s.tables[i + 1..]
            .iter()
            .any(|b| a.columns.iter().all(|c| b.column(&c.name).is_none()))
    })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;

    #[test]
    fn generated_schemas_respect_the_bounds() {
        let mut rng = StdRng::seed_from_u64(3);
        for i in 0..50 {
            let s = random_schema(&mut rng, i);
            assert!((2..=6).contains(&s.tables.len()));
            assert!(s.tables.iter().all(|t| (2..=10).contains(&t.columns.len())));
            assert!(s.foreign_keys.len() <= 4);
        }
    }
}
