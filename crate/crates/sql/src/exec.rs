//! Execution checks against SQLite databases.

use std::path::Path;
use std::sync::Mutex;

use rand::rngs::StdRng;
use rand::RngExt;
use rusqlite::{params_from_iter, Connection, OpenFlags};
use thiserror::Error;

use crate::schema::Schema;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FailureKind {
    /// Empty or truncated query text.
    Incomplete,
    /// A table or column that the database does not have.
    InventedIdentifier,
    Other,
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
#[error("{kind:?}: {message}")]
pub struct ExecFailure {
    pub kind: FailureKind,
    /// The engine's message.
    pub message: String,
}

fn classify(message: String) -> ExecFailure {
    let kind = if message.contains("no such column") || message.contains("no such table") {
        FailureKind::InventedIdentifier
    } else if message.contains("incomplete input") || message.contains("syntax error") {
        FailureKind::Incomplete
    } else {
        FailureKind::Other
    };
    ExecFailure { kind, message }
}

/// A read-only connection; checks on one database run one at a time.
pub struct Checker {
    conn: Mutex<Connection>,
}

impl Checker {
    pub fn open(db_file: impl AsRef<Path>) -> Result<Self, rusqlite::Error> {
        let conn = Connection::open_with_flags(db_file, OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX)?;
        Ok(Checker { conn: Mutex::new(conn) })
    }

    /// Runs the query to completion, discarding rows.
    pub fn check(&self, sql: &str) -> Result<(), ExecFailure> {
        if sql.trim().trim_end_matches(';').trim().is_empty() {
            return Err(ExecFailure { kind: FailureKind::Incomplete, message: "empty query".into() });
        }
        let conn = self.conn.lock().unwrap();
        let run = || -> Result<(), rusqlite::Error> {
            let mut stmt = conn.prepare(sql)?;
            let mut rows = stmt.query([])?;
            while rows.next()?.is_some() {}
            Ok(())
        };
        run().map_err(|e| classify(e.to_string()))
    }
}

/// Opens `db_file` read-only and executes `sql`.
pub fn check_executable(sql: &str, db_file: impl AsRef<Path>) -> Result<(), ExecFailure> {
    let checker = Checker::open(db_file).map_err(|e| ExecFailure { kind: FailureKind::Other, message: e.to_string() })?;
    checker.check(sql)
}

fn quote_ident(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\""))
}

/// Creates the schema's tables in a new database file and inserts `rows`
/// random rows per table.
pub fn instantiate(schema: &Schema, db_file: impl AsRef<Path>, rows: usize, rng: &mut StdRng) -> rusqlite::Result<()> {
    let conn = Connection::open(db_file)?;
    for t in &schema.tables {
        let mut parts: Vec<String> = t
            .columns
            .iter()
            .map(|c| format!("{} {}", quote_ident(&c.name), if c.is_numeric() { "INTEGER" } else { "TEXT" }))
            .collect();
        for fk in schema.foreign_keys.iter().filter(|f| f.table == t.name) {
            parts.push(format!(
                "FOREIGN KEY ({}) REFERENCES {}({})",
                quote_ident(&fk.column),
                quote_ident(&fk.ref_table),
                quote_ident(&fk.ref_column)
            ));
        }
        conn.execute(&format!("CREATE TABLE {} ({})", quote_ident(&t.name), parts.join(", ")), [])?;
        let marks = vec!["?"; t.columns.len()].join(", ");
        let mut insert = conn.prepare(&format!("INSERT INTO {} VALUES ({marks})", quote_ident(&t.name)))?;
        for _ in 0..rows {
            let vals: Vec<rusqlite::types::Value> = t
                .columns
                .iter()
                .map(|c| {
                    if c.is_numeric() {
                        rusqlite::types::Value::Integer(rng.random_range(0..10))
                    } else {
                        rusqlite::types::Value::Text(format!("v{}", rng.random_range(0..10)))
                    }
                })
                .collect();
            insert.execute(params_from_iter(vals))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;
    use crate::schema::dog_kennels;

    fn kennels_db() -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dog_kennels.sqlite");
        instantiate(&dog_kennels(), &path, 5, &mut StdRng::seed_from_u64(1)).unwrap();
        (dir, path)
    }

    #[test]
    fn valid_query_passes() {
        let (_d, path) = kennels_db();
        check_executable("SELECT prof_id FROM Treatments", &path).unwrap();
        check_executable("SELECT COUNT(DISTINCT name) FROM Dogs WHERE name LIKE 'v%' ORDER BY name DESC LIMIT 1", &path)
            .unwrap();
    }

    #[test]
    fn invented_identifier() {
        let (_d, path) = kennels_db();
        let e = check_executable("SELECT Independence FROM country", &path).unwrap_err();
        assert_eq!(e.kind, FailureKind::InventedIdentifier);
        let e = check_executable("SELECT treat_id FROM Dogs", &path).unwrap_err();
        assert_eq!(e.kind, FailureKind::InventedIdentifier);
        assert!(e.message.contains("treat_id"));
    }

    #[test]
    fn incomplete_queries() {
        let (_d, path) = kennels_db();
        assert_eq!(check_executable("", &path).unwrap_err().kind, FailureKind::Incomplete);
        assert_eq!(check_executable("select", &path).unwrap_err().kind, FailureKind::Incomplete);
    }

    #[test]
    fn connection_is_read_only() {
        let (_d, path) = kennels_db();
        let e = check_executable("DELETE FROM Dogs", &path).unwrap_err();
        assert!(e.message.contains("readonly"), "{}", e.message);
    }
}
