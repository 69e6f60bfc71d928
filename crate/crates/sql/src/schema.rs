//! Database schemas, their file formats and the semantic-name mapping.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    #[serde(default)]
    pub semantic_name: Option<String>,
    /// SQLite type used when instantiating a database; `text` if absent.
    #[serde(default, rename = "type")]
    pub sql_type: Option<String>,
}

impl Column {
    pub fn new(name: &str) -> Self {
        Column { name: name.to_string(), semantic_name: None, sql_type: None }
    }

    pub fn semantic(&self) -> &str {
        self.semantic_name.as_deref().unwrap_or(&self.name)
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self.sql_type.as_deref().map(str::to_ascii_lowercase).as_deref(), Some("number" | "integer" | "real" | "int"))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    #[serde(default)]
    pub semantic_name: Option<String>,
    pub columns: Vec<Column>,
}

impl Table {
    pub fn semantic(&self) -> &str {
        self.semantic_name.as_deref().unwrap_or(&self.name)
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForeignKey {
    pub table: String,
    pub column: String,
    pub ref_table: String,
    pub ref_column: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub db: String,
    pub tables: Vec<Table>,
    #[serde(default)]
    pub foreign_keys: Vec<ForeignKey>,
}

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("malformed schema file: {0}")]
    Format(#[from] serde_json::Error),
    #[error("schema {0} has no tables")]
    NoTables(String),
    #[error("duplicate table {0}")]
    DuplicateTable(String),
    #[error("duplicate column {column} in table {table}")]
    DuplicateColumn { table: String, column: String },
    #[error("table {0} has no columns")]
    NoColumns(String),
    #[error("foreign key {from} references missing {to}")]
    DanglingForeignKey { from: String, to: String },
    #[error("semantic name {semantic:?} is shared by {first} and {second}")]
    AmbiguousSemanticName { semantic: String, first: String, second: String },
    #[error("identifier {name} has two semantic names, {first:?} and {second:?}")]
    InconsistentSemanticName { name: String, first: String, second: String },
    #[error("database {0} not found in the Spider tables file")]
    UnknownDatabase(String),
    #[error("Spider tables file: {0}")]
    Spider(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    ToSemantic,
    ToOriginal,
}

/// Bijection between original identifiers and semantic names. Tables and
/// columns share one namespace; a column name used in several tables must
/// have the same semantic name everywhere.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NameMap {
    to_semantic: HashMap<String, String>,
    to_original: HashMap<String, String>,
}

impl NameMap {
    fn insert(&mut self, original: &str, semantic: &str) -> Result<(), SchemaError> {
        if let Some(prev) = self.to_semantic.get(original) {
            if prev != semantic {
                return Err(SchemaError::InconsistentSemanticName {
                    name: original.to_string(),
                    first: prev.clone(),
                    second: semantic.to_string(),
                });
            }
            return Ok(());
        }
        if let Some(prev) = self.to_original.get(semantic) {
            return Err(SchemaError::AmbiguousSemanticName {
                semantic: semantic.to_string(),
                first: prev.clone(),
                second: original.to_string(),
            });
        }
        self.to_semantic.insert(original.to_string(), semantic.to_string());
        self.to_original.insert(semantic.to_string(), original.to_string());
        Ok(())
    }

    pub fn get(&self, name: &str, dir: Direction) -> Option<&str> {
        match dir {
            Direction::ToSemantic => self.to_semantic.get(name),
            Direction::ToOriginal => self.to_original.get(name),
        }
        .map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.to_semantic.len()
    }

    pub fn is_empty(&self) -> bool {
        self.to_semantic.is_empty()
    }
}

impl Schema {
    pub fn from_json(bytes: &[u8]) -> Result<Self, SchemaError> {
        let s: Schema = serde_json::from_slice(bytes)?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schemas serialize")
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    /// Checks the structural invariants and that semantic names are
    /// unambiguous.
    pub fn validate(&self) -> Result<(), SchemaError> {
        if self.tables.is_empty() {
            return Err(SchemaError::NoTables(self.db.clone()));
        }
        let mut seen = HashSet::new();
        for t in &self.tables {
            if !seen.insert(t.name.as_str()) {
                return Err(SchemaError::DuplicateTable(t.name.clone()));
            }
            if t.columns.is_empty() {
                return Err(SchemaError::NoColumns(t.name.clone()));
            }
            let mut cols = HashSet::new();
            for c in &t.columns {
                if !cols.insert(c.name.as_str()) {
                    return Err(SchemaError::DuplicateColumn { table: t.name.clone(), column: c.name.clone() });
                }
            }
        }
        for fk in &self.foreign_keys {
            for (t, c) in [(&fk.table, &fk.column), (&fk.ref_table, &fk.ref_column)] {
                if self.table(t).and_then(|t| t.column(c)).is_none() {
                    return Err(SchemaError::DanglingForeignKey {
                        from: format!("{}.{}", fk.table, fk.column),
                        to: format!("{t}.{c}"),
                    });
                }
            }
        }
        self.names().map(|_| ())
    }

    pub fn names(&self) -> Result<NameMap, SchemaError> {
        let mut m = NameMap::default();
        for t in &self.tables {
            m.insert(&t.name, t.semantic())?;
        }
        for t in &self.tables {
            for c in &t.columns {
                m.insert(&c.name, c.semantic())?;
            }
        }
        Ok(m)
    }

    /// Reads one database from a Spider `tables.json` file.
    pub fn from_spider(bytes: &[u8], db_id: &str) -> Result<Self, SchemaError> {
        let all: Vec<SpiderDb> = serde_json::from_slice(bytes)?;
        let db = all
            .into_iter()
            .find(|d| d.db_id == db_id)
            .ok_or_else(|| SchemaError::UnknownDatabase(db_id.to_string()))?;
        db.into_schema()
    }
}

#[derive(Deserialize)]
struct SpiderDb {
    db_id: String,
    table_names_original: Vec<String>,
    table_names: Vec<String>,
    column_names_original: Vec<(i64, String)>,
    column_names: Vec<(i64, String)>,
    #[serde(default)]
    column_types: Vec<String>,
    #[serde(default)]
    foreign_keys: Vec<(usize, usize)>,
}

impl SpiderDb {
    fn into_schema(self) -> Result<Schema, SchemaError> {
        if self.table_names.len() != self.table_names_original.len()
            || self.column_names.len() != self.column_names_original.len()
        {
            return Err(SchemaError::Spider(format!("{}: name lists differ in length", self.db_id)));
        }
        let mut tables: Vec<Table> = self
            .table_names_original
            .iter()
            .zip(&self.table_names)
            .map(|(o, s)| Table { name: o.clone(), semantic_name: Some(s.clone()), columns: Vec::new() })
            .collect();
        // Column 0 is the `*` pseudo-column with table index -1.
        let mut owner: BTreeMap<usize, (usize, String)> = BTreeMap::new();
        for (i, ((t, name), (_, sem))) in self.column_names_original.iter().zip(&self.column_names).enumerate() {
            let Ok(t) = usize::try_from(*t) else { continue };
            let table = tables
                .get_mut(t)
                .ok_or_else(|| SchemaError::Spider(format!("column {name} has table index {t}")))?;
            table.columns.push(Column {
                name: name.clone(),
                semantic_name: Some(sem.clone()),
                sql_type: self.column_types.get(i).cloned(),
            });
            owner.insert(i, (t, name.clone()));
        }
        let mut foreign_keys = Vec::new();
        for (from, to) in self.foreign_keys {
            let (Some((ft, fc)), Some((tt, tc))) = (owner.get(&from), owner.get(&to)) else {
                return Err(SchemaError::Spider(format!("foreign key ({from}, {to}) names no column")));
            };
            foreign_keys.push(ForeignKey {
                table: tables[*ft].name.clone(),
                column: fc.clone(),
                ref_table: tables[*tt].name.clone(),
                ref_column: tc.clone(),
            });
        }
        let s = Schema { db: self.db_id, tables, foreign_keys };
        s.validate()?;
        Ok(s)
    }
}

/// The three-table kennel database.
pub fn dog_kennels() -> Schema {
    let col = |name: &str, sem: &str, ty: &str| Column {
        name: name.into(),
        semantic_name: Some(sem.into()),
        sql_type: Some(ty.into()),
    };
    let fk = |t: &str, c: &str, rt: &str, rc: &str| ForeignKey {
        table: t.into(),
        column: c.into(),
        ref_table: rt.into(),
        ref_column: rc.into(),
    };
    Schema {
        db: "dog_kennels".into(),
        tables: vec![
            Table {
                name: "Dogs".into(),
                semantic_name: None,
                columns: vec![col("dog_id", "dog id", "number"), col("name", "name", "text")],
            },
            Table {
                name: "Professionals".into(),
                semantic_name: None,
                columns: vec![col("prof_id", "professional id", "number"), col("role", "role", "text")],
            },
            Table {
                name: "Treatments".into(),
                semantic_name: None,
                columns: vec![
                    col("treat_id", "treatment id", "number"),
                    col("dog_id", "dog id", "number"),
                    col("prof_id", "professional id", "number"),
                ],
            },
        ],
        foreign_keys: vec![
            fk("Treatments", "dog_id", "Dogs", "dog_id"),
            fk("Treatments", "prof_id", "Professionals", "prof_id"),
        ],
    }
}
