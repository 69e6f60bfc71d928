//! Schema facts and the text-to-SQL grammars.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::str::FromStr;

use dcg_core::grammar::{parse_grammar_source, Fact, Grammar, GrammarError};
use dcg_core::terms::{Atom, Term};

use crate::schema::Schema;

pub const PROMPT: &str = "the answer should be Answer ";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scope {
    /// `SELECT column FROM table`.
    Basic,
    /// The SELECT clause with eight selection branches.
    Task1,
    /// One selection with optional WHERE, GROUP BY/HAVING and ORDER BY/LIMIT,
    /// or two simple selections joined by EXCEPT.
    Task2,
}

impl FromStr for Scope {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "basic" => Ok(Scope::Basic),
            "task1" => Ok(Scope::Task1),
            "task2" => Ok(Scope::Task2),
            _ => Err(format!("unknown grammar scope {s:?}; expected basic, task1 or task2")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ColumnDomain {
    /// Columns of the table chosen earlier in the derivation.
    Table,
    /// Every column of the database, ignoring the table.
    Database,
}

pub const SELECTION_TASK1: [&str; 8] =
    ["*", "COUNT(*)", "column", "COUNT(column)", "SUM(column)", "AVG(column)", "MIN(column)", "MAX(column)"];

pub const SELECTION_TASK2: [&str; 10] = [
    "*",
    "COUNT(*)",
    "column",
    "DISTINCT column",
    "COUNT(column)",
    "COUNT(DISTINCT column)",
    "SUM(column)",
    "AVG(column)",
    "MIN(column)",
    "MAX(column)",
];

pub const OPERATORS: [&str; 7] = ["=", "!=", ">", "<", ">=", "<=", "LIKE"];

fn c(s: &str) -> Term {
    Term::constant(s)
}

fn fact(pred: &str, args: &[&str]) -> Fact {
    Fact(Atom::new(pred, args.iter().map(|a| c(a)).collect()))
}

/// Facts describing a schema, in semantic names:
/// `table_domain(DB, T)`, `column_domain(DB, T, C)`, `db_column(DB, C)`,
/// `except_link(DB, T1, T2, C1, C2)`, `except_first(DB, T1)` and
/// `except_partner(DB, T1, T2)`.
pub fn schema_facts(s: &Schema) -> Vec<Fact> {
    let db = s.db.as_str();
    let mut out = Vec::new();
    for t in &s.tables {
        out.push(fact("table_domain", &[db, t.semantic()]));
    }
    let mut seen = HashSet::new();
    for t in &s.tables {
        for col in &t.columns {
            out.push(fact("column_domain", &[db, t.semantic(), col.semantic()]));
        }
    }
    for t in &s.tables {
        for col in &t.columns {
            if seen.insert(col.semantic()) {
                out.push(fact("db_column", &[db, col.semantic()]));
            }
        }
    }
    // One link per ordered table pair: the first foreign key in schema order.
    let sem_t = |name: &str| s.table(name).expect("validated").semantic().to_string();
    let sem_c = |t: &str, c: &str| s.table(t).and_then(|t| t.column(c)).expect("validated").semantic().to_string();
    let mut links: Vec<[String; 4]> = Vec::new();
    for fk in &s.foreign_keys {
        let a = [sem_t(&fk.table), sem_t(&fk.ref_table), sem_c(&fk.table, &fk.column), sem_c(&fk.ref_table, &fk.ref_column)];
        let b = [a[1].clone(), a[0].clone(), a[3].clone(), a[2].clone()];
        for l in [a, b] {
            if !links.iter().any(|m| m[0] == l[0] && m[1] == l[1]) {
                links.push(l);
            }
        }
    }
    for l in &links {
        out.push(fact("except_link", &[db, &l[0], &l[1], &l[2], &l[3]]));
    }
    let mut firsts = Vec::new();
    for t in &s.tables {
        if links.iter().any(|l| l[0] == t.semantic()) {
            firsts.push(t.semantic());
            out.push(fact("except_first", &[db, t.semantic()]));
        }
    }
    for t1 in &firsts {
        for t2 in &s.tables {
            if links.iter().any(|l| l[0] == *t1 && l[1] == t2.semantic()) {
                out.push(fact("except_partner", &[db, t1, t2.semantic()]));
            }
        }
    }
    out
}

pub fn has_except(s: &Schema) -> bool {
    !s.foreign_keys.is_empty()
}

fn quoted(s: &str) -> String {
    format!("{s:?}")
}

fn options(src: &mut String, pred: &str, values: &[&str]) {
    for v in values {
        writeln!(src, "{pred}({}).", quoted(v)).unwrap();
    }
}

/// A two-way branch named by an oracle over `["empty", keyword]`.
fn optional_clause(src: &mut String, name: &str, oracle: &str, args: &str, keyword: &str, body: &str) {
    let p = quoted(PROMPT);
    let opt = format!("{name}_option");
    options(src, &opt, &["empty", keyword]);
    writeln!(src, "{name}({args}) --> {name}_b(B, {args}) :: oracle({oracle}, [NL], B, {opt}(B), {p})").unwrap();
    writeln!(src, "{name}_b(\"empty\", {args}) --> []").unwrap();
    writeln!(src, "{name}_b({}, {args}) --> {body}", quoted(keyword)).unwrap();
}

/// Grammar source without the schema facts.
pub fn grammar_source(scope: Scope, columns: ColumnDomain, except: bool) -> String {
    let p = quoted(PROMPT);
    let mut src = String::new();
    let domain = match columns {
        ColumnDomain::Table => "column_domain(DB, T, C)",
        ColumnDomain::Database => "db_column(DB, C)",
    };
    writeln!(src, "table(NL, DB, T) --> [] :: oracle(table_lm, [NL], T, table_domain(DB, T), {p})").unwrap();
    match scope {
        Scope::Basic | Scope::Task1 => {
            writeln!(src, "column(NL, DB, T, St) --> [C] :: oracle(column_lm, [NL], C, {domain}, {p})").unwrap()
        }
        Scope::Task2 => {
            writeln!(src, "column(NL, DB, T, St) --> [C] :: oracle(column_lm, [NL, St], C, {domain}, {p})").unwrap()
        }
    }
    if scope == Scope::Basic {
        writeln!(src, "query(NL, DB) --> table(NL, DB, T), [\"SELECT\"], column(NL, DB, T, \"\"), [\"FROM\", T]").unwrap();
        return src;
    }

    let branches: &[&str] = if scope == Scope::Task1 { &SELECTION_TASK1 } else { &SELECTION_TASK2 };
    options(&mut src, "selection_option", branches);
    writeln!(src, "selection(NL, DB, T) --> sel(S, NL, DB, T) :: oracle(selection_lm, [NL], S, selection_option(S), {p})")
        .unwrap();
    let col = "column(NL, DB, T, \"SELECT [column]\")";
    for b in branches {
        let body = match *b {
            "*" => "[\"*\"]".to_string(),
            "COUNT(*)" => "[\"COUNT\", \"(\", \"*\", \")\"]".to_string(),
            "column" => col.to_string(),
            "DISTINCT column" => format!("[\"DISTINCT\"], {col}"),
            "COUNT(DISTINCT column)" => format!("[\"COUNT\", \"(\", \"DISTINCT\"], {col}, [\")\"]"),
            agg => {
                let f = agg.split('(').next().unwrap();
                format!("[\"{f}\", \"(\"], {col}, [\")\"]")
            }
        };
        writeln!(src, "sel({}, NL, DB, T) --> {body}", quoted(b)).unwrap();
    }
    if scope == Scope::Task1 {
        writeln!(src, "query(NL, DB) --> table(NL, DB, T), [\"SELECT\"], selection(NL, DB, T), [\"FROM\", T]").unwrap();
        return src;
    }

    options(&mut src, "operator_option", &OPERATORS);
    writeln!(src, "operator(NL, St) --> [O] :: oracle(operator_lm, [NL, St], O, operator_option(O), {p})").unwrap();
    optional_clause(
        &mut src,
        "where",
        "where_lm",
        "NL, DB, T",
        "WHERE",
        "[\"WHERE\"], column(NL, DB, T, \"WHERE [column]\"), operator(NL, \"WHERE [operator]\"), [\"[value]\"]",
    );
    optional_clause(
        &mut src,
        "having",
        "having_lm",
        "NL",
        "HAVING",
        "[\"HAVING\", \"COUNT\", \"(\", \"*\", \")\"], operator(NL, \"HAVING [operator]\"), [\"[value]\"]",
    );
    optional_clause(
        &mut src,
        "groupby",
        "groupby_lm",
        "NL, DB, T",
        "GROUP BY",
        "[\"GROUP\", \"BY\"], column(NL, DB, T, \"GROUP BY [column]\"), having(NL)",
    );
    options(&mut src, "desc_option", &["empty", "ASC", "DESC"]);
    writeln!(src, "desc(NL) --> desc_b(D) :: oracle(desc_lm, [NL], D, desc_option(D), {p})").unwrap();
    writeln!(src, "desc_b(\"empty\") --> []").unwrap();
    writeln!(src, "desc_b(\"ASC\") --> [\"ASC\"]").unwrap();
    writeln!(src, "desc_b(\"DESC\") --> [\"DESC\"]").unwrap();
    optional_clause(&mut src, "limit", "limit_lm", "NL", "LIMIT", "[\"LIMIT\", \"[value]\"]");
    optional_clause(
        &mut src,
        "order",
        "order_lm",
        "NL, DB, T",
        "ORDER BY",
        "[\"ORDER\", \"BY\"], column(NL, DB, T, \"ORDER BY [column]\"), desc(NL), limit(NL)",
    );
    writeln!(
        src,
        "single(NL, DB) --> table(NL, DB, T), [\"SELECT\"], selection(NL, DB, T), [\"FROM\", T], where(NL, DB, T), groupby(NL, DB, T), order(NL, DB, T)"
    )
    .unwrap();
    if !except {
        writeln!(src, "query(NL, DB) --> single(NL, DB)").unwrap();
        return src;
    }
    options(&mut src, "except_option", &["empty", "EXCEPT"]);
    writeln!(src, "query(NL, DB) --> query_b(E, NL, DB) :: oracle(except_lm, [NL], E, except_option(E), {p})").unwrap();
    writeln!(src, "query_b(\"empty\", NL, DB) --> single(NL, DB)").unwrap();
    writeln!(
        src,
        "query_b(\"EXCEPT\", NL, DB) --> except_table(NL, DB, T1), partner_table(NL, DB, T1, T2), {{except_link(DB, T1, T2, C1, C2)}}, [\"SELECT\", C1, \"FROM\", T1, \"EXCEPT\", \"SELECT\", C2, \"FROM\", T2]"
    )
    .unwrap();
    writeln!(
        src,
        "except_table(NL, DB, T) --> [] :: oracle(table_lm, [NL, \"[table] EXCEPT\"], T, except_first(DB, T), {p})"
    )
    .unwrap();
    writeln!(
        src,
        "partner_table(NL, DB, T1, T) --> [] :: oracle(table_lm, [NL, \"EXCEPT [table]\"], T, except_partner(DB, T1, T), {p})"
    )
    .unwrap();
    src
}

fn build(s: &Schema, scope: Scope, columns: ColumnDomain) -> Result<Grammar, GrammarError> {
    let mut g = parse_grammar_source(&grammar_source(scope, columns, has_except(s)))?;
    g.add_facts(schema_facts(s))?;
    Ok(g)
}

/// Columns are drawn from the table chosen earlier in the same query.
pub fn build_dcg_grammar(s: &Schema, scope: Scope) -> Result<Grammar, GrammarError> {
    build(s, scope, ColumnDomain::Table)
}

/// Same rules, but every column of the database is offered regardless of
/// the table.
pub fn build_cfg_ablation_grammar(s: &Schema, scope: Scope) -> Result<Grammar, GrammarError> {
    build(s, scope, ColumnDomain::Database)
}

/// `query(NL, DB)`.
pub fn query_atom(nl: &str, s: &Schema) -> Atom {
    Atom::new("query", vec![c(nl), c(&s.db)])
}
