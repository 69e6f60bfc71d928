//! SQL token lists: splitting, joining, value slots and identifier mapping.

use thiserror::Error;

use crate::schema::{Direction, NameMap};

/// Stands for a condition value or a `LIMIT` count in grammar output.
pub const VALUE_SLOT: &str = "[value]";

pub const KEYWORDS: &[&str] = &[
    "SELECT", "FROM", "WHERE", "GROUP", "BY", "HAVING", "ORDER", "ASC", "DESC", "LIMIT", "EXCEPT", "DISTINCT",
    "COUNT", "SUM", "AVG", "MIN", "MAX", "LIKE", "AND", "OR", "NOT",
];

const AGGREGATES: &[&str] = &["COUNT", "SUM", "AVG", "MIN", "MAX"];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TokenError {
    #[error("unterminated string literal at byte {0}")]
    Unterminated(usize),
    #[error("unexpected character {ch:?} at byte {pos}")]
    Unexpected { ch: char, pos: usize },
    #[error("unresolvable identifiers: {}", .0.join(", "))]
    Unresolvable(Vec<String>),
}

pub fn is_keyword(tok: &str) -> bool {
    KEYWORDS.contains(&tok)
}

pub fn is_literal(tok: &str) -> bool {
    tok.starts_with('\'') || tok.starts_with('"') || tok.parse::<f64>().is_ok()
}

fn is_symbol(tok: &str) -> bool {
    matches!(tok, "(" | ")" | "," | "*" | "=" | "!=" | "<>" | ">" | "<" | ">=" | "<=")
}

/// Splits a query into tokens. Keywords are upper-cased; identifiers and
/// literals are kept verbatim. A trailing semicolon is dropped.
pub fn tokenize(sql: &str) -> Result<Vec<String>, TokenError> {
    let b = sql.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < b.len() {
        let c = b[i] as char;
        if c.is_ascii_whitespace() || c == ';' {
            i += 1;
        } else if c == '\'' || c == '"' {
            let start = i;
            i += 1;
            loop {
                match b.get(i) {
                    None => return Err(TokenError::Unterminated(start)),
                    Some(&q) if q as char == c => {
                        // A doubled quote escapes itself.
                        if b.get(i + 1) == Some(&q) {
                            i += 2;
                        } else {
                            i += 1;
                            break;
                        }
                    }
                    Some(_) => i += 1,
                }
            }
            out.push(sql[start..i].to_string());
        } else if c.is_ascii_digit() || (c == '-' && b.get(i + 1).is_some_and(u8::is_ascii_digit)) {
            let start = i;
            i += 1;
            while i < b.len() && (b[i].is_ascii_digit() || b[i] == b'.') {
                i += 1;
            }
            out.push(sql[start..i].to_string());
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < b.len() && (b[i].is_ascii_alphanumeric() || b[i] == b'_' || b[i] == b'.') {
                i += 1;
            }
            let word = &sql[start..i];
            let upper = word.to_ascii_uppercase();
            out.push(if is_keyword(&upper) { upper } else { word.to_string() });
        } else {
            let two = sql.get(i..i + 2).unwrap_or("");
            if matches!(two, "!=" | "<>" | ">=" | "<=") {
                out.push(two.to_string());
                i += 2;
            } else if "(),*=<>".contains(c) {
                out.push(c.to_string());
                i += 1;
            } else {
                return Err(TokenError::Unexpected { ch: sql[i..].chars().next().unwrap(), pos: i });
            }
        }
    }
    Ok(out)
}

/// Joins tokens with single spaces, except around parentheses and commas:
/// `COUNT(DISTINCT name)`, `a, b`.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    let mut prev: Option<&str> = None;
    for t in tokens {
        let t = t.as_ref();
        let glue = match prev {
            None => true,
            Some("(") => true,
            Some(p) => t == ")" || t == "," || (t == "(" && AGGREGATES.contains(&p)),
        };
        if !glue {
            out.push(' ');
        }
        out.push_str(t);
        prev = Some(t);
    }
    out
}

/// Upper-case keywords, single spaces, no trailing semicolon.
pub fn canonicalize(sql: &str) -> Result<String, TokenError> {
    Ok(detokenize(&tokenize(sql)?))
}

/// Replaces every literal with [`VALUE_SLOT`], returning the literals in
/// order.
pub fn extract_values(tokens: &[String]) -> (Vec<String>, Vec<String>) {
    let mut values = Vec::new();
    let out = tokens
        .iter()
        .map(|t| {
            if is_literal(t) {
                values.push(t.clone());
                VALUE_SLOT.to_string()
            } else {
                t.clone()
            }
        })
        .collect();
    (out, values)
}

/// Renders a gold value as a literal. Bare text is single-quoted.
pub fn literal(value: &str) -> String {
    let v = value.trim();
    if is_literal(v) {
        v.to_string()
    } else {
        format!("'{}'", v.replace('\'', "''"))
    }
}

/// Fills value slots from `values` in order. A slot without a value gets
/// `1`, as does a `LIMIT` slot whose value is not a non-negative integer.
pub fn fill_values(tokens: &[String], values: &[String]) -> Vec<String> {
    let mut next = values.iter();
    let mut out: Vec<String> = Vec::with_capacity(tokens.len());
    for t in tokens {
        if t == VALUE_SLOT {
            let v = next.next().map(|v| literal(v));
            let after_limit = out.last().is_some_and(|p| p == "LIMIT");
            let v = match v {
                Some(v) if !after_limit || v.parse::<u64>().is_ok() => v,
                _ => "1".to_string(),
            };
            out.push(v);
        } else {
            out.push(t.clone());
        }
    }
    out
}

/// Maps identifier tokens between original and semantic names. Keywords,
/// symbols, literals and value slots pass through unchanged.
pub fn map_semantic_names<S: AsRef<str>>(
    tokens: &[S],
    names: &NameMap,
    dir: Direction,
) -> Result<Vec<String>, TokenError> {
    let mut bad = Vec::new();
    let out = tokens
        .iter()
        .map(|t| {
            let t = t.as_ref();
            if let Some(m) = names.get(t, dir) {
                m.to_string()
            } else {
                if !(is_keyword(t) || is_symbol(t) || is_literal(t) || t == VALUE_SLOT) {
                    bad.push(t.to_string());
                }
                t.to_string()
            }
        })
        .collect();
    if bad.is_empty() {
        Ok(out)
    } else {
        Err(TokenError::Unresolvable(bad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::dog_kennels;

    fn toks(s: &[&str]) -> Vec<String> {
        s.iter().map(|t| t.to_string()).collect()
    }

    #[test]
    fn tokenizes_the_workflow_query() {
        assert_eq!(tokenize("select prof_id from Treatments;").unwrap(), toks(&["SELECT", "prof_id", "FROM", "Treatments"]));
    }

    #[test]
    fn tokenizes_conditions_and_aggregates() {
        let t = tokenize("SELECT count(DISTINCT name) FROM Dogs WHERE name != 'Bo''s' AND dog_id >= -3.5").unwrap();
        assert_eq!(
            t,
            toks(&[
                "SELECT", "COUNT", "(", "DISTINCT", "name", ")", "FROM", "Dogs", "WHERE", "name", "!=", "'Bo''s'", "AND",
                "dog_id", ">=", "-3.5"
            ])
        );
        assert_eq!(
            detokenize(&t),
            "SELECT COUNT(DISTINCT name) FROM Dogs WHERE name != 'Bo''s' AND dog_id >= -3.5"
        );
    }

    #[test]
    fn canonical_form() {
        assert_eq!(
            canonicalize("  select   *  from Dogs   order by name desc limit 3 ; ").unwrap(),
            "SELECT * FROM Dogs ORDER BY name DESC LIMIT 3"
        );
        assert_eq!(canonicalize("SELECT COUNT ( * ) FROM t").unwrap(), "SELECT COUNT(*) FROM t");
    }

    #[test]
    fn tokenizer_errors() {
        assert_eq!(tokenize("SELECT 'abc"), Err(TokenError::Unterminated(7)));
        assert!(matches!(tokenize("SELECT a # b"), Err(TokenError::Unexpected { ch: '#', .. })));
        assert_eq!(tokenize("").unwrap(), Vec::<String>::new());
    }

    #[test]
    fn values_round_trip_through_slots() {
        let t = tokenize("SELECT * FROM Dogs WHERE name = 'Rex' ORDER BY dog_id LIMIT 2").unwrap();
        let (slotted, values) = extract_values(&t);
        assert_eq!(values, toks(&["'Rex'", "2"]));
        assert_eq!(slotted.iter().filter(|t| *t == VALUE_SLOT).count(), 2);
        assert_eq!(fill_values(&slotted, &values), t);
    }

    #[test]
    fn missing_values_become_one() {
        let slotted = toks(&["SELECT", "*", "FROM", "t", "WHERE", "a", "=", VALUE_SLOT, "LIMIT", VALUE_SLOT]);
        assert_eq!(detokenize(&fill_values(&slotted, &[])), "SELECT * FROM t WHERE a = 1 LIMIT 1");
        let filled = fill_values(&slotted, &toks(&["Rex", "'x'"]));
        assert_eq!(detokenize(&filled), "SELECT * FROM t WHERE a = 'Rex' LIMIT 1");
    }

    #[test]
    fn semantic_mapping_round_trip() {
        let names = dog_kennels().names().unwrap();
        let q = toks(&["SELECT", "prof_id", "FROM", "Treatments"]);
        let sem = map_semantic_names(&q, &names, Direction::ToSemantic).unwrap();
        assert_eq!(sem, toks(&["SELECT", "professional id", "FROM", "Treatments"]));
        assert_eq!(map_semantic_names(&sem, &names, Direction::ToOriginal).unwrap(), q);
    }

    #[test]
    fn tokens_without_identifiers_are_unchanged() {
        let names = dog_kennels().names().unwrap();
        let q = toks(&["SELECT", "COUNT", "(", "*", ")", VALUE_SLOT, "'a'"]);
        assert_eq!(map_semantic_names(&q, &names, Direction::ToSemantic).unwrap(), q);
    }

    #[test]
    fn unknown_identifiers_are_listed() {
        let names = dog_kennels().names().unwrap();
        let q = toks(&["SELECT", "Independence", "FROM", "country"]);
        assert_eq!(
            map_semantic_names(&q, &names, Direction::ToSemantic),
            Err(TokenError::Unresolvable(toks(&["Independence", "country"])))
        );
    }
}
