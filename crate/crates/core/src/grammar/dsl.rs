//! Reader and printer for the grammar source format.
//!
//! ```text
//! % comment
//! database("dog_kennels", ["Dogs", "Professionals"]).
//! query(NL, DB) --> table(NL, DB, T), ["SELECT"], column(NL, DB, T, C), ["FROM", T]
//! 0.3 :: p(a) --> ["x"]
//! learnable(g) :: q --> []
//! table(NL, DB, T) --> [] :: oracle(table_lm, [NL], T, table_domain(DB, T), "the answer should be Answer ")
//! ```
//!
//! One clause per line. Facts end with `.`; the trailing `.` is optional on
//! rules.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use super::{BodyItem, Fact, Grammar, GrammarError, GrammarRule, OracleSpec, ProbabilitySource};
use crate::terms::{write_quoted, Atom, Substitution, Term, Var};

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Variable(String),
    Str(String),
    Number(String),
    LParen,
    RParen,
    LBracket,
    RBracket,
    LBrace,
    RBrace,
    Comma,
    Dot,
    Arrow,
    DoubleColon,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) | Tok::Variable(s) | Tok::Number(s) => f.write_str(s),
            Tok::Str(s) => write!(f, "\"{s}\""),
            Tok::LParen => f.write_str("("),
            Tok::RParen => f.write_str(")"),
            Tok::LBracket => f.write_str("["),
            Tok::RBracket => f.write_str("]"),
            Tok::LBrace => f.write_str("{"),
            Tok::RBrace => f.write_str("}"),
            Tok::Comma => f.write_str(","),
            Tok::Dot => f.write_str("."),
            Tok::Arrow => f.write_str("-->"),
            Tok::DoubleColon => f.write_str("::"),
        }
    }
}

fn lex_line(line: &str, line_no: usize) -> Result<Vec<(Tok, usize)>, GrammarError> {
    let chars: Vec<char> = line.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    let err = |col: usize, msg: String| GrammarError::Syntax { line: line_no, col, msg };
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c == '%' {
            break;
        }
        let single = match c {
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            '[' => Some(Tok::LBracket),
            ']' => Some(Tok::RBracket),
            '{' => Some(Tok::LBrace),
            '}' => Some(Tok::RBrace),
            ',' => Some(Tok::Comma),
            _ => None,
        };
        if let Some(tok) = single {
            out.push((tok, col));
            i += 1;
            continue;
        }
        if c == '-' && chars[i..].starts_with(&['-', '-', '>']) {
            out.push((Tok::Arrow, col));
            i += 3;
            continue;
        }
        if c == ':' && chars.get(i + 1) == Some(&':') {
            out.push((Tok::DoubleColon, col));
            i += 2;
            continue;
        }
        if c == '"' || c == '\'' {
            let quote = c;
            let mut s = String::new();
            i += 1;
            loop {
                match chars.get(i) {
                    None => return Err(err(col, "unterminated string".into())),
                    Some(&ch) if ch == quote => {
                        i += 1;
                        break;
                    }
                    Some('\\') => {
                        let esc = chars.get(i + 1).ok_or_else(|| err(i + 1, "dangling escape".into()))?;
                        s.push(match esc {
                            'n' => '\n',
                            't' => '\t',
                            other => *other,
                        });
                        i += 2;
                    }
                    Some(&ch) => {
                        s.push(ch);
                        i += 1;
                    }
                }
            }
            out.push((Tok::Str(s), col));
            continue;
        }
        let numeric_start = c.is_ascii_digit()
            || (c == '-' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()));
        if numeric_start {
            let start = i;
            i += 1;
            while i < chars.len()
                && (chars[i].is_ascii_digit()
                    || (chars[i] == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()))
                    || ((chars[i] == 'e' || chars[i] == 'E')
                        && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit() || *d == '-')))
            {
                if chars[i] == 'e' || chars[i] == 'E' {
                    i += 1;
                }
                i += 1;
            }
            out.push((Tok::Number(chars[start..i].iter().collect()), col));
            continue;
        }
        if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            let word: String = chars[start..i].iter().collect();
            let tok = if c.is_uppercase() || c == '_' { Tok::Variable(word) } else { Tok::Ident(word) };
            out.push((tok, col));
            continue;
        }
        if c == '.' {
            out.push((Tok::Dot, col));
            i += 1;
            continue;
        }
        return Err(err(col, format!("unexpected character `{c}`")));
    }
    Ok(out)
}

struct LineParser<'a> {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    line: usize,
    line_len: usize,
    vars: HashMap<String, Var>,
    next_var: &'a mut u64,
}

impl LineParser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn col(&self) -> usize {
        self.toks.get(self.pos).map_or(self.line_len + 1, |(_, c)| *c)
    }

    fn error(&self, msg: impl Into<String>) -> GrammarError {
        GrammarError::Syntax { line: self.line, col: self.col(), msg: msg.into() }
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(t, _)| t.clone());
        self.pos += 1;
        t
    }

    fn expect(&mut self, tok: Tok) -> Result<(), GrammarError> {
        match self.peek() {
            Some(t) if *t == tok => {
                self.pos += 1;
                Ok(())
            }
            Some(t) => Err(self.error(format!("expected `{tok}`, found `{t}`"))),
            None => Err(self.error(format!("expected `{tok}`, found end of line"))),
        }
    }

    fn variable(&mut self, name: &str) -> Var {
        if name == "_" {
            let v = Var::new(*self.next_var, "_");
            *self.next_var += 1;
            return v;
        }
        if let Some(v) = self.vars.get(name) {
            return v.clone();
        }
        let v = Var::new(*self.next_var, name);
        *self.next_var += 1;
        self.vars.insert(name.to_string(), v.clone());
        v
    }

    fn term(&mut self) -> Result<Term, GrammarError> {
        match self.next() {
            Some(Tok::Variable(name)) => Ok(Term::Var(self.variable(&name))),
            Some(Tok::Str(s)) | Some(Tok::Number(s)) => Ok(Term::Const(s.as_str().into())),
            Some(Tok::Ident(name)) => {
                if self.peek() == Some(&Tok::LParen) {
                    self.pos += 1;
                    let args = self.term_list(Tok::RParen)?;
                    if args.is_empty() {
                        return Err(self.error("empty argument list"));
                    }
                    Ok(Term::Compound(name.as_str().into(), args))
                } else {
                    Ok(Term::Const(name.as_str().into()))
                }
            }
            Some(Tok::LBracket) => Ok(Term::list(self.term_list(Tok::RBracket)?)),
            Some(t) => {
                self.pos -= 1;
                Err(self.error(format!("expected a term, found `{t}`")))
            }
            None => Err(self.error("expected a term, found end of line")),
        }
    }

    /// Comma-separated terms up to and including `close`.
    fn term_list(&mut self, close: Tok) -> Result<Vec<Term>, GrammarError> {
        let mut items = Vec::new();
        if self.peek() == Some(&close) {
            self.pos += 1;
            return Ok(items);
        }
        loop {
            items.push(self.term()?);
            match self.next() {
                Some(Tok::Comma) => continue,
                Some(t) if t == close => return Ok(items),
                _ => {
                    self.pos -= 1;
                    return Err(self.error(format!("expected `,` or `{close}`")));
                }
            }
        }
    }

    fn atom(&mut self) -> Result<Atom, GrammarError> {
        let col = self.col();
        let t = self.term()?;
        term_to_atom(t).ok_or(GrammarError::Syntax {
            line: self.line,
            col,
            msg: "expected an atom".into(),
        })
    }

    fn body(&mut self) -> Result<Vec<BodyItem>, GrammarError> {
        let mut items = Vec::new();
        loop {
            let item = match self.peek() {
                Some(Tok::LBracket) => {
                    self.pos += 1;
                    BodyItem::Terminals(self.term_list(Tok::RBracket)?)
                }
                Some(Tok::LBrace) => {
                    self.pos += 1;
                    let a = self.atom()?;
                    self.expect(Tok::RBrace)?;
                    BodyItem::Embedded(a)
                }
                _ => BodyItem::NonTerminal(self.atom()?),
            };
            items.push(item);
            if self.peek() == Some(&Tok::Comma) {
                self.pos += 1;
            } else {
                return Ok(items);
            }
        }
    }
}

fn term_to_atom(t: Term) -> Option<Atom> {
    match t {
        Term::Compound(f, args) => Some(Atom { predicate: f, args }),
        Term::Const(c) if !c.is_empty() => Some(Atom { predicate: c, args: vec![] }),
        _ => None,
    }
}

/// Converts a parsed annotation term into a probability source.
fn annotation(
    t: Term,
    line: usize,
    col: usize,
    branches: &mut BTreeMap<String, usize>,
) -> Result<ProbabilitySource, GrammarError> {
    let syntax = |msg: &str| GrammarError::Syntax { line, col, msg: msg.to_string() };
    match t {
        Term::Const(c) => match c.parse::<f64>() {
            Ok(p) => Ok(ProbabilitySource::Static(p)),
            Err(_) => Err(GrammarError::UnknownProbabilityKeyword { line, col, keyword: c.to_string() }),
        },
        Term::Compound(f, args) => match (&*f, args.len()) {
            ("learnable", 1) => {
                let group = args[0]
                    .as_const()
                    .ok_or_else(|| syntax("learnable group must be a name"))?
                    .to_string();
                let counter = branches.entry(group.clone()).or_default();
                let branch = *counter;
                *counter += 1;
                Ok(ProbabilitySource::Learnable { group, branch })
            }
            ("oracle", 5) => {
                let mut it = args.into_iter();
                let id = it.next().unwrap();
                let inputs = it.next().unwrap();
                let output = it.next().unwrap();
                let goal = it.next().unwrap();
                let prompt = it.next().unwrap();
                let oracle_id = id.as_const().ok_or_else(|| syntax("oracle id must be a name"))?.to_string();
                let inputs: Vec<Term> = inputs
                    .as_list()
                    .ok_or_else(|| syntax("oracle inputs must be a list"))?
                    .into_iter()
                    .cloned()
                    .collect();
                if inputs.is_empty() {
                    return Err(syntax("oracle needs at least the sentence input"));
                }
                let Term::Var(output) = output else {
                    return Err(syntax("oracle output must be a variable"));
                };
                let domain_goal = term_to_atom(goal).ok_or_else(|| syntax("oracle domain must be an atom"))?;
                let prompt = prompt.as_const().ok_or_else(|| syntax("oracle prompt must be a string"))?.to_string();
                Ok(ProbabilitySource::Oracle(OracleSpec { oracle_id, inputs, output, domain_goal, prompt }))
            }
            (other, _) => Err(GrammarError::UnknownProbabilityKeyword { line, col, keyword: other.to_string() }),
        },
        Term::Var(v) => Err(GrammarError::UnknownProbabilityKeyword { line, col, keyword: v.name.to_string() }),
    }
}

/// Parses grammar source text into a [`Grammar`].
pub fn parse_grammar_source(text: &str) -> Result<Grammar, GrammarError> {
    let mut rules = Vec::new();
    let mut facts = Vec::new();
    let mut next_var: u64 = 0;
    let mut branches: BTreeMap<String, usize> = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let toks = lex_line(raw, line)?;
        if toks.is_empty() {
            continue;
        }
        let mut p = LineParser { toks, pos: 0, line, line_len: raw.chars().count(), vars: HashMap::new(), next_var: &mut next_var };

        let first_col = p.col();
        let first = p.term()?;
        let mut prob = None;
        let head_term = if p.peek() == Some(&Tok::DoubleColon) {
            p.pos += 1;
            prob = Some(annotation(first, line, first_col, &mut branches)?);
            let col = p.col();
            (p.term()?, col)
        } else {
            (first, first_col)
        };
        let head = term_to_atom(head_term.0)
            .ok_or(GrammarError::Syntax { line, col: head_term.1, msg: "expected an atom".into() })?;

        if p.peek() != Some(&Tok::Arrow) {
            if prob.is_some() {
                return Err(p.error("annotated clause must be a rule (`-->`)"));
            }
            p.expect(Tok::Dot)?;
            if p.peek().is_some() {
                return Err(p.error("unexpected input after fact"));
            }
            if !head.is_ground() {
                return Err(GrammarError::NonGroundFact(head.to_string()));
            }
            facts.push(Fact(head));
            continue;
        }
        p.pos += 1;
        let body = p.body()?;
        if p.peek() == Some(&Tok::DoubleColon) {
            p.pos += 1;
            if prob.is_some() {
                return Err(p.error("a rule carries at most one probability annotation"));
            }
            let col = p.col();
            let t = p.term()?;
            prob = Some(annotation(t, line, col, &mut branches)?);
        }
        if p.peek() == Some(&Tok::Dot) {
            p.pos += 1;
        }
        if let Some(t) = p.peek() {
            return Err(p.error(format!("unexpected `{t}` at end of rule")));
        }
        rules.push(GrammarRule { head, body, prob: prob.unwrap_or(ProbabilitySource::Certain) });
    }
    Grammar::new(rules, facts)
}

/// Gives every variable of a rule a printable name that is unique within it.
fn printable_rule(rule: &GrammarRule) -> GrammarRule {
    let mut vars = rule.vars();
    if let ProbabilitySource::Oracle(spec) = &rule.prob {
        vars.push(spec.output.clone());
        spec.inputs.iter().for_each(|t| t.collect_vars(&mut vars));
        spec.domain_goal.collect_vars(&mut vars);
    }
    let mut seen = HashSet::new();
    vars.retain(|v| seen.insert(v.id));
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for v in &vars {
        *counts.entry(&v.name).or_default() += 1;
    }
    let needs_rename = |v: &Var| {
        v.name.is_empty()
            || counts[&*v.name] > 1 && &*v.name != "_"
            || !v.name.starts_with(|c: char| c.is_uppercase() || c == '_')
    };
    if !vars.iter().any(needs_rename) {
        return rule.clone();
    }
    let mut s = Substitution::new();
    let mut taken: HashSet<String> = vars.iter().map(|v| v.name.to_string()).collect();
    for v in &vars {
        if needs_rename(v) {
            let mut name = format!("V{}", v.id);
            while taken.contains(&name) {
                name.push('_');
            }
            taken.insert(name.clone());
            s.unify_in_place(&Term::Var(v.clone()), &Term::Var(Var::new(u64::MAX - v.id, &name)));
        }
    }
    let atom = |a: &Atom| s.apply_atom(a);
    GrammarRule {
        head: atom(&rule.head),
        body: rule
            .body
            .iter()
            .map(|b| match b {
                BodyItem::NonTerminal(a) => BodyItem::NonTerminal(atom(a)),
                BodyItem::Embedded(a) => BodyItem::Embedded(atom(a)),
                BodyItem::Terminals(ts) => BodyItem::Terminals(ts.iter().map(|t| s.apply(t)).collect()),
            })
            .collect(),
        prob: match &rule.prob {
            ProbabilitySource::Oracle(spec) => {
                let output = match s.apply(&Term::Var(spec.output.clone())) {
                    Term::Var(v) => v,
                    _ => unreachable!("renaming maps variables to variables"),
                };
                ProbabilitySource::Oracle(OracleSpec {
                    oracle_id: spec.oracle_id.clone(),
                    inputs: spec.inputs.iter().map(|t| s.apply(t)).collect(),
                    output,
                    domain_goal: atom(&spec.domain_goal),
                    prompt: spec.prompt.clone(),
                })
            }
            other => other.clone(),
        },
    }
}

fn write_name(f: &mut fmt::Formatter<'_>, s: &str) -> fmt::Result {
    let plain = s.starts_with(|c: char| c.is_ascii_lowercase())
        && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
    if plain {
        f.write_str(s)
    } else {
        write_quoted(f, s)
    }
}

pub(crate) fn write_rule(f: &mut fmt::Formatter<'_>, rule: &GrammarRule) -> fmt::Result {
    let rule = printable_rule(rule);
    match &rule.prob {
        ProbabilitySource::Static(p) => write!(f, "{p:?} :: ")?,
        ProbabilitySource::Learnable { group, .. } => {
            f.write_str("learnable(")?;
            write_name(f, group)?;
            f.write_str(") :: ")?;
        }
        _ => {}
    }
    write!(f, "{} -->", rule.head)?;
    for (i, item) in rule.body.iter().enumerate() {
        f.write_str(if i == 0 { " " } else { ", " })?;
        match item {
            BodyItem::NonTerminal(a) => write!(f, "{a}")?,
            BodyItem::Embedded(a) => write!(f, "{{{a}}}")?,
            BodyItem::Terminals(ts) => {
                f.write_str("[")?;
                for (j, t) in ts.iter().enumerate() {
                    if j > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{t}")?;
                }
                f.write_str("]")?;
            }
        }
    }
    if rule.body.is_empty() {
        f.write_str(" []")?;
    }
    if let ProbabilitySource::Oracle(spec) = &rule.prob {
        f.write_str(" :: oracle(")?;
        write_name(f, &spec.oracle_id)?;
        write!(f, ", {}, {}, {}, ", Term::list(spec.inputs.clone()), Term::Var(spec.output.clone()), spec.domain_goal)?;
        write_quoted(f, &spec.prompt)?;
        f.write_str(")")?;
    }
    Ok(())
}
