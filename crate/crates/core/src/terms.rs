//! Logical terms, atoms and substitutions.
//!
//! Variables are identified by an integer id; the name is carried only for
//! display. Substitutions store every binding fully dereferenced, so applying a
//! substitution once is the same as applying it any number of times.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

pub type Symbol = Arc<str>;

pub fn sym(s: &str) -> Symbol {
    Arc::from(s)
}

/// Functor used for list cells, with `[]` as the empty list constant.
pub const LIST_CONS: &str = ".";
pub const LIST_NIL: &str = "[]";

#[derive(Clone, Debug)]
pub struct Var {
    pub id: u64,
    pub name: Symbol,
}

impl Var {
    pub fn new(id: u64, name: &str) -> Self {
        Var { id, name: sym(name) }
    }
}

impl PartialEq for Var {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id
    }
}

impl Eq for Var {}

impl Hash for Var {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.id.hash(state)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Term {
    Var(Var),
    Const(Symbol),
    Compound(Symbol, Vec<Term>),
}

impl Term {
    pub fn var(id: u64, name: &str) -> Term {
        Term::Var(Var::new(id, name))
    }

    pub fn constant(s: &str) -> Term {
        Term::Const(sym(s))
    }

    /// Builds a compound term. Panics on an empty functor or an empty
    /// argument list; zero-arity symbols are constants.
    pub fn compound(functor: &str, args: Vec<Term>) -> Term {
        assert!(!functor.is_empty(), "compound functor must be nonempty");
        assert!(!args.is_empty(), "a zero-arity compound is a constant");
        Term::Compound(sym(functor), args)
    }

    pub fn list(items: Vec<Term>) -> Term {
        items
            .into_iter()
            .rev()
            .fold(Term::constant(LIST_NIL), |tail, head| {
                Term::Compound(sym(LIST_CONS), vec![head, tail])
            })
    }

    /// Returns the elements of a proper list term.
    pub fn as_list(&self) -> Option<Vec<&Term>> {
        let mut out = Vec::new();
        let mut cur = self;
        loop {
            match cur {
                Term::Const(c) if &**c == LIST_NIL => return Some(out),
                Term::Compound(f, args) if &**f == LIST_CONS && args.len() == 2 => {
                    out.push(&args[0]);
                    cur = &args[1];
                }
                _ => return None,
            }
        }
    }

    pub fn as_const(&self) -> Option<&str> {
        match self {
            Term::Const(c) => Some(c),
            _ => None,
        }
    }

    pub fn is_ground(&self) -> bool {
        match self {
            Term::Var(_) => false,
            Term::Const(_) => true,
            Term::Compound(_, args) => args.iter().all(Term::is_ground),
        }
    }

    pub fn occurs(&self, id: u64) -> bool {
        match self {
            Term::Var(v) => v.id == id,
            Term::Const(_) => false,
            Term::Compound(_, args) => args.iter().any(|a| a.occurs(id)),
        }
    }

    /// Appends the variables of the term in first-occurrence order.
    pub fn collect_vars(&self, out: &mut Vec<Var>) {
        match self {
            Term::Var(v) => {
                if !out.contains(v) {
                    out.push(v.clone());
                }
            }
            Term::Const(_) => {}
            Term::Compound(_, args) => args.iter().for_each(|a| a.collect_vars(out)),
        }
    }

    pub fn max_var_id(&self) -> Option<u64> {
        match self {
            Term::Var(v) => Some(v.id),
            Term::Const(_) => None,
            Term::Compound(_, args) => args.iter().filter_map(Term::max_var_id).max(),
        }
    }

    fn replace_var(&self, id: u64, with: &Term) -> Term {
        match self {
            Term::Var(v) if v.id == id => with.clone(),
            Term::Var(_) | Term::Const(_) => self.clone(),
            Term::Compound(f, args) => {
                Term::Compound(f.clone(), args.iter().map(|a| a.replace_var(id, with)).collect())
            }
        }
    }
}

fn is_plain_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_lowercase())
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Writes a constant so that the grammar reader parses it back to the same symbol.
pub(crate) fn write_quoted(f: &mut fmt::Formatter<'_>, s: &str) -> fmt::Result {
    f.write_str("\"")?;
    for c in s.chars() {
        match c {
            '"' => f.write_str("\\\"")?,
            '\\' => f.write_str("\\\\")?,
            '\n' => f.write_str("\\n")?,
            '\t' => f.write_str("\\t")?,
            c => write!(f, "{c}")?,
        }
    }
    f.write_str("\"")
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(items) = self.as_list() {
            f.write_str("[")?;
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    f.write_str(", ")?;
                }
                write!(f, "{item}")?;
            }
            return f.write_str("]");
        }
        match self {
            Term::Var(v) => {
                if v.name.is_empty() {
                    write!(f, "_G{}", v.id)
                } else {
                    f.write_str(&v.name)
                }
            }
            Term::Const(c) => write_quoted(f, c),
            Term::Compound(functor, args) => {
                if is_plain_identifier(functor) {
                    f.write_str(functor)?;
                } else {
                    write_quoted(f, functor)?;
                }
                f.write_str("(")?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}

/// A predicate applied to arguments. Identified by `(predicate, arity)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Atom {
    pub predicate: Symbol,
    pub args: Vec<Term>,
}

impl Atom {
    pub fn new(predicate: &str, args: Vec<Term>) -> Self {
        assert!(!predicate.is_empty(), "predicate must be nonempty");
        Atom { predicate: sym(predicate), args }
    }

    pub fn arity(&self) -> usize {
        self.args.len()
    }

    pub fn key(&self) -> (Symbol, usize) {
        (self.predicate.clone(), self.args.len())
    }

    pub fn is_ground(&self) -> bool {
        self.args.iter().all(Term::is_ground)
    }

    pub fn collect_vars(&self, out: &mut Vec<Var>) {
        self.args.iter().for_each(|a| a.collect_vars(out));
    }

    pub fn max_var_id(&self) -> Option<u64> {
        self.args.iter().filter_map(Term::max_var_id).max()
    }

    /// Renames variables to `0, 1, ..` in first-occurrence order. Two atoms
    /// are variants of each other exactly when their canonical forms are equal.
    pub fn canonical(&self) -> Atom {
        let mut vars = Vec::new();
        self.collect_vars(&mut vars);
        let mapping: HashMap<u64, Term> = vars
            .iter()
            .enumerate()
            .map(|(i, v)| (v.id, Term::var(i as u64, "")))
            .collect();
        Atom {
            predicate: self.predicate.clone(),
            args: self.args.iter().map(|a| substitute_ids(a, &mapping)).collect(),
        }
    }
}

fn substitute_ids(t: &Term, mapping: &HashMap<u64, Term>) -> Term {
    match t {
        Term::Var(v) => mapping.get(&v.id).cloned().unwrap_or_else(|| t.clone()),
        Term::Const(_) => t.clone(),
        Term::Compound(f, args) => {
            Term::Compound(f.clone(), args.iter().map(|a| substitute_ids(a, mapping)).collect())
        }
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if is_plain_identifier(&self.predicate) {
            f.write_str(&self.predicate)?;
        } else {
            write_quoted(f, &self.predicate)?;
        }
        if self.args.is_empty() {
            return Ok(());
        }
        f.write_str("(")?;
        for (i, a) in self.args.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{a}")?;
        }
        f.write_str(")")
    }
}

/// Idempotent, acyclic variable bindings.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Substitution {
    bindings: BTreeMap<u64, Term>,
}

impl Substitution {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.bindings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bindings.is_empty()
    }

    pub fn get(&self, id: u64) -> Option<&Term> {
        self.bindings.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, &Term)> {
        self.bindings.iter().map(|(k, v)| (*k, v))
    }

    pub fn apply(&self, t: &Term) -> Term {
        if self.bindings.is_empty() {
            return t.clone();
        }
        match t {
            Term::Var(v) => self.bindings.get(&v.id).cloned().unwrap_or_else(|| t.clone()),
            Term::Const(_) => t.clone(),
            Term::Compound(f, args) => {
                Term::Compound(f.clone(), args.iter().map(|a| self.apply(a)).collect())
            }
        }
    }

    pub fn apply_atom(&self, a: &Atom) -> Atom {
        Atom {
            predicate: a.predicate.clone(),
            args: a.args.iter().map(|t| self.apply(t)).collect(),
        }
    }

    /// Binds `var` to `term`, which must already be fully applied. Fails on
    /// the occurs check. Existing bindings mentioning `var` are rewritten so
    /// the substitution stays idempotent.
    fn bind(&mut self, var: &Var, term: Term) -> bool {
        if let Term::Var(v) = &term {
            if v.id == var.id {
                return true;
            }
        }
        if term.occurs(var.id) {
            return false;
        }
        for value in self.bindings.values_mut() {
            if value.occurs(var.id) {
                *value = value.replace_var(var.id, &term);
            }
        }
        self.bindings.insert(var.id, term);
        true
    }

    /// Extends `self` in place with a most general unifier of `a` and `b`.
    /// On failure `self` may hold a partial extension and should be dropped.
    pub fn unify_in_place(&mut self, a: &Term, b: &Term) -> bool {
        let a = self.apply(a);
        let b = self.apply(b);
        match (&a, &b) {
            (Term::Var(x), Term::Var(y)) if x.id == y.id => true,
            (Term::Var(x), _) => self.bind(x, b.clone()),
            (_, Term::Var(y)) => self.bind(y, a.clone()),
            (Term::Const(x), Term::Const(y)) => x == y,
            (Term::Compound(f, xs), Term::Compound(g, ys)) => {
                if f != g || xs.len() != ys.len() {
                    return false;
                }
                xs.iter().zip(ys.iter()).all(|(x, y)| self.unify_in_place(x, y))
            }
            _ => false,
        }
    }

    pub fn unify_atoms_in_place(&mut self, a: &Atom, b: &Atom) -> bool {
        a.predicate == b.predicate
            && a.args.len() == b.args.len()
            && a.args.iter().zip(b.args.iter()).all(|(x, y)| self.unify_in_place(x, y))
    }
}

impl fmt::Display for Substitution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, (id, t)) in self.bindings.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "_G{id} -> {t}")?;
        }
        f.write_str("}")
    }
}

/// Most general unifier of `t1` and `t2` extending `s`, or `None`.
pub fn unify(t1: &Term, t2: &Term, s: &Substitution) -> Option<Substitution> {
    let mut out = s.clone();
    out.unify_in_place(t1, t2).then_some(out)
}

pub fn unify_atoms(a: &Atom, b: &Atom, s: &Substitution) -> Option<Substitution> {
    let mut out = s.clone();
    out.unify_atoms_in_place(a, b).then_some(out)
}

pub fn apply_substitution(t: &Term, s: &Substitution) -> Term {
    s.apply(t)
}

/// Source of fresh variable ids. Shared counters are safe across threads.
#[derive(Debug, Default)]
pub struct VarGen {
    next: AtomicU64,
}

impl VarGen {
    pub fn starting_at(first: u64) -> Self {
        VarGen { next: AtomicU64::new(first) }
    }

    pub fn fresh(&self, name: &str) -> Var {
        Var::new(self.next.fetch_add(1, Ordering::Relaxed), name)
    }
}

/// Replaces every variable in `terms` by a fresh one, consistently across the
/// whole slice.
pub fn rename_apart(terms: &[Term], gen: &VarGen) -> Vec<Term> {
    let mut renaming = Renaming::default();
    terms.iter().map(|t| renaming.term(t, gen)).collect()
}

/// Consistent variable renaming, reusable across several terms and atoms.
#[derive(Debug, Default)]
pub struct Renaming {
    map: HashMap<u64, Var>,
}

impl Renaming {
    pub fn term(&mut self, t: &Term, gen: &VarGen) -> Term {
        match t {
            Term::Var(v) => Term::Var(
                self.map
                    .entry(v.id)
                    .or_insert_with(|| gen.fresh(&v.name))
                    .clone(),
            ),
            Term::Const(_) => t.clone(),
            Term::Compound(f, args) => {
                Term::Compound(f.clone(), args.iter().map(|a| self.term(a, gen)).collect())
            }
        }
    }

    pub fn atom(&mut self, a: &Atom, gen: &VarGen) -> Atom {
        Atom {
            predicate: a.predicate.clone(),
            args: a.args.iter().map(|t| self.term(t, gen)).collect(),
        }
    }

    pub fn var(&mut self, v: &Var, gen: &VarGen) -> Var {
        self.map.entry(v.id).or_insert_with(|| gen.fresh(&v.name)).clone()
    }
}
