//! Tabled resolution into a shared derivation forest.
//!
//! A table is one call (up to variable renaming) at one input position;
//! its answers are the distinct instantiated calls with their end positions,
//! and every answer keeps the alternative rule applications that prove it.
//! When the input is unknown, positions are dropped from the keys and each
//! alternative carries the terminals it emits.

use std::collections::HashMap;

use crate::grammar::{BodyItem, Grammar};
use crate::leaf::Leaf;
use crate::terms::{Atom, Renaming, Substitution, Term, VarGen};

use super::{check_defined, match_terminals, rule_instances, Derivation, Goal, ResolveError, RuleInstance, Step, DEFAULT_MAX_DEPTH};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DeriveOptions {
    /// Share the answers of variant calls at the same position.
    pub tabling: bool,
    pub max_depth: usize,
}

impl Default for DeriveOptions {
    fn default() -> Self {
        DeriveOptions { tabling: true, max_depth: DEFAULT_MAX_DEPTH }
    }
}

#[derive(Clone, Debug)]
pub enum AltItem {
    Tokens(Vec<Term>),
    Child { table: usize, answer: usize, call: Atom },
}

/// One rule application proving an answer. Terms live in the alternative's
/// own variable space.
#[derive(Clone, Debug)]
pub struct Alt {
    pub rule: usize,
    pub head: Atom,
    pub choice: Option<usize>,
    pub facts: Vec<usize>,
    pub leaf: Leaf,
    pub items: Vec<AltItem>,
}

#[derive(Clone, Debug)]
pub struct Answer {
    /// Canonical instantiated call.
    pub atom: Atom,
    pub end: Option<usize>,
    pub alts: Vec<Alt>,
}

#[derive(Clone, Debug)]
pub struct Table {
    /// Canonical call.
    pub call: Atom,
    pub start: Option<usize>,
    pub answers: Vec<Answer>,
    index: HashMap<(Atom, Option<usize>), usize>,
    complete: bool,
}

#[derive(Debug)]
pub struct DerivationForest {
    goal: Goal,
    tables: Vec<Table>,
    root: usize,
    roots: Vec<usize>,
    gen: VarGen,
}

pub fn derive(goal: &Goal, g: &Grammar) -> Result<DerivationForest, ResolveError> {
    derive_with(goal, g, DeriveOptions::default())
}

pub fn derive_with(goal: &Goal, g: &Grammar, opts: DeriveOptions) -> Result<DerivationForest, ResolveError> {
    let mut first = g.first_free_var_id();
    if let Some(m) = goal.atom.max_var_id() {
        first = first.max(m + 1);
    }
    let mut d = Deriver {
        g,
        input: goal.known_tokens(),
        opts,
        gen: VarGen::starting_at(first),
        tables: Vec::new(),
        memo: HashMap::new(),
    };
    let start = d.input.map(|_| 0);
    let root = d.solve(&goal.atom, start, 0)?;
    let end = d.input.map(<[String]>::len);
    let roots = (0..d.tables[root].answers.len())
        .filter(|&a| d.tables[root].answers[a].end == end)
        .collect();
    let Deriver { tables, gen, .. } = d;
    Ok(DerivationForest { goal: goal.clone(), tables, root, roots, gen })
}

struct Deriver<'g> {
    g: &'g Grammar,
    input: Option<&'g [String]>,
    opts: DeriveOptions,
    gen: VarGen,
    tables: Vec<Table>,
    memo: HashMap<(Atom, Option<usize>), usize>,
}

struct Partial {
    items: Vec<AltItem>,
    facts: Vec<usize>,
}

impl Deriver<'_> {
    fn solve(&mut self, call: &Atom, start: Option<usize>, depth: usize) -> Result<usize, ResolveError> {
        if depth > self.opts.max_depth {
            return Err(ResolveError::DepthLimit {
                predicate: call.predicate.to_string(),
                limit: self.opts.max_depth,
            });
        }
        let canon = call.canonical();
        if self.opts.tabling {
            if let Some(&t) = self.memo.get(&(canon.clone(), start)) {
                if !self.tables[t].complete {
                    return Err(ResolveError::Recursion { predicate: call.predicate.to_string() });
                }
                return Ok(t);
            }
        }
        check_defined(self.g, call)?;
        let t = self.tables.len();
        self.tables.push(Table {
            call: canon.clone(),
            start,
            answers: Vec::new(),
            index: HashMap::new(),
            complete: false,
        });
        if self.opts.tabling {
            self.memo.insert((canon.clone(), start), t);
        }
        let local = Renaming::default().atom(&canon, &self.gen);
        for &rule in self.g.rules_for(&call.predicate, call.arity()) {
            for inst in rule_instances(self.g, rule, &local, &Substitution::new(), &self.gen)? {
                let mut partial = Partial { items: Vec::new(), facts: Vec::new() };
                self.expand(t, &inst, 0, inst.s.clone(), start, &mut partial, depth)?;
            }
        }
        self.tables[t].complete = true;
        Ok(t)
    }

    #[allow(clippy::too_many_arguments)]
    fn expand(
        &mut self,
        t: usize,
        inst: &RuleInstance,
        k: usize,
        s: Substitution,
        pos: Option<usize>,
        partial: &mut Partial,
        depth: usize,
    ) -> Result<(), ResolveError> {
        let Some(item) = inst.body.get(k) else {
            self.add_answer(t, inst, &s, pos, partial);
            return Ok(());
        };
        match item {
            BodyItem::Terminals(ts) => {
                let mut s2 = s;
                let Some(next) = match_terminals(ts, self.input, pos.unwrap_or(0), &mut s2) else {
                    return Ok(());
                };
                partial.items.push(AltItem::Tokens(ts.clone()));
                self.expand(t, inst, k + 1, s2, pos.map(|_| next), partial, depth)?;
                partial.items.pop();
            }
            BodyItem::Embedded(goal) => {
                for (fact, s2) in self.g.solve_facts_indexed(goal, &s) {
                    partial.facts.push(fact);
                    self.expand(t, inst, k + 1, s2, pos, partial, depth)?;
                    partial.facts.pop();
                }
            }
            BodyItem::NonTerminal(a) => {
                let call = s.apply_atom(a);
                let child = self.solve(&call, pos, depth + 1)?;
                let answers: Vec<(Atom, Option<usize>)> = self.tables[child]
                    .answers
                    .iter()
                    .map(|ans| (ans.atom.clone(), ans.end))
                    .collect();
                for (ai, (atom, end)) in answers.into_iter().enumerate() {
                    let renamed = Renaming::default().atom(&atom, &self.gen);
                    let mut s2 = s.clone();
                    if !s2.unify_atoms_in_place(&call, &renamed) {
                        continue;
                    }
                    partial.items.push(AltItem::Child { table: child, answer: ai, call: call.clone() });
                    self.expand(t, inst, k + 1, s2, end, partial, depth)?;
                    partial.items.pop();
                }
            }
        }
        Ok(())
    }

    fn add_answer(&mut self, t: usize, inst: &RuleInstance, s: &Substitution, end: Option<usize>, partial: &Partial) {
        let head = s.apply_atom(&inst.head);
        let items = partial
            .items
            .iter()
            .map(|item| match item {
                AltItem::Tokens(ts) => AltItem::Tokens(ts.iter().map(|x| s.apply(x)).collect()),
                AltItem::Child { table, answer, call } => {
                    AltItem::Child { table: *table, answer: *answer, call: s.apply_atom(call) }
                }
            })
            .collect();
        let alt = Alt {
            rule: inst.rule,
            head: head.clone(),
            choice: inst.choice,
            facts: partial.facts.clone(),
            leaf: inst.leaf.clone(),
            items,
        };
        let table = &mut self.tables[t];
        let key = (head.canonical(), end);
        let a = match table.index.get(&key) {
            Some(&a) => a,
            None => {
                table.answers.push(Answer { atom: key.0.clone(), end, alts: Vec::new() });
                table.index.insert(key, table.answers.len() - 1);
                table.answers.len() - 1
            }
        };
        table.answers[a].alts.push(alt);
    }
}

enum Work {
    Answer { table: usize, answer: usize, instance: Atom },
    Tokens(Vec<Term>),
}

impl DerivationForest {
    pub fn goal(&self) -> &Goal {
        &self.goal
    }

    pub fn tables(&self) -> &[Table] {
        &self.tables
    }

    pub fn root_table(&self) -> usize {
        self.root
    }

    /// Answers of the root table that cover the whole input.
    pub fn root_answers(&self) -> &[usize] {
        &self.roots
    }

    pub fn is_empty(&self) -> bool {
        self.roots.is_empty()
    }

    /// The instantiated goals proved, one per root answer.
    pub fn answer_atoms(&self) -> Vec<Atom> {
        self.roots.iter().map(|&a| self.tables[self.root].answers[a].atom.clone()).collect()
    }

    /// Number of distinct derivations, saturating at `u128::MAX`.
    pub fn count_derivations(&self) -> u128 {
        let mut memo: HashMap<(usize, usize), u128> = HashMap::new();
        self.roots
            .iter()
            .fold(0u128, |acc, &a| acc.saturating_add(self.count(self.root, a, &mut memo)))
    }

    fn count(&self, t: usize, a: usize, memo: &mut HashMap<(usize, usize), u128>) -> u128 {
        if let Some(&c) = memo.get(&(t, a)) {
            return c;
        }
        let mut total: u128 = 0;
        for alt in &self.tables[t].answers[a].alts {
            let mut prod: u128 = 1;
            for item in &alt.items {
                if let AltItem::Child { table, answer, .. } = item {
                    prod = prod.saturating_mul(self.count(*table, *answer, memo));
                }
            }
            total = total.saturating_add(prod);
        }
        memo.insert((t, a), total);
        total
    }

    /// Visits derivations (with their token sequences) in forest order.
    /// `choose(table, answer)` may pin the alternative used for an answer
    /// and `pick_root` the root answer. Stops when `visit` returns false.
    pub fn walk(
        &self,
        pick_root: Option<usize>,
        choose: &dyn Fn(usize, usize) -> Option<usize>,
        visit: &mut dyn FnMut(Derivation, Vec<Term>) -> bool,
    ) -> bool {
        let roots: Vec<usize> = match pick_root {
            Some(r) => vec![r],
            None => self.roots.clone(),
        };
        for a in roots {
            let mut work = vec![Work::Answer { table: self.root, answer: a, instance: self.goal.atom.clone() }];
            if !self.walk_rec(&mut work, Substitution::new(), &mut Vec::new(), &mut Vec::new(), choose, visit) {
                return false;
            }
        }
        true
    }

    fn walk_rec(
        &self,
        work: &mut Vec<Work>,
        s: Substitution,
        steps: &mut Vec<Step>,
        toks: &mut Vec<Term>,
        choose: &dyn Fn(usize, usize) -> Option<usize>,
        visit: &mut dyn FnMut(Derivation, Vec<Term>) -> bool,
    ) -> bool {
        let Some(item) = work.pop() else {
            let steps = steps
                .iter()
                .map(|st| Step { head: s.apply_atom(&st.head), ..st.clone() })
                .collect();
            return visit(Derivation { steps }, toks.iter().map(|t| s.apply(t)).collect());
        };
        let cont = match &item {
            Work::Tokens(ts) => {
                let n = toks.len();
                toks.extend(ts.iter().cloned());
                let c = self.walk_rec(work, s, steps, toks, choose, visit);
                toks.truncate(n);
                c
            }
            Work::Answer { table, answer, instance } => {
                let alts = &self.tables[*table].answers[*answer].alts;
                let range = match choose(*table, *answer) {
                    Some(i) => i..i + 1,
                    None => 0..alts.len(),
                };
                let mut cont = true;
                for alt in &alts[range] {
                    let mut ren = Renaming::default();
                    let head = ren.atom(&alt.head, &self.gen);
                    let mut s2 = s.clone();
                    let unified = s2.unify_atoms_in_place(&head, instance);
                    debug_assert!(unified, "answer instance must match its alternative");
                    if !unified {
                        continue;
                    }
                    let depth = work.len();
                    for it in alt.items.iter().rev() {
                        work.push(match it {
                            AltItem::Tokens(ts) => Work::Tokens(ts.iter().map(|t| ren.term(t, &self.gen)).collect()),
                            AltItem::Child { table, answer, call } => Work::Answer {
                                table: *table,
                                answer: *answer,
                                instance: ren.atom(call, &self.gen),
                            },
                        });
                    }
                    steps.push(Step {
                        rule: alt.rule,
                        head,
                        choice: alt.choice,
                        facts: alt.facts.clone(),
                        leaf: alt.leaf.clone(),
                    });
                    cont = self.walk_rec(work, s2, steps, toks, choose, visit);
                    steps.pop();
                    work.truncate(depth);
                    if !cont {
                        break;
                    }
                }
                cont
            }
        };
        work.push(item);
        cont
    }

    /// All derivations, up to `max`; the flag is set when more exist.
    pub fn derivations(&self, max: usize) -> (Vec<(Derivation, Vec<Term>)>, bool) {
        let mut out = Vec::new();
        let mut truncated = false;
        self.walk(None, &|_, _| None, &mut |d, t| {
            if out.len() == max {
                truncated = true;
                return false;
            }
            out.push((d, t));
            true
        });
        (out, truncated)
    }

    /// The derivation fixed by one alternative per answer.
    pub fn reconstruct(
        &self,
        root: usize,
        choose: &dyn Fn(usize, usize) -> usize,
    ) -> Option<(Derivation, Vec<Term>)> {
        let mut found = None;
        self.walk(Some(root), &|t, a| Some(choose(t, a)), &mut |d, t| {
            found = Some((d, t));
            false
        });
        found
    }
}
