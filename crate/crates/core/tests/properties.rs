use std::collections::BTreeMap;

use dcg_core::circuit::compile;
use dcg_core::fixtures::{random_circuit, random_grammar, RandomGrammar};
use dcg_core::leaf::Params;
use dcg_core::oracle::OracleSession;
use dcg_core::resolver::{derive, derive_with, enumerate_derivations, greedy, replay, sample, DeriveOptions, Tokens};
use dcg_core::terms::{unify, Renaming, Substitution, Term, VarGen};
use dcg_core::trainer::{loss_nll, TrainingExample};
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::SeedableRng;

const MAX_DERIVATIONS: usize = 200;

fn term_strategy() -> impl Strategy<Value = Term> {
    let leaf = prop_oneof![
        Just(Term::constant("a")),
        Just(Term::constant("b")),
        (0u64..2).prop_map(|i| Term::var(i, &format!("X{i}"))),
    ];
    leaf.prop_recursive(1, 4, 2, |inner| {
        (inner.clone(), inner).prop_map(|(x, y)| Term::compound("f", vec![x, y]))
    })
}

fn ground_terms(depth: usize) -> Vec<Term> {
    let mut out = vec![Term::constant("a"), Term::constant("b")];
    for _ in 0..depth {
        let prev = out.clone();
        for x in &prev {
            for y in &prev {
                let t = Term::compound("f", vec![x.clone(), y.clone()]);
                if !out.contains(&t) {
                    out.push(t);
                }
            }
        }
    }
    out
}

fn brute_unifiable(a: &Term, b: &Term) -> bool {
    let domain = ground_terms(2);
    for x0 in &domain {
        for x1 in &domain {
            let mut s = Substitution::new();
            s.unify_in_place(&Term::var(0, "X0"), x0);
            s.unify_in_place(&Term::var(1, "X1"), x1);
            if s.apply(a) == s.apply(b) {
                return true;
            }
        }
    }
    false
}

/// Tokens with every variable written as `_`.
fn shape(tokens: &[Term]) -> String {
    fn go(t: &Term, out: &mut String) {
        match t {
            Term::Var(_) => out.push('_'),
            Term::Const(c) => out.push_str(c),
            Term::Compound(f, args) => {
                out.push_str(f);
                out.push('(');
                for a in args {
                    go(a, out);
                    out.push(',');
                }
                out.push(')');
            }
        }
    }
    let mut s = String::new();
    for t in tokens {
        go(t, &mut s);
        s.push(' ');
    }
    s
}

fn grammar(seed: u64) -> RandomGrammar {
    random_grammar(&mut StdRng::seed_from_u64(seed), MAX_DERIVATIONS)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn unification_agrees_with_ground_search(a in term_strategy(), b in term_strategy()) {
        let mgu = unify(&a, &b, &Substitution::new());
        prop_assert_eq!(mgu.is_some(), brute_unifiable(&a, &b));
        if let Some(s) = mgu {
            prop_assert_eq!(s.apply(&a), s.apply(&b));
        }
    }

    #[test]
    fn renaming_preserves_structure(t in term_strategy()) {
        let gen = VarGen::starting_at(100);
        let mut r = Renaming::default();
        let renamed = r.term(&t, &gen);
        let mut old = Vec::new();
        let mut new = Vec::new();
        t.collect_vars(&mut old);
        renamed.collect_vars(&mut new);
        prop_assert_eq!(old.len(), new.len());
        let mut back = BTreeMap::new();
        for (o, n) in old.iter().zip(&new) {
            prop_assert!(n.id >= 100);
            prop_assert_eq!(*back.entry(n.id).or_insert(o.id), o.id);
        }
        // The renaming is a bijection, so unifying one way yields a variant.
        let s = unify(&t, &renamed, &Substitution::new()).expect("variants unify");
        prop_assert_eq!(s.apply(&t), s.apply(&renamed));
        // Renaming again with the same map is stable.
        prop_assert_eq!(r.term(&t, &gen), renamed);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn forest_matches_naive_enumeration(seed in any::<u64>()) {
        let rg = grammar(seed);
        let naive = enumerate_derivations(&rg.goal, &rg.grammar, MAX_DERIVATIONS).unwrap();
        let forest = derive(&rg.goal, &rg.grammar).unwrap();
        let (tabled, truncated) = forest.derivations(MAX_DERIVATIONS + 1);
        prop_assert!(!truncated);
        prop_assert_eq!(forest.count_derivations() as usize, tabled.len());
        let mut a: Vec<(String, String)> =
            naive.derivations.iter().map(|(d, t)| (d.signature(), shape(t))).collect();
        let mut b: Vec<(String, String)> = tabled.iter().map(|(d, t)| (d.signature(), shape(t))).collect();
        a.sort();
        b.sort();
        prop_assert_eq!(a, b, "{}", rg.source);
    }

    #[test]
    fn tabling_does_not_change_the_result(seed in any::<u64>()) {
        let rg = grammar(seed);
        let on = derive(&rg.goal, &rg.grammar).unwrap();
        let off = derive_with(&rg.goal, &rg.grammar, DeriveOptions { tabling: false, ..Default::default() }).unwrap();
        prop_assert_eq!(on.count_derivations(), off.count_derivations());
        let session = OracleSession::new(&rg.registry);
        let params = Params::new(&rg.grammar.learnable_groups, Some(&session));
        let (c_on, c_off) = (compile(&on), compile(&off));
        let v_on = c_on.sum_product(&c_on.leaf_values(&params).unwrap()).root_value(&c_on);
        let v_off = c_off.sum_product(&c_off.leaf_values(&params).unwrap()).root_value(&c_off);
        prop_assert!((v_on - v_off).abs() <= 1e-12 * v_on.max(1.0));
    }

    #[test]
    fn semirings_match_brute_force_over_derivations(seed in any::<u64>()) {
        let rg = grammar(seed);
        let session = OracleSession::new(&rg.registry);
        let params = Params::new(&rg.grammar.learnable_groups, Some(&session));
        let naive = enumerate_derivations(&rg.goal, &rg.grammar, MAX_DERIVATIONS).unwrap();
        let probs: Vec<f64> = naive.derivations.iter().map(|(d, _)| d.probability(&params).unwrap()).collect();
        let total: f64 = probs.iter().sum();
        let best = probs.iter().cloned().fold(0.0, f64::max);

        let forest = derive(&rg.goal, &rg.grammar).unwrap();
        let c = compile(&forest);
        let vals = c.leaf_values(&params).unwrap();
        let sum = c.sum_product(&vals).root_value(&c);
        prop_assert!((sum - total).abs() <= 1e-9 * total.max(1e-300), "{sum} vs {total}");

        let found = c.best(&forest, &vals).expect("derivable");
        prop_assert!((found.probability - best).abs() <= 1e-9 * best);
        let recomputed = found.derivation.probability(&params).unwrap();
        prop_assert!((recomputed - best).abs() <= 1e-9 * best);

        // A greedy walk never beats the exact optimum.
        if let Some(g) = greedy(&rg.goal, &rg.grammar, &params).unwrap() {
            prop_assert!(g.probability <= best * (1.0 + 1e-9));
        }
    }

    #[test]
    fn replay_and_sample_stay_inside_the_language(seed in any::<u64>()) {
        let rg = grammar(seed);
        let naive = enumerate_derivations(&rg.goal, &rg.grammar, MAX_DERIVATIONS).unwrap();
        for (d, t) in &naive.derivations {
            let again = replay(&rg.goal, &rg.grammar, d).unwrap().expect("replayable");
            prop_assert_eq!(shape(&again), shape(t));
        }
        let sigs: Vec<String> = naive.derivations.iter().map(|(d, _)| d.signature()).collect();
        let mut rng = StdRng::seed_from_u64(seed ^ 0x5eed);
        for _ in 0..5 {
            let (d, _) = sample(&rg.goal, &rg.grammar, &mut rng).unwrap().expect("derivable");
            prop_assert!(sigs.contains(&d.signature()));
        }
    }

    #[test]
    fn learnable_gradients_match_finite_differences(seed in any::<u64>()) {
        let rg = grammar(seed);
        prop_assume!(matches!(rg.goal.tokens, Tokens::Known(_)));
        prop_assume!(!rg.grammar.learnable_groups.is_empty());
        let ex = TrainingExample::new(rg.goal.clone());
        let (_, grads) = loss_nll(&ex, &rg.grammar, &rg.registry).unwrap();
        let h = 1e-6;
        for (group, w) in &rg.grammar.learnable_groups {
            for j in 0..w.len() {
                let mut plus = rg.grammar.clone();
                plus.learnable_groups.get_mut(group).unwrap()[j] += h;
                let mut minus = rg.grammar.clone();
                minus.learnable_groups.get_mut(group).unwrap()[j] -= h;
                let fd = (loss_nll(&ex, &plus, &rg.registry).unwrap().0
                    - loss_nll(&ex, &minus, &rg.registry).unwrap().0)
                    / (2.0 * h);
                let an = grads.learnable.get(group).map_or(0.0, |g| g[j]);
                prop_assert!((fd - an).abs() <= 1e-5 * (1.0 + fd.abs()), "{group}[{j}]: {an} vs {fd}");
            }
        }
    }

    #[test]
    fn circuit_adjoints_match_finite_differences(seed in any::<u64>()) {
        let (c, vals) = random_circuit(&mut StdRng::seed_from_u64(seed));
        let grads = c.backward(&vals);
        let h = 1e-6;
        for i in 0..vals.len() {
            let mut up = vals.clone();
            up[i] += h;
            let mut down = vals.clone();
            down[i] -= h;
            let fd = (c.sum_product(&up).root_value(&c) - c.sum_product(&down).root_value(&c)) / (2.0 * h);
            prop_assert!((fd - grads[i]).abs() <= 1e-5 * (1.0 + fd.abs()), "leaf {i}: {} vs {fd}", grads[i]);
        }
        let root = c.sum_product(&vals).root_value(&c);
        let logs = c.backward_log(&vals);
        for i in 0..vals.len() {
            prop_assert!((logs[i] - grads[i] / root).abs() <= 1e-9 * (1.0 + logs[i].abs()));
        }
    }
}
