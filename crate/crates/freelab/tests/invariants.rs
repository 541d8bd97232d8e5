use freelab::coeffs::CoefficientFamily;
use freelab::freegroup::ReducedWord;
use freelab::nccs::{q_factors, random_open_family, random_partition};
use freelab::rng::seeded;
use freelab::star_ops::{haagerup_upper, norm_bracket, truncated_norm_lower, BracketBudget};
use freelab::weingarten::{
    all_perms, compose, inverse, is_balanced, random_balanced_spec, random_unbalanced_spec, unitary_entry_expectation, wg, Group,
};
use num::Zero;
use proptest::prelude::*;

fn letters(d: usize) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1..=2 * d, 0..12)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn product_inverse_reverses(a in letters(3), b in letters(3)) {
        let x = ReducedWord::reduce(3, &a).unwrap();
        let y = ReducedWord::reduce(3, &b).unwrap();
        let xy = x.concat_reduce(&y).unwrap();
        prop_assert_eq!(xy.inverse(), y.inverse().concat_reduce(&x.inverse()).unwrap());
        prop_assert!(xy.len() <= x.len() + y.len());
        prop_assert_eq!((xy.len() + x.len() + y.len()) % 2, 0);
        prop_assert!(x.concat_reduce(&x.inverse()).unwrap().is_unit());
    }

    #[test]
    fn truncations_sit_below_haagerup(seed in any::<u64>(), d in 2usize..=3, n in 1usize..=2) {
        let fam = CoefficientFamily::random_selfadjoint(d, n, &mut seeded(seed));
        let upper = haagerup_upper(&fam, 8).unwrap();
        let mut last = 0.0;
        for radius in 1..=3 {
            let lower = truncated_norm_lower(&fam, radius).unwrap();
            prop_assert!(lower >= last - 1e-12);
            prop_assert!(lower <= upper * (1.0 + 1e-10));
            last = lower;
        }
    }

    #[test]
    fn pair_bound_on_open_families(seed in any::<u64>()) {
        let mut rng = seeded(seed);
        let pi = random_partition(&mut rng, 5, 3);
        let sizes: Vec<usize> = (0..pi.k()).map(|l| 2 + l % 2).collect();
        let fam = random_open_family(&mut rng, &pi, &sizes, 2);
        let rep = q_factors(&fam, &pi).unwrap();
        prop_assert!(rep.pass, "norm {} product {}", rep.norm, rep.product);
    }

    #[test]
    fn unbalanced_entries_vanish(seed in any::<u64>(), k in 1usize..=3) {
        let mut rng = seeded(seed);
        let spec = random_unbalanced_spec(&mut rng, k, 2, 3);
        prop_assert!(!is_balanced(&spec, Group::Unitary));
        prop_assert!(unitary_entry_expectation(&spec, 4).unwrap().is_zero());
        let spec = random_balanced_spec(&mut rng, k, 2, 3);
        prop_assert!(is_balanced(&spec, Group::Unitary));
    }
}

#[test]
fn weingarten_is_a_class_function() {
    for k in 1..=4 {
        let perms = all_perms(k);
        for s in &perms {
            let base = wg(s, 6).unwrap();
            for t in &perms {
                let conj = compose(&compose(t, s), &inverse(t));
                assert_eq!(wg(&conj, 6).unwrap(), base);
            }
        }
    }
}

#[test]
fn kesten_brackets_contain_the_closed_form() {
    for d in 2..=4 {
        let fam = CoefficientFamily::kesten(d);
        let b = norm_bracket(&fam, 0.05, &BracketBudget::default()).unwrap();
        let exact = 2.0 * ((2 * d - 1) as f64).sqrt();
        assert!(b.contains(exact), "d={d}: [{}, {}] vs {exact}", b.lower, b.upper);
        assert!(b.width() <= 0.05);
    }
}
