use std::sync::Arc;

use num_rational::BigRational;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use randext::bitseq::{BitString, VecStream};
use randext::blockmap::{peres, von_neumann};
use randext::generators::{
    avg_oi, canonicalize, oi_ratio, oscillating_functional, use_function, Duplication, Generator,
    Identity,
};
use randext::measures::{binary_entropy, bundled, rational_to_f64, sample};
use randext::Measure;

fn bundled_generators() -> Vec<Arc<dyn Generator>> {
    vec![
        Arc::new(Identity),
        Arc::new(Duplication),
        Arc::new(von_neumann()),
        Arc::new(oscillating_functional()),
    ]
}

fn random_bits(rng: &mut ChaCha8Rng, max: usize) -> BitString {
    let len = rng.gen_range(0..=max);
    BitString::from_bits((0..len).map(|_| rng.gen()).collect())
}

#[test]
fn generators_are_monotone_on_random_extensions() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for phi in bundled_generators() {
        for _ in 0..10_000 {
            let sigma = random_bits(&mut rng, 40);
            let tau = random_bits(&mut rng, 12);
            let short = phi.eval(&sigma);
            let long = phi.eval(&sigma.concat(&tau));
            assert!(
                short.is_prefix_of(&long),
                "{}: {sigma} then {tau}",
                phi.name()
            );
            assert_eq!(phi.output_len(&sigma), short.len(), "{}", phi.name());
        }
    }
}

/// OI along x at m versus n/u(x, n) with n = |φ(x↾m)|: the two traces share
/// the subsequence of input lengths where the output grows.
#[test]
fn oi_limit_matches_inverse_use() {
    let m = 10_000;
    let lambda = Measure::lebesgue();
    let q = bundled::bernoulli_quarter();
    let cases: Vec<(Arc<dyn Generator>, &Measure)> = vec![
        (Arc::new(Identity), &lambda),
        (Arc::new(Duplication), &lambda),
        (Arc::new(von_neumann()), &lambda),
        (Arc::new(von_neumann()), &q),
    ];
    for (phi, mu) in cases {
        for seed in 1..=3 {
            let x = sample(mu, seed, m);
            let oi = rational_to_f64(&oi_ratio(phi.as_ref(), &x).unwrap());
            let n = phi.output_len(&x);
            let u = use_function(phi.as_ref(), &mut VecStream::new(x.clone()), n, m).unwrap();
            let inverse = n as f64 / u as f64;
            assert!(
                (oi - inverse).abs() < 1e-3,
                "{}: OI {oi}, n/u {inverse}",
                phi.name()
            );
        }
    }
}

/// Bounded-rate generators whose OI traces agree across streams have Avg
/// near the common limit.
#[test]
fn dominated_convergence() {
    let lambda = Measure::lebesgue();
    let q = bundled::bernoulli_quarter();
    let cases: Vec<(Arc<dyn Generator>, &Measure)> = vec![
        (Arc::new(Identity), &lambda),
        (Arc::new(Duplication), &lambda),
        (Arc::new(von_neumann()), &lambda),
        (Arc::new(von_neumann()), &q),
    ];
    for (phi, mu) in cases {
        let traces: Vec<f64> = (0..20)
            .map(|s| {
                rational_to_f64(&oi_ratio(phi.as_ref(), &sample(mu, 100 + s, 20_000)).unwrap())
            })
            .collect();
        let hi = traces.iter().cloned().fold(f64::MIN, f64::max);
        let lo = traces.iter().cloned().fold(f64::MAX, f64::min);
        assert!(hi - lo < 1e-2, "{}: spread {}", phi.name(), hi - lo);
        let r = traces.iter().sum::<f64>() / traces.len() as f64;
        let avg = rational_to_f64(&avg_oi(phi.as_ref(), mu, 16).unwrap());
        assert!(
            (avg - r).abs() < 1e-2,
            "{}: Avg {avg}, trace limit {r}",
            phi.name()
        );
    }
}

#[test]
fn oscillating_traces_do_not_converge() {
    // The hypothesis of the previous test fails here: OI oscillates.
    let phi = oscillating_functional();
    let x = sample(&Measure::lebesgue(), 1, 1 << 12);
    let at = |n: usize| phi.output_len(&x.prefix(n)) as f64 / n as f64;
    assert_eq!(at(1 << 12), 2.0);
    assert!(at((1 << 12) - 1) < 1.51);
}

#[test]
fn canonical_closure_to_length_ten() {
    for psi in [
        Arc::new(Identity) as Arc<dyn Generator>,
        Arc::new(Duplication),
    ] {
        let phi = canonicalize(psi.clone(), 10).unwrap();
        for len in 0..10 {
            for s in BitString::all_of_len(len) {
                let here = phi.try_eval(&s).unwrap();
                let a = phi.try_eval(&s.child(false)).unwrap();
                let b = phi.try_eval(&s.child(true)).unwrap();
                // φ(σ0) ⪰ τ and φ(σ1) ⪰ τ force φ(σ) ⪰ τ.
                let common = a.prefix(a.common_prefix_len(&b));
                assert!(common.is_prefix_of(&here), "{s}");
                assert_eq!(here, psi.eval(&s), "{s}");
            }
        }
    }
}

#[test]
fn peres_never_beats_entropy() {
    for p in [
        BigRational::new(1.into(), 2.into()),
        BigRational::new(1.into(), 4.into()),
    ] {
        let h = binary_entropy(rational_to_f64(&p));
        let mut last = BigRational::from_integer(0.into());
        for k in 1..=4 {
            let r = peres(k).unwrap().expected_rate(&p, 16).unwrap();
            assert!(rational_to_f64(&r) <= h, "k = {k}, p = {p}");
            assert!(r >= last, "k = {k}, p = {p}");
            last = r;
        }
    }
}
