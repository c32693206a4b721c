use num_rational::BigRational;
use rayon::prelude::*;

use randext::bitseq::BitString;
use randext::ddg::{
    self, avg_rate_monte_carlo, ddg_extract, knuth_yao, label_frequencies, make_ddg,
};
use randext::measures::{rational_to_f64, MeasureStream};
use randext::Measure;

#[test]
fn label_frequencies_match_distribution() {
    for (name, tree) in ddg::bundled::all() {
        let dist: Vec<f64> = tree.distribution().iter().map(rational_to_f64).collect();
        let freqs: Vec<Vec<f64>> = [1u64, 2, 3]
            .par_iter()
            .map(|&seed| {
                let mut x = MeasureStream::new(Measure::lebesgue(), seed);
                let ex = ddg_extract(&tree, &mut x, 1_000_000, usize::MAX).unwrap();
                assert_eq!(ex.labels.len(), 1_000_000);
                assert_eq!(*ex.boundaries.last().unwrap(), ex.consumed);
                label_frequencies(&ex.labels, tree.alphabet_size())
            })
            .collect();
        for (seed, f) in freqs.iter().enumerate() {
            for (got, want) in f.iter().zip(&dist) {
                assert!(
                    (got - want).abs() < 0.005,
                    "{name} seed {}: {got} vs {want}",
                    seed + 1
                );
            }
        }
    }
}

#[test]
fn monte_carlo_average_near_reciprocal_avg_rt() {
    for (name, tree) in ddg::bundled::all() {
        let target = 1.0 / rational_to_f64(&tree.avg_rt().unwrap().value);
        let mc = rational_to_f64(&avg_rate_monte_carlo(&tree, 10_000, 10_000, 5).unwrap());
        assert!(
            (mc - target).abs() / target < 0.02,
            "{name}: {mc} vs {target}"
        );
    }
}

#[test]
fn knuth_yao_dyadic_matches_hand_tree() {
    let q = |n: i64, d: i64| BigRational::new(n.into(), d.into());
    let ky = knuth_yao(&[q(1, 2), q(1, 4), q(1, 4)], &ddg::default_tail_tol()).unwrap();
    let hand = make_ddg(&[
        (BitString::parse("0").unwrap(), "a".into()),
        (BitString::parse("10").unwrap(), "b".into()),
        (BitString::parse("11").unwrap(), "c".into()),
    ])
    .unwrap();
    assert!(ky.is_finite());
    assert_eq!(ky.avg_rt().unwrap().value, hand.avg_rt().unwrap().value);
    assert_eq!(ky.distribution(), hand.distribution());
}
