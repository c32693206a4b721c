//! Exact mixing sequences and Birkhoff averages for the n-shift and the
//! tree-shift.

use std::fmt;
use std::sync::Arc;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bitseq::{BitStream, BitString, RatString};
use crate::blockmap::BlockMap;
use crate::ddg::{ddg_extract, DdgTree};
use crate::error::{Error, Result};
use crate::generators::Generator;
use crate::measures::Measure;

/// Largest |σ| + |τ| accepted by [`mixing_average`].
pub const MAX_MIXING_LEN: usize = 12;
/// Largest number of shift applications accepted by [`mixing_average`].
pub const MAX_MIXING_STEPS: usize = 8;

#[derive(Clone, Debug)]
pub enum ShiftSpec {
    /// Drops the first n bits.
    NShift(usize),
    /// Drops the leading S-block.
    TreeShift(DdgTree),
}

impl ShiftSpec {
    pub fn n_shift(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("shift length must be ≥ 1".into()));
        }
        Ok(ShiftSpec::NShift(n))
    }

    pub fn tree_shift(tree: DdgTree) -> Self {
        ShiftSpec::TreeShift(tree)
    }

    /// The least i from which T^{−i}⟦σ⟧ and ⟦τ⟧ depend on disjoint input
    /// positions, so that the mixing sequence is exactly μ(σ)μ(τ) when μ is
    /// preserved: ⌊|τ|/n⌋ + 1 for the n-shift and ⌈|τ|/d⌉ for a tree-shift
    /// whose shortest terminal has length d.
    pub fn mixing_threshold(&self, tau_len: usize) -> usize {
        match self {
            ShiftSpec::NShift(n) => tau_len / n + 1,
            ShiftSpec::TreeShift(t) => tau_len.div_ceil(t.min_depth()),
        }
    }
}

impl fmt::Display for ShiftSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ShiftSpec::NShift(n) => write!(f, "{n}-shift"),
            ShiftSpec::TreeShift(t) => write!(f, "tree-shift({} labels)", t.alphabet_size()),
        }
    }
}

/// μ(⟦a⟧ ∩ ⟦b⟧ shifted by `offset`): the mass of sequences with prefix `a`
/// and with `b` starting at `offset`; zero when they conflict.
fn overlay_mass(mu: &Measure, a: &BitString, offset: usize, b: &BitString) -> BigRational {
    let len = a.len().max(offset + b.len());
    let mut pattern: Vec<Option<bool>> = vec![None; len];
    for (i, bit) in a.iter().enumerate() {
        pattern[i] = Some(bit);
    }
    for (i, bit) in b.iter().enumerate() {
        match pattern[offset + i] {
            Some(x) if x != bit => return BigRational::zero(),
            _ => pattern[offset + i] = Some(bit),
        }
    }
    if pattern.iter().all(Option::is_some) {
        let s: BitString = pattern.into_iter().map(|b| b.unwrap()).collect();
        mu.cylinder_mass(&s)
    } else {
        mu.pattern_mass(&pattern)
    }
}

/// μ(T^{−i}⟦σ⟧ ∩ ⟦τ⟧) for i = 0..=k, by expanding T^{−i}⟦σ⟧ into disjoint
/// cylinders.
pub fn mixing_average(
    shift: &ShiftSpec,
    mu: &Measure,
    sigma: &BitString,
    tau: &BitString,
    k: usize,
) -> Result<Vec<BigRational>> {
    if sigma.len() + tau.len() > MAX_MIXING_LEN || k > MAX_MIXING_STEPS {
        return Err(Error::Infeasible(format!(
            "|σ|+|τ| = {} and K = {k} exceed {MAX_MIXING_LEN} and {MAX_MIXING_STEPS}",
            sigma.len() + tau.len()
        )));
    }
    (0..=k)
        .map(|i| preimage_intersection(shift, mu, sigma, tau, i))
        .collect()
}

/// μ(T^{−i}⟦σ⟧ ∩ ⟦τ⟧).
pub fn preimage_intersection(
    shift: &ShiftSpec,
    mu: &Measure,
    sigma: &BitString,
    tau: &BitString,
    i: usize,
) -> Result<BigRational> {
    match shift {
        ShiftSpec::NShift(n) => Ok(overlay_mass(mu, tau, n * i, sigma)),
        ShiftSpec::TreeShift(tree) => {
            let terms = tree.terminals().ok_or_else(|| {
                Error::Infeasible("preimages under a lazy tree-shift are infinite unions".into())
            })?;
            let mut total = BigRational::zero();
            let mut word = BitString::new();
            // D(S)^i is prefix-free, so the cylinders ⟦w·σ⟧ are disjoint.
            expand(terms, i, &mut word, &mut |w| {
                total += overlay_mass(mu, &w.concat(sigma), 0, tau);
            });
            Ok(total)
        }
    }
}

/// Calls `visit` on every concatenation of `depth` terminals.
fn expand(
    terms: &[(BitString, usize)],
    depth: usize,
    word: &mut BitString,
    visit: &mut dyn FnMut(&BitString),
) {
    if depth == 0 {
        visit(word);
        return;
    }
    for (t, _) in terms {
        let len = word.len();
        word.extend_from(t);
        expand(terms, depth - 1, word, visit);
        word.truncate(len);
    }
}

/// μ(T^{−i}⟦σ⟧).
pub fn preimage_mass(
    shift: &ShiftSpec,
    mu: &Measure,
    sigma: &BitString,
    i: usize,
) -> Result<BigRational> {
    preimage_intersection(shift, mu, sigma, &BitString::new(), i)
}

/// Running Cesàro means (1/(j+1)) Σ_{i≤j} a_i.
pub fn cesaro(values: &[BigRational]) -> Vec<BigRational> {
    let mut sum = BigRational::zero();
    values
        .iter()
        .enumerate()
        .map(|(j, v)| {
            sum += v;
            &sum / BigInt::from(j + 1)
        })
        .collect()
}

/// Counts the τ up to `max_len` with μ(T^{−1}⟦τ⟧) = μ(τ); fails on the
/// first τ that breaks invariance.
pub fn check_invariance(shift: &ShiftSpec, mu: &Measure, max_len: usize) -> Result<usize> {
    let mut checked = 0;
    for len in 0..=max_len {
        for tau in BitString::all_of_len(len) {
            let pre = preimage_mass(shift, mu, &tau, 1)?;
            if pre != mu.cylinder_mass(&tau) {
                return Err(Error::BoundViolated(format!(
                    "{shift} does not preserve {mu} at τ = {tau}: {pre} ≠ {}",
                    mu.cylinder_mass(&tau)
                )));
            }
            checked += 1;
        }
    }
    Ok(checked)
}

/// Result of [`check_mixing`] over all (σ, τ) pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixingSummary {
    pub shift: String,
    pub measure: String,
    pub max_len: usize,
    pub pairs: usize,
    /// Pairs whose sequence equals μ(σ)μ(τ) from the threshold on.
    pub exact_from_threshold: usize,
    /// Largest index at which some sequence first became constant.
    pub latest_onset: usize,
    pub failures: Vec<MixingFailure>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixingFailure {
    pub sigma: String,
    pub tau: String,
    pub i: usize,
    pub value: RatString,
    pub expected: RatString,
}

/// For every σ, τ of length ≤ `max_len`, computes the mixing sequence up to
/// one step past the threshold and checks it is μ(σ)μ(τ) from the
/// threshold on.
pub fn check_mixing(shift: &ShiftSpec, mu: &Measure, max_len: usize) -> Result<MixingSummary> {
    let strings: Vec<BitString> = (0..=max_len).flat_map(BitString::all_of_len).collect();
    let pairs: Vec<(&BitString, &BitString)> = strings
        .iter()
        .flat_map(|s| strings.iter().map(move |t| (s, t)))
        .collect();
    let results: Vec<Result<(usize, Option<MixingFailure>)>> = pairs
        .par_iter()
        .map(|(sigma, tau)| {
            let threshold = shift.mixing_threshold(tau.len());
            let k = (threshold + 1).min(MAX_MIXING_STEPS);
            let seq = mixing_average(shift, mu, sigma, tau, k)?;
            let expected = mu.cylinder_mass(sigma) * mu.cylinder_mass(tau);
            let onset = seq
                .iter()
                .rposition(|v| *v != expected)
                .map_or(0, |i| i + 1);
            let failure = (threshold..=k)
                .find(|&i| seq[i] != expected)
                .map(|i| MixingFailure {
                    sigma: sigma.to_string(),
                    tau: tau.to_string(),
                    i,
                    value: seq[i].clone().into(),
                    expected: expected.clone().into(),
                });
            Ok((onset, failure))
        })
        .collect();
    let mut summary = MixingSummary {
        shift: shift.to_string(),
        measure: mu.to_inline(),
        max_len,
        pairs: pairs.len(),
        exact_from_threshold: 0,
        latest_onset: 0,
        failures: Vec::new(),
    };
    for r in results {
        let (onset, failure) = r?;
        summary.latest_onset = summary.latest_onset.max(onset);
        match failure {
            Some(f) => summary.failures.push(f),
            None => summary.exact_from_threshold += 1,
        }
    }
    Ok(summary)
}

/// How much of a shifted stream an observable reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PrefixNeed {
    /// A fixed number of leading bits.
    Bits(usize),
    /// The leading S-block of a tree-shift.
    Block,
}

type PrefixFn = Arc<dyn Fn(&[bool]) -> f64 + Send + Sync>;

/// A bounded function of a stream, evaluated on a finite prefix.
#[derive(Clone)]
pub struct Observable {
    pub name: String,
    eval: PrefixFn,
    pub bound: f64,
    pub need: PrefixNeed,
}

impl fmt::Debug for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Observable({}, |F| ≤ {}, {:?})",
            self.name, self.bound, self.need
        )
    }
}

impl Observable {
    pub fn new(
        name: impl Into<String>,
        need: PrefixNeed,
        bound: f64,
        eval: impl Fn(&[bool]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            eval: Arc::new(eval),
            bound,
            need,
        }
    }

    pub fn eval(&self, prefix: &[bool]) -> f64 {
        (self.eval)(prefix)
    }

    pub fn constant(c: f64) -> Self {
        Self::new(
            format!("const {c}"),
            PrefixNeed::Bits(0),
            c.abs(),
            move |_| c,
        )
    }

    /// F(X) = |φ(X↾n)|/n for an n-block map φ.
    pub fn block_oi(bm: BlockMap) -> Self {
        let n = bm.block_len();
        let bound = bm.entries().map(|(_, out)| out.len()).max().unwrap_or(0) as f64 / n as f64;
        Self::new(
            format!("block OI of {}", bm.name()),
            PrefixNeed::Bits(n),
            bound,
            move |x| bm.output_len_of(x) as f64 / n as f64,
        )
    }

    /// F(X) = the length of the leading S-block.
    pub fn block_length(tree: &DdgTree) -> Self {
        let bound = tree.depth().map_or(f64::INFINITY, |d| d as f64);
        Self::new("S-block length", PrefixNeed::Block, bound, |x| {
            x.len() as f64
        })
    }
}

/// A stream wrapper that keeps every bit it passes through.
struct Recorder<'a> {
    inner: &'a mut dyn BitStream,
    seen: Vec<bool>,
}

impl BitStream for Recorder<'_> {
    fn next_bit(&mut self) -> Option<bool> {
        let b = self.inner.next_bit()?;
        self.seen.push(b);
        Some(b)
    }

    fn position(&self) -> usize {
        self.seen.len()
    }

    fn reset(&mut self) {
        self.inner.reset();
        self.seen.clear();
    }
}

/// (1/K) Σ_{i<K} F(T^i(x)), as a running mean, reading at most `cap` bits.
pub fn birkhoff_average(
    shift: &ShiftSpec,
    f: &Observable,
    x: &mut dyn BitStream,
    k: usize,
    cap: usize,
) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidArgument(
            "Birkhoff average needs K ≥ 1".into(),
        ));
    }
    let mut rec = Recorder {
        inner: x,
        seen: Vec::new(),
    };
    // Start positions of T^i(x) for i < K, and for tree-shifts the end of
    // each leading block.
    let (starts, block_ends): (Vec<usize>, Option<Vec<usize>>) = match shift {
        ShiftSpec::NShift(n) => ((0..k).map(|i| n * i).collect(), None),
        ShiftSpec::TreeShift(tree) => {
            let ex = ddg_extract(tree, &mut rec, k, cap)?;
            let starts = std::iter::once(0)
                .chain(ex.boundaries.iter().copied().take(k - 1))
                .collect();
            (starts, Some(ex.boundaries))
        }
    };
    let ends: Vec<usize> = match (f.need, block_ends) {
        (PrefixNeed::Bits(m), _) => starts.iter().map(|s| s + m).collect(),
        (PrefixNeed::Block, Some(ends)) => ends,
        (PrefixNeed::Block, None) => {
            return Err(Error::InvalidArgument(
                "block observables need a tree-shift".into(),
            ))
        }
    };
    let needed = *ends.iter().max().unwrap();
    if needed > cap {
        return Err(Error::Stalled {
            consumed: rec.seen.len(),
            cap,
            labels: Vec::new(),
            boundaries: Vec::new(),
        });
    }
    while rec.seen.len() < needed {
        if rec.next_bit().is_none() {
            return Err(Error::Stalled {
                consumed: rec.seen.len(),
                cap,
                labels: Vec::new(),
                boundaries: Vec::new(),
            });
        }
    }
    let mut mean = 0.0;
    for (i, (&s, &e)) in starts.iter().zip(&ends).enumerate() {
        let v = f.eval(&rec.seen[s..e]);
        if v.abs() > f.bound {
            return Err(Error::BoundViolated(format!(
                "{} = {v} exceeds its declared bound {}",
                f.name, f.bound
            )));
        }
        mean += (v - mean) / (i + 1) as f64;
    }
    Ok(mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bitseq::VecStream;
    use crate::blockmap::von_neumann;
    use crate::ddg::bundled as trees;
    use crate::measures::{bundled, MeasureStream};

    fn bs(s: &str) -> BitString {
        BitString::parse(s).unwrap()
    }

    #[test]
    fn one_shift_lebesgue_independent_past_tau() {
        let lambda = Measure::lebesgue();
        let shift = ShiftSpec::n_shift(1).unwrap();
        let (sigma, tau) = (bs("101"), bs("0110"));
        let seq = mixing_average(&shift, &lambda, &sigma, &tau, 8).unwrap();
        let product = lambda.cylinder_mass(&sigma) * lambda.cylinder_mass(&tau);
        for (i, v) in seq.iter().enumerate() {
            if i >= tau.len() {
                assert_eq!(*v, product);
            }
        }
        // i = 0 is the plain intersection: 101 vs 0110 conflict.
        assert!(seq[0].is_zero());
    }

    #[test]
    fn two_shift_step_bernoulli() {
        let mu = bundled::step2();
        let shift = ShiftSpec::n_shift(2).unwrap();
        let s = bs("01");
        let seq = mixing_average(&shift, &mu, &s, &s, 6).unwrap();
        let sq = mu.cylinder_mass(&s) * mu.cylinder_mass(&s);
        assert_eq!(seq[0], mu.cylinder_mass(&s));
        assert!(seq[1..].iter().all(|v| *v == sq));
    }

    #[test]
    fn tree_shift_base_case() {
        let lambda = Measure::lebesgue();
        let shift = ShiftSpec::tree_shift(trees::three());
        for sigma in [bs("1"), bs("01"), bs("110")] {
            for tau in [bs("0"), bs("")] {
                let v = preimage_intersection(&shift, &lambda, &sigma, &tau, 1).unwrap();
                assert_eq!(v, lambda.cylinder_mass(&sigma) * lambda.cylinder_mass(&tau));
            }
        }
    }

    #[test]
    fn tree_shift_not_exact_at_one_for_long_tau() {
        // With S = {0, 1}, T_S is the 1-shift; τ = 00 and σ = 1 overlap.
        let coin = crate::ddg::make_ddg(&[(bs("0"), "a".into()), (bs("1"), "b".into())]).unwrap();
        let lambda = Measure::lebesgue();
        let shift = ShiftSpec::tree_shift(coin);
        let v = preimage_intersection(&shift, &lambda, &bs("1"), &bs("00"), 1).unwrap();
        assert!(v.is_zero());
        assert_eq!(shift.mixing_threshold(2), 2);
    }

    #[test]
    fn invariance() {
        assert!(check_invariance(&ShiftSpec::n_shift(2).unwrap(), &bundled::step2(), 6).is_ok());
        assert!(check_invariance(
            &ShiftSpec::tree_shift(trees::three()),
            &Measure::lebesgue(),
            8
        )
        .is_ok());
        // The 1-shift does not preserve a 2-step measure with unequal marginals.
        assert!(check_invariance(&ShiftSpec::n_shift(1).unwrap(), &bundled::step2(), 2).is_err());
    }

    #[test]
    fn mixing_summaries_small() {
        let s = check_mixing(&ShiftSpec::n_shift(2).unwrap(), &bundled::step2(), 3).unwrap();
        assert!(s.failures.is_empty(), "{:?}", s.failures);
        let s = check_mixing(
            &ShiftSpec::tree_shift(trees::three()),
            &Measure::lebesgue(),
            3,
        )
        .unwrap();
        assert!(s.failures.is_empty(), "{:?}", s.failures);
        assert_eq!(s.pairs, 15 * 15);
    }

    #[test]
    fn feasibility_limits() {
        let shift = ShiftSpec::n_shift(1).unwrap();
        let long = BitString::repeat(false, 7);
        assert!(matches!(
            mixing_average(&shift, &Measure::lebesgue(), &long, &long, 2),
            Err(Error::Infeasible(_))
        ));
        let lazy = ShiftSpec::tree_shift(trees::ky_thirds());
        assert!(preimage_mass(&lazy, &Measure::lebesgue(), &bs("0"), 1).is_err());
    }

    #[test]
    fn cesaro_means() {
        let r = |n: i64| BigRational::from_integer(n.into());
        assert_eq!(cesaro(&[r(1), r(3), r(5)]), vec![r(1), r(2), r(3)]);
    }

    #[test]
    fn constant_observable_is_exact() {
        for shift in [
            ShiftSpec::n_shift(3).unwrap(),
            ShiftSpec::tree_shift(trees::three()),
        ] {
            let mut x = MeasureStream::new(Measure::lebesgue(), 1);
            let avg = birkhoff_average(&shift, &Observable::constant(0.3), &mut x, 1000, 100_000)
                .unwrap();
            assert_eq!(avg, 0.3);
        }
    }

    #[test]
    fn birkhoff_block_length_tracks_avg_rt() {
        let tree = trees::three();
        let shift = ShiftSpec::tree_shift(tree.clone());
        let mut x = MeasureStream::new(Measure::lebesgue(), 2);
        let avg = birkhoff_average(
            &shift,
            &Observable::block_length(&tree),
            &mut x,
            20_000,
            1_000_000,
        )
        .unwrap();
        assert!((avg - 1.5).abs() < 0.03, "{avg}");
    }

    #[test]
    fn birkhoff_block_oi_tracks_block_rate() {
        let mu = bundled::step2();
        let shift = ShiftSpec::n_shift(2).unwrap();
        let mut x = MeasureStream::new(mu.clone(), 4);
        let avg = birkhoff_average(
            &shift,
            &Observable::block_oi(von_neumann()),
            &mut x,
            20_000,
            1_000_000,
        )
        .unwrap();
        assert!((avg - 0.35).abs() < 0.02, "{avg}");
    }

    #[test]
    fn birkhoff_errors() {
        let tree = trees::three();
        let shift = ShiftSpec::tree_shift(tree.clone());
        let mut x = VecStream::new(bs("1111"));
        assert!(matches!(
            birkhoff_average(&shift, &Observable::block_length(&tree), &mut x, 5, 100),
            Err(Error::Stalled { .. })
        ));
        let mut x = VecStream::new(bs("1111"));
        assert!(birkhoff_average(
            &ShiftSpec::n_shift(1).unwrap(),
            &Observable::block_length(&tree),
            &mut x,
            2,
            10
        )
        .is_err());
        let liar = Observable::new("liar", PrefixNeed::Bits(1), 0.5, |_| 1.0);
        let mut x = VecStream::new(bs("1111"));
        assert!(matches!(
            birkhoff_average(&ShiftSpec::n_shift(1).unwrap(), &liar, &mut x, 2, 10),
            Err(Error::BoundViolated(_))
        ));
    }
}
