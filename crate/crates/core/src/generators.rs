//! Monotone generators of Turing functionals and their extraction rates.
//!
//! A generator maps finite input strings to finite output strings and must
//! be monotone: extending the input may only extend the output. The rate
//! machinery here measures how many output bits a generator produces per
//! input bit, both along a single stream (OI traces, the use function) and
//! on average over a measure (exact enumeration or Monte Carlo).

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;
use serde::{Deserialize, Serialize};

use crate::bitseq::{BitStream, BitString, RatString};
use crate::error::{Error, Result, StallReason};
use crate::measures::{rational_to_f64, sample, Measure};

/// Largest input length for which averages are computed by enumerating all
/// 2ⁿ strings.
pub const MAX_EXHAUSTIVE_N: usize = 24;

pub trait Generator: Send + Sync {
    fn name(&self) -> &str;

    fn eval(&self, sigma: &BitString) -> BitString;

    /// |eval(σ)|; implementations may skip building the output.
    fn output_len(&self, sigma: &BitString) -> usize {
        self.eval(sigma).len()
    }

    /// Block length when the generator is an n-block map.
    fn block_size(&self) -> Option<usize> {
        None
    }
}

impl<G: Generator + ?Sized> Generator for Arc<G> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn eval(&self, sigma: &BitString) -> BitString {
        (**self).eval(sigma)
    }
    fn output_len(&self, sigma: &BitString) -> usize {
        (**self).output_len(sigma)
    }
    fn block_size(&self) -> Option<usize> {
        (**self).block_size()
    }
}

impl<G: Generator + ?Sized> Generator for Box<G> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn eval(&self, sigma: &BitString) -> BitString {
        (**self).eval(sigma)
    }
    fn output_len(&self, sigma: &BitString) -> usize {
        (**self).output_len(sigma)
    }
    fn block_size(&self) -> Option<usize> {
        (**self).block_size()
    }
}

/// σ ↦ σ.
#[derive(Clone, Copy, Debug, Default)]
pub struct Identity;

impl Generator for Identity {
    fn name(&self) -> &str {
        "identity"
    }
    fn eval(&self, sigma: &BitString) -> BitString {
        sigma.clone()
    }
    fn output_len(&self, sigma: &BitString) -> usize {
        sigma.len()
    }
}

/// σ ↦ σ ⊕ σ, every bit written twice.
#[derive(Clone, Copy, Debug, Default)]
pub struct Duplication;

impl Generator for Duplication {
    fn name(&self) -> &str {
        "duplication"
    }
    fn eval(&self, sigma: &BitString) -> BitString {
        sigma.iter().flat_map(|b| [b, b]).collect()
    }
    fn output_len(&self, sigma: &BitString) -> usize {
        2 * sigma.len()
    }
}

/// A generator backed by a closure.
pub struct FnGenerator<F> {
    name: String,
    f: F,
}

impl<F> FnGenerator<F>
where
    F: Fn(&BitString) -> BitString + Send + Sync,
{
    pub fn new(name: impl Into<String>, f: F) -> Self {
        Self {
            name: name.into(),
            f,
        }
    }
}

impl<F> Generator for FnGenerator<F>
where
    F: Fn(&BitString) -> BitString + Send + Sync,
{
    fn name(&self) -> &str {
        &self.name
    }
    fn eval(&self, sigma: &BitString) -> BitString {
        (self.f)(sigma)
    }
}

/// The functional writing input bit i exactly α(i) times.
#[derive(Clone)]
pub struct AlphaFunctional {
    name: String,
    alpha: Arc<dyn Fn(usize) -> usize + Send + Sync>,
}

/// Builds the α-functional: eval(σ) = σ(0)^{α(0)} · … · σ(|σ|−1)^{α(|σ|−1)}.
/// α should be positive; a zero entry simply drops that input bit.
pub fn alpha_functional(
    name: impl Into<String>,
    alpha: impl Fn(usize) -> usize + Send + Sync + 'static,
) -> AlphaFunctional {
    AlphaFunctional {
        name: name.into(),
        alpha: Arc::new(alpha),
    }
}

impl AlphaFunctional {
    pub fn alpha(&self, i: usize) -> usize {
        (self.alpha)(i)
    }

    /// α*(n) = Σ_{i<n} α(i), the output length on any length-n input.
    pub fn cumulative(&self, n: usize) -> usize {
        (0..n).map(|i| self.alpha(i)).sum()
    }
}

impl Generator for AlphaFunctional {
    fn name(&self) -> &str {
        &self.name
    }
    fn eval(&self, sigma: &BitString) -> BitString {
        let mut out = BitString::with_capacity(self.cumulative(sigma.len()));
        for (i, b) in sigma.iter().enumerate() {
            for _ in 0..self.alpha(i) {
                out.push(b);
            }
        }
        out
    }
    fn output_len(&self, sigma: &BitString) -> usize {
        self.cumulative(sigma.len())
    }
}

/// β(m) = 2^{k+1} + i for m = 2^k + i with i < 2^k, and β(0) = 0.
pub fn oscillating_beta(m: usize) -> usize {
    if m == 0 {
        0
    } else {
        m + (1usize << m.ilog2())
    }
}

/// The α-functional whose cumulative output length is [`oscillating_beta`]:
/// its output/input ratio is 2 at powers of two and dips towards 3/2 just
/// before them.
pub fn oscillating_functional() -> AlphaFunctional {
    alpha_functional("oscillating-beta", |i| {
        oscillating_beta(i + 1) - oscillating_beta(i)
    })
}

/// Least m with |φ(x↾m)| ≥ n, searching at most `cap` input bits.
pub fn use_function(
    phi: &dyn Generator,
    x: &mut dyn BitStream,
    n: usize,
    cap: usize,
) -> Result<usize> {
    if n == 0 {
        return Ok(0);
    }
    let mut buf = BitString::new();
    let mut fill = |buf: &mut BitString, m: usize| {
        while buf.len() < m {
            match x.next_bit() {
                Some(b) => buf.push(b),
                None => break,
            }
        }
    };
    let stalled = |buf: &BitString, m: usize| Error::OutputStalled {
        wanted: n,
        reached: phi.output_len(&buf.prefix(m)),
        consumed: m,
        cap,
    };
    // Monotonicity makes |φ(x↾m)| non-decreasing in m: gallop, then bisect.
    let mut lo = 0;
    let mut hi = 1usize;
    loop {
        let m = hi.min(cap);
        fill(&mut buf, m);
        let avail = buf.len().min(m);
        if phi.output_len(&buf.prefix(avail)) >= n {
            hi = avail;
            break;
        }
        if avail < m || m == cap {
            return Err(stalled(&buf, avail));
        }
        lo = m;
        hi = m.saturating_mul(2);
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if phi.output_len(&buf.prefix(mid)) >= n {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// |φ(σ)| / |σ|.
pub fn oi_ratio(phi: &dyn Generator, sigma: &BitString) -> Result<BigRational> {
    if sigma.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(BigRational::new(
        BigInt::from(phi.output_len(sigma)),
        BigInt::from(sigma.len()),
    ))
}

/// Exact Avg(φ, μ, n) = Σ_{|σ|=n} μ(σ)·|φ(σ)|/n.
pub fn avg_oi(phi: &dyn Generator, mu: &Measure, n: usize) -> Result<BigRational> {
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    if n > MAX_EXHAUSTIVE_N {
        return Err(Error::EnumerationRefused {
            n,
            limit: MAX_EXHAUSTIVE_N,
        });
    }
    let mut total = BigRational::zero();
    for sigma in BitString::all_of_len(n) {
        let len = phi.output_len(&sigma);
        if len > 0 {
            total += mu.cylinder_mass(&sigma) * BigInt::from(len);
        }
    }
    Ok(total / BigInt::from(n))
}

/// Monte-Carlo estimate of Avg(φ, μ, n): the exact rational mean of
/// |φ(σ)|/n over `samples` strings drawn from μ.
pub fn avg_oi_monte_carlo(
    phi: &dyn Generator,
    mu: &Measure,
    n: usize,
    samples: usize,
    seed: u64,
) -> Result<BigRational> {
    if n == 0 || samples == 0 {
        return Err(Error::InvalidArgument(
            "Monte-Carlo average needs n ≥ 1 and samples ≥ 1".into(),
        ));
    }
    let total: usize = (0..samples)
        .map(|s| phi.output_len(&sample(mu, derive_seed(seed, n as u64, s as u64), n)))
        .sum();
    Ok(BigRational::new(
        BigInt::from(total),
        BigInt::from(n) * BigInt::from(samples),
    ))
}

/// Mixes a base seed with indices into an independent stream seed.
pub fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum AvgMethod {
    Exact,
    MonteCarlo { samples: usize, seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AvgEntry {
    pub n: usize,
    pub value: RatString,
    pub approx: f64,
    #[serde(flatten)]
    pub method: AvgMethod,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub n: usize,
    pub value: RatString,
    pub approx: f64,
}

impl TracePoint {
    pub fn new(n: usize, value: BigRational) -> Self {
        let approx = rational_to_f64(&value);
        Self {
            n,
            value: RatString(value),
            approx,
        }
    }
}

/// Average rates over a schedule of input lengths, optionally with an OI
/// trace along one stream, plus tail estimates of limsup and liminf.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub generator: String,
    pub measure: String,
    pub schedule: Vec<usize>,
    pub avg_by_n: Vec<AvgEntry>,
    pub oi_trace: Vec<TracePoint>,
    pub limsup_est: f64,
    pub liminf_est: f64,
    pub oi_limsup_est: Option<f64>,
    pub oi_liminf_est: Option<f64>,
    pub theoretical: Option<f64>,
    pub seed: Option<u64>,
    pub stream_id: Option<String>,
}

impl RateReport {
    /// Fills the tail estimates: max and min over the last half of the
    /// recorded averages (or of the OI trace when no averages exist).
    pub fn finish(&mut self) {
        let avg: Vec<f64> = self.avg_by_n.iter().map(|e| e.approx).collect();
        let oi: Vec<f64> = self.oi_trace.iter().map(|e| e.approx).collect();
        let (oi_hi, oi_lo) = match tail_extremes(&oi) {
            Some((hi, lo)) => (Some(hi), Some(lo)),
            None => (None, None),
        };
        self.oi_limsup_est = oi_hi;
        self.oi_liminf_est = oi_lo;
        let (hi, lo) = tail_extremes(&avg)
            .or_else(|| tail_extremes(&oi))
            .unwrap_or((f64::NAN, f64::NAN));
        self.limsup_est = hi;
        self.liminf_est = lo;
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// (max, min) over the second half of `values`.
pub fn tail_extremes(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let tail = &values[values.len() / 2..];
    let hi = tail.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = tail.iter().copied().fold(f64::INFINITY, f64::min);
    Some((hi, lo))
}

#[derive(Clone, Debug)]
pub struct RateOptions {
    /// Largest n computed by exhaustive enumeration.
    pub exact_limit: usize,
    pub mc_samples: usize,
    pub seed: u64,
    pub theoretical: Option<f64>,
    pub stream_id: Option<String>,
}

impl Default for RateOptions {
    fn default() -> Self {
        Self {
            exact_limit: 16,
            mc_samples: 1000,
            seed: 0,
            theoretical: None,
            stream_id: None,
        }
    }
}

/// Records Avg(φ, μ, n) at each scheduled n and, when a stream is given, the
/// OI trace |φ(x↾n)|/n.
pub fn rate_report(
    phi: &dyn Generator,
    mu: &Measure,
    schedule: &[usize],
    x: Option<&mut dyn BitStream>,
    opts: &RateOptions,
) -> Result<RateReport> {
    if schedule.is_empty() {
        return Err(Error::InvalidArgument("empty schedule".into()));
    }
    if schedule.windows(2).any(|w| w[0] >= w[1]) || schedule[0] == 0 {
        return Err(Error::InvalidArgument(
            "schedule must be positive and strictly increasing".into(),
        ));
    }
    let mut avg_by_n = Vec::with_capacity(schedule.len());
    for &n in schedule {
        let (value, method) = if n <= opts.exact_limit.min(MAX_EXHAUSTIVE_N) {
            (avg_oi(phi, mu, n)?, AvgMethod::Exact)
        } else {
            (
                avg_oi_monte_carlo(phi, mu, n, opts.mc_samples, opts.seed)?,
                AvgMethod::MonteCarlo {
                    samples: opts.mc_samples,
                    seed: opts.seed,
                },
            )
        };
        avg_by_n.push(AvgEntry {
            n,
            approx: rational_to_f64(&value),
            value: RatString(value),
            method,
        });
    }
    let mut oi_trace = Vec::new();
    if let Some(x) = x {
        let longest = *schedule.last().unwrap();
        let prefix = x.take_bits(longest);
        for &n in schedule {
            if n > prefix.len() {
                break;
            }
            oi_trace.push(TracePoint::new(n, oi_ratio(phi, &prefix.prefix(n))?));
        }
    }
    let mut report = RateReport {
        generator: phi.name().to_string(),
        measure: mu.to_inline(),
        schedule: schedule.to_vec(),
        avg_by_n,
        oi_trace,
        limsup_est: f64::NAN,
        liminf_est: f64::NAN,
        oi_limsup_est: None,
        oi_liminf_est: None,
        theoretical: opts.theoretical,
        seed: Some(opts.seed),
        stream_id: opts.stream_id.clone(),
    };
    report.finish();
    Ok(report)
}

/// The canonical generator of a total functional, approximated by searching
/// extensions up to a depth cap.
pub struct CanonicalGenerator {
    name: String,
    psi: Arc<dyn Generator>,
    depth_cap: usize,
    uncertified: AtomicUsize,
}

/// The canonical generator of the functional induced by `psi`: φ(σ) is the
/// longest common prefix of ψ(σ′) over the extensions σ′ ⪰ σ of length
/// |σ| + d, for the first depth d at which that prefix is unchanged from
/// depth d − 1 and every ψ(σ′) is strictly longer than it.
///
/// The certificate is checked eagerly at the empty string, so a functional
/// that is constant everywhere fails here. Later evaluations that cannot be
/// certified within the cap fall back to the depth-cap prefix (a lower bound
/// of the canonical value) and are counted by
/// [`CanonicalGenerator::uncertified_evals`].
pub fn canonicalize(psi: Arc<dyn Generator>, depth_cap: usize) -> Result<CanonicalGenerator> {
    let g = CanonicalGenerator {
        name: format!("canonical({})", psi.name()),
        psi,
        depth_cap,
        uncertified: AtomicUsize::new(0),
    };
    g.try_eval(&BitString::new())?;
    Ok(g)
}

impl CanonicalGenerator {
    /// LCP of ψ over depth-d extensions, and whether each output is longer.
    fn lcp_at_depth(&self, sigma: &BitString, d: usize) -> (BitString, bool) {
        let mut lcp: Option<BitString> = None;
        let mut outputs = Vec::with_capacity(1 << d);
        for tail in BitString::all_of_len(d) {
            let out = self.psi.eval(&sigma.concat(&tail));
            lcp = Some(match lcp {
                None => out.clone(),
                Some(p) => {
                    let k = p.common_prefix_len(&out);
                    p.prefix(k)
                }
            });
            outputs.push(out.len());
        }
        let lcp = lcp.expect("at least one extension");
        let longer = outputs.iter().all(|&len| len > lcp.len());
        (lcp, longer)
    }

    /// The certified canonical value at σ.
    pub fn try_eval(&self, sigma: &BitString) -> Result<BitString> {
        let (mut prev, _) = self.lcp_at_depth(sigma, 0);
        let mut grew = false;
        for d in 1..=self.depth_cap {
            let (lcp, longer) = self.lcp_at_depth(sigma, d);
            grew = lcp != prev;
            if !grew && longer {
                return Ok(lcp);
            }
            prev = lcp;
        }
        Err(Error::CanonicalizationDepthExceeded {
            sigma: sigma.clone(),
            depth: self.depth_cap,
            reason: if grew {
                StallReason::PrefixStillGrowing
            } else {
                StallReason::OutputsTooShort
            },
        })
    }

    pub fn uncertified_evals(&self) -> usize {
        self.uncertified.load(Ordering::Relaxed)
    }
}

impl Generator for CanonicalGenerator {
    fn name(&self) -> &str {
        &self.name
    }

    fn eval(&self, sigma: &BitString) -> BitString {
        match self.try_eval(sigma) {
            Ok(v) => v,
            Err(_) => {
                self.uncertified.fetch_add(1, Ordering::Relaxed);
                self.lcp_at_depth(sigma, self.depth_cap).0
            }
        }
    }
}
