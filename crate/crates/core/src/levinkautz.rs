//! Conversion of μ-distributed bitstreams into ν-distributed ones by nested
//! intervals.
//!
//! After n input bits the input interval (A↾n)_μ is known exactly; the
//! output is the longest B↾k whose interval (B↾k)_ν contains it. Endpoints
//! are kept as integers measured from the left end of the output interval
//! and scaled by a shared, never-reduced factor, so each bit costs a few
//! scalar multiplications of big integers and no gcd.

use std::sync::Arc;

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::bitseq::{BitStream, BitString, RatInterval, RatString};
use crate::error::{Error, Result};
use crate::generators::{RateReport, TracePoint};
use crate::measures::{log2_biguint, Context, Measure};

#[derive(Clone, Debug)]
enum Scalar {
    Small(u64),
    Big(BigUint),
}

impl Scalar {
    fn new(x: BigUint) -> Self {
        match x.to_u64() {
            Some(v) => Scalar::Small(v),
            None => Scalar::Big(x),
        }
    }

    #[inline]
    fn mul_into(&self, x: &mut BigUint) {
        match self {
            Scalar::Small(v) => *x *= *v,
            Scalar::Big(b) => *x *= b,
        }
    }

    #[inline]
    fn times(&self, x: &BigUint) -> BigUint {
        match self {
            Scalar::Small(v) => x * *v,
            Scalar::Big(b) => x * b,
        }
    }
}

/// Integer form of one context's conditional: P(0) = zero/den and
/// P(1) = one/den.
#[derive(Clone, Debug)]
struct Cond {
    zero: Scalar,
    one: Scalar,
    den: Scalar,
}

impl Cond {
    fn of(&self, bit: bool) -> &Scalar {
        if bit {
            &self.one
        } else {
            &self.zero
        }
    }
}

fn integer_conditionals(mu: &Measure) -> Result<Arc<Vec<Cond>>> {
    mu.require_positive()?;
    (0..mu.context_count())
        .map(|ctx| {
            let c = mu
                .conditional(ctx)
                .ok_or_else(|| Error::NotPositive(mu.to_inline()))?;
            if c.num.is_zero() || c.num == c.den {
                return Err(Error::NotPositive(mu.to_inline()));
            }
            Ok(Cond {
                zero: Scalar::new(c.num.clone()),
                one: Scalar::new(&c.den - &c.num),
                den: Scalar::new(c.den.clone()),
            })
        })
        .collect::<Result<Vec<_>>>()
        .map(Arc::new)
}

/// The state of a conversion after n input bits.
///
/// With s the shared scale, the input interval is
/// [out_lo + rel_lo/s, out_lo + (rel_lo + in_w)/s] and the output interval
/// is [out_lo, out_lo + out_w/s]. Containment is 0 ≤ rel_lo and
/// rel_lo + in_w ≤ out_w.
#[derive(Clone, Debug)]
pub struct LkState {
    mu: Measure,
    nu: Measure,
    mu_conds: Arc<Vec<Cond>>,
    nu_conds: Arc<Vec<Cond>>,
    mu_ctx: Context,
    nu_ctx: Context,
    rel_lo: BigUint,
    in_w: BigUint,
    out_w: BigUint,
    input: BitString,
    output: BitString,
    /// g(n) for n = 0..=input.len().
    g: Vec<usize>,
}

impl LkState {
    /// Both measures must be positive.
    pub fn new(mu: &Measure, nu: &Measure) -> Result<Self> {
        Ok(Self {
            mu_conds: integer_conditionals(mu)?,
            nu_conds: integer_conditionals(nu)?,
            mu: mu.clone(),
            nu: nu.clone(),
            mu_ctx: 0,
            nu_ctx: 0,
            rel_lo: BigUint::zero(),
            in_w: BigUint::one(),
            out_w: BigUint::one(),
            input: BitString::new(),
            output: BitString::new(),
            g: vec![0],
        })
    }

    pub fn mu(&self) -> &Measure {
        &self.mu
    }

    pub fn nu(&self) -> &Measure {
        &self.nu
    }

    /// Input bits consumed.
    pub fn n(&self) -> usize {
        self.input.len()
    }

    /// Current output length g(n).
    pub fn g(&self) -> usize {
        self.output.len()
    }

    /// g(0), g(1), …, g(n).
    pub fn g_trace(&self) -> &[usize] {
        &self.g
    }

    pub fn input(&self) -> &BitString {
        &self.input
    }

    pub fn output(&self) -> &BitString {
        &self.output
    }

    /// μ(A↾n) / ν(B↾g(n)), exact.
    pub fn mass_ratio(&self) -> BigRational {
        BigRational::new(
            BigInt::from(self.in_w.clone()),
            BigInt::from(self.out_w.clone()),
        )
    }

    /// (A↾n)_μ, recomputed from the input bits.
    pub fn input_interval(&self) -> RatInterval {
        self.mu.measure_interval(&self.input)
    }

    /// (B↾g(n))_ν, recomputed from the output bits.
    pub fn output_interval(&self) -> RatInterval {
        self.nu.measure_interval(&self.output)
    }

    /// Consumes one input bit and extends the output as far as the refined
    /// input interval allows. Returns the number of new output bits.
    pub fn step(&mut self, bit: bool) -> usize {
        let c = &self.mu_conds[self.mu_ctx];
        c.den.mul_into(&mut self.rel_lo);
        c.den.mul_into(&mut self.out_w);
        if bit {
            self.rel_lo += c.zero.times(&self.in_w);
        }
        c.of(bit).mul_into(&mut self.in_w);
        self.mu_ctx = self.mu.next_context(self.mu_ctx, bit);
        self.input.push(bit);

        let before = self.output.len();
        while let Some(b) = self.extend_once() {
            self.output.push(b);
        }
        debug_assert!(
            &self.rel_lo + &self.in_w <= self.out_w,
            "containment lost at n = {}",
            self.n()
        );
        self.g.push(self.output.len());
        self.output.len() - before
    }

    /// Emits one output bit if the input interval lies inside one child of
    /// the output interval.
    fn extend_once(&mut self) -> Option<bool> {
        let c = &self.nu_conds[self.nu_ctx];
        // Split point of the output interval, in units of den.
        let split = c.zero.times(&self.out_w);
        let mut hi = &self.rel_lo + &self.in_w;
        c.den.mul_into(&mut hi);
        let bit = if hi <= split {
            c.den.mul_into(&mut self.rel_lo);
            false
        } else {
            let lo = c.den.times(&self.rel_lo);
            if lo < split {
                return None;
            }
            self.rel_lo = lo - split;
            true
        };
        c.den.mul_into(&mut self.in_w);
        c.of(bit).mul_into(&mut self.out_w);
        self.nu_ctx = self.nu.next_context(self.nu_ctx, bit);
        Some(bit)
    }

    /// Recomputes both intervals from scratch and checks containment, the
    /// relative position and the width ratio against the scaled state.
    pub fn check_invariants(&self) -> Result<()> {
        let input = self.input_interval();
        let output = self.output_interval();
        if !input.is_subset_of(&output) {
            return Err(Error::BoundViolated(format!(
                "input interval {input} not inside output interval {output} at n = {}",
                self.n()
            )));
        }
        let big = |x: &BigUint| BigInt::from(x.clone());
        let ow = output.width();
        let pos = (input.lo() - output.lo()) / &ow;
        let width = input.width() / &ow;
        if pos != BigRational::new(big(&self.rel_lo), big(&self.out_w))
            || width != BigRational::new(big(&self.in_w), big(&self.out_w))
        {
            return Err(Error::BoundViolated(format!(
                "scaled state disagrees with recomputed intervals at n = {}",
                self.n()
            )));
        }
        if self.g.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::BoundViolated("g trace decreased".into()));
        }
        Ok(())
    }
}

/// Consumes one bit of a state value.
pub fn lk_step(mut state: LkState, bit: bool) -> LkState {
    state.step(bit);
    state
}

/// Result of [`lk_convert`].
#[derive(Clone, Debug)]
pub struct Conversion {
    /// The first `out_len` output bits.
    pub output: BitString,
    /// g(0), …, g(consumed).
    pub g_trace: Vec<usize>,
    pub consumed: usize,
}

fn stalled(state: &LkState, cap: usize) -> Error {
    Error::ConversionStalled {
        consumed: state.n(),
        cap,
        output_len: state.g(),
        partial: state.output().clone(),
        g_trace: state.g_trace().to_vec(),
    }
}

/// Reads input until `out_len` output bits exist. Fails with
/// [`Error::ConversionStalled`] when `input_cap` bits (or the whole stream)
/// are consumed first.
pub fn lk_convert(
    mu: &Measure,
    nu: &Measure,
    a: &mut dyn BitStream,
    out_len: usize,
    input_cap: usize,
) -> Result<Conversion> {
    let state = lk_convert_state(mu, nu, a, out_len, input_cap)?;
    Ok(Conversion {
        output: state.output().prefix(out_len),
        consumed: state.n(),
        g_trace: state.g,
    })
}

/// Like [`lk_convert`], returning the final state.
pub fn lk_convert_state(
    mu: &Measure,
    nu: &Measure,
    a: &mut dyn BitStream,
    out_len: usize,
    input_cap: usize,
) -> Result<LkState> {
    let mut state = LkState::new(mu, nu)?;
    while state.g() < out_len {
        let bit = if state.n() < input_cap {
            a.next_bit()
        } else {
            None
        };
        match bit {
            Some(b) => {
                state.step(b);
            }
            None => return Err(stalled(&state, input_cap)),
        }
    }
    Ok(state)
}

/// Feeds exactly `n` input bits.
pub fn lk_run(mu: &Measure, nu: &Measure, a: &mut dyn BitStream, n: usize) -> Result<LkState> {
    let mut state = LkState::new(mu, nu)?;
    feed(&mut state, a, n, n)?;
    Ok(state)
}

fn feed(state: &mut LkState, a: &mut dyn BitStream, upto: usize, cap: usize) -> Result<()> {
    while state.n() < upto {
        match a.next_bit() {
            Some(b) => {
                state.step(b);
            }
            None => return Err(stalled(state, cap)),
        }
    }
    Ok(())
}

/// One checkpoint of a conversion trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LkTracePoint {
    pub n: usize,
    pub g: usize,
    pub mu_mass: RatString,
    pub nu_mass: RatString,
}

/// μ(A↾n) and ν(B↾g(n)) at each checkpoint n ≤ state.n().
pub fn trace_points(state: &LkState, checkpoints: &[usize]) -> Vec<LkTracePoint> {
    checkpoints
        .iter()
        .filter(|&&n| n <= state.n())
        .map(|&n| {
            let g = state.g[n];
            LkTracePoint {
                n,
                g,
                mu_mass: state.mu.cylinder_mass(&state.input.prefix(n)).into(),
                nu_mass: state.nu.cylinder_mass(&state.output.prefix(g)).into(),
            }
        })
        .collect()
}

/// Powers of two below `n`, then `n` itself.
pub fn geometric_schedule(n: usize) -> Vec<usize> {
    let mut s: Vec<usize> = (0..usize::BITS)
        .map(|i| 1usize << i)
        .take_while(|&p| p < n)
        .collect();
    if n > 0 {
        s.push(n);
    }
    s
}

/// Outcome of [`kautz_check`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KautzReport {
    pub checked: usize,
    /// n with μ(A↾n) > ν(B↾g(n)); any entry is a hard failure.
    pub violations: usize,
    /// n with δ²·ν(B↾g(n)) ≤ μ(A↾n).
    pub witnesses: usize,
    pub first_witness: Option<usize>,
    pub last_witness: Option<usize>,
    /// Largest μ(A↾n)/ν(B↾g(n)) − δ² over the witnesses.
    pub max_witness_gap: Option<f64>,
    pub delta: RatString,
    pub warning: Option<String>,
}

/// Checks μ(A↾n) ≤ ν(B↾g(n)) exactly for every n ≤ `n_max` and counts the
/// n with δ²·ν(B↾g(n)) ≤ μ(A↾n), where δ is the smaller positivity
/// constant of the two measures.
///
/// The masses are tracked as the integer ratio P/Q = μ(A↾n)/ν(B↾g(n)),
/// updated from the conditionals along A and B independently of the
/// interval state, and compared with closed-form cylinder masses at
/// power-of-two checkpoints.
pub fn kautz_check(
    mu: &Measure,
    nu: &Measure,
    a: &mut dyn BitStream,
    n_max: usize,
) -> Result<KautzReport> {
    let delta = match (mu.positivity_delta(), nu.positivity_delta()) {
        (Some(x), Some(y)) => x.min(y),
        _ => {
            return Err(Error::NotPositive(
                "both measures must be strongly positive".into(),
            ))
        }
    };
    let d2_num = delta.numer().magnitude().pow(2u32);
    let d2_den = delta.denom().magnitude().pow(2u32);
    let mu_conds = integer_conditionals(mu)?;
    let nu_conds = integer_conditionals(nu)?;
    let mut state = LkState::new(mu, nu)?;
    let (mut p, mut q) = (BigUint::one(), BigUint::one());
    let (mut mu_ctx, mut nu_ctx) = (0, 0);
    let mut report = KautzReport {
        checked: 0,
        violations: 0,
        witnesses: 0,
        first_witness: None,
        last_witness: None,
        max_witness_gap: None,
        delta: delta.clone().into(),
        warning: None,
    };
    let d2 = crate::measures::rational_to_f64(&(&delta * &delta));
    for n in 1..=n_max {
        let Some(bit) = a.next_bit() else {
            return Err(stalled(&state, n_max));
        };
        let c = &mu_conds[mu_ctx];
        c.of(bit).mul_into(&mut p);
        c.den.mul_into(&mut q);
        mu_ctx = mu.next_context(mu_ctx, bit);
        let before = state.g();
        state.step(bit);
        for k in before..state.g() {
            let b = state.output().get(k).expect("emitted bit");
            let c = &nu_conds[nu_ctx];
            c.den.mul_into(&mut p);
            c.of(b).mul_into(&mut q);
            nu_ctx = nu.next_context(nu_ctx, b);
        }
        report.checked = n;
        if p > q {
            report.violations += 1;
            return Err(Error::BoundViolated(format!(
                "μ(A↾{n}) > ν(B↾{})",
                state.g()
            )));
        }
        if &d2_num * &q <= &d2_den * &p {
            report.witnesses += 1;
            report.first_witness.get_or_insert(n);
            report.last_witness = Some(n);
            let gap = (log2_biguint(&p) - log2_biguint(&q)).exp2() - d2;
            report.max_witness_gap = Some(report.max_witness_gap.map_or(gap, |m: f64| m.max(gap)));
        }
        if n.is_power_of_two() || n == n_max {
            let exact = mu.cylinder_mass(state.input()) / nu.cylinder_mass(state.output());
            let tracked = BigRational::new(BigInt::from(p.clone()), BigInt::from(q.clone()));
            if exact != tracked || exact != state.mass_ratio() {
                return Err(Error::BoundViolated(format!(
                    "tracked mass ratio disagrees with cylinder masses at n = {n}"
                )));
            }
        }
    }
    if report.witnesses == 0 {
        report.warning = Some(format!("no n ≤ {n_max} with δ²·ν(B↾g(n)) ≤ μ(A↾n)"));
    }
    Ok(report)
}

/// Input caps for [`lk_roundtrip`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RoundTripCaps {
    /// Most input bits read from `a`.
    pub forward: usize,
    /// Most bits fed back through the reverse conversion.
    pub backward: usize,
}

impl RoundTripCaps {
    pub fn both(cap: usize) -> Self {
        Self {
            forward: cap,
            backward: cap,
        }
    }
}

/// Converts a prefix of `a` from μ to ν, converts the result back from ν to
/// μ, and returns the length of the recovered prefix of `a`. The forward
/// prefix doubles until at least `n` bits are recovered or a cap is hit.
pub fn lk_roundtrip(
    mu: &Measure,
    nu: &Measure,
    a: &mut dyn BitStream,
    n: usize,
    caps: RoundTripCaps,
) -> Result<usize> {
    let mut fwd = LkState::new(mu, nu)?;
    let mut back = LkState::new(nu, mu)?;
    let mut m = (2 * n).max(64).min(caps.forward);
    loop {
        feed(&mut fwd, a, m, caps.forward)?;
        let b = fwd.output();
        let upto = b.len().min(caps.backward);
        while back.n() < upto {
            back.step(b.get(back.n()).expect("within output"));
        }
        let recovered = back.output();
        if !recovered.is_prefix_of(fwd.input()) {
            return Err(Error::BoundViolated(format!(
                "round trip produced {} bits that are not a prefix of the input",
                recovered.len()
            )));
        }
        let agreement = recovered.len();
        if agreement >= n {
            return Ok(agreement);
        }
        if m >= caps.forward || upto >= caps.backward {
            return Err(Error::ConversionStalled {
                consumed: fwd.n(),
                cap: caps.forward,
                output_len: agreement,
                partial: recovered.clone(),
                g_trace: back.g_trace().to_vec(),
            });
        }
        m = (2 * m).min(caps.forward);
    }
}

/// The pointwise rate g(n)/n at a geometric schedule up to `n_max`, with
/// target h(μ)/h(ν).
pub fn lk_rate(
    mu: &Measure,
    nu: &Measure,
    a: &mut dyn BitStream,
    n_max: usize,
) -> Result<RateReport> {
    let state = lk_run(mu, nu, a, n_max)?;
    Ok(rate_from_state(&state))
}

/// Builds the rate report of a finished conversion.
pub fn rate_from_state(state: &LkState) -> RateReport {
    let schedule = geometric_schedule(state.n());
    let oi_trace = schedule
        .iter()
        .map(|&n| {
            TracePoint::new(
                n,
                BigRational::new(BigInt::from(state.g[n]), BigInt::from(n)),
            )
        })
        .collect();
    let theoretical = match (state.mu.entropy_rate(), state.nu.entropy_rate()) {
        (Ok(hm), Ok(hn)) if hn > 0.0 => Some(hm / hn),
        _ => None,
    };
    let mut report = RateReport {
        generator: format!("levin-kautz:{}->{}", state.mu, state.nu),
        measure: state.mu.to_inline(),
        schedule,
        avg_by_n: Vec::new(),
        oi_trace,
        limsup_est: f64::NAN,
        liminf_est: f64::NAN,
        oi_limsup_est: None,
        oi_liminf_est: None,
        theoretical,
        seed: None,
        stream_id: None,
    };
    report.finish();
    report
}
