//! Computable measures on the Cantor space with exact rational cylinder
//! masses.
//!
//! Every supported measure has a finite set of *contexts*: the state that
//! determines the conditional probability of the next bit. Sequential
//! algorithms (interval refinement, sampling, the Levin–Kautz conversion)
//! walk contexts with [`Measure::next_context`] and read conditionals with
//! [`Measure::conditional`].
//!
//! Bit convention: `Bernoulli(p)` gives the bit 1 probability `p`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;

use num_bigint::{BigInt, BigUint, RandBigInt};
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bitseq::{format_rational, parse_rational, BitStream, BitString, RatInterval};
use crate::error::{Error, Result};

/// Index of a conditional-probability context; 0 is the empty history.
pub type Context = usize;

/// Largest block length accepted for step-Bernoulli tables.
pub const MAX_STEP: usize = 16;

// Markov carries six rationals; measures are few and long-lived.
#[allow(clippy::large_enum_variant)]
#[derive(Clone, Debug, PartialEq)]
pub enum MeasureKind {
    Lebesgue,
    /// `p` is the probability of the bit 1.
    Bernoulli {
        p: BigRational,
    },
    /// i.i.d. product of a distribution on length-`n` blocks; `table` is
    /// indexed by lexicographic rank.
    StepBernoulli {
        n: usize,
        table: Vec<BigRational>,
    },
    /// Stationary two-state chain; `transition[i][j]` is P(next = j | last = i).
    Markov {
        transition: [[BigRational; 2]; 2],
        stationary: [BigRational; 2],
    },
}

/// P(next bit = 0 | context), stored both reduced and as integers.
#[derive(Clone, Debug)]
pub struct Conditional {
    pub zero: BigRational,
    pub num: BigUint,
    pub den: BigUint,
    small: Option<(u64, u64)>,
}

impl Conditional {
    fn new(zero: BigRational) -> Self {
        let num = zero.numer().to_biguint().expect("nonnegative");
        let den = zero.denom().to_biguint().expect("positive");
        let small = num.to_u64().zip(den.to_u64());
        Self {
            zero,
            num,
            den,
            small,
        }
    }

    pub fn one(&self) -> BigRational {
        BigRational::one() - &self.zero
    }

    /// (numerator, denominator) of P(next = 0) when both fit in a u64.
    pub fn small(&self) -> Option<(u64, u64)> {
        self.small
    }

    /// P(next = bit | context).
    pub fn of(&self, bit: bool) -> BigRational {
        if bit {
            self.one()
        } else {
            self.zero.clone()
        }
    }
}

/// A measure handle: an immutable, cheaply clonable value.
#[derive(Clone)]
pub struct Measure {
    kind: MeasureKind,
    /// `None` marks a context that is reached with probability zero.
    conditionals: Arc<Vec<Option<Conditional>>>,
}

impl PartialEq for Measure {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
    }
}

impl fmt::Debug for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Measure({self})")
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_inline())
    }
}

fn rat(n: i64, d: i64) -> BigRational {
    BigRational::new(n.into(), d.into())
}

fn in_open_unit(r: &BigRational) -> bool {
    r.is_positive() && r < &BigRational::one()
}

impl Measure {
    pub fn lebesgue() -> Self {
        Self::from_kind(MeasureKind::Lebesgue)
    }

    pub fn bernoulli(p: BigRational) -> Result<Self> {
        if !in_open_unit(&p) {
            return Err(Error::InvalidMeasure(format!(
                "Bernoulli parameter {} is not in (0,1)",
                format_rational(&p)
            )));
        }
        Ok(Self::from_kind(MeasureKind::Bernoulli { p }))
    }

    /// An `n`-step Bernoulli measure from a table indexed by lexicographic
    /// rank. Entries must be nonnegative and sum to exactly 1; zero entries
    /// are accepted so that [`Measure::positivity_delta`] can report them,
    /// but operations that need a positive measure reject such tables.
    pub fn step_bernoulli(n: usize, table: Vec<BigRational>) -> Result<Self> {
        if n == 0 || n > MAX_STEP {
            return Err(Error::InvalidMeasure(format!(
                "step length {n} outside 1..={MAX_STEP}"
            )));
        }
        if table.len() != 1 << n {
            return Err(Error::InvalidMeasure(format!(
                "{}-step table needs {} entries, got {}",
                n,
                1usize << n,
                table.len()
            )));
        }
        if table.iter().any(|v| v.is_negative()) {
            return Err(Error::InvalidMeasure("negative table entry".into()));
        }
        let sum: BigRational = table.iter().sum();
        if !sum.is_one() {
            return Err(Error::InvalidMeasure(format!(
                "table sums to {}, not 1",
                format_rational(&sum)
            )));
        }
        Ok(Self::from_kind(MeasureKind::StepBernoulli { n, table }))
    }

    /// Same as [`Measure::step_bernoulli`] but keyed by block strings.
    pub fn step_bernoulli_from_map(
        n: usize,
        table: &BTreeMap<BitString, BigRational>,
    ) -> Result<Self> {
        if n == 0 || n > MAX_STEP {
            return Err(Error::InvalidMeasure(format!(
                "step length {n} outside 1..={MAX_STEP}"
            )));
        }
        let mut entries = vec![None; 1 << n];
        for (k, v) in table {
            if k.len() != n {
                return Err(Error::InvalidMeasure(format!(
                    "table key {k:?} does not have length {n}"
                )));
            }
            let r = crate::bitseq::lex_rank(k).to_usize().expect("small rank");
            entries[r] = Some(v.clone());
        }
        let table = entries
            .into_iter()
            .enumerate()
            .map(|(r, v)| {
                v.ok_or_else(|| {
                    Error::InvalidMeasure(format!(
                        "missing table entry for {:?}",
                        BitString::from_rank(r as u64, n)
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::step_bernoulli(n, table)
    }

    /// A stationary Markov chain on {0,1}. `transition[i][j]` is the
    /// probability of moving from bit `i` to bit `j`; rows must sum to 1 with
    /// every entry in (0,1). The initial law is the exact stationary vector.
    pub fn markov(transition: [[BigRational; 2]; 2]) -> Result<Self> {
        for row in &transition {
            if !row.iter().all(in_open_unit) {
                return Err(Error::InvalidMeasure(
                    "transition entries must lie in (0,1)".into(),
                ));
            }
            if !(&row[0] + &row[1]).is_one() {
                return Err(Error::InvalidMeasure(
                    "transition rows must sum to 1".into(),
                ));
            }
        }
        // π P = π for a 2-state chain: π0·P01 = π1·P10.
        let flow = &transition[0][1] + &transition[1][0];
        let stationary = [&transition[1][0] / &flow, &transition[0][1] / &flow];
        Ok(Self::from_kind(MeasureKind::Markov {
            transition,
            stationary,
        }))
    }

    fn from_kind(kind: MeasureKind) -> Self {
        let conditionals = Arc::new(build_conditionals(&kind));
        Self { kind, conditionals }
    }

    pub fn kind(&self) -> &MeasureKind {
        &self.kind
    }

    /// Block length of an n-step Bernoulli measure; 1 for Lebesgue and
    /// Bernoulli; `None` for Markov chains.
    pub fn step(&self) -> Option<usize> {
        match &self.kind {
            MeasureKind::Lebesgue | MeasureKind::Bernoulli { .. } => Some(1),
            MeasureKind::StepBernoulli { n, .. } => Some(*n),
            MeasureKind::Markov { .. } => None,
        }
    }

    pub fn is_shift_invariant(&self) -> bool {
        !matches!(self.kind, MeasureKind::StepBernoulli { n, .. } if n > 1)
    }

    /// True when every cylinder has positive mass.
    pub fn is_positive(&self) -> bool {
        match &self.kind {
            MeasureKind::StepBernoulli { table, .. } => table.iter().all(|v| v.is_positive()),
            _ => true,
        }
    }

    pub(crate) fn require_positive(&self) -> Result<()> {
        if self.is_positive() {
            Ok(())
        } else {
            Err(Error::NotPositive(self.to_inline()))
        }
    }

    pub fn context_count(&self) -> usize {
        self.conditionals.len()
    }

    pub fn next_context(&self, ctx: Context, bit: bool) -> Context {
        match &self.kind {
            MeasureKind::Lebesgue | MeasureKind::Bernoulli { .. } => 0,
            MeasureKind::Markov { .. } => 1 + bit as usize,
            MeasureKind::StepBernoulli { n, .. } => {
                // Heap layout: contexts of depth d occupy [2^d − 1, 2^{d+1} − 1).
                let child = 2 * ctx + 1 + bit as usize;
                if child >= (1 << n) - 1 {
                    0
                } else {
                    child
                }
            }
        }
    }

    /// P(next = 0 | context), or `None` if the context has mass zero.
    pub fn conditional(&self, ctx: Context) -> Option<&Conditional> {
        self.conditionals[ctx].as_ref()
    }

    /// Exact μ(σ).
    pub fn cylinder_mass(&self, sigma: &BitString) -> BigRational {
        match &self.kind {
            MeasureKind::Lebesgue => BigRational::new(BigInt::one(), BigInt::one() << sigma.len()),
            MeasureKind::Bernoulli { p } => {
                let ones = sigma.count_ones();
                let q = BigRational::one() - p;
                pow(p, ones) * pow(&q, sigma.len() - ones)
            }
            MeasureKind::StepBernoulli { n, table } => {
                let n = *n;
                let full = sigma.len() / n;
                let mut counts: HashMap<usize, usize> = HashMap::new();
                for block in sigma.as_slice()[..full * n].chunks(n) {
                    *counts.entry(rank_of(block)).or_default() += 1;
                }
                let mut mass = BigRational::one();
                for (r, c) in counts {
                    mass *= pow(&table[r], c);
                }
                let rest = &sigma.as_slice()[full * n..];
                mass * step_marginal(table, n, rest)
            }
            MeasureKind::Markov {
                transition,
                stationary,
            } => {
                let Some(first) = sigma.get(0) else {
                    return BigRational::one();
                };
                let mut counts = [[0usize; 2]; 2];
                for w in sigma.as_slice().windows(2) {
                    counts[w[0] as usize][w[1] as usize] += 1;
                }
                let mut mass = stationary[first as usize].clone();
                for i in 0..2 {
                    for j in 0..2 {
                        mass *= pow(&transition[i][j], counts[i][j]);
                    }
                }
                mass
            }
        }
    }

    /// μ(σ) as a product of conditionals along σ; agrees with
    /// [`Measure::cylinder_mass`].
    pub fn sequential_mass(&self, sigma: &BitString) -> BigRational {
        let mut ctx = 0;
        let mut mass = BigRational::one();
        for b in sigma.iter() {
            match self.conditional(ctx) {
                Some(c) => mass *= c.of(b),
                None => return BigRational::zero(),
            }
            ctx = self.next_context(ctx, b);
        }
        mass
    }

    /// The interval `(σ)_μ`: left endpoint is the mass of all same-length
    /// strings lexicographically below σ, width is μ(σ). Built by splitting
    /// `[0,1]` one conditional at a time.
    pub fn measure_interval(&self, sigma: &BitString) -> RatInterval {
        // lo = l/d and width = w/d over a common, unreduced denominator.
        let mut l = BigUint::zero();
        let mut w = BigUint::one();
        let mut d = BigUint::one();
        let mut ctx = 0;
        for b in sigma.iter() {
            match self.conditional(ctx) {
                Some(c) => {
                    d *= &c.den;
                    l *= &c.den;
                    let left = &w * &c.num;
                    if b {
                        l += &left;
                        w = &w * &c.den - left;
                    } else {
                        w = left;
                    }
                }
                None => {
                    // A null context: all mass goes to neither child.
                    w = BigUint::zero();
                }
            }
            ctx = self.next_context(ctx, b);
        }
        let d = BigInt::from(d);
        let lo = BigRational::new(BigInt::from(l.clone()), d.clone());
        let hi = BigRational::new(BigInt::from(l + w), d);
        RatInterval::new(lo, hi).expect("refined interval stays in [0,1]")
    }

    /// Entropy rate in bits per symbol.
    pub fn entropy_rate(&self) -> Result<f64> {
        match &self.kind {
            MeasureKind::Lebesgue => Ok(1.0),
            MeasureKind::Bernoulli { p } => Ok(binary_entropy(rational_to_f64(p))),
            MeasureKind::StepBernoulli { n, table } => {
                let h: f64 = table.iter().map(|v| plogp(rational_to_f64(v))).sum();
                Ok(h / *n as f64)
            }
            MeasureKind::Markov {
                transition,
                stationary,
            } => {
                let mut h = 0.0;
                for i in 0..2 {
                    let row: f64 = transition[i]
                        .iter()
                        .map(|v| plogp(rational_to_f64(v)))
                        .sum();
                    h += rational_to_f64(&stationary[i]) * row;
                }
                Ok(h)
            }
        }
    }

    /// Largest δ ≤ 1/2 with every conditional next-bit probability in
    /// `[δ, 1−δ]`; `None` if some conditional reaches 0 or 1.
    pub fn positivity_delta(&self) -> Option<BigRational> {
        let half = rat(1, 2);
        let mut delta = half;
        for c in self.conditionals.iter() {
            let c = c.as_ref()?;
            let m = c.zero.clone().min(c.one());
            if !m.is_positive() {
                return None;
            }
            delta = delta.min(m);
        }
        Some(delta)
    }

    /// Exact mass of the set of sequences matching `pattern`, where `None`
    /// leaves a position free. Computed by dynamic programming over contexts.
    pub fn pattern_mass(&self, pattern: &[Option<bool>]) -> BigRational {
        let mut layer: HashMap<Context, BigRational> = HashMap::from([(0, BigRational::one())]);
        for constraint in pattern {
            let mut next: HashMap<Context, BigRational> = HashMap::new();
            for (ctx, mass) in layer {
                let Some(c) = self.conditional(ctx) else {
                    continue;
                };
                for bit in [false, true] {
                    if constraint.is_some_and(|want| want != bit) {
                        continue;
                    }
                    let p = c.of(bit);
                    if p.is_zero() {
                        continue;
                    }
                    *next
                        .entry(self.next_context(ctx, bit))
                        .or_insert_with(BigRational::zero) += &mass * p;
                }
            }
            layer = next;
        }
        layer.into_values().sum()
    }

    /// Compact inline form, accepted back by [`Measure::parse`].
    pub fn to_inline(&self) -> String {
        match &self.kind {
            MeasureKind::Lebesgue => "lebesgue".into(),
            MeasureKind::Bernoulli { p } => format!("bernoulli:{}", format_rational(p)),
            MeasureKind::StepBernoulli { n, table } => {
                let entries: Vec<String> = table
                    .iter()
                    .enumerate()
                    .map(|(r, v)| {
                        format!(
                            "{}={}",
                            BitString::from_rank(r as u64, *n),
                            format_rational(v)
                        )
                    })
                    .collect();
                format!("step:{n}:{}", entries.join(","))
            }
            MeasureKind::Markov { transition, .. } => format!(
                "markov:{},{};{},{}",
                format_rational(&transition[0][0]),
                format_rational(&transition[0][1]),
                format_rational(&transition[1][0]),
                format_rational(&transition[1][1])
            ),
        }
    }

    pub fn to_config(&self) -> MeasureConfig {
        match &self.kind {
            MeasureKind::Lebesgue => MeasureConfig::Lebesgue,
            MeasureKind::Bernoulli { p } => MeasureConfig::Bernoulli {
                p: format_rational(p),
            },
            MeasureKind::StepBernoulli { n, table } => MeasureConfig::StepBernoulli {
                n: *n,
                table: table
                    .iter()
                    .enumerate()
                    .map(|(r, v)| {
                        (
                            BitString::from_rank(r as u64, *n).to_string(),
                            format_rational(v),
                        )
                    })
                    .collect(),
            },
            MeasureKind::Markov { transition, .. } => MeasureConfig::Markov {
                transition: transition
                    .iter()
                    .map(|row| [format_rational(&row[0]), format_rational(&row[1])])
                    .collect::<Vec<_>>()
                    .try_into()
                    .expect("two rows"),
            },
        }
    }

    /// Parses a measure from its inline form (`lebesgue`, `bernoulli:1/4`,
    /// `markov:9/10,1/10;1/2,1/2`, `step:2:00=1/4,01=1/4,10=1/4,11=1/4`) or
    /// from a JSON [`MeasureConfig`].
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.starts_with('{') {
            let cfg: MeasureConfig = serde_json::from_str(s)
                .map_err(|e| Error::Parse(format!("measure config: {e}")))?;
            return cfg.build();
        }
        let (tag, rest) = s.split_once(':').unwrap_or((s, ""));
        match tag.to_ascii_lowercase().as_str() {
            "lebesgue" | "uniform" | "lambda" => Ok(Self::lebesgue()),
            "bernoulli" => Self::bernoulli(parse_rational(rest)?),
            "markov" => {
                let rows: Vec<&str> = rest.split(';').collect();
                if rows.len() != 2 {
                    return Err(Error::Parse(format!("markov needs two rows: {rest:?}")));
                }
                let mut t: [[BigRational; 2]; 2] = Default::default();
                for (i, row) in rows.iter().enumerate() {
                    let cells: Vec<&str> = row.split(',').collect();
                    if cells.len() != 2 {
                        return Err(Error::Parse(format!(
                            "markov row {row:?} needs two entries"
                        )));
                    }
                    for (j, c) in cells.iter().enumerate() {
                        t[i][j] = parse_rational(c)?;
                    }
                }
                Self::markov(t)
            }
            "step" | "step_bernoulli" => {
                let (n, entries) = rest.split_once(':').ok_or_else(|| {
                    Error::Parse(format!("step measure needs n:table, got {rest:?}"))
                })?;
                let n: usize = n
                    .trim()
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad step length {n:?}")))?;
                let mut table = BTreeMap::new();
                for e in entries.split(',') {
                    let (k, v) = e
                        .split_once('=')
                        .ok_or_else(|| Error::Parse(format!("bad table entry {e:?}")))?;
                    table.insert(BitString::parse(k)?, parse_rational(v)?);
                }
                Self::step_bernoulli_from_map(n, &table)
            }
            _ => Err(Error::Parse(format!("unknown measure {s:?}"))),
        }
    }
}

/// JSON-compatible measure description; rationals are "num/den" strings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MeasureConfig {
    Lebesgue,
    Bernoulli {
        p: String,
    },
    StepBernoulli {
        n: usize,
        table: BTreeMap<String, String>,
    },
    Markov {
        transition: [[String; 2]; 2],
    },
}

impl MeasureConfig {
    pub fn build(&self) -> Result<Measure> {
        match self {
            MeasureConfig::Lebesgue => Ok(Measure::lebesgue()),
            MeasureConfig::Bernoulli { p } => Measure::bernoulli(parse_rational(p)?),
            MeasureConfig::StepBernoulli { n, table } => {
                let table = table
                    .iter()
                    .map(|(k, v)| Ok((BitString::parse(k)?, parse_rational(v)?)))
                    .collect::<Result<BTreeMap<_, _>>>()?;
                Measure::step_bernoulli_from_map(*n, &table)
            }
            MeasureConfig::Markov { transition } => {
                let mut t: [[BigRational; 2]; 2] = Default::default();
                for i in 0..2 {
                    for j in 0..2 {
                        t[i][j] = parse_rational(&transition[i][j])?;
                    }
                }
                Measure::markov(t)
            }
        }
    }
}

fn build_conditionals(kind: &MeasureKind) -> Vec<Option<Conditional>> {
    match kind {
        MeasureKind::Lebesgue => vec![Some(Conditional::new(rat(1, 2)))],
        MeasureKind::Bernoulli { p } => vec![Some(Conditional::new(BigRational::one() - p))],
        MeasureKind::Markov {
            transition,
            stationary,
        } => vec![
            Some(Conditional::new(stationary[0].clone())),
            Some(Conditional::new(transition[0][0].clone())),
            Some(Conditional::new(transition[1][0].clone())),
        ],
        MeasureKind::StepBernoulli { n, table } => {
            // marginals[d][r]: mass of blocks extending the depth-d prefix of rank r.
            let mut marginals: Vec<Vec<BigRational>> = vec![Vec::new(); n + 1];
            marginals[*n] = table.clone();
            for d in (0..*n).rev() {
                marginals[d] = (0..1usize << d)
                    .map(|r| &marginals[d + 1][2 * r] + &marginals[d + 1][2 * r + 1])
                    .collect();
            }
            let mut out = Vec::with_capacity((1 << n) - 1);
            for d in 0..*n {
                for r in 0..1usize << d {
                    let parent = &marginals[d][r];
                    out.push(if parent.is_zero() {
                        None
                    } else {
                        Some(Conditional::new(&marginals[d + 1][2 * r] / parent))
                    });
                }
            }
            out
        }
    }
}

fn rank_of(bits: &[bool]) -> usize {
    bits.iter().fold(0, |acc, &b| (acc << 1) | b as usize)
}

/// Mass of the table entries extending a partial block.
fn step_marginal(table: &[BigRational], n: usize, prefix: &[bool]) -> BigRational {
    let free = n - prefix.len();
    let base = rank_of(prefix) << free;
    table[base..base + (1 << free)].iter().sum()
}

fn pow(base: &BigRational, exp: usize) -> BigRational {
    num_traits::pow::pow(base.clone(), exp)
}

fn plogp(p: f64) -> f64 {
    if p <= 0.0 {
        0.0
    } else {
        -p * p.log2()
    }
}

/// H(p) in bits.
pub fn binary_entropy(p: f64) -> f64 {
    plogp(p) + plogp(1.0 - p)
}

/// log₂ of a positive big integer, accurate to double precision.
pub fn log2_biguint(x: &BigUint) -> f64 {
    let bits = x.bits();
    if bits <= 64 {
        return (x.to_u64().expect("fits") as f64).log2();
    }
    let shift = bits - 64;
    let top = (x >> shift).to_u64().expect("64 bits");
    (top as f64).log2() + shift as f64
}

/// log₂ of a positive rational.
pub fn log2_rational(r: &BigRational) -> f64 {
    assert!(r.is_positive(), "log of a non-positive rational");
    log2_biguint(&r.numer().to_biguint().unwrap()) - log2_biguint(&r.denom().to_biguint().unwrap())
}

/// Nearest double to a rational, without overflow for huge parts.
pub fn rational_to_f64(r: &BigRational) -> f64 {
    if r.is_zero() {
        return 0.0;
    }
    if let (Some(n), Some(d)) = (r.numer().to_f64(), r.denom().to_f64()) {
        if n.is_finite() && d.is_finite() && n.abs() < 1e300 && d < 1e300 {
            return n / d;
        }
    }
    let sign = if r.is_negative() { -1.0 } else { 1.0 };
    sign * log2_rational(&r.abs()).exp2()
}

/// −log₂ μ(x↾n) / n: the Shannon–McMillan–Breiman estimate of h(μ).
pub fn smb_entropy_estimate(mu: &Measure, x: &mut dyn BitStream, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidArgument("SMB estimate needs n ≥ 1".into()));
    }
    mu.require_positive()?;
    let prefix = x.take_bits(n);
    if prefix.len() < n {
        return Err(Error::InvalidArgument(format!(
            "stream ended after {} of {n} bits",
            prefix.len()
        )));
    }
    Ok(-log2_rational(&mu.cylinder_mass(&prefix)) / n as f64)
}

/// An infinite, seeded sample path of a measure, drawn bit by bit from the
/// conditional next-bit probabilities.
pub struct MeasureStream {
    measure: Measure,
    seed: u64,
    rng: ChaCha8Rng,
    ctx: Context,
    pos: usize,
    buffer: u64,
    buffered: u32,
}

impl MeasureStream {
    pub fn new(measure: Measure, seed: u64) -> Self {
        Self {
            measure,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            ctx: 0,
            pos: 0,
            buffer: 0,
            buffered: 0,
        }
    }

    pub fn measure(&self) -> &Measure {
        &self.measure
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn fair_bit(&mut self) -> bool {
        if self.buffered == 0 {
            self.buffer = self.rng.next_u64();
            self.buffered = 64;
        }
        self.buffered -= 1;
        (self.buffer >> self.buffered) & 1 == 1
    }
}

impl BitStream for MeasureStream {
    fn next_bit(&mut self) -> Option<bool> {
        let bit = match &self.measure.kind {
            MeasureKind::Lebesgue => self.fair_bit(),
            _ => {
                let c = self
                    .measure
                    .conditional(self.ctx)
                    .expect("sampling never enters a null context");
                match c.small {
                    Some((num, den)) => self.rng.gen_range(0..den) >= num,
                    None => {
                        let (num, den) = (c.num.clone(), c.den.clone());
                        self.rng.gen_biguint_below(&den) >= num
                    }
                }
            }
        };
        self.ctx = self.measure.next_context(self.ctx, bit);
        self.pos += 1;
        Some(bit)
    }

    fn position(&self) -> usize {
        self.pos
    }

    fn reset(&mut self) {
        *self = Self::new(self.measure.clone(), self.seed);
    }
}

/// `n` bits drawn from μ with a deterministic seeded generator.
pub fn sample(mu: &Measure, seed: u64, n: usize) -> BitString {
    MeasureStream::new(mu.clone(), seed).take_bits(n)
}

/// The measures exercised by the bundled experiments.
pub mod bundled {
    use super::*;

    pub fn bernoulli_quarter() -> Measure {
        Measure::bernoulli(rat(1, 4)).unwrap()
    }

    /// P = [[9/10, 1/10], [1/2, 1/2]], stationary (5/6, 1/6).
    pub fn markov() -> Measure {
        Measure::markov([[rat(9, 10), rat(1, 10)], [rat(1, 2), rat(1, 2)]]).unwrap()
    }

    /// A 2-step Bernoulli measure with distinct positive block masses.
    pub fn step2() -> Measure {
        Measure::step_bernoulli(2, vec![rat(1, 10), rat(3, 10), rat(2, 5), rat(1, 5)]).unwrap()
    }

    pub fn all() -> Vec<(&'static str, Measure)> {
        vec![
            ("lebesgue", Measure::lebesgue()),
            ("bernoulli:1/4", bernoulli_quarter()),
            ("bernoulli:3/10", Measure::bernoulli(rat(3, 10)).unwrap()),
            ("markov", markov()),
            ("step2", step2()),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_integer::Integer;

    fn bs(s: &str) -> BitString {
        BitString::parse(s).unwrap()
    }

    fn is_reduced(r: &BigRational) -> bool {
        r.numer().gcd(r.denom()).is_one()
    }

    /// Σ_{τ <lex σ, |τ| = |σ|} μ(τ), summed literally.
    fn interval_by_enumeration(mu: &Measure, sigma: &BitString) -> (BigRational, BigRational) {
        let lo: BigRational = BitString::all_of_len(sigma.len())
            .filter(|t| t < sigma)
            .map(|t| mu.cylinder_mass(&t))
            .sum();
        let hi = &lo + mu.cylinder_mass(sigma);
        (lo, hi)
    }

    #[test]
    fn cylinder_mass_examples() {
        assert_eq!(Measure::lebesgue().cylinder_mass(&bs("010")), rat(1, 8));
        let b = Measure::bernoulli(rat(1, 3)).unwrap();
        assert_eq!(b.cylinder_mass(&bs("01")), rat(2, 9));
        for (_, mu) in bundled::all() {
            assert_eq!(mu.cylinder_mass(&BitString::new()), BigRational::one());
        }
    }

    #[test]
    fn step_mass_uses_marginal_for_partial_block() {
        let mu = bundled::step2();
        // "01" full block (3/10) then "1" partial: 2/5 + 1/5.
        assert_eq!(mu.cylinder_mass(&bs("011")), rat(3, 10) * rat(3, 5));
    }

    #[test]
    fn additivity_exhaustive() {
        for (name, mu) in bundled::all() {
            for n in 0..=12 {
                for s in BitString::all_of_len(n) {
                    let m = mu.cylinder_mass(&s);
                    let split =
                        mu.cylinder_mass(&s.child(false)) + mu.cylinder_mass(&s.child(true));
                    assert_eq!(m, split, "{name} at {s:?}");
                }
            }
        }
    }

    #[test]
    fn sequential_mass_agrees() {
        for (_, mu) in bundled::all() {
            for n in 0..=9 {
                for s in BitString::all_of_len(n) {
                    assert_eq!(mu.cylinder_mass(&s), mu.sequential_mass(&s));
                }
            }
        }
    }

    #[test]
    fn measure_interval_examples() {
        for n in 0..6 {
            for s in BitString::all_of_len(n) {
                assert_eq!(
                    Measure::lebesgue().measure_interval(&s),
                    crate::bitseq::dyadic_interval(&s)
                );
            }
        }
        let b = Measure::bernoulli(rat(1, 3)).unwrap();
        let i = b.measure_interval(&bs("1"));
        assert_eq!((i.lo(), i.hi()), (&rat(2, 3), &BigRational::one()));
    }

    #[test]
    fn measure_interval_matches_literal_sum() {
        for (name, mu) in bundled::all() {
            for n in 0..=8 {
                for s in BitString::all_of_len(n) {
                    let i = mu.measure_interval(&s);
                    let (lo, hi) = interval_by_enumeration(&mu, &s);
                    assert_eq!((i.lo(), i.hi()), (&lo, &hi), "{name} at {s:?}");
                    assert_eq!(i.width(), mu.cylinder_mass(&s));
                }
            }
        }
    }

    #[test]
    fn interval_children_partition_parent() {
        for (_, mu) in bundled::all() {
            for n in 0..8 {
                for s in BitString::all_of_len(n) {
                    let p = mu.measure_interval(&s);
                    let l = mu.measure_interval(&s.child(false));
                    let r = mu.measure_interval(&s.child(true));
                    assert_eq!(p.lo(), l.lo());
                    assert_eq!(l.hi(), r.lo());
                    assert_eq!(r.hi(), p.hi());
                }
            }
        }
    }

    #[test]
    fn shift_invariance_exact() {
        for (name, mu) in bundled::all() {
            let step = mu.step().unwrap_or(1);
            for n in 0..=10 {
                for tau in BitString::all_of_len(n) {
                    let pre: BigRational = BitString::all_of_len(step)
                        .map(|rho| mu.cylinder_mass(&rho.concat(&tau)))
                        .sum();
                    assert_eq!(pre, mu.cylinder_mass(&tau), "{name} at {tau:?}");
                }
            }
        }
    }

    #[test]
    fn markov_stationary_vector() {
        let MeasureKind::Markov { stationary, .. } = bundled::markov().kind().clone() else {
            unreachable!()
        };
        assert_eq!(stationary, [rat(5, 6), rat(1, 6)]);
        assert!(stationary.iter().all(is_reduced));
    }

    #[test]
    fn entropy_examples() {
        let h = |p: i64, q: i64| {
            Measure::bernoulli(rat(p, q))
                .unwrap()
                .entropy_rate()
                .unwrap()
        };
        assert_eq!(h(1, 2), 1.0);
        // H(1/4) = 2 − (3/4)·log₂3.
        let expected = 2.0 - 0.75 * 3f64.log2();
        assert!((h(1, 4) - expected).abs() < 1e-12);
        assert!((h(1, 4) - 0.811278).abs() < 1e-6);
        let fair = Measure::markov([[rat(1, 2), rat(1, 2)], [rat(1, 2), rat(1, 2)]]).unwrap();
        assert_eq!(fair.entropy_rate().unwrap(), 1.0);
        assert_eq!(Measure::lebesgue().entropy_rate().unwrap(), 1.0);
    }

    #[test]
    fn entropy_matches_block_entropy_limit() {
        // −(1/n) Σ μ(σ) log μ(σ) over all length-n strings approaches h(μ);
        // for Markov chains the n-block entropy is H(π) + (n−1)h exactly.
        let mu = bundled::markov();
        let h = mu.entropy_rate().unwrap();
        let block = |n: usize| -> f64 {
            BitString::all_of_len(n)
                .map(|s| plogp(rational_to_f64(&mu.cylinder_mass(&s))))
                .sum()
        };
        let diff = block(12) - block(11);
        assert!((diff - h).abs() < 1e-9, "{diff} vs {h}");
        let step = bundled::step2();
        let h2 = step.entropy_rate().unwrap();
        let b2: f64 = BitString::all_of_len(8)
            .map(|s| plogp(rational_to_f64(&step.cylinder_mass(&s))))
            .sum();
        assert!((b2 / 8.0 - h2).abs() < 1e-12);
    }

    #[test]
    fn smb_examples() {
        let mut x = MeasureStream::new(Measure::bernoulli(rat(1, 3)).unwrap(), 3);
        assert_eq!(
            smb_entropy_estimate(&Measure::lebesgue(), &mut x, 37).unwrap(),
            1.0
        );
        let q = bundled::bernoulli_quarter();
        let mut zeros = crate::bitseq::VecStream::new(BitString::repeat(false, 100));
        let est = smb_entropy_estimate(&q, &mut zeros, 100).unwrap();
        assert!((est - (4f64 / 3.0).log2()).abs() < 1e-12);
        assert!((est - 0.415).abs() < 1e-3);
        assert!(smb_entropy_estimate(&q, &mut zeros, 0).is_err());
    }

    #[test]
    fn smb_converges_on_samples() {
        let mu = bundled::bernoulli_quarter();
        let mut x = MeasureStream::new(mu.clone(), 1);
        let est = smb_entropy_estimate(&mu, &mut x, 100_000).unwrap();
        assert!((est - 0.811278).abs() < 0.02, "{est}");
    }

    #[test]
    fn positivity_examples() {
        assert_eq!(Measure::lebesgue().positivity_delta(), Some(rat(1, 2)));
        assert_eq!(
            bundled::bernoulli_quarter().positivity_delta(),
            Some(rat(1, 4))
        );
        assert_eq!(bundled::markov().positivity_delta(), Some(rat(1, 10)));
        let zero =
            Measure::step_bernoulli(2, vec![rat(1, 2), rat(0, 1), rat(1, 4), rat(1, 4)]).unwrap();
        assert_eq!(zero.positivity_delta(), None);
        assert!(!zero.is_positive());
        // Within-block conditionals of step2: 2/5, 1/4, 2/3 → δ = 1/4.
        assert_eq!(bundled::step2().positivity_delta(), Some(rat(1, 4)));
    }

    #[test]
    fn invalid_measures_rejected() {
        assert!(Measure::bernoulli(rat(0, 1)).is_err());
        assert!(Measure::bernoulli(rat(1, 1)).is_err());
        assert!(Measure::step_bernoulli(2, vec![rat(1, 4); 3]).is_err());
        assert!(Measure::step_bernoulli(1, vec![rat(1, 4), rat(1, 4)]).is_err());
        assert!(Measure::markov([[rat(1, 2), rat(1, 3)], [rat(1, 2), rat(1, 2)]]).is_err());
        assert!(Measure::markov([[rat(1, 1), rat(0, 1)], [rat(1, 2), rat(1, 2)]]).is_err());
    }

    #[test]
    fn sampling_is_deterministic_and_prefix_stable() {
        for (_, mu) in bundled::all() {
            assert!(sample(&mu, 5, 0).is_empty());
            let a = sample(&mu, 9, 500);
            let b = sample(&mu, 9, 1200);
            assert_eq!(a, b.prefix(500));
            let mut s = MeasureStream::new(mu.clone(), 9);
            s.take_bits(77);
            s.reset();
            assert_eq!(s.take_bits(500), a);
        }
    }

    #[test]
    fn fair_sampling_mean() {
        let x = sample(&Measure::bernoulli(rat(1, 2)).unwrap(), 7, 1_000_000);
        let mean = x.count_ones() as f64 / x.len() as f64;
        assert!((mean - 0.5).abs() < 0.002, "{mean}");
    }

    #[test]
    fn markov_sampling_transition_frequencies() {
        let x = sample(&bundled::markov(), 11, 1_000_000);
        let mut counts = [[0f64; 2]; 2];
        for w in x.as_slice().windows(2) {
            counts[w[0] as usize][w[1] as usize] += 1.0;
        }
        let p = [[0.9, 0.1], [0.5, 0.5]];
        for i in 0..2 {
            let row = counts[i][0] + counts[i][1];
            for j in 0..2 {
                assert!((counts[i][j] / row - p[i][j]).abs() < 0.01);
            }
        }
    }

    #[test]
    fn pattern_mass_matches_enumeration() {
        let pattern = [Some(true), None, None, Some(false), None, Some(true)];
        for (name, mu) in bundled::all() {
            let brute: BigRational = BitString::all_of_len(pattern.len())
                .filter(|s| {
                    pattern
                        .iter()
                        .zip(s.iter())
                        .all(|(p, b)| p.is_none_or(|want| want == b))
                })
                .map(|s| mu.cylinder_mass(&s))
                .sum();
            assert_eq!(mu.pattern_mass(&pattern), brute, "{name}");
        }
    }

    #[test]
    fn parse_and_print_roundtrip() {
        for (_, mu) in bundled::all() {
            assert_eq!(Measure::parse(&mu.to_inline()).unwrap(), mu);
            let json = serde_json::to_string(&mu.to_config()).unwrap();
            assert_eq!(Measure::parse(&json).unwrap(), mu);
        }
        let m = Measure::parse(r#"{"kind":"bernoulli","p":"1/4"}"#).unwrap();
        assert_eq!(m, bundled::bernoulli_quarter());
        assert!(Measure::parse("poisson:3").is_err());
        assert!(Measure::parse("bernoulli:3/2").is_err());
    }

    #[test]
    fn big_rational_helpers() {
        let huge = BigRational::new(BigInt::from(3).pow(900), BigInt::from(4).pow(800));
        let expect = 900.0 * 3f64.log2() - 1600.0;
        assert!((log2_rational(&huge) - expect).abs() < 1e-9);
        assert_eq!(rational_to_f64(&rat(3, 8)), 0.375);
        assert!((log2_biguint(&BigUint::from(1024u32)) - 10.0).abs() < 1e-15);
    }
}
