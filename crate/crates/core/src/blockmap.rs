//! n-block maps, the von Neumann extractor, and the Peres iteration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};

use crate::bitseq::{BitStream, BitString};
use crate::error::{Error, Result};
use crate::generators::Generator;
use crate::measures::Measure;

/// A generator that acts independently on consecutive length-n blocks and
/// ignores a trailing incomplete block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockMap {
    n: usize,
    /// Indexed by the lexicographic rank of the block.
    table: Vec<BitString>,
    name: String,
}

/// Largest block length accepted for tables.
pub const MAX_BLOCK: usize = 20;

/// The 2-block map 10 ↦ 0, 01 ↦ 1, 00, 11 ↦ ε.
pub fn von_neumann() -> BlockMap {
    let table = vec![
        BitString::new(),
        BitString::repeat(true, 1),
        BitString::repeat(false, 1),
        BitString::new(),
    ];
    BlockMap {
        n: 2,
        table,
        name: "von-neumann".into(),
    }
}

/// Validates a block table: every length-n block needs an entry and at
/// least one entry must be nonempty.
pub fn make_block_map(n: usize, table: &BTreeMap<BitString, BitString>) -> Result<BlockMap> {
    if n == 0 || n > MAX_BLOCK {
        return Err(Error::InvalidArgument(format!(
            "block length {n} outside 1..={MAX_BLOCK}"
        )));
    }
    if let Some(bad) = table.keys().find(|k| k.len() != n) {
        return Err(Error::InvalidArgument(format!(
            "table key {bad:?} does not have length {n}"
        )));
    }
    let entries = BitString::all_of_len(n)
        .map(|sigma| table.get(&sigma).cloned().ok_or(Error::PartialTable(sigma)))
        .collect::<Result<Vec<_>>>()?;
    BlockMap::from_ranked(n, entries, format!("block{n}"))
}

impl BlockMap {
    /// A block map from a table indexed by lexicographic rank.
    pub fn from_ranked(n: usize, table: Vec<BitString>, name: impl Into<String>) -> Result<Self> {
        if n == 0 || n > MAX_BLOCK || table.len() != 1 << n {
            return Err(Error::InvalidArgument(format!(
                "a {n}-block table needs {} entries",
                1usize << n.min(MAX_BLOCK)
            )));
        }
        if table.iter().all(BitString::is_empty) {
            return Err(Error::TrivialBlockMap);
        }
        Ok(Self {
            n,
            table,
            name: name.into(),
        })
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn block_len(&self) -> usize {
        self.n
    }

    pub fn entry(&self, block: &[bool]) -> &BitString {
        &self.table[rank(block)]
    }

    pub fn entries(&self) -> impl Iterator<Item = (BitString, &BitString)> {
        self.table
            .iter()
            .enumerate()
            .map(move |(r, out)| (BitString::from_rank(r as u64, self.n), out))
    }

    /// Output length on a raw bit slice, without building the output.
    pub fn output_len_of(&self, bits: &[bool]) -> usize {
        bits.chunks_exact(self.n)
            .map(|b| self.table[rank(b)].len())
            .sum()
    }

    /// Exact Avg(φ, μ, n) over a single block, which is the extraction rate
    /// whenever μ is a positive n-step (or 1-step) Bernoulli measure.
    pub fn block_rate(&self, mu: &Measure) -> Result<BigRational> {
        match mu.step() {
            Some(s) if s == 1 || s == self.n => {}
            other => {
                return Err(Error::IncompatibleStep {
                    measure_step: other.unwrap_or(0),
                    block_size: self.n,
                })
            }
        }
        let mut total = BigRational::zero();
        for (sigma, out) in self.entries() {
            if !out.is_empty() {
                total += mu.cylinder_mass(&sigma) * BigInt::from(out.len());
            }
        }
        Ok(total / BigInt::from(self.n))
    }

    /// The smallest m dividing n such that this table is also an m-block
    /// map, found by exhaustive comparison.
    pub fn minimal_block_len(&self) -> usize {
        (1..self.n)
            .filter(|m| self.n.is_multiple_of(*m))
            .find(|&m| self.reblocks_to(m))
            .unwrap_or(self.n)
    }

    fn reblocks_to(&self, m: usize) -> bool {
        let reps = self.n / m;
        // Candidate m-table read off the constant blocks ρ^reps.
        let mut small = Vec::with_capacity(1 << m);
        for r in 0..1u64 << m {
            let rho = BitString::from_rank(r, m);
            let whole: BitString = (0..reps).flat_map(|_| rho.iter()).collect();
            let out = self.entry(whole.as_slice());
            if !out.len().is_multiple_of(reps) {
                return false;
            }
            small.push(out.prefix(out.len() / reps));
        }
        BitString::all_of_len(self.n).all(|sigma| {
            let mut expect = BitString::new();
            for chunk in sigma.as_slice().chunks(m) {
                expect.extend_from(&small[rank(chunk)]);
            }
            &expect == self.entry(sigma.as_slice())
        })
    }

    /// Extracts until `out_len` output bits exist or `input_cap` input bits
    /// have been read. Returns the output (truncated to `out_len`) and the
    /// number of input bits consumed.
    pub fn extract_stream(
        &self,
        x: &mut dyn BitStream,
        out_len: usize,
        input_cap: usize,
    ) -> Result<(BitString, usize)> {
        let mut out = BitString::with_capacity(out_len);
        let mut block = Vec::with_capacity(self.n);
        let mut consumed = 0;
        while out.len() < out_len {
            if consumed + self.n > input_cap {
                return Err(Error::OutputStalled {
                    wanted: out_len,
                    reached: out.len(),
                    consumed,
                    cap: input_cap,
                });
            }
            block.clear();
            for _ in 0..self.n {
                match x.next_bit() {
                    Some(b) => block.push(b),
                    None => {
                        return Err(Error::OutputStalled {
                            wanted: out_len,
                            reached: out.len(),
                            consumed: consumed + block.len(),
                            cap: input_cap,
                        })
                    }
                }
            }
            consumed += self.n;
            out.extend_from(self.entry(&block));
        }
        out.truncate(out_len);
        Ok((out, consumed))
    }

    /// Parses the table file format: one `input<TAB>output` line per block,
    /// with `-` for the empty string. Blank lines and `#` comments are
    /// skipped.
    pub fn parse_table(text: &str) -> Result<BlockMap> {
        let mut table = BTreeMap::new();
        let mut n = None;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let (input, output) = line.split_once('\t').ok_or_else(|| {
                Error::Parse(format!("line {}: expected input<TAB>output", lineno + 1))
            })?;
            let input = BitString::parse(input)?;
            let output = BitString::parse(output)?;
            match n {
                None => n = Some(input.len()),
                Some(n) if n != input.len() => {
                    return Err(Error::Parse(format!(
                        "line {}: block {input:?} does not have length {n}",
                        lineno + 1
                    )))
                }
                _ => {}
            }
            if table.insert(input.clone(), output).is_some() {
                return Err(Error::Parse(format!(
                    "line {}: duplicate block {input:?}",
                    lineno + 1
                )));
            }
        }
        let n = n.ok_or_else(|| Error::Parse("empty block table".into()))?;
        make_block_map(n, &table)
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        for (input, out) in self.entries() {
            let _ = writeln!(s, "{}\t{}", input, out.to_table_string());
        }
        s
    }

    pub fn load(path: &Path) -> Result<BlockMap> {
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "block".into());
        Ok(Self::parse_table(&std::fs::read_to_string(path)?)?.with_name(name))
    }
}

impl Generator for BlockMap {
    fn name(&self) -> &str {
        &self.name
    }

    fn eval(&self, sigma: &BitString) -> BitString {
        let mut out = BitString::new();
        for block in sigma.as_slice().chunks_exact(self.n) {
            out.extend_from(&self.table[rank(block)]);
        }
        out
    }

    fn output_len(&self, sigma: &BitString) -> usize {
        self.output_len_of(sigma.as_slice())
    }

    fn block_size(&self) -> Option<usize> {
        Some(self.n)
    }
}

fn rank(bits: &[bool]) -> usize {
    bits.iter().fold(0, |acc, &b| (acc << 1) | b as usize)
}

/// The k-th procedure of the Peres iteration of von Neumann's extractor.
///
/// φ₁ is von Neumann on pairs; φ_{k+1}(x) = φ₁(x) · φ_k(u) · φ_k(v) where
/// u_i = x_{2i−1} ⊕ x_{2i} and v collects x_{2i} over the pairs with
/// x_{2i−1} = x_{2i}. A trailing odd bit is ignored.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PeresExtractor {
    k: usize,
}

pub fn peres(k: usize) -> Result<PeresExtractor> {
    if k == 0 {
        return Err(Error::InvalidArgument("Peres depth must be ≥ 1".into()));
    }
    Ok(PeresExtractor { k })
}

impl PeresExtractor {
    pub fn depth(&self) -> usize {
        self.k
    }

    pub fn extract(&self, x: &[bool]) -> BitString {
        let mut out = BitString::new();
        peres_into(self.k, x, &mut out);
        out
    }

    pub fn output_len(&self, x: &[bool]) -> usize {
        peres_len(self.k, x)
    }

    /// Exact E|φ_k(X↾m)| under Bernoulli(p), by enumerating all 2^m inputs
    /// grouped by their number of ones.
    pub fn expected_output_len(&self, p: &BigRational, m: usize) -> Result<BigRational> {
        if m > crate::generators::MAX_EXHAUSTIVE_N {
            return Err(Error::EnumerationRefused {
                n: m,
                limit: crate::generators::MAX_EXHAUSTIVE_N,
            });
        }
        let mut by_ones = vec![0u64; m + 1];
        let mut x = vec![false; m];
        for r in 0..1u64 << m {
            for (i, b) in x.iter_mut().enumerate() {
                *b = (r >> (m - 1 - i)) & 1 == 1;
            }
            by_ones[r.count_ones() as usize] += self.output_len(&x) as u64;
        }
        let q = BigRational::from_integer(1.into()) - p;
        let mut total = BigRational::zero();
        for (ones, len) in by_ones.into_iter().enumerate() {
            if len > 0 {
                total += num_traits::pow(p.clone(), ones)
                    * num_traits::pow(q.clone(), m - ones)
                    * BigInt::from(len);
            }
        }
        Ok(total)
    }

    /// E|φ_k(X↾m)| / m.
    pub fn expected_rate(&self, p: &BigRational, m: usize) -> Result<BigRational> {
        if m == 0 {
            return Err(Error::EmptyInput);
        }
        Ok(self.expected_output_len(p, m)? / BigInt::from(m))
    }
}

fn peres_into(k: usize, x: &[bool], out: &mut BitString) {
    let pairs = x.len() / 2;
    if pairs == 0 {
        return;
    }
    let mut u = Vec::with_capacity(pairs);
    let mut v = Vec::new();
    for pair in x.chunks_exact(2) {
        if pair[0] != pair[1] {
            out.push(pair[1]);
        } else {
            v.push(pair[1]);
        }
        u.push(pair[0] ^ pair[1]);
    }
    if k > 1 {
        peres_into(k - 1, &u, out);
        peres_into(k - 1, &v, out);
    }
}

fn peres_len(k: usize, x: &[bool]) -> usize {
    let pairs = x.len() / 2;
    if pairs == 0 {
        return 0;
    }
    let mut u = Vec::with_capacity(pairs);
    let mut v = Vec::new();
    let mut n = 0;
    for pair in x.chunks_exact(2) {
        if pair[0] != pair[1] {
            n += 1;
        } else {
            v.push(pair[1]);
        }
        u.push(pair[0] ^ pair[1]);
    }
    if k > 1 {
        n += peres_len(k - 1, &u) + peres_len(k - 1, &v);
    }
    n
}

/// Applies the n-shift `times` times: drops the first `n·times` bits.
pub fn n_shift<S: BitStream>(n: usize, times: usize, x: S) -> Result<NShift<S>> {
    if n == 0 {
        return Err(Error::InvalidArgument("shift length must be ≥ 1".into()));
    }
    Ok(NShift {
        inner: x,
        skip: n * times,
        pos: 0,
        primed: false,
    })
}

/// A stream with a fixed number of leading bits removed.
pub struct NShift<S> {
    inner: S,
    skip: usize,
    pos: usize,
    primed: bool,
}

impl<S: BitStream> BitStream for NShift<S> {
    fn next_bit(&mut self) -> Option<bool> {
        if !self.primed {
            for _ in 0..self.skip {
                self.inner.next_bit()?;
            }
            self.primed = true;
        }
        let b = self.inner.next_bit()?;
        self.pos += 1;
        Some(b)
    }

    fn position(&self) -> usize {
        self.pos
    }

    fn reset(&mut self) {
        self.inner.reset();
        self.pos = 0;
        self.primed = false;
    }
}

/// Output/input ratio of a block map along the first `n` bits of `x`, as a
/// float (used by long pointwise traces).
pub fn pointwise_rate(bm: &BlockMap, x: &BitString, n: usize) -> f64 {
    let n = n.min(x.len());
    bm.output_len_of(&x.as_slice()[..n]).to_f64().unwrap() / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bitseq::VecStream;
    use crate::generators::{avg_oi, Identity};
    use crate::measures::{bundled, MeasureStream};

    fn bs(s: &str) -> BitString {
        BitString::parse(s).unwrap()
    }

    fn rat(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    fn vn_table() -> BTreeMap<BitString, BitString> {
        BTreeMap::from([
            (bs("00"), bs("-")),
            (bs("01"), bs("1")),
            (bs("10"), bs("0")),
            (bs("11"), bs("-")),
        ])
    }

    #[test]
    fn von_neumann_examples() {
        let vn = von_neumann();
        assert_eq!(vn.eval(&bs("10")), bs("0"));
        assert_eq!(vn.eval(&bs("0111")), bs("1"));
        assert_eq!(vn.eval(&bs("1")), BitString::new());
        assert_eq!(vn.eval(&bs("0011")), BitString::new());
        assert_eq!(
            crate::generators::oi_ratio(&vn, &bs("01")).unwrap(),
            rat(1, 2)
        );
        assert_eq!(
            crate::generators::oi_ratio(&vn, &bs("0011")).unwrap(),
            rat(0, 1)
        );
    }

    #[test]
    fn make_block_map_examples() {
        let vn = make_block_map(2, &vn_table()).unwrap();
        assert_eq!(vn.table, von_neumann().table);
        let id =
            make_block_map(1, &BTreeMap::from([(bs("0"), bs("0")), (bs("1"), bs("1"))])).unwrap();
        for s in ["", "0", "1101"] {
            assert_eq!(id.eval(&bs(s)), Identity.eval(&bs(s)));
        }
        let empty: BTreeMap<_, _> = BitString::all_of_len(2)
            .map(|s| (s, BitString::new()))
            .collect();
        assert!(matches!(
            make_block_map(2, &empty),
            Err(Error::TrivialBlockMap)
        ));
        let mut partial = vn_table();
        partial.remove(&bs("11"));
        assert!(matches!(
            make_block_map(2, &partial),
            Err(Error::PartialTable(_))
        ));
    }

    #[test]
    fn block_rate_examples() {
        let vn = von_neumann();
        assert_eq!(
            vn.block_rate(&Measure::bernoulli(rat(1, 2)).unwrap())
                .unwrap(),
            rat(1, 4)
        );
        for (p, q) in [(3, 10), (1, 4), (1, 3), (7, 9)] {
            let p = rat(p, q);
            let expect = &p * (rat(1, 1) - &p);
            assert_eq!(
                vn.block_rate(&Measure::bernoulli(p).unwrap()).unwrap(),
                expect
            );
        }
        let id = BlockMap::from_ranked(1, vec![bs("0"), bs("1")], "id").unwrap();
        for (_, mu) in bundled::all() {
            if mu.step() == Some(1) {
                assert_eq!(id.block_rate(&mu).unwrap(), rat(1, 1));
            }
        }
        assert!(matches!(
            vn.block_rate(&bundled::markov()),
            Err(Error::IncompatibleStep { .. })
        ));
        let step3 = Measure::step_bernoulli(3, vec![rat(1, 8); 8]).unwrap();
        assert!(vn.block_rate(&step3).is_err());
        assert_eq!(vn.block_rate(&bundled::step2()).unwrap(), rat(7, 20));
    }

    #[test]
    fn avg_oi_matches_vn_examples() {
        let vn = von_neumann();
        assert_eq!(avg_oi(&vn, &Measure::lebesgue(), 2).unwrap(), rat(1, 4));
        assert_eq!(
            avg_oi(&vn, &Measure::bernoulli(rat(3, 10)).unwrap(), 2).unwrap(),
            rat(21, 100)
        );
    }

    #[test]
    fn block_decomposition() {
        let vn = von_neumann();
        let x = crate::measures::sample(&Measure::lebesgue(), 3, 64);
        for split in (0..64).step_by(2) {
            let (a, b) = (x.prefix(split), x.slice(split, 64));
            assert_eq!(vn.eval(&x), vn.eval(&a).concat(&vn.eval(&b)));
        }
    }

    #[test]
    fn peres_examples() {
        let p1 = peres(1).unwrap();
        assert_eq!(p1.extract(bs("10").as_slice()), bs("0"));
        let p2 = peres(2).unwrap();
        assert_eq!(p2.extract(bs("1100").as_slice()), bs("0"));
        assert!(peres(0).is_err());
        let x = crate::measures::sample(&Measure::lebesgue(), 8, 40);
        assert_eq!(p1.extract(x.as_slice()), von_neumann().eval(&x));
        for k in 1..5 {
            let p = peres(k).unwrap();
            assert!(p.output_len(x.as_slice()) <= x.len());
            assert_eq!(p.output_len(x.as_slice()), p.extract(x.as_slice()).len());
            // Odd trailing bit is ignored.
            assert_eq!(
                p.extract(&x.as_slice()[..39]),
                p.extract(&x.as_slice()[..38])
            );
        }
    }

    #[test]
    fn peres_expected_rate_small() {
        // m = 2, k = 1: one pair, one bit with probability 2p(1−p).
        let p = rat(1, 4);
        assert_eq!(peres(1).unwrap().expected_rate(&p, 2).unwrap(), rat(3, 16));
        // m = 4 at p = 1/2 by hand: φ₁ gives 1 expected bit, φ₁(u) gives 1/2,
        // and v has length 2 with probability 1/4, then gives 1/2.
        assert_eq!(
            peres(2)
                .unwrap()
                .expected_output_len(&rat(1, 2), 4)
                .unwrap(),
            rat(13, 8)
        );
    }

    #[test]
    fn minimality() {
        assert_eq!(von_neumann().minimal_block_len(), 2);
        // The identity written as a 2-block map reduces to block length 1.
        let id2 = BlockMap::from_ranked(2, BitString::all_of_len(2).collect(), "id2").unwrap();
        assert_eq!(id2.minimal_block_len(), 1);
        // von Neumann applied twice per 4-block.
        let vn = von_neumann();
        let vn4 = BlockMap::from_ranked(
            4,
            BitString::all_of_len(4).map(|s| vn.eval(&s)).collect(),
            "vn4",
        )
        .unwrap();
        assert_eq!(vn4.minimal_block_len(), 2);
    }

    #[test]
    fn n_shift_examples() {
        let x = bs("0110");
        let mut s = n_shift(2, 1, VecStream::new(x.clone())).unwrap();
        assert_eq!(s.take_bits(10), bs("10"));
        s.reset();
        assert_eq!(s.take_bits(1), bs("1"));
        let y = crate::measures::sample(&Measure::lebesgue(), 1, 50);
        let mut one = n_shift(1, 1, VecStream::new(y.clone())).unwrap();
        assert_eq!(one.take_bits(49), y.slice(1, 50));
        for k in 0..5 {
            let mut s = n_shift(3, k, VecStream::new(y.clone())).unwrap();
            assert_eq!(s.take_bits(7), y.slice(3 * k, 3 * k + 7));
        }
        assert!(n_shift(0, 1, VecStream::new(x)).is_err());
    }

    #[test]
    fn streaming_extraction_and_stall() {
        let vn = von_neumann();
        let mut x = MeasureStream::new(Measure::lebesgue(), 5);
        let (out, consumed) = vn.extract_stream(&mut x, 100, 10_000).unwrap();
        assert_eq!(out.len(), 100);
        let full = crate::measures::sample(&Measure::lebesgue(), 5, consumed);
        assert_eq!(vn.eval(&full).prefix(100), out);
        x.reset();
        assert!(matches!(
            vn.extract_stream(&mut x, 100, 20),
            Err(Error::OutputStalled { cap: 20, .. })
        ));
        let mut zeros = VecStream::new(BitString::repeat(false, 1000));
        assert!(vn.extract_stream(&mut zeros, 1, 100).is_err());
    }

    #[test]
    fn table_file_roundtrip() {
        let vn = von_neumann();
        let text = vn.to_table();
        assert!(text.contains("00\t-\n"));
        assert_eq!(BlockMap::parse_table(&text).unwrap().table, vn.table);
        assert!(BlockMap::parse_table("00\t1\n0\t1\n").is_err());
        assert!(BlockMap::parse_table("00 1\n").is_err());
        assert!(matches!(
            BlockMap::parse_table("0\t-\n1\t-\n"),
            Err(Error::TrivialBlockMap)
        ));
        assert!(matches!(
            BlockMap::parse_table("0\t1\n"),
            Err(Error::PartialTable(_))
        ));
    }
}
