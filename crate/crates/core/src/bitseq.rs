//! Bit strings, bit streams, and exact rational intervals.
//!
//! Index 0 of a [`BitString`] is its leftmost bit, which is also the most
//! significant bit when the string is read as a binary fraction.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, Zero};

use crate::error::{Error, Result};

/// A finite word over {0,1}.
#[derive(Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BitString {
    bits: Vec<bool>,
}

impl BitString {
    pub fn new() -> Self {
        Self { bits: Vec::new() }
    }

    pub fn with_capacity(cap: usize) -> Self {
        Self {
            bits: Vec::with_capacity(cap),
        }
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    /// The length-`len` string whose binary value is `rank`.
    pub fn from_rank(rank: u64, len: usize) -> Self {
        let bits = (0..len).map(|i| (rank >> (len - 1 - i)) & 1 == 1).collect();
        Self { bits }
    }

    /// `bit` repeated `len` times.
    pub fn repeat(bit: bool, len: usize) -> Self {
        Self {
            bits: vec![bit; len],
        }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<bool> {
        self.bits.get(i).copied()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.bits
    }

    pub fn into_bits(self) -> Vec<bool> {
        self.bits
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        self.bits.iter().copied()
    }

    pub fn push(&mut self, bit: bool) {
        self.bits.push(bit);
    }

    pub fn extend_from(&mut self, other: &BitString) {
        self.bits.extend_from_slice(&other.bits);
    }

    pub fn extend_from_slice(&mut self, bits: &[bool]) {
        self.bits.extend_from_slice(bits);
    }

    pub fn truncate(&mut self, len: usize) {
        self.bits.truncate(len);
    }

    pub fn concat(&self, other: &BitString) -> BitString {
        let mut bits = Vec::with_capacity(self.len() + other.len());
        bits.extend_from_slice(&self.bits);
        bits.extend_from_slice(&other.bits);
        BitString { bits }
    }

    /// `self` followed by a single bit.
    pub fn child(&self, bit: bool) -> BitString {
        let mut bits = Vec::with_capacity(self.len() + 1);
        bits.extend_from_slice(&self.bits);
        bits.push(bit);
        BitString { bits }
    }

    /// The first `n` bits (the whole string when shorter).
    pub fn prefix(&self, n: usize) -> BitString {
        BitString {
            bits: self.bits[..n.min(self.len())].to_vec(),
        }
    }

    /// The bits in `[start, end)`, clamped to the string.
    pub fn slice(&self, start: usize, end: usize) -> BitString {
        let end = end.min(self.len());
        let start = start.min(end);
        BitString {
            bits: self.bits[start..end].to_vec(),
        }
    }

    /// σ ⪯ τ.
    pub fn is_prefix_of(&self, other: &BitString) -> bool {
        other.bits.starts_with(&self.bits)
    }

    /// σ ⪯ τ or τ ⪯ σ.
    pub fn is_comparable(&self, other: &BitString) -> bool {
        self.is_prefix_of(other) || other.is_prefix_of(self)
    }

    pub fn common_prefix_len(&self, other: &BitString) -> usize {
        self.bits
            .iter()
            .zip(&other.bits)
            .take_while(|(a, b)| a == b)
            .count()
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// All strings of length `n` in lexicographic order.
    pub fn all_of_len(n: usize) -> impl Iterator<Item = BitString> {
        assert!(n < 64, "cannot enumerate 2^{n} strings");
        (0..1u64 << n).map(move |r| BitString::from_rank(r, n))
    }

    /// Parses "0101"; "-" and "ε" denote the empty string.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "-" || s == "ε" {
            return Ok(Self::new());
        }
        s.chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                _ => Err(Error::Parse(format!("invalid bit {c:?} in {s:?}"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Self::from_bits)
    }

    /// "0101", with "-" for the empty string.
    pub fn to_table_string(&self) -> String {
        if self.is_empty() {
            "-".to_string()
        } else {
            self.to_string()
        }
    }
}

impl fmt::Display for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.bits {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            f.write_str("ε")
        } else {
            write!(f, "\"{self}\"")
        }
    }
}

impl FromStr for BitString {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

impl From<&[bool]> for BitString {
    fn from(bits: &[bool]) -> Self {
        Self {
            bits: bits.to_vec(),
        }
    }
}

impl FromIterator<bool> for BitString {
    fn from_iter<I: IntoIterator<Item = bool>>(iter: I) -> Self {
        Self {
            bits: iter.into_iter().collect(),
        }
    }
}

/// Number of same-length strings lexicographically below `sigma`, i.e. the
/// integer whose binary representation is `sigma`.
pub fn lex_rank(sigma: &BitString) -> BigUint {
    let mut rank = BigUint::zero();
    for b in sigma.iter() {
        rank <<= 1u32;
        if b {
            rank += 1u32;
        }
    }
    rank
}

/// The dyadic interval `[0.σ, 0.σ + 2^{-|σ|}]`.
pub fn dyadic_interval(sigma: &BitString) -> RatInterval {
    let den = BigInt::one() << sigma.len();
    let lo = BigInt::from(lex_rank(sigma));
    let hi = &lo + BigInt::one();
    RatInterval {
        lo: BigRational::new(lo, den.clone()),
        hi: BigRational::new(hi, den),
    }
}

/// A closed subinterval of [0,1] with exact rational endpoints.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RatInterval {
    lo: BigRational,
    hi: BigRational,
}

impl RatInterval {
    pub fn new(lo: BigRational, hi: BigRational) -> Result<Self> {
        if lo > hi || lo < BigRational::zero() || hi > BigRational::one() {
            return Err(Error::InvalidArgument(format!(
                "[{lo}, {hi}] is not a subinterval of [0,1]"
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn unit() -> Self {
        Self {
            lo: BigRational::zero(),
            hi: BigRational::one(),
        }
    }

    pub fn lo(&self) -> &BigRational {
        &self.lo
    }

    pub fn hi(&self) -> &BigRational {
        &self.hi
    }

    pub fn width(&self) -> BigRational {
        &self.hi - &self.lo
    }

    /// `self ⊆ other`.
    pub fn is_subset_of(&self, other: &RatInterval) -> bool {
        other.lo <= self.lo && self.hi <= other.hi
    }

    /// Splits at `lo + width·fraction` into left and right children.
    pub fn split(&self, fraction: &BigRational) -> (RatInterval, RatInterval) {
        let mid = &self.lo + self.width() * fraction;
        (
            RatInterval {
                lo: self.lo.clone(),
                hi: mid.clone(),
            },
            RatInterval {
                lo: mid,
                hi: self.hi.clone(),
            },
        )
    }
}

impl fmt::Display for RatInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}, {}]",
            format_rational(&self.lo),
            format_rational(&self.hi)
        )
    }
}

/// Formats as "num/den", always with an explicit denominator.
pub fn format_rational(r: &BigRational) -> String {
    format!("{}/{}", r.numer(), r.denom())
}

/// Parses "num/den" or a bare integer.
pub fn parse_rational(s: &str) -> Result<BigRational> {
    let s = s.trim();
    let bad = || Error::Parse(format!("invalid rational {s:?}"));
    let (num, den) = match s.split_once('/') {
        Some((n, d)) => (n.trim(), d.trim()),
        None => (s, "1"),
    };
    let num: BigInt = num.parse().map_err(|_| bad())?;
    let den: BigInt = den.parse().map_err(|_| bad())?;
    if den.is_zero() {
        return Err(bad());
    }
    Ok(BigRational::new(num, den))
}

/// A rational that serializes as a "num/den" string.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RatString(pub BigRational);

impl serde::Serialize for RatString {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&format_rational(&self.0))
    }
}

impl<'de> serde::Deserialize<'de> for RatString {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        parse_rational(&s)
            .map(RatString)
            .map_err(serde::de::Error::custom)
    }
}

impl From<BigRational> for RatString {
    fn from(r: BigRational) -> Self {
        RatString(r)
    }
}

/// A pull-based, replayable bit source.
pub trait BitStream {
    /// The next bit, or `None` once a finite source is exhausted.
    fn next_bit(&mut self) -> Option<bool>;

    /// Bits consumed since construction or the last reset.
    fn position(&self) -> usize;

    /// Rewinds to the first bit; subsequent reads replay the same sequence.
    fn reset(&mut self);

    /// Reads up to `n` bits.
    fn take_bits(&mut self, n: usize) -> BitString {
        let mut out = BitString::with_capacity(n);
        for _ in 0..n {
            match self.next_bit() {
                Some(b) => out.push(b),
                None => break,
            }
        }
        out
    }

    /// The first `n` bits from the start, leaving the stream rewound.
    fn prefix(&mut self, n: usize) -> BitString {
        self.reset();
        let p = self.take_bits(n);
        self.reset();
        p
    }
}

impl<S: BitStream + ?Sized> BitStream for &mut S {
    fn next_bit(&mut self) -> Option<bool> {
        (**self).next_bit()
    }
    fn position(&self) -> usize {
        (**self).position()
    }
    fn reset(&mut self) {
        (**self).reset()
    }
}

impl<S: BitStream + ?Sized> BitStream for Box<S> {
    fn next_bit(&mut self) -> Option<bool> {
        (**self).next_bit()
    }
    fn position(&self) -> usize {
        (**self).position()
    }
    fn reset(&mut self) {
        (**self).reset()
    }
}

/// A finite stream over an in-memory string.
#[derive(Clone, Debug)]
pub struct VecStream {
    bits: BitString,
    pos: usize,
}

impl VecStream {
    pub fn new(bits: BitString) -> Self {
        Self { bits, pos: 0 }
    }

    pub fn bits(&self) -> &BitString {
        &self.bits
    }
}

impl BitStream for VecStream {
    fn next_bit(&mut self) -> Option<bool> {
        let b = self.bits.get(self.pos)?;
        self.pos += 1;
        Some(b)
    }

    fn position(&self) -> usize {
        self.pos
    }

    fn reset(&mut self) {
        self.pos = 0;
    }
}

/// Magic prefix of a bitstream file carrying an explicit bit count.
pub const FILE_MAGIC: &[u8; 8] = b"RNDX0001";

/// Decodes a bitstream file: MSB-first bytes, optionally preceded by
/// [`FILE_MAGIC`] and a little-endian u64 bit count.
pub fn decode_bitstream(bytes: &[u8]) -> Result<BitString> {
    let (payload, count) = if bytes.len() >= 16 && &bytes[..8] == FILE_MAGIC {
        let mut len = [0u8; 8];
        len.copy_from_slice(&bytes[8..16]);
        let count = u64::from_le_bytes(len) as usize;
        let payload = &bytes[16..];
        if count > payload.len() * 8 {
            return Err(Error::Parse(format!(
                "header declares {count} bits but only {} are present",
                payload.len() * 8
            )));
        }
        (payload, count)
    } else {
        (bytes, bytes.len() * 8)
    };
    let mut out = BitString::with_capacity(count);
    for i in 0..count {
        out.push((payload[i / 8] >> (7 - i % 8)) & 1 == 1);
    }
    Ok(out)
}

/// Encodes MSB-first; the header is written when requested or when the
/// length is not a whole number of bytes.
pub fn encode_bitstream(bits: &BitString, header: bool) -> Vec<u8> {
    let header = header || !bits.len().is_multiple_of(8);
    let mut out = Vec::with_capacity(16 + bits.len().div_ceil(8));
    if header {
        out.extend_from_slice(FILE_MAGIC);
        out.extend_from_slice(&(bits.len() as u64).to_le_bytes());
    }
    for chunk in bits.as_slice().chunks(8) {
        let mut byte = 0u8;
        for (i, &b) in chunk.iter().enumerate() {
            if b {
                byte |= 1 << (7 - i);
            }
        }
        out.push(byte);
    }
    out
}

pub fn read_bitstream_file(path: &Path) -> Result<BitString> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_bitstream(&bytes)
}

pub fn write_bitstream_file(path: &Path, bits: &BitString, header: bool) -> Result<()> {
    std::fs::File::create(path)?.write_all(&encode_bitstream(bits, header))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bs(s: &str) -> BitString {
        BitString::parse(s).unwrap()
    }

    fn rat(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    #[test]
    fn lex_rank_examples() {
        assert_eq!(lex_rank(&BitString::new()), BigUint::zero());
        assert_eq!(lex_rank(&bs("000")), BigUint::zero());
        // Count the length-3 strings below "101" by enumeration.
        let target = bs("101");
        let below = BitString::all_of_len(3).filter(|t| t < &target).count();
        assert_eq!(below, 5);
        assert_eq!(lex_rank(&target), BigUint::from(5u32));
    }

    #[test]
    fn dyadic_interval_examples() {
        assert_eq!(dyadic_interval(&BitString::new()), RatInterval::unit());
        let i = dyadic_interval(&bs("1"));
        assert_eq!((i.lo(), i.hi()), (&rat(1, 2), &rat(1, 1)));
        let i = dyadic_interval(&bs("01"));
        assert_eq!((i.lo(), i.hi()), (&rat(1, 4), &rat(1, 2)));
    }

    #[test]
    fn dyadic_children_partition_parent() {
        for n in 0..8 {
            for s in BitString::all_of_len(n) {
                let p = dyadic_interval(&s);
                let l = dyadic_interval(&s.child(false));
                let r = dyadic_interval(&s.child(true));
                assert!(l.is_subset_of(&p) && r.is_subset_of(&p));
                assert_eq!(l.hi(), r.lo());
                assert_eq!(l.width() + r.width(), p.width());
            }
        }
    }

    #[test]
    fn prefix_relation() {
        assert!(BitString::new().is_prefix_of(&bs("01")));
        assert!(bs("01").is_prefix_of(&bs("011")));
        assert!(!bs("011").is_prefix_of(&bs("01")));
        assert!(!bs("10").is_comparable(&bs("01")));
        assert_eq!(bs("0110").common_prefix_len(&bs("0101")), 2);
    }

    #[test]
    fn parse_rejects_garbage() {
        assert!(BitString::parse("012").is_err());
        assert_eq!(bs("-"), BitString::new());
        assert_eq!(bs("-").to_table_string(), "-");
    }

    #[test]
    fn rational_format_roundtrip() {
        let r = parse_rational("6/8").unwrap();
        assert_eq!(format_rational(&r), "3/4");
        assert_eq!(format_rational(&parse_rational("2").unwrap()), "2/1");
        assert!(parse_rational("1/0").is_err());
        assert!(parse_rational("x").is_err());
    }

    #[test]
    fn interval_validation() {
        assert!(RatInterval::new(rat(1, 2), rat(1, 4)).is_err());
        assert!(RatInterval::new(rat(0, 1), rat(3, 2)).is_err());
        let i = RatInterval::new(rat(1, 4), rat(1, 2)).unwrap();
        assert!(i.is_subset_of(&RatInterval::unit()));
        assert!(!RatInterval::unit().is_subset_of(&i));
    }

    #[test]
    fn headerless_file_is_whole_bytes() {
        let bits = decode_bitstream(&[0b1010_0000, 0xff]).unwrap();
        assert_eq!(bits.len(), 16);
        assert_eq!(bits.prefix(4), bs("1010"));
    }

    #[test]
    fn header_carries_odd_lengths() {
        let bits = bs("10110");
        let bytes = encode_bitstream(&bits, false);
        assert_eq!(&bytes[..8], FILE_MAGIC);
        assert_eq!(decode_bitstream(&bytes).unwrap(), bits);
        let mut bad = bytes.clone();
        bad[8] = 200;
        assert!(decode_bitstream(&bad).is_err());
    }

    #[test]
    fn vec_stream_replays() {
        let mut s = VecStream::new(bs("0110"));
        let first = s.take_bits(10);
        assert_eq!(first, bs("0110"));
        assert_eq!(s.position(), 4);
        assert_eq!(s.next_bit(), None);
        s.reset();
        assert_eq!(s.prefix(2), bs("01"));
        assert_eq!(s.position(), 0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_bits(max: usize) -> impl Strategy<Value = BitString> {
            proptest::collection::vec(any::<bool>(), 0..max).prop_map(BitString::from_bits)
        }

        proptest! {
            #[test]
            fn interval_matches_rank(s in arb_bits(40)) {
                let i = dyadic_interval(&s);
                let den = BigInt::one() << s.len();
                let r = BigInt::from(lex_rank(&s));
                prop_assert_eq!(i.lo().clone(), BigRational::new(r.clone(), den.clone()));
                prop_assert_eq!(i.width(), BigRational::new(BigInt::one(), den));
            }

            #[test]
            fn rank_is_monotone(a in arb_bits(20), b in arb_bits(20)) {
                let n = a.len().min(b.len());
                let (a, b) = (a.prefix(n), b.prefix(n));
                prop_assert_eq!(a.cmp(&b), lex_rank(&a).cmp(&lex_rank(&b)));
            }

            #[test]
            fn concat_is_associative(a in arb_bits(10), b in arb_bits(10), c in arb_bits(10)) {
                prop_assert_eq!(a.concat(&b).concat(&c), a.concat(&b.concat(&c)));
                prop_assert_eq!(a.concat(&BitString::new()), a.clone());
                prop_assert!(a.is_prefix_of(&a.concat(&b)));
            }

            #[test]
            fn file_roundtrip(s in arb_bits(100), header in any::<bool>()) {
                prop_assert_eq!(decode_bitstream(&encode_bitstream(&s, header)).unwrap(), s);
            }
        }
    }
}
