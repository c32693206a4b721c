//! Discrete distribution generating (DDG) trees.
//!
//! A tree is a prefix-free set of labelled terminal strings whose Lebesgue
//! mass is 1. Walking a fair bitstream from the root until a terminal is hit
//! samples its label; repeating from the root yields the functional Φ_S.
//! Finite trees are stored as a trie. Knuth–Yao trees for non-dyadic
//! distributions are infinite and expanded level by level on demand.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Arc, Mutex};

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use rayon::prelude::*;

use crate::bitseq::{parse_rational, BitStream, BitString};
use crate::error::{Error, Result};
use crate::generators::derive_seed;
use crate::measures::{sample, Measure};

/// Deepest level a lazy tree will expand to when certifying a tail bound.
pub const MAX_LAZY_LEVEL: usize = 4096;

/// Default tail tolerance for lazy trees.
pub fn default_tail_tol() -> BigRational {
    BigRational::new(BigInt::one(), BigInt::from(1_000_000_000u64))
}

#[derive(Clone, Copy, Debug)]
enum Node {
    Internal([u32; 2]),
    Leaf(usize),
}

#[derive(Debug)]
struct FiniteTree {
    nodes: Vec<Node>,
    terminals: Vec<(BitString, usize)>,
}

/// One level of a Knuth–Yao tree: the labels of its terminals, which occupy
/// the lowest slot ranks, and how many internal nodes remain.
#[derive(Clone, Debug)]
struct Level {
    terminals: Vec<usize>,
    internal: usize,
}

#[derive(Debug)]
struct KyLevels {
    /// Numerators of p_j·2^i mod 1, over `dens[j]`.
    rems: Vec<BigUint>,
    levels: Arc<Vec<Level>>,
}

#[derive(Debug)]
struct LazyTree {
    dist: Vec<BigRational>,
    dens: Vec<BigUint>,
    cache: Mutex<KyLevels>,
}

#[derive(Debug)]
enum Shape {
    Finite(FiniteTree),
    Lazy(LazyTree),
}

/// A DDG tree. Cheap to clone and safe to share between threads.
#[derive(Clone, Debug)]
pub struct DdgTree {
    shape: Arc<Shape>,
    alphabet: Arc<Vec<String>>,
    tail_tol: BigRational,
}

/// AvgRT(S), exact for finite trees and truncated with a certified
/// remainder bound for lazy ones.
#[derive(Clone, Debug, PartialEq)]
pub struct AvgRt {
    /// Σ_{i ≤ levels} i·2^{−i}·|D(S) ∩ 2^i|.
    pub value: BigRational,
    /// Upper bound on the omitted tail; zero when exact.
    pub tail_bound: BigRational,
    /// Truncation level, or `None` for a finite tree.
    pub levels: Option<usize>,
}

impl AvgRt {
    pub fn is_exact(&self) -> bool {
        self.tail_bound.is_zero()
    }

    /// Whether `x` lies within the certified interval [value, value + tail].
    pub fn contains(&self, x: &BigRational) -> bool {
        *x >= self.value && *x <= &self.value + &self.tail_bound
    }
}

/// Builds a finite tree from labelled terminals. The alphabet is ordered by
/// first appearance.
pub fn make_ddg(terminals: &[(BitString, String)]) -> Result<DdgTree> {
    let mut alphabet: Vec<String> = Vec::new();
    let mut indexed = Vec::with_capacity(terminals.len());
    for (tau, label) in terminals {
        let idx = match alphabet.iter().position(|a| a == label) {
            Some(i) => i,
            None => {
                alphabet.push(label.clone());
                alphabet.len() - 1
            }
        };
        indexed.push((tau.clone(), idx));
    }
    DdgTree::from_indexed(indexed, alphabet)
}

/// The Knuth–Yao tree of a distribution, labelled a1, a2, …
pub fn knuth_yao(dist: &[BigRational], tail_tol: &BigRational) -> Result<DdgTree> {
    let labels = (1..=dist.len()).map(|i| format!("a{i}")).collect();
    knuth_yao_labeled(dist, labels, tail_tol)
}

/// The Knuth–Yao tree: level i has one terminal labelled a_j for every j
/// whose p_j has a 1 in binary position i. Terminals take the lowest slots of
/// each level in label order; the rest are internal.
pub fn knuth_yao_labeled(
    dist: &[BigRational],
    labels: Vec<String>,
    tail_tol: &BigRational,
) -> Result<DdgTree> {
    if labels.len() != dist.len() {
        return Err(Error::InvalidArgument(format!(
            "{} labels for {} probabilities",
            labels.len(),
            dist.len()
        )));
    }
    if dist.len() < 2 {
        return Err(Error::InvalidDistribution(
            "a distribution needs at least two outcomes".into(),
        ));
    }
    if let Some(p) = dist
        .iter()
        .find(|p| !p.is_positive() || **p > BigRational::one())
    {
        return Err(Error::InvalidDistribution(format!(
            "probability {p} outside (0, 1]"
        )));
    }
    let total: BigRational = dist.iter().sum();
    if !total.is_one() {
        return Err(Error::InvalidDistribution(format!(
            "probabilities sum to {total}, not 1"
        )));
    }
    check_tail_tol(tail_tol)?;
    let dens: Vec<BigUint> = dist.iter().map(|p| p.denom().magnitude().clone()).collect();
    let rems = dist.iter().map(|p| p.numer().magnitude().clone()).collect();
    let lazy = LazyTree {
        dist: dist.to_vec(),
        dens,
        cache: Mutex::new(KyLevels {
            rems,
            levels: Arc::new(Vec::new()),
        }),
    };
    let dyadic = dist.iter().all(|p| is_power_of_two(p.denom().magnitude()));
    if dyadic {
        // Expand until no internal nodes remain, then store as a trie.
        let depth = dist
            .iter()
            .map(|p| p.denom().magnitude().bits() as usize - 1)
            .max()
            .unwrap_or(0);
        let levels = lazy.levels_to(depth);
        debug_assert_eq!(levels.last().map(|l| l.internal), Some(0));
        let terminals = level_terminals(&levels, depth);
        return DdgTree::from_indexed(terminals, labels);
    }
    Ok(DdgTree {
        shape: Arc::new(Shape::Lazy(lazy)),
        alphabet: Arc::new(labels),
        tail_tol: tail_tol.clone(),
    })
}

fn check_tail_tol(tol: &BigRational) -> Result<()> {
    if !tol.is_positive() || *tol >= BigRational::one() {
        return Err(Error::InvalidArgument(format!(
            "tail tolerance {tol} outside (0, 1)"
        )));
    }
    Ok(())
}

fn is_power_of_two(x: &BigUint) -> bool {
    !x.is_zero() && x.count_ones() == 1
}

/// Terminal strings of the first `depth` levels of a level-described tree.
fn level_terminals(levels: &[Level], depth: usize) -> Vec<(BitString, usize)> {
    let mut out = Vec::new();
    let mut internal = vec![BitString::new()];
    for level in levels.iter().take(depth) {
        let t = level.terminals.len();
        let mut next = Vec::with_capacity(level.internal);
        for r in 0..2 * internal.len() {
            let s = internal[r / 2].child(r % 2 == 1);
            if r < t {
                out.push((s, level.terminals[r]));
            } else {
                next.push(s);
            }
        }
        internal = next;
    }
    out
}

impl LazyTree {
    /// Levels 1..=depth (index i holds level i+1), expanding the cache if
    /// needed. Concurrent callers see the same prefix of levels.
    fn levels_to(&self, depth: usize) -> Arc<Vec<Level>> {
        let mut cache = self.cache.lock().expect("level cache poisoned");
        if cache.levels.len() < depth {
            let KyLevels { rems, levels } = &mut *cache;
            let levels = Arc::make_mut(levels);
            while levels.len() < depth {
                let prev_internal = levels.last().map_or(1, |l| l.internal);
                let mut terminals = Vec::new();
                for (j, rem) in rems.iter_mut().enumerate() {
                    *rem <<= 1;
                    if *rem >= self.dens[j] {
                        *rem -= &self.dens[j];
                        terminals.push(j);
                    }
                }
                let internal = 2 * prev_internal - terminals.len();
                levels.push(Level {
                    terminals,
                    internal,
                });
            }
        }
        Arc::clone(&cache.levels)
    }
}

impl DdgTree {
    fn from_indexed(terminals: Vec<(BitString, usize)>, alphabet: Vec<String>) -> Result<Self> {
        if terminals.is_empty() {
            return Err(Error::InvalidDistribution("no terminals".into()));
        }
        if terminals.iter().any(|(t, _)| t.is_empty()) {
            return Err(Error::InvalidDistribution(
                "the empty string as a terminal gives a one-outcome distribution".into(),
            ));
        }
        // Trie with optional children during construction.
        let mut kids: Vec<[Option<u32>; 2]> = vec![[None, None]];
        let mut leaf: Vec<Option<usize>> = vec![None];
        for (i, (tau, _)) in terminals.iter().enumerate() {
            let mut cur = 0usize;
            for b in tau.iter() {
                if let Some(j) = leaf[cur] {
                    return Err(Error::NotPrefixFree(terminals[j].0.clone(), tau.clone()));
                }
                cur = match kids[cur][b as usize] {
                    Some(c) => c as usize,
                    None => {
                        kids.push([None, None]);
                        leaf.push(None);
                        let c = kids.len() - 1;
                        kids[cur][b as usize] = Some(c as u32);
                        c
                    }
                };
            }
            if let Some(j) = leaf[cur] {
                return Err(Error::NotPrefixFree(terminals[j].0.clone(), tau.clone()));
            }
            if kids[cur] != [None, None] {
                let longer = terminals
                    .iter()
                    .find(|(s, _)| s.len() > tau.len() && tau.is_prefix_of(s))
                    .map(|(s, _)| s.clone())
                    .expect("a child exists only below an inserted terminal");
                return Err(Error::NotPrefixFree(tau.clone(), longer));
            }
            leaf[cur] = Some(i);
        }
        let mass: BigRational = terminals.iter().map(|(t, _)| dyadic_mass(t.len())).sum();
        if !mass.is_one() {
            let gap = &mass - BigRational::one();
            return Err(Error::MassMismatch {
                excess: gap.is_positive(),
                gap: gap.abs(),
            });
        }
        // Kraft equality for a finite prefix-free set means every internal
        // node has both children.
        let nodes = kids
            .iter()
            .zip(&leaf)
            .map(|(k, l)| match (k, l) {
                (_, Some(i)) => Node::Leaf(terminals[*i].1),
                ([Some(a), Some(b)], None) => Node::Internal([*a, *b]),
                _ => unreachable!("complete trie"),
            })
            .collect();
        Ok(DdgTree {
            shape: Arc::new(Shape::Finite(FiniteTree { nodes, terminals })),
            alphabet: Arc::new(alphabet),
            tail_tol: default_tail_tol(),
        })
    }

    pub fn alphabet(&self) -> &[String] {
        &self.alphabet
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet.len()
    }

    pub fn is_finite(&self) -> bool {
        matches!(*self.shape, Shape::Finite(_))
    }

    pub fn tail_tol(&self) -> &BigRational {
        &self.tail_tol
    }

    pub fn with_tail_tol(mut self, tol: BigRational) -> Result<Self> {
        check_tail_tol(&tol)?;
        self.tail_tol = tol;
        Ok(self)
    }

    /// The terminal set of a finite tree, with label indices.
    pub fn terminals(&self) -> Option<&[(BitString, usize)]> {
        match &*self.shape {
            Shape::Finite(t) => Some(&t.terminals),
            Shape::Lazy(_) => None,
        }
    }

    /// Terminals of length at most `depth`.
    pub fn terminals_to_level(&self, depth: usize) -> Vec<(BitString, usize)> {
        match &*self.shape {
            Shape::Finite(t) => t
                .terminals
                .iter()
                .filter(|(s, _)| s.len() <= depth)
                .cloned()
                .collect(),
            Shape::Lazy(l) => level_terminals(&l.levels_to(depth), depth),
        }
    }

    /// |D(S) ∩ 2^i| for i = 1..=depth.
    pub fn level_counts(&self, depth: usize) -> Vec<usize> {
        match &*self.shape {
            Shape::Finite(t) => {
                let mut counts = vec![0; depth];
                for (s, _) in &t.terminals {
                    if s.len() <= depth {
                        counts[s.len() - 1] += 1;
                    }
                }
                counts
            }
            Shape::Lazy(l) => l
                .levels_to(depth)
                .iter()
                .take(depth)
                .map(|lv| lv.terminals.len())
                .collect(),
        }
    }

    /// Length of the longest terminal, if finite.
    pub fn depth(&self) -> Option<usize> {
        self.terminals()
            .map(|t| t.iter().map(|(s, _)| s.len()).max().unwrap_or(0))
    }

    /// Length of the shortest terminal.
    pub fn min_depth(&self) -> usize {
        match &*self.shape {
            Shape::Finite(t) => t.terminals.iter().map(|(s, _)| s.len()).min().unwrap_or(0),
            Shape::Lazy(l) => {
                let mut d = 1;
                loop {
                    let levels = l.levels_to(d);
                    if !levels[d - 1].terminals.is_empty() {
                        return d;
                    }
                    d += 1;
                }
            }
        }
    }

    /// The induced distribution p_i = Σ_{ℓ(τ)=a_i} 2^{−|τ|}, exact.
    pub fn distribution(&self) -> Vec<BigRational> {
        match &*self.shape {
            Shape::Finite(t) => {
                let mut p = vec![BigRational::zero(); self.alphabet.len()];
                for (s, l) in &t.terminals {
                    p[*l] += dyadic_mass(s.len());
                }
                p
            }
            Shape::Lazy(l) => l.dist.clone(),
        }
    }

    /// Mass of the tree not yet covered by terminals of length ≤ depth.
    pub fn mass_deficit_at_level(&self, depth: usize) -> BigRational {
        match &*self.shape {
            Shape::Finite(_) => {
                let covered: BigRational = self
                    .terminals_to_level(depth)
                    .iter()
                    .map(|(s, _)| dyadic_mass(s.len()))
                    .sum();
                BigRational::one() - covered
            }
            Shape::Lazy(l) => {
                let levels = l.levels_to(depth);
                let internal = if depth == 0 {
                    1
                } else {
                    levels[depth - 1].internal
                };
                BigRational::new(BigInt::from(internal), BigInt::one() << depth)
            }
        }
    }

    /// AvgRT(S): exact for a finite tree; for a lazy tree, truncated at the
    /// first level where the tail bound k·(L+2)/2^L is within `tail_tol`.
    pub fn avg_rt(&self) -> Result<AvgRt> {
        match &*self.shape {
            Shape::Finite(t) => Ok(AvgRt {
                value: t
                    .terminals
                    .iter()
                    .map(|(s, _)| dyadic_mass(s.len()) * BigInt::from(s.len()))
                    .sum(),
                tail_bound: BigRational::zero(),
                levels: None,
            }),
            Shape::Lazy(_) => {
                let k = self.alphabet.len();
                let level = (1..=MAX_LAZY_LEVEL)
                    .find(|&l| tail_bound(k, l) <= self.tail_tol)
                    .ok_or_else(|| {
                        Error::TailNotCertified(format!(
                            "tail bound above {} at level {MAX_LAZY_LEVEL}",
                            self.tail_tol
                        ))
                    })?;
                self.avg_rt_at_level(level)
            }
        }
    }

    /// AvgRT(S) truncated at a given level, with the remainder bound.
    pub fn avg_rt_at_level(&self, depth: usize) -> Result<AvgRt> {
        match &*self.shape {
            Shape::Finite(_) => self.avg_rt(),
            Shape::Lazy(l) => {
                let levels = l.levels_to(depth);
                let value = levels
                    .iter()
                    .take(depth)
                    .enumerate()
                    .map(|(i, lv)| dyadic_mass(i + 1) * BigInt::from((i + 1) * lv.terminals.len()))
                    .sum();
                Ok(AvgRt {
                    value,
                    tail_bound: tail_bound(self.alphabet.len(), depth),
                    levels: Some(depth),
                })
            }
        }
    }

    /// Length of the leading S-block of `bits`, or `None` when no terminal
    /// is reached within them.
    pub fn first_block_len(&self, bits: &[bool]) -> Option<usize> {
        let mut w = Walker::new(self);
        bits.iter()
            .position(|&b| w.feed(b).is_some())
            .map(|i| i + 1)
    }

    /// Labels of the complete S-blocks of `bits` and their end positions; a
    /// trailing incomplete block contributes nothing.
    pub fn symbols(&self, bits: &[bool]) -> (Vec<usize>, Vec<usize>) {
        let mut w = Walker::new(self);
        let mut labels = Vec::new();
        let mut bounds = Vec::new();
        for (i, &b) in bits.iter().enumerate() {
            if let Some(l) = w.feed(b) {
                labels.push(l);
                bounds.push(i + 1);
            }
        }
        (labels, bounds)
    }

    /// |Φ_S(σ)|: the number of complete S-blocks in `bits`.
    pub fn symbol_count(&self, bits: &[bool]) -> usize {
        let mut w = Walker::new(self);
        bits.iter().filter(|&&b| w.feed(b).is_some()).count()
    }

    /// Parses a tree file: `node<TAB>label` lines, or a `ky: p1,p2,…` line
    /// with an optional `tail_tol: r` line. Blank lines and `#` comments are
    /// skipped.
    pub fn parse(text: &str) -> Result<DdgTree> {
        let mut terminals = Vec::new();
        let mut ky = None;
        let mut tol = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix("ky:") {
                ky = Some(parse_dist(rest)?);
            } else if let Some(rest) = line.strip_prefix("tail_tol:") {
                tol = Some(parse_rational(rest.trim())?);
            } else {
                let (node, label) = raw.trim_end().split_once('\t').ok_or_else(|| {
                    Error::Parse(format!("line {}: expected node<TAB>label", lineno + 1))
                })?;
                let label = label.trim();
                if label.is_empty() {
                    return Err(Error::Parse(format!("line {}: empty label", lineno + 1)));
                }
                terminals.push((BitString::parse(node.trim())?, label.to_string()));
            }
        }
        match (ky, terminals.is_empty()) {
            (Some(_), false) => Err(Error::Parse(
                "a tree file holds either terminals or a ky: line, not both".into(),
            )),
            (Some(dist), true) => knuth_yao(&dist, &tol.unwrap_or_else(default_tail_tol)),
            (None, _) => {
                let tree = make_ddg(&terminals)?;
                match tol {
                    Some(t) => tree.with_tail_tol(t),
                    None => Ok(tree),
                }
            }
        }
    }

    /// A tree from an inline config (`ky: 2/3,1/3`, `tree: 0=a,10=b,11=c`)
    /// or a path to a tree file.
    pub fn from_config(s: &str, tail_tol: Option<&BigRational>) -> Result<DdgTree> {
        let s = s.trim();
        let tree = if let Some(rest) = s.strip_prefix("ky:") {
            knuth_yao(
                &parse_dist(rest)?,
                &tail_tol.cloned().unwrap_or_else(default_tail_tol),
            )?
        } else if let Some(rest) = s.strip_prefix("tree:") {
            let terminals = rest
                .split(',')
                .map(|item| {
                    let (node, label) = item.split_once('=').ok_or_else(|| {
                        Error::Parse(format!("expected node=label, got {item:?}"))
                    })?;
                    Ok((BitString::parse(node.trim())?, label.trim().to_string()))
                })
                .collect::<Result<Vec<_>>>()?;
            make_ddg(&terminals)?
        } else if let Some(name) = bundled::by_name(s) {
            name
        } else {
            Self::load(Path::new(s))?
        };
        match tail_tol {
            Some(t) => tree.with_tail_tol(t.clone()),
            None => Ok(tree),
        }
    }

    pub fn load(path: &Path) -> Result<DdgTree> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// The tree file form; lazy trees are written as their distribution.
    pub fn to_table(&self) -> String {
        match &*self.shape {
            Shape::Finite(t) => t
                .terminals
                .iter()
                .map(|(s, l)| format!("{}\t{}\n", s.to_table_string(), self.alphabet[*l]))
                .collect(),
            Shape::Lazy(l) => {
                let ps: Vec<String> = l.dist.iter().map(crate::bitseq::format_rational).collect();
                format!(
                    "ky: {}\ntail_tol: {}\n",
                    ps.join(","),
                    crate::bitseq::format_rational(&self.tail_tol)
                )
            }
        }
    }
}

fn parse_dist(s: &str) -> Result<Vec<BigRational>> {
    s.split(',').map(|p| parse_rational(p.trim())).collect()
}

fn dyadic_mass(len: usize) -> BigRational {
    BigRational::new(BigInt::one(), BigInt::one() << len)
}

/// k·Σ_{i>L} i·2^{−i} = k·(L+2)/2^L.
fn tail_bound(k: usize, level: usize) -> BigRational {
    BigRational::new(BigInt::from(k * (level + 2)), BigInt::one() << level)
}

enum Cursor {
    Finite(u32),
    Lazy {
        /// Depth of the current internal node.
        level: usize,
        /// Its rank among the internal nodes of that level.
        rank: usize,
        levels: Arc<Vec<Level>>,
    },
}

/// Per-stream walking state.
struct Walker<'a> {
    tree: &'a DdgTree,
    cursor: Cursor,
}

impl<'a> Walker<'a> {
    fn new(tree: &'a DdgTree) -> Self {
        let cursor = match &*tree.shape {
            Shape::Finite(_) => Cursor::Finite(0),
            Shape::Lazy(l) => Cursor::Lazy {
                level: 0,
                rank: 0,
                levels: l.levels_to(64),
            },
        };
        Self { tree, cursor }
    }

    /// Advances by one bit; returns the label when a terminal is reached,
    /// after which the walk restarts at the root.
    #[inline]
    fn feed(&mut self, bit: bool) -> Option<usize> {
        match (&mut self.cursor, &*self.tree.shape) {
            (Cursor::Finite(cur), Shape::Finite(t)) => {
                let Node::Internal(kids) = t.nodes[*cur as usize] else {
                    unreachable!("cursor rests on internal nodes")
                };
                let next = kids[bit as usize];
                match t.nodes[next as usize] {
                    Node::Leaf(label) => {
                        *cur = 0;
                        Some(label)
                    }
                    Node::Internal(_) => {
                        *cur = next;
                        None
                    }
                }
            }
            (
                Cursor::Lazy {
                    level,
                    rank,
                    levels,
                },
                Shape::Lazy(l),
            ) => {
                if *level >= levels.len() {
                    *levels = l.levels_to(2 * levels.len());
                }
                let lv = &levels[*level];
                let slot = 2 * *rank + bit as usize;
                let t = lv.terminals.len();
                if slot < t {
                    let label = lv.terminals[slot];
                    *level = 0;
                    *rank = 0;
                    Some(label)
                } else {
                    *level += 1;
                    *rank = slot - t;
                    None
                }
            }
            _ => unreachable!("cursor matches tree shape"),
        }
    }
}

/// Labels, bits consumed and block end positions from [`ddg_extract`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Extraction {
    pub labels: Vec<usize>,
    pub consumed: usize,
    pub boundaries: Vec<usize>,
}

/// Walks `x` from the root, emitting a label at each terminal, until
/// `count` labels exist. Fails with [`Error::Stalled`] (carrying the partial
/// result) when `input_cap` bits are read mid-symbol or the stream ends.
pub fn ddg_extract(
    tree: &DdgTree,
    x: &mut dyn BitStream,
    count: usize,
    input_cap: usize,
) -> Result<Extraction> {
    let mut w = Walker::new(tree);
    let mut labels = Vec::with_capacity(count);
    let mut boundaries = Vec::with_capacity(count);
    let mut consumed = 0;
    while labels.len() < count {
        let bit = if consumed < input_cap {
            x.next_bit()
        } else {
            None
        };
        let Some(bit) = bit else {
            return Err(Error::Stalled {
                consumed,
                cap: input_cap,
                labels,
                boundaries,
            });
        };
        consumed += 1;
        if let Some(l) = w.feed(bit) {
            labels.push(l);
            boundaries.push(consumed);
        }
    }
    Ok(Extraction {
        labels,
        consumed,
        boundaries,
    })
}

/// Applies the tree-shift T_S `times` times: removes the first `times`
/// S-blocks of `x`, reading at most `cap` bits to find them.
pub fn tree_shift<S: BitStream>(
    tree: &DdgTree,
    times: usize,
    mut x: S,
    cap: usize,
) -> Result<TreeShift<S>> {
    let ex = ddg_extract(tree, &mut x, times, cap)?;
    Ok(TreeShift {
        inner: x,
        skip: ex.consumed,
        pos: 0,
        boundaries: ex.boundaries,
    })
}

/// A stream with its leading S-blocks removed.
pub struct TreeShift<S> {
    inner: S,
    skip: usize,
    pos: usize,
    boundaries: Vec<usize>,
}

impl<S> TreeShift<S> {
    /// Number of bits removed.
    pub fn skipped(&self) -> usize {
        self.skip
    }

    /// End positions of the removed blocks in the original stream.
    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    pub fn into_inner(self) -> S {
        self.inner
    }
}

impl<S: BitStream> BitStream for TreeShift<S> {
    fn next_bit(&mut self) -> Option<bool> {
        let b = self.inner.next_bit()?;
        self.pos += 1;
        Some(b)
    }

    fn position(&self) -> usize {
        self.pos
    }

    fn reset(&mut self) {
        self.inner.reset();
        for _ in 0..self.skip {
            self.inner.next_bit();
        }
        self.pos = 0;
    }
}

/// Monte-Carlo Avg(Φ_S, λ, n): the exact mean of (symbols in σ)/n over
/// `samples` Lebesgue-sampled strings of length n.
pub fn avg_rate_monte_carlo(
    tree: &DdgTree,
    n: usize,
    samples: usize,
    seed: u64,
) -> Result<BigRational> {
    if n == 0 || samples == 0 {
        return Err(Error::InvalidArgument(
            "Monte-Carlo average needs n ≥ 1 and samples ≥ 1".into(),
        ));
    }
    let lambda = Measure::lebesgue();
    let total: usize = (0..samples)
        .into_par_iter()
        .map(|s| {
            let x = sample(&lambda, derive_seed(seed, n as u64, s as u64), n);
            tree.symbol_count(x.as_slice())
        })
        .sum();
    Ok(BigRational::new(
        BigInt::from(total),
        BigInt::from(n) * BigInt::from(samples),
    ))
}

/// Empirical label frequencies of `labels` over an alphabet of size k.
pub fn label_frequencies(labels: &[usize], k: usize) -> Vec<f64> {
    let mut counts = vec![0usize; k];
    for &l in labels {
        counts[l] += 1;
    }
    let n = labels.len().max(1) as f64;
    counts.into_iter().map(|c| c as f64 / n).collect()
}

/// A label ↦ string map as used in reports.
pub fn label_map(tree: &DdgTree) -> BTreeMap<usize, String> {
    tree.alphabet().iter().cloned().enumerate().collect()
}

pub mod bundled {
    use super::*;

    /// {0 ↦ a, 10 ↦ b, 11 ↦ c}, inducing (1/2, 1/4, 1/4).
    pub fn three() -> DdgTree {
        make_ddg(&[
            (BitString::parse("0").unwrap(), "a".into()),
            (BitString::parse("10").unwrap(), "b".into()),
            (BitString::parse("11").unwrap(), "c".into()),
        ])
        .expect("valid tree")
    }

    /// The lazy Knuth–Yao tree for (2/3, 1/3).
    pub fn ky_thirds() -> DdgTree {
        let third = BigRational::new(BigInt::one(), BigInt::from(3));
        knuth_yao(&[&third * BigInt::from(2), third], &default_tail_tol()).expect("valid")
    }

    pub fn all() -> Vec<(&'static str, DdgTree)> {
        vec![("three", three()), ("ky-thirds", ky_thirds())]
    }

    pub fn by_name(name: &str) -> Option<DdgTree> {
        all().into_iter().find(|(n, _)| *n == name).map(|(_, t)| t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bitseq::VecStream;
    use crate::measures::MeasureStream;
    use rand::{seq::SliceRandom, Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bs(s: &str) -> BitString {
        BitString::parse(s).unwrap()
    }

    fn rat(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    fn tree(spec: &[(&str, &str)]) -> Result<DdgTree> {
        make_ddg(
            &spec
                .iter()
                .map(|(s, l)| (bs(s), l.to_string()))
                .collect::<Vec<_>>(),
        )
    }

    #[test]
    fn make_ddg_examples() {
        let t = tree(&[("0", "a"), ("1", "b")]).unwrap();
        assert_eq!(t.distribution(), vec![rat(1, 2), rat(1, 2)]);
        let t = tree(&[("0", "a"), ("10", "b"), ("11", "c")]).unwrap();
        assert_eq!(t.distribution(), vec![rat(1, 2), rat(1, 4), rat(1, 4)]);
        assert_eq!(t.alphabet(), ["a", "b", "c"]);
        assert!(matches!(
            tree(&[("0", "a"), ("01", "b")]),
            Err(Error::NotPrefixFree(..))
        ));
        assert!(matches!(
            tree(&[("01", "a"), ("0", "b")]),
            Err(Error::NotPrefixFree(..))
        ));
        assert!(matches!(
            tree(&[("0", "a"), ("0", "b")]),
            Err(Error::NotPrefixFree(..))
        ));
        match tree(&[("0", "a"), ("10", "b")]) {
            Err(Error::MassMismatch { gap, excess }) => {
                assert_eq!(gap, rat(1, 4));
                assert!(!excess);
            }
            other => panic!("{other:?}"),
        }
        assert!(tree(&[("", "a")]).is_err());
    }

    #[test]
    fn repeated_labels_sum() {
        let t = tree(&[("00", "x"), ("01", "y"), ("1", "x")]).unwrap();
        assert_eq!(t.distribution(), vec![rat(3, 4), rat(1, 4)]);
    }

    #[test]
    fn knuth_yao_dyadic_is_finite() {
        let t = knuth_yao(&[rat(1, 2), rat(1, 4), rat(1, 4)], &default_tail_tol()).unwrap();
        assert!(t.is_finite());
        let mut terms: Vec<_> = t.terminals().unwrap().to_vec();
        terms.sort();
        assert_eq!(terms, vec![(bs("0"), 0), (bs("10"), 1), (bs("11"), 2)]);
        assert_eq!(t.avg_rt().unwrap().value, rat(3, 2));
    }

    #[test]
    fn knuth_yao_thirds_alternates() {
        let t = bundled::ky_thirds();
        assert!(!t.is_finite());
        let terms = t.terminals_to_level(10);
        assert_eq!(terms.len(), 10);
        for (s, l) in &terms {
            assert_eq!(*l, (s.len() + 1) % 2, "level {} label", s.len());
        }
        assert_eq!(t.level_counts(6), vec![1; 6]);
        let deficit = t.mass_deficit_at_level(10);
        assert_eq!(deficit, rat(1, 1024));
    }

    #[test]
    fn knuth_yao_rejects_bad_distributions() {
        let tol = default_tail_tol();
        assert!(matches!(
            knuth_yao(&[rat(1, 1)], &tol),
            Err(Error::InvalidDistribution(_))
        ));
        assert!(knuth_yao(&[rat(1, 2), rat(1, 3)], &tol).is_err());
        assert!(knuth_yao(&[rat(1, 1), rat(0, 1)], &tol).is_err());
        assert!(knuth_yao(&[rat(3, 2), rat(-1, 2)], &tol).is_err());
        assert!(knuth_yao(&[rat(1, 2), rat(1, 2)], &rat(0, 1)).is_err());
    }

    #[test]
    fn avg_rt_examples() {
        assert_eq!(
            tree(&[("0", "a"), ("1", "b")])
                .unwrap()
                .avg_rt()
                .unwrap()
                .value,
            rat(1, 1)
        );
        let r = bundled::three().avg_rt().unwrap();
        assert!(r.is_exact());
        assert_eq!(r.value, rat(3, 2));

        let t = bundled::ky_thirds();
        let r = t.avg_rt_at_level(40).unwrap();
        assert!(r.contains(&rat(2, 1)));
        assert!(r.tail_bound < rat(1, 1_000_000_000));
        let auto = t.avg_rt().unwrap();
        assert!(auto.tail_bound <= *t.tail_tol());
        assert!(auto.contains(&rat(2, 1)));
    }

    #[test]
    fn extract_hand_walk() {
        let t = bundled::three();
        let mut x = VecStream::new(bs("110100"));
        let ex = ddg_extract(&t, &mut x, 3, 100).unwrap();
        assert_eq!(ex.labels, vec![2, 0, 1]);
        assert_eq!(ex.consumed, 5);
        assert_eq!(ex.boundaries, vec![2, 3, 5]);

        let mut x = VecStream::new(bs("1101"));
        let ex = ddg_extract(&t, &mut x, 0, 100).unwrap();
        assert_eq!(
            ex,
            Extraction {
                labels: vec![],
                consumed: 0,
                boundaries: vec![]
            }
        );
    }

    #[test]
    fn extract_coin_copies_input() {
        let t = tree(&[("0", "a"), ("1", "b")]).unwrap();
        let x = bs("0110100111");
        let ex = ddg_extract(&t, &mut VecStream::new(x.clone()), 7, 100).unwrap();
        assert_eq!(ex.consumed, 7);
        let bits: Vec<usize> = x.iter().take(7).map(|b| b as usize).collect();
        assert_eq!(ex.labels, bits);
    }

    #[test]
    fn extract_stalls_with_partial_result() {
        let t = bundled::three();
        match ddg_extract(&t, &mut VecStream::new(bs("01111")), 5, 4) {
            Err(Error::Stalled {
                consumed,
                cap,
                labels,
                boundaries,
            }) => {
                assert_eq!((consumed, cap), (4, 4));
                assert_eq!(labels, vec![0, 2]);
                assert_eq!(boundaries, vec![1, 3]);
            }
            other => panic!("{other:?}"),
        }
        // A stream that ends mid-symbol stalls too.
        assert!(ddg_extract(&t, &mut VecStream::new(bs("1")), 1, 100).is_err());
    }

    #[test]
    fn tree_shift_examples() {
        let coin = tree(&[("0", "a"), ("1", "b")]).unwrap();
        let x = bs("10110");
        let mut s = tree_shift(&coin, 1, VecStream::new(x.clone()), 10).unwrap();
        assert_eq!(s.take_bits(10), x.slice(1, 5));

        let t = bundled::three();
        let mut s = tree_shift(&t, 1, VecStream::new(bs("1100")), 10).unwrap();
        assert_eq!(s.take_bits(10), bs("00"));
        s.reset();
        assert_eq!(s.take_bits(1), bs("0"));

        assert!(matches!(
            tree_shift(&t, 1, VecStream::new(bs("1111")), 1),
            Err(Error::Stalled { .. })
        ));
    }

    #[test]
    fn iterated_tree_shift_matches_boundaries() {
        let t = bundled::three();
        let x = sample(&Measure::lebesgue(), 5, 200);
        let ex = ddg_extract(&t, &mut VecStream::new(x.clone()), 20, 200).unwrap();
        for k in 1..=20 {
            let mut s = tree_shift(&t, k, VecStream::new(x.clone()), 200).unwrap();
            assert_eq!(s.skipped(), ex.boundaries[k - 1]);
            assert_eq!(s.boundaries(), &ex.boundaries[..k]);
            assert_eq!(
                s.take_bits(5),
                x.slice(ex.boundaries[k - 1], ex.boundaries[k - 1] + 5)
            );
        }
    }

    #[test]
    fn lazy_and_trie_walks_agree() {
        // The dyadic tree walked through the level representation must give
        // the same labels as the trie.
        let dist = [rat(1, 2), rat(1, 4), rat(1, 8), rat(1, 8)];
        let finite = knuth_yao(&dist, &default_tail_tol()).unwrap();
        let lazy = DdgTree {
            shape: Arc::new(Shape::Lazy(LazyTree {
                dist: dist.to_vec(),
                dens: dist.iter().map(|p| p.denom().magnitude().clone()).collect(),
                cache: Mutex::new(KyLevels {
                    rems: dist.iter().map(|p| p.numer().magnitude().clone()).collect(),
                    levels: Arc::new(Vec::new()),
                }),
            })),
            alphabet: finite.alphabet.clone(),
            tail_tol: default_tail_tol(),
        };
        let x = sample(&Measure::lebesgue(), 9, 5000);
        assert_eq!(finite.symbols(x.as_slice()), lazy.symbols(x.as_slice()));
    }

    #[test]
    fn lambda_invariance_exact() {
        // Σ_{σ ∈ D(S)} λ(σ·τ) = λ(τ) for all τ up to length 8.
        let lambda = Measure::lebesgue();
        for (_, t) in bundled::all() {
            let Some(terms) = t.terminals() else { continue };
            for len in 0..=8 {
                for tau in BitString::all_of_len(len) {
                    let lhs: BigRational = terms
                        .iter()
                        .map(|(s, _)| lambda.cylinder_mass(&s.concat(&tau)))
                        .sum();
                    assert_eq!(lhs, lambda.cylinder_mass(&tau));
                }
            }
        }
    }

    /// A random valid tree for `dist` (all dyadic): split each p_j into
    /// random dyadic pieces, then assign canonical prefix codes by length.
    fn random_tree(dist: &[BigRational], rng: &mut ChaCha8Rng) -> DdgTree {
        let mut pieces: Vec<(usize, usize)> = Vec::new(); // (length, label)
        for (j, p) in dist.iter().enumerate() {
            let t = knuth_yao(&[p.clone(), BigRational::one() - p], &default_tail_tol()).unwrap();
            for (s, l) in t.terminals().unwrap() {
                if *l == 0 {
                    pieces.push((s.len(), j));
                }
            }
        }
        for _ in 0..rng.gen_range(0..6) {
            let i = rng.gen_range(0..pieces.len());
            let (len, l) = pieces[i];
            if len < 10 {
                pieces[i] = (len + 1, l);
                pieces.push((len + 1, l));
            }
        }
        pieces.shuffle(rng);
        pieces.sort_by_key(|p| p.0);
        // Canonical code: consecutive codewords in lexicographic order.
        let mut code = BigUint::zero();
        let mut prev = 0;
        let mut terms = Vec::new();
        for (len, l) in pieces {
            code <<= len - prev;
            prev = len;
            let bits: BitString = (0..len).rev().map(|i| code.bit(i as u64)).collect();
            terms.push((bits, format!("a{}", l + 1)));
            code += 1u32;
        }
        let mut sorted: Vec<(BitString, String)> = terms;
        sorted.sort_by(|a, b| a.1.cmp(&b.1));
        make_ddg(&sorted).unwrap()
    }

    #[test]
    fn knuth_yao_beats_random_trees() {
        let dist = [rat(1, 2), rat(1, 4), rat(1, 4)];
        let ky = knuth_yao(&dist, &default_tail_tol())
            .unwrap()
            .avg_rt()
            .unwrap()
            .value;
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let t = random_tree(&dist, &mut rng);
            assert_eq!(t.distribution(), dist.to_vec());
            assert!(ky <= t.avg_rt().unwrap().value);
        }
    }

    #[test]
    fn parse_formats() {
        let t = DdgTree::parse("0\ta\n10\tb\n# comment\n11\tc\n").unwrap();
        assert_eq!(t.distribution(), vec![rat(1, 2), rat(1, 4), rat(1, 4)]);
        assert_eq!(
            DdgTree::parse(&t.to_table()).unwrap().distribution(),
            t.distribution()
        );

        let t = DdgTree::parse("ky: 2/3,1/3\ntail_tol: 1/1000\n").unwrap();
        assert!(!t.is_finite());
        assert_eq!(*t.tail_tol(), rat(1, 1000));
        let again = DdgTree::parse(&t.to_table()).unwrap();
        assert_eq!(again.distribution(), t.distribution());

        let t = DdgTree::from_config("tree: 0=a,1=b", None).unwrap();
        assert_eq!(t.alphabet_size(), 2);
        let t = DdgTree::from_config("ky: 1/2,1/4,1/4", None).unwrap();
        assert!(t.is_finite());
        assert!(DdgTree::from_config("three", None).unwrap().is_finite());
        assert!(DdgTree::parse("0 a\n").is_err());
        assert!(DdgTree::parse("ky: 1/2,1/2\n0\ta\n").is_err());
    }

    #[test]
    fn lazy_cache_is_consistent_across_threads() {
        let t = bundled::ky_thirds();
        let counts: Vec<Vec<usize>> = (0..8)
            .into_par_iter()
            .map(|i| t.level_counts(50 + 13 * i))
            .collect();
        for c in &counts {
            assert!(c.iter().all(|&x| x == 1));
        }
    }

    #[test]
    fn sampled_frequencies_small() {
        for (_, t) in bundled::all() {
            let mut x = MeasureStream::new(Measure::lebesgue(), 3);
            let ex = ddg_extract(&t, &mut x, 100_000, 10_000_000).unwrap();
            let freq = label_frequencies(&ex.labels, t.alphabet_size());
            for (f, p) in freq.iter().zip(t.distribution()) {
                assert!((f - crate::measures::rational_to_f64(&p)).abs() < 0.01);
            }
        }
    }

    #[test]
    fn first_block_len_matches_terminals() {
        let t = bundled::three();
        assert_eq!(t.first_block_len(&[true, false, true]), Some(2));
        assert_eq!(t.first_block_len(&[false]), Some(1));
        assert_eq!(t.first_block_len(&[true]), None);
        assert_eq!(t.min_depth(), 1);
        assert_eq!(bundled::ky_thirds().min_depth(), 1);
    }
}
