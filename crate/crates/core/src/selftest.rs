//! Fast exact-arithmetic invariant checks across all modules, run by the
//! `selftest` subcommand.

use std::sync::Arc;

use num_rational::BigRational;
use num_traits::{One, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bitseq::{decode_bitstream, dyadic_interval, encode_bitstream, BitString, VecStream};
use crate::blockmap::{peres, von_neumann};
use crate::ddg::{self, ddg_extract};
use crate::ergodic::{check_invariance, check_mixing, ShiftSpec};
use crate::generators::{avg_oi, canonicalize, oscillating_beta, Duplication, Generator, Identity};
use crate::levinkautz::{kautz_check, lk_run, LkState};
use crate::measures::{bundled, sample, Measure, MeasureStream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub module: String,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

type Check = (&'static str, &'static str, fn() -> Result<String, String>);

fn rat(n: i64, d: i64) -> BigRational {
    BigRational::new(n.into(), d.into())
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn checks() -> Vec<Check> {
    vec![
        ("bitseq", "file round trip", bitseq_roundtrip),
        ("bitseq", "dyadic intervals", dyadic_intervals),
        ("measures", "additivity to length 8", additivity),
        (
            "measures",
            "interval equals literal sum to length 6",
            literal_intervals,
        ),
        (
            "generators",
            "identity and duplication canonical",
            canonical_examples,
        ),
        ("generators", "oscillating β values", beta_values),
        ("blockmap", "von Neumann exact rates", vn_rates),
        (
            "blockmap",
            "block-rate theorem for von Neumann",
            block_rate_theorem,
        ),
        ("blockmap", "Peres φ₁ agrees with von Neumann", peres_vn),
        ("ddg", "AvgRT examples", avg_rt_examples),
        ("ddg", "hand-walked extraction", ddg_walk),
        (
            "ddg",
            "tree-shift λ-invariance to length 6",
            tree_invariance,
        ),
        ("levinkautz", "identity conversion", lk_identity),
        ("levinkautz", "interval invariants", lk_invariants),
        ("levinkautz", "Kautz bound (i) to n = 2000", lk_kautz),
        ("ergodic", "2-shift mixing to length 3", mixing_n_shift),
        ("ergodic", "tree-shift mixing to length 3", mixing_tree),
    ]
}

/// Runs every check, in parallel, reporting results in a fixed order.
pub fn run() -> Vec<CheckResult> {
    checks()
        .par_iter()
        .map(|(module, name, f)| {
            let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
            CheckResult {
                module: module.to_string(),
                name: name.to_string(),
                passed: outcome.is_ok(),
                detail: outcome.unwrap_or_else(|e| e),
            }
        })
        .collect()
}

fn bitseq_roundtrip() -> Result<String, String> {
    for len in [0, 1, 7, 8, 9, 100] {
        let bits = sample(&Measure::lebesgue(), len as u64, len);
        for header in [false, true] {
            let back =
                decode_bitstream(&encode_bitstream(&bits, header)).map_err(|e| e.to_string())?;
            ensure(back == bits, || format!("length {len}, header {header}"))?;
        }
    }
    Ok("lengths 0..100".into())
}

fn dyadic_intervals() -> Result<String, String> {
    let lambda = Measure::lebesgue();
    for len in 0..=6 {
        for s in BitString::all_of_len(len) {
            ensure(dyadic_interval(&s) == lambda.measure_interval(&s), || {
                s.to_string()
            })?;
        }
    }
    Ok("127 strings".into())
}

fn additivity() -> Result<String, String> {
    let mut n = 0;
    for (name, mu) in bundled::all() {
        for len in 0..8 {
            for s in BitString::all_of_len(len) {
                let sum = mu.cylinder_mass(&s.child(false)) + mu.cylinder_mass(&s.child(true));
                ensure(sum == mu.cylinder_mass(&s), || format!("{name} at {s}"))?;
                n += 1;
            }
        }
        ensure(mu.cylinder_mass(&BitString::new()).is_one(), || {
            name.to_string()
        })?;
    }
    Ok(format!("{n} splits"))
}

fn literal_intervals() -> Result<String, String> {
    for (name, mu) in bundled::all() {
        for len in 0..=6 {
            let mut below = BigRational::zero();
            for s in BitString::all_of_len(len) {
                let iv = mu.measure_interval(&s);
                let mass = mu.cylinder_mass(&s);
                ensure(*iv.lo() == below && iv.width() == mass, || {
                    format!("{name} at {s}")
                })?;
                below += mass;
            }
        }
    }
    Ok("all bundled measures".into())
}

fn canonical_examples() -> Result<String, String> {
    let id = canonicalize(Arc::new(Identity), 8).map_err(|e| e.to_string())?;
    let dup = canonicalize(Arc::new(Duplication), 8).map_err(|e| e.to_string())?;
    for len in 0..=6 {
        for s in BitString::all_of_len(len) {
            ensure(id.try_eval(&s).map_err(|e| e.to_string())? == s, || {
                s.to_string()
            })?;
            ensure(
                dup.try_eval(&s).map_err(|e| e.to_string())? == Duplication.eval(&s),
                || s.to_string(),
            )?;
        }
    }
    Ok("strings to length 6".into())
}

fn beta_values() -> Result<String, String> {
    let want = [
        (0, 0),
        (1, 2),
        (2, 4),
        (3, 5),
        (4, 8),
        (5, 9),
        (7, 11),
        (8, 16),
    ];
    for (m, b) in want {
        ensure(oscillating_beta(m) == b, || format!("β({m})"))?;
    }
    Ok("β(2ᵏ+i) = 2ᵏ⁺¹+i".into())
}

fn vn_rates() -> Result<String, String> {
    let vn = von_neumann();
    for p in [rat(1, 2), rat(3, 10), rat(1, 4)] {
        let mu = Measure::bernoulli(p.clone()).map_err(|e| e.to_string())?;
        let r = vn.block_rate(&mu).map_err(|e| e.to_string())?;
        ensure(r == &p * (BigRational::one() - &p), || format!("p = {p}"))?;
    }
    Ok("p ∈ {1/2, 3/10, 1/4}".into())
}

fn block_rate_theorem() -> Result<String, String> {
    let vn = von_neumann();
    let mu = bundled::step2();
    let base = avg_oi(&vn, &mu, 2).map_err(|e| e.to_string())?;
    for k in 1..=4 {
        let at = avg_oi(&vn, &mu, 2 * k).map_err(|e| e.to_string())?;
        ensure(at == base, || format!("n = {}", 2 * k))?;
        let odd = avg_oi(&vn, &mu, 2 * k + 1).map_err(|e| e.to_string())?;
        ensure(odd <= at, || format!("n = {}", 2 * k + 1))?;
    }
    Ok(format!("Avg = {base}"))
}

fn peres_vn() -> Result<String, String> {
    let p1 = peres(1).map_err(|e| e.to_string())?;
    let vn = von_neumann();
    for len in [0, 2, 4, 6, 8] {
        for s in BitString::all_of_len(len) {
            ensure(p1.extract(s.as_slice()) == vn.eval(&s), || s.to_string())?;
        }
    }
    Ok("even lengths to 8".into())
}

fn avg_rt_examples() -> Result<String, String> {
    let three = ddg::bundled::three().avg_rt().map_err(|e| e.to_string())?;
    ensure(three.value == rat(3, 2) && three.is_exact(), || {
        "three-leaf tree".into()
    })?;
    let ky = ddg::bundled::ky_thirds()
        .avg_rt_at_level(40)
        .map_err(|e| e.to_string())?;
    ensure(ky.contains(&rat(2, 1)), || "Knuth–Yao (2/3, 1/3)".into())?;
    Ok(format!(
        "3/2 exact; 2 within {}",
        crate::measures::rational_to_f64(&ky.tail_bound)
    ))
}

fn ddg_walk() -> Result<String, String> {
    let t = ddg::bundled::three();
    let ex = ddg_extract(
        &t,
        &mut VecStream::new(BitString::parse("110100").unwrap()),
        3,
        10,
    )
    .map_err(|e| e.to_string())?;
    ensure(
        ex.labels == [2, 0, 1] && ex.consumed == 5 && ex.boundaries == [2, 3, 5],
        || format!("{ex:?}"),
    )?;
    Ok("110100 → c a b".into())
}

fn tree_invariance() -> Result<String, String> {
    let n = check_invariance(
        &ShiftSpec::tree_shift(ddg::bundled::three()),
        &Measure::lebesgue(),
        6,
    )
    .map_err(|e| e.to_string())?;
    Ok(format!("{n} cylinders"))
}

fn lk_identity() -> Result<String, String> {
    let lambda = Measure::lebesgue();
    let x = sample(&lambda, 1, 256);
    let s =
        lk_run(&lambda, &lambda, &mut VecStream::new(x.clone()), 256).map_err(|e| e.to_string())?;
    ensure(s.output() == &x, || "λ → λ".into())?;
    Ok("256 bits".into())
}

fn lk_invariants() -> Result<String, String> {
    let pairs = [
        (bundled::bernoulli_quarter(), Measure::lebesgue()),
        (Measure::lebesgue(), bundled::markov()),
        (bundled::markov(), bundled::step2()),
    ];
    for (mu, nu) in pairs {
        let mut s = LkState::new(&mu, &nu).map_err(|e| e.to_string())?;
        let mut x = MeasureStream::new(mu.clone(), 7);
        for n in 1..=200 {
            s.step(crate::bitseq::BitStream::next_bit(&mut x).unwrap());
            if n % 50 == 0 {
                s.check_invariants().map_err(|e| e.to_string())?;
            }
        }
    }
    Ok("three pairs, 200 bits".into())
}

fn lk_kautz() -> Result<String, String> {
    let mu = bundled::bernoulli_quarter();
    let r = kautz_check(
        &mu,
        &Measure::lebesgue(),
        &mut MeasureStream::new(mu.clone(), 1),
        2000,
    )
    .map_err(|e| e.to_string())?;
    ensure(r.violations == 0, || "violation".into())?;
    Ok(format!("{} witnesses of the lower bound", r.witnesses))
}

fn mixing_n_shift() -> Result<String, String> {
    let s = check_mixing(&ShiftSpec::n_shift(2).unwrap(), &bundled::step2(), 3)
        .map_err(|e| e.to_string())?;
    ensure(s.failures.is_empty(), || {
        format!("{:?}", s.failures.first())
    })?;
    Ok(format!("{} pairs", s.pairs))
}

fn mixing_tree() -> Result<String, String> {
    let s = check_mixing(
        &ShiftSpec::tree_shift(ddg::bundled::three()),
        &Measure::lebesgue(),
        3,
    )
    .map_err(|e| e.to_string())?;
    ensure(s.failures.is_empty(), || {
        format!("{:?}", s.failures.first())
    })?;
    Ok(format!("{} pairs", s.pairs))
}
