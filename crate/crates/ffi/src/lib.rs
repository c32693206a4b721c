//! C ABI over the `randext` library.
//!
//! Objects are opaque handles created by `rx_*_new` and released by the
//! matching `rx_*_free`. Bit arrays cross the boundary as one byte per bit
//! (0 or 1). Every fallible call returns an [`RxStatus`]; on failure the
//! message is available from [`rx_last_error`] until the next call on the
//! same thread. Strings returned through `char **` out-parameters are owned
//! by the caller and must be released with [`rx_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use randext::bitseq::{format_rational, parse_rational, BitString, VecStream};
use randext::blockmap::{von_neumann, BlockMap};
use randext::ddg::{ddg_extract, DdgTree};
use randext::levinkautz::lk_convert;
use randext::Measure;

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RxStatus {
    Ok = 0,
    /// Bad configuration, malformed input, or an argument out of range.
    InvalidInput = 1,
    /// The computation could not meet its contract (stall, exceeded cap).
    ContractFailure = 2,
    /// A required pointer was null or a string was not UTF-8.
    NullPointer = 3,
    /// The caller's output buffer is too small; the needed size was written.
    BufferTooSmall = 4,
    /// A bug: the library panicked.
    Internal = 5,
}

/// Opaque probability measure on infinite bit sequences.
pub struct RxMeasure(Measure);

/// Opaque n-block extractor.
pub struct RxBlockMap(BlockMap);

/// Opaque DDG tree.
pub struct RxTree(DdgTree);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Fail(RxStatus, String);

impl From<randext::Error> for Fail {
    fn from(e: randext::Error) -> Self {
        let status = if e.is_contract_failure() {
            RxStatus::ContractFailure
        } else {
            RxStatus::InvalidInput
        };
        Fail(status, e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(RxStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, translating errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> RxStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RxStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            RxStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(RxStatus::NullPointer, format!("{what} is not UTF-8")))
}

unsafe fn bits_arg(p: *const u8, len: usize) -> Result<BitString, Fail> {
    if len == 0 {
        return Ok(BitString::new());
    }
    if p.is_null() {
        return Err(null("bits"));
    }
    let bytes = std::slice::from_raw_parts(p, len);
    let mut bits = Vec::with_capacity(len);
    for (i, &b) in bytes.iter().enumerate() {
        match b {
            0 => bits.push(false),
            1 => bits.push(true),
            _ => {
                return Err(Fail(
                    RxStatus::InvalidInput,
                    format!("bit {i} has value {b}; expected 0 or 1"),
                ))
            }
        }
    }
    Ok(BitString::from_bits(bits))
}

unsafe fn write_out<T>(out: *mut T, v: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(v);
    Ok(())
}

unsafe fn write_string(out: *mut *mut c_char, s: String) -> Result<(), Fail> {
    let c = CString::new(s).map_err(|_| Fail(RxStatus::Internal, "nul in output".into()))?;
    write_out(out, c.into_raw(), "out")
}

/// Copies `bits` into a caller buffer, reporting the needed length.
unsafe fn write_bits(
    bits: &BitString,
    out: *mut u8,
    cap: usize,
    out_len: *mut usize,
) -> Result<(), Fail> {
    write_out(out_len, bits.len(), "out_len")?;
    if bits.len() > cap {
        return Err(Fail(
            RxStatus::BufferTooSmall,
            format!("need {} bytes, buffer has {cap}", bits.len()),
        ));
    }
    if bits.is_empty() {
        return Ok(());
    }
    if out.is_null() {
        return Err(null("out"));
    }
    for (i, &b) in bits.as_slice().iter().enumerate() {
        out.add(i).write(b as u8);
    }
    Ok(())
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

/// The message of the last failed call on this thread, or null. The pointer
/// stays valid until the next `rx_*` call on this thread.
#[no_mangle]
pub extern "C" fn rx_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must be null or a pointer previously returned through a `char **`
/// out-parameter of this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rx_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rx_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses a measure config such as `bernoulli:1/4` or a JSON object.
///
/// # Safety
/// `config` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rx_measure_new(
    config: *const c_char,
    out: *mut *mut RxMeasure,
) -> RxStatus {
    guard(|| {
        let mu = Measure::parse(str_arg(config, "config")?)?;
        write_out(out, Box::into_raw(Box::new(RxMeasure(mu))), "out")
    })
}

/// # Safety
/// `m` must be null or a live handle from [`rx_measure_new`].
#[no_mangle]
pub unsafe extern "C" fn rx_measure_free(m: *mut RxMeasure) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Entropy rate h(μ) in bits per symbol.
///
/// # Safety
/// `m` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rx_measure_entropy_rate(m: *const RxMeasure, out: *mut f64) -> RxStatus {
    guard(|| {
        let h = handle(m, "measure")?.0.entropy_rate()?;
        write_out(out, h, "out")
    })
}

/// Exact μ(⟦σ⟧) as "num/den".
///
/// # Safety
/// `bits` must hold `len` readable bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rx_measure_cylinder_mass(
    m: *const RxMeasure,
    bits: *const u8,
    len: usize,
    out: *mut *mut c_char,
) -> RxStatus {
    guard(|| {
        let mu = &handle(m, "measure")?.0;
        let sigma = bits_arg(bits, len)?;
        write_string(out, format_rational(&mu.cylinder_mass(&sigma)))
    })
}

/// Von Neumann's 2-block extractor.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rx_blockmap_von_neumann(out: *mut *mut RxBlockMap) -> RxStatus {
    guard(|| {
        write_out(
            out,
            Box::into_raw(Box::new(RxBlockMap(von_neumann()))),
            "out",
        )
    })
}

/// Parses a block table: one `input<TAB>output` line per block, `-` for ε.
///
/// # Safety
/// `table` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rx_blockmap_parse(
    table: *const c_char,
    out: *mut *mut RxBlockMap,
) -> RxStatus {
    guard(|| {
        let map = BlockMap::parse_table(str_arg(table, "table")?)?;
        write_out(out, Box::into_raw(Box::new(RxBlockMap(map))), "out")
    })
}

/// # Safety
/// `b` must be null or a live block-map handle.
#[no_mangle]
pub unsafe extern "C" fn rx_blockmap_free(b: *mut RxBlockMap) {
    if !b.is_null() {
        drop(Box::from_raw(b));
    }
}

/// Exact Rate(φ, μ) as "num/den".
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rx_blockmap_rate(
    b: *const RxBlockMap,
    m: *const RxMeasure,
    out: *mut *mut c_char,
) -> RxStatus {
    guard(|| {
        let r = handle(b, "blockmap")?
            .0
            .block_rate(&handle(m, "measure")?.0)?;
        write_string(out, format_rational(&r))
    })
}

/// Applies the extractor to `len` input bits. Writes up to `out_cap` output
/// bits to `out` and the output length to `out_len`; returns
/// `BufferTooSmall` (with `out_len` set) when `out_cap` is short.
///
/// # Safety
/// `bits` must hold `len` bytes, `out` must hold `out_cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn rx_blockmap_apply(
    b: *const RxBlockMap,
    bits: *const u8,
    len: usize,
    out: *mut u8,
    out_cap: usize,
    out_len: *mut usize,
) -> RxStatus {
    guard(|| {
        use randext::generators::Generator;
        let y = handle(b, "blockmap")?.0.eval(&bits_arg(bits, len)?);
        write_bits(&y, out, out_cap, out_len)
    })
}

/// Builds a DDG tree from a tree file's text, `ky: p1,p2,...`,
/// `tree: 0=a,10=b,...`, or a bundled name. `tail_tol` may be null.
///
/// # Safety
/// Strings must be NUL-terminated (or `tail_tol` null); `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rx_tree_new(
    config: *const c_char,
    tail_tol: *const c_char,
    out: *mut *mut RxTree,
) -> RxStatus {
    guard(|| {
        let tol = if tail_tol.is_null() {
            None
        } else {
            Some(parse_rational(str_arg(tail_tol, "tail_tol")?)?)
        };
        let cfg = str_arg(config, "config")?;
        let tree = if cfg.contains('\n') {
            let t = DdgTree::parse(cfg)?;
            match tol {
                Some(tol) => t.with_tail_tol(tol)?,
                None => t,
            }
        } else {
            DdgTree::from_config(cfg, tol.as_ref())?
        };
        write_out(out, Box::into_raw(Box::new(RxTree(tree))), "out")
    })
}

/// # Safety
/// `t` must be null or a live tree handle.
#[no_mangle]
pub unsafe extern "C" fn rx_tree_free(t: *mut RxTree) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// Number of output labels.
///
/// # Safety
/// `t` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rx_tree_alphabet_size(t: *const RxTree, out: *mut usize) -> RxStatus {
    guard(|| write_out(out, handle(t, "tree")?.0.alphabet_size(), "out"))
}

/// AvgRT as "num/den" (exact for finite trees, a lower bound for infinite
/// ones) and its certified tail bound ("0/1" when exact). `tail_bound` may
/// be null.
///
/// # Safety
/// `t` must be a live handle; `value` writable.
#[no_mangle]
pub unsafe extern "C" fn rx_tree_avg_rt(
    t: *const RxTree,
    value: *mut *mut c_char,
    tail_bound: *mut *mut c_char,
) -> RxStatus {
    guard(|| {
        let a = handle(t, "tree")?.0.avg_rt()?;
        write_string(value, format_rational(&a.value))?;
        if !tail_bound.is_null() {
            write_string(tail_bound, format_rational(&a.tail_bound))?;
        }
        Ok(())
    })
}

/// Extracts up to `count` labels (indices into the alphabet) from `len`
/// input bits. Returns `ContractFailure` when the input runs out first;
/// the labels produced so far are still written and counted.
///
/// # Safety
/// `bits` must hold `len` bytes, `labels` must hold `count` entries.
#[no_mangle]
pub unsafe extern "C" fn rx_tree_extract(
    t: *const RxTree,
    bits: *const u8,
    len: usize,
    count: usize,
    labels: *mut u32,
    out_count: *mut usize,
    consumed: *mut usize,
) -> RxStatus {
    guard(|| {
        let tree = &handle(t, "tree")?.0;
        let x = bits_arg(bits, len)?;
        if count > 0 && labels.is_null() {
            return Err(null("labels"));
        }
        let (got, used, err) = match ddg_extract(tree, &mut VecStream::new(x), count, len) {
            Ok(ex) => (ex.labels, ex.consumed, None),
            Err(randext::Error::Stalled {
                labels, consumed, ..
            }) => {
                let e = Fail(
                    RxStatus::ContractFailure,
                    format!("input ended after {} of {count} symbols", labels.len()),
                );
                (labels, consumed, Some(e))
            }
            Err(e) => return Err(e.into()),
        };
        for (i, &l) in got.iter().enumerate() {
            labels.add(i).write(l as u32);
        }
        write_out(out_count, got.len(), "out_count")?;
        if !consumed.is_null() {
            consumed.write(used);
        }
        err.map_or(Ok(()), Err)
    })
}

/// Converts `len` μ-distributed input bits into `out_bits` ν-distributed
/// output bits. Returns `ContractFailure` if the input runs out first.
///
/// # Safety
/// `bits` must hold `len` bytes and `out` must hold `out_bits` bytes.
#[no_mangle]
pub unsafe extern "C" fn rx_convert(
    from: *const RxMeasure,
    to: *const RxMeasure,
    bits: *const u8,
    len: usize,
    out_bits: usize,
    out: *mut u8,
    consumed: *mut usize,
) -> RxStatus {
    guard(|| {
        let mu = &handle(from, "from")?.0;
        let nu = &handle(to, "to")?.0;
        let x = bits_arg(bits, len)?;
        let c = lk_convert(mu, nu, &mut VecStream::new(x), out_bits, len)?;
        let mut n = 0;
        write_bits(&c.output, out, out_bits, &mut n)?;
        if !consumed.is_null() {
            consumed.write(c.consumed);
        }
        Ok(())
    })
}
