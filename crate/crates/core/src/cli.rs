//! The `randext` command line.
//!
//! Exit codes: 0 on success, 1 when input validation fails (bad flags,
//! invalid measure or tree), 2 when a computation contract fails (stall,
//! exceeded cap, violated bound).

use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_bigint::BigInt;
use num_rational::BigRational;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::bitseq::{
    format_rational, parse_rational, read_bitstream_file, write_bitstream_file, BitStream,
    BitString, VecStream,
};
use crate::blockmap::{peres, von_neumann, BlockMap, PeresExtractor};
use crate::ddg::{avg_rate_monte_carlo, ddg_extract, label_frequencies, DdgTree};
use crate::ergodic::{birkhoff_average, check_invariance, check_mixing, Observable, ShiftSpec};
use crate::error::{Error, Result};
use crate::generators::{
    avg_oi, oscillating_functional, rate_report, Duplication, Generator, Identity, RateOptions,
    RateReport,
};
use crate::levinkautz::{geometric_schedule, lk_convert_state, trace_points};
use crate::measures::{
    bundled, rational_to_f64, smb_entropy_estimate, Measure, MeasureKind, MeasureStream,
};

#[derive(Debug, Parser)]
#[command(
    name = "randext",
    version,
    about = "Randomness extraction and measure conversion with exact rate verification"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Write results to this file instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Output format; scalar results default to text, reports to JSON.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Omit the timestamp so identical runs give identical output.
    #[arg(long, global = true)]
    pub no_timestamp: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
    Csv,
}

#[derive(Debug, Clone, Args)]
pub struct Input {
    /// Input bitstream file, or an integer seed for sampling.
    #[arg(long = "in", value_name = "FILE|SEED")]
    pub input: Option<String>,
    /// Seed for sampling the input.
    #[arg(long, conflicts_with = "seeds")]
    pub seed: Option<u64>,
    /// Inclusive seed range a..b; runs fan out and merge in seed order.
    #[arg(long, value_name = "A..B")]
    pub seeds: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a block extractor over an input stream.
    Extract {
        /// vn, peres:K, identity, duplication, oscillating, table:PATH.
        #[arg(long)]
        gen: String,
        /// Measure used to sample the input.
        #[arg(long, default_value = "lebesgue")]
        measure: String,
        #[command(flatten)]
        input: Input,
        /// Input bits to read.
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        /// Write the output bits to this bitstream file.
        #[arg(long)]
        bits_out: Option<PathBuf>,
    },
    /// Convert a μ-stream into a ν-stream by nested intervals.
    Convert {
        #[arg(long)]
        from: String,
        #[arg(long)]
        to: String,
        #[command(flatten)]
        input: Input,
        /// Output bits wanted.
        #[arg(long)]
        out_bits: usize,
        /// Most input bits to read.
        #[arg(long, default_value_t = 100_000)]
        cap: usize,
        /// Write the g(n) trace here (JSON, or CSV for a .csv path).
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Average and pointwise extraction rates.
    Rate {
        #[arg(long)]
        gen: String,
        #[arg(long)]
        measure: String,
        /// Input length; the schedule ends here.
        #[arg(long)]
        n: Option<usize>,
        /// Comma-separated input lengths.
        #[arg(long, value_delimiter = ',')]
        schedule: Option<Vec<usize>>,
        /// Print the exact rational rate.
        #[arg(long)]
        exact: bool,
        /// Largest n averaged by enumeration.
        #[arg(long, default_value_t = 16)]
        exact_limit: usize,
        /// Samples per Monte-Carlo average.
        #[arg(long, default_value_t = 1000)]
        mc_samples: usize,
        /// Also record the OI trace along a sampled stream.
        #[arg(long)]
        stream: bool,
        #[command(flatten)]
        input: Input,
    },
    /// Entropy rate of a measure, optionally with an SMB estimate.
    Entropy {
        #[arg(long)]
        measure: String,
        /// Sample this many bits and report −log₂ μ(x↾n)/n.
        #[arg(long)]
        smb: Option<usize>,
        #[command(flatten)]
        input: Input,
    },
    /// Inspect a DDG tree and sample from it.
    Ddg {
        /// Tree file, `tree: 0=a,10=b,11=c`, `ky: 2/3,1/3`, or a bundled name.
        #[arg(long)]
        tree: String,
        #[arg(long)]
        tail_tol: Option<String>,
        /// Truncation level for the AvgRT of an infinite tree.
        #[arg(long)]
        levels: Option<usize>,
        /// Number of symbols to extract.
        #[arg(long)]
        extract: Option<usize>,
        /// Most input bits to read while extracting.
        #[arg(long, default_value_t = 100_000_000)]
        cap: usize,
        /// Monte-Carlo Avg at this input length.
        #[arg(long)]
        mc: Option<usize>,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[command(flatten)]
        input: Input,
    },
    /// Exact mixing and Birkhoff checks for the bundled shifts.
    ErgoCheck {
        /// Longest σ and τ in the mixing checks.
        #[arg(long, default_value_t = 5)]
        max_len: usize,
        /// Shift applications in each Birkhoff average.
        #[arg(long, default_value_t = 100_000)]
        k: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Run the exact-arithmetic invariant checks of every module.
    Selftest,
}

/// Parses `argv` (including the program name), runs the command and
/// returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(out) => match write_output(&cli.common, &out) {
            Ok(()) => out.exit_code,
            Err(e) => report_error(&e),
        },
        Err(e) => report_error(&e),
    }
}

fn report_error(e: &Error) -> i32 {
    eprintln!("error: {e}");
    if let Error::ConversionStalled {
        partial, g_trace, ..
    } = e
    {
        eprintln!(
            "  partial output: {} bits; last g(n): {:?}",
            partial.len(),
            &g_trace[g_trace.len().saturating_sub(5)..]
        );
    }
    if e.is_contract_failure() {
        2
    } else {
        1
    }
}

/// What a command produced, before formatting.
struct Output {
    command: &'static str,
    json: Value,
    text: Option<String>,
    csv: Option<String>,
    default_format: Format,
    exit_code: i32,
}

impl Output {
    fn json(command: &'static str, json: Value) -> Self {
        Self {
            command,
            json,
            text: None,
            csv: None,
            default_format: Format::Json,
            exit_code: 0,
        }
    }
}

fn write_output(common: &Common, out: &Output) -> Result<()> {
    let format = common.format.unwrap_or(out.default_format);
    let body = match format {
        Format::Text if out.text.is_some() => out.text.clone().unwrap(),
        Format::Csv if out.csv.is_some() => out.csv.clone().unwrap(),
        Format::Csv => {
            return Err(Error::InvalidArgument(format!(
                "{} has no CSV form",
                out.command
            )))
        }
        _ => {
            let mut envelope = serde_json::Map::new();
            envelope.insert("command".into(), json!(out.command));
            envelope.insert("version".into(), json!(env!("CARGO_PKG_VERSION")));
            if !common.no_timestamp {
                let secs = SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0);
                envelope.insert("timestamp".into(), json!(secs));
            }
            envelope.insert("result".into(), out.json.clone());
            let mut s = serde_json::to_string_pretty(&Value::Object(envelope))
                .expect("JSON values serialize");
            s.push('\n');
            s
        }
    };
    let body = if body.ends_with('\n') {
        body
    } else {
        body + "\n"
    };
    match &common.out {
        Some(path) => std::fs::write(path, body)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(body.as_bytes())?;
            stdout.flush()?;
        }
    }
    Ok(())
}

fn execute(cli: &Cli) -> Result<Output> {
    match &cli.command {
        Command::Extract {
            gen,
            measure,
            input,
            n,
            bits_out,
        } => cmd_extract(gen, measure, input, *n, bits_out.as_deref()),
        Command::Convert {
            from,
            to,
            input,
            out_bits,
            cap,
            trace,
        } => cmd_convert(from, to, input, *out_bits, *cap, trace.as_deref()),
        Command::Rate {
            gen,
            measure,
            n,
            schedule,
            exact,
            exact_limit,
            mc_samples,
            stream,
            input,
        } => cmd_rate(RateArgs {
            gen,
            measure,
            n: *n,
            schedule: schedule.as_deref(),
            exact: *exact,
            exact_limit: *exact_limit,
            mc_samples: *mc_samples,
            stream: *stream,
            input,
        }),
        Command::Entropy {
            measure,
            smb,
            input,
        } => cmd_entropy(measure, *smb, input),
        Command::Ddg {
            tree,
            tail_tol,
            levels,
            extract,
            cap,
            mc,
            samples,
            input,
        } => cmd_ddg(DdgArgs {
            tree,
            tail_tol: tail_tol.as_deref(),
            levels: *levels,
            extract: *extract,
            cap: *cap,
            mc: *mc,
            samples: *samples,
            input,
        }),
        Command::ErgoCheck { max_len, k, seed } => cmd_ergo_check(*max_len, *k, *seed),
        Command::Selftest => cmd_selftest(),
    }
}

/// A measure from an inline config, JSON, or a file holding either.
pub fn load_measure(s: &str) -> Result<Measure> {
    let path = Path::new(s);
    if path.is_file() {
        return Measure::parse(std::fs::read_to_string(path)?.trim());
    }
    match s {
        "markov" => Ok(bundled::markov()),
        "step2" => Ok(bundled::step2()),
        _ => Measure::parse(s),
    }
}

/// Generators accepted by `--gen`.
pub enum GenSpec {
    Block(BlockMap),
    Peres(PeresExtractor),
    Other(Arc<dyn Generator>),
}

impl GenSpec {
    pub fn parse(s: &str) -> Result<Self> {
        let (tag, rest) = s.split_once(':').unwrap_or((s, ""));
        Ok(match tag {
            "vn" | "von-neumann" => GenSpec::Block(von_neumann()),
            "peres" => {
                GenSpec::Peres(peres(rest.parse().map_err(|_| {
                    Error::Parse(format!("peres needs a depth, got {rest:?}"))
                })?)?)
            }
            "identity" => GenSpec::Other(Arc::new(Identity)),
            "duplication" => GenSpec::Other(Arc::new(Duplication)),
            "oscillating" => GenSpec::Other(Arc::new(oscillating_functional())),
            "table" => GenSpec::Block(BlockMap::load(Path::new(rest))?),
            _ if Path::new(s).is_file() => GenSpec::Block(BlockMap::load(Path::new(s))?),
            _ => return Err(Error::Parse(format!("unknown generator {s:?}"))),
        })
    }

    fn name(&self) -> String {
        match self {
            GenSpec::Block(b) => b.name().to_string(),
            GenSpec::Peres(p) => format!("peres:{}", p.depth()),
            GenSpec::Other(g) => g.name().to_string(),
        }
    }

    fn as_generator(&self) -> Option<&dyn Generator> {
        match self {
            GenSpec::Block(b) => Some(b),
            GenSpec::Peres(_) => None,
            GenSpec::Other(g) => Some(g.as_ref()),
        }
    }
}

/// Parses `a..b` or `a..=b` (both inclusive) or a single seed.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let bad = || Error::Parse(format!("bad seed range {s:?}; expected a..b"));
    let Some((a, b)) = s.split_once("..") else {
        return Ok(vec![s.trim().parse().map_err(|_| bad())?]);
    };
    let a: u64 = a.trim().parse().map_err(|_| bad())?;
    let b: u64 = b
        .trim_start_matches('=')
        .trim()
        .parse()
        .map_err(|_| bad())?;
    if b < a || b - a >= 1 << 16 {
        return Err(bad());
    }
    Ok((a..=b).collect())
}

/// Where input bits come from.
enum Source {
    File(PathBuf, BitString),
    Seeds(Vec<u64>),
}

fn resolve_input(input: &Input) -> Result<Source> {
    if let Some(s) = &input.seeds {
        if input.input.is_some() {
            return Err(Error::InvalidArgument("--seeds conflicts with --in".into()));
        }
        return Ok(Source::Seeds(parse_seeds(s)?));
    }
    match (&input.input, input.seed) {
        (Some(_), Some(_)) => Err(Error::InvalidArgument("--seed conflicts with --in".into())),
        (Some(s), None) => {
            let path = Path::new(s);
            if path.is_file() {
                Ok(Source::File(path.to_path_buf(), read_bitstream_file(path)?))
            } else if let Ok(seed) = s.parse::<u64>() {
                Ok(Source::Seeds(vec![seed]))
            } else {
                Err(Error::InvalidArgument(format!(
                    "--in {s:?} is neither a file nor a seed"
                )))
            }
        }
        (None, seed) => Ok(Source::Seeds(vec![seed.unwrap_or(0)])),
    }
}

/// Runs `f` once per input (one file, or each seed in parallel) and merges
/// the results: a single object, or an array in seed order.
fn fan_out<F>(source: &Source, mu: &Measure, f: F) -> Result<Value>
where
    F: Fn(&mut dyn BitStream, Value) -> Result<Value> + Sync,
{
    match source {
        Source::File(path, bits) => {
            let mut s = VecStream::new(bits.clone());
            f(&mut s, json!({"file": path.display().to_string()}))
        }
        Source::Seeds(seeds) if seeds.len() == 1 => {
            let mut s = MeasureStream::new(mu.clone(), seeds[0]);
            f(&mut s, json!({"seed": seeds[0]}))
        }
        Source::Seeds(seeds) => {
            let results: Vec<Result<Value>> = seeds
                .par_iter()
                .map(|&seed| {
                    let mut s = MeasureStream::new(mu.clone(), seed);
                    f(&mut s, json!({"seed": seed}))
                })
                .collect();
            Ok(Value::Array(
                results.into_iter().collect::<Result<Vec<_>>>()?,
            ))
        }
    }
}

fn rational(r: &BigRational) -> Value {
    json!(format_rational(r))
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn cmd_extract(
    gen: &str,
    measure: &str,
    input: &Input,
    n: usize,
    bits_out: Option<&Path>,
) -> Result<Output> {
    let spec = GenSpec::parse(gen)?;
    let mu = load_measure(measure)?;
    let source = resolve_input(input)?;
    if bits_out.is_some() && matches!(&source, Source::Seeds(s) if s.len() > 1) {
        return Err(Error::InvalidArgument(
            "--bits-out needs a single input".into(),
        ));
    }
    let json = fan_out(&source, &mu, |x, provenance| {
        let bits = x.take_bits(n);
        let out = match &spec {
            GenSpec::Peres(p) => p.extract(bits.as_slice()),
            _ => spec.as_generator().expect("not peres").eval(&bits),
        };
        if let Some(path) = bits_out {
            write_bitstream_file(path, &out, true)?;
        }
        Ok(json!({
            "generator": spec.name(),
            "measure": mu.to_inline(),
            "input": provenance,
            "input_bits": bits.len(),
            "output_bits": out.len(),
            "ratio": ratio(out.len(), bits.len()),
            "output": if out.len() <= 4096 { json!(out.to_string()) } else { Value::Null },
        }))
    })?;
    Ok(Output::json("extract", json))
}

fn cmd_convert(
    from: &str,
    to: &str,
    input: &Input,
    out_bits: usize,
    cap: usize,
    trace: Option<&Path>,
) -> Result<Output> {
    let mu = load_measure(from)?;
    let nu = load_measure(to)?;
    mu.require_positive()?;
    nu.require_positive()?;
    if cap == 0 {
        return Err(Error::InvalidArgument("--cap must be positive".into()));
    }
    let source = resolve_input(input)?;
    if trace.is_some() && matches!(&source, Source::Seeds(s) if s.len() > 1) {
        return Err(Error::InvalidArgument(
            "--trace needs a single input".into(),
        ));
    }
    let theoretical = match (mu.entropy_rate(), nu.entropy_rate()) {
        (Ok(a), Ok(b)) => Some(a / b),
        _ => None,
    };
    let json = fan_out(&source, &mu, |x, provenance| {
        let state = lk_convert_state(&mu, &nu, x, out_bits, cap)?;
        if let Some(path) = trace {
            let points = trace_points(&state, &geometric_schedule(state.n()));
            let body = if path.extension().is_some_and(|e| e == "csv") {
                let mut s = String::from("n,value\n");
                for p in &points {
                    s.push_str(&format!("{},{}\n", p.n, p.g));
                }
                s
            } else {
                serde_json::to_string_pretty(&points).expect("trace serializes") + "\n"
            };
            std::fs::write(path, body)?;
        }
        let output = state.output().prefix(out_bits);
        Ok(json!({
            "from": mu.to_inline(),
            "to": nu.to_inline(),
            "input": provenance,
            "cap": cap,
            "consumed": state.n(),
            "output_len": output.len(),
            "g": state.g(),
            "g_over_n": ratio(state.g(), state.n()),
            "theoretical": theoretical,
            "output": output.to_string(),
        }))
    })?;
    Ok(Output::json("convert", json))
}

struct RateArgs<'a> {
    gen: &'a str,
    measure: &'a str,
    n: Option<usize>,
    schedule: Option<&'a [usize]>,
    exact: bool,
    exact_limit: usize,
    mc_samples: usize,
    stream: bool,
    input: &'a Input,
}

fn cmd_rate(args: RateArgs) -> Result<Output> {
    let spec = GenSpec::parse(args.gen)?;
    let mu = load_measure(args.measure)?;
    if args.exact {
        let (value, what) = exact_rate(&spec, &mu, args.n)?;
        let mut out = Output::json(
            "rate",
            json!({
                "generator": spec.name(),
                "measure": mu.to_inline(),
                "n": args.n,
                "quantity": what,
                "value": rational(&value),
                "approx": rational_to_f64(&value),
            }),
        );
        out.text = Some(format_rational(&value));
        out.csv = Some(format!(
            "n,value\n{},{}\n",
            args.n.unwrap_or(0),
            format_rational(&value)
        ));
        out.default_format = Format::Text;
        return Ok(out);
    }
    let phi = spec.as_generator().ok_or_else(|| {
        Error::InvalidArgument("the Peres family supports only --exact rates".into())
    })?;
    let schedule: Vec<usize> = match (args.schedule, args.n) {
        (Some(s), _) => s.to_vec(),
        (None, Some(n)) => geometric_schedule(n),
        (None, None) => geometric_schedule(16),
    };
    let theoretical = match &spec {
        GenSpec::Block(b) => b.block_rate(&mu).ok().map(|r| rational_to_f64(&r)),
        _ => None,
    };
    let source = resolve_input(args.input)?;
    let seeds = match &source {
        Source::Seeds(s) => s.clone(),
        Source::File(..) => vec![0],
    };
    let run_one = |seed: u64| -> Result<RateReport> {
        let opts = RateOptions {
            exact_limit: args.exact_limit,
            mc_samples: args.mc_samples,
            seed,
            theoretical,
            stream_id: None,
        };
        match (&source, args.stream) {
            (Source::File(path, bits), _) => {
                let mut x = VecStream::new(bits.clone());
                let opts = RateOptions {
                    stream_id: Some(path.display().to_string()),
                    ..opts
                };
                rate_report(phi, &mu, &schedule, Some(&mut x), &opts)
            }
            (Source::Seeds(_), true) => {
                let mut x = MeasureStream::new(mu.clone(), seed);
                let opts = RateOptions {
                    stream_id: Some(format!("{}#{seed}", mu.to_inline())),
                    ..opts
                };
                rate_report(phi, &mu, &schedule, Some(&mut x), &opts)
            }
            (Source::Seeds(_), false) => rate_report(phi, &mu, &schedule, None, &opts),
        }
    };
    let reports: Vec<RateReport> = seeds
        .par_iter()
        .map(|&s| run_one(s))
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<_>>()?;
    let csv = rate_csv(&reports);
    let json = if reports.len() == 1 {
        serde_json::to_value(&reports[0])
    } else {
        serde_json::to_value(&reports)
    }
    .expect("reports serialize");
    let mut out = Output::json("rate", json);
    out.csv = Some(csv);
    Ok(out)
}

/// Exact Rate for block maps (Avg at the block length), exact Avg(φ, μ, n)
/// otherwise, and the exact expected Peres rate on Bernoulli inputs.
fn exact_rate(
    spec: &GenSpec,
    mu: &Measure,
    n: Option<usize>,
) -> Result<(BigRational, &'static str)> {
    match (spec, n) {
        (GenSpec::Peres(p), Some(m)) => {
            let MeasureKind::Bernoulli { p: prob } = mu.kind() else {
                if matches!(mu.kind(), MeasureKind::Lebesgue) {
                    let half = BigRational::new(BigInt::from(1), BigInt::from(2));
                    return Ok((p.expected_rate(&half, m)?, "expected rate"));
                }
                return Err(Error::InvalidArgument(
                    "exact Peres rates need a Bernoulli measure".into(),
                ));
            };
            Ok((p.expected_rate(prob, m)?, "expected rate"))
        }
        (GenSpec::Peres(_), None) => {
            Err(Error::InvalidArgument("exact Peres rates need --n".into()))
        }
        (GenSpec::Block(b), None) => Ok((b.block_rate(mu)?, "rate")),
        (_, Some(n)) => Ok((
            avg_oi(spec.as_generator().expect("not peres"), mu, n)?,
            "average",
        )),
        (GenSpec::Other(_), None) => Err(Error::InvalidArgument(
            "exact averages of this generator need --n".into(),
        )),
    }
}

fn rate_csv(reports: &[RateReport]) -> String {
    let mut s = String::from("n,value\n");
    for r in reports {
        if r.oi_trace.is_empty() {
            for e in &r.avg_by_n {
                s.push_str(&format!("{},{}\n", e.n, e.approx));
            }
        } else {
            for p in &r.oi_trace {
                s.push_str(&format!("{},{}\n", p.n, p.approx));
            }
        }
    }
    s
}

fn cmd_entropy(measure: &str, smb: Option<usize>, input: &Input) -> Result<Output> {
    let mu = load_measure(measure)?;
    let h = mu.entropy_rate()?;
    let mut result = json!({"measure": mu.to_inline(), "entropy_rate": h});
    if let Some(n) = smb {
        let source = resolve_input(input)?;
        let est = fan_out(&source, &mu, |x, provenance| {
            let e = smb_entropy_estimate(&mu, x, n)?;
            Ok(json!({"input": provenance, "n": n, "estimate": e, "error": e - h}))
        })?;
        result["smb"] = est;
    }
    let mut out = Output::json("entropy", result);
    out.text = Some(format!("{h}"));
    out.default_format = if smb.is_some() {
        Format::Json
    } else {
        Format::Text
    };
    Ok(out)
}

struct DdgArgs<'a> {
    tree: &'a str,
    tail_tol: Option<&'a str>,
    levels: Option<usize>,
    extract: Option<usize>,
    cap: usize,
    mc: Option<usize>,
    samples: usize,
    input: &'a Input,
}

fn cmd_ddg(args: DdgArgs) -> Result<Output> {
    let tol = args.tail_tol.map(parse_rational).transpose()?;
    let tree = DdgTree::from_config(args.tree, tol.as_ref())?;
    let avg = match args.levels {
        Some(l) => tree.avg_rt_at_level(l)?,
        None => tree.avg_rt()?,
    };
    let target = 1.0 / rational_to_f64(&avg.value);
    let mut result = json!({
        "tree": tree.to_table(),
        "alphabet": tree.alphabet(),
        "finite": tree.is_finite(),
        "distribution": tree.distribution().iter().map(rational).collect::<Vec<_>>(),
        "avg_rt": {
            "value": rational(&avg.value),
            "approx": rational_to_f64(&avg.value),
            "tail_bound": rational(&avg.tail_bound),
            "levels": avg.levels,
        },
        "symbols_per_bit_target": target,
    });
    if let Some(count) = args.extract {
        let source = resolve_input(args.input)?;
        let lambda = Measure::lebesgue();
        result["extraction"] = fan_out(&source, &lambda, |x, provenance| {
            let ex = ddg_extract(&tree, x, count, args.cap)?;
            let freq = label_frequencies(&ex.labels, tree.alphabet_size());
            Ok(json!({
                "input": provenance,
                "symbols": ex.labels.len(),
                "consumed": ex.consumed,
                "symbols_per_bit": ratio(ex.labels.len(), ex.consumed),
                "frequencies": freq,
            }))
        })?;
    }
    if let Some(n) = args.mc {
        let seed = args.input.seed.unwrap_or(0);
        let v = avg_rate_monte_carlo(&tree, n, args.samples, seed)?;
        result["monte_carlo"] = json!({
            "n": n,
            "samples": args.samples,
            "seed": seed,
            "value": rational(&v),
            "approx": rational_to_f64(&v),
        });
    }
    Ok(Output::json("ddg", result))
}

fn cmd_ergo_check(max_len: usize, k: usize, seed: u64) -> Result<Output> {
    let mut rows = Vec::new();
    let mut all_ok = true;
    let mut row = |check: &str, shift: &str, measure: &str, passed: bool, detail: Value| {
        all_ok &= passed;
        rows.push(json!({
            "check": check,
            "shift": shift,
            "measure": measure,
            "passed": passed,
            "detail": detail,
        }));
    };
    let lambda = Measure::lebesgue();
    let step2 = bundled::step2();
    let two = ShiftSpec::n_shift(2)?;
    let three = crate::ddg::bundled::three();
    let tree = ShiftSpec::tree_shift(three.clone());

    for (shift, mu) in [(&two, &step2), (&tree, &lambda)] {
        match check_invariance(shift, mu, 8.min(max_len + 3)) {
            Ok(n) => row(
                "invariance",
                &shift.to_string(),
                &mu.to_inline(),
                true,
                json!({"cylinders": n}),
            ),
            Err(e) => row(
                "invariance",
                &shift.to_string(),
                &mu.to_inline(),
                false,
                json!(e.to_string()),
            ),
        }
        let m = check_mixing(shift, mu, max_len)?;
        row(
            "mixing",
            &shift.to_string(),
            &mu.to_inline(),
            m.failures.is_empty(),
            serde_json::to_value(&m).expect("summary serializes"),
        );
    }

    let vn_obs = Observable::block_oi(von_neumann());
    let target = rational_to_f64(&von_neumann().block_rate(&step2)?);
    let avg = birkhoff_average(
        &two,
        &vn_obs,
        &mut MeasureStream::new(step2.clone(), seed),
        k,
        2 * k + 2,
    )?;
    row(
        "birkhoff block OI",
        &two.to_string(),
        &step2.to_inline(),
        (avg - target).abs() <= 0.01,
        json!({"k": k, "seed": seed, "average": avg, "target": target}),
    );
    let len_obs = Observable::block_length(&three);
    let target = rational_to_f64(&three.avg_rt()?.value);
    let avg = birkhoff_average(
        &tree,
        &len_obs,
        &mut MeasureStream::new(lambda.clone(), seed),
        k,
        64 * k,
    )?;
    row(
        "birkhoff block length",
        &tree.to_string(),
        &lambda.to_inline(),
        (avg - target).abs() <= 0.01 * target,
        json!({"k": k, "seed": seed, "average": avg, "target": target}),
    );
    let mut out = Output::json("ergo-check", json!({"passed": all_ok, "checks": rows}));
    if !all_ok {
        out.exit_code = 2;
    }
    Ok(out)
}

fn cmd_selftest() -> Result<Output> {
    let results = crate::selftest::run();
    let passed = results.iter().all(|r| r.passed);
    let text = results
        .iter()
        .map(|r| {
            format!(
                "{} {}: {} ({})",
                if r.passed { "PASS" } else { "FAIL" },
                r.module,
                r.name,
                r.detail
            )
        })
        .collect::<Vec<_>>()
        .join("\n");
    let mut out = Output::json(
        "selftest",
        json!({"passed": passed, "checks": serde_json::to_value(&results).expect("serializes")}),
    );
    out.text = Some(text);
    out.default_format = Format::Text;
    if !passed {
        out.exit_code = 2;
    }
    Ok(out)
}
