//! Command implementations behind the `hgemm` binary.
//!
//! Every command returns a process exit code: 0 when everything
//! passed, 1 on failure, 2 on a usage error. Commands take a [`Hooks`]
//! value so tests can swap in their own kernel or clock.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use hgemm_tune::analysis::{selection_report, write_report_csv, TuningCorpus};
use hgemm_tune::bench::{
    measure_pair, summarize, summarize_speedups, BenchConfig, Clock, IntervalSampler, Mode, MonotonicClock,
    ScriptedClock,
};
use hgemm_tune::kernel::{Accumulator, GemmKernel, KernelParams, NaiveKernel, TiledKernel};
use hgemm_tune::store::{append_records, read_records, Environment, RecordKind, RunRecord};
use hgemm_tune::tensor::{make_grid, read_problems_csv, write_problems_csv, Layout, Problem};
use hgemm_tune::tuner::{self, autotune, RewardParams, TuneConfig};
use hgemm_tune::verify::{verify_kernel, VerifyConfig};
use hgemm_tune::Error;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

const INPUT_DISTRIBUTION: &str = "uniform[-1,1]";

#[derive(Debug, Parser)]
#[command(name = "hgemm", version, about = "Half-precision GEMM verification, benchmarking and autotuning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the 1000-problem grid as CSV, one file per layout.
    GenGrid(GenGridArgs),
    /// Run both correctness protocols.
    Verify(VerifyArgs),
    /// Time a configuration against a reference kernel.
    Bench(BenchArgs),
    /// Search configurations for each problem.
    Tune(TuneArgs),
    /// Summarize winning configurations from a tuning store.
    Analyze(AnalyzeArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum LayoutArg {
    Nn,
    Tn,
}

impl From<LayoutArg> for Layout {
    fn from(l: LayoutArg) -> Layout {
        match l {
            LayoutArg::Nn => Layout::NN,
            LayoutArg::Tn => Layout::TN,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Offline,
    Server,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AccArg {
    F16,
    F32,
}

impl From<AccArg> for Accumulator {
    fn from(a: AccArg) -> Accumulator {
        match a {
            AccArg::F16 => Accumulator::F16,
            AccArg::F32 => Accumulator::F32,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ReferenceArg {
    /// Canonical tiled configuration.
    Canonical,
    /// Naive triple loop.
    Naive,
}

#[derive(Debug, Args)]
pub struct GenGridArgs {
    /// Output directory; files are named grid_NN.csv and grid_TN.csv.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Only this layout (default: both).
    #[arg(long, value_enum)]
    pub layout: Option<LayoutArg>,
}

#[derive(Debug, Args)]
pub struct ProblemArgs {
    /// One problem as M,N,K (repeatable).
    #[arg(long = "problem", value_name = "M,N,K")]
    pub problems: Vec<String>,
    /// CSV file with M,N,K,layout rows.
    #[arg(long, value_name = "CSV")]
    pub problems_file: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "nn")]
    pub layout: LayoutArg,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub problems: ProblemArgs,
    /// Kernel configuration in key=value form (default: canonical).
    #[arg(long)]
    pub params: Option<String>,
    /// Verify the winners recorded in this tuning store instead.
    #[arg(long, value_name = "JSONL")]
    pub params_store: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "f32")]
    pub acc: AccArg,
    #[arg(long, default_value_t = 5)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Append results here.
    #[arg(long, value_name = "JSONL")]
    pub store: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TimingArgs {
    #[arg(long, value_enum, default_value = "offline")]
    pub mode: ModeArg,
    #[arg(long)]
    pub warmup_secs: Option<f64>,
    #[arg(long)]
    pub measure_secs: Option<f64>,
    /// Use the reduced desk-scale windows and rounds.
    #[arg(long)]
    pub desk_scale: bool,
    /// Server-mode idle interval range in milliseconds.
    #[arg(long, value_name = "LO,HI", default_value = "1,100")]
    pub interval_ms: String,
    /// Replay these nanosecond durations (comma-separated, one per clock
    /// slot) instead of reading the real clock.
    #[arg(long, value_name = "NS,...")]
    pub scripted_clock: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub problems: ProblemArgs,
    #[command(flatten)]
    pub timing: TimingArgs,
    /// Configuration under test (default: the heuristic prior).
    #[arg(long)]
    pub params: Option<String>,
    #[arg(long, value_enum, default_value = "f32")]
    pub acc: AccArg,
    #[arg(long, value_enum, default_value = "canonical")]
    pub reference: ReferenceArg,
    /// Cap on measured iterations.
    #[arg(long)]
    pub max_iterations: Option<usize>,
    #[arg(long, value_name = "JSONL")]
    pub store: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[command(flatten)]
    pub problems: ProblemArgs,
    #[command(flatten)]
    pub timing: TimingArgs,
    #[arg(long, default_value_t = 100)]
    pub budget: usize,
    #[arg(long)]
    pub warmup_rounds: Option<usize>,
    #[arg(long)]
    pub measure_rounds: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub beta: f64,
    #[arg(long, value_enum, default_value = "f32")]
    pub acc: AccArg,
    /// Verification trials per protocol.
    #[arg(long, default_value_t = 5)]
    pub trials: usize,
    #[arg(long, value_name = "JSONL")]
    pub store: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Tuning store to read.
    #[arg(long, value_name = "JSONL")]
    pub store: PathBuf,
    /// Where the CSV tables go.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

/// Replaceable pieces for tests.
#[derive(Clone, Default)]
pub struct Hooks {
    /// Kernel to use instead of the tiled kernel built from `--params`.
    pub kernel: Option<Arc<dyn GemmKernel>>,
}

enum Failure {
    Usage(String),
    Run(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Failure {
        Failure::Run(e.to_string())
    }
}

type CmdResult = std::result::Result<i32, Failure>;

/// Parses `args` (including the program name) and runs the command.
pub fn run_from_args<I, T>(args: I, hooks: &Hooks) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli, hooks),
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_PASS };
            let _ = e.print();
            code
        }
    }
}

pub fn run(cli: Cli, hooks: &Hooks) -> i32 {
    let res = match cli.command {
        Command::GenGrid(a) => cmd_gen_grid(&a),
        Command::Verify(a) => cmd_verify(&a, hooks),
        Command::Bench(a) => cmd_bench(&a, hooks),
        Command::Tune(a) => cmd_tune(&a),
        Command::Analyze(a) => cmd_analyze(&a),
    };
    match res {
        Ok(code) => code,
        Err(Failure::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Run(msg)) => {
            eprintln!("error: {msg}");
            EXIT_FAIL
        }
    }
}

fn parse_problem(text: &str, layout: Layout) -> std::result::Result<Problem, Failure> {
    let dims: Vec<usize> = text
        .split(',')
        .map(|t| t.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Failure::Usage(format!("bad problem `{text}`: {e}")))?;
    match dims[..] {
        [m, n, k] => Problem::new(m, n, k, layout).map_err(|e| Failure::Usage(e.to_string())),
        _ => Err(Failure::Usage(format!("problem `{text}` must be M,N,K"))),
    }
}

fn load_problems(args: &ProblemArgs) -> std::result::Result<Vec<Problem>, Failure> {
    let layout = args.layout.into();
    let mut out = args
        .problems
        .iter()
        .map(|p| parse_problem(p, layout))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if let Some(path) = &args.problems_file {
        let f = std::fs::File::open(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
        out.extend(read_problems_csv(f).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?);
    }
    if out.is_empty() {
        return Err(Failure::Usage("no problems given (use --problem or --problems-file)".into()));
    }
    Ok(out)
}

fn parse_params(text: &str) -> std::result::Result<KernelParams, Failure> {
    text.parse().map_err(|e: Error| Failure::Usage(e.to_string()))
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> std::result::Result<Vec<T>, Failure>
where
    T::Err: std::fmt::Display,
{
    text.split(',')
        .map(|t| t.trim().parse::<T>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Failure::Usage(format!("bad {what} `{text}`: {e}")))
}

fn build_clock(timing: &TimingArgs, slots: usize) -> std::result::Result<Box<dyn Clock>, Failure> {
    match &timing.scripted_clock {
        None => Ok(Box::new(MonotonicClock::new())),
        Some(text) => {
            let mut ns: Vec<u64> = parse_list(text, "scripted clock")?;
            if ns.len() == 1 {
                ns = vec![ns[0]; slots];
            }
            let clock = ScriptedClock::new(ns.into_iter().map(|t| vec![t]).collect())
                .map_err(|e| Failure::Usage(e.to_string()))?;
            Ok(Box::new(clock))
        }
    }
}

fn bench_config(timing: &TimingArgs) -> std::result::Result<BenchConfig, Failure> {
    let mut cfg = if timing.desk_scale {
        BenchConfig::desk_scale()
    } else {
        BenchConfig::default()
    };
    if let Some(w) = timing.warmup_secs {
        cfg.warmup_secs = w;
        cfg.desk_scale_override = cfg.desk_scale_override.map(|(_, m)| (w, m));
    }
    if let Some(m) = timing.measure_secs {
        cfg.min_measure_secs = m;
        cfg.desk_scale_override = cfg.desk_scale_override.map(|(w, _)| (w, m));
    }
    cfg.seed = timing.seed;
    cfg.mode = match timing.mode {
        ModeArg::Offline => Mode::Offline,
        ModeArg::Server => {
            let r: Vec<f64> = parse_list(&timing.interval_ms, "interval range")?;
            let [lo_ms, hi_ms] = r[..] else {
                return Err(Failure::Usage("--interval-ms takes LO,HI".into()));
            };
            Mode::Server(IntervalSampler {
                lo_ms,
                hi_ms,
                seed: timing.seed,
            })
        }
    };
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(cfg)
}

fn write_store(path: &Option<PathBuf>, records: &[RunRecord]) -> std::result::Result<(), Failure> {
    if let Some(p) = path {
        append_records(p, records)?;
    }
    Ok(())
}

pub fn grid_file_name(layout: Layout) -> String {
    format!("grid_{layout}.csv")
}

fn cmd_gen_grid(args: &GenGridArgs) -> CmdResult {
    std::fs::create_dir_all(&args.out_dir).map_err(|e| Failure::Run(e.to_string()))?;
    let layouts: Vec<Layout> = match args.layout {
        Some(l) => vec![l.into()],
        None => Layout::ALL.to_vec(),
    };
    for layout in layouts {
        let path = args.out_dir.join(grid_file_name(layout));
        let f = std::fs::File::create(&path).map_err(|e| Failure::Run(format!("{}: {e}", path.display())))?;
        let grid = make_grid(layout);
        write_problems_csv(f, &grid)?;
        println!("wrote {} problems to {}", grid.len(), path.display());
    }
    Ok(EXIT_PASS)
}

fn winners_from_store(path: &Path) -> std::result::Result<Vec<(Problem, KernelParams)>, Failure> {
    let records = read_records(path)?;
    Ok(records
        .iter()
        .filter(|r| r.kind == RecordKind::Tune && r.winner)
        .filter_map(|r| r.params.map(|p| (r.problem, p)))
        .collect())
}

fn cmd_verify(args: &VerifyArgs, hooks: &Hooks) -> CmdResult {
    let jobs: Vec<(Problem, KernelParams)> = match &args.params_store {
        Some(path) => {
            let w = winners_from_store(path)?;
            if w.is_empty() {
                return Err(Failure::Usage(format!("no tuned winners in {}", path.display())));
            }
            w
        }
        None => {
            let params = match &args.params {
                Some(t) => parse_params(t)?,
                None => KernelParams::canonical(args.acc.into()),
            };
            load_problems(&args.problems)?.into_iter().map(|p| (p, params)).collect()
        }
    };
    let cfg = VerifyConfig {
        trials: args.trials,
        seed: args.seed,
        ..Default::default()
    };
    let env = Environment::capture("none");
    let mut records = Vec::new();
    let mut all_passed = true;
    for (problem, params) in jobs {
        let kernel: Arc<dyn GemmKernel> = match &hooks.kernel {
            Some(k) => k.clone(),
            None => Arc::new(TiledKernel::new(params)?),
        };
        let summary = verify_kernel(kernel.as_ref(), &problem, &cfg)?;
        let ok = summary.passed();
        all_passed &= ok;
        println!(
            "{} {problem} exact={} bounded={} max_diff={:.6e} bound={:.6e}",
            if ok { "PASS" } else { "FAIL" },
            summary.exact.passed,
            summary.bounded.passed,
            summary.bounded.max_abs_diff,
            summary.bounded.bound,
        );
        if let Some(why) = summary.exact.failure.as_ref().or(summary.bounded.failure.as_ref()) {
            println!("  cause: {why}");
        }
        let mut r = RunRecord::new(RecordKind::Verify, problem, "none", args.seed, env.clone());
        r.params = Some(params);
        r.verify = Some(summary);
        r.notes = json!({ "kernel": kernel.name(), "inputs": INPUT_DISTRIBUTION });
        records.push(r);
    }
    write_store(&args.store, &records)?;
    Ok(if all_passed { EXIT_PASS } else { EXIT_FAIL })
}

fn cmd_bench(args: &BenchArgs, hooks: &Hooks) -> CmdResult {
    let problems = load_problems(&args.problems)?;
    let mut cfg = bench_config(&args.timing)?;
    cfg.max_iterations = args.max_iterations;
    let clock = build_clock(&args.timing, 2)?;
    let acc: Accumulator = args.acc.into();
    let fixed = args.params.as_deref().map(parse_params).transpose()?;
    let env = Environment::capture(clock.source());
    let mut records = Vec::new();
    let mut code = EXIT_PASS;
    for problem in problems {
        let params = fixed.unwrap_or_else(|| tuner::prior(&problem, acc));
        let custom: Arc<dyn GemmKernel> = match &hooks.kernel {
            Some(k) => k.clone(),
            None => Arc::new(TiledKernel::new(params)?),
        };
        let reference: Box<dyn GemmKernel> = match args.reference {
            ReferenceArg::Canonical => Box::new(TiledKernel {
                params: KernelParams::canonical(acc),
            }),
            ReferenceArg::Naive => Box::new(NaiveKernel { acc }),
        };
        let run = measure_pair(custom.as_ref(), reference.as_ref(), &problem, &cfg, clock.as_ref())?;
        let mut r = RunRecord::new(RecordKind::Bench, problem, cfg.mode.name(), cfg.seed, env.clone());
        r.params = Some(params);
        r.round_times = run.samples.iter().map(|s| s.t_custom).collect();
        r.notes = json!({
            "inputs": INPUT_DISTRIBUTION,
            "reference": reference.name(),
            "bench": cfg,
            "warmup_iterations": run.warmup_iterations,
            "intervals_ns": run.intervals_ns,
            "aborted": run.aborted,
        });
        match summarize(&run.samples) {
            Ok(stats) if run.is_valid() => {
                println!(
                    "{problem} mean_s={:.4} median_s={:.4} win_rate={:.3} n={}",
                    stats.mean_s, stats.median_s, stats.win_rate, stats.n_samples
                );
                r.speedup = Some(stats);
            }
            _ => {
                println!("{problem} benchmark aborted: {}", run.aborted.as_deref().unwrap_or("no samples"));
                code = EXIT_FAIL;
            }
        }
        r.samples = run.samples;
        records.push(r);
    }
    write_store(&args.store, &records)?;
    Ok(code)
}

fn cmd_tune(args: &TuneArgs) -> CmdResult {
    let problems = load_problems(&args.problems)?;
    let desk = args.timing.desk_scale;
    let (dw, dm) = if desk {
        TuneConfig::DESK_ROUNDS
    } else {
        (TuneConfig::default().warmup_rounds, TuneConfig::default().measure_rounds)
    };
    let rp = RewardParams {
        alpha: args.alpha,
        beta: args.beta,
    };
    if !(rp.alpha >= 0.0 && rp.beta >= 0.0) {
        return Err(Failure::Usage("--alpha and --beta must be nonnegative".into()));
    }
    if args.budget == 0 || args.trials == 0 {
        return Err(Failure::Usage("--budget and --trials must be >= 1".into()));
    }
    let cfg = TuneConfig {
        budget: args.budget,
        warmup_rounds: args.warmup_rounds.unwrap_or(dw),
        measure_rounds: args.measure_rounds.unwrap_or(dm),
        seed: args.timing.seed,
        acc: args.acc.into(),
        reward: rp,
        verify: VerifyConfig {
            trials: args.trials,
            seed: args.timing.seed,
            ..Default::default()
        },
    };
    if cfg.measure_rounds == 0 {
        return Err(Failure::Usage("--measure-rounds must be >= 1".into()));
    }
    let clock = build_clock(&args.timing, args.budget + 1)?;
    let env = Environment::capture(clock.source());
    let run_id = format!("seed{}-{}", cfg.seed, unix_millis());
    let mut code = EXIT_PASS;
    for problem in problems {
        let outcome = match autotune(&problem, &cfg, clock.as_ref()) {
            Ok(o) => o,
            Err(e @ Error::NoWinner(_)) => {
                println!("{problem} no winner: {e}");
                code = EXIT_FAIL;
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let w = &outcome.winner;
        let stats = summarize_speedups(&w.ratios.iter().map(|r| r - 1.0).collect::<Vec<_>>()).ok();
        println!(
            "{problem} winner median={:.0}ns reward={:.4} candidates={}{} params: {}",
            w.median_time.unwrap_or(f64::NAN),
            w.reward.unwrap_or(f64::NAN),
            outcome.candidates.len(),
            if outcome.exhausted { " (pool exhausted)" } else { "" },
            w.params
        );
        let records: Vec<RunRecord> = outcome
            .candidates
            .iter()
            .map(|c| {
                let mut r = RunRecord::new(RecordKind::Tune, problem, "offline", cfg.seed, env.clone());
                r.params = Some(c.params);
                r.verify = c.verify.clone();
                r.round_times = c.times.clone();
                r.winner = c.winner;
                if c.winner {
                    r.speedup = stats;
                }
                r.candidate = Some(c.clone());
                r.notes = json!({
                    "run_id": run_id,
                    "inputs": INPUT_DISTRIBUTION,
                    "reward": cfg.reward,
                    "diff_normalization": "max |out - ref_f32| / baseline bound, worst verification trial",
                    "reference": "canonical tiled",
                    "reference_times": outcome.reference_times,
                    "warmup_rounds": cfg.warmup_rounds,
                    "measure_rounds": cfg.measure_rounds,
                    "pool_exhausted": outcome.exhausted,
                });
                r
            })
            .collect();
        write_store(&args.store, &records)?;
    }
    Ok(code)
}

fn unix_millis() -> u128 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

fn cmd_analyze(args: &AnalyzeArgs) -> CmdResult {
    let records = read_records(&args.store)?;
    let corpus = TuningCorpus::from_records(&records);
    let report = selection_report(&corpus)?;
    for c in &report.correlations {
        println!(
            "rho({}) = {:+.3}{} (n={})",
            c.pair,
            c.rho,
            if c.degenerate { " [degenerate]" } else { "" },
            c.n
        );
    }
    let paths = write_report_csv(&report, &args.out_dir)?;
    for p in paths {
        println!("wrote {}", p.display());
    }
    Ok(EXIT_PASS)
}
