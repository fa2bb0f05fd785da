//! Paired timing of a custom kernel against a reference kernel.
//!
//! Each iteration draws fresh inputs, flips a coin for which kernel runs
//! first, times both calls, and folds every output into a checksum so the
//! work cannot be skipped. In server mode an idle interval is slept before
//! each iteration; it never enters the recorded times or the measurement
//! window. All timing goes through a [`Clock`] so tests can script it.

use std::sync::{Mutex, MutexGuard};
use std::time::{Duration, Instant};

use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::GemmKernel;
use crate::tensor::{MatHalf, Problem};

/// Monotonic time source with the ability to time a call.
pub trait Clock: Send + Sync {
    fn now_ns(&self) -> u64;
    fn sleep(&self, d: Duration);
    /// Runs `f` and returns its duration in nanoseconds. `slot` names what
    /// is being timed; real clocks ignore it.
    fn measure(&self, slot: usize, f: &mut dyn FnMut()) -> u64;
    fn source(&self) -> &'static str;
}

/// The host monotonic clock.
#[derive(Debug)]
pub struct MonotonicClock {
    origin: Instant,
}

impl MonotonicClock {
    pub fn new() -> MonotonicClock {
        MonotonicClock { origin: Instant::now() }
    }
}

impl Default for MonotonicClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for MonotonicClock {
    fn now_ns(&self) -> u64 {
        self.origin.elapsed().as_nanos() as u64
    }

    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }

    fn measure(&self, _slot: usize, f: &mut dyn FnMut()) -> u64 {
        let t0 = Instant::now();
        f();
        (t0.elapsed().as_nanos() as u64).max(1)
    }

    fn source(&self) -> &'static str {
        "monotonic"
    }
}

/// Virtual clock replaying scripted durations.
///
/// The n-th measurement of slot `s` reports `script[s][n % len]`. Sleeps
/// and measurements advance virtual time and nothing waits.
#[derive(Debug)]
pub struct ScriptedClock {
    scripts: Vec<Vec<u64>>,
    state: Mutex<ScriptState>,
}

#[derive(Debug)]
struct ScriptState {
    now: u64,
    calls: Vec<usize>,
    slept: u64,
}

impl ScriptedClock {
    /// One duration list (nanoseconds) per slot; every list must be nonempty.
    pub fn new(scripts: Vec<Vec<u64>>) -> Result<ScriptedClock> {
        if scripts.is_empty() || scripts.iter().any(|s| s.is_empty() || s.contains(&0)) {
            return Err(Error::Precondition("scripts must be nonempty and positive".into()));
        }
        let n = scripts.len();
        Ok(ScriptedClock {
            scripts,
            state: Mutex::new(ScriptState {
                now: 0,
                calls: vec![0; n],
                slept: 0,
            }),
        })
    }

    /// Every slot reports the same constant duration.
    pub fn constant(slots: usize, ns: u64) -> Result<ScriptedClock> {
        ScriptedClock::new(vec![vec![ns]; slots])
    }

    fn state(&self) -> MutexGuard<'_, ScriptState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Measurements taken so far per slot.
    pub fn calls(&self) -> Vec<usize> {
        self.state().calls.clone()
    }

    /// Total virtual time spent sleeping.
    pub fn slept_ns(&self) -> u64 {
        self.state().slept
    }
}

impl Clock for ScriptedClock {
    fn now_ns(&self) -> u64 {
        self.state().now
    }

    fn sleep(&self, d: Duration) {
        let mut s = self.state();
        s.now += d.as_nanos() as u64;
        s.slept += d.as_nanos() as u64;
    }

    fn measure(&self, slot: usize, f: &mut dyn FnMut()) -> u64 {
        f();
        let script = &self.scripts[slot % self.scripts.len()];
        let mut s = self.state();
        let n = s.calls.len();
        let idx = s.calls[slot % n];
        s.calls[slot % n] += 1;
        let t = script[idx % script.len()];
        s.now += t;
        t
    }

    fn source(&self) -> &'static str {
        "scripted"
    }
}

static TIMING_TOKEN: Mutex<()> = Mutex::new(());

/// Process-wide token held for the duration of timed work so no two timed
/// sections ever overlap.
pub fn timing_token() -> MutexGuard<'static, ()> {
    TIMING_TOKEN.lock().unwrap_or_else(|e| e.into_inner())
}

/// Idle intervals inserted between server-mode iterations, uniform in
/// `[lo_ms, hi_ms]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalSampler {
    pub lo_ms: f64,
    pub hi_ms: f64,
    pub seed: u64,
}

impl Default for IntervalSampler {
    fn default() -> Self {
        IntervalSampler {
            lo_ms: 1.0,
            hi_ms: 100.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Mode {
    Offline,
    Server(IntervalSampler),
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::Offline => "offline",
            Mode::Server(_) => "server",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub warmup_secs: f64,
    pub min_measure_secs: f64,
    pub mode: Mode,
    pub seed: u64,
    /// Replaces (warmup_secs, min_measure_secs) when set.
    pub desk_scale_override: Option<(f64, f64)>,
    /// Stop measuring after this many iterations even if the window is not full.
    pub max_iterations: Option<usize>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            warmup_secs: 10.0,
            min_measure_secs: 30.0,
            mode: Mode::Offline,
            seed: 0,
            desk_scale_override: None,
            max_iterations: None,
        }
    }
}

impl BenchConfig {
    pub const DESK_SCALE: (f64, f64) = (1.0, 3.0);

    pub fn desk_scale() -> BenchConfig {
        BenchConfig {
            desk_scale_override: Some(Self::DESK_SCALE),
            ..Default::default()
        }
    }

    /// Effective (warmup, measure) windows in seconds.
    pub fn windows(&self) -> (f64, f64) {
        self.desk_scale_override
            .unwrap_or((self.warmup_secs, self.min_measure_secs))
    }

    pub fn validate(&self) -> Result<()> {
        let (w, m) = self.windows();
        if !(w >= 0.0 && w.is_finite()) || !(m > 0.0 && m.is_finite()) {
            return Err(Error::Precondition(format!(
                "need warmup >= 0 and measure > 0 seconds, got {w} and {m}"
            )));
        }
        if let Mode::Server(s) = self.mode {
            if !(s.lo_ms >= 0.0 && s.lo_ms <= s.hi_ms && s.hi_ms.is_finite()) {
                return Err(Error::Precondition(format!(
                    "bad server interval range [{}, {}] ms",
                    s.lo_ms, s.hi_ms
                )));
            }
        }
        Ok(())
    }
}

/// Which kernel ran first within an iteration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunOrder {
    RefFirst,
    CustomFirst,
}

/// One measured iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingSample {
    pub t_ref: u64,
    pub t_custom: u64,
    pub iteration: usize,
    pub order_flag: RunOrder,
    pub checksum_ref: u64,
    pub checksum_custom: u64,
    pub valid: bool,
}

impl TimingSample {
    pub fn speedup(&self) -> Result<f64> {
        speedup(self.t_ref as f64, self.t_custom as f64)
    }
}

/// Single-run speedup `t_ref / t_custom - 1`.
pub fn speedup(t_ref: f64, t_custom: f64) -> Result<f64> {
    if !(t_custom > 0.0) || !(t_ref > 0.0) {
        return Err(Error::OutOfRange(format!(
            "times must be positive, got t_ref={t_ref} t_custom={t_custom}"
        )));
    }
    Ok(t_ref / t_custom - 1.0)
}

/// FNV-1a over the output bit patterns.
pub fn checksum(m: &MatHalf) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for v in m.iter_row_major() {
        for byte in v.to_bits().to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01B3);
        }
    }
    h
}

/// Samples from one paired run. `aborted` holds the failure when a kernel
/// errored mid-run; every sample is then marked invalid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRun {
    pub samples: Vec<TimingSample>,
    pub warmup_iterations: usize,
    pub intervals_ns: Vec<u64>,
    pub aborted: Option<String>,
}

impl BenchRun {
    pub fn is_valid(&self) -> bool {
        self.aborted.is_none()
    }
}

pub const REF_SLOT: usize = 0;
pub const CUSTOM_SLOT: usize = 1;

struct Streams {
    order: ChaCha8Rng,
    inputs: ChaCha8Rng,
    intervals: ChaCha8Rng,
}

impl Streams {
    fn new(cfg: &BenchConfig) -> Streams {
        let interval_seed = match cfg.mode {
            Mode::Server(s) => s.seed,
            Mode::Offline => 0,
        };
        let mut order = ChaCha8Rng::seed_from_u64(cfg.seed);
        order.set_stream(1);
        let mut inputs = ChaCha8Rng::seed_from_u64(cfg.seed);
        inputs.set_stream(2);
        let mut intervals = ChaCha8Rng::seed_from_u64(interval_seed);
        intervals.set_stream(3);
        Streams { order, inputs, intervals }
    }

    fn idle(&mut self, mode: &Mode) -> Option<Duration> {
        match mode {
            Mode::Offline => None,
            Mode::Server(s) => {
                let ms = if s.lo_ms == s.hi_ms {
                    s.lo_ms
                } else {
                    Uniform::new_inclusive(s.lo_ms, s.hi_ms).sample(&mut self.intervals)
                };
                Some(Duration::from_secs_f64(ms / 1000.0))
            }
        }
    }
}

struct Timed {
    t_ref: u64,
    t_custom: u64,
    order: RunOrder,
    sum_ref: u64,
    sum_custom: u64,
}

fn timed_pair(
    custom: &dyn GemmKernel,
    reference: &dyn GemmKernel,
    a: &MatHalf,
    b: &MatHalf,
    custom_first: bool,
    clock: &dyn Clock,
) -> std::result::Result<Timed, String> {
    let run_one = |k: &dyn GemmKernel, slot: usize| -> std::result::Result<(u64, u64), String> {
        let mut out = None;
        let t = {
            let _token = timing_token();
            clock.measure(slot, &mut || out = Some(k.run(a, b)))
        };
        match out.expect("measure runs the closure") {
            Ok(c) => Ok((t, checksum(&c))),
            Err(e) => Err(format!("{}: {e}", k.name())),
        }
    };
    let (r, c) = if custom_first {
        let c = run_one(custom, CUSTOM_SLOT)?;
        (run_one(reference, REF_SLOT)?, c)
    } else {
        let r = run_one(reference, REF_SLOT)?;
        (r, run_one(custom, CUSTOM_SLOT)?)
    };
    Ok(Timed {
        t_ref: r.0,
        t_custom: c.0,
        order: if custom_first {
            RunOrder::CustomFirst
        } else {
            RunOrder::RefFirst
        },
        sum_ref: r.1,
        sum_custom: c.1,
    })
}

/// Times `custom` against `reference` on `problem`.
///
/// Warmup iterations run until their summed kernel time reaches the warmup
/// window; measurement continues until the summed kernel time of measured
/// iterations reaches the measurement window (or `max_iterations`).
pub fn measure_pair(
    custom: &dyn GemmKernel,
    reference: &dyn GemmKernel,
    problem: &Problem,
    cfg: &BenchConfig,
    clock: &dyn Clock,
) -> Result<BenchRun> {
    cfg.validate()?;
    let (warm_s, measure_s) = cfg.windows();
    let warm_ns = (warm_s * 1e9) as u64;
    let measure_ns = (measure_s * 1e9) as u64;
    let mut streams = Streams::new(cfg);
    let mut run = BenchRun {
        samples: Vec::new(),
        warmup_iterations: 0,
        intervals_ns: Vec::new(),
        aborted: None,
    };

    let mut active = 0u64;
    while active < warm_ns {
        if let Some(d) = streams.idle(&cfg.mode) {
            clock.sleep(d);
        }
        let (a, b) = problem.uniform_operands(streams.inputs.gen());
        let custom_first = streams.order.gen_bool(0.5);
        match timed_pair(custom, reference, &a, &b, custom_first, clock) {
            Ok(t) => active += t.t_ref + t.t_custom,
            Err(e) => {
                run.aborted = Some(e);
                return Ok(run);
            }
        }
        run.warmup_iterations += 1;
    }

    let mut active = 0u64;
    let mut iteration = 0;
    while active < measure_ns || iteration == 0 {
        if cfg.max_iterations.is_some_and(|cap| iteration >= cap) {
            break;
        }
        if let Some(d) = streams.idle(&cfg.mode) {
            run.intervals_ns.push(d.as_nanos() as u64);
            clock.sleep(d);
        }
        let (a, b) = problem.uniform_operands(streams.inputs.gen());
        let custom_first = streams.order.gen_bool(0.5);
        match timed_pair(custom, reference, &a, &b, custom_first, clock) {
            Ok(t) => {
                active += t.t_ref + t.t_custom;
                run.samples.push(TimingSample {
                    t_ref: t.t_ref,
                    t_custom: t.t_custom,
                    iteration,
                    order_flag: t.order,
                    checksum_ref: t.sum_ref,
                    checksum_custom: t.sum_custom,
                    valid: true,
                });
            }
            Err(e) => {
                for s in &mut run.samples {
                    s.valid = false;
                }
                run.aborted = Some(e);
                return Ok(run);
            }
        }
        iteration += 1;
    }
    Ok(run)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedupStats {
    pub mean_s: f64,
    pub median_s: f64,
    /// Fraction of samples with s > 0.
    pub win_rate: f64,
    pub n_samples: usize,
}

/// Median of a nonempty slice; the mean of the middle pair for even lengths.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

/// Speedup statistics over the valid samples.
pub fn summarize(samples: &[TimingSample]) -> Result<SpeedupStats> {
    let s: Vec<f64> = samples
        .iter()
        .filter(|x| x.valid)
        .map(TimingSample::speedup)
        .collect::<Result<_>>()?;
    summarize_speedups(&s)
}

/// Statistics over raw speedup values.
pub fn summarize_speedups(s: &[f64]) -> Result<SpeedupStats> {
    let Some(median_s) = median(s) else {
        return Err(Error::Precondition("no valid samples to summarize".into()));
    };
    let n = s.len();
    Ok(SpeedupStats {
        mean_s: s.iter().sum::<f64>() / n as f64,
        median_s,
        win_rate: s.iter().filter(|&&x| x > 0.0).count() as f64 / n as f64,
        n_samples: n,
    })
}
