//! Correctness protocols for a kernel under test.
//!
//! Exact match with binary inputs: with entries in {0, 1} every dot product
//! is an integer, and partial sums only grow, so any element whose final
//! value is below 2048 was computed exactly at every step in binary16.
//! Those elements must match the encoded reference bit for bit; the rest
//! are ignored.
//!
//! Baseline-bounded deviation: with real-valued inputs, the kernel's worst
//! elementwise deviation from the `f32` reference must not exceed the
//! spread already present among a family of trusted baseline kernels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::half16::{self, Half, EXACT_INTEGER_LIMIT};
use crate::kernel::{self, Accumulator, GemmKernel, KernelParams};
use crate::oracle::{self, MatF32};
use crate::tensor::{MatHalf, Problem};

/// Outcome of one protocol over all its trials.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub trials: usize,
    pub checked_elems: u64,
    pub ignored_elems: u64,
    #[serde(with = "extended_f64")]
    pub max_abs_diff: f64,
    /// Largest bound used across trials (0 for the exact protocol).
    #[serde(with = "extended_f64")]
    pub bound: f64,
    /// Trials thrown away and redrawn because nothing useful could be checked.
    pub regenerated: usize,
    /// Worst `diff / bound` over trials; 0 when both are 0, infinite when
    /// only the bound is 0.
    #[serde(with = "extended_f64")]
    pub max_normalized_diff: f64,
    pub failure: Option<String>,
}

/// JSON has no infinities; non-finite values travel as strings.
mod extended_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(&v.to_string())
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

impl VerifyReport {
    fn empty() -> VerifyReport {
        VerifyReport {
            passed: true,
            trials: 0,
            checked_elems: 0,
            ignored_elems: 0,
            max_abs_diff: 0.0,
            bound: 0.0,
            regenerated: 0,
            max_normalized_diff: 0.0,
            failure: None,
        }
    }

    /// Folds another report in; merging is associative.
    pub fn merge(mut self, other: &VerifyReport) -> VerifyReport {
        self.passed &= other.passed;
        self.trials += other.trials;
        self.checked_elems += other.checked_elems;
        self.ignored_elems += other.ignored_elems;
        self.max_abs_diff = self.max_abs_diff.max(other.max_abs_diff);
        self.bound = self.bound.max(other.bound);
        self.regenerated += other.regenerated;
        self.max_normalized_diff = self.max_normalized_diff.max(other.max_normalized_diff);
        if self.failure.is_none() {
            self.failure = other.failure.clone();
        }
        self
    }

    fn fail(&mut self, why: String) {
        self.passed = false;
        if self.failure.is_none() {
            self.failure = Some(why);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyConfig {
    pub trials: usize,
    pub seed: u64,
    /// Bernoulli probability for binary inputs; `None` picks it from K.
    pub p_override: Option<f64>,
    /// Redraws allowed per trial before giving up.
    pub max_regenerations: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            trials: 5,
            seed: 0,
            p_override: None,
            max_regenerations: 16,
        }
    }
}

impl VerifyConfig {
    fn check(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Precondition("trials must be >= 1".into()));
        }
        if let Some(p) = self.p_override {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::Precondition(format!("p must lie in (0, 1], got {p}")));
            }
        }
        Ok(())
    }
}

/// Bernoulli probability targeting an expected dot product of 1024.
pub fn binary_probability(k: usize) -> f64 {
    (1024.0 / k as f64).sqrt().clamp(0.05, 1.0)
}

fn trial_seed(seed: u64, trial: usize, attempt: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((trial as u64) << 16) | attempt as u64);
    rng.gen()
}

/// One binary trial: inputs and the reference they must reproduce.
#[derive(Clone, Debug)]
pub struct BinaryFixture {
    pub a: MatHalf,
    pub b: MatHalf,
    pub reference: MatF32,
    pub p: f64,
}

/// Element counts of one binary comparison.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExactOutcome {
    pub checked: u64,
    pub ignored: u64,
    pub mismatches: u64,
    /// Checked elements whose reference is nonzero.
    pub positive: u64,
}

/// Compares `out` with `reference` on every element below the exactness limit.
pub fn exact_compare(out: &MatHalf, reference: &MatF32) -> Result<ExactOutcome> {
    if out.rows() != reference.rows || out.cols() != reference.cols {
        return Err(Error::DimMismatch(format!(
            "output is {}x{}, reference is {}x{}",
            out.rows(),
            out.cols(),
            reference.rows,
            reference.cols
        )));
    }
    let mut o = ExactOutcome {
        checked: 0,
        ignored: 0,
        mismatches: 0,
        positive: 0,
    };
    for (got, &r) in out.iter_row_major().zip(&reference.data) {
        if (r as f64) < EXACT_INTEGER_LIMIT {
            o.checked += 1;
            o.positive += (r > 0.0) as u64;
            o.mismatches += (got.to_bits() != half16::encode(r as f64).to_bits()) as u64;
        } else {
            o.ignored += 1;
        }
    }
    Ok(o)
}

/// Exact-match check on caller-supplied inputs, without the nondegeneracy
/// requirement. All-zero inputs pass when the output is exactly zero.
pub fn exact_match_inputs(kernel: &dyn GemmKernel, a: &MatHalf, b: &MatHalf) -> Result<VerifyReport> {
    let reference = oracle::ref_f32(a, b)?;
    let mut rep = VerifyReport::empty();
    rep.trials = 1;
    match kernel.run(a, b).and_then(|out| exact_compare(&out, &reference)) {
        Ok(o) => {
            rep.checked_elems = o.checked;
            rep.ignored_elems = o.ignored;
            if o.mismatches > 0 {
                rep.fail(format!("{} of {} checked elements differ", o.mismatches, o.checked));
            }
        }
        Err(e) => rep.fail(e.to_string()),
    }
    Ok(rep)
}

/// Draws the binary trials for a problem. A draw with nothing checkable
/// (every element at or above 2048, or every checked element zero) is
/// redrawn with p lowered or raised and the redraw is counted.
pub fn binary_fixtures(problem: &Problem, cfg: &VerifyConfig) -> Result<(Vec<BinaryFixture>, usize)> {
    cfg.check()?;
    let mut out = Vec::with_capacity(cfg.trials);
    let mut regenerated = 0;
    for trial in 0..cfg.trials {
        let mut p = cfg.p_override.unwrap_or_else(|| binary_probability(problem.k));
        let mut attempt = 0;
        loop {
            let (a, b) = problem.binary_operands(p, trial_seed(cfg.seed, trial, attempt))?;
            let reference = oracle::ref_f32(&a, &b)?;
            let checked: Vec<f32> = reference
                .data
                .iter()
                .copied()
                .filter(|&r| (r as f64) < EXACT_INTEGER_LIMIT)
                .collect();
            let degenerate = if checked.is_empty() {
                Some(p * 0.5)
            } else if checked.iter().all(|&r| r == 0.0) {
                Some((p * 2.0).min(1.0))
            } else {
                None
            };
            match degenerate {
                None => {
                    out.push(BinaryFixture { a, b, reference, p });
                    break;
                }
                Some(next) => {
                    attempt += 1;
                    regenerated += 1;
                    if attempt > cfg.max_regenerations {
                        return Err(Error::Precondition(format!(
                            "no usable binary draw for {problem} after {attempt} attempts"
                        )));
                    }
                    log::debug!("degenerate binary draw for {problem} at p={p}, retrying with p={next}");
                    p = next;
                }
            }
        }
    }
    Ok((out, regenerated))
}

/// Runs the exact-match protocol against prepared fixtures.
pub fn exact_match_on(kernel: &dyn GemmKernel, fixtures: &[BinaryFixture]) -> VerifyReport {
    let mut rep = VerifyReport::empty();
    for (t, fx) in fixtures.iter().enumerate() {
        rep.trials += 1;
        let outcome = match kernel.run(&fx.a, &fx.b).and_then(|out| exact_compare(&out, &fx.reference)) {
            Ok(o) => o,
            Err(e) => {
                rep.fail(format!("trial {t}: {e}"));
                let total = fx.reference.data.len() as u64;
                rep.ignored_elems += total;
                continue;
            }
        };
        rep.checked_elems += outcome.checked;
        rep.ignored_elems += outcome.ignored;
        if outcome.mismatches > 0 {
            rep.fail(format!(
                "trial {t}: {} of {} checked elements differ",
                outcome.mismatches, outcome.checked
            ));
        } else if outcome.checked == 0 || outcome.positive == 0 {
            rep.fail(format!("trial {t}: nothing checkable"));
        }
    }
    rep
}

/// Exact match with binary inputs over `cfg.trials` independent draws.
pub fn exact_match_binary(kernel: &dyn GemmKernel, problem: &Problem, cfg: &VerifyConfig) -> Result<VerifyReport> {
    let (fixtures, regenerated) = binary_fixtures(problem, cfg)?;
    let mut rep = exact_match_on(kernel, &fixtures);
    rep.regenerated = regenerated;
    Ok(rep)
}

/// Largest elementwise spread (max minus min) across several outputs of
/// equal length.
pub fn spread_bound(outputs: &[Vec<f64>]) -> Result<f64> {
    let first = outputs
        .first()
        .ok_or_else(|| Error::Precondition("baseline set is empty".into()))?;
    if outputs.iter().any(|o| o.len() != first.len()) {
        return Err(Error::DimMismatch("baseline outputs differ in length".into()));
    }
    let mut bound = 0f64;
    for e in 0..first.len() {
        let (lo, hi) = outputs
            .iter()
            .map(|o| o[e])
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        bound = bound.max(hi - lo);
    }
    Ok(bound)
}

/// The trusted kernels whose disagreement sets the tolerance.
pub fn baseline_family() -> Vec<Box<dyn GemmKernel>> {
    vec![
        Box::new(kernel::NaiveKernel { acc: Accumulator::F16 }),
        Box::new(kernel::NaiveKernel { acc: Accumulator::F32 }),
        Box::new(kernel::TiledKernel {
            params: KernelParams::canonical(Accumulator::F16),
        }),
        Box::new(kernel::TiledKernel {
            params: KernelParams::canonical(Accumulator::F32),
        }),
    ]
}

fn decoded(m: &MatHalf) -> Vec<f64> {
    m.iter_row_major().map(Half::to_f64).collect()
}

/// Tolerance for one input pair: the elementwise spread of the baseline
/// family's outputs together with the `f32` reference itself.
pub fn baseline_bound(a: &MatHalf, b: &MatHalf) -> Result<f64> {
    let reference = oracle::ref_f32(a, b)?;
    baseline_bound_with(a, b, &reference)
}

fn baseline_bound_with(a: &MatHalf, b: &MatHalf, reference: &MatF32) -> Result<f64> {
    let mut outputs = vec![reference.data.iter().map(|&v| v as f64).collect::<Vec<_>>()];
    for k in baseline_family() {
        outputs.push(decoded(&k.run(a, b)?));
    }
    spread_bound(&outputs)
}

/// Worst `|decode(out) - reference|` over all elements.
pub fn max_abs_deviation(out: &MatHalf, reference: &MatF32) -> Result<f64> {
    if out.rows() != reference.rows || out.cols() != reference.cols {
        return Err(Error::DimMismatch(format!(
            "output is {}x{}, reference is {}x{}",
            out.rows(),
            out.cols(),
            reference.rows,
            reference.cols
        )));
    }
    Ok(out
        .iter_row_major()
        .zip(&reference.data)
        .map(|(h, &r)| (h.to_f64() - r as f64).abs())
        .fold(0.0, |m, d| if d.is_nan() { f64::INFINITY } else { m.max(d) }))
}

/// `diff / bound` with the zero cases pinned down.
pub fn normalized_diff(diff: f64, bound: f64) -> f64 {
    if diff == 0.0 {
        0.0
    } else if bound == 0.0 {
        f64::INFINITY
    } else {
        diff / bound
    }
}

/// One real-valued trial with its precomputed reference and tolerance.
#[derive(Clone, Debug)]
pub struct DeviationFixture {
    pub a: MatHalf,
    pub b: MatHalf,
    pub reference: MatF32,
    pub bound: f64,
}

/// Uniform [-1, 1] trials for a problem with their baseline bounds.
pub fn deviation_fixtures(problem: &Problem, cfg: &VerifyConfig) -> Result<Vec<DeviationFixture>> {
    cfg.check()?;
    (0..cfg.trials)
        .map(|t| {
            let (a, b) = problem.uniform_operands(trial_seed(cfg.seed ^ 0xD1B5_4A32_D192_ED03, t, 0));
            let reference = oracle::ref_f32(&a, &b)?;
            let bound = baseline_bound_with(&a, &b, &reference)?;
            Ok(DeviationFixture { a, b, reference, bound })
        })
        .collect()
}

/// Runs the bounded-deviation protocol against prepared fixtures.
pub fn bounded_deviation_on(kernel: &dyn GemmKernel, fixtures: &[DeviationFixture]) -> VerifyReport {
    let mut rep = VerifyReport::empty();
    for (t, fx) in fixtures.iter().enumerate() {
        rep.trials += 1;
        rep.bound = rep.bound.max(fx.bound);
        let total = fx.reference.data.len() as u64;
        match kernel.run(&fx.a, &fx.b).and_then(|out| max_abs_deviation(&out, &fx.reference)) {
            Ok(diff) => {
                rep.checked_elems += total;
                rep.max_abs_diff = rep.max_abs_diff.max(diff);
                rep.max_normalized_diff = rep.max_normalized_diff.max(normalized_diff(diff, fx.bound));
                if diff > fx.bound {
                    rep.fail(format!("trial {t}: deviation {diff} exceeds bound {}", fx.bound));
                }
            }
            Err(e) => {
                rep.ignored_elems += total;
                rep.max_normalized_diff = f64::INFINITY;
                rep.fail(format!("trial {t}: {e}"));
            }
        }
    }
    rep
}

/// Baseline-bounded deviation over `cfg.trials` uniform draws.
pub fn bounded_deviation_check(
    kernel: &dyn GemmKernel,
    problem: &Problem,
    cfg: &VerifyConfig,
) -> Result<VerifyReport> {
    Ok(bounded_deviation_on(kernel, &deviation_fixtures(problem, cfg)?))
}

/// Both protocols' fixtures for one problem, shareable across kernels.
#[derive(Clone, Debug)]
pub struct ProblemFixtures {
    pub binary: Vec<BinaryFixture>,
    pub regenerated: usize,
    pub deviation: Vec<DeviationFixture>,
}

impl ProblemFixtures {
    pub fn new(problem: &Problem, cfg: &VerifyConfig) -> Result<ProblemFixtures> {
        let (binary, regenerated) = binary_fixtures(problem, cfg)?;
        let deviation = deviation_fixtures(problem, cfg)?;
        Ok(ProblemFixtures {
            binary,
            regenerated,
            deviation,
        })
    }

    pub fn verify(&self, kernel: &dyn GemmKernel) -> VerifySummary {
        let mut exact = exact_match_on(kernel, &self.binary);
        exact.regenerated = self.regenerated;
        VerifySummary {
            exact,
            bounded: bounded_deviation_on(kernel, &self.deviation),
        }
    }
}

/// Both protocol reports for one kernel on one problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifySummary {
    pub exact: VerifyReport,
    pub bounded: VerifyReport,
}

impl VerifySummary {
    pub fn passed(&self) -> bool {
        self.exact.passed && self.bounded.passed
    }
}

/// Runs both protocols.
pub fn verify_kernel(kernel: &dyn GemmKernel, problem: &Problem, cfg: &VerifyConfig) -> Result<VerifySummary> {
    Ok(ProblemFixtures::new(problem, cfg)?.verify(kernel))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{FnKernel, NaiveKernel, TiledKernel};
    use crate::oracle::ref_f16_naive_traced;
    use crate::tensor::{gen_binary, Layout, Order};

    fn canonical() -> TiledKernel {
        TiledKernel {
            params: KernelParams::canonical(Accumulator::F32),
        }
    }

    #[test]
    fn probability_formula() {
        assert_eq!(binary_probability(64), 1.0);
        assert_eq!(binary_probability(1024), 1.0);
        assert_eq!(binary_probability(16384), 0.25);
        assert_eq!(binary_probability(1 << 30), 0.05);
    }

    #[test]
    fn k64_with_p_one_checks_everything() {
        let problem = Problem::new(16, 16, 64, Layout::NN).unwrap();
        let cfg = VerifyConfig {
            p_override: Some(1.0),
            ..Default::default()
        };
        let rep = exact_match_binary(&canonical(), &problem, &cfg).unwrap();
        assert!(rep.passed);
        assert_eq!(rep.ignored_elems, 0);
        assert_eq!(rep.checked_elems, 5 * 256);
    }

    #[test]
    fn zero_matrices_pass() {
        let a = MatHalf::zeros(8, 8, Order::RowMajor);
        let rep = exact_match_inputs(&canonical(), &a, &a).unwrap();
        assert!(rep.passed);
        assert_eq!(rep.checked_elems, 64);
    }

    #[test]
    fn large_k_default_p_lands_mid_range() {
        let k = 16384;
        assert_eq!(binary_probability(k), 0.25);
        let a = gen_binary(4, k, 0.25, 1).unwrap();
        let b = gen_binary(k, 4, 0.25, 2).unwrap();
        let r = oracle::ref_f32(&a, &b).unwrap();
        let mean = r.data.iter().map(|&v| v as f64).sum::<f64>() / r.data.len() as f64;
        assert!((mean - 1024.0).abs() < 100.0, "{mean}");
        assert!(r.data.iter().all(|&v| v > 0.0 && v < 2048.0));
    }

    #[test]
    fn element_counts_add_up_with_ignored_elements() {
        let problem = Problem::new(8, 8, 4096, Layout::TN).unwrap();
        let cfg = VerifyConfig {
            p_override: Some(0.72),
            ..Default::default()
        };
        let rep = exact_match_binary(&NaiveKernel { acc: Accumulator::F16 }, &problem, &cfg).unwrap();
        assert!(rep.passed, "{rep:?}");
        assert!(rep.ignored_elems > 0);
        assert_eq!(rep.checked_elems + rep.ignored_elems, 5 * 64);
    }

    #[test]
    fn degenerate_draws_are_regenerated() {
        let problem = Problem::new(4, 4, 8192, Layout::NN).unwrap();
        let cfg = VerifyConfig {
            p_override: Some(1.0),
            trials: 2,
            ..Default::default()
        };
        let rep = exact_match_binary(&canonical(), &problem, &cfg).unwrap();
        assert!(rep.passed);
        assert!(rep.regenerated >= 2);
        assert!(rep.checked_elems > 0);
    }

    #[test]
    fn wrong_kernel_fails_exact_match() {
        let problem = Problem::new(8, 8, 64, Layout::NN).unwrap();
        let off_by_one = FnKernel::new("plus-one", |a: &MatHalf, b: &MatHalf| {
            let c = oracle::ref_f16_naive(a, b, Accumulator::F32)?;
            Ok(MatHalf::from_fn(c.rows(), c.cols(), Order::RowMajor, |i, j| {
                half16::add(c.get(i, j), Half::ONE)
            }))
        });
        let rep = exact_match_binary(&off_by_one, &problem, &VerifyConfig::default()).unwrap();
        assert!(!rep.passed);
        assert!(rep.failure.is_some());
    }

    #[test]
    fn spread_fixtures() {
        assert_eq!(spread_bound(&[vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap(), 0.0);
        let ulp = half16::ulp_at(600.0).unwrap();
        let bound = spread_bound(&[vec![3.0, 600.0], vec![3.0, 600.0 + ulp], vec![3.0, 600.0]]).unwrap();
        assert_eq!(bound, ulp);
        assert!(spread_bound(&[]).is_err());
    }

    #[test]
    fn binary_bound_is_zero() {
        let a = gen_binary(12, 200, 0.5, 3).unwrap();
        let b = gen_binary(200, 12, 0.5, 4).unwrap();
        assert_eq!(baseline_bound(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn long_k_uniform_bound_is_positive() {
        let p = Problem::new(8, 8, 4096, Layout::NN).unwrap();
        let (a, b) = p.uniform_operands(5);
        assert!(baseline_bound(&a, &b).unwrap() > 0.0);
    }

    #[test]
    fn family_members_pass_and_zero_kernel_fails() {
        let problem = Problem::new(16, 24, 300, Layout::TN).unwrap();
        let cfg = VerifyConfig {
            trials: 3,
            ..Default::default()
        };
        let fx = ProblemFixtures::new(&problem, &cfg).unwrap();
        for k in baseline_family() {
            let s = fx.verify(k.as_ref());
            assert!(s.passed(), "{} {s:?}", k.name());
            assert!(s.bounded.max_normalized_diff <= 1.0);
        }
        let zeros = FnKernel::new("zeros", |a: &MatHalf, b: &MatHalf| {
            Ok(MatHalf::zeros(a.rows(), b.cols(), Order::RowMajor))
        });
        let rep = bounded_deviation_on(&zeros, &fx.deviation);
        assert!(!rep.passed);
        assert!(rep.max_normalized_diff > 1.0);
    }

    #[test]
    fn kernel_errors_become_failures() {
        let broken = FnKernel::new("broken", |_: &MatHalf, _: &MatHalf| -> Result<MatHalf> {
            Err(Error::KernelFailed {
                kernel: "broken".into(),
                reason: "boom".into(),
            })
        });
        let problem = Problem::new(4, 4, 4, Layout::NN).unwrap();
        let s = verify_kernel(&broken, &problem, &VerifyConfig::default()).unwrap();
        assert!(!s.exact.passed && !s.bounded.passed);
        assert!(s.exact.failure.unwrap().contains("boom"));
        assert_eq!(s.bounded.max_normalized_diff, f64::INFINITY);
    }

    #[test]
    fn infinite_fields_survive_json() {
        let mut rep = VerifyReport::empty();
        rep.max_normalized_diff = f64::INFINITY;
        let text = serde_json::to_string(&rep).unwrap();
        assert!(text.contains("\"inf\""));
        let back: VerifyReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back, rep);
    }

    #[test]
    fn normalized_diff_edges() {
        assert_eq!(normalized_diff(0.0, 0.0), 0.0);
        assert_eq!(normalized_diff(1.0, 0.0), f64::INFINITY);
        assert_eq!(normalized_diff(1.0, 4.0), 0.25);
    }

    #[test]
    fn partial_sums_stay_exact_below_the_limit() {
        let a = gen_binary(10, 3000, 0.6, 21).unwrap();
        let b = gen_binary(3000, 10, 0.6, 22).unwrap();
        let r = oracle::ref_f32(&a, &b).unwrap();
        let mut last = vec![0.0f64; 100];
        ref_f16_naive_traced(&a, &b, |s| {
            let e = s.row * 10 + s.col;
            let fin = r.get(s.row, s.col) as f64;
            if fin < EXACT_INTEGER_LIMIT {
                assert!(s.exact >= last[e] && s.exact <= fin);
                assert_eq!(s.rounded.to_f64(), s.exact);
                last[e] = s.exact;
            }
        })
        .unwrap();
    }

    #[test]
    fn reports_merge_associatively() {
        let problem = Problem::new(8, 8, 64, Layout::NN).unwrap();
        let k = canonical();
        let r: Vec<_> = (0..3)
            .map(|s| {
                let cfg = VerifyConfig {
                    seed: s,
                    trials: 1,
                    ..Default::default()
                };
                exact_match_binary(&k, &problem, &cfg).unwrap()
            })
            .collect();
        let left = r[0].clone().merge(&r[1]).merge(&r[2]);
        let right = r[0].clone().merge(&r[1].clone().merge(&r[2]));
        assert_eq!(left, right);
        assert_eq!(left.trials, 3);
    }
}
