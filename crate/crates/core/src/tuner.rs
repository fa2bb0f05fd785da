//! Configuration search: heuristic candidate pools, median-of-rounds
//! selection and reward scoring.

use std::collections::{HashSet, VecDeque};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bench::{median, Clock};
use crate::error::{Error, Result};
use crate::kernel::{Accumulator, GemmKernel, KernelParams, TiledKernel};
use crate::tensor::Problem;
use crate::verify::{ProblemFixtures, VerifyConfig, VerifySummary};

/// Penalty weights of the reward.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardParams {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        RewardParams { alpha: 1.0, beta: 1e-4 }
    }
}

/// `mean_i(ratio_i - alpha * diff_i) - beta * descriptor_len`.
pub fn reward(ratios: &[f64], diffs: &[f64], descriptor_len: usize, rp: &RewardParams) -> Result<f64> {
    if ratios.len() != diffs.len() || ratios.is_empty() {
        return Err(Error::Precondition(format!(
            "need equal nonempty ratio and diff lists, got {} and {}",
            ratios.len(),
            diffs.len()
        )));
    }
    if !(rp.alpha >= 0.0 && rp.beta >= 0.0) {
        return Err(Error::Precondition("alpha and beta must be nonnegative".into()));
    }
    let mean = ratios
        .iter()
        .zip(diffs)
        .map(|(r, d)| r - rp.alpha * d)
        .sum::<f64>()
        / ratios.len() as f64;
    Ok(mean - rp.beta * descriptor_len as f64)
}

// Problem-size thresholds (M*N*K) for block swizzling.
const SWIZZLE_NEVER_BELOW: u128 = 1 << 27;
const SWIZZLE_LARGE_STRIDES_FROM: u128 = 1 << 33;
const SWIZZLE_ALWAYS_FROM: u128 = 1 << 36;

const SMALL_STRIDES: [usize; 5] = [8, 16, 32, 64, 128];
const LARGE_STRIDES: [usize; 6] = [512, 1024, 2048, 4096, 8192, 16384];

const TILE_MIN: usize = 16;
const TILE_MAX: usize = 256;
const BK_CHOICES: [usize; 4] = [32, 64, 128, 256];
const BK_PRIOR: usize = 64;
const PREFETCH_CHOICES: [usize; 3] = [1, 2, 4];
const MICRO_SHAPES: [(usize, usize); 6] = [(4, 8), (8, 8), (4, 16), (2, 8), (8, 4), (4, 4)];

/// Allowed pipeline depths for a given K.
pub fn stage_choices(k: usize) -> &'static [usize] {
    match k {
        0..=128 => &[2, 3],
        129..=1024 => &[3, 4],
        1025..=8192 => &[4, 5],
        _ => &[6, 7, 8],
    }
}

/// Whether swizzling is forbidden, optional or mandatory at this size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SwizzlePolicy {
    Never,
    Optional,
    Always,
}

pub fn swizzle_policy(size: u128) -> SwizzlePolicy {
    if size < SWIZZLE_NEVER_BELOW {
        SwizzlePolicy::Never
    } else if size >= SWIZZLE_ALWAYS_FROM {
        SwizzlePolicy::Always
    } else {
        SwizzlePolicy::Optional
    }
}

/// Candidate swizzle strides in elements for a problem size.
pub fn stride_choices(size: u128) -> &'static [usize] {
    if size < SWIZZLE_LARGE_STRIDES_FROM {
        &SMALL_STRIDES
    } else {
        &LARGE_STRIDES
    }
}

/// Element stride expressed in block tiles of width `bn`.
pub fn stride_in_tiles(stride_elems: usize, bn: usize) -> usize {
    (stride_elems / bn).max(1)
}

fn log2_bucket(dim: usize) -> u32 {
    // 64 -> 32, 256 -> 64, 1024 -> 128, >= 4096 -> 256.
    let l = (dim.max(1) as f64).log2();
    (((l - 6.0) / 2.0).round().clamp(0.0, 3.0) as u32) + 5
}

fn tile_cap(dim: usize) -> usize {
    dim.next_power_of_two().clamp(TILE_MIN, TILE_MAX)
}

/// Heuristic prior for one problem.
///
/// Block extents grow with their own dimension and lean toward the other
/// one, so square-ish tiles are favoured. Pipeline depth follows K. The
/// swizzle follows problem size.
pub fn prior(problem: &Problem, acc: Accumulator) -> KernelParams {
    let lm = log2_bucket(problem.m);
    let ln = log2_bucket(problem.n);
    let blend = |own: u32, other: u32| 1usize << ((2 * own + other) as f64 / 3.0).round() as u32;
    let bm = blend(lm, ln).min(tile_cap(problem.m));
    let bn = blend(ln, lm).min(tile_cap(problem.n));
    let size = problem.size();
    let swz = match swizzle_policy(size) {
        SwizzlePolicy::Never => None,
        SwizzlePolicy::Always => Some(stride_in_tiles(stride_choices(size)[2], bn)),
        SwizzlePolicy::Optional if size >= SWIZZLE_LARGE_STRIDES_FROM => {
            Some(stride_in_tiles(stride_choices(size)[2], bn))
        }
        SwizzlePolicy::Optional => None,
    };
    KernelParams {
        bm,
        bn,
        bk: BK_PRIOR.min(problem.k),
        mr: 4.min(bm),
        nr: 8.min(bn),
        n_stage: stage_choices(problem.k)[0],
        prefetch_distance: 2,
        swizzle_stride: swz,
        double_buffer: false,
        staggered_ab: false,
        direct_epilogue: true,
        acc,
        pad_enable: true,
    }
}

fn neighbors(p: &KernelParams, problem: &Problem) -> Vec<KernelParams> {
    let mut out = Vec::new();
    let cap_m = tile_cap(problem.m);
    let cap_n = tile_cap(problem.n);
    let scale = |v: usize, up: bool| if up { v * 2 } else { v / 2 };

    for up in [true, false] {
        out.push(KernelParams {
            bm: scale(p.bm, up),
            bn: scale(p.bn, up),
            ..*p
        });
    }
    for &s in stage_choices(problem.k) {
        out.push(KernelParams { n_stage: s, ..*p });
    }
    let size = problem.size();
    let strides: Vec<usize> = stride_choices(size).iter().map(|&s| stride_in_tiles(s, p.bn)).collect();
    match swizzle_policy(size) {
        SwizzlePolicy::Never => {}
        policy => {
            if policy == SwizzlePolicy::Optional {
                out.push(KernelParams {
                    swizzle_stride: if p.swizzle_stride.is_some() { None } else { Some(strides[2]) },
                    ..*p
                });
            }
            if p.swizzle_stride.is_some() {
                for &s in &strides {
                    out.push(KernelParams {
                        swizzle_stride: Some(s),
                        ..*p
                    });
                }
            }
        }
    }
    out.push(KernelParams {
        double_buffer: !p.double_buffer,
        ..*p
    });
    out.push(KernelParams {
        staggered_ab: !p.staggered_ab,
        ..*p
    });
    out.push(KernelParams {
        direct_epilogue: !p.direct_epilogue,
        ..*p
    });
    for &d in &PREFETCH_CHOICES {
        out.push(KernelParams {
            prefetch_distance: d,
            ..*p
        });
    }
    for &(mr, nr) in &MICRO_SHAPES {
        out.push(KernelParams { mr, nr, ..*p });
    }
    for (dm, dn) in [(true, false), (false, true)] {
        for up in [true, false] {
            out.push(KernelParams {
                bm: if dm { scale(p.bm, up) } else { p.bm },
                bn: if dn { scale(p.bn, up) } else { p.bn },
                ..*p
            });
        }
    }
    if problem.m % p.bm == 0 && problem.n % p.bn == 0 {
        out.push(KernelParams {
            pad_enable: !p.pad_enable,
            ..*p
        });
    }
    for &bk in &BK_CHOICES {
        if bk <= problem.k {
            out.push(KernelParams { bk, ..*p });
        }
    }

    out.retain(|q| {
        q.bm >= TILE_MIN
            && q.bn >= TILE_MIN
            && q.bm <= cap_m
            && q.bn <= cap_n
            && q.validate_for(problem.m, problem.n).is_ok()
    });
    // Keep the swizzle stride meaningful after bn moves.
    for q in &mut out {
        if let Some(s) = q.swizzle_stride {
            let grid_n = problem.n.div_ceil(q.bn);
            q.swizzle_stride = Some(s.min(grid_n.max(1)));
        }
    }
    out
}

/// Candidate pool for a problem.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidates {
    pub params: Vec<KernelParams>,
    /// True when fewer feasible configurations existed than the budget asked for.
    pub exhausted: bool,
}

/// Heuristic prior first, then breadth-first neighbourhood expansion until
/// `budget` distinct feasible configurations are collected.
pub fn enumerate_candidates(problem: &Problem, budget: usize, acc: Accumulator) -> Result<Candidates> {
    if budget == 0 {
        return Err(Error::Precondition("budget must be >= 1".into()));
    }
    let start = prior(problem, acc);
    start.validate_for(problem.m, problem.n)?;
    let mut seen = HashSet::from([start]);
    let mut params = vec![start];
    let mut queue = VecDeque::from([start]);
    while params.len() < budget {
        let Some(p) = queue.pop_front() else { break };
        for q in neighbors(&p, problem) {
            if params.len() >= budget {
                break;
            }
            if seen.insert(q) {
                params.push(q);
                queue.push_back(q);
            }
        }
    }
    let exhausted = params.len() < budget;
    if exhausted {
        log::info!(
            "only {} feasible candidates for {problem} (budget {budget})",
            params.len()
        );
    }
    Ok(Candidates { params, exhausted })
}

/// One configuration's tuning record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateResult {
    pub params: KernelParams,
    /// Measured nanoseconds per measurement round.
    pub times: Vec<u64>,
    pub median_time: Option<f64>,
    /// Reference-kernel time over candidate time, per measurement round.
    pub ratios: Vec<f64>,
    pub reward: Option<f64>,
    pub verified: bool,
    pub verify: Option<VerifySummary>,
    pub descriptor_len: usize,
    pub winner: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneConfig {
    pub budget: usize,
    pub warmup_rounds: usize,
    pub measure_rounds: usize,
    pub seed: u64,
    pub acc: Accumulator,
    pub reward: RewardParams,
    pub verify: VerifyConfig,
}

impl Default for TuneConfig {
    fn default() -> Self {
        TuneConfig {
            budget: 100,
            warmup_rounds: 50,
            measure_rounds: 100,
            seed: 0,
            acc: Accumulator::F32,
            reward: RewardParams::default(),
            verify: VerifyConfig::default(),
        }
    }
}

impl TuneConfig {
    pub const DESK_ROUNDS: (usize, usize) = (5, 10);

    pub fn desk_scale() -> TuneConfig {
        TuneConfig {
            warmup_rounds: Self::DESK_ROUNDS.0,
            measure_rounds: Self::DESK_ROUNDS.1,
            ..Default::default()
        }
    }
}

/// A configuration together with the code that runs it.
pub struct Candidate {
    pub params: KernelParams,
    pub kernel: Box<dyn GemmKernel>,
}

impl Candidate {
    pub fn tiled(params: KernelParams) -> Candidate {
        Candidate {
            params,
            kernel: Box::new(TiledKernel { params }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneOutcome {
    pub problem: Problem,
    pub winner: CandidateResult,
    /// Every candidate in enumeration order, including disqualified ones.
    pub candidates: Vec<CandidateResult>,
    /// Reference-kernel time per measurement round.
    pub reference_times: Vec<u64>,
    pub exhausted: bool,
}

/// Enumerates, verifies and times candidates for `problem`.
pub fn autotune(problem: &Problem, cfg: &TuneConfig, clock: &dyn Clock) -> Result<TuneOutcome> {
    let pool = enumerate_candidates(problem, cfg.budget, cfg.acc)?;
    let candidates = pool.params.into_iter().map(Candidate::tiled).collect();
    let mut out = autotune_with(problem, candidates, cfg, clock)?;
    out.exhausted = pool.exhausted;
    Ok(out)
}

/// Shuffled-rounds selection over explicit candidates.
///
/// Candidates failing either verification protocol are excluded before
/// timing. Each round draws fresh uniform inputs, shuffles the order of the
/// surviving candidates plus the reference kernel, makes one untimed
/// priming call, then times every kernel once. Clock slot `i` is candidate
/// `i`; the reference uses slot `candidates.len()`. The winner has the best
/// median over measurement rounds, ties going to the earlier candidate.
pub fn autotune_with(
    problem: &Problem,
    candidates: Vec<Candidate>,
    cfg: &TuneConfig,
    clock: &dyn Clock,
) -> Result<TuneOutcome> {
    if cfg.measure_rounds == 0 {
        return Err(Error::Precondition("measure_rounds must be >= 1".into()));
    }
    if candidates.is_empty() {
        return Err(Error::Precondition("no candidates".into()));
    }
    let fixtures = ProblemFixtures::new(problem, &cfg.verify)?;
    let mut results: Vec<CandidateResult> = candidates
        .iter()
        .map(|c| {
            let summary = fixtures.verify(c.kernel.as_ref());
            let verified = summary.passed() && summary.bounded.max_normalized_diff.is_finite();
            if !verified {
                log::info!("{} failed verification on {problem}", c.kernel.name());
            }
            CandidateResult {
                params: c.params,
                times: Vec::new(),
                median_time: None,
                ratios: Vec::new(),
                reward: None,
                verified,
                verify: Some(summary),
                descriptor_len: c.params.descriptor_len(),
                winner: false,
            }
        })
        .collect();

    let live: Vec<usize> = (0..candidates.len()).filter(|&i| results[i].verified).collect();
    if live.is_empty() {
        return Err(Error::NoWinner(problem.to_string()));
    }

    let reference = TiledKernel {
        params: KernelParams::canonical(cfg.acc),
    };
    let ref_slot = candidates.len();
    let mut order: Vec<usize> = live.iter().copied().chain([ref_slot]).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(1);
    let mut input_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    input_rng.set_stream(2);
    let mut reference_times = Vec::with_capacity(cfg.measure_rounds);

    for round in 0..cfg.warmup_rounds + cfg.measure_rounds {
        let measuring = round >= cfg.warmup_rounds;
        let (a, b) = problem.uniform_operands(input_rng.gen());
        order.shuffle(&mut shuffle_rng);
        let kernel_of = |slot: usize| -> &dyn GemmKernel {
            if slot == ref_slot {
                &reference
            } else {
                candidates[slot].kernel.as_ref()
            }
        };
        let _token = crate::bench::timing_token();
        kernel_of(order[0]).run(&a, &b).map_err(|e| Error::KernelFailed {
            kernel: kernel_of(order[0]).name(),
            reason: e.to_string(),
        })?;
        let mut round_times = vec![0u64; ref_slot + 1];
        for &slot in &order {
            let k = kernel_of(slot);
            let mut res = Ok(());
            let t = clock.measure(slot, &mut || {
                res = k.run(&a, &b).map(|c| {
                    std::hint::black_box(crate::bench::checksum(&c));
                })
            });
            res.map_err(|e| Error::KernelFailed {
                kernel: k.name(),
                reason: e.to_string(),
            })?;
            round_times[slot] = t;
        }
        if measuring {
            for &i in &live {
                results[i].times.push(round_times[i]);
                results[i]
                    .ratios
                    .push(round_times[ref_slot] as f64 / round_times[i] as f64);
            }
            reference_times.push(round_times[ref_slot]);
        }
    }

    for &i in &live {
        let r = &mut results[i];
        let times: Vec<f64> = r.times.iter().map(|&t| t as f64).collect();
        r.median_time = median(&times);
        let diff = r.verify.as_ref().map_or(0.0, |v| v.bounded.max_normalized_diff);
        let diffs = vec![diff; r.ratios.len()];
        r.reward = Some(reward(&r.ratios, &diffs, r.descriptor_len, &cfg.reward)?);
    }

    let best = live
        .iter()
        .copied()
        .min_by(|&x, &y| {
            let mx = results[x].median_time.unwrap_or(f64::INFINITY);
            let my = results[y].median_time.unwrap_or(f64::INFINITY);
            mx.total_cmp(&my).then(x.cmp(&y))
        })
        .expect("live is nonempty");
    results[best].winner = true;

    Ok(TuneOutcome {
        problem: *problem,
        winner: results[best].clone(),
        candidates: results,
        reference_times,
        exhausted: false,
    })
}
