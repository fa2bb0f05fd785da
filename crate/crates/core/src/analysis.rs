//! Which configurations won: dimension/parameter rank correlations,
//! pipeline depth by K, and swizzle usage by problem size.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bench::SpeedupStats;
use crate::error::{Error, Result};
use crate::kernel::KernelParams;
use crate::store::{RecordKind, RunRecord};
use crate::tensor::Problem;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub rho: f64,
    /// Set when either input is constant; `rho` is then 0.
    pub degenerate: bool,
}

/// 1-based ranks, ties sharing their average rank.
fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties.
pub fn rank_correlation(xs: &[f64], ys: &[f64]) -> Result<Correlation> {
    if xs.len() != ys.len() {
        return Err(Error::DimMismatch(format!("{} vs {} values", xs.len(), ys.len())));
    }
    if xs.len() < 3 {
        return Err(Error::Precondition("rank correlation needs at least 3 pairs".into()));
    }
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(Correlation {
            rho: 0.0,
            degenerate: true,
        });
    }
    Ok(Correlation {
        rho: (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0),
        degenerate: false,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub problem: Problem,
    pub run_id: String,
    pub params: KernelParams,
    pub stats: Option<SpeedupStats>,
}

/// Winning configurations, one per (problem, run).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TuningCorpus {
    pub entries: Vec<CorpusEntry>,
}

impl TuningCorpus {
    /// Collects the winners of tuning records. A later winner for the same
    /// (problem, run) replaces an earlier one.
    pub fn from_records(records: &[RunRecord]) -> TuningCorpus {
        let mut by_key: BTreeMap<(Problem, String), CorpusEntry> = BTreeMap::new();
        for r in records.iter().filter(|r| r.kind == RecordKind::Tune && r.winner) {
            let Some(params) = r.params else { continue };
            let run_id = r
                .notes
                .get("run_id")
                .and_then(|v| v.as_str())
                .map(str::to_string)
                .unwrap_or_else(|| format!("seed-{}", r.seed));
            by_key.insert(
                (r.problem, run_id.clone()),
                CorpusEntry {
                    problem: r.problem,
                    run_id,
                    params,
                    stats: r.speedup,
                },
            );
        }
        TuningCorpus {
            entries: by_key.into_values().collect(),
        }
    }

    pub fn push(&mut self, problem: Problem, run_id: impl Into<String>, params: KernelParams) {
        self.entries.push(CorpusEntry {
            problem,
            run_id: run_id.into(),
            params,
            stats: None,
        });
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub pair: String,
    pub rho: f64,
    pub degenerate: bool,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRow {
    pub k_bucket: String,
    pub n_stage: usize,
    pub count: usize,
    pub fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwizzleRow {
    pub size_bucket: String,
    pub configs: usize,
    pub usage: f64,
    /// Stride quantiles in elements (tile stride times bn); absent when no
    /// configuration in the bucket swizzles.
    pub stride_q25: Option<f64>,
    pub stride_q50: Option<f64>,
    pub stride_q75: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub correlations: Vec<CorrelationRow>,
    pub stages: Vec<StageRow>,
    pub swizzle: Vec<SwizzleRow>,
}

impl SelectionReport {
    pub fn correlation(&self, pair: &str) -> Option<&CorrelationRow> {
        self.correlations.iter().find(|r| r.pair == pair)
    }
}

pub const K_BUCKETS: [&str; 4] = ["<=128", "129-1024", "1025-8192", ">8192"];
pub const SIZE_BUCKETS: [&str; 4] = ["<2^27", "2^27-2^33", "2^33-2^36", ">=2^36"];

pub fn k_bucket(k: usize) -> usize {
    match k {
        0..=128 => 0,
        129..=1024 => 1,
        1025..=8192 => 2,
        _ => 3,
    }
}

pub fn size_bucket(size: u128) -> usize {
    if size < 1 << 27 {
        0
    } else if size < 1 << 33 {
        1
    } else if size < 1 << 36 {
        2
    } else {
        3
    }
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64))
}

/// Builds all three report sections.
pub fn selection_report(corpus: &TuningCorpus) -> Result<SelectionReport> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let e = &corpus.entries;
    let col = |f: &dyn Fn(&CorpusEntry) -> f64| e.iter().map(f).collect::<Vec<f64>>();
    let pairs: [(&str, Vec<f64>, Vec<f64>); 4] = [
        ("M~bm", col(&|x| x.problem.m as f64), col(&|x| x.params.bm as f64)),
        ("N~bn", col(&|x| x.problem.n as f64), col(&|x| x.params.bn as f64)),
        ("K~bk", col(&|x| x.problem.k as f64), col(&|x| x.params.bk as f64)),
        ("bm~bn", col(&|x| x.params.bm as f64), col(&|x| x.params.bn as f64)),
    ];
    let correlations = pairs
        .into_iter()
        .map(|(name, xs, ys)| {
            let c = if xs.len() >= 3 {
                rank_correlation(&xs, &ys)?
            } else {
                Correlation {
                    rho: 0.0,
                    degenerate: true,
                }
            };
            Ok(CorrelationRow {
                pair: name.into(),
                rho: c.rho,
                degenerate: c.degenerate,
                n: xs.len(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut stage_counts: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut per_k = [0usize; 4];
    for x in e {
        let b = k_bucket(x.problem.k);
        per_k[b] += 1;
        *stage_counts.entry((b, x.params.n_stage)).or_default() += 1;
    }
    let stages = stage_counts
        .into_iter()
        .map(|((b, s), count)| StageRow {
            k_bucket: K_BUCKETS[b].into(),
            n_stage: s,
            count,
            fraction: count as f64 / per_k[b] as f64,
        })
        .collect();

    let swizzle = (0..SIZE_BUCKETS.len())
        .filter_map(|b| {
            let members: Vec<&CorpusEntry> = e.iter().filter(|x| size_bucket(x.problem.size()) == b).collect();
            if members.is_empty() {
                return None;
            }
            let mut strides: Vec<f64> = members
                .iter()
                .filter_map(|x| x.params.swizzle_stride.map(|s| (s * x.params.bn) as f64))
                .collect();
            strides.sort_by(f64::total_cmp);
            Some(SwizzleRow {
                size_bucket: SIZE_BUCKETS[b].into(),
                configs: members.len(),
                usage: strides.len() as f64 / members.len() as f64,
                stride_q25: quantile(&strides, 0.25),
                stride_q50: quantile(&strides, 0.5),
                stride_q75: quantile(&strides, 0.75),
            })
        })
        .collect();

    Ok(SelectionReport {
        correlations,
        stages,
        swizzle,
    })
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `correlations.csv`, `stages.csv` and `swizzle.csv` into `dir`.
pub fn write_report_csv(report: &SelectionReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let paths = ["correlations.csv", "stages.csv", "swizzle.csv"].map(|f| dir.join(f));
    write_rows(&paths[0], &report.correlations)?;
    write_rows(&paths[1], &report.stages)?;
    write_rows(&paths[2], &report.swizzle)?;
    Ok(paths.to_vec())
}
