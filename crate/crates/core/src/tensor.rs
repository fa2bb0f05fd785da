//! Half-precision matrices, operand layouts and the (M, N, K) problem grid.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::distributions::{Bernoulli, Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::half16::Half;

/// The ten dimension values every grid problem draws from.
pub const GRID_DIMS: [usize; 10] = [64, 128, 256, 512, 1024, 2048, 4096, 8192, 12288, 16384];

/// Operand layout. `NN`: A and B row-major. `TN`: A row-major, B column-major.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Layout {
    #[serde(rename = "NN")]
    NN,
    #[serde(rename = "TN")]
    TN,
}

impl Layout {
    pub const ALL: [Layout; 2] = [Layout::NN, Layout::TN];

    /// Storage order of the B operand under this layout.
    pub fn b_order(self) -> Order {
        match self {
            Layout::NN => Order::RowMajor,
            Layout::TN => Order::ColMajor,
        }
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Layout::NN => "NN",
            Layout::TN => "TN",
        })
    }
}

impl FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "NN" => Ok(Layout::NN),
            "TN" => Ok(Layout::TN),
            other => Err(Error::Parse(format!("unknown layout `{other}`"))),
        }
    }
}

/// One GEMM shape: A is `m x k`, B is `k x n`, C is `m x n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Problem {
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub layout: Layout,
}

impl Problem {
    pub fn new(m: usize, n: usize, k: usize, layout: Layout) -> Result<Problem> {
        if m == 0 || n == 0 || k == 0 {
            return Err(Error::Precondition(format!(
                "problem dims must be positive, got ({m},{n},{k})"
            )));
        }
        Ok(Problem { m, n, k, layout })
    }

    /// Multiply-accumulate count, M * N * K.
    pub fn size(&self) -> u128 {
        self.m as u128 * self.n as u128 * self.k as u128
    }

    pub fn log2_size(&self) -> f64 {
        (self.size() as f64).log2()
    }

    /// True when every dimension is one of the grid values.
    pub fn on_grid(&self) -> bool {
        [self.m, self.n, self.k].iter().all(|d| GRID_DIMS.contains(d))
    }

    /// Uniform [-1, 1] operands for this problem, B stored per the layout.
    pub fn uniform_operands(&self, seed: u64) -> (MatHalf, MatHalf) {
        let a = gen_uniform(self.m, self.k, -1.0, 1.0, seed).expect("valid range");
        let b = gen_uniform(self.k, self.n, -1.0, 1.0, seed ^ 0x9E37_79B9_7F4A_7C15)
            .expect("valid range")
            .to_order(self.layout.b_order());
        (a, b)
    }

    /// Bernoulli(p) binary operands for this problem, B stored per the layout.
    pub fn binary_operands(&self, p: f64, seed: u64) -> Result<(MatHalf, MatHalf)> {
        let a = gen_binary(self.m, self.k, p, seed)?;
        let b = gen_binary(self.k, self.n, p, seed ^ 0x9E37_79B9_7F4A_7C15)?
            .to_order(self.layout.b_order());
        Ok((a, b))
    }
}

impl fmt::Display for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{},{})", self.m, self.n, self.k, self.layout)
    }
}

/// All 1000 grid problems for one layout, lexicographic in (M, N, K).
pub fn make_grid(layout: Layout) -> Vec<Problem> {
    let mut out = Vec::with_capacity(GRID_DIMS.len().pow(3));
    for &m in &GRID_DIMS {
        for &n in &GRID_DIMS {
            for &k in &GRID_DIMS {
                out.push(Problem { m, n, k, layout });
            }
        }
    }
    out
}

/// Cartesian product of `dims` in every position, lexicographic.
pub fn make_subgrid(dims: &[usize], layout: Layout) -> Vec<Problem> {
    let mut out = Vec::new();
    for &m in dims {
        for &n in dims {
            for &k in dims {
                out.push(Problem { m, n, k, layout });
            }
        }
    }
    out
}

pub const PROBLEM_CSV_HEADER: [&str; 4] = ["M", "N", "K", "layout"];

pub fn write_problems_csv<W: Write>(w: W, problems: &[Problem]) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    wtr.write_record(PROBLEM_CSV_HEADER)?;
    for p in problems {
        wtr.write_record([
            p.m.to_string(),
            p.n.to_string(),
            p.k.to_string(),
            p.layout.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_problems_csv<R: Read>(r: R) -> Result<Vec<Problem>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let headers = rdr.headers()?.clone();
    if headers.len() != 4 || !headers.iter().zip(PROBLEM_CSV_HEADER).all(|(a, b)| a == b) {
        return Err(Error::Parse(format!(
            "problem CSV header must be `M,N,K,layout`, found `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let dim = |j: usize| -> Result<usize> {
            rec.get(j)
                .ok_or_else(|| Error::Parse(format!("line {line}: missing field {j}")))?
                .parse()
                .map_err(|e| Error::Parse(format!("line {line}: {e}")))
        };
        let layout = rec
            .get(3)
            .ok_or_else(|| Error::Parse(format!("line {line}: missing layout")))?
            .parse()?;
        out.push(Problem::new(dim(0)?, dim(1)?, dim(2)?, layout)?);
    }
    Ok(out)
}

/// Storage order of a matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Order {
    RowMajor,
    ColMajor,
}

/// A dense binary16 matrix with an explicit leading dimension.
#[derive(Clone, PartialEq, Eq)]
pub struct MatHalf {
    rows: usize,
    cols: usize,
    order: Order,
    ld: usize,
    data: Vec<Half>,
}

impl fmt::Debug for MatHalf {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MatHalf")
            .field("rows", &self.rows)
            .field("cols", &self.cols)
            .field("order", &self.order)
            .field("ld", &self.ld)
            .finish_non_exhaustive()
    }
}

impl MatHalf {
    /// Wraps existing storage. `ld` must cover the major extent and `data`
    /// must hold exactly `ld * minor extent` elements.
    pub fn from_vec(
        rows: usize,
        cols: usize,
        order: Order,
        ld: usize,
        data: Vec<Half>,
    ) -> Result<MatHalf> {
        let (major, minor) = match order {
            Order::RowMajor => (cols, rows),
            Order::ColMajor => (rows, cols),
        };
        if ld < major {
            return Err(Error::DimMismatch(format!(
                "leading dimension {ld} smaller than extent {major}"
            )));
        }
        if data.len() != ld * minor {
            return Err(Error::DimMismatch(format!(
                "expected {} elements, got {}",
                ld * minor,
                data.len()
            )));
        }
        Ok(MatHalf {
            rows,
            cols,
            order,
            ld,
            data,
        })
    }

    pub fn zeros(rows: usize, cols: usize, order: Order) -> MatHalf {
        let ld = match order {
            Order::RowMajor => cols,
            Order::ColMajor => rows,
        };
        MatHalf {
            rows,
            cols,
            order,
            ld,
            data: vec![Half::ZERO; rows * cols],
        }
    }

    pub fn from_fn(
        rows: usize,
        cols: usize,
        order: Order,
        mut f: impl FnMut(usize, usize) -> Half,
    ) -> MatHalf {
        let mut m = MatHalf::zeros(rows, cols, order);
        for r in 0..rows {
            for c in 0..cols {
                let i = m.index(r, c);
                m.data[i] = f(r, c);
            }
        }
        m
    }

    /// Row-major matrix from real values, each rounded to binary16.
    pub fn from_f64_rows(rows: usize, cols: usize, values: &[f64]) -> Result<MatHalf> {
        if values.len() != rows * cols {
            return Err(Error::DimMismatch(format!(
                "{} values for a {rows}x{cols} matrix",
                values.len()
            )));
        }
        Ok(MatHalf {
            rows,
            cols,
            order: Order::RowMajor,
            ld: cols,
            data: values.iter().map(|&v| Half::from_f64(v)).collect(),
        })
    }

    pub fn identity(n: usize) -> MatHalf {
        MatHalf::from_fn(n, n, Order::RowMajor, |r, c| {
            if r == c {
                Half::ONE
            } else {
                Half::ZERO
            }
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn order(&self) -> Order {
        self.order
    }

    #[inline]
    pub fn leading_dim(&self) -> usize {
        self.ld
    }

    #[inline]
    pub fn data(&self) -> &[Half] {
        &self.data
    }

    #[inline]
    fn index(&self, r: usize, c: usize) -> usize {
        match self.order {
            Order::RowMajor => r * self.ld + c,
            Order::ColMajor => c * self.ld + r,
        }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> Half {
        self.data[self.index(r, c)]
    }

    pub fn set(&mut self, r: usize, c: usize, v: Half) {
        let i = self.index(r, c);
        self.data[i] = v;
    }

    /// Logical elements in row-major order, skipping leading-dimension slack.
    pub fn iter_row_major(&self) -> impl Iterator<Item = Half> + '_ {
        (0..self.rows).flat_map(move |r| (0..self.cols).map(move |c| self.get(r, c)))
    }

    /// Dense copy in the requested storage order.
    pub fn to_order(&self, order: Order) -> MatHalf {
        if order == self.order && self.is_dense() {
            return self.clone();
        }
        MatHalf::from_fn(self.rows, self.cols, order, |r, c| self.get(r, c))
    }

    fn is_dense(&self) -> bool {
        match self.order {
            Order::RowMajor => self.ld == self.cols,
            Order::ColMajor => self.ld == self.rows,
        }
    }

    /// Leading `rows x cols` block as a dense matrix in the same order.
    pub fn truncate(&self, rows: usize, cols: usize) -> Result<MatHalf> {
        if rows > self.rows || cols > self.cols {
            return Err(Error::DimMismatch(format!(
                "cannot truncate {}x{} to {rows}x{cols}",
                self.rows, self.cols
            )));
        }
        Ok(MatHalf::from_fn(rows, cols, self.order, |r, c| self.get(r, c)))
    }

    /// Value-level equality that ignores storage order and padding slack.
    pub fn bit_eq(&self, other: &MatHalf) -> bool {
        self.rows == other.rows
            && self.cols == other.cols
            && self.iter_row_major().eq(other.iter_row_major())
    }

    /// Decoded logical contents in row-major order.
    pub fn to_f32_row_major(&self) -> Vec<f32> {
        self.iter_row_major().map(Half::to_f32).collect()
    }
}

/// Appends zero rows until the row count is a multiple of `bm`.
///
/// The original rows are copied bit for bit; storage order is kept.
pub fn pad_rows(a: &MatHalf, bm: usize) -> Result<MatHalf> {
    if bm == 0 {
        return Err(Error::Precondition("pad_rows block size must be >= 1".into()));
    }
    let rows = a.rows.div_ceil(bm) * bm;
    if rows == a.rows {
        return Ok(a.clone());
    }
    Ok(pad_to(a, rows, a.cols))
}

/// Appends zero columns until the column count is a multiple of `bn`.
pub fn pad_cols(a: &MatHalf, bn: usize) -> Result<MatHalf> {
    if bn == 0 {
        return Err(Error::Precondition("pad_cols block size must be >= 1".into()));
    }
    let cols = a.cols.div_ceil(bn) * bn;
    if cols == a.cols {
        return Ok(a.clone());
    }
    Ok(pad_to(a, a.rows, cols))
}

fn pad_to(a: &MatHalf, rows: usize, cols: usize) -> MatHalf {
    let mut out = MatHalf::zeros(rows, cols, a.order);
    match a.order {
        Order::RowMajor => {
            for r in 0..a.rows {
                let src = &a.data[r * a.ld..r * a.ld + a.cols];
                out.data[r * cols..r * cols + a.cols].copy_from_slice(src);
            }
        }
        Order::ColMajor => {
            for c in 0..a.cols {
                let src = &a.data[c * a.ld..c * a.ld + a.rows];
                out.data[c * rows..c * rows + a.rows].copy_from_slice(src);
            }
        }
    }
    out
}

/// Row-major matrix of i.i.d. Bernoulli(p) entries encoded as 0.0 / 1.0.
pub fn gen_binary(rows: usize, cols: usize, p: f64, seed: u64) -> Result<MatHalf> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Precondition(format!(
            "binary probability must lie in (0, 1], got {p}"
        )));
    }
    let dist = Bernoulli::new(p).map_err(|e| Error::Precondition(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols)
        .map(|_| if dist.sample(&mut rng) { Half::ONE } else { Half::ZERO })
        .collect();
    Ok(MatHalf {
        rows,
        cols,
        order: Order::RowMajor,
        ld: cols,
        data,
    })
}

/// Row-major matrix of uniform [lo, hi] reals rounded to binary16.
pub fn gen_uniform(rows: usize, cols: usize, lo: f64, hi: f64, seed: u64) -> Result<MatHalf> {
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::Precondition(format!(
            "uniform range needs finite lo < hi, got [{lo}, {hi}]"
        )));
    }
    let dist = Uniform::new_inclusive(lo, hi);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols)
        .map(|_| Half::from_f64(dist.sample(&mut rng)))
        .collect();
    Ok(MatHalf {
        rows,
        cols,
        order: Order::RowMajor,
        ld: cols,
        data,
    })
}
