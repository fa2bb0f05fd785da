//! Reference GEMMs used as correctness anchors.
//!
//! Both references sum every output element in ascending k order.

use crate::error::{Error, Result};
use crate::half16::{self, Half};
use crate::kernel::Accumulator;
use crate::tensor::{MatHalf, Order};

/// Dense row-major `f32` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct MatF32 {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl MatF32 {
    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }
}

pub(crate) fn check_inner(a: &MatHalf, b: &MatHalf) -> Result<()> {
    if a.cols() != b.rows() {
        return Err(Error::DimMismatch(format!(
            "A is {}x{} but B is {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    Ok(())
}

/// Decoded storage with the source matrix's order and leading dimension.
struct Decoded {
    order: Order,
    ld: usize,
    data: Vec<f32>,
}

impl Decoded {
    fn new(m: &MatHalf) -> Decoded {
        Decoded {
            order: m.order(),
            ld: m.leading_dim(),
            data: m.data().iter().map(|h| h.to_f32()).collect(),
        }
    }

    #[inline(always)]
    fn get(&self, r: usize, c: usize) -> f32 {
        match self.order {
            Order::RowMajor => self.data[r * self.ld + c],
            Order::ColMajor => self.data[c * self.ld + r],
        }
    }
}

/// 32-bit reference: decoded operands, `f32` accumulation, no final rounding.
pub fn ref_f32(a: &MatHalf, b: &MatHalf) -> Result<MatF32> {
    check_inner(a, b)?;
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let av = a.to_f32_row_major();
    let bv = b.to_f32_row_major();
    let mut out = vec![0f32; m * n];
    // i-k-j order: each out[i][j] still receives its terms in ascending k.
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let x = av[i * k + p];
            let brow = &bv[p * n..(p + 1) * n];
            for (c, &y) in row.iter_mut().zip(brow) {
                *c += x * y;
            }
        }
    }
    Ok(MatF32 {
        rows: m,
        cols: n,
        data: out,
    })
}

/// Textbook triple loop with binary16 output.
///
/// `F16` rounds every product and every partial sum to binary16 (no fused
/// multiply-add). `F32` accumulates in `f32` and rounds once at the end.
pub fn ref_f16_naive(a: &MatHalf, b: &MatHalf, acc: Accumulator) -> Result<MatHalf> {
    check_inner(a, b)?;
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let da = Decoded::new(a);
    let db = Decoded::new(b);
    let mut out = MatHalf::zeros(m, n, Order::RowMajor);
    for i in 0..m {
        for j in 0..n {
            let v = match acc {
                Accumulator::F16 => {
                    let mut s = 0f32;
                    for p in 0..k {
                        s = half16::mul_add_step(s, da.get(i, p), db.get(p, j));
                    }
                    Half::from_f32(s)
                }
                Accumulator::F32 => {
                    let mut s = 0f32;
                    for p in 0..k {
                        s += da.get(i, p) * db.get(p, j);
                    }
                    Half::from_f32(s)
                }
            };
            out.set(i, j, v);
        }
    }
    Ok(out)
}

/// One accumulation step of the binary16 triple loop.
#[derive(Clone, Copy, Debug)]
pub struct StepTrace {
    pub row: usize,
    pub col: usize,
    pub k: usize,
    /// Exact real value of `previous partial sum + a*b`.
    pub exact: f64,
    /// The partial sum after rounding to binary16.
    pub rounded: Half,
}

/// `ref_f16_naive(.., F16)` with a callback on every accumulation step.
pub fn ref_f16_naive_traced(
    a: &MatHalf,
    b: &MatHalf,
    mut on_step: impl FnMut(StepTrace),
) -> Result<MatHalf> {
    check_inner(a, b)?;
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = MatHalf::zeros(m, n, Order::RowMajor);
    for i in 0..m {
        for j in 0..n {
            let mut s = Half::ZERO;
            for p in 0..k {
                let prod = half16::mul(a.get(i, p), b.get(p, j));
                let exact = s.to_f64() + a.get(i, p).to_f64() * b.get(p, j).to_f64();
                s = half16::add(s, prod);
                on_step(StepTrace {
                    row: i,
                    col: j,
                    k: p,
                    exact,
                    rounded: s,
                });
            }
            out.set(i, j, s);
        }
    }
    Ok(out)
}
