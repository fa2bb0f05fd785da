//! Parameterized tiled GEMM.
//!
//! `run` follows the classic three phases. Each output block tile of
//! `bm x bn` is owned by one worker. In the main loop the k dimension is cut
//! into `bk`-deep chunks, each chunk is packed into contiguous A and B panels
//! (the staging buffers, cycled round-robin across `n_stage` slots so later
//! chunks are packed ahead of use), and register-blocked micro-kernels
//! accumulate `mr x nr` fragments. The epilogue rounds the tile accumulator
//! to binary16 and writes it to C.
//!
//! Chunks are visited in ascending k and the micro-kernels step through each
//! chunk in ascending k, so every output element sees exactly the sequence
//! of roundings of the naive triple loop with the same accumulator.

mod micro;
mod params;
mod schedule;

pub use params::{Accumulator, KernelParams, SUPPORTED_MR, SUPPORTED_NR};
pub use schedule::{tile_schedule, TileSchedule};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::half16::Half;
use crate::oracle::{self, check_inner};
use crate::tensor::{pad_cols, pad_rows, MatHalf, Order};
use micro::{MicroFn, MicroOpts};

/// Anything that multiplies two binary16 matrices.
pub trait GemmKernel: Send + Sync {
    fn name(&self) -> String;
    fn run(&self, a: &MatHalf, b: &MatHalf) -> Result<MatHalf>;
}

/// The tiled engine bound to one configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TiledKernel {
    pub params: KernelParams,
}

impl TiledKernel {
    pub fn new(params: KernelParams) -> Result<TiledKernel> {
        params.validate()?;
        Ok(TiledKernel { params })
    }
}

impl GemmKernel for TiledKernel {
    fn name(&self) -> String {
        format!("tiled[{}]", self.params)
    }

    fn run(&self, a: &MatHalf, b: &MatHalf) -> Result<MatHalf> {
        run(a, b, &self.params)
    }
}

/// The naive triple loop as a kernel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NaiveKernel {
    pub acc: Accumulator,
}

impl GemmKernel for NaiveKernel {
    fn name(&self) -> String {
        format!("naive[{}]", self.acc)
    }

    fn run(&self, a: &MatHalf, b: &MatHalf) -> Result<MatHalf> {
        oracle::ref_f16_naive(a, b, self.acc)
    }
}

/// Adapts a closure into a kernel; handy for fixtures and wrappers.
pub struct FnKernel<F> {
    name: String,
    f: F,
}

impl<F> FnKernel<F>
where
    F: Fn(&MatHalf, &MatHalf) -> Result<MatHalf> + Send + Sync,
{
    pub fn new(name: impl Into<String>, f: F) -> FnKernel<F> {
        FnKernel {
            name: name.into(),
            f,
        }
    }
}

impl<F> GemmKernel for FnKernel<F>
where
    F: Fn(&MatHalf, &MatHalf) -> Result<MatHalf> + Send + Sync,
{
    fn name(&self) -> String {
        self.name.clone()
    }

    fn run(&self, a: &MatHalf, b: &MatHalf) -> Result<MatHalf> {
        (self.f)(a, b)
    }
}

/// Decoded operand with unit stride along k for A rows and for whichever
/// direction B is contiguous in.
struct Operand {
    order: Order,
    ld: usize,
    data: Vec<f32>,
}

impl Operand {
    fn decode(m: &MatHalf) -> Operand {
        Operand {
            order: m.order(),
            ld: m.leading_dim(),
            data: m.data().iter().map(|h| h.to_f32()).collect(),
        }
    }
}

/// Output buffer shared by tile workers. Each worker writes only the
/// rows and columns of the tiles it owns.
struct SharedOut {
    ptr: *mut Half,
    len: usize,
    ld: usize,
}

// SAFETY: the schedule is a permutation of the tile grid and tiles cover
// disjoint regions of C, so concurrent writers never alias.
unsafe impl Send for SharedOut {}
unsafe impl Sync for SharedOut {}

impl SharedOut {
    /// # Safety
    /// The caller must be the sole writer of `[row*ld + col, +len)`.
    #[allow(clippy::mut_from_ref)]
    unsafe fn row(&self, row: usize, col: usize, len: usize) -> &mut [Half] {
        let start = row * self.ld + col;
        assert!(start + len <= self.len);
        std::slice::from_raw_parts_mut(self.ptr.add(start), len)
    }
}

struct Scratch {
    a_panels: Vec<Vec<f32>>,
    b_panels: Vec<Vec<f32>>,
    acc: Vec<f32>,
    stage: Vec<Half>,
}

impl Scratch {
    fn new(p: &KernelParams, k: usize) -> Scratch {
        let bk = p.bk.min(k);
        Scratch {
            a_panels: (0..p.n_stage).map(|_| vec![0f32; p.bm * bk]).collect(),
            b_panels: (0..p.n_stage).map(|_| vec![0f32; bk * p.bn]).collect(),
            acc: vec![0f32; p.bm * p.bn],
            stage: if p.direct_epilogue {
                Vec::new()
            } else {
                vec![Half::ZERO; p.bm * p.bn]
            },
        }
    }
}

struct Job<'a> {
    p: &'a KernelParams,
    a: &'a Operand,
    b: &'a Operand,
    k: usize,
    micro: MicroFn,
    opts: MicroOpts,
    out: &'a SharedOut,
}

impl Job<'_> {
    /// Packs rows `[row0, row0+bm)` x k `[k0, k0+kc)` of A as `bm/mr`
    /// micro-panels of `kc x mr`.
    fn pack_a(&self, dst: &mut [f32], row0: usize, k0: usize, kc: usize) {
        let (mr, a) = (self.p.mr, self.a);
        for (ip, panel) in dst[..self.p.bm * kc].chunks_exact_mut(kc * mr).enumerate() {
            let r0 = row0 + ip * mr;
            for i in 0..mr {
                let src = &a.data[(r0 + i) * a.ld + k0..(r0 + i) * a.ld + k0 + kc];
                for (p, &v) in src.iter().enumerate() {
                    panel[p * mr + i] = v;
                }
            }
        }
    }

    /// Packs k `[k0, k0+kc)` x columns `[col0, col0+bn)` of B as `bn/nr`
    /// micro-panels of `kc x nr`.
    fn pack_b(&self, dst: &mut [f32], col0: usize, k0: usize, kc: usize) {
        let (nr, b) = (self.p.nr, self.b);
        for (jp, panel) in dst[..kc * self.p.bn].chunks_exact_mut(kc * nr).enumerate() {
            let c0 = col0 + jp * nr;
            match b.order {
                Order::RowMajor => {
                    for p in 0..kc {
                        let at = (k0 + p) * b.ld + c0;
                        panel[p * nr..p * nr + nr].copy_from_slice(&b.data[at..at + nr]);
                    }
                }
                Order::ColMajor => {
                    for j in 0..nr {
                        let src = &b.data[(c0 + j) * b.ld + k0..(c0 + j) * b.ld + k0 + kc];
                        for (p, &v) in src.iter().enumerate() {
                            panel[p * nr + j] = v;
                        }
                    }
                }
            }
        }
    }

    fn chunk(&self, c: usize) -> (usize, usize) {
        let k0 = c * self.p.bk;
        (k0, self.p.bk.min(self.k - k0))
    }

    fn tile(&self, s: &mut Scratch, ti: usize, tj: usize) {
        let p = self.p;
        let (row0, col0) = (ti * p.bm, tj * p.bn);
        let chunks = self.k.div_ceil(p.bk);
        let stages = p.n_stage;
        s.acc.fill(0.0);

        for c in 0..(stages - 1).min(chunks) {
            let (k0, kc) = self.chunk(c);
            self.pack_a(&mut s.a_panels[c % stages], row0, k0, kc);
            self.pack_b(&mut s.b_panels[c % stages], col0, k0, kc);
        }

        for c in 0..chunks {
            let ahead = c + stages - 1;
            if ahead < chunks {
                let (k0, kc) = self.chunk(ahead);
                self.pack_a(&mut s.a_panels[ahead % stages], row0, k0, kc);
                self.pack_b(&mut s.b_panels[ahead % stages], col0, k0, kc);
            }
            let (_, kc) = self.chunk(c);
            let pa = &s.a_panels[c % stages];
            let pb = &s.b_panels[c % stages];
            for jr in (0..p.bn).step_by(p.nr) {
                let pbj = &pb[(jr / p.nr) * kc * p.nr..][..kc * p.nr];
                for ir in (0..p.bm).step_by(p.mr) {
                    let pai = &pa[(ir / p.mr) * kc * p.mr..][..kc * p.mr];
                    let cslice = &mut s.acc[ir * p.bn + jr..];
                    (self.micro)(kc, pai, pbj, cslice, p.bn, self.opts);
                }
            }
        }

        self.epilogue(s, row0, col0);
    }

    fn epilogue(&self, s: &mut Scratch, row0: usize, col0: usize) {
        let p = self.p;
        if p.direct_epilogue {
            for r in 0..p.bm {
                // SAFETY: this worker owns tile rows row0.. and columns col0..col0+bn.
                let dst = unsafe { self.out.row(row0 + r, col0, p.bn) };
                for (d, &v) in dst.iter_mut().zip(&s.acc[r * p.bn..(r + 1) * p.bn]) {
                    *d = Half::from_f32(v);
                }
            }
        } else {
            for (d, &v) in s.stage.iter_mut().zip(&s.acc) {
                *d = Half::from_f32(v);
            }
            for r in 0..p.bm {
                // SAFETY: as above.
                let dst = unsafe { self.out.row(row0 + r, col0, p.bn) };
                dst.copy_from_slice(&s.stage[r * p.bn..(r + 1) * p.bn]);
            }
        }
    }
}

/// Multiplies `a` (M x K, row-major) by `b` (K x N, either order) with the
/// given configuration.
///
/// When `pad_enable` is set and a tile extent does not divide M (or N), the
/// operand is zero-padded up to a multiple and the result is truncated back.
pub fn run(a: &MatHalf, b: &MatHalf, params: &KernelParams) -> Result<MatHalf> {
    check_inner(a, b)?;
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    params.validate_for(m, n)?;
    if m == 0 || n == 0 || k == 0 {
        return Err(Error::DimMismatch("empty operand".into()));
    }
    let micro = micro::select(params.mr, params.nr, params.acc)
        .ok_or_else(|| Error::InvalidParams(format!("no micro-kernel for {}x{}", params.mr, params.nr)))?;

    let a = a.to_order(Order::RowMajor);
    let a_p = pad_rows(&a, params.bm)?;
    let b_p = pad_cols(b, params.bn)?;
    let (mp, np) = (a_p.rows(), b_p.cols());

    let ad = Operand::decode(&a_p);
    let bd = Operand::decode(&b_p);
    let mut c = vec![Half::ZERO; mp * np];
    let out = SharedOut {
        ptr: c.as_mut_ptr(),
        len: c.len(),
        ld: np,
    };

    let grid_m = mp / params.bm;
    let grid_n = np / params.bn;
    let schedule = tile_schedule(grid_m, grid_n, params.swizzle_stride);

    let job = Job {
        p: params,
        a: &ad,
        b: &bd,
        k,
        micro,
        opts: MicroOpts {
            double_buffer: params.double_buffer,
            staggered_ab: params.staggered_ab,
            prefetch_distance: params.prefetch_distance,
        },
        out: &out,
    };

    // Each worker walks one contiguous stretch of the schedule in order.
    let workers = rayon::current_num_threads().max(1);
    let per_worker = schedule.len().div_ceil(workers).max(1);
    schedule.tiles().par_chunks(per_worker).for_each(|seg| {
        let mut scratch = Scratch::new(params, k);
        for &(ti, tj) in seg {
            job.tile(&mut scratch, ti, tj);
        }
    });
    drop(out);

    let full = MatHalf::from_vec(mp, np, Order::RowMajor, np, c)?;
    if mp == m && np == n {
        Ok(full)
    } else {
        full.truncate(m, n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::ref_f16_naive;
    use crate::tensor::{gen_binary, gen_uniform};

    fn params(bm: usize, bn: usize, bk: usize, mr: usize, nr: usize, acc: Accumulator) -> KernelParams {
        KernelParams {
            bm,
            bn,
            bk,
            mr,
            nr,
            n_stage: 1,
            prefetch_distance: 1,
            swizzle_stride: None,
            double_buffer: false,
            staggered_ab: false,
            direct_epilogue: true,
            acc,
            pad_enable: false,
        }
    }

    #[test]
    fn identity_times_b() {
        let b = gen_uniform(4, 4, -2.0, 2.0, 3).unwrap();
        let c = run(&MatHalf::identity(4), &b, &params(4, 4, 4, 2, 2, Accumulator::F32)).unwrap();
        assert!(c.bit_eq(&b));
    }

    #[test]
    fn all_toggles_on_binary_8x8x8() {
        let a = gen_binary(8, 8, 0.5, 1).unwrap();
        let b = gen_binary(8, 8, 0.5, 2).unwrap();
        for acc in [Accumulator::F16, Accumulator::F32] {
            let want = ref_f16_naive(&a, &b, acc).unwrap();
            for mask in 0..16u32 {
                let p = KernelParams {
                    double_buffer: mask & 1 != 0,
                    staggered_ab: mask & 2 != 0,
                    direct_epilogue: mask & 4 != 0,
                    pad_enable: mask & 8 != 0,
                    ..params(4, 4, 3, 2, 4, acc)
                };
                assert!(run(&a, &b, &p).unwrap().bit_eq(&want), "{p}");
            }
        }
    }

    #[test]
    fn uniform_inputs_match_naive_in_both_layouts() {
        let a = gen_uniform(24, 70, -1.0, 1.0, 4).unwrap();
        let b_row = gen_uniform(70, 40, -1.0, 1.0, 5).unwrap();
        let b_col = b_row.to_order(Order::ColMajor);
        for acc in [Accumulator::F16, Accumulator::F32] {
            let want = ref_f16_naive(&a, &b_row, acc).unwrap();
            for (n_stage, bk, swz) in [(1, 16, None), (3, 8, Some(1)), (4, 70, Some(2)), (2, 100, None)] {
                let p = KernelParams {
                    n_stage,
                    bk,
                    swizzle_stride: swz,
                    prefetch_distance: 3,
                    ..params(8, 8, bk, 4, 4, acc)
                };
                assert!(run(&a, &b_row, &p).unwrap().bit_eq(&want));
                assert!(run(&a, &b_col, &p).unwrap().bit_eq(&want));
            }
        }
    }

    #[test]
    fn padding_matches_divisible_tiling() {
        let a = gen_uniform(50, 33, -1.0, 1.0, 6).unwrap();
        let b = gen_uniform(33, 20, -1.0, 1.0, 7).unwrap();
        let want = ref_f16_naive(&a, &b, Accumulator::F32).unwrap();
        let p = KernelParams {
            pad_enable: true,
            ..params(16, 8, 8, 4, 8, Accumulator::F32)
        };
        let c = run(&a, &b, &p).unwrap();
        assert_eq!((c.rows(), c.cols()), (50, 20));
        assert!(c.bit_eq(&want));
        let nopad = KernelParams { pad_enable: false, ..p };
        assert!(matches!(run(&a, &b, &nopad), Err(Error::InvalidParams(_))));
    }

    #[test]
    fn rejects_mismatched_operands() {
        let a = MatHalf::zeros(4, 5, Order::RowMajor);
        let b = MatHalf::zeros(4, 4, Order::RowMajor);
        let p = params(4, 4, 4, 2, 2, Accumulator::F32);
        assert!(matches!(run(&a, &b, &p), Err(Error::DimMismatch(_))));
    }

    #[test]
    fn thread_count_does_not_change_bits() {
        let a = gen_uniform(64, 96, -1.0, 1.0, 8).unwrap();
        let b = gen_uniform(96, 64, -1.0, 1.0, 9).unwrap();
        let p = KernelParams {
            swizzle_stride: Some(2),
            ..params(16, 16, 32, 4, 8, Accumulator::F16)
        };
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let multi = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let c1 = single.install(|| run(&a, &b, &p)).unwrap();
        let c4 = multi.install(|| run(&a, &b, &p)).unwrap();
        assert_eq!(c1, c4);
    }

    #[test]
    fn kernel_handle_moves_across_threads() {
        let kernel = TiledKernel::new(params(8, 8, 8, 4, 4, Accumulator::F32)).unwrap();
        let a = gen_uniform(16, 8, -1.0, 1.0, 1).unwrap();
        let b = gen_uniform(8, 16, -1.0, 1.0, 2).unwrap();
        let here = kernel.run(&a, &b).unwrap();
        let there = std::thread::spawn(move || kernel.run(&a, &b).unwrap()).join().unwrap();
        assert_eq!(here, there);
    }
}
