//! Register-blocked micro-kernels over packed panels.
//!
//! A micro-kernel updates an `MR x NR` block of the tile accumulator with
//! `kc` rank-1 steps. Packed A holds `kc` columns of `MR` values, packed B
//! holds `kc` rows of `NR` values. Every variant applies the steps in
//! ascending k, one element at a time, so results never depend on which
//! variant ran.

use crate::half16;
use crate::kernel::Accumulator;

/// Per-element update rule.
pub(crate) trait Step {
    fn step(acc: f32, a: f32, b: f32) -> f32;
}

pub(crate) struct StepF32;
pub(crate) struct StepF16;

impl Step for StepF32 {
    #[inline(always)]
    fn step(acc: f32, a: f32, b: f32) -> f32 {
        acc + a * b
    }
}

impl Step for StepF16 {
    #[inline(always)]
    fn step(acc: f32, a: f32, b: f32) -> f32 {
        half16::mul_add_step(acc, a, b)
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct MicroOpts {
    pub double_buffer: bool,
    pub staggered_ab: bool,
    pub prefetch_distance: usize,
}

pub(crate) type MicroFn = fn(usize, &[f32], &[f32], &mut [f32], usize, MicroOpts);

#[inline(always)]
fn prefetch(slice: &[f32], idx: usize) {
    if idx < slice.len() {
        #[cfg(target_arch = "x86_64")]
        // SAFETY: prefetch is a hint and never dereferences; the index is in bounds anyway.
        #[allow(unused_unsafe)]
        unsafe {
            use std::arch::x86_64::{_mm_prefetch, _MM_HINT_T0};
            _mm_prefetch::<_MM_HINT_T0>(slice.as_ptr().add(idx) as *const i8);
        }
    }
}

#[inline(always)]
fn load<const L: usize>(src: &[f32], at: usize) -> [f32; L] {
    let mut f = [0f32; L];
    f.copy_from_slice(&src[at..at + L]);
    f
}

#[inline(always)]
fn update<const MR: usize, const NR: usize, S: Step>(
    acc: &mut [[f32; NR]; MR],
    fa: &[f32; MR],
    fb: &[f32; NR],
) {
    for i in 0..MR {
        let a = fa[i];
        for j in 0..NR {
            acc[i][j] = S::step(acc[i][j], a, fb[j]);
        }
    }
}

fn micro<const MR: usize, const NR: usize, S: Step>(
    kc: usize,
    pa: &[f32],
    pb: &[f32],
    c: &mut [f32],
    ldc: usize,
    opts: MicroOpts,
) {
    let mut acc = [[0f32; NR]; MR];
    for i in 0..MR {
        acc[i].copy_from_slice(&c[i * ldc..i * ldc + NR]);
    }
    let dist = opts.prefetch_distance;

    if opts.double_buffer {
        let mut fa = [[0f32; MR]; 2];
        let mut fb = [[0f32; NR]; 2];
        if kc > 0 {
            fa[0] = load::<MR>(pa, 0);
            fb[0] = load::<NR>(pb, 0);
        }
        for p in 0..kc {
            let cur = p & 1;
            let nxt = cur ^ 1;
            prefetch(pa, (p + dist) * MR);
            prefetch(pb, (p + dist) * NR);
            let more = p + 1 < kc;
            if opts.staggered_ab {
                if more {
                    fa[nxt] = load::<MR>(pa, (p + 1) * MR);
                }
                update::<MR, NR, S>(&mut acc, &fa[cur], &fb[cur]);
                if more {
                    fb[nxt] = load::<NR>(pb, (p + 1) * NR);
                }
            } else {
                if more {
                    fa[nxt] = load::<MR>(pa, (p + 1) * MR);
                    fb[nxt] = load::<NR>(pb, (p + 1) * NR);
                }
                update::<MR, NR, S>(&mut acc, &fa[cur], &fb[cur]);
            }
        }
    } else if opts.staggered_ab {
        // Single fragment for A; B is read from the packed panel inside the update.
        for p in 0..kc {
            prefetch(pa, (p + dist) * MR);
            let fa = load::<MR>(pa, p * MR);
            prefetch(pb, (p + dist) * NR);
            let row = &pb[p * NR..p * NR + NR];
            for i in 0..MR {
                let a = fa[i];
                for j in 0..NR {
                    acc[i][j] = S::step(acc[i][j], a, row[j]);
                }
            }
        }
    } else {
        for p in 0..kc {
            prefetch(pa, (p + dist) * MR);
            prefetch(pb, (p + dist) * NR);
            let fa = load::<MR>(pa, p * MR);
            let fb = load::<NR>(pb, p * NR);
            update::<MR, NR, S>(&mut acc, &fa, &fb);
        }
    }

    for i in 0..MR {
        c[i * ldc..i * ldc + NR].copy_from_slice(&acc[i]);
    }
}

macro_rules! select_nr {
    ($mr:literal, $nr:expr, $s:ty) => {
        match $nr {
            1 => Some(micro::<$mr, 1, $s> as MicroFn),
            2 => Some(micro::<$mr, 2, $s> as MicroFn),
            4 => Some(micro::<$mr, 4, $s> as MicroFn),
            8 => Some(micro::<$mr, 8, $s> as MicroFn),
            16 => Some(micro::<$mr, 16, $s> as MicroFn),
            _ => None,
        }
    };
}

fn select_for<S: Step>(mr: usize, nr: usize) -> Option<MicroFn> {
    match mr {
        1 => select_nr!(1, nr, S),
        2 => select_nr!(2, nr, S),
        4 => select_nr!(4, nr, S),
        8 => select_nr!(8, nr, S),
        _ => None,
    }
}

/// Compiled micro-kernel for the given shape and accumulator, if any.
pub(crate) fn select(mr: usize, nr: usize, acc: Accumulator) -> Option<MicroFn> {
    match acc {
        Accumulator::F32 => select_for::<StepF32>(mr, nr),
        Accumulator::F16 => select_for::<StepF16>(mr, nr),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::params::{SUPPORTED_MR, SUPPORTED_NR};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn reference<S: Step>(mr: usize, nr: usize, kc: usize, pa: &[f32], pb: &[f32], c: &mut [f32], ldc: usize) {
        for i in 0..mr {
            for j in 0..nr {
                let mut s = c[i * ldc + j];
                for p in 0..kc {
                    s = S::step(s, pa[p * mr + i], pb[p * nr + j]);
                }
                c[i * ldc + j] = s;
            }
        }
    }

    #[test]
    fn every_variant_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for acc in [Accumulator::F16, Accumulator::F32] {
            for &mr in &SUPPORTED_MR {
                for &nr in &SUPPORTED_NR {
                    let f = select(mr, nr, acc).unwrap();
                    for kc in [1usize, 2, 7] {
                        let pa: Vec<f32> = (0..kc * mr)
                            .map(|_| half16::Half::from_f64(rng.gen_range(-1.0..1.0)).to_f32())
                            .collect();
                        let pb: Vec<f32> = (0..kc * nr)
                            .map(|_| half16::Half::from_f64(rng.gen_range(-1.0..1.0)).to_f32())
                            .collect();
                        let ldc = nr + 3;
                        let c0: Vec<f32> = (0..mr * ldc)
                            .map(|_| half16::Half::from_f64(rng.gen_range(-1.0..1.0)).to_f32())
                            .collect();
                        let mut want = c0.clone();
                        match acc {
                            Accumulator::F32 => reference::<StepF32>(mr, nr, kc, &pa, &pb, &mut want, ldc),
                            Accumulator::F16 => reference::<StepF16>(mr, nr, kc, &pa, &pb, &mut want, ldc),
                        }
                        for db in [false, true] {
                            for st in [false, true] {
                                for pd in [1, 4] {
                                    let mut c = c0.clone();
                                    let opts = MicroOpts {
                                        double_buffer: db,
                                        staggered_ab: st,
                                        prefetch_distance: pd,
                                    };
                                    f(kc, &pa, &pb, &mut c, ldc, opts);
                                    let same = c.iter().zip(&want).all(|(x, y)| x.to_bits() == y.to_bits());
                                    assert!(same, "mr={mr} nr={nr} kc={kc} {opts:?} {acc}");
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn unsupported_shapes_have_no_kernel() {
        assert!(select(3, 4, Accumulator::F32).is_none());
        assert!(select(4, 32, Accumulator::F16).is_none());
    }
}
