use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Precision of the running dot-product accumulator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Accumulator {
    /// Every product and partial sum rounded to binary16.
    F16,
    /// `f32` running sum, rounded to binary16 once in the epilogue.
    F32,
}

impl fmt::Display for Accumulator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Accumulator::F16 => "f16",
            Accumulator::F32 => "f32",
        })
    }
}

impl FromStr for Accumulator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "f16" => Ok(Accumulator::F16),
            "f32" => Ok(Accumulator::F32),
            other => Err(Error::Parse(format!("unknown accumulator `{other}`"))),
        }
    }
}

/// Micro-tile row counts with a compiled micro-kernel.
pub const SUPPORTED_MR: [usize; 4] = [1, 2, 4, 8];
/// Micro-tile column counts with a compiled micro-kernel.
pub const SUPPORTED_NR: [usize; 5] = [1, 2, 4, 8, 16];

/// Full tunable configuration of the tiled kernel.
///
/// None of these fields changes the numerical result for a fixed
/// `acc`; they only change data movement and traversal order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct KernelParams {
    /// Output block-tile rows.
    pub bm: usize,
    /// Output block-tile columns.
    pub bn: usize,
    /// Depth of one packed k-panel.
    pub bk: usize,
    /// Micro-tile rows held in the accumulator fragment.
    pub mr: usize,
    /// Micro-tile columns held in the accumulator fragment.
    pub nr: usize,
    /// Packed panel buffers cycled round-robin; 1 packs each panel just in time.
    pub n_stage: usize,
    /// How many k-steps ahead the micro-kernel issues prefetch hints.
    pub prefetch_distance: usize,
    /// Width in tiles of the column bands the block schedule walks; `None`
    /// is plain row-major block order.
    pub swizzle_stride: Option<usize>,
    /// Ping-pong between two operand fragments inside the micro-kernel.
    pub double_buffer: bool,
    /// Load the next A fragment before the update and the next B fragment after it.
    pub staggered_ab: bool,
    /// Write finished tiles straight to C instead of through a staging buffer.
    pub direct_epilogue: bool,
    pub acc: Accumulator,
    /// Zero-pad M (and N) up to a tile multiple instead of rejecting the problem.
    pub pad_enable: bool,
}

impl KernelParams {
    /// Plain reference configuration used for the baseline family.
    pub fn canonical(acc: Accumulator) -> KernelParams {
        KernelParams {
            bm: 64,
            bn: 64,
            bk: 64,
            mr: 4,
            nr: 8,
            n_stage: 2,
            prefetch_distance: 1,
            swizzle_stride: None,
            double_buffer: false,
            staggered_ab: false,
            direct_epilogue: true,
            acc,
            pad_enable: true,
        }
    }

    /// Problem-independent invariants.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        if self.bm == 0 || self.bn == 0 || self.bk == 0 {
            return bad(format!("tile extents must be >= 1: {self}"));
        }
        if !SUPPORTED_MR.contains(&self.mr) || !SUPPORTED_NR.contains(&self.nr) {
            return bad(format!(
                "micro-tile {}x{} not supported (mr in {:?}, nr in {:?})",
                self.mr, self.nr, SUPPORTED_MR, SUPPORTED_NR
            ));
        }
        if self.bm % self.mr != 0 || self.bn % self.nr != 0 {
            return bad(format!(
                "micro-tile {}x{} must divide block tile {}x{}",
                self.mr, self.nr, self.bm, self.bn
            ));
        }
        if self.n_stage == 0 || self.prefetch_distance == 0 {
            return bad("n_stage and prefetch_distance must be >= 1".into());
        }
        if self.swizzle_stride == Some(0) {
            return bad("swizzle_stride must be >= 1 when present".into());
        }
        Ok(())
    }

    /// Invariants that depend on the problem shape.
    pub fn validate_for(&self, m: usize, n: usize) -> Result<()> {
        self.validate()?;
        if !self.pad_enable && (m % self.bm != 0 || n % self.bn != 0) {
            return Err(Error::InvalidParams(format!(
                "tile {}x{} does not divide {m}x{n} and padding is disabled",
                self.bm, self.bn
            )));
        }
        Ok(())
    }

    /// Canonical key-value text; its byte length is the descriptor length.
    pub fn descriptor(&self) -> String {
        self.to_string()
    }

    pub fn descriptor_len(&self) -> usize {
        self.descriptor().len()
    }
}

const KEYS: [&str; 13] = [
    "bm",
    "bn",
    "bk",
    "mr",
    "nr",
    "n_stage",
    "prefetch_distance",
    "swizzle_stride",
    "double_buffer",
    "staggered_ab",
    "direct_epilogue",
    "acc",
    "pad_enable",
];

impl fmt::Display for KernelParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let swz = match self.swizzle_stride {
            Some(s) => s.to_string(),
            None => "none".to_string(),
        };
        write!(
            f,
            "bm={} bn={} bk={} mr={} nr={} n_stage={} prefetch_distance={} swizzle_stride={} \
             double_buffer={} staggered_ab={} direct_epilogue={} acc={} pad_enable={}",
            self.bm,
            self.bn,
            self.bk,
            self.mr,
            self.nr,
            self.n_stage,
            self.prefetch_distance,
            swz,
            self.double_buffer,
            self.staggered_ab,
            self.direct_epilogue,
            self.acc,
            self.pad_enable
        )
    }
}

impl FromStr for KernelParams {
    type Err = Error;

    /// Parses the canonical text. Every key must appear exactly once; order is free.
    fn from_str(s: &str) -> Result<Self> {
        let mut vals: [Option<&str>; 13] = [None; 13];
        for tok in s.split_whitespace() {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("expected key=value, got `{tok}`")))?;
            let idx = KEYS
                .iter()
                .position(|&key| key == k)
                .ok_or_else(|| Error::Parse(format!("unknown parameter `{k}`")))?;
            if vals[idx].replace(v).is_some() {
                return Err(Error::Parse(format!("duplicate parameter `{k}`")));
            }
        }
        let get = |i: usize| vals[i].ok_or_else(|| Error::Parse(format!("missing `{}`", KEYS[i])));
        let num = |i: usize| -> Result<usize> {
            get(i)?
                .parse()
                .map_err(|e| Error::Parse(format!("{}: {e}", KEYS[i])))
        };
        let flag = |i: usize| -> Result<bool> {
            get(i)?
                .parse()
                .map_err(|e| Error::Parse(format!("{}: {e}", KEYS[i])))
        };
        let swizzle_stride = match get(7)? {
            "none" => None,
            v => Some(v.parse().map_err(|e| Error::Parse(format!("swizzle_stride: {e}")))?),
        };
        let p = KernelParams {
            bm: num(0)?,
            bn: num(1)?,
            bk: num(2)?,
            mr: num(3)?,
            nr: num(4)?,
            n_stage: num(5)?,
            prefetch_distance: num(6)?,
            swizzle_stride,
            double_buffer: flag(8)?,
            staggered_ab: flag(9)?,
            direct_epilogue: flag(10)?,
            acc: get(11)?.parse()?,
            pad_enable: flag(12)?,
        };
        p.validate()?;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_text_is_stable() {
        let p = KernelParams::canonical(Accumulator::F32);
        assert_eq!(
            p.descriptor(),
            "bm=64 bn=64 bk=64 mr=4 nr=8 n_stage=2 prefetch_distance=1 swizzle_stride=none \
             double_buffer=false staggered_ab=false direct_epilogue=true acc=f32 pad_enable=true"
        );
        assert_eq!(p.descriptor_len(), p.descriptor().len());
        assert_eq!(p.descriptor().parse::<KernelParams>().unwrap(), p);
    }

    #[test]
    fn parse_rejects_bad_text() {
        let good = KernelParams::canonical(Accumulator::F16).descriptor();
        assert!(good.replace("bm=64 ", "").parse::<KernelParams>().is_err());
        assert!(format!("{good} bm=64").parse::<KernelParams>().is_err());
        assert!(format!("{good} foo=1").parse::<KernelParams>().is_err());
        assert!(good.replace("mr=4", "mr=3").parse::<KernelParams>().is_err());
        let swz = good.replace("swizzle_stride=none", "swizzle_stride=4");
        assert_eq!(swz.parse::<KernelParams>().unwrap().swizzle_stride, Some(4));
    }

    #[test]
    fn invariants() {
        let base = KernelParams::canonical(Accumulator::F32);
        assert!(base.validate().is_ok());
        assert!(KernelParams { mr: 8, bm: 12, ..base }.validate().is_err());
        assert!(KernelParams { nr: 16, bn: 24, ..base }.validate().is_err());
        assert!(KernelParams { bk: 0, ..base }.validate().is_err());
        assert!(KernelParams { n_stage: 0, ..base }.validate().is_err());
        assert!(KernelParams { prefetch_distance: 0, ..base }.validate().is_err());
        assert!(KernelParams { swizzle_stride: Some(0), ..base }.validate().is_err());
        let nopad = KernelParams { pad_enable: false, ..base };
        assert!(nopad.validate_for(128, 64).is_ok());
        assert!(nopad.validate_for(100, 64).is_err());
        assert!(base.validate_for(100, 70).is_ok());
    }
}
