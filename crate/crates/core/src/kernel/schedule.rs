use serde::{Deserialize, Serialize};

/// Order in which output block tiles are processed, as (block row, block col).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileSchedule(pub Vec<(usize, usize)>);

impl TileSchedule {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn tiles(&self) -> &[(usize, usize)] {
        &self.0
    }

    /// True when the schedule visits every tile of the grid exactly once.
    pub fn is_permutation_of(&self, grid_m: usize, grid_n: usize) -> bool {
        if self.0.len() != grid_m * grid_n {
            return false;
        }
        let mut seen = vec![false; grid_m * grid_n];
        for &(i, j) in &self.0 {
            if i >= grid_m || j >= grid_n || std::mem::replace(&mut seen[i * grid_n + j], true) {
                return false;
            }
        }
        true
    }
}

/// Block traversal order.
///
/// Without a stride, tiles go in row-major order. With a stride `s`, the
/// columns are cut into bands `s` tiles wide; bands are visited left to
/// right and each band is walked row by row, so consecutive tiles share
/// the same few B panels and neighbouring A panels.
pub fn tile_schedule(grid_m: usize, grid_n: usize, swizzle_stride: Option<usize>) -> TileSchedule {
    let mut out = Vec::with_capacity(grid_m * grid_n);
    match swizzle_stride {
        None => {
            for i in 0..grid_m {
                for j in 0..grid_n {
                    out.push((i, j));
                }
            }
        }
        Some(stride) => {
            let stride = stride.max(1);
            let mut band = 0;
            while band < grid_n {
                let end = (band + stride).min(grid_n);
                for i in 0..grid_m {
                    for j in band..end {
                        out.push((i, j));
                    }
                }
                band = end;
            }
        }
    }
    TileSchedule(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        for s in [None, Some(1), Some(3)] {
            assert_eq!(tile_schedule(1, 1, s).0, vec![(0, 0)]);
        }
        assert_eq!(
            tile_schedule(2, 3, None).0,
            vec![(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2)]
        );
        assert_eq!(
            tile_schedule(2, 3, Some(2)).0,
            vec![(0, 0), (0, 1), (1, 0), (1, 1), (0, 2), (1, 2)]
        );
    }

    #[test]
    fn swizzled_8x8_sorted_equals_full_index_set() {
        let mut got = tile_schedule(8, 8, Some(2)).0;
        got.sort_unstable();
        let want: Vec<_> = (0..8).flat_map(|i| (0..8).map(move |j| (i, j))).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn always_a_permutation() {
        for gm in 1..12 {
            for gn in 1..12 {
                for s in std::iter::once(None).chain((1..14).map(Some)) {
                    assert!(tile_schedule(gm, gn, s).is_permutation_of(gm, gn));
                }
            }
        }
    }

    #[test]
    fn permutation_check_catches_duplicates() {
        assert!(!TileSchedule(vec![(0, 0), (0, 0)]).is_permutation_of(1, 2));
        assert!(!TileSchedule(vec![(0, 0)]).is_permutation_of(1, 2));
        assert!(!TileSchedule(vec![(0, 0), (0, 5)]).is_permutation_of(1, 2));
    }
}
