//! Index arithmetic for the `[12][13][13]` and `[12][13][13][5]` arrays
//! shared by BT, SP and LU.

/// `grid_points[0..3]` for class S: loops run over `0..GRID`.
pub(crate) const GRID: usize = 12;
pub(crate) const NK: usize = 12;
pub(crate) const NJ: usize = 13;
pub(crate) const NI: usize = 13;
pub(crate) const NCOMP: usize = 5;

pub(crate) const CELLS: usize = NK * NJ * NI;

#[inline]
pub(crate) fn idx3(k: usize, j: usize, i: usize) -> usize {
    (k * NJ + j) * NI + i
}

#[inline]
pub(crate) fn idx4(k: usize, j: usize, i: usize, m: usize) -> usize {
    idx3(k, j, i) * NCOMP + m
}

/// All `(k, j, i)` with every coordinate in `lo..hi`.
pub(crate) fn cube(lo: usize, hi: usize) -> impl Iterator<Item = (usize, usize, usize)> {
    (lo..hi).flat_map(move |k| (lo..hi).flat_map(move |j| (lo..hi).map(move |i| (k, j, i))))
}

/// Points the error norm visits: `0..GRID` on each axis.
pub(crate) fn norm_box() -> impl Iterator<Item = (usize, usize, usize)> {
    cube(0, GRID)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indices_are_row_major() {
        assert_eq!(idx4(0, 0, 0, 1), 1);
        assert_eq!(idx4(0, 0, 1, 0), 5);
        assert_eq!(idx4(0, 1, 0, 0), 65);
        assert_eq!(idx4(1, 0, 0, 0), 845);
        assert_eq!(idx4(NK - 1, NJ - 1, NI - 1, NCOMP - 1), CELLS * NCOMP - 1);
    }

    #[test]
    fn norm_box_size() {
        assert_eq!(norm_box().count(), 1728);
    }
}
