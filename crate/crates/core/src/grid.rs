//! BEV grid and kernel layout.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point3;

/// Uniform BEV grid on the plane `z = height_z` of the ego frame.
///
/// Columns run along x, rows along y.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BevGridSpec {
    pub rows: usize,
    pub cols: usize,
    /// (x_min, x_max, y_min, y_max) in meters.
    pub extent: [f64; 4],
    pub height_z: f64,
}

impl BevGridSpec {
    pub fn new(rows: usize, cols: usize, extent: [f64; 4], height_z: f64) -> Result<Self> {
        let g = BevGridSpec {
            rows,
            cols,
            extent,
            height_z,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::invalid(
                "grid",
                format!(
                    "rows and cols must be positive, got {}x{}",
                    self.rows, self.cols
                ),
            ));
        }
        let [x0, x1, y0, y1] = self.extent;
        if !(self.extent.iter().all(|v| v.is_finite()) && self.height_z.is_finite()) {
            return Err(Error::invalid("grid", "extent and height must be finite"));
        }
        if x1 <= x0 || y1 <= y0 {
            return Err(Error::invalid(
                "grid",
                format!(
                    "extent must satisfy x_max > x_min and y_max > y_min, got {:?}",
                    self.extent
                ),
            ));
        }
        Ok(())
    }

    pub fn num_cells(&self) -> usize {
        self.rows * self.cols
    }

    pub fn cell_size(&self) -> (f64, f64) {
        let [x0, x1, y0, y1] = self.extent;
        ((x1 - x0) / self.cols as f64, (y1 - y0) / self.rows as f64)
    }

    pub fn with_height(&self, height_z: f64) -> Self {
        BevGridSpec { height_z, ..*self }
    }

    /// Center of cell (row, col).
    pub fn cell_center(&self, row: usize, col: usize) -> Result<Point3> {
        if row >= self.rows {
            return Err(Error::OutOfRange {
                what: "grid row",
                index: row,
                len: self.rows,
            });
        }
        if col >= self.cols {
            return Err(Error::OutOfRange {
                what: "grid col",
                index: col,
                len: self.cols,
            });
        }
        Ok(self.center_unchecked(row, col))
    }

    pub(crate) fn center_unchecked(&self, row: usize, col: usize) -> Point3 {
        let [x0, x1, y0, y1] = self.extent;
        let x = x0 + (col as f64 + 0.5) * (x1 - x0) / self.cols as f64;
        let y = y0 + (row as f64 + 0.5) * (y1 - y0) / self.rows as f64;
        [x, y, self.height_z]
    }

    /// Center of the query with row-major index `query`.
    pub fn query_center(&self, query: usize) -> Result<Point3> {
        if query >= self.num_cells() {
            return Err(Error::OutOfRange {
                what: "query",
                index: query,
                len: self.num_cells(),
            });
        }
        Ok(self.center_unchecked(query / self.cols, query % self.cols))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelLayout {
    Full,
    Cross,
    Dilated,
}

/// Kernel region around a prior pixel. `k_h` spans feature-map rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KernelSpec {
    pub k_h: usize,
    pub k_w: usize,
    pub layout: KernelLayout,
    #[serde(default = "one")]
    pub dilation: usize,
}

fn one() -> usize {
    1
}

impl KernelSpec {
    pub fn full(k_h: usize, k_w: usize) -> Result<Self> {
        Self::new(k_h, k_w, KernelLayout::Full, 1)
    }

    pub fn cross(k_h: usize, k_w: usize) -> Result<Self> {
        Self::new(k_h, k_w, KernelLayout::Cross, 1)
    }

    pub fn dilated(k_h: usize, k_w: usize, dilation: usize) -> Result<Self> {
        Self::new(k_h, k_w, KernelLayout::Dilated, dilation)
    }

    pub fn new(k_h: usize, k_w: usize, layout: KernelLayout, dilation: usize) -> Result<Self> {
        let k = KernelSpec {
            k_h,
            k_w,
            layout,
            dilation,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_h == 0
            || self.k_w == 0
            || self.k_h.is_multiple_of(2)
            || self.k_w.is_multiple_of(2)
        {
            return Err(Error::invalid(
                "kernel",
                format!(
                    "extents must be odd and >= 1, got {}x{}",
                    self.k_h, self.k_w
                ),
            ));
        }
        if self.dilation == 0 {
            return Err(Error::invalid("kernel", "dilation must be >= 1"));
        }
        Ok(())
    }

    fn step(&self) -> i64 {
        match self.layout {
            KernelLayout::Dilated => self.dilation as i64,
            _ => 1,
        }
    }

    /// Largest |d_row| and |d_col| reached by the layout.
    pub fn reach(&self) -> (i64, i64) {
        let s = self.step();
        ((self.k_h / 2) as i64 * s, (self.k_w / 2) as i64 * s)
    }

    pub fn positions(&self) -> usize {
        match self.layout {
            KernelLayout::Cross => self.k_h + self.k_w - 1,
            _ => self.k_h * self.k_w,
        }
    }

    /// Offsets (d_row, d_col) in deterministic order: row-major for full and
    /// dilated, vertical arm then horizontal arm for cross.
    pub fn offsets(&self) -> Vec<(i64, i64)> {
        let s = self.step();
        let hh = (self.k_h / 2) as i64;
        let hw = (self.k_w / 2) as i64;
        match self.layout {
            KernelLayout::Full | KernelLayout::Dilated => (-hh..=hh)
                .flat_map(|r| (-hw..=hw).map(move |c| (r * s, c * s)))
                .collect(),
            KernelLayout::Cross => {
                let vertical = (-hh..=hh).map(|r| (r, 0));
                let horizontal = (-hw..=hw).filter(|&c| c != 0).map(|c| (0, c));
                vertical.chain(horizontal).collect()
            }
        }
    }

    /// Whether the layout contains the offset `(d_row, d_col)`.
    pub fn contains(&self, d_row: i64, d_col: i64) -> bool {
        let s = self.step();
        let (rh, rw) = self.reach();
        if d_row.abs() > rh || d_col.abs() > rw || d_row % s != 0 || d_col % s != 0 {
            return false;
        }
        match self.layout {
            KernelLayout::Cross => d_row == 0 || d_col == 0,
            _ => true,
        }
    }
}

pub fn kernel_offsets(spec: &KernelSpec) -> Vec<(i64, i64)> {
    spec.offsets()
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.layout {
            KernelLayout::Full => write!(f, "{}x{}", self.k_h, self.k_w),
            KernelLayout::Cross => write!(f, "cross-{}x{}", self.k_h, self.k_w),
            KernelLayout::Dilated => write!(f, "{}x{}-d{}", self.k_h, self.k_w, self.dilation),
        }
    }
}

/// Parses `7x3`, `cross-3x3` or `3x3-d2`.
impl FromStr for KernelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            Error::invalid(
                "kernel",
                format!("cannot parse {s:?}; expected e.g. 7x3, cross-3x3, 3x3-d2"),
            )
        };
        let (cross, rest) = match s.strip_prefix("cross-") {
            Some(r) => (true, r),
            None => (false, s),
        };
        let (dims, dilation) = match rest.split_once("-d") {
            Some((d, dil)) => (d, Some(dil.parse::<usize>().map_err(|_| bad())?)),
            None => (rest, None),
        };
        let (h, w) = dims.split_once('x').ok_or_else(bad)?;
        let k_h = h.parse().map_err(|_| bad())?;
        let k_w = w.parse().map_err(|_| bad())?;
        match (cross, dilation) {
            (true, Some(_)) => Err(bad()),
            (true, None) => Self::cross(k_h, k_w),
            (false, Some(d)) => Self::dilated(k_h, k_w, d),
            (false, None) => Self::full(k_h, k_w),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_center_examples() {
        let g = BevGridSpec::new(1, 1, [-1.0, 1.0, -1.0, 1.0], 0.0).unwrap();
        assert_eq!(g.cell_center(0, 0).unwrap(), [0.0, 0.0, 0.0]);
        let g = BevGridSpec::new(2, 2, [0.0, 2.0, 0.0, 2.0], 1.0).unwrap();
        assert_eq!(g.cell_center(0, 0).unwrap(), [0.5, 0.5, 1.0]);
        let g = BevGridSpec::new(25, 25, [-50.0, 50.0, -50.0, 50.0], 0.0).unwrap();
        assert_eq!(g.cell_size(), (4.0, 4.0));
        assert!(g.cell_center(25, 0).is_err());
        assert!(g.cell_center(0, 25).is_err());
    }

    #[test]
    fn grid_invariants() {
        assert!(BevGridSpec::new(0, 1, [0.0, 1.0, 0.0, 1.0], 0.0).is_err());
        assert!(BevGridSpec::new(1, 1, [1.0, 1.0, 0.0, 1.0], 0.0).is_err());
        assert!(BevGridSpec::new(1, 1, [0.0, 1.0, 2.0, 1.0], 0.0).is_err());
    }

    #[test]
    fn cell_center_monotone() {
        let g = BevGridSpec::new(7, 5, [-3.0, 4.0, -10.0, 2.0], 0.5).unwrap();
        for r in 0..7 {
            for c in 1..5 {
                assert!(g.cell_center(r, c).unwrap()[0] > g.cell_center(r, c - 1).unwrap()[0]);
            }
        }
        for r in 1..7 {
            assert!(g.cell_center(r, 0).unwrap()[1] > g.cell_center(r - 1, 0).unwrap()[1]);
        }
    }

    #[test]
    fn offsets_full_3x3() {
        let o = KernelSpec::full(3, 3).unwrap().offsets();
        assert_eq!(o.len(), 9);
        assert_eq!(o[0], (-1, -1));
        assert_eq!(o[1], (-1, 0));
        assert_eq!(o[8], (1, 1));
    }

    #[test]
    fn offsets_cross_3x3() {
        let o = KernelSpec::cross(3, 3).unwrap().offsets();
        assert_eq!(o, vec![(-1, 0), (0, 0), (1, 0), (0, -1), (0, 1)]);
    }

    #[test]
    fn offsets_dilated() {
        let o = KernelSpec::dilated(3, 3, 2).unwrap().offsets();
        let expect: Vec<_> = [-2, 0, 2]
            .iter()
            .flat_map(|&r| [-2, 0, 2].into_iter().map(move |c| (r, c)))
            .collect();
        assert_eq!(o, expect);
    }

    #[test]
    fn offsets_count_symmetry_and_contains() {
        for spec in [
            "1x1",
            "3x3",
            "7x3",
            "1x7",
            "5x5",
            "cross-7x3",
            "cross-1x5",
            "5x3-d3",
        ] {
            let k: KernelSpec = spec.parse().unwrap();
            let o = k.offsets();
            assert_eq!(o.len(), k.positions(), "{spec}");
            for &(r, c) in &o {
                assert!(o.contains(&(-r, -c)), "{spec}");
                assert!(k.contains(r, c), "{spec}");
            }
            let (rh, rw) = k.reach();
            let inside = (-rh - 1..=rh + 1)
                .flat_map(|r| (-rw - 1..=rw + 1).map(move |c| (r, c)))
                .filter(|&(r, c)| k.contains(r, c))
                .count();
            assert_eq!(inside, o.len(), "{spec}");
        }
    }

    #[test]
    fn kernel_parse_and_display() {
        for s in ["7x3", "cross-3x3", "3x3-d2"] {
            assert_eq!(s.parse::<KernelSpec>().unwrap().to_string(), s);
        }
        for bad in ["4x3", "3x", "cross-3x3-d2", "3x3-d0", "x"] {
            assert!(bad.parse::<KernelSpec>().is_err(), "{bad}");
        }
    }
}
