//! Resampling of polar range-angle maps onto the fusion-center grid and
//! soft-map fusion by element-wise summation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{Area, BsPose, Vec2};
use crate::sensing::RangeAngleMap;

/// Uniform Cartesian grid. Cell (ix, iy) is centered at
/// (x_min + (ix + ½)·dx, y_min + (iy + ½)·dy).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub x_min_m: f64,
    pub y_min_m: f64,
    pub dx_m: f64,
    pub dy_m: f64,
    pub nx: usize,
    pub ny: usize,
}

impl GridSpec {
    pub fn covering(area: &Area, dx: f64, dy: f64) -> Self {
        Self {
            x_min_m: area.x_min,
            y_min_m: area.y_min,
            dx_m: dx,
            dy_m: dy,
            nx: ((area.x_max - area.x_min) / dx).round().max(1.0) as usize,
            ny: ((area.y_max - area.y_min) / dy).round().max(1.0) as usize,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dx_m > 0.0 && self.dy_m > 0.0) || self.nx == 0 || self.ny == 0 {
            return Err(Error::config("grid: dx, dy must be > 0 and nx, ny >= 1"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn cell_center(&self, ix: usize, iy: usize) -> Vec2 {
        [
            self.x_min_m + (ix as f64 + 0.5) * self.dx_m,
            self.y_min_m + (iy as f64 + 0.5) * self.dy_m,
        ]
    }

    /// Continuous cell coordinates (cell centers at integers).
    #[inline]
    pub fn to_cell_coords(&self, p: Vec2) -> (f64, f64) {
        (
            (p[0] - self.x_min_m) / self.dx_m - 0.5,
            (p[1] - self.y_min_m) / self.dy_m - 0.5,
        )
    }

    /// Nearest cell index, which may fall outside the grid.
    pub fn nearest_cell(&self, p: Vec2) -> (i64, i64) {
        let (cx, cy) = self.to_cell_coords(p);
        (cx.round() as i64, cy.round() as i64)
    }

    pub fn diagonal_m(&self) -> f64 {
        self.dx_m.hypot(self.dy_m)
    }
}

/// Nonnegative map on a [`GridSpec`], stored row-major with y as the row index.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftMap {
    pub values: Vec<f64>,
    pub grid: GridSpec,
    pub scan_index: usize,
    pub contributing_bs: Vec<usize>,
    /// Number of base stations whose field of view covers each cell.
    pub coverage: Vec<u16>,
}

impl SoftMap {
    pub fn zeros(grid: GridSpec, scan_index: usize) -> Self {
        Self {
            values: vec![0.0; grid.len()],
            grid,
            scan_index,
            contributing_bs: Vec::new(),
            coverage: vec![0; grid.len()],
        }
    }

    #[inline]
    pub fn get(&self, ix: usize, iy: usize) -> f64 {
        self.values[iy * self.grid.nx + ix]
    }

    #[inline]
    pub fn set(&mut self, ix: usize, iy: usize, v: f64) {
        self.values[iy * self.grid.nx + ix] = v;
    }

    /// Value at a possibly out-of-grid cell; zero outside.
    pub fn get_or_zero(&self, ix: i64, iy: i64) -> f64 {
        if ix < 0 || iy < 0 || ix >= self.grid.nx as i64 || iy >= self.grid.ny as i64 {
            0.0
        } else {
            self.get(ix as usize, iy as usize)
        }
    }

    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        (best % self.grid.nx, best / self.grid.nx)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }
}

/// Rotates/translates a polar BS map into the common grid. Each cell center
/// is expressed as (range, bearing) in the BS frame and bilinearly
/// interpolated from the polar map; cells outside the scanned sector or the
/// range span get zero.
pub fn resample_to_grid(map: &RangeAngleMap, bs: &BsPose, grid: &GridSpec) -> SoftMap {
    let mut out = SoftMap::zeros(*grid, map.scan_index);
    out.contributing_bs.push(bs.id);
    let dirs = &map.scan_dirs_rad;
    let n_dirs = dirs.len();
    let first = dirs[0];
    let last = dirs[n_dirs - 1];
    let step = if n_dirs > 1 {
        (last - first) / (n_dirs - 1) as f64
    } else {
        bs.scan_step_rad
    };
    let max_row = (map.n_range - 1) as f64;
    for iy in 0..grid.ny {
        for ix in 0..grid.nx {
            let (range, bearing) = bs.to_local(grid.cell_center(ix, iy));
            let fr = range / map.range_bin_m;
            if fr > max_row {
                continue;
            }
            let fd = if n_dirs > 1 {
                if bearing < first || bearing > last {
                    continue;
                }
                (bearing - first) / step
            } else {
                if (bearing - first).abs() > step / 2.0 {
                    continue;
                }
                0.0
            };
            let r0 = (fr.floor() as usize).min(map.n_range.saturating_sub(2));
            let d0 = (fd.floor() as usize).min(n_dirs.saturating_sub(2));
            let tr = (fr - r0 as f64).clamp(0.0, 1.0);
            let td = (fd - d0 as f64).clamp(0.0, 1.0);
            let r1 = (r0 + 1).min(map.n_range - 1);
            let d1 = (d0 + 1).min(n_dirs - 1);
            let v = (1.0 - tr) * ((1.0 - td) * map.get(r0, d0) + td * map.get(r0, d1))
                + tr * ((1.0 - td) * map.get(r1, d0) + td * map.get(r1, d1));
            let i = iy * grid.nx + ix;
            out.values[i] = v;
            out.coverage[i] = 1;
        }
    }
    out
}

/// L_t = Σ_q D̄_{q,t}, summed in input order.
pub fn fuse(maps: &[SoftMap]) -> Result<SoftMap> {
    let first = maps
        .first()
        .ok_or_else(|| Error::Shape("fuse needs at least one map".into()))?;
    let mut out = SoftMap::zeros(first.grid, first.scan_index);
    for m in maps {
        if m.grid != first.grid {
            return Err(Error::Shape("cannot fuse maps on different grids".into()));
        }
        if m.scan_index != first.scan_index {
            return Err(Error::Shape("cannot fuse maps from different scans".into()));
        }
        for (o, v) in out.values.iter_mut().zip(&m.values) {
            *o += v;
        }
        for (o, c) in out.coverage.iter_mut().zip(&m.coverage) {
            *o += c;
        }
        for b in &m.contributing_bs {
            if !out.contributing_bs.contains(b) {
                out.contributing_bs.push(*b);
            }
        }
    }
    out.contributing_bs.sort_unstable();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::BsRole;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn pose(boresight: f64) -> BsPose {
        BsPose {
            id: 0,
            position_m: [0.0, 0.0],
            boresight_rad: boresight,
            scan_halfwidth_rad: 30f64.to_radians(),
            scan_step_rad: 2f64.to_radians(),
            comm_dir_rad: 1.0,
            role: BsRole::SensingComm,
        }
    }

    fn impulse_map(bs: &BsPose, range_bin: f64, peak_row: usize, peak_dir: usize) -> RangeAngleMap {
        let dirs = bs.scan_dirs();
        let mut cols = vec![vec![0.0; 64]; dirs.len()];
        cols[peak_dir][peak_row] = 1.0;
        RangeAngleMap::from_columns(cols, dirs, range_bin, bs.id, 0).unwrap()
    }

    fn grid() -> GridSpec {
        GridSpec::covering(&Area::square(15.0), 0.1, 0.1)
    }

    #[test]
    fn identity_pose_peak() {
        let bs = pose(0.0);
        let map = impulse_map(&bs, 0.5, 20, 15);
        let sm = resample_to_grid(&map, &bs, &grid());
        let (ix, iy) = sm.argmax();
        let c = sm.grid.cell_center(ix, iy);
        assert!((c[0] - 10.0).hypot(c[1]) <= sm.grid.diagonal_m(), "{c:?}");
    }

    #[test]
    fn rotated_pose_moves_peak() {
        let bs = pose(PI / 2.0);
        let map = impulse_map(&bs, 0.5, 20, 15);
        let sm = resample_to_grid(&map, &bs, &grid());
        let (ix, iy) = sm.argmax();
        let c = sm.grid.cell_center(ix, iy);
        // rotation by 90° maps (10, 0) to (0, 10)
        let expected = [0.0, 10.0];
        assert!(
            (c[0] - expected[0]).hypot(c[1] - expected[1]) <= sm.grid.diagonal_m(),
            "{c:?}"
        );
    }

    #[test]
    fn behind_the_array_is_zero() {
        let bs = pose(0.0);
        let dirs = bs.scan_dirs();
        let cols = vec![vec![1.0; 64]; dirs.len()];
        let map = RangeAngleMap::from_columns(cols, dirs, 0.5, 0, 0).unwrap();
        let sm = resample_to_grid(&map, &bs, &grid());
        let g = sm.grid;
        let (ix, iy) = g.nearest_cell([-5.0, 0.0]);
        assert_eq!(sm.get(ix as usize, iy as usize), 0.0);
        assert_eq!(sm.coverage[iy as usize * g.nx + ix as usize], 0);
        let (ix, iy) = g.nearest_cell([5.0, 0.0]);
        assert!((sm.get(ix as usize, iy as usize) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fuse_identity_and_doubling() {
        let bs = pose(0.0);
        let map = impulse_map(&bs, 0.5, 20, 15);
        let sm = resample_to_grid(&map, &bs, &grid());
        assert_eq!(fuse(std::slice::from_ref(&sm)).unwrap().values, sm.values);
        let twice = fuse(&[sm.clone(), sm.clone()]).unwrap();
        for (a, b) in twice.values.iter().zip(&sm.values) {
            assert_eq!(*a, 2.0 * b);
        }
    }

    #[test]
    fn fuse_disjoint_supports() {
        let g = GridSpec::covering(&Area::square(1.0), 0.5, 0.5);
        let mk = |cell: usize, bs: usize, v: f64| {
            let mut m = SoftMap::zeros(g, 3);
            m.values[cell] = v;
            m.contributing_bs.push(bs);
            m
        };
        let fused = fuse(&[mk(0, 0, 1.0), mk(5, 2, 2.0), mk(15, 4, 3.0)]).unwrap();
        let support: Vec<usize> = (0..g.len()).filter(|&i| fused.values[i] > 0.0).collect();
        assert_eq!(support, vec![0, 5, 15]);
        assert_eq!(
            (fused.values[0], fused.values[5], fused.values[15]),
            (1.0, 2.0, 3.0)
        );
        assert_eq!(fused.contributing_bs, vec![0, 2, 4]);
    }

    #[test]
    fn fuse_rejects_mismatched_grids() {
        let a = SoftMap::zeros(GridSpec::covering(&Area::square(1.0), 0.5, 0.5), 0);
        let b = SoftMap::zeros(GridSpec::covering(&Area::square(1.0), 0.25, 0.5), 0);
        assert!(fuse(&[a, b]).is_err());
        assert!(fuse(&[]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn resample_is_convex_and_nonnegative(seed in 0u64..10_000) {
            let bs = pose(0.3);
            let dirs = bs.scan_dirs();
            let mut x = seed;
            let cols: Vec<Vec<f64>> = dirs.iter().map(|_| (0..64).map(|_| {
                x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (x >> 11) as f64 / (1u64 << 53) as f64
            }).collect()).collect();
            let map = RangeAngleMap::from_columns(cols, dirs, 0.5, 0, 0).unwrap();
            let sm = resample_to_grid(&map, &bs, &grid());
            let mx = map.max_value();
            prop_assert!(sm.values.iter().all(|v| *v >= 0.0 && *v <= mx + 1e-12));
        }

        #[test]
        fn polar_impulse_round_trip(row in 5usize..50, dir in 1usize..29, boresight in -3.0f64..3.0) {
            let bs = pose(boresight);
            let map = impulse_map(&bs, 0.25, row, dir);
            let g = GridSpec::covering(&Area::square(14.0), 0.1, 0.1);
            let sm = resample_to_grid(&map, &bs, &g);
            let truth = bs.to_global(row as f64 * 0.25, map.scan_dirs_rad[dir]);
            prop_assume!(g.nearest_cell(truth).0 >= 0 && g.nearest_cell(truth).0 < g.nx as i64);
            prop_assume!(g.nearest_cell(truth).1 >= 0 && g.nearest_cell(truth).1 < g.ny as i64);
            let (ix, iy) = sm.argmax();
            let c = g.cell_center(ix, iy);
            prop_assert!((c[0] - truth[0]).hypot(c[1] - truth[1]) <= g.diagonal_m() + 1e-9);
        }

        #[test]
        fn fuse_is_commutative(seed in 0u64..1000) {
            let g = GridSpec::covering(&Area::square(1.0), 0.25, 0.25);
            let mk = |s: u64| {
                let mut m = SoftMap::zeros(g, 0);
                for (i, v) in m.values.iter_mut().enumerate() {
                    *v = ((s.wrapping_mul(31).wrapping_add(i as u64 * 17)) % 97) as f64 / 7.0;
                }
                m
            };
            let (a, b, c) = (mk(seed), mk(seed + 1), mk(seed + 2));
            let x = fuse(&[a.clone(), b.clone(), c.clone()]).unwrap();
            let y = fuse(&[c, a, b]).unwrap();
            for (p, q) in x.values.iter().zip(&y.values) {
                prop_assert!((p - q).abs() <= 1e-12 * p.abs().max(1.0));
            }
        }
    }
}
