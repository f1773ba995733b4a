//! Detection extraction from the fused soft map: excision threshold,
//! class-adaptive nearest-track gating, DBSCAN on the residue and
//! per-cluster centroid and covariance.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::Matrix2;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::fusion::{GridSpec, SoftMap};
use crate::scenario::{TargetClass, Vec2};

/// Unit used for the gating and DBSCAN distances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceUnit {
    Cells,
    #[default]
    Meters,
}

/// Track-to-point gate selection.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum GatingMode {
    /// Gate picked from the track's class label.
    #[default]
    Adaptive,
    /// One gate for every track.
    Fixed(f64),
}

impl fmt::Display for GatingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GatingMode::Adaptive => write!(f, "adaptive"),
            GatingMode::Fixed(g) => write!(f, "fixed-{g}"),
        }
    }
}

impl FromStr for GatingMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "adaptive" {
            return Ok(GatingMode::Adaptive);
        }
        let g = s
            .strip_prefix("fixed-")
            .and_then(|v| v.parse::<f64>().ok())
            .filter(|g| *g > 0.0)
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown gating mode '{s}' (adaptive | fixed-<gate>)"
                ))
            })?;
        Ok(GatingMode::Fixed(g))
    }
}

impl Serialize for GatingMode {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for GatingMode {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusteringConfig {
    /// γ_d, used as-is unless the pipeline calibrates it from noise.
    pub excision_threshold: f64,
    /// Derive γ_d from noise-only fused maps instead of the absolute value.
    pub calibrate_excision: bool,
    /// Quantile of the noise-only fused-map maximum used as γ_d.
    pub calibration_quantile: f64,
    pub calibration_trials: usize,
    pub unit: DistanceUnit,
    /// ξ_k for pedestrian tracks.
    pub knn_gate_pedestrian: f64,
    /// ξ_k for vehicle and unlabeled tracks.
    pub knn_gate_vehicle: f64,
    /// Set from the run-level gating mode.
    #[serde(skip)]
    pub gating: GatingMode,
    /// ξ_d.
    pub dbscan_eps: f64,
    /// N_d.
    pub dbscan_min_pts: usize,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        Self {
            excision_threshold: 2e-7,
            calibrate_excision: true,
            calibration_quantile: 0.99,
            calibration_trials: 20,
            unit: DistanceUnit::Meters,
            knn_gate_pedestrian: 4.0,
            knn_gate_vehicle: 6.0,
            gating: GatingMode::Adaptive,
            dbscan_eps: 3.0,
            dbscan_min_pts: 50,
        }
    }
}

impl ClusteringConfig {
    /// Desk profile: the full-scale gates widened by 3 m, about the half
    /// width of the range main lobe at K = 512.
    pub fn desk() -> Self {
        Self {
            knn_gate_pedestrian: 7.0,
            knn_gate_vehicle: 9.0,
            ..Self::default()
        }
    }

    /// Gating-mode comparison: both classes at the pedestrian gate, both at
    /// the vehicle gate, then class-adaptive.
    pub fn gating_sweep(&self) -> [GatingMode; 3] {
        [
            GatingMode::Fixed(self.knn_gate_pedestrian),
            GatingMode::Fixed(self.knn_gate_vehicle),
            GatingMode::Adaptive,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let pos = [
            self.knn_gate_pedestrian,
            self.knn_gate_vehicle,
            self.dbscan_eps,
        ];
        if pos.iter().any(|v| !(*v > 0.0))
            || self.dbscan_min_pts == 0
            || !(self.excision_threshold >= 0.0)
        {
            return Err(Error::config(
                "clustering: gates and eps must be > 0, min_pts >= 1, threshold >= 0",
            ));
        }
        if !(self.calibration_quantile > 0.0 && self.calibration_quantile < 1.0)
            || self.calibration_trials == 0
        {
            return Err(Error::config(
                "clustering: calibration quantile in (0, 1) and trials >= 1",
            ));
        }
        Ok(())
    }

    fn to_meters(&self, v: f64, grid: &GridSpec) -> f64 {
        match self.unit {
            DistanceUnit::Meters => v,
            DistanceUnit::Cells => v * grid.dx_m,
        }
    }

    /// Gate in meters for a track of the given class.
    pub fn gate_m(&self, class: Option<TargetClass>, grid: &GridSpec) -> f64 {
        let g = match self.gating {
            GatingMode::Fixed(g) => g,
            GatingMode::Adaptive => match class {
                Some(TargetClass::Pedestrian) => self.knn_gate_pedestrian,
                Some(TargetClass::Vehicle) | None => self.knn_gate_vehicle,
            },
        };
        self.to_meters(g, grid)
    }

    pub fn eps_m(&self, grid: &GridSpec) -> f64 {
        self.to_meters(self.dbscan_eps, grid)
    }
}

/// Map cell surviving excision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapPoint {
    pub ix: usize,
    pub iy: usize,
    pub position_m: Vec2,
    pub value: f64,
}

/// Cells with value strictly above `threshold`, in row-major order.
pub fn excise(map: &SoftMap, threshold: f64) -> Vec<MapPoint> {
    let g = &map.grid;
    let mut out = Vec::new();
    for iy in 0..g.ny {
        for ix in 0..g.nx {
            let v = map.get(ix, iy);
            if v > threshold {
                out.push(MapPoint {
                    ix,
                    iy,
                    position_m: g.cell_center(ix, iy),
                    value: v,
                });
            }
        }
    }
    out
}

/// Predicted track position for gating, with the latest class label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictedTrack {
    pub id: u64,
    pub position_m: Vec2,
    pub class: Option<TargetClass>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateResult {
    /// (track id, member points) for every track that captured at least one point, by track id.
    pub clusters: Vec<(u64, Vec<MapPoint>)>,
    pub residual: Vec<MapPoint>,
}

fn dist(a: Vec2, b: Vec2) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Each point goes to its nearest predicted track (ties to the lower id) if
/// it lies within that track's gate, and to the residual otherwise.
pub fn gate_assign(
    points: &[MapPoint],
    tracks: &[PredictedTrack],
    cfg: &ClusteringConfig,
    grid: &GridSpec,
) -> GateResult {
    let mut order: Vec<&PredictedTrack> = tracks.iter().collect();
    order.sort_by_key(|t| t.id);
    let gates: Vec<f64> = order.iter().map(|t| cfg.gate_m(t.class, grid)).collect();
    let mut buckets: Vec<Vec<MapPoint>> = vec![Vec::new(); order.len()];
    let mut residual = Vec::new();
    for p in points {
        let mut best: Option<(usize, f64)> = None;
        for (k, t) in order.iter().enumerate() {
            let d = dist(p.position_m, t.position_m);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((k, d));
            }
        }
        match best {
            Some((k, d)) if d <= gates[k] => buckets[k].push(*p),
            _ => residual.push(*p),
        }
    }
    let clusters = order
        .iter()
        .zip(buckets)
        .filter(|(_, b)| !b.is_empty())
        .map(|(t, b)| (t.id, b))
        .collect();
    GateResult { clusters, residual }
}

/// Sorts points into the canonical (row, column) order.
pub fn canonical_order(points: &mut [MapPoint]) {
    points.sort_by_key(|p| (p.iy, p.ix));
}

/// DBSCAN with radius `eps_m` and `min_pts` (the point itself included).
/// Points are visited in canonical order, so the output does not depend on
/// the input order. Noise is dropped.
pub fn dbscan(points: &[MapPoint], eps_m: f64, min_pts: usize) -> Vec<Vec<MapPoint>> {
    let mut pts = points.to_vec();
    canonical_order(&mut pts);
    let n = pts.len();
    if n == 0 {
        return Vec::new();
    }
    let key = |p: Vec2| ((p[0] / eps_m).floor() as i64, (p[1] / eps_m).floor() as i64);
    let mut hash: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, p) in pts.iter().enumerate() {
        hash.entry(key(p.position_m)).or_default().push(i);
    }
    let neighbors = |i: usize| -> Vec<usize> {
        let (kx, ky) = key(pts[i].position_m);
        let mut out = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(b) = hash.get(&(kx + dx, ky + dy)) {
                    out.extend(
                        b.iter()
                            .copied()
                            .filter(|&j| dist(pts[i].position_m, pts[j].position_m) <= eps_m),
                    );
                }
            }
        }
        out.sort_unstable();
        out
    };
    label_clusters(&pts, min_pts, neighbors)
}

const UNVISITED: usize = usize::MAX;
const NOISE: usize = usize::MAX - 1;

fn label_clusters(
    pts: &[MapPoint],
    min_pts: usize,
    neighbors: impl Fn(usize) -> Vec<usize>,
) -> Vec<Vec<MapPoint>> {
    let n = pts.len();
    let mut label = vec![UNVISITED; n];
    let mut n_clusters = 0;
    for i in 0..n {
        if label[i] != UNVISITED {
            continue;
        }
        let nb = neighbors(i);
        if nb.len() < min_pts {
            label[i] = NOISE;
            continue;
        }
        let c = n_clusters;
        n_clusters += 1;
        label[i] = c;
        let mut queue = std::collections::VecDeque::from(nb);
        while let Some(j) = queue.pop_front() {
            if label[j] == NOISE {
                label[j] = c;
            }
            if label[j] != UNVISITED {
                continue;
            }
            label[j] = c;
            let nj = neighbors(j);
            if nj.len() >= min_pts {
                queue.extend(nj);
            }
        }
    }
    let mut out = vec![Vec::new(); n_clusters];
    for (i, l) in label.iter().enumerate() {
        if *l < n_clusters {
            out[*l].push(pts[i]);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Gated(u64),
    Dbscan,
}

/// Detections Z_t with per-measurement covariance R_t.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MeasurementSet {
    pub centroids_m: Vec<Vec2>,
    pub covariances: Vec<Matrix2<f64>>,
    pub members: Vec<Vec<MapPoint>>,
    pub provenance: Vec<Provenance>,
}

impl MeasurementSet {
    pub fn len(&self) -> usize {
        self.centroids_m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids_m.is_empty()
    }

    pub fn counts(&self) -> Vec<usize> {
        self.members.iter().map(Vec::len).collect()
    }

    fn push(&mut self, members: Vec<MapPoint>, provenance: Provenance, grid: &GridSpec) {
        let (z, r) = centroid_and_covariance(&members, grid);
        self.centroids_m.push(z);
        self.covariances.push(r);
        self.members.push(members);
        self.provenance.push(provenance);
    }
}

pub const COVARIANCE_JITTER: f64 = 1e-6;

/// Value-weighted centroid and the sample scatter about it,
/// R = Σ (v − z)(v − z)ᵀ / (N − 1) + εI. A single member gets diag(Δx², Δy²).
pub fn centroid_and_covariance(members: &[MapPoint], grid: &GridSpec) -> (Vec2, Matrix2<f64>) {
    assert!(!members.is_empty(), "cluster must have members");
    let wsum: f64 = members.iter().map(|p| p.value).sum();
    let z = if wsum > 0.0 {
        let mut z = [0.0; 2];
        for p in members {
            z[0] += p.value * p.position_m[0];
            z[1] += p.value * p.position_m[1];
        }
        [z[0] / wsum, z[1] / wsum]
    } else {
        let n = members.len() as f64;
        [
            members.iter().map(|p| p.position_m[0]).sum::<f64>() / n,
            members.iter().map(|p| p.position_m[1]).sum::<f64>() / n,
        ]
    };
    if members.len() == 1 {
        return (
            z,
            Matrix2::new(grid.dx_m * grid.dx_m, 0.0, 0.0, grid.dy_m * grid.dy_m),
        );
    }
    let mut r = Matrix2::zeros();
    for p in members {
        let d = nalgebra::Vector2::new(p.position_m[0] - z[0], p.position_m[1] - z[1]);
        r += d * d.transpose();
    }
    r /= (members.len() - 1) as f64;
    r += Matrix2::identity() * COVARIANCE_JITTER;
    (z, r)
}

/// Excision, gating against the predicted tracks, then DBSCAN on the residue.
pub fn extract_measurements(
    map: &SoftMap,
    tracks: &[PredictedTrack],
    cfg: &ClusteringConfig,
    threshold: f64,
) -> MeasurementSet {
    let grid = map.grid;
    let points = excise(map, threshold);
    let gated = gate_assign(&points, tracks, cfg, &grid);
    let mut out = MeasurementSet::default();
    for (id, members) in gated.clusters {
        out.push(members, Provenance::Gated(id), &grid);
    }
    for members in dbscan(&gated.residual, cfg.eps_m(&grid), cfg.dbscan_min_pts) {
        out.push(members, Provenance::Dbscan, &grid);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::Area;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn grid() -> GridSpec {
        GridSpec::covering(&Area::square(10.0), 0.1, 0.1)
    }

    fn pt(x: f64, y: f64) -> MapPoint {
        let g = grid();
        let (ix, iy) = g.nearest_cell([x, y]);
        MapPoint {
            ix: ix as usize,
            iy: iy as usize,
            position_m: [x, y],
            value: 1.0,
        }
    }

    fn cells_cfg() -> ClusteringConfig {
        ClusteringConfig {
            unit: DistanceUnit::Cells,
            ..ClusteringConfig::default()
        }
    }

    #[test]
    fn excision_cases() {
        let g = GridSpec::covering(&Area::square(1.0), 0.5, 0.5);
        let mut m = SoftMap::zeros(g, 0);
        m.values.iter_mut().for_each(|v| *v = 1e-7);
        assert!(excise(&m, 2e-7).is_empty());
        assert_eq!(excise(&m, 0.0).len(), g.len());
        m.values[1] = 3e-7;
        m.values[6] = 5e-7;
        m.values[14] = 2.5e-7;
        let got = excise(&m, 2e-7);
        assert_eq!(
            got.iter().map(|p| p.value).collect::<Vec<_>>(),
            vec![3e-7, 5e-7, 2.5e-7]
        );
        assert_eq!((got[1].ix, got[1].iy), (2, 1));
    }

    #[test]
    fn gating_in_cells() {
        let g = grid();
        let cfg = cells_cfg();
        let ped = PredictedTrack {
            id: 1,
            position_m: [0.0, 0.0],
            class: Some(TargetClass::Pedestrian),
        };
        let veh = PredictedTrack {
            id: 2,
            position_m: [1.2, 0.0],
            class: Some(TargetClass::Vehicle),
        };
        // 3 cells from the pedestrian
        let r = gate_assign(&[pt(0.0, 0.3)], &[ped], &cfg, &g);
        assert_eq!(r.clusters.len(), 1);
        // 5 cells from the pedestrian, 7 from the vehicle
        let r = gate_assign(&[pt(-0.5, 0.0)], &[ped, veh], &cfg, &g);
        assert!(r.clusters.is_empty() && r.residual.len() == 1);
        // equidistant from two tracks
        let a = PredictedTrack {
            id: 7,
            position_m: [0.0, 0.0],
            class: None,
        };
        let b = PredictedTrack {
            id: 3,
            position_m: [0.6, 0.0],
            class: None,
        };
        let r = gate_assign(&[pt(0.3, 0.0)], &[a, b], &cfg, &g);
        assert_eq!(r.clusters[0].0, 3);
        // no tracks
        let r = gate_assign(&[pt(0.3, 0.0)], &[], &cfg, &g);
        assert_eq!(r.residual.len(), 1);
    }

    #[test]
    fn unlabeled_tracks_use_vehicle_gate_and_fixed_mode_overrides() {
        let g = grid();
        let mut cfg = cells_cfg();
        let t = PredictedTrack {
            id: 0,
            position_m: [0.0, 0.0],
            class: None,
        };
        assert!((cfg.gate_m(None, &g) - 0.6).abs() < 1e-12);
        assert_eq!(
            gate_assign(&[pt(0.5, 0.0)], &[t], &cfg, &g).clusters.len(),
            1
        );
        cfg.gating = GatingMode::Fixed(4.0);
        assert!((cfg.gate_m(Some(TargetClass::Vehicle), &g) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn gating_mode_strings() {
        assert_eq!(
            "adaptive".parse::<GatingMode>().unwrap(),
            GatingMode::Adaptive
        );
        assert_eq!(
            "fixed-6".parse::<GatingMode>().unwrap(),
            GatingMode::Fixed(6.0)
        );
        assert_eq!(GatingMode::Fixed(4.0).to_string(), "fixed-4");
        assert!("fixed-x".parse::<GatingMode>().is_err());
        assert!("nearest".parse::<GatingMode>().is_err());
    }

    #[test]
    fn dbscan_min_pts_boundary() {
        let pts: Vec<MapPoint> = (0..49)
            .map(|i| pt((i % 7) as f64 * 0.1, (i / 7) as f64 * 0.1))
            .collect();
        assert!(dbscan(&pts, 3.0, 50).is_empty());
        let mut more = pts.clone();
        more.push(pt(0.0, 0.7));
        assert_eq!(dbscan(&more, 3.0, 50).len(), 1);
    }

    #[test]
    fn dbscan_two_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut pts = Vec::new();
        for c in [[-4.0, 0.0], [4.0, 0.0]] {
            for _ in 0..60 {
                pts.push(pt(
                    c[0] + rng.random_range(-0.4..0.4),
                    c[1] + rng.random_range(-0.4..0.4),
                ));
            }
        }
        // separation 8 m = 10·ξ_d with ξ_d = 0.8 m
        let cl = dbscan(&pts, 0.8, 50);
        assert_eq!(cl.len(), 2);
        assert_eq!(cl[0].len() + cl[1].len(), 120);
    }

    fn brute_dbscan(points: &[MapPoint], eps: f64, min_pts: usize) -> Vec<Vec<MapPoint>> {
        let mut pts = points.to_vec();
        canonical_order(&mut pts);
        let all = pts.clone();
        label_clusters(&pts, min_pts, |i| {
            (0..all.len())
                .filter(|&j| dist(all[i].position_m, all[j].position_m) <= eps)
                .collect()
        })
    }

    #[test]
    fn dbscan_matches_quadratic_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for trial in 0..5 {
            let mut pts: Vec<MapPoint> = Vec::new();
            let mut seen = std::collections::HashSet::new();
            while pts.len() < 500 {
                let ix = rng.random_range(0..200usize);
                let iy = rng.random_range(0..40usize);
                if seen.insert((ix, iy)) {
                    pts.push(MapPoint {
                        ix,
                        iy,
                        position_m: grid().cell_center(ix, iy),
                        value: 1.0,
                    });
                }
            }
            let eps = 0.15 + 0.05 * trial as f64;
            let a = dbscan(&pts, eps, 4);
            assert_eq!(a, brute_dbscan(&pts, eps, 4));
            let mut rev = pts.clone();
            rev.reverse();
            assert_eq!(dbscan(&rev, eps, 4), a);
        }
    }

    #[test]
    fn two_point_covariance() {
        let g = grid();
        let (z, r) = centroid_and_covariance(&[pt(0.0, 0.0), pt(2.0, 0.0)], &g);
        assert_eq!(z, [1.0, 0.0]);
        let expect = Matrix2::new(2.0, 0.0, 0.0, 0.0) + Matrix2::identity() * COVARIANCE_JITTER;
        assert!((r - expect).norm() < 1e-15);
    }

    #[test]
    fn single_cell_fallback() {
        let g = grid();
        let (_, r) = centroid_and_covariance(&[pt(0.3, 0.3)], &g);
        assert_eq!(r, Matrix2::new(0.1 * 0.1, 0.0, 0.0, 0.1 * 0.1));
    }

    #[test]
    fn uniform_weights_reduce_to_sample_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts: Vec<MapPoint> = (0..37)
            .map(|_| pt(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)))
            .collect();
        let (z, r) = centroid_and_covariance(&pts, &grid());
        // two-pass textbook computation
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.position_m[0]).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.position_m[1]).sum::<f64>() / n;
        let sxx = pts
            .iter()
            .map(|p| (p.position_m[0] - mx).powi(2))
            .sum::<f64>()
            / (n - 1.0);
        let syy = pts
            .iter()
            .map(|p| (p.position_m[1] - my).powi(2))
            .sum::<f64>()
            / (n - 1.0);
        let sxy = pts
            .iter()
            .map(|p| (p.position_m[0] - mx) * (p.position_m[1] - my))
            .sum::<f64>()
            / (n - 1.0);
        assert!((z[0] - mx).abs() < 1e-12 && (z[1] - my).abs() < 1e-12);
        assert!((r[(0, 0)] - COVARIANCE_JITTER - sxx).abs() < 1e-12);
        assert!((r[(1, 1)] - COVARIANCE_JITTER - syy).abs() < 1e-12);
        assert!((r[(0, 1)] - sxy).abs() < 1e-12 && r[(0, 1)] == r[(1, 0)]);
    }

    #[test]
    fn gaussian_members_recover_covariance() {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let sigma = Matrix2::new(0.8, 0.3, 0.3, 0.5);
        let l = sigma.cholesky().unwrap().l();
        let pts: Vec<MapPoint> = (0..1000)
            .map(|_| {
                let e = nalgebra::Vector2::new(
                    StandardNormal.sample(&mut rng),
                    StandardNormal.sample(&mut rng),
                );
                let x = l * e;
                let (ix, iy) = g.nearest_cell([x[0] + 1.0, x[1] - 1.0]);
                let (ix, iy) = (ix as usize, iy as usize);
                MapPoint {
                    ix,
                    iy,
                    position_m: g.cell_center(ix, iy),
                    value: 1.0,
                }
            })
            .collect();
        let (_, r) = centroid_and_covariance(&pts, &g);
        assert!((r - sigma).norm() / sigma.norm() < 0.1);
    }

    #[test]
    fn extraction_partitions_points() {
        let g = grid();
        let mut m = SoftMap::zeros(g, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..3000 {
            let c = if rng.random::<bool>() {
                [-5.0, 2.0]
            } else {
                [4.0, -4.0]
            };
            let (ix, iy) = g.nearest_cell([
                c[0] + rng.random_range(-0.8..0.8),
                c[1] + rng.random_range(-0.8..0.8),
            ]);
            m.set(ix as usize, iy as usize, 1.0 + rng.random::<f64>());
        }
        let cfg = ClusteringConfig {
            dbscan_eps: 0.5,
            dbscan_min_pts: 10,
            ..ClusteringConfig::default()
        };
        let tracks = [PredictedTrack {
            id: 4,
            position_m: [-5.0, 2.2],
            class: Some(TargetClass::Pedestrian),
        }];
        let ms = extract_measurements(&m, &tracks, &cfg, 0.5);
        assert_eq!(
            ms.provenance,
            vec![Provenance::Gated(4), Provenance::Dbscan]
        );
        let total: usize = ms.counts().iter().sum();
        assert_eq!(total, excise(&m, 0.5).len());
        for (z, mem) in ms.centroids_m.iter().zip(&ms.members) {
            let xs = mem.iter().map(|p| p.position_m[0]);
            let (lo, hi) = (
                xs.clone().fold(f64::MAX, f64::min),
                xs.fold(f64::MIN, f64::max),
            );
            assert!(z[0] >= lo && z[0] <= hi);
        }
        for r in &ms.covariances {
            assert!(r.symmetric_eigenvalues().iter().all(|e| *e > 0.0));
        }
    }

    proptest! {
        #[test]
        fn assigned_points_respect_gates(
            pts in prop::collection::vec((-9.0f64..9.0, -9.0f64..9.0), 1..80),
            trk in prop::collection::vec((-9.0f64..9.0, -9.0f64..9.0, 0u8..3), 0..5),
        ) {
            let g = grid();
            let cfg = ClusteringConfig::default();
            let points: Vec<MapPoint> = pts.iter().map(|&(x, y)| pt(x, y)).collect();
            let tracks: Vec<PredictedTrack> = trk.iter().enumerate().map(|(i, &(x, y, c))| PredictedTrack {
                id: i as u64, position_m: [x, y], class: [None, Some(TargetClass::Pedestrian), Some(TargetClass::Vehicle)][c as usize],
            }).collect();
            let r = gate_assign(&points, &tracks, &cfg, &g);
            let n: usize = r.clusters.iter().map(|c| c.1.len()).sum::<usize>() + r.residual.len();
            prop_assert_eq!(n, points.len());
            for (id, mem) in &r.clusters {
                let t = tracks.iter().find(|t| t.id == *id).unwrap();
                for p in mem {
                    prop_assert!(dist(p.position_m, t.position_m) <= cfg.gate_m(t.class, &g));
                }
            }
        }
    }
}
