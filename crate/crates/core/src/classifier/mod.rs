//! Patch cropping around predicted target positions and pedestrian/vehicle
//! classification with a small convolutional network.

mod cnn;

pub use cnn::{classify, load_model, save_model, train, CnnModel, Gradients, TrainReport};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::SoftMap;
use crate::scenario::{TargetClass, TruthState, Vec2};

/// Input scaling applied before the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    /// Divide by the patch maximum.
    Max,
    /// Use raw map values.
    None,
    /// Level above the map noise floor in dB, divided by LOG_RANGE_DB;
    /// cells below the floor map to 0.
    #[default]
    Snr,
}

/// dB span mapped onto [0, 1] by `Snr`.
pub const LOG_RANGE_DB: f64 = 40.0;

impl Normalization {
    pub fn code(self) -> u64 {
        match self {
            Normalization::Max => 0,
            Normalization::None => 1,
            Normalization::Snr => 2,
        }
    }

    pub fn from_code(c: u64) -> Option<Self> {
        match c {
            0 => Some(Normalization::Max),
            1 => Some(Normalization::None),
            2 => Some(Normalization::Snr),
            _ => None,
        }
    }

    /// `noise_floor` is only read by `Snr`.
    pub fn apply(self, pixels: &[f64], noise_floor: f64) -> Vec<f64> {
        match self {
            Normalization::Snr => pixels
                .iter()
                .map(|&v| {
                    if v > noise_floor {
                        10.0 * (v / noise_floor).log10() / LOG_RANGE_DB
                    } else {
                        0.0
                    }
                })
                .collect(),
            Normalization::None => pixels.to_vec(),
            Normalization::Max => {
                let m = pixels.iter().cloned().fold(0.0, f64::max);
                if m > 0.0 {
                    pixels.iter().map(|v| v / m).collect()
                } else {
                    pixels.to_vec()
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    /// W_size in meters.
    pub window_m: f64,
    /// σ_w, training-crop displacement.
    pub perturb_sigma_m: f64,
    pub num_filters: usize,
    pub filter_size: usize,
    pub pool_factor: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub validation_fraction: f64,
    pub normalization: Normalization,
    pub seed: u64,
    /// Clamp in nats on a track's accumulated vehicle-versus-pedestrian
    /// log-odds; 0 labels tracks from the latest scan alone.
    pub track_evidence_cap: f64,
    /// Mean noise level of the fused maps; set from the radio parameters
    /// and sensing set.
    #[serde(skip)]
    pub noise_floor: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            window_m: 6.0,
            perturb_sigma_m: 0.5,
            num_filters: 20,
            filter_size: 5,
            pool_factor: 2,
            learning_rate: 0.01,
            momentum: 0.9,
            epochs: 200,
            batch_size: 32,
            patience: 10,
            validation_fraction: 0.2,
            normalization: Normalization::Snr,
            seed: 7,
            track_evidence_cap: 20.0,
            noise_floor: 1.0,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.window_m > 0.0) || !(self.perturb_sigma_m >= 0.0) || !(self.learning_rate > 0.0) {
            return Err(Error::config(
                "classifier: window and learning rate must be > 0, sigma >= 0",
            ));
        }
        if self.num_filters == 0
            || self.filter_size == 0
            || self.pool_factor == 0
            || self.epochs == 0
            || self.batch_size == 0
        {
            return Err(Error::config(
                "classifier: filters, sizes, epochs and batch size must be >= 1",
            ));
        }
        if !(self.track_evidence_cap >= 0.0 && self.track_evidence_cap.is_finite()) {
            return Err(Error::config(
                "classifier: track_evidence_cap must be finite and >= 0",
            ));
        }
        if !(self.noise_floor > 0.0 && self.noise_floor.is_finite()) {
            return Err(Error::config(
                "classifier: noise floor must be finite and > 0",
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) || !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::config(
                "classifier: momentum and validation fraction must be in [0, 1)",
            ));
        }
        Ok(())
    }

    /// Patch side in cells for a grid step `dx`.
    pub fn side(&self, dx: f64) -> usize {
        (self.window_m / dx).round() as usize
    }
}

/// Square crop of the soft map, row-major with y as the row index.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub pixels: Vec<f64>,
    pub side: usize,
    pub center_m: Vec2,
    pub scan_index: usize,
}

impl Patch {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.side + col]
    }
}

/// Adds one classification to a track's vehicle-versus-pedestrian log-odds,
/// clamped to ±`cap`.
pub fn accumulate_evidence(prior: f64, scores: [f64; 2], cap: f64) -> f64 {
    const FLOOR: f64 = 1e-12;
    let step = ((scores[TargetClass::Vehicle.index()] + FLOOR)
        / (scores[TargetClass::Pedestrian.index()] + FLOOR))
        .ln();
    (prior + step).clamp(-cap, cap)
}

/// Track class from accumulated log-odds; `latest` breaks ties.
pub fn class_from_evidence(evidence: f64, latest: TargetClass) -> TargetClass {
    if evidence > 0.0 {
        TargetClass::Vehicle
    } else if evidence < 0.0 {
        TargetClass::Pedestrian
    } else {
        latest
    }
}

/// side×side crop whose pixel (side/2, side/2) is the cell nearest to
/// `center_m`. Cells outside the map are zero.
pub fn crop_window(map: &SoftMap, center_m: Vec2, side: usize) -> Patch {
    let (cx, cy) = map.grid.nearest_cell(center_m);
    let half = (side / 2) as i64;
    let mut pixels = vec![0.0; side * side];
    for r in 0..side {
        for c in 0..side {
            pixels[r * side + c] = map.get_or_zero(cx - half + c as i64, cy - half + r as i64);
        }
    }
    Patch {
        pixels,
        side,
        center_m,
        scan_index: map.scan_index,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPatch {
    pub patch: Patch,
    pub class: TargetClass,
}

/// Crops around each true target position displaced by N(0, σ_w²I) and
/// balances the classes by subsampling the majority class.
pub fn make_training_set<R: Rng>(
    scans: &[(SoftMap, Vec<TruthState>)],
    side: usize,
    sigma_w: f64,
    rng: &mut R,
) -> Result<Vec<LabeledPatch>> {
    let normal = Normal::new(0.0, sigma_w).map_err(|e| Error::Domain(e.to_string()))?;
    let mut by_class: [Vec<LabeledPatch>; 2] = [Vec::new(), Vec::new()];
    for (map, truth) in scans {
        for t in truth {
            let d = if sigma_w > 0.0 {
                [normal.sample(rng), normal.sample(rng)]
            } else {
                [0.0, 0.0]
            };
            let center = [t.position[0] + d[0], t.position[1] + d[1]];
            by_class[t.class.index()].push(LabeledPatch {
                patch: crop_window(map, center, side),
                class: t.class,
            });
        }
    }
    if by_class.iter().any(Vec::is_empty) {
        return Err(Error::Domain(
            "training set needs examples of both classes".into(),
        ));
    }
    let n = by_class[0].len().min(by_class[1].len());
    let mut out = Vec::with_capacity(2 * n);
    for group in &mut by_class {
        if group.len() > n {
            let mut idx: Vec<usize> = (0..group.len()).collect();
            idx.shuffle(rng);
            let mut keep = idx[..n].to_vec();
            keep.sort_unstable();
            *group = keep.into_iter().map(|i| group[i].clone()).collect();
        }
    }
    let [a, b] = by_class;
    out.extend(a);
    out.extend(b);
    Ok(out)
}

/// Stratified split: the last `fraction` of each class (after a seeded
/// shuffle) goes to the second set.
pub fn stratified_split<R: Rng>(
    data: &[LabeledPatch],
    fraction: f64,
    rng: &mut R,
) -> (Vec<LabeledPatch>, Vec<LabeledPatch>) {
    let mut train = Vec::new();
    let mut held = Vec::new();
    for class in TargetClass::ALL {
        let mut idx: Vec<usize> = (0..data.len())
            .filter(|&i| data[i].class == class)
            .collect();
        idx.shuffle(rng);
        let n_held = (idx.len() as f64 * fraction).round() as usize;
        let split = idx.len() - n_held;
        train.extend(idx[..split].iter().map(|&i| data[i].clone()));
        held.extend(idx[split..].iter().map(|&i| data[i].clone()));
    }
    (train, held)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::GridSpec;
    use crate::scenario::Area;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn map() -> SoftMap {
        SoftMap::zeros(GridSpec::covering(&Area::square(10.0), 0.1, 0.1), 3)
    }

    #[test]
    fn one_dissenting_scan_does_not_flip_a_settled_track() {
        let mut e = 0.0;
        for _ in 0..5 {
            e = accumulate_evidence(e, [0.01, 0.99], 20.0);
        }
        assert_eq!(e, 20.0);
        e = accumulate_evidence(e, [0.99, 0.01], 20.0);
        assert_eq!(
            class_from_evidence(e, TargetClass::Pedestrian),
            TargetClass::Vehicle
        );
        for _ in 0..5 {
            e = accumulate_evidence(e, [0.99, 0.01], 20.0);
        }
        assert_eq!(
            class_from_evidence(e, TargetClass::Vehicle),
            TargetClass::Pedestrian
        );
    }

    #[test]
    fn zero_cap_follows_the_latest_scan() {
        let e = accumulate_evidence(0.0, [0.2, 0.8], 0.0);
        assert_eq!(e, 0.0);
        assert_eq!(
            class_from_evidence(e, TargetClass::Vehicle),
            TargetClass::Vehicle
        );
        assert_eq!(
            class_from_evidence(e, TargetClass::Pedestrian),
            TargetClass::Pedestrian
        );
        assert!(accumulate_evidence(0.0, [0.0, 1.0], 50.0).is_finite());
    }

    #[test]
    fn default_window_is_sixty_cells() {
        assert_eq!(ClassifierConfig::default().side(0.1), 60);
    }

    #[test]
    fn impulse_lands_on_center_pixel() {
        let mut m = map();
        let (ix, iy) = m.grid.nearest_cell([1.23, -4.56]);
        m.set(ix as usize, iy as usize, 2.0);
        let p = crop_window(&m, [1.23, -4.56], 60);
        assert_eq!(p.get(30, 30), 2.0);
        assert_eq!(p.pixels.iter().filter(|v| **v != 0.0).count(), 1);
        assert_eq!(p.scan_index, 3);
    }

    #[test]
    fn corner_crop_is_zero_padded() {
        let mut m = map();
        m.values.iter_mut().for_each(|v| *v = 1.0);
        let p = crop_window(&m, [-9.95, -9.95], 60);
        // the corner cell sits at the center pixel; rows and columns before it are outside
        assert_eq!(p.get(29, 29), 0.0);
        assert_eq!(p.get(30, 30), 1.0);
        assert_eq!(p.get(59, 59), 1.0);
        assert_eq!(p.pixels.iter().filter(|v| **v == 1.0).count(), 30 * 30);
    }

    fn truth(class: TargetClass, p: Vec2) -> TruthState {
        TruthState {
            id: 0,
            class,
            position: p,
            velocity: [0.0, 0.0],
        }
    }

    #[test]
    fn zero_sigma_centers_on_truth() {
        let mut m = map();
        let (ix, iy) = m.grid.nearest_cell([2.0, 2.0]);
        m.set(ix as usize, iy as usize, 1.0);
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let scans = vec![(
            m,
            vec![
                truth(TargetClass::Pedestrian, [2.0, 2.0]),
                truth(TargetClass::Vehicle, [-2.0, 0.0]),
            ],
        )];
        let set = make_training_set(&scans, 20, 0.0, &mut r).unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!(set[0].patch.get(10, 10), 1.0);
    }

    #[test]
    fn displacement_is_rayleigh() {
        let mut r = ChaCha8Rng::seed_from_u64(2);
        let n = Normal::new(0.0, 0.5).unwrap();
        let mean = (0..10_000)
            .map(|_| f64::hypot(n.sample(&mut r), n.sample(&mut r)))
            .sum::<f64>()
            / 1e4;
        let expect = 0.5 * (std::f64::consts::PI / 2.0).sqrt();
        assert!((mean / expect - 1.0).abs() < 0.02, "{mean}");
        assert!((expect - 0.627).abs() < 1e-3);
    }

    #[test]
    fn classes_are_balanced_and_required() {
        let mut r = ChaCha8Rng::seed_from_u64(3);
        let scans: Vec<_> = (0..10)
            .map(|_| {
                (
                    map(),
                    vec![
                        truth(TargetClass::Pedestrian, [0.0, 0.0]),
                        truth(TargetClass::Pedestrian, [3.0, 0.0]),
                        truth(TargetClass::Vehicle, [0.0, 3.0]),
                    ],
                )
            })
            .collect();
        let set = make_training_set(&scans, 10, 0.5, &mut r).unwrap();
        assert_eq!(
            set.iter()
                .filter(|p| p.class == TargetClass::Vehicle)
                .count(),
            10
        );
        assert_eq!(set.len(), 20);
        let only_ped = vec![(map(), vec![truth(TargetClass::Pedestrian, [0.0, 0.0])])];
        assert!(make_training_set(&only_ped, 10, 0.5, &mut r).is_err());
    }

    #[test]
    fn max_normalization_is_scale_invariant() {
        let px = vec![0.0, 1.0, 3.0, 2.0];
        assert_eq!(
            Normalization::Max.apply(&px, 1.0),
            Normalization::Max.apply(&px.iter().map(|v| v * 7.5).collect::<Vec<_>>(), 1.0)
        );
    }
}
