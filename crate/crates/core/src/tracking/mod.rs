//! Multi-target tracking over clustered detections with two interchangeable
//! filters sharing one motion model, birth model and post-processing.

pub mod kalman;
pub mod mbm;
pub mod phd;

use nalgebra::{Matrix2, Matrix4, Vector2, Vector4};
use serde::{Deserialize, Serialize};

pub use kalman::{kalman_predict, kalman_update, repair_psd, Gaussian, Innovation, MotionModel};
pub use mbm::{
    mbm_estimate, mbm_postprocess, mbm_predict, mbm_update, missed_existence, Bernoulli,
    GlobalHypothesis, MbmConfig, MbmDistribution,
};
pub use phd::{
    phd_estimate, phd_postprocess, phd_predict, phd_update, GaussianComponent, PhdConfig,
};

use crate::clustering::{MeasurementSet, PredictedTrack};
use crate::error::{Error, Result};
use crate::scenario::{Area, BirthSite, TargetClass};

/// Target state (x, y, vx, vy).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    pub x_m: f64,
    pub y_m: f64,
    pub vx_mps: f64,
    pub vy_mps: f64,
}

impl From<Vector4<f64>> for StateVector {
    fn from(v: Vector4<f64>) -> Self {
        Self {
            x_m: v[0],
            y_m: v[1],
            vx_mps: v[2],
            vy_mps: v[3],
        }
    }
}

impl StateVector {
    pub fn position(&self) -> [f64; 2] {
        [self.x_m, self.y_m]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackEstimate {
    pub track_id: u64,
    pub state: StateVector,
    /// PHD weight or MBM existence probability.
    pub weight: f64,
    pub class_label: Option<TargetClass>,
    pub gaussian: Gaussian,
}

/// Position measurement with its covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub z: Vector2<f64>,
    pub r: Matrix2<f64>,
}

impl Measurement {
    pub fn from_set(set: &MeasurementSet) -> Vec<Measurement> {
        set.centroids_m
            .iter()
            .zip(&set.covariances)
            .map(|(c, r)| Measurement {
                z: Vector2::new(c[0], c[1]),
                r: *r,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BirthComponent {
    /// PHD weight or Bernoulli existence.
    pub weight: f64,
    pub gaussian: Gaussian,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BirthModel {
    pub components: Vec<BirthComponent>,
}

impl BirthModel {
    /// One component per spawn site plus a wide recovery component at the
    /// center of the area.
    pub fn from_layout(sites: &[BirthSite], area: &Area, cfg: &TrackerConfig) -> Self {
        let mut components: Vec<BirthComponent> = sites
            .iter()
            .map(|s| BirthComponent {
                weight: cfg.birth_weight,
                gaussian: Gaussian::new(
                    Vector4::new(
                        s.position_m[0],
                        s.position_m[1],
                        s.velocity_mps[0],
                        s.velocity_mps[1],
                    ),
                    Matrix4::identity() * cfg.birth_cov,
                ),
            })
            .collect();
        let c = area.center();
        components.push(BirthComponent {
            weight: cfg.recovery_weight,
            gaussian: Gaussian::new(
                Vector4::new(c[0], c[1], 0.0, 0.0),
                Matrix4::identity() * cfg.recovery_cov,
            ),
        });
        Self { components }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdAllocator {
    next: u64,
}

impl IdAllocator {
    pub fn fresh(&mut self) -> u64 {
        let id = self.next;
        self.next += 1;
        id
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    /// P_s.
    pub survival_prob: f64,
    /// P_d.
    pub detection_prob: f64,
    /// λ_c.
    pub clutter_intensity: f64,
    /// α_q.
    pub process_noise_scale: f64,
    /// Diagonal of P for tracks seeded from the first scan.
    pub initial_cov: f64,
    /// Weight or existence of seeded tracks.
    pub initial_weight: f64,
    pub birth_weight: f64,
    /// Diagonal of P^(b).
    pub birth_cov: f64,
    pub recovery_weight: f64,
    pub recovery_cov: f64,
    /// γ_m (also called γ_s).
    pub merge_thresh: f64,
    pub phd: PhdConfig,
    pub mbm: MbmConfig,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            survival_prob: 0.9,
            detection_prob: 0.99,
            clutter_intensity: 0.1,
            process_noise_scale: 5.0,
            initial_cov: 0.5,
            initial_weight: 0.5,
            birth_weight: 0.01,
            birth_cov: 0.1,
            recovery_weight: 0.01,
            recovery_cov: 5.0,
            merge_thresh: 5.0,
            phd: PhdConfig::default(),
            mbm: MbmConfig::default(),
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.clutter_intensity,
            self.process_noise_scale,
            self.initial_cov,
            self.birth_cov,
            self.recovery_cov,
            self.merge_thresh,
            self.phd.prune_thresh,
            self.mbm.bernoulli_prune,
            self.mbm.assoc_gate,
        ];
        if positive.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::config(
                "tracker: thresholds, covariances and lambda_c must be > 0",
            ));
        }
        let probs = [
            self.initial_weight,
            self.birth_weight,
            self.recovery_weight,
            self.mbm.existence_thresh,
        ];
        if probs.iter().any(|v| !(*v > 0.0 && *v <= 1.0)) || !(self.mbm.global_prune >= 0.0) {
            return Err(Error::config(
                "tracker: weights and existence threshold must be in (0, 1]",
            ));
        }
        if self.phd.cap == 0 || self.mbm.cap == 0 || self.mbm.max_children == 0 {
            return Err(Error::config("tracker: caps must be >= 1"));
        }
        Ok(())
    }

    pub fn motion_model(&self, scan_period_s: f64, area: &Area) -> Result<MotionModel> {
        MotionModel::new(
            scan_period_s,
            self.process_noise_scale,
            self.survival_prob,
            self.detection_prob,
            self.clutter_intensity,
            area.size(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    Phd,
    Mbm,
}

impl FilterKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FilterKind::Phd => "phd",
            FilterKind::Mbm => "mbm",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FilterState {
    Phd(Vec<GaussianComponent>),
    Mbm(MbmDistribution),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub estimates: Vec<TrackEstimate>,
    /// Next-scan positions (F·μ) of the estimated tracks.
    pub predicted: Vec<PredictedTrack>,
}

/// Filter state plus the models it is advanced with.
#[derive(Debug, Clone)]
pub struct Tracker {
    pub kind: FilterKind,
    pub model: MotionModel,
    pub birth: BirthModel,
    pub config: TrackerConfig,
    pub state: FilterState,
    ids: IdAllocator,
    started: bool,
    /// Covariances that needed jitter to stay positive definite.
    pub psd_repairs: usize,
}

impl Tracker {
    pub fn new(
        kind: FilterKind,
        model: MotionModel,
        birth: BirthModel,
        config: TrackerConfig,
    ) -> Self {
        let state = match kind {
            FilterKind::Phd => FilterState::Phd(Vec::new()),
            FilterKind::Mbm => FilterState::Mbm(MbmDistribution::default()),
        };
        Self {
            kind,
            model,
            birth,
            config,
            state,
            ids: IdAllocator::default(),
            started: false,
            psd_repairs: 0,
        }
    }

    fn seeds(&mut self, meas: &[Measurement]) -> Vec<(u64, Gaussian)> {
        meas.iter()
            .map(|m| {
                let g = Gaussian::new(
                    Vector4::new(m.z[0], m.z[1], 0.0, 0.0),
                    Matrix4::identity() * self.config.initial_cov,
                );
                (self.ids.fresh(), g)
            })
            .collect()
    }

    /// Predict, update, post-process and extract. The first call seeds one
    /// track per measurement in place of the prediction.
    pub fn step(&mut self, meas: &[Measurement]) -> Result<StepOutput> {
        let first = !self.started;
        self.started = true;
        let seeds = if first { self.seeds(meas) } else { Vec::new() };
        let cfg = self.config;
        let estimates = match &mut self.state {
            FilterState::Phd(mix) => {
                let mut predicted = if first {
                    seeds
                        .into_iter()
                        .map(|(id, g)| GaussianComponent {
                            weight: cfg.initial_weight,
                            gaussian: g,
                            track_id: id,
                            class_label: None,
                        })
                        .collect()
                } else {
                    Vec::new()
                };
                predicted.extend(phd_predict(mix, &self.model, &self.birth, &mut self.ids));
                let posterior = phd_update(&predicted, meas, &self.model)?;
                let (post, repairs) = phd_postprocess(posterior, &cfg.phd, cfg.merge_thresh);
                self.psd_repairs += repairs;
                *mix = post;
                phd_estimate(mix)
            }
            FilterState::Mbm(dist) => {
                let mut predicted = mbm_predict(dist, &self.model, &self.birth, &mut self.ids);
                if first {
                    let seeded: Vec<Bernoulli> = seeds
                        .into_iter()
                        .map(|(id, g)| Bernoulli {
                            existence: cfg.initial_weight,
                            gaussian: g,
                            track_id: id,
                            class_label: None,
                        })
                        .collect();
                    if predicted.hypotheses.is_empty() {
                        let births = mbm_predict(
                            &MbmDistribution {
                                hypotheses: vec![GlobalHypothesis {
                                    weight: 1.0,
                                    bernoullis: Vec::new(),
                                }],
                            },
                            &self.model,
                            &self.birth,
                            &mut self.ids,
                        );
                        predicted = births;
                    }
                    for h in &mut predicted.hypotheses {
                        let mut bs = seeded.clone();
                        bs.append(&mut h.bernoullis);
                        h.bernoullis = bs;
                    }
                }
                let posterior = mbm_update(&predicted, meas, &self.model, &cfg.mbm)?;
                let (post, repairs) = mbm_postprocess(posterior, &cfg.mbm, cfg.merge_thresh);
                self.psd_repairs += repairs;
                *dist = post;
                mbm_estimate(dist, cfg.mbm.existence_thresh)
            }
        };
        let predicted = estimates
            .iter()
            .map(|e| {
                let p = kalman_predict(&e.gaussian, &self.model);
                PredictedTrack {
                    id: e.track_id,
                    position_m: p.position(),
                    class: e.class_label,
                }
            })
            .collect();
        Ok(StepOutput {
            estimates,
            predicted,
        })
    }

    /// Attaches a class label to every component carrying `track_id`.
    pub fn set_label(&mut self, track_id: u64, class: TargetClass) {
        match &mut self.state {
            FilterState::Phd(mix) => {
                for c in mix.iter_mut().filter(|c| c.track_id == track_id) {
                    c.class_label = Some(class);
                }
            }
            FilterState::Mbm(d) => {
                for h in &mut d.hypotheses {
                    for b in h.bernoullis.iter_mut().filter(|b| b.track_id == track_id) {
                        b.class_label = Some(class);
                    }
                }
            }
        }
    }

    pub fn component_count(&self) -> usize {
        match &self.state {
            FilterState::Phd(m) => m.len(),
            FilterState::Mbm(d) => d.bernoulli_count(),
        }
    }
}
