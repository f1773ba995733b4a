//! Gaussian-mixture PHD filter.

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use super::kalman::{
    kalman_predict, kalman_update_with, repair_psd, Gaussian, Innovation, MotionModel,
};
use super::{BirthModel, IdAllocator, Measurement, TrackEstimate};
use crate::error::{Error, Result};
use crate::scenario::TargetClass;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianComponent {
    pub weight: f64,
    pub gaussian: Gaussian,
    pub track_id: u64,
    pub class_label: Option<TargetClass>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhdConfig {
    /// γ_p.
    pub prune_thresh: f64,
    /// γ_q.
    pub cap: usize,
}

impl Default for PhdConfig {
    fn default() -> Self {
        Self {
            prune_thresh: 1e-4,
            cap: 10,
        }
    }
}

/// Survival-scaled Kalman prediction followed by the birth components, each
/// with a fresh track id.
pub fn phd_predict(
    mixture: &[GaussianComponent],
    model: &MotionModel,
    birth: &BirthModel,
    ids: &mut IdAllocator,
) -> Vec<GaussianComponent> {
    let mut out: Vec<GaussianComponent> = mixture
        .iter()
        .map(|c| GaussianComponent {
            weight: c.weight * model.survival_prob,
            gaussian: kalman_predict(&c.gaussian, model),
            track_id: c.track_id,
            class_label: c.class_label,
        })
        .collect();
    out.extend(birth.components.iter().map(|b| GaussianComponent {
        weight: b.weight,
        gaussian: b.gaussian,
        track_id: ids.fresh(),
        class_label: None,
    }));
    out
}

/// Missed-detection copies first, then one block of updated copies per
/// measurement. Output size is H·(M + 1).
pub fn phd_update(
    mixture: &[GaussianComponent],
    measurements: &[Measurement],
    model: &MotionModel,
) -> Result<Vec<GaussianComponent>> {
    let pd = model.detection_prob;
    let mut out: Vec<GaussianComponent> = mixture
        .iter()
        .map(|c| GaussianComponent {
            weight: c.weight * (1.0 - pd),
            ..c.clone()
        })
        .collect();
    for m in measurements {
        let mut block = Vec::with_capacity(mixture.len());
        for c in mixture {
            let inn = Innovation::new(&c.gaussian, &m.z, &m.r, model)?;
            let post = kalman_update_with(&c.gaussian, &inn, &m.r, model);
            block.push(GaussianComponent {
                weight: pd * c.weight * inn.log_likelihood().exp(),
                gaussian: post,
                track_id: c.track_id,
                class_label: c.class_label,
            });
        }
        let denom = model.clutter_density + block.iter().map(|c| c.weight).sum::<f64>();
        for c in &mut block {
            c.weight /= denom;
        }
        out.extend(block);
    }
    if out.iter().any(|c| !c.weight.is_finite()) {
        return Err(Error::Domain("non-finite PHD weight".into()));
    }
    Ok(out)
}

fn by_weight_desc(a: &GaussianComponent, b: &GaussianComponent) -> std::cmp::Ordering {
    b.weight
        .total_cmp(&a.weight)
        .then(a.track_id.cmp(&b.track_id))
}

/// Weighted moment match; the result keeps the id and label of the
/// heaviest member.
pub fn merge_components(members: &[GaussianComponent]) -> GaussianComponent {
    let w: f64 = members.iter().map(|c| c.weight).sum();
    let mut mean = Vector4::zeros();
    for c in members {
        mean += c.gaussian.mean * c.weight;
    }
    mean /= w;
    let mut cov = Matrix4::zeros();
    for c in members {
        let d = c.gaussian.mean - mean;
        cov += (c.gaussian.cov + d * d.transpose()) * c.weight;
    }
    cov /= w;
    let head = members
        .iter()
        .min_by(|a, b| by_weight_desc(a, b))
        .expect("nonempty merge set");
    GaussianComponent {
        weight: w,
        gaussian: Gaussian::new(mean, cov),
        track_id: head.track_id,
        class_label: head.class_label,
    }
}

/// Greedy merge: repeatedly take the heaviest remaining component and fold
/// in every remaining one whose mean lies closer than `thresh`.
pub fn merge_greedy(mut comps: Vec<GaussianComponent>, thresh: f64) -> Vec<GaussianComponent> {
    comps.sort_by(by_weight_desc);
    let mut out = Vec::new();
    let mut used = vec![false; comps.len()];
    for i in 0..comps.len() {
        if used[i] {
            continue;
        }
        let anchor = comps[i].gaussian.mean;
        let mut set = Vec::new();
        for j in i..comps.len() {
            if !used[j] && (comps[j].gaussian.mean - anchor).norm() < thresh {
                used[j] = true;
                set.push(comps[j].clone());
            }
        }
        out.push(merge_components(&set));
    }
    out
}

/// Prune below γ_p, cap to γ_q, then merge. Returns the mixture and the
/// number of covariance repairs applied.
pub fn phd_postprocess(
    mixture: Vec<GaussianComponent>,
    cfg: &PhdConfig,
    merge_thresh: f64,
) -> (Vec<GaussianComponent>, usize) {
    let mut kept: Vec<GaussianComponent> = mixture
        .into_iter()
        .filter(|c| c.weight >= cfg.prune_thresh)
        .collect();
    kept.sort_by(by_weight_desc);
    kept.truncate(cfg.cap);
    let mut merged = merge_greedy(kept, merge_thresh);
    let mut repairs = 0;
    for c in &mut merged {
        if repair_psd(&mut c.gaussian.cov) {
            repairs += 1;
        }
    }
    (merged, repairs)
}

/// N̂ = round(Σw); the N̂ heaviest components (ties to the lower id).
pub fn phd_estimate(mixture: &[GaussianComponent]) -> Vec<TrackEstimate> {
    let total: f64 = mixture.iter().map(|c| c.weight).sum();
    let n = total.round() as usize;
    let mut sorted: Vec<&GaussianComponent> = mixture.iter().collect();
    sorted.sort_by(|a, b| by_weight_desc(a, b));
    sorted
        .into_iter()
        .take(n)
        .map(|c| TrackEstimate {
            track_id: c.track_id,
            state: c.gaussian.mean.into(),
            weight: c.weight,
            class_label: c.class_label,
            gaussian: c.gaussian,
        })
        .collect()
}
