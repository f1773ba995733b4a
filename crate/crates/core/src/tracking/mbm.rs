//! Multi-Bernoulli mixture filter with exhaustive gated data association.

use serde::{Deserialize, Serialize};

use super::kalman::{
    kalman_predict, kalman_update_with, repair_psd, Gaussian, Innovation, MotionModel,
};
use super::{BirthModel, IdAllocator, Measurement, TrackEstimate};
use crate::error::{Error, Result};
use crate::scenario::TargetClass;

#[derive(Debug, Clone, PartialEq)]
pub struct Bernoulli {
    pub existence: f64,
    pub gaussian: Gaussian,
    pub track_id: u64,
    pub class_label: Option<TargetClass>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalHypothesis {
    pub weight: f64,
    pub bernoullis: Vec<Bernoulli>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MbmDistribution {
    pub hypotheses: Vec<GlobalHypothesis>,
}

impl MbmDistribution {
    pub fn weight_sum(&self) -> f64 {
        self.hypotheses.iter().map(|h| h.weight).sum()
    }

    pub fn bernoulli_count(&self) -> usize {
        self.hypotheses.iter().map(|h| h.bernoullis.len()).sum()
    }

    /// Index of the heaviest hypothesis; the first one wins ties.
    pub fn best(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, h) in self.hypotheses.iter().enumerate() {
            if best.is_none_or(|b| h.weight > self.hypotheses[b].weight) {
                best = Some(i);
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MbmConfig {
    /// γ_l.
    pub bernoulli_prune: f64,
    /// γ_g.
    pub global_prune: f64,
    /// γ_c.
    pub cap: usize,
    /// ξ_a, squared Mahalanobis gate.
    pub assoc_gate: f64,
    /// γ_e.
    pub existence_thresh: f64,
    /// Upper bound on children kept per parent hypothesis.
    pub max_children: usize,
}

impl Default for MbmConfig {
    fn default() -> Self {
        Self {
            bernoulli_prune: 1e-4,
            global_prune: 1e-15,
            cap: 10,
            assoc_gate: 14.0,
            existence_thresh: 0.99,
            max_children: 1000,
        }
    }
}

/// Existence after a missed detection.
pub fn missed_existence(r: f64, pd: f64) -> f64 {
    r * (1.0 - pd) / (1.0 - r * pd)
}

/// Survival prediction for every Bernoulli, then the birth Bernoullis
/// appended to each hypothesis under one shared set of fresh ids.
pub fn mbm_predict(
    dist: &MbmDistribution,
    model: &MotionModel,
    birth: &BirthModel,
    ids: &mut IdAllocator,
) -> MbmDistribution {
    let births: Vec<Bernoulli> = birth
        .components
        .iter()
        .map(|b| Bernoulli {
            existence: b.weight,
            gaussian: b.gaussian,
            track_id: ids.fresh(),
            class_label: None,
        })
        .collect();
    let hypotheses = dist
        .hypotheses
        .iter()
        .map(|h| {
            let mut bs: Vec<Bernoulli> = h
                .bernoullis
                .iter()
                .map(|b| Bernoulli {
                    existence: b.existence * model.survival_prob,
                    gaussian: kalman_predict(&b.gaussian, model),
                    track_id: b.track_id,
                    class_label: b.class_label,
                })
                .collect();
            bs.extend(births.iter().cloned());
            GlobalHypothesis {
                weight: h.weight,
                bernoullis: bs,
            }
        })
        .collect();
    MbmDistribution { hypotheses }
}

struct PairTable {
    /// gain[l][j] = log(r P_d ℓ) − log(1 − r P_d), None outside the gate.
    gain: Vec<Vec<Option<f64>>>,
    posterior: Vec<Vec<Option<Gaussian>>>,
    missed_log_sum: f64,
}

fn pair_table(
    bs: &[Bernoulli],
    meas: &[Measurement],
    model: &MotionModel,
    gate: f64,
) -> Result<PairTable> {
    let pd = model.detection_prob;
    let mut gain = vec![vec![None; meas.len()]; bs.len()];
    let mut posterior = vec![vec![None; meas.len()]; bs.len()];
    let mut missed_log_sum = 0.0;
    for (l, b) in bs.iter().enumerate() {
        let miss = (1.0 - b.existence * pd).ln();
        missed_log_sum += miss;
        if b.existence <= 0.0 {
            continue;
        }
        for (j, m) in meas.iter().enumerate() {
            let inn = Innovation::new(&b.gaussian, &m.z, &m.r, model)?;
            if inn.mahalanobis_sq() <= gate {
                gain[l][j] = Some((b.existence * pd).ln() + inn.log_likelihood() - miss);
                posterior[l][j] = Some(kalman_update_with(&b.gaussian, &inn, &m.r, model));
            }
        }
    }
    Ok(PairTable {
        gain,
        posterior,
        missed_log_sum,
    })
}

/// Association of each measurement to a Bernoulli index or to clutter.
type Assoc = Vec<Option<usize>>;

struct Search {
    /// Optimistic bound on the score still obtainable from measurements j.. onward.
    tail_bound: Vec<f64>,
    /// Options per measurement, best first.
    options: Vec<Vec<(Option<usize>, f64)>>,
    log_gate: f64,
    best: f64,
    leaves: Vec<(f64, Assoc)>,
}

impl Search {
    fn run(&mut self, j: usize, score: f64, used: &mut Vec<bool>, assoc: &mut Assoc) {
        if score + self.tail_bound[j] < self.best + self.log_gate {
            return;
        }
        if j == assoc.len() {
            self.best = self.best.max(score);
            self.leaves.push((score, assoc.clone()));
            return;
        }
        for k in 0..self.options[j].len() {
            let (opt, s) = self.options[j][k];
            match opt {
                Some(l) if used[l] => continue,
                Some(l) => {
                    used[l] = true;
                    assoc[j] = Some(l);
                    self.run(j + 1, score + s, used, assoc);
                    used[l] = false;
                    assoc[j] = None;
                }
                None => self.run(j + 1, score + s, used, assoc),
            }
        }
    }
}

/// Children of every hypothesis over all gated associations. Measurements
/// may go to at most one Bernoulli each or to clutter; missed Bernoullis
/// take r(1 − P_d)/(1 − rP_d) and detected ones r = 1. Children below γ_g
/// after normalization are dropped.
pub fn mbm_update(
    dist: &MbmDistribution,
    meas: &[Measurement],
    model: &MotionModel,
    cfg: &MbmConfig,
) -> Result<MbmDistribution> {
    let clutter_log = model.clutter_density.ln();
    let log_gate = cfg.global_prune.ln();
    let mut children: Vec<(f64, GlobalHypothesis)> = Vec::new();
    for h in &dist.hypotheses {
        if h.weight <= 0.0 {
            continue;
        }
        let table = pair_table(&h.bernoullis, meas, model, cfg.assoc_gate)?;
        let options: Vec<Vec<(Option<usize>, f64)>> = (0..meas.len())
            .map(|j| {
                let mut o: Vec<(Option<usize>, f64)> = vec![(None, clutter_log)];
                for (l, row) in table.gain.iter().enumerate() {
                    if let Some(g) = row[j] {
                        o.push((Some(l), g));
                    }
                }
                o.sort_by(|a, b| b.1.total_cmp(&a.1));
                o
            })
            .collect();
        let mut tail_bound = vec![0.0; meas.len() + 1];
        for j in (0..meas.len()).rev() {
            tail_bound[j] = tail_bound[j + 1] + options[j][0].1;
        }
        let mut search = Search {
            tail_bound,
            options,
            log_gate,
            best: f64::NEG_INFINITY,
            leaves: Vec::new(),
        };
        search.run(
            0,
            0.0,
            &mut vec![false; h.bernoullis.len()],
            &mut vec![None; meas.len()],
        );
        let best = search.best;
        let mut leaves: Vec<(f64, Assoc)> = search
            .leaves
            .into_iter()
            .filter(|(s, _)| *s >= best + log_gate)
            .collect();
        leaves.sort_by(|a, b| b.0.total_cmp(&a.0));
        leaves.truncate(cfg.max_children.max(1));
        let pd = model.detection_prob;
        for (score, assoc) in leaves {
            let mut detected_by: Vec<Option<usize>> = vec![None; h.bernoullis.len()];
            for (j, a) in assoc.iter().enumerate() {
                if let Some(l) = a {
                    detected_by[*l] = Some(j);
                }
            }
            let bs = h
                .bernoullis
                .iter()
                .enumerate()
                .map(|(l, b)| match detected_by[l] {
                    Some(j) => Bernoulli {
                        existence: 1.0,
                        gaussian: table.posterior[l][j].expect("gated pair has a posterior"),
                        track_id: b.track_id,
                        class_label: b.class_label,
                    },
                    None => Bernoulli {
                        existence: missed_existence(b.existence, pd),
                        ..b.clone()
                    },
                })
                .collect();
            let log_w = h.weight.ln() + table.missed_log_sum + score;
            children.push((
                log_w,
                GlobalHypothesis {
                    weight: 0.0,
                    bernoullis: bs,
                },
            ));
        }
    }
    if children.is_empty() {
        return Err(Error::Domain("MBM update produced no hypotheses".into()));
    }
    let max = children
        .iter()
        .map(|c| c.0)
        .fold(f64::NEG_INFINITY, f64::max);
    let norm: f64 = children.iter().map(|c| (c.0 - max).exp()).sum();
    let hypotheses: Vec<GlobalHypothesis> = children
        .into_iter()
        .map(|(lw, mut h)| {
            h.weight = (lw - max).exp() / norm;
            h
        })
        .filter(|h| h.weight >= cfg.global_prune)
        .collect();
    let mut out = MbmDistribution { hypotheses };
    renormalize(&mut out);
    Ok(out)
}

fn renormalize(d: &mut MbmDistribution) {
    let s = d.weight_sum();
    for h in &mut d.hypotheses {
        h.weight /= s;
    }
}

/// Existence-weighted moment merge with r = min(1, Σr); keeps the id and
/// label of the most likely member.
pub fn merge_bernoullis(members: &[Bernoulli]) -> Bernoulli {
    let rs: f64 = members.iter().map(|b| b.existence).sum();
    let mut mean = nalgebra::Vector4::zeros();
    for b in members {
        mean += b.gaussian.mean * b.existence;
    }
    mean /= rs;
    let mut cov = nalgebra::Matrix4::zeros();
    for b in members {
        let d = b.gaussian.mean - mean;
        cov += (b.gaussian.cov + d * d.transpose()) * b.existence;
    }
    cov /= rs;
    let head = members
        .iter()
        .min_by(|a, b| {
            b.existence
                .total_cmp(&a.existence)
                .then(a.track_id.cmp(&b.track_id))
        })
        .expect("nonempty merge set");
    Bernoulli {
        existence: rs.min(1.0),
        gaussian: Gaussian::new(mean, cov),
        track_id: head.track_id,
        class_label: head.class_label,
    }
}

/// Drop Bernoullis below γ_l and hypotheses below γ_g, keep the γ_c
/// heaviest hypotheses, renormalize, then merge close Bernoullis within the
/// heaviest hypothesis.
pub fn mbm_postprocess(
    mut dist: MbmDistribution,
    cfg: &MbmConfig,
    merge_thresh: f64,
) -> (MbmDistribution, usize) {
    for h in &mut dist.hypotheses {
        h.bernoullis.retain(|b| b.existence >= cfg.bernoulli_prune);
    }
    dist.hypotheses.retain(|h| h.weight >= cfg.global_prune);
    dist.hypotheses
        .sort_by(|a, b| b.weight.total_cmp(&a.weight));
    dist.hypotheses.truncate(cfg.cap.max(1));
    renormalize(&mut dist);
    let mut repairs = 0;
    if let Some(best) = dist.best() {
        let mut bs = std::mem::take(&mut dist.hypotheses[best].bernoullis);
        bs.sort_by(|a, b| {
            b.existence
                .total_cmp(&a.existence)
                .then(a.track_id.cmp(&b.track_id))
        });
        let mut used = vec![false; bs.len()];
        let mut merged = Vec::new();
        for i in 0..bs.len() {
            if used[i] {
                continue;
            }
            let anchor = bs[i].gaussian.mean;
            let mut set = Vec::new();
            for j in i..bs.len() {
                if !used[j] && (bs[j].gaussian.mean - anchor).norm() < merge_thresh {
                    used[j] = true;
                    set.push(bs[j].clone());
                }
            }
            merged.push(if set.len() == 1 {
                set.pop().unwrap()
            } else {
                merge_bernoullis(&set)
            });
        }
        dist.hypotheses[best].bernoullis = merged;
    }
    for h in &mut dist.hypotheses {
        for b in &mut h.bernoullis {
            if repair_psd(&mut b.gaussian.cov) {
                repairs += 1;
            }
        }
    }
    (dist, repairs)
}

/// Bernoullis with r ≥ γ_e from the heaviest hypothesis.
pub fn mbm_estimate(dist: &MbmDistribution, existence_thresh: f64) -> Vec<TrackEstimate> {
    let Some(best) = dist.best() else {
        return Vec::new();
    };
    dist.hypotheses[best]
        .bernoullis
        .iter()
        .filter(|b| b.existence >= existence_thresh)
        .map(|b| TrackEstimate {
            track_id: b.track_id,
            state: b.gaussian.mean.into(),
            weight: b.existence,
            class_label: b.class_label,
            gaussian: b.gaussian,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tracking::BirthComponent;
    use nalgebra::{Matrix2, Matrix4, Vector2, Vector4};

    fn model() -> MotionModel {
        MotionModel::new(0.05, 5.0, 0.9, 0.99, 0.1, 1600.0).unwrap()
    }

    fn bern(r: f64, x: f64, y: f64, id: u64) -> Bernoulli {
        Bernoulli {
            existence: r,
            gaussian: Gaussian::new(Vector4::new(x, y, 0.0, 0.0), Matrix4::identity() * 0.5),
            track_id: id,
            class_label: None,
        }
    }

    fn meas(x: f64, y: f64) -> Measurement {
        Measurement {
            z: Vector2::new(x, y),
            r: Matrix2::identity() * 0.1,
        }
    }

    fn single(bs: Vec<Bernoulli>) -> MbmDistribution {
        MbmDistribution {
            hypotheses: vec![GlobalHypothesis {
                weight: 1.0,
                bernoullis: bs,
            }],
        }
    }

    #[test]
    fn missed_detection_existence() {
        let r = missed_existence(0.9, 0.99);
        assert!((r - 0.009 / 0.109).abs() < 1e-15);
        assert!((r - 0.08257).abs() < 1e-5);
        let d = mbm_update(
            &single(vec![bern(0.9, 0.0, 0.0, 0)]),
            &[],
            &model(),
            &MbmConfig::default(),
        )
        .unwrap();
        assert_eq!(d.hypotheses.len(), 1);
        assert!((d.hypotheses[0].bernoullis[0].existence - r).abs() < 1e-15);
    }

    #[test]
    fn predict_counts_and_survival() {
        let b = BirthModel {
            components: (0..2)
                .map(|i| BirthComponent {
                    weight: 0.01,
                    gaussian: Gaussian::new(
                        Vector4::new(i as f64, 0.0, 0.0, 0.0),
                        Matrix4::identity() * 0.1,
                    ),
                })
                .collect(),
        };
        let h = |w| GlobalHypothesis {
            weight: w,
            bernoullis: (0..3).map(|i| bern(0.5, i as f64, 0.0, i)).collect(),
        };
        let d = MbmDistribution {
            hypotheses: vec![h(0.6), h(0.4)],
        };
        let p = mbm_predict(&d, &model(), &b, &mut IdAllocator::default());
        assert_eq!(p.bernoulli_count(), 10);
        assert_eq!(p.hypotheses[0].bernoullis[0].existence, 0.45);
        assert_eq!((p.hypotheses[0].weight, p.hypotheses[1].weight), (0.6, 0.4));
        assert_eq!(
            p.hypotheses[0].bernoullis[3].track_id,
            p.hypotheses[1].bernoullis[3].track_id
        );
    }

    #[test]
    fn unambiguous_association() {
        let d = mbm_update(
            &single(vec![bern(1.0, 0.0, 0.0, 0)]),
            &[meas(0.0, 0.0)],
            &model(),
            &MbmConfig::default(),
        )
        .unwrap();
        let best = d.best().unwrap();
        assert!(d.hypotheses[best].weight > 0.99);
        assert_eq!(d.hypotheses[best].bernoullis[0].existence, 1.0);
        assert!((d.weight_sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn crossed_association_is_negligible() {
        let cfg = MbmConfig {
            assoc_gate: f64::INFINITY,
            global_prune: 0.0,
            ..MbmConfig::default()
        };
        let prior = single(vec![bern(1.0, 0.0, 0.0, 0), bern(1.0, 5.0, 0.0, 1)]);
        let d = mbm_update(&prior, &[meas(0.1, 0.0), meas(5.0, 0.1)], &model(), &cfg).unwrap();
        let find = |a: [f64; 2]| {
            d.hypotheses
                .iter()
                .find(|h| {
                    h.bernoullis.iter().all(|b| b.existence == 1.0)
                        && (h.bernoullis[0].gaussian.mean[0] - a[0]).abs() < 1.5
                })
                .map(|h| h.weight)
                .unwrap()
        };
        let direct = find([0.0, 5.0]);
        let crossed = find([5.0, 0.0]);
        assert!(crossed < 1e-6 * direct);
        assert!((d.weight_sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn postprocess_caps_and_prunes() {
        let hyps: Vec<GlobalHypothesis> = (0..12)
            .map(|i| GlobalHypothesis {
                weight: 1.0 + i as f64,
                bernoullis: vec![bern(1e-5, 0.0, 0.0, 0), bern(0.8, 10.0, 0.0, 1)],
            })
            .collect();
        let (d, _) = mbm_postprocess(
            MbmDistribution { hypotheses: hyps },
            &MbmConfig::default(),
            5.0,
        );
        assert_eq!(d.hypotheses.len(), 10);
        assert!((d.weight_sum() - 1.0).abs() < 1e-12);
        assert!(d.hypotheses.iter().all(|h| h.bernoullis.len() == 1));
    }

    #[test]
    fn postprocess_merges_in_best_hypothesis() {
        let (d, _) = mbm_postprocess(
            single(vec![bern(0.6, 0.0, 0.0, 4), bern(0.6, 1.0, 0.0, 2)]),
            &MbmConfig::default(),
            5.0,
        );
        let b = &d.hypotheses[0].bernoullis;
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].existence, 1.0);
        assert!((b[0].gaussian.mean[0] - 0.5).abs() < 1e-12);
        assert_eq!(b[0].track_id, 2);
    }

    #[test]
    fn estimate_uses_best_hypothesis_only() {
        let d = MbmDistribution {
            hypotheses: vec![
                GlobalHypothesis {
                    weight: 0.3,
                    bernoullis: vec![bern(1.0, 9.0, 0.0, 9)],
                },
                GlobalHypothesis {
                    weight: 0.7,
                    bernoullis: vec![bern(0.995, 0.0, 0.0, 0), bern(0.5, 1.0, 0.0, 1)],
                },
            ],
        };
        let e = mbm_estimate(&d, 0.99);
        assert_eq!(e.len(), 1);
        assert_eq!(e[0].track_id, 0);
        let none = single(vec![bern(0.98, 0.0, 0.0, 0)]);
        assert!(mbm_estimate(&none, 0.99).is_empty());
    }
}
