//! conv(valid) → ReLU → max-pool → fully connected → softmax, trained with
//! mini-batch SGD with momentum on the cross-entropy loss.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ClassifierConfig, LabeledPatch, Normalization, Patch};
use crate::error::{Error, Result};
use crate::rng;
use crate::scenario::TargetClass;

const MODEL_MAGIC: u64 = u64::from_le_bytes(*b"CSCNNMDL");
const MODEL_VERSION: u64 = 1;
const HEADER_BYTES: usize = 72;
pub const NUM_CLASSES: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel {
    pub side: usize,
    pub num_filters: usize,
    pub filter_size: usize,
    pub pool: usize,
    /// num_filters × filter_size², each row one filter in row-major order.
    pub conv_w: DMatrix<f64>,
    pub conv_b: DVector<f64>,
    /// NUM_CLASSES × fc_inputs.
    pub fc_w: DMatrix<f64>,
    pub fc_b: DVector<f64>,
    pub normalization: Normalization,
    pub noise_floor: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub conv_w: DMatrix<f64>,
    pub conv_b: DVector<f64>,
    pub fc_w: DMatrix<f64>,
    pub fc_b: DVector<f64>,
}

impl Gradients {
    fn zeros_like(m: &CnnModel) -> Self {
        Self {
            conv_w: DMatrix::zeros(m.conv_w.nrows(), m.conv_w.ncols()),
            conv_b: DVector::zeros(m.conv_b.len()),
            fc_w: DMatrix::zeros(m.fc_w.nrows(), m.fc_w.ncols()),
            fc_b: DVector::zeros(m.fc_b.len()),
        }
    }

    fn add_scaled(&mut self, o: &Gradients, s: f64) {
        self.conv_w += &o.conv_w * s;
        self.conv_b += &o.conv_b * s;
        self.fc_w += &o.fc_w * s;
        self.fc_b += &o.fc_b * s;
    }
}

struct Forward {
    cols: DMatrix<f64>,
    z: DMatrix<f64>,
    flat: DVector<f64>,
    argmax: Vec<usize>,
    probs: [f64; NUM_CLASSES],
    log_probs: [f64; NUM_CLASSES],
}

impl CnnModel {
    pub fn new<R: Rng>(side: usize, cfg: &ClassifierConfig, rng: &mut R) -> Result<Self> {
        let k = cfg.filter_size;
        if side < k || (side - k + 1) / cfg.pool_factor == 0 {
            return Err(Error::Shape(format!(
                "patch side {side} too small for {k}x{k} filters and pooling"
            )));
        }
        let mut m = Self {
            side,
            num_filters: cfg.num_filters,
            filter_size: k,
            pool: cfg.pool_factor,
            conv_w: DMatrix::zeros(cfg.num_filters, k * k),
            conv_b: DVector::zeros(cfg.num_filters),
            fc_w: DMatrix::zeros(NUM_CLASSES, 0),
            fc_b: DVector::zeros(NUM_CLASSES),
            normalization: cfg.normalization,
            noise_floor: cfg.noise_floor,
        };
        let conv = Normal::new(0.0, (2.0 / (k * k) as f64).sqrt()).expect("valid std");
        m.conv_w = DMatrix::from_fn(cfg.num_filters, k * k, |_, _| conv.sample(rng));
        let d = m.fc_inputs();
        let fc = Normal::new(0.0, (2.0 / (d + NUM_CLASSES) as f64).sqrt()).expect("valid std");
        m.fc_w = DMatrix::from_fn(NUM_CLASSES, d, |_, _| fc.sample(rng));
        Ok(m)
    }

    pub fn conv_out(&self) -> usize {
        self.side - self.filter_size + 1
    }

    pub fn pool_out(&self) -> usize {
        self.conv_out() / self.pool
    }

    pub fn fc_inputs(&self) -> usize {
        self.num_filters * self.pool_out() * self.pool_out()
    }

    fn im2col(&self, x: &[f64]) -> DMatrix<f64> {
        let (k, s, o) = (self.filter_size, self.side, self.conv_out());
        let mut cols = DMatrix::zeros(o * o, k * k);
        for a in 0..k {
            for b in 0..k {
                let q = a * k + b;
                let col = cols.column_mut(q);
                let dst = col.data.into_slice_mut();
                for i in 0..o {
                    let src = &x[(i + a) * s + b..(i + a) * s + b + o];
                    dst[i * o..(i + 1) * o].copy_from_slice(src);
                }
            }
        }
        cols
    }

    fn forward(&self, x: &[f64]) -> Forward {
        let cols = self.im2col(x);
        let mut z = &cols * self.conv_w.transpose();
        for f in 0..self.num_filters {
            let b = self.conv_b[f];
            z.column_mut(f).iter_mut().for_each(|v| *v += b);
        }
        let (o, p, ph) = (self.conv_out(), self.pool, self.pool_out());
        let d = self.fc_inputs();
        let mut flat = DVector::zeros(d);
        let mut argmax = vec![0usize; d];
        for f in 0..self.num_filters {
            let zc = z.column(f);
            for pi in 0..ph {
                for pj in 0..ph {
                    let mut best = (pi * p) * o + pj * p;
                    for a in 0..p {
                        for b in 0..p {
                            let idx = (pi * p + a) * o + pj * p + b;
                            if zc[idx] > zc[best] {
                                best = idx;
                            }
                        }
                    }
                    let di = f * ph * ph + pi * ph + pj;
                    argmax[di] = best;
                    flat[di] = zc[best].max(0.0);
                }
            }
        }
        let logits = &self.fc_w * &flat + &self.fc_b;
        let mx = logits.max();
        let e: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
        let s: f64 = e.iter().sum();
        let lse = mx + s.ln();
        Forward {
            cols,
            z,
            flat,
            argmax,
            probs: [e[0] / s, e[1] / s],
            log_probs: [logits[0] - lse, logits[1] - lse],
        }
    }

    /// Class probabilities (pedestrian, vehicle) for already-normalized pixels.
    pub fn predict_proba(&self, x: &[f64]) -> [f64; NUM_CLASSES] {
        self.forward(x).probs
    }

    /// Cross-entropy loss and its gradient for one normalized example.
    pub fn loss_and_grad(&self, x: &[f64], label: usize) -> (f64, Gradients) {
        let fw = self.forward(x);
        let loss = -fw.log_probs[label];
        let mut dlogits = DVector::from_row_slice(&fw.probs);
        dlogits[label] -= 1.0;
        let fc_w = &dlogits * fw.flat.transpose();
        let dflat = self.fc_w.transpose() * &dlogits;
        let ph = self.pool_out();
        let mut dz = DMatrix::zeros(fw.z.nrows(), fw.z.ncols());
        for (di, &p) in fw.argmax.iter().enumerate() {
            let f = di / (ph * ph);
            if fw.z[(p, f)] > 0.0 {
                dz[(p, f)] += dflat[di];
            }
        }
        let conv_w = dz.transpose() * &fw.cols;
        let conv_b = DVector::from_iterator(
            self.num_filters,
            (0..self.num_filters).map(|f| dz.column(f).sum()),
        );
        (
            loss,
            Gradients {
                conv_w,
                conv_b,
                fc_w,
                fc_b: dlogits,
            },
        )
    }

    pub fn loss(&self, x: &[f64], label: usize) -> f64 {
        -self.forward(x).log_probs[label]
    }

    fn apply(&mut self, v: &Gradients) {
        self.conv_w += &v.conv_w;
        self.conv_b += &v.conv_b;
        self.fc_w += &v.fc_w;
        self.fc_b += &v.fc_b;
    }
}

/// Class with the larger score; an exact tie goes to vehicle.
pub fn classify(model: &CnnModel, patch: &Patch) -> Result<(TargetClass, [f64; NUM_CLASSES])> {
    if patch.side != model.side || patch.pixels.len() != model.side * model.side {
        return Err(Error::Shape(format!(
            "patch side {} does not match model input {}",
            patch.side, model.side
        )));
    }
    let x = model.normalization.apply(&patch.pixels, model.noise_floor);
    let p = model.predict_proba(&x);
    let class = if p[TargetClass::Pedestrian.index()] > p[TargetClass::Vehicle.index()] {
        TargetClass::Pedestrian
    } else {
        TargetClass::Vehicle
    };
    Ok((class, p))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub final_train_loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
}

fn accuracy_on(model: &CnnModel, xs: &[(Vec<f64>, usize)]) -> f64 {
    let ok = xs
        .iter()
        .filter(|(x, y)| {
            let p = model.predict_proba(x);
            let pred = if p[0] > p[1] { 0 } else { 1 };
            pred == *y
        })
        .count();
    ok as f64 / xs.len().max(1) as f64
}

fn mean_loss(model: &CnnModel, xs: &[(Vec<f64>, usize)]) -> f64 {
    xs.iter().map(|(x, y)| model.loss(x, *y)).sum::<f64>() / xs.len().max(1) as f64
}

/// Mini-batch SGD with momentum. Stops after `patience` epochs without a
/// better monitored loss (validation if given, training otherwise) and
/// returns the best parameters seen.
pub fn train(
    train_set: &[LabeledPatch],
    val_set: &[LabeledPatch],
    cfg: &ClassifierConfig,
) -> Result<(CnnModel, TrainReport)> {
    cfg.validate()?;
    let first = train_set
        .first()
        .ok_or_else(|| Error::Domain("empty training set".into()))?;
    let side = first.patch.side;
    if TargetClass::ALL
        .iter()
        .any(|c| !train_set.iter().any(|p| p.class == *c))
    {
        return Err(Error::Domain(
            "training set needs examples of both classes".into(),
        ));
    }
    if train_set
        .iter()
        .chain(val_set)
        .any(|p| p.patch.side != side)
    {
        return Err(Error::Shape("patches of different sizes".into()));
    }
    let prep = |s: &[LabeledPatch]| -> Vec<(Vec<f64>, usize)> {
        s.iter()
            .map(|p| {
                (
                    cfg.normalization.apply(&p.patch.pixels, cfg.noise_floor),
                    p.class.index(),
                )
            })
            .collect()
    };
    let xs = prep(train_set);
    let vs = prep(val_set);
    let mut r = rng::stream(cfg.seed, &[rng::TAG_TRAIN]);
    let mut model = CnnModel::new(side, cfg, &mut r)?;
    let mut velocity = Gradients::zeros_like(&model);
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut best = (f64::INFINITY, model.clone(), 0usize);
    let mut train_loss = Vec::new();
    let mut val_loss = Vec::new();
    let mut since_best = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut r);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut g = Gradients::zeros_like(&model);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let (l, gi) = model.loss_and_grad(&xs[i].0, xs[i].1);
                epoch_loss += l;
                g.add_scaled(&gi, scale);
            }
            // v ← μv − ηg; θ ← θ + v
            let mut v = Gradients::zeros_like(&model);
            v.add_scaled(&velocity, cfg.momentum);
            v.add_scaled(&g, -cfg.learning_rate);
            model.apply(&v);
            velocity = v;
        }
        let tl = epoch_loss / xs.len() as f64;
        if !tl.is_finite() {
            return Err(Error::Divergence { epoch, loss: tl });
        }
        train_loss.push(tl);
        let monitored = if vs.is_empty() {
            mean_loss(&model, &xs)
        } else {
            let v = mean_loss(&model, &vs);
            val_loss.push(v);
            v
        };
        if monitored < best.0 - 1e-9 {
            best = (monitored, model.clone(), epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
        if monitored < 1e-6 {
            break;
        }
    }
    let epochs_run = train_loss.len();
    let (_, model, best_epoch) = best;
    let report = TrainReport {
        epochs_run,
        best_epoch,
        final_train_loss: mean_loss(&model, &xs),
        train_accuracy: accuracy_on(&model, &xs),
        val_accuracy: if vs.is_empty() {
            None
        } else {
            Some(accuracy_on(&model, &vs))
        },
        train_loss,
        val_loss,
    };
    Ok((model, report))
}

fn write_u64s(w: &mut impl Write, v: &[u64]) -> std::io::Result<()> {
    for x in v {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn write_f64s<'a>(w: &mut impl Write, v: impl Iterator<Item = &'a f64>) -> std::io::Result<()> {
    for x in v {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

/// Versioned binary: nine u64 header fields (the last is the noise floor's bits), then the conv weights (row
/// per filter), conv biases, FC weights (row per class) and FC biases as
/// little-endian f64.
pub fn save_model(model: &CnnModel, path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_u64s(
        &mut w,
        &[
            MODEL_MAGIC,
            MODEL_VERSION,
            model.side as u64,
            model.num_filters as u64,
            model.filter_size as u64,
            model.pool as u64,
            model.normalization.code(),
            NUM_CLASSES as u64,
            model.noise_floor.to_bits(),
        ],
    )?;
    write_f64s(&mut w, model.conv_w.transpose().iter())?;
    write_f64s(&mut w, model.conv_b.iter())?;
    write_f64s(&mut w, model.fc_w.transpose().iter())?;
    write_f64s(&mut w, model.fc_b.iter())?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<CnnModel> {
    let fmt = |reason: &str| Error::Format {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < HEADER_BYTES {
        return Err(fmt("truncated header"));
    }
    let word = |i: usize| u64::from_le_bytes(bytes[i * 8..i * 8 + 8].try_into().expect("8 bytes"));
    if word(0) != MODEL_MAGIC {
        return Err(fmt("not a classifier model file"));
    }
    if word(1) != MODEL_VERSION {
        return Err(fmt(&format!("unsupported model version {}", word(1))));
    }
    if word(7) != NUM_CLASSES as u64 {
        return Err(fmt("unexpected class count"));
    }
    let normalization =
        Normalization::from_code(word(6)).ok_or_else(|| fmt("unknown normalization"))?;
    let (side, nf, k, pool) = (
        word(2) as usize,
        word(3) as usize,
        word(4) as usize,
        word(5) as usize,
    );
    if k == 0 || pool == 0 || side < k || (side - k + 1) / pool == 0 || nf == 0 {
        return Err(fmt("inconsistent layer sizes"));
    }
    let ph = (side - k + 1) / pool;
    let d = nf * ph * ph;
    let n = nf * k * k + nf + NUM_CLASSES * d + NUM_CLASSES;
    if bytes.len() != HEADER_BYTES + 8 * n {
        return Err(fmt("parameter block size mismatch"));
    }
    let noise_floor = f64::from_bits(word(8));
    if !(noise_floor > 0.0 && noise_floor.is_finite()) {
        return Err(fmt("invalid noise floor"));
    }
    let vals: Vec<f64> = bytes[HEADER_BYTES..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let mut off = 0;
    let mut take = |len: usize| {
        let s = &vals[off..off + len];
        off += len;
        s.to_vec()
    };
    Ok(CnnModel {
        side,
        num_filters: nf,
        filter_size: k,
        pool,
        conv_w: DMatrix::from_row_slice(nf, k * k, &take(nf * k * k)),
        conv_b: DVector::from_vec(take(nf)),
        fc_w: DMatrix::from_row_slice(NUM_CLASSES, d, &take(NUM_CLASSES * d)),
        fc_b: DVector::from_vec(take(NUM_CLASSES)),
        normalization,
        noise_floor,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn max_cfg() -> ClassifierConfig {
        ClassifierConfig {
            normalization: Normalization::Max,
            ..ClassifierConfig::default()
        }
    }

    fn small_cfg() -> ClassifierConfig {
        ClassifierConfig {
            num_filters: 3,
            ..max_cfg()
        }
    }

    fn const_patch(side: usize, v: f64, class: TargetClass) -> LabeledPatch {
        LabeledPatch {
            patch: Patch {
                pixels: vec![v; side * side],
                side,
                center_m: [0.0, 0.0],
                scan_index: 0,
            },
            class,
        }
    }

    #[test]
    fn shape_chain() {
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let m = CnnModel::new(60, &ClassifierConfig::default(), &mut r).unwrap();
        assert_eq!((m.conv_out(), m.pool_out(), m.fc_inputs()), (56, 28, 15680));
        assert_eq!(m.fc_w.shape(), (2, 15680));
        for s in 5..40 {
            let m = CnnModel::new(
                s,
                &ClassifierConfig {
                    pool_factor: 1,
                    ..small_cfg()
                },
                &mut r,
            )
            .unwrap();
            assert_eq!(m.conv_out(), s - 4);
            if s >= 6 {
                let m = CnnModel::new(s, &small_cfg(), &mut r).unwrap();
                assert_eq!(m.fc_inputs(), 3 * ((s - 4) / 2).pow(2));
            }
        }
        assert!(CnnModel::new(4, &small_cfg(), &mut r).is_err());
    }

    /// Central differences on `n` random entries of one parameter block.
    fn check_block(
        model: &CnnModel,
        x: &[f64],
        label: usize,
        which: usize,
        rng: &mut ChaCha8Rng,
    ) -> f64 {
        let (_, g) = model.loss_and_grad(x, label);
        let eps = 1e-4;
        let mut worst: f64 = 0.0;
        for _ in 0..10 {
            let mut plus = model.clone();
            let mut minus = model.clone();
            let analytic = match which {
                0 => {
                    let (i, j) = (
                        rng.random_range(0..model.conv_w.nrows()),
                        rng.random_range(0..model.conv_w.ncols()),
                    );
                    plus.conv_w[(i, j)] += eps;
                    minus.conv_w[(i, j)] -= eps;
                    g.conv_w[(i, j)]
                }
                1 => {
                    let i = rng.random_range(0..model.conv_b.len());
                    plus.conv_b[i] += eps;
                    minus.conv_b[i] -= eps;
                    g.conv_b[i]
                }
                2 => {
                    let (i, j) = (
                        rng.random_range(0..2),
                        rng.random_range(0..model.fc_w.ncols()),
                    );
                    plus.fc_w[(i, j)] += eps;
                    minus.fc_w[(i, j)] -= eps;
                    g.fc_w[(i, j)]
                }
                _ => {
                    let i = rng.random_range(0..2);
                    plus.fc_b[i] += eps;
                    minus.fc_b[i] -= eps;
                    g.fc_b[i]
                }
            };
            let numeric = (plus.loss(x, label) - minus.loss(x, label)) / (2.0 * eps);
            let denom = analytic.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((analytic - numeric).abs() / denom);
        }
        worst
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut r = ChaCha8Rng::seed_from_u64(42);
        let cfg = ClassifierConfig {
            num_filters: 4,
            ..ClassifierConfig::default()
        };
        let mut model = CnnModel::new(14, &cfg, &mut r).unwrap();
        model
            .conv_b
            .iter_mut()
            .for_each(|b| *b = r.random_range(-0.1..0.1));
        let x: Vec<f64> = (0..14 * 14).map(|_| r.random_range(0.0..1.0)).collect();
        for block in 0..4 {
            for label in 0..2 {
                let err = check_block(&model, &x, label, block, &mut r);
                assert!(err < 1e-4, "block {block} label {label}: {err}");
            }
        }
    }

    fn separable_set(n: usize) -> Vec<LabeledPatch> {
        let mut data = Vec::new();
        for _ in 0..n {
            data.push(const_patch(20, 0.0, TargetClass::Pedestrian));
            data.push(const_patch(20, 1.0, TargetClass::Vehicle));
        }
        data
    }

    #[test]
    fn separable_constant_patches_reach_full_accuracy() {
        let cfg = ClassifierConfig {
            epochs: 50,
            ..max_cfg()
        };
        let (_, rep) = train(&separable_set(16), &[], &cfg).unwrap();
        assert_eq!(rep.train_accuracy, 1.0, "{rep:?}");
        assert!(rep.epochs_run <= 50);
    }

    #[test]
    fn separable_model_is_confident() {
        let (model, _) = train(&separable_set(160), &[], &max_cfg()).unwrap();
        let (c, p) = classify(&model, &const_patch(20, 1.0, TargetClass::Vehicle).patch).unwrap();
        assert_eq!(c, TargetClass::Vehicle);
        assert!(p[1] > 0.99, "{p:?}");
        let (c, p) =
            classify(&model, &const_patch(20, 0.0, TargetClass::Pedestrian).patch).unwrap();
        assert_eq!(c, TargetClass::Pedestrian);
        assert!(p[0] > 0.99, "{p:?}");
        assert!((p[0] + p[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn training_is_deterministic() {
        let mut r = ChaCha8Rng::seed_from_u64(5);
        let data: Vec<LabeledPatch> = (0..24)
            .map(|i| {
                let class = if i % 2 == 0 {
                    TargetClass::Pedestrian
                } else {
                    TargetClass::Vehicle
                };
                let pixels = (0..144)
                    .map(|_| r.random_range(0.0..1.0) + (i % 2) as f64 * 0.3)
                    .collect();
                LabeledPatch {
                    patch: Patch {
                        pixels,
                        side: 12,
                        center_m: [0.0, 0.0],
                        scan_index: 0,
                    },
                    class,
                }
            })
            .collect();
        let cfg = ClassifierConfig {
            epochs: 5,
            ..small_cfg()
        };
        let (a, ra) = train(&data, &data[..6], &cfg).unwrap();
        let (b, rb) = train(&data, &data[..6], &cfg).unwrap();
        assert_eq!(ra.train_loss, rb.train_loss);
        assert_eq!(a, b);
    }

    #[test]
    fn scores_are_scale_invariant_and_shapes_checked() {
        let mut r = ChaCha8Rng::seed_from_u64(6);
        let model = CnnModel::new(12, &small_cfg(), &mut r).unwrap();
        let px: Vec<f64> = (0..144).map(|_| r.random_range(0.0..1e-6)).collect();
        let p = Patch {
            pixels: px.clone(),
            side: 12,
            center_m: [0.0, 0.0],
            scan_index: 0,
        };
        let q = Patch {
            pixels: px.iter().map(|v| v * 1234.5).collect(),
            ..p.clone()
        };
        let (_, sp) = classify(&model, &p).unwrap();
        let (_, sq) = classify(&model, &q).unwrap();
        assert!((sp[0] - sq[0]).abs() < 1e-12);
        assert!((sp[0] + sp[1] - 1.0).abs() < 1e-9);
        let wrong = Patch {
            pixels: vec![0.0; 100],
            side: 10,
            center_m: [0.0, 0.0],
            scan_index: 0,
        };
        assert!(classify(&model, &wrong).is_err());
    }

    #[test]
    fn snr_normalization_is_db_above_floor() {
        use crate::classifier::LOG_RANGE_DB;
        let x = Normalization::Snr.apply(&[0.5, 1.0, 10.0, 1e4], 1.0);
        assert_eq!(x[0], 0.0);
        assert_eq!(x[1], 0.0);
        assert!((x[2] - 10.0 / LOG_RANGE_DB).abs() < 1e-12);
        assert!((x[3] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tie_goes_to_vehicle() {
        let mut r = ChaCha8Rng::seed_from_u64(7);
        let mut model = CnnModel::new(12, &small_cfg(), &mut r).unwrap();
        model.fc_w.fill(0.0);
        model.fc_b.fill(0.0);
        let p = Patch {
            pixels: vec![1.0; 144],
            side: 12,
            center_m: [0.0, 0.0],
            scan_index: 0,
        };
        assert_eq!(classify(&model, &p).unwrap().0, TargetClass::Vehicle);
    }

    #[test]
    fn model_file_round_trip() {
        let mut r = ChaCha8Rng::seed_from_u64(8);
        let model = CnnModel::new(16, &small_cfg(), &mut r).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        save_model(&model, &path).unwrap();
        assert_eq!(load_model(&path).unwrap(), model);
        std::fs::write(&path, b"garbage").unwrap();
        assert!(matches!(load_model(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn divergence_is_reported() {
        let mut data = Vec::new();
        for _ in 0..8 {
            data.push(const_patch(12, 0.0, TargetClass::Pedestrian));
            data.push(const_patch(12, 1.0, TargetClass::Vehicle));
        }
        let cfg = ClassifierConfig {
            learning_rate: 1e300,
            epochs: 20,
            ..small_cfg()
        };
        assert!(matches!(
            train(&data, &[], &cfg),
            Err(Error::Divergence { .. })
        ));
    }
}
