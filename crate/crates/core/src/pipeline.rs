//! Scan loop in stage order: per-BS maps, fusion, classification of the
//! previous scan's predictions, clustering, tracking and metrics. Also the
//! classifier training helper, map dumps, reports and sweeps.

use std::collections::BTreeMap;
use std::ops::Range;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classifier::{
    accumulate_evidence, class_from_evidence, classify, crop_window, load_model, make_training_set,
    stratified_split, train, CnnModel, LabeledPatch,
};
use crate::clustering::{extract_measurements, GatingMode, PredictedTrack, Provenance};
use crate::config::{GridConfig, RunConfig};
use crate::error::{Error, Result};
use crate::fusion::{fuse, resample_to_grid, GridSpec, SoftMap};
use crate::io::{self, TrackLogRow};
use crate::metrics::{accuracy, aggregate_capacity, ospa, ConfusionCounts, OspaConfig};
use crate::rng;
use crate::scenario::{Scenario, TargetClass, Vec2};
use crate::sensing::{
    bs_range_angle_map, map_from_reflections, noise_bin_mean, Noise, RangeAngleMap, Synthesis,
};
use crate::tracking::{BirthModel, FilterKind, Measurement, Tracker};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Processing stages of one scan, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Maps,
    Fuse,
    Classify,
    Cluster,
    Track,
    Metrics,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Maps => "maps",
            Stage::Fuse => "fuse",
            Stage::Classify => "classify",
            Stage::Cluster => "cluster",
            Stage::Track => "track",
            Stage::Metrics => "metrics",
        }
    }
}

/// One stage execution; `track_ids` lists the tracks classified (classify)
/// or the predictions handed to the next scan (track).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEvent {
    pub scan: usize,
    pub filter: Option<FilterKind>,
    pub stage: Stage,
    pub track_ids: Vec<u64>,
}

/// Resolved run inputs.
#[derive(Debug, Clone)]
pub struct Setup {
    pub config: RunConfig,
    pub scenario: Scenario,
    pub grid: GridSpec,
    pub sensing: Vec<usize>,
    pub synthesis: Synthesis,
}

impl Setup {
    pub fn new(mut config: RunConfig) -> Result<Self> {
        config.validate()?;
        let scenario = config.scenario()?;
        let sensing = config.sensing_set(scenario.base_stations.len())?;
        config.classifier.noise_floor = sensing.len() as f64 * noise_bin_mean(&scenario.radio);
        let grid = config.grid_spec(&scenario)?;
        let synthesis = if config.fast {
            Synthesis::Fast
        } else {
            Synthesis::Signal
        };
        Ok(Self {
            config,
            scenario,
            grid,
            sensing,
            synthesis,
        })
    }

    pub fn n_total(&self) -> usize {
        self.scenario.base_stations.len()
    }

    /// Same inputs with a different gating mode.
    pub fn with_gating(&self, gating: GatingMode) -> Self {
        let mut s = self.clone();
        s.config.gating = gating;
        s
    }

    /// Identifies everything the fused maps depend on.
    pub fn maps_key(&self, seed: u64) -> String {
        let c = &self.config.clustering;
        let value = serde_json::json!({
            "scenario": self.scenario,
            "sensing": self.sensing,
            "grid": self.grid_config(),
            "fast": self.config.fast,
            "seed": seed,
            "calibration": [c.calibrate_excision as u8 as f64, c.excision_threshold, c.calibration_quantile, c.calibration_trials as f64],
        });
        sha256_hex(&serde_json::to_string(&value).expect("value serializes"))
    }

    fn grid_config(&self) -> GridConfig {
        self.config.grid
    }
}

fn sha256_hex(text: &str) -> String {
    Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Per-BS range-angle maps (computed concurrently), resampled and summed.
pub fn fused_map(
    scenario: &Scenario,
    sensing: &[usize],
    grid: &GridSpec,
    scan: usize,
    seed: u64,
    synthesis: Synthesis,
) -> Result<(SoftMap, Vec<RangeAngleMap>)> {
    let per_bs = sensing
        .par_iter()
        .map(|&b| bs_range_angle_map(scenario, b, scan, seed, synthesis, Noise::On))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.at_stage(Stage::Maps.name(), scan))?;
    let soft: Vec<SoftMap> = per_bs
        .par_iter()
        .zip(sensing)
        .map(|(m, &b)| resample_to_grid(m, &scenario.base_stations[b], grid))
        .collect();
    let fused = fuse(&soft).map_err(|e| e.at_stage(Stage::Fuse.name(), scan))?;
    Ok((fused, per_bs))
}

/// All fused maps of the run.
pub fn simulate_maps(setup: &Setup, seed: u64) -> Result<Vec<SoftMap>> {
    (0..setup.scenario.num_scans)
        .map(|t| {
            fused_map(
                &setup.scenario,
                &setup.sensing,
                &setup.grid,
                t,
                seed,
                setup.synthesis,
            )
            .map(|(m, _)| m)
        })
        .collect()
}

fn quantile(values: &mut [f64], q: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    let k = ((q * n as f64).ceil() as usize).clamp(1, n);
    values[k - 1]
}

/// γ_d: the configured quantile of the maximum of target-free fused maps
/// built with the run's own synthesis path, or the absolute value when
/// calibration is off.
pub fn calibrate_excision(setup: &Setup, seed: u64) -> Result<f64> {
    let c = &setup.config.clustering;
    if !c.calibrate_excision {
        return Ok(c.excision_threshold);
    }
    let cal_seed = rng::stream_seed(seed, &[rng::TAG_CALIBRATE]);
    let mut maxima = Vec::with_capacity(c.calibration_trials);
    for trial in 0..c.calibration_trials {
        let maps = setup
            .sensing
            .par_iter()
            .map(|&b| {
                let pose = &setup.scenario.base_stations[b];
                map_from_reflections(
                    &setup.scenario.radio,
                    pose,
                    &[],
                    trial,
                    cal_seed,
                    setup.synthesis,
                    Noise::On,
                )
                .map(|m| resample_to_grid(&m, pose, &setup.grid))
            })
            .collect::<Result<Vec<_>>>()?;
        maxima.push(fuse(&maps)?.max_value());
    }
    Ok(quantile(&mut maxima, c.calibration_quantile))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub train_examples: usize,
    pub validation_examples: usize,
    pub test_examples: usize,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub final_train_loss: f64,
    pub train_accuracy: f64,
    pub validation_accuracy: Option<f64>,
    pub test_confusion: ConfusionCounts,
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ClassifierBundle {
    pub model: CnnModel,
    pub training: Option<TrainingSummary>,
}

/// Labeled patches from random layouts `layouts` (indices select disjoint
/// seeded layouts), cropped from fused maps of the run's sensing set.
pub fn patch_dataset(setup: &Setup, layouts: Range<usize>) -> Result<Vec<LabeledPatch>> {
    let t = &setup.config.training;
    let cc = &setup.config.classifier;
    let side = cc.side(setup.grid.dx_m);
    let mut out = Vec::new();
    for i in layouts {
        let i = i as u64;
        let mut layout_rng = rng::stream(cc.seed, &[rng::TAG_TRAIN, 1, i]);
        let sc = Scenario::random_layout(
            &setup.scenario,
            t.pedestrians,
            t.vehicles,
            t.scans_per_layout,
            &mut layout_rng,
        );
        let map_seed = rng::stream_seed(cc.seed, &[rng::TAG_TRAIN, 2, i]);
        let scans = (0..t.scans_per_layout)
            .map(|s| {
                let (m, _) = fused_map(
                    &sc,
                    &setup.sensing,
                    &setup.grid,
                    s,
                    map_seed,
                    setup.synthesis,
                )?;
                Ok((m, sc.truth_at(s)?))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut perturb = rng::stream(cc.seed, &[rng::TAG_PERTURB, i]);
        out.extend(make_training_set(
            &scans,
            side,
            cc.perturb_sigma_m,
            &mut perturb,
        )?);
    }
    Ok(out)
}

/// Confusion counts with vehicle as the positive class.
pub fn evaluate(model: &CnnModel, data: &[LabeledPatch]) -> Result<ConfusionCounts> {
    let mut c = ConfusionCounts::default();
    for p in data {
        let (class, _) = classify(model, &p.patch)?;
        c.record(
            class == TargetClass::Vehicle,
            p.class == TargetClass::Vehicle,
        );
    }
    Ok(c)
}

/// Trains on `training.layouts` layouts and tests on the next `test_layouts`.
pub fn train_classifier(setup: &Setup) -> Result<ClassifierBundle> {
    let t = &setup.config.training;
    let cc = &setup.config.classifier;
    let data = patch_dataset(setup, 0..t.layouts)?;
    let mut split_rng = rng::stream(cc.seed, &[rng::TAG_TRAIN, 3]);
    let (train_set, val_set) = stratified_split(&data, cc.validation_fraction, &mut split_rng);
    let (model, report) = train(&train_set, &val_set, cc)?;
    let test = patch_dataset(setup, t.layouts..t.layouts + t.test_layouts)?;
    let test_confusion = evaluate(&model, &test)?;
    let training = TrainingSummary {
        train_examples: train_set.len(),
        validation_examples: val_set.len(),
        test_examples: test.len(),
        epochs_run: report.epochs_run,
        best_epoch: report.best_epoch,
        final_train_loss: report.final_train_loss,
        train_accuracy: report.train_accuracy,
        validation_accuracy: report.val_accuracy,
        test_confusion,
        test_accuracy: accuracy(&test_confusion).ok(),
    };
    Ok(ClassifierBundle {
        model,
        training: Some(training),
    })
}

/// Model file if configured, otherwise a freshly trained model when
/// auto-training is on. Adaptive gating without either is a config error.
pub fn obtain_classifier(setup: &Setup) -> Result<Option<ClassifierBundle>> {
    let side = setup.config.classifier.side(setup.grid.dx_m);
    if let Some(path) = &setup.config.training.model_path {
        let model = load_model(path)?;
        if model.side != side {
            return Err(Error::config(format!(
                "model {} expects {}-pixel patches, config gives {side}",
                path.display(),
                model.side
            )));
        }
        return Ok(Some(ClassifierBundle {
            model,
            training: None,
        }));
    }
    if setup.config.training.auto_train {
        return train_classifier(setup).map(Some);
    }
    if setup.config.gating == GatingMode::Adaptive {
        return Err(Error::config(
            "adaptive gating needs a classifier: set training.model_path or enable training.auto_train",
        ));
    }
    Ok(None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OspaRecord {
    pub total: f64,
    pub localization: f64,
    pub missed: f64,
    pub false_alarm: f64,
    pub matched: usize,
    pub cardinality: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub track_id: u64,
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    /// PHD weight or MBM existence.
    pub weight: f64,
    pub class_label: Option<TargetClass>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub x: f64,
    pub y: f64,
    /// R as (xx, xy, yy).
    pub cov: [f64; 3],
    pub members: usize,
    /// Gating track id, or none for DBSCAN clusters.
    pub gated_track: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifiedRecord {
    pub track_id: u64,
    pub x: f64,
    pub y: f64,
    /// Classifier output for this scan.
    pub class: TargetClass,
    pub scores: [f64; 2],
    /// Label used for gating, from the track's accumulated evidence.
    pub track_class: TargetClass,
    /// Class of the nearest true target within the OSPA cutoff.
    pub truth_class: Option<TargetClass>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRecord {
    pub scan_index: usize,
    pub truth_count: usize,
    pub classified: Vec<ClassifiedRecord>,
    pub measurements: Vec<MeasurementRecord>,
    pub estimates: Vec<EstimateRecord>,
    pub ospa: OspaRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSummary {
    pub mean_ospa: f64,
    pub median_ospa: f64,
    pub mean_localization: f64,
    pub mean_missed: f64,
    pub mean_false_alarm: f64,
    pub confusion: ConfusionCounts,
    pub accuracy: Option<f64>,
    pub psd_repairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub filter: FilterKind,
    pub summary: FilterSummary,
    pub scans: Vec<ScanRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityRow {
    pub n_sensing: usize,
    pub rho_p: f64,
    pub bits_per_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityReport {
    pub comm_snr_linear: f64,
    pub n_sensing: usize,
    pub n_total: usize,
    pub rho_p: f64,
    pub bits_per_s: f64,
    pub table: Vec<CapacityRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
    pub scenario: String,
    pub num_scans: usize,
    pub n_total: usize,
    pub sensing_bs: Vec<usize>,
    pub gating: GatingMode,
    pub synthesis: String,
    pub excision_threshold: f64,
    pub ospa: OspaConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackReport {
    pub metadata: RunMetadata,
    pub classifier: Option<TrainingSummary>,
    pub filters: Vec<FilterReport>,
    pub capacity: CapacityReport,
}

impl TrackReport {
    pub fn filter(&self, kind: FilterKind) -> Option<&FilterReport> {
        self.filters.iter().find(|f| f.filter == kind)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Median of a sample (mean of the two middle values for even sizes).
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

struct FilterRun {
    kind: FilterKind,
    tracker: Tracker,
    predicted: Vec<PredictedTrack>,
    scans: Vec<ScanRecord>,
    confusion: ConfusionCounts,
    /// Accumulated vehicle-versus-pedestrian log-odds per track id.
    evidence: BTreeMap<u64, f64>,
}

fn nearest_truth(p: Vec2, truth: &[(Vec2, TargetClass)], gate: f64) -> Option<TargetClass> {
    truth
        .iter()
        .map(|(q, c)| ((p[0] - q[0]).hypot(p[1] - q[1]), *c))
        .filter(|(d, _)| *d < gate)
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, c)| c)
}

/// The scan loop for one or more filters sharing the same maps. `map_at`
/// yields the fused map of a scan; `trace` records every stage executed.
pub fn track_scans<F>(
    setup: &Setup,
    threshold: f64,
    classifier: Option<&CnnModel>,
    filters: &[FilterKind],
    mut map_at: F,
    mut trace: Option<&mut Vec<TraceEvent>>,
) -> Result<Vec<FilterReport>>
where
    F: FnMut(usize) -> Result<SoftMap>,
{
    let cfg = &setup.config;
    let sc = &setup.scenario;
    let model = cfg.tracker.motion_model(sc.scan_period_s, &sc.area)?;
    let birth = BirthModel::from_layout(&sc.birth_sites, &sc.area, &cfg.tracker);
    let cluster_cfg = cfg.clustering_config();
    let side = cfg.classifier.side(setup.grid.dx_m);
    let mut runs: Vec<FilterRun> = filters
        .iter()
        .map(|&kind| FilterRun {
            kind,
            tracker: Tracker::new(kind, model.clone(), birth.clone(), cfg.tracker),
            predicted: Vec::new(),
            scans: Vec::new(),
            confusion: ConfusionCounts::default(),
            evidence: BTreeMap::new(),
        })
        .collect();
    let mut log = |scan: usize, filter: Option<FilterKind>, stage: Stage, ids: Vec<u64>| {
        if let Some(t) = trace.as_deref_mut() {
            t.push(TraceEvent {
                scan,
                filter,
                stage,
                track_ids: ids,
            });
        }
    };

    for t in 0..sc.num_scans {
        log(t, None, Stage::Maps, Vec::new());
        let map = map_at(t)?;
        log(t, None, Stage::Fuse, Vec::new());
        let truth_states = sc
            .truth_at(t)
            .map_err(|e| e.at_stage(Stage::Metrics.name(), t))?;
        let truth: Vec<(Vec2, TargetClass)> =
            truth_states.iter().map(|s| (s.position, s.class)).collect();
        let truth_pos: Vec<Vec2> = truth.iter().map(|(p, _)| *p).collect();

        for run in &mut runs {
            let kind = Some(run.kind);
            let mut classified = Vec::new();
            if let Some(m) = classifier {
                log(
                    t,
                    kind,
                    Stage::Classify,
                    run.predicted.iter().map(|p| p.id).collect(),
                );
                for p in &mut run.predicted {
                    let patch = crop_window(&map, p.position_m, side);
                    let (class, scores) =
                        classify(m, &patch).map_err(|e| e.at_stage(Stage::Classify.name(), t))?;
                    let prior = run.evidence.get(&p.id).copied().unwrap_or(0.0);
                    let evidence =
                        accumulate_evidence(prior, scores, cfg.classifier.track_evidence_cap);
                    run.evidence.insert(p.id, evidence);
                    let track_class = class_from_evidence(evidence, class);
                    run.tracker.set_label(p.id, track_class);
                    p.class = Some(track_class);
                    let truth_class = nearest_truth(p.position_m, &truth, cfg.metrics.ospa.gate_m);
                    if let Some(tc) = truth_class {
                        run.confusion
                            .record(class == TargetClass::Vehicle, tc == TargetClass::Vehicle);
                    }
                    classified.push(ClassifiedRecord {
                        track_id: p.id,
                        x: p.position_m[0],
                        y: p.position_m[1],
                        class,
                        scores,
                        track_class,
                        truth_class,
                    });
                }
            }

            log(t, kind, Stage::Cluster, Vec::new());
            let set = extract_measurements(&map, &run.predicted, &cluster_cfg, threshold);
            let meas = Measurement::from_set(&set);

            let out = run
                .tracker
                .step(&meas)
                .map_err(|e| e.at_stage(Stage::Track.name(), t))?;
            log(
                t,
                kind,
                Stage::Track,
                out.predicted.iter().map(|p| p.id).collect(),
            );

            log(t, kind, Stage::Metrics, Vec::new());
            let est_pos: Vec<Vec2> = out.estimates.iter().map(|e| e.state.position()).collect();
            let o = ospa(&truth_pos, &est_pos, &cfg.metrics.ospa);
            let measurements = (0..set.len())
                .map(|i| {
                    let r = set.covariances[i];
                    MeasurementRecord {
                        x: set.centroids_m[i][0],
                        y: set.centroids_m[i][1],
                        cov: [r[(0, 0)], r[(0, 1)], r[(1, 1)]],
                        members: set.members[i].len(),
                        gated_track: match set.provenance[i] {
                            Provenance::Gated(id) => Some(id),
                            Provenance::Dbscan => None,
                        },
                    }
                })
                .collect();
            let estimates = out
                .estimates
                .iter()
                .map(|e| EstimateRecord {
                    track_id: e.track_id,
                    x: e.state.x_m,
                    y: e.state.y_m,
                    vx: e.state.vx_mps,
                    vy: e.state.vy_mps,
                    weight: e.weight,
                    class_label: e.class_label,
                })
                .collect();
            run.scans.push(ScanRecord {
                scan_index: t,
                truth_count: truth.len(),
                classified,
                measurements,
                estimates,
                ospa: OspaRecord {
                    total: o.total,
                    localization: o.localization_term,
                    missed: o.missed_term,
                    false_alarm: o.false_alarm_term,
                    matched: o.matched_pairs.len(),
                    cardinality: o.cardinality,
                },
            });
            run.predicted = out.predicted;
            let live: Vec<u64> = run.predicted.iter().map(|p| p.id).collect();
            run.evidence.retain(|id, _| live.contains(id));
        }
    }

    Ok(runs
        .into_iter()
        .map(|run| {
            let n = run.scans.len().max(1) as f64;
            let totals: Vec<f64> = run.scans.iter().map(|s| s.ospa.total).collect();
            let mean_of =
                |f: fn(&OspaRecord) -> f64| run.scans.iter().map(|s| f(&s.ospa)).sum::<f64>() / n;
            let summary = FilterSummary {
                mean_ospa: totals.iter().sum::<f64>() / n,
                median_ospa: median(&totals),
                mean_localization: mean_of(|o| o.localization),
                mean_missed: mean_of(|o| o.missed),
                mean_false_alarm: mean_of(|o| o.false_alarm),
                confusion: run.confusion,
                accuracy: accuracy(&run.confusion).ok(),
                psd_repairs: run.tracker.psd_repairs,
            };
            FilterReport {
                filter: run.kind,
                summary,
                scans: run.scans,
            }
        })
        .collect())
}

const CAPACITY_RHOS: [f64; 5] = [0.1, 0.2, 0.3, 0.4, 0.5];

pub fn capacity_report(setup: &Setup) -> Result<CapacityReport> {
    let n_total = setup.n_total();
    let main = setup.config.capacity_params(setup.sensing.len(), n_total);
    let mut rhos = CAPACITY_RHOS.to_vec();
    if !rhos.contains(&main.rho_p) {
        rhos.push(main.rho_p);
        rhos.sort_by(f64::total_cmp);
    }
    let mut table = Vec::new();
    for ns in 0..=n_total {
        for &rho in &rhos {
            let p = crate::metrics::CapacityParams {
                n_sensing: ns,
                rho_p: rho,
                ..main
            };
            table.push(CapacityRow {
                n_sensing: ns,
                rho_p: rho,
                bits_per_s: aggregate_capacity(&p)?,
            });
        }
    }
    Ok(CapacityReport {
        comm_snr_linear: main.comm_snr_linear,
        n_sensing: main.n_sensing,
        n_total,
        rho_p: main.rho_p,
        bits_per_s: aggregate_capacity(&main)?,
        table,
    })
}

fn assemble(
    setup: &Setup,
    seed: u64,
    threshold: f64,
    classifier: Option<&ClassifierBundle>,
    filters: Vec<FilterReport>,
) -> Result<TrackReport> {
    let cfg = &setup.config;
    let mut hashed = cfg.clone();
    hashed.seed = seed;
    Ok(TrackReport {
        metadata: RunMetadata {
            version: VERSION.to_string(),
            seed,
            config_hash: hashed.hash(),
            scenario: setup.scenario.name.clone(),
            num_scans: setup.scenario.num_scans,
            n_total: setup.n_total(),
            sensing_bs: setup.sensing.clone(),
            gating: cfg.gating,
            synthesis: match setup.synthesis {
                Synthesis::Signal => "signal".into(),
                Synthesis::Fast => "fast".into(),
            },
            excision_threshold: threshold,
            ospa: cfg.metrics.ospa,
        },
        classifier: classifier.and_then(|c| c.training.clone()),
        filters,
        capacity: capacity_report(setup)?,
    })
}

/// Tracking and metrics over precomputed fused maps.
pub fn run_on_cached_maps(
    setup: &Setup,
    seed: u64,
    maps: &[SoftMap],
    threshold: f64,
    classifier: Option<&ClassifierBundle>,
) -> Result<TrackReport> {
    if maps.len() != setup.scenario.num_scans {
        return Err(Error::config(format!(
            "{} cached maps for {} scans",
            maps.len(),
            setup.scenario.num_scans
        )));
    }
    let kinds = setup.config.filter.kinds();
    let filters = track_scans(
        setup,
        threshold,
        classifier.map(|c| &c.model),
        &kinds,
        |t| Ok(maps[t].clone()),
        None,
    )?;
    assemble(setup, seed, threshold, classifier, filters)
}

/// End-to-end run with the config's seed. Fused maps (and per-BS maps) are
/// written to `dump` when given.
pub fn run(
    setup: &Setup,
    classifier: Option<&ClassifierBundle>,
    dump: Option<&Path>,
) -> Result<TrackReport> {
    let seed = setup.config.seed;
    let threshold = calibrate_excision(setup, seed)?;
    if let Some(dir) = dump {
        std::fs::create_dir_all(dir)?;
    }
    let kinds = setup.config.filter.kinds();
    let filters = track_scans(
        setup,
        threshold,
        classifier.map(|c| &c.model),
        &kinds,
        |t| {
            let (m, per_bs) = fused_map(
                &setup.scenario,
                &setup.sensing,
                &setup.grid,
                t,
                seed,
                setup.synthesis,
            )?;
            if let Some(dir) = dump {
                dump_scan(dir, &m, &per_bs)?;
            }
            Ok(m)
        },
        None,
    )?;
    if let Some(dir) = dump {
        write_manifest(dir, setup, seed, threshold)?;
    }
    assemble(setup, seed, threshold, classifier, filters)
}

/// Describes a directory of dumped maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapManifest {
    pub version: String,
    pub seed: u64,
    pub maps_key: String,
    pub num_scans: usize,
    pub sensing_bs: Vec<usize>,
    pub excision_threshold: f64,
}

fn fused_name(scan: usize) -> String {
    format!("fused_{scan:04}.bin")
}

fn dump_scan(dir: &Path, fused: &SoftMap, per_bs: &[RangeAngleMap]) -> Result<()> {
    io::write_soft_map(&dir.join(fused_name(fused.scan_index)), fused)?;
    for m in per_bs {
        io::write_range_angle_map(
            &dir.join(format!("bs{}_{:04}.bin", m.bs_id, m.scan_index)),
            m,
        )?;
    }
    Ok(())
}

fn write_manifest(dir: &Path, setup: &Setup, seed: u64, threshold: f64) -> Result<()> {
    let manifest = MapManifest {
        version: VERSION.to_string(),
        seed,
        maps_key: setup.maps_key(seed),
        num_scans: setup.scenario.num_scans,
        sensing_bs: setup.sensing.clone(),
        excision_threshold: threshold,
    };
    std::fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

/// Maps only: fused maps plus, with `per_bs`, the per-BS range-angle maps.
pub fn simulate_to_dir(setup: &Setup, dir: &Path, per_bs: bool) -> Result<MapManifest> {
    let seed = setup.config.seed;
    let threshold = calibrate_excision(setup, seed)?;
    std::fs::create_dir_all(dir)?;
    for t in 0..setup.scenario.num_scans {
        let (m, bs_maps) = fused_map(
            &setup.scenario,
            &setup.sensing,
            &setup.grid,
            t,
            seed,
            setup.synthesis,
        )?;
        dump_scan(dir, &m, if per_bs { &bs_maps } else { &[] })?;
    }
    write_manifest(dir, setup, seed, threshold)?;
    read_manifest(dir)
}

pub fn read_manifest(dir: &Path) -> Result<MapManifest> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path,
        reason: e.to_string(),
    })
}

/// Loads dumped fused maps, checking they were produced for this setup.
pub fn load_dumped_maps(setup: &Setup, dir: &Path) -> Result<(MapManifest, Vec<SoftMap>)> {
    let manifest = read_manifest(dir)?;
    if manifest.maps_key != setup.maps_key(manifest.seed) {
        return Err(Error::config(format!(
            "maps in {} were produced with a different scenario, sensing set, grid or synthesis",
            dir.display()
        )));
    }
    let maps = (0..manifest.num_scans)
        .map(|t| io::read_soft_map(&dir.join(fused_name(t))))
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, maps))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct OspaRow {
    scan_index: usize,
    filter: &'static str,
    total: f64,
    localization: f64,
    missed: f64,
    false_alarm: f64,
    cardinality: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct MeasurementRow {
    scan_index: usize,
    filter: &'static str,
    x: f64,
    y: f64,
    cov_xx: f64,
    cov_xy: f64,
    cov_yy: f64,
    members: usize,
    gated_track: String,
}

/// report.json plus ospa.csv, tracks.csv, measurements.csv and capacity.csv.
pub fn write_outputs(report: &TrackReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.json"), report.to_json()?)?;
    let mut ospa_rows = Vec::new();
    let mut track_rows = Vec::new();
    let mut meas_rows = Vec::new();
    for f in &report.filters {
        let name = f.filter.as_str();
        for s in &f.scans {
            ospa_rows.push(OspaRow {
                scan_index: s.scan_index,
                filter: name,
                total: s.ospa.total,
                localization: s.ospa.localization,
                missed: s.ospa.missed,
                false_alarm: s.ospa.false_alarm,
                cardinality: s.ospa.cardinality,
            });
            for e in &s.estimates {
                track_rows.push(TrackLogRow {
                    scan_index: s.scan_index,
                    filter: name,
                    track_id: e.track_id,
                    x: e.x,
                    y: e.y,
                    vx: e.vx,
                    vy: e.vy,
                    weight: e.weight,
                    class_label: e
                        .class_label
                        .map(|c| c.as_str().to_string())
                        .unwrap_or_default(),
                });
            }
            for m in &s.measurements {
                meas_rows.push(MeasurementRow {
                    scan_index: s.scan_index,
                    filter: name,
                    x: m.x,
                    y: m.y,
                    cov_xx: m.cov[0],
                    cov_xy: m.cov[1],
                    cov_yy: m.cov[2],
                    members: m.members,
                    gated_track: m.gated_track.map(|id| id.to_string()).unwrap_or_default(),
                });
            }
        }
    }
    io::write_csv_rows(&dir.join("ospa.csv"), &ospa_rows)?;
    io::write_csv_rows(&dir.join("tracks.csv"), &track_rows)?;
    io::write_csv_rows(&dir.join("measurements.csv"), &meas_rows)?;
    io::write_csv_rows(&dir.join("capacity.csv"), &report.capacity.table)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepVariable {
    Ns,
    Gating,
}

impl std::str::FromStr for SweepVariable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ns" => Ok(Self::Ns),
            "gating" => Ok(Self::Gating),
            _ => Err(Error::config(format!(
                "unknown sweep variable '{s}' (expected ns or gating)"
            ))),
        }
    }
}

/// Runs sharing one config hash and filter, pooled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub config_hash: String,
    pub filter: FilterKind,
    pub n_sensing: usize,
    pub gating: GatingMode,
    pub runs: usize,
    pub seeds: Vec<u64>,
    /// Median over runs of the per-run median OSPA.
    pub median_ospa: f64,
    pub mean_ospa: f64,
    pub accuracy: Option<f64>,
    pub capacity_bits_per_s: f64,
    /// Per-scan OSPA averaged over runs.
    pub ospa_series: Vec<f64>,
}

/// Groups reports by (config hash, filter) in first-seen order. Reports with
/// different hashes never share a row.
pub fn aggregate(reports: &[TrackReport]) -> Vec<AggregateRow> {
    let mut order: Vec<(String, FilterKind)> = Vec::new();
    let mut groups: BTreeMap<(String, FilterKind), Vec<(&TrackReport, &FilterReport)>> =
        BTreeMap::new();
    for r in reports {
        for f in &r.filters {
            let key = (r.metadata.config_hash.clone(), f.filter);
            if !groups.contains_key(&key) {
                order.push(key.clone());
            }
            groups.entry(key).or_default().push((r, f));
        }
    }
    order
        .into_iter()
        .map(|key| {
            let members = &groups[&key];
            let (first, _) = members[0];
            let medians: Vec<f64> = members.iter().map(|(_, f)| f.summary.median_ospa).collect();
            let mean_ospa = members
                .iter()
                .map(|(_, f)| f.summary.mean_ospa)
                .sum::<f64>()
                / members.len() as f64;
            let mut confusion = ConfusionCounts::default();
            for (_, f) in members {
                confusion.merge(&f.summary.confusion);
            }
            let n_scans = members
                .iter()
                .map(|(_, f)| f.scans.len())
                .min()
                .unwrap_or(0);
            let ospa_series = (0..n_scans)
                .map(|t| {
                    members
                        .iter()
                        .map(|(_, f)| f.scans[t].ospa.total)
                        .sum::<f64>()
                        / members.len() as f64
                })
                .collect();
            AggregateRow {
                config_hash: key.0.clone(),
                filter: key.1,
                n_sensing: first.metadata.sensing_bs.len(),
                gating: first.metadata.gating,
                runs: members.len(),
                seeds: members.iter().map(|(r, _)| r.metadata.seed).collect(),
                median_ospa: median(&medians),
                mean_ospa,
                accuracy: accuracy(&confusion).ok(),
                capacity_bits_per_s: first.capacity.bits_per_s,
                ospa_series,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub variable: SweepVariable,
    pub reports: Vec<TrackReport>,
    pub table: Vec<AggregateRow>,
}

/// One run per sweep point per seed. N_s sweeps train one classifier per
/// sensing set; gating sweeps reuse each seed's maps for all three modes.
pub fn sweep(base: &RunConfig, variable: SweepVariable, seeds: &[u64]) -> Result<SweepResult> {
    let mut reports = Vec::new();
    match variable {
        SweepVariable::Ns => {
            let n_total = Setup::new(base.clone())?.n_total();
            for ns in 1..=n_total {
                let setup = Setup::new(RunConfig {
                    ns,
                    sensing_bs: None,
                    ..base.clone()
                })?;
                let classifier = obtain_classifier(&setup)?;
                let batch = seeds
                    .par_iter()
                    .map(|&seed| {
                        let mut s = setup.clone();
                        s.config.seed = seed;
                        run(&s, classifier.as_ref(), None)
                    })
                    .collect::<Result<Vec<_>>>()?;
                reports.extend(batch);
            }
        }
        SweepVariable::Gating => {
            let setup = Setup::new(base.clone())?;
            let modes = setup.config.clustering.gating_sweep();
            let classifier = obtain_classifier(&setup.with_gating(GatingMode::Adaptive))?;
            let per_seed = seeds
                .par_iter()
                .map(|&seed| {
                    let threshold = calibrate_excision(&setup, seed)?;
                    let maps = simulate_maps(&setup, seed)?;
                    modes
                        .iter()
                        .map(|&g| {
                            run_on_cached_maps(
                                &setup.with_gating(g),
                                seed,
                                &maps,
                                threshold,
                                classifier.as_ref(),
                            )
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            // group by gating mode first so rows follow the sweep order
            for g in 0..modes.len() {
                for runs in &per_seed {
                    reports.push(runs[g].clone());
                }
            }
        }
    }
    let table = aggregate(&reports);
    Ok(SweepResult {
        variable,
        reports,
        table,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::FilterSelection;

    fn small(num_scans: usize) -> RunConfig {
        let mut cfg = RunConfig {
            num_scans: Some(num_scans),
            fast: true,
            gating: GatingMode::Fixed(6.0),
            ..RunConfig::default()
        };
        cfg.training.auto_train = false;
        cfg.clustering.calibration_trials = 4;
        cfg
    }

    #[test]
    fn quantile_picks_order_statistics() {
        let mut v = vec![5.0, 1.0, 3.0, 2.0, 4.0];
        assert_eq!(quantile(&mut v, 0.99), 5.0);
        assert_eq!(quantile(&mut v, 0.5), 3.0);
        assert_eq!(quantile(&mut v, 0.2), 1.0);
        assert_eq!(median(&[3.0, 1.0, 2.0, 10.0]), 2.5);
    }

    #[test]
    fn report_has_one_record_per_scan_and_filter() {
        let setup = Setup::new(small(10)).unwrap();
        let report = run(&setup, None, None).unwrap();
        assert_eq!(report.filters.len(), 2);
        for f in &report.filters {
            assert_eq!(f.scans.len(), 10);
            assert!(f.scans.iter().enumerate().all(|(i, s)| s.scan_index == i));
        }
        assert_eq!(report.metadata.num_scans, 10);
        assert_eq!(report.metadata.sensing_bs, vec![0, 2, 4]);
        assert!(report.classifier.is_none());
    }

    #[test]
    fn same_seed_gives_identical_json() {
        let mut cfg = small(6);
        cfg.filter = FilterSelection::Mbm;
        let a = run(&Setup::new(cfg.clone()).unwrap(), None, None)
            .unwrap()
            .to_json()
            .unwrap();
        let b = run(&Setup::new(cfg.clone()).unwrap(), None, None)
            .unwrap()
            .to_json()
            .unwrap();
        assert_eq!(a, b);
        cfg.seed = 2;
        let c = run(&Setup::new(cfg).unwrap(), None, None)
            .unwrap()
            .to_json()
            .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn calibrated_threshold_sits_above_noise_and_below_targets() {
        let setup = Setup::new(small(1)).unwrap();
        let thr = calibrate_excision(&setup, 1).unwrap();
        let (map, _) = fused_map(
            &setup.scenario,
            &setup.sensing,
            &setup.grid,
            0,
            1,
            setup.synthesis,
        )
        .unwrap();
        assert!(thr > 0.0);
        assert!(
            map.max_value() > 10.0 * thr,
            "peak {} vs threshold {thr}",
            map.max_value()
        );
        let mut off = small(1);
        off.clustering.calibrate_excision = false;
        assert_eq!(
            calibrate_excision(&Setup::new(off).unwrap(), 1).unwrap(),
            2e-7
        );
    }

    #[test]
    fn adaptive_gating_without_model_is_a_config_error() {
        let mut cfg = small(2);
        cfg.gating = GatingMode::Adaptive;
        let setup = Setup::new(cfg).unwrap();
        assert!(obtain_classifier(&setup).unwrap_err().is_config());
    }

    #[test]
    fn classification_uses_previous_scan_predictions() {
        let setup = Setup::new(small(8)).unwrap();
        let side = setup.config.classifier.side(setup.grid.dx_m);
        let mut r = rng::stream(3, &[]);
        let model = CnnModel::new(side, &setup.config.classifier, &mut r).unwrap();
        let thr = calibrate_excision(&setup, 1).unwrap();
        let maps = simulate_maps(&setup, 1).unwrap();
        let mut trace = Vec::new();
        track_scans(
            &setup,
            thr,
            Some(&model),
            &[FilterKind::Phd, FilterKind::Mbm],
            |t| Ok(maps[t].clone()),
            Some(&mut trace),
        )
        .unwrap();
        for filter in [FilterKind::Phd, FilterKind::Mbm] {
            let mut handed_over: Vec<u64> = Vec::new();
            for t in 0..8 {
                let events: Vec<&TraceEvent> = trace
                    .iter()
                    .filter(|e| e.scan == t && (e.filter == Some(filter) || e.filter.is_none()))
                    .collect();
                let stages: Vec<Stage> = events.iter().map(|e| e.stage).collect();
                let mut sorted = stages.clone();
                sorted.sort();
                assert_eq!(stages, sorted, "scan {t}: stages out of order");
                assert_eq!(stages.len(), 6);
                let classify = events.iter().find(|e| e.stage == Stage::Classify).unwrap();
                assert_eq!(
                    classify.track_ids, handed_over,
                    "scan {t} classified tracks not from t-1"
                );
                handed_over = events
                    .iter()
                    .find(|e| e.stage == Stage::Track)
                    .unwrap()
                    .track_ids
                    .clone();
            }
        }
    }

    #[test]
    fn dumped_maps_reproduce_the_run() {
        let cfg = small(4);
        let setup = Setup::new(cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let direct = run(&setup, None, Some(dir.path())).unwrap();
        let (manifest, maps) = load_dumped_maps(&setup, dir.path()).unwrap();
        assert!(dir.path().join("bs2_0003.bin").is_file());
        let replay = run_on_cached_maps(
            &setup,
            manifest.seed,
            &maps,
            manifest.excision_threshold,
            None,
        )
        .unwrap();
        assert_eq!(direct.to_json().unwrap(), replay.to_json().unwrap());
        let mut other = small(4);
        other.ns = 2;
        assert!(load_dumped_maps(&Setup::new(other).unwrap(), dir.path())
            .unwrap_err()
            .is_config());
    }

    #[test]
    fn aggregate_never_mixes_hashes() {
        let setup = Setup::new(small(3)).unwrap();
        let a = run(&setup, None, None).unwrap();
        let mut s2 = setup.clone();
        s2.config.seed = 5;
        let b = run(&s2, None, None).unwrap();
        let c = run(&setup.with_gating(GatingMode::Fixed(4.0)), None, None).unwrap();
        let rows = aggregate(&[a.clone(), b, c]);
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[0].runs, 2);
        assert_eq!(rows[0].seeds, vec![1, 5]);
        assert_eq!(rows[2].runs, 1);
        assert_ne!(rows[0].config_hash, rows[2].config_hash);
        assert_eq!(rows[0].ospa_series.len(), 3);
    }

    #[test]
    fn capacity_column_matches_metrics() {
        let setup = Setup::new(small(1)).unwrap();
        let cap = capacity_report(&setup).unwrap();
        let direct = aggregate_capacity(&setup.config.capacity_params(3, 6)).unwrap();
        assert_eq!(cap.bits_per_s, direct);
        assert_eq!(cap.table.len(), 7 * 5);
    }

    #[test]
    fn write_outputs_produces_all_files() {
        let setup = Setup::new(small(3)).unwrap();
        let report = run(&setup, None, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_outputs(&report, dir.path()).unwrap();
        for f in [
            "report.json",
            "ospa.csv",
            "tracks.csv",
            "measurements.csv",
            "capacity.csv",
        ] {
            assert!(dir.path().join(f).is_file(), "{f}");
        }
        let text = std::fs::read_to_string(dir.path().join("ospa.csv")).unwrap();
        assert_eq!(text.lines().count(), 1 + 2 * 3);
        let back: TrackReport =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap())
                .unwrap();
        assert_eq!(back, report);
    }
}
