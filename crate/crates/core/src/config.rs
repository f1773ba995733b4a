//! Run configuration: a preset (desk or paper) deep-merged with a user TOML
//! file, plus command-line overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classifier::ClassifierConfig;
use crate::clustering::{ClusteringConfig, GatingMode};
use crate::error::{Error, Result};
use crate::fusion::GridSpec;
use crate::metrics::{CapacityParams, OspaConfig};
use crate::radio::RadioParams;
use crate::scenario::Scenario;
use crate::tracking::{FilterKind, TrackerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    #[default]
    Desk,
    Paper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterSelection {
    Phd,
    Mbm,
    #[default]
    Both,
}

impl FilterSelection {
    pub fn kinds(self) -> Vec<FilterKind> {
        match self {
            FilterSelection::Phd => vec![FilterKind::Phd],
            FilterSelection::Mbm => vec![FilterKind::Mbm],
            FilterSelection::Both => vec![FilterKind::Phd, FilterKind::Mbm],
        }
    }
}

impl std::str::FromStr for FilterSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "phd" => Ok(Self::Phd),
            "mbm" => Ok(Self::Mbm),
            "both" => Ok(Self::Both),
            _ => Err(Error::config(format!(
                "unknown filter '{s}' (expected phd, mbm or both)"
            ))),
        }
    }
}

/// Cartesian grid of the fused soft map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Δx
    pub dx_m: f64,
    /// Δy
    pub dy_m: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            dx_m: 0.1,
            dy_m: 0.1,
        }
    }
}

/// Where the classifier comes from and how its training data is generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    /// Pre-trained model file; trained on the fly when absent and `auto_train` is set.
    pub model_path: Option<PathBuf>,
    pub auto_train: bool,
    /// Random layouts used for training (a disjoint seeded set is used for testing).
    pub layouts: usize,
    pub test_layouts: usize,
    pub scans_per_layout: usize,
    pub pedestrians: usize,
    pub vehicles: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            model_path: None,
            auto_train: true,
            layouts: 16,
            test_layouts: 3,
            scans_per_layout: 20,
            pedestrians: 2,
            vehicles: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub ospa: OspaConfig,
    /// SNR^(c), linear.
    pub comm_snr_linear: f64,
    /// Downlink subcarriers K used for the capacity figure.
    pub comm_subcarriers: usize,
    /// Downlink subcarrier spacing Δf in Hz.
    pub comm_subcarrier_spacing_hz: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            ospa: OspaConfig::default(),
            comm_snr_linear: 6.43,
            comm_subcarriers: 3168,
            comm_subcarrier_spacing_hz: 120.0e3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    /// Scenario file (JSON or TOML) replacing the preset layout.
    pub scenario_file: Option<PathBuf>,
    pub seed: u64,
    pub filter: FilterSelection,
    pub gating: GatingMode,
    /// N_s; the sensing set is spread evenly over the ring.
    pub ns: usize,
    /// Explicit sensing BS indices, overriding `ns`.
    pub sensing_bs: Option<Vec<usize>>,
    /// N_m override.
    pub num_scans: Option<usize>,
    pub out: PathBuf,
    pub dump_maps: bool,
    /// Direct column synthesis instead of the signal-level chain.
    pub fast: bool,
    pub grid: GridConfig,
    pub radio: RadioParams,
    pub clustering: ClusteringConfig,
    pub tracker: TrackerConfig,
    pub classifier: ClassifierConfig,
    pub training: TrainingConfig,
    pub metrics: MetricsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::preset(Preset::Desk)
    }
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let (radio, clustering) = match preset {
            Preset::Desk => (RadioParams::desk(), ClusteringConfig::desk()),
            Preset::Paper => (RadioParams::paper(), ClusteringConfig::default()),
        };
        Self {
            preset,
            scenario_file: None,
            seed: 1,
            filter: FilterSelection::Both,
            gating: GatingMode::Adaptive,
            ns: 3,
            sensing_bs: None,
            num_scans: None,
            out: PathBuf::from("out"),
            dump_maps: false,
            fast: false,
            grid: GridConfig::default(),
            radio,
            clustering,
            tracker: TrackerConfig::default(),
            classifier: ClassifierConfig::default(),
            training: TrainingConfig::default(),
            metrics: MetricsConfig::default(),
        }
    }

    /// Parses TOML text on top of the preset it names (desk when absent).
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let user: toml::Table =
            toml::from_str(text).map_err(|e| Error::config(format!("config: {e}")))?;
        let preset = match user.get("preset") {
            None => Preset::Desk,
            Some(v) => v
                .clone()
                .try_into()
                .map_err(|e| Error::config(format!("config: preset: {e}")))?,
        };
        let mut base = toml::Table::try_from(Self::preset(preset))
            .map_err(|e| Error::config(format!("config: {e}")))?;
        deep_merge(&mut base, user);
        let cfg: Self = base
            .try_into()
            .map_err(|e| Error::config(format!("config: {e}")))?;
        Ok(cfg)
    }

    /// Loads a config file; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        if let Some(p) = cfg.scenario_file.as_mut() {
            rebase(p);
        }
        if let Some(p) = cfg.training.model_path.as_mut() {
            rebase(p);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.radio.validate()?;
        self.clustering.validate()?;
        self.tracker.validate()?;
        self.classifier.validate()?;
        self.metrics.ospa.validate()?;
        if !(self.grid.dx_m > 0.0 && self.grid.dy_m > 0.0) {
            return Err(Error::config("grid: dx_m and dy_m must be > 0"));
        }
        if !(self.metrics.comm_snr_linear > 0.0) {
            return Err(Error::config("metrics: comm_snr_linear must be > 0"));
        }
        if self.num_scans == Some(0) {
            return Err(Error::config("num_scans must be >= 1"));
        }
        if let Some(p) = &self.scenario_file {
            if !p.is_file() {
                return Err(Error::config(format!(
                    "scenario file {} does not exist",
                    p.display()
                )));
            }
        }
        if let Some(p) = &self.training.model_path {
            if !p.is_file() {
                return Err(Error::config(format!(
                    "model file {} does not exist",
                    p.display()
                )));
            }
        }
        let t = &self.training;
        if t.auto_train
            && (t.layouts == 0 || t.scans_per_layout == 0 || t.pedestrians == 0 || t.vehicles == 0)
        {
            return Err(Error::config(
                "training: layouts, scans and both class counts must be >= 1",
            ));
        }
        Ok(())
    }

    /// The scenario the run simulates: preset or file, with the config's radio
    /// parameters and scan-count override applied.
    pub fn scenario(&self) -> Result<Scenario> {
        let mut sc = match &self.scenario_file {
            Some(p) => load_scenario(p)?,
            None => match self.preset {
                Preset::Desk => Scenario::desk(),
                Preset::Paper => Scenario::paper(),
            },
        };
        if self.scenario_file.is_none() {
            sc.radio = self.radio.clone();
        }
        if let Some(n) = self.num_scans {
            sc.num_scans = n;
        }
        sc.validate()?;
        Ok(sc)
    }

    /// Sensing BS indices: the explicit list, or ⌊i·N_tot/N_s⌋ for i < N_s.
    pub fn sensing_set(&self, n_total: usize) -> Result<Vec<usize>> {
        let set = match &self.sensing_bs {
            Some(list) => {
                let mut v = list.clone();
                v.sort_unstable();
                v.dedup();
                if v.len() != list.len() {
                    return Err(Error::config("sensing_bs contains duplicates"));
                }
                v
            }
            None => {
                if self.ns > n_total {
                    return Err(Error::config(format!(
                        "ns = {} exceeds N_tot = {n_total}",
                        self.ns
                    )));
                }
                (0..self.ns).map(|i| i * n_total / self.ns).collect()
            }
        };
        if set.is_empty() {
            return Err(Error::config("at least one sensing BS is required"));
        }
        if let Some(&bad) = set.iter().find(|&&b| b >= n_total) {
            return Err(Error::config(format!(
                "sensing BS {bad} out of range (N_tot = {n_total})"
            )));
        }
        Ok(set)
    }

    pub fn grid_spec(&self, scenario: &Scenario) -> Result<GridSpec> {
        let g = GridSpec::covering(&scenario.area, self.grid.dx_m, self.grid.dy_m);
        g.validate()?;
        Ok(g)
    }

    /// Clustering parameters with the run-level gating mode applied.
    pub fn clustering_config(&self) -> ClusteringConfig {
        ClusteringConfig {
            gating: self.gating,
            ..self.clustering.clone()
        }
    }

    pub fn capacity_params(&self, n_sensing: usize, n_total: usize) -> CapacityParams {
        CapacityParams {
            comm_snr_linear: self.metrics.comm_snr_linear,
            n_sensing,
            n_total,
            rho_p: self.radio.sensing_power_fraction,
            num_subcarriers: self.metrics.comm_subcarriers,
            subcarrier_spacing_hz: self.metrics.comm_subcarrier_spacing_hz,
        }
    }

    /// SHA-256 of the canonical JSON form with the seed and the output
    /// location blanked: runs that differ only by seed share a hash.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.seed = 0;
        c.out = PathBuf::new();
        c.dump_maps = false;
        let value = serde_json::to_value(&c).expect("config serializes");
        let text = serde_json::to_string(&value).expect("value serializes");
        Sha256::digest(text.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

fn deep_merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => deep_merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(format!("cannot read scenario {}: {e}", path.display())))?;
    let sc: Scenario = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text)
            .map_err(|e| Error::config(format!("scenario {}: {e}", path.display())))?
    } else {
        toml::from_str(&text)
            .map_err(|e| Error::config(format!("scenario {}: {e}", path.display())))?
    };
    Ok(sc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_desk_preset() {
        assert_eq!(
            RunConfig::from_toml_str("").unwrap(),
            RunConfig::preset(Preset::Desk)
        );
    }

    #[test]
    fn partial_sections_merge_into_the_preset() {
        let cfg = RunConfig::from_toml_str(
            "preset = \"paper\"\nseed = 9\ngating = \"fixed-4\"\n[radio]\nsensing_power_fraction = 0.2\n[tracker.mbm]\ncap = 5\n",
        )
        .unwrap();
        assert_eq!(cfg.radio.num_subcarriers, 3168);
        assert_eq!(cfg.radio.sensing_power_fraction, 0.2);
        assert_eq!(cfg.radio.num_tx_antennas, 50);
        assert_eq!(cfg.tracker.mbm.cap, 5);
        assert_eq!(
            cfg.tracker.mbm.assoc_gate,
            TrackerConfig::default().mbm.assoc_gate
        );
        assert_eq!(cfg.gating, GatingMode::Fixed(4.0));
        assert_eq!(cfg.seed, 9);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        assert!(RunConfig::from_toml_str("bogus = 1")
            .unwrap_err()
            .is_config());
        assert!(RunConfig::from_toml_str("[radio]\nnum_subcarriers = \"x\"")
            .unwrap_err()
            .is_config());
        assert!(RunConfig::from_toml_str("gating = \"fixed-0\"").is_err());
        let cfg = RunConfig {
            ns: 7,
            ..RunConfig::default()
        };
        assert!(cfg.sensing_set(6).unwrap_err().is_config());
        let cfg = RunConfig {
            scenario_file: Some("/nonexistent.json".into()),
            ..RunConfig::default()
        };
        assert!(cfg.validate().unwrap_err().is_config());
    }

    #[test]
    fn sensing_subsets_spread_over_the_ring() {
        let sets: Vec<Vec<usize>> = (1..=6)
            .map(|ns| {
                RunConfig {
                    ns,
                    ..RunConfig::default()
                }
                .sensing_set(6)
                .unwrap()
            })
            .collect();
        assert_eq!(sets[0], vec![0]);
        assert_eq!(sets[1], vec![0, 3]);
        assert_eq!(sets[2], vec![0, 2, 4]);
        assert_eq!(sets[5], vec![0, 1, 2, 3, 4, 5]);
        let cfg = RunConfig {
            sensing_bs: Some(vec![5, 1]),
            ..RunConfig::default()
        };
        assert_eq!(cfg.sensing_set(6).unwrap(), vec![1, 5]);
    }

    #[test]
    fn hash_ignores_seed_and_output_only() {
        let a = RunConfig::default();
        let b = RunConfig {
            seed: 99,
            out: "elsewhere".into(),
            ..a.clone()
        };
        let c = RunConfig { ns: 4, ..a.clone() };
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn shipped_defaults_file_parses() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/paper_defaults.toml");
        let cfg = RunConfig::load(&path).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.preset, Preset::Paper);
        assert_eq!(cfg.radio, RadioParams::paper());
        assert_eq!(cfg.classifier, ClassifierConfig::default());
    }

    #[test]
    fn scenario_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.json");
        std::fs::write(&p, serde_json::to_string(&Scenario::desk()).unwrap()).unwrap();
        let cfg = RunConfig {
            scenario_file: Some(p),
            num_scans: Some(10),
            ..RunConfig::default()
        };
        cfg.validate().unwrap();
        let sc = cfg.scenario().unwrap();
        assert_eq!(sc.num_scans, 10);
        assert_eq!(sc.targets, Scenario::desk().targets);
    }
}
