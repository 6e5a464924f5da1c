//! Experiment configuration: one TOML file, every key optional, unknown keys rejected.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cnn::TrainConfig;
use crate::cs::CsConfig;
use crate::error::{Error, Result};
use crate::metrics::BerAccounting;
use crate::simulator::{derive_seed, gen_spreading, snr_to_noise_var, PowerProfile, RateModel, Scenario, SpreadingMatrix};
use crate::threshold::ThresholdConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DetectorKind {
    Threshold,
    Omp,
    Amp,
    Cnn,
    /// Genie-aided: the true support.
    Oracle,
}

impl DetectorKind {
    pub const ALL: [DetectorKind; 5] = [
        DetectorKind::Threshold,
        DetectorKind::Omp,
        DetectorKind::Amp,
        DetectorKind::Cnn,
        DetectorKind::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DetectorKind::Threshold => "threshold",
            DetectorKind::Omp => "omp",
            DetectorKind::Amp => "amp",
            DetectorKind::Cnn => "cnn",
            DetectorKind::Oracle => "oracle",
        }
    }
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DetectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DetectorKind::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown detector `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub devices: usize,
    pub spreading_factor: usize,
    pub antennas: usize,
    pub symbols_per_packet: usize,
    /// Upper end of the per-packet activity rate `U[0, pmax]`.
    pub pmax: f64,
    /// Variance of each Rayleigh channel coefficient.
    pub coeff_var: f64,
    /// Linear transmit power per group.
    pub group_powers: Vec<f64>,
    /// Devices per group in index order; defaults to all devices in the first group.
    pub group_sizes: Option<Vec<usize>>,
    /// Activity rate that defines signal power in the SNR; defaults to `pmax`.
    pub pa_nominal: Option<f64>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            devices: 16,
            spreading_factor: 16,
            antennas: 8,
            symbols_per_packet: 8,
            pmax: 0.1,
            coeff_var: 1.0,
            group_powers: vec![1.0],
            group_sizes: None,
            pa_nominal: None,
        }
    }
}

impl ScenarioConfig {
    pub fn powers(&self) -> Result<PowerProfile> {
        match &self.group_sizes {
            Some(sizes) => {
                if sizes.iter().sum::<usize>() != self.devices {
                    return Err(Error::Config(format!(
                        "group_sizes sum to {}, expected {} devices",
                        sizes.iter().sum::<usize>(),
                        self.devices
                    )));
                }
                PowerProfile::from_group_sizes(self.group_powers.clone(), sizes)
            }
            None => {
                let mut sizes = vec![0; self.group_powers.len()];
                if let Some(first) = sizes.first_mut() {
                    *first = self.devices;
                }
                PowerProfile::from_group_sizes(self.group_powers.clone(), &sizes)
            }
        }
    }

    pub fn pa_nominal(&self) -> f64 {
        self.pa_nominal.unwrap_or(self.pmax)
    }

    pub fn noise_var(&self, gamma_db: f64) -> Result<f64> {
        snr_to_noise_var(gamma_db, &self.powers()?, self.pa_nominal())
    }

    /// Builds the scenario at SNR `gamma_db` with the given activity model.
    pub fn build(&self, codes: &SpreadingMatrix, gamma_db: f64, rate: RateModel) -> Result<Scenario> {
        let sc = Scenario {
            codes: codes.clone(),
            powers: self.powers()?,
            antennas: self.antennas,
            symbols_per_packet: self.symbols_per_packet,
            coeff_var: self.coeff_var,
            noise_var: self.noise_var(gamma_db)?,
            rate,
        };
        sc.validate()?;
        Ok(sc)
    }

    fn validate(&self) -> Result<()> {
        if self.devices == 0 || self.spreading_factor == 0 || self.antennas == 0 || self.symbols_per_packet == 0 {
            return Err(Error::Config("scenario dimensions must all be at least 1".into()));
        }
        if !(self.pmax > 0.0 && self.pmax <= 1.0) {
            return Err(Error::Config(format!("pmax {} outside (0, 1]", self.pmax)));
        }
        if !(self.coeff_var > 0.0) {
            return Err(Error::Config("coeff_var must be positive".into()));
        }
        let pa = self.pa_nominal();
        if !(pa > 0.0 && pa <= 1.0) {
            return Err(Error::Config(format!("pa_nominal {pa} outside (0, 1]")));
        }
        self.powers()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    /// Total frames across train, validation and test splits.
    pub samples: usize,
    pub snr_db: f64,
    /// Frames per shard file.
    pub shard_size: usize,
    /// Also store channels, symbols and received signals.
    pub store_frames: bool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            samples: 20_000,
            snr_db: 10.0,
            shard_size: 2_000,
            store_frames: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorsConfig {
    pub enabled: Vec<DetectorKind>,
    pub threshold: ThresholdConfig,
    pub cs: CsConfig,
    /// Decision threshold on the network's activity probabilities.
    pub cnn_threshold: f64,
    /// Tune the OMP residual tolerance and AMP score threshold on held-out frames.
    pub calibrate: bool,
    pub calibration_frames: usize,
}

impl Default for DetectorsConfig {
    fn default() -> Self {
        Self {
            enabled: DetectorKind::ALL.to_vec(),
            threshold: ThresholdConfig::default(),
            cs: CsConfig::default(),
            cnn_threshold: 0.5,
            calibrate: true,
            calibration_frames: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub snr_db: Vec<f64>,
    pub activity_rates: Vec<f64>,
    /// SNR of the activity sweep and of the per-device table.
    pub fixed_snr_db: f64,
    pub frames: usize,
    pub ber_accounting: BerAccounting,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            snr_db: vec![0.0, 5.0, 10.0, 15.0],
            activity_rates: vec![0.02, 0.05, 0.1, 0.15, 0.2],
            fixed_snr_db: 10.0,
            frames: 2_000,
            ber_accounting: BerAccounting::MissesAsErrors,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThresholdAnalysisConfig {
    /// Device counts for the analytic-versus-empirical comparison.
    pub devices: Vec<usize>,
    pub snr_db: Vec<f64>,
    /// Symbol decisions per `(K, gamma)` point.
    pub symbols: usize,
    /// Random `(mu, sigma, pa)` draws for the convexity and argmin checks.
    pub draws: usize,
    /// Points on each reported `tau` grid.
    pub grid_points: usize,
}

impl Default for ThresholdAnalysisConfig {
    fn default() -> Self {
        Self {
            devices: vec![1, 4],
            snr_db: vec![5.0, 10.0],
            symbols: 100_000,
            draws: 100,
            grid_points: 201,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Master seed; every random stream is derived from it.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub scenario: ScenarioConfig,
    pub dataset: DatasetConfig,
    pub train: TrainConfig,
    pub detectors: DetectorsConfig,
    pub eval: EvalConfig,
    pub threshold_analysis: ThresholdAnalysisConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            output_dir: PathBuf::from("out"),
            scenario: ScenarioConfig::default(),
            dataset: DatasetConfig::default(),
            train: TrainConfig::default(),
            detectors: DetectorsConfig::default(),
            eval: EvalConfig::default(),
            threshold_analysis: ThresholdAnalysisConfig::default(),
        }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::Config(format!("config file {} not found", path.display()))
            } else {
                Error::io(path, e)
            }
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Checks every setting before any work starts.
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        let k = self.scenario.devices;
        if self.dataset.samples == 0 {
            return Err(Error::Config("dataset.samples must be positive".into()));
        }
        if self.dataset.shard_size == 0 {
            return Err(Error::Config("dataset.shard_size must be positive".into()));
        }
        self.train.validate().map_err(|e| Error::Config(e.to_string()))?;
        let d = &self.detectors;
        if d.enabled.is_empty() {
            return Err(Error::Config("detectors.enabled must not be empty".into()));
        }
        d.threshold.validate().map_err(|e| Error::Config(e.to_string()))?;
        d.cs.validate(k).map_err(|e| Error::Config(e.to_string()))?;
        if !(d.cnn_threshold > 0.0 && d.cnn_threshold < 1.0) {
            return Err(Error::Config("detectors.cnn_threshold must lie in (0, 1)".into()));
        }
        if d.calibrate && d.calibration_frames == 0 {
            return Err(Error::Config("detectors.calibration_frames must be positive".into()));
        }
        let e = &self.eval;
        if e.frames == 0 || e.snr_db.is_empty() || e.activity_rates.is_empty() {
            return Err(Error::Config("eval needs frames and non-empty grids".into()));
        }
        if let Some(r) = e.activity_rates.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::Config(format!("activity rate {r} outside [0, 1]")));
        }
        if e.snr_db.iter().chain([&e.fixed_snr_db]).any(|g| !g.is_finite()) || !self.dataset.snr_db.is_finite() {
            return Err(Error::Config("SNR values must be finite".into()));
        }
        let t = &self.threshold_analysis;
        if t.devices.contains(&0) || t.symbols == 0 || t.draws == 0 || t.grid_points < 3 {
            return Err(Error::Config("threshold_analysis settings must be positive".into()));
        }
        Ok(())
    }

    /// Hash of every setting except the output location, stamped into outputs.
    pub fn config_hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let json = serde_json::to_string(&c).expect("config serializes");
        sha256_hex(json.as_bytes())[..16].to_owned()
    }

    /// Hash of the settings a generated dataset depends on.
    pub fn data_fingerprint(&self) -> String {
        let json = serde_json::to_string(&(&self.scenario, &self.dataset, self.seed)).expect("config serializes");
        sha256_hex(json.as_bytes())[..16].to_owned()
    }

    /// Hash of the settings a trained network depends on; checkpoints carry it.
    pub fn model_fingerprint(&self) -> String {
        let json =
            serde_json::to_string(&(&self.scenario, &self.dataset, &self.train, self.seed)).expect("config serializes");
        sha256_hex(json.as_bytes())[..16].to_owned()
    }

    pub fn stream_seed(&self, purpose: &str) -> u64 {
        derive_seed(self.seed, purpose)
    }

    /// Spreading codes shared by every command.
    pub fn codes(&self) -> Result<SpreadingMatrix> {
        gen_spreading(self.scenario.devices, self.scenario.spreading_factor, self.stream_seed("codes"))
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.stream_seed("train"),
            ..self.train
        }
    }

    pub fn with_overrides(mut self, seed: Option<u64>, out: Option<PathBuf>, detectors: Option<Vec<DetectorKind>>) -> Result<Self> {
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(o) = out {
            self.output_dir = o;
        }
        if let Some(d) = detectors {
            self.detectors.enabled = d;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn out_path(&self, name: &str) -> PathBuf {
        self.output_dir.join(name)
    }
}
