//! End-to-end experiment commands: dataset generation, training, evaluation sweeps,
//! threshold analysis and the per-device metric table.
//!
//! Every command is a pure function of the configuration: outputs carry the config
//! hash and contain no timestamps, so reruns reproduce them byte for byte.

use std::collections::BTreeMap;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use ndarray::Array3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binio::write_atomic;
use crate::cnn::{
    hypothesis_test, load_checkpoint, load_train_state, save_checkpoint, save_train_state, split_indices,
    tensor_to_input, train_from_state, ArchSpec, Checkpoint, EpochRecord, Sample, Standardizer, TrainState,
};
use crate::config::{DetectorKind, ExperimentConfig};
use crate::container::{read_dataset, read_header, write_dataset, Dataset, DatasetHeader, DatasetRecord};
use crate::error::{Error, Result};
use crate::eval::{calibrate_cs, evaluate, Calibration, CnnDetector, DetectorSet, PointResult};
use crate::frontend::observe;
use crate::metrics::{precision_recall_f1, wilson_interval, ConfusionCounts, Tally, Z95};
use crate::simulator::{ActivityVector, RateModel, SpreadingMatrix};
use crate::validation::{
    analytic_vs_empirical_pe, convexity_study, fixed_channel_rows, objective_curve, ConvexityDraw, PeHarnessConfig,
    PeReport,
};

pub const DATA_DIR: &str = "data";
pub const CHECKPOINT_FILE: &str = "cnn.ckpt";
pub const TRAIN_STATE_FILE: &str = "cnn_state.bin";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const SWEEP_SNR_FILE: &str = "sweep_snr.csv";
pub const SWEEP_ACTIVITY_FILE: &str = "sweep_activity.csv";
pub const CALIBRATION_FILE: &str = "calibration.csv";
pub const TABLE_FRAMES_FILE: &str = "table_frames.csv";
pub const TABLE_METRICS_FILE: &str = "table_metrics.csv";
pub const PE_SUMMARY_FILE: &str = "threshold_pe_summary.csv";
pub const PE_FIXED_FILE: &str = "threshold_pe_fixed.csv";
pub const CONVEXITY_FILE: &str = "threshold_convexity.csv";
pub const CURVES_FILE: &str = "threshold_curves.csv";

/// Writes `rows` as CSV with a header line, atomically.
pub fn write_csv<R: Serialize>(path: &Path, rows: &[R]) -> Result<()> {
    write_atomic(path, |out| {
        let mut w = csv::Writer::from_writer(out);
        for r in rows {
            w.serialize(r).map_err(|e| Error::format(Some(path.to_path_buf()), e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    })
}

pub fn read_csv<R: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<R>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(io) if io.kind() == std::io::ErrorKind::NotFound => Error::MissingInput(path.to_path_buf()),
        _ => Error::format(Some(path.to_path_buf()), e.to_string()),
    })?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::format(Some(path.to_path_buf()), e.to_string())))
        .collect()
}

fn shard_path(cfg: &ExperimentConfig, shard: usize) -> PathBuf {
    cfg.out_path(DATA_DIR).join(format!("shard-{shard:05}.bin"))
}

fn shard_ranges(cfg: &ExperimentConfig) -> Vec<std::ops::Range<u64>> {
    let n = cfg.dataset.samples as u64;
    let size = cfg.dataset.shard_size as u64;
    (0..n.div_ceil(size)).map(|s| s * size..((s + 1) * size).min(n)).collect()
}

fn dataset_seed(cfg: &ExperimentConfig) -> u64 {
    cfg.stream_seed("dataset")
}

/// Approximate bytes per stored record.
fn record_bytes(cfg: &ExperimentConfig) -> u64 {
    let s = &cfg.scenario;
    let (k, nc, m, ns) = (s.devices as u64, s.spreading_factor as u64, s.antennas as u64, s.symbols_per_packet as u64);
    let mut b = 8 + 4 + 8 + 8 + k + 4 + 8 + 8 * m * k * ns;
    if cfg.dataset.store_frames {
        b += 4 + 8 + k * ns + 4 + 8 + 8 + 8 * m * k + 4 + 8 + 8 * m * nc * ns;
    }
    b
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenDataSummary {
    pub samples: usize,
    pub shards: usize,
    pub generated_shards: usize,
    pub reused_shards: usize,
    pub estimated_bytes: u64,
}

/// True when the shard on disk already holds exactly the expected frames.
fn shard_is_current(path: &Path, fingerprint: &str, range: &std::ops::Range<u64>) -> bool {
    match read_header(path) {
        Ok((h, n)) => h.fingerprint == fingerprint && h.first_index == range.start && n == range.end - range.start,
        Err(_) => false,
    }
}

/// Generates the dataset shard by shard. Shards already present with a matching
/// fingerprint are kept, so an interrupted run resumes where it stopped.
pub fn cmd_gen_data(cfg: &ExperimentConfig) -> Result<GenDataSummary> {
    cfg.validate()?;
    let codes = cfg.codes()?;
    let sc = cfg.scenario.build(&codes, cfg.dataset.snr_db, RateModel::Uniform { pmax: cfg.scenario.pmax })?;
    let seed = dataset_seed(cfg);
    let ranges = shard_ranges(cfg);
    let estimated_bytes = record_bytes(cfg) * cfg.dataset.samples as u64;

    let probe = 16.min(cfg.dataset.samples as u64);
    let t = Instant::now();
    for i in 0..probe {
        let f = sc.generate_frame::<f64>(seed, i)?;
        observe(&f, &sc.codes, &sc.powers)?;
    }
    let per_frame = t.elapsed().as_secs_f64() / probe as f64;
    info!(
        "dataset: {} samples in {} shards, about {:.1} MiB, estimated {:.0} s",
        cfg.dataset.samples,
        ranges.len(),
        estimated_bytes as f64 / (1 << 20) as f64,
        per_frame * cfg.dataset.samples as f64
    );

    let fingerprint = cfg.data_fingerprint();
    let header = DatasetHeader {
        config_hash: cfg.config_hash(),
        fingerprint: fingerprint.clone(),
        seed,
        first_index: 0,
        devices: cfg.scenario.devices,
        spreading_factor: cfg.scenario.spreading_factor,
        antennas: cfg.scenario.antennas,
        symbols: cfg.scenario.symbols_per_packet,
    };
    let mut summary = GenDataSummary {
        samples: cfg.dataset.samples,
        shards: ranges.len(),
        generated_shards: 0,
        reused_shards: 0,
        estimated_bytes,
    };
    for (s, range) in ranges.iter().enumerate() {
        let path = shard_path(cfg, s);
        if shard_is_current(&path, &fingerprint, range) {
            summary.reused_shards += 1;
            continue;
        }
        let records = range
            .clone()
            .into_par_iter()
            .map(|i| {
                let frame = sc.generate_frame::<f64>(seed, i)?;
                let tensor = observe(&frame, &sc.codes, &sc.powers)?;
                Ok(DatasetRecord {
                    index: i,
                    activity: frame.activity.clone(),
                    tensor,
                    frame: cfg.dataset.store_frames.then_some(frame),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let data = Dataset {
            header: DatasetHeader {
                first_index: range.start,
                ..header.clone()
            },
            records,
        };
        write_dataset(&path, &data)?;
        summary.generated_shards += 1;
        info!("wrote {} ({} frames)", path.display(), range.end - range.start);
    }
    Ok(summary)
}

/// Network inputs and labels for the whole dataset, in frame order.
struct LoadedData {
    inputs: Vec<Array3<f32>>,
    labels: Vec<Vec<bool>>,
}

fn load_dataset(cfg: &ExperimentConfig) -> Result<LoadedData> {
    let fingerprint = cfg.data_fingerprint();
    let mut inputs = Vec::with_capacity(cfg.dataset.samples);
    let mut labels = Vec::with_capacity(cfg.dataset.samples);
    for (s, range) in shard_ranges(cfg).iter().enumerate() {
        let path = shard_path(cfg, s);
        let (h, n) = read_header(&path)?;
        if h.fingerprint != fingerprint {
            return Err(Error::FingerprintMismatch {
                what: format!("dataset shard {}", path.display()),
                expected: fingerprint,
                found: h.fingerprint,
            });
        }
        if h.first_index != range.start || n != range.end - range.start {
            return Err(Error::format(Some(path), "shard does not cover the expected frames"));
        }
        let data = read_dataset::<f32>(&path)?;
        for rec in data.records {
            inputs.push(tensor_to_input(&rec.tensor));
            labels.push(rec.activity.bits().to_vec());
        }
    }
    if inputs.is_empty() {
        return Err(Error::param("dataset", "no samples"));
    }
    Ok(LoadedData { inputs, labels })
}

/// Options of the training command.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TrainOptions {
    /// Continue from the saved training state when it exists.
    pub resume: bool,
    /// Pause after this many epochs in this invocation.
    pub stop_after: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub completed: bool,
    pub epochs_this_run: usize,
    /// Activity error rate of the best network on the held-out test split.
    pub test_aer: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainLogRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_aer: f64,
    pub config_hash: String,
}

fn write_train_log(cfg: &ExperimentConfig, log: &[EpochRecord]) -> Result<()> {
    let hash = cfg.config_hash();
    let rows: Vec<TrainLogRow> = log
        .iter()
        .map(|r| TrainLogRow {
            epoch: r.epoch,
            train_loss: r.train_loss,
            val_loss: r.val_loss,
            val_aer: r.val_aer,
            config_hash: hash.clone(),
        })
        .collect();
    write_csv(&cfg.out_path(TRAIN_LOG_FILE), &rows)
}

/// Trains the network on the generated dataset and writes the best-validation
/// checkpoint, the epoch log and a resumable training state.
pub fn cmd_train(cfg: &ExperimentConfig, opts: TrainOptions) -> Result<TrainSummary> {
    cfg.validate()?;
    let tcfg = cfg.train_config();
    let fingerprint = cfg.model_fingerprint();
    let LoadedData { mut inputs, labels } = load_dataset(cfg)?;
    let (train_r, val_r, test_r) = split_indices(inputs.len(), &tcfg.split)?;
    if train_r.is_empty() || val_r.is_empty() {
        return Err(Error::param("dataset", "training and validation splits must be non-empty"));
    }
    let standardizer = Standardizer::fit(&inputs[train_r.clone()])?;
    let flat: Vec<Vec<f32>> = inputs
        .drain(..)
        .map(|mut x| {
            standardizer.apply(&mut x)?;
            Ok(x.into_iter().collect())
        })
        .collect::<Result<_>>()?;
    let samples: Vec<Sample<'_, f32>> = flat.iter().zip(&labels).map(|(x, y)| (x.as_slice(), y.as_slice())).collect();
    let s = &cfg.scenario;
    let arch = ArchSpec::standard(s.antennas, s.devices, s.symbols_per_packet);

    let state_path = cfg.out_path(TRAIN_STATE_FILE);
    let state = if opts.resume && state_path.exists() {
        let st: TrainState<f32> = load_train_state(&state_path, &fingerprint)?;
        if st.net.arch() != &arch {
            return Err(Error::format(Some(state_path.clone()), "architecture differs from the configuration"));
        }
        info!("resuming after epoch {}", st.epochs_done());
        st
    } else {
        TrainState::start(arch, tcfg.seed)?
    };
    let mut run = 0usize;
    let mut on_epoch = |st: &TrainState<f32>| -> Result<ControlFlow<()>> {
        run += 1;
        let last = st.log.last().expect("epoch recorded");
        info!(
            "epoch {}: train loss {:.5}, val loss {:.5}, val AER {:.5}",
            last.epoch, last.train_loss, last.val_loss, last.val_aer
        );
        save_train_state(&state_path, st, &fingerprint)?;
        write_train_log(cfg, &st.log)?;
        Ok(match opts.stop_after {
            Some(n) if run >= n => ControlFlow::Break(()),
            _ => ControlFlow::Continue(()),
        })
    };
    let already_finished = state.finished;
    let out = train_from_state(
        state,
        &samples[train_r.clone()],
        &samples[val_r.clone()],
        &tcfg,
        &mut on_epoch,
    )?;
    write_train_log(cfg, &out.log)?;
    let ckpt = Checkpoint::from_network(
        &out.best,
        standardizer,
        cfg.detectors.cnn_threshold,
        fingerprint,
        out.best_epoch,
    );
    save_checkpoint(&cfg.out_path(CHECKPOINT_FILE), &ckpt)?;

    let test_aer = if test_r.is_empty() {
        None
    } else {
        let test = &samples[test_r];
        let inputs: Vec<&[f32]> = test.iter().map(|(x, _)| *x).collect();
        let probs = out.best.predict_batch(&inputs)?;
        let mut counts = ConfusionCounts::new(cfg.scenario.devices);
        for (p, (_, y)) in probs.iter().zip(test) {
            let est = hypothesis_test(p, cfg.detectors.cnn_threshold)?;
            counts.record(&est, &ActivityVector::new(y.to_vec(), f64::NAN))?;
        }
        Some(counts.aer()?)
    };
    Ok(TrainSummary {
        best_epoch: out.best_epoch,
        completed: out.completed || already_finished,
        epochs_this_run: run,
        log: out.log,
        test_aer,
    })
}

/// Loads the trained network, refusing one trained under different settings.
pub fn load_cnn(cfg: &ExperimentConfig) -> Result<CnnDetector> {
    let path = cfg.out_path(CHECKPOINT_FILE);
    let ckpt = load_checkpoint(&path)?;
    let expected = cfg.model_fingerprint();
    if ckpt.config_hash != expected {
        return Err(Error::FingerprintMismatch {
            what: format!("checkpoint {}", path.display()),
            expected,
            found: ckpt.config_hash,
        });
    }
    let mut det = CnnDetector::from_checkpoint(&ckpt)?;
    det.threshold = cfg.detectors.cnn_threshold;
    Ok(det)
}

fn uses_cs(kinds: &[DetectorKind]) -> bool {
    kinds.iter().any(|k| matches!(k, DetectorKind::Omp | DetectorKind::Amp))
}

/// Detector settings at SNR `gamma_db`; compressed-sensing decision parameters are
/// tuned on calibration frames drawn under the training prior.
pub fn detector_set(
    cfg: &ExperimentConfig,
    codes: &SpreadingMatrix,
    gamma_db: f64,
    cnn: Option<&CnnDetector>,
) -> Result<(DetectorSet, Option<Calibration>)> {
    let d = &cfg.detectors;
    let mut cs = d.cs;
    let mut calibration = None;
    if d.calibrate && uses_cs(&d.enabled) {
        let sc = cfg.scenario.build(codes, gamma_db, RateModel::Uniform { pmax: cfg.scenario.pmax })?;
        let cal = calibrate_cs(&sc, &cs, cfg.stream_seed("calibration"), 0..d.calibration_frames as u64)?;
        cs = cal.apply(&cs);
        calibration = Some(cal);
    }
    let set = DetectorSet {
        kinds: d.enabled.clone(),
        threshold: d.threshold,
        cs,
        cnn: if d.enabled.contains(&DetectorKind::Cnn) { cnn.cloned() } else { None },
    };
    set.check()?;
    Ok((set, calibration))
}

fn cnn_if_enabled(cfg: &ExperimentConfig) -> Result<Option<CnnDetector>> {
    if cfg.detectors.enabled.contains(&DetectorKind::Cnn) {
        load_cnn(cfg).map(Some)
    } else {
        Ok(None)
    }
}

/// One evaluated operating point.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub gamma_db: f64,
    /// Fixed true activity rate, or `None` under the `U[0, pmax]` prior.
    pub pa: Option<f64>,
    pub calibration: Option<Calibration>,
    pub result: PointResult,
}

/// Evaluates all enabled detectors at SNR `gamma_db` on the shared evaluation stream.
pub fn evaluate_snr_point(
    cfg: &ExperimentConfig,
    codes: &SpreadingMatrix,
    gamma_db: f64,
    cnn: Option<&CnnDetector>,
) -> Result<SweepPoint> {
    let (set, calibration) = detector_set(cfg, codes, gamma_db, cnn)?;
    let sc = cfg.scenario.build(codes, gamma_db, RateModel::Uniform { pmax: cfg.scenario.pmax })?;
    let result = evaluate(
        &sc,
        &set,
        cfg.stream_seed("eval"),
        0..cfg.eval.frames as u64,
        cfg.eval.ber_accounting,
        false,
    )?;
    Ok(SweepPoint {
        gamma_db,
        pa: None,
        calibration,
        result,
    })
}

/// Evaluates at the fixed SNR with every device active with probability `pa`.
/// Detector parameters stay tuned to the prior, since the true rate is unknown.
pub fn evaluate_activity_point(
    cfg: &ExperimentConfig,
    codes: &SpreadingMatrix,
    set: &DetectorSet,
    pa: f64,
) -> Result<PointResult> {
    let sc = cfg.scenario.build(codes, cfg.eval.fixed_snr_db, RateModel::Fixed(pa))?;
    evaluate(
        &sc,
        set,
        cfg.stream_seed("eval-activity"),
        0..cfg.eval.frames as u64,
        cfg.eval.ber_accounting,
        false,
    )
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SweepRow {
    pub sweep: String,
    pub gamma_db: f64,
    /// Empty under the `U[0, pmax]` prior.
    pub pa: Option<f64>,
    pub detector: String,
    pub aer: f64,
    pub aer_lo: f64,
    pub aer_hi: f64,
    pub aer_errors: u64,
    pub decisions: u64,
    /// Empty when no bits were scored.
    pub ber: Option<f64>,
    pub ber_lo: Option<f64>,
    pub ber_hi: Option<f64>,
    pub bit_errors: u64,
    pub bits: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub precision_defined: bool,
    pub recall_defined: bool,
    pub false_alarm_packets: u64,
    pub missed_packets: u64,
    pub amp_diverged_frames: u64,
    pub frames: u64,
    pub seed: u64,
    pub config_hash: String,
}

fn sweep_rows(cfg: &ExperimentConfig, sweep: &str, point: &SweepPoint) -> Result<Vec<SweepRow>> {
    let hash = cfg.config_hash();
    point
        .result
        .stats
        .iter()
        .map(|s| {
            let agg = s.counts.aggregate();
            let (aer_lo, aer_hi) = wilson_interval(agg.errors(), agg.total(), Z95);
            let ber = s.ber.rate();
            let ci = ber.map(|_| wilson_interval(s.ber.errors, s.ber.bits, Z95));
            let prf = precision_recall_f1(&agg);
            Ok(SweepRow {
                sweep: sweep.to_owned(),
                gamma_db: point.gamma_db,
                pa: point.pa,
                detector: s.kind.to_string(),
                aer: s.counts.aer()?,
                aer_lo,
                aer_hi,
                aer_errors: agg.errors(),
                decisions: agg.total(),
                ber,
                ber_lo: ci.map(|c| c.0),
                ber_hi: ci.map(|c| c.1),
                bit_errors: s.ber.errors,
                bits: s.ber.bits,
                precision: prf.precision,
                recall: prf.recall,
                f1: prf.f1,
                precision_defined: prf.precision_defined,
                recall_defined: prf.recall_defined,
                false_alarm_packets: s.ber.false_alarm_packets,
                missed_packets: s.ber.missed_packets,
                amp_diverged_frames: s.diverged_frames,
                frames: s.counts.frames(),
                seed: cfg.seed,
                config_hash: hash.clone(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CalibrationRow {
    pub sweep: String,
    pub gamma_db: f64,
    pub omp_residual_tol: f64,
    pub omp_errors: u64,
    pub amp_score_threshold: f64,
    pub amp_errors: u64,
    pub decisions: u64,
    pub config_hash: String,
}

fn calibration_row(cfg: &ExperimentConfig, sweep: &str, gamma_db: f64, c: &Calibration) -> CalibrationRow {
    CalibrationRow {
        sweep: sweep.to_owned(),
        gamma_db,
        omp_residual_tol: c.omp_residual_tol,
        omp_errors: c.omp_errors,
        amp_score_threshold: c.amp_score_threshold,
        amp_errors: c.amp_errors,
        decisions: c.decisions,
        config_hash: cfg.config_hash(),
    }
}

/// Merges calibration rows of `sweep` into the shared calibration file.
fn update_calibration_file(cfg: &ExperimentConfig, sweep: &str, rows: Vec<CalibrationRow>) -> Result<()> {
    let path = cfg.out_path(CALIBRATION_FILE);
    let mut all: Vec<CalibrationRow> = match read_csv::<CalibrationRow>(&path) {
        Ok(existing) => existing
            .into_iter()
            .filter(|r| r.sweep != sweep && r.config_hash == cfg.config_hash())
            .collect(),
        Err(_) => Vec::new(),
    };
    all.extend(rows);
    all.sort_by(|a, b| a.sweep.cmp(&b.sweep).then(a.gamma_db.total_cmp(&b.gamma_db)));
    write_csv(&path, &all)
}

/// AER, BER and classification metrics versus SNR for every enabled detector.
pub fn cmd_sweep_snr(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let codes = cfg.codes()?;
    let cnn = cnn_if_enabled(cfg)?;
    let mut rows = Vec::new();
    let mut cal_rows = Vec::new();
    for &gamma in &cfg.eval.snr_db {
        let point = evaluate_snr_point(cfg, &codes, gamma, cnn.as_ref())?;
        info!("sweep-snr: {gamma} dB done");
        if let Some(c) = &point.calibration {
            cal_rows.push(calibration_row(cfg, "snr", gamma, c));
        }
        rows.extend(sweep_rows(cfg, "snr", &point)?);
    }
    write_csv(&cfg.out_path(SWEEP_SNR_FILE), &rows)?;
    update_calibration_file(cfg, "snr", cal_rows)?;
    Ok(rows)
}

/// Metrics versus the true activity rate at the fixed SNR.
pub fn cmd_sweep_activity(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let codes = cfg.codes()?;
    let cnn = cnn_if_enabled(cfg)?;
    let gamma = cfg.eval.fixed_snr_db;
    let (set, calibration) = detector_set(cfg, &codes, gamma, cnn.as_ref())?;
    let mut rows = Vec::new();
    for &pa in &cfg.eval.activity_rates {
        let result = evaluate_activity_point(cfg, &codes, &set, pa)?;
        info!("sweep-activity: pa = {pa} done");
        let point = SweepPoint {
            gamma_db: gamma,
            pa: Some(pa),
            calibration,
            result,
        };
        rows.extend(sweep_rows(cfg, "activity", &point)?);
    }
    write_csv(&cfg.out_path(SWEEP_ACTIVITY_FILE), &rows)?;
    let cal_rows = calibration.iter().map(|c| calibration_row(cfg, "activity", gamma, c)).collect();
    update_calibration_file(cfg, "activity", cal_rows)?;
    Ok(rows)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PeSummaryRow {
    pub devices: usize,
    pub snr_db: f64,
    pub decisions: u64,
    pub errors: u64,
    pub pe_empirical: f64,
    pub pe_analytic: f64,
    pub std_error: f64,
    pub z_score: f64,
    pub relative_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub false_alarm_one_sided: f64,
    pub false_alarm_two_sided: f64,
    pub false_alarm_pred_one_sided: f64,
    pub false_alarm_pred_two_sided: f64,
    pub pe_mixture: Option<f64>,
    pub mixture_z_score: Option<f64>,
    pub perturbed_scale: f64,
    pub perturbed_errors: u64,
    pub paired_z: f64,
    pub config_hash: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PeFixedRow {
    pub devices: usize,
    pub snr_db: f64,
    pub k: usize,
    pub m: usize,
    pub mu: f64,
    pub sigma: f64,
    pub tau_star: f64,
    pub pe_analytic: f64,
    pub pe_empirical: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub decisions: u64,
    pub config_hash: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ConvexityRow {
    pub draw: usize,
    pub mu: f64,
    pub sigma: f64,
    pub pa: f64,
    pub min_second_diff: f64,
    pub tau_at_min: f64,
    pub convex: bool,
    pub unimodal: bool,
    pub tau_closed: f64,
    pub tau_golden: f64,
    pub argmin_gap: f64,
    pub slope_at_tau: f64,
    pub config_hash: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CurveRow {
    pub devices: usize,
    pub snr_db: f64,
    pub k: usize,
    pub m: usize,
    pub tau: f64,
    pub pe: f64,
    pub tau_star: f64,
    pub config_hash: String,
}

/// Tolerance on raw second differences for the convexity check.
pub const CONVEXITY_TOL: f64 = 1e-9;
/// Grid size of the convexity check over `[0, 2 mu]`.
pub const CONVEXITY_GRID: usize = 1000;

#[derive(Debug, Clone)]
pub struct ThresholdSummary {
    pub reports: Vec<PeReport>,
    pub draws: Vec<ConvexityDraw>,
    pub fixed_rows: usize,
    pub curve_rows: usize,
}

fn harness_config(cfg: &ExperimentConfig, devices: usize, snr_db: f64) -> PeHarnessConfig {
    let rate = cfg.detectors.threshold.assumed_rate;
    PeHarnessConfig {
        devices,
        spreading_factor: cfg.scenario.spreading_factor,
        antennas: 1,
        symbols: 1,
        snr_db,
        true_rate: rate,
        assumed_rate: rate,
        pa_nominal: cfg.scenario.pa_nominal(),
        decisions: cfg.threshold_analysis.symbols as u64,
        convention: cfg.detectors.threshold.convention,
        perturb_scale: Some(1.5),
        seed: cfg.stream_seed(&format!("threshold-analysis-{devices}-{snr_db}")),
    }
}

/// Analytic-versus-simulated error rates, objective curvature and optimality, and
/// threshold curves.
pub fn cmd_threshold_analysis(cfg: &ExperimentConfig) -> Result<ThresholdSummary> {
    cfg.validate()?;
    let hash = cfg.config_hash();
    let ta = &cfg.threshold_analysis;
    let mut reports = Vec::new();
    let mut summary_rows = Vec::new();
    let mut fixed = Vec::new();
    let mut curves = Vec::new();
    for &k in &ta.devices {
        for &g in &ta.snr_db {
            let hc = harness_config(cfg, k, g);
            let rep = analytic_vs_empirical_pe(&hc)?;
            let p = rep.perturbed.expect("perturbation requested");
            summary_rows.push(PeSummaryRow {
                devices: k,
                snr_db: g,
                decisions: rep.decisions,
                errors: rep.errors,
                pe_empirical: rep.pe_empirical,
                pe_analytic: rep.pe_analytic,
                std_error: rep.std_error,
                z_score: rep.z_score(),
                relative_error: rep.relative_error(),
                ci_low: rep.ci_low,
                ci_high: rep.ci_high,
                false_alarm_one_sided: rep.false_alarm_one_sided,
                false_alarm_two_sided: rep.false_alarm_two_sided,
                false_alarm_pred_one_sided: rep.false_alarm_pred_one_sided,
                false_alarm_pred_two_sided: 2.0 * rep.false_alarm_pred_one_sided,
                pe_mixture: rep.pe_mixture,
                mixture_z_score: rep.mixture_z_score(),
                perturbed_scale: p.scale,
                perturbed_errors: p.errors,
                paired_z: p.z(),
                config_hash: hash.clone(),
            });
            reports.push(rep);
            let rows = fixed_channel_rows(&hc)?;
            for r in &rows {
                let params = crate::threshold::SymbolStatParams::new(r.mu, r.sigma, hc.assumed_rate)?;
                for (tau, pe) in objective_curve(&params, ta.grid_points) {
                    curves.push(CurveRow {
                        devices: k,
                        snr_db: g,
                        k: r.k,
                        m: r.m,
                        tau,
                        pe,
                        tau_star: r.tau_star,
                        config_hash: hash.clone(),
                    });
                }
            }
            fixed.extend(rows.into_iter().map(|r| PeFixedRow {
                devices: k,
                snr_db: g,
                k: r.k,
                m: r.m,
                mu: r.mu,
                sigma: r.sigma,
                tau_star: r.tau_star,
                pe_analytic: r.pe_analytic,
                pe_empirical: r.pe_empirical,
                ci_low: r.ci_low,
                ci_high: r.ci_high,
                decisions: r.decisions,
                config_hash: hash.clone(),
            }));
        }
    }
    let draws = convexity_study(ta.draws, CONVEXITY_GRID, cfg.stream_seed("convexity"))?;
    let conv_rows: Vec<ConvexityRow> = draws
        .iter()
        .enumerate()
        .map(|(i, d)| ConvexityRow {
            draw: i,
            mu: d.mu,
            sigma: d.sigma,
            pa: d.pa,
            min_second_diff: d.min_second_diff,
            tau_at_min: d.tau_at_min,
            convex: d.min_second_diff >= -CONVEXITY_TOL,
            unimodal: d.unimodal,
            tau_closed: d.tau_closed,
            tau_golden: d.tau_golden,
            argmin_gap: d.argmin_gap,
            slope_at_tau: d.slope_at_tau,
            config_hash: hash.clone(),
        })
        .collect();
    write_csv(&cfg.out_path(PE_SUMMARY_FILE), &summary_rows)?;
    write_csv(&cfg.out_path(PE_FIXED_FILE), &fixed)?;
    write_csv(&cfg.out_path(CONVEXITY_FILE), &conv_rows)?;
    write_csv(&cfg.out_path(CURVES_FILE), &curves)?;
    Ok(ThresholdSummary {
        reports,
        draws,
        fixed_rows: fixed.len(),
        curve_rows: curves.len(),
    })
}

/// One detector decision for one device in one frame.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FrameLogRow {
    pub frame: u64,
    pub detector: String,
    pub device: usize,
    pub truth: u8,
    pub estimate: u8,
    pub config_hash: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TableRow {
    pub detector: String,
    /// Device index, or `all` for the aggregate.
    pub device: String,
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub precision_defined: bool,
    pub recall_defined: bool,
    pub config_hash: String,
}

fn table_row(detector: &str, device: String, t: &Tally, hash: &str) -> TableRow {
    let p = precision_recall_f1(t);
    TableRow {
        detector: detector.to_owned(),
        device,
        tp: t.tp,
        fp: t.fp,
        tn: t.tn,
        fn_: t.fn_,
        precision: p.precision,
        recall: p.recall,
        f1: p.f1,
        precision_defined: p.precision_defined,
        recall_defined: p.recall_defined,
        config_hash: hash.to_owned(),
    }
}

/// Per-device and aggregate rows from confusion counts, detectors in the given order.
pub fn table_rows(counts: &[(DetectorKind, ConfusionCounts)], hash: &str) -> Vec<TableRow> {
    let mut rows = Vec::new();
    for (kind, c) in counts {
        for dev in 0..c.devices() {
            rows.push(table_row(kind.name(), dev.to_string(), c.device(dev), hash));
        }
        rows.push(table_row(kind.name(), "all".into(), &c.aggregate(), hash));
    }
    rows
}

/// Rebuilds the metric table from a per-frame decision log.
pub fn table_from_frame_log(rows: &[FrameLogRow], devices: usize, hash: &str) -> Result<Vec<TableRow>> {
    let mut by_detector: BTreeMap<&str, BTreeMap<u64, (Vec<bool>, Vec<bool>)>> = BTreeMap::new();
    let mut order: Vec<&str> = Vec::new();
    for r in rows {
        if !order.contains(&r.detector.as_str()) {
            order.push(&r.detector);
        }
        if r.device >= devices {
            return Err(Error::IndexOutOfRange(format!("device {} in frame log", r.device)));
        }
        let entry = by_detector
            .entry(&r.detector)
            .or_default()
            .entry(r.frame)
            .or_insert_with(|| (vec![false; devices], vec![false; devices]));
        entry.0[r.device] = r.estimate != 0;
        entry.1[r.device] = r.truth != 0;
    }
    let mut counts = Vec::new();
    for name in order {
        let kind: DetectorKind = name.parse()?;
        let mut c = ConfusionCounts::new(devices);
        for (est, truth) in by_detector[name].values() {
            c.record(&ActivityVector::new(est.clone(), f64::NAN), &ActivityVector::new(truth.clone(), f64::NAN))?;
        }
        counts.push((kind, c));
    }
    Ok(table_rows(&counts, hash))
}

#[derive(Debug, Clone)]
pub struct TableSummary {
    pub counts: Vec<(DetectorKind, ConfusionCounts)>,
    pub rows: Vec<TableRow>,
    pub calibration: Option<Calibration>,
}

/// Precision, recall and F1 per device for the learned and compressed-sensing
/// detectors at the fixed SNR, plus the raw per-frame decision log.
pub fn cmd_table_metrics(cfg: &ExperimentConfig) -> Result<TableSummary> {
    cfg.validate()?;
    let mut cfg = cfg.clone();
    cfg.detectors.enabled.retain(|k| matches!(k, DetectorKind::Cnn | DetectorKind::Omp | DetectorKind::Amp));
    if cfg.detectors.enabled.is_empty() {
        return Err(Error::Config("table-metrics needs at least one of cnn, omp, amp".into()));
    }
    let codes = cfg.codes()?;
    let cnn = cnn_if_enabled(&cfg)?;
    let gamma = cfg.eval.fixed_snr_db;
    let (set, calibration) = detector_set(&cfg, &codes, gamma, cnn.as_ref())?;
    let sc = cfg.scenario.build(&codes, gamma, RateModel::Uniform { pmax: cfg.scenario.pmax })?;
    let result = evaluate(
        &sc,
        &set,
        cfg.stream_seed("table"),
        0..cfg.eval.frames as u64,
        cfg.eval.ber_accounting,
        true,
    )?;
    let hash = cfg.config_hash();
    let mut log = Vec::with_capacity(result.frames.len() * set.kinds.len() * sc.devices());
    for f in &result.frames {
        for (kind, est) in &f.estimates {
            for dev in 0..sc.devices() {
                log.push(FrameLogRow {
                    frame: f.index,
                    detector: kind.to_string(),
                    device: dev,
                    truth: u8::from(f.truth.is_active(dev)),
                    estimate: u8::from(est.is_active(dev)),
                    config_hash: hash.clone(),
                });
            }
        }
    }
    let counts: Vec<(DetectorKind, ConfusionCounts)> =
        result.stats.iter().map(|s| (s.kind, s.counts.clone())).collect();
    let rows = table_rows(&counts, &hash);
    write_csv(&cfg.out_path(TABLE_FRAMES_FILE), &log)?;
    write_csv(&cfg.out_path(TABLE_METRICS_FILE), &rows)?;
    Ok(TableSummary {
        counts,
        rows,
        calibration,
    })
}

/// Writes the effective configuration next to the outputs.
pub fn write_effective_config(cfg: &ExperimentConfig) -> Result<()> {
    let text = cfg.to_toml()?;
    let path = cfg.out_path("config.effective.toml");
    write_atomic(&path, |out| {
        writeln!(out, "# config_hash = \"{}\"", cfg.config_hash()).map_err(|e| Error::io(&path, e))?;
        out.write_all(text.as_bytes()).map_err(|e| Error::io(&path, e))
    })
}
