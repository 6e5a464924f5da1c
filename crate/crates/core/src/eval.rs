//! Monte Carlo evaluation of activity detectors followed by MMSE detection.

use std::ops::Range;

use rayon::prelude::*;

use crate::cnn::{hypothesis_test, Checkpoint, Network, Standardizer};
use crate::config::DetectorKind;
use crate::cs::{amp_detect, omp_detect, CsConfig};
use crate::error::{Error, Result};
use crate::frontend::{observe_with_phi, DecorrelatedTensor};
use crate::metrics::{BerAccounting, BerTally, ConfusionCounts, PacketOutcome};
use crate::mud::ber_with_ad;
use crate::simulator::{ActivityVector, PacketFrame, Scenario};
use crate::threshold::{threshold_detect, ThresholdConfig};

/// Trained network plus its frozen input standardisation.
#[derive(Debug, Clone)]
pub struct CnnDetector {
    pub net: Network<f32>,
    pub standardizer: Standardizer,
    pub threshold: f64,
}

impl CnnDetector {
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        Ok(Self {
            net: ckpt.network()?,
            standardizer: ckpt.standardizer.clone(),
            threshold: ckpt.threshold,
        })
    }

    /// Activity probabilities; the tensor is rounded to single precision first, as
    /// stored training data is.
    pub fn probabilities(&self, tensor: &DecorrelatedTensor<f64>) -> Result<Vec<f32>> {
        let x = self.standardizer.prepare(&tensor.cast::<f32>())?;
        self.net.forward(&x)
    }

    pub fn detect(&self, tensor: &DecorrelatedTensor<f64>) -> Result<ActivityVector> {
        hypothesis_test(&self.probabilities(tensor)?, self.threshold)
    }
}

/// Detectors to run and their settings.
#[derive(Debug, Clone)]
pub struct DetectorSet {
    pub kinds: Vec<DetectorKind>,
    pub threshold: ThresholdConfig,
    pub cs: CsConfig,
    pub cnn: Option<CnnDetector>,
}

impl DetectorSet {
    pub fn check(&self) -> Result<()> {
        if self.kinds.contains(&DetectorKind::Cnn) && self.cnn.is_none() {
            return Err(Error::Config("the cnn detector needs a trained checkpoint".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct DetectorOutput {
    pub kind: DetectorKind,
    pub estimate: ActivityVector,
    pub packets: Vec<PacketOutcome>,
    /// AMP stopped on its divergence guard.
    pub diverged: bool,
}

/// Runs every selected detector on one frame and decodes each estimated support.
pub fn run_detectors(frame: &PacketFrame<f64>, sc: &Scenario, set: &DetectorSet) -> Result<Vec<DetectorOutput>> {
    let phi = frame.phi(&sc.codes)?;
    let tensor = observe_with_phi(frame, &phi, &sc.powers)?;
    let k = sc.devices();
    set.kinds
        .iter()
        .map(|&kind| {
            let mut diverged = false;
            let estimate = match kind {
                DetectorKind::Threshold => {
                    threshold_detect(&tensor, &frame.channel, &sc.codes, &sc.powers, &set.threshold)?.combined
                }
                DetectorKind::Omp => ActivityVector::from_support(&omp_detect(&frame.received, &phi, &set.cs)?.support(), k)?,
                DetectorKind::Amp => {
                    let res = amp_detect(&frame.received, &phi, &sc.powers, &set.cs)?;
                    diverged = res.diverged;
                    ActivityVector::from_support(&res.support, k)?
                }
                DetectorKind::Cnn => set
                    .cnn
                    .as_ref()
                    .ok_or_else(|| Error::Config("the cnn detector needs a trained checkpoint".into()))?
                    .detect(&tensor)?,
                DetectorKind::Oracle => frame.activity.clone(),
            };
            let packets = ber_with_ad(frame, &phi, &estimate, &sc.powers)?;
            Ok(DetectorOutput {
                kind,
                estimate,
                packets,
                diverged,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct DetectorStats {
    pub kind: DetectorKind,
    pub counts: ConfusionCounts,
    pub ber: BerTally,
    pub diverged_frames: u64,
}

/// Per-frame decisions, kept when raw logs are requested.
#[derive(Debug, Clone)]
pub struct FrameRecord {
    pub index: u64,
    pub truth: ActivityVector,
    pub estimates: Vec<(DetectorKind, ActivityVector)>,
}

#[derive(Debug, Clone)]
pub struct PointResult {
    pub stats: Vec<DetectorStats>,
    pub frames: Vec<FrameRecord>,
}

impl PointResult {
    pub fn get(&self, kind: DetectorKind) -> Option<&DetectorStats> {
        self.stats.iter().find(|s| s.kind == kind)
    }
}

/// Evaluates frames `indices` of the stream `seed`. Frames run in parallel; results
/// are reduced in frame order.
pub fn evaluate(
    sc: &Scenario,
    set: &DetectorSet,
    seed: u64,
    indices: Range<u64>,
    accounting: BerAccounting,
    keep_frames: bool,
) -> Result<PointResult> {
    set.check()?;
    let k = sc.devices();
    let outputs: Vec<(u64, ActivityVector, Vec<DetectorOutput>)> = indices
        .into_par_iter()
        .map(|i| {
            let frame = sc.generate_frame::<f64>(seed, i)?;
            let out = run_detectors(&frame, sc, set)?;
            Ok((i, frame.activity, out))
        })
        .collect::<Result<_>>()?;
    let mut stats: Vec<DetectorStats> = set
        .kinds
        .iter()
        .map(|&kind| DetectorStats {
            kind,
            counts: ConfusionCounts::new(k),
            ber: BerTally::default(),
            diverged_frames: 0,
        })
        .collect();
    let mut frames = Vec::new();
    for (index, truth, outs) in outputs {
        for (s, o) in stats.iter_mut().zip(&outs) {
            s.counts.record(&o.estimate, &truth)?;
            for p in &o.packets {
                s.ber.add(p, accounting)?;
            }
            s.diverged_frames += u64::from(o.diverged);
        }
        if keep_frames {
            frames.push(FrameRecord {
                index,
                truth,
                estimates: outs.into_iter().map(|o| (o.kind, o.estimate)).collect(),
            });
        }
    }
    Ok(PointResult { stats, frames })
}

/// Result of tuning the compressed-sensing decision parameters on held-out frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub omp_residual_tol: f64,
    pub omp_errors: u64,
    pub amp_score_threshold: f64,
    pub amp_errors: u64,
    pub decisions: u64,
}

impl Calibration {
    pub fn apply(&self, cs: &CsConfig) -> CsConfig {
        CsConfig {
            omp_residual_tol: self.omp_residual_tol,
            amp_score_threshold: self.amp_score_threshold,
            ..*cs
        }
    }
}

/// Candidate OMP tolerances: 0.01, 0.02, ..., 0.99.
fn omp_tol_grid() -> impl Iterator<Item = f64> {
    (1..100).map(|i| i as f64 / 100.0)
}

/// Threshold minimising `#(score >= t) != label`, placed midway between neighbouring
/// scores. Returns `(threshold, errors)`.
pub fn best_score_threshold(scored: &mut [(f64, bool)]) -> (f64, u64) {
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    let positives = scored.iter().filter(|s| s.1).count() as u64;
    // Threshold below everything: every negative is a false alarm.
    let mut errors = scored.len() as u64 - positives;
    let lowest = scored.first().map_or(0.5, |s| s.0);
    let mut best = (if lowest > 0.0 { lowest / 2.0 } else { f64::MIN_POSITIVE }, errors);
    let mut i = 0;
    while i < scored.len() {
        let v = scored[i].0;
        while i < scored.len() && scored[i].0 == v {
            if scored[i].1 {
                errors += 1;
            } else {
                errors -= 1;
            }
            i += 1;
        }
        if errors < best.1 {
            let t = match scored.get(i) {
                Some(next) => 0.5 * (v + next.0),
                None => v * 2.0 + 1.0,
            };
            best = (t, errors);
        }
    }
    best
}

/// Picks the OMP tolerance and AMP score threshold with the fewest activity errors
/// on frames `indices` of stream `seed`.
pub fn calibrate_cs(sc: &Scenario, cs: &CsConfig, seed: u64, indices: Range<u64>) -> Result<Calibration> {
    let k = sc.devices();
    let path_cfg = CsConfig {
        omp_residual_tol: 0.0,
        omp_max_iters: None,
        ..*cs
    };
    let per_frame: Vec<(ActivityVector, crate::cs::OmpResult<f64>, Vec<f64>)> = indices
        .into_par_iter()
        .map(|i| {
            let frame = sc.generate_frame::<f64>(seed, i)?;
            let phi = frame.phi(&sc.codes)?;
            let omp = omp_detect(&frame.received, &phi, &path_cfg)?;
            let amp = amp_detect(&frame.received, &phi, &sc.powers, cs)?;
            Ok((frame.activity, omp, amp.scores))
        })
        .collect::<Result<_>>()?;
    let max_iters = cs.omp_max_iters.unwrap_or(k);
    let mut best_omp = (cs.omp_residual_tol, u64::MAX);
    for tol in omp_tol_grid() {
        let mut errors = 0u64;
        for (truth, path, _) in &per_frame {
            let mut support = path.support_at_tol(tol);
            support.truncate(max_iters);
            let est = ActivityVector::from_support(&support, k)?;
            errors += est.bits().iter().zip(truth.bits()).filter(|(a, b)| a != b).count() as u64;
        }
        if errors < best_omp.1 {
            best_omp = (tol, errors);
        }
    }
    let mut scored: Vec<(f64, bool)> = per_frame
        .iter()
        .flat_map(|(truth, _, scores)| scores.iter().copied().zip(truth.bits().iter().copied()))
        .collect();
    let (amp_t, amp_errors) = best_score_threshold(&mut scored);
    Ok(Calibration {
        omp_residual_tol: best_omp.0,
        omp_errors: best_omp.1,
        amp_score_threshold: amp_t,
        amp_errors,
        decisions: (per_frame.len() * k) as u64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{gen_spreading, PowerProfile, RateModel};

    fn scenario(noise_var: f64) -> Scenario {
        Scenario {
            codes: gen_spreading(8, 16, 2).unwrap(),
            powers: PowerProfile::homogeneous(8, 1.0).unwrap(),
            antennas: 2,
            symbols_per_packet: 4,
            coeff_var: 1.0,
            noise_var,
            rate: RateModel::Uniform { pmax: 0.3 },
        }
    }

    fn set(kinds: Vec<DetectorKind>) -> DetectorSet {
        DetectorSet {
            kinds,
            threshold: ThresholdConfig::default(),
            cs: CsConfig::default(),
            cnn: None,
        }
    }

    #[test]
    fn score_threshold_is_optimal() {
        let mut s = vec![(0.1, false), (0.2, false), (0.9, true), (0.4, true), (0.5, false)];
        let (t, e) = best_score_threshold(&mut s);
        assert_eq!(e, 1);
        // Brute force over midpoints agrees.
        let brute = [0.05, 0.15, 0.3, 0.45, 0.7, 1.0]
            .iter()
            .map(|&t| s.iter().filter(|(v, a)| (*v >= t) != *a).count() as u64)
            .min()
            .unwrap();
        assert_eq!(brute, e);
        assert_eq!(s.iter().filter(|(v, a)| (*v >= t) != *a).count() as u64, e);
        let mut all_neg = vec![(0.0, false), (0.0, false)];
        let (t, e) = best_score_threshold(&mut all_neg);
        assert_eq!(e, 0);
        assert!(t > 0.0);
    }

    #[test]
    fn oracle_is_perfect_and_evaluation_is_deterministic() {
        let sc = scenario(0.05);
        let kinds = vec![DetectorKind::Oracle, DetectorKind::Omp, DetectorKind::Amp, DetectorKind::Threshold];
        let a = evaluate(&sc, &set(kinds.clone()), 5, 0..60, BerAccounting::MissesAsErrors, true).unwrap();
        let b = evaluate(&sc, &set(kinds), 5, 0..60, BerAccounting::MissesAsErrors, true).unwrap();
        let oracle = a.get(DetectorKind::Oracle).unwrap();
        assert_eq!(oracle.counts.aer().unwrap(), 0.0);
        for (x, y) in a.stats.iter().zip(&b.stats) {
            assert_eq!(x.counts, y.counts);
            assert_eq!(x.ber, y.ber);
        }
        assert_eq!(a.frames.len(), 60);
    }

    #[test]
    fn calibration_never_worse_than_default() {
        let sc = scenario(0.2);
        let cs = CsConfig::default();
        let cal = calibrate_cs(&sc, &cs, 9, 0..80).unwrap();
        let tuned = cal.apply(&cs);
        let before = evaluate(&sc, &set(vec![DetectorKind::Omp, DetectorKind::Amp]), 9, 0..80, BerAccounting::MissesAsErrors, false).unwrap();
        let after_set = DetectorSet { cs: tuned, ..set(vec![DetectorKind::Omp, DetectorKind::Amp]) };
        let after = evaluate(&sc, &after_set, 9, 0..80, BerAccounting::MissesAsErrors, false).unwrap();
        for kind in [DetectorKind::Omp, DetectorKind::Amp] {
            let e0 = before.get(kind).unwrap().counts.aggregate().errors();
            let e1 = after.get(kind).unwrap().counts.aggregate().errors();
            assert!(e1 <= e0, "{kind}: {e1} > {e0}");
        }
        assert_eq!(after.get(DetectorKind::Omp).unwrap().counts.aggregate().errors(), cal.omp_errors);
        assert_eq!(after.get(DetectorKind::Amp).unwrap().counts.aggregate().errors(), cal.amp_errors);
    }

    #[test]
    fn cnn_without_checkpoint_is_rejected() {
        let sc = scenario(0.1);
        assert!(evaluate(&sc, &set(vec![DetectorKind::Cnn]), 1, 0..2, BerAccounting::MissesAsErrors, false).is_err());
    }
}
