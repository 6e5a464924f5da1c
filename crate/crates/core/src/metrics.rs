//! Activity error rate, bit error rate and per-device classification metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simulator::ActivityVector;

/// Two-sided 95% normal quantile used for every reported interval.
pub const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl Tally {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn errors(&self) -> u64 {
        self.fp + self.fn_
    }

    pub fn merge(&mut self, other: &Tally) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }

    fn record(&mut self, estimate: bool, truth: bool) {
        match (estimate, truth) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }
}

/// Per-device confusion tallies over a campaign of frames.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    per_device: Vec<Tally>,
    frames: u64,
}

impl ConfusionCounts {
    pub fn new(devices: usize) -> Self {
        Self {
            per_device: vec![Tally::default(); devices],
            frames: 0,
        }
    }

    pub fn record(&mut self, estimate: &ActivityVector, truth: &ActivityVector) -> Result<()> {
        let k = self.per_device.len();
        if estimate.len() != k || truth.len() != k {
            return Err(Error::dims("confusion record", k, (estimate.len(), truth.len())));
        }
        for (dev, tally) in self.per_device.iter_mut().enumerate() {
            tally.record(estimate.is_active(dev), truth.is_active(dev));
        }
        self.frames += 1;
        Ok(())
    }

    /// Associative merge, so campaigns can be reduced in any grouping.
    pub fn merge(&mut self, other: &ConfusionCounts) -> Result<()> {
        if other.per_device.len() != self.per_device.len() {
            return Err(Error::dims(
                "confusion merge",
                self.per_device.len(),
                other.per_device.len(),
            ));
        }
        for (a, b) in self.per_device.iter_mut().zip(&other.per_device) {
            a.merge(b);
        }
        self.frames += other.frames;
        Ok(())
    }

    pub fn device(&self, dev: usize) -> &Tally {
        &self.per_device[dev]
    }

    pub fn devices(&self) -> usize {
        self.per_device.len()
    }

    pub fn frames(&self) -> u64 {
        self.frames
    }

    pub fn aggregate(&self) -> Tally {
        let mut t = Tally::default();
        for d in &self.per_device {
            t.merge(d);
        }
        t
    }

    /// `(FP + FN) / (frames K)`.
    pub fn aer(&self) -> Result<f64> {
        let t = self.aggregate();
        if t.total() == 0 {
            return Err(Error::param("counts", "no decisions recorded"));
        }
        Ok(t.errors() as f64 / t.total() as f64)
    }
}

/// Fraction of wrong device-frame activity decisions.
pub fn aer(estimates: &[ActivityVector], truths: &[ActivityVector]) -> Result<f64> {
    if estimates.len() != truths.len() {
        return Err(Error::dims("aer", truths.len(), estimates.len()));
    }
    let first = truths
        .first()
        .ok_or_else(|| Error::param("truths", "empty input"))?;
    let mut counts = ConfusionCounts::new(first.len());
    for (e, t) in estimates.iter().zip(truths) {
        counts.record(e, t)?;
    }
    counts.aer()
}

/// Precision, recall and F1. Undefined ratios are reported as zero and flagged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub precision_defined: bool,
    pub recall_defined: bool,
}

pub fn precision_recall_f1(t: &Tally) -> Prf {
    let ratio = |num: u64, den: u64| {
        if den == 0 {
            (0.0, false)
        } else {
            (num as f64 / den as f64, true)
        }
    };
    let (precision, precision_defined) = ratio(t.tp, t.tp + t.fp);
    let (recall, recall_defined) = ratio(t.tp, t.tp + t.fn_);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Prf {
        precision,
        recall,
        f1,
        precision_defined,
        recall_defined,
    }
}

/// How devices missed by activity detection enter the bit error rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BerAccounting {
    /// Every bit of a missed packet is an error.
    #[default]
    MissesAsErrors,
    /// Only packets of correctly detected devices are scored.
    DetectedOnly,
}

/// One device's packet in one frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PacketOutcome {
    /// Transmitted BPSK bits, `None` when the device was silent.
    pub truth: Option<Vec<i8>>,
    /// Detected bits, `None` when the device was not declared active.
    pub estimate: Option<Vec<i8>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BerTally {
    pub errors: u64,
    pub bits: u64,
    /// Packets declared active whose device was silent; never part of the ratio.
    pub false_alarm_packets: u64,
    pub missed_packets: u64,
}

impl BerTally {
    pub fn merge(&mut self, other: &BerTally) {
        self.errors += other.errors;
        self.bits += other.bits;
        self.false_alarm_packets += other.false_alarm_packets;
        self.missed_packets += other.missed_packets;
    }

    /// `None` when no bits were scored.
    pub fn rate(&self) -> Option<f64> {
        (self.bits > 0).then(|| self.errors as f64 / self.bits as f64)
    }

    pub fn add(&mut self, packet: &PacketOutcome, mode: BerAccounting) -> Result<()> {
        match (&packet.truth, &packet.estimate) {
            (Some(truth), Some(est)) => {
                if truth.len() != est.len() {
                    return Err(Error::dims("ber packet", truth.len(), est.len()));
                }
                self.errors += truth.iter().zip(est).filter(|(a, b)| a != b).count() as u64;
                self.bits += truth.len() as u64;
            }
            (Some(truth), None) => {
                self.missed_packets += 1;
                if mode == BerAccounting::MissesAsErrors {
                    self.errors += truth.len() as u64;
                    self.bits += truth.len() as u64;
                }
            }
            (None, Some(_)) => self.false_alarm_packets += 1,
            (None, None) => {}
        }
        Ok(())
    }
}

/// Erroneous bits over scored bits under `mode`.
pub fn ber(packets: &[PacketOutcome], mode: BerAccounting) -> Result<BerTally> {
    let mut t = BerTally::default();
    for p in packets {
        t.add(p, mode)?;
    }
    Ok(t)
}

/// Wilson score interval for `successes` out of `n` trials.
pub fn wilson_interval(successes: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n_f = n as f64;
    let p = successes as f64 / n_f;
    let z2 = z * z;
    let denom = 1.0 + z2 / n_f;
    let center = (p + z2 / (2.0 * n_f)) / denom;
    let half = z * (p * (1.0 - p) / n_f + z2 / (4.0 * n_f * n_f)).sqrt() / denom;
    let lo = if successes == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if successes >= n { 1.0 } else { (center + half).min(1.0) };
    (lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn av(bits: &[u8]) -> ActivityVector {
        ActivityVector::new(bits.iter().map(|&b| b == 1).collect(), f64::NAN)
    }

    #[test]
    fn aer_extremes() {
        let truth = vec![av(&[1, 0, 0, 1]), av(&[0, 0, 1, 0])];
        assert_eq!(aer(&truth, &truth).unwrap(), 0.0);
        let inverted: Vec<_> = truth
            .iter()
            .map(|t| ActivityVector::new(t.bits().iter().map(|b| !b).collect(), f64::NAN))
            .collect();
        assert_eq!(aer(&inverted, &truth).unwrap(), 1.0);
        assert!(aer(&[], &[]).is_err());
        assert!(aer(&truth[..1], &truth).is_err());
    }

    #[test]
    fn random_guessing_aer_is_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut est = Vec::new();
        let mut truth = Vec::new();
        for _ in 0..2000 {
            est.push(ActivityVector::new((0..10).map(|_| rng.random::<f64>() < 0.5).collect(), f64::NAN));
            truth.push(ActivityVector::new((0..10).map(|_| rng.random::<f64>() < 0.05).collect(), f64::NAN));
        }
        let a = aer(&est, &truth).unwrap();
        // 2e4 decisions, std 0.0035.
        assert!((a - 0.5).abs() < 0.0106, "aer {a}");
    }

    #[test]
    fn table_shaped_example() {
        let t = Tally { tp: 73, fp: 27, tn: 0, fn_: 7 };
        let m = precision_recall_f1(&t);
        assert!((m.precision - 0.73).abs() < 1e-12);
        assert!((m.recall - 0.9125).abs() < 1e-12);
        assert!((m.f1 - 0.81).abs() < 0.005);
        let empty = precision_recall_f1(&Tally { tp: 0, fp: 0, tn: 10, fn_: 0 });
        assert_eq!((empty.precision, empty.recall, empty.f1), (0.0, 0.0, 0.0));
        assert!(!empty.precision_defined && !empty.recall_defined);
    }

    #[test]
    fn ber_hand_counted_fixture() {
        // Frame 1: device 0 sent [1,-1,1], detected [1,1,1] (1 error); device 1 silent, not detected.
        // Frame 2: device 0 missed ([-1,-1,1]); device 1 false alarm.
        // Frame 3: device 1 sent [1,1,-1], detected exactly.
        let packets = vec![
            PacketOutcome { truth: Some(vec![1, -1, 1]), estimate: Some(vec![1, 1, 1]) },
            PacketOutcome { truth: None, estimate: None },
            PacketOutcome { truth: Some(vec![-1, -1, 1]), estimate: None },
            PacketOutcome { truth: None, estimate: Some(vec![1, 1, 1]) },
            PacketOutcome { truth: None, estimate: None },
            PacketOutcome { truth: Some(vec![1, 1, -1]), estimate: Some(vec![1, 1, -1]) },
        ];
        let miss = ber(&packets, BerAccounting::MissesAsErrors).unwrap();
        assert_eq!((miss.errors, miss.bits, miss.false_alarm_packets, miss.missed_packets), (4, 9, 1, 1));
        assert!((miss.rate().unwrap() - 4.0 / 9.0).abs() < 1e-15);
        let det = ber(&packets, BerAccounting::DetectedOnly).unwrap();
        assert_eq!((det.errors, det.bits), (1, 6));

        let all_right = ber(&packets[5..], BerAccounting::MissesAsErrors).unwrap();
        assert_eq!(all_right.rate(), Some(0.0));
        let flipped = vec![PacketOutcome { truth: Some(vec![1, -1]), estimate: Some(vec![-1, 1]) }];
        assert_eq!(ber(&flipped, BerAccounting::MissesAsErrors).unwrap().rate(), Some(1.0));
        let silent = vec![PacketOutcome { truth: None, estimate: None }];
        assert_eq!(ber(&silent, BerAccounting::MissesAsErrors).unwrap().rate(), None);
    }

    #[test]
    fn wilson_brackets_rate() {
        let (lo, hi) = wilson_interval(10, 100, Z95);
        assert!(lo < 0.1 && hi > 0.1);
        assert!((lo - 0.0552).abs() < 1e-3 && (hi - 0.1744).abs() < 1e-3);
        let (lo0, hi0) = wilson_interval(0, 1000, Z95);
        assert_eq!(lo0, 0.0);
        assert!(hi0 > 0.0 && hi0 < 0.005);
    }

    fn arb_frames() -> impl Strategy<Value = Vec<(Vec<bool>, Vec<bool>)>> {
        proptest::collection::vec(
            (proptest::collection::vec(any::<bool>(), 5), proptest::collection::vec(any::<bool>(), 5)),
            1..30,
        )
    }

    proptest! {
        #[test]
        fn metric_invariants(frames in arb_frames(), rot in 0usize..30) {
            let mut counts = ConfusionCounts::new(5);
            for (e, t) in &frames {
                counts.record(&ActivityVector::new(e.clone(), f64::NAN), &ActivityVector::new(t.clone(), f64::NAN)).unwrap();
            }
            let agg = counts.aggregate();
            prop_assert_eq!(agg.total(), frames.len() as u64 * 5);
            let a = counts.aer().unwrap();
            prop_assert!((0.0..=1.0).contains(&a));
            for dev in 0..5 {
                let m = precision_recall_f1(counts.device(dev));
                prop_assert!((0.0..=1.0).contains(&m.precision) && (0.0..=1.0).contains(&m.recall));
                prop_assert!(m.f1 <= (2.0 * m.precision).min(2.0 * m.recall) + 1e-12);
                if m.precision + m.recall > 0.0 {
                    let f = 2.0 * m.precision * m.recall / (m.precision + m.recall);
                    prop_assert!((m.f1 - f).abs() < 1e-12);
                }
            }
            // Reordering frames and splitting/merging leaves the counts unchanged.
            let mut rotated = frames.clone();
            let r = rot % rotated.len();
            rotated.rotate_left(r);
            let (left, right) = rotated.split_at(rotated.len() / 2);
            let mut a_counts = ConfusionCounts::new(5);
            let mut b_counts = ConfusionCounts::new(5);
            for (e, t) in left {
                a_counts.record(&ActivityVector::new(e.clone(), f64::NAN), &ActivityVector::new(t.clone(), f64::NAN)).unwrap();
            }
            for (e, t) in right {
                b_counts.record(&ActivityVector::new(e.clone(), f64::NAN), &ActivityVector::new(t.clone(), f64::NAN)).unwrap();
            }
            a_counts.merge(&b_counts).unwrap();
            prop_assert_eq!(a_counts, counts);
        }
    }
}
