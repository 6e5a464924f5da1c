//! Monte Carlo checks of the Gaussian error model behind the threshold detector, and
//! numerical studies of its objective.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::frontend::observe;
use crate::metrics::{wilson_interval, Z95};
use crate::simulator::{
    derive_seed, frame_rng, gen_spreading, sample_activity_at_rate, sample_channel, sample_symbols, snr_to_noise_var,
    transmit, ChannelState, PowerProfile, RateModel, Scenario, SpreadingMatrix,
};
use crate::threshold::{
    error_probability, golden_section_argmin, optimal_threshold, q_function, stat_params, StatisticConvention,
    SymbolStatParams,
};

/// Setup for comparing the analytic and simulated per-symbol error rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeHarnessConfig {
    pub devices: usize,
    pub spreading_factor: usize,
    pub antennas: usize,
    pub symbols: usize,
    pub snr_db: f64,
    /// Rate that actually generates activity.
    pub true_rate: f64,
    /// Rate plugged into the objective to pick the threshold.
    pub assumed_rate: f64,
    /// Activity level used to map SNR to noise variance.
    pub pa_nominal: f64,
    /// Minimum number of per-symbol decisions.
    pub decisions: u64,
    pub convention: StatisticConvention,
    /// Also evaluate errors at `tau_scale * tau*` on the same draws.
    pub perturb_scale: Option<f64>,
    pub seed: u64,
}

impl Default for PeHarnessConfig {
    fn default() -> Self {
        Self {
            devices: 1,
            spreading_factor: 16,
            antennas: 1,
            symbols: 1,
            snr_db: 10.0,
            true_rate: 0.05,
            assumed_rate: 0.05,
            pa_nominal: 0.1,
            decisions: 100_000,
            convention: StatisticConvention::RealPart,
            perturb_scale: None,
            seed: 1,
        }
    }
}

impl PeHarnessConfig {
    fn validate(&self) -> Result<()> {
        if self.devices == 0 || self.spreading_factor == 0 || self.antennas == 0 || self.symbols == 0 {
            return Err(Error::param("harness dimensions", "must be at least 1"));
        }
        if self.decisions == 0 {
            return Err(Error::param("decisions", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.true_rate) {
            return Err(Error::param("true_rate", format!("{} outside [0, 1]", self.true_rate)));
        }
        Ok(())
    }

    fn scenario(&self, codes: SpreadingMatrix) -> Result<Scenario> {
        let powers = PowerProfile::homogeneous(self.devices, 1.0)?;
        let noise_var = snr_to_noise_var(self.snr_db, &powers, self.pa_nominal)?;
        Ok(Scenario {
            codes,
            powers,
            antennas: self.antennas,
            symbols_per_packet: self.symbols,
            coeff_var: 1.0,
            noise_var,
            rate: RateModel::Fixed(self.true_rate),
        })
    }

    fn frames(&self) -> u64 {
        let per_frame = (self.devices * self.antennas * self.symbols) as u64;
        self.decisions.div_ceil(per_frame)
    }
}

/// Error counts at the perturbed threshold on the same decisions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairedComparison {
    pub scale: f64,
    pub errors: u64,
    /// Decisions wrong only at `tau*`.
    pub only_base: u64,
    /// Decisions wrong only at the perturbed threshold.
    pub only_perturbed: u64,
}

impl PairedComparison {
    /// One-sided sign-test z statistic for "the perturbed threshold makes more errors".
    pub fn z(&self) -> f64 {
        let n = (self.only_base + self.only_perturbed) as f64;
        if n == 0.0 {
            return 0.0;
        }
        (self.only_perturbed as f64 - self.only_base as f64) / n.sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeReport {
    pub devices: usize,
    pub snr_db: f64,
    pub decisions: u64,
    pub errors: u64,
    pub pe_empirical: f64,
    /// Mean of the per-decision analytic error probability.
    pub pe_analytic: f64,
    /// Standard error of the empirical rate under the analytic model.
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub inactive_decisions: u64,
    /// Empirical `P(stat > tau)` for inactive devices with the signed real statistic.
    pub false_alarm_one_sided: f64,
    /// Empirical `P(|stat| > tau)` for inactive devices.
    pub false_alarm_two_sided: f64,
    /// Mean of `Q(tau/sigma)` over inactive decisions.
    pub false_alarm_pred_one_sided: f64,
    /// Mean error probability when interference is modelled exactly as a mixture of
    /// silent and transmitting devices instead of a Gaussian. Real-part statistic only.
    pub pe_mixture: Option<f64>,
    pub mixture_std_error: Option<f64>,
    pub perturbed: Option<PairedComparison>,
}

impl PeReport {
    /// `(empirical - analytic) / std_error`.
    pub fn z_score(&self) -> f64 {
        if self.std_error == 0.0 {
            return if self.pe_empirical == self.pe_analytic { 0.0 } else { f64::INFINITY };
        }
        (self.pe_empirical - self.pe_analytic) / self.std_error
    }

    /// `|empirical - analytic| / analytic`.
    pub fn relative_error(&self) -> f64 {
        (self.pe_empirical - self.pe_analytic).abs() / self.pe_analytic
    }

    /// `(empirical - mixture) / mixture_std_error`, when the mixture was computed.
    pub fn mixture_z_score(&self) -> Option<f64> {
        let (p, se) = (self.pe_mixture?, self.mixture_std_error?);
        Some(if se == 0.0 { 0.0 } else { (self.pe_empirical - p) / se })
    }
}

/// Largest interferer count for which the exact mixture is enumerated (`3^n` states).
pub const MIXTURE_MAX_INTERFERERS: usize = 10;

/// Offsets that each interferer adds to the real statistic of `device` when it sends
/// `+1`, and the standard deviation of the noise part of that statistic.
fn real_part_mixture(
    channel: &ChannelState<f64>,
    codes: &SpreadingMatrix,
    powers: &PowerProfile,
    device: usize,
    antenna: usize,
) -> (Vec<f64>, f64) {
    let gk = channel.gain(antenna, device);
    let pk = powers.power(device);
    let offsets = (0..codes.devices())
        .filter(|&i| i != device)
        .map(|i| {
            let coupling = gk.conj() * channel.gain(antenna, i) * f64::from(codes.cross_correlation(device, i));
            coupling.re * powers.power(i).sqrt() / pk
        })
        .collect();
    let noise = gk.norm_sqr() * codes.spreading_factor() as f64 * channel.noise_var() / 2.0;
    (offsets, noise.sqrt() / pk)
}

/// Error probability of the `|x| > tau` decision with signal mean `mu`, Gaussian noise
/// `noise_sigma`, and interferers that are silent with probability `1 - pa` or add
/// `+-offset` with probability `pa / 2` each.
pub fn mixture_error_probability(tau: f64, mu: f64, offsets: &[f64], noise_sigma: f64, pa: f64) -> f64 {
    let mut states = vec![(0.0, 1.0)];
    for &o in offsets {
        states = states
            .iter()
            .flat_map(|&(s, p)| [(s, p * (1.0 - pa)), (s + o, p * pa / 2.0), (s - o, p * pa / 2.0)])
            .filter(|&(_, p)| p > 0.0)
            .collect();
    }
    let q = |x: f64| q_function(x / noise_sigma);
    states
        .iter()
        .map(|&(o, p)| {
            let false_alarm = q(tau - o) + q(tau + o);
            let m = mu + o;
            let miss = q(-tau - m) - q(tau - m);
            p * ((1.0 - pa) * false_alarm + pa * miss)
        })
        .sum()
}

#[derive(Debug, Default, Clone, Copy)]
struct PeAccum {
    decisions: u64,
    errors: u64,
    pe_sum: f64,
    var_sum: f64,
    inactive: u64,
    fa_one: u64,
    fa_two: u64,
    fa_pred_one: f64,
    mixture_sum: f64,
    mixture_var: f64,
    perturbed_errors: u64,
    only_base: u64,
    only_perturbed: u64,
}

impl PeAccum {
    fn merge(&mut self, o: &PeAccum) {
        self.decisions += o.decisions;
        self.errors += o.errors;
        self.pe_sum += o.pe_sum;
        self.var_sum += o.var_sum;
        self.inactive += o.inactive;
        self.fa_one += o.fa_one;
        self.fa_two += o.fa_two;
        self.fa_pred_one += o.fa_pred_one;
        self.mixture_sum += o.mixture_sum;
        self.mixture_var += o.mixture_var;
        self.perturbed_errors += o.perturbed_errors;
        self.only_base += o.only_base;
        self.only_perturbed += o.only_perturbed;
    }

    /// Tallies one decision on the signed statistic `x` of a device with truth `active`.
    fn record(
        &mut self,
        x: f64,
        active: bool,
        tau: f64,
        params: &SymbolStatParams<f64>,
        mixture_pe: Option<f64>,
        perturbed_tau: Option<f64>,
    ) {
        let pe = error_probability(tau, params);
        if let Some(p) = mixture_pe {
            self.mixture_sum += p;
            self.mixture_var += p * (1.0 - p).max(0.0);
        }
        let wrong = (x.abs() > tau) != active;
        self.decisions += 1;
        self.errors += u64::from(wrong);
        self.pe_sum += pe;
        self.var_sum += pe * (1.0 - pe).max(0.0);
        if !active {
            self.inactive += 1;
            self.fa_one += u64::from(x > tau);
            self.fa_two += u64::from(x.abs() > tau);
            self.fa_pred_one += q_function(tau / params.sigma);
        }
        if let Some(tp) = perturbed_tau {
            let wrong_p = (x.abs() > tp) != active;
            self.perturbed_errors += u64::from(wrong_p);
            self.only_base += u64::from(wrong && !wrong_p);
            self.only_perturbed += u64::from(wrong_p && !wrong);
        }
    }
}

/// Signed scalar whose absolute value the detector thresholds.
fn signed_stat(r: crate::scalar::Cplx<f64>, convention: StatisticConvention) -> f64 {
    match convention {
        StatisticConvention::RealPart => r.re,
        StatisticConvention::Magnitude => r.norm(),
    }
}

fn harness_codes(cfg: &PeHarnessConfig) -> Result<SpreadingMatrix> {
    gen_spreading(cfg.devices, cfg.spreading_factor, derive_seed(cfg.seed, "harness-codes"))
}

/// Per-symbol error rate at the optimal threshold, simulated and predicted.
///
/// The channel is redrawn every frame and each decision is paired with the analytic
/// error probability for its own channel, so the comparison averages over fading.
pub fn analytic_vs_empirical_pe(cfg: &PeHarnessConfig) -> Result<PeReport> {
    cfg.validate()?;
    let sc = cfg.scenario(harness_codes(cfg)?)?;
    let frame_seed = derive_seed(cfg.seed, "harness-frames");
    let accums: Vec<PeAccum> = (0..cfg.frames())
        .into_par_iter()
        .map(|i| {
            let frame = sc.generate_frame::<f64>(frame_seed, i)?;
            let tensor = observe(&frame, &sc.codes, &sc.powers)?;
            let mut acc = PeAccum::default();
            for m in 0..sc.antennas {
                for k in 0..sc.devices() {
                    let params =
                        stat_params(&frame.channel, &sc.codes, &sc.powers, k, m, cfg.assumed_rate, cfg.convention)?;
                    let tau = optimal_threshold(&params)?;
                    let perturbed = cfg.perturb_scale.map(|s| s * tau);
                    let mixture = mixture_enabled(cfg).then(|| {
                        let (offsets, noise_sigma) = real_part_mixture(&frame.channel, &sc.codes, &sc.powers, k, m);
                        mixture_error_probability(tau, params.mu, &offsets, noise_sigma, cfg.true_rate)
                    });
                    for j in 0..sc.symbols_per_packet {
                        let x = signed_stat(tensor.stat(m, k, j)?, cfg.convention);
                        acc.record(x, frame.activity.is_active(k), tau, &params, mixture, perturbed);
                    }
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut total = PeAccum::default();
    for a in &accums {
        total.merge(a);
    }
    Ok(report(cfg, &total))
}

fn mixture_enabled(cfg: &PeHarnessConfig) -> bool {
    cfg.convention == StatisticConvention::RealPart && cfg.devices - 1 <= MIXTURE_MAX_INTERFERERS
}

fn report(cfg: &PeHarnessConfig, t: &PeAccum) -> PeReport {
    let n = t.decisions as f64;
    let (ci_low, ci_high) = wilson_interval(t.errors, t.decisions, Z95);
    let rate = |k: u64, d: u64| if d == 0 { f64::NAN } else { k as f64 / d as f64 };
    PeReport {
        devices: cfg.devices,
        snr_db: cfg.snr_db,
        decisions: t.decisions,
        errors: t.errors,
        pe_empirical: t.errors as f64 / n,
        pe_analytic: t.pe_sum / n,
        std_error: t.var_sum.sqrt() / n,
        ci_low,
        ci_high,
        inactive_decisions: t.inactive,
        false_alarm_one_sided: rate(t.fa_one, t.inactive),
        false_alarm_two_sided: rate(t.fa_two, t.inactive),
        false_alarm_pred_one_sided: if t.inactive == 0 { f64::NAN } else { t.fa_pred_one / t.inactive as f64 },
        pe_mixture: mixture_enabled(cfg).then(|| t.mixture_sum / n),
        mixture_std_error: mixture_enabled(cfg).then(|| t.mixture_var.sqrt() / n),
        perturbed: cfg.perturb_scale.map(|scale| PairedComparison {
            scale,
            errors: t.perturbed_errors,
            only_base: t.only_base,
            only_perturbed: t.only_perturbed,
        }),
    }
}

/// One `(device, antenna)` row of the fixed-channel comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixedChannelRow {
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
}

/// Analytic versus simulated error rate per `(k, m)` on one frozen channel realisation.
pub fn fixed_channel_rows(cfg: &PeHarnessConfig) -> Result<Vec<FixedChannelRow>> {
    cfg.validate()?;
    let sc = cfg.scenario(harness_codes(cfg)?)?;
    let k_total = sc.devices();
    let mut rng = frame_rng(derive_seed(cfg.seed, "harness-channel"), 0);
    let channel: ChannelState<f64> =
        sample_channel(sc.antennas, k_total, sc.coeff_var, &mut rng)?.with_noise_var(sc.noise_var)?;
    let mut setup = Vec::with_capacity(sc.antennas * k_total);
    for m in 0..sc.antennas {
        for k in 0..k_total {
            let params = stat_params(&channel, &sc.codes, &sc.powers, k, m, cfg.assumed_rate, cfg.convention)?;
            let tau = optimal_threshold(&params)?;
            setup.push((params, tau));
        }
    }
    let draws = cfg.decisions.div_ceil(sc.symbols_per_packet as u64);
    let draw_seed = derive_seed(cfg.seed, "harness-draws");
    let per_draw: Vec<Vec<u64>> = (0..draws)
        .into_par_iter()
        .map(|i| {
            let mut rng = frame_rng(draw_seed, i);
            let activity = sample_activity_at_rate(k_total, cfg.true_rate, &mut rng)?;
            let symbols = sample_symbols(&activity, sc.symbols_per_packet, &mut rng);
            let frame = transmit(&sc.codes, channel.clone(), activity, symbols, &sc.powers, &mut rng)?;
            let tensor = observe(&frame, &sc.codes, &sc.powers)?;
            let mut errors = vec![0u64; setup.len()];
            for m in 0..sc.antennas {
                for k in 0..k_total {
                    let tau = setup[m * k_total + k].1;
                    for j in 0..sc.symbols_per_packet {
                        let x = signed_stat(tensor.stat(m, k, j)?, cfg.convention);
                        errors[m * k_total + k] += u64::from((x.abs() > tau) != frame.activity.is_active(k));
                    }
                }
            }
            Ok(errors)
        })
        .collect::<Result<_>>()?;
    let n = draws * sc.symbols_per_packet as u64;
    Ok(setup
        .iter()
        .enumerate()
        .map(|(idx, (params, tau))| {
            let errors: u64 = per_draw.iter().map(|e| e[idx]).sum();
            let (ci_low, ci_high) = wilson_interval(errors, n, Z95);
            FixedChannelRow {
                k: idx % k_total,
                m: idx / k_total,
                mu: params.mu,
                sigma: params.sigma,
                tau_star: *tau,
                pe_analytic: error_probability(*tau, params),
                pe_empirical: errors as f64 / n as f64,
                ci_low,
                ci_high,
                decisions: n,
            }
        })
        .collect())
}

/// Outcome of the curvature and optimality study for one parameter draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvexityDraw {
    pub mu: f64,
    pub sigma: f64,
    pub pa: f64,
    /// Smallest raw second difference `f(t-h) - 2f(t) + f(t+h)` on the grid over `[0, 2 mu]`.
    pub min_second_diff: f64,
    /// Where that minimum occurs.
    pub tau_at_min: f64,
    /// Grid values never decrease after the grid minimum and never increase before it.
    pub unimodal: bool,
    pub tau_closed: f64,
    pub tau_golden: f64,
    /// `|tau_closed - tau_golden| / mu`.
    pub argmin_gap: f64,
    /// Central-difference slope at the closed-form threshold.
    pub slope_at_tau: f64,
}

/// Parameter region used for the random draws: `sigma ~ U[0.25, 2]`,
/// `mu / sigma ~ U[1, 8]`, `pa ~ U[0.01, 0.5]`.
pub fn draw_params<R: Rng + ?Sized>(rng: &mut R) -> Result<SymbolStatParams<f64>> {
    let sigma = rng.random_range(0.25..2.0);
    let ratio = rng.random_range(1.0..8.0);
    let pa = rng.random_range(0.01..0.5);
    SymbolStatParams::new(ratio * sigma, sigma, pa)
}

/// Curvature, unimodality and closed-form optimality of the error objective for one draw.
pub fn study_objective(params: &SymbolStatParams<f64>, grid_points: usize) -> Result<ConvexityDraw> {
    if grid_points < 3 {
        return Err(Error::param("grid_points", "need at least 3"));
    }
    let f = |t: f64| error_probability(t, params);
    let mu = params.mu;
    let h = 2.0 * mu / (grid_points - 1) as f64;
    let values: Vec<f64> = (0..grid_points).map(|i| f(i as f64 * h)).collect();
    let (mut min_d2, mut at) = (f64::INFINITY, 0.0);
    for i in 1..grid_points - 1 {
        let d2 = values[i - 1] - 2.0 * values[i] + values[i + 1];
        if d2 < min_d2 {
            min_d2 = d2;
            at = i as f64 * h;
        }
    }
    let argmin = values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map_or(0, |(i, _)| i);
    let unimodal = values[..=argmin].windows(2).all(|w| w[1] <= w[0]) && values[argmin..].windows(2).all(|w| w[1] >= w[0]);

    // Bracket the minimiser without the closed form: extend the right end while the
    // objective is still falling there.
    let slope = |t: f64| {
        let d = 1e-6 * mu;
        (f(t + d) - f((t - d).max(0.0))) / (t + d - (t - d).max(0.0))
    };
    let mut hi = 2.0 * mu;
    while slope(hi) < 0.0 && hi < 1e6 * mu {
        hi *= 2.0;
    }
    let tau_golden = golden_section_argmin(f, 0.0, hi, 1e-12 * mu);
    let tau_closed = optimal_threshold(params)?;
    Ok(ConvexityDraw {
        mu,
        sigma: params.sigma,
        pa: params.pa,
        min_second_diff: min_d2,
        tau_at_min: at,
        unimodal,
        tau_closed,
        tau_golden,
        argmin_gap: (tau_closed - tau_golden).abs() / mu,
        slope_at_tau: slope(tau_closed),
    })
}

/// Runs [`study_objective`] on `draws` random parameter sets.
pub fn convexity_study(draws: usize, grid_points: usize, seed: u64) -> Result<Vec<ConvexityDraw>> {
    let mut rng = frame_rng(derive_seed(seed, "convexity"), 0);
    (0..draws)
        .map(|_| study_objective(&draw_params(&mut rng)?, grid_points))
        .collect()
}

/// `(tau, Pe(tau))` on `points` evenly spaced thresholds over `[0, 2 mu]`.
pub fn objective_curve(params: &SymbolStatParams<f64>, points: usize) -> Vec<(f64, f64)> {
    let step = 2.0 * params.mu / points.saturating_sub(1).max(1) as f64;
    (0..points)
        .map(|i| {
            let t = i as f64 * step;
            (t, error_probability(t, params))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::threshold::interference_variance;

    #[test]
    fn single_device_matches_model() {
        let rep = analytic_vs_empirical_pe(&PeHarnessConfig {
            decisions: 100_000,
            ..Default::default()
        })
        .unwrap();
        assert!(rep.errors >= 10, "too few errors to be informative: {rep:?}");
        assert!(rep.z_score().abs() < 3.0, "{rep:?}");
    }

    #[test]
    fn mixture_without_interferers_is_the_gaussian_model() {
        let params = SymbolStatParams::new(2.0, 0.6, 0.1).unwrap();
        let tau = optimal_threshold(&params).unwrap();
        let exact = mixture_error_probability(tau, 2.0, &[], 0.6, 0.1);
        // The Gaussian objective drops the far tail P(x < -tau) of active symbols.
        let far_tail = 0.1 * q_function((2.0 + tau) / 0.6);
        assert!((exact + far_tail - error_probability(tau, &params)).abs() < 1e-15);
    }

    #[test]
    fn mixture_enumerates_every_state() {
        // Two interferers at rate 1/2 with offsets 1 and 3; brute force over 9 states.
        let (tau, mu, s, pa) = (1.5, 4.0, 0.7, 0.5);
        let q = |x: f64| q_function(x / s);
        let mut brute = 0.0;
        for (a, pa_) in [(0.0, 0.5), (1.0, 0.25), (-1.0, 0.25)] {
            for (b, pb) in [(0.0, 0.5), (3.0, 0.25), (-3.0, 0.25)] {
                let o = a + b;
                let fa = q(tau - o) + q(tau + o);
                let miss = q(-tau - mu - o) - q(tau - mu - o);
                brute += pa_ * pb * ((1.0 - pa) * fa + pa * miss);
            }
        }
        assert!((mixture_error_probability(tau, mu, &[1.0, 3.0], s, pa) - brute).abs() < 1e-15);
    }

    #[test]
    fn mixture_matches_simulation_with_interference() {
        let rep = analytic_vs_empirical_pe(&PeHarnessConfig {
            devices: 4,
            decisions: 100_000,
            ..Default::default()
        })
        .unwrap();
        assert!(rep.errors >= 10, "{rep:?}");
        let z = rep.mixture_z_score().unwrap();
        assert!(z.abs() < 3.0, "mixture z {z}: {rep:?}");
    }

    #[test]
    fn optimal_threshold_beats_perturbed() {
        let rep = analytic_vs_empirical_pe(&PeHarnessConfig {
            devices: 4,
            snr_db: 5.0,
            perturb_scale: Some(1.5),
            decisions: 100_000,
            ..Default::default()
        })
        .unwrap();
        let p = rep.perturbed.unwrap();
        assert!(rep.errors <= p.errors, "{rep:?}");
        assert!(p.z() > 0.0);
    }

    #[test]
    fn inactive_stream_false_alarms() {
        let rep = analytic_vs_empirical_pe(&PeHarnessConfig {
            true_rate: 0.0,
            snr_db: 0.0,
            decisions: 200_000,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(rep.inactive_decisions, rep.decisions);
        // Two-sided rate against 2 Q(tau/sigma), which is exactly the error model here.
        let n = rep.decisions as f64;
        let pred_two = 2.0 * rep.false_alarm_pred_one_sided;
        let se = (pred_two * (1.0 - pred_two) / n).sqrt();
        assert!((rep.false_alarm_two_sided - pred_two).abs() < 4.0 * se, "{rep:?}");
        // The signed statistic crosses only half as often.
        let se1 = (rep.false_alarm_pred_one_sided / n).sqrt();
        assert!((rep.false_alarm_one_sided - rep.false_alarm_pred_one_sided).abs() < 4.0 * se1, "{rep:?}");
        assert!(rep.false_alarm_two_sided > 1.5 * rep.false_alarm_one_sided);
    }

    #[test]
    fn fixed_channel_rows_cover_every_pair() {
        let rows = fixed_channel_rows(&PeHarnessConfig {
            devices: 3,
            antennas: 2,
            snr_db: 0.0,
            decisions: 40_000,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(rows.len(), 6);
        for r in &rows {
            assert!(r.ci_low <= r.pe_empirical && r.pe_empirical <= r.ci_high);
            assert!(r.tau_star > 0.0 && r.sigma > 0.0);
        }
    }

    #[test]
    fn variance_matches_simulation_on_fixed_channel() {
        // Empirical variance of the real statistic of device 0 versus the model.
        let cfg = PeHarnessConfig {
            devices: 4,
            spreading_factor: 4,
            snr_db: 5.0,
            true_rate: 0.3,
            ..Default::default()
        };
        let sc = cfg.scenario(harness_codes(&cfg).unwrap()).unwrap();
        let mut rng = frame_rng(3, 0);
        let channel = sample_channel::<f64, _>(1, 4, 1.0, &mut rng).unwrap().with_noise_var(sc.noise_var).unwrap();
        let n = 200_000u64;
        let samples: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut rng = frame_rng(11, i);
                let mut activity = sample_activity_at_rate(4, cfg.true_rate, &mut rng).unwrap().bits().to_vec();
                activity[0] = false;
                let activity = crate::simulator::ActivityVector::new(activity, cfg.true_rate);
                let symbols = sample_symbols(&activity, 1, &mut rng);
                let frame = transmit(&sc.codes, channel.clone(), activity, symbols, &sc.powers, &mut rng).unwrap();
                observe(&frame, &sc.codes, &sc.powers).unwrap().stat(0, 0, 0).unwrap().norm_sqr()
            })
            .collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let model = interference_variance(&channel, &sc.codes, &sc.powers, 0, 0, cfg.true_rate).unwrap();
        let se = var.sqrt() / (n as f64).sqrt();
        assert!((mean - model).abs() < 3.0 * se, "E|r|^2 {mean} vs {model} (se {se})");
    }

    #[test]
    fn closed_form_matches_search() {
        for d in convexity_study(100, 1000, 4).unwrap() {
            assert!(d.argmin_gap < 1e-6, "{d:?}");
            assert!(d.unimodal, "{d:?}");
            assert!(d.slope_at_tau.abs() < 1e-6, "{d:?}");
        }
    }

    #[test]
    fn objective_is_not_convex_beyond_the_mean() {
        // Analytic second derivative at tau = 1.5 mu is negative for this draw.
        let p = SymbolStatParams::new(2.0, 1.0, 0.1).unwrap();
        let d = study_objective(&p, 1000).unwrap();
        assert!(d.min_second_diff < -1e-9);
        assert!(d.tau_at_min > p.mu);
        assert!(d.unimodal);
    }

    #[test]
    fn curve_spans_interval() {
        let p = SymbolStatParams::new(3.0, 1.0, 0.2).unwrap();
        let c = objective_curve(&p, 11);
        assert_eq!(c.len(), 11);
        assert_eq!(c[0].0, 0.0);
        assert!((c[10].0 - 6.0).abs() < 1e-12);
    }
}
