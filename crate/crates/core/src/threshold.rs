//! Gaussian-approximation activity detection by per-symbol thresholding.
//!
//! Each decorrelated statistic `r_{k,j}^m` is modelled as `N(mu, sigma^2)` when
//! device `k` is active and `N(0, sigma^2)` otherwise. The per-symbol error
//! probability
//!
//! ```text
//! Pe(tau) = 2 (1 - pa) Q(tau / sigma) + pa Q((mu - tau) / sigma)
//! ```
//!
//! has the unique stationary point
//! `tau* = mu/2 - (sigma^2/mu) ln(pa / (2 (1 - pa)))`, which is its global
//! minimiser: the derivative changes sign exactly once. Votes from all
//! symbols and antennas are then combined by a counting rule.

use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};
use libm::erfc;

use crate::error::{Error, Result};
use crate::frontend::DecorrelatedTensor;
use crate::scalar::{Cplx, Real};
use crate::simulator::{ActivityVector, ChannelState, PowerProfile, SpreadingMatrix};

/// Standard Gaussian tail `Q(x) = P(Z > x)`.
pub fn q_function<T: Real>(x: T) -> T {
    T::lit(0.5 * erfc(x.as_f64() / std::f64::consts::SQRT_2))
}

/// Mean and spread of one symbol statistic, plus the activity rate the detector assumes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymbolStatParams<T: Real> {
    pub mu: T,
    pub sigma: T,
    pub pa: T,
}

impl<T: Real> SymbolStatParams<T> {
    pub fn new(mu: T, sigma: T, pa: T) -> Result<Self> {
        if !(mu > T::zero() && mu.is_finite()) {
            return Err(Error::param("mu", format!("{mu} is not positive")));
        }
        if !(sigma > T::zero() && sigma.is_finite()) {
            return Err(Error::param("sigma", format!("{sigma} is not positive")));
        }
        if !(pa > T::zero() && pa < T::one()) {
            return Err(Error::param("pa", format!("{pa} outside (0, 1)")));
        }
        Ok(Self { mu, sigma, pa })
    }
}

/// Which scalar the threshold is applied to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StatisticConvention {
    /// `|Re r|`: the decorrelator already rotates the signal term onto the real axis.
    #[default]
    RealPart,
    /// `|r|`, treating the complex magnitude with the full complex variance.
    Magnitude,
}

impl StatisticConvention {
    pub fn apply<T: Real>(self, r: Cplx<T>) -> T {
        match self {
            StatisticConvention::RealPart => r.re.abs(),
            StatisticConvention::Magnitude => r.norm(),
        }
    }
}

/// Interference-plus-noise variance of `r_{k,j}^m` after the `1/P_k` normalisation:
///
/// `(sum_{i != k} |g_mk^* g_mi c_k^T c_i|^2 P_i pa + |g_mk|^2 Nc sigma_w^2) / P_k^2`.
///
/// With unit powers this is exactly the classic complex variance.
pub fn interference_variance<T: Real>(
    channel: &ChannelState<T>,
    codes: &SpreadingMatrix,
    powers: &PowerProfile,
    device: usize,
    antenna: usize,
    pa: f64,
) -> Result<f64> {
    variance_terms(channel, codes, powers, device, antenna, pa).map(|t| t.complex)
}

struct VarianceTerms {
    complex: f64,
    real_part: f64,
}

fn variance_terms<T: Real>(
    channel: &ChannelState<T>,
    codes: &SpreadingMatrix,
    powers: &PowerProfile,
    device: usize,
    antenna: usize,
    pa: f64,
) -> Result<VarianceTerms> {
    check_indices(channel, codes, powers, device, antenna)?;
    if !(0.0..=1.0).contains(&pa) {
        return Err(Error::param("pa", format!("{pa} outside [0, 1]")));
    }
    let gk = to_f64(channel.gain(antenna, device));
    let pk = powers.power(device);
    let nc = codes.spreading_factor() as f64;
    let mut mui = 0.0;
    let mut mui_re = 0.0;
    for i in (0..codes.devices()).filter(|&i| i != device) {
        let cc = f64::from(codes.cross_correlation(device, i));
        let coupling = gk.conj() * to_f64(channel.gain(antenna, i)) * cc;
        mui += coupling.norm_sqr() * powers.power(i) * pa;
        mui_re += coupling.re * coupling.re * powers.power(i) * pa;
    }
    let noise = gk.norm_sqr() * nc * channel.noise_var();
    let scale = 1.0 / (pk * pk);
    Ok(VarianceTerms {
        complex: (mui + noise) * scale,
        real_part: (mui_re + noise / 2.0) * scale,
    })
}

fn to_f64<T: Real>(v: Cplx<T>) -> Cplx<f64> {
    Cplx::new(v.re.as_f64(), v.im.as_f64())
}

fn check_indices<T: Real>(
    channel: &ChannelState<T>,
    codes: &SpreadingMatrix,
    powers: &PowerProfile,
    device: usize,
    antenna: usize,
) -> Result<()> {
    if channel.devices() != codes.devices() || powers.devices() != codes.devices() {
        return Err(Error::dims(
            "threshold inputs",
            codes.devices(),
            (channel.devices(), powers.devices()),
        ));
    }
    if device >= codes.devices() || antenna >= channel.antennas() {
        return Err(Error::IndexOutOfRange(format!(
            "device {device} / antenna {antenna} with K={} M={}",
            codes.devices(),
            channel.antennas()
        )));
    }
    Ok(())
}

/// Statistic parameters for device `device` at `antenna` under `convention`.
///
/// For [`StatisticConvention::RealPart`] the variance is the exact variance of the real
/// projection given the channel: interference couplings contribute `Re(.)^2` and the
/// circular noise contributes half its power.
pub fn stat_params<T: Real>(
    channel: &ChannelState<T>,
    codes: &SpreadingMatrix,
    powers: &PowerProfile,
    device: usize,
    antenna: usize,
    pa: f64,
    convention: StatisticConvention,
) -> Result<SymbolStatParams<f64>> {
    let terms = variance_terms(channel, codes, powers, device, antenna, pa)?;
    let g = channel.gain(antenna, device).norm_sqr().as_f64();
    let mu = g * codes.spreading_factor() as f64 / powers.power(device).sqrt();
    let var = match convention {
        StatisticConvention::RealPart => terms.real_part,
        StatisticConvention::Magnitude => terms.complex,
    };
    let sigma = var.sqrt().max(f64::MIN_POSITIVE);
    SymbolStatParams::new(mu.max(f64::MIN_POSITIVE), sigma, pa)
}

/// `2 (1 - pa) Q(tau/sigma) + pa Q((mu - tau)/sigma)`.
pub fn error_probability<T: Real>(tau: T, params: &SymbolStatParams<T>) -> T {
    let two = T::lit(2.0);
    let SymbolStatParams { mu, sigma, pa } = *params;
    two * (T::one() - pa) * q_function(tau / sigma) + pa * q_function((mu - tau) / sigma)
}

/// Closed-form minimiser of [`error_probability`] over `tau >= 0`.
pub fn optimal_threshold<T: Real>(params: &SymbolStatParams<T>) -> Result<T> {
    let SymbolStatParams { mu, sigma, pa } = *params;
    if !(mu > T::zero()) {
        return Err(Error::param("mu", "signal mean must be positive"));
    }
    let two = T::lit(2.0);
    let tau = mu / two - sigma * sigma / mu * (pa / (two * (T::one() - pa))).ln();
    Ok(tau.max(T::zero()))
}

/// Golden-section minimiser of a unimodal function on `[lo, hi]`.
pub fn golden_section_argmin(f: impl Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    (a + b) / 2.0
}

/// Per-(antenna, device) optimal thresholds, shape `(M, K)`.
pub fn thresholds<T: Real>(
    channel: &ChannelState<T>,
    codes: &SpreadingMatrix,
    powers: &PowerProfile,
    pa: f64,
    convention: StatisticConvention,
) -> Result<Array2<f64>> {
    let (m, k) = (channel.antennas(), codes.devices());
    let mut taus = Array2::zeros((m, k));
    for antenna in 0..m {
        for device in 0..k {
            let params = stat_params(channel, codes, powers, device, antenna, pa, convention)?;
            taus[[antenna, device]] = optimal_threshold(&params)?;
        }
    }
    Ok(taus)
}

/// `votes[m, k, j] = |r_{k,j}^m| > tau[m, k]`.
pub fn detect_symbolwise<T: Real>(
    tensor: &DecorrelatedTensor<T>,
    taus: &Array2<f64>,
    convention: StatisticConvention,
) -> Result<Array3<bool>> {
    let (m, k, ns) = tensor.dims();
    if taus.dim() != (m, k) {
        return Err(Error::dims("detect_symbolwise thresholds", (m, k), taus.dim()));
    }
    Ok(Array3::from_shape_fn((m, k, ns), |(a, d, j)| {
        convention.apply(tensor.data()[[a, d, j]]).as_f64() > taus[[a, d]]
    }))
}

/// Decision fusion over the `M * Ns` votes of each device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "n")]
pub enum CombiningRule {
    /// Active iff at least `ceil(M Ns / 2)` votes.
    #[default]
    Majority,
    /// Active iff at least `n` votes.
    CountThreshold(usize),
}

impl CombiningRule {
    pub fn required_votes(self, total: usize) -> Result<usize> {
        match self {
            CombiningRule::Majority => Ok(total.div_ceil(2).max(1)),
            CombiningRule::CountThreshold(n) if (1..=total).contains(&n) => Ok(n),
            CombiningRule::CountThreshold(n) => Err(Error::param(
                "count_threshold",
                format!("{n} outside [1, {total}]"),
            )),
        }
    }
}

pub fn combine_votes(votes: &Array3<bool>, rule: CombiningRule) -> Result<ActivityVector> {
    let (m, k, ns) = votes.dim();
    let need = rule.required_votes(m * ns)?;
    let bits = (0..k)
        .map(|d| {
            votes
                .index_axis(Axis(1), d)
                .iter()
                .filter(|&&v| v)
                .count()
                >= need
        })
        .collect();
    Ok(ActivityVector::new(bits, f64::NAN))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThresholdConfig {
    /// Activity rate plugged into the error objective; the true rate is never known.
    pub assumed_rate: f64,
    pub rule: CombiningRule,
    pub convention: StatisticConvention,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self {
            assumed_rate: 0.05,
            rule: CombiningRule::Majority,
            convention: StatisticConvention::RealPart,
        }
    }
}

impl ThresholdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.assumed_rate > 0.0 && self.assumed_rate < 1.0) {
            return Err(Error::param(
                "threshold.assumed_rate",
                format!("{} outside (0, 1)", self.assumed_rate),
            ));
        }
        if let CombiningRule::CountThreshold(0) = self.rule {
            return Err(Error::param("threshold.rule", "count threshold must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdDecision {
    /// `(M, K)` thresholds.
    pub taus: Array2<f64>,
    /// `(M, K, Ns)` votes.
    pub per_symbol: Array3<bool>,
    pub combined: ActivityVector,
}

/// Full threshold detector on one frame's tensor with known channel.
pub fn threshold_detect<T: Real>(
    tensor: &DecorrelatedTensor<T>,
    channel: &ChannelState<T>,
    codes: &SpreadingMatrix,
    powers: &PowerProfile,
    cfg: &ThresholdConfig,
) -> Result<ThresholdDecision> {
    let taus = thresholds(channel, codes, powers, cfg.assumed_rate, cfg.convention)?;
    let per_symbol = detect_symbolwise(tensor, &taus, cfg.convention)?;
    let combined = combine_votes(&per_symbol, cfg.rule)?;
    Ok(ThresholdDecision {
        taus,
        per_symbol,
        combined,
    })
}
