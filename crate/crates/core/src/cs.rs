//! Compressed-sensing activity detection baselines: simultaneous OMP and
//! multiple-measurement AMP over all antennas and symbols of a frame.
//!
//! Neither detector is told how many devices are active. OMP stops on a relative
//! residual tolerance; AMP produces per-device scores that are thresholded.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::least_squares;
use crate::scalar::{czero, Cplx, Real};
use crate::simulator::{ActivityVector, PowerProfile};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum AmpThresholdMode {
    /// `theta_t = alpha ||z_t||_F / sqrt(rows * cols)`.
    Residual { alpha: f64 },
    /// Constant threshold.
    Fixed { theta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CsConfig {
    /// OMP stops once `||R||_F / ||Y||_F` drops below this.
    pub omp_residual_tol: f64,
    /// Cap on selected atoms; `None` means `K`.
    pub omp_max_iters: Option<usize>,
    pub amp_iters: usize,
    /// Weight on the previous iterate, in `[0, 1)`.
    pub amp_damping: f64,
    pub amp_threshold_mode: AmpThresholdMode,
    /// Devices whose pooled AMP score reaches this are declared active.
    pub amp_score_threshold: f64,
}

impl Default for CsConfig {
    fn default() -> Self {
        Self {
            omp_residual_tol: 0.4,
            omp_max_iters: None,
            amp_iters: 30,
            amp_damping: 0.0,
            amp_threshold_mode: AmpThresholdMode::Residual { alpha: 1.5 },
            amp_score_threshold: 0.5,
        }
    }
}

impl CsConfig {
    pub fn validate(&self, devices: usize) -> Result<()> {
        if !(self.omp_residual_tol > 0.0) {
            return Err(Error::param("omp_residual_tol", "must be positive"));
        }
        if let Some(n) = self.omp_max_iters {
            if n == 0 || n > devices {
                return Err(Error::param("omp_max_iters", format!("{n} outside [1, {devices}]")));
            }
        }
        if self.amp_iters == 0 {
            return Err(Error::param("amp_iters", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.amp_damping) {
            return Err(Error::param("amp_damping", "must be in [0, 1)"));
        }
        match self.amp_threshold_mode {
            AmpThresholdMode::Residual { alpha } if !(alpha > 0.0) => {
                Err(Error::param("amp_threshold_mode.alpha", "must be positive"))
            }
            AmpThresholdMode::Fixed { theta } if !(theta > 0.0) => {
                Err(Error::param("amp_threshold_mode.theta", "must be positive"))
            }
            _ if !(self.amp_score_threshold > 0.0) => {
                Err(Error::param("amp_score_threshold", "must be positive"))
            }
            _ => Ok(()),
        }
    }
}

fn check_system<T: Real>(received: &[Array2<Cplx<T>>], phi: &[Array2<Cplx<T>>]) -> Result<usize> {
    if received.is_empty() || received.len() != phi.len() {
        return Err(Error::dims("cs system antennas", phi.len(), received.len()));
    }
    let k = phi[0].ncols();
    for (y, p) in received.iter().zip(phi) {
        if y.nrows() != p.nrows() || p.ncols() != k || y.ncols() != received[0].ncols() {
            return Err(Error::dims("cs system", p.dim(), y.dim()));
        }
    }
    Ok(k)
}

fn frob_sq<T: Real>(a: &Array2<Cplx<T>>) -> f64 {
    a.iter().map(|v| v.norm_sqr().as_f64()).sum()
}

/// Greedy path of simultaneous OMP.
#[derive(Debug, Clone)]
pub struct OmpResult<T: Real> {
    /// Selected atoms in selection order.
    pub selected: Vec<usize>,
    /// Least-squares coefficients per antenna, rows follow `selected`.
    pub coefficients: Vec<Array2<Cplx<T>>>,
    /// Relative residual before any selection (1, or 0 for a zero observation) and
    /// after each selection.
    pub residual_history: Vec<f64>,
    /// A refit needed the pseudo-inverse fallback.
    pub rank_deficient: bool,
}

impl<T: Real> OmpResult<T> {
    pub fn iterations(&self) -> usize {
        self.selected.len()
    }

    pub fn final_residual(&self) -> f64 {
        *self.residual_history.last().unwrap_or(&0.0)
    }

    pub fn support(&self) -> Vec<usize> {
        let mut s = self.selected.clone();
        s.sort_unstable();
        s
    }

    /// Support the same run would have returned under tolerance `tol`: the shortest
    /// prefix of the path whose residual is below `tol`.
    pub fn support_at_tol(&self, tol: f64) -> Vec<usize> {
        let n = self
            .residual_history
            .iter()
            .position(|&r| r < tol)
            .unwrap_or(self.selected.len());
        let mut s = self.selected[..n.min(self.selected.len())].to_vec();
        s.sort_unstable();
        s
    }
}

/// Simultaneous OMP: atoms are chosen by the correlation energy of the unit-norm
/// atom with the residual, summed over antennas and symbols; each antenna is then
/// refit by least squares on the common support.
pub fn omp_detect<T: Real>(
    received: &[Array2<Cplx<T>>],
    phi: &[Array2<Cplx<T>>],
    cfg: &CsConfig,
) -> Result<OmpResult<T>> {
    let k = check_system(received, phi)?;
    let max_iters = cfg.omp_max_iters.unwrap_or(k).min(k);
    let y_energy: f64 = received.iter().map(frob_sq).sum();
    let mut result = OmpResult {
        selected: Vec::new(),
        coefficients: received.iter().map(|y| Array2::from_elem((0, y.ncols()), czero())).collect(),
        residual_history: vec![if y_energy > 0.0 { 1.0 } else { 0.0 }],
        rank_deficient: false,
    };
    if y_energy == 0.0 {
        return Ok(result);
    }
    let col_norms: Vec<Vec<f64>> = phi
        .iter()
        .map(|p| {
            p.axis_iter(Axis(1))
                .map(|c| c.iter().map(|v| v.norm_sqr().as_f64()).sum::<f64>())
                .collect()
        })
        .collect();
    let mut residuals: Vec<Array2<Cplx<T>>> = received.to_vec();
    let mut chosen = vec![false; k];
    while result.selected.len() < max_iters && result.final_residual() >= cfg.omp_residual_tol {
        let mut best = (usize::MAX, 0.0f64);
        for dev in (0..k).filter(|&d| !chosen[d]) {
            let mut score = 0.0;
            for (m, (p, r)) in phi.iter().zip(&residuals).enumerate() {
                if col_norms[m][dev] == 0.0 {
                    continue;
                }
                let atom = p.column(dev);
                let mut e = 0.0;
                for col in r.axis_iter(Axis(1)) {
                    let c = atom
                        .iter()
                        .zip(col.iter())
                        .fold(czero::<T>(), |acc, (a, v)| acc + a.conj() * v);
                    e += c.norm_sqr().as_f64();
                }
                score += e / col_norms[m][dev];
            }
            if score > best.1 {
                best = (dev, score);
            }
        }
        if best.0 == usize::MAX {
            break;
        }
        chosen[best.0] = true;
        result.selected.push(best.0);
        let mut res_energy = 0.0;
        for m in 0..phi.len() {
            let sub = select_columns(&phi[m], &result.selected);
            let sol = least_squares(sub.view(), received[m].view());
            result.rank_deficient |= sol.regularized;
            residuals[m] = &received[m] - &sub.dot(&sol.x);
            res_energy += frob_sq(&residuals[m]);
            result.coefficients[m] = sol.x;
        }
        result.residual_history.push((res_energy / y_energy).sqrt());
    }
    Ok(result)
}

fn select_columns<T: Real>(a: &Array2<Cplx<T>>, cols: &[usize]) -> Array2<Cplx<T>> {
    Array2::from_shape_fn((a.nrows(), cols.len()), |(i, j)| a[[i, cols[j]]])
}

/// Complex soft threshold `u max(|u| - theta, 0) / |u|`.
pub fn soft_threshold<T: Real>(u: Cplx<T>, theta: T) -> Cplx<T> {
    let mag = u.norm();
    if mag > theta {
        u * ((mag - theta) / mag)
    } else {
        czero()
    }
}

/// One AMP solve on a column-normalised dictionary.
#[derive(Debug, Clone)]
pub struct AmpSolution<T: Real> {
    pub x: Array2<Cplx<T>>,
    pub iterations: usize,
    /// The residual grew for five consecutive iterations; `x` is the best iterate seen.
    pub diverged: bool,
    /// `||Y - A x_t||_F` per iteration.
    pub residual_history: Vec<f64>,
    /// Every iterate, when requested.
    pub iterates: Vec<Array2<Cplx<T>>>,
}

/// AMP with complex soft thresholding and Onsager correction, run jointly over the
/// columns of `y` (one per symbol).
pub fn amp_solve<T: Real>(
    y: &Array2<Cplx<T>>,
    a: &Array2<Cplx<T>>,
    cfg: &CsConfig,
    keep_iterates: bool,
) -> AmpSolution<T> {
    let (n, big_n) = a.dim();
    let cols = y.ncols();
    let a_h = a.t().mapv(|v| v.conj());
    let mut x = Array2::from_elem((big_n, cols), czero::<T>());
    let mut z = y.clone();
    let damping = T::lit(cfg.amp_damping);
    let keep = T::one() - damping;
    let mut best_x = x.clone();
    let mut best_res = frob_sq(y).sqrt();
    let mut history = Vec::with_capacity(cfg.amp_iters);
    let mut iterates = Vec::new();
    let mut growth = 0;
    let mut prev_res = best_res;
    let mut diverged = false;
    let mut iterations = 0;
    for _ in 0..cfg.amp_iters {
        iterations += 1;
        let theta = match cfg.amp_threshold_mode {
            AmpThresholdMode::Residual { alpha } => {
                T::lit(alpha * (frob_sq(&z) / (n * cols) as f64).sqrt())
            }
            AmpThresholdMode::Fixed { theta } => T::lit(theta),
        };
        let u = &x + &a_h.dot(&z);
        let x_new = u.mapv(|v| soft_threshold(v, theta));
        // Divergence of the complex soft threshold: 1 - theta / (2|u|) where active.
        let mut onsager = vec![T::zero(); cols];
        for ((_, j), v) in u.indexed_iter() {
            let mag = v.norm();
            if mag > theta {
                onsager[j] += T::one() - theta / (T::lit(2.0) * mag);
            }
        }
        let inv_n = T::lit(1.0 / n as f64);
        let mut z_new = y - &a.dot(&x_new);
        for (j, mut col) in z_new.axis_iter_mut(Axis(1)).enumerate() {
            let b = onsager[j] * inv_n;
            col.zip_mut_with(&z.column(j), |zn, zo| *zn += *zo * b);
        }
        if cfg.amp_damping > 0.0 {
            x = x.mapv(|v| v * damping) + x_new.mapv(|v| v * keep);
            z = z.mapv(|v| v * damping) + z_new.mapv(|v| v * keep);
        } else {
            x = x_new;
            z = z_new;
        }
        let res = frob_sq(&(y - &a.dot(&x))).sqrt();
        history.push(res);
        if keep_iterates {
            iterates.push(x.clone());
        }
        if res < best_res || iterations == 1 && res <= best_res {
            best_res = res;
            best_x.assign(&x);
        }
        if !res.is_finite() {
            diverged = true;
            break;
        }
        growth = if res > prev_res { growth + 1 } else { 0 };
        prev_res = res;
        if growth >= 5 {
            diverged = true;
            break;
        }
    }
    let x = if diverged { best_x } else { x };
    AmpSolution {
        x,
        iterations,
        diverged,
        residual_history: history,
        iterates,
    }
}

#[derive(Debug, Clone)]
pub struct AmpResult<T: Real> {
    /// Pooled score per device; about `1` for an active device and `0` for a silent one.
    pub scores: Vec<f64>,
    pub support: Vec<usize>,
    /// De-normalised coefficients per antenna, `K x Ns`.
    pub coefficients: Vec<Array2<Cplx<T>>>,
    pub iterations: usize,
    pub diverged: bool,
    pub final_residual: f64,
}

/// Per-antenna AMP on column-normalised dictionaries, pooled across antennas and
/// symbols by row energy.
///
/// The score of device `k` is `sum_{m,j} |x~_{m,k,j}|^2 / (Ns P_k sum_m ||phi_{m,k}||^2)`,
/// where `x~` are the coefficients of the normalised dictionary: a channel-weighted
/// estimate of `|b|^2`.
pub fn amp_detect<T: Real>(
    received: &[Array2<Cplx<T>>],
    phi: &[Array2<Cplx<T>>],
    powers: &PowerProfile,
    cfg: &CsConfig,
) -> Result<AmpResult<T>> {
    let k = check_system(received, phi)?;
    if powers.devices() != k {
        return Err(Error::dims("amp_detect powers", k, powers.devices()));
    }
    let ns = received[0].ncols();
    let mut energy = vec![0.0; k];
    let mut atom_energy = vec![0.0; k];
    let mut coefficients = Vec::with_capacity(phi.len());
    let mut iterations = 0;
    let mut diverged = false;
    let mut final_residual = 0.0;
    for (y, p) in received.iter().zip(phi) {
        let norms: Vec<f64> = p
            .axis_iter(Axis(1))
            .map(|c| c.iter().map(|v| v.norm_sqr().as_f64()).sum::<f64>().sqrt())
            .collect();
        let mut a = p.clone();
        for (dev, mut col) in a.axis_iter_mut(Axis(1)).enumerate() {
            if norms[dev] > 0.0 {
                let inv = T::lit(1.0 / norms[dev]);
                col.mapv_inplace(|v| v * inv);
            }
        }
        let sol = amp_solve(y, &a, cfg, false);
        iterations = iterations.max(sol.iterations);
        diverged |= sol.diverged;
        final_residual += sol.residual_history.last().copied().unwrap_or(0.0).powi(2);
        let mut coef = sol.x.clone();
        for dev in 0..k {
            let row_energy: f64 = sol.x.row(dev).iter().map(|v| v.norm_sqr().as_f64()).sum();
            energy[dev] += row_energy;
            atom_energy[dev] += norms[dev] * norms[dev];
            let inv = if norms[dev] > 0.0 { 1.0 / norms[dev] } else { 0.0 };
            coef.row_mut(dev).mapv_inplace(|v| v * T::lit(inv));
        }
        coefficients.push(coef);
    }
    let scores: Vec<f64> = (0..k)
        .map(|dev| {
            if atom_energy[dev] > 0.0 {
                energy[dev] / (ns as f64 * powers.power(dev) * atom_energy[dev])
            } else {
                0.0
            }
        })
        .collect();
    let support = (0..k)
        .filter(|&dev| scores[dev] >= cfg.amp_score_threshold)
        .collect();
    Ok(AmpResult {
        scores,
        support,
        coefficients,
        iterations,
        diverged,
        final_residual: final_residual.sqrt(),
    })
}

/// Indicator vector of `support`.
pub fn support_to_activity(support: &[usize], devices: usize) -> Result<ActivityVector> {
    ActivityVector::from_support(support, devices)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::cplx;
    use crate::simulator::{
        build_phi, frame_rng, gen_spreading, sample_channel, sample_symbols, transmit, ChannelState,
    };
    use proptest::prelude::*;

    fn two_device_frame(seed: u64) -> (Vec<Array2<Cplx<f64>>>, Vec<Array2<Cplx<f64>>>, Vec<usize>) {
        let codes = gen_spreading(8, 32, seed).unwrap();
        let powers = PowerProfile::homogeneous(8, 1.0).unwrap();
        let mut rng = frame_rng(seed, 0);
        let ch = sample_channel::<f64, _>(2, 8, 1.0, &mut rng).unwrap();
        let act = ActivityVector::from_support(&[2, 5], 8).unwrap();
        let sym = sample_symbols(&act, 4, &mut rng);
        let frame = transmit(&codes, ch.clone(), act, sym, &powers, &mut rng).unwrap();
        (frame.received, build_phi(&ch, &codes).unwrap(), vec![2, 5])
    }

    fn residual_for(received: &[Array2<Cplx<f64>>], phi: &[Array2<Cplx<f64>>], support: &[usize]) -> f64 {
        received
            .iter()
            .zip(phi)
            .map(|(y, p)| {
                let sub = select_columns(p, support);
                let sol = least_squares(sub.view(), y.view());
                frob_sq(&(y - &sub.dot(&sol.x)))
            })
            .sum()
    }

    #[test]
    fn omp_recovers_two_devices_noiseless() {
        let cfg = CsConfig {
            omp_residual_tol: 1e-6,
            ..CsConfig::default()
        };
        for seed in 0..20 {
            let (y, phi, truth) = two_device_frame(seed);
            // Brute force: the true pair uniquely attains zero residual among all pairs.
            let mut best = (f64::INFINITY, vec![]);
            for i in 0..8 {
                for j in (i + 1)..8 {
                    let r = residual_for(&y, &phi, &[i, j]);
                    if r < best.0 {
                        best = (r, vec![i, j]);
                    }
                }
            }
            assert_eq!(best.1, truth);
            let res = omp_detect(&y, &phi, &cfg).unwrap();
            assert_eq!(res.support(), truth, "seed {seed}");
            assert!(res.final_residual() < 1e-6);
        }
    }

    #[test]
    fn omp_zero_observation_is_empty() {
        let (y, phi, _) = two_device_frame(1);
        let zero: Vec<_> = y.iter().map(|a| a.mapv(|_| cplx(0.0, 0.0))).collect();
        let res = omp_detect(&zero, &phi, &CsConfig::default()).unwrap();
        assert!(res.support().is_empty());
        assert_eq!(res.iterations(), 0);
    }

    #[test]
    fn omp_path_invariants() {
        let codes = gen_spreading(12, 16, 4).unwrap();
        let powers = PowerProfile::homogeneous(12, 1.0).unwrap();
        let cfg = CsConfig {
            omp_residual_tol: 1e-9,
            ..CsConfig::default()
        };
        for seed in 0..30 {
            let mut rng = frame_rng(seed, 7);
            let ch = sample_channel::<f64, _>(3, 12, 1.0, &mut rng)
                .unwrap()
                .with_noise_var(0.3)
                .unwrap();
            let act = crate::simulator::sample_activity_at_rate(12, 0.3, &mut rng).unwrap();
            let sym = sample_symbols(&act, 5, &mut rng);
            let frame = transmit(&codes, ch.clone(), act, sym, &powers, &mut rng).unwrap();
            let phi = build_phi(&ch, &codes).unwrap();
            let res = omp_detect(&frame.received, &phi, &cfg).unwrap();
            for w in res.residual_history.windows(2) {
                assert!(w[1] <= w[0] + 1e-12, "residual increased: {:?}", res.residual_history);
            }
            let mut sorted = res.selected.clone();
            sorted.sort_unstable();
            sorted.dedup();
            assert_eq!(sorted.len(), res.selected.len());
            let again = omp_detect(&frame.received, &phi, &cfg).unwrap();
            assert_eq!(again.selected, res.selected);
        }
    }

    #[test]
    fn amp_zero_observation() {
        let (y, phi, _) = two_device_frame(2);
        let zero: Vec<_> = y.iter().map(|a| a.mapv(|_| cplx(0.0, 0.0))).collect();
        let powers = PowerProfile::homogeneous(8, 1.0).unwrap();
        let res = amp_detect(&zero, &phi, &powers, &CsConfig::default()).unwrap();
        assert!(res.scores.iter().all(|&s| s == 0.0));
        assert!(res.support.is_empty());
    }

    #[test]
    fn amp_denormalised_coefficients_recover_symbols() {
        // Single device, orthogonality irrelevant: coefficients come back as b.
        let codes = gen_spreading(4, 16, 9).unwrap();
        let powers = PowerProfile::homogeneous(4, 1.0).unwrap();
        let mut rng = frame_rng(9, 0);
        let ch = sample_channel::<f64, _>(2, 4, 1.0, &mut rng).unwrap();
        let act = ActivityVector::from_support(&[1], 4).unwrap();
        let sym = sample_symbols(&act, 3, &mut rng);
        let frame = transmit(&codes, ch.clone(), act, sym.clone(), &powers, &mut rng).unwrap();
        let phi = build_phi(&ch, &codes).unwrap();
        let cfg = CsConfig {
            amp_threshold_mode: AmpThresholdMode::Fixed { theta: 1e-3 },
            amp_iters: 200,
            ..CsConfig::default()
        };
        let res = amp_detect(&frame.received, &phi, &powers, &cfg).unwrap();
        assert_eq!(res.support, vec![1]);
        for coef in &res.coefficients {
            for j in 0..3 {
                let b = f64::from(sym.get(1, j));
                assert!((coef[[1, j]].re - b).abs() < 0.05, "{} vs {b}", coef[[1, j]]);
            }
        }
    }

    #[test]
    fn amp_mse_decreases_on_gaussian_dictionary() {
        use crate::simulator::complex_gaussian;
        use rand::Rng;
        let (n, big_n, sparsity, trials, iters) = (100, 200, 0.1, 1000, 5);
        let snr_db = 20.0;
        let cfg = CsConfig {
            amp_iters: iters,
            amp_threshold_mode: AmpThresholdMode::Residual { alpha: 1.5 },
            ..CsConfig::default()
        };
        let mut mse = vec![0.0; iters];
        for trial in 0..trials {
            let mut rng = frame_rng(77, trial as u64);
            let a = Array2::from_shape_fn((n, big_n), |_| complex_gaussian::<f64, _>(&mut rng, 1.0 / n as f64));
            let x = Array2::from_shape_fn((big_n, 1), |_| {
                if rng.random::<f64>() < sparsity {
                    complex_gaussian::<f64, _>(&mut rng, 1.0)
                } else {
                    cplx(0.0, 0.0)
                }
            });
            let clean = a.dot(&x);
            let signal = frob_sq(&clean) / n as f64;
            let noise_var = signal / 10f64.powf(snr_db / 10.0);
            let y = clean.mapv(|v| v + complex_gaussian::<f64, _>(&mut rng, noise_var));
            let sol = amp_solve(&y, &a, &cfg, true);
            assert_eq!(sol.iterates.len(), iters);
            for (t, xt) in sol.iterates.iter().enumerate() {
                mse[t] += frob_sq(&(xt - &x)) / big_n as f64 / trials as f64;
            }
        }
        for w in mse.windows(2) {
            assert!(w[1] < w[0], "mse not decreasing: {mse:?}");
        }
    }

    #[test]
    fn soft_threshold_shrinks_magnitude() {
        let v = soft_threshold(cplx(3.0, 4.0), 1.0);
        assert!((v - cplx(2.4, 3.2)).norm() < 1e-12);
        assert_eq!(soft_threshold(cplx(0.3, 0.4), 1.0), cplx(0.0, 0.0));
    }

    #[test]
    fn support_indicator() {
        assert!(support_to_activity(&[], 5).unwrap().bits().iter().all(|&b| !b));
        let a = support_to_activity(&[0, 4], 5).unwrap();
        assert_eq!(a.bits(), &[true, false, false, false, true]);
        assert_eq!(a.support(), vec![0, 4]);
        assert!(support_to_activity(&[5], 5).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(CsConfig::default().validate(8).is_ok());
        let bad = CsConfig { omp_max_iters: Some(9), ..CsConfig::default() };
        assert!(bad.validate(8).is_err());
        let bad = CsConfig { amp_iters: 0, ..CsConfig::default() };
        assert!(bad.validate(8).is_err());
    }

    fn permuted(
        y: &[Array2<Cplx<f64>>],
        phi: &[Array2<Cplx<f64>>],
        perm: &[usize],
    ) -> Vec<Array2<Cplx<f64>>> {
        let _ = y;
        phi.iter()
            .map(|p| Array2::from_shape_fn(p.dim(), |(i, j)| p[[i, perm[j]]]))
            .collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn detectors_are_permutation_equivariant(seed in 0u64..1000, rot in 1usize..8) {
            let codes = gen_spreading(8, 16, seed).unwrap();
            let powers = PowerProfile::homogeneous(8, 1.0).unwrap();
            let mut rng = frame_rng(seed, 1);
            let ch: ChannelState<f64> = sample_channel(2, 8, 1.0, &mut rng).unwrap().with_noise_var(0.05).unwrap();
            let act = ActivityVector::from_support(&[(seed % 8) as usize], 8).unwrap();
            let sym = sample_symbols(&act, 3, &mut rng);
            let frame = transmit(&codes, ch.clone(), act, sym, &powers, &mut rng).unwrap();
            let phi = build_phi(&ch, &codes).unwrap();
            // perm[j] = original index shown at position j.
            let perm: Vec<usize> = (0..8).map(|j| (j + rot) % 8).collect();
            let phi_p = permuted(&frame.received, &phi, &perm);
            let cfg = CsConfig::default();
            let omp = omp_detect(&frame.received, &phi, &cfg).unwrap();
            let omp_p = omp_detect(&frame.received, &phi_p, &cfg).unwrap();
            let mapped: Vec<usize> = omp_p.selected.iter().map(|&j| perm[j]).collect();
            prop_assert_eq!(mapped, omp.selected);
            let amp = amp_detect(&frame.received, &phi, &powers, &cfg).unwrap();
            let amp_p = amp_detect(&frame.received, &phi_p, &powers, &cfg).unwrap();
            for j in 0..8 {
                let (a, b) = (amp_p.scores[j], amp.scores[perm[j]]);
                prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
            }
        }
    }
}
