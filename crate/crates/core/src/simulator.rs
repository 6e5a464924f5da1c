//! Uplink frame generation: spreading codes, power groups, sporadic activity,
//! BPSK symbols, Rayleigh block fading and additive complex Gaussian noise.
//!
//! Every frame is a pure function of `(scenario, seed, frame index)`. The
//! per-frame generator is a ChaCha8 stream keyed by `seed` whose stream id is
//! the frame index, so frames can be produced in any order or in parallel and
//! still come out bit-identical.

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{cplx, Cplx, Real};

/// Generator for frame `index` of the experiment keyed by `seed`.
pub fn frame_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Derives an independent seed for a named purpose (training data, test frames, ...).
pub fn derive_seed(seed: u64, purpose: &str) -> u64 {
    // FNV-1a over the purpose tag, folded with the base seed through splitmix64.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in purpose.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = seed ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Circularly symmetric complex Gaussian sample with total variance `var`.
pub(crate) fn complex_gaussian<T: Real, R: Rng + ?Sized>(rng: &mut R, var: f64) -> Cplx<T> {
    let s = (var / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    cplx(T::lit(re * s), T::lit(im * s))
}

/// The `Nc x K` code book; column `k` is device `k`'s ±1 signature.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpreadingMatrix {
    codes: Array2<i8>,
}

impl SpreadingMatrix {
    pub fn from_codes(codes: Array2<i8>) -> Result<Self> {
        if codes.nrows() == 0 || codes.ncols() == 0 {
            return Err(Error::param("codes", "spreading matrix must be non-empty"));
        }
        if codes.iter().any(|&c| c != 1 && c != -1) {
            return Err(Error::param("codes", "entries must be -1 or +1"));
        }
        Ok(Self { codes })
    }

    pub fn spreading_factor(&self) -> usize {
        self.codes.nrows()
    }

    pub fn devices(&self) -> usize {
        self.codes.ncols()
    }

    pub fn codes(&self) -> &Array2<i8> {
        &self.codes
    }

    pub fn chip(&self, chip: usize, device: usize) -> i8 {
        self.codes[[chip, device]]
    }

    /// Integer inner product `c_i^T c_j`.
    pub fn cross_correlation(&self, i: usize, j: usize) -> i32 {
        self.codes
            .column(i)
            .iter()
            .zip(self.codes.column(j).iter())
            .map(|(&a, &b)| i32::from(a) * i32::from(b))
            .sum()
    }
}

/// Pseudo-random ±1 codes, i.i.d. uniform, reproducible under `seed`.
pub fn gen_spreading(devices: usize, spreading_factor: usize, seed: u64) -> Result<SpreadingMatrix> {
    if devices == 0 {
        return Err(Error::param("devices", "must be at least 1"));
    }
    if spreading_factor == 0 {
        return Err(Error::param("spreading_factor", "must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let codes = Array2::from_shape_simple_fn((spreading_factor, devices), || {
        if rng.random::<bool>() {
            1i8
        } else {
            -1i8
        }
    });
    Ok(SpreadingMatrix { codes })
}

/// Transmit power groups. Powers are linear; the receiver knows them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerProfile {
    group_powers: Vec<f64>,
    assignment: Vec<usize>,
}

impl PowerProfile {
    pub fn homogeneous(devices: usize, power: f64) -> Result<Self> {
        Self::new(vec![power], vec![0; devices])
    }

    pub fn new(group_powers: Vec<f64>, assignment: Vec<usize>) -> Result<Self> {
        if group_powers.is_empty() {
            return Err(Error::param("group_powers", "at least one group required"));
        }
        if let Some(p) = group_powers.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
            return Err(Error::param("group_powers", format!("power {p} is not positive")));
        }
        if assignment.is_empty() {
            return Err(Error::param("assignment", "at least one device required"));
        }
        if let Some(g) = assignment.iter().find(|&&g| g >= group_powers.len()) {
            return Err(Error::param(
                "assignment",
                format!("group index {g} out of {} groups", group_powers.len()),
            ));
        }
        Ok(Self {
            group_powers,
            assignment,
        })
    }

    /// Consecutive blocks of devices: the first `sizes[0]` devices in group 0, and so on.
    pub fn from_group_sizes(group_powers: Vec<f64>, sizes: &[usize]) -> Result<Self> {
        if sizes.len() != group_powers.len() {
            return Err(Error::param("sizes", "one size per group required"));
        }
        let assignment = sizes
            .iter()
            .enumerate()
            .flat_map(|(g, &n)| std::iter::repeat_n(g, n))
            .collect();
        Self::new(group_powers, assignment)
    }

    pub fn devices(&self) -> usize {
        self.assignment.len()
    }

    pub fn groups(&self) -> usize {
        self.group_powers.len()
    }

    pub fn is_homogeneous(&self) -> bool {
        self.group_powers.len() == 1
    }

    pub fn group_powers(&self) -> &[f64] {
        &self.group_powers
    }

    pub fn group_of(&self, device: usize) -> usize {
        self.assignment[device]
    }

    pub fn power(&self, device: usize) -> f64 {
        self.group_powers[self.assignment[device]]
    }

    /// Normalisation weight `1/P_j` applied to device rows of the decorrelated tensor.
    pub fn normalization(&self, device: usize) -> f64 {
        1.0 / self.power(device)
    }

    pub fn total_power(&self) -> f64 {
        self.assignment.iter().map(|&g| self.group_powers[g]).sum()
    }
}

/// Ground-truth activity of one packet slot.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivityVector {
    bits: Vec<bool>,
    true_rate: f64,
}

impl ActivityVector {
    pub fn new(bits: Vec<bool>, true_rate: f64) -> Self {
        Self { bits, true_rate }
    }

    pub fn from_support(support: &[usize], devices: usize) -> Result<Self> {
        let mut bits = vec![false; devices];
        for &k in support {
            if k >= devices {
                return Err(Error::IndexOutOfRange(format!(
                    "device {k} in support of {devices} devices"
                )));
            }
            bits[k] = true;
        }
        Ok(Self {
            bits,
            true_rate: f64::NAN,
        })
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn is_active(&self, device: usize) -> bool {
        self.bits[device]
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Rate that generated the vector; NaN for estimates.
    pub fn true_rate(&self) -> f64 {
        self.true_rate
    }

    pub fn support(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(k, &a)| a.then_some(k))
            .collect()
    }

    pub fn active_count(&self) -> usize {
        self.bits.iter().filter(|&&a| a).count()
    }
}

/// Draws `P_a ~ U[0, pmax]`, then each device active with probability `P_a`.
pub fn sample_activity<R: Rng + ?Sized>(
    devices: usize,
    pmax: f64,
    rng: &mut R,
) -> Result<ActivityVector> {
    if !(0.0..=1.0).contains(&pmax) {
        return Err(Error::param("pmax", format!("{pmax} outside [0, 1]")));
    }
    let rate = rng.random::<f64>() * pmax;
    sample_activity_at_rate(devices, rate, rng)
}

/// Bernoulli activity at a fixed, known rate.
pub fn sample_activity_at_rate<R: Rng + ?Sized>(
    devices: usize,
    rate: f64,
    rng: &mut R,
) -> Result<ActivityVector> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::param("rate", format!("{rate} outside [0, 1]")));
    }
    let bits = (0..devices).map(|_| rng.random::<f64>() < rate).collect();
    Ok(ActivityVector {
        bits,
        true_rate: rate,
    })
}

/// `K x Ns` symbols over {-1, 0, +1}; rows of inactive devices are zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymbolFrame {
    symbols: Array2<i8>,
}

impl SymbolFrame {
    pub fn from_symbols(symbols: Array2<i8>) -> Result<Self> {
        if symbols.iter().any(|&s| !(-1..=1).contains(&s)) {
            return Err(Error::param("symbols", "entries must be in {-1, 0, +1}"));
        }
        Ok(Self { symbols })
    }

    pub fn symbols(&self) -> &Array2<i8> {
        &self.symbols
    }

    pub fn devices(&self) -> usize {
        self.symbols.nrows()
    }

    pub fn symbols_per_packet(&self) -> usize {
        self.symbols.ncols()
    }

    pub fn get(&self, device: usize, slot: usize) -> i8 {
        self.symbols[[device, slot]]
    }
}

/// Equiprobable BPSK for active devices, zeros for inactive ones.
pub fn sample_symbols<R: Rng + ?Sized>(
    activity: &ActivityVector,
    symbols_per_packet: usize,
    rng: &mut R,
) -> SymbolFrame {
    let k = activity.len();
    let mut symbols = Array2::zeros((k, symbols_per_packet));
    for (dev, mut row) in symbols.axis_iter_mut(Axis(0)).enumerate() {
        if activity.is_active(dev) {
            for s in row.iter_mut() {
                *s = if rng.random::<bool>() { 1 } else { -1 };
            }
        }
    }
    SymbolFrame { symbols }
}

/// Block-fading coefficients `g[m, k]` and the noise variance of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelState<T: Real> {
    gains: Array2<Cplx<T>>,
    noise_var: f64,
}

impl<T: Real> ChannelState<T> {
    pub fn new(gains: Array2<Cplx<T>>, noise_var: f64) -> Result<Self> {
        if !(noise_var >= 0.0 && noise_var.is_finite()) {
            return Err(Error::param("noise_var", format!("{noise_var} is not >= 0")));
        }
        Ok(Self { gains, noise_var })
    }

    pub fn gains(&self) -> &Array2<Cplx<T>> {
        &self.gains
    }

    pub fn gain(&self, antenna: usize, device: usize) -> Cplx<T> {
        self.gains[[antenna, device]]
    }

    pub fn antennas(&self) -> usize {
        self.gains.nrows()
    }

    pub fn devices(&self) -> usize {
        self.gains.ncols()
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn with_noise_var(mut self, noise_var: f64) -> Result<Self> {
        if !(noise_var >= 0.0 && noise_var.is_finite()) {
            return Err(Error::param("noise_var", format!("{noise_var} is not >= 0")));
        }
        self.noise_var = noise_var;
        Ok(self)
    }
}

/// Rayleigh coefficients `CN(0, coeff_var)`. Noise variance starts at zero.
pub fn sample_channel<T: Real, R: Rng + ?Sized>(
    antennas: usize,
    devices: usize,
    coeff_var: f64,
    rng: &mut R,
) -> Result<ChannelState<T>> {
    if antennas == 0 || devices == 0 {
        return Err(Error::param("antennas/devices", "must be at least 1"));
    }
    if !(coeff_var > 0.0 && coeff_var.is_finite()) {
        return Err(Error::param("coeff_var", format!("{coeff_var} is not positive")));
    }
    let gains = Array2::from_shape_simple_fn((antennas, devices), || complex_gaussian(rng, coeff_var));
    Ok(ChannelState {
        gains,
        noise_var: 0.0,
    })
}

/// Equivalent dictionaries `Phi_m = [g_{m,1} c_1, ..., g_{m,K} c_K]`, one per antenna.
pub fn build_phi<T: Real>(
    channel: &ChannelState<T>,
    codes: &SpreadingMatrix,
) -> Result<Vec<Array2<Cplx<T>>>> {
    if channel.devices() != codes.devices() {
        return Err(Error::dims("build_phi", codes.devices(), channel.devices()));
    }
    let nc = codes.spreading_factor();
    let k = codes.devices();
    Ok((0..channel.antennas())
        .map(|m| {
            Array2::from_shape_fn((nc, k), |(i, dev)| {
                channel.gain(m, dev) * T::lit(f64::from(codes.chip(i, dev)))
            })
        })
        .collect())
}

/// One slot's received observations together with the ground truth that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct PacketFrame<T: Real> {
    pub activity: ActivityVector,
    pub symbols: SymbolFrame,
    /// `Y_m`, one `Nc x Ns` matrix per antenna.
    pub received: Vec<Array2<Cplx<T>>>,
    pub channel: ChannelState<T>,
}

impl<T: Real> PacketFrame<T> {
    pub fn antennas(&self) -> usize {
        self.received.len()
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        let (nc, ns) = self
            .received
            .first()
            .map(|y| y.dim())
            .unwrap_or((0, self.symbols.symbols_per_packet()));
        (self.activity.len(), nc, self.received.len(), ns)
    }

    pub fn phi(&self, codes: &SpreadingMatrix) -> Result<Vec<Array2<Cplx<T>>>> {
        build_phi(&self.channel, codes)
    }
}

/// `Y_m = Phi_m diag(sqrt(P)) B + W_m` for every antenna.
pub fn transmit<T: Real, R: Rng + ?Sized>(
    codes: &SpreadingMatrix,
    channel: ChannelState<T>,
    activity: ActivityVector,
    symbols: SymbolFrame,
    powers: &PowerProfile,
    rng: &mut R,
) -> Result<PacketFrame<T>> {
    let k = codes.devices();
    if symbols.devices() != k || activity.len() != k || powers.devices() != k {
        return Err(Error::dims(
            "transmit",
            k,
            (symbols.devices(), activity.len(), powers.devices()),
        ));
    }
    let phi = build_phi(&channel, codes)?;
    let ns = symbols.symbols_per_packet();
    let nc = codes.spreading_factor();
    let amplitude: Vec<T> = (0..k).map(|dev| T::lit(powers.power(dev).sqrt())).collect();
    let scaled = Array2::from_shape_fn((k, ns), |(dev, j)| {
        cplx(amplitude[dev] * T::lit(f64::from(symbols.get(dev, j))), T::zero())
    });
    let noise_var = channel.noise_var();
    let received = phi
        .iter()
        .map(|phi_m| {
            let mut y = phi_m.dot(&scaled);
            if noise_var > 0.0 {
                for v in y.iter_mut() {
                    *v += complex_gaussian::<T, _>(rng, noise_var);
                }
            }
            debug_assert_eq!(y.dim(), (nc, ns));
            y
        })
        .collect();
    Ok(PacketFrame {
        activity,
        symbols,
        received,
        channel,
    })
}

/// Noise variance for SNR `gamma_db` where signal power is `pa_nominal * P_t`.
pub fn snr_to_noise_var(gamma_db: f64, powers: &PowerProfile, pa_nominal: f64) -> Result<f64> {
    if !(pa_nominal > 0.0 && pa_nominal <= 1.0) {
        return Err(Error::param("pa_nominal", format!("{pa_nominal} outside (0, 1]")));
    }
    let signal = pa_nominal * powers.total_power();
    Ok(signal / 10f64.powf(gamma_db / 10.0))
}

/// How the per-packet activity rate is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RateModel {
    /// `P_a ~ U[0, pmax]` per packet.
    Uniform { pmax: f64 },
    /// Fixed, known rate.
    Fixed(f64),
}

/// Everything fixed for one experiment: code book, powers and link parameters.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub codes: SpreadingMatrix,
    pub powers: PowerProfile,
    pub antennas: usize,
    pub symbols_per_packet: usize,
    pub coeff_var: f64,
    pub noise_var: f64,
    pub rate: RateModel,
}

impl Scenario {
    pub fn devices(&self) -> usize {
        self.codes.devices()
    }

    pub fn spreading_factor(&self) -> usize {
        self.codes.spreading_factor()
    }

    pub fn validate(&self) -> Result<()> {
        if self.powers.devices() != self.devices() {
            return Err(Error::dims("scenario powers", self.devices(), self.powers.devices()));
        }
        if self.antennas == 0 || self.symbols_per_packet == 0 {
            return Err(Error::param("antennas/symbols", "must be at least 1"));
        }
        match self.rate {
            RateModel::Uniform { pmax } if !(0.0..=1.0).contains(&pmax) => {
                Err(Error::param("pmax", format!("{pmax} outside [0, 1]")))
            }
            RateModel::Fixed(r) if !(0.0..=1.0).contains(&r) => {
                Err(Error::param("rate", format!("{r} outside [0, 1]")))
            }
            _ => Ok(()),
        }
    }

    /// Frame `index` of the stream keyed by `seed`. Draw order: rate, activity, symbols, channel, noise.
    pub fn generate_frame<T: Real>(&self, seed: u64, index: u64) -> Result<PacketFrame<T>> {
        let mut rng = frame_rng(seed, index);
        let k = self.devices();
        let activity = match self.rate {
            RateModel::Uniform { pmax } => sample_activity(k, pmax, &mut rng)?,
            RateModel::Fixed(rate) => sample_activity_at_rate(k, rate, &mut rng)?,
        };
        let symbols = sample_symbols(&activity, self.symbols_per_packet, &mut rng);
        let channel = sample_channel::<T, _>(self.antennas, k, self.coeff_var, &mut rng)?
            .with_noise_var(self.noise_var)?;
        transmit(&self.codes, channel, activity, symbols, &self.powers, &mut rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spreading_entries_are_signs_and_reproducible() {
        let a = gen_spreading(40, 32, 7).unwrap();
        let b = gen_spreading(40, 32, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.codes().dim(), (32, 40));
        assert!(a.codes().iter().all(|&c| c == 1 || c == -1));
        assert_ne!(a, gen_spreading(40, 32, 8).unwrap());
        let one = gen_spreading(1, 1, 99).unwrap();
        assert!(one.chip(0, 0).abs() == 1);
    }

    #[test]
    fn spreading_rejects_zero_dims() {
        assert!(gen_spreading(0, 4, 1).is_err());
        assert!(gen_spreading(4, 0, 1).is_err());
    }

    #[test]
    fn cross_correlations_concentrate() {
        // Exhaustive over all pairs of many independent code books.
        let mut total = 0.0;
        let mut count = 0.0;
        for seed in 0..200 {
            let s = gen_spreading(4, 16, seed).unwrap();
            for i in 0..4 {
                assert_eq!(s.cross_correlation(i, i), 16);
                for j in (i + 1)..4 {
                    total += f64::from(s.cross_correlation(i, j).abs()) / 16.0;
                    count += 1.0;
                }
            }
        }
        // E|sum of 16 signs| / 16 ~ sqrt(2/(pi*16)) ~ 0.2; far from the orthogonal-vs-identical extremes.
        let mean = total / count;
        assert!(mean < 0.3, "mean normalised |cross-correlation| {mean}");
    }

    #[test]
    fn zero_pmax_gives_silence() {
        let mut rng = frame_rng(1, 0);
        for _ in 0..100 {
            let a = sample_activity(40, 0.0, &mut rng).unwrap();
            assert_eq!(a.active_count(), 0);
        }
        assert!(sample_activity(4, 1.5, &mut rng).is_err());
        assert!(sample_activity(4, -0.1, &mut rng).is_err());
    }

    #[test]
    fn activity_rate_mean_is_half_pmax() {
        let mut rng = frame_rng(3, 0);
        let packets = 100_000;
        let k = 40;
        let counts: Vec<f64> = (0..packets)
            .map(|_| sample_activity(k, 0.1, &mut rng).unwrap().active_count() as f64)
            .collect();
        let mean = counts.iter().sum::<f64>() / packets as f64;
        let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (packets as f64 - 1.0);
        let se = (var / packets as f64).sqrt();
        assert!((mean - 2.0).abs() < 3.0 * se, "mean count {mean} se {se}");
        let rate = mean / k as f64;
        assert!((rate - 0.05).abs() < 3.0 * se / k as f64);
    }

    #[test]
    fn symbols_follow_activity() {
        let mut rng = frame_rng(5, 0);
        let a = ActivityVector::new(vec![true, false, true], 0.5);
        let s = sample_symbols(&a, 1000, &mut rng);
        assert!(s.symbols().row(1).iter().all(|&x| x == 0));
        let row0 = s.symbols().row(0);
        assert!(row0.iter().all(|&x| x == 1 || x == -1));
        let plus = row0.iter().filter(|&&x| x == 1).count() as f64 / 1000.0;
        assert!((plus - 0.5).abs() < 0.06);
    }

    #[test]
    fn channel_variance() {
        let mut rng = frame_rng(11, 0);
        let mut sum = 0.0;
        let mut n = 0usize;
        for _ in 0..250 {
            let ch = sample_channel::<f64, _>(100, 40, 1.0, &mut rng).unwrap();
            sum += ch.gains().iter().map(|g| g.norm_sqr()).sum::<f64>();
            n += ch.gains().len();
        }
        let var = sum / n as f64;
        assert!((0.98..=1.02).contains(&var), "variance {var}");

        // var = 2: |g|^2 ~ Exp(mean 2), std 2.
        let mut acc = Vec::new();
        for _ in 0..2000 {
            let ch = sample_channel::<f64, _>(8, 16, 2.0, &mut rng).unwrap();
            acc.extend(ch.gains().iter().map(|g| g.norm_sqr()));
        }
        let mean = acc.iter().sum::<f64>() / acc.len() as f64;
        let se = 2.0 / (acc.len() as f64).sqrt();
        assert!((mean - 2.0).abs() < 3.0 * se, "mean {mean}");

        assert!(sample_channel::<f64, _>(1, 1, 0.0, &mut rng).is_err());
        assert_eq!(sample_channel::<f32, _>(1, 1, 1.0, &mut rng).unwrap().gains().len(), 1);
    }

    #[test]
    fn phi_columns_are_gain_times_code() {
        let codes = SpreadingMatrix::from_codes(Array2::from_elem((4, 1), 1)).unwrap();
        let ch = ChannelState::new(Array2::from_elem((1, 1), cplx(1.0f64, 0.0)), 0.0).unwrap();
        let phi = build_phi(&ch, &codes).unwrap();
        assert!(phi[0].iter().all(|v| *v == cplx(1.0, 0.0)));

        let codes = gen_spreading(3, 4, 2).unwrap();
        let mut rng = frame_rng(2, 0);
        let ch = sample_channel::<f64, _>(2, 3, 1.0, &mut rng).unwrap();
        let phi = build_phi(&ch, &codes).unwrap();
        for (m, phi_m) in phi.iter().enumerate() {
            for k in 0..3 {
                for i in 0..4 {
                    assert_eq!(phi_m[[i, k]], ch.gain(m, k) * f64::from(codes.chip(i, k)));
                }
                let col: f64 = phi_m.column(k).iter().map(|v| v.norm_sqr()).sum();
                let expect = ch.gain(m, k).norm_sqr() * 4.0;
                assert!((col - expect).abs() <= 1e-12 * expect.max(1.0));
            }
        }
        let wrong = sample_channel::<f64, _>(2, 4, 1.0, &mut rng).unwrap();
        assert!(build_phi(&wrong, &codes).is_err());
    }

    #[test]
    fn noiseless_single_device_is_exact() {
        let codes = gen_spreading(5, 8, 4).unwrap();
        let powers = PowerProfile::new(vec![1.0, 4.0], vec![0, 1, 0, 1, 0]).unwrap();
        let mut rng = frame_rng(4, 1);
        let ch = sample_channel::<f64, _>(1, 5, 1.0, &mut rng).unwrap();
        let mut bits = vec![false; 5];
        bits[3] = true;
        let act = ActivityVector::new(bits, 0.2);
        let sym = sample_symbols(&act, 6, &mut rng);
        let frame = transmit(&codes, ch.clone(), act, sym.clone(), &powers, &mut rng).unwrap();
        let g = ch.gain(0, 3);
        for i in 0..8 {
            for j in 0..6 {
                let want = g * (2.0 * f64::from(codes.chip(i, 3)) * f64::from(sym.get(3, j)));
                let got = frame.received[0][[i, j]];
                assert!((got - want).norm() <= 1e-12, "{got} vs {want}");
            }
        }
    }

    #[test]
    fn matrix_form_equals_summation_form() {
        let (k, nc, m, ns) = (8, 16, 4, 4);
        let codes = gen_spreading(k, nc, 21).unwrap();
        let powers = PowerProfile::from_group_sizes(vec![1.0, 0.5], &[4, 4]).unwrap();
        let mut rng = frame_rng(21, 3);
        let ch = sample_channel::<f64, _>(m, k, 1.0, &mut rng).unwrap();
        let act = sample_activity_at_rate(k, 0.6, &mut rng).unwrap();
        let sym = sample_symbols(&act, ns, &mut rng);
        let frame = transmit(&codes, ch.clone(), act, sym.clone(), &powers, &mut rng).unwrap();
        // Independent summation: Y_m = sum_k g_mk sqrt(P_k) c_k b_k^T, noise-free here.
        for mm in 0..m {
            for i in 0..nc {
                for j in 0..ns {
                    let mut acc = cplx(0.0, 0.0);
                    for dev in 0..k {
                        acc += ch.gain(mm, dev)
                            * (powers.power(dev).sqrt()
                                * f64::from(codes.chip(i, dev))
                                * f64::from(sym.get(dev, j)));
                    }
                    assert!((frame.received[mm][[i, j]] - acc).norm() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn silent_frames_carry_noise_power() {
        let codes = gen_spreading(4, 8, 1).unwrap();
        let powers = PowerProfile::homogeneous(4, 1.0).unwrap();
        let scenario = Scenario {
            codes,
            powers,
            antennas: 2,
            symbols_per_packet: 4,
            coeff_var: 1.0,
            noise_var: 1.0,
            rate: RateModel::Fixed(0.0),
        };
        let mut vals = Vec::new();
        for idx in 0..2000 {
            let f = scenario.generate_frame::<f64>(9, idx).unwrap();
            for y in &f.received {
                vals.extend(y.iter().map(|v| v.norm_sqr()));
            }
        }
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        // |w|^2 ~ Exp(1): std 1.
        assert!((mean - 1.0).abs() < 3.0 / n.sqrt(), "mean {mean}");
    }

    #[test]
    fn frames_are_deterministic_and_order_free() {
        let scenario = Scenario {
            codes: gen_spreading(6, 8, 3).unwrap(),
            powers: PowerProfile::homogeneous(6, 1.0).unwrap(),
            antennas: 2,
            symbols_per_packet: 3,
            coeff_var: 1.0,
            noise_var: 0.3,
            rate: RateModel::Uniform { pmax: 0.5 },
        };
        let a: PacketFrame<f64> = scenario.generate_frame(42, 17).unwrap();
        let _ = scenario.generate_frame::<f64>(42, 16).unwrap();
        let b: PacketFrame<f64> = scenario.generate_frame(42, 17).unwrap();
        assert_eq!(a, b);
        let c: PacketFrame<f64> = scenario.generate_frame(42, 18).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn snr_mapping() {
        let unit = PowerProfile::homogeneous(1, 1.0).unwrap();
        assert!((snr_to_noise_var(0.0, &unit, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((snr_to_noise_var(-10.0, &unit, 1.0).unwrap() - 10.0).abs() < 1e-12);
        let forty = PowerProfile::homogeneous(40, 1.0).unwrap();
        assert!((snr_to_noise_var(10.0, &forty, 0.1).unwrap() - 0.4).abs() < 1e-12);
        assert!(snr_to_noise_var(10.0, &forty, 0.0).is_err());
    }

    #[test]
    fn power_profile_invariants() {
        let p = PowerProfile::from_group_sizes(vec![1.0, 4.0], &[3, 2]).unwrap();
        assert_eq!(p.total_power(), 11.0);
        assert_eq!(p.normalization(4), 0.25);
        assert!(!p.is_homogeneous());
        assert!(PowerProfile::new(vec![0.0], vec![0]).is_err());
        assert!(PowerProfile::new(vec![1.0], vec![1]).is_err());
    }
}
