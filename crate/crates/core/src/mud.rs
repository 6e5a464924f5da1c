//! Multi-user detection of the BPSK payload on a given support.

use ndarray::{Array2, Axis};

use crate::error::{Error, Result};
use crate::linalg::{adjoint_mul, gram, solve_psd};
use crate::metrics::PacketOutcome;
use crate::scalar::{Cplx, Real};
use crate::simulator::{ActivityVector, PacketFrame, PowerProfile};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinearFilter {
    /// `(A^H A + sigma_w^2 diag(1/P))^{-1} A^H y`.
    Mmse,
    /// `(A^H A)^{-1} A^H y`.
    ZeroForcing,
    /// `diag(P) A^H y / ||a_k||^2`, scaled so a lone device is unbiased.
    MatchedFilter,
}

#[derive(Debug, Clone)]
pub struct MudOutput<T: Real> {
    /// Devices the rows refer to, ascending.
    pub support: Vec<usize>,
    /// Soft estimates of `sqrt(P_k) b_{k,j}`, `|S| x Ns`.
    pub soft: Array2<Cplx<T>>,
    /// `sign(Re)` with ties resolved to `+1`.
    pub bits: Array2<i8>,
    /// The system matrix was singular and a ridge fallback was used.
    pub regularized: bool,
}

impl<T: Real> MudOutput<T> {
    pub fn bits_of(&self, device: usize) -> Option<Vec<i8>> {
        let row = self.support.iter().position(|&d| d == device)?;
        Some(self.bits.row(row).to_vec())
    }
}

/// Stacks `Phi_m[:, S]` over antennas into an `(M Nc) x |S|` matrix and the
/// observations into `(M Nc) x Ns`.
fn stack<T: Real>(
    received: &[Array2<Cplx<T>>],
    phi: &[Array2<Cplx<T>>],
    support: &[usize],
) -> Result<(Array2<Cplx<T>>, Array2<Cplx<T>>)> {
    if received.is_empty() || received.len() != phi.len() {
        return Err(Error::dims("mud antennas", phi.len(), received.len()));
    }
    let nc = phi[0].nrows();
    let k = phi[0].ncols();
    let ns = received[0].ncols();
    if let Some(&bad) = support.iter().find(|&&d| d >= k) {
        return Err(Error::IndexOutOfRange(format!("device {bad} of {k}")));
    }
    for (y, p) in received.iter().zip(phi) {
        if p.dim() != (nc, k) || y.dim() != (nc, ns) {
            return Err(Error::dims("mud system", (nc, ns), y.dim()));
        }
    }
    let rows = nc * phi.len();
    let a = Array2::from_shape_fn((rows, support.len()), |(r, c)| phi[r / nc][[r % nc, support[c]]]);
    let y = Array2::from_shape_fn((rows, ns), |(r, j)| received[r / nc][[r % nc, j]]);
    Ok((a, y))
}

/// Linear multi-user detection of the devices in `support`, jointly over all antennas.
pub fn linear_detect<T: Real>(
    received: &[Array2<Cplx<T>>],
    phi: &[Array2<Cplx<T>>],
    support: &[usize],
    powers: &PowerProfile,
    noise_var: f64,
    filter: LinearFilter,
) -> Result<MudOutput<T>> {
    let mut support = support.to_vec();
    support.sort_unstable();
    support.dedup();
    let (a, y) = stack(received, phi, &support)?;
    if powers.devices() != phi[0].ncols() {
        return Err(Error::dims("mud powers", phi[0].ncols(), powers.devices()));
    }
    if !(noise_var >= 0.0) {
        return Err(Error::param("noise_var", "must be non-negative"));
    }
    let ns = y.ncols();
    let rhs = adjoint_mul(a.view(), y.view());
    let (soft, regularized) = match filter {
        LinearFilter::Mmse | LinearFilter::ZeroForcing => {
            let mut h = gram(a.view());
            if filter == LinearFilter::Mmse {
                for (i, &dev) in support.iter().enumerate() {
                    h[[i, i]].re += T::lit(noise_var / powers.power(dev));
                }
            }
            let sol = solve_psd(&h, &rhs);
            (sol.x, sol.regularized)
        }
        LinearFilter::MatchedFilter => {
            let mut x = rhs;
            for (i, mut row) in x.axis_iter_mut(Axis(0)).enumerate() {
                let e: f64 = a.column(i).iter().map(|v| v.norm_sqr().as_f64()).sum();
                let scale = T::lit(if e > 0.0 { 1.0 / e } else { 0.0 });
                row.mapv_inplace(|v| v * scale);
            }
            (x, false)
        }
    };
    debug_assert_eq!(soft.ncols(), ns);
    let bits = soft.mapv(|v| if v.re < T::zero() { -1 } else { 1 });
    Ok(MudOutput {
        support,
        soft,
        bits,
        regularized,
    })
}

/// MMSE detection on `support` with the noise variance and powers known at the receiver.
/// A zero noise variance reduces to the (pseudo-inverse) least-squares solution.
pub fn mmse_detect<T: Real>(
    received: &[Array2<Cplx<T>>],
    phi: &[Array2<Cplx<T>>],
    support: &[usize],
    powers: &PowerProfile,
    noise_var: f64,
) -> Result<MudOutput<T>> {
    linear_detect(received, phi, support, powers, noise_var, LinearFilter::Mmse)
}

/// Runs MMSE detection on the estimated support and pairs each device's true and
/// decoded payloads for BER accounting. Devices neither active nor detected are omitted.
pub fn ber_with_ad<T: Real>(
    frame: &PacketFrame<T>,
    phi: &[Array2<Cplx<T>>],
    estimate: &ActivityVector,
    powers: &PowerProfile,
) -> Result<Vec<PacketOutcome>> {
    let k = frame.activity.len();
    if estimate.len() != k {
        return Err(Error::dims("ber_with_ad activity", k, estimate.len()));
    }
    let support = estimate.support();
    let decoded = mmse_detect(&frame.received, phi, &support, powers, frame.channel.noise_var())?;
    let symbols = frame.symbols.symbols();
    Ok((0..k)
        .filter(|&d| frame.activity.is_active(d) || estimate.is_active(d))
        .map(|d| PacketOutcome {
            truth: frame.activity.is_active(d).then(|| symbols.row(d).to_vec()),
            estimate: decoded.bits_of(d),
        })
        .collect())
}
