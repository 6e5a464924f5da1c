//! Decorrelating receiver front-end and the power-normalised observation tensor.

use ndarray::{Array2, Array3, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::scalar::{Cplx, Real};
use crate::simulator::{PacketFrame, PowerProfile, SpreadingMatrix};

/// `Phi_m^H Y_m`: one `K x Ns` matched-filter output per antenna.
pub fn decorrelate<T: Real>(
    received: &Array2<Cplx<T>>,
    phi: &Array2<Cplx<T>>,
) -> Result<Array2<Cplx<T>>> {
    if received.nrows() != phi.nrows() {
        return Err(Error::dims("decorrelate", phi.nrows(), received.nrows()));
    }
    let phi_h = phi.t().mapv(|v| v.conj());
    Ok(phi_h.dot(received))
}

/// Stack of `diag(1/P_k) Phi_m^H Y_m` over antennas, stored as `(antenna, device, symbol)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecorrelatedTensor<T: Real> {
    data: Array3<Cplx<T>>,
}

impl<T: Real> DecorrelatedTensor<T> {
    pub fn from_array(data: Array3<Cplx<T>>) -> Self {
        Self { data }
    }

    pub fn data(&self) -> &Array3<Cplx<T>> {
        &self.data
    }

    pub fn into_array(self) -> Array3<Cplx<T>> {
        self.data
    }

    /// Converts the scalar type, rounding to the nearest representable value.
    pub fn cast<U: Real>(&self) -> DecorrelatedTensor<U> {
        DecorrelatedTensor {
            data: self.data.mapv(|v| Cplx::new(U::lit(v.re.as_f64()), U::lit(v.im.as_f64()))),
        }
    }

    /// `(M, K, Ns)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    pub fn slice(&self, antenna: usize) -> ArrayView2<'_, Cplx<T>> {
        self.data.index_axis(Axis(0), antenna)
    }

    /// `r_{k,j}^m`: main signal `||g_{m,k} c_k||^2 b_{k,j}` plus multi-user
    /// interference plus filtered noise, after the `1/P_k` normalisation.
    pub fn stat(&self, antenna: usize, device: usize, slot: usize) -> Result<Cplx<T>> {
        self.data
            .get([antenna, device, slot])
            .copied()
            .ok_or_else(|| {
                Error::IndexOutOfRange(format!(
                    "(m={antenna}, k={device}, j={slot}) in tensor of shape {:?}",
                    self.dims()
                ))
            })
    }

    /// Undoes the power normalisation, returning the raw stack of `Phi_m^H Y_m`.
    pub fn denormalized(&self, powers: &PowerProfile) -> Result<Array3<Cplx<T>>> {
        let (_, k, _) = self.dims();
        if powers.devices() != k {
            return Err(Error::dims("denormalized", k, powers.devices()));
        }
        let mut out = self.data.clone();
        for mut slice in out.axis_iter_mut(Axis(0)) {
            for (dev, mut row) in slice.axis_iter_mut(Axis(0)).enumerate() {
                let p = T::lit(powers.power(dev));
                row.mapv_inplace(|v| v * p);
            }
        }
        Ok(out)
    }
}

/// Applies `diag(1/P_k)` to each antenna slice and stacks them.
pub fn stack_tensor<T: Real>(
    slices: &[Array2<Cplx<T>>],
    powers: &PowerProfile,
) -> Result<DecorrelatedTensor<T>> {
    let first = slices
        .first()
        .ok_or_else(|| Error::param("slices", "at least one antenna slice required"))?;
    let (k, ns) = first.dim();
    if powers.devices() != k {
        return Err(Error::dims("stack_tensor powers", k, powers.devices()));
    }
    if let Some(bad) = slices.iter().find(|s| s.dim() != (k, ns)) {
        return Err(Error::dims("stack_tensor slice", (k, ns), bad.dim()));
    }
    let norm: Vec<T> = (0..k).map(|dev| T::lit(powers.normalization(dev))).collect();
    let data = Array3::from_shape_fn((slices.len(), k, ns), |(m, dev, j)| {
        slices[m][[dev, j]] * norm[dev]
    });
    Ok(DecorrelatedTensor { data })
}

/// Decorrelates every antenna of `frame` with perfectly known CSI and stacks the result.
pub fn observe<T: Real>(
    frame: &PacketFrame<T>,
    codes: &SpreadingMatrix,
    powers: &PowerProfile,
) -> Result<DecorrelatedTensor<T>> {
    let phi = frame.phi(codes)?;
    observe_with_phi(frame, &phi, powers)
}

pub fn observe_with_phi<T: Real>(
    frame: &PacketFrame<T>,
    phi: &[Array2<Cplx<T>>],
    powers: &PowerProfile,
) -> Result<DecorrelatedTensor<T>> {
    if phi.len() != frame.received.len() {
        return Err(Error::dims("observe", frame.received.len(), phi.len()));
    }
    let slices = frame
        .received
        .iter()
        .zip(phi)
        .map(|(y, p)| decorrelate(y, p))
        .collect::<Result<Vec<_>>>()?;
    stack_tensor(&slices, powers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::cplx;
    use crate::simulator::{
        build_phi, frame_rng, gen_spreading, sample_activity_at_rate, sample_channel,
        sample_symbols, transmit, ActivityVector, ChannelState,
    };

    /// Walsh-Hadamard codes of length 8: exactly orthogonal columns.
    fn hadamard8(k: usize) -> SpreadingMatrix {
        let codes = Array2::from_shape_fn((8, k), |(i, j)| {
            if (i & j).count_ones() % 2 == 0 {
                1i8
            } else {
                -1i8
            }
        });
        SpreadingMatrix::from_codes(codes).unwrap()
    }

    #[test]
    fn orthogonal_noiseless_rows_are_scaled_symbols() {
        let codes = hadamard8(4);
        let powers = PowerProfile::homogeneous(4, 1.0).unwrap();
        let mut rng = frame_rng(1, 0);
        let ch = sample_channel::<f64, _>(1, 4, 1.0, &mut rng).unwrap();
        let act = ActivityVector::new(vec![true, true, false, true], 0.5);
        let sym = sample_symbols(&act, 5, &mut rng);
        let frame = transmit(&codes, ch.clone(), act, sym.clone(), &powers, &mut rng).unwrap();
        let phi = build_phi(&ch, &codes).unwrap();
        let ybar = decorrelate(&frame.received[0], &phi[0]).unwrap();
        for k in 0..4 {
            for j in 0..5 {
                let want = ch.gain(0, k).norm_sqr() * 8.0 * f64::from(sym.get(k, j));
                assert!((ybar[[k, j]] - cplx(want, 0.0)).norm() < 1e-12);
            }
        }
        let tensor = stack_tensor(&[ybar], &powers).unwrap();
        assert!(tensor.stat(0, 2, 3).unwrap().norm() < 1e-12);
        assert!(tensor.stat(1, 0, 0).is_err());
        assert!(tensor.stat(0, 4, 0).is_err());
        assert!(tensor.stat(0, 0, 5).is_err());
    }

    #[test]
    fn matches_expanded_row_sum() {
        let (k, nc, ns) = (6, 8, 3);
        let codes = gen_spreading(k, nc, 5).unwrap();
        let powers = PowerProfile::homogeneous(k, 1.0).unwrap();
        let mut rng = frame_rng(5, 0);
        let ch = sample_channel::<f64, _>(1, k, 1.0, &mut rng)
            .unwrap()
            .with_noise_var(0.5)
            .unwrap();
        let act = sample_activity_at_rate(k, 0.7, &mut rng).unwrap();
        let sym = sample_symbols(&act, ns, &mut rng);
        let frame = transmit(&codes, ch.clone(), act, sym.clone(), &powers, &mut rng).unwrap();
        let phi = build_phi(&ch, &codes).unwrap();
        let ybar = decorrelate(&frame.received[0], &phi[0]).unwrap();
        // Noise component recovered as W = Y - Phi B.
        let noise = Array2::from_shape_fn((nc, ns), |(i, j)| {
            let mut clean = cplx(0.0, 0.0);
            for d in 0..k {
                clean += ch.gain(0, d) * f64::from(codes.chip(i, d)) * f64::from(sym.get(d, j));
            }
            frame.received[0][[i, j]] - clean
        });
        for row in 0..k {
            for j in 0..ns {
                let g_conj = ch.gain(0, row).conj();
                let mut want = cplx(0.0, 0.0);
                for d in 0..k {
                    let cc = f64::from(codes.cross_correlation(row, d));
                    want += g_conj * ch.gain(0, d) * cc * f64::from(sym.get(d, j));
                }
                for i in 0..nc {
                    want += g_conj * f64::from(codes.chip(i, row)) * noise[[i, j]];
                }
                assert!((ybar[[row, j]] - want).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn three_term_decomposition_of_symbol_statistic() {
        let (k, nc, ns, m) = (5, 8, 2, 2);
        let codes = gen_spreading(k, nc, 8).unwrap();
        let powers = PowerProfile::homogeneous(k, 1.0).unwrap();
        let mut rng = frame_rng(8, 0);
        let ch = sample_channel::<f64, _>(m, k, 1.0, &mut rng)
            .unwrap()
            .with_noise_var(0.2)
            .unwrap();
        let act = ActivityVector::new(vec![true, true, false, true, true], 0.8);
        let sym = sample_symbols(&act, ns, &mut rng);
        let frame = transmit(&codes, ch.clone(), act, sym.clone(), &powers, &mut rng).unwrap();
        let tensor = observe(&frame, &codes, &powers).unwrap();
        for mm in 0..m {
            for dev in 0..k {
                for j in 0..ns {
                    let g = ch.gain(mm, dev);
                    let signal = g.norm_sqr() * nc as f64 * f64::from(sym.get(dev, j));
                    let mut interference = cplx(0.0, 0.0);
                    for i in (0..k).filter(|&i| i != dev) {
                        interference += g.conj()
                            * ch.gain(mm, i)
                            * f64::from(codes.cross_correlation(dev, i))
                            * f64::from(sym.get(i, j));
                    }
                    let mut noise = cplx(0.0, 0.0);
                    for i in 0..nc {
                        let mut clean = cplx(0.0, 0.0);
                        for d in 0..k {
                            clean += ch.gain(mm, d)
                                * f64::from(codes.chip(i, d))
                                * f64::from(sym.get(d, j));
                        }
                        noise += g.conj()
                            * f64::from(codes.chip(i, dev))
                            * (frame.received[mm][[i, j]] - clean);
                    }
                    let want = cplx(signal, 0.0) + interference + noise;
                    assert!((tensor.stat(mm, dev, j).unwrap() - want).norm() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn zero_observation_and_shape_errors() {
        let codes = gen_spreading(3, 4, 1).unwrap();
        let ch = ChannelState::new(Array2::from_elem((1, 3), cplx(0.3, -0.2)), 0.0).unwrap();
        let phi = build_phi(&ch, &codes).unwrap();
        let y = Array2::from_elem((4, 2), cplx(0.0, 0.0));
        let ybar = decorrelate(&y, &phi[0]).unwrap();
        assert_eq!(ybar.dim(), (3, 2));
        assert!(ybar.iter().all(|v| *v == cplx(0.0, 0.0)));
        let bad = Array2::from_elem((5, 2), cplx(0.0, 0.0));
        assert!(decorrelate(&bad, &phi[0]).is_err());
        let powers = PowerProfile::homogeneous(3, 1.0).unwrap();
        let other = Array2::from_elem((3, 3), cplx(0.0, 0.0));
        assert!(stack_tensor(&[ybar.clone(), other], &powers).is_err());
        assert!(stack_tensor::<f64>(&[], &powers).is_err());
    }

    #[test]
    fn normalization_scales_rows_and_inverts() {
        let powers = PowerProfile::new(vec![1.0, 4.0], vec![0, 1, 0]).unwrap();
        let s0 = Array2::from_shape_fn((3, 2), |(k, j)| cplx(k as f64 + 1.0, j as f64 - 0.5));
        let s1 = s0.mapv(|v| v * 2.0);
        let t = stack_tensor(&[s0.clone(), s1.clone()], &powers).unwrap();
        assert_eq!(t.dims(), (2, 3, 2));
        for (m, s) in [s0.clone(), s1.clone()].iter().enumerate() {
            for k in 0..3 {
                for j in 0..2 {
                    let w = if k == 1 { 0.25 } else { 1.0 };
                    assert_eq!(t.stat(m, k, j).unwrap(), s[[k, j]] * w);
                }
            }
        }
        let raw = t.denormalized(&powers).unwrap();
        assert_eq!(raw.index_axis(Axis(0), 0), s0);
        assert_eq!(raw.index_axis(Axis(0), 1), s1);

        let unit = PowerProfile::homogeneous(3, 1.0).unwrap();
        let single = stack_tensor(&[s0.clone()], &unit).unwrap();
        assert_eq!(single.dims(), (1, 3, 2));
        assert_eq!(single.slice(0), s0);
    }

    #[test]
    fn decorrelation_is_linear() {
        let codes = gen_spreading(4, 6, 2).unwrap();
        let mut rng = frame_rng(2, 2);
        let ch = sample_channel::<f64, _>(1, 4, 1.0, &mut rng).unwrap();
        let phi = build_phi(&ch, &codes).unwrap();
        let y1 = sample_channel::<f64, _>(6, 3, 1.0, &mut rng).unwrap().gains().clone();
        let y2 = sample_channel::<f64, _>(6, 3, 1.0, &mut rng).unwrap().gains().clone();
        let (a, b) = (cplx(0.7, -1.1), cplx(-2.0, 0.3));
        let combo = y1.mapv(|v| v * a) + y2.mapv(|v| v * b);
        let lhs = decorrelate(&combo, &phi[0]).unwrap();
        let rhs = decorrelate(&y1, &phi[0]).unwrap().mapv(|v| v * a)
            + decorrelate(&y2, &phi[0]).unwrap().mapv(|v| v * b);
        for (l, r) in lhs.iter().zip(rhs.iter()) {
            assert!((l - r).norm() < 1e-12);
        }
    }
}
