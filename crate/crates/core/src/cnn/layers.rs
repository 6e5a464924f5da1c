//! Flat-buffer kernels for the layer kinds used by the detector network.
//!
//! Feature maps are stored channel-major as `[c][h][w]`. Convolutions are stride 1
//! with zero padding that preserves `(h, w)`.

use crate::scalar::Real;

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub in_c: usize,
    pub h: usize,
    pub w: usize,
    pub out_c: usize,
    pub kh: usize,
    pub kw: usize,
}

impl ConvGeom {
    fn taps(&self) -> impl Iterator<Item = (usize, usize, isize, isize)> + '_ {
        let (ph, pw) = ((self.kh / 2) as isize, (self.kw / 2) as isize);
        (0..self.kh).flat_map(move |ky| {
            (0..self.kw).map(move |kx| (ky, kx, ky as isize - ph, kx as isize - pw))
        })
    }

    /// Output rows `y` with `0 <= y + d < len`.
    fn valid(d: isize, len: usize) -> std::ops::Range<usize> {
        let lo = (-d).max(0) as usize;
        let hi = (len as isize - d).clamp(0, len as isize) as usize;
        lo..hi.max(lo)
    }

    fn w_index(&self, o: usize, i: usize, ky: usize, kx: usize) -> usize {
        ((o * self.in_c + i) * self.kh + ky) * self.kw + kx
    }
}

pub(crate) fn conv_forward<T: Real>(g: &ConvGeom, input: &[T], weights: &[T], bias: &[T], out: &mut [T]) {
    let plane = g.h * g.w;
    for o in 0..g.out_c {
        let out_plane = &mut out[o * plane..(o + 1) * plane];
        out_plane.fill(bias[o]);
        for i in 0..g.in_c {
            let in_plane = &input[i * plane..(i + 1) * plane];
            for (ky, kx, dy, dx) in g.taps() {
                let wv = weights[g.w_index(o, i, ky, kx)];
                let xs = ConvGeom::valid(dx, g.w);
                for y in ConvGeom::valid(dy, g.h) {
                    let src_row = (y as isize + dy) as usize * g.w;
                    let src = &in_plane[(src_row as isize + xs.start as isize + dx) as usize..][..xs.len()];
                    let dst = &mut out_plane[y * g.w + xs.start..][..xs.len()];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += wv * *s;
                    }
                }
            }
        }
    }
}

/// Accumulates weight and bias gradients and, when requested, the input gradient.
pub(crate) fn conv_backward<T: Real>(
    g: &ConvGeom,
    input: &[T],
    weights: &[T],
    grad_out: &[T],
    grad_w: &mut [T],
    grad_b: &mut [T],
    mut grad_in: Option<&mut [T]>,
) {
    let plane = g.h * g.w;
    for o in 0..g.out_c {
        let go = &grad_out[o * plane..(o + 1) * plane];
        grad_b[o] += go.iter().copied().sum::<T>();
        for i in 0..g.in_c {
            let in_plane = &input[i * plane..(i + 1) * plane];
            for (ky, kx, dy, dx) in g.taps() {
                let widx = g.w_index(o, i, ky, kx);
                let wv = weights[widx];
                let xs = ConvGeom::valid(dx, g.w);
                let mut acc = T::zero();
                for y in ConvGeom::valid(dy, g.h) {
                    let src_start = ((y as isize + dy) as usize * g.w) as isize + xs.start as isize + dx;
                    let src_start = src_start as usize;
                    let gor = &go[y * g.w + xs.start..][..xs.len()];
                    let src = &in_plane[src_start..][..xs.len()];
                    for (a, b) in gor.iter().zip(src) {
                        acc += *a * *b;
                    }
                    if let Some(gi) = grad_in.as_deref_mut() {
                        let dst = &mut gi[i * plane + src_start..][..xs.len()];
                        for (d, a) in dst.iter_mut().zip(gor) {
                            *d += wv * *a;
                        }
                    }
                }
                grad_w[widx] += acc;
            }
        }
    }
}

pub(crate) fn dense_forward<T: Real>(input: &[T], weights: &[T], bias: &[T], out: &mut [T]) {
    let n_in = input.len();
    for (o, y) in out.iter_mut().enumerate() {
        let row = &weights[o * n_in..(o + 1) * n_in];
        *y = bias[o] + row.iter().zip(input).map(|(w, x)| *w * *x).sum::<T>();
    }
}

pub(crate) fn dense_backward<T: Real>(
    input: &[T],
    weights: &[T],
    grad_out: &[T],
    grad_w: &mut [T],
    grad_b: &mut [T],
    grad_in: Option<&mut [T]>,
) {
    let n_in = input.len();
    for (o, &go) in grad_out.iter().enumerate() {
        grad_b[o] += go;
        let gw = &mut grad_w[o * n_in..(o + 1) * n_in];
        for (g, x) in gw.iter_mut().zip(input) {
            *g += go * *x;
        }
    }
    if let Some(gi) = grad_in {
        for (o, &go) in grad_out.iter().enumerate() {
            let row = &weights[o * n_in..(o + 1) * n_in];
            for (g, w) in gi.iter_mut().zip(row) {
                *g += go * *w;
            }
        }
    }
}

pub(crate) fn relu_forward<T: Real>(input: &[T], out: &mut [T]) {
    for (o, x) in out.iter_mut().zip(input) {
        *o = if *x > T::zero() { *x } else { T::zero() };
    }
}

pub(crate) fn relu_backward<T: Real>(input: &[T], grad_out: &[T], grad_in: &mut [T]) {
    for ((g, x), go) in grad_in.iter_mut().zip(input).zip(grad_out) {
        *g += if *x > T::zero() { *go } else { T::zero() };
    }
}

/// Mean over the last axis: `[c][h][w] -> [c][h]`.
pub(crate) fn mean_pool_forward<T: Real>(input: &[T], width: usize, out: &mut [T]) {
    let inv = T::lit(1.0 / width as f64);
    for (o, row) in out.iter_mut().zip(input.chunks_exact(width)) {
        *o = row.iter().copied().sum::<T>() * inv;
    }
}

pub(crate) fn mean_pool_backward<T: Real>(grad_out: &[T], width: usize, grad_in: &mut [T]) {
    let inv = T::lit(1.0 / width as f64);
    for (go, row) in grad_out.iter().zip(grad_in.chunks_exact_mut(width)) {
        for g in row {
            *g += *go * inv;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(g: &ConvGeom, input: &[f64], weights: &[f64], bias: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; g.out_c * g.h * g.w];
        for o in 0..g.out_c {
            for y in 0..g.h {
                for x in 0..g.w {
                    let mut s = bias[o];
                    for i in 0..g.in_c {
                        for ky in 0..g.kh {
                            for kx in 0..g.kw {
                                let yy = y as isize + ky as isize - (g.kh / 2) as isize;
                                let xx = x as isize + kx as isize - (g.kw / 2) as isize;
                                if yy < 0 || xx < 0 || yy >= g.h as isize || xx >= g.w as isize {
                                    continue;
                                }
                                s += weights[g.w_index(o, i, ky, kx)]
                                    * input[(i * g.h + yy as usize) * g.w + xx as usize];
                            }
                        }
                    }
                    out[(o * g.h + y) * g.w + x] = s;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_sum() {
        let g = ConvGeom { in_c: 2, h: 4, w: 5, out_c: 3, kh: 3, kw: 3 };
        let input: Vec<f64> = (0..40).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let weights: Vec<f64> = (0..54).map(|i| ((i * 5) % 13) as f64 / 13.0 - 0.5).collect();
        let bias = [0.1, -0.2, 0.3];
        let mut out = vec![0.0; 60];
        conv_forward(&g, &input, &weights, &bias, &mut out);
        let expect = naive_conv(&g, &input, &weights, &bias);
        for (a, b) in out.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn pool_and_relu() {
        let mut out = [0.0; 2];
        mean_pool_forward(&[1.0, 2.0, 3.0, -1.0, -1.0, 5.0], 3, &mut out);
        assert_eq!(out, [2.0, 1.0]);
        let mut r = [0.0; 3];
        relu_forward(&[-1.0, 0.0, 2.0], &mut r);
        assert_eq!(r, [0.0, 0.0, 2.0]);
    }
}
