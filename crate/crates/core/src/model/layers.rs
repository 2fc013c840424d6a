//! Forward and backward kernels on channel-major `C × H × W` buffers.
//!
//! Horizontal (azimuth) indexing is circular everywhere; vertical indexing
//! is zero-padded for convolutions and edge-clamped for upsampling.

use super::real::{matmul, Mat, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvSpec {
    pub cin: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
}

impl ConvSpec {
    pub fn patch(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    pub fn weight_len(&self) -> usize {
        self.cout * self.patch()
    }

    fn pad_top(&self) -> isize {
        ((self.kh - 1) / 2) as isize
    }

    fn pad_left(&self) -> isize {
        ((self.kw - 1) / 2) as isize
    }
}

/// Unfolds `input` into a `(cin·kh·kw) × (h·w)` patch matrix.
pub(crate) fn im2col<T: Real>(input: &[T], spec: &ConvSpec, h: usize, w: usize) -> Vec<T> {
    let hw = h * w;
    debug_assert_eq!(input.len(), spec.cin * hw);
    let mut cols = vec![T::zero(); spec.patch() * hw];
    let (pt, pl) = (spec.pad_top(), spec.pad_left());
    for ci in 0..spec.cin {
        let plane = &input[ci * hw..(ci + 1) * hw];
        for ky in 0..spec.kh {
            for kx in 0..spec.kw {
                let row = (ci * spec.kh + ky) * spec.kw + kx;
                let dy = ky as isize - pt;
                let shift = (kx as isize - pl).rem_euclid(w as isize) as usize;
                let dst_rows = &mut cols[row * hw..(row + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    let dst = &mut dst_rows[y * w..(y + 1) * w];
                    dst[..w - shift].copy_from_slice(&src[shift..]);
                    dst[w - shift..].copy_from_slice(&src[..shift]);
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: folds patch gradients back onto the input.
pub(crate) fn col2im<T: Real>(cols: &[T], spec: &ConvSpec, h: usize, w: usize) -> Vec<T> {
    let hw = h * w;
    let mut out = vec![T::zero(); spec.cin * hw];
    let (pt, pl) = (spec.pad_top(), spec.pad_left());
    for ci in 0..spec.cin {
        let plane = &mut out[ci * hw..(ci + 1) * hw];
        for ky in 0..spec.kh {
            for kx in 0..spec.kw {
                let row = (ci * spec.kh + ky) * spec.kw + kx;
                let dy = ky as isize - pt;
                let shift = (kx as isize - pl).rem_euclid(w as isize) as usize;
                let src_rows = &cols[row * hw..(row + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    let src = &src_rows[y * w..(y + 1) * w];
                    for (d, s) in dst[shift..].iter_mut().zip(&src[..w - shift]) {
                        *d += *s;
                    }
                    for (d, s) in dst[..shift].iter_mut().zip(&src[w - shift..]) {
                        *d += *s;
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn conv_forward<T: Real>(input: &[T], weight: &[T], bias: &[T], spec: &ConvSpec, h: usize, w: usize) -> Vec<T> {
    let hw = h * w;
    let cols = im2col(input, spec, h, w);
    let mut out = vec![T::zero(); spec.cout * hw];
    matmul(Mat::new(weight, spec.cout, spec.patch()), Mat::new(&cols, spec.patch(), hw), &mut out, false);
    for (row, &b) in out.chunks_exact_mut(hw).zip(bias) {
        for v in row {
            *v += b;
        }
    }
    out
}

/// Accumulates weight and bias gradients; returns the input gradient when asked.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward<T: Real>(
    input: &[T],
    weight: &[T],
    dout: &[T],
    spec: &ConvSpec,
    h: usize,
    w: usize,
    dweight: &mut [T],
    dbias: &mut [T],
    need_input_grad: bool,
) -> Option<Vec<T>> {
    let hw = h * w;
    for (row, db) in dout.chunks_exact(hw).zip(dbias.iter_mut()) {
        let mut acc = T::zero();
        for &v in row {
            acc += v;
        }
        *db += acc;
    }
    let cols = im2col(input, spec, h, w);
    matmul(Mat::new(dout, spec.cout, hw), Mat::new(&cols, spec.patch(), hw).t(), dweight, true);
    if !need_input_grad {
        return None;
    }
    let mut dcols = cols;
    matmul(Mat::new(weight, spec.cout, spec.patch()).t(), Mat::new(dout, spec.cout, hw), &mut dcols, false);
    Some(col2im(&dcols, spec, h, w))
}

pub(crate) fn relu_inplace<T: Real>(x: &mut [T]) {
    for v in x {
        if !(*v > T::zero()) {
            *v = T::zero();
        }
    }
}

/// Zeroes gradient entries whose forward output was clipped.
pub(crate) fn relu_backward<T: Real>(grad: &mut [T], output: &[T]) {
    for (g, &o) in grad.iter_mut().zip(output) {
        if !(o > T::zero()) {
            *g = T::zero();
        }
    }
}

/// 2×2 stride-2 max pooling; returns the pooled maps and the flat in-plane
/// position of each winner (first maximum in row-major window order).
pub(crate) fn maxpool2<T: Real>(input: &[T], c: usize, h: usize, w: usize) -> (Vec<T>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut arg = Vec::with_capacity(c * oh * ow);
    for ci in 0..c {
        let plane = &input[ci * h * w..(ci + 1) * h * w];
        for y in 0..oh {
            for x in 0..ow {
                let base = 2 * y * w + 2 * x;
                let mut best = base;
                for cand in [base + 1, base + w, base + w + 1] {
                    if plane[cand] > plane[best] {
                        best = cand;
                    }
                }
                out.push(plane[best]);
                arg.push(best as u32);
            }
        }
    }
    (out, arg)
}

pub(crate) fn maxpool2_backward<T: Real>(grad: &[T], arg: &[u32], c: usize, h: usize, w: usize) -> Vec<T> {
    let hw = h * w;
    let per = (h / 2) * (w / 2);
    let mut out = vec![T::zero(); c * hw];
    for ci in 0..c {
        for k in 0..per {
            out[ci * hw + arg[ci * per + k] as usize] += grad[ci * per + k];
        }
    }
    out
}

/// Source taps for 2× bilinear upsampling (half-pixel centres).
fn taps(n: usize, wrap: bool) -> Vec<[(usize, f64); 2]> {
    (0..2 * n)
        .map(|o| {
            let i = (o / 2) as isize;
            let other = if o % 2 == 0 { i - 1 } else { i + 1 };
            let other = if wrap {
                other.rem_euclid(n as isize)
            } else {
                other.clamp(0, n as isize - 1)
            } as usize;
            [(i as usize, 0.75), (other, 0.25)]
        })
        .collect()
}

pub(crate) fn upsample2<T: Real>(input: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (2 * h, 2 * w);
    let ty = taps(h, false);
    let tx: Vec<[(usize, T); 2]> = taps(w, true)
        .into_iter()
        .map(|t| [(t[0].0, T::from_f64(t[0].1)), (t[1].0, T::from_f64(t[1].1))])
        .collect();
    let (a, b) = (T::from_f64(0.75), T::from_f64(0.25));
    let mut out = vec![T::zero(); c * oh * ow];
    let mut rowbuf = vec![T::zero(); w];
    for ci in 0..c {
        let plane = &input[ci * h * w..(ci + 1) * h * w];
        let oplane = &mut out[ci * oh * ow..(ci + 1) * oh * ow];
        for (oy, t) in ty.iter().enumerate() {
            let (r0, r1) = (&plane[t[0].0 * w..][..w], &plane[t[1].0 * w..][..w]);
            for x in 0..w {
                rowbuf[x] = a * r0[x] + b * r1[x];
            }
            let orow = &mut oplane[oy * ow..(oy + 1) * ow];
            for (ox, t) in tx.iter().enumerate() {
                orow[ox] = t[0].1 * rowbuf[t[0].0] + t[1].1 * rowbuf[t[1].0];
            }
        }
    }
    out
}

/// Adjoint of [`upsample2`].
pub(crate) fn upsample2_backward<T: Real>(grad: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (2 * h, 2 * w);
    let ty = taps(h, false);
    let tx: Vec<[(usize, T); 2]> = taps(w, true)
        .into_iter()
        .map(|t| [(t[0].0, T::from_f64(t[0].1)), (t[1].0, T::from_f64(t[1].1))])
        .collect();
    let (a, b) = (T::from_f64(0.75), T::from_f64(0.25));
    let mut out = vec![T::zero(); c * h * w];
    let mut rowbuf = vec![T::zero(); w];
    for ci in 0..c {
        let gplane = &grad[ci * oh * ow..(ci + 1) * oh * ow];
        let plane = &mut out[ci * h * w..(ci + 1) * h * w];
        for (oy, t) in ty.iter().enumerate() {
            rowbuf.fill(T::zero());
            for (ox, tt) in tx.iter().enumerate() {
                let g = gplane[oy * ow + ox];
                rowbuf[tt[0].0] += tt[0].1 * g;
                rowbuf[tt[1].0] += tt[1].1 * g;
            }
            for x in 0..w {
                plane[t[0].0 * w + x] += a * rowbuf[x];
                plane[t[1].0 * w + x] += b * rowbuf[x];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    /// Direct convolution with circular azimuth and zero vertical padding.
    fn naive_conv(input: &[f64], weight: &[f64], bias: &[f64], s: &ConvSpec, h: usize, w: usize) -> Vec<f64> {
        let mut out = vec![0.0; s.cout * h * w];
        let (pt, pl) = (((s.kh - 1) / 2) as isize, ((s.kw - 1) / 2) as isize);
        for co in 0..s.cout {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = bias[co];
                    for ci in 0..s.cin {
                        for ky in 0..s.kh {
                            for kx in 0..s.kw {
                                let sy = y as isize + ky as isize - pt;
                                if sy < 0 || sy >= h as isize {
                                    continue;
                                }
                                let sx = (x as isize + kx as isize - pl).rem_euclid(w as isize) as usize;
                                acc += weight[((co * s.cin + ci) * s.kh + ky) * s.kw + kx] * input[(ci * h + sy as usize) * w + sx];
                            }
                        }
                    }
                    out[(co * h + y) * w + x] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for spec in [
            ConvSpec { cin: 3, cout: 4, kh: 3, kw: 3 },
            ConvSpec { cin: 2, cout: 5, kh: 1, kw: 2 },
            ConvSpec { cin: 1, cout: 1, kh: 1, kw: 1 },
        ] {
            let (h, w) = (5, 7);
            let input = rand_vec(&mut rng, spec.cin * h * w);
            let weight = rand_vec(&mut rng, spec.weight_len());
            let bias = rand_vec(&mut rng, spec.cout);
            let got = conv_forward(&input, &weight, &bias, &spec, h, w);
            let want = naive_conv(&input, &weight, &bias, &spec, h, w);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let spec = ConvSpec { cin: 2, cout: 1, kh: 3, kw: 3 };
        let (h, w) = (4, 6);
        let x = rand_vec(&mut rng, spec.cin * h * w);
        let y = rand_vec(&mut rng, spec.patch() * h * w);
        let lhs = dot(&im2col(&x, &spec, h, w), &y);
        let rhs = dot(&x, &col2im(&y, &spec, h, w));
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn upsample_backward_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (h, w) in [(1, 2), (2, 3), (4, 8)] {
            let x = rand_vec(&mut rng, 2 * h * w);
            let y = rand_vec(&mut rng, 2 * 4 * h * w);
            let lhs = dot(&upsample2(&x, 2, h, w), &y);
            let rhs = dot(&x, &upsample2_backward(&y, 2, h, w));
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn upsample_preserves_constants() {
        let x = vec![2.5f64; 3 * 2 * 4];
        assert!(upsample2(&x, 3, 2, 4).iter().all(|&v| (v - 2.5).abs() < 1e-15));
    }

    #[test]
    fn pool_picks_first_maximum() {
        let x = vec![1.0f64, 3.0, 3.0, 0.0, 2.0, 0.0, 3.0, 1.0];
        let (out, arg) = maxpool2(&x, 1, 2, 4);
        assert_eq!(out, vec![3.0, 3.0]);
        assert_eq!(arg, vec![1, 2]);
        let g = maxpool2_backward(&[1.0, 2.0], &arg, 1, 2, 4);
        assert_eq!(g, vec![0.0, 1.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }
}
