//! Slice-level forward and adjoint kernels shared by the tape operations.

use crate::scalar::Scalar;

/// Border handling for same-size 2-D filtering.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    Zero,
    /// Mirror about the edge sample without repeating it (`d c b | a b c d`).
    Reflect,
}

/// Mirror an out-of-range index back into `0..n`, edge sample not repeated.
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= n as isize {
        m = period - m;
    }
    m as usize
}

/// Source index along one axis for every (tap, output position) pair.
pub(crate) fn tap_map(n: usize, k: usize, padding: Padding) -> Vec<Option<usize>> {
    let r = (k / 2) as isize;
    let mut map = Vec::with_capacity(k * n);
    for t in 0..k as isize {
        for o in 0..n as isize {
            let s = o + t - r;
            map.push(if s >= 0 && s < n as isize {
                Some(s as usize)
            } else {
                match padding {
                    Padding::Zero => None,
                    Padding::Reflect => Some(reflect_index(s, n)),
                }
            });
        }
    }
    map
}

/// Same-size correlation of one `h x w` plane with a `k x k` kernel, accumulated into `out`.
pub(crate) fn filter_plane<T: Scalar>(
    input: &[T],
    kernel: &[T],
    k: usize,
    h: usize,
    w: usize,
    rows: &[Option<usize>],
    cols: &[Option<usize>],
    out: &mut [T],
) {
    for i in 0..k {
        for j in 0..k {
            let kv = kernel[i * k + j];
            let cmap = &cols[j * w..(j + 1) * w];
            for y in 0..h {
                let Some(sy) = rows[i * h + y] else { continue };
                let src = &input[sy * w..(sy + 1) * w];
                let dst = &mut out[y * w..(y + 1) * w];
                for (d, c) in dst.iter_mut().zip(cmap) {
                    if let Some(sx) = *c {
                        *d += kv * src[sx];
                    }
                }
            }
        }
    }
}

/// Adjoint of [`filter_plane`]: accumulates input and kernel gradients.
#[allow(clippy::too_many_arguments)]
pub(crate) fn filter_plane_adjoint<T: Scalar>(
    input: &[T],
    kernel: &[T],
    grad_out: &[T],
    k: usize,
    h: usize,
    w: usize,
    rows: &[Option<usize>],
    cols: &[Option<usize>],
    grad_in: Option<&mut [T]>,
    grad_kernel: Option<&mut [T]>,
) {
    if let Some(gi) = grad_in {
        for i in 0..k {
            for j in 0..k {
                let kv = kernel[i * k + j];
                let cmap = &cols[j * w..(j + 1) * w];
                for y in 0..h {
                    let Some(sy) = rows[i * h + y] else { continue };
                    let g = &grad_out[y * w..(y + 1) * w];
                    for (x, c) in cmap.iter().enumerate() {
                        if let Some(sx) = *c {
                            gi[sy * w + sx] += kv * g[x];
                        }
                    }
                }
            }
        }
    }
    if let Some(gk) = grad_kernel {
        for i in 0..k {
            for j in 0..k {
                let cmap = &cols[j * w..(j + 1) * w];
                let mut acc = T::zero();
                for y in 0..h {
                    let Some(sy) = rows[i * h + y] else { continue };
                    let g = &grad_out[y * w..(y + 1) * w];
                    let src = &input[sy * w..(sy + 1) * w];
                    for (x, c) in cmap.iter().enumerate() {
                        if let Some(sx) = *c {
                            acc += g[x] * src[sx];
                        }
                    }
                }
                gk[i * k + j] += acc;
            }
        }
    }
}

/// Valid output range `[lo, hi)` along an axis of length `n` for tap `t` with radius `r`
/// under zero padding.
#[inline]
fn valid_range(n: usize, t: usize, r: usize) -> (usize, usize) {
    let lo = r.saturating_sub(t);
    let hi = (n + r).saturating_sub(t).min(n);
    (lo, hi.max(lo))
}

/// Dense multi-channel same-size convolution with zero padding.
///
/// `input` is `[cin, h, w]`, `weight` is `[cout, cin, k, k]`, `out` is `[cout, h, w]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_dense<T: Scalar>(
    input: &[T],
    weight: &[T],
    bias: &[T],
    cin: usize,
    cout: usize,
    k: usize,
    h: usize,
    w: usize,
    out: &mut [T],
) {
    let r = k / 2;
    let hw = h * w;
    for co in 0..cout {
        let dst_plane = &mut out[co * hw..(co + 1) * hw];
        dst_plane.iter_mut().for_each(|v| *v = bias[co]);
        for ci in 0..cin {
            let src_plane = &input[ci * hw..(ci + 1) * hw];
            let wbase = (co * cin + ci) * k * k;
            for i in 0..k {
                let (ylo, yhi) = valid_range(h, i, r);
                for j in 0..k {
                    let wv = weight[wbase + i * k + j];
                    let (xlo, xhi) = valid_range(w, j, r);
                    for y in ylo..yhi {
                        let sy = y + i - r;
                        let src = &src_plane[sy * w + xlo + j - r..sy * w + xhi + j - r];
                        let dst = &mut dst_plane[y * w + xlo..y * w + xhi];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += wv * *s;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`conv_dense`].
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_dense_adjoint<T: Scalar>(
    input: &[T],
    weight: &[T],
    grad_out: &[T],
    cin: usize,
    cout: usize,
    k: usize,
    h: usize,
    w: usize,
    mut grad_in: Option<&mut [T]>,
    mut grad_weight: Option<&mut [T]>,
    mut grad_bias: Option<&mut [T]>,
) {
    let r = k / 2;
    let hw = h * w;
    for co in 0..cout {
        let g_plane = &grad_out[co * hw..(co + 1) * hw];
        if let Some(gb) = grad_bias.as_deref_mut() {
            gb[co] += g_plane.iter().copied().sum::<T>();
        }
        for ci in 0..cin {
            let src_plane = &input[ci * hw..(ci + 1) * hw];
            let wbase = (co * cin + ci) * k * k;
            for i in 0..k {
                let (ylo, yhi) = valid_range(h, i, r);
                for j in 0..k {
                    let (xlo, xhi) = valid_range(w, j, r);
                    let wv = weight[wbase + i * k + j];
                    let mut acc = T::zero();
                    for y in ylo..yhi {
                        let sy = y + i - r;
                        let g = &g_plane[y * w + xlo..y * w + xhi];
                        let src = &src_plane[sy * w + xlo + j - r..sy * w + xhi + j - r];
                        for (gv, s) in g.iter().zip(src) {
                            acc += *gv * *s;
                        }
                        if let Some(gi) = grad_in.as_deref_mut() {
                            let dst = &mut gi[ci * hw + sy * w + xlo + j - r
                                ..ci * hw + sy * w + xhi + j - r];
                            for (d, gv) in dst.iter_mut().zip(g) {
                                *d += wv * *gv;
                            }
                        }
                    }
                    if let Some(gw) = grad_weight.as_deref_mut() {
                        gw[wbase + i * k + j] += acc;
                    }
                }
            }
        }
    }
}
