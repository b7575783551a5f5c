//! Bayer demosaicing: bilinear, Malvar (2004) gradient-corrected, and Menon
//! (2007) directional interpolation with a decision step.

use crate::isp_static::constants::{flatten, K_G, K_RB};
use crate::isp_static::filters::{convolve, correlate, filter_1d};
use crate::raw_io::{site_masks, CfaLayout, Channel, RgbImage, Stage};
use crate::scalar::Scalar;
use crate::tensorcore::Padding;

fn sparse<T: Scalar>(plane: &[T], mask: &[bool]) -> Vec<T> {
    plane
        .iter()
        .zip(mask)
        .map(|(&v, &m)| if m { v } else { T::zero() })
        .collect()
}

fn assemble<T: Scalar>(h: usize, w: usize, r: Vec<T>, g: Vec<T>, b: Vec<T>) -> RgbImage<T> {
    let mut data = r;
    data.extend(g);
    data.extend(b);
    RgbImage::new(h, w, data, Stage::Demosaic).expect("three planes of h*w")
}

/// Sparse-plane bilinear interpolation: cross kernel on green, full kernel on red/blue.
pub fn bilinear<T: Scalar>(plane: &[T], h: usize, w: usize, cfa: CfaLayout) -> RgbImage<T> {
    let [rm, gm, bm] = site_masks(cfa, h, w);
    let (kg, krb) = (flatten(&K_G), flatten(&K_RB));
    let r = correlate(&sparse(plane, &rm), h, w, &krb, 3, Padding::Reflect);
    let g = correlate(&sparse(plane, &gm), h, w, &kg, 3, Padding::Reflect);
    let b = correlate(&sparse(plane, &bm), h, w, &krb, 3, Padding::Reflect);
    assemble(h, w, r, g, b)
}

/// Row/column parity that carries red (resp. blue) samples.
struct Parity {
    red_row: usize,
    red_col: usize,
    blue_row: usize,
    blue_col: usize,
}

fn parity(cfa: CfaLayout) -> Parity {
    let mut p = Parity {
        red_row: 0,
        red_col: 0,
        blue_row: 0,
        blue_col: 0,
    };
    for r in 0..2 {
        for c in 0..2 {
            match cfa.channel_at(r, c) {
                Channel::R => (p.red_row, p.red_col) = (r, c),
                Channel::B => (p.blue_row, p.blue_col) = (r, c),
                Channel::G => {}
            }
        }
    }
    p
}

const MAL_GR_GB: [[f64; 5]; 5] = [
    [0.0, 0.0, -1.0, 0.0, 0.0],
    [0.0, 0.0, 2.0, 0.0, 0.0],
    [-1.0, 2.0, 4.0, 2.0, -1.0],
    [0.0, 0.0, 2.0, 0.0, 0.0],
    [0.0, 0.0, -1.0, 0.0, 0.0],
];
const MAL_RG_RB_BG_BR: [[f64; 5]; 5] = [
    [0.0, 0.0, 0.5, 0.0, 0.0],
    [0.0, -1.0, 0.0, -1.0, 0.0],
    [-1.0, 4.0, 5.0, 4.0, -1.0],
    [0.0, -1.0, 0.0, -1.0, 0.0],
    [0.0, 0.0, 0.5, 0.0, 0.0],
];
const MAL_RB_BB_BR_RR: [[f64; 5]; 5] = [
    [0.0, 0.0, -1.5, 0.0, 0.0],
    [0.0, 2.0, 0.0, 2.0, 0.0],
    [-1.5, 0.0, 6.0, 0.0, -1.5],
    [0.0, 2.0, 0.0, 2.0, 0.0],
    [0.0, 0.0, -1.5, 0.0, 0.0],
];

fn scaled_flat(k: &[[f64; 5]; 5], transpose: bool) -> Vec<f64> {
    let mut out = Vec::with_capacity(25);
    for i in 0..5 {
        for j in 0..5 {
            out.push(if transpose { k[j][i] } else { k[i][j] } / 8.0);
        }
    }
    out
}

/// Malvar–He–Cutler gradient-corrected linear interpolation (5×5 kernels).
pub fn malvar2004<T: Scalar>(plane: &[T], h: usize, w: usize, cfa: CfaLayout) -> RgbImage<T> {
    let [rm, gm, bm] = site_masks(cfa, h, w);
    let p = parity(cfa);
    let mut r = sparse(plane, &rm);
    let mut g = sparse(plane, &gm);
    let mut b = sparse(plane, &bm);

    let conv = |k: &[[f64; 5]; 5], t: bool| convolve(plane, h, w, &scaled_flat(k, t), 5, Padding::Reflect);
    let g_at_rb = conv(&MAL_GR_GB, false);
    let rbg_rbbr = conv(&MAL_RG_RB_BG_BR, false);
    let rbg_brrb = conv(&MAL_RG_RB_BG_BR, true);
    let rbgr_bbrr = conv(&MAL_RB_BB_BR_RR, false);

    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let (red_row, blue_row) = (y % 2 == p.red_row, y % 2 == p.blue_row);
            let (red_col, blue_col) = (x % 2 == p.red_col, x % 2 == p.blue_col);
            if rm[i] || bm[i] {
                g[i] = g_at_rb[i];
            }
            if red_row && blue_col {
                r[i] = rbg_rbbr[i];
                b[i] = rbg_brrb[i];
            }
            if blue_row && red_col {
                r[i] = rbg_brrb[i];
                b[i] = rbg_rbbr[i];
            }
            if blue_row && blue_col {
                r[i] = rbgr_bbrr[i];
            }
            if red_row && red_col {
                b[i] = rbgr_bbrr[i];
            }
        }
    }
    assemble(h, w, r, g, b)
}

/// Menon et al. directional filtering with a posteriori decision (no refining step).
pub fn menon2007<T: Scalar>(plane: &[T], h: usize, w: usize, cfa: CfaLayout) -> RgbImage<T> {
    let [rm, gm, bm] = site_masks(cfa, h, w);
    let p = parity(cfa);
    let h0 = [0.0, 0.5, 0.0, 0.5, 0.0];
    let h1 = [-0.25, 0.0, 0.5, 0.0, -0.25];
    let r0 = sparse(plane, &rm);
    let g0 = sparse(plane, &gm);
    let b0 = sparse(plane, &bm);

    let add = |a: Vec<T>, b: Vec<T>| a.into_iter().zip(b).map(|(x, y)| x + y).collect::<Vec<T>>();
    let est_h = add(filter_1d(plane, h, w, &h0, true), filter_1d(plane, h, w, &h1, true));
    let est_v = add(filter_1d(plane, h, w, &h0, false), filter_1d(plane, h, w, &h1, false));
    let pick = |est: &[T]| -> Vec<T> { (0..h * w).map(|i| if gm[i] { g0[i] } else { est[i] }).collect() };
    let g_h = pick(&est_h);
    let g_v = pick(&est_v);

    let chroma = |gd: &[T]| -> Vec<T> {
        (0..h * w)
            .map(|i| {
                if rm[i] {
                    r0[i] - gd[i]
                } else if bm[i] {
                    b0[i] - gd[i]
                } else {
                    T::zero()
                }
            })
            .collect()
    };
    let c_h = chroma(&g_h);
    let c_v = chroma(&g_v);

    // Gradient of the chroma difference two samples ahead, mirrored at the border.
    let mut d_h = vec![T::zero(); h * w];
    let mut d_v = vec![T::zero(); h * w];
    let mirror = crate::tensorcore::kernels::reflect_index;
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            d_h[i] = (c_h[i] - c_h[y * w + mirror(x as isize + 2, w)]).abs();
            d_v[i] = (c_v[i] - c_v[mirror(y as isize + 2, h) * w + x]).abs();
        }
    }
    let k: [[f64; 5]; 5] = [
        [0.0, 0.0, 1.0, 0.0, 1.0],
        [0.0, 0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 3.0, 0.0, 3.0],
        [0.0, 0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0, 0.0, 1.0],
    ];
    let kf = flatten(&k);
    let kt: Vec<f64> = (0..25).map(|n| k[n % 5][n / 5]).collect();
    let sd_h = convolve(&d_h, h, w, &kf, 5, Padding::Zero);
    let sd_v = convolve(&d_v, h, w, &kt, 5, Padding::Zero);
    let horizontal: Vec<bool> = (0..h * w).map(|i| sd_v[i] >= sd_h[i]).collect();
    let g: Vec<T> = (0..h * w).map(|i| if horizontal[i] { g_h[i] } else { g_v[i] }).collect();

    let kb = [0.5, 0.0, 0.5];
    let hor = |v: &[T]| filter_1d(v, h, w, &kb, true);
    let ver = |v: &[T]| filter_1d(v, h, w, &kb, false);
    let (r_h, r_v, b_h, b_v, g_hf, g_vf) = (hor(&r0), ver(&r0), hor(&b0), ver(&b0), hor(&g), ver(&g));

    let mut r = r0.clone();
    let mut b = b0.clone();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let (red_row, blue_row) = (y % 2 == p.red_row, y % 2 == p.blue_row);
            if gm[i] {
                if red_row {
                    r[i] = g[i] + r_h[i] - g_hf[i];
                    b[i] = g[i] + b_v[i] - g_vf[i];
                }
                if blue_row {
                    r[i] = g[i] + r_v[i] - g_vf[i];
                    b[i] = g[i] + b_h[i] - g_hf[i];
                }
            }
        }
    }
    // Red at blue sites and blue at red sites from the now-complete neighbours.
    let (r_hh, r_vv, b_hh, b_vv) = (hor(&r), ver(&r), hor(&b), ver(&b));
    for i in 0..h * w {
        if bm[i] {
            r[i] = if horizontal[i] {
                b0[i] + r_hh[i] - b_hh[i]
            } else {
                b0[i] + r_vv[i] - b_vv[i]
            };
        }
        if rm[i] {
            b[i] = if horizontal[i] {
                r0[i] + b_hh[i] - r_hh[i]
            } else {
                r0[i] + b_vv[i] - r_vv[i]
            };
        }
    }
    assemble(h, w, r, g, b)
}
