//! Fixed colour-space matrices and filter kernels of the reference pipeline.

/// RGB → YUV conversion matrix.
pub const M_RGB_2_YUV: [[f64; 3]; 3] = [
    [0.299, 0.587, 0.114],
    [-0.14714119, -0.28886916, 0.43601035],
    [0.61497538, -0.51496512, -0.10001026],
];

/// YUV → RGB conversion matrix.
pub const M_YUV_2_RGB: [[f64; 3]; 3] = [
    [1.0000000000e+00, -4.1827794561e-09, 1.1398830414e+00],
    [1.0000000000e+00, -3.9464232326e-01, -5.8062183857e-01],
    [1.0000000000e+00, 2.0320618153e+00, -1.2232658220e-09],
];

/// Cross kernel interpolating the half-density green plane.
pub const K_G: [[f64; 3]; 3] = [[0.0, 0.25, 0.0], [0.25, 1.0, 0.25], [0.0, 0.25, 0.0]];

/// Full kernel interpolating the quarter-density red and blue planes.
pub const K_RB: [[f64; 3]; 3] = [[0.25, 0.5, 0.25], [0.5, 1.0, 0.5], [0.25, 0.5, 0.25]];

/// Sharpening filter kernel.
pub const K_SHARP: [[f64; 3]; 3] = [[0.0, -1.0, 0.0], [-1.0, 5.0, -1.0], [0.0, -1.0, 0.0]];

/// Gaussian denoising kernel (σ = 0.5), values as tabulated (sum ≈ 0.99997).
pub const K_BLUR: [[f64; 5]; 5] = [
    [6.9625e-08, 2.8089e-05, 2.0755e-04, 2.8089e-05, 6.9625e-08],
    [2.8089e-05, 1.1332e-02, 8.3731e-02, 1.1332e-02, 2.8089e-05],
    [2.0755e-04, 8.3731e-02, 6.1869e-01, 8.3731e-02, 2.0755e-04],
    [2.8089e-05, 1.1332e-02, 8.3731e-02, 1.1332e-02, 2.8089e-05],
    [6.9625e-08, 2.8089e-05, 2.0755e-04, 2.8089e-05, 6.9625e-08],
];

/// Default continuous camera parameters.
pub const DEFAULT_BLACK_LEVEL: [f64; 4] = [0.0; 4];
pub const DEFAULT_WHITE_BALANCE: [f64; 3] = [1.0; 3];
pub const DEFAULT_COLOR_MATRIX: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
pub const DEFAULT_GAMMA: f64 = 2.2;

/// Unsharp-mask blur radius (Gaussian σ) and amount.
pub const UNSHARP_RADIUS: f64 = 1.0;
pub const UNSHARP_AMOUNT: f64 = 1.0;

/// Row-major flattening helper for fixed kernels.
pub fn flatten<const N: usize>(k: &[[f64; N]; N]) -> Vec<f64> {
    k.iter().flat_map(|r| r.iter().copied()).collect()
}
