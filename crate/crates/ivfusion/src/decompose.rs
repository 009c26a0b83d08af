//! Transmittance-driven layer split and the scale-and-noise-aware filter
//! (SANF) used for every low/high band separation in the pipeline.
//!
//! SANF is an iterated weighted-least-squares smoother. Each iteration
//! solves `(Id + D' W D) O = I` where the per-pixel smoothness weight
//! combines a penalty coefficient, a bootstrap gradient, a scale-awareness
//! factor and an eight-direction gradient noise weight, all measured on the
//! previous iterate.

use crate::error::Result;
use crate::imgcore::{estimate_noise_level, GrayImage};
use crate::solver::solve_wls;
use crate::transmission::TransmissionMap;

/// Contrast / structure / preprocessed-infrared triple.
///
/// `cl + sl` reproduces the visible luminance to machine precision.
#[derive(Debug, Clone)]
pub struct LayerSet {
    pub cl: GrayImage,
    pub sl: GrayImage,
    pub ir_p: GrayImage,
}

/// Low/high band pairs for the three streams, ordered CL, SL, preprocessed IR.
#[derive(Debug, Clone)]
pub struct BandSet {
    pub low: [GrayImage; 3],
    pub high: [GrayImage; 3],
}

/// SANF parameters.
#[derive(Debug, Clone, Copy)]
pub struct SanfParams {
    /// Smoothing strength; 0 reduces the filter to the identity.
    pub kappa: f64,
    /// Scale threshold in pixels (structures smaller than this are smoothed).
    pub r: usize,
    /// Iteration count.
    pub d: usize,
    /// Denominator guard of the smoothness weight.
    pub epsilon: f64,
}

impl SanfParams {
    pub fn with_kappa(kappa: f64) -> Self {
        Self { kappa, ..Self::default() }
    }
}

impl Default for SanfParams {
    fn default() -> Self {
        Self {
            kappa: 0.4,
            r: 1,
            d: 3,
            epsilon: 1e-4,
        }
    }
}

const CG_TOL: f64 = 1e-6;
const CG_MAX_ITER: usize = 500;

/// Split the visible luminance by transmittance into the contrast layer
/// (scattering-dominated energy) and structure layer (directly transmitted
/// content): `CL = visL * (1 - t)`, `SL = visL * t`.
pub fn split_contrast_structure(
    vis_l: &GrayImage,
    t: &TransmissionMap,
) -> Result<(GrayImage, GrayImage)> {
    vis_l.check_same_dims(t.as_gray(), "split_contrast_structure")?;
    let cl = vis_l.zip_map(t.as_gray(), "split_contrast_structure", |v, tv| v * (1.0 - tv))?;
    let sl = vis_l.zip_map(t.as_gray(), "split_contrast_structure", |v, tv| v * tv)?;
    Ok((cl, sl))
}

/// Eight-direction gradient noise weight: RMS of the rotated Sobel
/// responses. Exactly zero on constant images.
///
/// Kernels at 180-degree offsets are negations of each other, so the four
/// signed responses cover all eight magnitudes; they are evaluated in one
/// pass against the center-subtracted window.
pub fn noise_weight(img: &GrayImage) -> GrayImage {
    let (w, h) = img.dims();
    GrayImage::from_fn(w, h, |x, y| {
        let c = img.get(x, y);
        let s = |dx: isize, dy: isize| img.get_clamped(x as isize + dx, y as isize + dy) - c;
        let p00 = s(-1, -1);
        let p01 = s(0, -1);
        let p02 = s(1, -1);
        let p10 = s(-1, 0);
        let p12 = s(1, 0);
        let p20 = s(-1, 1);
        let p21 = s(0, 1);
        let p22 = s(1, 1);
        let g0 = (p02 + 2.0 * p12 + p22) - (p00 + 2.0 * p10 + p20);
        let g1 = (p12 + p21 + 2.0 * p22) - (2.0 * p00 + p01 + p10);
        let g2 = (p20 + 2.0 * p21 + p22) - (p00 + 2.0 * p01 + p02);
        let g3 = (p10 + 2.0 * p20 + p21) - (p01 + 2.0 * p02 + p12);
        // Mean of eight magnitudes = mean of four unsigned pairs.
        ((g0.abs() + g1.abs() + g2.abs() + g3.abs()) / 4.0).sqrt()
    })
    .expect("dims preserved")
}

/// Forward-difference gradient magnitude (replicate boundary: trailing
/// differences are zero).
fn gradient_magnitude(img: &GrayImage) -> GrayImage {
    let (w, h) = img.dims();
    GrayImage::from_fn(w, h, |x, y| {
        let v = img.get(x, y);
        let gx = if x + 1 < w { img.get(x + 1, y) - v } else { 0.0 };
        let gy = if y + 1 < h { img.get(x, y + 1) - v } else { 0.0 };
        gx.hypot(gy)
    })
    .expect("dims preserved")
}

/// Separable sliding-window sum and max with replicate borders.
fn box_sum_max(src: &GrayImage, radius: isize) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = src.dims();
    let mut sum_h = vec![0.0; w * h];
    let mut max_h = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            let mut m = f64::NEG_INFINITY;
            for dx in -radius..=radius {
                let v = src.get_clamped(x as isize + dx, y as isize);
                s += v;
                m = m.max(v);
            }
            sum_h[y * w + x] = s;
            max_h[y * w + x] = m;
        }
    }
    let mut sum = vec![0.0; w * h];
    let mut max = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            let mut m = f64::NEG_INFINITY;
            for dy in -radius..=radius {
                let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                s += sum_h[yy * w + x];
                m = m.max(max_h[yy * w + x]);
            }
            sum[y * w + x] = s;
            max[y * w + x] = m;
        }
    }
    (sum, max)
}

/// Scale-awareness factor: local mean over local max of the gradient
/// magnitude in a radius-3r window, in `[0, 1]`. Small-scale clutter gives a
/// ratio near its window max; large coherent edges dominate their window and
/// drive the ratio down elsewhere.
fn scale_factor(grad: &GrayImage, r: usize, epsilon: f64) -> GrayImage {
    let (w, h) = grad.dims();
    let radius = (3 * r) as isize;
    let (sum, max) = box_sum_max(grad, radius);
    let count = ((2 * radius + 1) * (2 * radius + 1)) as f64;
    GrayImage::from_fn(w, h, |x, y| {
        let i = y * w + x;
        ((sum[i] / count) / (max[i] + epsilon)).clamp(0.0, 1.0)
    })
    .expect("dims preserved")
}

/// The scale-and-noise-aware filter. `kappa = 0` and constant inputs are
/// exact fixed points.
pub fn sanf(img: &GrayImage, params: &SanfParams) -> GrayImage {
    if params.kappa == 0.0 {
        return img.clone();
    }
    let (w, h) = img.dims();
    let mut out = img.clone();
    for _ in 0..params.d.max(1) {
        let grad = gradient_magnitude(&out);
        let grad_max = grad.max_value();
        let s = noise_weight(&out);
        let q = scale_factor(&grad, params.r.max(1), params.epsilon);
        let mut weights = vec![0.0; w * h];
        for i in 0..w * h {
            let g = if grad_max > 0.0 { grad.as_slice()[i] / grad_max } else { 0.0 };
            let xi = 1.0 / (g + 0.1);
            let denom = xi * g * q.as_slice()[i] * s.as_slice()[i] + params.epsilon;
            weights[i] = params.kappa / denom;
        }
        let solved = solve_wls(w, h, &weights, img.as_slice(), out.as_slice(), CG_TOL, CG_MAX_ITER);
        out = GrayImage::new(w, h, solved).expect("solver preserves finiteness");
    }
    out
}

/// Smoothing strength for a noisy infrared frame; `None` means the noise
/// level is too low to justify filtering (log guard at sigma <= 1).
pub fn infrared_kappa(sigma255: f64) -> Option<f64> {
    if sigma255 <= 1.0 {
        None
    } else {
        Some(0.01 * sigma255.ln() / 5f64.ln())
    }
}

/// Denoise the infrared frame when its measured noise level warrants it.
pub fn preprocess_infrared(ir: &GrayImage) -> GrayImage {
    let sigma = estimate_noise_level(ir).sigma();
    match infrared_kappa(sigma) {
        None => ir.clone(),
        Some(kappa) => sanf(ir, &SanfParams::with_kappa(kappa)),
    }
}

/// Band-split smoothing strength: `kappa' / exp(0.03 * sigma)` with
/// `kappa' = 0.4`. More measured noise means a gentler low-pass so the noise
/// is pushed into the high band where the adaptive denoiser handles it.
pub fn band_kappa(sigma255: f64) -> f64 {
    0.4 / (0.03 * sigma255).exp()
}

/// Split a layer into its low band (SANF output) and high band (residual).
/// `low + high` reconstructs the layer exactly.
pub fn band_decompose(layer: &GrayImage) -> (GrayImage, GrayImage) {
    let sigma = estimate_noise_level(layer).sigma();
    let kappa = band_kappa(sigma);
    let low = sanf(layer, &SanfParams::with_kappa(kappa));
    let high = layer
        .zip_map(&low, "band_decompose", |a, b| a - b)
        .expect("same dims by construction");
    (low, high)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn ramp_t(w: usize, h: usize) -> TransmissionMap {
        TransmissionMap::from_gray(
            GrayImage::from_fn(w, h, |x, _| 0.05 + 0.95 * x as f64 / (w - 1) as f64).unwrap(),
        )
    }

    #[test]
    fn split_trivial_cases() {
        let vis = GrayImage::from_fn(12, 9, |x, y| ((x + y) % 7) as f64 / 7.0).unwrap();
        let ones = TransmissionMap::from_gray(GrayImage::filled(12, 9, 1.0).unwrap());
        let (cl, sl) = split_contrast_structure(&vis, &ones).unwrap();
        assert!(cl.as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(sl, vis);

        let half = TransmissionMap::from_gray(GrayImage::filled(12, 9, 0.5).unwrap());
        let (cl, sl) = split_contrast_structure(&vis, &half).unwrap();
        for i in 0..12 * 9 {
            assert_eq!(cl.as_slice()[i], sl.as_slice()[i]);
        }
    }

    #[test]
    fn split_additive_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let vis = GrayImage::from_fn(20, 15, |_, _| rng.random()).unwrap();
        let t = ramp_t(20, 15);
        let (cl, sl) = split_contrast_structure(&vis, &t).unwrap();
        for i in 0..20 * 15 {
            let residual = cl.as_slice()[i] + sl.as_slice()[i] - vis.as_slice()[i];
            assert!(residual.abs() < 1e-12);
        }
    }

    #[test]
    fn split_rejects_mismatched_dims() {
        let vis = GrayImage::filled(10, 10, 0.5).unwrap();
        let t = ramp_t(11, 10);
        assert!(split_contrast_structure(&vis, &t).is_err());
    }

    #[test]
    fn noise_weight_zero_on_constant_positive_elsewhere() {
        let flat = GrayImage::filled(10, 10, 0.3).unwrap();
        assert!(noise_weight(&flat).as_slice().iter().all(|&v| v == 0.0));

        let edge = GrayImage::from_fn(10, 10, |x, _| if x < 5 { 0.0 } else { 1.0 }).unwrap();
        let s = noise_weight(&edge);
        assert!(s.get(4, 5) > 0.0);
        assert!(s.max_value() > 0.5);
    }

    #[test]
    fn sanf_kappa_zero_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let img = GrayImage::from_fn(16, 16, |_, _| rng.random()).unwrap();
        let out = sanf(&img, &SanfParams::with_kappa(0.0));
        assert_eq!(out, img);
    }

    #[test]
    fn sanf_constant_is_fixed_point() {
        let img = GrayImage::filled(16, 12, 0.45).unwrap();
        for kappa in [0.05, 0.4, 1.0] {
            let out = sanf(&img, &SanfParams::with_kappa(kappa));
            for &v in out.as_slice() {
                assert!((v - 0.45).abs() < 1e-12, "kappa {kappa}");
            }
        }
    }

    fn noisy_step(w: usize, h: usize, sigma: f64, seed: u64) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, sigma).unwrap();
        GrayImage::from_fn(w, h, |x, _| {
            let base = if x < w / 2 { 0.25 } else { 0.75 };
            (base + normal.sample(&mut rng)).clamp(0.0, 1.0)
        })
        .unwrap()
    }

    fn max_gradient_column(img: &GrayImage) -> usize {
        let (w, h) = img.dims();
        let mut best = (0, 0.0);
        for x in 0..w - 1 {
            let mut acc = 0.0;
            for y in 0..h {
                acc += (img.get(x + 1, y) - img.get(x, y)).abs();
            }
            if acc > best.1 {
                best = (x, acc);
            }
        }
        best.0
    }

    #[test]
    fn sanf_denoises_step_edge_without_moving_it() {
        let img = noisy_step(96, 64, 15.0 / 255.0, 3);
        let out = sanf(&img, &SanfParams::with_kappa(0.4));
        let before = estimate_noise_level(&img).sigma();
        let after = estimate_noise_level(&out).sigma();
        assert!(after < before, "{after} !< {before}");
        let edge = max_gradient_column(&out);
        let truth = 96 / 2 - 1; // last dark column
        assert!((edge as isize - truth as isize).abs() <= 1, "edge at {edge}");
    }

    #[test]
    fn sanf_total_variation_monotone_in_kappa() {
        let img = noisy_step(48, 32, 10.0 / 255.0, 4);
        let mut last = f64::INFINITY;
        for kappa in [0.0, 0.1, 0.4, 1.0] {
            let tv = sanf(&img, &SanfParams::with_kappa(kappa)).total_variation();
            assert!(tv <= last + 1e-9, "tv rose at kappa {kappa}");
            last = tv;
        }
    }

    #[test]
    fn sanf_preserves_mean() {
        let img = noisy_step(48, 32, 12.0 / 255.0, 5);
        let out = sanf(&img, &SanfParams::with_kappa(0.4));
        assert!((out.mean() - img.mean()).abs() < 1e-3);
    }

    #[test]
    fn infrared_kappa_rules() {
        assert_eq!(infrared_kappa(0.0), None);
        assert_eq!(infrared_kappa(1.0), None);
        let k5 = infrared_kappa(5.0).unwrap();
        assert!((k5 - 0.01).abs() < 1e-12);
        let k25 = infrared_kappa(25.0).unwrap();
        assert!((k25 - 0.02).abs() < 1e-12);
    }

    #[test]
    fn preprocess_clean_infrared_is_passthrough() {
        let ir = GrayImage::from_fn(32, 24, |x, y| (x as f64 + y as f64) / 56.0).unwrap();
        let out = preprocess_infrared(&ir);
        assert_eq!(out, ir);
    }

    #[test]
    fn preprocess_noisy_infrared_reduces_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let normal = Normal::new(0.0, 25.0 / 255.0).unwrap();
        let ir = GrayImage::from_fn(64, 48, |x, _| {
            (0.3 + 0.4 * (x as f64 / 63.0) + normal.sample(&mut rng)).clamp(0.0, 1.0)
        })
        .unwrap();
        let out = preprocess_infrared(&ir);
        assert!(estimate_noise_level(&out).sigma() < estimate_noise_level(&ir).sigma());
    }

    #[test]
    fn band_kappa_rule() {
        assert_eq!(band_kappa(0.0), 0.4);
        assert!((band_kappa(10.0) - 0.4 / 0.3f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn band_decompose_constant_layer() {
        let layer = GrayImage::filled(16, 12, 0.3).unwrap();
        let (low, high) = band_decompose(&layer);
        for i in 0..16 * 12 {
            assert!((low.as_slice()[i] - 0.3).abs() < 1e-12);
            assert!(high.as_slice()[i].abs() < 1e-12);
        }
    }

    #[test]
    fn band_decompose_additive_identity() {
        let img = noisy_step(40, 28, 8.0 / 255.0, 7);
        let (low, high) = band_decompose(&img);
        for i in 0..40 * 28 {
            let r = low.as_slice()[i] + high.as_slice()[i] - img.as_slice()[i];
            assert!(r.abs() < 1e-9);
        }
    }
}
