//! High-frequency fusion path: adaptive denoising, the distribution-shift
//! gate, monogenic phase-consistency saliency, and the weighted blend.

use rustfft::num_complex::Complex;

use crate::error::Result;
use crate::fft::{dft_freq, Fft2};
use crate::imgcore::{estimate_noise_level, histogram_pmf, GrayImage, Pmf256};
use crate::decompose::{sanf, SanfParams};

use super::FusionConfig;

/// Result of the adaptive high-band denoiser.
#[derive(Debug, Clone)]
pub struct DenoisedBand {
    pub band: GrayImage,
    /// Measured band noise level (0-255 scale).
    pub sigma: f64,
    /// Smoothing strength applied, `None` when the sigma guard passed the
    /// band through untouched.
    pub kappa: Option<f64>,
}

/// Smoothing strength for a noisy high band; `None` below the log guard.
pub fn high_band_kappa(sigma255: f64, cfg: &FusionConfig) -> Option<f64> {
    if sigma255 <= 1.0 {
        None
    } else {
        Some(cfg.high_kappa_coeff * sigma255.ln() / cfg.kappa_log_base.ln())
    }
}

/// Denoise a high-frequency band with noise-scaled strength. Clean bands
/// pass through unchanged.
pub fn adaptive_denoise_high(h: &GrayImage, cfg: &FusionConfig) -> DenoisedBand {
    let sigma = estimate_noise_level(h).sigma();
    match high_band_kappa(sigma, cfg) {
        None => DenoisedBand { band: h.clone(), sigma, kappa: None },
        Some(kappa) => DenoisedBand {
            band: sanf(h, &SanfParams { kappa, ..cfg.sanf }),
            sigma,
            kappa: Some(kappa),
        },
    }
}

/// Kullback-Leibler divergence in nats, with the `0 ln 0 = 0` convention.
pub fn kl_divergence(p: &Pmf256, q: &Pmf256) -> f64 {
    p.bins()
        .iter()
        .zip(q.bins())
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi / qi.max(f64::MIN_POSITIVE)).ln())
        .sum()
}

/// Gate decision between a band and its denoised version.
#[derive(Debug, Clone)]
pub struct GateOutcome {
    pub band: GrayImage,
    pub kl: f64,
    /// True when the original band was kept (denoising shifted the
    /// intensity distribution past the threshold).
    pub kept_original: bool,
}

/// Histogram over the joint value range of the pair, so the two
/// distributions share a support.
fn shared_range_pmf(img: &GrayImage, lo: f64, hi: f64) -> Pmf256 {
    if hi - lo < 1e-15 {
        return histogram_pmf(&img.map(|_| 0.0));
    }
    histogram_pmf(&img.map(|v| (v - lo) / (hi - lo)))
}

/// Keep the original band when denoising moved its intensity distribution
/// by more than `threshold` (measured by K-L divergence on shared-range
/// histograms); otherwise keep the denoised band. Always returns a copy of
/// one of the two inputs, never a blend.
pub fn detail_gate(h: &GrayImage, oh: &GrayImage, threshold: f64) -> Result<GateOutcome> {
    h.check_same_dims(oh, "detail_gate")?;
    let lo = h.min_value().min(oh.min_value());
    let hi = h.max_value().max(oh.max_value());
    let p = shared_range_pmf(h, lo, hi);
    let q = shared_range_pmf(oh, lo, hi);
    let kl = kl_divergence(&p, &q);
    if kl > threshold {
        Ok(GateOutcome { band: h.clone(), kl, kept_original: true })
    } else {
        Ok(GateOutcome { band: oh.clone(), kl, kept_original: false })
    }
}

/// Monogenic phase-consistency configuration.
#[derive(Debug, Clone, Copy)]
pub struct MpcParams {
    /// Band-pass center wavelengths in pixels, finest first.
    pub wavelengths: [f64; 3],
    /// Log-Gabor bandwidth parameter (ratio form).
    pub sigma_on_f: f64,
    /// Noise compensation multiplier on the finest-scale median energy.
    pub k_t: f64,
    /// Sigmoid steepness of the filter-response spread weight.
    pub spread_gain: f64,
    /// Sigmoid midpoint of the spread weight.
    pub spread_cutoff: f64,
    /// Phase-deviation penalty factor.
    pub gamma: f64,
}

impl Default for MpcParams {
    fn default() -> Self {
        Self {
            wavelengths: [4.0, 8.0, 16.0],
            sigma_on_f: 0.55,
            k_t: 2.0,
            spread_gain: 10.0,
            spread_cutoff: 0.4,
            gamma: 1.5,
        }
    }
}

/// Monogenic phase-consistency saliency map (non-negative).
#[derive(Debug, Clone)]
pub struct MpcMap {
    pub values: GrayImage,
    pub scales: usize,
    /// Noise compensation level subtracted from the local energy.
    pub noise_t: f64,
}

/// Monogenic phase consistency: log-Gabor band-pass scales paired with the
/// two Riesz components, combined into local energy over amplitude with a
/// spread weight and noise floor. Zero on constant images, non-negative
/// everywhere, and ridge-shaped along step edges.
pub fn mpc(band: &GrayImage, params: &MpcParams) -> MpcMap {
    let (w, h) = band.dims();
    let n = w * h;
    let fft = Fft2::new(w, h);
    let spectrum = fft.forward_real(band.as_slice());

    let mut sum_even = vec![0.0; n];
    let mut sum_o1 = vec![0.0; n];
    let mut sum_o2 = vec![0.0; n];
    let mut amp_sum = vec![0.0; n];
    let mut amp_max = vec![0.0f64; n];
    let mut amp_finest = vec![0.0; n];

    let log_sigma2 = 2.0 * params.sigma_on_f.ln().powi(2);
    for (s, &wavelength) in params.wavelengths.iter().enumerate() {
        let mut even_f = vec![Complex::new(0.0, 0.0); n];
        let mut o1_f = vec![Complex::new(0.0, 0.0); n];
        let mut o2_f = vec![Complex::new(0.0, 0.0); n];
        for ky in 0..h {
            let fy = dft_freq(ky, h);
            for kx in 0..w {
                let fx = dft_freq(kx, w);
                let radius = fx.hypot(fy);
                let i = ky * w + kx;
                if radius <= 0.0 {
                    continue;
                }
                let lg = (-(radius * wavelength).ln().powi(2) / log_sigma2).exp();
                let filtered = spectrum[i] * lg;
                even_f[i] = filtered;
                // Riesz transform multipliers (i fx / |f|, i fy / |f|).
                o1_f[i] = filtered * Complex::new(0.0, fx / radius);
                o2_f[i] = filtered * Complex::new(0.0, fy / radius);
            }
        }
        let even = fft.inverse_real(&even_f);
        let o1 = fft.inverse_real(&o1_f);
        let o2 = fft.inverse_real(&o2_f);
        for i in 0..n {
            let amp = (even[i] * even[i] + o1[i] * o1[i] + o2[i] * o2[i]).sqrt();
            sum_even[i] += even[i];
            sum_o1[i] += o1[i];
            sum_o2[i] += o2[i];
            amp_sum[i] += amp;
            amp_max[i] = amp_max[i].max(amp);
            if s == 0 {
                amp_finest[i] = amp;
            }
        }
    }

    // Noise floor: the finest scale is noise-dominated in flat content, so
    // its median amplitude scales the compensation level.
    let mut sorted = amp_finest.clone();
    sorted.sort_by(f64::total_cmp);
    let median_finest = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    let scale_sum: f64 = params
        .wavelengths
        .iter()
        .map(|&l| (params.wavelengths[0] / l).sqrt())
        .sum();
    let noise_t = params.k_t * median_finest * scale_sum;

    let n_scales = params.wavelengths.len() as f64;
    let values = GrayImage::new(
        w,
        h,
        (0..n)
            .map(|i| {
                let a = amp_sum[i];
                if a < 1e-12 {
                    return 0.0;
                }
                let e = (sum_even[i] * sum_even[i] + sum_o1[i] * sum_o1[i] + sum_o2[i] * sum_o2[i]).sqrt();
                let spread = a / (amp_max[i] * n_scales + f64::MIN_POSITIVE);
                let weight = 1.0 / (1.0 + (params.spread_gain * (params.spread_cutoff - spread)).exp());
                let phase = (1.0 - params.gamma * (e / a).clamp(0.0, 1.0).acos()).max(0.0);
                let energy = (e - noise_t).max(0.0);
                weight * phase * energy / (a + 1e-4)
            })
            .collect(),
    )
    .expect("dims preserved");

    MpcMap { values, scales: params.wavelengths.len(), noise_t }
}

/// Weighted high-frequency blend: per-pixel saliency weights normalized by
/// the global maximum of the summed saliency plus `eta`.
///
/// The per-pixel weights intentionally do not sum to one (they follow the
/// saliency construction as given); the degenerate all-zero-saliency case
/// reduces to the plain band sum.
pub fn fuse_high(bands: &[GrayImage; 3], saliency: &[MpcMap; 3], eta: f64) -> Result<GrayImage> {
    let (w, h) = bands[0].dims();
    for b in bands.iter().skip(1) {
        bands[0].check_same_dims(b, "fuse_high")?;
    }
    for m in saliency {
        bands[0].check_same_dims(&m.values, "fuse_high")?;
    }
    let n = w * h;
    let mut sum_map = vec![0.0; n];
    for m in saliency {
        for (acc, &v) in sum_map.iter_mut().zip(m.values.as_slice()) {
            *acc += v;
        }
    }
    let denom = sum_map.iter().cloned().fold(0.0f64, f64::max) + eta;
    let mut out = vec![0.0; n];
    for alpha in 0..3 {
        let mv = saliency[alpha].values.as_slice();
        let hv = bands[alpha].as_slice();
        for i in 0..n {
            out[i] += (mv[i] + eta) / denom * hv[i];
        }
    }
    GrayImage::new(w, h, out)
}

/// Effective per-pixel gain of the high-frequency blend (max, mean): the sum
/// of the three weights at each pixel.
pub fn fuse_high_gain(saliency: &[MpcMap; 3], eta: f64) -> (f64, f64) {
    let n = saliency[0].values.as_slice().len();
    let mut sum_map = vec![0.0; n];
    for m in saliency {
        for (acc, &v) in sum_map.iter_mut().zip(m.values.as_slice()) {
            *acc += v;
        }
    }
    let denom = sum_map.iter().cloned().fold(0.0f64, f64::max) + eta;
    let gains: Vec<f64> = sum_map.iter().map(|&s| (s + 3.0 * eta) / denom).collect();
    let max = gains.iter().cloned().fold(0.0f64, f64::max);
    let mean = gains.iter().sum::<f64>() / n as f64;
    (max, mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn cfg() -> FusionConfig {
        FusionConfig::default()
    }

    #[test]
    fn denoise_zero_band_passthrough() {
        let h = GrayImage::filled(24, 18, 0.0).unwrap();
        let out = adaptive_denoise_high(&h, &cfg());
        assert_eq!(out.band, h);
        assert_eq!(out.kappa, None);
        assert_eq!(out.sigma, 0.0);
    }

    #[test]
    fn high_band_kappa_at_log_base() {
        // sigma = 5 sits exactly at log base: kappa = coefficient.
        let k = high_band_kappa(5.0, &cfg()).unwrap();
        assert!((k - 0.4).abs() < 1e-12);
        assert_eq!(high_band_kappa(0.5, &cfg()), None);
    }

    #[test]
    fn denoise_reduces_injected_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let normal = Normal::new(0.0, 20.0 / 255.0).unwrap();
        let h = GrayImage::from_fn(64, 48, |x, _| {
            let detail = if x % 16 < 8 { 0.05 } else { -0.05 };
            detail + normal.sample(&mut rng)
        })
        .unwrap();
        let out = adaptive_denoise_high(&h, &cfg());
        assert!(out.kappa.is_some());
        assert!(estimate_noise_level(&out.band).sigma() < out.sigma);
    }

    #[test]
    fn kl_identity_is_zero() {
        let mut bins = [0.0; 256];
        for (i, b) in bins.iter_mut().enumerate() {
            *b = (i + 1) as f64;
        }
        let p = Pmf256::from_masses(bins).unwrap();
        assert_eq!(kl_divergence(&p, &p), 0.0);
    }

    #[test]
    fn kl_two_bin_example() {
        let mut pb = [0.0; 256];
        pb[0] = 0.5;
        pb[1] = 0.5;
        let mut qb = [0.0; 256];
        qb[0] = 0.25;
        qb[1] = 0.75;
        let p = Pmf256::new(pb).unwrap();
        let q = Pmf256::new(qb).unwrap();
        // Direct two-term summation: 0.5 ln 2 + 0.5 ln(2/3) = 0.5 ln(4/3).
        let expected = 0.5 * (4.0f64 / 3.0).ln();
        assert!((kl_divergence(&p, &q) - expected).abs() < 1e-6);
    }

    #[test]
    fn kl_non_negative_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let mut a = [0.0; 256];
            let mut b = [0.0; 256];
            for i in 0..256 {
                a[i] = rng.random::<f64>() + 1e-6;
                b[i] = rng.random::<f64>() + 1e-6;
            }
            let p = Pmf256::from_masses(a).unwrap();
            let q = Pmf256::from_masses(b).unwrap();
            assert!(kl_divergence(&p, &q) >= 0.0);
        }
    }

    #[test]
    fn gate_keeps_denoised_when_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = GrayImage::from_fn(16, 16, |_, _| rng.random::<f64>() - 0.5).unwrap();
        let out = detail_gate(&h, &h, 0.05).unwrap();
        assert!(!out.kept_original);
        assert_eq!(out.kl, 0.0);
        assert_eq!(out.band, h);
    }

    #[test]
    fn gate_keeps_original_when_denoise_flattens_texture() {
        let h = GrayImage::from_fn(32, 32, |x, y| {
            0.3 * ((x as f64 * 0.7).sin() + (y as f64 * 1.3).cos())
        })
        .unwrap();
        let oh = GrayImage::filled(32, 32, 0.0).unwrap();
        let out = detail_gate(&h, &oh, 0.05).unwrap();
        assert!(out.kl > 0.05, "kl = {}", out.kl);
        assert!(out.kept_original);
        assert_eq!(out.band, h);
    }

    #[test]
    fn gate_with_infinite_threshold_never_fires() {
        let h = GrayImage::from_fn(16, 16, |x, _| x as f64 / 16.0).unwrap();
        let oh = GrayImage::filled(16, 16, 0.0).unwrap();
        let out = detail_gate(&h, &oh, f64::INFINITY).unwrap();
        assert!(!out.kept_original);
        assert_eq!(out.band, oh);
    }

    #[test]
    fn mpc_zero_on_constant() {
        let img = GrayImage::filled(32, 24, 0.37).unwrap();
        let map = mpc(&img, &MpcParams::default());
        assert!(map.values.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mpc_non_negative_on_random_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let img = GrayImage::from_fn(40, 30, |_, _| rng.random::<f64>() - 0.5).unwrap();
        let map = mpc(&img, &MpcParams::default());
        assert!(map.values.as_slice().iter().all(|&v| v >= 0.0 && v.is_finite()));
    }

    #[test]
    fn mpc_ridge_localizes_step_edges() {
        // Centered bar avoids a wrap-around discontinuity at the raster edge.
        let img = GrayImage::from_fn(64, 64, |x, _| if (16..48).contains(&x) { 1.0 } else { 0.0 }).unwrap();
        let map = mpc(&img, &MpcParams::default());
        assert!(map.values.max_value() > 0.0);
        let mut best = (0usize, 0usize, 0.0f64);
        for y in 0..64 {
            for x in 0..64 {
                let v = map.values.get(x, y);
                if v > best.2 {
                    best = (x, y, v);
                }
            }
        }
        let x = best.0 as isize;
        let near_left = (x - 15).abs() <= 1 || (x - 16).abs() <= 1;
        let near_right = (x - 47).abs() <= 1 || (x - 48).abs() <= 1;
        assert!(near_left || near_right, "ridge max at column {x}");
    }

    #[test]
    fn fuse_high_degenerates_to_band_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let bands: [GrayImage; 3] = std::array::from_fn(|_| {
            GrayImage::from_fn(20, 14, |_, _| rng.random::<f64>() - 0.5).unwrap()
        });
        let zero = MpcMap {
            values: GrayImage::filled(20, 14, 0.0).unwrap(),
            scales: 3,
            noise_t: 0.0,
        };
        let saliency = [zero.clone(), zero.clone(), zero];
        let fh = fuse_high(&bands, &saliency, 0.1).unwrap();
        for i in 0..20 * 14 {
            let expect = bands[0].as_slice()[i] + bands[1].as_slice()[i] + bands[2].as_slice()[i];
            assert_eq!(fh.as_slice()[i], expect);
        }
    }

    #[test]
    fn fuse_high_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let h = GrayImage::from_fn(18, 12, |_, _| rng.random::<f64>() - 0.5).unwrap();
        let m = GrayImage::from_fn(18, 12, |_, _| rng.random::<f64>()).unwrap();
        let bands = [h.clone(), h.clone(), h.clone()];
        let mk = |values: GrayImage| MpcMap { values, scales: 3, noise_t: 0.0 };
        let saliency = [mk(m.clone()), mk(m.clone()), mk(m.clone())];
        let eta = 0.1;
        let fh = fuse_high(&bands, &saliency, eta).unwrap();
        let denom = 3.0 * m.max_value() + eta;
        for i in 0..18 * 12 {
            let c = (m.as_slice()[i] + eta) / denom;
            let expect = 3.0 * c * h.as_slice()[i];
            assert!((fh.as_slice()[i] - expect).abs() < 1e-12);
        }
        assert!(fh.as_slice().iter().all(|v| v.is_finite()));
    }
}
