//! Low-frequency fusion path: energy-layer extraction, the oriented Gabor
//! bank, directional variance, entropy-scaled weights and the final blend.

use crate::error::Result;
use crate::fft::Fft2;
use crate::imgcore::{entropy, histogram_pmf, GrayImage};
use rustfft::num_complex::Complex;

/// Sine wavelength of the bank, in pixels.
pub const GABOR_LAMBDA: f64 = 20.0;
/// Spatial aspect ratio of the Gaussian envelope.
pub const GABOR_TAU: f64 = 0.5;
/// Phase offset of the carrier.
pub const GABOR_PSI: f64 = 0.0;
/// Default envelope deviation: one-octave bandwidth convention.
pub const GABOR_SIGMA_DEFAULT: f64 = 0.56 * GABOR_LAMBDA;

/// Orientations of the bank in degrees.
pub const GABOR_THETAS_DEG: [f64; 4] = [0.0, 45.0, 90.0, 135.0];

/// One real oriented Gabor kernel, DC-free.
#[derive(Debug, Clone)]
pub struct GaborKernel {
    pub size: usize,
    pub theta_deg: f64,
    pub data: Vec<f64>,
}

/// Four-orientation Gabor bank.
#[derive(Debug, Clone)]
pub struct GaborBank {
    pub kernels: [GaborKernel; 4],
    pub sigma_hat: f64,
}

/// Build the four-orientation bank. Kernel side is `6 sigma + 1` rounded to
/// the next odd integer; each kernel is mean-subtracted so its DC response
/// vanishes.
pub fn gabor_bank(sigma_hat: f64) -> Result<GaborBank> {
    if !(sigma_hat.is_finite() && sigma_hat > 0.0) {
        return Err(crate::error::Error::InvalidParam(format!(
            "gabor sigma must be positive (got {sigma_hat})"
        )));
    }
    let mut size = (6.0 * sigma_hat + 1.0).round() as usize;
    if size % 2 == 0 {
        size += 1;
    }
    size = size.max(3);
    let half = (size / 2) as isize;
    let kernels = GABOR_THETAS_DEG.map(|theta_deg| {
        let theta = theta_deg.to_radians();
        let (sin_t, cos_t) = theta.sin_cos();
        let mut data = Vec::with_capacity(size * size);
        for dy in -half..=half {
            for dx in -half..=half {
                let xr = dx as f64 * cos_t + dy as f64 * sin_t;
                let yr = -(dx as f64) * sin_t + dy as f64 * cos_t;
                let envelope = (-(xr * xr + GABOR_TAU * GABOR_TAU * yr * yr)
                    / (2.0 * sigma_hat * sigma_hat))
                    .exp();
                let carrier = (2.0 * std::f64::consts::PI * xr / GABOR_LAMBDA + GABOR_PSI).cos();
                data.push(envelope * carrier);
            }
        }
        let mean = data.iter().sum::<f64>() / data.len() as f64;
        for v in data.iter_mut() {
            *v -= mean;
        }
        GaborKernel { size, theta_deg, data }
    });
    Ok(GaborBank { kernels, sigma_hat })
}

/// Replicate-padded image spectrum shared across a bank of equally sized
/// kernels: circular FFT convolution on the padded raster equals full
/// replicate-border convolution on the crop.
pub(crate) struct PaddedSpectrum {
    crop_w: usize,
    crop_h: usize,
    pw: usize,
    ph: usize,
    half: usize,
    fft: Fft2,
    spectrum: Vec<Complex<f64>>,
}

impl PaddedSpectrum {
    pub fn new(img: &GrayImage, kernel_size: usize) -> Self {
        let (w, h) = img.dims();
        let half = kernel_size / 2;
        let pw = crate::fft::next_fast_len(w + 2 * half);
        let ph = crate::fft::next_fast_len(h + 2 * half);
        let mut padded = vec![0.0; pw * ph];
        for y in 0..ph {
            for x in 0..pw {
                padded[y * pw + x] =
                    img.get_clamped(x as isize - half as isize, y as isize - half as isize);
            }
        }
        let fft = Fft2::new(pw, ph);
        let spectrum = fft.forward_real(&padded);
        Self { crop_w: w, crop_h: h, pw, ph, half, fft, spectrum }
    }

    pub fn response(&self, kernel: &GaborKernel) -> GrayImage {
        debug_assert_eq!(kernel.size / 2, self.half);
        // Kernel embedded at the origin with negative offsets wrapped.
        let mut embedded = vec![0.0; self.pw * self.ph];
        let half_i = self.half as isize;
        for ky in 0..kernel.size {
            for kx in 0..kernel.size {
                let dx = kx as isize - half_i;
                let dy = ky as isize - half_i;
                let px = dx.rem_euclid(self.pw as isize) as usize;
                let py = dy.rem_euclid(self.ph as isize) as usize;
                embedded[py * self.pw + px] = kernel.data[ky * kernel.size + kx];
            }
        }
        let fk = self.fft.forward_real(&embedded);
        let product: Vec<Complex<f64>> =
            self.spectrum.iter().zip(fk.iter()).map(|(a, k)| a * k).collect();
        let conv = self.fft.inverse_real(&product);
        let (pw, half) = (self.pw, self.half);
        GrayImage::from_fn(self.crop_w, self.crop_h, |x, y| conv[(y + half) * pw + (x + half)])
            .expect("dims preserved")
    }
}

/// Global variance of each orientation's filter response.
pub fn directional_variance(img: &GrayImage, bank: &GaborBank) -> [f64; 4] {
    let padded = PaddedSpectrum::new(img, bank.kernels[0].size);
    std::array::from_fn(|i| {
        let response = padded.response(&bank.kernels[i]);
        let mean = response.mean();
        response
            .as_slice()
            .iter()
            .map(|&v| (v - mean).powi(2))
            .sum::<f64>()
            / response.as_slice().len() as f64
    })
}

/// Energy layer: pointwise winner between the contrast-layer and infrared
/// low bands (ties go to the infrared side, matching the strict inequality).
pub fn energy_layer(l1: &GrayImage, l3: &GrayImage) -> Result<GrayImage> {
    l1.zip_map(l3, "energy_layer", |a, b| if a > b { a } else { b })
}

/// Global blend weights for the two low-frequency inputs.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct LowFreqWeights {
    pub w2: f64,
    pub w4: f64,
    pub v2: f64,
    pub v4: f64,
    pub en2: f64,
    pub en4: f64,
}

/// Directional-variance and entropy weighting of the structure low band
/// against the energy layer. Degenerate inputs (both effectively constant)
/// fall back to an even split.
pub fn lowfreq_weights(l2: &GrayImage, l4: &GrayImage, bank: &GaborBank) -> Result<LowFreqWeights> {
    l2.check_same_dims(l4, "lowfreq_weights")?;
    let v2 = directional_variance(l2, bank).iter().sum::<f64>() / 4.0;
    let v4 = directional_variance(l4, bank).iter().sum::<f64>() / 4.0;
    let en2 = entropy(&histogram_pmf(l2));
    let en4 = entropy(&histogram_pmf(l4));
    let num2 = v2 * en2.exp();
    let num4 = v4 * en4.exp();
    let denom = num2 + num4;
    let (w2, w4) = if denom < 1e-15 {
        (0.5, 0.5)
    } else {
        (num2 / denom, num4 / denom)
    };
    Ok(LowFreqWeights { w2, w4, v2, v4, en2, en4 })
}

/// Scalar-weighted blend of the two low-frequency inputs.
pub fn fuse_low(l2: &GrayImage, l4: &GrayImage, w: &LowFreqWeights) -> Result<GrayImage> {
    l2.zip_map(l4, "fuse_low", |a, b| w.w2 * a + w.w4 * b)
}

/// Final reconstruction: plain sum of the fused bands. The result is kept
/// unclamped; clamping happens only at encode time.
pub fn reconstruct(fh: &GrayImage, fl: &GrayImage) -> Result<GrayImage> {
    fh.zip_map(fl, "reconstruct", |a, b| a + b)
}
