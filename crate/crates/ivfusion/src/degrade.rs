//! Procedural scene degradations for stress testing: Gaussian noise, forward
//! haze synthesis, rain streaks, snow, overexposure and lens blur. Every
//! stochastic degradation is a pure function of (input, parameters, seed).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::{GrayImage, RgbImage};

/// Rain streak parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct RainSpec {
    /// Streak length in pixels.
    pub length: f64,
    /// Streaks per 1000 pixels.
    pub density: f64,
    /// Peak streak brightness added by the screen blend.
    pub intensity: f64,
}

impl Default for RainSpec {
    fn default() -> Self {
        Self { length: 18.0, density: 0.6, intensity: 0.55 }
    }
}

/// Snow flake parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct SnowSpec {
    /// Flakes per 1000 pixels.
    pub density: f64,
    /// Nominal flake radius in pixels.
    pub radius: f64,
    /// Peak flake brightness.
    pub intensity: f64,
}

impl Default for SnowSpec {
    fn default() -> Self {
        Self { density: 1.2, radius: 2.0, intensity: 0.8 }
    }
}

/// Ground-truth transmission field patterns for haze synthesis.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case", tag = "pattern")]
pub enum TFieldPattern {
    Constant { value: f64 },
    /// Left-to-right ramp between the two bounds.
    LinearRamp { from: f64, to: f64 },
    /// Radial field: `lo` at the center, `hi` at the farthest corner.
    Radial { lo: f64, hi: f64 },
}

/// Materialize a transmission field pattern.
pub fn make_t_field(pattern: TFieldPattern, width: usize, height: usize) -> Result<GrayImage> {
    match pattern {
        TFieldPattern::Constant { value } => GrayImage::filled(width, height, value.clamp(0.0, 1.0)),
        TFieldPattern::LinearRamp { from, to } => GrayImage::from_fn(width, height, |x, _| {
            let s = x as f64 / (width - 1) as f64;
            (from + (to - from) * s).clamp(0.0, 1.0)
        }),
        TFieldPattern::Radial { lo, hi } => {
            let cx = (width - 1) as f64 / 2.0;
            let cy = (height - 1) as f64 / 2.0;
            let dmax = cx.hypot(cy);
            GrayImage::from_fn(width, height, |x, y| {
                let d = (x as f64 - cx).hypot(y as f64 - cy) / dmax;
                (lo + (hi - lo) * d).clamp(0.0, 1.0)
            })
        }
    }
}

/// One degradation, fully described for reproduction.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DegradeSpec {
    GaussianNoise { sigma255: f64, seed: u64 },
    Haze { t_field: TFieldPattern, atmo: f64 },
    Rain { spec: RainSpec, seed: u64 },
    Snow { spec: SnowSpec, seed: u64 },
    Overexposure { gain: f64, gamma: f64 },
    Blur { radius: f64 },
}

impl DegradeSpec {
    /// Check that every parameter sits in its documented range.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParam(msg));
        match *self {
            DegradeSpec::GaussianNoise { sigma255, .. } if sigma255 < 0.0 => {
                bad(format!("noise sigma must be >= 0 (got {sigma255})"))
            }
            DegradeSpec::Haze { atmo, .. } if !(atmo > 0.0 && atmo <= 1.0) => {
                bad(format!("atmospheric light must be in (0, 1] (got {atmo})"))
            }
            DegradeSpec::Rain { spec, .. } if spec.density < 0.0 || spec.length < 0.0 => {
                bad("rain density and length must be >= 0".into())
            }
            DegradeSpec::Snow { spec, .. } if spec.density < 0.0 || spec.radius < 0.0 => {
                bad("snow density and radius must be >= 0".into())
            }
            DegradeSpec::Overexposure { gain, gamma } if gain < 1.0 || !(gamma > 0.0 && gamma <= 1.0) => {
                bad(format!("overexposure needs gain >= 1 and gamma in (0, 1] (got {gain}, {gamma})"))
            }
            DegradeSpec::Blur { radius } if radius < 0.0 => {
                bad(format!("blur radius must be >= 0 (got {radius})"))
            }
            _ => Ok(()),
        }
    }

    /// Apply to an RGB image.
    pub fn apply_rgb(&self, img: &RgbImage) -> Result<RgbImage> {
        self.validate()?;
        Ok(match *self {
            DegradeSpec::GaussianNoise { sigma255, seed } => add_gaussian_noise_rgb(img, sigma255, seed),
            DegradeSpec::Haze { t_field, atmo } => {
                let t = make_t_field(t_field, img.width(), img.height())?;
                synth_haze(img, &t, atmo)?
            }
            DegradeSpec::Rain { spec, seed } => add_rain(img, &spec, seed),
            DegradeSpec::Snow { spec, seed } => add_snow(img, &spec, seed),
            DegradeSpec::Overexposure { gain, gamma } => overexpose(img, gain, gamma).0,
            DegradeSpec::Blur { radius } => add_blur(img, radius),
        })
    }
}

fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn noisy_plane(plane: &GrayImage, sigma: f64, rng: &mut ChaCha8Rng) -> GrayImage {
    if sigma == 0.0 {
        return plane.clone();
    }
    let normal = Normal::new(0.0, sigma).expect("sigma validated");
    plane.map(|v| (v + normal.sample(rng)).clamp(0.0, 1.0))
}

/// I.i.d. Gaussian noise, sigma given on the 0-255 scale, seeded.
pub fn add_gaussian_noise_gray(img: &GrayImage, sigma255: f64, seed: u64) -> GrayImage {
    let mut rng = seeded_rng(seed);
    noisy_plane(img, sigma255 / 255.0, &mut rng)
}

/// Per-channel i.i.d. Gaussian noise, seeded.
pub fn add_gaussian_noise_rgb(img: &RgbImage, sigma255: f64, seed: u64) -> RgbImage {
    let mut rng = seeded_rng(seed);
    let sigma = sigma255 / 255.0;
    RgbImage {
        r: noisy_plane(&img.r, sigma, &mut rng),
        g: noisy_plane(&img.g, sigma, &mut rng),
        b: noisy_plane(&img.b, sigma, &mut rng),
    }
}

/// Forward scattering composition `I = J t + A (1 - t)` per channel.
pub fn synth_haze(img: &RgbImage, t_field: &GrayImage, atmo: f64) -> Result<RgbImage> {
    img.r.check_same_dims(t_field, "synth_haze")?;
    let compose = |plane: &GrayImage| {
        plane
            .zip_map(t_field, "synth_haze", |j, t| j * t + atmo * (1.0 - t))
            .expect("checked above")
    };
    Ok(RgbImage {
        r: compose(&img.r),
        g: compose(&img.g),
        b: compose(&img.b),
    })
}

/// Gain-then-gamma exposure push: `clamp((gain * v)^gamma)`. Returns the
/// degraded image and the fraction of saturated pixels.
pub fn overexpose(img: &RgbImage, gain: f64, gamma: f64) -> (RgbImage, f64) {
    let mut saturated = 0usize;
    let mut total = 0usize;
    let mut push = |plane: &GrayImage| {
        plane.map(|v| {
            let raised = (gain * v).powf(gamma);
            total += 1;
            if raised >= 1.0 {
                saturated += 1;
            }
            raised.clamp(0.0, 1.0)
        })
    };
    let out = RgbImage {
        r: push(&img.r),
        g: push(&img.g),
        b: push(&img.b),
    };
    (out, saturated as f64 / total as f64)
}

/// Splat a soft point onto an accumulation layer.
fn splat(layer: &mut [f64], w: usize, h: usize, x: f64, y: f64, value: f64) {
    let xi = x.round() as isize;
    let yi = y.round() as isize;
    for dy in -1..=1isize {
        for dx in -1..=1isize {
            let px = xi + dx;
            let py = yi + dy;
            if px < 0 || py < 0 || px >= w as isize || py >= h as isize {
                continue;
            }
            let d2 = (px as f64 - x).powi(2) + (py as f64 - y).powi(2);
            let wgt = (-d2 / 0.9).exp();
            let idx = py as usize * w + px as usize;
            layer[idx] = layer[idx].max(value * wgt);
        }
    }
}

/// Screen-blend a non-negative overlay onto every channel.
fn screen_blend(img: &RgbImage, layer: &[f64]) -> RgbImage {
    let blend = |plane: &GrayImage| {
        let data = plane
            .as_slice()
            .iter()
            .zip(layer)
            .map(|(&v, &l)| 1.0 - (1.0 - v) * (1.0 - l.clamp(0.0, 1.0)))
            .collect();
        GrayImage::new(plane.width(), plane.height(), data).expect("same dims")
    };
    RgbImage {
        r: blend(&img.r),
        g: blend(&img.g),
        b: blend(&img.b),
    }
}

/// Oriented bright streaks (angles 70-110 degrees from horizontal, tapered
/// ends), screen-blended. Zero density is the identity.
pub fn add_rain(img: &RgbImage, spec: &RainSpec, seed: u64) -> RgbImage {
    let (w, h) = img.dims();
    let count = (spec.density * (w * h) as f64 / 1000.0).round() as usize;
    if count == 0 || spec.intensity <= 0.0 || spec.length <= 0.0 {
        return img.clone();
    }
    let mut rng = seeded_rng(seed);
    let mut layer = vec![0.0; w * h];
    for _ in 0..count {
        let cx = rng.random::<f64>() * w as f64;
        let cy = rng.random::<f64>() * h as f64;
        let angle = (70.0 + 40.0 * rng.random::<f64>()).to_radians();
        let (dy, dx) = angle.sin_cos();
        let steps = (spec.length * 2.0).ceil() as usize;
        for s in 0..=steps {
            let frac = s as f64 / steps as f64 - 0.5;
            // Taper toward both ends for a motion-blurred look.
            let taper = (std::f64::consts::PI * (frac + 0.5)).sin();
            let px = cx + frac * spec.length * dx;
            let py = cy + frac * spec.length * dy;
            splat(&mut layer, w, h, px, py, spec.intensity * taper);
        }
    }
    screen_blend(img, &layer)
}

/// Gaussian-profile bright discs, screen-blended. Zero density is the
/// identity.
pub fn add_snow(img: &RgbImage, spec: &SnowSpec, seed: u64) -> RgbImage {
    let (w, h) = img.dims();
    let count = (spec.density * (w * h) as f64 / 1000.0).round() as usize;
    if count == 0 || spec.intensity <= 0.0 || spec.radius <= 0.0 {
        return img.clone();
    }
    let mut rng = seeded_rng(seed);
    let mut layer = vec![0.0f64; w * h];
    for _ in 0..count {
        let cx = rng.random::<f64>() * w as f64;
        let cy = rng.random::<f64>() * h as f64;
        let radius = spec.radius * (0.5 + rng.random::<f64>());
        let brightness = spec.intensity * (0.7 + 0.3 * rng.random::<f64>());
        let sigma = (radius / 2.0).max(0.3);
        let reach = (3.0 * sigma).ceil() as isize;
        let xi = cx.round() as isize;
        let yi = cy.round() as isize;
        for dy in -reach..=reach {
            for dx in -reach..=reach {
                let px = xi + dx;
                let py = yi + dy;
                if px < 0 || py < 0 || px >= w as isize || py >= h as isize {
                    continue;
                }
                let d2 = (px as f64 - cx).powi(2) + (py as f64 - cy).powi(2);
                let v = brightness * (-d2 / (2.0 * sigma * sigma)).exp();
                let idx = py as usize * w + px as usize;
                layer[idx] = layer[idx].max(v);
            }
        }
    }
    screen_blend(img, &layer)
}

/// Disc-kernel convolution emulating water on the lens. Radius 0 is the
/// identity.
pub fn add_blur(img: &RgbImage, radius: f64) -> RgbImage {
    if radius <= 0.0 {
        return img.clone();
    }
    let reach = radius.ceil() as isize;
    let mut offsets = Vec::new();
    for dy in -reach..=reach {
        for dx in -reach..=reach {
            // Antialiased disc coverage.
            let d = ((dx * dx + dy * dy) as f64).sqrt();
            let cover = (radius + 0.5 - d).clamp(0.0, 1.0);
            if cover > 0.0 {
                offsets.push((dx, dy, cover));
            }
        }
    }
    let norm: f64 = offsets.iter().map(|o| o.2).sum();
    let blur_plane = |plane: &GrayImage| {
        GrayImage::from_fn(plane.width(), plane.height(), |x, y| {
            offsets
                .iter()
                .map(|&(dx, dy, wgt)| wgt * plane.get_clamped(x as isize + dx, y as isize + dy))
                .sum::<f64>()
                / norm
        })
        .expect("dims preserved")
    };
    RgbImage {
        r: blur_plane(&img.r),
        g: blur_plane(&img.g),
        b: blur_plane(&img.b),
    }
}
