//! Per-pixel light-transmission estimation and refinement.
//!
//! The transmission map drives the whole decomposition: low transmittance
//! marks interference pixels (haze, glare, precipitation, overexposure).
//! Estimation runs in three steps: a dark-channel atmospheric light, a
//! closed-form coarse map built from the scattering model, and an
//! edge-weighted L1 smoothing solved by half-quadratic splitting in the
//! frequency domain.

use rustfft::num_complex::Complex;

use crate::error::{Error, Result};
use crate::fft::{dft_freq, Fft2};
use crate::imgcore::{min_channel, min_filter, GrayImage, NoiseLevel, RgbImage};

/// Transmission floor after clamping.
pub const T_FLOOR: f64 = 0.05;
/// Guard for the power-law base and the exponent denominator.
const EPS_BASE: f64 = 1e-4;
/// Guard keeping the log argument above 1 (0-255 domain).
const EPS_LOG: f64 = 1e-3;
/// Dark-channel window radius (15x15 window).
pub const DARK_CHANNEL_RADIUS: usize = 7;
/// Fraction of brightest dark-channel pixels used for atmospheric light.
const ATMO_TOP_FRACTION: f64 = 0.001;

/// Per-pixel transmittance in `[T_FLOOR, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransmissionMap {
    map: GrayImage,
}

impl TransmissionMap {
    /// Wrap a gray map, clamping into the legal range.
    pub fn from_gray(map: GrayImage) -> Self {
        Self {
            map: map.map(|v| v.clamp(T_FLOOR, 1.0)),
        }
    }

    #[inline]
    pub fn as_gray(&self) -> &GrayImage {
        &self.map
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        self.map.dims()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.map.get(x, y)
    }
}

/// Atmospheric light estimate (`0 < min_a <= 1`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AtmoLight {
    pub min_a: f64,
}

/// Exponent of the brightness-to-clear-scene model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaParam {
    pub beta: f64,
}

/// Least-squares fitted value used when no training pairs are supplied.
pub const DEFAULT_BETA: f64 = 1.2778;

impl Default for BetaParam {
    fn default() -> Self {
        Self { beta: DEFAULT_BETA }
    }
}

impl BetaParam {
    pub fn new(beta: f64) -> Result<Self> {
        if !(beta.is_finite() && beta > 0.0) {
            return Err(Error::InvalidParam(format!("beta must be > 0 (got {beta})")));
        }
        Ok(Self { beta })
    }
}

/// Configuration of the contextual smoothing solver.
#[derive(Debug, Clone)]
pub struct RegularizerConfig {
    /// Data-fidelity coefficient: lambda = coeff * exp(-sigma).
    pub lambda_coeff: f64,
    /// Floor keeping the data term alive for very noisy inputs.
    pub lambda_floor: f64,
    /// Sigma (0-255 scale) is capped here before the exponential.
    pub sigma_cap: f64,
    /// Scale of the edge-stopping weights computed from the guide image.
    pub weight_sigma: f64,
    /// First-order difference offsets (4 axis-aligned + 4 diagonal).
    pub directions: Vec<(isize, isize)>,
    /// Strictly increasing penalty schedule; its length is the outer
    /// iteration count.
    pub rho_schedule: Vec<f64>,
}

impl Default for RegularizerConfig {
    fn default() -> Self {
        Self {
            lambda_coeff: 1.5,
            lambda_floor: 1e-3,
            sigma_cap: 10.0,
            weight_sigma: 0.5,
            directions: vec![
                (1, 0),
                (0, 1),
                (1, 1),
                (1, -1),
                (-1, 0),
                (0, -1),
                (-1, -1),
                (-1, 1),
            ],
            rho_schedule: (0..8).map(|k| (1u32 << k) as f64).collect(),
        }
    }
}

impl RegularizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_coeff > 0.0 && self.lambda_floor > 0.0 && self.weight_sigma > 0.0) {
            return Err(Error::InvalidParam("regularizer coefficients must be positive".into()));
        }
        if self.rho_schedule.is_empty() || self.rho_schedule.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParam("penalty schedule must be non-empty and strictly increasing".into()));
        }
        if self.directions.is_empty() {
            return Err(Error::InvalidParam("direction set must be non-empty".into()));
        }
        Ok(())
    }

    /// Adaptive data weight from the measured noise level.
    pub fn lambda_for(&self, sigma: &NoiseLevel) -> f64 {
        let s = sigma.sigma().min(self.sigma_cap);
        (self.lambda_coeff * (-s).exp()).max(self.lambda_floor)
    }
}

/// Dark channel of an RGB image: channel minimum eroded by the standard
/// 15x15 window.
pub fn dark_channel(img: &RgbImage) -> GrayImage {
    min_filter(&min_channel(img), DARK_CHANNEL_RADIUS)
}

/// Atmospheric light via the dark channel prior: average the channel minimum
/// over the brightest 0.1% of dark-channel pixels, clamped to `[0.7, 1.0]`.
pub fn estimate_atmo_light(vis: &RgbImage) -> AtmoLight {
    let dark = dark_channel(vis);
    let mc = min_channel(vis);
    let n = dark.as_slice().len();
    let take = ((n as f64 * ATMO_TOP_FRACTION).ceil() as usize).max(1);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| dark.as_slice()[b].total_cmp(&dark.as_slice()[a]).then(a.cmp(&b)));
    let mean: f64 = order[..take].iter().map(|&i| mc.as_slice()[i]).sum::<f64>() / take as f64;
    AtmoLight { min_a: mean.clamp(0.7, 1.0) }
}

/// Clear-scene channel-minimum model: a guarded log power law evaluated on
/// the 0-255 scale, rescaled so the brightest pixel maps to 1.
///
/// Monotone increasing in `minI`, mirroring the positive correlation between
/// observed and clear channel minima.
pub fn estimate_min_j(min_i: &GrayImage, a: AtmoLight, b: BetaParam) -> GrayImage {
    let a255 = a.min_a * 255.0;
    let raw = min_i.map(|v| {
        let arg = (a255 - v * 255.0).max(1.0 + EPS_LOG);
        arg.ln().powf(-b.beta)
    });
    let max = raw.max_value();
    raw.map(|v| (v / max).clamp(0.0, 1.0))
}

/// Coarse transmission from the reformulated scattering model:
/// `t = base^(minA / (minA - minJ))` with `base = minA - minI`, both guarded,
/// clamped into `[T_FLOOR, 1]`.
pub fn coarse_transmission(vis: &RgbImage, a: AtmoLight, b: BetaParam) -> TransmissionMap {
    let min_i = dark_channel(vis);
    let min_j = estimate_min_j(&min_i, a, b);
    let t = GrayImage::from_fn(vis.width(), vis.height(), |x, y| {
        let base = (a.min_a - min_i.get(x, y)).clamp(EPS_BASE, 1.0);
        let exponent = a.min_a / (a.min_a - min_j.get(x, y)).clamp(EPS_BASE, 1.0);
        base.powf(exponent)
    })
    .expect("dims inherited from a valid image");
    TransmissionMap::from_gray(t)
}

/// Result of fitting the model exponent to hazy/clear pairs.
#[derive(Debug, Clone, Copy)]
pub struct BetaFit {
    pub param: BetaParam,
    /// Sum of squared residuals at the optimum.
    pub sse: f64,
    /// Set when the objective was flat (unidentifiable data); the returned
    /// beta is then the search-interval midpoint.
    pub flat_objective: bool,
}

const BETA_SEARCH: (f64, f64) = (0.1, 5.0);

/// Fit the model exponent by least squares over co-registered hazy/clear
/// pairs. The channel minima are compared pointwise (no spatial erosion) and
/// the 1-D objective is minimized by a coarse grid scan refined with
/// golden-section search.
pub fn fit_beta(pairs: &[(RgbImage, RgbImage)]) -> Result<BetaFit> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("fit_beta"));
    }
    let mut prepared = Vec::with_capacity(pairs.len());
    for (hazy, clear) in pairs {
        if hazy.dims() != clear.dims() {
            return Err(Error::mismatch("fit_beta", hazy.dims(), clear.dims()));
        }
        let min_i = min_channel(hazy);
        let min_j_obs = min_channel(clear);
        let a = estimate_atmo_light(hazy);
        prepared.push((min_i, min_j_obs, a));
    }

    let objective = |beta: f64| -> f64 {
        let b = BetaParam { beta };
        prepared
            .iter()
            .map(|(min_i, obs, a)| {
                let model = estimate_min_j(min_i, *a, b);
                model
                    .as_slice()
                    .iter()
                    .zip(obs.as_slice())
                    .map(|(m, o)| (m - o).powi(2))
                    .sum::<f64>()
            })
            .sum()
    };

    // Coarse scan to bracket the minimum.
    let grid = 64;
    let (lo, hi) = BETA_SEARCH;
    let mut best_i = 0;
    let mut best_val = f64::INFINITY;
    let mut max_val = f64::NEG_INFINITY;
    let mut vals = Vec::with_capacity(grid + 1);
    for i in 0..=grid {
        let beta = lo + (hi - lo) * i as f64 / grid as f64;
        let v = objective(beta);
        if v < best_val {
            best_val = v;
            best_i = i;
        }
        max_val = max_val.max(v);
        vals.push(v);
    }
    if max_val - best_val <= 1e-12 * (1.0 + max_val) {
        return Ok(BetaFit {
            param: BetaParam { beta: 0.5 * (lo + hi) },
            sse: best_val,
            flat_objective: true,
        });
    }

    // Golden-section refinement in the bracketing interval.
    let step = (hi - lo) / grid as f64;
    let mut a = lo + step * best_i.saturating_sub(1) as f64;
    let mut b = (lo + step * (best_i + 1) as f64).min(hi);
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let mut fc = objective(c);
    let mut fd = objective(d);
    while b - a > 1e-5 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = objective(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = objective(d);
        }
    }
    let beta = 0.5 * (a + b);
    Ok(BetaFit {
        param: BetaParam { beta },
        sse: objective(beta),
        flat_objective: false,
    })
}

/// Evaluate the smoothing objective
/// `lambda/2 ||t - t_hat||^2 + sum_j ||W_j o (D_j (x) t)||_1`
/// with periodic differences (the solver's convention).
fn smoothing_objective(
    t: &[f64],
    t_hat: &[f64],
    weights: &[Vec<f64>],
    cfg: &RegularizerConfig,
    lambda: f64,
    w: usize,
    h: usize,
) -> f64 {
    let data: f64 = t
        .iter()
        .zip(t_hat.iter())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        * 0.5
        * lambda;
    let mut reg = 0.0;
    let mut diff = vec![0.0; w * h];
    for (j, &(dx, dy)) in cfg.directions.iter().enumerate() {
        periodic_diff(t, w, h, dx, dy, &mut diff);
        reg += weights[j]
            .iter()
            .zip(diff.iter())
            .map(|(&wv, &d)| wv * d.abs())
            .sum::<f64>();
    }
    data + reg
}

/// `out = shift(src, dx, dy) - src` with periodic wraparound, the row/column
/// wrap handled by split loops.
fn periodic_diff(src: &[f64], w: usize, h: usize, dx: isize, dy: isize, out: &mut [f64]) {
    debug_assert!(dx.unsigned_abs() < w && dy.unsigned_abs() < h);
    for y in 0..h {
        let mut ys = y as isize + dy;
        if ys >= h as isize {
            ys -= h as isize;
        } else if ys < 0 {
            ys += h as isize;
        }
        let src_row = &src[ys as usize * w..ys as usize * w + w];
        let cur_row = &src[y * w..y * w + w];
        let out_row = &mut out[y * w..y * w + w];
        if dx >= 0 {
            let d = dx as usize;
            for x in 0..w - d {
                out_row[x] = src_row[x + d] - cur_row[x];
            }
            for x in w - d..w {
                out_row[x] = src_row[x + d - w] - cur_row[x];
            }
        } else {
            let d = (-dx) as usize;
            for x in 0..d {
                out_row[x] = src_row[x + w - d] - cur_row[x];
            }
            for x in d..w {
                out_row[x] = src_row[x - d] - cur_row[x];
            }
        }
    }
}

/// Edge-stopping weights from the guide image: large in flat regions, small
/// across strong guide gradients.
fn direction_weights(guide: &GrayImage, cfg: &RegularizerConfig) -> Vec<Vec<f64>> {
    let (w, h) = guide.dims();
    let inv_two_sigma2 = 1.0 / (2.0 * cfg.weight_sigma * cfg.weight_sigma);
    let mut diff = vec![0.0; w * h];
    cfg.directions
        .iter()
        .map(|&(dx, dy)| {
            periodic_diff(guide.as_slice(), w, h, dx, dy, &mut diff);
            diff.iter().map(|&d| (-(d * d) * inv_two_sigma2).exp()).collect()
        })
        .collect()
}

/// Smooth a transmission map by half-quadratic splitting with the noise
/// adaptive data weight. Returns the refined map and the objective value
/// after the initial point and after every outer iteration (the trace is
/// non-increasing by construction: an iterate that would raise the objective
/// is discarded).
pub fn refine_transmission_traced(
    t: &TransmissionMap,
    sigma: &NoiseLevel,
    guide: &GrayImage,
    cfg: &RegularizerConfig,
) -> Result<(TransmissionMap, Vec<f64>)> {
    cfg.validate()?;
    t.as_gray().check_same_dims(guide, "refine_transmission")?;
    let (w, h) = t.dims();
    let n = w * h;
    let lambda = cfg.lambda_for(sigma);
    let weights = direction_weights(guide, cfg);
    let t_hat: Vec<f64> = t.as_gray().as_slice().to_vec();

    let fft = Fft2::new(w, h);
    let f_t_hat = fft.forward_real(&t_hat);

    // Frequency multipliers of the periodic forward differences.
    let multipliers: Vec<Vec<Complex<f64>>> = cfg
        .directions
        .iter()
        .map(|&(dx, dy)| {
            let mut m = Vec::with_capacity(n);
            for ky in 0..h {
                let fy = dft_freq(ky, h);
                for kx in 0..w {
                    let fx = dft_freq(kx, w);
                    let phase = 2.0 * std::f64::consts::PI * (fx * dx as f64 + fy * dy as f64);
                    m.push(Complex::from_polar(1.0, phase) - Complex::new(1.0, 0.0));
                }
            }
            m
        })
        .collect();
    let multiplier_energy: Vec<f64> = (0..n)
        .map(|i| multipliers.iter().map(|m| m[i].norm_sqr()).sum())
        .collect();

    let mut current = t_hat.clone();
    let mut trace = vec![smoothing_objective(&current, &t_hat, &weights, cfg, lambda, w, h)];

    let mut diff = vec![0.0; n];
    for &rho in &cfg.rho_schedule {
        // Shrinkage step on each direction's auxiliary variable, accumulated
        // directly in the frequency domain.
        let mut rhs: Vec<Complex<f64>> = f_t_hat.iter().map(|&c| c * lambda).collect();
        for (j, &(dx, dy)) in cfg.directions.iter().enumerate() {
            periodic_diff(&current, w, h, dx, dy, &mut diff);
            let wj = &weights[j];
            let u: Vec<f64> = diff
                .iter()
                .zip(wj.iter())
                .map(|(&d, &wv)| {
                    let threshold = wv / rho;
                    if d > threshold {
                        d - threshold
                    } else if d < -threshold {
                        d + threshold
                    } else {
                        0.0
                    }
                })
                .collect();
            let f_u = fft.forward_real(&u);
            let m = &multipliers[j];
            for i in 0..n {
                rhs[i] += m[i].conj() * f_u[i] * rho;
            }
        }
        // Quadratic step: diagonal solve in the frequency domain.
        for i in 0..n {
            rhs[i] /= lambda + rho * multiplier_energy[i];
        }
        let candidate = fft.inverse_real(&rhs);
        let obj = smoothing_objective(&candidate, &t_hat, &weights, cfg, lambda, w, h);
        let prev = *trace.last().expect("trace initialized");
        if obj <= prev {
            current = candidate;
            trace.push(obj);
        } else {
            // Keep the previous iterate; the splitting step overshot.
            trace.push(prev);
        }
    }

    let refined = GrayImage::new(w, h, current.iter().map(|&v| v.clamp(T_FLOOR, 1.0)).collect())?;
    Ok((TransmissionMap { map: refined }, trace))
}

/// [`refine_transmission_traced`] without the objective trace.
pub fn refine_transmission(
    t: &TransmissionMap,
    sigma: &NoiseLevel,
    guide: &GrayImage,
    cfg: &RegularizerConfig,
) -> Result<TransmissionMap> {
    refine_transmission_traced(t, sigma, guide, cfg).map(|(map, _)| map)
}
