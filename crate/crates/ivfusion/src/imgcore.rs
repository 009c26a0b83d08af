//! Image containers, filtering primitives and statistical estimators used by
//! every stage of the pipeline.
//!
//! Intensities live in a canonical `[0, 1]` domain. Formulas written on the
//! 0-255 scale (noise sigmas, log-domain transmission terms) convert
//! explicitly at their call sites. Border handling is replicate everywhere.

use crate::error::{Error, Result};

/// Row-major grayscale raster with `f64` intensities.
///
/// Values are canonically in `[0, 1]`, but intermediates (high-frequency
/// bands, unclamped reconstructions) may legitimately leave that range; only
/// finiteness is enforced at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width < 3 || height < 3 || data.len() != width * height {
            return Err(Error::InvalidDimensions { width, height });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("GrayImage::new"));
        }
        Ok(Self { width, height, data })
    }

    /// Constant-valued image.
    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    /// Build from a per-pixel closure `f(x, y)`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    /// Replicate-padded access: out-of-range coordinates clamp to the border.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let xc = x.clamp(0, self.width as isize - 1) as usize;
        let yc = y.clamp(0, self.height as isize - 1) as usize;
        self.data[yc * self.width + xc]
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise combination of two same-sized images.
    pub fn zip_map(&self, other: &GrayImage, stage: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<GrayImage> {
        self.check_same_dims(other, stage)?;
        Ok(GrayImage {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn check_same_dims(&self, other: &GrayImage, stage: &'static str) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::mismatch(stage, self.dims(), other.dims()));
        }
        Ok(())
    }

    pub fn min_value(&self) -> f64 {
        self.data.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Clamp every pixel into `[0, 1]`.
    pub fn clamped_unit(&self) -> GrayImage {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    /// Anisotropic total variation (sum of absolute forward differences).
    pub fn total_variation(&self) -> f64 {
        let mut tv = 0.0;
        for y in 0..self.height {
            for x in 0..self.width {
                let v = self.get(x, y);
                if x + 1 < self.width {
                    tv += (self.get(x + 1, y) - v).abs();
                }
                if y + 1 < self.height {
                    tv += (self.get(x, y + 1) - v).abs();
                }
            }
        }
        tv
    }
}

/// Three-plane RGB raster sharing the `GrayImage` conventions.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub r: GrayImage,
    pub g: GrayImage,
    pub b: GrayImage,
}

impl RgbImage {
    pub fn new(r: GrayImage, g: GrayImage, b: GrayImage) -> Result<Self> {
        r.check_same_dims(&g, "RgbImage::new")?;
        r.check_same_dims(&b, "RgbImage::new")?;
        Ok(Self { r, g, b })
    }

    pub fn filled(width: usize, height: usize, r: f64, g: f64, b: f64) -> Result<Self> {
        Ok(Self {
            r: GrayImage::filled(width, height, r)?,
            g: GrayImage::filled(width, height, g)?,
            b: GrayImage::filled(width, height, b)?,
        })
    }

    /// Replicate one gray plane into all three channels.
    pub fn from_gray(gray: &GrayImage) -> Self {
        Self {
            r: gray.clone(),
            g: gray.clone(),
            b: gray.clone(),
        }
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> (f64, f64, f64),
    ) -> Result<Self> {
        let mut r = Vec::with_capacity(width * height);
        let mut g = Vec::with_capacity(width * height);
        let mut b = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let (pr, pg, pb) = f(x, y);
                r.push(pr);
                g.push(pg);
                b.push(pb);
            }
        }
        Ok(Self {
            r: GrayImage::new(width, height, r)?,
            g: GrayImage::new(width, height, g)?,
            b: GrayImage::new(width, height, b)?,
        })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.r.width()
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.r.height()
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        self.r.dims()
    }

    pub fn planes(&self) -> [&GrayImage; 3] {
        [&self.r, &self.g, &self.b]
    }

    pub fn clamped_unit(&self) -> RgbImage {
        RgbImage {
            r: self.r.clamped_unit(),
            g: self.g.clamped_unit(),
            b: self.b.clamped_unit(),
        }
    }
}

/// 256-bin probability mass function over the unit intensity range.
#[derive(Debug, Clone)]
pub struct Pmf256 {
    bins: [f64; 256],
}

impl Pmf256 {
    pub fn new(bins: [f64; 256]) -> Result<Self> {
        if bins.iter().any(|&b| b < 0.0 || !b.is_finite()) {
            return Err(Error::InvalidParam("Pmf256 bins must be finite and non-negative".into()));
        }
        let sum: f64 = bins.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParam(format!("Pmf256 must sum to 1 (got {sum})")));
        }
        Ok(Self { bins })
    }

    /// Normalize arbitrary non-negative masses into a PMF.
    pub fn from_masses(masses: [f64; 256]) -> Result<Self> {
        if masses.iter().any(|&b| b < 0.0 || !b.is_finite()) {
            return Err(Error::InvalidParam("Pmf256 masses must be finite and non-negative".into()));
        }
        let sum: f64 = masses.iter().sum();
        if sum <= 0.0 {
            return Err(Error::InvalidParam("Pmf256 masses sum to zero".into()));
        }
        let mut bins = masses;
        for b in bins.iter_mut() {
            *b /= sum;
        }
        Ok(Self { bins })
    }

    #[inline]
    pub fn bins(&self) -> &[f64; 256] {
        &self.bins
    }
}

/// Noise standard deviation estimate, reported on the 0-255 scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseLevel {
    sigma: f64,
}

impl NoiseLevel {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::InvalidParam(format!("noise sigma must be >= 0 (got {sigma})")));
        }
        Ok(Self { sigma })
    }

    /// Sigma on the 0-255 scale.
    #[inline]
    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

/// Chroma planes retained by [`to_luminance`] so a fused luminance can be
/// recolored with the source colors.
#[derive(Debug, Clone)]
pub struct ChromaPlanes {
    pub cb: GrayImage,
    pub cr: GrayImage,
}

// BT.601 luma weights and the matching full-range chroma scales.
const KR: f64 = 0.299;
const KG: f64 = 0.587;
const KB: f64 = 0.114;

/// BT.601 luminance split. Returns the luma plane and the chroma planes
/// needed by [`recolor`].
pub fn to_luminance(img: &RgbImage) -> (GrayImage, ChromaPlanes) {
    let (w, h) = img.dims();
    let n = w * h;
    let mut y = Vec::with_capacity(n);
    let mut cb = Vec::with_capacity(n);
    let mut cr = Vec::with_capacity(n);
    let (rs, gs, bs) = (img.r.as_slice(), img.g.as_slice(), img.b.as_slice());
    for i in 0..n {
        let (r, g, b) = (rs[i], gs[i], bs[i]);
        let luma = KR * r + KG * g + KB * b;
        y.push(luma);
        cb.push((b - luma) * (0.5 / (1.0 - KB)) + 0.5);
        cr.push((r - luma) * (0.5 / (1.0 - KR)) + 0.5);
    }
    let gray = GrayImage { width: w, height: h, data: y };
    let chroma = ChromaPlanes {
        cb: GrayImage { width: w, height: h, data: cb },
        cr: GrayImage { width: w, height: h, data: cr },
    };
    (gray, chroma)
}

/// Inverse of [`to_luminance`]: rebuild RGB from a (possibly replaced) luma
/// plane and the retained chroma. Output is clamped to `[0, 1]`.
pub fn recolor(luma: &GrayImage, chroma: &ChromaPlanes) -> Result<RgbImage> {
    luma.check_same_dims(&chroma.cb, "recolor")?;
    luma.check_same_dims(&chroma.cr, "recolor")?;
    let (w, h) = luma.dims();
    let n = w * h;
    let mut r = Vec::with_capacity(n);
    let mut g = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    let (ys, cbs, crs) = (luma.as_slice(), chroma.cb.as_slice(), chroma.cr.as_slice());
    for i in 0..n {
        let y = ys[i];
        let pr = y + (crs[i] - 0.5) * ((1.0 - KR) / 0.5);
        let pb = y + (cbs[i] - 0.5) * ((1.0 - KB) / 0.5);
        let pg = (y - KR * pr - KB * pb) / KG;
        r.push(pr.clamp(0.0, 1.0));
        g.push(pg.clamp(0.0, 1.0));
        b.push(pb.clamp(0.0, 1.0));
    }
    Ok(RgbImage {
        r: GrayImage { width: w, height: h, data: r },
        g: GrayImage { width: w, height: h, data: g },
        b: GrayImage { width: w, height: h, data: b },
    })
}

/// Sliding-window minimum over a `(2*radius+1)^2` window, replicate-padded.
///
/// The square window is separable, so this runs as a horizontal pass followed
/// by a vertical pass.
pub fn min_filter(img: &GrayImage, radius: usize) -> GrayImage {
    if radius == 0 {
        return img.clone();
    }
    let (w, h) = img.dims();
    let r = radius as isize;
    let mut horiz = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut m = f64::INFINITY;
            for dx in -r..=r {
                m = m.min(img.get_clamped(x as isize + dx, y as isize));
            }
            horiz[y * w + x] = m;
        }
    }
    let tmp = GrayImage { width: w, height: h, data: horiz };
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut m = f64::INFINITY;
            for dy in -r..=r {
                m = m.min(tmp.get_clamped(x as isize, y as isize + dy));
            }
            out[y * w + x] = m;
        }
    }
    GrayImage { width: w, height: h, data: out }
}

/// Per-pixel minimum over the three color channels (no spatial window).
pub fn min_channel(img: &RgbImage) -> GrayImage {
    let (w, h) = img.dims();
    let data = img
        .r
        .as_slice()
        .iter()
        .zip(img.g.as_slice())
        .zip(img.b.as_slice())
        .map(|((&r, &g), &b)| r.min(g).min(b))
        .collect();
    GrayImage { width: w, height: h, data }
}

/// The eight 3x3 gradient kernels, the base kernel rotated in 45-degree
/// steps. Row order is top-to-bottom (y increasing downward).
pub const SOBEL_KERNELS_8: [[[f64; 3]; 3]; 8] = [
    // 0 deg: responds to intensity increasing along +x
    [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]],
    // 45 deg
    [[-2.0, -1.0, 0.0], [-1.0, 0.0, 1.0], [0.0, 1.0, 2.0]],
    // 90 deg: responds to intensity increasing along +y
    [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]],
    // 135 deg
    [[0.0, -1.0, -2.0], [1.0, 0.0, -1.0], [2.0, 1.0, 0.0]],
    // 180 deg
    [[1.0, 0.0, -1.0], [2.0, 0.0, -2.0], [1.0, 0.0, -1.0]],
    // 225 deg
    [[2.0, 1.0, 0.0], [1.0, 0.0, -1.0], [0.0, -1.0, -2.0]],
    // 270 deg
    [[1.0, 2.0, 1.0], [0.0, 0.0, 0.0], [-1.0, -2.0, -1.0]],
    // 315 deg
    [[0.0, 1.0, 2.0], [-1.0, 0.0, 1.0], [-2.0, -1.0, 0.0]],
];

/// Gradient magnitude in eight directions: `|img * K_d|` for each rotated
/// Sobel kernel, replicate-padded.
pub fn sobel_8dir(img: &GrayImage) -> [GrayImage; 8] {
    let (w, h) = img.dims();
    std::array::from_fn(|d| {
        let k = &SOBEL_KERNELS_8[d];
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                // The kernels are zero-sum, so responses are shift-invariant;
                // working against the center sample makes constant regions
                // cancel exactly.
                let center = img.get(x, y);
                let mut acc = 0.0;
                for (ky, row) in k.iter().enumerate() {
                    for (kx, &kv) in row.iter().enumerate() {
                        if kv != 0.0 {
                            let sample = img
                                .get_clamped(x as isize + kx as isize - 1, y as isize + ky as isize - 1);
                            acc += kv * (sample - center);
                        }
                    }
                }
                out[y * w + x] = acc.abs();
            }
        }
        GrayImage { width: w, height: h, data: out }
    })
}

const MAD_TO_SIGMA: f64 = 1.0 / 0.6745;
const NOISE_BLOCK: usize = 8;

/// Estimate additive Gaussian noise via the median absolute deviation of the
/// finest-scale diagonal high-pass residual, restricted to the half of the
/// 8x8 blocks with the lowest gradient energy. Reported on the 0-255 scale.
pub fn estimate_noise_level(img: &GrayImage) -> NoiseLevel {
    let (w, h) = img.dims();
    let dw = w - 1;
    let dh = h - 1;

    // Diagonal Haar-like residual, scaled so i.i.d. noise of std sigma maps
    // to residuals of std sigma.
    let mut diag = vec![0.0; dw * dh];
    let mut gx = vec![0.0; dw * dh];
    let mut gy = vec![0.0; dw * dh];
    for y in 0..dh {
        for x in 0..dw {
            let a = img.get(x, y);
            let b = img.get(x + 1, y);
            let c = img.get(x, y + 1);
            let d = img.get(x + 1, y + 1);
            diag[y * dw + x] = 0.5 * (a - b - c + d);
            gx[y * dw + x] = b - a;
            gy[y * dw + x] = c - a;
        }
    }

    // Rank blocks by gradient energy and keep the flattest half.
    let bx = dw.div_ceil(NOISE_BLOCK);
    let by = dh.div_ceil(NOISE_BLOCK);
    let mut blocks: Vec<(f64, usize, usize)> = Vec::with_capacity(bx * by);
    for byi in 0..by {
        for bxi in 0..bx {
            let mut energy = 0.0;
            for y in (byi * NOISE_BLOCK)..((byi + 1) * NOISE_BLOCK).min(dh) {
                for x in (bxi * NOISE_BLOCK)..((bxi + 1) * NOISE_BLOCK).min(dw) {
                    energy += gx[y * dw + x].powi(2) + gy[y * dw + x].powi(2);
                }
            }
            blocks.push((energy, bxi, byi));
        }
    }
    blocks.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)).then(a.1.cmp(&b.1)));
    let keep = blocks.len().div_ceil(2);

    let mut residuals = Vec::new();
    for &(_, bxi, byi) in blocks.iter().take(keep) {
        for y in (byi * NOISE_BLOCK)..((byi + 1) * NOISE_BLOCK).min(dh) {
            for x in (bxi * NOISE_BLOCK)..((bxi + 1) * NOISE_BLOCK).min(dw) {
                residuals.push(diag[y * dw + x].abs());
            }
        }
    }
    if residuals.is_empty() {
        return NoiseLevel { sigma: 0.0 };
    }
    residuals.sort_by(f64::total_cmp);
    let mid = residuals.len() / 2;
    let median = if residuals.len() % 2 == 1 {
        residuals[mid]
    } else {
        0.5 * (residuals[mid - 1] + residuals[mid])
    };
    NoiseLevel { sigma: median * MAD_TO_SIGMA * 255.0 }
}

/// Histogram smoothing mass added to every bin before normalization.
pub const HIST_EPSILON: f64 = 1e-12;

/// 256-bin intensity histogram over `[0, 1]`, additively smoothed by
/// [`HIST_EPSILON`] and normalized to a PMF.
pub fn histogram_pmf(img: &GrayImage) -> Pmf256 {
    let mut counts = [HIST_EPSILON; 256];
    for &v in img.as_slice() {
        let bin = ((v.clamp(0.0, 1.0) * 256.0) as usize).min(255);
        counts[bin] += 1.0;
    }
    let sum: f64 = counts.iter().sum();
    for c in counts.iter_mut() {
        *c /= sum;
    }
    Pmf256 { bins: counts }
}

/// Shannon entropy in bits; `0 <= result <= 8` for 256 bins.
pub fn entropy(p: &Pmf256) -> f64 {
    p.bins
        .iter()
        .filter(|&&b| b > 0.0)
        .map(|&b| -b * b.log2())
        .sum()
}
