//! Objective fusion-quality scores: normalized mutual information, nonlinear
//! correlation information entropy, gradient-based edge transfer, and a
//! two-level multiscale edge-preservation score.
//!
//! All four are symmetric in the two source images and computed from 256-bin
//! histograms or Sobel/Haar responses; see the per-function notes for the
//! exact variants pinned here.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::imgcore::GrayImage;

/// Per-pair record of the four scores.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QualityReport {
    pub pair_id: String,
    pub q_mi: f64,
    pub q_ncie: f64,
    pub q_g: f64,
    pub q_m: f64,
}

impl QualityReport {
    /// Arithmetic mean row over a batch.
    pub fn mean_of(reports: &[QualityReport]) -> Option<QualityReport> {
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        Some(QualityReport {
            pair_id: "mean".into(),
            q_mi: reports.iter().map(|r| r.q_mi).sum::<f64>() / n,
            q_ncie: reports.iter().map(|r| r.q_ncie).sum::<f64>() / n,
            q_g: reports.iter().map(|r| r.q_g).sum::<f64>() / n,
            q_m: reports.iter().map(|r| r.q_m).sum::<f64>() / n,
        })
    }
}

/// Score one (source, source, fused) triple.
pub fn score_pair(pair_id: &str, a: &GrayImage, b: &GrayImage, f: &GrayImage) -> Result<QualityReport> {
    a.check_same_dims(b, "score_pair")?;
    a.check_same_dims(f, "score_pair")?;
    Ok(QualityReport {
        pair_id: pair_id.to_string(),
        q_mi: q_mi(a, b, f),
        q_ncie: q_ncie(a, b, f),
        q_g: q_g(a, b, f),
        q_m: q_m(a, b, f),
    })
}

const BINS: usize = 256;

#[inline]
fn bin_of(v: f64) -> usize {
    ((v.clamp(0.0, 1.0) * BINS as f64) as usize).min(BINS - 1)
}

/// Mutual information and marginal entropies in bits from a 256x256 joint
/// histogram.
fn mi_entropies(x: &GrayImage, y: &GrayImage) -> (f64, f64, f64) {
    let n = x.as_slice().len() as f64;
    let mut joint = vec![0.0f64; BINS * BINS];
    let mut cx = [0.0f64; BINS];
    let mut cy = [0.0f64; BINS];
    for (&xv, &yv) in x.as_slice().iter().zip(y.as_slice()) {
        let (bx, by) = (bin_of(xv), bin_of(yv));
        joint[bx * BINS + by] += 1.0;
        cx[bx] += 1.0;
        cy[by] += 1.0;
    }
    let px: [f64; BINS] = std::array::from_fn(|i| cx[i] / n);
    let py: [f64; BINS] = std::array::from_fn(|j| cy[j] / n);
    let mut mi = 0.0;
    for i in 0..BINS {
        if px[i] == 0.0 {
            continue;
        }
        for j in 0..BINS {
            let p = joint[i * BINS + j] / n;
            if p > 0.0 && py[j] > 0.0 {
                mi += p * (p / (px[i] * py[j])).log2();
            }
        }
    }
    let hx = -px.iter().filter(|&&p| p > 0.0).map(|&p| p * p.log2()).sum::<f64>();
    let hy = -py.iter().filter(|&&p| p > 0.0).map(|&p| p * p.log2()).sum::<f64>();
    (mi, hx, hy)
}

/// Entropy-normalized mutual information transferred from both sources:
/// `2 [ I(a;f)/(H(a)+H(f)) + I(b;f)/(H(b)+H(f)) ]`, in `[0, 2]`.
/// A zero-entropy plane contributes nothing.
pub fn q_mi(a: &GrayImage, b: &GrayImage, f: &GrayImage) -> f64 {
    let term = |x: &GrayImage| {
        let (mi, hx, hf) = mi_entropies(x, f);
        // Zero-entropy planes carry no information: the term is exactly 0.
        if hx <= 0.0 || hf <= 0.0 {
            0.0
        } else {
            mi / (hx + hf)
        }
    };
    2.0 * (term(a) + term(b))
}

/// Eigenvalues of a symmetric 3x3 matrix by cyclic Jacobi rotations.
fn sym3_eigenvalues(mut m: [[f64; 3]; 3]) -> [f64; 3] {
    for _ in 0..64 {
        let off = m[0][1].abs().max(m[0][2].abs()).max(m[1][2].abs());
        if off < 1e-14 {
            break;
        }
        for &(p, q) in &[(0usize, 1usize), (0, 2), (1, 2)] {
            if m[p][q].abs() < 1e-300 {
                continue;
            }
            let theta = 0.5 * (2.0 * m[p][q]).atan2(m[q][q] - m[p][p]);
            let (s, c) = theta.sin_cos();
            let (app, aqq, apq) = (m[p][p], m[q][q], m[p][q]);
            m[p][p] = c * c * app - 2.0 * s * c * apq + s * s * aqq;
            m[q][q] = s * s * app + 2.0 * s * c * apq + c * c * aqq;
            m[p][q] = 0.0;
            m[q][p] = 0.0;
            for r in 0..3 {
                if r == p || r == q {
                    continue;
                }
                let (arp, arq) = (m[r][p], m[r][q]);
                m[r][p] = c * arp - s * arq;
                m[p][r] = m[r][p];
                m[r][q] = s * arp + c * arq;
                m[q][r] = m[r][q];
            }
        }
    }
    [m[0][0], m[1][1], m[2][2]]
}

/// Nonlinear correlation coefficient: entropy-normalized mutual information
/// between two planes, in `[0, 1]`.
fn ncc(x: &GrayImage, y: &GrayImage) -> f64 {
    let (mi, hx, hy) = mi_entropies(x, y);
    if hx + hy <= 0.0 {
        0.0
    } else {
        (2.0 * mi / (hx + hy)).clamp(0.0, 1.0)
    }
}

/// Nonlinear correlation information entropy of the (a, b, f) triple:
/// one minus the base-256 entropy of the correlation-matrix eigenvalue
/// distribution. Fully correlated triples score 1; independent ones about
/// 0.8019.
pub fn q_ncie(a: &GrayImage, b: &GrayImage, f: &GrayImage) -> f64 {
    let r_ab = ncc(a, b);
    let r_af = ncc(a, f);
    let r_bf = ncc(b, f);
    let r = [
        [1.0, r_ab, r_af],
        [r_ab, 1.0, r_bf],
        [r_af, r_bf, 1.0],
    ];
    let eig = sym3_eigenvalues(r);
    let ln256 = (BINS as f64).ln();
    let mut q = 1.0;
    for lam in eig {
        let p = lam / 3.0;
        if p > 0.0 {
            q += p * p.ln() / ln256;
        }
    }
    q.clamp(0.0, 1.0)
}

/// Signed Sobel gradients (replicate borders).
fn sobel_signed(img: &GrayImage) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = img.dims();
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let sample = |dx: isize, dy: isize| img.get_clamped(x as isize + dx, y as isize + dy);
            gx[y * w + x] = -sample(-1, -1) + sample(1, -1) - 2.0 * sample(-1, 0) + 2.0 * sample(1, 0)
                - sample(-1, 1)
                + sample(1, 1);
            gy[y * w + x] = -sample(-1, -1) - 2.0 * sample(0, -1) - sample(1, -1)
                + sample(-1, 1)
                + 2.0 * sample(0, 1)
                + sample(1, 1);
        }
    }
    (gx, gy)
}

// Edge-preservation sigmoid constants (strength, then orientation).
const GAMMA_G: f64 = 0.9994;
const K_G: f64 = -15.0;
const SIGMA_G: f64 = 0.5;
const GAMMA_O: f64 = 0.9879;
const K_O: f64 = -22.0;
const SIGMA_O: f64 = 0.8;

#[inline]
fn strength_sigmoid(g: f64) -> f64 {
    GAMMA_G / (1.0 + (K_G * (g - SIGMA_G)).exp())
}

#[inline]
fn orientation_sigmoid(a: f64) -> f64 {
    GAMMA_O / (1.0 + (K_O * (a - SIGMA_O)).exp())
}

/// Per-pixel edge preservation of (strength, orientation) pairs: the two
/// sigmoids normalized so perfect preservation scores exactly 1.
fn edge_preservation(g_src: f64, a_src: f64, g_fused: f64, a_fused: f64) -> f64 {
    let rel_strength = if g_src > g_fused {
        if g_src > 0.0 { g_fused / g_src } else { 1.0 }
    } else if g_fused > 0.0 {
        g_src / g_fused
    } else {
        1.0
    };
    let delta = (a_src - a_fused).abs();
    let rel_orientation = ((delta - std::f64::consts::FRAC_PI_2).abs()) / std::f64::consts::FRAC_PI_2;
    let qg = strength_sigmoid(rel_strength) / strength_sigmoid(1.0);
    let qo = orientation_sigmoid(rel_orientation) / orientation_sigmoid(1.0);
    qg * qo
}

#[inline]
fn orientation_of(gx: f64, gy: f64) -> f64 {
    if gx == 0.0 && gy == 0.0 {
        0.0
    } else {
        (gy / gx).atan()
    }
}

/// Gradient-based edge-transfer score in `[0, 1]`: per-pixel edge
/// preservation from each source to the fused image, weighted by the source
/// edge strengths.
pub fn q_g(a: &GrayImage, b: &GrayImage, f: &GrayImage) -> f64 {
    let (gax, gay) = sobel_signed(a);
    let (gbx, gby) = sobel_signed(b);
    let (gfx, gfy) = sobel_signed(f);
    let n = gax.len();
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..n {
        let ga = gax[i].hypot(gay[i]);
        let gb = gbx[i].hypot(gby[i]);
        let gf = gfx[i].hypot(gfy[i]);
        let aa = orientation_of(gax[i], gay[i]);
        let ab = orientation_of(gbx[i], gby[i]);
        let af = orientation_of(gfx[i], gfy[i]);
        num += edge_preservation(ga, aa, gf, af) * ga + edge_preservation(gb, ab, gf, af) * gb;
        den += ga + gb;
    }
    if den <= 0.0 {
        0.0
    } else {
        (num / den).clamp(0.0, 1.0)
    }
}

/// One Haar analysis level on a raw raster: returns the half-size
/// (ll, strength, orientation) planes.
fn haar_level(data: &[f64], w: usize, h: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (hw, hh) = (w / 2, h / 2);
    let mut ll = vec![0.0; hw * hh];
    let mut strength = vec![0.0; hw * hh];
    let mut orientation = vec![0.0; hw * hh];
    for y in 0..hh {
        for x in 0..hw {
            let x0 = data[2 * y * w + 2 * x];
            let x1 = data[2 * y * w + 2 * x + 1];
            let x2 = data[(2 * y + 1) * w + 2 * x];
            let x3 = data[(2 * y + 1) * w + 2 * x + 1];
            let i = y * hw + x;
            ll[i] = 0.25 * (x0 + x1 + x2 + x3);
            let hl = 0.25 * ((x1 - x0) + (x3 - x2));
            let lh = 0.25 * ((x2 - x0) + (x3 - x1));
            let hh_c = 0.25 * (x0 - x1 - x2 + x3);
            strength[i] = (hl * hl + lh * lh + hh_c * hh_c).sqrt();
            orientation[i] = orientation_of(hl, lh);
        }
    }
    (ll, strength, orientation)
}

/// Replicate-pad an image on the right/bottom to a multiple of 4.
fn pad_to_multiple_of_4(img: &GrayImage) -> GrayImage {
    let (w, h) = img.dims();
    let pw = w.div_ceil(4) * 4;
    let ph = h.div_ceil(4) * 4;
    if pw == w && ph == h {
        return img.clone();
    }
    GrayImage::from_fn(pw, ph, |x, y| img.get_clamped(x as isize, y as isize)).expect("padded dims")
}

/// Two-level multiscale edge-preservation score. Per level, detail bands are
/// scored like [`q_g`]; levels combine with weights proportional to their
/// edge energy and summing to 2, so the score can exceed 1 for strong
/// multi-scale agreement.
pub fn q_m(a: &GrayImage, b: &GrayImage, f: &GrayImage) -> f64 {
    let pa = pad_to_multiple_of_4(a);
    let (mut w, mut h) = pa.dims();
    let mut cur = (
        pa.as_slice().to_vec(),
        pad_to_multiple_of_4(b).into_vec(),
        pad_to_multiple_of_4(f).into_vec(),
    );
    let mut level_scores = Vec::with_capacity(2);
    let mut level_energies = Vec::with_capacity(2);
    for _ in 0..2 {
        let (lla, sa, oa) = haar_level(&cur.0, w, h);
        let (llb, sb, ob) = haar_level(&cur.1, w, h);
        let (llf, sf, of) = haar_level(&cur.2, w, h);
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..sa.len() {
            num += edge_preservation(sa[i], oa[i], sf[i], of[i]) * sa[i]
                + edge_preservation(sb[i], ob[i], sf[i], of[i]) * sb[i];
            den += sa[i] + sb[i];
        }
        level_scores.push(if den > 0.0 { num / den } else { 0.0 });
        level_energies.push(den);
        cur = (lla, llb, llf);
        w /= 2;
        h /= 2;
    }
    let total: f64 = level_energies.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    level_scores
        .iter()
        .zip(level_energies.iter())
        .map(|(s, e)| 2.0 * e / total * s)
        .sum()
}
