//! Conjugate-gradient solver for the screened weighted Laplacian systems
//! `(Id + Dx' W Dx + Dy' W Dy) x = b` produced by the edge-preserving
//! filter. The weights sit on the forward-difference edges, one weight per
//! pixel applied to both of its outgoing differences (Neumann boundary:
//! differences leaving the raster are dropped).
//!
//! CG is preconditioned with one geometric multigrid V-cycle (damped-Jacobi
//! smoothing, 2x2 weight averaging between levels). The smoothness weights
//! span several orders of magnitude across a raster, which leaves
//! diagonally preconditioned CG far short of the iteration budget; the
//! V-cycle handles the smooth error modes and keeps iteration counts in the
//! tens.

/// One grid level: the edge weights, the inverse system diagonal, and
/// solver scratch.
struct Level {
    w: usize,
    h: usize,
    weights: Vec<f64>,
    inv_diag: Vec<f64>,
    apply_buf: Vec<f64>,
    residual: Vec<f64>,
    coarse_rhs: Vec<f64>,
    coarse_err: Vec<f64>,
}

/// y = (Id + D'WD) x on an arbitrary level, with the rows split so the
/// interior loop carries no boundary branches.
fn apply_stencil(w: usize, h: usize, wt: &[f64], x: &[f64], y: &mut [f64]) {
    for row in 0..h {
        let i0 = row * w;
        let x_row = &x[i0..i0 + w];
        let w_row = &wt[i0..i0 + w];
        let has_up = row > 0;
        let has_down = row + 1 < h;

        {
            let y_row = &mut y[i0..i0 + w];
            // interior columns
            for col in 1..w.saturating_sub(1) {
                let xi = x_row[col];
                y_row[col] = xi
                    + w_row[col] * (xi - x_row[col + 1])
                    + w_row[col - 1] * (xi - x_row[col - 1]);
            }
            // border columns
            let xi = x_row[0];
            y_row[0] = xi + w_row[0] * (xi - x_row[1.min(w - 1)]);
            if w > 1 {
                let xi = x_row[w - 1];
                y_row[w - 1] = xi + w_row[w - 2] * (xi - x_row[w - 2]);
            }
        }
        if has_down {
            let (head, tail) = y.split_at_mut(i0 + w);
            let y_row = &mut head[i0..];
            let x_dn = &x[i0 + w..i0 + 2 * w];
            let _ = &tail;
            for col in 0..w {
                y_row[col] += w_row[col] * (x_row[col] - x_dn[col]);
            }
        }
        if has_up {
            let x_up = &x[i0 - w..i0];
            let w_up = &wt[i0 - w..i0];
            let y_row = &mut y[i0..i0 + w];
            for col in 0..w {
                y_row[col] += w_up[col] * (x_row[col] - x_up[col]);
            }
        }
    }
}

fn inv_diag_of(w: usize, h: usize, wt: &[f64]) -> Vec<f64> {
    let mut diag = vec![1.0; w * h];
    for row in 0..h {
        for col in 0..w {
            let i = row * w + col;
            if col + 1 < w {
                diag[i] += wt[i];
            }
            if col > 0 {
                diag[i] += wt[i - 1];
            }
            if row + 1 < h {
                diag[i] += wt[i];
            }
            if row > 0 {
                diag[i] += wt[i - w];
            }
        }
    }
    diag.iter_mut().for_each(|d| *d = 1.0 / *d);
    diag
}

/// 2x2 block mean with clamped sampling, times `scale`.
fn restrict(fine: &[f64], fw: usize, fh: usize, cw: usize, ch: usize, scale: f64, out: &mut [f64]) {
    for cy in 0..ch {
        for cx in 0..cw {
            let mut sum = 0.0;
            for dy in 0..2 {
                for dx in 0..2 {
                    let fx = (2 * cx + dx).min(fw - 1);
                    let fy = (2 * cy + dy).min(fh - 1);
                    sum += fine[fy * fw + fx];
                }
            }
            out[cy * cw + cx] = 0.25 * sum * scale;
        }
    }
}

/// Bilinear prolongation, accumulated into `out`.
fn prolong_add(coarse: &[f64], cw: usize, ch: usize, fw: usize, fh: usize, out: &mut [f64]) {
    for y in 0..fh {
        let sy = ((y as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (ch - 1) as f64);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(ch - 1);
        let ty = sy - y0 as f64;
        for x in 0..fw {
            let sx = ((x as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (cw - 1) as f64);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(cw - 1);
            let tx = sx - x0 as f64;
            let top = coarse[y0 * cw + x0] * (1.0 - tx) + coarse[y0 * cw + x1] * tx;
            let bottom = coarse[y1 * cw + x0] * (1.0 - tx) + coarse[y1 * cw + x1] * tx;
            out[y * fw + x] += top * (1.0 - ty) + bottom * ty;
        }
    }
}

const SMOOTH_DAMPING: f64 = 0.8;
const PRE_POST_SWEEPS: usize = 2;
const COARSEST_SWEEPS: usize = 60;
const COARSEST_PIXELS: usize = 1024;

struct MgHierarchy {
    levels: Vec<Level>,
}

impl MgHierarchy {
    fn build(w: usize, h: usize, weights: &[f64]) -> Self {
        let mut levels = Vec::new();
        let mut cw = w;
        let mut ch = h;
        let mut cwt = weights.to_vec();
        loop {
            let n = cw * ch;
            let inv_diag = inv_diag_of(cw, ch, &cwt);
            let coarsest = n <= COARSEST_PIXELS || cw < 8 || ch < 8;
            let (nw, nh) = (cw.div_ceil(2), ch.div_ceil(2));
            levels.push(Level {
                w: cw,
                h: ch,
                weights: std::mem::take(&mut cwt),
                inv_diag,
                apply_buf: vec![0.0; n],
                residual: vec![0.0; n],
                coarse_rhs: vec![0.0; nw * nh],
                coarse_err: vec![0.0; nw * nh],
            });
            if coarsest {
                break;
            }
            let prev = levels.last().expect("just pushed");
            // Doubling the grid spacing halves the difference operator, so
            // the coarse smoothness weights carry a factor 1/4.
            let mut next = vec![0.0; nw * nh];
            restrict(&prev.weights, cw, ch, nw, nh, 0.25, &mut next);
            cw = nw;
            ch = nh;
            cwt = next;
        }
        Self { levels }
    }

    /// Damped-Jacobi sweeps on level `l`: x += omega * D^-1 (b - A x).
    fn smooth(&mut self, l: usize, x: &mut [f64], b: &[f64], sweeps: usize) {
        let lv = &mut self.levels[l];
        let mut buf = std::mem::take(&mut lv.apply_buf);
        for _ in 0..sweeps {
            let lv = &self.levels[l];
            apply_stencil(lv.w, lv.h, &lv.weights, x, &mut buf);
            for i in 0..x.len() {
                x[i] += SMOOTH_DAMPING * lv.inv_diag[i] * (b[i] - buf[i]);
            }
        }
        self.levels[l].apply_buf = buf;
    }

    /// One V-cycle from a zero initial guess; `x` receives the result.
    /// Symmetric smoothing keeps the cycle a valid SPD preconditioner.
    fn vcycle(&mut self, l: usize, x: &mut [f64], b: &[f64]) {
        x.iter_mut().for_each(|v| *v = 0.0);
        if l + 1 == self.levels.len() {
            self.smooth(l, x, b, COARSEST_SWEEPS);
            return;
        }
        self.smooth(l, x, b, PRE_POST_SWEEPS);

        let (fw, fh, nw, nh) = {
            let lv = &self.levels[l];
            let nx = &self.levels[l + 1];
            (lv.w, lv.h, nx.w, nx.h)
        };
        let mut residual = std::mem::take(&mut self.levels[l].residual);
        let mut buf = std::mem::take(&mut self.levels[l].apply_buf);
        {
            let lv = &self.levels[l];
            apply_stencil(fw, fh, &lv.weights, x, &mut buf);
        }
        for i in 0..residual.len() {
            residual[i] = b[i] - buf[i];
        }
        let mut coarse_rhs = std::mem::take(&mut self.levels[l].coarse_rhs);
        restrict(&residual, fw, fh, nw, nh, 1.0, &mut coarse_rhs);
        let mut coarse_err = std::mem::take(&mut self.levels[l].coarse_err);
        self.vcycle(l + 1, &mut coarse_err, &coarse_rhs);
        prolong_add(&coarse_err, nw, nh, fw, fh, x);
        self.levels[l].residual = residual;
        self.levels[l].apply_buf = buf;
        self.levels[l].coarse_rhs = coarse_rhs;
        self.levels[l].coarse_err = coarse_err;

        self.smooth(l, x, b, PRE_POST_SWEEPS);
    }
}

/// Solve `(Id + D'WD) x = rhs` from `x_init` by V-cycle preconditioned CG
/// to relative residual `tol`, capped at `max_iter` iterations (best effort
/// on exhaustion; the system is SPD so stagnation is benign).
pub(crate) fn solve_wls(
    width: usize,
    height: usize,
    weights: &[f64],
    rhs: &[f64],
    x_init: &[f64],
    tol: f64,
    max_iter: usize,
) -> Vec<f64> {
    let n = width * height;
    debug_assert_eq!(weights.len(), n);
    let mut x = x_init.to_vec();
    let mut q = vec![0.0; n];
    apply_stencil(width, height, weights, &x, &mut q);
    let mut r: Vec<f64> = rhs.iter().zip(q.iter()).map(|(b, a)| b - a).collect();
    let rhs_norm2 = rhs.iter().map(|v| v * v).sum::<f64>().max(1e-300);
    let stop_norm2 = tol * tol * rhs_norm2;
    let mut rnorm2: f64 = r.iter().map(|v| v * v).sum();
    if rnorm2 <= stop_norm2 {
        return x;
    }

    let mut mg = MgHierarchy::build(width, height, weights);
    let mut z = vec![0.0; n];
    mg.vcycle(0, &mut z, &r);
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(z.iter()).map(|(a, b)| a * b).sum();

    for _ in 0..max_iter {
        apply_stencil(width, height, weights, &p, &mut q);
        let pap: f64 = p.iter().zip(q.iter()).map(|(a, b)| a * b).sum();
        if pap <= 0.0 {
            break; // numerically exhausted
        }
        let alpha = rz / pap;
        rnorm2 = 0.0;
        for i in 0..n {
            x[i] += alpha * p[i];
            let ri = r[i] - alpha * q[i];
            r[i] = ri;
            rnorm2 += ri * ri;
        }
        if rnorm2 <= stop_norm2 {
            break;
        }
        mg.vcycle(0, &mut z, &r);
        let rz_next: f64 = r.iter().zip(z.iter()).map(|(a, b)| a * b).sum();
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    x
}
