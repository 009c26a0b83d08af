//! Small 2-D FFT layer over `rustfft`, shared by the frequency-domain
//! transmission solver, the monogenic filter bank and FFT convolution.

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::cell::RefCell;
use std::sync::Arc;

/// Cached forward/inverse plans for one raster size, with a reusable
/// transpose scratch buffer.
pub(crate) struct Fft2 {
    width: usize,
    height: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
    scratch: RefCell<Vec<Complex<f64>>>,
}

impl Fft2 {
    pub fn new(width: usize, height: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            width,
            height,
            row_fwd: planner.plan_fft_forward(width),
            row_inv: planner.plan_fft_inverse(width),
            col_fwd: planner.plan_fft_forward(height),
            col_inv: planner.plan_fft_inverse(height),
            scratch: RefCell::new(vec![Complex::new(0.0, 0.0); width * height]),
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.width * self.height
    }

    fn transform(&self, buf: &mut [Complex<f64>], forward: bool) {
        let (row, col) = if forward {
            (&self.row_fwd, &self.col_fwd)
        } else {
            (&self.row_inv, &self.col_inv)
        };
        for chunk in buf.chunks_exact_mut(self.width) {
            row.process(chunk);
        }
        let mut scratch = self.scratch.borrow_mut();
        transpose_into(buf, self.width, self.height, &mut scratch);
        for chunk in scratch.chunks_exact_mut(self.height) {
            col.process(chunk);
        }
        transpose_into(&scratch, self.height, self.width, buf);
    }

    /// Forward transform of a real raster (unnormalized).
    pub fn forward_real(&self, data: &[f64]) -> Vec<Complex<f64>> {
        debug_assert_eq!(data.len(), self.len());
        let mut buf: Vec<Complex<f64>> = data.iter().map(|&v| Complex::new(v, 0.0)).collect();
        self.transform(&mut buf, true);
        buf
    }

    /// Inverse transform, normalized by `1/(width*height)`, real part only.
    pub fn inverse_real(&self, freq: &[Complex<f64>]) -> Vec<f64> {
        debug_assert_eq!(freq.len(), self.len());
        let mut buf = freq.to_vec();
        self.transform(&mut buf, false);
        let scale = 1.0 / self.len() as f64;
        buf.into_iter().map(|c| c.re * scale).collect()
    }
}

fn transpose_into(src: &[Complex<f64>], width: usize, height: usize, dst: &mut [Complex<f64>]) {
    for y in 0..height {
        for x in 0..width {
            dst[x * height + y] = src[y * width + x];
        }
    }
}

/// Signed frequency in cycles per pixel for DFT bin `k` of `n`.
#[inline]
pub(crate) fn dft_freq(k: usize, n: usize) -> f64 {
    if k <= n / 2 {
        k as f64 / n as f64
    } else {
        (k as f64 - n as f64) / n as f64
    }
}

/// Smallest 7-smooth length >= n (keeps padded transforms off the slow
/// prime-size paths).
pub(crate) fn next_fast_len(n: usize) -> usize {
    let mut candidate = n.max(1);
    'outer: loop {
        let mut m = candidate;
        for p in [2usize, 3, 5, 7] {
            while m % p == 0 {
                m /= p;
            }
        }
        if m == 1 {
            return candidate;
        }
        candidate += 1;
        if candidate > 4 * n + 16 {
            break 'outer;
        }
    }
    n
}
