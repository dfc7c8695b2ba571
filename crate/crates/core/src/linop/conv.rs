use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::LinopError;
use crate::Vector;

/// Periodic 2-D convolution of a row-major `height × width` image with a
/// small odd-sized kernel centred on its middle tap.
#[derive(Clone)]
pub struct Conv2d {
    height: usize,
    width: usize,
    taps: Vec<(isize, isize, f64)>,
    spectral: Option<Spectral>,
}

#[derive(Clone)]
struct Spectral {
    transfer: Vec<Complex64>,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Conv2d {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Conv2d")
            .field("height", &self.height)
            .field("width", &self.width)
            .field("taps", &self.taps.len())
            .field("spectral", &self.spectral.is_some())
            .finish()
    }
}

impl Conv2d {
    /// `kernel` is row-major with `kh × kw` entries, both dimensions odd.
    pub fn new(
        height: usize,
        width: usize,
        kernel: &[f64],
        kh: usize,
        kw: usize,
    ) -> Result<Self, LinopError> {
        if kh % 2 == 0 || kw % 2 == 0 || kernel.len() != kh * kw {
            return Err(LinopError::InvalidKernel(format!(
                "kernel must be odd-sized with kh*kw entries, got {kh}x{kw} and {} entries",
                kernel.len()
            )));
        }
        if kernel.iter().any(|v| !v.is_finite()) {
            return Err(LinopError::InvalidKernel("non-finite kernel entry".into()));
        }
        if height == 0 || width == 0 {
            return Err(LinopError::InvalidKernel("empty image".into()));
        }
        let (ch, cw) = ((kh / 2) as isize, (kw / 2) as isize);
        let mut taps = Vec::new();
        for a in 0..kh {
            for b in 0..kw {
                let v = kernel[a * kw + b];
                if v != 0.0 {
                    taps.push((a as isize - ch, b as isize - cw, v));
                }
            }
        }
        Ok(Self {
            height,
            width,
            taps,
            spectral: None,
        })
    }

    /// Normalized isotropic Gaussian kernel truncated at four standard
    /// deviations.
    pub fn gaussian(height: usize, width: usize, sigma: f64) -> Result<Self, LinopError> {
        if !(sigma > 0.0) {
            return Err(LinopError::InvalidKernel(format!("sigma must be positive, got {sigma}")));
        }
        let r = (4.0 * sigma).ceil() as usize;
        let size = 2 * r + 1;
        let g: Vec<f64> = (0..size)
            .map(|i| {
                let d = i as f64 - r as f64;
                (-0.5 * d * d / (sigma * sigma)).exp()
            })
            .collect();
        let mut k: Vec<f64> = g.iter().flat_map(|&a| g.iter().map(move |&b| a * b)).collect();
        let s: f64 = k.iter().sum();
        k.iter_mut().for_each(|v| *v /= s);
        Self::new(height, width, &k, size, size)
    }

    /// Normalized `size × size` box kernel.
    pub fn uniform(height: usize, width: usize, size: usize) -> Result<Self, LinopError> {
        let v = 1.0 / (size * size) as f64;
        Self::new(height, width, &vec![v; size * size], size, size)
    }

    /// Enables the FFT-based evaluation path.
    pub fn with_spectral(mut self) -> Self {
        let (h, w) = (self.height, self.width);
        let mut planner = FftPlanner::<f64>::new();
        let row_fwd = planner.plan_fft_forward(w);
        let row_inv = planner.plan_fft_inverse(w);
        let col_fwd = planner.plan_fft_forward(h);
        let col_inv = planner.plan_fft_inverse(h);
        let mut psf = vec![Complex64::new(0.0, 0.0); h * w];
        for &(di, dj, v) in &self.taps {
            let i = di.rem_euclid(h as isize) as usize;
            let j = dj.rem_euclid(w as isize) as usize;
            psf[i * w + j].re += v;
        }
        let mut spectral = Spectral {
            transfer: Vec::new(),
            row_fwd,
            row_inv,
            col_fwd,
            col_inv,
        };
        fft2(&mut psf, h, w, &spectral.row_fwd, &spectral.col_fwd);
        spectral.transfer = psf;
        self.spectral = Some(spectral);
        self
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn is_spectral(&self) -> bool {
        self.spectral.is_some()
    }

    pub(crate) fn apply_into(&self, x: &Vector, out: &mut Vector, adjoint: bool) {
        if let Some(sp) = &self.spectral {
            self.apply_spectral(sp, x, out, adjoint);
            return;
        }
        let (h, w) = (self.height, self.width);
        out.fill(0.0);
        let (xs, os) = (x.as_slice(), out.as_mut_slice());
        for &(di, dj, v) in &self.taps {
            let (di, dj) = if adjoint { (-di, -dj) } else { (di, dj) };
            // out[i, j] += v x[i − di, j − dj], split where the column index wraps.
            let shift = dj.rem_euclid(w as isize) as usize;
            for i in 0..h {
                let si = (i as isize - di).rem_euclid(h as isize) as usize;
                let src = &xs[si * w..(si + 1) * w];
                let dst = &mut os[i * w..(i + 1) * w];
                for (o, s) in dst[shift..].iter_mut().zip(&src[..w - shift]) {
                    *o += v * s;
                }
                for (o, s) in dst[..shift].iter_mut().zip(&src[w - shift..]) {
                    *o += v * s;
                }
            }
        }
    }

    fn apply_spectral(&self, sp: &Spectral, x: &Vector, out: &mut Vector, adjoint: bool) {
        let (h, w) = (self.height, self.width);
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft2(&mut buf, h, w, &sp.row_fwd, &sp.col_fwd);
        for (b, t) in buf.iter_mut().zip(&sp.transfer) {
            *b *= if adjoint { t.conj() } else { *t };
        }
        fft2(&mut buf, h, w, &sp.row_inv, &sp.col_inv);
        let scale = 1.0 / (h * w) as f64;
        for (o, b) in out.iter_mut().zip(&buf) {
            *o = b.re * scale;
        }
    }
}

fn fft2(buf: &mut [Complex64], h: usize, w: usize, row: &Arc<dyn Fft<f64>>, col: &Arc<dyn Fft<f64>>) {
    for r in buf.chunks_exact_mut(w) {
        row.process(r);
    }
    let mut column = vec![Complex64::new(0.0, 0.0); h];
    for j in 0..w {
        for i in 0..h {
            column[i] = buf[i * w + j];
        }
        col.process(&mut column);
        for i in 0..h {
            buf[i * w + j] = column[i];
        }
    }
}
