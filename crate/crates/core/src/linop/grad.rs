use crate::Vector;

/// Periodic forward-difference gradient of a row-major `height × width` image.
///
/// The output interleaves the two components per pixel: entry `2k` holds the
/// horizontal difference `x[i, j+1] − x[i, j]` and entry `2k+1` the vertical
/// difference `x[i+1, j] − x[i, j]`, where `k = i·width + j`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Grad2d {
    pub height: usize,
    pub width: usize,
}

impl Grad2d {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width }
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub(crate) fn apply_into(&self, x: &Vector, out: &mut Vector) {
        let (h, w) = (self.height, self.width);
        for i in 0..h {
            let down = ((i + 1) % h) * w;
            for j in 0..w {
                let k = i * w + j;
                let right = i * w + (j + 1) % w;
                out[2 * k] = x[right] - x[k];
                out[2 * k + 1] = x[down + j] - x[k];
            }
        }
    }

    pub(crate) fn adjoint_into(&self, z: &Vector, out: &mut Vector) {
        let d = divergence2d(self.height, self.width, z);
        for (o, v) in out.iter_mut().zip(d.iter()) {
            *o = -v;
        }
    }
}

/// Discrete divergence of an interleaved vector field, using backward
/// differences with periodic wrap-around. It is the negative adjoint of
/// [`Grad2d`].
pub fn divergence2d(height: usize, width: usize, field: &Vector) -> Vector {
    let (h, w) = (height, width);
    let mut out = Vector::zeros(h * w);
    for i in 0..h {
        let up = ((i + h - 1) % h) * w;
        for j in 0..w {
            let k = i * w + j;
            let left = i * w + (j + w - 1) % w;
            out[k] = field[2 * k] - field[2 * left] + field[2 * k + 1] - field[2 * (up + j) + 1];
        }
    }
    out
}
