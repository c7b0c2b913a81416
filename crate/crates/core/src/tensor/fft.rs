//! Real 2-D FFT over the last two axes with half-spectrum storage.
//!
//! Forward transforms are unnormalized sums with `e^{-i…}`; the inverse
//! carries `1/(nx·ny)`, so `irfft2(rfft2(x)) = x`. The half spectrum keeps
//! `ky ∈ [0, ny/2]`, stored row-major as `nx × (ny/2 + 1)`.

use std::cell::RefCell;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(n)
        } else {
            p.plan_fft_forward(n)
        }
    })
}

/// Number of stored `ky` columns for a real axis of length `ny`.
pub fn half_len(ny: usize) -> usize {
    ny / 2 + 1
}

/// Hermitian multiplicity of column `ky`: 1 for DC and Nyquist, 2 otherwise.
pub fn column_weight(ky: usize, ny: usize) -> f64 {
    if ky == 0 || (ny.is_multiple_of(2) && ky == ny / 2) {
        1.0
    } else {
        2.0
    }
}

/// Forward transform of one `nx × ny` real plane.
pub fn rfft2(x: &[f64], nx: usize, ny: usize) -> Vec<Complex64> {
    assert_eq!(x.len(), nx * ny, "rfft2 input length");
    let hy = half_len(ny);
    let fy = plan(ny, false);
    let mut row = vec![Complex64::new(0.0, 0.0); ny];
    let mut out = vec![Complex64::new(0.0, 0.0); nx * hy];
    for i in 0..nx {
        for j in 0..ny {
            row[j] = Complex64::new(x[i * ny + j], 0.0);
        }
        fy.process(&mut row);
        out[i * hy..(i + 1) * hy].copy_from_slice(&row[..hy]);
    }
    let fx = plan(nx, false);
    let mut col = vec![Complex64::new(0.0, 0.0); nx];
    for k in 0..hy {
        for i in 0..nx {
            col[i] = out[i * hy + k];
        }
        fx.process(&mut col);
        for i in 0..nx {
            out[i * hy + k] = col[i];
        }
    }
    out
}

/// Inverse of [`rfft2`]. Imaginary parts of the self-conjugate columns
/// (DC and Nyquist along `y`) are discarded, as with any c2r transform.
pub fn irfft2(z: &[Complex64], nx: usize, ny: usize) -> Vec<f64> {
    let hy = half_len(ny);
    assert_eq!(z.len(), nx * hy, "irfft2 input length");
    let mut work = z.to_vec();
    let fx = plan(nx, true);
    let mut col = vec![Complex64::new(0.0, 0.0); nx];
    for k in 0..hy {
        for i in 0..nx {
            col[i] = work[i * hy + k];
        }
        fx.process(&mut col);
        for i in 0..nx {
            work[i * hy + k] = col[i];
        }
    }
    let fy = plan(ny, true);
    let scale = 1.0 / (nx * ny) as f64;
    let mut row = vec![Complex64::new(0.0, 0.0); ny];
    let mut out = vec![0.0; nx * ny];
    for i in 0..nx {
        let half = &work[i * hy..(i + 1) * hy];
        row[..hy].copy_from_slice(half);
        for k in hy..ny {
            row[k] = half[ny - k].conj();
        }
        fy.process(&mut row);
        for j in 0..ny {
            out[i * ny + j] = row[j].re * scale;
        }
    }
    out
}
