//! Discrete Fourier machinery on periodic grids.
//!
//! Conventions, fixed once for the whole crate:
//! * forward transform is unnormalized: C_k = Σ_x f(x) exp(-2πi k·x/N);
//! * inverse divides by N^d;
//! * frequencies are signed, index m ∈ [0,N) maps to k = m for m < N/2 and
//!   k = m - N otherwise;
//! * spectral differentiation multiplies by 2πi·k in unit-period coordinates
//!   and zeroes the Nyquist mode (m = N/2), which keeps derivatives of real
//!   fields real.

use crate::grid::GridSpec;
use num_complex::Complex64;
use rustfft::FftPlanner;
use std::cell::RefCell;
use std::f64::consts::PI;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Signed frequency for index m on an N-point axis.
#[inline]
pub fn signed_freq(m: usize, n: usize) -> i64 {
    if m < n / 2 {
        m as i64
    } else {
        m as i64 - n as i64
    }
}

fn fft_axis(data: &mut [Complex64], grid: &GridSpec, axis: usize, inverse: bool) {
    let n = grid.points_per_axis();
    let d = grid.dim();
    let stride = n.pow((d - 1 - axis) as u32);
    let outer = grid.len() / (n * stride);

    PLANNER.with(|planner| {
        let fft = {
            let mut p = planner.borrow_mut();
            if inverse {
                p.plan_fft_inverse(n)
            } else {
                p.plan_fft_forward(n)
            }
        };
        let mut line = vec![Complex64::default(); n];
        for o in 0..outer {
            for s in 0..stride {
                let base = o * n * stride + s;
                for (i, slot) in line.iter_mut().enumerate() {
                    *slot = data[base + i * stride];
                }
                fft.process(&mut line);
                for (i, &v) in line.iter().enumerate() {
                    data[base + i * stride] = v;
                }
            }
        }
    });
}

/// Unnormalized forward transform of a real grid.
pub fn forward(grid: &GridSpec, values: &[f64]) -> Vec<Complex64> {
    assert_eq!(values.len(), grid.len());
    let mut data: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    for axis in 0..grid.dim() {
        fft_axis(&mut data, grid, axis, false);
    }
    data
}

/// Inverse transform back to a real grid (imaginary parts are discarded;
/// they are at rounding level for coefficients of real fields).
pub fn inverse_real(grid: &GridSpec, coeffs: &[Complex64]) -> Vec<f64> {
    assert_eq!(coeffs.len(), grid.len());
    let mut data = coeffs.to_vec();
    for axis in 0..grid.dim() {
        fft_axis(&mut data, grid, axis, true);
    }
    let scale = 1.0 / grid.len() as f64;
    data.iter().map(|c| c.re * scale).collect()
}

/// Multiply coefficients by the spectral derivative symbol 2πi·k_axis.
/// The Nyquist mode on that axis is zeroed.
pub fn derivative_coeffs(grid: &GridSpec, coeffs: &[Complex64], axis: usize) -> Vec<Complex64> {
    let n = grid.points_per_axis();
    let d = grid.dim();
    let mut out = vec![Complex64::default(); coeffs.len()];
    let mut idx = vec![0usize; d];
    for (flat, &c) in coeffs.iter().enumerate() {
        grid.multi_index(flat, &mut idx);
        let m = idx[axis];
        if m == n / 2 {
            continue;
        }
        let k = signed_freq(m, n) as f64;
        out[flat] = c * Complex64::new(0.0, 2.0 * PI * k);
    }
    out
}

/// Evaluate the trigonometric interpolant at an arbitrary point of [0,1)^d.
///
/// Exact at grid nodes. The Nyquist mode is evaluated in its cosine form so
/// the interpolant of a real field is real.
pub fn eval_trig(grid: &GridSpec, coeffs: &[Complex64], point: &[f64]) -> f64 {
    let n = grid.points_per_axis();
    let d = grid.dim();
    debug_assert_eq!(point.len(), d);

    // Per-axis phase tables e^{2πi k θ}, Nyquist as cos(πNθ).
    let mut phases: Vec<Vec<Complex64>> = Vec::with_capacity(d);
    for &theta in point.iter() {
        let mut row = Vec::with_capacity(n);
        for m in 0..n {
            if m == n / 2 {
                row.push(Complex64::new((PI * n as f64 * theta).cos(), 0.0));
            } else {
                let ang = 2.0 * PI * signed_freq(m, n) as f64 * theta;
                row.push(Complex64::new(ang.cos(), ang.sin()));
            }
        }
        phases.push(row);
    }

    // Contract the last axis repeatedly: [N^{d-1}, N] x [N] -> [N^{d-1}].
    let mut current: Vec<Complex64> = coeffs.to_vec();
    for axis in (0..d).rev() {
        let rows = current.len() / n;
        let phase = &phases[axis];
        let mut next = vec![Complex64::default(); rows];
        for r in 0..rows {
            let mut acc = Complex64::default();
            let base = r * n;
            for m in 0..n {
                acc += current[base + m] * phase[m];
            }
            next[r] = acc;
        }
        current = next;
    }
    current[0].re / grid.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(grid: &GridSpec, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        let d = grid.dim();
        let mut x = vec![0.0; d];
        (0..grid.len())
            .map(|flat| {
                grid.node_coords(flat, &mut x);
                f(&x)
            })
            .collect()
    }

    #[test]
    fn roundtrip_is_identity() {
        let grid = GridSpec::new(1, 16).unwrap();
        let vals = sample(&grid, |x| {
            (2.0 * PI * x[0]).sin() + 0.3 * (2.0 * PI * 3.0 * x[1]).cos() + 0.7
        });
        let back = inverse_real(&grid, &forward(&grid, &vals));
        let max: f64 = vals
            .iter()
            .zip(&back)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max < 1e-12);
    }

    #[test]
    fn derivative_of_sine_is_cosine() {
        let grid = GridSpec::new(1, 32).unwrap();
        let vals = sample(&grid, |x| (2.0 * PI * x[0]).sin());
        let dc = derivative_coeffs(&grid, &forward(&grid, &vals), 0);
        let deriv = inverse_real(&grid, &dc);
        let expect = sample(&grid, |x| 2.0 * PI * (2.0 * PI * x[0]).cos());
        let max: f64 = deriv
            .iter()
            .zip(&expect)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max < 1e-9, "max deviation {max}");
    }

    #[test]
    fn trig_eval_exact_at_nodes_and_between() {
        let grid = GridSpec::new(1, 16).unwrap();
        let f = |x: &[f64]| (2.0 * PI * x[0]).sin() * (2.0 * PI * 2.0 * x[1]).cos();
        let vals = sample(&grid, f);
        let coeffs = forward(&grid, &vals);

        // Nodal exactness.
        let mut x = vec![0.0; 2];
        for flat in [0usize, 5, 77, 255] {
            grid.node_coords(flat, &mut x);
            assert!((eval_trig(&grid, &coeffs, &x) - vals[flat]).abs() < 1e-12);
        }
        // Band-limited functions are reproduced everywhere.
        for p in [[0.13, 0.71], [0.5, 0.25], [0.999, 0.001]] {
            assert!((eval_trig(&grid, &coeffs, &p) - f(&p)).abs() < 1e-11);
        }
    }

    #[test]
    fn nyquist_eval_stays_real_and_nodal_exact() {
        let grid = GridSpec::new(1, 8).unwrap();
        // cos(π N x) alternates ±1 on the nodes: pure Nyquist content.
        let vals = sample(&grid, |x| (PI * 8.0 * x[0]).cos());
        let coeffs = forward(&grid, &vals);
        let mut x = vec![0.0; 2];
        for flat in 0..grid.len() {
            grid.node_coords(flat, &mut x);
            assert!((eval_trig(&grid, &coeffs, &x) - vals[flat]).abs() < 1e-10);
        }
    }
}
