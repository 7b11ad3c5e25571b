//! Multi-dimensional complex FFTs on row-major arrays.

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;

/// In-place FFT over every axis of a row-major array. The inverse transform
/// is normalised by the total number of points.
pub fn fft_nd(data: &mut [Complex64], shape: &[usize], inverse: bool) {
    for axis in 0..shape.len() {
        fft_axis(data, shape, axis, inverse);
    }
    if inverse {
        let s = 1.0 / data.len() as f64;
        data.par_iter_mut().for_each(|v| *v *= s);
    }
}

/// Unnormalised FFT along one axis.
pub fn fft_axis(data: &mut [Complex64], shape: &[usize], axis: usize, inverse: bool) {
    let n = shape[axis];
    if n <= 1 {
        return;
    }
    let stride: usize = shape[axis + 1..].iter().product();
    let outer = data.len() / (n * stride);
    let mut planner = FftPlanner::new();
    let plan = if inverse { planner.plan_fft_inverse(n) } else { planner.plan_fft_forward(n) };
    if stride == 1 {
        data.par_chunks_mut(n).for_each(|line| plan.process(line));
        return;
    }
    // Gather strided lines, transform, scatter back.
    let lines: Vec<(usize, Vec<Complex64>)> = (0..outer * stride)
        .into_par_iter()
        .map(|l| {
            let (o, s) = (l / stride, l % stride);
            let base = o * n * stride + s;
            let mut line: Vec<Complex64> = (0..n).map(|i| data[base + i * stride]).collect();
            plan.process(&mut line);
            (base, line)
        })
        .collect();
    for (base, line) in lines {
        for (i, v) in line.into_iter().enumerate() {
            data[base + i * stride] = v;
        }
    }
}

/// Angular wavenumbers `2π k / (n h)` in FFT order.
pub fn wavenumbers(n: usize, h: f64) -> Vec<f64> {
    let l = n as f64 * h;
    (0..n)
        .map(|i| {
            let k = if i <= n / 2 { i as f64 } else { i as f64 - n as f64 };
            2.0 * std::f64::consts::PI * k / l
        })
        .collect()
}

/// Angular frequencies of a length-`n` series sampled every `dt`, FFT order.
pub fn frequencies(n: usize, dt: f64) -> Vec<f64> {
    wavenumbers(n, dt)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_3d() {
        let shape = [4, 6, 5];
        let orig: Vec<Complex64> = (0..120).map(|i| Complex64::new((i as f64).sin(), (i as f64 * 0.3).cos())).collect();
        let mut d = orig.clone();
        fft_nd(&mut d, &shape, false);
        fft_nd(&mut d, &shape, true);
        for (a, b) in d.iter().zip(&orig) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn single_mode_lands_in_one_bin() {
        let shape = [8, 8];
        let mut d: Vec<Complex64> = (0..64)
            .map(|i| {
                let (y, x) = (i / 8, i % 8);
                Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * (2.0 * y as f64 + 3.0 * x as f64) / 8.0)
            })
            .collect();
        fft_nd(&mut d, &shape, false);
        for (i, v) in d.iter().enumerate() {
            let expected = if i == 2 * 8 + 3 { 64.0 } else { 0.0 };
            assert!((v.norm() - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn wavenumber_layout() {
        let k = wavenumbers(4, 0.5);
        let base = 2.0 * std::f64::consts::PI / 2.0;
        assert_eq!(k, vec![0.0, base, 2.0 * base, -base]);
    }
}
