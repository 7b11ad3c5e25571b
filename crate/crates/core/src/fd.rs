//! Finite-difference stencils on [`SpacetimeGrid`] samples.

use std::ops::{Add, Mul, Sub};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{SpacetimeGrid, StencilOrder};

/// Values a stencil can act on (real or complex samples).
pub trait Sample: Copy + Send + Sync + Add<Output = Self> + Sub<Output = Self> + Mul<f64, Output = Self> {}
impl<T> Sample for T where T: Copy + Send + Sync + Add<Output = T> + Sub<Output = T> + Mul<f64, Output = T> {}

/// `∂f/∂x^axis` sampled on `grid`.
///
/// Central differences in the interior (periodic wrap on periodic spatial
/// axes); second-order one-sided differences on the first and last point of
/// non-periodic axes. The fourth-order stencil falls back to second order
/// one point in from the edge.
pub fn derivative<T: Sample>(f: &[T], grid: &SpacetimeGrid, axis: usize, order: StencilOrder) -> Result<Vec<T>> {
    let n = grid.axis_len(axis);
    if f.len() != grid.len() {
        return Err(Error::Shape(format!("field has {} samples, grid has {}", f.len(), grid.len())));
    }
    if n < 3 {
        return Err(Error::Stencil { axis, points: n, needed: 3 });
    }
    let periodic = grid.is_periodic(axis);
    if periodic && order == StencilOrder::Fourth && n < 5 {
        return Err(Error::Stencil { axis, points: n, needed: 5 });
    }
    let stride = grid.strides()[axis];
    let h = grid.axis_step(axis);
    let inv2h = 0.5 / h;
    let inv12h = 1.0 / (12.0 * h);
    let mut out = Vec::with_capacity(f.len());
    (0..f.len())
        .into_par_iter()
        .map(|idx| {
            let i = (idx / stride) % n;
            let base = idx - i * stride;
            let at = |j: isize| -> T {
                let jj = if periodic { j.rem_euclid(n as isize) as usize } else { j as usize };
                f[base + jj * stride]
            };
            let i = i as isize;
            let ni = n as isize;
            let central2 = |i: isize| (at(i + 1) - at(i - 1)) * inv2h;
            if periodic {
                return match order {
                    StencilOrder::Second => central2(i),
                    StencilOrder::Fourth => ((at(i - 2) - at(i + 2)) + (at(i + 1) - at(i - 1)) * 8.0) * inv12h,
                };
            }
            if i == 0 {
                (at(1) * 4.0 - at(0) * 3.0 - at(2)) * inv2h
            } else if i == ni - 1 {
                (at(ni - 1) * 3.0 - at(ni - 2) * 4.0 + at(ni - 3)) * inv2h
            } else if order == StencilOrder::Fourth && i >= 2 && i <= ni - 3 {
                ((at(i - 2) - at(i + 2)) + (at(i + 1) - at(i - 1)) * 8.0) * inv12h
            } else {
                central2(i)
            }
        })
        .collect_into_vec(&mut out);
    Ok(out)
}

/// Second derivative along `axis` with the three-point stencil; zero beyond
/// non-periodic edges (Dirichlet).
pub fn second_derivative_dirichlet<T: Sample>(f: &[T], grid: &SpacetimeGrid, axis: usize, zero: T) -> Vec<T> {
    let n = grid.axis_len(axis);
    let stride = grid.strides()[axis];
    let h = grid.axis_step(axis);
    let inv = 1.0 / (h * h);
    let periodic = grid.is_periodic(axis);
    (0..f.len())
        .into_par_iter()
        .map(|idx| {
            let i = (idx / stride) % n;
            let base = idx - i * stride;
            let get = |j: isize| -> T {
                if periodic {
                    f[base + j.rem_euclid(n as isize) as usize * stride]
                } else if j < 0 || j >= n as isize {
                    zero
                } else {
                    f[base + j as usize * stride]
                }
            };
            let i = i as isize;
            (get(i + 1) + get(i - 1) - f[idx] * 2.0) * inv
        })
        .collect()
}

/// Observed convergence ratios `e[k] / e[k+1]` of a refinement sequence.
pub fn convergence_ratios(errors: &[f64]) -> Vec<f64> {
    errors.windows(2).map(|w| w[0] / w[1]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Boundary;
    use num_complex::Complex64;

    fn grid1(n: usize, boundary: Boundary) -> SpacetimeGrid {
        let h = 1.0 / n as f64;
        SpacetimeGrid::new(vec![n], vec![h], vec![0.0], 0.1, 1, boundary).unwrap()
    }

    #[test]
    fn constant_has_zero_derivative() {
        let g = grid1(16, Boundary::Absorbing);
        let f = vec![3.0; g.len()];
        let d = derivative(&f, &g, 1, StencilOrder::Second).unwrap();
        assert!(d.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn quadratic_exact_with_one_sided_edges() {
        let g = grid1(11, Boundary::Absorbing);
        let f: Vec<f64> = (0..11).map(|i| g.coord(1, i).powi(2)).collect();
        let d = derivative(&f, &g, 1, StencilOrder::Second).unwrap();
        for (i, v) in d.iter().enumerate() {
            assert!((v - 2.0 * g.coord(1, i)).abs() < 1e-12);
        }
    }

    #[test]
    fn periodic_orders_converge() {
        for (order, expected) in [(StencilOrder::Second, 4.0), (StencilOrder::Fourth, 16.0)] {
            let errs: Vec<f64> = [16usize, 32, 64]
                .iter()
                .map(|&n| {
                    let g = grid1(n, Boundary::Periodic);
                    let w = 2.0 * std::f64::consts::PI;
                    let f: Vec<f64> = (0..n).map(|i| (w * g.coord(1, i)).sin()).collect();
                    let d = derivative(&f, &g, 1, order).unwrap();
                    (0..n).map(|i| (d[i] - w * (w * g.coord(1, i)).cos()).abs()).fold(0.0, f64::max)
                })
                .collect();
            for r in convergence_ratios(&errs) {
                assert!(r > 0.9 * expected, "order {order:?} ratio {r}");
            }
        }
    }

    #[test]
    fn complex_samples_and_time_axis() {
        let g = SpacetimeGrid::new(vec![4], vec![1.0], vec![0.0], 0.5, 5, Boundary::Periodic).unwrap();
        let f: Vec<Complex64> = (0..g.len()).map(|idx| Complex64::new(0.0, g.point(idx)[0])).collect();
        let d = derivative(&f, &g, 0, StencilOrder::Second).unwrap();
        assert!(d.iter().all(|v| (v - Complex64::new(0.0, 1.0)).norm() < 1e-12));
    }

    #[test]
    fn too_few_points_is_stencil_error() {
        let g = grid1(2, Boundary::Absorbing);
        assert!(matches!(derivative(&[0.0, 1.0], &g, 1, StencilOrder::Second), Err(Error::Stencil { .. })));
    }
}
