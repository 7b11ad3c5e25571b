//! Krylov solvers for matrix-free complex operators.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

pub type C64 = Complex64;

const REDUCE_CHUNK: usize = 2048;

/// Smallest slice handed to one rayon task in elementwise loops.
pub(crate) const PAR_MIN_LEN: usize = 4096;

/// Parallel reduction of `f(0) ⊕ … ⊕ f(n−1)` over fixed chunks combined in
/// index order, so the result does not depend on thread scheduling.
pub fn ordered_reduce<T: Send + Sync + Clone>(n: usize, identity: T, f: impl Fn(usize) -> T + Sync, op: impl Fn(T, T) -> T + Sync) -> T {
    if n <= REDUCE_CHUNK {
        return (0..n).fold(identity, |acc, i| op(acc, f(i)));
    }
    let parts: Vec<T> = (0..n.div_ceil(REDUCE_CHUNK))
        .into_par_iter()
        .map(|k| (k * REDUCE_CHUNK..((k + 1) * REDUCE_CHUNK).min(n)).fold(identity.clone(), |acc, i| op(acc, f(i))))
        .collect();
    parts.into_iter().fold(identity, &op)
}

pub fn ordered_sum<T: Send + Sync + Clone + Default + std::ops::Add<Output = T>>(n: usize, f: impl Fn(usize) -> T + Sync) -> T {
    ordered_reduce(n, T::default(), f, |a, b| a + b)
}

pub fn dot(a: &[C64], b: &[C64]) -> C64 {
    ordered_sum(a.len(), |i| a[i].conj() * b[i])
}

pub fn norm(a: &[C64]) -> f64 {
    ordered_sum(a.len(), |i| a[i].norm_sqr()).sqrt()
}

/// `y += s x`.
pub fn axpy(s: C64, x: &[C64], y: &mut [C64]) {
    y.par_iter_mut().zip(x).with_min_len(PAR_MIN_LEN).for_each(|(b, a)| *b += s * a);
}

pub fn scale(s: C64, x: &mut [C64]) {
    x.par_iter_mut().with_min_len(PAR_MIN_LEN).for_each(|v| *v *= s);
}

/// Solve `A x = b` by BiCGSTAB; returns the solution and the iteration count.
/// Convergence is declared when `‖b − Ax‖ ≤ tol ‖b‖`.
pub fn bicgstab(
    apply: &dyn Fn(&[C64], &mut [C64]),
    b: &[C64],
    x0: Option<&[C64]>,
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<C64>, usize)> {
    let n = b.len();
    let bnorm = norm(b);
    let mut x = x0.map(|v| v.to_vec()).unwrap_or_else(|| vec![C64::new(0.0, 0.0); n]);
    if bnorm == 0.0 {
        return Ok((vec![C64::new(0.0, 0.0); n], 0));
    }
    let mut ax = vec![C64::new(0.0, 0.0); n];
    apply(&x, &mut ax);
    let mut r: Vec<C64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let r_hat = r.clone();
    let mut rho = C64::new(1.0, 0.0);
    let mut alpha = C64::new(1.0, 0.0);
    let mut omega = C64::new(1.0, 0.0);
    let mut v = vec![C64::new(0.0, 0.0); n];
    let mut p = vec![C64::new(0.0, 0.0); n];
    let mut s = vec![C64::new(0.0, 0.0); n];
    let mut t = vec![C64::new(0.0, 0.0); n];
    let mut res = norm(&r);
    for it in 0..max_iter {
        if res <= tol * bnorm {
            return Ok((x, it));
        }
        let rho_new = dot(&r_hat, &r);
        if rho_new.norm() < 1e-300 {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        p.par_iter_mut()
            .zip(&r)
            .zip(&v)
            .with_min_len(PAR_MIN_LEN).for_each(|((p, r), v)| *p = r + beta * (*p - omega * v));
        apply(&p, &mut v);
        alpha = rho / dot(&r_hat, &v);
        s.par_iter_mut().zip(&r).zip(&v).with_min_len(PAR_MIN_LEN).for_each(|((s, r), v)| *s = r - alpha * v);
        if norm(&s) <= tol * bnorm {
            axpy(alpha, &p, &mut x);
            return Ok((x, it + 1));
        }
        apply(&s, &mut t);
        let tt = dot(&t, &t);
        omega = if tt.norm() > 0.0 { dot(&t, &s) / tt } else { C64::new(0.0, 0.0) };
        x.par_iter_mut()
            .zip(&p)
            .zip(&s)
            .with_min_len(PAR_MIN_LEN).for_each(|((x, p), s)| *x += alpha * p + omega * s);
        r.par_iter_mut().zip(&s).zip(&t).with_min_len(PAR_MIN_LEN).for_each(|((r, s), t)| *r = s - omega * t);
        res = norm(&r);
    }
    if res <= tol * bnorm {
        return Ok((x, max_iter));
    }
    Err(Error::Convergence { what: "BiCGSTAB".into(), residual: res / bnorm })
}

#[derive(Debug, Clone)]
pub struct Eigenpair {
    pub value: f64,
    pub vector: Vec<C64>,
    /// `‖Hv − Ev‖` for the unit vector `v`.
    pub residual: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct LanczosOptions {
    pub krylov_dim: usize,
    pub tol: f64,
    pub max_restarts: usize,
    pub seed: u64,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        Self { krylov_dim: 80, tol: 1e-9, max_restarts: 400, seed: 7 }
    }
}

/// Lowest `k` eigenpairs of a Hermitian operator of dimension `dim`.
///
/// Explicitly restarted Lanczos with full reorthogonalisation; converged
/// vectors are locked and projected out of later searches.
pub fn lanczos_lowest(
    apply: &dyn Fn(&[C64], &mut [C64]),
    dim: usize,
    k: usize,
    opts: LanczosOptions,
) -> Result<Vec<Eigenpair>> {
    if k > dim {
        return Err(Error::Domain(format!("asked for {k} eigenpairs of a {dim}-dimensional operator")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut locked: Vec<Eigenpair> = Vec::with_capacity(k);
    let m = opts.krylov_dim.min(dim.saturating_sub(locked.len())).max(1);
    while locked.len() < k {
        let mut start: Vec<C64> = (0..dim).map(|_| C64::new(rng.gen::<f64>() - 0.5, 0.0)).collect();
        let mut last_residual = f64::INFINITY;
        let mut found = None;
        for _ in 0..opts.max_restarts {
            let m_eff = m.min(dim - locked.len());
            let (value, vector) = lanczos_cycle(apply, &start, &locked, m_eff);
            let mut hv = vec![C64::new(0.0, 0.0); dim];
            apply(&vector, &mut hv);
            axpy(C64::new(-value, 0.0), &vector, &mut hv);
            last_residual = norm(&hv);
            if last_residual < opts.tol {
                found = Some(Eigenpair { value, vector, residual: last_residual });
                break;
            }
            start = vector;
        }
        match found {
            Some(p) => locked.push(p),
            None => {
                return Err(Error::Convergence { what: format!("Lanczos eigenpair {}", locked.len()), residual: last_residual })
            }
        }
    }
    locked.sort_by(|a, b| a.value.partial_cmp(&b.value).unwrap());
    Ok(locked)
}

fn orthogonalize(v: &mut [C64], basis: &[Vec<C64>]) {
    // Two passes of classical Gram–Schmidt.
    for _ in 0..2 {
        for b in basis {
            let c = dot(b, v);
            axpy(-c, b, v);
        }
    }
}

/// One Lanczos cycle from `start`; returns the lowest Ritz pair. The
/// projected matrix is assembled from every Gram–Schmidt coefficient, so
/// reorthogonalisation cannot produce spurious Ritz values.
fn lanczos_cycle(apply: &dyn Fn(&[C64], &mut [C64]), start: &[C64], locked: &[Eigenpair], m: usize) -> (f64, Vec<C64>) {
    let dim = start.len();
    let locked_vecs: Vec<Vec<C64>> = locked.iter().map(|p| p.vector.clone()).collect();
    let mut q = start.to_vec();
    orthogonalize(&mut q, &locked_vecs);
    let nq = norm(&q);
    scale(C64::new(1.0 / nq, 0.0), &mut q);
    let mut basis: Vec<Vec<C64>> = vec![q];
    let mut proj = DMatrix::<C64>::zeros(m, m);
    let mut w = vec![C64::new(0.0, 0.0); dim];
    let mut scale_est: f64 = 0.0;
    for j in 0..m {
        apply(&basis[j], &mut w);
        orthogonalize(&mut w, &locked_vecs);
        for (i, b) in basis.iter().enumerate() {
            proj[(i, j)] = dot(b, &w);
        }
        scale_est = scale_est.max(proj[(j, j)].re.abs());
        orthogonalize(&mut w, &basis);
        let b = norm(&w);
        if j + 1 == m || b < 1e-10 * scale_est.max(1.0) {
            break;
        }
        let mut next = w.clone();
        scale(C64::new(1.0 / b, 0.0), &mut next);
        basis.push(next);
    }
    let n = basis.len();
    let mut t = DMatrix::<C64>::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            // Hermitian part of the upper triangle.
            let v = if i == j { C64::new(proj[(i, i)].re, 0.0) } else { proj[(i, j)] };
            t[(i, j)] = v;
            t[(j, i)] = v.conj();
        }
    }
    let eig = SymmetricEigen::new(t);
    let (imin, &value) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap();
    let mut v = vec![C64::new(0.0, 0.0); dim];
    for (i, b) in basis.iter().enumerate() {
        axpy(eig.eigenvectors[(i, imin)], b, &mut v);
    }
    orthogonalize(&mut v, &locked_vecs);
    let nv = norm(&v);
    scale(C64::new(1.0 / nv, 0.0), &mut v);
    (value, v)
}

/// Solve `A x = b` for an operator that couples block `x` (of `bs`
/// consecutive entries) only to blocks `x − 1`, `x`, `x + 1`. The blocks are
/// read off the matrix-free operator with `3·bs` probes and eliminated
/// without pivoting, which is stable when `A + A†` is positive definite
/// (as for Crank–Nicolson operators `1 + iHdt/2ħ`).
pub fn block_tridiagonal_solve(apply: &dyn Fn(&[C64], &mut [C64]), bs: usize, b: &[C64]) -> Result<Vec<C64>> {
    let len = b.len();
    if bs == 0 || len % bs != 0 {
        return Err(Error::Shape(format!("length {len} is not a multiple of the block size {bs}")));
    }
    let n = len / bs;
    let zero = C64::new(0.0, 0.0);
    let mut diag = vec![DMatrix::from_element(bs, bs, zero); n];
    let mut lower = diag.clone(); // lower[x]: coupling of block x to x − 1
    let mut upper = diag.clone(); // upper[x]: coupling of block x to x + 1
    let mut probe = vec![zero; len];
    let mut out = vec![zero; len];
    for phase in 0..3 {
        for c in 0..bs {
            probe.iter_mut().for_each(|v| *v = zero);
            for x in (phase..n).step_by(3) {
                probe[x * bs + c] = C64::new(1.0, 0.0);
            }
            apply(&probe, &mut out);
            for y in 0..n {
                let block = match y % 3 {
                    r if r == phase => Some(&mut diag[y]),
                    r if (r + 1) % 3 == phase && y + 1 < n => Some(&mut upper[y]),
                    r if (r + 2) % 3 == phase && y > 0 => Some(&mut lower[y]),
                    _ => None,
                };
                if let Some(m) = block {
                    for r in 0..bs {
                        m[(r, c)] = out[y * bs + r];
                    }
                }
            }
        }
    }
    // Forward elimination keeping the inverted pivots.
    let mut inv = Vec::with_capacity(n);
    let mut rhs: Vec<DVector<C64>> = (0..n).map(|x| DVector::from_column_slice(&b[x * bs..(x + 1) * bs])).collect();
    for x in 0..n {
        let mut d = diag[x].clone();
        if x > 0 {
            let w = &lower[x] * &inv[x - 1];
            d -= &w * &upper[x - 1];
            let prev = rhs[x - 1].clone();
            rhs[x] -= &w * prev;
        }
        inv.push(d.try_inverse().ok_or_else(|| Error::Convergence { what: format!("singular pivot block {x}"), residual: f64::INFINITY })?);
    }
    let mut x_out = vec![zero; len];
    let mut next: Option<DVector<C64>> = None;
    for x in (0..n).rev() {
        let mut r = rhs[x].clone();
        if let Some(v) = &next {
            r -= &upper[x] * v;
        }
        let v = &inv[x] * r;
        x_out[x * bs..(x + 1) * bs].copy_from_slice(v.as_slice());
        next = Some(v);
    }
    Ok(x_out)
}

/// All eigenpairs of a small dense Hermitian matrix given as a real
/// symmetric matrix (ascending order).
pub fn dense_symmetric_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m);
    let mut idx: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let values = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(eig.eigenvectors.nrows(), idx.len(), |r, c| eig.eigenvectors[(r, idx[c])]);
    (values, vectors)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian_1d(n: usize) -> impl Fn(&[C64], &mut [C64]) {
        move |x: &[C64], y: &mut [C64]| {
            for i in 0..n {
                let l = if i > 0 { x[i - 1] } else { C64::new(0.0, 0.0) };
                let r = if i + 1 < n { x[i + 1] } else { C64::new(0.0, 0.0) };
                y[i] = x[i] * 2.0 - l - r;
            }
        }
    }

    #[test]
    fn lanczos_finds_dirichlet_laplacian_levels() {
        let n = 200;
        let op = laplacian_1d(n);
        let pairs = lanczos_lowest(&op, n, 3, LanczosOptions { tol: 1e-10, ..Default::default() }).unwrap();
        for (k, p) in pairs.iter().enumerate() {
            let exact = 2.0 - 2.0 * ((k + 1) as f64 * std::f64::consts::PI / (n + 1) as f64).cos();
            assert!((p.value - exact).abs() < 1e-10, "level {k}: {} vs {exact}", p.value);
        }
        assert!(dot(&pairs[0].vector, &pairs[1].vector).norm() < 1e-9);
    }

    #[test]
    fn bicgstab_solves_shifted_complex_system() {
        let n = 64;
        let lap = laplacian_1d(n);
        let shift = C64::new(1.0, 0.5);
        let op = move |x: &[C64], y: &mut [C64]| {
            lap(x, y);
            for (yi, xi) in y.iter_mut().zip(x) {
                *yi += shift * xi;
            }
        };
        let b: Vec<C64> = (0..n).map(|i| C64::new((i as f64).sin(), 1.0)).collect();
        let (x, _) = bicgstab(&op, &b, None, 1e-12, 500).unwrap();
        let mut ax = vec![C64::new(0.0, 0.0); n];
        op(&x, &mut ax);
        let err: f64 = ax.iter().zip(&b).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-10);
    }

    #[test]
    fn dense_eigen_sorted() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let (v, _) = dense_symmetric_eigen(m);
        assert!((v[0] - 1.0).abs() < 1e-12 && (v[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn block_tridiagonal_solve_inverts_a_crank_nicolson_operator() {
        // 1 + i·dt/2·H with H a Hermitian block-tridiagonal matrix (blocks of 2)
        let (n, bs) = (40, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut h = DMatrix::from_element(n * bs, n * bs, C64::new(0.0, 0.0));
        for i in 0..n * bs {
            for j in i..n * bs {
                if j / bs > i / bs + 1 {
                    continue;
                }
                let v = if i == j { C64::new(rng.gen::<f64>(), 0.0) } else { C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5) * 3.0 };
                h[(i, j)] = v;
                h[(j, i)] = v.conj();
            }
        }
        let a = DMatrix::identity(n * bs, n * bs) + h * C64::new(0.0, 2.0);
        let apply = |x: &[C64], y: &mut [C64]| y.copy_from_slice((&a * DVector::from_column_slice(x)).as_slice());
        let b: Vec<C64> = (0..n * bs).map(|i| C64::new((i as f64).sin(), 0.3)).collect();
        let x = block_tridiagonal_solve(&apply, bs, &b).unwrap();
        let mut ax = vec![C64::new(0.0, 0.0); b.len()];
        apply(&x, &mut ax);
        let err = ax.iter().zip(&b).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max);
        assert!(err < 1e-12, "{err}");
        assert!(block_tridiagonal_solve(&apply, 3, &b).is_err());
    }
}
