//! Tensor fields on space-time lattices and numerical checks of the
//! conservation laws of classical electrodynamics.
//!
//! Conventions: metric (+,−,−,−), c = 1, `ε^{0123} = +1`. Potentials and
//! currents are stored with upper indices, the Faraday tensor with lower
//! indices (`F_{μν} = ∂_μA_ν − ∂_νA_μ`, only `μ < ν` stored), and
//! energy-momentum tensors with upper indices (only `μ ≤ ν` stored).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fd::derivative;
use crate::grid::{SpacetimeGrid, StencilOrder, ETA};

/// Index of the antisymmetric pair `(mu, nu)`, `mu < nu`, among `n` axes.
pub fn pair_index(mu: usize, nu: usize, n: usize) -> usize {
    debug_assert!(mu < nu && nu < n);
    mu * n - mu * (mu + 1) / 2 + (nu - mu - 1)
}

/// Index of the symmetric pair `(mu, nu)`, `mu <= nu`, among `n` axes.
pub fn sym_index(mu: usize, nu: usize, n: usize) -> usize {
    let (a, b) = if mu <= nu { (mu, nu) } else { (nu, mu) };
    a * (2 * n - a + 1) / 2 + (b - a)
}

fn sym_len(n: usize) -> usize {
    n * (n + 1) / 2
}

fn check_grid(a: &SpacetimeGrid, b: &SpacetimeGrid) -> Result<()> {
    if a.same_lattice(b) {
        Ok(())
    } else {
        Err(Error::Shape("fields live on different lattices".into()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourPotential {
    pub grid: SpacetimeGrid,
    /// `A^mu`, `mu = 0..=spatial_dims`.
    pub comps: Vec<Vec<f64>>,
}

impl FourPotential {
    pub fn zeros(grid: &SpacetimeGrid) -> Self {
        Self { grid: grid.clone(), comps: vec![vec![0.0; grid.len()]; grid.rank()] }
    }

    /// Sample `f(x^mu) -> A^mu` on every lattice point.
    pub fn from_fn(grid: &SpacetimeGrid, f: impl Fn(&[f64]) -> Vec<f64> + Sync) -> Self {
        let r = grid.rank();
        let samples: Vec<Vec<f64>> = (0..grid.len()).into_par_iter().map(|i| f(&grid.point(i))).collect();
        let comps = (0..r).map(|mu| samples.iter().map(|s| s[mu]).collect()).collect();
        Self { grid: grid.clone(), comps }
    }

    pub fn is_finite(&self) -> bool {
        self.comps.iter().flatten().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurrentDensity {
    pub grid: SpacetimeGrid,
    /// `j^mu`.
    pub comps: Vec<Vec<f64>>,
    /// `∫ j^0 d^dx` on the first time level.
    pub total_charge: f64,
}

impl CurrentDensity {
    pub fn new(grid: &SpacetimeGrid, comps: Vec<Vec<f64>>) -> Self {
        let n = grid.spatial_len();
        let total_charge = comps[0][..n].iter().sum::<f64>() * grid.cell_volume();
        Self { grid: grid.clone(), comps, total_charge }
    }

    pub fn zeros(grid: &SpacetimeGrid) -> Self {
        Self::new(grid, vec![vec![0.0; grid.len()]; grid.rank()])
    }

    pub fn from_fn(grid: &SpacetimeGrid, f: impl Fn(&[f64]) -> Vec<f64> + Sync) -> Self {
        let a = FourPotential::from_fn(grid, f);
        Self::new(grid, a.comps)
    }

    /// `∂_mu j^mu`.
    pub fn continuity_residual(&self, order: StencilOrder) -> Result<ResidualField> {
        let mut out = vec![0.0; self.grid.len()];
        for mu in 0..self.grid.rank() {
            let d = derivative(&self.comps[mu], &self.grid, mu, order)?;
            out.iter_mut().zip(d).for_each(|(o, v)| *o += v);
        }
        Ok(ResidualField { grid: self.grid.clone(), comps: vec![out] })
    }

    /// `∫ j^0` on one time level.
    pub fn charge_at(&self, level: usize) -> f64 {
        let n = self.grid.spatial_len();
        self.comps[0][level * n..(level + 1) * n].iter().sum::<f64>() * self.grid.cell_volume()
    }
}

/// Faraday tensor `F_{μν}` (lower indices); antisymmetry is a storage
/// invariant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaradayTensor {
    pub grid: SpacetimeGrid,
    pub lower: Vec<Vec<f64>>,
}

impl FaradayTensor {
    pub fn zeros(grid: &SpacetimeGrid) -> Self {
        let r = grid.rank();
        Self { grid: grid.clone(), lower: vec![vec![0.0; grid.len()]; r * (r - 1) / 2] }
    }

    /// `F_{μν}` at point `p`.
    pub fn lower_at(&self, mu: usize, nu: usize, p: usize) -> f64 {
        let n = self.grid.rank();
        match mu.cmp(&nu) {
            std::cmp::Ordering::Equal => 0.0,
            std::cmp::Ordering::Less => self.lower[pair_index(mu, nu, n)][p],
            std::cmp::Ordering::Greater => -self.lower[pair_index(nu, mu, n)][p],
        }
    }

    /// `F^{μν}` at point `p`.
    pub fn upper_at(&self, mu: usize, nu: usize, p: usize) -> f64 {
        ETA[mu] * ETA[nu] * self.lower_at(mu, nu, p)
    }

    /// Full `F^{μν}` matrix at `p` (rank × rank, row-major).
    pub fn upper_matrix(&self, p: usize) -> [[f64; 4]; 4] {
        let n = self.grid.rank();
        let mut m = [[0.0; 4]; 4];
        for mu in 0..n {
            for nu in 0..n {
                m[mu][nu] = self.upper_at(mu, nu, p);
            }
        }
        m
    }

    /// Sample a field given by `f(x) -> F^{μν}` (upper indices, only the
    /// strictly upper triangle is read).
    pub fn from_upper_fn(grid: &SpacetimeGrid, f: impl Fn(&[f64]) -> [[f64; 4]; 4] + Sync) -> Self {
        let n = grid.rank();
        let samples: Vec<[[f64; 4]; 4]> = (0..grid.len()).into_par_iter().map(|i| f(&grid.point(i))).collect();
        let mut out = Self::zeros(grid);
        for mu in 0..n {
            for nu in mu + 1..n {
                let k = pair_index(mu, nu, n);
                out.lower[k] = samples.iter().map(|s| ETA[mu] * ETA[nu] * s[mu][nu]).collect();
            }
        }
        out
    }

    /// Uniform electric field `E` (spatial components) and, in 3+1D,
    /// magnetic field `B`.
    pub fn uniform(grid: &SpacetimeGrid, e: &[f64], b: [f64; 3]) -> Self {
        let d = grid.spatial_dims;
        let e: Vec<f64> = (0..d).map(|i| e.get(i).copied().unwrap_or(0.0)).collect();
        Self::from_upper_fn(grid, |_| electromagnetic_upper(&e, b, d))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        check_grid(&self.grid, &other.grid)?;
        let lower = self
            .lower
            .iter()
            .zip(&other.lower)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
            .collect();
        Ok(Self { grid: self.grid.clone(), lower })
    }

    pub fn scaled(&self, s: f64) -> Self {
        let lower = self.lower.iter().map(|c| c.iter().map(|v| v * s).collect()).collect();
        Self { grid: self.grid.clone(), lower }
    }

    /// Electric field `E^i = F^{i0}` at `p`.
    pub fn electric(&self, p: usize) -> Vec<f64> {
        (1..self.grid.rank()).map(|i| self.upper_at(i, 0, p)).collect()
    }
}

/// `F^{μν}` for given `E` and `B` (`F^{i0} = E^i`, `F^{ij} = −ε_{ijk}B^k`).
pub fn electromagnetic_upper(e: &[f64], b: [f64; 3], spatial_dims: usize) -> [[f64; 4]; 4] {
    let mut m = [[0.0; 4]; 4];
    for i in 0..spatial_dims {
        m[i + 1][0] = e[i];
        m[0][i + 1] = -e[i];
    }
    let eps = |i: usize, j: usize, k: usize| -> f64 {
        match (i, j, k) {
            (0, 1, 2) | (1, 2, 0) | (2, 0, 1) => 1.0,
            (0, 2, 1) | (2, 1, 0) | (1, 0, 2) => -1.0,
            _ => 0.0,
        }
    };
    for i in 0..spatial_dims {
        for j in 0..spatial_dims {
            let mut v = 0.0;
            for (k, bk) in b.iter().enumerate() {
                v -= eps(i, j, k) * bk;
            }
            m[i + 1][j + 1] = v;
        }
    }
    m
}

/// Symmetric rank-2 tensor `X^{μν}` such as Θ, T or P.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EMTensor {
    pub grid: SpacetimeGrid,
    pub comps: Vec<Vec<f64>>,
}

impl EMTensor {
    pub fn zeros(grid: &SpacetimeGrid) -> Self {
        Self { grid: grid.clone(), comps: vec![vec![0.0; grid.len()]; sym_len(grid.rank())] }
    }

    pub fn at(&self, mu: usize, nu: usize, p: usize) -> f64 {
        self.comps[sym_index(mu, nu, self.grid.rank())][p]
    }

    pub fn component(&self, mu: usize, nu: usize) -> &[f64] {
        &self.comps[sym_index(mu, nu, self.grid.rank())]
    }

    pub fn component_mut(&mut self, mu: usize, nu: usize) -> &mut Vec<f64> {
        let k = sym_index(mu, nu, self.grid.rank());
        &mut self.comps[k]
    }

    pub fn from_fn(grid: &SpacetimeGrid, f: impl Fn(&[f64]) -> [[f64; 4]; 4] + Sync) -> Self {
        let n = grid.rank();
        let samples: Vec<[[f64; 4]; 4]> = (0..grid.len()).into_par_iter().map(|i| f(&grid.point(i))).collect();
        let mut out = Self::zeros(grid);
        for mu in 0..n {
            for nu in mu..n {
                *out.component_mut(mu, nu) = samples.iter().map(|s| s[mu][nu]).collect();
            }
        }
        out
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.combine(other, 1.0)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.combine(other, -1.0)
    }

    fn combine(&self, other: &Self, s: f64) -> Result<Self> {
        check_grid(&self.grid, &other.grid)?;
        let comps = self
            .comps
            .iter()
            .zip(&other.comps)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + s * y).collect())
            .collect();
        Ok(Self { grid: self.grid.clone(), comps })
    }

    pub fn scaled(&self, s: f64) -> Self {
        let comps = self.comps.iter().map(|c| c.iter().map(|v| v * s).collect()).collect();
        Self { grid: self.grid.clone(), comps }
    }

    /// `g_{μν} X^{μν}` at every point.
    pub fn trace(&self) -> Vec<f64> {
        let n = self.grid.rank();
        (0..self.grid.len())
            .map(|p| (0..n).map(|mu| ETA[mu] * self.at(mu, mu, p)).sum())
            .collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.comps.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `∂_ν X^{νμ}` for every `μ`.
    pub fn divergence(&self, order: StencilOrder) -> Result<ResidualField> {
        let n = self.grid.rank();
        let mut comps = vec![vec![0.0; self.grid.len()]; n];
        for nu in 0..n {
            for (mu, out) in comps.iter_mut().enumerate() {
                let d = derivative(self.component(nu, mu), &self.grid, nu, order)?;
                out.iter_mut().zip(d).for_each(|(o, v)| *o += v);
            }
        }
        Ok(ResidualField { grid: self.grid.clone(), comps })
    }
}

/// Per-point vector (or scalar) residual with max and L2 norms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualField {
    pub grid: SpacetimeGrid,
    pub comps: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Norms {
    pub max: f64,
    pub l2: f64,
}

impl ResidualField {
    pub fn zeros_like(grid: &SpacetimeGrid, ncomp: usize) -> Self {
        Self { grid: grid.clone(), comps: vec![vec![0.0; grid.len()]; ncomp] }
    }

    /// Norms over points at least `margin[axis]` away from non-periodic
    /// edges. L2 uses the space-time volume element.
    pub fn norms(&self, margin: &[usize]) -> Norms {
        let pts = self.grid.interior(margin);
        let dv = self.grid.cell_volume() * self.grid.time_step;
        let mut max: f64 = 0.0;
        let mut sq = 0.0;
        for &p in &pts {
            let s: f64 = self.comps.iter().map(|c| c[p] * c[p]).sum();
            max = max.max(s.sqrt());
            sq += s;
        }
        Norms { max, l2: (sq * dv).sqrt() }
    }

    /// Norms restricted to a single time level.
    pub fn norms_at_level(&self, level: usize, spatial_margin: usize) -> Norms {
        let n = self.grid.spatial_len();
        let sg = self.grid.slice_grid(level);
        let sub = ResidualField {
            grid: sg,
            comps: self.comps.iter().map(|c| c[level * n..(level + 1) * n].to_vec()).collect(),
        };
        let mut margin = vec![spatial_margin; self.grid.rank()];
        margin[0] = 0;
        sub.norms(&margin)
    }

    pub fn max_norm(&self, margin: &[usize]) -> f64 {
        self.norms(margin).max
    }
}

/// `F_{μν} = ∂_μA_ν − ∂_νA_μ` with `A_ν = g_{νν} A^ν`.
pub fn faraday_from_potential(a: &FourPotential, order: StencilOrder) -> Result<FaradayTensor> {
    let g = &a.grid;
    let n = g.rank();
    for axis in 0..n {
        let len = g.axis_len(axis);
        if len < 3 {
            return Err(Error::Stencil { axis, points: len, needed: 3 });
        }
    }
    // d[mu][nu] = ∂_mu A^nu
    let mut d = Vec::with_capacity(n);
    for mu in 0..n {
        let mut row = Vec::with_capacity(n);
        for nu in 0..n {
            row.push(derivative(&a.comps[nu], g, mu, order)?);
        }
        d.push(row);
    }
    let mut f = FaradayTensor::zeros(g);
    for mu in 0..n {
        for nu in mu + 1..n {
            let k = pair_index(mu, nu, n);
            f.lower[k] = d[mu][nu].iter().zip(&d[nu][mu]).map(|(x, y)| ETA[nu] * x - ETA[mu] * y).collect();
        }
    }
    Ok(f)
}

fn theta_at(f: &FaradayTensor, p: usize) -> [[f64; 4]; 4] {
    let n = f.grid.rank();
    let up = f.upper_matrix(p);
    let mut inv = 0.0;
    for rho in 0..n {
        for lam in 0..n {
            inv += up[rho][lam] * ETA[rho] * ETA[lam] * up[rho][lam];
        }
    }
    let mut th = [[0.0; 4]; 4];
    for nu in 0..n {
        for mu in nu..n {
            let mut v = if nu == mu { 0.25 * ETA[nu] * inv } else { 0.0 };
            for rho in 0..n {
                v += up[nu][rho] * ETA[rho] * up[rho][mu];
            }
            th[nu][mu] = v;
            th[mu][nu] = v;
        }
    }
    th
}

/// Canonical electromagnetic tensor
/// `Θ^{νμ} = ¼ g^{νμ} F^{ρλ}F_{ρλ} + F^{νρ} F_ρ^{ μ}`.
pub fn canonical_tensor(f: &FaradayTensor) -> EMTensor {
    let g = &f.grid;
    let n = g.rank();
    let samples: Vec<[[f64; 4]; 4]> = (0..g.len()).into_par_iter().map(|p| theta_at(f, p)).collect();
    let mut out = EMTensor::zeros(g);
    for nu in 0..n {
        for mu in nu..n {
            *out.component_mut(nu, mu) = samples.iter().map(|s| s[nu][mu]).collect();
        }
    }
    out
}

/// Bilinear interaction part of the canonical tensor between an external
/// field and an ensemble field:
/// `½ g^{μν} F̃^{ρλ}F_{ρλ} + F̃^{μλ} F_λ^{ ν} + F^{μλ} F̃_λ^{ ν}`.
pub fn interaction_tensor(f_ext: &FaradayTensor, f_ens: &FaradayTensor) -> Result<EMTensor> {
    check_grid(&f_ext.grid, &f_ens.grid)?;
    let g = &f_ext.grid;
    let n = g.rank();
    let samples: Vec<[[f64; 4]; 4]> = (0..g.len())
        .into_par_iter()
        .map(|p| {
            let a = f_ens.upper_matrix(p);
            let b = f_ext.upper_matrix(p);
            let mut inv = 0.0;
            for r in 0..n {
                for l in 0..n {
                    inv += a[r][l] * ETA[r] * ETA[l] * b[r][l];
                }
            }
            let mut th = [[0.0; 4]; 4];
            for mu in 0..n {
                for nu in mu..n {
                    let mut v = if mu == nu { 0.5 * ETA[mu] * inv } else { 0.0 };
                    for l in 0..n {
                        v += a[mu][l] * ETA[l] * b[l][nu] + b[mu][l] * ETA[l] * a[l][nu];
                    }
                    th[mu][nu] = v;
                }
            }
            th
        })
        .collect();
    let mut out = EMTensor::zeros(g);
    for mu in 0..n {
        for nu in mu..n {
            *out.component_mut(mu, nu) = samples.iter().map(|s| s[mu][nu]).collect();
        }
    }
    Ok(out)
}

/// `F^μ_ν j^ν` at every point.
pub fn lorentz_force_density(f: &FaradayTensor, j: &CurrentDensity) -> Result<Vec<Vec<f64>>> {
    check_grid(&f.grid, &j.grid)?;
    let n = f.grid.rank();
    let mut out = vec![vec![0.0; f.grid.len()]; n];
    for (mu, o) in out.iter_mut().enumerate() {
        for nu in 0..n {
            if mu == nu {
                continue;
            }
            for p in 0..f.grid.len() {
                o[p] += f.upper_at(mu, nu, p) * ETA[nu] * j.comps[nu][p];
            }
        }
    }
    Ok(out)
}

/// `∂_ν F^{νμ} − j^μ`.
pub fn maxwell_residual(f: &FaradayTensor, j: &CurrentDensity, order: StencilOrder) -> Result<ResidualField> {
    check_grid(&f.grid, &j.grid)?;
    let g = &f.grid;
    let n = g.rank();
    let mut comps = vec![vec![0.0; g.len()]; n];
    for (mu, out) in comps.iter_mut().enumerate() {
        for nu in 0..n {
            if nu == mu {
                continue;
            }
            let col: Vec<f64> = (0..g.len()).map(|p| f.upper_at(nu, mu, p)).collect();
            let d = derivative(&col, g, nu, order)?;
            out.iter_mut().zip(d).for_each(|(o, v)| *o += v);
        }
        out.iter_mut().zip(&j.comps[mu]).for_each(|(o, v)| *o -= v);
    }
    Ok(ResidualField { grid: g.clone(), comps })
}

/// Maxwell residual divided by the scale of its two terms
/// (`max|∂F| + max|j|`) over the interior.
pub fn relative_maxwell_residual(f: &FaradayTensor, j: &CurrentDensity, order: StencilOrder, margin: &[usize]) -> Result<f64> {
    let r = maxwell_residual(f, j, order)?;
    let zero = CurrentDensity::zeros(&j.grid);
    let div = maxwell_residual(f, &zero, order)?;
    let jr = ResidualField { grid: j.grid.clone(), comps: j.comps.clone() };
    let scale = div.max_norm(margin) + jr.max_norm(margin);
    let res = r.max_norm(margin);
    Ok(if scale > 0.0 { res / scale } else { res })
}

/// Poynting residual `∂_ν Θ^{νμ} + F^μ_ν Σ_a j^{(a)ν}`.
pub fn poynting_residual(f: &FaradayTensor, j_total: &CurrentDensity, order: StencilOrder) -> Result<ResidualField> {
    let theta = canonical_tensor(f);
    let mut r = theta.divergence(order)?;
    let force = lorentz_force_density(f, j_total)?;
    for (c, fc) in r.comps.iter_mut().zip(force) {
        c.iter_mut().zip(fc).for_each(|(o, v)| *o += v);
    }
    Ok(r)
}

/// `∂_ν P^{νμ}` for `P = Θ + Σ_a T^{(a)}`.
pub fn total_conservation_residual(theta: &EMTensor, t_list: &[EMTensor], order: StencilOrder) -> Result<ResidualField> {
    let mut p = theta.clone();
    for t in t_list {
        p = p.add(t)?;
    }
    p.divergence(order)
}

/// `∂_ν T^{νμ} − F^μ_ν j^ν`: the local Lorentz-force relation for a matter
/// tensor in an external field.
pub fn tenet_residual(t: &EMTensor, f_ext: &FaradayTensor, j: &CurrentDensity, order: StencilOrder) -> Result<ResidualField> {
    let mut r = t.divergence(order)?;
    let force = lorentz_force_density(f_ext, j)?;
    for (c, fc) in r.comps.iter_mut().zip(force) {
        c.iter_mut().zip(fc).for_each(|(o, v)| *o -= v);
    }
    Ok(r)
}

/// Levi-Civita symbol with `ε^{0123} = +1`.
pub fn levi_civita(i: usize, j: usize, k: usize, l: usize) -> f64 {
    let mut p = [i, j, k, l];
    if p.iter().any(|&x| x > 3) {
        return 0.0;
    }
    let mut sign = 1.0;
    for a in 0..4 {
        for b in a + 1..4 {
            if p[a] == p[b] {
                return 0.0;
            }
        }
    }
    for a in 0..4 {
        while p[a] != a {
            let t = p[a];
            p.swap(a, t);
            sign = -sign;
        }
    }
    sign
}

/// `∂_μ J^{μνρ}` with `J^{μνρ} = ε^{νρλσ} P^μ_σ x_λ`, one residual
/// component per pair `ν < ρ` (six in 3+1D).
pub fn angular_momentum_residual(p: &EMTensor, order: StencilOrder) -> Result<ResidualField> {
    let g = &p.grid;
    if g.rank() != 4 {
        return Err(Error::Unsupported("angular momentum residual needs 3+1 dimensions".into()));
    }
    let coords: Vec<[f64; 4]> = (0..g.len())
        .map(|i| {
            let x = g.point(i);
            [x[0], x[1], x[2], x[3]]
        })
        .collect();
    let mut comps = Vec::with_capacity(6);
    for nu in 0..4 {
        for rho in nu + 1..4 {
            let mut res = vec![0.0; g.len()];
            for mu in 0..4 {
                let jcomp: Vec<f64> = (0..g.len())
                    .into_par_iter()
                    .map(|i| {
                        let mut v = 0.0;
                        for lam in 0..4 {
                            for sig in 0..4 {
                                let e = levi_civita(nu, rho, lam, sig);
                                if e != 0.0 {
                                    v += e * p.at(mu, sig, i) * ETA[sig] * ETA[lam] * coords[i][lam];
                                }
                            }
                        }
                        v
                    })
                    .collect();
                let d = derivative(&jcomp, g, mu, order)?;
                res.iter_mut().zip(d).for_each(|(o, v)| *o += v);
            }
            comps.push(res);
        }
    }
    Ok(ResidualField { grid: g.clone(), comps })
}

/// Potential, total current and matter tensors sampled on one lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldBundle {
    pub potential: FourPotential,
    pub current: CurrentDensity,
    pub tensors: Vec<EMTensor>,
}

impl FieldBundle {
    pub fn grid(&self) -> &SpacetimeGrid {
        &self.potential.grid
    }

    /// Current consistent with the discrete Maxwell operator applied to the
    /// bundle's potential.
    pub fn maxwell_consistent(potential: FourPotential, order: StencilOrder) -> Result<Self> {
        let f = faraday_from_potential(&potential, order)?;
        let zero = CurrentDensity::zeros(&potential.grid);
        let div = maxwell_residual(&f, &zero, order)?;
        let current = CurrentDensity::new(&potential.grid, div.comps);
        Ok(Self { potential, current, tensors: Vec::new() })
    }

    /// Relative Maxwell residual of the bundle over points `margin` away
    /// from the edges.
    pub fn maxwell_residual(&self, order: StencilOrder, margin: &[usize]) -> Result<f64> {
        let f = faraday_from_potential(&self.potential, order)?;
        relative_maxwell_residual(&f, &self.current, order, margin)
    }
}

/// Dilatation `A → λ⁻¹A(x/λ)`, `j → λ⁻³j(x/λ)`, `T → λ⁻⁴T(x/λ)`. The
/// lattice spacings are stretched by `λ` so samples are carried over
/// without resampling.
pub fn scale_transform(bundle: &FieldBundle, lambda: f64) -> Result<FieldBundle> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::Domain(format!("scale factor must be positive, got {lambda}")));
    }
    let grid = bundle.grid().dilated(lambda);
    let sc = |v: &Vec<Vec<f64>>, s: f64| -> Vec<Vec<f64>> { v.iter().map(|c| c.iter().map(|x| x * s).collect()).collect() };
    let potential = FourPotential { grid: grid.clone(), comps: sc(&bundle.potential.comps, 1.0 / lambda) };
    let current = CurrentDensity::new(&grid, sc(&bundle.current.comps, lambda.powi(-3)));
    let tensors = bundle
        .tensors
        .iter()
        .map(|t| EMTensor { grid: grid.clone(), comps: sc(&t.comps, lambda.powi(-4)) })
        .collect();
    Ok(FieldBundle { potential, current, tensors })
}

/// `A → −A(−x)`, `j → −j(−x)`, `T → T(−x)`. Every axis, time included, is
/// reversed; the lattice origin is mirrored so that index `i` of the result
/// sits at minus the coordinate of index `n−1−i` of the input.
pub fn pt_transform(bundle: &FieldBundle) -> FieldBundle {
    let g0 = bundle.grid();
    let mut grid = g0.clone();
    grid.t0 = -g0.coord(0, g0.time_levels - 1);
    for a in 0..g0.spatial_dims {
        grid.origin[a] = -g0.coord(a + 1, g0.shape[a] - 1);
    }
    let len = g0.len();
    // Reversing every axis of a row-major array reverses the flat order.
    let flip = |c: &Vec<f64>, s: f64| -> Vec<f64> { (0..len).map(|i| s * c[len - 1 - i]).collect() };
    let potential = FourPotential { grid: grid.clone(), comps: bundle.potential.comps.iter().map(|c| flip(c, -1.0)).collect() };
    let current = CurrentDensity::new(&grid, bundle.current.comps.iter().map(|c| flip(c, -1.0)).collect());
    let tensors = bundle
        .tensors
        .iter()
        .map(|t| EMTensor { grid: grid.clone(), comps: t.comps.iter().map(|c| flip(c, 1.0)).collect() })
        .collect();
    FieldBundle { potential, current, tensors }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Boundary;

    #[test]
    fn index_tables_are_dense() {
        for n in 2..=4 {
            let mut seen = vec![false; sym_len(n)];
            for a in 0..n {
                for b in a..n {
                    let k = sym_index(a, b, n);
                    assert!(!seen[k]);
                    seen[k] = true;
                    assert_eq!(k, sym_index(b, a, n));
                }
            }
            assert!(seen.iter().all(|&s| s));
            let mut seen = vec![false; n * (n - 1) / 2];
            for a in 0..n {
                for b in a + 1..n {
                    seen[pair_index(a, b, n)] = true;
                }
            }
            assert!(seen.iter().all(|&s| s));
        }
    }

    #[test]
    fn levi_civita_parity() {
        assert_eq!(levi_civita(0, 1, 2, 3), 1.0);
        assert_eq!(levi_civita(1, 0, 2, 3), -1.0);
        assert_eq!(levi_civita(1, 2, 3, 0), -1.0);
        assert_eq!(levi_civita(0, 0, 2, 3), 0.0);
    }

    #[test]
    fn uniform_electric_field_energy_density() {
        let g = SpacetimeGrid::centered(1, 5, 0.1, 0.1, 3, Boundary::Absorbing).unwrap();
        let f = FaradayTensor::uniform(&g, &[1.0], [0.0; 3]);
        assert_eq!(f.electric(0), vec![1.0]);
        let th = canonical_tensor(&f);
        assert!((th.at(0, 0, 4) - 0.5).abs() < 1e-14);
    }

    #[test]
    fn plane_wave_energy_and_flux() {
        // E = e_y cos(t - x), B = e_z cos(t - x): Θ^00 = Θ^01 = cos².
        let g = SpacetimeGrid::centered(3, 4, 0.3, 0.1, 2, Boundary::Absorbing).unwrap();
        let f = FaradayTensor::from_upper_fn(&g, |x| {
            let c = (x[0] - x[1]).cos();
            electromagnetic_upper(&[0.0, c, 0.0], [0.0, 0.0, c], 3)
        });
        let th = canonical_tensor(&f);
        for p in 0..g.len() {
            let x = g.point(p);
            let c2 = (x[0] - x[1]).cos().powi(2);
            assert!((th.at(0, 0, p) - c2).abs() < 1e-13);
            assert!((th.at(0, 1, p) - c2).abs() < 1e-13);
            assert!((th.at(1, 1, p) - c2).abs() < 1e-13);
            assert!(th.trace()[p].abs() < 1e-13);
        }
    }

    #[test]
    fn interaction_is_polarization_of_canonical() {
        let g = SpacetimeGrid::centered(3, 3, 0.5, 0.1, 3, Boundary::Absorbing).unwrap();
        let f1 = FaradayTensor::from_upper_fn(&g, |x| electromagnetic_upper(&[x[1], 0.3, -x[2]], [0.2, x[3], 1.0], 3));
        let f2 = FaradayTensor::from_upper_fn(&g, |x| electromagnetic_upper(&[0.5, x[0], 0.1], [x[1] * x[2], -0.4, 0.0], 3));
        let cross = canonical_tensor(&f1.add(&f2).unwrap()).sub(&canonical_tensor(&f1)).unwrap().sub(&canonical_tensor(&f2)).unwrap();
        let direct = interaction_tensor(&f1, &f2).unwrap();
        let diff = cross.sub(&direct).unwrap();
        assert!(diff.max_abs() < 1e-12);
    }

    #[test]
    fn faraday_of_linear_potential_is_exact() {
        let g = SpacetimeGrid::centered(2, 5, 0.2, 0.1, 3, Boundary::Absorbing).unwrap();
        // A^0 = -E x  => E^x = -∂_x A^0 = E
        let a = FourPotential::from_fn(&g, |x| vec![-0.7 * x[1], 0.0, 0.0]);
        let f = faraday_from_potential(&a, StencilOrder::Second).unwrap();
        for p in 0..g.len() {
            assert!((f.electric(p)[0] - 0.7).abs() < 1e-12);
            assert!(f.electric(p)[1].abs() < 1e-12);
        }
    }

    #[test]
    fn pt_and_scale_keep_maxwell_consistency() {
        let g = SpacetimeGrid::centered(1, 9, 0.25, 0.2, 7, Boundary::Absorbing).unwrap();
        let mut g = g;
        g.t0 = -0.6;
        let a = FourPotential::from_fn(&g, |x| vec![(x[1] + 0.3 * x[0]).sin(), x[0] * x[1] * x[1]]);
        let b = FieldBundle::maxwell_consistent(a, StencilOrder::Second).unwrap();
        let margin = [1, 1];
        assert!(b.maxwell_residual(StencilOrder::Second, &margin).unwrap() < 1e-13);
        let pt = pt_transform(&b);
        assert!(pt.maxwell_residual(StencilOrder::Second, &margin).unwrap() < 1e-13);
        assert!((pt.grid().t0 + 0.6).abs() < 1e-12);
        let s = scale_transform(&b, 2.5).unwrap();
        assert!(s.maxwell_residual(StencilOrder::Second, &margin).unwrap() < 1e-13);
        assert!(scale_transform(&b, -1.0).is_err());
    }
}
