use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::state::{ManyBodyState, C64};
use crate::error::{Error, Result};
use crate::grid::SpacetimeGrid;
use crate::tensor::CurrentDensity;

const ZERO: C64 = C64::new(0.0, 0.0);

/// Ensemble densities on the configuration lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityBundle {
    pub n_particles: usize,
    pub spatial_dims: usize,
    pub site_len: usize,
    /// Configuration volume element.
    pub volume: f64,
    /// `ρ = φ†φ`.
    pub rho: Vec<f64>,
    /// Total current of particle `a` along axis `i`: `current[a][i][c]`.
    pub current: Vec<Vec<Vec<f64>>>,
    /// Spin (curl) current, always three components: in reduced dimensions
    /// the out-of-lattice components still carry the Stern–Gerlach force.
    pub spin_current: Vec<Vec<Vec<f64>>>,
    /// `p = m j`.
    pub momentum: Vec<Vec<Vec<f64>>>,
    /// Kinetic energy density `|(−iħ∇_a − qA)φ|²/2m` of particle `a`.
    pub energy: Vec<Vec<f64>>,
    /// Spin density `φ†σ_k^{(a)}φ`: `spin[a][k][c]`.
    pub spin: Vec<[Vec<f64>; 3]>,
}

impl ManyBodyState {
    /// Covariant one-sided differences `Uφ(x+h) − φ(x)` and `φ(x) − U*φ(x−h)`
    /// of particle `a` along `axis` at configuration point `c`, spin `s`.
    pub(crate) fn one_sided(&self, a: usize, axis: usize, c: usize, s: usize) -> (C64, C64) {
        let ns = self.spin_len();
        let stride = self.particle_stride(a);
        let site = (c / stride) % self.site_len();
        let here = self.phi[c * ns + s];
        let value = |fwd: bool| match self.neighbour(a, site, axis, fwd) {
            Some((nb, u)) => u * self.phi[(c + nb * stride - site * stride) * ns + s],
            None => ZERO,
        };
        (value(true) - here, here - value(false))
    }

    /// Central difference of a real configuration field along particle `a`'s
    /// `axis` (values beyond a non-periodic edge are zero).
    pub(crate) fn config_derivative(&self, f: &[f64], a: usize, axis: usize) -> Vec<f64> {
        let stride = self.particle_stride(a);
        let l = self.site_len();
        let h = self.lattice.spacing[axis - 1];
        (0..f.len())
            .into_par_iter()
            .map(|c| {
                let site = (c / stride) % l;
                let get = |fwd: bool| match self.neighbour(a, site, axis, fwd) {
                    Some((nb, _)) => f[c + nb * stride - site * stride],
                    None => 0.0,
                };
                (get(true) - get(false)) / (2.0 * h)
            })
            .collect()
    }

    pub fn densities(&self) -> DensityBundle {
        let n = self.n_particles();
        let d = self.lattice.spatial_dims;
        let ns = self.spin_len();
        let len = self.config_len();
        let rho: Vec<f64> = self.phi.par_chunks(ns).map(|c| c.iter().map(|v| v.norm_sqr()).sum()).collect();
        let mut current = Vec::with_capacity(n);
        let mut spin_current = Vec::with_capacity(n);
        let mut momentum = Vec::with_capacity(n);
        let mut energy = Vec::with_capacity(n);
        let mut spin = Vec::with_capacity(n);
        for a in 0..n {
            let p = self.particles[a];
            let bit = self.spin_bit(a);
            // φ†σ_k φ on particle a's slot.
            let mut sa: [Vec<f64>; 3] = [vec![0.0; len], vec![0.0; len], vec![0.0; len]];
            let per_point: Vec<[f64; 3]> = self
                .phi
                .par_chunks(ns)
                .map(|c| {
                    let mut acc = [0.0; 3];
                    for s in 0..ns {
                        if s & bit != 0 {
                            continue;
                        }
                        let up = c[s];
                        let down = c[s | bit];
                        let off = up.conj() * down;
                        acc[0] += 2.0 * off.re;
                        acc[1] += 2.0 * off.im;
                        acc[2] += up.norm_sqr() - down.norm_sqr();
                    }
                    acc
                })
                .collect();
            for (ci, v) in per_point.iter().enumerate() {
                for k in 0..3 {
                    sa[k][ci] = v[k];
                }
            }
            let mut orbital = Vec::with_capacity(d);
            let mut eps = vec![0.0; len];
            for axis in 1..=d {
                let h = self.lattice.spacing[axis - 1];
                let pairs: Vec<(f64, f64)> = (0..len)
                    .into_par_iter()
                    .map(|c| {
                        let mut j = 0.0;
                        let mut e = 0.0;
                        for s in 0..ns {
                            let (fwd, bwd) = self.one_sided(a, axis, c, s);
                            // Central covariant difference = (fwd + bwd)/2h.
                            j += (self.phi[c * ns + s].conj() * (fwd + bwd)).im * self.hbar / (2.0 * h * p.m);
                            e += 0.5 * (fwd.norm_sqr() + bwd.norm_sqr()) * self.hbar * self.hbar / (2.0 * p.m * h * h);
                        }
                        (j, e)
                    })
                    .collect();
                orbital.push(pairs.iter().map(|x| x.0).collect::<Vec<f64>>());
                eps.iter_mut().zip(&pairs).for_each(|(v, x)| *v += x.1);
            }
            // Spin current −(g/q) ε_ilk ∂_l s_k over the particle's axes.
            let coef = if p.q != 0.0 { -p.g / p.q } else { 0.0 };
            let derivs: Vec<[Vec<f64>; 3]> = (1..=d)
                .map(|axis| [self.config_derivative(&sa[0], a, axis), self.config_derivative(&sa[1], a, axis), self.config_derivative(&sa[2], a, axis)])
                .collect();
            let mut curl = vec![vec![0.0; len]; 3];
            for (i, ci) in curl.iter_mut().enumerate() {
                for (l, dl) in derivs.iter().enumerate() {
                    for k in 0..3 {
                        let e = levi3(i, l, k);
                        if e != 0.0 && coef != 0.0 {
                            ci.iter_mut().zip(&dl[k]).for_each(|(v, dv)| *v += coef * e * dv);
                        }
                    }
                }
            }
            let total: Vec<Vec<f64>> = orbital.iter().zip(&curl[..d]).map(|(o, c)| o.iter().zip(c).map(|(x, y)| x + y).collect()).collect();
            momentum.push(total.iter().map(|j| j.iter().map(|v| p.m * v).collect()).collect());
            current.push(total);
            spin_current.push(curl);
            energy.push(eps);
            spin.push(sa);
        }
        DensityBundle {
            n_particles: n,
            spatial_dims: d,
            site_len: self.site_len(),
            volume: self.config_volume(),
            rho,
            current,
            spin_current,
            momentum,
            energy,
            spin,
        }
    }

    /// `½∫x × j_spin` of particle `a` about the origin (three components).
    pub fn spin_magnetic_moment(&self, bundle: &DensityBundle, a: usize) -> Result<[f64; 3]> {
        if a >= self.n_particles() {
            return Err(Error::Index { index: a, len: self.n_particles() });
        }
        let d = self.lattice.spatial_dims;
        let stride = self.particle_stride(a);
        let mut mu = [0.0; 3];
        for c in 0..self.config_len() {
            let site = (c / stride) % self.site_len();
            let p = self.lattice.point(site);
            let mut x = [0.0; 3];
            let mut j = [0.0; 3];
            x[..d].copy_from_slice(&p[1..d + 1]);
            for (i, ji) in j.iter_mut().enumerate() {
                *ji = bundle.spin_current[a][i][c];
            }
            mu[0] += 0.5 * (x[1] * j[2] - x[2] * j[1]);
            mu[1] += 0.5 * (x[2] * j[0] - x[0] * j[2]);
            mu[2] += 0.5 * (x[0] * j[1] - x[1] * j[0]);
        }
        Ok(mu.map(|v| v * bundle.volume))
    }
}

fn levi3(i: usize, j: usize, k: usize) -> f64 {
    match (i, j, k) {
        (0, 1, 2) | (1, 2, 0) | (2, 0, 1) => 1.0,
        (0, 2, 1) | (2, 1, 0) | (1, 0, 2) => -1.0,
        _ => 0.0,
    }
}

/// Single-particle densities obtained by integrating out the others.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalDensities {
    pub particle: usize,
    pub rho: Vec<f64>,
    pub current: Vec<Vec<f64>>,
    pub momentum: Vec<Vec<f64>>,
    pub energy: Vec<f64>,
}

impl DensityBundle {
    fn marginalize(&self, f: &[f64], a: usize) -> Vec<f64> {
        let l = self.site_len;
        let stride = l.pow((self.n_particles - 1 - a) as u32);
        let mut out = vec![0.0; l];
        for (c, v) in f.iter().enumerate() {
            out[(c / stride) % l] += v;
        }
        let rest = self.volume.powf((self.n_particles - 1) as f64 / self.n_particles as f64);
        out.iter_mut().for_each(|v| *v *= rest);
        out
    }

    pub fn marginals(&self, a: usize) -> Result<MarginalDensities> {
        if a >= self.n_particles {
            return Err(Error::Index { index: a, len: self.n_particles });
        }
        Ok(MarginalDensities {
            particle: a,
            rho: self.marginalize(&self.rho, a),
            current: self.current[a].iter().map(|c| self.marginalize(c, a)).collect(),
            momentum: self.momentum[a].iter().map(|c| self.marginalize(c, a)).collect(),
            energy: self.marginalize(&self.energy[a], a),
        })
    }

    /// `∫ρ` over configuration space.
    pub fn total(&self) -> f64 {
        self.rho.iter().sum::<f64>() * self.volume
    }

    /// Largest violation of `p = m j` (identically zero by construction).
    pub fn momentum_proviso_defect(&self, masses: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (a, m) in masses.iter().enumerate() {
            for (p, j) in self.momentum[a].iter().zip(&self.current[a]) {
                for (x, y) in p.iter().zip(j) {
                    worst = worst.max((x - m * y).abs());
                }
            }
        }
        worst
    }

    /// Smallest value of `ρ` and of any `ε_a` (both must be non-negative).
    pub fn min_density_and_energy(&self) -> (f64, f64) {
        let r = self.rho.iter().cloned().fold(f64::INFINITY, f64::min);
        let e = self.energy.iter().flatten().cloned().fold(f64::INFINITY, f64::min);
        (r, e)
    }
}

/// Configuration-space densities of a product of single-particle members.
#[derive(Debug, Clone)]
pub struct ProductDensity {
    pub n_particles: usize,
    pub site_len: usize,
    pub time_levels: usize,
    /// `rho[level][c]`.
    pub rho: Vec<Vec<f64>>,
    /// `current[level][a][i][c]`.
    pub current: Vec<Vec<Vec<Vec<f64>>>>,
    /// Largest `|∂_tρ + Σ_a ∇_a·j_a|` over interior levels.
    pub continuity_residual: f64,
}

/// Product densities `ρ = Π_a ρ_a(x_a)` and
/// `j_a = j_a(x_a) Π_{b≠a} ρ_b(x_b)` of normalised single-particle members
/// given as probability currents (`∫j⁰ = 1` on every level).
pub fn member_product_density(members: &[CurrentDensity]) -> Result<ProductDensity> {
    let first = members.first().ok_or_else(|| Error::Config("need at least one member".into()))?;
    let grid = &first.grid;
    for m in members {
        if !m.grid.same_lattice(grid) || m.grid.time_levels != grid.time_levels {
            return Err(Error::Shape("members live on different lattices".into()));
        }
        for level in 0..grid.time_levels {
            let q = m.charge_at(level);
            if (q - 1.0).abs() > 1e-8 {
                return Err(Error::Normalization(format!("member density integrates to {q} on level {level}")));
            }
        }
    }
    let n = members.len();
    let d = grid.spatial_dims;
    let l = grid.spatial_len();
    let len = l.checked_pow(n as u32).filter(|&c| c <= super::state::MAX_CONFIG_LEN).ok_or_else(|| Error::Config("product lattice too large".into()))?;
    let levels = grid.time_levels;
    let site = |c: usize, a: usize| (c / l.pow((n - 1 - a) as u32)) % l;
    let mut rho = Vec::with_capacity(levels);
    let mut current = Vec::with_capacity(levels);
    for level in 0..levels {
        let off = level * l;
        let r: Vec<f64> = (0..len).into_par_iter().map(|c| (0..n).map(|a| members[a].comps[0][off + site(c, a)]).product()).collect();
        let j: Vec<Vec<Vec<f64>>> = (0..n)
            .map(|a| {
                (1..=d)
                    .map(|i| {
                        (0..len)
                            .into_par_iter()
                            .map(|c| {
                                let others: f64 = (0..n).filter(|&b| b != a).map(|b| members[b].comps[0][off + site(c, b)]).product();
                                members[a].comps[i][off + site(c, a)] * others
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        rho.push(r);
        current.push(j);
    }
    let mut residual: f64 = 0.0;
    let dt = grid.time_step;
    let slice = grid.slice_grid(0);
    let strides = slice.strides();
    for level in 1..levels.saturating_sub(1) {
        for c in 0..len {
            let mut div = (rho[level + 1][c] - rho[level - 1][c]) / (2.0 * dt);
            for a in 0..n {
                let pstride = l.pow((n - 1 - a) as u32);
                let s = site(c, a);
                for i in 1..=d {
                    let h = grid.spacing[i - 1];
                    let nlen = grid.axis_len(i);
                    let ix = (s / strides[i]) % nlen;
                    let jv = &current[level][a][i - 1];
                    let fwd = if ix + 1 < nlen { jv[c + strides[i] * pstride] } else { 0.0 };
                    let bwd = if ix > 0 { jv[c - strides[i] * pstride] } else { 0.0 };
                    div += (fwd - bwd) / (2.0 * h);
                }
            }
            residual = residual.max(div.abs());
        }
    }
    Ok(ProductDensity { n_particles: n, site_len: l, time_levels: levels, rho, current, continuity_residual: residual })
}

/// Weighted average of configuration densities over ensemble members.
pub fn ensemble_average(densities: &[Vec<f64>], weights: &[f64]) -> Result<Vec<f64>> {
    if densities.is_empty() || densities.len() != weights.len() {
        return Err(Error::Shape("densities and weights do not match".into()));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Normalization(format!("weights sum to {total}")));
    }
    let len = densities[0].len();
    if densities.iter().any(|d| d.len() != len) {
        return Err(Error::Shape("densities have different lengths".into()));
    }
    Ok((0..len).map(|c| densities.iter().zip(weights).map(|(d, w)| d[c] * w / total).sum()).collect())
}

/// Numerical rank of a two-particle density viewed as a `site_len × site_len`
/// matrix (a product density has rank one).
pub fn joint_rank(rho: &[f64], site_len: usize, rel_tol: f64) -> Result<usize> {
    if rho.len() != site_len * site_len {
        return Err(Error::Shape("density is not a two-particle configuration field".into()));
    }
    let m = DMatrix::from_row_slice(site_len, site_len, rho);
    let sv = m.singular_values();
    let max = sv.iter().cloned().fold(0.0, f64::max);
    Ok(sv.iter().filter(|&&s| s > rel_tol * max).count())
}

/// Single-particle lattice of a member density helper.
pub fn member_grid(lattice: &SpacetimeGrid, levels: usize) -> SpacetimeGrid {
    let mut g = lattice.clone();
    g.time_levels = levels;
    g
}
