//! Dirac field in a static external four-potential.
//!
//! Standard (Dirac) representation. In 1+1 dimensions the spinor has two
//! components with `γ⁰ = σ_z`, `γ¹ = iσ_y` (so `α = σ_x`, `β = σ_z`); in
//! two and three spatial dimensions it has four components with
//! `α_i = [[0, σ_i], [σ_i, 0]]`, `β = diag(1, 1, −1, −1)`.
//!
//! Coupling: `D_μ = ħ∂_μ + iqA_μ`, so that `iγ^μD_μψ = mψ` is equivalent
//! to `iħ∂_tψ = Hψ` with `H = α·(−iħ∇ − qA) + βm + qA^0` and a packet of
//! charge `q` is accelerated by `qE`.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fd::derivative;
use crate::fft::{fft_nd, frequencies, wavenumbers};
use crate::grid::{Boundary, SpacetimeGrid, StencilOrder, ETA};
use crate::kg::{link_phases, WaveParams};
use crate::linalg::{bicgstab, block_tridiagonal_solve, norm};
use crate::tensor::{faraday_from_potential, interaction_tensor, tenet_residual, CurrentDensity, EMTensor, FaradayTensor, FourPotential, ResidualField};

pub type C64 = Complex64;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);
const I: C64 = C64::new(0.0, 1.0);

/// Dense spinor-space matrix, row-major.
pub type SpinMatrix = Vec<C64>;

/// Gamma-matrix constants for a given spatial dimension.
#[derive(Debug, Clone)]
pub struct Representation {
    pub components: usize,
    /// `α_i = γ⁰γ^i`.
    pub alpha: Vec<SpinMatrix>,
    /// `β = γ⁰`.
    pub beta: SpinMatrix,
}

impl Representation {
    pub fn for_dims(spatial_dims: usize) -> Self {
        let c = |re: f64, im: f64| C64::new(re, im);
        if spatial_dims == 1 {
            return Self {
                components: 2,
                alpha: vec![vec![ZERO, ONE, ONE, ZERO]],
                beta: vec![ONE, ZERO, ZERO, c(-1.0, 0.0)],
            };
        }
        let sigma = [
            [ZERO, ONE, ONE, ZERO],
            [ZERO, c(0.0, -1.0), c(0.0, 1.0), ZERO],
            [ONE, ZERO, ZERO, c(-1.0, 0.0)],
        ];
        let alpha = (0..spatial_dims)
            .map(|i| {
                let mut m = vec![ZERO; 16];
                for r in 0..2 {
                    for col in 0..2 {
                        m[r * 4 + col + 2] = sigma[i][r * 2 + col];
                        m[(r + 2) * 4 + col] = sigma[i][r * 2 + col];
                    }
                }
                m
            })
            .collect();
        let mut beta = vec![ZERO; 16];
        for k in 0..4 {
            beta[k * 5] = if k < 2 { ONE } else { c(-1.0, 0.0) };
        }
        Self { components: 4, alpha, beta }
    }

    /// `γ⁰γ^μ` (identity for `μ = 0`).
    pub fn gamma0_gamma(&self, mu: usize) -> SpinMatrix {
        if mu == 0 {
            let n = self.components;
            (0..n * n).map(|k| if k % (n + 1) == 0 { ONE } else { ZERO }).collect()
        } else {
            self.alpha[mu - 1].clone()
        }
    }
}

pub(crate) fn mat_vec(m: &[C64], v: &[C64], out: &mut [C64]) {
    let n = v.len();
    for r in 0..n {
        let mut s = ZERO;
        for c in 0..n {
            s += m[r * n + c] * v[c];
        }
        out[r] = s;
    }
}

/// `u† M v`.
pub(crate) fn sandwich(u: &[C64], m: &[C64], v: &[C64]) -> C64 {
    let n = u.len();
    let mut s = ZERO;
    for r in 0..n {
        let mut row = ZERO;
        for c in 0..n {
            row += m[r * n + c] * v[c];
        }
        s += u[r].conj() * row;
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergyBranch {
    Positive,
    Negative,
    /// Equal-weight superposition of the two projections.
    Mixed,
    /// No projection.
    Unprojected,
}

#[derive(Debug, Clone)]
pub struct DiracState {
    /// Spatial lattice; `time_step` is the Crank–Nicolson step.
    pub lattice: SpacetimeGrid,
    pub params: WaveParams,
    pub rep: Representation,
    /// Static `A^μ` on the lattice.
    pub potential: Vec<Vec<f64>>,
    /// Point-major, spinor component fastest.
    pub psi: Vec<C64>,
    pub time: f64,
    pub solver_tolerance: f64,
    links: Vec<Vec<C64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    pub steps: usize,
    pub norm_before: f64,
    pub norm_after: f64,
    /// Largest single-step change of `∫ψ†ψ`.
    pub max_step_drift: f64,
}

impl DiracState {
    pub fn new(lattice: SpacetimeGrid, params: WaveParams, potential: Vec<Vec<f64>>, psi: Vec<C64>) -> Result<Self> {
        params.validate()?;
        let dt = lattice.time_step;
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::Config(format!("time step {dt} must be positive and finite")));
        }
        let rep = Representation::for_dims(lattice.spatial_dims);
        let n = lattice.spatial_len();
        if potential.len() != lattice.rank() || potential.iter().any(|c| c.len() != n) || psi.len() != n * rep.components {
            return Err(Error::Shape("state arrays do not match the lattice".into()));
        }
        let links = link_phases(&lattice, &potential, -params.q / params.hbar);
        let mut lattice = lattice;
        lattice.time_levels = 1;
        Ok(Self { lattice, params, rep, potential, psi, time: 0.0, solver_tolerance: 1e-13, links })
    }

    pub fn components(&self) -> usize {
        self.rep.components
    }

    pub fn is_electrostatic(&self) -> bool {
        self.potential[1..].iter().all(|c| c.iter().all(|&v| v == 0.0))
    }

    /// `∫ψ†ψ d^dx`.
    pub fn norm_sq(&self) -> f64 {
        self.psi.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.lattice.cell_volume()
    }

    pub fn normalize(&mut self) {
        let n = self.norm_sq().sqrt();
        if n > 0.0 {
            self.psi.iter_mut().for_each(|v| *v /= n);
        }
    }

    /// `Hψ` for an arbitrary spinor field on the lattice.
    pub fn apply_hamiltonian(&self, psi: &[C64]) -> Vec<C64> {
        let nc = self.rep.components;
        let g = &self.lattice;
        let strides = g.strides();
        let periodic = g.boundary == Boundary::Periodic;
        let p = self.params;
        let v = &self.potential[0];
        let mut out = vec![ZERO; psi.len()];
        out.par_chunks_mut(nc).with_min_len(1024).enumerate().for_each(|(x, o)| {
            let mut tmp_buf = [ZERO; 4];
            let mut dpsi_buf = [ZERO; 4];
            let (tmp, dpsi) = (&mut tmp_buf[..nc], &mut dpsi_buf[..nc]);
            let here = &psi[x * nc..(x + 1) * nc];
            mat_vec(&self.rep.beta, here, tmp);
            for c in 0..nc {
                o[c] = tmp[c] * p.m + here[c] * (p.q * v[x]);
            }
            for i in 0..g.spatial_dims {
                let axis = i + 1;
                let n = g.axis_len(axis);
                let stride = strides[axis];
                let ix = (x / stride) % n;
                let h = g.axis_step(axis);
                let fwd = if ix + 1 < n {
                    Some((x + stride, self.links[i][x]))
                } else if periodic {
                    Some((x + stride - n * stride, self.links[i][x]))
                } else {
                    None
                };
                let bwd = if ix > 0 {
                    Some((x - stride, self.links[i][x - stride].conj()))
                } else if periodic {
                    let y = x + (n - 1) * stride;
                    Some((y, self.links[i][y].conj()))
                } else {
                    None
                };
                for c in 0..nc {
                    let mut d = ZERO;
                    if let Some((y, u)) = fwd {
                        d += u * psi[y * nc + c];
                    }
                    if let Some((y, u)) = bwd {
                        d -= u * psi[y * nc + c];
                    }
                    // −i D_i ψ with D_i = ħ ∂_i − iqA^i (covariant difference)
                    dpsi[c] = -I * d * (p.hbar / (2.0 * h));
                }
                mat_vec(&self.rep.alpha[i], dpsi, tmp);
                for c in 0..nc {
                    o[c] += tmp[c];
                }
            }
        });
        out
    }

    /// One Crank–Nicolson step `(1 + iHdt/2ħ)ψ⁺ = (1 − iHdt/2ħ)ψ`.
    pub fn step(&mut self) -> Result<()> {
        let k = C64::new(0.0, 0.5 * self.lattice.time_step / self.params.hbar);
        let hpsi = self.apply_hamiltonian(&self.psi);
        let rhs: Vec<C64> = self.psi.iter().zip(&hpsi).map(|(a, b)| a - k * b).collect();
        let op = |x: &[C64], y: &mut [C64]| {
            let hx = self.apply_hamiltonian(x);
            for ((yi, xi), hi) in y.iter_mut().zip(x).zip(hx) {
                *yi = xi + k * hi;
            }
        };
        let next = if self.lattice.spatial_dims == 1 && self.lattice.boundary != Boundary::Periodic {
            block_tridiagonal_solve(&op, self.rep.components, &rhs)?
        } else {
            let guess: Vec<C64> = self.psi.iter().zip(&hpsi).map(|(a, b)| a - k * b * 2.0).collect();
            bicgstab(&op, &rhs, Some(&guess), self.solver_tolerance, 500)?.0
        };
        self.psi = next;
        self.time += self.lattice.time_step;
        Ok(())
    }

    pub fn dirac_step(&mut self, n_steps: usize) -> Result<NormReport> {
        let before = self.norm_sq();
        let mut last = before;
        let mut max_step_drift: f64 = 0.0;
        for _ in 0..n_steps {
            self.step()?;
            let now = self.norm_sq();
            max_step_drift = max_step_drift.max((now - last).abs());
            last = now;
        }
        Ok(NormReport { steps: n_steps, norm_before: before, norm_after: last, max_step_drift })
    }

    /// Gaussian packet `u exp(−|x−c|²/(4σ²) + i p·x/ħ)`, projected onto
    /// the requested energy branch of the free lattice Hamiltonian and
    /// normalised to `∫ψ†ψ = 1`.
    #[allow(clippy::too_many_arguments)]
    pub fn gaussian_packet(
        lattice: SpacetimeGrid,
        params: WaveParams,
        potential: Vec<Vec<f64>>,
        center: &[f64],
        width: f64,
        momentum: &[f64],
        spinor: &[C64],
        branch: EnergyBranch,
    ) -> Result<Self> {
        let rep = Representation::for_dims(lattice.spatial_dims);
        if spinor.len() != rep.components {
            return Err(Error::Shape(format!("spinor needs {} components", rep.components)));
        }
        let g = lattice.slice_grid(0);
        let d = lattice.spatial_dims;
        let nc = rep.components;
        let mut psi = vec![ZERO; g.len() * nc];
        for i in 0..g.len() {
            let x = g.point(i);
            let mut r2 = 0.0;
            let mut phase = 0.0;
            for a in 0..d {
                r2 += (x[a + 1] - center[a]).powi(2);
                phase += momentum.get(a).copied().unwrap_or(0.0) * x[a + 1] / params.hbar;
            }
            let env = C64::from_polar((-r2 / (4.0 * width * width)).exp(), phase);
            for c in 0..nc {
                psi[i * nc + c] = env * spinor[c];
            }
        }
        let psi = project_energy(&lattice, &rep, &params, &psi, branch);
        let mut s = Self::new(lattice, params, potential, psi)?;
        if s.norm_sq() == 0.0 {
            return Err(Error::Preparation("projected packet vanishes".into()));
        }
        s.normalize();
        Ok(s)
    }

    /// Positive-energy plane wave `u(p) e^{ip·x/ħ}` with `u†u = 1`, on a
    /// periodic lattice; the eigenvector is taken from the lattice symbol.
    pub fn plane_wave(lattice: SpacetimeGrid, params: WaveParams, momentum: &[f64]) -> Result<(Self, f64)> {
        let rep = Representation::for_dims(lattice.spatial_dims);
        let nc = rep.components;
        let kvec: Vec<f64> = momentum.iter().map(|p| p / params.hbar).collect();
        let (h, e) = lattice_symbol(&lattice, &rep, &params, &kvec);
        // Positive-energy eigenvector: project a seed with (H + E)/2E.
        let mut u = vec![ZERO; nc];
        let seed: Vec<C64> = (0..nc).map(|c| if c == 0 { ONE } else { C64::new(0.1 * c as f64, 0.0) }).collect();
        mat_vec(&h, &seed, &mut u);
        for c in 0..nc {
            u[c] = (u[c] + seed[c] * e) / (2.0 * e);
        }
        let un = u.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        u.iter_mut().for_each(|v| *v /= un);
        let g = lattice.slice_grid(0);
        let mut psi = vec![ZERO; g.len() * nc];
        for i in 0..g.len() {
            let x = g.point(i);
            let ph: f64 = kvec.iter().enumerate().map(|(a, k)| k * x[a + 1]).sum();
            for c in 0..nc {
                psi[i * nc + c] = u[c] * C64::from_polar(1.0, ph);
            }
        }
        let potential = vec![vec![0.0; g.len()]; lattice.rank()];
        Ok((Self::new(lattice, params, potential, psi)?, e))
    }

    /// `⟨x⟩ = ∫x ψ†ψ / ∫ψ†ψ`.
    pub fn centroid(&self) -> Vec<f64> {
        let nc = self.rep.components;
        let g = &self.lattice;
        let mut acc = vec![0.0; g.spatial_dims];
        let mut tot = 0.0;
        for i in 0..g.spatial_len() {
            let w: f64 = self.psi[i * nc..(i + 1) * nc].iter().map(|v| v.norm_sqr()).sum();
            let x = g.point(i);
            for a in 0..g.spatial_dims {
                acc[a] += w * x[a + 1];
            }
            tot += w;
        }
        acc.iter().map(|v| v / tot).collect()
    }

    /// Spatial current `∫ j^i d^dx`.
    pub fn total_current(&self) -> Vec<f64> {
        let nc = self.rep.components;
        let dv = self.lattice.cell_volume();
        (0..self.lattice.spatial_dims)
            .map(|i| {
                (0..self.lattice.spatial_len())
                    .map(|x| sandwich(&self.psi[x * nc..(x + 1) * nc], &self.rep.alpha[i], &self.psi[x * nc..(x + 1) * nc]).re)
                    .sum::<f64>()
                    * self.params.q
                    * dv
            })
            .collect()
    }

    /// Pointwise `j^μ = qψ̄γ^μψ` of the current slice.
    pub fn current_slice(&self) -> Vec<Vec<f64>> {
        let nc = self.rep.components;
        let rank = self.lattice.rank();
        (0..rank)
            .map(|mu| {
                let m = self.rep.gamma0_gamma(mu);
                (0..self.lattice.spatial_len())
                    .map(|x| self.params.q * sandwich(&self.psi[x * nc..(x + 1) * nc], &m, &self.psi[x * nc..(x + 1) * nc]).re)
                    .collect()
            })
            .collect()
    }

    /// Record `levels` consecutive time levels (the current one first).
    pub fn record_window(&mut self, levels: usize) -> Result<DiracWindow> {
        let mut grid = self.lattice.clone();
        grid.time_levels = levels;
        grid.t0 = self.time;
        let mut psi = Vec::with_capacity(levels * self.psi.len());
        for l in 0..levels {
            if l > 0 {
                self.step()?;
            }
            psi.extend_from_slice(&self.psi);
        }
        let potential = FourPotential { grid: grid.clone(), comps: self.potential.iter().map(|c| c.repeat(levels)).collect() };
        Ok(DiracWindow { grid, psi, potential, params: self.params, rep: self.rep.clone() })
    }
}

/// Free lattice Hamiltonian at wave vector `k` and its positive eigenvalue.
fn lattice_symbol(lattice: &SpacetimeGrid, rep: &Representation, params: &WaveParams, k: &[f64]) -> (SpinMatrix, f64) {
    let nc = rep.components;
    let mut h: Vec<C64> = rep.beta.iter().map(|b| b * params.m).collect();
    let mut e2 = params.m * params.m;
    for (a, &ka) in k.iter().enumerate().take(lattice.spatial_dims) {
        let hh = lattice.spacing[a];
        let pa = params.hbar * (ka * hh).sin() / hh;
        e2 += pa * pa;
        for (hv, av) in h.iter_mut().zip(&rep.alpha[a]) {
            *hv += av * pa;
        }
    }
    debug_assert_eq!(h.len(), nc * nc);
    (h, e2.sqrt())
}

/// Project onto an energy branch of the free lattice Hamiltonian with
/// `P± = (1 ± H(k)/E(k))/2` (FFT, periodic extension).
pub fn project_energy(lattice: &SpacetimeGrid, rep: &Representation, params: &WaveParams, psi: &[C64], branch: EnergyBranch) -> Vec<C64> {
    if branch == EnergyBranch::Unprojected {
        return psi.to_vec();
    }
    let nc = rep.components;
    let shape = lattice.shape.clone();
    let np = lattice.spatial_len();
    let ks: Vec<Vec<f64>> = (0..lattice.spatial_dims).map(|a| wavenumbers(shape[a], lattice.spacing[a])).collect();
    let mut comps: Vec<Vec<C64>> = (0..nc).map(|c| (0..np).map(|x| psi[x * nc + c]).collect()).collect();
    for c in comps.iter_mut() {
        fft_nd(c, &shape, false);
    }
    let g = lattice.slice_grid(0);
    let mut v = vec![ZERO; nc];
    let mut hv = vec![ZERO; nc];
    let mut plus = comps.clone();
    let mut minus = comps.clone();
    for x in 0..np {
        let ix = g.unravel(x);
        let k: Vec<f64> = (0..lattice.spatial_dims).map(|a| ks[a][ix[a + 1]]).collect();
        let (h, e) = lattice_symbol(lattice, rep, params, &k);
        for c in 0..nc {
            v[c] = comps[c][x];
        }
        mat_vec(&h, &v, &mut hv);
        for c in 0..nc {
            let r = if e > 0.0 { hv[c] / e } else { ZERO };
            plus[c][x] = 0.5 * (v[c] + r);
            minus[c][x] = 0.5 * (v[c] - r);
        }
    }
    let weight = |f: &[Vec<C64>]| f.iter().flatten().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let comps: Vec<Vec<C64>> = match branch {
        EnergyBranch::Positive => plus,
        EnergyBranch::Negative => minus,
        _ => {
            // Equal weight on both branches.
            let (wp, wm) = (weight(&plus), weight(&minus));
            if wp == 0.0 || wm == 0.0 {
                return vec![ZERO; psi.len()];
            }
            plus.iter()
                .zip(&minus)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x / wp + y / wm).collect())
                .collect()
        }
    };
    let mut comps = comps;
    for c in comps.iter_mut() {
        fft_nd(c, &shape, true);
    }
    let mut out = vec![ZERO; psi.len()];
    for x in 0..np {
        for c in 0..nc {
            out[x * nc + c] = comps[c][x];
        }
    }
    out
}

/// Consecutive time levels of a Dirac solution on a space-time grid.
#[derive(Debug, Clone)]
pub struct DiracWindow {
    pub grid: SpacetimeGrid,
    pub psi: Vec<C64>,
    pub potential: FourPotential,
    pub params: WaveParams,
    pub rep: Representation,
}

impl DiracWindow {
    fn component(&self, c: usize) -> Vec<C64> {
        let nc = self.rep.components;
        (0..self.grid.len()).map(|p| self.psi[p * nc + c]).collect()
    }

    /// `D_μψ = ħ∂_μψ + iqA_μψ` for every `μ`, point-major like `psi`.
    pub fn covariant_derivatives(&self, order: StencilOrder) -> Result<Vec<Vec<C64>>> {
        let nc = self.rep.components;
        let p = self.params;
        let comps: Vec<Vec<C64>> = (0..nc).map(|c| self.component(c)).collect();
        (0..self.grid.rank())
            .map(|mu| {
                let mut out = vec![ZERO; self.psi.len()];
                for (c, comp) in comps.iter().enumerate() {
                    let d = derivative(comp, &self.grid, mu, order)?;
                    for (pt, dv) in d.into_iter().enumerate() {
                        let a = ETA[mu] * self.potential.comps[mu][pt];
                        out[pt * nc + c] = dv * p.hbar + C64::new(0.0, p.q * a) * comp[pt];
                    }
                }
                Ok(out)
            })
            .collect()
    }

    pub fn current(&self) -> CurrentDensity {
        let nc = self.rep.components;
        let comps = (0..self.grid.rank())
            .map(|mu| {
                let m = self.rep.gamma0_gamma(mu);
                (0..self.grid.len())
                    .map(|p| self.params.q * sandwich(&self.psi[p * nc..(p + 1) * nc], &m, &self.psi[p * nc..(p + 1) * nc]).re)
                    .collect()
            })
            .collect();
        CurrentDensity::new(&self.grid, comps)
    }

    /// Symmetrised tensor
    /// `T^{μν} = (i/4)(ψ̄γ^μ D↔^ν ψ + ψ̄γ^ν D↔^μ ψ) − ½g^{μν}(iψ̄γ^λ D↔_λ ψ − 2mψ̄ψ)`.
    pub fn emtensor(&self, order: StencilOrder) -> Result<EMTensor> {
        let nc = self.rep.components;
        let rank = self.grid.rank();
        let d = self.covariant_derivatives(order)?;
        let mats: Vec<SpinMatrix> = (0..rank).map(|mu| self.rep.gamma0_gamma(mu)).collect();
        let m = self.params.m;
        let samples: Vec<[[f64; 4]; 4]> = (0..self.grid.len())
            .into_par_iter()
            .map(|p| {
                let psi = &self.psi[p * nc..(p + 1) * nc];
                // a[mu][nu] = ψ†γ⁰γ^μ D^ν ψ
                let mut a = [[ZERO; 4]; 4];
                for mu in 0..rank {
                    for nu in 0..rank {
                        a[mu][nu] = sandwich(psi, &mats[mu], &d[nu][p * nc..(p + 1) * nc]) * ETA[nu];
                    }
                }
                let trace: f64 = (0..rank).map(|l| (a[l][l] * ETA[l]).im).sum();
                let mass = m * sandwich(psi, &self.rep.beta, psi).re;
                let mut t = [[0.0; 4]; 4];
                for mu in 0..rank {
                    for nu in mu..rank {
                        let mut v = -0.5 * (a[mu][nu].im + a[nu][mu].im);
                        if mu == nu {
                            v += ETA[mu] * (trace + mass);
                        }
                        t[mu][nu] = v;
                    }
                }
                t
            })
            .collect();
        let mut out = EMTensor::zeros(&self.grid);
        for mu in 0..rank {
            for nu in mu..rank {
                *out.component_mut(mu, nu) = samples.iter().map(|s| s[mu][nu]).collect();
            }
        }
        Ok(out)
    }

    pub fn tenet_residual(&self, order: StencilOrder) -> Result<ResidualField> {
        let t = self.emtensor(order)?;
        let j = self.current();
        let f = faraday_from_potential(&self.potential, order)?;
        tenet_residual(&t, &f, &j, order)
    }
}

/// Integrated comparison of `T⁰⁰ + Θ_int⁰⁰` with `Re ψ†Hψ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyIdentityReport {
    pub tensor_energy: f64,
    pub interaction_energy: f64,
    pub hamiltonian_energy: f64,
    /// `|∫(T⁰⁰ + Θ_int⁰⁰) − ∫Re ψ†Hψ| / |∫Re ψ†Hψ|`.
    pub integrated_deviation: f64,
    /// Pointwise max of the same difference (not expected to vanish: the
    /// two densities differ by a divergence).
    pub max_pointwise_deviation: f64,
}

/// Ensemble electric field of a charge density on one time level:
/// Gauss's law in 1D (`Ẽ(x) = ∫_{-∞}^x ρ − Q/2`), Coulomb field in 3D.
pub fn ensemble_field(grid: &SpacetimeGrid, rho: &[f64]) -> Result<FaradayTensor> {
    match grid.spatial_dims {
        1 => {
            let h = grid.spacing[0];
            let total: f64 = rho.iter().sum::<f64>() * h;
            let mut acc = 0.0;
            // Trapezoidal cumulative integral to each node.
            let e: Vec<f64> = (0..rho.len())
                .map(|i| {
                    if i > 0 {
                        acc += 0.5 * (rho[i - 1] + rho[i]) * h;
                    }
                    acc + 0.5 * rho[0] * h - 0.5 * total
                })
                .collect();
            let mut f = FaradayTensor::zeros(grid);
            // F_{01} = −F^{01} = F^{10} = E.
            f.lower[0] = e;
            Ok(f)
        }
        3 => {
            let j = CurrentDensity::new(grid, vec![rho.to_vec(), vec![0.0; rho.len()], vec![0.0; rho.len()], vec![0.0; rho.len()]]);
            let a = crate::green::potential_from_current(&j, crate::green::GreenKernelConfig::retarded())?.potential;
            let mut a3 = a.clone();
            // Static potential: replicate the level in time for the stencil.
            let mut g3 = grid.clone();
            g3.time_levels = 3;
            a3.grid = g3.clone();
            a3.comps = a.comps.iter().map(|c| c.repeat(3)).collect();
            let f3 = faraday_from_potential(&a3, StencilOrder::Second)?;
            let n = grid.spatial_len();
            Ok(FaradayTensor { grid: grid.clone(), lower: f3.lower.iter().map(|c| c[n..2 * n].to_vec()).collect() })
        }
        d => Err(Error::Unsupported(format!("ensemble field in {d} spatial dimensions"))),
    }
}

/// Energy identity on the centre level of a three-level window recorded from
/// `state` (which is advanced by two steps). `flip_interaction` negates
/// `Θ_int` as a negative control.
pub fn energy_identity_check(state: &mut DiracState, flip_interaction: bool) -> Result<EnergyIdentityReport> {
    if !state.is_electrostatic() {
        return Err(Error::Precondition("energy identity needs a purely electrostatic potential".into()));
    }
    if state.lattice.spatial_dims == 2 {
        return Err(Error::Unsupported("energy identity in 2 spatial dimensions".into()));
    }
    let w = state.record_window(3)?;
    let n = w.grid.spatial_len();
    let nc = w.rep.components;
    let order = StencilOrder::Second;
    let t = w.emtensor(order)?;
    let level = w.grid.slice_grid(1);
    let centre: Vec<C64> = w.psi[n * nc..2 * n * nc].to_vec();
    let j = w.current();
    let rho = &j.comps[0][n..2 * n];
    let f_ens = ensemble_field(&level, rho)?;
    let mut a_lvl = w.potential.clone();
    a_lvl.grid = w.grid.clone();
    let f_ext_full = faraday_from_potential(&a_lvl, order)?;
    let f_ext = FaradayTensor { grid: level.clone(), lower: f_ext_full.lower.iter().map(|c| c[n..2 * n].to_vec()).collect() };
    let th = interaction_tensor(&f_ext, &f_ens)?;
    let sign = if flip_interaction { -1.0 } else { 1.0 };
    let mut probe = state.clone();
    probe.psi = centre.clone();
    let hpsi = probe.apply_hamiltonian(&centre);
    let dv = w.grid.cell_volume();
    let mut tensor_energy = 0.0;
    let mut interaction_energy = 0.0;
    let mut hamiltonian_energy = 0.0;
    let mut max_pointwise: f64 = 0.0;
    for x in 0..n {
        let t00 = t.at(0, 0, n + x);
        let i00 = sign * th.at(0, 0, x);
        let hd: f64 = (0..nc).map(|c| (centre[x * nc + c].conj() * hpsi[x * nc + c]).re).sum();
        tensor_energy += t00 * dv;
        interaction_energy += i00 * dv;
        hamiltonian_energy += hd * dv;
        max_pointwise = max_pointwise.max((t00 + i00 - hd).abs());
    }
    let integrated_deviation = ((tensor_energy + interaction_energy - hamiltonian_energy) / hamiltonian_energy).abs();
    Ok(EnergyIdentityReport {
        tensor_energy,
        interaction_energy,
        hamiltonian_energy,
        integrated_deviation,
        max_pointwise_deviation: max_pointwise,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralPeak {
    pub frequency: f64,
    pub power: f64,
    /// Amplitude of the sinusoid that would produce this peak.
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZitterSpectrum {
    /// Peaks above the significance threshold, strongest first.
    pub peaks: Vec<SpectralPeak>,
    pub noise_floor: f64,
    pub resolution: f64,
}

/// Power ratio over the median that makes a spectral maximum significant.
pub const PEAK_SIGNIFICANCE: f64 = 1e3;

/// Peaks of the power spectrum of a uniformly sampled series (Hann window,
/// mean removed, 8× zero padding, parabolic interpolation of the peak).
/// Frequencies below `min_frequency` are ignored.
pub fn spectral_peaks(series: &[f64], dt: f64, min_frequency: f64) -> ZitterSpectrum {
    let n = series.len();
    let mean = series.iter().sum::<f64>() / n as f64;
    let padded = (8 * n).next_power_of_two();
    let mut buf = vec![ZERO; padded];
    for (i, v) in series.iter().enumerate() {
        let w = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos();
        buf[i] = C64::new((v - mean) * w, 0.0);
    }
    fft_nd(&mut buf, &[padded], false);
    let freqs = frequencies(padded, dt);
    let half = padded / 2;
    let power: Vec<f64> = buf[..half].iter().map(|v| v.norm_sqr()).collect();
    let band: Vec<usize> = (1..half - 1).filter(|&k| freqs[k] >= min_frequency).collect();
    let mut sorted: Vec<f64> = band.iter().map(|&k| power[k]).collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let noise_floor = if sorted.is_empty() { 0.0 } else { sorted[sorted.len() / 2] };
    let df = freqs[1];
    let mut peaks: Vec<SpectralPeak> = band
        .iter()
        .filter(|&&k| power[k] > power[k - 1] && power[k] >= power[k + 1])
        .filter(|&&k| power[k] > PEAK_SIGNIFICANCE * noise_floor && power[k] > 0.0)
        .map(|&k| {
            let (a, b, c) = (power[k - 1].ln(), power[k].ln(), power[k + 1].ln());
            let den = a - 2.0 * b + c;
            let shift = if den.abs() > 0.0 { 0.5 * (a - c) / den } else { 0.0 };
            SpectralPeak { frequency: freqs[k] + shift * df, power: power[k], amplitude: 4.0 * power[k].sqrt() / n as f64 }
        })
        .collect();
    peaks.sort_by(|a, b| b.power.partial_cmp(&a.power).unwrap());
    ZitterSpectrum { peaks, noise_floor, resolution: 2.0 * std::f64::consts::PI / (n as f64 * dt) }
}

/// Smallest oscillation amplitude of `∫j^1`, relative to the charge, that
/// counts as a current oscillation.
pub const MIN_CURRENT_AMPLITUDE: f64 = 1e-3;

/// Evolve for `window` time units, recording `∫j^1` every step, and return
/// the significant spectral peaks of that series.
pub fn zitterbewegung_spectrum(state: &mut DiracState, window: f64) -> Result<ZitterSpectrum> {
    let p = state.params;
    let dt = state.lattice.time_step;
    if p.m > 0.0 {
        let period = std::f64::consts::PI * p.hbar / p.m;
        if window < 20.0 * period {
            return Err(Error::Resolution(format!("window {window} shorter than 20 oscillation periods ({period})")));
        }
    }
    let steps = (window / dt).round() as usize;
    let mut series = Vec::with_capacity(steps + 1);
    series.push(state.total_current()[0]);
    for _ in 0..steps {
        state.step()?;
        series.push(state.total_current()[0]);
    }
    let min_f = 10.0 * 2.0 * std::f64::consts::PI / (steps as f64 * dt);
    let mut spec = spectral_peaks(&series, dt, min_f);
    spec.peaks.retain(|pk| pk.amplitude >= MIN_CURRENT_AMPLITUDE * p.q.abs());
    Ok(spec)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModulationFlag {
    Ok,
    SubCompton,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModulationDiagnostic {
    pub compton_length: f64,
    pub min_feature_scale: f64,
    pub flag: ModulationFlag,
}

impl ModulationDiagnostic {
    fn new(compton_length: f64, min_feature_scale: f64) -> Self {
        let flag = if min_feature_scale < compton_length { ModulationFlag::SubCompton } else { ModulationFlag::Ok };
        Self { compton_length, min_feature_scale, flag }
    }

    pub fn combine(self, other: Self) -> Self {
        Self::new(self.compton_length, self.min_feature_scale.min(other.min_feature_scale))
    }
}

/// Fraction of spectral power left outside the cutoff wavenumber.
pub const POWER_CUTOFF: f64 = 0.01;

/// Feature scale `1/k_c` of a set of fields on a lattice, where `k_c` is
/// the distance from the power centroid in k-space that contains all but
/// 1% of the spectral power.
pub fn feature_scale(lattice: &SpacetimeGrid, fields: &[Vec<C64>]) -> f64 {
    let shape = lattice.shape.clone();
    let g = lattice.slice_grid(0);
    let ks: Vec<Vec<f64>> = (0..lattice.spatial_dims).map(|a| wavenumbers(shape[a], lattice.spacing[a])).collect();
    let mut power = vec![0.0; g.len()];
    for f in fields {
        let mut buf = f.clone();
        fft_nd(&mut buf, &shape, false);
        for (p, v) in power.iter_mut().zip(&buf) {
            *p += v.norm_sqr();
        }
    }
    let total: f64 = power.iter().sum();
    if total == 0.0 {
        return f64::INFINITY;
    }
    let kvec = |i: usize| -> Vec<f64> {
        let ix = g.unravel(i);
        (0..lattice.spatial_dims).map(|a| ks[a][ix[a + 1]]).collect()
    };
    let mut centroid = vec![0.0; lattice.spatial_dims];
    for (i, p) in power.iter().enumerate() {
        for (c, k) in centroid.iter_mut().zip(kvec(i)) {
            *c += p * k / total;
        }
    }
    let mut dist: Vec<(f64, f64)> = power
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let d = kvec(i).iter().zip(&centroid).map(|(k, c)| (k - c).powi(2)).sum::<f64>().sqrt();
            (d, p)
        })
        .collect();
    dist.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut acc = 0.0;
    for (d, p) in dist {
        acc += p;
        if acc >= (1.0 - POWER_CUTOFF) * total {
            return if d > 0.0 { 1.0 / d } else { f64::INFINITY };
        }
    }
    f64::INFINITY
}

/// Feature scale of the spinor field compared with the Compton length.
pub fn modulation_guard_state(state: &DiracState) -> ModulationDiagnostic {
    let nc = state.rep.components;
    let fields: Vec<Vec<C64>> = (0..nc).map(|c| (0..state.lattice.spatial_len()).map(|x| state.psi[x * nc + c]).collect()).collect();
    let ell = feature_scale(&state.lattice, &fields);
    ModulationDiagnostic::new(state.params.hbar / state.params.m, ell)
}

/// Feature scale of an external potential, measured on its field strength
/// `−∇A^0` (a constant offset or uniform slope has no features).
pub fn modulation_guard_potential(lattice: &SpacetimeGrid, potential: &[Vec<f64>], params: &WaveParams) -> Result<ModulationDiagnostic> {
    let g = lattice.slice_grid(0);
    let mut fields = Vec::new();
    for a in 1..lattice.rank() {
        let d = derivative(&potential[0], &g, a, StencilOrder::Second)?;
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        fields.push(d.iter().map(|v| C64::new(v - mean, 0.0)).collect());
    }
    let ell = feature_scale(lattice, &fields);
    Ok(ModulationDiagnostic::new(params.hbar / params.m, ell))
}

/// Smoothed step `A^0 = (V/q)(1 + tanh(x/w))/2` along the first axis.
pub fn klein_step_potential(lattice: &SpacetimeGrid, height: f64, rise: f64, q: f64) -> Vec<Vec<f64>> {
    let d = lattice.spatial_dims;
    crate::kg::static_potential(lattice, move |x| {
        let mut a = vec![0.0; d + 1];
        a[0] = height / q * 0.5 * (1.0 + (x[1] / rise).tanh());
        a
    })
}

/// Magnetic moment `μ_i = ½∫ε_ijk x^j j^k` (3D lattices).
pub fn magnetic_moment(state: &DiracState) -> Result<[f64; 3]> {
    if state.lattice.spatial_dims != 3 {
        return Err(Error::Unsupported("magnetic moment needs 3 spatial dimensions".into()));
    }
    let j = state.current_slice();
    let g = &state.lattice;
    let c = state.centroid();
    let dv = g.cell_volume();
    let mut mu = [0.0; 3];
    for x in 0..g.spatial_len() {
        let p = g.point(x);
        let r = [p[1] - c[0], p[2] - c[1], p[3] - c[2]];
        let jj = [j[1][x], j[2][x], j[3][x]];
        mu[0] += 0.5 * (r[1] * jj[2] - r[2] * jj[1]) * dv;
        mu[1] += 0.5 * (r[2] * jj[0] - r[0] * jj[2]) * dv;
        mu[2] += 0.5 * (r[0] * jj[1] - r[1] * jj[0]) * dv;
    }
    Ok(mu)
}

/// Angular momentum `J_i = ∫ε_ijk x_j T^{0k}` about the centroid, with the
/// time derivative in `T^{0k}` taken from `iħ∂_tψ = Hψ` (3D lattices).
pub fn angular_momentum(state: &DiracState) -> Result<[f64; 3]> {
    if state.lattice.spatial_dims != 3 {
        return Err(Error::Unsupported("angular momentum needs 3 spatial dimensions".into()));
    }
    let nc = state.rep.components;
    let g = &state.lattice;
    let n = g.spatial_len();
    let p = state.params;
    // D_0ψ = ħ∂_tψ + iqA_0ψ = −iHψ + iqA^0ψ
    let hpsi = state.apply_hamiltonian(&state.psi);
    let d0: Vec<C64> = (0..n * nc).map(|k| -I * hpsi[k] + I * (p.q * state.potential[0][k / nc]) * state.psi[k]).collect();
    let mut grid = g.clone();
    grid.time_levels = 1;
    // Spatial D_iψ (lower) by central differences on a single level.
    let comps: Vec<Vec<C64>> = (0..nc).map(|c| (0..n).map(|x| state.psi[x * nc + c]).collect()).collect();
    let mut di = vec![vec![ZERO; n * nc]; 3];
    for (i, dcomp) in di.iter_mut().enumerate() {
        for (c, comp) in comps.iter().enumerate() {
            let d = derivative(comp, &grid, i + 1, StencilOrder::Second)?;
            for x in 0..n {
                dcomp[x * nc + c] = d[x] * p.hbar - C64::new(0.0, p.q * state.potential[i + 1][x]) * comp[x];
            }
        }
    }
    let c = state.centroid();
    let dv = g.cell_volume();
    let mut jv = [0.0; 3];
    for x in 0..n {
        let psi = &state.psi[x * nc..(x + 1) * nc];
        let mut t0k = [0.0; 3];
        for (k, t) in t0k.iter_mut().enumerate() {
            // a^{0k} = ψ†D^kψ = −ψ†D_kψ, a^{k0} = ψ†α_k D^0ψ
            let a0k = -sandwich(psi, &state.rep.gamma0_gamma(0), &di[k][x * nc..(x + 1) * nc]);
            let ak0 = sandwich(psi, &state.rep.alpha[k], &d0[x * nc..(x + 1) * nc]);
            *t = -0.5 * (a0k.im + ak0.im);
        }
        let pt = g.point(x);
        let r = [pt[1] - c[0], pt[2] - c[1], pt[3] - c[2]];
        jv[0] += (r[1] * t0k[2] - r[2] * t0k[1]) * dv;
        jv[1] += (r[2] * t0k[0] - r[0] * t0k[2]) * dv;
        jv[2] += (r[0] * t0k[1] - r[1] * t0k[0]) * dv;
    }
    Ok(jv)
}

/// `sign(j⁰) = sign(q)` at every lattice point of a spinor field.
pub fn charge_sign_holds(psi: &[C64], components: usize, q: f64) -> bool {
    psi.chunks(components).all(|s| {
        let rho: f64 = s.iter().map(|v| v.norm_sqr()).sum::<f64>() * q;
        rho == 0.0 || rho.signum() == q.signum()
    })
}

/// Norm of a raw spinor field (sum of `|ψ|²`, no volume element).
pub fn spinor_norm(psi: &[C64]) -> f64 {
    norm(psi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::uniform_electric_potential;

    fn line(n: usize, length: f64, dt: f64, boundary: Boundary) -> SpacetimeGrid {
        SpacetimeGrid::centered(1, n, length / n as f64, dt, 1, boundary).unwrap()
    }

    fn unit() -> WaveParams {
        WaveParams { hbar: 1.0, q: 1.0, m: 1.0 }
    }

    #[test]
    fn zero_field_stays_zero() {
        let g = line(64, 20.0, 0.05, Boundary::Periodic);
        let mut s = DiracState::new(g, unit(), vec![vec![0.0; 64]; 2], vec![ZERO; 128]).unwrap();
        s.dirac_step(10).unwrap();
        assert!(s.psi.iter().all(|v| *v == ZERO));
    }

    #[test]
    fn plane_wave_oscillates_at_relativistic_energy() {
        let length = 40.0;
        let n = 512;
        let dt = 0.005;
        let k = 2.0 * std::f64::consts::PI * 4.0 / length;
        let (mut s, e_lattice) = DiracState::plane_wave(line(n, length, dt, Boundary::Periodic), unit(), &[k]).unwrap();
        let e_exact = (k * k + 1.0f64).sqrt();
        assert!((e_lattice - e_exact).abs() / e_exact < 1e-3);
        let start = s.psi.clone();
        let steps = 400;
        s.dirac_step(steps).unwrap();
        let overlap: C64 = start.iter().zip(&s.psi).map(|(a, b)| a.conj() * b).sum();
        let omega = -overlap.arg() / (steps as f64 * dt);
        assert!((omega - e_exact).abs() / e_exact < 1e-3, "{omega} vs {e_exact}");
    }

    #[test]
    fn norm_is_conserved_in_a_well() {
        let g = line(256, 40.0, 0.02, Boundary::Absorbing);
        let pot = crate::kg::static_potential(&g, |x| vec![0.02 * x[1] * x[1], 0.0]);
        let spinor = [ONE, ZERO];
        let mut s = DiracState::gaussian_packet(g, unit(), pot, &[1.0], 2.0, &[0.3], &spinor, EnergyBranch::Positive).unwrap();
        let r = s.dirac_step(200).unwrap();
        assert!(r.max_step_drift < 1e-8, "{}", r.max_step_drift);
    }

    #[test]
    fn charge_density_has_the_sign_of_the_charge() {
        let g = line(128, 20.0, 0.05, Boundary::Periodic);
        for q in [1.0, -2.0] {
            let params = WaveParams { q, ..unit() };
            let s = DiracState::gaussian_packet(g.clone(), params, vec![vec![0.0; 128]; 2], &[0.0], 2.0, &[0.5], &[ONE, ONE], EnergyBranch::Unprojected).unwrap();
            let j = s.current_slice();
            assert!(charge_sign_holds(&s.psi, 2, q));
            let total: f64 = j[0].iter().sum::<f64>() * g.spacing[0];
            assert!((total - q).abs() < 1e-12);
        }
    }

    #[test]
    fn plane_wave_energy_density() {
        let length = 20.0;
        let k = 2.0 * std::f64::consts::PI * 2.0 / length;
        let (mut s, e) = DiracState::plane_wave(line(256, length, 0.002, Boundary::Periodic), unit(), &[k]).unwrap();
        let w = s.record_window(3).unwrap();
        let t = w.emtensor(StencilOrder::Fourth).unwrap();
        let n = 256;
        for x in [0, 77, 200] {
            let dens: f64 = w.psi[(n + x) * 2..(n + x + 1) * 2].iter().map(|v| v.norm_sqr()).sum();
            assert!((t.at(0, 0, n + x) - e * dens).abs() < 1e-3 * e * dens, "{} vs {}", t.at(0, 0, n + x), e * dens);
        }
    }

    #[test]
    fn packet_at_rest_accelerates_along_the_force() {
        let g = line(256, 40.0, 0.02, Boundary::Absorbing);
        for q in [1.0, -1.0] {
            let params = WaveParams { q, ..unit() };
            let pot = uniform_electric_potential(&g, &[0.02]);
            let mut s = DiracState::gaussian_packet(g.clone(), params, pot, &[0.0], 3.0, &[0.0], &[ONE, ZERO], EnergyBranch::Positive).unwrap();
            s.dirac_step(150).unwrap();
            let x = s.centroid()[0];
            // x ≈ qEt²/2m = 0.09
            assert!(x * q > 0.05, "q {q}: centroid {x}");
        }
    }

    fn uniform_field_residual(n: usize) -> f64 {
        let length = 40.0;
        let h = length / n as f64;
        let g = line(n, length, 0.4 * h, Boundary::Absorbing);
        let pot = uniform_electric_potential(&g, &[0.05]);
        let mut s = DiracState::gaussian_packet(g, unit(), pot, &[0.0], 2.0, &[0.5], &[ONE, ZERO], EnergyBranch::Positive).unwrap();
        let w = s.record_window(5).unwrap();
        w.tenet_residual(StencilOrder::Second).unwrap().norms_at_level(2, 8).max
    }

    #[test]
    fn tenet_residual_converges_in_uniform_field() {
        let r: Vec<f64> = [128, 256, 512].iter().map(|&n| uniform_field_residual(n)).collect();
        let ratios = crate::fd::convergence_ratios(&r);
        assert!(ratios.iter().all(|&q| q > 3.5), "{r:?} {ratios:?}");
    }

    #[test]
    fn zitterbewegung_peak_at_twice_the_mass() {
        let g = line(512, 60.0, 0.05, Boundary::Absorbing);
        let s0 = DiracState::gaussian_packet(g.clone(), unit(), vec![vec![0.0; 512]; 2], &[0.0], 5.0, &[0.0], &[ONE, ONE], EnergyBranch::Mixed).unwrap();
        let mut s = s0.clone();
        let spec = zitterbewegung_spectrum(&mut s, 50.0 * std::f64::consts::PI).unwrap();
        let top = spec.peaks.first().expect("a significant peak");
        assert!((top.frequency - 2.0).abs() / 2.0 < 0.02, "{top:?}");
        let mut pos = DiracState::gaussian_packet(g, unit(), vec![vec![0.0; 512]; 2], &[0.0], 5.0, &[0.0], &[ONE, ONE], EnergyBranch::Positive).unwrap();
        let control = zitterbewegung_spectrum(&mut pos, 50.0 * std::f64::consts::PI).unwrap();
        assert!(control.peaks.iter().all(|p| (p.frequency - 2.0).abs() > 0.1), "{:?}", control.peaks);
    }

    #[test]
    fn short_window_is_rejected() {
        let g = line(64, 20.0, 0.05, Boundary::Periodic);
        let mut s = DiracState::new(g, unit(), vec![vec![0.0; 64]; 2], vec![ONE; 128]).unwrap();
        assert!(matches!(zitterbewegung_spectrum(&mut s, 10.0), Err(Error::Resolution(_))));
    }

    #[test]
    fn modulation_guard_flags_narrow_features() {
        let g = line(1024, 40.0, 0.05, Boundary::Absorbing);
        let params = unit();
        let wide = DiracState::gaussian_packet(g.clone(), params, vec![vec![0.0; 1024]; 2], &[0.0], 3.0, &[0.0], &[ONE, ZERO], EnergyBranch::Unprojected).unwrap();
        assert_eq!(modulation_guard_state(&wide).flag, ModulationFlag::Ok);
        let narrow = DiracState::gaussian_packet(g.clone(), params, vec![vec![0.0; 1024]; 2], &[0.0], 0.1, &[0.0], &[ONE, ZERO], EnergyBranch::Unprojected).unwrap();
        assert_eq!(modulation_guard_state(&narrow).flag, ModulationFlag::SubCompton);
        let sharp = klein_step_potential(&g, 3.0, 0.05, 1.0);
        assert_eq!(modulation_guard_potential(&g, &sharp, &params).unwrap().flag, ModulationFlag::SubCompton);
        let smooth = klein_step_potential(&g, 3.0, 5.0, 1.0);
        assert_eq!(modulation_guard_potential(&g, &smooth, &params).unwrap().flag, ModulationFlag::Ok);
    }

    #[test]
    fn energy_identity_holds_and_control_fails() {
        let g = line(512, 40.0, 0.01, Boundary::Absorbing);
        let pot = crate::kg::static_potential(&g, |x| vec![-0.3 * (-x[1] * x[1] / 8.0).exp(), 0.0]);
        let make = || DiracState::gaussian_packet(g.clone(), unit(), pot.clone(), &[0.5], 2.0, &[0.2], &[ONE, ZERO], EnergyBranch::Positive).unwrap();
        let ok = energy_identity_check(&mut make(), false).unwrap();
        let bad = energy_identity_check(&mut make(), true).unwrap();
        assert!(ok.integrated_deviation < 1e-3, "{ok:?}");
        assert!(bad.integrated_deviation > 1e-2, "{bad:?}");
    }
}
