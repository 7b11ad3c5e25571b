use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Boundary, SpacetimeGrid};
use crate::kg::link_phases;
use crate::linalg::{bicgstab, block_tridiagonal_solve, lanczos_lowest, ordered_sum, Eigenpair, LanczosOptions};

pub type C64 = Complex64;

const ZERO: C64 = C64::new(0.0, 0.0);

/// Largest configuration lattice (points times spin components).
pub const MAX_CONFIG_LEN: usize = 1 << 25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParticleSpec {
    pub q: f64,
    pub m: f64,
    /// Coefficient of `σ·B` in the Hamiltonian.
    pub g: f64,
}

impl ParticleSpec {
    /// Spin coupling `g = −qħ/2m`.
    pub fn pauli(q: f64, m: f64, hbar: f64) -> Self {
        Self { q, m, g: -q * hbar / (2.0 * m) }
    }

    fn validate(&self) -> Result<()> {
        if !(self.m > 0.0) || !self.m.is_finite() {
            return Err(Error::Config(format!("particle mass {} must be positive", self.m)));
        }
        if !self.q.is_finite() || !self.g.is_finite() {
            return Err(Error::Config("particle charge and spin coupling must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Symmetry {
    None,
    Symmetric,
    Antisymmetric,
}

/// Static external fields on the single-particle lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalFields {
    /// Scalar potential `φ`.
    pub scalar: Vec<f64>,
    /// Vector potential components along the lattice axes.
    pub vector: Vec<Vec<f64>>,
    /// Magnetic field (three components) acting on spins. In fewer than
    /// three dimensions it cannot be derived from `vector` and is given
    /// separately.
    pub magnetic: [Vec<f64>; 3],
}

impl ExternalFields {
    pub fn zero(lattice: &SpacetimeGrid) -> Self {
        let n = lattice.spatial_len();
        Self {
            scalar: vec![0.0; n],
            vector: vec![vec![0.0; n]; lattice.spatial_dims],
            magnetic: [vec![0.0; n], vec![0.0; n], vec![0.0; n]],
        }
    }

    pub fn from_fns(
        lattice: &SpacetimeGrid,
        scalar: impl Fn(&[f64]) -> f64,
        vector: impl Fn(&[f64]) -> Vec<f64>,
        magnetic: impl Fn(&[f64]) -> [f64; 3],
    ) -> Self {
        let g = lattice.slice_grid(0);
        let d = lattice.spatial_dims;
        let mut f = Self::zero(lattice);
        for p in 0..g.len() {
            let x = &g.point(p)[1..];
            f.scalar[p] = scalar(x);
            let a = vector(x);
            for i in 0..d {
                f.vector[i][p] = a.get(i).copied().unwrap_or(0.0);
            }
            let b = magnetic(x);
            for k in 0..3 {
                f.magnetic[k][p] = b[k];
            }
        }
        f
    }

    /// Scalar potential only.
    pub fn electrostatic(lattice: &SpacetimeGrid, scalar: impl Fn(&[f64]) -> f64) -> Self {
        Self::from_fns(lattice, scalar, |_| Vec::new(), |_| [0.0; 3])
    }

    pub fn has_vector_potential(&self) -> bool {
        self.vector.iter().any(|c| c.iter().any(|&v| v != 0.0))
    }

    pub fn has_magnetic_field(&self) -> bool {
        self.magnetic.iter().any(|c| c.iter().any(|&v| v != 0.0))
    }
}

#[derive(Debug, Clone)]
pub struct ManyBodyState {
    /// Single-particle lattice shared by all particles.
    pub lattice: SpacetimeGrid,
    pub particles: Vec<ParticleSpec>,
    pub fields: ExternalFields,
    pub hbar: f64,
    /// Softening length of the pair interaction `1/√(r² + s²)`.
    pub softening: f64,
    pub symmetry: Symmetry,
    pub phi: Vec<C64>,
    pub time: f64,
    pub time_step: f64,
    pub solver_tolerance: f64,
    links: Vec<Vec<Vec<C64>>>,
    /// `V + Σ_a q_aφ(x_a)` at every configuration point.
    diag: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvolveReport {
    pub steps: usize,
    pub norm_before: f64,
    pub norm_after: f64,
    pub max_step_drift: f64,
    pub energy_before: f64,
    pub energy_after: f64,
}

impl ManyBodyState {
    pub fn new(
        lattice: SpacetimeGrid,
        particles: Vec<ParticleSpec>,
        fields: ExternalFields,
        hbar: f64,
        softening: f64,
        symmetry: Symmetry,
        phi: Vec<C64>,
    ) -> Result<Self> {
        if particles.is_empty() {
            return Err(Error::Config("need at least one particle".into()));
        }
        for p in &particles {
            p.validate()?;
        }
        if !(hbar > 0.0) || !(softening > 0.0) {
            return Err(Error::Config(format!("ħ = {hbar} and softening {softening} must be positive")));
        }
        let mut lattice = lattice;
        lattice.time_levels = 1;
        let d = lattice.spatial_dims;
        let site_len = lattice.spatial_len();
        let n = particles.len();
        let len = site_len
            .checked_pow(n as u32)
            .and_then(|c| c.checked_mul(1 << n))
            .filter(|&l| l <= MAX_CONFIG_LEN)
            .ok_or_else(|| Error::Config(format!("configuration lattice for {n} particles on {site_len} sites is too large")))?;
        if phi.len() != len {
            return Err(Error::Shape(format!("wave function has {} entries, lattice needs {len}", phi.len())));
        }
        if fields.scalar.len() != site_len
            || fields.vector.len() != d
            || fields.vector.iter().chain(fields.magnetic.iter()).any(|c| c.len() != site_len)
        {
            return Err(Error::Shape("external fields do not match the lattice".into()));
        }
        if symmetry != Symmetry::None && particles.windows(2).any(|w| w[0] != w[1]) {
            return Err(Error::Config("a swap symmetry needs identical particles".into()));
        }
        let mut potential = vec![fields.scalar.clone()];
        potential.extend(fields.vector.iter().cloned());
        let links = particles.iter().map(|p| link_phases(&lattice, &potential, -p.q / hbar)).collect();
        let mut out = Self {
            lattice,
            particles,
            fields,
            hbar,
            softening,
            symmetry,
            phi,
            time: 0.0,
            time_step: 0.0,
            solver_tolerance: 1e-12,
            links,
            diag: Vec::new(),
        };
        let diag = (0..out.config_len())
            .into_par_iter()
            .map(|c| {
                let sites = out.sites(c);
                let scalar: f64 = sites.iter().enumerate().map(|(a, &x)| out.particles[a].q * out.fields.scalar[x]).sum();
                out.pair_potential(&sites) + scalar
            })
            .collect();
        out.diag = diag;
        Ok(out)
    }

    pub fn n_particles(&self) -> usize {
        self.particles.len()
    }

    pub fn spin_len(&self) -> usize {
        1 << self.particles.len()
    }

    pub fn site_len(&self) -> usize {
        self.lattice.spatial_len()
    }

    pub fn config_len(&self) -> usize {
        self.phi.len() / self.spin_len()
    }

    /// Configuration-space volume element.
    pub fn config_volume(&self) -> f64 {
        self.lattice.cell_volume().powi(self.n_particles() as i32)
    }

    /// Stride of particle `a`'s site index in the configuration index.
    pub fn particle_stride(&self, a: usize) -> usize {
        self.site_len().pow((self.n_particles() - 1 - a) as u32)
    }

    /// Site index of every particle at configuration point `c`.
    pub fn sites(&self, c: usize) -> Vec<usize> {
        let l = self.site_len();
        let n = self.n_particles();
        let mut out = vec![0; n];
        let mut rest = c;
        for a in (0..n).rev() {
            out[a] = rest % l;
            rest /= l;
        }
        out
    }

    pub fn config_index(&self, sites: &[usize]) -> usize {
        sites.iter().fold(0, |acc, &s| acc * self.site_len() + s)
    }

    /// Spin bit of particle `a` inside a spin index.
    pub fn spin_bit(&self, a: usize) -> usize {
        1 << (self.n_particles() - 1 - a)
    }

    pub fn norm_sq(&self) -> f64 {
        ordered_sum(self.phi.len(), |i| self.phi[i].norm_sqr()) * self.config_volume()
    }

    pub fn normalize(&mut self) -> Result<()> {
        let n = self.norm_sq().sqrt();
        if !(n > 0.0) {
            return Err(Error::Normalization("wave function vanishes".into()));
        }
        self.phi.par_iter_mut().for_each(|v| *v /= n);
        Ok(())
    }

    /// Inter-particle energy `V = (1/8π) Σ_{a≠b} q_a q_b / √(r² + s²)`.
    pub fn pair_potential(&self, sites: &[usize]) -> f64 {
        let g = &self.lattice;
        let n = self.n_particles();
        let mut v = 0.0;
        for a in 0..n {
            for b in 0..n {
                if a == b {
                    continue;
                }
                let xa = g.point(sites[a]);
                let xb = g.point(sites[b]);
                let r2: f64 = (1..g.rank()).map(|k| (xa[k] - xb[k]).powi(2)).sum();
                v += self.particles[a].q * self.particles[b].q / (r2 + self.softening * self.softening).sqrt();
            }
        }
        v / (8.0 * std::f64::consts::PI)
    }

    /// Neighbour of site `s` along `axis` (1-based) in direction `dir`, with
    /// the link phase to multiply the neighbour value by.
    pub(crate) fn neighbour(&self, a: usize, s: usize, axis: usize, forward: bool) -> Option<(usize, C64)> {
        let g = &self.lattice;
        let stride: usize = (axis + 1..g.rank()).map(|k| g.axis_len(k)).product();
        let n = g.axis_len(axis);
        let ix = (s / stride) % n;
        let periodic = g.boundary == Boundary::Periodic;
        let links = &self.links[a][axis - 1];
        if forward {
            if ix + 1 < n {
                Some((s + stride, links[s]))
            } else if periodic {
                Some((s + stride - n * stride, links[s]))
            } else {
                None
            }
        } else if ix > 0 {
            Some((s - stride, links[s - stride].conj()))
        } else if periodic {
            let y = s + (n - 1) * stride;
            Some((y, links[y].conj()))
        } else {
            None
        }
    }

    /// `Hφ` with `H = V + Σ_a [(−iħ∇_a − q_aA)²/2m_a + g_a σ_a·B + q_aφ]`.
    pub fn hamiltonian_apply(&self, phi: &[C64]) -> Vec<C64> {
        let ns = self.spin_len();
        let n = self.n_particles();
        let d = self.lattice.spatial_dims;
        let mut out = vec![ZERO; phi.len()];
        let l = self.site_len();
        out.par_chunks_mut(ns).enumerate().for_each(|(c, o)| {
            let here = &phi[c * ns..(c + 1) * ns];
            let diag = self.diag[c];
            for s in 0..ns {
                o[s] = here[s] * diag;
            }
            for a in 0..n {
                let p = &self.particles[a];
                let cstride = self.particle_stride(a);
                let site = (c / cstride) % l;
                for axis in 1..=d {
                    let h = self.lattice.spacing[axis - 1];
                    let k = self.hbar * self.hbar / (2.0 * p.m * h * h);
                    let mut acc: Vec<C64> = here.iter().map(|v| v * 2.0).collect();
                    for forward in [true, false] {
                        if let Some((nb, u)) = self.neighbour(a, site, axis, forward) {
                            let c2 = c + nb * cstride - site * cstride;
                            for s in 0..ns {
                                acc[s] -= u * phi[c2 * ns + s];
                            }
                        }
                    }
                    for s in 0..ns {
                        o[s] += acc[s] * k;
                    }
                }
                let b = [self.fields.magnetic[0][site], self.fields.magnetic[1][site], self.fields.magnetic[2][site]];
                if p.g != 0.0 && b.iter().any(|&v| v != 0.0) {
                    let bit = self.spin_bit(a);
                    for s in 0..ns {
                        // σ·B acting on particle a's slot.
                        let flipped = here[s ^ bit];
                        let up = s & bit == 0;
                        let sz = if up { b[2] } else { -b[2] };
                        // ⟨up|σ·B|down⟩ = B_x − iB_y, ⟨down|σ·B|up⟩ = B_x + iB_y
                        let off = if up { C64::new(b[0], -b[1]) } else { C64::new(b[0], b[1]) };
                        o[s] += (here[s] * sz + off * flipped) * p.g;
                    }
                }
            }
        });
        out
    }

    /// `⟨φ|H|φ⟩` (divided by the norm).
    pub fn energy(&self) -> f64 {
        let h = self.hamiltonian_apply(&self.phi);
        let num: f64 = ordered_sum(h.len(), |i| (self.phi[i].conj() * h[i]).re);
        let den: f64 = ordered_sum(h.len(), |i| self.phi[i].norm_sqr());
        num / den
    }

    /// One Crank–Nicolson step of length `dt`.
    pub fn step(&mut self, dt: f64) -> Result<()> {
        let k = C64::new(0.0, 0.5 * dt / self.hbar);
        let hphi = self.hamiltonian_apply(&self.phi);
        let rhs: Vec<C64> = self.phi.par_iter().zip(&hphi).map(|(a, b)| a - k * b).collect();
        let op = |x: &[C64], y: &mut [C64]| {
            let hx = self.hamiltonian_apply(x);
            y.par_iter_mut().zip(x).zip(&hx).for_each(|((yi, xi), hi)| *yi = xi + k * hi);
        };
        let next = if self.n_particles() == 1 && self.lattice.spatial_dims == 1 && self.lattice.boundary != Boundary::Periodic {
            block_tridiagonal_solve(&op, self.spin_len(), &rhs)?
        } else {
            let guess: Vec<C64> = self.phi.par_iter().zip(&hphi).map(|(a, b)| a - k * b * 2.0).collect();
            bicgstab(&op, &rhs, Some(&guess), self.solver_tolerance, 1000)?.0
        };
        self.phi = next;
        self.time += dt;
        self.time_step = dt;
        Ok(())
    }

    /// Evolve for `duration` in steps of at most `dt`.
    pub fn evolve(&mut self, duration: f64, dt: f64) -> Result<EvolveReport> {
        if !(dt > 0.0) || !(duration >= 0.0) {
            return Err(Error::Config(format!("time step {dt} and duration {duration} must be positive")));
        }
        let steps = (duration / dt).ceil() as usize;
        let h = if steps > 0 { duration / steps as f64 } else { dt };
        let norm_before = self.norm_sq();
        let energy_before = self.energy();
        let mut last = norm_before;
        let mut max_step_drift: f64 = 0.0;
        for _ in 0..steps {
            self.step(h)?;
            let now = self.norm_sq();
            max_step_drift = max_step_drift.max((now - last).abs());
            last = now;
        }
        Ok(EvolveReport { steps, norm_before, norm_after: last, max_step_drift, energy_before, energy_after: self.energy() })
    }

    /// Exchange particles `a` and `b` (coordinates and spin slots).
    pub fn swapped(&self, phi: &[C64], a: usize, b: usize) -> Vec<C64> {
        let ns = self.spin_len();
        let (ba, bb) = (self.spin_bit(a), self.spin_bit(b));
        let mut out = vec![ZERO; phi.len()];
        out.par_chunks_mut(ns).enumerate().for_each(|(c, o)| {
            let mut sites = self.sites(c);
            sites.swap(a, b);
            let c2 = self.config_index(&sites);
            for s in 0..ns {
                let sa = s & ba != 0;
                let sb = s & bb != 0;
                let mut s2 = s & !(ba | bb);
                if sa {
                    s2 |= bb;
                }
                if sb {
                    s2 |= ba;
                }
                o[s] = phi[c2 * ns + s2];
            }
        });
        out
    }

    /// `‖Pφ ∓ φ‖/‖φ‖` for the declared symmetry over every particle pair
    /// (zero when no symmetry is declared).
    pub fn symmetry_defect(&self) -> f64 {
        let sign = match self.symmetry {
            Symmetry::None => return 0.0,
            Symmetry::Symmetric => 1.0,
            Symmetry::Antisymmetric => -1.0,
        };
        let n = self.n_particles();
        let norm: f64 = self.phi.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        let mut worst: f64 = 0.0;
        for a in 0..n {
            for b in a + 1..n {
                let s = self.swapped(&self.phi, a, b);
                let d: f64 = s.iter().zip(&self.phi).map(|(x, y)| (x - y * sign).norm_sqr()).sum::<f64>().sqrt();
                worst = worst.max(d / norm);
            }
        }
        worst
    }

    /// Project onto the declared swap-symmetry sector (two particles).
    pub fn symmetrize(&mut self) -> Result<()> {
        let sign = match self.symmetry {
            Symmetry::None => return Ok(()),
            Symmetry::Symmetric => 1.0,
            Symmetry::Antisymmetric => -1.0,
        };
        if self.n_particles() != 2 {
            return Err(Error::Unsupported("symmetrisation beyond two particles".into()));
        }
        let s = self.swapped(&self.phi, 0, 1);
        self.phi.par_iter_mut().zip(&s).for_each(|(p, q)| *p = (*p + q * sign) * 0.5);
        self.normalize()
    }

    /// Copy of this state with another wave function.
    pub fn with_phi(&self, phi: Vec<C64>) -> Result<Self> {
        if phi.len() != self.phi.len() {
            return Err(Error::Shape("wave function does not match the lattice".into()));
        }
        let mut s = self.clone();
        s.phi = phi;
        Ok(s)
    }

    /// Product wave function `Π_a f_a(x_a)` times a spinor of length `2^n`.
    pub fn product(&self, factors: &[Vec<C64>], spinor: &[C64]) -> Result<Vec<C64>> {
        let n = self.n_particles();
        let ns = self.spin_len();
        if factors.len() != n || factors.iter().any(|f| f.len() != self.site_len()) || spinor.len() != ns {
            return Err(Error::Shape("product factors do not match the particles".into()));
        }
        let mut out = vec![ZERO; self.phi.len()];
        out.par_chunks_mut(ns).enumerate().for_each(|(c, o)| {
            let sites = self.sites(c);
            let amp: C64 = sites.iter().enumerate().map(|(a, &s)| factors[a][s]).product();
            for s in 0..ns {
                o[s] = amp * spinor[s];
            }
        });
        Ok(out)
    }

    /// Upper bound on the spectrum of the Hamiltonian (Gershgorin-style).
    pub fn spectral_bound(&self) -> f64 {
        let d = self.lattice.spatial_dims as f64;
        let hmin = self.lattice.spacing.iter().cloned().fold(f64::INFINITY, f64::min);
        let phi_max = self.fields.scalar.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let b_max = (0..self.site_len())
            .map(|s| self.fields.magnetic.iter().map(|c| c[s] * c[s]).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        let mut bound = 0.0;
        for p in &self.particles {
            bound += 2.0 * d * self.hbar * self.hbar / (p.m * hmin * hmin) + p.q.abs() * phi_max + p.g.abs() * b_max;
        }
        let qs: f64 = self.particles.iter().map(|p| p.q.abs()).sum();
        bound + qs * qs / (4.0 * std::f64::consts::PI * self.softening)
    }

    /// Lowest `k` eigenstates of the Hamiltonian, restricted to the declared
    /// swap-symmetry sector and, optionally, to the range of a projector on
    /// the spinor index. Vectors are normalised to `∫φ†φ = 1`.
    pub fn lowest_eigenstates(&self, k: usize, spin_filter: Option<&(dyn Fn(&mut [C64]) + Sync)>, opts: LanczosOptions) -> Result<Vec<Eigenpair>> {
        let ns = self.spin_len();
        let project = |v: &mut [C64]| {
            if let Some(f) = spin_filter {
                v.par_chunks_mut(ns).for_each(f);
            }
            let sign = match self.symmetry {
                Symmetry::Symmetric => 1.0,
                Symmetry::Antisymmetric => -1.0,
                Symmetry::None => return,
            };
            let s = self.swapped(v, 0, 1);
            v.par_iter_mut().zip(&s).for_each(|(p, q)| *p = (*p + q * sign) * 0.5);
        };
        // PHP + σ(1 − P) keeps the excluded sector above the spectrum.
        let sigma = 2.0 * self.spectral_bound();
        let apply = |x: &[C64], y: &mut [C64]| {
            let mut px = x.to_vec();
            project(&mut px);
            let mut h = self.hamiltonian_apply(&px);
            project(&mut h);
            y.par_iter_mut()
                .zip(&h)
                .zip(x.par_iter().zip(&px))
                .for_each(|((yi, hi), (xi, pi))| *yi = hi + (xi - pi) * sigma);
        };
        let mut pairs = lanczos_lowest(&apply, self.phi.len(), k, opts)?;
        if pairs.iter().any(|p| p.value >= 0.5 * sigma) {
            return Err(Error::Convergence { what: "eigenstates in the projected sector".into(), residual: f64::NAN });
        }
        let dv = self.config_volume().sqrt();
        for p in &mut pairs {
            p.vector.iter_mut().for_each(|v| *v /= dv);
        }
        Ok(pairs)
    }

    /// Gauge-transformed copy: `A → A + ∇Λ` and `φ → e^{iΣ_a q_aΛ(x_a)/ħ} φ`
    /// for a static `Λ`; `lambda` returns `(Λ, ∇Λ)` at a lattice point.
    pub fn gauge_transformed(&self, lambda: &(dyn Fn(&[f64]) -> (f64, Vec<f64>) + Sync)) -> Result<Self> {
        let g = self.lattice.slice_grid(0);
        let d = self.lattice.spatial_dims;
        let values: Vec<(f64, Vec<f64>)> = (0..g.len()).map(|p| lambda(&g.point(p)[1..])).collect();
        let mut fields = self.fields.clone();
        for i in 0..d {
            for p in 0..g.len() {
                fields.vector[i][p] += values[p].1.get(i).copied().unwrap_or(0.0);
            }
        }
        let ns = self.spin_len();
        let mut phi = self.phi.clone();
        phi.par_chunks_mut(ns).enumerate().for_each(|(c, o)| {
            let sites = self.sites(c);
            let phase: f64 = sites.iter().enumerate().map(|(a, &s)| self.particles[a].q * values[s].0).sum::<f64>() / self.hbar;
            let u = C64::from_polar(1.0, phase);
            o.iter_mut().for_each(|v| *v *= u);
        });
        let mut out = Self::new(self.lattice.clone(), self.particles.clone(), fields, self.hbar, self.softening, self.symmetry, phi)?;
        out.time = self.time;
        out.time_step = self.time_step;
        out.solver_tolerance = self.solver_tolerance;
        Ok(out)
    }
}
