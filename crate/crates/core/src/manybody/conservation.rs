use serde::{Deserialize, Serialize};

use super::densities::DensityBundle;
use super::state::{ManyBodyState, C64};
use crate::error::{Error, Result};
use crate::linalg::{ordered_reduce, ordered_sum};

/// Absolute residual (configuration-space L2 norm for continuity, maximum
/// over components for the balances) and the same divided by the size of
/// the terms being balanced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub absolute: f64,
    pub relative: f64,
}

impl Residual {
    fn new(absolute: f64, scale: f64) -> Self {
        let relative = if scale > 0.0 { absolute / scale } else { absolute };
        Self { absolute, relative }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConservationReport {
    pub time: f64,
    pub window: f64,
    /// `∂_tρ + Σ_a ∇_a·j_a`.
    pub continuity: Residual,
    /// `d⟨p_a⟩/dt` against pair, electric and magnetic forces.
    pub momentum: Residual,
    /// `d/dt Σ_a⟨ε_a⟩` against electric, pair and spin power.
    pub energy: Residual,
    /// `momentum_rate[a][i]` and the matching `force[a][i]`.
    pub momentum_rate: Vec<Vec<f64>>,
    pub force: Vec<Vec<f64>>,
    pub energy_rate: f64,
    pub power: f64,
    /// Largest `|p − m j|`.
    pub proviso_momentum: f64,
    /// Smallest `ρ` and smallest `ε_a` seen in the window.
    pub min_density: f64,
    pub min_energy_density: f64,
    /// Whether the magnetic field is the lattice curl of the vector potential.
    pub maxwell_consistent: bool,
    /// Whether Zeeman energies stay well below the pair energy, so that the
    /// omitted spin-spin coupling is negligible.
    pub spin_spin_negligible: bool,
    pub warnings: Vec<String>,
}

/// Relative tolerance for the Maxwell consistency of the external fields.
pub const MAXWELL_TOLERANCE: f64 = 0.05;

/// Zeeman-to-pair energy ratio above which the spin-spin omission is flagged.
pub const SPIN_SPIN_RATIO: f64 = 0.1;

impl ManyBodyState {
    /// Central difference along a single-particle axis, one-sided at
    /// non-periodic edges.
    fn site_gradient(&self, f: &[f64], axis: usize) -> Vec<f64> {
        let h = self.lattice.spacing[axis - 1];
        (0..f.len())
            .map(|s| {
                let fwd = self.neighbour(0, s, axis, true).map(|(n, _)| n);
                let bwd = self.neighbour(0, s, axis, false).map(|(n, _)| n);
                match (fwd, bwd) {
                    (Some(p), Some(m)) => (f[p] - f[m]) / (2.0 * h),
                    (Some(p), None) => (f[p] - f[s]) / h,
                    (None, Some(m)) => (f[s] - f[m]) / h,
                    (None, None) => 0.0,
                }
            })
            .collect()
    }

    /// `∇_a V` of the pair energy at configuration point `c`.
    fn pair_gradient(&self, c: usize, a: usize) -> [f64; 3] {
        let sites = self.sites(c);
        let xa = self.lattice.point(sites[a]);
        let d = self.lattice.spatial_dims;
        let s2 = self.softening * self.softening;
        let mut g = [0.0; 3];
        for (b, &sb) in sites.iter().enumerate() {
            if b == a {
                continue;
            }
            let xb = self.lattice.point(sb);
            let r2: f64 = (1..=d).map(|k| (xa[k] - xb[k]).powi(2)).sum();
            let k = self.particles[a].q * self.particles[b].q / (4.0 * std::f64::consts::PI * (r2 + s2).powf(1.5));
            for i in 0..d {
                g[i] -= k * (xa[i + 1] - xb[i + 1]);
            }
        }
        g
    }

    /// `⟨Vρ⟩`.
    pub fn pair_energy(&self, bundle: &DensityBundle) -> f64 {
        ordered_sum(self.config_len(), |c| self.pair_potential(&self.sites(c)) * bundle.rho[c]) * bundle.volume
    }

    /// `⟨Vρ⟩ + Σ_a q_a⟨ρ φ_ext(x_a)⟩ + Σ_a q_a⟨j_a·A(x_a)⟩`.
    pub fn interaction_energy(&self) -> f64 {
        let bundle = self.densities();
        self.interaction_energy_of(&bundle)
    }

    fn interaction_energy_of(&self, bundle: &DensityBundle) -> f64 {
        let d = self.lattice.spatial_dims;
        let mut e = self.pair_energy(bundle);
        for (a, p) in self.particles.iter().enumerate() {
            let stride = self.particle_stride(a);
            let l = self.site_len();
            let mut acc = 0.0;
            for c in 0..self.config_len() {
                let s = (c / stride) % l;
                acc += bundle.rho[c] * self.fields.scalar[s];
                for i in 0..d {
                    acc += bundle.current[a][i][c] * self.fields.vector[i][s];
                }
            }
            e += p.q * acc * bundle.volume;
        }
        e
    }

    /// `Σ_a⟨ε_a⟩`.
    pub fn kinetic_energy(bundle: &DensityBundle) -> f64 {
        bundle.energy.iter().map(|e| e.iter().sum::<f64>()).sum::<f64>() * bundle.volume
    }

    /// Relative deviation between `interaction + Σ_a⟨ε_a⟩` and `⟨φ†Hφ⟩`.
    /// The two agree exactly without magnetic fields; with `B ≠ 0` the Zeeman
    /// energy `g⟨s·B⟩` is not among the interaction terms.
    pub fn total_energy_identity(&self) -> (f64, f64, f64) {
        let bundle = self.densities();
        let lhs = self.interaction_energy_of(&bundle) + Self::kinetic_energy(&bundle);
        let h = self.hamiltonian_apply(&self.phi);
        let rhs = ordered_sum(h.len(), |i| (self.phi[i].conj() * h[i]).re) * bundle.volume;
        (lhs, rhs, (lhs - rhs).abs() / rhs.abs().max(f64::MIN_POSITIVE))
    }

    /// Spin power `−Σ_a g_a ⟨∂_iB_k J^a_ik⟩` with the spin flux
    /// `J_ik = Im φ†σ_k(ħ∂_i − iqA_i)φ / m`.
    fn spin_power(&self) -> f64 {
        if !self.fields.has_magnetic_field() {
            return 0.0;
        }
        let d = self.lattice.spatial_dims;
        let ns = self.spin_len();
        let l = self.site_len();
        let db: Vec<[Vec<f64>; 3]> = (1..=d)
            .map(|axis| {
                [
                    self.site_gradient(&self.fields.magnetic[0], axis),
                    self.site_gradient(&self.fields.magnetic[1], axis),
                    self.site_gradient(&self.fields.magnetic[2], axis),
                ]
            })
            .collect();
        let mut total = 0.0;
        for (a, p) in self.particles.iter().enumerate() {
            if p.g == 0.0 {
                continue;
            }
            let bit = self.spin_bit(a);
            let stride = self.particle_stride(a);
            let acc: f64 = ordered_sum(self.config_len(), |c| {
                    let site = (c / stride) % l;
                    let mut sum = 0.0;
                    for axis in 1..=d {
                        let h = self.lattice.spacing[axis - 1];
                        let dphi: Vec<C64> = (0..ns)
                            .map(|s| {
                                let (f, b) = self.one_sided(a, axis, c, s);
                                (f + b) * (self.hbar / (2.0 * h))
                            })
                            .collect();
                        let here = &self.phi[c * ns..(c + 1) * ns];
                        let mut flux = [0.0; 3];
                        for s in 0..ns {
                            if s & bit != 0 {
                                continue;
                            }
                            let (u, w) = (here[s], here[s | bit]);
                            let (du, dw) = (dphi[s], dphi[s | bit]);
                            flux[0] += (u.conj() * dw + w.conj() * du).im;
                            flux[1] += (u.conj() * dw * C64::new(0.0, -1.0) + w.conj() * du * C64::new(0.0, 1.0)).im;
                            flux[2] += (u.conj() * du - w.conj() * dw).im;
                        }
                        for k in 0..3 {
                            sum += db[axis - 1][k][site] * flux[k];
                        }
                    }
                    sum
                });
            total -= p.g * acc / p.m * self.config_volume();
        }
        total
    }

    fn forces(&self, bundle: &DensityBundle) -> (Vec<Vec<f64>>, f64) {
        let d = self.lattice.spatial_dims;
        let l = self.site_len();
        let efield: Vec<Vec<f64>> = (1..=d).map(|axis| self.site_gradient(&self.fields.scalar, axis).iter().map(|v| -v).collect()).collect();
        let mut force = Vec::new();
        let mut power = 0.0;
        for (a, p) in self.particles.iter().enumerate() {
            let stride = self.particle_stride(a);
            let spin = &bundle.spin_current[a];
            let (f, w) = ordered_reduce(
                self.config_len(),
                ([0.0; 3], 0.0),
                |c| {
                    let s = (c / stride) % l;
                    let rho = bundle.rho[c];
                    let gv = self.pair_gradient(c, a);
                    let mut j = [0.0; 3];
                    for (i, ji) in j.iter_mut().enumerate() {
                        *ji = if i < d { bundle.current[a][i][c] } else { spin[i][c] };
                    }
                    let b = [self.fields.magnetic[0][s], self.fields.magnetic[1][s], self.fields.magnetic[2][s]];
                    let jxb = [j[1] * b[2] - j[2] * b[1], j[2] * b[0] - j[0] * b[2], j[0] * b[1] - j[1] * b[0]];
                    let mut f = [0.0; 3];
                    let mut w = 0.0;
                    for i in 0..d {
                        f[i] = -gv[i] * rho + p.q * efield[i][s] * rho + p.q * jxb[i];
                        w += (p.q * efield[i][s] - gv[i]) * j[i];
                    }
                    (f, w)
                },
                |x, y| ([x.0[0] + y.0[0], x.0[1] + y.0[1], x.0[2] + y.0[2]], x.1 + y.1),
            );
            force.push(f[..d].iter().map(|v| v * bundle.volume).collect());
            power += w * bundle.volume;
        }
        (force, power + self.spin_power())
    }

    fn maxwell_check(&self) -> bool {
        let d = self.lattice.spatial_dims;
        let n = self.site_len();
        let mut curl = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        let grads: Vec<Vec<Vec<f64>>> = (0..d).map(|i| (1..=d).map(|axis| self.site_gradient(&self.fields.vector[i], axis)).collect()).collect();
        for i in 0..3 {
            let (j, k) = ((i + 1) % 3, (i + 2) % 3);
            for s in 0..n {
                let djak = if j < d && k < d { grads[k][j][s] } else { 0.0 };
                let dkaj = if j < d && k < d { grads[j][k][s] } else { 0.0 };
                curl[i][s] = djak - dkaj;
            }
        }
        let scale = self.fields.magnetic.iter().flatten().chain(curl.iter().flatten()).fold(0.0_f64, |m, v| m.max(v.abs()));
        let worst = (0..3).flat_map(|i| (0..n).map(move |s| (i, s))).fold(0.0_f64, |m, (i, s)| m.max((curl[i][s] - self.fields.magnetic[i][s]).abs()));
        worst <= MAXWELL_TOLERANCE * scale + 1e-12
    }

    /// Runs the continuity, momentum and energy balances over two steps of
    /// length `window`, centring every time derivative on the middle step.
    /// The state is advanced by `2·window`.
    pub fn conservation_suite(&mut self, window: f64) -> Result<ConservationReport> {
        if !(window > 0.0) {
            return Err(Error::Config("window must be positive".into()));
        }
        let mut warnings = Vec::new();
        let maxwell_consistent = self.maxwell_check();
        if !maxwell_consistent {
            warnings.push("magnetic field is not the curl of the vector potential on this lattice".to_string());
        }
        let d = self.lattice.spatial_dims;
        let n = self.n_particles();
        let masses: Vec<f64> = self.particles.iter().map(|p| p.m).collect();
        let b0 = self.densities();
        self.step(window)?;
        let b1 = self.densities();
        let t1 = self.time;
        let (force, power) = self.forces(&b1);
        let pair = self.pair_energy(&b1).abs();
        self.step(window)?;
        let b2 = self.densities();

        let vol = b1.volume;
        let len = self.config_len();
        let mut drho = vec![0.0; len];
        for c in 0..len {
            drho[c] = (b2.rho[c] - b0.rho[c]) / (2.0 * window);
        }
        let mut div = vec![0.0; len];
        for a in 0..n {
            for axis in 1..=d {
                let g = self.config_derivative(&b1.current[a][axis - 1], a, axis);
                div.iter_mut().zip(&g).for_each(|(v, x)| *v += x);
            }
        }
        let l2 = |f: &mut dyn Iterator<Item = f64>| (f.map(|v| v * v).sum::<f64>() * vol).sqrt();
        let res = l2(&mut drho.iter().zip(&div).map(|(a, b)| a + b));
        let scale = l2(&mut drho.iter().cloned()).max(l2(&mut div.iter().cloned()));
        let continuity = Residual::new(res, scale);

        let total = |b: &DensityBundle, a: usize, i: usize| b.momentum[a][i].iter().sum::<f64>() * b.volume;
        let mut momentum_rate = vec![vec![0.0; d]; n];
        let mut worst: f64 = 0.0;
        let mut mscale: f64 = 0.0;
        for a in 0..n {
            for i in 0..d {
                momentum_rate[a][i] = (total(&b2, a, i) - total(&b0, a, i)) / (2.0 * window);
                worst = worst.max((momentum_rate[a][i] - force[a][i]).abs());
                mscale = mscale.max(momentum_rate[a][i].abs()).max(force[a][i].abs());
            }
        }
        let momentum = Residual::new(worst, mscale);

        let energy_rate = (Self::kinetic_energy(&b2) - Self::kinetic_energy(&b0)) / (2.0 * window);
        let energy = Residual::new((energy_rate - power).abs(), energy_rate.abs().max(power.abs()));

        let proviso_momentum = [&b0, &b1, &b2].iter().map(|b| b.momentum_proviso_defect(&masses)).fold(0.0, f64::max);
        let (mut min_density, mut min_energy_density) = (f64::INFINITY, f64::INFINITY);
        for b in [&b0, &b1, &b2] {
            let (r, e) = b.min_density_and_energy();
            min_density = min_density.min(r);
            min_energy_density = min_energy_density.min(e);
        }

        let bmax = self.fields.magnetic.iter().flatten().fold(0.0_f64, |m, v| m.max(v.abs()));
        let zeeman = self.particles.iter().map(|p| p.g.abs()).fold(0.0, f64::max) * bmax;
        let spin_spin_negligible = zeeman == 0.0 || zeeman <= SPIN_SPIN_RATIO * pair;
        if !spin_spin_negligible {
            warnings.push(format!("Zeeman energy {zeeman:.3e} is comparable to the pair energy {pair:.3e}"));
        }
        Ok(ConservationReport {
            time: t1,
            window,
            continuity,
            momentum,
            energy,
            momentum_rate,
            force,
            energy_rate,
            power,
            proviso_momentum,
            min_density,
            min_energy_density,
            maxwell_consistent,
            spin_spin_negligible,
            warnings,
        })
    }
}

/// Largest difference between two density bundles (density, currents and
/// energy densities), relative to the largest magnitude in `reference`.
pub fn bundle_deviation(reference: &DensityBundle, other: &DensityBundle) -> Result<f64> {
    if reference.rho.len() != other.rho.len() || reference.n_particles != other.n_particles {
        return Err(Error::Shape("bundles live on different configuration lattices".into()));
    }
    let pairs = reference
        .rho
        .iter()
        .zip(&other.rho)
        .chain(reference.current.iter().flatten().flatten().zip(other.current.iter().flatten().flatten()))
        .chain(reference.energy.iter().flatten().zip(other.energy.iter().flatten()));
    let (mut diff, mut scale) = (0.0_f64, 0.0_f64);
    for (a, b) in pairs {
        diff = diff.max((a - b).abs());
        scale = scale.max(a.abs());
    }
    Ok(if scale > 0.0 { diff / scale } else { diff })
}
