//! Point-particle ensembles: Lorentz-force trajectories, mollified
//! deposition of their currents and kinetic tensors, and Bohmian transport
//! along the velocity field of a wave solution.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dirac::DiracState;
use crate::error::{Error, Result};
use crate::grid::{SpacetimeGrid, StencilOrder, ETA};
use crate::kg::KgState;
use crate::tensor::{electromagnetic_upper, tenet_residual, CurrentDensity, EMTensor, FaradayTensor, ResidualField};

/// Upper-index field strength `F^{μν}` at a space-time point `(t, x, y, z)`.
pub type FieldFn = dyn Fn(&[f64; 4]) -> [[f64; 4]; 4] + Sync;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParticleParams {
    pub q: f64,
    pub m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub tau: f64,
    pub position: [f64; 4],
    pub velocity: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointTrajectory {
    pub params: ParticleParams,
    /// Samples at uniform steps of coordinate time.
    pub samples: Vec<TrajectorySample>,
    /// Largest `|u·u − 1|` along the path.
    pub normalization_drift: f64,
    /// Set when integration stopped because the particle left the lattice.
    pub truncated: bool,
}

/// Four-velocity of a particle moving with three-velocity `v` (`|v| < 1`).
pub fn four_velocity(v: &[f64]) -> Result<[f64; 4]> {
    let v2: f64 = v.iter().map(|x| x * x).sum();
    if v.len() > 3 || v2 >= 1.0 || !v2.is_finite() {
        return Err(Error::Precondition(format!("three-velocity {v:?} is not subluminal")));
    }
    let g = 1.0 / (1.0 - v2).sqrt();
    let mut u = [g, 0.0, 0.0, 0.0];
    for (i, vi) in v.iter().enumerate() {
        u[i + 1] = g * vi;
    }
    Ok(u)
}

pub fn minkowski_square(u: &[f64; 4]) -> f64 {
    (0..4).map(|m| ETA[m] * u[m] * u[m]).sum()
}

/// Uniform external field as a [`FieldFn`].
pub fn uniform_field(e: [f64; 3], b: [f64; 3]) -> impl Fn(&[f64; 4]) -> [[f64; 4]; 4] + Sync {
    let f = electromagnetic_upper(&e, b, 3);
    move |_| f
}

/// Electric field `E(x) = −∇A⁰` of a static potential given as a closure
/// of the spatial position, by central differences with step `h`.
pub fn electrostatic_field(a0: impl Fn(&[f64; 3]) -> f64 + Sync, h: f64) -> impl Fn(&[f64; 4]) -> [[f64; 4]; 4] + Sync {
    move |x| {
        let mut e = [0.0; 3];
        for (i, ei) in e.iter_mut().enumerate() {
            let mut p = [x[1], x[2], x[3]];
            let mut m = p;
            p[i] += h;
            m[i] -= h;
            *ei = -(a0(&p) - a0(&m)) / (2.0 * h);
        }
        electromagnetic_upper(&e, [0.0; 3], 3)
    }
}

/// Right-hand side in coordinate time: `dx/dt = u/u⁰`,
/// `du/dt = (q/m) F^{μν}u_ν / u⁰`, `dτ/dt = 1/u⁰`.
fn lorentz_rhs(params: &ParticleParams, field: &FieldFn, x: &[f64; 4], u: &[f64; 4]) -> ([f64; 4], [f64; 4], f64) {
    let f = field(x);
    let inv = 1.0 / u[0];
    let mut dx = [0.0; 4];
    let mut du = [0.0; 4];
    for m in 0..4 {
        dx[m] = u[m] * inv;
        let force: f64 = (0..4).map(|n| f[m][n] * ETA[n] * u[n]).sum();
        du[m] = params.q / params.m * force * inv;
    }
    (dx, du, inv)
}

fn inside(bounds: &SpacetimeGrid, x: &[f64; 4]) -> bool {
    (1..bounds.rank()).all(|a| {
        let lo = bounds.axis_origin(a);
        let hi = bounds.coord(a, bounds.axis_len(a) - 1);
        x[a] >= lo && x[a] <= hi
    })
}

/// Integrate `mγ̈ = qFγ̇` with classical RK4, stepping uniformly in
/// coordinate time over `duration`. With `bounds`, integration stops (and
/// the trajectory is flagged truncated) once the particle leaves the
/// spatial extent of the lattice.
pub fn lorentz_integrate(
    params: ParticleParams,
    position: [f64; 4],
    velocity: [f64; 4],
    field: &FieldFn,
    duration: f64,
    dt: f64,
    bounds: Option<&SpacetimeGrid>,
) -> Result<PointTrajectory> {
    if !(params.m > 0.0) || !params.q.is_finite() {
        return Err(Error::Config(format!("particle mass {} must be positive", params.m)));
    }
    if !(dt > 0.0) || !(duration >= 0.0) {
        return Err(Error::Config(format!("time step {dt} and duration {duration} must be positive")));
    }
    if velocity[0] <= 0.0 || minkowski_square(&velocity) <= 0.0 || position.iter().chain(&velocity).any(|v| !v.is_finite()) {
        return Err(Error::Precondition("initial four-velocity must be future timelike".into()));
    }
    let steps = (duration / dt).round() as usize;
    let mut x = position;
    let mut u = velocity;
    let mut tau = 0.0;
    let mut samples = Vec::with_capacity(steps + 1);
    samples.push(TrajectorySample { tau, position: x, velocity: u });
    let mut drift = (minkowski_square(&u) - 1.0).abs();
    let mut truncated = false;
    let add = |a: &[f64; 4], b: &[f64; 4], s: f64| -> [f64; 4] { std::array::from_fn(|i| a[i] + s * b[i]) };
    for _ in 0..steps {
        let (k1x, k1u, k1t) = lorentz_rhs(&params, field, &x, &u);
        let (k2x, k2u, k2t) = lorentz_rhs(&params, field, &add(&x, &k1x, 0.5 * dt), &add(&u, &k1u, 0.5 * dt));
        let (k3x, k3u, k3t) = lorentz_rhs(&params, field, &add(&x, &k2x, 0.5 * dt), &add(&u, &k2u, 0.5 * dt));
        let (k4x, k4u, k4t) = lorentz_rhs(&params, field, &add(&x, &k3x, dt), &add(&u, &k3u, dt));
        for m in 0..4 {
            x[m] += dt / 6.0 * (k1x[m] + 2.0 * k2x[m] + 2.0 * k3x[m] + k4x[m]);
            u[m] += dt / 6.0 * (k1u[m] + 2.0 * k2u[m] + 2.0 * k3u[m] + k4u[m]);
        }
        tau += dt / 6.0 * (k1t + 2.0 * k2t + 2.0 * k3t + k4t);
        if x.iter().chain(&u).any(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("trajectory became non-finite at t = {}", x[0])));
        }
        if let Some(b) = bounds {
            if !inside(b, &x) {
                truncated = true;
                break;
            }
        }
        drift = drift.max((minkowski_square(&u) - 1.0).abs());
        samples.push(TrajectorySample { tau, position: x, velocity: u });
    }
    Ok(PointTrajectory { params, samples, normalization_drift: drift, truncated })
}

impl PointTrajectory {
    /// Position and four-velocity at coordinate time `t` (cubic Hermite
    /// interpolation between samples); `None` outside the sampled span.
    pub fn state_at(&self, t: f64) -> Option<([f64; 4], [f64; 4])> {
        let s = &self.samples;
        let first = s.first()?;
        let last = s.last()?;
        if t < first.position[0] - 1e-12 || t > last.position[0] + 1e-12 {
            return None;
        }
        if s.len() == 1 {
            return Some((first.position, first.velocity));
        }
        let dt = s[1].position[0] - s[0].position[0];
        let k = (((t - first.position[0]) / dt).floor().max(0.0) as usize).min(s.len() - 2);
        let (a, b) = (&s[k], &s[k + 1]);
        let h = b.position[0] - a.position[0];
        let r = ((t - a.position[0]) / h).clamp(0.0, 1.0);
        let (h00, h10, h01, h11) = (
            2.0 * r.powi(3) - 3.0 * r * r + 1.0,
            r.powi(3) - 2.0 * r * r + r,
            -2.0 * r.powi(3) + 3.0 * r * r,
            r.powi(3) - r * r,
        );
        let mut x = [t, 0.0, 0.0, 0.0];
        let mut u = [0.0; 4];
        for m in 1..4 {
            let va = a.velocity[m] / a.velocity[0];
            let vb = b.velocity[m] / b.velocity[0];
            x[m] = h00 * a.position[m] + h10 * h * va + h01 * b.position[m] + h11 * h * vb;
        }
        for m in 0..4 {
            u[m] = (1.0 - r) * a.velocity[m] + r * b.velocity[m];
        }
        Some((x, u))
    }

    /// CSV dump with columns `tau,t,x,y,z,u0,u1,u2,u3`.
    pub fn write_csv(&self, out: &mut impl Write) -> Result<()> {
        writeln!(out, "tau,t,x,y,z,u0,u1,u2,u3")?;
        for s in &self.samples {
            let p = s.position;
            let u = s.velocity;
            writeln!(out, "{},{},{},{},{},{},{},{},{}", s.tau, p[0], p[1], p[2], p[3], u[0], u[1], u[2], u[3])?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointEnsemble {
    pub members: Vec<PointTrajectory>,
    /// Normalised to sum to one.
    pub weights: Vec<f64>,
    /// Standard deviation of the Gaussian deposition kernel.
    pub kernel_width: f64,
}

impl PointEnsemble {
    pub fn new(members: Vec<PointTrajectory>, weights: Vec<f64>, kernel_width: f64) -> Result<Self> {
        if members.is_empty() || members.len() != weights.len() {
            return Err(Error::Shape(format!("{} members with {} weights", members.len(), weights.len())));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Domain("ensemble weights must be non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::Normalization(format!("ensemble weights sum to {total}")));
        }
        let weights = weights.iter().map(|w| w / total).collect();
        Ok(Self { members, weights, kernel_width })
    }

    pub fn uniform(members: Vec<PointTrajectory>, kernel_width: f64) -> Result<Self> {
        let n = members.len();
        Self::new(members, vec![1.0; n], kernel_width)
    }
}

/// Kernel support in units of its width.
pub const KERNEL_CUTOFF: f64 = 6.0;

const DEPOSIT_CHUNK: usize = 64;

#[derive(Debug, Clone)]
pub struct Deposit {
    pub current: CurrentDensity,
    /// Kinetic tensor `Σ w m u^μu^ν/u⁰ K(x − γ(t))`.
    pub tensor: EMTensor,
    /// `∂_μ j^μ` of the deposited current.
    pub continuity: ResidualField,
}

/// Deposit `j^μ = q u^μ/u⁰ K` and `T^{μν} = m u^μu^ν/u⁰ K` of every member
/// on every time level of `grid`, with a truncated Gaussian kernel `K`
/// normalised on the lattice. Members whose trajectory does not cover a
/// level contribute nothing to it.
pub fn deposit_ensemble(ens: &PointEnsemble, grid: &SpacetimeGrid) -> Result<Deposit> {
    let hmax = grid.spacing.iter().cloned().fold(0.0, f64::max);
    if !(ens.kernel_width >= 2.0 * hmax) {
        return Err(Error::Config(format!(
            "kernel width {} below two grid spacings ({})",
            ens.kernel_width, hmax
        )));
    }
    let rank = grid.rank();
    let nsym = rank * (rank + 1) / 2;
    let len = grid.len();
    let members: Vec<(&PointTrajectory, f64)> = ens.members.iter().zip(ens.weights.iter().copied()).collect();
    // Per-chunk accumulation, then a fixed-order reduction.
    let partials: Vec<(Vec<Vec<f64>>, Vec<Vec<f64>>)> = members
        .par_chunks(DEPOSIT_CHUNK)
        .map(|chunk| {
            let mut j = vec![vec![0.0; len]; rank];
            let mut t = vec![vec![0.0; len]; nsym];
            for &(traj, w) in chunk {
                deposit_one(traj, w, ens.kernel_width, grid, &mut j, &mut t);
            }
            (j, t)
        })
        .collect();
    let mut j = vec![vec![0.0; len]; rank];
    let mut t = EMTensor::zeros(grid);
    for (pj, pt) in partials {
        for (a, b) in j.iter_mut().zip(&pj) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        let mut k = 0;
        for mu in 0..rank {
            for nu in mu..rank {
                t.component_mut(mu, nu).iter_mut().zip(&pt[k]).for_each(|(x, y)| *x += y);
                k += 1;
            }
        }
    }
    let current = CurrentDensity::new(grid, j);
    let continuity = current.continuity_residual(StencilOrder::Second)?;
    Ok(Deposit { current, tensor: t, continuity })
}

fn deposit_one(traj: &PointTrajectory, w: f64, width: f64, grid: &SpacetimeGrid, j: &mut [Vec<f64>], t: &mut [Vec<f64>]) {
    let d = grid.spatial_dims;
    let rank = grid.rank();
    let slice = grid.slice_grid(0);
    let n_spatial = grid.spatial_len();
    for level in 0..grid.time_levels {
        let time = grid.coord(0, level);
        let Some((x, u)) = traj.state_at(time) else { continue };
        // Index ranges of the kernel support along each axis.
        let mut lo = vec![0usize; d];
        let mut hi = vec![0usize; d];
        for a in 0..d {
            let h = grid.spacing[a];
            let o = grid.axis_origin(a + 1);
            let n = grid.axis_len(a + 1) as isize;
            let l = ((x[a + 1] - KERNEL_CUTOFF * width - o) / h).ceil() as isize;
            let r = ((x[a + 1] + KERNEL_CUTOFF * width - o) / h).floor() as isize;
            lo[a] = l.clamp(0, n) as usize;
            hi[a] = (r + 1).clamp(0, n) as usize;
        }
        if (0..d).any(|a| lo[a] >= hi[a]) {
            continue;
        }
        let mut cells = Vec::new();
        let mut idx = lo.clone();
        'cells: loop {
            let mut r2 = 0.0;
            for a in 0..d {
                r2 += (grid.coord(a + 1, idx[a]) - x[a + 1]).powi(2);
            }
            if r2 <= (KERNEL_CUTOFF * width).powi(2) {
                let mut full = vec![0usize; rank];
                full[1..].copy_from_slice(&idx);
                cells.push((slice.ravel(&full), (-0.5 * r2 / (width * width)).exp()));
            }
            let mut a = d;
            loop {
                if a == 0 {
                    break 'cells;
                }
                a -= 1;
                idx[a] += 1;
                if idx[a] < hi[a] {
                    break;
                }
                idx[a] = lo[a];
            }
        }
        let norm: f64 = cells.iter().map(|c| c.1).sum::<f64>() * grid.cell_volume();
        if norm == 0.0 {
            continue;
        }
        let p = traj.params;
        let base = level * n_spatial;
        for (cell, k) in cells {
            let kk = w * k / norm;
            for mu in 0..rank {
                j[mu][base + cell] += p.q * u[mu] / u[0] * kk;
            }
            let mut s = 0;
            for mu in 0..rank {
                for nu in mu..rank {
                    t[s][base + cell] += p.m * u[mu] * u[nu] / u[0] * kk;
                    s += 1;
                }
            }
        }
    }
}

/// `∂_νT^{νμ} − F^{μν}j_ν` of a deposit in the external field.
pub fn deposit_tenet_residual(dep: &Deposit, field: &FieldFn, order: StencilOrder) -> Result<ResidualField> {
    let grid = &dep.current.grid;
    let f = FaradayTensor::from_upper_fn(grid, |p| {
        let mut x = [0.0; 4];
        x[..p.len()].copy_from_slice(p);
        field(&x)
    });
    tenet_residual(&dep.tensor, &f, &dep.current, order)
}

/// A wave solution that exposes a conserved density and its current.
pub trait DensityFlow {
    fn lattice(&self) -> &SpacetimeGrid;
    fn particle(&self) -> ParticleParams;
    /// Time at which [`DensityFlow::flow`] is evaluated.
    fn flow_time(&self) -> f64;
    /// Density and spatial current (same normalisation, so `v = j/ρ`).
    fn flow(&self) -> (Vec<f64>, Vec<Vec<f64>>);
    /// Time between successive flows.
    fn flow_step(&self) -> f64;
    fn advance(&mut self) -> Result<()>;
}

impl DensityFlow for KgState {
    fn lattice(&self) -> &SpacetimeGrid {
        &self.lattice
    }
    fn particle(&self) -> ParticleParams {
        ParticleParams { q: self.params.q, m: self.params.m }
    }
    fn flow_time(&self) -> f64 {
        self.time - 0.5 * self.lattice.time_step
    }
    fn flow(&self) -> (Vec<f64>, Vec<Vec<f64>>) {
        self.density_flow()
    }
    fn flow_step(&self) -> f64 {
        self.lattice.time_step
    }
    fn advance(&mut self) -> Result<()> {
        self.step();
        Ok(())
    }
}

impl DensityFlow for DiracState {
    fn lattice(&self) -> &SpacetimeGrid {
        &self.lattice
    }
    fn particle(&self) -> ParticleParams {
        ParticleParams { q: self.params.q, m: self.params.m }
    }
    fn flow_time(&self) -> f64 {
        self.time
    }
    fn flow(&self) -> (Vec<f64>, Vec<Vec<f64>>) {
        let mut j = self.current_slice();
        let rho = j.remove(0);
        (rho, j)
    }
    fn flow_step(&self) -> f64 {
        self.lattice.time_step
    }
    fn advance(&mut self) -> Result<()> {
        self.step()
    }
}

/// Densities below this fraction of the maximum do not define a velocity.
pub const DENSITY_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BohmOptions {
    pub n_samples: usize,
    pub seed: u64,
    /// Number of wave steps to transport over.
    pub steps: usize,
    pub kernel_width: f64,
}

#[derive(Debug, Clone)]
pub struct BohmRun {
    pub ensemble: PointEnsemble,
    /// Samples that met a sub-floor density or left the lattice.
    pub degenerate: Vec<bool>,
}

impl BohmRun {
    pub fn degenerate_count(&self) -> usize {
        self.degenerate.iter().filter(|&&d| d).count()
    }

    /// Positions along `axis` (1-based spatial axis) at the final sample.
    pub fn final_positions(&self, axis: usize) -> Vec<f64> {
        self.ensemble.members.iter().map(|m| m.samples.last().unwrap().position[axis]).collect()
    }
}

/// Node velocities `j/ρ`, `NaN` where the density is below the floor.
fn velocity_field(rho: &[f64], j: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let max = rho.iter().fold(0.0f64, |a, r| a.max(r.abs()));
    let floor = DENSITY_FLOOR * max;
    j.iter()
        .map(|ji| rho.iter().zip(ji).map(|(&r, &c)| if r.abs() >= floor && r != 0.0 { c / r } else { f64::NAN }).collect())
        .collect()
}

/// Multilinear interpolation of node fields at a spatial point; `None` if
/// the point is off the lattice or touches an undefined node.
fn interpolate(lattice: &SpacetimeGrid, fields: &[Vec<f64>], x: &[f64; 4]) -> Option<Vec<f64>> {
    let d = lattice.spatial_dims;
    let g = lattice.slice_grid(0);
    let mut base = vec![0usize; d + 1];
    let mut frac = vec![0.0; d];
    for a in 0..d {
        let n = lattice.axis_len(a + 1);
        let s = (x[a + 1] - lattice.axis_origin(a + 1)) / lattice.spacing[a];
        if !(s >= 0.0) || s > (n - 1) as f64 {
            return None;
        }
        let i = (s.floor() as usize).min(n.saturating_sub(2));
        base[a + 1] = i;
        frac[a] = s - i as f64;
    }
    let mut out = vec![0.0; fields.len()];
    for corner in 0..(1usize << d) {
        let mut idx = base.clone();
        let mut w = 1.0;
        for a in 0..d {
            if corner >> a & 1 == 1 {
                idx[a + 1] += 1;
                w *= frac[a];
            } else {
                w *= 1.0 - frac[a];
            }
        }
        if w == 0.0 {
            continue;
        }
        let p = g.ravel(&idx);
        for (o, f) in out.iter_mut().zip(fields) {
            let v = f[p];
            if !v.is_finite() {
                return None;
            }
            *o += w * v;
        }
    }
    Some(out)
}

/// Draw positions from `|ρ|` on the lattice: a cell is chosen by its mass
/// and the point is placed uniformly within the cell.
fn sample_positions(lattice: &SpacetimeGrid, rho: &[f64], n: usize, seed: u64) -> Result<Vec<[f64; 4]>> {
    let mut cdf = Vec::with_capacity(rho.len());
    let mut acc = 0.0;
    for r in rho {
        acc += r.abs();
        cdf.push(acc);
    }
    if !(acc > 0.0) {
        return Err(Error::Precondition("density vanishes everywhere".into()));
    }
    let g = lattice.slice_grid(0);
    let d = lattice.spatial_dims;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let target = rng.gen::<f64>() * acc;
        let cell = cdf.partition_point(|&c| c < target).min(rho.len() - 1);
        let p = g.point(cell);
        let mut x = [0.0; 4];
        for a in 0..d {
            let jitter = rng.gen::<f64>() - 0.5;
            let hi = lattice.coord(a + 1, lattice.axis_len(a + 1) - 1);
            x[a + 1] = (p[a + 1] + jitter * lattice.spacing[a]).clamp(lattice.axis_origin(a + 1), hi);
        }
        out.push(x);
    }
    Ok(out)
}

struct Walker {
    x: [f64; 4],
    tau: f64,
    degenerate: bool,
    samples: Vec<TrajectorySample>,
}

fn four_from_three(v: &[f64]) -> [f64; 4] {
    let v2: f64 = v.iter().map(|c| c * c).sum::<f64>().min(1.0 - 1e-15);
    let g = 1.0 / (1.0 - v2).sqrt();
    let mut u = [g, 0.0, 0.0, 0.0];
    for (i, c) in v.iter().enumerate() {
        u[i + 1] = g * c;
    }
    u
}

/// Draw `n_samples` positions from the density at the current time and
/// transport them along `v = j/ρ` for `steps` wave steps (RK4 in time,
/// multilinear in space, linear between wave steps). Sampling is
/// sequential and transport is per-sample, so results depend only on
/// the seed.
pub fn bohm_sample(source: &mut dyn DensityFlow, opts: BohmOptions) -> Result<BohmRun> {
    if opts.n_samples == 0 {
        return Err(Error::Config("need at least one sample".into()));
    }
    let lattice = source.lattice().clone();
    let d = lattice.spatial_dims;
    let (rho, j) = source.flow();
    let t0 = source.flow_time();
    let dt = source.flow_step();
    let starts = sample_positions(&lattice, &rho, opts.n_samples, opts.seed)?;
    let mut v_now = velocity_field(&rho, &j);
    let mut walkers: Vec<Walker> = starts
        .into_iter()
        .map(|mut x| {
            x[0] = t0;
            let v = interpolate(&lattice, &v_now, &x);
            let degenerate = v.is_none();
            let u = four_from_three(&v.unwrap_or_else(|| vec![0.0; d]));
            Walker { x, tau: 0.0, degenerate, samples: vec![TrajectorySample { tau: 0.0, position: x, velocity: u }] }
        })
        .collect();
    for _ in 0..opts.steps {
        source.advance()?;
        let (rho, j) = source.flow();
        let v_next = velocity_field(&rho, &j);
        let v_mid: Vec<Vec<f64>> = v_now
            .iter()
            .zip(&v_next)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect())
            .collect();
        walkers.par_iter_mut().for_each(|w| {
            if w.degenerate {
                let mut x = w.x;
                x[0] += dt;
                w.x = x;
                w.samples.push(TrajectorySample { tau: w.tau, position: x, velocity: [1.0, 0.0, 0.0, 0.0] });
                return;
            }
            let eval = |field: &[Vec<f64>], x: &[f64; 4]| interpolate(&lattice, field, x);
            let shift = |x: &[f64; 4], k: &[f64], s: f64| -> [f64; 4] {
                let mut y = *x;
                for a in 0..d {
                    y[a + 1] += s * k[a];
                }
                y
            };
            let step = || -> Option<([f64; 4], Vec<f64>)> {
                let k1 = eval(&v_now, &w.x)?;
                let k2 = eval(&v_mid, &shift(&w.x, &k1, 0.5 * dt))?;
                let k3 = eval(&v_mid, &shift(&w.x, &k2, 0.5 * dt))?;
                let k4 = eval(&v_next, &shift(&w.x, &k3, dt))?;
                let inc: Vec<f64> = (0..d).map(|a| (k1[a] + 2.0 * k2[a] + 2.0 * k3[a] + k4[a]) / 6.0).collect();
                let mut x = shift(&w.x, &inc, dt);
                x[0] += dt;
                let v = eval(&v_next, &x)?;
                Some((x, v))
            };
            match step() {
                Some((x, v)) => {
                    let u = four_from_three(&v);
                    w.tau += dt / u[0];
                    w.x = x;
                    w.samples.push(TrajectorySample { tau: w.tau, position: x, velocity: u });
                }
                None => {
                    w.degenerate = true;
                    let mut x = w.x;
                    x[0] += dt;
                    w.x = x;
                    w.samples.push(TrajectorySample { tau: w.tau, position: x, velocity: [1.0, 0.0, 0.0, 0.0] });
                }
            }
        });
        v_now = v_next;
    }
    let params = source.particle();
    let degenerate: Vec<bool> = walkers.iter().map(|w| w.degenerate).collect();
    let members = walkers
        .into_iter()
        .map(|w| PointTrajectory { params, samples: w.samples, normalization_drift: 0.0, truncated: w.degenerate })
        .collect();
    Ok(BohmRun { ensemble: PointEnsemble::uniform(members, opts.kernel_width)?, degenerate })
}

/// Total-variation distance between the weighted sample histogram and the
/// lattice density, both marginalised onto spatial `axis` (1-based) and
/// binned into `bins` equal bins spanning the density's support
/// (nodes above `10⁻⁸` of the peak). Samples beyond the span fall into
/// the edge bins.
pub fn marginal_tv_distance(positions: &[f64], weights: &[f64], lattice: &SpacetimeGrid, rho: &[f64], axis: usize, bins: usize) -> Result<f64> {
    if positions.len() != weights.len() || bins == 0 {
        return Err(Error::Shape("positions, weights and bins do not match".into()));
    }
    let g = lattice.slice_grid(0);
    let max = rho.iter().fold(0.0f64, |a, r| a.max(r.abs()));
    let support: Vec<usize> = (0..rho.len()).filter(|&i| rho[i].abs() >= 1e-8 * max).collect();
    if support.is_empty() {
        return Err(Error::Precondition("density vanishes everywhere".into()));
    }
    let coords: Vec<f64> = support.iter().map(|&i| g.point(i)[axis]).collect();
    let lo = coords.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = coords.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo).max(f64::MIN_POSITIVE) / bins as f64;
    let bin = |x: f64| (((x - lo) / width).floor().max(0.0) as usize).min(bins - 1);
    let mut wave = vec![0.0; bins];
    for i in 0..rho.len() {
        wave[bin(g.point(i)[axis])] += rho[i].abs();
    }
    let wt: f64 = wave.iter().sum();
    let mut hist = vec![0.0; bins];
    for (x, w) in positions.iter().zip(weights) {
        hist[bin(*x)] += w;
    }
    let ht: f64 = hist.iter().sum();
    Ok(0.5 * wave.iter().zip(&hist).map(|(a, b)| (a / wt - b / ht).abs()).sum::<f64>())
}

/// Weighted mean over members of the largest spatial separation between
/// each Bohmian path and the Lorentz-force path started from the same
/// position and velocity.
pub fn paired_deviation(run: &BohmRun, field: &FieldFn) -> Result<f64> {
    let ens = &run.ensemble;
    let devs: Vec<f64> = ens
        .members
        .par_iter()
        .map(|m| -> Result<f64> {
            let first = m.samples[0];
            let steps = m.samples.len() - 1;
            if steps == 0 {
                return Ok(0.0);
            }
            let dt = m.samples[1].position[0] - first.position[0];
            let classical = lorentz_integrate(m.params, first.position, first.velocity, field, steps as f64 * dt, dt, None)?;
            Ok(m.samples
                .iter()
                .zip(&classical.samples)
                .map(|(a, b)| (1..4).map(|k| (a.position[k] - b.position[k]).powi(2)).sum::<f64>().sqrt())
                .fold(0.0, f64::max))
        })
        .collect::<Result<_>>()?;
    Ok(devs.iter().zip(&ens.weights).map(|(d, w)| d * w).sum())
}

/// Gauss–Hermite nodes and weights for the standard normal density
/// (Golub–Welsch), weights summing to one.
pub fn normal_quadrature(n: usize) -> (Vec<f64>, Vec<f64>) {
    let jacobi = nalgebra::DMatrix::from_fn(n, n, |i, j| if i.abs_diff(j) == 1 { (i.max(j) as f64).sqrt() } else { 0.0 });
    let (nodes, vecs) = crate::linalg::dense_symmetric_eigen(jacobi);
    let weights = (0..n).map(|k| vecs[(0, k)] * vecs[(0, k)]).collect();
    (nodes, weights)
}

/// Phase-space Gaussian of independent position and momentum spreads.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseSpaceGaussian {
    pub position: [f64; 3],
    pub momentum: [f64; 3],
    pub position_spread: [f64; 3],
    pub momentum_spread: [f64; 3],
}

/// Mean position `(t, ⟨x⟩)` of Lorentz-force paths started from the
/// quadrature nodes of `start` (nodes per spread direction), sampled every
/// `dt` in coordinate time. Momentum is `m u` with `u` the spatial
/// four-velocity.
pub fn phase_space_centroid(params: ParticleParams, start: &PhaseSpaceGaussian, field: &FieldFn, duration: f64, dt: f64, nodes: usize) -> Result<Vec<(f64, [f64; 3])>> {
    let (xs, ws) = normal_quadrature(nodes.max(1));
    // one quadrature direction per nonzero spread
    let mut dirs = Vec::new();
    for i in 0..3 {
        if start.position_spread[i] > 0.0 {
            dirs.push((false, i, start.position_spread[i]));
        }
        if start.momentum_spread[i] > 0.0 {
            dirs.push((true, i, start.momentum_spread[i]));
        }
    }
    let count = xs.len().pow(dirs.len() as u32);
    let paths: Vec<(f64, PointTrajectory)> = (0..count)
        .into_par_iter()
        .map(|k| {
            let (mut x, mut p, mut w) = (start.position, start.momentum, 1.0);
            let mut rest = k;
            for &(is_p, i, s) in &dirs {
                let j = rest % xs.len();
                rest /= xs.len();
                w *= ws[j];
                if is_p {
                    p[i] += s * xs[j];
                } else {
                    x[i] += s * xs[j];
                }
            }
            let u: Vec<f64> = p.iter().map(|v| v / params.m).collect();
            let u0 = (1.0 + u.iter().map(|v| v * v).sum::<f64>()).sqrt();
            let tr = lorentz_integrate(params, [0.0, x[0], x[1], x[2]], [u0, u[0], u[1], u[2]], field, duration, dt, None)?;
            Ok((w, tr))
        })
        .collect::<Result<_>>()?;
    let len = paths.iter().map(|(_, t)| t.samples.len()).min().unwrap_or(0);
    Ok((0..len)
        .map(|s| {
            let mut mean = [0.0; 3];
            for (w, tr) in &paths {
                for (m, v) in mean.iter_mut().zip(&tr.samples[s].position[1..]) {
                    *m += w * v;
                }
            }
            (paths[0].1.samples[s].position[0], mean)
        })
        .collect())
}

/// Quadratic-well comparison for one value of `ħ`: a coherent KG packet
/// (ground-state width `√(ħ/2mω)`, displaced by `offset`) in
/// `A⁰ = mω²x²/2q` is sampled and transported for one period, and each
/// Bohmian path is compared with the Lorentz-force path from the same start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WellComparison {
    pub hbar: f64,
    pub omega: f64,
    pub offset: f64,
    pub half_width: f64,
    pub spacing: f64,
    pub n_samples: usize,
    pub seed: u64,
}

impl Default for WellComparison {
    fn default() -> Self {
        Self { hbar: 1.0, omega: 0.2, offset: 3.0, half_width: 10.0, spacing: 0.05, n_samples: 2000, seed: 1 }
    }
}

impl WellComparison {
    pub fn run(&self) -> Result<f64> {
        let params = crate::kg::WaveParams { hbar: self.hbar, q: 1.0, m: 1.0 };
        let n = (2.0 * self.half_width / self.spacing).round() as usize + 1;
        let h = self.spacing;
        // Half the mass-corrected leapfrog limit.
        let dt = 0.5 * 2.0 / (4.0 / (h * h) + (params.m / params.hbar).powi(2)).sqrt();
        let lattice = SpacetimeGrid::centered(1, n, h, dt, 1, crate::grid::Boundary::Absorbing)?;
        let k = params.m * self.omega * self.omega / params.q;
        let potential = crate::kg::static_potential(&lattice, |x| vec![0.5 * k * x[1] * x[1], 0.0]);
        let width = (params.hbar / (2.0 * params.m * self.omega)).sqrt();
        let mut wave = KgState::gaussian_packet(lattice, params, potential, &[self.offset], width, &[0.0], true)?;
        let period = 2.0 * std::f64::consts::PI / self.omega;
        let opts = BohmOptions { n_samples: self.n_samples, seed: self.seed, steps: (period / dt).round() as usize, kernel_width: 2.0 * h };
        let run = bohm_sample(&mut wave, opts)?;
        if run.degenerate_count() > 0 {
            return Err(Error::Precondition(format!("{} samples met a vanishing density", run.degenerate_count())));
        }
        let field = electrostatic_field(move |x| 0.5 * k * x[0] * x[0], 1e-3);
        paired_deviation(&run, &field)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Boundary;
    use crate::kg::WaveParams;

    const UNIT: ParticleParams = ParticleParams { q: 1.0, m: 1.0 };

    #[test]
    fn free_particle_moves_in_a_straight_line() {
        let u = four_velocity(&[0.3, -0.2, 0.1]).unwrap();
        let f = uniform_field([0.0; 3], [0.0; 3]);
        let tr = lorentz_integrate(UNIT, [0.0; 4], u, &f, 10.0, 0.1, None).unwrap();
        let last = tr.samples.last().unwrap();
        for (k, v) in [0.3, -0.2, 0.1].iter().enumerate() {
            assert!((last.position[k + 1] - 10.0 * v).abs() < 1e-12);
        }
        assert!(tr.normalization_drift < 1e-12);
    }

    #[test]
    fn cyclotron_frequency_includes_lorentz_factor() {
        let speed = 0.6;
        let u = four_velocity(&[speed, 0.0, 0.0]).unwrap();
        let b = 1.0;
        let f = uniform_field([0.0; 3], [0.0, 0.0, b]);
        let omega = b / (u[0] * UNIT.m);
        let duration = 10.0 * 2.0 * std::f64::consts::PI / omega;
        let tr = lorentz_integrate(UNIT, [0.0; 4], u, &f, duration, 0.01, None).unwrap();
        // Unwrapped rotation angle of the velocity.
        let mut angle = 0.0;
        let mut prev = 0.0f64;
        for s in &tr.samples {
            let a = s.velocity[2].atan2(s.velocity[1]);
            let mut da = a - prev;
            da -= (da / (2.0 * std::f64::consts::PI)).round() * 2.0 * std::f64::consts::PI;
            angle += da;
            prev = a;
        }
        let t = tr.samples.last().unwrap().position[0];
        let measured = -angle / t;
        assert!((measured - omega).abs() / omega < 1e-3, "{measured} vs {omega}");
        let radius = speed * u[0] / b;
        let max_x = tr.samples.iter().map(|s| s.position[1]).fold(f64::MIN, f64::max);
        assert!((max_x - radius).abs() / radius < 1e-3);
    }

    #[test]
    fn uniform_electric_field_gives_hyperbolic_motion() {
        let e = 0.5;
        let f = uniform_field([e, 0.0, 0.0], [0.0; 3]);
        let tr = lorentz_integrate(UNIT, [0.0; 4], [1.0, 0.0, 0.0, 0.0], &f, 8.0, 0.01, None).unwrap();
        let a = e * UNIT.q / UNIT.m;
        for s in tr.samples.iter().step_by(100) {
            let t = s.position[0];
            let x = ((1.0 + (a * t).powi(2)).sqrt() - 1.0) / a;
            let tau = (a * t).asinh() / a;
            assert!((s.position[1] - x).abs() < 1e-9, "t {t}: {} vs {x}", s.position[1]);
            assert!((s.tau - tau).abs() < 1e-9);
        }
        assert!(tr.normalization_drift < 1e-9);
    }

    #[test]
    fn leaving_the_lattice_truncates() {
        let g = SpacetimeGrid::centered(1, 21, 0.1, 0.01, 1, Boundary::Absorbing).unwrap();
        let u = four_velocity(&[0.5]).unwrap();
        let f = uniform_field([0.0; 3], [0.0; 3]);
        let tr = lorentz_integrate(UNIT, [0.0; 4], u, &f, 10.0, 0.01, Some(&g)).unwrap();
        assert!(tr.truncated);
        assert!(tr.samples.last().unwrap().position[1] <= 1.0);
    }

    #[test]
    fn rejects_spacelike_start() {
        let f = uniform_field([0.0; 3], [0.0; 3]);
        assert!(matches!(lorentz_integrate(UNIT, [0.0; 4], [1.0, 2.0, 0.0, 0.0], &f, 1.0, 0.1, None), Err(Error::Precondition(_))));
    }

    fn rest_particle() -> PointTrajectory {
        let f = uniform_field([0.0; 3], [0.0; 3]);
        lorentz_integrate(UNIT, [0.0, 0.013, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0], &f, 0.04, 0.01, None).unwrap()
    }

    #[test]
    fn static_particle_deposits_its_charge() {
        let g = SpacetimeGrid::centered(1, 201, 0.02, 0.01, 3, Boundary::Absorbing).unwrap();
        let ens = PointEnsemble::uniform(vec![rest_particle()], 0.1).unwrap();
        let dep = deposit_ensemble(&ens, &g).unwrap();
        for level in 0..3 {
            assert!((dep.current.charge_at(level) - 1.0).abs() < 1e-12);
        }
        assert!(dep.current.comps[1].iter().all(|&v| v == 0.0));
        let peak = dep.current.comps[0].iter().cloned().fold(0.0, f64::max);
        let analytic = 1.0 / (0.1 * (2.0 * std::f64::consts::PI).sqrt());
        assert!((peak - analytic).abs() / analytic < 0.03);
    }

    #[test]
    fn narrow_kernel_is_a_configuration_error() {
        let g = SpacetimeGrid::centered(1, 101, 0.1, 0.01, 3, Boundary::Absorbing).unwrap();
        let ens = PointEnsemble::uniform(vec![rest_particle()], 0.15).unwrap();
        assert!(matches!(deposit_ensemble(&ens, &g), Err(Error::Config(_))));
    }

    fn harmonic_deposit_residual(width: f64) -> f64 {
        let g = SpacetimeGrid::centered(1, 1601, 0.005, 0.005, 5, Boundary::Absorbing).unwrap();
        let field = electrostatic_field(|x| 0.5 * x[0] * x[0], 1e-3);
        let n = 400;
        let members: Vec<PointTrajectory> = (0..n)
            .map(|i| {
                let x0 = -1.0 + 2.0 * (i as f64 + 0.5) / n as f64;
                let u = four_velocity(&[0.1 * (2.0 * x0).sin()]).unwrap();
                lorentz_integrate(UNIT, [0.0, x0, 0.0, 0.0], u, &field, 0.02, 0.005, None).unwrap()
            })
            .collect();
        let ens = PointEnsemble::uniform(members, width).unwrap();
        let dep = deposit_ensemble(&ens, &g).unwrap();
        let res = deposit_tenet_residual(&dep, &field, StencilOrder::Fourth).unwrap();
        let force = dep.current.comps[0].iter().enumerate().map(|(p, r)| (r * g.point(p)[1]).abs()).fold(0.0, f64::max);
        res.norms_at_level(2, 4).max / force
    }

    #[test]
    fn deposited_tenet_residual_shrinks_with_kernel_width() {
        let r: Vec<f64> = [0.4, 0.2, 0.1].iter().map(|&w| harmonic_deposit_residual(w)).collect();
        assert!(r[0] > r[1] && r[1] > r[2], "{r:?}");
    }

    fn free_kg_packet(hbar: f64) -> KgState {
        let g = SpacetimeGrid::centered(1, 600, 0.05, 0.02, 1, Boundary::Absorbing).unwrap();
        let params = WaveParams { hbar, q: 1.0, m: 1.0 };
        KgState::gaussian_packet(g, params, vec![vec![0.0; 600]; 2], &[-5.0], 1.0, &[0.5], true).unwrap()
    }

    #[test]
    fn bohmian_ensemble_follows_free_packet_density() {
        let mut wave = free_kg_packet(0.1);
        let opts = BohmOptions { n_samples: 10_000, seed: 11, steps: 500, kernel_width: 0.2 };
        let run = bohm_sample(&mut wave, opts).unwrap();
        assert_eq!(run.degenerate_count(), 0);
        let (rho, _) = wave.density_flow();
        let tv = marginal_tv_distance(&run.final_positions(1), &run.ensemble.weights, &wave.lattice, &rho, 1, 30).unwrap();
        assert!(tv < 0.05, "tv {tv}");
        let mean: f64 = run.final_positions(1).iter().sum::<f64>() / 1e4;
        assert!(mean > -1.0, "packet centre {mean}");
    }

    #[test]
    fn sampling_is_reproducible_for_a_seed() {
        let opts = BohmOptions { n_samples: 500, seed: 3, steps: 20, kernel_width: 0.2 };
        let a = bohm_sample(&mut free_kg_packet(0.1), opts).unwrap();
        let b = bohm_sample(&mut free_kg_packet(0.1), opts).unwrap();
        let bits = |r: &BohmRun| r.final_positions(1).iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        let c = bohm_sample(&mut free_kg_packet(0.1), BohmOptions { seed: 4, ..opts }).unwrap();
        assert_ne!(bits(&a), bits(&c));
    }

    #[test]
    fn well_deviation_shrinks_with_hbar() {
        let d: Vec<f64> = [1.0, 0.5, 0.25]
            .iter()
            .map(|&hbar| WellComparison { hbar, n_samples: 500, ..Default::default() }.run().unwrap())
            .collect();
        assert!(d[0] > d[1] && d[1] > d[2], "{d:?}");
    }

    #[test]
    fn trajectory_csv_has_header_and_rows() {
        let mut buf = Vec::new();
        rest_particle().write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("tau,t,x,y,z,u0,u1,u2,u3\n"));
        assert_eq!(text.lines().count(), 6);
    }

    #[test]
    fn normal_quadrature_reproduces_moments() {
        let (x, w) = normal_quadrature(12);
        let moment = |k: i32| x.iter().zip(&w).map(|(a, b)| b * a.powi(k)).sum::<f64>();
        assert!((moment(0) - 1.0).abs() < 1e-12);
        assert!(moment(1).abs() < 1e-12);
        assert!((moment(2) - 1.0).abs() < 1e-12);
        assert!((moment(4) - 3.0).abs() < 1e-10);
        assert!((moment(6) - 15.0).abs() < 1e-9);
    }

    #[test]
    fn spread_centroid_in_uniform_field_matches_single_path() {
        // Free paths with momenta symmetric about zero leave the centroid in place.
        let f = uniform_field([0.0; 3], [0.0; 3]);
        let start = PhaseSpaceGaussian { position: [1.0, 0.0, 0.0], momentum: [0.0; 3], position_spread: [0.5, 0.0, 0.0], momentum_spread: [0.2, 0.0, 0.0] };
        let c = phase_space_centroid(UNIT, &start, &f, 5.0, 0.1, 8).unwrap();
        assert!(c.iter().all(|(_, x)| (x[0] - 1.0).abs() < 1e-12));
        let e = uniform_field([0.3, 0.0, 0.0], [0.0; 3]);
        let sharp = PhaseSpaceGaussian { position_spread: [0.0; 3], momentum_spread: [0.0; 3], ..start };
        let c = phase_space_centroid(UNIT, &sharp, &e, 5.0, 0.1, 8).unwrap();
        let single = lorentz_integrate(UNIT, [0.0, 1.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0], &e, 5.0, 0.1, None).unwrap();
        assert_eq!(c.len(), single.samples.len());
        assert!(c.iter().zip(&single.samples).all(|(a, b)| a.1[0] == b.position[1]));
    }
}
