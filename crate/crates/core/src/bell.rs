//! Two-particle spin-correlation experiment with Stern–Gerlach analyzers.
//!
//! Each particle carries one spatial coordinate. The line is split at the
//! origin: the left half belongs to analyzer A (centred at `−D`), the right
//! half to analyzer B (centred at `+D`), and a particle's outcome is the
//! sign of its displacement from the centre of the analyzer it sits in.
//! An analyzer at angle θ measures spin along `(sin θ, 0, cos θ)`; it is
//! modelled as a spin-frame rotation about y followed by a `σ_z` gradient
//! coupling, which is equivalent to a gradient field along that direction.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{fft_axis, wavenumbers};
use crate::grid::{Boundary, SpacetimeGrid};
use crate::linalg::{ordered_sum, LanczosOptions};
use crate::manybody::{DensityBundle, ExternalFields, ManyBodyState, ParticleSpec, Symmetry, C64};

const ZERO: C64 = C64::new(0.0, 0.0);

/// Double-well trap holding one particle near each analyzer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrapSpec {
    pub sites: usize,
    pub length: f64,
    /// Distance `D` of each well (and analyzer) from the origin.
    pub separation: f64,
    pub omega: f64,
    /// Height at which the wells are flattened off.
    pub cap: f64,
    pub q: f64,
    pub m: f64,
    pub hbar: f64,
    pub softening: f64,
}

impl Default for TrapSpec {
    fn default() -> Self {
        Self { sites: 256, length: 40.0, separation: 10.0, omega: 1.0, cap: 25.0, q: 1.0, m: 1.0, hbar: 1.0, softening: 0.5 }
    }
}

impl TrapSpec {
    pub fn lattice(&self) -> Result<SpacetimeGrid> {
        if self.sites < 8 || !(self.length > 0.0) || !(self.separation > 0.0) || self.separation >= 0.5 * self.length {
            return Err(Error::Config("trap lattice must hold both wells".into()));
        }
        SpacetimeGrid::centered(1, self.sites, self.length / self.sites as f64, 0.01, 1, Boundary::Absorbing)
    }

    pub fn particle(&self) -> ParticleSpec {
        ParticleSpec::pauli(self.q, self.m, self.hbar)
    }

    /// Centre of the analyzer that owns position `x`.
    pub fn centre(&self, x: f64) -> f64 {
        if x < 0.0 {
            -self.separation
        } else {
            self.separation
        }
    }

    fn fields(&self, lattice: &SpacetimeGrid) -> ExternalFields {
        let (w, cap) = (self.omega, self.cap);
        let d = self.separation;
        ExternalFields::electrostatic(lattice, |x| (0.5 * w * w * (x[0].abs() - d).powi(2)).min(cap))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BellMode {
    /// Particle 0 starts at analyzer A and particle 1 at analyzer B.
    Distinguishable,
    /// Identical fermions; either particle may reach either analyzer.
    IdenticalAntisymmetric,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BellConfig {
    pub theta_a: f64,
    pub theta_b: f64,
    /// Field gradient `b` inside both analyzers.
    pub gradient: f64,
    /// Flight time after the trap is switched off.
    pub release_time: f64,
    pub time_step: f64,
    pub mode: BellMode,
    pub n_samples: u64,
    pub seed: u64,
}

impl Default for BellConfig {
    fn default() -> Self {
        Self {
            theta_a: 0.0,
            theta_b: 0.0,
            gradient: 17.0,
            release_time: 1.0,
            time_step: 0.005,
            mode: BellMode::IdenticalAntisymmetric,
            n_samples: 10_000,
            seed: 1,
        }
    }
}

impl BellConfig {
    pub fn validate(&self) -> Result<()> {
        let angle_ok = |t: f64| (0.0..2.0 * PI).contains(&t);
        if !angle_ok(self.theta_a) || !angle_ok(self.theta_b) {
            return Err(Error::Config(format!("analyzer angles {} and {} must lie in [0, 2π)", self.theta_a, self.theta_b)));
        }
        if !(self.gradient > 0.0) || !(self.release_time > 0.0) || !(self.time_step > 0.0) {
            return Err(Error::Config("gradient, release time and time step must be positive".into()));
        }
        if self.n_samples == 0 {
            return Err(Error::Config("need at least one sample".into()));
        }
        Ok(())
    }

    pub fn with_angles(&self, theta_a: f64, theta_b: f64) -> Self {
        Self { theta_a: theta_a.rem_euclid(2.0 * PI), theta_b: theta_b.rem_euclid(2.0 * PI), ..*self }
    }
}

/// `(|↑↓⟩ − |↓↑⟩)/√2` in the spin ordering of [`ManyBodyState`].
pub fn singlet_spinor() -> [C64; 4] {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    [ZERO, C64::new(s, 0.0), C64::new(-s, 0.0), ZERO]
}

/// Singlet predictions at analyzer angle difference `dθ`:
/// `(P(same outcome), E)`.
pub fn singlet_oracle(dtheta: f64) -> (f64, f64) {
    ((0.5 * dtheta).sin().powi(2), -dtheta.cos())
}

/// Ground state of the trap in the singlet sector.
pub fn prepare_singlet(trap: &TrapSpec, mode: BellMode) -> Result<ManyBodyState> {
    let lattice = trap.lattice()?;
    let fields = trap.fields(&lattice);
    let p = trap.particle();
    let len = lattice.spatial_len().pow(2) * 4;
    let base = ManyBodyState::new(lattice, vec![p, p], fields, trap.hbar, trap.softening, Symmetry::Antisymmetric, vec![ZERO; len])?;
    let chi = singlet_spinor();
    let onto_singlet = move |c: &mut [C64]| {
        let amp = chi[1] * c[1] + chi[2] * c[2];
        for (v, s) in c.iter_mut().zip(&chi) {
            *v = amp * s;
        }
    };
    let opts = LanczosOptions { krylov_dim: 40, tol: 1e-8, max_restarts: 2000, seed: 11 };
    let pairs = base.lowest_eigenstates(2, Some(&onto_singlet), opts)?;
    let gap = pairs[1].value - pairs[0].value;
    if gap <= 1e-8 * pairs[0].value.abs().max(1.0) {
        return Err(Error::Preparation(format!("trap ground state is degenerate (gap {gap:.3e})")));
    }
    let mut state = base.with_phi(pairs[0].vector.clone())?;
    state.normalize()?;
    match mode {
        BellMode::IdenticalAntisymmetric => Ok(state),
        BellMode::Distinguishable => assign_particles(&state),
    }
}

/// Keep only the branch with particle 0 at analyzer A and particle 1 at B,
/// which removes the exchange degeneracy.
pub fn assign_particles(state: &ManyBodyState) -> Result<ManyBodyState> {
    let g = &state.lattice;
    let l = state.site_len();
    let mut phi = state.phi.clone();
    phi.par_chunks_mut(4).enumerate().for_each(|(c, o)| {
        if !(g.coord(1, c / l) < 0.0 && g.coord(1, c % l) >= 0.0) {
            o.iter_mut().for_each(|v| *v = ZERO);
        }
    });
    let mut out = ManyBodyState::new(g.clone(), state.particles.clone(), state.fields.clone(), state.hbar, state.softening, Symmetry::None, phi)?;
    out.normalize()?;
    Ok(out)
}

/// Separable control: the particle at A is spin up and the particle at B
/// spin down (along z). Keeps the exchange symmetry of `state`.
pub fn product_control(state: &ManyBodyState) -> Result<ManyBodyState> {
    let l = state.site_len();
    let mut phi = state.phi.clone();
    let g = &state.lattice;
    phi.par_chunks_mut(4).enumerate().for_each(|(c, o)| {
        let left0 = g.coord(1, c / l) < 0.0;
        let left1 = g.coord(1, c % l) < 0.0;
        for (s, v) in o.iter_mut().enumerate() {
            let up0 = s & 2 == 0;
            let up1 = s & 1 == 0;
            let keep = left0 != left1 && up0 == left0 && up1 == left1;
            if !keep {
                *v = ZERO;
            }
        }
    });
    let mut out = state.with_phi(phi)?;
    out.normalize()?;
    Ok(out)
}

/// `⟨S²⟩/ħ²` of a two-particle state.
pub fn total_spin_squared(state: &ManyBodyState) -> Result<f64> {
    if state.n_particles() != 2 {
        return Err(Error::Unsupported("total spin of more than two particles".into()));
    }
    let v: f64 = ordered_sum(state.phi.len() / 4, |k| {
        let c = &state.phi[4 * k..4 * k + 4];
        // S²/ħ² = 2 on |↑↑⟩, |↓↓⟩ and [[1, 1], [1, 1]] on {|↑↓⟩, |↓↑⟩}.
        2.0 * (c[0].norm_sqr() + c[3].norm_sqr()) + (c[1] + c[2]).norm_sqr()
    });
    Ok(v * state.config_volume())
}

/// Bloch vector `⟨σ⟩` of particle `a`'s reduced spin state.
pub fn bloch_vector(state: &ManyBodyState, a: usize) -> Result<[f64; 3]> {
    if a >= state.n_particles() {
        return Err(Error::Index { index: a, len: state.n_particles() });
    }
    let b = state.densities();
    Ok([0, 1, 2].map(|k| b.spin[a][k].iter().sum::<f64>() * b.volume))
}

/// Result of the flight through both analyzers.
#[derive(Debug, Clone)]
pub struct AnalyzerRun {
    pub state: ManyBodyState,
    pub config: BellConfig,
    /// Smallest lobe separation in units of the widest lobe width.
    pub separation_ratio: f64,
    /// Lobes did not separate by four widths within the release time.
    pub inconclusive: bool,
}

/// Minimum lobe separation, in lobe widths, for a conclusive run.
pub const MIN_SEPARATION: f64 = 4.0;

impl AnalyzerRun {
    /// Spin-summed joint density `ρ(x₀, x₁)`.
    pub fn density(&self) -> Vec<f64> {
        self.state.phi.par_chunks(4).map(|c| c.iter().map(|v| v.norm_sqr()).sum()).collect()
    }

    pub fn bundle(&self) -> DensityBundle {
        self.state.densities()
    }
}

fn rotation(theta: f64) -> [[C64; 2]; 2] {
    // R_y(−θ) maps the spin-up state along (sin θ, 0, cos θ) to z-up.
    let (c, s) = ((0.5 * theta).cos(), (0.5 * theta).sin());
    [[C64::new(c, 0.0), C64::new(s, 0.0)], [C64::new(-s, 0.0), C64::new(c, 0.0)]]
}

/// Rotate spin frames, switch the trap off and evolve in the analyzer
/// gradients with a Strang split-operator scheme.
pub fn run_analyzers(state: &ManyBodyState, trap: &TrapSpec, cfg: &BellConfig) -> Result<AnalyzerRun> {
    cfg.validate()?;
    if state.n_particles() != 2 || state.lattice.spatial_dims != 1 {
        return Err(Error::Config("analyzers need two particles on a line".into()));
    }
    let l = state.site_len();
    let g = state.lattice.clone();
    let xs: Vec<f64> = (0..l).map(|i| g.coord(1, i)).collect();
    let rot_a = rotation(cfg.theta_a);
    let rot_b = rotation(cfg.theta_b);
    let mut phi = state.phi.clone();
    phi.par_chunks_mut(4).enumerate().for_each(|(c, o)| {
        let sites = [c / l, c % l];
        for (a, &site) in sites.iter().enumerate() {
            let r = if xs[site] < 0.0 { &rot_a } else { &rot_b };
            let bit = if a == 0 { 2 } else { 1 };
            for s in 0..4 {
                if s & bit != 0 {
                    continue;
                }
                let (u, d) = (o[s], o[s | bit]);
                o[s] = r[0][0] * u + r[0][1] * d;
                o[s | bit] = r[1][0] * u + r[1][1] * d;
            }
        }
    });

    let hbar = trap.hbar;
    let steps = (cfg.release_time / cfg.time_step).round().max(1.0) as usize;
    let dt = cfg.release_time / steps as f64;
    let particles = state.particles.clone();
    let potential: Vec<f64> = (0..l * l * 4)
        .into_par_iter()
        .map(|i| {
            let (c, s) = (i / 4, i % 4);
            let sites = [c / l, c % l];
            let mut v = state.pair_potential(&sites);
            for (a, &site) in sites.iter().enumerate() {
                let bit = if a == 0 { 2 } else { 1 };
                let z = if s & bit == 0 { 1.0 } else { -1.0 };
                v += particles[a].g * cfg.gradient * (xs[site] - trap.centre(xs[site])) * z;
            }
            v
        })
        .collect();
    let half: Vec<C64> = potential.iter().map(|v| C64::from_polar(1.0, -0.5 * v * dt / hbar)).collect();
    let full: Vec<C64> = half.iter().map(|v| v * v).collect();
    let k = wavenumbers(l, g.spacing[0]);
    let kinetic: Vec<C64> = (0..l * l)
        .map(|c| {
            let (k0, k1) = (k[c / l], k[c % l]);
            let e = hbar * hbar * (k0 * k0 / particles[0].m + k1 * k1 / particles[1].m) / 2.0;
            C64::from_polar(1.0, -e * dt / hbar)
        })
        .collect();
    let shape = [l, l, 4];
    let norm = 1.0 / (l * l) as f64;
    let mul = |phi: &mut [C64], f: &[C64]| phi.par_iter_mut().zip(f).for_each(|(p, v)| *p *= v);
    mul(&mut phi, &half);
    for step in 0..steps {
        fft_axis(&mut phi, &shape, 0, false);
        fft_axis(&mut phi, &shape, 1, false);
        phi.par_chunks_mut(4).zip(&kinetic).for_each(|(o, kf)| o.iter_mut().for_each(|v| *v *= kf * norm));
        fft_axis(&mut phi, &shape, 0, true);
        fft_axis(&mut phi, &shape, 1, true);
        mul(&mut phi, if step + 1 == steps { &half } else { &full });
    }

    let mut out = state.with_phi(phi)?;
    out.fields = ExternalFields::zero(&g);
    out.time = state.time + cfg.release_time;
    let separation_ratio = lobe_separation(&out, trap);
    Ok(AnalyzerRun { state: out, config: *cfg, separation_ratio, inconclusive: separation_ratio < MIN_SEPARATION })
}

/// Smallest `|mean₊ − mean₋| / max(width₊, width₋)` over both analyzers,
/// using the spin-resolved single-particle densities in each analyzer.
fn lobe_separation(state: &ManyBodyState, trap: &TrapSpec) -> f64 {
    let l = state.site_len();
    let g = &state.lattice;
    // moments[region][spin] = (w, Σwu, Σwu²)
    let mut moments = [[[0.0f64; 3]; 2]; 2];
    for (c, o) in state.phi.chunks(4).enumerate() {
        let sites = [c / l, c % l];
        for (a, &site) in sites.iter().enumerate() {
            let x = g.coord(1, site);
            let u = x - trap.centre(x);
            let region = usize::from(x >= 0.0);
            let bit = if a == 0 { 2 } else { 1 };
            for (s, v) in o.iter().enumerate() {
                let spin = usize::from(s & bit != 0);
                let w = v.norm_sqr();
                let m = &mut moments[region][spin];
                m[0] += w;
                m[1] += w * u;
                m[2] += w * u * u;
            }
        }
    }
    let total: f64 = moments.iter().flatten().map(|m| m[0]).sum();
    let mut ratio = f64::INFINITY;
    for region in &moments {
        if region.iter().any(|m| m[0] < 1e-6 * total) {
            continue;
        }
        let stats: Vec<(f64, f64)> = region
            .iter()
            .map(|m| {
                let mean = m[1] / m[0];
                (mean, (m[2] / m[0] - mean * mean).max(0.0).sqrt())
            })
            .collect();
        let width = stats[0].1.max(stats[1].1);
        ratio = ratio.min((stats[0].0 - stats[1].0).abs() / width);
    }
    ratio
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationMode {
    /// Region integrals of the joint density.
    Exact,
    /// Seeded samples drawn from the joint density.
    MonteCarlo,
}

/// Connected region of the joint density above the peak threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub centre: [f64; 2],
    pub integral: f64,
    pub height: f64,
}

/// Peaks are regions above this fraction of the density maximum.
pub const PEAK_THRESHOLD: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeTable {
    pub theta_a: f64,
    pub theta_b: f64,
    pub mode: CorrelationMode,
    /// `counts[i][j]` with index 0 for `+` and 1 for `−` (A first). They sum
    /// to the number of conclusive samples.
    pub counts: [[u64; 2]; 2],
    pub probabilities: [[f64; 2]; 2],
    pub correlation: f64,
    /// Fraction of samples (or probability) with a tie or with both
    /// particles in one analyzer.
    pub discarded_fraction: f64,
    /// Probability of `+` at A and at B.
    pub marginal_plus: [f64; 2],
    pub peaks: Vec<Peak>,
    /// Largest integral difference between swap-related peaks, when every
    /// peak has a partner.
    pub swap_pair_defect: Option<f64>,
    pub inconclusive: bool,
}

impl OutcomeTable {
    pub fn n_samples(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

/// Outcome indices `(A, B)` of a configuration cell, or `None` when it is
/// discarded.
fn classify(trap: &TrapSpec, h: f64, x0: f64, x1: f64) -> Option<(usize, usize)> {
    if (x0 < 0.0) == (x1 < 0.0) {
        return None;
    }
    let (xa, xb) = if x0 < 0.0 { (x0, x1) } else { (x1, x0) };
    let (ua, ub) = (xa - trap.centre(xa), xb - trap.centre(xb));
    if ua.abs() < h || ub.abs() < h {
        return None;
    }
    Some((usize::from(ua < 0.0), usize::from(ub < 0.0)))
}

/// Correlation and the `+` marginals at A and B.
fn table_from(p: [[f64; 2]; 2]) -> (f64, [f64; 2]) {
    let total: f64 = p.iter().flatten().sum();
    let e = (p[0][0] + p[1][1] - p[0][1] - p[1][0]) / total;
    (e, [(p[0][0] + p[0][1]) / total, (p[0][0] + p[1][0]) / total])
}

/// Outcome statistics of an analyzer run.
pub fn correlation(trap: &TrapSpec, run: &AnalyzerRun, mode: CorrelationMode) -> Result<OutcomeTable> {
    let cfg = &run.config;
    let l = run.state.site_len();
    let g = &run.state.lattice;
    let h = g.spacing[0];
    let rho = run.density();
    let dv = run.state.config_volume();
    let xs: Vec<f64> = (0..l).map(|i| g.coord(1, i)).collect();
    let mut probabilities = [[0.0; 2]; 2];
    let mut counts = [[0u64; 2]; 2];
    let discarded_fraction;
    match mode {
        CorrelationMode::Exact => {
            let mut lost = 0.0;
            for (c, r) in rho.iter().enumerate() {
                match classify(trap, h, xs[c / l], xs[c % l]) {
                    Some((i, j)) => probabilities[i][j] += r * dv,
                    None => lost += r * dv,
                }
            }
            let total: f64 = probabilities.iter().flatten().sum::<f64>() + lost;
            probabilities.iter_mut().flatten().for_each(|p| *p /= total);
            discarded_fraction = lost / total;
            counts = apportion(&probabilities, cfg.n_samples);
        }
        CorrelationMode::MonteCarlo => {
            let mut cdf = Vec::with_capacity(rho.len());
            let mut acc = 0.0;
            for r in &rho {
                acc += r;
                cdf.push(acc);
            }
            let outcomes: Vec<Option<(usize, usize)>> = (0..cfg.n_samples)
                .into_par_iter()
                .map(|i| {
                    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                    rng.set_stream(i);
                    let u: f64 = rng.gen::<f64>() * acc;
                    let c = cdf.partition_point(|&v| v <= u).min(rho.len() - 1);
                    classify(trap, h, xs[c / l], xs[c % l])
                })
                .collect();
            let mut lost = 0u64;
            for o in outcomes {
                match o {
                    Some((i, j)) => counts[i][j] += 1,
                    None => lost += 1,
                }
            }
            let kept: u64 = counts.iter().flatten().sum();
            for i in 0..2 {
                for j in 0..2 {
                    probabilities[i][j] = counts[i][j] as f64 / kept.max(1) as f64;
                }
            }
            discarded_fraction = lost as f64 / cfg.n_samples as f64;
        }
    }
    let (correlation, marginal_plus) = table_from(probabilities);
    let peaks = find_peaks(&rho, l, &xs, dv);
    let swap_pair_defect = swap_defect(&peaks, h);
    Ok(OutcomeTable {
        theta_a: cfg.theta_a,
        theta_b: cfg.theta_b,
        mode,
        counts,
        probabilities,
        correlation,
        discarded_fraction,
        marginal_plus,
        peaks,
        swap_pair_defect,
        inconclusive: run.inconclusive,
    })
}

/// Largest-remainder rounding of probabilities to `n` counts.
fn apportion(p: &[[f64; 2]; 2], n: u64) -> [[u64; 2]; 2] {
    let flat: Vec<f64> = p.iter().flatten().map(|v| v * n as f64).collect();
    let mut counts: Vec<u64> = flat.iter().map(|v| v.floor() as u64).collect();
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&a, &b| (flat[b] - flat[b].floor()).partial_cmp(&(flat[a] - flat[a].floor())).unwrap().then(a.cmp(&b)));
    let mut missing = n - counts.iter().sum::<u64>();
    for i in order {
        if missing == 0 {
            break;
        }
        counts[i] += 1;
        missing -= 1;
    }
    [[counts[0], counts[1]], [counts[2], counts[3]]]
}

/// Connected components (4-neighbour) of `ρ > PEAK_THRESHOLD · max ρ`.
pub fn find_peaks(rho: &[f64], l: usize, xs: &[f64], dv: f64) -> Vec<Peak> {
    let max = rho.iter().cloned().fold(0.0, f64::max);
    let cut = PEAK_THRESHOLD * max;
    let mut label = vec![false; rho.len()];
    let mut peaks = Vec::new();
    for start in 0..rho.len() {
        if label[start] || rho[start] <= cut {
            continue;
        }
        let mut stack = vec![start];
        label[start] = true;
        let (mut w, mut c0, mut c1, mut height) = (0.0, 0.0, 0.0, 0.0f64);
        while let Some(c) = stack.pop() {
            let (i, j) = (c / l, c % l);
            w += rho[c];
            c0 += rho[c] * xs[i];
            c1 += rho[c] * xs[j];
            height = height.max(rho[c]);
            let mut push = |n: usize| {
                if !label[n] && rho[n] > cut {
                    label[n] = true;
                    stack.push(n);
                }
            };
            if i > 0 {
                push(c - l);
            }
            if i + 1 < l {
                push(c + l);
            }
            if j > 0 {
                push(c - 1);
            }
            if j + 1 < l {
                push(c + 1);
            }
        }
        peaks.push(Peak { centre: [c0 / w, c1 / w], integral: w * dv, height });
    }
    peaks
}

fn swap_defect(peaks: &[Peak], h: f64) -> Option<f64> {
    let mut worst: f64 = 0.0;
    for p in peaks {
        let partner = peaks
            .iter()
            .map(|q| (q, (q.centre[0] - p.centre[1]).hypot(q.centre[1] - p.centre[0])))
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())?;
        if partner.1 > 2.0 * h {
            return None;
        }
        worst = worst.max((p.integral - partner.0.integral).abs());
    }
    Some(worst)
}

/// The four analyzer settings of a CHSH test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChshSettings {
    pub a: f64,
    pub a_prime: f64,
    pub b: f64,
    pub b_prime: f64,
}

impl ChshSettings {
    /// Settings quoted as polarizer angles `(a, a′, b, b′)`; a spin-½
    /// analyzer needs twice these angles for the same correlations.
    pub fn from_half_angles(half: [f64; 4]) -> Self {
        Self { a: 2.0 * half[0], a_prime: 2.0 * half[1], b: 2.0 * half[2], b_prime: 2.0 * half[3] }
    }

    /// Maximal violation: half-angles `(0, π/4, π/8, 3π/8)`.
    pub fn standard() -> Self {
        Self::from_half_angles([0.0, PI / 4.0, PI / 8.0, 3.0 * PI / 8.0])
    }

    /// `(θ_A, θ_B)` of the four correlators in the order of
    /// [`chsh_statistic`].
    pub fn pairs(&self) -> [(f64, f64); 4] {
        [(self.a, self.b), (self.a, self.b_prime), (self.a_prime, self.b), (self.a_prime, self.b_prime)]
    }
}

/// `S = |E(a,b) − E(a,b′) + E(a′,b) + E(a′,b′)|`.
pub fn chsh_statistic(e: [f64; 4]) -> f64 {
    (e[0] - e[1] + e[2] + e[3]).abs()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChshResult {
    pub settings: ChshSettings,
    pub correlations: [f64; 4],
    pub s: f64,
    pub tables: Vec<OutcomeTable>,
}

pub fn chsh(state: &ManyBodyState, trap: &TrapSpec, base: &BellConfig, settings: ChshSettings, mode: CorrelationMode) -> Result<ChshResult> {
    let mut tables = Vec::with_capacity(4);
    for (ta, tb) in settings.pairs() {
        let run = run_analyzers(state, trap, &base.with_angles(ta, tb))?;
        tables.push(correlation(trap, &run, mode)?);
    }
    let correlations = [0, 1, 2, 3].map(|i| tables[i].correlation);
    Ok(ChshResult { settings, correlations, s: chsh_statistic(correlations), tables })
}

#[cfg(test)]
mod tests {
    use std::sync::OnceLock;

    use super::*;

    fn trap() -> TrapSpec {
        TrapSpec { sites: 128, length: 32.0, separation: 8.0, ..TrapSpec::default() }
    }

    fn singlet() -> &'static ManyBodyState {
        static STATE: OnceLock<ManyBodyState> = OnceLock::new();
        STATE.get_or_init(|| prepare_singlet(&trap(), BellMode::IdenticalAntisymmetric).unwrap())
    }

    fn table(state: &ManyBodyState, ta: f64, tb: f64, mode: CorrelationMode) -> OutcomeTable {
        let cfg = BellConfig::default().with_angles(ta, tb);
        let run = run_analyzers(state, &trap(), &cfg).unwrap();
        assert!(!run.inconclusive, "{}", run.separation_ratio);
        correlation(&trap(), &run, mode).unwrap()
    }

    #[test]
    fn prepared_pair_is_a_spin_singlet() {
        let s = singlet();
        assert!(total_spin_squared(s).unwrap().abs() < 1e-10);
        let swapped = s.swapped(&s.phi, 0, 1);
        let worst = swapped.iter().zip(&s.phi).map(|(a, b)| (a + b).norm()).fold(0.0, f64::max);
        assert!(worst < 1e-12);
        for a in 0..2 {
            let b = bloch_vector(s, a).unwrap();
            assert!(b.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-8);
        }
    }

    #[test]
    fn correlations_follow_the_singlet_law() {
        for dtheta in [0.0, PI / 4.0, PI / 2.0] {
            let t = table(singlet(), dtheta + 0.3, 0.3, CorrelationMode::Exact);
            let (same, e) = singlet_oracle(dtheta);
            assert!((t.correlation - e).abs() < 0.02, "{dtheta}: {} vs {e}", t.correlation);
            assert!((t.probabilities[0][0] + t.probabilities[1][1] - same).abs() < 0.01);
            assert!((t.marginal_plus[0] - 0.5).abs() < 1e-3 && (t.marginal_plus[1] - 0.5).abs() < 1e-3);
            assert_eq!(t.n_samples(), BellConfig::default().n_samples);
        }
        let aligned = table(singlet(), 1.0, 1.0, CorrelationMode::Exact);
        assert!(aligned.probabilities[0][0] + aligned.probabilities[1][1] < 0.01);
    }

    #[test]
    fn peak_inventory_depends_on_particle_identity() {
        let t = table(singlet(), PI / 2.0, 0.0, CorrelationMode::Exact);
        assert_eq!(t.peaks.len(), 8);
        assert!(t.swap_pair_defect.unwrap() < 1e-6);
        let d = assign_particles(singlet()).unwrap();
        let t = table(&d, PI / 2.0, 0.0, CorrelationMode::Exact);
        assert_eq!(t.peaks.len(), 4);
        assert!(t.swap_pair_defect.is_none());
    }

    #[test]
    fn monte_carlo_matches_exact_integrals() {
        let cfg = BellConfig::default().with_angles(PI / 3.0, 0.0);
        let run = run_analyzers(singlet(), &trap(), &cfg).unwrap();
        let exact = correlation(&trap(), &run, CorrelationMode::Exact).unwrap();
        let mc = correlation(&trap(), &run, CorrelationMode::MonteCarlo).unwrap();
        let n = mc.n_samples() as f64;
        assert!(n + mc.discarded_fraction * cfg.n_samples as f64 - cfg.n_samples as f64 == 0.0);
        for i in 0..2 {
            for j in 0..2 {
                let p = exact.probabilities[i][j];
                let sigma = (p * (1.0 - p) / n).sqrt();
                assert!((mc.probabilities[i][j] - p).abs() < 4.0 * sigma);
            }
        }
        let again = correlation(&trap(), &run, CorrelationMode::MonteCarlo).unwrap();
        assert_eq!(again, mc);
    }

    #[test]
    fn chsh_violation_and_product_control() {
        let s = chsh(singlet(), &trap(), &BellConfig::default(), ChshSettings::standard(), CorrelationMode::Exact).unwrap();
        assert!((s.s - 2.0 * 2f64.sqrt()).abs() < 0.1, "{}", s.s);
        let product = product_control(singlet()).unwrap();
        let p = chsh(&product, &trap(), &BellConfig::default(), ChshSettings::standard(), CorrelationMode::Exact).unwrap();
        assert!(p.s <= 2.05, "{}", p.s);
    }

    #[test]
    fn rejects_bad_angles() {
        let cfg = BellConfig { theta_a: 7.0, ..BellConfig::default() };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        assert!(run_analyzers(singlet(), &trap(), &cfg).is_err());
    }
}
