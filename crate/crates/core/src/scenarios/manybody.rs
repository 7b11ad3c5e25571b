//! Two-particle ensembles: conservation balances under refinement, the
//! Newtonian provisos, the total-energy identity and gauge invariance of
//! the configuration-space densities.

use serde::{Deserialize, Serialize};

use crate::grid::{Boundary, SpacetimeGrid};
use crate::manybody::{bundle_deviation, ExternalFields, ManyBodyState, ParticleSpec, Symmetry, C64};
use crate::{Error, Result};

use super::{per_halving, Check, Outcome, Snapshot, Table};

pub const MIN_RATIO: f64 = 3.5;
pub const ENERGY_IDENTITY_LIMIT: f64 = 1e-6;
/// Round-off allowance for `p − m j`, relative to the largest momentum
/// density.
pub const PROVISO_LIMIT: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ManyBodyParams {
    pub points: Vec<usize>,
    pub length: f64,
    pub hbar: f64,
    pub charge: f64,
    pub mass: f64,
    pub trap_omega: f64,
    pub softening: f64,
    /// Centres, widths and wave numbers of the two packets.
    pub centers: [f64; 2],
    pub widths: [f64; 2],
    pub wave_numbers: [f64; 2],
    /// Time window of the balances as a multiple of the spacing.
    pub window_per_spacing: f64,
    /// Static gauge function `Λ = amplitude·sin(rate·x)`.
    pub gauge_amplitude: f64,
    pub gauge_rate: f64,
}

impl Default for ManyBodyParams {
    fn default() -> Self {
        Self {
            points: vec![32, 64, 128],
            length: 16.0,
            hbar: 1.0,
            charge: 1.0,
            mass: 1.0,
            trap_omega: 0.5,
            softening: 0.5,
            centers: [-1.5, 1.0],
            widths: [0.9, 0.8],
            wave_numbers: [0.4, -0.3],
            window_per_spacing: 0.1,
            gauge_amplitude: 0.4,
            gauge_rate: 0.5,
        }
    }
}

fn gaussian(g: &SpacetimeGrid, center: f64, width: f64, k: f64) -> Vec<C64> {
    (0..g.spatial_len())
        .map(|i| {
            let x = g.point(i)[1];
            C64::from_polar((-(x - center).powi(2) / (4.0 * width * width)).exp(), k * x)
        })
        .collect()
}

/// Normalized product state of the two packets with both spins up.
pub fn pair_state(p: &ManyBodyParams, n: usize) -> Result<ManyBodyState> {
    if !(p.length > 0.0) || n < 8 {
        return Err(Error::Config(format!("pair lattice with {n} points over {} is too small", p.length)));
    }
    let g = SpacetimeGrid::centered(1, n, p.length / n as f64, 0.01, 1, Boundary::Absorbing)?;
    let w = p.trap_omega;
    let fields = ExternalFields::electrostatic(&g, |x| 0.5 * p.mass * w * w * x[0] * x[0] / p.charge);
    let spec = ParticleSpec::pauli(p.charge, p.mass, p.hbar);
    let zeros = vec![C64::new(0.0, 0.0); n * n * 4];
    let base = ManyBodyState::new(g.clone(), vec![spec, spec], fields, p.hbar, p.softening, Symmetry::None, zeros)?;
    let factors: Vec<Vec<C64>> = (0..2).map(|a| gaussian(&g, p.centers[a], p.widths[a], p.wave_numbers[a])).collect();
    let mut spinor = vec![C64::new(0.0, 0.0); 4];
    spinor[0] = C64::new(1.0, 0.0);
    let phi = base.product(&factors, &spinor)?;
    let mut s = base.with_phi(phi)?;
    s.normalize()?;
    Ok(s)
}

pub fn run(p: &ManyBodyParams, _seed: u64) -> Result<Outcome> {
    if p.points.len() < 2 {
        return Err(Error::Config("refinement needs at least two lattices".into()));
    }
    let mut out = Outcome::default();
    let mut table = Table::new("manybody_conservation", &["points", "h", "window", "continuity", "momentum", "energy", "proviso_momentum", "min_energy_density", "energy_identity", "gauge_deviation"]);
    let (mut hs, mut cont, mut mom, mut en, mut gauge) = (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut worst_identity: f64 = 0.0;
    let mut worst_proviso: f64 = 0.0;
    let mut min_rho = f64::INFINITY;
    let mut min_eps = f64::INFINITY;
    let (amp, rate) = (p.gauge_amplitude, p.gauge_rate);
    let lambda = move |x: &[f64]| (amp * (rate * x[0]).sin(), vec![amp * rate * (rate * x[0]).cos()]);
    for &n in &p.points {
        let mut s = pair_state(p, n)?;
        let h = s.lattice.spacing[0];
        let (_, _, identity) = s.total_energy_identity();

        let shifted = s.gauge_transformed(&lambda)?;
        let dev = bundle_deviation(&s.densities(), &shifted.densities())?;

        let momentum_scale = s.densities().momentum.iter().flatten().flatten().fold(0.0_f64, |m, v| m.max(v.abs()));
        let window = p.window_per_spacing * h;
        let r = s.conservation_suite(window)?;
        let proviso = r.proviso_momentum / momentum_scale.max(f64::MIN_POSITIVE);
        table.push(vec![n as f64, h, window, r.continuity.relative, r.momentum.relative, r.energy.relative, proviso, r.min_energy_density, identity, dev]);
        hs.push(h);
        cont.push(r.continuity.relative);
        mom.push(r.momentum.relative);
        en.push(r.energy.relative);
        gauge.push(dev);
        worst_identity = worst_identity.max(identity);
        worst_proviso = worst_proviso.max(proviso);
        min_rho = min_rho.min(r.min_density);
        min_eps = min_eps.min(r.min_energy_density);
    }
    out.check(Check::min_at_least("manybody_continuity_ratio", &per_halving(&hs, &cont), MIN_RATIO));
    out.check(Check::min_at_least("manybody_momentum_ratio", &per_halving(&hs, &mom), MIN_RATIO));
    out.check(Check::min_at_least("manybody_energy_ratio", &per_halving(&hs, &en), MIN_RATIO));
    out.check(Check::below("manybody_momentum_proviso", worst_proviso, PROVISO_LIMIT));
    out.check(Check::holds("manybody_energy_density_nonnegative", min_eps >= 0.0 && min_rho >= 0.0));
    out.check(Check::below("manybody_total_energy_identity", worst_identity, ENERGY_IDENTITY_LIMIT));
    out.check(Check::min_at_least("manybody_gauge_deviation_ratio", &per_halving(&hs, &gauge), MIN_RATIO));
    out.tables.push(table);

    let s = pair_state(p, p.points[0])?;
    let b = s.densities();
    let m = b.marginals(0)?;
    let grid = s.lattice.clone();
    out.snapshots.push(Snapshot::on_grid("pair_marginal_0", grid, vec![("rho".into(), m.rho.clone())]));
    Ok(out)
}
