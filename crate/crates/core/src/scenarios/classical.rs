//! Classical limit: Bohmian sampling of a free packet, ħ refinement in a
//! quadratic well and point-ensemble deposits.

use serde::{Deserialize, Serialize};

use crate::classical::{
    bohm_sample, deposit_ensemble, deposit_tenet_residual, electrostatic_field, four_velocity, lorentz_integrate, marginal_tv_distance,
    BohmOptions, ParticleParams, PointEnsemble, PointTrajectory, WellComparison,
};
use crate::grid::{Boundary, SpacetimeGrid, StencilOrder};
use crate::kg::{KgState, WaveParams};
use crate::{Error, Result};

use super::{Check, Outcome, Snapshot, Table};

pub const TV_LIMIT: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FreePacket {
    pub hbar: f64,
    pub points: usize,
    pub spacing: f64,
    pub dt: f64,
    pub center: f64,
    pub width: f64,
    pub momentum: f64,
    pub samples: usize,
    pub steps: usize,
    pub kernel_width: f64,
    pub bins: usize,
}

impl Default for FreePacket {
    fn default() -> Self {
        Self { hbar: 0.1, points: 600, spacing: 0.05, dt: 0.02, center: -5.0, width: 1.0, momentum: 0.5, samples: 10_000, steps: 500, kernel_width: 0.2, bins: 30 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WellSweep {
    pub hbars: Vec<f64>,
    pub omega: f64,
    pub offset: f64,
    pub half_width: f64,
    pub spacing: f64,
    pub samples: usize,
}

impl Default for WellSweep {
    fn default() -> Self {
        let w = WellComparison::default();
        Self { hbars: vec![1.0, 0.5, 0.25], omega: w.omega, offset: w.offset, half_width: w.half_width, spacing: w.spacing, samples: 2000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DepositSweep {
    pub kernel_widths: Vec<f64>,
    pub members: usize,
    pub points: usize,
    pub spacing: f64,
}

impl Default for DepositSweep {
    fn default() -> Self {
        Self { kernel_widths: vec![0.4, 0.2, 0.1], members: 400, points: 1601, spacing: 0.005 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassicalParams {
    pub free: FreePacket,
    pub well: WellSweep,
    pub deposit: DepositSweep,
}

pub fn run(p: &ClassicalParams, seed: u64) -> Result<Outcome> {
    let mut out = Outcome::default();
    free_packet(&p.free, seed, &mut out)?;
    well(&p.well, seed, &mut out)?;
    deposit(&p.deposit, &mut out)?;
    Ok(out)
}

pub fn free_packet(c: &FreePacket, seed: u64, out: &mut Outcome) -> Result<()> {
    let g = SpacetimeGrid::centered(1, c.points, c.spacing, c.dt, 1, Boundary::Absorbing)?;
    let params = WaveParams { hbar: c.hbar, q: 1.0, m: 1.0 };
    let mut wave = KgState::gaussian_packet(g, params, vec![vec![0.0; c.points]; 2], &[c.center], c.width, &[c.momentum], true)?;
    let run = bohm_sample(&mut wave, BohmOptions { n_samples: c.samples, seed, steps: c.steps, kernel_width: c.kernel_width })?;
    let (rho, _) = wave.density_flow();
    let positions = run.final_positions(1);
    let tv = marginal_tv_distance(&positions, &run.ensemble.weights, &wave.lattice, &rho, 1, c.bins)?;
    out.value("bohm_degenerate_samples", run.degenerate_count() as f64);
    out.check(Check::below("bohm_free_packet_tv_distance", tv, TV_LIMIT));
    out.check(Check::holds("bohm_samples_regular", run.degenerate_count() == 0));
    let grid = wave.lattice.slice_grid(0);
    out.snapshots.push(Snapshot::on_grid("bohm_wave_density", grid, vec![("rho".into(), rho)]));
    let mut table = Table::new("bohm_final_positions", &["x", "weight"]);
    for (x, w) in positions.iter().zip(&run.ensemble.weights) {
        table.push(vec![*x, *w]);
    }
    out.tables.push(table);
    Ok(())
}

pub fn well(c: &WellSweep, seed: u64, out: &mut Outcome) -> Result<()> {
    if c.hbars.len() < 2 {
        return Err(Error::Config("well sweep needs at least two values of hbar".into()));
    }
    let mut table = Table::new("well_deviation_vs_hbar", &["hbar", "deviation"]);
    let mut d = Vec::new();
    for &hbar in &c.hbars {
        let w = WellComparison { hbar, omega: c.omega, offset: c.offset, half_width: c.half_width, spacing: c.spacing, n_samples: c.samples, seed };
        let dev = w.run()?;
        table.push(vec![hbar, dev]);
        d.push(dev);
    }
    let worst_increase = d.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    out.check(Check::holds("well_deviation_monotone_in_hbar", worst_increase <= 0.0));
    out.value("well_worst_increase", worst_increase);
    out.tables.push(table);
    Ok(())
}

/// Tenet residual of a deposited point ensemble in a harmonic field, relative
/// to the force density scale, for shrinking kernels.
pub fn deposit_residual(c: &DepositSweep, width: f64) -> Result<f64> {
    let g = SpacetimeGrid::centered(1, c.points, c.spacing, c.spacing, 5, Boundary::Absorbing)?;
    let field = electrostatic_field(|x| 0.5 * x[0] * x[0], 1e-3);
    let unit = ParticleParams { q: 1.0, m: 1.0 };
    let members: Vec<PointTrajectory> = (0..c.members)
        .map(|i| {
            let x0 = -1.0 + 2.0 * (i as f64 + 0.5) / c.members as f64;
            let u = four_velocity(&[0.1 * (2.0 * x0).sin()])?;
            lorentz_integrate(unit, [0.0, x0, 0.0, 0.0], u, &field, 4.0 * c.spacing, c.spacing, None)
        })
        .collect::<Result<_>>()?;
    let ens = PointEnsemble::uniform(members, width)?;
    let dep = deposit_ensemble(&ens, &g)?;
    let res = deposit_tenet_residual(&dep, &field, StencilOrder::Fourth)?;
    let force = dep.current.comps[0].iter().enumerate().map(|(p, r)| (r * g.point(p)[1]).abs()).fold(0.0, f64::max);
    Ok(res.norms_at_level(2, 4).max / force)
}

pub fn deposit(c: &DepositSweep, out: &mut Outcome) -> Result<()> {
    let mut table = Table::new("deposit_residual_vs_kernel", &["kernel_width", "relative_residual"]);
    let mut r = Vec::new();
    for &w in &c.kernel_widths {
        let v = deposit_residual(c, w)?;
        table.push(vec![w, v]);
        r.push(v);
    }
    let decreasing = r.len() >= 2 && r.windows(2).all(|w| w[1] < w[0]);
    out.check(Check::holds("deposit_residual_decreases_with_kernel", decreasing));
    out.tables.push(table);
    Ok(())
}
