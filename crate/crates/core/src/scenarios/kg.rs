//! Klein–Gordon packets: tenet-residual convergence, charge drift and gauge
//! invariance of the ensemble densities.

use serde::{Deserialize, Serialize};

use crate::grid::{Boundary, SpacetimeGrid, StencilOrder};
use crate::kg::{kg_gauge_check, uniform_electric_potential, KgState, WaveParams};
use crate::{Error, Result};

use super::{per_halving, Check, Outcome, Snapshot, Table};

pub const MIN_RATIO: f64 = 3.5;
pub const DRIFT_LIMIT: f64 = 1e-6;
pub const DRIFT_STEPS: usize = 1000;

/// A packet on a cubic lattice, refined over `points`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PacketCase {
    pub spatial_dims: usize,
    pub points: Vec<usize>,
    /// Box edge.
    pub length: f64,
    pub width: f64,
    pub center: Vec<f64>,
    pub momentum: Vec<f64>,
    /// Evolution time before the residual window is recorded.
    pub elapsed: f64,
    /// Points per axis and box edge of the long drift run.
    pub drift_points: usize,
    pub drift_length: f64,
    /// Residuals are measured at least this far from the walls, beyond the
    /// reach of the wall reflection during the run.
    pub wall_clearance: f64,
}

impl PacketCase {
    pub fn line() -> Self {
        Self { spatial_dims: 1, points: vec![128, 256, 512], length: 40.0, width: 2.0, center: vec![-3.0], momentum: vec![0.5], elapsed: 4.0, drift_points: 256, drift_length: 40.0, wall_clearance: 0.0 }
    }

    pub fn volume() -> Self {
        Self {
            spatial_dims: 3,
            points: vec![32, 40, 48],
            length: 16.0,
            width: 2.0,
            center: vec![-0.5, 0.0, 0.0],
            momentum: vec![0.5, 0.0, 0.0],
            elapsed: 1.0,
            drift_points: 16,
            drift_length: 10.0,
            wall_clearance: 4.0,
        }
    }

    pub fn lattice(&self, n: usize, courant: f64) -> Result<SpacetimeGrid> {
        if !(1..=3).contains(&self.spatial_dims) || self.center.len() != self.spatial_dims || self.momentum.len() != self.spatial_dims {
            return Err(Error::Config(format!("packet case needs center and momentum of length {}", self.spatial_dims)));
        }
        let h = self.length / n as f64;
        SpacetimeGrid::centered(self.spatial_dims, n, h, courant * h, 1, Boundary::Absorbing)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KgParams {
    pub wave: WaveParams,
    pub courant: f64,
    /// Strength of the weak uniform field along the first axis.
    pub field: f64,
    pub cases: Vec<PacketCase>,
    /// Static gauge function `Λ = curvature·|x|²/2`.
    pub gauge_curvature: f64,
    pub gauge_points: Vec<usize>,
    pub window_levels: usize,
    pub margin: usize,
}

impl Default for KgParams {
    fn default() -> Self {
        Self {
            wave: WaveParams { hbar: 1.0, q: 1.0, m: 1.0 },
            courant: 0.5,
            field: 0.02,
            cases: vec![PacketCase::line(), PacketCase::volume()],
            gauge_curvature: 0.04,
            gauge_points: vec![128, 256, 512],
            window_levels: 5,
            margin: 2,
        }
    }
}

fn packet(p: &KgParams, case: &PacketCase, n: usize, field: f64) -> Result<KgState> {
    let g = case.lattice(n, p.courant)?;
    let mut e = vec![0.0; case.spatial_dims];
    e[0] = field;
    let v = uniform_electric_potential(&g, &e);
    KgState::gaussian_packet(g, p.wave, v, &case.center, case.width, &case.momentum, true)
}

/// Max tenet residual on the middle level of a recorded window.
fn window_residual(p: &KgParams, s: &mut KgState, clearance: f64) -> Result<f64> {
    let margin = p.margin.max((clearance / s.lattice.spacing[0]).ceil() as usize);
    let w = s.record_window(p.window_levels);
    let r = w.tenet_residual(StencilOrder::Second)?;
    Ok(r.norms_at_level(p.window_levels / 2, margin).max)
}

pub fn run(p: &KgParams, _seed: u64) -> Result<Outcome> {
    p.wave.validate()?;
    if p.window_levels < 3 {
        return Err(Error::Config("window_levels must be at least 3".into()));
    }
    let mut out = Outcome::default();
    let mut table = Table::new("kg_tenet_convergence", &["spatial_dims", "field", "points", "h", "tenet_residual"]);
    for case in &p.cases {
        for (label, field) in [("free", 0.0), ("field", p.field)] {
            let mut errs = Vec::new();
            let mut hs = Vec::new();
            for &n in &case.points {
                let mut s = packet(p, case, n, field)?;
                let steps = (case.elapsed / s.lattice.time_step).round() as usize;
                s.kg_step(steps);
                let e = window_residual(p, &mut s, case.wall_clearance)?;
                table.push(vec![case.spatial_dims as f64, field, n as f64, s.lattice.spacing[0], e]);
                errs.push(e);
                hs.push(s.lattice.spacing[0]);
            }
            let name = format!("kg_{}d_{label}_tenet_ratio", case.spatial_dims);
            out.check(Check::min_at_least(name, &per_halving(&hs, &errs), MIN_RATIO));
        }
        let drift_case = PacketCase { length: case.drift_length, ..case.clone() };
        let mut s = packet(p, &drift_case, case.drift_points, p.field)?;
        let r = s.kg_step(DRIFT_STEPS);
        out.check(Check::below(format!("kg_{}d_charge_drift", case.spatial_dims), r.relative_drift, DRIFT_LIMIT));
        if case.spatial_dims == 1 {
            let w = s.record_window(1);
            let (rho, _) = s.density_flow();
            out.snapshots.push(Snapshot::on_grid(format!("kg_{}d_density", case.spatial_dims), w.grid, vec![("rho".into(), rho)]));
        }
    }
    out.tables.push(table);
    gauge(p, &mut out)?;
    Ok(out)
}

/// Deviation of `j` and `T` between gauge-related runs, which is pure
/// stencil truncation and must fall at second order.
pub fn gauge(p: &KgParams, out: &mut Outcome) -> Result<()> {
    let case = PacketCase::line();
    let c = p.gauge_curvature;
    let lambda = move |x: &[f64]| (0.5 * c * x.iter().map(|v| v * v).sum::<f64>(), x.iter().map(|v| c * v).collect());
    let mut table = Table::new("kg_gauge_deviation", &["points", "h", "current_deviation", "tensor_deviation"]);
    let mut dj = Vec::new();
    let mut dt = Vec::new();
    let mut hs = Vec::new();
    for &n in &p.gauge_points {
        let s = packet(p, &case, n, p.field)?;
        let r = kg_gauge_check(&s, &lambda, 3, p.margin)?;
        table.push(vec![n as f64, s.lattice.spacing[0], r.current_deviation, r.tensor_deviation]);
        dj.push(r.current_deviation);
        dt.push(r.tensor_deviation);
        hs.push(s.lattice.spacing[0]);
    }
    out.check(Check::min_at_least("kg_gauge_current_ratio", &per_halving(&hs, &dj), MIN_RATIO));
    out.check(Check::min_at_least("kg_gauge_tensor_ratio", &per_halving(&hs, &dt), MIN_RATIO));
    out.tables.push(table);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_cases_converge() {
        let p = KgParams { cases: vec![PacketCase::line()], ..Default::default() };
        let out = run(&p, 0).unwrap();
        for c in &out.checks {
            assert!(c.passed, "{c:?}");
        }
        assert_eq!(out.tables[0].rows.len(), 6);
    }
}
