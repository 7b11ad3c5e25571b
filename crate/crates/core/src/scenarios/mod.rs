//! Scenario drivers shared by the CLI and the acceptance tests. Each driver
//! takes a parameter block and a seed and returns named checks, tables and
//! field snapshots; nothing here touches the filesystem.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::grid::SpacetimeGrid;

pub mod bell;
pub mod classical;
pub mod dirac;
pub mod kg;
pub mod manybody;
pub mod spectra;
pub mod tenets;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    /// `measured < limit`
    Below,
    /// `measured >= limit`
    AtLeast,
    /// Boolean property stored as 1 (holds) or 0.
    Holds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub limit: f64,
    pub relation: Relation,
    pub passed: bool,
}

impl Check {
    pub fn below(name: impl Into<String>, measured: f64, limit: f64) -> Self {
        Self { name: name.into(), measured, limit, relation: Relation::Below, passed: measured < limit }
    }

    pub fn at_least(name: impl Into<String>, measured: f64, limit: f64) -> Self {
        Self { name: name.into(), measured, limit, relation: Relation::AtLeast, passed: measured >= limit }
    }

    pub fn holds(name: impl Into<String>, ok: bool) -> Self {
        Self { name: name.into(), measured: if ok { 1.0 } else { 0.0 }, limit: 1.0, relation: Relation::Holds, passed: ok }
    }

    /// Smallest of several ratios must reach `limit`; NaN anywhere fails.
    pub fn min_at_least(name: impl Into<String>, values: &[f64], limit: f64) -> Self {
        let m = values.iter().copied().fold(f64::INFINITY, |a, b| if b.is_nan() || a.is_nan() { f64::NAN } else { a.min(b) });
        Self::at_least(name, if values.is_empty() { f64::NAN } else { m }, limit)
    }
}

/// Plot-ready table; every cell is numeric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(name: impl Into<String>, columns: &[&str]) -> Self {
        Self { name: name.into(), columns: columns.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }
}

/// Sampled field components on one lattice, written as a JSON header plus a
/// flat little-endian payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub name: String,
    pub grid: SpacetimeGrid,
    /// Axis names and lengths in storage order, slowest first.
    pub axes: Vec<(String, usize)>,
    pub components: Vec<(String, Vec<f64>)>,
}

impl Snapshot {
    /// Fields over the whole grid, time slowest.
    pub fn on_grid(name: impl Into<String>, grid: SpacetimeGrid, components: Vec<(String, Vec<f64>)>) -> Self {
        let mut axes = vec![("t".to_string(), grid.time_levels)];
        axes.extend(["x", "y", "z"].iter().zip(&grid.shape).map(|(a, n)| (a.to_string(), *n)));
        Self { name: name.into(), grid, axes, components }
    }

    /// Configuration-space fields of `particles` particles on a line, first
    /// particle slowest.
    pub fn configuration(name: impl Into<String>, grid: SpacetimeGrid, particles: usize, components: Vec<(String, Vec<f64>)>) -> Self {
        let axes = (0..particles).map(|a| (format!("x{a}"), grid.shape[0])).collect();
        Self { name: name.into(), grid, axes, components }
    }

    pub fn points(&self) -> usize {
        self.axes.iter().map(|a| a.1).product()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub checks: Vec<Check>,
    pub tables: Vec<Table>,
    #[serde(skip)]
    pub snapshots: Vec<Snapshot>,
    /// Headline scalars echoed into the report.
    pub values: BTreeMap<String, f64>,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&mut self, c: Check) {
        self.checks.push(c);
    }

    pub fn value(&mut self, k: impl Into<String>, v: f64) {
        self.values.insert(k.into(), v);
    }

    pub fn extend(&mut self, other: Outcome) {
        self.checks.extend(other.checks);
        self.tables.extend(other.tables);
        self.snapshots.extend(other.snapshots);
        self.values.extend(other.values);
    }

    pub fn find(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Error ratios between successive levels rescaled to one halving of the
/// spacing: `(e_k/e_{k+1})^{ln 2 / ln(h_k/h_{k+1})}`. Equal to the plain
/// ratio for dyadic levels.
pub fn per_halving(spacings: &[f64], errors: &[f64]) -> Vec<f64> {
    spacings
        .windows(2)
        .zip(errors.windows(2))
        .map(|(h, e)| (e[0] / e[1]).powf(std::f64::consts::LN_2 / (h[0] / h[1]).ln()))
        .collect()
}
