//! Uniform Cartesian space-time lattices.
//!
//! Axis 0 is always time; axes `1..=spatial_dims` are the spatial axes.
//! Sampled fields are stored as flat row-major vectors with time as the
//! slowest index.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Metric signature (+,−,−,−): `ETA[mu]` is `g_{mu mu}` (= `g^{mu mu}`).
pub const ETA: [f64; 4] = [1.0, -1.0, -1.0, -1.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    Periodic,
    #[default]
    Absorbing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum StencilOrder {
    #[default]
    Second,
    Fourth,
}

impl StencilOrder {
    /// Half width of the central stencil.
    pub fn reach(self) -> usize {
        match self {
            StencilOrder::Second => 1,
            StencilOrder::Fourth => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpacetimeGrid {
    pub spatial_dims: usize,
    /// Spatial point counts.
    pub shape: Vec<usize>,
    /// Spatial steps.
    pub spacing: Vec<f64>,
    /// Coordinate of the first point on each spatial axis.
    pub origin: Vec<f64>,
    pub time_step: f64,
    pub time_levels: usize,
    pub t0: f64,
    pub boundary: Boundary,
}

impl SpacetimeGrid {
    pub fn new(
        shape: Vec<usize>,
        spacing: Vec<f64>,
        origin: Vec<f64>,
        time_step: f64,
        time_levels: usize,
        boundary: Boundary,
    ) -> Result<Self> {
        let d = shape.len();
        if !(1..=3).contains(&d) {
            return Err(Error::Config(format!("spatial_dims must be 1..=3, got {d}")));
        }
        if spacing.len() != d || origin.len() != d {
            return Err(Error::Shape("shape/spacing/origin length mismatch".into()));
        }
        if shape.contains(&0) || time_levels == 0 {
            return Err(Error::Config("point counts must be positive".into()));
        }
        if spacing.iter().any(|&h| !(h > 0.0)) || !(time_step > 0.0) {
            return Err(Error::Config("spacings must be positive".into()));
        }
        Ok(Self {
            spatial_dims: d,
            shape,
            spacing,
            origin,
            time_step,
            time_levels,
            t0: 0.0,
            boundary,
        })
    }

    /// Cube of side `n` points with spacing `h`, centred on the origin.
    pub fn centered(spatial_dims: usize, n: usize, h: f64, dt: f64, time_levels: usize, boundary: Boundary) -> Result<Self> {
        let origin = -0.5 * (n as f64 - 1.0) * h;
        Self::new(
            vec![n; spatial_dims],
            vec![h; spatial_dims],
            vec![origin; spatial_dims],
            dt,
            time_levels,
            boundary,
        )
    }

    /// Number of space-time axes (`1 + spatial_dims`).
    pub fn rank(&self) -> usize {
        self.spatial_dims + 1
    }

    pub fn axis_len(&self, axis: usize) -> usize {
        if axis == 0 {
            self.time_levels
        } else {
            self.shape[axis - 1]
        }
    }

    pub fn axis_step(&self, axis: usize) -> f64 {
        if axis == 0 {
            self.time_step
        } else {
            self.spacing[axis - 1]
        }
    }

    pub fn axis_origin(&self, axis: usize) -> f64 {
        if axis == 0 {
            self.t0
        } else {
            self.origin[axis - 1]
        }
    }

    /// Time is never periodic.
    pub fn is_periodic(&self, axis: usize) -> bool {
        axis > 0 && self.boundary == Boundary::Periodic
    }

    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        self.axis_origin(axis) + i as f64 * self.axis_step(axis)
    }

    pub fn spatial_len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn len(&self) -> usize {
        self.time_levels * self.spatial_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row-major stride of each space-time axis.
    pub fn strides(&self) -> Vec<usize> {
        let r = self.rank();
        let mut s = vec![1; r];
        for a in (0..r - 1).rev() {
            s[a] = s[a + 1] * self.axis_len(a + 1);
        }
        s
    }

    /// Multi-index of a flat space-time index.
    pub fn unravel(&self, mut idx: usize) -> Vec<usize> {
        let r = self.rank();
        let mut out = vec![0; r];
        for a in (0..r).rev() {
            let n = self.axis_len(a);
            out[a] = idx % n;
            idx /= n;
        }
        out
    }

    pub fn ravel(&self, ix: &[usize]) -> usize {
        let mut idx = 0;
        for (a, &i) in ix.iter().enumerate() {
            idx = idx * self.axis_len(a) + i;
        }
        idx
    }

    /// Coordinates `x^mu` of a flat space-time index.
    pub fn point(&self, idx: usize) -> Vec<f64> {
        self.unravel(idx)
            .iter()
            .enumerate()
            .map(|(a, &i)| self.coord(a, i))
            .collect()
    }

    /// The grid restricted to one time level (`time_levels == 1`).
    pub fn slice_grid(&self, level: usize) -> Self {
        let mut g = self.clone();
        g.t0 = self.coord(0, level);
        g.time_levels = 1;
        g
    }

    /// Physical spatial volume element.
    pub fn cell_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    /// True when every spatial axis is symmetric about the origin.
    pub fn is_symmetric(&self) -> bool {
        (1..self.rank()).all(|a| {
            let lo = self.coord(a, 0);
            let hi = self.coord(a, self.axis_len(a) - 1);
            (lo + hi).abs() <= 1e-9 * self.axis_step(a)
        })
    }

    /// Flat indices of points at least `margin[axis]` points away from every
    /// non-periodic edge.
    pub fn interior(&self, margin: &[usize]) -> Vec<usize> {
        let r = self.rank();
        (0..self.len())
            .filter(|&idx| {
                let ix = self.unravel(idx);
                (0..r).all(|a| {
                    if self.is_periodic(a) {
                        return true;
                    }
                    let m = margin.get(a).copied().unwrap_or(0);
                    ix[a] >= m && ix[a] + m < self.axis_len(a)
                })
            })
            .collect()
    }

    /// Copy with time levels, spacings and origin multiplied by `lambda`.
    pub fn dilated(&self, lambda: f64) -> Self {
        let mut g = self.clone();
        g.time_step *= lambda;
        g.t0 *= lambda;
        for h in g.spacing.iter_mut() {
            *h *= lambda;
        }
        for o in g.origin.iter_mut() {
            *o *= lambda;
        }
        g
    }

    pub fn same_lattice(&self, other: &Self) -> bool {
        self.shape == other.shape && self.time_levels == other.time_levels && self.spatial_dims == other.spatial_dims
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ravel_roundtrip_and_strides() {
        let g = SpacetimeGrid::new(vec![3, 4], vec![0.1, 0.2], vec![0.0, 0.0], 0.05, 5, Boundary::Absorbing).unwrap();
        assert_eq!(g.len(), 60);
        assert_eq!(g.strides(), vec![12, 4, 1]);
        for idx in 0..g.len() {
            assert_eq!(g.ravel(&g.unravel(idx)), idx);
        }
    }

    #[test]
    fn rejects_bad_spacing() {
        assert!(SpacetimeGrid::new(vec![3], vec![0.0], vec![0.0], 0.1, 1, Boundary::Periodic).is_err());
        assert!(SpacetimeGrid::new(vec![3], vec![1.0], vec![0.0], -0.1, 1, Boundary::Periodic).is_err());
        assert!(SpacetimeGrid::new(vec![3, 3, 3, 3], vec![1.0; 4], vec![0.0; 4], 0.1, 1, Boundary::Periodic).is_err());
    }

    #[test]
    fn centered_grid_is_symmetric() {
        let g = SpacetimeGrid::centered(2, 8, 0.5, 0.1, 3, Boundary::Absorbing).unwrap();
        assert!(g.is_symmetric());
        let g = SpacetimeGrid::centered(1, 7, 0.5, 0.1, 3, Boundary::Absorbing).unwrap();
        assert!(g.is_symmetric());
    }

    #[test]
    fn interior_respects_margin() {
        let g = SpacetimeGrid::new(vec![6], vec![1.0], vec![0.0], 1.0, 5, Boundary::Absorbing).unwrap();
        assert_eq!(g.interior(&[2, 1]).len(), 4);
    }
}
