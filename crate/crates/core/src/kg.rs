//! Klein–Gordon field in a static external four-potential.
//!
//! The covariant derivative is `D_μ = ħ∂_μ − iqA_μ`, the current
//! `j^μ = q Im φ* D^μφ`. With this pairing a packet of positive charge
//! density carries the phase `e^{+i(Et − p·x)/ħ}`.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fd::derivative;
use crate::fft::{fft_nd, wavenumbers};
use crate::grid::{Boundary, SpacetimeGrid, StencilOrder, ETA};
use crate::tensor::{faraday_from_potential, tenet_residual, CurrentDensity, EMTensor, FourPotential, ResidualField};

pub type C64 = Complex64;

const ZERO: C64 = C64::new(0.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveParams {
    pub hbar: f64,
    pub q: f64,
    pub m: f64,
}

impl WaveParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.hbar > 0.0) || !(self.m >= 0.0) || !self.q.is_finite() {
            return Err(Error::Config(format!("invalid wave parameters {self:?}")));
        }
        Ok(())
    }
}

/// Static `A^μ(x)` sampled on a spatial lattice (`time_levels` ignored).
pub fn static_potential(lattice: &SpacetimeGrid, f: impl Fn(&[f64]) -> Vec<f64> + Sync) -> Vec<Vec<f64>> {
    let g = lattice.slice_grid(0);
    FourPotential::from_fn(&g, |x| f(x)).comps
}

/// `A^0 = −E·x`, `A^i = 0`: a uniform electric field `E`.
pub fn uniform_electric_potential(lattice: &SpacetimeGrid, e: &[f64]) -> Vec<Vec<f64>> {
    let e = e.to_vec();
    let d = lattice.spatial_dims;
    static_potential(lattice, move |x| {
        let mut a = vec![0.0; d + 1];
        a[0] = -(0..d).map(|i| e.get(i).copied().unwrap_or(0.0) * x[i + 1]).sum::<f64>();
        a
    })
}

/// Peierls phases `exp(iqA^i h_i/ħ)` on the links `x → x + e_i`, with `A^i`
/// averaged over the two end points.
pub(crate) fn link_phases(lattice: &SpacetimeGrid, potential: &[Vec<f64>], q_over_hbar: f64) -> Vec<Vec<C64>> {
    let g = lattice.slice_grid(0);
    let strides = g.strides();
    (0..g.spatial_dims)
        .map(|i| {
            let axis = i + 1;
            let n = g.axis_len(axis);
            let h = g.axis_step(axis);
            let stride = strides[axis];
            let a = &potential[axis];
            (0..g.len())
                .map(|x| {
                    let ix = (x / stride) % n;
                    let nb = if ix + 1 < n {
                        x + stride
                    } else if g.is_periodic(axis) {
                        x + stride - n * stride
                    } else {
                        x
                    };
                    let mid = 0.5 * (a[x] + a[nb]);
                    C64::from_polar(1.0, q_over_hbar * mid * h)
                })
                .collect()
        })
        .collect()
}

/// `Σ_i D_iD_i φ` with Peierls links, Dirichlet or periodic edges.
pub(crate) fn covariant_laplacian(lattice: &SpacetimeGrid, links: &[Vec<C64>], hbar: f64, phi: &[C64]) -> Vec<C64> {
    let g = lattice.slice_grid(0);
    let strides = g.strides();
    let periodic = lattice.boundary == Boundary::Periodic;
    (0..phi.len())
        .into_par_iter()
        .map(|x| {
            let mut acc = ZERO;
            for i in 0..g.spatial_dims {
                let axis = i + 1;
                let n = g.axis_len(axis);
                let stride = strides[axis];
                let ix = (x / stride) % n;
                let c = hbar * hbar / (g.axis_step(axis) * g.axis_step(axis));
                let fwd = if ix + 1 < n {
                    links[i][x] * phi[x + stride]
                } else if periodic {
                    links[i][x] * phi[x + stride - n * stride]
                } else {
                    ZERO
                };
                let bwd = if ix > 0 {
                    links[i][x - stride].conj() * phi[x - stride]
                } else if periodic {
                    let y = x + (n - 1) * stride;
                    links[i][y].conj() * phi[y]
                } else {
                    ZERO
                };
                acc += (fwd + bwd - phi[x] * 2.0) * c;
            }
            acc
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct KgState {
    /// Spatial lattice; `time_step` is the leapfrog step.
    pub lattice: SpacetimeGrid,
    pub params: WaveParams,
    /// Static `A^μ` on the lattice.
    pub potential: Vec<Vec<f64>>,
    pub prev: Vec<C64>,
    pub curr: Vec<C64>,
    /// Time of `curr`.
    pub time: f64,
    links: Vec<Vec<C64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub steps: usize,
    pub charge_before: f64,
    pub charge_after: f64,
    pub relative_drift: f64,
}

impl KgState {
    pub fn new(lattice: SpacetimeGrid, params: WaveParams, potential: Vec<Vec<f64>>, prev: Vec<C64>, curr: Vec<C64>) -> Result<Self> {
        params.validate()?;
        let n = lattice.spatial_len();
        if potential.len() != lattice.rank() || potential.iter().any(|c| c.len() != n) || prev.len() != n || curr.len() != n {
            return Err(Error::Shape("state arrays do not match the lattice".into()));
        }
        Self::check_cfl(&lattice, &params)?;
        let links = link_phases(&lattice, &potential, params.q / params.hbar);
        let mut lattice = lattice;
        lattice.time_levels = 1;
        Ok(Self { lattice, params, potential, prev, curr, time: 0.0, links })
    }

    /// Leapfrog stability: `dt ≤ h_min/√d` and the mass-corrected bound
    /// `dt² (Σ 4/h_i² + m²/ħ²) ≤ 4`.
    pub fn check_cfl(lattice: &SpacetimeGrid, params: &WaveParams) -> Result<()> {
        let dt = lattice.time_step;
        let hmin = lattice.spacing.iter().cloned().fold(f64::INFINITY, f64::min);
        let d = lattice.spatial_dims as f64;
        let bound = lattice.spacing.iter().map(|h| 4.0 / (h * h)).sum::<f64>() + (params.m / params.hbar).powi(2);
        if dt > hmin / d.sqrt() || dt * dt * bound > 4.0 {
            return Err(Error::Config(format!("time step {dt} violates the CFL bound (h_min = {hmin})")));
        }
        Ok(())
    }

    /// Gaussian packet `exp(−|x−c|²/(4σ²) − i p·x/ħ)` normalised to unit
    /// charge `q`, with the earlier level built from the lattice dispersion
    /// of the free equation (positive-charge branch when `positive`).
    pub fn gaussian_packet(
        lattice: SpacetimeGrid,
        params: WaveParams,
        potential: Vec<Vec<f64>>,
        center: &[f64],
        width: f64,
        momentum: &[f64],
        positive: bool,
    ) -> Result<Self> {
        let hmax = lattice.spacing.iter().cloned().fold(0.0, f64::max);
        if width < 3.0 * hmax {
            return Err(Error::Config(format!("packet width {width} below three grid spacings")));
        }
        let g = lattice.slice_grid(0);
        let d = lattice.spatial_dims;
        let phi0: Vec<C64> = (0..g.len())
            .map(|i| {
                let x = g.point(i);
                let mut r2 = 0.0;
                let mut phase = 0.0;
                for a in 0..d {
                    r2 += (x[a + 1] - center[a]).powi(2);
                    phase -= momentum.get(a).copied().unwrap_or(0.0) * x[a + 1] / params.hbar;
                }
                C64::from_polar((-r2 / (4.0 * width * width)).exp(), phase)
            })
            .collect();
        let sign = if positive { 1.0 } else { -1.0 };
        let mut prev = free_shift(&lattice, &params, &phi0, -sign * lattice.time_step);
        // Local potential energy shifts both branches' frequency by qA⁰/ħ.
        for (v, a0) in prev.iter_mut().zip(&potential[0]) {
            *v *= C64::from_polar(1.0, -params.q * a0 * lattice.time_step / params.hbar);
        }
        let mut s = Self::new(lattice, params, potential, prev, phi0)?;
        let q = s.charge();
        if q == 0.0 {
            return Ok(s);
        }
        let norm = (params.q / q).abs().sqrt();
        s.prev.iter_mut().for_each(|v| *v *= norm);
        s.curr.iter_mut().for_each(|v| *v *= norm);
        Ok(s)
    }

    /// Plane wave `e^{i(Et − p·x)/ħ}` on a periodic lattice, with `p`
    /// chosen from the lattice wave numbers and `E` from the continuum
    /// relation `E² = p² + m²`.
    pub fn plane_wave(lattice: SpacetimeGrid, params: WaveParams, momentum: &[f64]) -> Result<Self> {
        let g = lattice.slice_grid(0);
        let e = (momentum.iter().map(|p| p * p).sum::<f64>() + params.m * params.m).sqrt();
        let wave = |t: f64| -> Vec<C64> {
            (0..g.len())
                .map(|i| {
                    let x = g.point(i);
                    let px: f64 = momentum.iter().enumerate().map(|(a, p)| p * x[a + 1]).sum();
                    C64::from_polar(1.0, (e * t - px) / params.hbar)
                })
                .collect()
        };
        let dt = lattice.time_step;
        let potential = vec![vec![0.0; g.len()]; lattice.rank()];
        Self::new(lattice, params, potential, wave(-dt), wave(0.0))
    }

    pub fn cell_volume(&self) -> f64 {
        self.lattice.cell_volume()
    }

    /// Discrete charge `q Σ [ħ Im(φ̄ⁿφⁿ⁺¹)/dt − qA_0 Re(φ̄ⁿφⁿ⁺¹)] dV`
    /// between `prev` and `curr`; exactly conserved by the scheme.
    pub fn charge(&self) -> f64 {
        let p = &self.params;
        let dt = self.lattice.time_step;
        let v = &self.potential[0];
        let s: f64 = (0..self.curr.len())
            .map(|i| {
                let c = self.prev[i].conj() * self.curr[i];
                p.hbar * c.im / dt - p.q * v[i] * c.re
            })
            .sum();
        p.q * s * self.cell_volume()
    }

    /// Charge density and spatial current at `time − dt/2`, built from the
    /// scheme's conserved density and link fluxes (so `∂_t ρ + ∇·j = 0`
    /// holds for the lattice fluxes); node currents average adjacent links.
    pub fn density_flow(&self) -> (Vec<f64>, Vec<Vec<f64>>) {
        let p = &self.params;
        let dt = self.lattice.time_step;
        let v = &self.potential[0];
        let rho: Vec<f64> = (0..self.curr.len())
            .map(|i| {
                let c = self.prev[i].conj() * self.curr[i];
                p.q * (p.hbar * c.im / dt - p.q * v[i] * c.re)
            })
            .collect();
        let g = self.lattice.slice_grid(0);
        let strides = g.strides();
        let currents = (0..g.spatial_dims)
            .map(|i| {
                let axis = i + 1;
                let n = g.axis_len(axis);
                let stride = strides[axis];
                let h = g.axis_step(axis);
                let next = |x: usize| -> Option<usize> {
                    let ix = (x / stride) % n;
                    if ix + 1 < n {
                        Some(x + stride)
                    } else if g.is_periodic(axis) {
                        Some(x + stride - n * stride)
                    } else {
                        None
                    }
                };
                let link_flux: Vec<f64> = (0..g.len())
                    .map(|x| match next(x) {
                        Some(y) => {
                            let u = self.links[i][x];
                            let a = (self.prev[x].conj() * u * self.prev[y]).im;
                            let b = (self.curr[x].conj() * u * self.curr[y]).im;
                            -p.q * p.hbar / h * 0.5 * (a + b)
                        }
                        None => 0.0,
                    })
                    .collect();
                (0..g.len())
                    .map(|x| {
                        let ix = (x / stride) % n;
                        let before = if ix > 0 {
                            link_flux[x - stride]
                        } else if g.is_periodic(axis) {
                            link_flux[x + (n - 1) * stride]
                        } else {
                            0.0
                        };
                        0.5 * (before + link_flux[x])
                    })
                    .collect()
            })
            .collect();
        (rho, currents)
    }

    /// One leapfrog step.
    pub fn step(&mut self) {
        let p = self.params;
        let dt = self.lattice.time_step;
        let lap = covariant_laplacian(&self.lattice, &self.links, p.hbar, &self.curr);
        let v = &self.potential[0];
        let h2 = p.hbar * p.hbar / (dt * dt);
        let next: Vec<C64> = (0..self.curr.len())
            .into_par_iter()
            .map(|i| {
                let phi = self.curr[i];
                let old = self.prev[i];
                let iv = C64::new(0.0, p.q * p.hbar * v[i] / dt);
                let r = phi * (p.q * p.q * v[i] * v[i] - p.m * p.m) + lap[i];
                let rhs = r + (phi * 2.0 - old) * h2 - iv * old;
                rhs / (C64::new(h2, 0.0) - iv)
            })
            .collect();
        self.prev = std::mem::replace(&mut self.curr, next);
        self.time += dt;
    }

    /// Advance `n_steps`, reporting the discrete charge drift.
    pub fn kg_step(&mut self, n_steps: usize) -> StepReport {
        let before = self.charge();
        for _ in 0..n_steps {
            self.step();
        }
        let after = self.charge();
        let relative_drift = if before != 0.0 { ((after - before) / before).abs() } else { (after - before).abs() };
        StepReport { steps: n_steps, charge_before: before, charge_after: after, relative_drift }
    }

    /// Record `levels` consecutive time levels (the current one first) into
    /// a space-time window, advancing the state.
    pub fn record_window(&mut self, levels: usize) -> KgWindow {
        let n = self.curr.len();
        let mut grid = self.lattice.clone();
        grid.time_levels = levels;
        grid.t0 = self.time;
        let mut phi = Vec::with_capacity(levels * n);
        for l in 0..levels {
            if l > 0 {
                self.step();
            }
            phi.extend_from_slice(&self.curr);
        }
        let potential = FourPotential { grid: grid.clone(), comps: self.potential.iter().map(|c| c.repeat(levels)).collect() };
        KgWindow { grid, phi, potential, params: self.params }
    }

    /// Gauge-transformed copy: `φ → e^{iqΛ/ħ}φ`, `A^i → A^i − ∂_iΛ` for a
    /// static gauge function given with its gradient.
    pub fn gauge_transformed(&self, lambda: &(dyn Fn(&[f64]) -> (f64, Vec<f64>) + Sync)) -> Result<Self> {
        let g = self.lattice.slice_grid(0);
        let p = self.params;
        let samples: Vec<(f64, Vec<f64>)> = (0..g.len()).map(|i| lambda(&g.point(i)[1..])).collect();
        let phase: Vec<C64> = samples.iter().map(|(l, _)| C64::from_polar(1.0, p.q * l / p.hbar)).collect();
        let mut potential = self.potential.clone();
        for (a, comp) in potential.iter_mut().enumerate().skip(1) {
            for (v, (_, grad)) in comp.iter_mut().zip(&samples) {
                *v -= grad[a - 1];
            }
        }
        let prev = self.prev.iter().zip(&phase).map(|(a, b)| a * b).collect();
        let curr = self.curr.iter().zip(&phase).map(|(a, b)| a * b).collect();
        let mut s = Self::new(self.lattice.clone(), p, potential, prev, curr)?;
        s.time = self.time;
        Ok(s)
    }
}

/// Evolve `phi` by `dt` under the free lattice dispersion (FFT, periodic
/// extension), on the branch whose modes behave as `e^{+iωt}`.
fn free_shift(lattice: &SpacetimeGrid, params: &WaveParams, phi: &[C64], dt: f64) -> Vec<C64> {
    let shape = lattice.shape.clone();
    let ks: Vec<Vec<f64>> = (0..lattice.spatial_dims).map(|a| wavenumbers(shape[a], lattice.spacing[a])).collect();
    let mut buf = phi.to_vec();
    fft_nd(&mut buf, &shape, false);
    let g = lattice.slice_grid(0);
    let step = lattice.time_step;
    for (i, v) in buf.iter_mut().enumerate() {
        let ix = g.unravel(i);
        let mut s = (params.m / params.hbar).powi(2);
        for a in 0..lattice.spatial_dims {
            let h = lattice.spacing[a];
            s += (2.0 * (ks[a][ix[a + 1]] * h / 2.0).sin() / h).powi(2);
        }
        let omega = 2.0 / step * (0.5 * step * s.sqrt()).min(1.0).asin();
        *v *= C64::from_polar(1.0, omega * dt);
    }
    fft_nd(&mut buf, &shape, true);
    buf
}

/// Consecutive time levels of a KG solution on a space-time grid.
#[derive(Debug, Clone)]
pub struct KgWindow {
    pub grid: SpacetimeGrid,
    pub phi: Vec<C64>,
    pub potential: FourPotential,
    pub params: WaveParams,
}

impl KgWindow {
    /// `D_μφ` (lower index) for every `μ`.
    pub fn covariant_derivatives(&self, order: StencilOrder) -> Result<Vec<Vec<C64>>> {
        let p = self.params;
        (0..self.grid.rank())
            .map(|mu| {
                let d = derivative(&self.phi, &self.grid, mu, order)?;
                let a = &self.potential.comps[mu];
                Ok(d.iter()
                    .zip(&self.phi)
                    .zip(a)
                    .map(|((dv, f), av)| dv * p.hbar - C64::new(0.0, p.q * ETA[mu] * av) * f)
                    .collect())
            })
            .collect()
    }

    pub fn current(&self, order: StencilOrder) -> Result<CurrentDensity> {
        let d = self.covariant_derivatives(order)?;
        let q = self.params.q;
        let comps = (0..self.grid.rank())
            .map(|mu| d[mu].iter().zip(&self.phi).map(|(dv, f)| q * ETA[mu] * (f.conj() * dv).im).collect())
            .collect();
        Ok(CurrentDensity::new(&self.grid, comps))
    }

    /// `T^{νμ} = ½g^{νμ}(m²|φ|² − (D^λφ)*D_λφ) + Re D^νφ (D^μφ)*`.
    pub fn emtensor(&self, order: StencilOrder) -> Result<EMTensor> {
        let d = self.covariant_derivatives(order)?;
        let n = self.grid.rank();
        let m2 = self.params.m * self.params.m;
        let mut t = EMTensor::zeros(&self.grid);
        for nu in 0..n {
            for mu in nu..n {
                let comp: Vec<f64> = (0..self.grid.len())
                    .map(|p| {
                        let mut v = ETA[nu] * ETA[mu] * (d[nu][p] * d[mu][p].conj()).re;
                        if nu == mu {
                            let contraction: f64 = (0..n).map(|l| ETA[l] * d[l][p].norm_sqr()).sum();
                            v += 0.5 * ETA[nu] * (m2 * self.phi[p].norm_sqr() - contraction);
                        }
                        v
                    })
                    .collect();
                *t.component_mut(nu, mu) = comp;
            }
        }
        Ok(t)
    }

    /// `∂_νT^{νμ} − F_ext^μ_ν j^ν` over the window.
    pub fn tenet_residual(&self, order: StencilOrder) -> Result<ResidualField> {
        let t = self.emtensor(order)?;
        let j = self.current(order)?;
        let f = faraday_from_potential(&self.potential, order)?;
        tenet_residual(&t, &f, &j, order)
    }

    /// Residual of the discrete leapfrog equation at interior time levels.
    pub fn equation_residual(&self) -> Vec<f64> {
        let n = self.grid.spatial_len();
        let p = self.params;
        let dt = self.grid.time_step;
        let spatial: Vec<Vec<f64>> = self.potential.comps.iter().map(|c| c[..n].to_vec()).collect();
        let links = link_phases(&self.grid, &spatial, p.q / p.hbar);
        let v = &spatial[0];
        (1..self.grid.time_levels.saturating_sub(1))
            .map(|l| {
                let (a, b, c) = (&self.phi[(l - 1) * n..l * n], &self.phi[l * n..(l + 1) * n], &self.phi[(l + 1) * n..(l + 2) * n]);
                let lap = covariant_laplacian(&self.grid, &links, p.hbar, b);
                (0..n)
                    .map(|i| {
                        let tt = (c[i] - b[i] * 2.0 + a[i]) * (p.hbar * p.hbar / (dt * dt));
                        let t1 = C64::new(0.0, p.q * p.hbar * v[i] / dt) * (c[i] - a[i]);
                        (tt - t1 - b[i] * (p.q * p.q * v[i] * v[i] - p.m * p.m) - lap[i]).norm()
                    })
                    .fold(0.0, f64::max)
            })
            .collect()
    }

    /// Space-time mirror `φ(x) → φ(−x)` with `A(x) → −A(−x)`.
    pub fn pt_mirror(&self) -> Self {
        let len = self.grid.len();
        let mut grid = self.grid.clone();
        grid.t0 = -self.grid.coord(0, self.grid.time_levels - 1);
        for a in 0..grid.spatial_dims {
            grid.origin[a] = -self.grid.coord(a + 1, self.grid.shape[a] - 1);
        }
        let phi = (0..len).map(|i| self.phi[len - 1 - i]).collect();
        let comps = self.potential.comps.iter().map(|c| (0..len).map(|i| -c[len - 1 - i]).collect()).collect();
        Self { grid: grid.clone(), phi, potential: FourPotential { grid, comps }, params: self.params }
    }
}

/// Max deviation of `j` and `T` between a state and its gauge transform,
/// over a window of `levels` levels, relative to the max of each.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaugeReport {
    pub current_deviation: f64,
    pub tensor_deviation: f64,
}

pub fn kg_gauge_check(
    state: &KgState,
    lambda: &(dyn Fn(&[f64]) -> (f64, Vec<f64>) + Sync),
    levels: usize,
    margin: usize,
) -> Result<GaugeReport> {
    let mut a = state.clone();
    let mut b = state.gauge_transformed(lambda)?;
    let wa = a.record_window(levels);
    let wb = b.record_window(levels);
    let order = StencilOrder::Second;
    let mut m = vec![margin; wa.grid.rank()];
    m[0] = 1;
    let (ja, jb) = (wa.current(order)?, wb.current(order)?);
    let (ta, tb) = (wa.emtensor(order)?, wb.emtensor(order)?);
    let rel = |x: &[Vec<f64>], y: &[Vec<f64>]| -> f64 {
        let pts = wa.grid.interior(&m);
        let mut dev: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for (cx, cy) in x.iter().zip(y) {
            for &p in &pts {
                dev = dev.max((cx[p] - cy[p]).abs());
                scale = scale.max(cx[p].abs());
            }
        }
        if scale > 0.0 {
            dev / scale
        } else {
            dev
        }
    };
    Ok(GaugeReport { current_deviation: rel(&ja.comps, &jb.comps), tensor_deviation: rel(&ta.comps, &tb.comps) })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(m: f64) -> WaveParams {
        WaveParams { hbar: 1.0, q: 1.0, m }
    }

    fn line(n: usize, len: f64, courant: f64, boundary: Boundary) -> SpacetimeGrid {
        let h = len / n as f64;
        let mut g = SpacetimeGrid::centered(1, n, h, courant * h, 1, boundary).unwrap();
        if boundary == Boundary::Periodic {
            g.origin[0] = -0.5 * len;
        }
        g
    }

    fn zero_potential(g: &SpacetimeGrid) -> Vec<Vec<f64>> {
        vec![vec![0.0; g.spatial_len()]; g.rank()]
    }

    #[test]
    fn zero_field_stays_zero() {
        let g = line(32, 8.0, 0.5, Boundary::Absorbing);
        let z = vec![ZERO; 32];
        let mut s = KgState::new(g.clone(), params(1.0), zero_potential(&g), z.clone(), z).unwrap();
        s.kg_step(10);
        assert!(s.curr.iter().all(|v| *v == ZERO));
    }

    #[test]
    fn cfl_violation_is_rejected() {
        let g = line(32, 8.0, 1.01, Boundary::Absorbing);
        let z = vec![ZERO; 32];
        assert!(matches!(KgState::new(g.clone(), params(0.0), zero_potential(&g), z.clone(), z), Err(Error::Config(_))));
    }

    #[test]
    fn plane_wave_phase_rate_matches_dispersion() {
        let n = 512;
        let len = 2.0 * std::f64::consts::PI * 8.0;
        let g = line(n, len, 0.2, Boundary::Periodic);
        let p = 0.5;
        let mut s = KgState::plane_wave(g.clone(), params(1.0), &[p]).unwrap();
        let e = (p * p + 1.0f64).sqrt();
        let mut phase = 0.0;
        let mut last = s.curr[7];
        for _ in 0..100 {
            s.step();
            phase += (s.curr[7] / last).arg();
            last = s.curr[7];
        }
        let omega = phase / (100.0 * g.time_step);
        assert!(((omega - e) / e).abs() < 1e-3, "omega {omega} vs {e}");
    }

    #[test]
    fn packet_charge_is_conserved() {
        let g = line(256, 40.0, 0.5, Boundary::Absorbing);
        let v = uniform_electric_potential(&g, &[0.01]);
        let mut s = KgState::gaussian_packet(g, params(1.0), v, &[0.0], 2.0, &[0.5], true).unwrap();
        assert!((s.charge() - 1.0).abs() < 1e-12);
        let r = s.kg_step(1000);
        assert!(r.relative_drift < 1e-10, "drift {}", r.relative_drift);
    }

    #[test]
    fn plane_wave_current_and_sign_branches() {
        let n = 256;
        let len = 2.0 * std::f64::consts::PI * 4.0;
        let g = line(n, len, 0.02, Boundary::Periodic);
        let pr = WaveParams { hbar: 1.0, q: 1.0, m: (1.0f64 - 0.25).sqrt() };
        let mut s = KgState::plane_wave(g.clone(), pr, &[0.5]).unwrap();
        let w = s.record_window(3);
        let j = w.current(StencilOrder::Second).unwrap();
        let p = g.spatial_len() + 10;
        assert!((j.comps[0][p] - 1.0).abs() < 2e-3, "j0 {}", j.comps[0][p]);
        assert!((j.comps[1][p] - 0.5).abs() < 2e-3, "j1 {}", j.comps[1][p]);
        let t = w.emtensor(StencilOrder::Second).unwrap();
        assert!(t.at(0, 0, p) > 0.0);
        // Complex conjugate: the opposite-charge branch.
        let mut c = w.clone();
        c.phi.iter_mut().for_each(|v| *v = v.conj());
        assert!(c.current(StencilOrder::Second).unwrap().comps[0][p] < 0.0);
    }

    #[test]
    fn real_field_has_no_current_and_constant_field_tensor() {
        let g = line(16, 4.0, 0.5, Boundary::Absorbing);
        let mut grid = g.clone();
        grid.time_levels = 3;
        let phi = vec![C64::new(0.7, 0.0); grid.len()];
        let w = KgWindow { grid: grid.clone(), phi, potential: FourPotential::zeros(&grid), params: params(2.0) };
        let j = w.current(StencilOrder::Second).unwrap();
        assert!(j.comps.iter().flatten().all(|v| v.abs() < 1e-15));
        let t = w.emtensor(StencilOrder::Second).unwrap();
        let expect = 0.5 * 4.0 * 0.49;
        assert!((t.at(0, 0, 5) - expect).abs() < 1e-12);
        assert!((t.at(1, 1, 5) + expect).abs() < 1e-12);
        assert!(t.at(0, 1, 5).abs() < 1e-12);
    }

    #[test]
    fn tenet_residual_converges_in_uniform_field() {
        let mut errs = Vec::new();
        for n in [256, 512, 1024] {
            let g = line(n, 40.0, 0.5, Boundary::Absorbing);
            let v = uniform_electric_potential(&g, &[0.05]);
            let mut s = KgState::gaussian_packet(g, params(1.0), v, &[-3.0], 2.0, &[0.5], true).unwrap();
            let steps = (4.0 / s.lattice.time_step).round() as usize;
            s.kg_step(steps);
            let w = s.record_window(5);
            let r = w.tenet_residual(StencilOrder::Second).unwrap();
            errs.push(r.norms_at_level(2, 2).max);
        }
        for k in 0..2 {
            assert!(errs[k] / errs[k + 1] > 3.5, "{errs:?}");
        }
    }

    #[test]
    fn gauge_constant_is_round_off_and_quadratic_is_truncation() {
        let g = line(256, 40.0, 0.5, Boundary::Absorbing);
        let s = KgState::gaussian_packet(g, params(1.0), zero_potential(&line(256, 40.0, 0.5, Boundary::Absorbing)), &[0.0], 2.0, &[0.3], true).unwrap();
        let r = kg_gauge_check(&s, &|_| (0.8, vec![0.0]), 3, 2).unwrap();
        assert!(r.current_deviation < 1e-12 && r.tensor_deviation < 1e-12);
        let r = kg_gauge_check(&s, &|x| (0.02 * x[0] * x[0], vec![0.04 * x[0]]), 3, 2).unwrap();
        assert!(r.current_deviation < 1e-2, "{r:?}");
    }

    #[test]
    fn pt_mirror_solves_mirrored_problem() {
        let g = line(128, 30.0, 0.5, Boundary::Absorbing);
        let v = static_potential(&g, |x| vec![0.1 * (0.3 * x[1]).sin() + 0.02 * x[1], 0.05 * (0.2 * x[1]).cos()]);
        let mut s = KgState::gaussian_packet(g, params(1.0), v, &[1.0], 2.0, &[0.4], true).unwrap();
        let w = s.record_window(6);
        let a = w.equation_residual();
        let b = w.pt_mirror().equation_residual();
        for (x, y) in a.iter().zip(&b) {
            assert!(*x < 1e-10 && (x - y).abs() < 1e-10, "{x} {y}");
        }
    }
}
