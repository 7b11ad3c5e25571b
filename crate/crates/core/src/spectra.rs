//! Bound-state spectra of a single-particle Hamiltonian, radiated lines of
//! eigenstate superpositions, and pulse-driven transitions.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{fft_nd, frequencies};
use crate::grid::{Boundary, SpacetimeGrid};
use crate::linalg::{lanczos_lowest, LanczosOptions};
use crate::manybody::C64;

/// `H = −ħ²∇²/2m + V(x)` on a lattice (walls at non-periodic edges).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianSpec {
    pub lattice: SpacetimeGrid,
    /// Potential energy at every site.
    pub potential: Vec<f64>,
    pub m: f64,
    pub hbar: f64,
    /// Charge coupling to pulses.
    pub q: f64,
}

impl HamiltonianSpec {
    pub fn from_fn(lattice: SpacetimeGrid, m: f64, hbar: f64, q: f64, v: impl Fn(&[f64]) -> f64) -> Result<Self> {
        if !(m > 0.0) || !(hbar > 0.0) {
            return Err(Error::Config(format!("mass {m} and ħ {hbar} must be positive")));
        }
        let g = lattice.slice_grid(0);
        let potential = (0..g.len()).map(|p| v(&g.point(p)[1..])).collect();
        Ok(Self { lattice: g, potential, m, hbar, q })
    }

    pub fn harmonic(lattice: SpacetimeGrid, m: f64, hbar: f64, omega: f64) -> Result<Self> {
        Self::from_fn(lattice, m, hbar, 1.0, |x| 0.5 * m * omega * omega * x.iter().map(|v| v * v).sum::<f64>())
    }

    /// Free particle between the lattice walls.
    pub fn square_box(lattice: SpacetimeGrid, m: f64, hbar: f64) -> Result<Self> {
        Self::from_fn(lattice, m, hbar, 1.0, |_| 0.0)
    }

    /// `−Z/√(r² + a²)`.
    pub fn soft_coulomb(lattice: SpacetimeGrid, m: f64, hbar: f64, z: f64, softening: f64) -> Result<Self> {
        Self::from_fn(lattice, m, hbar, 1.0, |x| -z / (x.iter().map(|v| v * v).sum::<f64>() + softening * softening).sqrt())
    }

    pub fn apply(&self, x: &[C64], y: &mut [C64]) {
        let g = &self.lattice;
        let d = g.spatial_dims;
        let strides = g.strides();
        let periodic = g.boundary == Boundary::Periodic;
        y.par_iter_mut().enumerate().for_each(|(p, out)| {
            let mut acc = x[p] * self.potential[p];
            for axis in 1..=d {
                let n = g.axis_len(axis);
                let s = strides[axis];
                let i = (p / s) % n;
                let k = self.hbar * self.hbar / (2.0 * self.m * g.spacing[axis - 1].powi(2));
                let mut lap = -2.0 * x[p];
                if i + 1 < n {
                    lap += x[p + s];
                } else if periodic {
                    lap += x[p + s - n * s];
                }
                if i > 0 {
                    lap += x[p - s];
                } else if periodic {
                    lap += x[p + (n - 1) * s];
                }
                acc -= lap * k;
            }
            *out = acc;
        });
    }
}

/// Lowest eigenpairs, states real and normalised to `∫φ² = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundSpectrum {
    pub hamiltonian: HamiltonianSpec,
    pub energies: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// `‖Hφ − Eφ‖` of each unit-norm lattice vector.
    pub residuals: Vec<f64>,
}

/// Largest accepted eigen-residual.
pub const EIGEN_TOLERANCE: f64 = 1e-8;

pub fn bound_spectrum(h: &HamiltonianSpec, k: usize) -> Result<BoundSpectrum> {
    let dim = h.potential.len();
    let opts = LanczosOptions { tol: 0.1 * EIGEN_TOLERANCE, ..LanczosOptions::default() };
    let pairs = lanczos_lowest(&|x, y| h.apply(x, y), dim, k, opts)?;
    let dv = h.lattice.cell_volume();
    let mut energies = Vec::with_capacity(k);
    let mut states = Vec::with_capacity(k);
    let mut residuals = Vec::with_capacity(k);
    for p in pairs {
        // Real operator: rotate the vector onto the real axis.
        let big = p.vector.iter().max_by(|a, b| a.norm().partial_cmp(&b.norm()).unwrap()).unwrap();
        let phase = C64::from_polar(1.0, -big.arg());
        let mut v: Vec<f64> = p.vector.iter().map(|z| (z * phase).re).collect();
        let norm = (v.iter().map(|a| a * a).sum::<f64>() * dv).sqrt();
        v.iter_mut().for_each(|a| *a /= norm);
        let x: Vec<C64> = v.iter().map(|&a| C64::new(a * dv.sqrt(), 0.0)).collect();
        let mut hx = vec![C64::new(0.0, 0.0); dim];
        h.apply(&x, &mut hx);
        let res = hx.iter().zip(&x).map(|(a, b)| (a - b * p.value).norm_sqr()).sum::<f64>().sqrt();
        if res > EIGEN_TOLERANCE {
            return Err(Error::Convergence { what: format!("eigenpair {}", energies.len()), residual: res });
        }
        energies.push(p.value);
        states.push(v);
        residuals.push(res);
    }
    Ok(BoundSpectrum { hamiltonian: h.clone(), energies, states, residuals })
}

impl BoundSpectrum {
    pub fn len(&self) -> usize {
        self.energies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energies.is_empty()
    }

    /// Largest `|⟨φ_λ, φ_λ′⟩ − δ_λλ′|`.
    pub fn orthonormality_defect(&self) -> f64 {
        let dv = self.hamiltonian.lattice.cell_volume();
        let mut worst: f64 = 0.0;
        for (i, a) in self.states.iter().enumerate() {
            for (j, b) in self.states.iter().enumerate().skip(i) {
                let o: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() * dv;
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((o - target).abs());
            }
        }
        worst
    }

    /// `⟨φ_λ| x_axis |φ_λ′⟩` for every pair.
    pub fn dipole_matrix(&self, axis: usize) -> Vec<Vec<f64>> {
        let g = &self.hamiltonian.lattice;
        let dv = g.cell_volume();
        let xs: Vec<f64> = (0..g.len()).map(|p| g.point(p)[axis]).collect();
        self.pair_matrix(|a, b| a.iter().zip(b).zip(&xs).map(|((u, v), x)| u * v * x).sum::<f64>() * dv)
    }

    /// `⟨φ_λ| ∂_axis |φ_λ′⟩` with central differences.
    pub fn gradient_matrix(&self, axis: usize) -> Vec<Vec<f64>> {
        let g = &self.hamiltonian.lattice;
        let dv = g.cell_volume();
        let s = g.strides()[axis];
        let n = g.axis_len(axis);
        let h = g.spacing[axis - 1];
        self.pair_matrix(|a, b| {
            (0..a.len())
                .map(|p| {
                    let i = (p / s) % n;
                    let fwd = if i + 1 < n { b[p + s] } else { 0.0 };
                    let bwd = if i > 0 { b[p - s] } else { 0.0 };
                    a[p] * (fwd - bwd) / (2.0 * h)
                })
                .sum::<f64>()
                * dv
        })
    }

    fn pair_matrix(&self, f: impl Fn(&[f64], &[f64]) -> f64 + Sync) -> Vec<Vec<f64>> {
        let k = self.len();
        (0..k).into_par_iter().map(|i| (0..k).map(|j| f(&self.states[i], &self.states[j])).collect()).collect()
    }
}

/// Sampling of the radiated-field time series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumWindow {
    pub duration: f64,
    pub dt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub frequency: f64,
    pub power: f64,
    /// Closest level difference `(E_λ − E_λ′)/ħ` and its pair.
    pub predicted: f64,
    pub pair: (usize, usize),
    /// Within one frequency bin of the prediction.
    pub matched: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineList {
    pub lines: Vec<Line>,
    /// Frequency bin `2π/duration`.
    pub resolution: f64,
}

/// Lines weaker than this fraction of the strongest are treated as noise.
pub const LINE_THRESHOLD: f64 = 1e-6;

/// Main-lobe half-width of the analysis window, in bins; level gaps must be
/// at least twice this to be resolved.
pub const WINDOW_HALF_WIDTH: f64 = 4.0;

/// Four-term Blackman–Harris window (sidelobes below −92 dB).
fn blackman_harris(i: usize, n: usize) -> f64 {
    let x = 2.0 * PI * i as f64 / (n - 1) as f64;
    0.35875 - 0.48829 * x.cos() + 0.14128 * (2.0 * x).cos() - 0.01168 * (3.0 * x).cos()
}

/// Lines in the dipole acceleration `q d/dt ∫j_x` of the normalised
/// superposition `Σ c_λ φ_λ e^{−iE_λt/ħ}`.
pub fn ensemble_spectrum(coefficients: &[C64], spectrum: &BoundSpectrum, window: SpectrumWindow) -> Result<LineList> {
    if coefficients.len() > spectrum.len() {
        return Err(Error::Shape("more coefficients than levels".into()));
    }
    let active: Vec<usize> = (0..coefficients.len()).filter(|&i| coefficients[i].norm() > 0.0).collect();
    if active.is_empty() {
        return Err(Error::Config("superposition has no nonzero coefficient".into()));
    }
    let norm = active.iter().map(|&i| coefficients[i].norm_sqr()).sum::<f64>().sqrt();
    let c: Vec<C64> = coefficients.iter().map(|v| v / norm).collect();
    let hbar = spectrum.hamiltonian.hbar;
    let mut pairs = Vec::new();
    for (x, &i) in active.iter().enumerate() {
        for &j in &active[x + 1..] {
            pairs.push((i, j, (spectrum.energies[j] - spectrum.energies[i]) / hbar));
        }
    }
    let resolution = 2.0 * PI / window.duration;
    if let Some(max) = pairs.iter().map(|p| p.2.abs()).reduce(f64::max) {
        if max >= PI / window.dt {
            return Err(Error::Resolution(format!("sampling step {} cannot resolve frequency {max}", window.dt)));
        }
        let mut sorted: Vec<f64> = pairs.iter().map(|p| p.2.abs()).collect();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let gap = sorted.windows(2).map(|w| w[1] - w[0]).chain(std::iter::once(sorted[0])).fold(f64::INFINITY, f64::min);
        if gap < 2.0 * WINDOW_HALF_WIDTH * resolution {
            return Err(Error::Resolution(format!("window {} does not resolve the line spacing {gap}", window.duration)));
        }
    }
    let p = spectrum.gradient_matrix(1);
    let h = &spectrum.hamiltonian;
    let n = (window.duration / window.dt).round() as usize;
    // a(t) = q ħ/m Σ_{λλ'} Im(c̄_λ c_λ' iω e^{iωt}) ⟨φ_λ|∂|φ_λ'⟩ with ω = (E_λ − E_λ')/ħ.
    let series: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|step| {
            let t = step as f64 * window.dt;
            let mut acc = 0.0;
            for &i in &active {
                for &j in &active {
                    let w = (spectrum.energies[i] - spectrum.energies[j]) / hbar;
                    let z = c[i].conj() * c[j] * C64::new(0.0, w) * C64::from_polar(1.0, w * t);
                    acc += z.im * p[i][j];
                }
            }
            h.q * h.hbar / h.m * acc
        })
        .collect();
    let padded = (8 * n).next_power_of_two();
    let mut buf = vec![C64::new(0.0, 0.0); padded];
    for (i, v) in series.iter().enumerate() {
        buf[i] = C64::new(v * blackman_harris(i, n), 0.0);
    }
    fft_nd(&mut buf, &[padded], false);
    let freqs = frequencies(padded, window.dt);
    let half = padded / 2;
    let power: Vec<f64> = buf[..half].iter().map(|v| v.norm_sqr()).collect();
    let max = power.iter().cloned().fold(0.0, f64::max);
    let df = freqs[1];
    let mut lines = Vec::new();
    if max > 0.0 {
        for k in 1..half - 1 {
            if !(power[k] > power[k - 1] && power[k] >= power[k + 1] && power[k] > LINE_THRESHOLD * max) {
                continue;
            }
            let (a, b, cc) = (power[k - 1].ln(), power[k].ln(), power[k + 1].ln());
            let den = a - 2.0 * b + cc;
            let shift = if den.abs() > 0.0 { 0.5 * (a - cc) / den } else { 0.0 };
            let f = freqs[k] + shift * df;
            let best = pairs.iter().min_by(|x, y| (x.2.abs() - f).abs().partial_cmp(&(y.2.abs() - f).abs()).unwrap());
            let (predicted, pair) = best.map(|&(i, j, w)| (w.abs(), (i, j))).unwrap_or((f64::NAN, (0, 0)));
            lines.push(Line { frequency: f, power: power[k], predicted, pair, matched: (f - predicted).abs() <= resolution });
        }
    }
    lines.sort_by(|a, b| a.frequency.partial_cmp(&b.frequency).unwrap());
    Ok(LineList { lines, resolution })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PulseShape {
    /// `cos(ωt)` under the envelope.
    Coherent,
    /// Sum of `components` random-phase tones spread uniformly over
    /// `[ω − bandwidth/2, ω + bandwidth/2]`, unit mean square.
    Noise { bandwidth: f64, components: usize, seed: u64 },
}

/// Electric field `E(t) = amplitude · exp(−t²/2τ²) · carrier(t)` along the
/// first lattice axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseSpec {
    pub omega: f64,
    /// Envelope width `τ`.
    pub duration: f64,
    pub amplitude: f64,
    pub shape: PulseShape,
}

impl PulseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude >= 0.0) || !(self.duration > 0.0) {
            return Err(Error::Config("pulse amplitude must be ≥ 0 and duration > 0".into()));
        }
        if let PulseShape::Noise { bandwidth, components, .. } = self.shape {
            if !(bandwidth > 0.0) || components == 0 || bandwidth >= 2.0 * self.omega {
                return Err(Error::Config("noise needs positive bandwidth below 2ω and ≥ 1 component".into()));
            }
        }
        Ok(())
    }

    /// Coherence time of the carrier (`1/bandwidth` for noise).
    pub fn coherence_time(&self) -> f64 {
        match self.shape {
            PulseShape::Coherent => self.duration,
            PulseShape::Noise { bandwidth, .. } => 2.0 * PI / bandwidth,
        }
    }

    fn tones(&self) -> Vec<(f64, f64, f64)> {
        match self.shape {
            PulseShape::Coherent => vec![(self.omega, 0.0, 1.0)],
            PulseShape::Noise { bandwidth, components, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let w = (2.0 / components as f64).sqrt();
                (0..components)
                    .map(|_| {
                        let f = self.omega + bandwidth * (rng.gen::<f64>() - 0.5);
                        (f, 2.0 * PI * rng.gen::<f64>(), w)
                    })
                    .collect()
            }
        }
    }

    /// Highest carrier frequency.
    fn max_frequency(&self) -> f64 {
        match self.shape {
            PulseShape::Coherent => self.omega,
            PulseShape::Noise { bandwidth, .. } => self.omega + 0.5 * bandwidth,
        }
    }
}

/// Pulse field sampled on `[−6τ, 6τ]` fine enough for `max_frequency`.
struct SampledPulse {
    t0: f64,
    dt: f64,
    field: Vec<f64>,
}

impl SampledPulse {
    fn new(pulse: &PulseSpec, max_frequency: f64) -> Self {
        let span = 6.0 * pulse.duration;
        let top = max_frequency.max(pulse.max_frequency()).max(1e-12);
        let mut n = ((2.0 * span) / (2.0 * PI / top / 40.0)).ceil() as usize;
        n += n % 2; // even number of intervals for Simpson
        let dt = 2.0 * span / n as f64;
        let tones = pulse.tones();
        let field = (0..=n)
            .map(|i| {
                let t = -span + i as f64 * dt;
                let carrier: f64 = tones.iter().map(|(f, ph, w)| w * (f * t + ph).cos()).sum();
                pulse.amplitude * (-0.5 * t * t / (pulse.duration * pulse.duration)).exp() * carrier
            })
            .collect();
        Self { t0: -span, dt, field }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionTable {
    pub initial: usize,
    /// Probability of ending in each level (the initial entry holds the
    /// probability of leaving it, with a minus sign).
    pub probabilities: Vec<f64>,
    /// Total probability of leaving the initial level.
    pub total: f64,
    /// Probability of reaching levels above the ionisation threshold.
    pub ionization: f64,
    /// Every transition probability below 0.1.
    pub first_order_valid: bool,
}

/// Probabilities below this keep first-order amplitudes trustworthy.
pub const FIRST_ORDER_LIMIT: f64 = 0.1;

/// First-order amplitudes `c_f = (i q/ħ) ∫ E(t) x_fi e^{iω_fi t} dt` for the
/// dipole coupling `−qE(t)x`; levels with energy above `threshold` count as
/// ionised.
pub fn transition_probability(initial: usize, pulse: &PulseSpec, spectrum: &BoundSpectrum, threshold: f64) -> Result<TransitionTable> {
    pulse.validate()?;
    if initial >= spectrum.len() {
        return Err(Error::Index { index: initial, len: spectrum.len() });
    }
    let h = &spectrum.hamiltonian;
    let x = spectrum.dipole_matrix(1);
    let top = spectrum.energies.iter().map(|e| (e - spectrum.energies[initial]).abs()).fold(0.0, f64::max) / h.hbar;
    let sampled = SampledPulse::new(pulse, top);
    let n = sampled.field.len() - 1;
    let mut probabilities: Vec<f64> = (0..spectrum.len())
        .into_par_iter()
        .map(|f| {
            if f == initial {
                return 0.0;
            }
            let w = (spectrum.energies[f] - spectrum.energies[initial]) / h.hbar;
            let mut acc = C64::new(0.0, 0.0);
            for (i, e) in sampled.field.iter().enumerate() {
                let simpson = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
                let t = sampled.t0 + i as f64 * sampled.dt;
                acc += C64::from_polar(simpson * e, w * t);
            }
            let amp = acc * (sampled.dt / 3.0) * (h.q * x[f][initial] / h.hbar);
            amp.norm_sqr()
        })
        .collect();
    let total: f64 = probabilities.iter().sum();
    probabilities[initial] = -total;
    let ionization = (0..spectrum.len()).filter(|&f| f != initial && spectrum.energies[f] > threshold).map(|f| probabilities[f]).sum();
    let first_order_valid = probabilities.iter().enumerate().all(|(f, &p)| f == initial || p < FIRST_ORDER_LIMIT);
    Ok(TransitionTable { initial, probabilities, total, ionization, first_order_valid })
}

/// Level populations after the pulse, integrating the Schrödinger equation
/// in the truncated eigenbasis (interaction picture, RK4, no perturbative
/// expansion).
pub fn driven_populations(initial: usize, pulse: &PulseSpec, spectrum: &BoundSpectrum) -> Result<Vec<f64>> {
    pulse.validate()?;
    let k = spectrum.len();
    if initial >= k {
        return Err(Error::Index { index: initial, len: k });
    }
    let h = &spectrum.hamiltonian;
    let x = spectrum.dipole_matrix(1);
    let e = &spectrum.energies;
    let top = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - e.iter().cloned().fold(f64::INFINITY, f64::min);
    let sampled = SampledPulse::new(pulse, top / h.hbar);
    let tones = pulse.tones();
    let field = |t: f64| -> f64 {
        let carrier: f64 = tones.iter().map(|(f, ph, w)| w * (f * t + ph).cos()).sum();
        pulse.amplitude * (-0.5 * t * t / (pulse.duration * pulse.duration)).exp() * carrier
    };
    // dc_f/dt = (i q E(t)/ħ) Σ_k x_fk e^{iω_fk t} c_k
    let rhs = |t: f64, c: &[C64]| -> Vec<C64> {
        let s = C64::new(0.0, h.q * field(t) / h.hbar);
        (0..k)
            .map(|f| {
                let mut acc = C64::new(0.0, 0.0);
                for j in 0..k {
                    if x[f][j] != 0.0 {
                        acc += c[j] * x[f][j] * C64::from_polar(1.0, (e[f] - e[j]) * t / h.hbar);
                    }
                }
                acc * s
            })
            .collect()
    };
    let mut c = vec![C64::new(0.0, 0.0); k];
    c[initial] = C64::new(1.0, 0.0);
    let steps = sampled.field.len() - 1;
    let dt = sampled.dt;
    let add = |a: &[C64], b: &[C64], s: f64| -> Vec<C64> { a.iter().zip(b).map(|(x, y)| x + y * s).collect() };
    for i in 0..steps {
        let t = sampled.t0 + i as f64 * dt;
        let k1 = rhs(t, &c);
        let k2 = rhs(t + 0.5 * dt, &add(&c, &k1, 0.5 * dt));
        let k3 = rhs(t + 0.5 * dt, &add(&c, &k2, 0.5 * dt));
        let k4 = rhs(t + dt, &add(&c, &k3, dt));
        for f in 0..k {
            c[f] += (k1[f] + k2[f] * 2.0 + k3[f] * 2.0 + k4[f]) * (dt / 6.0);
        }
    }
    Ok(c.iter().map(|v| v.norm_sqr()).collect())
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 || x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return Err(Error::Domain("log-log fit needs ≥ 2 positive points".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dense_symmetric_eigen;
    use nalgebra::DMatrix;

    fn line(n: usize, h: f64) -> SpacetimeGrid {
        SpacetimeGrid::centered(1, n, h, 0.01, 1, Boundary::Absorbing).unwrap()
    }

    fn anharmonic() -> BoundSpectrum {
        let h = HamiltonianSpec::from_fn(line(300, 0.05), 1.0, 1.0, 1.0, |x| 0.5 * x[0] * x[0] + 0.05 * x[0].powi(3) + 0.04 * x[0].powi(4)).unwrap();
        bound_spectrum(&h, 4).unwrap()
    }

    #[test]
    fn harmonic_levels_are_evenly_spaced() {
        let omega = 1.3;
        let h = HamiltonianSpec::harmonic(line(400, 0.04), 1.0, 1.0, omega).unwrap();
        let s = bound_spectrum(&h, 6).unwrap();
        for (n, e) in s.energies.iter().enumerate() {
            let exact = omega * (n as f64 + 0.5);
            assert!((e - exact).abs() / exact < 5e-3, "level {n}: {e} vs {exact}");
        }
        assert!(s.residuals.iter().all(|r| *r < EIGEN_TOLERANCE));
        assert!(s.orthonormality_defect() < 1e-8);
    }

    #[test]
    fn box_levels_follow_square_law() {
        let (n, h) = (200, 0.05);
        let s = bound_spectrum(&HamiltonianSpec::square_box(line(n, h), 1.0, 1.0).unwrap(), 5).unwrap();
        for (k, e) in s.energies.iter().enumerate() {
            let k = k as f64 + 1.0;
            // exact eigenvalues of the three-point Laplacian with walls one cell outside
            let lattice = (1.0 - (k * PI / (n as f64 + 1.0)).cos()) / (h * h);
            assert!((e - lattice).abs() < 1e-8 * lattice.max(1.0));
            assert!((e / s.energies[0] - k * k).abs() / (k * k) < 1e-2);
        }
    }

    #[test]
    fn soft_coulomb_matches_dense_solve() {
        let (n, hx) = (240, 0.125);
        let ham = HamiltonianSpec::soft_coulomb(line(n, hx), 1.0, 1.0, 1.0, 1.0).unwrap();
        let s = bound_spectrum(&ham, 4).unwrap();
        let k = 0.5 / (hx * hx);
        let m = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                2.0 * k + ham.potential[i]
            } else if i.abs_diff(j) == 1 {
                -k
            } else {
                0.0
            }
        });
        let (dense, _) = dense_symmetric_eigen(m);
        assert!(s.energies.windows(2).all(|w| w[0] < w[1]));
        assert!(s.energies[0] < 0.0 && s.energies[1] < 0.0);
        for (a, b) in s.energies.iter().zip(&dense) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn superposition_lines_sit_at_level_differences() {
        let s = anharmonic();
        let window = SpectrumWindow { duration: 2400.0, dt: 0.1 };
        let one = ensemble_spectrum(&[C64::new(1.0, 0.0)], &s, window).unwrap();
        assert!(one.lines.is_empty());
        let two = ensemble_spectrum(&[C64::new(0.8, 0.0), C64::new(0.6, 0.0)], &s, window).unwrap();
        assert_eq!(two.lines.len(), 1, "{:?}", two.lines);
        let three = ensemble_spectrum(&[C64::new(0.7, 0.0), C64::new(0.5, 0.1), C64::new(0.5, 0.0)], &s, window).unwrap();
        assert_eq!(three.lines.len(), 3, "{:?}", three.lines);
        assert!(three.lines.iter().all(|l| l.matched));
        let short = SpectrumWindow { duration: 10.0, dt: 0.05 };
        assert!(matches!(ensemble_spectrum(&[C64::new(1.0, 0.0), C64::new(1.0, 0.0)], &s, short), Err(Error::Resolution(_))));
    }

    fn coherent(omega: f64, amplitude: f64) -> PulseSpec {
        PulseSpec { omega, duration: 10.0, amplitude, shape: PulseShape::Coherent }
    }

    #[test]
    fn first_order_laws() {
        let s = anharmonic();
        let w01 = s.energies[1] - s.energies[0];
        let a = transition_probability(0, &coherent(w01, 0.004), &s, f64::INFINITY).unwrap();
        let b = transition_probability(0, &coherent(w01, 0.008), &s, f64::INFINITY).unwrap();
        assert!(a.first_order_valid);
        assert!((b.total / a.total - 4.0).abs() < 0.04);
        let off = transition_probability(0, &coherent(w01 + 0.4, 0.004), &s, f64::INFINITY).unwrap();
        assert!(a.probabilities[1] / off.probabilities[1] >= 100.0);
        // Gaussian pulse oracle: c = (q x τ √(2π)/2ħ) A e^{−(ω_fi−ω)²τ²/2} plus the counter-rotating term
        let x = s.dipole_matrix(1)[1][0];
        let amp = 0.004 * x * 10.0 * (2.0 * PI).sqrt() / 2.0 * (1.0 + (-(2.0 * w01 * 10.0).powi(2) / 2.0).exp());
        assert!((a.probabilities[1] - amp * amp).abs() / (amp * amp) < 1e-6);
        let exact = driven_populations(0, &coherent(w01, 0.004), &s).unwrap();
        assert!((1.0 - exact[0] - a.total).abs() / a.total < 0.02);
        assert!((exact.iter().sum::<f64>() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn broadband_noise_barely_moves_populations() {
        let s = anharmonic();
        let w01 = s.energies[1] - s.energies[0];
        let noise = PulseSpec { omega: 2.0, duration: 10.0, amplitude: 0.01, shape: PulseShape::Noise { bandwidth: 3.8, components: 400, seed: 3 } };
        let pops = driven_populations(0, &noise, &s).unwrap();
        assert!((1.0 - pops[0]).abs() < 0.01, "{pops:?}");
        let resonant = driven_populations(0, &coherent(w01, 0.01), &s).unwrap();
        assert!(1.0 - resonant[0] > 1.0 - pops[0]);
    }

    #[test]
    fn log_log_slope_recovers_power() {
        let x: Vec<f64> = (1..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v.powf(2.5)).collect();
        assert!((log_log_slope(&x, &y).unwrap() - 2.5).abs() < 1e-12);
    }
}
