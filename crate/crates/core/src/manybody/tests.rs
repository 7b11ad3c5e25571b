use std::f64::consts::PI;

use nalgebra::DMatrix;

use super::*;
use crate::grid::{Boundary, SpacetimeGrid};
use crate::linalg::{dense_symmetric_eigen, LanczosOptions};

fn line(n: usize, length: f64) -> SpacetimeGrid {
    SpacetimeGrid::centered(1, n, length / n as f64, 0.01, 1, Boundary::Absorbing).unwrap()
}

fn gaussian(lattice: &SpacetimeGrid, centre: &[f64], width: f64, k: &[f64]) -> Vec<C64> {
    let g = lattice.slice_grid(0);
    (0..g.len())
        .map(|p| {
            let x = &g.point(p)[1..];
            let r2: f64 = x.iter().zip(centre).map(|(a, b)| (a - b).powi(2)).sum();
            let phase: f64 = x.iter().zip(k).map(|(a, b)| a * b).sum();
            C64::from_polar((-r2 / (4.0 * width * width)).exp(), phase)
        })
        .collect()
}

fn well(lattice: &SpacetimeGrid, omega: f64) -> ExternalFields {
    ExternalFields::electrostatic(lattice, |x| 0.5 * omega * omega * x.iter().map(|v| v * v).sum::<f64>())
}

fn state(lattice: SpacetimeGrid, particles: Vec<ParticleSpec>, fields: ExternalFields, symmetry: Symmetry) -> ManyBodyState {
    let len = lattice.spatial_len().pow(particles.len() as u32) << particles.len();
    ManyBodyState::new(lattice, particles, fields, 1.0, 0.5, symmetry, vec![C64::new(0.0, 0.0); len]).unwrap()
}

fn product_state(base: &ManyBodyState, factors: &[Vec<C64>], spinor: &[C64]) -> ManyBodyState {
    let phi = base.product(factors, spinor).unwrap();
    let mut s = base.with_phi(phi).unwrap();
    s.normalize().unwrap();
    s
}

fn up(n: usize) -> Vec<C64> {
    let mut s = vec![C64::new(0.0, 0.0); 1 << n];
    s[0] = C64::new(1.0, 0.0);
    s
}

fn electron() -> ParticleSpec {
    ParticleSpec::pauli(1.0, 1.0, 1.0)
}

#[test]
fn eigenstate_matches_dense_solve() {
    let lattice = line(6, 6.0);
    let fields = well(&lattice, 1.0);
    let s = state(lattice, vec![electron(), electron()], fields, Symmetry::None);
    let dim = s.phi.len();
    let mut m = DMatrix::zeros(dim, dim);
    for j in 0..dim {
        let mut e = vec![C64::new(0.0, 0.0); dim];
        e[j] = C64::new(1.0, 0.0);
        let col = s.hamiltonian_apply(&e);
        for i in 0..dim {
            assert!(col[i].im.abs() < 1e-14);
            m[(i, j)] = col[i].re;
        }
    }
    let (values, _) = dense_symmetric_eigen(m);
    let pairs = s.lowest_eigenstates(1, None, LanczosOptions::default()).unwrap();
    assert!((pairs[0].value - values[0]).abs() < 1e-8, "{} vs {}", pairs[0].value, values[0]);
    let g = s.with_phi(pairs[0].vector.clone()).unwrap();
    let hphi = g.hamiltonian_apply(&g.phi);
    let res: f64 = hphi.iter().zip(&g.phi).map(|(h, p)| (h - p * pairs[0].value).norm_sqr()).sum::<f64>().sqrt();
    let nrm: f64 = g.phi.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    assert!(res / nrm < 1e-7);
    assert!((g.norm_sq() - 1.0).abs() < 1e-10);
}

#[test]
fn zeeman_term_is_g_times_b() {
    let lattice = line(64, 16.0);
    let b = 0.3;
    let plain = well(&lattice, 0.5);
    let mut magnetic = plain.clone();
    magnetic.magnetic[2] = vec![b; 64];
    let f = gaussian(&lattice, &[0.0], 1.0, &[0.0]);
    let without = product_state(&state(lattice.clone(), vec![electron()], plain, Symmetry::None), std::slice::from_ref(&f), &up(1));
    let with = product_state(&state(lattice, vec![electron()], magnetic, Symmetry::None), &[f], &up(1));
    let shift = with.energy() - without.energy();
    assert!((shift - electron().g * b).abs() < 1e-12, "{shift}");
}

#[test]
fn hamiltonian_preserves_swap_sector() {
    let lattice = line(16, 8.0);
    let fields = well(&lattice, 1.0);
    let base = state(lattice.clone(), vec![electron(), electron()], fields, Symmetry::Antisymmetric);
    let fa = gaussian(&lattice, &[-1.0], 0.8, &[0.3]);
    let fb = gaussian(&lattice, &[1.5], 0.6, &[-0.2]);
    let spinor = vec![C64::new(0.3, 0.0), C64::new(0.7, 0.1), C64::new(-0.2, 0.4), C64::new(0.5, 0.0)];
    let mut s = product_state(&base, &[fa, fb], &spinor);
    s.symmetrize().unwrap();
    assert!(s.symmetry_defect() < 1e-14);
    let h = s.hamiltonian_apply(&s.phi);
    let sh = s.swapped(&h, 0, 1);
    let worst = h.iter().zip(&sh).map(|(a, b)| (a + b).norm()).fold(0.0, f64::max);
    assert!(worst < 1e-12, "{worst}");
    let report = s.evolve(0.5, 0.05).unwrap();
    assert!(s.symmetry_defect() < 1e-9);
    assert!(report.max_step_drift < 1e-8);
    assert!((report.energy_after - report.energy_before).abs() < 1e-8);
}

#[test]
fn two_level_superposition_oscillates_at_gap() {
    let lattice = line(128, 16.0);
    let fields = well(&lattice, 1.0);
    let base = state(lattice.clone(), vec![electron()], fields, Symmetry::None);
    let only_up = |c: &mut [C64]| c[1] = C64::new(0.0, 0.0);
    let pairs = base.lowest_eigenstates(2, Some(&only_up), LanczosOptions::default()).unwrap();
    let gap = (pairs[1].value - pairs[0].value) / base.hbar;
    let phi: Vec<C64> = pairs[0].vector.iter().zip(&pairs[1].vector).map(|(a, b)| a + b).collect();
    let mut s = base.with_phi(phi).unwrap();
    s.normalize().unwrap();
    let dt = 0.01;
    let centroid = |s: &ManyBodyState| {
        let b = s.densities();
        let m = b.marginals(0).unwrap();
        (0..m.rho.len()).map(|i| m.rho[i] * s.lattice.point(i)[1]).sum::<f64>() * s.lattice.cell_volume()
    };
    let mut crossings = Vec::new();
    let mut prev = centroid(&s);
    let mut t = 0.0;
    while crossings.len() < 5 {
        s.step(dt).unwrap();
        t += dt;
        let now = centroid(&s);
        if prev.signum() != now.signum() {
            crossings.push(t - dt * now / (now - prev));
        }
        prev = now;
        assert!(t < 40.0);
    }
    let half_period = (crossings[4] - crossings[0]) / 4.0;
    let measured = PI / half_period;
    assert!((measured / gap - 1.0).abs() < 0.01, "{measured} vs {gap}");
}

#[test]
fn free_packet_centroid_moves_at_momentum_over_mass() {
    let lattice = line(400, 40.0);
    let fields = ExternalFields::zero(&lattice);
    let k = 1.0;
    let f = gaussian(&lattice, &[-5.0], 1.0, &[k]);
    let mut s = product_state(&state(lattice.clone(), vec![electron()], fields, Symmetry::None), &[f], &up(1));
    let centroid = |s: &ManyBodyState| {
        let r: f64 = s.phi.chunks(2).enumerate().map(|(i, c)| (c[0].norm_sqr() + c[1].norm_sqr()) * s.lattice.point(i)[1]).sum();
        r * s.lattice.cell_volume()
    };
    let x0 = centroid(&s);
    s.evolve(4.0, 0.01).unwrap();
    let v = (centroid(&s) - x0) / 4.0;
    let expected = s.hbar * k / s.particles[0].m;
    assert!((v / expected - 1.0).abs() < 0.01, "{v}");
}

#[test]
fn densities_of_real_ground_state_and_spin_up_packet() {
    let lattice = line(64, 16.0);
    let base = state(lattice.clone(), vec![electron()], well(&lattice, 1.0), Symmetry::None);
    let only_up = |c: &mut [C64]| c[1] = C64::new(0.0, 0.0);
    let ground = base.lowest_eigenstates(1, Some(&only_up), LanczosOptions::default()).unwrap();
    // Strip the arbitrary global phase.
    let arg = ground[0].vector.iter().max_by(|a, b| a.norm().partial_cmp(&b.norm()).unwrap()).unwrap().arg();
    let phi: Vec<C64> = ground[0].vector.iter().map(|v| v * C64::from_polar(1.0, -arg)).collect();
    let s = base.with_phi(phi).unwrap();
    let b = s.densities();
    let worst = b.current[0][0].iter().zip(&b.spin_current[0][0]).map(|(j, js)| (j - js).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-12);
    let (rmin, emin) = b.min_density_and_energy();
    assert!(rmin >= 0.0 && emin >= 0.0);
    assert_eq!(b.momentum_proviso_defect(&[1.0]), 0.0);

    let plane = SpacetimeGrid::centered(2, 40, 0.25, 0.01, 1, Boundary::Absorbing).unwrap();
    let f = gaussian(&plane, &[0.0, 0.0], 1.0, &[0.0, 0.0]);
    let p = product_state(&state(plane.clone(), vec![electron()], ExternalFields::zero(&plane), Symmetry::None), &[f], &up(1));
    let b = p.densities();
    let mu = p.spin_magnetic_moment(&b, 0).unwrap();
    let norm = (mu[0] * mu[0] + mu[1] * mu[1] + mu[2] * mu[2]).sqrt();
    assert!(mu[2] / norm > 1.0 - 1e-12);
    let expected = p.hbar / (2.0 * p.particles[0].m);
    assert!((mu[2] / expected - 1.0).abs() < 1e-3, "{mu:?}");
}

#[test]
fn marginals_of_product_state_are_factor_densities() {
    let lattice = line(48, 12.0);
    let fa = gaussian(&lattice, &[-2.0], 0.7, &[0.5]);
    let fb = gaussian(&lattice, &[1.0], 1.1, &[0.0]);
    let base = state(lattice.clone(), vec![electron(), electron()], ExternalFields::zero(&lattice), Symmetry::None);
    let s = product_state(&base, &[fa.clone(), fb], &up(2));
    let b = s.densities();
    let m = b.marginals(0).unwrap();
    let h = lattice.cell_volume();
    let total: f64 = m.rho.iter().sum::<f64>() * h;
    assert!((total - 1.0).abs() < 1e-8);
    let na: f64 = fa.iter().map(|v| v.norm_sqr()).sum::<f64>() * h;
    let worst = m.rho.iter().zip(&fa).map(|(r, f)| (r - f.norm_sqr() / na).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-12);
    assert!(matches!(b.marginals(2), Err(crate::Error::Index { .. })));
}

#[test]
fn separated_pair_energy_matches_coulomb() {
    let lattice = line(160, 32.0);
    let d = 10.0;
    let fa = gaussian(&lattice, &[-d / 2.0], 0.5, &[0.0]);
    let fb = gaussian(&lattice, &[d / 2.0], 0.5, &[0.0]);
    let mut base = state(lattice.clone(), vec![electron(), electron()], ExternalFields::zero(&lattice), Symmetry::None);
    base.softening = 0.05;
    let base = ManyBodyState::new(lattice.clone(), base.particles.clone(), base.fields.clone(), 1.0, 0.05, Symmetry::None, base.phi.clone()).unwrap();
    let s = product_state(&base, &[fa, fb], &up(2));
    let e = s.interaction_energy();
    let coulomb = 1.0 / (4.0 * PI * d);
    assert!((e / coulomb - 1.0).abs() < 0.02, "{e} vs {coulomb}");

    let single = product_state(&state(lattice.clone(), vec![electron()], ExternalFields::zero(&lattice), Symmetry::None), &[gaussian(&lattice, &[0.0], 1.0, &[0.0])], &up(1));
    assert_eq!(single.interaction_energy(), 0.0);
}

#[test]
fn stationary_state_balances_everything() {
    let lattice = line(64, 16.0);
    let base = state(lattice.clone(), vec![electron()], well(&lattice, 1.0), Symmetry::None);
    let ground = base.lowest_eigenstates(1, None, LanczosOptions::default()).unwrap();
    let mut s = base.with_phi(ground[0].vector.clone()).unwrap();
    let (lhs, rhs, rel) = s.total_energy_identity();
    assert!(rel < 1e-6, "{lhs} {rhs}");
    let r = s.conservation_suite(0.01).unwrap();
    assert!(r.continuity.absolute < 1e-8);
    assert!(r.momentum.absolute < 1e-6);
    assert!(r.energy.absolute < 1e-6);
    assert!(r.maxwell_consistent && r.warnings.is_empty());
}

#[test]
fn stern_gerlach_gradient_enters_force_balance() {
    let lattice = line(128, 16.0);
    let gradient = 0.05;
    let fields = ExternalFields::from_fns(&lattice, |x| 0.5 * x[0] * x[0], |_| Vec::new(), |x| [0.0, 0.0, 1.0 + gradient * x[0]]);
    let f = gaussian(&lattice, &[0.5], 1.0, &[0.0]);
    let mut s = product_state(&state(lattice, vec![electron()], fields, Symmetry::None), &[f], &up(1));
    let x: f64 = s.phi.chunks(2).enumerate().map(|(i, c)| c[0].norm_sqr() * s.lattice.point(i)[1]).sum::<f64>() * s.lattice.cell_volume();
    let r = s.conservation_suite(0.005).unwrap();
    // Trap force −⟨x⟩ plus the gradient force −g ∂B_z for spin up.
    let expected = -x - electron().g * gradient;
    assert!((r.force[0][0] - expected).abs() < 1e-3, "{} vs {expected}", r.force[0][0]);
    assert!(r.momentum.relative < 1e-2, "{:?}", r.momentum);
    assert!(r.energy.relative < 1e-2, "{:?}", r.energy);
    assert!(!r.maxwell_consistent && !r.warnings.is_empty());
}

#[test]
fn gauge_shift_leaves_densities_unchanged() {
    let lattice = line(128, 16.0);
    let f = gaussian(&lattice, &[0.0], 1.0, &[0.7]);
    let s = product_state(&state(lattice.clone(), vec![electron()], well(&lattice, 0.5), Symmetry::None), &[f], &up(1));
    let lambda = |x: &[f64]| (0.4 * (0.5 * x[0]).sin(), vec![0.2 * (0.5 * x[0]).cos()]);
    let g = s.gauge_transformed(&lambda).unwrap();
    let dev = bundle_deviation(&s.densities(), &g.densities()).unwrap();
    assert!(dev < 1e-3, "{dev}");
}

#[test]
fn product_of_members_and_rank() {
    use crate::tensor::CurrentDensity;
    let grid = SpacetimeGrid::centered(1, 32, 0.25, 0.05, 5, Boundary::Absorbing).unwrap();
    let blob = |centre: f64, v: f64| {
        let mut c = CurrentDensity::zeros(&grid);
        let h = grid.spacing[0];
        for level in 0..grid.time_levels {
            let t = grid.coord(0, level);
            let vals: Vec<f64> = (0..32).map(|i| (-(grid.coord(1, i) - centre - v * t).powi(2)).exp()).collect();
            let norm: f64 = vals.iter().sum::<f64>() * h;
            for i in 0..32 {
                c.comps[0][level * 32 + i] = vals[i] / norm;
                c.comps[1][level * 32 + i] = v * vals[i] / norm;
            }
        }
        c
    };
    let still = member_product_density(&[blob(-1.0, 0.0), blob(1.0, 0.0)]).unwrap();
    assert!(still.continuity_residual < 1e-12);
    let moving = member_product_density(&[blob(-1.0, 0.0), blob(1.0, 0.5)]).unwrap();
    assert!(moving.continuity_residual > 0.0 && moving.continuity_residual < 0.05);
    let mut bad = blob(0.0, 0.0);
    bad.comps[0].iter_mut().for_each(|v| *v *= 2.0);
    assert!(matches!(member_product_density(&[bad]), Err(crate::Error::Normalization(_))));

    let a = member_product_density(&[blob(-2.0, 0.0), blob(2.0, 0.0)]).unwrap();
    let b = member_product_density(&[blob(2.0, 0.0), blob(-2.0, 0.0)]).unwrap();
    assert_eq!(joint_rank(&a.rho[0], 32, 1e-8).unwrap(), 1);
    let avg = ensemble_average(&[a.rho[0].clone(), b.rho[0].clone()], &[0.5, 0.5]).unwrap();
    assert_eq!(joint_rank(&avg, 32, 1e-8).unwrap(), 2);
}
