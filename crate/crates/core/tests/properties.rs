use ensemble_core::bell::{chsh_statistic, singlet_oracle};
use ensemble_core::dirac::charge_sign_holds;
use ensemble_core::grid::{Boundary, SpacetimeGrid, StencilOrder};
use ensemble_core::io::{self, Provenance};
use ensemble_core::manybody::C64;
use ensemble_core::scenarios::tenets::{grid_for, sample, TenetsParams};
use ensemble_core::scenarios::{per_halving, Check, Snapshot, Table};
use ensemble_core::tensor::{pt_transform, scale_transform, FieldBundle};
use proptest::prelude::*;

fn sign() -> impl Strategy<Value = f64> {
    prop_oneof![Just(-1.0), Just(1.0)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn per_halving_recovers_power_law_order(order in 0.5f64..4.0, scale in 1e-6f64..1e3, h0 in 0.01f64..1.0, r1 in 1.1f64..3.0, r2 in 1.1f64..3.0) {
        let hs = [h0, h0 / r1, h0 / r1 / r2];
        let errs: Vec<f64> = hs.iter().map(|h| scale * h.powf(order)).collect();
        for r in per_halving(&hs, &errs) {
            prop_assert!((r - 2f64.powf(order)).abs() < 1e-9 * 2f64.powf(order));
        }
    }

    #[test]
    fn local_deterministic_strategies_obey_chsh_bound(
        a in sign(), ap in sign(), b in sign(), bp in sign(),
        weights in proptest::collection::vec((0.0f64..1.0, sign(), sign(), sign(), sign()), 1..6),
    ) {
        prop_assert!(chsh_statistic([a * b, a * bp, ap * b, ap * bp]) <= 2.0);
        // convex mixtures of local strategies stay local
        let total: f64 = weights.iter().map(|w| w.0).sum::<f64>() + 1.0;
        let mut e = [a * b, a * bp, ap * b, ap * bp];
        for (w, x, xp, y, yp) in &weights {
            let d = [x * y, x * yp, xp * y, xp * yp];
            for k in 0..4 {
                e[k] += w * d[k];
            }
        }
        let e = e.map(|v| v / total);
        prop_assert!(chsh_statistic(e) <= 2.0 + 1e-12);
    }

    #[test]
    fn singlet_oracle_is_a_probability_law(d in -10.0f64..10.0) {
        let (same, e) = singlet_oracle(d);
        prop_assert!((0.0..=1.0).contains(&same));
        prop_assert!((e - (2.0 * same - 1.0)).abs() < 1e-12);
        prop_assert!((e + d.cos()).abs() < 1e-12);
    }

    #[test]
    fn charge_sign_follows_coupling(q in prop_oneof![-3.0f64..-0.1, 0.1f64..3.0], re in proptest::collection::vec(-1.0f64..1.0, 8..64), im in proptest::collection::vec(-1.0f64..1.0, 64)) {
        let n = re.len() / 4 * 4;
        let psi: Vec<C64> = (0..n).map(|k| C64::new(re[k], im[k])).collect();
        prop_assert!(charge_sign_holds(&psi, 4, q));
        prop_assert!(charge_sign_holds(&psi[..n / 2 * 2], 2, q));
    }

    #[test]
    fn nan_never_passes(limit in -1e6f64..1e6) {
        prop_assert!(!Check::below("x", f64::NAN, limit).passed);
        prop_assert!(!Check::at_least("x", f64::NAN, limit).passed);
        prop_assert!(!Check::min_at_least("x", &[limit.abs() + 1.0, f64::NAN], limit).passed);
    }

    #[test]
    fn tables_round_trip_exactly(rows in proptest::collection::vec(proptest::collection::vec(proptest::num::f64::NORMAL | proptest::num::f64::ZERO | proptest::num::f64::SUBNORMAL, 3), 0..20)) {
        let dir = tempfile::tempdir().unwrap();
        let prov = Provenance::new("abc", 7);
        let table = Table { name: "t".into(), columns: vec!["a".into(), "b".into(), "c".into()], rows: rows.clone() };
        io::write_table(dir.path(), &table, &prov).unwrap();
        let (head, back) = io::read_table(&dir.path().join("t.csv")).unwrap();
        prop_assert!(head.contains("config_hash=abc") && head.contains(io::VERSION));
        prop_assert_eq!(back.rows.len(), rows.len());
        for (x, y) in back.rows.iter().flatten().zip(rows.iter().flatten()) {
            prop_assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn bundles_round_trip_exactly(values in proptest::collection::vec(-1e9f64..1e9, 24)) {
        let dir = tempfile::tempdir().unwrap();
        let grid = SpacetimeGrid::centered(1, 6, 0.5, 0.1, 2, Boundary::Periodic).unwrap();
        let snap = Snapshot::on_grid("s", grid, vec![("a".into(), values[..12].to_vec()), ("b".into(), values[12..].to_vec())]);
        io::write_bundle(dir.path(), &snap, &Provenance::new("h", 1)).unwrap();
        let (header, comps) = io::read_bundle(&dir.path().join("s.json")).unwrap();
        prop_assert_eq!(header.axes, vec![("t".to_string(), 2), ("x".to_string(), 6)]);
        prop_assert_eq!(header.provenance.config_hash, "h");
        prop_assert_eq!(comps, vec![values[..12].to_vec(), values[12..].to_vec()]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn dilatation_and_reflection_preserve_maxwell_residual(lambda in 0.25f64..4.0) {
        let p = TenetsParams { spatial_dims: 1, ..Default::default() };
        let g = grid_for(&p, 24).unwrap();
        let s = sample(&p.solution, &g).unwrap();
        let bundle = FieldBundle { potential: s.potential, current: s.current, tensors: vec![s.matter] };
        let margin = vec![1; g.rank()];
        let base = bundle.maxwell_residual(StencilOrder::Second, &margin).unwrap();
        let scaled = scale_transform(&bundle, lambda).unwrap().maxwell_residual(StencilOrder::Second, &margin).unwrap();
        prop_assert!((scaled - base).abs() <= 1e-12 * base);
        let mirrored = pt_transform(&scale_transform(&bundle, lambda).unwrap());
        prop_assert!((mirrored.maxwell_residual(StencilOrder::Second, &margin).unwrap() - base).abs() <= 1e-12 * base);
        prop_assert_eq!(pt_transform(&pt_transform(&bundle)), bundle);
    }
}
