use covflow::fields::*;
use covflow::grid::*;
use num_complex::Complex64;
use proptest::prelude::*;

fn g2(l: f64, n: usize) -> GridSpec {
    GridSpec::new(2, l, n).unwrap()
}

fn g3(l: f64, n: usize) -> GridSpec {
    GridSpec::new(3, l, n).unwrap()
}

#[test]
fn zero_potential_is_zero() {
    let a = eval_potential(&PotentialSpec::zero(), &g2(4.0, 8)).unwrap();
    assert!(a.components.iter().flatten().all(|&v| v == 0.0));
}

#[test]
fn constant_field_is_transversal() {
    let g = g2(4.0, 16);
    let a = eval_potential(&PotentialSpec::constant_field(1.7), &g).unwrap();
    for i in 0..g.len() {
        let x = g.point(i);
        let v = a.at(i);
        assert!((v[0] + 0.85 * x[1]).abs() < 1e-15 && (v[1] - 0.85 * x[0]).abs() < 1e-15);
    }
    assert!(a.radial_component().iter().all(|v| v.abs() < 1e-14));
}

#[test]
fn block_field_value_at_reference_point() {
    let g = g3(4.0, 64);
    let ev = PotentialSpec::new(PotentialKind::BlockField3d).evaluator(&g).unwrap();
    assert!(ev.core_radius() < 1.0);
    let a = ev.value(&[1.0, 0.0, 1.0], Sampling::Regularized);
    assert_eq!(a, [0.5, 0.0, -0.5]);
}

#[test]
fn dimension_mismatch_rejected() {
    assert!(eval_potential(&PotentialSpec::new(PotentialKind::BlockField3d), &g2(4.0, 8)).is_err());
    assert!(eval_potential(&PotentialSpec::new(PotentialKind::AharonovBohm2d), &g3(4.0, 8)).is_err());
}

#[test]
fn pure_gauge_is_curl_free() {
    let g = g2(4.0, 16);
    let b = magnetic_tensor(&PotentialSpec::pure_gauge(GaugeGenerator::X1X2), &g, TensorMode::Analytic).unwrap();
    assert!(b.entries.iter().flatten().flatten().all(|&v| v == 0.0));
    let p = psi_field(&b);
    assert!(p.max_norm() == 0.0);
}

#[test]
fn constant_field_tensor_and_psi() {
    let g = g2(4.0, 16);
    let b0 = 2.5;
    let b = magnetic_tensor(&PotentialSpec::constant_field(b0), &g, TensorMode::Analytic).unwrap();
    // hand differentiation: d1 A^2 - d2 A^1 = b0/2 + b0/2
    assert!(b.entries[0][1].iter().all(|&v| (v - b0).abs() < 1e-15));
    assert!(b.entries[1][0].iter().all(|&v| (v + b0).abs() < 1e-15));
    let p = psi_field(&b);
    for i in 0..g.len() {
        let x = g.point(i);
        assert!((p.components[0][i] - b0 * x[1]).abs() < 1e-13);
        assert!((p.components[1][i] + b0 * x[0]).abs() < 1e-13);
    }
}

#[test]
fn spectral_tensor_is_antisymmetric() {
    let g = g3(6.0, 24);
    let b = magnetic_tensor(&PotentialSpec::new(PotentialKind::BlockField3d), &g, TensorMode::Spectral).unwrap();
    assert!(b.antisymmetry_defect() <= 1e-10);
}

#[test]
fn analytic_tensor_rejects_custom() {
    let g = g2(2.0, 8);
    let spec = PotentialSpec::new(PotentialKind::Custom(VectorField::zeros(g)));
    assert!(magnetic_tensor(&spec, &g, TensorMode::Analytic).is_err());
    assert!(magnetic_tensor(&spec, &g, TensorMode::Spectral).is_ok());
}

#[test]
fn block_field_psi_supremum_is_one() {
    let g = g3(6.0, 32);
    let spec = PotentialSpec::new(PotentialKind::BlockField3d);
    let rep = hypothesis_report(&spec, &g, &[0.0, 0.0, 1.0], &ScalarSpec::zero(), &ScalarSpec::zero(), 1.0, 1.0).unwrap();
    // |x x b| with b = (-x2, x1, 0)/|x|^2 peaks at 1 on the plane x3 = 0
    assert!((rep.sup_xtB - 1.0).abs() < 1e-12, "{}", rep.sup_xtB);
    assert_eq!(rep.M_A, 4.0 * rep.sup_xtB * rep.sup_xtB);
    // e3 x curl A does not vanish for the curl reading
    assert!(rep.kernel_defect > 0.1);
}

#[test]
fn block_matrix_reading_has_e3_in_kernel() {
    let g = g3(6.0, 32);
    let spec = PotentialSpec::new(PotentialKind::BlockMatrix3d);
    let b = magnetic_tensor(&spec, &g, TensorMode::Analytic).unwrap();
    let rho0 = spec.resolved_core_radius(&g);
    for i in 0..g.len() {
        let x = g.point(i);
        let s = x[0] * x[0] + x[1] * x[1];
        let expected = 1.0 / s.max(rho0 * rho0);
        assert!((b.entries[0][1][i] - expected).abs() <= 1e-12 * expected);
        assert!(b.entries[0][2][i].abs() < 1e-14 && b.entries[1][2][i].abs() < 1e-14);
    }
    let rep = hypothesis_report(&spec, &g, &[0.0, 0.0, 1.0], &ScalarSpec::zero(), &ScalarSpec::zero(), 1.0, 1.0).unwrap();
    assert_eq!(rep.kernel_defect, 0.0);
    assert!(rep.sup_xtB_with_core > 0.5 / rho0);
}

#[test]
fn zero_potential_hypotheses() {
    let g = g2(4.0, 16);
    let rep = hypothesis_report(&PotentialSpec::zero(), &g, &[1.0, 0.0, 0.0], &ScalarSpec::zero(), &ScalarSpec::zero(), 1.0, 2.0).unwrap();
    assert_eq!(rep.sup_xtB, 0.0);
    assert_eq!(rep.M_A, 0.0);
    assert_eq!(rep.transversality_defect, 0.0);
    assert_eq!(rep.kernel_defect, 0.0);
    assert_eq!(rep.M1, 0.0);
    assert_eq!(rep.M2, 0.0);
    assert_eq!(rep.N1, 1.0);
    assert!(hypothesis_report(&PotentialSpec::zero(), &g, &[1.0, 1.0, 0.0], &ScalarSpec::zero(), &ScalarSpec::zero(), 1.0, 2.0).is_err());
}

#[test]
fn aharonov_bohm_has_vanishing_psi_but_nonzero_potential() {
    let g = g2(8.0, 64);
    let spec = PotentialSpec::new(PotentialKind::AharonovBohm2d);
    let rep = hypothesis_report(&spec, &g, &[1.0, 0.0, 0.0], &ScalarSpec::zero(), &ScalarSpec::zero(), 1.0, 1.0).unwrap();
    assert!(rep.sup_xtB <= 1e-8, "{}", rep.sup_xtB);
    let a = eval_potential(&spec, &g).unwrap();
    assert!(a.max_norm() > 0.5);
}

#[test]
fn scalar_constants() {
    let g = g2(4.0, 16);
    let v1 = ScalarSpec::gaussian(Complex64::new(-3.0, 0.0), 1.0);
    let v2 = ScalarSpec::gaussian(Complex64::new(0.0, -0.5), 1.0);
    let rep = hypothesis_report(&PotentialSpec::zero(), &g, &[1.0, 0.0, 0.0], &v1, &v2, 2.0, 2.0).unwrap();
    assert!((rep.M1 - 3.0).abs() < 1e-15);
    assert!((rep.N1 - 0.5f64.exp()).abs() < 1e-15);
    // sup_x e^{|x|^2/4} 0.5 e^{-|x|^2} = 0.5 at x = 0
    assert!((rep.M2 - 0.5 * 0.5f64.exp()).abs() < 1e-14);
}

/// Multiplies the closed-form potential by `exp(-|x|^2/2)`; returns the
/// sampled field and the product-rule Jacobian.
fn localized(spec: &PotentialSpec, g: &GridSpec) -> (VectorField, Vec<Vec<Vec<f64>>>) {
    let ev = spec.evaluator(g).unwrap();
    let d = g.dim;
    let mut a = VectorField::zeros(*g);
    let mut jac = vec![vec![vec![0.0; g.len()]; d]; d];
    for i in 0..g.len() {
        let x = g.point(i);
        let r2 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
        let th = (-0.5 * r2).exp();
        let dth = [-x[0] * th, -x[1] * th, -x[2] * th];
        let (v, j) = ev.value_and_jacobian(&x, Sampling::Regularized);
        for k in 0..d {
            a.components[k][i] = th * v[k];
            for l in 0..d {
                jac[k][l][i] = th * j[k][l] + v[k] * dth[l];
            }
        }
    }
    (a, jac)
}

#[test]
fn spectral_tensor_matches_analytic_on_localized_smooth_kinds() {
    let g = g2(8.0, 64);
    for spec in [
        PotentialSpec::constant_field(1.0),
        PotentialSpec::pure_gauge(GaugeGenerator::X1X2),
    ] {
        let (a, jac) = localized(&spec, &g);
        let b = spectral_tensor(&a);
        let mut err: f64 = 0.0;
        for i in 0..g.len() {
            let exact = jac[1][0][i] - jac[0][1][i];
            err = err.max((b.entries[0][1][i] - exact).abs());
        }
        assert!(err <= 1e-6, "{}: {err}", spec.name());
    }
}

#[test]
fn singular_kinds_spectral_tensor_away_from_core() {
    // the max(|x|^2, rho0^2) kink limits spectral accuracy near the core;
    // the error must be small outside 2 rho0 and decay further out
    let g = g2(8.0, 64);
    let spec = PotentialSpec::new(PotentialKind::AharonovBohm2d);
    let (a, jac) = localized(&spec, &g);
    let b = spectral_tensor(&a);
    let rho0 = spec.resolved_core_radius(&g);
    let band_error = |radius: f64| {
        let mut err: f64 = 0.0;
        for i in 0..g.len() {
            let x = g.point(i);
            if (x[0] * x[0] + x[1] * x[1]).sqrt() >= radius {
                err = err.max((b.entries[0][1][i] - (jac[1][0][i] - jac[0][1][i])).abs());
            }
        }
        err
    };
    let e2 = band_error(2.0 * rho0);
    let e4 = band_error(4.0 * rho0);
    println!("aharonov_bohm_2d spectral vs analytic: outside 2 rho0 {e2:e}, outside 4 rho0 {e4:e}");
    assert!(e2 < 0.1, "{e2}");
    assert!(e4 < e2);
}

#[test]
fn sup_xtb_nondecreasing_under_refinement() {
    for spec in [PotentialSpec::constant_field(0.7), PotentialSpec::new(PotentialKind::BlockField3d)] {
        let dim = if spec.name() == "block_field_3d" { 3 } else { 2 };
        let mut prev = 0.0;
        for n in [8usize, 16, 32] {
            let g = GridSpec::new(dim, 5.0, n).unwrap();
            let rep = hypothesis_report(&spec, &g, &[1.0, 0.0, 0.0], &ScalarSpec::zero(), &ScalarSpec::zero(), 1.0, 1.0).unwrap();
            assert!(rep.sup_xtB >= prev - 1e-6);
            prev = rep.sup_xtB;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn analytic_tensor_antisymmetric(
        x in prop::array::uniform3(-5.0f64..5.0),
        which in 0usize..5,
    ) {
        let g = g3(6.0, 16);
        let spec = match which {
            0 => PotentialSpec::constant_field(1.3),
            1 => PotentialSpec::pure_gauge(GaugeGenerator::X1X2),
            2 => PotentialSpec::new(PotentialKind::BlockField3d),
            3 => PotentialSpec::new(PotentialKind::BlockMatrix3d),
            _ => PotentialSpec::pure_gauge(GaugeGenerator::HalfRadiusSquared),
        };
        let ev = spec.evaluator(&g).unwrap();
        let b = ev.tensor_at(&x, Sampling::Regularized);
        for j in 0..3 {
            for k in 0..3 {
                prop_assert!((b[j][k] + b[k][j]).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn closed_form_jacobian_matches_finite_difference(
        x in prop::array::uniform3(0.5f64..4.0),
        which in 0usize..3,
    ) {
        let g = g3(6.0, 16);
        let spec = match which {
            0 => PotentialSpec::new(PotentialKind::BlockField3d),
            1 => PotentialSpec::new(PotentialKind::BlockMatrix3d),
            _ => PotentialSpec::constant_field(0.9),
        };
        let ev = spec.evaluator(&g).unwrap();
        let (_, j) = ev.value_and_jacobian(&x, Sampling::Regularized);
        let h = 1e-5;
        for l in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[l] += h;
            xm[l] -= h;
            let ap = ev.value(&xp, Sampling::Regularized);
            let am = ev.value(&xm, Sampling::Regularized);
            for k in 0..3 {
                let fd = (ap[k] - am[k]) / (2.0 * h);
                prop_assert!((fd - j[k][l]).abs() < 1e-7, "k={} l={} fd={} j={}", k, l, fd, j[k][l]);
            }
        }
    }
}
