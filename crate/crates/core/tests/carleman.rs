use covflow::carleman::*;
use covflow::error::Error;
use covflow::evolve::Potentials;
use covflow::fields::*;
use covflow::grid::GridSpec;
use num_complex::Complex64;
use proptest::prelude::*;

const MUS: [f64; 3] = [0.25, 0.5, 1.0];
const RS: [f64; 3] = [4.0, 8.0, 16.0];

fn grid3() -> GridSpec {
    GridSpec::new(3, 5.0, 40).unwrap()
}

fn bump() -> TestFunctionSpec {
    TestFunctionSpec::bump(0.8, 2.0, 4.0)
}

fn block_setup(g: GridSpec) -> (Potentials, f64) {
    let spec = PotentialSpec::new(PotentialKind::BlockMatrix3d);
    let rep = hypothesis_report(&spec, &g, &[0.0, 0.0, 1.0], &ScalarSpec::zero(), &ScalarSpec::zero(), 1.0, 1.0).unwrap();
    assert!(rep.kernel_defect < 1e-12);
    (Potentials::free(g).with_spec(&spec).unwrap(), rep.sup_xtB)
}

#[test]
fn weight_examples() {
    let p = CarlemanParams::along(1.0, 1.0, 4.0, 0).unwrap();
    let w = carleman_weight(&[0.0; 3], 0.5, &p).unwrap();
    assert!((w - 0.5f64.exp()).abs() < 1e-14);
    let x = [0.3, -0.7, 1.1];
    let r2: f64 = x.iter().map(|c| c * c).sum();
    for t in [0.0, 1.0] {
        assert!((carleman_weight(&x, t, &p).unwrap() - r2.exp()).abs() < 1e-12);
    }
    let t: f64 = 0.3;
    let s = 4.0 * t * (1.0 - t);
    let w = carleman_weight(&[-s, 0.0, 0.0], t, &p).unwrap();
    assert!((w - (-2.0 * 16.0 * t * (1.0 - t) / 16.0).exp()).abs() < 1e-14);
    assert!(w < 1.0);
    assert!(matches!(carleman_weight(&[30.0, 0.0, 0.0], 0.0, &p), Err(Error::Overflow(_))));
}

#[test]
fn params_validation_and_admissibility() {
    assert!(CarlemanParams::new(1.0, 1.0, 4.0, [1.0, 1.0, 0.0]).is_err());
    assert!(CarlemanParams::new(0.0, 1.0, 4.0, [1.0, 0.0, 0.0]).is_err());
    let p = CarlemanParams::along(0.5, 1.0, 8.0, 2).unwrap();
    assert_eq!(p.v_index(), Some(3));
    assert!(p.admissible(0.0));
    // R > 8 mu eps^{-1/2} sup: 8 > 4 sup
    assert!(p.admissible(1.99));
    assert!(!p.admissible(2.0));
    let q = CarlemanParams::along(0.5, 0.25, 8.0, 0).unwrap();
    assert!(!q.admissible(1.0));
    assert!(q.admissible(0.99));
}

#[test]
fn cutoff_sets() {
    let s = bump();
    for r in [0.0, 0.5, 1.0, 1.99, 2.0] {
        assert_eq!(theta_m(&[r, 0.0, 0.0], 2.0), 1.0);
    }
    for r in [4.0, 4.5, 10.0] {
        assert_eq!(theta_m(&[0.0, r, 0.0], 2.0), 0.0);
    }
    let v = theta_m(&[3.0, 0.0, 0.0], 2.0);
    assert!(v > 0.0 && v < 1.0);
    for t in [0.25, 0.3, 0.5, 0.75] {
        assert_eq!(s.eta(t), 1.0);
    }
    for t in [0.0, 0.1, 0.125, 0.875, 0.9, 1.0] {
        assert_eq!(s.eta(t), 0.0);
    }
}

#[test]
fn plateau_value_and_time_derivative() {
    let spec = TestFunctionSpec {
        spatial: SpatialProfile::GaussianBump {
            center: [0.0; 3],
            width: 1e9,
        },
        cutoff_m: 2.0,
        cutoff_r_time: 4.0,
        time_profile: TimeProfile::Constant,
    };
    // core is 1 to within 1e-12 on |x| <= M
    for t in [0.3, 0.5, 0.7] {
        for x in [[0.0; 3], [1.0, 1.0, 1.0], [0.0, 2.0, 0.0]] {
            assert!((spec.value(&x, t) - spec.eta(t)).norm() < 1e-12);
        }
    }
    let spec = TestFunctionSpec {
        spatial: SpatialProfile::ModulatedBump {
            center: [0.2, 0.0, -0.1],
            width: 0.9,
            wavevector: [1.0, -0.5, 0.3],
        },
        cutoff_m: 2.0,
        cutoff_r_time: 4.0,
        time_profile: TimeProfile::Phase { omega: 3.0 },
    };
    let h = 1e-4;
    for t in [0.3, 0.5, 0.7, 0.2, 0.8] {
        for x in [[0.0; 3], [0.5, -1.0, 0.3], [2.5, 0.0, 1.0]] {
            let fd = (-spec.value(&x, t + 2.0 * h) + 8.0 * spec.value(&x, t + h) - 8.0 * spec.value(&x, t - h)
                + spec.value(&x, t - 2.0 * h))
                / (12.0 * h);
            let exact = spec.time_derivative(&x, t);
            assert!((fd - exact).norm() <= 1e-8 * exact.norm().max(1.0), "t={t} x={x:?}");
        }
    }
    // on the plateau d_t g is the core's own derivative
    let x = [0.5, -1.0, 0.3];
    let core = spec.spatial.value(&x) * Complex64::from_polar(1.0, -3.0 * 0.5);
    assert!((spec.time_derivative(&x, 0.5) - (-Complex64::i() * 3.0 * core)).norm() < 1e-12);
}

#[test]
fn factory_rejects_oversized_support() {
    let g = grid3();
    let mut s = bump();
    s.cutoff_m = 2.5;
    assert!(matches!(cutoff_factory(&s, &g, &unit_times(8)), Err(Error::Support(_))));
    s.cutoff_m = 2.0;
    s.cutoff_r_time = 2.0;
    assert!(cutoff_factory(&s, &g, &unit_times(8)).is_err());
}

#[test]
fn leakage_is_rejected() {
    let g = GridSpec::new(3, 5.0, 24).unwrap();
    let p = CarlemanParams::along(0.5, 1.0, 8.0, 0).unwrap();
    let pot = Potentials::free(g);
    let mut fam = cutoff_factory(&bump(), &g, &unit_times(40)).unwrap();
    fam.samples[20].values[0] = Complex64::new(1e-3, 0.0);
    let r = carleman_sides(&fam, CarlemanField::Static(&pot), &p, 0.0);
    assert!(matches!(r, Err(Error::Support(_))));
    let mut fam = cutoff_factory(&bump(), &g, &unit_times(40)).unwrap();
    fam.samples[1] = fam.samples[20].clone();
    let r = carleman_sides(&fam, CarlemanField::Static(&pot), &p, 0.0);
    assert!(matches!(r, Err(Error::Support(_))));
}

#[test]
fn zero_family_has_zero_ratio() {
    let g = GridSpec::new(3, 5.0, 16).unwrap();
    let fam = SampledFamily {
        grid: g,
        times: unit_times(10),
        samples: vec![covflow::grid::ComplexField::zeros(g); 11],
        support_radius: 4.0,
    };
    let p = CarlemanParams::along(0.5, 1.0, 8.0, 0).unwrap();
    let s = carleman_sides(&fam, CarlemanField::Static(&Potentials::free(g)), &p, 0.0).unwrap();
    assert_eq!((s.lhs, s.rhs, s.ratio), (0.0, 0.0, 0.0));
}

#[test]
fn free_bump_sweep() {
    let g = grid3();
    let fam = cutoff_factory(&bump(), &g, &unit_times(400)).unwrap();
    let pot = Potentials::free(g);
    let cases = sweep_cases("free", &MUS, &RS, 1.0, 0).unwrap();
    let rows = carleman_sweep(&fam, CarlemanField::Static(&pot), &cases, 0.0).unwrap();
    assert_eq!(rows.len(), 9);
    for r in &rows {
        println!("{} ratio {:.6}", r.case_id, r.ratio);
        assert!(r.admissible);
        assert!(r.passes(CARLEMAN_TOLERANCE), "{r:?}");
        assert!(r.ratio > 0.0);
    }
    // single example cell
    let p = CarlemanParams::along(0.5, 1.0, 8.0, 0).unwrap();
    let s = carleman_sides(&fam, CarlemanField::Static(&pot), &p, 0.0).unwrap();
    assert!(s.ratio <= 1.0);
}

#[test]
fn modulated_family_passes() {
    let g = grid3();
    let pot = Potentials::free(g);
    let cases = sweep_cases("rand", &[0.5], &[8.0], 1.0, 0).unwrap();
    for spec in random_test_specs(7, 3, &g, 2.0) {
        let fam = cutoff_factory(&spec, &g, &unit_times(400)).unwrap();
        let rows = carleman_sweep(&fam, CarlemanField::Static(&pot), &cases, 0.0).unwrap();
        assert!(rows[0].passes(CARLEMAN_TOLERANCE), "{spec:?} {:?}", rows[0]);
    }
    assert_eq!(random_test_specs(7, 3, &g, 2.0), random_test_specs(7, 3, &g, 2.0));
}

#[test]
fn block_matrix_sweep_along_kernel() {
    let g = grid3();
    let (pot, sup) = block_setup(g);
    let fam = cutoff_factory(&bump(), &g, &unit_times(400)).unwrap();
    let cases = sweep_cases("block", &MUS, &RS, 1.0, 2).unwrap();
    let rows = carleman_sweep(&fam, CarlemanField::Static(&pot), &cases, sup).unwrap();
    let admissible = rows.iter().filter(|r| r.admissible).count();
    assert!(admissible >= 3, "only {admissible} admissible cells");
    for r in &rows {
        println!("{} sup {:.3} admissible {} ratio {:.6}", r.case_id, r.sup_xtB, r.admissible, r.ratio);
        assert_eq!(r.v_index, Some(3));
        assert!(r.passes(CARLEMAN_TOLERANCE), "{r:?}");
    }
}

#[test]
fn time_doubling_converges() {
    let g = grid3();
    let (block, sup) = block_setup(g);
    let free = Potentials::free(g);
    let coarse = cutoff_factory(&bump(), &g, &unit_times(400)).unwrap();
    let fine = cutoff_factory(&bump(), &g, &unit_times(800)).unwrap();
    for (pot, k, sup) in [(&free, 0, 0.0), (&block, 2, sup)] {
        let oc = operator_samples(&coarse, CarlemanField::Static(pot)).unwrap();
        let of = operator_samples(&fine, CarlemanField::Static(pot)).unwrap();
        for (mu, r) in [(0.25, 4.0), (0.5, 8.0), (1.0, 16.0)] {
            let p = CarlemanParams::along(mu, 1.0, r, k).unwrap();
            let a = sides_from(&coarse, &oc, &p, sup).unwrap();
            let b = sides_from(&fine, &of, &p, sup).unwrap();
            let dl = ((a.log_lhs - b.log_lhs).exp() - 1.0).abs();
            let dr = ((a.log_rhs - b.log_rhs).exp() - 1.0).abs();
            println!("mu {mu} R {r}: dlhs {dl:.2e} drhs {dr:.2e}");
            assert!(dl <= 1e-3 && dr <= 1e-3, "mu {mu} R {r}: {dl} {dr}");
        }
    }
}

#[test]
fn timed_field_matches_static() {
    let g = GridSpec::new(3, 5.0, 24).unwrap();
    let (pot, sup) = block_setup(g);
    let fam = cutoff_factory(&bump(), &g, &unit_times(80)).unwrap();
    let p = CarlemanParams::along(0.25, 1.0, 8.0, 2).unwrap();
    let f = |_t: f64| Ok(pot.clone());
    let a = carleman_sides(&fam, CarlemanField::Static(&pot), &p, sup).unwrap();
    let b = carleman_sides(&fam, CarlemanField::Timed(&f), &p, sup).unwrap();
    assert_eq!(a, b);
}

#[test]
fn csv_schema() {
    let g = GridSpec::new(3, 5.0, 16).unwrap();
    let fam = cutoff_factory(&bump(), &g, &unit_times(40)).unwrap();
    let pot = Potentials::free(g);
    let cases = sweep_cases("c", &[0.5], &[4.0, 8.0], 1.0, 0).unwrap();
    let rows = carleman_sweep(&fam, CarlemanField::Static(&pot), &cases, 0.0).unwrap();
    let mut buf = Vec::new();
    write_carleman_csv(&mut buf, &rows).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "case_id,mu,eps,R,v_index,sup_xtB,admissible,lhs,rhs,ratio");
    assert_eq!(lines.count(), 2);
    assert!(text.contains("c-mu0.5-R4,0.5,1.0,4.0,1,0.0,true,"));
    let mut again = Vec::new();
    write_carleman_csv(&mut again, &rows).unwrap();
    assert_eq!(text.as_bytes(), again.as_slice());
    let mut empty = Vec::new();
    write_carleman_csv(&mut empty, &[]).unwrap();
    assert_eq!(String::from_utf8(empty).unwrap().trim(), "case_id,mu,eps,R,v_index,sup_xtB,admissible,lhs,rhs,ratio");
}

proptest! {
    #[test]
    fn weight_at_moving_center(mu in 0.1f64..2.0, eps in 0.1f64..2.0, r in 1.0f64..16.0, t in 0.0f64..1.0) {
        let p = CarlemanParams::along(mu, eps, r, 1).unwrap();
        let s = r * t * (1.0 - t);
        let e = p.exponent(&[0.0, -s, 0.0], t);
        prop_assert!((e + (1.0 + eps) * r * s / (16.0 * mu)).abs() <= 1e-12 * (1.0 + e.abs()));
        let x = [0.4, 0.1, -0.3];
        let shifted = p.exponent(&x, t) - p.exponent(&[0.0, -s, 0.0], t);
        let d2 = 0.16 + (0.1 + s).powi(2) + 0.09;
        prop_assert!((shifted - mu * d2).abs() <= 1e-12 * (1.0 + shifted.abs()));
    }
}
