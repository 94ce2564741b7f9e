use std::f64::consts::PI;
use std::sync::Arc;

use covflow::error::Error;
use covflow::evolve::*;
use covflow::fields::*;
use covflow::grid::*;
use covflow::monitors::*;
use num_complex::Complex64;
use proptest::prelude::*;

fn c64(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn r2(x: &[f64; 3]) -> f64 {
    x[0] * x[0] + x[1] * x[1] + x[2] * x[2]
}

fn gaussian(g: GridSpec, kappa: f64) -> ComplexField {
    ComplexField::from_fn(g, |x| c64((-kappa * r2(x)).exp(), 0.0))
}

fn manual(times: Vec<f64>, snapshots: Vec<ComplexField>) -> Trajectory {
    Trajectory {
        times,
        snapshots,
        params: FlowParams::new(0.0, 1.0, 1e-3, 1.0, 1),
    }
}

fn gap(x: f64, y: f64) -> f64 {
    (x - y).abs() / x.abs().max(y.abs())
}

#[test]
fn carleman_weight_examples() {
    let w = WeightSpec::carleman(1.0, 1.0, 4.0, [1.0, 0.0, 0.0]).unwrap();
    let at = w.at(0.5, 3);
    assert!((at.phi(&[0.0; 3]) - 0.5).abs() < 1e-15);
    let x = [0.3, -1.2, 0.7];
    for t in [0.0, 1.0] {
        assert!((w.at(t, 3).phi(&x) - r2(&x)).abs() < 1e-15);
    }
    let t: f64 = 0.3;
    let s = 4.0 * t * (1.0 - t);
    let centre = [-s, 0.0, 0.0];
    let want = -2.0 * 16.0 * t * (1.0 - t) / 16.0;
    assert!((w.at(t, 3).phi(&centre) - want).abs() < 1e-14);
    assert!(want < 0.0);
    assert!(WeightSpec::carleman(1.0, 1.0, 4.0, [1.0, 1.0, 0.0]).is_err());
    assert!(WeightSpec::interpolating(0.0, 1.0).is_err());
    assert!(WeightSpec::dissipation(0.1, 0.0, 1.0).is_err());
}

fn kinds() -> Vec<WeightSpec> {
    vec![
        WeightSpec::static_gaussian(0.3).unwrap(),
        WeightSpec::interpolating(1.5, 2.5).unwrap(),
        WeightSpec::dissipation(0.2, 0.7, 1.3).unwrap(),
        WeightSpec::carleman(0.4, 0.5, 3.0, [0.6, 0.0, 0.8]).unwrap(),
    ]
}

proptest! {
    #[test]
    fn weight_derivatives_match_differences(
        k in 0usize..4, t in 0.05f64..0.95,
        x0 in -3.0f64..3.0, x1 in -3.0f64..3.0, x2 in -3.0f64..3.0,
    ) {
        let w = &kinds()[k];
        let x = [x0, x1, x2];
        let h = 1e-4;
        let phi = |t: f64, x: &[f64; 3]| w.at(t, 3).phi(x);
        let at = w.at(t, 3);
        let dt = (phi(t + h, &x) - phi(t - h, &x)) / (2.0 * h);
        prop_assert!((at.phi_t(&x) - dt).abs() < 1e-6 * (1.0 + dt.abs()));
        let dtt = (phi(t + h, &x) - 2.0 * phi(t, &x) + phi(t - h, &x)) / (h * h);
        prop_assert!((at.phi_tt(&x) - dtt).abs() < 1e-4 * (1.0 + dtt.abs()));
        let mut lap = 0.0;
        for a in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[a] += h;
            xm[a] -= h;
            let g = (phi(t, &xp) - phi(t, &xm)) / (2.0 * h);
            prop_assert!((at.grad(&x)[a] - g).abs() < 1e-6 * (1.0 + g.abs()));
            let gt = (w.at(t + h, 3).grad(&x)[a] - w.at(t - h, 3).grad(&x)[a]) / (2.0 * h);
            prop_assert!((at.grad_t(&x)[a] - gt).abs() < 1e-6 * (1.0 + gt.abs()));
            lap += (phi(t, &xp) - 2.0 * phi(t, &x) + phi(t, &xm)) / (h * h);
        }
        prop_assert!((at.laplacian(&x) - lap).abs() < 1e-4 * (1.0 + lap.abs()));
    }
}

#[test]
fn weighted_h_gaussian_moment() {
    let g = GridSpec::new(2, 8.0, 64).unwrap();
    let traj = manual(vec![0.0], vec![gaussian(g, 1.0)]);
    let rep = weighted_H(&traj, &WeightSpec::static_gaussian(0.5).unwrap()).unwrap();
    // || e^{-|x|^2/2} ||^2 = pi in 2D
    assert!(gap(rep.H[0], PI.sqrt()) <= 1e-10, "{}", rep.H[0]);
}

#[test]
fn unweighted_h_is_conserved_by_free_flow() {
    let g = GridSpec::new(2, 8.0, 64).unwrap();
    let traj = evolve(&gaussian(g, 1.0), &Potentials::free(g), &FlowParams::new(0.0, 1.0, 1e-3, 0.2, 20)).unwrap();
    let rep = weighted_H(&traj, &WeightSpec::static_gaussian(0.0).unwrap()).unwrap();
    for h in &rep.H {
        assert!(gap(*h, rep.H[0]) < 1e-9);
    }
    let v = convexity_check(&rep, 1e-6).unwrap();
    assert!(v.pass && v.min_d2_logH.abs() < 1e-6);
}

#[test]
fn theta_at_equal_parameters() {
    let g = GridSpec::new(2, 8.0, 32).unwrap();
    let snaps = (0..5).map(|k| gaussian(g, 1.0 + 0.1 * k as f64)).collect();
    let traj = manual(vec![0.0, 0.25, 0.5, 0.75, 1.0], snaps);
    let rep = weighted_H(&traj, &WeightSpec::interpolating(2.0, 2.0).unwrap()).unwrap();
    for (th, l) in rep.theta.iter().zip(&rep.logH) {
        assert!((th - 2.0 * l).abs() < 1e-14);
    }
    assert!(rep.d2_logH[0].is_nan() && rep.d2_logH[4].is_nan());
}

/// `|| e^{gamma |x|^2} u(t) ||` for the free Schrodinger Gaussian `e^{-kappa |x|^2}` in 2D.
fn schrodinger_h(kappa: f64, gamma: f64, t: f64) -> f64 {
    let d = c64(1.0, 4.0 * kappa * t);
    let p = (kappa / d).re;
    (d.norm().powi(-2) * PI / (2.0 * (p - gamma))).sqrt()
}

#[test]
fn free_gaussian_is_log_convex() {
    let g = GridSpec::new(2, 8.0, 64).unwrap();
    let traj = evolve(&gaussian(g, 1.0), &Potentials::free(g), &FlowParams::new(0.0, 1.0, 1e-3, 0.25, 10)).unwrap();
    let gamma = 0.1;
    let rep = weighted_H(&traj, &WeightSpec::static_gaussian(gamma).unwrap()).unwrap();
    for (t, h) in rep.times.iter().zip(&rep.H) {
        assert!(gap(*h, schrodinger_h(1.0, gamma, *t)) < 1e-8, "t = {t}");
    }
    // the closed form is convex in log
    let exact: Vec<f64> = rep.times.iter().map(|&t| schrodinger_h(1.0, gamma, t).ln()).collect();
    for k in 1..exact.len() - 1 {
        assert!(exact[k + 1] - 2.0 * exact[k] + exact[k - 1] >= 0.0);
    }
    let v = convexity_check(&rep, 1e-4).unwrap();
    assert!(v.pass && v.logH_convex, "{v:?}");
}

#[test]
fn frozen_solution_has_flat_log_h() {
    let g = GridSpec::new(2, 8.0, 64).unwrap();
    let u0 = gaussian(g, 1.0);
    let lap = spectral_laplacian(&u0).values;
    let force: TimeField = Arc::new(move |_t| lap.iter().map(|v| -v).collect());
    let pot = Potentials::free(g).with_forcing(force);
    let traj = evolve(&u0, &pot, &FlowParams::new(0.0, 1.0, 1e-3, 0.1, 10)).unwrap();
    let rep = weighted_H(&traj, &WeightSpec::static_gaussian(0.2).unwrap()).unwrap();
    assert!(rep.d2_logH.iter().filter(|v| v.is_finite()).all(|v| v.abs() < 1e-8));
}

#[test]
fn concave_series_fails() {
    let g = GridSpec::new(2, 8.0, 32).unwrap();
    let times: Vec<f64> = (0..6).map(|k| k as f64 * 0.2).collect();
    let snaps = times
        .iter()
        .map(|&t| gaussian(g, 1.0).scale(c64((-t * t).exp(), 0.0)))
        .collect();
    let rep = weighted_H(&manual(times, snaps), &WeightSpec::static_gaussian(0.1).unwrap()).unwrap();
    let v = convexity_check(&rep, 1e-4).unwrap();
    assert!(!v.pass && !v.logH_convex);
    assert!((v.min_d2_logH + 2.0).abs() < 1e-8);
    let short = manual(vec![0.0, 1.0], vec![gaussian(g, 1.0), gaussian(g, 1.0)]);
    let rep = weighted_H(&short, &WeightSpec::static_gaussian(0.1).unwrap()).unwrap();
    assert!(matches!(convexity_check(&rep, 1e-4), Err(Error::Param(_))));
}

#[test]
fn admissibility_guards() {
    let g = GridSpec::new(2, 8.0, 32).unwrap();
    let traj = manual(vec![0.0], vec![gaussian(g, 1.0)]);
    let gmax = max_admissible_gamma(&g);
    assert!((2.0 * gmax * (0.9f64 * 8.0).powi(2) - 700.0).abs() < 1e-9);
    match weighted_H(&traj, &WeightSpec::static_gaussian(1.2 * gmax).unwrap()) {
        Err(Error::Overflow(m)) => assert!(m.contains("maximal admissible gamma")),
        other => panic!("{other:?}"),
    }
    let wide = manual(vec![0.0], vec![gaussian(g, 0.125)]);
    assert!(matches!(
        weighted_H(&wide, &WeightSpec::static_gaussian(0.06).unwrap()),
        Err(Error::BoundaryMass { .. })
    ));
}

#[test]
fn conjugated_operators_on_gaussian() {
    let g = GridSpec::new(2, 8.0, 64).unwrap();
    let v = gaussian(g, 1.0);
    let pot = Potentials::free(g);
    let gamma = 0.3;
    let w = WeightSpec::static_gaussian(gamma).unwrap();
    let (a, b) = (0.4, 1.1);
    let s = conjugated_apply(&v, &w, 0.2, &pot, a, b, Operator::S).unwrap();
    let aa = conjugated_apply(&v, &w, 0.2, &pot, a, b, Operator::A).unwrap();
    let n = 2.0;
    let i = Complex64::i();
    // grad v = -2x v, Delta v = (4|x|^2 - 2n) v
    let s_want = ComplexField::from_fn(g, |x| {
        let q = r2(x);
        let sym = 4.0 * q - 2.0 * n + 4.0 * gamma * gamma * q;
        let anti = 2.0 * n * gamma - 8.0 * gamma * q;
        (a * sym - i * b * anti) * (-q).exp()
    });
    let a_want = ComplexField::from_fn(g, |x| {
        let q = r2(x);
        let sym = 4.0 * q - 2.0 * n + 4.0 * gamma * gamma * q;
        let anti = 2.0 * n * gamma - 8.0 * gamma * q;
        (i * b * sym - a * anti) * (-q).exp()
    });
    assert!(l2_norm(&s.sub(&s_want)) <= 1e-8 * l2_norm(&s_want));
    assert!(l2_norm(&aa.sub(&a_want)) <= 1e-8 * l2_norm(&a_want));

    // phi = 0, a = 0, b = 1: S = 0 and A = i Delta
    let zero = WeightSpec::static_gaussian(0.0).unwrap();
    let s0 = conjugated_apply(&v, &zero, 0.0, &pot, 0.0, 1.0, Operator::S).unwrap();
    assert!(s0.max_abs() == 0.0);
    let a0 = conjugated_apply(&v, &zero, 0.0, &pot, 0.0, 1.0, Operator::A).unwrap();
    let want = spectral_laplacian(&v).scale(i);
    assert!(l2_norm(&a0.sub(&want)) <= 1e-14 * l2_norm(&want));
}

fn bump(g: GridSpec, c: [f64; 2], k: [f64; 2]) -> ComplexField {
    ComplexField::from_fn(g, |x| {
        let d = [x[0] - c[0], x[1] - c[1]];
        Complex64::from_polar((-(d[0] * d[0] + d[1] * d[1]) * 1.5).exp(), k[0] * x[0] + k[1] * x[1])
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]
    #[test]
    fn s_symmetric_a_skew(
        k in 0usize..3, c0 in -1.5f64..1.5, c1 in -1.5f64..1.5, k0 in -2.0f64..2.0,
        a in 0.0f64..1.0, b in -1.0f64..1.0, t in 0.1f64..0.9,
    ) {
        let g = GridSpec::new(2, 8.0, 64).unwrap();
        let pot = Potentials::free(g).with_spec(&PotentialSpec::constant_field(0.8)).unwrap();
        let w = &kinds()[k];
        let v = bump(g, [c0, c1], [k0, 0.5]);
        let u = bump(g, [-c1, c0], [0.3, -k0]);
        let scale = l2_norm(&v) * l2_norm(&u);
        for (op, sign) in [(Operator::S, 1.0), (Operator::A, -1.0)] {
            let lv = conjugated_apply(&v, w, t, &pot, a, b, op).unwrap();
            let lu = conjugated_apply(&u, w, t, &pot, a, b, op).unwrap();
            let left = inner_product(&lv, &u).unwrap();
            let right = inner_product(&v, &lu).unwrap() * sign;
            prop_assert!((left - right).norm() <= 1e-8 * scale, "{op:?}: {}", (left - right).norm() / scale);
        }
    }
}

fn evolve_free(a: f64, b: f64, kappa: f64, t_end: f64, every: usize) -> (Trajectory, Potentials) {
    evolve_on(8.0, a, b, kappa, t_end, every)
}

fn evolve_on(l: f64, a: f64, b: f64, kappa: f64, t_end: f64, every: usize) -> (Trajectory, Potentials) {
    let g = GridSpec::new(2, l, 64).unwrap();
    let pot = Potentials::free(g);
    let traj = evolve(&gaussian(g, kappa), &pot, &FlowParams::new(a, b, 1e-3, t_end, every)).unwrap();
    (traj, pot)
}

#[test]
fn conjugation_residuals() {
    let (traj, pot) = evolve_free(0.0, 1.0, 1.0, 0.2, 1);
    let r0 = conjugation_residual(&traj, &WeightSpec::static_gaussian(0.0).unwrap(), &pot, 0.0, 1.0).unwrap();
    assert!(r0 <= 1e-5, "{r0}");
    // weighted checks on L = 6: the corner weight e^{gamma |x|^2} multiplies
    // the round-off floor of u, e^{32} on L = 8 versus e^{18} here
    let (traj, pot) = evolve_on(6.0, 0.0, 1.0, 1.0, 0.2, 1);
    let r = conjugation_residual(&traj, &WeightSpec::static_gaussian(0.25).unwrap(), &pot, 0.0, 1.0).unwrap();
    assert!(r <= 1e-4, "{r}");
    let (heat, hp) = evolve_on(6.0, 1.0, 0.0, 1.0, 0.2, 1);
    let w = WeightSpec::dissipation(0.25, 1.0, 0.0).unwrap();
    let r = conjugation_residual(&heat, &w, &hp, 1.0, 0.0).unwrap();
    assert!(r <= 1e-4, "{r}");
}

#[test]
fn commutator_form_free_static() {
    let g = GridSpec::new(2, 8.0, 64).unwrap();
    let pot = Potentials::free(g);
    let (gamma, a, b) = (0.3, 0.5, 1.0);
    let w = WeightSpec::static_gaussian(gamma).unwrap();
    let f = gaussian(g, 1.0);
    let form = commutator_form(&f, &w, 0.0, &pot, None, a, b).unwrap();
    // for e^{-|x|^2} in 2D: int |x|^2 e^{-2|x|^2} = pi/4, ||grad f||^2 = pi
    let m = a * a + b * b;
    let want = m * (8.0 * gamma * PI + 32.0 * gamma.powi(3) * PI / 4.0);
    assert!(gap(form.total, want) <= 1e-10, "{} vs {want}", form.total);
    assert!(form.term("magnetic").unwrap() == 0.0);
    let z = commutator_form(&ComplexField::zeros(g), &w, 0.0, &pot, None, a, b).unwrap();
    assert_eq!(z.total, 0.0);
    assert!(commutator_form(&f, &w.clone().with_truncation(3.0).unwrap(), 0.0, &pot, None, a, b).is_err());
}

/// `<(S_t + S A - A S) f, f>` from the operators, `S_t` by a centered difference in time.
fn operator_form(f: &ComplexField, w: &WeightSpec, t: f64, pot: &Potentials, a: f64, b: f64) -> f64 {
    let ap = |v: &ComplexField, t: f64, op| conjugated_apply(v, w, t, pot, a, b, op).unwrap();
    let sa = ap(&ap(f, t, Operator::A), t, Operator::S);
    let as_ = ap(&ap(f, t, Operator::S), t, Operator::A);
    let h = 1e-4;
    let st = ap(f, t + h, Operator::S).sub(&ap(f, t - h, Operator::S)).scale(c64(0.5 / h, 0.0));
    let total = st.add_scaled(c64(1.0, 0.0), &sa.sub(&as_));
    inner_product(&total, f).unwrap().re
}

#[test]
fn commutator_form_matches_operators() {
    let g = GridSpec::new(2, 8.0, 96).unwrap();
    let spec = PotentialSpec::constant_field(0.7);
    let pot = Potentials::free(g).with_spec(&spec).unwrap();
    let tensor = magnetic_tensor(&spec, &g, TensorMode::Analytic).unwrap();
    let f = bump(g, [0.4, -0.3], [0.8, -0.5]);
    let (a, b) = (0.3, 1.0);
    for w in kinds() {
        let w = match w.kind {
            covflow::monitors::WeightKind::Carleman { .. } => WeightSpec::carleman(0.3, 0.5, 1.5, [0.6, 0.8, 0.0]).unwrap(),
            _ => w,
        };
        for t in [0.3, 0.6] {
            let form = commutator_form(&f, &w, t, &pot, Some(&tensor), a, b).unwrap();
            let oracle = operator_form(&f, &w, t, &pot, a, b);
            assert!(gap(form.total, oracle) <= 1e-6, "{:?} t = {t}: {} vs {oracle}", w.kind, form.total);
        }
    }
}

#[test]
fn commutator_lower_bound_block_field() {
    let g = GridSpec::new(3, 6.0, 32).unwrap();
    let spec = PotentialSpec::new(PotentialKind::BlockField3d);
    let pot = Potentials::free(g).with_spec(&spec).unwrap();
    let tensor = magnetic_tensor(&spec, &g, TensorMode::Analytic).unwrap();
    let rep = hypothesis_report(&spec, &g, &[0.0, 0.0, 1.0], &ScalarSpec::zero(), &ScalarSpec::zero(), 4.0, 5.0).unwrap();
    let gamma = 0.25;
    let w = WeightSpec::static_gaussian(gamma).unwrap();
    let m_a = commutator_constant(gamma, 0.0, 1.0, rep.sup_xtB_with_core);
    for c in [[0.0, 0.0, 0.0], [1.0, -0.5, 0.5], [0.3, 1.2, -0.8]] {
        let f = ComplexField::from_fn(g, |x| {
            let d = [x[0] - c[0], x[1] - c[1], x[2] - c[2]];
            Complex64::from_polar((-r2(&d)).exp(), 0.7 * x[1])
        });
        let form = commutator_form(&f, &w, 0.0, &pot, Some(&tensor), 0.0, 1.0).unwrap();
        let nf = l2_norm(&f).powi(2);
        assert!(form.total >= -m_a * nf, "{} < {}", form.total, -m_a * nf);
        assert!(form.term("magnetic").unwrap().abs() > 0.0);
    }
}

/// `|| e^{c |x|^2} e^{-p |x|^2} ||` in 2D.
fn gauss_norm(amp: f64, p: f64, c: f64) -> f64 {
    amp * (PI / (2.0 * (p - c))).sqrt()
}

#[test]
fn dissipation_heat_gaussian() {
    let (traj, pot) = evolve_free(1.0, 0.0, 1.0, 0.5, 10);
    let gamma = 0.25;
    let t = 0.5;
    let d = dissipation_check(&traj, &pot, gamma, t).unwrap();
    let ct = gamma / (1.0 + 4.0 * gamma * t);
    let lhs = gauss_norm(1.0 / (1.0 + 4.0 * t), 1.0 / (1.0 + 4.0 * t), ct);
    let rhs = gauss_norm(1.0, 1.0, gamma);
    assert!(gap(d.lhs, lhs) < 1e-8 && gap(d.rhs, rhs) < 1e-10, "{d:?}");
    assert!(d.ratio <= 1.0 + 1e-8);
    // closed-form ratio^2 = ((1 + 4 gamma T)/(1 + 4T))^{n/2} / ... for n = 2
    assert!((d.ratio - lhs / rhs).abs() < 1e-8);

    let d0 = dissipation_check(&traj, &pot, 0.0, t).unwrap();
    assert!(gap(d0.lhs, l2_norm(traj.final_state())) < 1e-12);
    assert!(d0.ratio <= 1.0);
}

#[test]
fn dissipation_with_absorbing_potential() {
    let g = GridSpec::new(2, 8.0, 64).unwrap();
    let c = 0.8;
    let v2: TimeField = Arc::new(move |_t| vec![c64(0.0, -c); 64 * 64]);
    let pot = Potentials::free(g).with_v2(v2);
    let traj = evolve(&gaussian(g, 1.0), &pot, &FlowParams::new(1.0, 1.0, 1e-3, 0.5, 10)).unwrap();
    let d = dissipation_check(&traj, &pot, 0.2, 0.5).unwrap();
    assert!((d.m_t - c * 0.5).abs() < 1e-12);
    // solution is e^{(1+i)(-ic) t} times the free one: modulus grows like e^{c t}
    let free = evolve(&gaussian(g, 1.0), &Potentials::free(g), &FlowParams::new(1.0, 1.0, 1e-3, 0.5, 10)).unwrap();
    let df = dissipation_check(&free, &Potentials::free(g), 0.2, 0.5).unwrap();
    assert!(gap(d.lhs, df.lhs) < 1e-9);
    assert!(d.ratio <= 1.0 + 1e-8);

    let heat = manual(vec![0.0], vec![gaussian(g, 1.0)]);
    assert!(matches!(dissipation_check(&heat, &pot, 0.2, 0.0), Err(Error::Param(_))));
}

#[test]
fn dissipation_with_forcing() {
    let g = GridSpec::new(2, 8.0, 64).unwrap();
    let f0 = gaussian(g, 2.0).values;
    let force: TimeField = Arc::new(move |t| f0.iter().map(|v| v * (1.0 + t)).collect());
    let pot = Potentials::free(g).with_forcing(force);
    let traj = evolve(&gaussian(g, 1.0), &pot, &FlowParams::new(1.0, 0.5, 1e-3, 0.4, 5)).unwrap();
    let gamma = 0.2;
    let d = dissipation_check(&traj, &pot, gamma, 0.4).unwrap();
    // forcing term: sqrt(a^2+b^2) int_0^T (1+t) ||e^{c(t)|x|^2} e^{-2|x|^2}|| dt by a fine rule
    let m = (1.0f64 + 0.25).sqrt();
    let n = 4000;
    let mut acc = 0.0;
    for k in 0..n {
        let t = (k as f64 + 0.5) * 0.4 / n as f64;
        let ct = gamma / (1.0 + 4.0 * gamma * 1.25 * t);
        acc += (1.0 + t) * gauss_norm(1.0, 2.0, ct) * 0.4 / n as f64;
    }
    assert!(gap(d.forcing_term, m * acc) < 1e-4, "{} vs {}", d.forcing_term, m * acc);
    assert!(d.ratio <= 1.0 + 1e-8, "{d:?}");
}

#[test]
fn gradient_bound_reports() {
    let g = GridSpec::new(2, 8.0, 32).unwrap();
    let zero = manual(vec![0.0, 0.5, 1.0], vec![ComplexField::zeros(g); 3]);
    let z = gradient_bound_check(&zero, 3.0, 3.0, &|_| None).unwrap();
    assert_eq!(z.lhs, 0.0);

    let run = |dt: f64| {
        let traj = evolve(&gaussian(g, 1.0), &Potentials::free(g), &FlowParams::new(1.0, 0.0, dt, 1.0, (0.05 / dt) as usize)).unwrap();
        gradient_bound_check(&traj, 3.0, 3.0, &|_| None).unwrap()
    };
    let r1 = run(2e-3);
    let r2 = run(2e-3);
    assert!((r1.ratio - r2.ratio).abs() <= 1e-10 * r1.ratio);
    assert!(r1.lhs.is_finite() && r1.lhs > 0.0);
    let r3 = run(1e-3);
    assert!(gap(r1.ratio, r3.ratio) <= 1e-4, "{} vs {}", r1.ratio, r3.ratio);
    assert_eq!(r1.series.len(), 21);
}

#[test]
fn monitors_csv_schema() {
    let g = GridSpec::new(2, 8.0, 32).unwrap();
    let snaps = (0..4).map(|k| gaussian(g, 1.0 + 0.1 * k as f64)).collect();
    let traj = manual(vec![0.0, 0.1, 0.2, 0.3], snaps);
    let rep = weighted_H(&traj, &WeightSpec::static_gaussian(0.1).unwrap()).unwrap();
    let rows = monitor_rows(&rep, Some(&[0.0, 1.0, 2.0, 3.0]));
    let mut buf = Vec::new();
    write_monitors_csv(&mut buf, &rows).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "t,H,logH,theta,d2_logH,d2_theta,grad_lhs,boundary_mass");
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let parsed: Vec<Vec<f64>> = rdr
        .records()
        .map(|r| r.unwrap().iter().map(|s| s.parse::<f64>().unwrap()).collect())
        .collect();
    assert_eq!(parsed.len(), 4);
    assert_eq!(parsed[1][1], rep.H[1]);
    assert!(parsed[0][4].is_nan());
}
