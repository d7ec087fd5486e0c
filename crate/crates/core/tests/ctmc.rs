use castel_core::ctmc::*;

fn two_state() -> Ctmc<f64> {
    Ctmc::from_entries(2, [(0, 1, 1.0)], 0).unwrap()
}

#[test]
fn parallel_edges_merge() {
    let c = Ctmc::from_entries(2, [(0, 1, 1.0), (0, 1, 2.0), (1, 1, 5.0)], 0).unwrap();
    assert_eq!(c.rates, [(0, 1, 3.0)]);
    assert_eq!(c.exit_rate(1), 0.0);
    assert!(Ctmc::<f64>::from_entries(0, [], 0).is_err());
}

#[test]
fn poisson_weights_sum_to_one() {
    for lambda in [0.1, 1.0, 7.5, 250.0, 4000.0] {
        let (left, w) = poisson_weights(lambda, 1e-10);
        let s: f64 = w.iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        let mean: f64 = w.iter().enumerate().map(|(k, p)| (left + k) as f64 * p).sum();
        assert!((mean - lambda).abs() < 1e-6 * lambda.max(1.0), "{lambda}: {mean}");
    }
}

#[test]
fn two_state_until_is_exponential_cdf() {
    let p = bounded_until(&two_state(), &[true, true], &[false, true], 1.0, 1e-9).unwrap();
    assert!((p[0] - (1.0 - (-1.0f64).exp())).abs() < 1e-6);
    assert_eq!(p[1], 1.0);
    let no_phi = bounded_until(&two_state(), &[false, true], &[false, true], 1.0, 1e-9).unwrap();
    assert_eq!(no_phi[0], 0.0);
    let p32 = bounded_until(&Ctmc::<f32>::from_entries(2, [(0, 1, 1.0)], 0).unwrap(), &[true, true], &[false, true], 1.0, 1e-6)
        .unwrap();
    assert!((p32[0] - 0.632_12).abs() < 1e-4);
}

#[test]
fn unless_survival_and_duality() {
    let c = two_state();
    let w = bounded_unless(&c, &[true, false], &[false, false], 1.0, 1e-9).unwrap();
    assert!((w[0] - (-1.0f64).exp()).abs() < 1e-6);
    let all = bounded_unless(&c, &[true, true], &[false, false], 1.0, 1e-9).unwrap();
    assert!(all.iter().all(|p| (p - 1.0).abs() < 1e-12));
    let u = bounded_until(&c, &[true, true], &[false, true], 1.0, 1e-9).unwrap();
    assert!((u[0] + w[0] - 1.0).abs() < 1e-6);
}

#[test]
fn transient_matches_closed_form() {
    let p = transient(&two_state(), &[1.0, 0.0], 2.0, 1e-10).unwrap();
    assert!((p[0] - (-2.0f64).exp()).abs() < 1e-8);
    assert!((p[0] + p[1] - 1.0).abs() < 1e-9);
}

#[test]
fn space_bound_on_a_line() {
    // 0 -1-> 1 -0-> 2 -1-> 3 (goal)
    let c = JumpChain::<f64>::new(4, [(0, 1, 1.0, 1), (1, 2, 1.0, 0), (2, 3, 1.0, 1)]);
    let phi = [true; 4];
    let psi = [false, false, false, true];
    assert_eq!(space_bounded_until(&c, &phi, &psi, 1, 1e-12).unwrap()[0], 0.0);
    assert_eq!(space_bounded_until(&c, &phi, &psi, 2, 1e-12).unwrap()[0], 1.0);
    let branch = JumpChain::<f64>::new(3, [(0, 1, 1.0, 1), (0, 2, 3.0, 0)]);
    let p = space_bounded_until(&branch, &[true; 3], &[false, true, false], 1, 1e-12).unwrap();
    assert!((p[0] - 0.25).abs() < 1e-12);
}

#[test]
fn exports_are_line_oriented() {
    let mut c = Ctmc::from_entries(3, [(1, 2, 0.5), (0, 1, 2.0)], 0).unwrap();
    c.label(2, "done");
    assert_eq!(c.to_tra(), "3 2\n0 1 2\n1 2 0.5\n");
    assert_eq!(c.to_lab(), "0=\"done\" 1=\"init\"\n0: 1\n2: 0\n");
}
