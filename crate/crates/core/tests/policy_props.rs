use lbfgs_pi::gradcheck::central_difference;
use lbfgs_pi::policy::{project_clip, PROJECTION_EPS};
use lbfgs_pi::{DenseVector, PolicyParams, Rng, Tape};
use proptest::prelude::*;

fn inputs(rng: &mut Rng, n: usize) -> [DenseVector; 4] {
    std::array::from_fn(|_| rng.randn(n, 1.0).unwrap())
}

/// Minimizer of `|u1 - tau u2|^2` over `[lo, hi]` by bisection on the sign
/// of the derivative `sum_i (tau u2_i - u1_i) u2_i`.
fn bisection_oracle(u1: &[f64], u2: &[f64], lo: f64, hi: f64) -> f64 {
    let slope = |tau: f64| -> f64 { u1.iter().zip(u2).map(|(a, b)| (tau * b - a) * b).sum() };
    if slope(lo) >= 0.0 {
        return lo;
    }
    if slope(hi) <= 0.0 {
        return hi;
    }
    let (mut a, mut b) = (lo, hi);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if slope(m) > 0.0 {
            b = m;
        } else {
            a = m;
        }
    }
    0.5 * (a + b)
}

proptest! {
    #[test]
    fn step_stays_in_range(seed in any::<u64>(), n in 1usize..=10, spread in -2.0f64..2.0) {
        let mut rng = Rng::new(seed);
        let mut p = PolicyParams::init_random(6, &mut rng).unwrap();
        let flat: Vec<f64> = p.to_flat().iter().map(|_| 10f64.powf(spread) * rng.normal()).collect();
        p.set_flat(&flat).unwrap();
        let [d, g, s, y] = inputs(&mut rng, n);
        let dec = p.step(&d, &g, &s, &y).unwrap();
        prop_assert!(dec.tau >= -3.0 && dec.tau <= 0.0);
        prop_assert!(dec.t >= (-3.0f64).exp() && dec.t <= 1.0);
        prop_assert_eq!(dec.t, dec.tau.exp());
    }

    #[test]
    fn step_is_invariant_to_coordinate_permutation(seed in any::<u64>(), n in 2usize..=10) {
        let mut rng = Rng::new(seed);
        let p = PolicyParams::init_random(6, &mut rng).unwrap();
        let vs = inputs(&mut rng, n);
        let mut perm: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut perm);
        let permuted: Vec<DenseVector> = vs
            .iter()
            .map(|v| DenseVector::new(perm.iter().map(|&i| v[i]).collect()).unwrap())
            .collect();
        let a = p.step(&vs[0], &vs[1], &vs[2], &vs[3]).unwrap().tau;
        let b = p.step(&permuted[0], &permuted[1], &permuted[2], &permuted[3]).unwrap().tau;
        prop_assert!((a - b).abs() <= 1e-12);
    }

    #[test]
    fn cosphi_parameters_reproduce_the_cosine(seed in any::<u64>(), n in 2usize..=10) {
        let p = PolicyParams::cosphi(-3.0).unwrap();
        let mut rng = Rng::new(seed);
        let [d, g, s, y] = inputs(&mut rng, n);
        let cos = -d.dot(&g).unwrap() / (d.norm2() * g.norm2());
        prop_assume!(cos >= (-3.0f64).exp() && cos <= 1.0);
        let t = p.step(&d, &g, &s, &y).unwrap().t;
        prop_assert!((t - cos).abs() <= 1e-12);
    }

    /// Inside the clip range the regularizer shifts the minimizer by at most
    /// `3 eps / |u2|^2`, so the strict bound holds once `|u2|` is not tiny.
    #[test]
    fn projection_matches_scalar_oracle(
        u1 in prop::collection::vec(-3.0f64..3.0, 6),
        dir in prop::collection::vec(-1.0f64..1.0, 6),
        log_norm in -6.0f64..1.0,
    ) {
        let dn = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assume!(dn > 1e-3);
        let u2: Vec<f64> = dir.iter().map(|v| v / dn * 10f64.powf(log_norm)).collect();
        let tau = project_clip(&u1, &u2, -3.0, 0.0);
        let oracle = bisection_oracle(&u1, &u2, -3.0, 0.0);
        let sq = u2.iter().map(|v| v * v).sum::<f64>();
        let bias = 3.0 * PROJECTION_EPS / sq;
        prop_assert!((tau - oracle).abs() <= 1e-9 + bias, "tau {tau} oracle {oracle}");
        if sq >= 1e-2 {
            prop_assert!((tau - oracle).abs() <= 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tape_gradient_matches_finite_differences(seed in any::<u64>(), n in 2usize..=6) {
        let mut rng = Rng::new(seed);
        let p = PolicyParams::init_random(6, &mut rng).unwrap();
        let [d, g, s, y] = inputs(&mut rng, n);
        let tau = p.step(&d, &g, &s, &y).unwrap().tau;
        prop_assume!(tau > -3.0 + 1e-3 && tau < -1e-3);

        let mut tape = Tape::new();
        let nodes = p.record_params(&mut tape);
        let [dn, gn, sn, yn] = [&d, &g, &s, &y].map(|v| tape.constant(v.as_slice().to_vec()));
        let rec = p.record_step(&mut tape, &nodes, dn, gn, sn, yn).unwrap();
        prop_assert_eq!(tape.scalar(rec.tau).unwrap(), tau);
        let grad = p.flat_gradient(&nodes, &tape.backward(rec.tau).unwrap());

        let mut probe = p.clone();
        let fd = central_difference(
            &mut |theta| {
                probe.set_flat(theta)?;
                Ok(probe.step(&d, &g, &s, &y)?.tau)
            },
            &p.to_flat(),
            1e-6,
        )
        .unwrap();
        let scale = fd.iter().fold(1e-6f64, |m, v| m.max(v.abs()));
        for (a, b) in grad.iter().zip(&fd) {
            prop_assert!((a - b).abs() <= 1e-5 * scale, "{a} vs {b}");
        }
    }
}

#[test]
fn json_round_trip_preserves_parameters() {
    let p = PolicyParams::init_random(6, &mut Rng::new(12)).unwrap();
    let back = PolicyParams::from_json(&p.to_json().unwrap()).unwrap();
    assert_eq!(back, p);
}
