use lbfgs_pi::gradcheck::objective_fd_error;
use lbfgs_pi::steppers::btls;
use lbfgs_pi::tasks::{
    make_synthetic_family, make_task_set, synthetic_digits, SyntheticKind, SyntheticOptions,
    TaskInstance, TaskSetParams,
};
use lbfgs_pi::{BtlsConfig, LbfgsHistory, Objective, Rng};
use proptest::prelude::*;

/// Keeps probe points independent of the streams that built the tasks.
const PROBE_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

fn armijo_holds(inst: &TaskInstance, rng: &mut Rng, cfg: &BtlsConfig) -> bool {
    let task = inst.task.as_ref();
    let x = inst.x0.clone();
    let (fx, g) = task.value_grad(&x).unwrap();
    // Random descent direction: the negative gradient plus noise, flipped if needed.
    let mut d = g.scale(-1.0);
    d.axpy(
        0.5 * g.norm2(),
        &rng.randn(x.len(), 1.0 / (x.len() as f64).sqrt()).unwrap(),
    )
    .unwrap();
    if d.dot(&g).unwrap() >= 0.0 {
        d = d.scale(-1.0);
    }
    let out = btls(task, &x, fx, &d, &g, cfg).unwrap();
    if out.warning {
        return true;
    }
    let mut trial = x.clone();
    trial.axpy(out.t, &d).unwrap();
    task.value(&trial).unwrap() <= fx + cfg.c1 * out.t * d.dot(&g).unwrap()
}

fn small_mlps(seed: u64) -> Vec<TaskInstance> {
    let data = synthetic_digits(60, 4, seed).unwrap();
    let params = TaskSetParams {
        batch_size: 12,
        n_batches: 5,
        inits_per_batch: 1,
        hidden: vec![3],
        x0_scale: 0.5,
    };
    make_task_set(&data, &params, seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn btls_accepts_only_sufficient_decrease(seed in any::<u64>(), n in 2usize..=12) {
        let cfg = BtlsConfig::default();
        let mut rng = Rng::new(seed);
        for inst in make_synthetic_family(SyntheticKind::Quadratic, n, 2, seed, &SyntheticOptions::default()).unwrap() {
            prop_assert!(armijo_holds(&inst, &mut rng, &cfg));
        }
        for inst in small_mlps(seed) {
            prop_assert!(armijo_holds(&inst, &mut rng, &cfg));
        }
    }

    #[test]
    fn btls_keeps_t_init_when_it_already_decreases(seed in any::<u64>(), n in 2usize..=12) {
        let inst = make_synthetic_family(SyntheticKind::Quadratic, n, 1, seed, &SyntheticOptions::default())
            .unwrap()
            .remove(0);
        let task = inst.task.as_ref();
        let (fx, g) = task.value_grad(&inst.x0).unwrap();
        // A tiny steepest-descent step always satisfies the condition on a quadratic.
        let d = g.scale(-1e-6 / g.norm2().max(1e-300));
        let out = btls(task, &inst.x0, fx, &d, &g, &BtlsConfig::default()).unwrap();
        prop_assert_eq!(out.t, 1.0);
        prop_assert_eq!(out.f_evals, 1);
    }

    #[test]
    fn objective_gradients_match_finite_differences(seed in any::<u64>(), n in 1usize..=8) {
        let mut rng = Rng::new(seed ^ PROBE_STREAM);
        for kind in [SyntheticKind::Quadratic, SyntheticKind::Logistic] {
            let inst = make_synthetic_family(kind, n, 1, seed, &SyntheticOptions::default()).unwrap().remove(0);
            for _ in 0..5 {
                let x = rng.randn(n, 1.0).unwrap();
                prop_assert!(objective_fd_error(inst.task.as_ref(), &x, 1e-6).unwrap() <= 1e-5);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn mlp_gradients_match_finite_differences(seed in any::<u64>()) {
        let mut rng = Rng::new(seed ^ PROBE_STREAM);
        let inst = &small_mlps(seed)[0];
        for _ in 0..5 {
            let x = rng.randn(inst.x0.len(), 0.5).unwrap();
            prop_assert!(objective_fd_error(inst.task.as_ref(), &x, 1e-6).unwrap() <= 1e-5);
        }
    }

    #[test]
    fn task_sets_use_disjoint_batches(seed in any::<u64>(), batches in 1usize..6, inits in 1usize..3) {
        let data = synthetic_digits(60, 3, seed).unwrap();
        let params = TaskSetParams {
            batch_size: 10,
            n_batches: batches,
            inits_per_batch: inits,
            hidden: vec![2],
            x0_scale: 0.1,
        };
        let set = make_task_set(&data, &params, seed).unwrap();
        prop_assert_eq!(set.len(), batches * inits);
        let again = make_task_set(&data, &params, seed).unwrap();
        for (a, b) in set.iter().zip(&again) {
            prop_assert_eq!(a.x0.as_slice(), b.x0.as_slice());
            prop_assert_eq!(&a.task.id, &b.task.id);
        }
    }
}

#[test]
fn lbfgs_btls_decreases_monotonically_on_quadratics() {
    let cfg = BtlsConfig::default();
    for inst in make_synthetic_family(
        SyntheticKind::Quadratic,
        6,
        5,
        77,
        &SyntheticOptions::default(),
    )
    .unwrap()
    {
        let task = inst.task.as_ref();
        let mut x = inst.x0.clone();
        let mut hist = LbfgsHistory::new(5).unwrap();
        let (mut f, mut g) = task.value_grad(&x).unwrap();
        for _ in 0..30 {
            if g.norm2() < 1e-10 {
                break;
            }
            let d = hist.two_loop(&g).unwrap().into_inner();
            let t = btls(task, &x, f, &d, &g, &cfg).unwrap().t;
            let mut next = x.clone();
            next.axpy(t, &d).unwrap();
            let (fn_, gn) = task.value_grad(&next).unwrap();
            assert!(fn_ <= f);
            hist.push_pair(next.sub(&x).unwrap(), gn.sub(&g).unwrap())
                .unwrap();
            (x, f, g) = (next, fn_, gn);
        }
    }
}
