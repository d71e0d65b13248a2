//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Criterion 9 reads MNIST from `LBFGS_PI_MNIST_DIR` (or `data/mnist` at the
//! workspace root) and falls back to a generated IDX fixture otherwise.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use lbfgs_pi::gradcheck::{tbptt_suite, two_loop_suite};
use lbfgs_pi::harness::{
    compute_tf, export_report, index_ia, median, read_summary, read_traces, run_all,
    run_lbfgs_with_rule, win_tie, win_tie_table, Clock, IndexVariant, IterRecord, OptimizerSpec,
    ReportOptions, RunRecord, RunStatus, StopCriteria,
};
use lbfgs_pi::steppers::{btls, StepChoice, StepContext, StepRule};
use lbfgs_pi::tasks::{
    make_synthetic_family, make_task_set, mnist_paths, synthetic_digits, Dataset, SyntheticKind,
    SyntheticOptions, TaskSetParams,
};
use lbfgs_pi::trainer::{mean_unroll_loss, train, warm_start_train};
use lbfgs_pi::{BtlsConfig, DenseVector, PolicyParams, Result, Rng, TrainConfig};

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Result<Verdict> {
    Ok(Verdict {
        passed,
        detail: detail.into(),
    })
}

fn vec_of(data: Vec<f64>) -> DenseVector {
    DenseVector::new(data).expect("finite test data")
}

fn criterion_1() -> Result<Verdict> {
    let r = two_loop_suite(200, 1)?;
    verdict(
        r.passed,
        format!(
            "{} seeds, worst rel err {:.2e} (tol {:.0e})",
            r.cases, r.worst, r.tolerance
        ),
    )
}

fn criterion_2() -> Result<Verdict> {
    let r = tbptt_suite(20, 2, 1e-3)?;
    verdict(
        r.passed,
        format!(
            "{} draws, worst rel err {:.2e} (tol {:.0e})",
            r.cases, r.worst, r.tolerance
        ),
    )
}

/// BTLS wrapped so every accepted step is re-checked against the objective.
struct ArmijoAudit {
    cfg: BtlsConfig,
    checked: usize,
    violations: usize,
    exhausted: usize,
}

impl StepRule for ArmijoAudit {
    fn choose(&mut self, ctx: &StepContext<'_>) -> Result<StepChoice> {
        let out = btls(ctx.objective, ctx.x, ctx.fx, ctx.d, ctx.g, &self.cfg)?;
        if out.warning {
            self.exhausted += 1;
        } else {
            let mut trial = ctx.x.clone();
            trial.axpy(out.t, ctx.d)?;
            let ft = ctx.objective.value(&trial)?;
            let slope = ctx.g.dot(ctx.d)?;
            self.checked += 1;
            if ft > ctx.fx + self.cfg.c1 * out.t * slope {
                self.violations += 1;
            }
        }
        Ok(StepChoice {
            t: out.t,
            f_evals: out.f_evals,
        })
    }
}

fn criterion_3() -> Result<Verdict> {
    let mut audit = ArmijoAudit {
        cfg: BtlsConfig {
            c1: 0.25,
            c2: 0.5,
            t_init: 1.0,
            max_backtracks: 50,
        },
        checked: 0,
        violations: 0,
        exhausted: 0,
    };
    let stop = StopCriteria {
        k_max: 20,
        grad_eps: 1e-10,
    };
    let mut rng = Rng::new(3);
    let mut tasks = 0;
    for i in 0..1000u64 {
        let n = 2 + rng.below(19);
        let fam = make_synthetic_family(
            SyntheticKind::Quadratic,
            n,
            1,
            300 + i,
            &SyntheticOptions::default(),
        )?;
        let inst = &fam[0];
        run_lbfgs_with_rule(
            inst.task.as_ref(),
            &inst.task.id,
            "audit",
            &inst.x0,
            5,
            &mut audit,
            &stop,
        )?;
        tasks += 1;
    }
    let images = synthetic_digits(400, 4, 33)?;
    let params = TaskSetParams {
        batch_size: 20,
        n_batches: 20,
        inits_per_batch: 1,
        hidden: vec![3],
        x0_scale: 0.1,
    };
    for inst in make_task_set(&images, &params, 34)? {
        run_lbfgs_with_rule(
            inst.task.as_ref(),
            &inst.task.id,
            "audit",
            &inst.x0,
            5,
            &mut audit,
            &stop,
        )?;
        tasks += 1;
    }
    verdict(
        audit.violations == 0 && audit.checked > 0,
        format!(
            "{tasks} tasks, {} accepted steps checked, {} violations, {} exhausted searches",
            audit.checked, audit.violations, audit.exhausted
        ),
    )
}

fn criterion_4() -> Result<Verdict> {
    let mut rng = Rng::new(4);
    let (lo, hi) = ((-3.0f64).exp(), 1.0);
    let mut bad = 0;
    let (mut t_min, mut t_max) = (f64::INFINITY, f64::NEG_INFINITY);
    let draws = 100_000;
    for _ in 0..draws {
        let mut params = PolicyParams::init_random(6, &mut rng)?;
        let spread = 10f64.powf(rng.uniform(-2.0, 2.0));
        let flat: Vec<f64> = params
            .to_flat()
            .iter()
            .map(|_| spread * rng.normal())
            .collect();
        params.set_flat(&flat)?;
        let n = 1 + rng.below(10);
        let draw = |rng: &mut Rng| -> Result<DenseVector> {
            if rng.below(8) == 0 {
                return Ok(DenseVector::zeros(n));
            }
            let scale = 10f64.powf(rng.uniform(-6.0, 6.0));
            rng.randn(n, scale)
        };
        let (d, g, s, y) = (
            draw(&mut rng)?,
            draw(&mut rng)?,
            draw(&mut rng)?,
            draw(&mut rng)?,
        );
        let t = params.step(&d, &g, &s, &y)?.t;
        t_min = t_min.min(t);
        t_max = t_max.max(t);
        if !(t >= lo && t <= hi) {
            bad += 1;
        }
    }
    verdict(
        bad == 0,
        format!("{draws} draws, t in [{t_min:.4}, {t_max:.4}], {bad} outside [{lo:.4}, {hi}]"),
    )
}

fn criterion_5() -> Result<Verdict> {
    let params = PolicyParams::cosphi(-3.0)?;
    let mut rng = Rng::new(5);
    let mut worst: f64 = 0.0;
    let draws = 10_000;
    for _ in 0..draws {
        let n = 2 + rng.below(9);
        // Magnitudes keep every Gram entry above the dotln floor of 1e-8.
        let g_scale = 10f64.powf(rng.uniform(-1.0, 3.0));
        let g = rng.randn(n, g_scale)?;
        // d = a * (-g_hat) + b * e with e orthogonal to g, so cos(phi) = target.
        let target = rng.uniform((-3.0f64).exp(), 1.0);
        let gn = g.norm2();
        let mut e = rng.randn(n, 1.0)?;
        let proj = e.dot(&g)? / (gn * gn);
        e.axpy(-proj, &g)?;
        let en = e.norm2();
        let len = 10f64.powf(rng.uniform(-1.0, 3.0));
        let sin = (1.0 - target * target).max(0.0).sqrt();
        let d = vec_of(
            (0..n)
                .map(|i| len * (-target * g[i] / gn + sin * e[i] / en))
                .collect(),
        );
        let cos = -d.dot(&g)? / (d.norm2() * gn);
        if !(cos >= (-3.0f64).exp() && cos <= 1.0) {
            continue;
        }
        let s = rng.randn(n, 1.0)?;
        let y = rng.randn(n, 1.0)?;
        let t = params.step(&d, &g, &s, &y)?.t;
        worst = worst.max((t - cos).abs());
    }
    verdict(
        worst <= 1e-12,
        format!("{draws} draws, max |t - cos phi| = {worst:.2e}"),
    )
}

fn learning_config() -> (
    Vec<lbfgs_pi::TaskInstance>,
    Vec<lbfgs_pi::TaskInstance>,
    TrainConfig,
) {
    let opts = SyntheticOptions {
        feature_scale: 3.0,
        l2: 1e-3,
        ..SyntheticOptions::default()
    };
    let train_set = make_synthetic_family(SyntheticKind::Logistic, 50, 20, 1, &opts).unwrap();
    let test_set = make_synthetic_family(SyntheticKind::Logistic, 50, 20, 101, &opts).unwrap();
    let cfg = TrainConfig {
        k: 50,
        t: 8,
        epochs: 50,
        seed: 6,
        ..TrainConfig::default()
    };
    (train_set, test_set, cfg)
}

fn criterion_6(trained: &mut Option<PolicyParams>) -> Result<Verdict> {
    let (train_set, test_set, cfg) = learning_config();
    let init = PolicyParams::init_random(6, &mut Rng::new(3))?;
    let out = train(&init, &train_set, &cfg)?;
    let stop = StopCriteria {
        k_max: cfg.k,
        grad_eps: 1e-8,
    };
    let specs = [
        OptimizerSpec::policy(out.params.clone()),
        OptimizerSpec::baseline(),
    ];
    let recs = run_all(&test_set, &specs, &stop, 0)?;
    let (pi, base) = recs.split_at(test_set.len());
    let idx: Vec<f64> = base
        .iter()
        .zip(pi)
        .map(|(a, p)| index_ia(a, p, IndexVariant::Min))
        .collect::<Result<_>>()?;
    let med = median(&idx).unwrap_or(f64::NAN);
    let positive = idx.iter().filter(|v| **v > 0.0).count();
    *trained = Some(out.params);
    verdict(
        med >= 0.0,
        format!(
            "median I_lbfgs_baseline = {med:.3e} over {} held-out tasks ({positive} positive)",
            idx.len()
        ),
    )
}

fn criterion_7(trained: Option<&PolicyParams>) -> Result<Verdict> {
    let Some(theta) = trained else {
        return verdict(false, "no parameters from criterion 6");
    };
    let family = make_synthetic_family(
        SyntheticKind::Quadratic,
        10,
        20,
        7,
        &SyntheticOptions::default(),
    )?;
    let cfg = TrainConfig {
        k: 10,
        t: 4,
        epochs: 10,
        seed: 7,
        ..TrainConfig::default()
    };
    let before = mean_unroll_loss(theta, &family, &cfg)?;
    let adapted = warm_start_train(theta, &family, &cfg)?.params;
    let after = mean_unroll_loss(&adapted, &family, &cfg)?;
    verdict(
        after < before,
        format!("mean unroll loss {before:.6} -> {after:.6}"),
    )
}

fn fixture(task: &str, opt: &str, gnorms: &[f64], fs: &[f64]) -> RunRecord {
    let its = gnorms
        .iter()
        .zip(fs)
        .enumerate()
        .map(|(k, (&gnorm, &f))| IterRecord {
            k,
            f,
            gnorm,
            t_k: 1.0,
            seconds: 0.25 * k as f64,
            f_evals: k + 1,
        })
        .collect();
    RunRecord::from_iterations(task, opt, its, RunStatus::MaxIter)
}

fn criterion_8() -> Result<Verdict> {
    let mut failures = Vec::new();
    let mut check = |ok: bool, what: &str| {
        if !ok {
            failures.push(what.to_owned());
        }
    };

    let r = fixture("a", "x", &[1.0, 1e-3, 1e-5, 1e-7], &[4.0, 3.0, 2.0, 1.0]);
    check(compute_tf(&r, 1e-4, Clock::Wall) == 0.5, "t_f wall");
    check(
        compute_tf(&r, 1e-4, Clock::Iterations) == 2.0,
        "t_f iterations",
    );
    check(
        compute_tf(&r, 1e-8, Clock::Wall).is_infinite(),
        "t_f unreached",
    );

    let inf = f64::INFINITY;
    let wt = win_tie(&[(1.0, 2.0), (3.0, inf), (5.0, 4.0), (inf, inf)]);
    check(
        (wt.win_pct, wt.tie_pct, wt.loss_pct) == (50.0, 25.0, 25.0),
        "win/tie 2-1-1",
    );

    // pi reaches 1e-6 at k = 1, 2, never, 3 and the competitor at 2, never, 1, never.
    let recs = vec![
        fixture("t1", "pi", &[1.0, 1e-7], &[2.0, 1.0]),
        fixture("t2", "pi", &[1.0, 1.0, 1e-7], &[2.0, 1.5, 1.0]),
        fixture("t3", "pi", &[1.0, 1.0], &[2.0, 2.0]),
        fixture("t4", "pi", &[1.0, 1.0, 1.0, 1e-7], &[3.0, 2.0, 1.5, 1.0]),
        fixture("t1", "b", &[1.0, 1.0, 1e-7], &[2.0, 1.5, 1.0]),
        fixture("t2", "b", &[1.0, 1.0], &[2.0, 2.0]),
        fixture("t3", "b", &[1.0, 1e-7], &[2.0, 1.0]),
        fixture("t4", "b", &[1.0, 1.0], &[3.0, 3.0]),
    ];
    let rows = win_tie_table(&recs, "pi", &[1e-6], Clock::Iterations);
    let row = rows.first().map(|r| r.outcome);
    check(
        row.is_some_and(|o| (o.win_pct, o.tie_pct, o.loss_pct) == (75.0, 0.0, 25.0)),
        "win/tie table 3-0-1",
    );

    let pi = fixture("a", "pi", &[1.0, 1.0], &[2.0, 0.5]);
    let comp = fixture("a", "b", &[1.0, 1.0, 1.0], &[3.0, 1.5, 2.0]);
    let i_min = index_ia(&comp, &pi, IndexVariant::Min)?;
    let i_final = index_ia(&comp, &pi, IndexVariant::Final)?;
    check((i_min - 3f64.ln()).abs() <= 1e-12, "I_a min = ln 3");
    check((i_final - 4f64.ln()).abs() <= 1e-12, "I_a final = ln 4");

    let detail = if failures.is_empty() {
        "compute_tf, win_tie, win_tie_table and index_ia fixtures exact".to_owned()
    } else {
        format!("mismatched: {}", failures.join(", "))
    };
    verdict(failures.is_empty(), detail)
}

fn mnist_dir() -> Option<PathBuf> {
    let candidates = std::env::var_os("LBFGS_PI_MNIST_DIR")
        .map(PathBuf::from)
        .into_iter()
        .chain(std::iter::once(
            Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"),
        ));
    for dir in candidates {
        let (ti, tl) = mnist_paths(&dir, true);
        let (si, sl) = mnist_paths(&dir, false);
        if [ti, tl, si, sl].iter().all(|p| p.is_file()) {
            return Some(dir);
        }
    }
    None
}

/// Returns the train and test datasets, the batch size to use, and a
/// description of where they came from.
fn mnist_datasets(scratch: &Path) -> Result<(Dataset, Dataset, usize, String)> {
    if let Some(dir) = mnist_dir() {
        let (ti, tl) = mnist_paths(&dir, true);
        let (si, sl) = mnist_paths(&dir, false);
        let train = Dataset::load(ti, tl)?;
        let test = Dataset::load(si, sl)?;
        return Ok((train, test, 1000, format!("MNIST from {}", dir.display())));
    }
    // Written to disk and read back so the IDX parser is part of the path.
    let fixture = scratch.join("fixture");
    std::fs::create_dir_all(&fixture).expect("create fixture directory");
    let (ti, tl) = mnist_paths(&fixture, true);
    let (si, sl) = mnist_paths(&fixture, false);
    synthetic_digits(6000, 28, 90)?.save(&ti, &tl)?;
    synthetic_digits(1000, 28, 91)?.save(&si, &sl)?;
    Ok((
        Dataset::load(ti, tl)?,
        Dataset::load(si, sl)?,
        100,
        "synthetic IDX fixture (no MNIST files found)".to_owned(),
    ))
}

fn criterion_9() -> Result<Verdict> {
    let scratch = std::env::temp_dir().join(format!("lbfgs-pi-acceptance-{}", std::process::id()));
    let (train_data, test_data, batch, source) = mnist_datasets(&scratch)?;
    let (train_data, test_data) = (train_data.downsample(8)?, test_data.downsample(8)?);
    let params = |n_batches, inits| TaskSetParams {
        batch_size: batch,
        n_batches,
        inits_per_batch: inits,
        hidden: vec![20],
        x0_scale: 0.1,
    };
    let train_set = make_task_set(&train_data, &params(60, 1), 9)?;
    let test_set = make_task_set(&test_data, &params(10, 10), 10)?;

    let cfg = TrainConfig {
        k: 5,
        t: 1,
        epochs: 1,
        seed: 9,
        ..TrainConfig::default()
    };
    let theta = train(
        &PolicyParams::init_random(6, &mut Rng::new(9))?,
        &train_set,
        &cfg,
    )?
    .params;

    let tasks = &test_set[..5];
    let specs = [
        OptimizerSpec::policy(theta),
        OptimizerSpec::baseline(),
        OptimizerSpec::btls(),
        OptimizerSpec::adam(),
        OptimizerSpec::rmsprop(),
    ];
    let stop = StopCriteria {
        k_max: 100,
        grad_eps: 1e-8,
    };
    let records = run_all(tasks, &specs, &stop, 0)?;
    let out = scratch.join("report");
    let (traces, summary) = export_report(&records, &out, &ReportOptions::default())?;
    let summary = read_summary(summary)?;
    let back = read_traces(traces, Some(&summary))?;
    let _ = std::fs::remove_dir_all(&scratch);

    let complete = records.len() == 25 && records.iter().all(|r| r.status != RunStatus::Diverged);
    let well_formed = records.iter().all(RunRecord::is_well_formed) && back == records;
    let finite_index = summary.index.len() == 4 * 5 * 2
        && summary
            .index
            .iter()
            .all(|e| e.value.is_some_and(f64::is_finite));
    let finite_wt = summary
        .win_tie
        .iter()
        .all(|r| (r.outcome.win_pct + r.outcome.tie_pct + r.outcome.loss_pct - 100.0).abs() < 1e-9);
    verdict(
        complete && well_formed && finite_index && finite_wt,
        format!(
            "{source}; train {} / test {} tasks, {} runs, complete={complete} well_formed={well_formed} finite_metrics={}",
            train_set.len(),
            test_set.len(),
            records.len(),
            finite_index && finite_wt
        ),
    )
}

fn report(id: usize, limit: Duration, f: impl FnOnce() -> Result<Verdict>) -> bool {
    let t0 = Instant::now();
    let v = f();
    let dt = t0.elapsed();
    let (passed, detail) = match v {
        Ok(v) => (v.passed && dt <= limit, v.detail),
        Err(e) => (false, format!("error: {e}")),
    };
    let tag = if passed { "PASS" } else { "FAIL" };
    println!(
        "{tag} criterion {id}: {detail} [{:.2}s, limit {}s]",
        dt.as_secs_f64(),
        limit.as_secs()
    );
    passed
}

fn main() -> ExitCode {
    let secs = Duration::from_secs;
    let mut trained = None;
    let results = [
        report(1, secs(10), criterion_1),
        report(2, secs(30), criterion_2),
        report(3, secs(60), criterion_3),
        report(4, secs(10), criterion_4),
        report(5, secs(5), criterion_5),
        report(6, secs(15 * 60), || criterion_6(&mut trained)),
        report(7, secs(5 * 60), || criterion_7(trained.as_ref())),
        report(8, secs(1), criterion_8),
        report(9, secs(10 * 60), criterion_9),
    ];
    let passed = results.iter().filter(|p| **p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
