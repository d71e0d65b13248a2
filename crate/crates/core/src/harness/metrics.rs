use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::run::RunRecord;
use crate::error::{Error, Result};

/// How time-to-precision is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Clock {
    #[default]
    Wall,
    /// Iteration index, which makes exact ties meaningful.
    Iterations,
}

/// First time `||g|| < eps`, infinite if never reached.
pub fn compute_tf(record: &RunRecord, eps: f64, clock: Clock) -> f64 {
    record
        .iterations
        .iter()
        .find(|r| r.gnorm < eps)
        .map_or(f64::INFINITY, |r| match clock {
            Clock::Wall => r.seconds,
            Clock::Iterations => r.k as f64,
        })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexVariant {
    /// Best value along the trajectory.
    Min,
    /// Value at the last iterate.
    Final,
}

impl IndexVariant {
    pub fn name(self) -> &'static str {
        match self {
            Self::Min => "min",
            Self::Final => "final",
        }
    }
}

/// `ln(f_a / f_pi)`; positive when the reference optimizer reached a lower value.
pub fn index_ia(
    competitor: &RunRecord,
    reference: &RunRecord,
    variant: IndexVariant,
) -> Result<f64> {
    if competitor.task_id != reference.task_id {
        return Err(Error::InvalidArgument(format!(
            "records of different tasks: {} vs {}",
            competitor.task_id, reference.task_id
        )));
    }
    let pick = |r: &RunRecord| match variant {
        IndexVariant::Min => r.f_star,
        IndexVariant::Final => r.f_final,
    };
    let (fa, fp) = (pick(competitor), pick(reference));
    if !(fa > 0.0 && fp > 0.0) || !fa.is_finite() || !fp.is_finite() {
        return Err(Error::UndefinedMetric {
            task: reference.task_id.clone(),
            reason: format!("needs finite positive values, got {fa} and {fp}"),
        });
    }
    Ok((fa / fp).ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WinTie {
    pub win_pct: f64,
    pub tie_pct: f64,
    pub loss_pct: f64,
    pub tasks: usize,
}

/// Outcome percentages from `(t_f reference, t_f competitor)` pairs.
/// A tie is an exactly equal time, including both infinite.
pub fn win_tie(pairs: &[(f64, f64)]) -> WinTie {
    let n = pairs.len();
    let (mut w, mut t) = (0usize, 0usize);
    for &(pi, a) in pairs {
        if pi == a {
            t += 1;
        } else if pi < a {
            w += 1;
        }
    }
    let pct = |c: usize| {
        if n == 0 {
            0.0
        } else {
            100.0 * c as f64 / n as f64
        }
    };
    WinTie {
        win_pct: pct(w),
        tie_pct: pct(t),
        loss_pct: pct(n - w - t),
        tasks: n,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinTieRow {
    pub competitor: String,
    pub eps: f64,
    #[serde(flatten)]
    pub outcome: WinTie,
}

/// Records grouped by optimizer, then task id. Warm-up runs are dropped.
fn by_optimizer(records: &[RunRecord]) -> (Vec<String>, BTreeMap<(String, String), &RunRecord>) {
    let mut names = Vec::new();
    let mut map = BTreeMap::new();
    for r in records.iter().filter(|r| !r.warmup) {
        if !names.contains(&r.optimizer) {
            names.push(r.optimizer.clone());
        }
        map.insert((r.optimizer.clone(), r.task_id.clone()), r);
    }
    (names, map)
}

/// Table-1 style win/tie percentages of `reference` against every other
/// optimizer, over tasks where both have a non-warm-up record.
pub fn win_tie_table(
    records: &[RunRecord],
    reference: &str,
    eps_grid: &[f64],
    clock: Clock,
) -> Vec<WinTieRow> {
    let (names, map) = by_optimizer(records);
    let mut rows = Vec::new();
    for comp in names.iter().filter(|n| n.as_str() != reference) {
        for &eps in eps_grid {
            let pairs: Vec<(f64, f64)> = map
                .iter()
                .filter(|((o, _), _)| o == reference)
                .filter_map(|((_, task), pi)| {
                    map.get(&(comp.clone(), task.clone()))
                        .map(|a| (compute_tf(pi, eps, clock), compute_tf(a, eps, clock)))
                })
                .collect();
            rows.push(WinTieRow {
                competitor: comp.clone(),
                eps,
                outcome: win_tie(&pairs),
            });
        }
    }
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub task_id: String,
    pub competitor: String,
    pub variant: IndexVariant,
    pub value: Option<f64>,
    /// Set when the index is undefined for this task.
    pub error: Option<String>,
}

/// `I_a` for every competitor, task and variant. Warm-up runs are included
/// since the index does not depend on timing.
pub fn index_table(records: &[RunRecord], reference: &str) -> Vec<IndexEntry> {
    let mut out = Vec::new();
    let refs: BTreeMap<&str, &RunRecord> = records
        .iter()
        .filter(|r| r.optimizer == reference)
        .map(|r| (r.task_id.as_str(), r))
        .collect();
    for r in records.iter().filter(|r| r.optimizer != reference) {
        let Some(pi) = refs.get(r.task_id.as_str()) else {
            continue;
        };
        for variant in [IndexVariant::Min, IndexVariant::Final] {
            let (value, error) = match index_ia(r, pi, variant) {
                Ok(v) => (Some(v), None),
                Err(e) => (None, Some(e.to_string())),
            };
            out.push(IndexEntry {
                task_id: r.task_id.clone(),
                competitor: r.optimizer.clone(),
                variant,
                value,
                error,
            });
        }
    }
    out
}

/// Median of the defined values, `None` when there are none.
pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::run::{IterRecord, RunStatus};

    fn record(task: &str, opt: &str, gnorms: &[f64], fs: &[f64]) -> RunRecord {
        let its = gnorms
            .iter()
            .zip(fs)
            .enumerate()
            .map(|(k, (&gnorm, &f))| IterRecord {
                k,
                f,
                gnorm,
                t_k: 1.0,
                seconds: 0.5 * k as f64,
                f_evals: k + 1,
            })
            .collect();
        RunRecord::from_iterations(task, opt, its, RunStatus::MaxIter)
    }

    #[test]
    fn tf_examples() {
        let r = record("a", "x", &[1.0, 1e-4, 1e-6], &[3.0, 2.0, 1.0]);
        assert_eq!(compute_tf(&r, 1e-5, Clock::Wall), 1.0);
        assert_eq!(compute_tf(&r, 1e-5, Clock::Iterations), 2.0);
        assert_eq!(compute_tf(&r, 1e-7, Clock::Wall), f64::INFINITY);
        assert_eq!(compute_tf(&r, 2.0, Clock::Wall), 0.0);
    }

    #[test]
    fn index_examples() {
        let pi = record("a", "pi", &[1.0], &[2.0]);
        let same = record("a", "b", &[1.0], &[2.0]);
        let worse = record("a", "b", &[1.0], &[2.0 * std::f64::consts::E]);
        let better = record("a", "b", &[1.0], &[1.0]);
        assert_eq!(index_ia(&same, &pi, IndexVariant::Min).unwrap(), 0.0);
        assert!((index_ia(&worse, &pi, IndexVariant::Min).unwrap() - 1.0).abs() < 1e-12);
        assert!(index_ia(&better, &pi, IndexVariant::Final).unwrap() < 0.0);
        let neg = record("a", "b", &[1.0], &[-1.0]);
        assert!(matches!(
            index_ia(&neg, &pi, IndexVariant::Min),
            Err(Error::UndefinedMetric { .. })
        ));
        let other = record("z", "b", &[1.0], &[1.0]);
        assert!(index_ia(&other, &pi, IndexVariant::Min).is_err());
    }

    #[test]
    fn min_and_final_variants_differ_on_spikes() {
        let pi = record("a", "pi", &[1.0, 1.0], &[1.0, 1.0]);
        let spiky = record("a", "b", &[1.0, 1.0, 1.0], &[5.0, 1.0, 3.0]);
        assert_eq!(index_ia(&spiky, &pi, IndexVariant::Min).unwrap(), 0.0);
        assert!((index_ia(&spiky, &pi, IndexVariant::Final).unwrap() - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn win_tie_examples() {
        let inf = f64::INFINITY;
        let all_win = win_tie(&[(1.0, inf), (2.0, inf)]);
        assert_eq!((all_win.win_pct, all_win.tie_pct), (100.0, 0.0));
        let all_tie = win_tie(&[(inf, inf), (inf, inf), (inf, inf)]);
        assert_eq!((all_tie.win_pct, all_tie.tie_pct), (0.0, 100.0));
        let mixed = win_tie(&[(1.0, 2.0), (1.0, inf), (3.0, 2.0), (inf, inf)]);
        assert_eq!(
            (mixed.win_pct, mixed.tie_pct, mixed.loss_pct),
            (50.0, 25.0, 25.0)
        );
    }

    #[test]
    fn table_skips_warmup_and_sums_to_100() {
        let mut recs = vec![
            record("a", "pi", &[1.0, 1e-9], &[1.0, 0.5]),
            record("a", "b", &[1.0, 1.0], &[1.0, 0.5]),
            record("c", "pi", &[1.0, 1.0], &[1.0, 0.5]),
            record("c", "b", &[1e-9], &[1.0]),
        ];
        recs[3].warmup = true;
        let rows = win_tie_table(&recs, "pi", &[1e-8, 10.0], Clock::Iterations);
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].outcome.tasks, 1);
        assert_eq!(rows[0].outcome.win_pct, 100.0);
        assert_eq!(rows[1].outcome.tie_pct, 100.0);
        for r in &rows {
            assert_eq!(
                r.outcome.win_pct + r.outcome.tie_pct + r.outcome.loss_pct,
                100.0
            );
        }
    }

    #[test]
    fn median_handles_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }
}
