//! Search-space quality curves, dominance checks and run summaries.

pub mod cli;

use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::statistics::Statistics;
use thiserror::Error;

use crate::bench::{BenchError, BenchmarkTable};
use crate::orchestrator::LaptResult;
use crate::space::{decode, SpaceError, SubspaceConstraints};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("benchmark table does not cover the whole space")]
    PartialTable,
    #[error("the subspace contains no architectures")]
    EmptySubspace,
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("writing report: {0}")]
    Io(#[from] std::io::Error),
}

/// Empirical distribution of errors: `F(e) = |{i : e_i <= e}| / n`.
#[derive(Clone, Debug, PartialEq)]
pub struct EedfCurve {
    label: String,
    n: usize,
    /// Distinct errors with the number of samples at or below each.
    steps: Vec<(f64, usize)>,
}

impl EedfCurve {
    pub fn from_errors(label: impl Into<String>, mut errors: Vec<f64>) -> Result<Self, ReportError> {
        if errors.is_empty() {
            return Err(ReportError::EmptySubspace);
        }
        errors.sort_by(f64::total_cmp);
        let mut steps: Vec<(f64, usize)> = Vec::new();
        for (i, e) in errors.iter().enumerate() {
            match steps.last_mut() {
                Some(last) if last.0 == *e => last.1 = i + 1,
                _ => steps.push((*e, i + 1)),
            }
        }
        Ok(EedfCurve {
            label: label.into(),
            n: errors.len(),
            steps,
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Samples with error at or below `e`.
    pub fn count_at(&self, e: f64) -> usize {
        let idx = self.steps.partition_point(|(x, _)| *x <= e);
        if idx == 0 {
            0
        } else {
            self.steps[idx - 1].1
        }
    }

    pub fn eval(&self, e: f64) -> f64 {
        self.count_at(e) as f64 / self.n as f64
    }

    /// Breakpoints `(e, F(e))`, increasing in `e`.
    pub fn points(&self) -> Vec<(f64, f64)> {
        self.steps.iter().map(|&(e, c)| (e, c as f64 / self.n as f64)).collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), ReportError> {
        write_curves_csv(std::slice::from_ref(self), out)
    }
}

/// Writes `e,F,label` rows for every curve.
pub fn write_curves_csv<W: Write>(curves: &[EedfCurve], out: W) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["e", "F", "label"])?;
    for c in curves {
        for (e, f) in c.points() {
            w.write_record([e.to_string(), f.to_string(), c.label.clone()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// eEDF of `task` over the whole table or over the subspace carved by
/// `constraints`. Errors are regrets from the table's best record.
pub fn eedf(
    table: &BenchmarkTable,
    task: &str,
    constraints: Option<&SubspaceConstraints>,
    label: impl Into<String>,
) -> Result<EedfCurve, ReportError> {
    if !table.is_complete() {
        return Err(ReportError::PartialTable);
    }
    let column = table.column(task)?;
    let best = column.iter().map(|(_, v)| *v).fold(f64::NEG_INFINITY, f64::max);
    let errors: Vec<f64> = match constraints {
        None => column.iter().map(|(_, v)| best - v).collect(),
        Some(c) => {
            let sub = table.space().refine(c)?;
            column
                .iter()
                .filter(|(k, _)| decode(k.as_str(), &sub).is_ok())
                .map(|(_, v)| best - v)
                .collect()
        }
    };
    EedfCurve::from_errors(label, errors)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relation {
    Dominates,
    Dominated,
    Equal,
    Crossing,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dominance {
    pub relation: Relation,
    /// Largest `|F_a(e) - F_b(e)|` over the union of breakpoints.
    pub max_gap: f64,
}

/// Compares two step functions at every breakpoint of either, exactly.
pub fn dominance(a: &EedfCurve, b: &EedfCurve) -> Dominance {
    let mut grid: Vec<f64> = a.steps.iter().chain(&b.steps).map(|s| s.0).collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let (mut above, mut below) = (false, false);
    let mut max_gap = 0.0f64;
    for e in grid {
        // ca/na vs cb/nb without rounding.
        let lhs = a.count_at(e) as u128 * b.n as u128;
        let rhs = b.count_at(e) as u128 * a.n as u128;
        above |= lhs > rhs;
        below |= lhs < rhs;
        max_gap = max_gap.max((a.eval(e) - b.eval(e)).abs());
    }
    let relation = match (above, below) {
        (true, false) => Relation::Dominates,
        (false, true) => Relation::Dominated,
        (false, false) => Relation::Equal,
        (true, true) => Relation::Crossing,
    };
    Dominance { relation, max_gap }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Population standard deviation.
    pub sd: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        if values.is_empty() {
            return None;
        }
        Some(Stat {
            mean: values.mean(),
            sd: if values.len() == 1 {
                0.0
            } else {
                values.population_std_dev()
            },
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub task: String,
    pub runs: usize,
    pub best_raw: Stat,
    pub unique_evaluations: Stat,
    pub model_rank: Option<Stat>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub tasks: Vec<TaskSummary>,
    /// Mean over tasks of each task's mean model rank.
    pub average_rank: Option<f64>,
}

/// Per-task statistics in table task order; raw scores and ranks are
/// looked up in `table`.
pub fn summarize(results: &[LaptResult], table: &BenchmarkTable) -> Result<Summary, ReportError> {
    let mut tasks = Vec::new();
    for t in table.tasks() {
        let runs: Vec<&LaptResult> = results.iter().filter(|r| r.task == t.name).collect();
        if runs.is_empty() {
            continue;
        }
        let mut raw = Vec::with_capacity(runs.len());
        let mut ranks = Vec::with_capacity(runs.len());
        for r in &runs {
            raw.push(table.raw_by_key(r.best_key.as_str(), &t.name)?);
            if table.is_complete() {
                ranks.push(table.model_rank_by_key(r.best_key.as_str(), &t.name)? as f64);
            }
        }
        let uniq: Vec<f64> = runs.iter().map(|r| r.unique_evaluations as f64).collect();
        tasks.push(TaskSummary {
            task: t.name.clone(),
            runs: runs.len(),
            best_raw: Stat::of(&raw).expect("nonempty"),
            unique_evaluations: Stat::of(&uniq).expect("nonempty"),
            model_rank: Stat::of(&ranks),
        });
    }
    let means: Vec<f64> = tasks
        .iter()
        .filter_map(|t| t.model_rank.as_ref().map(|s| s.mean))
        .collect();
    let average_rank = if means.is_empty() || means.len() != tasks.len() {
        None
    } else {
        Some(means.iter().sum::<f64>() / means.len() as f64)
    };
    Ok(Summary { tasks, average_rank })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{synth_generate, SynthParams, TaskSpec};
    use crate::orchestrator::LaptResult;
    use crate::space::{builtin, ArchKey};
    use proptest::prelude::*;

    fn curve(errors: &[f64]) -> EedfCurve {
        EedfCurve::from_errors("c", errors.to_vec()).unwrap()
    }

    #[test]
    fn step_values() {
        let c = curve(&[0.1, 0.2, 0.3, 0.4]);
        assert_eq!(c.eval(0.25), 0.5);
        assert_eq!(c.eval(0.4), 1.0);
        assert_eq!(c.eval(9.0), 1.0);
        assert_eq!(c.eval(0.05), 0.0);
        assert_eq!(c.eval(0.1), 0.25);
        let ties = curve(&[0.0, 0.0, 1.0]);
        assert_eq!(ties.points(), vec![(0.0, 2.0 / 3.0), (1.0, 1.0)]);
        assert!(matches!(
            EedfCurve::from_errors("x", vec![]),
            Err(ReportError::EmptySubspace)
        ));
    }

    #[test]
    fn dominance_cases() {
        let a = curve(&[0.1, 0.2, 0.3]);
        assert_eq!(dominance(&a, &a).relation, Relation::Equal);
        assert_eq!(dominance(&a, &a).max_gap, 0.0);
        let one = curve(&[1.0]);
        let two = curve(&[2.0]);
        assert_eq!(dominance(&one, &two).relation, Relation::Dominates);
        assert_eq!(dominance(&two, &one).relation, Relation::Dominated);
        assert_eq!(dominance(&one, &two).max_gap, 1.0);
        let x = curve(&[0.0, 3.0]);
        let y = curve(&[1.0, 1.5]);
        assert_eq!(dominance(&x, &y).relation, Relation::Crossing);
    }

    #[test]
    fn dominance_is_exact_across_sample_sizes() {
        // 1/3 vs 2/6 at every point: equal without rounding noise.
        let a = curve(&[0.0, 1.0, 2.0]);
        let b = curve(&[0.0, 0.0, 1.0, 1.0, 2.0, 2.0]);
        assert_eq!(dominance(&a, &b).relation, Relation::Equal);
    }

    #[test]
    fn table_curves() {
        let space = builtin::trans101();
        let tasks = [TaskSpec::maximize("x"), TaskSpec::minimize("y")];
        let table = synth_generate(&space, &SynthParams::new(3, 0.0, 0.0), &tasks).unwrap();
        for t in ["x", "y"] {
            let c = eedf(&table, t, None, "full").unwrap();
            assert_eq!(c.n(), 4096);
            assert_eq!(c.points()[0].0, 0.0);
            assert_eq!(c.points().last().unwrap().1, 1.0);
        }
        let mut cons = SubspaceConstraints::full(&space);
        cons.per_layer[0].allowed_ops.truncate(2);
        let sub = eedf(&table, "x", Some(&cons), "sub").unwrap();
        assert_eq!(sub.n(), 2048);
        let partial = BenchmarkTable::new(space.clone(), vec![TaskSpec::maximize("x")], vec![]).unwrap();
        assert!(matches!(eedf(&partial, "x", None, "p"), Err(ReportError::PartialTable)));
    }

    #[test]
    fn csv_export() {
        let mut buf = Vec::new();
        curve(&[0.0, 0.5]).write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "e,F,label\n0,0.5,c\n0.5,1,c\n");
    }

    fn result(task: &str, key: &str, uniq: usize) -> LaptResult {
        LaptResult {
            task: task.into(),
            seed: 0,
            best_key: ArchKey::from(key),
            best_normalized: 0.0,
            best_raw: None,
            model_rank: None,
            unique_evaluations: uniq,
            lineage: vec![],
            iterations: vec![],
        }
    }

    #[test]
    fn summaries() {
        let space = builtin::trans101();
        let table = synth_generate(&space, &SynthParams::new(3, 0.0, 0.0), &[TaskSpec::maximize("x")]).unwrap();
        let top = table.top_k("x", 9).unwrap();
        let k0 = top.entries()[0].key.as_str();
        let s = summarize(&[result("x", k0, 30)], &table).unwrap();
        assert_eq!(s.tasks[0].best_raw.sd, 0.0);
        assert_eq!(s.tasks[0].model_rank.as_ref().unwrap().mean, 1.0);
        assert_eq!(s.average_rank, Some(1.0));

        let k8 = top.entries()[8].key.as_str();
        let k2 = top.entries()[2].key.as_str();
        let s = summarize(&[result("x", k8, 10), result("x", k2, 20)], &table).unwrap();
        let r = s.tasks[0].model_rank.as_ref().unwrap();
        assert_eq!(r.mean, 6.0);
        assert_eq!(r.sd, 3.0);
        assert_eq!(s.tasks[0].unique_evaluations.mean, 15.0);
    }

    proptest! {
        #[test]
        fn curve_is_monotone_and_bounded(errors in prop::collection::vec(0.0f64..10.0, 1..60), probes in prop::collection::vec(-1.0f64..11.0, 1..20)) {
            let c = curve(&errors);
            let mut sorted = probes.clone();
            sorted.sort_by(f64::total_cmp);
            let vals: Vec<f64> = sorted.iter().map(|&e| c.eval(e)).collect();
            prop_assert!(vals.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(vals.iter().all(|v| (0.0..=1.0).contains(v)));
            let max = errors.iter().cloned().fold(f64::MIN, f64::max);
            let min = errors.iter().cloned().fold(f64::MAX, f64::min);
            prop_assert_eq!(c.eval(max), 1.0);
            prop_assert_eq!(c.eval(min - 1e-9), 0.0);
            let d = dominance(&c, &curve(&errors.iter().map(|e| e + 1.0).collect::<Vec<_>>()));
            prop_assert_eq!(d.relation, Relation::Dominates);
        }
    }
}
