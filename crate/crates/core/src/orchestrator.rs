//! The transfer loop: learn a principle on a source task, then search each
//! target task inside the refined space while adapting the principle.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bench::keyed::{hash_str, hash_words};
use crate::bench::{BenchError, BenchmarkTable};
use crate::evo::{self, EvalCache, EvoError, EvoParams, Oracle, TableOracle};
use crate::principle::{DesignPrinciple, PrincipleError, Provenance};
use crate::reasoner::{Archive, ArchiveEntry, Reasoner, ReasonerError};
use crate::space::{ArchKey, Architecture, SpaceDescriptor};

#[derive(Debug, Error)]
pub enum LaptError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error(transparent)]
    Reasoner(#[from] ReasonerError),
    #[error(transparent)]
    Evo(#[from] EvoError),
    #[error("principle leaves an empty subspace ({reason}); principle: {principle}")]
    EmptyRefinedSpace { reason: String, principle: String },
    #[error("writing run directory: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LaptConfig {
    /// Archive size for learning on the source task.
    pub learn_samples: usize,
    /// Top architectures handed to adaptation.
    pub r: usize,
    /// Adaptation iterations `G`.
    pub iterations: usize,
    pub transfer_enabled: bool,
    pub adaptation_enabled: bool,
    /// Start each iteration from the previous population's members that
    /// still fit the refined space.
    pub carry_population: bool,
    pub seeds: Vec<u64>,
    pub evo: EvoParams,
}

impl Default for LaptConfig {
    fn default() -> Self {
        LaptConfig::trans101()
    }
}

impl LaptConfig {
    fn with(learn_samples: usize, r: usize, iterations: usize, evo: EvoParams) -> Self {
        LaptConfig {
            learn_samples,
            r,
            iterations,
            transfer_enabled: true,
            adaptation_enabled: true,
            carry_population: false,
            seeds: vec![0],
            evo,
        }
    }

    pub fn nas201() -> Self {
        Self::with(50, 5, 3, EvoParams::nas201())
    }

    pub fn trans101() -> Self {
        Self::with(50, 15, 4, EvoParams::trans101())
    }

    pub fn darts() -> Self {
        Self::with(100, 50, 2, EvoParams::darts())
    }

    pub fn for_space(space_id: &str) -> Self {
        match space_id {
            "nas201" => Self::nas201(),
            "darts" => Self::darts(),
            _ => Self::trans101(),
        }
    }

    pub fn validate(&self) -> Result<(), LaptError> {
        if self.r == 0 {
            return Err(LaptError::Config("r must be at least 1".into()));
        }
        if self.iterations == 0 {
            return Err(LaptError::Config("iterations must be at least 1".into()));
        }
        if self.learn_samples == 0 {
            return Err(LaptError::Config("learn_samples must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(LaptError::Config("at least one seed is required".into()));
        }
        self.evo.validate()?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Initial,
    Adapt,
    Explore,
    /// Adaptation disabled; the principle is kept as is.
    Fixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineageEntry {
    pub iteration: usize,
    pub branch: Branch,
    pub principle: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub subspace_size: Option<u64>,
    pub best_key: ArchKey,
    /// Iteration best, normalized.
    pub best: f64,
    /// Base after this iteration's update.
    pub base: f64,
    pub branch: Branch,
    pub unique_evaluations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaptResult {
    pub task: String,
    pub seed: u64,
    pub best_key: ArchKey,
    pub best_normalized: f64,
    pub best_raw: Option<f64>,
    pub model_rank: Option<usize>,
    pub unique_evaluations: usize,
    pub lineage: Vec<LineageEntry>,
    pub iterations: Vec<IterationRecord>,
}

impl LaptResult {
    /// Base after each iteration.
    pub fn base_sequence(&self) -> Vec<f64> {
        self.iterations.iter().map(|i| i.base).collect()
    }
}

/// Archive of the source task's top `k` records, then `reasoner.learn`.
pub fn learn_stage<R: Reasoner + ?Sized>(
    source: &BenchmarkTable,
    source_task: &str,
    k: usize,
    reasoner: &mut R,
) -> Result<DesignPrinciple, LaptError> {
    let archive = source.top_k(source_task, k)?;
    Ok(reasoner.learn(&archive, source.space())?)
}

/// One step of principle adaptation.
///
/// `Base <= Best` adapts from the top `r` of `evaluated` and raises Base;
/// otherwise the principle is replaced by an exploration principle.
pub fn adapt_step<R: Reasoner + ?Sized>(
    principle: &DesignPrinciple,
    evaluated: &Archive,
    base: f64,
    best: f64,
    r: usize,
    reasoner: &mut R,
    space: &SpaceDescriptor,
) -> Result<(DesignPrinciple, f64, Branch), LaptError> {
    if base <= best {
        let p = reasoner.adapt(principle, &evaluated.top(r), space)?;
        Ok((p, best, Branch::Adapt))
    } else {
        let p = reasoner.explore(principle, space)?;
        Ok((p, base, Branch::Explore))
    }
}

/// Where run artifacts go; `None` paths skip writing.
#[derive(Clone, Debug)]
pub struct RunSink {
    root: PathBuf,
}

impl RunSink {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunSink { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn seed_dir(&self, seed: u64) -> PathBuf {
        self.root.join(format!("seed-{seed}"))
    }

    fn write_principle(&self, seed: u64, task: &str, gen: usize, p: &DesignPrinciple) -> Result<(), LaptError> {
        let dir = self.seed_dir(seed).join("principles").join(task);
        std::fs::create_dir_all(&dir)?;
        std::fs::write(dir.join(format!("gen-{gen}.json")), p.to_json())?;
        Ok(())
    }

    fn write_trace(&self, seed: u64, task: &str, gen: usize, trace: &evo::SearchTrace) -> Result<(), LaptError> {
        let dir = self.seed_dir(seed).join("traces");
        std::fs::create_dir_all(&dir)?;
        let file = std::fs::File::create(dir.join(format!("task-{task}-g{gen}.jsonl")))?;
        trace.write_jsonl(std::io::BufWriter::new(file))?;
        Ok(())
    }
}

/// Seed of one task run, independent of the task's position in a suite.
pub fn task_seed(suite_seed: u64, task: &str) -> u64 {
    hash_words(&[suite_seed, hash_str(task)])
}

fn iteration_seed(task_seed: u64, iteration: usize) -> u64 {
    hash_words(&[task_seed, iteration as u64])
}

fn refine_for(p: &DesignPrinciple, space: &SpaceDescriptor) -> Result<SpaceDescriptor, LaptError> {
    let empty = |reason: String| LaptError::EmptyRefinedSpace {
        reason,
        principle: p.to_json(),
    };
    let constraints = p.to_constraints(space).map_err(|e| match e {
        PrincipleError::EmptyLayer(_) | PrincipleError::ArityUnsatisfiable(_) => empty(e.to_string()),
        other => LaptError::Reasoner(other.into()),
    })?;
    space.refine(&constraints).map_err(|e| empty(e.to_string()))
}

/// Runs the adaptation loop for one task.
///
/// `seed` is the run's own seed (see [`task_seed`]).
#[allow(clippy::too_many_arguments)]
pub fn run_task<R: Reasoner + ?Sized>(
    task: &str,
    oracle: &dyn Oracle,
    space: &SpaceDescriptor,
    p0: &DesignPrinciple,
    config: &LaptConfig,
    seed: u64,
    reasoner: &mut R,
    sink: Option<(&RunSink, u64)>,
) -> Result<LaptResult, LaptError> {
    config.validate()?;
    let mut p = if config.transfer_enabled {
        p0.clone()
    } else {
        DesignPrinciple::all(space, Provenance::new(task, reasoner.backend_id()))
    };
    let mut cache = EvalCache::new();
    let mut base = f64::NEG_INFINITY;
    let mut lineage = vec![LineageEntry {
        iteration: 0,
        branch: Branch::Initial,
        principle: p.to_value(),
    }];
    let mut records = Vec::with_capacity(config.iterations);
    let mut overall: Option<(ArchKey, f64)> = None;
    let mut carried: Vec<Architecture> = Vec::new();
    if let Some((s, suite_seed)) = sink {
        s.write_principle(suite_seed, task, 0, &p)?;
    }
    for g in 1..=config.iterations {
        let sub = refine_for(&p, space)?;
        let params = config.evo.clone().with_seed(iteration_seed(seed, g));
        let out = evo::run_from(&sub, oracle, &params, &mut cache, &carried)?;
        if let Some((s, suite_seed)) = sink {
            s.write_trace(suite_seed, task, g, &out.trace)?;
        }
        if config.carry_population {
            carried = out.population.iter().map(|m| m.arch.clone()).collect();
        }
        // B_n: every distinct architecture evaluated in this iteration.
        let mut seen = std::collections::HashSet::new();
        let entries: Vec<ArchiveEntry> = out
            .trace
            .records
            .iter()
            .filter(|r| seen.insert(r.key.clone()))
            .map(|r| ArchiveEntry {
                arch: crate::space::decode(r.key.as_str(), space).expect("evaluated keys decode"),
                key: r.key.clone(),
                score: r.score,
            })
            .collect();
        let evaluated = Archive::new(task, entries);
        let best = out.best.score;
        if overall.as_ref().is_none_or(|(_, s)| best > *s) {
            overall = Some((out.best.key.clone(), best));
        }
        let branch = if config.adaptation_enabled {
            let (next, next_base, branch) = adapt_step(&p, &evaluated, base, best, config.r, reasoner, space)?;
            p = next;
            base = next_base;
            branch
        } else {
            base = base.max(best);
            Branch::Fixed
        };
        log::debug!("{task} g{g}: best {best:.6} base {base:.6} -> {branch:?}");
        if let Some((s, suite_seed)) = sink {
            s.write_principle(suite_seed, task, g, &p)?;
        }
        lineage.push(LineageEntry {
            iteration: g,
            branch,
            principle: p.to_value(),
        });
        records.push(IterationRecord {
            iteration: g,
            subspace_size: sub.size_u64(),
            best_key: out.best.key.clone(),
            best,
            base,
            branch,
            unique_evaluations: cache.unique_evaluations(),
        });
    }
    let (best_key, best_normalized) = overall.expect("at least one iteration");
    Ok(LaptResult {
        task: task.to_string(),
        seed,
        best_key,
        best_normalized,
        best_raw: None,
        model_rank: None,
        unique_evaluations: cache.unique_evaluations(),
        lineage,
        iterations: records,
    })
}

/// [`run_task`] against a table column, filling raw score and rank.
pub fn run_task_on_table<R: Reasoner + ?Sized>(
    table: &BenchmarkTable,
    task: &str,
    p0: &DesignPrinciple,
    config: &LaptConfig,
    suite_seed: u64,
    reasoner: &mut R,
    sink: Option<&RunSink>,
) -> Result<LaptResult, LaptError> {
    let oracle = TableOracle::new(table, task)?;
    let seed = task_seed(suite_seed, task);
    let mut res = run_task(
        task,
        &oracle,
        table.space(),
        p0,
        config,
        seed,
        reasoner,
        sink.map(|s| (s, suite_seed)),
    )?;
    res.seed = suite_seed;
    res.best_raw = Some(table.raw_by_key(res.best_key.as_str(), task)?);
    if table.is_complete() {
        res.model_rank = Some(table.model_rank_by_key(res.best_key.as_str(), task)?);
    }
    Ok(res)
}

/// Runs every (seed, task) pair in parallel, each with a fresh reasoner
/// from `make_reasoner(task, seed)`. Results come back ordered by seed,
/// then task.
pub fn run_suite<R, F>(
    table: &BenchmarkTable,
    tasks: &[String],
    p0: &DesignPrinciple,
    config: &LaptConfig,
    make_reasoner: F,
    sink: Option<&RunSink>,
) -> Result<Vec<LaptResult>, LaptError>
where
    R: Reasoner,
    F: Fn(&str, u64) -> Result<R, LaptError> + Sync,
{
    config.validate()?;
    for t in tasks {
        table.task(t)?;
    }
    let jobs: Vec<(u64, &String)> = config
        .seeds
        .iter()
        .flat_map(|&s| tasks.iter().map(move |t| (s, t)))
        .collect();
    jobs.par_iter()
        .map(|&(seed, task)| {
            let mut reasoner = make_reasoner(task, seed)?;
            run_task_on_table(table, task, p0, config, seed, &mut reasoner, sink)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineResult {
    pub task: String,
    pub seed: u64,
    pub best_key: ArchKey,
    pub best_normalized: f64,
    pub model_rank: Option<usize>,
    pub unique_evaluations: usize,
}

/// Plain aging evolution over the whole space, stopped after `budget`
/// unique evaluations.
pub fn run_baseline(
    table: &BenchmarkTable,
    task: &str,
    evo: &EvoParams,
    budget: usize,
    seed: u64,
) -> Result<BaselineResult, LaptError> {
    let oracle = TableOracle::new(table, task)?;
    let params = EvoParams {
        generations: budget.max(1) * 10,
        eval_budget: Some(budget.max(1)),
        ..evo.clone().with_seed(hash_words(&[task_seed(seed, task), u64::MAX]))
    };
    let mut cache = EvalCache::new();
    let out = evo::run(table.space(), &oracle, &params, &mut cache)?;
    let model_rank = if table.is_complete() {
        Some(table.model_rank_by_key(out.best.key.as_str(), task)?)
    } else {
        None
    };
    Ok(BaselineResult {
        task: task.to_string(),
        seed,
        best_key: out.best.key,
        best_normalized: out.best.score,
        model_rank,
        unique_evaluations: cache.unique_evaluations(),
    })
}
