//! Regularized (aging) evolution with a unique-evaluation cache.

use std::collections::{HashMap, VecDeque};
use std::io::Write;

use rand::seq::index::sample;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bench::{BenchError, BenchmarkTable, TableLookup};
use crate::space::{ArchKey, Architecture, SpaceDescriptor};

#[derive(Debug, Error)]
pub enum EvoError {
    #[error("invalid evolution parameters: {0}")]
    Params(String),
    #[error(transparent)]
    Oracle(#[from] BenchError),
    #[error("writing trace: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvoParams {
    pub population_size: usize,
    /// Each generation produces `population_size` children.
    pub generations: usize,
    pub tournament_size: usize,
    pub crossover_prob: f64,
    pub mutation_prob: f64,
    pub seed: u64,
    /// Stop once the cache holds this many unique evaluations.
    pub eval_budget: Option<usize>,
}

impl Default for EvoParams {
    fn default() -> Self {
        EvoParams::trans101()
    }
}

impl EvoParams {
    pub fn nas201() -> Self {
        EvoParams {
            population_size: 5,
            generations: 1,
            tournament_size: 2,
            crossover_prob: 0.0,
            mutation_prob: 1.0,
            seed: 0,
            eval_budget: None,
        }
    }

    pub fn trans101() -> Self {
        EvoParams {
            population_size: 10,
            generations: 1,
            tournament_size: 5,
            crossover_prob: 0.0,
            mutation_prob: 1.0,
            seed: 0,
            eval_budget: None,
        }
    }

    pub fn darts() -> Self {
        EvoParams {
            population_size: 20,
            generations: 10,
            tournament_size: 2,
            crossover_prob: 0.5,
            mutation_prob: 0.5,
            seed: 0,
            eval_budget: None,
        }
    }

    /// Defaults for a built-in space id; Trans101 settings otherwise.
    pub fn for_space(space_id: &str) -> Self {
        match space_id {
            "nas201" => Self::nas201(),
            "darts" => Self::darts(),
            _ => Self::trans101(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), EvoError> {
        let bad = |m: String| Err(EvoError::Params(m));
        if self.population_size == 0 {
            return bad("population_size must be at least 1".into());
        }
        if self.tournament_size == 0 || self.tournament_size > self.population_size {
            return bad(format!(
                "tournament_size must be in 1..={}, got {}",
                self.population_size, self.tournament_size
            ));
        }
        for (name, p) in [
            ("crossover_prob", self.crossover_prob),
            ("mutation_prob", self.mutation_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must be in [0, 1], got {p}"));
            }
        }
        if self.eval_budget == Some(0) {
            return bad("eval_budget must be at least 1".into());
        }
        Ok(())
    }
}

/// Normalized (higher-is-better) fitness of an architecture.
pub trait Oracle {
    fn evaluate(&self, arch: &Architecture, key: &ArchKey) -> Result<f64, BenchError>;
}

/// Oracle backed by one task column of a table.
pub struct TableOracle<'a> {
    lookup: TableLookup<'a>,
}

impl<'a> TableOracle<'a> {
    pub fn new(table: &'a BenchmarkTable, task: &str) -> Result<Self, BenchError> {
        Ok(TableOracle {
            lookup: table.lookup(task)?,
        })
    }
}

impl Oracle for TableOracle<'_> {
    fn evaluate(&self, _arch: &Architecture, key: &ArchKey) -> Result<f64, BenchError> {
        self.lookup.normalized(key)
    }
}

/// Oracle from a plain scoring function.
pub struct FnOracle<F>(pub F);

impl<F: Fn(&Architecture) -> f64> Oracle for FnOracle<F> {
    fn evaluate(&self, arch: &Architecture, _key: &ArchKey) -> Result<f64, BenchError> {
        Ok((self.0)(arch))
    }
}

/// Remembers every score; the oracle runs once per distinct key.
#[derive(Clone, Debug, Default)]
pub struct EvalCache {
    scores: HashMap<ArchKey, f64>,
    order: Vec<ArchKey>,
}

impl EvalCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the score and whether it was already cached.
    pub fn evaluate(&mut self, oracle: &dyn Oracle, arch: &Architecture) -> Result<(ArchKey, f64, bool), BenchError> {
        let key = arch.key();
        if let Some(&s) = self.scores.get(&key) {
            return Ok((key, s, true));
        }
        let s = oracle.evaluate(arch, &key)?;
        self.scores.insert(key.clone(), s);
        self.order.push(key.clone());
        Ok((key, s, false))
    }

    pub fn get(&self, key: &ArchKey) -> Option<f64> {
        self.scores.get(key).copied()
    }

    pub fn unique_evaluations(&self) -> usize {
        self.order.len()
    }

    /// Evaluated keys in first-evaluation order.
    pub fn keys(&self) -> &[ArchKey] {
        &self.order
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub key: ArchKey,
    pub score: f64,
    pub gen: usize,
    pub cache_hit: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SearchTrace {
    pub records: Vec<TraceRecord>,
    pub best_so_far: Vec<f64>,
    /// Oracle calls made by this run.
    pub unique_evaluations: usize,
}

impl SearchTrace {
    fn push(&mut self, key: ArchKey, score: f64, gen: usize, cache_hit: bool) {
        let best = self.best_so_far.last().map_or(score, |b| b.max(score));
        self.best_so_far.push(best);
        if !cache_hit {
            self.unique_evaluations += 1;
        }
        self.records.push(TraceRecord {
            key,
            score,
            gen,
            cache_hit,
        });
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<(), EvoError> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }
}

#[derive(Clone, Debug)]
pub struct Member {
    pub arch: Architecture,
    pub key: ArchKey,
    pub score: f64,
}

#[derive(Clone, Debug)]
pub struct EvoOutcome {
    pub best: Member,
    pub trace: SearchTrace,
    /// Final population, oldest first.
    pub population: Vec<Member>,
}

/// Samples `size` distinct members; the best wins, ties to the oldest.
pub fn tournament<'a, R: Rng + ?Sized>(population: &'a [Member], size: usize, rng: &mut R) -> &'a Member {
    assert!(!population.is_empty(), "tournament over an empty population");
    let k = size.clamp(1, population.len());
    let mut picked = sample(rng, population.len(), k).into_vec();
    picked.sort_unstable();
    let mut best = picked[0];
    for &i in &picked[1..] {
        if population[i].score > population[best].score {
            best = i;
        }
    }
    &population[best]
}

/// Uniform per-layer recombination followed by source repair.
pub fn crossover<R: Rng + ?Sized>(
    a: &Architecture,
    b: &Architecture,
    space: &SpaceDescriptor,
    rng: &mut R,
) -> Architecture {
    let choices = a
        .choices
        .iter()
        .zip(&b.choices)
        .map(|(x, y)| if rng.gen_bool(0.5) { x.clone() } else { y.clone() })
        .collect();
    let mut child = Architecture::new(choices);
    space.repair(&mut child, rng);
    child
}

struct Run<'a> {
    oracle: &'a dyn Oracle,
    cache: &'a mut EvalCache,
    budget: Option<usize>,
    trace: SearchTrace,
    best: Option<Member>,
}

impl Run<'_> {
    fn exhausted(&self) -> bool {
        self.budget.is_some_and(|b| self.cache.unique_evaluations() >= b)
    }

    fn eval(&mut self, arch: Architecture, gen: usize) -> Result<Member, EvoError> {
        let (key, score, hit) = self.cache.evaluate(self.oracle, &arch)?;
        self.trace.push(key.clone(), score, gen, hit);
        let m = Member { arch, key, score };
        if self.best.as_ref().is_none_or(|b| score > b.score) {
            self.best = Some(m.clone());
        }
        Ok(m)
    }
}

/// Runs aging evolution inside `space`.
pub fn run(
    space: &SpaceDescriptor,
    oracle: &dyn Oracle,
    params: &EvoParams,
    cache: &mut EvalCache,
) -> Result<EvoOutcome, EvoError> {
    run_from(space, oracle, params, cache, &[])
}

/// Like [`run`], seeding the population with `initial` members that belong
/// to `space`; the rest is sampled uniformly.
pub fn run_from(
    space: &SpaceDescriptor,
    oracle: &dyn Oracle,
    params: &EvoParams,
    cache: &mut EvalCache,
    initial: &[Architecture],
) -> Result<EvoOutcome, EvoError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut run = Run {
        oracle,
        cache,
        budget: params.eval_budget,
        trace: SearchTrace::default(),
        best: None,
    };
    let mut population: VecDeque<Member> = VecDeque::with_capacity(params.population_size);
    let mut seeds = initial
        .iter()
        .filter(|a| space.is_valid(a))
        .take(params.population_size);
    while population.len() < params.population_size {
        if run.exhausted() && !population.is_empty() {
            break;
        }
        let arch = match seeds.next() {
            Some(a) => a.clone(),
            None => space.sample_uniform(&mut rng),
        };
        population.push_back(run.eval(arch, 0)?);
    }
    'outer: for gen in 1..=params.generations {
        for _ in 0..params.population_size {
            if run.exhausted() {
                break 'outer;
            }
            let members = population.make_contiguous();
            let mut child = if params.crossover_prob > 0.0 && rng.gen_bool(params.crossover_prob) {
                let a = tournament(members, params.tournament_size, &mut rng).arch.clone();
                let b = tournament(members, params.tournament_size, &mut rng).arch.clone();
                crossover(&a, &b, space, &mut rng)
            } else {
                tournament(members, params.tournament_size, &mut rng).arch.clone()
            };
            if params.mutation_prob > 0.0 && rng.gen_bool(params.mutation_prob) {
                child = space.mutate(&child, &mut rng);
            }
            let m = run.eval(child, gen)?;
            population.push_back(m);
            if population.len() > params.population_size {
                population.pop_front();
            }
        }
    }
    Ok(EvoOutcome {
        best: run.best.expect("at least one evaluation"),
        trace: run.trace,
        population: population.into(),
    })
}
