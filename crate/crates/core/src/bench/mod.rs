//! Evaluation oracles backed by tabular benchmarks.

mod ingest;
pub mod keyed;
mod synth;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;

use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::reasoner::{Archive, ArchiveEntry};
use crate::space::{builtin, decode, ArchKey, Architecture, SpaceDescriptor};

pub use ingest::ingest_csv;
pub use synth::{synth_generate, synth_score, unary_term, SynthParams, SYNTH_CAP};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("reading benchmark: {0}")]
    Io(#[from] std::io::Error),
    #[error("benchmark schema: {0}")]
    Schema(String),
    #[error("duplicate architecture key `{0}`")]
    DuplicateKey(String),
    #[error("record `{key}` does not decode: {reason}")]
    UndecodableKey { key: String, reason: String },
    #[error("record `{key}` has no value for task `{task}`")]
    MissingTask { key: String, task: String },
    #[error("record `{key}` has a non-finite value for task `{task}`")]
    NonFinite { key: String, task: String },
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("architecture `{0}` is not in the benchmark")]
    UnknownArchitecture(String),
    #[error("benchmark table does not cover the whole space")]
    PartialTable,
    #[error("asked for the top {k} of {available} records")]
    NotEnoughRecords { k: usize, available: usize },
    #[error("space has {cardinality} architectures; synthetic tables are capped at {cap}")]
    TooLarge { cardinality: String, cap: u64 },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Maximize,
    Minimize,
}

impl Direction {
    /// Maps a raw metric to a higher-is-better value by negating minimized
    /// metrics.
    pub fn normalize(self, raw: f64) -> f64 {
        match self {
            Direction::Maximize => raw,
            Direction::Minimize => -raw,
        }
    }

    pub fn denormalize(self, normalized: f64) -> f64 {
        self.normalize(normalized)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub metric: String,
    pub direction: Direction,
}

impl TaskSpec {
    pub fn new(name: impl Into<String>, metric: impl Into<String>, direction: Direction) -> Self {
        TaskSpec {
            name: name.into(),
            metric: metric.into(),
            direction,
        }
    }

    pub fn maximize(name: impl Into<String>) -> Self {
        TaskSpec::new(name, "score", Direction::Maximize)
    }

    pub fn minimize(name: impl Into<String>) -> Self {
        TaskSpec::new(name, "score", Direction::Minimize)
    }
}

/// Record map that keeps repeated keys visible to validation.
struct RecordList(Vec<(String, BTreeMap<String, f64>)>);

impl<'de> Deserialize<'de> for RecordList {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = RecordList;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a map from architecture key to task values")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<RecordList, A::Error> {
                let mut out = Vec::with_capacity(map.size_hint().unwrap_or(0));
                while let Some((k, v)) = map.next_entry::<String, BTreeMap<String, f64>>()? {
                    out.push((k, v));
                }
                Ok(RecordList(out))
            }
        }
        d.deserialize_map(V)
    }
}

#[derive(Deserialize)]
struct TableDocIn {
    space_id: String,
    #[serde(default)]
    space: Option<SpaceDescriptor>,
    tasks: Vec<TaskSpec>,
    records: RecordList,
}

#[derive(Serialize)]
struct TableDocOut<'a> {
    space_id: &'a str,
    space: &'a SpaceDescriptor,
    tasks: &'a [TaskSpec],
    records: BTreeMap<&'a str, BTreeMap<&'a str, f64>>,
}

/// Architecture key → per-task raw metric values.
#[derive(Clone, Debug)]
pub struct BenchmarkTable {
    space: SpaceDescriptor,
    tasks: Vec<TaskSpec>,
    /// Values aligned with `tasks`.
    records: BTreeMap<ArchKey, Vec<f64>>,
    complete: bool,
}

impl BenchmarkTable {
    /// Builds a table, checking every key and value.
    pub fn new(
        space: SpaceDescriptor,
        tasks: Vec<TaskSpec>,
        entries: Vec<(String, BTreeMap<String, f64>)>,
    ) -> Result<Self, BenchError> {
        let mut names = std::collections::BTreeSet::new();
        for t in &tasks {
            if !names.insert(t.name.as_str()) {
                return Err(BenchError::Schema(format!("task `{}` declared twice", t.name)));
            }
        }
        let mut records = BTreeMap::new();
        for (key, values) in entries {
            decode(&key, &space).map_err(|e| BenchError::UndecodableKey {
                key: key.clone(),
                reason: e.to_string(),
            })?;
            let mut row = Vec::with_capacity(tasks.len());
            for t in &tasks {
                let v = *values.get(&t.name).ok_or_else(|| BenchError::MissingTask {
                    key: key.clone(),
                    task: t.name.clone(),
                })?;
                if !v.is_finite() {
                    return Err(BenchError::NonFinite {
                        key: key.clone(),
                        task: t.name.clone(),
                    });
                }
                row.push(v);
            }
            if let Some(extra) = values.keys().find(|k| !names.contains(k.as_str())) {
                return Err(BenchError::Schema(format!(
                    "record `{key}` names undeclared task `{extra}`"
                )));
            }
            if records.insert(ArchKey::from(key.clone()), row).is_some() {
                return Err(BenchError::DuplicateKey(key));
            }
        }
        let complete = space.size_u64() == Some(records.len() as u64);
        Ok(BenchmarkTable {
            space,
            tasks,
            records,
            complete,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, BenchError> {
        let doc: TableDocIn = serde_json::from_str(text).map_err(|e| BenchError::Schema(e.to_string()))?;
        let space = match doc.space {
            Some(s) if s.space_id() == doc.space_id => s,
            Some(s) => {
                return Err(BenchError::Schema(format!(
                    "embedded space `{}` does not match space_id `{}`",
                    s.space_id(),
                    doc.space_id
                )))
            }
            None => builtin(&doc.space_id).ok_or_else(|| {
                BenchError::Schema(format!("unknown space `{}` and no embedded descriptor", doc.space_id))
            })?,
        };
        BenchmarkTable::new(space, doc.tasks, doc.records.0)
    }

    pub fn to_json(&self) -> String {
        let records = self
            .records
            .iter()
            .map(|(k, row)| {
                let vals = self.tasks.iter().zip(row).map(|(t, v)| (t.name.as_str(), *v)).collect();
                (k.as_str(), vals)
            })
            .collect();
        let doc = TableDocOut {
            space_id: self.space.space_id(),
            space: &self.space,
            tasks: &self.tasks,
            records,
        };
        serde_json::to_string(&doc).expect("table serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), BenchError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn space(&self) -> &SpaceDescriptor {
        &self.space
    }

    pub fn tasks(&self) -> &[TaskSpec] {
        &self.tasks
    }

    pub fn task(&self, name: &str) -> Result<&TaskSpec, BenchError> {
        self.tasks
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| BenchError::UnknownTask(name.to_string()))
    }

    fn task_index(&self, name: &str) -> Result<usize, BenchError> {
        self.tasks
            .iter()
            .position(|t| t.name == name)
            .ok_or_else(|| BenchError::UnknownTask(name.to_string()))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn is_complete(&self) -> bool {
        self.complete
    }

    pub fn keys(&self) -> impl Iterator<Item = &ArchKey> {
        self.records.keys()
    }

    /// Raw metric for a key.
    pub fn raw_by_key(&self, key: &str, task: &str) -> Result<f64, BenchError> {
        let t = self.task_index(task)?;
        self.records
            .get(&ArchKey::from(key))
            .map(|row| row[t])
            .ok_or_else(|| BenchError::UnknownArchitecture(key.to_string()))
    }

    /// Raw lookup, `ACC.(a, D)`.
    pub fn evaluate(&self, arch: &Architecture, task: &str) -> Result<f64, BenchError> {
        self.raw_by_key(arch.key().as_str(), task)
    }

    /// Higher-is-better value under the task's direction.
    pub fn normalized(&self, arch: &Architecture, task: &str) -> Result<f64, BenchError> {
        let dir = self.task(task)?.direction;
        Ok(dir.normalize(self.evaluate(arch, task)?))
    }

    pub fn normalized_by_key(&self, key: &str, task: &str) -> Result<f64, BenchError> {
        let dir = self.task(task)?.direction;
        Ok(dir.normalize(self.raw_by_key(key, task)?))
    }

    /// All normalized scores for one task, keyed.
    pub fn column(&self, task: &str) -> Result<Vec<(&ArchKey, f64)>, BenchError> {
        let t = self.task_index(task)?;
        let dir = self.tasks[t].direction;
        Ok(self.records.iter().map(|(k, row)| (k, dir.normalize(row[t]))).collect())
    }

    /// 1 + number of records strictly better; ties share the best rank.
    pub fn model_rank(&self, arch: &Architecture, task: &str) -> Result<usize, BenchError> {
        self.model_rank_by_key(arch.key().as_str(), task)
    }

    pub fn model_rank_by_key(&self, key: &str, task: &str) -> Result<usize, BenchError> {
        if !self.complete {
            return Err(BenchError::PartialTable);
        }
        let own = self.normalized_by_key(key, task)?;
        let better = self.column(task)?.into_iter().filter(|(_, v)| *v > own).count();
        Ok(better + 1)
    }

    /// Best record under the task's direction; ties go to the smaller key.
    pub fn best(&self, task: &str) -> Result<(ArchKey, f64), BenchError> {
        let col = self.column(task)?;
        let (k, v) = col
            .into_iter()
            .fold(None::<(&ArchKey, f64)>, |acc, (k, v)| match acc {
                Some((_, bv)) if bv >= v => acc,
                _ => Some((k, v)),
            })
            .ok_or(BenchError::NotEnoughRecords { k: 1, available: 0 })?;
        Ok((k.clone(), self.task(task)?.direction.denormalize(v)))
    }

    /// The `k` best records by normalized score (ties by key), as an archive.
    pub fn top_k(&self, task: &str, k: usize) -> Result<Archive, BenchError> {
        if k > self.records.len() {
            return Err(BenchError::NotEnoughRecords {
                k,
                available: self.records.len(),
            });
        }
        let mut col = self.column(task)?;
        col.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let entries = col
            .into_iter()
            .take(k)
            .map(|(key, score)| {
                let arch = decode(key.as_str(), &self.space).expect("table keys decode");
                ArchiveEntry {
                    arch,
                    key: key.clone(),
                    score,
                }
            })
            .collect();
        Ok(Archive::from_sorted(task, entries))
    }

    /// Fast lookup index for repeated evaluation.
    pub fn lookup(&self, task: &str) -> Result<TableLookup<'_>, BenchError> {
        let t = self.task_index(task)?;
        let dir = self.tasks[t].direction;
        let map = self
            .records
            .iter()
            .map(|(k, row)| (k.as_str(), dir.normalize(row[t])))
            .collect();
        Ok(TableLookup { map })
    }
}

/// Hash index over one task's normalized scores.
pub struct TableLookup<'a> {
    map: HashMap<&'a str, f64>,
}

impl TableLookup<'_> {
    pub fn normalized(&self, key: &ArchKey) -> Result<f64, BenchError> {
        self.map
            .get(key.as_str())
            .copied()
            .ok_or_else(|| BenchError::UnknownArchitecture(key.to_string()))
    }
}
