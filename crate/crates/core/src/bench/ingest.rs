use std::collections::BTreeMap;
use std::io::Read;

use super::{BenchError, BenchmarkTable, Direction, TaskSpec};
use crate::space::SpaceDescriptor;

/// Converts `arch_key,task,value` rows into a table.
///
/// Tasks appear in order of first occurrence; tasks listed in `minimize` get
/// the minimize direction, all others maximize.
pub fn ingest_csv<R: Read>(
    reader: R,
    space: &SpaceDescriptor,
    minimize: &[String],
) -> Result<BenchmarkTable, BenchError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let expected = ["arch_key", "task", "value"];
    if headers.len() != 3 || headers.iter().zip(expected).any(|(h, e)| h != e) {
        return Err(BenchError::Schema(format!(
            "csv header must be `arch_key,task,value`, found `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut tasks: Vec<TaskSpec> = Vec::new();
    let mut rows: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let (key, task, value) = (&rec[0], &rec[1], &rec[2]);
        let value: f64 = value
            .parse()
            .map_err(|_| BenchError::Schema(format!("row {}: `{value}` is not a number", line + 2)))?;
        if !tasks.iter().any(|t| t.name == task) {
            let dir = if minimize.iter().any(|m| m == task) {
                Direction::Minimize
            } else {
                Direction::Maximize
            };
            tasks.push(TaskSpec::new(task, "value", dir));
        }
        if rows
            .entry(key.to_string())
            .or_default()
            .insert(task.to_string(), value)
            .is_some()
        {
            return Err(BenchError::DuplicateKey(format!("{key} ({task})")));
        }
    }
    if let Some(m) = minimize.iter().find(|m| !tasks.iter().any(|t| &t.name == *m)) {
        return Err(BenchError::UnknownTask(m.clone()));
    }
    BenchmarkTable::new(space.clone(), tasks, rows.into_iter().collect())
}
