//! The `lapt` command line.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{eedf, summarize, ReportError, Summary};
use crate::bench::{ingest_csv, synth_generate, BenchError, BenchmarkTable, SynthParams, TaskSpec};
use crate::orchestrator::{learn_stage, run_suite, LaptConfig, LaptError, LaptResult, RunSink};
use crate::principle::{DesignPrinciple, PrincipleError};
use crate::reasoner::{
    LlmConfig, LlmReasoner, PromptTemplate, Reasoner, ReasonerError, StatParams, StatReasoner, TranscriptLog,
};
use crate::space::{builtin, SpaceDescriptor};

#[derive(Debug, Parser)]
#[command(
    name = "lapt",
    version,
    about = "Transferable architecture search with learned design principles"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic benchmark over a built-in space.
    Synth {
        #[arg(long)]
        space: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.0)]
        interaction: f64,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        /// Task correlation in [0, 1].
        #[arg(long, default_value_t = 0.0)]
        correlation: f64,
        #[arg(long, value_delimiter = ',', required = true)]
        tasks: Vec<String>,
        /// Tasks whose metric is minimized.
        #[arg(long, value_delimiter = ',')]
        minimize: Vec<String>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Convert `arch_key,task,value` CSV into a benchmark file.
    Ingest {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        space: String,
        #[arg(long, value_delimiter = ',')]
        minimize: Vec<String>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Learn a principle from a task's top architectures.
    Learn {
        #[arg(long)]
        bench: PathBuf,
        #[arg(long)]
        task: String,
        /// Archive size; defaults to `learn_samples` of the run config.
        #[arg(long)]
        top: Option<usize>,
        #[arg(long, value_enum, default_value_t = Backend::Stat)]
        backend: Backend,
        #[arg(long)]
        keep_m: Option<usize>,
        #[arg(long)]
        keep_s: Option<usize>,
        /// Run config supplying `[stat]`, `[llm]` and `template`.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Search target tasks starting from a learned principle.
    Run {
        #[arg(long)]
        bench: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        tasks: Vec<String>,
        #[arg(long)]
        principle: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// A count `N` (seeds 0..N) or a comma-separated list.
        #[arg(long)]
        seeds: Option<String>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Export the eEDF of a space or of a principle's subspace as CSV.
    Eedf {
        #[arg(long)]
        bench: PathBuf,
        #[arg(long)]
        task: String,
        #[arg(long)]
        principle: Option<PathBuf>,
        #[arg(long)]
        label: Option<String>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Print the model rank of one architecture.
    Rank {
        #[arg(long)]
        bench: PathBuf,
        #[arg(long)]
        task: String,
        #[arg(long)]
        key: String,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Stat,
    Llm,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error(transparent)]
    Principle(#[from] PrincipleError),
    #[error(transparent)]
    Reasoner(#[from] ReasonerError),
    #[error(transparent)]
    Lapt(#[from] LaptError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl CliError {
    /// 2 config or schema, 3 transport, 4 empty subspace, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        fn reasoner(e: &ReasonerError) -> i32 {
            match e {
                ReasonerError::Transport(_) => 3,
                ReasonerError::Principle(p) => principle(p),
                ReasonerError::Io(_) => 1,
                _ => 2,
            }
        }
        fn principle(e: &PrincipleError) -> i32 {
            match e {
                PrincipleError::EmptyLayer(_) | PrincipleError::ArityUnsatisfiable(_) => 4,
                _ => 2,
            }
        }
        match self {
            CliError::Io { .. } => 1,
            CliError::Bench(BenchError::Io(_)) => 1,
            CliError::Principle(p) => principle(p),
            CliError::Reasoner(r) => reasoner(r),
            CliError::Lapt(LaptError::EmptyRefinedSpace { .. }) => 4,
            CliError::Lapt(LaptError::Reasoner(r)) => reasoner(r),
            CliError::Lapt(LaptError::Io(_)) => 1,
            CliError::Report(ReportError::EmptySubspace) => 4,
            CliError::Report(ReportError::Io(_)) => 1,
            _ => 2,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    std::fs::write(path, text).map_err(io_err(path))
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(io_err(path))
}

fn space(id: &str) -> Result<SpaceDescriptor, CliError> {
    builtin::builtin(id).ok_or_else(|| {
        CliError::Config(format!(
            "unknown space `{id}`; built-in spaces are {}",
            builtin::BUILTIN_IDS.join(", ")
        ))
    })
}

/// Run configuration file: `backend`, `template`, and the `[lapt]`,
/// `[lapt.evo]`, `[stat]` and `[llm]` sections.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunFile {
    pub backend: Backend,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<PathBuf>,
    pub lapt: LaptConfig,
    pub stat: StatParams,
    pub llm: LlmConfig,
}

impl RunFile {
    pub fn defaults(space_id: &str) -> Self {
        RunFile {
            backend: Backend::Stat,
            template: None,
            lapt: LaptConfig::for_space(space_id),
            stat: StatParams::default(),
            llm: LlmConfig::default(),
        }
    }

    /// Overlays `text` on the defaults for `space_id`.
    pub fn parse(text: &str, space_id: &str) -> Result<Self, CliError> {
        let user: toml::Table = toml::from_str(text).map_err(|e| CliError::Config(format!("run config: {e}")))?;
        let mut base = toml::Table::try_from(Self::defaults(space_id)).expect("defaults serialize");
        merge(&mut base, user);
        let file: RunFile = base
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(format!("run config: {e}")))?;
        file.lapt.validate()?;
        file.stat_params_ok()?;
        Ok(file)
    }

    pub fn load(path: Option<&Path>, space_id: &str) -> Result<Self, CliError> {
        match path {
            Some(p) => Self::parse(&read(p)?, space_id),
            None => Ok(Self::defaults(space_id)),
        }
    }

    fn stat_params_ok(&self) -> Result<(), CliError> {
        if self.backend == Backend::Llm {
            self.llm.validate()?;
        }
        Ok(())
    }

    fn template(&self, space_id: &str) -> Result<PromptTemplate, CliError> {
        match &self.template {
            Some(p) => Ok(PromptTemplate::load(p)?),
            None => PromptTemplate::builtin(space_id).ok_or_else(|| {
                CliError::Config(format!("no built-in prompt template for `{space_id}`; set `template`"))
            }),
        }
    }

    fn reasoner(
        &self,
        space_id: &str,
        backend: Backend,
        transcripts: Option<TranscriptLog>,
    ) -> Result<Box<dyn Reasoner>, CliError> {
        Ok(match backend {
            Backend::Stat => Box::new(StatReasoner::new(self.stat.clone())),
            Backend::Llm => {
                let r = LlmReasoner::http(self.llm.clone(), self.template(space_id)?)?;
                match transcripts {
                    Some(t) => Box::new(r.with_transcripts(t)),
                    None => Box::new(r),
                }
            }
        })
    }
}

fn merge(base: &mut toml::Table, user: toml::Table) {
    for (k, v) in user {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(u)) => merge(b, u),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn parse_seeds(text: &str) -> Result<Vec<u64>, CliError> {
    let bad = || {
        CliError::Config(format!(
            "--seeds expects a count or a comma-separated list, got `{text}`"
        ))
    };
    if text.contains(',') {
        text.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect()
    } else {
        let n: u64 = text.trim().parse().map_err(|_| bad())?;
        if n == 0 {
            return Err(bad());
        }
        Ok((0..n).collect())
    }
}

#[derive(Serialize)]
struct RunReport<'a> {
    tasks: &'a [String],
    seeds: &'a [u64],
    results: &'a [LaptResult],
    summary: &'a Summary,
}

/// Executes one command; returns the text to print on success.
pub fn execute(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Synth {
            space: id,
            seed,
            interaction,
            noise,
            correlation,
            tasks,
            minimize,
            output,
        } => {
            if let Some(m) = minimize.iter().find(|m| !tasks.contains(m)) {
                return Err(CliError::Config(format!("--minimize names unknown task `{m}`")));
            }
            let specs: Vec<TaskSpec> = tasks
                .iter()
                .map(|t| {
                    if minimize.contains(t) {
                        TaskSpec::minimize(t)
                    } else {
                        TaskSpec::maximize(t)
                    }
                })
                .collect();
            let params = SynthParams::new(seed, interaction, noise).with_task_correlation(correlation);
            let table = synth_generate(&space(&id)?, &params, &specs)?;
            write(&output, &table.to_json())?;
            Ok(format!("wrote {} records to {}", table.len(), output.display()))
        }
        Command::Ingest {
            csv,
            space: id,
            minimize,
            output,
        } => {
            let file = File::open(&csv).map_err(io_err(&csv))?;
            let table = ingest_csv(BufReader::new(file), &space(&id)?, &minimize)?;
            write(&output, &table.to_json())?;
            let full = if table.is_complete() { "complete" } else { "partial" };
            Ok(format!(
                "wrote {} records ({full}) to {}",
                table.len(),
                output.display()
            ))
        }
        Command::Learn {
            bench,
            task,
            top,
            backend,
            keep_m,
            keep_s,
            config,
            output,
        } => {
            let table = BenchmarkTable::load(&bench)?;
            let id = table.space().space_id().to_string();
            let mut file = RunFile::load(config.as_deref(), &id)?;
            if let Some(m) = keep_m {
                file.stat.keep_m = m;
            }
            if keep_s.is_some() {
                file.stat.keep_s = keep_s;
            }
            let top = top.unwrap_or(file.lapt.learn_samples);
            let log = output.parent().map(|d| TranscriptLog::new(d.join("llm")));
            let mut reasoner = file.reasoner(&id, backend, log)?;
            let p = learn_stage(&table, &task, top, &mut reasoner)?;
            let p = p.with_created_at(chrono::Utc::now().to_rfc3339());
            write(&output, &p.to_json())?;
            Ok(format!(
                "wrote principle learned from the top {top} of `{task}` to {}",
                output.display()
            ))
        }
        Command::Run {
            bench,
            tasks,
            principle,
            config,
            seeds,
            output,
        } => {
            let table = BenchmarkTable::load(&bench)?;
            let id = table.space().space_id().to_string();
            let mut file = RunFile::load(config.as_deref(), &id)?;
            if let Some(s) = seeds {
                file.lapt.seeds = parse_seeds(&s)?;
            }
            let p0 = DesignPrinciple::from_json(&read(&principle)?, table.space())?;
            std::fs::create_dir_all(&output).map_err(io_err(&output))?;
            write(
                &output.join("config.toml"),
                &toml::to_string(&file).map_err(|e| CliError::Config(e.to_string()))?,
            )?;
            write(&output.join("principles").join("gen-0.json"), &p0.to_json())?;
            let sink = RunSink::new(&output);
            let log = TranscriptLog::new(output.join("llm"));
            let results = run_suite(
                &table,
                &tasks,
                &p0,
                &file.lapt,
                |_, _| {
                    file.reasoner(&id, file.backend, Some(log.clone()))
                        .map_err(|e| match e {
                            CliError::Reasoner(r) => LaptError::Reasoner(r),
                            CliError::Lapt(l) => l,
                            other => LaptError::Config(other.to_string()),
                        })
                },
                Some(&sink),
            )?;
            let summary = summarize(&results, &table)?;
            let doc = RunReport {
                tasks: &tasks,
                seeds: &file.lapt.seeds,
                results: &results,
                summary: &summary,
            };
            write(
                &output.join("result.json"),
                &serde_json::to_string_pretty(&doc).expect("result serializes"),
            )?;
            let mut lines = vec![format!("{} runs written to {}", results.len(), output.display())];
            for t in &summary.tasks {
                let rank = t
                    .model_rank
                    .as_ref()
                    .map(|r| format!(", rank {:.2} ± {:.2}", r.mean, r.sd))
                    .unwrap_or_default();
                lines.push(format!(
                    "{}: best {:.4} ± {:.4}, unique evaluations {:.1}{rank}",
                    t.task, t.best_raw.mean, t.best_raw.sd, t.unique_evaluations.mean
                ));
            }
            Ok(lines.join("\n"))
        }
        Command::Eedf {
            bench,
            task,
            principle,
            label,
            output,
        } => {
            let table = BenchmarkTable::load(&bench)?;
            let constraints = match &principle {
                Some(path) => {
                    Some(DesignPrinciple::from_json(&read(path)?, table.space())?.to_constraints(table.space())?)
                }
                None => None,
            };
            let label = label.unwrap_or_else(|| if principle.is_some() { "refined" } else { "original" }.into());
            let curve = eedf(&table, &task, constraints.as_ref(), label)?;
            let mut buf = Vec::new();
            curve.write_csv(&mut buf)?;
            write(&output, &String::from_utf8(buf).expect("csv is utf-8"))?;
            Ok(format!(
                "wrote eEDF over {} architectures to {}",
                curve.n(),
                output.display()
            ))
        }
        Command::Rank { bench, task, key } => {
            let table = BenchmarkTable::load(&bench)?;
            let rank = table.model_rank_by_key(&key, &task)?;
            Ok(format!("{rank}"))
        }
    }
}
