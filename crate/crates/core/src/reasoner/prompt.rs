//! Four-part prompt templates and rendering.

use std::path::Path;

use serde::Deserialize;

use super::{Archive, ReasonerError};
use crate::principle::DesignPrinciple;
use crate::space::{Architecture, SpaceDescriptor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PartKind {
    TaskDescription,
    Strategy,
    ExpectedOutput,
    Note,
}

impl PartKind {
    pub fn heading(self) -> &'static str {
        match self {
            PartKind::TaskDescription => "Task description",
            PartKind::Strategy => "Strategy",
            PartKind::ExpectedOutput => "Expected output",
            PartKind::Note => "Note",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PromptBundle {
    pub system: Option<String>,
    pub parts: Vec<(PartKind, String)>,
    pub rendered: String,
}

impl PromptBundle {
    fn new(system: Option<String>, parts: Vec<(PartKind, String)>) -> Self {
        let rendered = parts
            .iter()
            .map(|(k, text)| format!("## {}\n\n{}\n", k.heading(), text.trim_end()))
            .collect::<Vec<_>>()
            .join("\n");
        PromptBundle {
            system,
            parts,
            rendered,
        }
    }
}

/// Text blocks for one space. `{space_id}`, `{task}`, `{count}`,
/// `{num_layers}` and `{schema}` are substituted when rendering.
#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptTemplate {
    pub system: Option<String>,
    pub task_description: Option<String>,
    pub code_snippet: Option<String>,
    pub strategy: Option<String>,
    pub expected_output: Option<String>,
    pub note: Option<String>,
    pub adapt_instruction: Option<String>,
    pub explore_instruction: Option<String>,
}

const NAS201_TEMPLATE: &str = include_str!("../../templates/nas201.toml");
const TRANS101_TEMPLATE: &str = include_str!("../../templates/trans101.toml");
const DARTS_TEMPLATE: &str = include_str!("../../templates/darts.toml");

impl PromptTemplate {
    pub fn from_toml(text: &str) -> Result<Self, ReasonerError> {
        toml::from_str(text).map_err(|e| ReasonerError::TemplateParse(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ReasonerError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Shipped template for a built-in space.
    pub fn builtin(space_id: &str) -> Option<Self> {
        let text = match space_id {
            "nas201" => NAS201_TEMPLATE,
            "trans101" => TRANS101_TEMPLATE,
            "darts" => DARTS_TEMPLATE,
            _ => return None,
        };
        Some(Self::from_toml(text).expect("built-in templates parse"))
    }

    fn required<'a>(field: &'a Option<String>, name: &str) -> Result<&'a str, ReasonerError> {
        match field.as_deref().map(str::trim) {
            Some(t) if !t.is_empty() => Ok(t),
            _ => Err(ReasonerError::TemplateMissing(name.to_string())),
        }
    }
}

struct Vars<'a> {
    space: &'a SpaceDescriptor,
    task: &'a str,
    count: usize,
}

impl Vars<'_> {
    fn fill(&self, text: &str) -> String {
        text.replace("{space_id}", self.space.space_id())
            .replace("{task}", self.task)
            .replace("{count}", &self.count.to_string())
            .replace("{num_layers}", &self.space.num_layers().to_string())
            .replace("{schema}", &schema_skeleton(self.space))
    }
}

/// Token for one layer: the operator, with `~src+src` when it picks sources.
fn token(choice: &crate::space::LayerChoice) -> String {
    if choice.sources.is_empty() {
        choice.op.clone()
    } else {
        let srcs: Vec<&str> = choice.sources.iter().map(|s| s.as_str()).collect();
        format!("{}~{}", choice.op, srcs.join("+"))
    }
}

/// One `Layer_list = [...]` parameter line.
pub fn layer_list(arch: &Architecture, score: Option<f64>) -> String {
    let tokens: Vec<String> = arch.choices.iter().map(token).collect();
    let list = serde_json::to_string(&tokens).expect("strings serialize");
    match score {
        Some(s) => format!("Layer_list = {list}  # score {s:.6}"),
        None => format!("Layer_list = {list}"),
    }
}

fn candidates_block(space: &SpaceDescriptor) -> String {
    let mut out = String::from("Candidates per layer:\n");
    for (i, slot) in space.layers().iter().enumerate() {
        out.push_str(&format!("- layer {i}: ops {}", slot.candidate_ops.join(", ")));
        if slot.has_source_choice() {
            let srcs: Vec<&str> = slot.candidate_sources.iter().map(|s| s.as_str()).collect();
            out.push_str(&format!("; sources {}", srcs.join(", ")));
        }
        out.push('\n');
    }
    out
}

fn schema_skeleton(space: &SpaceDescriptor) -> String {
    let layers: Vec<serde_json::Value> = (0..space.num_layers())
        .map(|_| serde_json::json!({"allowed_ops": "ALL", "allowed_sources": "ALL"}))
        .collect();
    let doc = serde_json::json!({ "per_layer": layers, "rationale": ["..."] });
    format!(
        "```json\n{}\n```",
        serde_json::to_string_pretty(&doc).expect("json serializes")
    )
}

fn archive_lines(archive: &Archive) -> String {
    archive
        .entries()
        .iter()
        .map(|e| layer_list(&e.arch, Some(e.score)))
        .collect::<Vec<_>>()
        .join("\n")
}

fn description(t: &PromptTemplate, v: &Vars) -> Result<String, ReasonerError> {
    let task = PromptTemplate::required(&t.task_description, "task_description")?;
    let code = PromptTemplate::required(&t.code_snippet, "code_snippet")?;
    Ok(format!(
        "{}\n\n```python\n{}\n```\n\n{}",
        v.fill(task),
        v.fill(code),
        candidates_block(v.space)
    ))
}

fn tail(t: &PromptTemplate, v: &Vars, parts: &mut Vec<(PartKind, String)>) -> Result<(), ReasonerError> {
    let expected = PromptTemplate::required(&t.expected_output, "expected_output")?;
    let mut expected = v.fill(expected);
    if !expected.contains("```json") {
        expected = format!("{expected}\n\n{}", schema_skeleton(v.space));
    }
    parts.push((PartKind::ExpectedOutput, expected));
    if let Some(note) = t.note.as_deref().filter(|n| !n.trim().is_empty()) {
        parts.push((PartKind::Note, v.fill(note)));
    }
    Ok(())
}

/// Prompt that asks for principles shared by the archive's architectures.
pub fn build_learning_prompt(
    archive: &Archive,
    space: &SpaceDescriptor,
    template: &PromptTemplate,
) -> Result<PromptBundle, ReasonerError> {
    if archive.is_empty() {
        return Err(ReasonerError::EmptyArchive);
    }
    let v = Vars {
        space,
        task: archive.task(),
        count: archive.len(),
    };
    let desc = description(template, &v)?;
    let strategy = PromptTemplate::required(&template.strategy, "strategy")?;
    let mut parts = vec![
        (
            PartKind::TaskDescription,
            format!(
                "{}\n\nThe {} best architectures on {}, best first:\n\n{}",
                desc,
                archive.len(),
                archive.task(),
                archive_lines(archive)
            ),
        ),
        (PartKind::Strategy, v.fill(strategy)),
    ];
    tail(template, &v, &mut parts)?;
    Ok(PromptBundle::new(template.system.as_ref().map(|s| v.fill(s)), parts))
}

/// Prompt that asks to revise `principle` given the best architectures found
/// on the target task.
pub fn build_adapt_prompt(
    principle: &DesignPrinciple,
    top: &Archive,
    space: &SpaceDescriptor,
    template: &PromptTemplate,
) -> Result<PromptBundle, ReasonerError> {
    if top.is_empty() {
        return Err(ReasonerError::EmptyArchive);
    }
    let v = Vars {
        space,
        task: top.task(),
        count: top.len(),
    };
    let instruction = PromptTemplate::required(&template.adapt_instruction, "adapt_instruction")?;
    let mut parts = vec![
        (
            PartKind::TaskDescription,
            format!(
                "{}\n\nCurrent design principle:\n\n```json\n{}\n```",
                description(template, &v)?,
                principle.to_json()
            ),
        ),
        (
            PartKind::Strategy,
            format!(
                "{}\n\nThe {} best architectures found so far on {}, best first:\n\n{}",
                v.fill(instruction),
                top.len(),
                top.task(),
                archive_lines(top)
            ),
        ),
    ];
    tail(template, &v, &mut parts)?;
    Ok(PromptBundle::new(template.system.as_ref().map(|s| v.fill(s)), parts))
}

/// Prompt that asks for choices the current principle leaves out.
pub fn build_explore_prompt(
    principle: &DesignPrinciple,
    space: &SpaceDescriptor,
    template: &PromptTemplate,
) -> Result<PromptBundle, ReasonerError> {
    let v = Vars {
        space,
        task: &principle.provenance().source_task,
        count: 0,
    };
    let instruction = PromptTemplate::required(&template.explore_instruction, "explore_instruction")?;
    let mut parts = vec![
        (
            PartKind::TaskDescription,
            format!(
                "{}\n\nCurrent design principle:\n\n```json\n{}\n```",
                description(template, &v)?,
                principle.to_json()
            ),
        ),
        (PartKind::Strategy, v.fill(instruction)),
    ];
    tail(template, &v, &mut parts)?;
    Ok(PromptBundle::new(template.system.as_ref().map(|s| v.fill(s)), parts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reasoner::ArchiveEntry;
    use crate::space::builtin;
    use rand::SeedableRng;

    fn archive(space: &SpaceDescriptor, n: usize) -> Archive {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let entries = (0..n)
            .map(|i| ArchiveEntry::new(space.sample_uniform(&mut rng), i as f64))
            .collect();
        Archive::new("jigsaw", entries)
    }

    #[test]
    fn learning_prompt_lists_every_architecture() {
        let space = builtin::trans101();
        let a = archive(&space, 50);
        let p = build_learning_prompt(&a, &space, &PromptTemplate::builtin("trans101").unwrap()).unwrap();
        assert_eq!(
            p.rendered.lines().filter(|l| l.starts_with("Layer_list = ")).count(),
            50
        );
        for kind in [
            PartKind::TaskDescription,
            PartKind::Strategy,
            PartKind::ExpectedOutput,
            PartKind::Note,
        ] {
            assert!(p.rendered.contains(&format!("## {}", kind.heading())), "{kind:?}");
        }
        let order: Vec<PartKind> = p.parts.iter().map(|(k, _)| *k).collect();
        assert_eq!(
            order,
            [
                PartKind::TaskDescription,
                PartKind::Strategy,
                PartKind::ExpectedOutput,
                PartKind::Note
            ]
        );
        assert!(p.rendered.contains("Step 1"));
        assert!(p.rendered.contains("```json"));
        assert!(!p.rendered.contains("{space_id}"));
    }

    #[test]
    fn empty_template_is_missing_parts() {
        let t = PromptTemplate::from_toml("").unwrap();
        let space = builtin::trans101();
        let a = archive(&space, 3);
        assert!(matches!(
            build_learning_prompt(&a, &space, &t),
            Err(ReasonerError::TemplateMissing(f)) if f == "task_description"
        ));
    }

    #[test]
    fn unknown_template_keys_are_rejected() {
        assert!(matches!(
            PromptTemplate::from_toml("stratgy = \"x\""),
            Err(ReasonerError::TemplateParse(_))
        ));
    }

    #[test]
    fn every_builtin_template_renders_all_prompts() {
        for id in builtin::BUILTIN_IDS {
            let space = builtin::builtin(id).unwrap();
            let t = PromptTemplate::builtin(id).unwrap();
            let a = archive(&space, 4);
            let p = crate::principle::DesignPrinciple::all(&space, crate::principle::Provenance::new("jigsaw", "stat"));
            build_learning_prompt(&a, &space, &t).unwrap();
            let adapt = build_adapt_prompt(&p, &a, &space, &t).unwrap();
            assert_eq!(
                adapt
                    .rendered
                    .lines()
                    .filter(|l| l.starts_with("Layer_list = "))
                    .count(),
                4
            );
            build_explore_prompt(&p, &space, &t).unwrap();
        }
    }

    #[test]
    fn darts_lines_carry_sources() {
        let space = builtin::darts();
        let a = archive(&space, 1);
        let line = layer_list(&a.entries()[0].arch, None);
        assert!(line.contains('~'), "{line}");
    }
}
