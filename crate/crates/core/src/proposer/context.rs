use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::template::{PromptTemplate, Slot, TemplateError};
use super::Message;
use crate::data::{Adapter, Label, Task};

/// A feature shown to the proposer together with its importance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exemplar {
    pub docstring: String,
    pub source: String,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Left,
    Right,
}

/// One decision on the way from the root to a leaf.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathStep {
    pub docstring: String,
    pub threshold: f64,
    pub branch: Branch,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProposalMode {
    F2 {
        /// Highest-importance features, best first.
        top: Vec<Exemplar>,
        /// Uniform sample of the remaining features.
        random: Vec<Exemplar>,
    },
    Did3 {
        /// Root to leaf.
        path: Vec<PathStep>,
        label_summary: String,
        /// Labeled examples already rendered for the adapter.
        samples: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProposalContext {
    pub task: String,
    pub adapter: Adapter,
    pub cheatsheet: String,
    pub iteration: usize,
    pub batch_size: usize,
    pub mode: ProposalMode,
}

impl ProposalContext {
    pub fn mode_name(&self) -> &'static str {
        match self.mode {
            ProposalMode::F2 { .. } => "f2",
            ProposalMode::Did3 { .. } => "did3",
        }
    }
}

/// Exemplar section: empty when there are none, otherwise the top list in
/// descending score order followed by the random list.
pub fn render_exemplars(top: &[Exemplar], random: &[Exemplar]) -> String {
    if top.is_empty() && random.is_empty() {
        return String::new();
    }
    let mut sorted: Vec<&Exemplar> = top.iter().collect();
    // stable: equal scores keep their given order
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut out = String::from("Existing features and their importance scores:\n");
    for ex in sorted.into_iter().chain(random) {
        let _ = write!(out, "\nScore {:.3}", ex.score);
        if !ex.docstring.is_empty() {
            let _ = write!(out, " - {}", ex.docstring);
        }
        let _ = write!(out, "\n```python\n{}\n```\n", ex.source.trim_end());
    }
    out
}

pub fn render_path(path: &[PathStep]) -> String {
    if path.is_empty() {
        return "no constraints yet".to_string();
    }
    path.iter()
        .map(|s| match s.branch {
            Branch::Left => format!("{} < {} → left", s.docstring, s.threshold),
            Branch::Right => format!("{} >= {} → right", s.docstring, s.threshold),
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Size and label distribution of a set of examples.
pub fn label_summary(labels: &[&Label], task: Task, classes: &[String]) -> String {
    let n = labels.len();
    match task {
        Task::Classification => {
            let counts: Vec<String> = classes
                .iter()
                .map(|c| {
                    let k = labels.iter().filter(|l| matches!(l, Label::Class(s) if s == c)).count();
                    format!("{c}: {k}")
                })
                .collect();
            format!("{n} examples; class counts {}", counts.join(", "))
        }
        Task::Regression => {
            let ys: Vec<f64> = labels
                .iter()
                .filter_map(|l| match l {
                    Label::Numeric(v) => Some(*v),
                    Label::Class(_) => None,
                })
                .collect();
            if ys.is_empty() {
                return "0 examples".to_string();
            }
            let mean = ys.iter().sum::<f64>() / ys.len() as f64;
            let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / ys.len() as f64;
            let min = ys.iter().copied().fold(f64::INFINITY, f64::min);
            let max = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            format!(
                "{n} examples; label mean {mean:.4}, std {:.4}, min {min:.4}, max {max:.4}",
                var.sqrt()
            )
        }
    }
}

fn to_messages(template: &PromptTemplate, slots: &[(Slot, &str)]) -> Vec<Message> {
    let mut messages = Vec::new();
    if let Some(system) = &template.system {
        messages.push(Message::system(system.render(slots)));
    }
    messages.push(Message::user(template.user.render(slots)));
    messages
}

pub fn build_f2_prompt(ctx: &ProposalContext, template: &PromptTemplate) -> Result<Vec<Message>, TemplateError> {
    let ProposalMode::F2 { top, random } = &ctx.mode else {
        return Err(TemplateError::WrongMode { expected: "f2" });
    };
    template.require(&[Slot::Task, Slot::Cheatsheet, Slot::Exemplars, Slot::BatchSize])?;
    let exemplars = render_exemplars(top, random);
    let batch = ctx.batch_size.to_string();
    Ok(to_messages(
        template,
        &[
            (Slot::Task, &ctx.task),
            (Slot::Cheatsheet, &ctx.cheatsheet),
            (Slot::Exemplars, &exemplars),
            (Slot::BatchSize, &batch),
        ],
    ))
}

pub fn build_did3_prompt(ctx: &ProposalContext, template: &PromptTemplate) -> Result<Vec<Message>, TemplateError> {
    let ProposalMode::Did3 {
        path,
        label_summary,
        samples,
    } = &ctx.mode
    else {
        return Err(TemplateError::WrongMode { expected: "did3" });
    };
    template.require(&[Slot::Task, Slot::Cheatsheet, Slot::Path, Slot::Samples])?;
    let path = render_path(path);
    let samples = if samples.is_empty() {
        label_summary.clone()
    } else {
        format!("{label_summary}\n\n{samples}")
    };
    let batch = ctx.batch_size.to_string();
    Ok(to_messages(
        template,
        &[
            (Slot::Task, &ctx.task),
            (Slot::Cheatsheet, &ctx.cheatsheet),
            (Slot::Path, &path),
            (Slot::Samples, &samples),
            (Slot::BatchSize, &batch),
        ],
    ))
}
