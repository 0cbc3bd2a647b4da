use std::path::Path;

use serde::Deserialize;

use super::{parse_feature_sources, FeatureCandidate, Message, ProposalContext, Proposer, ProposerError};
use crate::fixtures;

/// Per-iteration lists of registry feature names.
///
/// On disk a script is either a JSON list used for both trainers,
/// `[["field:a"], [], ["field:b", "throw"]]`, or an object with separate
/// lists, `{"f2": [...], "did3": [...], "cycle": false}`. With `cycle` the
/// lists repeat; otherwise iterations past the end propose nothing.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Script {
    pub f2: Vec<Vec<String>>,
    pub did3: Vec<Vec<String>>,
    pub cycle: bool,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ScriptFile {
    Both(Vec<Vec<String>>),
    Split {
        #[serde(default)]
        f2: Vec<Vec<String>>,
        #[serde(default)]
        did3: Vec<Vec<String>>,
        #[serde(default)]
        cycle: bool,
    },
}

impl Script {
    pub fn uniform(entries: Vec<Vec<String>>) -> Self {
        Script {
            f2: entries.clone(),
            did3: entries,
            cycle: false,
        }
    }

    /// Offers `names[i % len]` alone at iteration `i`.
    pub fn cycling(names: &[&str]) -> Self {
        let entries: Vec<Vec<String>> = names.iter().map(|n| vec![n.to_string()]).collect();
        Script {
            cycle: true,
            ..Script::uniform(entries)
        }
    }

    pub fn parse(json: &str) -> Result<Self, ProposerError> {
        let file: ScriptFile = serde_json::from_str(json).map_err(|e| ProposerError::Script(e.to_string()))?;
        let script = match file {
            ScriptFile::Both(entries) => Script::uniform(entries),
            ScriptFile::Split { f2, did3, cycle } => Script { f2, did3, cycle },
        };
        script.check()?;
        Ok(script)
    }

    pub fn load(path: &Path) -> Result<Self, ProposerError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ProposerError::Script(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn check(&self) -> Result<(), ProposerError> {
        for name in self.f2.iter().chain(&self.did3).flatten() {
            fixtures::resolve(name).map_err(|e| ProposerError::Script(e.to_string()))?;
        }
        Ok(())
    }

    pub fn entry(&self, mode: &str, iteration: usize) -> &[String] {
        let list = if mode == "f2" { &self.f2 } else { &self.did3 };
        if list.is_empty() {
            return &[];
        }
        let i = if self.cycle { iteration % list.len() } else { iteration };
        list.get(i).map_or(&[], Vec::as_slice)
    }
}

/// A response text holding one fenced block per registry feature, as a
/// language model would write it.
pub fn render_candidates(names: &[String]) -> Result<String, ProposerError> {
    let mut out = String::from("Proposed features:\n");
    for name in names {
        let source = fixtures::native_source(name).map_err(|e| ProposerError::Script(e.to_string()))?;
        out.push_str("\n```python\n");
        out.push_str(&source);
        out.push_str("\n```\n");
    }
    Ok(out)
}

/// Deterministic proposer backed by the native feature registry.
#[derive(Debug, Clone, Default)]
pub struct ScriptedProposer {
    script: Script,
    calls: usize,
}

impl ScriptedProposer {
    pub fn new(script: Script) -> Self {
        ScriptedProposer { script, calls: 0 }
    }

    pub fn calls(&self) -> usize {
        self.calls
    }
}

impl Proposer for ScriptedProposer {
    fn propose(
        &mut self,
        ctx: &ProposalContext,
        _messages: &[Message],
        batch_size: usize,
    ) -> Result<Vec<FeatureCandidate>, ProposerError> {
        self.calls += 1;
        let names = self.script.entry(ctx.mode_name(), ctx.iteration);
        let response = render_candidates(names)?;
        let mut candidates = parse_feature_sources(&response);
        if candidates.is_empty() {
            log::info!("script has no entry for {} iteration {}", ctx.mode_name(), ctx.iteration);
        }
        candidates.truncate(batch_size);
        Ok(candidates)
    }
}
