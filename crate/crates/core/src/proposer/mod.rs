//! Feature proposers: prompt construction, response parsing, and the two
//! backends (an OpenAI-compatible chat endpoint and a fixture script).

mod context;
mod llm;
mod parse;
mod scripted;
mod template;

pub use context::{
    build_did3_prompt, build_f2_prompt, label_summary, render_exemplars, render_path, Branch, Exemplar, PathStep,
    ProposalContext, ProposalMode,
};
pub use llm::{LlmBackend, LlmConfig, API_BASE_ENV, API_KEY_ENV};
pub use parse::parse_feature_sources;
pub use scripted::{render_candidates, Script, ScriptedProposer};
pub use template::{PromptSet, PromptTemplate, Slot, TemplateError, TemplateText};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: String,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Message {
            role: "system".into(),
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Message {
            role: "user".into(),
            content: content.into(),
        }
    }
}

/// A feature parsed out of a proposer response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureCandidate {
    pub source: String,
    pub docstring: String,
    /// Byte range of the fenced block in the response.
    pub span: (usize, usize),
}

#[derive(Debug, thiserror::Error)]
pub enum ProposerError {
    #[error("request failed after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("endpoint answered {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed completion: {0}")]
    MalformedResponse(String),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("script: {0}")]
    Script(String),
}

/// Produces candidate features for one trainer iteration.
pub trait Proposer {
    fn propose(
        &mut self,
        ctx: &ProposalContext,
        messages: &[Message],
        batch_size: usize,
    ) -> Result<Vec<FeatureCandidate>, ProposerError>;
}

impl<P: Proposer + ?Sized> Proposer for Box<P> {
    fn propose(
        &mut self,
        ctx: &ProposalContext,
        messages: &[Message],
        batch_size: usize,
    ) -> Result<Vec<FeatureCandidate>, ProposerError> {
        (**self).propose(ctx, messages, batch_size)
    }
}
