use std::fmt;
use std::path::{Path, PathBuf};

use crate::data::Adapter;

#[derive(Debug, thiserror::Error)]
pub enum TemplateError {
    #[error("template has no `{slot}` slot")]
    MissingSlot { slot: String },
    #[error("context is not a {expected} context")]
    WrongMode { expected: &'static str },
    #[error("cannot read template {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Task,
    Cheatsheet,
    Exemplars,
    Path,
    Samples,
    BatchSize,
}

impl Slot {
    const ALL: [Slot; 6] = [
        Slot::Task,
        Slot::Cheatsheet,
        Slot::Exemplars,
        Slot::Path,
        Slot::Samples,
        Slot::BatchSize,
    ];

    fn name(self) -> &'static str {
        match self {
            Slot::Task => "task",
            Slot::Cheatsheet => "cheatsheet",
            Slot::Exemplars => "exemplars",
            Slot::Path => "path",
            Slot::Samples => "samples",
            Slot::BatchSize => "batch_size",
        }
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}}}", self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Text(String),
    Slot(Slot),
}

/// Text with `{slot}` placeholders. Braces that do not spell a known slot
/// are kept verbatim, so code samples in templates need no escaping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateText {
    segments: Vec<Segment>,
}

impl TemplateText {
    pub fn parse(text: &str) -> Self {
        let mut segments = Vec::new();
        let mut literal = String::new();
        let mut rest = text;
        while let Some(open) = rest.find('{') {
            let after = &rest[open + 1..];
            let slot = after
                .find('}')
                .and_then(|close| Slot::ALL.into_iter().find(|s| s.name() == &after[..close]));
            literal.push_str(&rest[..open]);
            match slot {
                Some(s) => {
                    if !literal.is_empty() {
                        segments.push(Segment::Text(std::mem::take(&mut literal)));
                    }
                    segments.push(Segment::Slot(s));
                    rest = &after[s.name().len() + 1..];
                }
                None => {
                    literal.push('{');
                    rest = after;
                }
            }
        }
        literal.push_str(rest);
        if !literal.is_empty() {
            segments.push(Segment::Text(literal));
        }
        TemplateText { segments }
    }

    fn has(&self, slot: Slot) -> bool {
        self.segments.contains(&Segment::Slot(slot))
    }

    /// Substitutes slots in one pass; values are never re-scanned. Slots
    /// without a value are left as written.
    pub fn render(&self, values: &[(Slot, &str)]) -> String {
        let mut out = String::new();
        for seg in &self.segments {
            match seg {
                Segment::Text(t) => out.push_str(t),
                Segment::Slot(s) => match values.iter().find(|(k, _)| k == s) {
                    Some((_, v)) => out.push_str(v),
                    None => out.push_str(&s.to_string()),
                },
            }
        }
        out
    }
}

/// A prompt template file: an optional system part, a line holding only
/// `---`, then the user part. Without the separator the whole file is the
/// user part.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub system: Option<TemplateText>,
    pub user: TemplateText,
}

impl PromptTemplate {
    pub fn parse(text: &str) -> Self {
        let lines: Vec<&str> = text.split_inclusive('\n').collect();
        match lines.iter().position(|l| l.trim_end() == "---") {
            Some(i) => {
                let system = lines[..i].concat();
                let user = lines[i + 1..].concat();
                PromptTemplate {
                    system: Some(TemplateText::parse(system.trim_end())),
                    user: TemplateText::parse(user.trim_end()),
                }
            }
            None => PromptTemplate {
                system: None,
                user: TemplateText::parse(text.trim_end()),
            },
        }
    }

    pub fn load(path: &Path) -> Result<Self, TemplateError> {
        std::fs::read_to_string(path)
            .map(|t| Self::parse(&t))
            .map_err(|source| TemplateError::Io {
                path: path.to_path_buf(),
                source,
            })
    }

    pub(crate) fn require(&self, slots: &[Slot]) -> Result<(), TemplateError> {
        for &slot in slots {
            let present = self.user.has(slot) || self.system.as_ref().is_some_and(|s| s.has(slot));
            if !present {
                return Err(TemplateError::MissingSlot { slot: slot.to_string() });
            }
        }
        Ok(())
    }
}

/// Templates and API cheatsheet for one domain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    pub f2: PromptTemplate,
    pub did3: PromptTemplate,
    pub cheatsheet: String,
}

macro_rules! builtin {
    ($domain:literal) => {
        (
            include_str!(concat!("../../templates/", $domain, "/f2.txt")),
            include_str!(concat!("../../templates/", $domain, "/did3.txt")),
            include_str!(concat!("../../templates/", $domain, "/cheatsheet.txt")),
        )
    };
}

impl PromptSet {
    pub fn builtin(adapter: Adapter) -> Self {
        let (f2, did3, cheatsheet) = match adapter {
            Adapter::Chess => builtin!("chess"),
            Adapter::Text => builtin!("text"),
            Adapter::Image => builtin!("image"),
            Adapter::Tabular => builtin!("tabular"),
        };
        PromptSet {
            f2: PromptTemplate::parse(f2),
            did3: PromptTemplate::parse(did3),
            cheatsheet: cheatsheet.trim_end().to_string(),
        }
    }

    /// Reads `f2.txt`, `did3.txt` and `cheatsheet.txt` from `dir`; files that
    /// are absent fall back to the built-in ones for `adapter`.
    pub fn from_dir(dir: &Path, adapter: Adapter) -> Result<Self, TemplateError> {
        let mut set = Self::builtin(adapter);
        let f2 = dir.join("f2.txt");
        if f2.exists() {
            set.f2 = PromptTemplate::load(&f2)?;
        }
        let did3 = dir.join("did3.txt");
        if did3.exists() {
            set.did3 = PromptTemplate::load(&did3)?;
        }
        let cheatsheet = dir.join("cheatsheet.txt");
        if cheatsheet.exists() {
            set.cheatsheet = std::fs::read_to_string(&cheatsheet)
                .map_err(|source| TemplateError::Io {
                    path: cheatsheet.clone(),
                    source,
                })?
                .trim_end()
                .to_string();
        }
        Ok(set)
    }
}
