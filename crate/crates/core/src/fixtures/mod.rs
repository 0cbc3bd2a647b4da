//! Built-in features and synthetic tasks.
//!
//! The registry backs the native executor and the scripted proposer, so every
//! trainer can run end to end without a feature runtime or a language model.
//! Names may carry a parameter after a colon, e.g. `field:a` or `sleep:3000`.

mod synthetic;

pub use synthetic::{make_synthetic_task, SyntheticKind, SyntheticTask};

use std::time::Duration;

use serde::Serialize;

use crate::chess::{Color, Position};
use crate::data::{Adapter, Example, Payload};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FixtureError {
    #[error("no built-in feature named `{0}`")]
    UnknownName(String),
    #[error("built-in feature `{name}` applies to {expected} payloads, not {got}")]
    WrongAdapter {
        name: String,
        expected: Adapter,
        got: Adapter,
    },
    #[error("`{name}`: {message}")]
    Runtime { name: String, message: String },
    #[error("synthetic tasks need at least 4 examples, got {0}")]
    TooSmall(usize),
}

#[derive(Debug, Clone, PartialEq)]
enum Rule {
    MaterialDifference,
    WhiteToMove,
    ParenthesizedFraction,
    CurlyQuoteFraction,
    InkFraction,
    Field(String),
    FieldRatio(String, String),
    Constant(f64),
    Throw,
    Sleep(Duration),
    Overflow,
    NotANumber,
}

/// A registry entry resolved from its name.
#[derive(Debug, Clone, PartialEq)]
pub struct FixtureFeature {
    pub name: String,
    /// `None` for fault-injection fixtures that accept any payload.
    pub adapter: Option<Adapter>,
    pub docstring: String,
    rule: Rule,
}

/// Listing row exported for authors of fixture scripts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegistryEntry {
    pub name: &'static str,
    pub adapter: Option<Adapter>,
    pub docstring: &'static str,
}

const LISTING: &[RegistryEntry] = &[
    RegistryEntry {
        name: "material_difference",
        adapter: Some(Adapter::Chess),
        docstring: "Material of white minus material of black (pawn 1, knight 3, bishop 3, rook 5, queen 9).",
    },
    RegistryEntry {
        name: "white_to_move",
        adapter: Some(Adapter::Chess),
        docstring: "1 if white is to move, else 0.",
    },
    RegistryEntry {
        name: "fraction_chars_in_parentheses",
        adapter: Some(Adapter::Text),
        docstring: "Proportion of characters strictly inside matched parentheses.",
    },
    RegistryEntry {
        name: "curly_quote_fraction",
        adapter: Some(Adapter::Text),
        docstring: "Fraction of quotation marks that are curly rather than plain ASCII.",
    },
    RegistryEntry {
        name: "ink_fraction",
        adapter: Some(Adapter::Image),
        docstring: "Share of pixel intensities above 0.5.",
    },
    RegistryEntry {
        name: "field:<name>",
        adapter: Some(Adapter::Tabular),
        docstring: "Value of the named tabular field.",
    },
    RegistryEntry {
        name: "field_ratio:<numerator>/<denominator>",
        adapter: Some(Adapter::Tabular),
        docstring: "Ratio of two tabular fields; fails when the denominator is 0.",
    },
    RegistryEntry {
        name: "constant:<value>",
        adapter: None,
        docstring: "Always returns the given value.",
    },
    RegistryEntry {
        name: "throw",
        adapter: None,
        docstring: "Always raises a runtime error.",
    },
    RegistryEntry {
        name: "sleep:<milliseconds>",
        adapter: None,
        docstring: "Sleeps for the given time, then returns 0.",
    },
    RegistryEntry {
        name: "overflow",
        adapter: None,
        docstring: "Returns 1e308 * 1e308.",
    },
    RegistryEntry {
        name: "nan",
        adapter: None,
        docstring: "Returns NaN.",
    },
];

pub fn registry_listing() -> &'static [RegistryEntry] {
    LISTING
}

/// Registry listing as pretty JSON.
pub fn registry_listing_json() -> String {
    serde_json::to_string_pretty(LISTING).expect("static listing serializes")
}

fn doc_of(pattern: &str) -> String {
    LISTING
        .iter()
        .find(|e| e.name == pattern)
        .map(|e| e.docstring.to_string())
        .unwrap_or_default()
}

pub fn resolve(name: &str) -> Result<FixtureFeature, FixtureError> {
    let unknown = || FixtureError::UnknownName(name.to_string());
    let (head, param) = match name.split_once(':') {
        Some((h, p)) => (h, Some(p)),
        None => (name, None),
    };
    let (adapter, rule, docstring) = match (head, param) {
        ("material_difference", None) => (Some(Adapter::Chess), Rule::MaterialDifference, doc_of(head)),
        ("white_to_move", None) => (Some(Adapter::Chess), Rule::WhiteToMove, doc_of(head)),
        ("fraction_chars_in_parentheses", None) => (Some(Adapter::Text), Rule::ParenthesizedFraction, doc_of(head)),
        ("curly_quote_fraction", None) => (Some(Adapter::Text), Rule::CurlyQuoteFraction, doc_of(head)),
        ("ink_fraction", None) => (Some(Adapter::Image), Rule::InkFraction, doc_of(head)),
        ("field", Some(field)) if !field.is_empty() => (
            Some(Adapter::Tabular),
            Rule::Field(field.to_string()),
            format!("Value of the tabular field `{field}`."),
        ),
        ("field_ratio", Some(spec)) => {
            let (num, den) = spec.split_once('/').ok_or_else(unknown)?;
            if num.is_empty() || den.is_empty() {
                return Err(unknown());
            }
            (
                Some(Adapter::Tabular),
                Rule::FieldRatio(num.to_string(), den.to_string()),
                format!("Ratio of tabular fields `{num}` / `{den}`."),
            )
        }
        ("constant", Some(v)) => {
            let v: f64 = v.parse().map_err(|_| unknown())?;
            (None, Rule::Constant(v), format!("Constant {v}."))
        }
        ("throw", None) => (None, Rule::Throw, doc_of(head)),
        ("sleep", Some(ms)) => {
            let ms: u64 = ms.parse().map_err(|_| unknown())?;
            (None, Rule::Sleep(Duration::from_millis(ms)), format!("Sleeps {ms} ms, then returns 0."))
        }
        ("overflow", None) => (None, Rule::Overflow, doc_of(head)),
        ("nan", None) => (None, Rule::NotANumber, doc_of(head)),
        _ => return Err(unknown()),
    };
    Ok(FixtureFeature {
        name: name.to_string(),
        adapter,
        docstring,
        rule,
    })
}

/// Source text under which a registry feature travels through proposers and
/// executors.
pub fn native_source(name: &str) -> Result<String, FixtureError> {
    let feature = resolve(name)?;
    Ok(format!("# {}\nnative:{}", feature.docstring, feature.name))
}

/// Extracts the registry name from source text produced by [`native_source`].
pub fn native_name(source: &str) -> Option<&str> {
    source
        .lines()
        .map(str::trim)
        .find_map(|l| l.strip_prefix("native:"))
        .map(str::trim)
}

/// Characters strictly inside matched parentheses (delimiters excluded,
/// unmatched parentheses ignored), over all characters.
pub fn fraction_chars_in_parentheses(text: &str) -> f64 {
    let chars: Vec<char> = text.chars().collect();
    if chars.is_empty() {
        return 0.0;
    }
    // depth change at each index from matched pairs only
    let mut delta = vec![0i64; chars.len() + 1];
    let mut open = Vec::new();
    for (i, &c) in chars.iter().enumerate() {
        match c {
            '(' => open.push(i),
            ')' => {
                if let Some(start) = open.pop() {
                    delta[start + 1] += 1;
                    delta[i] -= 1;
                }
            }
            _ => {}
        }
    }
    let mut depth = 0i64;
    let mut inside = 0usize;
    for (i, &c) in chars.iter().enumerate() {
        depth += delta[i];
        if depth > 0 && c != '(' && c != ')' {
            inside += 1;
        }
    }
    inside as f64 / chars.len() as f64
}

/// Curly quotes (‘ ’ “ ”) over all quote characters, 0 when there are none.
pub fn curly_quote_fraction(text: &str) -> f64 {
    let (mut curly, mut total) = (0usize, 0usize);
    for c in text.chars() {
        match c {
            '\u{2018}' | '\u{2019}' | '\u{201C}' | '\u{201D}' => {
                curly += 1;
                total += 1;
            }
            '\'' | '"' => total += 1,
            _ => {}
        }
    }
    if total == 0 {
        0.0
    } else {
        curly as f64 / total as f64
    }
}

impl FixtureFeature {
    pub fn eval(&self, payload: &Payload) -> Result<f64, FixtureError> {
        if let Some(expected) = self.adapter {
            if payload.adapter() != expected {
                return Err(FixtureError::WrongAdapter {
                    name: self.name.clone(),
                    expected,
                    got: payload.adapter(),
                });
            }
        }
        let fail = |message: String| FixtureError::Runtime {
            name: self.name.clone(),
            message,
        };
        let field = |name: &str| {
            payload
                .field(name)
                .ok_or_else(|| fail(format!("KeyError: no field `{name}`")))
        };
        match (&self.rule, payload) {
            (Rule::MaterialDifference, Payload::Board(fen)) => Position::from_fen(fen)
                .map(|p| f64::from(p.material_difference()))
                .map_err(|e| fail(e.to_string())),
            (Rule::WhiteToMove, Payload::Board(fen)) => Position::from_fen(fen)
                .map(|p| if p.side_to_move == Color::White { 1.0 } else { 0.0 })
                .map_err(|e| fail(e.to_string())),
            (Rule::ParenthesizedFraction, Payload::Text(t)) => Ok(fraction_chars_in_parentheses(t)),
            (Rule::CurlyQuoteFraction, Payload::Text(t)) => Ok(curly_quote_fraction(t)),
            (Rule::InkFraction, Payload::Image(grid)) => {
                let ink = grid.pixels().iter().filter(|&&p| p > 0.5).count();
                Ok(ink as f64 / grid.pixels().len() as f64)
            }
            (Rule::Field(name), _) => field(name),
            (Rule::FieldRatio(num, den), _) => {
                let (n, d) = (field(num)?, field(den)?);
                if d == 0.0 {
                    Err(fail("ZeroDivisionError: float division by zero".into()))
                } else {
                    Ok(n / d)
                }
            }
            (Rule::Constant(v), _) => Ok(*v),
            (Rule::Throw, _) => Err(fail("RuntimeError: deliberate failure".into())),
            (Rule::Sleep(d), _) => {
                std::thread::sleep(*d);
                Ok(0.0)
            }
            (Rule::Overflow, _) => Ok(std::hint::black_box(1e308f64) * std::hint::black_box(1e308f64)),
            (Rule::NotANumber, _) => Ok(f64::NAN),
            _ => unreachable!("adapter checked above"),
        }
    }
}

/// Evaluates the registry feature `name` on one example.
pub fn fixture_eval(name: &str, example: &Example) -> Result<f64, FixtureError> {
    resolve(name)?.eval(&example.payload)
}
