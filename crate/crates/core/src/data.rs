//! Datasets, payloads and prompt rendering of examples.
//!
//! Datasets are line-delimited JSON: one `{"x": <payload>, "y": <label>}`
//! record per line. The payload encoding depends on the adapter:
//!
//! | adapter   | `x`                                        |
//! |-----------|--------------------------------------------|
//! | `chess`   | FEN string                                 |
//! | `text`    | string                                     |
//! | `image`   | `{"width": W, "pixels": [..]}` row-major   |
//! | `tabular` | object of named numbers (order preserved)  |

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::chess::Position;
use crate::tree::Targets;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("line {line}: label/task mismatch (task is {task})")]
    LabelTaskMismatch { line: usize, task: Task },
    #[error("line {line}: class `{symbol}` is not in the label alphabet")]
    UnknownClass { line: usize, symbol: String },
    #[error("unknown adapter `{0}` (expected chess, text, image or tabular)")]
    UnknownAdapter(String),
    #[error("holdout fraction {0} must lie strictly between 0 and 1")]
    InvalidFraction(f64),
    #[error("holdout of {fraction} over {n} examples leaves an empty part")]
    DegenerateSplit { fraction: f64, n: usize },
    #[error("unknown example id {0}")]
    UnknownExample(usize),
    #[error("{0}")]
    Inconsistent(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Adapter {
    Chess,
    Text,
    Image,
    Tabular,
}

impl Adapter {
    pub const ALL: [Adapter; 4] = [Adapter::Chess, Adapter::Text, Adapter::Image, Adapter::Tabular];

    pub fn name(self) -> &'static str {
        match self {
            Adapter::Chess => "chess",
            Adapter::Text => "text",
            Adapter::Image => "image",
            Adapter::Tabular => "tabular",
        }
    }

    /// Whether raw payloads may be shown to a proposer.
    pub fn renders_payloads(self) -> bool {
        !matches!(self, Adapter::Image)
    }
}

impl fmt::Display for Adapter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Adapter {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Adapter::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| DataError::UnknownAdapter(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Regression,
    Classification,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Regression => "regression",
            Task::Classification => "classification",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Label {
    Numeric(f64),
    Class(String),
}

impl Label {
    pub fn task(&self) -> Task {
        match self {
            Label::Numeric(_) => Task::Regression,
            Label::Class(_) => Task::Classification,
        }
    }

    fn to_json(&self) -> Value {
        match self {
            Label::Numeric(v) => Value::from(*v),
            Label::Class(s) => Value::String(s.clone()),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Numeric(v) => write!(f, "{v}"),
            Label::Class(s) => f.write_str(s),
        }
    }
}

/// Grayscale image, row-major, intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl ImageGrid {
    pub fn new(width: usize, pixels: Vec<f64>) -> Result<Self, String> {
        if width == 0 {
            return Err("image width must be positive".into());
        }
        if pixels.is_empty() || pixels.len() % width != 0 {
            return Err(format!(
                "{} intensities do not form rows of width {width}",
                pixels.len()
            ));
        }
        if let Some(bad) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(format!("intensity {bad} outside [0, 1]"));
        }
        let height = pixels.len() / width;
        Ok(ImageGrid {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Board(String),
    Text(String),
    Image(ImageGrid),
    Tabular(Vec<(String, f64)>),
}

impl Payload {
    pub fn adapter(&self) -> Adapter {
        match self {
            Payload::Board(_) => Adapter::Chess,
            Payload::Text(_) => Adapter::Text,
            Payload::Image(_) => Adapter::Image,
            Payload::Tabular(_) => Adapter::Tabular,
        }
    }

    /// Decodes the `x` value of a record under `adapter`, enforcing the
    /// adapter's payload invariants.
    pub fn from_json(adapter: Adapter, value: &Value) -> Result<Payload, String> {
        match adapter {
            Adapter::Chess => {
                let fen = value.as_str().ok_or("chess payload must be a FEN string")?;
                Position::from_fen(fen).map_err(|e| e.to_string())?;
                Ok(Payload::Board(fen.to_string()))
            }
            Adapter::Text => value
                .as_str()
                .map(|s| Payload::Text(s.to_string()))
                .ok_or_else(|| "text payload must be a string".into()),
            Adapter::Image => {
                let obj = value
                    .as_object()
                    .ok_or("image payload must be an object with width and pixels")?;
                let width = obj
                    .get("width")
                    .and_then(Value::as_u64)
                    .ok_or("image payload needs an integer `width`")?;
                let pixels = obj
                    .get("pixels")
                    .and_then(Value::as_array)
                    .ok_or("image payload needs a `pixels` array")?
                    .iter()
                    .map(|v| v.as_f64().ok_or("pixel intensities must be numbers"))
                    .collect::<Result<Vec<_>, _>>()?;
                ImageGrid::new(width as usize, pixels).map(Payload::Image)
            }
            Adapter::Tabular => {
                let obj = value
                    .as_object()
                    .ok_or("tabular payload must be an object of numbers")?;
                obj.iter()
                    .map(|(k, v)| match v.as_f64() {
                        Some(x) if x.is_finite() => Ok((k.clone(), x)),
                        _ => Err(format!("field `{k}` is not a finite number")),
                    })
                    .collect::<Result<Vec<_>, _>>()
                    .map(Payload::Tabular)
            }
        }
    }

    pub fn to_json(&self) -> Value {
        match self {
            Payload::Board(s) | Payload::Text(s) => Value::String(s.clone()),
            Payload::Image(grid) => {
                let mut obj = Map::new();
                obj.insert("width".into(), Value::from(grid.width as u64));
                obj.insert(
                    "pixels".into(),
                    Value::Array(grid.pixels.iter().map(|&p| Value::from(p)).collect()),
                );
                Value::Object(obj)
            }
            Payload::Tabular(fields) => Value::Object(
                fields
                    .iter()
                    .map(|(k, v)| (k.clone(), Value::from(*v)))
                    .collect(),
            ),
        }
    }

    /// Named numeric field of a tabular payload.
    pub fn field(&self, name: &str) -> Option<f64> {
        match self {
            Payload::Tabular(fields) => fields.iter().find(|(k, _)| k == name).map(|(_, v)| *v),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    /// Ordinal of the record in the file it came from; survives splits.
    pub id: usize,
    pub payload: Payload,
}

/// How to interpret a `.jsonl` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub adapter: Adapter,
    pub task: Task,
    #[serde(default = "default_label_field")]
    pub label_field: String,
    /// Declared class alphabet. When absent it is the sorted set of symbols
    /// present in the file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<Vec<String>>,
}

fn default_label_field() -> String {
    "y".to_string()
}

impl DatasetSchema {
    pub fn new(adapter: Adapter, task: Task) -> Self {
        DatasetSchema {
            adapter,
            task,
            label_field: default_label_field(),
            classes: None,
        }
    }

    pub fn with_classes(mut self, classes: Vec<String>) -> Self {
        self.classes = Some(classes);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    adapter: Adapter,
    task: Task,
    label_field: String,
    classes: Vec<String>,
    examples: Vec<Example>,
    labels: Vec<Label>,
}

impl Dataset {
    /// Builds a dataset from parallel examples and labels. `classes` fixes the
    /// label alphabet for classification; `None` derives it from the labels.
    pub fn new(
        adapter: Adapter,
        task: Task,
        examples: Vec<Example>,
        labels: Vec<Label>,
        classes: Option<Vec<String>>,
    ) -> Result<Self, DataError> {
        if examples.len() != labels.len() {
            return Err(DataError::Inconsistent(format!(
                "{} examples but {} labels",
                examples.len(),
                labels.len()
            )));
        }
        for (i, (ex, label)) in examples.iter().zip(&labels).enumerate() {
            if ex.payload.adapter() != adapter {
                return Err(DataError::Inconsistent(format!(
                    "example {} has a {} payload in a {} dataset",
                    ex.id,
                    ex.payload.adapter(),
                    adapter
                )));
            }
            check_label(label, task, i + 1)?;
        }
        let classes = match (task, classes) {
            (Task::Regression, _) => Vec::new(),
            (Task::Classification, Some(declared)) => declared,
            (Task::Classification, None) => labels
                .iter()
                .filter_map(|l| match l {
                    Label::Class(s) => Some(s.clone()),
                    Label::Numeric(_) => None,
                })
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect(),
        };
        for (i, label) in labels.iter().enumerate() {
            if let Label::Class(s) = label {
                if !classes.contains(s) {
                    return Err(DataError::UnknownClass {
                        line: i + 1,
                        symbol: s.clone(),
                    });
                }
            }
        }
        Ok(Dataset {
            adapter,
            task,
            label_field: default_label_field(),
            classes,
            examples,
            labels,
        })
    }

    pub fn adapter(&self) -> Adapter {
        self.adapter
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn schema(&self) -> DatasetSchema {
        DatasetSchema {
            adapter: self.adapter,
            task: self.task,
            label_field: self.label_field.clone(),
            classes: match self.task {
                Task::Classification => Some(self.classes.clone()),
                Task::Regression => None,
            },
        }
    }

    pub fn example_ids(&self) -> Vec<usize> {
        self.examples.iter().map(|e| e.id).collect()
    }

    /// Class index in the alphabet, or `None` for numeric labels.
    pub fn class_index(&self, label: &Label) -> Option<usize> {
        match label {
            Label::Class(s) => self.classes.iter().position(|c| c == s),
            Label::Numeric(_) => None,
        }
    }

    /// Labels in the numeric form the tree engine consumes.
    pub fn targets(&self) -> Targets {
        match self.task {
            Task::Regression => Targets::Regression(
                self.labels
                    .iter()
                    .map(|l| match l {
                        Label::Numeric(v) => *v,
                        Label::Class(_) => unreachable!("validated at construction"),
                    })
                    .collect(),
            ),
            Task::Classification => Targets::Classification {
                labels: self
                    .labels
                    .iter()
                    .map(|l| self.class_index(l).expect("validated at construction"))
                    .collect(),
                n_classes: self.classes.len(),
            },
        }
    }

    /// Keeps the examples at the given positions, in that order.
    pub fn subset(&self, positions: &[usize]) -> Dataset {
        Dataset {
            adapter: self.adapter,
            task: self.task,
            label_field: self.label_field.clone(),
            classes: self.classes.clone(),
            examples: positions.iter().map(|&p| self.examples[p].clone()).collect(),
            labels: positions.iter().map(|&p| self.labels[p].clone()).collect(),
        }
    }

    /// Writes the canonical `.jsonl` form; `load_dataset` of the output
    /// yields an equal dataset.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (ex, label) in self.examples.iter().zip(&self.labels) {
            let mut record = Map::new();
            record.insert("x".into(), ex.payload.to_json());
            record.insert(self.label_field.clone(), label.to_json());
            serde_json::to_writer(&mut out, &Value::Object(record))?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

fn check_label(label: &Label, task: Task, line: usize) -> Result<(), DataError> {
    match label {
        Label::Numeric(v) if task == Task::Regression => {
            if v.is_finite() {
                Ok(())
            } else {
                Err(DataError::MalformedRecord {
                    line,
                    reason: "numeric label is not finite".into(),
                })
            }
        }
        Label::Class(_) if task == Task::Classification => Ok(()),
        _ => Err(DataError::LabelTaskMismatch { line, task }),
    }
}

/// Reads a `.jsonl` dataset from any buffered reader.
pub fn parse_jsonl<R: BufRead>(reader: R, schema: &DatasetSchema) -> Result<Dataset, DataError> {
    let mut examples = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| DataError::MalformedRecord {
            line: line_no,
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| DataError::MalformedRecord {
            line: line_no,
            reason,
        };
        let record: Value = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        let x = record
            .get("x")
            .ok_or_else(|| malformed("missing field `x`".into()))?;
        let y = record
            .get(&schema.label_field)
            .ok_or_else(|| malformed(format!("missing label field `{}`", schema.label_field)))?;
        let payload = Payload::from_json(schema.adapter, x).map_err(malformed)?;
        let label = match y {
            Value::Number(n) => Label::Numeric(n.as_f64().unwrap_or(f64::NAN)),
            Value::String(s) => Label::Class(s.clone()),
            other => return Err(malformed(format!("label must be a number or string, got {other}"))),
        };
        check_label(&label, schema.task, line_no)?;
        examples.push(Example {
            id: examples.len(),
            payload,
        });
        labels.push(label);
    }
    let mut dataset = Dataset::new(schema.adapter, schema.task, examples, labels, schema.classes.clone())?;
    dataset.label_field = schema.label_field.clone();
    Ok(dataset)
}

pub fn load_dataset(path: &Path, schema: &DatasetSchema) -> Result<Dataset, DataError> {
    let file = File::open(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_jsonl(BufReader::new(file), schema)
}

/// Splits off a random holdout of `round(fraction * n)` examples. Both parts
/// keep the original example ids, in file order.
pub fn split_holdout(d: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset), DataError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(DataError::InvalidFraction(fraction));
    }
    let n = d.len();
    let holdout_len = (fraction * n as f64).round() as usize;
    if (fraction * n as f64) < 1.0 || holdout_len == 0 || holdout_len >= n {
        return Err(DataError::DegenerateSplit { fraction, n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_holdout = vec![false; n];
    for p in rand::seq::index::sample(&mut rng, n, holdout_len) {
        in_holdout[p] = true;
    }
    let (holdout, train): (Vec<usize>, Vec<usize>) = (0..n).partition(|&p| in_holdout[p]);
    Ok((d.subset(&train), d.subset(&holdout)))
}

fn render_example(example: &Example, label: &Label) -> String {
    match &example.payload {
        Payload::Board(fen) => format!("Board (FEN): {fen}\nLabel: {label}\n"),
        Payload::Text(text) => format!("Text:\n{text}\nLabel: {label}\n"),
        Payload::Tabular(fields) => {
            let fields = fields
                .iter()
                .map(|(k, v)| format!("{k}={v}"))
                .collect::<Vec<_>>()
                .join(", ");
            format!("Fields: {fields}\nLabel: {label}\n")
        }
        // Pixels are never shown; only the class description.
        Payload::Image(_) => format!("Label: {label}\n"),
    }
}

/// Renders labeled examples for a proposer prompt, stopping before the first
/// example that would push the text past `budget` characters.
pub fn render_examples_for_prompt(d: &Dataset, ids: &[usize], budget: usize) -> Result<String, DataError> {
    let positions: HashMap<usize, usize> = d
        .examples
        .iter()
        .enumerate()
        .map(|(pos, ex)| (ex.id, pos))
        .collect();
    let mut out = String::new();
    let mut used = 0usize;
    for id in ids {
        let &pos = positions.get(id).ok_or(DataError::UnknownExample(*id))?;
        let block = render_example(&d.examples[pos], &d.labels[pos]);
        let separator = usize::from(!out.is_empty());
        let cost = separator + block.chars().count();
        if used + cost > budget {
            break;
        }
        if separator == 1 {
            out.push('\n');
        }
        out.push_str(&block);
        used += cost;
    }
    Ok(out)
}

/// Lichess centipawn-to-win-percentage convention:
/// `50 + 50 * (2 / (1 + exp(-0.00368208 * cp)) - 1)`.
pub fn lichess_win_percent(centipawns: f64) -> f64 {
    50.0 + 50.0 * (2.0 / (1.0 + (-0.003_682_08 * centipawns).exp()) - 1.0)
}

/// Reads chess records whose label is a centipawn score and converts it to a
/// win probability in `[0, 1]`.
pub fn load_chess_centipawns(path: &Path, cp_field: &str) -> Result<Dataset, DataError> {
    let schema = DatasetSchema {
        adapter: Adapter::Chess,
        task: Task::Regression,
        label_field: cp_field.to_string(),
        classes: None,
    };
    let raw = load_dataset(path, &schema)?;
    let labels = raw
        .labels
        .iter()
        .map(|l| match l {
            Label::Numeric(cp) => Label::Numeric(lichess_win_percent(*cp) / 100.0),
            Label::Class(_) => unreachable!("regression schema"),
        })
        .collect();
    let mut out = Dataset::new(Adapter::Chess, Task::Regression, raw.examples, labels, None)?;
    out.label_field = default_label_field();
    Ok(out)
}
