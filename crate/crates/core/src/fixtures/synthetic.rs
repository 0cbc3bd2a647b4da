use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::FixtureError;
use crate::data::{Adapter, Dataset, Example, Label, Payload, Task};

const FIELDS: [&str; 4] = ["a", "b", "c", "d"];

/// Tabular tasks over fields `a`..`d` drawn uniformly from (-1, 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticKind {
    /// `"1"` if `a > 0`, else `"0"`.
    Threshold,
    /// `q{2*[a > 0] + [b > 0]}`: four classes.
    Quadrant,
    /// Threshold labels, each flipped with probability 0.1.
    Noisy,
    /// Regression target `a + 0.5 * b`.
    Linear,
}

impl SyntheticKind {
    pub const ALL: [SyntheticKind; 4] = [
        SyntheticKind::Threshold,
        SyntheticKind::Quadrant,
        SyntheticKind::Noisy,
        SyntheticKind::Linear,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SyntheticKind::Threshold => "threshold",
            SyntheticKind::Quadrant => "quadrant",
            SyntheticKind::Noisy => "noisy",
            SyntheticKind::Linear => "linear",
        }
    }

    /// Fields the label depends on.
    pub fn defining_fields(self) -> &'static [&'static str] {
        match self {
            SyntheticKind::Threshold | SyntheticKind::Noisy => &["a"],
            SyntheticKind::Quadrant | SyntheticKind::Linear => &["a", "b"],
        }
    }

    pub fn task(self) -> Task {
        match self {
            SyntheticKind::Linear => Task::Regression,
            _ => Task::Classification,
        }
    }

    fn classes(self) -> Vec<String> {
        match self {
            SyntheticKind::Threshold | SyntheticKind::Noisy => vec!["0".into(), "1".into()],
            SyntheticKind::Quadrant => (0..4).map(|q| format!("q{q}")).collect(),
            SyntheticKind::Linear => Vec::new(),
        }
    }
}

impl fmt::Display for SyntheticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SyntheticKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SyntheticKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown synthetic task `{s}`"))
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub kind: SyntheticKind,
    pub dataset: Dataset,
}

impl SyntheticTask {
    pub fn defining_fields(&self) -> &'static [&'static str] {
        self.kind.defining_fields()
    }
}

fn sign_to(v: f64, positive: bool) -> f64 {
    // uniform draws from (-1, 1) can be exactly 0
    let mag = if v == 0.0 { 0.5 } else { v.abs() };
    if positive {
        mag
    } else {
        -mag
    }
}

/// Generates `n` examples. The first examples cover every class so each one
/// is present whatever `n` is.
pub fn make_synthetic_task(kind: SyntheticKind, n: usize, seed: u64) -> Result<SyntheticTask, FixtureError> {
    if n < 4 {
        return Err(FixtureError::TooSmall(n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_forced = match kind {
        SyntheticKind::Quadrant => 4,
        SyntheticKind::Linear => 0,
        _ => 2,
    };
    let mut examples = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for id in 0..n {
        let mut x: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        if id < n_forced {
            match kind {
                SyntheticKind::Quadrant => {
                    x[0] = sign_to(x[0], id & 2 != 0);
                    x[1] = sign_to(x[1], id & 1 != 0);
                }
                _ => x[0] = sign_to(x[0], id == 1),
            }
        }
        let (a, b) = (x[0], x[1]);
        let label = match kind {
            SyntheticKind::Threshold => Label::Class(if a > 0.0 { "1" } else { "0" }.into()),
            SyntheticKind::Quadrant => {
                Label::Class(format!("q{}", 2 * usize::from(a > 0.0) + usize::from(b > 0.0)))
            }
            SyntheticKind::Noisy => {
                // forced rows stay clean so both classes exist
                let flip = rng.random_bool(0.1) && id >= n_forced;
                Label::Class(if (a > 0.0) != flip { "1" } else { "0" }.into())
            }
            SyntheticKind::Linear => Label::Numeric(a + 0.5 * b),
        };
        let payload = Payload::Tabular(FIELDS.iter().map(|f| f.to_string()).zip(x).collect());
        examples.push(Example { id, payload });
        labels.push(label);
    }
    let classes = match kind.task() {
        Task::Classification => Some(kind.classes()),
        Task::Regression => None,
    };
    let dataset = Dataset::new(Adapter::Tabular, kind.task(), examples, labels, classes)
        .expect("synthetic records are consistent by construction");
    Ok(SyntheticTask { kind, dataset })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field(ex: &Example, name: &str) -> f64 {
        ex.payload.field(name).unwrap()
    }

    #[test]
    fn threshold_labels_follow_a() {
        let t = make_synthetic_task(SyntheticKind::Threshold, 200, 1).unwrap();
        for (ex, label) in t.dataset.examples().iter().zip(t.dataset.labels()) {
            let want = if field(ex, "a") > 0.0 { "1" } else { "0" };
            assert_eq!(label, &Label::Class(want.into()));
        }
    }

    #[test]
    fn quadrant_covers_all_classes_even_when_tiny() {
        let t = make_synthetic_task(SyntheticKind::Quadrant, 4, 9).unwrap();
        let mut seen: Vec<_> = t.dataset.labels().to_vec().into_iter().map(|l| l.to_string()).collect();
        seen.sort();
        assert_eq!(seen, ["q0", "q1", "q2", "q3"]);
    }

    #[test]
    fn noisy_flips_about_a_tenth() {
        let t = make_synthetic_task(SyntheticKind::Noisy, 2000, 3).unwrap();
        let flipped = t
            .dataset
            .examples()
            .iter()
            .zip(t.dataset.labels())
            .filter(|(ex, l)| (field(ex, "a") > 0.0) != (**l == Label::Class("1".into())))
            .count();
        assert!((150..250).contains(&flipped), "flipped {flipped}");
    }

    #[test]
    fn same_seed_same_data() {
        let a = make_synthetic_task(SyntheticKind::Linear, 50, 5).unwrap();
        let b = make_synthetic_task(SyntheticKind::Linear, 50, 5).unwrap();
        assert_eq!(a.dataset.examples(), b.dataset.examples());
        assert_eq!(a.dataset.task(), Task::Regression);
        assert!(make_synthetic_task(SyntheticKind::Linear, 3, 5).is_err());
    }

    #[test]
    fn fields_lie_in_open_interval() {
        let t = make_synthetic_task(SyntheticKind::Quadrant, 300, 2).unwrap();
        for ex in t.dataset.examples() {
            for f in FIELDS {
                let v = field(ex, f);
                assert!(v > -1.0 && v < 1.0);
            }
        }
    }
}
