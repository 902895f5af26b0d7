use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textpipe::{Vocabulary, CLS0, PAD, SEP};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Classification { classes: usize },
    Regression,
}

impl TaskKind {
    /// Width of the classifier output.
    pub fn outputs(self) -> usize {
        match self {
            TaskKind::Classification { classes } => classes,
            TaskKind::Regression => 1,
        }
    }

    pub fn classes(self) -> Option<usize> {
        match self {
            TaskKind::Classification { classes } => Some(classes),
            TaskKind::Regression => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    Mcc,
    F1,
    Spearman,
}

/// One or two sentences of token ids with a label (class index or target).
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub id: u64,
    pub sentences: Vec<Vec<u32>>,
    pub label: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub metric: Metric,
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dev.is_empty() {
            return Err(Error::Config("task needs at least one dev example".into()));
        }
        match (self.kind, self.metric) {
            (TaskKind::Classification { classes }, Metric::Accuracy | Metric::Mcc | Metric::F1) => {
                if classes < 2 {
                    return Err(Error::Config(format!("classification needs ≥ 2 classes, got {classes}")));
                }
                if self.metric != Metric::Accuracy && classes != 2 {
                    return Err(Error::Config(format!("{:?} is defined for 2 classes only", self.metric)));
                }
            }
            (TaskKind::Regression, Metric::Spearman) => {}
            (kind, metric) => {
                return Err(Error::Config(format!("metric {metric:?} does not fit task {kind:?}")));
            }
        }
        for ex in self.train.iter().chain(&self.dev) {
            validate_example(self.kind, ex)?;
        }
        Ok(())
    }
}

fn validate_example(kind: TaskKind, ex: &Example) -> Result<()> {
    if !(1..=2).contains(&ex.sentences.len()) || ex.sentences.iter().any(Vec::is_empty) {
        return Err(Error::Input(format!("example {} needs one or two non-empty sentences", ex.id)));
    }
    match kind {
        TaskKind::Classification { classes } => {
            let ok = ex.label.fract() == 0.0 && ex.label >= 0.0 && (ex.label as usize) < classes;
            if !ok {
                return Err(Error::Input(format!(
                    "example {} has label {} outside 0..{classes}",
                    ex.id, ex.label
                )));
            }
        }
        TaskKind::Regression => {
            if !ex.label.is_finite() {
                return Err(Error::Input(format!("example {} has a non-finite target", ex.id)));
            }
        }
    }
    Ok(())
}

/// An example as whitespace-separated text, the form stored in task files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextExample {
    pub id: u64,
    pub text: Vec<String>,
    pub label: f64,
}

/// JSON task file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskFile {
    pub kind: TaskKind,
    pub metric: Metric,
    pub train: Vec<TextExample>,
    pub dev: Vec<TextExample>,
}

impl TaskFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Input(format!("task file {}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::checkpoint::write_atomic(path, serde_json::to_string_pretty(self)?.as_bytes())
    }

    /// Tokenize with `vocab` (lowercased whitespace split, unknown words → `[UNK]`).
    pub fn encode(&self, vocab: &Vocabulary) -> Result<TaskSpec> {
        let enc = |xs: &[TextExample]| {
            xs.iter()
                .map(|x| Example {
                    id: x.id,
                    sentences: x
                        .text
                        .iter()
                        .map(|s| {
                            let toks: Vec<String> = s.split_whitespace().map(str::to_lowercase).collect();
                            vocab.encode(&toks)
                        })
                        .collect(),
                    label: x.label,
                })
                .collect()
        };
        let spec = TaskSpec {
            kind: self.kind,
            metric: self.metric,
            train: enc(&self.train),
            dev: enc(&self.dev),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Encoder rows `[CLS0]..[CK] a ([SEP] b)`, truncated to `max_len` and padded
/// to the longest row of the call.
pub fn build_rows(examples: &[&Example], k: usize, max_len: usize) -> Result<Vec<Vec<u32>>> {
    let prefix = k + 1;
    let mut rows = Vec::with_capacity(examples.len());
    for ex in examples {
        let mut row: Vec<u32> = (0..=k as u32).map(|i| CLS0 + i).collect();
        match ex.sentences.as_slice() {
            [a] => {
                if max_len < prefix + 1 {
                    return Err(Error::Config(format!("max_len {max_len} too short for K={k}")));
                }
                row.extend(a.iter().take(max_len - prefix));
            }
            [a, b] => {
                if max_len < prefix + 3 {
                    return Err(Error::Config(format!("max_len {max_len} too short for a pair with K={k}")));
                }
                let (mut a, mut b) = (a.clone(), b.clone());
                let budget = max_len - prefix - 1;
                while a.len() + b.len() > budget {
                    if a.len() > b.len() {
                        a.pop();
                    } else {
                        b.pop();
                    }
                }
                row.extend(a);
                row.push(SEP);
                row.extend(b);
            }
            _ => return Err(Error::Input(format!("example {} needs one or two sentences", ex.id))),
        }
        rows.push(row);
    }
    let width = rows.iter().map(Vec::len).max().unwrap_or(0);
    for r in &mut rows {
        r.resize(width, PAD);
    }
    Ok(rows)
}
