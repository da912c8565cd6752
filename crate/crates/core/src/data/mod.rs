//! Datasets: the line-delimited file format, synthetic generation and
//! conversation-level splits.
//!
//! A dataset file is JSON Lines. The first non-blank line is a header,
//!
//! ```text
//! {"class_names":["neutral","happy"],"feature_dims":{"a":3,"v":2,"t":4}}
//! ```
//!
//! and every following line is one conversation,
//!
//! ```text
//! {"id":"dlg1","utterances":[{"speaker":"A","label":"happy","a":[..],"v":[..],"t":[..]}]}
//! ```
//!
//! Labels are class names from the header. Floats are written in the
//! shortest form that parses back to the same `f64` (never more than 17
//! significant digits), so a load of a saved dataset is bit-exact. Blank
//! lines are ignored; unknown keys are ignored.

mod split;
mod synth;

pub use split::{split, SplitPolicy, Splits};
pub use synth::{synth_generate, SynthSpec};

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoders::{Conversation, Modality, PerModality, Utterance};
use crate::error::{Error, Result};

/// Validated conversations sharing one label set and feature layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    conversations: Vec<Conversation>,
    class_names: Vec<String>,
    feature_dims: PerModality<usize>,
}

impl Dataset {
    /// Checks label indices, feature widths and id uniqueness.
    pub fn new(
        conversations: Vec<Conversation>,
        class_names: Vec<String>,
        feature_dims: PerModality<usize>,
    ) -> Result<Self> {
        check_header(&class_names, &feature_dims).map_err(Error::Contract)?;
        let mut ids = HashSet::new();
        for conv in &conversations {
            if !ids.insert(conv.id()) {
                return Err(Error::Contract(format!("duplicate conversation id `{}`", conv.id())));
            }
            if conv.feature_dims() != feature_dims {
                return Err(Error::Contract(format!(
                    "conversation `{}` has feature dims {:?}, dataset declares {:?}",
                    conv.id(),
                    dims_list(&conv.feature_dims()),
                    dims_list(&feature_dims)
                )));
            }
            if let Some(l) = conv.labels().into_iter().find(|&l| l >= class_names.len()) {
                return Err(Error::Contract(format!(
                    "conversation `{}` uses label index {l} outside {} classes",
                    conv.id(),
                    class_names.len()
                )));
            }
        }
        Ok(Dataset {
            conversations,
            class_names,
            feature_dims,
        })
    }

    pub fn conversations(&self) -> &[Conversation] {
        &self.conversations
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn feature_dims(&self) -> PerModality<usize> {
        self.feature_dims
    }

    pub fn len(&self) -> usize {
        self.conversations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.conversations.is_empty()
    }

    pub fn utterance_count(&self) -> usize {
        self.conversations.iter().map(Conversation::len).sum()
    }

    /// All labels in conversation order.
    pub fn labels(&self) -> Vec<usize> {
        self.conversations.iter().flat_map(|c| c.labels()).collect()
    }

    /// The conversations at `indices`, same header.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            conversations: indices.iter().map(|&i| self.conversations[i].clone()).collect(),
            class_names: self.class_names.clone(),
            feature_dims: self.feature_dims,
        }
    }

    /// Writes the dataset in the line-delimited format.
    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let header = Header {
            class_names: self.class_names.clone(),
            feature_dims: self.feature_dims,
        };
        writeln!(out, "{}", serde_json::to_string(&header)?)?;
        for conv in &self.conversations {
            let record = ConversationRecord {
                id: conv.id().to_string(),
                utterances: conv
                    .utterances()
                    .iter()
                    .map(|u| UtteranceRecord {
                        speaker: Some(u.speaker.clone()),
                        label: Some(self.class_names[u.label].clone()),
                        a: Some(u.features.a.clone()),
                        v: Some(u.features.v.clone()),
                        t: Some(u.features.t.clone()),
                    })
                    .collect(),
            };
            writeln!(out, "{}", serde_json::to_string(&record)?)?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("JSON is UTF-8")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        self.write(&mut out).map_err(|e| Error::io(path, e))?;
        out.flush().map_err(|e| Error::io(path, e))
    }
}

fn dims_list(d: &PerModality<usize>) -> [usize; 3] {
    [d.a, d.v, d.t]
}

fn check_header(class_names: &[String], dims: &PerModality<usize>) -> Result<(), String> {
    if class_names.len() < 2 {
        return Err(format!("need at least 2 class names, got {}", class_names.len()));
    }
    let mut seen = HashSet::new();
    for c in class_names {
        if !seen.insert(c) {
            return Err(format!("class name `{c}` appears twice"));
        }
    }
    for m in Modality::ALL {
        if *dims.get(m) == 0 {
            return Err(format!("feature_dims.{m} must be at least 1"));
        }
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct Header {
    class_names: Vec<String>,
    feature_dims: PerModality<usize>,
}

#[derive(Serialize, Deserialize)]
struct ConversationRecord {
    id: String,
    utterances: Vec<UtteranceRecord>,
}

// Everything optional so a missing field is reported by name with its
// position rather than as a bare parse failure.
#[derive(Serialize, Deserialize)]
struct UtteranceRecord {
    speaker: Option<String>,
    label: Option<String>,
    a: Option<Vec<f64>>,
    v: Option<Vec<f64>>,
    t: Option<Vec<f64>>,
}

fn parse_conversation(
    record: ConversationRecord,
    class_names: &[String],
    dims: &PerModality<usize>,
) -> Result<Conversation, String> {
    let id = record.id;
    if record.utterances.is_empty() {
        return Err(format!("conversation `{id}` has no utterances"));
    }
    let mut utterances = Vec::with_capacity(record.utterances.len());
    for (i, u) in record.utterances.into_iter().enumerate() {
        let at = |field: &str, what: &str| format!("conversation `{id}`, utterance {i}, field `{field}`: {what}");
        let speaker = u.speaker.ok_or_else(|| at("speaker", "missing"))?;
        let label_name = u.label.ok_or_else(|| at("label", "missing"))?;
        let label = class_names
            .iter()
            .position(|c| *c == label_name)
            .ok_or_else(|| at("label", &format!("unknown class `{label_name}`")))?;
        let feature = |m: Modality, values: Option<Vec<f64>>| -> Result<Vec<f64>, String> {
            let values = values.ok_or_else(|| at(m.key(), "missing"))?;
            if values.len() != *dims.get(m) {
                return Err(at(m.key(), &format!("{} values, header declares {}", values.len(), dims.get(m))));
            }
            Ok(values)
        };
        let features = PerModality::new(
            feature(Modality::Acoustic, u.a)?,
            feature(Modality::Visual, u.v)?,
            feature(Modality::Textual, u.t)?,
        );
        utterances.push(Utterance {
            speaker,
            label,
            features,
        });
    }
    Conversation::new(id, utterances).map_err(|e| e.to_string())
}

/// Parses dataset text. Errors carry the 1-based line number.
pub fn parse_dataset(text: &str) -> Result<Dataset> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let Some((header_index, header_line)) = lines.next() else {
        return Err(Error::Format {
            line: 1,
            message: "no header record".into(),
        });
    };
    let fail = |index: usize, message: String| Error::Format {
        line: index + 1,
        message,
    };
    let header: Header =
        serde_json::from_str(header_line).map_err(|e| fail(header_index, format!("header record: {e}")))?;
    check_header(&header.class_names, &header.feature_dims).map_err(|m| fail(header_index, m))?;

    let mut conversations = Vec::new();
    let mut ids = HashSet::new();
    for (index, line) in lines {
        let record: ConversationRecord = serde_json::from_str(line).map_err(|e| fail(index, e.to_string()))?;
        if !ids.insert(record.id.clone()) {
            return Err(fail(index, format!("duplicate conversation id `{}`", record.id)));
        }
        let conv = parse_conversation(record, &header.class_names, &header.feature_dims).map_err(|m| fail(index, m))?;
        conversations.push(conv);
    }
    Dataset::new(conversations, header.class_names, header.feature_dims)
}

/// Reads and validates a dataset file.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text).map_err(|e| match e {
        Error::Format { line, message } => Error::Format {
            line,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}
