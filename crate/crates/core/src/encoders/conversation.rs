use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// One of the three per-utterance feature streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Modality {
    Acoustic,
    Visual,
    Textual,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Acoustic, Modality::Visual, Modality::Textual];

    /// Short key used in files and parameter names.
    pub fn key(self) -> &'static str {
        match self {
            Modality::Acoustic => "a",
            Modality::Visual => "v",
            Modality::Textual => "t",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// A value per modality, addressed in the fixed a, v, t order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerModality<T> {
    pub a: T,
    pub v: T,
    pub t: T,
}

impl<T> PerModality<T> {
    pub fn new(a: T, v: T, t: T) -> Self {
        PerModality { a, v, t }
    }

    pub fn get(&self, m: Modality) -> &T {
        match m {
            Modality::Acoustic => &self.a,
            Modality::Visual => &self.v,
            Modality::Textual => &self.t,
        }
    }
}

/// A non-empty subset of modalities, always iterated as a, v, t.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Modalities(u8);

impl Modalities {
    pub const ALL: Modalities = Modalities(0b111);

    pub fn new(members: &[Modality]) -> Result<Self> {
        let mask = members.iter().fold(0u8, |m, x| m | (1 << x.index()));
        if mask == 0 {
            return Err(Error::Config("modality set must be non-empty".into()));
        }
        Ok(Modalities(mask))
    }

    pub fn contains(self, m: Modality) -> bool {
        self.0 & (1 << m.index()) != 0
    }

    pub fn iter(self) -> impl Iterator<Item = Modality> {
        Modality::ALL.into_iter().filter(move |&m| self.contains(m))
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// Position of `m` among the members, if present.
    pub fn position(self, m: Modality) -> Option<usize> {
        self.iter().position(|x| x == m)
    }
}

impl fmt::Display for Modalities {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for m in self.iter() {
            f.write_str(m.key())?;
        }
        Ok(())
    }
}

impl FromStr for Modalities {
    type Err = Error;

    /// Accepts `avt`, `a+v+t`, `A+T`, `t`, ...
    fn from_str(s: &str) -> Result<Self> {
        let mut members = Vec::new();
        for ch in s.chars().filter(|c| !matches!(c, '+' | ',' | ' ')) {
            let m = match ch.to_ascii_lowercase() {
                'a' => Modality::Acoustic,
                'v' => Modality::Visual,
                't' => Modality::Textual,
                _ => {
                    return Err(Error::Config(format!(
                        "unknown modality `{ch}` in `{s}` (expected a, v, t)"
                    )))
                }
            };
            members.push(m);
        }
        Modalities::new(&members)
    }
}

impl Serialize for Modalities {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Modalities {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One utterance: who said it, its emotion label, and one feature vector per
/// modality. Its index is its position in the owning [`Conversation`].
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub speaker: String,
    pub label: usize,
    pub features: PerModality<Vec<f64>>,
}

/// Ordered utterances of one dialogue.
#[derive(Debug, Clone, PartialEq)]
pub struct Conversation {
    id: String,
    utterances: Vec<Utterance>,
    speakers: Vec<String>,
}

impl Conversation {
    /// Validates that the conversation is non-empty and that every modality
    /// has the same width in every utterance.
    pub fn new(id: impl Into<String>, utterances: Vec<Utterance>) -> Result<Self> {
        let id = id.into();
        let first = utterances
            .first()
            .ok_or_else(|| Error::Contract(format!("conversation `{id}` has no utterances")))?;
        let dims = first.features.clone();
        for (i, u) in utterances.iter().enumerate() {
            for m in Modality::ALL {
                let (got, want) = (u.features.get(m).len(), dims.get(m).len());
                if got == 0 || got != want {
                    return Err(Error::Contract(format!(
                        "conversation `{id}`, utterance {i}: modality `{m}` has {got} features, expected {want}"
                    )));
                }
            }
        }
        let mut speakers: Vec<String> = Vec::new();
        for u in &utterances {
            if !speakers.contains(&u.speaker) {
                speakers.push(u.speaker.clone());
            }
        }
        Ok(Conversation {
            id,
            utterances,
            speakers,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn utterances(&self) -> &[Utterance] {
        &self.utterances
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    /// Speaker ids in order of first appearance.
    pub fn speakers(&self) -> &[String] {
        &self.speakers
    }

    pub fn labels(&self) -> Vec<usize> {
        self.utterances.iter().map(|u| u.label).collect()
    }

    pub fn feature_dims(&self) -> PerModality<usize> {
        let f = &self.utterances[0].features;
        PerModality::new(f.a.len(), f.v.len(), f.t.len())
    }

    /// `N × D_m` matrix of one modality's raw features.
    pub fn feature_matrix(&self, m: Modality) -> Tensor {
        let rows: Vec<&[f64]> = self
            .utterances
            .iter()
            .map(|u| u.features.get(m).as_slice())
            .collect();
        Tensor::from_rows(&rows).expect("validated at construction")
    }

    /// Utterance indices of each speaker, in conversation order, speakers
    /// listed by first appearance.
    pub fn speaker_groups(&self) -> Vec<Vec<usize>> {
        self.speakers
            .iter()
            .map(|s| {
                self.utterances
                    .iter()
                    .enumerate()
                    .filter(|(_, u)| &u.speaker == s)
                    .map(|(i, _)| i)
                    .collect()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn utt(speaker: &str, a: usize) -> Utterance {
        Utterance {
            speaker: speaker.into(),
            label: 0,
            features: PerModality::new(vec![0.0; a], vec![1.0], vec![2.0, 3.0]),
        }
    }

    #[test]
    fn speakers_and_groups_follow_first_appearance() {
        let c = Conversation::new("c", vec![utt("B", 2), utt("A", 2), utt("B", 2)]).unwrap();
        assert_eq!(c.speakers(), &["B".to_string(), "A".to_string()]);
        assert_eq!(c.speaker_groups(), vec![vec![0, 2], vec![1]]);
    }

    #[test]
    fn inconsistent_dims_and_empty_conversations_are_rejected() {
        assert!(Conversation::new("c", vec![utt("A", 2), utt("A", 3)]).is_err());
        assert!(Conversation::new("c", vec![]).is_err());
    }

    #[test]
    fn modality_sets_parse_and_print_in_fixed_order() {
        let m: Modalities = "T+A".parse().unwrap();
        assert_eq!(m.to_string(), "at");
        assert_eq!(m.position(Modality::Textual), Some(1));
        assert!("".parse::<Modalities>().is_err());
        assert!("x".parse::<Modalities>().is_err());
        assert_eq!(Modalities::ALL.len(), 3);
    }
}
