use std::collections::HashSet;

use super::Dataset;
use crate::error::{Error, Result};
use crate::numerics::Rng;

/// How conversations are assigned to train / validation / test.
#[derive(Debug, Clone, PartialEq)]
pub enum SplitPolicy {
    /// Shuffle with `seed`, then take `round(val·n)` for validation,
    /// `round(test·n)` for test and the rest for training.
    Fractions { train: f64, val: f64, test: f64, seed: u64 },
    /// Conversation ids listed per split.
    Explicit {
        train: Vec<String>,
        val: Vec<String>,
        test: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Splits by conversation. Every split must come out non-empty.
pub fn split(dataset: &Dataset, policy: &SplitPolicy) -> Result<Splits> {
    let n = dataset.len();
    let (train, val, test) = match policy {
        SplitPolicy::Fractions { train, val, test, seed } => {
            let fractions = [*train, *val, *test];
            if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "split fractions {train}/{val}/{test} must lie in [0, 1] and sum to 1"
                )));
            }
            let mut order: Vec<usize> = (0..n).collect();
            Rng::new(*seed).shuffle(&mut order);
            let n_val = (val * n as f64).round() as usize;
            let n_test = ((test * n as f64).round() as usize).min(n - n_val.min(n));
            let n_val = n_val.min(n);
            let n_train = n - n_val - n_test;
            let mut t = order[..n_train].to_vec();
            let mut v = order[n_train..n_train + n_val].to_vec();
            let mut s = order[n_train + n_val..].to_vec();
            // keep each split in file order
            for part in [&mut t, &mut v, &mut s] {
                part.sort_unstable();
            }
            (t, v, s)
        }
        SplitPolicy::Explicit { train, val, test } => {
            let mut seen = HashSet::new();
            let mut resolve = |name: &str, ids: &[String]| -> Result<Vec<usize>> {
                ids.iter()
                    .map(|id| {
                        if !seen.insert(id.clone()) {
                            return Err(Error::Config(format!("conversation `{id}` is listed in more than one split")));
                        }
                        dataset
                            .conversations()
                            .iter()
                            .position(|c| c.id() == id)
                            .ok_or_else(|| Error::Config(format!("{name} split lists unknown conversation `{id}`")))
                    })
                    .collect()
            };
            (resolve("train", train)?, resolve("val", val)?, resolve("test", test)?)
        }
    };
    for (name, part) in [("train", &train), ("val", &val), ("test", &test)] {
        if part.is_empty() {
            return Err(Error::Config(format!("{name} split of {n} conversations came out empty")));
        }
    }
    Ok(Splits {
        train: dataset.select(&train),
        val: dataset.select(&val),
        test: dataset.select(&test),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SynthSpec};

    fn ten() -> Dataset {
        synth_generate(&SynthSpec {
            conversations: 10,
            ..Default::default()
        })
        .unwrap()
    }

    fn ids(d: &Dataset) -> Vec<String> {
        d.conversations().iter().map(|c| c.id().to_string()).collect()
    }

    #[test]
    fn fractions_give_8_1_1_deterministically() {
        let policy = SplitPolicy::Fractions {
            train: 0.8,
            val: 0.1,
            test: 0.1,
            seed: 4,
        };
        let a = split(&ten(), &policy).unwrap();
        assert_eq!((a.train.len(), a.val.len(), a.test.len()), (8, 1, 1));
        assert_eq!(a, split(&ten(), &policy).unwrap());
        let mut all: Vec<String> = [&a.train, &a.val, &a.test].iter().flat_map(|d| ids(d)).collect();
        all.sort();
        assert_eq!(all, ids(&ten()));
    }

    #[test]
    fn explicit_lists_are_taken_verbatim() {
        let policy = SplitPolicy::Explicit {
            train: vec!["synth03".into(), "synth01".into()],
            val: vec!["synth07".into()],
            test: vec!["synth00".into()],
        };
        let s = split(&ten(), &policy).unwrap();
        assert_eq!(ids(&s.train), ["synth03", "synth01"]);
        assert_eq!(ids(&s.val), ["synth07"]);
        assert_eq!(ids(&s.test), ["synth00"]);
    }

    #[test]
    fn empty_or_bad_splits_are_configuration_errors() {
        let small = SplitPolicy::Fractions {
            train: 0.98,
            val: 0.01,
            test: 0.01,
            seed: 0,
        };
        assert!(matches!(split(&ten(), &small), Err(Error::Config(_))));
        let bad_sum = SplitPolicy::Fractions {
            train: 0.5,
            val: 0.1,
            test: 0.1,
            seed: 0,
        };
        assert!(matches!(split(&ten(), &bad_sum), Err(Error::Config(_))));
        let twice = SplitPolicy::Explicit {
            train: vec!["synth01".into()],
            val: vec!["synth01".into()],
            test: vec!["synth02".into()],
        };
        assert!(matches!(split(&ten(), &twice), Err(Error::Config(_))));
    }
}
