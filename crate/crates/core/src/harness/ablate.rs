//! Ablation matrix: named config variants, each trained and tested under
//! one shared seed.

use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::metrics::MetricsReport;
use super::train::{run, TrainConfig};
use crate::data::Dataset;
use crate::encoders::{Modalities, Modality};
use crate::error::{Error, Result};
use crate::model::ModelConfig;

/// A preset row set or a single component toggle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Full model, −GDF, −Speaker, −GDF−Speaker, −GDF−Speaker−Context.
    Components,
    /// Full model, −inter-modal edges, −intra-modal edges.
    Edges,
    /// The seven non-empty modality subsets; unimodal rows skip fusion.
    Modalities,
    Gdf,
    Speaker,
    Context,
    Intra,
    Inter,
}

impl Axis {
    pub const NAMES: [&'static str; 8] = ["components", "edges", "modalities", "gdf", "speaker", "context", "intra", "inter"];
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "components" => Axis::Components,
            "edges" => Axis::Edges,
            "modalities" => Axis::Modalities,
            "gdf" => Axis::Gdf,
            "speaker" => Axis::Speaker,
            "context" => Axis::Context,
            "intra" => Axis::Intra,
            "inter" => Axis::Inter,
            other => {
                return Err(Error::Config(format!(
                    "unknown ablation axis `{other}`, expected one of {}",
                    Axis::NAMES.join(", ")
                )))
            }
        })
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let i = match self {
            Axis::Components => 0,
            Axis::Edges => 1,
            Axis::Modalities => 2,
            Axis::Gdf => 3,
            Axis::Speaker => 4,
            Axis::Context => 5,
            Axis::Intra => 6,
            Axis::Inter => 7,
        };
        f.write_str(Axis::NAMES[i])
    }
}

/// One configuration of the matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub name: String,
    pub config: ModelConfig,
}

fn variant(name: &str, base: &ModelConfig, edit: impl FnOnce(&mut ModelConfig)) -> Variant {
    let mut config = base.clone();
    edit(&mut config);
    Variant {
        name: name.to_string(),
        config,
    }
}

fn toggle(axis: Axis, c: &mut ModelConfig) -> &'static str {
    match axis {
        Axis::Gdf => {
            c.use_gdf = false;
            c.concat_fallback = true;
            "-gdf"
        }
        Axis::Speaker => {
            c.use_speaker = false;
            "-speaker"
        }
        Axis::Context => {
            c.use_context = false;
            "-context"
        }
        Axis::Intra => {
            c.intra = false;
            "-intra"
        }
        Axis::Inter => {
            c.inter = false;
            "-inter"
        }
        _ => unreachable!("presets are expanded separately"),
    }
}

fn preset(axis: Axis, base: &ModelConfig) -> Vec<Variant> {
    match axis {
        Axis::Components => vec![
            variant("full", base, |_| {}),
            variant("-gdf", base, |c| {
                toggle(Axis::Gdf, c);
            }),
            variant("-speaker", base, |c| c.use_speaker = false),
            variant("-gdf-speaker", base, |c| {
                toggle(Axis::Gdf, c);
                c.use_speaker = false;
            }),
            variant("-gdf-speaker-context", base, |c| {
                toggle(Axis::Gdf, c);
                c.use_speaker = false;
                c.use_context = false;
            }),
        ],
        Axis::Edges => vec![
            variant("full", base, |_| {}),
            variant("-inter", base, |c| c.inter = false),
            variant("-intra", base, |c| c.intra = false),
        ],
        Axis::Modalities => {
            use Modality::{Acoustic as A, Textual as T, Visual as V};
            let subsets: [&[Modality]; 7] = [&[A], &[V], &[T], &[A, V], &[A, T], &[V, T], &[A, V, T]];
            subsets
                .iter()
                .map(|members| {
                    let m = Modalities::new(members).expect("non-empty subset");
                    variant(&m.to_string(), base, |c| {
                        c.modalities = m;
                        if members.len() == 1 {
                            c.use_gdf = false;
                            c.concat_fallback = false;
                        }
                    })
                })
                .collect()
        }
        _ => unreachable!("toggles are expanded separately"),
    }
}

/// Expands `axes` into variants. Presets contribute their fixed rows;
/// single toggles combine as a full factorial. Duplicated configurations
/// keep the first name. No axes gives the base configuration alone.
pub fn variants(base: &ModelConfig, axes: &[Axis]) -> Vec<Variant> {
    let mut out: Vec<Variant> = Vec::new();
    let mut push = |v: Variant| {
        if !out.iter().any(|o| o.config == v.config) {
            out.push(v);
        }
    };
    let toggles: Vec<Axis> = axes
        .iter()
        .copied()
        .filter(|a| !matches!(a, Axis::Components | Axis::Edges | Axis::Modalities))
        .collect();
    for &axis in axes {
        if matches!(axis, Axis::Components | Axis::Edges | Axis::Modalities) {
            preset(axis, base).into_iter().for_each(&mut push);
        }
    }
    if axes.is_empty() || !toggles.is_empty() {
        for mask in 0..(1usize << toggles.len()) {
            let mut config = base.clone();
            let mut name = String::new();
            for (bit, &axis) in toggles.iter().enumerate() {
                if mask & (1 << bit) != 0 {
                    name.push_str(toggle(axis, &mut config));
                }
            }
            if name.is_empty() {
                name.push_str("full");
            }
            push(Variant { name, config });
        }
    }
    out
}

/// Keys whose values differ between two model configs, as
/// `key → (base, variant)`.
pub fn config_diff(base: &ModelConfig, other: &ModelConfig) -> IndexMap<String, (String, String)> {
    let as_table = |c: &ModelConfig| toml::Table::try_from(c).expect("config serializes");
    let (a, b) = (as_table(base), as_table(other));
    a.iter()
        .filter(|(k, v)| b.get(*k) != Some(*v))
        .map(|(k, v)| (k.clone(), (v.to_string(), b.get(k).map(|x| x.to_string()).unwrap_or_default())))
        .collect()
}

/// Test-split result of one variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub diff: IndexMap<String, (String, String)>,
    pub best_epoch: usize,
    pub metrics: MetricsReport,
}

/// Trains and tests every variant with the base run's seed and split.
pub fn ablate(base: &TrainConfig, dataset: &Dataset, axes: &[Axis]) -> Result<Vec<AblationRow>> {
    variants(&base.model, axes)
        .into_iter()
        .map(|v| {
            let config = TrainConfig {
                model: v.config.clone(),
                ..base.clone()
            };
            let outcome = run(&config, dataset).map_err(|e| Error::Variant {
                name: v.name.clone(),
                source: Box::new(e),
            })?;
            Ok(AblationRow {
                diff: config_diff(&base.model, &v.config),
                variant: v.name,
                best_epoch: outcome.training.best_epoch,
                metrics: outcome.test,
            })
        })
        .collect()
}

/// Aligned table of accuracy and weighted F1 per variant.
pub fn ablation_table(rows: &[AblationRow]) -> String {
    let width = rows.iter().map(|r| r.variant.len()).max().unwrap_or(0).max(7);
    let mut out = format!("{:<width$}  {:>7}  {:>7}  changed\n", "variant", "acc", "w-f1");
    for r in rows {
        let changed = r.diff.keys().cloned().collect::<Vec<_>>().join(",");
        out.push_str(&format!(
            "{:<width$}  {:>7.4}  {:>7.4}  {}\n",
            r.variant, r.metrics.accuracy, r.metrics.weighted_f1, changed
        ));
    }
    out
}
