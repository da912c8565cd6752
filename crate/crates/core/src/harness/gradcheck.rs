//! Full-model finite-difference suite.

use indexmap::IndexMap;

use crate::encoders::{Conversation, PerModality, Utterance};
use crate::error::Result;
use crate::model::reference::reference_objective;
use crate::model::{batch_gradients, class_weights, init_params, loss_spec, LossKind, ModelConfig};
use crate::numerics::{finite_difference_check, Dd, GradCheckReport, Real, Rng};

/// Step used by the suite.
pub const EPS: f64 = 1e-5;
/// Group names are parameter names cut after this many dot-separated parts.
pub const GROUP_DEPTH: usize = 3;

const CLASSES: usize = 3;
const DIMS: PerModality<usize> = PerModality { a: 5, v: 4, t: 6 };

/// Two conversations of 3 and 4 utterances, each with speakers A and B,
/// drawn from `seed`.
pub fn suite_batch(seed: u64) -> Vec<Conversation> {
    let mut rng = Rng::new(seed).derive(7);
    let plans: [&[&str]; 2] = [&["A", "B", "A"], &["A", "B", "B", "A"]];
    plans
        .iter()
        .enumerate()
        .map(|(c, speakers)| {
            let utterances = speakers
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    let mut draw = |n: usize| (0..n).map(|_| rng.normal()).collect::<Vec<_>>();
                    Utterance {
                        speaker: s.to_string(),
                        label: (c + i) % CLASSES,
                        features: PerModality::new(draw(DIMS.a), draw(DIMS.v), draw(DIMS.t)),
                    }
                })
                .collect();
            Conversation::new(format!("check{c}"), utterances).expect("well-formed batch")
        })
        .collect()
}

/// Compares tape gradients for one loss kind on the suite batch against
/// central differences of the independent reference objective.
pub fn check_model(config: &ModelConfig, seed: u64) -> Result<GradCheckReport> {
    let params = init_params(config, &DIMS, CLASSES, seed)?;
    let convs = suite_batch(seed);
    let batch: Vec<&Conversation> = convs.iter().collect();
    let labels: Vec<usize> = convs.iter().flat_map(|c| c.labels()).collect();
    let spec = loss_spec(config, class_weights(&labels, CLASSES, config.class_weighting));
    let analytic = batch_gradients(&params, &batch, config, &spec)?.gradients;
    // Central differences of an f64 objective carry roundoff near
    // ulp(loss)/EPS, which swamps gradient entries below ~1e-7. The
    // reference objective is evaluated in double-double and offset by its
    // value at the base point, so only the step itself is rounded to f64.
    let base: Dd = reference_objective(&params, &batch, config, &spec)?;
    let shifted = |p: &_| -> Result<f64> {
        let value: Dd = reference_objective(p, &batch, config, &spec)?;
        Ok((value - base).to_f64())
    };
    finite_difference_check(shifted, &params, &analytic, EPS)
}

/// Per-group maximum relative error for each loss kind.
#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub groups: IndexMap<String, IndexMap<String, f64>>,
}

impl SuiteReport {
    pub fn max_relative_error(&self) -> f64 {
        self.groups.values().flat_map(|g| g.values()).fold(0.0, |a, &b| a.max(b))
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_relative_error() <= tolerance
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (loss, groups) in &self.groups {
            let width = groups.keys().map(String::len).max().unwrap_or(0);
            out.push_str(&format!("{loss}\n"));
            for (g, e) in groups {
                out.push_str(&format!("  {g:<width$}  {e:.3e}\n"));
            }
        }
        out
    }
}

/// Checks `base` with cross-entropy and with focal loss.
pub fn run_suite(base: &ModelConfig, seed: u64) -> Result<SuiteReport> {
    let mut groups = IndexMap::new();
    for (name, kind) in [("cross_entropy", LossKind::CrossEntropy), ("focal", LossKind::Focal)] {
        let config = ModelConfig { loss: kind, ..base.clone() };
        let report = check_model(&config, seed)?;
        groups.insert(name.to_string(), report.by_group(GROUP_DEPTH));
    }
    Ok(SuiteReport { groups })
}
