use indexmap::IndexMap;

use super::params::ParamStore;
use super::tape::Gradients;
use crate::error::{Error, Result};

/// Floor for the relative-error denominator.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-8;

/// Worst disagreement found for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub max_relative_error: f64,
    /// Flat index of the worst entry.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub params: IndexMap<String, ParamCheck>,
}

impl GradCheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.params
            .values()
            .map(|p| p.max_relative_error)
            .fold(0.0, f64::max)
    }

    /// Maximum relative error per group, where a parameter's group is the
    /// prefix of its name up to the `depth`-th dot.
    pub fn by_group(&self, depth: usize) -> IndexMap<String, f64> {
        let mut out: IndexMap<String, f64> = IndexMap::new();
        for (name, check) in &self.params {
            let group = name.split('.').take(depth).collect::<Vec<_>>().join(".");
            let slot = out.entry(group).or_insert(0.0);
            *slot = slot.max(check.max_relative_error);
        }
        out
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Compares `analytic` against central differences
/// `(f(θᵢ + eps) − f(θᵢ − eps)) / (2·eps)` for every scalar entry of
/// every parameter in `params`.
///
/// `f` is evaluated twice at the unperturbed point first; differing results
/// mean `f` is not deterministic and the check is refused.
pub fn finite_difference_check<F>(
    f: F,
    params: &ParamStore,
    analytic: &Gradients,
    eps: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore) -> Result<f64>,
{
    if !(eps > 0.0) {
        return Err(Error::Contract(format!("finite difference step must be > 0, got {eps}")));
    }
    let first = f(params)?;
    let second = f(params)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::Contract(format!(
            "objective is not deterministic: {first} then {second} at the same point"
        )));
    }

    let mut probe = params.clone();
    let mut report = GradCheckReport::default();
    let names: Vec<String> = params.names().cloned().collect();
    for name in names {
        let grad = analytic
            .get(&name)
            .ok_or_else(|| Error::Contract(format!("no analytic gradient for `{name}`")))?;
        let count = params.get(&name).map_or(0, |t| t.len());
        if grad.len() != count {
            return Err(Error::dimension(
                "finite_difference_check",
                grad.shape(),
                params.get(&name).map_or(&[][..], |t| t.shape()),
            ));
        }
        let mut worst = ParamCheck {
            max_relative_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for i in 0..count {
            let original = params.get(&name).map(|t| t.data()[i]).unwrap_or_default();
            set_entry(&mut probe, &name, i, original + eps);
            let plus = f(&probe)?;
            set_entry(&mut probe, &name, i, original - eps);
            let minus = f(&probe)?;
            set_entry(&mut probe, &name, i, original);

            let numeric = (plus - minus) / (2.0 * eps);
            let a = grad.data()[i];
            let err = relative_error(a, numeric);
            if err > worst.max_relative_error || i == 0 {
                worst = ParamCheck {
                    max_relative_error: err,
                    worst_index: i,
                    analytic: a,
                    numeric,
                };
            }
        }
        report.params.insert(name, worst);
    }
    Ok(report)
}

fn set_entry(store: &mut ParamStore, name: &str, index: usize, value: f64) {
    if let Some(t) = store.get_mut(name) {
        t.data_mut()[index] = value;
    }
}
