use super::metrics::MetricsReport;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{model_forward, Model};

/// True and predicted class indices (in the model's class order) for every
/// utterance of `split`.
pub fn predict_split(model: &Model, split: &Dataset) -> Result<(Vec<usize>, Vec<usize>)> {
    if split.utterance_count() == 0 {
        return Err(Error::Contract("cannot evaluate an empty split".into()));
    }
    let dims = split.feature_dims();
    if dims != model.feature_dims {
        let f = |d: &crate::encoders::PerModality<usize>| [d.a, d.v, d.t];
        return Err(Error::dimension("evaluate", &f(&dims), &f(&model.feature_dims)));
    }
    // data labels index the split's own class list; map them by name
    let mapping = split
        .class_names()
        .iter()
        .map(|name| model.class_names.iter().position(|c| c == name))
        .collect::<Vec<_>>();
    let mut truth = Vec::with_capacity(split.utterance_count());
    let mut predicted = Vec::with_capacity(split.utterance_count());
    for conv in split.conversations() {
        for label in conv.labels() {
            let mapped = mapping[label].ok_or_else(|| {
                Error::Contract(format!(
                    "class `{}` occurs in conversation `{}` but the checkpoint only knows {:?}",
                    split.class_names()[label],
                    conv.id(),
                    model.class_names
                ))
            })?;
            truth.push(mapped);
        }
        predicted.extend(model_forward(conv, &model.params, &model.config)?.iter().map(|p| p.predicted));
    }
    Ok((truth, predicted))
}

/// Accuracy, weighted F1, per-class F1 and confusion of `model` on `split`.
pub fn evaluate(model: &Model, split: &Dataset) -> Result<MetricsReport> {
    let (truth, predicted) = predict_split(model, split)?;
    MetricsReport::from_predictions(&truth, &predicted, &model.class_names)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SynthSpec};
    use crate::model::ModelConfig;

    fn setup() -> (Model, Dataset) {
        let ds = synth_generate(&SynthSpec {
            conversations: 3,
            classes: 3,
            feature_dims: crate::encoders::PerModality::new(3, 2, 4),
            ..Default::default()
        })
        .unwrap();
        let config = ModelConfig { d: 4, k: 1, ..Default::default() };
        let model = Model::init(config, ds.feature_dims(), ds.class_names().to_vec(), 1).unwrap();
        (model, ds)
    }

    #[test]
    fn report_covers_every_utterance() {
        let (model, ds) = setup();
        let r = evaluate(&model, &ds).unwrap();
        assert_eq!(r.total(), ds.utterance_count());
        assert_eq!(r, evaluate(&model, &ds).unwrap());
    }

    #[test]
    fn renamed_classes_map_by_name_and_unknown_ones_fail() {
        let (mut model, ds) = setup();
        model.class_names.reverse();
        let (truth, _) = predict_split(&model, &ds).unwrap();
        assert_eq!(truth, ds.labels().iter().map(|l| 2 - l).collect::<Vec<_>>());
        model.class_names[2 - ds.labels()[0]] = "other".into();
        assert!(matches!(predict_split(&model, &ds), Err(Error::Contract(_))));
    }

    #[test]
    fn empty_split_is_a_contract_error() {
        let (model, ds) = setup();
        assert!(matches!(evaluate(&model, &ds.select(&[])), Err(Error::Contract(_))));
    }
}
