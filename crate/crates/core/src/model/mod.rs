//! The end-to-end network: encoders, conversation graph, fusion stack and
//! classifier, plus the training objective.

pub mod checkpoint;
mod config;
pub mod loss;
pub mod reference;

pub use config::{ClassWeighting, FusionMode, LossKind, ModelConfig};
pub use loss::{class_weights, cross_entropy_loss, focal_loss, LossSpec};

use crate::convgraph::{build_graph_on_tape, edge_mask};
use crate::encoders::{encode, init_encoder_params, Conversation, EncoderOutput, PerModality};
use crate::error::{Error, Result};
use crate::fusion::{gdf_forward, init_fusion_params};
use crate::numerics::{Binder, Gradients, ParamStore, Rng, Tape, Tensor, Var};

pub const CLASSIFIER_WEIGHT: &str = "classifier.w";
pub const CLASSIFIER_BIAS: &str = "classifier.b";
pub const CONCAT_WEIGHT: &str = "fallback.concat.w";
pub const CONCAT_BIAS: &str = "fallback.concat.b";

/// Class distribution for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probabilities: Vec<f64>,
    pub predicted: usize,
}

impl Prediction {
    fn from_logits(row: &[f64]) -> Self {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&z| (z - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let probabilities: Vec<f64> = exps.iter().map(|e| e / total).collect();
        Prediction {
            predicted: argmax(&probabilities),
            probabilities,
        }
    }
}

/// Index of the first maximum.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Registers every parameter the configured network can touch. Parameters
/// belonging to switched-off components are still created (so checkpoints
/// of ablated variants share one layout) but never read.
pub fn init_params(
    config: &ModelConfig,
    feature_dims: &PerModality<usize>,
    classes: usize,
    seed: u64,
) -> Result<ParamStore> {
    config.validate()?;
    if classes < 2 {
        return Err(Error::Config(format!("need at least 2 classes, got {classes}")));
    }
    let d = config.d;
    let mut store = ParamStore::new();
    let mut rng = Rng::new(seed);
    init_encoder_params(&mut store, feature_dims, d, &mut rng)?;
    init_fusion_params(&mut store, d, config.k, config.forget_bias, &mut rng);

    let md = config.modalities.len() * d;
    let bound = 1.0 / (md as f64).sqrt();
    store.insert(CONCAT_WEIGHT, rng.uniform_tensor(&[md, md], bound));
    store.insert(CONCAT_BIAS, Tensor::zeros(&[md]));

    let width = config.classifier_width();
    let bound = 1.0 / (width as f64).sqrt();
    store.insert(CLASSIFIER_WEIGHT, rng.uniform_tensor(&[classes, width], bound));
    store.insert(CLASSIFIER_BIAS, Tensor::zeros(&[classes]));
    Ok(store)
}

/// Everything recorded for one conversation.
#[derive(Debug, Clone)]
pub struct Forward {
    pub encoded: EncoderOutput,
    /// Refined embeddings `o`, one `N × d` block per active modality.
    pub refined: Vec<Var>,
    /// `N × C` pre-softmax scores.
    pub logits: Var,
}

/// Refined embeddings `o` from node embeddings `x` under the configured
/// fusion mode.
pub fn fuse(binder: &Binder<'_>, nodes: &[Var], config: &ModelConfig) -> Result<Vec<Var>> {
    let tape = binder.tape();
    let n = tape.shape(nodes[0])[0];
    match config.fusion_mode() {
        FusionMode::Identity => Ok(nodes.to_vec()),
        FusionMode::Concat => {
            let joined = tape.concat_cols(nodes)?;
            let w = binder.get(CONCAT_WEIGHT)?;
            let b = binder.get(CONCAT_BIAS)?;
            let fused = tape.relu(tape.linear(joined, w, b)?);
            (0..nodes.len())
                .map(|i| tape.slice_cols(fused, i * config.d, config.d))
                .collect()
        }
        FusionMode::Gdf => {
            let stacked = tape.concat_rows(nodes)?;
            let mask = edge_mask(config.modalities, n, config.edge_rules());
            let graph = build_graph_on_tape(tape, stacked, &mask).map_err(|e| e.within("convgraph"))?;
            let out = gdf_forward(binder, stacked, graph.propagation, &config.gdf_settings())
                .map_err(|e| e.within("fusion"))?;
            (0..nodes.len())
                .map(|i| tape.slice_rows(out.output, i * n, n))
                .collect()
        }
    }
}

/// Classifier logits `W_z [x^a; x^v; x^t; o^a; o^v; o^t] + b_z` over the
/// active modalities.
pub fn classifier_logits(binder: &Binder<'_>, x_parts: &[Var], o_parts: &[Var]) -> Result<Var> {
    let tape = binder.tape();
    let parts: Vec<Var> = x_parts.iter().chain(o_parts).copied().collect();
    let joined = tape.concat_cols(&parts)?;
    let w = binder.get(CLASSIFIER_WEIGHT)?;
    let b = binder.get(CLASSIFIER_BIAS)?;
    tape.linear(joined, w, b).map_err(|e| e.within("classifier"))
}

/// Records the full pipeline for one conversation.
pub fn forward(binder: &Binder<'_>, conv: &Conversation, config: &ModelConfig) -> Result<Forward> {
    let encoded = encode(
        binder,
        conv,
        config.modalities,
        config.use_context,
        config.use_speaker,
        &config.gammas(),
    )
    .map_err(|e| e.within("encoders"))?;
    let refined = fuse(binder, &encoded.nodes, config)?;
    let logits = classifier_logits(binder, &encoded.nodes, &refined)?;
    Ok(Forward {
        encoded,
        refined,
        logits,
    })
}

fn predictions(logits: &Tensor) -> Vec<Prediction> {
    (0..logits.rows()).map(|r| Prediction::from_logits(logits.row(r))).collect()
}

/// Softmax classification of already computed parts, each `N × d`.
pub fn classify(x_parts: &[Tensor], o_parts: &[Tensor], params: &ParamStore) -> Result<Vec<Prediction>> {
    let tape = Tape::new();
    let binder = params.bind(&tape);
    let lift = |parts: &[Tensor]| parts.iter().map(|t| tape.constant(t.clone())).collect::<Vec<_>>();
    let logits = classifier_logits(&binder, &lift(x_parts), &lift(o_parts))?;
    let value = tape.value(logits);
    Ok(predictions(&value))
}

/// One prediction per utterance of `conv`.
pub fn model_forward(conv: &Conversation, params: &ParamStore, config: &ModelConfig) -> Result<Vec<Prediction>> {
    let tape = Tape::new();
    let binder = params.bind(&tape);
    let out = forward(&binder, conv, config)?;
    let value = tape.value(out.logits);
    Ok(predictions(&value))
}

/// Loss settings for `config` with per-class weights `weights`.
pub fn loss_spec(config: &ModelConfig, weights: Vec<f64>) -> LossSpec {
    LossSpec {
        kind: config.loss,
        focal_gamma: config.focal_gamma,
        class_weights: weights,
        eta: config.eta,
        squared_norm: config.l2_squared,
    }
}

fn record_objective(
    binder: &Binder<'_>,
    batch: &[&Conversation],
    config: &ModelConfig,
    spec: &LossSpec,
) -> Result<(Var, Var)> {
    let tape = binder.tape();
    let mut logits = Vec::with_capacity(batch.len());
    let mut targets = Vec::new();
    for conv in batch {
        logits.push(forward(binder, conv, config)?.logits);
        targets.extend(conv.labels());
    }
    if logits.is_empty() {
        return Err(Error::Contract("loss over zero utterances".into()));
    }
    let logits = tape.concat_rows(&logits)?;
    let log_probs = tape.log_softmax_rows(logits);
    let loss = loss::objective(tape, log_probs, &targets, spec, &binder.active())?;
    Ok((loss, logits))
}

/// Objective value over a batch of conversations.
pub fn batch_loss(params: &ParamStore, batch: &[&Conversation], config: &ModelConfig, spec: &LossSpec) -> Result<f64> {
    let tape = Tape::new();
    let binder = params.bind(&tape);
    let (loss, _) = record_objective(&binder, batch, config, spec)?;
    let value = tape.value(loss).item();
    Ok(value)
}

/// Loss, gradients and the predictions made along the way.
#[derive(Debug, Clone)]
pub struct BatchOutcome {
    pub loss: f64,
    /// One entry per parameter in the store; exact zeros for parameters
    /// the pass never read.
    pub gradients: Gradients,
    /// Predicted class of every utterance, batch order.
    pub predicted: Vec<usize>,
}

pub fn batch_gradients(
    params: &ParamStore,
    batch: &[&Conversation],
    config: &ModelConfig,
    spec: &LossSpec,
) -> Result<BatchOutcome> {
    let tape = Tape::new();
    let binder = params.bind(&tape);
    let (loss, logits) = record_objective(&binder, batch, config, spec)?;
    let value = tape.value(loss).item();
    let predicted = {
        let z = tape.value(logits);
        (0..z.rows()).map(|r| argmax(z.row(r))).collect()
    };
    Ok(BatchOutcome {
        loss: value,
        gradients: binder.backward(loss)?,
        predicted,
    })
}

/// A configured network with its parameters and label set.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub feature_dims: PerModality<usize>,
    pub class_names: Vec<String>,
    pub seed: u64,
    pub params: ParamStore,
}

impl Model {
    pub fn init(config: ModelConfig, feature_dims: PerModality<usize>, class_names: Vec<String>, seed: u64) -> Result<Self> {
        let params = init_params(&config, &feature_dims, class_names.len(), seed)?;
        Ok(Model {
            config,
            feature_dims,
            class_names,
            seed,
            params,
        })
    }

    pub fn classes(&self) -> usize {
        self.class_names.len()
    }

    fn check(&self, conv: &Conversation) -> Result<()> {
        let dims = conv.feature_dims();
        if dims != self.feature_dims {
            let f = |p: &PerModality<usize>| vec![p.a, p.v, p.t];
            return Err(Error::dimension("model::forward", &f(&dims), &f(&self.feature_dims)));
        }
        if let Some(&bad) = conv.labels().iter().find(|&&l| l >= self.classes()) {
            return Err(Error::Contract(format!(
                "conversation {} has label index {bad} but the model knows {} classes",
                conv.id(),
                self.classes()
            )));
        }
        Ok(())
    }

    pub fn predict(&self, conv: &Conversation) -> Result<Vec<Prediction>> {
        self.check(conv)?;
        model_forward(conv, &self.params, &self.config)
    }

    pub fn loss_spec(&self, train_labels: &[usize]) -> LossSpec {
        let weights = class_weights(train_labels, self.classes(), self.config.class_weighting);
        loss_spec(&self.config, weights)
    }

    pub fn gradients(&self, batch: &[&Conversation], spec: &LossSpec) -> Result<BatchOutcome> {
        for conv in batch {
            self.check(conv)?;
        }
        batch_gradients(&self.params, batch, &self.config, spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::{Modalities, Modality, Utterance};

    fn conv(id: &str, speakers: &[&str], seed: u64) -> Conversation {
        let mut rng = Rng::new(seed);
        let utts = speakers
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let mut draw = |n: usize| (0..n).map(|_| rng.normal()).collect::<Vec<_>>();
                Utterance {
                    speaker: s.to_string(),
                    label: i % 3,
                    features: PerModality::new(draw(4), draw(3), draw(5)),
                }
            })
            .collect();
        Conversation::new(id, utts).unwrap()
    }

    fn small(config: ModelConfig) -> Model {
        let names = ["x", "y", "z"].map(String::from).to_vec();
        Model::init(config, PerModality::new(4, 3, 5), names, 9).unwrap()
    }

    fn small_config() -> ModelConfig {
        ModelConfig {
            d: 6,
            k: 2,
            ..Default::default()
        }
    }

    #[test]
    fn single_utterance_gives_one_distribution() {
        let m = small(small_config());
        let p = m.predict(&conv("c", &["A"], 1)).unwrap();
        assert_eq!(p.len(), 1);
        assert!(p[0].probabilities.iter().all(|&q| q > 0.0));
        assert!((p[0].probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn classifier_examples() {
        let mut params = ParamStore::new();
        params.insert(CLASSIFIER_WEIGHT, Tensor::zeros(&[4, 4]));
        params.insert(CLASSIFIER_BIAS, Tensor::zeros(&[4]));
        let x = [Tensor::full(&[2, 2], 0.3)];
        let o = [Tensor::full(&[2, 2], -1.0)];
        for p in classify(&x, &o, &params).unwrap() {
            assert!(p.probabilities.iter().all(|&q| (q - 0.25).abs() < 1e-15));
        }
        params.insert(CLASSIFIER_BIAS, Tensor::vector(vec![0.0, 0.0, 50.0, 0.0]));
        let p = classify(&x, &o, &params).unwrap();
        assert_eq!(p[0].predicted, 2);
        assert!(p[0].probabilities[2] > 1.0 - 1e-15);

        let mut two = ParamStore::new();
        two.insert(CLASSIFIER_WEIGHT, Tensor::zeros(&[2, 2]));
        two.insert(CLASSIFIER_BIAS, Tensor::vector(vec![1.0, 0.0]));
        let p = classify(&[Tensor::zeros(&[1, 1])], &[Tensor::zeros(&[1, 1])], &two).unwrap();
        let e = std::f64::consts::E;
        assert!((p[0].probabilities[0] - e / (e + 1.0)).abs() < 1e-15);
        assert!((p[0].probabilities[1] - 1.0 / (e + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn textual_only_classifier_reads_width_2d() {
        let config = ModelConfig {
            modalities: Modalities::new(&[Modality::Textual]).unwrap(),
            ..small_config()
        };
        let m = small(config);
        assert_eq!(m.params.get(CLASSIFIER_WEIGHT).unwrap().shape(), &[3, 12]);
        let tape = Tape::new();
        let b = m.params.bind(&tape);
        let out = forward(&b, &conv("c", &["A", "B", "A"], 2), &m.config).unwrap();
        assert_eq!(out.refined.len(), 1);
        assert_eq!(tape.shape(out.logits), vec![3, 3]);
    }

    #[test]
    fn without_gdf_the_fusion_parameters_are_dead() {
        let config = ModelConfig {
            use_gdf: false,
            ..small_config()
        };
        let mut m = small(config);
        let c = conv("c", &["A", "B", "A", "B"], 3);
        let before = m.predict(&c).unwrap();
        let names: Vec<String> = m.params.names().filter(|n| n.starts_with("fusion.")).cloned().collect();
        assert!(!names.is_empty());
        for n in &names {
            for v in m.params.get_mut(n).unwrap().data_mut() {
                *v += 0.7;
            }
        }
        assert_eq!(m.predict(&c).unwrap(), before);
        let spec = m.loss_spec(&c.labels());
        let grads = m.gradients(&[&c], &spec).unwrap().gradients;
        for n in &names {
            assert!(grads[n].data().iter().all(|&g| g == 0.0), "{n}");
        }
    }

    #[test]
    fn without_speaker_the_speaker_encoders_are_dead() {
        let config = ModelConfig {
            use_speaker: false,
            ..small_config()
        };
        let m = small(config);
        let c = conv("c", &["A", "B", "A"], 4);
        let grads = m.gradients(&[&c], &m.loss_spec(&c.labels())).unwrap().gradients;
        let mut seen = 0;
        for (name, g) in &grads {
            if name.starts_with("encoder.speaker.") {
                seen += 1;
                assert!(g.data().iter().all(|&v| v == 0.0), "{name}");
            }
        }
        assert!(seen > 0);
    }

    #[test]
    fn wrong_feature_width_is_reported_by_module() {
        let m = small(small_config());
        let bad = Conversation::new(
            "bad",
            vec![Utterance {
                speaker: "A".into(),
                label: 0,
                features: PerModality::new(vec![0.0; 4], vec![0.0; 3], vec![0.0; 6]),
            }],
        )
        .unwrap();
        assert!(matches!(m.predict(&bad), Err(Error::Dimension { .. })));
        let err = model_forward(&bad, &m.params, &m.config).unwrap_err();
        assert!(err.to_string().starts_with("encoders:"), "{err}");
    }

    #[test]
    fn batch_order_does_not_change_the_loss() {
        let m = small(small_config());
        let a = conv("a", &["A", "B"], 5);
        let b = conv("b", &["A", "B", "B", "A"], 6);
        let spec = m.loss_spec(&[0, 1, 2]);
        let ab = batch_loss(&m.params, &[&a, &b], &m.config, &spec).unwrap();
        let ba = batch_loss(&m.params, &[&b, &a], &m.config, &spec).unwrap();
        assert!((ab - ba).abs() < 1e-12);
    }

    #[test]
    fn every_fusion_mode_runs() {
        for (gdf, concat) in [(true, true), (false, true), (false, false)] {
            let config = ModelConfig {
                use_gdf: gdf,
                concat_fallback: concat,
                use_context: false,
                ..small_config()
            };
            let m = small(config);
            let p = m.predict(&conv("c", &["A", "B", "C"], 7)).unwrap();
            assert_eq!(p.len(), 3);
        }
    }
}
