//! Modality encoders: context embeddings, per-speaker embeddings and the
//! node initialization `x = c + γ·s`.
//!
//! Every function here records onto the tape behind a [`Binder`] so the
//! same code serves inference, training and gradient checks.

mod conversation;
mod gru;

pub use conversation::{Conversation, Modalities, Modality, PerModality, Utterance};
pub use gru::{bigru, init_bigru, init_gru};

use crate::error::{Error, Result};
use crate::numerics::{Binder, ParamStore, Rng, Var};

/// Per-modality encoder results, each `N × d`, for the active modalities.
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    pub modalities: Modalities,
    pub context: Vec<Var>,
    /// Absent when speaker embeddings are switched off.
    pub speaker: Option<Vec<Var>>,
    pub nodes: Vec<Var>,
}

impl EncoderOutput {
    /// Node embedding of modality `m`, if active.
    pub fn node(&self, m: Modality) -> Option<Var> {
        self.modalities.position(m).map(|i| self.nodes[i])
    }
}

fn check_width(d: usize) -> Result<()> {
    if d < 2 || !d.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "embedding width d = {d} must be even and at least 2 for the bidirectional split"
        )));
    }
    Ok(())
}

/// Registers every encoder parameter for feature widths `dims` and
/// embedding width `d`.
pub fn init_encoder_params(
    store: &mut ParamStore,
    dims: &PerModality<usize>,
    d: usize,
    rng: &mut Rng,
) -> Result<()> {
    check_width(d)?;
    for m in Modality::ALL {
        let input = *dims.get(m);
        let bound = 1.0 / (input as f64).sqrt();
        store.insert(format!("encoder.context.{m}.w"), rng.uniform_tensor(&[d, input], bound));
        store.insert(format!("encoder.context.{m}.b"), rng.uniform_tensor(&[d], bound));
    }
    init_bigru(store, "encoder.context.t", dims.t, d / 2, rng);
    for m in Modality::ALL {
        init_bigru(store, &format!("encoder.speaker.{m}"), *dims.get(m), d / 2, rng);
    }
    Ok(())
}

fn features(binder: &Binder<'_>, conv: &Conversation, m: Modality, expected: Option<usize>) -> Result<Var> {
    let t = conv.feature_matrix(m);
    if let Some(want) = expected {
        if t.cols() != want {
            return Err(Error::dimension("encoders::features", t.shape(), &[conv.len(), want]));
        }
    }
    Ok(binder.tape().constant(t))
}

fn affine(binder: &Binder<'_>, m: Modality, x: Var) -> Result<Var> {
    let w = binder.get(&format!("encoder.context.{m}.w"))?;
    let b = binder.get(&format!("encoder.context.{m}.b"))?;
    binder.tape().linear(x, w, b)
}

fn expected_width(binder: &Binder<'_>, prefix: &str) -> Option<usize> {
    binder.peek(prefix).map(|t| t.cols())
}

/// Context embeddings `c^δ`: a bidirectional recurrence over the textual
/// stream and an affine map for acoustic and visual features. With
/// `use_context` off the textual stream also takes the affine map.
pub fn encode_context(
    binder: &Binder<'_>,
    conv: &Conversation,
    modalities: Modalities,
    use_context: bool,
) -> Result<Vec<Var>> {
    modalities
        .iter()
        .map(|m| {
            let x = features(binder, conv, m, expected_width(binder, &format!("encoder.context.{m}.w")))?;
            if m == Modality::Textual && use_context {
                let out = bigru(binder, "encoder.context.t", x)?;
                check_width(binder.tape().shape(out)[1])?;
                Ok(out)
            } else {
                affine(binder, m, x)
            }
        })
        .collect()
}

/// Speaker embeddings `s^δ`. Each speaker's own utterances, in conversation
/// order, run through a bidirectional recurrence whose parameters are shared
/// by all speakers of that modality; rows come back in utterance order.
pub fn encode_speaker(binder: &Binder<'_>, conv: &Conversation, modalities: Modalities) -> Result<Vec<Var>> {
    let tape = binder.tape();
    let groups: Vec<Vec<usize>> = conv
        .speaker_groups()
        .into_iter()
        .filter(|g| !g.is_empty())
        .collect();
    // position of utterance i inside the concatenation of speaker outputs
    let mut inverse = vec![0; conv.len()];
    for (pos, &utt) in groups.iter().flatten().enumerate() {
        inverse[utt] = pos;
    }

    modalities
        .iter()
        .map(|m| {
            let prefix = format!("encoder.speaker.{m}");
            let x = features(binder, conv, m, expected_width(binder, &format!("{prefix}.fwd.w_ih")))?;
            let mut parts = Vec::with_capacity(groups.len());
            for group in &groups {
                let own = tape.gather_rows(x, group)?;
                parts.push(bigru(binder, &prefix, own)?);
            }
            let stacked = tape.concat_rows(&parts)?;
            tape.gather_rows(stacked, &inverse)
        })
        .collect()
}

/// `x^δ = c^δ + γ^δ · s^δ`; with no speaker embeddings the nodes are the
/// context embeddings.
pub fn init_node_embeddings(
    binder: &Binder<'_>,
    modalities: Modalities,
    context: &[Var],
    speaker: Option<&[Var]>,
    gamma: &PerModality<f64>,
) -> Result<Vec<Var>> {
    let tape = binder.tape();
    let Some(speaker) = speaker else {
        return Ok(context.to_vec());
    };
    modalities
        .iter()
        .zip(context.iter().zip(speaker))
        .map(|(m, (&c, &s))| tape.add(c, tape.scale(s, *gamma.get(m))))
        .collect()
}

/// Runs the three encoder stages for one conversation.
pub fn encode(
    binder: &Binder<'_>,
    conv: &Conversation,
    modalities: Modalities,
    use_context: bool,
    use_speaker: bool,
    gamma: &PerModality<f64>,
) -> Result<EncoderOutput> {
    let context = encode_context(binder, conv, modalities, use_context)?;
    let speaker = if use_speaker {
        Some(encode_speaker(binder, conv, modalities)?)
    } else {
        None
    };
    let nodes = init_node_embeddings(binder, modalities, &context, speaker.as_deref(), gamma)?;
    Ok(EncoderOutput {
        modalities,
        context,
        speaker,
        nodes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Tape, Tensor};

    fn utt(speaker: &str, a: Vec<f64>, v: Vec<f64>, t: Vec<f64>) -> Utterance {
        Utterance {
            speaker: speaker.into(),
            label: 0,
            features: PerModality::new(a, v, t),
        }
    }

    fn conversation(speakers: &[&str], seed: u64) -> Conversation {
        let mut rng = Rng::new(seed);
        let utts = speakers
            .iter()
            .map(|s| {
                let mut draw = |n: usize| (0..n).map(|_| rng.normal()).collect::<Vec<_>>();
                utt(s, draw(3), draw(2), draw(5))
            })
            .collect();
        Conversation::new("c", utts).unwrap()
    }

    fn store(d: usize, seed: u64) -> ParamStore {
        let mut s = ParamStore::new();
        init_encoder_params(&mut s, &PerModality::new(3, 2, 5), d, &mut Rng::new(seed)).unwrap();
        s
    }

    fn values(tape: &Tape, vars: &[Var]) -> Vec<Tensor> {
        vars.iter().map(|&v| tape.value(v).clone()).collect()
    }

    #[test]
    fn odd_width_is_a_configuration_error() {
        let mut s = ParamStore::new();
        let err = init_encoder_params(&mut s, &PerModality::new(3, 2, 5), 7, &mut Rng::new(0));
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn identity_affine_passes_features_through() {
        let conv = conversation(&["A", "B"], 1);
        let mut s = store(4, 0);
        s.insert("encoder.context.a.w", Tensor::eye(3));
        s.insert("encoder.context.a.b", Tensor::zeros(&[3]));
        let tape = Tape::new();
        let b = s.bind(&tape);
        let only_a = Modalities::new(&[Modality::Acoustic]).unwrap();
        let c = encode_context(&b, &conv, only_a, true).unwrap();
        assert_eq!(*tape.value(c[0]), conv.feature_matrix(Modality::Acoustic));
    }

    #[test]
    fn outputs_have_width_d_for_every_modality() {
        let conv = conversation(&["A"], 2);
        let s = store(6, 0);
        let tape = Tape::new();
        let out = encode(&s.bind(&tape), &conv, Modalities::ALL, true, true, &PerModality::new(1.0, 1.0, 1.0))
            .unwrap();
        for v in out.context.iter().chain(out.speaker.as_ref().unwrap()).chain(&out.nodes) {
            assert_eq!(tape.shape(*v), vec![1, 6]);
        }
    }

    #[test]
    fn zero_recurrent_parameters_on_zero_input_give_zero_context() {
        let zeros = |n| vec![0.0; n];
        let conv = Conversation::new(
            "z",
            (0..3).map(|_| utt("A", zeros(3), zeros(2), zeros(5))).collect(),
        )
        .unwrap();
        let mut s = store(4, 0);
        for (_, t) in s.iter_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let tape = Tape::new();
        let only_t = Modalities::new(&[Modality::Textual]).unwrap();
        let c = encode_context(&s.bind(&tape), &conv, only_t, true).unwrap();
        assert_eq!(*tape.value(c[0]), Tensor::zeros(&[3, 4]));
    }

    #[test]
    fn textual_context_is_bidirectional() {
        let conv = conversation(&["A", "B", "A"], 3);
        let s = store(4, 5);
        let only_t = Modalities::new(&[Modality::Textual]).unwrap();
        let run = |conv: &Conversation| {
            let tape = Tape::new();
            let c = encode_context(&s.bind(&tape), conv, only_t, true).unwrap();
            let v = tape.value(c[0]).clone();
            v
        };
        let base = run(&conv);
        for other in [0, 2] {
            let mut utts = conv.utterances().to_vec();
            utts[other].features.t[0] += 0.5;
            let changed = run(&Conversation::new("c", utts).unwrap());
            assert_ne!(base.row(1), changed.row(1), "utterance 1 ignores utterance {other}");
        }
    }

    #[test]
    fn speaker_rows_depend_only_on_own_utterances() {
        let conv = conversation(&["A", "B", "A", "B"], 4);
        let s = store(4, 6);
        let run = |conv: &Conversation| {
            let tape = Tape::new();
            let out = encode_speaker(&s.bind(&tape), conv, Modalities::ALL).unwrap();
            values(&tape, &out)
        };
        let base = run(&conv);
        let mut utts = conv.utterances().to_vec();
        for i in [1, 3] {
            utts[i].features.a[0] += 1.0;
            utts[i].features.v[1] -= 2.0;
            utts[i].features.t[2] += 0.7;
        }
        let perturbed = run(&Conversation::new("c", utts).unwrap());
        for (b, p) in base.iter().zip(&perturbed) {
            assert_eq!(b.row(0), p.row(0));
            assert_eq!(b.row(2), p.row(2));
            assert_ne!(b.row(1), p.row(1));
        }
    }

    #[test]
    fn single_speaker_equals_one_sequence() {
        let conv = conversation(&["A", "A", "A"], 7);
        let s = store(4, 8);
        let tape = Tape::new();
        let b = s.bind(&tape);
        let only_v = Modalities::new(&[Modality::Visual]).unwrap();
        let out = encode_speaker(&b, &conv, only_v).unwrap();
        let x = tape.constant(conv.feature_matrix(Modality::Visual));
        let direct = bigru(&b, "encoder.speaker.v", x).unwrap();
        assert_eq!(*tape.value(out[0]), *tape.value(direct));
    }

    #[test]
    fn speaker_rows_return_in_utterance_order() {
        // speakers (A, B, A): A's sequence is utterances 0 and 2, B's is 1
        let conv = conversation(&["A", "B", "A"], 9);
        let s = store(4, 10);
        let tape = Tape::new();
        let b = s.bind(&tape);
        let only_t = Modalities::new(&[Modality::Textual]).unwrap();
        let out = tape.value(encode_speaker(&b, &conv, only_t).unwrap()[0]).clone();

        let x = conv.feature_matrix(Modality::Textual);
        let a_rows = tape.constant(Tensor::from_rows(&[x.row(0), x.row(2)]).unwrap());
        let b_rows = tape.constant(Tensor::from_rows(&[x.row(1)]).unwrap());
        let a_out = tape.value(bigru(&b, "encoder.speaker.t", a_rows).unwrap()).clone();
        let b_out = tape.value(bigru(&b, "encoder.speaker.t", b_rows).unwrap()).clone();
        assert_eq!(out.row(0), a_out.row(0));
        assert_eq!(out.row(1), b_out.row(0));
        assert_eq!(out.row(2), a_out.row(1));
    }

    #[test]
    fn relabeling_speakers_changes_nothing() {
        let conv = conversation(&["A", "B", "B", "A", "C"], 11);
        let renamed: Vec<Utterance> = conv
            .utterances()
            .iter()
            .map(|u| {
                let mut u = u.clone();
                u.speaker = match u.speaker.as_str() {
                    "A" => "C".into(),
                    "B" => "A".into(),
                    _ => "B".into(),
                };
                u
            })
            .collect();
        let renamed = Conversation::new("c", renamed).unwrap();
        let s = store(4, 12);
        let run = |conv: &Conversation| {
            let tape = Tape::new();
            let out = encode_speaker(&s.bind(&tape), conv, Modalities::ALL).unwrap();
            values(&tape, &out)
        };
        assert_eq!(run(&conv), run(&renamed));
    }

    #[test]
    fn node_initialization_examples() {
        let tape = Tape::new();
        let s = ParamStore::new();
        let b = s.bind(&tape);
        let only_a = Modalities::new(&[Modality::Acoustic]).unwrap();
        let c = tape.constant(Tensor::from_rows(&[[2.0, 4.0]]).unwrap());
        let sp = tape.constant(Tensor::from_rows(&[[2.0, 0.0]]).unwrap());
        let half = PerModality::new(0.5, 0.5, 0.5);
        let x = init_node_embeddings(&b, only_a, &[c], Some(&[sp]), &half).unwrap();
        assert_eq!(tape.value(x[0]).data(), &[3.0, 4.0]);

        let zero = PerModality::new(0.0, 0.0, 0.0);
        let x = init_node_embeddings(&b, only_a, &[c], Some(&[sp]), &zero).unwrap();
        assert_eq!(*tape.value(x[0]), *tape.value(c));

        let neg = tape.scale(c, -1.0);
        let one = PerModality::new(1.0, 1.0, 1.0);
        let x = init_node_embeddings(&b, only_a, &[c], Some(&[neg]), &one).unwrap();
        assert_eq!(*tape.value(x[0]), Tensor::zeros(&[1, 2]));
    }
}
