//! Straight-line evaluation of the training objective, generic over the
//! scalar type.
//!
//! This is an independent transcription of the network on nested vectors,
//! with no tape. With `f64` it cross-checks the recorded forward pass; with
//! [`Dd`](crate::numerics::Dd) it gives finite differences whose roundoff
//! sits far below the step size, which the gradient suite relies on.

use std::cell::RefCell;
use std::f64::consts::PI;

use indexmap::IndexSet;

use super::{FusionMode, LossKind, LossSpec, ModelConfig, CLASSIFIER_BIAS, CLASSIFIER_WEIGHT, CONCAT_BIAS, CONCAT_WEIGHT};
use crate::convgraph::edge_mask;
use crate::encoders::{Conversation, Modality};
use crate::error::{Error, Result};
use crate::fusion::{beta, conv_weight_name, gate_bias_name, gate_weight_name};
use crate::numerics::{ParamStore, Real, ROW_NORM_FLOOR};

type Mat<T> = Vec<Vec<T>>;

/// Parameter access that remembers what was read.
struct Reader<'a> {
    params: &'a ParamStore,
    read: RefCell<IndexSet<String>>,
}

impl Reader<'_> {
    fn tensor(&self, name: &str) -> Result<&crate::numerics::Tensor> {
        let t = self
            .params
            .get(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter `{name}`")))?;
        self.read.borrow_mut().insert(name.to_string());
        Ok(t)
    }

    fn mat<T: Real>(&self, name: &str) -> Result<Mat<T>> {
        let t = self.tensor(name)?;
        Ok((0..t.rows()).map(|r| lift(t.row(r))).collect())
    }

    fn vec<T: Real>(&self, name: &str) -> Result<Vec<T>> {
        Ok(lift(self.tensor(name)?.data()))
    }
}

fn lift<T: Real>(v: &[f64]) -> Vec<T> {
    v.iter().map(|&x| T::from_f64(x)).collect()
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// `W x + b` for one row.
fn affine_row<T: Real>(x: &[T], w: &Mat<T>, b: &[T]) -> Vec<T> {
    w.iter().zip(b).map(|(row, &bi)| dot(row, x) + bi).collect()
}

fn linear<T: Real>(x: &Mat<T>, w: &Mat<T>, b: &[T]) -> Mat<T> {
    x.iter().map(|r| affine_row(r, w, b)).collect()
}

fn matmul<T: Real>(a: &Mat<T>, b: &Mat<T>) -> Mat<T> {
    let cols = b.first().map_or(0, Vec::len);
    a.iter()
        .map(|r| {
            (0..cols)
                .map(|j| r.iter().zip(b).fold(T::zero(), |acc, (&x, brow)| acc + x * brow[j]))
                .collect()
        })
        .collect()
}

fn gru_direction<T: Real>(reader: &Reader<'_>, prefix: &str, xs: &[Vec<T>], reverse: bool) -> Result<Mat<T>> {
    let w_ih = reader.mat::<T>(&format!("{prefix}.w_ih"))?;
    let w_hh = reader.mat::<T>(&format!("{prefix}.w_hh"))?;
    let b_ih = reader.vec::<T>(&format!("{prefix}.b_ih"))?;
    let b_hh = reader.vec::<T>(&format!("{prefix}.b_hh"))?;
    let hs = w_ih.len() / 3;
    let mut h = vec![T::zero(); hs];
    let mut out = vec![Vec::new(); xs.len()];
    let order: Vec<usize> = if reverse {
        (0..xs.len()).rev().collect()
    } else {
        (0..xs.len()).collect()
    };
    for t in order {
        let gx = affine_row(&xs[t], &w_ih, &b_ih);
        let gh = affine_row(&h, &w_hh, &b_hh);
        h = (0..hs)
            .map(|j| {
                let r = (gx[j] + gh[j]).sigmoid();
                let z = (gx[hs + j] + gh[hs + j]).sigmoid();
                let n = (gx[2 * hs + j] + r * gh[2 * hs + j]).tanh();
                (T::one() - z) * n + z * h[j]
            })
            .collect();
        out[t] = h.clone();
    }
    Ok(out)
}

fn bigru<T: Real>(reader: &Reader<'_>, prefix: &str, xs: &[Vec<T>]) -> Result<Mat<T>> {
    let f = gru_direction(reader, &format!("{prefix}.fwd"), xs, false)?;
    let b = gru_direction(reader, &format!("{prefix}.bwd"), xs, true)?;
    Ok(f.into_iter().zip(b).map(|(mut l, r)| {
        l.extend(r);
        l
    }).collect())
}

fn node_embeddings<T: Real>(reader: &Reader<'_>, conv: &Conversation, config: &ModelConfig) -> Result<Vec<Mat<T>>> {
    let gammas = config.gammas();
    config
        .modalities
        .iter()
        .map(|m| {
            let x: Mat<T> = conv.utterances().iter().map(|u| lift(u.features.get(m))).collect();
            let mut c = if m == Modality::Textual && config.use_context {
                bigru(reader, "encoder.context.t", &x)?
            } else {
                let w = reader.mat(&format!("encoder.context.{m}.w"))?;
                let b = reader.vec(&format!("encoder.context.{m}.b"))?;
                linear(&x, &w, &b)
            };
            if config.use_speaker {
                let gamma = T::from_f64(*gammas.get(m));
                for group in conv.speaker_groups().iter().filter(|g| !g.is_empty()) {
                    let own: Mat<T> = group.iter().map(|&i| x[i].clone()).collect();
                    let s = bigru(reader, &format!("encoder.speaker.{m}"), &own)?;
                    for (&i, row) in group.iter().zip(s) {
                        for (cv, sv) in c[i].iter_mut().zip(row) {
                            *cv = *cv + gamma * sv;
                        }
                    }
                }
            }
            Ok(c)
        })
        .collect()
}

fn propagation<T: Real>(nodes: &Mat<T>, mask: &crate::numerics::Tensor) -> Mat<T> {
    let unit: Mat<T> = nodes
        .iter()
        .map(|r| {
            let norm = dot(r, r).sqrt();
            if norm.to_f64() < ROW_NORM_FLOOR {
                vec![T::zero(); r.len()]
            } else {
                r.iter().map(|&v| v / norm).collect()
            }
        })
        .collect();
    let n = nodes.len();
    let inv_pi = T::one() / T::from_f64(PI);
    let mut a: Mat<T> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let m = mask.get(i, j);
                    if m == 0.0 {
                        return T::zero();
                    }
                    let cos = dot(&unit[i], &unit[j]).clamp(-1.0, 1.0);
                    (T::one() - cos.acos() * inv_pi) * T::from_f64(m)
                })
                .collect()
        })
        .collect();
    for (i, row) in a.iter_mut().enumerate() {
        row[i] = row[i] + T::one();
    }
    let scale: Vec<T> = a
        .iter()
        .map(|r| T::one() / r.iter().fold(T::zero(), |acc, &v| acc + v).sqrt())
        .collect();
    for i in 0..n {
        for j in 0..n {
            a[i][j] = a[i][j] * scale[i] * scale[j];
        }
    }
    a
}

fn gdf<T: Real>(reader: &Reader<'_>, h0: &Mat<T>, p: &Mat<T>, config: &ModelConfig) -> Result<Mat<T>> {
    let d = config.d;
    let n = h0.len();
    if config.k == 0 {
        return Ok(h0.clone());
    }
    let gate = |g: &str| -> Result<(Mat<T>, Vec<T>)> {
        Ok((reader.mat(&gate_weight_name(g))?, reader.vec(&gate_bias_name(g))?))
    };
    let (wu, wf, wo, wc) = (gate("u")?, gate("f")?, gate("o")?, gate("c")?);
    let alpha = config.alpha;
    let mut g = vec![vec![T::zero(); d]; n];
    let mut c = vec![vec![T::zero(); d]; n];
    let mut h_prime = h0.clone();
    for k in 1..=config.k {
        let b = beta(k, config.rho)?;
        let mut g_next = Vec::with_capacity(n);
        let mut c_next = Vec::with_capacity(n);
        for i in 0..n {
            let input: Vec<T> = g[i].iter().chain(&h_prime[i]).copied().collect();
            let u = affine_row(&input, &wu.0, &wu.1);
            let f = affine_row(&input, &wf.0, &wf.1);
            let o = affine_row(&input, &wo.0, &wo.1);
            let cand = affine_row(&input, &wc.0, &wc.1);
            let mem: Vec<T> = (0..d)
                .map(|j| f[j].sigmoid() * c[i][j] + u[j].sigmoid() * cand[j].tanh())
                .collect();
            g_next.push((0..d).map(|j| o[j].sigmoid() * mem[j].tanh()).collect::<Vec<T>>());
            c_next.push(mem);
        }
        let w = reader.mat::<T>(&conv_weight_name(k - 1))?;
        let propagated = matmul(p, &h_prime);
        let support: Mat<T> = propagated
            .iter()
            .zip(h0)
            .map(|(pr, hr)| {
                pr.iter()
                    .zip(hr)
                    .map(|(&a, &b)| a * T::from_f64(1.0 - alpha) + b * T::from_f64(alpha))
                    .collect()
            })
            .collect();
        let mapped = matmul(&support, &w);
        h_prime = (0..n)
            .map(|i| {
                (0..d)
                    .map(|j| {
                        let mixed = support[i][j] * T::from_f64(1.0 - b) + mapped[i][j] * T::from_f64(b);
                        mixed.relu() + g_next[i][j]
                    })
                    .collect()
            })
            .collect();
        g = g_next;
        c = c_next;
    }
    Ok(h_prime)
}

fn refine<T: Real>(reader: &Reader<'_>, nodes: &[Mat<T>], config: &ModelConfig) -> Result<Vec<Mat<T>>> {
    let n = nodes[0].len();
    let d = config.d;
    match config.fusion_mode() {
        FusionMode::Identity => Ok(nodes.to_vec()),
        FusionMode::Concat => {
            let joined: Mat<T> = (0..n).map(|i| nodes.iter().flat_map(|m| m[i].clone()).collect()).collect();
            let w = reader.mat(CONCAT_WEIGHT)?;
            let b = reader.vec(CONCAT_BIAS)?;
            let fused: Mat<T> = linear(&joined, &w, &b)
                .into_iter()
                .map(|r| r.into_iter().map(Real::relu).collect())
                .collect();
            Ok((0..nodes.len())
                .map(|k| fused.iter().map(|r| r[k * d..(k + 1) * d].to_vec()).collect())
                .collect())
        }
        FusionMode::Gdf => {
            let stacked: Mat<T> = nodes.iter().flatten().cloned().collect();
            let mask = edge_mask(config.modalities, n, config.edge_rules());
            let p = propagation(&stacked, &mask);
            let out = gdf(reader, &stacked, &p, config)?;
            Ok(out.chunks(n).map(<[Vec<T>]>::to_vec).collect())
        }
    }
}

/// Logits of every utterance of `conv`, one row each.
pub fn reference_logits<T: Real>(params: &ParamStore, conv: &Conversation, config: &ModelConfig) -> Result<Mat<T>> {
    let reader = Reader {
        params,
        read: RefCell::default(),
    };
    logits(&reader, conv, config)
}

fn logits<T: Real>(reader: &Reader<'_>, conv: &Conversation, config: &ModelConfig) -> Result<Mat<T>> {
    let nodes = node_embeddings::<T>(reader, conv, config)?;
    let refined = refine(reader, &nodes, config)?;
    let w = reader.mat(CLASSIFIER_WEIGHT)?;
    let b = reader.vec(CLASSIFIER_BIAS)?;
    Ok((0..conv.len())
        .map(|i| {
            let row: Vec<T> = nodes.iter().chain(&refined).flat_map(|m| m[i].clone()).collect();
            affine_row(&row, &w, &b)
        })
        .collect())
}

/// The batch objective: data term plus `η‖Θ‖` over the parameters read.
pub fn reference_objective<T: Real>(
    params: &ParamStore,
    batch: &[&Conversation],
    config: &ModelConfig,
    spec: &LossSpec,
) -> Result<T> {
    let reader = Reader {
        params,
        read: RefCell::default(),
    };
    let mut total = T::zero();
    let mut count = 0usize;
    for conv in batch {
        for (z, y) in logits::<T>(&reader, conv, config)?.into_iter().zip(conv.labels()) {
            let max = z.iter().copied().fold(z[0], Real::max);
            let sum = z.iter().fold(T::zero(), |acc, &v| acc + (v - max).exp());
            let log_p = z[y] - max - sum.ln();
            total = total
                + match spec.kind {
                    LossKind::CrossEntropy => log_p,
                    LossKind::Focal => {
                        let w = spec.class_weights.get(y).copied().unwrap_or(1.0);
                        let miss = T::one() - log_p.exp();
                        T::from_f64(w) * miss.powf(spec.focal_gamma) * log_p
                    }
                };
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Contract("loss over zero utterances".into()));
    }
    let mut loss = -total / T::from_f64(count as f64);
    if spec.eta != 0.0 {
        let mut squares = T::zero();
        for name in reader.read.borrow().iter() {
            squares = params.get(name).expect("read above").data().iter().fold(squares, |acc, &v| {
                let v = T::from_f64(v);
                acc + v * v
            });
        }
        let norm = if spec.squared_norm { squares } else { squares.sqrt() };
        loss = loss + T::from_f64(spec.eta) * norm;
    }
    Ok(loss)
}
