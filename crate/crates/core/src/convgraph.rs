//! Multimodal conversation graph.
//!
//! Each utterance contributes one node per active modality. Nodes are laid
//! out in modality blocks, `[a_0 .. a_{N-1}, v_0 .. v_{N-1}, t_0 .. t_{N-1}]`,
//! matching the row-stacked feature matrix the fusion stack consumes.
//!
//! Edges follow two rules: nodes of the same modality are all connected
//! (intra-modal), and the nodes of one utterance are connected across
//! modalities (inter-modal). Every edge is weighted by angular similarity
//! `1 − arccos(cos(x_i, x_j)) / π`, and the propagation matrix is the
//! renormalized `D̃^{-1/2} (A + I) D̃^{-1/2}`.

use std::f64::consts::PI;
use std::io::Write;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::encoders::{Modalities, Modality};
use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var, ROW_NORM_FLOOR};

/// Which of the two edge rules are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeRules {
    pub intra: bool,
    pub inter: bool,
}

impl EdgeRules {
    pub const BOTH: EdgeRules = EdgeRules {
        intra: true,
        inter: true,
    };
}

/// Angular similarity weight of two vectors, in `[0, 1]`.
///
/// A vector with norm below 1e-12 has cosine similarity 0 with anything,
/// giving weight 0.5.
pub fn edge_weight(xi: &[f64], xj: &[f64]) -> Result<f64> {
    if xi.len() != xj.len() {
        return Err(Error::dimension("edge_weight", &[xi.len()], &[xj.len()]));
    }
    let ni = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nj = xj.iter().map(|v| v * v).sum::<f64>().sqrt();
    let sim = if ni < ROW_NORM_FLOOR || nj < ROW_NORM_FLOOR {
        0.0
    } else {
        let dot: f64 = xi.iter().zip(xj).map(|(a, b)| a * b).sum();
        (dot / (ni * nj)).clamp(-1.0, 1.0)
    };
    Ok(1.0 - sim.acos() / PI)
}

/// Node id of `(utterance, modality)` under the block layout.
pub fn node_id(modalities: Modalities, utterances: usize, utterance: usize, m: Modality) -> Option<usize> {
    modalities.position(m).map(|block| block * utterances + utterance)
}

/// 0/1 symmetric mask of the edges the rules create, zero diagonal.
pub fn edge_mask(modalities: Modalities, utterances: usize, rules: EdgeRules) -> Tensor {
    let blocks = modalities.len();
    let n = blocks * utterances;
    let mut mask = Tensor::zeros(&[n, n]);
    for b in 0..blocks {
        for i in 0..utterances {
            for j in 0..utterances {
                if rules.intra && i != j {
                    mask.set(b * utterances + i, b * utterances + j, 1.0);
                }
            }
            for b2 in 0..blocks {
                if rules.inter && b != b2 {
                    mask.set(b * utterances + i, b2 * utterances + i, 1.0);
                }
            }
        }
    }
    mask
}

/// Closed-form undirected edge count for `m` modalities and `n` utterances.
pub fn expected_edge_count(modalities: usize, utterances: usize, rules: EdgeRules) -> usize {
    let intra = modalities * utterances * utterances.saturating_sub(1) / 2;
    let inter = utterances * modalities * modalities.saturating_sub(1) / 2;
    intra * rules.intra as usize + inter * rules.inter as usize
}

/// Graph construction recorded on a tape, so gradients flow through the
/// edge weights into the node embeddings.
#[derive(Debug, Clone, Copy)]
pub struct GraphVars {
    pub adjacency: Var,
    pub propagation: Var,
}

/// Builds adjacency and propagation matrices from stacked node embeddings
/// `nodes` (`mN × d`) and a constant edge mask.
pub fn build_graph_on_tape(tape: &Tape, nodes: Var, mask: &Tensor) -> Result<GraphVars> {
    let n = tape.shape(nodes)[0];
    if mask.shape() != [n, n] {
        return Err(Error::dimension("convgraph::build_graph", &tape.shape(nodes), mask.shape()));
    }
    let unit = tape.row_normalize(nodes);
    let cosine = tape.clamp(tape.matmul_nt(unit, unit)?, -1.0, 1.0);
    let similarity = tape.affine(tape.acos(cosine), -1.0 / PI, 1.0);
    // zero-norm rows have cosine 0 with everything, i.e. weight 0.5
    let adjacency = tape.mul(similarity, tape.constant(mask.clone()))?;
    let propagation = renormalize_on_tape(tape, adjacency)?;
    Ok(GraphVars {
        adjacency,
        propagation,
    })
}

/// `D̃^{-1/2} (A + I) D̃^{-1/2}` on the tape.
pub fn renormalize_on_tape(tape: &Tape, adjacency: Var) -> Result<Var> {
    let n = tape.shape(adjacency)[0];
    let with_loops = tape.add(adjacency, tape.constant(Tensor::eye(n)))?;
    let inv_sqrt_degree = tape.powf(tape.row_sum(with_loops), -0.5);
    tape.sym_scale(with_loops, inv_sqrt_degree)
}

/// `D̃^{-1/2} (A + I) D̃^{-1/2}` for a symmetric, non-negative adjacency
/// with zero diagonal.
pub fn renormalize(adjacency: &Tensor) -> Result<Tensor> {
    let (n, m) = adjacency.dims2();
    if n != m {
        return Err(Error::dimension("renormalize", adjacency.shape(), &[m, n]));
    }
    let mut out = adjacency.clone();
    for i in 0..n {
        let v = out.get(i, i) + 1.0;
        out.set(i, i, v);
    }
    let scale: Vec<f64> = (0..n)
        .map(|i| out.row(i).iter().sum::<f64>().powf(-0.5))
        .collect();
    for i in 0..n {
        for j in 0..n {
            let v = out.get(i, j) * scale[i] * scale[j];
            out.set(i, j, v);
        }
    }
    Ok(out)
}

/// A conversation graph with materialized matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct ConversationGraph {
    pub modalities: Modalities,
    pub utterances: usize,
    pub mask: Tensor,
    pub adjacency: Tensor,
    pub propagation: Tensor,
}

impl ConversationGraph {
    pub fn node_count(&self) -> usize {
        self.modalities.len() * self.utterances
    }

    pub fn node_id(&self, utterance: usize, m: Modality) -> Option<usize> {
        node_id(self.modalities, self.utterances, utterance, m)
    }

    /// Undirected edges `(i, j, weight)` with `i < j`.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let n = self.node_count();
        let mut out = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if self.mask.get(i, j) != 0.0 {
                    out.push((i, j, self.adjacency.get(i, j)));
                }
            }
        }
        out
    }

    /// Writes one `node_i node_j weight` line per undirected edge, weights
    /// with 17 significant digits.
    pub fn write_edge_list<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (i, j, w) in self.edges() {
            writeln!(out, "{i} {j} {w:.16e}")?;
        }
        Ok(())
    }
}

/// Builds the graph for `utterances` utterances from per-modality node
/// embeddings (`N × d` each, in a, v, t order restricted to `modalities`).
pub fn build_graph(modalities: Modalities, nodes: &[Tensor], rules: EdgeRules) -> Result<ConversationGraph> {
    if nodes.len() != modalities.len() {
        return Err(Error::Contract(format!(
            "build_graph: {} node matrices for {} modalities",
            nodes.len(),
            modalities.len()
        )));
    }
    let utterances = nodes[0].rows();
    if utterances == 0 {
        return Err(Error::Contract("build_graph: conversation has no utterances".into()));
    }
    let tape = Tape::new();
    let parts: Vec<Var> = nodes.iter().map(|t| tape.constant(t.clone())).collect();
    let stacked = tape.concat_rows(&parts)?;
    for t in nodes {
        if t.rows() != utterances {
            return Err(Error::dimension("build_graph", nodes[0].shape(), t.shape()));
        }
    }
    if !rules.intra && !rules.inter {
        warn!("both edge rules are off: the graph is edgeless and propagation is the identity");
    }
    let mask = edge_mask(modalities, utterances, rules);
    let vars = build_graph_on_tape(&tape, stacked, &mask)?;
    let adjacency = tape.value(vars.adjacency).clone();
    let propagation = tape.value(vars.propagation).clone();
    Ok(ConversationGraph {
        modalities,
        utterances,
        mask,
        adjacency,
        propagation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn random_nodes(m: usize, n: usize, d: usize, seed: u64) -> Vec<Tensor> {
        let mut rng = Rng::new(seed);
        (0..m).map(|_| rng.uniform_tensor(&[n, d], 1.0)).collect()
    }

    #[test]
    fn edge_weight_fixed_points() {
        let x = [0.3, -1.2, 2.0];
        assert_eq!(edge_weight(&x, &x).unwrap(), 1.0);
        assert_eq!(edge_weight(&[1.0, 0.0], &[0.0, 2.0]).unwrap(), 0.5);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_eq!(edge_weight(&x, &neg).unwrap(), 0.0);
        assert_eq!(edge_weight(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 0.5);
        assert!(edge_weight(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn four_utterances_both_rules_give_thirty_edges() {
        // 3 complete graphs of 4 nodes (6 edges each) + 3 edges per utterance
        let g = build_graph(Modalities::ALL, &random_nodes(3, 4, 5, 1), EdgeRules::BOTH).unwrap();
        assert_eq!(g.edges().len(), 3 * 6 + 3 * 4);
    }

    #[test]
    fn one_utterance_has_only_inter_modal_edges() {
        let g = build_graph(Modalities::ALL, &random_nodes(3, 1, 4, 2), EdgeRules::BOTH).unwrap();
        assert_eq!(g.edges().iter().map(|e| (e.0, e.1)).collect::<Vec<_>>(), vec![(0, 1), (0, 2), (1, 2)]);
    }

    #[test]
    fn without_inter_edges_the_modalities_split_into_components() {
        let rules = EdgeRules {
            intra: true,
            inter: false,
        };
        let g = build_graph(Modalities::ALL, &random_nodes(3, 4, 4, 3), rules).unwrap();
        // union-find over the edge list
        let mut parent: Vec<usize> = (0..12).collect();
        fn find(p: &mut Vec<usize>, x: usize) -> usize {
            if p[x] != x {
                let r = find(p, p[x]);
                p[x] = r;
            }
            p[x]
        }
        for (i, j, _) in g.edges() {
            let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
            parent[ri] = rj;
        }
        let mut sizes = std::collections::HashMap::new();
        for x in 0..12 {
            *sizes.entry(find(&mut parent, x)).or_insert(0) += 1;
        }
        let mut sizes: Vec<usize> = sizes.into_values().collect();
        sizes.sort();
        assert_eq!(sizes, vec![4, 4, 4]);
        assert_eq!(g.edges().len(), 18);
    }

    #[test]
    fn renormalize_examples() {
        assert_eq!(renormalize(&Tensor::zeros(&[3, 3])).unwrap(), Tensor::eye(3));
        let a = Tensor::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
        let p = renormalize(&a).unwrap();
        for v in p.data() {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn tape_and_plain_renormalization_agree() {
        let g = build_graph(Modalities::ALL, &random_nodes(3, 5, 4, 4), EdgeRules::BOTH).unwrap();
        let plain = renormalize(&g.adjacency).unwrap();
        assert!(plain.max_abs_diff(&g.propagation) < 1e-15);
    }

    #[test]
    fn tape_weights_match_pairwise_edge_weight() {
        let nodes = random_nodes(2, 3, 4, 5);
        let two = Modalities::new(&[Modality::Visual, Modality::Textual]).unwrap();
        let g = build_graph(two, &nodes, EdgeRules::BOTH).unwrap();
        let rows: Vec<&[f64]> = nodes.iter().flat_map(|t| (0..3).map(move |i| t.row(i))).collect();
        for (i, j, w) in g.edges() {
            assert!((w - edge_weight(rows[i], rows[j]).unwrap()).abs() < 1e-12);
        }
        assert_eq!(g.node_id(2, Modality::Textual), Some(5));
        assert_eq!(g.node_id(0, Modality::Acoustic), None);
    }

    #[test]
    fn edge_list_dump_uses_seventeen_significant_digits() {
        let g = build_graph(Modalities::ALL, &random_nodes(3, 1, 3, 6), EdgeRules::BOTH).unwrap();
        let mut buf = Vec::new();
        g.write_edge_list(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        for (line, (i, j, w)) in lines.iter().zip(g.edges()) {
            let fields: Vec<&str> = line.split(' ').collect();
            assert_eq!(fields[0].parse::<usize>().unwrap(), i);
            assert_eq!(fields[1].parse::<usize>().unwrap(), j);
            let mantissa = fields[2].split('e').next().unwrap().replace(['.', '-'], "");
            assert_eq!(mantissa.len(), 17);
            assert_eq!(fields[2].parse::<f64>().unwrap(), w);
        }
    }
}
