//! Graph-based dynamic fusion.
//!
//! A stack of `K` layers over the stacked node features. Each layer runs a
//! gated memory update across depth,
//!
//! ```text
//! Γ_ε = σ(W_ε [g ‖ H'] + b_ε),  ε ∈ {u, f, o}
//! C̃  = tanh(W_C [g ‖ H'] + b_C)
//! C   = Γ_f ⊙ C_prev + Γ_u ⊙ C̃
//! g   = Γ_o ⊙ tanh(C)
//! ```
//!
//! and a graph convolution with initial residual and identity mapping,
//!
//! ```text
//! H = ReLU(((1 − α) P̃ H'_prev + α H₀) ((1 − β_k) I + β_k W_{k−1}))
//! ```
//!
//! whose sum `H' = H + g` feeds the next layer. Gate parameters are shared
//! by all layers; each layer owns its convolution weight.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Binder, ParamStore, Rng, Tape, Tensor, Var};

pub const GATES: [&str; 4] = ["u", "f", "o", "c"];

/// Depth, residual strength and identity-mapping schedule of the stack.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GdfSettings {
    pub layers: usize,
    pub alpha: f64,
    pub rho: f64,
}

impl GdfSettings {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if !(self.rho > 0.0) {
            return Err(Error::Config(format!("rho must be positive, got {}", self.rho)));
        }
        Ok(())
    }
}

/// Identity-mapping strength of layer `k ≥ 1`: `ln(ρ/k + 1)`.
pub fn beta(k: usize, rho: f64) -> Result<f64> {
    if k == 0 {
        return Err(Error::Contract("beta: layers are numbered from 1".into()));
    }
    if !(rho > 0.0) {
        return Err(Error::Contract(format!("beta: rho must be positive, got {rho}")));
    }
    Ok((rho / k as f64).ln_1p())
}

pub fn gate_weight_name(gate: &str) -> String {
    format!("fusion.gate.{gate}.w")
}

pub fn gate_bias_name(gate: &str) -> String {
    format!("fusion.gate.{gate}.b")
}

pub fn conv_weight_name(layer: usize) -> String {
    format!("fusion.conv.{layer}.w")
}

/// Registers gate weights (`d × 2d`), gate biases and `layers` convolution
/// weights (`d × d`). Biases start at zero except the forget gate's, which
/// starts at `forget_bias`.
pub fn init_fusion_params(store: &mut ParamStore, d: usize, layers: usize, forget_bias: f64, rng: &mut Rng) {
    let gate_bound = 1.0 / ((2 * d) as f64).sqrt();
    for gate in GATES {
        store.insert(gate_weight_name(gate), rng.uniform_tensor(&[d, 2 * d], gate_bound));
        let b = if gate == "f" { forget_bias } else { 0.0 };
        store.insert(gate_bias_name(gate), Tensor::full(&[d], b));
    }
    let conv_bound = 1.0 / (d as f64).sqrt();
    for k in 0..layers {
        store.insert(conv_weight_name(k), rng.uniform_tensor(&[d, d], conv_bound));
    }
}

/// Gate parameters bound to a tape.
#[derive(Debug, Clone, Copy)]
pub struct GateVars {
    pub update: (Var, Var),
    pub forget: (Var, Var),
    pub output: (Var, Var),
    pub candidate: (Var, Var),
}

impl GateVars {
    pub fn bind(binder: &Binder<'_>) -> Result<Self> {
        let pair = |g: &str| -> Result<(Var, Var)> {
            Ok((binder.get(&gate_weight_name(g))?, binder.get(&gate_bias_name(g))?))
        };
        Ok(GateVars {
            update: pair("u")?,
            forget: pair("f")?,
            output: pair("o")?,
            candidate: pair("c")?,
        })
    }
}

/// Node features, gate memory and gate output after one layer.
#[derive(Debug, Clone, Copy)]
pub struct LayerState {
    pub h_prime: Var,
    pub memory: Var,
    pub gate: Var,
}

/// One gated memory update; returns `(g, C)`.
pub fn gate_step(tape: &Tape, gates: &GateVars, g_prev: Var, h_prime_prev: Var, c_prev: Var) -> Result<(Var, Var)> {
    let shape = tape.shape(h_prime_prev);
    for v in [g_prev, c_prev] {
        if tape.shape(v) != shape {
            return Err(Error::dimension("fusion::gate_step", &shape, &tape.shape(v)));
        }
    }
    let input = tape.concat_cols(&[g_prev, h_prime_prev])?;
    let open = |(w, b): (Var, Var)| -> Result<Var> { Ok(tape.sigmoid(tape.linear(input, w, b)?)) };
    let update = open(gates.update)?;
    let forget = open(gates.forget)?;
    let output = open(gates.output)?;
    let (wc, bc) = gates.candidate;
    let candidate = tape.tanh(tape.linear(input, wc, bc)?);
    let memory = tape.add(tape.mul(forget, c_prev)?, tape.mul(update, candidate)?)?;
    let gate = tape.mul(output, tape.tanh(memory))?;
    Ok((gate, memory))
}

/// `ReLU(((1 − α) P̃ H'_prev + α H₀) ((1 − β) I + β W))`.
pub fn conv_step(
    tape: &Tape,
    h_prime_prev: Var,
    h0: Var,
    propagation: Var,
    weight: Var,
    alpha: f64,
    beta: f64,
) -> Result<Var> {
    let propagated = tape.matmul(propagation, h_prime_prev)?;
    let support = tape.add(tape.scale(propagated, 1.0 - alpha), tape.scale(h0, alpha))?;
    let mapped = tape.matmul(support, weight)?;
    let mixed = tape.add(tape.scale(support, 1.0 - beta), tape.scale(mapped, beta))?;
    Ok(tape.relu(mixed))
}

/// Result of the stack: the final `H'` plus every layer's state.
#[derive(Debug, Clone)]
pub struct GdfOutput {
    pub output: Var,
    pub states: Vec<LayerState>,
}

/// Runs the gated stack from `H'⁽⁰⁾ = H₀`, `g⁽⁰⁾ = C⁽⁰⁾ = 0`. With zero
/// layers the input is returned unchanged.
pub fn gdf_forward(binder: &Binder<'_>, h0: Var, propagation: Var, settings: &GdfSettings) -> Result<GdfOutput> {
    settings.validate()?;
    let tape = binder.tape();
    if settings.layers == 0 {
        return Ok(GdfOutput {
            output: h0,
            states: Vec::new(),
        });
    }
    let (n, d) = {
        let s = tape.shape(h0);
        (s[0], s[1])
    };
    let p_shape = tape.shape(propagation);
    if p_shape != [n, n] {
        return Err(Error::dimension("fusion::gdf_forward", &p_shape, &[n, d]));
    }
    let gates = GateVars::bind(binder)?;
    let mut gate = tape.constant(Tensor::zeros(&[n, d]));
    let mut memory = tape.constant(Tensor::zeros(&[n, d]));
    let mut h_prime = h0;
    let mut states = Vec::with_capacity(settings.layers);
    for k in 1..=settings.layers {
        let (g, c) = gate_step(tape, &gates, gate, h_prime, memory)?;
        let weight = binder.get(&conv_weight_name(k - 1))?;
        let h = conv_step(tape, h_prime, h0, propagation, weight, settings.alpha, beta(k, settings.rho)?)?;
        h_prime = tape.add(h, g)?;
        gate = g;
        memory = c;
        states.push(LayerState {
            h_prime,
            memory,
            gate,
        });
    }
    Ok(GdfOutput {
        output: h_prime,
        states,
    })
}

/// The stack with the gate path removed: `H'⁽ᵏ⁾ = H⁽ᵏ⁾`.
pub fn conv_stack(binder: &Binder<'_>, h0: Var, propagation: Var, settings: &GdfSettings) -> Result<Var> {
    settings.validate()?;
    let tape = binder.tape();
    let mut h = h0;
    for k in 1..=settings.layers {
        let weight = binder.get(&conv_weight_name(k - 1))?;
        h = conv_step(tape, h, h0, propagation, weight, settings.alpha, beta(k, settings.rho)?)?;
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    fn zero_gate_store(d: usize) -> ParamStore {
        let mut s = ParamStore::new();
        for g in GATES {
            s.insert(gate_weight_name(g), Tensor::zeros(&[d, 2 * d]));
            s.insert(gate_bias_name(g), Tensor::zeros(&[d]));
        }
        s
    }

    #[test]
    fn beta_schedule() {
        assert!((beta(1, 0.5).unwrap() - 1.5f64.ln()).abs() < 1e-15);
        assert!((beta(1, 0.5).unwrap() - 0.405465).abs() < 1e-6);
        assert!((beta(2, 0.5).unwrap() - 0.223144).abs() < 1e-6);
        assert!(beta(1_000_000_000, 0.5).unwrap() < 1e-9);
        assert!(beta(0, 0.5).is_err());
        let mut prev = f64::INFINITY;
        for k in 1..64 {
            let b = beta(k, 0.5).unwrap();
            assert!(b > 0.0 && b < prev);
            prev = b;
        }
    }

    #[test]
    fn zero_gate_parameters_are_a_fixed_point() {
        let s = zero_gate_store(2);
        let tape = Tape::new();
        let gates = GateVars::bind(&s.bind(&tape)).unwrap();
        let zeros = tape.constant(Tensor::zeros(&[3, 2]));
        let h = tape.constant(m(&[&[1.0, -2.0], &[0.5, 3.0], &[4.0, 0.0]]));
        let (g, c) = gate_step(&tape, &gates, zeros, h, zeros).unwrap();
        assert_eq!(*tape.value(g), Tensor::zeros(&[3, 2]));
        assert_eq!(*tape.value(c), Tensor::zeros(&[3, 2]));
    }

    #[test]
    fn saturated_gates_carry_memory() {
        let mut s = zero_gate_store(2);
        s.insert(gate_bias_name("f"), Tensor::full(&[2], 60.0));
        s.insert(gate_bias_name("u"), Tensor::full(&[2], -60.0));
        s.insert(gate_bias_name("c"), Tensor::full(&[2], 1.0));
        let tape = Tape::new();
        let gates = GateVars::bind(&s.bind(&tape)).unwrap();
        let g = tape.constant(Tensor::zeros(&[1, 2]));
        let h = tape.constant(m(&[&[0.3, 0.7]]));
        let c_prev = tape.constant(m(&[&[0.25, -1.5]]));
        let (_, c) = gate_step(&tape, &gates, g, h, c_prev).unwrap();
        assert!(tape.value(c).max_abs_diff(&tape.value(c_prev)) < 1e-25);
    }

    #[test]
    fn scalar_gate_hand_computation() {
        // d = 1: W_u = (1, 0), everything else zero, H' = 2 → C̃ = 0, g = 0
        let mut s = zero_gate_store(1);
        s.insert(gate_weight_name("u"), m(&[&[1.0, 0.0]]));
        let tape = Tape::new();
        let gates = GateVars::bind(&s.bind(&tape)).unwrap();
        let zero = tape.constant(Tensor::zeros(&[1, 1]));
        let h = tape.constant(m(&[&[2.0]]));
        let (g, c) = gate_step(&tape, &gates, zero, h, zero).unwrap();
        assert_eq!(tape.value(g).data(), &[0.0]);
        assert_eq!(tape.value(c).data(), &[0.0]);

        // with W_C = (0, 0.5): C̃ = tanh(1), Γ_u = σ(0) = 0.5, Γ_o = 0.5
        s.insert(gate_weight_name("c"), m(&[&[0.0, 0.5]]));
        let tape = Tape::new();
        let gates = GateVars::bind(&s.bind(&tape)).unwrap();
        let zero = tape.constant(Tensor::zeros(&[1, 1]));
        let h = tape.constant(m(&[&[2.0]]));
        let (g, c) = gate_step(&tape, &gates, zero, h, zero).unwrap();
        let memory = 0.5 * 1f64.tanh();
        assert!((tape.value(c).data()[0] - memory).abs() < 1e-15);
        assert!((tape.value(g).data()[0] - 0.5 * memory.tanh()).abs() < 1e-15);
    }

    #[test]
    fn gate_step_rejects_mismatched_state() {
        let s = zero_gate_store(2);
        let tape = Tape::new();
        let gates = GateVars::bind(&s.bind(&tape)).unwrap();
        let a = tape.constant(Tensor::zeros(&[3, 2]));
        let b = tape.constant(Tensor::zeros(&[2, 2]));
        assert!(matches!(gate_step(&tape, &gates, b, a, a), Err(Error::Dimension { .. })));
    }

    #[test]
    fn conv_step_examples() {
        let tape = Tape::new();
        let h_prev = tape.constant(m(&[&[1.0, -1.0], &[-2.0, 3.0]]));
        let h0 = tape.constant(m(&[&[0.5, -0.5], &[2.0, -3.0]]));
        let p = tape.constant(m(&[&[0.2, 0.8], &[0.8, 0.2]]));
        let w = tape.constant(m(&[&[9.0, 1.0], &[-4.0, 2.0]]));

        let out = conv_step(&tape, h_prev, h0, p, w, 1.0, 0.0).unwrap();
        assert_eq!(tape.value(out).data(), &[0.5, 0.0, 2.0, 0.0]);

        let eye = tape.constant(Tensor::eye(2));
        let out = conv_step(&tape, h_prev, h0, eye, w, 0.0, 0.0).unwrap();
        assert_eq!(tape.value(out).data(), &[1.0, 0.0, 0.0, 3.0]);

        let half = tape.constant(Tensor::full(&[2, 2], 0.5));
        let h_prev = tape.constant(Tensor::eye(2));
        let zero = tape.constant(Tensor::zeros(&[2, 2]));
        let out = conv_step(&tape, h_prev, zero, half, eye, 0.0, 1.0).unwrap();
        assert_eq!(tape.value(out).data(), &[0.5; 4]);
    }

    #[test]
    fn zero_layers_return_the_input() {
        let s = ParamStore::new();
        let tape = Tape::new();
        let h0 = tape.constant(m(&[&[1.0, 2.0]]));
        let p = tape.constant(Tensor::eye(1));
        let settings = GdfSettings {
            layers: 0,
            alpha: 0.2,
            rho: 0.5,
        };
        let out = gdf_forward(&s.bind(&tape), h0, p, &settings).unwrap();
        assert_eq!(out.output, h0);
        assert!(out.states.is_empty());
    }

    #[test]
    fn one_layer_with_zero_gates_is_one_conv_step() {
        let mut s = zero_gate_store(2);
        s.insert(conv_weight_name(0), m(&[&[0.5, -1.0], &[2.0, 0.25]]));
        let tape = Tape::new();
        let b = s.bind(&tape);
        let h0 = tape.constant(m(&[&[1.0, 2.0], &[0.5, -0.3], &[0.1, 0.9]]));
        let adjacency = m(&[&[0.0, 0.3, 0.6], &[0.3, 0.0, 0.9], &[0.6, 0.9, 0.0]]);
        let p = tape.constant(crate::convgraph::renormalize(&adjacency).unwrap());
        let settings = GdfSettings {
            layers: 1,
            alpha: 0.2,
            rho: 0.5,
        };
        let out = gdf_forward(&b, h0, p, &settings).unwrap();
        let w = b.get(&conv_weight_name(0)).unwrap();
        let direct = conv_step(&tape, h0, h0, p, w, 0.2, beta(1, 0.5).unwrap()).unwrap();
        assert_eq!(*tape.value(out.output), *tape.value(direct));
    }

    #[test]
    fn full_residual_pins_the_convolution_to_h0() {
        let mut s = ParamStore::new();
        init_fusion_params(&mut s, 3, 4, 1.0, &mut Rng::new(11));
        let tape = Tape::new();
        let b = s.bind(&tape);
        let mut rng = Rng::new(12);
        let h0_value = rng.uniform_tensor(&[6, 3], 1.0).map(f64::abs);
        let h0 = tape.constant(h0_value.clone());
        let p = tape.constant(Tensor::full(&[6, 6], 1.0 / 6.0));
        // β = ln(1 + 1e-300) vanishes against O(1) entries, so H = ReLU(H₀) = H₀
        let settings = GdfSettings {
            layers: 4,
            alpha: 1.0,
            rho: 1e-300,
        };
        let out = gdf_forward(&b, h0, p, &settings).unwrap();
        for st in &out.states {
            let h = tape.sub(st.h_prime, st.gate).unwrap();
            assert!(tape.value(h).max_abs_diff(&h0_value) < 1e-15);
        }
        let expect = tape.add(h0, out.states.last().unwrap().gate).unwrap();
        assert_eq!(*tape.value(out.output), *tape.value(expect));
    }

    #[test]
    fn gate_outputs_stay_inside_the_open_unit_interval() {
        let mut s = ParamStore::new();
        init_fusion_params(&mut s, 4, 6, 1.0, &mut Rng::new(3));
        let tape = Tape::new();
        let b = s.bind(&tape);
        let h0 = tape.constant(Rng::new(4).uniform_tensor(&[9, 4], 3.0));
        let p = tape.constant(Tensor::eye(9));
        let settings = GdfSettings {
            layers: 6,
            alpha: 0.2,
            rho: 0.5,
        };
        let out = gdf_forward(&b, h0, p, &settings).unwrap();
        assert_eq!(out.states.len(), 6);
        for st in &out.states {
            assert!(tape.value(st.gate).data().iter().all(|v| v.abs() < 1.0));
            assert_eq!(tape.shape(st.h_prime), vec![9, 4]);
        }
    }
}
