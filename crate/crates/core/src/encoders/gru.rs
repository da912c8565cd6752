//! Bidirectional gated recurrent unit over utterance sequences.
//!
//! The cell uses update/reset gates with the reset applied to the projected
//! hidden state:
//!
//! ```text
//! r  = σ(W_r x + b_ir + U_r h + b_hr)
//! z  = σ(W_z x + b_iz + U_z h + b_hz)
//! n  = tanh(W_n x + b_in + r ⊙ (U_n h + b_hn))
//! h' = (1 − z) ⊙ n + z ⊙ h
//! ```
//!
//! Gate blocks are packed row-wise in `r, z, n` order inside `w_ih` (3h×D),
//! `w_hh` (3h×h), `b_ih` and `b_hh` (3h). Initial hidden states are zero.

use crate::error::Result;
use crate::numerics::{Binder, ParamStore, Rng, Tensor, Var};

/// Registers parameters for one direction of a GRU under `prefix`.
pub fn init_gru(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize, rng: &mut Rng) {
    let bound = 1.0 / (hidden as f64).sqrt();
    store.insert(format!("{prefix}.w_ih"), rng.uniform_tensor(&[3 * hidden, input], bound));
    store.insert(format!("{prefix}.w_hh"), rng.uniform_tensor(&[3 * hidden, hidden], bound));
    store.insert(format!("{prefix}.b_ih"), rng.uniform_tensor(&[3 * hidden], bound));
    store.insert(format!("{prefix}.b_hh"), rng.uniform_tensor(&[3 * hidden], bound));
}

/// Registers a forward and a backward direction under `prefix.fwd` and
/// `prefix.bwd`.
pub fn init_bigru(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize, rng: &mut Rng) {
    init_gru(store, &format!("{prefix}.fwd"), input, hidden, rng);
    init_gru(store, &format!("{prefix}.bwd"), input, hidden, rng);
}

struct Direction {
    w_hh: Var,
    b_hh: Var,
    /// Input projections of every step, `N × 3h`.
    projected: Var,
    hidden: usize,
}

impl Direction {
    fn bind(binder: &Binder<'_>, prefix: &str, x: Var) -> Result<Self> {
        let tape = binder.tape();
        let w_ih = binder.get(&format!("{prefix}.w_ih"))?;
        let b_ih = binder.get(&format!("{prefix}.b_ih"))?;
        let projected = tape.linear(x, w_ih, b_ih)?;
        let hidden = tape.shape(w_ih)[0] / 3;
        Ok(Direction {
            w_hh: binder.get(&format!("{prefix}.w_hh"))?,
            b_hh: binder.get(&format!("{prefix}.b_hh"))?,
            projected,
            hidden,
        })
    }

    fn step(&self, binder: &Binder<'_>, t: usize, h: Var) -> Result<Var> {
        let tape = binder.tape();
        let hs = self.hidden;
        let gx = tape.slice_rows(self.projected, t, 1)?;
        let gh = tape.linear(h, self.w_hh, self.b_hh)?;
        let block = |v: Var, k: usize| tape.slice_cols(v, k * hs, hs);

        let r = tape.sigmoid(tape.add(block(gx, 0)?, block(gh, 0)?)?);
        let z = tape.sigmoid(tape.add(block(gx, 1)?, block(gh, 1)?)?);
        let n = tape.tanh(tape.add(block(gx, 2)?, tape.mul(r, block(gh, 2)?)?)?);
        let keep_new = tape.mul(tape.affine(z, -1.0, 1.0), n)?;
        tape.add(keep_new, tape.mul(z, h)?)
    }
}

/// Runs both directions over the rows of `x` (`N × D`) and returns the
/// per-step concatenation `[forward | backward]`, `N × 2h`.
pub fn bigru(binder: &Binder<'_>, prefix: &str, x: Var) -> Result<Var> {
    let tape = binder.tape();
    let n = tape.shape(x)[0];
    let fwd = Direction::bind(binder, &format!("{prefix}.fwd"), x)?;
    let bwd = Direction::bind(binder, &format!("{prefix}.bwd"), x)?;

    let mut h = tape.constant(Tensor::zeros(&[1, fwd.hidden]));
    let mut forward = Vec::with_capacity(n);
    for t in 0..n {
        h = fwd.step(binder, t, h)?;
        forward.push(h);
    }
    let mut h = tape.constant(Tensor::zeros(&[1, bwd.hidden]));
    let mut backward = Vec::with_capacity(n);
    for t in (0..n).rev() {
        h = bwd.step(binder, t, h)?;
        backward.push(h);
    }
    backward.reverse();

    let forward = tape.concat_rows(&forward)?;
    let backward = tape.concat_rows(&backward)?;
    tape.concat_cols(&[forward, backward])
}
