//! Parameterised building blocks recorded on a [`Tape`].

use rand::Rng;

use crate::error::{NumError, Result};
use crate::params::ParamStore;
use crate::tape::{AttnMask, Tape, Var};
use crate::tensor::Tensor;

/// Registers `{name}.w` (`inp x out`, scaled normal) and `{name}.b` (zeros).
pub fn init_linear<R: Rng + ?Sized>(
    store: &mut ParamStore,
    name: &str,
    inp: usize,
    out: usize,
    rng: &mut R,
) -> Result<()> {
    let std = 1.0 / (inp.max(1) as f64).sqrt();
    store.insert(format!("{name}.w"), Tensor::randn(vec![inp, out], std, rng))?;
    store.insert(format!("{name}.b"), Tensor::zeros(vec![out]))
}

/// `y = x W + b` with `{name}.w` and `{name}.b`.
pub fn linear(tape: &mut Tape, store: &ParamStore, x: Var, name: &str) -> Result<Var> {
    let w = tape.param(store, &format!("{name}.w"))?;
    let b = tape.param(store, &format!("{name}.b"))?;
    let (xs, ws) = (tape.value(x), tape.value(w));
    if xs.cols() != ws.rows() {
        return Err(NumError::Shape {
            op: "linear",
            left: xs.shape().to_vec(),
            right: ws.shape().to_vec(),
        });
    }
    let y = tape.matmul(x, w)?;
    tape.add_bias(y, b)
}

/// Bias-free `y = x W` with `{name}.w`.
pub fn linear_nobias(tape: &mut Tape, store: &ParamStore, x: Var, name: &str) -> Result<Var> {
    let w = tape.param(store, &format!("{name}.w"))?;
    let (xs, ws) = (tape.value(x), tape.value(w));
    if xs.cols() != ws.rows() {
        return Err(NumError::Shape {
            op: "linear",
            left: xs.shape().to_vec(),
            right: ws.shape().to_vec(),
        });
    }
    tape.matmul(x, w)
}

/// Shapes of one cross-attention block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionDims {
    pub query: usize,
    pub key_value: usize,
    pub attn: usize,
    pub value: usize,
    pub heads: usize,
}

/// Registers `{name}.wq`, `{name}.wk`, `{name}.bk`, `{name}.wv`, `{name}.bv`.
pub fn init_attention<R: Rng + ?Sized>(
    store: &mut ParamStore,
    name: &str,
    dims: AttentionDims,
    rng: &mut R,
) -> Result<()> {
    let q_std = 1.0 / (dims.query.max(1) as f64).sqrt();
    let kv_std = 1.0 / (dims.key_value.max(1) as f64).sqrt();
    store.insert(
        format!("{name}.wq"),
        Tensor::randn(vec![dims.query, dims.attn], q_std, rng),
    )?;
    store.insert(
        format!("{name}.wk"),
        Tensor::randn(vec![dims.key_value, dims.attn], kv_std, rng),
    )?;
    store.insert(format!("{name}.bk"), Tensor::zeros(vec![dims.attn]))?;
    store.insert(
        format!("{name}.wv"),
        Tensor::randn(vec![dims.key_value, dims.value], kv_std, rng),
    )?;
    store.insert(format!("{name}.bv"), Tensor::zeros(vec![dims.value]))
}

/// Projected keys and values of a token set, reusable across query sets.
#[derive(Clone, Copy, Debug)]
pub struct KeyValues {
    pub keys: Var,
    pub values: Var,
}

pub fn project_kv(tape: &mut Tape, store: &ParamStore, kv: Var, name: &str) -> Result<KeyValues> {
    let wk = tape.param(store, &format!("{name}.wk"))?;
    let bk = tape.param(store, &format!("{name}.bk"))?;
    let wv = tape.param(store, &format!("{name}.wv"))?;
    let bv = tape.param(store, &format!("{name}.bv"))?;
    if tape.value(kv).cols() != tape.value(wk).rows() {
        return Err(NumError::Shape {
            op: "attention(kv)",
            left: tape.value(kv).shape().to_vec(),
            right: tape.value(wk).shape().to_vec(),
        });
    }
    let k = tape.matmul(kv, wk)?;
    let keys = tape.add_bias(k, bk)?;
    let v = tape.matmul(kv, wv)?;
    let values = tape.add_bias(v, bv)?;
    Ok(KeyValues { keys, values })
}

/// Attention of raw queries `q` over pre-projected key/values, `heads`-way split.
pub fn attend(
    tape: &mut Tape,
    store: &ParamStore,
    q: Var,
    kv: KeyValues,
    mask: AttnMask,
    name: &str,
    heads: usize,
) -> Result<Var> {
    let wq = tape.param(store, &format!("{name}.wq"))?;
    if tape.value(q).cols() != tape.value(wq).rows() {
        return Err(NumError::Shape {
            op: "attention(q)",
            left: tape.value(q).shape().to_vec(),
            right: tape.value(wq).shape().to_vec(),
        });
    }
    let qp = tape.matmul(q, wq)?;
    if heads <= 1 {
        return tape.attention(qp, kv.keys, kv.values, mask);
    }
    let da = tape.value(qp).cols();
    let dv = tape.value(kv.values).cols();
    if da % heads != 0 || dv % heads != 0 {
        return Err(NumError::Shape {
            op: "attention(heads)",
            left: vec![da, dv],
            right: vec![heads],
        });
    }
    let (ha, hv) = (da / heads, dv / heads);
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice_cols(qp, h * ha, ha)?;
        let kh = tape.slice_cols(kv.keys, h * ha, ha)?;
        let vh = tape.slice_cols(kv.values, h * hv, hv)?;
        outs.push(tape.attention(qh, kh, vh, mask.clone())?);
    }
    tape.concat_cols(&outs)
}

/// Single-block cross attention of `q` over the rows of `kv` where `mask` is set.
///
/// Rows with `mask == false` get exactly zero weight; an all-false mask is a
/// [`NumError::DegenerateMask`].
pub fn masked_cross_attention(
    tape: &mut Tape,
    store: &ParamStore,
    q: Var,
    kv: Var,
    mask: Option<&[bool]>,
    name: &str,
) -> Result<Var> {
    let mask = match mask {
        None => AttnMask::Full,
        Some(m) => {
            let rows = tape.value(kv).rows();
            if m.len() != rows {
                return Err(NumError::Shape {
                    op: "masked_cross_attention(mask)",
                    left: vec![m.len()],
                    right: vec![rows],
                });
            }
            if !m.iter().any(|&b| b) {
                return Err(NumError::DegenerateMask { row: 0 });
            }
            AttnMask::from_binary(m)
        }
    };
    let kvp = project_kv(tape, store, kv, name)?;
    attend(tape, store, q, kvp, mask, name, 1)
}

/// Registers a GRU cell: `{name}.w_ih` (`inp x 3h`), `{name}.w_hh` (`h x 3h`),
/// `{name}.b_ih`, `{name}.b_hh`. Gate order is reset, update, candidate.
pub fn init_gru<R: Rng + ?Sized>(
    store: &mut ParamStore,
    name: &str,
    inp: usize,
    hidden: usize,
    rng: &mut R,
) -> Result<()> {
    let std = 1.0 / (hidden.max(1) as f64).sqrt();
    store.insert(format!("{name}.w_ih"), Tensor::randn(vec![inp, 3 * hidden], std, rng))?;
    store.insert(format!("{name}.w_hh"), Tensor::randn(vec![hidden, 3 * hidden], std, rng))?;
    store.insert(format!("{name}.b_ih"), Tensor::zeros(vec![3 * hidden]))?;
    store.insert(format!("{name}.b_hh"), Tensor::zeros(vec![3 * hidden]))
}

/// One GRU update for every row of `input`/`hidden`:
///
/// ```text
/// r = σ(x W_ir + b_ir + h W_hr + b_hr)
/// z = σ(x W_iz + b_iz + h W_hz + b_hz)
/// n = tanh(x W_in + b_in + r ⊙ (h W_hn + b_hn))
/// h' = (1 - z) ⊙ n + z ⊙ h
/// ```
pub fn gru_step(
    tape: &mut Tape,
    store: &ParamStore,
    input: Var,
    hidden: Var,
    name: &str,
) -> Result<Var> {
    let w_ih = tape.param(store, &format!("{name}.w_ih"))?;
    let w_hh = tape.param(store, &format!("{name}.w_hh"))?;
    let b_ih = tape.param(store, &format!("{name}.b_ih"))?;
    let b_hh = tape.param(store, &format!("{name}.b_hh"))?;
    let h = tape.value(hidden).cols();
    let (iv, wv) = (tape.value(input), tape.value(w_ih));
    if iv.cols() != wv.rows() || tape.value(w_hh).rows() != h || iv.rows() != tape.value(hidden).rows() {
        return Err(NumError::Shape {
            op: "gru_step",
            left: iv.shape().to_vec(),
            right: tape.value(hidden).shape().to_vec(),
        });
    }
    let gi = tape.matmul(input, w_ih)?;
    let gi = tape.add_bias(gi, b_ih)?;
    let gh = tape.matmul(hidden, w_hh)?;
    let gh = tape.add_bias(gh, b_hh)?;
    let (i_r, i_z, i_n) = (
        tape.slice_cols(gi, 0, h)?,
        tape.slice_cols(gi, h, h)?,
        tape.slice_cols(gi, 2 * h, h)?,
    );
    let (h_r, h_z, h_n) = (
        tape.slice_cols(gh, 0, h)?,
        tape.slice_cols(gh, h, h)?,
        tape.slice_cols(gh, 2 * h, h)?,
    );
    let r = tape.add(i_r, h_r)?;
    let r = tape.sigmoid(r);
    let z = tape.add(i_z, h_z)?;
    let z = tape.sigmoid(z);
    let rn = tape.mul(r, h_n)?;
    let n = tape.add(i_n, rn)?;
    let n = tape.tanh(n);
    let one_minus_z = tape.affine(z, -1.0, 1.0);
    let a = tape.mul(one_minus_z, n)?;
    let b = tape.mul(z, hidden)?;
    tape.add(a, b)
}
