//! Planning token, latent map and the autoregressive GRU waypoint decoder.

use numkit::{attend, gru_step, init_attention, init_gru, init_linear, linear, project_kv, AttentionDims, AttnMask, ParamStore, Tape, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::labeler::HORIZON_INDICES;
use crate::moro::{ModelConfig, TaskTokens};

pub const HORIZONS: usize = HORIZON_INDICES.len();

/// `M` candidate futures at the 1, 2, 5 and 10 s horizons, ego frame, meters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryModes {
    pub modes: Vec<[[f64; 2]; HORIZONS]>,
}

pub fn init_planner<R: Rng>(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut R) -> Result<()> {
    let cq = cfg.query_dim;
    store.insert("plan.token", Tensor::randn(vec![1, cq], 1.0, rng))?;
    init_attention(
        store,
        "plan.att",
        AttentionDims {
            query: cq,
            key_value: cq,
            attn: cfg.attn_dim,
            value: cq,
            heads: cfg.heads,
        },
        rng,
    )?;
    init_linear(store, "plan.mlp1", cq, cfg.latent_dim, rng)?;
    init_linear(store, "plan.mlp2", cfg.latent_dim, cfg.latent_dim, rng)?;
    init_linear(store, "plan.modes", cfg.latent_dim, cfg.modes * cfg.gru_hidden, rng)?;
    init_linear(store, "plan.embed", 2, cfg.waypoint_embed, rng)?;
    init_gru(store, "plan.gru", cfg.waypoint_embed, cfg.gru_hidden, rng)?;
    init_linear(store, "plan.out", cfg.gru_hidden, 2, rng)?;
    Ok(())
}

/// `x_p` from cross-attention of the planning token over every task's `Ŝ_D`,
/// then `z = MLP2(relu(MLP1(x_p)))`.
pub fn make_planning_token(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &ModelConfig,
    tasks: &[TaskTokens],
) -> Result<(Var, Var)> {
    let all: Vec<Var> = tasks.iter().map(|t| t.fused).collect();
    let tokens = tape.concat_rows(&all)?;
    let kv = project_kv(tape, store, tokens, "plan.att")?;
    let p = tape.param(store, "plan.token")?;
    let x_p = attend(tape, store, p, kv, AttnMask::Full, "plan.att", cfg.heads)?;
    let h = linear(tape, store, x_p, "plan.mlp1")?;
    let h = tape.relu(h);
    let z = linear(tape, store, h, "plan.mlp2")?;
    Ok((x_p, z))
}

/// Decodes `M x (2 * HORIZONS)` normalized waypoints `[x1, y1, ..., x4, y4]`.
///
/// Each mode starts from its own linear map of `z`; every step feeds the
/// embedding of the previous waypoint (the origin first).
pub fn gru_decode(tape: &mut Tape, store: &ParamStore, cfg: &ModelConfig, z: Var) -> Result<Var> {
    let h0 = linear(tape, store, z, "plan.modes")?;
    let mut h = tape.reshape(h0, &[cfg.modes, cfg.gru_hidden])?;
    let mut y = tape.constant(Tensor::zeros(vec![cfg.modes, 2]));
    let mut steps = Vec::with_capacity(HORIZONS);
    for _ in 0..HORIZONS {
        let e = linear(tape, store, y, "plan.embed")?;
        h = gru_step(tape, store, e, h, "plan.gru")?;
        y = linear(tape, store, h, "plan.out")?;
        steps.push(y);
    }
    Ok(tape.concat_cols(&steps)?)
}

/// Converts decoded normalized waypoints into meters.
pub fn to_modes(t: &Tensor, cfg: &ModelConfig) -> TrajectoryModes {
    let modes = (0..t.rows())
        .map(|m| {
            let r = t.row_slice(m);
            std::array::from_fn(|k| [r[2 * k] * cfg.traj_scale, r[2 * k + 1] * cfg.traj_scale])
        })
        .collect();
    TrajectoryModes { modes }
}

/// Ground-truth horizon points flattened and normalized like the decoder output.
pub fn normalized_target(points: &[[f64; 2]; HORIZONS], cfg: &ModelConfig) -> Vec<f64> {
    points.iter().flat_map(|p| [p[0] / cfg.traj_scale, p[1] / cfg.traj_scale]).collect()
}

/// Winner-take-all waypoint loss: the smallest per-mode mean squared error.
pub fn waypoint_loss(tape: &mut Tape, decoded: Var, target: &[f64]) -> Result<Var> {
    let per_mode = tape.row_mse(decoded, target)?;
    Ok(tape.min_all(per_mode))
}
