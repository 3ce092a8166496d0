//! The modality-routing bridge: grouped task queries with group embeddings,
//! locality masks, a per-query router over three expert decoders, hard
//! aggregation and per-task token compression.

pub mod bank;
pub mod config;
pub mod forward;
pub mod mask;
pub mod route;

use numkit::{init_attention, init_linear, AttentionDims, ParamStore, Tensor};
use rand::Rng;

pub use bank::{embed_queries, TaskQueryBank};
pub use config::ModelConfig;
pub use forward::{fused_input, moro_forward, router_logits, router_probs, MoroOutput, QueryContext, RoutingMode, TaskTokens};
pub use mask::{build_local_mask, project_reference, LocalityMask, PlaneProjection};
pub use route::{hard_assign, RoutingDecision};

use crate::error::Result;
use crate::geometry::Geometry;
use crate::vocab::{Branch, Task, Vocab};

/// Parameters owned by the router; the only ones phase 2 updates.
pub fn is_router_param(name: &str) -> bool {
    name.starts_with("router.")
}

/// Registers every bridge parameter.
pub fn init_moro<R: Rng>(
    store: &mut ParamStore,
    cfg: &ModelConfig,
    g: &Geometry,
    feature_dim: usize,
    rng: &mut R,
) -> Result<()> {
    bank::init_bank(store, cfg, g, rng)?;
    let cq = cfg.query_dim;
    init_attention(
        store,
        "router.att",
        AttentionDims {
            query: cq,
            key_value: feature_dim,
            attn: cfg.attn_dim,
            value: cfg.router_dim,
            heads: cfg.heads,
        },
        rng,
    )?;
    // A zero head routes every query identically until phase 2 trains it.
    store.insert("router.head.w", Tensor::zeros(vec![cfg.router_dim, 3]))?;
    store.insert("router.head.b", Tensor::zeros(vec![3]))?;
    for &b in Branch::ALL {
        let base = forward::expert_name(b);
        init_attention(
            store,
            &format!("{base}.att"),
            AttentionDims {
                query: cq,
                key_value: feature_dim,
                attn: cfg.attn_dim,
                value: cq,
                heads: cfg.heads,
            },
            rng,
        )?;
        init_linear(store, &format!("{base}.ffn1"), cq, cfg.ffn_dim, rng)?;
        init_linear(store, &format!("{base}.ffn2"), cfg.ffn_dim, cq, rng)?;
        // Pool queries live directly in attention space, so the pool needs
        // only key and value projections.
        let pool = format!("pool.{}", b.as_str());
        let std = 1.0 / (cq as f64).sqrt();
        store.insert(format!("{pool}.wk"), Tensor::randn(vec![cq, cfg.attn_dim], std, rng))?;
        store.insert(format!("{pool}.bk"), Tensor::zeros(vec![cfg.attn_dim]))?;
        store.insert(format!("{pool}.wv"), Tensor::randn(vec![cq, cq], std, rng))?;
        store.insert(format!("{pool}.bv"), Tensor::zeros(vec![cq]))?;
        for &t in Task::ALL {
            store.insert(
                format!("pool.{}.{}.queries", t.as_str(), b.as_str()),
                Tensor::randn(vec![cfg.compress_tokens, cfg.attn_dim], 1.0, rng),
            )?;
        }
    }
    let w1 = 1.0 / (cq as f64).sqrt();
    store.insert("moro.out1.w", Tensor::randn(vec![cq, cfg.out_dim], w1, rng))?;
    let w2 = 1.0 / (cfg.out_dim as f64).sqrt();
    store.insert("moro.out2.w", Tensor::randn(vec![cfg.out_dim, cq], w2, rng))?;
    Ok(())
}
