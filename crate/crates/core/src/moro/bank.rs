//! Grouped task queries, group embeddings and reference points.

use numkit::{ParamStore, Tape, Tensor, Var};
use rand::Rng;

use crate::error::Result;
use crate::geometry::Geometry;
use crate::moro::config::ModelConfig;
use crate::vocab::{Task, Vocab};

pub const QUERIES: &str = "moro.queries";
pub const GROUP_EMBED: &str = "moro.group_embed";
pub const REF_POINTS: &str = "moro.ref_points";

pub fn task_count() -> usize {
    Task::size()
}

pub fn total_queries(cfg: &ModelConfig) -> usize {
    task_count() * cfg.queries_per_task
}

/// Task group of flat query index `i`.
pub fn task_of(cfg: &ModelConfig, i: usize) -> Task {
    Task::ALL[i / cfg.queries_per_task]
}

/// Axis-aligned scene volume `[[x0, x1], [y0, y1], [z0, z1]]`.
pub fn scene_volume(g: &Geometry) -> [[f64; 2]; 3] {
    [g.x_range(), g.y_range(), g.z_range]
}

pub fn squash(raw: f64, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * numkit::sigmoid(raw)
}

pub fn unsquash(v: f64, lo: f64, hi: f64) -> f64 {
    let p = ((v - lo) / (hi - lo)).clamp(1e-9, 1.0 - 1e-9);
    (p / (1.0 - p)).ln()
}

/// Host-side copy of the query bank.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskQueryBank {
    pub queries: Tensor,
    pub group_embed: Tensor,
    /// Pre-squash reference points, one row `(x, y, z)` per query.
    pub ref_raw: Tensor,
    pub per_task: usize,
}

impl TaskQueryBank {
    pub fn from_store(store: &ParamStore, cfg: &ModelConfig) -> Result<Self> {
        Ok(Self {
            queries: store.get(QUERIES)?.clone(),
            group_embed: store.get(GROUP_EMBED)?.clone(),
            ref_raw: store.get(REF_POINTS)?.clone(),
            per_task: cfg.queries_per_task,
        })
    }

    pub fn len(&self) -> usize {
        self.queries.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `q̃_{t,k} = q_{t,k} + E_g[t]`.
    pub fn embed(&self) -> Tensor {
        let mut out = self.queries.clone();
        for i in 0..out.rows() {
            let e = self.group_embed.row_slice(i / self.per_task).to_vec();
            for (o, v) in out.row_slice_mut(i).iter_mut().zip(e) {
                *o += v;
            }
        }
        out
    }

    /// Reference points squashed into the scene volume.
    pub fn reference_points(&self, g: &Geometry) -> Vec<[f64; 3]> {
        let vol = scene_volume(g);
        (0..self.ref_raw.rows())
            .map(|i| {
                let r = self.ref_raw.row_slice(i);
                std::array::from_fn(|a| squash(r[a], vol[a][0], vol[a][1]))
            })
            .collect()
    }
}

/// Records `q̃ = Q + E_g[task]` on the tape.
pub fn embed_queries(tape: &mut Tape, store: &ParamStore, cfg: &ModelConfig) -> Result<Var> {
    let q = tape.param(store, QUERIES)?;
    let e = tape.param(store, GROUP_EMBED)?;
    let idx: Vec<usize> = (0..total_queries(cfg)).map(|i| i / cfg.queries_per_task).collect();
    let eg = tape.gather_rows(e, &idx)?;
    Ok(tape.add(q, eg)?)
}

/// Registers the bank. Localized tasks get reference points on a regular
/// ground grid over the BEV footprint; the others a fixed centered point.
pub fn init_bank<R: Rng>(store: &mut ParamStore, cfg: &ModelConfig, g: &Geometry, rng: &mut R) -> Result<()> {
    let n = total_queries(cfg);
    store.insert(QUERIES, Tensor::randn(vec![n, cfg.query_dim], cfg.query_init_std, rng))?;
    store.insert(
        GROUP_EMBED,
        Tensor::randn(vec![task_count(), cfg.query_dim], cfg.query_init_std, rng),
    )?;
    let vol = scene_volume(g);
    let k = cfg.queries_per_task;
    let side = (k as f64).sqrt().ceil() as usize;
    let rows_per_side = k.div_ceil(side);
    let mut raw = Vec::with_capacity(n * 3);
    for i in 0..n {
        let j = i % k;
        let (a, b) = (j / side, j % side);
        let fx = (a as f64 + 0.5) / rows_per_side as f64;
        let fy = (b as f64 + 0.5) / side as f64;
        let p = if task_of(cfg, i).localized() {
            [
                vol[0][0] + fx * (vol[0][1] - vol[0][0]),
                vol[1][0] + fy * (vol[1][1] - vol[1][0]),
                0.5,
            ]
        } else {
            [(vol[0][0] + vol[0][1]) / 2.0, 0.0, 0.5]
        };
        for a in 0..3 {
            raw.push(unsquash(p[a], vol[a][0], vol[a][1]));
        }
    }
    store.insert(REF_POINTS, Tensor::new(vec![n, 3], raw)?)?;
    Ok(())
}
