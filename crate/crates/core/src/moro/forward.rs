//! Routing, expert decoding, hard aggregation and token compression.

use numkit::{attend, linear, linear_nobias, project_kv, AttnMask, KeyValues, ParamStore, Tape, Tensor, Var};

use crate::error::{Error, Result};
use crate::geometry::Geometry;
use crate::moro::bank::{embed_queries, task_of, total_queries, TaskQueryBank};
use crate::moro::config::ModelConfig;
use crate::moro::mask::{build_local_mask, project_reference, LocalityMask};
use crate::moro::route::RoutingDecision;
use crate::sim::ModalityFeatureSet;
use crate::vocab::{Branch, Task, Vocab};

/// How queries reach the experts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RoutingMode {
    /// Every expert decodes every query; branch outputs are stacked.
    Stacked,
    /// The router assigns each query to one expert.
    Routed,
    /// Every query goes to one fixed expert; the router is not consulted.
    Fixed(Branch),
}

/// Per-query attention scope derived from the current reference points.
#[derive(Clone, Debug)]
pub struct QueryContext {
    /// `None` for queries of non-localized tasks (full attention).
    pub masks: Vec<Option<LocalityMask>>,
}

impl QueryContext {
    pub fn new(store: &ParamStore, cfg: &ModelConfig, g: &Geometry) -> Result<Self> {
        let bank = TaskQueryBank::from_store(store, cfg)?;
        let refs = bank.reference_points(g);
        let masks = refs
            .iter()
            .enumerate()
            .map(|(i, &r)| {
                task_of(cfg, i).localized().then(|| {
                    build_local_mask(&project_reference(r, g), cfg.window_lidar, cfg.window_camera, g)
                })
            })
            .collect();
        Ok(Self { masks })
    }
}

/// Which block of the fused sequence a key/value set covers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Block {
    Lidar,
    Camera,
    Fused,
}

impl Block {
    fn of(b: Branch) -> Self {
        match b {
            Branch::Lidar => Block::Lidar,
            Branch::Camera => Block::Camera,
            Branch::Fusion => Block::Fused,
        }
    }

    fn keys(self, m: &LocalityMask) -> Vec<usize> {
        match self {
            Block::Lidar => m.lidar.clone(),
            Block::Camera => m.camera.clone(),
            Block::Fused => m.fused(),
        }
    }
}

/// Attention of the query rows `ids` (already gathered into `q`) over `kv`,
/// global queries densely and localized ones through their windows.
#[allow(clippy::too_many_arguments)]
fn attend_queries(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &ModelConfig,
    name: &str,
    q: Var,
    ids: &[usize],
    ctx: &QueryContext,
    kv: KeyValues,
    block: Block,
) -> Result<Var> {
    let (mut global, mut local) = (Vec::new(), Vec::new());
    for (pos, &i) in ids.iter().enumerate() {
        match &ctx.masks[i] {
            None => global.push(pos),
            Some(_) => local.push(pos),
        }
    }
    let local_mask = || AttnMask::Rows(local.iter().map(|&p| block.keys(ctx.masks[ids[p]].as_ref().unwrap())).collect());
    if local.is_empty() {
        return Ok(attend(tape, store, q, kv, AttnMask::Full, name, cfg.heads)?);
    }
    if global.is_empty() {
        return Ok(attend(tape, store, q, kv, local_mask(), name, cfg.heads)?);
    }
    let qg = tape.gather_rows(q, &global)?;
    let ql = tape.gather_rows(q, &local)?;
    let og = attend(tape, store, qg, kv, AttnMask::Full, name, cfg.heads)?;
    let ol = attend(tape, store, ql, kv, local_mask(), name, cfg.heads)?;
    let both = tape.concat_rows(&[og, ol])?;
    let mut order = vec![0; ids.len()];
    for (k, &p) in global.iter().chain(local.iter()).enumerate() {
        order[p] = k;
    }
    Ok(tape.gather_rows(both, &order)?)
}

pub fn expert_name(b: Branch) -> String {
    format!("expert.{}", b.as_str())
}

/// One expert decoder: cross-attention followed by a residual feed-forward block.
#[allow(clippy::too_many_arguments)]
fn expert_decode(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &ModelConfig,
    branch: Branch,
    q: Var,
    ids: &[usize],
    ctx: &QueryContext,
    kv: KeyValues,
) -> Result<Var> {
    let base = expert_name(branch);
    let a = attend_queries(tape, store, cfg, &format!("{base}.att"), q, ids, ctx, kv, Block::of(branch))?;
    let h = linear(tape, store, a, &format!("{base}.ffn1"))?;
    let h = tape.relu(h);
    let h = linear(tape, store, h, &format!("{base}.ffn2"))?;
    Ok(tape.add(a, h)?)
}

/// Compresses the kept outputs of one (task, branch) into `C_s` tokens;
/// an empty branch yields zeros.
pub fn pool_branch(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &ModelConfig,
    task: Task,
    branch: Branch,
    rows: Option<Var>,
) -> Result<Var> {
    let Some(x) = rows else {
        return Ok(tape.constant(Tensor::zeros(vec![cfg.compress_tokens, cfg.query_dim])));
    };
    let pq = tape.param(store, &format!("pool.{}.{}.queries", task.as_str(), branch.as_str()))?;
    let kv = project_kv(tape, store, x, &format!("pool.{}", branch.as_str()))?;
    Ok(tape.attention(pq, kv.keys, kv.values, AttnMask::Full)?)
}

/// Compressed tokens of one task.
#[derive(Clone, Copy, Debug)]
pub struct TaskTokens {
    pub task: Task,
    /// `S_D^l`, `S_D^c`, `S_D^lc`, each `C_s x C_q`.
    pub branches: [Var; 3],
    /// `Ŝ_D`, `3 C_s x C_q`.
    pub fused: Var,
}

/// Outputs of one expert: rows follow `ids`.
#[derive(Clone, Debug)]
pub struct ExpertRows {
    pub ids: Vec<usize>,
    pub rows: Var,
}

#[derive(Clone, Debug)]
pub struct MoroOutput {
    pub tasks: Vec<TaskTokens>,
    /// Empty unless routed.
    pub routing: Vec<RoutingDecision>,
    /// Router probabilities `N x 3` when the router ran.
    pub router_probs: Option<Var>,
    /// Per expert in branch order, the query outputs that expert produced.
    pub experts: [Option<ExpertRows>; 3],
}

/// Router logits for every query, `N x 3`.
pub fn router_logits(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &ModelConfig,
    ctx: &QueryContext,
    q_tilde: Var,
    fused: Var,
) -> Result<Var> {
    let kv = project_kv(tape, store, fused, "router.att")?;
    let ids: Vec<usize> = (0..total_queries(cfg)).collect();
    let s = attend_queries(tape, store, cfg, "router.att", q_tilde, &ids, ctx, kv, Block::Fused)?;
    Ok(linear(tape, store, s, "router.head")?)
}

/// Router probabilities `p_i` for every query, `N x 3`.
pub fn router_probs(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &ModelConfig,
    ctx: &QueryContext,
    q_tilde: Var,
    fused: Var,
) -> Result<Var> {
    let logits = router_logits(tape, store, cfg, ctx, q_tilde, fused)?;
    Ok(tape.softmax(logits))
}

/// Reads the hard decisions out of recorded router probabilities.
pub fn decisions(tape: &Tape, probs: Var) -> Vec<RoutingDecision> {
    let p = tape.value(probs);
    (0..p.rows())
        .map(|i| {
            let r = p.row_slice(i);
            RoutingDecision::from_probs([r[0], r[1], r[2]])
        })
        .collect()
}

pub fn fused_input(tape: &mut Tape, f: &ModalityFeatureSet, cfg_dim: usize) -> Result<Var> {
    if f.dim != cfg_dim {
        return Err(Error::Data(format!(
            "features are {} wide, model expects {cfg_dim}",
            f.dim
        )));
    }
    f.check()?;
    Ok(tape.constant(f.fused_tensor()))
}

/// The full bridge: group embedding, routing, expert decoding, hard
/// aggregation, compression and the output MLP.
pub fn moro_forward(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &ModelConfig,
    ctx: &QueryContext,
    f: &ModalityFeatureSet,
    feature_dim: usize,
    mode: RoutingMode,
) -> Result<MoroOutput> {
    let n = total_queries(cfg);
    if ctx.masks.len() != n {
        return Err(Error::Invariant("query context does not match the bank".into()));
    }
    let fused = fused_input(tape, f, feature_dim)?;
    let q_tilde = embed_queries(tape, store, cfg)?;

    let (assign, routing, probs): (Vec<Option<Branch>>, Vec<RoutingDecision>, Option<Var>) = match mode {
        RoutingMode::Stacked => (vec![None; n], Vec::new(), None),
        RoutingMode::Fixed(b) => (vec![Some(b); n], Vec::new(), None),
        RoutingMode::Routed => {
            let p = router_probs(tape, store, cfg, ctx, q_tilde, fused)?;
            let d = decisions(tape, p);
            (d.iter().map(|r| Some(r.branch)).collect(), d, Some(p))
        }
    };

    let nl = f.lidar_tokens();
    let mut experts: [Option<ExpertRows>; 3] = [None, None, None];
    for &b in Branch::ALL {
        let ids: Vec<usize> = (0..n).filter(|&i| assign[i].is_none_or(|a| a == b)).collect();
        if ids.is_empty() {
            continue;
        }
        let kv_src = match b {
            Branch::Lidar => tape.slice_rows(fused, 0, nl)?,
            Branch::Camera => tape.slice_rows(fused, nl, f.camera_tokens())?,
            Branch::Fusion => fused,
        };
        let kv = project_kv(tape, store, kv_src, &format!("{}.att", expert_name(b)))?;
        let q = if ids.len() == n { q_tilde } else { tape.gather_rows(q_tilde, &ids)? };
        let rows = expert_decode(tape, store, cfg, b, q, &ids, ctx, kv)?;
        experts[b.index()] = Some(ExpertRows { ids, rows });
    }

    let k = cfg.queries_per_task;
    let mut tasks = Vec::with_capacity(Task::size());
    for (t, &task) in Task::ALL.iter().enumerate() {
        let range = t * k..(t + 1) * k;
        let mut branches = Vec::with_capacity(3);
        for &b in Branch::ALL {
            let kept = match &experts[b.index()] {
                None => None,
                Some(e) => {
                    let pos: Vec<usize> = e
                        .ids
                        .iter()
                        .enumerate()
                        .filter(|(_, i)| range.contains(i))
                        .map(|(p, _)| p)
                        .collect();
                    if pos.is_empty() {
                        None
                    } else {
                        Some(tape.gather_rows(e.rows, &pos)?)
                    }
                }
            };
            branches.push(pool_branch(tape, store, cfg, task, b, kept)?);
        }
        let s = tape.concat_rows(&branches)?;
        let h = linear_nobias(tape, store, s, "moro.out1")?;
        let h = tape.relu(h);
        let fused_tokens = linear_nobias(tape, store, h, "moro.out2")?;
        tasks.push(TaskTokens {
            task,
            branches: [branches[0], branches[1], branches[2]],
            fused: fused_tokens,
        });
    }
    Ok(MoroOutput {
        tasks,
        routing,
        router_probs: probs,
        experts,
    })
}
