//! Two-phase optimization: experts, heads and planner first, then the router
//! alone under modality dropout.

use std::collections::BTreeMap;

use numkit::{adam_step, AdamConfig, ParamStore, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{parse_num, Settings};
use crate::error::{Error, Result};
use crate::eval::{parse_routing, routing_name};
use crate::heads::planner::normalized_target;
use crate::heads::{text_loss, waypoint_loss, StructuredAnswerSet};
use crate::labeler::horizon_points;
use crate::model::Model;
use crate::moro::{embed_queries, fused_input, is_router_param, router_logits, RoutingMode};
use crate::seed;
use crate::sim::{apply_degradation, DatasetRecord, DegradationSpec, ModalityFeatureSet, RecordSource};
use crate::vocab::{Branch, Vocab};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub phase: u8,
    /// How phase 1 feeds the experts: stacked, or one fixed expert for
    /// single-decoder baselines.
    pub routing: RoutingMode,
    pub epochs: usize,
    pub batch_size: usize,
    /// `None` picks the phase default.
    pub lr: Option<f64>,
    pub schedule: Schedule,
    pub seed: u64,
}

/// Learning-rate shape over the run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Schedule {
    Constant,
    /// Half-cosine from the base rate down to 5% of it at the last step.
    Cosine,
}

impl Schedule {
    const FLOOR: f64 = 0.05;

    /// Multiplier for step `step` of `total`.
    pub fn factor(self, step: usize, total: usize) -> f64 {
        match self {
            Schedule::Constant => 1.0,
            Schedule::Cosine => {
                let t = if total > 1 { step as f64 / (total - 1) as f64 } else { 0.0 };
                Self::FLOOR + (1.0 - Self::FLOOR) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }

    fn name(self) -> &'static str {
        match self {
            Schedule::Constant => "constant",
            Schedule::Cosine => "cosine",
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            phase: 1,
            routing: RoutingMode::Stacked,
            epochs: 20,
            batch_size: 16,
            lr: None,
            schedule: Schedule::Cosine,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn learning_rate(&self) -> f64 {
        self.lr.unwrap_or(if self.phase == 1 { 1e-3 } else { 3e-3 })
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.phase, 1 | 2) {
            return Err(Error::Config(format!("train.phase must be 1 or 2, got {}", self.phase)));
        }
        if self.routing == RoutingMode::Routed {
            return Err(Error::Config("train.routing must be stacked or fixed:<branch>".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be positive".into()));
        }
        if !(self.learning_rate() > 0.0) {
            return Err(Error::Config("train.lr must be positive".into()));
        }
        Ok(())
    }
}

impl Settings for TrainConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "phase" => self.phase = parse_num(key, value)?,
            "routing" => self.routing = parse_routing(value)?,
            "epochs" => self.epochs = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "lr" => self.lr = if value == "default" { None } else { Some(parse_num(key, value)?) },
            "schedule" => {
                self.schedule = match value {
                    "constant" => Schedule::Constant,
                    "cosine" => Schedule::Cosine,
                    _ => return Err(Error::Config(format!("unknown schedule '{value}'"))),
                }
            }
            "seed" => self.seed = parse_num(key, value)?,
            _ => return Err(Error::Config(format!("unknown key 'train.{key}'"))),
        }
        Ok(())
    }

    fn entries(&self) -> Vec<(String, String)> {
        vec![
            ("phase".into(), self.phase.to_string()),
            ("routing".into(), routing_name(self.routing)),
            ("epochs".into(), self.epochs.to_string()),
            ("batch_size".into(), self.batch_size.to_string()),
            ("lr".into(), self.lr.map_or("default".into(), |v| v.to_string())),
            ("schedule".into(), self.schedule.name().into()),
            ("seed".into(), self.seed.to_string()),
        ]
    }
}

/// Phase-2 input settings, each drawn with probability 1/3.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dropout {
    /// LiDAR dropped.
    CameraOnly,
    /// Camera dropped.
    LidarOnly,
    Dual,
}

impl Dropout {
    pub const ALL: [Dropout; 3] = [Dropout::CameraOnly, Dropout::LidarOnly, Dropout::Dual];

    pub fn spec(self) -> DegradationSpec {
        match self {
            Dropout::CameraOnly => DegradationSpec::LIDAR_BLACKOUT,
            Dropout::LidarOnly => DegradationSpec::CAMERA_BLACKOUT,
            Dropout::Dual => DegradationSpec::CLEAN,
        }
    }

    pub fn label(self) -> Branch {
        match self {
            Dropout::CameraOnly => Branch::Camera,
            Dropout::LidarOnly => Branch::Lidar,
            Dropout::Dual => Branch::Fusion,
        }
    }
}

/// The dropout setting of record `id` in epoch `epoch`.
pub fn draw_dropout(train_seed: u64, epoch: u64, id: u64) -> Dropout {
    let mut rng = seed::rng(seed::derive(seed::derive(train_seed, epoch), id), seed::DROPOUT);
    Dropout::ALL[rng.random_range(0..3)]
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Phase1Losses {
    pub text: f64,
    pub waypoint: f64,
    pub total: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Phase2Stats {
    /// Mean cross-entropy per query.
    pub route: f64,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub steps: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub l_text: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub l_waypoint: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub l_total: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub l_route: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub router_accuracy: Option<f64>,
}

/// Per-epoch losses. Wall time is kept out so the log is reproducible.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub phase: u8,
    pub seed: u64,
    pub records: usize,
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    /// One JSON object per line: a header, then one line per epoch.
    pub fn to_lines(&self) -> Result<String> {
        let header = serde_json::json!({
            "phase": self.phase,
            "seed": self.seed,
            "records": self.records,
        });
        let mut out = serde_json::to_string(&header)?;
        out.push('\n');
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// Parameters phase 1 may update.
pub fn phase1_trainable(name: &str) -> bool {
    !is_router_param(name)
}

/// Parameters phase 2 may update.
pub fn phase2_trainable(name: &str) -> bool {
    is_router_param(name)
}

/// Checksums of every parameter the predicate leaves frozen.
pub fn frozen_checksums(store: &ParamStore, trainable: impl Fn(&str) -> bool) -> Result<BTreeMap<String, String>> {
    store
        .names()
        .filter(|n| !trainable(n))
        .map(|n| Ok((n.to_string(), store.param_checksum(n)?)))
        .collect()
}

/// Fails if any frozen parameter changed since `before` was taken.
pub fn verify_frozen(store: &ParamStore, before: &BTreeMap<String, String>) -> Result<()> {
    for (name, sum) in before {
        if &store.param_checksum(name)? != sum {
            return Err(Error::Invariant(format!("frozen parameter '{name}' changed")));
        }
    }
    Ok(())
}

/// Phase-1 loss of one record on a fresh tape: `(tape, text, waypoint, total)`.
pub fn phase1_record_loss(
    model: &Model,
    store: &ParamStore,
    record: &DatasetRecord,
    routing: RoutingMode,
) -> Result<(Tape, f64, f64, numkit::Var)> {
    if !record.degradation.is_clean() {
        return Err(Error::Config(format!(
            "phase 1 needs uncorrupted records; record {} carries {}",
            record.id, record.degradation
        )));
    }
    let mut tape = Tape::with_trainable(phase1_trainable);
    let pass = model.forward_with(&mut tape, store, &record.features, routing)?;
    let answers = StructuredAnswerSet::from_scene(&record.scene);
    let text = text_loss(&mut tape, &pass.logits, &answers)?
        .ok_or_else(|| Error::Invariant("no supervised answer field".into()))?;
    let target = normalized_target(&horizon_points(&record.scene.future_trajectory), &model.cfg);
    let wp = waypoint_loss(&mut tape, pass.waypoints, &target)?;
    let total = tape.add(text, wp)?;
    let (t, w) = (tape.value(text).data()[0], tape.value(wp).data()[0]);
    Ok((tape, t, w, total))
}

/// One optimizer step on the batch mean of `L_text + L_waypoint`.
pub fn phase1_step(model: &mut Model, batch: &[DatasetRecord], routing: RoutingMode, adam: &AdamConfig) -> Result<Phase1Losses> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    model.store.zero_grad();
    let scale = 1.0 / batch.len() as f64;
    let mut out = Phase1Losses::default();
    for r in batch {
        let (tape, text, wp, total) = phase1_record_loss(model, &model.store, r, routing)?;
        let grads = tape.backward(total)?.into_params();
        model.store.accumulate(&grads, scale)?;
        out.text += text * scale;
        out.waypoint += wp * scale;
    }
    out.total = out.text + out.waypoint;
    check_finite(&[out.total])?;
    adam_step(&mut model.store, adam, phase1_trainable)?;
    Ok(out)
}

/// Router logits of one record on a router-only tape; experts are not run
/// because frozen experts do not influence the routing loss.
pub fn route_logits(model: &Model, store: &ParamStore, f: &ModalityFeatureSet) -> Result<(Tape, numkit::Var)> {
    let mut tape = Tape::with_trainable(phase2_trainable);
    let fused = fused_input(&mut tape, f, model.feature_dim)?;
    let q = embed_queries(&mut tape, store, &model.cfg)?;
    let logits = router_logits(&mut tape, store, &model.cfg, model.context(), q, fused)?;
    Ok((tape, logits))
}

/// One router update; each input carries its availability label, broadcast to
/// every query.
pub fn phase2_step(model: &mut Model, batch: &[(ModalityFeatureSet, Branch)], adam: &AdamConfig) -> Result<Phase2Stats> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    model.store.zero_grad();
    let scale = 1.0 / batch.len() as f64;
    let mut stats = Phase2Stats::default();
    for (f, label) in batch {
        let (mut tape, logits) = route_logits(model, &model.store, f)?;
        let n = tape.value(logits).rows();
        let targets = vec![label.index(); n];
        let loss = tape.softmax_xent(logits, &targets)?;
        let grads = tape.backward(loss)?.into_params();
        if let Some(name) = grads.keys().find(|k| !phase2_trainable(k)) {
            return Err(Error::Invariant(format!("frozen parameter '{name}' received a gradient")));
        }
        model.store.accumulate(&grads, scale)?;
        stats.route += tape.value(loss).data()[0] / n as f64 * scale;
        stats.accuracy += routing_hits(tape.value(logits), *label) as f64 / n as f64 * scale;
    }
    check_finite(&[stats.route])?;
    adam_step(&mut model.store, adam, phase2_trainable)?;
    Ok(stats)
}

/// Queries whose arg-max branch equals `label`.
pub fn routing_hits(logits: &Tensor, label: Branch) -> usize {
    (0..logits.rows())
        .filter(|&i| crate::moro::hard_assign(logits.row_slice(i)) == label)
        .count()
}

fn check_finite(v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Invariant("non-finite training loss".into()))
    }
}

fn epoch_order(len: usize, train_seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut seed::rng(seed::derive(train_seed, epoch), seed::SHUFFLE));
    order
}

/// Runs the configured phase over `data`. `progress` sees each finished epoch.
pub fn train(
    model: &mut Model,
    data: &dyn RecordSource,
    cfg: &TrainConfig,
    mut progress: impl FnMut(&EpochLog),
) -> Result<TrainLog> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let mut adam = AdamConfig {
        lr: cfg.learning_rate(),
        ..AdamConfig::default()
    };
    let total_steps = cfg.epochs * data.len().div_ceil(cfg.batch_size);
    let mut step = 0;
    model.store.reset_optimizer();
    let trainable: fn(&str) -> bool = if cfg.phase == 1 { phase1_trainable } else { phase2_trainable };
    let frozen = frozen_checksums(&model.store, trainable)?;
    let mut log = TrainLog {
        phase: cfg.phase,
        seed: cfg.seed,
        records: data.len(),
        epochs: Vec::new(),
    };
    for epoch in 0..cfg.epochs {
        let order = epoch_order(data.len(), cfg.seed, epoch as u64);
        let mut entry = EpochLog {
            epoch,
            steps: 0,
            l_text: None,
            l_waypoint: None,
            l_total: None,
            l_route: None,
            router_accuracy: None,
        };
        let mut sums = [0.0f64; 3];
        for chunk in order.chunks(cfg.batch_size) {
            let records = chunk.iter().map(|&i| data.get(i)).collect::<Result<Vec<_>>>()?;
            adam.lr = cfg.learning_rate() * cfg.schedule.factor(step, total_steps);
            step += 1;
            if cfg.phase == 1 {
                let l = phase1_step(model, &records, cfg.routing, &adam)?;
                sums[0] += l.text;
                sums[1] += l.waypoint;
                sums[2] += l.total;
            } else {
                let batch = records
                    .iter()
                    .map(|r| {
                        if !r.degradation.is_clean() {
                            return Err(Error::Config(format!(
                                "phase 2 applies its own dropout; record {} is already corrupted",
                                r.id
                            )));
                        }
                        let d = draw_dropout(cfg.seed, epoch as u64, r.id);
                        Ok((apply_degradation(&r.features, &d.spec(), r.seed), d.label()))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let s = phase2_step(model, &batch, &adam)?;
                sums[0] += s.route;
                sums[1] += s.accuracy;
            }
            entry.steps += 1;
        }
        let n = entry.steps as f64;
        if cfg.phase == 1 {
            entry.l_text = Some(sums[0] / n);
            entry.l_waypoint = Some(sums[1] / n);
            entry.l_total = Some(sums[2] / n);
        } else {
            entry.l_route = Some(sums[0] / n);
            entry.router_accuracy = Some(sums[1] / n);
        }
        progress(&entry);
        log.epochs.push(entry);
    }
    verify_frozen(&model.store, &frozen)?;
    Ok(log)
}
