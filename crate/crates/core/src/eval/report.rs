//! Whole-dataset evaluation, corruption sweeps and report documents.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::metrics::{ade, bleu_n, fde, min_ade, FieldTally};
use crate::heads::{render_caption, StructuredAnswerSet, TrajectoryModes, HORIZONS};
use crate::labeler::horizon_points;
use crate::model::{Model, Prediction};
use crate::moro::RoutingMode;
use crate::sim::{apply_degradation, DatasetRecord, DegradationSpec, RecordSource};
use crate::vocab::{Branch, Vocab};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BreakdownEntry {
    pub degradation: String,
    pub count: usize,
    pub macro_accuracy: f64,
    pub min_ade: f64,
    pub routing_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub schema_version: u32,
    /// The degradation cell, or `as_stored` for the records' own corruption.
    pub cell: String,
    pub routing: String,
    pub record_count: usize,
    pub config_hash: String,
    pub bleu_1: f64,
    pub bleu_2: f64,
    pub bleu_4: f64,
    pub field_accuracy: BTreeMap<String, f64>,
    pub macro_accuracy: f64,
    /// Euclidean final displacement of the best mode, meters.
    pub fde: f64,
    /// Squared final displacement of the best mode, square meters.
    pub fde_squared: f64,
    pub min_ade: f64,
    pub routing_accuracy: Option<f64>,
    /// Per degradation, summing to `record_count`.
    pub breakdown: Vec<BreakdownEntry>,
}

impl MetricReport {
    pub fn check(&self) -> Result<()> {
        let mut values = vec![self.bleu_1, self.bleu_2, self.bleu_4, self.macro_accuracy, self.fde, self.fde_squared, self.min_ade];
        values.extend(self.field_accuracy.values());
        values.extend(self.routing_accuracy);
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invariant(format!("non-finite metric in cell {}", self.cell)));
        }
        let total: usize = self.breakdown.iter().map(|b| b.count).sum();
        if total != self.record_count {
            return Err(Error::Invariant(format!(
                "breakdown covers {total} of {} records",
                self.record_count
            )));
        }
        Ok(())
    }

    /// `(metric, value)` pairs in a fixed order, for flat exports.
    pub fn flat(&self) -> Vec<(String, f64)> {
        let mut v = vec![
            ("bleu_1".to_string(), self.bleu_1),
            ("bleu_2".into(), self.bleu_2),
            ("bleu_4".into(), self.bleu_4),
            ("macro_accuracy".into(), self.macro_accuracy),
            ("fde".into(), self.fde),
            ("fde_squared".into(), self.fde_squared),
            ("min_ade".into(), self.min_ade),
        ];
        if let Some(r) = self.routing_accuracy {
            v.push(("routing_accuracy".into(), r));
        }
        for (k, a) in &self.field_accuracy {
            v.push((format!("accuracy.{k}"), *a));
        }
        v
    }
}

/// One evaluated record, as written to the prediction dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: u64,
    pub degradation: String,
    pub routing_label: Branch,
    pub answers: StructuredAnswerSet,
    pub caption: String,
    pub reference: String,
    pub modes: TrajectoryModes,
    pub ground_truth: [[f64; 2]; HORIZONS],
    pub best_mode: usize,
    pub min_ade: f64,
    pub routing_accuracy: Option<f64>,
}

#[derive(Clone, Debug, Default)]
struct Group {
    count: usize,
    tally: FieldTally,
    ade: f64,
    route_hits: f64,
    routed: usize,
}

/// Running sums for one report.
#[derive(Clone, Debug, Default)]
pub struct Accumulator {
    candidates: Vec<Vec<String>>,
    references: Vec<Vec<String>>,
    tally: FieldTally,
    fde: f64,
    fde_squared: f64,
    ade: f64,
    route_hits: f64,
    routed: usize,
    groups: BTreeMap<String, Group>,
}

impl Accumulator {
    /// Scores one prediction and returns its dump entry.
    pub fn add(&mut self, record: &DatasetRecord, degradation: &DegradationSpec, label: Branch, pred: Prediction) -> Result<PredictionRecord> {
        let gt_answers = StructuredAnswerSet::from_scene(&record.scene);
        let reference = render_caption(&gt_answers);
        let gt = horizon_points(&record.scene.future_trajectory);
        let (best, m) = min_ade(&pred.modes, &gt)?;
        for mode in &pred.modes.modes {
            if best > ade(mode, &gt) {
                return Err(Error::Invariant(format!("min_ade exceeds a mode's ADE on record {}", record.id)));
            }
        }
        let fin = pred.modes.modes[m][HORIZONS - 1];
        let target = gt[HORIZONS - 1];
        let route = pred.routing_accuracy(label);

        self.candidates.push(pred.caption.tokens());
        self.references.push(reference.tokens());
        let mut t = FieldTally::default();
        t.score(&pred.answers, &gt_answers);
        self.tally.merge(&t);
        self.fde += fde(fin, target, false);
        self.fde_squared += fde(fin, target, true);
        self.ade += best;
        let key = degradation.to_string();
        let g = self.groups.entry(key.clone()).or_default();
        g.count += 1;
        g.tally.merge(&t);
        g.ade += best;
        if let Some(r) = route {
            self.route_hits += r;
            self.routed += 1;
            g.route_hits += r;
            g.routed += 1;
        }
        Ok(PredictionRecord {
            id: record.id,
            degradation: key,
            routing_label: label,
            caption: pred.caption.text(),
            reference: reference.text(),
            answers: pred.answers,
            modes: pred.modes,
            ground_truth: gt,
            best_mode: m,
            min_ade: best,
            routing_accuracy: route,
        })
    }

    pub fn merge(&mut self, other: &Accumulator) {
        self.candidates.extend(other.candidates.iter().cloned());
        self.references.extend(other.references.iter().cloned());
        self.tally.merge(&other.tally);
        self.fde += other.fde;
        self.fde_squared += other.fde_squared;
        self.ade += other.ade;
        self.route_hits += other.route_hits;
        self.routed += other.routed;
        for (k, g) in &other.groups {
            let e = self.groups.entry(k.clone()).or_default();
            e.count += g.count;
            e.tally.merge(&g.tally);
            e.ade += g.ade;
            e.route_hits += g.route_hits;
            e.routed += g.routed;
        }
    }

    pub fn report(&self, cell: &str, routing: RoutingMode, config_hash: &str) -> Result<MetricReport> {
        let n = self.candidates.len();
        if n == 0 {
            return Err(Error::Data("no records evaluated".into()));
        }
        let nf = n as f64;
        let report = MetricReport {
            schema_version: REPORT_SCHEMA_VERSION,
            cell: cell.to_string(),
            routing: routing_name(routing),
            record_count: n,
            config_hash: config_hash.to_string(),
            bleu_1: bleu_n(&self.candidates, &self.references, 1)?,
            bleu_2: bleu_n(&self.candidates, &self.references, 2)?,
            bleu_4: bleu_n(&self.candidates, &self.references, 4)?,
            field_accuracy: self.tally.accuracy(),
            macro_accuracy: self.tally.macro_accuracy(),
            fde: self.fde / nf,
            fde_squared: self.fde_squared / nf,
            min_ade: self.ade / nf,
            routing_accuracy: (self.routed > 0).then(|| self.route_hits / self.routed as f64),
            breakdown: self
                .groups
                .iter()
                .map(|(k, g)| BreakdownEntry {
                    degradation: k.clone(),
                    count: g.count,
                    macro_accuracy: g.tally.macro_accuracy(),
                    min_ade: g.ade / g.count as f64,
                    routing_accuracy: (g.routed > 0).then(|| g.route_hits / g.routed as f64),
                })
                .collect(),
        };
        report.check()?;
        Ok(report)
    }
}

pub fn routing_name(mode: RoutingMode) -> String {
    match mode {
        RoutingMode::Stacked => "stacked".into(),
        RoutingMode::Routed => "routed".into(),
        RoutingMode::Fixed(b) => format!("fixed:{}", b.as_str()),
    }
}

pub fn parse_routing(s: &str) -> Result<RoutingMode> {
    match s {
        "stacked" => Ok(RoutingMode::Stacked),
        "routed" => Ok(RoutingMode::Routed),
        _ => {
            let b = s
                .strip_prefix("fixed:")
                .and_then(|b| Branch::parse(b))
                .ok_or_else(|| Error::Config(format!("unknown routing mode '{s}' (stacked, routed, fixed:l|c|lc)")))?;
            Ok(RoutingMode::Fixed(b))
        }
    }
}

/// Fails unless the model was built for this feature space.
pub fn check_compatible(model: &Model, data_hash: &str) -> Result<()> {
    if model.config_hash != data_hash {
        return Err(Error::Checksum {
            expected: model.config_hash.clone(),
            found: data_hash.to_string(),
        });
    }
    Ok(())
}

/// Evaluates every record. With `cell` set, that degradation is re-applied to
/// the records' clean features; otherwise features are used as stored.
pub fn evaluate_into(
    model: &Model,
    data: &dyn RecordSource,
    mode: RoutingMode,
    cell: Option<&DegradationSpec>,
    acc: &mut Accumulator,
    mut sink: impl FnMut(PredictionRecord) -> Result<()>,
) -> Result<()> {
    for i in 0..data.len() {
        let r = data.get(i)?;
        let (features, spec) = match cell {
            None => (None, r.degradation),
            Some(d) => {
                if !r.degradation.is_clean() {
                    return Err(Error::Config(format!(
                        "sweeps re-apply corruption to clean features; record {} carries {}",
                        r.id, r.degradation
                    )));
                }
                (Some(apply_degradation(&r.features, d, r.seed)), *d)
            }
        };
        let label = spec
            .routing_label()
            .ok_or_else(|| Error::Config(format!("corruption {spec} removes every sensor")))?;
        let pred = model.predict(features.as_ref().unwrap_or(&r.features), mode)?;
        sink(acc.add(&r, &spec, label, pred)?)?;
    }
    Ok(())
}

pub fn evaluate(model: &Model, data: &dyn RecordSource, mode: RoutingMode, cell: Option<&DegradationSpec>) -> Result<MetricReport> {
    let mut acc = Accumulator::default();
    evaluate_into(model, data, mode, cell, &mut acc, |_| Ok(()))?;
    let name = cell.map_or("as_stored".to_string(), |c| c.to_string());
    acc.report(&name, mode, &model.config_hash)
}

/// One report per grid cell, then the combined report over all cells.
pub fn corruption_sweep(
    model: &Model,
    data: &dyn RecordSource,
    mode: RoutingMode,
    grid: &[DegradationSpec],
) -> Result<(Vec<MetricReport>, MetricReport)> {
    if grid.is_empty() {
        return Err(Error::Config("empty degradation grid".into()));
    }
    let mut all = Accumulator::default();
    let mut cells = Vec::with_capacity(grid.len());
    for spec in grid {
        let mut acc = Accumulator::default();
        evaluate_into(model, data, mode, Some(spec), &mut acc, |_| Ok(()))?;
        cells.push(acc.report(&spec.to_string(), mode, &model.config_hash)?);
        all.merge(&acc);
    }
    let combined = all.report("combined", mode, &model.config_hash)?;
    Ok((cells, combined))
}

/// Held-out routing accuracy under per-record dropout draws.
pub fn routing_accuracy(model: &Model, data: &dyn RecordSource, draw_seed: u64) -> Result<f64> {
    let mut hits = 0.0;
    for i in 0..data.len() {
        let r = data.get(i)?;
        let d = crate::trainer::draw_dropout(draw_seed, 0, r.id);
        let f = apply_degradation(&r.features, &d.spec(), r.seed);
        let (tape, logits) = crate::trainer::route_logits(model, &model.store, &f)?;
        let l = tape.value(logits);
        hits += crate::trainer::routing_hits(l, d.label()) as f64 / l.rows() as f64;
    }
    Ok(hits / data.len() as f64)
}
