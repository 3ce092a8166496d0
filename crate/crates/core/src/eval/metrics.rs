//! Caption, answer and trajectory metrics.

use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::heads::{StructuredAnswerSet, TrajectoryModes, HORIZONS};
use crate::sim::SceneState;
use crate::vocab::Vocab;

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Clipped matches and candidate n-gram total of one pair at order `n`.
fn clipped(candidate: &[String], reference: &[String], n: usize) -> (usize, usize) {
    let c = ngram_counts(candidate, n);
    let r = ngram_counts(reference, n);
    let hits = c.iter().map(|(g, &k)| k.min(r.get(g).copied().unwrap_or(0))).sum();
    (hits, candidate.len().saturating_sub(n - 1))
}

/// Corpus-level BLEU with uniform weights over orders `1..=n`, the standard
/// brevity penalty and no smoothing.
pub fn bleu_n(candidates: &[Vec<String>], references: &[Vec<String>], n: usize) -> Result<f64> {
    if candidates.is_empty() {
        return Err(Error::Data("BLEU over an empty corpus".into()));
    }
    if candidates.len() != references.len() {
        return Err(Error::Data(format!(
            "{} candidates against {} references",
            candidates.len(),
            references.len()
        )));
    }
    if n == 0 {
        return Err(Error::Config("BLEU order must be positive".into()));
    }
    let mut log_sum = 0.0;
    for k in 1..=n {
        let (mut hits, mut total) = (0usize, 0usize);
        for (c, r) in candidates.iter().zip(references) {
            let (h, t) = clipped(c, r, k);
            hits += h;
            total += t;
        }
        if hits == 0 || total == 0 {
            return Ok(0.0);
        }
        log_sum += (hits as f64 / total as f64).ln();
    }
    let c: usize = candidates.iter().map(Vec::len).sum();
    let r: usize = references.iter().map(Vec::len).sum();
    let bp = if c < r { (1.0 - r as f64 / c as f64).exp() } else { 1.0 };
    Ok(bp * (log_sum / n as f64).exp())
}

/// BLEU of a single pair.
pub fn sentence_bleu(candidate: &[String], reference: &[String], n: usize) -> Result<f64> {
    bleu_n(&[candidate.to_vec()], &[reference.to_vec()], n)
}

/// Displacement between final points, squared or plain Euclidean.
pub fn fde(pred: [f64; 2], gt: [f64; 2], squared: bool) -> f64 {
    let d2 = (pred[0] - gt[0]).powi(2) + (pred[1] - gt[1]).powi(2);
    if squared {
        d2
    } else {
        d2.sqrt()
    }
}

/// Mean Euclidean distance over the horizon points.
pub fn ade(mode: &[[f64; 2]; HORIZONS], gt: &[[f64; 2]; HORIZONS]) -> f64 {
    mode.iter().zip(gt).map(|(p, g)| fde(*p, *g, false)).sum::<f64>() / HORIZONS as f64
}

/// Smallest per-mode ADE and the mode that attains it (first on ties).
pub fn min_ade(modes: &TrajectoryModes, gt: &[[f64; 2]; HORIZONS]) -> Result<(f64, usize)> {
    let mut best: Option<(f64, usize)> = None;
    for (m, mode) in modes.modes.iter().enumerate() {
        let a = ade(mode, gt);
        if best.is_none_or(|(b, _)| a < b) {
            best = Some((a, m));
        }
    }
    best.ok_or_else(|| Error::Data("trajectory prediction without modes".into()))
}

pub const SCENE_FIELDS: [&str; 7] = [
    "weather",
    "illumination",
    "drivable_availability",
    "free_space_direction",
    "terrain",
    "difficulty",
    "action",
];

pub const OBSTACLE_FIELDS: [&str; 4] = [
    "obstacle_count",
    "obstacle_category",
    "obstacle_direction",
    "obstacle_distance",
];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FieldTally {
    pub correct: BTreeMap<String, usize>,
    pub total: BTreeMap<String, usize>,
}

impl FieldTally {
    fn add(&mut self, field: &str, ok: bool) {
        *self.total.entry(field.to_string()).or_insert(0) += 1;
        *self.correct.entry(field.to_string()).or_insert(0) += ok as usize;
    }

    pub fn merge(&mut self, other: &FieldTally) {
        for (k, v) in &other.total {
            *self.total.entry(k.clone()).or_insert(0) += v;
        }
        for (k, v) in &other.correct {
            *self.correct.entry(k.clone()).or_insert(0) += v;
        }
    }

    /// Accuracy of every field that was scored at least once.
    pub fn accuracy(&self) -> BTreeMap<String, f64> {
        self.total
            .iter()
            .filter(|(_, &t)| t > 0)
            .map(|(k, &t)| (k.clone(), self.correct[k] as f64 / t as f64))
            .collect()
    }

    /// Unweighted mean over scored fields.
    pub fn macro_accuracy(&self) -> f64 {
        let acc = self.accuracy();
        if acc.is_empty() {
            return 0.0;
        }
        acc.values().sum::<f64>() / acc.len() as f64
    }

    /// Scores one prediction. Ground-truth obstacles are matched to predicted
    /// ones with the same direction bin, nearest distance bin first; each
    /// prediction is used once.
    pub fn score(&mut self, pred: &StructuredAnswerSet, gt: &StructuredAnswerSet) {
        self.add("weather", pred.weather == gt.weather);
        self.add("illumination", pred.illumination == gt.illumination);
        self.add("drivable_availability", pred.drivable_availability == gt.drivable_availability);
        self.add("free_space_direction", pred.free_space_direction == gt.free_space_direction);
        self.add("terrain", pred.terrain == gt.terrain);
        self.add("difficulty", pred.difficulty == gt.difficulty);
        self.add("action", pred.action == gt.action);
        self.add("obstacle_count", pred.obstacle_count() == gt.obstacle_count());
        let mut used = [false; crate::heads::OBSTACLE_SLOTS];
        for g in gt.obstacles.iter().flatten() {
            let mut best: Option<(usize, usize)> = None;
            for (j, p) in pred.obstacles.iter().enumerate() {
                let Some(p) = p else { continue };
                if used[j] || p.direction != g.direction {
                    continue;
                }
                let gap = p.distance.index().abs_diff(g.distance.index());
                if best.is_none_or(|(b, _)| gap < b) {
                    best = Some((gap, j));
                }
            }
            match best {
                Some((_, j)) => {
                    used[j] = true;
                    let p = pred.obstacles[j].unwrap();
                    self.add("obstacle_direction", true);
                    self.add("obstacle_category", p.category == g.category);
                    self.add("obstacle_distance", p.distance == g.distance);
                }
                None => {
                    self.add("obstacle_direction", false);
                    self.add("obstacle_category", false);
                    self.add("obstacle_distance", false);
                }
            }
        }
    }
}

/// Per-field exact-match accuracy and the macro mean.
pub fn field_accuracy(pred: &[StructuredAnswerSet], gt: &[SceneState]) -> Result<(BTreeMap<String, f64>, f64)> {
    if pred.len() != gt.len() {
        return Err(Error::Data(format!("{} predictions for {} scenes", pred.len(), gt.len())));
    }
    let mut t = FieldTally::default();
    for (p, g) in pred.iter().zip(gt) {
        t.score(p, &StructuredAnswerSet::from_scene(g));
    }
    Ok((t.accuracy(), t.macro_accuracy()))
}
