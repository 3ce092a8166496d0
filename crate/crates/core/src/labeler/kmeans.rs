//! K-means action vocabulary over vectorized future trajectories.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::Action;

pub const MAX_ITERATIONS: usize = 100;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest center; ties go to the lowest index.
pub fn nearest(centers: &[Vec<f64>], x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centers.iter().enumerate() {
        let d = sq_dist(c, x);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansRun {
    pub centers: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    /// Objective after initialization and after every Lloyd iteration.
    pub objective: Vec<f64>,
}

impl KMeansRun {
    pub fn final_objective(&self) -> f64 {
        *self.objective.last().unwrap()
    }
}

fn objective(data: &[Vec<f64>], centers: &[Vec<f64>], assignment: &[usize]) -> f64 {
    data.iter().zip(assignment).map(|(x, &a)| sq_dist(x, &centers[a])).sum()
}

fn plus_plus_init<R: Rng>(data: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut centers = vec![data[rng.random_range(0..data.len())].clone()];
    let mut d2: Vec<f64> = data.iter().map(|x| sq_dist(x, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total <= 0.0 {
            rng.random_range(0..data.len())
        } else {
            let mut u = rng.random::<f64>() * total;
            let mut idx = data.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    idx = i;
                    break;
                }
                u -= w;
            }
            idx
        };
        centers.push(data[pick].clone());
        for (x, d) in data.iter().zip(d2.iter_mut()) {
            *d = d.min(sq_dist(x, &centers[centers.len() - 1]));
        }
    }
    centers
}

/// One seeded k-means++ / Lloyd run, finished with single-point transfers.
///
/// Empty clusters are re-seeded at the point farthest from its center. Returns
/// an invariant error if the objective ever increases.
pub fn kmeans<R: Rng>(data: &[Vec<f64>], k: usize, rng: &mut R) -> Result<KMeansRun> {
    if k == 0 || data.len() < k {
        return Err(Error::Data(format!(
            "k-means needs at least {k} points, got {}",
            data.len()
        )));
    }
    let dim = data[0].len();
    let mut centers = plus_plus_init(data, k, rng);
    let mut assignment: Vec<usize> = data.iter().map(|x| nearest(&centers, x).0).collect();
    let mut history = vec![objective(data, &centers, &assignment)];
    for _ in 0..MAX_ITERATIONS {
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (x, &a) in data.iter().zip(&assignment) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(x) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..data.len())
                    .max_by(|&i, &j| {
                        sq_dist(&data[i], &centers[assignment[i]])
                            .total_cmp(&sq_dist(&data[j], &centers[assignment[j]]))
                            .then(j.cmp(&i))
                    })
                    .unwrap();
                centers[c] = data[far].clone();
                counts[assignment[far]] -= 1;
                assignment[far] = c;
                counts[c] = 1;
            }
        }
        let next: Vec<usize> = data.iter().map(|x| nearest(&centers, x).0).collect();
        let obj = objective(data, &centers, &next);
        let prev = *history.last().unwrap();
        if obj > prev + 1e-9 * prev.abs().max(1.0) {
            return Err(Error::Invariant(format!(
                "k-means objective increased from {prev} to {obj}"
            )));
        }
        history.push(obj);
        let done = next == assignment;
        assignment = next;
        if done {
            break;
        }
    }
    hartigan(data, &mut centers, &mut assignment, &mut history);
    Ok(KMeansRun {
        centers,
        assignment,
        objective: history,
    })
}

/// Single-point transfers after Lloyd converges: moving `x` from cluster `a`
/// to `b` changes the objective by `n_b/(n_b+1) d(x,c_b) - n_a/(n_a-1) d(x,c_a)`,
/// so every accepted move strictly lowers it. Centers stay exact means.
fn hartigan(data: &[Vec<f64>], centers: &mut [Vec<f64>], assignment: &mut [usize], history: &mut Vec<f64>) {
    let k = centers.len();
    let mut counts = vec![0usize; k];
    for &a in assignment.iter() {
        counts[a] += 1;
    }
    for _ in 0..MAX_ITERATIONS {
        let mut moved = false;
        for (i, x) in data.iter().enumerate() {
            let a = assignment[i];
            if counts[a] < 2 {
                continue;
            }
            let na = counts[a] as f64;
            let leave = na / (na - 1.0) * sq_dist(x, &centers[a]);
            let mut best: Option<(usize, f64)> = None;
            for b in (0..k).filter(|&b| b != a) {
                let nb = counts[b] as f64;
                let join = nb / (nb + 1.0) * sq_dist(x, &centers[b]);
                if join < leave - 1e-12 * leave.max(1.0) && best.is_none_or(|(_, j)| join < j) {
                    best = Some((b, join));
                }
            }
            let Some((b, _)) = best else { continue };
            let (na, nb) = (counts[a] as f64, counts[b] as f64);
            for (c, v) in centers[a].iter_mut().zip(x) {
                *c = (*c * na - v) / (na - 1.0);
            }
            for (c, v) in centers[b].iter_mut().zip(x) {
                *c = (*c * nb + v) / (nb + 1.0);
            }
            counts[a] -= 1;
            counts[b] += 1;
            assignment[i] = b;
            moved = true;
        }
        if !moved {
            break;
        }
        history.push(objective(data, centers, assignment));
    }
}

/// Best of `restarts` seeded runs by final objective (earliest run wins ties).
pub fn kmeans_restarts<R: Rng>(data: &[Vec<f64>], k: usize, restarts: usize, rng: &mut R) -> Result<KMeansRun> {
    let mut best: Option<KMeansRun> = None;
    for _ in 0..restarts.max(1) {
        let run = kmeans(data, k, rng)?;
        if best.as_ref().is_none_or(|b| run.final_objective() < b.final_objective()) {
            best = Some(run);
        }
    }
    Ok(best.unwrap())
}

/// Thresholds that map a centroid trajectory to an action.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionRule {
    pub stop_length: f64,
    pub lateral: f64,
}

impl Default for ActionRule {
    fn default() -> Self {
        Self {
            stop_length: 1.0,
            lateral: 2.0,
        }
    }
}

/// Polyline length from the origin through every point of `v = [x0, y0, ...]`.
pub fn path_length(v: &[f64]) -> f64 {
    let mut prev = [0.0, 0.0];
    let mut len = 0.0;
    for p in v.chunks_exact(2) {
        len += ((p[0] - prev[0]).powi(2) + (p[1] - prev[1]).powi(2)).sqrt();
        prev = [p[0], p[1]];
    }
    len
}

impl ActionRule {
    pub fn classify(&self, v: &[f64]) -> Action {
        let y_final = v[v.len() - 1];
        if path_length(v) < self.stop_length {
            Action::Stop
        } else if y_final > self.lateral {
            Action::TurnLeft
        } else if y_final < -self.lateral {
            Action::TurnRight
        } else {
            Action::GoStraight
        }
    }
}

/// Cluster centers over vectorized trajectories and the action of each cluster.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionVocabulary {
    pub centers: Vec<Vec<f64>>,
    pub actions: Vec<Action>,
    pub rule: ActionRule,
}

impl ActionVocabulary {
    pub fn from_centers(centers: Vec<Vec<f64>>, rule: ActionRule) -> Self {
        let actions = centers.iter().map(|c| rule.classify(c)).collect();
        Self {
            centers,
            actions,
            rule,
        }
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }
}

/// Fits `k` clusters to vectorized trajectories and maps each to an action.
pub fn kmeans_actions<R: Rng>(
    trajectories: &[Vec<f64>],
    k: usize,
    restarts: usize,
    rule: ActionRule,
    rng: &mut R,
) -> Result<ActionVocabulary> {
    let run = kmeans_restarts(trajectories, k, restarts, rng)?;
    Ok(ActionVocabulary::from_centers(run.centers, rule))
}

/// Action of the nearest cluster center.
pub fn label_action(trajectory: &[f64], vocab: &ActionVocabulary) -> Action {
    vocab.actions[nearest(&vocab.centers, trajectory).0]
}
