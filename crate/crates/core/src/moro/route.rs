//! Hard routing decisions.

use serde::{Deserialize, Serialize};

use crate::vocab::{Branch, Vocab};

/// Router output for one query.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoutingDecision {
    /// `[p_l, p_c, p_lc]`.
    pub probs: [f64; 3],
    pub branch: Branch,
}

/// Argmax with ties resolved in the order l < c < lc.
pub fn hard_assign(p: &[f64]) -> Branch {
    let mut best = 0;
    for i in 1..p.len().min(3) {
        if p[i] > p[best] {
            best = i;
        }
    }
    Branch::from_index(best).unwrap()
}

impl RoutingDecision {
    pub fn from_probs(probs: [f64; 3]) -> Self {
        Self {
            probs,
            branch: hard_assign(&probs),
        }
    }
}
