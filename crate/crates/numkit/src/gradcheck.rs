//! Central finite-difference validation of analytic gradients.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{NumError, Result};
use crate::params::{Gradients, ParamStore};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    pub epsilon: f64,
    pub tolerance: f64,
    /// Tensors larger than this are checked on a seeded coordinate sample of this size.
    pub coords_per_tensor: usize,
    pub seed: u64,
    /// Lower bound on the relative-error denominator. Central differences of a
    /// loss of size `L` carry roughly `1e-16 * L / epsilon` of rounding noise,
    /// so gradients below this floor are compared in absolute terms.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            tolerance: 1e-5,
            coords_per_tensor: 32,
            seed: 0,
            floor: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub per_param: BTreeMap<String, f64>,
    pub max_rel_error: f64,
    pub worst: Option<String>,
    pub tolerance: f64,
    pub pass: bool,
}

/// `|a - f| / max(|a|, |f|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `analytic` against central differences of `loss_fn` around `params`.
///
/// `loss_fn` is evaluated twice at the unperturbed point first; any bitwise
/// difference is reported as [`NumError::NonDeterministic`].
pub fn finite_diff_check<F>(
    loss_fn: F,
    params: &ParamStore,
    analytic: &Gradients,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore) -> Result<f64>,
{
    let first = loss_fn(params)?;
    let second = loss_fn(params)?;
    if first.to_bits() != second.to_bits() {
        return Err(NumError::NonDeterministic { first, second });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut work = params.clone();
    let mut per_param = BTreeMap::new();
    let mut max_rel: f64 = 0.0;
    let mut worst = None;
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in names {
        let n = params.get(&name)?.len();
        let grad = analytic.get(&name);
        let coords: Vec<usize> = if n <= cfg.coords_per_tensor {
            (0..n).collect()
        } else {
            let mut c = sample(&mut rng, n, cfg.coords_per_tensor).into_vec();
            c.sort_unstable();
            c
        };
        let mut tensor_max: f64 = 0.0;
        for i in coords {
            let orig = params.get(&name)?.data()[i];
            work.get_mut(&name)?.data_mut()[i] = orig + cfg.epsilon;
            let plus = loss_fn(&work)?;
            work.get_mut(&name)?.data_mut()[i] = orig - cfg.epsilon;
            let minus = loss_fn(&work)?;
            work.get_mut(&name)?.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * cfg.epsilon);
            let a = grad.map_or(0.0, |g| g.data()[i]);
            tensor_max = tensor_max.max(relative_error(a, numeric, cfg.floor));
        }
        if tensor_max > max_rel {
            max_rel = tensor_max;
            worst = Some(name.clone());
        }
        per_param.insert(name, tensor_max);
    }
    Ok(GradCheckReport {
        per_param,
        max_rel_error: max_rel,
        worst,
        tolerance: cfg.tolerance,
        pass: max_rel < cfg.tolerance,
    })
}
