//! Clamped uniform cubic B-splines: least-squares fitting and de Boor evaluation.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEGREE: usize = 3;

/// Timestamped planar poses `(x, y, heading)` in a world frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseSequence {
    times: Vec<f64>,
    poses: Vec<[f64; 3]>,
}

impl PoseSequence {
    pub fn new(times: Vec<f64>, poses: Vec<[f64; 3]>) -> Result<Self> {
        if times.len() != poses.len() {
            return Err(Error::Data(format!(
                "pose sequence has {} timestamps but {} poses",
                times.len(),
                poses.len()
            )));
        }
        if times.len() < DEGREE + 1 {
            return Err(Error::Data(format!(
                "cubic fit needs at least {} poses, got {}",
                DEGREE + 1,
                times.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Data("timestamps must be strictly increasing".into()));
        }
        if times.iter().chain(poses.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::Data("pose sequence contains non-finite values".into()));
        }
        Ok(Self { times, poses })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn poses(&self) -> &[[f64; 3]] {
        &self.poses
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn first_time(&self) -> f64 {
        self.times[0]
    }

    pub fn last_time(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Pose at `t`, linearly interpolated between samples (heading along the
    /// shorter arc).
    pub fn pose_at(&self, t: f64) -> Result<[f64; 3]> {
        if t < self.first_time() || t > self.last_time() {
            return Err(Error::Data(format!("time {t} outside pose sequence")));
        }
        let i = self.times.partition_point(|&s| s <= t).saturating_sub(1);
        if i + 1 >= self.len() || self.times[i] == t {
            return Ok(self.poses[i]);
        }
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let a = (t - t0) / (t1 - t0);
        let (p, q) = (self.poses[i], self.poses[i + 1]);
        let mut dh = q[2] - p[2];
        dh = (dh + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU) - std::f64::consts::PI;
        Ok([p[0] + a * (q[0] - p[0]), p[1] + a * (q[1] - p[1]), p[2] + a * dh])
    }
}

/// How control points are chosen for the fit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplineMode {
    /// `max(4, N/3)` control points fitted by least squares.
    #[default]
    LeastSquares,
    /// One control point per pose: interpolates the samples.
    Exact,
}

/// A clamped cubic B-spline curve in the plane.
#[derive(Clone, Debug, PartialEq)]
pub struct BSpline {
    knots: Vec<f64>,
    ctrl: Vec<[f64; 2]>,
}

/// Clamped knot vector with uniform interior spacing over `[t0, t1]`.
pub fn clamped_uniform_knots(t0: f64, t1: f64, n_ctrl: usize) -> Vec<f64> {
    let spans = n_ctrl - DEGREE;
    let mut k = vec![t0; DEGREE + 1];
    for i in 1..spans {
        k.push(t0 + (t1 - t0) * i as f64 / spans as f64);
    }
    k.extend(std::iter::repeat(t1).take(DEGREE + 1));
    k
}

/// Index `s` of the knot span with `knots[s] <= t < knots[s+1]`; the right end
/// belongs to the last non-empty span.
fn find_span(knots: &[f64], n_ctrl: usize, t: f64) -> usize {
    if t >= knots[n_ctrl] {
        return n_ctrl - 1;
    }
    let mut s = DEGREE;
    while s < n_ctrl - 1 && t >= knots[s + 1] {
        s += 1;
    }
    s
}

/// The `DEGREE + 1` basis functions that are non-zero on span `s` at `t`.
fn basis_functions(knots: &[f64], s: usize, t: f64) -> [f64; DEGREE + 1] {
    let mut n = [0.0; DEGREE + 1];
    let mut left = [0.0; DEGREE + 1];
    let mut right = [0.0; DEGREE + 1];
    n[0] = 1.0;
    for j in 1..=DEGREE {
        left[j] = t - knots[s + 1 - j];
        right[j] = knots[s + j] - t;
        let mut saved = 0.0;
        for r in 0..j {
            let tmp = n[r] / (right[r + 1] + left[j - r]);
            n[r] = saved + right[r + 1] * tmp;
            saved = left[j - r] * tmp;
        }
        n[j] = saved;
    }
    n
}

impl BSpline {
    pub fn new(knots: Vec<f64>, ctrl: Vec<[f64; 2]>) -> Result<Self> {
        if ctrl.len() < DEGREE + 1 || knots.len() != ctrl.len() + DEGREE + 1 {
            return Err(Error::Data(format!(
                "{} knots do not match {} control points",
                knots.len(),
                ctrl.len()
            )));
        }
        Ok(Self { knots, ctrl })
    }

    /// Least-squares fit of `points` sampled at `times` with `n_ctrl` control points.
    pub fn fit(times: &[f64], points: &[[f64; 2]], n_ctrl: usize) -> Result<Self> {
        let n = times.len();
        if n_ctrl < DEGREE + 1 || n_ctrl > n {
            return Err(Error::Data(format!(
                "cannot fit {n_ctrl} control points to {n} samples"
            )));
        }
        let knots = clamped_uniform_knots(times[0], times[n - 1], n_ctrl);
        let mut b = DMatrix::<f64>::zeros(n, n_ctrl);
        for (i, &t) in times.iter().enumerate() {
            let s = find_span(&knots, n_ctrl, t);
            let f = basis_functions(&knots, s, t);
            for (j, v) in f.iter().enumerate() {
                b[(i, s - DEGREE + j)] = *v;
            }
        }
        let rhs = DMatrix::from_fn(n, 2, |i, j| points[i][j]);
        let solved = if n_ctrl == n {
            b.lu().solve(&rhs)
        } else {
            let bt = b.transpose();
            (&bt * &b).cholesky().map(|c| c.solve(&(&bt * &rhs)))
        };
        let c = solved.ok_or_else(|| Error::Data("spline system is singular".into()))?;
        let ctrl = (0..n_ctrl).map(|j| [c[(j, 0)], c[(j, 1)]]).collect();
        Self::new(knots, ctrl)
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.knots[DEGREE], self.knots[self.ctrl.len()])
    }

    pub fn control_points(&self) -> &[[f64; 2]] {
        &self.ctrl
    }

    /// de Boor recursion on the span containing `t`.
    pub fn eval(&self, t: f64) -> [f64; 2] {
        let n = self.ctrl.len();
        let s = find_span(&self.knots, n, t);
        let mut d: [[f64; 2]; DEGREE + 1] = std::array::from_fn(|j| self.ctrl[s - DEGREE + j]);
        for r in 1..=DEGREE {
            for j in (r..=DEGREE).rev() {
                let i = s - DEGREE + j;
                let denom = self.knots[i + DEGREE + 1 - r] - self.knots[i];
                let a = if denom == 0.0 { 0.0 } else { (t - self.knots[i]) / denom };
                for c in 0..2 {
                    d[j][c] = (1.0 - a) * d[j - 1][c] + a * d[j][c];
                }
            }
        }
        d[DEGREE]
    }

    /// Evaluation through explicit basis functions; an independent route to [`Self::eval`].
    pub fn eval_basis(&self, t: f64) -> [f64; 2] {
        let n = self.ctrl.len();
        let s = find_span(&self.knots, n, t);
        let f = basis_functions(&self.knots, s, t);
        let mut out = [0.0; 2];
        for (j, v) in f.iter().enumerate() {
            let p = self.ctrl[s - DEGREE + j];
            out[0] += v * p[0];
            out[1] += v * p[1];
        }
        out
    }
}

pub fn control_point_count(samples: usize, mode: SplineMode) -> usize {
    match mode {
        SplineMode::LeastSquares => (samples / 3).max(DEGREE + 1),
        SplineMode::Exact => samples,
    }
}

/// Fits the planar positions of `p`.
pub fn fit_poses(p: &PoseSequence, mode: SplineMode) -> Result<BSpline> {
    let pts: Vec<[f64; 2]> = p.poses().iter().map(|q| [q[0], q[1]]).collect();
    BSpline::fit(p.times(), &pts, control_point_count(p.len(), mode))
}

/// Smoothed `(x, y)` of `p` at each of `sample_times`.
pub fn bspline_smooth(p: &PoseSequence, sample_times: &[f64], mode: SplineMode) -> Result<Vec<[f64; 2]>> {
    for &t in sample_times {
        if !(t >= p.first_time() && t <= p.last_time()) {
            return Err(Error::Data(format!(
                "sample time {t} outside [{}, {}]",
                p.first_time(),
                p.last_time()
            )));
        }
    }
    let spline = fit_poses(p, mode)?;
    Ok(sample_times.iter().map(|&t| spline.eval(t)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(f: impl Fn(f64) -> [f64; 2], n: usize, dt: f64) -> PoseSequence {
        let times: Vec<f64> = (0..n).map(|i| i as f64 * dt).collect();
        let poses = times.iter().map(|&t| { let p = f(t); [p[0], p[1], 0.0] }).collect();
        PoseSequence::new(times, poses).unwrap()
    }

    #[test]
    fn knots_are_clamped() {
        let k = clamped_uniform_knots(0.0, 3.0, 6);
        assert_eq!(k, vec![0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 3.0, 3.0, 3.0, 3.0]);
    }

    #[test]
    fn basis_is_a_partition_of_unity() {
        let k = clamped_uniform_knots(0.0, 1.0, 9);
        for i in 0..=50 {
            let t = i as f64 / 50.0;
            let s = find_span(&k, 9, t);
            let sum: f64 = basis_functions(&k, s, t).iter().sum();
            assert!((sum - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn de_boor_agrees_with_basis_sum() {
        let k = clamped_uniform_knots(0.0, 4.0, 7);
        let ctrl = vec![[0.0, 1.0], [1.0, 3.0], [2.5, -1.0], [3.0, 0.5], [4.0, 2.0], [5.0, 0.0], [6.0, 1.0]];
        let s = BSpline::new(k, ctrl).unwrap();
        for i in 0..=40 {
            let t = i as f64 * 0.1;
            let (a, b) = (s.eval(t), s.eval_basis(t));
            assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
        }
        assert_eq!(s.eval(0.0), [0.0, 1.0]);
        assert_eq!(s.eval(4.0), [6.0, 1.0]);
    }

    #[test]
    fn too_few_poses_and_bad_times_are_rejected() {
        assert!(PoseSequence::new(vec![0.0, 1.0, 2.0], vec![[0.0; 3]; 3]).is_err());
        assert!(PoseSequence::new(vec![0.0, 1.0, 1.0, 2.0], vec![[0.0; 3]; 4]).is_err());
        let p = seq(|t| [t, 0.0], 10, 1.0);
        assert!(bspline_smooth(&p, &[9.5], SplineMode::LeastSquares).is_err());
    }

    #[test]
    fn exact_mode_interpolates() {
        let p = seq(|t| [t.sin() * 3.0, (0.7 * t).cos()], 12, 0.5);
        let out = bspline_smooth(&p, p.times(), SplineMode::Exact).unwrap();
        for (q, o) in p.poses().iter().zip(&out) {
            assert!((q[0] - o[0]).abs() < 1e-9 && (q[1] - o[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn pose_interpolation_wraps_heading() {
        let p = PoseSequence::new(
            vec![0.0, 1.0, 2.0, 3.0],
            vec![[0.0, 0.0, 3.1], [1.0, 0.0, -3.1], [2.0, 0.0, 0.0], [3.0, 0.0, 0.0]],
        )
        .unwrap();
        let q = p.pose_at(0.5).unwrap();
        assert!((q[0] - 0.5).abs() < 1e-12);
        assert!(q[2].abs() > 3.1);
    }
}
