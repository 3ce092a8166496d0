//! Future trajectory segments in the ego frame.

use crate::error::{Error, Result};
use crate::labeler::bspline::{fit_poses, PoseSequence, SplineMode};

pub const HORIZON_SECONDS: f64 = 10.0;
pub const SEGMENT_STEP: f64 = 0.5;
pub const SEGMENT_POINTS: usize = 20;

/// Indices into a 20-point segment for the 1, 2, 5 and 10 s horizons.
pub const HORIZON_INDICES: [usize; 4] = [1, 3, 9, 19];

/// World point expressed in the frame of `pose` (x forward, y left).
pub fn to_ego(pose: [f64; 3], p: [f64; 2]) -> [f64; 2] {
    let (s, c) = pose[2].sin_cos();
    let (dx, dy) = (p[0] - pose[0], p[1] - pose[1]);
    [c * dx + s * dy, -s * dx + c * dy]
}

/// Smoothed positions over `(t_now, t_now + 10 s]` at 0.5 s spacing, in the
/// frame of the pose at `t_now`.
pub fn ego_future_segment(p: &PoseSequence, t_now: f64, mode: SplineMode) -> Result<Vec<[f64; 2]>> {
    if t_now < p.first_time() {
        return Err(Error::Data(format!("t_now {t_now} precedes the pose sequence")));
    }
    if t_now + HORIZON_SECONDS > p.last_time() + 1e-9 {
        return Err(Error::Data(format!(
            "insufficient future data: need poses up to {}, sequence ends at {}",
            t_now + HORIZON_SECONDS,
            p.last_time()
        )));
    }
    let origin = p.pose_at(t_now)?;
    let spline = fit_poses(p, mode)?;
    let t_end = p.last_time();
    Ok((1..=SEGMENT_POINTS)
        .map(|i| {
            let t = (t_now + SEGMENT_STEP * i as f64).min(t_end);
            to_ego(origin, spline.eval(t))
        })
        .collect())
}

/// The four horizon waypoints of a 20-point segment.
pub fn horizon_points(segment: &[[f64; 2]]) -> [[f64; 2]; 4] {
    HORIZON_INDICES.map(|i| segment[i])
}

/// Flattens a segment into `[x0, y0, x1, y1, ...]`.
pub fn vectorize(segment: &[[f64; 2]]) -> Vec<f64> {
    segment.iter().flat_map(|p| [p[0], p[1]]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn track(v: f64, w: f64, heading0: f64, start: [f64; 2]) -> PoseSequence {
        let times: Vec<f64> = (0..=125).map(|i| i as f64 * 0.1).collect();
        let poses = times
            .iter()
            .map(|&t| {
                let th = heading0 + w * t;
                let (x, y) = if w.abs() < 1e-12 {
                    (v * t * heading0.cos(), v * t * heading0.sin())
                } else {
                    let r = v / w;
                    (r * (th.sin() - heading0.sin()), -r * (th.cos() - heading0.cos()))
                };
                [start[0] + x, start[1] + y, th]
            })
            .collect();
        PoseSequence::new(times, poses).unwrap()
    }

    #[test]
    fn stationary_vehicle_stays_at_origin() {
        let p = track(0.0, 0.0, 0.4, [3.0, -2.0]);
        for q in ego_future_segment(&p, 2.0, SplineMode::LeastSquares).unwrap() {
            assert!(q[0].abs() < 1e-9 && q[1].abs() < 1e-9);
        }
    }

    #[test]
    fn straight_motion_matches_kinematics() {
        let v = 2.5;
        let p = track(v, 0.0, -1.1, [10.0, 4.0]);
        let seg = ego_future_segment(&p, 2.0, SplineMode::LeastSquares).unwrap();
        assert_eq!(seg.len(), SEGMENT_POINTS);
        for (i, q) in seg.iter().enumerate() {
            assert!((q[0] - 0.5 * v * (i + 1) as f64).abs() < 1e-9);
            assert!(q[1].abs() < 1e-9);
        }
    }

    #[test]
    fn left_turn_has_positive_lateral_offsets() {
        let p = track(2.0, 0.15, 0.3, [0.0, 0.0]);
        let seg = ego_future_segment(&p, 2.0, SplineMode::LeastSquares).unwrap();
        for q in &seg[1..] {
            assert!(q[1] > 0.0);
        }
        // Circular-arc oracle at the 10 s point.
        let r = 2.0 / 0.15;
        let th: f64 = 0.15 * 10.0;
        let last = seg[SEGMENT_POINTS - 1];
        assert!((last[0] - r * th.sin()).abs() < 1e-3);
        assert!((last[1] - r * (1.0 - th.cos())).abs() < 1e-3);
    }

    #[test]
    fn short_sequences_are_rejected() {
        let p = track(1.0, 0.0, 0.0, [0.0, 0.0]);
        assert!(ego_future_segment(&p, 3.0, SplineMode::LeastSquares).is_err());
    }
}
