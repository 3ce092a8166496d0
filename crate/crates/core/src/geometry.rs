//! Sensor layout: the BEV grid, the camera grid and its pinhole model, and the
//! direction / distance binning used by the labels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::{Direction, Distance};

/// Grid sizes and sensor placement shared by the simulator and the model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub bev_rows: usize,
    pub bev_cols: usize,
    /// Edge length of one BEV cell in meters.
    pub bev_cell: f64,
    /// Ego-frame (x, y) of the corner of BEV cell (0, 0).
    pub bev_origin: [f64; 2],
    pub cam_rows: usize,
    pub cam_cols: usize,
    /// Focal length in camera-grid cells.
    pub focal: f64,
    /// Height of the camera above the ground plane in meters.
    pub cam_height: f64,
    /// Height range of the scene volume in meters.
    pub z_range: [f64; 2],
    pub near_edge: f64,
    pub far_edge: f64,
}

impl Default for Geometry {
    fn default() -> Self {
        Self {
            bev_rows: 16,
            bev_cols: 16,
            bev_cell: 2.0,
            bev_origin: [0.0, -16.0],
            cam_rows: 12,
            cam_cols: 20,
            // ±60° horizontal field of view over 20 columns.
            focal: 10.0 / 3f64.sqrt(),
            cam_height: 1.6,
            z_range: [0.0, 3.0],
            near_edge: 8.0,
            far_edge: 20.0,
        }
    }
}

/// A camera-plane projection, with a flag when the point had to be clamped.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CameraCell {
    pub row: usize,
    pub col: usize,
    pub clamped: bool,
}

impl Geometry {
    pub fn validate(&self) -> Result<()> {
        if self.bev_rows == 0 || self.bev_cols == 0 || self.cam_rows == 0 || self.cam_cols == 0 {
            return Err(Error::Config("geometry extents must be positive".into()));
        }
        if !(self.bev_cell > 0.0 && self.focal > 0.0 && self.cam_height > 0.0) {
            return Err(Error::Config("geometry scales must be positive".into()));
        }
        if !(self.near_edge > 0.0 && self.far_edge > self.near_edge) {
            return Err(Error::Config("distance bin edges must increase".into()));
        }
        Ok(())
    }

    pub fn bev_tokens(&self) -> usize {
        self.bev_rows * self.bev_cols
    }

    pub fn cam_tokens(&self) -> usize {
        self.cam_rows * self.cam_cols
    }

    pub fn fused_tokens(&self) -> usize {
        self.bev_tokens() + self.cam_tokens()
    }

    pub fn x_range(&self) -> [f64; 2] {
        let x0 = self.bev_origin[0];
        [x0, x0 + self.bev_rows as f64 * self.bev_cell]
    }

    pub fn y_range(&self) -> [f64; 2] {
        let y0 = self.bev_origin[1];
        [y0, y0 + self.bev_cols as f64 * self.bev_cell]
    }

    /// Orthographic binning of ego-frame `(x, y)` into `(row, col)`, clipped to the grid.
    pub fn bev_cell_of(&self, x: f64, y: f64) -> (usize, usize) {
        let r = ((x - self.bev_origin[0]) / self.bev_cell).floor();
        let c = ((y - self.bev_origin[1]) / self.bev_cell).floor();
        (
            r.clamp(0.0, (self.bev_rows - 1) as f64) as usize,
            c.clamp(0.0, (self.bev_cols - 1) as f64) as usize,
        )
    }

    pub fn in_bev(&self, x: f64, y: f64) -> bool {
        let [x0, x1] = self.x_range();
        let [y0, y1] = self.y_range();
        x >= x0 && x < x1 && y >= y0 && y < y1
    }

    /// Ego-frame center of a BEV cell.
    pub fn bev_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.bev_origin[0] + (row as f64 + 0.5) * self.bev_cell,
            self.bev_origin[1] + (col as f64 + 0.5) * self.bev_cell,
        )
    }

    fn principal(&self) -> (f64, f64) {
        (self.cam_rows as f64 / 2.0, self.cam_cols as f64 / 2.0)
    }

    /// Continuous pinhole projection `(row, col)` of an ego-frame point.
    ///
    /// The camera sits at `(0, 0, cam_height)` looking along +x with y to the
    /// left. Returns `None` for points at or behind the image plane.
    pub fn project_continuous(&self, x: f64, y: f64, z: f64) -> Option<(f64, f64)> {
        if x <= 1e-6 {
            return None;
        }
        let (cr, cc) = self.principal();
        Some((cr + self.focal * (self.cam_height - z) / x, cc - self.focal * y / x))
    }

    /// Projects into the camera grid, clamping off-image and behind-camera
    /// points to the nearest valid cell.
    pub fn camera_cell_of(&self, x: f64, y: f64, z: f64) -> CameraCell {
        let (rows, cols) = (self.cam_rows as f64, self.cam_cols as f64);
        let (fr, fc, behind) = match self.project_continuous(x, y, z) {
            Some((r, c)) => (r, c, false),
            None => {
                let (cr, cc) = self.principal();
                let c = if y > 0.0 {
                    0.0
                } else if y < 0.0 {
                    cols - 1.0
                } else {
                    cc
                };
                (cr, c, true)
            }
        };
        let inside = fr >= 0.0 && fr < rows && fc >= 0.0 && fc < cols;
        CameraCell {
            row: fr.floor().clamp(0.0, rows - 1.0) as usize,
            col: fc.floor().clamp(0.0, cols - 1.0) as usize,
            clamped: behind || !inside,
        }
    }

    /// Ground-plane point seen through the center of a camera cell, if the
    /// ray hits the ground.
    pub fn camera_ground_point(&self, row: usize, col: usize) -> Option<(f64, f64)> {
        let (cr, cc) = self.principal();
        let v = row as f64 + 0.5 - cr;
        if v <= 1e-9 {
            return None;
        }
        let x = self.focal * self.cam_height / v;
        let y = -(col as f64 + 0.5 - cc) * x / self.focal;
        Some((x, y))
    }

    pub fn distance_bin(&self, range: f64) -> Distance {
        if range < self.near_edge {
            Distance::Near
        } else if range <= self.far_edge {
            Distance::Mid
        } else {
            Distance::Far
        }
    }
}

/// Bearing bin of an ego-frame point: front within ±22.5°, the diagonals up to
/// ±67.5°, and the sides beyond.
pub fn direction_bin(x: f64, y: f64) -> Direction {
    let deg = y.atan2(x).to_degrees();
    if deg.abs() <= 22.5 {
        Direction::Front
    } else if deg > 0.0 && deg <= 67.5 {
        Direction::FrontLeft
    } else if deg < 0.0 && deg >= -67.5 {
        Direction::FrontRight
    } else if deg > 0.0 {
        Direction::Left
    } else {
        Direction::Right
    }
}

/// Central bearing of a direction bin, in radians.
pub fn direction_angle(d: Direction) -> f64 {
    match d {
        Direction::Front => 0.0,
        Direction::FrontLeft => 45f64.to_radians(),
        Direction::FrontRight => -45f64.to_radians(),
        Direction::Left => 90f64.to_radians(),
        Direction::Right => -90f64.to_radians(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bev_binning_matches_cell_arithmetic() {
        let g = Geometry::default();
        assert_eq!(g.bev_cell_of(1.0, 1.0), (0, 8));
        assert_eq!(g.bev_cell_of(0.2, 1.9), g.bev_cell_of(1.0, 1.0));
        assert_eq!(g.bev_cell_of(31.9, -15.9), (15, 0));
        assert_eq!(g.bev_center(0, 8), (1.0, 1.0));
    }

    #[test]
    fn optical_axis_hits_image_center() {
        let g = Geometry::default();
        for x in [2.0, 10.0, 30.0] {
            let c = g.camera_cell_of(x, 0.0, g.cam_height);
            assert_eq!((c.row, c.col, c.clamped), (6, 10, false));
        }
    }

    #[test]
    fn behind_camera_is_clamped_and_flagged() {
        let g = Geometry::default();
        let c = g.camera_cell_of(-3.0, 2.0, 0.0);
        assert!(c.clamped);
        assert_eq!(c.col, 0);
        let c = g.camera_cell_of(1.0, -20.0, 0.0);
        assert!(c.clamped);
        assert_eq!(c.col, g.cam_cols - 1);
    }

    #[test]
    fn ground_ray_inverts_projection() {
        let g = Geometry::default();
        let (x, y) = g.camera_ground_point(9, 3).unwrap();
        let c = g.camera_cell_of(x, y, 0.0);
        assert_eq!((c.row, c.col), (9, 3));
        assert!(g.camera_ground_point(2, 3).is_none());
    }

    #[test]
    fn bins() {
        let g = Geometry::default();
        assert_eq!(direction_bin(10.0, 0.0), Direction::Front);
        assert_eq!(direction_bin(5.0, 5.0), Direction::FrontLeft);
        assert_eq!(direction_bin(5.0, -5.0), Direction::FrontRight);
        assert_eq!(direction_bin(1.0, 8.0), Direction::Left);
        assert_eq!(direction_bin(1.0, -8.0), Direction::Right);
        assert_eq!(g.distance_bin(2.0), Distance::Near);
        assert_eq!(g.distance_bin(8.0), Distance::Mid);
        assert_eq!(g.distance_bin(25.0), Distance::Far);
        assert!(Geometry { cam_rows: 0, ..Geometry::default() }.validate().is_err());
    }
}
