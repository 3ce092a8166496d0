//! Reference-point projection and the locality mask over fused tokens.

use crate::geometry::{CameraCell, Geometry};

/// Grid coordinates of a reference point on both feature planes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PlaneProjection {
    /// `(row, col)` on the BEV grid.
    pub bev: (usize, usize),
    pub camera: CameraCell,
}

pub fn project_reference(r: [f64; 3], g: &Geometry) -> PlaneProjection {
    PlaneProjection {
        bev: g.bev_cell_of(r[0], r[1]),
        camera: g.camera_cell_of(r[0], r[1], r[2]),
    }
}

/// Allowed tokens of one query, split by block. `lidar` indexes `F'_l`,
/// `camera` indexes `F'_c`; both are sorted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LocalityMask {
    pub lidar: Vec<usize>,
    pub camera: Vec<usize>,
    pub bev_tokens: usize,
    pub cam_tokens: usize,
}

impl LocalityMask {
    /// Allowed indices into the fused sequence `F'_lc`.
    pub fn fused(&self) -> Vec<usize> {
        self.lidar
            .iter()
            .copied()
            .chain(self.camera.iter().map(|c| c + self.bev_tokens))
            .collect()
    }

    /// `M_i` as a binary vector over the fused sequence.
    pub fn to_binary(&self) -> Vec<bool> {
        let mut m = vec![false; self.bev_tokens + self.cam_tokens];
        for u in self.fused() {
            m[u] = true;
        }
        m
    }

    pub fn count(&self) -> usize {
        self.lidar.len() + self.camera.len()
    }
}

/// Integer offsets `d` with `|d| <= l / 2`, clipped to `[0, n)` around `center`.
fn window(center: usize, l: usize, n: usize) -> std::ops::RangeInclusive<usize> {
    let half = l / 2;
    center.saturating_sub(half)..=(center + half).min(n - 1)
}

/// Square windows of side `l_l` on the BEV grid and `l_c` on the camera grid.
pub fn build_local_mask(p: &PlaneProjection, l_l: usize, l_c: usize, g: &Geometry) -> LocalityMask {
    let mut lidar = Vec::new();
    for r in window(p.bev.0, l_l, g.bev_rows) {
        for c in window(p.bev.1, l_l, g.bev_cols) {
            lidar.push(r * g.bev_cols + c);
        }
    }
    let mut camera = Vec::new();
    for r in window(p.camera.row, l_c, g.cam_rows) {
        for c in window(p.camera.col, l_c, g.cam_cols) {
            camera.push(r * g.cam_cols + c);
        }
    }
    LocalityMask {
        lidar,
        camera,
        bev_tokens: g.bev_tokens(),
        cam_tokens: g.cam_tokens(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_window_has_one_token_per_block() {
        let g = Geometry::default();
        let p = project_reference([10.0, 3.0, 0.5], &g);
        let m = build_local_mask(&p, 1, 1, &g);
        assert_eq!(m.count(), 2);
        assert_eq!(m.lidar, vec![p.bev.0 * 16 + p.bev.1]);
    }

    #[test]
    fn saturated_window_is_all_ones() {
        let g = Geometry::default();
        let p = project_reference([1.0, -15.0, 2.0], &g);
        let m = build_local_mask(&p, 32, 40, &g);
        assert!(m.to_binary().iter().all(|&b| b));
    }

    #[test]
    fn even_windows_cover_half_width_each_side() {
        let g = Geometry::default();
        let p = project_reference([15.0, 1.0, 0.0], &g);
        let m = build_local_mask(&p, 2, 2, &g);
        assert_eq!(m.lidar.len(), 9);
    }
}
