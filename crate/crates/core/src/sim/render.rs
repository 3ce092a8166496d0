//! Frozen feature rendering: every grid cell is a fixed random projection of
//! a small vector of local scene attributes.

use numkit::Tensor;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{direction_bin, Geometry};
use crate::seed;
use crate::sim::config::SimConfig;
use crate::sim::scene::{Obstacle, SceneState};
use crate::vocab::{Availability, Direction, Distance, Illumination, ObstacleCategory, Terrain, Vocab, Weather};

/// Camera attribute layout.
pub mod cam {
    pub const BIAS: usize = 0;
    pub const SKY: usize = 1;
    pub const GROUND: usize = 2;
    pub const WEATHER: usize = 3;
    pub const ILLUMINATION: usize = 8;
    pub const TERRAIN: usize = 12;
    pub const OBSTACLE: usize = 19;
    pub const CATEGORY: usize = 20;
    pub const PATH: usize = 28;
    pub const POSITION: usize = 29;
    pub const COUNT: usize = 35;
}

/// BEV attribute layout.
pub mod bev {
    pub const BIAS: usize = 0;
    pub const ROUGHNESS: usize = 1;
    pub const DIFFICULTY: usize = 2;
    pub const FREE: usize = 6;
    pub const AVAILABILITY: usize = 7;
    pub const OCCUPANCY: usize = 10;
    pub const SIZE: usize = 11;
    pub const HEIGHT: usize = 14;
    pub const DIRECTION: usize = 17;
    pub const DISTANCE: usize = 22;
    pub const CLUTTER: usize = 25;
    pub const POSITION: usize = 26;
    pub const COUNT: usize = 32;
    /// Attributes that only obstacles set.
    pub const OBSTACLE_CHANNELS: std::ops::Range<usize> = OCCUPANCY..HEIGHT + 3;
}

/// Feature maps of one frame. Tokens are stored fused: the `bev_rows x
/// bev_cols` LiDAR block first, then the `cam_rows x cam_cols` camera block,
/// both row-major, each token `dim` wide.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModalityFeatureSet {
    pub dim: usize,
    pub bev_rows: usize,
    pub bev_cols: usize,
    pub cam_rows: usize,
    pub cam_cols: usize,
    pub lidar_present: bool,
    pub camera_present: bool,
    #[serde(skip)]
    pub tokens: Vec<f32>,
}

impl ModalityFeatureSet {
    pub fn zeros(g: &Geometry, dim: usize) -> Self {
        Self {
            dim,
            bev_rows: g.bev_rows,
            bev_cols: g.bev_cols,
            cam_rows: g.cam_rows,
            cam_cols: g.cam_cols,
            lidar_present: true,
            camera_present: true,
            tokens: vec![0.0; g.fused_tokens() * dim],
        }
    }

    pub fn lidar_tokens(&self) -> usize {
        self.bev_rows * self.bev_cols
    }

    pub fn camera_tokens(&self) -> usize {
        self.cam_rows * self.cam_cols
    }

    pub fn fused_tokens(&self) -> usize {
        self.lidar_tokens() + self.camera_tokens()
    }

    pub fn lidar_block(&self) -> &[f32] {
        &self.tokens[..self.lidar_tokens() * self.dim]
    }

    pub fn camera_block(&self) -> &[f32] {
        &self.tokens[self.lidar_tokens() * self.dim..]
    }

    pub fn lidar_block_mut(&mut self) -> &mut [f32] {
        let n = self.lidar_tokens() * self.dim;
        &mut self.tokens[..n]
    }

    pub fn camera_block_mut(&mut self) -> &mut [f32] {
        let n = self.lidar_tokens() * self.dim;
        &mut self.tokens[n..]
    }

    pub fn token(&self, u: usize) -> &[f32] {
        &self.tokens[u * self.dim..(u + 1) * self.dim]
    }

    /// `F'_lc` as a `fused_tokens x dim` tensor.
    pub fn fused_tensor(&self) -> Tensor {
        Tensor::new(
            vec![self.fused_tokens(), self.dim],
            self.tokens.iter().map(|&v| v as f64).collect(),
        )
        .expect("token buffer matches layout")
    }

    pub fn check(&self) -> Result<()> {
        if self.tokens.len() != self.fused_tokens() * self.dim {
            return Err(Error::Data(format!(
                "feature buffer holds {} values, layout needs {}",
                self.tokens.len(),
                self.fused_tokens() * self.dim
            )));
        }
        Ok(())
    }
}

/// The two frozen projection matrices (`attributes x dim`, row-major).
#[derive(Clone, Debug)]
pub struct Projections {
    pub camera: Vec<f64>,
    pub bev: Vec<f64>,
    pub dim: usize,
}

impl Projections {
    pub fn new(dim: usize, projection_seed: u64) -> Self {
        let mut rng = seed::rng(projection_seed, seed::PROJECTION);
        let n = Normal::new(0.0, 0.35).unwrap();
        let camera = (0..cam::COUNT * dim).map(|_| n.sample(&mut rng)).collect();
        let bev = (0..bev::COUNT * dim).map(|_| n.sample(&mut rng)).collect();
        Self { camera, bev, dim }
    }

    fn project(&self, attrs: &[f64], matrix: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (a, &w) in attrs.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let row = &matrix[a * self.dim..(a + 1) * self.dim];
            for (o, p) in out.iter_mut().zip(row) {
                *o += w * p;
            }
        }
    }
}

fn illumination_gain(i: Illumination) -> f64 {
    match i {
        Illumination::BrightLight => 1.0,
        Illumination::Daylight => 0.9,
        Illumination::Twilight => 0.6,
        Illumination::Darkness => 0.3,
    }
}

fn roughness(t: Terrain) -> f64 {
    match t {
        Terrain::Dirt => 0.3,
        Terrain::Gravel => 0.5,
        Terrain::Grass => 0.2,
        Terrain::Mud => 0.6,
        Terrain::Sand => 0.4,
        Terrain::Snow => 0.5,
        Terrain::Rock => 0.9,
    }
}

fn clutter(w: Weather) -> f64 {
    match w {
        Weather::Rainy => 0.3,
        Weather::Snowy => 0.6,
        Weather::Foggy => 0.2,
        _ => 0.0,
    }
}

/// Physical footprint `(width, height)` in meters.
pub fn obstacle_extent(c: ObstacleCategory) -> (f64, f64) {
    match c {
        ObstacleCategory::Vehicle => (2.0, 1.8),
        ObstacleCategory::Pedestrian => (0.6, 1.7),
        ObstacleCategory::Animal => (0.8, 0.9),
        ObstacleCategory::Rock => (1.2, 0.8),
        ObstacleCategory::Tree => (1.0, 4.0),
        ObstacleCategory::Pole => (0.3, 3.0),
        ObstacleCategory::Building => (6.0, 5.0),
        ObstacleCategory::Unknown => (1.0, 1.5),
    }
}

/// LiDAR shape classes `(size, height)`, each in {0, 1, 2}; distinct per category.
pub fn obstacle_shape_class(c: ObstacleCategory) -> (usize, usize) {
    match c {
        ObstacleCategory::Vehicle => (2, 1),
        ObstacleCategory::Pedestrian => (0, 1),
        ObstacleCategory::Animal => (0, 0),
        ObstacleCategory::Rock => (1, 0),
        ObstacleCategory::Tree => (1, 2),
        ObstacleCategory::Pole => (0, 2),
        ObstacleCategory::Building => (2, 2),
        ObstacleCategory::Unknown => (1, 1),
    }
}

fn availability_level(a: Availability) -> usize {
    a.index()
}

fn positional(out: &mut [f64], r: usize, c: usize, rows: usize, cols: usize) {
    let (fr, fc) = ((r as f64 + 0.5) / rows as f64, (c as f64 + 0.5) / cols as f64);
    let tau = std::f64::consts::TAU;
    out[0] = fr;
    out[1] = fc;
    out[2] = (tau * fr).sin();
    out[3] = (tau * fr).cos();
    out[4] = (tau * fc).sin();
    out[5] = (tau * fc).cos();
}

/// Free space extends this far along the free direction.
const FREE_RANGE: f64 = 20.0;
/// Ground beyond this range is washed out by fog.
const FOG_RANGE: f64 = 12.0;

/// Per-cell BEV attributes, row-major.
pub fn bev_attributes(s: &SceneState, g: &Geometry) -> Vec<[f64; bev::COUNT]> {
    let mut out = Vec::with_capacity(g.bev_tokens());
    for r in 0..g.bev_rows {
        for c in 0..g.bev_cols {
            let mut a = [0.0; bev::COUNT];
            let (x, y) = g.bev_center(r, c);
            let range = x.hypot(y);
            let dir = direction_bin(x, y);
            a[bev::BIAS] = 1.0;
            a[bev::ROUGHNESS] = roughness(s.terrain);
            a[bev::DIFFICULTY + s.difficulty.index()] = 1.0;
            if dir == s.free_space_direction && range <= FREE_RANGE {
                a[bev::FREE] = 1.0;
                a[bev::AVAILABILITY + availability_level(s.drivable_availability)] = 1.0;
            }
            a[bev::DIRECTION + dir.index()] = 1.0;
            a[bev::DISTANCE + g.distance_bin(range).index()] = 1.0;
            if range < FOG_RANGE {
                a[bev::CLUTTER] = clutter(s.weather);
            }
            positional(&mut a[bev::POSITION..], r, c, g.bev_rows, g.bev_cols);
            out.push(a);
        }
    }
    for o in &s.obstacles {
        let (r, c) = g.bev_cell_of(o.ego_xy[0], o.ego_xy[1]);
        let a = &mut out[r * g.bev_cols + c];
        let (size, height) = obstacle_shape_class(o.category);
        a[bev::OCCUPANCY] = 1.0;
        a[bev::SIZE + size] = 1.0;
        a[bev::HEIGHT + height] = 1.0;
        // The return carries the obstacle's own bearing and range, not the cell's.
        a[bev::DIRECTION..bev::DIRECTION + Direction::size()].fill(0.0);
        a[bev::DIRECTION + o.direction.index()] = 1.0;
        a[bev::DISTANCE..bev::DISTANCE + Distance::size()].fill(0.0);
        a[bev::DISTANCE + o.distance.index()] = 1.0;
    }
    out
}

/// Camera cells covered by an obstacle's projected bounding box.
fn obstacle_cells(o: &Obstacle, g: &Geometry) -> Vec<(usize, usize)> {
    let (w, h) = obstacle_extent(o.category);
    let [x, y] = o.ego_xy;
    let mut cells = Vec::new();
    let (Some((top, left)), Some((bottom, right))) = (
        g.project_continuous(x, y + w / 2.0, h),
        g.project_continuous(x, y - w / 2.0, 0.0),
    ) else {
        return cells;
    };
    for r in 0..g.cam_rows {
        for c in 0..g.cam_cols {
            let (cr, cc) = (r as f64 + 0.5, c as f64 + 0.5);
            if cr >= top && cr <= bottom && cc >= left && cc <= right {
                cells.push((r, c));
            }
        }
    }
    let center = g.camera_cell_of(x, y, h / 2.0);
    if !center.clamped && !cells.contains(&(center.row, center.col)) {
        cells.push((center.row, center.col));
    }
    cells
}

/// Per-cell camera attributes, row-major.
pub fn camera_attributes(s: &SceneState, g: &Geometry) -> Vec<[f64; cam::COUNT]> {
    let gain = illumination_gain(s.illumination);
    let mut out = Vec::with_capacity(g.cam_tokens());
    for r in 0..g.cam_rows {
        for c in 0..g.cam_cols {
            let mut a = [0.0; cam::COUNT];
            a[cam::BIAS] = 1.0;
            a[cam::ILLUMINATION + s.illumination.index()] = 1.0;
            match g.camera_ground_point(r, c) {
                None => {
                    a[cam::SKY] = gain;
                    a[cam::WEATHER + s.weather.index()] = gain;
                }
                Some((x, y)) => {
                    let range = x.hypot(y);
                    let fog = if s.weather == Weather::Foggy && range > FOG_RANGE { 0.5 } else { 1.0 };
                    a[cam::GROUND] = gain;
                    a[cam::WEATHER + s.weather.index()] = 0.5 * gain;
                    a[cam::TERRAIN + s.terrain.index()] = gain * fog;
                    if direction_bin(x, y) == s.free_space_direction && range <= FREE_RANGE {
                        let level = [1.0, 0.6, 0.2][availability_level(s.drivable_availability)];
                        a[cam::PATH] = level * gain * fog;
                    }
                }
            }
            positional(&mut a[cam::POSITION..], r, c, g.cam_rows, g.cam_cols);
            out.push(a);
        }
    }
    // Far to near so nearer obstacles occlude.
    for o in s.obstacles.iter().rev() {
        for (r, c) in obstacle_cells(o, g) {
            let a = &mut out[r * g.cam_cols + c];
            a[cam::SKY] = 0.0;
            a[cam::GROUND] = 0.0;
            a[cam::PATH] = 0.0;
            for v in &mut a[cam::TERRAIN..cam::TERRAIN + Terrain::size()] {
                *v = 0.0;
            }
            for v in &mut a[cam::CATEGORY..cam::CATEGORY + ObstacleCategory::size()] {
                *v = 0.0;
            }
            a[cam::OBSTACLE] = gain;
            a[cam::CATEGORY + o.category.index()] = gain;
        }
    }
    out
}

/// Renders both feature grids for `s`; the noise stream is seeded by `rng_seed`.
pub fn render_features(
    s: &SceneState,
    cfg: &SimConfig,
    proj: &Projections,
    rng_seed: u64,
) -> Result<ModalityFeatureSet> {
    let g = &cfg.geometry;
    g.validate()?;
    if proj.dim != cfg.feature_dim {
        return Err(Error::Config("projection width differs from feature_dim".into()));
    }
    let dim = cfg.feature_dim;
    let mut f = ModalityFeatureSet::zeros(g, dim);
    let mut rng = seed::rng(rng_seed, seed::RENDER);
    let noise = Normal::new(0.0, cfg.render_noise).unwrap();
    let mut buf = vec![0.0; dim];
    let mut emit = |attrs: &[f64], matrix: &[f64], dst: &mut [f32], rng: &mut rand_chacha::ChaCha8Rng| {
        proj.project(attrs, matrix, &mut buf);
        for (d, v) in dst.iter_mut().zip(&buf) {
            let n = if cfg.render_noise > 0.0 { noise.sample(rng) } else { 0.0 };
            *d = (v + n) as f32;
        }
    };
    let bev_attrs = bev_attributes(s, g);
    for (u, a) in bev_attrs.iter().enumerate() {
        emit(a, &proj.bev, &mut f.tokens[u * dim..(u + 1) * dim], &mut rng);
    }
    let off = g.bev_tokens();
    let cam_attrs = camera_attributes(s, g);
    for (u, a) in cam_attrs.iter().enumerate() {
        let v = off + u;
        emit(a, &proj.camera, &mut f.tokens[v * dim..(v + 1) * dim], &mut rng);
    }
    Ok(f)
}
