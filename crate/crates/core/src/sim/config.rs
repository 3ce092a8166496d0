//! Simulator settings.

use serde::{Deserialize, Serialize};

use crate::config::{parse_num, Settings};
use crate::error::{Error, Result};
use crate::geometry::Geometry;
use crate::labeler::{ActionRule, SplineMode};
use crate::vocab::{Availability, Difficulty, Direction, Illumination, Terrain, Vocab, Weather};

/// Relative sampling weights over one vocabulary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Marginal(pub Vec<f64>);

impl Marginal {
    pub fn uniform<V: Vocab>() -> Self {
        Marginal(vec![1.0; V::size()])
    }

    pub fn pinned<V: Vocab>(v: V) -> Self {
        let mut w = vec![0.0; V::size()];
        w[v.index()] = 1.0;
        Marginal(w)
    }

    /// Accepts either a vocabulary value (pins it) or a comma-separated weight list.
    pub fn parse<V: Vocab>(s: &str) -> Result<Self> {
        if let Some(v) = V::parse(s.trim()) {
            return Ok(Self::pinned(v));
        }
        let w: Vec<f64> = s
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Config(format!("expected a vocabulary value or weights, got '{s}'")))?;
        let m = Marginal(w);
        m.validate(V::size())?;
        Ok(m)
    }

    pub fn validate(&self, size: usize) -> Result<()> {
        if self.0.len() != size {
            return Err(Error::Config(format!(
                "expected {size} weights, got {}",
                self.0.len()
            )));
        }
        if self.0.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || self.0.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config("weights must be non-negative with a positive sum".into()));
        }
        Ok(())
    }

    pub fn render(&self) -> String {
        self.0.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(",")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub geometry: Geometry,
    pub feature_dim: usize,
    /// Seed of the frozen random feature projections.
    pub projection_seed: u64,
    pub render_noise: f64,
    pub weather: Marginal,
    pub illumination: Marginal,
    pub terrain: Marginal,
    /// Multiplies the terrain-conditional difficulty table.
    pub difficulty: Marginal,
    pub availability: Marginal,
    pub free_space: Marginal,
    /// Probability that each distance band holds an obstacle.
    pub obstacle_rate: f64,
    pub pose_noise: f64,
    pub heading_noise: f64,
    pub spline: SplineMode,
    pub vocab_clusters: usize,
    pub vocab_samples: usize,
    pub vocab_restarts: usize,
    pub vocab_seed: u64,
    pub action_rule: ActionRule,
    /// Probability that a generated record carries a sensor corruption.
    pub corruption_rate: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            geometry: Geometry::default(),
            feature_dim: 64,
            projection_seed: 17,
            render_noise: 0.05,
            weather: Marginal::uniform::<Weather>(),
            illumination: Marginal::uniform::<Illumination>(),
            terrain: Marginal::uniform::<Terrain>(),
            difficulty: Marginal::uniform::<Difficulty>(),
            availability: Marginal(vec![0.5, 0.3, 0.2]),
            free_space: Marginal(vec![0.4, 0.15, 0.15, 0.15, 0.15]),
            obstacle_rate: 0.45,
            pose_noise: 0.03,
            heading_noise: 0.003,
            spline: SplineMode::LeastSquares,
            vocab_clusters: 8,
            vocab_samples: 1500,
            vocab_restarts: 20,
            vocab_seed: 5,
            action_rule: ActionRule::default(),
            corruption_rate: 0.0,
        }
    }
}

fn unit(key: &str, v: f64) -> Result<f64> {
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(Error::Config(format!("{key} must lie in [0, 1], got {v}")))
    }
}

fn nonneg(key: &str, v: f64) -> Result<f64> {
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Config(format!("{key} must be non-negative, got {v}")))
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        if self.feature_dim == 0 {
            return Err(Error::Config("feature_dim must be positive".into()));
        }
        self.weather.validate(Weather::size())?;
        self.illumination.validate(Illumination::size())?;
        self.terrain.validate(Terrain::size())?;
        self.difficulty.validate(Difficulty::size())?;
        self.availability.validate(Availability::size())?;
        self.free_space.validate(Direction::size())?;
        if self.vocab_clusters == 0 || self.vocab_samples < self.vocab_clusters {
            return Err(Error::Config("vocab_samples must be at least vocab_clusters".into()));
        }
        Ok(())
    }
}

impl Settings for SimConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let g = &mut self.geometry;
        match key {
            "weather" => self.weather = Marginal::parse::<Weather>(value)?,
            "illumination" => self.illumination = Marginal::parse::<Illumination>(value)?,
            "terrain" => self.terrain = Marginal::parse::<Terrain>(value)?,
            "difficulty" => self.difficulty = Marginal::parse::<Difficulty>(value)?,
            "availability" => self.availability = Marginal::parse::<Availability>(value)?,
            "free_space" => self.free_space = Marginal::parse::<Direction>(value)?,
            "feature_dim" => self.feature_dim = parse_num(key, value)?,
            "projection_seed" => self.projection_seed = parse_num(key, value)?,
            "render_noise" => self.render_noise = nonneg(key, parse_num(key, value)?)?,
            "obstacle_rate" => self.obstacle_rate = unit(key, parse_num(key, value)?)?,
            "pose_noise" => self.pose_noise = nonneg(key, parse_num(key, value)?)?,
            "heading_noise" => self.heading_noise = nonneg(key, parse_num(key, value)?)?,
            "spline" => {
                self.spline = match value {
                    "least_squares" => SplineMode::LeastSquares,
                    "exact" => SplineMode::Exact,
                    _ => return Err(Error::Config(format!("unknown spline mode '{value}'"))),
                }
            }
            "vocab_clusters" => self.vocab_clusters = parse_num(key, value)?,
            "vocab_samples" => self.vocab_samples = parse_num(key, value)?,
            "vocab_restarts" => self.vocab_restarts = parse_num(key, value)?,
            "vocab_seed" => self.vocab_seed = parse_num(key, value)?,
            "stop_length" => self.action_rule.stop_length = nonneg(key, parse_num(key, value)?)?,
            "lateral_threshold" => self.action_rule.lateral = nonneg(key, parse_num(key, value)?)?,
            "corruption_rate" => self.corruption_rate = unit(key, parse_num(key, value)?)?,
            "geometry.bev_rows" => g.bev_rows = parse_num(key, value)?,
            "geometry.bev_cols" => g.bev_cols = parse_num(key, value)?,
            "geometry.bev_cell" => g.bev_cell = parse_num(key, value)?,
            "geometry.cam_rows" => g.cam_rows = parse_num(key, value)?,
            "geometry.cam_cols" => g.cam_cols = parse_num(key, value)?,
            "geometry.focal" => g.focal = parse_num(key, value)?,
            "geometry.cam_height" => g.cam_height = parse_num(key, value)?,
            "geometry.near_edge" => g.near_edge = parse_num(key, value)?,
            "geometry.far_edge" => g.far_edge = parse_num(key, value)?,
            _ => return Err(Error::Config(format!("unknown key 'sim.{key}'"))),
        }
        let g = &mut self.geometry;
        g.bev_origin = [0.0, -(g.bev_cols as f64) * g.bev_cell / 2.0];
        Ok(())
    }

    fn entries(&self) -> Vec<(String, String)> {
        let g = &self.geometry;
        let spline = match self.spline {
            SplineMode::LeastSquares => "least_squares",
            SplineMode::Exact => "exact",
        };
        [
            ("weather", self.weather.render()),
            ("illumination", self.illumination.render()),
            ("terrain", self.terrain.render()),
            ("difficulty", self.difficulty.render()),
            ("availability", self.availability.render()),
            ("free_space", self.free_space.render()),
            ("feature_dim", self.feature_dim.to_string()),
            ("projection_seed", self.projection_seed.to_string()),
            ("render_noise", self.render_noise.to_string()),
            ("obstacle_rate", self.obstacle_rate.to_string()),
            ("pose_noise", self.pose_noise.to_string()),
            ("heading_noise", self.heading_noise.to_string()),
            ("spline", spline.to_string()),
            ("vocab_clusters", self.vocab_clusters.to_string()),
            ("vocab_samples", self.vocab_samples.to_string()),
            ("vocab_restarts", self.vocab_restarts.to_string()),
            ("vocab_seed", self.vocab_seed.to_string()),
            ("stop_length", self.action_rule.stop_length.to_string()),
            ("lateral_threshold", self.action_rule.lateral.to_string()),
            ("corruption_rate", self.corruption_rate.to_string()),
            ("geometry.bev_rows", g.bev_rows.to_string()),
            ("geometry.bev_cols", g.bev_cols.to_string()),
            ("geometry.bev_cell", g.bev_cell.to_string()),
            ("geometry.cam_rows", g.cam_rows.to_string()),
            ("geometry.cam_cols", g.cam_cols.to_string()),
            ("geometry.focal", g.focal.to_string()),
            ("geometry.cam_height", g.cam_height.to_string()),
            ("geometry.near_edge", g.near_edge.to_string()),
            ("geometry.far_edge", g.far_edge.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}
