use serde::{Deserialize, Serialize};

use crate::config::{parse_num, Settings};
use crate::error::{Error, Result};

/// Sizes of the routing bridge and the decoding heads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub queries_per_task: usize,
    pub query_dim: usize,
    pub attn_dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    /// Pooled tokens per (task, branch).
    pub compress_tokens: usize,
    pub window_lidar: usize,
    pub window_camera: usize,
    pub out_dim: usize,
    pub router_dim: usize,
    pub latent_dim: usize,
    pub gru_hidden: usize,
    pub waypoint_embed: usize,
    pub modes: usize,
    /// Meters per normalized trajectory unit.
    pub traj_scale: f64,
    pub query_init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            queries_per_task: 64,
            query_dim: 32,
            attn_dim: 16,
            heads: 1,
            ffn_dim: 64,
            compress_tokens: 4,
            window_lidar: 5,
            window_camera: 5,
            out_dim: 64,
            router_dim: 16,
            latent_dim: 32,
            gru_hidden: 32,
            waypoint_embed: 16,
            modes: 3,
            traj_scale: 10.0,
            query_init_std: 0.5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("queries_per_task", self.queries_per_task),
            ("query_dim", self.query_dim),
            ("attn_dim", self.attn_dim),
            ("heads", self.heads),
            ("ffn_dim", self.ffn_dim),
            ("compress_tokens", self.compress_tokens),
            ("window_lidar", self.window_lidar),
            ("window_camera", self.window_camera),
            ("out_dim", self.out_dim),
            ("router_dim", self.router_dim),
            ("latent_dim", self.latent_dim),
            ("gru_hidden", self.gru_hidden),
            ("waypoint_embed", self.waypoint_embed),
            ("modes", self.modes),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("model.{k} must be positive")));
            }
        }
        if self.attn_dim % self.heads != 0 || self.query_dim % self.heads != 0 || self.router_dim % self.heads != 0 {
            return Err(Error::Config("model.heads must divide attention and value widths".into()));
        }
        if !(self.traj_scale > 0.0) {
            return Err(Error::Config("model.traj_scale must be positive".into()));
        }
        Ok(())
    }
}

impl Settings for ModelConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "queries_per_task" => self.queries_per_task = parse_num(key, value)?,
            "query_dim" => self.query_dim = parse_num(key, value)?,
            "attn_dim" => self.attn_dim = parse_num(key, value)?,
            "heads" => self.heads = parse_num(key, value)?,
            "ffn_dim" => self.ffn_dim = parse_num(key, value)?,
            "compress_tokens" => self.compress_tokens = parse_num(key, value)?,
            "window_lidar" => self.window_lidar = parse_num(key, value)?,
            "window_camera" => self.window_camera = parse_num(key, value)?,
            "out_dim" => self.out_dim = parse_num(key, value)?,
            "router_dim" => self.router_dim = parse_num(key, value)?,
            "latent_dim" => self.latent_dim = parse_num(key, value)?,
            "gru_hidden" => self.gru_hidden = parse_num(key, value)?,
            "waypoint_embed" => self.waypoint_embed = parse_num(key, value)?,
            "modes" => self.modes = parse_num(key, value)?,
            "traj_scale" => self.traj_scale = parse_num(key, value)?,
            "query_init_std" => self.query_init_std = parse_num(key, value)?,
            _ => return Err(Error::Config(format!("unknown key 'model.{key}'"))),
        }
        Ok(())
    }

    fn entries(&self) -> Vec<(String, String)> {
        [
            ("queries_per_task", self.queries_per_task.to_string()),
            ("query_dim", self.query_dim.to_string()),
            ("attn_dim", self.attn_dim.to_string()),
            ("heads", self.heads.to_string()),
            ("ffn_dim", self.ffn_dim.to_string()),
            ("compress_tokens", self.compress_tokens.to_string()),
            ("window_lidar", self.window_lidar.to_string()),
            ("window_camera", self.window_camera.to_string()),
            ("out_dim", self.out_dim.to_string()),
            ("router_dim", self.router_dim.to_string()),
            ("latent_dim", self.latent_dim.to_string()),
            ("gru_hidden", self.gru_hidden.to_string()),
            ("waypoint_embed", self.waypoint_embed.to_string()),
            ("modes", self.modes.to_string()),
            ("traj_scale", self.traj_scale.to_string()),
            ("query_init_std", self.query_init_std.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}
