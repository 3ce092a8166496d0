//! The full network: bridge, answer heads and planner over one parameter store.

use std::path::Path;

use numkit::checkpoint::{self, Metadata};
use numkit::{ParamStore, Tape, Var};
use serde::{Deserialize, Serialize};

use crate::config::Settings;
use crate::error::{Error, Result};
use crate::geometry::Geometry;
use crate::heads::answers::init_heads;
use crate::heads::planner::{init_planner, to_modes};
use crate::heads::{
    decode_structured, field_logits, gru_decode, make_planning_token, render_caption, CaptionText, Field,
    StructuredAnswerSet, TrajectoryModes,
};
use crate::moro::{init_moro, moro_forward, ModelConfig, MoroOutput, QueryContext, RoutingDecision, RoutingMode};
use crate::seed;
use crate::sim::ModalityFeatureSet;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: ModelConfig,
    pub geometry: Geometry,
    pub feature_dim: usize,
    /// Feature-space hash of the data the model was built for.
    pub config_hash: String,
    pub store: ParamStore,
    ctx: QueryContext,
}

/// Every recorded node of one forward pass.
pub struct ForwardPass {
    pub moro: MoroOutput,
    pub logits: Vec<(Field, Var)>,
    pub x_p: Var,
    pub z: Var,
    /// `M x 8` normalized waypoints.
    pub waypoints: Var,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub answers: StructuredAnswerSet,
    pub caption: CaptionText,
    pub modes: TrajectoryModes,
    /// Empty unless the router was consulted.
    pub routing: Vec<RoutingDecision>,
}

impl Prediction {
    /// Fraction of queries routed to `label`; `None` without routing.
    pub fn routing_accuracy(&self, label: crate::vocab::Branch) -> Option<f64> {
        if self.routing.is_empty() {
            return None;
        }
        let hit = self.routing.iter().filter(|d| d.branch == label).count();
        Some(hit as f64 / self.routing.len() as f64)
    }
}

impl Model {
    pub fn init(cfg: ModelConfig, geometry: Geometry, feature_dim: usize, config_hash: String, seed: u64) -> Result<Self> {
        cfg.validate()?;
        geometry.validate()?;
        let mut store = ParamStore::new(seed);
        let mut rng = seed::rng(seed, seed::INIT);
        init_moro(&mut store, &cfg, &geometry, feature_dim, &mut rng)?;
        init_heads(&mut store, &cfg, &mut rng)?;
        init_planner(&mut store, &cfg, &mut rng)?;
        Self::from_parts(cfg, geometry, feature_dim, config_hash, store)
    }

    fn from_parts(cfg: ModelConfig, geometry: Geometry, feature_dim: usize, config_hash: String, store: ParamStore) -> Result<Self> {
        let ctx = QueryContext::new(&store, &cfg, &geometry)?;
        Ok(Self {
            cfg,
            geometry,
            feature_dim,
            config_hash,
            store,
            ctx,
        })
    }

    /// Rebuilds the locality masks from the stored reference points.
    pub fn refresh_context(&mut self) -> Result<()> {
        self.ctx = QueryContext::new(&self.store, &self.cfg, &self.geometry)?;
        Ok(())
    }

    pub fn context(&self) -> &QueryContext {
        &self.ctx
    }

    pub fn forward(&self, tape: &mut Tape, f: &ModalityFeatureSet, mode: RoutingMode) -> Result<ForwardPass> {
        self.forward_with(tape, &self.store, f, mode)
    }

    /// Forward pass against an arbitrary parameter store of the same layout.
    pub fn forward_with(&self, tape: &mut Tape, store: &ParamStore, f: &ModalityFeatureSet, mode: RoutingMode) -> Result<ForwardPass> {
        let moro = moro_forward(tape, store, &self.cfg, &self.ctx, f, self.feature_dim, mode)?;
        let logits = field_logits(tape, store, &moro.tasks)?;
        let (x_p, z) = make_planning_token(tape, store, &self.cfg, &moro.tasks)?;
        let waypoints = gru_decode(tape, store, &self.cfg, z)?;
        Ok(ForwardPass {
            moro,
            logits,
            x_p,
            z,
            waypoints,
        })
    }

    pub fn predict(&self, f: &ModalityFeatureSet, mode: RoutingMode) -> Result<Prediction> {
        let mut tape = Tape::with_trainable(|_| false);
        let pass = self.forward(&mut tape, f, mode)?;
        let answers = decode_structured(&tape, &pass.logits);
        let caption = render_caption(&answers);
        let modes = to_modes(tape.value(pass.waypoints), &self.cfg);
        Ok(Prediction {
            answers,
            caption,
            modes,
            routing: pass.moro.routing,
        })
    }

    pub fn metadata(&self) -> Result<Metadata> {
        let mut m = Metadata::new();
        m.insert("format".into(), "wilddrive-checkpoint".into());
        m.insert("version".into(), CHECKPOINT_VERSION.to_string());
        for (k, v) in self.cfg.entries() {
            m.insert(format!("model.{k}"), v);
        }
        m.insert("geometry".into(), serde_json::to_string(&self.geometry)?);
        m.insert("feature_dim".into(), self.feature_dim.to_string());
        m.insert("config_hash".into(), self.config_hash.clone());
        Ok(m)
    }

    /// Writes the parameters with the model description plus `extra` metadata.
    pub fn save(&self, path: &Path, extra: &Metadata) -> Result<()> {
        let mut m = self.metadata()?;
        for (k, v) in extra {
            m.insert(k.clone(), v.clone());
        }
        checkpoint::save(&self.store, &m, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, Metadata)> {
        let (store, meta) = checkpoint::load(path)?;
        let get = |k: &str| {
            meta.get(k)
                .ok_or_else(|| Error::Data(format!("checkpoint metadata lacks '{k}'")))
        };
        if get("format")? != "wilddrive-checkpoint" {
            return Err(Error::Data(format!("{} is not a model checkpoint", path.display())));
        }
        let version = get("version")?;
        if version != &CHECKPOINT_VERSION.to_string() {
            return Err(Error::Version {
                what: "checkpoint".into(),
                expected: CHECKPOINT_VERSION,
                found: version.clone(),
            });
        }
        let mut cfg = ModelConfig::default();
        for (k, v) in &meta {
            if let Some(key) = k.strip_prefix("model.") {
                cfg.set(key, v)?;
            }
        }
        cfg.validate()?;
        let geometry: Geometry = serde_json::from_str(get("geometry")?)?;
        let feature_dim = get("feature_dim")?
            .parse()
            .map_err(|_| Error::Data("bad feature_dim in checkpoint".into()))?;
        let hash = get("config_hash")?.clone();
        let model = Self::from_parts(cfg, geometry, feature_dim, hash, store)?;
        Ok((model, meta))
    }
}
