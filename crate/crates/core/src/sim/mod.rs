//! Synthetic off-road world: scene sampling, feature rendering, sensor
//! corruption and dataset files.

pub mod config;
pub mod dataset;
pub mod degrade;
pub mod render;
pub mod scene;

use serde::{Deserialize, Serialize};

pub use config::{Marginal, SimConfig};
pub use dataset::{read_dataset, write_dataset, Dataset, Manifest};
pub use degrade::{apply_degradation, sample_degradation, CameraDegradation, DegradationSpec, LidarDegradation};
pub use render::{bev_attributes, camera_attributes, render_features, ModalityFeatureSet, Projections};
pub use scene::{Obstacle, SceneState};

use crate::error::{Error, Result};
use crate::labeler::{kmeans_actions, label_action, vectorize, ActionVocabulary};
use crate::seed;
use crate::vocab::Branch;

/// One generated example.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: u64,
    /// Seed every random stream of this record derives from.
    pub seed: u64,
    pub scene: SceneState,
    pub degradation: DegradationSpec,
    pub routing_label: Branch,
    pub features: ModalityFeatureSet,
}

/// Fits the action vocabulary on a reference sample that depends only on
/// the simulator configuration, so every dataset of one configuration shares it.
pub fn reference_vocabulary(cfg: &SimConfig) -> Result<ActionVocabulary> {
    let trajectories: Vec<Vec<f64>> = (0..cfg.vocab_samples as u64)
        .map(|i| {
            let mut rng = seed::rng(seed::derive(cfg.vocab_seed, i), seed::VOCAB);
            let (scene, _) = scene::sample_unlabeled(cfg, &mut rng);
            vectorize(&scene.future_trajectory)
        })
        .collect();
    let mut rng = seed::rng(cfg.vocab_seed, seed::VOCAB);
    kmeans_actions(&trajectories, cfg.vocab_clusters, cfg.vocab_restarts, cfg.action_rule, &mut rng)
}

/// A configured simulator with its frozen projections and action vocabulary.
#[derive(Clone, Debug)]
pub struct Simulator {
    cfg: SimConfig,
    proj: Projections,
    vocab: ActionVocabulary,
}

impl Simulator {
    pub fn new(cfg: SimConfig) -> Result<Self> {
        cfg.validate()?;
        let vocab = reference_vocabulary(&cfg)?;
        Self::with_vocabulary(cfg, vocab)
    }

    pub fn with_vocabulary(cfg: SimConfig, vocab: ActionVocabulary) -> Result<Self> {
        cfg.validate()?;
        if vocab.is_empty() {
            return Err(Error::Config("empty action vocabulary".into()));
        }
        let proj = Projections::new(cfg.feature_dim, cfg.projection_seed);
        Ok(Self { cfg, proj, vocab })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn vocabulary(&self) -> &ActionVocabulary {
        &self.vocab
    }

    pub fn projections(&self) -> &Projections {
        &self.proj
    }

    pub fn sample_scene(&self, rng_seed: u64) -> SceneState {
        let mut rng = seed::rng(rng_seed, seed::SCENE);
        let (mut scene, _) = scene::sample_unlabeled(&self.cfg, &mut rng);
        scene.action = label_action(&vectorize(&scene.future_trajectory), &self.vocab);
        scene
    }

    pub fn render(&self, scene: &SceneState, rng_seed: u64) -> Result<ModalityFeatureSet> {
        render_features(scene, &self.cfg, &self.proj, rng_seed)
    }

    /// Record `id` of the dataset seeded by `dataset_seed`. The corruption is
    /// `degradation` when given, otherwise drawn from the configured rate.
    pub fn record(&self, id: u64, dataset_seed: u64, degradation: Option<DegradationSpec>) -> Result<DatasetRecord> {
        let rs = seed::derive(dataset_seed, id);
        let scene = self.sample_scene(rs);
        let clean = self.render(&scene, rs)?;
        let degradation = degradation.unwrap_or_else(|| {
            let mut rng = seed::rng(rs, seed::CORRUPT_CHOICE);
            sample_degradation(&scene, self.cfg.corruption_rate, &mut rng)
        });
        let routing_label = degradation
            .routing_label()
            .ok_or_else(|| Error::Config(format!("corruption {degradation} removes every sensor")))?;
        let features = apply_degradation(&clean, &degradation, rs);
        Ok(DatasetRecord {
            id,
            seed: rs,
            scene,
            degradation,
            routing_label,
            features,
        })
    }

    /// Clean features of a record, re-rendered from its seed.
    pub fn clean_features(&self, r: &DatasetRecord) -> Result<ModalityFeatureSet> {
        self.render(&r.scene, r.seed)
    }

    pub fn generate(&self, count: usize, dataset_seed: u64) -> Result<Vec<DatasetRecord>> {
        (0..count as u64).map(|i| self.record(i, dataset_seed, None)).collect()
    }
}

/// Random access to records, materialized or rendered on demand.
pub trait RecordSource {
    fn len(&self) -> usize;
    fn get(&self, i: usize) -> Result<DatasetRecord>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl RecordSource for [DatasetRecord] {
    fn len(&self) -> usize {
        <[DatasetRecord]>::len(self)
    }

    fn get(&self, i: usize) -> Result<DatasetRecord> {
        <[DatasetRecord]>::get(self, i)
            .cloned()
            .ok_or_else(|| Error::Data(format!("record index {i} out of range")))
    }
}

impl RecordSource for Vec<DatasetRecord> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn get(&self, i: usize) -> Result<DatasetRecord> {
        RecordSource::get(self.as_slice(), i)
    }
}

/// Records rendered on demand, so large sets need no feature storage.
pub struct SyntheticSet<'a> {
    pub sim: &'a Simulator,
    pub seed: u64,
    pub count: usize,
    pub degradation: Option<DegradationSpec>,
}

impl RecordSource for SyntheticSet<'_> {
    fn len(&self) -> usize {
        self.count
    }

    fn get(&self, i: usize) -> Result<DatasetRecord> {
        if i >= self.count {
            return Err(Error::Data(format!("record index {i} out of range")));
        }
        self.sim.record(i as u64, self.seed, self.degradation)
    }
}

/// Identifies the feature space a model is tied to: geometry, feature width,
/// projection matrices and the action vocabulary.
pub fn feature_space_hash(cfg: &SimConfig, vocab: &ActionVocabulary) -> Result<String> {
    let geometry = serde_json::to_vec(&cfg.geometry)?;
    let vocab = serde_json::to_vec(vocab)?;
    Ok(crate::hash::sha256_hex(&[
        &geometry,
        &(cfg.feature_dim as u64).to_le_bytes(),
        &cfg.projection_seed.to_le_bytes(),
        &vocab,
    ]))
}

impl Simulator {
    pub fn config_hash(&self) -> Result<String> {
        feature_space_hash(&self.cfg, &self.vocab)
    }
}
