//! Resolved run configuration and the command implementations behind the CLI.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use numkit::checkpoint::Metadata;
use serde::Serialize;

use crate::config::{parse_num, read_assignments, split_assignment, Settings};
use crate::error::{Error, Result};
use crate::eval::{
    check_compatible, corruption_sweep, evaluate_into, parse_routing, routing_name, sweep_csv, trajectory_svg, Accumulator,
    MetricReport, PredictionRecord,
};
use crate::hash::sha256_hex;
use crate::heads::HORIZONS;
use crate::labeler::horizon_points;
use crate::model::Model;
use crate::moro::{ModelConfig, RoutingMode};
use crate::sim::dataset::read_manifest;
use crate::sim::{feature_space_hash, read_dataset, write_dataset, DegradationSpec, SimConfig, Simulator};
use crate::trainer::{train, TrainConfig};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const RESOLVED_CONFIG: &str = "config.resolved";
pub const RUN_INFO: &str = "run.json";
pub const CHECKPOINT: &str = "model.ckpt";
pub const TRAIN_LOG: &str = "train_log.jsonl";
pub const TIMING: &str = "timing.json";
pub const REPORT: &str = "report.json";
pub const PREDICTIONS: &str = "predictions.jsonl";
pub const COMBINED: &str = "combined.json";
pub const SWEEP_CSV: &str = "sweep.csv";
pub const TRAJECTORY_SVG: &str = "trajectories.svg";
pub const VOCABULARY: &str = "vocabulary.json";
pub const TRAJECTORIES: &str = "trajectories.jsonl";

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub routing: RoutingMode,
    pub grid: Vec<DegradationSpec>,
    /// Records drawn in the trajectory plot.
    pub plot_records: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            routing: RoutingMode::Routed,
            grid: vec![
                DegradationSpec::CLEAN,
                DegradationSpec::CAMERA_BLACKOUT,
                DegradationSpec::LIDAR_BLACKOUT,
                "camera=noise:0.5,lidar=none".parse().expect("valid spec"),
                "camera=blur:2,lidar=none".parse().expect("valid spec"),
                "camera=none,lidar=sparsify:0.5".parse().expect("valid spec"),
            ],
            plot_records: 16,
        }
    }
}

impl Settings for EvalConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "routing" => self.routing = parse_routing(value)?,
            "grid" => {
                self.grid = value
                    .split(';')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(str::parse)
                    .collect::<Result<Vec<_>>>()?;
            }
            "plot_records" => self.plot_records = parse_num(key, value)?,
            _ => return Err(Error::Config(format!("unknown key 'eval.{key}'"))),
        }
        Ok(())
    }

    fn entries(&self) -> Vec<(String, String)> {
        let grid: Vec<String> = self.grid.iter().map(ToString::to_string).collect();
        vec![
            ("routing".into(), routing_name(self.routing)),
            ("grid".into(), grid.join(";")),
            ("plot_records".into(), self.plot_records.to_string()),
        ]
    }
}

/// Every setting of a run, addressed as `sim.*`, `model.*`, `train.*` and `eval.*`.
#[derive(Clone, Debug, Default)]
pub struct RunConfig {
    pub sim: SimConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    /// Defaults, then the config file (if any), then `overrides` in order.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(f) = file {
            for (k, v) in read_assignments(f)? {
                cfg.set(&k, &v)?;
            }
        }
        for o in overrides {
            let (k, v) = split_assignment(o)?;
            cfg.set(&k, &v)?;
        }
        cfg.sim.validate()?;
        cfg.model.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    /// Text form read back by [`RunConfig::load`].
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }
}

impl Settings for RunConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (group, rest) = key
            .split_once('.')
            .ok_or_else(|| Error::Config(format!("unknown key '{key}'")))?;
        let scoped = |e: Error| match e {
            Error::Config(m) if m.starts_with("unknown key") => Error::Config(format!("unknown key '{key}'")),
            other => other,
        };
        match group {
            "sim" => self.sim.set(rest, value).map_err(scoped),
            "model" => self.model.set(rest, value).map_err(scoped),
            "train" => self.train.set(rest, value).map_err(scoped),
            "eval" => self.eval.set(rest, value).map_err(scoped),
            _ => Err(Error::Config(format!("unknown key '{key}'"))),
        }
    }

    fn entries(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        let groups: [(&str, Vec<(String, String)>); 4] = [
            ("sim", self.sim.entries()),
            ("model", self.model.entries()),
            ("train", self.train.entries()),
            ("eval", self.eval.entries()),
        ];
        for (g, entries) in groups {
            out.extend(entries.into_iter().map(|(k, v)| (format!("{g}.{k}"), v)));
        }
        out
    }
}

/// Provenance written next to every output.
#[derive(Clone, Debug, Serialize)]
pub struct RunInfo {
    pub command: String,
    pub seed: Option<u64>,
    pub tool_version: String,
    /// Input path to checksum.
    pub inputs: BTreeMap<String, String>,
}

fn write_provenance(out: &Path, cfg: &RunConfig, info: &RunInfo) -> Result<()> {
    fs::write(out.join(RESOLVED_CONFIG), cfg.render())?;
    fs::write(out.join(RUN_INFO), serde_json::to_string_pretty(info)? + "\n")?;
    Ok(())
}

fn info(command: &str, seed: Option<u64>, inputs: BTreeMap<String, String>) -> RunInfo {
    RunInfo {
        command: command.into(),
        seed,
        tool_version: TOOL_VERSION.into(),
        inputs,
    }
}

fn file_checksum(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    Ok(sha256_hex(&[&bytes]))
}

fn require_dir(path: &Path, what: &str) -> Result<()> {
    if !path.is_dir() {
        return Err(Error::Data(format!("{what} {} does not exist", path.display())));
    }
    Ok(())
}

/// Generates `count` records with dataset seed `seed` into `out`.
pub fn cmd_gen(cfg: &RunConfig, count: usize, seed: u64, out: &Path) -> Result<String> {
    let sim = Simulator::new(cfg.sim.clone())?;
    let records = sim.generate(count, seed)?;
    let manifest = write_dataset(out, &records, seed, sim.config(), sim.vocabulary())?;
    write_provenance(out, cfg, &info("gen", Some(seed), BTreeMap::new()))?;
    Ok(manifest.checksum)
}

#[derive(Serialize)]
struct TrajectoryLabel {
    id: u64,
    action: crate::vocab::Action,
    horizon_points: [[f64; 2]; HORIZONS],
    segment: Vec<[f64; 2]>,
}

/// Writes the dataset's action vocabulary and per-record trajectory labels,
/// after checking the vocabulary against a fresh fit from the dataset's settings.
pub fn cmd_label(cfg: &RunConfig, data: &Path, out: &Path) -> Result<()> {
    require_dir(data, "dataset")?;
    let ds = read_dataset(data)?;
    let refit = crate::sim::reference_vocabulary(&ds.manifest.sim_config()?)?;
    if refit != ds.manifest.vocabulary {
        return Err(Error::Invariant("dataset vocabulary does not match its settings".into()));
    }
    fs::create_dir_all(out)?;
    fs::write(out.join(VOCABULARY), serde_json::to_string_pretty(&refit)? + "\n")?;
    let mut lines = String::new();
    for r in &ds.records {
        let t = &r.scene.future_trajectory;
        lines.push_str(&serde_json::to_string(&TrajectoryLabel {
            id: r.id,
            action: r.scene.action,
            horizon_points: horizon_points(t),
            segment: t.clone(),
        })?);
        lines.push('\n');
    }
    fs::write(out.join(TRAJECTORIES), lines)?;
    let inputs = BTreeMap::from([(data.display().to_string(), ds.manifest.checksum.clone())]);
    write_provenance(out, cfg, &info("label", None, inputs))
}

/// Runs one training phase. Phase 2 starts from `init`, phase 1 from scratch.
pub fn cmd_train(
    cfg: &RunConfig,
    data: &Path,
    init: Option<&Path>,
    out: &Path,
    mut progress: impl FnMut(&crate::trainer::EpochLog),
) -> Result<()> {
    require_dir(data, "dataset")?;
    let phase = cfg.train.phase;
    let mut inputs = BTreeMap::new();
    let manifest = read_manifest(data)?;
    let data_hash = feature_space_hash(&manifest.sim_config()?, &manifest.vocabulary)?;
    let mut model = match (phase, init) {
        (2, None) => {
            return Err(Error::Dependency(
                "phase 2 needs a phase-1 checkpoint (--init)".into(),
            ))
        }
        (_, Some(p)) => {
            if !p.is_file() {
                return Err(Error::Dependency(format!("checkpoint {} does not exist", p.display())));
            }
            inputs.insert(p.display().to_string(), file_checksum(p)?);
            let (m, meta) = Model::load(p)?;
            if phase == 2 && meta.get("phase").map(String::as_str) != Some("1") {
                return Err(Error::Dependency(format!("{} is not a phase-1 checkpoint", p.display())));
            }
            m
        }
        (_, None) => Model::init(cfg.model.clone(), manifest.sim_config()?.geometry, manifest.feature_dim, data_hash.clone(), cfg.train.seed)?,
    };
    check_compatible(&model, &data_hash)?;
    let ds = read_dataset(data)?;
    inputs.insert(data.display().to_string(), ds.manifest.checksum.clone());
    let start = Instant::now();
    let log = train(&mut model, &ds.records, &cfg.train, &mut progress)?;
    let wall = start.elapsed().as_secs_f64();
    fs::create_dir_all(out)?;
    let meta = Metadata::from([
        ("phase".to_string(), phase.to_string()),
        ("seed".to_string(), cfg.train.seed.to_string()),
    ]);
    model.save(&out.join(CHECKPOINT), &meta)?;
    fs::write(out.join(TRAIN_LOG), log.to_lines()?)?;
    fs::write(
        out.join(TIMING),
        serde_json::to_string_pretty(&serde_json::json!({ "wall_seconds": wall }))? + "\n",
    )?;
    write_provenance(out, cfg, &info("train", Some(cfg.train.seed), inputs))
}

fn load_pair(checkpoint: &Path, data: &Path) -> Result<(Model, crate::sim::Dataset, BTreeMap<String, String>)> {
    if !checkpoint.is_file() {
        return Err(Error::Data(format!("checkpoint {} does not exist", checkpoint.display())));
    }
    require_dir(data, "dataset")?;
    let (model, _) = Model::load(checkpoint)?;
    let ds = read_dataset(data)?;
    check_compatible(&model, &feature_space_hash(&ds.manifest.sim_config()?, &ds.manifest.vocabulary)?)?;
    let inputs = BTreeMap::from([
        (checkpoint.display().to_string(), file_checksum(checkpoint)?),
        (data.display().to_string(), ds.manifest.checksum.clone()),
    ]);
    Ok((model, ds, inputs))
}

/// Evaluates a checkpoint on a dataset as stored.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path, data: &Path, out: &Path) -> Result<MetricReport> {
    let (model, ds, inputs) = load_pair(checkpoint, data)?;
    let mut acc = Accumulator::default();
    let mut dump = String::new();
    evaluate_into(&model, &ds.records, cfg.eval.routing, None, &mut acc, |p| {
        dump.push_str(&serde_json::to_string(&p)?);
        dump.push('\n');
        Ok(())
    })?;
    let report = acc.report("as_stored", cfg.eval.routing, &model.config_hash)?;
    fs::create_dir_all(out)?;
    fs::write(out.join(REPORT), serde_json::to_string_pretty(&report)? + "\n")?;
    fs::write(out.join(PREDICTIONS), dump)?;
    write_provenance(out, cfg, &info("eval", None, inputs))?;
    Ok(report)
}

pub fn cell_file(i: usize) -> String {
    format!("cell_{i:02}.json")
}

/// Re-applies every grid cell to the dataset's clean features.
pub fn cmd_sweep(cfg: &RunConfig, checkpoint: &Path, data: &Path, out: &Path) -> Result<MetricReport> {
    let (model, ds, inputs) = load_pair(checkpoint, data)?;
    let (cells, combined) = corruption_sweep(&model, &ds.records, cfg.eval.routing, &cfg.eval.grid)?;
    fs::create_dir_all(out)?;
    for (i, c) in cells.iter().enumerate() {
        fs::write(out.join(cell_file(i)), serde_json::to_string_pretty(c)? + "\n")?;
    }
    fs::write(out.join(COMBINED), serde_json::to_string_pretty(&combined)? + "\n")?;
    let mut all = cells;
    all.push(combined.clone());
    fs::write(out.join(SWEEP_CSV), sweep_csv(&all))?;
    write_provenance(out, cfg, &info("sweep", None, inputs))?;
    Ok(combined)
}

/// CSV of every report found in `reports` and an SVG of the first predictions.
pub fn cmd_plot(cfg: &RunConfig, reports: Option<&Path>, predictions: Option<&Path>, out: &Path) -> Result<Vec<PathBuf>> {
    if reports.is_none() && predictions.is_none() {
        return Err(Error::Config("plot needs --reports and/or --predictions".into()));
    }
    fs::create_dir_all(out)?;
    let mut written = Vec::new();
    let mut inputs = BTreeMap::new();
    if let Some(dir) = reports {
        require_dir(dir, "report directory")?;
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json") && p.file_name().is_some_and(|n| n != RUN_INFO))
            .collect();
        paths.sort();
        let mut parsed = Vec::new();
        for p in &paths {
            let text = fs::read_to_string(p)?;
            let r: MetricReport = serde_json::from_str(&text)
                .map_err(|e| Error::Data(format!("{} is not a metric report: {e}", p.display())))?;
            inputs.insert(p.display().to_string(), sha256_hex(&[text.as_bytes()]));
            parsed.push(r);
        }
        if parsed.is_empty() {
            return Err(Error::Data(format!("no reports in {}", dir.display())));
        }
        let path = out.join(SWEEP_CSV);
        fs::write(&path, sweep_csv(&parsed))?;
        written.push(path);
    }
    if let Some(file) = predictions {
        let text = fs::read_to_string(file).map_err(|e| Error::Data(format!("cannot read {}: {e}", file.display())))?;
        inputs.insert(file.display().to_string(), sha256_hex(&[text.as_bytes()]));
        let records = text
            .lines()
            .take(cfg.eval.plot_records)
            .map(|l| serde_json::from_str::<PredictionRecord>(l).map_err(|e| Error::Data(format!("bad prediction line: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        let path = out.join(TRAJECTORY_SVG);
        fs::write(&path, trajectory_svg(&records))?;
        written.push(path);
    }
    write_provenance(out, cfg, &info("plot", None, inputs))?;
    Ok(written)
}
