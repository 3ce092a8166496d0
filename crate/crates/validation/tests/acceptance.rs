//! End-to-end acceptance checks. Each test prints one PASS or FAIL line.
//!
//! The trained-model checks share models through `OnceLock`, so the whole
//! target takes about 36 minutes on one core.

use std::io::Write;
use std::sync::OnceLock;

use numkit::{cross_entropy, finite_diff_check, GradCheckConfig, ParamStore, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wilddrive::eval::*;
use wilddrive::geometry::Geometry;
use wilddrive::labeler::{bspline_smooth, kmeans, kmeans_restarts, PoseSequence, SplineMode};
use wilddrive::model::Model;
use wilddrive::moro::{build_local_mask, moro_forward, project_reference, ModelConfig, RoutingMode};
use wilddrive::run::{self, RunConfig};
use wilddrive::sim::{DatasetRecord, DegradationSpec, SimConfig, Simulator};
use wilddrive::trainer::{phase1_record_loss, train, TrainConfig};
use wilddrive::vocab::{Branch, Vocab};

/// Phase-1 budget of the shared captioning and planning model.
const CAPTION_RECORDS: usize = 4000;
const CAPTION_EPOCHS: usize = 20;
/// Phase-1 budget of each model in the robustness comparison.
const ROBUST_RECORDS: usize = 4000;
const ROBUST_EPOCHS: usize = 20;
const ROBUST_SEEDS: [u64; 3] = [1, 2, 3];
const ROUTER_EPOCHS: usize = 3;
const TEST_RECORDS: usize = 400;

fn report(name: &str, ok: bool, detail: impl std::fmt::Display) {
    let line = format!("{} {name}: {detail}\n", if ok { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
    assert!(ok, "{name}: {detail}");
}

fn sim() -> &'static Simulator {
    static SIM: OnceLock<Simulator> = OnceLock::new();
    SIM.get_or_init(|| Simulator::new(SimConfig::default()).unwrap())
}

fn test_set() -> &'static Vec<DatasetRecord> {
    static SET: OnceLock<Vec<DatasetRecord>> = OnceLock::new();
    SET.get_or_init(|| sim().generate(TEST_RECORDS, 9001).unwrap())
}

fn fresh_model(cfg: ModelConfig, seed: u64) -> Model {
    let s = sim();
    Model::init(cfg, s.config().geometry.clone(), s.config().feature_dim, s.config_hash().unwrap(), seed).unwrap()
}

fn phase1(model: &mut Model, data: &Vec<DatasetRecord>, epochs: usize, routing: RoutingMode, seed: u64) {
    let cfg = TrainConfig {
        routing,
        epochs,
        seed,
        ..TrainConfig::default()
    };
    train(model, data, &cfg, |_| {}).unwrap();
}

fn phase2(model: &mut Model, data: &Vec<DatasetRecord>, seed: u64) {
    let cfg = TrainConfig {
        phase: 2,
        epochs: ROUTER_EPOCHS,
        seed,
        ..TrainConfig::default()
    };
    train(model, data, &cfg, |_| {}).unwrap();
}

/// Phase-1 model shared by the captioning and planning checks.
fn caption_model() -> &'static (Model, Vec<DatasetRecord>) {
    static M: OnceLock<(Model, Vec<DatasetRecord>)> = OnceLock::new();
    M.get_or_init(|| {
        let data = sim().generate(CAPTION_RECORDS, 11).unwrap();
        let mut m = fresh_model(ModelConfig::default(), 1);
        phase1(&mut m, &data, CAPTION_EPOCHS, RoutingMode::Stacked, 1);
        (m, data)
    })
}

#[test]
fn gradient_fidelity() {
    let s = sim();
    let model = fresh_model(ModelConfig::default(), 3);
    let record = s.record(0, 5, None).unwrap();
    let (tape, _, _, total) = phase1_record_loss(&model, &model.store, &record, RoutingMode::Stacked).unwrap();
    let grads = tape.backward(total).unwrap().into_params();
    let loss = |st: &ParamStore| -> numkit::Result<f64> {
        let (t, _, _, l) = phase1_record_loss(&model, st, &record, RoutingMode::Stacked)
            .map_err(|e| numkit::NumError::External(e.to_string()))?;
        Ok(t.value(l).data()[0])
    };
    let cfg = GradCheckConfig {
        epsilon: 1e-5,
        tolerance: 1e-3,
        coords_per_tensor: 6,
        seed: 7,
        floor: 1e-6,
    };
    let r = finite_diff_check(loss, &model.store, &grads, &cfg).unwrap();
    report(
        "gradient_fidelity",
        r.pass && r.max_rel_error < 1e-3,
        format!("max relative error {:.2e} over {} tensors", r.max_rel_error, model.store.names().count()),
    );
}

#[test]
fn locality_mask_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut bad = None;
    for case in 0..1000 {
        let mut g = Geometry::default();
        g.bev_rows = rng.random_range(2..24);
        g.bev_cols = rng.random_range(2..24);
        g.bev_cell = rng.random_range(0.5..3.0);
        g.bev_origin = [rng.random_range(-4.0..2.0), -(g.bev_cols as f64) * g.bev_cell / 2.0];
        g.cam_rows = rng.random_range(2..16);
        g.cam_cols = rng.random_range(2..28);
        let (xr, yr) = (g.x_range(), g.y_range());
        let r = [
            rng.random_range(xr[0]..xr[1]),
            rng.random_range(yr[0]..yr[1]),
            rng.random_range(g.z_range[0]..g.z_range[1]),
        ];
        let (ll, lc) = (rng.random_range(1..10), rng.random_range(1..10));
        let p = project_reference(r, &g);
        let built = build_local_mask(&p, ll, lc, &g).to_binary();
        let mut direct = Vec::new();
        for u in 0..g.bev_tokens() {
            let (ur, uc) = ((u / g.bev_cols) as f64, (u % g.bev_cols) as f64);
            direct.push((ur - p.bev.0 as f64).abs().max((uc - p.bev.1 as f64).abs()) <= ll as f64 / 2.0);
        }
        for u in 0..g.cam_tokens() {
            let (ur, uc) = ((u / g.cam_cols) as f64, (u % g.cam_cols) as f64);
            direct.push((ur - p.camera.row as f64).abs().max((uc - p.camera.col as f64).abs()) <= lc as f64 / 2.0);
        }
        if built != direct {
            bad = Some(case);
            break;
        }
    }
    report(
        "locality_mask_oracle",
        bad.is_none(),
        bad.map_or("1000 cases match direct evaluation".to_string(), |c| format!("case {c} differs")),
    );
}

fn zero_prefix(store: &mut ParamStore, prefix: &str) {
    let names: Vec<String> = store.names().filter(|n| n.starts_with(prefix)).map(String::from).collect();
    for n in names {
        let shape = store.get(&n).unwrap().shape().to_vec();
        store.set(&n, Tensor::zeros(shape)).unwrap();
    }
}

#[test]
fn hard_routing_isolation() {
    let s = sim();
    let cfg = ModelConfig {
        queries_per_task: 8,
        ..ModelConfig::default()
    };
    let mut m = fresh_model(cfg, 4);
    // A random router head so every branch receives queries.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let shape = m.store.get("router.head.w").unwrap().shape().to_vec();
    m.store.set("router.head.w", Tensor::randn(shape, 3.0, &mut rng)).unwrap();
    m.store.set("router.head.b", Tensor::randn(vec![3], 0.3, &mut rng)).unwrap();
    let corruptions = [DegradationSpec::CLEAN, DegradationSpec::CAMERA_BLACKOUT, DegradationSpec::LIDAR_BLACKOUT];
    let mut worst = 0.0f64;
    let mut checked = 0;
    for i in 0..100u64 {
        let r = s.record(i, 500 + i, Some(corruptions[i as usize % 3])).unwrap();
        let run = |store: &ParamStore| {
            let mut tape = Tape::with_trainable(|_| false);
            let out = moro_forward(&mut tape, store, &m.cfg, m.context(), &r.features, m.feature_dim, RoutingMode::Routed).unwrap();
            (tape, out)
        };
        let (tape, base) = run(&m.store);
        for &b in Branch::ALL {
            let Some(e) = &base.experts[b.index()] else { continue };
            let mut store = m.store.clone();
            for &o in Branch::ALL.iter().filter(|&&o| o != b) {
                zero_prefix(&mut store, &format!("expert.{}.", o.as_str()));
            }
            let (t2, other) = run(&store);
            assert_eq!(other.routing, base.routing);
            worst = worst.max(t2.value(other.experts[b.index()].as_ref().unwrap().rows).max_abs_diff(tape.value(e.rows)));
            for (ta, tb) in base.tasks.iter().zip(&other.tasks) {
                worst = worst.max(t2.value(tb.branches[b.index()]).max_abs_diff(tape.value(ta.branches[b.index()])));
            }
            checked += 1;
        }
    }
    report("hard_routing_isolation", worst <= 1e-12, format!("{checked} expert groups, max change {worst:.1e}"));
}

#[test]
fn query_budget() {
    let m = fresh_model(ModelConfig::default(), 1);
    let q = m.store.get("moro.queries").unwrap();
    let g = m.store.get("moro.group_embed").unwrap();
    let per_task = m.cfg.queries_per_task;
    let ok = q.rows() == 320 && per_task == 64 && g.rows() == 5 && wilddrive::vocab::Task::size() == 5;
    report("query_budget", ok, format!("{} queries, {per_task} per task, {} tasks", q.rows(), g.rows()));
}

#[test]
fn router_learnability() {
    let s = sim();
    let data = s.generate(2000, 31).unwrap();
    let held_out = s.generate(TEST_RECORDS, 32).unwrap();
    let (base, _) = caption_model();
    let mut m = base.clone();
    let untrained = routing_accuracy(&m, &held_out, 77).unwrap();
    phase2(&mut m, &data, 5);
    let trained = routing_accuracy(&m, &held_out, 77).unwrap();
    report(
        "router_learnability",
        trained >= 0.95 && (untrained - 1.0 / 3.0).abs() <= 0.05,
        format!("held-out routing accuracy {trained:.3}, untrained {untrained:.3}"),
    );
}

#[test]
fn robustness_under_camera_blackout() {
    let s = sim();
    let blackout = DegradationSpec::CAMERA_BLACKOUT;
    let mut lines = Vec::new();
    let mut ok = true;
    for seed in ROBUST_SEEDS {
        let data = s.generate(ROBUST_RECORDS, 100 + seed).unwrap();
        let mut routed = fresh_model(ModelConfig::default(), seed);
        phase1(&mut routed, &data, ROBUST_EPOCHS, RoutingMode::Stacked, seed);
        phase2(&mut routed, &data, seed);
        let mut fusion = fresh_model(ModelConfig::default(), seed);
        phase1(&mut fusion, &data, ROBUST_EPOCHS, RoutingMode::Fixed(Branch::Fusion), seed);
        let r = evaluate(&routed, test_set(), RoutingMode::Routed, Some(&blackout)).unwrap();
        let f = evaluate(&fusion, test_set(), RoutingMode::Fixed(Branch::Fusion), Some(&blackout)).unwrap();
        ok &= r.macro_accuracy > f.macro_accuracy;
        lines.push(format!("seed {seed} routed {:.3} fusion {:.3}", r.macro_accuracy, f.macro_accuracy));
    }
    report("robustness_under_camera_blackout", ok, lines.join(", "));
}

#[test]
fn caption_learnability() {
    let (m, _) = caption_model();
    let r = evaluate(m, test_set(), RoutingMode::Stacked, None).unwrap();
    let worst = r.field_accuracy.iter().min_by(|a, b| a.1.total_cmp(b.1)).unwrap();
    report(
        "caption_learnability",
        *worst.1 >= 0.90 && r.bleu_4 >= 0.80,
        format!("lowest field {} {:.3}, BLEU-4 {:.3}", worst.0, worst.1, r.bleu_4),
    );
}

#[test]
fn planner_learnability() {
    let (m, _) = caption_model();
    let untrained = fresh_model(ModelConfig::default(), 2);
    let mut records = Vec::new();
    let mut acc = Accumulator::default();
    evaluate_into(m, test_set(), RoutingMode::Stacked, None, &mut acc, |p| {
        records.push(p);
        Ok(())
    })
    .unwrap();
    let trained = acc.report("clean", RoutingMode::Stacked, &m.config_hash).unwrap().min_ade;
    let base = evaluate(&untrained, test_set(), RoutingMode::Stacked, None).unwrap().min_ade;
    for p in &records {
        for mode in &p.modes.modes {
            assert!(p.min_ade <= ade(mode, &p.ground_truth), "record {}", p.id);
        }
    }
    report(
        "planner_learnability",
        trained <= 0.5 * base,
        format!("minADE {trained:.3} m against untrained {base:.3} m"),
    );
}

#[test]
fn metric_oracles() {
    let toks = |s: &str| s.split_whitespace().map(String::from).collect::<Vec<_>>();
    let (c, r) = (vec![toks("a b c d")], vec![toks("a b c x")]);
    let b1 = bleu_n(&c, &r, 1).unwrap();
    let b2 = bleu_n(&c, &r, 2).unwrap();
    let ce = cross_entropy(&[1.0 / 3.0; 3], &[0.0, 1.0, 0.0]).unwrap();
    let ok = (b1 - 0.75).abs() < 1e-9
        && (b2 - 0.5f64.sqrt()).abs() < 1e-9
        && fde([3.0, 4.0], [0.0, 0.0], true) == 25.0
        && fde([3.0, 4.0], [0.0, 0.0], false) == 5.0
        && (ce - 3f64.ln()).abs() < 1e-9;
    report("metric_oracles", ok, format!("bleu_1 {b1:.9} bleu_2 {b2:.9} ce {ce:.9}"));
}

#[test]
fn kmeans_reaches_the_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut failure = None;
    for trial in 0..100 {
        let data: Vec<Vec<f64>> = (0..8).map(|_| vec![rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)]).collect();
        let mut best = f64::INFINITY;
        for mask in 1u32..(1 << 8) - 1 {
            let mut cost = 0.0;
            for side in [true, false] {
                let pts: Vec<&Vec<f64>> = (0..8).filter(|i| (mask >> i & 1 == 1) == side).map(|i| &data[i]).collect();
                let n = pts.len() as f64;
                let (mx, my) = (pts.iter().map(|p| p[0]).sum::<f64>() / n, pts.iter().map(|p| p[1]).sum::<f64>() / n);
                cost += pts.iter().map(|p| (p[0] - mx).powi(2) + (p[1] - my).powi(2)).sum::<f64>();
            }
            best = best.min(cost);
        }
        let monotone = (0..5).all(|_| kmeans(&data, 2, &mut rng).unwrap().objective.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        let run = kmeans_restarts(&data, 2, SimConfig::default().vocab_restarts, &mut rng).unwrap();
        if !monotone || (run.final_objective() - best).abs() > 1e-9 * best.max(1.0) {
            failure = Some(format!("trial {trial}: objective {} against {best}", run.final_objective()));
            break;
        }
    }
    report(
        "kmeans_reaches_the_optimum",
        failure.is_none(),
        failure.unwrap_or_else(|| "100 trials monotone and optimal".into()),
    );
}

fn rigid(q: [f64; 2], theta: f64, shift: [f64; 2]) -> [f64; 2] {
    let (sn, cs) = theta.sin_cos();
    [cs * q[0] - sn * q[1] + shift[0], sn * q[0] + cs * q[1] + shift[1]]
}

#[test]
fn bspline_reproduction_and_equivariance() {
    let times: Vec<f64> = (0..30).map(|i| i as f64 * 0.5).collect();
    let line = PoseSequence::new(times.clone(), times.iter().map(|&t| [1.0 + 2.0 * t, -3.0 + 0.5 * t, 0.0]).collect()).unwrap();
    let samples: Vec<f64> = (0..=290).map(|i| i as f64 * 0.05).collect();
    let mut worst_line = 0.0f64;
    for mode in [SplineMode::LeastSquares, SplineMode::Exact] {
        for (t, q) in samples.iter().zip(bspline_smooth(&line, &samples, mode).unwrap()) {
            worst_line = worst_line.max((q[0] - (1.0 + 2.0 * t)).abs()).max((q[1] - (-3.0 + 0.5 * t)).abs());
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let mut worst_eq = 0.0f64;
    for case in 0..100 {
        let n = rng.random_range(4..40);
        let times: Vec<f64> = (0..n).map(|i| i as f64 * 0.3).collect();
        let pts: Vec<[f64; 2]> = (0..n).map(|_| [rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)]).collect();
        let (theta, shift) = (rng.random_range(-3.1..3.1), [rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0)]);
        let mode = if case % 2 == 0 { SplineMode::LeastSquares } else { SplineMode::Exact };
        let a = PoseSequence::new(times.clone(), pts.iter().map(|q| [q[0], q[1], 0.0]).collect()).unwrap();
        let b = PoseSequence::new(
            times.clone(),
            pts.iter().map(|&q| {
                let r = rigid(q, theta, shift);
                [r[0], r[1], theta]
            })
            .collect(),
        )
        .unwrap();
        let ts: Vec<f64> = (0..50).map(|i| times[n - 1] * i as f64 / 49.0).collect();
        let sa = bspline_smooth(&a, &ts, mode).unwrap();
        let sb = bspline_smooth(&b, &ts, mode).unwrap();
        for (qa, qb) in sa.iter().zip(&sb) {
            let want = rigid([qa[0], qa[1]], theta, shift);
            worst_eq = worst_eq.max((want[0] - qb[0]).abs()).max((want[1] - qb[1]).abs());
        }
    }
    report(
        "bspline_reproduction_and_equivariance",
        worst_line <= 1e-9 && worst_eq <= 1e-9,
        format!("collinear error {worst_line:.1e}, rigid-motion error {worst_eq:.1e} over 100 cases"),
    );
}

#[test]
fn pipeline_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let overrides: Vec<String> = ["model.queries_per_task=8", "train.epochs=2", "train.batch_size=8"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let cfg = RunConfig::load(None, &overrides).unwrap();
    let mut files = Vec::new();
    for run_id in ["a", "b"] {
        let d = dir.path().join(run_id);
        let (data, test) = (d.join("data"), d.join("test"));
        run::cmd_gen(&cfg, 32, 3, &data).unwrap();
        run::cmd_gen(&cfg, 8, 4, &test).unwrap();
        let mut c1 = cfg.clone();
        c1.train.phase = 1;
        run::cmd_train(&c1, &data, None, &d.join("p1"), |_| {}).unwrap();
        let mut c2 = cfg.clone();
        c2.train.phase = 2;
        run::cmd_train(&c2, &data, Some(&d.join("p1").join(run::CHECKPOINT)), &d.join("p2"), |_| {}).unwrap();
        run::cmd_eval(&cfg, &d.join("p2").join(run::CHECKPOINT), &test, &d.join("eval")).unwrap();
        let mut set = Vec::new();
        for f in [
            "data/manifest.json".to_string(),
            format!("data/{}", wilddrive::sim::dataset::RECORDS),
            format!("data/{}", wilddrive::sim::dataset::FEATURES),
            format!("p1/{}", run::CHECKPOINT),
            format!("p1/{}", run::TRAIN_LOG),
            format!("p2/{}", run::CHECKPOINT),
            format!("p2/{}", run::TRAIN_LOG),
            format!("eval/{}", run::REPORT),
            format!("eval/{}", run::PREDICTIONS),
        ] {
            set.push((f.clone(), std::fs::read(d.join(&f)).unwrap()));
        }
        files.push(set);
    }
    let differing: Vec<&String> = files[0].iter().zip(&files[1]).filter(|(a, b)| a.1 != b.1).map(|(a, _)| &a.0).collect();
    report(
        "pipeline_is_bit_identical",
        differing.is_empty(),
        if differing.is_empty() { format!("{} artifacts identical across reruns", files[0].len()) } else { format!("{differing:?} differ") },
    );
}
