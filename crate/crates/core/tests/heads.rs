use std::collections::HashSet;

use numkit::{ParamStore, Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wilddrive::eval::bleu_n;
use wilddrive::geometry::Geometry;
use wilddrive::heads::*;
use wilddrive::model::Model;
use wilddrive::moro::{moro_forward, ModelConfig, RoutingMode, TaskTokens};
use wilddrive::sim::{SimConfig, Simulator};
use wilddrive::vocab::*;

fn base() -> StructuredAnswerSet {
    StructuredAnswerSet {
        weather: Weather::Rainy,
        illumination: Illumination::Twilight,
        terrain: Terrain::Mud,
        difficulty: Difficulty::Hard,
        drivable_availability: Availability::PartiallyBlocked,
        free_space_direction: Direction::FrontLeft,
        action: Action::TurnLeft,
        obstacles: [
            Some(ObstacleAnswer {
                category: ObstacleCategory::Rock,
                direction: Direction::Front,
                distance: Distance::Near,
            }),
            None,
            Some(ObstacleAnswer {
                category: ObstacleCategory::Tree,
                direction: Direction::Right,
                distance: Distance::Far,
            }),
        ],
    }
}

fn set_field<V: Vocab>(a: &StructuredAnswerSet, f: impl Fn(&mut StructuredAnswerSet, V)) -> Vec<StructuredAnswerSet> {
    V::ALL
        .iter()
        .map(|&v| {
            let mut b = a.clone();
            f(&mut b, v);
            b
        })
        .collect()
}

/// Every answer set that differs from `a` in exactly one field or slot attribute.
fn single_flips(a: &StructuredAnswerSet) -> Vec<StructuredAnswerSet> {
    let mut out = Vec::new();
    out.extend(set_field(a, |b, v| b.weather = v));
    out.extend(set_field(a, |b, v| b.illumination = v));
    out.extend(set_field(a, |b, v| b.terrain = v));
    out.extend(set_field(a, |b, v| b.difficulty = v));
    out.extend(set_field(a, |b, v| b.drivable_availability = v));
    out.extend(set_field(a, |b, v| b.free_space_direction = v));
    out.extend(set_field(a, |b, v| b.action = v));
    for j in 0..OBSTACLE_SLOTS {
        let mut toggled = a.clone();
        toggled.obstacles[j] = match a.obstacles[j] {
            Some(_) => None,
            None => Some(ObstacleAnswer {
                category: ObstacleCategory::Unknown,
                direction: Direction::Left,
                distance: Distance::Mid,
            }),
        };
        out.push(toggled);
        if a.obstacles[j].is_some() {
            out.extend(set_field(a, |b, v| b.obstacles[j].as_mut().unwrap().category = v));
            out.extend(set_field(a, |b, v| b.obstacles[j].as_mut().unwrap().direction = v));
            out.extend(set_field(a, |b, v| b.obstacles[j].as_mut().unwrap().distance = v));
        }
    }
    out
}

#[test]
fn captions_are_injective_under_every_single_field_flip() {
    let mut starts = vec![base()];
    let mut empty = base();
    empty.obstacles = [None; OBSTACLE_SLOTS];
    starts.push(empty);
    let mut full = base();
    full.obstacles[1] = Some(ObstacleAnswer {
        category: ObstacleCategory::Vehicle,
        direction: Direction::FrontRight,
        distance: Distance::Mid,
    });
    starts.push(full);
    for a in &starts {
        let mut seen: HashSet<Vec<String>> = HashSet::new();
        let mut distinct: Vec<StructuredAnswerSet> = Vec::new();
        for b in single_flips(a) {
            if !distinct.contains(&b) {
                distinct.push(b.clone());
                assert!(seen.insert(render_caption(&b).tokens()), "collision for {b:?}");
            }
        }
    }
}

#[test]
fn rendering_is_pure() {
    assert_eq!(render_caption(&base()).tokens(), render_caption(&base()).tokens());
}

#[test]
fn self_match_scores_one() {
    let c = vec![render_caption(&base()).tokens()];
    assert_eq!(bleu_n(&c, &c, 1).unwrap(), 1.0);
    assert_eq!(bleu_n(&c, &c, 4).unwrap(), 1.0);
}

#[test]
fn weather_change_touches_one_token() {
    let a = render_caption(&base()).tokens();
    let mut other = base();
    other.weather = Weather::Foggy;
    let b = render_caption(&other).tokens();
    assert_eq!(a.len(), b.len());
    assert_eq!(a.iter().zip(&b).filter(|(x, y)| x != y).count(), 1);
}

#[test]
fn absent_slots_are_omitted() {
    let text = render_caption(&base()).text();
    assert!(text.contains("obstacle 1: rock at front near."));
    assert!(!text.contains("obstacle 2"));
    assert!(text.contains("obstacle 3: tree at right far."));
    let mut empty = base();
    empty.obstacles = [None; OBSTACLE_SLOTS];
    assert!(render_caption(&empty).text().contains("no obstacles detected."));
}

fn model(cfg: ModelConfig, seed: u64) -> Model {
    Model::init(cfg, Geometry::default(), 64, "test".into(), seed).unwrap()
}

fn small() -> ModelConfig {
    ModelConfig {
        queries_per_task: 4,
        ..ModelConfig::default()
    }
}

fn features(seed: u64) -> wilddrive::sim::ModalityFeatureSet {
    let s = Simulator::new(SimConfig {
        vocab_samples: 200,
        vocab_restarts: 2,
        ..SimConfig::default()
    })
    .unwrap();
    s.record(0, seed, None).unwrap().features
}

fn zero_matching(store: &mut ParamStore, pred: impl Fn(&str) -> bool) {
    let names: Vec<String> = store.names().filter(|n| pred(n)).map(String::from).collect();
    for n in names {
        let shape = store.get(&n).unwrap().shape().to_vec();
        store.set(&n, Tensor::zeros(shape)).unwrap();
    }
}

#[test]
fn uniform_logits_decode_to_first_entries() {
    let mut m = model(small(), 1);
    zero_matching(&mut m.store, |n| n.starts_with("head."));
    let p = m.predict(&features(1), RoutingMode::Stacked).unwrap();
    assert_eq!(p.answers.weather, Weather::ALL[0]);
    assert_eq!(p.answers.illumination, Illumination::ALL[0]);
    assert_eq!(p.answers.terrain, Terrain::ALL[0]);
    assert_eq!(p.answers.difficulty, Difficulty::ALL[0]);
    assert_eq!(p.answers.drivable_availability, Availability::ALL[0]);
    assert_eq!(p.answers.free_space_direction, Direction::ALL[0]);
    assert_eq!(p.answers.action, Action::ALL[0]);
    // Class 0 of a presence head means absent.
    assert_eq!(p.answers.obstacle_count(), 0);
}

fn zero_tasks(tape: &mut Tape, cfg: &ModelConfig) -> Vec<TaskTokens> {
    Task::ALL
        .iter()
        .map(|&task| {
            let z = || Tensor::zeros(vec![cfg.compress_tokens, cfg.query_dim]);
            let branches = [tape.constant(z()), tape.constant(z()), tape.constant(z())];
            let fused = tape.constant(Tensor::zeros(vec![3 * cfg.compress_tokens, cfg.query_dim]));
            TaskTokens { task, branches, fused }
        })
        .collect()
}

#[test]
fn zero_tokens_give_zero_planning_token_and_bias_latent() {
    let mut m = model(small(), 2);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (lat, cq) = (m.cfg.latent_dim, m.cfg.query_dim);
    let b1 = Tensor::randn(vec![lat], 1.0, &mut rng);
    let b2 = Tensor::randn(vec![lat], 1.0, &mut rng);
    m.store.set("plan.mlp1.b", b1.clone()).unwrap();
    m.store.set("plan.mlp2.b", b2.clone()).unwrap();
    let mut tape = Tape::new();
    let tasks = zero_tasks(&mut tape, &m.cfg);
    let (x_p, z) = make_planning_token(&mut tape, &m.store, &m.cfg, &tasks).unwrap();
    assert!(tape.value(x_p).data().iter().all(|&v| v == 0.0));
    assert_eq!(tape.value(x_p).shape(), &[1, cq]);
    let w2 = m.store.get("plan.mlp2.w").unwrap();
    for c in 0..lat {
        let want = b2.data()[c] + (0..lat).map(|r| b1.data()[r].max(0.0) * w2.row_slice(r)[c]).sum::<f64>();
        assert!((tape.value(z).data()[c] - want).abs() < 1e-12);
    }
}

#[test]
fn planning_token_ignores_token_order_within_a_task() {
    let m = model(small(), 3);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rows = 3 * m.cfg.compress_tokens;
    let mats: Vec<Tensor> = (0..5).map(|_| Tensor::randn(vec![rows, m.cfg.query_dim], 1.0, &mut rng)).collect();
    let run = |perm_task: Option<usize>| {
        let mut tape = Tape::new();
        let tasks: Vec<TaskTokens> = Task::ALL
            .iter()
            .enumerate()
            .map(|(t, &task)| {
                let mut mat = mats[t].clone();
                if perm_task == Some(t) {
                    let order: Vec<usize> = (0..rows).rev().collect();
                    mat = mat.gather_rows(&order);
                }
                let fused = tape.constant(mat);
                TaskTokens { task, branches: [fused; 3], fused }
            })
            .collect();
        let (x_p, _) = make_planning_token(&mut tape, &m.store, &m.cfg, &tasks).unwrap();
        tape.value(x_p).clone()
    };
    let base = run(None);
    for t in 0..5 {
        assert!(run(Some(t)).max_abs_diff(&base) < 1e-12);
    }
}

#[test]
fn zero_decoder_weights_emit_the_output_bias() {
    let mut m = model(small(), 4);
    zero_matching(&mut m.store, |n| n.starts_with("plan.") && !n.ends_with(".b") && n != "plan.token" && !n.starts_with("plan.att") && !n.starts_with("plan.mlp"));
    let bias = Tensor::new(vec![2], vec![0.25, -0.75]).unwrap();
    m.store.set("plan.out.b", bias).unwrap();
    let p = m.predict(&features(4), RoutingMode::Stacked).unwrap();
    for mode in &p.modes.modes {
        for w in mode {
            assert_eq!(*w, [0.25 * m.cfg.traj_scale, -0.75 * m.cfg.traj_scale]);
        }
    }
}

#[test]
fn distinct_mode_maps_give_distinct_modes() {
    let cfg = ModelConfig { modes: 2, ..small() };
    let m = model(cfg, 5);
    let p = m.predict(&features(5), RoutingMode::Stacked).unwrap();
    assert_eq!(p.modes.modes.len(), 2);
    assert_ne!(p.modes.modes[0], p.modes.modes[1]);
    for mode in &p.modes.modes {
        assert_eq!(mode.len(), HORIZONS);
        assert!(mode.iter().all(|w| w[0].is_finite() && w[1].is_finite()));
    }
}

fn grads_of(m: &Model, which: &str) -> numkit::Gradients {
    let f = features(6);
    let mut tape = Tape::with_trainable(|n| !n.starts_with("router."));
    let pass = m.forward(&mut tape, &f, RoutingMode::Stacked).unwrap();
    let loss = match which {
        "z" => {
            let s = tape.sum_all(pass.z);
            s
        }
        "text" => text_loss(&mut tape, &pass.logits, &base()).unwrap().unwrap(),
        _ => {
            let target = [[1.0, 0.2], [2.0, 0.5], [5.0, 1.5], [9.0, 3.0]];
            waypoint_loss(&mut tape, pass.waypoints, &normalized_target(&target, &m.cfg)).unwrap()
        }
    };
    tape.backward(loss).unwrap().into_params()
}

#[test]
fn latent_depends_on_every_expert_parameter() {
    let m = model(small(), 6);
    let g = grads_of(&m, "z");
    let mut checked = 0;
    for (name, _) in m.store.iter().filter(|(n, _)| n.starts_with("expert.")) {
        let t = g.get(name).unwrap_or_else(|| panic!("no gradient for {name}"));
        // Key biases cancel inside the softmax; everything else must move z.
        if name.ends_with(".bk") {
            continue;
        }
        assert!(t.data().iter().any(|&v| v.abs() > 1e-12), "{name}");
        checked += 1;
    }
    assert!(checked >= 3 * 4, "{checked}");
}

#[test]
fn both_losses_reach_the_bridge() {
    let m = model(small(), 6);
    for which in ["text", "waypoint"] {
        let g = grads_of(&m, which);
        for prefix in ["moro.queries", "moro.group_embed", "expert.lc.att.wv", "pool.lc.wv", "moro.out1.w"] {
            let t = g.get(prefix).unwrap();
            assert!(t.data().iter().any(|&v| v.abs() > 1e-12), "{which} -> {prefix}");
        }
    }
}

#[test]
fn winner_take_all_loss_is_the_best_mode() {
    let m = model(small(), 7);
    let mut tape = Tape::new();
    let pass = m.forward(&mut tape, &features(7), RoutingMode::Stacked).unwrap();
    let target = normalized_target(&[[1.0, 0.0], [2.0, 0.0], [5.0, 0.5], [10.0, 1.0]], &m.cfg);
    let l = waypoint_loss(&mut tape, pass.waypoints, &target).unwrap();
    let wp = tape.value(pass.waypoints);
    let per_mode: Vec<f64> = (0..wp.rows())
        .map(|r| wp.row_slice(r).iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / target.len() as f64)
        .collect();
    let best = per_mode.iter().copied().fold(f64::INFINITY, f64::min);
    assert!((tape.value(l).data()[0] - best).abs() < 1e-12);
    assert!(per_mode.iter().all(|&v| tape.value(l).data()[0] <= v));
}

#[test]
fn moro_tokens_feed_the_heads_in_task_order() {
    let m = model(small(), 8);
    let mut tape = Tape::new();
    let f = features(8);
    let out = moro_forward(&mut tape, &m.store, &m.cfg, m.context(), &f, 64, RoutingMode::Stacked).unwrap();
    let logits = field_logits(&mut tape, &m.store, &out.tasks).unwrap();
    assert_eq!(logits.len(), Field::all().len());
    for (f, v) in &logits {
        assert_eq!(tape.value(*v).shape(), &[1, f.classes()]);
    }
}
