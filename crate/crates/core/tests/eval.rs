use proptest::prelude::*;
use wilddrive::eval::*;
use wilddrive::geometry::Geometry;
use wilddrive::heads::{ObstacleAnswer, StructuredAnswerSet, TrajectoryModes, HORIZONS};
use wilddrive::model::Model;
use wilddrive::moro::{ModelConfig, RoutingMode};
use wilddrive::sim::{DegradationSpec, SimConfig, Simulator};
use wilddrive::vocab::*;

fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-12
}

#[test]
fn bleu_hand_computed_cases() {
    let c = vec![toks("the cat sat on the mat")];
    let r = vec![toks("the cat is on the mat")];
    // Unigrams 5/6, bigrams 3/5, trigrams 1/4, no matching 4-gram.
    assert!(close(bleu_n(&c, &r, 1).unwrap(), 5.0 / 6.0));
    assert!(close(bleu_n(&c, &r, 2).unwrap(), (5.0f64 / 6.0 * 3.0 / 5.0).sqrt()));
    assert!(close(bleu_n(&c, &r, 3).unwrap(), (5.0f64 / 6.0 * 3.0 / 5.0 * 0.25).cbrt()));
    assert_eq!(bleu_n(&c, &r, 4).unwrap(), 0.0);
}

#[test]
fn bleu_clips_repeated_tokens() {
    let c = vec![toks("the the the")];
    let r = vec![toks("the cat sat")];
    assert!(close(bleu_n(&c, &r, 1).unwrap(), 1.0 / 3.0));
}

#[test]
fn bleu_brevity_penalty() {
    let c = vec![toks("a b")];
    let r = vec![toks("a b c d")];
    assert!(close(bleu_n(&c, &r, 2).unwrap(), (1.0f64 - 2.0).exp()));
    // Longer candidates are not penalised for length.
    let c = vec![toks("a b c d e")];
    let r = vec![toks("a b c d")];
    assert!(close(bleu_n(&c, &r, 1).unwrap(), 0.8));
}

#[test]
fn bleu_pools_counts_over_the_corpus() {
    let c = vec![toks("a b"), toks("c d e f")];
    let r = vec![toks("a x"), toks("c d e f")];
    // 5 of 6 unigrams, 3 of 4 bigrams.
    assert!(close(bleu_n(&c, &r, 2).unwrap(), (5.0f64 / 6.0 * 3.0 / 4.0).sqrt()));
}

#[test]
fn bleu_rejects_bad_input() {
    assert!(bleu_n(&[], &[], 4).is_err());
    assert!(bleu_n(&[toks("a")], &[], 4).is_err());
    assert!(bleu_n(&[toks("a")], &[toks("a")], 0).is_err());
}

/// Modified precision by brute-force enumeration of n-gram positions.
fn naive_bleu(c: &[Vec<String>], r: &[Vec<String>], n: usize) -> f64 {
    let mut logs = 0.0;
    for k in 1..=n {
        let (mut hit, mut tot) = (0usize, 0usize);
        for (cand, refr) in c.iter().zip(r) {
            if cand.len() < k {
                continue;
            }
            let cg: Vec<&[String]> = cand.windows(k).collect();
            let rg: Vec<&[String]> = if refr.len() >= k { refr.windows(k).collect() } else { vec![] };
            tot += cg.len();
            let mut taken = vec![false; rg.len()];
            for g in &cg {
                if let Some(i) = (0..rg.len()).find(|&i| !taken[i] && rg[i] == *g) {
                    taken[i] = true;
                    hit += 1;
                }
            }
        }
        if hit == 0 || tot == 0 {
            return 0.0;
        }
        logs += (hit as f64 / tot as f64).ln() / n as f64;
    }
    let lc: usize = c.iter().map(Vec::len).sum();
    let lr: usize = r.iter().map(Vec::len).sum();
    let bp = if lc < lr { (1.0 - lr as f64 / lc as f64).exp() } else { 1.0 };
    bp * logs.exp()
}

fn sentence() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d"]), 1..9)
        .prop_map(|v| v.into_iter().map(String::from).collect())
}

proptest! {
    #[test]
    fn bleu_matches_naive_counting(pairs in prop::collection::vec((sentence(), sentence()), 1..5), n in 1usize..5) {
        let (c, r): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let got = bleu_n(&c, &r, n).unwrap();
        prop_assert!((got - naive_bleu(&c, &r, n)).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&got));
    }

    #[test]
    fn bleu_ignores_pair_order(pairs in prop::collection::vec((sentence(), sentence()), 2..5)) {
        let (c, r): (Vec<_>, Vec<_>) = pairs.iter().cloned().unzip();
        let (mut c2, mut r2) = (c.clone(), r.clone());
        c2.reverse();
        r2.reverse();
        prop_assert!((bleu_n(&c, &r, 2).unwrap() - bleu_n(&c2, &r2, 2).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn self_bleu_is_one(c in prop::collection::vec(prop::collection::vec(prop::sample::select(vec!["a", "b", "c"]), 4..9), 1..4)) {
        let c: Vec<Vec<String>> = c.into_iter().map(|v| v.into_iter().map(String::from).collect()).collect();
        prop_assert!((bleu_n(&c, &c, 4).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn squared_fde_is_the_square(p in prop::array::uniform2(-50.0f64..50.0), g in prop::array::uniform2(-50.0f64..50.0)) {
        let d = fde(p, g, false);
        prop_assert!((fde(p, g, true) - d * d).abs() < 1e-9 * (1.0 + d * d));
        prop_assert!(d >= 0.0);
        prop_assert_eq!(fde(p, g, false), fde(g, p, false));
    }

    #[test]
    fn min_ade_is_the_smallest_mode(raw in prop::collection::vec(prop::collection::vec(-20.0f64..20.0, 8), 1..5),
                                    gt in prop::collection::vec(-20.0f64..20.0, 8)) {
        let to_pts = |v: &[f64]| -> [[f64; 2]; HORIZONS] { std::array::from_fn(|h| [v[2 * h], v[2 * h + 1]]) };
        let modes = TrajectoryModes { modes: raw.iter().map(|v| to_pts(v)).collect() };
        let gt = to_pts(&gt);
        let (best, idx) = min_ade(&modes, &gt).unwrap();
        for m in &modes.modes {
            prop_assert!(best <= ade(m, &gt));
        }
        prop_assert_eq!(best, ade(&modes.modes[idx], &gt));
    }
}

#[test]
fn ade_averages_point_distances() {
    let gt = [[0.0, 0.0]; HORIZONS];
    let mode = [[3.0, 4.0], [0.0, 1.0], [0.0, 0.0], [-6.0, 8.0]];
    assert!(close(ade(&mode, &gt), (5.0 + 1.0 + 0.0 + 10.0) / 4.0));
    let modes = TrajectoryModes { modes: vec![mode, mode] };
    assert_eq!(min_ade(&modes, &gt).unwrap().1, 0);
    assert!(min_ade(&TrajectoryModes { modes: vec![] }, &gt).is_err());
}

fn answers() -> StructuredAnswerSet {
    StructuredAnswerSet {
        weather: Weather::Sunny,
        illumination: Illumination::BrightLight,
        terrain: Terrain::Gravel,
        difficulty: Difficulty::Easy,
        drivable_availability: Availability::Clear,
        free_space_direction: Direction::Front,
        action: Action::GoStraight,
        obstacles: [
            Some(ObstacleAnswer {
                category: ObstacleCategory::Rock,
                direction: Direction::Front,
                distance: Distance::Near,
            }),
            Some(ObstacleAnswer {
                category: ObstacleCategory::Tree,
                direction: Direction::Left,
                distance: Distance::Far,
            }),
            None,
        ],
    }
}

#[test]
fn field_tally_counts_each_field() {
    let gt = answers();
    let mut pred = answers();
    pred.weather = Weather::Rainy;
    pred.obstacles[0].as_mut().unwrap().category = ObstacleCategory::Vehicle;
    pred.obstacles[1].as_mut().unwrap().direction = Direction::Right;
    let mut t = FieldTally::default();
    t.score(&pred, &gt);
    t.score(&gt, &gt);
    let acc = t.accuracy();
    assert_eq!(acc["weather"], 0.5);
    assert_eq!(acc["terrain"], 1.0);
    assert_eq!(acc["obstacle_count"], 1.0);
    // Second record: both obstacles right. First: rock matched with the wrong
    // category, tree unmatched because its direction is wrong.
    assert_eq!(t.total["obstacle_direction"], 4);
    assert_eq!(t.correct["obstacle_direction"], 3);
    assert_eq!(t.correct["obstacle_category"], 2);
    assert_eq!(t.correct["obstacle_distance"], 3);
    let n = acc.len() as f64;
    assert!(close(t.macro_accuracy(), acc.values().sum::<f64>() / n));
}

#[test]
fn obstacle_matching_ignores_slot_order() {
    let gt = answers();
    let mut pred = answers();
    pred.obstacles.swap(0, 2);
    let mut t = FieldTally::default();
    t.score(&pred, &gt);
    assert!(t.accuracy().values().all(|&v| v == 1.0));
}

#[test]
fn missing_obstacles_count_as_wrong() {
    let gt = answers();
    let mut pred = answers();
    pred.obstacles = [None; 3];
    let mut t = FieldTally::default();
    t.score(&pred, &gt);
    let acc = t.accuracy();
    assert_eq!(acc["obstacle_count"], 0.0);
    assert_eq!(acc["obstacle_direction"], 0.0);
    // Extra predictions with no ground truth add no obstacle attribute rows.
    let mut t = FieldTally::default();
    t.score(&gt, &pred);
    assert!(!t.total.contains_key("obstacle_direction"));
}

fn setup() -> (Simulator, Model) {
    let sim = Simulator::new(SimConfig {
        vocab_samples: 200,
        vocab_restarts: 2,
        ..SimConfig::default()
    })
    .unwrap();
    let cfg = ModelConfig {
        queries_per_task: 4,
        ..ModelConfig::default()
    };
    let m = Model::init(cfg, Geometry::default(), 64, sim.config_hash().unwrap(), 1).unwrap();
    (sim, m)
}

#[test]
fn clean_sweep_equals_plain_evaluation() {
    let (sim, m) = setup();
    let data = sim.generate(12, 3).unwrap();
    let plain = evaluate(&m, &data, RoutingMode::Routed, None).unwrap();
    let (cells, combined) = corruption_sweep(&m, &data, RoutingMode::Routed, &[DegradationSpec::CLEAN]).unwrap();
    assert_eq!(cells.len(), 1);
    for r in [&cells[0], &combined] {
        assert_eq!(r.flat(), plain.flat());
        assert_eq!(r.record_count, 12);
    }
    plain.check().unwrap();
}

#[test]
fn evaluation_is_read_only_and_repeatable() {
    let (sim, m) = setup();
    let data = sim.generate(8, 4).unwrap();
    let before = m.store.checksum();
    let grid = [DegradationSpec::CLEAN, DegradationSpec::CAMERA_BLACKOUT, DegradationSpec::LIDAR_BLACKOUT];
    let (a, ca) = corruption_sweep(&m, &data, RoutingMode::Routed, &grid).unwrap();
    let (b, cb) = corruption_sweep(&m, &data, RoutingMode::Routed, &grid).unwrap();
    assert_eq!(m.store.checksum(), before);
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    assert_eq!(ca.record_count, 3 * 8);
    assert_eq!(serde_json::to_string(&ca).unwrap(), serde_json::to_string(&cb).unwrap());
}

#[test]
fn sweeps_refuse_corrupted_inputs_and_empty_grids() {
    let (sim, m) = setup();
    let data = vec![sim.record(0, 5, Some(DegradationSpec::CAMERA_BLACKOUT)).unwrap()];
    assert!(corruption_sweep(&m, &data, RoutingMode::Routed, &[DegradationSpec::CLEAN]).is_err());
    assert!(corruption_sweep(&m, &data, RoutingMode::Routed, &[]).is_err());
    // As-stored evaluation accepts it and labels the breakdown.
    let r = evaluate(&m, &data, RoutingMode::Routed, None).unwrap();
    assert_eq!(r.breakdown.len(), 1);
    assert_eq!(r.breakdown[0].degradation, DegradationSpec::CAMERA_BLACKOUT.to_string());
}

#[test]
fn mismatched_feature_space_is_rejected() {
    let (_, m) = setup();
    assert!(check_compatible(&m, "other").is_err());
    assert!(check_compatible(&m, &m.config_hash.clone()).is_ok());
}
