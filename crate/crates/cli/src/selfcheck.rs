//! Fast oracle checks that need no training.

use numkit::{cross_entropy, finite_diff_check, GradCheckConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wilddrive::eval::{bleu_n, fde};
use wilddrive::geometry::Geometry;
use wilddrive::labeler::kmeans_restarts;
use wilddrive::model::Model;
use wilddrive::moro::{build_local_mask, project_reference, ModelConfig, RoutingMode};
use wilddrive::sim::{SimConfig, Simulator};
use wilddrive::trainer::phase1_record_loss;

fn report(name: &str, ok: bool, detail: String) -> bool {
    println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    ok
}

fn gradient() -> bool {
    let run = || -> wilddrive::Result<(bool, String)> {
        let mut sim_cfg = SimConfig::default();
        sim_cfg.vocab_samples = 200;
        sim_cfg.vocab_restarts = 2;
        let sim = Simulator::new(sim_cfg)?;
        let cfg = ModelConfig {
            queries_per_task: 4,
            ..ModelConfig::default()
        };
        let model = Model::init(cfg, sim.config().geometry.clone(), sim.config().feature_dim, sim.config_hash()?, 3)?;
        let record = sim.record(0, 1, None)?;
        let (tape, _, _, total) = phase1_record_loss(&model, &model.store, &record, RoutingMode::Stacked)?;
        let grads = tape.backward(total)?.into_params();
        let loss = |s: &numkit::ParamStore| -> numkit::Result<f64> {
            let (t, _, _, l) = phase1_record_loss(&model, s, &record, RoutingMode::Stacked)
                .map_err(|e| numkit::NumError::External(e.to_string()))?;
            Ok(t.value(l).data()[0])
        };
        let cfg = GradCheckConfig {
            epsilon: 1e-5,
            tolerance: 1e-3,
            coords_per_tensor: 4,
            seed: 0,
            floor: 1e-6,
        };
        let r = finite_diff_check(loss, &model.store, &grads, &cfg)?;
        Ok((r.pass, format!("max relative error {:.2e} ({})", r.max_rel_error, r.worst.unwrap_or_default())))
    };
    match run() {
        Ok((ok, d)) => report("gradient", ok, d),
        Err(e) => report("gradient", false, e.to_string()),
    }
}

fn mask() -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for case in 0..1000 {
        let mut g = Geometry::default();
        g.bev_rows = rng.random_range(2..20);
        g.bev_cols = rng.random_range(2..20);
        g.bev_origin = [0.0, -(g.bev_cols as f64) * g.bev_cell / 2.0];
        g.cam_rows = rng.random_range(2..16);
        g.cam_cols = rng.random_range(2..24);
        let (xr, yr) = (g.x_range(), g.y_range());
        let r = [
            rng.random_range(xr[0]..xr[1]),
            rng.random_range(yr[0]..yr[1]),
            rng.random_range(g.z_range[0]..g.z_range[1]),
        ];
        let (ll, lc) = (rng.random_range(1..9), rng.random_range(1..9));
        let p = project_reference(r, &g);
        let built = build_local_mask(&p, ll, lc, &g).to_binary();
        let mut direct = Vec::with_capacity(built.len());
        for u in 0..g.bev_tokens() {
            let (ur, uc) = ((u / g.bev_cols) as f64, (u % g.bev_cols) as f64);
            let d = (ur - p.bev.0 as f64).abs().max((uc - p.bev.1 as f64).abs());
            direct.push(d <= ll as f64 / 2.0);
        }
        for u in 0..g.cam_tokens() {
            let (ur, uc) = ((u / g.cam_cols) as f64, (u % g.cam_cols) as f64);
            let d = (ur - p.camera.row as f64).abs().max((uc - p.camera.col as f64).abs());
            direct.push(d <= lc as f64 / 2.0);
        }
        if built != direct {
            return report("mask", false, format!("case {case} differs from direct evaluation"));
        }
    }
    report("mask", true, "1000 random cases match direct evaluation".into())
}

fn metrics() -> bool {
    let toks = |s: &str| s.split_whitespace().map(str::to_string).collect::<Vec<_>>();
    let (c, r) = (vec![toks("a b c d")], vec![toks("a b c x")]);
    let b1 = bleu_n(&c, &r, 1).unwrap_or(f64::NAN);
    let b2 = bleu_n(&c, &r, 2).unwrap_or(f64::NAN);
    let ce = cross_entropy(&[1.0 / 3.0; 3], &[0.0, 1.0, 0.0]).unwrap_or(f64::NAN);
    let ok = (b1 - 0.75).abs() < 1e-9
        && (b2 - 0.5f64.sqrt()).abs() < 1e-9
        && fde([3.0, 4.0], [0.0, 0.0], true) == 25.0
        && fde([3.0, 4.0], [0.0, 0.0], false) == 5.0
        && (ce - 3f64.ln()).abs() < 1e-9;
    report("metrics", ok, format!("bleu_1 {b1:.6} bleu_2 {b2:.6} ce {ce:.6}"))
}

fn kmeans() -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for trial in 0..100 {
        let data: Vec<Vec<f64>> = (0..8)
            .map(|_| vec![rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)])
            .collect();
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
        let run = match kmeans_restarts(&data, 2, SimConfig::default().vocab_restarts, &mut rng) {
            Ok(r) => r,
            Err(e) => return report("kmeans", false, format!("trial {trial}: {e}")),
        };
        if (run.final_objective() - best).abs() > 1e-9 * best.max(1.0) {
            return report(
                "kmeans",
                false,
                format!("trial {trial}: objective {} vs optimum {best}", run.final_objective()),
            );
        }
    }
    report("kmeans", true, "100 trials reach the exhaustive optimum".into())
}

pub fn run_all() -> bool {
    let results = [metrics(), mask(), kmeans(), gradient()];
    results.iter().all(|&r| r)
}
