//! The acceptance suite: one PASS/FAIL line per criterion. Criteria 6-10 share
//! the preset toy training run.

use std::process::ExitCode;
use std::time::Instant;

use mdvsc_core::channel::{power_normalize, ChannelConfig};
use mdvsc_core::codec::{jscc_encode, latent_forward};
use mdvsc_core::data::synthetic_video;
use mdvsc_core::division::{combine, split};
use mdvsc_core::entropy::likelihood_at;
use mdvsc_core::model::{CodecConfig, ModelState};
use mdvsc_core::network::Net;
use mdvsc_core::pipeline::evaluate;
use mdvsc_core::training::{build_loss, StepNoise};
use mdvsc_core::video::{Frame, Gop};
use mdvsc_core::vlc::{deserialize, serialize, Budget, DropPolicy, MaskPlan, Payload, PayloadHeader};
use mdvsc_harness::commands::{cmd_train, eval_gops, eval_point, TrainOutcome};
use mdvsc_harness::{run, Command, ExperimentConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn ac1_rate_control() -> Outcome {
    let state = ModelState::init(CodecConfig::toy(), 1).map_err(|e| e.to_string())?;
    let video = synthetic_video(5, 32, 8, 64, 64).map_err(|e| e.to_string())?;
    let dim = (4 * 64 * 64 * 3) as f64;
    let mut achieved = Vec::new();
    for target in [0.005, 0.010, 0.015, 0.020, 0.025, 0.030] {
        let r = evaluate(&video, &state, &Budget::global(target), &ChannelConfig::new(10.0, 0).unwrap(), 4, DropPolicy::Entropy).map_err(|e| e.to_string())?;
        for g in &r.per_gop {
            if (g.cbr.cbr - target).abs() > 1.0 / dim {
                return Err(format!("target {target}: GOP {} achieved {}", g.gop_id, g.cbr.cbr));
            }
        }
        achieved.push(r.per_gop[0].cbr.cbr);
    }
    Ok(format!("achieved {achieved:.6?} on 8 GOPs each"))
}

fn ac2_decomposition() -> Outcome {
    let mut r = rng(2);
    let mut worst = 0.0f32;
    for k in 0..100u64 {
        let cfg = CodecConfig {
            use_cfe: r.random_bool(0.8),
            ..CodecConfig::toy()
        };
        let state = ModelState::init(cfg, k).map_err(|e| e.to_string())?;
        let n = r.random_range(1..=6);
        let frames = (0..n).map(|i| Frame::new(64, 64, 3, (0..64 * 64 * 3).map(|_| r.random::<f32>()).collect(), i).unwrap()).collect();
        let gop = Gop::new(frames, k as u32).map_err(|e| e.to_string())?;
        let y = jscc_encode(&latent_forward(&gop, &state).map_err(|e| e.to_string())?, &state).map_err(|e| e.to_string())?;
        let back = combine(&split(&y, &state).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        for (a, b) in y.iter().zip(&back) {
            for (u, v) in a.data.iter().zip(&b.data) {
                worst = worst.max((u - v).abs());
            }
        }
    }
    check(worst <= 1e-6, format!("max abs error {worst:e} over 100 GOPs"))
}

/// Composite Simpson integration of the Gaussian density over `[w-1/2, w+1/2]`.
fn bin_mass(w: f64, sigma: f64) -> f64 {
    let n = 20_000;
    let (a, b) = (w - 0.5, w + 0.5);
    let h = (b - a) / n as f64;
    let f = |t: f64| (-(t * t) / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

fn ac3_entropy_oracle() -> Outcome {
    let mut worst: f64 = 0.0;
    for i in 0..21 {
        let w = -5.0 + 0.5 * i as f64;
        for sigma in [0.05, 0.5, 1.0, 2.0, 5.0] {
            let oracle = bin_mass(w, sigma).max(1e-9);
            worst = worst.max((likelihood_at(w, sigma) - oracle).abs());
        }
    }
    let p1 = likelihood_at(0.0, 1.0);
    let p2 = likelihood_at(0.0, 0.5);
    check(
        worst <= 1e-6 && (p1 - 0.382925).abs() <= 1e-6 && (p2 - 0.682689).abs() <= 1e-6,
        format!("max deviation {worst:e}; P(0,1) = {p1:.6}, P(0,0.5) = {p2:.6}"),
    )
}

fn ac4_channel() -> Outcome {
    let mut r = rng(4);
    let normal = Normal::new(0.0, 3.0).unwrap();
    let raw: Vec<f32> = (0..1_000_000).map(|_| normal.sample(&mut r) as f32).collect();
    let (x, _) = power_normalize(&raw).map_err(|e| e.to_string())?;
    let power = x.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / x.len() as f64;
    let mut measured = Vec::new();
    for snr in [0.0, 10.0, 15.0] {
        let y = mdvsc_core::channel::awgn(&x, &ChannelConfig::new(snr, 0).unwrap(), &mut rng(40 + snr as u64));
        let noise = x.iter().zip(&y).map(|(&a, &b)| (b as f64 - a as f64).powi(2)).sum::<f64>() / x.len() as f64;
        let db = 10.0 * (power / noise).log10();
        if (db - snr).abs() > 0.2 {
            return Err(format!("target {snr} dB measured {db:.4} dB"));
        }
        measured.push(db);
    }
    check((power - 1.0).abs() <= 1e-6, format!("mean power {power:.9}; measured SNR {measured:.3?} dB"))
}

fn ac5_gradients() -> Outcome {
    let cfg = CodecConfig {
        channel_width: 8,
        jscc_blocks: 1,
        residual_per_block: 1,
        hyper_width: 8,
        hyper_stages: 1,
        ..CodecConfig::default()
    };
    let state = ModelState::init(cfg, 5).map_err(|e| e.to_string())?;
    let mut r = rng(5);
    let jitter = Normal::new(0.0, 0.05).unwrap();
    let values: Vec<Vec<f64>> = state.params().iter().map(|p| p.data.iter().map(|&v| v as f64 + jitter.sample(&mut r)).collect()).collect();
    let batch: Vec<Gop> = (0..2)
        .map(|id| {
            let frames = (0..2).map(|i| Frame::new(8, 8, 3, (0..192).map(|_| r.random::<f32>()).collect(), i).unwrap()).collect();
            Gop::new(frames, id).unwrap()
        })
        .collect();
    let noise = StepNoise::<f64>::draw(&mut r, &state.config, 2, 2, (8, 8), 10.0);
    let lambda = 0.5;
    let loss = |v: &[Vec<f64>]| build_loss(Net::with_values(&state, v), &batch, lambda, &noise).unwrap().terms().loss;
    let g = build_loss(Net::with_values(&state, &values), &batch, lambda, &noise).map_err(|e| e.to_string())?;
    let grads = g.net.graph.backward(g.loss);
    let bound = g.net.bound_params().to_vec();
    let eps = 1e-6;
    let (mut worst, mut checked) = (0.0f64, 0);
    for (pi, p) in state.params().iter().enumerate() {
        let Some(analytic) = bound[pi].and_then(|v| grads.get(v)) else {
            continue;
        };
        for _ in 0..3 {
            let k = r.random_range(0..p.data.len());
            let mut plus = values.clone();
            plus[pi][k] += eps;
            let mut minus = values.clone();
            minus[pi][k] -= eps;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * eps);
            let a = analytic.data()[k];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
            checked += 1;
        }
    }
    check(worst <= 1e-3, format!("worst relative error {worst:e} over {checked} sampled parameters"))
}

struct Toy {
    cfg: ExperimentConfig,
    run: TrainOutcome,
    _dir: tempfile::TempDir,
}

fn toy_config(dir: &std::path::Path) -> ExperimentConfig {
    ExperimentConfig::load(None, &[format!("out={:?}", dir.display().to_string())]).expect("preset config")
}

fn train_toy() -> Result<(Toy, TrainOutcome), String> {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = toy_config(a.path());
    let first = cmd_train(&cfg).map_err(|e| e.to_string())?;
    let second = cmd_train(&toy_config(b.path())).map_err(|e| e.to_string())?;
    Ok((Toy { cfg, run: first, _dir: a }, second))
}

fn ac6_training(toy: &Toy, second: &TrainOutcome) -> Outcome {
    let cfg = &toy.cfg;
    let gops = eval_gops(cfg).map_err(|e| e.to_string())?;
    let untrained = ModelState::init(cfg.codec(), cfg.seed).map_err(|e| e.to_string())?;
    let at = |s: &ModelState| eval_point(&gops, s, &Budget::global(0.01), 15.0, DropPolicy::Entropy, &cfg.channel_seeds()).map(|p| p.psnr_db);
    let base = at(&untrained).map_err(|e| e.to_string())?;
    let trained = at(&toy.run.state).map_err(|e| e.to_string())?;
    let identical = toy.run.trace == second.trace;
    let detail = format!(
        "{} steps, lambda {}: trained {trained:.2} dB vs untrained {base:.2} dB (gain {:.2} dB, need 10); identical traces: {identical}",
        toy.run.state.step,
        toy.run.lambda_rate,
        trained - base
    );
    check(identical && trained - base >= 10.0, detail)
}

fn ac7_policies(toy: &Toy) -> Outcome {
    let cfg = &toy.cfg;
    let gops = eval_gops(cfg).map_err(|e| e.to_string())?;
    let seeds: Vec<u64> = (0..5).map(|k| cfg.seed + k).collect();
    let mut psnr = std::collections::BTreeMap::new();
    for p in DropPolicy::ALL {
        let v = eval_point(&gops, &toy.run.state, &Budget::split(0.5, 0.5), cfg.eval.snr_db, p, &seeds).map_err(|e| e.to_string())?;
        psnr.insert(p.name(), v.psnr_db);
    }
    let g = |n: &str| psnr[n];
    let ok = g("inv_entropy") <= g("random") - 5.0 && g("inv_power") <= g("random") - 5.0 && g("entropy") >= g("power") && g("power") >= g("random");
    check(ok, format!("PSNR at drop 0.5: {psnr:.2?}"))
}

fn ac8_degradation(toy: &Toy) -> Outcome {
    let cfg = &toy.cfg;
    let gops = eval_gops(cfg).map_err(|e| e.to_string())?;
    let mut db = Vec::new();
    for snr in [0.0, 5.0, 10.0, 15.0, 20.0] {
        let p = eval_point(&gops, &toy.run.state, &Budget::global(0.01), snr, DropPolicy::Entropy, &cfg.channel_seeds()).map_err(|e| e.to_string())?;
        if !(p.psnr_db.is_finite() && p.ms_ssim_db.is_finite()) {
            return Err(format!("non-finite quality at {snr} dB"));
        }
        db.push(p.ms_ssim_db);
    }
    let ok = db.windows(2).all(|w| w[0] <= w[1] + 0.2);
    check(ok, format!("MS-SSIM (dB) at 0..20 dB: {db:.3?}"))
}

fn ac9_trade(toy: &Toy) -> Outcome {
    let r = run(Command::SweepBalance, &toy.cfg).map_err(|e| e.to_string())?;
    let t = r.table("sweep_balance").ok_or("no table")?;
    let (cbr, feasible, symbols) = (t.strings("cbr"), t.strings("feasible"), t.strings("symbols"));
    let mut groups: Vec<(String, Vec<String>)> = Vec::new();
    for i in 0..t.rows.len() {
        if feasible[i] != "true" {
            continue;
        }
        match groups.iter_mut().find(|(c, _)| c == cbr[i]) {
            Some((_, v)) => v.push(symbols[i].to_string()),
            None => groups.push((cbr[i].to_string(), vec![symbols[i].to_string()])),
        }
    }
    let ok = groups.len() == toy.cfg.eval.balance_cbr_grid.len() && groups.iter().all(|(_, v)| v.iter().all(|s| s == &v[0])) && groups.iter().any(|(_, v)| v.len() >= 2);
    check(ok, format!("kept symbols per CBR group: {groups:?}"))
}

fn ac10_jitter(toy: &Toy) -> Outcome {
    let r = run(Command::Jitter, &toy.cfg).map_err(|e| e.to_string())?;
    let s = r.table("jitter_summary").ok_or("no summary")?;
    let per = r.table("jitter").ok_or("no table")?;
    let variance = s.floats("cbr_variance")[0];
    let jumps: Vec<f64> = per.strings("kind").iter().zip(per.floats("psnr_db")).filter(|(k, _)| **k == "jump").map(|(_, p)| p).collect();
    let ok = per.rows.len() == 50 && variance == 0.0 && s.strings("all_finite") == ["true"] && !jumps.is_empty() && jumps.iter().all(|p| p.is_finite());
    check(ok, format!("{} GOPs, CBR variance {variance}, {} jump GOPs all finite", per.rows.len(), jumps.len()))
}

fn random_payload(r: &mut ChaCha8Rng, case: usize) -> Payload {
    let n = r.random_range(1..=8usize);
    let shape = (r.random_range(1..=16u16), r.random_range(1..=8u16), r.random_range(1..=8u16));
    let map_len = shape.0 as usize * shape.1 as usize * shape.2 as usize;
    let plan = match case % 10 {
        0 => MaskPlan::empty(n + 1),
        1 => MaskPlan::keep_all(n + 1, map_len),
        _ => {
            let p = r.random::<f64>();
            MaskPlan::from_kept((0..=n).map(|_| (0..map_len).filter(|_| r.random_bool(p)).collect()).collect())
        }
    };
    let body = (0..plan.total_kept)
        .map(|_| match r.random_range(0..20) {
            0 => 0.0,
            1 => -0.0,
            2 => f32::MAX,
            3 => f32::MIN_POSITIVE,
            _ => r.random::<f32>() * 8.0 - 4.0,
        })
        .collect();
    Payload {
        header: PayloadHeader {
            gop_id: r.random(),
            gop_size: n as u8,
            feature_shape: shape,
            scale: r.random::<f32>() * 10.0,
            plan,
        },
        body,
    }
}

fn ac11_wire() -> Outcome {
    let mut r = rng(11);
    for case in 0..1000 {
        let p = random_payload(&mut r, case);
        let bytes = serialize(&p).map_err(|e| format!("case {case}: {e}"))?;
        let back = deserialize(&bytes).map_err(|e| format!("case {case}: {e}"))?;
        let same_bits = back.body.iter().map(|v| v.to_bits()).eq(p.body.iter().map(|v| v.to_bits()));
        if back.header != p.header || !same_bits || serialize(&back).map_err(|e| e.to_string())? != bytes {
            return Err(format!("case {case} did not round-trip"));
        }
    }
    Ok("1000 payloads, empty and full-keep cases included".into())
}

fn main() -> ExitCode {
    let mut results: Vec<(usize, &str, Outcome, f64)> = Vec::new();
    let mut record = |id: usize, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let out = f();
        let secs = t.elapsed().as_secs_f64();
        let (tag, detail) = match &out {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("AC{id:<2} {tag} {name}: {detail} [{secs:.1}s]");
        results.push((id, name, out, secs));
    };
    record(1, "exact rate control", &mut ac1_rate_control);
    record(2, "decomposition identity", &mut ac2_decomposition);
    record(3, "entropy-model oracle", &mut ac3_entropy_oracle);
    record(4, "channel fidelity", &mut ac4_channel);
    record(5, "gradient correctness", &mut ac5_gradients);
    record(11, "wire-format round trip", &mut ac11_wire);
    let t = Instant::now();
    match train_toy() {
        Ok((toy, second)) => {
            println!("     toy training: two runs in {:.0}s", t.elapsed().as_secs_f64());
            record(6, "toy training efficacy", &mut || ac6_training(&toy, &second));
            record(7, "policy ordering", &mut || ac7_policies(&toy));
            record(8, "graceful degradation", &mut || ac8_degradation(&toy));
            record(9, "budget-trade invariance", &mut || ac9_trade(&toy));
            record(10, "jitter property", &mut || ac10_jitter(&toy));
        }
        Err(e) => {
            for (id, name) in [(6, "toy training efficacy"), (7, "policy ordering"), (8, "graceful degradation"), (9, "budget-trade invariance"), (10, "jitter property")] {
                record(id, name, &mut || Err(format!("toy training failed: {e}")));
            }
        }
    }
    results.sort_by_key(|r| r.0);
    let failed: Vec<usize> = results.iter().filter(|r| r.2.is_err()).map(|r| r.0).collect();
    println!("acceptance: {} passed, {} failed", results.len() - failed.len(), failed.len());
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
