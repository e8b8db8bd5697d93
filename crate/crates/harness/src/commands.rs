//! The experiment commands. Each returns its tables after writing them (and
//! a plot) under the configured output directory.

use std::fs;
use std::path::{Path, PathBuf};

use mdvsc_core::channel::ChannelConfig;
use mdvsc_core::data::{make_jump_gop, read_frames, read_raw, substream, synthetic_video, SceneSpec, ToyDataset};
use mdvsc_core::model::ModelState;
use mdvsc_core::pipeline::{evaluate_gops, EvalReport};
use mdvsc_core::training::{calibrate_lambda, load_checkpoint, save_checkpoint, train_until, BatchSource, CroppedGops, StepStats};
use mdvsc_core::video::{source_dimension, split_into_gops, Frame, Gop, PadPolicy};
use mdvsc_core::vlc::{mask_overhead_symbols, trade_budget, Budget, DropPolicy};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::output::{num, plot_lines, Series, Table};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Train,
    SweepCbr,
    SweepSnr,
    SweepDrop,
    SweepBalance,
    Ablate,
    Jitter,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::SweepCbr => "sweep-cbr",
            Command::SweepSnr => "sweep-snr",
            Command::SweepDrop => "sweep-drop",
            Command::SweepBalance => "sweep-balance",
            Command::Ablate => "ablate",
            Command::Jitter => "jitter",
        }
    }
}

/// Named tables produced by one command, in output order.
#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub tables: Vec<(String, Table)>,
}

impl Report {
    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

pub fn run(command: Command, cfg: &ExperimentConfig) -> Result<Report> {
    fs::create_dir_all(&cfg.out).map_err(|e| HarnessError::io(&cfg.out, e))?;
    match command {
        Command::Train => cmd_train(cfg).map(|o| o.report),
        Command::SweepCbr => cmd_sweep_cbr(cfg),
        Command::SweepSnr => cmd_sweep_snr(cfg),
        Command::SweepDrop => cmd_sweep_drop(cfg),
        Command::SweepBalance => cmd_sweep_balance(cfg),
        Command::Ablate => cmd_ablate(cfg),
        Command::Jitter => cmd_jitter(cfg),
    }
}

fn load_video(path: &Path) -> Result<Vec<Frame>> {
    Ok(if path.is_dir() { read_frames(path)? } else { read_raw(path)? })
}

fn train_source(cfg: &ExperimentConfig) -> Result<Box<dyn BatchSource>> {
    let d = &cfg.data;
    Ok(match &d.path {
        Some(p) => Box::new(CroppedGops {
            gops: split_into_gops(&load_video(p)?, d.gop_size, PadPolicy::DropTail)?,
            crop: cfg.train.crop,
        }),
        None => Box::new(ToyDataset {
            clips: d.clips,
            height: d.height,
            width: d.width,
            gop_size: d.gop_size,
            seed: d.train_seed,
        }),
    })
}

/// The evaluation video split into GOPs.
pub fn eval_gops(cfg: &ExperimentConfig) -> Result<Vec<Gop>> {
    let d = &cfg.data;
    let frames = match &d.path {
        Some(p) => load_video(p)?,
        None => synthetic_video(d.eval_seed, d.eval_frames, d.scene_frames, d.height, d.width)?,
    };
    Ok(split_into_gops(&frames, d.gop_size, PadPolicy::DropTail)?)
}

pub fn load_model(path: &Path) -> Result<ModelState> {
    if !path.exists() {
        return Err(HarnessError::Run(format!("checkpoint {} not found; run `mdvsc train` first", path.display())));
    }
    Ok(load_checkpoint(path)?)
}

fn write(cfg: &ExperimentConfig, name: &str, table: Table) -> Result<(String, Table)> {
    table.write_csv(&cfg.out.join(format!("{name}.csv")))?;
    Ok((name.to_string(), table))
}

fn plot(cfg: &ExperimentConfig, name: &str, title: &str, x: &str, y: &str, series: Vec<Series>) -> Result<()> {
    plot_lines(&cfg.out.join(format!("{name}.svg")), title, x, y, &series)
}

pub struct TrainOutcome {
    pub report: Report,
    pub trace: Vec<StepStats>,
    pub lambda_rate: f64,
    pub state: ModelState,
    pub checkpoint: PathBuf,
}

const LOSS_COLUMNS: [&str; 5] = ["step", "loss", "rate", "distortion", "lr"];

fn calibrated_lambda(path: &Path) -> Result<f64> {
    let rows = Table::read_csv(path).map_err(|e| HarnessError::Run(format!("resuming a calibrated run needs {}: {e}", path.display())))?;
    rows.iter()
        .find(|r| r.get(3).map(String::as_str) == Some("true"))
        .and_then(|r| r[0].parse().ok())
        .ok_or_else(|| HarnessError::Run(format!("{} has no chosen row", path.display())))
}

pub fn cmd_train(cfg: &ExperimentConfig) -> Result<TrainOutcome> {
    fs::create_dir_all(&cfg.out).map_err(|e| HarnessError::io(&cfg.out, e))?;
    let ckpt = cfg.checkpoint_path();
    if let Some(dir) = ckpt.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    let source = train_source(cfg)?;
    let mut tc = cfg.train_config();
    let resumed = cfg.train.resume && ckpt.exists();
    let mut state = if resumed { load_checkpoint(&ckpt)? } else { ModelState::init(cfg.codec(), cfg.seed)? };
    let mut tables = Vec::new();
    let cal_path = cfg.out.join("calibration.csv");
    if cfg.train.calibrate {
        if resumed {
            tc.lambda_rate = calibrated_lambda(&cal_path)?;
        } else {
            let cal = calibrate_lambda(&state, source.as_ref(), &tc, &cfg.train.lambda_candidates, cfg.train.calibration_steps)?;
            tc.lambda_rate = cal.lambda_rate;
            let mut t = Table::new(&["lambda_rate", "rate_term", "distortion", "chosen"]);
            for (l, r, d) in cal.trials {
                t.push(vec![num(l), num(r), num(d), (l == cal.lambda_rate).to_string()]);
            }
            tables.push(write(cfg, "calibration", t)?);
        }
    }

    let loss_path = cfg.out.join("loss.csv");
    let mut loss = Table::new(&LOSS_COLUMNS);
    if resumed && loss_path.exists() {
        loss.rows = Table::read_csv(&loss_path)?
            .into_iter()
            .filter(|r| r[0].parse::<u64>().is_ok_and(|s| s < state.step))
            .collect();
    }
    let every = cfg.train.checkpoint_every.max(1);
    let mut trace = Vec::new();
    let mut last_good = resumed.then(|| ckpt.clone());
    let stop = cfg.train.stop_after.map_or(tc.steps, |s| s.min(tc.steps));
    while state.step < stop {
        let until = (state.step + every).min(stop);
        let part = train_until(&mut state, source.as_ref(), &tc, until, |_, _| {}).map_err(|e| match e {
            mdvsc_core::Error::Diverged { .. } => HarnessError::Run(format!(
                "{e}; last good checkpoint: {}",
                last_good.as_ref().map_or("none".to_string(), |p| p.display().to_string())
            )),
            other => other.into(),
        })?;
        for s in &part {
            loss.push(vec![s.step.to_string(), num(s.loss), num(s.rate), num(s.distortion), num(s.lr)]);
        }
        trace.extend(part);
        save_checkpoint(&state, &ckpt)?;
        last_good = Some(ckpt.clone());
    }
    if !ckpt.exists() {
        save_checkpoint(&state, &ckpt)?;
    }
    let points = loss.floats("step").into_iter().zip(loss.floats("loss")).collect();
    plot(cfg, "loss", "training loss", "step", "loss", vec![Series { label: "loss".into(), points }])?;
    tables.push(write(cfg, "loss", loss)?);
    Ok(TrainOutcome {
        report: Report { tables },
        trace,
        lambda_rate: tc.lambda_rate,
        state,
        checkpoint: ckpt,
    })
}

/// Quality at one sweep point, averaged over channel seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct Point {
    pub symbols: u64,
    pub cbr: f64,
    pub saturated: bool,
    pub psnr_db: f64,
    pub ms_ssim: f64,
    pub ms_ssim_db: f64,
}

impl Point {
    fn cells(&self) -> [String; 4] {
        [num(self.cbr), num(self.psnr_db), num(self.ms_ssim), num(self.ms_ssim_db)]
    }
}

pub fn eval_point(gops: &[Gop], state: &ModelState, budget: &Budget, snr_db: f64, policy: DropPolicy, seeds: &[u64]) -> Result<Point> {
    let reports = seeds
        .iter()
        .map(|&s| evaluate_gops(gops, state, budget, &ChannelConfig::new(snr_db, s)?, policy))
        .collect::<mdvsc_core::Result<Vec<EvalReport>>>()?;
    let k = reports.len() as f64;
    let avg = |f: fn(&EvalReport) -> f64| reports.iter().map(f).sum::<f64>() / k;
    let first = &reports[0];
    Ok(Point {
        symbols: first.per_gop[0].cbr.symbol_count,
        cbr: first.cbr_mean,
        saturated: first.per_gop.iter().any(|g| g.requested as u64 > g.cbr.symbol_count),
        psnr_db: avg(|r| r.quality.psnr_db),
        ms_ssim: avg(|r| r.quality.ms_ssim),
        ms_ssim_db: avg(|r| r.quality.ms_ssim_db),
    })
}

struct Eval {
    gops: Vec<Gop>,
    state: ModelState,
    seeds: Vec<u64>,
    policy: DropPolicy,
}

fn eval_setup(cfg: &ExperimentConfig) -> Result<Eval> {
    Ok(Eval {
        gops: eval_gops(cfg)?,
        state: load_model(&cfg.checkpoint_path())?,
        seeds: cfg.channel_seeds(),
        policy: cfg.policy()?,
    })
}

pub fn cmd_sweep_cbr(cfg: &ExperimentConfig) -> Result<Report> {
    let e = eval_setup(cfg)?;
    let first = e.gops.first().ok_or(mdvsc_core::Error::NoFrames)?;
    let (h, w, _) = first.frame_shape();
    let (c, fh, fw) = e.state.config.feature_shape(h, w);
    let overhead = match cfg.eval.mask_bits_per_symbol {
        b if b > 0.0 => mask_overhead_symbols(first.len() + 1, c * fh * fw, b),
        _ => 0.0,
    };
    let dim = source_dimension(first) as f64;
    let mut t = Table::new(&["target_cbr", "symbols", "saturated", "achieved_cbr", "psnr_db", "ms_ssim", "ms_ssim_db", "charged_cbr"]);
    for &target in &cfg.eval.cbr_grid {
        let p = eval_point(&e.gops, &e.state, &Budget::global(target), cfg.eval.snr_db, e.policy, &e.seeds)?;
        let mut row = vec![num(target), p.symbols.to_string(), p.saturated.to_string()];
        row.extend(p.cells());
        row.push(num((p.symbols as f64 + overhead) / dim));
        t.push(row);
    }
    let points = t.floats("achieved_cbr").into_iter().zip(t.floats("psnr_db")).collect();
    plot(cfg, "sweep_cbr", "quality vs CBR", "CBR", "PSNR (dB)", vec![Series { label: "psnr".into(), points }])?;
    Ok(Report {
        tables: vec![write(cfg, "sweep_cbr", t)?],
    })
}

pub fn cmd_sweep_snr(cfg: &ExperimentConfig) -> Result<Report> {
    let e = eval_setup(cfg)?;
    let mut t = Table::new(&["snr_db", "symbols", "cbr", "psnr_db", "ms_ssim", "ms_ssim_db"]);
    for &snr in &cfg.eval.snr_grid {
        let p = eval_point(&e.gops, &e.state, &Budget::global(cfg.eval.cbr), snr, e.policy, &e.seeds)?;
        let mut row = vec![num(snr), p.symbols.to_string()];
        row.extend(p.cells());
        t.push(row);
    }
    let points = t.floats("snr_db").into_iter().zip(t.floats("ms_ssim_db")).collect();
    plot(cfg, "sweep_snr", "quality vs SNR", "SNR (dB)", "MS-SSIM (dB)", vec![Series { label: "ms-ssim".into(), points }])?;
    Ok(Report {
        tables: vec![write(cfg, "sweep_snr", t)?],
    })
}

/// Index of the first row whose PSNR is more than 1 dB below the first row's.
pub fn knee(psnr: &[f64]) -> Option<usize> {
    let base = *psnr.first()?;
    psnr.iter().position(|&p| p < base - 1.0)
}

pub fn cmd_sweep_drop(cfg: &ExperimentConfig) -> Result<Report> {
    let e = eval_setup(cfg)?;
    let mut t = Table::new(&["drop_ratio", "symbols", "cbr", "psnr_db", "ms_ssim", "ms_ssim_db", "knee"]);
    let mut psnr = Vec::new();
    for &r in &cfg.eval.drop_grid {
        let p = eval_point(&e.gops, &e.state, &Budget::split(r, r), cfg.eval.snr_db, e.policy, &e.seeds)?;
        psnr.push(p.psnr_db);
        let mut row = vec![num(r), p.symbols.to_string()];
        row.extend(p.cells());
        row.push("false".into());
        t.push(row);
    }
    if let Some(k) = knee(&psnr) {
        let last = t.columns.len() - 1;
        t.rows[k][last] = "true".into();
    }
    let points = t.floats("drop_ratio").into_iter().zip(psnr).collect();
    plot(cfg, "sweep_drop", "quality vs drop ratio", "drop ratio", "PSNR (dB)", vec![Series { label: "psnr".into(), points }])?;
    Ok(Report {
        tables: vec![write(cfg, "sweep_drop", t)?],
    })
}

pub fn cmd_sweep_balance(cfg: &ExperimentConfig) -> Result<Report> {
    let e = eval_setup(cfg)?;
    let first = e.gops.first().ok_or(mdvsc_core::Error::NoFrames)?;
    let (h, w, _) = first.frame_shape();
    let (c, fh, fw) = e.state.config.feature_shape(h, w);
    let n = first.len();
    let dim = source_dimension(first);
    let mut t = Table::new(&["cbr", "delta", "drop_common", "drop_individual", "feasible", "symbols", "achieved_cbr", "psnr_db", "ms_ssim", "ms_ssim_db"]);
    let mut series = Vec::new();
    for &cbr in &cfg.eval.balance_cbr_grid {
        let base = Budget::split_for_cbr(cbr, n, c * fh * fw, dim);
        let mut points = Vec::new();
        for &delta in &cfg.eval.delta_grid {
            let traded = base.as_ref().map_err(|_| ()).and_then(|b| trade_budget(b, delta, n).map_err(|_| ()));
            match traded {
                Ok(b) => {
                    let p = eval_point(&e.gops, &e.state, &b, cfg.eval.snr_db, e.policy, &e.seeds)?;
                    points.push((delta, p.psnr_db));
                    let mut row = vec![num(cbr), num(delta), num(b.drop_common), num(b.drop_individual), "true".into(), p.symbols.to_string()];
                    row.extend(p.cells());
                    t.push(row);
                }
                Err(()) => {
                    let mut row = vec![num(cbr), num(delta)];
                    row.extend(["", "", "false", "", "", "", "", ""].map(String::from));
                    t.push(row);
                }
            }
        }
        series.push(Series {
            label: format!("cbr {cbr}"),
            points,
        });
    }
    plot(cfg, "sweep_balance", "common/individual trade", "delta individual", "PSNR (dB)", series)?;
    Ok(Report {
        tables: vec![write(cfg, "sweep_balance", t)?],
    })
}

pub fn cmd_ablate(cfg: &ExperimentConfig) -> Result<Report> {
    let e = eval_setup(cfg)?;
    let no_cfe = cfg.no_cfe_checkpoint.as_deref().map(load_model).transpose()?;
    let policies = cfg.policies()?;
    let snr = cfg.eval.snr_db;
    let mut t = Table::new(&["mode", "level", "variant", "policy", "symbols", "cbr", "psnr_db", "ms_ssim", "ms_ssim_db"]);
    let push = |t: &mut Table, mode: &str, level: f64, variant: &str, policy: DropPolicy, p: Point| {
        let mut row = vec![mode.to_string(), num(level), variant.to_string(), policy.name().to_string(), p.symbols.to_string()];
        row.extend(p.cells());
        t.push(row);
    };
    let mut series: Vec<Series> = Vec::new();
    for &cbr in &cfg.eval.cbr_grid {
        let budget = Budget::global(cbr);
        for (i, &policy) in policies.iter().enumerate() {
            let p = eval_point(&e.gops, &e.state, &budget, snr, policy, &e.seeds)?;
            if series.len() <= i {
                series.push(Series {
                    label: policy.name().into(),
                    points: Vec::new(),
                });
            }
            series[i].points.push((cbr, p.psnr_db));
            push(&mut t, "cbr", cbr, "baseline", policy, p);
        }
        let dropped = Budget {
            send_common: false,
            ..budget
        };
        let p = eval_point(&e.gops, &e.state, &dropped, snr, e.policy, &e.seeds)?;
        push(&mut t, "cbr", cbr, "common_dropped", e.policy, p);
        if let Some(s) = &no_cfe {
            let p = eval_point(&e.gops, s, &budget, snr, e.policy, &e.seeds)?;
            push(&mut t, "cbr", cbr, "no_cfe", e.policy, p);
        }
    }
    let r = cfg.eval.ablate_drop;
    for &policy in &policies {
        let p = eval_point(&e.gops, &e.state, &Budget::split(r, r), snr, policy, &e.seeds)?;
        push(&mut t, "drop", r, "baseline", policy, p);
    }
    plot(cfg, "ablate", "drop policies", "CBR", "PSNR (dB)", series)?;
    Ok(Report {
        tables: vec![write(cfg, "ablate", t)?],
    })
}

/// The jitter video: normal GOPs with every `jump_every`-th replaced by a
/// jump GOP of unrelated scenes. Returns the GOPs and their kinds.
pub fn jitter_gops(cfg: &ExperimentConfig) -> Result<Vec<(Gop, &'static str)>> {
    let d = &cfg.data;
    let n = d.gop_size;
    let base = match &d.path {
        Some(p) => split_into_gops(&load_video(p)?, n, PadPolicy::DropTail)?,
        None => split_into_gops(&synthetic_video(d.eval_seed, cfg.eval.jitter_gops * n, d.scene_frames, d.height, d.width)?, n, PadPolicy::DropTail)?,
    };
    base.into_iter()
        .enumerate()
        .map(|(k, g)| {
            let every = cfg.eval.jump_every;
            if every > 0 && k % every == every - 1 {
                let (h, w, _) = g.frame_shape();
                let mut rng = substream(d.eval_seed, (1 << 32) + k as u64);
                let specs: Vec<SceneSpec> = (0..n.max(2)).map(|_| SceneSpec::random(&mut rng, h, w, n)).collect();
                Ok((make_jump_gop(&specs, n, g.gop_id, &mut rng)?, "jump"))
            } else {
                Ok((g, "normal"))
            }
        })
        .collect()
}

pub fn cmd_jitter(cfg: &ExperimentConfig) -> Result<Report> {
    let state = load_model(&cfg.checkpoint_path())?;
    let video = jitter_gops(cfg)?;
    let gops: Vec<Gop> = video.iter().map(|(g, _)| g.clone()).collect();
    let channel = ChannelConfig::new(cfg.eval.snr_db, cfg.seed)?;
    let report = evaluate_gops(&gops, &state, &Budget::global(cfg.eval.cbr), &channel, cfg.policy()?)?;
    let mut t = Table::new(&["gop", "kind", "symbols", "cbr", "psnr_db", "ms_ssim", "ms_ssim_db"]);
    for (rec, (_, kind)) in report.per_gop.iter().zip(&video) {
        t.push(vec![
            rec.gop_id.to_string(),
            kind.to_string(),
            rec.cbr.symbol_count.to_string(),
            num(rec.cbr.cbr),
            num(rec.quality.psnr_db),
            num(rec.quality.ms_ssim),
            num(rec.quality.ms_ssim_db),
        ]);
    }
    let mut s = Table::new(&["gops", "cbr_mean", "cbr_variance", "psnr_mean", "psnr_variance", "all_finite"]);
    let finite = report.per_gop.iter().all(|g| g.quality.is_finite());
    s.push(vec![
        report.per_gop.len().to_string(),
        num(report.cbr_mean),
        num(report.cbr_variance),
        num(report.psnr_mean),
        num(report.psnr_variance),
        finite.to_string(),
    ]);
    let points = t.floats("gop").into_iter().zip(t.floats("psnr_db")).collect();
    plot(cfg, "jitter", "per-GOP quality", "GOP", "PSNR (dB)", vec![Series { label: "psnr".into(), points }])?;
    Ok(Report {
        tables: vec![write(cfg, "jitter", t)?, write(cfg, "jitter_summary", s)?],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn knee_is_the_first_drop_past_one_db() {
        assert_eq!(knee(&[20.0, 19.5, 18.9, 15.0]), Some(2));
        assert_eq!(knee(&[20.0, 19.5]), None);
        assert_eq!(knee(&[]), None);
    }

    #[test]
    fn jump_gops_are_interleaved() {
        let cfg = ExperimentConfig::load(None, &["eval.jitter_gops=6".into(), "eval.jump_every=3".into()]).unwrap();
        let v = jitter_gops(&cfg).unwrap();
        let kinds: Vec<&str> = v.iter().map(|(_, k)| *k).collect();
        assert_eq!(kinds, ["normal", "normal", "jump", "normal", "normal", "jump"]);
        assert!(v.iter().enumerate().all(|(i, (g, _))| g.gop_id == i as u32 && g.len() == 4));
    }
}
