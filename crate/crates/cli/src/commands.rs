use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde_json::json;

use crossing_core::config::{Precision, RunConfig};
use crossing_core::eval::{evaluate, EvalReport};
use crossing_core::qnet::checkpoint::{self, CheckpointMeta};
use crossing_core::qnet::QNetwork;
use crossing_core::scalar::Scalar;
use crossing_core::trace::{AgentStep, TraceRow, TraceWriter};
use crossing_core::trainer::{run_episode, train as train_agent, EvalRow, GreedyPolicy, TrafficEnv, TrainEvent, TrainSetup};

use crate::Common;

pub const LOG_HEADER: &str =
    "episode,mode,success_rate,collision_rate,timeout_rate,ctr,avg_reward,epsilon,loss_moving_avg";

fn resolve(common: &Common, config: Option<&Path>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(config, &common.overrides)?;
    if let Some(seed) = common.seed {
        cfg.run.seed = seed;
    }
    Ok(cfg)
}

fn env_for(cfg: &RunConfig) -> TrafficEnv {
    TrafficEnv::new(cfg.sim.clone(), cfg.controller.clone(), cfg.reward.clone())
}

fn log_row(mode: &str, row: &EvalRow) -> String {
    let r = &row.report;
    format!(
        "{},{},{},{},{},{},{},{},{}",
        row.episode,
        mode,
        r.success_rate,
        r.collision_rate,
        r.timeout_rate,
        r.ctr,
        r.avg_reward,
        row.epsilon,
        row.loss_moving_avg
    )
}

/// Train under `cfg` into `out_dir`; returns the evaluation log.
fn run_training(cfg: &RunConfig, out_dir: &Path) -> Result<Vec<EvalRow>> {
    fs::create_dir_all(out_dir.join("checkpoints")).with_context(|| format!("creating {}", out_dir.display()))?;
    fs::write(out_dir.join("config.toml"), cfg.to_toml())?;
    fs::write(
        out_dir.join("version.txt"),
        format!(
            "crossing {}\nconfig_hash {}\nseed {}\nprecision {:?}\n",
            env!("CARGO_PKG_VERSION"),
            cfg.hash(),
            cfg.run.seed,
            cfg.network.precision
        ),
    )?;
    match cfg.network.precision {
        Precision::F32 => train_typed::<f32>(cfg, out_dir),
        Precision::F64 => train_typed::<f64>(cfg, out_dir),
    }
}

fn train_typed<T: Scalar>(cfg: &RunConfig, out_dir: &Path) -> Result<Vec<EvalRow>> {
    let mode = cfg.trainer.mode_name();
    let mut log = BufWriter::new(File::create(out_dir.join("train_log.csv"))?);
    writeln!(log, "{LOG_HEADER}")?;
    let mut episodes = BufWriter::new(File::create(out_dir.join("episodes.csv"))?);
    writeln!(episodes, "episode,seed,steps,status,total_reward,discounted_return,epsilon")?;
    let setup = TrainSetup {
        trainer: cfg.trainer.clone(),
        optimizer: cfg.optimizer.clone(),
        shape: cfg.network_shape(),
        dropout_keep: cfg.network.dropout_keep,
        eval_interval: cfg.eval.interval,
        eval_episodes: cfg.eval.episodes,
        seed: cfg.run.seed,
    };
    let hash = cfg.hash();
    let save = |net: &QNetwork<T>, episode: usize, path: PathBuf| -> std::io::Result<()> {
        let meta = CheckpointMeta { config_hash: hash.clone(), episode: episode as u64 };
        fs::write(path, checkpoint::encode(net, &meta))
    };
    let mut io_error: Option<std::io::Error> = None;
    let mut env = env_for(cfg);
    let result = {
        let mut observer = |event: TrainEvent<'_, T>| {
            let r = match event {
                TrainEvent::Episode(s) => writeln!(
                    episodes,
                    "{},{},{},{},{},{},{}",
                    s.episode, s.seed, s.steps, s.status, s.total_reward, s.discounted_return, s.epsilon
                ),
                TrainEvent::Eval { row, network } => {
                    eprintln!(
                        "[{}] episode {:>6}  success {:.3}  collision {:.3}  timeout {:.3}  eps {:.3}  loss {:.5}",
                        cfg.run.name,
                        row.episode,
                        row.report.success_rate,
                        row.report.collision_rate,
                        row.report.timeout_rate,
                        row.epsilon,
                        row.loss_moving_avg
                    );
                    writeln!(log, "{}", log_row(mode, row))
                        .and_then(|_| log.flush())
                        .and_then(|_| episodes.flush())
                        .and_then(|_| {
                            save(network, row.episode, out_dir.join(format!("checkpoints/episode_{:06}.ckpt", row.episode)))
                        })
                }
                TrainEvent::Diverged { episode, network } => {
                    save(network, episode, out_dir.join("checkpoints/diverged.ckpt"))
                }
            };
            if let Err(e) = r {
                io_error.get_or_insert(e);
            }
        };
        train_agent::<T, _>(&mut env, &setup, &mut observer)
    };
    log.flush()?;
    episodes.flush()?;
    if let Some(e) = io_error {
        return Err(e).context("writing training outputs");
    }
    let out = result.map_err(|e| anyhow!("{e} (last parameters saved to checkpoints/diverged.ckpt)"))?;
    save(&out.network, cfg.trainer.episodes, out_dir.join("final.ckpt"))?;
    Ok(out.log)
}

pub fn train(common: &Common, out_dir: &Path) -> Result<()> {
    let cfg = resolve(common, common.config.as_deref())?;
    let log = run_training(&cfg, out_dir)?;
    if let Some(last) = log.last() {
        println!(
            "{}: {} episodes, final success rate {:.3}, collision rate {:.3}",
            cfg.run.name, last.episode, last.report.success_rate, last.report.collision_rate
        );
    }
    println!("outputs in {}", out_dir.display());
    Ok(())
}

/// The four paired ablations. The baseline run is shared by every pair.
pub const ABLATIONS: [(&str, &str, &str); 4] = [
    ("replay", "replay_off", "trainer.use_replay=false"),
    ("dropout", "dropout_off", "trainer.use_dropout=false"),
    ("lstm", "lstm_off", "trainer.use_lstm=false"),
    ("shared", "unshared", "trainer.share_weights=false"),
];

pub fn ablate(common: &Common, out_dir: &Path) -> Result<()> {
    let base = resolve(common, common.config.as_deref())?;
    fs::create_dir_all(out_dir.join("logs"))?;
    let mut variants = vec![("baseline".to_string(), base.clone())];
    for (_, name, ov) in ABLATIONS {
        let mut overrides = common.overrides.clone();
        overrides.push(ov.to_string());
        let mut cfg = RunConfig::load(common.config.as_deref(), &overrides)?;
        cfg.run.seed = base.run.seed;
        cfg.run.name = name.to_string();
        variants.push((name.to_string(), cfg));
    }
    let mut failures = Vec::new();
    for (name, cfg) in &variants {
        if let Err(e) = run_training(cfg, &out_dir.join(name)) {
            eprintln!("variant {name} failed: {e:#}");
            failures.push(name.clone());
        }
    }

    let mut combined = String::from("pair,setting,variant,");
    combined.push_str(LOG_HEADER);
    combined.push('\n');
    for (pair, off, _) in ABLATIONS {
        for (setting, variant) in [("on", "baseline"), ("off", off)] {
            let src = out_dir.join(variant).join("train_log.csv");
            let Ok(text) = fs::read_to_string(&src) else { continue };
            fs::write(out_dir.join("logs").join(format!("{pair}_{setting}.csv")), &text)?;
            for line in text.lines().skip(1) {
                combined.push_str(&format!("{pair},{setting},{variant},{line}\n"));
            }
        }
    }
    fs::write(out_dir.join("ablation.csv"), combined)?;
    if !failures.is_empty() {
        bail!("variants failed: {}", failures.join(", "));
    }
    println!("ablation outputs in {}", out_dir.display());
    Ok(())
}

/// Config for a checkpoint: `--config` if given, else the `config.toml` of the
/// run directory the checkpoint lives in, else defaults.
fn config_for_checkpoint(common: &Common, ckpt: &Path) -> Result<RunConfig> {
    let found = common.config.clone().or_else(|| {
        ckpt.ancestors().skip(1).take(2).map(|d| d.join("config.toml")).find(|p| p.is_file())
    });
    resolve(common, found.as_deref())
}

enum LoadedNet {
    F32(QNetwork<f32>),
    F64(QNetwork<f64>),
}

fn load_checkpoint(path: &Path, cfg: &RunConfig) -> Result<(LoadedNet, String)> {
    let bytes = fs::read(path).with_context(|| format!("cannot read checkpoint {}", path.display()))?;
    let info = checkpoint::inspect(&bytes).with_context(|| format!("checkpoint {} rejected", path.display()))?;
    let expected = cfg.hash();
    if info.meta.config_hash != expected {
        bail!(
            "checkpoint {} was trained under config hash {}, but the current config hashes to {}; \
             pass the run's config with --config",
            path.display(),
            info.meta.config_hash,
            expected
        );
    }
    let net = match info.dtype.as_str() {
        "f32" => LoadedNet::F32(checkpoint::decode::<f32>(&bytes)?.0),
        _ => LoadedNet::F64(checkpoint::decode::<f64>(&bytes)?.0),
    };
    Ok((net, info.sha256))
}

pub fn eval(common: &Common, ckpt: &Path, episodes: Option<usize>, out_dir: Option<&Path>) -> Result<()> {
    let cfg = config_for_checkpoint(common, ckpt)?;
    let (net, hash) = load_checkpoint(ckpt, &cfg)?;
    let n = episodes.unwrap_or(cfg.eval.episodes);
    let mut env = env_for(&cfg);
    let seed = cfg.run.seed;
    let report: EvalReport = match &net {
        LoadedNet::F32(n32) => evaluate(n32, &mut env, n, seed)?,
        LoadedNet::F64(n64) => evaluate(n64, &mut env, n, seed)?,
    };
    let doc = json!({
        "counts": {
            "episodes": report.n_episodes,
            "successes": report.successes,
            "collisions": report.collisions,
            "timeouts": report.timeouts,
        },
        "rates": {
            "success": report.success_rate,
            "collision": report.collision_rate,
            "timeout": report.timeout_rate,
        },
        "ctr": report.ctr,
        "avg_reward": report.avg_reward,
        "seed": seed,
        "checkpoint_hash": hash,
    });
    let text = serde_json::to_string_pretty(&doc)? + "\n";
    match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            fs::write(dir.join("eval.json"), &text)?;
            println!("success rate {:.4}, collision rate {:.4}", report.success_rate, report.collision_rate);
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn rollout_typed<T: Scalar>(net: &QNetwork<T>, cfg: &RunConfig, trace: &Path) -> Result<()> {
    let mut env = env_for(cfg);
    let seed = cfg.run.seed;
    let mut writer = TraceWriter::new(BufWriter::new(File::create(trace)?), true)?;
    let mut err = None;
    let rec = {
        let mut hook = |view: crossing_core::trainer::StepView<'_, TrafficEnv>| {
            let outcome = view.env.outcome().expect("environment was reset");
            let cmd = view.env.last_command().expect("a step was taken");
            let agent = AgentStep {
                action: view.action,
                valid: view.step.valid,
                request: cmd.request,
                p_term: cmd.p_term,
                sliding_term: cmd.sliding_term,
                reward: view.step.reward,
                q_values: view.q_values.map(<[f64]>::to_vec).unwrap_or_default(),
            };
            if let Err(e) = writer.write(&TraceRow::from_outcome(&outcome, Some(agent))) {
                err.get_or_insert(e);
            }
        };
        run_episode(&mut env, &mut GreedyPolicy::new(net), seed, Some(&mut hook))?
    };
    if let Some(e) = err {
        return Err(e.into());
    }
    writer.finish()?.flush()?;
    println!(
        "seed {seed}: {} after {} steps, return {}",
        rec.status,
        rec.len(),
        rec.rewards.iter().sum::<f64>()
    );
    Ok(())
}

pub fn rollout(common: &Common, ckpt: &Path, trace: &Path) -> Result<()> {
    let cfg = config_for_checkpoint(common, ckpt)?;
    let (net, _) = load_checkpoint(ckpt, &cfg)?;
    if let Some(dir) = trace.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    match &net {
        LoadedNet::F32(n) => rollout_typed(n, &cfg, trace),
        LoadedNet::F64(n) => rollout_typed(n, &cfg, trace),
    }
}

pub fn inspect(ckpt: &Path, as_json: bool) -> Result<()> {
    let bytes = fs::read(ckpt).with_context(|| format!("cannot read checkpoint {}", ckpt.display()))?;
    let info = checkpoint::inspect(&bytes).with_context(|| format!("checkpoint {} rejected", ckpt.display()))?;
    if as_json {
        let tensors: Vec<_> = info
            .tensors
            .iter()
            .map(|t| json!({"name": t.name, "rows": t.rows, "cols": t.cols, "l2_norm": t.l2_norm}))
            .collect();
        let doc = json!({
            "version": info.version,
            "dtype": info.dtype,
            "config_hash": info.meta.config_hash,
            "episode": info.meta.episode,
            "shape": info.shape,
            "tensors": tensors,
            "sha256": info.sha256,
        });
        println!("{}", serde_json::to_string_pretty(&doc)?);
        return Ok(());
    }
    let s = &info.shape;
    println!("checkpoint   {}", ckpt.display());
    println!("format       v{} ({})", info.version, info.dtype);
    println!("sha256       {}", info.sha256);
    println!("config hash  {}", info.meta.config_hash);
    println!("episode      {}", info.meta.episode);
    println!(
        "network      {:?}, {} encoders, widths {}/{}/{}/{}/{}, {} actions",
        s.recurrent,
        if s.shared { "shared" } else { "per-slot" },
        s.h1,
        s.h2,
        s.h_ego,
        s.h3,
        s.h4,
        s.n_actions
    );
    let total: usize = info.tensors.iter().map(|t| t.rows * t.cols).sum();
    println!("parameters   {total}");
    for t in &info.tensors {
        println!("  {:<18} {:>4} x {:<4} |w| = {:.6}", t.name, t.rows, t.cols, t.l2_norm);
    }
    Ok(())
}
