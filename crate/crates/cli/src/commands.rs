use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use stpack_core::env::{preference_grid, EnvState};
use stpack_core::eval::{
    pareto_csv, pareto_front, pareto_svg, preference_sweep, run_episode, run_episode_from, run_episodes, spearman,
    table_csv, variability_csv, variability_sweep, write_trace_jsonl, AggregateMetrics, EpisodeMetrics, StepRecord,
};
use stpack_core::items::{read_items_jsonl, write_items_jsonl, ItemStream};
use stpack_core::policies::{baseline_by_name, SelectionPolicy, BASELINES};
use stpack_core::rng::{split, streams};
use stpack_learn::train::IterationStats;
use stpack_learn::{Checkpoint, LearnError, NetPolicy, Network, Trainer};

use crate::config::RunConfig;
use crate::CliError;

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(path).map_err(|e| CliError::io(path, e))?))
}

/// Creates the output directory and echoes the resolved config into it.
fn prepare(cfg: &RunConfig, command: &str) -> Result<PathBuf, CliError> {
    let dir = cfg.out_dir(command);
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let path = dir.join("config.json");
    let mut f = create(&path)?;
    serde_json::to_writer_pretty(&mut f, cfg).map_err(|e| CliError::Config(e.to_string()))?;
    f.write_all(b"\n").map_err(|e| CliError::io(&path, e))?;
    f.flush().map_err(|e| CliError::io(&path, e))?;
    Ok(dir)
}

fn load_network(cfg: &RunConfig) -> Result<Arc<Network>, CliError> {
    let path = cfg.checkpoint.as_ref().ok_or_else(|| CliError::Config("a checkpoint is required".into()))?;
    if !path.exists() {
        return Err(CliError::Config(format!("checkpoint {} does not exist", path.display())));
    }
    let net = Checkpoint::load(path).and_then(|c| c.network()).map_err(|e| CliError::Config(e.to_string()))?;
    let c = net.config();
    if c.n_units != 5 * cfg.buffer {
        return Err(CliError::Config(format!(
            "checkpoint expects a buffer of {} but the config has {}",
            c.n_units / 5,
            cfg.buffer
        )));
    }
    Ok(Arc::new(net))
}

/// A baseline by name, or `learned` for the configured checkpoint.
fn make_policy(name: &str, cfg: &RunConfig) -> Result<Box<dyn SelectionPolicy>, CliError> {
    if name == "learned" {
        return Ok(Box::new(NetPolicy::greedy(load_network(cfg)?)));
    }
    baseline_by_name(name, cfg.face_mask(), None, cfg.mcts).ok_or_else(|| {
        CliError::Config(format!("unknown policy '{name}' (known: {}, learned)", BASELINES.join(", ")))
    })
}

fn write_table(path: &Path, rows: &[(String, AggregateMetrics)]) -> Result<(), CliError> {
    table_csv(rows, create(path)?).map_err(|e| CliError::Config(e.to_string()))
}

fn write_episodes(path: &Path, eps: &[EpisodeMetrics]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let io = |e: csv::Error| CliError::Config(e.to_string());
    w.write_record([
        "seed", "Uti", "Num", "Time", "Top", "Front", "Back", "Left", "Right", "terminal", "ScalarReturn",
    ])
    .map_err(io)?;
    for e in eps {
        let f = e.face_counts;
        let reason = serde_json::to_value(e.terminal_reason).map_err(|e| CliError::Config(e.to_string()))?;
        w.write_record([
            e.seed.to_string(),
            format!("{:.4}", e.uti),
            e.num_items.to_string(),
            format!("{:.4}", e.time),
            f.top.to_string(),
            f.front.to_string(),
            f.back.to_string(),
            f.left.to_string(),
            f.right.to_string(),
            reason.as_str().unwrap_or_default().to_string(),
            format!("{:.6}", e.scalar_return),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn print_summary(name: &str, a: &AggregateMetrics) {
    println!(
        "{name}: uti {:.2} ± {:.2}, items {:.2}, time {:.2} ± {:.2}, top {:.1}%, front {:.1}%, left+right {:.1}%, back {:.1}%",
        a.uti_mean,
        a.uti_std,
        a.num_mean,
        a.time_mean,
        a.time_std,
        a.face_pct.top,
        a.face_pct.front,
        a.left_right_pct,
        a.face_pct.back
    );
}

pub fn simulate(cfg: &RunConfig, trace: bool, export_items: bool) -> Result<(), CliError> {
    let ctx = cfg.context()?;
    let policy = make_policy(&cfg.policy, cfg)?;
    let omega = cfg.preference();
    let dir = prepare(cfg, "simulate")?;
    let env = |e: stpack_core::env::EnvError| CliError::Config(e.to_string());

    let episodes: Vec<EpisodeMetrics> = match &cfg.items {
        Some(path) => {
            let f = File::open(path).map_err(|e| CliError::io(path, e))?;
            let items = read_items_jsonl(BufReader::new(f)).map_err(|e| CliError::Config(e.to_string()))?;
            (0..cfg.episodes as u64)
                .map(|i| {
                    let seed = cfg.seed.wrapping_add(i);
                    let state = EnvState::with_stream(ctx.clone(), ItemStream::replay(items.clone()), omega);
                    run_episode_from(policy.as_ref(), state, seed, None)
                })
                .collect::<Result<_, _>>()
                .map_err(env)?
        }
        None => run_episodes(policy.as_ref(), &ctx, omega, cfg.episodes, cfg.seed).map_err(env)?.episodes,
    };
    let agg = AggregateMetrics::from_episodes(&episodes);
    write_table(&dir.join("metrics.csv"), &[(policy.name().to_string(), agg.clone())])?;
    write_episodes(&dir.join("episodes.csv"), &episodes)?;

    if trace {
        let mut records: Vec<StepRecord> = Vec::new();
        if cfg.items.is_none() {
            run_episode(policy.as_ref(), &ctx, cfg.seed, omega, Some(&mut records)).map_err(env)?;
        }
        let path = dir.join("trace.jsonl");
        write_trace_jsonl(&records, create(&path)?).map_err(|e| CliError::io(&path, e))?;
    }
    if export_items && cfg.items.is_none() {
        // the first episode's arrivals: every placed item plus what is left in the buffer
        let n = episodes[0].num_items as usize + cfg.buffer;
        let mut stream = ItemStream::sampled(ctx.config.stream, split(cfg.seed, streams::ITEMS)).map_err(
            |e| CliError::Config(e.to_string()),
        )?;
        let items: Vec<_> = (0..n).map_while(|_| stream.next_item()).collect();
        let path = dir.join("items.jsonl");
        write_items_jsonl(&items, create(&path)?).map_err(|e| CliError::Config(e.to_string()))?;
    }
    print_summary(policy.name(), &agg);
    println!("wrote {}", dir.display());
    Ok(())
}

pub fn train(cfg: &RunConfig, resume: Option<&Path>) -> Result<(), CliError> {
    let ctx = cfg.context()?;
    let learn = |e: LearnError| CliError::Config(e.to_string());
    let mut trainer = match resume {
        Some(path) => {
            if !path.exists() {
                return Err(CliError::Config(format!("checkpoint {} does not exist", path.display())));
            }
            let ckpt = Checkpoint::load(path).map_err(learn)?;
            let mut t = Trainer::resume(&ckpt, ctx).map_err(learn)?;
            t.config.iterations = cfg.train.iterations;
            t
        }
        None => {
            let net = Network::new(cfg.net_config()).map_err(learn)?;
            Trainer::new(net, ctx, cfg.train.clone()).map_err(learn)?
        }
    };
    let dir = prepare(cfg, "train")?;
    let ckpt_dir = dir.join("checkpoints");
    fs::create_dir_all(&ckpt_dir).map_err(|e| CliError::io(&ckpt_dir, e))?;
    let final_path = dir.join("checkpoint.json");
    let save = |t: &Trainer, path: &Path| t.checkpoint().save(path).map_err(learn);

    let csv_path = dir.join("train.csv");
    let mut w = csv::Writer::from_writer(create(&csv_path)?);
    let csv_err = |e: csv::Error| CliError::Config(e.to_string());
    w.write_record(IterationStats::HEADER).map_err(csv_err)?;
    let target = trainer.config.iterations;
    while trainer.iteration() < target {
        match trainer.train_iteration() {
            Ok(stats) => {
                w.write_record(stats.record()).map_err(csv_err)?;
                w.flush().map_err(|e| CliError::io(&csv_path, e))?;
                let it = trainer.iteration();
                if cfg.checkpoint_every > 0 && it % cfg.checkpoint_every == 0 {
                    save(&trainer, &ckpt_dir.join(format!("iter_{it:06}.json")))?;
                }
                eprintln!(
                    "iteration {it}: scalar return {:.4}, value loss {:.4}, entropy {:.4}",
                    stats.scalar_return, stats.update.value_loss, stats.update.entropy
                );
            }
            Err(e @ LearnError::Aborted { .. }) => {
                save(&trainer, &final_path)?;
                eprintln!("last good checkpoint: {}", final_path.display());
                return Err(CliError::Numerical(e.to_string()));
            }
            Err(e) => return Err(learn(e)),
        }
    }
    save(&trainer, &final_path)?;
    println!("{}", final_path.display());
    Ok(())
}

pub fn pareto(cfg: &RunConfig) -> Result<(), CliError> {
    let ctx = cfg.context()?;
    if cfg.grid < 2 {
        return Err(CliError::Config(format!("preference grid needs at least 2 points, got {}", cfg.grid)));
    }
    let grid = preference_grid(cfg.grid).map_err(|e| CliError::Config(e.to_string()))?;
    let name = if cfg.checkpoint.is_some() { "learned" } else { cfg.policy.as_str() };
    make_policy(name, cfg)?;
    let make = |_| make_policy(name, cfg).expect("checked above");
    let dir = prepare(cfg, "pareto")?;
    let points = preference_sweep(&make, &ctx, &grid, cfg.episodes, cfg.seed)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let front = pareto_front(&points);
    for p in &front {
        let dominated = points.iter().any(|q| {
            q.uti_mean >= p.uti_mean
                && q.time_mean <= p.time_mean
                && (q.uti_mean > p.uti_mean || q.time_mean < p.time_mean)
        });
        assert!(!dominated, "frontier point is dominated");
    }
    pareto_csv(&points, &front, create(&dir.join("pareto.csv"))?).map_err(|e| CliError::Config(e.to_string()))?;
    let svg = dir.join("pareto.svg");
    fs::write(&svg, pareto_svg(&points, &front)).map_err(|e| CliError::io(&svg, e))?;
    let w: Vec<f64> = points.iter().map(|p| p.omega.w_space).collect();
    let u: Vec<f64> = points.iter().map(|p| p.uti_mean).collect();
    println!("{} points, {} on the frontier, spearman(w_space, uti) {:.4}", points.len(), front.len(), spearman(&w, &u));
    println!("wrote {}", dir.display());
    Ok(())
}

pub fn bench(cfg: &RunConfig) -> Result<(), CliError> {
    if cfg.policies.len() < 2 {
        return Err(CliError::Config("bench needs at least two policies".into()));
    }
    let ctx = cfg.context()?;
    let policies: Vec<Box<dyn SelectionPolicy>> =
        cfg.policies.iter().map(|n| make_policy(n, cfg)).collect::<Result<_, _>>()?;
    let dir = prepare(cfg, "bench")?;
    let mut rows = Vec::new();
    let mut timing = serde_json::Map::new();
    for p in &policies {
        let start = Instant::now();
        let r = run_episodes(p.as_ref(), &ctx, cfg.preference(), cfg.episodes, cfg.seed)
            .map_err(|e| CliError::Config(e.to_string()))?;
        let secs = start.elapsed().as_secs_f64();
        let decisions: u64 = r.episodes.iter().map(|e| e.num_items as u64).sum();
        let ms = 1e3 * secs / decisions.max(1) as f64;
        print_summary(p.name(), &r.aggregate);
        println!("{}: {ms:.3} ms per decision", p.name());
        timing.insert(p.name().to_string(), serde_json::json!({ "ms_per_decision": ms, "seconds": secs }));
        rows.push((p.name().to_string(), r.aggregate));
    }
    write_table(&dir.join("table.csv"), &rows)?;
    // wall-clock varies between runs, so it stays out of the CSV
    let path = dir.join("timing.json");
    fs::write(&path, serde_json::to_string_pretty(&timing).expect("plain json") + "\n")
        .map_err(|e| CliError::io(&path, e))?;
    println!("wrote {}", dir.display());
    Ok(())
}

pub fn variability(cfg: &RunConfig) -> Result<(), CliError> {
    let env = cfg.env_config()?;
    if cfg.policies.is_empty() {
        return Err(CliError::Config("no policies given".into()));
    }
    let policies: Vec<Box<dyn SelectionPolicy>> =
        cfg.policies.iter().map(|n| make_policy(n, cfg)).collect::<Result<_, _>>()?;
    let refs: Vec<&dyn SelectionPolicy> = policies.iter().map(|p| p.as_ref()).collect();
    let dir = prepare(cfg, "variability")?;
    let rows = variability_sweep(&refs, &cfg.fractions, &env, cfg.preference(), cfg.episodes, cfg.seed)
        .map_err(|e| CliError::Config(e.to_string()))?;
    variability_csv(&rows, create(&dir.join("variability.csv"))?).map_err(|e| CliError::Config(e.to_string()))?;
    for r in &rows {
        print_summary(&format!("{} @ {:.0}% variable", r.policy, r.fraction), &r.aggregate);
    }
    println!("wrote {}", dir.display());
    Ok(())
}
