use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ppn_core::checkpoint::Checkpoint;
use ppn_core::config::RunConfig;
use ppn_core::exec::{mean_std, EvalConfig, ExecMode};
use ppn_core::metrics::{self, MetricsRow, COLUMNS};
use ppn_core::model::PPNParams;
use ppn_core::par::{self, Parallelism};
use ppn_core::trainer::{evaluate, Trainer};
use ppn_core::Error;
use sha2::{Digest, Sha256};

use crate::svg;
use crate::{Command, EvalFlags, RunFlags};

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::UnknownEnv { .. } | Error::Argument(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

type Result<T> = std::result::Result<T, Failure>;

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

pub fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train { run, seed, out, quiet } => cmd_train(&run, seed, &out, quiet),
        Command::Eval {
            checkpoint,
            mode,
            depth,
            eval,
            seed,
        } => cmd_eval(&checkpoint, &mode, depth, &eval, seed),
        Command::SweepDepth {
            run,
            depths,
            seeds,
            eval,
            out,
        } => cmd_sweep_depth(&run, &depths, &seeds, &eval, &out),
        Command::AblateTransition {
            checkpoint,
            depth,
            seeds,
            eval,
            out,
        } => cmd_ablate_transition(&checkpoint, depth, &seeds, &eval, &out),
        Command::AblateClipping { run, seeds, eval, out } => cmd_ablate_clipping(&run, &seeds, &eval, &out),
        Command::Plot {
            runs,
            metric,
            out,
            label,
        } => cmd_plot(&runs, &metric, &out, &label),
    }
}

/// Default < config file < `--set` < named flags.
pub fn resolve_config(run: &RunFlags, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match &run.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?;
            RunConfig::from_text(&text)?
        }
        None => RunConfig::default(),
    };
    for kv in &run.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(env) = &run.env {
        cfg.env = env.clone();
    }
    if let Some(d) = run.depth {
        cfg = cfg.with_depth(d);
    }
    if let Some(d) = run.d_pi {
        cfg.d_pi = d;
    }
    if let Some(d) = run.d_v {
        cfg.d_v = d;
    }
    if let Some(d) = run.d_r {
        cfg.d_r = d;
    }
    if let Some(s) = &run.clip_scheme {
        cfg.clip_scheme = s.parse()?;
    }
    if run.ppo2 {
        cfg = cfg.ppo2();
    }
    if let Some(s) = run.steps {
        cfg.total_steps = s;
    }
    if run.wall_clock {
        cfg.wall_clock = true;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn eval_sigma(eval: &EvalFlags, cfg: Option<&RunConfig>, act: usize) -> Vec<f64> {
    let s = eval.sigma.or(cfg.map(|c| c.sigma_end)).unwrap_or(0.1);
    vec![s; act]
}

fn policy_label(eval: &EvalFlags, sigma: &[f64]) -> String {
    if eval.deterministic_eval {
        "policy=mean (deterministic evaluation)".into()
    } else {
        format!("policy=sampled sigma={}", sigma[0])
    }
}

/// Outcome of one training run plus its final evaluation.
struct RunResult {
    dir: PathBuf,
    metrics: Vec<MetricsRow>,
    final_eval: f64,
    diverged: Option<String>,
}

fn train_and_eval(cfg: &RunConfig, dir: &Path, eval: &EvalFlags, progress: bool) -> Result<RunResult> {
    let trainer = Trainer::new(cfg.clone())?;
    let iterations = cfg.iterations();
    let outcome = trainer.run(Some(dir), |row| {
        if progress {
            println!(
                "iter {}/{} steps={} mean_return={:.3} loss_pi={:.4} loss_v={:.4} loss_r={:.4} sigma={:.3}",
                row.iteration,
                iterations,
                row.total_steps,
                row.mean_return,
                row.loss_pi,
                row.loss_v,
                row.loss_r,
                row.sigma_mean
            );
        }
    });
    match outcome {
        Ok(out) => {
            let sigma = eval_sigma(eval, Some(cfg), out.params.dims().act);
            let stats = final_eval(&out.params, cfg, &sigma, eval)?;
            Ok(RunResult {
                dir: dir.to_path_buf(),
                metrics: out.metrics,
                final_eval: stats,
                diverged: None,
            })
        }
        Err(e @ Error::Diverged { .. }) => {
            let metrics = metrics::read_csv(&dir.join("metrics.csv")).unwrap_or_default();
            Ok(RunResult {
                dir: dir.to_path_buf(),
                metrics,
                final_eval: f64::NAN,
                diverged: Some(e.to_string()),
            })
        }
        Err(e) => Err(e.into()),
    }
}

fn final_eval(params: &PPNParams, cfg: &RunConfig, sigma: &[f64], eval: &EvalFlags) -> Result<f64> {
    let ec = EvalConfig {
        mode: ExecMode::ModelFree,
        horizon: 1,
        episodes: eval.episodes,
        stochastic: !eval.deterministic_eval,
        seed: cfg.seed,
    };
    Ok(evaluate(params, &cfg.env, sigma, &ec, Parallelism::default())?.mean)
}

fn cmd_train(run: &RunFlags, seed: Option<u64>, out: &Path, quiet: bool) -> Result<()> {
    let cfg = resolve_config(run, seed)?;
    let eval = EvalFlags {
        episodes: 20,
        deterministic_eval: false,
        sigma: None,
    };
    let r = train_and_eval(&cfg, out, &eval, !quiet)?;
    if let Some(msg) = r.diverged {
        return Err(Failure::Runtime(msg));
    }
    let last = r.metrics.last().copied().unwrap_or_default();
    println!(
        "final: env={} seed={} iterations={} total_steps={} train_return={:.3} eval_return={:.3} out={}",
        cfg.env,
        cfg.seed,
        last.iteration,
        last.total_steps,
        last.mean_return,
        r.final_eval,
        out.display()
    );
    Ok(())
}

/// `<run>/checkpoints/x.ckpt` → `<run>/config.snapshot`, if present.
fn sibling_config(checkpoint: &Path) -> Option<RunConfig> {
    let run = checkpoint.parent()?.parent()?;
    let text = std::fs::read_to_string(run.join("config.snapshot")).ok()?;
    RunConfig::from_text(&text).ok()
}

fn sha256_hex(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
    let digest = Sha256::digest(&bytes);
    let mut s = String::with_capacity(64);
    for b in digest {
        let _ = write!(s, "{b:02x}");
    }
    Ok(s)
}

fn cmd_eval(checkpoint: &Path, mode: &str, depth: usize, eval: &EvalFlags, seed: u64) -> Result<()> {
    let mode: ExecMode = mode.parse()?;
    let ck = Checkpoint::load(checkpoint)?;
    let cfg = sibling_config(checkpoint);
    let sigma = eval_sigma(eval, cfg.as_ref(), ck.params.dims().act);
    let ec = EvalConfig {
        mode,
        horizon: depth,
        episodes: eval.episodes,
        stochastic: !eval.deterministic_eval,
        seed,
    };
    let stats = evaluate(&ck.params, &ck.env, &sigma, &ec, Parallelism::default())?;
    println!(
        "env={} mode={mode} depth={depth} episodes={} {} mean_return={:.4} std_return={:.4}",
        ck.env,
        eval.episodes,
        policy_label(eval, &sigma),
        stats.mean,
        stats.std
    );
    Ok(())
}

fn sample_std(xs: &[f64]) -> f64 {
    let v: Vec<f64> = xs.iter().copied().filter(|x| x.is_finite()).collect();
    if v.len() < 2 {
        return 0.0;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

fn finite_mean(xs: &[f64]) -> f64 {
    let v: Vec<f64> = xs.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn curve(label: &str, runs: &[&RunResult], column: &str) -> svg::Series {
    let col = COLUMNS.iter().position(|c| *c == column).unwrap_or(3);
    let len = runs.iter().map(|r| r.metrics.len()).max().unwrap_or(0);
    let longest = runs.iter().find(|r| r.metrics.len() == len);
    let x: Vec<f64> = longest
        .map(|r| r.metrics.iter().map(|m| m.total_steps as f64).collect())
        .unwrap_or_default();
    let ys: Vec<Vec<f64>> = runs.iter().map(|r| r.metrics.iter().map(|m| column_value(m, col)).collect()).collect();
    svg::aggregate(label, x, &ys)
}

fn column_value(m: &MetricsRow, col: usize) -> f64 {
    let line = m.to_csv();
    line.split(',').nth(col).and_then(|v| v.parse().ok()).unwrap_or(f64::NAN)
}

/// Trains `jobs` (label, config, dir) in parallel and prints one line per run.
fn train_many(jobs: Vec<(String, RunConfig, PathBuf)>, eval: &EvalFlags) -> Result<Vec<(String, RunConfig, RunResult)>> {
    let results = par::map(Parallelism::default(), jobs, |(label, cfg, dir)| {
        let r = train_and_eval(&cfg, &dir, eval, false);
        if let Ok(r) = &r {
            match &r.diverged {
                None => println!("done: {label} seed={} eval_return={:.3} dir={}", cfg.seed, r.final_eval, r.dir.display()),
                Some(m) => println!("diverged: {label} seed={} ({m})", cfg.seed),
            }
        }
        r.map(|r| (label, cfg, r))
    });
    results.into_iter().collect()
}

fn cmd_sweep_depth(run: &RunFlags, depths: &[usize], seeds: &[u64], eval: &EvalFlags, out: &Path) -> Result<()> {
    if depths.is_empty() || seeds.is_empty() {
        return Err(Failure::Usage("depth and seed lists must be non-empty".into()));
    }
    let mut jobs = Vec::new();
    for &d in depths {
        for &s in seeds {
            let mut flags = run.clone();
            flags.depth = Some(d);
            let cfg = resolve_config(&flags, Some(s))?;
            jobs.push((format!("d={d}"), cfg, out.join(format!("d{d}/seed{s}"))));
        }
    }
    let results = train_many(jobs, eval)?;
    let mut csv = String::from("depth,seed,final_eval_return,last_train_return,diverged\n");
    let mut table = String::from("depth,mean_final_return,std_final_return,seeds\n");
    let mut series = Vec::new();
    println!("{:>6} {:>14} {:>12}", "depth", "mean_return", "std");
    for &d in depths {
        let runs: Vec<&(String, RunConfig, RunResult)> = results.iter().filter(|(_, c, _)| c.depth == d).collect();
        let finals: Vec<f64> = runs.iter().map(|(_, _, r)| r.final_eval).collect();
        for (_, c, r) in &runs {
            let last = r.metrics.last().map_or(f64::NAN, |m| m.mean_return);
            let _ = writeln!(csv, "{d},{},{},{},{}", c.seed, r.final_eval, last, r.diverged.is_some());
        }
        let (m, s) = (finite_mean(&finals), sample_std(&finals));
        let _ = writeln!(table, "{d},{m},{s},{}", finals.len());
        println!("{d:>6} {m:>14.3} {s:>12.3}");
        let rr: Vec<&RunResult> = runs.iter().map(|(_, _, r)| r).collect();
        series.push(curve(&format!("d = {d}"), &rr, "mean_return"));
    }
    write_file(&out.join("runs.csv"), &csv)?;
    write_file(&out.join("summary.csv"), &table)?;
    let env = results.first().map(|(_, c, _)| c.env.clone()).unwrap_or_default();
    write_file(
        &out.join("learning_curves.svg"),
        &svg::line_chart(&format!("{env}: return by depth"), "environment steps", "mean episode return", &series),
    )?;
    Ok(())
}

fn cmd_ablate_transition(checkpoint: &Path, depth: usize, seeds: &[u64], eval: &EvalFlags, out: &Path) -> Result<()> {
    if seeds.is_empty() {
        return Err(Failure::Usage("seed list must be non-empty".into()));
    }
    let ck = Checkpoint::load(checkpoint)?;
    let cfg = sibling_config(checkpoint);
    let sigma = eval_sigma(eval, cfg.as_ref(), ck.params.dims().act);
    println!("{}", policy_label(eval, &sigma));
    let mut csv = String::from("mode,seed,mean_return,std_return,checkpoint_sha256\n");
    let mut bars = Vec::new();
    let mut summary = String::from("mode,mean_return,std_return\n");
    for mode in ExecMode::ABLATION {
        // re-read per mode so the logged hash is of the bytes actually used
        let hash = sha256_hex(checkpoint)?;
        let params = Checkpoint::load(checkpoint)?.params;
        println!("mode={mode} depth={depth} checkpoint={} sha256={hash}", checkpoint.display());
        let mut means = Vec::new();
        for &seed in seeds {
            let ec = EvalConfig {
                mode,
                horizon: depth,
                episodes: eval.episodes,
                stochastic: !eval.deterministic_eval,
                seed,
            };
            let st = evaluate(&params, &ck.env, &sigma, &ec, Parallelism::default())?;
            let _ = writeln!(csv, "{mode},{seed},{},{},{hash}", st.mean, st.std);
            means.push(st.mean);
        }
        let (m, s) = (finite_mean(&means), sample_std(&means));
        println!("mode={mode} mean_return={m:.4} std_over_seeds={s:.4}");
        let _ = writeln!(summary, "{mode},{m},{s}");
        bars.push((mode.to_string(), m, s));
    }
    write_file(&out.join("ablation.csv"), &csv)?;
    write_file(&out.join("summary.csv"), &summary)?;
    write_file(
        &out.join("ablation.svg"),
        &svg::bar_chart(&format!("{}: execution modes, d = {depth}", ck.env), "mean episode return", &bars),
    )?;
    Ok(())
}

pub const CLIP_VARIANTS: [&str; 4] = ["grounded", "ungrounded", "no-vr-clipping", "no-clipping"];

pub fn clip_variant(mut cfg: RunConfig, variant: &str) -> RunConfig {
    use ppn_core::rollout::ClipScheme;
    match variant {
        "grounded" => cfg.clip_scheme = ClipScheme::Grounded,
        "ungrounded" => cfg.clip_scheme = ClipScheme::Ungrounded,
        "no-vr-clipping" => {
            cfg.clip_scheme = ClipScheme::Grounded;
            cfg.clip_value_reward = false;
        }
        _ => {
            cfg.clip_scheme = ClipScheme::Grounded;
            cfg.clip_policy = false;
            cfg.clip_value_reward = false;
        }
    }
    cfg
}

fn cmd_ablate_clipping(run: &RunFlags, seeds: &[u64], eval: &EvalFlags, out: &Path) -> Result<()> {
    if seeds.is_empty() {
        return Err(Failure::Usage("seed list must be non-empty".into()));
    }
    let mut jobs = Vec::new();
    for v in CLIP_VARIANTS {
        for &s in seeds {
            let cfg = clip_variant(resolve_config(run, Some(s))?, v);
            jobs.push((v.to_string(), cfg, out.join(format!("{v}/seed{s}"))));
        }
    }
    let results = train_many(jobs, eval)?;
    let mut csv = String::from("variant,seed,final_eval_return,diverged,loss_pi_variance\n");
    let mut summary = String::from("variant,mean_final_return,std_final_return,diverged_runs\n");
    let mut series = Vec::new();
    println!("{:>16} {:>14} {:>10} {:>9}", "variant", "mean_return", "std", "diverged");
    for v in CLIP_VARIANTS {
        let runs: Vec<&(String, RunConfig, RunResult)> = results.iter().filter(|(l, _, _)| l == v).collect();
        let finals: Vec<f64> = runs.iter().map(|(_, _, r)| r.final_eval).collect();
        let diverged = runs.iter().filter(|(_, _, r)| r.diverged.is_some()).count();
        for (_, c, r) in &runs {
            let losses: Vec<f64> = r.metrics.iter().map(|m| m.loss_pi).collect();
            let var = mean_std(&losses).1.powi(2);
            let _ = writeln!(csv, "{v},{},{},{},{var}", c.seed, r.final_eval, r.diverged.is_some());
        }
        let (m, s) = (finite_mean(&finals), sample_std(&finals));
        let _ = writeln!(summary, "{v},{m},{s},{diverged}");
        println!("{v:>16} {m:>14.3} {s:>10.3} {diverged:>9}");
        let rr: Vec<&RunResult> = runs.iter().map(|(_, _, r)| r).collect();
        series.push(curve(v, &rr, "mean_return"));
    }
    write_file(&out.join("runs.csv"), &csv)?;
    write_file(&out.join("summary.csv"), &summary)?;
    let env = results.first().map(|(_, c, _)| c.env.clone()).unwrap_or_default();
    write_file(
        &out.join("learning_curves.svg"),
        &svg::line_chart(&format!("{env}: clipping variants"), "environment steps", "mean episode return", &series),
    )?;
    Ok(())
}

fn cmd_plot(runs: &[PathBuf], metric_names: &[String], out: &Path, label: &str) -> Result<()> {
    for m in metric_names {
        if !COLUMNS.contains(&m.as_str()) {
            return Err(Failure::Usage(format!("unknown metric `{m}` (columns: {})", COLUMNS.join(", "))));
        }
    }
    let mut loaded = Vec::new();
    for r in runs {
        let path = if r.is_dir() { r.join("metrics.csv") } else { r.clone() };
        let rows = metrics::read_csv(&path).map_err(|e| match e {
            Error::Config(m) => Failure::Runtime(format!("parse error: {m}")),
            other => Failure::Runtime(other.to_string()),
        })?;
        loaded.push(RunResult {
            dir: r.clone(),
            metrics: rows,
            final_eval: f64::NAN,
            diverged: None,
        });
    }
    let refs: Vec<&RunResult> = loaded.iter().collect();
    for m in metric_names {
        let s = curve(label, &refs, m);
        let path = out.join(format!("{m}.svg"));
        write_file(&path, &svg::line_chart(m, "environment steps", m, &[s]))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
