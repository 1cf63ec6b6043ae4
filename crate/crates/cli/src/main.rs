//! `artic`: generate synthetic scenes, train, evaluate and aggregate reports.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use artic::check::gradient_suite;
use artic::eval::{aggregate_csv, evaluate, CdConvention, JointReport};
use artic::io::{read_json, read_scene, write_json_file, write_ply, write_scene};
use artic::loss::{pose, MotionMode};
use artic::pipeline::{reconstruct, Checkpoint, Config, SceneInputs};
use artic::synth::{generate, SceneSpec};

#[derive(Parser)]
#[command(name = "artic", version, about = "Articulated object reconstruction from two-state RGB-D views")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Render a synthetic scene directory from a spec and seed.
    Generate {
        /// Built-in scene name or path to a spec JSON file.
        #[arg(long)]
        spec: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a scene directory; writes checkpoint, log and timing.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Independent trials with seeds seed, seed+1, ... (in trial_k/).
        #[arg(long, default_value_t = 1)]
        trials: usize,
    },
    /// Evaluate trained checkpoints against the scene's ground truth.
    Eval {
        #[arg(long)]
        scene_dir: PathBuf,
        /// Training output directory (checkpoint.json or trial_k/ subdirs).
        #[arg(long)]
        out: PathBuf,
        /// Report chamfer distances as mean distance in mm instead of
        /// squared distance x1000.
        #[arg(long)]
        cd_root: bool,
    },
    /// Aggregate every report.json under a directory into a CSV table.
    Report {
        dir: PathBuf,
        /// Output CSV (stdout if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the finite-difference gradient suite.
    Selftest {
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        instances: usize,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    scene_dir: PathBuf,
    /// TOML config with optional [seg] and [train] tables.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's training seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

fn load_spec(arg: &str) -> Result<SceneSpec> {
    if let Some(s) = SceneSpec::builtin(arg) {
        return Ok(s);
    }
    let path = Path::new(arg);
    if !path.exists() {
        bail!(
            "unknown spec '{arg}': not a built-in ({}) and no such file",
            SceneSpec::BUILTIN.join(", ")
        );
    }
    Ok(read_json(path)?)
}

fn trial_dirs(out: &Path) -> Result<Vec<PathBuf>> {
    if out.join("checkpoint.json").exists() {
        return Ok(vec![out.to_path_buf()]);
    }
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(out)
        .with_context(|| format!("reading {}", out.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("checkpoint.json").exists())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        bail!("no checkpoint.json in {} or its subdirectories", out.display());
    }
    Ok(dirs)
}

fn find_reports(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            find_reports(&p, out)?;
        } else if p.file_name().is_some_and(|n| n == "report.json") {
            out.push(p);
        }
    }
    Ok(())
}

fn train_cmd(run: &RunArgs, trials: usize) -> Result<()> {
    let mut cfg = match &run.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = run.seed {
        cfg.train.seed = s;
    }
    let scene = read_scene(&run.scene_dir)?;
    let inputs = SceneInputs {
        frames: [scene.frames(0), scene.frames(1)],
        matches: scene.matches.clone(),
    };
    let base_seed = cfg.train.seed;
    for k in 0..trials.max(1) {
        let dir = if trials > 1 {
            run.out.join(format!("trial_{k}"))
        } else {
            run.out.clone()
        };
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        cfg.train.seed = base_seed + k as u64;
        let t0 = Instant::now();
        let rec = reconstruct(&inputs, &cfg)?;
        let secs = t0.elapsed().as_secs_f64();
        rec.checkpoint.save(&dir.join("checkpoint.json"))?;
        rec.log.write_csv(&dir.join("train_log.csv"))?;
        write_json_file(&dir.join("timing.json"), &serde_json::json!({ "train_seconds": secs }))?;
        std::fs::write(dir.join("config.toml"), cfg.to_toml_string())
            .with_context(|| format!("writing {}", dir.join("config.toml").display()))?;
        for w in &rec.prepared.warnings {
            log::warn!("{w}");
        }
        println!(
            "trial {k}: {} parts, canonical state {}, locked {:?}, {secs:.1}s -> {}",
            rec.prepared.n_parts,
            rec.prepared.canonical,
            rec.log.locked,
            dir.display()
        );
    }
    Ok(())
}

fn eval_cmd(scene_dir: &Path, out: &Path, cd_root: bool) -> Result<()> {
    let scene = read_scene(scene_dir)?;
    let spec = scene
        .spec
        .with_context(|| format!("{} has no spec.json", scene_dir.display()))?;
    let gt = scene
        .gt
        .with_context(|| format!("{} has no gt_joints.json", scene_dir.display()))?;
    let conv = if cd_root {
        CdConvention::RootMm
    } else {
        CdConvention::SquaredX1000
    };
    for dir in trial_dirs(out)? {
        let ck = Checkpoint::load(&dir.join("checkpoint.json"))?;
        let report = evaluate(&ck, &spec, &gt, conv)?;
        write_json_file(&dir.join("report.json"), &report)?;
        std::fs::write(dir.join("metrics.csv"), aggregate_csv(std::slice::from_ref(&report)))
            .with_context(|| format!("writing {}", dir.join("metrics.csv").display()))?;
        let model = &ck.model;
        let assign = model.assignments();
        let canon: Vec<_> = model.primitives.iter().map(|p| p.center).zip(assign.iter().copied()).collect();
        let moved = pose(model, MotionMode::Hard);
        let other: Vec<_> = moved.x.iter().copied().zip(assign.iter().copied()).collect();
        write_ply(&dir.join("parts_canonical.ply"), &canon)?;
        write_ply(&dir.join("parts_transformed.ply"), &other)?;
        println!("{}: {}", dir.display(), summary(&report));
    }
    Ok(())
}

fn summary(r: &JointReport) -> String {
    let typed = r.joints.iter().filter(|j| j.type_correct).count();
    let angles: Vec<f64> = r.joints.iter().filter_map(|j| j.axis_angle_err).collect();
    let mean = if angles.is_empty() {
        f64::NAN
    } else {
        angles.iter().sum::<f64>() / angles.len() as f64
    };
    format!(
        "{typed}/{} joints typed correctly, mean axis angle error {mean:.4} deg, CD-w {:.4}",
        r.joints.len(),
        r.cd_w
    )
}

fn report_cmd(dir: &Path, out: Option<&Path>) -> Result<bool> {
    let mut paths = Vec::new();
    find_reports(dir, &mut paths)?;
    if paths.is_empty() {
        eprintln!("error: no report.json files under {}", dir.display());
        return Ok(false);
    }
    let reports: Vec<JointReport> = paths.iter().map(|p| read_json(p)).collect::<artic::Result<_>>()?;
    let csv = aggregate_csv(&reports);
    match out {
        Some(p) => std::fs::write(p, &csv).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{csv}"),
    }
    Ok(true)
}

fn selftest(seed: u64, n: usize) -> bool {
    let t0 = Instant::now();
    let results = gradient_suite(seed, n);
    let mut ok = true;
    for r in &results {
        println!(
            "{:<12} {} instances, {} components, max rel err {:.2e}: {}",
            r.loss,
            r.instances,
            r.components,
            r.max_rel_err,
            if r.passed { "pass" } else { "FAIL" }
        );
        ok &= r.passed;
    }
    println!("gradient suite {:.2}s", t0.elapsed().as_secs_f64());
    ok
}

fn run(cli: Cli) -> Result<bool> {
    match cli.cmd {
        Cmd::Generate { spec, seed, out } => {
            let spec = load_spec(&spec)?;
            let scene = generate(&spec, seed)?;
            write_scene(&out, &scene)?;
            for w in &scene.matches.warnings {
                log::warn!("{w}");
            }
            println!(
                "{}: {} parts, {}+{} views, {} matches -> {}",
                spec.name,
                spec.n_parts(),
                scene.views[0].len(),
                scene.views[1].len(),
                scene.matches.rows.len(),
                out.display()
            );
            Ok(true)
        }
        Cmd::Train { run, trials } => train_cmd(&run, trials).map(|_| true),
        Cmd::Eval { scene_dir, out, cd_root } => eval_cmd(&scene_dir, &out, cd_root).map(|_| true),
        Cmd::Report { dir, out } => report_cmd(&dir, out.as_deref()),
        Cmd::Selftest { seed, instances } => Ok(selftest(seed, instances)),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
