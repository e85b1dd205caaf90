//! Command-line entry points: dataset generation, model fitting and tuning,
//! experiment evaluation and report conversion.

use anyhow::{bail, Context, Result};
use beamcf::codebook::{default_probe_pattern, BeamCodebook, ProbePattern};
use beamcf::dataset::{
    load_dataset, save_dataset, sparsify_with_3dpf, BsSelection, DatasetBuilder,
};
use beamcf::eval::{
    build_family, build_large_split, default_budgets, default_x_grid, emit_report,
    generate_trajectories, load_report_json, pattern_columns, run_experiment, write_report_json,
    ExperimentConfig,
};
use beamcf::recommender;
use beamcf::simulator::{write_trajectories_csv, Scene};
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "beamcf", about = "Collaborative-filtering beam discovery workbench", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct SceneArgs {
    /// Scene JSON file; the built-in four-BS urban scene when omitted.
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Base seed for trajectory generation.
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Generate trajectories and the datasets one experiment consumes.
    Gen {
        #[command(flatten)]
        scene: SceneArgs,
        /// Experiment whose datasets to write (1–4).
        #[arg(long, default_value_t = 1)]
        experiment: u8,
        /// Serving BS (1-based) for the single-BS experiments.
        #[arg(long, default_value_t = 1)]
        bs: usize,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a latent model from a training dataset CSV.
    Fit {
        /// Training dataset CSV (with its .meta.json sidecar).
        #[arg(long)]
        train: PathBuf,
        /// Spectral energy fraction for rank selection.
        #[arg(long, default_value_t = 0.95)]
        energy: f64,
        /// Explicit rank; overrides --energy.
        #[arg(long)]
        k: Option<usize>,
        /// Model artifact path (JSON).
        #[arg(long)]
        out: PathBuf,
    },
    /// Tune the neighbor count X on a CV dataset and store it in the model.
    Tune {
        #[arg(long)]
        model: PathBuf,
        /// CV dataset CSV.
        #[arg(long)]
        cv: PathBuf,
        /// Budgets, e.g. "12:26:2" or "12,16,20".
        #[arg(long)]
        budgets: Option<String>,
        /// Candidate X values, comma-separated.
        #[arg(long)]
        x_grid: Option<String>,
        /// Where to write the tuned model; defaults to --model.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one experiment end to end and write report.json / report.csv.
    Eval {
        #[command(flatten)]
        scene: SceneArgs,
        /// Experiment id (1–4).
        #[arg(long)]
        experiment: u8,
        /// Serving BS (1-based) for the single-BS experiments.
        #[arg(long, default_value_t = 1)]
        bs: usize,
        /// Budgets override, e.g. "12:26:2".
        #[arg(long)]
        budgets: Option<String>,
        /// X-grid override, comma-separated.
        #[arg(long)]
        x_grid: Option<String>,
        /// Spectral energy fraction for rank selection.
        #[arg(long, default_value_t = 0.95)]
        energy: f64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert a report.json into the plot-ready CSV.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_budgets(spec: &str) -> Result<Vec<usize>> {
    if let Some((rest, step)) = spec.rsplit_once(':').and_then(|(head, step)| {
        head.split_once(':').map(|(a, b)| ((a.to_string(), b.to_string()), step.to_string()))
    }) {
        let (a, b) = rest;
        let (start, end, step): (usize, usize, usize) = (a.parse()?, b.parse()?, step.parse()?);
        if step == 0 || end < start {
            bail!("budget range {spec} is empty");
        }
        return Ok((start..=end).step_by(step).collect());
    }
    spec.split(',')
        .map(|v| v.trim().parse::<usize>().map_err(Into::into))
        .collect()
}

fn parse_list(spec: &str) -> Result<Vec<usize>> {
    spec.split(',').map(|v| v.trim().parse::<usize>().map_err(Into::into)).collect()
}

fn load_scene(args: &SceneArgs) -> Result<Scene> {
    match &args.scene {
        Some(path) => Scene::from_json_file(path).with_context(|| format!("loading scene {}", path.display())),
        None => Ok(Scene::paper_default()),
    }
}

fn dataset_pattern(ds_bs: BsSelection, pattern: &ProbePattern) -> Vec<usize> {
    pattern_columns(pattern, ds_bs)
}

fn cmd_gen(scene_args: SceneArgs, experiment: u8, bs: usize, out: PathBuf) -> Result<()> {
    let scene = load_scene(&scene_args)?;
    std::fs::create_dir_all(&out)?;
    scene.to_json_file(&out.join("scene.json"))?;
    let codebook = BeamCodebook::default();
    let trajectories = generate_trajectories(&scene, scene_args.seed)?;
    write_trajectories_csv(&out.join("trajectories.csv"), &trajectories)?;
    let builder = DatasetBuilder { scene: &scene, codebook: &codebook, trajectories: &trajectories };

    fn save(ds: &beamcf::dataset::LabeledDataset, dir: &Path, name: &str) -> Result<()> {
        let path = dir.join(name);
        save_dataset(ds, &path).with_context(|| format!("writing {}", path.display()))
    }

    match experiment {
        1 | 2 | 3 => {
            let sel = if experiment == 2 { BsSelection::All } else { BsSelection::Single(bs - 1) };
            let family = build_family(&builder, sel)?;
            save(&family.train_small, &out, "train_small.csv")?;
            save(&family.train_large, &out, "train_large.csv")?;
            save(&family.cv, &out, "cv.csv")?;
            save(&family.test, &out, "test.csv")?;
            if experiment == 3 {
                for variant in 1..=3 {
                    let s = sparsify_with_3dpf(&family.train_small, &family.raw_train_small, variant, &codebook)?;
                    save(&s, &out, &format!("train_small_3dpf{variant}.csv"))?;
                    let l = sparsify_with_3dpf(&family.train_large, &family.raw_train_large, variant, &codebook)?;
                    save(&l, &out, &format!("train_large_3dpf{variant}.csv"))?;
                }
            }
        }
        4 => {
            let split = build_large_split(&builder, BsSelection::Single(bs - 1))?;
            save(&split.train, &out, "train_full.csv")?;
            save(&split.cv, &out, "cv_full.csv")?;
            save(&split.test, &out, "test.csv")?;
            for variant in 1..=3 {
                let t = sparsify_with_3dpf(&split.train, &split.raw_train, variant, &codebook)?;
                save(&t, &out, &format!("train_3dpf{variant}.csv"))?;
                let c = sparsify_with_3dpf(&split.cv, &split.raw_cv, variant, &codebook)?;
                save(&c, &out, &format!("cv_3dpf{variant}.csv"))?;
            }
        }
        other => bail!("experiment id {other} not in 1..=4"),
    }
    println!("datasets written to {}", out.display());
    Ok(())
}

fn cmd_fit(train: PathBuf, energy: f64, k: Option<usize>, out: PathBuf) -> Result<()> {
    let ds = load_dataset(&train).with_context(|| format!("loading {}", train.display()))?;
    let codebook = BeamCodebook::default();
    let digest = codebook.digest(&default_probe_pattern());
    let model = match k {
        Some(k) => recommender::fit(&ds.ratings, k, ds.norm, digest)?,
        None => recommender::fit_with_energy(&ds.ratings, energy, ds.norm, digest)?.0,
    };
    recommender::save_model(&model, &out)?;
    println!("model fitted: rank {} over {} training rows -> {}", model.k, ds.len(), out.display());
    Ok(())
}

fn cmd_tune(model_path: PathBuf, cv: PathBuf, budgets: Option<String>, x_grid: Option<String>, out: Option<PathBuf>) -> Result<()> {
    let model = recommender::load_model(&model_path)?;
    let cv_ds = load_dataset(&cv).with_context(|| format!("loading {}", cv.display()))?;
    let budgets = match budgets {
        Some(s) => parse_budgets(&s)?,
        None => default_budgets(if cv_ds.ratings.n_beams() > 60 { 2 } else { 1 }),
    };
    let x_grid = match x_grid {
        Some(s) => parse_list(&s)?,
        None => default_x_grid(),
    };
    let pattern_cols = dataset_pattern(cv_ds.bs, &default_probe_pattern());
    let x = recommender::tune_x(&model, &cv_ds, &budgets, &x_grid, &pattern_cols)?;
    let model = model.with_x(x);
    let out = out.unwrap_or(model_path);
    recommender::save_model(&model, &out)?;
    println!("tuned X = {x} -> {}", out.display());
    Ok(())
}

fn cmd_eval(
    scene_args: SceneArgs,
    experiment: u8,
    bs: usize,
    budgets: Option<String>,
    x_grid: Option<String>,
    energy: f64,
    out: PathBuf,
) -> Result<()> {
    let scene = load_scene(&scene_args)?;
    let mut config = ExperimentConfig::new(experiment, scene)?;
    config.bs = bs;
    config.seed = scene_args.seed;
    config.energy_fraction = energy;
    if let Some(s) = budgets {
        config.budgets = parse_budgets(&s)?;
    }
    if let Some(s) = x_grid {
        config.x_grid = parse_list(&s)?;
    }
    std::fs::create_dir_all(&out)?;
    let report = run_experiment(&config)?;
    write_report_json(&report, &out.join("report.json"))?;
    emit_report(&report, &out.join("report.csv"))?;
    for curve in &report.meta.curves {
        println!("curve {}: k={} x={}", curve.label, curve.k, curve.x);
    }
    println!("report written to {}", out.display());
    Ok(())
}

fn cmd_report(input: PathBuf, out: PathBuf) -> Result<()> {
    let report = load_report_json(&input)?;
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    emit_report(&report, Path::new(&out))?;
    println!("csv written to {}", out.display());
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Gen { scene, experiment, bs, out } => cmd_gen(scene, experiment, bs, out),
        Command::Fit { train, energy, k, out } => cmd_fit(train, energy, k, out),
        Command::Tune { model, cv, budgets, x_grid, out } => cmd_tune(model, cv, budgets, x_grid, out),
        Command::Eval { scene, experiment, bs, budgets, x_grid, energy, out } => {
            cmd_eval(scene, experiment, bs, budgets, x_grid, energy, out)
        }
        Command::Report { input, out } => cmd_report(input, out),
    }
}
