//! Experiment orchestration: dataset recipes for the four experiments, the
//! relative-performance metric, baseline evaluation and plot-ready reports.

use crate::baselines::dpf_parallel;
use crate::codebook::{multi_bs_column, BeamCodebook, ProbePattern, NUM_BEAMS};
use crate::dataset::{
    sample_rows, sparsify_with_3dpf, BsSelection, DatasetBuilder, DatasetError, LabeledDataset,
    NormalizationSpec, Provenance, Split,
};
use crate::recommender::{self, LatentModel, RecommenderError};
use crate::simulator::{generate_trajectory, Scene, SimulatorError, Trajectory};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use thiserror::Error;

pub const NUM_TRAJECTORIES: usize = 1000;
/// Trajectory ranges of the standard splits (0-based, end exclusive).
pub const TRAIN_TRAJ: std::ops::Range<usize> = 0..900;
pub const CV_TRAJ: std::ops::Range<usize> = 900..920;
pub const TEST_TRAJ: std::ops::Range<usize> = 920..1000;
pub const TRAIN_TRAJ_LARGE_SPLIT: std::ops::Range<usize> = 0..820;
pub const CV_TRAJ_LARGE_SPLIT: std::ops::Range<usize> = 820..920;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("experiment id {0} not in 1..=4")]
    BadExperiment(u8),
    #[error("base-station id {0} not in 1..={1}")]
    BadBs(usize, usize),
    #[error("budgets must lie in [{min}, {max}], got {got}")]
    BadBudget { got: usize, min: usize, max: usize },
    #[error("no results to aggregate")]
    EmptyResults,
    #[error(transparent)]
    Simulator(#[from] SimulatorError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Recommender(#[from] RecommenderError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("report file schema error: {0}")]
    Schema(String),
}

/// Everything one experiment run needs.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub experiment: u8,
    /// Serving BS, 1-based, for the single-BS experiments.
    pub bs: usize,
    pub seed: u64,
    pub budgets: Vec<usize>,
    pub x_grid: Vec<usize>,
    pub energy_fraction: f64,
    pub scene: Scene,
    pub pattern: ProbePattern,
}

impl ExperimentConfig {
    pub fn new(experiment: u8, scene: Scene) -> Result<Self, EvalError> {
        if !(1..=4).contains(&experiment) {
            return Err(EvalError::BadExperiment(experiment));
        }
        Ok(Self {
            experiment,
            bs: 1,
            seed: 42,
            budgets: default_budgets(experiment),
            x_grid: default_x_grid(),
            energy_fraction: 0.95,
            scene,
            pattern: crate::codebook::default_probe_pattern(),
        })
    }

    fn validate(&self) -> Result<(), EvalError> {
        self.scene.validate()?;
        if !(1..=4).contains(&self.experiment) {
            return Err(EvalError::BadExperiment(self.experiment));
        }
        let n_bs = self.scene.base_stations.len();
        if self.experiment != 2 && (self.bs == 0 || self.bs > n_bs) {
            return Err(EvalError::BadBs(self.bs, n_bs));
        }
        let (pattern_len, n) = if self.experiment == 2 {
            (self.pattern.len() * n_bs, NUM_BEAMS * n_bs)
        } else {
            (self.pattern.len(), NUM_BEAMS)
        };
        for &b in &self.budgets {
            if b < pattern_len || b > n {
                return Err(EvalError::BadBudget { got: b, min: pattern_len, max: n });
            }
        }
        Ok(())
    }
}

/// Budgets matching the evaluation axes: 12..=26 step 2 single-BS,
/// 50..=110 step 10 multi-BS.
pub fn default_budgets(experiment: u8) -> Vec<usize> {
    if experiment == 2 {
        (50..=110).step_by(10).collect()
    } else {
        (12..=26).step_by(2).collect()
    }
}

/// Twenty candidate neighbor counts spanning 1..=50.
pub fn default_x_grid() -> Vec<usize> {
    vec![1, 2, 3, 4, 5, 6, 7, 8, 10, 12, 14, 16, 20, 24, 28, 32, 36, 40, 45, 50]
}

/// Mean relative performance: average of `algo_rss / oracle_rss` over rows.
pub fn performance_metric(results: &[(f64, f64)]) -> Result<f64, EvalError> {
    if results.is_empty() {
        return Err(EvalError::EmptyResults);
    }
    let sum: f64 = results.iter().map(|(algo, oracle)| algo / oracle).sum();
    Ok(sum / results.len() as f64)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CurveMeta {
    pub label: String,
    pub training_rows: usize,
    pub provenance: Provenance,
    pub k: usize,
    pub x: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ReportMeta {
    pub experiment: u8,
    /// 1-based BS id; 0 for the multi-BS experiment.
    pub bs_id: usize,
    pub seed: u64,
    pub budgets: Vec<usize>,
    pub x_grid: Vec<usize>,
    pub energy_fraction: f64,
    pub cv_rows: usize,
    pub test_rows: usize,
    pub curves: Vec<CurveMeta>,
}

/// One plotted point.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ReportRow {
    pub algorithm: String,
    pub training_size: usize,
    pub provenance: String,
    pub budget_or_avg_queries: f64,
    pub performance: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PerformanceReport {
    pub meta: ReportMeta,
    pub rows: Vec<ReportRow>,
}

// ── pipeline pieces ────────────────────────────────────────────────────────

/// Generate the full trajectory set; trajectory `i` uses seed `base_seed + i`.
pub fn generate_trajectories(scene: &Scene, base_seed: u64) -> Result<Vec<Trajectory>, EvalError> {
    let out: Result<Vec<Trajectory>, SimulatorError> = (0..NUM_TRAJECTORIES)
        .into_par_iter()
        .map(|i| generate_trajectory(base_seed.wrapping_add(i as u64), scene))
        .collect();
    Ok(out?)
}

/// Probe-pattern columns for a dataset layout: the pattern itself for one BS,
/// the BS-major union over all four for the multi-BS layout.
pub fn pattern_columns(pattern: &ProbePattern, sel: BsSelection) -> Vec<usize> {
    match sel {
        BsSelection::Single(_) => pattern.beams().iter().map(|b| b.index0()).collect(),
        BsSelection::All => {
            let mut cols = Vec::with_capacity(4 * pattern.len());
            for bs in 0..4 {
                cols.extend(pattern.beams().iter().map(|b| multi_bs_column(bs, *b)));
            }
            cols
        }
    }
}

/// A fitted-and-tuned CF model plus its evaluated curve.
struct Curve {
    meta: CurveMeta,
    points: Vec<(usize, f64)>,
}

fn fit_and_tune(
    train: &LabeledDataset,
    cv: &LabeledDataset,
    config: &ExperimentConfig,
    codebook: &BeamCodebook,
    label: &str,
) -> Result<(LatentModel, CurveMeta), EvalError> {
    let digest = codebook.digest(&config.pattern);
    let (model, _spectrum) =
        recommender::fit_with_energy(&train.ratings, config.energy_fraction, train.norm, digest)?;
    let pattern_cols = pattern_columns(&config.pattern, train.bs);
    let x = recommender::tune_x(&model, cv, &config.budgets, &config.x_grid, &pattern_cols)?;
    let model = model.with_x(x);
    let meta = CurveMeta {
        label: label.to_string(),
        training_rows: train.len(),
        provenance: train.provenance,
        k: model.k,
        x,
    };
    Ok((model, meta))
}

/// Evaluate a tuned model on a labeled test set at every budget.
fn cf_curve(
    model: &LatentModel,
    test: &LabeledDataset,
    budgets: &[usize],
    pattern_cols: &[usize],
) -> Result<Vec<(usize, f64)>, EvalError> {
    let x = model.x.ok_or(RecommenderError::XUnset)?;
    let per_row: Result<Vec<Vec<f64>>, RecommenderError> = (0..test.len())
        .into_par_iter()
        .map(|i| {
            let row = test.ratings.values.row(i);
            let ms = recommender::run_session_milestones(model, x, |c| Ok(row[c]), pattern_cols, budgets)?;
            Ok(ms.iter().map(|m| m.achieved_rss / test.oracle_rss[i]).collect())
        })
        .collect();
    let per_row = per_row?;
    let mut points = Vec::with_capacity(budgets.len());
    for (bi, &b) in budgets.iter().enumerate() {
        let mut acc = 0.0;
        for ratios in &per_row {
            acc += ratios[bi];
        }
        points.push((b, acc / per_row.len() as f64));
    }
    Ok(points)
}

/// 3DPF/k on every test row of a single-BS dataset: average query count and
/// mean relative performance. The climb runs on the raw dBm field (what a UE
/// measures); the outcome is priced on the normalized scale.
pub fn dpf_point(
    test: &LabeledDataset,
    raw: &ndarray::Array2<f64>,
    k: usize,
    codebook: &BeamCodebook,
) -> Result<(f64, f64), EvalError> {
    let per_row: Vec<(usize, f64)> = (0..test.len())
        .into_par_iter()
        .map(|i| {
            let raw_row = raw.row(i);
            let out = dpf_parallel(|b| raw_row[b.index0()], codebook, k).expect("k validated");
            let achieved = test.ratings.values[[i, out.best_beam.index0()]];
            (out.queries, achieved / test.oracle_rss[i])
        })
        .collect();
    let queries: usize = per_row.iter().map(|(q, _)| q).sum();
    let perf: f64 = per_row.iter().map(|(_, p)| p).sum::<f64>() / per_row.len() as f64;
    Ok((queries as f64 / per_row.len() as f64, perf))
}

/// Independent 3DPF/k at each BS of a multi-BS dataset; queries add up and
/// the best beam over all BSs is kept.
pub fn dpf_point_multi(
    test: &LabeledDataset,
    raw: &ndarray::Array2<f64>,
    k: usize,
    codebook: &BeamCodebook,
) -> Result<(f64, f64), EvalError> {
    let n_bs = test.ratings.n_beams() / NUM_BEAMS;
    let per_row: Vec<(usize, f64)> = (0..test.len())
        .into_par_iter()
        .map(|i| {
            let raw_row = raw.row(i);
            let mut queries = 0;
            let mut best = f64::NEG_INFINITY;
            let mut best_col = 0;
            for bs in 0..n_bs {
                let base = bs * NUM_BEAMS;
                let out = dpf_parallel(|b| raw_row[base + b.index0()], codebook, k).expect("k validated");
                queries += out.queries;
                let raw_best = raw_row[base + out.best_beam.index0()];
                if raw_best > best {
                    best = raw_best;
                    best_col = base + out.best_beam.index0();
                }
            }
            (queries, test.ratings.values[[i, best_col]] / test.oracle_rss[i])
        })
        .collect();
    let queries: usize = per_row.iter().map(|(q, _)| q).sum();
    let perf: f64 = per_row.iter().map(|(_, p)| p).sum::<f64>() / per_row.len() as f64;
    Ok((queries as f64 / per_row.len() as f64, perf))
}

// ── experiment recipes ─────────────────────────────────────────────────────

/// Datasets shared by experiments 1–3 for one BS selection: small and large
/// full-sweep training sets, CV and test, all under one normalization drawn
/// from the large training sweep. Raw dBm sweeps ride along for the
/// peak-finding baselines and for sparsification.
pub struct FamilyDatasets {
    pub train_small: LabeledDataset,
    pub train_large: LabeledDataset,
    pub cv: LabeledDataset,
    pub test: LabeledDataset,
    pub norm: NormalizationSpec,
    pub raw_train_small: ndarray::Array2<f64>,
    pub raw_train_large: ndarray::Array2<f64>,
    pub raw_test: ndarray::Array2<f64>,
}

pub fn build_family(builder: &DatasetBuilder, sel: BsSelection) -> Result<FamilyDatasets, EvalError> {
    let large_rows = sample_rows(TRAIN_TRAJ, 20)?;
    let raw_train_large = builder.raw_matrix(&large_rows, sel)?;
    let norm = NormalizationSpec::from_raw_sweep(&raw_train_large)?;
    let train_large = builder.labeled(&raw_train_large, &large_rows, sel, norm, Split::Train)?;
    let small_rows = sample_rows(TRAIN_TRAJ, 100)?;
    let raw_train_small = builder.raw_matrix(&small_rows, sel)?;
    let train_small = builder.labeled(&raw_train_small, &small_rows, sel, norm, Split::Train)?;
    let cv = builder.build_full(CV_TRAJ, 1, sel, norm, Split::Cv)?;
    let test_rows = sample_rows(TEST_TRAJ, 1)?;
    let raw_test = builder.raw_matrix(&test_rows, sel)?;
    let test = builder.labeled(&raw_test, &test_rows, sel, norm, Split::Test)?;
    Ok(FamilyDatasets { train_small, train_large, cv, test, norm, raw_train_small, raw_train_large, raw_test })
}

/// Datasets for experiment 4: larger training and CV splits with their own
/// normalization; the test split is unchanged.
pub struct LargeSplitDatasets {
    pub train: LabeledDataset,
    pub cv: LabeledDataset,
    pub test: LabeledDataset,
    pub norm: NormalizationSpec,
    pub raw_train: ndarray::Array2<f64>,
    pub raw_cv: ndarray::Array2<f64>,
    pub raw_test: ndarray::Array2<f64>,
}

pub fn build_large_split(builder: &DatasetBuilder, sel: BsSelection) -> Result<LargeSplitDatasets, EvalError> {
    let train_rows = sample_rows(TRAIN_TRAJ_LARGE_SPLIT, 10)?;
    let raw_train = builder.raw_matrix(&train_rows, sel)?;
    let norm = NormalizationSpec::from_raw_sweep(&raw_train)?;
    let train = builder.labeled(&raw_train, &train_rows, sel, norm, Split::Train)?;
    let cv_rows = sample_rows(CV_TRAJ_LARGE_SPLIT, 1)?;
    let raw_cv = builder.raw_matrix(&cv_rows, sel)?;
    let cv = builder.labeled(&raw_cv, &cv_rows, sel, norm, Split::Cv)?;
    let test_rows = sample_rows(TEST_TRAJ, 1)?;
    let raw_test = builder.raw_matrix(&test_rows, sel)?;
    let test = builder.labeled(&raw_test, &test_rows, sel, norm, Split::Test)?;
    Ok(LargeSplitDatasets { train, cv, test, norm, raw_train, raw_cv, raw_test })
}

fn baseline_rows(
    test: &LabeledDataset,
    raw_test: &ndarray::Array2<f64>,
    codebook: &BeamCodebook,
    multi: bool,
) -> Result<Vec<ReportRow>, EvalError> {
    let mut rows = Vec::new();
    for k in 1..=3 {
        let (avg_q, perf) = if multi {
            dpf_point_multi(test, raw_test, k, codebook)?
        } else {
            dpf_point(test, raw_test, k, codebook)?
        };
        rows.push(ReportRow {
            algorithm: format!("3dpf-{k}"),
            training_size: 0,
            provenance: "live-search".into(),
            budget_or_avg_queries: avg_q,
            performance: perf,
        });
    }
    rows.push(ReportRow {
        algorithm: "oracle".into(),
        training_size: 0,
        provenance: "live-search".into(),
        budget_or_avg_queries: test.ratings.n_beams() as f64,
        performance: 1.0,
    });
    Ok(rows)
}

fn curve_rows(curve: &Curve) -> Vec<ReportRow> {
    curve
        .points
        .iter()
        .map(|&(b, p)| ReportRow {
            algorithm: "cf".into(),
            training_size: curve.meta.training_rows,
            provenance: curve.meta.provenance.to_string(),
            budget_or_avg_queries: b as f64,
            performance: p,
        })
        .collect()
}

/// Run one experiment end to end: generate, fit, tune, evaluate, report.
pub fn run_experiment(config: &ExperimentConfig) -> Result<PerformanceReport, EvalError> {
    config.validate()?;
    let codebook = BeamCodebook::default();
    let trajectories = generate_trajectories(&config.scene, config.seed)?;
    let builder = DatasetBuilder { scene: &config.scene, codebook: &codebook, trajectories: &trajectories };

    let mut curves: Vec<Curve> = Vec::new();
    let (baseline, cv_rows, test_rows) = match config.experiment {
        1 | 2 => {
            let sel = if config.experiment == 2 { BsSelection::All } else { BsSelection::Single(config.bs - 1) };
            let family = build_family(&builder, sel)?;
            let pattern_cols = pattern_columns(&config.pattern, sel);
            for (train, label) in [(&family.train_small, "cf-small"), (&family.train_large, "cf-large")] {
                let (model, meta) = fit_and_tune(train, &family.cv, config, &codebook, label)?;
                let points = cf_curve(&model, &family.test, &config.budgets, &pattern_cols)?;
                curves.push(Curve { meta, points });
            }
            let baseline = baseline_rows(&family.test, &family.raw_test, &codebook, config.experiment == 2)?;
            (baseline, family.cv.len(), family.test.len())
        }
        3 => {
            let sel = BsSelection::Single(config.bs - 1);
            let family = build_family(&builder, sel)?;
            let pattern_cols = pattern_columns(&config.pattern, sel);
            let trains = [
                (&family.train_small, &family.raw_train_small, "small"),
                (&family.train_large, &family.raw_train_large, "large"),
            ];
            for (train, raw, size_label) in trains {
                for variant in 1..=3 {
                    let sparse = sparsify_with_3dpf(train, raw, variant, &codebook)?;
                    let label = format!("cf-{size_label}-3dpf{variant}");
                    let (model, meta) = fit_and_tune(&sparse, &family.cv, config, &codebook, &label)?;
                    let points = cf_curve(&model, &family.test, &config.budgets, &pattern_cols)?;
                    curves.push(Curve { meta, points });
                }
            }
            let baseline = baseline_rows(&family.test, &family.raw_test, &codebook, false)?;
            (baseline, family.cv.len(), family.test.len())
        }
        4 => {
            let sel = BsSelection::Single(config.bs - 1);
            let split = build_large_split(&builder, sel)?;
            let pattern_cols = pattern_columns(&config.pattern, sel);
            for variant in 1..=3 {
                let sparse_train = sparsify_with_3dpf(&split.train, &split.raw_train, variant, &codebook)?;
                let sparse_cv = sparsify_with_3dpf(&split.cv, &split.raw_cv, variant, &codebook)?;
                let label = format!("cf-3dpf{variant}");
                let (model, meta) = fit_and_tune(&sparse_train, &sparse_cv, config, &codebook, &label)?;
                let points = cf_curve(&model, &split.test, &config.budgets, &pattern_cols)?;
                curves.push(Curve { meta, points });
            }
            let baseline = baseline_rows(&split.test, &split.raw_test, &codebook, false)?;
            (baseline, split.cv.len(), split.test.len())
        }
        other => return Err(EvalError::BadExperiment(other)),
    };

    let mut rows = Vec::new();
    for curve in &curves {
        rows.extend(curve_rows(curve));
    }
    rows.extend(baseline);

    Ok(PerformanceReport {
        meta: ReportMeta {
            experiment: config.experiment,
            bs_id: if config.experiment == 2 { 0 } else { config.bs },
            seed: config.seed,
            budgets: config.budgets.clone(),
            x_grid: config.x_grid.clone(),
            energy_fraction: config.energy_fraction,
            cv_rows,
            test_rows,
            curves: curves.into_iter().map(|c| c.meta).collect(),
        },
        rows,
    })
}

// ── report files ───────────────────────────────────────────────────────────

pub fn write_report_json(report: &PerformanceReport, path: &Path) -> Result<(), EvalError> {
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer_pretty(f, report)?;
    Ok(())
}

pub fn load_report_json(path: &Path) -> Result<PerformanceReport, EvalError> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    Ok(serde_json::from_reader(f)?)
}

/// One CSV row per plotted point: `algorithm,training_size,provenance,budget_or_avg_queries,performance`.
pub fn emit_report(report: &PerformanceReport, path: &Path) -> Result<(), EvalError> {
    std::fs::write(path, report_csv_bytes(report))?;
    Ok(())
}

/// The exact bytes `emit_report` writes; useful for determinism checks.
pub fn report_csv_bytes(report: &PerformanceReport) -> Vec<u8> {
    let mut out = Vec::new();
    writeln!(out, "algorithm,training_size,provenance,budget_or_avg_queries,performance").unwrap();
    for r in &report.rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.algorithm, r.training_size, r.provenance, r.budget_or_avg_queries, r.performance
        )
        .unwrap();
    }
    out
}

pub fn load_report_csv(path: &Path) -> Result<Vec<ReportRow>, EvalError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| EvalError::Schema("empty report".into()))?;
    if header != "algorithm,training_size,provenance,budget_or_avg_queries,performance" {
        return Err(EvalError::Schema("unexpected header".into()));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(EvalError::Schema(format!("row {i} has {} fields", f.len())));
        }
        rows.push(ReportRow {
            algorithm: f[0].to_string(),
            training_size: f[1].parse().map_err(|e| EvalError::Schema(format!("row {i}: {e}")))?,
            provenance: f[2].to_string(),
            budget_or_avg_queries: f[3].parse().map_err(|e| EvalError::Schema(format!("row {i}: {e}")))?,
            performance: f[4].parse().map_err(|e| EvalError::Schema(format!("row {i}: {e}")))?,
        });
    }
    Ok(rows)
}
