//! Cross-experiment integration checks: multi-BS coordination, the
//! sparse-CV pipeline shape, and the command-line surface.

use beamcf::codebook::{default_probe_pattern, BeamCodebook};
use beamcf::dataset::{
    load_dataset, sample_rows, sparsify_with_3dpf, BsSelection, DatasetBuilder, NormalizationSpec,
    Split,
};
use beamcf::eval::{build_family, generate_trajectories, pattern_columns};
use beamcf::recommender;
use beamcf::simulator::Scene;
use ndarray::s;
use std::process::Command;

/// Coordinated BSs beat the best stand-alone BS at a matched total budget:
/// the CF session implicitly routes its queries to the strongest BSs, so the
/// 240-column model at budget 4b should not fall behind the best single-BS
/// model at budget b by more than a small slack.
#[test]
fn multi_bs_coordination_matches_best_single_bs() {
    let scene = Scene::paper_default();
    let codebook = BeamCodebook::default();
    let trajectories = generate_trajectories(&scene, 42).unwrap();
    let builder = DatasetBuilder { scene: &scene, codebook: &codebook, trajectories: &trajectories };

    let multi = build_family(&builder, BsSelection::All).unwrap();
    let digest = codebook.digest(&default_probe_pattern());
    let single_budgets: Vec<usize> = (12..=26).step_by(2).collect();
    let multi_budgets: Vec<usize> = single_budgets.iter().map(|b| 4 * b).collect();
    let x_grid = [8usize, 24];

    // Multi-BS curve.
    let multi_cols = pattern_columns(&default_probe_pattern(), BsSelection::All);
    let (model, _) =
        recommender::fit_with_energy(&multi.train_small.ratings, 0.95, multi.norm, digest.clone()).unwrap();
    let x = recommender::tune_x(&model, &multi.cv, &multi_budgets, &x_grid, &multi_cols).unwrap();
    let model = model.with_x(x);
    let mut multi_curve = vec![0.0; multi_budgets.len()];
    for i in 0..multi.test.len() {
        let row = multi.test.ratings.values.row(i);
        let ms = recommender::run_session_milestones(&model, x, |c| Ok(row[c]), &multi_cols, &multi_budgets).unwrap();
        for (bi, m) in ms.iter().enumerate() {
            multi_curve[bi] += m.achieved_rss / multi.test.oracle_rss[i];
        }
    }
    for v in &mut multi_curve {
        *v /= multi.test.len() as f64;
    }

    // Per-BS curves from slices of the same sweeps, each under its own
    // single-BS normalization.
    let single_cols = pattern_columns(&default_probe_pattern(), BsSelection::Single(0));
    let train_rows = sample_rows(0..900, 100).unwrap();
    let cv_rows = sample_rows(900..920, 1).unwrap();
    let test_rows = sample_rows(920..1000, 1).unwrap();
    let mut best_single = vec![0.0f64; single_budgets.len()];
    for bs in 0..4 {
        let cols = s![.., bs * 60..(bs + 1) * 60];
        let raw_train = multi.raw_train_small.slice(cols).to_owned();
        let norm = NormalizationSpec::from_raw_sweep(&raw_train).unwrap();
        let sel = BsSelection::Single(bs);
        let train = builder.labeled(&raw_train, &train_rows, sel, norm, Split::Train).unwrap();
        let raw_cv = builder.raw_matrix(&cv_rows, sel).unwrap();
        let cv = builder.labeled(&raw_cv, &cv_rows, sel, norm, Split::Cv).unwrap();
        let raw_test = multi.raw_test.slice(cols).to_owned();
        let test = builder.labeled(&raw_test, &test_rows, sel, norm, Split::Test).unwrap();

        let (model, _) = recommender::fit_with_energy(&train.ratings, 0.95, norm, digest.clone()).unwrap();
        let x = recommender::tune_x(&model, &cv, &single_budgets, &x_grid, &single_cols).unwrap();
        let model = model.with_x(x);
        let mut curve = vec![0.0; single_budgets.len()];
        for i in 0..test.len() {
            let row = test.ratings.values.row(i);
            let ms =
                recommender::run_session_milestones(&model, x, |c| Ok(row[c]), &single_cols, &single_budgets).unwrap();
            for (bi, m) in ms.iter().enumerate() {
                curve[bi] += m.achieved_rss / test.oracle_rss[i];
            }
        }
        for (bi, v) in curve.iter().enumerate() {
            best_single[bi] = best_single[bi].max(v / test.len() as f64);
        }
    }

    for (bi, &b) in single_budgets.iter().enumerate() {
        assert!(
            multi_curve[bi] >= best_single[bi] - 0.02,
            "budget {b}: multi {:.4} vs best single {:.4}",
            multi_curve[bi],
            best_single[bi]
        );
    }
}

/// The experiment-4 composition at toy scale: sparse training AND sparse CV,
/// with full-sweep oracle labels, tuned and evaluated deterministically.
#[test]
fn sparse_cv_pipeline_shape() {
    let scene = Scene::paper_default();
    let codebook = BeamCodebook::default();
    let trajectories: Vec<_> = (0..10)
        .map(|i| beamcf::simulator::generate_trajectory(42 + i, &scene).unwrap())
        .collect();
    let builder = DatasetBuilder { scene: &scene, codebook: &codebook, trajectories: &trajectories };
    let sel = BsSelection::Single(0);

    let train_rows = sample_rows(0..6, 10).unwrap();
    let raw_train = builder.raw_matrix(&train_rows, sel).unwrap();
    let norm = NormalizationSpec::from_raw_sweep(&raw_train).unwrap();
    let train = builder.labeled(&raw_train, &train_rows, sel, norm, Split::Train).unwrap();
    let cv_rows = sample_rows(6..8, 4).unwrap();
    let raw_cv = builder.raw_matrix(&cv_rows, sel).unwrap();
    let cv = builder.labeled(&raw_cv, &cv_rows, sel, norm, Split::Cv).unwrap();
    let test_rows = sample_rows(8..10, 4).unwrap();
    let raw_test = builder.raw_matrix(&test_rows, sel).unwrap();
    let test = builder.labeled(&raw_test, &test_rows, sel, norm, Split::Test).unwrap();

    let sparse_train = sparsify_with_3dpf(&train, &raw_train, 3, &codebook).unwrap();
    let sparse_cv = sparsify_with_3dpf(&cv, &raw_cv, 3, &codebook).unwrap();
    // Oracle labels survive sparsification.
    assert_eq!(sparse_cv.oracle_rss, cv.oracle_rss);
    assert!(sparse_cv.ratings.sparsity() > 0.3);

    let digest = codebook.digest(&default_probe_pattern());
    let (model, _) = recommender::fit_with_energy(&sparse_train.ratings, 0.95, norm, digest).unwrap();
    let pattern_cols = pattern_columns(&default_probe_pattern(), sel);
    let budgets = [12usize, 16];
    let x = recommender::tune_x(&model, &sparse_cv, &budgets, &[2, 4], &pattern_cols).unwrap();
    assert!(x == 2 || x == 4);
    let model = model.with_x(x);

    let run = || -> Vec<f64> {
        (0..test.len())
            .map(|i| {
                let row = test.ratings.values.row(i);
                let ms = recommender::run_session_milestones(&model, x, |c| Ok(row[c]), &pattern_cols, &budgets)
                    .unwrap();
                ms.last().unwrap().achieved_rss / test.oracle_rss[i]
            })
            .collect()
    };
    let a = run();
    let b = run();
    assert_eq!(a, b, "sessions are deterministic");
    assert!(a.iter().all(|&r| r > 0.0 && r <= 1.0));
}

#[test]
fn cli_gen_fit_tune_eval_report() {
    let bin = env!("CARGO_BIN_EXE_beamcf");
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");

    let ok = |out: std::process::Output, what: &str| {
        assert!(
            out.status.success(),
            "{what} failed: {}\n{}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        );
    };

    ok(
        Command::new(bin)
            .args(["gen", "--experiment", "1", "--bs", "1", "--seed", "42"])
            .arg("--out")
            .arg(&data)
            .output()
            .unwrap(),
        "gen",
    );
    for f in ["scene.json", "trajectories.csv", "train_small.csv", "train_large.csv", "cv.csv", "test.csv"] {
        assert!(data.join(f).exists(), "{f} missing");
    }
    let train = load_dataset(&data.join("train_small.csv")).unwrap();
    assert_eq!(train.len(), 1962);
    assert_eq!(load_dataset(&data.join("cv.csv")).unwrap().len(), 4360);

    let model = dir.path().join("model.json");
    ok(
        Command::new(bin)
            .args(["fit", "--energy", "0.95"])
            .arg("--train")
            .arg(data.join("train_small.csv"))
            .arg("--out")
            .arg(&model)
            .output()
            .unwrap(),
        "fit",
    );
    ok(
        Command::new(bin)
            .args(["tune", "--budgets", "12,16", "--x-grid", "8"])
            .arg("--model")
            .arg(&model)
            .arg("--cv")
            .arg(data.join("cv.csv"))
            .output()
            .unwrap(),
        "tune",
    );
    let tuned = recommender::load_model(&model).unwrap();
    assert_eq!(tuned.x, Some(8));

    let evald = dir.path().join("eval");
    ok(
        Command::new(bin)
            .args(["eval", "--experiment", "1", "--bs", "1", "--seed", "42"])
            .args(["--budgets", "12,14", "--x-grid", "8"])
            .arg("--out")
            .arg(&evald)
            .output()
            .unwrap(),
        "eval",
    );
    let csv = std::fs::read(evald.join("report.csv")).unwrap();
    assert!(csv.starts_with(b"algorithm,training_size,provenance,budget_or_avg_queries,performance"));
    // 2 CF curves x 2 budgets + 3 baseline points + oracle = 8 rows.
    assert_eq!(csv.iter().filter(|&&b| b == b'\n').count(), 9);

    let csv2 = dir.path().join("report2.csv");
    ok(
        Command::new(bin)
            .arg("report")
            .arg("--input")
            .arg(evald.join("report.json"))
            .arg("--out")
            .arg(&csv2)
            .output()
            .unwrap(),
        "report",
    );
    assert_eq!(std::fs::read(&csv2).unwrap(), csv, "report conversion matches eval output");
}
