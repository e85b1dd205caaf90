//! Rating-matrix datasets: generation from the simulator, normalization,
//! train/CV/test splits, peak-finder sparsification and CSV persistence.
//!
//! Matrix encoding: `0` means "never measured"; every measured entry lies in
//! `[eps_blocked, 1]`, so heavily attenuated (blocked) measurements stay
//! distinguishable from holes.

use crate::baselines::dpf_parallel;
use crate::codebook::{BeamCodebook, NUM_BEAMS};
use crate::simulator::{sweep_all_beams, Scene, SimulatorError, Trajectory, TRAJECTORY_LEN};
use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;
use thiserror::Error;

/// Rating stored for a measured link at (or below) the bottom of the
/// measurement window.
pub const EPS_BLOCKED: f64 = 1e-3;

/// Receiver measurement window in dB: readings more than this far below the
/// strongest training measurement clamp to the window floor.
pub const MEASUREMENT_WINDOW_DB: f64 = 40.0;

/// Raw-domain sentinel for "no measurement" fed to [`NormalizationSpec::normalize`].
pub const RAW_UNMEASURED: f64 = f64::NEG_INFINITY;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("stride must be at least 1, got {0}")]
    BadStride(usize),
    #[error("dataset has no rows")]
    Empty,
    #[error("sparsification requires a single-BS (60-column) dataset")]
    MultiBsSparsify,
    #[error("normalization bounds degenerate: min {min} max {max}")]
    DegenerateNormalization { min: f64, max: f64 },
    #[error(transparent)]
    Simulator(#[from] SimulatorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("dataset file schema error: {0}")]
    Schema(String),
}

/// Affine dBm→[0,1] mapping plus the blocked-rating floor.
///
/// `max_dbm` is the strongest measured training value; `min_dbm` sits a fixed
/// receiver window below it. Readings at or under the floor (deep pattern
/// nulls, heavily blocked links) land at `eps_blocked`, which keeps them
/// distinguishable from the 0 that encodes "never measured".
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationSpec {
    pub min_dbm: f64,
    pub max_dbm: f64,
    pub eps_blocked: f64,
}

impl NormalizationSpec {
    /// Derive the mapping from a raw training sweep: the window top is the
    /// global measured maximum, the floor [`MEASUREMENT_WINDOW_DB`] below it.
    pub fn from_raw_sweep(raw: &Array2<f64>) -> Result<Self, DatasetError> {
        let mut max = f64::NEG_INFINITY;
        for &v in raw.iter() {
            if v.is_finite() {
                max = max.max(v);
            }
        }
        if !max.is_finite() {
            return Err(DatasetError::DegenerateNormalization { min: f64::NAN, max });
        }
        Ok(Self { min_dbm: max - MEASUREMENT_WINDOW_DB, max_dbm: max, eps_blocked: EPS_BLOCKED })
    }

    /// Map one raw value: unmeasured stays 0, measured values clamp into
    /// `[eps_blocked, 1]` so anything at (or below) the floor remains visible.
    pub fn normalize_value(&self, raw_dbm: f64) -> f64 {
        if raw_dbm == RAW_UNMEASURED {
            return 0.0;
        }
        let t = (raw_dbm - self.min_dbm) / (self.max_dbm - self.min_dbm);
        t.clamp(0.0, 1.0).max(self.eps_blocked)
    }

    /// Map a raw vector, preserving the unmeasured sentinel.
    pub fn normalize(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter().map(|&v| self.normalize_value(v)).collect()
    }
}

/// Which base stations a dataset's columns cover.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BsSelection {
    /// One BS, 60 columns.
    Single(usize),
    /// All four BSs concatenated BS-major, 240 columns.
    All,
}

impl BsSelection {
    pub fn n_beams(&self) -> usize {
        match self {
            BsSelection::Single(_) => NUM_BEAMS,
            BsSelection::All => 4 * NUM_BEAMS,
        }
    }

    /// 1-based BS id for file metadata; 0 denotes the multi-BS layout.
    pub fn file_id(&self) -> usize {
        match self {
            BsSelection::Single(bs) => bs + 1,
            BsSelection::All => 0,
        }
    }

    pub fn from_file_id(id: usize) -> Result<Self, DatasetError> {
        match id {
            0 => Ok(BsSelection::All),
            1..=4 => Ok(BsSelection::Single(id - 1)),
            other => Err(DatasetError::Schema(format!("bs_id {other} out of range"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Cv,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    FullSweep,
    Dpf1,
    Dpf2,
    Dpf3,
}

impl Provenance {
    pub fn dpf_variant(variant: usize) -> Self {
        match variant {
            1 => Provenance::Dpf1,
            2 => Provenance::Dpf2,
            3 => Provenance::Dpf3,
            _ => unreachable!("variant validated by column_partition"),
        }
    }
}

impl std::fmt::Display for Provenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Provenance::FullSweep => "full-sweep",
            Provenance::Dpf1 => "3dpf-1",
            Provenance::Dpf2 => "3dpf-2",
            Provenance::Dpf3 => "3dpf-3",
        };
        write!(f, "{s}")
    }
}

/// Where a dataset row came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowMeta {
    pub traj: u32,
    pub step: u32,
}

/// Normalized rating matrix with the 0 = unmeasured convention.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingMatrix {
    pub values: Array2<f64>,
}

impl RatingMatrix {
    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_beams(&self) -> usize {
        self.values.ncols()
    }

    /// Fraction of unmeasured entries.
    pub fn sparsity(&self) -> f64 {
        let zeros = self.values.iter().filter(|&&v| v == 0.0).count();
        zeros as f64 / (self.values.len() as f64)
    }
}

/// A rating matrix plus full-sweep oracle labels and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub ratings: RatingMatrix,
    /// Zero-based column of the best beam per row, labeled from the full sweep.
    pub oracle_col: Vec<usize>,
    /// Normalized RSS of the best beam per row.
    pub oracle_rss: Vec<f64>,
    pub rows: Vec<RowMeta>,
    pub split: Split,
    pub provenance: Provenance,
    pub bs: BsSelection,
    pub norm: NormalizationSpec,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Every `(traj, step)` pair of `traj_range`, flattened trajectory-major and
/// sampled at the given stride.
pub fn sample_rows(traj_range: std::ops::Range<usize>, stride: usize) -> Result<Vec<RowMeta>, DatasetError> {
    if stride < 1 {
        return Err(DatasetError::BadStride(stride));
    }
    let mut out = Vec::new();
    let base = traj_range.start;
    let total = (traj_range.end - traj_range.start) * TRAJECTORY_LEN;
    let mut g = 0;
    while g < total {
        out.push(RowMeta { traj: (base + g / TRAJECTORY_LEN) as u32, step: (g % TRAJECTORY_LEN) as u32 });
        g += stride;
    }
    Ok(out)
}

/// Builds raw sweeps and labeled datasets against one scene + trajectory set.
pub struct DatasetBuilder<'a> {
    pub scene: &'a Scene,
    pub codebook: &'a BeamCodebook,
    pub trajectories: &'a [Trajectory],
}

impl<'a> DatasetBuilder<'a> {
    /// Raw dBm sweep matrix for the given rows; rows are independent, so the
    /// build parallelizes across them without affecting the result.
    pub fn raw_matrix(&self, rows: &[RowMeta], sel: BsSelection) -> Result<Array2<f64>, DatasetError> {
        let n = sel.n_beams();
        let data: Result<Vec<Vec<f64>>, SimulatorError> = rows
            .par_iter()
            .map(|row| {
                let ue = self.trajectories[row.traj as usize].points[row.step as usize];
                let mut out = Vec::with_capacity(n);
                match sel {
                    BsSelection::Single(bs) => {
                        out.extend(sweep_all_beams(self.scene, self.codebook, bs, ue)?);
                    }
                    BsSelection::All => {
                        for bs in 0..self.scene.base_stations.len() {
                            out.extend(sweep_all_beams(self.scene, self.codebook, bs, ue)?);
                        }
                    }
                }
                Ok(out)
            })
            .collect();
        let data = data?;
        let mut matrix = Array2::zeros((rows.len(), n));
        for (i, row) in data.into_iter().enumerate() {
            for (j, v) in row.into_iter().enumerate() {
                matrix[[i, j]] = v;
            }
        }
        Ok(matrix)
    }

    /// Normalize a raw sweep into a fully-labeled dataset.
    pub fn labeled(
        &self,
        raw: &Array2<f64>,
        rows: &[RowMeta],
        sel: BsSelection,
        norm: NormalizationSpec,
        split: Split,
    ) -> Result<LabeledDataset, DatasetError> {
        if rows.is_empty() {
            return Err(DatasetError::Empty);
        }
        let (m, n) = raw.dim();
        debug_assert_eq!(m, rows.len());
        let mut values = Array2::zeros((m, n));
        let mut oracle_col = Vec::with_capacity(m);
        let mut oracle_rss = Vec::with_capacity(m);
        for i in 0..m {
            let mut best = 0;
            for j in 0..n {
                let v = norm.normalize_value(raw[[i, j]]);
                values[[i, j]] = v;
                if v > values[[i, best]] {
                    best = j;
                }
            }
            oracle_col.push(best);
            oracle_rss.push(values[[i, best]]);
        }
        Ok(LabeledDataset {
            ratings: RatingMatrix { values },
            oracle_col,
            oracle_rss,
            rows: rows.to_vec(),
            split,
            provenance: Provenance::FullSweep,
            bs: sel,
            norm,
        })
    }

    /// A full-sweep dataset for `traj_range` at the given stride, in one step.
    pub fn build_full(
        &self,
        traj_range: std::ops::Range<usize>,
        stride: usize,
        sel: BsSelection,
        norm: NormalizationSpec,
        split: Split,
    ) -> Result<LabeledDataset, DatasetError> {
        let rows = sample_rows(traj_range, stride)?;
        let raw = self.raw_matrix(&rows, sel)?;
        self.labeled(&raw, &rows, sel, norm, split)
    }
}

/// Keep only the entries a 3DPF/variant run would have measured at each row;
/// everything else becomes unmeasured. The search climbs the raw dBm field
/// (what a UE actually measures), and oracle labels stay untouched: they are
/// defined by the full sweep.
pub fn sparsify_with_3dpf(
    ds: &LabeledDataset,
    raw: &Array2<f64>,
    variant: usize,
    codebook: &BeamCodebook,
) -> Result<LabeledDataset, DatasetError> {
    if ds.ratings.n_beams() != NUM_BEAMS {
        return Err(DatasetError::MultiBsSparsify);
    }
    if raw.dim() != ds.ratings.values.dim() {
        return Err(DatasetError::Schema("raw sweep shape does not match dataset".into()));
    }
    let m = ds.len();
    let mut values = Array2::zeros((m, NUM_BEAMS));
    for i in 0..m {
        let raw_row = raw.row(i);
        let outcome = dpf_parallel(|b| raw_row[b.index0()], codebook, variant)
            .map_err(|e| DatasetError::Schema(e.to_string()))?;
        for b in outcome.probed {
            values[[i, b.index0()]] = ds.ratings.values[[i, b.index0()]];
        }
    }
    Ok(LabeledDataset {
        ratings: RatingMatrix { values },
        oracle_col: ds.oracle_col.clone(),
        oracle_rss: ds.oracle_rss.clone(),
        rows: ds.rows.clone(),
        split: ds.split,
        provenance: Provenance::dpf_variant(variant),
        bs: ds.bs,
        norm: ds.norm,
    })
}

// ── persistence ────────────────────────────────────────────────────────────

#[derive(Serialize, Deserialize)]
struct Sidecar {
    n_beams: usize,
    row_count: usize,
    split: Split,
    provenance: Provenance,
    /// 1-based BS id, 0 for the multi-BS column layout.
    bs_id: usize,
    normalization: NormalizationSpec,
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".meta.json");
    p.into()
}

/// Write a dataset as CSV plus a `<path>.meta.json` sidecar. Values use the
/// shortest round-trip decimal form, so a reload is bit-exact.
pub fn save_dataset(ds: &LabeledDataset, path: &Path) -> Result<(), DatasetError> {
    let n = ds.ratings.n_beams();
    let meta = Sidecar {
        n_beams: n,
        row_count: ds.len(),
        split: ds.split,
        provenance: ds.provenance,
        bs_id: ds.bs.file_id(),
        normalization: ds.norm,
    };
    std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&meta)?)?;

    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(f, "row_id,traj_id,step,bs_id")?;
    for j in 1..=n {
        write!(f, ",rss_{j}")?;
    }
    writeln!(f, ",oracle_beam,oracle_rss")?;
    for i in 0..ds.len() {
        write!(f, "{},{},{},{}", i, ds.rows[i].traj, ds.rows[i].step, ds.bs.file_id())?;
        for j in 0..n {
            write!(f, ",{}", ds.ratings.values[[i, j]])?;
        }
        writeln!(f, ",{},{}", ds.oracle_col[i] + 1, ds.oracle_rss[i])?;
    }
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<LabeledDataset, DatasetError> {
    let meta: Sidecar = serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)?;
    if meta.n_beams != NUM_BEAMS && meta.n_beams != 4 * NUM_BEAMS {
        return Err(DatasetError::Schema(format!("n_beams {} not in {{60, 240}}", meta.n_beams)));
    }
    let bs = BsSelection::from_file_id(meta.bs_id)?;
    if bs.n_beams() != meta.n_beams {
        return Err(DatasetError::Schema("bs_id inconsistent with n_beams".into()));
    }

    let file = std::fs::File::open(path)?;
    let mut lines = std::io::BufReader::new(file).lines();
    let header = lines.next().ok_or_else(|| DatasetError::Schema("empty file".into()))??;
    let expected_cols = 4 + meta.n_beams + 2;
    if header.split(',').count() != expected_cols {
        return Err(DatasetError::Schema("header column count mismatch".into()));
    }

    let mut values = Array2::zeros((meta.row_count, meta.n_beams));
    let mut oracle_col = Vec::with_capacity(meta.row_count);
    let mut oracle_rss = Vec::with_capacity(meta.row_count);
    let mut rows = Vec::with_capacity(meta.row_count);
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        if i >= meta.row_count {
            return Err(DatasetError::Schema("more rows than sidecar row_count".into()));
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != expected_cols {
            return Err(DatasetError::Schema(format!("row {i} has {} fields", fields.len())));
        }
        let parse_u = |s: &str| s.parse::<u32>().map_err(|e| DatasetError::Schema(format!("row {i}: {e}")));
        let parse_f = |s: &str| s.parse::<f64>().map_err(|e| DatasetError::Schema(format!("row {i}: {e}")));
        rows.push(RowMeta { traj: parse_u(fields[1])?, step: parse_u(fields[2])? });
        for j in 0..meta.n_beams {
            values[[i, j]] = parse_f(fields[4 + j])?;
        }
        let beam = parse_u(fields[4 + meta.n_beams])? as usize;
        if beam == 0 || beam > meta.n_beams {
            return Err(DatasetError::Schema(format!("row {i}: oracle beam {beam} out of range")));
        }
        oracle_col.push(beam - 1);
        oracle_rss.push(parse_f(fields[5 + meta.n_beams])?);
    }
    if rows.len() != meta.row_count {
        return Err(DatasetError::Schema("fewer rows than sidecar row_count".into()));
    }
    Ok(LabeledDataset {
        ratings: RatingMatrix { values },
        oracle_col,
        oracle_rss,
        rows,
        split: meta.split,
        provenance: meta.provenance,
        bs,
        norm: meta.normalization,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::generate_trajectory;
    use proptest::prelude::*;

    fn spec() -> NormalizationSpec {
        NormalizationSpec { min_dbm: -120.0, max_dbm: -40.0, eps_blocked: EPS_BLOCKED }
    }

    #[test]
    fn normalize_endpoints() {
        let s = spec();
        assert_eq!(s.normalize_value(-40.0), 1.0);
        // The window floor (blocked floor) maps to the epsilon, not zero.
        assert_eq!(s.normalize_value(-120.0), EPS_BLOCKED);
        assert_eq!(s.normalize_value(-300.0), EPS_BLOCKED);
        assert_eq!(s.normalize_value(0.0), 1.0);
        assert_eq!(s.normalize_value(RAW_UNMEASURED), 0.0);
    }

    #[test]
    fn normalize_vector_keeps_sentinel() {
        let s = spec();
        let out = s.normalize(&[-80.0, RAW_UNMEASURED, -40.0]);
        assert_eq!(out[0], 0.5);
        assert_eq!(out[1], 0.0);
        assert_eq!(out[2], 1.0);
    }

    #[test]
    fn window_is_anchored_at_the_sweep_maximum() {
        let raw = Array2::from_shape_fn((2, 3), |(i, j)| -90.0 + (i * 3 + j) as f64);
        let s = NormalizationSpec::from_raw_sweep(&raw).unwrap();
        assert_eq!(s.max_dbm, -85.0);
        assert_eq!(s.min_dbm, -85.0 - MEASUREMENT_WINDOW_DB);
        assert_eq!(s.normalize_value(-85.0), 1.0);
    }

    #[test]
    fn sample_counts_match_table() {
        assert_eq!(sample_rows(0..900, 100).unwrap().len(), 1962);
        assert_eq!(sample_rows(0..900, 20).unwrap().len(), 9810);
        assert_eq!(sample_rows(0..820, 10).unwrap().len(), 17876);
        assert_eq!(sample_rows(900..920, 1).unwrap().len(), 4360);
        assert_eq!(sample_rows(920..1000, 1).unwrap().len(), 17440);
        assert_eq!(sample_rows(820..920, 1).unwrap().len(), 21800);
        assert!(matches!(sample_rows(0..10, 0), Err(DatasetError::BadStride(0))));
    }

    fn tiny_dataset() -> (LabeledDataset, Array2<f64>) {
        let scene = Scene::paper_default();
        let codebook = BeamCodebook::default();
        let trajectories: Vec<_> = (0..2).map(|s| generate_trajectory(s, &scene).unwrap()).collect();
        let b = DatasetBuilder { scene: &scene, codebook: &codebook, trajectories: &trajectories };
        let rows = sample_rows(0..2, 40).unwrap();
        let raw = b.raw_matrix(&rows, BsSelection::Single(0)).unwrap();
        let norm = NormalizationSpec::from_raw_sweep(&raw).unwrap();
        let ds = b.labeled(&raw, &rows, BsSelection::Single(0), norm, Split::Train).unwrap();
        (ds, raw)
    }

    #[test]
    fn labeled_dataset_is_normalized_with_oracle_labels() {
        let (ds, _) = tiny_dataset();
        assert_eq!(ds.ratings.n_beams(), 60);
        for i in 0..ds.len() {
            let row = ds.ratings.values.row(i);
            assert!(row.iter().all(|&v| (EPS_BLOCKED..=1.0).contains(&v)));
            // First index attaining the maximum: ties go to the lowest beam.
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            assert_eq!(ds.oracle_col[i], best);
            assert_eq!(ds.oracle_rss[i], row[best]);
            assert!(ds.oracle_rss[i] >= EPS_BLOCKED);
        }
        // The global max over training hits exactly 1.
        let top = ds.ratings.values.iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(top, 1.0);
    }

    #[test]
    fn sparsify_masks_but_never_invents_values() {
        let (ds, raw) = tiny_dataset();
        let cb = BeamCodebook::default();
        for variant in 1..=3 {
            let sparse = sparsify_with_3dpf(&ds, &raw, variant, &cb).unwrap();
            assert_eq!(sparse.oracle_rss, ds.oracle_rss);
            assert_eq!(sparse.oracle_col, ds.oracle_col);
            for i in 0..ds.len() {
                for j in 0..60 {
                    let v = sparse.ratings.values[[i, j]];
                    assert!(v == 0.0 || v == ds.ratings.values[[i, j]]);
                }
            }
            assert!(sparse.ratings.sparsity() > 0.0);
        }
    }

    #[test]
    fn sparsity_decreases_with_more_partitions() {
        let (ds, raw) = tiny_dataset();
        let cb = BeamCodebook::default();
        let s1 = sparsify_with_3dpf(&ds, &raw, 1, &cb).unwrap().ratings.sparsity();
        let s2 = sparsify_with_3dpf(&ds, &raw, 2, &cb).unwrap().ratings.sparsity();
        let s3 = sparsify_with_3dpf(&ds, &raw, 3, &cb).unwrap().ratings.sparsity();
        assert!(s1 > s2 && s2 > s3, "sparsity ordering {s1} {s2} {s3}");
    }

    #[test]
    fn sparsify_rejects_multi_bs() {
        let (mut ds, raw) = tiny_dataset();
        ds.ratings = RatingMatrix { values: Array2::zeros((2, 240)) };
        assert!(matches!(
            sparsify_with_3dpf(&ds, &raw, 1, &BeamCodebook::default()),
            Err(DatasetError::MultiBsSparsify)
        ));
    }

    #[test]
    fn save_load_roundtrip_is_exact() {
        let (ds, _) = tiny_dataset();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.csv");
        save_dataset(&ds, &path).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn load_rejects_bad_beam_count() {
        let (ds, _) = tiny_dataset();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.csv");
        save_dataset(&ds, &path).unwrap();
        // Corrupt the sidecar's n_beams.
        let sidecar = path.with_file_name("train.csv.meta.json");
        let text = std::fs::read_to_string(&sidecar).unwrap().replace("\"n_beams\": 60", "\"n_beams\": 59");
        std::fs::write(&sidecar, text).unwrap();
        assert!(matches!(load_dataset(&path), Err(DatasetError::Schema(_))));
    }

    #[test]
    fn degenerate_normalization_is_rejected() {
        let raw = Array2::from_elem((2, 3), f64::NAN);
        assert!(NormalizationSpec::from_raw_sweep(&raw).is_err());
    }

    proptest! {
        #[test]
        fn normalization_is_monotone_on_measured_values(a in -200.0f64..0.0, b in -200.0f64..0.0) {
            let s = spec();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(s.normalize_value(lo) <= s.normalize_value(hi));
        }
    }
}
