//! The 60-beam codebook grid and its index/direction bookkeeping.
//!
//! Beams are numbered 1..=60 on a 6×10 grid. Rows are elevation (bottom row =
//! −50°, top row = 0°), columns are azimuth (leftmost = −45°, 10° steps). Ids
//! decrease left-to-right within a row: the bottom row reads 10..1, the top row
//! 60..51, so `id = 10·row + (10 − col)` with `row` counted bottom-up.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const GRID_ROWS: usize = 6;
pub const GRID_COLS: usize = 10;
pub const NUM_BEAMS: usize = GRID_ROWS * GRID_COLS;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodebookError {
    #[error("beam id {0} out of range 1..={NUM_BEAMS}")]
    BeamOutOfRange(usize),
    #[error("grid cell ({0},{1}) out of range")]
    CellOutOfRange(usize, usize),
    #[error("probe pattern contains duplicate beam id {0}")]
    DuplicateProbe(usize),
    #[error("column partition count {0} not in 1..=3")]
    BadPartitionCount(usize),
}

/// A beam index in 1..=60.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BeamId(usize);

impl BeamId {
    pub fn new(id: usize) -> Result<Self, CodebookError> {
        if (1..=NUM_BEAMS).contains(&id) {
            Ok(Self(id))
        } else {
            Err(CodebookError::BeamOutOfRange(id))
        }
    }

    pub fn get(self) -> usize {
        self.0
    }

    /// Zero-based column index of this beam inside a single-BS rating matrix.
    pub fn index0(self) -> usize {
        self.0 - 1
    }

    pub fn from_index0(idx: usize) -> Result<Self, CodebookError> {
        Self::new(idx + 1)
    }
}

impl std::fmt::Display for BeamId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// The fixed 6×10 beam grid with its azimuth/elevation labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamCodebook {
    pub rows: usize,
    pub cols: usize,
    /// Azimuth per column, degrees (−45° .. +45° in 10° steps).
    pub azimuth_deg: Vec<f64>,
    /// Elevation per row, degrees, bottom-up (−50° .. 0° in 10° steps).
    pub elevation_deg: Vec<f64>,
}

impl Default for BeamCodebook {
    fn default() -> Self {
        Self {
            rows: GRID_ROWS,
            cols: GRID_COLS,
            azimuth_deg: (0..GRID_COLS).map(|c| -45.0 + 10.0 * c as f64).collect(),
            elevation_deg: (0..GRID_ROWS).map(|r| -50.0 + 10.0 * r as f64).collect(),
        }
    }
}

/// `(row, col)` of a beam on the fixed 6×10 grid, row counted bottom-up,
/// col left-to-right. Pure arithmetic on the id layout.
pub fn beam_grid_position(beam: BeamId) -> (usize, usize) {
    let id = beam.get();
    let row = (id - 1) / GRID_COLS;
    let col = GRID_COLS - (id - GRID_COLS * row);
    (row, col)
}

impl BeamCodebook {
    /// `(row, col)` of a beam, row counted bottom-up, col left-to-right.
    pub fn beam_to_grid(&self, beam: BeamId) -> (usize, usize) {
        beam_grid_position(beam)
    }

    pub fn grid_to_beam(&self, row: usize, col: usize) -> Result<BeamId, CodebookError> {
        if row >= self.rows || col >= self.cols {
            return Err(CodebookError::CellOutOfRange(row, col));
        }
        BeamId::new(self.cols * row + (self.cols - col))
    }

    /// `(azimuth, elevation)` main-lobe direction in degrees.
    pub fn beam_direction(&self, beam: BeamId) -> (f64, f64) {
        let (row, col) = self.beam_to_grid(beam);
        (self.azimuth_deg[col], self.elevation_deg[row])
    }

    /// Up/down/left/right neighbors that exist on the grid, in that order.
    pub fn grid_neighbors(&self, beam: BeamId) -> Vec<BeamId> {
        self.neighbors_in(beam, 0, self.cols - 1)
    }

    fn neighbors_in(&self, beam: BeamId, col_lo: usize, col_hi: usize) -> Vec<BeamId> {
        let (row, col) = self.beam_to_grid(beam);
        let mut out = Vec::with_capacity(4);
        if row + 1 < self.rows {
            out.push(self.grid_to_beam(row + 1, col).unwrap());
        }
        if row > 0 {
            out.push(self.grid_to_beam(row - 1, col).unwrap());
        }
        if col > col_lo {
            out.push(self.grid_to_beam(row, col - 1).unwrap());
        }
        if col < col_hi {
            out.push(self.grid_to_beam(row, col + 1).unwrap());
        }
        out
    }

    /// Digest of the grid geometry plus a probe pattern, for model artifacts.
    pub fn digest(&self, pattern: &ProbePattern) -> String {
        let mut h = Sha256::new();
        h.update(format!("{}x{}", self.rows, self.cols));
        for a in &self.azimuth_deg {
            h.update(a.to_le_bytes());
        }
        for e in &self.elevation_deg {
            h.update(e.to_le_bytes());
        }
        for b in pattern.beams() {
            h.update(b.get().to_le_bytes());
        }
        format!("{:x}", h.finalize())
    }
}

/// A contiguous range of grid columns searched as one unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Subgrid {
    pub col_lo: usize,
    pub col_hi: usize,
}

impl Subgrid {
    pub fn width(&self) -> usize {
        self.col_hi - self.col_lo + 1
    }

    pub fn contains(&self, codebook: &BeamCodebook, beam: BeamId) -> bool {
        let (_, col) = codebook.beam_to_grid(beam);
        (self.col_lo..=self.col_hi).contains(&col)
    }

    /// Approximate spatial center of the subgrid: the cell at
    /// `⌈rows/2⌉−1` counted from the top and `⌈width/2⌉−1` from the left.
    /// On the full grid this is beam 36.
    pub fn center_beam(&self, codebook: &BeamCodebook) -> BeamId {
        let row_from_top = codebook.rows.div_ceil(2) - 1;
        let row = codebook.rows - 1 - row_from_top;
        let col = self.col_lo + self.width().div_ceil(2) - 1;
        codebook.grid_to_beam(row, col).unwrap()
    }

    /// Grid neighbors restricted to this subgrid's columns.
    pub fn neighbors(&self, codebook: &BeamCodebook, beam: BeamId) -> Vec<BeamId> {
        codebook.neighbors_in(beam, self.col_lo, self.col_hi)
    }
}

/// Split the grid into `k` column-range subgrids.
///
/// k=1 keeps the whole grid, k=2 gives columns {1..5},{6..10} and k=3 gives
/// {1..3},{4..7},{8..10} (1-based column labels).
pub fn column_partition(k: usize) -> Result<Vec<Subgrid>, CodebookError> {
    match k {
        1 => Ok(vec![Subgrid { col_lo: 0, col_hi: 9 }]),
        2 => Ok(vec![
            Subgrid { col_lo: 0, col_hi: 4 },
            Subgrid { col_lo: 5, col_hi: 9 },
        ]),
        3 => Ok(vec![
            Subgrid { col_lo: 0, col_hi: 2 },
            Subgrid { col_lo: 3, col_hi: 6 },
            Subgrid { col_lo: 7, col_hi: 9 },
        ]),
        other => Err(CodebookError::BadPartitionCount(other)),
    }
}

/// The ordered set of beams a cold UE measures before any recommendation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbePattern {
    beams: Vec<BeamId>,
}

impl ProbePattern {
    pub fn from_ids(ids: &[usize]) -> Result<Self, CodebookError> {
        let mut beams = Vec::with_capacity(ids.len());
        for &id in ids {
            let b = BeamId::new(id)?;
            if beams.contains(&b) {
                return Err(CodebookError::DuplicateProbe(id));
            }
            beams.push(b);
        }
        Ok(Self { beams })
    }

    pub fn beams(&self) -> &[BeamId] {
        &self.beams
    }

    pub fn len(&self) -> usize {
        self.beams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beams.is_empty()
    }
}

/// The 10-beam initial probing pattern.
pub fn default_probe_pattern() -> ProbePattern {
    ProbePattern::from_ids(&[1, 7, 12, 18, 23, 29, 34, 40, 45, 56]).unwrap()
}

/// Column index of a beam inside a multi-BS rating matrix (BS-major blocks).
pub fn multi_bs_column(bs_index: usize, beam: BeamId) -> usize {
    bs_index * NUM_BEAMS + beam.index0()
}

/// Inverse of [`multi_bs_column`].
pub fn column_to_bs_beam(col: usize) -> (usize, BeamId) {
    (col / NUM_BEAMS, BeamId::new(col % NUM_BEAMS + 1).unwrap())
}
