//! Baseline beam-search algorithms: the exhaustive oracle and a grid
//! peak-finding climb run on one or more column partitions of the codebook.

use crate::codebook::{column_partition, BeamCodebook, BeamId, CodebookError, Subgrid, NUM_BEAMS};

/// Partitioned peak-finding configuration: how many column sub-matrices to
/// search in parallel. The start beam is always the sub-matrix center.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DpfConfig {
    pub partitions: usize,
}

impl DpfConfig {
    pub fn new(partitions: usize) -> Result<Self, CodebookError> {
        column_partition(partitions)?;
        Ok(Self { partitions })
    }

    pub fn subgrids(&self) -> Vec<Subgrid> {
        column_partition(self.partitions).expect("validated on construction")
    }
}

/// Result of one search: which beam won, its RSS, and what was measured.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub best_beam: BeamId,
    pub best_rss: f64,
    pub queries: usize,
    /// Beams in probe order; never contains duplicates.
    pub probed: Vec<BeamId>,
}

/// Exhaustive sweep: best beam over the full vector, ties to the lowest id.
pub fn oracle_search(sweep: &[f64]) -> SearchOutcome {
    assert!(!sweep.is_empty(), "oracle_search needs a non-empty sweep");
    let mut best = 0;
    for (i, &v) in sweep.iter().enumerate() {
        if v > sweep[best] {
            best = i;
        }
    }
    SearchOutcome {
        best_beam: BeamId::from_index0(best).expect("sweep indexed by beam"),
        best_rss: sweep[best],
        queries: sweep.len(),
        probed: (1..=sweep.len()).map(|id| BeamId::new(id).unwrap()).collect(),
    }
}

/// Per-search measurement memo so no beam is ever measured twice.
struct Memo<'a, F: FnMut(BeamId) -> f64> {
    measure: F,
    values: [Option<f64>; NUM_BEAMS],
    order: Vec<BeamId>,
    _marker: std::marker::PhantomData<&'a ()>,
}

impl<'a, F: FnMut(BeamId) -> f64> Memo<'a, F> {
    fn new(measure: F) -> Self {
        Self { measure, values: [None; NUM_BEAMS], order: Vec::new(), _marker: std::marker::PhantomData }
    }

    fn probe(&mut self, beam: BeamId) -> f64 {
        let slot = &mut self.values[beam.index0()];
        match slot {
            Some(v) => *v,
            None => {
                let v = (self.measure)(beam);
                *slot = Some(v);
                self.order.push(beam);
                v
            }
        }
    }
}

fn climb<F: FnMut(BeamId) -> f64>(memo: &mut Memo<F>, codebook: &BeamCodebook, subgrid: Subgrid) -> (BeamId, f64) {
    let mut current = subgrid.center_beam(codebook);
    let mut current_rss = memo.probe(current);
    loop {
        let mut best_neighbor: Option<(BeamId, f64)> = None;
        for nb in subgrid.neighbors(codebook, current) {
            let v = memo.probe(nb);
            let better = match best_neighbor {
                None => true,
                Some((bb, bv)) => v > bv || (v == bv && nb < bb),
            };
            if better {
                best_neighbor = Some((nb, v));
            }
        }
        match best_neighbor {
            // Move only on strict improvement; ties stop the climb.
            Some((nb, v)) if v > current_rss => {
                current = nb;
                current_rss = v;
            }
            _ => return (current, current_rss),
        }
    }
}

/// Hill-climb from the subgrid center: probe the center and its neighbors,
/// move to the best strictly-better neighbor, repeat until a local maximum.
pub fn dpf_search<F: FnMut(BeamId) -> f64>(measure: F, codebook: &BeamCodebook, subgrid: Subgrid) -> SearchOutcome {
    let mut memo = Memo::new(measure);
    let (beam, rss) = climb(&mut memo, codebook, subgrid);
    let queries = memo.order.len();
    SearchOutcome { best_beam: beam, best_rss: rss, queries, probed: memo.order }
}

/// Run the climb in every column partition (shared measurement memo) and
/// keep the best result over all of them.
pub fn dpf_parallel<F: FnMut(BeamId) -> f64>(measure: F, codebook: &BeamCodebook, k: usize) -> Result<SearchOutcome, CodebookError> {
    let parts = column_partition(k)?;
    let mut memo = Memo::new(measure);
    let mut best: Option<(BeamId, f64)> = None;
    for part in parts {
        let (beam, rss) = climb(&mut memo, codebook, part);
        let better = match best {
            None => true,
            Some((bb, bv)) => rss > bv || (rss == bv && beam < bb),
        };
        if better {
            best = Some((beam, rss));
        }
    }
    let (best_beam, best_rss) = best.expect("at least one partition");
    let queries = memo.order.len();
    Ok(SearchOutcome { best_beam, best_rss, queries, probed: memo.order })
}
