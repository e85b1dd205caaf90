//! Collaborative-filtering beam discovery workbench.
//!
//! A base station that has to pick a serving beam for a new UE faces the same
//! problem as a streaming service recommending a movie to a new subscriber:
//! given a handful of initial "ratings" (RSS measurements on a probe pattern),
//! predict which untried item (beam) the user will like best. This crate
//! implements that recommender on top of a deterministic geometric channel
//! simulator, together with the classic beam-search baselines it is measured
//! against.
//!
//! The pieces:
//!
//! * [`simulator`] — link-budget channel model (path loss, planar-array gain,
//!   box blockers) and U-track trajectory generation.
//! * [`codebook`] — the 6×10 beam grid, its index/direction mappings, probe
//!   pattern and column partitions.
//! * [`numerics`] — dense truncated SVD and cosine distance.
//! * [`dataset`] — rating-matrix generation, normalization, splits,
//!   sparsification and CSV persistence.
//! * [`recommender`] — the collaborative-filtering session loop: fit, project,
//!   neighbor search, rating estimation, probe-until-budget.
//! * [`baselines`] — exhaustive oracle and grid peak-finding search (single
//!   and partitioned).
//! * [`eval`] — experiment orchestration, the relative-performance metric and
//!   plot-ready report files.

pub mod baselines;
pub mod codebook;
pub mod dataset;
pub mod eval;
pub mod geometry;
pub mod numerics;
pub mod recommender;
pub mod simulator;
