//! Dense truncated SVD and distance primitives.
//!
//! The factorization is a one-sided Jacobi SVD; tall matrices (m ≥ 2n) are
//! first reduced by a Householder QR so the Jacobi sweeps run on the n×n
//! triangular factor. Rating matrices here are at most ~22k×240, so dense
//! arithmetic is adequate throughout.

use ndarray::Array2;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("matrix has zero rows or columns")]
    EmptyMatrix,
    #[error("rank {k} out of range 1..={max}")]
    RankOutOfRange { k: usize, max: usize },
    #[error("matrix contains non-finite entries")]
    NonFiniteInput,
    #[error("Jacobi sweeps did not converge")]
    NonConvergence,
    #[error("factor orthonormality error {0:.3e} exceeds 1e-8")]
    Orthonormality(f64),
    #[error("singular-value spectrum too short to truncate")]
    EmptySpectrum,
    #[error("energy fraction {0} not in (0, 1]")]
    BadEnergyFraction(f64),
    #[error("cosine distance of a zero-norm vector")]
    ZeroNormVector,
    #[error("vector length {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Truncated factors `Y ≈ U · diag(S) · Vᵀ` with `U: M×K`, `V: N×K`.
#[derive(Debug, Clone)]
pub struct SvdFactors {
    pub u: Array2<f64>,
    pub s: Vec<f64>,
    pub v: Array2<f64>,
}

impl SvdFactors {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    /// `U · diag(S) · Vᵀ`.
    pub fn reconstruct(&self) -> Array2<f64> {
        let (m, k) = self.u.dim();
        let n = self.v.dim().0;
        let mut out = Array2::zeros((m, n));
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for r in 0..k {
                    acc += self.u[[i, r]] * self.s[r] * self.v[[j, r]];
                }
                out[[i, j]] = acc;
            }
        }
        out
    }

    /// Largest deviation of `UᵀU` and `VᵀV` from the identity. Columns whose
    /// singular value sits below `1e-8 · s[0]` are excused: dividing the
    /// converged column by such a σ amplifies rounding noise past any useful
    /// orthonormality bound, and rank selection never retains them.
    pub fn orthonormality_error(&self) -> f64 {
        let floor = self.s.first().copied().unwrap_or(0.0) * 1e-8;
        let live: Vec<usize> = (0..self.s.len()).filter(|&j| self.s[j] > floor).collect();
        let gram_err = |a: &Array2<f64>| {
            let m = a.nrows();
            let mut worst: f64 = 0.0;
            for (pi, &p) in live.iter().enumerate() {
                for &q in &live[pi..] {
                    let mut acc = 0.0;
                    for i in 0..m {
                        acc += a[[i, p]] * a[[i, q]];
                    }
                    let target = if p == q { 1.0 } else { 0.0 };
                    worst = worst.max((acc - target).abs());
                }
            }
            worst
        };
        gram_err(&self.u).max(gram_err(&self.v))
    }
}

/// Best rank-`k` factorization of a dense matrix.
///
/// Factors come back with singular values descending and orthonormal columns;
/// the orthonormality is verified to 1e-8 before returning.
pub fn truncated_svd(y: &Array2<f64>, k: usize) -> Result<SvdFactors, NumericsError> {
    let (m, n) = y.dim();
    if m == 0 || n == 0 {
        return Err(NumericsError::EmptyMatrix);
    }
    let max_rank = m.min(n);
    if k == 0 || k > max_rank {
        return Err(NumericsError::RankOutOfRange { k, max: max_rank });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(NumericsError::NonFiniteInput);
    }

    let factors = if m >= n {
        svd_tall(ColMat::from_array(y), k)?
    } else {
        // Work on the transpose and swap the factors back.
        let t = svd_tall(ColMat::from_array_transposed(y), k)?;
        SvdFactors { u: t.v, s: t.s, v: t.u }
    };

    let err = factors.orthonormality_error();
    if err > 1e-8 {
        return Err(NumericsError::Orthonormality(err));
    }
    Ok(factors)
}

/// Smallest `K` whose leading squared singular values hold at least
/// `energy_fraction` of the total energy, clamped to `len − 1`.
pub fn choose_rank(s: &[f64], energy_fraction: f64) -> Result<usize, NumericsError> {
    if !(energy_fraction > 0.0 && energy_fraction <= 1.0) {
        return Err(NumericsError::BadEnergyFraction(energy_fraction));
    }
    if s.len() < 2 {
        return Err(NumericsError::EmptySpectrum);
    }
    let total: f64 = s.iter().map(|v| v * v).sum();
    if total == 0.0 {
        return Err(NumericsError::EmptySpectrum);
    }
    let mut acc = 0.0;
    let mut k = s.len();
    for (i, v) in s.iter().enumerate() {
        acc += v * v;
        if acc >= energy_fraction * total {
            k = i + 1;
            break;
        }
    }
    Ok(k.min(s.len() - 1).max(1))
}

/// `1 − a·b/(‖a‖‖b‖)`, in `[0, 2]`.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64, NumericsError> {
    if a.len() != b.len() {
        return Err(NumericsError::DimensionMismatch { expected: a.len(), got: b.len() });
    }
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(NumericsError::ZeroNormVector);
    }
    Ok(1.0 - dot / (na.sqrt() * nb.sqrt()))
}

// ── column-major working storage ──────────────────────────────────────────

struct ColMat {
    m: usize,
    n: usize,
    data: Vec<f64>,
}

impl ColMat {
    fn from_array(a: &Array2<f64>) -> Self {
        let (m, n) = a.dim();
        let mut data = vec![0.0; m * n];
        for j in 0..n {
            for i in 0..m {
                data[j * m + i] = a[[i, j]];
            }
        }
        Self { m, n, data }
    }

    fn from_array_transposed(a: &Array2<f64>) -> Self {
        let (rows, cols) = a.dim();
        // Column-major of Aᵀ is row-major of A.
        let mut data = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                data[i * cols + j] = a[[i, j]];
            }
        }
        Self { m: cols, n: rows, data }
    }

    fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for j in 0..n {
            data[j * n + j] = 1.0;
        }
        Self { m: n, n, data }
    }

    fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.m..(j + 1) * self.m]
    }

    fn col_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.m..(j + 1) * self.m]
    }

    fn two_cols_mut(&mut self, p: usize, q: usize) -> (&mut [f64], &mut [f64]) {
        debug_assert!(p < q);
        let (left, right) = self.data.split_at_mut(q * self.m);
        (&mut left[p * self.m..p * self.m + self.m], &mut right[..self.m])
    }

    fn to_array(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.m, self.n), |(i, j)| self.data[j * self.m + i])
    }
}

// ── Householder QR ─────────────────────────────────────────────────────────

/// In-place Householder QR of an m×n (m ≥ n) matrix. Reflector vectors stay
/// below the diagonal (with implicit unit leading entry), R on and above it.
fn householder_qr(a: &mut ColMat) -> Vec<f64> {
    let (m, n) = (a.m, a.n);
    let mut taus = vec![0.0; n];
    for j in 0..n {
        let (alpha, xnorm2) = {
            let cj = a.col(j);
            let alpha = cj[j];
            let xnorm2: f64 = cj[j + 1..m].iter().map(|v| v * v).sum();
            (alpha, xnorm2)
        };
        if xnorm2 == 0.0 {
            taus[j] = 0.0;
            continue;
        }
        let beta = -alpha.signum() * (alpha * alpha + xnorm2).sqrt();
        let tau = (beta - alpha) / beta;
        let scale = 1.0 / (alpha - beta);
        {
            let cj = a.col_mut(j);
            for v in &mut cj[j + 1..m] {
                *v *= scale;
            }
            cj[j] = beta;
        }
        taus[j] = tau;
        // Apply H = I − τ v vᵀ to the trailing columns.
        for c in j + 1..n {
            let w = {
                let (cj, cc) = (a.col(j), a.col(c));
                let mut w = cc[j];
                for i in j + 1..m {
                    w += cj[i] * cc[i];
                }
                w
            };
            let tw = tau * w;
            let (cj, cc) = a.two_cols_mut(j, c);
            cc[j] -= tw;
            for i in j + 1..m {
                cc[i] -= tw * cj[i];
            }
        }
    }
    taus
}

/// Apply the stored Q (reflectors of `qr`, taus) to `b` in place: `b ← Q·b`.
fn apply_q(qr: &ColMat, taus: &[f64], b: &mut ColMat) {
    let (m, n) = (qr.m, qr.n);
    debug_assert_eq!(b.m, m);
    for j in (0..n).rev() {
        if taus[j] == 0.0 {
            continue;
        }
        let vj = qr.col(j);
        for c in 0..b.n {
            let cc = b.col_mut(c);
            let mut w = cc[j];
            for i in j + 1..m {
                w += vj[i] * cc[i];
            }
            let tw = taus[j] * w;
            cc[j] -= tw;
            for i in j + 1..m {
                cc[i] -= tw * vj[i];
            }
        }
    }
}

// ── one-sided Jacobi ───────────────────────────────────────────────────────

const JACOBI_MAX_SWEEPS: usize = 60;
const JACOBI_TOL: f64 = 1e-14;

/// Orthogonalize the columns of `w` by plane rotations, accumulating them
/// into `v`. On return `w = U·diag(S)` with mutually orthogonal columns.
fn one_sided_jacobi(w: &mut ColMat, v: &mut ColMat) -> Result<(), NumericsError> {
    let n = w.n;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n.saturating_sub(1) {
            for q in p + 1..n {
                let (app, aqq, apq) = {
                    let (cp, cq) = (w.col(p), w.col(q));
                    let mut app = 0.0;
                    let mut aqq = 0.0;
                    let mut apq = 0.0;
                    for i in 0..w.m {
                        app += cp[i] * cp[i];
                        aqq += cq[i] * cq[i];
                        apq += cp[i] * cq[i];
                    }
                    (app, aqq, apq)
                };
                if app == 0.0 || aqq == 0.0 || apq.abs() <= JACOBI_TOL * (app * aqq).sqrt() {
                    continue;
                }
                rotated = true;
                let tau = (aqq - app) / (2.0 * apq);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_pair(w, p, q, c, s);
                rotate_pair(v, p, q, c, s);
            }
        }
        if !rotated {
            return Ok(());
        }
    }
    Err(NumericsError::NonConvergence)
}

fn rotate_pair(mat: &mut ColMat, p: usize, q: usize, c: f64, s: f64) {
    let (cp, cq) = mat.two_cols_mut(p, q);
    for i in 0..cp.len() {
        let a = cp[i];
        let b = cq[i];
        cp[i] = c * a - s * b;
        cq[i] = s * a + c * b;
    }
}

/// SVD of an m×n matrix with m ≥ n, truncated to rank `k`.
fn svd_tall(mut a: ColMat, k: usize) -> Result<SvdFactors, NumericsError> {
    let (m, n) = (a.m, a.n);
    if m >= 2 * n {
        // QR reduction: factor A = Q·R, run Jacobi on R, lift U back through Q.
        let taus = householder_qr(&mut a);
        let mut r = ColMat { m: n, n, data: vec![0.0; n * n] };
        for j in 0..n {
            let src = a.col(j);
            let dst = r.col_mut(j);
            dst[..=j].copy_from_slice(&src[..=j]);
        }
        let mut v = ColMat::identity(n);
        one_sided_jacobi(&mut r, &mut v)?;
        let (s, u_small, v) = collect_factors(r, v, k);
        let mut u_full = ColMat { m, n: k, data: vec![0.0; m * k] };
        for j in 0..k {
            u_full.col_mut(j)[..n].copy_from_slice(u_small.col(j));
        }
        apply_q(&a, &taus, &mut u_full);
        Ok(SvdFactors { u: u_full.to_array(), s, v: v.to_array() })
    } else {
        let mut v = ColMat::identity(n);
        one_sided_jacobi(&mut a, &mut v)?;
        let (s, u, v) = collect_factors(a, v, k);
        Ok(SvdFactors { u: u.to_array(), s, v: v.to_array() })
    }
}

/// Sort converged columns by norm descending (ties by original index),
/// normalize into U and truncate everything to rank `k`.
fn collect_factors(w: ColMat, v: ColMat, k: usize) -> (Vec<f64>, ColMat, ColMat) {
    let n = w.n;
    let norms: Vec<f64> = (0..n).map(|j| w.col(j).iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| norms[b].partial_cmp(&norms[a]).unwrap().then(a.cmp(&b)));

    let mut s = Vec::with_capacity(k);
    let mut u = ColMat { m: w.m, n: k, data: vec![0.0; w.m * k] };
    let mut vk = ColMat { m: v.m, n: k, data: vec![0.0; v.m * k] };
    for (dst, &src) in order.iter().enumerate().take(k) {
        let sigma = norms[src];
        s.push(sigma);
        let uc = u.col_mut(dst);
        uc.copy_from_slice(w.col(src));
        if sigma > 0.0 {
            let inv = 1.0 / sigma;
            for x in uc.iter_mut() {
                *x *= inv;
            }
        }
        vk.col_mut(dst).copy_from_slice(v.col(src));
    }
    (s, u, vk)
}
