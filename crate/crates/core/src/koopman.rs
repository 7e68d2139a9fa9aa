//! Batch EDMD solvers and the recursive (streaming) Koopman update.
//!
//! Convention shared by every module: the operator acts on lifted column
//! vectors, `K·Ψ(x) ≈ Ψ(y)`, i.e. it minimizes `‖K·Y_p − Y_f‖_F`.
//!
//! The streaming state carries the running sums
//!
//! ```text
//! φ_M = δI + Σ Ψ(xᵢ)Ψ(xᵢ)ᵀ      (stored as its inverse φ_M⁻¹)
//! z_M =      Σ Ψ(yᵢ)Ψ(xᵢ)ᵀ
//! ```
//!
//! and the operator `K_M = z_M·φ_M⁻¹`. Each sample refreshes `φ⁻¹` with the
//! Sherman–Morrison rank-one downdate, so no `K × K` inverse or
//! factorization is ever formed while streaming.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dictionary::Dictionary;
use crate::error::{Error, Result};

/// One `(x, y)` sample with `y = T(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotPair {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
}

impl SnapshotPair {
    pub fn new(x: DVector<f64>, y: DVector<f64>) -> Self {
        SnapshotPair { x, y }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectReason {
    NonFiniteState,
    NonFiniteLift,
    NonFiniteUpdate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateOutcome {
    Accepted,
    /// The sample was discarded and the stream left untouched.
    Rejected(RejectReason),
}

/// Mutable streaming state. Single writer: updates must arrive in order.
#[derive(Debug, Clone)]
pub struct KoopmanStream {
    dict: Dictionary,
    delta: f64,
    phi_inv: DMatrix<f64>,
    z: DMatrix<f64>,
    operator: DMatrix<f64>,
    count: usize,
    rejected: usize,
    last_denominator: f64,
    // scratch
    u: Vec<f64>,
    v: Vec<f64>,
    w: Vec<f64>,
    e: Vec<f64>,
}

impl KoopmanStream {
    /// `φ₀ = δI`, `z₀ = 0`, so `φ₀⁻¹ = I/δ` and `K₀ = 0`.
    pub fn new(dict: Dictionary, delta: f64) -> Result<Self> {
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::invalid(format!(
                "delta must be positive and finite, got {delta}"
            )));
        }
        let k = dict.feature_dim();
        Ok(KoopmanStream {
            dict,
            delta,
            phi_inv: DMatrix::from_diagonal_element(k, k, 1.0 / delta),
            z: DMatrix::zeros(k, k),
            operator: DMatrix::zeros(k, k),
            count: 0,
            rejected: 0,
            last_denominator: f64::NAN,
            u: vec![0.0; k],
            v: vec![0.0; k],
            w: vec![0.0; k],
            e: vec![0.0; k],
        })
    }

    pub fn dictionary(&self) -> &Dictionary {
        &self.dict
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Number of accepted samples `M`.
    pub fn count(&self) -> usize {
        self.count
    }

    pub fn rejected(&self) -> usize {
        self.rejected
    }

    /// Running `φ_M⁻¹`.
    pub fn phi_inv(&self) -> &DMatrix<f64> {
        &self.phi_inv
    }

    /// Running `z_M = Σ Ψ(yᵢ)Ψ(xᵢ)ᵀ`.
    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    /// `1 + uᵀφ⁻¹u` from the most recent accepted update (NaN before any).
    pub fn last_denominator(&self) -> f64 {
        self.last_denominator
    }

    pub fn update(&mut self, pair: &SnapshotPair) -> Result<UpdateOutcome> {
        self.update_slices(pair.x.as_slice(), pair.y.as_slice())
    }

    /// Lifts `(x, y)` and folds the pair into the stream.
    pub fn update_slices(&mut self, x: &[f64], y: &[f64]) -> Result<UpdateOutcome> {
        let n = self.dict.state_dim();
        if x.len() != n || y.len() != n {
            return Err(Error::invalid(format!(
                "pair dimensions ({}, {}) do not match state dimension {n}",
                x.len(),
                y.len()
            )));
        }
        if x.iter().chain(y).any(|v| !v.is_finite()) {
            self.rejected += 1;
            return Ok(UpdateOutcome::Rejected(RejectReason::NonFiniteState));
        }
        let mut u = std::mem::take(&mut self.u);
        let mut v = std::mem::take(&mut self.v);
        self.dict.lift_into(x, &mut u)?;
        self.dict.lift_into(y, &mut v)?;
        let out = self.update_lifted(&u, &v);
        self.u = u;
        self.v = v;
        out
    }

    /// Folds an already lifted pair `(u, v) = (Ψ(x), Ψ(y))` into the stream.
    pub fn update_lifted(&mut self, u: &[f64], v: &[f64]) -> Result<UpdateOutcome> {
        let k = self.dict.feature_dim();
        if u.len() != k || v.len() != k {
            return Err(Error::invalid(format!(
                "lifted pair lengths ({}, {}) do not match feature dimension {k}",
                u.len(),
                v.len()
            )));
        }
        if u.iter().chain(v).any(|x| !x.is_finite()) {
            self.rejected += 1;
            return Ok(UpdateOutcome::Rejected(RejectReason::NonFiniteLift));
        }

        let denom = gain_sweep(
            &self.phi_inv,
            &self.operator,
            u,
            v,
            &mut self.w,
            &mut self.e,
        );
        if !denom.is_finite() || self.w.iter().chain(&self.e).any(|x| !x.is_finite()) {
            self.rejected += 1;
            return Ok(UpdateOutcome::Rejected(RejectReason::NonFiniteUpdate));
        }
        let inv_d = 1.0 / denom;

        rank_one_sweep(
            &mut self.operator,
            &mut self.phi_inv,
            &mut self.z,
            u,
            v,
            &self.w,
            &self.e,
            inv_d,
        );
        self.count += 1;
        self.last_denominator = denom;
        Ok(UpdateOutcome::Accepted)
    }

    /// `K_M`. Pure read; valid (zero) before the first sample.
    pub fn current_operator(&self) -> DMatrix<f64> {
        self.operator.clone()
    }

    /// `z_M·φ_M⁻¹` evaluated literally from the stored sums.
    ///
    /// Agrees with [`current_operator`](Self::current_operator) in exact
    /// arithmetic, but inherits the cancellation in `φ⁻¹` when δ is tiny.
    pub fn operator_from_sums(&self) -> DMatrix<f64> {
        &self.z * &self.phi_inv
    }

    /// Freezes the current operator into an independent model.
    pub fn snapshot(&self) -> KoopmanModel {
        KoopmanModel {
            k_matrix: self.current_operator(),
            dict: self.dict.clone(),
            projection: None,
            sample_count: self.count,
            delta: self.delta,
            train_rows: None,
        }
    }
}

/// Returns `1 + uᵀw` after setting `w = φ⁻¹u` (φ⁻¹ is symmetric, so row i
/// is column i) and `e = v − K·u` in a single column sweep.
fn gain_sweep(
    phi_inv: &DMatrix<f64>,
    operator: &DMatrix<f64>,
    u: &[f64],
    v: &[f64],
    w: &mut [f64],
    e: &mut [f64],
) -> f64 {
    let k = u.len();
    e.copy_from_slice(v);
    let cols = phi_inv
        .as_slice()
        .chunks_exact(k)
        .zip(operator.as_slice().chunks_exact(k));
    for ((wi, (pcol, kcol)), &ui) in w.iter_mut().zip(cols).zip(u) {
        *wi = dot(pcol, u);
        if ui != 0.0 {
            for (ej, &kj) in e.iter_mut().zip(kcol) {
                *ej -= ui * kj;
            }
        }
    }
    1.0 + dot(u, w)
}

/// Column j of each recursion:
///   K ← K + e·(φ⁻¹u)ᵀ/d, algebraically equal to z_M·φ_M⁻¹;
///   φ⁻¹ ← φ⁻¹ − w·wᵀ/d, exactly symmetric since wᵢwⱼ = wⱼwᵢ;
///   z ← z + v·uᵀ.
#[allow(clippy::too_many_arguments)]
fn rank_one_sweep(
    operator: &mut DMatrix<f64>,
    phi_inv: &mut DMatrix<f64>,
    z: &mut DMatrix<f64>,
    u: &[f64],
    v: &[f64],
    w: &[f64],
    e: &[f64],
    inv_d: f64,
) {
    let k = u.len();
    let cols = operator
        .as_mut_slice()
        .chunks_exact_mut(k)
        .zip(phi_inv.as_mut_slice().chunks_exact_mut(k))
        .zip(z.as_mut_slice().chunks_exact_mut(k));
    for (((kcol, pcol), zcol), (&wj, &uj)) in cols.zip(w.iter().zip(u)) {
        let g = wj * inv_d;
        for (((kij, pij), zij), ((&ei, &wi), &vi)) in kcol
            .iter_mut()
            .zip(pcol.iter_mut())
            .zip(zcol.iter_mut())
            .zip(e.iter().zip(w).zip(v))
        {
            *kij += g * ei;
            *pij -= (wi * wj) * inv_d;
            *zij += uj * vi;
        }
    }
}

#[inline(always)]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Eight independent partial sums so the reduction is not latency-bound.
    let mut acc = [0.0; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (xa, xb) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += xa[l] * xb[l];
        }
    }
    acc.iter().sum::<f64>() + tail
}

/// Streams the column pairs of `(xp, xf)` in order into a fresh stream.
pub fn stream_fit(
    dict: &Dictionary,
    xp: &DMatrix<f64>,
    xf: &DMatrix<f64>,
    delta: f64,
) -> Result<KoopmanStream> {
    check_pair_shapes(xp, xf)?;
    let mut s = KoopmanStream::new(dict.clone(), delta)?;
    for (x, y) in xp.column_iter().zip(xf.column_iter()) {
        s.update_slices(x.as_slice(), y.as_slice())?;
    }
    Ok(s)
}

fn check_pair_shapes(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::invalid(format!(
            "snapshot matrices differ in shape: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Moore–Penrose pseudo-inverse via SVD. Singular values at or below
/// `max(rows, cols)·ε·σ_max` are treated as zero.
pub fn pseudo_inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (r, c) = a.shape();
    if r == 0 || c == 0 {
        return Ok(DMatrix::zeros(c, r));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("pseudo-inverse of a non-finite matrix"));
    }
    let svd = nalgebra::SVD::try_new(a.clone(), true, true, f64::EPSILON, 0)
        .ok_or_else(|| Error::numerical("SVD did not converge"))?;
    let smax = svd.singular_values.max();
    let cutoff = r.max(c) as f64 * f64::EPSILON * smax;
    svd.pseudo_inverse(cutoff).map_err(Error::numerical)
}

/// `Y_f·Y_p†`, the minimum-norm minimizer of `‖K·Y_p − Y_f‖_F`.
pub fn fit_batch_pinv(yp: &DMatrix<f64>, yf: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_pair_shapes(yp, yf)?;
    let k = yp.nrows();
    if yp.ncols() == 0 {
        return Ok(DMatrix::zeros(k, k));
    }
    Ok(yf * pseudo_inverse(yp)?)
}

/// `Y_f·Y_pᵀ·(Y_p·Y_pᵀ + δI)⁻¹` via a Cholesky factorization.
///
/// This is the closed form the streaming recursion reproduces when it is
/// initialized with `φ₀ = δI`.
pub fn fit_batch_ridge(yp: &DMatrix<f64>, yf: &DMatrix<f64>, delta: f64) -> Result<DMatrix<f64>> {
    check_pair_shapes(yp, yf)?;
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::invalid(format!(
            "delta must be positive and finite, got {delta}"
        )));
    }
    let k = yp.nrows();
    if yp.ncols() == 0 {
        return Ok(DMatrix::zeros(k, k));
    }
    let ypt = yp.transpose();
    let mut gram = yp * &ypt;
    for i in 0..k {
        gram[(i, i)] += delta;
    }
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::numerical("ridge Gram matrix is not positive definite"))?;
    // G·Kᵀ = Y_p·Y_fᵀ, with G symmetric.
    let rhs = yp * yf.transpose();
    Ok(chol.solve(&rhs).transpose())
}

/// A frozen operator with its dictionary and optional state projection `C`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelDoc", into = "ModelDoc")]
pub struct KoopmanModel {
    pub k_matrix: DMatrix<f64>,
    pub dict: Dictionary,
    /// `N × K` least-squares map from features back to states.
    pub projection: Option<DMatrix<f64>>,
    pub sample_count: usize,
    pub delta: f64,
    /// Number of leading trajectory rows the model was trained on, when known.
    pub train_rows: Option<usize>,
}

impl KoopmanModel {
    pub fn new(
        k_matrix: DMatrix<f64>,
        dict: Dictionary,
        sample_count: usize,
        delta: f64,
    ) -> Result<Self> {
        let k = dict.feature_dim();
        if k_matrix.shape() != (k, k) {
            return Err(Error::invalid(format!(
                "operator shape {:?} does not match feature dimension {k}",
                k_matrix.shape()
            )));
        }
        if k_matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("operator contains non-finite entries"));
        }
        Ok(KoopmanModel {
            k_matrix,
            dict,
            projection: None,
            sample_count,
            delta,
            train_rows: None,
        })
    }

    pub fn with_projection(mut self, c: DMatrix<f64>) -> Result<Self> {
        let want = (self.dict.state_dim(), self.dict.feature_dim());
        if c.shape() != want {
            return Err(Error::invalid(format!(
                "projection shape {:?}, expected {want:?}",
                c.shape()
            )));
        }
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("projection contains non-finite entries"));
        }
        self.projection = Some(c);
        Ok(self)
    }

    pub fn with_train_rows(mut self, rows: usize) -> Self {
        self.train_rows = Some(rows);
        self
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    dict: Dictionary,
    delta: f64,
    sample_count: usize,
    k_matrix: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    projection: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    train_rows: Option<usize>,
}

pub(crate) fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub(crate) fn from_rows(rows: &[Vec<f64>], ncols: usize) -> Result<DMatrix<f64>> {
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::invalid(format!(
            "ragged matrix rows, expected {ncols} columns"
        )));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &flat))
}

impl From<KoopmanModel> for ModelDoc {
    fn from(m: KoopmanModel) -> Self {
        ModelDoc {
            k_matrix: to_rows(&m.k_matrix),
            projection: m.projection.as_ref().map(to_rows),
            dict: m.dict,
            delta: m.delta,
            sample_count: m.sample_count,
            train_rows: m.train_rows,
        }
    }
}

impl TryFrom<ModelDoc> for KoopmanModel {
    type Error = Error;

    fn try_from(doc: ModelDoc) -> Result<Self> {
        let k = doc.dict.feature_dim();
        let kmat = from_rows(&doc.k_matrix, k)?;
        let mut model = KoopmanModel::new(kmat, doc.dict, doc.sample_count, doc.delta)?;
        if let Some(rows) = doc.projection {
            let c = from_rows(&rows, k)?;
            model = model.with_projection(c)?;
        }
        model.train_rows = doc.train_rows;
        Ok(model)
    }
}
