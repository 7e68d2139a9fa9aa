//! Observable dictionaries and the lifting map `Ψ: ℝᴺ → ℝᴷ`.
//!
//! Three kinds are supported:
//!
//! * `Linear`: `Ψ(x) = x`, so `K = N` and EDMD reduces to DMD.
//! * `GaussianRbf`: `ψⱼ(x) = exp(−γ‖x − cⱼ‖²)` over a set of centers.
//! * `Composite`: the raw state coordinates followed by the RBF block.
//!
//! A dictionary is immutable once built and can be shared across threads.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DictionaryKind {
    Linear,
    GaussianRbf,
    Composite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DictionaryDoc", into = "DictionaryDoc")]
pub struct Dictionary {
    kind: DictionaryKind,
    state_dim: usize,
    /// Centers stored one per column (`N × K_rbf`) for contiguous access.
    centers: DMatrix<f64>,
    gamma: f64,
}

impl Dictionary {
    /// The identity dictionary on `ℝᴺ`.
    pub fn linear(state_dim: usize) -> Result<Self> {
        if state_dim == 0 {
            return Err(Error::invalid("state_dim must be at least 1"));
        }
        Ok(Dictionary {
            kind: DictionaryKind::Linear,
            state_dim,
            centers: DMatrix::zeros(state_dim, 0),
            gamma: 0.0,
        })
    }

    /// Gaussian RBF dictionary over `centers` (one center per row, `K_rbf × N`).
    ///
    /// With `include_state` the raw coordinates are prepended and the result
    /// is a `Composite` dictionary with `K = N + K_rbf`.
    pub fn rbf(centers: &DMatrix<f64>, gamma: f64, include_state: bool) -> Result<Self> {
        if centers.nrows() == 0 || centers.ncols() == 0 {
            return Err(Error::invalid(
                "rbf dictionary needs at least one center of dimension >= 1",
            ));
        }
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::invalid(format!(
                "rbf gamma must be positive and finite, got {gamma}"
            )));
        }
        if centers.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("rbf centers must be finite"));
        }
        Ok(Dictionary {
            kind: if include_state {
                DictionaryKind::Composite
            } else {
                DictionaryKind::GaussianRbf
            },
            state_dim: centers.ncols(),
            centers: centers.transpose(),
            gamma,
        })
    }

    /// RBF dictionary whose width comes from [`median_heuristic_gamma`].
    pub fn rbf_median(centers: &DMatrix<f64>, include_state: bool) -> Result<Self> {
        let gamma = median_heuristic_gamma(centers)?;
        Self::rbf(centers, gamma, include_state)
    }

    pub fn kind(&self) -> DictionaryKind {
        self.kind
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn rbf_count(&self) -> usize {
        self.centers.ncols()
    }

    pub fn feature_dim(&self) -> usize {
        match self.kind {
            DictionaryKind::Linear => self.state_dim,
            DictionaryKind::GaussianRbf => self.rbf_count(),
            DictionaryKind::Composite => self.state_dim + self.rbf_count(),
        }
    }

    pub fn include_state(&self) -> bool {
        self.kind != DictionaryKind::GaussianRbf
    }

    /// RBF inverse width; `None` for linear dictionaries.
    pub fn gamma(&self) -> Option<f64> {
        (self.kind != DictionaryKind::Linear).then_some(self.gamma)
    }

    /// Centers as a `K_rbf × N` matrix (empty for linear dictionaries).
    pub fn centers(&self) -> DMatrix<f64> {
        self.centers.transpose()
    }

    /// Writes `Ψ(x)` into `out` without allocating.
    pub fn lift_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        if x.len() != self.state_dim {
            return Err(Error::invalid(format!(
                "state has dimension {}, dictionary expects {}",
                x.len(),
                self.state_dim
            )));
        }
        if out.len() != self.feature_dim() {
            return Err(Error::invalid(format!(
                "output has length {}, dictionary lifts to {}",
                out.len(),
                self.feature_dim()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("state contains non-finite entries"));
        }
        let rbf_out = match self.kind {
            DictionaryKind::Linear => {
                out.copy_from_slice(x);
                return Ok(());
            }
            DictionaryKind::GaussianRbf => out,
            DictionaryKind::Composite => {
                let (head, tail) = out.split_at_mut(self.state_dim);
                head.copy_from_slice(x);
                tail
            }
        };
        for (slot, center) in rbf_out.iter_mut().zip(self.centers.column_iter()) {
            let sq: f64 = center
                .iter()
                .zip(x)
                .map(|(c, v)| {
                    let d = v - c;
                    d * d
                })
                .sum();
            *slot = (-self.gamma * sq).exp();
        }
        Ok(())
    }

    pub fn lift(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.feature_dim());
        self.lift_into(x.as_slice(), out.as_mut_slice())?;
        Ok(out)
    }

    /// Lifts every column of an `N × M` matrix into a `K × M` matrix.
    pub fn lift_batch(&self, states: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if states.nrows() != self.state_dim {
            return Err(Error::invalid(format!(
                "states have {} rows, dictionary expects {}",
                states.nrows(),
                self.state_dim
            )));
        }
        let k = self.feature_dim();
        let mut out = DMatrix::zeros(k, states.ncols());
        for (src, mut dst) in states.column_iter().zip(out.column_iter_mut()) {
            let x: Vec<f64> = src.iter().copied().collect();
            self.lift_into(&x, dst.as_mut_slice())?;
        }
        Ok(out)
    }
}

/// Picks `k` distinct columns of `data` (`N × M`) as RBF centers by seeded
/// uniform sampling without replacement. Returns a `k × N` matrix.
pub fn centers_from_data(data: &DMatrix<f64>, k: usize, seed: u64) -> Result<DMatrix<f64>> {
    let m = data.ncols();
    if k == 0 {
        return Err(Error::invalid("center count must be at least 1"));
    }
    if k > m {
        return Err(Error::invalid(format!(
            "cannot draw {k} centers from {m} samples"
        )));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("center source data must be finite"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = rand::seq::index::sample(&mut rng, m, k);
    let mut centers = DMatrix::zeros(k, data.nrows());
    for (row, col) in picks.iter().enumerate() {
        centers.set_row(row, &data.column(col).transpose());
    }
    Ok(centers)
}

/// `1 / median²` of the pairwise distances between centers (rows).
///
/// Zero distances from duplicated centers are ignored; with fewer than two
/// distinct centers the width falls back to `γ = 1`.
pub fn median_heuristic_gamma(centers: &DMatrix<f64>) -> Result<f64> {
    if centers.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("centers must be finite"));
    }
    let n = centers.nrows();
    let mut dists = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let d = (centers.row(i) - centers.row(j)).norm();
            if d > 0.0 {
                dists.push(d);
            }
        }
    }
    if dists.is_empty() {
        return Ok(1.0);
    }
    dists.sort_by(f64::total_cmp);
    let mid = dists.len() / 2;
    let median = if dists.len() % 2 == 0 {
        0.5 * (dists[mid - 1] + dists[mid])
    } else {
        dists[mid]
    };
    Ok(1.0 / (median * median))
}

/// On-disk form: `{kind, state_dim, gamma, include_state, centers}` with
/// centers as an array of rows.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DictionaryDoc {
    kind: DictionaryKind,
    state_dim: usize,
    #[serde(default)]
    gamma: Option<f64>,
    #[serde(default)]
    include_state: bool,
    #[serde(default)]
    centers: Vec<Vec<f64>>,
}

impl From<Dictionary> for DictionaryDoc {
    fn from(d: Dictionary) -> Self {
        DictionaryDoc {
            kind: d.kind,
            state_dim: d.state_dim,
            gamma: d.gamma(),
            include_state: d.include_state(),
            centers: d
                .centers
                .column_iter()
                .map(|c| c.iter().copied().collect())
                .collect(),
        }
    }
}

impl TryFrom<DictionaryDoc> for Dictionary {
    type Error = Error;

    fn try_from(doc: DictionaryDoc) -> Result<Self> {
        match doc.kind {
            DictionaryKind::Linear => {
                if !doc.centers.is_empty() {
                    return Err(Error::invalid("linear dictionary cannot carry centers"));
                }
                Dictionary::linear(doc.state_dim)
            }
            kind => {
                let include_state = kind == DictionaryKind::Composite;
                if doc.include_state != include_state {
                    return Err(Error::invalid(format!(
                        "include_state={} contradicts kind {:?}",
                        doc.include_state, kind
                    )));
                }
                let gamma = doc
                    .gamma
                    .ok_or_else(|| Error::invalid("rbf dictionary requires gamma"))?;
                if doc.centers.iter().any(|c| c.len() != doc.state_dim) {
                    return Err(Error::invalid("center dimension does not match state_dim"));
                }
                let flat: Vec<f64> = doc.centers.iter().flatten().copied().collect();
                let centers = DMatrix::from_row_slice(doc.centers.len(), doc.state_dim, &flat);
                Dictionary::rbf(&centers, gamma, include_state)
            }
        }
    }
}
