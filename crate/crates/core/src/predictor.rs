//! Linear Koopman predictor: lift the initial state once, advance it in
//! feature space with `K`, and read states back through a least-squares
//! projection `C`:
//!
//! ```text
//! z₀ = Ψ(x₀),   zₙ = K·zₙ₋₁,   x̄ₙ = C·zₙ
//! ```

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::koopman::{pseudo_inverse, stream_fit, KoopmanModel};

/// `C = X·Ψ(X)†` together with its squared residual `Σᵢ ‖xᵢ − C·Ψ(xᵢ)‖²`.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub matrix: DMatrix<f64>,
    pub residual: f64,
}

pub fn fit_projection(dict: &Dictionary, states: &DMatrix<f64>) -> Result<Projection> {
    if states.ncols() == 0 {
        return Err(Error::invalid("projection needs at least one state"));
    }
    let lifted = dict.lift_batch(states)?;
    let matrix = states * pseudo_inverse(&lifted)?;
    let residual = (states - &matrix * &lifted).norm_squared();
    Ok(Projection { matrix, residual })
}

/// Predicted states, possibly cut short by numerical overflow.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// `N × L` with column `n` the prediction at step `n`.
    pub states: DMatrix<f64>,
    /// First step whose propagated value was non-finite, if any.
    pub overflow_at: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct Predictor {
    model: KoopmanModel,
}

impl Predictor {
    pub fn new(model: KoopmanModel) -> Result<Self> {
        if model.projection.is_none() {
            return Err(Error::invalid(
                "predictor requires a model with a projection matrix",
            ));
        }
        Ok(Predictor { model })
    }

    pub fn model(&self) -> &KoopmanModel {
        &self.model
    }

    /// Columns `0..=n_steps` of `C·Kⁿ·Ψ(x₀)`, by repeated matrix-vector products.
    pub fn predict(&self, x0: &DVector<f64>, n_steps: usize) -> Result<Prediction> {
        let c = self.model.projection.as_ref().expect("checked in new");
        let k = &self.model.k_matrix;
        let mut z = self.model.dict.lift(x0)?;
        let mut cols: Vec<DVector<f64>> = Vec::with_capacity(n_steps + 1);
        let mut overflow_at = None;
        for step in 0..=n_steps {
            if step > 0 {
                z = k * &z;
            }
            let x = c * &z;
            if z.iter().chain(x.iter()).any(|v| !v.is_finite()) {
                overflow_at = Some(step);
                break;
            }
            cols.push(x);
        }
        let states = if cols.is_empty() {
            DMatrix::zeros(c.nrows(), 0)
        } else {
            DMatrix::from_columns(&cols)
        };
        Ok(Prediction {
            states,
            overflow_at,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mse {
    pub per_state: Vec<f64>,
    pub mean: f64,
}

impl Mse {
    fn overflowed(n: usize) -> Self {
        Mse {
            per_state: vec![f64::INFINITY; n],
            mean: f64::INFINITY,
        }
    }
}

/// Per-state mean squared error over time and its average across states.
pub fn mse(predicted: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<Mse> {
    if predicted.shape() != truth.shape() {
        return Err(Error::invalid(format!(
            "prediction shape {:?} differs from truth {:?}",
            predicted.shape(),
            truth.shape()
        )));
    }
    let (n, l) = predicted.shape();
    if n == 0 || l == 0 {
        return Err(Error::invalid("mse of an empty matrix"));
    }
    let per_state: Vec<f64> = (0..n)
        .map(|i| {
            let s: f64 = (0..l)
                .map(|t| (predicted[(i, t)] - truth[(i, t)]).powi(2))
                .sum();
            s / l as f64
        })
        .collect();
    let mean = per_state.iter().sum::<f64>() / n as f64;
    Ok(Mse { per_state, mean })
}

#[derive(Debug, Clone, PartialEq)]
pub struct HorizonPoint {
    pub train_size: usize,
    pub mse: Mse,
    pub overflow_at: Option<usize>,
}

/// Trains on the first `M` pairs of `trajectory` for each `M` in `train_sizes`
/// and scores the prediction over the inclusive window `test_window`.
///
/// The `M` pairs use trajectory columns `0..=M`, which must all precede the
/// window start. Both `K` and `C` are fit on those columns only. Overflowing
/// predictions score an infinite MSE.
pub fn evaluate_horizon(
    dict: &Dictionary,
    delta: f64,
    train_sizes: &[usize],
    trajectory: &DMatrix<f64>,
    test_window: (usize, usize),
) -> Result<Vec<HorizonPoint>> {
    let (start, end) = test_window;
    if start > end || end >= trajectory.ncols() {
        return Err(Error::invalid(format!(
            "test window {start}..={end} is outside a trajectory of {} states",
            trajectory.ncols()
        )));
    }
    for &m in train_sizes {
        if m == 0 {
            return Err(Error::invalid("training size must be at least 1"));
        }
        if m >= start {
            return Err(Error::invalid(format!(
                "training size {m} reaches the test window starting at {start}"
            )));
        }
    }
    let truth = trajectory.columns(start, end - start + 1).into_owned();
    let x0 = trajectory.column(start).into_owned();
    train_sizes
        .iter()
        .map(|&m| {
            let xp = trajectory.columns(0, m).into_owned();
            let xf = trajectory.columns(1, m).into_owned();
            let stream = stream_fit(dict, &xp, &xf, delta)?;
            let proj = fit_projection(dict, &trajectory.columns(0, m + 1).into_owned())?;
            let model = stream.snapshot().with_projection(proj.matrix)?;
            let pred = Predictor::new(model)?.predict(&x0, end - start)?;
            let score = match pred.overflow_at {
                Some(_) => Mse::overflowed(trajectory.nrows()),
                None => mse(&pred.states, &truth)?,
            };
            Ok(HorizonPoint {
                train_size: m,
                mse: score,
                overflow_at: pred.overflow_at,
            })
        })
        .collect()
}

/// CSV with columns `train_size,state_index,mse,mean_mse`.
pub fn write_horizon_csv<W: Write>(mut out: W, points: &[HorizonPoint]) -> Result<()> {
    writeln!(out, "train_size,state_index,mse,mean_mse")?;
    for p in points {
        for (i, v) in p.mse.per_state.iter().enumerate() {
            writeln!(
                out,
                "{},{},{},{}",
                p.train_size,
                i,
                fmt_f64(*v),
                fmt_f64(p.mse.mean)
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::centers_from_data;
    use crate::koopman::fit_batch_pinv;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model_with(k: DMatrix<f64>, dict: Dictionary, c: DMatrix<f64>) -> Predictor {
        Predictor::new(
            KoopmanModel::new(k, dict, 0, 1.0)
                .unwrap()
                .with_projection(c)
                .unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn linear_projection_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let x = DMatrix::from_fn(3, 10, |_, _| rng.random_range(-1.0..1.0));
        let p = fit_projection(&Dictionary::linear(3).unwrap(), &x).unwrap();
        assert!((p.matrix - DMatrix::<f64>::identity(3, 3)).amax() < 1e-12);
        assert!(p.residual < 1e-20);
    }

    #[test]
    fn composite_projection_recovers_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let x = DMatrix::from_fn(2, 30, |_, _| rng.random_range(-1.0..1.0));
        let centers = centers_from_data(&x, 5, 1).unwrap();
        let dict = Dictionary::rbf_median(&centers, true).unwrap();
        let p = fit_projection(&dict, &x).unwrap();
        assert!(p.residual < 1e-16);
        let back = &p.matrix * dict.lift_batch(&x).unwrap();
        assert!((back - &x).amax() < 1e-8);
    }

    #[test]
    fn single_point_interpolates() {
        let x = DMatrix::from_column_slice(2, 1, &[0.7, -1.2]);
        let centers = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 1.0]);
        let dict = Dictionary::rbf(&centers, 0.5, false).unwrap();
        let p = fit_projection(&dict, &x).unwrap();
        let back = &p.matrix * dict.lift_batch(&x).unwrap();
        assert!((back - &x).amax() < 1e-10);
        assert!(fit_projection(&dict, &DMatrix::zeros(2, 0)).is_err());
    }

    #[test]
    fn prediction_tracks_linear_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let a = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
        let radius = crate::spectral::eigenvalues(&a).unwrap()[0].norm();
        let a = a * (0.9 / radius);
        let x0 = DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
        let p = model_with(
            a.clone(),
            Dictionary::linear(4).unwrap(),
            DMatrix::identity(4, 4),
        );
        let pred = p.predict(&x0, 100).unwrap();
        assert_eq!(pred.overflow_at, None);
        let mut x = x0.clone();
        for n in 0..=100 {
            assert!((pred.states.column(n) - &x).amax() < 1e-8);
            x = &a * x;
        }
    }

    #[test]
    fn identity_and_zero_operators() {
        let x0 = DVector::from_vec(vec![0.3, -0.4]);
        let p = model_with(
            DMatrix::identity(2, 2),
            Dictionary::linear(2).unwrap(),
            DMatrix::identity(2, 2),
        );
        let pred = p.predict(&x0, 5).unwrap();
        for n in 0..=5 {
            assert_eq!(pred.states.column(n), x0.column(0));
        }
        let p = model_with(
            DMatrix::zeros(2, 2),
            Dictionary::linear(2).unwrap(),
            DMatrix::identity(2, 2),
        );
        let pred = p.predict(&x0, 3).unwrap();
        assert_eq!(pred.states.column(0), x0.column(0));
        assert!(pred.states.columns(1, 3).iter().all(|&v| v == 0.0));
        let single = p.predict(&x0, 0).unwrap();
        assert_eq!(single.states.ncols(), 1);
    }

    #[test]
    fn overflow_truncates() {
        let k = DMatrix::from_element(1, 1, 1e200);
        let p = model_with(k, Dictionary::linear(1).unwrap(), DMatrix::identity(1, 1));
        let pred = p.predict(&DVector::from_element(1, 1.0), 10).unwrap();
        assert_eq!(pred.overflow_at, Some(2));
        assert_eq!(pred.states.ncols(), 2);
    }

    #[test]
    fn predictor_requires_projection() {
        let m = KoopmanModel::new(DMatrix::zeros(1, 1), Dictionary::linear(1).unwrap(), 0, 1.0)
            .unwrap();
        assert!(Predictor::new(m).is_err());
    }

    #[test]
    fn mse_cases() {
        let t = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(mse(&t, &t).unwrap().mean, 0.0);
        let off = t.add_scalar(1.0);
        let m = mse(&off, &t).unwrap();
        assert_eq!(m.per_state, vec![1.0, 1.0]);
        assert_eq!(m.mean, 1.0);
        let p = DMatrix::from_row_slice(1, 2, &[1.0, 3.0]);
        assert_eq!(mse(&p, &DMatrix::zeros(1, 2)).unwrap().mean, 5.0);
        assert!(mse(&p, &t).is_err());
    }

    #[test]
    fn one_step_residual_matches_least_squares_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let xp = DMatrix::from_fn(3, 80, |_, _| rng.random_range(-1.0..1.0));
        let xf = xp.map(|v| 0.8 * v + 0.1 * v * v);
        let dict = Dictionary::linear(3).unwrap();
        let yp = dict.lift_batch(&xp).unwrap();
        let yf = dict.lift_batch(&xf).unwrap();
        let best = (&yf - fit_batch_pinv(&yp, &yf).unwrap() * &yp).norm_squared() / 80.0;
        let streamed = stream_fit(&dict, &xp, &xf, 1e-10)
            .unwrap()
            .current_operator();
        let resid = (&yf - streamed * &yp).norm_squared() / 80.0;
        assert!(resid >= best * (1.0 - 1e-12));
        assert!(resid <= best * (1.0 + 1e-8));
    }

    #[test]
    fn horizon_guards_and_trend() {
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let a = DMatrix::from_row_slice(2, 2, &[0.98, 0.1, -0.1, 0.97]);
        let mut traj = DMatrix::zeros(2, 301);
        traj.set_column(0, &DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0)));
        for t in 0..300 {
            let next = &a * traj.column(t);
            traj.set_column(t + 1, &next);
        }
        let dict = Dictionary::linear(2).unwrap();
        assert!(evaluate_horizon(&dict, 1e-6, &[250], &traj, (200, 300)).is_err());
        assert!(evaluate_horizon(&dict, 1e-6, &[10], &traj, (200, 301)).is_err());
        let pts = evaluate_horizon(&dict, 1e-12, &[5, 150], &traj, (200, 300)).unwrap();
        assert_eq!(pts.len(), 2);
        assert!(pts[1].mse.mean < 1e-10);

        let mut buf = Vec::new();
        write_horizon_csv(&mut buf, &pts).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("train_size,state_index,mse,mean_mse\n"));
        assert_eq!(text.lines().count(), 5);
    }
}
