//! Eigendecomposition of a learned operator and dominant-mode tracking.
//!
//! Eigenvalues come from a real Schur factorization `K = Q·T·Qᵀ`.
//! Eigenvectors are recovered by inverse iteration on the quasi-triangular
//! factor `T` (an upper Hessenberg solve per eigenvalue) and mapped back
//! with `Q`.

use std::cmp::Ordering;
use std::io::Write;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::koopman::{KoopmanModel, KoopmanStream};

/// Default tolerance for [`Spectrum::unstable_modes`].
pub const DEFAULT_UNSTABLE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    /// Sorted by descending magnitude, then real part, then imaginary part.
    pub eigenvalues: Vec<Complex64>,
    /// Unit-norm eigenvectors; column `j` pairs with `eigenvalues[j]`.
    pub eigenvectors: DMatrix<Complex64>,
    pub source_count: usize,
}

/// Ordering used everywhere a spectrum is sorted: `|λ|` descending, ties
/// broken by descending real part, then descending imaginary part.
pub fn dominance_order(a: &Complex64, b: &Complex64) -> Ordering {
    b.norm()
        .total_cmp(&a.norm())
        .then(b.re.total_cmp(&a.re))
        .then(b.im.total_cmp(&a.im))
}

fn schur(k: &DMatrix<f64>) -> Result<nalgebra::Schur<f64, nalgebra::Dyn>> {
    if !k.is_square() {
        return Err(Error::invalid(format!(
            "operator is not square: {:?}",
            k.shape()
        )));
    }
    if k.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("operator contains non-finite entries"));
    }
    let max_iter = 200 * k.nrows().max(1);
    nalgebra::Schur::try_new(k.clone(), f64::EPSILON, max_iter)
        .ok_or_else(|| Error::numerical("Schur iteration did not converge"))
}

/// Eigenvalues only, sorted by [`dominance_order`].
pub fn eigenvalues(k: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    let mut vals: Vec<Complex64> = schur(k)?.complex_eigenvalues().iter().copied().collect();
    if vals.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::numerical(
            "eigensolver produced non-finite eigenvalues",
        ));
    }
    vals.sort_by(dominance_order);
    Ok(vals)
}

/// Full eigendecomposition of the model's operator.
pub fn eig(model: &KoopmanModel) -> Result<Spectrum> {
    eig_matrix(&model.k_matrix, model.sample_count)
}

pub fn eig_matrix(k: &DMatrix<f64>, source_count: usize) -> Result<Spectrum> {
    let n = k.nrows();
    let s = schur(k)?;
    let vals: Vec<Complex64> = s.complex_eigenvalues().iter().copied().collect();
    if vals.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::numerical(
            "eigensolver produced non-finite eigenvalues",
        ));
    }
    let (q, t) = s.unpack();
    let knorm = k.norm();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| dominance_order(&vals[a], &vals[b]));

    let mut vecs = DMatrix::<Complex64>::zeros(n, n);
    if knorm == 0.0 {
        vecs.fill_with_identity();
        return Ok(Spectrum {
            eigenvalues: vec![Complex64::new(0.0, 0.0); n],
            eigenvectors: vecs,
            source_count,
        });
    }
    let mut done: Vec<(Complex64, usize)> = Vec::new();
    for (col, &idx) in order.iter().enumerate() {
        let lambda = vals[idx];
        // Reuse the conjugate partner's vector when it is already known.
        let partner = (lambda.im != 0.0)
            .then(|| {
                done.iter()
                    .find(|(l, _)| *l == lambda.conj())
                    .map(|&(_, c)| c)
            })
            .flatten();
        let v = match partner {
            Some(c) => vecs.column(c).map(|z| z.conj()),
            None => eigenvector(k, &q, &t, lambda, knorm)?,
        };
        vecs.set_column(col, &v);
        done.push((lambda, col));
    }
    Ok(Spectrum {
        eigenvalues: order.iter().map(|&i| vals[i]).collect(),
        eigenvectors: vecs,
        source_count,
    })
}

fn eigenvector(
    k: &DMatrix<f64>,
    q: &DMatrix<f64>,
    t: &DMatrix<f64>,
    lambda: Complex64,
    knorm: f64,
) -> Result<DVector<Complex64>> {
    let n = t.nrows();
    let scale = knorm;
    let tiny = scale * f64::EPSILON;
    // Deterministic start vector with no special structure.
    let mut w: Vec<Complex64> = (0..n)
        .map(|i| Complex64::new(1.0 + ((i * 7 + 3) % 11) as f64 / 11.0, 0.0))
        .collect();
    let kc = k.map(|x| Complex64::new(x, 0.0));
    let qc = q.map(|x| Complex64::new(x, 0.0));
    let mut best: Option<(f64, DVector<Complex64>)> = None;
    for _ in 0..4 {
        w = hessenberg_shifted_solve(t, lambda, &w, tiny);
        let norm = w.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::numerical("inverse iteration broke down"));
        }
        for z in w.iter_mut() {
            *z /= norm;
        }
        let wv = DVector::from_vec(w.clone());
        let v = &qc * wv;
        let res = (&kc * &v - &v * lambda).norm();
        if best.as_ref().is_none_or(|(r, _)| res < *r) {
            best = Some((res, v));
        }
        if res <= 1e-13 * scale {
            break;
        }
    }
    let (res, mut v) = best.expect("at least one iteration");
    if res > 1e-8 * scale {
        return Err(Error::numerical(format!(
            "eigenvector residual {res:e} exceeds tolerance for eigenvalue {lambda}"
        )));
    }
    normalize_phase(&mut v);
    Ok(v)
}

/// Unit norm with the largest-magnitude entry rotated onto the positive real axis.
fn normalize_phase(v: &mut DVector<Complex64>) {
    let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let pivot = v
        .iter()
        .copied()
        .max_by(|a, b| a.norm().total_cmp(&b.norm()))
        .unwrap_or(Complex64::new(1.0, 0.0));
    let rot = if pivot.norm() > 0.0 {
        pivot.conj() / pivot.norm()
    } else {
        Complex64::new(1.0, 0.0)
    };
    for z in v.iter_mut() {
        *z = *z * rot / norm;
    }
}

/// Solves `(T − λI)·x = b` for upper Hessenberg `T` with partial pivoting.
/// Pivots smaller than `tiny` are replaced by `tiny`.
fn hessenberg_shifted_solve(
    t: &DMatrix<f64>,
    lambda: Complex64,
    b: &[Complex64],
    tiny: f64,
) -> Vec<Complex64> {
    let n = t.nrows();
    // Row-major working copy of the upper Hessenberg part.
    let mut h = vec![Complex64::new(0.0, 0.0); n * n];
    for i in 0..n {
        for j in i.saturating_sub(1)..n {
            h[i * n + j] = Complex64::new(t[(i, j)], 0.0);
        }
        h[i * n + i] -= lambda;
    }
    let mut x = b.to_vec();
    for j in 0..n.saturating_sub(1) {
        let (a, s) = (h[j * n + j], h[(j + 1) * n + j]);
        if s.norm() > a.norm() {
            for c in j..n {
                h.swap(j * n + c, (j + 1) * n + c);
            }
            x.swap(j, j + 1);
        }
        let mut piv = h[j * n + j];
        if piv.norm() < tiny {
            piv = Complex64::new(tiny, 0.0);
            h[j * n + j] = piv;
        }
        let l = h[(j + 1) * n + j] / piv;
        if l != Complex64::new(0.0, 0.0) {
            for c in j..n {
                let upper = h[j * n + c];
                h[(j + 1) * n + c] -= l * upper;
            }
            let xj = x[j];
            x[j + 1] -= l * xj;
        }
    }
    for i in (0..n).rev() {
        let mut acc = x[i];
        for c in (i + 1)..n {
            acc -= h[i * n + c] * x[c];
        }
        let mut piv = h[i * n + i];
        if piv.norm() < tiny {
            piv = Complex64::new(tiny, 0.0);
        }
        x[i] = acc / piv;
    }
    x
}

/// Continuous-time image of a spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousSpectrum {
    pub values: Vec<Complex64>,
    /// Zero eigenvalues that have no logarithm and were skipped.
    pub dropped: usize,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// The `m` eigenvalues of largest magnitude.
    pub fn dominant(&self, m: usize) -> Result<Vec<Complex64>> {
        if m == 0 || m > self.len() {
            return Err(Error::invalid(format!(
                "requested {m} dominant modes from a spectrum of size {}",
                self.len()
            )));
        }
        Ok(self.eigenvalues[..m].to_vec())
    }

    /// Eigenvalues with `|λ| > 1 + tol`, in spectrum order.
    pub fn unstable_modes(&self, tol: f64) -> Vec<Complex64> {
        unstable_modes(&self.eigenvalues, tol)
    }

    /// `log(λ)/dt` on the principal branch.
    pub fn to_continuous(&self, dt: f64) -> Result<ContinuousSpectrum> {
        to_continuous(&self.eigenvalues, dt)
    }

    pub fn spectral_radius(&self) -> f64 {
        self.eigenvalues.first().map_or(0.0, |l| l.norm())
    }

    /// CSV with columns `index,re,im,magnitude`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "index,re,im,magnitude")?;
        for (i, l) in self.eigenvalues.iter().enumerate() {
            writeln!(
                out,
                "{},{},{},{}",
                i,
                fmt_f64(l.re),
                fmt_f64(l.im),
                fmt_f64(l.norm())
            )?;
        }
        Ok(())
    }
}

pub fn unstable_modes(eigenvalues: &[Complex64], tol: f64) -> Vec<Complex64> {
    eigenvalues
        .iter()
        .copied()
        .filter(|l| l.norm() > 1.0 + tol)
        .collect()
}

pub fn to_continuous(eigenvalues: &[Complex64], dt: f64) -> Result<ContinuousSpectrum> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::invalid(format!("dt must be positive, got {dt}")));
    }
    let mut dropped = 0;
    let values = eigenvalues
        .iter()
        .filter(|l| {
            let zero = l.norm() == 0.0;
            dropped += zero as usize;
            !zero
        })
        .map(|l| l.ln() / dt)
        .collect();
    Ok(ContinuousSpectrum { values, dropped })
}

/// Header for eigenvalue-trajectory CSVs.
pub const TRAJECTORY_HEADER: &str = "sample_count,index,re,im";

/// Appends one block of `(sample_count, index, re, im)` rows.
pub fn write_trajectory_rows<W: Write>(
    mut out: W,
    sample_count: usize,
    eigenvalues: &[Complex64],
) -> Result<()> {
    for (i, l) in eigenvalues.iter().enumerate() {
        writeln!(
            out,
            "{},{},{},{}",
            sample_count,
            i,
            fmt_f64(l.re),
            fmt_f64(l.im)
        )?;
    }
    Ok(())
}

/// Dominant eigenvalues reported at one cadence point of a stream.
#[derive(Debug, Clone, PartialEq)]
pub struct CadenceReport {
    pub sample_count: usize,
    pub dominant: Vec<Complex64>,
    pub unstable: usize,
}

/// Output of [`track_stream`].
#[derive(Debug, Clone, PartialEq)]
pub struct Tracking {
    pub reports: Vec<CadenceReport>,
    /// Wall time spent inside updates, eigendecompositions excluded.
    pub update_seconds: f64,
}

/// Streams the pairs of `(xp, xf)` into `stream`, reporting the `dominant`
/// leading eigenvalues each time the accepted-sample count reaches a
/// multiple of `cadence`. Rejected samples do not advance the count.
pub fn track_stream(
    stream: &mut KoopmanStream,
    xp: &DMatrix<f64>,
    xf: &DMatrix<f64>,
    cadence: usize,
    dominant: usize,
) -> Result<Tracking> {
    if cadence == 0 {
        return Err(Error::invalid("cadence must be at least 1"));
    }
    let k = stream.dictionary().feature_dim();
    if dominant == 0 || dominant > k {
        return Err(Error::invalid(format!(
            "cannot report {dominant} dominant modes of a {k}-dimensional operator"
        )));
    }
    if xp.shape() != xf.shape() {
        return Err(Error::invalid("snapshot matrices differ in shape"));
    }
    let mut out = Vec::new();
    let mut update_seconds = 0.0;
    for (x, y) in xp.column_iter().zip(xf.column_iter()) {
        let before = stream.count();
        let t0 = Instant::now();
        stream.update_slices(x.as_slice(), y.as_slice())?;
        update_seconds += t0.elapsed().as_secs_f64();
        let count = stream.count();
        if count != before && count.is_multiple_of(cadence) {
            let vals = eigenvalues(&stream.current_operator())?;
            out.push(CadenceReport {
                sample_count: count,
                unstable: unstable_modes(&vals, DEFAULT_UNSTABLE_TOL).len(),
                dominant: vals[..dominant].to_vec(),
            });
        }
    }
    Ok(Tracking {
        reports: out,
        update_seconds,
    })
}

/// Greedy nearest-neighbour pairing in ℂ: each entry of `estimated`, in
/// order, claims the closest unclaimed entry of `reference`. Returns the
/// largest paired distance.
pub fn greedy_match_distance(estimated: &[Complex64], reference: &[Complex64]) -> Result<f64> {
    if estimated.len() > reference.len() {
        return Err(Error::invalid(
            "more estimated eigenvalues than reference eigenvalues",
        ));
    }
    let mut free: Vec<Complex64> = reference.to_vec();
    let mut worst = 0.0f64;
    for e in estimated {
        let (pos, d) = free
            .iter()
            .enumerate()
            .map(|(i, r)| (i, (e - r).norm()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("reference has spare entries");
        worst = worst.max(d);
        free.swap_remove(pos);
    }
    Ok(worst)
}

/// Hausdorff distance between two finite point sets in ℂ.
pub fn hausdorff_distance(a: &[Complex64], b: &[Complex64]) -> f64 {
    let directed = |p: &[Complex64], q: &[Complex64]| {
        p.iter()
            .map(|x| {
                q.iter()
                    .map(|y| (x - y).norm())
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0f64, f64::max)
    };
    directed(a, b).max(directed(b, a))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::Dictionary;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn spectrum_of(vals: &[Complex64]) -> Spectrum {
        Spectrum {
            eigenvalues: vals.to_vec(),
            eigenvectors: DMatrix::zeros(vals.len(), vals.len()),
            source_count: 0,
        }
    }

    fn check_residuals(k: &DMatrix<f64>, s: &Spectrum) {
        let kc = k.map(|x| c(x, 0.0));
        for (j, l) in s.eigenvalues.iter().enumerate() {
            let v = s.eigenvectors.column(j);
            let r = (&kc * v - v * *l).norm();
            assert!(r <= 1e-8 * k.norm() * v.norm(), "residual {r} for {l}");
            assert!((v.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn diagonal() {
        let k = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.9]));
        let s = eig_matrix(&k, 3).unwrap();
        assert_eq!(s.source_count, 3);
        assert!((s.eigenvalues[0] - c(0.9, 0.0)).norm() < 1e-15);
        assert!((s.eigenvalues[1] - c(0.5, 0.0)).norm() < 1e-15);
        check_residuals(&k, &s);
    }

    #[test]
    fn rotation_scaling() {
        let k = DMatrix::from_row_slice(2, 2, &[0.8, -0.3, 0.3, 0.8]);
        let s = eig_matrix(&k, 0).unwrap();
        assert!((s.eigenvalues[0] - c(0.8, 0.3)).norm() < 1e-14);
        assert!((s.eigenvalues[1] - c(0.8, -0.3)).norm() < 1e-14);
        check_residuals(&k, &s);
    }

    #[test]
    fn random_matrix_conjugate_pairs_and_residuals() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..5 {
            let k = DMatrix::from_fn(6, 6, |_, _| rng.random_range(-1.0..1.0));
            let s = eig_matrix(&k, 0).unwrap();
            for l in &s.eigenvalues {
                if l.im != 0.0 {
                    assert!(s.eigenvalues.iter().any(|m| (m - l.conj()).norm() < 1e-12));
                }
            }
            for w in s.eigenvalues.windows(2) {
                assert!(w[0].norm() >= w[1].norm());
            }
            check_residuals(&k, &s);
        }
    }

    #[test]
    fn larger_and_defective_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let k = DMatrix::from_fn(80, 80, |_, _| rng.random_range(-1.0..1.0));
        check_residuals(&k, &eig_matrix(&k, 0).unwrap());
        // Jordan block and an exactly singular matrix.
        let j = DMatrix::from_row_slice(3, 3, &[0.5, 1.0, 0.0, 0.0, 0.5, 1.0, 0.0, 0.0, 0.5]);
        check_residuals(&j, &eig_matrix(&j, 0).unwrap());
        let z = DMatrix::<f64>::zeros(4, 4);
        let s = eig_matrix(&z, 0).unwrap();
        assert!(s.eigenvalues.iter().all(|l| l.norm() == 0.0));
    }

    #[test]
    fn non_finite_operator_is_rejected() {
        let k = DMatrix::from_row_slice(2, 2, &[f64::NAN, 0.0, 0.0, 1.0]);
        assert!(eig_matrix(&k, 0).is_err());
    }

    #[test]
    fn eig_from_model() {
        let dict = Dictionary::linear(2).unwrap();
        let m = KoopmanModel::new(
            DMatrix::from_row_slice(2, 2, &[0.9, 0.0, 0.0, 0.5]),
            dict,
            12,
            1.0,
        )
        .unwrap();
        let s = eig(&m).unwrap();
        assert_eq!(s.source_count, 12);
        assert!((s.spectral_radius() - 0.9).abs() < 1e-15);
    }

    #[test]
    fn dominant_selection() {
        let s = spectrum_of(&[c(0.9, 0.0), c(0.5, 0.0), c(0.1, 0.0)]);
        assert_eq!(s.dominant(2).unwrap(), vec![c(0.9, 0.0), c(0.5, 0.0)]);
        assert_eq!(s.dominant(3).unwrap().len(), 3);
        assert!(s.dominant(4).is_err());
        assert!(s.dominant(0).is_err());

        let mut tie = vec![c(-0.5, 0.0), c(0.5, 0.0)];
        tie.sort_by(dominance_order);
        assert_eq!(spectrum_of(&tie).dominant(1).unwrap(), vec![c(0.5, 0.0)]);
        let mut conj = [c(0.3, -0.4), c(0.3, 0.4)];
        conj.sort_by(dominance_order);
        assert_eq!(conj[0], c(0.3, 0.4));
    }

    #[test]
    fn unstable_mode_threshold() {
        assert!(spectrum_of(&[c(0.99, 0.0), c(0.5, 0.0)])
            .unstable_modes(0.0)
            .is_empty());
        assert_eq!(
            spectrum_of(&[c(1.02, 0.0), c(0.9, 0.0)]).unstable_modes(0.01),
            vec![c(1.02, 0.0)]
        );
        assert!(spectrum_of(&[c(1.0, 0.0)])
            .unstable_modes(DEFAULT_UNSTABLE_TOL)
            .is_empty());
    }

    #[test]
    fn continuous_conversion() {
        let dt = 0.01;
        let s = spectrum_of(&[
            c(1.0, 0.0),
            c((-0.02f64).exp(), 0.0),
            (c(-1.0, 2.0) * dt).exp(),
            c(0.0, 0.0),
        ]);
        let ct = s.to_continuous(dt).unwrap();
        assert_eq!(ct.dropped, 1);
        assert!(ct.values[0].norm() < 1e-15);
        assert!((ct.values[1] - c(-2.0, 0.0)).norm() < 1e-12);
        assert!((ct.values[2] - c(-1.0, 2.0)).norm() < 1e-12);
        assert!(s.to_continuous(0.0).is_err());
    }

    #[test]
    fn greedy_and_hausdorff() {
        let a = [c(0.9, 0.1), c(0.5, 0.0)];
        let b = [c(0.5, 0.0), c(0.9, -0.1), c(0.9, 0.1)];
        assert_eq!(greedy_match_distance(&a, &b).unwrap(), 0.0);
        let d = greedy_match_distance(&[c(0.0, 0.0)], &[c(3.0, 4.0)]).unwrap();
        assert!((d - 5.0).abs() < 1e-15);
        assert!(greedy_match_distance(&b, &a).is_err());
        assert!(
            (hausdorff_distance(&[c(0.0, 0.0)], &[c(0.0, 0.0), c(1.0, 0.0)]) - 1.0).abs() < 1e-15
        );
    }

    #[test]
    fn cadence_reports() {
        let dict = Dictionary::linear(2).unwrap();
        let xp = DMatrix::from_fn(2, 100, |i, j| ((i + 2) as f64 * 0.3 * j as f64).cos());
        let xf = xp.map(|v| 0.5 * v);
        let mut s = KoopmanStream::new(dict, 1e-6).unwrap();
        let tracking = track_stream(&mut s, &xp, &xf, 50, 2).unwrap();
        assert!(tracking.update_seconds >= 0.0);
        let reps = tracking.reports;
        assert_eq!(
            reps.iter().map(|r| r.sample_count).collect::<Vec<_>>(),
            vec![50, 100]
        );
        assert!(reps
            .iter()
            .all(|r| r.dominant.len() == 2 && r.unstable == 0));
        assert!((reps[1].dominant[0] - c(0.5, 0.0)).norm() < 1e-6);
        let mut s = KoopmanStream::new(Dictionary::linear(2).unwrap(), 1.0).unwrap();
        assert!(track_stream(&mut s, &xp, &xf, 0, 1).is_err());
        assert!(track_stream(&mut s, &xp, &xf, 10, 3).is_err());
    }

    #[test]
    fn csv_outputs() {
        let s = spectrum_of(&[c(0.5, 0.25)]);
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("index,re,im,magnitude"));
        let fields: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(fields.len(), 4);
        assert_eq!(fields[1].parse::<f64>().unwrap(), 0.5);

        let mut buf = Vec::new();
        write_trajectory_rows(&mut buf, 50, &s.eigenvalues).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("50,0,"));
    }
}
