//! Streaming-versus-recompute timing harness.
//!
//! For each checkpoint `M` it records the cumulative wall time the stream
//! needed to absorb the first `M` pairs, and the wall time of one batch
//! ridge fit (lifting included) on those same `M` pairs, i.e. what a
//! recompute-from-scratch identifier pays when it refreshes at `M`.
//! Eigenvalue extraction is timed separately for both operators.

use std::io::Write;
use std::time::Instant;

use nalgebra::DMatrix;

use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::koopman::{fit_batch_ridge, KoopmanStream, UpdateOutcome};
use crate::spectral;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointTiming {
    pub samples: usize,
    pub stream_cumulative_s: f64,
    pub batch_fit_s: f64,
    pub stream_eig_s: f64,
    pub batch_eig_s: f64,
    /// Relative Frobenius gap between the streamed and batch operators.
    pub operator_gap: f64,
}

impl CheckpointTiming {
    pub fn batch_over_stream(&self) -> f64 {
        self.batch_fit_s / self.stream_cumulative_s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub checkpoints: Vec<CheckpointTiming>,
    /// Wall time of each accepted streaming update, in arrival order.
    pub update_times_s: Vec<f64>,
    pub rejected: usize,
    /// Sum over every step `m ≤ M_max` of a linear per-fit cost model
    /// `a + b·m` fitted to the checkpoint batch timings.
    pub extrapolated_every_step_s: f64,
}

impl BenchReport {
    pub fn stream_total_s(&self) -> f64 {
        self.checkpoints
            .last()
            .map_or(0.0, |c| c.stream_cumulative_s)
    }

    pub fn batch_checkpoint_total_s(&self) -> f64 {
        self.checkpoints.iter().map(|c| c.batch_fit_s).sum()
    }

    /// Medians of per-update time over the first and last tenth of samples.
    pub fn decile_medians(&self) -> (f64, f64) {
        let n = self.update_times_s.len();
        let d = (n / 10).max(1);
        (
            median(&self.update_times_s[..d.min(n)]),
            median(&self.update_times_s[n.saturating_sub(d)..]),
        )
    }

    /// CSV `checkpoint,stream_cumulative_s,batch_fit_s,batch_over_stream,stream_eig_s,batch_eig_s,operator_gap`.
    pub fn write_timing_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(
            out,
            "checkpoint,stream_cumulative_s,batch_fit_s,batch_over_stream,stream_eig_s,batch_eig_s,operator_gap"
        )?;
        for c in &self.checkpoints {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                c.samples,
                fmt_f64(c.stream_cumulative_s),
                fmt_f64(c.batch_fit_s),
                fmt_f64(c.batch_over_stream()),
                fmt_f64(c.stream_eig_s),
                fmt_f64(c.batch_eig_s),
                fmt_f64(c.operator_gap)
            )?;
        }
        Ok(())
    }

    /// CSV `sample,update_s`.
    pub fn write_updates_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "sample,update_s")?;
        for (i, t) in self.update_times_s.iter().enumerate() {
            writeln!(out, "{},{}", i + 1, fmt_f64(*t))?;
        }
        Ok(())
    }
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len().is_multiple_of(2) {
        0.5 * (v[mid - 1] + v[mid])
    } else {
        v[mid]
    }
}

/// Runs the benchmark over the column pairs of `(xp, xf)`.
///
/// `checkpoints` must be increasing and at most `xp.ncols()`.
pub fn run_benchmark(
    dict: &Dictionary,
    xp: &DMatrix<f64>,
    xf: &DMatrix<f64>,
    delta: f64,
    checkpoints: &[usize],
) -> Result<BenchReport> {
    if xp.shape() != xf.shape() {
        return Err(Error::invalid("snapshot matrices differ in shape"));
    }
    if checkpoints.is_empty() || checkpoints.contains(&0) {
        return Err(Error::invalid("checkpoints must be non-empty and positive"));
    }
    if checkpoints.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("checkpoints must be strictly increasing"));
    }
    let last = *checkpoints.last().expect("non-empty");
    if last > xp.ncols() {
        return Err(Error::invalid(format!(
            "largest checkpoint {last} exceeds the {} available pairs",
            xp.ncols()
        )));
    }

    let mut stream = KoopmanStream::new(dict.clone(), delta)?;
    let mut update_times_s = Vec::with_capacity(last);
    let mut cumulative = 0.0;
    let mut out = Vec::with_capacity(checkpoints.len());
    let mut next = checkpoints.iter().peekable();
    for j in 0..last {
        let (x, y) = (xp.column(j), xf.column(j));
        let t0 = Instant::now();
        let outcome = stream.update_slices(x.as_slice(), y.as_slice())?;
        let dt = t0.elapsed().as_secs_f64();
        cumulative += dt;
        if outcome == UpdateOutcome::Accepted {
            update_times_s.push(dt);
        }
        if next.peek() == Some(&&(j + 1)) {
            let m = *next.next().expect("peeked");
            let streamed = stream.current_operator();

            let t0 = Instant::now();
            let _ = spectral::eigenvalues(&streamed)?;
            let stream_eig_s = t0.elapsed().as_secs_f64();

            let t0 = Instant::now();
            let yp = dict.lift_batch(&xp.columns(0, m).into_owned())?;
            let yf = dict.lift_batch(&xf.columns(0, m).into_owned())?;
            let batch = fit_batch_ridge(&yp, &yf, delta)?;
            let batch_fit_s = t0.elapsed().as_secs_f64();

            let t0 = Instant::now();
            let _ = spectral::eigenvalues(&batch)?;
            let batch_eig_s = t0.elapsed().as_secs_f64();

            out.push(CheckpointTiming {
                samples: m,
                stream_cumulative_s: cumulative,
                batch_fit_s,
                stream_eig_s,
                batch_eig_s,
                operator_gap: (&streamed - &batch).norm() / batch.norm().max(1.0),
            });
        }
    }
    let extrapolated_every_step_s = extrapolate_every_step(&out, last);
    Ok(BenchReport {
        checkpoints: out,
        update_times_s,
        rejected: stream.rejected(),
        extrapolated_every_step_s,
    })
}

/// Least-squares line through `(M, batch_fit_s)` summed over `m = 1..=last`.
fn extrapolate_every_step(points: &[CheckpointTiming], last: usize) -> f64 {
    let n = points.len() as f64;
    let (a, b) = if points.len() < 2 {
        let p = &points[0];
        (0.0, p.batch_fit_s / p.samples as f64)
    } else {
        let mx = points.iter().map(|p| p.samples as f64).sum::<f64>() / n;
        let my = points.iter().map(|p| p.batch_fit_s).sum::<f64>() / n;
        let sxx: f64 = points.iter().map(|p| (p.samples as f64 - mx).powi(2)).sum();
        let sxy: f64 = points
            .iter()
            .map(|p| (p.samples as f64 - mx) * (p.batch_fit_s - my))
            .sum();
        let b = sxy / sxx;
        (my - b * mx, b)
    };
    let m = last as f64;
    (a * m + b * m * (m + 1.0) / 2.0).max(0.0)
}
