use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use redmd::bench::run_benchmark;
use redmd::datagen::{
    random_stable_linear, random_state, simulate_linear, simulate_rk4, to_pairs, SwingNetwork,
};
use redmd::io::{fmt_f64, read_snapshot_file, write_snapshot_csv};
use redmd::koopman::{fit_batch_pinv, fit_batch_ridge, KoopmanStream};
use redmd::predictor::{evaluate_horizon, fit_projection, mse};
use redmd::seed::fan_out;
use redmd::spectral::{self, track_stream, write_trajectory_rows, TRAJECTORY_HEADER};
use redmd::{Complex64, DMatrix, Dictionary, KoopmanModel, Predictor};
use serde_json::{json, Value};

use crate::config::{streams, RunConfig, SystemKind};
use crate::error::CliError;

type CmdResult = Result<(), CliError>;

/// Opens `path` for writing, or standard output when `path` is `None`.
fn sink(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| {
            CliError::Data(format!("cannot create {}: {e}", p.display()))
        })?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_json(path: Option<&Path>, value: &Value) -> CmdResult {
    let mut out = sink(path)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| CliError::Data(e.to_string()))?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn complex_json(values: &[Complex64]) -> Value {
    Value::Array(
        values
            .iter()
            .map(|l| json!({ "re": l.re, "im": l.im }))
            .collect(),
    )
}

fn column_is_finite(m: &DMatrix<f64>, j: usize) -> bool {
    m.column(j).iter().all(|v| v.is_finite())
}

/// Columns of `m` with no non-finite entry.
fn finite_columns(m: &DMatrix<f64>) -> DMatrix<f64> {
    let keep: Vec<usize> = (0..m.ncols()).filter(|&j| column_is_finite(m, j)).collect();
    m.select_columns(&keep)
}

fn read_input(path: &Path) -> Result<DMatrix<f64>, CliError> {
    let data = read_snapshot_file(path).map_err(|e| match e {
        redmd::Error::Io(io) => CliError::Data(format!("cannot read {}: {io}", path.display())),
        other => CliError::Data(format!("{}: {other}", path.display())),
    })?;
    if data.ncols() < 2 {
        return Err(CliError::Data(format!(
            "{} holds {} rows; at least two are needed to form a snapshot pair",
            path.display(),
            data.ncols()
        )));
    }
    Ok(data)
}

/// Leading training rows of the input, honouring `train_rows`.
fn training_rows(cfg: &RunConfig, data: &DMatrix<f64>) -> Result<DMatrix<f64>, CliError> {
    let rows = cfg.train_rows.unwrap_or(data.ncols());
    if rows > data.ncols() {
        return Err(CliError::Usage(format!(
            "train_rows {rows} exceeds the {} rows of the input",
            data.ncols()
        )));
    }
    if rows < 2 {
        return Err(CliError::Usage("training needs at least two rows".into()));
    }
    Ok(data.columns(0, rows).into_owned())
}

/// Snapshot pairs whose both ends are finite.
fn finite_pairs(train: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>), CliError> {
    let (xp, xf) = to_pairs(train)?;
    let keep: Vec<usize> = (0..xp.ncols())
        .filter(|&j| column_is_finite(&xp, j) && column_is_finite(&xf, j))
        .collect();
    if keep.is_empty() {
        return Err(CliError::Data(
            "no finite snapshot pairs in the input".into(),
        ));
    }
    Ok((xp.select_columns(&keep), xf.select_columns(&keep)))
}

fn dictionary_for(cfg: &RunConfig, train: &DMatrix<f64>) -> Result<Dictionary, CliError> {
    cfg.build_dictionary(train.nrows(), &finite_columns(train))
}

fn attach_projection(model: KoopmanModel, train: &DMatrix<f64>) -> Result<KoopmanModel, CliError> {
    let rows = train.ncols();
    let proj = fit_projection(&model.dict, &finite_columns(train))?;
    Ok(model.with_projection(proj.matrix)?.with_train_rows(rows))
}

fn read_model(path: &Path) -> Result<KoopmanModel, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read model {}: {e}", path.display())))?;
    KoopmanModel::from_json(&text)
        .map_err(|e| CliError::Data(format!("model {}: {e}", path.display())))
}

/// `traj.csv` → `traj.truth.json`.
pub fn default_truth_path(output: &Path) -> PathBuf {
    output.with_extension("truth.json")
}

pub fn simulate(cfg: &RunConfig, truth: Option<&Path>) -> CmdResult {
    let s = &cfg.system;
    let (traj, sidecar) = match s.kind {
        SystemKind::Linear => {
            let mut sys =
                random_stable_linear(s.n, s.spectral_radius, fan_out(cfg.seed, streams::SYSTEM))?;
            sys.dt = s.dt;
            let x0 = random_state(
                s.n,
                s.initial_scale,
                fan_out(cfg.seed, streams::INITIAL_STATE),
            )?;
            let traj = simulate_linear(
                &sys,
                &x0,
                s.steps,
                s.noise_std,
                fan_out(cfg.seed, streams::NOISE),
            )?;
            let a_rows: Vec<Vec<f64>> = sys
                .a_matrix
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect();
            let sidecar = json!({
                "system": "linear",
                "dt": s.dt,
                "eigenvalues": complex_json(&sys.true_eigenvalues),
                "a_matrix": a_rows,
            });
            (traj, sidecar)
        }
        SystemKind::Swing => {
            let net = SwingNetwork::three_machine();
            let x0 = net.perturbed_state(
                s.angle_perturbation,
                s.frequency_perturbation,
                fan_out(cfg.seed, streams::INITIAL_STATE),
            )?;
            let run = simulate_rk4(|x| net.rhs(x), &x0, s.dt, s.steps)?;
            if let Some(step) = run.halted_at {
                return Err(CliError::Numerical(format!(
                    "swing integration became non-finite at step {step}"
                )));
            }
            let eq = net.equilibrium()?;
            let lin = spectral::eigenvalues(&net.linearized_step(&eq, s.dt))?;
            let sidecar = json!({
                "system": "swing",
                "dt": s.dt,
                "equilibrium": eq.iter().copied().collect::<Vec<f64>>(),
                "eigenvalues": complex_json(&lin),
            });
            (run.trajectory, sidecar)
        }
    };
    let mut out = sink(cfg.output.as_deref())?;
    write_snapshot_csv(&mut out, &traj)?;
    out.flush()?;
    let truth = truth
        .map(Path::to_path_buf)
        .or_else(|| cfg.output.as_deref().map(default_truth_path));
    match truth {
        Some(p) => write_json(Some(&p), &sidecar)?,
        None => eprintln!("simulate: no output path, true eigenvalues not written"),
    }
    eprintln!(
        "simulate: wrote {} states of dimension {}",
        traj.ncols(),
        traj.nrows()
    );
    Ok(())
}

pub fn fit_stream(cfg: &RunConfig, eig_out: Option<&Path>) -> CmdResult {
    let data = read_input(cfg.input()?)?;
    let train = training_rows(cfg, &data)?;
    let skipped = (0..train.ncols())
        .filter(|&j| !column_is_finite(&train, j))
        .count();
    let dict = dictionary_for(cfg, &train)?;
    let dominant = cfg.dominant.min(dict.feature_dim());
    let (xp, xf) = to_pairs(&train)?;
    let mut stream = KoopmanStream::new(dict, cfg.delta)?;
    let tracking = track_stream(&mut stream, &xp, &xf, cfg.cadence, dominant)?;
    if stream.count() == 0 {
        return Err(CliError::Data(
            "no finite snapshot pairs in the input".into(),
        ));
    }
    if let Some(path) = eig_out {
        let mut out = sink(Some(path))?;
        writeln!(out, "{TRAJECTORY_HEADER}")?;
        for r in &tracking.reports {
            write_trajectory_rows(&mut out, r.sample_count, &r.dominant)?;
        }
        out.flush()?;
    }
    let model = attach_projection(stream.snapshot(), &train)?;
    let mut out = sink(cfg.output.as_deref())?;
    writeln!(out, "{}", model.to_json()?)?;
    out.flush()?;
    eprintln!(
        "fit-stream: {} pairs accepted, {} rejected, {skipped} non-finite rows skipped, \
         cumulative update time {:.6} s",
        stream.count(),
        stream.rejected(),
        tracking.update_seconds
    );
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Solver {
    Pinv,
    Ridge,
}

pub fn fit_batch(cfg: &RunConfig, solver: Solver) -> CmdResult {
    let data = read_input(cfg.input()?)?;
    let train = training_rows(cfg, &data)?;
    let dict = dictionary_for(cfg, &train)?;
    let (xp, xf) = finite_pairs(&train)?;
    let yp = dict.lift_batch(&xp)?;
    let yf = dict.lift_batch(&xf)?;
    let k = match solver {
        Solver::Pinv => fit_batch_pinv(&yp, &yf)?,
        Solver::Ridge => fit_batch_ridge(&yp, &yf, cfg.delta)?,
    };
    let model = KoopmanModel::new(k, dict, xp.ncols(), cfg.delta)?;
    let model = attach_projection(model, &train)?;
    let mut out = sink(cfg.output.as_deref())?;
    writeln!(out, "{}", model.to_json()?)?;
    out.flush()?;
    eprintln!("fit-batch: {:?} fit on {} pairs", solver, xp.ncols());
    Ok(())
}

pub fn predict(
    cfg: &RunConfig,
    model_path: &Path,
    start: usize,
    horizon: usize,
    mse_out: Option<&Path>,
) -> CmdResult {
    let mut model = read_model(model_path)?;
    let data = read_input(cfg.input()?)?;
    if data.nrows() != model.dict.state_dim() {
        return Err(CliError::Data(format!(
            "input has dimension {}, model expects {}",
            data.nrows(),
            model.dict.state_dim()
        )));
    }
    let end = start
        .checked_add(horizon)
        .filter(|&e| e < data.ncols())
        .ok_or_else(|| {
            CliError::Usage(format!(
                "window {start}..={} is outside the {} rows of the input",
                start.saturating_add(horizon),
                data.ncols()
            ))
        })?;
    if let Some(rows) = model.train_rows {
        if start < rows {
            return Err(CliError::Usage(format!(
                "prediction start {start} overlaps the {rows} training rows"
            )));
        }
    }
    if model.projection.is_none() {
        let rows = model.train_rows.ok_or_else(|| {
            CliError::Usage("model has neither a projection nor recorded training rows".into())
        })?;
        if rows > data.ncols() {
            return Err(CliError::Data(format!(
                "model was trained on {rows} rows but the input holds {}",
                data.ncols()
            )));
        }
        model = attach_projection(model, &data.columns(0, rows).into_owned())?;
    }
    if !column_is_finite(&data, start) {
        return Err(CliError::Data(format!("row {start} is not finite")));
    }
    let x0 = data.column(start).into_owned();
    let pred = Predictor::new(model)?.predict(&x0, horizon)?;
    let truth = data.columns(start, end - start + 1).into_owned();

    let n = data.nrows();
    let mut out = sink(cfg.output.as_deref())?;
    let mut header = vec!["step".to_string()];
    header.extend((1..=n).map(|i| format!("pred_x{i}")));
    header.extend((1..=n).map(|i| format!("true_x{i}")));
    writeln!(out, "{}", header.join(","))?;
    for t in 0..pred.states.ncols() {
        let mut row = vec![(start + t).to_string()];
        row.extend(pred.states.column(t).iter().map(|&v| fmt_f64(v)));
        row.extend(truth.column(t).iter().map(|&v| fmt_f64(v)));
        writeln!(out, "{}", row.join(","))?;
    }
    out.flush()?;

    let report = match pred.overflow_at {
        Some(step) => {
            eprintln!("predict: prediction overflowed at step {step}; output truncated");
            json!({
                "start": start, "horizon": horizon, "overflow_at": step,
                "per_state": Value::Null, "mean": Value::Null,
            })
        }
        None => {
            let m = mse(&pred.states, &truth)?;
            json!({
                "start": start, "horizon": horizon, "overflow_at": Value::Null,
                "per_state": m.per_state, "mean": m.mean,
            })
        }
    };
    match mse_out {
        Some(p) => write_json(Some(p), &report),
        None => {
            eprintln!(
                "{}",
                serde_json::to_string(&report).map_err(|e| CliError::Data(e.to_string()))?
            );
            Ok(())
        }
    }
}

/// Picks the smallest mean MSE; ties and NaNs resolve to the smaller δ.
pub fn select_delta(results: &[(f64, f64)]) -> usize {
    let mut best = 0;
    for (i, &(_, m)) in results.iter().enumerate().skip(1) {
        let current = results[best].1;
        if m < current || (current.is_nan() && !m.is_nan()) {
            best = i;
        }
    }
    best
}

pub fn sweep_delta(cfg: &RunConfig, deltas: &[f64], val_start: usize, val_end: usize) -> CmdResult {
    if deltas.is_empty() {
        return Err(CliError::Usage("at least one delta is required".into()));
    }
    if let Some(d) = deltas.iter().find(|d| !(**d > 0.0) || !d.is_finite()) {
        return Err(CliError::Usage(format!(
            "delta must be positive and finite, got {d}"
        )));
    }
    let data = read_input(cfg.input()?)?;
    let rows = cfg
        .train_rows
        .ok_or_else(|| CliError::Usage("sweep-delta needs train_rows".into()))?;
    let train = training_rows(cfg, &data)?;
    if val_start < rows {
        return Err(CliError::Usage(format!(
            "validation window starts at {val_start}, inside the {rows} training rows"
        )));
    }
    if val_start > val_end || val_end >= data.ncols() {
        return Err(CliError::Usage(format!(
            "validation window {val_start}..={val_end} is outside the {} rows",
            data.ncols()
        )));
    }
    if train.iter().any(|v| !v.is_finite()) {
        return Err(CliError::Data(
            "training rows contain non-finite values".into(),
        ));
    }
    let dict = dictionary_for(cfg, &train)?;
    let mut sorted = deltas.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let mut results = Vec::with_capacity(sorted.len());
    for &delta in &sorted {
        let pts = evaluate_horizon(&dict, delta, &[rows - 1], &data, (val_start, val_end))?;
        results.push((delta, pts[0].mse.mean));
    }
    let best = select_delta(&results);
    let mut out = sink(cfg.output.as_deref())?;
    writeln!(out, "delta,mean_mse,selected")?;
    for (i, (d, m)) in results.iter().enumerate() {
        writeln!(
            out,
            "{},{},{}",
            fmt_f64(*d),
            fmt_f64(*m),
            u8::from(i == best)
        )?;
    }
    out.flush()?;
    eprintln!(
        "sweep-delta: selected delta {:e} (mean MSE {:e})",
        results[best].0, results[best].1
    );
    Ok(())
}

pub fn bench(
    cfg: &RunConfig,
    checkpoints: &[usize],
    updates_out: Option<&Path>,
    summary_out: Option<&Path>,
) -> CmdResult {
    let data = read_input(cfg.input()?)?;
    let train = training_rows(cfg, &data)?;
    let (xp, xf) = finite_pairs(&train)?;
    if let Some(&m) = checkpoints.iter().max() {
        if m > xp.ncols() {
            return Err(CliError::Data(format!(
                "checkpoint {m} exceeds the {} finite snapshot pairs",
                xp.ncols()
            )));
        }
    }
    let dict = dictionary_for(cfg, &train)?;
    let report = run_benchmark(&dict, &xp, &xf, cfg.delta, checkpoints)?;
    let mut out = sink(cfg.output.as_deref())?;
    report.write_timing_csv(&mut out)?;
    out.flush()?;
    if let Some(p) = updates_out {
        let mut out = sink(Some(p))?;
        report.write_updates_csv(&mut out)?;
        out.flush()?;
    }
    let (first, last) = report.decile_medians();
    let summary = json!({
        "feature_dim": dict.feature_dim(),
        "samples": checkpoints.last(),
        "stream_total_s": report.stream_total_s(),
        "batch_checkpoint_total_s": report.batch_checkpoint_total_s(),
        "batch_checkpoint_over_stream": report.batch_checkpoint_total_s() / report.stream_total_s(),
        "batch_every_step_extrapolated_s": report.extrapolated_every_step_s,
        "update_median_first_decile_s": first,
        "update_median_last_decile_s": last,
        "rejected": report.rejected,
    });
    match summary_out {
        Some(p) => write_json(Some(p), &summary)?,
        None => eprintln!("{summary}"),
    }
    Ok(())
}

pub fn eig(
    cfg: &RunConfig,
    model_path: &Path,
    dominant: Option<usize>,
    continuous: Option<(&Path, f64)>,
    tol: f64,
) -> CmdResult {
    let model = read_model(model_path)?;
    let spec = spectral::eig(&model)?;
    let values = match dominant {
        Some(m) => spec.dominant(m)?,
        None => spec.eigenvalues.clone(),
    };
    let mut out = sink(cfg.output.as_deref())?;
    writeln!(out, "index,re,im,magnitude")?;
    for (i, l) in values.iter().enumerate() {
        writeln!(
            out,
            "{i},{},{},{}",
            fmt_f64(l.re),
            fmt_f64(l.im),
            fmt_f64(l.norm())
        )?;
    }
    out.flush()?;
    if let Some((path, dt)) = continuous {
        let c = spectral::to_continuous(&values, dt)?;
        let mut out = sink(Some(path))?;
        writeln!(out, "index,re,im")?;
        for (i, l) in c.values.iter().enumerate() {
            writeln!(out, "{i},{},{}", fmt_f64(l.re), fmt_f64(l.im))?;
        }
        out.flush()?;
        if c.dropped > 0 {
            eprintln!(
                "eig: {} zero eigenvalues have no continuous-time image",
                c.dropped
            );
        }
    }
    eprintln!(
        "eig: spectral radius {}, {} modes with |lambda| > 1 + {tol:e}",
        spec.spectral_radius(),
        spec.unstable_modes(tol).len()
    );
    Ok(())
}
