//! Experiment driver: runs, diagnostics, convergence and scaling studies,
//! and the damping-rate fit.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::domain::{Case, SimConfig, VelocityGrid};
use crate::error::{Error, Result};
use crate::init::{heat_exact, homogeneous_exact, initial_e, initial_field};
use crate::integrator::{Integrator, SimState};
use crate::moments::{macro_from_moments, moments_from_tt};
use crate::snapshot::write_snapshot;
use crate::transport::electric_energy;
use crate::tt::{effective_rank, TensorTrain3};

/// Version tag written above every CSV header.
pub const SCHEMA: &str = "ttkinetic-csv/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRow {
    pub t: f64,
    pub electric_energy: f64,
    /// `Σ_j n_j dx` from the carried moments.
    pub total_mass: f64,
    pub total_momentum_1: f64,
    /// Kinetic plus electric energy.
    pub total_energy: f64,
    /// Largest effective ranks over the spatial points.
    pub r1: usize,
    pub r2: usize,
    pub wall_seconds_cumulative: f64,
    /// Mass of the low-rank distribution itself.
    pub f_mass: f64,
}

/// Outcome of [`run_case`].
#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub case: Case,
    pub steps: usize,
    pub t_final: f64,
    pub wall_seconds: f64,
    /// Relative Frobenius error against the exact solution (homogeneous
    /// and heat cases).
    pub relative_error: Option<f64>,
    pub max_mass_drift: f64,
    pub outputs: Vec<PathBuf>,
}

fn csv_writer(path: &Path, note: &[&str]) -> Result<csv::Writer<fs::File>> {
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    writeln!(file, "# {SCHEMA}").map_err(|e| Error::io(path, e))?;
    for line in note {
        writeln!(file, "# {line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(csv::Writer::from_writer(file))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(file))
}

/// `git describe` of the working tree, or `"unknown"`.
pub fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

#[derive(Serialize)]
struct Manifest<'a, T: Serialize> {
    schema: &'static str,
    command: &'a str,
    git_describe: String,
    wall_seconds: f64,
    config: &'a SimConfig,
    inputs: Vec<String>,
    result: &'a T,
}

fn write_manifest<T: Serialize>(cfg: &SimConfig, command: &str, inputs: Vec<String>, wall: f64, result: &T) -> Result<PathBuf> {
    let path = cfg.output_dir.join("manifest.json");
    let m = Manifest {
        schema: SCHEMA,
        command,
        git_describe: git_describe(),
        wall_seconds: wall,
        config: cfg,
        inputs,
        result,
    };
    let text = serde_json::to_string_pretty(&m)?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn exact_solution(cfg: &SimConfig, t: f64) -> Result<Option<TensorTrain3>> {
    Ok(match cfg.case {
        Case::HomogeneousFP => Some(homogeneous_exact(t, &cfg.v_grid)?),
        Case::Heat => Some(heat_exact(t, cfg.param_or("var0", 1.0), &cfg.v_grid)?),
        _ => None,
    })
}

/// Relative Frobenius error of the field against the exact solution, if
/// the case has one.
pub fn relative_error(cfg: &SimConfig, state: &SimState) -> Result<Option<f64>> {
    let Some(exact) = exact_solution(cfg, state.t)? else {
        return Ok(None);
    };
    let exact = vec![exact; state.field.len()];
    Ok(Some(crate::integrator::field_rel_distance(&state.field, &exact)?))
}

pub fn diagnostics(cfg: &SimConfig, state: &SimState, wall: f64) -> Result<DiagnosticsRow> {
    let dx = cfg.x_grid.dx;
    let ee = electric_energy(&state.fields.e, dx);
    let sum = |i: usize| state.moments.iter().map(|u| u.0[i]).sum::<f64>() * dx;
    let (mut r1, mut r2) = (0, 0);
    for f in &state.field {
        let (a, b) = effective_rank(f, cfg.delta)?;
        r1 = r1.max(a);
        r2 = r2.max(b);
    }
    let f_mass = state
        .field
        .iter()
        .map(|f| moments_from_tt(f, &cfg.v_grid).0[0])
        .sum::<f64>()
        * dx;
    Ok(DiagnosticsRow {
        t: state.t,
        electric_energy: ee,
        total_mass: sum(0),
        total_momentum_1: sum(1),
        total_energy: 0.5 * sum(4) + ee,
        r1,
        r2,
        wall_seconds_cumulative: wall,
        f_mass,
    })
}

/// `∫ f dv2 dv3` as a function of `v1`.
pub fn phase_density(f: &TensorTrain3, grid: &VelocityGrid) -> Vec<f64> {
    let g = f.to_general();
    let (r1, nv, r2) = g.core2.dims();
    let mut m = nalgebra::DMatrix::<f64>::zeros(r1, r2);
    for a2 in 0..r2 {
        for k in 0..nv {
            for a1 in 0..r1 {
                m[(a1, a2)] += g.core2.get(a1, k, a2);
            }
        }
    }
    let z = g.core3.column_sum();
    let w = m * z;
    let out = &g.core1 * w;
    out.iter().map(|x| x * grid.dv * grid.dv).collect()
}

fn write_phase(cfg: &SimConfig, state: &SimState, path: &Path) -> Result<()> {
    let mut w = csv_writer(path, &[&format!("t = {}", state.t)])?;
    w.write_record(["x", "v1", "value"])?;
    let v = cfg.v_grid.nodes();
    for (x, f) in cfg.x_grid.nodes().iter().zip(&state.field) {
        for (vk, val) in v.iter().zip(phase_density(f, &cfg.v_grid)) {
            w.write_record(&[x.to_string(), vk.to_string(), val.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_macro(cfg: &SimConfig, state: &SimState, path: &Path) -> Result<()> {
    let mut w = csv_writer(path, &[&format!("t = {}", state.t)])?;
    w.write_record(["x", "n", "u1", "u2", "u3", "T", "E", "J"])?;
    for (j, x) in cfg.x_grid.nodes().iter().enumerate() {
        let (n, u, t) = match macro_from_moments(&state.moments[j]) {
            Ok(m) => (m.n, m.u, m.t),
            Err(_) => (state.moments[j].0[0], [f64::NAN; 3], f64::NAN),
        };
        w.write_record(
            [*x, n, u[0], u[1], u[2], t, state.fields.e[j], state.fields.j[j]]
                .iter()
                .map(|v| v.to_string()),
        )?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Initial low-rank state of a configuration.
pub fn initial_state(cfg: &SimConfig) -> Result<(Integrator, SimState)> {
    let integ = Integrator::from_config(cfg);
    let state = integ.initial_state(initial_field(cfg)?, initial_e(cfg)?)?;
    Ok((integ, state))
}

/// Steps a configuration to `t_end` without writing anything; calls
/// `observe` at `t = 0` and every `snapshot_stride` steps (and at the end).
pub fn simulate(
    cfg: &SimConfig,
    mut observe: impl FnMut(&SimState, f64) -> Result<()>,
) -> Result<SimState> {
    let start = Instant::now();
    let (integ, mut state) = initial_state(cfg)?;
    let steps = cfg.n_steps();
    observe(&state, 0.0)?;
    for n in 1..=steps {
        state = integ.time_step(&state)?;
        if n % cfg.snapshot_stride == 0 || n == steps {
            observe(&state, start.elapsed().as_secs_f64())?;
        }
    }
    Ok(state)
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match threads {
        Some(n) if n > 0 => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Validation(format!("thread pool: {e}")))?
            .install(f),
        _ => f(),
    }
}

/// Runs one experiment and writes its artifacts under `output_dir`.
pub fn run_case(cfg: &SimConfig, config_source: Option<&Path>) -> Result<RunSummary> {
    with_threads(cfg.threads, || run_case_inner(cfg, config_source))
}

fn run_case_inner(cfg: &SimConfig, config_source: Option<&Path>) -> Result<RunSummary> {
    let start = Instant::now();
    create_dir(&cfg.output_dir)?;
    let diag_path = cfg.output_dir.join("diagnostics.csv");
    let mut diag = csv_writer(&diag_path, &[&format!("case = {}, delta = {}", cfg.case, cfg.delta)])?;
    let err_path = cfg.output_dir.join("error.csv");
    let mut err_csv = match cfg.case {
        Case::HomogeneousFP | Case::Heat => {
            let mut w = csv_writer(&err_path, &[])?;
            w.write_record(["t", "relative_error"])?;
            Some(w)
        }
        _ => None,
    };
    let mut mass0 = None;
    let mut drift: f64 = 0.0;
    let mut last_error = None;
    let state = simulate(cfg, |s, wall| {
        let row = diagnostics(cfg, s, wall)?;
        let m0 = *mass0.get_or_insert(row.total_mass);
        drift = drift.max((row.total_mass - m0).abs() / m0.abs().max(f64::MIN_POSITIVE));
        diag.serialize(&row)?;
        if let Some(w) = err_csv.as_mut() {
            let e = relative_error(cfg, s)?.expect("exact solution");
            w.write_record([s.t.to_string(), e.to_string()])?;
            last_error = Some(e);
        }
        Ok(())
    })?;
    diag.flush().map_err(|e| Error::io(&diag_path, e))?;
    let mut outputs = vec![diag_path];
    if let Some(mut w) = err_csv {
        w.flush().map_err(|e| Error::io(&err_path, e))?;
        outputs.push(err_path);
    }

    let snap = cfg.output_dir.join("final.tt3");
    write_snapshot(&snap, &state.field)?;
    outputs.push(snap);
    let sidecar = cfg.output_dir.join("final_macro.csv");
    write_macro(cfg, &state, &sidecar)?;
    outputs.push(sidecar);
    if cfg.case.has_transport() {
        let phase = cfg.output_dir.join("phase_space.csv");
        write_phase(cfg, &state, &phase)?;
        outputs.push(phase);
    }

    let summary = RunSummary {
        case: cfg.case,
        steps: state.step_index,
        t_final: state.t,
        wall_seconds: start.elapsed().as_secs_f64(),
        relative_error: last_error,
        max_mass_drift: drift,
        outputs,
    };
    let inputs = config_source.map(|p| p.display().to_string()).into_iter().collect();
    write_manifest(cfg, "run", inputs, summary.wall_seconds, &summary)?;
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub dt: f64,
    pub steps: usize,
    pub relative_error: f64,
    /// `log(e_prev/e) / log(dt_prev/dt)`; `log2` of the error ratio for halved steps.
    pub observed_order: Option<f64>,
}

/// Final-time errors against the exact solution for each time step, largest first.
pub fn convergence_rows(base: &SimConfig, dt_list: &[f64]) -> Result<Vec<ConvergenceRow>> {
    if !matches!(base.case, Case::HomogeneousFP | Case::Heat) {
        return Err(Error::Validation(format!(
            "convergence study needs an exact solution, case {} has none",
            base.case
        )));
    }
    let mut dts = dt_list.to_vec();
    dts.sort_by(|a, b| b.total_cmp(a));
    let mut rows: Vec<ConvergenceRow> = Vec::with_capacity(dts.len());
    for dt in dts {
        let mut cfg = base.clone();
        cfg.dt = dt;
        cfg.dt_auto = false;
        cfg.snapshot_stride = usize::MAX;
        cfg.validate()?;
        let state = simulate(&cfg, |_, _| Ok(()))?;
        let e = relative_error(&cfg, &state)?.expect("exact solution");
        let order = rows
            .last()
            .map(|p| (p.relative_error / e).ln() / (p.dt / dt).ln());
        rows.push(ConvergenceRow {
            dt,
            steps: state.step_index,
            relative_error: e,
            observed_order: order,
        });
    }
    Ok(rows)
}

/// [`convergence_rows`] plus `convergence.csv` and a manifest.
pub fn convergence_study(base: &SimConfig, dt_list: &[f64], config_source: Option<&Path>) -> Result<Vec<ConvergenceRow>> {
    with_threads(base.threads, || {
        let start = Instant::now();
        create_dir(&base.output_dir)?;
        let rows = convergence_rows(base, dt_list)?;
        let path = base.output_dir.join("convergence.csv");
        let mut w = csv_writer(&path, &[&format!("case = {}, t_end = {}", base.case, base.t_end)])?;
        w.write_record(["dt", "steps", "relative_error", "observed_order"])?;
        for r in &rows {
            w.write_record([
                r.dt.to_string(),
                r.steps.to_string(),
                r.relative_error.to_string(),
                r.observed_order.map(|o| o.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        let inputs = config_source.map(|p| p.display().to_string()).into_iter().collect();
        write_manifest(base, "converge", inputs, start.elapsed().as_secs_f64(), &rows)?;
        Ok(rows)
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalingRow {
    pub nv: usize,
    pub steps: usize,
    /// Wall time of the stepping loop only.
    pub wall_seconds: f64,
    /// Ratio to the previous row.
    pub ratio: Option<f64>,
    /// Wall time of the same steps with the dense IMEX oracle.
    pub dense_wall_seconds: Option<f64>,
}

fn time_steps(cfg: &SimConfig) -> Result<(usize, f64)> {
    let (integ, mut state) = initial_state(cfg)?;
    let steps = cfg.n_steps();
    let start = Instant::now();
    for _ in 0..steps {
        state = integ.time_step(&state)?;
    }
    Ok((steps, start.elapsed().as_secs_f64()))
}

#[cfg(feature = "oracle")]
fn time_dense(cfg: &SimConfig, cap: usize) -> Result<Option<f64>> {
    use crate::oracle::{dense_imex_step, DenseState};
    if cfg.x_grid.nx * cfg.v_grid.nv.pow(3) > cap {
        return Ok(None);
    }
    let (integ, state) = initial_state(cfg)?;
    let mut d = DenseState::from_sim(&state)?;
    let start = Instant::now();
    for _ in 0..cfg.n_steps() {
        d = dense_imex_step(&d, &integ, cap)?;
    }
    Ok(Some(start.elapsed().as_secs_f64()))
}

#[cfg(not(feature = "oracle"))]
fn time_dense(_: &SimConfig, _: usize) -> Result<Option<f64>> {
    Ok(None)
}

/// Stepping-loop wall time per velocity resolution at fixed `dt` and rank.
/// The dense column is only filled when every `Nx·Nv³` is within `dense_cap`.
pub fn scaling_rows(base: &SimConfig, nv_list: &[usize], dense_cap: usize) -> Result<Vec<ScalingRow>> {
    let dense_ok = nv_list.iter().all(|&nv| base.x_grid.nx * nv.pow(3) <= dense_cap);
    let mut rows: Vec<ScalingRow> = Vec::with_capacity(nv_list.len());
    for &nv in nv_list {
        let mut cfg = base.clone();
        cfg.v_grid = VelocityGrid::new(base.v_grid.v_min, base.v_grid.v_max, nv)?;
        cfg.validate()?;
        let (steps, wall) = time_steps(&cfg)?;
        let dense = if dense_ok { time_dense(&cfg, dense_cap)? } else { None };
        rows.push(ScalingRow {
            nv,
            steps,
            wall_seconds: wall,
            ratio: rows.last().map(|p| wall / p.wall_seconds),
            dense_wall_seconds: dense,
        });
    }
    Ok(rows)
}

/// [`scaling_rows`] plus `scaling.csv` and a manifest.
pub fn scaling_study(base: &SimConfig, nv_list: &[usize], dense_cap: usize, config_source: Option<&Path>) -> Result<Vec<ScalingRow>> {
    with_threads(base.threads.or(Some(1)), || {
        let start = Instant::now();
        create_dir(&base.output_dir)?;
        let rows = scaling_rows(base, nv_list, dense_cap)?;
        let dense = rows.iter().all(|r| r.dense_wall_seconds.is_some());
        let note = if dense {
            String::from("dense_wall_seconds: full-tensor IMEX step on the same grid")
        } else {
            format!("dense column omitted: Nx*Nv^3 exceeds cap {dense_cap} for some Nv")
        };
        let threads = format!("threads = {}", rayon::current_num_threads());
        let path = base.output_dir.join("scaling.csv");
        let mut w = csv_writer(&path, &[&note, &threads])?;
        let mut header = vec!["nv", "steps", "wall_seconds", "ratio"];
        if dense {
            header.push("dense_wall_seconds");
        }
        w.write_record(&header)?;
        for r in &rows {
            let mut rec = vec![
                r.nv.to_string(),
                r.steps.to_string(),
                r.wall_seconds.to_string(),
                r.ratio.map(|x| x.to_string()).unwrap_or_default(),
            ];
            if let Some(d) = r.dense_wall_seconds.filter(|_| dense) {
                rec.push(d.to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        let inputs = config_source.map(|p| p.display().to_string()).into_iter().collect();
        write_manifest(base, "scale", inputs, start.elapsed().as_secs_f64(), &rows)?;
        Ok(rows)
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DampingFit {
    /// Damping rate of the field amplitude: half the slope of `ln ℰ` at the peaks.
    pub gamma: f64,
    /// Slope of the least-squares line through `ln ℰ` at the peaks.
    pub slope: f64,
    pub intercept: f64,
    pub peaks: Vec<(f64, f64)>,
    /// Root-mean-square deviation of the peak logs from the line.
    pub rms_residual: f64,
}

/// Strict local maxima, thinned to a minimum separation of half the spacing
/// of the first two maxima (the larger of two close maxima wins).
pub fn find_peaks(t: &[f64], y: &[f64]) -> Vec<(f64, f64)> {
    let raw: Vec<usize> = (1..y.len().saturating_sub(1))
        .filter(|&i| y[i] > y[i - 1] && y[i] > y[i + 1])
        .collect();
    if raw.len() < 2 {
        return raw.iter().map(|&i| (t[i], y[i])).collect();
    }
    let sep = 0.5 * (t[raw[1]] - t[raw[0]]);
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(raw.len());
    for &i in &raw {
        match out.last_mut() {
            Some(last) if t[i] - last.0 < sep => {
                if y[i] > last.1 {
                    *last = (t[i], y[i]);
                }
            }
            _ => out.push((t[i], y[i])),
        }
    }
    out
}

/// Least-squares rate from the successive maxima of an energy series within
/// `window` (inclusive). A constant series has rate zero.
pub fn damping_fit(t: &[f64], energy: &[f64], window: Option<(f64, f64)>) -> Result<DampingFit> {
    if t.len() != energy.len() {
        return Err(Error::DimensionMismatch {
            op: "damping_fit",
            detail: format!("{} times, {} values", t.len(), energy.len()),
        });
    }
    let (lo, hi) = window.unwrap_or((f64::NEG_INFINITY, f64::INFINITY));
    let (ts, ys): (Vec<f64>, Vec<f64>) = t
        .iter()
        .zip(energy)
        .filter(|(x, _)| **x >= lo && **x <= hi)
        .map(|(a, b)| (*a, *b))
        .unzip();
    if !ys.is_empty() && ys.iter().all(|y| *y == ys[0]) {
        return Ok(DampingFit {
            gamma: 0.0,
            slope: 0.0,
            intercept: ys[0].ln(),
            peaks: Vec::new(),
            rms_residual: 0.0,
        });
    }
    let peaks: Vec<(f64, f64)> = find_peaks(&ts, &ys).into_iter().filter(|p| p.1 > 0.0).collect();
    if peaks.len() < 4 {
        return Err(Error::InsufficientPeaks {
            found: peaks.len(),
            need: 4,
        });
    }
    let n = peaks.len() as f64;
    let mx = peaks.iter().map(|p| p.0).sum::<f64>() / n;
    let my = peaks.iter().map(|p| p.1.ln()).sum::<f64>() / n;
    let sxy: f64 = peaks.iter().map(|p| (p.0 - mx) * (p.1.ln() - my)).sum();
    let sxx: f64 = peaks.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rms = (peaks
        .iter()
        .map(|p| (p.1.ln() - intercept - slope * p.0).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    Ok(DampingFit {
        gamma: 0.5 * slope,
        slope,
        intercept,
        peaks,
        rms_residual: rms,
    })
}

/// Reads `t` and `electric_energy` columns of a diagnostics file.
pub fn read_energy_series(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut r = csv_reader(path)?;
    let headers = r.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Validation(format!("{}: no column '{name}'", path.display())))
    };
    let (it, ie) = (col("t")?, col("electric_energy")?);
    let mut t = Vec::new();
    let mut e = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let parse = |i: usize| {
            rec.get(i)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .ok_or_else(|| Error::Validation(format!("{}: bad number in row {t:?}", path.display(), t = rec.position())))
        };
        t.push(parse(it)?);
        e.push(parse(ie)?);
    }
    Ok((t, e))
}

pub fn read_diagnostics(path: &Path) -> Result<Vec<DiagnosticsRow>> {
    let mut r = csv_reader(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::load_config;

    fn cfg(case: &str, dir: &Path, extra: &str) -> SimConfig {
        load_config(&format!(
            "eta = 1\ndt = 0.05\nt_end = 0.2\nr1 = 2\nr2 = 2\nnv = 16\nv_min = -6\nv_max = 6\nnx = 4\nl_x = 1\n\
             case = {case}\noutput_dir = {}\nsnapshot_stride = 2\n{extra}",
            dir.display()
        ))
        .unwrap()
    }

    #[test]
    fn synthetic_damping_rate() {
        let (gamma, omega) = (-0.153, 1.4156);
        let t: Vec<f64> = (0..6000).map(|i| i as f64 * 0.005).collect();
        let e: Vec<f64> = t.iter().map(|t| (2.0 * gamma * t).exp() * (omega * t).cos().powi(2)).collect();
        let fit = damping_fit(&t, &e, None).unwrap();
        assert!((fit.gamma - gamma).abs() < 1e-3, "{}", fit.gamma);
        assert!(fit.peaks.len() >= 10);
        let windowed = damping_fit(&t, &e, Some((2.0, 12.0))).unwrap();
        assert!((windowed.gamma - gamma).abs() < 1e-3);
    }

    #[test]
    fn constant_series_has_zero_rate() {
        let t: Vec<f64> = (0..50).map(f64::from).collect();
        let fit = damping_fit(&t, &[2.0; 50], None).unwrap();
        assert_eq!(fit.gamma, 0.0);
    }

    #[test]
    fn too_few_peaks() {
        let t: Vec<f64> = (0..100).map(|i| i as f64 * 0.01).collect();
        let e: Vec<f64> = t.iter().map(|t| (3.0 * t).sin().powi(2)).collect();
        assert!(matches!(
            damping_fit(&t, &e, None),
            Err(Error::InsufficientPeaks { found: 1, need: 4 })
        ));
    }

    #[test]
    fn close_maxima_are_merged() {
        // Ripple on top of each hump produces a second strict maximum nearby.
        let t: Vec<f64> = (0..400).map(|i| i as f64 * 0.05).collect();
        let y: Vec<f64> = t
            .iter()
            .map(|t| (t.cos().powi(2)) + 0.02 * (40.0 * t).sin() * (-(t % std::f64::consts::PI - 0.3).powi(2) * 50.0).exp())
            .collect();
        let raw = (1..y.len() - 1).filter(|&i| y[i] > y[i - 1] && y[i] > y[i + 1]).count();
        let peaks = find_peaks(&t, &y);
        assert!(peaks.len() < raw);
        for w in peaks.windows(2) {
            assert!(w[1].0 - w[0].0 > 1.0);
        }
    }

    #[test]
    fn homogeneous_run_writes_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let c = cfg("HomogeneousFP", dir.path(), "");
        let c = SimConfig {
            x_grid: crate::domain::SpatialGrid::new(1.0, 1).unwrap(),
            ..c
        };
        let s = run_case(&c, None).unwrap();
        assert_eq!(s.steps, 4);
        assert!(s.relative_error.unwrap() < 0.05);
        let rows = read_diagnostics(&dir.path().join("diagnostics.csv")).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows.windows(2).all(|w| w[1].t > w[0].t));
        for name in ["error.csv", "final.tt3", "final_macro.csv", "manifest.json"] {
            assert!(dir.path().join(name).exists(), "{name}");
        }
        let text = fs::read_to_string(dir.path().join("diagnostics.csv")).unwrap();
        assert!(text.starts_with(&format!("# {SCHEMA}")));
        let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
        assert!(manifest["git_describe"].is_string());
        assert!(manifest["wall_seconds"].as_f64().unwrap() >= 0.0);
    }

    #[test]
    fn inhomogeneous_mass_and_determinism() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let s = run_case(&cfg("InhomogeneousFP", a.path(), ""), None).unwrap();
        run_case(&cfg("InhomogeneousFP", b.path(), ""), None).unwrap();
        assert!(s.max_mass_drift <= 1e-10, "{}", s.max_mass_drift);
        let ra = read_diagnostics(&a.path().join("diagnostics.csv")).unwrap();
        let rb = read_diagnostics(&b.path().join("diagnostics.csv")).unwrap();
        for (x, y) in ra.iter().zip(&rb) {
            assert_eq!(
                DiagnosticsRow { wall_seconds_cumulative: 0.0, ..x.clone() },
                DiagnosticsRow { wall_seconds_cumulative: 0.0, ..y.clone() }
            );
        }
        let phase = fs::read_to_string(a.path().join("phase_space.csv")).unwrap();
        assert_eq!(phase.lines().filter(|l| !l.starts_with('#')).count(), 1 + 4 * 16);
    }

    #[test]
    fn landau_energy_series_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let c = cfg("LandauDamping", dir.path(), "[case.LandauDamping]\nA = 0.01\nkappa = 6.283185307179586\n");
        run_case(&c, None).unwrap();
        let (t, e) = read_energy_series(&dir.path().join("diagnostics.csv")).unwrap();
        assert_eq!(t.len(), 3);
        assert!(e.iter().all(|x| *x > 0.0));
    }

    #[test]
    fn convergence_edge_cases() {
        let dir = tempfile::tempdir().unwrap();
        let c = SimConfig {
            x_grid: crate::domain::SpatialGrid::new(1.0, 1).unwrap(),
            ..cfg("HomogeneousFP", dir.path(), "")
        };
        let one = convergence_rows(&c, &[0.05]).unwrap();
        assert_eq!(one.len(), 1);
        assert!(one[0].observed_order.is_none());
        let whole = convergence_rows(&c, &[0.2]).unwrap();
        assert_eq!(whole[0].steps, 1);
        assert!(whole[0].relative_error.is_finite());
        let two = convergence_study(&c, &[0.025, 0.05], None).unwrap();
        assert_eq!(two[0].dt, 0.05);
        assert!(two[1].observed_order.unwrap() > 0.0, "{two:?}");
        assert!(dir.path().join("convergence.csv").exists());
        let bad = cfg("InhomogeneousFP", dir.path(), "");
        assert!(convergence_rows(&bad, &[0.05]).is_err());
    }

    #[test]
    fn scaling_single_row_and_dense_column() {
        let dir = tempfile::tempdir().unwrap();
        let c = SimConfig {
            x_grid: crate::domain::SpatialGrid::new(1.0, 1).unwrap(),
            ..cfg("HomogeneousFP", dir.path(), "")
        };
        let rows = scaling_study(&c, &[8], 2_000_000, None).unwrap();
        assert_eq!(rows.len(), 1);
        assert!(rows[0].ratio.is_none());
        assert!(rows[0].dense_wall_seconds.is_some());
        let text = fs::read_to_string(dir.path().join("scaling.csv")).unwrap();
        assert!(text.contains("dense_wall_seconds"));
        let capped = scaling_study(&c, &[8, 16], 1000, None).unwrap();
        assert!(capped.iter().all(|r| r.dense_wall_seconds.is_none()));
        let text = fs::read_to_string(dir.path().join("scaling.csv")).unwrap();
        assert!(text.contains("dense column omitted"));
        assert!(!text.contains("dense_wall_seconds"));
    }
}
