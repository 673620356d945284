//! Run orchestration: filter loop over a dataset, error norms, CSV output.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use log::{info, warn};
use navfilter_core::filter::{step, Estimator, NavRepr, QuatNav};
use navfilter_core::measurement::ObservationNoiseSpec;
use navfilter_core::se23::{orthogonality_drift, rot_distance, so3_exp, NavState};
use navfilter_core::simulator::{emit_streams, integrate_truth, ImuCorruption, TrajectoryProfile, TruthSample};
use navfilter_core::{FilterConfig, GravityModel, Landmark, StepDiagnostics, StepInput, Vec3};

use crate::config::{vec3, Backend, InitKind, InitSection, ProfileKind, RunConfig};
use crate::euroc::{self, ReplayDataset, ReplayOptions};

/// Width of the final window, as a fraction of the run.
pub const FINAL_WINDOW: f64 = 0.1;
/// Block length for the moving-average trend check (s).
pub const TREND_BLOCK: f64 = 1.0;
/// A block counts as non-increasing when it exceeds its predecessor by no
/// more than this fraction of the peak block mean.
pub const TREND_SLACK: f64 = 0.01;

pub const NORM_NAMES: [&str; 5] = ["attitude", "position", "velocity", "gyro_bias", "accel_bias"];

/// Per-step error norms `‖RR̂ᵀ‖_I, ‖P−P̂‖, ‖V−V̂‖, ‖b_Ω−b̂_Ω‖, ‖b_a−b̂_a‖`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunMetrics {
    pub t: Vec<f64>,
    pub norms: Vec<[f64; 5]>,
    pub steps: usize,
    pub corrections: usize,
    /// Channel-steps where the error left its envelope and the guard widened it.
    pub guard_activations: usize,
    /// Same, excluding the first correction.
    pub guard_after_first: usize,
    pub initial_conditions_ok: Option<bool>,
    /// Largest orthogonality drift of the attitude estimate.
    pub max_drift: f64,
    pub finite: bool,
}

impl RunMetrics {
    fn column(&self, i: usize) -> impl Iterator<Item = f64> + '_ {
        self.norms.iter().map(move |n| n[i])
    }

    pub fn peak(&self, i: usize) -> f64 {
        self.column(i).filter(|v| v.is_finite()).fold(0.0, f64::max)
    }

    pub fn initial(&self, i: usize) -> f64 {
        self.norms.first().map_or(f64::NAN, |n| n[i])
    }

    pub fn last(&self, i: usize) -> f64 {
        self.norms.last().map_or(f64::NAN, |n| n[i])
    }

    /// Mean over the last [`FINAL_WINDOW`] of the run's duration.
    pub fn final_window_mean(&self, i: usize) -> f64 {
        let (Some(&t0), Some(&t1)) = (self.t.first(), self.t.last()) else {
            return f64::NAN;
        };
        let from = t1 - FINAL_WINDOW * (t1 - t0);
        let vals: Vec<f64> = self
            .t
            .iter()
            .zip(self.column(i))
            .filter(|(t, v)| **t >= from && v.is_finite())
            .map(|(_, v)| v)
            .collect();
        vals.iter().sum::<f64>() / vals.len() as f64
    }

    /// Means over consecutive [`TREND_BLOCK`] windows.
    pub fn block_means(&self, i: usize) -> Vec<f64> {
        let Some(&t0) = self.t.first() else {
            return Vec::new();
        };
        let mut out: Vec<(f64, usize)> = Vec::new();
        for (t, v) in self.t.iter().zip(self.column(i)) {
            if !v.is_finite() {
                continue;
            }
            let b = ((t - t0) / TREND_BLOCK).floor() as usize;
            if out.len() <= b {
                out.resize(b + 1, (0.0, 0));
            }
            out[b].0 += v;
            out[b].1 += 1;
        }
        out.into_iter()
            .filter(|(_, n)| *n > 0)
            .map(|(s, n)| s / n as f64)
            .collect()
    }

    /// Fraction of block-to-block transitions that do not increase.
    pub fn trend_fraction(&self, i: usize) -> f64 {
        let means = self.block_means(i);
        if means.len() < 2 {
            return 1.0;
        }
        let peak = means.iter().cloned().fold(0.0, f64::max);
        let ok = means
            .windows(2)
            .filter(|w| w[1] <= w[0] + TREND_SLACK * peak)
            .count();
        ok as f64 / (means.len() - 1) as f64
    }

    /// No non-finite estimates and attitude kept on SO(3).
    pub fn invariants_hold(&self) -> bool {
        self.finite && self.max_drift <= 1e-9
    }
}

pub fn error_norms(truth: &TruthSample, x: &NavState, b_omega_hat: &Vec3, b_a_hat: &Vec3) -> [f64; 5] {
    [
        rot_distance(&(truth.state.rot * x.rot.transpose())),
        (truth.state.pos - x.pos).norm(),
        (truth.state.vel - x.vel).norm(),
        (truth.b_omega - b_omega_hat).norm(),
        (truth.b_a - b_a_hat).norm(),
    ]
}

/// Initial estimate from the `[init]` section and the first truth sample.
pub fn initial_estimate(init: &InitSection, truth0: Option<&TruthSample>) -> NavState {
    match (init.kind, truth0) {
        (InitKind::Truth, Some(t)) => NavState::new(
            t.state.rot * so3_exp(&vec3(&init.attitude_offset)),
            t.state.pos + vec3(&init.position_offset),
            t.state.vel + vec3(&init.velocity_offset),
        ),
        _ => NavState::identity(),
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub diagnostics: Vec<StepDiagnostics>,
    pub metrics: RunMetrics,
    /// Estimate after each step.
    pub trajectory: Vec<NavState>,
}

fn run_generic<N: NavRepr>(
    data: &ReplayDataset,
    cfg: &FilterConfig,
    init: N,
) -> anyhow::Result<RunOutput> {
    let t0 = data.imu.first().map_or(0.0, |s| s.t);
    let mut state = Estimator::new(init, t0);
    let mut metrics = RunMetrics {
        finite: true,
        ..Default::default()
    };
    let record = |m: &mut RunMetrics, truth: Option<&TruthSample>, s: &Estimator<N>| {
        let x = s.x_hat.nav_state();
        m.max_drift = m.max_drift.max(orthogonality_drift(x.rot.matrix()));
        let finite = x.pos.iter().chain(x.vel.iter()).chain(x.rot.matrix().iter()).all(|v| v.is_finite());
        m.finite &= finite;
        if let Some(t) = truth {
            m.t.push(t.t);
            m.norms.push(error_norms(t, &x, &s.b_omega_hat, &s.b_a_hat));
        }
    };
    record(&mut metrics, data.truth.first().and_then(Option::as_ref), &state);

    let mut diagnostics = Vec::with_capacity(data.imu.len());
    let mut trajectory = Vec::with_capacity(data.imu.len());
    let mut first_correction = true;
    for (k, imu) in data.imu.iter().enumerate() {
        let input = StepInput {
            imu: *imu,
            dt: data.dt[k],
            observations: data.observations[k].as_deref(),
        };
        let (next, diag) =
            step(&state, &input, &data.landmarks, cfg).with_context(|| format!("filter step {k} at t = {}", imu.t))?;
        state = next;
        if diag.corrected {
            metrics.corrections += 1;
            metrics.guard_activations += diag.guard_count();
            if !first_correction {
                metrics.guard_after_first += diag.guard_count();
            }
            if diag.initial_conditions_ok.is_some() {
                metrics.initial_conditions_ok = diag.initial_conditions_ok;
            }
            first_correction = false;
        }
        diagnostics.push(diag);
        trajectory.push(state.x_hat.nav_state());
        record(&mut metrics, data.truth.get(k + 1).and_then(Option::as_ref), &state);
    }
    metrics.steps = data.imu.len();
    Ok(RunOutput {
        diagnostics,
        metrics,
        trajectory,
    })
}

/// Runs the filter over `data` starting from `init`.
pub fn run_filter(data: &ReplayDataset, cfg: &FilterConfig, backend: Backend, init: NavState) -> anyhow::Result<RunOutput> {
    match backend {
        Backend::Matrix => run_generic(data, cfg, init),
        Backend::Quaternion => run_generic(data, cfg, QuatNav::from_nav_state(&init)),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub const DIAGNOSTICS_HEADER: &str = "t,e1,e2,e3,e4,xi1,xi2,xi3,xi4,E_R,E_P1,E_P2,E_P3,w_omega_norm,w_v_norm,w_a_norm,\
b_omega_hat_x,b_omega_hat_y,b_omega_hat_z,b_a_hat_x,b_a_hat_y,b_a_hat_z,guard1,guard2,guard3,guard4";

/// One row per step; error, transform and correction columns are empty on
/// prediction-only steps.
pub fn write_diagnostics<W: Write>(mut w: W, diags: &[StepDiagnostics]) -> std::io::Result<()> {
    writeln!(w, "{DIAGNOSTICS_HEADER}")?;
    for d in diags {
        let mut row: Vec<String> = vec![d.t.to_string()];
        row.extend((0..4).map(|i| opt(d.e.map(|e| e.0[i]))));
        row.extend(d.xi.iter().map(|x| if x.is_finite() { x.to_string() } else { String::new() }));
        row.push(opt(d.transformed.map(|t| t.e_r)));
        row.extend((0..3).map(|i| opt(d.transformed.map(|t| t.e_p[i]))));
        row.push(opt(d.terms.map(|t| t.w_omega.norm())));
        row.push(opt(d.terms.map(|t| t.w_v.norm())));
        row.push(opt(d.terms.map(|t| t.w_a.norm())));
        row.extend(d.b_omega_hat.iter().map(|v| v.to_string()));
        row.extend(d.b_a_hat.iter().map(|v| v.to_string()));
        row.extend(d.guard.iter().map(|g| u8::from(*g).to_string()));
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn write_error_trajectory<W: Write>(mut w: W, m: &RunMetrics) -> std::io::Result<()> {
    writeln!(w, "t,{}", NORM_NAMES.join(","))?;
    for (t, n) in m.t.iter().zip(&m.norms) {
        let cells: Vec<String> = n.iter().map(|v| if v.is_finite() { v.to_string() } else { String::new() }).collect();
        writeln!(w, "{t},{}", cells.join(","))?;
    }
    Ok(())
}

pub fn write_metrics<W: Write>(mut w: W, m: &RunMetrics) -> std::io::Result<()> {
    writeln!(w, "metric,value")?;
    writeln!(w, "steps,{}", m.steps)?;
    writeln!(w, "corrections,{}", m.corrections)?;
    writeln!(w, "guard_activations,{}", m.guard_activations)?;
    writeln!(w, "guard_activations_after_first,{}", m.guard_after_first)?;
    writeln!(w, "initial_conditions_ok,{}", m.initial_conditions_ok.map_or(String::new(), |b| b.to_string()))?;
    writeln!(w, "max_orthogonality_drift,{}", m.max_drift)?;
    for (i, name) in NORM_NAMES.iter().enumerate() {
        writeln!(w, "{name}_initial,{}", m.initial(i))?;
        writeln!(w, "{name}_peak,{}", m.peak(i))?;
        writeln!(w, "{name}_final,{}", m.last(i))?;
        writeln!(w, "{name}_final_window_mean,{}", m.final_window_mean(i))?;
    }
    writeln!(w, "position_trend_fraction,{}", m.trend_fraction(1))?;
    Ok(())
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

/// Writes `diagnostics.csv`, `metrics.csv` and `errors.csv` into `out`.
pub fn write_outputs(out: &Path, run: &RunOutput) -> anyhow::Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut w = create(&out.join("diagnostics.csv"))?;
    write_diagnostics(&mut w, &run.diagnostics)?;
    w.flush()?;
    let mut w = create(&out.join("metrics.csv"))?;
    write_metrics(&mut w, &run.metrics)?;
    w.flush()?;
    let mut w = create(&out.join("errors.csv"))?;
    write_error_trajectory(&mut w, &run.metrics)?;
    w.flush()?;
    Ok(())
}

pub fn build_profile(cfg: &RunConfig, gravity: &GravityModel) -> TrajectoryProfile {
    let s = &cfg.simulate;
    let dt = euroc_dt(s.imu_rate);
    match s.profile {
        ProfileKind::Hover => TrajectoryProfile::hover(s.duration, dt, s.height, gravity),
        ProfileKind::Straight => TrajectoryProfile::straight(s.duration, dt, s.speed, s.height, gravity),
        ProfileKind::Circle => TrajectoryProfile::circle(s.duration, dt, s.radius, s.rate, s.height, gravity),
        ProfileKind::FigureEight => {
            let a = s.amplitude;
            TrajectoryProfile::figure_eight(s.duration, dt, (a[0], a[1], a[2]), s.rate, s.height, gravity)
        }
    }
}

fn euroc_dt(rate: f64) -> f64 {
    navfilter_core::simulator::period_ns(rate).map_or(f64::NAN, |ns| ns as f64 * 1e-9)
}

/// Simulated dataset for the `[simulate]` section.
pub fn simulate_dataset(cfg: &RunConfig) -> anyhow::Result<(ReplayDataset, navfilter_core::simulator::Streams)> {
    let fc = cfg.filter_config()?;
    let s = &cfg.simulate;
    let profile = build_profile(cfg, &fc.gravity);
    let landmarks: Vec<Landmark> = match &s.landmarks {
        Some(p) => {
            let path = cfg.resolve(p);
            let f = File::open(&path).with_context(|| format!("opening {}", path.display()))?;
            euroc::read_landmarks(f, &path.display().to_string())?
        }
        None => {
            let truth = integrate_truth(&profile, &profile.initial, &fc.gravity);
            euroc::generate_virtual_landmarks(&truth, s.n_landmarks, s.margin, cfg.seed)?
        }
    };
    let corruption = ImuCorruption {
        b_omega: vec3(&s.b_omega),
        b_a: vec3(&s.b_a),
        sigma_omega: s.sigma_omega,
        sigma_a: s.sigma_a,
    };
    let noise = ObservationNoiseSpec::isotropic(s.sigma_y);
    let streams = emit_streams(
        &profile,
        &landmarks,
        &corruption,
        &noise,
        (s.imu_rate, s.cam_rate),
        &fc.gravity,
        cfg.seed,
    )?;
    Ok((ReplayDataset::from_streams(&streams, landmarks), streams))
}

pub fn replay_dataset(cfg: &RunConfig) -> anyhow::Result<ReplayDataset> {
    let r = &cfg.replay;
    let imu = r.imu.as_ref().context("replay.imu is not set")?;
    let gt = r.groundtruth.as_ref().context("replay.groundtruth is not set")?;
    let opts = ReplayOptions {
        n_landmarks: r.n_landmarks,
        margin: r.margin,
        cam_rate: r.cam_rate,
        sigma_y: r.sigma_y,
        seed: cfg.seed,
    };
    Ok(euroc::build_replay(&cfg.resolve(imu), &cfg.resolve(gt), &opts)?)
}

pub fn output_dir(cfg: &RunConfig, cli_out: Option<&Path>) -> PathBuf {
    cli_out
        .map(Path::to_path_buf)
        .or_else(|| cfg.out.as_ref().map(|p| cfg.resolve(p)))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn finish(out: &Path, data: &ReplayDataset, cfg: &RunConfig) -> anyhow::Result<RunOutput> {
    let fc = cfg.filter_config()?;
    let init = initial_estimate(&cfg.init, data.truth.first().and_then(Option::as_ref));
    let run = run_filter(data, &fc, cfg.backend, init)?;
    write_outputs(out, &run)?;
    let mut lm = create(&out.join("landmarks.csv"))?;
    euroc::write_landmarks(&mut lm, &data.landmarks)?;
    lm.flush()?;
    let m = &run.metrics;
    info!(
        "{} steps, {} corrections, {} guard activations",
        m.steps, m.corrections, m.guard_activations
    );
    for (i, name) in NORM_NAMES.iter().enumerate() {
        info!("{name}: peak {:.6} final {:.6}", m.peak(i), m.last(i));
    }
    if !m.invariants_hold() {
        warn!("invariant breach: finite = {}, drift = {:e}", m.finite, m.max_drift);
    }
    Ok(run)
}

/// `simulate` mode.
pub fn simulate(cfg: &RunConfig, out: &Path) -> anyhow::Result<RunOutput> {
    let (data, streams) = simulate_dataset(cfg).context("building simulated streams")?;
    std::fs::create_dir_all(out)?;
    if cfg.simulate.export_euroc {
        let (imu, gt) = euroc::streams_to_records(&streams);
        euroc::export_euroc(out, &imu, &gt).context("exporting EuRoC-style files")?;
    }
    finish(out, &data, cfg).context("simulate run")
}

/// `replay` mode.
pub fn replay(cfg: &RunConfig, out: &Path) -> anyhow::Result<RunOutput> {
    let data = replay_dataset(cfg).context("building replay dataset")?;
    finish(out, &data, cfg).context("replay run")
}
