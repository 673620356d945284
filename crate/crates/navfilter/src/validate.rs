//! `validate` mode: randomized property checks with a pass/fail report.

use std::io::Write;

use navfilter_core::error_dynamics::{closed_form, finite_difference, TwinPoint};
use navfilter_core::filter::{CorrectionTerms, Mutation};
use navfilter_core::measurement::{check_noncollinear, landmark_stats, sorted_eigenvalues};
use navfilter_core::se23::{se23_exp, so3_exp, upsilon, weighted_rot_distance};
use navfilter_core::{Landmark, Mat3, Mat5, NavState, TangentElement, UnitQuaternion, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{Backend, RunConfig};
use crate::euroc::{read_groundtruth, read_imu, streams_to_records, write_groundtruth, write_imu};
use crate::harness::run_filter;
use crate::scenarios;

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyResult {
    pub property: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl PropertyResult {
    fn new(property: &'static str, passed: bool, detail: String) -> Self {
        PropertyResult { property, passed, detail }
    }
}

pub fn write_report<W: Write>(mut w: W, results: &[PropertyResult]) -> std::io::Result<()> {
    writeln!(w, "property,passed,detail")?;
    for r in results {
        writeln!(w, "{},{},\"{}\"", r.property, r.passed, r.detail.replace('"', "'"))?;
    }
    Ok(())
}

pub fn random_rotation<R: Rng>(rng: &mut R) -> Mat3 {
    loop {
        let q0: f64 = rng.gen_range(-1.0..1.0);
        let q = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let n2 = q0 * q0 + q.norm_squared();
        if n2 > 1e-6 && n2 <= 1.0 {
            let uq = UnitQuaternion::new_normalize(q0, q).expect("nonzero quaternion");
            return *navfilter_core::se23::quat_to_rot(&uq).matrix();
        }
    }
}

/// Three to eight weighted non-collinear points in a 10 m cube.
pub fn random_landmarks<R: Rng>(rng: &mut R) -> Vec<Landmark> {
    loop {
        let n = rng.gen_range(3..=8);
        let ls: Vec<Landmark> = (0..n)
            .map(|i| Landmark {
                id: i,
                p: Vec3::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)),
                s: rng.gen_range(0.1..2.0),
            })
            .collect();
        if check_noncollinear(&ls) {
            return ls;
        }
    }
}

/// Slacks `(‖ϒ‖² − lower, upper − ‖ϒ‖²)` of the attitude-distance bounds
/// `(λ̲/2)(1+Tr R̃)‖MR̃‖_I ≤ ‖ϒ(MR̃)‖² ≤ 2λ̄‖MR̃‖_I`, with `λ` the eigenvalues
/// of `Tr{M}I − M`.
pub fn attitude_bound_slack(m: &Mat3, r: &Mat3) -> (f64, f64) {
    let m_bar = Mat3::identity() * m.trace() - m;
    let ev = sorted_eigenvalues(&m_bar);
    let mr = m * r;
    let dist = weighted_rot_distance(m, &mr);
    let ups = upsilon(&mr).norm_squared();
    let lower = 0.5 * ev[0] * (1.0 + r.trace()) * dist;
    let upper = 2.0 * ev[2] * dist;
    (ups - lower, upper - ups)
}

/// Worst slack over `pairs` random `(R̃, M)` pairs per seed.
pub fn attitude_bound_sweep(seeds: std::ops::Range<u64>, pairs: usize) -> PropertyResult {
    let mut worst = f64::INFINITY;
    let mut violations = 0usize;
    for seed in seeds.clone() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..pairs {
            let (_, _, m) = landmark_stats(&random_landmarks(&mut rng)).expect("nonempty");
            let r = random_rotation(&mut rng);
            let (lo, hi) = attitude_bound_slack(&m, &r);
            let w = lo.min(hi) / m.trace().max(1.0);
            worst = worst.min(w);
            if w < -1e-9 {
                violations += 1;
            }
        }
    }
    PropertyResult::new(
        "attitude_bound_sweep",
        violations == 0,
        format!("seeds {seeds:?}, {pairs} pairs each, {violations} violations, worst scaled slack {worst:e}"),
    )
}

/// `Σ_{n<terms} (A/2^s)^n/n!`, squared `s` times.
pub fn taylor_exp(a: &Mat5, terms: usize) -> Mat5 {
    let norm = a.norm();
    let s = if norm > 0.5 { (norm / 0.5).log2().ceil() as u32 } else { 0 };
    let b = a / 2f64.powi(s as i32);
    let mut sum = Mat5::identity();
    let mut term = Mat5::identity();
    for n in 1..terms {
        term = term * b / n as f64;
        sum += term;
    }
    for _ in 0..s {
        sum = sum * sum;
    }
    sum
}

pub fn random_tangent<R: Rng>(rng: &mut R, max_rot: f64) -> (TangentElement, f64) {
    let dir = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    let dir = if dir.norm() > 1e-9 { dir.normalize() } else { Vec3::x() };
    // log-uniform angle so the small-angle branch is exercised too
    let angle = max_rot * 10f64.powf(rng.gen_range(-8.0..0.0));
    let dt = rng.gen_range(0.001..1.0);
    let v = Vec3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
    let a = Vec3::new(rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0));
    let kappa = rng.gen_range(-1.5..1.5);
    (TangentElement::new(&(dir * angle / dt), v, a, kappa), dt)
}

pub fn exp_oracle(n: usize, seed: u64) -> PropertyResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let (u, dt) = random_tangent(&mut rng, 1.0);
        let reference = taylor_exp(&(u.to_matrix() * dt), 30);
        worst = worst.max((se23_exp(&u, dt) - reference).norm());
    }
    PropertyResult::new(
        "exp_taylor_oracle",
        worst < 1e-9,
        format!("{n} tangents, worst Frobenius difference {worst:e}"),
    )
}

/// IMU and ground-truth CSVs written and read back unchanged.
pub fn csv_round_trip(seed: u64) -> PropertyResult {
    let gravity = navfilter_core::GravityModel::default();
    let profile = navfilter_core::TrajectoryProfile::figure_eight(2.0, 0.005, (2.0, 1.0, 0.3), 0.5, 1.0, &gravity);
    let corruption = navfilter_core::ImuCorruption {
        b_omega: Vec3::repeat(0.01),
        b_a: Vec3::repeat(0.1),
        sigma_omega: 0.01,
        sigma_a: 0.05,
    };
    let streams = navfilter_core::simulator::emit_streams(
        &profile,
        &scenarios::reference_landmarks(),
        &corruption,
        &navfilter_core::ObservationNoiseSpec::noiseless(),
        (200.0, 20.0),
        &gravity,
        seed,
    );
    let streams = match streams {
        Ok(s) => s,
        Err(e) => return PropertyResult::new("csv_round_trip", false, e.to_string()),
    };
    let (imu, gt) = streams_to_records(&streams);
    let mut buf_imu = Vec::new();
    let mut buf_gt = Vec::new();
    let written = write_imu(&mut buf_imu, &imu).and_then(|_| write_groundtruth(&mut buf_gt, &gt));
    if let Err(e) = written {
        return PropertyResult::new("csv_round_trip", false, e.to_string());
    }
    let back_imu = read_imu(buf_imu.as_slice(), "imu");
    let back_gt = read_groundtruth(buf_gt.as_slice(), "groundtruth");
    let passed = matches!((&back_imu, &back_gt), (Ok(a), Ok(b)) if *a == imu && *b == gt);
    PropertyResult::new(
        "csv_round_trip",
        passed,
        format!("{} IMU rows, {} truth rows", imu.len(), gt.len()),
    )
}

/// Largest attitude (Frobenius) and position gaps between the backends.
pub fn backend_gap(sc: &scenarios::Scenario) -> anyhow::Result<(f64, f64)> {
    let a = run_filter(&sc.data, &sc.config, Backend::Matrix, sc.init)?;
    let b = run_filter(&sc.data, &sc.config, Backend::Quaternion, sc.init)?;
    let (mut att, mut pos): (f64, f64) = (0.0, 0.0);
    for (x, y) in a.trajectory.iter().zip(&b.trajectory) {
        att = att.max((x.rot.matrix() - y.rot.matrix()).norm());
        pos = pos.max((x.pos - y.pos).norm());
    }
    Ok((att, pos))
}

pub fn cross_backend(duration: f64) -> PropertyResult {
    let sc = scenarios::convergence(duration, 200.0, 200.0, 0);
    match backend_gap(&sc) {
        Ok((att, pos)) => PropertyResult::new(
            "cross_backend_equivalence",
            att < 1e-6 && pos < 1e-6,
            format!("{} steps, attitude gap {att:e}, position gap {pos:e}", sc.data.imu.len()),
        ),
        Err(e) => PropertyResult::new("cross_backend_equivalence", false, format!("{e:#}")),
    }
}

/// Every corrected step has `|eᵢ| < ξᵢ` and no guard fires after the first
/// correction.
pub fn envelope_containment(duration: f64, mutation: Mutation) -> PropertyResult {
    let mut sc = scenarios::convergence(duration, 200.0, 200.0, 0);
    sc.config.mutation = mutation;
    let run = match run_filter(&sc.data, &sc.config, Backend::Matrix, sc.init) {
        Ok(r) => r,
        Err(e) => return PropertyResult::new("envelope_containment", false, format!("{e:#}")),
    };
    let mut outside = 0usize;
    for d in run.diagnostics.iter().filter(|d| d.corrected).skip(1) {
        if let Some(e) = d.e {
            outside += (0..4).filter(|&i| !(e.0[i].abs() < d.xi[i])).count();
        }
    }
    let guards = run.metrics.guard_after_first;
    PropertyResult::new(
        "envelope_containment",
        outside == 0 && guards == 0 && run.metrics.invariants_hold(),
        format!("{outside} channel-steps outside, {guards} guard activations after the first correction"),
    )
}

pub fn equilibrium(steps: usize) -> PropertyResult {
    let sc = scenarios::equilibrium(steps);
    match run_filter(&sc.data, &sc.config, Backend::Matrix, sc.init) {
        Ok(run) => {
            let worst = run.metrics.norms.iter().flat_map(|n| n.iter()).fold(0.0f64, |a, b| a.max(*b));
            PropertyResult::new("equilibrium", worst < 1e-8, format!("{steps} steps, largest error norm {worst:e}"))
        }
        Err(e) => PropertyResult::new("equilibrium", false, format!("{e:#}")),
    }
}

fn rvec<R: Rng>(rng: &mut R, s: f64) -> Vec3 {
    Vec3::new(rng.gen_range(-s..s), rng.gen_range(-s..s), rng.gen_range(-s..s))
}

pub fn random_twin_point<R: Rng>(rng: &mut R) -> TwinPoint {
    let ls = random_landmarks(rng);
    let (p_c, _, m) = landmark_stats(&ls).expect("nonempty");
    TwinPoint {
        truth: NavState::new(so3_exp(&rvec(rng, 1.5)), rvec(rng, 3.0), rvec(rng, 2.0)),
        estimate: NavState::new(so3_exp(&rvec(rng, 1.5)), rvec(rng, 3.0), rvec(rng, 2.0)),
        omega: rvec(rng, 1.0),
        accel: rvec(rng, 2.0) + Vec3::new(0.0, 0.0, 9.81),
        b_omega: rvec(rng, 0.05),
        b_a: rvec(rng, 0.3),
        b_omega_hat: rvec(rng, 0.05),
        b_a_hat: rvec(rng, 0.3),
        terms: CorrectionTerms {
            w_omega: rvec(rng, 1.0),
            w_v: rvec(rng, 1.0),
            w_a: rvec(rng, 1.0) + Vec3::new(0.0, 0.0, 9.81),
        },
        p_c,
        m,
        gravity: Vec3::new(0.0, 0.0, -9.81),
    }
}

pub fn error_dynamics(n: usize, seed: u64) -> PropertyResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let pt = random_twin_point(&mut rng);
        let fd = finite_difference(&pt, 1e-5, se23_exp);
        let res = fd.relative_residuals(&closed_form(&pt));
        worst = res.iter().fold(worst, |a, b| a.max(*b));
    }
    PropertyResult::new(
        "error_dynamics",
        worst < 1e-4,
        format!("{n} configurations, worst relative residual {worst:e}"),
    )
}

/// Runs every property; `cfg.filter.mutation` is applied to the containment run.
pub fn validate(cfg: &RunConfig) -> anyhow::Result<Vec<PropertyResult>> {
    let mutation = cfg.filter_config()?.mutation;
    let seeds = cfg.validate.seeds;
    Ok(vec![
        attitude_bound_sweep(0..seeds, 1000),
        exp_oracle(10_000, cfg.seed),
        csv_round_trip(cfg.seed),
        cross_backend(30.0),
        envelope_containment(30.0, mutation),
        equilibrium(1000),
        error_dynamics(50, cfg.seed),
    ])
}
