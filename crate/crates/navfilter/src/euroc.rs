//! EuRoC-style CSV files, virtual landmarks and replay datasets.
//!
//! The ground-truth frame is the inertial frame, z up, so gravity is
//! `(0, 0, −9.81)`. Timestamps stay in integer nanoseconds until they are
//! turned into seconds relative to the start of the replay window.

use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use navfilter_core::measurement::{check_noncollinear, synthesize_observation, ObservationNoiseSpec};
use navfilter_core::se23::{quat_to_rot, NavState, UnitQuaternion, Vec3};
use navfilter_core::simulator::{ImuSample, Streams, TruthSample};
use navfilter_core::{Landmark, LandmarkObservation};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Quaternions further than this from unit norm are rejected.
pub const QUAT_NORM_TOL: f64 = 1e-2;
/// Truth samples further than this from a step end are not used for metrics.
pub const TRUTH_MATCH_NS: u64 = 2_500_000;

const IMU_HEADER: &str = "#timestamp [ns],w_RS_S_x [rad s^-1],w_RS_S_y [rad s^-1],w_RS_S_z [rad s^-1],\
a_RS_S_x [m s^-2],a_RS_S_y [m s^-2],a_RS_S_z [m s^-2]";
const GT_HEADER: &str = "#timestamp,p_RS_R_x [m],p_RS_R_y [m],p_RS_R_z [m],q_RS_w [],q_RS_x [],q_RS_y [],q_RS_z [],\
v_RS_R_x [m s^-1],v_RS_R_y [m s^-1],v_RS_R_z [m s^-1],b_w_RS_S_x [rad s^-1],b_w_RS_S_y [rad s^-1],\
b_w_RS_S_z [rad s^-1],b_a_RS_S_x [m s^-2],b_a_RS_S_y [m s^-2],b_a_RS_S_z [m s^-2]";

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("{path}:{line}: {reason}")]
    Parse {
        path: String,
        line: u64,
        reason: String,
    },
    #[error("truth trajectory is empty or not finite")]
    DegenerateTrajectory,
    #[error("IMU and ground truth do not overlap in time")]
    NoTimeOverlap,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Filter(#[from] navfilter_core::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawImuRecord {
    pub timestamp: u64,
    pub omega: Vec3,
    pub accel: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruthRecord {
    pub timestamp: u64,
    pub position: Vec3,
    pub orientation: UnitQuaternion,
    pub velocity: Vec3,
    /// Gyro and accelerometer biases, when the file carries them.
    pub bias: Option<(Vec3, Vec3)>,
}

impl GroundTruthRecord {
    pub fn nav_state(&self) -> NavState {
        NavState::new(quat_to_rot(&self.orientation), self.position, self.velocity)
    }
}

fn open(path: &Path) -> Result<File, IngestError> {
    File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => IngestError::FileNotFound(path.to_path_buf()),
        _ => IngestError::Io(e),
    })
}

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(r)
}

/// Parsed numeric rows with their line numbers.
fn rows<R: Read>(r: R, label: &str, min_cols: usize) -> Result<Vec<(u64, u64, Vec<f64>)>, IngestError> {
    let mut out = Vec::new();
    let mut previous: Option<u64> = None;
    for rec in reader(r).records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let err = |reason: String| IngestError::Parse {
            path: label.to_string(),
            line,
            reason,
        };
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        if rec.len() < min_cols {
            return Err(err(format!("expected at least {min_cols} columns, found {}", rec.len())));
        }
        let ts: u64 = rec[0]
            .parse()
            .map_err(|_| err(format!("bad timestamp `{}`", &rec[0])))?;
        if let Some(p) = previous {
            if ts <= p {
                return Err(err(format!("timestamp {ts} does not increase (previous {p})")));
            }
        }
        previous = Some(ts);
        let mut vals = Vec::with_capacity(rec.len() - 1);
        for f in rec.iter().skip(1) {
            let v: f64 = f.parse().map_err(|_| err(format!("bad number `{f}`")))?;
            if !v.is_finite() {
                return Err(err(format!("non-finite value `{f}`")));
            }
            vals.push(v);
        }
        out.push((line, ts, vals));
    }
    Ok(out)
}

pub fn read_imu<R: Read>(r: R, label: &str) -> Result<Vec<RawImuRecord>, IngestError> {
    Ok(rows(r, label, 7)?
        .into_iter()
        .map(|(_, timestamp, v)| RawImuRecord {
            timestamp,
            omega: Vec3::new(v[0], v[1], v[2]),
            accel: Vec3::new(v[3], v[4], v[5]),
        })
        .collect())
}

pub fn parse_imu_csv(path: &Path) -> Result<Vec<RawImuRecord>, IngestError> {
    read_imu(open(path)?, &path.display().to_string())
}

pub fn read_groundtruth<R: Read>(r: R, label: &str) -> Result<Vec<GroundTruthRecord>, IngestError> {
    let mut out = Vec::new();
    for (line, timestamp, v) in rows(r, label, 11)? {
        let n = (v[3] * v[3] + v[4] * v[4] + v[5] * v[5] + v[6] * v[6]).sqrt();
        if (n - 1.0).abs() > QUAT_NORM_TOL {
            return Err(IngestError::Parse {
                path: label.to_string(),
                line,
                reason: format!("quaternion norm {n} is too far from 1"),
            });
        }
        let q = Vec3::new(v[4], v[5], v[6]);
        // already-unit rows are kept bit for bit
        let orientation = if (n - 1.0).abs() <= 1e-12 && v[3] >= 0.0 {
            UnitQuaternion::from_parts_unchecked(v[3], q)
        } else {
            UnitQuaternion::new_normalize(v[3], q)?
        };
        let bias = (v.len() >= 16).then(|| (Vec3::new(v[10], v[11], v[12]), Vec3::new(v[13], v[14], v[15])));
        out.push(GroundTruthRecord {
            timestamp,
            position: Vec3::new(v[0], v[1], v[2]),
            orientation,
            velocity: Vec3::new(v[7], v[8], v[9]),
            bias,
        });
    }
    Ok(out)
}

pub fn parse_groundtruth_csv(path: &Path) -> Result<Vec<GroundTruthRecord>, IngestError> {
    read_groundtruth(open(path)?, &path.display().to_string())
}

pub fn write_imu<W: Write>(mut w: W, records: &[RawImuRecord]) -> std::io::Result<()> {
    writeln!(w, "{IMU_HEADER}")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.timestamp, r.omega.x, r.omega.y, r.omega.z, r.accel.x, r.accel.y, r.accel.z
        )?;
    }
    Ok(())
}

pub fn write_groundtruth<W: Write>(mut w: W, records: &[GroundTruthRecord]) -> std::io::Result<()> {
    writeln!(w, "{GT_HEADER}")?;
    for r in records {
        let (p, q, v) = (r.position, r.orientation, r.velocity);
        write!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.timestamp, p.x, p.y, p.z, q.q0, q.q.x, q.q.y, q.q.z, v.x, v.y, v.z
        )?;
        if let Some((bw, ba)) = r.bias {
            write!(w, ",{},{},{},{},{},{}", bw.x, bw.y, bw.z, ba.x, ba.y, ba.z)?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// `id,s,px,py,pz` rows.
pub fn write_landmarks<W: Write>(mut w: W, landmarks: &[Landmark]) -> std::io::Result<()> {
    writeln!(w, "#id,s,px,py,pz")?;
    for l in landmarks {
        writeln!(w, "{},{},{},{},{}", l.id, l.s, l.p.x, l.p.y, l.p.z)?;
    }
    Ok(())
}

pub fn read_landmarks<R: Read>(r: R, label: &str) -> Result<Vec<Landmark>, IngestError> {
    let mut out = Vec::new();
    for rec in reader(r).records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let err = |reason: &str| IngestError::Parse {
            path: label.to_string(),
            line,
            reason: reason.to_string(),
        };
        if rec.len() != 5 {
            return Err(err("expected id,s,px,py,pz"));
        }
        let id: u32 = rec[0].parse().map_err(|_| err("bad landmark id"))?;
        let mut v = [0.0; 4];
        for (slot, f) in v.iter_mut().zip(rec.iter().skip(1)) {
            *slot = f.parse().map_err(|_| err("bad number"))?;
        }
        let l = Landmark::new(id, Vec3::new(v[1], v[2], v[3]), v[0]).map_err(|e| err(&e.to_string()))?;
        out.push(l);
    }
    Ok(out)
}

/// `n` landmarks drawn uniformly in the truth bounding box inflated by
/// `margin`, redrawn until they are non-collinear.
pub fn generate_virtual_landmarks(
    truth: &[NavState],
    n: usize,
    margin: f64,
    seed: u64,
) -> Result<Vec<Landmark>, IngestError> {
    if n < 3 {
        return Err(navfilter_core::Error::InsufficientFeatures(n).into());
    }
    if truth.is_empty() || !(margin >= 0.0) {
        return Err(IngestError::DegenerateTrajectory);
    }
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for x in truth {
        lo = lo.inf(&x.pos);
        hi = hi.sup(&x.pos);
    }
    lo -= Vec3::repeat(margin);
    hi += Vec3::repeat(margin);
    let extent = hi - lo;
    if !extent.iter().all(|e| e.is_finite()) || extent.iter().filter(|e| **e > 0.0).count() < 2 {
        return Err(IngestError::DegenerateTrajectory);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..1000 {
        let ls: Vec<Landmark> = (0..n)
            .map(|i| {
                let u = Vec3::new(rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>());
                Landmark {
                    id: i as u32,
                    p: lo + extent.component_mul(&u),
                    s: 1.0,
                }
            })
            .collect();
        if check_noncollinear(&ls) {
            return Ok(ls);
        }
    }
    Err(IngestError::DegenerateTrajectory)
}

/// Truth at an arbitrary time: linear in position and velocity, slerp in
/// orientation, biases from the earlier sample.
pub fn interpolate_truth(gt: &[GroundTruthRecord], t_ns: u64) -> Option<GroundTruthRecord> {
    let i = gt.partition_point(|r| r.timestamp <= t_ns);
    if i == 0 {
        return None;
    }
    let a = &gt[i - 1];
    if a.timestamp == t_ns {
        return Some(*a);
    }
    let b = gt.get(i)?;
    let s = (t_ns - a.timestamp) as f64 / (b.timestamp - a.timestamp) as f64;
    Some(GroundTruthRecord {
        timestamp: t_ns,
        position: a.position + (b.position - a.position) * s,
        orientation: a.orientation.slerp(&b.orientation, s),
        velocity: a.velocity + (b.velocity - a.velocity) * s,
        bias: a.bias,
    })
}

/// Ground-truth sample within [`TRUTH_MATCH_NS`] of `t_ns`, nearest first.
pub fn nearest_truth(gt: &[GroundTruthRecord], t_ns: u64) -> Option<&GroundTruthRecord> {
    let i = gt.partition_point(|r| r.timestamp < t_ns);
    let before = i.checked_sub(1).map(|j| &gt[j]);
    let after = gt.get(i);
    let best = match (before, after) {
        (Some(a), Some(b)) => {
            if t_ns - a.timestamp <= b.timestamp - t_ns {
                a
            } else {
                b
            }
        }
        (Some(a), None) => a,
        (None, Some(b)) => b,
        (None, None) => return None,
    };
    (best.timestamp.abs_diff(t_ns) <= TRUTH_MATCH_NS).then_some(best)
}

/// Everything a filter run consumes, on a common time base.
///
/// `imu[k]` covers `[t_k, t_k + dt[k]]`, `observations[k]` belongs to the end
/// of that step, `truth[k]` is truth at `t_k` (with one extra entry for the
/// final step end) when a sample is available.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayDataset {
    pub imu: Vec<ImuSample>,
    pub dt: Vec<f64>,
    pub observations: Vec<Option<Vec<LandmarkObservation>>>,
    pub truth: Vec<Option<TruthSample>>,
    pub landmarks: Vec<Landmark>,
}

impl ReplayDataset {
    pub fn from_streams(s: &Streams, landmarks: Vec<Landmark>) -> Self {
        ReplayDataset {
            imu: s.imu.clone(),
            dt: vec![s.dt; s.imu.len()],
            observations: s.observations.clone(),
            truth: s.truth.iter().copied().map(Some).collect(),
            landmarks,
        }
    }
}

fn truth_sample(r: &GroundTruthRecord, t: f64) -> TruthSample {
    let (b_omega, b_a) = r.bias.unwrap_or((Vec3::repeat(f64::NAN), Vec3::repeat(f64::NAN)));
    TruthSample {
        t,
        state: r.nav_state(),
        b_omega,
        b_a,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplayOptions {
    pub n_landmarks: usize,
    pub margin: f64,
    pub cam_rate: f64,
    pub sigma_y: f64,
    pub seed: u64,
}

impl Default for ReplayOptions {
    fn default() -> Self {
        ReplayOptions {
            n_landmarks: 20,
            margin: 1.0,
            cam_rate: 20.0,
            sigma_y: 0.0,
            seed: 0,
        }
    }
}

/// Builds a replay from parsed records. IMU samples pass through untouched;
/// observations are synthesized from interpolated truth at `cam_rate`.
pub fn build_replay_from(
    imu: &[RawImuRecord],
    gt: &[GroundTruthRecord],
    opts: &ReplayOptions,
) -> Result<ReplayDataset, IngestError> {
    let (Some(gf), Some(gl)) = (gt.first(), gt.last()) else {
        return Err(IngestError::NoTimeOverlap);
    };
    let start = gf.timestamp;
    let end = gl.timestamp;
    let imu: Vec<&RawImuRecord> = imu
        .iter()
        .filter(|r| r.timestamp >= start && r.timestamp <= end)
        .collect();
    if imu.len() < 2 {
        return Err(IngestError::NoTimeOverlap);
    }
    let t0 = imu[0].timestamp;
    let secs = |ns: u64| (ns - t0) as f64 * 1e-9;
    let steps = imu.len() - 1;

    let truth_poses: Vec<NavState> = gt.iter().map(|r| r.nav_state()).collect();
    let landmarks = generate_virtual_landmarks(&truth_poses, opts.n_landmarks, opts.margin, opts.seed)?;

    let period = navfilter_core::simulator::period_ns(opts.cam_rate)?;
    let mut observations: Vec<Option<Vec<LandmarkObservation>>> = vec![None; steps];
    let noise = ObservationNoiseSpec::isotropic(opts.sigma_y);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(1);
    let step_ends: Vec<u64> = imu[1..].iter().map(|r| r.timestamp).collect();
    let mut t_cam = t0 + period;
    while t_cam <= imu[steps].timestamp {
        // step whose end is nearest to the camera instant
        let i = step_ends.partition_point(|&e| e < t_cam);
        let k = match (i.checked_sub(1), step_ends.get(i)) {
            (Some(a), Some(&b)) if t_cam - step_ends[a] < b - t_cam => a,
            (_, Some(_)) => i,
            (Some(a), None) => a,
            (None, None) => break,
        };
        if let Some(truth) = interpolate_truth(gt, t_cam) {
            let x = truth.nav_state();
            let obs: Vec<LandmarkObservation> = landmarks
                .iter()
                .map(|l| synthesize_observation(l, &x, &noise, secs(t_cam), &mut rng))
                .collect();
            observations[k] = Some(obs);
        }
        t_cam += period;
    }

    Ok(ReplayDataset {
        imu: imu[..steps]
            .iter()
            .map(|r| ImuSample {
                t: secs(r.timestamp),
                omega_m: r.omega,
                a_m: r.accel,
            })
            .collect(),
        dt: imu
            .windows(2)
            .map(|w| (w[1].timestamp - w[0].timestamp) as f64 * 1e-9)
            .collect(),
        observations,
        truth: imu
            .iter()
            .map(|r| nearest_truth(gt, r.timestamp).map(|g| truth_sample(g, secs(r.timestamp))))
            .collect(),
        landmarks,
    })
}

pub fn build_replay(imu_path: &Path, gt_path: &Path, opts: &ReplayOptions) -> Result<ReplayDataset, IngestError> {
    let imu = parse_imu_csv(imu_path)?;
    let gt = parse_groundtruth_csv(gt_path)?;
    build_replay_from(&imu, &gt, opts)
}

/// Seconds to the nanosecond grid used by the simulator.
pub fn to_ns(t: f64) -> u64 {
    (t * 1e9).round() as u64
}

/// EuRoC-style records for simulator streams.
pub fn streams_to_records(s: &Streams) -> (Vec<RawImuRecord>, Vec<GroundTruthRecord>) {
    let imu = s
        .imu
        .iter()
        .map(|r| RawImuRecord {
            timestamp: to_ns(r.t),
            omega: r.omega_m,
            accel: r.a_m,
        })
        .collect();
    let gt = s
        .truth
        .iter()
        .map(|r| GroundTruthRecord {
            timestamp: to_ns(r.t),
            position: r.state.pos,
            orientation: UnitQuaternion::from_rotation(&r.state.rot),
            velocity: r.state.vel,
            bias: Some((r.b_omega, r.b_a)),
        })
        .collect();
    (imu, gt)
}

/// Writes `imu0/data.csv` and `state_groundtruth_estimate0/data.csv` under `dir`.
pub fn export_euroc(dir: &Path, imu: &[RawImuRecord], gt: &[GroundTruthRecord]) -> std::io::Result<(PathBuf, PathBuf)> {
    let imu_path = dir.join("imu0").join("data.csv");
    let gt_path = dir.join("state_groundtruth_estimate0").join("data.csv");
    for p in [&imu_path, &gt_path] {
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut w = std::io::BufWriter::new(File::create(&imu_path)?);
    write_imu(&mut w, imu)?;
    w.flush()?;
    let mut w = std::io::BufWriter::new(File::create(&gt_path)?);
    write_groundtruth(&mut w, gt)?;
    w.flush()?;
    Ok((imu_path, gt_path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn imu_row() {
        let data = "#timestamp,wx,wy,wz,ax,ay,az\n1403715273262142976,0.1,0.2,0.3,9.8,0.0,0.1\n";
        let r = read_imu(data.as_bytes(), "mem").unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].timestamp, 1403715273262142976);
        assert_eq!(r[0].omega, Vec3::new(0.1, 0.2, 0.3));
        assert_eq!(r[0].accel, Vec3::new(9.8, 0.0, 0.1));
        assert!(read_imu("".as_bytes(), "mem").unwrap().is_empty());
    }

    #[test]
    fn imu_errors_carry_lines() {
        let data = "#h\n10,0,0,0,0,0,0\n5,0,0,0,0,0,0\n";
        match read_imu(data.as_bytes(), "mem") {
            Err(IngestError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let data = "1,0,0,x,0,0,0\n";
        assert!(matches!(read_imu(data.as_bytes(), "mem"), Err(IngestError::Parse { line: 1, .. })));
        assert!(matches!(
            parse_imu_csv(Path::new("/nonexistent/imu.csv")),
            Err(IngestError::FileNotFound(_))
        ));
    }

    #[test]
    fn groundtruth_quaternion_policy() {
        let ok = "1,0,0,0,1,0,0,0,0,0,0\n";
        let r = read_groundtruth(ok.as_bytes(), "mem").unwrap();
        assert_eq!(*r[0].nav_state().rot.matrix(), navfilter_core::Mat3::identity());
        assert!(r[0].bias.is_none());
        let slightly = "1,0,0,0,1.005,0,0,0,0,0,0\n";
        let r = read_groundtruth(slightly.as_bytes(), "mem").unwrap();
        assert!((r[0].orientation.norm() - 1.0).abs() < 1e-15);
        let bad = "1,0,0,0,1.02,0,0,0,0,0,0\n";
        assert!(matches!(read_groundtruth(bad.as_bytes(), "mem"), Err(IngestError::Parse { .. })));
    }

    #[test]
    fn nearest_truth_window() {
        let rec = |ts| GroundTruthRecord {
            timestamp: ts,
            position: Vec3::zeros(),
            orientation: UnitQuaternion::identity(),
            velocity: Vec3::zeros(),
            bias: None,
        };
        let gt = vec![rec(0), rec(5_000_000), rec(10_000_000)];
        assert_eq!(nearest_truth(&gt, 2_000_000).unwrap().timestamp, 0);
        assert_eq!(nearest_truth(&gt, 3_000_000).unwrap().timestamp, 5_000_000);
        assert!(nearest_truth(&gt, 13_000_000).is_none());
    }
}
