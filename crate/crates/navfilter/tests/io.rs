use std::io::Write;

use navfilter::euroc::{
    build_replay_from, read_groundtruth, read_imu, read_landmarks, write_groundtruth, write_imu, write_landmarks,
    GroundTruthRecord, IngestError, RawImuRecord, ReplayOptions,
};
use navfilter_core::{Landmark, UnitQuaternion, Vec3};
use proptest::prelude::*;

fn finite() -> impl Strategy<Value = f64> {
    prop::num::f64::NORMAL | prop::num::f64::ZERO | prop::num::f64::SUBNORMAL
}

fn vec3() -> impl Strategy<Value = Vec3> {
    (finite(), finite(), finite()).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn quaternion() -> impl Strategy<Value = UnitQuaternion> {
    (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0)
        .prop_filter("nonzero", |(a, b, c, d)| a * a + b * b + c * c + d * d > 1e-3)
        .prop_map(|(a, b, c, d)| {
            let s = if a < 0.0 { -1.0 } else { 1.0 };
            UnitQuaternion::new_normalize(s * a, Vec3::new(b, c, d) * s).unwrap()
        })
}

fn timestamps(n: usize) -> impl Strategy<Value = Vec<u64>> {
    prop::collection::vec(1u64..10_000_000, n).prop_map(|gaps| {
        gaps.iter()
            .scan(1_403_715_273_262_142_976u64, |t, g| {
                *t += g;
                Some(*t)
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn imu_rows_round_trip(ts in timestamps(20), vals in prop::collection::vec((vec3(), vec3()), 20)) {
        let recs: Vec<RawImuRecord> = ts.iter().zip(&vals)
            .map(|(t, (w, a))| RawImuRecord { timestamp: *t, omega: *w, accel: *a })
            .collect();
        let mut buf = Vec::new();
        write_imu(&mut buf, &recs).unwrap();
        prop_assert_eq!(read_imu(buf.as_slice(), "mem").unwrap(), recs);
    }

    #[test]
    fn groundtruth_rows_round_trip(
        ts in timestamps(10),
        vals in prop::collection::vec((vec3(), quaternion(), vec3(), prop::option::of((vec3(), vec3()))), 10),
    ) {
        // bias columns are all-or-nothing per file
        let with_bias = vals[0].3.is_some();
        let recs: Vec<GroundTruthRecord> = ts.iter().zip(&vals)
            .map(|(t, (p, q, v, b))| GroundTruthRecord {
                timestamp: *t,
                position: *p,
                orientation: *q,
                velocity: *v,
                bias: if with_bias { Some(b.unwrap_or((Vec3::zeros(), Vec3::zeros()))) } else { None },
            })
            .collect();
        let mut buf = Vec::new();
        write_groundtruth(&mut buf, &recs).unwrap();
        prop_assert_eq!(read_groundtruth(buf.as_slice(), "mem").unwrap(), recs);
    }

    #[test]
    fn landmarks_round_trip(pts in prop::collection::vec((vec3(), 0.01f64..100.0), 1..30)) {
        let ls: Vec<Landmark> = pts.iter().enumerate()
            .map(|(i, (p, s))| Landmark { id: i as u32 * 3, p: *p, s: *s })
            .collect();
        let mut buf = Vec::new();
        write_landmarks(&mut buf, &ls).unwrap();
        prop_assert_eq!(read_landmarks(buf.as_slice(), "mem").unwrap(), ls);
    }
}

fn parse_error_line(e: IngestError) -> u64 {
    match e {
        IngestError::Parse { line, .. } => line,
        other => panic!("expected a parse error, got {other}"),
    }
}

#[test]
fn malformed_imu_rows_report_their_line() {
    let data = "#header\n100,0,0,0,0,0,9.8\n200,0,0,x,0,0,9.8\n";
    assert_eq!(parse_error_line(read_imu(data.as_bytes(), "mem").unwrap_err()), 3);
    let short = "100,0,0,0,0,0\n";
    assert_eq!(parse_error_line(read_imu(short.as_bytes(), "mem").unwrap_err()), 1);
    let backwards = "100,0,0,0,0,0,9.8\n100,0,0,0,0,0,9.8\n";
    assert_eq!(parse_error_line(read_imu(backwards.as_bytes(), "mem").unwrap_err()), 2);
    let nan = "100,0,0,0,0,NaN,9.8\n";
    assert_eq!(parse_error_line(read_imu(nan.as_bytes(), "mem").unwrap_err()), 1);
}

#[test]
fn far_from_unit_quaternions_are_rejected() {
    let ok = "100,0,0,0,1.004,0,0,0,0,0,0\n";
    let r = read_groundtruth(ok.as_bytes(), "mem").unwrap();
    assert!((r[0].orientation.norm() - 1.0).abs() < 1e-15);
    let bad = "100,0,0,0,1.1,0,0,0,0,0,0\n";
    assert_eq!(parse_error_line(read_groundtruth(bad.as_bytes(), "mem").unwrap_err()), 1);
    let zero = "100,0,0,0,0,0,0,0,0,0,0\n";
    assert!(read_groundtruth(zero.as_bytes(), "mem").is_err());
}

#[test]
fn missing_files_are_named() {
    let e = navfilter::euroc::parse_imu_csv(std::path::Path::new("/nonexistent/imu.csv")).unwrap_err();
    assert!(matches!(e, IngestError::FileNotFound(_)), "{e}");
}

fn hover_records(n: u64, step_ns: u64) -> (Vec<RawImuRecord>, Vec<GroundTruthRecord>) {
    let t0 = 1_000_000_000u64;
    let imu = (0..n)
        .map(|k| RawImuRecord {
            timestamp: t0 + k * step_ns,
            omega: Vec3::zeros(),
            accel: Vec3::new(0.0, 0.0, 9.81),
        })
        .collect();
    let gt = (0..n)
        .map(|k| GroundTruthRecord {
            timestamp: t0 + k * step_ns,
            position: Vec3::new(0.001 * k as f64, 0.0, 1.0 + 0.0005 * k as f64),
            orientation: UnitQuaternion::identity(),
            velocity: Vec3::zeros(),
            bias: None,
        })
        .collect();
    (imu, gt)
}

#[test]
fn replay_schedules_cameras_and_aligns_truth() {
    let (imu, gt) = hover_records(401, 5_000_000);
    let data = build_replay_from(&imu, &gt, &ReplayOptions { n_landmarks: 8, ..Default::default() }).unwrap();
    assert_eq!(data.imu.len(), 400);
    assert_eq!(data.truth.len(), 401);
    assert!(data.dt.iter().all(|dt| (dt - 0.005).abs() < 1e-15));
    assert_eq!(data.imu[0].t, 0.0);
    // 2 s at 20 Hz, one observation set every tenth step end
    let with_obs: Vec<usize> = (0..400).filter(|&k| data.observations[k].is_some()).collect();
    assert_eq!(with_obs.len(), 40);
    assert_eq!(with_obs[0], 9);
    assert!(with_obs.windows(2).all(|w| w[1] - w[0] == 10));
    assert!(data.truth.iter().all(Option::is_some));
    assert_eq!(data.landmarks.len(), 8);
    // noiseless observations are the body-frame landmark positions
    let obs = data.observations[9].as_ref().unwrap();
    let truth = data.truth[10].unwrap().state;
    for o in obs {
        let l = data.landmarks.iter().find(|l| l.id == o.id).unwrap();
        let expect = truth.rot.transpose() * (l.p - truth.pos);
        assert!((o.y - expect).amax() < 1e-12);
    }
}

#[test]
fn replay_needs_overlapping_streams() {
    let (imu, mut gt) = hover_records(50, 5_000_000);
    for g in &mut gt {
        g.timestamp += 10_000_000_000;
    }
    let e = build_replay_from(&imu, &gt, &ReplayOptions::default()).unwrap_err();
    assert!(matches!(e, IngestError::NoTimeOverlap));
}

#[test]
fn truth_outside_the_match_window_is_skipped() {
    let (imu, gt) = hover_records(201, 5_000_000);
    // keep every other truth sample: step ends alternate between an exact
    // match and a 5 ms gap
    let sparse: Vec<GroundTruthRecord> = gt.into_iter().step_by(2).collect();
    let data = build_replay_from(&imu, &sparse, &ReplayOptions { n_landmarks: 5, ..Default::default() }).unwrap();
    let present = data.truth.iter().filter(|t| t.is_some()).count();
    assert_eq!(present, 101);
}

#[test]
fn export_writes_euroc_layout() {
    let (imu, gt) = hover_records(10, 5_000_000);
    let dir = tempfile::tempdir().unwrap();
    let (ip, gp) = navfilter::euroc::export_euroc(dir.path(), &imu, &gt).unwrap();
    assert!(ip.ends_with("imu0/data.csv"));
    assert!(gp.ends_with("state_groundtruth_estimate0/data.csv"));
    assert_eq!(navfilter::euroc::parse_imu_csv(&ip).unwrap(), imu);
    let mut extra = std::fs::OpenOptions::new().append(true).open(&ip).unwrap();
    writeln!(extra).unwrap();
    assert_eq!(navfilter::euroc::parse_imu_csv(&ip).unwrap(), imu);
}
