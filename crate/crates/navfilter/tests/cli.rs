use std::path::Path;
use std::process::{Command, Output};

use navfilter::harness::DIAGNOSTICS_HEADER;

fn navfilter(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_navfilter"))
        .args(args)
        .env("NAVFILTER_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

fn metric(dir: &Path, name: &str) -> f64 {
    let text = std::fs::read_to_string(dir.join("metrics.csv")).unwrap();
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{name},")))
        .unwrap_or_else(|| panic!("no metric {name}"))
        .parse()
        .unwrap()
}

#[test]
fn hover_from_truth_stays_put() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "hover.toml",
        "[simulate]\nprofile = \"hover\"\nduration = 10.0\n[init]\nkind = \"truth\"\n",
    );
    let out = dir.path().join("out");
    let o = navfilter(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(metric(&out, "position_final") < 1e-6);
    let diag = std::fs::read_to_string(out.join("diagnostics.csv")).unwrap();
    let mut lines = diag.lines();
    assert_eq!(lines.next(), Some(DIAGNOSTICS_HEADER));
    assert_eq!(lines.count(), 2000);
    for f in ["errors.csv", "landmarks.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn biased_circle_learns_the_gyro_bias() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "circle.toml",
        "[simulate]\nduration = 20.0\nb_omega = [0.01, 0.01, 0.01]\nb_a = [0.1, 0.1, 0.1]\n[init]\nkind = \"truth\"\n",
    );
    let out = dir.path().join("out");
    let o = navfilter(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap(), "--backend", "quaternion"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(metric(&out, "gyro_bias_final") < 0.1 * metric(&out, "gyro_bias_initial"));
    assert!(metric(&out, "accel_bias_final") < metric(&out, "accel_bias_initial"));
}

#[test]
fn exported_dataset_replays() {
    let dir = tempfile::tempdir().unwrap();
    let sim = write_config(
        dir.path(),
        "sim.toml",
        "[simulate]\nprofile = \"figure_eight\"\nduration = 5.0\nexport_euroc = true\n",
    );
    let o = navfilter(&["simulate", "--config", &sim, "--out", dir.path().join("data").to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rep = write_config(
        dir.path(),
        "replay.toml",
        "out = \"replay_out\"\n[replay]\nimu = \"data/imu0/data.csv\"\ngroundtruth = \"data/state_groundtruth_estimate0/data.csv\"\n",
    );
    let o = navfilter(&["replay", "--config", &rep]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(metric(&dir.path().join("replay_out"), "steps"), 999.0);
}

#[test]
fn seed_override_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "noisy.toml",
        "[simulate]\nduration = 3.0\nsigma_omega = 0.002\nsigma_a = 0.02\nsigma_y = 0.01\n",
    );
    let run = |seed: &str, out: &str| {
        let out = dir.path().join(out);
        let o = navfilter(&["simulate", "--config", &cfg, "--seed", seed, "--out", out.to_str().unwrap()]);
        assert!(o.status.success());
        std::fs::read(out.join("diagnostics.csv")).unwrap()
    };
    let a = run("5", "a");
    assert_eq!(a, run("5", "b"));
    assert_ne!(a, run("6", "c"));
}

#[test]
fn config_errors_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.toml", "[gains]\nk_w = -1.0\n");
    let o = navfilter(&["simulate", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("gains.k_w"));

    let cfg = write_config(dir.path(), "typo.toml", "[simulate]\nduraton = 3.0\n");
    let o = navfilter(&["simulate", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("duraton"));
}

#[test]
fn replay_without_inputs_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "empty.toml", "");
    let o = navfilter(&["replay", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("replay.imu"));
}

#[test]
fn validate_passes_and_catches_a_flipped_correction() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "v.toml", "[validate]\nseeds = 3\n");
    let out = dir.path().join("v");
    let o = navfilter(&["validate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let report = std::fs::read_to_string(out.join("validate.csv")).unwrap();
    assert_eq!(report.lines().count(), 8);
    assert!(report.lines().skip(1).all(|l| l.split(',').nth(1) == Some("true")));

    let cfg = write_config(
        dir.path(),
        "m.toml",
        "[filter]\nmutation = \"flip_omega_correction\"\n[validate]\nseeds = 3\n",
    );
    let out = dir.path().join("m");
    let o = navfilter(&["validate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let report = std::fs::read_to_string(out.join("validate.csv")).unwrap();
    let containment = report.lines().find(|l| l.starts_with("envelope_containment")).unwrap();
    assert!(containment.contains(",false,"));
}

#[test]
fn shipped_configs_load() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "toml") {
            navfilter::config::load_config(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            n += 1;
        }
    }
    assert!(n >= 4);
    let mut full = navfilter::config::load_config(&dir.join("full.toml")).unwrap();
    full.base_dir = Default::default();
    assert_eq!(full, navfilter::config::RunConfig::default());
}
