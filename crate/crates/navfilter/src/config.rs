//! TOML run configuration. Every key is optional; omitted filter parameters
//! take the values of [`FilterConfig::default`].

use std::path::{Path, PathBuf};

use navfilter_core::filter::{ChannelEnvelope, CorrectionSpan, EnvelopeInit, Mutation};
use navfilter_core::{EnvelopeParams, FilterConfig, FilterGains, GravityModel, Vec3};
use serde::Deserialize;

#[derive(Debug, thiserror::Error)]
#[error("config error at `{path}`: {message}")]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError {
            path: path.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    #[default]
    Matrix,
    Quaternion,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct GainsSection {
    pub k_w: f64,
    pub k_v: f64,
    pub k_a: f64,
    pub ell_p: f64,
    pub gamma_b: f64,
    pub gamma_a: f64,
    pub delta: f64,
}

impl Default for GainsSection {
    fn default() -> Self {
        let g = FilterGains::default();
        GainsSection {
            k_w: g.k_w,
            k_v: g.k_v,
            k_a: g.k_a,
            ell_p: g.ell_p,
            gamma_b: g.gamma_b,
            gamma_a: g.gamma_a,
            delta: g.delta,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct EnvelopeSection {
    pub ell: [f64; 4],
    pub xi_inf: [f64; 4],
    /// `ξ⁰ = δ = init_scale·|e(0)| + init_offset` unless `xi0` and `delta` are set.
    pub init_scale: [f64; 4],
    pub init_offset: [f64; 4],
    pub xi0: Option<[f64; 4]>,
    pub delta: Option<[f64; 4]>,
    pub epsilon: Option<[f64; 4]>,
}

impl Default for EnvelopeSection {
    fn default() -> Self {
        let d = FilterConfig::default();
        let mut s = EnvelopeSection {
            ell: [0.0; 4],
            xi_inf: [0.0; 4],
            init_scale: [0.0; 4],
            init_offset: [0.0; 4],
            xi0: None,
            delta: None,
            epsilon: None,
        };
        for (i, ch) in d.channels.iter().enumerate() {
            s.ell[i] = ch.ell;
            s.xi_inf[i] = ch.xi_inf;
            if let EnvelopeInit::FromFirstError { scale, offset } = ch.init {
                s.init_scale[i] = scale;
                s.init_offset[i] = offset;
            }
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SpanSetting {
    ImuStep,
    #[default]
    SinceLastCorrection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MutationSetting {
    #[default]
    None,
    FlipOmegaCorrection,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSection {
    pub gravity: [f64; 3],
    pub correction_span: SpanSetting,
    pub mutation: MutationSetting,
}

impl Default for FilterSection {
    fn default() -> Self {
        let g = GravityModel::default().g;
        FilterSection {
            gravity: [g.x, g.y, g.z],
            correction_span: SpanSetting::default(),
            mutation: MutationSetting::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    /// `R̂ = I`, `P̂ = V̂ = 0`.
    #[default]
    Origin,
    /// Truth at the first sample, displaced by the offsets below.
    Truth,
}

#[derive(Debug, Clone, Deserialize, PartialEq, Default)]
#[serde(default, deny_unknown_fields)]
pub struct InitSection {
    pub kind: InitKind,
    /// Rotation vector (rad); the estimate starts at `R exp(φ)`.
    pub attitude_offset: [f64; 3],
    pub position_offset: [f64; 3],
    pub velocity_offset: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProfileKind {
    Hover,
    Straight,
    #[default]
    Circle,
    FigureEight,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub profile: ProfileKind,
    pub duration: f64,
    pub imu_rate: f64,
    pub cam_rate: f64,
    /// Circle radius (m).
    pub radius: f64,
    /// Circle yaw rate or figure-eight base frequency (rad/s).
    pub rate: f64,
    pub height: f64,
    /// Straight-line speed (m/s).
    pub speed: f64,
    /// Figure-eight amplitudes along x, y, z (m).
    pub amplitude: [f64; 3],
    pub b_omega: [f64; 3],
    pub b_a: [f64; 3],
    pub sigma_omega: f64,
    pub sigma_a: f64,
    pub sigma_y: f64,
    /// Landmark file (`id,s,px,py,pz`); generated when absent.
    pub landmarks: Option<PathBuf>,
    pub n_landmarks: usize,
    pub margin: f64,
    /// Also write the streams as EuRoC-style CSVs.
    pub export_euroc: bool,
}

impl Default for SimulateSection {
    fn default() -> Self {
        SimulateSection {
            profile: ProfileKind::Circle,
            duration: 30.0,
            imu_rate: 200.0,
            cam_rate: 20.0,
            radius: 1.0,
            rate: 0.5,
            height: 1.0,
            speed: 1.0,
            amplitude: [2.0, 1.0, 0.3],
            b_omega: [0.0; 3],
            b_a: [0.0; 3],
            sigma_omega: 0.0,
            sigma_a: 0.0,
            sigma_y: 0.0,
            landmarks: None,
            n_landmarks: 20,
            margin: 1.0,
            export_euroc: false,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ReplaySection {
    pub imu: Option<PathBuf>,
    pub groundtruth: Option<PathBuf>,
    pub n_landmarks: usize,
    pub margin: f64,
    pub cam_rate: f64,
    pub sigma_y: f64,
}

impl Default for ReplaySection {
    fn default() -> Self {
        let o = crate::euroc::ReplayOptions::default();
        ReplaySection {
            imu: None,
            groundtruth: None,
            n_landmarks: o.n_landmarks,
            margin: o.margin,
            cam_rate: o.cam_rate,
            sigma_y: o.sigma_y,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateSection {
    /// Seeds `0..seeds` for the randomized sweeps.
    pub seeds: u64,
}

impl Default for ValidateSection {
    fn default() -> Self {
        ValidateSection { seeds: 100 }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub backend: Backend,
    pub out: Option<PathBuf>,
    pub gains: GainsSection,
    pub envelope: EnvelopeSection,
    pub filter: FilterSection,
    pub init: InitSection,
    pub simulate: SimulateSection,
    pub replay: ReplaySection,
    pub validate: ValidateSection,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let de = toml::Deserializer::new(text);
    let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        ConfigError::new(path, e.into_inner().message().trim().to_string())
    })?;
    cfg.filter_config()?;
    cfg.check_sections()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::new(path.display().to_string(), e.to_string()))?;
    let mut cfg = parse_config(&text)?;
    cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(cfg)
}

fn positive(path: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::new(path, format!("must be a positive number, got {v}")))
    }
}

fn nonnegative(path: &str, v: f64) -> Result<(), ConfigError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::new(path, format!("must be nonnegative, got {v}")))
    }
}

pub fn vec3(a: &[f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

impl RunConfig {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Filter parameters with positivity and envelope checks.
    pub fn filter_config(&self) -> Result<FilterConfig, ConfigError> {
        let g = &self.gains;
        for (name, v) in [
            ("gains.k_w", g.k_w),
            ("gains.k_v", g.k_v),
            ("gains.k_a", g.k_a),
            ("gains.ell_p", g.ell_p),
            ("gains.gamma_b", g.gamma_b),
            ("gains.gamma_a", g.gamma_a),
            ("gains.delta", g.delta),
        ] {
            positive(name, v)?;
        }
        let e = &self.envelope;
        if e.xi0.is_some() != e.delta.is_some() {
            return Err(ConfigError::new("envelope.xi0", "xi0 and delta must be given together"));
        }
        let mut channels = FilterConfig::default().channels;
        for (i, ch) in channels.iter_mut().enumerate() {
            positive(&format!("envelope.ell[{i}]"), e.ell[i])?;
            positive(&format!("envelope.xi_inf[{i}]"), e.xi_inf[i])?;
            let init = match (e.xi0, e.delta) {
                (Some(x), Some(d)) => {
                    EnvelopeParams::symmetric(x[i], e.xi_inf[i], e.ell[i], d[i])
                        .map_err(|err| ConfigError::new(format!("envelope.xi0[{i}]"), err.to_string()))?;
                    EnvelopeInit::Fixed { xi0: x[i], delta: d[i] }
                }
                _ => {
                    nonnegative(&format!("envelope.init_scale[{i}]"), e.init_scale[i])?;
                    if !(e.init_offset[i] > e.xi_inf[i]) {
                        return Err(ConfigError::new(
                            format!("envelope.init_offset[{i}]"),
                            "must exceed xi_inf so that xi0 > xi_inf",
                        ));
                    }
                    EnvelopeInit::FromFirstError {
                        scale: e.init_scale[i],
                        offset: e.init_offset[i],
                    }
                }
            };
            let epsilon = match e.epsilon {
                Some(eps) => {
                    positive(&format!("envelope.epsilon[{i}]"), eps[i])?;
                    Some(eps[i])
                }
                None => None,
            };
            *ch = ChannelEnvelope {
                xi_inf: e.xi_inf[i],
                ell: e.ell[i],
                init,
                epsilon,
            };
        }
        if !self.filter.gravity.iter().all(|v| v.is_finite()) {
            return Err(ConfigError::new("filter.gravity", "must be finite"));
        }
        let cfg = FilterConfig {
            gains: FilterGains {
                k_w: g.k_w,
                k_v: g.k_v,
                k_a: g.k_a,
                ell_p: g.ell_p,
                gamma_b: g.gamma_b,
                gamma_a: g.gamma_a,
                delta: g.delta,
            },
            gravity: GravityModel {
                g: vec3(&self.filter.gravity),
            },
            channels,
            correction_span: match self.filter.correction_span {
                SpanSetting::ImuStep => CorrectionSpan::ImuStep,
                SpanSetting::SinceLastCorrection => CorrectionSpan::SinceLastCorrection,
            },
            mutation: match self.filter.mutation {
                MutationSetting::None => Mutation::None,
                MutationSetting::FlipOmegaCorrection => Mutation::FlipOmegaCorrection,
            },
        };
        cfg.validate()
            .map_err(|err| ConfigError::new("filter", err.to_string()))?;
        Ok(cfg)
    }

    fn check_sections(&self) -> Result<(), ConfigError> {
        let s = &self.simulate;
        positive("simulate.duration", s.duration)?;
        positive("simulate.imu_rate", s.imu_rate)?;
        positive("simulate.cam_rate", s.cam_rate)?;
        nonnegative("simulate.sigma_omega", s.sigma_omega)?;
        nonnegative("simulate.sigma_a", s.sigma_a)?;
        nonnegative("simulate.sigma_y", s.sigma_y)?;
        nonnegative("simulate.margin", s.margin)?;
        if s.n_landmarks < 3 {
            return Err(ConfigError::new("simulate.n_landmarks", "need at least 3 landmarks"));
        }
        let r = &self.replay;
        positive("replay.cam_rate", r.cam_rate)?;
        nonnegative("replay.sigma_y", r.sigma_y)?;
        nonnegative("replay.margin", r.margin)?;
        if r.n_landmarks < 3 {
            return Err(ConfigError::new("replay.n_landmarks", "need at least 3 landmarks"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use navfilter_core::envelope::envelope_at;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg.filter_config().unwrap(), FilterConfig::default());
        assert_eq!(cfg.gains.k_w, 3.0);
        assert_eq!(cfg.envelope.xi_inf, [0.03, 0.08, 0.08, 0.08]);
    }

    #[test]
    fn negative_gain_names_the_field() {
        let err = parse_config("[gains]\nk_w = -1.0\n").unwrap_err();
        assert_eq!(err.path, "gains.k_w");
    }

    #[test]
    fn type_errors_carry_paths() {
        let err = parse_config("[envelope]\nxi_inf = [1, 2]\n").unwrap_err();
        assert!(err.path.starts_with("envelope.xi_inf"), "{}", err.path);
        let err = parse_config("[gains]\nkw = 1.0\n").unwrap_err();
        assert!(err.path.starts_with("gains"), "{}", err.path);
    }

    #[test]
    fn xi_inf_override_reaches_envelope() {
        let cfg = parse_config(
            "[envelope]\nxi_inf = [0.05, 0.08, 0.08, 0.08]\nxi0 = [1, 1, 1, 1]\ndelta = [2, 2, 2, 2]\n",
        )
        .unwrap();
        let fc = cfg.filter_config().unwrap();
        let EnvelopeInit::Fixed { xi0, delta } = fc.channels[0].init else {
            panic!("fixed envelope expected")
        };
        let p = EnvelopeParams::symmetric(xi0, fc.channels[0].xi_inf, fc.channels[0].ell, delta).unwrap();
        assert!((envelope_at(&p, 100.0).xi - 0.05).abs() < 1e-12);
    }
}
