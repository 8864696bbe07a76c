//! Structured configuration files (TOML key/value trees) naming built-in
//! coefficient families plus numeric parameters, and builders turning them
//! into system specs, kernel triples, estimator parameter tuples, and
//! experiment configurations. The schema is documented in docs/config.md.

use std::path::Path;
use std::sync::Arc;

use serde::Deserialize;
use thiserror::Error;

use crate::estimators::{Cutoffs, EvalGrid};
use crate::experiments::{
    BandwidthSchedule, DensityConvergenceCfg, FiniteGraphOracleCfg, GraphonRecoveryCfg, HomogeneousOracleCfg,
    MinimaxRateCfg, VarianceScalingCfg,
};
use crate::fourier::{make_phi, FrequencyGrid, PhiShape};
use crate::graphon::GraphonTheta;
use crate::kernels::{Bandwidths, Kernel1, KernelTriple};
use crate::model::{
    DiffusionField, DiffusionSpec, DriftSpec, ForceField, GraphonFn, GraphonSpec, InitialLaw, InitialLawSpec,
    SystemSpec,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("io error reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("missing required key: {0}")]
    MissingKey(&'static str),
    #[error("invalid value for {key}: {reason}")]
    InvalidValue { key: &'static str, reason: String },
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub system: Option<SystemConfig>,
    pub kernels: Option<KernelsConfig>,
    pub theta: Option<ThetaConfig>,
    pub experiment: Option<ExperimentConfigSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    #[serde(default = "default_d")]
    pub d: usize,
    pub t_horizon: f64,
    pub drift: DriftConfig,
    pub graphon: GraphonConfig,
    pub diffusion: DiffusionConfig,
    pub initial: InitialConfig,
}

fn default_d() -> usize {
    1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftConfig {
    pub f: ForceConfig,
    pub v: ForceConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForceConfig {
    pub family: String,
    pub radius: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphonConfig {
    pub family: String,
    pub g0: Option<f64>,
    pub ell: Option<f64>,
    pub m: Option<u32>,
    pub base: Option<f64>,
    pub amplitude: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionConfig {
    pub family: String,
    pub sigma: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    pub family: String,
    pub mean: Option<f64>,
    pub mean_slope: Option<f64>,
    pub std: Option<f64>,
    pub center: Option<f64>,
    pub means: Option<Vec<f64>>,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelsConfig {
    pub family: String,
}

/// Explicit estimator parameter tuple; any omitted field falls back to the
/// n-dependent default schedule at evaluation time.
#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ThetaConfig {
    pub g0: Option<f64>,
    pub h1: Option<f64>,
    pub h2: Option<f64>,
    pub h3: Option<f64>,
    pub kappa0: Option<f64>,
    pub kappa1: Option<f64>,
    pub kappa2: Option<f64>,
    pub r: Option<f64>,
    pub r_tilde: Option<f64>,
    pub tau1: Option<f64>,
    pub tau2: Option<f64>,
    pub t_count: Option<usize>,
    pub u_count: Option<usize>,
    pub x_count: Option<usize>,
    pub w_count: Option<usize>,
    pub xi_count: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfigSection {
    pub name: String,
    pub n_list: Option<Vec<usize>>,
    pub n: Option<usize>,
    pub seeds: usize,
    pub steps: usize,
    pub master_seed: u64,
    pub t0: Option<f64>,
    pub u0: Option<f64>,
    pub x0: Option<f64>,
    pub s: Option<f64>,
    pub pairs: Option<Vec<(f64, f64)>>,
    pub m: Option<usize>,
    pub probes_per_block: Option<usize>,
    pub u_probes: Option<Vec<f64>>,
    pub h1: Option<f64>,
    pub h2: Option<f64>,
    pub h3: Option<f64>,
    pub x_lo: Option<f64>,
    pub x_hi: Option<f64>,
    pub x_count: Option<usize>,
    pub negative_control: Option<bool>,
    pub constant_bandwidths: Option<(f64, f64)>,
    pub schedule_exponent: Option<f64>,
    pub dt_halving: Option<bool>,
}

pub fn parse_config_str(text: &str) -> Result<ConfigFile, ConfigError> {
    toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
}

pub fn read_config(path: impl AsRef<Path>) -> Result<ConfigFile, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
    parse_config_str(&text)
}

pub fn build_system(cfg: &SystemConfig) -> Result<SystemSpec, ConfigError> {
    let f = build_force(&cfg.drift.f)?;
    let v = build_force(&cfg.drift.v)?;
    let drift = DriftSpec::new(f, v, cfg.d);
    let graphon = build_graphon(&cfg.graphon)?;
    let diffusion = build_diffusion(&cfg.diffusion)?;
    let initial = build_initial(&cfg.initial)?;
    SystemSpec::new(cfg.d, cfg.t_horizon, drift, graphon, diffusion, initial)
        .map_err(|e| ConfigError::InvalidValue { key: "system", reason: e.to_string() })
}

fn build_force(cfg: &ForceConfig) -> Result<ForceField, ConfigError> {
    match cfg.family.as_str() {
        "zero" => Ok(ForceField::Zero),
        "truncated_linear" => Ok(ForceField::TruncatedLinear {
            radius: cfg.radius.ok_or(ConfigError::MissingKey("drift.*.radius"))?,
        }),
        "truncated_tanh" => Ok(ForceField::TruncatedTanh {
            radius: cfg.radius.ok_or(ConfigError::MissingKey("drift.*.radius"))?,
        }),
        other => Err(ConfigError::InvalidValue {
            key: "drift.*.family",
            reason: format!("unknown force family '{other}' (zero | truncated_linear | truncated_tanh)"),
        }),
    }
}

fn build_graphon(cfg: &GraphonConfig) -> Result<GraphonSpec, ConfigError> {
    let g = match cfg.family.as_str() {
        "constant" => GraphonFn::Constant { g0: cfg.g0.ok_or(ConfigError::MissingKey("graphon.g0"))? },
        "gaussian_bump" => GraphonFn::GaussianBump {
            g0: cfg.g0.ok_or(ConfigError::MissingKey("graphon.g0"))?,
            ell: cfg.ell.ok_or(ConfigError::MissingKey("graphon.ell"))?,
        },
        "periodic" => GraphonFn::Periodic {
            m: cfg.m.ok_or(ConfigError::MissingKey("graphon.m"))?,
            base: cfg.base.ok_or(ConfigError::MissingKey("graphon.base"))?,
            amplitude: cfg.amplitude.ok_or(ConfigError::MissingKey("graphon.amplitude"))?,
        },
        other => {
            return Err(ConfigError::InvalidValue {
                key: "graphon.family",
                reason: format!("unknown graphon family '{other}' (constant | gaussian_bump | periodic)"),
            })
        }
    };
    GraphonSpec::new(g).map_err(|e| ConfigError::InvalidValue { key: "graphon", reason: e.to_string() })
}

fn build_diffusion(cfg: &DiffusionConfig) -> Result<DiffusionSpec, ConfigError> {
    let field = match cfg.family.as_str() {
        "zero" => DiffusionField::Zero,
        "identity" => DiffusionField::Identity,
        "scalar" => DiffusionField::Scalar { sigma: cfg.sigma.ok_or(ConfigError::MissingKey("diffusion.sigma"))? },
        other => {
            return Err(ConfigError::InvalidValue {
                key: "diffusion.family",
                reason: format!("unknown diffusion family '{other}' (zero | scalar | identity)"),
            })
        }
    };
    Ok(DiffusionSpec::new(field))
}

fn build_initial(cfg: &InitialConfig) -> Result<InitialLawSpec, ConfigError> {
    let law = match cfg.family.as_str() {
        "point" => InitialLaw::Point { center: cfg.center.ok_or(ConfigError::MissingKey("initial.center"))? },
        "gaussian" => InitialLaw::Gaussian {
            mean: cfg.mean.unwrap_or(0.0),
            mean_slope: cfg.mean_slope.unwrap_or(0.0),
            std: cfg.std.ok_or(ConfigError::MissingKey("initial.std"))?,
        },
        "block_gaussian" => InitialLaw::BlockGaussian {
            means: cfg.means.clone().ok_or(ConfigError::MissingKey("initial.means"))?,
            std: cfg.std.ok_or(ConfigError::MissingKey("initial.std"))?,
        },
        "uniform" => InitialLaw::Uniform {
            lo: cfg.lo.ok_or(ConfigError::MissingKey("initial.lo"))?,
            hi: cfg.hi.ok_or(ConfigError::MissingKey("initial.hi"))?,
        },
        other => {
            return Err(ConfigError::InvalidValue {
                key: "initial.family",
                reason: format!("unknown initial family '{other}' (point | gaussian | block_gaussian | uniform)"),
            })
        }
    };
    Ok(InitialLawSpec::new(law))
}

pub fn build_kernels(cfg: Option<&KernelsConfig>) -> Result<KernelTriple, ConfigError> {
    match cfg.map(|k| k.family.as_str()) {
        None | Some("biweight") => Ok(KernelTriple::biweight()),
        Some("triweight") => Ok(KernelTriple::triweight()),
        Some("epanechnikov") => Ok(KernelTriple {
            h: Kernel1::Epanechnikov,
            j: Kernel1::Epanechnikov,
            k_factor: Kernel1::Epanechnikov,
        }),
        Some(other) => Err(ConfigError::InvalidValue {
            key: "kernels.family",
            reason: format!("unknown kernel family '{other}' (biweight | triweight | epanechnikov)"),
        }),
    }
}

/// Assemble a full estimator parameter tuple from an explicit [theta]
/// section plus the n-dependent defaults for anything omitted.
pub fn build_theta(
    theta: &ThetaConfig,
    system: Option<&SystemConfig>,
    n: usize,
    t_horizon: f64,
) -> Result<GraphonTheta, ConfigError> {
    let nf = n as f64;
    let g0 = theta
        .g0
        .or_else(|| system.and_then(|s| s.graphon.g0))
        .ok_or(ConfigError::MissingKey("theta.g0 (or system.graphon.g0)"))?;
    let h_def = nf.powf(-0.2);
    let h1 = theta.h1.unwrap_or(h_def);
    let h2 = theta.h2.unwrap_or(h_def);
    let h3 = theta.h3.unwrap_or(h_def);
    let h = Bandwidths::new(h1, h2, h3)
        .map_err(|e| ConfigError::InvalidValue { key: "theta.h", reason: e.to_string() })?;
    let kappa0 = match theta.kappa0 {
        Some(k) => k,
        None => {
            let sys = system.ok_or(ConfigError::MissingKey("theta.kappa0 (or a [system] to derive it)"))?;
            let spec = build_system(sys)?;
            (0.25 * g0 * spec.drift.f.l2_norm(spec.d)).max(1e-9)
        }
    };
    let kappa1 = theta.kappa1.unwrap_or(0.028 * nf.powf(-0.1));
    let kappa2 = theta.kappa2.unwrap_or(0.02);
    let r = theta.r.unwrap_or(2.5);
    let r_tilde = theta.r_tilde.unwrap_or(50.0);
    let cut = Cutoffs::new(kappa0, kappa1, kappa2, r, r_tilde)
        .map_err(|e| ConfigError::InvalidValue { key: "theta", reason: e.to_string() })?;
    let tau1 = theta.tau1.unwrap_or((0.25 * t_horizon).max(1.05 * h1));
    let tau2 = theta.tau2.unwrap_or(t_horizon - tau1);
    let phi = make_phi(tau1, tau2, PhiShape::SineOnePeriod, t_horizon)
        .map_err(|e| ConfigError::InvalidValue { key: "theta.tau", reason: e.to_string() })?;
    let t_count = theta.t_count.unwrap_or(21);
    let u_count = theta.u_count.unwrap_or(81);
    let x_count = theta.x_count.unwrap_or(61);
    let egrid = EvalGrid::uniform((tau1, tau2, t_count), (0.0, 1.0, u_count), (-r, r, x_count), 1)
        .map_err(|e| ConfigError::InvalidValue { key: "theta.grid", reason: e.to_string() })?;
    let dx = 2.0 * r / (x_count - 1) as f64;
    let xi_max = std::f64::consts::PI / dx;
    let fgrid = FrequencyGrid::uniform(
        r_tilde,
        theta.w_count.unwrap_or(401),
        xi_max,
        theta.xi_count.unwrap_or(129),
        1,
    )
    .map_err(|e| ConfigError::InvalidValue { key: "theta.freq_grid", reason: e.to_string() })?;
    Ok(GraphonTheta { h, cut, phi, egrid, fgrid: Arc::new(fgrid), g0 })
}

fn require<T: Copy>(v: Option<T>, key: &'static str) -> Result<T, ConfigError> {
    v.ok_or(ConfigError::MissingKey(key))
}

/// Typed experiment configuration named by the [experiment] section.
pub enum ExperimentKind {
    DensityConvergence(DensityConvergenceCfg),
    MinimaxRate(MinimaxRateCfg),
    VarianceScaling(VarianceScalingCfg),
    Homogeneous(HomogeneousOracleCfg),
    FiniteGraph(FiniteGraphOracleCfg),
    Recovery(GraphonRecoveryCfg),
}

pub fn build_experiment(cfg: &ConfigFile) -> Result<ExperimentKind, ConfigError> {
    let exp = cfg.experiment.as_ref().ok_or(ConfigError::MissingKey("experiment"))?;
    let sys_cfg = cfg.system.as_ref().ok_or(ConfigError::MissingKey("system"))?;
    let system = build_system(sys_cfg)?;
    let n_list = || -> Result<Vec<usize>, ConfigError> {
        exp.n_list.clone().ok_or(ConfigError::MissingKey("experiment.n_list"))
    };
    match exp.name.as_str() {
        "density_convergence" => Ok(ExperimentKind::DensityConvergence(DensityConvergenceCfg {
            system,
            n_list: n_list()?,
            seeds: exp.seeds,
            steps: exp.steps,
            master_seed: exp.master_seed,
            t0: require(exp.t0, "experiment.t0")?,
            u0: require(exp.u0, "experiment.u0")?,
            x0: require(exp.x0, "experiment.x0")?,
            schedule: BandwidthSchedule::PowerLaw { c: 1.0, e: exp.schedule_exponent.unwrap_or(0.2) },
            dt_halving: exp.dt_halving.unwrap_or(false),
        })),
        "minimax_rate" => Ok(ExperimentKind::MinimaxRate(MinimaxRateCfg {
            system,
            n_list: n_list()?,
            seeds: exp.seeds,
            steps: exp.steps,
            master_seed: exp.master_seed,
            t0: require(exp.t0, "experiment.t0")?,
            u0: require(exp.u0, "experiment.u0")?,
            x0: require(exp.x0, "experiment.x0")?,
            s: require(exp.s, "experiment.s")?,
            constant_bandwidths: exp.constant_bandwidths,
        })),
        "variance_scaling" => Ok(ExperimentKind::VarianceScaling(VarianceScalingCfg {
            system,
            n_list: n_list()?,
            seeds: exp.seeds,
            steps: exp.steps,
            master_seed: exp.master_seed,
            t0: require(exp.t0, "experiment.t0")?,
            u0: require(exp.u0, "experiment.u0")?,
            x0: require(exp.x0, "experiment.x0")?,
            schedule: BandwidthSchedule::PowerLaw { c: 1.0, e: exp.schedule_exponent.unwrap_or(0.2) },
        })),
        "homogeneous_oracle" => Ok(ExperimentKind::Homogeneous(HomogeneousOracleCfg {
            system,
            n: require(exp.n, "experiment.n")?,
            seeds: exp.seeds,
            steps: exp.steps,
            master_seed: exp.master_seed,
            t0: require(exp.t0, "experiment.t0")?,
            u_probes: exp.u_probes.clone().ok_or(ConfigError::MissingKey("experiment.u_probes"))?,
            h: exp_bandwidths(exp)?,
            x_lo: require(exp.x_lo, "experiment.x_lo")?,
            x_hi: require(exp.x_hi, "experiment.x_hi")?,
            x_count: require(exp.x_count, "experiment.x_count")?,
            negative_control: exp.negative_control.unwrap_or(false),
        })),
        "finite_graph_oracle" => Ok(ExperimentKind::FiniteGraph(FiniteGraphOracleCfg {
            system,
            m: require(exp.m, "experiment.m")?,
            n: require(exp.n, "experiment.n")?,
            seeds: exp.seeds,
            steps: exp.steps,
            master_seed: exp.master_seed,
            t0: require(exp.t0, "experiment.t0")?,
            probes_per_block: exp.probes_per_block.unwrap_or(2),
            h: exp_bandwidths(exp)?,
            x_lo: require(exp.x_lo, "experiment.x_lo")?,
            x_hi: require(exp.x_hi, "experiment.x_hi")?,
            x_count: require(exp.x_count, "experiment.x_count")?,
            negative_control: exp.negative_control.unwrap_or(false),
        })),
        "graphon_recovery" => Ok(ExperimentKind::Recovery(GraphonRecoveryCfg {
            system,
            n_list: n_list()?,
            seeds: exp.seeds,
            steps: exp.steps,
            master_seed: exp.master_seed,
            pairs: exp.pairs.clone().ok_or(ConfigError::MissingKey("experiment.pairs"))?,
            theta_for: None,
        })),
        other => Err(ConfigError::InvalidValue {
            key: "experiment.name",
            reason: format!(
                "unknown experiment '{other}' (density_convergence | minimax_rate | variance_scaling | \
                 homogeneous_oracle | finite_graph_oracle | graphon_recovery)"
            ),
        }),
    }
}

fn exp_bandwidths(exp: &ExperimentConfigSection) -> Result<Bandwidths, ConfigError> {
    Bandwidths::new(
        require(exp.h1, "experiment.h1")?,
        require(exp.h2, "experiment.h2")?,
        require(exp.h3, "experiment.h3")?,
    )
    .map_err(|e| ConfigError::InvalidValue { key: "experiment.h", reason: e.to_string() })
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = r#"
[system]
d = 1
t_horizon = 1.5

[system.drift.f]
family = "truncated_linear"
radius = 5.0

[system.drift.v]
family = "zero"

[system.graphon]
family = "constant"
g0 = 0.8

[system.diffusion]
family = "scalar"
sigma = 1.0

[system.initial]
family = "gaussian"
std = 0.2
"#;

    #[test]
    fn parses_and_builds_basic_system() {
        let cfg = parse_config_str(BASIC).unwrap();
        let spec = build_system(cfg.system.as_ref().unwrap()).unwrap();
        assert_eq!(spec.d, 1);
        assert_eq!(spec.t_horizon, 1.5);
        assert_eq!(spec.graphon.g0, 0.8);
        assert!(spec.drift.v.is_zero());
    }

    #[test]
    fn missing_required_key_names_the_key() {
        let text = r#"
[system]
t_horizon = 1.0
[system.drift.f]
family = "truncated_linear"
[system.drift.v]
family = "zero"
[system.graphon]
family = "constant"
g0 = 0.5
[system.diffusion]
family = "scalar"
sigma = 1.0
[system.initial]
family = "gaussian"
std = 0.3
"#;
        let cfg = parse_config_str(text).unwrap();
        let err = build_system(cfg.system.as_ref().unwrap()).unwrap_err();
        assert!(err.to_string().contains("radius"), "{err}");
    }

    #[test]
    fn unknown_family_is_rejected() {
        let text = BASIC.replace("\"constant\"", "\"mystery\"");
        let cfg = parse_config_str(&text).unwrap();
        let err = build_system(cfg.system.as_ref().unwrap()).unwrap_err();
        assert!(err.to_string().contains("mystery"));
    }

    #[test]
    fn toml_parse_errors_carry_location() {
        let err = parse_config_str("[system\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line"), "parse error should name a location: {msg}");
    }

    #[test]
    fn theta_defaults_follow_schedule() {
        let cfg = parse_config_str(BASIC).unwrap();
        let theta = build_theta(&ThetaConfig::default(), cfg.system.as_ref(), 4000, 1.5).unwrap();
        let expect_h = (4000f64).powf(-0.2);
        assert!((theta.h.h2 - expect_h).abs() < 1e-12);
        assert!((theta.cut.kappa1 - 0.028 * (4000f64).powf(-0.1)).abs() < 1e-12);
        assert!(theta.cut.kappa0 > 0.0);
        assert_eq!(theta.g0, 0.8);
    }

    #[test]
    fn experiment_builder_dispatches_by_name() {
        let text = format!(
            "{BASIC}\n[experiment]\nname = \"graphon_recovery\"\nn_list = [100, 200]\nseeds = 2\nsteps = 100\nmaster_seed = 1\npairs = [[0.6, 0.3]]\n"
        );
        let cfg = parse_config_str(&text).unwrap();
        match build_experiment(&cfg).unwrap() {
            ExperimentKind::Recovery(r) => {
                assert_eq!(r.n_list, vec![100, 200]);
                assert_eq!(r.pairs, vec![(0.6, 0.3)]);
            }
            _ => panic!("wrong experiment kind"),
        }
    }
}
