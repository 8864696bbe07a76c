//! System specifications: drift pair (F, V), graphon slice g, diffusion, and
//! initial laws, with sampling-based validation of the standing regularity
//! conditions.
//!
//! Coefficients come from a small library of parametric families plus a
//! plug-in closure escape hatch. Built-in forces are compactly supported by
//! construction: a fixed C^1 cutoff equal to 1 on `[0, R]` and 0 beyond `2R`
//! multiplies the raw shape, which keeps every built-in inside the required
//! Sobolev classes without symbolic checks.

use std::fmt;
use std::sync::Arc;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::numerics::{simpson, CompensatedSum};
use crate::rng::{SampleSource, STREAM_VALIDATE};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("non-finite input to coefficient evaluation")]
    NonFiniteInput,
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
}

/// C^1 bump: 1 on [0, 1], cubic smoothstep down on (1, 2), 0 on [2, inf).
pub fn smooth_cutoff(t: f64) -> f64 {
    let t = t.abs();
    if t <= 1.0 {
        1.0
    } else if t >= 2.0 {
        0.0
    } else {
        let s = t - 1.0;
        1.0 - s * s * (3.0 - 2.0 * s)
    }
}

/// Radius-rescaled cutoff: 1 for |z| <= radius, 0 beyond 2 * radius.
#[inline]
pub fn cutoff_at(norm: f64, radius: f64) -> f64 {
    smooth_cutoff(norm / radius)
}

pub type VecFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// A compactly supported vector field on R^d, used for both the interaction
/// force F and the external force V.
#[derive(Clone)]
pub enum ForceField {
    Zero,
    /// F(z) = -z * cutoff(|z| / radius); exactly linear on |z| <= radius.
    TruncatedLinear { radius: f64 },
    /// V(x) = -tanh(x_i) * cutoff(|x| / radius) componentwise.
    TruncatedTanh { radius: f64 },
    Custom { tag: String, support_radius: f64, f: VecFn },
}

impl fmt::Debug for ForceField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ForceField::Zero => write!(f, "Zero"),
            ForceField::TruncatedLinear { radius } => write!(f, "TruncatedLinear({radius})"),
            ForceField::TruncatedTanh { radius } => write!(f, "TruncatedTanh({radius})"),
            ForceField::Custom { tag, support_radius, .. } => {
                write!(f, "Custom({tag}, r={support_radius})")
            }
        }
    }
}

fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

impl ForceField {
    pub fn eval(&self, z: &[f64], out: &mut [f64]) {
        match self {
            ForceField::Zero => out.fill(0.0),
            ForceField::TruncatedLinear { radius } => {
                let c = cutoff_at(norm2(z), *radius);
                for (o, zi) in out.iter_mut().zip(z) {
                    *o = -zi * c;
                }
            }
            ForceField::TruncatedTanh { radius } => {
                let c = cutoff_at(norm2(z), *radius);
                for (o, zi) in out.iter_mut().zip(z) {
                    *o = -zi.tanh() * c;
                }
            }
            ForceField::Custom { f, .. } => f(z, out),
        }
    }

    /// Scalar convenience for d = 1.
    pub fn eval1(&self, z: f64) -> f64 {
        let mut out = [0.0];
        self.eval(&[z], &mut out);
        out[0]
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, ForceField::Zero)
    }

    /// Outer support radius (field vanishes for |z| beyond this).
    pub fn support_radius(&self) -> f64 {
        match self {
            ForceField::Zero => 0.0,
            ForceField::TruncatedLinear { radius } | ForceField::TruncatedTanh { radius } => 2.0 * radius,
            ForceField::Custom { support_radius, .. } => *support_radius,
        }
    }

    /// For fields that are exactly `-z` on a plateau: (plateau, outer) radii.
    pub fn linear_plateau(&self) -> Option<(f64, f64)> {
        match self {
            ForceField::TruncatedLinear { radius } => Some((*radius, 2.0 * radius)),
            _ => None,
        }
    }

    /// L2 norm over R^d by quadrature (Simpson for d <= 2, Monte Carlo above).
    pub fn l2_norm(&self, d: usize) -> f64 {
        if self.is_zero() {
            return 0.0;
        }
        let r = self.support_radius();
        let mut buf = vec![0.0; d];
        match d {
            1 => {
                let sq = simpson(
                    |z| {
                        let mut o = [0.0];
                        self.eval(&[z], &mut o);
                        o[0] * o[0]
                    },
                    -r,
                    r,
                    1 << 12,
                );
                sq.max(0.0).sqrt()
            }
            2 => {
                let sq = crate::numerics::simpson2d(
                    |a, b| {
                        let mut o = [0.0, 0.0];
                        self.eval(&[a, b], &mut o);
                        o[0] * o[0] + o[1] * o[1]
                    },
                    (-r, -r),
                    (r, r),
                    256,
                );
                sq.max(0.0).sqrt()
            }
            _ => {
                // Monte Carlo over the support cube.
                let samples = 200_000;
                let mut src = SampleSource::new(0xF0F0, STREAM_VALIDATE, 99);
                let vol = (2.0 * r).powi(d as i32);
                let mut acc = CompensatedSum::new();
                let mut z = vec![0.0; d];
                for _ in 0..samples {
                    for zi in z.iter_mut() {
                        *zi = (src.next_uniform() * 2.0 - 1.0) * r;
                    }
                    self.eval(&z, &mut buf);
                    acc.add(buf.iter().map(|v| v * v).sum::<f64>());
                }
                (acc.value() / samples as f64 * vol).max(0.0).sqrt()
            }
        }
    }

    fn digest_str(&self) -> String {
        match self {
            ForceField::Zero => "zero".into(),
            ForceField::TruncatedLinear { radius } => format!("trunc_linear:{radius:.17e}"),
            ForceField::TruncatedTanh { radius } => format!("trunc_tanh:{radius:.17e}"),
            ForceField::Custom { tag, support_radius, .. } => format!("custom:{tag}:{support_radius:.17e}"),
        }
    }
}

/// Drift pair b(x, y) = F(x - y) + V(x) with declared bounds.
#[derive(Debug, Clone)]
pub struct DriftSpec {
    pub f: ForceField,
    pub v: ForceField,
    /// sup-norm bound on b, sampled at construction unless supplied.
    pub bound_b: f64,
    /// Lipschitz constant of b, sampled at construction unless supplied.
    pub lip_b: f64,
}

impl DriftSpec {
    /// Build with bounds estimated by dense sampling over the supports.
    pub fn new(f: ForceField, v: ForceField, d: usize) -> Self {
        let (bound, lip) = sample_bounds(&f, &v, d);
        Self { f, v, bound_b: bound, lip_b: lip }
    }

    pub fn with_bounds(f: ForceField, v: ForceField, bound_b: f64, lip_b: f64) -> Self {
        Self { f, v, bound_b, lip_b }
    }

    fn digest_str(&self) -> String {
        format!("F={};V={};b={:.17e};L={:.17e}", self.f.digest_str(), self.v.digest_str(), self.bound_b, self.lip_b)
    }
}

fn sample_bounds(f: &ForceField, v: &ForceField, d: usize) -> (f64, f64) {
    let r = f.support_radius().max(v.support_radius()).max(1.0);
    let mut src = SampleSource::new(0xB0B0, STREAM_VALIDATE, 0);
    let mut bound: f64 = 0.0;
    let mut lip: f64 = 0.0;
    let mut z = vec![0.0; d];
    let mut z2 = vec![0.0; d];
    let mut o1 = vec![0.0; d];
    let mut o2 = vec![0.0; d];
    let n = 4000;
    for field in [f, v] {
        if field.is_zero() {
            continue;
        }
        for _ in 0..n {
            for zi in z.iter_mut() {
                *zi = (src.next_uniform() * 2.0 - 1.0) * r * 1.1;
            }
            field.eval(&z, &mut o1);
            bound = bound.max(norm2(&o1));
            let eps = 1e-4 * r;
            for (a, b) in z2.iter_mut().zip(&z) {
                *a = b + eps * (src.next_uniform() * 2.0 - 1.0);
            }
            field.eval(&z2, &mut o2);
            let dz = z.iter().zip(&z2).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            if dz > 0.0 {
                let df = o1.iter().zip(&o2).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                lip = lip.max(df / dz);
            }
        }
    }
    // b = F + V: sup and Lipschitz bounds add; pad the sampled estimate.
    let fb = 1.05 * bound;
    (if fb > 0.0 { 2.0 * fb } else { 0.0 }, if lip > 0.0 { 2.1 * lip } else { 0.0 })
}

/// Evaluate b(x, y) = F(x - y) + V(x).
pub fn eval_b(drift: &DriftSpec, x: &[f64], y: &[f64], out: &mut [f64]) -> Result<(), ModelError> {
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(ModelError::NonFiniteInput);
    }
    let d = x.len();
    let mut z = vec![0.0; d];
    for ((zi, xi), yi) in z.iter_mut().zip(x).zip(y) {
        *zi = xi - yi;
    }
    drift.f.eval(&z, out);
    let mut vv = vec![0.0; d];
    drift.v.eval(x, &mut vv);
    for (o, v) in out.iter_mut().zip(&vv) {
        *o += v;
    }
    Ok(())
}

/// Difference-form graphon slice g with g(0) = g0.
#[derive(Clone)]
pub enum GraphonFn {
    Constant { g0: f64 },
    GaussianBump { g0: f64, ell: f64 },
    /// (base + amplitude cos(2 pi m z)) on [-1, 1], zero outside; 1/m-periodic
    /// on [-1, 1], so block degrees are constant.
    Periodic { m: u32, base: f64, amplitude: f64 },
    Custom { tag: String, g0: f64, lip: f64, g: Arc<dyn Fn(f64) -> f64 + Send + Sync> },
}

impl fmt::Debug for GraphonFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphonFn::Constant { g0 } => write!(f, "Constant({g0})"),
            GraphonFn::GaussianBump { g0, ell } => write!(f, "GaussianBump({g0}, ell={ell})"),
            GraphonFn::Periodic { m, base, amplitude } => write!(f, "Periodic(m={m}, {base}+-{amplitude})"),
            GraphonFn::Custom { tag, .. } => write!(f, "Custom({tag})"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GraphonSpec {
    pub g: GraphonFn,
    pub g0: f64,
    pub lip_g: f64,
}

impl GraphonSpec {
    pub fn new(g: GraphonFn) -> Result<Self, ModelError> {
        let (g0, lip) = match &g {
            GraphonFn::Constant { g0 } => (*g0, 0.0),
            GraphonFn::GaussianBump { g0, ell } => {
                if *ell <= 0.0 {
                    return Err(ModelError::InvalidParam("gaussian bump needs ell > 0".into()));
                }
                // max slope of exp(-z^2 / 2 ell^2) is at z = ell
                (*g0, g0 / ell * (-0.5f64).exp())
            }
            GraphonFn::Periodic { m, base, amplitude } => {
                if *base - *amplitude < 0.0 || *base + *amplitude > 1.0 {
                    return Err(ModelError::InvalidParam("periodic graphon must stay in [0,1]".into()));
                }
                (
                    *base + *amplitude,
                    amplitude * 2.0 * std::f64::consts::PI * f64::from(*m),
                )
            }
            GraphonFn::Custom { g0, lip, .. } => (*g0, *lip),
        };
        if !(g0 > 0.0 && g0 <= 1.0) {
            return Err(ModelError::InvalidParam(format!("g0 must be in (0, 1], got {g0}")));
        }
        Ok(Self { g, g0, lip_g: lip })
    }

    #[inline]
    pub fn eval(&self, z: f64) -> f64 {
        match &self.g {
            GraphonFn::Constant { g0 } => *g0,
            GraphonFn::GaussianBump { g0, ell } => g0 * (-z * z / (2.0 * ell * ell)).exp(),
            GraphonFn::Periodic { m, base, amplitude } => {
                if z.abs() <= 1.0 {
                    base + amplitude * (2.0 * std::f64::consts::PI * f64::from(*m) * z).cos()
                } else {
                    0.0
                }
            }
            GraphonFn::Custom { g, .. } => g(z),
        }
    }

    pub fn constant_value(&self) -> Option<f64> {
        match &self.g {
            GraphonFn::Constant { g0 } => Some(*g0),
            _ => None,
        }
    }

    /// Degree of index u: integral of g(u - v) over v in [0, 1].
    pub fn degree(&self, u: f64) -> f64 {
        match &self.g {
            GraphonFn::Constant { g0 } => *g0,
            _ => simpson(|v| self.eval(u - v), 0.0, 1.0, 1 << 10),
        }
    }

    fn digest_str(&self) -> String {
        match &self.g {
            GraphonFn::Constant { g0 } => format!("const:{g0:.17e}"),
            GraphonFn::GaussianBump { g0, ell } => format!("bump:{g0:.17e}:{ell:.17e}"),
            GraphonFn::Periodic { m, base, amplitude } => format!("periodic:{m}:{base:.17e}:{amplitude:.17e}"),
            GraphonFn::Custom { tag, g0, .. } => format!("custom:{tag}:{g0:.17e}"),
        }
    }
}

/// Diffusion coefficient sigma: R^d -> R^{d x d}.
#[derive(Clone)]
pub enum DiffusionField {
    Zero,
    Scalar { sigma: f64 },
    Identity,
    Custom { tag: String, sigma_minus: f64, sigma_plus: f64, f: VecFn },
}

impl fmt::Debug for DiffusionField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DiffusionField::Zero => write!(f, "Zero"),
            DiffusionField::Scalar { sigma } => write!(f, "Scalar({sigma})"),
            DiffusionField::Identity => write!(f, "Identity"),
            DiffusionField::Custom { tag, .. } => write!(f, "Custom({tag})"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DiffusionSpec {
    pub field: DiffusionField,
    pub sigma_minus: f64,
    pub sigma_plus: f64,
}

impl DiffusionSpec {
    pub fn new(field: DiffusionField) -> Self {
        let (lo, hi) = match &field {
            DiffusionField::Zero => (0.0, 0.0),
            DiffusionField::Scalar { sigma } => (sigma.abs(), sigma.abs()),
            DiffusionField::Identity => (1.0, 1.0),
            DiffusionField::Custom { sigma_minus, sigma_plus, .. } => (*sigma_minus, *sigma_plus),
        };
        Self { field, sigma_minus: lo, sigma_plus: hi }
    }

    /// Apply sigma(x) to the vector `z`, writing into `out`.
    pub fn apply(&self, x: &[f64], z: &[f64], out: &mut [f64]) {
        match &self.field {
            DiffusionField::Zero => out.fill(0.0),
            DiffusionField::Scalar { sigma } => {
                for (o, zi) in out.iter_mut().zip(z) {
                    *o = sigma * zi;
                }
            }
            DiffusionField::Identity => out.copy_from_slice(z),
            DiffusionField::Custom { f, .. } => {
                let d = z.len();
                let mut mat = vec![0.0; d * d];
                f(x, &mut mat);
                for r in 0..d {
                    let mut acc = 0.0;
                    for c in 0..d {
                        acc += mat[r * d + c] * z[c];
                    }
                    out[r] = acc;
                }
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.field, DiffusionField::Zero)
    }

    fn digest_str(&self) -> String {
        match &self.field {
            DiffusionField::Zero => "zero".into(),
            DiffusionField::Scalar { sigma } => format!("scalar:{sigma:.17e}"),
            DiffusionField::Identity => "identity".into(),
            DiffusionField::Custom { tag, .. } => format!("custom:{tag}"),
        }
    }
}

/// Initial law family; samplers receive the graphon index u in [0, 1].
#[derive(Clone)]
pub enum InitialLaw {
    Point { center: f64 },
    /// Componentwise N(mean + mean_slope * u, std^2).
    Gaussian { mean: f64, mean_slope: f64, std: f64 },
    /// Block-constant means over m = means.len() index blocks.
    BlockGaussian { means: Vec<f64>, std: f64 },
    Uniform { lo: f64, hi: f64 },
    Custom {
        tag: String,
        sampler: Arc<dyn Fn(f64, &mut SampleSource, &mut [f64]) + Send + Sync>,
        density: Option<Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>>,
    },
}

impl fmt::Debug for InitialLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitialLaw::Point { center } => write!(f, "Point({center})"),
            InitialLaw::Gaussian { mean, mean_slope, std } => {
                write!(f, "Gaussian({mean}+{mean_slope}u, std={std})")
            }
            InitialLaw::BlockGaussian { means, std } => write!(f, "BlockGaussian({means:?}, std={std})"),
            InitialLaw::Uniform { lo, hi } => write!(f, "Uniform({lo}, {hi})"),
            InitialLaw::Custom { tag, .. } => write!(f, "Custom({tag})"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct InitialLawSpec {
    pub law: InitialLaw,
    /// Optional Lipschitz-in-index modulus of the initial densities,
    /// |mu(0, u, x) - mu(0, v, x)| <= rho_i |u - v|. A validation datum
    /// only; no estimator consumes it.
    pub rho_i: Option<f64>,
}

impl InitialLawSpec {
    pub fn new(law: InitialLaw) -> Self {
        Self { law, rho_i: None }
    }

    pub fn with_rho_i(law: InitialLaw, rho_i: f64) -> Self {
        Self { law, rho_i: Some(rho_i) }
    }

    pub fn gaussian(mean: f64, std: f64) -> Self {
        Self::new(InitialLaw::Gaussian { mean, mean_slope: 0.0, std })
    }

    pub fn point(center: f64) -> Self {
        Self::new(InitialLaw::Point { center })
    }

    pub fn sample(&self, u: f64, src: &mut SampleSource, out: &mut [f64]) {
        match &self.law {
            InitialLaw::Point { center } => out.fill(*center),
            InitialLaw::Gaussian { mean, mean_slope, std } => {
                let m = mean + mean_slope * u;
                for o in out.iter_mut() {
                    *o = m + std * src.next_normal();
                }
            }
            InitialLaw::BlockGaussian { means, std } => {
                let m = means[block_index(u, means.len())];
                for o in out.iter_mut() {
                    *o = m + std * src.next_normal();
                }
            }
            InitialLaw::Uniform { lo, hi } => {
                for o in out.iter_mut() {
                    *o = lo + (hi - lo) * src.next_uniform();
                }
            }
            InitialLaw::Custom { sampler, .. } => sampler(u, src, out),
        }
    }

    /// Density of the initial law at (u, x), when one exists.
    pub fn density(&self, u: f64, x: &[f64]) -> Option<f64> {
        match &self.law {
            InitialLaw::Point { .. } => None,
            InitialLaw::Gaussian { mean, mean_slope, std } => {
                Some(gaussian_density(mean + mean_slope * u, *std, x))
            }
            InitialLaw::BlockGaussian { means, std } => {
                Some(gaussian_density(means[block_index(u, means.len())], *std, x))
            }
            InitialLaw::Uniform { lo, hi } => {
                let inside = x.iter().all(|&v| v >= *lo && v <= *hi);
                Some(if inside { 1.0 / (hi - lo).powi(x.len() as i32) } else { 0.0 })
            }
            InitialLaw::Custom { density, .. } => density.as_ref().map(|f| f(u, x)),
        }
    }

    fn digest_str(&self) -> String {
        match &self.law {
            InitialLaw::Point { center } => format!("point:{center:.17e}"),
            InitialLaw::Gaussian { mean, mean_slope, std } => {
                format!("gauss:{mean:.17e}:{mean_slope:.17e}:{std:.17e}")
            }
            InitialLaw::BlockGaussian { means, std } => {
                let ms: Vec<String> = means.iter().map(|m| format!("{m:.17e}")).collect();
                format!("blockgauss:[{}]:{std:.17e}", ms.join(","))
            }
            InitialLaw::Uniform { lo, hi } => format!("uniform:{lo:.17e}:{hi:.17e}"),
            InitialLaw::Custom { tag, .. } => format!("custom:{tag}"),
        }
    }
}

/// Index block for u in [0, 1] split into m blocks ((j-1)/m, j/m].
pub fn block_index(u: f64, m: usize) -> usize {
    if m == 0 {
        return 0;
    }
    let scaled = (u * m as f64).ceil() as isize - 1;
    scaled.clamp(0, m as isize - 1) as usize
}

fn gaussian_density(mean: f64, std: f64, x: &[f64]) -> f64 {
    let norm = 1.0 / (std * (2.0 * std::f64::consts::PI).sqrt());
    x.iter().map(|&v| norm * (-(v - mean) * (v - mean) / (2.0 * std * std)).exp()).product()
}

/// Full description of one graphon particle system.
#[derive(Debug, Clone)]
pub struct SystemSpec {
    pub d: usize,
    pub t_horizon: f64,
    pub drift: DriftSpec,
    pub graphon: GraphonSpec,
    pub diffusion: DiffusionSpec,
    pub initial: InitialLawSpec,
}

impl SystemSpec {
    pub fn new(
        d: usize,
        t_horizon: f64,
        drift: DriftSpec,
        graphon: GraphonSpec,
        diffusion: DiffusionSpec,
        initial: InitialLawSpec,
    ) -> Result<Self, ModelError> {
        if d == 0 {
            return Err(ModelError::InvalidParam("d must be >= 1".into()));
        }
        if !(t_horizon > 0.0) {
            return Err(ModelError::InvalidParam("T must be > 0".into()));
        }
        Ok(Self { d, t_horizon, drift, graphon, diffusion, initial })
    }

    /// Content digest binding trajectories to the system spec that produced them.
    pub fn digest(&self) -> [u8; 32] {
        let desc = format!(
            "gmfe-spec-v1|d={}|T={:.17e}|drift[{}]|graphon[{}]|diff[{}]|init[{}]",
            self.d,
            self.t_horizon,
            self.drift.digest_str(),
            self.graphon.digest_str(),
            self.diffusion.digest_str(),
            self.initial.digest_str(),
        );
        let mut h = Sha256::new();
        h.update(desc.as_bytes());
        h.finalize().into()
    }
}

/// One validation check outcome with the worst sampled witness.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub witness: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub checks: Vec<CheckResult>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn push(&mut self, name: &str, passed: bool, witness: f64, detail: String) {
        self.checks.push(CheckResult { name: name.into(), passed, witness, detail });
    }

    pub fn find(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "{} {:40} witness={:+.6e}  {}",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.witness,
                c.detail
            )?;
        }
        Ok(())
    }
}

/// Sampling-based validation of the coefficient conditions. Deterministic:
/// the internal sampler is counter-based with a fixed seed.
pub fn validate_spec(spec: &SystemSpec, n_samples: usize, tol: f64) -> ValidationReport {
    let mut report = ValidationReport::default();
    let d = spec.d;
    let n = n_samples.max(1);
    let mut src = SampleSource::new(0x5EED, STREAM_VALIDATE, 1);

    // drift: boundedness of b over sampled (x, y)
    {
        let r = spec.drift.f.support_radius().max(spec.drift.v.support_radius()).max(1.0);
        let mut worst = 0.0f64;
        let mut x = vec![0.0; d];
        let mut y = vec![0.0; d];
        let mut b = vec![0.0; d];
        for _ in 0..n {
            for v in x.iter_mut().chain(y.iter_mut()) {
                *v = (src.next_uniform() * 2.0 - 1.0) * 1.2 * r;
            }
            if eval_b(&spec.drift, &x, &y, &mut b).is_ok() {
                worst = worst.max(norm2(&b));
            }
        }
        let ok = worst <= spec.drift.bound_b * (1.0 + tol);
        report.push("drift.bound", ok, worst, format!("declared bound_b={:.6e}", spec.drift.bound_b));
    }

    // drift: sampled Lipschitz slope
    {
        let r = spec.drift.f.support_radius().max(spec.drift.v.support_radius()).max(1.0);
        let mut worst = 0.0f64;
        let (mut x, mut y) = (vec![0.0; d], vec![0.0; d]);
        let (mut x2, mut y2) = (vec![0.0; d], vec![0.0; d]);
        let (mut b1, mut b2) = (vec![0.0; d], vec![0.0; d]);
        for _ in 0..n {
            for v in x.iter_mut().chain(y.iter_mut()) {
                *v = (src.next_uniform() * 2.0 - 1.0) * 1.2 * r;
            }
            let eps = 1e-4 * r;
            for (a, b) in x2.iter_mut().zip(&x) {
                *a = b + eps * (src.next_uniform() * 2.0 - 1.0);
            }
            for (a, b) in y2.iter_mut().zip(&y) {
                *a = b + eps * (src.next_uniform() * 2.0 - 1.0);
            }
            if eval_b(&spec.drift, &x, &y, &mut b1).is_err() {
                continue;
            }
            if eval_b(&spec.drift, &x2, &y2, &mut b2).is_err() {
                continue;
            }
            let dist = x.iter().zip(&x2).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
                + y.iter().zip(&y2).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            if dist > 0.0 {
                let df = b1.iter().zip(&b2).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                worst = worst.max(df / dist);
            }
        }
        let ok = worst <= spec.drift.lip_b * (1.0 + tol);
        report.push("drift.lipschitz", ok, worst, format!("declared lip_b={:.6e}", spec.drift.lip_b));
    }

    // drift: compact support beyond declared radius
    {
        let mut worst = 0.0f64;
        let mut z = vec![0.0; d];
        let mut o = vec![0.0; d];
        for field in [&spec.drift.f, &spec.drift.v] {
            let r = field.support_radius();
            if field.is_zero() {
                continue;
            }
            for _ in 0..n {
                let scale = 1.0 + src.next_uniform() * 2.0;
                for zi in z.iter_mut() {
                    *zi = src.next_uniform() * 2.0 - 1.0;
                }
                let nz = norm2(&z).max(1e-12);
                for zi in z.iter_mut() {
                    *zi *= r * scale / nz;
                }
                field.eval(&z, &mut o);
                worst = worst.max(norm2(&o));
            }
        }
        report.push("drift.compact_support", worst <= tol, worst, "F, V vanish beyond declared radii".into());
    }

    // graphon: range, g(0) = g0, Lipschitz (sampled over u, v in [0, 1]^2)
    {
        let mut worst_low = 0.0f64;
        let mut worst_high = 0.0f64;
        for _ in 0..n {
            let u = src.next_uniform();
            let v = src.next_uniform();
            let gv = spec.graphon.eval(u - v);
            worst_low = worst_low.max(-gv);
            worst_high = worst_high.max(gv);
        }
        let in_range = worst_low <= tol && worst_high <= 1.0 + tol;
        let witness = if worst_low > tol { -worst_low } else { worst_high };
        report.push("graphon.range", in_range, witness, "0 <= g <= 1 over sampled u - v".into());

        let g0_err = (spec.graphon.eval(0.0) - spec.graphon.g0).abs();
        report.push("graphon.g0", g0_err <= tol, g0_err, format!("g(0) vs declared g0={:.6e}", spec.graphon.g0));

        let mut worst_slope = 0.0f64;
        for _ in 0..n {
            let u = src.next_uniform();
            let v = src.next_uniform();
            let z = u - v;
            let dz = 1e-5;
            // keep the probe pair inside the sampled difference domain
            let z2 = if z + dz <= 1.0 { z + dz } else { z - dz };
            let slope = (spec.graphon.eval(z2) - spec.graphon.eval(z)).abs() / (z2 - z).abs();
            worst_slope = worst_slope.max(slope);
        }
        let ok = worst_slope <= spec.graphon.lip_g * (1.0 + tol) + tol;
        report.push("graphon.lipschitz", ok, worst_slope, format!("declared lip_g={:.6e}", spec.graphon.lip_g));
    }

    // diffusion: spectral bounds sigma_-^2 I <= sigma sigma^T <= sigma_+^2 I
    {
        let mut worst_low = f64::INFINITY;
        let mut worst_high = 0.0f64;
        let mut x = vec![0.0; d];
        let mut dir = vec![0.0; d];
        let mut out = vec![0.0; d];
        for _ in 0..n {
            for v in x.iter_mut() {
                *v = (src.next_uniform() * 2.0 - 1.0) * 3.0;
            }
            for v in dir.iter_mut() {
                *v = src.next_normal();
            }
            let nd = norm2(&dir).max(1e-12);
            for v in dir.iter_mut() {
                *v /= nd;
            }
            // |sigma^T e| via apply on basis? apply gives sigma * z; quadratic
            // form e^T sigma sigma^T e = |sigma^T e|^2; for scalar families
            // sigma is symmetric, so sigma^T e = sigma e.
            spec.diffusion.apply(&x, &dir, &mut out);
            let q = out.iter().map(|v| v * v).sum::<f64>();
            worst_low = worst_low.min(q);
            worst_high = worst_high.max(q);
        }
        let lo2 = spec.diffusion.sigma_minus * spec.diffusion.sigma_minus;
        let hi2 = spec.diffusion.sigma_plus * spec.diffusion.sigma_plus;
        let ok = worst_low + tol >= lo2 && worst_high <= hi2 * (1.0 + tol) + tol;
        let witness = if worst_low + tol < lo2 { worst_low } else { worst_high };
        report.push(
            "diffusion.spectral_bounds",
            ok,
            witness,
            format!("declared [{:.3e}, {:.3e}]^2", spec.diffusion.sigma_minus, spec.diffusion.sigma_plus),
        );
    }

    // initial law: Lipschitz-in-index modulus when declared (d = 1 only)
    if d == 1 {
        if let Some(rho) = spec.initial.rho_i {
            let mut worst = 0.0f64;
            for _ in 0..n.min(500) {
                let u = src.next_uniform();
                let v = src.next_uniform();
                let x = (src.next_uniform() * 2.0 - 1.0) * 4.0;
                if let (Some(a), Some(b)) = (spec.initial.density(u, &[x]), spec.initial.density(v, &[x])) {
                    if (u - v).abs() > 1e-9 {
                        worst = worst.max((a - b).abs() / (u - v).abs());
                    }
                }
            }
            report.push("initial.index_lipschitz", worst <= rho * (1.0 + tol), worst, format!("declared rho_I = {rho:.6e}"));
        }
    }

    // initial law: density normalization per u (quadrature, d = 1 only)
    if d == 1 {
        let probe_u = [0.0, 0.25, 0.5, 0.75, 1.0];
        let mut worst = 0.0f64;
        let mut have_density = false;
        for &u in &probe_u {
            if spec.initial.density(u, &[0.0]).is_some() {
                have_density = true;
                // integrate over a generous window around the family's scale
                let (center, width) = initial_window(&spec.initial, u);
                let mass = simpson(|x| spec.initial.density(u, &[x]).unwrap_or(0.0), center - width, center + width, 1 << 12);
                worst = worst.max((mass - 1.0).abs());
            }
        }
        if have_density {
            report.push("initial.density_normalized", worst <= 10.0 * tol.max(1e-6), worst, "integral of density vs 1".into());
        }
    }

    report
}

fn initial_window(init: &InitialLawSpec, _u: f64) -> (f64, f64) {
    match &init.law {
        InitialLaw::Gaussian { mean, mean_slope, std } => (mean + mean_slope * 0.5, 10.0 * std + mean_slope.abs() + 1.0),
        InitialLaw::BlockGaussian { means, std } => {
            let lo = means.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            ((lo + hi) / 2.0, (hi - lo) / 2.0 + 10.0 * std + 1.0)
        }
        InitialLaw::Uniform { lo, hi } => ((lo + hi) / 2.0, (hi - lo) / 2.0 + 1.0),
        _ => (0.0, 20.0),
    }
}

/// Built-in spec library used by tests and the experiment harness.
pub mod builtins {
    use super::*;

    /// Zero-interaction system with mean-reverting external force; the
    /// per-particle law is a closed-form Gaussian (OU process) whenever the
    /// plateau contains the dynamics.
    pub fn ou_system(t_horizon: f64, g0: f64, sigma: f64, init: InitialLawSpec) -> SystemSpec {
        let drift = DriftSpec::new(ForceField::Zero, ForceField::TruncatedLinear { radius: 10.0 }, 1);
        let graphon = GraphonSpec::new(GraphonFn::Constant { g0 }).expect("valid constant graphon");
        let diffusion = DiffusionSpec::new(if sigma == 0.0 {
            DiffusionField::Zero
        } else {
            DiffusionField::Scalar { sigma }
        });
        SystemSpec::new(1, t_horizon, drift, graphon, diffusion, init).expect("valid OU system")
    }

    /// Interacting system: truncated-linear attraction F, no external force.
    pub fn interacting_system(
        t_horizon: f64,
        g0: f64,
        force_radius: f64,
        sigma: f64,
        init: InitialLawSpec,
    ) -> SystemSpec {
        let drift = DriftSpec::new(ForceField::TruncatedLinear { radius: force_radius }, ForceField::Zero, 1);
        let graphon = GraphonSpec::new(GraphonFn::Constant { g0 }).expect("valid constant graphon");
        let diffusion = DiffusionSpec::new(if sigma == 0.0 {
            DiffusionField::Zero
        } else {
            DiffusionField::Scalar { sigma }
        });
        SystemSpec::new(1, t_horizon, drift, graphon, diffusion, init).expect("valid interacting system")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d1_drift(f: ForceField, v: ForceField) -> DriftSpec {
        DriftSpec::new(f, v, 1)
    }

    #[test]
    fn eval_b_zero_coefficients() {
        let drift = d1_drift(ForceField::Zero, ForceField::Zero);
        let mut out = [123.0];
        eval_b(&drift, &[0.7], &[-2.0], &mut out).unwrap();
        assert_eq!(out[0], 0.0);
    }

    #[test]
    fn eval_b_truncated_linear_inside_plateau() {
        // F(z) = -z with plateau |z| <= 10; x = 1, y = -1 gives F(2) = -2
        let drift = d1_drift(ForceField::TruncatedLinear { radius: 10.0 }, ForceField::Zero);
        let mut out = [0.0];
        eval_b(&drift, &[1.0], &[-1.0], &mut out).unwrap();
        assert!((out[0] + 2.0).abs() < 1e-15);
    }

    #[test]
    fn eval_b_truncated_tanh_matches_scalar_oracle() {
        let drift = d1_drift(ForceField::Zero, ForceField::TruncatedTanh { radius: 10.0 });
        let mut out = [0.0];
        eval_b(&drift, &[0.5], &[99.0], &mut out).unwrap();
        // independent scalar evaluation: cutoff(0.05) = 1 on the plateau
        let oracle = -(0.5f64).tanh() * smooth_cutoff(0.5 / 10.0);
        assert!((out[0] - oracle).abs() < 1e-15);
        assert!((out[0] + 0.46211715726000974).abs() < 1e-12);
    }

    #[test]
    fn eval_b_rejects_non_finite() {
        let drift = d1_drift(ForceField::Zero, ForceField::Zero);
        let mut out = [0.0];
        assert!(matches!(eval_b(&drift, &[f64::NAN], &[0.0], &mut out), Err(ModelError::NonFiniteInput)));
    }

    #[test]
    fn eval_b_translation_consistency() {
        // b(x + c, y + c) - b(x, y) = V(x + c) - V(x)
        let drift = d1_drift(
            ForceField::TruncatedLinear { radius: 4.0 },
            ForceField::TruncatedTanh { radius: 4.0 },
        );
        for &(x, y, c) in &[(0.3, -0.7, 0.9), (1.5, 2.0, -0.4), (-2.0, 1.0, 0.05)] {
            let mut b1 = [0.0];
            let mut b2 = [0.0];
            eval_b(&drift, &[x + c], &[y + c], &mut b2).unwrap();
            eval_b(&drift, &[x], &[y], &mut b1).unwrap();
            let mut v1 = [0.0];
            let mut v2 = [0.0];
            drift.v.eval(&[x], &mut v1);
            drift.v.eval(&[x + c], &mut v2);
            assert!((b2[0] - b1[0] - (v2[0] - v1[0])).abs() < 1e-14);
        }
    }

    #[test]
    fn cutoff_is_c1_at_joints() {
        assert_eq!(smooth_cutoff(0.5), 1.0);
        assert_eq!(smooth_cutoff(1.0), 1.0);
        assert_eq!(smooth_cutoff(2.0), 0.0);
        assert_eq!(smooth_cutoff(3.0), 0.0);
        // derivative approx 0 at both joints
        let d1 = (smooth_cutoff(1.0 + 1e-6) - smooth_cutoff(1.0)) / 1e-6;
        let d2 = (smooth_cutoff(2.0) - smooth_cutoff(2.0 - 1e-6)) / 1e-6;
        assert!(d1.abs() < 1e-4);
        assert!(d2.abs() < 1e-4);
    }

    #[test]
    fn validate_constant_graphon_passes() {
        let spec = builtins::ou_system(1.0, 0.5, 1.0, InitialLawSpec::gaussian(0.0, 0.5));
        let report = validate_spec(&spec, 500, 1e-6);
        let range = report.find("graphon.range").unwrap();
        assert!(range.passed);
        let lip = report.find("graphon.lipschitz").unwrap();
        assert!(lip.passed);
        assert!(lip.witness.abs() < 1e-9, "constant graphon slope witness should be 0");
    }

    #[test]
    fn validate_out_of_range_graphon_fails_with_witness() {
        let graphon = GraphonSpec { g: GraphonFn::Custom { tag: "bad".into(), g0: 1.0, lip: 0.0, g: Arc::new(|_| 1.2) }, g0: 1.0, lip_g: 0.0 };
        let spec = SystemSpec::new(
            1,
            1.0,
            DriftSpec::new(ForceField::Zero, ForceField::Zero, 1),
            graphon,
            DiffusionSpec::new(DiffusionField::Scalar { sigma: 1.0 }),
            InitialLawSpec::gaussian(0.0, 1.0),
        )
        .unwrap();
        let report = validate_spec(&spec, 200, 1e-6);
        let range = report.find("graphon.range").unwrap();
        assert!(!range.passed);
        assert!((range.witness - 1.2).abs() < 1e-12);
    }

    #[test]
    fn validate_truncated_linear_lipschitz_passes() {
        let spec = builtins::interacting_system(1.0, 0.8, 5.0, 1.0, InitialLawSpec::gaussian(0.0, 0.3));
        let report = validate_spec(&spec, 1000, 1e-6);
        assert!(report.find("drift.lipschitz").unwrap().passed);
        assert!(report.find("drift.bound").unwrap().passed);
        assert!(report.find("drift.compact_support").unwrap().passed);
    }

    #[test]
    fn validate_is_deterministic() {
        let spec = builtins::interacting_system(1.0, 0.8, 5.0, 1.0, InitialLawSpec::gaussian(0.0, 0.3));
        let a = validate_spec(&spec, 300, 1e-6);
        let b = validate_spec(&spec, 300, 1e-6);
        for (x, y) in a.checks.iter().zip(&b.checks) {
            assert_eq!(x.passed, y.passed);
            assert_eq!(x.witness.to_bits(), y.witness.to_bits());
        }
    }

    #[test]
    fn block_index_matches_partition() {
        // blocks ((j-1)/m, j/m]
        assert_eq!(block_index(0.3, 2), 0);
        assert_eq!(block_index(0.5, 2), 0);
        assert_eq!(block_index(0.500001, 2), 1);
        assert_eq!(block_index(1.0, 2), 1);
        assert_eq!(block_index(0.0, 2), 0);
    }

    #[test]
    fn degree_of_periodic_graphon_is_constant() {
        let g = GraphonSpec::new(GraphonFn::Periodic { m: 2, base: 0.5, amplitude: 0.3 }).unwrap();
        let d1 = g.degree(0.2);
        let d2 = g.degree(0.7);
        assert!((d1 - d2).abs() < 1e-9, "degree {d1} vs {d2}");
        assert!((d1 - 0.5).abs() < 1e-9);
    }

    #[test]
    fn initial_density_normalizes() {
        let spec = InitialLawSpec::gaussian(0.3, 0.4);
        let mass = simpson(|x| spec.density(0.5, &[x]).unwrap(), -6.0, 6.0, 1 << 12);
        assert!((mass - 1.0).abs() < 1e-10);
    }

    #[test]
    fn spec_digest_distinguishes_parameters() {
        let a = builtins::ou_system(1.0, 0.5, 1.0, InitialLawSpec::gaussian(0.0, 0.5));
        let b = builtins::ou_system(1.0, 0.6, 1.0, InitialLawSpec::gaussian(0.0, 0.5));
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest(), a.digest());
    }
}
