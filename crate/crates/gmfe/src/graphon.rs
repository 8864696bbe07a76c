//! The graphon estimator: divide the transformed drift field by the
//! transformed density field under a frequency mask, invert the index
//! transform, and read off the interaction profile from the L2 norm ratio
//!
//! ```text
//! G_hat(u0, v0) = g0 * A_hat(u0 - v0) / (A_hat(0) v kappa0),
//! ```
//!
//! which equals g0 exactly at u0 = v0 whenever A_hat(0) clears the cutoff,
//! and depends on (u0, v0) only through the difference.

use std::sync::Arc;

use num_complex::Complex64;
use thiserror::Error;

use crate::estimators::{fields_on_grid, Cutoffs, EstimatorError, EvalGrid, Fields};
use crate::fourier::{
    inverse_f_i_at, make_phi, t_transform, ComplexField, FourierError, FrequencyGrid, PhiShape, TestFunctionPhi,
};
use crate::kernels::{Bandwidths, KernelTriple};
use crate::simulator::TrajectorySet;

#[derive(Debug, Error)]
pub enum GraphonError {
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Fourier(#[from] FourierError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Masked ratio (T beta / T mu) on the frequency grid: entries are zero
/// exactly where the mask is false.
#[derive(Debug, Clone)]
pub struct RatioField {
    pub field: ComplexField,
    /// indexed \[w\]\[xi_flat\]
    pub mask: Vec<bool>,
    /// fraction of grid nodes with the mask on
    pub masked_in_fraction: f64,
}

/// Componentwise division of T beta by scalar T mu where |T mu| > kappa1 and
/// |w| <= r_tilde; zero elsewhere.
pub fn ratio_field(
    t_mu: &ComplexField,
    t_beta: &ComplexField,
    kappa1: f64,
    r_tilde: f64,
) -> Result<RatioField, GraphonError> {
    if t_mu.fgrid != t_beta.fgrid {
        return Err(GraphonError::Fourier(FourierError::GridMismatch(
            "T mu and T beta live on different frequency grids".into(),
        )));
    }
    if t_mu.ncomp != 1 {
        return Err(GraphonError::InvalidArgument("T mu must be scalar".into()));
    }
    let fgrid = Arc::clone(&t_mu.fgrid);
    let n_w = fgrid.w_nodes.len();
    let n_xi = fgrid.n_xi();
    let d = t_beta.ncomp;
    let mut field = ComplexField::zeros(Arc::clone(&fgrid), d);
    let mut mask = vec![false; n_w * n_xi];
    let mut count = 0usize;
    for iw in 0..n_w {
        let w_ok = fgrid.w_nodes[iw].abs() <= r_tilde;
        for jx in 0..n_xi {
            let denom = t_mu.at(iw, jx, 0);
            let on = w_ok && denom.norm() > kappa1;
            mask[iw * n_xi + jx] = on;
            if !on {
                continue;
            }
            count += 1;
            for c in 0..d {
                let idx = field.idx(iw, jx, c);
                field.data[idx] = t_beta.at(iw, jx, c) / denom;
            }
        }
    }
    Ok(RatioField { field, mask, masked_in_fraction: count as f64 / (n_w * n_xi) as f64 })
}

/// A_hat(u): L2 norm over the xi grid (Euclidean over components) of the
/// truncated inverse index transform of the ratio field at u.
pub fn a_hat(ratio: &RatioField, u: f64) -> f64 {
    let profile = inverse_f_i_at(&ratio.field, u);
    let weights = ratio.field.fgrid.xi_weights();
    let mut acc = 0.0;
    for (jx, &w) in weights.iter().enumerate() {
        let mut sq = 0.0;
        for c in 0..profile.ncomp {
            sq += profile.data[jx * profile.ncomp + c].norm_sqr();
        }
        acc += w * sq;
    }
    acc.max(0.0).sqrt()
}

/// Full parameter tuple for the graphon estimator.
#[derive(Debug, Clone)]
pub struct GraphonTheta {
    pub h: Bandwidths,
    pub cut: Cutoffs,
    pub phi: TestFunctionPhi,
    pub egrid: EvalGrid,
    pub fgrid: Arc<FrequencyGrid>,
    pub g0: f64,
}

/// Default n-dependent schedule: h = n^{-1/5} across all three bandwidths,
/// kappa1 = 0.028 n^{-1/10}, kappa2 = 0.02, kappa0 = 0.25 g0 ||F||_2,
/// r = 2.5, r_tilde = 50. The kappa1 scale matches the magnitude of T mu
/// under the amplitude-one sine test function, and kappa2 sits above the
/// drift estimator's noise floor in the thin density tail inside radius r;
/// both are heuristics and config-overridable like the rest of the tuple.
pub fn default_theta(n: usize, g0: f64, f_l2: f64, t_horizon: f64) -> Result<GraphonTheta, GraphonError> {
    let nf = n as f64;
    let h_val = nf.powf(-0.2);
    let h = Bandwidths::new(h_val, h_val, h_val)
        .map_err(|e| GraphonError::InvalidArgument(e.to_string()))?;
    let kappa1 = 0.028 * nf.powf(-0.1);
    let kappa0 = (0.25 * g0 * f_l2).max(1e-9);
    let r = 2.5;
    let r_tilde = 50.0;
    let cut = Cutoffs::new(kappa0, kappa1, 0.02, r, r_tilde)?;
    let tau1 = (0.25 * t_horizon).max(1.05 * h_val);
    let tau2 = t_horizon - tau1;
    if !(tau1 < tau2) {
        return Err(GraphonError::InvalidArgument(format!(
            "horizon {t_horizon} too short for bandwidth h1 = {h_val}"
        )));
    }
    let phi = make_phi(tau1, tau2, PhiShape::SineOnePeriod, t_horizon)?;
    let n_x = 61;
    let egrid = EvalGrid::uniform((tau1, tau2, 21), (0.0, 1.0, 81), (-r, r, n_x), 1)?;
    let dx = 2.0 * r / (n_x - 1) as f64;
    let xi_max = std::f64::consts::PI / dx;
    let fgrid = Arc::new(FrequencyGrid::uniform(r_tilde, 401, xi_max, 129, 1)?);
    Ok(GraphonTheta { h, cut, phi, egrid, fgrid, g0 })
}

/// Everything computed once per trajectory; pair evaluations reuse it.
pub struct GraphonPipeline {
    pub ratio: RatioField,
    pub g0: f64,
    pub kappa0: f64,
    pub a_den_raw: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct GHatOutput {
    pub g_hat: f64,
    pub a_num: f64,
    pub a_den_raw: f64,
    pub masked_fraction: f64,
}

pub fn g_hat_pipeline(
    traj: &TrajectorySet,
    triple: &KernelTriple,
    theta: &GraphonTheta,
) -> Result<GraphonPipeline, GraphonError> {
    let fields = fields_on_grid(traj, triple, &theta.egrid, &theta.h, &theta.cut)?;
    g_hat_pipeline_from_fields(&fields, theta)
}

/// Build the pipeline from precomputed fields (used by forward-constructed
/// synthetic tests as well as the trajectory path).
pub fn g_hat_pipeline_from_fields(fields: &Fields, theta: &GraphonTheta) -> Result<GraphonPipeline, GraphonError> {
    let (t_mu, t_beta) = t_transform(fields, &theta.phi, &theta.fgrid)?;
    let ratio = ratio_field(&t_mu, &t_beta, theta.cut.kappa1, theta.cut.r_tilde)?;
    let a_den_raw = a_hat(&ratio, 0.0);
    Ok(GraphonPipeline { ratio, g0: theta.g0, kappa0: theta.cut.kappa0, a_den_raw })
}

impl GraphonPipeline {
    /// g0 * A_hat(u0 - v0) / (A_hat(0) v kappa0).
    pub fn evaluate(&self, u0: f64, v0: f64) -> Result<GHatOutput, GraphonError> {
        for v in [u0, v0] {
            if !(0.0..=1.0).contains(&v) {
                return Err(GraphonError::InvalidArgument(format!("index {v} outside [0, 1]")));
            }
        }
        let a_num = a_hat(&self.ratio, u0 - v0);
        let denom = self.a_den_raw.max(self.kappa0);
        Ok(GHatOutput {
            g_hat: self.g0 * a_num / denom,
            a_num,
            a_den_raw: self.a_den_raw,
            masked_fraction: self.ratio.masked_in_fraction,
        })
    }
}

/// One-shot estimator of the graphon value at (u0, v0).
pub fn g_hat(
    traj: &TrajectorySet,
    triple: &KernelTriple,
    u0: f64,
    v0: f64,
    theta: &GraphonTheta,
) -> Result<GHatOutput, GraphonError> {
    let pipeline = g_hat_pipeline(traj, triple, theta)?;
    pipeline.evaluate(u0, v0)
}

/// Analytic Fourier pairs used by the synthetic deconvolution oracles.
pub mod transforms {
    use super::Complex64;

    /// F[g0 1_{[-1, 1]}](w) = 2 g0 sin(w) / w.
    pub fn boxcar_symmetric_ft(g0: f64, w: f64) -> Complex64 {
        if w == 0.0 {
            Complex64::new(2.0 * g0, 0.0)
        } else {
            Complex64::new(2.0 * g0 * w.sin() / w, 0.0)
        }
    }

    /// F[g0 exp(-z^2 / 2 ell^2)](w) = g0 ell sqrt(2 pi) exp(-ell^2 w^2 / 2).
    pub fn gaussian_bump_ft(g0: f64, ell: f64, w: f64) -> Complex64 {
        Complex64::new(g0 * ell * (2.0 * std::f64::consts::PI).sqrt() * (-0.5 * ell * ell * w * w).exp(), 0.0)
    }

    /// F[1_{(0,1)}](w) = (1 - e^{-iw}) / (iw).
    pub fn unit_interval_ft(w: f64) -> Complex64 {
        if w == 0.0 {
            Complex64::new(1.0, 0.0)
        } else {
            let iw = Complex64::new(0.0, w);
            (Complex64::new(1.0, 0.0) - (-iw).exp()) / iw
        }
    }
}
