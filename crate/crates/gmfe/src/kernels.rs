//! The HJK kernel family: a time kernel H, an index kernel J, and a state
//! kernel K, each nonnegative, normalized, of order at least 1, and supported
//! in the closed unit ball.
//!
//! K is a tensor product of one-dimensional factors, so its support is the
//! unit cube; all support checks in this crate use the sup norm. That keeps
//! d-dimensional evaluation O(d) and the first moments exactly zero for
//! symmetric factors.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::model::ValidationReport;
use crate::numerics::simpson;
use crate::rng::{SampleSource, STREAM_VALIDATE};

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("bandwidths must be strictly positive, got ({0}, {1}, {2})")]
    NonPositiveBandwidth(f64, f64, f64),
}

/// One-dimensional kernel shape on [-1, 1].
#[derive(Clone)]
pub enum Kernel1 {
    /// 15/16 (1 - t^2)^2, C^1 at the boundary.
    Biweight,
    /// 35/32 (1 - t^2)^3.
    Triweight,
    /// 3/4 (1 - t^2); NOT C^1 at the boundary (derivative jump 3/2).
    Epanechnikov,
    Custom { tag: String, f: Arc<dyn Fn(f64) -> f64 + Send + Sync> },
}

impl fmt::Debug for Kernel1 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Kernel1::Biweight => write!(f, "Biweight"),
            Kernel1::Triweight => write!(f, "Triweight"),
            Kernel1::Epanechnikov => write!(f, "Epanechnikov"),
            Kernel1::Custom { tag, .. } => write!(f, "Custom({tag})"),
        }
    }
}

impl Kernel1 {
    #[inline]
    pub fn eval(&self, t: f64) -> f64 {
        if t.abs() > 1.0 {
            return 0.0;
        }
        let s = 1.0 - t * t;
        match self {
            Kernel1::Biweight => 15.0 / 16.0 * s * s,
            Kernel1::Triweight => 35.0 / 32.0 * s * s * s,
            Kernel1::Epanechnikov => 0.75 * s,
            Kernel1::Custom { f, .. } => f(t),
        }
    }
}

/// Kernel triple (H, J, K); K is the d-fold tensor product of `k_factor`.
#[derive(Debug, Clone)]
pub struct KernelTriple {
    pub h: Kernel1,
    pub j: Kernel1,
    pub k_factor: Kernel1,
}

impl KernelTriple {
    pub fn biweight() -> Self {
        Self { h: Kernel1::Biweight, j: Kernel1::Biweight, k_factor: Kernel1::Biweight }
    }

    pub fn triweight() -> Self {
        Self { h: Kernel1::Triweight, j: Kernel1::Triweight, k_factor: Kernel1::Triweight }
    }

    #[inline]
    pub fn eval_h(&self, t: f64) -> f64 {
        self.h.eval(t)
    }

    #[inline]
    pub fn eval_j(&self, u: f64) -> f64 {
        self.j.eval(u)
    }

    /// Tensor K(x) supported in the unit cube (sup-norm ball).
    #[inline]
    pub fn eval_k(&self, x: &[f64]) -> f64 {
        let mut p = 1.0;
        for &xi in x {
            p *= self.k_factor.eval(xi);
            if p == 0.0 {
                return 0.0;
            }
        }
        p
    }
}

/// Bandwidth vector h = (h1, h2, h3) for the dilations of H, J, K.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bandwidths {
    pub h1: f64,
    pub h2: f64,
    pub h3: f64,
}

impl Bandwidths {
    pub fn new(h1: f64, h2: f64, h3: f64) -> Result<Self, KernelError> {
        if h1 > 0.0 && h2 > 0.0 && h3 > 0.0 {
            Ok(Self { h1, h2, h3 })
        } else {
            Err(KernelError::NonPositiveBandwidth(h1, h2, h3))
        }
    }

    /// The time discretization should be much finer than h1; the stochastic
    /// integral estimator degrades when fewer than ~10 steps fall under H.
    pub fn h1_too_coarse_for(&self, dt: f64) -> bool {
        self.h1 < 10.0 * dt
    }
}

/// H_{h1}(t) = H(t / h1) / h1.
#[inline]
pub fn dilate_h(triple: &KernelTriple, h1: f64, t: f64) -> f64 {
    triple.eval_h(t / h1) / h1
}

/// J_{h2}(u) = J(u / h2) / h2.
#[inline]
pub fn dilate_j(triple: &KernelTriple, h2: f64, u: f64) -> f64 {
    triple.eval_j(u / h2) / h2
}

/// K_{h3}(x) = K(x / h3) / h3^d; zero when sup-norm |x| > h3.
#[inline]
pub fn dilate_k(triple: &KernelTriple, h3: f64, x: &[f64]) -> f64 {
    let mut p = 1.0;
    for &xi in x {
        p *= triple.k_factor.eval(xi / h3);
        if p == 0.0 {
            return 0.0;
        }
    }
    p / h3.powi(x.len() as i32)
}

/// (J (x) K)_h(u, x).
#[inline]
pub fn product_jk(triple: &KernelTriple, h: &Bandwidths, u: f64, x: &[f64]) -> f64 {
    let j = dilate_j(triple, h.h2, u);
    if j == 0.0 {
        return 0.0;
    }
    j * dilate_k(triple, h.h3, x)
}

/// (H (x) J (x) K)_h(t, u, x).
#[inline]
pub fn product_hjk(triple: &KernelTriple, h: &Bandwidths, t: f64, u: f64, x: &[f64]) -> f64 {
    let ht = dilate_h(triple, h.h1, t);
    if ht == 0.0 {
        return 0.0;
    }
    ht * product_jk(triple, h, u, x)
}

/// Check normalization, first moments, support, and C^1 boundary behavior.
///
/// Quadrature: composite Simpson with `panels` panels per axis for d <= 2;
/// Monte Carlo with 10^6 samples (standard error reported in the detail
/// string) for d >= 3. Default panel count is 2^14.
pub fn validate_kernels(triple: &KernelTriple, d: usize, tol: f64) -> ValidationReport {
    validate_kernels_with(triple, d, tol, 1 << 14)
}

pub fn validate_kernels_with(triple: &KernelTriple, d: usize, tol: f64, panels: usize) -> ValidationReport {
    let mut report = ValidationReport::default();

    for (name, k) in [("H", &triple.h), ("J", &triple.j)] {
        let mass = simpson(|t| k.eval(t), -1.0, 1.0, panels);
        report.push(&format!("kernel.{name}.normalized"), (mass - 1.0).abs() <= tol, mass, "integral vs 1".into());
        let m1 = simpson(|t| t * k.eval(t), -1.0, 1.0, panels);
        report.push(&format!("kernel.{name}.first_moment"), m1.abs() <= tol, m1, "first moment vs 0".into());
        support_and_boundary_checks(&mut report, name, k, tol, &mut |f| simpson(f, -1.0, 1.0, panels));
    }

    // K: tensor over d axes
    match d {
        1 => {
            let mass = simpson(|t| triple.eval_k(&[t]), -1.0, 1.0, panels);
            report.push("kernel.K.normalized", (mass - 1.0).abs() <= tol, mass, "integral vs 1 (d=1)".into());
            let m1 = simpson(|t| t * triple.eval_k(&[t]), -1.0, 1.0, panels);
            report.push("kernel.K.first_moment", m1.abs() <= tol, m1, "first moment vs 0".into());
        }
        2 => {
            let mass = crate::numerics::simpson2d(|a, b| triple.eval_k(&[a, b]), (-1.0, -1.0), (1.0, 1.0), panels.min(1 << 14));
            report.push("kernel.K.normalized", (mass - 1.0).abs() <= tol, mass, "integral vs 1 (d=2)".into());
            for axis in 0..2 {
                let m1 = crate::numerics::simpson2d(
                    |a, b| [a, b][axis] * triple.eval_k(&[a, b]),
                    (-1.0, -1.0),
                    (1.0, 1.0),
                    panels.min(1 << 14),
                );
                report.push(&format!("kernel.K.first_moment_{axis}"), m1.abs() <= tol, m1, "first moment vs 0".into());
            }
        }
        _ => {
            // Monte Carlo over the unit cube with reported standard error.
            let samples = 1_000_000usize;
            let mut src = SampleSource::new(0xCE11, STREAM_VALIDATE, d as u64);
            let mut x = vec![0.0; d];
            let mut acc = 0.0;
            let mut acc2 = 0.0;
            let mut m1 = vec![0.0; d];
            let vol = 2.0f64.powi(d as i32);
            for _ in 0..samples {
                for xi in x.iter_mut() {
                    *xi = src.next_uniform() * 2.0 - 1.0;
                }
                let v = triple.eval_k(&x);
                acc += v;
                acc2 += v * v;
                for (mi, &xi) in m1.iter_mut().zip(&x) {
                    *mi += xi * v;
                }
            }
            let mean = acc / samples as f64;
            let mass = mean * vol;
            let se = ((acc2 / samples as f64 - mean * mean) / samples as f64).sqrt() * vol;
            report.push(
                "kernel.K.normalized",
                (mass - 1.0).abs() <= tol.max(4.0 * se),
                mass,
                format!("MC integral vs 1, stderr {se:.2e}"),
            );
            for (axis, mi) in m1.iter().enumerate() {
                let v = mi / samples as f64 * vol;
                report.push(
                    &format!("kernel.K.first_moment_{axis}"),
                    v.abs() <= tol.max(4.0 * se),
                    v,
                    format!("MC first moment vs 0, stderr {se:.2e}"),
                );
            }
        }
    }
    // boundary/support checks for the K factor apply on each axis identically
    support_and_boundary_checks(&mut report, "K_factor", &triple.k_factor, tol, &mut |f| simpson(f, -1.0, 1.0, 1 << 10));

    report
}

fn support_and_boundary_checks(
    report: &mut ValidationReport,
    name: &str,
    k: &Kernel1,
    _tol: f64,
    _quad: &mut dyn FnMut(&dyn Fn(f64) -> f64) -> f64,
) {
    // vanishes outside the closed unit ball
    let mut worst = 0.0f64;
    for i in 1..=64 {
        let t = 1.0 + i as f64 / 32.0;
        worst = worst.max(k.eval(t).abs()).max(k.eval(-t).abs());
    }
    report.push(&format!("kernel.{name}.support"), worst == 0.0, worst, "zero outside [-1, 1]".into());

    // C^1 probe: one-sided derivative jump at the support boundary
    let delta = 1e-6;
    let inner = (k.eval(1.0) - k.eval(1.0 - delta)) / delta;
    let jump = inner.abs(); // outside derivative is 0
    report.push(
        &format!("kernel.{name}.c1_boundary"),
        jump <= 1e-3,
        inner,
        "one-sided derivative at +1 vs 0 outside".into(),
    );
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn biweight_at_origin() {
        let t = KernelTriple::biweight();
        assert!((dilate_j(&t, 1.0, 0.0) - 15.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn dilation_scaling_at_origin() {
        let t = KernelTriple::biweight();
        for &h3 in &[0.5, 0.1, 2.0] {
            let expect = t.eval_k(&[0.0, 0.0]) / (h3 * h3);
            assert!((dilate_k(&t, h3, &[0.0, 0.0]) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn dilated_j_integrates_to_one() {
        let t = KernelTriple::biweight();
        for &h2 in &[0.5, 0.1, 0.01] {
            // quadrature over the dilated support [-h2, h2]
            let mass = simpson(|u| dilate_j(&t, h2, u), -h2, h2, 1 << 14);
            assert!((mass - 1.0).abs() < 1e-8, "h2={h2}, mass={mass}");
        }
    }

    #[test]
    fn dilated_k_integrates_to_one_any_bandwidth() {
        let t = KernelTriple::biweight();
        for &h3 in &[0.3, 0.05] {
            let mass = simpson(|x| dilate_k(&t, h3, &[x]), -h3, h3, 1 << 14);
            assert!((mass - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn product_factorizes_at_origin() {
        let t = KernelTriple::biweight();
        let h = Bandwidths::new(0.3, 0.2, 0.4).unwrap();
        let lhs = product_hjk(&t, &h, 0.0, 0.0, &[0.0]);
        let rhs = dilate_h(&t, h.h1, 0.0) * dilate_j(&t, h.h2, 0.0) * dilate_k(&t, h.h3, &[0.0]);
        assert!((lhs - rhs).abs() < 1e-14);
    }

    #[test]
    fn product_vanishes_outside_support() {
        let t = KernelTriple::biweight();
        let h = Bandwidths::new(0.3, 0.2, 0.4).unwrap();
        // u outside [-h2, h2] kills the product regardless of t, x
        assert_eq!(product_hjk(&t, &h, 0.0, 0.25, &[0.0]), 0.0);
        assert_eq!(product_jk(&t, &h, 0.21, &[0.0]), 0.0);
        // x outside sup-norm radius h3
        assert_eq!(product_jk(&t, &h, 0.0, &[0.41]), 0.0);
    }

    #[test]
    fn product_matches_three_factor_reevaluation() {
        let t = KernelTriple::biweight();
        let h = Bandwidths::new(0.37, 0.21, 0.53).unwrap();
        let mut src = SampleSource::new(7, STREAM_VALIDATE, 0);
        for _ in 0..200 {
            let tv = (src.next_uniform() - 0.5) * 0.8;
            let uv = (src.next_uniform() - 0.5) * 0.5;
            let xv = [(src.next_uniform() - 0.5) * 1.2];
            let lhs = product_hjk(&t, &h, tv, uv, &xv);
            let rhs = dilate_h(&t, h.h1, tv) * dilate_j(&t, h.h2, uv) * dilate_k(&t, h.h3, &xv);
            assert!((lhs - rhs).abs() <= 1e-14 * rhs.abs().max(1.0));
        }
    }

    #[test]
    fn default_kernels_validate() {
        let report = validate_kernels_with(&KernelTriple::biweight(), 1, 1e-8, 1 << 12);
        assert!(report.all_passed(), "{report}");
    }

    #[test]
    fn epanechnikov_fails_c1_probe() {
        let t = KernelTriple { h: Kernel1::Epanechnikov, j: Kernel1::Biweight, k_factor: Kernel1::Biweight };
        let report = validate_kernels_with(&t, 1, 1e-8, 1 << 12);
        let probe = report.find("kernel.H.c1_boundary").unwrap();
        assert!(!probe.passed);
        assert!((probe.witness.abs() - 1.5).abs() < 1e-3, "derivative jump should be 3/2, got {}", probe.witness);
    }

    #[test]
    fn scaled_kernel_fails_normalization_with_witness() {
        let t = KernelTriple {
            h: Kernel1::Custom { tag: "2x-biweight".into(), f: Arc::new(|x| 2.0 * Kernel1::Biweight.eval(x)) },
            j: Kernel1::Biweight,
            k_factor: Kernel1::Biweight,
        };
        let report = validate_kernels_with(&t, 1, 1e-8, 1 << 12);
        let norm = report.find("kernel.H.normalized").unwrap();
        assert!(!norm.passed);
        assert!((norm.witness - 2.0).abs() < 1e-8);
    }

    #[test]
    fn tensor_k_validates_in_2d() {
        let report = validate_kernels_with(&KernelTriple::biweight(), 2, 1e-8, 1 << 9);
        assert!(report.find("kernel.K.normalized").unwrap().passed, "{report}");
    }
}
