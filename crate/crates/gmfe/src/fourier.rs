//! The transform stack T = F_I F_{R^d} L_phi on gridded fields.
//!
//! L_phi integrates a time-indexed field against a mean-zero test function
//! phi supported inside (0, T); F_{R^d} and F_I are direct quadrature
//! Fourier transforms over the state box and the zero-extended index
//! interval [0, 1]. Forward transforms carry no prefactor; inverses carry
//! 1/(2 pi) per axis, matching F f(xi) = integral e^{-i x xi} f(x) dx.
//!
//! Transforms are staged per axis (same sums as the naive nested loop,
//! reassociated), which keeps the full stack cheap enough to run inside the
//! estimator pipeline without FFT-constrained grids.

use std::sync::Arc;

use num_complex::Complex64;
use thiserror::Error;

use crate::estimators::{EvalGrid, Fields};
use crate::numerics::trapezoid_weights;

#[derive(Debug, Error)]
pub enum FourierError {
    #[error("invalid phi interval: need 0 < tau1 < tau2 < T, got ({0}, {1}) with T = {2}")]
    InvalidInterval(f64, f64, f64),
    #[error("shape mismatch: {0}")]
    ShapeError(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
}

/// Named shapes for the test function phi.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhiShape {
    /// sin(2 pi (t - tau1) / (tau2 - tau1)) on [tau1, tau2]: one full period,
    /// mean zero exactly, sup norm 1.
    SineOnePeriod,
}

/// Bounded test function with compact support in (0, T) and zero mean.
#[derive(Debug, Clone)]
pub struct TestFunctionPhi {
    pub tau1: f64,
    pub tau2: f64,
    pub shape: PhiShape,
}

impl TestFunctionPhi {
    #[inline]
    pub fn eval(&self, t: f64) -> f64 {
        if t < self.tau1 || t > self.tau2 {
            return 0.0;
        }
        match self.shape {
            PhiShape::SineOnePeriod => {
                (2.0 * std::f64::consts::PI * (t - self.tau1) / (self.tau2 - self.tau1)).sin()
            }
        }
    }

    pub fn sup_norm(&self) -> f64 {
        match self.shape {
            PhiShape::SineOnePeriod => 1.0,
        }
    }

    /// Grid quadrature of phi over the given time nodes (mean-zero check).
    pub fn grid_mean(&self, t_nodes: &[f64]) -> f64 {
        let w = trapezoid_weights(t_nodes);
        t_nodes.iter().zip(&w).map(|(&t, &w)| w * self.eval(t)).sum()
    }
}

pub fn make_phi(tau1: f64, tau2: f64, shape: PhiShape, t_horizon: f64) -> Result<TestFunctionPhi, FourierError> {
    if !(tau1 > 0.0 && tau1 < tau2 && tau2 < t_horizon) {
        return Err(FourierError::InvalidInterval(tau1, tau2, t_horizon));
    }
    Ok(TestFunctionPhi { tau1, tau2, shape })
}

/// Uniform symmetric frequency grid: w on [-w_max, w_max], xi on
/// [-xi_max, xi_max]^d. Node counts are forced odd so 0 is always a node and
/// node pairs are exactly symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyGrid {
    pub w_nodes: Vec<f64>,
    pub xi_axes: Vec<Vec<f64>>,
}

impl FrequencyGrid {
    pub fn uniform(w_max: f64, n_w: usize, xi_max: f64, n_xi: usize, d: usize) -> Result<Self, FourierError> {
        if d == 0 || d > 2 {
            return Err(FourierError::ShapeError(format!("frequency grids support d in {{1, 2}}, got {d}")));
        }
        if n_w < 2 || n_xi < 2 || !(w_max > 0.0) || !(xi_max > 0.0) {
            return Err(FourierError::ShapeError("need n >= 2 nodes and positive extents".into()));
        }
        Ok(Self {
            w_nodes: symmetric_nodes(w_max, n_w),
            xi_axes: (0..d).map(|_| symmetric_nodes(xi_max, n_xi)).collect(),
        })
    }

    pub fn d(&self) -> usize {
        self.xi_axes.len()
    }

    pub fn n_xi(&self) -> usize {
        self.xi_axes.iter().map(|a| a.len()).product()
    }

    pub fn xi_node(&self, mut flat: usize, out: &mut [f64]) {
        for (axis, ax) in self.xi_axes.iter().enumerate().rev() {
            out[axis] = ax[flat % ax.len()];
            flat /= ax.len();
        }
    }

    /// Tensor trapezoid weights over the xi grid.
    pub fn xi_weights(&self) -> Vec<f64> {
        let per_axis: Vec<Vec<f64>> = self.xi_axes.iter().map(|a| trapezoid_weights(a)).collect();
        let mut out = vec![1.0; self.n_xi()];
        for (flat, w) in out.iter_mut().enumerate() {
            let mut rem = flat;
            for (axis, ax) in self.xi_axes.iter().enumerate().rev() {
                *w *= per_axis[axis][rem % ax.len()];
                rem /= ax.len();
            }
        }
        out
    }
}

fn symmetric_nodes(max: f64, count: usize) -> Vec<f64> {
    let half = if count % 2 == 0 { count / 2 } else { (count - 1) / 2 };
    let step = max / half as f64;
    (-(half as isize)..=half as isize).map(|k| k as f64 * step).collect()
}

/// Complex values on a frequency grid, possibly d-vector-valued per node.
#[derive(Debug, Clone)]
pub struct ComplexField {
    pub fgrid: Arc<FrequencyGrid>,
    pub ncomp: usize,
    /// indexed \[w\]\[xi_flat\]\[comp\]
    pub data: Vec<Complex64>,
}

impl ComplexField {
    pub fn zeros(fgrid: Arc<FrequencyGrid>, ncomp: usize) -> Self {
        let len = fgrid.w_nodes.len() * fgrid.n_xi() * ncomp;
        Self { fgrid, ncomp, data: vec![Complex64::new(0.0, 0.0); len] }
    }

    #[inline]
    pub fn idx(&self, iw: usize, ixi: usize, c: usize) -> usize {
        (iw * self.fgrid.n_xi() + ixi) * self.ncomp + c
    }

    #[inline]
    pub fn at(&self, iw: usize, ixi: usize, c: usize) -> Complex64 {
        self.data[self.idx(iw, ixi, c)]
    }
}

/// L_phi f = integral of f(t) phi(t) dt by trapezoid quadrature over the
/// field's time axis. `per_t_len` is the flattened length of one time slice.
pub fn l_phi(t_nodes: &[f64], values: &[f64], per_t_len: usize, phi: &TestFunctionPhi) -> Result<Vec<f64>, FourierError> {
    if per_t_len == 0 || values.len() != t_nodes.len() * per_t_len {
        return Err(FourierError::ShapeError(format!(
            "expected {} x {per_t_len} values, got {}",
            t_nodes.len(),
            values.len()
        )));
    }
    let w = trapezoid_weights(t_nodes);
    let mut out = vec![0.0; per_t_len];
    for (a, (&t, &wt)) in t_nodes.iter().zip(&w).enumerate() {
        let scale = wt * phi.eval(t);
        if scale == 0.0 {
            continue;
        }
        let slice = &values[a * per_t_len..(a + 1) * per_t_len];
        for (o, v) in out.iter_mut().zip(slice) {
            *o += scale * v;
        }
    }
    Ok(out)
}

/// F_I F_{R^d} of a (u, x)-field by staged direct quadrature. The input is
/// the zero extension of a field supported on u in [0, 1]; quadrature only
/// ever samples the grid's own u-nodes, which live inside [0, 1].
pub fn transform_ux_field(
    grid: &EvalGrid,
    values: &[f64],
    ncomp: usize,
    fgrid: &Arc<FrequencyGrid>,
) -> Result<ComplexField, FourierError> {
    let d = grid.d();
    if fgrid.d() != d {
        return Err(FourierError::GridMismatch(format!("grid d = {d}, frequency grid d = {}", fgrid.d())));
    }
    let n_u = grid.u_nodes.len();
    let n_x = grid.n_x();
    if values.len() != n_u * n_x * ncomp {
        return Err(FourierError::ShapeError(format!(
            "expected {} values, got {}",
            n_u * n_x * ncomp,
            values.len()
        )));
    }

    // stage 1: transform the state axes, innermost first
    let mut cur: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    match d {
        1 => {
            cur = dft_last_axis(&cur, n_u, &grid.x_axes[0], &fgrid.xi_axes[0], ncomp);
        }
        2 => {
            let rows = n_u * grid.x_axes[0].len();
            cur = dft_last_axis(&cur, rows, &grid.x_axes[1], &fgrid.xi_axes[1], ncomp);
            // now dims [u][x0][k1][c]; transform x0 by transposing blocks
            let n0 = grid.x_axes[0].len();
            let k1 = fgrid.xi_axes[1].len();
            let mut swapped = vec![Complex64::new(0.0, 0.0); n_u * k1 * n0 * ncomp];
            for b in 0..n_u {
                for i0 in 0..n0 {
                    for j1 in 0..k1 {
                        for c in 0..ncomp {
                            let src = ((b * n0 + i0) * k1 + j1) * ncomp + c;
                            let dst = ((b * k1 + j1) * n0 + i0) * ncomp + c;
                            swapped[dst] = cur[src];
                        }
                    }
                }
            }
            let transformed = dft_last_axis(&swapped, n_u * k1, &grid.x_axes[0], &fgrid.xi_axes[0], ncomp);
            // back to [u][k0][k1][c]
            let k0 = fgrid.xi_axes[0].len();
            let mut ordered = vec![Complex64::new(0.0, 0.0); n_u * k0 * k1 * ncomp];
            for b in 0..n_u {
                for j1 in 0..k1 {
                    for j0 in 0..k0 {
                        for c in 0..ncomp {
                            let src = ((b * k1 + j1) * k0 + j0) * ncomp + c;
                            let dst = ((b * k0 + j0) * k1 + j1) * ncomp + c;
                            ordered[dst] = transformed[src];
                        }
                    }
                }
            }
            cur = ordered;
        }
        _ => return Err(FourierError::ShapeError("transforms support d in {1, 2}".into())),
    }

    // stage 2: transform the index axis over the zero extension of [0, 1]
    let n_xi_total = fgrid.n_xi();
    let wu = trapezoid_weights(&grid.u_nodes);
    let mut out = ComplexField::zeros(Arc::clone(fgrid), ncomp);
    for (iw, &w) in fgrid.w_nodes.iter().enumerate() {
        for (b, (&u, &wt)) in grid.u_nodes.iter().zip(&wu).enumerate() {
            let phase = w * u;
            let e = Complex64::new(phase.cos(), -phase.sin()) * wt;
            let src = &cur[b * n_xi_total * ncomp..(b + 1) * n_xi_total * ncomp];
            let dst = &mut out.data[iw * n_xi_total * ncomp..(iw + 1) * n_xi_total * ncomp];
            for (dv, sv) in dst.iter_mut().zip(src) {
                *dv += e * sv;
            }
        }
    }
    Ok(out)
}

/// DFT along the last spatial axis: rows x nodes x ncomp -> rows x freqs x ncomp.
fn dft_last_axis(
    data: &[Complex64],
    rows: usize,
    nodes: &[f64],
    freqs: &[f64],
    ncomp: usize,
) -> Vec<Complex64> {
    let n = nodes.len();
    let weights = trapezoid_weights(nodes);
    let k = freqs.len();
    let mut out = vec![Complex64::new(0.0, 0.0); rows * k * ncomp];
    // precompute the twiddle table: freqs x nodes
    let mut table = Vec::with_capacity(k * n);
    for &f in freqs {
        for (&x, &w) in nodes.iter().zip(&weights) {
            let phase = f * x;
            table.push(Complex64::new(phase.cos(), -phase.sin()) * w);
        }
    }
    for r in 0..rows {
        let src = &data[r * n * ncomp..(r + 1) * n * ncomp];
        for (jk, row) in table.chunks(n).enumerate() {
            let dst_base = (r * k + jk) * ncomp;
            for c in 0..ncomp {
                let mut acc = Complex64::new(0.0, 0.0);
                for (i, tw) in row.iter().enumerate() {
                    acc += tw * src[i * ncomp + c];
                }
                out[dst_base + c] = acc;
            }
        }
    }
    out
}

/// T mu and T beta: L_phi over time, then F_{R^d} and F_I. Beta transforms
/// componentwise.
pub fn t_transform(
    fields: &Fields,
    phi: &TestFunctionPhi,
    fgrid: &Arc<FrequencyGrid>,
) -> Result<(ComplexField, ComplexField), FourierError> {
    let per_t = fields.grid.u_nodes.len() * fields.grid.n_x();
    let l_mu = l_phi(&fields.grid.t_nodes, &fields.mu, per_t, phi)?;
    let l_beta = l_phi(&fields.grid.t_nodes, &fields.beta, per_t * fields.d, phi)?;
    let t_mu = transform_ux_field(&fields.grid, &l_mu, 1, fgrid)?;
    let t_beta = transform_ux_field(&fields.grid, &l_beta, fields.d, fgrid)?;
    Ok((t_mu, t_beta))
}

/// Values of the truncated inverse index transform at a point u: one complex
/// value per (xi node, component), (1/2 pi) integral over the field's w-axis.
#[derive(Debug, Clone)]
pub struct XiProfile {
    pub ncomp: usize,
    /// indexed \[xi_flat\]\[comp\]
    pub data: Vec<Complex64>,
}

/// Debug/plotting serialization: one CSV row per (w, xi, component) with
/// columns (w, xi..., comp, re, im).
pub fn complex_field_csv(field: &ComplexField) -> String {
    let d = field.fgrid.d();
    let mut header: Vec<String> = vec!["w".into()];
    for axis in 0..d {
        header.push(format!("xi{}", axis + 1));
    }
    header.push("comp".into());
    header.push("re".into());
    header.push("im".into());
    let mut out = header.join(",");
    out.push('\n');
    let n_xi = field.fgrid.n_xi();
    let mut xi = vec![0.0; d];
    for (iw, &w) in field.fgrid.w_nodes.iter().enumerate() {
        for jx in 0..n_xi {
            field.fgrid.xi_node(jx, &mut xi);
            for c in 0..field.ncomp {
                let z = field.at(iw, jx, c);
                let mut row = vec![crate::csvio::format_f64(w)];
                row.extend(xi.iter().map(|&v| crate::csvio::format_f64(v)));
                row.push(c.to_string());
                row.push(crate::csvio::format_f64(z.re));
                row.push(crate::csvio::format_f64(z.im));
                out.push_str(&row.join(","));
                out.push('\n');
            }
        }
    }
    out
}

pub fn inverse_f_i_at(field: &ComplexField, u: f64) -> XiProfile {
    let fgrid = &field.fgrid;
    let n_xi = fgrid.n_xi();
    let ncomp = field.ncomp;
    let ws = trapezoid_weights(&fgrid.w_nodes);
    let mut data = vec![Complex64::new(0.0, 0.0); n_xi * ncomp];
    for (iw, (&w, &wt)) in fgrid.w_nodes.iter().zip(&ws).enumerate() {
        let phase = u * w;
        let e = Complex64::new(phase.cos(), phase.sin()) * (wt / (2.0 * std::f64::consts::PI));
        let src = &field.data[iw * n_xi * ncomp..(iw + 1) * n_xi * ncomp];
        for (dv, sv) in data.iter_mut().zip(src) {
            *dv += e * sv;
        }
    }
    XiProfile { ncomp, data }
}
