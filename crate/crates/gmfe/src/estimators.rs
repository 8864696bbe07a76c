//! Plug-in estimators built from kernel interpolation of the empirical data:
//! the density `mu_hat`, the drift-density product `pi_hat` (a discretized
//! kernel-weighted stochastic integral, left-endpoint evaluation), and the
//! drift `beta_hat = pi_hat / (mu_hat v kappa2)`.
//!
//! Grid evaluation produces all three fields at once; a per-step scatter
//! pass over the trajectory makes the stochastic-integral field linear in
//! the number of observed increments rather than in (nodes x increments).

use rayon::prelude::*;
use thiserror::Error;

use crate::kernels::{dilate_h, Bandwidths, KernelTriple};
use crate::numerics::CompensatedSum;
use crate::simulator::TrajectorySet;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("time {0} outside [0, {1}]")]
    TimeOutOfRange(f64, f64),
    #[error("time {t0} violates the H-support window [{lo}, {hi}]")]
    SupportError { t0: f64, lo: f64, hi: f64 },
    #[error("index u = {0} outside [0, 1]")]
    IndexOutOfRange(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("grid error: {0}")]
    GridError(String),
}

/// Denominator floors and truncation radii from
/// theta = (h1, h2, h3, kappa0, kappa1, kappa2, r, r_tilde).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cutoffs {
    pub kappa0: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub r: f64,
    pub r_tilde: f64,
}

impl Cutoffs {
    pub fn new(kappa0: f64, kappa1: f64, kappa2: f64, r: f64, r_tilde: f64) -> Result<Self, EstimatorError> {
        for (name, v) in [("kappa0", kappa0), ("kappa1", kappa1), ("kappa2", kappa2), ("r", r), ("r_tilde", r_tilde)] {
            if !(v > 0.0) {
                return Err(EstimatorError::GridError(format!("{name} must be strictly positive, got {v}")));
            }
        }
        Ok(Self { kappa0, kappa1, kappa2, r, r_tilde })
    }

    /// The convergence theory wants kappa0 < g0 ||F||_2; advisory only,
    /// since ||F||_2 is computable and the estimator runs either way.
    pub fn kappa0_advisory(&self, g0: f64, f_l2: f64) -> Option<String> {
        if self.kappa0 >= g0 * f_l2 {
            Some(format!(
                "kappa0 = {:.3e} is not below g0 ||F||_2 = {:.3e}; the denominator cutoff may dominate",
                self.kappa0,
                g0 * f_l2
            ))
        } else {
            None
        }
    }
}

/// Tensor evaluation grid: time nodes, index nodes, and per-axis state nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalGrid {
    pub t_nodes: Vec<f64>,
    pub u_nodes: Vec<f64>,
    pub x_axes: Vec<Vec<f64>>,
}

impl EvalGrid {
    pub fn uniform(
        t: (f64, f64, usize),
        u: (f64, f64, usize),
        x: (f64, f64, usize),
        d: usize,
    ) -> Result<Self, EstimatorError> {
        if d == 0 || d > 2 {
            return Err(EstimatorError::GridError(format!("grid evaluation supports d in {{1, 2}}, got {d}")));
        }
        Ok(Self {
            t_nodes: linspace(t.0, t.1, t.2),
            u_nodes: linspace(u.0, u.1, u.2),
            x_axes: (0..d).map(|_| linspace(x.0, x.1, x.2)).collect(),
        })
    }

    pub fn d(&self) -> usize {
        self.x_axes.len()
    }

    pub fn n_x(&self) -> usize {
        self.x_axes.iter().map(|a| a.len()).product()
    }

    pub fn n_nodes(&self) -> usize {
        self.t_nodes.len() * self.u_nodes.len() * self.n_x()
    }

    /// Decode a flat x index into coordinates (row-major over axes).
    pub fn x_node(&self, mut flat: usize, out: &mut [f64]) {
        for (axis, ax) in self.x_axes.iter().enumerate().rev() {
            out[axis] = ax[flat % ax.len()];
            flat /= ax.len();
        }
    }

    pub fn x_sup_norm(&self, flat: usize) -> f64 {
        let mut buf = [0.0; 2];
        let d = self.d();
        self.x_node(flat, &mut buf[..d]);
        buf[..d].iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Time nodes must keep the H window inside [0, T] for pi-type sums.
    pub fn check_pi_window(&self, h1: f64, t_horizon: f64) -> Result<(), EstimatorError> {
        for &t in &self.t_nodes {
            if t < h1 - 1e-12 || t > t_horizon - h1 + 1e-12 {
                return Err(EstimatorError::SupportError { t0: t, lo: h1, hi: t_horizon - h1 });
            }
        }
        Ok(())
    }
}

pub fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let step = (hi - lo) / (count - 1) as f64;
    (0..count).map(|k| lo + k as f64 * step).collect()
}

/// Particle index window (0-based, half-open) covering |u0 - (i+1)/n| <= h2,
/// padded by one node so boundary cases fall to the kernel's own zero.
#[inline]
fn particle_window(n: usize, u0: f64, h2: f64) -> (usize, usize) {
    let lo = ((u0 - h2) * n as f64).floor() as isize - 1;
    let hi = ((u0 + h2) * n as f64).ceil() as isize + 1;
    (lo.clamp(0, n as isize) as usize, hi.clamp(0, n as isize) as usize)
}

/// Density estimator at a point; t0 snaps to the nearest trajectory node
/// (tolerance dt/2).
pub fn mu_hat(
    traj: &TrajectorySet,
    triple: &KernelTriple,
    t0: f64,
    u0: f64,
    x0: &[f64],
    h: &Bandwidths,
) -> Result<f64, EstimatorError> {
    if !(0.0..=1.0).contains(&u0) {
        return Err(EstimatorError::IndexOutOfRange(u0));
    }
    let k = snap_checked(traj, t0)?;
    if x0.len() != traj.d {
        return Err(EstimatorError::DimensionMismatch { expected: traj.d, got: x0.len() });
    }
    Ok(mu_hat_at_node(traj, triple, k, u0, x0, h))
}

/// Density estimator at trajectory node `k`, with the index argument
/// unrestricted. Mass-conservation diagnostics integrate this over the
/// R-extension of the index variable, where the [0, 1] clamp of `mu_hat`
/// would bite.
pub fn mu_hat_at_node(
    traj: &TrajectorySet,
    triple: &KernelTriple,
    k: usize,
    u0: f64,
    x0: &[f64],
    h: &Bandwidths,
) -> f64 {
    let n = traj.n;
    let d = traj.d;
    let (lo, hi) = particle_window(n, u0, h.h2);
    let state = traj.state(k);
    let mut acc = CompensatedSum::new();
    let inv_h2 = 1.0 / h.h2;
    let inv_h3 = 1.0 / h.h3;
    let k_norm = h.h3.powi(d as i32);
    for i in lo..hi {
        let u_i = (i + 1) as f64 / n as f64;
        let j = triple.eval_j((u0 - u_i) * inv_h2);
        if j == 0.0 {
            continue;
        }
        let xi = &state[i * d..(i + 1) * d];
        let mut kv = 1.0;
        for c in 0..d {
            kv *= triple.k_factor.eval((x0[c] - xi[c]) * inv_h3);
            if kv == 0.0 {
                break;
            }
        }
        if kv == 0.0 {
            continue;
        }
        acc.add(j * kv);
    }
    acc.value() * inv_h2 / k_norm / n as f64
}

fn snap_checked(traj: &TrajectorySet, t0: f64) -> Result<usize, EstimatorError> {
    let t_max = traj.grid.t_horizon;
    if !t0.is_finite() || t0 < 0.0 || t0 > t_max {
        return Err(EstimatorError::TimeOutOfRange(t0, t_max));
    }
    Ok(traj.grid.snap(t0))
}

/// Drift-density product estimator: discretized Ito sum with left-endpoint
/// kernel weights over increments X(t_{k+1}) - X(t_k).
pub fn pi_hat(
    traj: &TrajectorySet,
    triple: &KernelTriple,
    t0: f64,
    u0: f64,
    x0: &[f64],
    h: &Bandwidths,
) -> Result<Vec<f64>, EstimatorError> {
    if !(0.0..=1.0).contains(&u0) {
        return Err(EstimatorError::IndexOutOfRange(u0));
    }
    if x0.len() != traj.d {
        return Err(EstimatorError::DimensionMismatch { expected: traj.d, got: x0.len() });
    }
    let t_max = traj.grid.t_horizon;
    if t0 < h.h1 - 1e-12 || t0 > t_max - h.h1 + 1e-12 {
        return Err(EstimatorError::SupportError { t0, lo: h.h1, hi: t_max - h.h1 });
    }
    let n = traj.n;
    let d = traj.d;
    let dt = traj.grid.dt();
    let m = traj.grid.steps;
    let k_lo = ((t0 - h.h1) / dt).floor().max(0.0) as usize;
    let k_hi = ((((t0 + h.h1) / dt).ceil()).max(0.0) as usize).min(m - 1);
    let (p_lo, p_hi) = particle_window(n, u0, h.h2);
    let inv_h2 = 1.0 / h.h2;
    let inv_h3 = 1.0 / h.h3;
    let k_norm = h.h3.powi(d as i32);
    let mut acc: Vec<CompensatedSum> = vec![CompensatedSum::new(); d];
    for k in k_lo..=k_hi {
        let w_t = dilate_h(triple, h.h1, t0 - traj.grid.node(k));
        if w_t == 0.0 {
            continue;
        }
        let state = traj.state(k);
        let next = traj.state(k + 1);
        for i in p_lo..p_hi {
            let u_i = (i + 1) as f64 / n as f64;
            let j = triple.eval_j((u0 - u_i) * inv_h2);
            if j == 0.0 {
                continue;
            }
            let xi = &state[i * d..(i + 1) * d];
            let mut kv = 1.0;
            for c in 0..d {
                kv *= triple.k_factor.eval((x0[c] - xi[c]) * inv_h3);
                if kv == 0.0 {
                    break;
                }
            }
            if kv == 0.0 {
                continue;
            }
            let w = w_t * j * inv_h2 * kv / k_norm;
            let xn = &next[i * d..(i + 1) * d];
            for c in 0..d {
                acc[c].add(w * (xn[c] - xi[c]));
            }
        }
    }
    Ok(acc.into_iter().map(|a| a.value() / n as f64).collect())
}

/// Drift estimator: pi_hat / (mu_hat v kappa2), componentwise over the
/// scalar denominator.
pub fn beta_hat(
    traj: &TrajectorySet,
    triple: &KernelTriple,
    t0: f64,
    u0: f64,
    x0: &[f64],
    h: &Bandwidths,
    kappa2: f64,
) -> Result<Vec<f64>, EstimatorError> {
    let pi = pi_hat(traj, triple, t0, u0, x0, h)?;
    let mu = mu_hat(traj, triple, t0, u0, x0, h)?;
    let denom = mu.max(kappa2);
    Ok(pi.into_iter().map(|p| p / denom).collect())
}

/// mu, pi, and beta sampled on an evaluation grid, truncated to the
/// sup-norm ball of radius `cutoffs.r` in the state variable.
#[derive(Debug, Clone)]
pub struct Fields {
    pub grid: EvalGrid,
    pub d: usize,
    /// density, indexed \[t\]\[u\]\[x\]
    pub mu: Vec<f64>,
    /// drift-density product, indexed \[t\]\[u\]\[x\]\[comp\]
    pub pi: Vec<f64>,
    /// drift, indexed \[t\]\[u\]\[x\]\[comp\]
    pub beta: Vec<f64>,
}

impl Fields {
    #[inline]
    pub fn idx3(&self, a: usize, b: usize, c: usize) -> usize {
        (a * self.grid.u_nodes.len() + b) * self.grid.n_x() + c
    }
}

struct AxisWindow {
    start: usize,
    weights: Vec<f64>,
}

fn axis_window(nodes: &[f64], center: f64, h3: f64, factor: &crate::kernels::Kernel1, out: &mut AxisWindow) {
    let lo = nodes.partition_point(|&v| v < center - h3);
    let hi = nodes.partition_point(|&v| v <= center + h3);
    out.start = lo;
    out.weights.clear();
    for &v in &nodes[lo..hi] {
        out.weights.push(factor.eval((v - center) / h3));
    }
}

pub fn fields_on_grid(
    traj: &TrajectorySet,
    triple: &KernelTriple,
    grid: &EvalGrid,
    h: &Bandwidths,
    cutoffs: &Cutoffs,
) -> Result<Fields, EstimatorError> {
    let d = traj.d;
    if grid.d() != d {
        return Err(EstimatorError::DimensionMismatch { expected: d, got: grid.d() });
    }
    if d > 2 {
        return Err(EstimatorError::GridError("grid evaluation supports d in {1, 2}".into()));
    }
    for &u in &grid.u_nodes {
        if !(0.0..=1.0).contains(&u) {
            return Err(EstimatorError::IndexOutOfRange(u));
        }
    }
    grid.check_pi_window(h.h1, traj.grid.t_horizon)?;

    let n_t = grid.t_nodes.len();
    let n_u = grid.u_nodes.len();
    let n_x = grid.n_x();
    let n = traj.n;
    let inv_n = 1.0 / n as f64;
    let inv_h2 = 1.0 / h.h2;
    let k_norm = h.h3.powi(d as i32);

    // mu: one snapshot per time node, parallel over time nodes
    let mu_slabs: Vec<Vec<f64>> = grid
        .t_nodes
        .par_iter()
        .map(|&t_a| {
            let k = traj.grid.snap(t_a);
            let state = traj.state(k);
            let mut slab = vec![0.0; n_u * n_x];
            scatter_jk(traj, triple, grid, h, state, None, 1, &mut slab);
            for v in slab.iter_mut() {
                *v *= inv_n * inv_h2 / k_norm;
            }
            slab
        })
        .collect();

    // pi: scatter increments per step, H-accumulate into time nodes.
    // Steps are processed in fixed blocks and the block partials summed in
    // block order, so the result is deterministic under any scheduling.
    let m = traj.grid.steps;
    let dt = traj.grid.dt();
    let t_lo = grid.t_nodes.first().copied().unwrap_or(0.0) - h.h1;
    let t_hi = grid.t_nodes.last().copied().unwrap_or(0.0) + h.h1;
    let k_lo = (t_lo / dt).floor().max(0.0) as usize;
    let k_hi = ((t_hi / dt).ceil().max(0.0) as usize).min(m.saturating_sub(1));

    let blocks: Vec<(usize, usize)> = split_blocks(k_lo, k_hi + 1, 16);
    let pi_partials: Vec<Vec<f64>> = blocks
        .par_iter()
        .map(|&(b_lo, b_hi)| {
            let mut pi_slab = vec![0.0; n_t * n_u * n_x * d];
            let mut s_k = vec![0.0; n_u * n_x * d];
            for k in b_lo..b_hi {
                let t_k = traj.grid.node(k);
                let reach: Vec<(usize, f64)> = grid
                    .t_nodes
                    .iter()
                    .enumerate()
                    .filter_map(|(a, &t_a)| {
                        let w = dilate_h(triple, h.h1, t_a - t_k);
                        (w != 0.0).then_some((a, w))
                    })
                    .collect();
                if reach.is_empty() {
                    continue;
                }
                s_k.iter_mut().for_each(|v| *v = 0.0);
                let state = traj.state(k);
                let next = traj.state(k + 1);
                scatter_jk(traj, triple, grid, h, state, Some(next), d, &mut s_k);
                for &(a, w_t) in &reach {
                    let dst = &mut pi_slab[a * n_u * n_x * d..(a + 1) * n_u * n_x * d];
                    for (dv, sv) in dst.iter_mut().zip(&s_k) {
                        *dv += w_t * sv;
                    }
                }
            }
            pi_slab
        })
        .collect();

    let mut pi = vec![0.0; n_t * n_u * n_x * d];
    for partial in &pi_partials {
        for (dst, src) in pi.iter_mut().zip(partial) {
            *dst += src;
        }
    }
    for v in pi.iter_mut() {
        *v *= inv_n * inv_h2 / k_norm;
    }

    // assemble, truncate at sup-norm radius r, divide
    let mut mu = vec![0.0; n_t * n_u * n_x];
    for (a, slab) in mu_slabs.into_iter().enumerate() {
        mu[a * n_u * n_x..(a + 1) * n_u * n_x].copy_from_slice(&slab);
    }
    let outside: Vec<bool> = (0..n_x).map(|c| grid.x_sup_norm(c) > cutoffs.r).collect();
    let mut beta = vec![0.0; n_t * n_u * n_x * d];
    for a in 0..n_t {
        for b in 0..n_u {
            for c in 0..n_x {
                let i3 = (a * n_u + b) * n_x + c;
                if outside[c] {
                    mu[i3] = 0.0;
                    for comp in 0..d {
                        pi[i3 * d + comp] = 0.0;
                    }
                    continue;
                }
                let denom = mu[i3].max(cutoffs.kappa2);
                for comp in 0..d {
                    beta[i3 * d + comp] = pi[i3 * d + comp] / denom;
                }
            }
        }
    }

    Ok(Fields { grid: grid.clone(), d, mu, pi, beta })
}

/// Scatter one snapshot through J (x) K onto the (u, x) grid. With
/// `increments_to` given, kernel weights multiply the particle increment and
/// the slab holds `ncomp` components per node; otherwise the slab is scalar.
fn scatter_jk(
    traj: &TrajectorySet,
    triple: &KernelTriple,
    grid: &EvalGrid,
    h: &Bandwidths,
    state: &[f64],
    increments_to: Option<&[f64]>,
    ncomp: usize,
    slab: &mut [f64],
) {
    let n = traj.n;
    let d = traj.d;
    let n_x = grid.n_x();
    let mut ax0 = AxisWindow { start: 0, weights: Vec::new() };
    let mut ax1 = AxisWindow { start: 0, weights: Vec::new() };
    let u_nodes = &grid.u_nodes;
    for i in 0..n {
        let u_i = (i + 1) as f64 / n as f64;
        let bu_lo = u_nodes.partition_point(|&v| v < u_i - h.h2);
        let bu_hi = u_nodes.partition_point(|&v| v <= u_i + h.h2);
        if bu_lo >= bu_hi {
            continue;
        }
        let xi = &state[i * d..(i + 1) * d];
        axis_window(&grid.x_axes[0], xi[0], h.h3, &triple.k_factor, &mut ax0);
        if ax0.weights.is_empty() {
            continue;
        }
        if d == 2 {
            axis_window(&grid.x_axes[1], xi[1], h.h3, &triple.k_factor, &mut ax1);
            if ax1.weights.is_empty() {
                continue;
            }
        }
        let inc: Option<&[f64]> = increments_to.map(|next| &next[i * d..(i + 1) * d]);
        for b in bu_lo..bu_hi {
            let j = triple.eval_j((u_nodes[b] - u_i) / h.h2);
            if j == 0.0 {
                continue;
            }
            match d {
                1 => {
                    for (off0, w0) in ax0.weights.iter().enumerate() {
                        let w = j * w0;
                        if w == 0.0 {
                            continue;
                        }
                        let base = (b * n_x + ax0.start + off0) * ncomp;
                        match inc {
                            None => slab[base] += w,
                            Some(nx) => {
                                for c in 0..ncomp {
                                    slab[base + c] += w * (nx[c] - xi[c]);
                                }
                            }
                        }
                    }
                }
                2 => {
                    let len1 = grid.x_axes[1].len();
                    for (off0, w0) in ax0.weights.iter().enumerate() {
                        for (off1, w1) in ax1.weights.iter().enumerate() {
                            let w = j * w0 * w1;
                            if w == 0.0 {
                                continue;
                            }
                            let node = (ax0.start + off0) * len1 + (ax1.start + off1);
                            let base = (b * n_x + node) * ncomp;
                            match inc {
                                None => slab[base] += w,
                                Some(nx) => {
                                    for c in 0..ncomp {
                                        slab[base + c] += w * (nx[c] - xi[c]);
                                    }
                                }
                            }
                        }
                    }
                }
                _ => unreachable!("d checked <= 2"),
            }
        }
    }
}

fn split_blocks(lo: usize, hi: usize, blocks: usize) -> Vec<(usize, usize)> {
    if hi <= lo {
        return vec![];
    }
    let total = hi - lo;
    let per = total.div_ceil(blocks);
    (0..blocks)
        .filter_map(|b| {
            let s = lo + b * per;
            if s >= hi {
                None
            } else {
                Some((s, (s + per).min(hi)))
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{dilate_j, dilate_k};
    use crate::model::{builtins, InitialLawSpec};
    use crate::numerics::{mean_stderr, trapezoid_weights};
    use crate::simulator::{simulate, TimeGrid};

    fn biweight() -> KernelTriple {
        KernelTriple::biweight()
    }

    #[test]
    fn mu_single_particle_matches_direct_formula() {
        // one particle frozen at y: mu_hat = J_{h2}(u0 - 1) K_{h3}(x0 - y)
        let spec = builtins::ou_system(1.0, 1.0, 0.0, InitialLawSpec::point(0.7));
        let mut spec = spec;
        spec.drift.v = crate::model::ForceField::Zero;
        let traj = simulate(&spec, 1, TimeGrid::new(1.0, 10).unwrap(), 3).unwrap();
        let h = Bandwidths::new(0.2, 0.6, 0.5).unwrap();
        let t = biweight();
        let got = mu_hat(&traj, &t, 0.5, 0.8, &[0.5], &h).unwrap();
        let expect = dilate_j(&t, h.h2, 0.8 - 1.0) * dilate_k(&t, h.h3, &[0.5 - 0.7]);
        assert!((got - expect).abs() < 1e-15, "{got} vs {expect}");
    }

    #[test]
    fn mu_all_particles_at_x0_matches_independent_sum() {
        let mut spec = builtins::ou_system(1.0, 1.0, 0.0, InitialLawSpec::point(0.0));
        spec.drift.v = crate::model::ForceField::Zero;
        let n = 50;
        let traj = simulate(&spec, n, TimeGrid::new(1.0, 5).unwrap(), 3).unwrap();
        let h = Bandwidths::new(0.2, 1.5, 0.3).unwrap();
        let t = biweight();
        let got = mu_hat(&traj, &t, 1.0, 0.5, &[0.0], &h).unwrap();
        let mut acc = 0.0;
        for i in 0..n {
            let u_i = (i + 1) as f64 / n as f64;
            acc += dilate_j(&t, h.h2, 0.5 - u_i);
        }
        let expect = acc / n as f64 * dilate_k(&t, h.h3, &[0.0]);
        assert!((got - expect).abs() < 1e-13 * expect.abs().max(1.0));
    }

    #[test]
    fn mu_matches_stationary_ou_density() {
        // OU started at stationarity: density N(0, 1/2) for sigma = 1
        let std_stat = (0.5f64).sqrt();
        let spec = builtins::ou_system(1.0, 1.0, 1.0, InitialLawSpec::gaussian(0.0, std_stat));
        let n = 4000;
        let h_val = (n as f64).powf(-0.25);
        let h = Bandwidths::new(h_val, h_val, h_val).unwrap();
        let t = biweight();
        let grid = TimeGrid::new(1.0, 500).unwrap();
        let mut errs = Vec::new();
        for seed in 0..20 {
            let traj = simulate(&spec, n, grid, 500 + seed).unwrap();
            let got = mu_hat(&traj, &t, 1.0, 0.5, &[0.0], &h).unwrap();
            let oracle = 1.0 / (std_stat * (2.0 * std::f64::consts::PI).sqrt());
            errs.push((got - oracle).abs());
        }
        let (mean_err, _) = mean_stderr(&errs);
        assert!(mean_err <= 0.05, "mean |mu_hat - oracle| = {mean_err}");
    }

    #[test]
    fn mu_rejects_out_of_range_time() {
        let spec = builtins::ou_system(1.0, 1.0, 0.0, InitialLawSpec::point(0.0));
        let traj = simulate(&spec, 2, TimeGrid::new(1.0, 4).unwrap(), 3).unwrap();
        let h = Bandwidths::new(0.2, 0.2, 0.2).unwrap();
        assert!(matches!(
            mu_hat(&traj, &biweight(), 1.5, 0.5, &[0.0], &h),
            Err(EstimatorError::TimeOutOfRange(..))
        ));
    }

    #[test]
    fn mu_is_local_in_far_particles() {
        let spec = builtins::ou_system(1.0, 1.0, 1.0, InitialLawSpec::gaussian(0.0, 0.5));
        let traj = simulate(&spec, 100, TimeGrid::new(1.0, 50).unwrap(), 11).unwrap();
        let h = Bandwidths::new(0.2, 0.15, 0.3).unwrap();
        let t = biweight();
        let before = mu_hat(&traj, &t, 0.5, 0.5, &[0.2], &h).unwrap();
        // perturb a particle with |u0 - u_i| > h2 (u_i = 0.9 -> i = 89)
        let mut tam = traj.clone();
        let k = tam.grid.snap(0.5);
        let n = tam.n;
        tam.positions_raw_mut()[k * n + 89] += 100.0;
        let after = mu_hat(&tam, &t, 0.5, 0.5, &[0.2], &h).unwrap();
        assert_eq!(before.to_bits(), after.to_bits());
    }

    #[test]
    fn pi_zero_increments_give_zero() {
        let mut spec = builtins::ou_system(1.0, 1.0, 0.0, InitialLawSpec::point(0.3));
        spec.drift.v = crate::model::ForceField::Zero;
        let traj = simulate(&spec, 10, TimeGrid::new(1.0, 100).unwrap(), 3).unwrap();
        let h = Bandwidths::new(0.2, 0.3, 0.5).unwrap();
        let pi = pi_hat(&traj, &biweight(), 0.5, 0.5, &[0.3], &h).unwrap();
        assert_eq!(pi[0], 0.0);
    }

    #[test]
    fn pi_support_error_near_boundary() {
        let spec = builtins::ou_system(1.0, 1.0, 0.0, InitialLawSpec::point(0.3));
        let traj = simulate(&spec, 4, TimeGrid::new(1.0, 50).unwrap(), 3).unwrap();
        let h = Bandwidths::new(0.3, 0.3, 0.5).unwrap();
        assert!(matches!(
            pi_hat(&traj, &biweight(), 0.1, 0.5, &[0.0], &h),
            Err(EstimatorError::SupportError { .. })
        ));
    }

    #[test]
    fn pi_is_antisymmetric_in_increments() {
        // pi_hat is linear in the increments: negating every increment while
        // keeping the left endpoints negates the estimator exactly.
        let spec = builtins::ou_system(1.0, 0.8, 1.0, InitialLawSpec::gaussian(0.0, 0.4));
        let traj = simulate(&spec, 60, TimeGrid::new(1.0, 200).unwrap(), 21).unwrap();
        let h = Bandwidths::new(0.25, 0.3, 0.5).unwrap();
        let t = biweight();
        let pi = pi_hat(&traj, &t, 0.5, 0.5, &[0.0], &h).unwrap();
        let dt = traj.grid.dt();
        let n = traj.n;
        let mut forward = 0.0;
        let mut reversed = 0.0;
        for k in 0..traj.grid.steps {
            let w_t = dilate_h(&t, h.h1, 0.5 - k as f64 * dt);
            if w_t == 0.0 {
                continue;
            }
            for i in 0..n {
                let u_i = (i + 1) as f64 / n as f64;
                let j = dilate_j(&t, h.h2, 0.5 - u_i);
                if j == 0.0 {
                    continue;
                }
                let xi = traj.position(k, i)[0];
                let kv = dilate_k(&t, h.h3, &[0.0 - xi]);
                if kv == 0.0 {
                    continue;
                }
                let inc = traj.position(k + 1, i)[0] - xi;
                forward += w_t * j * kv * inc;
                reversed += w_t * j * kv * (-inc);
            }
        }
        assert!((forward / n as f64 - pi[0]).abs() <= 1e-10 * pi[0].abs().max(1e-9), "independent sum mismatch");
        assert!((forward + reversed).abs() < 1e-12);
    }

    #[test]
    fn pi_matches_riemann_oracle_on_deterministic_system() {
        // sigma = 0 two-particle linear system: increments equal Y_i dt
        // exactly under Euler, so pi_hat is a left Riemann sum of the
        // analytic integrand up to O(dt) position drift.
        let mut spec = builtins::interacting_system(1.0, 1.0, 10.0, 0.0, InitialLawSpec::point(0.0));
        spec.initial = InitialLawSpec::new(crate::model::InitialLaw::Custom {
            tag: "pm1".into(),
            sampler: std::sync::Arc::new(|u, _s, out| out[0] = if u <= 0.5 { 1.0 } else { -1.0 }),
            density: None,
        });
        let steps = 20_000;
        let traj = simulate(&spec, 2, TimeGrid::new(1.0, steps).unwrap(), 0).unwrap();
        let h = Bandwidths::new(0.3, 0.6, 0.7).unwrap();
        let t = biweight();
        let (t0, u0, x0) = (0.5, 0.75, 0.4);
        let got = pi_hat(&traj, &t, t0, u0, &[x0], &h).unwrap()[0];
        // analytic: x1(t) = e^{-t}, x2 = -e^{-t}, Y_1 = -e^{-t}, Y_2 = e^{-t}
        let oracle = crate::numerics::simpson(
            |s| {
                let x1 = (-s).exp();
                let f1 = dilate_j(&t, h.h2, u0 - 0.5) * dilate_k(&t, h.h3, &[x0 - x1]) * (-x1);
                let f2 = dilate_j(&t, h.h2, u0 - 1.0) * dilate_k(&t, h.h3, &[x0 + x1]) * x1;
                dilate_h(&t, h.h1, t0 - s) * 0.5 * (f1 + f2)
            },
            t0 - h.h1,
            t0 + h.h1,
            1 << 14,
        );
        let tol = 50.0 / steps as f64;
        assert!((got - oracle).abs() <= tol, "pi {got} vs oracle {oracle}, tol {tol}");
    }

    #[test]
    fn beta_cutoff_activates_in_empty_regions() {
        let spec = builtins::ou_system(1.0, 1.0, 1.0, InitialLawSpec::gaussian(0.0, 0.2));
        let traj = simulate(&spec, 50, TimeGrid::new(1.0, 100).unwrap(), 9).unwrap();
        let h = Bandwidths::new(0.2, 0.3, 0.1).unwrap();
        let t = biweight();
        let x_far = [55.0];
        let mu = mu_hat(&traj, &t, 0.5, 0.5, &x_far, &h).unwrap();
        assert_eq!(mu, 0.0);
        let pi = pi_hat(&traj, &t, 0.5, 0.5, &x_far, &h).unwrap();
        let beta = beta_hat(&traj, &t, 0.5, 0.5, &x_far, &h, 1e-3).unwrap();
        assert_eq!(beta[0], pi[0] / 1e-3);
    }

    #[test]
    fn beta_times_denominator_recovers_pi() {
        let spec = builtins::ou_system(1.0, 1.0, 1.0, InitialLawSpec::gaussian(0.0, 0.5));
        let traj = simulate(&spec, 200, TimeGrid::new(1.0, 200).unwrap(), 31).unwrap();
        let h = Bandwidths::new(0.25, 0.25, 0.35).unwrap();
        let t = biweight();
        let kappa2 = 1e-3;
        for &(t0, u0, x0) in &[(0.5, 0.5, 0.0), (0.4, 0.3, 0.5), (0.6, 0.8, -0.4)] {
            let mu = mu_hat(&traj, &t, t0, u0, &[x0], &h).unwrap();
            let pi = pi_hat(&traj, &t, t0, u0, &[x0], &h).unwrap();
            let beta = beta_hat(&traj, &t, t0, u0, &[x0], &h, kappa2).unwrap();
            let back = beta[0] * mu.max(kappa2);
            assert!((back - pi[0]).abs() <= 1e-12 * pi[0].abs().max(1e-300), "{back} vs {}", pi[0]);
        }
    }

    #[test]
    fn ou_beta_is_close_to_true_drift() {
        // F = 0, V = -x, g constant 1: beta(t, u, x) = -x
        let spec = builtins::ou_system(1.0, 1.0, 1.0, InitialLawSpec::gaussian(0.0, (0.5f64).sqrt()));
        let n = 4000;
        let grid = TimeGrid::new(1.0, 1000).unwrap();
        let h = Bandwidths::new(0.25, 0.25, 0.25).unwrap();
        let t = biweight();
        let (t0, u0, x0) = (0.5, 0.5, 0.5);
        let mut errs = Vec::new();
        for seed in 0..20 {
            let traj = simulate(&spec, n, grid, 900 + seed).unwrap();
            let beta = beta_hat(&traj, &t, t0, u0, &[x0], &h, 1e-3).unwrap();
            errs.push((beta[0] - (-x0)).abs());
        }
        let (mean_err, se) = mean_stderr(&errs);
        assert!(mean_err <= 0.1, "mean |beta_hat + x0| = {mean_err} (se {se})");
    }

    #[test]
    fn fields_match_pointwise_ops_on_single_node() {
        let spec = builtins::ou_system(1.0, 0.9, 1.0, InitialLawSpec::gaussian(0.0, 0.5));
        let traj = simulate(&spec, 150, TimeGrid::new(1.0, 300).unwrap(), 17).unwrap();
        let h = Bandwidths::new(0.2, 0.25, 0.3).unwrap();
        let cut = Cutoffs::new(1.0, 0.1, 1e-3, 3.0, 50.0).unwrap();
        let grid = EvalGrid { t_nodes: vec![0.5], u_nodes: vec![0.45], x_axes: vec![vec![0.2]] };
        let t = biweight();
        let fields = fields_on_grid(&traj, &t, &grid, &h, &cut).unwrap();
        let mu = mu_hat(&traj, &t, 0.5, 0.45, &[0.2], &h).unwrap();
        let pi = pi_hat(&traj, &t, 0.5, 0.45, &[0.2], &h).unwrap();
        let beta = beta_hat(&traj, &t, 0.5, 0.45, &[0.2], &h, cut.kappa2).unwrap();
        assert!((fields.mu[0] - mu).abs() <= 1e-12 * mu.abs().max(1e-12), "{} vs {mu}", fields.mu[0]);
        assert!((fields.pi[0] - pi[0]).abs() <= 1e-12 * pi[0].abs().max(1e-12));
        assert!((fields.beta[0] - beta[0]).abs() <= 1e-12 * beta[0].abs().max(1e-12));
    }

    #[test]
    fn fields_truncate_outside_r() {
        let spec = builtins::ou_system(1.0, 0.9, 1.0, InitialLawSpec::gaussian(0.0, 0.5));
        let traj = simulate(&spec, 50, TimeGrid::new(1.0, 100).unwrap(), 17).unwrap();
        let h = Bandwidths::new(0.2, 0.25, 0.3).unwrap();
        let cut = Cutoffs::new(1.0, 0.1, 1e-3, 0.5, 50.0).unwrap();
        let grid = EvalGrid::uniform((0.4, 0.6, 3), (0.3, 0.7, 3), (-1.0, 1.0, 9), 1).unwrap();
        let fields = fields_on_grid(&traj, &KernelTriple::biweight(), &grid, &h, &cut).unwrap();
        for c in 0..grid.n_x() {
            if grid.x_sup_norm(c) > cut.r {
                for a in 0..3 {
                    for b in 0..3 {
                        let i3 = fields.idx3(a, b, c);
                        assert_eq!(fields.mu[i3], 0.0);
                        assert_eq!(fields.beta[i3], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn mu_handles_two_dimensional_states() {
        // hand-built d = 2 trajectory: one particle frozen at (0.3, -0.2)
        use crate::simulator::TrajectorySet;
        let grid = crate::simulator::TimeGrid::new(1.0, 2).unwrap();
        let positions = vec![0.3, -0.2, 0.3, -0.2, 0.3, -0.2];
        let traj = TrajectorySet::from_parts(1, 2, grid, 0, [0u8; 32], positions).unwrap();
        let t = biweight();
        let h = Bandwidths::new(0.2, 0.8, 0.5).unwrap();
        let got = mu_hat(&traj, &t, 0.5, 0.7, &[0.4, 0.0], &h).unwrap();
        let expect = dilate_j(&t, h.h2, 0.7 - 1.0) * dilate_k(&t, h.h3, &[0.4 - 0.3, 0.0 + 0.2]);
        assert!((got - expect).abs() <= 1e-15 * expect.max(1.0), "{got} vs {expect}");
        // sup-norm support: one coordinate outside h3 kills the kernel
        let zero = mu_hat(&traj, &t, 0.5, 0.7, &[0.9, 0.0], &h).unwrap();
        assert_eq!(zero, 0.0);
    }

    #[test]
    fn mu_mass_integrates_to_one_over_extension() {
        let spec = builtins::ou_system(1.0, 0.8, 1.0, InitialLawSpec::gaussian(0.0, 0.5));
        let traj = simulate(&spec, 500, TimeGrid::new(1.0, 200).unwrap(), 5).unwrap();
        let h = Bandwidths::new(0.2, 0.15, 0.25).unwrap();
        let t = biweight();
        let k = traj.grid.snap(0.7);
        let state = traj.state(k);
        let (mut x_lo, mut x_hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &x in state {
            x_lo = x_lo.min(x);
            x_hi = x_hi.max(x);
        }
        let u_nodes = linspace(-h.h2, 1.0 + h.h2, 241);
        let x_nodes = linspace(x_lo - h.h3, x_hi + h.h3, 801);
        let wu = trapezoid_weights(&u_nodes);
        let wx = trapezoid_weights(&x_nodes);
        let mut mass = 0.0;
        for (u, wu) in u_nodes.iter().zip(&wu) {
            for (x, wx) in x_nodes.iter().zip(&wx) {
                mass += wu * wx * mu_hat_at_node(&traj, &t, k, *u, &[*x], &h);
            }
        }
        assert!((mass - 1.0).abs() <= 1e-2, "mass = {mass}");
    }
}
