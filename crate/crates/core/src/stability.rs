//! Stability constants, Carleman weights and the numerical probes of the
//! theory behind the reconstruction: the geometric constant `Lambda`, the
//! feasible weight parameter `beta`, the observation-time threshold
//! `T > Lambda / sqrt(beta)`, the weight pair `psi = |x - x0|^2 - beta t^2`,
//! `phi = exp(lambda psi)` with its cut-off constants `d0`, `eps0`, `eps1`
//! and taper `chi`, the admissibility conditions on the coefficients and the
//! initial data, a direct check of the first-order weighted estimate, and an
//! empirical Lipschitz-ratio experiment for the backscattering setup.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::field::CoefficientField;
use crate::grid::{Domain2D, Grid2D, Rect};
use crate::wave::{solve_forward_with, SolverOptions, SourceParams, TimeGrid};
use crate::{Error, Result};

/// Strict inequalities are accepted when their margin exceeds this.
pub const MARGIN_TOL: f64 = 1e-10;

// ---------------------------------------------------------------------------
// Geometry and the basic constants
// ---------------------------------------------------------------------------

/// Geometric and theoretical parameters of the stability analysis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityGeometry {
    /// The spatial domain (the outer rectangle).
    pub omega: Rect,
    /// Reference point strictly outside the closed domain.
    pub x0: (f64, f64),
    /// `theta_0` in (0, 1].
    pub theta0: f64,
    /// Lower coefficient bound `theta_1 > 0`.
    pub theta1: f64,
    /// Bound on `|grad(p / rho)|` over the admissible set.
    pub m0: f64,
    ///C^2-norm bound of the admissible set (reported, not used in formulas).
    pub m1: f64,
    /// Carleman weight exponent `lambda > 0`.
    pub lambda_w: f64,
    /// Width of the observation strip below the top boundary.
    pub strip_w: f64,
}

impl Default for StabilityGeometry {
    fn default() -> Self {
        Self {
            omega: Rect::new(-1.1, 1.1, -0.62, 0.62),
            x0: (0.0, -2.0),
            theta0: 0.5,
            theta1: 1.0,
            m0: 1.0,
            m1: 1.0,
            lambda_w: 1.0,
            strip_w: 0.1,
        }
    }
}

/// Infimum and supremum of `|x - x0|^2` over the closed rectangle: the
/// infimum at the clamped nearest point, the supremum at the farthest
/// corner.
pub fn dist2_extremes(rect: &Rect, x0: (f64, f64)) -> (f64, f64) {
    let nearest = (
        x0.0.clamp(rect.x1_min, rect.x1_max),
        x0.1.clamp(rect.x2_min, rect.x2_max),
    );
    let inf = (nearest.0 - x0.0) * (nearest.0 - x0.0) + (nearest.1 - x0.1) * (nearest.1 - x0.1);
    let dx = (rect.x1_min - x0.0).abs().max((rect.x1_max - x0.0).abs());
    let dy = (rect.x2_min - x0.1).abs().max((rect.x2_max - x0.1).abs());
    (inf, dx * dx + dy * dy)
}

fn require_x0_outside(geom: &StabilityGeometry) -> Result<(f64, f64)> {
    let (inf, sup) = dist2_extremes(&geom.omega, geom.x0);
    if inf < 1e-18 {
        return Err(Error::Geometry(format!(
            "x0 = ({}, {}) must lie strictly outside the closed domain",
            geom.x0.0, geom.x0.1
        )));
    }
    Ok((inf, sup))
}

/// `Lambda = (sup |x - x0|^2 - inf |x - x0|^2)^{1/2}`.
pub fn lambda_cap(geom: &StabilityGeometry) -> Result<f64> {
    let (inf, sup) = require_x0_outside(geom)?;
    Ok((sup - inf).sqrt())
}

/// Check both weight-parameter inequalities:
/// `beta + (M0 Lambda / sqrt(theta1)) sqrt(beta) < theta0 theta1` and
/// `theta1 inf |x - x0|^2 - beta Lambda^2 > 0`.
pub fn beta_feasible(beta: f64, geom: &StabilityGeometry) -> Result<bool> {
    let (inf, sup) = require_x0_outside(geom)?;
    if beta <= 0.0 {
        return Ok(false);
    }
    let lambda = (sup - inf).sqrt();
    let first = beta + geom.m0 * lambda / geom.theta1.sqrt() * beta.sqrt()
        < geom.theta0 * geom.theta1;
    let second = geom.theta1 * inf - beta * (sup - inf) > 0.0;
    Ok(first && second)
}

/// Supremum of the feasible `beta` interval by bisection to 1e-10; `None`
/// when no positive `beta` is feasible.
pub fn max_beta(geom: &StabilityGeometry) -> Result<Option<f64>> {
    require_x0_outside(geom)?;
    let mut lo = 0.0;
    let mut step = 1.0;
    if !beta_feasible(step * 1e-12, geom)? {
        return Ok(None);
    }
    // Find an infeasible upper bracket.
    let mut hi = step;
    while beta_feasible(hi, geom)? {
        step *= 2.0;
        hi = step;
    }
    lo = if beta_feasible(lo + 1e-12, geom)? { 1e-12 } else { lo };
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if beta_feasible(mid, geom)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Some(0.5 * (lo + hi)))
}

/// Closed-form supremum: the root of `x^2 + c x = theta0 theta1` in
/// `x = sqrt(beta)` with `c = M0 Lambda / sqrt(theta1)`, capped by the
/// second inequality `beta < theta1 inf / Lambda^2`.
pub fn max_beta_closed_form(geom: &StabilityGeometry) -> Result<f64> {
    let (inf, sup) = require_x0_outside(geom)?;
    let lambda2 = sup - inf;
    let c = geom.m0 * lambda2.sqrt() / geom.theta1.sqrt();
    let rhs = geom.theta0 * geom.theta1;
    let x = 0.5 * (-c + (c * c + 4.0 * rhs).sqrt());
    Ok((x * x).min(geom.theta1 * inf / lambda2))
}

/// Observation-time threshold `T_min = Lambda / sqrt(beta)`.
pub fn min_time(lambda: f64, beta: f64) -> f64 {
    lambda / beta.sqrt()
}

// ---------------------------------------------------------------------------
// Carleman weights
// ---------------------------------------------------------------------------

/// The weight pair and its cut-off constants on `Q = Omega x (-T, T)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CarlemanWeights {
    pub lambda_w: f64,
    pub beta: f64,
    pub x0: (f64, f64),
    /// Shift added to `psi` so that `phi >= 1` on the closed cylinder.
    pub c0: f64,
    /// Level separating `phi(., 0)` from `phi(., +-T)`.
    pub d0: f64,
    pub eps0: f64,
    pub eps1: f64,
    pub t_final: f64,
}

impl CarlemanWeights {
    /// `psi(x, t) = |x - x0|^2 - beta t^2 + c0`.
    pub fn psi(&self, x1: f64, x2: f64, t: f64) -> f64 {
        let dx = x1 - self.x0.0;
        let dy = x2 - self.x0.1;
        dx * dx + dy * dy - self.beta * t * t + self.c0
    }

    /// `phi = exp(lambda psi)`.
    pub fn phi(&self, x1: f64, x2: f64, t: f64) -> f64 {
        (self.lambda_w * self.psi(x1, x2, t)).exp()
    }

    /// Smooth cut-off: 0 for `|t| >= T - eps1`, 1 for `|t| <= T - 2 eps1`.
    pub fn chi(&self, t: f64) -> f64 {
        let a = t.abs();
        if a >= self.t_final - self.eps1 {
            0.0
        } else if a <= self.t_final - 2.0 * self.eps1 {
            1.0
        } else {
            let s = (self.t_final - self.eps1 - a) / self.eps1;
            s * s * (3.0 - 2.0 * s)
        }
    }
}

/// Determine the shift, the separating level `d0` (midpoint rule) and the
/// largest cut-off constants `eps0`, `eps1` compatible with the weight
/// inequalities.  Fails when `T <= Lambda / sqrt(beta)`, in which case the
/// level separation cannot hold.
pub fn build_weights(
    geom: &StabilityGeometry,
    beta: f64,
    t_final: f64,
) -> Result<CarlemanWeights> {
    let (inf, sup) = require_x0_outside(geom)?;
    if beta <= 0.0 {
        return Err(Error::Config(format!("beta = {beta} must be positive")));
    }
    let lambda_w = geom.lambda_w;
    if lambda_w <= 0.0 {
        return Err(Error::Config(format!(
            "weight exponent lambda = {lambda_w} must be positive"
        )));
    }
    // Shift so that psi >= 0 everywhere on the closed cylinder.
    let psi_min = inf - beta * t_final * t_final;
    let c0 = (-psi_min).max(0.0);
    let phi_mid_min = (lambda_w * (inf + c0)).exp();
    let phi_end_max = (lambda_w * (sup - beta * t_final * t_final + c0)).exp();
    if phi_mid_min <= phi_end_max {
        return Err(Error::Config(format!(
            "separation fails: min phi(., 0) = {phi_mid_min} <= max phi(., +-T) = {phi_end_max}; \
             T = {t_final} does not exceed Lambda / sqrt(beta) = {}",
            min_time((sup - inf).sqrt(), beta)
        )));
    }
    let d0 = 0.5 * (phi_mid_min + phi_end_max);
    let eps0 = 0.25 * (phi_mid_min - phi_end_max);
    // (2.8): phi >= d0 + eps0 for |t| <= eps1, worst case at (inf, eps1).
    let bound1_sq = (inf + c0 - (d0 + eps0).ln() / lambda_w) / beta;
    // (2.9): phi <= d0 - eps0 for |t| >= T - 2 eps1, worst case at
    // (sup, T - 2 eps1).
    let r_sq = (sup + c0 - (d0 - eps0).ln() / lambda_w) / beta;
    let bound2 = 0.5 * (t_final - r_sq.max(0.0).sqrt());
    let eps1 = bound1_sq
        .max(0.0)
        .sqrt()
        .min(bound2)
        .min(0.45 * t_final);
    if eps1 <= 0.0 {
        return Err(Error::Config(
            "no positive eps1 satisfies the cut-off inequalities".into(),
        ));
    }
    Ok(CarlemanWeights {
        lambda_w,
        beta,
        x0: geom.x0,
        c0,
        d0,
        eps0,
        eps1,
        t_final,
    })
}

// ---------------------------------------------------------------------------
// Finite differences on nodal samples
// ---------------------------------------------------------------------------

/// Nodal first derivatives, second-order one-sided along the boundary.
fn fd_grad(values: &[f64], grid: &Grid2D) -> (Vec<f64>, Vec<f64>) {
    let (nx, ny, h) = (grid.nx, grid.ny, grid.h);
    let mut gx = vec![0.0; values.len()];
    let mut gy = vec![0.0; values.len()];
    for j in 0..ny {
        for i in 0..nx {
            let k = grid.idx(i, j);
            gx[k] = if i == 0 {
                (-3.0 * values[k] + 4.0 * values[k + 1] - values[k + 2]) / (2.0 * h)
            } else if i == nx - 1 {
                (3.0 * values[k] - 4.0 * values[k - 1] + values[k - 2]) / (2.0 * h)
            } else {
                (values[k + 1] - values[k - 1]) / (2.0 * h)
            };
            gy[k] = if j == 0 {
                (-3.0 * values[k] + 4.0 * values[k + nx] - values[k + 2 * nx]) / (2.0 * h)
            } else if j == ny - 1 {
                (3.0 * values[k] - 4.0 * values[k - nx] + values[k - 2 * nx]) / (2.0 * h)
            } else {
                (values[k + nx] - values[k - nx]) / (2.0 * h)
            };
        }
    }
    (gx, gy)
}

/// Nodal Laplacian; one-sided second derivatives along the boundary, exact
/// for cubics.
fn fd_laplacian(values: &[f64], grid: &Grid2D) -> Vec<f64> {
    let (nx, ny, h) = (grid.nx, grid.ny, grid.h);
    let h2 = h * h;
    let sided = |k: usize, stride: isize, values: &[f64]| -> f64 {
        let at = |o: isize| values[(k as isize + o * stride) as usize];
        (2.0 * at(0) - 5.0 * at(1) + 4.0 * at(2) - at(3)) / h2
    };
    let mut lap = vec![0.0; values.len()];
    for j in 0..ny {
        for i in 0..nx {
            let k = grid.idx(i, j);
            let dxx = if i == 0 {
                sided(k, 1, values)
            } else if i == nx - 1 {
                sided(k, -1, values)
            } else {
                (values[k + 1] - 2.0 * values[k] + values[k - 1]) / h2
            };
            let dyy = if j == 0 {
                sided(k, nx as isize, values)
            } else if j == ny - 1 {
                sided(k, -(nx as isize), values)
            } else {
                (values[k + nx] - 2.0 * values[k] + values[k - nx]) / h2
            };
            lap[k] = dxx + dyy;
        }
    }
    lap
}

fn div_q_grad(q: &[f64], a: &[f64], grid: &Grid2D) -> Vec<f64> {
    let (ax, ay) = fd_grad(a, grid);
    let (qx, qy) = fd_grad(q, grid);
    let lap = fd_laplacian(a, grid);
    (0..a.len())
        .map(|k| q[k] * lap[k] + qx[k] * ax[k] + qy[k] * ay[k])
        .collect()
}

// ---------------------------------------------------------------------------
// Admissibility checks
// ---------------------------------------------------------------------------

/// Check the two initial-data conditions: one of `|div(q grad a_l)|`
/// strictly positive everywhere, and the sign condition
/// `(div(q grad a2) grad a1 - div(q grad a1) grad a2) . (x - x0) > 0`.
/// Returns the pass flag and the minimum margin of the sign condition.
pub fn check_initial_pair(
    a1: &[f64],
    a2: &[f64],
    q: &[f64],
    x0: (f64, f64),
    grid: &Grid2D,
) -> (bool, f64) {
    let d1 = div_q_grad(q, a1, grid);
    let d2 = div_q_grad(q, a2, grid);
    let (a1x, a1y) = fd_grad(a1, grid);
    let (a2x, a2y) = fd_grad(a2, grid);
    let min_abs = |v: &[f64]| v.iter().fold(f64::INFINITY, |m, &x| m.min(x.abs()));
    let cond1 = min_abs(&d1) > MARGIN_TOL || min_abs(&d2) > MARGIN_TOL;
    let mut margin = f64::INFINITY;
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let k = grid.idx(i, j);
            let (x1, x2) = grid.coord(i, j);
            let ex = x1 - x0.0;
            let ey = x2 - x0.1;
            let vx = d2[k] * a1x[k] - d1[k] * a2x[k];
            let vy = d2[k] * a1y[k] - d1[k] * a2y[k];
            margin = margin.min(vx * ex + vy * ey);
        }
    }
    (cond1 && margin > MARGIN_TOL, margin)
}

/// Determinant condition on `n + 1 = 3` initial data:
/// `det(d1 A, d2 A, Laplacian A) != 0` at every node.  Returns the pass
/// flag and the minimum absolute determinant.
pub fn check_det_condition(a: &[Vec<f64>; 3], grid: &Grid2D) -> (bool, f64) {
    let mut grads = Vec::with_capacity(3);
    let mut laps = Vec::with_capacity(3);
    for row in a.iter() {
        grads.push(fd_grad(row, grid));
        laps.push(fd_laplacian(row, grid));
    }
    let mut min_det = f64::INFINITY;
    for k in 0..a[0].len() {
        let m = [
            [grads[0].0[k], grads[0].1[k], laps[0][k]],
            [grads[1].0[k], grads[1].1[k], laps[1][k]],
            [grads[2].0[k], grads[2].1[k], laps[2][k]],
        ];
        let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
        min_det = min_det.min(det.abs());
    }
    (min_det > MARGIN_TOL, min_det)
}

/// True when the node lies in the observation strip below the top side.
fn in_strip(x2: f64, omega: &Rect, strip_w: f64) -> bool {
    x2 >= omega.x2_max - strip_w
}

/// Check the admissible-set condition
/// `(grad(p / rho) . (x - x0)) / (2 p / rho) < 1 - theta0` on the closure of
/// the domain minus the observation strip.  Returns the pass flag and the
/// minimum margin `1 - theta0 - LHS`.
pub fn check_admissible_u(
    field: &CoefficientField,
    geom: &StabilityGeometry,
    grid: &Grid2D,
) -> (bool, f64) {
    let ratio: Vec<f64> = field
        .p
        .iter()
        .zip(field.rho.iter())
        .map(|(p, r)| p / r)
        .collect();
    let (rx, ry) = fd_grad(&ratio, grid);
    let mut margin = f64::INFINITY;
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let (x1, x2) = grid.coord(i, j);
            if in_strip(x2, &geom.omega, geom.strip_w) {
                continue;
            }
            let k = grid.idx(i, j);
            let lhs = (rx[k] * (x1 - geom.x0.0) + ry[k] * (x2 - geom.x0.1)) / (2.0 * ratio[k]);
            margin = margin.min(1.0 - geom.theta0 - lhs);
        }
    }
    (margin > MARGIN_TOL, margin)
}

// ---------------------------------------------------------------------------
// First-order Carleman probe
// ---------------------------------------------------------------------------

/// One row of the probe sweep.  The sums are reported in log space because
/// `exp(2 s phi)` overflows any floating-point format for moderate `s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeRow {
    pub s: f64,
    pub ln_lhs: f64,
    pub ln_rhs: f64,
    /// `LHS / RHS = exp(ln_lhs - ln_rhs)`; 0 when `f` vanishes identically.
    pub ratio: f64,
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    if !m.is_finite() {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = terms.iter().map(|&t| (t - m).exp()).sum();
    m + sum.ln()
}

/// Evaluate both sides of the weighted first-order estimate
/// `int s^2 |f|^2 e^{2 s phi(., 0)} <= C int |A . grad f + B f|^2 e^{2 s phi(., 0)}`
/// for each `s`, after checking the transversality condition
/// `A . (x - x0) != 0`.  `f` must vanish on the boundary.
#[allow(clippy::too_many_arguments)]
pub fn carleman_probe(
    f: &[f64],
    a_x: &[f64],
    a_y: &[f64],
    b: &[f64],
    s_list: &[f64],
    weights: &CarlemanWeights,
    grid: &Grid2D,
) -> Result<Vec<ProbeRow>> {
    let n = grid.node_count();
    if f.len() != n || a_x.len() != n || a_y.len() != n || b.len() != n {
        return Err(Error::Shape("probe fields do not match the grid".into()));
    }
    let mut min_trans = f64::INFINITY;
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let k = grid.idx(i, j);
            let (x1, x2) = grid.coord(i, j);
            let t = a_x[k] * (x1 - weights.x0.0) + a_y[k] * (x2 - weights.x0.1);
            min_trans = min_trans.min(t.abs());
        }
    }
    if min_trans <= MARGIN_TOL {
        return Err(Error::Config(format!(
            "transversality violated: min |A . (x - x0)| = {min_trans}"
        )));
    }
    let (fx, fy) = fd_grad(f, grid);
    let h2_log = (grid.h * grid.h).ln();
    let mut rows = Vec::with_capacity(s_list.len());
    for &s in s_list {
        let mut lhs_terms = Vec::with_capacity(n);
        let mut rhs_terms = Vec::with_capacity(n);
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let k = grid.idx(i, j);
                let (x1, x2) = grid.coord(i, j);
                let expo = 2.0 * s * weights.phi(x1, x2, 0.0);
                if f[k] != 0.0 {
                    lhs_terms.push((s * s * f[k] * f[k]).ln() + h2_log + expo);
                }
                let qf = a_x[k] * fx[k] + a_y[k] * fy[k] + b[k] * f[k];
                if qf != 0.0 {
                    rhs_terms.push((qf * qf).ln() + h2_log + expo);
                }
            }
        }
        if lhs_terms.is_empty() {
            rows.push(ProbeRow {
                s,
                ln_lhs: f64::NEG_INFINITY,
                ln_rhs: log_sum_exp(&rhs_terms),
                ratio: 0.0,
            });
            continue;
        }
        let ln_lhs = log_sum_exp(&lhs_terms);
        let ln_rhs = log_sum_exp(&rhs_terms);
        rows.push(ProbeRow {
            s,
            ln_lhs,
            ln_rhs,
            ratio: (ln_lhs - ln_rhs).exp(),
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Empirical Lipschitz-ratio experiment
// ---------------------------------------------------------------------------

/// Parameters of the Lipschitz-ratio experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzParams {
    pub n_shapes: usize,
    pub eps_list: Vec<f64>,
    pub seed: u64,
    /// Exponent of the second initial datum `a2 = exp(gamma (x1 - x1_max))`.
    pub gamma: f64,
}

impl Default for LipschitzParams {
    fn default() -> Self {
        Self {
            n_shapes: 10,
            eps_list: vec![1e-2, 5e-3],
            seed: 1,
            gamma: 5.0,
        }
    }
}

/// One measured ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzRow {
    pub shape: usize,
    pub eps: f64,
    /// `|p - q|_{H^1} + |rho - sigma|_{L^2}`.
    pub lhs: f64,
    /// `sum_l |u_l(pert) - u_l(base)|_{H^3(0, T; L^2(omega))}`.
    pub rhs: f64,
    pub ratio: f64,
}

/// The two theorem initial data: `a1 = |x - x0|^2 / 2` (whose gradient is
/// radial from `x0`) and `a2 = exp(gamma (x1 - x1_max))`, normalized to
/// unit maximum.  Both pass `check_initial_pair` for the background
/// coefficients; the caller may re-verify with the returned samples.
pub fn theorem_initial_pair(
    geom: &StabilityGeometry,
    gamma: f64,
    grid: &Grid2D,
) -> (Vec<f64>, Vec<f64>) {
    let n = grid.node_count();
    let mut a1 = Vec::with_capacity(n);
    let mut a2 = Vec::with_capacity(n);
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let (x1, x2) = grid.coord(i, j);
            let dx = x1 - geom.x0.0;
            let dy = x2 - geom.x0.1;
            a1.push(0.5 * (dx * dx + dy * dy));
            a2.push((gamma * (x1 - geom.omega.x1_max)).exp());
        }
    }
    (a1, a2)
}

fn h1_norm(values: &[f64], grid: &Grid2D) -> f64 {
    let (gx, gy) = fd_grad(values, grid);
    let mut acc = 0.0;
    for k in 0..values.len() {
        acc += values[k] * values[k] + gx[k] * gx[k] + gy[k] * gy[k];
    }
    (grid.h * grid.h * acc).sqrt()
}

fn l2_norm(values: &[f64], grid: &Grid2D) -> f64 {
    let mut acc = 0.0;
    for &v in values {
        acc += v * v;
    }
    (grid.h * grid.h * acc).sqrt()
}

/// Time derivative of a time series matrix by centered differences with
/// one-sided end points.
fn time_derivative(series: &[Vec<f64>], tau: f64) -> Vec<Vec<f64>> {
    let nt = series.len() - 1;
    let width = series[0].len();
    let mut out = vec![vec![0.0; width]; nt + 1];
    for k in 0..width {
        out[0][k] = (series[1][k] - series[0][k]) / tau;
        out[nt][k] = (series[nt][k] - series[nt - 1][k]) / tau;
        for n in 1..nt {
            out[n][k] = (series[n + 1][k] - series[n - 1][k]) / (2.0 * tau);
        }
    }
    out
}

/// `H^3(0, T; L^2(omega))` norm of an `omega`-restricted time series:
/// trapezoid in time, `h^2` nodal quadrature in space, time derivatives by
/// repeated centered differencing.
pub fn h3_time_norm(series: &[Vec<f64>], tau: f64, h: f64) -> f64 {
    let mut total = 0.0;
    let mut current: Vec<Vec<f64>> = series.to_vec();
    for order in 0..=3 {
        let nt = current.len() - 1;
        let mut acc = 0.0;
        for (n, row) in current.iter().enumerate() {
            let w = if n == 0 || n == nt { 0.5 * tau } else { tau };
            let mut s = 0.0;
            for &v in row {
                s += v * v;
            }
            acc += w * s;
        }
        total += h * h * acc;
        if order < 3 {
            current = time_derivative(&current, tau);
        }
    }
    total.sqrt()
}

/// Gaussian bump supported (numerically) inside `Omega_1`.
fn bump_field(
    domain: &Domain2D,
    grid: &Grid2D,
    center: (f64, f64),
    width: f64,
) -> Vec<f64> {
    let mut out = vec![0.0; grid.node_count()];
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let (x1, x2) = grid.coord(i, j);
            if !domain.omega1.contains_point(x1, x2) {
                continue;
            }
            let r2 = (x1 - center.0) * (x1 - center.0) + (x2 - center.1) * (x2 - center.1);
            out[grid.idx(i, j)] = (-r2 / (width * width)).exp();
        }
    }
    out
}

/// Run the empirical Lipschitz-ratio experiment: for seeded smooth
/// perturbations `(f, g)` of the background coefficients supported in
/// `Omega_1`, compare the coefficient norms against the observation norms
/// over the strip `omega` for the two theorem initial data.
#[allow(clippy::too_many_arguments)]
pub fn lipschitz_ratio_experiment(
    domain: &Domain2D,
    grid: &Grid2D,
    tg: &TimeGrid,
    geom: &StabilityGeometry,
    params: &LipschitzParams,
) -> Result<Vec<LipschitzRow>> {
    let (a1, a2) = theorem_initial_pair(geom, params.gamma, grid);
    let background = CoefficientField::background(domain, grid);
    let (pair_ok, pair_margin) =
        check_initial_pair(&a1, &a2, &background.p, geom.x0, grid);
    if !pair_ok {
        return Err(Error::Config(format!(
            "theorem initial data fail the sign condition (margin {pair_margin})"
        )));
    }

    // Observation strip: all nodes within strip_w of the top side.
    let mut strip_nodes: Vec<usize> = Vec::new();
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let (_, x2) = grid.coord(i, j);
            if in_strip(x2, &geom.omega, geom.strip_w) {
                strip_nodes.push(grid.idx(i, j));
            }
        }
    }
    // The probing source plays no role here; the theorem drives the system
    // through the initial data alone.
    let src = SourceParams {
        omega_f: 40.0,
        amplitude: 0.0,
    };
    let opts = SolverOptions {
        keep_history: true,
        enforce_cfl: true,
    };
    let solve_strip = |field: &CoefficientField, a: &[f64]| -> Result<Vec<Vec<f64>>> {
        let hist = solve_forward_with(field, domain, grid, tg, &src, a, opts)?;
        Ok(hist
            .frames
            .iter()
            .map(|frame| strip_nodes.iter().map(|&k| frame[k]).collect())
            .collect())
    };
    let base1 = solve_strip(&background, &a1)?;
    let base2 = solve_strip(&background, &a2)?;

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut rows = Vec::new();
    for shape in 0..params.n_shapes {
        let margin = 0.12;
        let cx = rng.gen_range(domain.omega1.x1_min + margin..domain.omega1.x1_max - margin);
        let cy = rng.gen_range(domain.omega1.x2_min + margin..domain.omega1.x2_max - margin);
        let width = rng.gen_range(0.05..0.15);
        let amp_p = rng.gen_range(0.2..1.0);
        let amp_rho = rng.gen_range(0.2..1.0);
        let bump = bump_field(domain, grid, (cx, cy), width);
        for &eps in &params.eps_list {
            if eps == 0.0 {
                rows.push(LipschitzRow {
                    shape,
                    eps,
                    lhs: 0.0,
                    rhs: 0.0,
                    ratio: 0.0,
                });
                continue;
            }
            let mut pert = background.clone();
            let mut f_diff = vec![0.0; grid.node_count()];
            let mut g_diff = vec![0.0; grid.node_count()];
            for k in 0..bump.len() {
                f_diff[k] = eps * amp_p * bump[k];
                g_diff[k] = eps * amp_rho * bump[k];
                pert.p[k] += f_diff[k];
                pert.rho[k] += g_diff[k];
            }
            let lhs = h1_norm(&f_diff, grid) + l2_norm(&g_diff, grid);
            let p1 = solve_strip(&pert, &a1)?;
            let p2 = solve_strip(&pert, &a2)?;
            let diff = |a: &[Vec<f64>], b: &[Vec<f64>]| -> Vec<Vec<f64>> {
                a.iter()
                    .zip(b.iter())
                    .map(|(ra, rb)| ra.iter().zip(rb.iter()).map(|(x, y)| x - y).collect())
                    .collect()
            };
            let rhs = h3_time_norm(&diff(&p1, &base1), tg.tau, grid.h)
                + h3_time_norm(&diff(&p2, &base2), tg.tau, grid.h);
            rows.push(LipschitzRow {
                shape,
                eps,
                lhs,
                rhs,
                ratio: lhs / rhs,
            });
        }
    }
    Ok(rows)
}

/// Convenience: human-readable summary line of a probe row.
pub fn probe_row_summary(row: &ProbeRow) -> String {
    format!(
        "s = {:>6}: ln LHS = {:.6e}, ln RHS = {:.6e}, ratio = {:.6e}",
        row.s, row.ln_lhs, row.ln_rhs, row.ratio
    )
}
