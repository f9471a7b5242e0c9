//! Backward-in-time adjoint solve and the Tikhonov functional with its
//! gradient with respect to `(rho, p)`.
//!
//! The functional is
//!
//! ```text
//!     J = 1/2 int_{Gamma_1} (u - u~)^2 z_d(t) ds dt
//!       + alpha_1/2 |rho - rho_0|^2 + alpha_2/2 |p - p_0|^2,
//! ```
//!
//! discretized with trapezoidal time quadrature, a plain node sum times `h`
//! on the observation row, and nodal quadrature times `h^2` over the domain.
//! The adjoint field solves the same damped wave scheme marched backward in
//! time, with the taper-weighted residual injected on the observation row
//! and the absorbing sign flipped by the time reversal.  Because mass and
//! damping are diagonal and the stiffness is symmetric, the backward march
//! is the exact transpose of the forward one, so the assembled gradient
//! differentiates the discrete functional exactly; nodally it is the
//! discrete form of
//!
//! ```text
//!     g_rho = -int lambda_t u_t dt + alpha_1 (rho - rho_0),
//!     g_p   =  int grad lambda . grad u dt + alpha_2 (p - p_0).
//! ```
//!
//! Gradients are reported in the density convention (plain derivative
//! divided by `h^2`), so inner products against them use the same
//! `h^2`-weighted nodal quadrature as the functional.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::field::CoefficientField;
use crate::grid::{Domain2D, Grid2D};
use crate::wave::{
    cfl_max_tau, first_step, forward_step, sample_initial_a, ObservationTrace, SourceParams,
    TimeGrid, WaveHistory, WaveOperator,
};
use crate::{Error, Result};

// ---------------------------------------------------------------------------
// Taper and misfit
// ---------------------------------------------------------------------------

/// Regularization weights and taper width of the Tikhonov functional.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MisfitConfig {
    pub alpha1: f64,
    pub alpha2: f64,
    pub rho0: f64,
    pub p0: f64,
    /// Width parameter of the observation-time taper `z_d`.
    pub s_z: f64,
}

impl Default for MisfitConfig {
    fn default() -> Self {
        Self {
            alpha1: 0.0,
            alpha2: 0.0,
            rho0: 1.0,
            p0: 1.0,
            s_z: 0.1,
        }
    }
}

/// Observation-time taper: 1 on `[0, T - 2 s_z]`, 0 at `t = T`, C^1 cubic in
/// between, so the adjoint terminal conditions are compatible.
pub fn zdelta(t: f64, t_final: f64, s_z: f64) -> Result<f64> {
    if s_z <= 0.0 || s_z >= 0.5 * t_final {
        return Err(Error::Config(format!(
            "taper width s_z = {s_z} must lie in (0, T/2) with T = {t_final}"
        )));
    }
    Ok(zdelta_unchecked(t, t_final, s_z))
}

pub(crate) fn zdelta_unchecked(t: f64, t_final: f64, s_z: f64) -> f64 {
    let start = t_final - 2.0 * s_z;
    if t <= start {
        1.0
    } else if t >= t_final {
        0.0
    } else {
        let theta = (t - start) / (2.0 * s_z);
        1.0 - theta * theta * (3.0 - 2.0 * theta)
    }
}

fn trapezoid_weight(n: usize, nt: usize, tau: f64) -> f64 {
    if n == 0 || n == nt {
        0.5 * tau
    } else {
        tau
    }
}

fn check_trace_pair(trace: &ObservationTrace, observed: &ObservationTrace) -> Result<()> {
    if trace.values.len() != observed.values.len()
        || trace.node_count() != observed.node_count()
        || trace.nt != observed.nt
    {
        return Err(Error::Shape(format!(
            "trace dimensions {}x{} do not match observations {}x{}",
            trace.values.len(),
            trace.node_count(),
            observed.values.len(),
            observed.node_count()
        )));
    }
    Ok(())
}

/// Data term of the functional: `1/2 sum_n w_n z_n h sum_k (u - u~)^2`.
pub fn data_misfit(
    trace: &ObservationTrace,
    observed: &ObservationTrace,
    s_z: f64,
    h: f64,
) -> Result<f64> {
    check_trace_pair(trace, observed)?;
    let nt = trace.nt;
    let t_final = trace.tau * nt as f64;
    zdelta(0.0, t_final, s_z)?;
    let mut acc = 0.0;
    for n in 0..=nt {
        let t = trace.tau * n as f64;
        let w = trapezoid_weight(n, nt, trace.tau) * zdelta_unchecked(t, t_final, s_z);
        let mut row = 0.0;
        for (v, o) in trace.values[n].iter().zip(observed.values[n].iter()) {
            let r = v - o;
            row += r * r;
        }
        acc += w * row;
    }
    Ok(0.5 * h * acc)
}

/// `alpha_1/2 |rho - rho_0|^2 + alpha_2/2 |p - p_0|^2` with `h^2` quadrature.
pub fn regularization(field: &CoefficientField, grid: &Grid2D, cfg: &MisfitConfig) -> f64 {
    let h2 = grid.h * grid.h;
    let mut acc_r = 0.0;
    let mut acc_p = 0.0;
    for k in 0..field.rho.len() {
        let dr = field.rho[k] - cfg.rho0;
        let dp = field.p[k] - cfg.p0;
        acc_r += dr * dr;
        acc_p += dp * dp;
    }
    0.5 * h2 * (cfg.alpha1 * acc_r + cfg.alpha2 * acc_p)
}

/// Full Tikhonov functional: data term plus the two regularization terms.
pub fn misfit(
    trace: &ObservationTrace,
    observed: &ObservationTrace,
    field: &CoefficientField,
    grid: &Grid2D,
    cfg: &MisfitConfig,
) -> Result<f64> {
    let data = data_misfit(trace, observed, cfg.s_z, grid.h)?;
    Ok(data + regularization(field, grid, cfg))
}

/// The taper-weighted residual `(u - u~) z_d` per step and observation node,
/// the Neumann source of the adjoint problem.
pub fn weighted_residual(
    trace: &ObservationTrace,
    observed: &ObservationTrace,
    s_z: f64,
) -> Result<Vec<Vec<f64>>> {
    check_trace_pair(trace, observed)?;
    let nt = trace.nt;
    let t_final = trace.tau * nt as f64;
    zdelta(0.0, t_final, s_z)?;
    let mut resid = Vec::with_capacity(nt + 1);
    for n in 0..=nt {
        let z = zdelta_unchecked(trace.tau * n as f64, t_final, s_z);
        resid.push(
            trace.values[n]
                .iter()
                .zip(observed.values[n].iter())
                .map(|(v, o)| (v - o) * z)
                .collect(),
        );
    }
    Ok(resid)
}

// ---------------------------------------------------------------------------
// Adjoint march
// ---------------------------------------------------------------------------

/// Adjoint field history plus the sensitivity of the injected pairing with
/// respect to the initial displacement (used by the discrete duality check).
#[derive(Debug, Clone)]
pub struct AdjointSolution {
    /// `lambda[n][node]`; `lambda[0]` is identically zero by convention,
    /// the multiplier sequence starts at the first time step.
    pub history: WaveHistory,
    pub a_sensitivity: Vec<f64>,
}

/// Diagonal damping at time `t` for node `k`: nonzero only on the bottom row
/// and, once the source window has closed, on the top row.
#[inline]
fn damping_at(op: &WaveOperator, domain: &Domain2D, n_nodes: usize, k: usize, t: f64) -> f64 {
    let nx = op.nx;
    if k < nx {
        op.bottom_coef[k]
    } else if k >= n_nodes - nx && t > domain.t1 {
        op.top_coef[k - (n_nodes - nx)]
    } else {
        0.0
    }
}

/// One backward step of the exact transpose:
/// `w^m = Dp(t_{m-1})^{-1} [phi'_m + (2M/tau^2 - K) w^{m+1} - Dm(t_{m+1}) w^{m+2}]`;
/// for `m = 1` the solve matrix is the Taylor-start one, `2M/tau^2`.
#[allow(clippy::too_many_arguments)]
fn adjoint_step(
    op: &WaveOperator,
    domain: &Domain2D,
    tau: f64,
    m: usize,
    phi_m: &[f64],
    w_p1: &[f64],
    w_p2: &[f64],
    scratch_kw: &mut [f64],
    out: &mut [f64],
) {
    op.apply_stiffness(w_p1, scratch_kw);
    let inv_tau2 = 1.0 / (tau * tau);
    let n = phi_m.len();
    let t_dm = tau * (m + 1) as f64;
    let t_dp = tau * (m - 1) as f64;
    for k in 0..n {
        let mass = op.mass[k] * inv_tau2;
        let dm = mass - 0.5 * damping_at(op, domain, n, k, t_dm) / tau;
        let numer = phi_m[k] + 2.0 * mass * w_p1[k] - scratch_kw[k] - dm * w_p2[k];
        let denom = if m == 1 {
            2.0 * mass
        } else {
            mass + 0.5 * damping_at(op, domain, n, k, t_dp) / tau
        };
        out[k] = numer / denom;
    }
}

/// Misfit injection `phi'_m`: trapezoid weight times `h` times the weighted
/// residual, supported on the observation (top) row.
#[allow(clippy::too_many_arguments)]
fn injection(
    resid: &[Vec<f64>],
    m: usize,
    nt: usize,
    tau: f64,
    h: f64,
    n_nodes: usize,
    nx: usize,
    out: &mut [f64],
) {
    out.fill(0.0);
    let w = trapezoid_weight(m, nt, tau) * h;
    let base = n_nodes - nx;
    for (i, r) in resid[m].iter().enumerate() {
        out[base + i] = w * r;
    }
}

/// Solve the adjoint problem backward from zero terminal data with the
/// weighted residual injected on the observation row.
pub fn solve_adjoint(
    field: &CoefficientField,
    domain: &Domain2D,
    grid: &Grid2D,
    tg: &TimeGrid,
    residual: &[Vec<f64>],
) -> Result<AdjointSolution> {
    let n = grid.node_count();
    let nx = grid.nx;
    if residual.len() != tg.nt + 1 || residual.iter().any(|r| r.len() != nx) {
        return Err(Error::Shape(format!(
            "residual must be {} x {} (steps x observation nodes)",
            tg.nt + 1,
            nx
        )));
    }
    let tau_max = cfl_max_tau(grid, field);
    if tg.tau > tau_max {
        return Err(Error::CflViolation {
            tau: tg.tau,
            tau_max,
        });
    }
    let op = WaveOperator::new(field, grid);
    let mut frames = vec![vec![0.0; n]; tg.nt + 1];
    let mut w_p1 = vec![0.0; n];
    let mut w_p2 = vec![0.0; n];
    let mut phi = vec![0.0; n];
    let mut kw = vec![0.0; n];
    let mut cur = vec![0.0; n];
    for m in (1..=tg.nt).rev() {
        injection(residual, m, tg.nt, tg.tau, grid.h, n, nx, &mut phi);
        adjoint_step(&op, domain, tg.tau, m, &phi, &w_p1, &w_p2, &mut kw, &mut cur);
        if cur.iter().any(|v| !v.is_finite()) {
            return Err(Error::Unstable { step: m });
        }
        frames[m].copy_from_slice(&cur);
        core::mem::swap(&mut w_p2, &mut w_p1);
        core::mem::swap(&mut w_p1, &mut cur);
    }
    // a_sensitivity = phi'_0 + (2M/tau^2 - K) w^1 - Dm(t_1) w^2.
    injection(residual, 0, tg.nt, tg.tau, grid.h, n, nx, &mut phi);
    op.apply_stiffness(&w_p1, &mut kw);
    let inv_tau2 = 1.0 / (tg.tau * tg.tau);
    let mut a_sens = vec![0.0; n];
    for k in 0..n {
        let mass = op.mass[k] * inv_tau2;
        let dm = mass - 0.5 * damping_at(&op, domain, n, k, tg.tau) / tg.tau;
        a_sens[k] = phi[k] + 2.0 * mass * w_p1[k] - kw[k] - dm * w_p2[k];
    }
    let trace_rows = frames
        .iter()
        .map(|f| f[n - nx..].to_vec())
        .collect::<Vec<_>>();
    Ok(AdjointSolution {
        history: WaveHistory {
            frames,
            trace: ObservationTrace {
                values: trace_rows,
                tau: tg.tau,
                nt: tg.nt,
            },
        },
        a_sensitivity: a_sens,
    })
}

// ---------------------------------------------------------------------------
// Gradient assembly
// ---------------------------------------------------------------------------

fn mask_and_add_regularization(
    field: &CoefficientField,
    cfg: &MisfitConfig,
    h2: f64,
    acc_rho: &mut [f64],
    acc_p: &mut [f64],
) {
    for k in 0..field.rho.len() {
        if field.free[k] {
            acc_rho[k] = acc_rho[k] / h2 + cfg.alpha1 * (field.rho[k] - cfg.rho0);
            acc_p[k] = acc_p[k] / h2 + cfg.alpha2 * (field.p[k] - cfg.p0);
        } else {
            acc_rho[k] = 0.0;
            acc_p[k] = 0.0;
        }
    }
}

fn pair_step(
    op: &WaveOperator,
    tau: f64,
    w_next: &[f64],
    u_next: &[f64],
    u_cur: &[f64],
    u_prev: &[f64],
    acc_rho: &mut [f64],
    acc_p: &mut [f64],
) {
    let inv_tau2 = 1.0 / (tau * tau);
    for k in 0..w_next.len() {
        let second_diff = u_next[k] - 2.0 * u_cur[k] + u_prev[k];
        acc_rho[k] -= op.area[k] * inv_tau2 * w_next[k] * second_diff;
    }
    op.accumulate_stiffness_sensitivity(w_next, u_cur, -1.0, acc_p);
}

fn pair_taylor_start(
    op: &WaveOperator,
    tau: f64,
    w1: &[f64],
    u1: &[f64],
    u0: &[f64],
    acc_rho: &mut [f64],
    acc_p: &mut [f64],
) {
    let inv_tau2 = 1.0 / (tau * tau);
    for k in 0..w1.len() {
        acc_rho[k] -= 2.0 * op.area[k] * inv_tau2 * w1[k] * (u1[k] - u0[k]);
    }
    op.accumulate_stiffness_sensitivity(w1, u0, -1.0, acc_p);
}

/// Assemble the gradient from stored forward and adjoint histories.  Both
/// histories must carry full frames.  The result vanishes identically on
/// frozen nodes and differentiates the discrete functional exactly.
pub fn gradient(
    u_history: &WaveHistory,
    adjoint: &AdjointSolution,
    field: &CoefficientField,
    grid: &Grid2D,
    tg: &TimeGrid,
    cfg: &MisfitConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = grid.node_count();
    let frames = &u_history.frames;
    let lam = &adjoint.history.frames;
    if frames.len() != tg.nt + 1 || lam.len() != tg.nt + 1 {
        return Err(Error::Shape(format!(
            "histories must hold {} frames (got {} and {})",
            tg.nt + 1,
            frames.len(),
            lam.len()
        )));
    }
    if frames[0].len() != n || lam[0].len() != n {
        return Err(Error::Shape("history frames do not match the grid".into()));
    }
    let op = WaveOperator::new(field, grid);
    let mut acc_rho = vec![0.0; n];
    let mut acc_p = vec![0.0; n];
    for m in 1..tg.nt {
        pair_step(
            &op,
            tg.tau,
            &lam[m + 1],
            &frames[m + 1],
            &frames[m],
            &frames[m - 1],
            &mut acc_rho,
            &mut acc_p,
        );
    }
    pair_taylor_start(
        &op,
        tg.tau,
        &lam[1],
        &frames[1],
        &frames[0],
        &mut acc_rho,
        &mut acc_p,
    );
    mask_and_add_regularization(field, cfg, grid.h * grid.h, &mut acc_rho, &mut acc_p);
    Ok((acc_rho, acc_p))
}

// ---------------------------------------------------------------------------
// Streaming evaluation (forward + adjoint + gradient without full storage)
// ---------------------------------------------------------------------------

/// Functional value and gradient at one evaluation point.
#[derive(Debug, Clone)]
pub struct MisfitGradient {
    pub total: f64,
    pub data_term: f64,
    pub g_rho: Vec<f64>,
    pub g_p: Vec<f64>,
}

/// Evaluate the functional and its exact gradient without storing the full
/// forward history: the forward march keeps only the boundary rows and the
/// last two frames, and the backward pass reconstructs the interior field by
/// reversing the (undamped away from the boundary rows) interior scheme.
pub fn misfit_and_gradient(
    field: &CoefficientField,
    domain: &Domain2D,
    grid: &Grid2D,
    tg: &TimeGrid,
    src: &SourceParams,
    observed: &ObservationTrace,
    cfg: &MisfitConfig,
) -> Result<MisfitGradient> {
    let n = grid.node_count();
    let nx = grid.nx;
    let nt = tg.nt;
    let tau = tg.tau;
    let tau_max = cfl_max_tau(grid, field);
    if tau > tau_max {
        return Err(Error::CflViolation { tau, tau_max });
    }
    if observed.values.len() != nt + 1 || observed.node_count() != nx {
        return Err(Error::Shape(format!(
            "observed trace must be {} x {nx}",
            nt + 1
        )));
    }
    let t_final = tg.t_final();
    zdelta(0.0, t_final, cfg.s_z)?;

    let op = WaveOperator::new(field, grid);
    let a = sample_initial_a(grid);
    let scale = 1.0 + a.iter().fold(0.0f64, |m, &v| m.max(v.abs())) + src.amplitude.abs();

    // Forward pass: keep boundary rows, the weighted residual and the
    // running data term.
    let mut top_rows: Vec<Vec<f64>> = Vec::with_capacity(nt + 1);
    let mut bottom_rows: Vec<Vec<f64>> = Vec::with_capacity(nt + 1);
    let mut resid: Vec<Vec<f64>> = Vec::with_capacity(nt + 1);
    let mut data_term = 0.0;

    let mut u_prev = a;
    let mut u_cur = vec![0.0; n];
    let mut u_next = vec![0.0; n];
    let mut ku = vec![0.0; n];

    {
        let mut record = |u: &[f64], m: usize| {
            let top = &u[n - nx..];
            let z = zdelta_unchecked(tau * m as f64, t_final, cfg.s_z);
            let w = trapezoid_weight(m, nt, tau);
            let mut row_misfit = 0.0;
            let mut row_resid = Vec::with_capacity(nx);
            for (k, &v) in top.iter().enumerate() {
                let r = v - observed.values[m][k];
                row_misfit += r * r;
                row_resid.push(r * z);
            }
            data_term += 0.5 * grid.h * w * z * row_misfit;
            top_rows.push(top.to_vec());
            bottom_rows.push(u[..nx].to_vec());
            resid.push(row_resid);
        };

        record(&u_prev, 0);
        first_step(&op, domain, src, tau, &u_prev, &mut ku, &mut u_cur);
        record(&u_cur, 1);
        for m in 1..nt {
            forward_step(
                &op,
                domain,
                src,
                tau,
                tg.time(m),
                &u_prev,
                &u_cur,
                &mut ku,
                &mut u_next,
            );
            if u_next
                .iter()
                .any(|v| !v.is_finite() || v.abs() > 1e6 * scale)
            {
                return Err(Error::Unstable { step: m + 1 });
            }
            record(&u_next, m + 1);
            core::mem::swap(&mut u_prev, &mut u_cur);
            core::mem::swap(&mut u_cur, &mut u_next);
        }
    }

    // Backward pass over the leapfrog steps s = nt-1 .. 1: at each step
    // compute lambda^{s+1}, reconstruct u^{s-1}, pair.
    let mut u_hi = u_cur; // u^{s+1}
    let mut u_mid = u_prev; // u^s
    let mut u_lo = vec![0.0; n];
    let mut w_p1 = vec![0.0; n]; // lambda^{s+2}
    let mut w_p2 = vec![0.0; n]; // lambda^{s+3}
    let mut w_cur = vec![0.0; n];
    let mut phi = vec![0.0; n];
    let mut acc_rho = vec![0.0; n];
    let mut acc_p = vec![0.0; n];
    let inv_tau2 = 1.0 / (tau * tau);

    for s in (1..nt).rev() {
        injection(&resid, s + 1, nt, tau, grid.h, n, nx, &mut phi);
        adjoint_step(
            &op,
            domain,
            tau,
            s + 1,
            &phi,
            &w_p1,
            &w_p2,
            &mut ku,
            &mut w_cur,
        );
        op.apply_stiffness(&u_mid, &mut ku);
        for k in nx..n - nx {
            let mass = op.mass[k] * inv_tau2;
            u_lo[k] = (2.0 * mass * u_mid[k] - ku[k]) / mass - u_hi[k];
        }
        u_lo[..nx].copy_from_slice(&bottom_rows[s - 1]);
        u_lo[n - nx..].copy_from_slice(&top_rows[s - 1]);
        for k in 0..n {
            let second_diff = u_hi[k] - 2.0 * u_mid[k] + u_lo[k];
            acc_rho[k] -= op.area[k] * inv_tau2 * w_cur[k] * second_diff;
        }
        op.accumulate_stiffness_sensitivity(&w_cur, &u_mid, -1.0, &mut acc_p);
        core::mem::swap(&mut u_hi, &mut u_mid);
        core::mem::swap(&mut u_mid, &mut u_lo);
        core::mem::swap(&mut w_p2, &mut w_p1);
        core::mem::swap(&mut w_p1, &mut w_cur);
    }

    // lambda^1 and the Taylor-start pairing; u_hi = u^1, u_mid = u^0.
    injection(&resid, 1, nt, tau, grid.h, n, nx, &mut phi);
    adjoint_step(&op, domain, tau, 1, &phi, &w_p1, &w_p2, &mut ku, &mut w_cur);
    pair_taylor_start(&op, tau, &w_cur, &u_hi, &u_mid, &mut acc_rho, &mut acc_p);

    mask_and_add_regularization(field, cfg, grid.h * grid.h, &mut acc_rho, &mut acc_p);
    let total = data_term + regularization(field, grid, cfg);
    Ok(MisfitGradient {
        total,
        data_term,
        g_rho: acc_rho,
        g_p: acc_p,
    })
}

/// `h^2`-weighted inner product, the one matching the density gradients.
pub fn inner_h2(h: f64, a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        acc += x * y;
    }
    h * h * acc
}
