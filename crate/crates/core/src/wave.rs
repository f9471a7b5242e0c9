//! Explicit time-domain solver for `rho u_tt - div(p grad u) = 0` with the
//! mixed boundary conditions of the model problem: a plane-wave Neumann
//! source on the top boundary during the source window, first-order
//! absorbing conditions on top (after the window) and bottom, and zero
//! Neumann on the sides.
//!
//! The spatial operator is assembled in conservation form on node-centered
//! control volumes (half cells along the boundary, quarter cells at the
//! corners) with arithmetic face averages of p.  Boundary conditions enter
//! as boundary fluxes, which turns the scheme into
//!
//! ```text
//!     M u'' + C(t) u' + K u = F(t)
//! ```
//!
//! with diagonal mass `M`, diagonal nonnegative damping `C` supported on the
//! absorbing rows, symmetric stiffness `K`, and the source flux `F`.  Time
//! stepping is leapfrog with centered damping, so the discrete energy
//!
//! ```text
//!     E^{n+1/2} = 1/2 |u^{n+1}-u^n|_M^2 / tau^2 + 1/2 (u^{n+1}, K u^n)
//! ```
//!
//! decreases monotonically once the source is off.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::field::CoefficientField;
use crate::grid::{observation_nodes, Domain2D, Grid2D};
use crate::{Error, Result};

/// Relative amplitude above which the march is declared unstable.
const BLOWUP_FACTOR: f64 = 1e6;

// ---------------------------------------------------------------------------
// Time grid and source
// ---------------------------------------------------------------------------

/// Uniform time grid on `[0, T]` with `T = tau * nt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub tau: f64,
    pub nt: usize,
}

impl TimeGrid {
    pub fn new(tau: f64, nt: usize) -> Self {
        Self { tau, nt }
    }

    /// Time grid covering `[0, t_final]` with the largest step <= `tau_hint`
    /// that divides `t_final` into whole steps.
    pub fn from_final_time(tau_hint: f64, t_final: f64) -> Self {
        let nt = (t_final / tau_hint).round().max(1.0) as usize;
        Self {
            tau: t_final / nt as f64,
            nt,
        }
    }

    pub fn t_final(&self) -> f64 {
        self.tau * self.nt as f64
    }

    pub fn time(&self, n: usize) -> f64 {
        self.tau * n as f64
    }
}

impl Default for TimeGrid {
    /// `T = 2.0`, `tau = 0.002`, i.e. 1000 steps.
    fn default() -> Self {
        Self {
            tau: 0.002,
            nt: 1000,
        }
    }
}

/// Plane-wave source parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceParams {
    pub omega_f: f64,
    pub amplitude: f64,
}

impl Default for SourceParams {
    fn default() -> Self {
        Self {
            omega_f: 40.0,
            amplitude: 1.0,
        }
    }
}

/// One period of `sin(omega_f t)`, zero outside `(0, 2 pi / omega_f)`.
pub fn source_f(t: f64, omega_f: f64) -> f64 {
    if t > 0.0 && t < 2.0 * core::f64::consts::PI / omega_f {
        (omega_f * t).sin()
    } else {
        0.0
    }
}

/// Initial displacement `a(x) = exp(-(x1^2 + x2^2))`.
pub fn initial_a(x1: f64, x2: f64) -> f64 {
    (-(x1 * x1 + x2 * x2)).exp()
}

/// Sample the initial displacement on the whole lattice.
pub fn sample_initial_a(grid: &Grid2D) -> Vec<f64> {
    let mut a = Vec::with_capacity(grid.node_count());
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let (x1, x2) = grid.coord(i, j);
            a.push(initial_a(x1, x2));
        }
    }
    a
}

/// Largest stable time step of the explicit scheme,
/// `tau_max = h / (c_max sqrt(2))` with `c_max = max sqrt(p / rho)`.
pub fn cfl_max_tau(grid: &Grid2D, field: &CoefficientField) -> f64 {
    grid.h / (field.max_wave_speed() * core::f64::consts::SQRT_2)
}

// ---------------------------------------------------------------------------
// Assembled operator
// ---------------------------------------------------------------------------

/// Mass, stiffness and boundary coefficients of the semi-discrete system.
#[derive(Debug, Clone)]
pub struct WaveOperator {
    pub nx: usize,
    pub ny: usize,
    pub h: f64,
    /// Diagonal mass `rho * cell area`.
    pub mass: Vec<f64>,
    /// Control-volume areas (h^2, halved along edges, quartered at corners).
    pub area: Vec<f64>,
    /// Horizontal face conductances, face `(i,j)-(i+1,j)` at `j*(nx-1)+i`.
    fx: Vec<f64>,
    /// Vertical face conductances, face `(i,j)-(i,j+1)` at `j*nx+i`.
    fy: Vec<f64>,
    /// Boundary-flux coefficient `p h` per top-row node (zero at corners).
    pub top_coef: Vec<f64>,
    /// Boundary-flux coefficient `p h` per bottom-row node (zero at corners).
    pub bottom_coef: Vec<f64>,
}

impl WaveOperator {
    pub fn new(field: &CoefficientField, grid: &Grid2D) -> Self {
        let (nx, ny, h) = (grid.nx, grid.ny, grid.h);
        let n = nx * ny;
        let mut mass = Vec::with_capacity(n);
        let mut areas = Vec::with_capacity(n);
        for j in 0..ny {
            for i in 0..nx {
                let mut area = h * h;
                if i == 0 || i == nx - 1 {
                    area *= 0.5;
                }
                if j == 0 || j == ny - 1 {
                    area *= 0.5;
                }
                areas.push(area);
                mass.push(field.rho[j * nx + i] * area);
            }
        }
        let mut fx = vec![0.0; (nx - 1) * ny];
        for j in 0..ny {
            let ell = if j == 0 || j == ny - 1 { 0.5 } else { 1.0 };
            for i in 0..nx - 1 {
                let k = j * nx + i;
                fx[j * (nx - 1) + i] = 0.5 * (field.p[k] + field.p[k + 1]) * ell;
            }
        }
        let mut fy = vec![0.0; nx * (ny - 1)];
        for j in 0..ny - 1 {
            for i in 0..nx {
                let ell = if i == 0 || i == nx - 1 { 0.5 } else { 1.0 };
                let k = j * nx + i;
                fy[k] = 0.5 * (field.p[k] + field.p[k + nx]) * ell;
            }
        }
        let mut top_coef = vec![0.0; nx];
        let mut bottom_coef = vec![0.0; nx];
        for i in 1..nx - 1 {
            top_coef[i] = field.p[(ny - 1) * nx + i] * h;
            bottom_coef[i] = field.p[i] * h;
        }
        Self {
            nx,
            ny,
            h,
            mass,
            area: areas,
            fx,
            fy,
            top_coef,
            bottom_coef,
        }
    }

    /// `out = K u` (symmetric positive semi-definite stiffness).
    pub fn apply_stiffness(&self, u: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        let nx = self.nx;
        for j in 0..self.ny {
            let row = j * nx;
            let frow = j * (nx - 1);
            for i in 0..nx - 1 {
                let k = row + i;
                let flux = self.fx[frow + i] * (u[k] - u[k + 1]);
                out[k] += flux;
                out[k + 1] -= flux;
            }
        }
        for j in 0..self.ny - 1 {
            let row = j * nx;
            for i in 0..nx {
                let k = row + i;
                let flux = self.fy[k] * (u[k] - u[k + nx]);
                out[k] += flux;
                out[k + nx] -= flux;
            }
        }
    }

    /// Bilinear stiffness form `u^T K v`, accumulated face by face.
    pub fn stiffness_inner(&self, u: &[f64], v: &[f64]) -> f64 {
        let nx = self.nx;
        let mut acc = 0.0;
        for j in 0..self.ny {
            let row = j * nx;
            let frow = j * (nx - 1);
            for i in 0..nx - 1 {
                let k = row + i;
                acc += self.fx[frow + i] * (u[k] - u[k + 1]) * (v[k] - v[k + 1]);
            }
        }
        for j in 0..self.ny - 1 {
            let row = j * nx;
            for i in 0..nx {
                let k = row + i;
                acc += self.fy[k] * (u[k] - u[k + nx]) * (v[k] - v[k + nx]);
            }
        }
        acc
    }

    /// Derivative of `w^T K(p) u` with respect to the nodal p values,
    /// accumulated into `out` with the given factor.
    pub fn accumulate_stiffness_sensitivity(
        &self,
        w: &[f64],
        u: &[f64],
        factor: f64,
        out: &mut [f64],
    ) {
        let nx = self.nx;
        for j in 0..self.ny {
            let ell = if j == 0 || j == self.ny - 1 { 0.5 } else { 1.0 };
            let row = j * nx;
            for i in 0..nx - 1 {
                let k = row + i;
                let v = 0.5 * ell * (w[k] - w[k + 1]) * (u[k] - u[k + 1]) * factor;
                out[k] += v;
                out[k + 1] += v;
            }
        }
        for j in 0..self.ny - 1 {
            let row = j * nx;
            for i in 0..nx {
                let ell = if i == 0 || i == nx - 1 { 0.5 } else { 1.0 };
                let k = row + i;
                let v = 0.5 * ell * (w[k] - w[k + nx]) * (u[k] - u[k + nx]) * factor;
                out[k] += v;
                out[k + nx] += v;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Histories and traces
// ---------------------------------------------------------------------------

/// Field values recorded on the observation nodes at every time step.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationTrace {
    /// `values[n][k]`: step `n`, observation node `k` (x1-ascending).
    pub values: Vec<Vec<f64>>,
    pub tau: f64,
    pub nt: usize,
}

impl ObservationTrace {
    pub fn node_count(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn max_abs(&self) -> f64 {
        let mut m = 0.0f64;
        for row in &self.values {
            for &v in row {
                m = m.max(v.abs());
            }
        }
        m
    }
}

/// Result of a forward (or adjoint) march.
#[derive(Debug, Clone)]
pub struct WaveHistory {
    /// Full field frames `u[n][node]`; empty unless requested.
    pub frames: Vec<Vec<f64>>,
    /// Trace on the observation nodes.
    pub trace: ObservationTrace,
}

// ---------------------------------------------------------------------------
// Forward solve
// ---------------------------------------------------------------------------

/// Extra solver switches; `Default` is the safe configuration.
#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub keep_history: bool,
    /// Refuse to run when `tau` exceeds the CFL bound.  Disabling this is
    /// only useful to demonstrate the instability detector.
    pub enforce_cfl: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            keep_history: false,
            enforce_cfl: true,
        }
    }
}

/// March one leapfrog step: given `u^{n-1}`, `u^n` at time `t_n = n tau`,
/// write `u^{n+1}` into `u_next`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn forward_step(
    op: &WaveOperator,
    domain: &Domain2D,
    src: &SourceParams,
    tau: f64,
    t_n: f64,
    u_prev: &[f64],
    u_cur: &[f64],
    scratch_ku: &mut [f64],
    u_next: &mut [f64],
) {
    op.apply_stiffness(u_cur, scratch_ku);
    let inv_tau2 = 1.0 / (tau * tau);
    let nx = op.nx;
    let n = u_cur.len();
    let top_damping = t_n > domain.t1;
    let f_val = if t_n <= domain.t1 {
        src.amplitude * source_f(t_n, src.omega_f)
    } else {
        0.0
    };
    for k in 0..n {
        let m = op.mass[k] * inv_tau2;
        let mut c = 0.0;
        let mut flux = 0.0;
        if k < nx {
            c = op.bottom_coef[k];
        } else if k >= n - nx {
            let i = k - (n - nx);
            if top_damping {
                c = op.top_coef[i];
            } else {
                flux = op.top_coef[i] * f_val;
            }
        }
        let half_c = 0.5 * c / tau;
        u_next[k] = (2.0 * m * u_cur[k] - scratch_ku[k] - (m - half_c) * u_prev[k] + flux)
            / (m + half_c);
    }
}

/// Taylor start consistent with `u_t(0) = 0`:
/// `u^1 = u^0 + tau^2/2 M^{-1} (F(0) - K u^0)`.
pub(crate) fn first_step(
    op: &WaveOperator,
    domain: &Domain2D,
    src: &SourceParams,
    tau: f64,
    u0: &[f64],
    scratch_ku: &mut [f64],
    u1: &mut [f64],
) {
    op.apply_stiffness(u0, scratch_ku);
    let n = u0.len();
    let nx = op.nx;
    let f_val = if 0.0 <= domain.t1 {
        src.amplitude * source_f(0.0, src.omega_f)
    } else {
        0.0
    };
    for k in 0..n {
        let mut flux = 0.0;
        if k >= n - nx {
            flux = op.top_coef[k - (n - nx)] * f_val;
        }
        u1[k] = u0[k] + 0.5 * tau * tau * (flux - scratch_ku[k]) / op.mass[k];
    }
}

fn check_finite(u: &[f64], step: usize, scale: f64) -> Result<()> {
    for &v in u {
        if !v.is_finite() || v.abs() > BLOWUP_FACTOR * scale {
            return Err(Error::Unstable { step });
        }
    }
    Ok(())
}

/// Solve the model problem from the sampled default initial displacement.
pub fn solve_forward(
    field: &CoefficientField,
    domain: &Domain2D,
    grid: &Grid2D,
    tg: &TimeGrid,
    src: &SourceParams,
    keep_history: bool,
) -> Result<WaveHistory> {
    let a = sample_initial_a(grid);
    solve_forward_with(
        field,
        domain,
        grid,
        tg,
        src,
        &a,
        SolverOptions {
            keep_history,
            ..SolverOptions::default()
        },
    )
}

/// Solve the model problem from arbitrary initial displacement `a`.
pub fn solve_forward_with(
    field: &CoefficientField,
    domain: &Domain2D,
    grid: &Grid2D,
    tg: &TimeGrid,
    src: &SourceParams,
    a: &[f64],
    opts: SolverOptions,
) -> Result<WaveHistory> {
    let n = grid.node_count();
    if a.len() != n || field.rho.len() != n {
        return Err(Error::Shape(alloc::format!(
            "initial data or field does not match the grid ({n} nodes)"
        )));
    }
    if opts.enforce_cfl {
        let tau_max = cfl_max_tau(grid, field);
        if tg.tau > tau_max {
            return Err(Error::CflViolation {
                tau: tg.tau,
                tau_max,
            });
        }
    }
    let op = WaveOperator::new(field, grid);
    let obs = observation_nodes(grid);
    let scale = 1.0 + a.iter().fold(0.0f64, |m, &v| m.max(v.abs())) + src.amplitude.abs();

    let mut u_prev = a.to_vec();
    let mut u_cur = vec![0.0; n];
    let mut u_next = vec![0.0; n];
    let mut ku = vec![0.0; n];

    let mut trace_rows: Vec<Vec<f64>> = Vec::with_capacity(tg.nt + 1);
    let mut frames: Vec<Vec<f64>> = Vec::new();
    let record = |u: &[f64], rows: &mut Vec<Vec<f64>>| {
        rows.push(obs.iter().map(|&(i, j)| u[grid.idx(i, j)]).collect());
    };

    record(&u_prev, &mut trace_rows);
    if opts.keep_history {
        frames.push(u_prev.clone());
    }

    first_step(&op, domain, src, tg.tau, &u_prev, &mut ku, &mut u_cur);
    check_finite(&u_cur, 1, scale)?;
    record(&u_cur, &mut trace_rows);
    if opts.keep_history {
        frames.push(u_cur.clone());
    }

    for nstep in 1..tg.nt {
        forward_step(
            &op,
            domain,
            src,
            tg.tau,
            tg.time(nstep),
            &u_prev,
            &u_cur,
            &mut ku,
            &mut u_next,
        );
        check_finite(&u_next, nstep + 1, scale)?;
        record(&u_next, &mut trace_rows);
        if opts.keep_history {
            frames.push(u_next.clone());
        }
        core::mem::swap(&mut u_prev, &mut u_cur);
        core::mem::swap(&mut u_cur, &mut u_next);
    }

    Ok(WaveHistory {
        frames,
        trace: ObservationTrace {
            values: trace_rows,
            tau: tg.tau,
            nt: tg.nt,
        },
    })
}

/// Discrete energies `E^{n+1/2}` of a stored march, one value per step pair.
pub fn energy_series(frames: &[Vec<f64>], op: &WaveOperator, tau: f64) -> Vec<f64> {
    let mut energies = Vec::with_capacity(frames.len().saturating_sub(1));
    for w in frames.windows(2) {
        let (u0, u1) = (&w[0], &w[1]);
        let mut kinetic = 0.0;
        for k in 0..u0.len() {
            let v = (u1[k] - u0[k]) / tau;
            kinetic += op.mass[k] * v * v;
        }
        let potential = op.stiffness_inner(u1, u0);
        energies.push(0.5 * kinetic + 0.5 * potential);
    }
    energies
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::gaussian_target;
    use crate::grid::{build_domain, DomainConfig, Rect};

    fn default_setup() -> (Domain2D, Grid2D) {
        build_domain(&DomainConfig::default()).unwrap()
    }

    fn small_setup() -> (Domain2D, Grid2D) {
        let cfg = DomainConfig {
            outer: Rect::new(0.0, 3.0, 0.0, 1.8),
            inner: Rect::new(0.2, 2.8, 0.2, 1.6),
            omega1: Rect::new(0.2, 2.8, 0.9, 1.6),
            h: 0.1,
            t1: 2.0 * core::f64::consts::PI / 40.0,
        };
        build_domain(&cfg).unwrap()
    }

    #[test]
    fn cfl_homogeneous_matches_formula() {
        let (domain, grid) = default_setup();
        let field = CoefficientField::background(&domain, &grid);
        let tau_max = cfl_max_tau(&grid, &field);
        assert!((tau_max - 0.02 / core::f64::consts::SQRT_2).abs() < 1e-12);
        assert!(0.002 < tau_max, "the reference time step must be stable");
    }

    #[test]
    fn cfl_halves_when_wave_speed_doubles() {
        let (domain, grid) = default_setup();
        let base = CoefficientField::background(&domain, &grid);
        let mut fast = base.clone();
        for k in 0..fast.p.len() {
            if fast.free[k] {
                fast.p[k] = 4.0;
            }
        }
        let t0 = cfl_max_tau(&grid, &base);
        let t1 = cfl_max_tau(&grid, &fast);
        assert!((t1 - 0.5 * t0).abs() < 1e-12);
    }

    #[test]
    fn source_examples() {
        let w = 40.0;
        assert_eq!(source_f(0.0, w), 0.0);
        assert!((source_f(core::f64::consts::PI / (2.0 * w), w) - 1.0).abs() < 1e-12);
        assert_eq!(source_f(2.0 * core::f64::consts::PI / w + 1e-9, w), 0.0);
    }

    #[test]
    fn initial_a_examples() {
        assert_eq!(initial_a(0.0, 0.0), 1.0);
        assert!((initial_a(1.0, 0.0) - (-1.0f64).exp()).abs() < 1e-15);
        // Lattice supremum sits at the node nearest the origin.
        let (_, grid) = default_setup();
        let a = sample_initial_a(&grid);
        let mut best = (0usize, f64::NEG_INFINITY);
        for (k, &v) in a.iter().enumerate() {
            if v > best.1 {
                best = (k, v);
            }
        }
        let (i0, j0) = grid.index_of(0.0, 0.0);
        assert_eq!(best.0, grid.idx(i0, j0));
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let (domain, grid) = small_setup();
        let field = CoefficientField::background(&domain, &grid);
        let tg = TimeGrid::new(0.02, 50);
        let src = SourceParams {
            omega_f: 40.0,
            amplitude: 0.0,
        };
        let zero = vec![0.0; grid.node_count()];
        let hist = solve_forward_with(
            &field,
            &domain,
            &grid,
            &tg,
            &src,
            &zero,
            SolverOptions {
                keep_history: true,
                enforce_cfl: true,
            },
        )
        .unwrap();
        for frame in &hist.frames {
            for &v in frame {
                assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn solution_is_linear_in_initial_data() {
        let (domain, grid) = small_setup();
        let field = gaussian_target(1, &domain, &grid)
            .unwrap_or_else(|_| CoefficientField::background(&domain, &grid));
        let tg = TimeGrid::new(0.02, 60);
        let src = SourceParams {
            omega_f: 40.0,
            amplitude: 0.0,
        };
        let opts = SolverOptions {
            keep_history: false,
            enforce_cfl: true,
        };
        let a1 = sample_initial_a(&grid);
        let a2: Vec<f64> = (0..grid.node_count()).map(|k| (k as f64 * 0.1).sin()).collect();
        let sum: Vec<f64> = a1.iter().zip(&a2).map(|(x, y)| x + y).collect();
        let scaled: Vec<f64> = a1.iter().map(|x| 3.0 * x).collect();

        let t1 = solve_forward_with(&field, &domain, &grid, &tg, &src, &a1, opts).unwrap();
        let t2 = solve_forward_with(&field, &domain, &grid, &tg, &src, &a2, opts).unwrap();
        let ts = solve_forward_with(&field, &domain, &grid, &tg, &src, &sum, opts).unwrap();
        let tsc = solve_forward_with(&field, &domain, &grid, &tg, &src, &scaled, opts).unwrap();

        let amp = t1.trace.max_abs().max(t2.trace.max_abs()).max(1e-300);
        for n in 0..=tg.nt {
            for k in 0..t1.trace.node_count() {
                let add = t1.trace.values[n][k] + t2.trace.values[n][k];
                assert!(
                    (ts.trace.values[n][k] - add).abs() <= 1e-12 * amp,
                    "additivity broken at ({n}, {k})"
                );
                let sc = 3.0 * t1.trace.values[n][k];
                assert!((tsc.trace.values[n][k] - sc).abs() <= 1e-12 * amp);
            }
        }
    }

    #[test]
    fn mirror_symmetric_medium_reflects_the_trace() {
        let (domain, grid) = default_setup();
        let field = gaussian_target(1, &domain, &grid).unwrap();
        let mut mirrored = field.clone();
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let k = grid.idx(i, j);
                let km = grid.idx(grid.nx - 1 - i, j);
                mirrored.rho[k] = field.rho[km];
                mirrored.p[k] = field.p[km];
                mirrored.free[k] = field.free[km];
            }
        }
        let tg = TimeGrid::new(0.002, 200);
        let src = SourceParams::default();
        let t = solve_forward(&field, &domain, &grid, &tg, &src, false).unwrap();
        let tm = solve_forward(&mirrored, &domain, &grid, &tg, &src, false).unwrap();
        let nx = grid.nx;
        // The node coordinates themselves are only mirror-symmetric to
        // rounding, so compare traces at rounding accuracy.
        let amp = t.trace.max_abs();
        for n in 0..=tg.nt {
            for k in 0..nx {
                let d = (t.trace.values[n][k] - tm.trace.values[n][nx - 1 - k]).abs();
                assert!(d <= 1e-12 * amp, "mirror mismatch at step {n}, node {k}: {d}");
            }
        }
    }

    #[test]
    fn energy_is_non_increasing_after_the_source_window() {
        let (domain, grid) = default_setup();
        let field = CoefficientField::background(&domain, &grid);
        let tg = TimeGrid::default();
        let src = SourceParams::default();
        let hist = solve_forward(&field, &domain, &grid, &tg, &src, true).unwrap();
        let op = WaveOperator::new(&field, &grid);
        let energies = energy_series(&hist.frames, &op, tg.tau);
        assert_eq!(energies.len(), tg.nt);
        let n_start = (domain.t1 / tg.tau).ceil() as usize + 2;
        let mut checked = 0usize;
        for n in n_start..energies.len() - 1 {
            assert!(
                energies[n + 1] <= energies[n] * (1.0 + 1e-10),
                "energy increased at step {n}: {} -> {}",
                energies[n],
                energies[n + 1]
            );
            checked += 1;
        }
        assert!(checked > 800);
        assert!(energies[n_start] > 0.0);
    }

    #[test]
    fn cfl_violation_is_refused() {
        let (domain, grid) = default_setup();
        let field = CoefficientField::background(&domain, &grid);
        let tg = TimeGrid::new(0.02, 1000);
        let src = SourceParams::default();
        match solve_forward(&field, &domain, &grid, &tg, &src, false) {
            Err(Error::CflViolation { .. }) => {}
            other => panic!("expected CFL refusal, got {other:?}"),
        }
    }

    #[test]
    fn forced_cfl_violation_blows_up_within_100_steps() {
        let (domain, grid) = default_setup();
        let field = CoefficientField::background(&domain, &grid);
        let tg = TimeGrid::new(0.02, 1000);
        let src = SourceParams::default();
        let a = sample_initial_a(&grid);
        let result = solve_forward_with(
            &field,
            &domain,
            &grid,
            &tg,
            &src,
            &a,
            SolverOptions {
                keep_history: false,
                enforce_cfl: false,
            },
        );
        match result {
            Err(Error::Unstable { step }) => {
                assert!(step <= 100, "instability detected only at step {step}");
            }
            other => panic!("expected instability, got {other:?}"),
        }
    }

    #[test]
    fn trace_has_expected_dimensions() {
        let (domain, grid) = small_setup();
        let field = CoefficientField::background(&domain, &grid);
        let tg = TimeGrid::new(0.02, 40);
        let src = SourceParams::default();
        let hist = solve_forward(&field, &domain, &grid, &tg, &src, false).unwrap();
        assert_eq!(hist.trace.values.len(), tg.nt + 1);
        assert_eq!(hist.trace.node_count(), grid.nx);
        for row in &hist.trace.values {
            for &v in row {
                assert!(v.is_finite());
            }
        }
    }
}
