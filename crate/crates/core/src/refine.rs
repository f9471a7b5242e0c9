//! Multi-level local refinement: re-invert on dyadically refined grids with
//! the coefficients left free only inside the flagged zone.
//!
//! The indicator flags cells where the reconstructed coefficients vary the
//! fastest; flagged cells are split 2x2.  The solver runs on the globally
//! refined lattice, but outside the flagged zone the coefficients stay
//! pinned to the prolonged coarse reconstruction (and to the known
//! background outside `Omega_1`), which realizes the local refinement
//! semantics on a structured grid.  Refinement is nested: a cell may only
//! be flagged inside the zone refined at the previous level.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::field::{self, CoefficientField};
use crate::grid::{Domain2D, Grid2D};
use crate::optim::{invert, InversionState, InvertConfig};
use crate::wave::{ObservationTrace, SourceParams, TimeGrid};
use crate::Result;

/// Refinement loop parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineParams {
    /// Flagging threshold as a fraction of the maximal indicator.
    pub kappa: f64,
    /// Number of refinement levels to attempt.
    pub levels: usize,
    /// Iteration cap of the re-inversions on refined levels.
    pub n_max: usize,
}

impl Default for RefineParams {
    fn default() -> Self {
        Self {
            kappa: 0.6,
            levels: 0,
            n_max: 10,
        }
    }
}

/// Bookkeeping of one refinement level.
#[derive(Debug, Clone)]
pub struct MeshLevel {
    pub level: usize,
    /// Parent-level cells split 2x2 at this level (cell indices, sorted).
    pub refined_cells: Vec<(usize, usize)>,
}

/// Inversion outcome on one level.
#[derive(Debug, Clone)]
pub struct LevelRun {
    pub mesh: MeshLevel,
    pub grid: Grid2D,
    pub state: InversionState,
    /// Free-node maxima of the reconstruction.
    pub max_rho: f64,
    pub max_p: f64,
    /// Contrast errors against the truth sampled on this level's grid.
    pub contrast_err: Option<(f64, f64)>,
    /// Per-coefficient iteration counts.
    pub n_rho: usize,
    pub n_p: usize,
    /// True when the loop ended here because no cells were flagged.
    pub stopped_early: bool,
}

/// Builds the truth field on an arbitrary grid, for per-level error logs.
pub type TruthBuilder<'a> = &'a dyn Fn(&Domain2D, &Grid2D) -> Result<CoefficientField>;

/// Nodal gradient magnitude by centered differences (one-sided along the
/// boundary).
fn gradient_magnitude(values: &[f64], grid: &Grid2D) -> Vec<f64> {
    let (nx, ny, h) = (grid.nx, grid.ny, grid.h);
    let mut out = vec![0.0; values.len()];
    for j in 0..ny {
        for i in 0..nx {
            let k = grid.idx(i, j);
            let dx = if i == 0 {
                (values[k + 1] - values[k]) / h
            } else if i == nx - 1 {
                (values[k] - values[k - 1]) / h
            } else {
                (values[k + 1] - values[k - 1]) / (2.0 * h)
            };
            let dy = if j == 0 {
                (values[k + nx] - values[k]) / h
            } else if j == ny - 1 {
                (values[k] - values[k - nx]) / h
            } else {
                (values[k + nx] - values[k - nx]) / (2.0 * h)
            };
            out[k] = (dx * dx + dy * dy).sqrt();
        }
    }
    out
}

/// Per-cell refinement indicator: the largest corner value of the two
/// normalized reconstructed-gradient magnitudes.
pub fn error_indicator(field: &CoefficientField, grid: &Grid2D) -> Vec<f64> {
    let grad_rho = gradient_magnitude(&field.rho, grid);
    let grad_p = gradient_magnitude(&field.p, grid);
    let max_rho = grad_rho.iter().fold(0.0f64, |m, &v| m.max(v));
    let max_p = grad_p.iter().fold(0.0f64, |m, &v| m.max(v));
    let norm = |v: f64, m: f64| if m > 0.0 { v / m } else { 0.0 };
    let (nx, ny) = (grid.nx, grid.ny);
    let mut ind = Vec::with_capacity((nx - 1) * (ny - 1));
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            let corners = [
                grid.idx(i, j),
                grid.idx(i + 1, j),
                grid.idx(i, j + 1),
                grid.idx(i + 1, j + 1),
            ];
            let mut best = 0.0f64;
            for &k in &corners {
                best = best.max(norm(grad_rho[k], max_rho) + norm(grad_p[k], max_p));
            }
            ind.push(best);
        }
    }
    ind
}

/// Dyadic refinement of a grid.
pub fn refine_grid(grid: &Grid2D) -> Grid2D {
    Grid2D {
        h: 0.5 * grid.h,
        nx: 2 * grid.nx - 1,
        ny: 2 * grid.ny - 1,
        x1_min: grid.x1_min,
        x2_min: grid.x2_min,
    }
}

/// Bilinear prolongation of nodal values to the dyadic refinement.
/// Coarse-coincident nodes copy exactly, so restriction after prolongation
/// is the identity; interpolated values are convex combinations, so bounds
/// are preserved.
pub fn prolong(values: &[f64], coarse: &Grid2D) -> Vec<f64> {
    let fine = refine_grid(coarse);
    let mut out = vec![0.0; fine.node_count()];
    for j in 0..fine.ny {
        for i in 0..fine.nx {
            let (ci, ri) = (i / 2, i % 2);
            let (cj, rj) = (j / 2, j % 2);
            let v = match (ri, rj) {
                (0, 0) => values[coarse.idx(ci, cj)],
                (1, 0) => 0.5 * (values[coarse.idx(ci, cj)] + values[coarse.idx(ci + 1, cj)]),
                (0, 1) => 0.5 * (values[coarse.idx(ci, cj)] + values[coarse.idx(ci, cj + 1)]),
                _ => {
                    0.25 * (values[coarse.idx(ci, cj)]
                        + values[coarse.idx(ci + 1, cj)]
                        + values[coarse.idx(ci, cj + 1)]
                        + values[coarse.idx(ci + 1, cj + 1)])
                }
            };
            out[fine.idx(i, j)] = v;
        }
    }
    out
}

/// Bilinear interpolation of an observation trace onto the dyadic
/// refinement in both time and space.
pub fn interpolate_trace(observed: &ObservationTrace) -> ObservationTrace {
    let nt_fine = 2 * observed.nt;
    let nk = observed.node_count();
    let nk_fine = 2 * nk - 1;
    let space = |row: &[f64]| -> Vec<f64> {
        let mut out = Vec::with_capacity(nk_fine);
        for i in 0..nk_fine {
            if i % 2 == 0 {
                out.push(row[i / 2]);
            } else {
                out.push(0.5 * (row[i / 2] + row[i / 2 + 1]));
            }
        }
        out
    };
    let mut values = Vec::with_capacity(nt_fine + 1);
    for n in 0..=nt_fine {
        if n % 2 == 0 {
            values.push(space(&observed.values[n / 2]));
        } else {
            let a = space(&observed.values[n / 2]);
            let b = space(&observed.values[n / 2 + 1]);
            values.push(a.iter().zip(b.iter()).map(|(x, y)| 0.5 * (x + y)).collect());
        }
    }
    ObservationTrace {
        values,
        tau: 0.5 * observed.tau,
        nt: nt_fine,
    }
}

/// True for fine nodes covered by at least one flagged parent cell.
fn zone_mask(flagged: &[(usize, usize)], coarse: &Grid2D) -> Vec<bool> {
    let fine = refine_grid(coarse);
    let mut mask = vec![false; fine.node_count()];
    for &(ci, cj) in flagged {
        for dj in 0..=2usize {
            for di in 0..=2usize {
                mask[fine.idx(2 * ci + di, 2 * cj + dj)] = true;
            }
        }
    }
    mask
}

/// Run the base inversion and then `levels` rounds of flag / prolong /
/// re-invert.  Each level halves both the spacing and the time step; the
/// observations are interpolated onto the refined sampling.
#[allow(clippy::too_many_arguments)]
pub fn refine_and_reinvert(
    observed: &ObservationTrace,
    domain: &Domain2D,
    grid: &Grid2D,
    tg: &TimeGrid,
    src: &SourceParams,
    start: CoefficientField,
    truth: Option<TruthBuilder>,
    invert_cfg: &InvertConfig,
    refine: &RefineParams,
) -> Result<Vec<LevelRun>> {
    let mut runs: Vec<LevelRun> = Vec::new();

    let truth_of = |g: &Grid2D| -> Option<CoefficientField> {
        truth.and_then(|build| build(domain, g).ok())
    };

    let base_truth = truth_of(grid);
    let state = invert(
        observed,
        domain,
        grid,
        tg,
        src,
        start,
        base_truth.as_ref(),
        invert_cfg,
    )?;
    runs.push(summarize(
        MeshLevel {
            level: 0,
            refined_cells: Vec::new(),
        },
        grid.clone(),
        state,
        base_truth.as_ref(),
        invert_cfg.grad_tol_rel,
        false,
    ));

    let mut cur_grid = grid.clone();
    let mut cur_tg = *tg;
    let mut cur_obs = observed.clone();
    // Zone of the previous level: free nodes of its reconstruction.
    let mut prev_free = runs[0].state.field.free.clone();

    for level in 1..=refine.levels {
        let prev = runs.last().unwrap();
        let indicator = error_indicator(&prev.state.field, &cur_grid);
        let max_ind = indicator.iter().fold(0.0f64, |m, &v| m.max(v));
        let mut flagged: Vec<(usize, usize)> = Vec::new();
        for cj in 0..cur_grid.ny - 1 {
            for ci in 0..cur_grid.nx - 1 {
                if indicator[cj * (cur_grid.nx - 1) + ci] < refine.kappa * max_ind {
                    continue;
                }
                // Nestedness: only cells whose corners all lie in the
                // previous free zone may be split.
                let inside = [
                    cur_grid.idx(ci, cj),
                    cur_grid.idx(ci + 1, cj),
                    cur_grid.idx(ci, cj + 1),
                    cur_grid.idx(ci + 1, cj + 1),
                ]
                .iter()
                .all(|&k| prev_free[k]);
                if inside {
                    flagged.push((ci, cj));
                }
            }
        }
        if flagged.is_empty() || max_ind == 0.0 {
            let mut last = runs.pop().unwrap();
            last.stopped_early = true;
            runs.push(last);
            break;
        }

        let fine_grid = refine_grid(&cur_grid);
        let zone = zone_mask(&flagged, &cur_grid);
        let rho = prolong(&prev.state.field.rho, &cur_grid);
        let p = prolong(&prev.state.field.p, &cur_grid);
        let mut fine_field = CoefficientField {
            rho,
            p,
            free: vec![false; fine_grid.node_count()],
        };
        for j in 0..fine_grid.ny {
            for i in 0..fine_grid.nx {
                let k = fine_grid.idx(i, j);
                let (x1, x2) = fine_grid.coord(i, j);
                let in_omega1 = domain.omega1.contains_point(x1, x2);
                if !in_omega1 {
                    // Known background outside the inversion subdomain.
                    fine_field.rho[k] = 1.0;
                    fine_field.p[k] = 1.0;
                }
                fine_field.free[k] = in_omega1 && zone[k];
            }
        }

        let fine_tg = TimeGrid::new(0.5 * cur_tg.tau, 2 * cur_tg.nt);
        let fine_obs = interpolate_trace(&cur_obs);
        let fine_truth = truth_of(&fine_grid);
        let level_cfg = InvertConfig {
            n_max: refine.n_max,
            ..*invert_cfg
        };
        let state = invert(
            &fine_obs,
            domain,
            &fine_grid,
            &fine_tg,
            src,
            fine_field,
            fine_truth.as_ref(),
            &level_cfg,
        )?;

        prev_free = state.field.free.clone();
        runs.push(summarize(
            MeshLevel {
                level,
                refined_cells: flagged,
            },
            fine_grid.clone(),
            state,
            fine_truth.as_ref(),
            invert_cfg.grad_tol_rel,
            false,
        ));
        cur_grid = fine_grid;
        cur_tg = fine_tg;
        cur_obs = fine_obs;
    }

    Ok(runs)
}

fn summarize(
    mesh: MeshLevel,
    grid: Grid2D,
    state: InversionState,
    truth: Option<&CoefficientField>,
    grad_tol_rel: f64,
    stopped_early: bool,
) -> LevelRun {
    let (max_rho, max_p) = state.field.max_free();
    let contrast_err = truth.and_then(|t| field::contrast_error(&state.field, t).ok());
    let (n_rho, n_p) = state.block_iteration_counts(grad_tol_rel);
    LevelRun {
        mesh,
        grid,
        state,
        max_rho,
        max_p,
        contrast_err,
        n_rho,
        n_p,
        stopped_early,
    }
}
