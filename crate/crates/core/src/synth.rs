//! Synthetic observations: clean traces from the true coefficients and the
//! controlled additive-noise model used to contaminate them.

use alloc::vec::Vec;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::field::gaussian_target;
use crate::grid::{Domain2D, Grid2D};
use crate::wave::{solve_forward, ObservationTrace, SourceParams, TimeGrid};
use crate::Result;

/// How the clean observations are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataGrid {
    /// Same discretization as the inversion (the usual inverse-crime
    /// shortcut at desk scale).
    SameGrid,
    /// Generate on the `h/2`, `tau/2` refinement and restrict back, to keep
    /// the inversion honest.
    FineGrid,
}

/// Solve the model problem for one of the Gaussian targets and record the
/// backscattered trace.
pub fn generate_observations(
    test_id: u8,
    domain: &Domain2D,
    grid: &Grid2D,
    tg: &TimeGrid,
    src: &SourceParams,
    data_grid: DataGrid,
) -> Result<ObservationTrace> {
    match data_grid {
        DataGrid::SameGrid => {
            let truth = gaussian_target(test_id, domain, grid)?;
            let hist = solve_forward(&truth, domain, grid, tg, src, false)?;
            Ok(hist.trace)
        }
        DataGrid::FineGrid => {
            let fine_grid = Grid2D {
                h: grid.h * 0.5,
                nx: 2 * grid.nx - 1,
                ny: 2 * grid.ny - 1,
                x1_min: grid.x1_min,
                x2_min: grid.x2_min,
            };
            let fine_tg = TimeGrid::new(tg.tau * 0.5, tg.nt * 2);
            let truth = gaussian_target(test_id, domain, &fine_grid)?;
            let hist = solve_forward(&truth, domain, &fine_grid, &fine_tg, src, false)?;
            // Restrict to the coarse sampling: every other step and node.
            let values: Vec<Vec<f64>> = hist
                .trace
                .values
                .iter()
                .step_by(2)
                .map(|row| row.iter().copied().step_by(2).collect())
                .collect();
            Ok(ObservationTrace {
                values,
                tau: tg.tau,
                nt: tg.nt,
            })
        }
    }
}

/// Contaminate a trace with additive uniform noise:
/// `u'(n, k) = u(n, k) + delta A r(n, k)` with `A = max |u|` and `r` drawn
/// uniformly from `[-1, 1]` by a seeded generator.  `delta = 0` is the
/// identity; (trace, delta, seed) fully determines the output.
pub fn add_noise(trace: &ObservationTrace, delta: f64, seed: u64) -> ObservationTrace {
    if delta == 0.0 {
        return trace.clone();
    }
    let amp = delta * trace.max_abs();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Uniform::new_inclusive(-1.0f64, 1.0f64);
    let values = trace
        .values
        .iter()
        .map(|row| row.iter().map(|v| v + amp * dist.sample(&mut rng)).collect())
        .collect();
    ObservationTrace {
        values,
        tau: trace.tau,
        nt: trace.nt,
    }
}
