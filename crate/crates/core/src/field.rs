//! Coefficient fields, the admissible box, and the Gaussian ground truths.
//!
//! The admissible set is `1 <= rho <= 10`, `1 <= p <= 5` on the free nodes
//! (the inversion subdomain `Omega_1`); outside it both coefficients are
//! known and pinned.  The four test targets are sums of narrow Gaussians of
//! amplitude 4 (for rho) and 2 (for p) with width parameter 0.001.

use alloc::format;
use alloc::vec::Vec;

use num_traits::Float;

use crate::grid::{Domain2D, Grid2D};
use crate::{Error, Result};

pub const RHO_MIN: f64 = 1.0;
pub const RHO_MAX: f64 = 10.0;
pub const P_MIN: f64 = 1.0;
pub const P_MAX: f64 = 5.0;

/// Gaussian amplitude added to the rho background.
pub const AMP_RHO: f64 = 4.0;
/// Gaussian amplitude added to the p background.
pub const AMP_P: f64 = 2.0;
/// Width parameter of every Gaussian: `exp(-r^2 / WIDTH)`.
pub const WIDTH: f64 = 0.001;

const CENTERS_TEST1: [(f64, f64); 2] = [(0.3, 0.3), (0.0, 0.4)];
const CENTERS_TEST2: [(f64, f64); 3] = [(0.3, 0.3), (0.0, 0.4), (-0.3, 0.2)];
const CENTERS_TEST3: [(f64, f64); 4] = [(0.3, 0.3), (0.0, 0.4), (-0.3, 0.2), (-0.15, 0.3)];
const CENTERS_TEST4: [(f64, f64); 4] = [(0.3, 0.3), (0.0, 0.4), (-0.3, 0.2), (0.0, 0.2)];

/// Gaussian centers of one of the four tests.  Test 4 stacks two blobs on
/// the vertical axis, one under the other.
pub fn gaussian_centers(test_id: u8) -> Result<&'static [(f64, f64)]> {
    match test_id {
        1 => Ok(&CENTERS_TEST1),
        2 => Ok(&CENTERS_TEST2),
        3 => Ok(&CENTERS_TEST3),
        4 => Ok(&CENTERS_TEST4),
        other => Err(Error::Config(format!(
            "unknown test id {other}; expected 1..=4"
        ))),
    }
}

/// Nodal coefficient pair with the free/frozen mask.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientField {
    pub rho: Vec<f64>,
    pub p: Vec<f64>,
    /// `true` where the coefficients are unknowns of the inversion.
    pub free: Vec<bool>,
}

impl CoefficientField {
    /// Homogeneous background `rho = p = 1` with the free mask given by
    /// membership in `Omega_1`.
    pub fn background(domain: &Domain2D, grid: &Grid2D) -> Self {
        let n = grid.node_count();
        let mut free = Vec::with_capacity(n);
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let (x1, x2) = grid.coord(i, j);
                free.push(domain.omega1.contains_point(x1, x2));
            }
        }
        Self {
            rho: alloc::vec![1.0; n],
            p: alloc::vec![1.0; n],
            free,
        }
    }

    /// Number of free nodes.
    pub fn free_count(&self) -> usize {
        self.free.iter().filter(|&&f| f).count()
    }

    /// Largest wave speed `sqrt(p / rho)` over all nodes.
    pub fn max_wave_speed(&self) -> f64 {
        let mut c2_max: f64 = 0.0;
        for (r, p) in self.rho.iter().zip(self.p.iter()) {
            c2_max = c2_max.max(p / r);
        }
        c2_max.sqrt()
    }

    /// Maximum of rho and of p over the free nodes.
    pub fn max_free(&self) -> (f64, f64) {
        let mut mr = f64::NEG_INFINITY;
        let mut mp = f64::NEG_INFINITY;
        for k in 0..self.rho.len() {
            if self.free[k] {
                mr = mr.max(self.rho[k]);
                mp = mp.max(self.p[k]);
            }
        }
        (mr, mp)
    }
}

/// Sample one of the four Gaussian targets on the lattice.  Free nodes get
/// the exact nodal value of the sum of Gaussians; frozen nodes are exactly 1.
pub fn gaussian_target(test_id: u8, domain: &Domain2D, grid: &Grid2D) -> Result<CoefficientField> {
    let centers = gaussian_centers(test_id)?;
    let mut field = CoefficientField::background(domain, grid);
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let k = grid.idx(i, j);
            if !field.free[k] {
                continue;
            }
            let (x1, x2) = grid.coord(i, j);
            let mut bump = 0.0;
            for &(c1, c2) in centers {
                let r2 = (x1 - c1) * (x1 - c1) + (x2 - c2) * (x2 - c2);
                bump += (-r2 / WIDTH).exp();
            }
            field.rho[k] = 1.0 + AMP_RHO * bump;
            field.p[k] = 1.0 + AMP_P * bump;
        }
    }
    Ok(field)
}

/// Project onto the admissible set: componentwise clamp on free nodes,
/// frozen nodes reset to the known background value 1.  Idempotent.
pub fn project_admissible(field: &mut CoefficientField) {
    for k in 0..field.rho.len() {
        if field.free[k] {
            field.rho[k] = field.rho[k].clamp(RHO_MIN, RHO_MAX);
            field.p[k] = field.p[k].clamp(P_MIN, P_MAX);
        } else {
            field.rho[k] = 1.0;
            field.p[k] = 1.0;
        }
    }
}

/// Relative error (in percent) of the maximal contrast over `Omega_1`,
/// separately for rho and p.
pub fn contrast_error(rec: &CoefficientField, truth: &CoefficientField) -> Result<(f64, f64)> {
    if rec.rho.len() != truth.rho.len() || rec.free.len() != truth.free.len() {
        return Err(Error::Shape(format!(
            "field size mismatch: {} vs {}",
            rec.rho.len(),
            truth.rho.len()
        )));
    }
    let (rec_r, rec_p) = rec.max_free();
    let (tru_r, tru_p) = truth.max_free();
    Ok((
        100.0 * (rec_r - tru_r).abs() / tru_r,
        100.0 * (rec_p - tru_p).abs() / tru_p,
    ))
}

/// Strict local maxima of `values` over the free nodes with the given
/// prominence above the background value 1, merged when closer than
/// `min_separation`.  Returns node indices sorted by descending value.
pub fn distinct_maxima(
    values: &[f64],
    free: &[bool],
    grid: &Grid2D,
    prominence: f64,
    min_separation: f64,
) -> Vec<(usize, usize)> {
    let mut peaks: Vec<(usize, usize, f64)> = Vec::new();
    for j in 1..grid.ny - 1 {
        for i in 1..grid.nx - 1 {
            let k = grid.idx(i, j);
            if !free[k] {
                continue;
            }
            let v = values[k];
            if v < 1.0 + prominence {
                continue;
            }
            let mut is_max = true;
            'neigh: for dj in -1isize..=1 {
                for di in -1isize..=1 {
                    if di == 0 && dj == 0 {
                        continue;
                    }
                    let ni = (i as isize + di) as usize;
                    let nj = (j as isize + dj) as usize;
                    if values[grid.idx(ni, nj)] >= v {
                        is_max = false;
                        break 'neigh;
                    }
                }
            }
            if is_max {
                peaks.push((i, j, v));
            }
        }
    }
    peaks.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap());
    let mut kept: Vec<(usize, usize)> = Vec::new();
    for (i, j, _) in peaks {
        let (x1, x2) = grid.coord(i, j);
        let close = kept.iter().any(|&(pi, pj)| {
            let (q1, q2) = grid.coord(pi, pj);
            ((x1 - q1) * (x1 - q1) + (x2 - q2) * (x2 - q2)).sqrt() < min_separation
        });
        if !close {
            kept.push((i, j));
        }
    }
    kept
}
