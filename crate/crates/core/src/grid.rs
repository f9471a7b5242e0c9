//! Computational rectangle, its decomposition and the uniform node lattice.
//!
//! The outer rectangle `Omega` is split into an interior rectangle
//! `Omega_FEM` (where coefficients may differ from the background) and the
//! surrounding frame `Omega_FDM`; `Omega_FEM` itself contains the inversion
//! subdomain `Omega_1`.  Coefficients are unknown only inside `Omega_1` and
//! pinned to 1 everywhere else.  The split is geometric bookkeeping on a
//! single uniform grid; the boundary of the outer rectangle is partitioned
//! into the top part `Gamma_1` (backscattering/observation side), the bottom
//! part `Gamma_2` and the two vertical sides `Gamma_3`.

use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

use num_traits::Float;

use crate::{Error, Result};

/// Axis-aligned rectangle `[x1_min, x1_max] x [x2_min, x2_max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x1_min: f64,
    pub x1_max: f64,
    pub x2_min: f64,
    pub x2_max: f64,
}

impl Rect {
    pub fn new(x1_min: f64, x1_max: f64, x2_min: f64, x2_max: f64) -> Self {
        Self {
            x1_min,
            x1_max,
            x2_min,
            x2_max,
        }
    }

    pub fn width(&self) -> f64 {
        self.x1_max - self.x1_min
    }

    pub fn height(&self) -> f64 {
        self.x2_max - self.x2_min
    }

    /// True if `other` lies inside `self` with strictly positive margin on
    /// every side.
    pub fn strictly_contains(&self, other: &Rect) -> bool {
        other.x1_min > self.x1_min
            && other.x1_max < self.x1_max
            && other.x2_min > self.x2_min
            && other.x2_max < self.x2_max
    }

    /// True if `other` lies inside `self` (boundaries may touch).
    pub fn contains(&self, other: &Rect) -> bool {
        other.x1_min >= self.x1_min
            && other.x1_max <= self.x1_max
            && other.x2_min >= self.x2_min
            && other.x2_max <= self.x2_max
    }

    /// True if the point `(x1, x2)` lies in the closed rectangle.
    pub fn contains_point(&self, x1: f64, x2: f64) -> bool {
        x1 >= self.x1_min && x1 <= self.x1_max && x2 >= self.x2_min && x2 <= self.x2_max
    }
}

/// Boundary-segment label of a node on the outer boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryLabel {
    /// Top row: source injection and backscattering observations.
    Gamma1,
    /// Bottom row: absorbing.
    Gamma2,
    /// Left and right columns, corners included: zero Neumann.
    Gamma3,
}

/// Domain decomposition of the computational rectangle.
#[derive(Debug, Clone, PartialEq)]
pub struct Domain2D {
    /// The whole computational rectangle `Omega`.
    pub outer: Rect,
    /// `Omega_FEM`, strictly inside `outer`; the frame is `Omega_FDM`.
    pub inner: Rect,
    /// Inversion subdomain `Omega_1 <= inner`; `Omega_2 = inner \ omega1`.
    pub omega1: Rect,
    /// Source cutoff time splitting `Gamma_1` into its driven and absorbing
    /// time windows.
    pub t1: f64,
}

/// Uniform node lattice over the outer rectangle.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2D {
    pub h: f64,
    pub nx: usize,
    pub ny: usize,
    pub x1_min: f64,
    pub x2_min: f64,
}

impl Grid2D {
    /// Number of nodes.
    pub fn node_count(&self) -> usize {
        self.nx * self.ny
    }

    /// Flat index of node `(i, j)`, row-major in `j`.
    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    /// Coordinates of node `(i, j)`.
    #[inline]
    pub fn coord(&self, i: usize, j: usize) -> (f64, f64) {
        (
            self.x1_min + i as f64 * self.h,
            self.x2_min + j as f64 * self.h,
        )
    }

    /// Nearest lattice indices of a point; exact on lattice points.
    pub fn index_of(&self, x1: f64, x2: f64) -> (usize, usize) {
        let i = ((x1 - self.x1_min) / self.h).round().max(0.0) as usize;
        let j = ((x2 - self.x2_min) / self.h).round().max(0.0) as usize;
        (i.min(self.nx - 1), j.min(self.ny - 1))
    }

    /// True if `(i, j)` lies on the boundary of the lattice.
    pub fn is_boundary(&self, i: usize, j: usize) -> bool {
        i == 0 || j == 0 || i == self.nx - 1 || j == self.ny - 1
    }
}

/// Geometry part of the run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainConfig {
    pub outer: Rect,
    pub inner: Rect,
    pub omega1: Rect,
    pub h: f64,
    pub t1: f64,
}

impl Default for DomainConfig {
    /// The default dimensionless geometry: `Omega = (-1.1,1.1) x (-0.62,0.62)`,
    /// `Omega_FEM = (-1,1) x (-0.52,0.52)`, `Omega_1` its upper half, `h = 0.02`.
    fn default() -> Self {
        Self {
            outer: Rect::new(-1.1, 1.1, -0.62, 0.62),
            inner: Rect::new(-1.0, 1.0, -0.52, 0.52),
            omega1: Rect::new(-1.0, 1.0, 0.0, 0.52),
            h: 0.02,
            t1: 2.0 * core::f64::consts::PI / 40.0,
        }
    }
}

fn edge_count(len: f64, h: f64) -> Result<usize> {
    let n = len / h;
    let rounded = n.round();
    if (n - rounded).abs() * h > 1e-9 * h {
        return Err(Error::Discretization(format!(
            "spacing h = {h} does not divide edge length {len}"
        )));
    }
    Ok(rounded as usize)
}

/// Build the domain decomposition and the uniform grid from a config.
pub fn build_domain(config: &DomainConfig) -> Result<(Domain2D, Grid2D)> {
    let outer = config.outer;
    let inner = config.inner;
    let omega1 = config.omega1;
    if outer.width() <= 0.0 || outer.height() <= 0.0 {
        return Err(Error::Geometry("outer rectangle is degenerate".to_string()));
    }
    if config.h <= 0.0 {
        return Err(Error::Discretization("spacing h must be positive".to_string()));
    }
    if !outer.strictly_contains(&inner) {
        return Err(Error::Geometry(
            "inner rectangle must lie strictly inside the outer rectangle".to_string(),
        ));
    }
    if !inner.contains(&omega1) {
        return Err(Error::Geometry(
            "omega1 must lie inside the inner rectangle".to_string(),
        ));
    }
    let nx = edge_count(outer.width(), config.h)? + 1;
    let ny = edge_count(outer.height(), config.h)? + 1;
    let domain = Domain2D {
        outer,
        inner,
        omega1,
        t1: config.t1,
    };
    let grid = Grid2D {
        h: config.h,
        nx,
        ny,
        x1_min: outer.x1_min,
        x2_min: outer.x2_min,
    };
    Ok((domain, grid))
}

/// Boundary label of a lattice node.  Corners belong to `Gamma_3`, so the
/// zero-Neumann side condition governs them and the source energy on the top
/// row is not double-counted.
pub fn classify_boundary(grid: &Grid2D, i: usize, j: usize) -> Result<BoundaryLabel> {
    if !grid.is_boundary(i, j) {
        return Err(Error::Geometry(format!(
            "node ({i}, {j}) is not on the domain boundary"
        )));
    }
    if i == 0 || i == grid.nx - 1 {
        Ok(BoundaryLabel::Gamma3)
    } else if j == grid.ny - 1 {
        Ok(BoundaryLabel::Gamma1)
    } else {
        Ok(BoundaryLabel::Gamma2)
    }
}

/// The ordered observation nodes: the full top lattice row, sorted by x1
/// ascending.  Deterministic across calls.
pub fn observation_nodes(grid: &Grid2D) -> Vec<(usize, usize)> {
    let j = grid.ny - 1;
    (0..grid.nx).map(|i| (i, j)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_defaults_give_111_by_63_nodes() {
        let (_, grid) = build_domain(&DomainConfig::default()).unwrap();
        assert_eq!(grid.nx, 111);
        assert_eq!(grid.ny, 63);
    }

    #[test]
    fn unit_square_h_half_gives_3_by_3() {
        let cfg = DomainConfig {
            outer: Rect::new(0.0, 1.0, 0.0, 1.0),
            inner: Rect::new(0.25, 0.75, 0.25, 0.75),
            omega1: Rect::new(0.25, 0.75, 0.25, 0.75),
            h: 0.5,
            t1: 0.1,
        };
        let (_, grid) = build_domain(&cfg).unwrap();
        assert_eq!((grid.nx, grid.ny), (3, 3));
    }

    #[test]
    fn outer_equal_inner_is_rejected() {
        let cfg = DomainConfig {
            inner: Rect::new(-1.1, 1.1, -0.62, 0.62),
            ..DomainConfig::default()
        };
        match build_domain(&cfg) {
            Err(Error::Geometry(_)) => {}
            other => panic!("expected geometry error, got {other:?}"),
        }
    }

    #[test]
    fn incommensurate_h_is_rejected() {
        let cfg = DomainConfig {
            h: 0.03,
            ..DomainConfig::default()
        };
        match build_domain(&cfg) {
            Err(Error::Discretization(_)) => {}
            other => panic!("expected discretization error, got {other:?}"),
        }
    }

    #[test]
    fn node_count_formula_holds() {
        let cfg = DomainConfig::default();
        let (_, grid) = build_domain(&cfg).unwrap();
        let nx = (cfg.outer.width() / cfg.h).round() as usize + 1;
        let ny = (cfg.outer.height() / cfg.h).round() as usize + 1;
        assert_eq!(grid.nx, nx);
        assert_eq!(grid.ny, ny);
    }

    #[test]
    fn classify_top_mid_is_gamma1() {
        let (_, grid) = build_domain(&DomainConfig::default()).unwrap();
        let label = classify_boundary(&grid, grid.nx / 2, grid.ny - 1).unwrap();
        assert_eq!(label, BoundaryLabel::Gamma1);
    }

    #[test]
    fn classify_interior_is_error() {
        let (_, grid) = build_domain(&DomainConfig::default()).unwrap();
        assert!(classify_boundary(&grid, 1, 1).is_err());
    }

    #[test]
    fn classify_top_left_corner_is_gamma3() {
        let (_, grid) = build_domain(&DomainConfig::default()).unwrap();
        let label = classify_boundary(&grid, 0, grid.ny - 1).unwrap();
        assert_eq!(label, BoundaryLabel::Gamma3);
    }

    #[test]
    fn boundary_labels_partition_the_boundary() {
        let (_, grid) = build_domain(&DomainConfig::default()).unwrap();
        let mut counts = [0usize; 3];
        let mut boundary_nodes = 0usize;
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                if grid.is_boundary(i, j) {
                    boundary_nodes += 1;
                    match classify_boundary(&grid, i, j).unwrap() {
                        BoundaryLabel::Gamma1 => counts[0] += 1,
                        BoundaryLabel::Gamma2 => counts[1] += 1,
                        BoundaryLabel::Gamma3 => counts[2] += 1,
                    }
                } else {
                    assert!(classify_boundary(&grid, i, j).is_err());
                }
            }
        }
        assert_eq!(counts[0] + counts[1] + counts[2], boundary_nodes);
        assert_eq!(counts[0], grid.nx - 2);
        assert_eq!(counts[1], grid.nx - 2);
        assert_eq!(counts[2], 2 * grid.ny);
    }

    #[test]
    fn observation_nodes_cover_top_row() {
        let (_, grid) = build_domain(&DomainConfig::default()).unwrap();
        let nodes = observation_nodes(&grid);
        assert_eq!(nodes.len(), 111);
        let again = observation_nodes(&grid);
        assert_eq!(nodes, again);
        for w in nodes.windows(2) {
            assert!(grid.coord(w[0].0, w[0].1).0 < grid.coord(w[1].0, w[1].1).0);
        }
    }

    #[test]
    fn observation_nodes_3x3() {
        let cfg = DomainConfig {
            outer: Rect::new(0.0, 1.0, 0.0, 1.0),
            inner: Rect::new(0.25, 0.75, 0.25, 0.75),
            omega1: Rect::new(0.25, 0.75, 0.25, 0.75),
            h: 0.5,
            t1: 0.1,
        };
        let (_, grid) = build_domain(&cfg).unwrap();
        assert_eq!(observation_nodes(&grid).len(), 3);
    }

    #[test]
    fn index_coordinate_round_trip_is_exact() {
        let (_, grid) = build_domain(&DomainConfig::default()).unwrap();
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let (x1, x2) = grid.coord(i, j);
                assert_eq!(grid.index_of(x1, x2), (i, j));
            }
        }
    }
}
