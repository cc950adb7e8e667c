//! Table grid and per-cell heatmaps.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("grid needs n >= 1, m >= 1 and a positive cell size")]
    InvalidGrid,
    #[error("cell ({x}, {y}) lies outside the {n}x{m} grid")]
    CellOutOfGrid { x: i64, y: i64, n: usize, m: usize },
    #[error("point ({0:.3}, {1:.3}) lies outside the grid")]
    PointOutOfGrid(f64, f64),
    #[error("heatmap shape {got:?} does not match grid {want:?}")]
    ShapeMismatch {
        got: (usize, usize),
        want: (usize, usize),
    },
    #[error("cannot parse grid '{0}', expected NxM")]
    Parse(String),
}

/// A grid cell index: `x` counts along the short (n) axis, `y` along the long
/// (m) axis. Serialized as `[x, y]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct Cell {
    pub x: usize,
    pub y: usize,
}

impl Cell {
    pub const fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }

    /// Per-axis absolute differences in grid units.
    pub fn delta(&self, other: &Cell) -> (usize, usize) {
        (self.x.abs_diff(other.x), self.y.abs_diff(other.y))
    }

    pub fn euclidean(&self, other: &Cell) -> f64 {
        let (dx, dy) = self.delta(other);
        ((dx * dx + dy * dy) as f64).sqrt()
    }
}

impl From<[usize; 2]> for Cell {
    fn from(v: [usize; 2]) -> Self {
        Self::new(v[0], v[1])
    }
}

impl From<Cell> for [usize; 2] {
    fn from(c: Cell) -> Self {
        [c.x, c.y]
    }
}

impl std::fmt::Display for Cell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub n: usize,
    pub m: usize,
    #[serde(rename = "cell_size_m")]
    pub cell_size: f64,
    pub origin: [f64; 2],
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            n: 5,
            m: 10,
            cell_size: 0.08,
            origin: [0.0, 0.0],
        }
    }
}

impl GridSpec {
    pub fn new(n: usize, m: usize, cell_size: f64, origin: [f64; 2]) -> Result<Self, GridError> {
        let g = Self {
            n,
            m,
            cell_size,
            origin,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), GridError> {
        if self.n == 0 || self.m == 0 || !(self.cell_size > 0.0) || !self.cell_size.is_finite() {
            return Err(GridError::InvalidGrid);
        }
        Ok(())
    }

    /// Parses `"NxM"`, keeping the default cell size and origin.
    pub fn parse_dims(s: &str) -> Result<Self, GridError> {
        let (a, b) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| GridError::Parse(s.to_string()))?;
        let n = a
            .trim()
            .parse()
            .map_err(|_| GridError::Parse(s.to_string()))?;
        let m = b
            .trim()
            .parse()
            .map_err(|_| GridError::Parse(s.to_string()))?;
        Self::new(n, m, Self::default().cell_size, [0.0, 0.0])
    }

    pub fn cells(&self) -> usize {
        self.n * self.m
    }

    pub fn width(&self) -> f64 {
        self.n as f64 * self.cell_size
    }

    pub fn depth(&self) -> f64 {
        self.m as f64 * self.cell_size
    }

    pub fn contains_cell(&self, c: Cell) -> bool {
        c.x < self.n && c.y < self.m
    }

    pub fn check_cell(&self, c: Cell) -> Result<(), GridError> {
        if self.contains_cell(c) {
            Ok(())
        } else {
            Err(GridError::CellOutOfGrid {
                x: c.x as i64,
                y: c.y as i64,
                n: self.n,
                m: self.m,
            })
        }
    }

    pub fn cell_center(&self, c: Cell) -> Vec2 {
        Vec2::new(
            self.origin[0] + (c.x as f64 + 0.5) * self.cell_size,
            self.origin[1] + (c.y as f64 + 0.5) * self.cell_size,
        )
    }

    pub fn contains_point(&self, p: &Vec2) -> bool {
        let lx = p.x - self.origin[0];
        let ly = p.y - self.origin[1];
        (0.0..=self.width()).contains(&lx) && (0.0..=self.depth()).contains(&ly)
    }

    /// Cell containing `p`; points on the far edges map to the last cell.
    pub fn cell_of(&self, p: &Vec2) -> Result<Cell, GridError> {
        if !self.contains_point(p) {
            return Err(GridError::PointOutOfGrid(p.x, p.y));
        }
        let fx = ((p.x - self.origin[0]) / self.cell_size).floor() as usize;
        let fy = ((p.y - self.origin[1]) / self.cell_size).floor() as usize;
        Ok(Cell::new(fx.min(self.n - 1), fy.min(self.m - 1)))
    }

    /// Nearest cell, clamping points outside the grid onto its border.
    pub fn nearest_cell(&self, p: &Vec2) -> Cell {
        let fx = ((p.x - self.origin[0]) / self.cell_size).floor();
        let fy = ((p.y - self.origin[1]) / self.cell_size).floor();
        Cell::new(
            fx.clamp(0.0, (self.n - 1) as f64) as usize,
            fy.clamp(0.0, (self.m - 1) as f64) as usize,
        )
    }
}

/// Per-cell placement likelihoods, stored row-major with `x` as the row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    grid: GridSpec,
    values: Vec<f64>,
}

impl Heatmap {
    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.cells()],
        }
    }

    pub fn filled(grid: GridSpec, v: f64) -> Self {
        Self {
            grid,
            values: vec![v; grid.cells()],
        }
    }

    pub fn from_vec(grid: GridSpec, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != grid.cells() {
            return Err(GridError::ShapeMismatch {
                got: (values.len(), 1),
                want: (grid.n, grid.m),
            });
        }
        Ok(Self { grid, values })
    }

    /// Builds a heatmap from nested rows (`rows[x][y]`).
    pub fn from_rows(grid: GridSpec, rows: &[Vec<f64>]) -> Result<Self, GridError> {
        let shape_ok = rows.len() == grid.n && rows.iter().all(|r| r.len() == grid.m);
        if !shape_ok {
            return Err(GridError::ShapeMismatch {
                got: (rows.len(), rows.first().map_or(0, Vec::len)),
                want: (grid.n, grid.m),
            });
        }
        Ok(Self {
            grid,
            values: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, c: Cell) -> f64 {
        self.values[c.x * self.grid.m + c.y]
    }

    pub fn set(&mut self, c: Cell, v: f64) {
        let m = self.grid.m;
        self.values[c.x * m + c.y] = v;
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.values
            .chunks(self.grid.m)
            .map(<[f64]>::to_vec)
            .collect()
    }

    pub fn same_shape(&self, other: &Heatmap) -> bool {
        self.grid.n == other.grid.n && self.grid.m == other.grid.m
    }

    /// Maximum value and its cell; ties go to the smallest x, then smallest y.
    pub fn peak(&self) -> (f64, Cell) {
        let mut best = (f64::NEG_INFINITY, 0usize);
        for (i, &v) in self.values.iter().enumerate() {
            if v > best.0 {
                best = (v, i);
            }
        }
        let m = self.grid.m;
        (best.0, Cell::new(best.1 / m, best.1 % m))
    }

    pub fn argmax(&self) -> Cell {
        self.peak().1
    }

    pub fn max(&self) -> f64 {
        self.peak().0
    }
}
