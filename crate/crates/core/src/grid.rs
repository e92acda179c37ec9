//! Master grid shared by every module, and functions sampled on it.
//!
//! A `GridFunction` stores both one-sided limits at every node; between nodes
//! it is the linear interpolant from `right[i]` to `left[i+1]`. Step functions
//! are the special case `right[i] == left[i+1]`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::measure::{EvalMode, MeasureFunction, Side};

const MERGE_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct Grid {
    nodes: Vec<f64>,
    w_cont: Vec<f64>,
    v_cont: Vec<f64>,
    w_atom: Vec<f64>,
    v_atom: Vec<f64>,
    w: MeasureFunction,
    v: MeasureFunction,
    m: usize,
}

impl Grid {
    /// Union of all knots and atoms of both measures plus the uniform nodes k/m.
    pub fn new(w: &MeasureFunction, v: &MeasureFunction, m: usize) -> Result<Arc<Grid>> {
        if w.side() != Side::RightContinuous {
            return Err(Error::InvalidArgument("W must be càdlàg".into()));
        }
        if v.side() != Side::LeftContinuous {
            return Err(Error::InvalidArgument("V must be càglàd".into()));
        }
        if m == 0 {
            return Err(Error::InvalidArgument("grid resolution must be positive".into()));
        }
        let mut special: Vec<f64> = vec![0.0, 1.0];
        for meas in [w, v] {
            special.extend(meas.knots().iter().map(|k| k.0));
            special.extend(meas.atoms().iter().map(|a| a.0));
        }
        special.sort_by(f64::total_cmp);
        special.dedup();
        let mut nodes = special.clone();
        for k in 1..m {
            let x = k as f64 / m as f64;
            let j = special.partition_point(|&s| s < x);
            let near = (j < special.len() && special[j] - x < MERGE_TOL)
                || (j > 0 && x - special[j - 1] < MERGE_TOL);
            if !near {
                nodes.push(x);
            }
        }
        nodes.sort_by(f64::total_cmp);
        let n = nodes.len() - 1;
        let cw: Vec<f64> = nodes.iter().map(|&x| w.continuous_part(x)).collect();
        let cv: Vec<f64> = nodes.iter().map(|&x| v.continuous_part(x)).collect();
        let w_cont = (0..n).map(|i| cw[i + 1] - cw[i]).collect();
        let v_cont = (0..n).map(|i| cv[i + 1] - cv[i]).collect();
        let w_atom = nodes.iter().map(|&x| w.atom_at(x)).collect();
        let v_atom = nodes.iter().map(|&x| v.atom_at(x)).collect();
        Ok(Arc::new(Grid { nodes, w_cont, v_cont, w_atom, v_atom, w: w.clone(), v: v.clone(), m }))
    }

    /// Breakpoints of the two measures only.
    pub fn coarse(w: &MeasureFunction, v: &MeasureFunction) -> Result<Arc<Grid>> {
        Self::new(w, v, 1)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }
    /// Number of cells; nodes are indexed 0..=n_cells with x_0 = 0 and x_N = 1.
    pub fn n_cells(&self) -> usize {
        self.nodes.len() - 1
    }
    pub fn resolution(&self) -> usize {
        self.m
    }
    pub fn w(&self) -> &MeasureFunction {
        &self.w
    }
    pub fn v(&self) -> &MeasureFunction {
        &self.v
    }
    /// Continuous W-mass of the open cell (x_i, x_{i+1}).
    pub fn w_cont(&self, i: usize) -> f64 {
        self.w_cont[i]
    }
    pub fn v_cont(&self, i: usize) -> f64 {
        self.v_cont[i]
    }
    pub fn w_atom(&self, j: usize) -> f64 {
        self.w_atom[j]
    }
    pub fn v_atom(&self, j: usize) -> f64 {
        self.v_atom[j]
    }
    /// W-mass of (x_i, x_{i+1}].
    pub fn cell_w(&self, i: usize) -> f64 {
        self.w_cont[i] + self.w_atom[i + 1]
    }
    /// V-mass of [x_i, x_{i+1}).
    pub fn cell_v(&self, i: usize) -> f64 {
        self.v_atom[i] + self.v_cont[i]
    }
    pub fn cell_len(&self, i: usize) -> f64 {
        self.nodes[i + 1] - self.nodes[i]
    }
    pub fn w_density(&self, i: usize) -> f64 {
        self.w_cont[i] / self.cell_len(i)
    }
    pub fn v_density(&self, i: usize) -> f64 {
        self.v_cont[i] / self.cell_len(i)
    }

    /// Index of the node at `x`.
    pub fn index_of(&self, x: f64) -> Result<usize> {
        let j = self.nodes.partition_point(|&s| s < x - MERGE_TOL);
        if j < self.nodes.len() && (self.nodes[j] - x).abs() <= MERGE_TOL {
            Ok(j)
        } else {
            Err(Error::NotOnGrid(x))
        }
    }

    /// Cell containing x in [0,1): the i with x_i <= x < x_{i+1}.
    pub fn cell_of(&self, x: f64) -> usize {
        let j = self.nodes.partition_point(|&s| s <= x);
        j.saturating_sub(1).min(self.n_cells() - 1)
    }

    pub fn same_as(self: &Arc<Self>, other: &Arc<Grid>) -> bool {
        Arc::ptr_eq(self, other) || self.nodes == other.nodes
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FnSide {
    Cadlag,
    Caglad,
}

#[derive(Debug, Clone)]
pub struct GridFunction {
    grid: Arc<Grid>,
    side: FnSide,
    left: Vec<f64>,
    right: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Interval {
    /// (a, b], for dW
    LeftOpenRightClosed(f64, f64),
    /// [a, b), for dV
    LeftClosedRightOpen(f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    /// x -> integral over (0,x] against dW, càdlàg
    FromZeroRightClosed,
    /// x -> integral over [0,x) against dV, càglàd
    FromZeroLeftOpen,
}

impl GridFunction {
    pub fn from_limits(grid: Arc<Grid>, side: FnSide, left: Vec<f64>, right: Vec<f64>) -> Self {
        let n = grid.nodes.len();
        assert!(left.len() == n && right.len() == n, "limit arrays must match the grid");
        Self { grid, side, left, right }
    }

    /// Sample a continuous function.
    pub fn from_fn(grid: &Arc<Grid>, side: FnSide, f: impl Fn(f64) -> f64) -> Self {
        let vals: Vec<f64> = grid.nodes.iter().map(|&x| f(x)).collect();
        Self::from_limits(grid.clone(), side, vals.clone(), vals)
    }

    /// Continuous function given by node values.
    pub fn from_values(grid: &Arc<Grid>, side: FnSide, vals: Vec<f64>) -> Self {
        Self::from_limits(grid.clone(), side, vals.clone(), vals)
    }

    pub fn constant(grid: &Arc<Grid>, c: f64) -> Self {
        Self::from_fn(grid, FnSide::Cadlag, |_| c)
    }

    /// W itself, as a càdlàg function.
    pub fn measure_w(grid: &Arc<Grid>) -> Self {
        let w = grid.w();
        let left = grid.nodes.iter().map(|&x| w.eval(x, EvalMode::LeftLimit)).collect();
        let right = grid.nodes.iter().map(|&x| w.eval(x, EvalMode::RightLimit)).collect();
        Self::from_limits(grid.clone(), FnSide::Cadlag, left, right)
    }

    /// V itself, as a càglàd function.
    pub fn measure_v(grid: &Arc<Grid>) -> Self {
        let v = grid.v();
        let left = grid.nodes.iter().map(|&x| v.eval(x, EvalMode::LeftLimit)).collect();
        let right = grid.nodes.iter().map(|&x| v.eval(x, EvalMode::RightLimit)).collect();
        Self::from_limits(grid.clone(), FnSide::Caglad, left, right)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }
    pub fn side(&self) -> FnSide {
        self.side
    }
    pub fn len(&self) -> usize {
        self.left.len()
    }
    pub fn is_empty(&self) -> bool {
        self.left.is_empty()
    }
    pub fn left(&self, j: usize) -> f64 {
        self.left[j]
    }
    pub fn right(&self, j: usize) -> f64 {
        self.right[j]
    }
    pub fn lefts(&self) -> &[f64] {
        &self.left
    }
    pub fn rights(&self) -> &[f64] {
        &self.right
    }
    /// Point value under the function's own side convention.
    pub fn value(&self, j: usize) -> f64 {
        match self.side {
            FnSide::Cadlag => self.right[j],
            FnSide::Caglad => self.left[j],
        }
    }
    pub fn values(&self) -> Vec<f64> {
        (0..self.len()).map(|j| self.value(j)).collect()
    }
    /// Nodes where the two one-sided limits differ.
    pub fn jump_nodes(&self, tol: f64) -> Vec<usize> {
        (0..self.len()).filter(|&j| (self.right[j] - self.left[j]).abs() > tol).collect()
    }

    /// Evaluate the interpolant at an arbitrary x in [0,1].
    pub fn eval_at(&self, x: f64) -> f64 {
        if let Ok(j) = self.grid.index_of(x) {
            return self.value(j);
        }
        let i = self.grid.cell_of(x);
        let t = (x - self.grid.nodes[i]) / self.grid.cell_len(i);
        self.right[i] + t * (self.left[i + 1] - self.right[i])
    }

    pub fn with_side(mut self, side: FnSide) -> Self {
        self.side = side;
        self
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid.clone(),
            side: self.side,
            left: self.left.iter().map(|&x| f(x)).collect(),
            right: self.right.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip(&self, other: &GridFunction, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if !self.grid.same_as(&other.grid) {
            return Err(Error::GridMismatch);
        }
        Ok(Self {
            grid: self.grid.clone(),
            side: self.side,
            left: self.left.iter().zip(&other.left).map(|(&a, &b)| f(a, b)).collect(),
            right: self.right.iter().zip(&other.right).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &GridFunction) -> Result<Self> {
        self.zip(other, |a, b| a + b)
    }
    pub fn sub(&self, other: &GridFunction) -> Result<Self> {
        self.zip(other, |a, b| a - b)
    }
    pub fn mul(&self, other: &GridFunction) -> Result<Self> {
        self.zip(other, |a, b| a * b)
    }
    pub fn scale(&self, c: f64) -> Self {
        self.map(|x| c * x)
    }
    /// self + c * other
    pub fn axpy(&self, c: f64, other: &GridFunction) -> Result<Self> {
        self.zip(other, |a, b| a + c * b)
    }

    pub fn max_abs_diff(&self, other: &GridFunction) -> f64 {
        self.left
            .iter()
            .zip(&other.left)
            .chain(self.right.iter().zip(&other.right))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn sup_norm(&self) -> f64 {
        self.left.iter().chain(&self.right).map(|x| x.abs()).fold(0.0, f64::max)
    }

    /// Integral over (x_ia, x_ib] against dW; atoms read left limits.
    pub fn integral_w_idx(&self, ia: usize, ib: usize) -> f64 {
        let g = &self.grid;
        let mut s = 0.0;
        for i in ia..ib {
            s += g.w_cont[i] * 0.5 * (self.right[i] + self.left[i + 1]);
            s += g.w_atom[i + 1] * self.left[i + 1];
        }
        s
    }

    /// Integral over [x_ia, x_ib) against dV; atoms read right limits.
    pub fn integral_v_idx(&self, ia: usize, ib: usize) -> f64 {
        let g = &self.grid;
        let mut s = 0.0;
        for i in ia..ib {
            s += g.v_atom[i] * self.right[i];
            s += g.v_cont[i] * 0.5 * (self.right[i] + self.left[i + 1]);
        }
        s
    }

    pub fn integral_w(&self) -> f64 {
        self.integral_w_idx(0, self.grid.n_cells())
    }
    pub fn integral_v(&self) -> f64 {
        self.integral_v_idx(0, self.grid.n_cells())
    }

    /// Exact integral of the product of the two linear interpolants against dW.
    pub fn inner_w(&self, other: &GridFunction) -> f64 {
        let g = &self.grid;
        (0..g.n_cells())
            .map(|i| {
                g.w_cont[i] * cell_product(self.right[i], self.left[i + 1], other.right[i], other.left[i + 1])
                    + g.w_atom[i + 1] * self.left[i + 1] * other.left[i + 1]
            })
            .sum()
    }

    /// Exact integral of the product of the two linear interpolants against dV.
    pub fn inner_v(&self, other: &GridFunction) -> f64 {
        let g = &self.grid;
        (0..g.n_cells())
            .map(|i| {
                g.v_atom[i] * self.right[i] * other.right[i]
                    + g.v_cont[i] * cell_product(self.right[i], self.left[i + 1], other.right[i], other.left[i + 1])
            })
            .sum()
    }

    pub fn norm_v(&self) -> f64 {
        self.inner_v(self).max(0.0).sqrt()
    }
    pub fn norm_w(&self) -> f64 {
        self.inner_w(self).max(0.0).sqrt()
    }
}

/// Mean over a unit cell of (a0 + t(a1-a0))(b0 + t(b1-b0)).
fn cell_product(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    (2.0 * a0 * b0 + a0 * b1 + a1 * b0 + 2.0 * a1 * b1) / 6.0
}

fn check_measure(grid: &Grid, m: &MeasureFunction) -> Result<bool> {
    match m.side() {
        Side::RightContinuous if m.content_hash() == grid.w.content_hash() => Ok(true),
        Side::LeftContinuous if m.content_hash() == grid.v.content_hash() => Ok(false),
        _ => Err(Error::GridMismatch),
    }
}

/// Stieltjes integral of `f` over a grid-aligned interval.
pub fn stieltjes_integral(m: &MeasureFunction, f: &GridFunction, interval: Interval) -> Result<f64> {
    let is_w = check_measure(&f.grid, m)?;
    match (interval, is_w) {
        (Interval::LeftOpenRightClosed(a, b), true) => {
            let (ia, ib) = (f.grid.index_of(a)?, f.grid.index_of(b)?);
            Ok(if ia < ib { f.integral_w_idx(ia, ib) } else { 0.0 })
        }
        (Interval::LeftClosedRightOpen(a, b), false) => {
            let (ia, ib) = (f.grid.index_of(a)?, f.grid.index_of(b)?);
            Ok(if ia < ib { f.integral_v_idx(ia, ib) } else { 0.0 })
        }
        (Interval::LeftOpenRightClosed(..), false) => {
            Err(Error::IntervalMismatch("(a,b] needs the càdlàg measure W".into()))
        }
        (Interval::LeftClosedRightOpen(..), true) => {
            Err(Error::IntervalMismatch("[a,b) needs the càglàd measure V".into()))
        }
    }
}

/// Running integral from the origin.
pub fn cumulative(m: &MeasureFunction, f: &GridFunction, orientation: Orientation) -> Result<GridFunction> {
    let is_w = check_measure(&f.grid, m)?;
    match (orientation, is_w) {
        (Orientation::FromZeroRightClosed, true) => Ok(cumulative_w(f)),
        (Orientation::FromZeroLeftOpen, false) => Ok(cumulative_v(f)),
        (Orientation::FromZeroRightClosed, false) => {
            Err(Error::IntervalMismatch("(0,x] needs the càdlàg measure W".into()))
        }
        (Orientation::FromZeroLeftOpen, true) => {
            Err(Error::IntervalMismatch("[0,x) needs the càglàd measure V".into()))
        }
    }
}

/// x -> integral over (0,x] of f dW, càdlàg.
pub fn cumulative_w(f: &GridFunction) -> GridFunction {
    let g = &f.grid;
    let n = g.nodes.len();
    let mut left = vec![0.0; n];
    let mut right = vec![0.0; n];
    let mut acc = 0.0;
    for i in 0..g.n_cells() {
        acc += g.w_cont[i] * 0.5 * (f.right[i] + f.left[i + 1]);
        left[i + 1] = acc;
        acc += g.w_atom[i + 1] * f.left[i + 1];
        right[i + 1] = acc;
    }
    GridFunction::from_limits(g.clone(), FnSide::Cadlag, left, right)
}

/// x -> integral over [0,x) of f dV, càglàd.
pub fn cumulative_v(f: &GridFunction) -> GridFunction {
    let g = &f.grid;
    let n = g.nodes.len();
    let mut left = vec![0.0; n];
    let mut right = vec![0.0; n];
    let mut acc = 0.0;
    for i in 0..g.n_cells() {
        left[i] = acc;
        acc += g.v_atom[i] * f.right[i];
        right[i] = acc;
        acc += g.v_cont[i] * 0.5 * (f.right[i] + f.left[i + 1]);
    }
    left[n - 1] = acc;
    right[n - 1] = acc + g.v_atom[n - 1] * f.right[n - 1];
    GridFunction::from_limits(g.clone(), FnSide::Caglad, left, right)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn atomic() -> (MeasureFunction, MeasureFunction) {
        let w = MeasureFunction::linear_with_atoms("a", Side::RightContinuous, 0.5, &[(0.5, 0.5)]).unwrap();
        (w, MeasureFunction::identity(Side::LeftContinuous))
    }

    #[test]
    fn grid_contains_atoms_and_closes_at_one() {
        let (w, v) = atomic();
        let g = Grid::new(&w, &v, 7).unwrap();
        assert_eq!(g.nodes()[0], 0.0);
        assert_eq!(*g.nodes().last().unwrap(), 1.0);
        assert!(g.index_of(0.5).is_ok());
        assert_eq!(g.n_cells(), 8);
    }

    #[test]
    fn total_mass_integrals() {
        let (w, v) = atomic();
        let g = Grid::new(&w, &v, 16).unwrap();
        let one = GridFunction::constant(&g, 1.0);
        let tw = stieltjes_integral(&w, &one, Interval::LeftOpenRightClosed(0.0, 1.0)).unwrap();
        assert_eq!(tw, w.total_mass());
        let half = stieltjes_integral(&w, &one, Interval::LeftOpenRightClosed(0.0, 0.5)).unwrap();
        assert!((half - 0.75).abs() < 1e-15);
    }

    #[test]
    fn identity_v_first_moment() {
        let (w, v) = atomic();
        let g = Grid::new(&w, &v, 64).unwrap();
        let xi = GridFunction::from_fn(&g, FnSide::Cadlag, |x| x);
        let r = stieltjes_integral(&v, &xi, Interval::LeftClosedRightOpen(0.0, 0.5)).unwrap();
        assert!((r - 0.125).abs() < 1e-15);
    }

    #[test]
    fn interval_kind_must_match() {
        let (w, v) = atomic();
        let g = Grid::new(&w, &v, 8).unwrap();
        let one = GridFunction::constant(&g, 1.0);
        assert!(matches!(
            stieltjes_integral(&w, &one, Interval::LeftClosedRightOpen(0.0, 1.0)),
            Err(Error::IntervalMismatch(_))
        ));
        assert!(matches!(
            cumulative(&v, &one, Orientation::FromZeroRightClosed),
            Err(Error::IntervalMismatch(_))
        ));
    }

    #[test]
    fn cumulative_of_one_is_the_measure() {
        let (w, v) = atomic();
        let g = Grid::new(&w, &v, 32).unwrap();
        let one = GridFunction::constant(&g, 1.0);
        let cw = cumulative(&w, &one, Orientation::FromZeroRightClosed).unwrap();
        let mw = GridFunction::measure_w(&g);
        assert!(cw.max_abs_diff(&mw) < 1e-15);
        let j = g.index_of(0.5).unwrap();
        assert!((cw.left(j) - 0.25).abs() < 1e-15);
        assert!((cw.value(j) - 0.75).abs() < 1e-15);
        let cv = cumulative(&v, &one, Orientation::FromZeroLeftOpen).unwrap();
        for (k, &x) in g.nodes().iter().enumerate() {
            assert!((cv.value(k) - x).abs() < 1e-15);
        }
    }

    #[test]
    fn refinement_keeps_atom_part() {
        let (w, v) = atomic();
        let f = |x: f64| (3.0 * x).sin();
        let mut prev = None;
        let mut diffs = vec![];
        for m in [16, 32, 64, 128] {
            let g = Grid::new(&w, &v, m).unwrap();
            let gf = GridFunction::from_fn(&g, FnSide::Cadlag, f);
            let i = gf.integral_w();
            if let Some(p) = prev {
                diffs.push(f64::abs(i - p));
            }
            prev = Some(i);
        }
        // second order on the continuous part
        for d in diffs.windows(2) {
            let ratio = d[0] / d[1];
            assert!(ratio > 3.5 && ratio < 4.5, "ratio {ratio}");
        }
    }

    #[test]
    fn inner_product_matches_integral_of_product_for_steps() {
        let (w, v) = atomic();
        let g = Grid::new(&w, &v, 10).unwrap();
        let n = g.nodes().len();
        let left: Vec<f64> = (0..n).map(|j| (j as f64).cos()).collect();
        let mut right = left.clone();
        right.rotate_left(1);
        let f = GridFunction::from_limits(g.clone(), FnSide::Caglad, left, right);
        let prod = f.mul(&f).unwrap();
        assert!((f.inner_v(&f) - prod.integral_v()).abs() < 1e-14);
        assert!((f.inner_w(&f) - prod.integral_w()).abs() < 1e-14);
    }
}
