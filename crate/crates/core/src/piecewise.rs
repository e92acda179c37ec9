//! Exact piecewise-polynomial functions on the cells of a grid.
//!
//! Both measures have constant density on every cell, so the running integrals
//! J_W f = ∫_{(0,x]} f dW and J_V f = ∫_{[0,x)} f dV of a piecewise polynomial
//! are again piecewise polynomials; atoms only shift the constant terms.
//! Coefficients are local monomials in t = x - x_i.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{FnSide, Grid, GridFunction};
use crate::measure::EvalMode;

#[derive(Debug, Clone)]
pub struct PiecewisePoly {
    grid: Arc<Grid>,
    side: FnSide,
    pieces: Vec<Vec<f64>>,
    at: Vec<f64>,
}

pub(crate) fn poly_eval(c: &[f64], t: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &a| acc * t + a)
}

fn poly_antiderivative(c: &[f64], scale: f64, constant: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(c.len() + 1);
    out.push(constant);
    for (k, &a) in c.iter().enumerate() {
        out.push(scale * a / (k as f64 + 1.0));
    }
    out
}

fn poly_derivative(c: &[f64]) -> Vec<f64> {
    if c.len() <= 1 {
        return vec![0.0];
    }
    c.iter().enumerate().skip(1).map(|(k, &a)| k as f64 * a).collect()
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        for (j, &y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn poly_lincomb(a: &[f64], ca: f64, b: &[f64], cb: f64) -> Vec<f64> {
    let n = a.len().max(b.len());
    (0..n)
        .map(|k| ca * a.get(k).copied().unwrap_or(0.0) + cb * b.get(k).copied().unwrap_or(0.0))
        .collect()
}

fn poly_integral_to(c: &[f64], len: f64) -> f64 {
    // ∫_0^len sum c_k t^k dt
    let mut s = 0.0;
    let mut p = len;
    for (k, &a) in c.iter().enumerate() {
        s += a * p / (k as f64 + 1.0);
        p *= len;
    }
    s
}

impl PiecewisePoly {
    pub fn constant(grid: &Arc<Grid>, side: FnSide, c: f64) -> Self {
        let n = grid.n_cells();
        Self { grid: grid.clone(), side, pieces: vec![vec![c]; n], at: vec![c; n + 1] }
    }

    /// The linear interpolant of a grid function on the same grid.
    pub fn from_grid_function(f: &GridFunction) -> Self {
        let g = f.grid();
        let pieces = (0..g.n_cells())
            .map(|i| vec![f.right(i), (f.left(i + 1) - f.right(i)) / g.cell_len(i)])
            .collect();
        Self { grid: g.clone(), side: f.side(), pieces, at: f.values() }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }
    pub fn side(&self) -> FnSide {
        self.side
    }
    pub fn degree(&self) -> usize {
        self.pieces.iter().map(|p| p.len()).max().unwrap_or(1) - 1
    }

    pub fn left_limit(&self, j: usize) -> f64 {
        if j == 0 {
            return self.at[0];
        }
        poly_eval(&self.pieces[j - 1], self.grid.cell_len(j - 1))
    }

    pub fn right_limit(&self, j: usize) -> f64 {
        if j == self.pieces.len() {
            return self.at[j];
        }
        self.pieces[j][0]
    }

    /// Value at node j under the function's side convention.
    pub fn node_value(&self, j: usize) -> f64 {
        self.at[j]
    }

    pub fn eval(&self, x: f64, mode: EvalMode) -> f64 {
        if let Ok(j) = self.grid.index_of(x) {
            return match mode {
                EvalMode::Value => self.at[j],
                EvalMode::LeftLimit => self.left_limit(j),
                EvalMode::RightLimit => self.right_limit(j),
            };
        }
        let i = self.grid.cell_of(x);
        poly_eval(&self.pieces[i], x - self.grid.nodes()[i])
    }

    /// ∫_{(0,x]} f dW, càdlàg. Atoms read the left limit of f.
    pub fn j_w(&self) -> Self {
        let g = &self.grid;
        let n = g.n_cells();
        let mut pieces = Vec::with_capacity(n);
        let mut at = vec![0.0; n + 1];
        let mut c = 0.0;
        for i in 0..n {
            at[i] = c;
            let dens = g.w_density(i);
            let p = poly_antiderivative(&self.pieces[i], dens, c);
            c += dens * poly_integral_to(&self.pieces[i], g.cell_len(i));
            c += g.w_atom(i + 1) * poly_eval(&self.pieces[i], g.cell_len(i));
            pieces.push(p);
        }
        at[n] = c;
        Self { grid: g.clone(), side: FnSide::Cadlag, pieces, at }
    }

    /// ∫_{[0,x)} f dV, càglàd. Atoms read the right limit of f.
    pub fn j_v(&self) -> Self {
        let g = &self.grid;
        let n = g.n_cells();
        let mut pieces = Vec::with_capacity(n);
        let mut at = vec![0.0; n + 1];
        let mut e = 0.0;
        for i in 0..n {
            at[i] = e;
            let start = e + g.v_atom(i) * self.pieces[i][0];
            let dens = g.v_density(i);
            pieces.push(poly_antiderivative(&self.pieces[i], dens, start));
            e = start + dens * poly_integral_to(&self.pieces[i], g.cell_len(i));
        }
        at[n] = e;
        Self { grid: g.clone(), side: FnSide::Caglad, pieces, at }
    }

    /// D_W^- f as a càglàd function; periodic at the origin.
    pub fn derivative_w(&self) -> Result<Self> {
        let g = &self.grid;
        let n = g.n_cells();
        let mut pieces = Vec::with_capacity(n);
        for i in 0..n {
            let d = poly_derivative(&self.pieces[i]);
            let dens = g.w_density(i);
            if dens > 0.0 {
                pieces.push(d.iter().map(|a| a / dens).collect());
            } else if d.iter().all(|&a| a == 0.0) {
                pieces.push(vec![0.0]);
            } else {
                return Err(Error::ZeroIncrement { cell: i });
            }
        }
        let mut at = vec![0.0; n + 1];
        for (j, slot) in at.iter_mut().enumerate() {
            let a = g.w_atom(j);
            *slot = if a > 0.0 {
                (self.right_limit(j) - self.left_limit(j)) / a
            } else {
                let i = if j == 0 { n - 1 } else { j - 1 };
                poly_eval(&pieces[i], g.cell_len(i))
            };
        }
        Ok(Self { grid: g.clone(), side: FnSide::Caglad, pieces, at })
    }

    /// D_V^+ f as a càdlàg function; periodic at 1.
    pub fn derivative_v(&self) -> Result<Self> {
        let g = &self.grid;
        let n = g.n_cells();
        let mut pieces = Vec::with_capacity(n);
        for i in 0..n {
            let d = poly_derivative(&self.pieces[i]);
            let dens = g.v_density(i);
            if dens > 0.0 {
                pieces.push(d.iter().map(|a| a / dens).collect());
            } else if d.iter().all(|&a| a == 0.0) {
                pieces.push(vec![0.0]);
            } else {
                return Err(Error::ZeroIncrement { cell: i });
            }
        }
        let mut at = vec![0.0; n + 1];
        for (j, slot) in at.iter_mut().enumerate() {
            let a = g.v_atom(j);
            *slot = if a > 0.0 {
                (self.right_limit(j) - self.left_limit(j)) / a
            } else {
                let i = if j == n { 0 } else { j };
                pieces[i][0]
            };
        }
        Ok(Self { grid: g.clone(), side: FnSide::Cadlag, pieces, at })
    }

    fn check(&self, other: &Self) -> Result<()> {
        if self.grid.same_as(&other.grid) {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    /// Pointwise product; the side of `self` is kept.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.check(other)?;
        let pieces = self.pieces.iter().zip(&other.pieces).map(|(a, b)| poly_mul(a, b)).collect();
        let at = self.at.iter().zip(&other.at).map(|(a, b)| a * b).collect();
        Ok(Self { grid: self.grid.clone(), side: self.side, pieces, at })
    }

    /// ca * self + cb * other; the side of `self` is kept.
    pub fn lincomb(&self, ca: f64, other: &Self, cb: f64) -> Result<Self> {
        self.check(other)?;
        let pieces =
            self.pieces.iter().zip(&other.pieces).map(|(a, b)| poly_lincomb(a, ca, b, cb)).collect();
        let at = self.at.iter().zip(&other.at).map(|(a, b)| ca * a + cb * b).collect();
        Ok(Self { grid: self.grid.clone(), side: self.side, pieces, at })
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            grid: self.grid.clone(),
            side: self.side,
            pieces: self.pieces.iter().map(|p| p.iter().map(|a| c * a).collect()).collect(),
            at: self.at.iter().map(|a| c * a).collect(),
        }
    }

    /// ∫_{(0,1]} f dW.
    pub fn integral_w(&self) -> f64 {
        let g = &self.grid;
        (0..g.n_cells())
            .map(|i| {
                g.w_density(i) * poly_integral_to(&self.pieces[i], g.cell_len(i))
                    + g.w_atom(i + 1) * self.left_limit(i + 1)
            })
            .sum()
    }

    /// ∫_{[0,1)} f dV.
    pub fn integral_v(&self) -> f64 {
        let g = &self.grid;
        (0..g.n_cells())
            .map(|i| {
                g.v_atom(i) * self.right_limit(i)
                    + g.v_density(i) * poly_integral_to(&self.pieces[i], g.cell_len(i))
            })
            .sum()
    }

    /// Sample onto a grid built from the same measures (it contains every breakpoint).
    pub fn sample(&self, fine: &Arc<Grid>) -> GridFunction {
        let nodes = fine.nodes();
        let mut left = Vec::with_capacity(nodes.len());
        let mut right = Vec::with_capacity(nodes.len());
        let coarse = self.grid.nodes();
        let mut i = 0;
        for &x in nodes {
            while i + 1 < coarse.len() && coarse[i + 1] <= x {
                i += 1;
            }
            if coarse[i] == x {
                left.push(self.left_limit(i));
                right.push(self.right_limit(i));
            } else {
                let v = poly_eval(&self.pieces[i], x - coarse[i]);
                left.push(v);
                right.push(v);
            }
        }
        GridFunction::from_limits(fine.clone(), self.side, left, right)
    }
}
