//! One-sided difference quotients, the iterated integral operators T_WV and
//! T_VW, the generalized polynomial diagonals F_n, G_n and Maclaurin sums.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{cumulative_v, cumulative_w, FnSide, Grid, GridFunction};
use crate::measure::{EvalMode, MeasureFunction};
use crate::numerics::ln_factorial;
use crate::piecewise::PiecewisePoly;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivSide {
    /// D_W^-: backward quotient against W, càglàd output
    WLeft,
    /// D_V^+: forward quotient against V, càdlàg output
    VRight,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TOrientation {
    /// ∫_{(0,x]} ∫_{[0,s)} f dV dW(s)
    WV,
    /// ∫_{[0,x)} ∫_{(0,s]} f dW dV(s)
    VW,
}

/// Node-wise one-sided quotient. The result is a step function: the W-quotient
/// is constant on each (x_{i-1}, x_i], the V-quotient on each [x_i, x_{i+1}).
pub fn lateral_derivative(f: &GridFunction, side: DerivSide) -> Result<GridFunction> {
    let g = f.grid();
    let n = g.n_cells();
    let mut q = Vec::with_capacity(n);
    for i in 0..n {
        let mass = match side {
            DerivSide::WLeft => g.cell_w(i),
            DerivSide::VRight => g.cell_v(i),
        };
        if mass <= 0.0 {
            return Err(Error::ZeroIncrement { cell: i });
        }
        q.push((f.value(i + 1) - f.value(i)) / mass);
    }
    let mut left = vec![0.0; n + 1];
    let mut right = vec![0.0; n + 1];
    for j in 0..=n {
        left[j] = if j == 0 { q[n - 1] } else { q[j - 1] };
        right[j] = if j == n { q[0] } else { q[j] };
    }
    let out_side = match side {
        DerivSide::WLeft => FnSide::Caglad,
        DerivSide::VRight => FnSide::Cadlag,
    };
    Ok(GridFunction::from_limits(g.clone(), out_side, left, right))
}

pub fn double_integral_t(f: &GridFunction, orientation: TOrientation) -> GridFunction {
    match orientation {
        TOrientation::WV => cumulative_w(&cumulative_v(f)),
        TOrientation::VW => cumulative_v(&cumulative_w(f)),
    }
}

/// Exact diagonals F_k(x,x) and G_k(x,x) on the breakpoint partition of W and V.
///
/// F_0 = 1, F_1 = W, F_{k+2} = T_WV F_k; G_0 = 1, G_1 = V, G_{k+2} = T_VW G_k.
/// In the p/q notation p_n = F_{2n} and q_n = F_{2n+1}.
#[derive(Debug, Clone)]
pub struct PolynomialDiagonals {
    grid: Arc<Grid>,
    f: Vec<PiecewisePoly>,
    g: Vec<PiecewisePoly>,
    f_one: Vec<f64>,
    g_one: Vec<f64>,
}

impl PolynomialDiagonals {
    pub fn new(w: &MeasureFunction, v: &MeasureFunction, n_max: usize) -> Result<Self> {
        if n_max < 1 {
            return Err(Error::InvalidArgument("n_max must be at least 1".into()));
        }
        let grid = Grid::coarse(w, v)?;
        let one = PiecewisePoly::constant(&grid, FnSide::Cadlag, 1.0);
        let one_v = PiecewisePoly::constant(&grid, FnSide::Caglad, 1.0);
        let mut d = Self {
            grid: grid.clone(),
            f: vec![one.clone(), one.j_w()],
            g: vec![one_v, one.j_v()],
            f_one: vec![],
            g_one: vec![],
        };
        d.extend_to(n_max);
        Ok(d)
    }

    /// Make F_k, G_k available for k <= 2 n_max + 1.
    pub fn extend_to(&mut self, n_max: usize) {
        while self.f.len() < 2 * n_max + 2 {
            let k = self.f.len();
            let nf = self.f[k - 2].j_v().j_w();
            let ng = self.g[k - 2].j_w().j_v();
            self.f.push(nf);
            self.g.push(ng);
        }
        let n = self.grid.n_cells();
        self.f_one = self.f.iter().map(|p| p.node_value(n)).collect();
        self.g_one = self.g.iter().map(|p| p.node_value(n)).collect();
    }

    pub fn n_max(&self) -> usize {
        self.f.len() / 2 - 1
    }
    /// Highest available order k.
    pub fn max_order(&self) -> usize {
        self.f.len() - 1
    }
    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }
    pub fn f(&self, k: usize) -> &PiecewisePoly {
        &self.f[k]
    }
    pub fn g(&self, k: usize) -> &PiecewisePoly {
        &self.g[k]
    }
    pub fn p(&self, n: usize) -> &PiecewisePoly {
        &self.f[2 * n]
    }
    pub fn q(&self, n: usize) -> &PiecewisePoly {
        &self.f[2 * n + 1]
    }
    /// F_k(1,1).
    pub fn f_at_one(&self, k: usize) -> f64 {
        self.f_one[k]
    }
    /// G_k(1,1).
    pub fn g_at_one(&self, k: usize) -> f64 {
        self.g_one[k]
    }

    /// max_n ((n!)^2 F_{2n}(1,1))^{1/n} over the computed orders.
    pub fn decay_constant(&self) -> f64 {
        (1..=self.n_max())
            .filter(|&n| self.f_one[2 * n] > 0.0)
            .map(|n| ((2.0 * ln_factorial(n) + self.f_one[2 * n].ln()) / n as f64).exp())
            .fold(0.0, f64::max)
    }

    /// Same fit over F_{2n}(1,1) + G_{2n}(1,1), the combination entering char_fn.
    pub fn decay_constant_fg(&self) -> f64 {
        (1..=self.n_max())
            .map(|n| (n, self.f_one[2 * n] + self.g_one[2 * n]))
            .filter(|&(_, s)| s > 0.0)
            .map(|(n, s)| ((2.0 * ln_factorial(n) + s.ln()) / n as f64).exp())
            .fold(0.0, f64::max)
    }

    /// (n, F_{2n}(1,1), F_2(1,1)^n / n!) for n = 1..=n.
    pub fn taylor_bound_chain(&self, n: usize) -> Vec<(usize, f64, f64)> {
        let f2 = self.f_one[2];
        (1..=n.min(self.n_max()))
            .map(|k| (k, self.f_one[2 * k], (k as f64 * f2.ln() - ln_factorial(k)).exp()))
            .collect()
    }

    pub fn eval_f(&self, k: usize, x: f64, mode: EvalMode) -> f64 {
        self.f[k].eval(x, mode)
    }
    pub fn eval_g(&self, k: usize, x: f64, mode: EvalMode) -> f64 {
        self.g[k].eval(x, mode)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaclaurinResult {
    pub value: f64,
    pub remainder_bound: f64,
}

/// f(0) + Σ_{k=1}^{n_max} D^{(k)} f(0) F_k(x,x).
///
/// The remainder after order n_max is bounded by c F_2(1,1)^j / j! with
/// j = ceil((n_max+1)/2), where c bounds the next iterated derivatives. Entries
/// of `derivs` beyond n_max are used for c when present; otherwise the last two
/// supplied derivatives stand in for it.
pub fn maclaurin_eval(
    diag: &PolynomialDiagonals,
    derivs: &[f64],
    x: f64,
    n_max: usize,
    tol: f64,
) -> Result<MaclaurinResult> {
    if derivs.is_empty() {
        return Err(Error::InvalidArgument("need at least f(0)".into()));
    }
    if n_max > diag.max_order() {
        return Err(Error::TruncationNotConverged(format!(
            "order {n_max} exceeds the computed diagonals ({})",
            diag.max_order()
        )));
    }
    let mut value = derivs[0];
    for k in 1..=n_max.min(derivs.len() - 1) {
        value += derivs[k] * diag.eval_f(k, x, EvalMode::Value);
    }
    let c = if derivs.len() > n_max + 1 {
        derivs[n_max + 1..derivs.len().min(n_max + 3)].iter().map(|d| d.abs()).fold(0.0, f64::max)
    } else {
        let lo = derivs.len().saturating_sub(2);
        derivs[lo..].iter().map(|d| d.abs()).fold(0.0, f64::max)
    };
    let j = (n_max + 2) / 2;
    let f2 = diag.f_at_one(2);
    let remainder_bound = c * (j as f64 * f2.ln() - ln_factorial(j)).exp();
    if remainder_bound > tol {
        return Err(Error::TruncationNotConverged(format!(
            "remainder bound {remainder_bound:e} exceeds tolerance {tol:e}"
        )));
    }
    Ok(MaclaurinResult { value, remainder_bound })
}
