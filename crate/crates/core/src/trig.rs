//! Generalized cosine and sine pairs C_WV, S_WV, C_VW, S_VW as alternating
//! series in the diagonals F_k, G_k.

use std::sync::{Arc, RwLock};

use crate::calculus::{lateral_derivative, DerivSide, PolynomialDiagonals};
use crate::error::{Error, Result};
use crate::grid::{FnSide, Grid, GridFunction};
use crate::measure::{EvalMode, MeasureFunction};
use crate::numerics::KahanSum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrigKind {
    Cwv,
    Swv,
    Cvw,
    Svw,
}

impl TrigKind {
    fn odd(self) -> bool {
        matches!(self, TrigKind::Swv | TrigKind::Svw)
    }
    fn uses_f(self) -> bool {
        matches!(self, TrigKind::Cwv | TrigKind::Swv)
    }
    pub fn side(self) -> FnSide {
        if self.uses_f() {
            FnSide::Cadlag
        } else {
            FnSide::Caglad
        }
    }
}

/// Largest order the engine will build before giving up.
pub const MAX_SERIES_N: usize = 160;
/// Relative rounding level above which an alternating sum is rejected.
const MAX_ROUNDING: f64 = 1e-6;

/// Truncation plan for one series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesPlan {
    /// Highest order k included.
    pub order: usize,
    /// Bound on the omitted tail (sup over x).
    pub truncation_bound: f64,
    /// Estimate of accumulated rounding, ε · Σ |terms|.
    pub rounding_bound: f64,
}

#[derive(Debug, Clone)]
pub struct TrigEval {
    pub alpha: f64,
    pub kind: TrigKind,
    pub values: GridFunction,
    pub truncation_order: usize,
    pub truncation_bound: f64,
    pub rounding_bound: f64,
}

/// Shared series machinery: owns the diagonals and extends them on demand.
#[derive(Debug)]
pub struct TrigEngine {
    w: MeasureFunction,
    v: MeasureFunction,
    diag: RwLock<Arc<PolynomialDiagonals>>,
}

impl TrigEngine {
    pub fn new(w: &MeasureFunction, v: &MeasureFunction) -> Result<Self> {
        let diag = PolynomialDiagonals::new(w, v, 16)?;
        Ok(Self { w: w.clone(), v: v.clone(), diag: RwLock::new(Arc::new(diag)) })
    }

    pub fn w(&self) -> &MeasureFunction {
        &self.w
    }
    pub fn v(&self) -> &MeasureFunction {
        &self.v
    }

    /// Diagonals with at least `n` even/odd pairs.
    pub fn diagonals(&self, n: usize) -> Arc<PolynomialDiagonals> {
        {
            let d = self.diag.read().unwrap();
            if d.n_max() >= n {
                return d.clone();
            }
        }
        let mut guard = self.diag.write().unwrap();
        if guard.n_max() < n {
            let mut d = (**guard).clone();
            d.extend_to(n);
            *guard = Arc::new(d);
        }
        guard.clone()
    }

    fn coeff_at_one(diag: &PolynomialDiagonals, kind: TrigKind, k: usize) -> f64 {
        if kind.uses_f() {
            diag.f_at_one(k)
        } else {
            diag.g_at_one(k)
        }
    }

    /// Choose the truncation order so that the omitted tail is below `tol`.
    /// Since F_k(x,x) and G_k(x,x) are nondecreasing in x, terms at x = 1
    /// dominate all others.
    pub fn plan(&self, kind: TrigKind, alpha: f64, tol: f64) -> Result<(SeriesPlan, Arc<PolynomialDiagonals>)> {
        let start = if kind.odd() { 1 } else { 0 };
        if !(alpha >= 0.0) {
            return Err(Error::InvalidArgument(format!("alpha must be nonnegative, got {alpha}")));
        }
        if alpha == 0.0 {
            let plan = SeriesPlan { order: start, truncation_bound: 0.0, rounding_bound: 0.0 };
            return Ok((plan, self.diagonals(1)));
        }
        let mut n_pairs = 16;
        loop {
            let diag = self.diagonals(n_pairs);
            let mut abs_sum = 0.0;
            let mut prev = f64::INFINITY;
            let mut k = start;
            let mut ln_alpha_pow = start as f64 * alpha.ln();
            while k <= diag.max_order() {
                let c = Self::coeff_at_one(&diag, kind, k);
                let t = (ln_alpha_pow + c.ln()).exp();
                abs_sum += t;
                let past_peak = (k as f64) > alpha * 2.0 && t < prev;
                if past_peak || t == 0.0 {
                    let r = if prev.is_finite() && prev > 0.0 { t / prev } else { 0.0 };
                    let tail = if r < 1.0 { t * r / (1.0 - r) } else { f64::INFINITY };
                    if tail < tol && t < tol {
                        let rounding = 4.0 * f64::EPSILON * abs_sum;
                        if rounding > MAX_ROUNDING {
                            return Err(Error::TruncationNotConverged(format!(
                                "cancellation in the alternating series at alpha = {alpha}: rounding estimate {rounding:e}"
                            )));
                        }
                        return Ok((SeriesPlan { order: k, truncation_bound: tail, rounding_bound: rounding }, diag));
                    }
                }
                prev = t;
                k += 2;
                ln_alpha_pow += 2.0 * alpha.ln();
            }
            if n_pairs >= MAX_SERIES_N {
                return Err(Error::TruncationNotConverged(format!(
                    "alpha = {alpha} needs more than {MAX_SERIES_N} series orders"
                )));
            }
            n_pairs = (n_pairs * 2).min(MAX_SERIES_N);
        }
    }

    /// Value of the series at a point.
    pub fn eval_at(&self, kind: TrigKind, alpha: f64, x: f64, mode: EvalMode, tol: f64) -> Result<f64> {
        let (plan, diag) = self.plan(kind, alpha, tol)?;
        Ok(sum_terms(kind, alpha, plan.order, |k| {
            if kind.uses_f() {
                diag.eval_f(k, x, mode)
            } else {
                diag.eval_g(k, x, mode)
            }
        }))
    }

    /// Value at x = 1 (no atoms sit at 1, so all limits agree).
    pub fn at_one(&self, kind: TrigKind, alpha: f64, tol: f64) -> Result<(f64, SeriesPlan)> {
        let (plan, diag) = self.plan(kind, alpha, tol)?;
        let v = sum_terms(kind, alpha, plan.order, |k| Self::coeff_at_one(&diag, kind, k));
        Ok((v, plan))
    }

    /// Tabulate all diagonals up to `order` on a fine grid.
    pub fn tables(&self, grid: &Arc<Grid>, order: usize) -> DiagonalTables {
        let diag = self.diagonals(order / 2 + 1);
        let f = (0..=order).map(|k| diag.f(k).sample(grid)).collect();
        let g = (0..=order).map(|k| diag.g(k).sample(grid)).collect();
        DiagonalTables { grid: grid.clone(), f, g }
    }

    pub fn trig_eval(&self, kind: TrigKind, alpha: f64, tol: f64, grid: &Arc<Grid>) -> Result<TrigEval> {
        let (plan, _) = self.plan(kind, alpha, tol)?;
        let tables = self.tables(grid, plan.order);
        Ok(tables.eval(kind, alpha, plan))
    }

    /// All four functions at once on one grid.
    pub fn quartet(&self, alpha: f64, tol: f64, grid: &Arc<Grid>) -> Result<[TrigEval; 4]> {
        let kinds = [TrigKind::Cwv, TrigKind::Swv, TrigKind::Cvw, TrigKind::Svw];
        let mut plans = vec![];
        for k in kinds {
            plans.push(self.plan(k, alpha, tol)?.0);
        }
        let order = plans.iter().map(|p| p.order).max().unwrap();
        let tables = self.tables(grid, order);
        Ok([
            tables.eval(kinds[0], alpha, plans[0]),
            tables.eval(kinds[1], alpha, plans[1]),
            tables.eval(kinds[2], alpha, plans[2]),
            tables.eval(kinds[3], alpha, plans[3]),
        ])
    }

    /// C_WV C_VW + S_WV S_VW - 1 at every node and one-sided limit, together
    /// with the combined truncation and rounding bound of the four series.
    pub fn fundamental_defect(&self, alpha: f64, tol: f64, grid: &Arc<Grid>) -> Result<(GridFunction, f64)> {
        let [c1, s1, c2, s2] = self.quartet(alpha, tol, grid)?;
        let prod = c1.values.mul(&c2.values)?.add(&s1.values.mul(&s2.values)?)?;
        let defect = prod.map(|x| x - 1.0);
        let bound = [&c1, &s1, &c2, &s2].iter().map(|t| t.truncation_bound + t.rounding_bound).sum::<f64>() * 3.0;
        Ok((defect, bound))
    }

    /// Max over cells of the four relations D_W^- C_WV = -α S_VW, D_W^- S_WV = α C_VW,
    /// D_V^+ C_VW = -α S_WV, D_V^+ S_VW = α C_WV, with the right-hand sides
    /// averaged over each cell against the same measure as the quotient.
    pub fn derivative_relation_residual(&self, alpha: f64, tol: f64, grid: &Arc<Grid>) -> Result<f64> {
        Ok(self.derivative_relation_residuals(alpha, tol, grid)?.into_iter().fold(0.0, f64::max))
    }

    /// Per-node residuals (max over the four relations), indexed by the node
    /// ending the W-cell and starting the V-cell.
    pub fn derivative_relation_residuals(&self, alpha: f64, tol: f64, grid: &Arc<Grid>) -> Result<Vec<f64>> {
        let n = grid.n_cells();
        if alpha == 0.0 {
            return Ok(vec![0.0; n + 1]);
        }
        let [cwv, swv, cvw, svw] = self.quartet(alpha, tol, grid)?;
        let dc = lateral_derivative(&cwv.values, DerivSide::WLeft)?;
        let ds = lateral_derivative(&swv.values, DerivSide::WLeft)?;
        let dcv = lateral_derivative(&cvw.values, DerivSide::VRight)?;
        let dsv = lateral_derivative(&svw.values, DerivSide::VRight)?;
        let mut res = vec![0.0f64; n + 1];
        for i in 0..n {
            let mw = grid.cell_w(i);
            let mv = grid.cell_v(i);
            let avg_svw = svw.values.integral_w_idx(i, i + 1) / mw;
            let avg_cvw = cvw.values.integral_w_idx(i, i + 1) / mw;
            let avg_swv = swv.values.integral_v_idx(i, i + 1) / mv;
            let avg_cwv = cwv.values.integral_v_idx(i, i + 1) / mv;
            let r1 = (dc.left(i + 1) + alpha * avg_svw).abs();
            let r2 = (ds.left(i + 1) - alpha * avg_cvw).abs();
            let r3 = (dcv.right(i) + alpha * avg_swv).abs();
            let r4 = (dsv.right(i) - alpha * avg_cwv).abs();
            res[i + 1] = res[i + 1].max(r1.max(r2));
            res[i] = res[i].max(r3.max(r4));
        }
        Ok(res)
    }
}

fn sum_terms(kind: TrigKind, alpha: f64, order: usize, coeff: impl Fn(usize) -> f64) -> f64 {
    if alpha == 0.0 {
        return if kind.odd() { 0.0 } else { coeff(0) };
    }
    let mut acc = KahanSum::new();
    let mut k = if kind.odd() { 1 } else { 0 };
    let mut sign = 1.0;
    while k <= order {
        let c = coeff(k);
        if c != 0.0 {
            acc.add(sign * scaled_power(c, alpha, k));
        }
        sign = -sign;
        k += 2;
    }
    acc.value()
}

/// c · α^k, directly when representable, otherwise in the log domain.
pub(crate) fn scaled_power(c: f64, alpha: f64, k: usize) -> f64 {
    let p = alpha.powi(k as i32);
    let t = c * p;
    if p.is_finite() && p > 0.0 && t.is_finite() && t.abs() > 1e-290 {
        t
    } else {
        (k as f64 * alpha.ln() + c.abs().ln()).exp() * c.signum()
    }
}

/// Diagonals sampled on a fine grid, both one-sided limits per node.
#[derive(Debug, Clone)]
pub struct DiagonalTables {
    grid: Arc<Grid>,
    f: Vec<GridFunction>,
    g: Vec<GridFunction>,
}

impl DiagonalTables {
    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }
    pub fn order(&self) -> usize {
        self.f.len() - 1
    }
    /// Sampled F_k.
    pub fn f(&self, k: usize) -> &GridFunction {
        &self.f[k]
    }
    /// Sampled G_k.
    pub fn g(&self, k: usize) -> &GridFunction {
        &self.g[k]
    }

    pub fn eval(&self, kind: TrigKind, alpha: f64, plan: SeriesPlan) -> TrigEval {
        let tab = if kind.uses_f() { &self.f } else { &self.g };
        let n = self.grid.nodes().len();
        let mut left = Vec::with_capacity(n);
        let mut right = Vec::with_capacity(n);
        for j in 0..n {
            left.push(sum_terms(kind, alpha, plan.order, |k| tab[k].left(j)));
            right.push(sum_terms(kind, alpha, plan.order, |k| tab[k].right(j)));
        }
        TrigEval {
            alpha,
            kind,
            values: GridFunction::from_limits(self.grid.clone(), kind.side(), left, right),
            truncation_order: plan.order,
            truncation_bound: plan.truncation_bound,
            rounding_bound: plan.rounding_bound,
        }
    }
}

/// Fixed point of ν = a + b W - λ T_WV ν on the grid, by Picard iteration with
/// trapezoid running integrals. Independent of the series code path.
pub fn picard_fixed_point(grid: &Arc<Grid>, a: f64, b: f64, lambda: f64, tol: f64, max_iter: usize) -> Result<GridFunction> {
    use crate::calculus::{double_integral_t, TOrientation};
    let base = GridFunction::constant(grid, a).axpy(b, &GridFunction::measure_w(grid))?;
    let mut nu = base.clone();
    for it in 0..max_iter {
        let next = base.axpy(-lambda, &double_integral_t(&nu, TOrientation::WV))?;
        let diff = next.max_abs_diff(&nu);
        nu = next;
        if diff < tol {
            return Ok(nu);
        }
        if it + 1 == max_iter {
            return Err(Error::ConvergenceFailure { iterations: max_iter, residual: diff });
        }
    }
    Ok(nu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::Side;
    use std::f64::consts::PI;

    fn classical() -> TrigEngine {
        TrigEngine::new(&MeasureFunction::identity(Side::RightContinuous), &MeasureFunction::identity(Side::LeftContinuous)).unwrap()
    }
    fn atomic() -> TrigEngine {
        let w = MeasureFunction::linear_with_atoms("a", Side::RightContinuous, 0.5, &[(0.5, 0.5)]).unwrap();
        TrigEngine::new(&w, &MeasureFunction::identity(Side::LeftContinuous)).unwrap()
    }

    #[test]
    fn classical_cosine_quarter() {
        let e = classical();
        let v = e.eval_at(TrigKind::Cwv, 2.0 * PI, 0.25, EvalMode::Value, 1e-14).unwrap();
        assert!(v.abs() < 1e-10);
        let s = e.eval_at(TrigKind::Svw, 2.0 * PI, 0.25, EvalMode::Value, 1e-14).unwrap();
        assert!((s - 1.0).abs() < 1e-10);
    }

    #[test]
    fn values_at_origin() {
        let e = atomic();
        for kind in [TrigKind::Cwv, TrigKind::Cvw] {
            assert_eq!(e.eval_at(kind, 3.7, 0.0, EvalMode::Value, 1e-13).unwrap(), 1.0);
        }
        for kind in [TrigKind::Swv, TrigKind::Svw] {
            assert_eq!(e.eval_at(kind, 3.7, 0.0, EvalMode::Value, 1e-13).unwrap(), 0.0);
        }
    }

    #[test]
    fn sides_follow_kind() {
        let e = atomic();
        let g = Grid::new(e.w(), e.v(), 16).unwrap();
        let [c1, s1, c2, s2] = e.quartet(2.0, 1e-13, &g).unwrap();
        assert_eq!(c1.values.side(), FnSide::Cadlag);
        assert_eq!(s1.values.side(), FnSide::Cadlag);
        assert_eq!(c2.values.side(), FnSide::Caglad);
        assert_eq!(s2.values.side(), FnSide::Caglad);
    }

    #[test]
    fn atomic_against_picard_oracle() {
        let e = atomic();
        let alpha: f64 = 5.0;
        let mut errs = vec![];
        for m in [512usize, 1024, 2048] {
            let g = Grid::new(e.w(), e.v(), m).unwrap();
            let c = picard_fixed_point(&g, 1.0, 0.0, alpha * alpha, 1e-14, 500).unwrap();
            let s = picard_fixed_point(&g, 0.0, alpha, alpha * alpha, 1e-14, 500).unwrap();
            let n = g.n_cells();
            let cs = e.eval_at(TrigKind::Cwv, alpha, 1.0, EvalMode::Value, 1e-14).unwrap();
            let ss = e.eval_at(TrigKind::Swv, alpha, 1.0, EvalMode::Value, 1e-14).unwrap();
            errs.push(((c.value(n) - cs).abs(), (s.value(n) - ss).abs()));
        }
        // second-order agreement with the grid oracle
        for k in 0..2 {
            let r0 = errs[k].0 / errs[k + 1].0;
            let r1 = errs[k].1 / errs[k + 1].1;
            assert!(r0 > 3.5 && r1 > 3.5, "{errs:?}");
        }
        assert!(errs[2].0 < 1e-4 && errs[2].1 < 1e-4, "{errs:?}");
    }

    #[test]
    fn pythagorean_identity_classical() {
        let e = classical();
        let g = Grid::new(e.w(), e.v(), 64).unwrap();
        let (d, _) = e.fundamental_defect(3.0, 1e-14, &g).unwrap();
        assert!(d.sup_norm() < 1e-10);
    }

    #[test]
    fn fundamental_relation_atomic() {
        let e = atomic();
        let g = Grid::new(e.w(), e.v(), 128).unwrap();
        for alpha in [1.0, 5.0, 10.0] {
            let (d, bound) = e.fundamental_defect(alpha, 1e-14, &g).unwrap();
            assert!(d.sup_norm() < 1e-8, "alpha {alpha}: {}", d.sup_norm());
            assert!(d.sup_norm() <= bound.max(1e-13), "alpha {alpha}: {} > {bound}", d.sup_norm());
        }
        let (d, _) = e.fundamental_defect(1e-6, 1e-14, &g).unwrap();
        assert!(d.sup_norm() < 1e-14);
    }

    #[test]
    fn derivative_relations_classical() {
        let e = classical();
        let g = Grid::new(e.w(), e.v(), 4096).unwrap();
        assert!(e.derivative_relation_residual(2.0 * PI, 1e-14, &g).unwrap() < 1e-4);
        assert_eq!(e.derivative_relation_residual(0.0, 1e-14, &g).unwrap(), 0.0);
    }

    #[test]
    fn derivative_relations_converge_and_atom_node_is_sharp() {
        let e = atomic();
        let mut prev = f64::INFINITY;
        for m in [64, 128, 256] {
            let g = Grid::new(e.w(), e.v(), m).unwrap();
            let res = e.derivative_relation_residuals(3.0, 1e-14, &g).unwrap();
            let worst = res.iter().cloned().fold(0.0, f64::max);
            assert!(worst < prev / 3.0);
            prev = worst;
            let j = g.index_of(0.5).unwrap();
            assert!(res[j] <= worst);
        }
    }

    #[test]
    fn wronskian_at_origin_is_identity() {
        let e = atomic();
        let alpha: f64 = 2.5;
        let g = Grid::new(e.w(), e.v(), 4096).unwrap();
        let [c, s, _, _] = e.quartet(alpha, 1e-14, &g).unwrap();
        assert_eq!(c.values.value(0), 1.0);
        assert_eq!(s.values.value(0), 0.0);
        // D_W^- at 0+ by the first-cell quotient
        let dc = (c.values.value(1) - 1.0) / g.cell_w(0);
        let ds = (s.values.value(1) - 0.0) / g.cell_w(0) / alpha;
        assert!(dc.abs() < 1e-2 && (ds - 1.0).abs() < 1e-3);
    }

    #[test]
    fn huge_alpha_is_refused() {
        let e = classical();
        assert!(matches!(e.plan(TrigKind::Cwv, 60.0, 1e-12), Err(Error::TruncationNotConverged(_))));
    }
}
