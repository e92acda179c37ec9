//! Eigenvalues of -Δ_{W,V} as roots of the characteristic function
//! f(z) = C_WV(√z, 1) + C_VW(√z, 1) - 2, with multiplicities read off the
//! periodic boundary system, and the eigenfunctions built from them.

use std::sync::Arc;

use serde::Serialize;

use crate::calculus::PolynomialDiagonals;
use crate::error::{Error, Result};
use crate::gridop::{DiscreteOperator, EigenResidual};
use crate::grid::{FnSide, Grid, GridFunction};
use crate::measure::{EvalMode, MeasureFunction};
use crate::numerics::{linear_fit, KahanSum};
use crate::quadrature::composite;
use crate::trig::{scaled_power, TrigEngine, MAX_SERIES_N};

pub const DEFAULT_TOL: f64 = 1e-8;
/// Cancellation level beyond which char_fn refuses to answer.
const MAX_CHAR_ROUNDING: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CharValue {
    pub value: f64,
    pub derivative: f64,
    /// 4ε Σ|terms|
    pub rounding: f64,
}

/// The periodic boundary system in the unknowns (a, b/√λ):
/// [[C_WV(1) - 1, S_WV(1)], [-S_VW(1), C_VW(1) - 1]].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundaryMatrix {
    pub entries: [[f64; 2]; 2],
    pub noise: f64,
}

impl BoundaryMatrix {
    /// Singular values, largest first.
    pub fn singular_values(&self) -> [f64; 2] {
        let [[a, b], [c, d]] = self.entries;
        let fro2 = a * a + b * b + c * c + d * d;
        let det = a * d - b * c;
        let disc = ((fro2 * fro2) - 4.0 * det * det).max(0.0).sqrt();
        let smax = (0.5 * (fro2 + disc)).sqrt();
        let smin = if smax > 0.0 { det.abs() / smax } else { 0.0 };
        [smax, smin]
    }

    /// Unit null vector when the rank is one: orthogonal to the dominant row.
    fn null_vector(&self) -> (f64, f64) {
        let [r0, r1] = self.entries;
        let r = if r0[0].hypot(r0[1]) >= r1[0].hypot(r1[1]) { r0 } else { r1 };
        let n = r[0].hypot(r[1]);
        (-r[1] / n, r[0] / n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralEigenvalue {
    pub lambda: f64,
    pub gamma: f64,
    pub multiplicity: usize,
    /// ν = a C_WV(√λ, ·) + (b/√λ) S_WV(√λ, ·); for λ = 0, ν = a.
    pub coeff_pairs: Vec<(f64, f64)>,
    pub char_value: f64,
    pub singular_values: [f64; 2],
    pub rank_threshold: f64,
    pub tangential: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuspectRootInfo {
    pub z: f64,
    pub char_value: f64,
    pub sigma_min: f64,
    pub rank_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumReport {
    pub w_hash: String,
    pub v_hash: String,
    pub z_max: f64,
    pub tol: f64,
    pub eigenvalues: Vec<SpectralEigenvalue>,
    /// Roots of char_fn whose boundary matrix has full rank.
    pub suspect_roots: Vec<SuspectRootInfo>,
    /// (r, n(r)) with n counting eigenvalues <= r with multiplicity.
    pub counting_samples: Vec<(f64, usize)>,
    pub growth_order_estimate: f64,
    pub growth_order_se: f64,
    pub char_fn_evaluations: usize,
}

impl SpectrumReport {
    /// Eigenvalues repeated by multiplicity.
    pub fn lambdas(&self) -> Vec<f64> {
        self.eigenvalues.iter().flat_map(|e| std::iter::repeat(e.lambda).take(e.multiplicity)).collect()
    }
    pub fn gammas(&self) -> Vec<f64> {
        self.eigenvalues.iter().flat_map(|e| std::iter::repeat(e.gamma).take(e.multiplicity)).collect()
    }
}

/// Lower bound λ_n >= C n² with C = min_{n<=3} λ_n / n², checked on every
/// computed nonzero eigenvalue.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GrowthCheck {
    pub constant: f64,
    pub worst_ratio: f64,
    pub holds: bool,
}

pub fn growth_check(nonzero_lambdas: &[f64]) -> GrowthCheck {
    let c = nonzero_lambdas.iter().take(3).enumerate().map(|(i, l)| l / ((i + 1) as f64).powi(2)).fold(f64::INFINITY, f64::min);
    let worst = nonzero_lambdas
        .iter()
        .enumerate()
        .map(|(i, l)| l / (c * ((i + 1) as f64).powi(2)))
        .fold(f64::INFINITY, f64::min);
    GrowthCheck { constant: c, worst_ratio: worst, holds: worst >= 1.0 - 1e-9 }
}

struct Series {
    value: f64,
    abs_sum: f64,
    order: usize,
}

#[derive(Debug)]
pub struct SpectralProblem {
    w: MeasureFunction,
    v: MeasureFunction,
    engine: Arc<TrigEngine>,
}

fn bisect(f: impl Fn(f64) -> Result<f64>, mut a: f64, mut fa: f64, mut b: f64) -> Result<f64> {
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        let fm = f(m)?;
        if fm == 0.0 {
            return Ok(m);
        }
        if (fm > 0.0) == (fa > 0.0) {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    Ok(0.5 * (a + b))
}

impl SpectralProblem {
    pub fn new(w: &MeasureFunction, v: &MeasureFunction) -> Result<Self> {
        Ok(Self { w: w.clone(), v: v.clone(), engine: Arc::new(TrigEngine::new(w, v)?) })
    }

    pub fn engine(&self) -> &Arc<TrigEngine> {
        &self.engine
    }
    pub fn w(&self) -> &MeasureFunction {
        &self.w
    }
    pub fn v(&self) -> &MeasureFunction {
        &self.v
    }

    /// Σ (-1)^j α^k c_k over k = start + 2j with c_k = F_k(1,1) or G_k(1,1).
    fn at_one(&self, use_f: bool, odd: bool, alpha: f64) -> Result<Series> {
        let start = odd as usize;
        if alpha == 0.0 {
            let v = if odd { 0.0 } else { 1.0 };
            return Ok(Series { value: v, abs_sum: v, order: start });
        }
        let mut pairs = 16;
        loop {
            let diag = self.engine.diagonals(pairs);
            let mut acc = KahanSum::new();
            let mut sign = 1.0;
            let mut prev = f64::INFINITY;
            let mut k = start;
            while k <= diag.max_order() {
                let c = if use_f { diag.f_at_one(k) } else { diag.g_at_one(k) };
                let t = scaled_power(c, alpha, k);
                acc.add(sign * t);
                if k as f64 > 2.0 * alpha && t < prev && t <= 1e-17 * acc.abs_total().max(1.0) {
                    return Ok(Series { value: acc.value(), abs_sum: acc.abs_total(), order: k });
                }
                prev = t;
                sign = -sign;
                k += 2;
            }
            if pairs >= MAX_SERIES_N {
                return Err(Error::TruncationNotConverged(format!("series at alpha = {alpha} needs more than {MAX_SERIES_N} orders")));
            }
            pairs = (pairs * 2).min(MAX_SERIES_N);
        }
    }

    pub fn char_fn(&self, z: f64) -> Result<f64> {
        Ok(self.char_fn_with_derivative(z)?.value)
    }

    /// f(z) = Σ_{n>=1} (-1)^n z^n (F_2n(1,1) + G_2n(1,1)) and f'(z).
    pub fn char_fn_with_derivative(&self, z: f64) -> Result<CharValue> {
        if !(z >= 0.0) || !z.is_finite() {
            return Err(Error::InvalidArgument(format!("char_fn needs z >= 0, got {z}")));
        }
        let mut pairs = 16;
        loop {
            let diag = self.engine.diagonals(pairs);
            let s = |n: usize| diag.f_at_one(2 * n) + diag.g_at_one(2 * n);
            if z == 0.0 {
                return Ok(CharValue { value: 0.0, derivative: -s(1), rounding: 0.0 });
            }
            let mut val = KahanSum::new();
            let mut der = KahanSum::new();
            let mut prev = f64::INFINITY;
            let mut n = 1;
            while 2 * n <= diag.max_order() {
                let sign = if n % 2 == 1 { -1.0 } else { 1.0 };
                let t = scaled_power(s(n), z, n);
                let td = n as f64 * scaled_power(s(n), z, n - 1);
                val.add(sign * t);
                der.add(sign * td);
                if n as f64 > z.sqrt()
                    && t < prev
                    && t <= 1e-17 * val.abs_total().max(1.0)
                    && td <= 1e-17 * der.abs_total().max(1.0)
                {
                    let rounding = 4.0 * f64::EPSILON * val.abs_total();
                    if rounding > MAX_CHAR_ROUNDING {
                        return Err(Error::TruncationNotConverged(format!(
                            "char_fn cancellation at z = {z}: rounding estimate {rounding:e}"
                        )));
                    }
                    return Ok(CharValue { value: val.value(), derivative: der.value(), rounding });
                }
                prev = t;
                n += 1;
            }
            if pairs >= MAX_SERIES_N {
                return Err(Error::TruncationNotConverged(format!("char_fn at z = {z} needs more than {MAX_SERIES_N} orders")));
            }
            pairs = (pairs * 2).min(MAX_SERIES_N);
        }
    }

    pub fn boundary_matrix(&self, z: f64) -> Result<BoundaryMatrix> {
        let a = z.sqrt();
        let cwv = self.at_one(true, false, a)?;
        let swv = self.at_one(true, true, a)?;
        let cvw = self.at_one(false, false, a)?;
        let svw = self.at_one(false, true, a)?;
        let noise = 4.0 * f64::EPSILON * (cwv.abs_sum + swv.abs_sum + cvw.abs_sum + svw.abs_sum);
        Ok(BoundaryMatrix { entries: [[cwv.value - 1.0, swv.value], [-svw.value, cvw.value - 1.0]], noise })
    }

    /// Scan (0, z_max] for roots of char_fn and classify them.
    pub fn find_spectrum(&self, z_max: f64, tol: f64) -> Result<SpectrumReport> {
        if !(z_max > 0.0) {
            return Err(Error::InvalidArgument("z_max must be positive".into()));
        }
        let evals = std::cell::Cell::new(0usize);
        let eval = |z: f64| {
            evals.set(evals.get() + 1);
            self.char_fn_with_derivative(z)
        };
        // Poincaré: λ_1 >= 1/(W(1)V(1)), so this step cannot jump over λ_1.
        let h0 = 1.0 / (8.0 * self.w.total_mass() * self.v.total_mass());
        let mut za = (1e-3 * h0).min(z_max);
        let mut ca = eval(za)?;
        let mut first_gap: Option<f64> = None;
        let mut candidates: Vec<(f64, bool)> = vec![];
        while za < z_max {
            let step = match first_gap {
                Some(g) => (za / 50.0).max(g / 8.0),
                None => (za / 50.0).max(h0),
            };
            let zb = (za + step).min(z_max);
            let cb = eval(zb)?;
            let found_before = candidates.len();
            if (ca.value > 0.0) != (cb.value > 0.0) {
                let z = bisect(|z| Ok(eval(z)?.value), za, ca.value, zb)?;
                candidates.push((z, false));
            } else if (ca.derivative > 0.0) != (cb.derivative > 0.0) {
                let zs = bisect(|z| Ok(eval(z)?.derivative), za, ca.derivative, zb)?;
                let cs = eval(zs)?;
                let thr = tol.max(10.0 * cs.rounding);
                if (cs.value > 0.0) != (ca.value > 0.0) && cs.value.abs() > thr {
                    candidates.push((bisect(|z| Ok(eval(z)?.value), za, ca.value, zs)?, false));
                    candidates.push((bisect(|z| Ok(eval(z)?.value), zs, cs.value, zb)?, false));
                } else if cs.value.abs() <= thr {
                    candidates.push((zs, true));
                }
            }
            if first_gap.is_none() && candidates.len() > found_before {
                first_gap = Some(candidates[found_before].0);
            }
            za = zb;
            ca = cb;
        }

        let mut eigenvalues = vec![SpectralEigenvalue {
            lambda: 0.0,
            gamma: 1.0,
            multiplicity: 1,
            coeff_pairs: vec![(1.0, 0.0)],
            char_value: 0.0,
            singular_values: [0.0, 0.0],
            rank_threshold: 0.0,
            tangential: false,
        }];
        let mut suspect_roots = vec![];
        for (z, tangential) in candidates {
            let bm = self.boundary_matrix(z)?;
            let sv = bm.singular_values();
            let thr = (tol * sv[0].max(1.0)).max(1e3 * bm.noise);
            let rank = sv.iter().filter(|&&s| s > thr).count();
            let char_value = eval(z)?.value;
            let alpha = z.sqrt();
            let coeff_pairs = match rank {
                0 => vec![(1.0, 0.0), (0.0, alpha)],
                1 => {
                    let (a, bt) = bm.null_vector();
                    let (mut a, mut b) = (a, alpha * bt);
                    if b < 0.0 || (b == 0.0 && a < 0.0) {
                        a = -a;
                        b = -b;
                    }
                    vec![(a, b)]
                }
                _ => {
                    suspect_roots.push(SuspectRootInfo { z, char_value, sigma_min: sv[1], rank_threshold: thr });
                    continue;
                }
            };
            let e = SpectralEigenvalue {
                lambda: z,
                gamma: 1.0 + z,
                multiplicity: 2 - rank,
                coeff_pairs,
                char_value,
                singular_values: sv,
                rank_threshold: thr,
                tangential,
            };
            let last = eigenvalues.last_mut().unwrap();
            if last.lambda > 0.0 && (z - last.lambda).abs() <= 1e-7 * z {
                if e.multiplicity > last.multiplicity {
                    *last = e;
                }
            } else {
                eigenvalues.push(e);
            }
        }

        let mut counting_samples = vec![];
        let mut count = 0;
        for e in &eigenvalues {
            count += e.multiplicity;
            counting_samples.push((e.lambda, count));
        }
        let (lx, ly): (Vec<f64>, Vec<f64>) =
            counting_samples.iter().filter(|s| s.0 > 0.0).map(|&(r, n)| (r.ln(), (n as f64).ln())).unzip();
        let (growth_order_estimate, growth_order_se) = if lx.len() >= 2 {
            let (_, b, se) = linear_fit(&lx, &ly);
            (b, se)
        } else {
            (f64::NAN, f64::NAN)
        };
        Ok(SpectrumReport {
            w_hash: self.w.content_hash(),
            v_hash: self.v.content_hash(),
            z_max,
            tol,
            eigenvalues,
            suspect_roots,
            counting_samples,
            growth_order_estimate,
            growth_order_se,
            char_fn_evaluations: evals.get(),
        })
    }

    /// Orthonormal eigenfunctions sampled on `grid`, for the first `n_keep`
    /// eigenvalues counted with multiplicity.
    pub fn build_eigenbasis(&self, report: &SpectrumReport, n_keep: usize, grid: &Arc<Grid>) -> Result<EigenBasis> {
        let available: usize = report.eigenvalues.iter().map(|e| e.multiplicity).sum();
        if n_keep > available {
            return Err(Error::InvalidArgument(format!("report holds {available} eigenfunctions, {n_keep} requested")));
        }
        let mut order = 1;
        for e in &report.eigenvalues {
            let a = e.lambda.sqrt();
            order = order.max(self.at_one(true, false, a)?.order).max(self.at_one(true, true, a)?.order);
        }
        let diag = self.engine.diagonals(order / 2 + 1);
        let quad = ExactRule::v_rule(&diag);
        let ftab: Vec<Vec<f64>> =
            quad.points.iter().map(|&(x, mode, _)| (0..=order).map(|k| diag.eval_f(k, x, mode)).collect()).collect();
        let v1 = self.v.total_mass();

        let mut modes: Vec<Mode> = vec![];
        'outer: for e in &report.eigenvalues {
            if e.lambda == 0.0 {
                modes.push(Mode { lambda: 0.0, gamma: 1.0, alpha: 0.0, a: 0.0, b_tilde: 0.0, c0: 1.0 / v1.sqrt(), mean_defect: 0.0 });
                if modes.len() == n_keep {
                    break;
                }
                continue;
            }
            let alpha = e.lambda.sqrt();
            let cs = coefficient_vectors(alpha, order);
            let cvals: Vec<f64> = ftab.iter().map(|f| dot(&cs.0, f)).collect();
            let svals: Vec<f64> = ftab.iter().map(|f| dot(&cs.1, f)).collect();
            let mc = quad.integrate(&cvals) / v1;
            let ms = quad.integrate(&svals) / v1;
            let cp: Vec<f64> = cvals.iter().map(|x| x - mc).collect();
            let sp: Vec<f64> = svals.iter().map(|x| x - ms).collect();
            let ip = |a: &[f64], b: &[f64]| quad.integrate(&a.iter().zip(b).map(|(x, y)| x * y).collect::<Vec<_>>());
            let mut pairs: Vec<(f64, f64)> = vec![];
            if e.multiplicity == 2 {
                let ncc = ip(&cp, &cp).sqrt();
                let phi1: Vec<f64> = cp.iter().map(|x| x / ncc).collect();
                let p = ip(&sp, &phi1);
                let resid: Vec<f64> = sp.iter().zip(&phi1).map(|(s, f)| s - p * f).collect();
                let nr2 = ip(&resid, &resid);
                if nr2 <= 1e-12 * ip(&sp, &sp) {
                    return Err(Error::DegenerateSpan(nr2.sqrt()));
                }
                let nr = nr2.sqrt();
                pairs.push((1.0 / ncc, 0.0));
                pairs.push((-p / (ncc * nr), 1.0 / nr));
            } else {
                let (a, b) = e.coeff_pairs[0];
                let bt = b / alpha;
                let phi: Vec<f64> = cp.iter().zip(&sp).map(|(c, s)| a * c + bt * s).collect();
                let nrm = ip(&phi, &phi).sqrt();
                pairs.push((a / nrm, bt / nrm));
            }
            for (mut a, mut bt) in pairs {
                let scale = a.abs() + bt.abs();
                if bt < -1e-14 * scale || (bt.abs() <= 1e-14 * scale && a < 0.0) {
                    a = -a;
                    bt = -bt;
                }
                let mean = a * mc + bt * ms;
                modes.push(Mode { lambda: e.lambda, gamma: e.gamma, alpha, a, b_tilde: bt, c0: -mean, mean_defect: mean });
                if modes.len() == n_keep {
                    break 'outer;
                }
            }
        }

        let coeffs: Vec<(Vec<f64>, Vec<f64>)> = modes.iter().map(|m| coefficient_vectors(m.alpha, order)).collect();
        let mode_coeffs: Vec<Vec<f64>> = modes
            .iter()
            .zip(&coeffs)
            .map(|(m, (c, s))| c.iter().zip(s).map(|(x, y)| m.a * x + m.b_tilde * y).collect())
            .collect();
        let samples: Vec<Vec<f64>> =
            mode_coeffs.iter().zip(&modes).map(|(c, m)| ftab.iter().map(|f| dot(c, f) + m.c0).collect()).collect();

        let tables = self.engine.tables(grid, order);
        let nn = grid.nodes().len();
        let functions: Vec<GridFunction> = mode_coeffs
            .iter()
            .zip(&modes)
            .map(|(c, m)| {
                let mut left = Vec::with_capacity(nn);
                let mut right = Vec::with_capacity(nn);
                for j in 0..nn {
                    let (mut l, mut r) = (KahanSum::new(), KahanSum::new());
                    for (k, ck) in c.iter().enumerate() {
                        l.add(ck * tables.f(k).left(j));
                        r.add(ck * tables.f(k).right(j));
                    }
                    left.push(l.value() + m.c0);
                    right.push(r.value() + m.c0);
                }
                GridFunction::from_limits(grid.clone(), FnSide::Cadlag, left, right)
            })
            .collect();

        let residuals = if grid.n_cells() >= 3 {
            let op = DiscreteOperator::laplacian(grid, 0.0)?;
            functions
                .iter()
                .zip(&modes)
                .map(|(f, m)| op.eigen_residual(m.lambda, &op.nodal(f)))
                .collect::<Result<Vec<_>>>()?
        } else {
            vec![]
        };

        Ok(EigenBasis {
            report: report.clone(),
            grid: grid.clone(),
            diag,
            modes,
            mode_coeffs,
            functions,
            residuals,
            quad,
            samples,
        })
    }
}

/// Discrete residual of one eigenfunction at resolutions m, 2m, 4m.
#[derive(Debug, Clone, Serialize)]
pub struct ResidualCheck {
    pub index: usize,
    pub lambda: f64,
    pub mass_residuals: [f64; 3],
    pub dual_residuals: [f64; 3],
    pub richardson: crate::gridop::Richardson,
    /// finest residual / Richardson error bar
    pub ratio: f64,
    pub pass: bool,
}

/// The exact eigenfunction is not a discrete eigenvector, so its residual in
/// the pencil is pure discretization error: it must extrapolate to zero, the
/// finest value staying within 10x its own Richardson error estimate. A wrong
/// eigenpair leaves a residual that stalls under refinement and fails.
pub fn residual_convergence(
    problem: &SpectralProblem,
    report: &SpectrumReport,
    n_keep: usize,
    m: usize,
) -> Result<Vec<ResidualCheck>> {
    let mut per_m = vec![];
    for mm in [m, 2 * m, 4 * m] {
        let g = Grid::new(problem.w(), problem.v(), mm)?;
        per_m.push(problem.build_eigenbasis(report, n_keep, &g)?);
    }
    Ok((1..n_keep)
        .map(|i| {
            let mass = [per_m[0].residuals[i].mass_norm, per_m[1].residuals[i].mass_norm, per_m[2].residuals[i].mass_norm];
            let dual = [per_m[0].residuals[i].dual, per_m[1].residuals[i].dual, per_m[2].residuals[i].dual];
            let richardson = crate::gridop::richardson(mass);
            let ratio = mass[2] / richardson.error_bar;
            ResidualCheck {
                index: i,
                lambda: per_m[0].modes[i].lambda,
                mass_residuals: mass,
                dual_residuals: dual,
                richardson,
                ratio,
                pass: ratio <= 10.0 && mass[2] < mass[1] && mass[1] < mass[0],
            }
        })
        .collect())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = KahanSum::new();
    for (x, y) in a.iter().zip(b) {
        s.add(x * y);
    }
    s.value()
}

/// Weights of F_k in C_WV(α, ·) and S_WV(α, ·).
fn coefficient_vectors(alpha: f64, order: usize) -> (Vec<f64>, Vec<f64>) {
    let mut c = vec![0.0; order + 1];
    let mut s = vec![0.0; order + 1];
    if alpha == 0.0 {
        c[0] = 1.0;
        return (c, s);
    }
    for k in 0..=order {
        let sign = if (k / 2) % 2 == 0 { 1.0 } else { -1.0 };
        let t = sign * scaled_power(1.0, alpha, k);
        if k % 2 == 0 {
            c[k] = t;
        } else {
            s[k] = t;
        }
    }
    (c, s)
}

/// Quadrature exact up to the accuracy of pointwise evaluation: composite
/// Gauss–Legendre on every breakpoint cell against the constant density, plus
/// the atoms read from the side each measure sees.
#[derive(Debug, Clone)]
pub struct ExactRule {
    pub points: Vec<(f64, EvalMode, f64)>,
}

impl ExactRule {
    fn build(grid: &Grid, use_v: bool) -> Self {
        let mut points = vec![];
        for i in 0..grid.n_cells() {
            let (x0, x1) = (grid.nodes()[i], grid.nodes()[i + 1]);
            let dens = if use_v { grid.v_density(i) } else { grid.w_density(i) };
            if dens > 0.0 {
                let pieces = ((x1 - x0) * 24.0).ceil().max(1.0) as usize;
                for (x, w) in composite(x0, x1, pieces, 24) {
                    points.push((x, EvalMode::Value, w * dens));
                }
            }
        }
        for j in 0..grid.nodes().len() {
            let x = grid.nodes()[j];
            if use_v && grid.v_atom(j) > 0.0 {
                points.push((x, EvalMode::RightLimit, grid.v_atom(j)));
            }
            if !use_v && grid.w_atom(j) > 0.0 {
                points.push((x, EvalMode::LeftLimit, grid.w_atom(j)));
            }
        }
        Self { points }
    }

    pub fn v_rule(diag: &PolynomialDiagonals) -> Self {
        Self::build(diag.grid(), true)
    }
    pub fn w_rule(diag: &PolynomialDiagonals) -> Self {
        Self::build(diag.grid(), false)
    }

    pub fn integrate(&self, vals: &[f64]) -> f64 {
        dot(&self.points.iter().map(|p| p.2).collect::<Vec<_>>(), vals)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Mode {
    pub lambda: f64,
    pub gamma: f64,
    pub alpha: f64,
    /// ν = a C_WV(α, ·) + b_tilde S_WV(α, ·) + c0
    pub a: f64,
    pub b_tilde: f64,
    pub c0: f64,
    /// V-mean of a C_WV + b_tilde S_WV before the correction c0
    pub mean_defect: f64,
}

impl Mode {
    /// Coefficient pair (a, b) in the report convention b = α·b_tilde.
    pub fn coeff_pair(&self) -> (f64, f64) {
        (self.a, self.alpha * self.b_tilde)
    }
}

#[derive(Debug, Clone)]
pub struct EigenBasis {
    pub report: SpectrumReport,
    grid: Arc<Grid>,
    diag: Arc<PolynomialDiagonals>,
    pub modes: Vec<Mode>,
    mode_coeffs: Vec<Vec<f64>>,
    /// ν_i on the master grid.
    pub functions: Vec<GridFunction>,
    /// Residual of each ν_i in the discrete operator on the master grid.
    pub residuals: Vec<EigenResidual>,
    quad: ExactRule,
    samples: Vec<Vec<f64>>,
}

impl EigenBasis {
    pub fn len(&self) -> usize {
        self.modes.len()
    }
    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }
    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }
    pub fn lambdas(&self) -> Vec<f64> {
        self.modes.iter().map(|m| m.lambda).collect()
    }
    pub fn gammas(&self) -> Vec<f64> {
        self.modes.iter().map(|m| m.gamma).collect()
    }

    /// ν_i at a point, with the requested one-sided limit.
    pub fn eval(&self, i: usize, x: f64, mode: EvalMode) -> f64 {
        let c = &self.mode_coeffs[i];
        let mut s = KahanSum::new();
        for (k, ck) in c.iter().enumerate() {
            if *ck != 0.0 {
                s.add(ck * self.diag.eval_f(k, x, mode));
            }
        }
        s.value() + self.modes[i].c0
    }

    /// ⟨ν_i, ν_j⟩_V by the exact rule.
    pub fn inner_exact(&self, i: usize, j: usize) -> f64 {
        let prod: Vec<f64> = self.samples[i].iter().zip(&self.samples[j]).map(|(a, b)| a * b).collect();
        self.quad.integrate(&prod)
    }

    /// ∫ ν_i dV by the exact rule.
    pub fn mean_exact(&self, i: usize) -> f64 {
        self.quad.integrate(&self.samples[i])
    }

    pub fn gram_exact(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| (0..self.len()).map(|j| self.inner_exact(i, j)).collect()).collect()
    }

    /// Σ c_i ν_i on the master grid.
    pub fn synthesize(&self, coeffs: &[f64]) -> GridFunction {
        let mut out = GridFunction::constant(&self.grid, 0.0);
        for (c, f) in coeffs.iter().zip(&self.functions) {
            out = out.axpy(*c, f).expect("same grid");
        }
        out.with_side(FnSide::Cadlag)
    }

    /// Exact ∫ D_W^-(Σ c_i ν_i) D_W^-(Σ d_i ν_i) dW, using D_W^- ν = α(-a S_VW + b_tilde C_VW).
    pub fn derivative_inner_exact(&self, c: &[f64], d: &[f64]) -> f64 {
        let order = self.mode_coeffs.first().map(|v| v.len() - 1).unwrap_or(0);
        let rule = ExactRule::w_rule(&self.diag);
        let gtab: Vec<Vec<f64>> =
            rule.points.iter().map(|&(x, mode, _)| (0..=order).map(|k| self.diag.eval_g(k, x, mode)).collect()).collect();
        let deriv = |coef: &[f64]| -> Vec<f64> {
            let mut total = vec![0.0; order + 1];
            for (ci, m) in coef.iter().zip(&self.modes) {
                if m.alpha == 0.0 || *ci == 0.0 {
                    continue;
                }
                let (cv, sv) = coefficient_vectors(m.alpha, order);
                for k in 0..=order {
                    total[k] += ci * m.alpha * (-m.a * sv[k] + m.b_tilde * cv[k]);
                }
            }
            gtab.iter().map(|g| dot(&total, g)).collect()
        };
        let (dc, dd) = (deriv(c), deriv(d));
        rule.integrate(&dc.iter().zip(&dd).map(|(a, b)| a * b).collect::<Vec<_>>())
    }
}
