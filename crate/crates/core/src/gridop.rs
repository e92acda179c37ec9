//! Galerkin discretization of u -> κ²u - D_V^+(H D_W^- u) on the periodic
//! master grid: a cyclic tridiagonal stiffness matrix and a diagonal V-mass.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{FnSide, Grid, GridFunction};
use crate::measure::MeasureFunction;

/// LU factors of a symmetric cyclic tridiagonal matrix (Sherman–Morrison on
/// top of the Thomas algorithm).
#[derive(Debug, Clone)]
pub struct CyclicTridiag {
    n: usize,
    cp: Vec<f64>,
    den: Vec<f64>,
    off: Vec<f64>,
    z: Vec<f64>,
    gamma: f64,
    corner: f64,
    vz: f64,
}

fn thomas(cp: &[f64], den: &[f64], off: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = rhs.len();
    let mut y = vec![0.0; n];
    y[0] = rhs[0] / den[0];
    for i in 1..n {
        y[i] = (rhs[i] - off[i - 1] * y[i - 1]) / den[i];
    }
    for i in (0..n - 1).rev() {
        y[i] -= cp[i] * y[i + 1];
    }
    y
}

fn thomas_factor(diag: &[f64], off: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = diag.len();
    let mut cp = vec![0.0; n];
    let mut den = vec![0.0; n];
    den[0] = diag[0];
    for i in 0..n {
        if i > 0 {
            den[i] = diag[i] - off[i - 1] * cp[i - 1];
        }
        if den[i].abs() < 1e-300 || !den[i].is_finite() {
            return Err(Error::SingularSystem(format!("zero pivot at row {i}")));
        }
        if i + 1 < n {
            cp[i] = off[i] / den[i];
        }
    }
    Ok((cp, den))
}

impl CyclicTridiag {
    /// `off[i]` couples i and i+1 (mod n); needs n >= 3.
    pub fn factor(diag: &[f64], off: &[f64]) -> Result<Self> {
        let n = diag.len();
        if n < 3 {
            return Err(Error::InvalidArgument("cyclic system needs at least 3 unknowns".into()));
        }
        let corner = off[n - 1];
        let gamma = -diag[0];
        let mut d = diag.to_vec();
        d[0] -= gamma;
        d[n - 1] -= corner * corner / gamma;
        let (cp, den) = thomas_factor(&d, &off[..n - 1])?;
        let mut u = vec![0.0; n];
        u[0] = gamma;
        u[n - 1] = corner;
        let z = thomas(&cp, &den, &off[..n - 1], &u);
        let vz = 1.0 + z[0] + corner * z[n - 1] / gamma;
        if vz.abs() < 1e-300 {
            return Err(Error::SingularSystem("Sherman–Morrison denominator vanishes".into()));
        }
        Ok(Self { n, cp, den, off: off[..n - 1].to_vec(), z, gamma, corner, vz })
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let y = thomas(&self.cp, &self.den, &self.off, rhs);
        let f = (y[0] + self.corner * y[self.n - 1] / self.gamma) / self.vz;
        y.iter().zip(&self.z).map(|(a, b)| a - f * b).collect()
    }
}

#[derive(Debug, Clone)]
pub struct DiscreteOperator {
    grid: Arc<Grid>,
    diag: Vec<f64>,
    off: Vec<f64>,
    mass: Vec<f64>,
    /// W-mass of each cell (x_i, x_{i+1}]
    cell_w: Vec<f64>,
    kappa_zero: bool,
    h_min: f64,
    kappa_min: f64,
}

impl DiscreteOperator {
    /// Stiffness Bᵀ diag(∫_cell H dW) B + diag(∫ κ² dV) with B the periodic
    /// backward quotient, mass diag(ΔV).
    pub fn assemble(grid: &Arc<Grid>, h: &GridFunction, kappa: &GridFunction) -> Result<Self> {
        let n = grid.n_cells();
        if n < 3 {
            return Err(Error::InvalidArgument("grid needs at least 3 cells".into()));
        }
        let h_min = h.lefts().iter().chain(h.rights()).cloned().fold(f64::INFINITY, f64::min);
        if !(h_min > 0.0) {
            return Err(Error::CoefficientNotPositive(format!("inf H = {h_min}")));
        }
        let kappa_min = kappa.lefts().iter().chain(kappa.rights()).cloned().fold(f64::INFINITY, f64::min);
        if !(kappa_min >= 0.0) {
            return Err(Error::CoefficientNotPositive(format!("inf kappa = {kappa_min}")));
        }
        let kappa_zero = kappa.sup_norm() == 0.0;
        let k2 = kappa.mul(kappa)?;
        let mut diag = vec![0.0; n];
        let mut off = vec![0.0; n];
        let mut mass = vec![0.0; n];
        let mut cell_w = vec![0.0; n];
        for i in 0..n {
            let dw = grid.cell_w(i);
            let dv = grid.cell_v(i);
            if dw <= 0.0 || dv <= 0.0 {
                return Err(Error::ZeroIncrement { cell: i });
            }
            cell_w[i] = dw;
            let c = h.integral_w_idx(i, i + 1) / (dw * dw);
            let j = (i + 1) % n;
            diag[i] += c;
            diag[j] += c;
            off[i] -= c;
            diag[i] += k2.integral_v_idx(i, i + 1);
            mass[i] = dv;
        }
        Ok(Self { grid: grid.clone(), diag, off, mass, cell_w, kappa_zero, h_min, kappa_min })
    }

    /// H = 1 and constant κ.
    pub fn laplacian(grid: &Arc<Grid>, kappa: f64) -> Result<Self> {
        Self::assemble(grid, &GridFunction::constant(grid, 1.0), &GridFunction::constant(grid, kappa))
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }
    pub fn size(&self) -> usize {
        self.diag.len()
    }
    pub fn mass(&self) -> &[f64] {
        &self.mass
    }
    pub fn stiffness_diag(&self) -> &[f64] {
        &self.diag
    }
    /// off[i] = K[i][i+1 mod n].
    pub fn stiffness_off(&self) -> &[f64] {
        &self.off
    }
    pub fn kappa_is_zero(&self) -> bool {
        self.kappa_zero
    }
    pub fn h_min(&self) -> f64 {
        self.h_min
    }
    pub fn kappa_min(&self) -> f64 {
        self.kappa_min
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let n = self.size();
        (0..n)
            .map(|i| {
                let prev = (i + n - 1) % n;
                self.diag[i] * u[i] + self.off[i] * u[(i + 1) % n] + self.off[prev] * u[prev]
            })
            .collect()
    }

    /// Periodic nodal values (node n is node 0) from a grid function; the
    /// V-mass of [x_i, x_{i+1}) reads the right limit.
    pub fn nodal(&self, f: &GridFunction) -> Vec<f64> {
        (0..self.size()).map(|i| f.right(i)).collect()
    }

    /// Continuous nodal grid function from periodic values.
    pub fn to_grid_function(&self, u: &[f64]) -> GridFunction {
        let mut vals = u.to_vec();
        vals.push(u[0]);
        GridFunction::from_values(&self.grid, FnSide::Cadlag, vals)
    }

    fn reduced(&self, shift: f64) -> (Vec<f64>, Vec<f64>) {
        let n = self.size();
        let s: Vec<f64> = self.mass.iter().map(|m| m.sqrt()).collect();
        let d = (0..n).map(|i| self.diag[i] / self.mass[i] + shift).collect();
        let o = (0..n).map(|i| self.off[i] / (s[i] * s[(i + 1) % n])).collect();
        (d, o)
    }

    pub fn dot_m(&self, u: &[f64], v: &[f64]) -> f64 {
        u.iter().zip(v).zip(&self.mass).map(|((a, b), m)| a * b * m).sum()
    }

    /// Discrete ‖u‖²_V + ‖D_W^- u‖²_W with unit H.
    pub fn energy_norm_sq(&self, u: &[f64]) -> f64 {
        let n = self.size();
        let grad: f64 = (0..n).map(|i| (u[(i + 1) % n] - u[i]).powi(2) / self.cell_w[i]).sum();
        self.dot_m(u, u) + grad
    }

    /// ‖K u - λ M u‖ / ‖u‖_M measured two ways: in the dual energy norm
    /// (r ↦ sqrt(rᵀ(K + M)^{-1} r)) and in the M^{-1} norm.
    pub fn eigen_residual(&self, lambda: f64, u: &[f64]) -> Result<EigenResidual> {
        let ku = self.apply(u);
        let r: Vec<f64> = ku.iter().zip(u).zip(&self.mass).map(|((k, x), m)| k - lambda * m * x).collect();
        let nu = self.dot_m(u, u).sqrt();
        let d: Vec<f64> = (0..self.size()).map(|i| self.diag[i] + self.mass[i]).collect();
        let solver = CyclicTridiag::factor(&d, &self.off)?;
        let y = solver.solve(&r);
        let dual = r.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>().max(0.0).sqrt() / nu;
        let mass_norm = r.iter().zip(&self.mass).map(|(a, m)| a * a / m).sum::<f64>().sqrt() / nu;
        Ok(EigenResidual { dual, mass_norm })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EigenResidual {
    pub dual: f64,
    pub mass_norm: f64,
}

#[derive(Debug, Clone)]
pub struct DiscreteEigenpair {
    pub lambda: f64,
    /// M-orthonormal periodic nodal vector
    pub vector: Vec<f64>,
}

fn apply_reduced(d: &[f64], o: &[f64], shift: f64, x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|i| {
            let p = (i + n - 1) % n;
            (d[i] - shift) * x[i] + o[i] * x[(i + 1) % n] + o[p] * x[p]
        })
        .collect()
}

fn orthonormalize(cols: &mut [Vec<f64>]) {
    for j in 0..cols.len() {
        for _ in 0..2 {
            for i in 0..j {
                let (a, b) = cols.split_at_mut(j);
                let c: f64 = a[i].iter().zip(&b[0]).map(|(x, y)| x * y).sum();
                for (y, x) in b[0].iter_mut().zip(&a[i]) {
                    *y -= c * x;
                }
            }
            let nrm = cols[j].iter().map(|x| x * x).sum::<f64>().sqrt();
            cols[j].iter_mut().for_each(|x| *x /= nrm);
        }
    }
}

/// Smallest k eigenpairs of K u = λ M u, ascending, M-orthonormal, with the
/// sign convention D_W^- u(0) > 0, or u(0) > 0 when that quotient vanishes.
/// Degenerate pairs are rotated so that the first member has zero quotient at 0.
pub fn solve_gep(op: &DiscreteOperator, k: usize) -> Result<Vec<DiscreteEigenpair>> {
    let n = op.size();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("need 1 <= k <= {n}")));
    }
    let total_v: f64 = op.mass.iter().sum();
    let total_w: f64 = op.cell_w.iter().sum();
    let shift = 1.0 / (total_v * total_w);
    let (vals, vecs) = if n <= 400 {
        let (d, o) = op.reduced(shift);
        dense_eig(&d, &o, shift, k)
    } else {
        let (d, o) = op.reduced(0.0);
        bisection_eig(&d, &o, k)?
    };
    let s: Vec<f64> = op.mass.iter().map(|m| m.sqrt()).collect();
    let mut pairs: Vec<DiscreteEigenpair> = vals
        .into_iter()
        .zip(vecs)
        .map(|(lambda, y)| DiscreteEigenpair { lambda, vector: y.iter().zip(&s).map(|(a, b)| a / b).collect() })
        .collect();
    canonicalize(op, &mut pairs);
    Ok(pairs)
}

fn dense_eig(d: &[f64], o: &[f64], shift: f64, k: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = d.len();
    let mut a = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        a[(i, i)] = d[i] - shift;
        let j = (i + 1) % n;
        a[(i, j)] += o[i];
        a[(j, i)] += o[i];
    }
    let eig = SymmetricEigen::new(a);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&x, &y| eig.eigenvalues[x].total_cmp(&eig.eigenvalues[y]));
    let vals = idx[..k].iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = idx[..k].iter().map(|&i| eig.eigenvectors.column(i).iter().cloned().collect()).collect();
    (vals, vecs)
}

/// Number of eigenvalues of the cyclic matrix (diag d - σ, off o) below σ,
/// by Sylvester inertia of an LDLᵀ whose only fill is the last column.
fn count_below(d: &[f64], o: &[f64], sigma: f64, tiny: f64) -> usize {
    let n = d.len();
    let fix = |p: f64| if p.abs() < tiny { -tiny } else { p };
    let mut neg = 0;
    let mut p = fix(d[0] - sigma);
    let mut c = o[n - 1];
    let mut last = d[n - 1] - sigma;
    if p < 0.0 {
        neg += 1;
    }
    for i in 1..n - 1 {
        let l = o[i - 1] / p;
        let base = if i == n - 2 { o[n - 2] } else { 0.0 };
        last -= c * c / p;
        let pi = fix(d[i] - sigma - l * o[i - 1]);
        c = base - l * c;
        p = pi;
        if p < 0.0 {
            neg += 1;
        }
    }
    last -= c * c / p;
    if fix(last) < 0.0 {
        neg += 1;
    }
    neg
}

/// Tridiagonal solve with partial pivoting (the gtsv scheme).
fn tridiag_pivoted(d: &[f64], o: &[f64], rhs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = d.len();
    let mut dl: Vec<f64> = o[..n - 1].to_vec();
    let mut dd = d.to_vec();
    let mut du: Vec<f64> = o[..n - 1].to_vec();
    let mut du2 = vec![0.0; n];
    let mut b: Vec<Vec<f64>> = rhs.to_vec();
    for i in 0..n - 1 {
        if dd[i].abs() >= dl[i].abs() {
            let piv = if dd[i] == 0.0 { f64::MIN_POSITIVE } else { dd[i] };
            let f = dl[i] / piv;
            dd[i + 1] -= f * du[i];
            for col in b.iter_mut() {
                col[i + 1] -= f * col[i];
            }
            dl[i] = 0.0;
        } else {
            let f = dd[i] / dl[i];
            dd[i] = dl[i];
            let tmp = dd[i + 1];
            dd[i + 1] = du[i] - f * tmp;
            if i + 1 < n - 1 {
                du2[i] = du[i + 1];
                du[i + 1] = -f * du2[i];
            }
            du[i] = tmp;
            for col in b.iter_mut() {
                col.swap(i, i + 1);
                col[i + 1] -= f * col[i];
            }
        }
    }
    for col in b.iter_mut() {
        let piv = |x: f64| if x == 0.0 { f64::MIN_POSITIVE } else { x };
        col[n - 1] /= piv(dd[n - 1]);
        if n >= 2 {
            col[n - 2] = (col[n - 2] - du[n - 2] * col[n - 1]) / piv(dd[n - 2]);
        }
        for i in (0..n.saturating_sub(2)).rev() {
            col[i] = (col[i] - du[i] * col[i + 1] - du2[i] * col[i + 2]) / piv(dd[i]);
        }
    }
    b
}

/// Solve (A - σ) X = B for the cyclic matrix A by a rank-2 Woodbury update
/// of the open chain.
fn shifted_cyclic_solve(d: &[f64], o: &[f64], sigma: f64, rhs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = d.len();
    let ds: Vec<f64> = d.iter().map(|x| x - sigma).collect();
    let c = o[n - 1];
    let mut all = rhs.to_vec();
    let mut e0 = vec![0.0; n];
    e0[0] = 1.0;
    let mut en = vec![0.0; n];
    en[n - 1] = 1.0;
    all.push(e0);
    all.push(en);
    let sol = tridiag_pivoted(&ds, o, &all);
    let k = rhs.len();
    let (z0, zn) = (&sol[k], &sol[k + 1]);
    // A = T + c (e0 e_nᵀ + e_n e0ᵀ); capacitance I + Vᵀ T⁻¹ U with U = [e0, e_n], V = c [e_n, e0]
    let m00 = 1.0 + c * z0[n - 1];
    let m01 = c * zn[n - 1];
    let m10 = c * z0[0];
    let m11 = 1.0 + c * zn[0];
    let det = m00 * m11 - m01 * m10;
    sol[..k]
        .iter()
        .map(|y| {
            let (r0, r1) = (c * y[n - 1], c * y[0]);
            let t0 = (m11 * r0 - m01 * r1) / det;
            let t1 = (m00 * r1 - m10 * r0) / det;
            y.iter().zip(z0).zip(zn).map(|((yi, a), b)| yi - t0 * a - t1 * b).collect()
        })
        .collect()
}

/// Smallest k eigenpairs of the reduced cyclic matrix: bisection on the
/// inertia count, then inverse iteration on clusters with Rayleigh–Ritz.
fn bisection_eig(d: &[f64], o: &[f64], k: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = d.len();
    let norm = (0..n).map(|i| d[i].abs() + o[i].abs() + o[(i + n - 1) % n].abs()).fold(0.0, f64::max);
    let tiny = f64::EPSILON * norm * 1e-3;
    let (glo, ghi) = (-norm - 1.0, norm + 1.0);
    let mut vals = Vec::with_capacity(k);
    for j in 0..k {
        let (mut lo, mut hi) = (vals.last().copied().unwrap_or(glo).min(ghi) - tiny, ghi);
        if count_below(d, o, lo, tiny) > j {
            lo = glo;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi || hi - lo <= 2.0 * f64::EPSILON * mid.abs().max(norm * 1e-9) {
                break;
            }
            if count_below(d, o, mid, tiny) > j {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        vals.push(0.5 * (lo + hi));
    }
    let mut vecs: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut thetas: Vec<f64> = Vec::with_capacity(k);
    let mut j = 0;
    while j < k {
        let mut e = j + 1;
        while e < n.min(k + 4) && {
            let next = if e < k { vals[e] } else { f64::INFINITY };
            next - vals[e - 1] <= 1e-6 * vals[e - 1].abs().max(1.0)
        } {
            e += 1;
        }
        let e = e.min(k);
        let size = e - j;
        let mean = vals[j..e].iter().sum::<f64>() / size as f64;
        let sigma = mean + 1e-11 * mean.abs().max(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed + j as u64);
        let mut q: Vec<Vec<f64>> = (0..size).map(|_| (0..n).map(|_| rng.gen::<f64>() - 0.5).collect()).collect();
        orthonormalize(&mut q);
        let mut res = f64::INFINITY;
        let mut theta = vec![0.0; size];
        for _ in 0..20 {
            let mut z = shifted_cyclic_solve(d, o, sigma, &q);
            if z.iter().flatten().any(|x| !x.is_finite()) {
                return Err(Error::SingularSystem("inverse iteration".into()));
            }
            // keep clear of the pairs already found
            for col in z.iter_mut() {
                for _ in 0..2 {
                    for v in &vecs {
                        let c: f64 = col.iter().zip(v).map(|(a, b)| a * b).sum();
                        col.iter_mut().zip(v).for_each(|(a, b)| *a -= c * b);
                    }
                }
            }
            orthonormalize(&mut z);
            let az: Vec<Vec<f64>> = z.iter().map(|c| apply_reduced(d, o, 0.0, c)).collect();
            let mut h = DMatrix::<f64>::zeros(size, size);
            for a in 0..size {
                for b in 0..size {
                    h[(a, b)] = z[a].iter().zip(&az[b]).map(|(x, y)| x * y).sum();
                }
            }
            let h = 0.5 * (&h + h.transpose());
            let eig = SymmetricEigen::new(h);
            let mut idx: Vec<usize> = (0..size).collect();
            idx.sort_by(|&x, &y| eig.eigenvalues[x].total_cmp(&eig.eigenvalues[y]));
            let mut newq = vec![vec![0.0; n]; size];
            let mut aq = vec![vec![0.0; n]; size];
            for (c, &ci) in idx.iter().enumerate() {
                theta[c] = eig.eigenvalues[ci];
                for r in 0..size {
                    let y = eig.eigenvectors[(r, ci)];
                    for t in 0..n {
                        newq[c][t] += y * z[r][t];
                        aq[c][t] += y * az[r][t];
                    }
                }
            }
            q = newq;
            res = (0..size)
                .map(|c| aq[c].iter().zip(&q[c]).map(|(a, x)| (a - theta[c] * x).powi(2)).sum::<f64>().sqrt())
                .fold(0.0, f64::max);
            if res <= 1e3 * f64::EPSILON * norm {
                break;
            }
        }
        if res > 1e6 * f64::EPSILON * norm {
            return Err(Error::ConvergenceFailure { iterations: 20, residual: res });
        }
        thetas.extend_from_slice(&theta);
        vecs.extend(q);
        j = e;
    }
    Ok((thetas, vecs))
}

fn canonicalize(op: &DiscreteOperator, pairs: &mut [DiscreteEigenpair]) {
    let n = op.size();
    let quot = |u: &[f64]| (u[0] - u[n - 1]) / op.cell_w[n - 1];
    let mut i = 0;
    while i < pairs.len() {
        let mut j = i + 1;
        while j < pairs.len() && (pairs[j].lambda - pairs[i].lambda).abs() <= 1e-8 * pairs[i].lambda.abs().max(1.0) {
            j += 1;
        }
        if j - i == 2 {
            let (b1, b2) = (quot(&pairs[i].vector), quot(&pairs[i + 1].vector));
            let r = b1.hypot(b2);
            if r > 0.0 {
                let (c, s) = (b2 / r, b1 / r);
                let u1: Vec<f64> = pairs[i].vector.iter().zip(&pairs[i + 1].vector).map(|(x, y)| c * x - s * y).collect();
                let u2: Vec<f64> = pairs[i].vector.iter().zip(&pairs[i + 1].vector).map(|(x, y)| s * x + c * y).collect();
                pairs[i].vector = u1;
                pairs[i + 1].vector = u2;
            }
        }
        i = j;
    }
    for p in pairs.iter_mut() {
        let b = quot(&p.vector);
        let scale = p.vector.iter().map(|x| x.abs()).fold(0.0, f64::max) / op.cell_w[n - 1];
        let flip = if b.abs() > 1e-9 * scale { b < 0.0 } else { p.vector[0] < 0.0 };
        if flip {
            p.vector.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Richardson {
    pub extrapolated: f64,
    pub error_bar: f64,
    pub order: f64,
}

/// Extrapolate a sequence computed at m, 2m, 4m.
pub fn richardson(v: [f64; 3]) -> Richardson {
    let d1 = v[1] - v[0];
    let d2 = v[2] - v[1];
    if d2 == 0.0 || d1 == 0.0 {
        return Richardson { extrapolated: v[2], error_bar: d2.abs(), order: f64::NAN };
    }
    let p = (d1 / d2).abs().log2().clamp(0.5, 4.0);
    let corr = d2 / (2f64.powf(p) - 1.0);
    Richardson { extrapolated: v[2] + corr, error_bar: corr.abs(), order: p }
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleEigenvalue {
    pub index: usize,
    pub resolutions: [usize; 3],
    pub values: [f64; 3],
    pub richardson: Richardson,
}

/// Smallest k eigenvalues at resolutions m, 2m, 4m with Richardson extrapolation.
pub fn oracle_spectrum(
    w: &MeasureFunction,
    v: &MeasureFunction,
    h: &dyn Fn(f64) -> f64,
    kappa: &dyn Fn(f64) -> f64,
    m: usize,
    k: usize,
) -> Result<Vec<OracleEigenvalue>> {
    let res = [m, 2 * m, 4 * m];
    let mut all = vec![];
    for &mm in &res {
        let grid = Grid::new(w, v, mm)?;
        let hf = GridFunction::from_fn(&grid, FnSide::Caglad, h);
        let kf = GridFunction::from_fn(&grid, FnSide::Cadlag, kappa);
        let op = DiscreteOperator::assemble(&grid, &hf, &kf)?;
        all.push(solve_gep(&op, k)?.into_iter().map(|p| p.lambda).collect::<Vec<_>>());
    }
    Ok((0..k)
        .map(|i| {
            let values = [all[0][i], all[1][i], all[2][i]];
            OracleEigenvalue { index: i, resolutions: res, values, richardson: richardson(values) }
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct EllipticSolution {
    pub u: GridFunction,
    pub energy_norm: f64,
    pub rhs_norm: f64,
    /// C = 1/β of the energy estimate ‖u‖_{W,V} <= C ‖f‖_V
    pub bound_constant: f64,
    pub bound_holds: bool,
}

/// Solve K u = M f. With κ ≡ 0 the V-mean of f must vanish and the zero-mean
/// solution is returned.
pub fn elliptic_solve(op: &DiscreteOperator, f: &GridFunction) -> Result<EllipticSolution> {
    let n = op.size();
    let fv = op.nodal(f);
    let rhs: Vec<f64> = fv.iter().zip(&op.mass).map(|(a, m)| a * m).collect();
    let g = op.grid();
    let (w1, v1) = (g.w().total_mass(), g.v().total_mass());
    let u = if op.kappa_zero {
        let mean: f64 = rhs.iter().sum();
        let scale: f64 = rhs.iter().map(|x| x.abs()).sum();
        if mean.abs() > 1e-10 * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::SolvabilityViolation(mean / v1));
        }
        // pin u_0 = 0; the remaining system is an ordinary tridiagonal one
        let d = &op.diag[1..];
        let o = &op.off[1..n - 1];
        let (cp, den) = thomas_factor(d, o)?;
        let inner = thomas(&cp, &den, o, &rhs[1..]);
        let mut u = vec![0.0];
        u.extend(inner);
        let mu = op.dot_m(&u, &vec![1.0; n]) / v1;
        u.iter_mut().for_each(|x| *x -= mu);
        u
    } else {
        CyclicTridiag::factor(&op.diag, &op.off)?.solve(&rhs)
    };
    let energy_norm = op.energy_norm_sq(&u).sqrt();
    let rhs_norm = op.dot_m(&fv, &fv).sqrt();
    let beta = if op.kappa_zero {
        0.5 * op.h_min * (1.0 / (w1 * v1)).min(1.0)
    } else {
        op.h_min.min(op.kappa_min * op.kappa_min)
    };
    let bound_constant = 1.0 / beta;
    let bound_holds = energy_norm <= bound_constant * rhs_norm * (1.0 + 1e-12);
    Ok(EllipticSolution { u: op.to_grid_function(&u), energy_norm, rhs_norm, bound_constant, bound_holds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Interval;
    use crate::measure::Side;
    use std::f64::consts::PI;

    fn classical() -> (MeasureFunction, MeasureFunction) {
        (MeasureFunction::identity(Side::RightContinuous), MeasureFunction::identity(Side::LeftContinuous))
    }
    fn atomic() -> (MeasureFunction, MeasureFunction) {
        let w = MeasureFunction::linear_with_atoms("a", Side::RightContinuous, 0.5, &[(0.5, 0.5)]).unwrap();
        (w, MeasureFunction::identity(Side::LeftContinuous))
    }

    #[test]
    fn cyclic_solver_matches_dense() {
        let n = 9;
        let d: Vec<f64> = (0..n).map(|i| 4.0 + i as f64 * 0.1).collect();
        let o: Vec<f64> = (0..n).map(|i| -1.0 - 0.05 * i as f64).collect();
        let s = CyclicTridiag::factor(&d, &o).unwrap();
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let x = s.solve(&b);
        let ax = apply_reduced(&d, &o, 0.0, &x);
        for i in 0..n {
            assert!((ax[i] - b[i]).abs() < 1e-13);
        }
    }

    #[test]
    fn shifted_solver_handles_indefinite_systems() {
        let n = 50;
        let d: Vec<f64> = (0..n).map(|i| 2.0 + 0.01 * i as f64).collect();
        let o = vec![-1.0; n];
        let sigma = 1.2345;
        let b: Vec<f64> = (0..n).map(|i| ((i * 7) as f64).cos()).collect();
        let x = &shifted_cyclic_solve(&d, &o, sigma, &[b.clone()])[0];
        let ax = apply_reduced(&d, &o, sigma, x);
        for i in 0..n {
            assert!((ax[i] - b[i]).abs() < 1e-10, "{i}");
        }
        let below = count_below(&d, &o, sigma, 1e-14);
        let (vals, _) = dense_eig(&d, &o, 0.0, n);
        assert_eq!(below, vals.iter().filter(|&&v| v < sigma).count());
    }

    #[test]
    fn classical_first_eigenvalue() {
        let (w, v) = classical();
        let g = Grid::new(&w, &v, 1024).unwrap();
        let op = DiscreteOperator::laplacian(&g, 0.0).unwrap();
        let e = solve_gep(&op, 5).unwrap();
        assert!(e[0].lambda.abs() < 1e-8);
        let l = 4.0 * PI * PI;
        for (i, want) in [(1, l), (2, l), (3, 4.0 * l), (4, 4.0 * l)] {
            assert!((e[i].lambda - want).abs() / want < 1e-3, "{i}: {}", e[i].lambda);
        }
    }

    #[test]
    fn kernel_is_constants() {
        let (w, v) = atomic();
        let g = Grid::new(&w, &v, 64).unwrap();
        let op = DiscreteOperator::laplacian(&g, 0.0).unwrap();
        let k1 = op.apply(&vec![1.0; op.size()]);
        assert!(k1.iter().all(|&x| x.abs() < 1e-9 * op.stiffness_diag()[0]));
    }

    #[test]
    fn atom_cell_weight_is_shared_integral() {
        let (w, v) = atomic();
        let g = Grid::new(&w, &v, 64).unwrap();
        let op = DiscreteOperator::laplacian(&g, 0.0).unwrap();
        let j = g.index_of(0.5).unwrap();
        let one = GridFunction::constant(&g, 1.0);
        let s = crate::grid::stieltjes_integral(&w, &one, Interval::LeftOpenRightClosed(g.nodes()[j - 1], 0.5)).unwrap();
        assert_eq!(op.cell_w[j - 1], s);
        assert!((s - (0.5 / 64.0 + 0.5)).abs() < 1e-15);
    }

    #[test]
    fn kappa_shift_is_exact_in_eigenvalues() {
        let (w, v) = atomic();
        let g = Grid::new(&w, &v, 512).unwrap();
        let e0 = solve_gep(&DiscreteOperator::laplacian(&g, 0.0).unwrap(), 6).unwrap();
        let e1 = solve_gep(&DiscreteOperator::laplacian(&g, 1.0).unwrap(), 6).unwrap();
        for (a, b) in e0.iter().zip(&e1) {
            assert!((b.lambda - a.lambda - 1.0).abs() < 1e-8 * b.lambda.max(1.0));
        }
    }

    #[test]
    fn bisection_and_dense_agree() {
        let (w, v) = atomic();
        let g = Grid::new(&w, &v, 600).unwrap();
        let op = DiscreteOperator::laplacian(&g, 0.0).unwrap();
        let sub = solve_gep(&op, 6).unwrap();
        let (d, o) = op.reduced(1.0);
        let (dense, _) = dense_eig(&d, &o, 1.0, 6);
        for (a, b) in sub.iter().zip(&dense) {
            assert!((a.lambda - b).abs() < 1e-8 * b.max(1.0), "{} vs {}", a.lambda, b);
        }
    }

    #[test]
    fn eigenvectors_are_m_orthonormal_and_canonical() {
        let (w, v) = classical();
        let g = Grid::new(&w, &v, 800).unwrap();
        let op = DiscreteOperator::laplacian(&g, 0.0).unwrap();
        let e = solve_gep(&op, 5).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let ip = op.dot_m(&e[i].vector, &e[j].vector);
                assert!((ip - if i == j { 1.0 } else { 0.0 }).abs() < 1e-9);
            }
        }
        // first member of the pair is cosine-like, positive at 0
        assert!(e[1].vector[0] > 1.4);
        let n = op.size();
        assert!((e[1].vector[0] - e[1].vector[n - 1]).abs() < 1e-10);
        assert!(e[2].vector[0].abs() < 1e-2 && e[2].vector[1] > e[2].vector[n - 1]);
    }

    #[test]
    fn oracle_sequence_is_richardson_consistent() {
        let (w, v) = atomic();
        let o = oracle_spectrum(&w, &v, &|_| 1.0, &|_| 0.0, 256, 4).unwrap();
        for e in &o[1..] {
            assert!(e.richardson.order > 0.5 && e.richardson.order < 3.0, "{e:?}");
            assert!(e.richardson.error_bar < 1e-2 * e.richardson.extrapolated);
        }
    }

    #[test]
    fn symmetric_in_mass_inner_product() {
        let (w, v) = atomic();
        let g = Grid::new(&w, &v, 128).unwrap();
        let h = GridFunction::from_fn(&g, FnSide::Caglad, |x| 1.5 + (6.0 * x).sin());
        let k = GridFunction::from_fn(&g, FnSide::Cadlag, |x| 0.5 + x);
        let op = DiscreteOperator::assemble(&g, &h, &k).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let u: Vec<f64> = (0..op.size()).map(|_| rng.gen::<f64>() - 0.5).collect();
            let z: Vec<f64> = (0..op.size()).map(|_| rng.gen::<f64>() - 0.5).collect();
            let a: f64 = op.apply(&u).iter().zip(&z).map(|(x, y)| x * y).sum();
            let b: f64 = op.apply(&z).iter().zip(&u).map(|(x, y)| x * y).sum();
            assert!((a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0));
        }
    }

    #[test]
    fn min_max_bracketing() {
        let (w, v) = atomic();
        let g = Grid::new(&w, &v, 128).unwrap();
        let h = GridFunction::from_fn(&g, FnSide::Caglad, |x| 1.5 + 0.5 * (6.0 * x).sin());
        let mid = solve_gep(&DiscreteOperator::assemble(&g, &h, &GridFunction::constant(&g, 0.0)).unwrap(), 6).unwrap();
        let lo = solve_gep(&DiscreteOperator::laplacian(&g, 0.0).unwrap(), 6).unwrap();
        let hi = solve_gep(&DiscreteOperator::assemble(&g, &GridFunction::constant(&g, 2.0), &GridFunction::constant(&g, 0.0)).unwrap(), 6).unwrap();
        for i in 1..6 {
            assert!(lo[i].lambda <= mid[i].lambda * (1.0 + 1e-12) && mid[i].lambda <= hi[i].lambda * (1.0 + 1e-12));
        }
    }

    #[test]
    fn nonpositive_h_rejected() {
        let (w, v) = classical();
        let g = Grid::new(&w, &v, 16).unwrap();
        let h = GridFunction::from_fn(&g, FnSide::Caglad, |x| x - 0.5);
        assert!(matches!(
            DiscreteOperator::assemble(&g, &h, &GridFunction::constant(&g, 0.0)),
            Err(Error::CoefficientNotPositive(_))
        ));
    }

    #[test]
    fn elliptic_examples() {
        let (w, v) = classical();
        let g = Grid::new(&w, &v, 256).unwrap();
        let op0 = DiscreteOperator::laplacian(&g, 0.0).unwrap();
        assert!(matches!(elliptic_solve(&op0, &GridFunction::constant(&g, 1.0)), Err(Error::SolvabilityViolation(_))));
        let op1 = DiscreteOperator::laplacian(&g, 1.0).unwrap();
        let e = solve_gep(&op1, 2).unwrap();
        let nu = op1.to_grid_function(&e[1].vector);
        let sol = elliptic_solve(&op1, &nu).unwrap();
        let want = nu.scale(1.0 / e[1].lambda);
        assert!(sol.u.max_abs_diff(&want) < 1e-10);
        assert!(sol.bound_holds);
        // zero-mean data with κ = 0
        let f = GridFunction::from_fn(&g, FnSide::Cadlag, |x| (2.0 * PI * x).cos());
        let s0 = elliptic_solve(&op0, &f).unwrap();
        assert!(s0.bound_holds);
        assert!(op0.dot_m(&op0.nodal(&s0.u), &vec![1.0; op0.size()]).abs() < 1e-12);
    }

    #[test]
    fn energy_bound_atomic_random() {
        let (w, v) = atomic();
        let g = Grid::new(&w, &v, 256).unwrap();
        let op = DiscreteOperator::laplacian(&g, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let c: Vec<f64> = (0..6).map(|_| rng.gen::<f64>() - 0.5).collect();
            let f = GridFunction::from_fn(&g, FnSide::Cadlag, |x| {
                c.iter().enumerate().map(|(k, a)| a * (2.0 * PI * (k + 1) as f64 * x).sin()).sum()
            });
            let s = elliptic_solve(&op, &f).unwrap();
            assert!(s.bound_holds, "{} > {} * {}", s.energy_norm, s.bound_constant, s.rhs_norm);
        }
    }
}
