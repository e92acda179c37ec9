//! Gaussian fields u = L^{-β} Ḃ_V from a modal basis, trace sums of negative
//! powers of the spectrum, and pathwise Galerkin solutions of
//! κ²u − D_V^+(H D_W^- u) = Ḃ_W.
//!
//! Field r under seed s draws its white-noise coefficients from the same
//! ChaCha8 splitting as the Brownian paths: seed s, stream r.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::gridop::{CyclicTridiag, DiscreteOperator};
use crate::numerics::{divergence_diagnostic, DivergenceDiagnostic};
use crate::sobolev::{BasisSource, ModalBasis};
use crate::stochastic::{normals, path_rng, SamplePath};

/// Refuse β ≤ d/4, where the field variance diverges.
pub fn check_beta(beta: f64, d: usize) -> Result<()> {
    let limit = d as f64 / 4.0;
    if !(beta > limit) {
        return Err(Error::BetaTooSmall { beta, limit });
    }
    Ok(())
}

/// ξ_0..ξ_{n-1}, iid N(0,1), stream 0 of `seed`.
pub fn white_noise_coeffs(n_modes: usize, seed: u64) -> Result<Vec<f64>> {
    if n_modes == 0 {
        return Err(Error::InvalidArgument("n_modes must be at least 1".into()));
    }
    Ok(normals(&mut path_rng(seed, 0), n_modes))
}

/// Ḃ(h) = Σ ξ_i ⟨h, ν_i⟩.
pub fn white_noise_pairing(xi: &[f64], basis: &ModalBasis, h: &GridFunction) -> f64 {
    xi.iter().zip(basis.functions()).map(|(x, nu)| x * basis.inner(h, nu)).sum()
}

/// min_{i≥1} γ_i / i², the constant of the quadratic growth law γ_i ≥ C i².
pub fn growth_constant(gammas: &[f64]) -> f64 {
    gammas.iter().enumerate().skip(1).map(|(i, g)| g / (i * i) as f64).fold(f64::INFINITY, f64::min)
}

/// Σ_{i>n} (C i²)^{-p} ≤ C^{-p} n^{1-2p} / (2p − 1); infinite for p ≤ 1/2.
pub fn power_tail_bound(c: f64, n: usize, p: f64) -> f64 {
    if p <= 0.5 || n == 0 {
        return f64::INFINITY;
    }
    c.powf(-p) * (n as f64).powf(1.0 - 2.0 * p) / (2.0 * p - 1.0)
}

/// Σ_{i≤n} γ_i^{-s} with the growth-law tail bound and a divergence verdict.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TracePartialSum {
    pub s: f64,
    pub n: usize,
    pub value: f64,
    pub growth_constant: f64,
    /// None when the growth law gives no finite bound (s ≤ 1/2).
    pub tail_bound: Option<f64>,
    pub cutoffs: Vec<usize>,
    pub partial_sums: Vec<f64>,
    pub diagnostic: DivergenceDiagnostic,
}

pub fn trace_partial_sum(gammas: &[f64], s: f64, n: usize) -> Result<TracePartialSum> {
    if n >= gammas.len() {
        return Err(Error::InvalidArgument(format!("index {n} beyond {} available modes", gammas.len())));
    }
    let mut cutoffs = vec![];
    let mut c = 8;
    while c < n {
        cutoffs.push(c);
        c *= 2;
    }
    cutoffs.push(n);
    let mut partial = Vec::with_capacity(cutoffs.len());
    let mut acc = 0.0;
    let mut next = 0;
    for (i, g) in gammas.iter().take(n + 1).enumerate() {
        acc += g.powf(-s);
        if next < cutoffs.len() && i == cutoffs[next] {
            partial.push(acc);
            next += 1;
        }
    }
    let gc = growth_constant(&gammas[..=n]);
    let tail = power_tail_bound(gc, n, s);
    let xs: Vec<f64> = cutoffs.iter().map(|&c| c as f64).collect();
    Ok(TracePartialSum {
        s,
        n,
        value: acc,
        growth_constant: gc,
        tail_bound: tail.is_finite().then_some(tail),
        diagnostic: divergence_diagnostic(&xs, &partial),
        cutoffs,
        partial_sums: partial,
    })
}

/// Fractional operator L^{-β} on a modal basis with eigenvalues γ_{i,L}.
#[derive(Debug, Clone)]
pub struct FieldModel {
    basis: ModalBasis,
    gamma_l: Vec<f64>,
    beta: f64,
}

impl FieldModel {
    /// Constant coefficients: γ_{i,L} = κ² + λ_i.
    pub fn constant(basis: &ModalBasis, kappa: f64, beta: f64) -> Result<Self> {
        check_beta(beta, 1)?;
        let gamma_l: Vec<f64> = basis.lambdas().iter().map(|l| kappa * kappa + l).collect();
        Self::new(basis.clone(), gamma_l, beta)
    }

    /// Variable H or κ: the pencil eigenvalues of the assembled operator
    /// already include κ², so γ_{i,L} = λ_i.
    pub fn from_operator(op: &DiscreteOperator, n_modes: usize, beta: f64) -> Result<Self> {
        check_beta(beta, 1)?;
        let basis = ModalBasis::from_operator(op, n_modes)?;
        let gamma_l = basis.lambdas().to_vec();
        Self::new(basis, gamma_l, beta)
    }

    fn new(basis: ModalBasis, gamma_l: Vec<f64>, beta: f64) -> Result<Self> {
        // a kernel mode (κ = 0) shows up as rounding-level noise around zero
        let floor = 1e-10 * gamma_l.iter().cloned().fold(1.0, f64::max);
        if let Some(g) = gamma_l.iter().find(|g| !(**g > floor)) {
            return Err(Error::CoefficientNotPositive(format!("operator eigenvalue {g}")));
        }
        Ok(Self { basis, gamma_l, beta })
    }

    pub fn basis(&self) -> &ModalBasis {
        &self.basis
    }
    pub fn gamma_l(&self) -> &[f64] {
        &self.gamma_l
    }
    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// γ_{i,L}^{-β}.
    pub fn amplitudes(&self) -> Vec<f64> {
        self.gamma_l.iter().map(|g| g.powf(-self.beta)).collect()
    }

    /// Σ γ^{-2β} ν_i(x_j)² at every node, the variance of the truncated field.
    pub fn nodal_variance(&self) -> Vec<f64> {
        let amp = self.amplitudes();
        let n = self.basis.grid().nodes().len();
        (0..n)
            .map(|j| amp.iter().zip(self.basis.functions()).map(|(a, f)| (a * f.value(j)).powi(2)).sum())
            .collect()
    }

    /// Bound on the truncated trace Σ_{i≥N} γ^{-2β} from the growth law, with
    /// N the number of modes kept.
    pub fn tail_bound(&self) -> f64 {
        let n = self.gamma_l.len();
        if n < 2 {
            return f64::INFINITY;
        }
        power_tail_bound(growth_constant(&self.gamma_l), n - 1, 2.0 * self.beta)
    }

    /// Smallest mode count whose tail bound is below `fraction` of the kept trace.
    pub fn truncation_for(&self, fraction: f64) -> Option<usize> {
        let c = growth_constant(&self.gamma_l);
        let mut kept = 0.0;
        for (i, g) in self.gamma_l.iter().enumerate() {
            kept += g.powf(-2.0 * self.beta);
            if i >= 1 && power_tail_bound(c, i, 2.0 * self.beta) < fraction * kept {
                return Some(i + 1);
            }
        }
        None
    }

    pub fn sample(&self, seed: u64, field_index: u64) -> FieldSample {
        let xi = normals(&mut path_rng(seed, field_index), self.gamma_l.len());
        let coefficients: Vec<f64> = xi.iter().zip(self.amplitudes()).map(|(x, a)| x * a).collect();
        let grid = self.basis.grid();
        let n = grid.nodes().len();
        let mut left = vec![0.0; n];
        let mut right = vec![0.0; n];
        for (c, f) in coefficients.iter().zip(self.basis.functions()) {
            for j in 0..n {
                left[j] += c * f.left(j);
                right[j] += c * f.right(j);
            }
        }
        let side = self.basis.function(0).side();
        FieldSample {
            coefficients,
            field: GridFunction::from_limits(grid.clone(), side, left, right),
            beta: self.beta,
            seed,
            field_index,
            basis_source: self.basis.source(),
            n_modes: self.gamma_l.len(),
            tail_bound: self.tail_bound(),
        }
    }

    /// Fields 0..n_fields in index order.
    pub fn sample_many(&self, n_fields: usize, seed: u64) -> Vec<FieldSample> {
        (0..n_fields as u64).into_par_iter().map(|r| self.sample(seed, r)).collect()
    }

    /// Apply `f` to fields 0..n_fields without keeping them.
    pub fn map_fields<T: Send>(&self, n_fields: usize, seed: u64, f: impl Fn(&FieldSample) -> T + Sync + Send) -> Vec<T> {
        (0..n_fields as u64).into_par_iter().map(|r| f(&self.sample(seed, r))).collect()
    }
}

#[derive(Debug, Clone)]
pub struct FieldSample {
    /// ξ_i γ_{i,L}^{-β}
    pub coefficients: Vec<f64>,
    pub field: GridFunction,
    pub beta: f64,
    pub seed: u64,
    pub field_index: u64,
    pub basis_source: BasisSource,
    pub n_modes: usize,
    pub tail_bound: f64,
}

/// Constant-coefficient sample, `sample_field` in one call.
pub fn sample_field(basis: &ModalBasis, beta: f64, kappa: f64, seed: u64) -> Result<FieldSample> {
    Ok(FieldModel::constant(basis, kappa, beta)?.sample(seed, 0))
}

/// Galerkin load vector of g ↦ −∫ B(s−) D_W^- g dW against the nodal hat
/// functions: B(x_{j+1}−) − B(x_j−), with B(x_0−) read periodically as B(1−).
pub fn pathwise_load(path: &SamplePath) -> Vec<f64> {
    let b = path.left_limits();
    let n = b.len() - 1;
    (0..n).map(|j| b[j + 1] - if j == 0 { b[n] } else { b[j] }).collect()
}

/// Solve K u = load for one path. κ must be bounded away from zero.
pub fn pathwise_elliptic_solve(op: &DiscreteOperator, path: &SamplePath) -> Result<GridFunction> {
    if !op.grid().same_as(path.grid()) {
        return Err(Error::GridMismatch);
    }
    if op.kappa_is_zero() || !(op.kappa_min() > 0.0) {
        return Err(Error::CoefficientNotPositive("kappa must be bounded away from zero".into()));
    }
    let solver = CyclicTridiag::factor(op.stiffness_diag(), op.stiffness_off())?;
    Ok(op.to_grid_function(&solver.solve(&pathwise_load(path))))
}

/// Solves for many paths sharing one factorization.
pub fn pathwise_solver(op: &DiscreteOperator) -> Result<impl Fn(&SamplePath) -> Vec<f64> + Sync + '_> {
    if op.kappa_is_zero() || !(op.kappa_min() > 0.0) {
        return Err(Error::CoefficientNotPositive("kappa must be bounded away from zero".into()));
    }
    let solver = CyclicTridiag::factor(op.stiffness_diag(), op.stiffness_off())?;
    Ok(move |p: &SamplePath| solver.solve(&pathwise_load(p)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{FnSide, Grid};
    use crate::measure::{MeasureFunction, Side};
    use crate::numerics::{mean_var, shape_moments, variance_se};
    use crate::stochastic::{map_paths, sample_path};
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn grid(atomic: bool, m: usize) -> Arc<Grid> {
        let w = if atomic {
            MeasureFunction::linear_with_atoms("a", Side::RightContinuous, 0.5, &[(0.5, 0.5)]).unwrap()
        } else {
            MeasureFunction::identity(Side::RightContinuous)
        };
        Grid::new(&w, &MeasureFunction::identity(Side::LeftContinuous), m).unwrap()
    }

    fn matern_reference(kappa: f64, beta: f64, kmax: usize) -> f64 {
        let k2 = kappa * kappa;
        k2.powf(-2.0 * beta)
            + 2.0 * (1..=kmax).map(|k| (k2 + 4.0 * PI * PI * (k * k) as f64).powf(-2.0 * beta)).sum::<f64>()
    }

    #[test]
    fn white_noise_is_standard_and_deterministic() {
        let a = white_noise_coeffs(100_000, 3).unwrap();
        assert_eq!(a, white_noise_coeffs(100_000, 3).unwrap());
        let (m, v) = mean_var(&a);
        assert!(m.abs() < 3.0 / (1e5f64).sqrt());
        assert!((v - 1.0).abs() < 3.0 * variance_se(&a));
        assert!(white_noise_coeffs(0, 1).is_err());
    }

    #[test]
    fn pairing_with_basis_function_picks_coefficient() {
        let g = grid(true, 256);
        let basis = ModalBasis::from_pencil(&g, 8).unwrap();
        let xi = white_noise_coeffs(8, 5).unwrap();
        let got = white_noise_pairing(&xi, &basis, basis.function(3));
        assert!((got - xi[3]).abs() < 1e-9, "{got} vs {}", xi[3]);
    }

    #[test]
    fn beta_gate_is_d_over_four() {
        assert!(matches!(check_beta(0.25, 1), Err(Error::BetaTooSmall { .. })));
        assert!(check_beta(0.2500001, 1).is_ok());
        assert!(matches!(check_beta(0.5, 2), Err(Error::BetaTooSmall { .. })));
        assert!(matches!(check_beta(0.75, 3), Err(Error::BetaTooSmall { .. })));
        let g = grid(false, 64);
        let b = ModalBasis::from_pencil(&g, 4).unwrap();
        assert!(matches!(sample_field(&b, 0.2, 1.0, 0), Err(Error::BetaTooSmall { .. })));
        assert!(matches!(sample_field(&b, 1.0, 0.0, 0), Err(Error::CoefficientNotPositive(_))));
    }

    #[test]
    fn classical_matern_variance() {
        let g = grid(false, 256);
        let model = FieldModel::constant(&ModalBasis::from_pencil(&g, 100).unwrap(), 1.0, 1.0).unwrap();
        let want = matern_reference(1.0, 1.0, 10_000);
        assert!((want - 1.0013).abs() < 5e-5);
        let exact = model.nodal_variance();
        for v in &exact {
            assert!((v - want).abs() < 1e-5, "{v}");
        }
        let nodes = [0usize, 40, 100, 170, 255];
        let vals = model.map_fields(4000, 17, |f| nodes.iter().map(|&j| f.field.value(j)).collect::<Vec<_>>());
        for k in 0..nodes.len() {
            let xs: Vec<f64> = vals.iter().map(|v| v[k]).collect();
            let (_, var) = mean_var(&xs);
            assert!((var - want).abs() < 3.0 * variance_se(&xs), "node {}: {var}", nodes[k]);
            let (sk, sks, ku, kus) = shape_moments(&xs);
            assert!(sk.abs() < 5.0 * sks && ku.abs() < 5.0 * kus);
        }
    }

    #[test]
    fn coefficients_replay_and_diagonal_covariance() {
        let g = grid(true, 128);
        let model = FieldModel::constant(&ModalBasis::from_pencil(&g, 6).unwrap(), 1.0, 0.75).unwrap();
        let a = model.sample(9, 4);
        let b = model.sample(9, 4);
        assert_eq!(a.coefficients, b.coefficients);
        let xi = normals(&mut path_rng(9, 4), 6);
        let amp = model.amplitudes();
        for i in 0..6 {
            assert_eq!(a.coefficients[i], xi[i] * amp[i]);
            let proj = model.basis().inner(&a.field, model.basis().function(i));
            assert!((proj - a.coefficients[i]).abs() < 1e-9);
        }
        let coeffs = model.map_fields(5000, 1, |f| f.coefficients.clone());
        for i in 0..3 {
            for j in 0..3 {
                let prods: Vec<f64> = coeffs.iter().map(|c| c[i] * c[j]).collect();
                let (m, v) = mean_var(&prods);
                let want = if i == j { amp[i] * amp[i] } else { 0.0 };
                assert!((m - want).abs() < 5.0 * (v / 5000.0).sqrt(), "{i}{j}");
            }
        }
    }

    #[test]
    fn large_beta_is_dominated_by_constant_mode() {
        let g = grid(false, 64);
        let model = FieldModel::constant(&ModalBasis::from_pencil(&g, 10).unwrap(), 1.0, 5.0).unwrap();
        let f = model.sample(2, 0);
        let c0 = f.coefficients[0];
        for j in 0..g.nodes().len() {
            assert!((f.field.value(j) - c0).abs() < 1e-6 * c0.abs().max(1.0));
        }
        // the next modes contribute 2(1+4π²)^{-10}; the pencil λ_0 carries ~1e-12 rounding, raised to the 10th power
        let v7 = model.nodal_variance()[7];
        assert!((v7 - 1.0).abs() < 1e-10, "{v7} {:?}", &model.gamma_l()[..3]);
    }

    #[test]
    fn atomic_fields_jump_only_at_the_atom() {
        let g = grid(true, 128);
        let atom = g.index_of(0.5).unwrap();
        let model = FieldModel::constant(&ModalBasis::from_pencil(&g, 30).unwrap(), 1.0, 1.0).unwrap();
        for r in 0..5 {
            let f = model.sample(3, r);
            let jumps = f.field.jump_nodes(1e-12);
            assert_eq!(jumps, vec![atom]);
        }
    }

    #[test]
    fn trace_sum_classical_limit() {
        let g = grid(false, 2048);
        let basis = ModalBasis::from_pencil(&g, 201).unwrap();
        let limit = 0.5 / (0.5f64).tanh();
        let t = trace_partial_sum(basis.gammas(), 1.0, 200).unwrap();
        let tail = t.tail_bound.unwrap();
        assert!(limit - t.value > 0.0 && limit - t.value <= tail, "{} {}", limit - t.value, tail);
        assert!(!t.diagnostic.divergent);
        let d = trace_partial_sum(basis.gammas(), 0.4, 200).unwrap();
        assert!(d.diagnostic.divergent && d.tail_bound.is_none());
        assert_eq!(trace_partial_sum(basis.gammas(), 0.0, 37).unwrap().value, 38.0);
        assert!(trace_partial_sum(basis.gammas(), 1.0, 201).is_err());
    }

    #[test]
    fn truncation_rule_meets_one_percent() {
        let g = grid(false, 512);
        let model = FieldModel::constant(&ModalBasis::from_pencil(&g, 60).unwrap(), 1.0, 0.5).unwrap();
        let n = model.truncation_for(0.01).unwrap();
        let amp2: f64 = model.gamma_l()[..n].iter().map(|g| g.powi(-1)).sum();
        let c = growth_constant(model.gamma_l());
        assert!(power_tail_bound(c, n - 1, 1.0) < 0.01 * amp2);
        assert!(n >= 2 && n <= 60);
    }

    #[test]
    fn zero_path_gives_zero_solution() {
        let g = grid(true, 64);
        let op = DiscreteOperator::laplacian(&g, 1.0).unwrap();
        let n = g.nodes().len();
        let zero = crate::stochastic::SamplePath::zero_for_tests(&g);
        let u = pathwise_elliptic_solve(&op, &zero).unwrap();
        assert!(u.sup_norm() == 0.0 && u.len() == n);
        let op0 = DiscreteOperator::laplacian(&g, 0.0).unwrap();
        assert!(pathwise_elliptic_solve(&op0, &sample_path(&g, 1, 0)).is_err());
    }

    /// Node covariance K^{-1} D C Dᵀ K^{-1} of the Galerkin solution, with C
    /// the covariance W(min(x_i, x_j)−) of the left limits B(x_i−).
    fn galerkin_reference_variance(op: &DiscreteOperator) -> Vec<f64> {
        let g = op.grid();
        let n = op.size();
        let wl: Vec<f64> = g.nodes().iter().map(|&x| g.w().eval(x, crate::measure::EvalMode::LeftLimit)).collect();
        // load_j = B^-_{j+1} − B^-_{j}, j = 0 reads B^-_n
        let idx = |j: usize| if j == 0 { n } else { j };
        let cb = |a: usize, b: usize| wl[a.min(b)];
        let solver = CyclicTridiag::factor(op.stiffness_diag(), op.stiffness_off()).unwrap();
        let mut s = vec![vec![0.0; n]; n];
        for a in 0..n {
            for b in 0..n {
                let (a1, a0, b1, b0) = (a + 1, idx(a), b + 1, idx(b));
                s[a][b] = cb(a1, b1) - cb(a1, b0) - cb(a0, b1) + cb(a0, b0);
            }
        }
        // X = K^{-1} S, then K^{-1} Xᵀ
        let cols: Vec<Vec<f64>> = (0..n).map(|b| solver.solve(&(0..n).map(|a| s[a][b]).collect::<Vec<_>>())).collect();
        let rows: Vec<Vec<f64>> = (0..n).map(|a| solver.solve(&(0..n).map(|b| cols[b][a]).collect::<Vec<_>>())).collect();
        (0..n).map(|j| rows[j][j]).collect()
    }

    #[test]
    fn pathwise_solution_moments() {
        let g = grid(false, 64);
        let op = DiscreteOperator::laplacian(&g, 1.0).unwrap();
        let solve = pathwise_solver(&op).unwrap();
        let sols = map_paths(&g, 10_000, 21, |p| solve(p));
        let reference = galerkin_reference_variance(&op);
        for &j in &[0usize, 13, 32, 47, 63] {
            let xs: Vec<f64> = sols.iter().map(|u| u[j]).collect();
            let (m, v) = mean_var(&xs);
            assert!(m.abs() < 3.0 * (v / xs.len() as f64).sqrt(), "mean at {j}: {m}");
            assert!((v - reference[j]).abs() < 5.0 * variance_se(&xs), "var at {j}: {v} vs {}", reference[j]);
        }
        let direct = pathwise_elliptic_solve(&op, &sample_path(&g, 21, 0)).unwrap();
        for j in 0..op.size() {
            assert!((direct.value(j) - sols[0][j]).abs() < 1e-14);
        }
    }

    #[test]
    fn variable_coefficients_use_pencil_eigenvalues() {
        let g = grid(true, 256);
        let h = GridFunction::from_fn(&g, FnSide::Caglad, |x| 1.0 + 0.5 * (2.0 * PI * x).sin());
        let k = GridFunction::from_fn(&g, FnSide::Cadlag, |x| 1.0 + x);
        let op = DiscreteOperator::assemble(&g, &h, &k).unwrap();
        let model = FieldModel::from_operator(&op, 10, 1.0).unwrap();
        // min-max comparability with the constant-coefficient operator
        let lo = ModalBasis::from_pencil(&g, 10).unwrap();
        for (i, gl) in model.gamma_l().iter().enumerate() {
            let l = lo.lambdas()[i];
            assert!(*gl >= 0.5 * l + 1.0 - 1e-9 && *gl <= 1.5 * l + 4.0 + 1e-9, "{i}");
        }
        let f = model.sample(1, 0);
        assert_eq!(f.n_modes, 10);
        assert_eq!(f.basis_source, BasisSource::Pencil);
    }
}
