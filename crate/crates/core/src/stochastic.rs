//! W-Brownian paths on the master grid, Wiener integrals of deterministic
//! integrands, the covariance operator K̂ and the Cameron–Martin identity.
//!
//! Stream splitting: path `p` under master seed `s` is drawn from
//! `ChaCha8Rng::seed_from_u64(s)` with stream `p`. Cell `i` (the cell ending at
//! node `i + 1`) consumes exactly two open-interval uniforms at word offset
//! `4i`, so every variate is keyed by (seed, path, cell). The first drives the
//! continuous increment and the second the atom at node `i + 1` (ignored when
//! there is none). Uniforms map to N(0,1) by the inverse normal CDF.

use std::sync::Arc;

use rand::distributions::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::calculus::{double_integral_t, TOrientation};
use crate::error::{Error, Result};
use crate::grid::{FnSide, Grid, GridFunction};
use crate::numerics::mean_var;
use crate::piecewise::PiecewisePoly;

/// One càdlàg path with both one-sided limits at every node.
#[derive(Debug, Clone)]
pub struct SamplePath {
    path: GridFunction,
    pub seed: u64,
    pub path_index: u64,
}

impl SamplePath {
    pub fn grid(&self) -> &Arc<Grid> {
        self.path.grid()
    }
    pub fn times(&self) -> &[f64] {
        self.path.grid().nodes()
    }
    /// B(x_j), right-continuous values.
    pub fn values(&self) -> &[f64] {
        self.path.rights()
    }
    /// B(x_j-).
    pub fn left_limits(&self) -> &[f64] {
        self.path.lefts()
    }
    pub fn as_grid_function(&self) -> &GridFunction {
        &self.path
    }
    /// Nodes carrying a W-atom, with the sampled jump there.
    pub fn jumps(&self) -> Vec<(usize, f64)> {
        let g = self.grid();
        (0..g.nodes().len())
            .filter(|&j| g.w_atom(j) > 0.0)
            .map(|j| (j, self.path.right(j) - self.path.left(j)))
            .collect()
    }
}

#[cfg(test)]
impl SamplePath {
    pub(crate) fn zero_for_tests(grid: &Arc<Grid>) -> Self {
        SamplePath { path: GridFunction::constant(grid, 0.0), seed: 0, path_index: 0 }
    }
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// Generator for one path under the documented splitting rule.
pub fn path_rng(master_seed: u64, path_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(path_index);
    rng
}

/// n iid standard normals from an already positioned generator.
pub(crate) fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let nd = std_normal();
    (0..n)
        .map(|_| {
            let u: f64 = rng.sample(Open01);
            nd.inverse_cdf(u)
        })
        .collect()
}

pub fn sample_path(grid: &Arc<Grid>, master_seed: u64, path_index: u64) -> SamplePath {
    let n = grid.n_cells();
    let mut rng = path_rng(master_seed, path_index);
    let z = normals(&mut rng, 2 * n);
    let mut left = vec![0.0; n + 1];
    let mut right = vec![0.0; n + 1];
    for i in 0..n {
        left[i + 1] = right[i] + grid.w_cont(i).sqrt() * z[2 * i];
        right[i + 1] = left[i + 1] + grid.w_atom(i + 1).sqrt() * z[2 * i + 1];
    }
    SamplePath {
        path: GridFunction::from_limits(grid.clone(), FnSide::Cadlag, left, right),
        seed: master_seed,
        path_index,
    }
}

pub fn sample_paths(grid: &Arc<Grid>, n_paths: usize, master_seed: u64) -> Result<Vec<SamplePath>> {
    if n_paths == 0 {
        return Err(Error::InvalidArgument("n_paths must be at least 1".into()));
    }
    Ok((0..n_paths as u64).into_par_iter().map(|p| sample_path(grid, master_seed, p)).collect())
}

/// Apply `f` to paths 0..n_paths without keeping them; results in path order.
pub fn map_paths<T: Send>(
    grid: &Arc<Grid>,
    n_paths: usize,
    master_seed: u64,
    f: impl Fn(&SamplePath) -> T + Sync + Send,
) -> Vec<T> {
    (0..n_paths as u64).into_par_iter().map(|p| f(&sample_path(grid, master_seed, p))).collect()
}

/// Σ_i f(x_i)·(B(x_{i+1}-) − B(x_i-)).
///
/// The increment over [x_i, x_{i+1}) contains the jump at x_i, which is
/// weighted by the value f(x_i). Its variance is Σ f(x_i)² times the W-mass of
/// [x_i, x_{i+1}), the discrete ∫f² dW.
pub fn stoch_integral(f: &GridFunction, path: &SamplePath) -> Result<f64> {
    if !f.grid().same_as(path.grid()) {
        return Err(Error::GridMismatch);
    }
    let b = path.left_limits();
    Ok((0..f.grid().n_cells()).map(|i| f.right(i) * (b[i + 1] - b[i])).sum())
}

/// Variance of `stoch_integral(f, ·)` under the sampling law.
pub fn isometry_variance(f: &GridFunction) -> f64 {
    let g = f.grid();
    (0..g.n_cells()).map(|i| f.right(i).powi(2) * (g.w_atom(i) + g.w_cont(i))).sum()
}

/// −∫ B(s−) D_W^- g dW = −Σ_k B(x_k−)(g(x_k) − g(x_{k−1})).
pub fn pathwise_noise(g: &GridFunction, path: &SamplePath) -> Result<f64> {
    if !g.grid().same_as(path.grid()) {
        return Err(Error::GridMismatch);
    }
    let tol = 1e-10 * g.sup_norm().max(1.0);
    let n = g.grid().n_cells();
    let g0 = g.right(0);
    if g0.abs() > tol {
        return Err(Error::BoundaryViolation(g0));
    }
    if g.value(n).abs() > tol {
        return Err(Error::BoundaryViolation(g.value(n)));
    }
    let b = path.left_limits();
    Ok(-(1..=n).map(|k| b[k] * (g.right(k) - g.right(k - 1))).sum::<f64>())
}

/// K̂f = W·∫f dV − T_WV f, càdlàg.
pub fn covariance_apply(f: &GridFunction) -> GridFunction {
    let grid = f.grid();
    let total = f.integral_v();
    let w = GridFunction::measure_w(grid);
    let t = double_integral_t(f, TOrientation::WV);
    let left = (0..f.len()).map(|j| w.left(j) * total - t.left(j)).collect();
    let right = (0..f.len()).map(|j| w.right(j) * total - t.right(j)).collect();
    GridFunction::from_limits(grid.clone(), FnSide::Cadlag, left, right)
}

/// K̂f(x_j) = ∫ W(x_j ∧ s) f(s) dV(s) at every node, by direct quadrature of
/// the kernel. Quadratic cost; used to cross-check `covariance_apply`.
pub fn covariance_apply_kernel(f: &GridFunction) -> Vec<f64> {
    let grid = f.grid();
    let w = GridFunction::measure_w(grid);
    let n = f.len();
    (0..n)
        .into_par_iter()
        .map(|j| {
            let wt = w.right(j);
            let left: Vec<f64> = (0..n).map(|k| if k <= j { w.left(k) } else { wt }).collect();
            let right: Vec<f64> = (0..n).map(|k| if k < j { w.right(k) } else { wt }).collect();
            let kern = GridFunction::from_limits(grid.clone(), FnSide::Cadlag, left, right);
            kern.inner_v(f)
        })
        .collect()
}

/// Both sides of ⟨K̂u, v⟩_V = ⟨D_W^-K̂u, D_W^-K̂v⟩_W.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CameronMartin {
    pub lhs: f64,
    pub rhs: f64,
}

impl CameronMartin {
    pub fn relative_gap(&self) -> f64 {
        (self.lhs - self.rhs).abs() / self.lhs.abs().max(self.rhs.abs()).max(f64::MIN_POSITIVE)
    }
}

/// Evaluated exactly for the linear interpolants of `u` and `v`: with
/// D_W^-K̂u = ∫u dV − J_V u both sides are integrals of piecewise polynomials.
pub fn cameron_martin_ip(u: &GridFunction, v: &GridFunction) -> Result<CameronMartin> {
    if !u.grid().same_as(v.grid()) {
        return Err(Error::GridMismatch);
    }
    let grid = u.grid();
    let pu = PiecewisePoly::from_grid_function(u);
    let pv = PiecewisePoly::from_grid_function(v);
    let one = PiecewisePoly::constant(grid, FnSide::Caglad, 1.0);
    let deriv = |p: &PiecewisePoly| one.lincomb(p.integral_v(), &p.j_v(), -1.0);
    let du = deriv(&pu)?;
    let dv = deriv(&pv)?;
    let w = PiecewisePoly::constant(grid, FnSide::Cadlag, 1.0).j_w();
    let ku = w.lincomb(pu.integral_v(), &pu.j_v().j_w(), -1.0)?;
    Ok(CameronMartin { lhs: ku.mul(&pv)?.integral_v(), rhs: du.mul(&dv)?.integral_w() })
}

/// Monte Carlo estimate of Cov(B(s), B(t)) at one pair of nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CovarianceEntry {
    pub s: f64,
    pub t: f64,
    pub estimate: f64,
    pub expected: f64,
    pub se: f64,
}

impl CovarianceEntry {
    pub fn z_score(&self) -> f64 {
        (self.estimate - self.expected) / self.se
    }
}

/// Empirical covariance of the path values at the given nodes against
/// W(s ∧ t). `values[p][k]` is path p at node `nodes[k]`.
pub fn covariance_table(grid: &Grid, nodes: &[usize], values: &[Vec<f64>]) -> Vec<CovarianceEntry> {
    let mut out = Vec::with_capacity(nodes.len() * nodes.len());
    for (a, &ja) in nodes.iter().enumerate() {
        for (b, &jb) in nodes.iter().enumerate() {
            let xs: Vec<f64> = values.iter().map(|p| p[a]).collect();
            let ys: Vec<f64> = values.iter().map(|p| p[b]).collect();
            let (mx, _) = mean_var(&xs);
            let (my, _) = mean_var(&ys);
            let prods: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).collect();
            let (cov, var) = mean_var(&prods);
            let n = prods.len() as f64;
            let (s, t) = (grid.nodes()[ja], grid.nodes()[jb]);
            out.push(CovarianceEntry {
                s,
                t,
                estimate: cov * n / (n - 1.0),
                expected: grid.w().eval(s.min(t), crate::measure::EvalMode::Value),
                se: (var / n).sqrt(),
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{EvalMode, MeasureFunction, Side};
    use crate::numerics::variance_se;
    use proptest::prelude::*;

    fn classical(m: usize) -> Arc<Grid> {
        let w = MeasureFunction::identity(Side::RightContinuous);
        let v = MeasureFunction::identity(Side::LeftContinuous);
        Grid::new(&w, &v, m).unwrap()
    }

    fn atomic(m: usize) -> Arc<Grid> {
        let w = MeasureFunction::linear_with_atoms("a", Side::RightContinuous, 0.5, &[(0.5, 0.5)]).unwrap();
        let v = MeasureFunction::identity(Side::LeftContinuous);
        Grid::new(&w, &v, m).unwrap()
    }

    fn sine(g: &Arc<Grid>) -> GridFunction {
        GridFunction::from_fn(g, FnSide::Cadlag, |x| 2f64.sqrt() * (2.0 * std::f64::consts::PI * x).sin())
    }

    #[test]
    fn paths_start_at_zero_and_are_reproducible() {
        let g = atomic(64);
        let a = sample_path(&g, 42, 0);
        let b = sample_path(&g, 42, 0);
        assert_eq!(a.values(), b.values());
        assert_eq!(a.left_limits(), b.left_limits());
        assert_eq!(a.values()[0], 0.0);
        let c = sample_path(&g, 42, 1);
        assert_ne!(a.values(), c.values());
        let j = g.index_of(0.5).unwrap();
        assert_eq!(a.jumps().len(), 1);
        assert_eq!(a.jumps()[0].0, j);
        for k in 0..g.nodes().len() {
            if k != j {
                assert_eq!(a.values()[k], a.left_limits()[k]);
            }
        }
    }

    #[test]
    fn parallel_sampling_matches_single_paths() {
        let g = classical(32);
        let all = sample_paths(&g, 8, 9).unwrap();
        for (p, path) in all.iter().enumerate() {
            assert_eq!(path.values(), sample_path(&g, 9, p as u64).values());
        }
        assert!(sample_paths(&g, 0, 9).is_err());
    }

    #[test]
    fn terminal_variance_is_total_mass() {
        let g = classical(50);
        let ends = map_paths(&g, 20000, 1, |p| p.values()[g.n_cells()]);
        let (_, var) = mean_var(&ends);
        assert!((var - 1.0).abs() < 3.0 * (2.0 / 20000f64).sqrt(), "{var}");
    }

    #[test]
    fn atom_jump_variance_is_atom_mass() {
        let g = atomic(50);
        let jumps = map_paths(&g, 20000, 2, |p| p.jumps()[0].1);
        let (_, var) = mean_var(&jumps);
        assert!((var - 0.5).abs() < 5.0 * variance_se(&jumps), "{var}");
    }

    #[test]
    fn constant_integrand_telescopes() {
        let g = atomic(40);
        let p = sample_path(&g, 3, 0);
        let one = GridFunction::constant(&g, 1.0);
        let zero = GridFunction::constant(&g, 0.0);
        assert!((stoch_integral(&one, &p).unwrap() - p.values()[g.n_cells()]).abs() < 1e-12);
        assert_eq!(stoch_integral(&zero, &p).unwrap(), 0.0);
    }

    #[test]
    fn sine_isometry_classical() {
        let g = classical(200);
        let f = sine(&g);
        let xs = map_paths(&g, 20000, 5, |p| stoch_integral(&f, p).unwrap());
        let (_, var) = mean_var(&xs);
        // ∫ 2 sin² dx = 1; the grid sum differs by rounding only
        assert!((isometry_variance(&f) - 1.0).abs() < 1e-12);
        assert!((var - 1.0).abs() < 5.0 * variance_se(&xs), "{var}");
    }

    #[test]
    fn pathwise_noise_is_summation_by_parts() {
        let g = atomic(128);
        let f = sine(&g);
        for p in 0..5 {
            let path = sample_path(&g, 11, p);
            let a = pathwise_noise(&f, &path).unwrap();
            let b = stoch_integral(&f, &path).unwrap();
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
        let zero = GridFunction::constant(&g, 0.0);
        assert_eq!(pathwise_noise(&zero, &sample_path(&g, 1, 0)).unwrap(), 0.0);
        let one = GridFunction::constant(&g, 1.0);
        assert!(matches!(pathwise_noise(&one, &sample_path(&g, 1, 0)), Err(Error::BoundaryViolation(_))));
    }

    #[test]
    fn pathwise_noise_variance() {
        let g = classical(100);
        let f = sine(&g);
        let xs = map_paths(&g, 10000, 6, |p| pathwise_noise(&f, p).unwrap());
        let (_, var) = mean_var(&xs);
        assert!((var - 1.0).abs() < 5.0 * variance_se(&xs), "{var}");
    }

    #[test]
    fn covariance_of_constant_classical() {
        let g = classical(64);
        let k = covariance_apply(&GridFunction::constant(&g, 1.0));
        for (j, &x) in g.nodes().iter().enumerate() {
            assert!((k.value(j) - (x - x * x / 2.0)).abs() < 1e-14);
        }
    }

    #[test]
    fn covariance_closed_form_matches_kernel() {
        for g in [classical(256), atomic(256)] {
            let fs = [
                GridFunction::constant(&g, 1.0),
                sine(&g),
                GridFunction::from_fn(&g, FnSide::Cadlag, |x| (3.0 * x).exp() - x * x),
            ];
            for f in &fs {
                let closed = covariance_apply(f);
                let kern = covariance_apply_kernel(f);
                assert_eq!(closed.value(0), 0.0);
                let scale = f.sup_norm();
                for j in 0..kern.len() {
                    assert!((closed.value(j) - kern[j]).abs() < 1e-4 * scale, "{j}");
                }
            }
        }
    }

    #[test]
    fn covariance_quadrature_converges_at_second_order() {
        let gap = |m| {
            let g = atomic(m);
            let f = GridFunction::from_fn(&g, FnSide::Cadlag, |x| (3.0 * x).exp());
            let kern = covariance_apply_kernel(&f);
            let c = covariance_apply(&f);
            (0..kern.len()).map(|j| (c.value(j) - kern[j]).abs()).fold(0.0, f64::max)
        };
        let r = gap(64) / gap(128);
        assert!(r > 3.5 && r < 4.5, "{r}");
    }

    #[test]
    fn cameron_martin_classical_constant() {
        let g = classical(16);
        let one = GridFunction::constant(&g, 1.0);
        let cm = cameron_martin_ip(&one, &one).unwrap();
        assert!((cm.lhs - 1.0 / 3.0).abs() < 1e-14 && (cm.rhs - 1.0 / 3.0).abs() < 1e-14);
        let zero = GridFunction::constant(&g, 0.0);
        let z = cameron_martin_ip(&zero, &one).unwrap();
        assert_eq!((z.lhs, z.rhs), (0.0, 0.0));
    }

    #[test]
    fn exact_layer_agrees_with_grid_operator() {
        let g = atomic(512);
        let f = GridFunction::from_fn(&g, FnSide::Cadlag, |x| (2.0 * x).cos());
        let grid_lhs = covariance_apply(&f).inner_v(&f);
        let cm = cameron_martin_ip(&f, &f).unwrap();
        assert!((grid_lhs - cm.lhs).abs() < 1e-5, "{grid_lhs} vs {}", cm.lhs);
        let pu = PiecewisePoly::from_grid_function(&f);
        let want = f.integral_v();
        assert!((pu.integral_v() - want).abs() < 1e-14);
        let k = covariance_apply(&f);
        assert_eq!(k.value(0), 0.0);
        assert!(k.left(g.index_of(0.5).unwrap()) != k.right(g.index_of(0.5).unwrap()));
        let w = g.w().eval(0.5, EvalMode::LeftLimit);
        assert!((w - 0.25).abs() < 1e-15);
    }

    #[test]
    fn covariance_table_flags_nothing_for_true_law() {
        let g = atomic(20);
        let nodes: Vec<usize> = (1..=4).map(|k| g.index_of(k as f64 * 0.25).unwrap()).collect();
        let vals = map_paths(&g, 5000, 8, |p| nodes.iter().map(|&j| p.values()[j]).collect::<Vec<_>>());
        for e in covariance_table(&g, &nodes, &vals) {
            assert!(e.z_score().abs() < 5.0, "{e:?}");
        }
    }

    #[test]
    fn increments_are_independent_and_martingale() {
        let g = atomic(20);
        let (a, b, c) = (g.index_of(0.3).unwrap(), g.index_of(0.5).unwrap(), g.index_of(0.9).unwrap());
        let pairs = map_paths(&g, 20000, 13, |p| {
            let v = p.values();
            (v[a], v[b] - v[a], v[c] - v[b])
        });
        let n = pairs.len() as f64;
        let corr_z = |x: &[f64], y: &[f64]| {
            let (mx, vx) = mean_var(x);
            let (my, vy) = mean_var(y);
            let r = x.iter().zip(y).map(|(u, w)| (u - mx) * (w - my)).sum::<f64>() / ((n - 1.0) * (vx * vy).sqrt());
            r * n.sqrt()
        };
        let bs: Vec<f64> = pairs.iter().map(|t| t.0).collect();
        let i1: Vec<f64> = pairs.iter().map(|t| t.1).collect();
        let i2: Vec<f64> = pairs.iter().map(|t| t.2).collect();
        assert!(corr_z(&i1, &i2).abs() < 5.0);
        // the slope of E[B(t) - B(s) | B(s)] is the correlation scaled by sd ratio
        assert!(corr_z(&bs, &i1).abs() < 5.0);
        assert!(corr_z(&bs, &i2).abs() < 5.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn cameron_martin_identity_random_pairs(
            a in prop::collection::vec(-2.0f64..2.0, 4),
            b in prop::collection::vec(-2.0f64..2.0, 4),
        ) {
            let g = atomic(64);
            let mk = |c: &Vec<f64>| GridFunction::from_fn(&g, FnSide::Cadlag, |x| {
                c[0] + c[1] * x + c[2] * (2.0 * std::f64::consts::PI * x).sin() + c[3] * x.powi(3)
            });
            let cm = cameron_martin_ip(&mk(&a), &mk(&b)).unwrap();
            let scale = cameron_martin_ip(&mk(&a), &mk(&a)).unwrap().lhs.abs()
                .max(cameron_martin_ip(&mk(&b), &mk(&b)).unwrap().lhs.abs());
            prop_assert!((cm.lhs - cm.rhs).abs() <= 1e-12 * scale.max(1e-300) + 1e-15);
        }

        #[test]
        fn stoch_integral_is_linear(c in -3.0f64..3.0, seed in 0u64..1000) {
            let g = atomic(32);
            let p = sample_path(&g, seed, 0);
            let f = sine(&g);
            let h = GridFunction::from_fn(&g, FnSide::Cadlag, |x| x * x);
            let lhs = stoch_integral(&f.axpy(c, &h).unwrap(), &p).unwrap();
            let rhs = stoch_integral(&f, &p).unwrap() + c * stoch_integral(&h, &p).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }
    }
}
