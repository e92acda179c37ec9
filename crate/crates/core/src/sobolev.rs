//! Coefficients in an eigenbasis, fractional H^s norms and powers of (I - Δ).

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::gridop::{solve_gep, DiscreteOperator};
use crate::grid::{FnSide, Grid, GridFunction};
use crate::numerics::{divergence_diagnostic, DivergenceDiagnostic};
use crate::spectral::EigenBasis;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BasisSource {
    /// Eigenfunctions synthesized from the trigonometric series.
    Series,
    /// Generalized eigenvectors of the discrete stiffness/mass pencil.
    Pencil,
}

/// L²_V-orthonormal eigenfunctions sampled on a master grid together with
/// their eigenvalues. γ_i = 1 + λ_i is fixed at construction.
#[derive(Debug, Clone)]
pub struct ModalBasis {
    grid: Arc<Grid>,
    lambdas: Vec<f64>,
    gammas: Vec<f64>,
    functions: Vec<GridFunction>,
    source: BasisSource,
}

impl ModalBasis {
    pub fn from_eigenbasis(b: &EigenBasis) -> Self {
        Self {
            grid: b.grid().clone(),
            lambdas: b.lambdas(),
            gammas: b.gammas(),
            functions: b.functions.clone(),
            source: BasisSource::Series,
        }
    }

    /// First k eigenpairs of the pencil with H = 1, κ = 0.
    pub fn from_pencil(grid: &Arc<Grid>, k: usize) -> Result<Self> {
        let op = DiscreteOperator::laplacian(grid, 0.0)?;
        Self::from_operator(&op, k)
    }

    /// First k eigenpairs of an assembled pencil. The left limit at each
    /// W-atom is rebuilt from the discrete backward quotient so that the
    /// functions jump exactly where W does.
    pub fn from_operator(op: &DiscreteOperator, k: usize) -> Result<Self> {
        let pairs = solve_gep(op, k)?;
        let grid = op.grid().clone();
        let n = op.size();
        let functions = pairs
            .iter()
            .map(|p| {
                let u = &p.vector;
                let mut right: Vec<f64> = u.clone();
                right.push(u[0]);
                let mut left = right.clone();
                for j in 1..n {
                    let a = grid.w_atom(j);
                    if a > 0.0 {
                        let q = (u[j] - u[j - 1]) / grid.cell_w(j - 1);
                        left[j] = u[j] - a * q;
                    }
                }
                GridFunction::from_limits(grid.clone(), FnSide::Cadlag, left, right)
            })
            .collect();
        let lambdas: Vec<f64> = pairs.iter().map(|p| p.lambda.max(0.0)).collect();
        Ok(Self {
            grid,
            gammas: lambdas.iter().map(|l| 1.0 + l).collect(),
            lambdas,
            functions,
            source: BasisSource::Pencil,
        })
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }
    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }
    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }
    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }
    pub fn gammas(&self) -> &[f64] {
        &self.gammas
    }
    pub fn functions(&self) -> &[GridFunction] {
        &self.functions
    }
    pub fn function(&self, i: usize) -> &GridFunction {
        &self.functions[i]
    }
    pub fn source(&self) -> BasisSource {
        self.source
    }

    /// The inner product in which the basis is orthonormal: exact for
    /// interpolants (series) or the lumped V-mass (pencil).
    pub fn inner(&self, f: &GridFunction, g: &GridFunction) -> f64 {
        match self.source {
            BasisSource::Series => f.inner_v(g),
            BasisSource::Pencil => {
                (0..self.grid.n_cells()).map(|i| self.grid.cell_v(i) * f.right(i) * g.right(i)).sum()
            }
        }
    }

    /// Keep the first n modes.
    pub fn truncate(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            grid: self.grid.clone(),
            lambdas: self.lambdas[..n].to_vec(),
            gammas: self.gammas[..n].to_vec(),
            functions: self.functions[..n].to_vec(),
            source: self.source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralCoefficients {
    pub alpha: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub gammas: Vec<f64>,
    /// ‖f‖²_V - Σ α_i², when the coefficients came from a projection.
    pub parseval_defect: Option<f64>,
}

impl SpectralCoefficients {
    /// Coefficients with the eigenvalue metadata of `basis`.
    pub fn new(alpha: Vec<f64>, basis: &ModalBasis) -> Result<Self> {
        if alpha.len() > basis.len() {
            return Err(Error::InvalidArgument(format!("{} coefficients for {} modes", alpha.len(), basis.len())));
        }
        let n = alpha.len();
        Ok(Self { alpha, lambdas: basis.lambdas[..n].to_vec(), gammas: basis.gammas[..n].to_vec(), parseval_defect: None })
    }

    /// Truncation level N: the number of retained modes.
    pub fn truncation(&self) -> usize {
        self.alpha.len()
    }
}

pub fn project(f: &GridFunction, basis: &ModalBasis) -> Result<SpectralCoefficients> {
    if !f.grid().same_as(basis.grid()) {
        return Err(Error::GridMismatch);
    }
    let alpha: Vec<f64> = basis.functions.iter().map(|nu| basis.inner(f, nu)).collect();
    let defect = basis.inner(f, f) - alpha.iter().map(|a| a * a).sum::<f64>();
    Ok(SpectralCoefficients {
        alpha,
        lambdas: basis.lambdas.clone(),
        gammas: basis.gammas.clone(),
        parseval_defect: Some(defect),
    })
}

pub fn synthesize(c: &SpectralCoefficients, basis: &ModalBasis) -> GridFunction {
    let mut out = GridFunction::constant(&basis.grid, 0.0).with_side(FnSide::Cadlag);
    for (a, nu) in c.alpha.iter().zip(&basis.functions) {
        out = out.axpy(*a, nu).expect("basis functions share the grid");
    }
    out
}

/// Squared truncated norm Σ_{i<N} γ_i^s α_i²; for s < 0 the truncated dual norm.
pub fn sobolev_norm(c: &SpectralCoefficients, s: f64) -> f64 {
    c.alpha.iter().zip(&c.gammas).map(|(a, g)| g.powf(s) * a * a).sum()
}

pub fn apply_fractional(c: &SpectralCoefficients, s: f64) -> SpectralCoefficients {
    SpectralCoefficients {
        alpha: c.alpha.iter().zip(&c.gammas).map(|(a, g)| g.powf(s / 2.0) * a).collect(),
        lambdas: c.lambdas.clone(),
        gammas: c.gammas.clone(),
        parseval_defect: None,
    }
}

/// ‖D_W^- f‖²_W = Σ λ_i α_i².
pub fn weak_derivative_norm(c: &SpectralCoefficients) -> f64 {
    c.alpha.iter().zip(&c.lambdas).map(|(a, l)| l * a * a).sum()
}

/// Σ α_i β_i, bounded by the product of the H^s and H^{-s} norms.
pub fn dual_pairing(c: &SpectralCoefficients, d: &SpectralCoefficients) -> f64 {
    c.alpha.iter().zip(&d.alpha).map(|(a, b)| a * b).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormPartialSums {
    pub s: f64,
    pub cutoffs: Vec<usize>,
    pub partial_sums: Vec<f64>,
    pub diagnostic: DivergenceDiagnostic,
}

/// Σ_{i<N} γ_i^s α_i² at N = 8, 16, 32, ... up to the truncation level, with
/// the shared divergence detector applied to the sequence.
pub fn sobolev_partial_sums(c: &SpectralCoefficients, s: f64) -> NormPartialSums {
    let mut cutoffs = vec![];
    let mut n = 8;
    while n < c.truncation() {
        cutoffs.push(n);
        n *= 2;
    }
    cutoffs.push(c.truncation());
    let partial_sums: Vec<f64> = cutoffs
        .iter()
        .map(|&n| c.alpha[..n].iter().zip(&c.gammas).map(|(a, g)| g.powf(s) * a * a).sum())
        .collect();
    let x: Vec<f64> = cutoffs.iter().map(|&n| n as f64).collect();
    let diagnostic = divergence_diagnostic(&x, &partial_sums);
    NormPartialSums { s, cutoffs, partial_sums, diagnostic }
}
