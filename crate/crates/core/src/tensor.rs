//! Product bases on [0,1)^d for d ≤ 3: multi-indices ordered by
//! α = Σ_k γ_{n_k,k}, trace sums Σ α^{-s}, and Gaussian fields on product grids.
//!
//! Product functions are never stored; values are formed from the axis
//! factors at synthesis time.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::{divergence_diagnostic, DivergenceDiagnostic};
use crate::sobolev::ModalBasis;
use crate::spde::check_beta;
use crate::stochastic::{normals, path_rng};

pub const MAX_DIM: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MultiIndex {
    pub index: Vec<usize>,
    pub alpha: f64,
}

#[derive(Debug, Clone)]
pub struct TensorBasis {
    axes: Vec<ModalBasis>,
    indices: Vec<MultiIndex>,
    cutoff: f64,
}

/// Every multi-index with Σγ ≤ cutoff, sorted by (α, lexicographic index).
///
/// Completeness needs each axis to reach past cutoff − Σ_{j≠k} min γ_j; an
/// axis whose largest computed γ does not exceed that is rejected.
pub fn build_tensor_basis(axes: &[ModalBasis], cutoff: f64) -> Result<TensorBasis> {
    let d = axes.len();
    if d == 0 || d > MAX_DIM {
        return Err(Error::InvalidArgument(format!("dimension {d} outside 1..={MAX_DIM}")));
    }
    if axes.iter().any(|a| a.is_empty()) {
        return Err(Error::InvalidArgument("empty axis basis".into()));
    }
    let mins: Vec<f64> = axes.iter().map(|a| a.gammas().iter().cloned().fold(f64::INFINITY, f64::min)).collect();
    let total_min: f64 = mins.iter().sum();
    for (k, a) in axes.iter().enumerate() {
        let needed = cutoff - (total_min - mins[k]);
        let max_gamma = a.gammas().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !(max_gamma > needed) {
            return Err(Error::AxisCoverageInsufficient { axis: k, max_gamma, needed });
        }
    }
    // suffix sums of the per-axis minima prune the search
    let mut rest = vec![0.0; d + 1];
    for k in (0..d).rev() {
        rest[k] = rest[k + 1] + mins[k];
    }
    let firsts: Vec<usize> = (0..axes[0].len()).collect();
    let mut indices: Vec<MultiIndex> = firsts
        .into_par_iter()
        .flat_map_iter(|n0| {
            let mut out = vec![];
            let mut idx = vec![n0];
            extend(axes, &rest, cutoff, axes[0].gammas()[n0], &mut idx, &mut out);
            out
        })
        .collect();
    indices.sort_by(|a, b| a.alpha.total_cmp(&b.alpha).then_with(|| a.index.cmp(&b.index)));
    Ok(TensorBasis { axes: axes.to_vec(), indices, cutoff })
}

fn extend(axes: &[ModalBasis], rest: &[f64], cutoff: f64, partial: f64, idx: &mut Vec<usize>, out: &mut Vec<MultiIndex>) {
    let k = idx.len();
    if partial + rest[k] > cutoff {
        return;
    }
    if k == axes.len() {
        out.push(MultiIndex { index: idx.clone(), alpha: partial });
        return;
    }
    for (n, g) in axes[k].gammas().iter().enumerate() {
        idx.push(n);
        extend(axes, rest, cutoff, partial + g, idx, out);
        idx.pop();
    }
}

impl TensorBasis {
    pub fn dim(&self) -> usize {
        self.axes.len()
    }
    pub fn axes(&self) -> &[ModalBasis] {
        &self.axes
    }
    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }
    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }
    pub fn len(&self) -> usize {
        self.indices.len()
    }
    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
    pub fn alphas(&self) -> Vec<f64> {
        self.indices.iter().map(|m| m.alpha).collect()
    }

    /// ⟨f_a, f_b⟩ on the product quadrature; it factorizes over the axes.
    pub fn product_inner(&self, a: usize, b: usize) -> f64 {
        let (ia, ib) = (&self.indices[a].index, &self.indices[b].index);
        self.axes
            .iter()
            .enumerate()
            .map(|(k, ax)| ax.inner(ax.function(ia[k]), ax.function(ib[k])))
            .product()
    }

    /// Node counts per axis of the product grid.
    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.grid().nodes().len()).collect()
    }
}

/// Σ α^{-s} over the basis with partial sums at geometrically spaced α-cutoffs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TensorTrace {
    pub s: f64,
    pub value: f64,
    pub count: usize,
    pub cutoffs: Vec<f64>,
    pub partial_sums: Vec<f64>,
    pub diagnostic: DivergenceDiagnostic,
}

pub fn tensor_trace_sum(basis: &TensorBasis, s: f64) -> TensorTrace {
    let alphas = basis.alphas();
    let top = basis.cutoff;
    let lo = alphas.first().copied().unwrap_or(top);
    let mut cutoffs = vec![top];
    while cutoffs.len() < 12 && cutoffs[cutoffs.len() - 1] / 2.0 > 4.0 * lo {
        cutoffs.push(cutoffs[cutoffs.len() - 1] / 2.0);
    }
    cutoffs.reverse();
    let mut partial = Vec::with_capacity(cutoffs.len());
    let mut acc = 0.0;
    let mut it = alphas.iter().peekable();
    for &c in &cutoffs {
        while let Some(&&a) = it.peek() {
            if a > c {
                break;
            }
            acc += a.powf(-s);
            it.next();
        }
        partial.push(acc);
    }
    TensorTrace {
        s,
        value: acc,
        count: alphas.len(),
        diagnostic: divergence_diagnostic(&cutoffs, &partial),
        cutoffs,
        partial_sums: partial,
    }
}

/// A field on the product grid, flattened with the last axis fastest.
#[derive(Debug, Clone, Serialize)]
pub struct TensorField {
    pub shape: Vec<usize>,
    pub axis_nodes: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    pub coefficients: Vec<f64>,
    pub beta: f64,
    pub seed: u64,
    pub field_index: u64,
}

impl TensorField {
    pub fn at(&self, idx: &[usize]) -> f64 {
        self.values[flat(&self.shape, idx)]
    }
}

fn flat(shape: &[usize], idx: &[usize]) -> usize {
    idx.iter().zip(shape).fold(0, |acc, (i, n)| acc * n + i)
}

fn unflat(shape: &[usize], mut p: usize) -> Vec<usize> {
    let mut idx = vec![0; shape.len()];
    for k in (0..shape.len()).rev() {
        idx[k] = p % shape[k];
        p /= shape[k];
    }
    idx
}

/// Σ c_n Π_k ν_{n_k}(x_k). Axis `jump_axis` (if any) uses the jump
/// right − left of its factor in place of the value.
pub fn synthesize_dd(basis: &TensorBasis, coeffs: &[f64], jump_axis: Option<usize>) -> Vec<f64> {
    let shape = basis.shape();
    let total: usize = shape.iter().product();
    let factor = |k: usize, n: usize, j: usize| {
        let f = basis.axes[k].function(n);
        if jump_axis == Some(k) {
            f.right(j) - f.left(j)
        } else {
            f.value(j)
        }
    };
    (0..total)
        .into_par_iter()
        .map(|p| {
            let idx = unflat(&shape, p);
            basis
                .indices
                .iter()
                .zip(coeffs)
                .map(|(m, c)| c * (0..shape.len()).map(|k| factor(k, m.index[k], idx[k])).product::<f64>())
                .sum()
        })
        .collect()
}

/// u = Σ ξ_n α_n^{-β} ⊗ν_{n_k} with ξ from stream `field_index` of `seed`.
pub fn sample_field_dd(basis: &TensorBasis, beta: f64, seed: u64, field_index: u64) -> Result<TensorField> {
    check_beta(beta, basis.dim())?;
    let xi = normals(&mut path_rng(seed, field_index), basis.len());
    let coefficients: Vec<f64> = xi.iter().zip(&basis.indices).map(|(x, m)| x * m.alpha.powf(-beta)).collect();
    Ok(TensorField {
        shape: basis.shape(),
        axis_nodes: basis.axes.iter().map(|a| a.grid().nodes().to_vec()).collect(),
        values: synthesize_dd(basis, &coefficients, None),
        coefficients,
        beta,
        seed,
        field_index,
    })
}

/// Σ α_n^{-2β} Π_k ν_{n_k}(x_k)², the variance of the truncated field at each node.
pub fn nodal_variance_dd(basis: &TensorBasis, beta: f64) -> Vec<f64> {
    let shape = basis.shape();
    let total: usize = shape.iter().product();
    (0..total)
        .into_par_iter()
        .map(|p| {
            let idx = unflat(&shape, p);
            basis
                .indices
                .iter()
                .map(|m| {
                    let v: f64 = (0..shape.len()).map(|k| basis.axes[k].function(m.index[k]).value(idx[k])).product();
                    m.alpha.powf(-2.0 * beta) * v * v
                })
                .sum()
        })
        .collect()
}
