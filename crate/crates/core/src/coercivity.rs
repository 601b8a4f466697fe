//! Numerical estimation of the learnability constant of a hypothesis space.
//!
//! The least-squares problem identifies kernels only as well as the data
//! distinguishes members of the hypothesis space: the relevant constant is
//! the smallest value of `N * <f_phi, f_phi>` over candidate kernels `phi`
//! of unit norm in the distance-weighted L2 spaces of the empirical pairwise
//! measure. This module realizes that definition computably:
//!
//! 1. [`orthonormalize`] runs a per-pair modified Gram-Schmidt on the basis
//!    functions under the inner product `<f(.)., g(.).>` of the pair's
//!    measure (bin-midpoint quadrature), pruning directions the measure
//!    cannot see;
//! 2. the normal matrix assembled from a large position batch is transformed
//!    into that orthonormal basis and scaled by the agent count, making the
//!    constant the smallest eigenvalue;
//! 3. eigenvalues are also reported per velocity block (the sub-matrix of
//!    basis functions entering the equations of one agent type), which is
//!    exact because the normal matrix is block-diagonal across observer
//!    types.

use ndarray::{Array2, ArrayView2};
use ndarray_linalg::{Eigh, UPLO};

use crate::dynamics::{simulate_batch, SystemSpec, VelocityMode};
use crate::error::{Error, Result};
use crate::hypothesis::HypothesisSpace;
use crate::integrate::OdeOptions;
use crate::kernels::InitialSampler;
use crate::measure::{MeasureAccumulator, PairwiseMeasure};
use crate::regression::{DistancePolicy, NormalAccumulator, NormalSystem};
use crate::rng::Stream;

/// Basis functions whose norm under the pair measure falls below this factor
/// of the pair's largest raw norm are dropped as unobservable.
pub const PRUNE_REL_TOL: f64 = 1e-10;

/// Default quadrature resolution for the measure-weighted inner products.
pub const DEFAULT_QUADRATURE_BINS: usize = 1000;

/// A per-pair change of basis making the hypothesis functions orthonormal in
/// `L2` of the pair measure, weighted by distance.
#[derive(Debug, Clone)]
pub struct OrthonormalizedBasis {
    space: HypothesisSpace,
    /// One transform per ordered pair (lexicographic): `kept x n_pair` rows
    /// of coefficients over the raw basis.
    transforms: Vec<Array2<f64>>,
    gram_residual: f64,
    pruned: bool,
}

impl OrthonormalizedBasis {
    pub fn space(&self) -> &HypothesisSpace {
        &self.space
    }

    /// Transform rows of pair `(k, k')`.
    pub fn transform(&self, k: usize, kp: usize) -> &Array2<f64> {
        &self.transforms[k * self.space.k_count() + kp]
    }

    /// Retained functions per ordered pair, lexicographic.
    pub fn kept(&self) -> Vec<usize> {
        self.transforms.iter().map(|t| t.nrows()).collect()
    }

    pub fn total_kept(&self) -> usize {
        self.transforms.iter().map(|t| t.nrows()).sum()
    }

    /// Largest deviation of the transformed Gram matrices from the identity.
    pub fn gram_residual(&self) -> f64 {
        self.gram_residual
    }

    /// Whether any basis function was dropped.
    pub fn pruned(&self) -> bool {
        self.pruned
    }

    /// Block-diagonal transform over the stacked coefficient space:
    /// `total_kept x dim`.
    pub fn global_transform(&self) -> Array2<f64> {
        let n_pair = self.space.n_pair();
        let mut t = Array2::zeros((self.total_kept(), self.space.dim()));
        let mut row = 0;
        for (pair, block) in self.transforms.iter().enumerate() {
            let col0 = pair * n_pair;
            for q in 0..block.nrows() {
                for p in 0..n_pair {
                    t[[row + q, col0 + p]] = block[[q, p]];
                }
            }
            row += block.nrows();
        }
        t
    }
}

/// Orthonormalize each pair's basis under its measure-weighted inner product
/// by modified Gram-Schmidt on bin-midpoint quadrature vectors
/// `v_p[b] = psi_p(c_b) * c_b * sqrt(mass_b)`.
///
/// Structurally empty pairs (a single-agent type paired with itself)
/// contribute no functions. A nonempty pair whose masses are all zero is an
/// assembly error and rejected.
pub fn orthonormalize(
    space: &HypothesisSpace,
    mu: &PairwiseMeasure,
) -> Result<OrthonormalizedBasis> {
    if mu.k_count() != space.k_count() {
        return Err(Error::DimensionMismatch(format!(
            "measure covers {} types, hypothesis space {}",
            mu.k_count(),
            space.k_count()
        )));
    }
    let n_pair = space.n_pair();
    let n_bins = mu.n_bins();
    let deg = space.degree();

    let mut transforms = Vec::with_capacity(space.k_count() * space.k_count());
    let mut gram_residual = 0.0f64;
    let mut pruned = false;

    for k in 0..space.k_count() {
        for kp in 0..space.k_count() {
            let hist = mu.pair(k, kp);
            if hist.empty {
                transforms.push(Array2::zeros((0, n_pair)));
                pruned = true;
                continue;
            }
            if hist.masses.iter().all(|&m| m == 0.0) {
                return Err(Error::EmptyMeasure { k, kp });
            }

            // Quadrature vectors of the raw basis.
            let mut vs = Array2::zeros((n_pair, n_bins));
            for b in 0..n_bins {
                let mass = hist.masses[b];
                if mass == 0.0 {
                    continue;
                }
                let c = mu.midpoint(b);
                let Some((j, u)) = space.basis_at(c) else {
                    continue; // mass beyond the hypothesis interval is invisible
                };
                let s = c * mass.sqrt();
                vs[[j * (deg + 1), b]] = s;
                if deg == 1 {
                    vs[[j * (deg + 1) + 1, b]] = u * s;
                }
            }
            let vmax = (0..n_pair)
                .map(|p| vs.row(p).dot(&vs.row(p)).sqrt())
                .fold(0.0f64, f64::max);

            // Modified Gram-Schmidt with transform tracking.
            let mut q_vecs: Vec<ndarray::Array1<f64>> = Vec::new();
            let mut t_rows: Vec<ndarray::Array1<f64>> = Vec::new();
            for p in 0..n_pair {
                let mut v = vs.row(p).to_owned();
                let mut t = ndarray::Array1::zeros(n_pair);
                t[p] = 1.0;
                for (q, tq) in q_vecs.iter().zip(&t_rows) {
                    let c = v.dot(q);
                    v.scaled_add(-c, q);
                    t.scaled_add(-c, tq);
                }
                let nn = v.dot(&v).sqrt();
                if nn < PRUNE_REL_TOL * vmax {
                    pruned = true;
                    continue;
                }
                q_vecs.push(v / nn);
                t_rows.push(t / nn);
            }

            for (i, qi) in q_vecs.iter().enumerate() {
                for (j, qj) in q_vecs.iter().enumerate() {
                    let target = if i == j { 1.0 } else { 0.0 };
                    gram_residual = gram_residual.max((qi.dot(qj) - target).abs());
                }
            }

            let mut block = Array2::zeros((t_rows.len(), n_pair));
            for (q, t) in t_rows.iter().enumerate() {
                block.row_mut(q).assign(t);
            }
            transforms.push(block);
        }
    }

    Ok(OrthonormalizedBasis {
        space: space.clone(),
        transforms,
        gram_residual,
        pruned,
    })
}

/// Result of a coercivity estimate over the retained span.
#[derive(Debug, Clone)]
pub struct CoercivityEstimate {
    /// Smallest eigenvalue of the agent-count-scaled normal matrix in the
    /// orthonormalized basis: the estimated learnability constant.
    pub lambda_min: f64,
    /// Full spectrum, ascending.
    pub eigenvalues: Vec<f64>,
    /// Smallest eigenvalue of each observer type's diagonal block; `None`
    /// when the type retains no basis functions.
    pub block_lambda_min: Vec<Option<f64>>,
    /// Retained functions per ordered pair, lexicographic.
    pub kept: Vec<usize>,
    pub gram_residual: f64,
    /// True when the estimate covers a strict subspace because some basis
    /// functions were unobservable under the measure.
    pub pruned: bool,
}

/// Ascending eigenvalues of a symmetric matrix. Rebuilds the input in
/// standard layout first: sliced views can carry degenerate strides that the
/// LAPACK bindings reject.
fn sym_eigenvalues(m: ArrayView2<f64>) -> Result<Vec<f64>> {
    let n = m.nrows();
    if n <= 1 {
        return Ok(m.iter().copied().collect());
    }
    let owned = Array2::from_shape_fn((n, n), |(i, j)| m[[i, j]]);
    let (evals, _) = owned
        .eigh(UPLO::Lower)
        .map_err(|e| Error::Linalg(format!("eigendecomposition failed: {e}")))?;
    Ok(evals.to_vec())
}

/// Transform an assembled normal system into the orthonormal basis, scale by
/// the agent count, and extract the smallest eigenvalue overall and per
/// velocity block.
pub fn coercivity_from_normal(
    ns: &NormalSystem,
    basis: &OrthonormalizedBasis,
    n_agents: usize,
) -> Result<CoercivityEstimate> {
    if ns.space() != basis.space() {
        return Err(Error::DimensionMismatch(
            "normal system and orthonormal basis use different hypothesis spaces".into(),
        ));
    }
    if basis.total_kept() == 0 {
        return Err(Error::InvalidArgument(
            "entire basis was pruned; nothing to estimate".into(),
        ));
    }
    let tg = basis.global_transform();
    let scaled = ns.a() * n_agents as f64;
    let ao = tg.dot(&scaled).dot(&tg.t());

    let evals = sym_eigenvalues(ao.view())?;

    let k_count = basis.space().k_count();
    let kept = basis.kept();
    let mut block_lambda_min = Vec::with_capacity(k_count);
    let mut start = 0usize;
    for k in 0..k_count {
        let rows: usize = (0..k_count).map(|kp| kept[k * k_count + kp]).sum();
        if rows == 0 {
            block_lambda_min.push(None);
        } else {
            let block =
                sym_eigenvalues(ao.slice(ndarray::s![start..start + rows, start..start + rows]))?;
            block_lambda_min.push(Some(block[0]));
        }
        start += rows;
    }

    Ok(CoercivityEstimate {
        lambda_min: evals[0],
        eigenvalues: evals,
        block_lambda_min,
        kept,
        gram_residual: basis.gram_residual(),
        pruned: basis.pruned(),
    })
}

/// Coercivity estimate from a materialized batch of observed positions
/// (velocities are irrelevant: only the Gram side of the normal equations
/// enters). The measure is binned on the hypothesis interval; distances
/// beyond it are clamped into the last bin.
pub fn coercivity_from_batch(
    spec: &SystemSpec,
    space: &HypothesisSpace,
    batch: &crate::dynamics::TrajectoryBatch,
    n_bins: usize,
) -> Result<CoercivityEstimate> {
    let mut measure_acc = MeasureAccumulator::new(spec, n_bins, space.hi(), true)?;
    measure_acc.add_batch(spec, batch)?;
    let mut normal_acc = NormalAccumulator::new(space.clone(), DistancePolicy::ClampToInterval);
    let mut zeroed = batch.clone();
    zeroed.velocities = Some(vec![0.0; zeroed.states.len()]);
    normal_acc.add_batch(spec, &zeroed)?;
    let basis = orthonormalize(space, &measure_acc.finalize())?;
    coercivity_from_normal(&normal_acc.finalize()?, &basis, spec.n_agents())
}

/// A coercivity estimation run: how many trajectories to draw from the
/// system's initial distribution, observed on which grid, processed in waves
/// of bounded memory.
pub struct CoercivityRun<'a> {
    pub spec: &'a SystemSpec,
    pub space: &'a HypothesisSpace,
    pub samplers: &'a [InitialSampler],
    pub times: &'a [f64],
    pub m_count: usize,
    pub n_bins: usize,
    pub seed: u64,
    pub wave: usize,
    pub ode: &'a OdeOptions,
}

/// Estimate the coercivity constant by simulating `m_count` trajectories in
/// waves, accumulating the pair measure and the normal matrix, then
/// orthonormalizing and diagonalizing. Waves use a dedicated seed stream per
/// trajectory index, so the estimate is independent of the wave size.
pub fn estimate_coercivity(run: &CoercivityRun) -> Result<CoercivityEstimate> {
    if run.m_count == 0 || run.wave == 0 {
        return Err(Error::InvalidArgument(
            "need at least one trajectory and a positive wave size".into(),
        ));
    }
    let mut measure_acc =
        MeasureAccumulator::new(run.spec, run.n_bins, run.space.hi(), true)?;
    let mut normal_acc =
        NormalAccumulator::new(run.space.clone(), DistancePolicy::ClampToInterval);
    let mut first = 0usize;
    while first < run.m_count {
        let count = run.wave.min(run.m_count - first);
        let mut batch = simulate_batch(
            run.spec,
            run.samplers,
            count,
            first as u64,
            run.times,
            run.seed,
            Stream::MeasureBatch,
            VelocityMode::PositionsOnly,
            run.ode,
        )?;
        batch.velocities = Some(vec![0.0; batch.states.len()]);
        measure_acc.add_batch(run.spec, &batch)?;
        normal_acc.add_batch(run.spec, &batch)?;
        first += count;
    }
    let basis = orthonormalize(run.space, &measure_acc.finalize())?;
    coercivity_from_normal(&normal_acc.finalize()?, &basis, run.spec.n_agents())
}
