//! Least-squares estimation of interaction kernels from trajectory data.
//!
//! For each trajectory, every observed snapshot contributes one weighted
//! block row per agent to a (conceptual) regression matrix whose columns are
//! the hypothesis-space basis functions. The row of agent `i` at time `t_l`
//! holds, in the columns of pair `(k_i, k')`,
//!
//! `sqrt(1/N_{k_i}) * (1/N_{k'}) * sum_{i' of type k'} psi_p(r_{ii'}) * (x_{i'} - x_i)`
//!
//! and the target stacks `sqrt(1/N_{k_i}) * dx_i/dt`. Because each agent pair
//! touches at most one subinterval, rows are extremely sparse; this module
//! accumulates the normal equations `A = (1/LN) Psi^T Psi`, `b = (1/LN)
//! Psi^T d` directly from sparse outer products and never materializes the
//! `LNd x n` matrix. Trajectory contributions are averaged, the system is
//! solved by a truncated symmetric eigendecomposition (a pseudo-inverse), and
//! the empirical error functional ties the quadratic form back to observable
//! residuals.

use ndarray::{Array1, Array2};
use ndarray_linalg::{Eigh, UPLO};
use serde::{Deserialize, Serialize};

use crate::dynamics::{eval_rhs_into, snorm_sq, SystemSpec, TrajectoryBatch};
use crate::error::{Error, Result};
use crate::hypothesis::HypothesisSpace;

/// Relative eigenvalue threshold below which the solver treats directions of
/// the normal matrix as unobserved.
pub const DEFAULT_SV_CUTOFF: f64 = 1e-12;

/// What to do with an observed pairwise distance beyond the hypothesis
/// interval. The interval is normally chosen to cover the dynamics, so the
/// default treats an overflow as a setup mistake.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistancePolicy {
    #[default]
    Strict,
    /// Attribute the pair to the last subinterval; used for noisy data where
    /// perturbed positions can leak slightly past the chosen radius.
    ClampToInterval,
}

/// Sum of per-trajectory normal-equation contributions, kept as raw totals so
/// that partial accumulators merge exactly; division by the trajectory count
/// happens once in [`finalize`](NormalAccumulator::finalize).
#[derive(Debug, Clone)]
pub struct NormalAccumulator {
    space: HypothesisSpace,
    policy: DistancePolicy,
    a_total: Array2<f64>,
    b_total: Array1<f64>,
    m_count: usize,
}

impl NormalAccumulator {
    pub fn new(space: HypothesisSpace, policy: DistancePolicy) -> Self {
        let dim = space.dim();
        NormalAccumulator {
            space,
            policy,
            a_total: Array2::zeros((dim, dim)),
            b_total: Array1::zeros(dim),
            m_count: 0,
        }
    }

    pub fn space(&self) -> &HypothesisSpace {
        &self.space
    }

    pub fn policy(&self) -> DistancePolicy {
        self.policy
    }

    pub fn m_count(&self) -> usize {
        self.m_count
    }

    /// Raw sums and the trajectory count, for checkpointing.
    pub fn raw_parts(&self) -> (&Array2<f64>, &Array1<f64>, usize) {
        (&self.a_total, &self.b_total, self.m_count)
    }

    /// Rebuild an accumulator from checkpointed raw totals.
    pub fn from_raw_parts(
        space: HypothesisSpace,
        policy: DistancePolicy,
        a_total: Array2<f64>,
        b_total: Array1<f64>,
        m_count: usize,
    ) -> Result<Self> {
        let dim = space.dim();
        if a_total.dim() != (dim, dim) {
            return Err(Error::ShapeMismatch {
                expected: dim * dim,
                got: a_total.len(),
            });
        }
        if b_total.len() != dim {
            return Err(Error::ShapeMismatch {
                expected: dim,
                got: b_total.len(),
            });
        }
        Ok(NormalAccumulator {
            space,
            policy,
            a_total,
            b_total,
            m_count,
        })
    }

    /// Absorb every trajectory of a batch, in trajectory order.
    pub fn add_batch(&mut self, spec: &SystemSpec, batch: &TrajectoryBatch) -> Result<()> {
        batch.validate()?;
        if batch.velocities.is_none() {
            return Err(Error::MissingVelocities);
        }
        if batch.d != spec.d() || batch.n_agents != spec.n_agents() {
            return Err(Error::DimensionMismatch(format!(
                "batch is {} agents in {} dims, system expects {} in {}",
                batch.n_agents,
                batch.d,
                spec.n_agents(),
                spec.d()
            )));
        }
        let l_count = batch.n_times();
        for m in 0..batch.n_trajectories {
            let states: Vec<&[f64]> = (0..l_count).map(|l| batch.state(m, l)).collect();
            let vels: Vec<&[f64]> = (0..l_count)
                .map(|l| batch.velocity(m, l).expect("checked above"))
                .collect();
            accumulate_rows(
                spec,
                &self.space,
                self.policy,
                &states,
                &vels,
                &mut self.a_total,
                &mut self.b_total,
            )?;
            self.m_count += 1;
        }
        Ok(())
    }

    /// Combine two partial accumulations by adding raw totals and counts.
    pub fn merge(mut self, other: NormalAccumulator) -> Result<NormalAccumulator> {
        if self.space != other.space {
            return Err(Error::DimensionMismatch(
                "cannot merge accumulators over different hypothesis spaces".into(),
            ));
        }
        if self.policy != other.policy {
            return Err(Error::InvalidArgument(
                "cannot merge accumulators with different distance policies".into(),
            ));
        }
        self.a_total += &other.a_total;
        self.b_total += &other.b_total;
        self.m_count += other.m_count;
        Ok(self)
    }

    /// Average the accumulated totals into a solvable system.
    pub fn finalize(&self) -> Result<NormalSystem> {
        if self.m_count == 0 {
            return Err(Error::InvalidArgument(
                "no trajectories accumulated".into(),
            ));
        }
        let inv = 1.0 / self.m_count as f64;
        Ok(NormalSystem {
            space: self.space.clone(),
            a: &self.a_total * inv,
            b: &self.b_total * inv,
            m_count: self.m_count,
        })
    }
}

/// Normal equations of one trajectory: the `1/(L N)`-scaled Gram matrix and
/// moment vector. [`NormalAccumulator::add_batch`] uses the same inner loop;
/// this entry point exists for diagnostics and tests on single trajectories.
pub fn assemble_trajectory(
    spec: &SystemSpec,
    space: &HypothesisSpace,
    states: &[&[f64]],
    velocities: &[&[f64]],
    policy: DistancePolicy,
) -> Result<(Array2<f64>, Array1<f64>)> {
    let dim = space.dim();
    let mut a = Array2::zeros((dim, dim));
    let mut b = Array1::zeros(dim);
    accumulate_rows(spec, space, policy, states, velocities, &mut a, &mut b)?;
    Ok((a, b))
}

/// Add one trajectory's `1/(L N)`-scaled contribution to `a` and `b`.
///
/// Per snapshot `l` and agent `i`, the sparse row `g` over columns
/// `(k_i, k', subinterval, local degree)` is built in one pass over the other
/// agents, then scattered as `w * g g^T` into `a` and `w * g . v_i` into `b`
/// with `w = 1/(L N N_{k_i})`; the two square-root weights of the conceptual
/// regression matrix combine into this single factor. Touched columns are
/// processed in sorted order so the result does not depend on accidental
/// iteration order.
fn accumulate_rows(
    spec: &SystemSpec,
    space: &HypothesisSpace,
    policy: DistancePolicy,
    states: &[&[f64]],
    velocities: &[&[f64]],
    a: &mut Array2<f64>,
    b: &mut Array1<f64>,
) -> Result<()> {
    if spec.n_types() != space.k_count() {
        return Err(Error::DimensionMismatch(format!(
            "system has {} types, hypothesis space {}",
            spec.n_types(),
            space.k_count()
        )));
    }
    if states.len() != velocities.len() || states.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "need matching, nonempty snapshot lists ({} states, {} velocities)",
            states.len(),
            velocities.len()
        )));
    }
    let d = spec.d();
    let n_agents = spec.n_agents();
    let deg = space.degree();
    let scale = 1.0 / (states.len() as f64 * n_agents as f64);

    let dim = space.dim();
    let mut row = vec![0.0f64; dim * d];
    let mut touched: Vec<usize> = Vec::with_capacity((n_agents - 1) * (deg + 1));
    let mut in_row = vec![false; dim];
    let mut diff = vec![0.0f64; d];

    for (x, v) in states.iter().zip(velocities) {
        spec.check_state_len(x.len())?;
        if v.len() != x.len() {
            return Err(Error::ShapeMismatch {
                expected: x.len(),
                got: v.len(),
            });
        }
        for i in 0..n_agents {
            let ki = spec.type_of()[i];
            for ip in 0..n_agents {
                if ip == i {
                    continue;
                }
                let mut r2 = 0.0;
                for c in 0..d {
                    diff[c] = x[ip * d + c] - x[i * d + c];
                    r2 += diff[c] * diff[c];
                }
                let r = r2.sqrt();
                let (j, u) = if r > space.hi() {
                    match policy {
                        DistancePolicy::Strict => {
                            return Err(Error::DistanceOverflow {
                                r,
                                rmax: space.hi(),
                            })
                        }
                        DistancePolicy::ClampToInterval => (space.partitions() - 1, 1.0),
                    }
                } else {
                    match space.basis_at(r) {
                        Some(ju) => ju,
                        None => continue, // below the interval: no basis support
                    }
                };
                let kp = spec.type_of()[ip];
                let w_kp = 1.0 / spec.type_sizes()[kp] as f64;
                let base = space.pair_offset(ki, kp)? + j * (deg + 1);
                for q in 0..=deg {
                    let col = base + q;
                    let coef = if q == 0 { w_kp } else { w_kp * u };
                    if !in_row[col] {
                        in_row[col] = true;
                        touched.push(col);
                    }
                    for c in 0..d {
                        row[col * d + c] += coef * diff[c];
                    }
                }
            }

            touched.sort_unstable();
            let w = scale / spec.type_sizes()[ki] as f64;
            let vi = &v[i * d..(i + 1) * d];
            for (t1, &c1) in touched.iter().enumerate() {
                let g1 = &row[c1 * d..c1 * d + d];
                b[c1] += w * dot(g1, vi);
                for &c2 in &touched[t1..] {
                    let val = w * dot(g1, &row[c2 * d..c2 * d + d]);
                    a[[c1, c2]] += val;
                    if c1 != c2 {
                        a[[c2, c1]] += val;
                    }
                }
            }
            for &col in &touched {
                row[col * d..col * d + d].fill(0.0);
                in_row[col] = false;
            }
            touched.clear();
        }
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Averaged normal equations, ready to solve.
#[derive(Debug, Clone)]
pub struct NormalSystem {
    space: HypothesisSpace,
    a: Array2<f64>,
    b: Array1<f64>,
    m_count: usize,
}

/// Solver output: coefficients plus conditioning diagnostics.
#[derive(Debug, Clone)]
pub struct LeastSquaresFit {
    pub coeffs: Vec<f64>,
    /// Eigenvalues of the normal matrix in ascending order.
    pub eigenvalues: Vec<f64>,
    /// Number of eigenvalues above the cutoff; directions below it received
    /// zero coefficient.
    pub rank: usize,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

impl NormalSystem {
    pub fn space(&self) -> &HypothesisSpace {
        &self.space
    }

    pub fn a(&self) -> &Array2<f64> {
        &self.a
    }

    pub fn b(&self) -> &Array1<f64> {
        &self.b
    }

    pub fn m_count(&self) -> usize {
        self.m_count
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    /// Check the structural invariants: symmetry to 1e-12 relative and no
    /// eigenvalue below `-1e-10 * lambda_max`. Runs a full
    /// eigendecomposition, so intended for tests and debugging.
    pub fn validate(&self) -> Result<()> {
        let scale = self.a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..self.dim() {
            for j in (i + 1)..self.dim() {
                let asym = (self.a[[i, j]] - self.a[[j, i]]).abs();
                if asym > 1e-12 * scale {
                    return Err(Error::Linalg(format!(
                        "normal matrix asymmetric at ({i},{j}): {asym:e}"
                    )));
                }
            }
        }
        let fit = self.solve(DEFAULT_SV_CUTOFF)?;
        if fit.lambda_min < -1e-10 * fit.lambda_max.max(0.0) {
            return Err(Error::Linalg(format!(
                "normal matrix indefinite: lambda_min = {:e}, lambda_max = {:e}",
                fit.lambda_min, fit.lambda_max
            )));
        }
        Ok(())
    }

    /// Minimum-norm least-squares coefficients via a symmetric
    /// eigendecomposition: eigendirections with eigenvalue at most
    /// `sv_cutoff * lambda_max` are treated as unobserved and get zero
    /// coefficient, which also silences the exactly-empty columns of basis
    /// functions whose subinterval no sample ever visited.
    pub fn solve(&self, sv_cutoff: f64) -> Result<LeastSquaresFit> {
        if !(sv_cutoff >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "eigenvalue cutoff must be nonnegative, got {sv_cutoff}"
            )));
        }
        if self.a.iter().any(|v| !v.is_finite()) || self.b.iter().any(|v| !v.is_finite()) {
            return Err(Error::Linalg(
                "normal system contains non-finite entries".into(),
            ));
        }
        let (evals, evecs) = self
            .a
            .eigh(UPLO::Lower)
            .map_err(|e| Error::Linalg(format!("eigendecomposition failed: {e}")))?;
        let lambda_min = evals[0];
        let lambda_max = evals[evals.len() - 1];
        let thresh = if lambda_max > 0.0 {
            sv_cutoff * lambda_max
        } else {
            f64::INFINITY
        };
        let qtb = evecs.t().dot(&self.b);
        let mut scaled = Array1::zeros(evals.len());
        let mut rank = 0;
        for (idx, &lam) in evals.iter().enumerate() {
            if lam > thresh {
                scaled[idx] = qtb[idx] / lam;
                rank += 1;
            }
        }
        let coeffs = evecs.dot(&scaled);
        Ok(LeastSquaresFit {
            coeffs: coeffs.to_vec(),
            eigenvalues: evals.to_vec(),
            rank,
            lambda_min,
            lambda_max,
        })
    }

    /// The data-dependent part of the empirical error of coefficient vector
    /// `a`: `a^T A a - 2 a^T b`. The full error is
    /// `N * quadratic_form(a) + error_of_zero`, with `N` the agent count.
    pub fn quadratic_form(&self, coeffs: &[f64]) -> Result<f64> {
        if coeffs.len() != self.dim() {
            return Err(Error::ShapeMismatch {
                expected: self.dim(),
                got: coeffs.len(),
            });
        }
        let a = Array1::from(coeffs.to_vec());
        Ok(a.dot(&self.a.dot(&a)) - 2.0 * a.dot(&self.b))
    }
}

/// Mean squared velocity residual of the system's kernels over a batch:
/// `(1/ML) sum_{m,l} ||v^(m)(t_l) - f(x^(m)(t_l))||^2` in the type-weighted
/// state norm. The batch must carry velocities.
pub fn empirical_error(spec: &SystemSpec, batch: &TrajectoryBatch) -> Result<f64> {
    batch.validate()?;
    if batch.velocities.is_none() {
        return Err(Error::MissingVelocities);
    }
    let l_count = batch.n_times();
    let mut f = vec![0.0; batch.n_agents * batch.d];
    let mut resid = vec![0.0; batch.n_agents * batch.d];
    let mut total = 0.0;
    for m in 0..batch.n_trajectories {
        for l in 0..l_count {
            let x = batch.state(m, l);
            let v = batch.velocity(m, l).expect("checked above");
            eval_rhs_into(spec, x, &mut f)?;
            for c in 0..resid.len() {
                resid[c] = v[c] - f[c];
            }
            total += snorm_sq(spec, &resid)?;
        }
    }
    Ok(total / (batch.n_trajectories as f64 * l_count as f64))
}
