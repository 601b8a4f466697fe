//! Heterogeneous agent systems and their trajectories.
//!
//! A system of `N` agents in `R^d` with types `k_i ∈ {0..K-1}` moves by
//!
//! ```text
//! dx_i/dt = sum_{i'} (1 / N_{k_{i'}}) phi_{k_i k_{i'}}(|x_{i'} - x_i|) (x_{i'} - x_i)
//! ```
//!
//! with `N_k` agents of type `k`. The kernel grid is indexed observer-first:
//! `phi_{k k'}` weighs the pull exerted on a type-`k` agent by a type-`k'`
//! agent. The self term `i' = i` carries a zero vector factor and is skipped
//! outright, so kernel values at distance zero never enter.
//!
//! States are flat `Vec<f64>` buffers laid out `[agent][coordinate]`;
//! batches of trajectories add two outer dimensions, `[trajectory][time]`.
//! The weighted norm [`snorm`] divides each agent's squared contribution by
//! its type's population so that types of very different sizes contribute
//! comparably to error functionals.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::integrate::{integrate, OdeOptions};
use crate::kernels::{InitialSampler, Kernel};
use crate::rng::{stream_rng, Stream};

/// Flat agent-major position or velocity buffer of length `N·d`.
pub type State = Vec<f64>;

/// A heterogeneous agent system: dimensions, type partition, kernel grid.
///
/// Agents are numbered with types contiguous: the first `N_0` agents are
/// type 0, the next `N_1` type 1, and so on.
#[derive(Debug, Clone)]
pub struct SystemSpec {
    d: usize,
    type_sizes: Vec<usize>,
    type_of: Vec<usize>,
    /// Row-major `K×K`: `kernels[k*K + k']` is `phi_{k k'}`.
    kernels: Vec<Kernel>,
}

impl SystemSpec {
    pub fn new(d: usize, type_sizes: Vec<usize>, kernels: Vec<Kernel>) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidConfig("spatial dimension is zero".into()));
        }
        let k = type_sizes.len();
        if k == 0 || type_sizes.iter().any(|&n| n == 0) {
            return Err(Error::InvalidConfig(
                "every type must contain at least one agent".into(),
            ));
        }
        if kernels.len() != k * k {
            return Err(Error::ShapeMismatch {
                expected: k * k,
                got: kernels.len(),
            });
        }
        let type_of = type_sizes
            .iter()
            .enumerate()
            .flat_map(|(t, &n)| std::iter::repeat(t).take(n))
            .collect();
        Ok(SystemSpec {
            d,
            type_sizes,
            type_of,
            kernels,
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Number of types `K`.
    pub fn n_types(&self) -> usize {
        self.type_sizes.len()
    }

    /// Total number of agents `N`.
    pub fn n_agents(&self) -> usize {
        self.type_of.len()
    }

    pub fn type_sizes(&self) -> &[usize] {
        &self.type_sizes
    }

    pub fn type_of(&self) -> &[usize] {
        &self.type_of
    }

    /// The kernel `phi_{k k'}` felt by a type-`k` observer from a type-`k'`
    /// neighbour.
    pub fn kernel(&self, k: usize, kp: usize) -> &Kernel {
        &self.kernels[k * self.n_types() + kp]
    }

    /// Replace the kernel grid, e.g. by learned estimators.
    pub fn with_kernels(&self, kernels: Vec<Kernel>) -> Result<Self> {
        SystemSpec::new(self.d, self.type_sizes.clone(), kernels)
    }

    pub(crate) fn check_state_len(&self, len: usize) -> Result<()> {
        let expected = self.n_agents() * self.d;
        if len == expected {
            Ok(())
        } else {
            Err(Error::ShapeMismatch { expected, got: len })
        }
    }
}

/// Evaluate the right-hand side of the agent ODE into `out`.
///
/// Each unordered pair is visited once; the kernel is evaluated for both
/// directions since `phi_{k k'}` and `phi_{k' k}` generally differ. A
/// non-finite kernel value aborts with the offending agents and distance.
pub fn eval_rhs_into(spec: &SystemSpec, state: &[f64], out: &mut [f64]) -> Result<()> {
    spec.check_state_len(state.len())?;
    spec.check_state_len(out.len())?;
    let d = spec.d;
    let n = spec.n_agents();
    let k_count = spec.n_types();
    out.fill(0.0);
    for i in 0..n {
        let ki = spec.type_of[i];
        for ip in (i + 1)..n {
            let kip = spec.type_of[ip];
            let mut r2 = 0.0;
            for c in 0..d {
                let diff = state[ip * d + c] - state[i * d + c];
                r2 += diff * diff;
            }
            let r = r2.sqrt();
            // Pull on i from ip, and on ip from i.
            let phi_fwd = spec.kernels[ki * k_count + kip].eval(r);
            if !phi_fwd.is_finite() {
                return Err(Error::NonFiniteKernel {
                    k: ki,
                    kp: kip,
                    i,
                    ip,
                    r,
                });
            }
            let phi_bwd = spec.kernels[kip * k_count + ki].eval(r);
            if !phi_bwd.is_finite() {
                return Err(Error::NonFiniteKernel {
                    k: kip,
                    kp: ki,
                    i: ip,
                    ip: i,
                    r,
                });
            }
            let w_fwd = phi_fwd / spec.type_sizes[kip] as f64;
            let w_bwd = phi_bwd / spec.type_sizes[ki] as f64;
            for c in 0..d {
                let diff = state[ip * d + c] - state[i * d + c];
                out[i * d + c] += w_fwd * diff;
                out[ip * d + c] -= w_bwd * diff;
            }
        }
    }
    Ok(())
}

/// Allocating wrapper around [`eval_rhs_into`].
pub fn eval_rhs(spec: &SystemSpec, state: &[f64]) -> Result<State> {
    let mut out = vec![0.0; state.len()];
    eval_rhs_into(spec, state, &mut out)?;
    Ok(out)
}

/// Type-weighted state norm `(sum_i |v_i|² / N_{k_i})^{1/2}`.
pub fn snorm(spec: &SystemSpec, v: &[f64]) -> Result<f64> {
    Ok(snorm_sq(spec, v)?.sqrt())
}

/// Square of [`snorm`], accumulated directly.
pub fn snorm_sq(spec: &SystemSpec, v: &[f64]) -> Result<f64> {
    spec.check_state_len(v.len())?;
    let d = spec.d;
    let mut total = 0.0;
    for (i, &k) in spec.type_of.iter().enumerate() {
        let mut norm2 = 0.0;
        for c in 0..d {
            norm2 += v[i * d + c] * v[i * d + c];
        }
        total += norm2 / spec.type_sizes[k] as f64;
    }
    Ok(total)
}

/// Integrate one trajectory from `initial`, returning the state at each
/// requested time (the first entry is `initial` itself).
pub fn simulate(
    spec: &SystemSpec,
    initial: &[f64],
    times: &[f64],
    ode: &OdeOptions,
) -> Result<Vec<State>> {
    spec.check_state_len(initial.len())?;
    integrate(
        |y, dy| eval_rhs_into(spec, y, dy),
        initial,
        times,
        ode,
    )
}

/// Observations of `M` trajectories on a common time grid.
///
/// `states` (and `velocities`, when present) are flat
/// `[trajectory][time][agent][coordinate]` buffers.
#[derive(Debug, Clone)]
pub struct TrajectoryBatch {
    pub times: Vec<f64>,
    pub d: usize,
    pub n_agents: usize,
    pub n_trajectories: usize,
    pub states: Vec<f64>,
    pub velocities: Option<Vec<f64>>,
    pub seed: u64,
}

impl TrajectoryBatch {
    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    fn offset(&self, m: usize, l: usize) -> usize {
        ((m * self.n_times()) + l) * self.n_agents * self.d
    }

    /// Positions of trajectory `m` at time index `l`.
    pub fn state(&self, m: usize, l: usize) -> &[f64] {
        let o = self.offset(m, l);
        &self.states[o..o + self.n_agents * self.d]
    }

    /// Velocities of trajectory `m` at time index `l`; `None` when the
    /// batch carries no velocities.
    pub fn velocity(&self, m: usize, l: usize) -> Option<&[f64]> {
        self.velocities.as_ref().map(|v| {
            let o = self.offset(m, l);
            &v[o..o + self.n_agents * self.d]
        })
    }

    /// Check the shape and finiteness invariants.
    pub fn validate(&self) -> Result<()> {
        let expected = self.n_trajectories * self.n_times() * self.n_agents * self.d;
        if self.states.len() != expected {
            return Err(Error::ShapeMismatch {
                expected,
                got: self.states.len(),
            });
        }
        if let Some(v) = &self.velocities {
            if v.len() != expected {
                return Err(Error::ShapeMismatch {
                    expected,
                    got: v.len(),
                });
            }
        }
        if self.times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument(
                "batch times must be strictly increasing".into(),
            ));
        }
        if !self.states.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidArgument("batch contains non-finite state".into()));
        }
        Ok(())
    }
}

/// `count` equally spaced instants from `t0` to `t1` inclusive.
pub fn equispaced_times(t0: f64, t1: f64, count: usize) -> Vec<f64> {
    assert!(count >= 2 && t1 > t0, "need at least two increasing times");
    let h = (t1 - t0) / (count - 1) as f64;
    (0..count).map(|i| t0 + i as f64 * h).collect()
}

/// How velocities of a simulated batch are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VelocityMode {
    /// Evaluate the true right-hand side at every stored state.
    Exact,
    /// Store positions only (velocities estimated later, e.g. by
    /// [`backward_diff_velocities`]).
    PositionsOnly,
}

/// Simulate `m_count` trajectories with initial conditions drawn from the
/// per-type `samplers`. Trajectory `m` uses the RNG stream `(seed, stream,
/// first_index + m)`, so batches generated in waves of any size, in any
/// order, and on any number of threads are identical.
pub fn simulate_batch(
    spec: &SystemSpec,
    samplers: &[InitialSampler],
    m_count: usize,
    first_index: u64,
    times: &[f64],
    seed: u64,
    stream: Stream,
    mode: VelocityMode,
    ode: &OdeOptions,
) -> Result<TrajectoryBatch> {
    let n = spec.n_agents();
    let d = spec.d();
    let per_traj = times.len() * n * d;
    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..m_count)
        .into_par_iter()
        .map(|m| -> Result<(Vec<f64>, Vec<f64>)> {
            let mut rng = stream_rng(seed, stream, first_index + m as u64);
            let mut initial = vec![0.0; n * d];
            crate::kernels::sample_initial(samplers, spec.type_of(), d, &mut rng, &mut initial)?;
            let traj = simulate(spec, &initial, times, ode)?;
            let mut states = Vec::with_capacity(per_traj);
            for row in &traj {
                states.extend_from_slice(row);
            }
            let velocities = match mode {
                VelocityMode::Exact => {
                    let mut vels = Vec::with_capacity(per_traj);
                    let mut buf = vec![0.0; n * d];
                    for row in &traj {
                        eval_rhs_into(spec, row, &mut buf)?;
                        vels.extend_from_slice(&buf);
                    }
                    vels
                }
                VelocityMode::PositionsOnly => Vec::new(),
            };
            Ok((states, velocities))
        })
        .collect::<Result<_>>()?;

    let mut states = Vec::with_capacity(m_count * per_traj);
    let mut velocities = Vec::new();
    for (s, v) in rows {
        states.extend_from_slice(&s);
        velocities.extend_from_slice(&v);
    }
    Ok(TrajectoryBatch {
        times: times.to_vec(),
        d,
        n_agents: n,
        n_trajectories: m_count,
        states,
        velocities: (mode == VelocityMode::Exact).then_some(velocities),
        seed,
    })
}

/// Estimate velocities by first-order differences: the batch must carry one
/// extra sample beyond the last training instant, and the returned batch
/// drops it, carrying `v(t_l) = (X(t_{l+1}) - X(t_l)) / (t_{l+1} - t_l)` at
/// each retained node.
pub fn backward_diff_velocities(batch: &TrajectoryBatch) -> Result<TrajectoryBatch> {
    let l_in = batch.n_times();
    if l_in < 2 {
        return Err(Error::InvalidArgument(
            "difference velocities need at least two time points".into(),
        ));
    }
    let l_out = l_in - 1;
    let n = batch.n_agents;
    let d = batch.d;
    let per_state = n * d;
    let mut states = Vec::with_capacity(batch.n_trajectories * l_out * per_state);
    let mut velocities = Vec::with_capacity(batch.n_trajectories * l_out * per_state);
    for m in 0..batch.n_trajectories {
        for l in 0..l_out {
            let here = batch.state(m, l);
            let next = batch.state(m, l + 1);
            let dt = batch.times[l + 1] - batch.times[l];
            states.extend_from_slice(here);
            velocities.extend(
                here.iter()
                    .zip(next)
                    .map(|(x, xn)| (xn - x) / dt),
            );
        }
    }
    Ok(TrajectoryBatch {
        times: batch.times[..l_out].to_vec(),
        d,
        n_agents: n,
        n_trajectories: batch.n_trajectories,
        states,
        velocities: Some(velocities),
        seed: batch.seed,
    })
}

/// Constant kernel as a two-knot table (constant extrapolation); test helper
/// shared across modules.
#[cfg(test)]
pub(crate) fn constant_kernel(c: f64) -> Kernel {
    Kernel::Tabulated(crate::kernels::Tabulated::new(vec![0.0, 1.0], vec![c, c]).unwrap())
}
