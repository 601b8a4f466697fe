//! Trajectory-prediction errors, observation noise, and convergence-rate
//! fitting.
//!
//! Learned kernels are judged two ways: by their distance to the truth in
//! the weighted function norm (see [`crate::measure`]) and by how well the
//! system they generate tracks the true system from shared initial
//! conditions. This module provides the second judgment: worst-case state
//! discrepancy over a time window, an experiment harness comparing the two
//! systems over several initial-condition classes, uniform observation
//! noise for robustness studies, and the log-log rate fit summarizing how
//! errors decay with the number of observed trajectories.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{simulate, snorm, SystemSpec, TrajectoryBatch};
use crate::error::{Error, Result};
use crate::integrate::OdeOptions;
use crate::kernels::{sample_initial, InitialSampler, Kernel};
use crate::rng::{stream_rng, Stream};

/// Worst-case weighted state discrepancy over the grid nodes falling inside
/// `window = [w0, w1]` (inclusive): `max_l ||truth(t_l) - estimate(t_l)||_S`.
///
/// Both trajectories must be sampled on the common grid `times`, integrated
/// from the same initial state.
pub fn trajectory_error(
    spec: &SystemSpec,
    times: &[f64],
    truth: &[Vec<f64>],
    estimate: &[Vec<f64>],
    window: (f64, f64),
) -> Result<f64> {
    if truth.len() != times.len() || estimate.len() != times.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} time nodes but {} / {} states",
            times.len(),
            truth.len(),
            estimate.len()
        )));
    }
    let (w0, w1) = window;
    if !(w0 <= w1) {
        return Err(Error::InvalidArgument(format!(
            "window [{w0}, {w1}] is empty"
        )));
    }
    let mut sup: Option<f64> = None;
    let mut diff = Vec::new();
    for (l, &t) in times.iter().enumerate() {
        if t < w0 || t > w1 {
            continue;
        }
        diff.clear();
        diff.extend(truth[l].iter().zip(&estimate[l]).map(|(a, b)| a - b));
        let e = snorm(spec, &diff)?;
        sup = Some(sup.map_or(e, |s: f64| s.max(e)));
    }
    sup.ok_or_else(|| {
        Error::InvalidArgument(format!("no grid nodes inside the window [{w0}, {w1}]"))
    })
}

/// Observation-noise model: independent `Unif[-sigma, sigma]` draws per
/// scalar component, added to or scaling each component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// `x -> x + eta`.
    Additive,
    /// `x -> x * (1 + eta)`.
    Multiplicative,
}

/// Perturb every position and velocity component of a batch with
/// independent uniform noise of half-width `sigma`.
///
/// Trajectory `m` of the batch draws from the stream
/// `(seed, Noise, first_index + m)` - positions first, then velocities - so
/// noisy batches produced in waves of any size are identical to a single
/// pass. `sigma = 0` returns the batch unchanged.
pub fn add_noise(
    batch: &TrajectoryBatch,
    kind: NoiseKind,
    sigma: f64,
    seed: u64,
    first_index: u64,
) -> Result<TrajectoryBatch> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "noise half-width must be finite and nonnegative, got {sigma}"
        )));
    }
    batch.validate()?;
    let Some(velocities) = &batch.velocities else {
        return Err(Error::MissingVelocities);
    };
    let mut out = batch.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let per_traj = batch.n_times() * batch.n_agents * batch.d;
    let out_states = &mut out.states;
    let out_vels = out.velocities.as_mut().expect("cloned above");
    for m in 0..batch.n_trajectories {
        let mut rng = stream_rng(seed, Stream::Noise, first_index + m as u64);
        let lo = m * per_traj;
        let hi = lo + per_traj;
        for x in &mut out_states[lo..hi] {
            *x = perturb(*x, kind, sigma, &mut rng);
        }
        for v in &mut out_vels[lo..hi] {
            *v = perturb(*v, kind, sigma, &mut rng);
        }
    }
    debug_assert_eq!(velocities.len(), batch.states.len());
    Ok(out)
}

fn perturb<R: Rng>(x: f64, kind: NoiseKind, sigma: f64, rng: &mut R) -> f64 {
    let eta = sigma * (2.0 * rng.random::<f64>() - 1.0);
    match kind {
        NoiseKind::Additive => x + eta,
        NoiseKind::Multiplicative => x * (1.0 + eta),
    }
}

/// Log-log least-squares fit of an error-decay curve.
#[derive(Debug, Clone, PartialEq)]
pub struct RateFit {
    /// Decay exponent: errors behave like `M^(-rate)`.
    pub rate: f64,
    /// Intercept of the fit in log-log coordinates.
    pub intercept: f64,
    /// Euclidean norm of the log-residuals.
    pub residual: f64,
}

/// Fit `error ~ C * M^(-rate)` by ordinary least squares on
/// `(ln M, ln error)`. Needs at least three points with positive
/// coordinates; returns the negated slope so that decaying errors give a
/// positive rate.
pub fn fit_rate(points: &[(f64, f64)]) -> Result<RateFit> {
    if points.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "rate fit needs at least 3 points, got {}",
            points.len()
        )));
    }
    for &(m, e) in points {
        if !(m > 0.0) || !(e > 0.0) || !m.is_finite() || !e.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "rate fit needs positive finite points, got ({m}, {e})"
            )));
        }
    }
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|&(m, _)| m.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|&(_, e)| e.ln()).collect();
    let x_mean = xs.iter().sum::<f64>() / n;
    let y_mean = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - x_mean) * (x - x_mean)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument(
            "rate fit needs at least two distinct sample counts".into(),
        ));
    }
    let sxy: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - x_mean) * (y - y_mean))
        .sum();
    let slope = sxy / sxx;
    let intercept = y_mean - slope * x_mean;
    let residual = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum::<f64>()
        .sqrt();
    Ok(RateFit {
        rate: -slope,
        intercept,
        residual,
    })
}

/// Summary statistics of one error sample (population mean/std).
#[derive(Debug, Clone, PartialEq)]
pub struct WindowStats {
    pub mean: f64,
    pub std: f64,
    /// The raw per-initial-condition errors behind the summary.
    pub values: Vec<f64>,
}

impl WindowStats {
    fn from_values(values: Vec<f64>) -> WindowStats {
        if values.is_empty() {
            return WindowStats {
                mean: f64::NAN,
                std: f64::NAN,
                values,
            };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        WindowStats {
            mean,
            std: var.sqrt(),
            values,
        }
    }
}

/// Initial-condition classes a prediction experiment evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IcClass {
    /// Initial states reused from the training data.
    Training,
    /// Fresh states drawn from the same initial distribution.
    Random,
    /// Fresh states for a system scaled to several times as many agents.
    LargeN,
}

/// Errors of one initial-condition class over both prediction windows.
#[derive(Debug, Clone)]
pub struct ClassOutcome {
    pub class: IcClass,
    /// Worst-case errors over the window the kernels were learned on.
    pub train_window: WindowStats,
    /// Worst-case errors over the extrapolation window.
    pub future_window: WindowStats,
    /// Initial conditions excluded because either system failed to
    /// integrate.
    pub failures: usize,
}

/// Per-class prediction errors of an estimated system against the truth.
#[derive(Debug, Clone)]
pub struct PredictionReport {
    pub outcomes: Vec<ClassOutcome>,
}

impl PredictionReport {
    pub fn outcome(&self, class: IcClass) -> Option<&ClassOutcome> {
        self.outcomes.iter().find(|o| o.class == class)
    }
}

/// A trajectory-prediction experiment: integrate the true system and the
/// estimated system from identical initial conditions and compare them on
/// the learning window `[t_start, t_split]` and the extrapolation window
/// `[t_split, t_end]`.
pub struct PredictionSetup<'a> {
    pub spec: &'a SystemSpec,
    /// Learned kernel grid, row-major over (observer, neighbour) types.
    /// Should be smoothed: discontinuous kernels make the comparison
    /// integration needlessly stiff.
    pub estimated: &'a [Kernel],
    /// Per-type initial samplers for the fresh-IC classes.
    pub samplers: &'a [InitialSampler],
    /// Initial states reused from training (each of length `N * d`).
    pub training_initials: &'a [Vec<f64>],
    /// Fresh initial conditions to draw.
    pub n_random: usize,
    /// Fresh initial conditions for the scaled-up system; 0 disables the
    /// class.
    pub n_large: usize,
    /// Agent-count multiplier of the scaled-up class.
    pub large_factor: usize,
    pub t_start: f64,
    pub t_split: f64,
    pub t_end: f64,
    /// Grid nodes per window.
    pub nodes_per_window: usize,
    pub seed: u64,
    pub ode: &'a OdeOptions,
}

/// Default grid density per prediction window.
pub const DEFAULT_PREDICTION_NODES: usize = 200;

/// Run a prediction experiment. Each initial condition is integrated once
/// under the true kernels and once under the estimated kernels on a shared
/// grid; an integration failure of either system excludes that initial
/// condition and is counted. Fresh initial conditions come from the
/// `(seed, Evaluation, index)` streams, indices counted across classes, so
/// reports are deterministic and no draw is shared with training streams.
pub fn prediction_experiment(setup: &PredictionSetup) -> Result<PredictionReport> {
    if !(setup.t_start < setup.t_split && setup.t_split < setup.t_end) {
        return Err(Error::InvalidArgument(format!(
            "prediction windows need t_start < t_split < t_end, got {} / {} / {}",
            setup.t_start, setup.t_split, setup.t_end
        )));
    }
    if setup.nodes_per_window < 2 {
        return Err(Error::InvalidArgument(
            "need at least two grid nodes per window".into(),
        ));
    }
    let estimated_spec = setup.spec.with_kernels(setup.estimated.to_vec())?;

    let times = window_grid(
        setup.t_start,
        setup.t_split,
        setup.t_end,
        setup.nodes_per_window,
    );
    let train_window = (setup.t_start, setup.t_split);
    let future_window = (setup.t_split, setup.t_end);

    let mut outcomes = Vec::new();
    let mut eval_index = 0u64;

    // Training-state class.
    let training: Vec<Vec<f64>> = setup.training_initials.to_vec();
    outcomes.push(run_class(
        IcClass::Training,
        setup.spec,
        &estimated_spec,
        &training,
        &times,
        train_window,
        future_window,
        setup.ode,
    )?);

    // Fresh states from the training distribution.
    let mut random_ics = Vec::with_capacity(setup.n_random);
    for _ in 0..setup.n_random {
        let mut rng = stream_rng(setup.seed, Stream::Evaluation, eval_index);
        eval_index += 1;
        let mut x0 = vec![0.0; setup.spec.n_agents() * setup.spec.d()];
        sample_initial(
            setup.samplers,
            setup.spec.type_of(),
            setup.spec.d(),
            &mut rng,
            &mut x0,
        )?;
        random_ics.push(x0);
    }
    outcomes.push(run_class(
        IcClass::Random,
        setup.spec,
        &estimated_spec,
        &random_ics,
        &times,
        train_window,
        future_window,
        setup.ode,
    )?);

    // Scaled-up system: more agents per type, same kernels on both sides.
    if setup.n_large > 0 {
        if setup.large_factor == 0 {
            return Err(Error::InvalidArgument(
                "agent-count multiplier must be positive".into(),
            ));
        }
        let sizes: Vec<usize> = setup
            .spec
            .type_sizes()
            .iter()
            .map(|&n| n * setup.large_factor)
            .collect();
        let kernels: Vec<Kernel> = (0..setup.spec.n_types())
            .flat_map(|k| (0..setup.spec.n_types()).map(move |kp| (k, kp)))
            .map(|(k, kp)| setup.spec.kernel(k, kp).clone())
            .collect();
        let large_spec = SystemSpec::new(setup.spec.d(), sizes.clone(), kernels)?;
        let large_est = large_spec.with_kernels(setup.estimated.to_vec())?;
        let mut large_ics = Vec::with_capacity(setup.n_large);
        for _ in 0..setup.n_large {
            let mut rng = stream_rng(setup.seed, Stream::Evaluation, eval_index);
            eval_index += 1;
            let mut x0 = vec![0.0; large_spec.n_agents() * large_spec.d()];
            sample_initial(
                setup.samplers,
                large_spec.type_of(),
                large_spec.d(),
                &mut rng,
                &mut x0,
            )?;
            large_ics.push(x0);
        }
        outcomes.push(run_class(
            IcClass::LargeN,
            &large_spec,
            &large_est,
            &large_ics,
            &times,
            train_window,
            future_window,
            setup.ode,
        )?);
    }

    Ok(PredictionReport { outcomes })
}

/// Shared grid over both windows: `nodes` points per window, the split
/// point appearing once (it belongs to both windows when errors are taken).
fn window_grid(t_start: f64, t_split: f64, t_end: f64, nodes: usize) -> Vec<f64> {
    let mut times = crate::dynamics::equispaced_times(t_start, t_split, nodes);
    let future = crate::dynamics::equispaced_times(t_split, t_end, nodes);
    times.extend_from_slice(&future[1..]);
    times
}

#[allow(clippy::too_many_arguments)]
fn run_class(
    class: IcClass,
    truth_spec: &SystemSpec,
    est_spec: &SystemSpec,
    ics: &[Vec<f64>],
    times: &[f64],
    train_window: (f64, f64),
    future_window: (f64, f64),
    ode: &OdeOptions,
) -> Result<ClassOutcome> {
    let mut train_errors = Vec::with_capacity(ics.len());
    let mut future_errors = Vec::with_capacity(ics.len());
    let mut failures = 0usize;
    for x0 in ics {
        let truth = match simulate(truth_spec, x0, times, ode) {
            Ok(t) => t,
            Err(Error::Integration { .. }) | Err(Error::NonFiniteKernel { .. }) => {
                failures += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let estimate = match simulate(est_spec, x0, times, ode) {
            Ok(t) => t,
            Err(Error::Integration { .. }) | Err(Error::NonFiniteKernel { .. }) => {
                failures += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        train_errors.push(trajectory_error(
            truth_spec,
            times,
            &truth,
            &estimate,
            train_window,
        )?);
        future_errors.push(trajectory_error(
            truth_spec,
            times,
            &truth,
            &estimate,
            future_window,
        )?);
    }
    Ok(ClassOutcome {
        class,
        train_window: WindowStats::from_values(train_errors),
        future_window: WindowStats::from_values(future_errors),
        failures,
    })
}
