//! Empirical distributions of pairwise distances.
//!
//! Learning quality is judged in a norm adapted to the dynamics: distances
//! that the trajectories actually explore carry weight, distances never
//! observed carry none. For each ordered type pair `(k, k')` the measure
//! histograms every distance `r_ii'(t_l)` with `i` of type `k` and `i'` of
//! type `k'` across all trajectories and observation times, each sample
//! weighted `1/(L·M·N_{kk'})` where the pair normalizer `N_{kk'}` is
//! `N_k·N_{k'}` for `k ≠ k'` and `C(N_k, 2)` for `k = k'` (unordered pairs
//! counted once within a type). Each pair histogram is then a probability
//! measure on `[0, R]`.
//!
//! Histograms use `B` uniform bins, left-closed and right-open except the
//! last, which is closed so `r = R` counts. Bin index arithmetic is fixed as
//! `floor(r / R * B)` throughout the crate; quadrature against a histogram
//! always evaluates integrands at bin midpoints.
//!
//! [`MeasureAccumulator`] supports streaming batches in waves and merging
//! partial accumulations; merging adds raw weights and integer counts, so
//! any grouping of the same samples yields identical masses.

use crate::dynamics::{SystemSpec, TrajectoryBatch};
use crate::error::{Error, Result};
use crate::kernels::Kernel;

/// Histogram of one ordered type pair.
#[derive(Debug, Clone)]
pub struct PairHistogram {
    /// Probability masses per bin; they sum to 1 unless `empty`.
    pub masses: Vec<f64>,
    /// Raw sample counts per bin.
    pub counts: Vec<u64>,
    /// Set when the pair has no samples by construction (diagonal pair of a
    /// single-agent type).
    pub empty: bool,
}

/// Empirical pairwise-distance measure of a trajectory ensemble.
#[derive(Debug, Clone)]
pub struct PairwiseMeasure {
    r_max: f64,
    n_bins: usize,
    k_count: usize,
    pairs: Vec<PairHistogram>,
}

impl PairwiseMeasure {
    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn k_count(&self) -> usize {
        self.k_count
    }

    /// Histogram of the ordered pair `(k, k')`.
    pub fn pair(&self, k: usize, kp: usize) -> &PairHistogram {
        &self.pairs[k * self.k_count + kp]
    }

    #[cfg(test)]
    pub(crate) fn pairs_mut(&mut self) -> &mut [PairHistogram] {
        &mut self.pairs
    }

    /// Midpoint of bin `b`, the quadrature node for that bin.
    pub fn midpoint(&self, b: usize) -> f64 {
        (b as f64 + 0.5) * self.r_max / self.n_bins as f64
    }

    /// `[lo, hi)` edges of bin `b` (the last bin is closed).
    pub fn bin_edges(&self, b: usize) -> (f64, f64) {
        let w = self.r_max / self.n_bins as f64;
        (b as f64 * w, (b as f64 + 1.0) * w)
    }

    /// Weighted L² norm of `g(r)·r` against the `(k, k')` histogram:
    /// `(Σ_b mass_b (g(c_b) c_b)²)^{1/2}` with `c_b` the bin midpoints.
    pub fn weighted_l2_norm<F: Fn(f64) -> f64>(&self, k: usize, kp: usize, g: F) -> f64 {
        self.weighted_l2_norm_sq(k, kp, g).sqrt()
    }

    /// Square of [`weighted_l2_norm`](Self::weighted_l2_norm).
    pub fn weighted_l2_norm_sq<F: Fn(f64) -> f64>(&self, k: usize, kp: usize, g: F) -> f64 {
        let hist = self.pair(k, kp);
        let mut total = 0.0;
        for (b, &mass) in hist.masses.iter().enumerate() {
            if mass > 0.0 {
                let c = self.midpoint(b);
                let v = g(c) * c;
                total += mass * v * v;
            }
        }
        total
    }

    /// Check that every non-empty pair's masses are nonnegative and sum to
    /// one within `tol`.
    pub fn validate(&self, tol: f64) -> Result<()> {
        for k in 0..self.k_count {
            for kp in 0..self.k_count {
                let h = self.pair(k, kp);
                if h.empty {
                    continue;
                }
                if h.masses.iter().any(|&m| m < 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "negative mass in pair ({k},{kp})"
                    )));
                }
                let total: f64 = h.masses.iter().sum();
                if (total - 1.0).abs() > tol {
                    return Err(Error::InvalidArgument(format!(
                        "pair ({k},{kp}) masses sum to {total}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Streaming histogram accumulator over trajectory batches.
///
/// The support radius is fixed at construction; distances beyond it are an
/// error unless `clamp` routes them into the last bin (used when observation
/// noise pushes distances slightly past the clean-data support).
#[derive(Debug, Clone)]
pub struct MeasureAccumulator {
    r_max: f64,
    n_bins: usize,
    k_count: usize,
    type_sizes: Vec<usize>,
    clamp: bool,
    /// Raw per-bin weights (each sample deposits `1/N_{kk'}`), normalized
    /// by the slice count only in `finalize`.
    weights: Vec<Vec<f64>>,
    counts: Vec<Vec<u64>>,
    /// Number of `(trajectory, time)` slices accumulated so far.
    slices: u64,
}

impl MeasureAccumulator {
    pub fn new(spec: &SystemSpec, n_bins: usize, r_max: f64, clamp: bool) -> Result<Self> {
        if n_bins == 0 {
            return Err(Error::InvalidArgument("need at least one bin".into()));
        }
        if !(r_max > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "support radius must be positive, got {r_max}"
            )));
        }
        let k = spec.n_types();
        Ok(MeasureAccumulator {
            r_max,
            n_bins,
            k_count: k,
            type_sizes: spec.type_sizes().to_vec(),
            clamp,
            weights: vec![vec![0.0; n_bins]; k * k],
            counts: vec![vec![0; n_bins]; k * k],
            slices: 0,
        })
    }

    /// Deposit every pairwise distance of every `(m, l)` slice of `batch`.
    pub fn add_batch(&mut self, spec: &SystemSpec, batch: &TrajectoryBatch) -> Result<()> {
        if spec.type_sizes() != self.type_sizes {
            return Err(Error::DimensionMismatch(
                "batch system does not match accumulator".into(),
            ));
        }
        let n = spec.n_agents();
        let d = spec.d();
        let type_of = spec.type_of();
        let k_count = self.k_count;
        for m in 0..batch.n_trajectories {
            for l in 0..batch.n_times() {
                let x = batch.state(m, l);
                for i in 0..n {
                    let ki = type_of[i];
                    for ip in (i + 1)..n {
                        let kip = type_of[ip];
                        let mut r2 = 0.0;
                        for c in 0..d {
                            let diff = x[ip * d + c] - x[i * d + c];
                            r2 += diff * diff;
                        }
                        let r = r2.sqrt();
                        let bin = self.bin_index(r)?;
                        if ki == kip {
                            let n_k = self.type_sizes[ki] as f64;
                            let w = 2.0 / (n_k * (n_k - 1.0)); // 1 / C(N_k, 2)
                            let idx = ki * k_count + ki;
                            self.weights[idx][bin] += w;
                            self.counts[idx][bin] += 1;
                        } else {
                            let w = 1.0
                                / (self.type_sizes[ki] as f64 * self.type_sizes[kip] as f64);
                            let fwd = ki * k_count + kip;
                            let bwd = kip * k_count + ki;
                            self.weights[fwd][bin] += w;
                            self.counts[fwd][bin] += 1;
                            self.weights[bwd][bin] += w;
                            self.counts[bwd][bin] += 1;
                        }
                    }
                }
                self.slices += 1;
            }
        }
        Ok(())
    }

    fn bin_index(&self, r: f64) -> Result<usize> {
        let raw = (r / self.r_max * self.n_bins as f64).floor();
        let idx = raw as usize;
        if idx >= self.n_bins {
            if r <= self.r_max || self.clamp {
                Ok(self.n_bins - 1)
            } else {
                Err(Error::DistanceOverflow {
                    r,
                    rmax: self.r_max,
                })
            }
        } else {
            Ok(idx)
        }
    }

    /// Combine two partial accumulations of disjoint sample sets. Raw
    /// weights and integer counts add, so grouping is immaterial.
    pub fn merge(mut self, other: MeasureAccumulator) -> Result<MeasureAccumulator> {
        if self.r_max != other.r_max
            || self.n_bins != other.n_bins
            || self.type_sizes != other.type_sizes
        {
            return Err(Error::DimensionMismatch(
                "accumulators built over different geometries".into(),
            ));
        }
        for (w, wo) in self.weights.iter_mut().zip(&other.weights) {
            for (a, b) in w.iter_mut().zip(wo) {
                *a += b;
            }
        }
        for (c, co) in self.counts.iter_mut().zip(&other.counts) {
            for (a, b) in c.iter_mut().zip(co) {
                *a += b;
            }
        }
        self.slices += other.slices;
        Ok(self)
    }

    /// Normalize into a probability measure per pair. Diagonal pairs of
    /// single-agent types come out flagged empty; so does everything when no
    /// slice was added.
    pub fn finalize(self) -> PairwiseMeasure {
        let k = self.k_count;
        let mut pairs = Vec::with_capacity(k * k);
        for kk in 0..k {
            for kp in 0..k {
                let idx = kk * k + kp;
                let undefined = kk == kp && self.type_sizes[kk] < 2;
                let masses: Vec<f64> = if undefined || self.slices == 0 {
                    vec![0.0; self.n_bins]
                } else {
                    self.weights[idx]
                        .iter()
                        .map(|w| w / self.slices as f64)
                        .collect()
                };
                pairs.push(PairHistogram {
                    masses,
                    counts: self.counts[idx].clone(),
                    empty: undefined || self.slices == 0,
                });
            }
        }
        PairwiseMeasure {
            r_max: self.r_max,
            n_bins: self.n_bins,
            k_count: k,
            pairs,
        }
    }
}

/// Largest pairwise distance over all slices of the batch.
pub fn max_pairwise_distance(spec: &SystemSpec, batch: &TrajectoryBatch) -> f64 {
    let n = spec.n_agents();
    let d = spec.d();
    let mut worst: f64 = 0.0;
    for m in 0..batch.n_trajectories {
        for l in 0..batch.n_times() {
            let x = batch.state(m, l);
            for i in 0..n {
                for ip in (i + 1)..n {
                    let mut r2 = 0.0;
                    for c in 0..d {
                        let diff = x[ip * d + c] - x[i * d + c];
                        r2 += diff * diff;
                    }
                    worst = worst.max(r2);
                }
            }
        }
    }
    worst.sqrt()
}

/// Histogram a materialized batch. When `r_max` is `None`, the support
/// radius is the largest observed pairwise distance.
pub fn build_measure(
    spec: &SystemSpec,
    batch: &TrajectoryBatch,
    n_bins: usize,
    r_max: Option<f64>,
) -> Result<PairwiseMeasure> {
    let r = match r_max {
        Some(r) => r,
        None => {
            let observed = max_pairwise_distance(spec, batch);
            if observed == 0.0 {
                return Err(Error::InvalidArgument(
                    "all agents coincide; empirical measure is a point mass at zero".into(),
                ));
            }
            observed
        }
    };
    let mut acc = MeasureAccumulator::new(spec, n_bins, r, false)?;
    acc.add_batch(spec, batch)?;
    Ok(acc.finalize())
}

/// Relative error of one kernel pair against the measure.
#[derive(Debug, Clone, Copy)]
pub struct PairKernelError {
    /// Relative error, or the absolute numerator when `absolute` is set.
    pub value: f64,
    /// Set when the truth has zero norm on this pair (e.g. a zero kernel),
    /// making the ratio undefined; `value` is then the absolute error.
    pub absolute: bool,
}

/// Per-pair and aggregate kernel errors in the measure-weighted norm.
#[derive(Debug, Clone)]
pub struct KernelErrorReport {
    /// Row-major `K×K`, ordered like the kernel grid.
    pub per_pair: Vec<PairKernelError>,
    pub aggregate: f64,
    pub aggregate_absolute: bool,
}

/// Compare an estimated kernel grid against the truth in `L²(ρ)`: per pair
/// `‖(φ̂−φ)(·)·‖/‖φ(·)·‖`, and in aggregate the same ratio of stacked norms
/// (squared norms summed over all pairs).
pub fn relative_kernel_error(
    est: &[Kernel],
    truth: &[Kernel],
    measure: &PairwiseMeasure,
) -> Result<KernelErrorReport> {
    let k = measure.k_count();
    if est.len() != k * k || truth.len() != k * k {
        return Err(Error::ShapeMismatch {
            expected: k * k,
            got: est.len().max(truth.len()),
        });
    }
    let mut per_pair = Vec::with_capacity(k * k);
    let mut num_total = 0.0;
    let mut den_total = 0.0;
    for kk in 0..k {
        for kp in 0..k {
            let e = &est[kk * k + kp];
            let t = &truth[kk * k + kp];
            let num = measure.weighted_l2_norm_sq(kk, kp, |r| e.eval(r) - t.eval(r));
            let den = measure.weighted_l2_norm_sq(kk, kp, |r| t.eval(r));
            num_total += num;
            den_total += den;
            if den > 0.0 {
                per_pair.push(PairKernelError {
                    value: (num / den).sqrt(),
                    absolute: false,
                });
            } else {
                per_pair.push(PairKernelError {
                    value: num.sqrt(),
                    absolute: true,
                });
            }
        }
    }
    let (aggregate, aggregate_absolute) = if den_total > 0.0 {
        ((num_total / den_total).sqrt(), false)
    } else {
        (num_total.sqrt(), true)
    };
    Ok(KernelErrorReport {
        per_pair,
        aggregate,
        aggregate_absolute,
    })
}
