//! Piecewise-polynomial hypothesis spaces for kernel estimation.
//!
//! A hypothesis space fixes, for every ordered type pair `(k, k')`, the same
//! uniform partition of an interval `[lo, hi]` into `partitions` subintervals
//! and a local polynomial degree (0 or 1). Each subinterval carries
//! `degree + 1` basis functions supported on that subinterval alone: the
//! constant `1` and, for degree 1, the normalized offset `(r - r_j)/h`.
//! Coefficient vectors are stacked over pairs in lexicographic `(k, k')`
//! order, so one flat vector describes a candidate kernel for every ordered
//! pair at once.
//!
//! [`choose_dimension`] implements the sample-size rule for how many basis
//! functions to spend per pair, and [`smooth_estimator`] post-processes a
//! least-squares estimate into a Lipschitz interpolant for prediction runs.

use crate::error::{Error, Result};
use crate::kernels::{Kernel, PiecewisePoly, Tabulated};

/// Default number of output grid subintervals used when smoothing an
/// estimator over its interval.
pub const DEFAULT_SMOOTHING_NODES: usize = 2000;

/// A family of piecewise-polynomial candidate kernels, one per ordered type
/// pair, sharing the interval, degree, and partition count.
#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisSpace {
    lo: f64,
    hi: f64,
    k_count: usize,
    degree: usize,
    partitions: usize,
}

impl HypothesisSpace {
    pub fn new(
        lo: f64,
        hi: f64,
        k_count: usize,
        degree: usize,
        partitions: usize,
    ) -> Result<Self> {
        if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "invalid hypothesis interval [{lo}, {hi}]"
            )));
        }
        if k_count == 0 {
            return Err(Error::InvalidArgument("need at least one agent type".into()));
        }
        if degree > 1 {
            return Err(Error::InvalidArgument(format!(
                "only degrees 0 and 1 are supported, got {degree}"
            )));
        }
        if partitions == 0 {
            return Err(Error::InvalidArgument("need at least one subinterval".into()));
        }
        Ok(HypothesisSpace {
            lo,
            hi,
            k_count,
            degree,
            partitions,
        })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn k_count(&self) -> usize {
        self.k_count
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn partitions(&self) -> usize {
        self.partitions
    }

    /// Width of one subinterval.
    pub fn subinterval_width(&self) -> f64 {
        (self.hi - self.lo) / self.partitions as f64
    }

    /// Basis functions per ordered pair: `(degree + 1) * partitions`.
    pub fn n_pair(&self) -> usize {
        (self.degree + 1) * self.partitions
    }

    /// Total stacked dimension over all `k_count^2` ordered pairs.
    pub fn dim(&self) -> usize {
        self.k_count * self.k_count * self.n_pair()
    }

    /// Offset of the `(k, k')` block in a stacked coefficient vector.
    pub fn pair_offset(&self, k: usize, kp: usize) -> Result<usize> {
        if k >= self.k_count || kp >= self.k_count {
            return Err(Error::InvalidArgument(format!(
                "type pair ({k}, {kp}) out of range for {} types",
                self.k_count
            )));
        }
        Ok((k * self.k_count + kp) * self.n_pair())
    }

    /// Global index of local basis function `p` of pair `(k, k')`.
    pub fn stacked_index(&self, k: usize, kp: usize, p: usize) -> Result<usize> {
        if p >= self.n_pair() {
            return Err(Error::InvalidArgument(format!(
                "basis index {p} out of range for {} per-pair functions",
                self.n_pair()
            )));
        }
        Ok(self.pair_offset(k, kp)? + p)
    }

    /// Inverse of [`stacked_index`](Self::stacked_index).
    pub fn split_index(&self, j: usize) -> Result<(usize, usize, usize)> {
        if j >= self.dim() {
            return Err(Error::InvalidArgument(format!(
                "stacked index {j} out of range for dimension {}",
                self.dim()
            )));
        }
        let n_pair = self.n_pair();
        let pair = j / n_pair;
        Ok((pair / self.k_count, pair % self.k_count, j % n_pair))
    }

    /// Subinterval containing `r`, with the last subinterval closed at `hi`;
    /// `None` outside `[lo, hi]`.
    pub fn locate(&self, r: f64) -> Option<usize> {
        if r < self.lo || r > self.hi {
            return None;
        }
        let raw = ((r - self.lo) / (self.hi - self.lo) * self.partitions as f64).floor() as usize;
        Some(raw.min(self.partitions - 1))
    }

    /// Normalized offset of `r` within subinterval `j`, in `[0, 1]` when `r`
    /// lies inside it.
    pub fn local_offset(&self, j: usize, r: f64) -> f64 {
        (r - (self.lo + j as f64 * self.subinterval_width())) / self.subinterval_width()
    }

    /// Subinterval index and normalized offset for `r`, or `None` outside the
    /// interval. This is the hot-path primitive behind basis evaluation: the
    /// only nonzero basis values at `r` are `1` and (degree 1) the offset, on
    /// the returned subinterval.
    pub fn basis_at(&self, r: f64) -> Option<(usize, f64)> {
        let j = self.locate(r)?;
        Some((j, self.local_offset(j, r)))
    }

    /// Value of local basis function `p` of pair `(k, k')` at distance `r`.
    /// Zero outside the function's subinterval and outside `[lo, hi]`.
    pub fn eval_basis(&self, k: usize, kp: usize, p: usize, r: f64) -> Result<f64> {
        self.stacked_index(k, kp, p)?;
        let Some((j, u)) = self.basis_at(r) else {
            return Ok(0.0);
        };
        if p / (self.degree + 1) != j {
            return Ok(0.0);
        }
        Ok(if p % (self.degree + 1) == 0 { 1.0 } else { u })
    }

    /// Default smoothing grid step: the interval divided into
    /// [`DEFAULT_SMOOTHING_NODES`] pieces.
    pub fn default_grid_step(&self) -> f64 {
        (self.hi - self.lo) / DEFAULT_SMOOTHING_NODES as f64
    }
}

/// Per-pair basis-function count from the trajectory count `m`, the assumed
/// kernel regularity `s`, and an empirical multiplier `c`:
///
/// `n = max(1, round(c * (m / ln m)^(1/(2s+1))))`.
///
/// The exponent balances approximation bias against estimation variance for
/// `s`-smooth kernels, so the error of the least-squares estimator shrinks at
/// the optimal rate in `m`; `c` is tuned per system. For degree-`deg` pieces
/// the partition count follows as [`partitions_for`]`(n, deg)`.
pub fn choose_dimension(m: usize, s: usize, c: f64) -> Result<usize> {
    if m < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 trajectories to pick a dimension, got {m}"
        )));
    }
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "dimension multiplier must be positive and finite, got {c}"
        )));
    }
    let mf = m as f64;
    let n = (c * (mf / mf.ln()).powf(1.0 / (2 * s + 1) as f64)).round();
    Ok((n as usize).max(1))
}

/// Partition count that realizes (at least) `n` basis functions with
/// degree-`degree` pieces: `ceil(n / (degree + 1))`.
pub fn partitions_for(n: usize, degree: usize) -> usize {
    ((n + degree) / (degree + 1)).max(1)
}

/// A fitted coefficient vector over a hypothesis space, optionally carrying a
/// smoothed (piecewise-linear) version of each pair kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimator {
    space: HypothesisSpace,
    coeffs: Vec<f64>,
    smoothed: Option<Vec<Tabulated>>,
}

impl Estimator {
    pub fn new(space: HypothesisSpace, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != space.dim() {
            return Err(Error::ShapeMismatch {
                expected: space.dim(),
                got: coeffs.len(),
            });
        }
        Ok(Estimator {
            space,
            coeffs,
            smoothed: None,
        })
    }

    pub fn space(&self) -> &HypothesisSpace {
        &self.space
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// The coefficient block of pair `(k, k')`.
    pub fn pair_coeffs(&self, k: usize, kp: usize) -> Result<&[f64]> {
        let off = self.space.pair_offset(k, kp)?;
        Ok(&self.coeffs[off..off + self.space.n_pair()])
    }

    /// Raw piecewise-polynomial value of the `(k, k')` estimate at distance
    /// `r`; zero outside the hypothesis interval.
    pub fn eval_pair(&self, k: usize, kp: usize, r: f64) -> Result<f64> {
        let block = self.pair_coeffs(k, kp)?;
        let Some((j, u)) = self.space.basis_at(r) else {
            return Ok(0.0);
        };
        let base = j * (self.space.degree + 1);
        Ok(if self.space.degree == 0 {
            block[base]
        } else {
            block[base] + block[base + 1] * u
        })
    }

    /// The raw estimates as evaluable kernels, ordered `k * k_count + k'`.
    pub fn to_kernels(&self) -> Result<Vec<Kernel>> {
        let mut out = Vec::with_capacity(self.space.k_count * self.space.k_count);
        for k in 0..self.space.k_count {
            for kp in 0..self.space.k_count {
                let poly = PiecewisePoly::new(
                    self.space.lo,
                    self.space.hi,
                    self.space.degree,
                    self.space.partitions,
                    self.pair_coeffs(k, kp)?.to_vec(),
                )?;
                out.push(Kernel::Piecewise(poly));
            }
        }
        Ok(out)
    }

    pub fn smoothed(&self) -> Option<&[Tabulated]> {
        self.smoothed.as_deref()
    }

    /// The smoothed estimates as evaluable kernels, if smoothing has run.
    pub fn smoothed_kernels(&self) -> Option<Vec<Kernel>> {
        self.smoothed
            .as_ref()
            .map(|v| v.iter().cloned().map(Kernel::Tabulated).collect())
    }

    /// Attach smoothed versions of every pair kernel.
    pub fn with_smoothing(mut self, grid_step: f64, kind: SmoothingKind) -> Result<Self> {
        let smoothed = smooth_estimator_with(&self, grid_step, kind)?;
        self.smoothed = Some(smoothed);
        Ok(self)
    }

    /// Attach smoothed kernels with the default grid step and knot placement.
    pub fn with_default_smoothing(self) -> Result<Self> {
        let step = self.space.default_grid_step();
        self.with_smoothing(step, SmoothingKind::default())
    }

    /// Attach already-built smoothed tables (one per ordered pair), e.g.
    /// when reloading a stored estimator.
    pub fn with_smoothed_tables(mut self, tables: Vec<Tabulated>) -> Result<Self> {
        let expected = self.space.k_count * self.space.k_count;
        if tables.len() != expected {
            return Err(Error::ShapeMismatch {
                expected,
                got: tables.len(),
            });
        }
        self.smoothed = Some(tables);
        Ok(self)
    }
}

/// Where the smoothing interpolant places its knots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SmoothingKind {
    /// Knots at every subinterval midpoint plus the two interval endpoints.
    /// A discontinuous piecewise-constant estimate becomes the line chart of
    /// its per-subinterval values; jumps are spread over whole subintervals.
    #[default]
    MidpointKnots,
    /// Knots at every node of the output grid. Jumps survive as steep ramps
    /// one grid step wide.
    GridSampling,
}

/// Smooth every pair kernel of an estimator with the default knot placement
/// ([`SmoothingKind::MidpointKnots`]).
///
/// The result per pair is a piecewise-linear interpolant tabulated on a
/// uniform grid over the hypothesis interval with step at most `grid_step`;
/// evaluation outside the interval returns the boundary value. The output is
/// Lipschitz even when the raw estimator has jumps.
pub fn smooth_estimator(est: &Estimator, grid_step: f64) -> Result<Vec<Tabulated>> {
    smooth_estimator_with(est, grid_step, SmoothingKind::default())
}

/// Like [`smooth_estimator`] with an explicit knot placement.
pub fn smooth_estimator_with(
    est: &Estimator,
    grid_step: f64,
    kind: SmoothingKind,
) -> Result<Vec<Tabulated>> {
    if !(grid_step > 0.0) || !grid_step.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "smoothing grid step must be positive and finite, got {grid_step}"
        )));
    }
    if let Some(bad) = est.coeffs.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "cannot smooth an estimator with non-finite coefficient {bad}"
        )));
    }
    let space = est.space();
    let (lo, hi) = (space.lo(), space.hi());
    // Shrink the step if needed so the grid lands exactly on both endpoints.
    let n_steps = (((hi - lo) / grid_step).ceil() as usize).max(1);
    let step = (hi - lo) / n_steps as f64;
    let grid: Vec<f64> = (0..=n_steps).map(|i| lo + i as f64 * step).collect();

    let mut out = Vec::with_capacity(space.k_count() * space.k_count());
    for k in 0..space.k_count() {
        for kp in 0..space.k_count() {
            let values = match kind {
                SmoothingKind::MidpointKnots => {
                    let h = space.subinterval_width();
                    let mut knots = Vec::with_capacity(space.partitions() + 2);
                    knots.push(lo);
                    for j in 0..space.partitions() {
                        knots.push(lo + (j as f64 + 0.5) * h);
                    }
                    knots.push(hi);
                    let vals: Vec<f64> = knots
                        .iter()
                        .map(|&r| est.eval_pair(k, kp, r))
                        .collect::<Result<_>>()?;
                    let interp = Tabulated::new(knots, vals)?;
                    grid.iter().map(|&r| interp.eval(r)).collect()
                }
                SmoothingKind::GridSampling => grid
                    .iter()
                    .map(|&r| est.eval_pair(k, kp, r))
                    .collect::<Result<Vec<f64>>>()?,
            };
            out.push(Tabulated::new(grid.clone(), values)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::opinion_kernel;
    use std::f64::consts::PI;

    #[test]
    fn dimension_rule_produces_expected_counts_across_sample_sizes() {
        let n_const: Vec<usize> = (4..=13)
            .map(|e| choose_dimension(1usize << e, 1, 60.0).unwrap())
            .collect();
        assert_eq!(n_const, vec![108, 126, 149, 179, 215, 261, 317, 387, 474, 581]);
        assert_eq!(partitions_for(317, 0), 317);

        let n_lin: Vec<usize> = (4..=10)
            .map(|e| choose_dimension(1usize << e, 2, 100.0).unwrap())
            .collect();
        assert_eq!(n_lin, vec![142, 156, 173, 192, 215, 241, 272]);
        let parts: Vec<usize> = n_lin.iter().map(|&n| partitions_for(n, 1)).collect();
        assert_eq!(parts, vec![71, 78, 87, 96, 108, 121, 136]);

        let n_big: Vec<usize> = (4..=9)
            .map(|e| choose_dimension(1usize << e, 2, 300.0).unwrap())
            .collect();
        assert_eq!(n_big, vec![426, 468, 518, 577, 646, 724]);
        let parts: Vec<usize> = n_big.iter().map(|&n| partitions_for(n, 1)).collect();
        assert_eq!(parts, vec![213, 234, 259, 289, 323, 362]);
    }

    #[test]
    fn dimension_rule_floors_at_one_and_validates_inputs() {
        assert_eq!(choose_dimension(16, 1, 1e-6).unwrap(), 1);
        assert!(choose_dimension(1, 1, 60.0).is_err());
        assert!(choose_dimension(0, 1, 60.0).is_err());
        assert!(choose_dimension(16, 1, 0.0).is_err());
        assert!(choose_dimension(16, 1, -2.0).is_err());
    }

    #[test]
    fn basis_functions_are_local_indicators_and_offsets() {
        let space = HypothesisSpace::new(0.0, 4.0, 1, 0, 4).unwrap();
        assert_eq!(space.eval_basis(0, 0, 1, 1.5).unwrap(), 1.0);
        assert_eq!(space.eval_basis(0, 0, 1, 2.5).unwrap(), 0.0);
        assert_eq!(space.eval_basis(0, 0, 0, 5.0).unwrap(), 0.0);
        // Degree 0: the indicators partition the interval.
        for r in [0.0, 0.3, 1.0, 2.7, 4.0] {
            let total: f64 = (0..space.n_pair())
                .map(|p| space.eval_basis(0, 0, p, r).unwrap())
                .sum();
            assert_eq!(total, 1.0, "r = {r}");
        }

        let lin = HypothesisSpace::new(0.0, 1.0, 1, 1, 1).unwrap();
        assert_eq!(lin.eval_basis(0, 0, 0, 0.25).unwrap(), 1.0);
        assert_eq!(lin.eval_basis(0, 0, 1, 0.25).unwrap(), 0.25);
        assert_eq!(lin.eval_basis(0, 0, 1, 1.0).unwrap(), 1.0);
        assert!(lin.eval_basis(0, 0, 2, 0.5).is_err());
        assert!(lin.eval_basis(1, 0, 0, 0.5).is_err());
    }

    #[test]
    fn stacked_indices_round_trip() {
        let space = HypothesisSpace::new(0.0, 5.0, 3, 1, 5).unwrap();
        assert_eq!(space.dim(), 90);
        for j in 0..space.dim() {
            let (k, kp, p) = space.split_index(j).unwrap();
            assert_eq!(space.stacked_index(k, kp, p).unwrap(), j);
        }
        assert_eq!(space.stacked_index(1, 2, 3).unwrap(), (3 + 2) * 10 + 3);
        assert!(space.stacked_index(3, 0, 0).is_err());
        assert!(space.stacked_index(0, 0, 10).is_err());
        assert!(space.split_index(90).is_err());
    }

    #[test]
    fn estimator_evaluates_stacked_pairs_independently() {
        let space = HypothesisSpace::new(0.0, 1.0, 2, 0, 2).unwrap();
        let est = Estimator::new(space, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap();
        assert_eq!(est.eval_pair(0, 0, 0.25).unwrap(), 1.0);
        assert_eq!(est.eval_pair(0, 1, 0.75).unwrap(), 4.0);
        assert_eq!(est.eval_pair(1, 0, 0.5).unwrap(), 6.0);
        assert_eq!(est.eval_pair(1, 1, 1.0).unwrap(), 8.0);
        assert_eq!(est.eval_pair(1, 1, 1.5).unwrap(), 0.0);
        let kernels = est.to_kernels().unwrap();
        assert_eq!(kernels.len(), 4);
        assert_eq!(kernels[2].eval(0.5), 6.0);
        assert_eq!(kernels[3].eval(2.0), 0.0);

        let space = HypothesisSpace::new(0.0, 1.0, 2, 0, 2).unwrap();
        assert!(Estimator::new(space, vec![0.0; 7]).is_err());
    }

    #[test]
    fn smoothing_reproduces_an_already_linear_estimator() {
        // Four degree-1 pieces of [0, 2] all lying on the line 2 - r.
        let space = HypothesisSpace::new(0.0, 2.0, 1, 1, 4).unwrap();
        let coeffs = vec![2.0, -0.5, 1.5, -0.5, 1.0, -0.5, 0.5, -0.5];
        let est = Estimator::new(space, coeffs).unwrap();
        let smoothed = smooth_estimator(&est, 0.01).unwrap();
        for i in 0..=200 {
            let r = i as f64 * 0.01;
            assert!((smoothed[0].eval(r) - (2.0 - r)).abs() <= 1e-12, "r = {r}");
        }
    }

    #[test]
    fn smoothing_turns_jumps_into_ramps() {
        // Piecewise-constant with a unit jump at r = 1.
        let space = HypothesisSpace::new(0.0, 2.0, 1, 0, 2).unwrap();
        let est = Estimator::new(space, vec![1.0, 0.0]).unwrap();
        let step = est.space().default_grid_step();

        let smoothed = smooth_estimator(&est, step).unwrap();
        let max_adjacent = max_adjacent_jump(&smoothed[0], 0.0, 2.0, step);
        assert!(max_adjacent <= 1.1 * step, "midpoint knots: {max_adjacent}");
        assert!((smoothed[0].eval(1.0) - 0.5).abs() <= 1e-9);

        let sampled = smooth_estimator_with(&est, step, SmoothingKind::GridSampling).unwrap();
        let max_adjacent = max_adjacent_jump(&sampled[0], 0.0, 2.0, step);
        assert!(max_adjacent >= 0.9, "grid sampling keeps the ramp steep");
        assert!(max_adjacent <= 1.0 + 1e-12);
    }

    fn max_adjacent_jump(t: &Tabulated, lo: f64, hi: f64, step: f64) -> f64 {
        let n = ((hi - lo) / step).round() as usize;
        (0..n)
            .map(|i| {
                let a = t.eval(lo + i as f64 * step);
                let b = t.eval(lo + (i + 1) as f64 * step);
                (b - a).abs()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn smoothing_extrapolates_constantly_where_raw_vanishes() {
        // Line 1 + r on [0, 2]: raw drops to zero outside the interval, the
        // smoothed version holds the boundary value.
        let space = HypothesisSpace::new(0.0, 2.0, 1, 1, 2).unwrap();
        let est = Estimator::new(space, vec![1.0, 1.0, 2.0, 1.0]).unwrap();
        let est = est.with_default_smoothing().unwrap();
        let smoothed = est.smoothed().unwrap();
        assert!((smoothed[0].eval(3.0) - 3.0).abs() <= 1e-12);
        assert!((smoothed[0].eval(-1.0) - 1.0).abs() <= 1e-12);
        assert_eq!(est.to_kernels().unwrap()[0].eval(3.0), 0.0);
        let kernels = est.smoothed_kernels().unwrap();
        assert!((kernels[0].eval(3.0) - 3.0).abs() <= 1e-12);
    }

    #[test]
    fn smoothing_rejects_bad_steps_and_non_finite_coefficients() {
        let space = HypothesisSpace::new(0.0, 1.0, 1, 0, 2).unwrap();
        let est = Estimator::new(space.clone(), vec![1.0, 2.0]).unwrap();
        assert!(smooth_estimator(&est, 0.0).is_err());
        assert!(smooth_estimator(&est, -0.5).is_err());
        let bad = Estimator::new(space, vec![1.0, f64::NAN]).unwrap();
        assert!(smooth_estimator(&bad, 0.01).is_err());
    }

    #[test]
    fn piecewise_constant_spaces_approximate_lipschitz_kernels() {
        // Sampling a kernel with Lipschitz constant 5*pi at subinterval
        // midpoints gives a member of the degree-0 space within
        // 5*pi*(width/partitions) of it in sup norm.
        let r_max = 2.0;
        let lip = 5.0 * PI;
        for parts in [10usize, 100, 1000] {
            let space = HypothesisSpace::new(0.0, r_max, 1, 0, parts).unwrap();
            let h = space.subinterval_width();
            let coeffs: Vec<f64> = (0..parts)
                .map(|j| opinion_kernel((j as f64 + 0.5) * h))
                .collect();
            let est = Estimator::new(space, coeffs).unwrap();
            let mut sup = 0.0f64;
            for i in 0..=20_000 {
                let r = r_max * i as f64 / 20_000.0;
                sup = sup.max((est.eval_pair(0, 0, r).unwrap() - opinion_kernel(r)).abs());
            }
            assert!(sup <= lip * h, "partitions = {parts}: sup error {sup}");
            assert!(sup > 0.0);
        }
    }

    #[test]
    fn default_grid_step_divides_the_interval() {
        let space = HypothesisSpace::new(0.0, 10.0, 1, 0, 4).unwrap();
        assert_eq!(space.default_grid_step(), 10.0 / 2000.0);
    }
}
