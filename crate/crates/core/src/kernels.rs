//! Interaction kernels and initial-condition samplers.
//!
//! Three closed-form kernel families cover the benchmark systems: a
//! compactly supported piecewise-trigonometric opinion kernel, power-law
//! kernels `c0 + c1 r^e` with an exponential cap near the origin, and
//! Lennard-Jones-type force kernels `Φ'(r)/r` capped by `a·exp(-b r^12)`.
//! The caps exist because the power-law and Lennard-Jones forms blow up as
//! `r → 0`; each cap is the unique exponential of its family matching the
//! base kernel's value and derivative at the truncation radius, so the
//! composite kernel is C¹ and bounded on `[0, ∞)`.
//!
//! Kernels are described declaratively by [`KernelSpec`] (what appears in a
//! configuration file) and evaluated through [`Kernel`] (cap parameters
//! precomputed). Initial conditions are drawn by [`InitialSampler`], which
//! takes the caller's RNG so that parallel callers can hand each unit of
//! work its own stream.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Declarative kernel description used in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelSpec {
    /// The piecewise opinion kernel; no parameters.
    Opinion,
    /// `c0 + c1 r^exp` for `r > r_trunc`, exponential cap below.
    Power {
        c0: f64,
        c1: f64,
        exp: f64,
        r_trunc: f64,
    },
    /// Lennard-Jones-type force kernel `Φ'(r)/r` for `r > r_trunc`,
    /// `a exp(-b r^12)` cap below.
    Lj {
        p: f64,
        q: f64,
        eps: f64,
        r_m: f64,
        r_trunc: f64,
    },
    /// The zero kernel (absent interaction that a learner must discover).
    Zero,
    /// Piecewise-linear interpolant of `(knots, values)`, constant outside
    /// the knot range. Used to round-trip learned estimators.
    Tabulated { knots: Vec<f64>, values: Vec<f64> },
    /// Piecewise polynomial on a uniform partition, zero outside its
    /// interval: the raw form of a learned estimator.
    Piecewise {
        lo: f64,
        hi: f64,
        degree: usize,
        partitions: usize,
        coeffs: Vec<f64>,
    },
}

impl KernelSpec {
    /// Compile the description into an evaluable kernel.
    pub fn build(&self) -> Result<Kernel> {
        match *self {
            KernelSpec::Opinion => Ok(Kernel::Opinion),
            KernelSpec::Power {
                c0,
                c1,
                exp,
                r_trunc,
            } => Ok(Kernel::Truncated(make_truncated_power_kernel(
                c0, c1, exp, r_trunc,
            )?)),
            KernelSpec::Lj {
                p,
                q,
                eps,
                r_m,
                r_trunc,
            } => Ok(Kernel::Truncated(make_lj_kernel(p, q, eps, r_m, r_trunc)?)),
            KernelSpec::Zero => Ok(Kernel::Zero),
            KernelSpec::Tabulated {
                ref knots,
                ref values,
            } => Ok(Kernel::Tabulated(Tabulated::new(
                knots.clone(),
                values.clone(),
            )?)),
            KernelSpec::Piecewise {
                lo,
                hi,
                degree,
                partitions,
                ref coeffs,
            } => Ok(Kernel::Piecewise(PiecewisePoly::new(
                lo,
                hi,
                degree,
                partitions,
                coeffs.clone(),
            )?)),
        }
    }
}

/// Closed-form kernel on `(r_trunc, ∞)`, behind a C¹ exponential cap.
#[derive(Debug, Clone, PartialEq)]
pub enum BaseKernel {
    /// `c0 + c1 r^exp`.
    Power { c0: f64, c1: f64, exp: f64 },
    /// `Φ'(r)/r` for the `(p, q)` Lennard-Jones-type potential with well
    /// depth `eps` and minimum at `r_m`.
    LjForce { p: f64, q: f64, eps: f64, r_m: f64 },
}

impl BaseKernel {
    pub fn eval(&self, r: f64) -> f64 {
        match *self {
            BaseKernel::Power { c0, c1, exp } => c0 + c1 * r.powf(exp),
            BaseKernel::LjForce { p, q, eps, r_m } => {
                let c = p * q * eps / (p - q);
                c * (r_m.powf(q) * r.powf(-q - 2.0) - r_m.powf(p) * r.powf(-p - 2.0))
            }
        }
    }

    pub fn deriv(&self, r: f64) -> f64 {
        match *self {
            BaseKernel::Power { c1, exp, .. } => c1 * exp * r.powf(exp - 1.0),
            BaseKernel::LjForce { p, q, eps, r_m } => {
                let c = p * q * eps / (p - q);
                c * ((p + 2.0) * r_m.powf(p) * r.powf(-p - 3.0)
                    - (q + 2.0) * r_m.powf(q) * r.powf(-q - 3.0))
            }
        }
    }
}

/// The `(p, q)` Lennard-Jones-type potential whose force kernel is
/// `BaseKernel::LjForce`: `Φ(r) = pε/(p−q) · [(q/p)(r_m/r)^p − (r_m/r)^q]`.
/// `Φ` has its minimum `Φ(r_m) = −eps` at `r_m`.
pub fn lj_potential(p: f64, q: f64, eps: f64, r_m: f64, r: f64) -> f64 {
    p * eps / (p - q) * ((q / p) * (r_m / r).powf(p) - (r_m / r).powf(q))
}

/// A base kernel continued below its truncation radius by the exponential
/// cap `a·exp(−b·r^cap_power)` that matches value and slope at `r_trunc`.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedKernel {
    pub base: BaseKernel,
    pub r_trunc: f64,
    pub a: f64,
    pub b: f64,
    pub cap_power: i32,
}

impl TruncatedKernel {
    pub fn eval(&self, r: f64) -> f64 {
        if r > self.r_trunc {
            self.base.eval(r)
        } else {
            self.a * (-self.b * r.powi(self.cap_power)).exp()
        }
    }
}

/// Cap `c0 + c1 r^exp` below `r_trunc` by `a·e^{−br}`. The C¹ match gives
/// `b = −base'(r_t)/base(r_t)` and `a = base(r_t)·e^{b·r_t}`; it fails when
/// the base kernel vanishes at the truncation radius.
pub fn make_truncated_power_kernel(
    c0: f64,
    c1: f64,
    exp: f64,
    r_trunc: f64,
) -> Result<TruncatedKernel> {
    let base = BaseKernel::Power { c0, c1, exp };
    truncate(base, r_trunc, 1)
}

/// Cap the `(p, q)` Lennard-Jones force kernel below `r_trunc` by
/// `a·e^{−b r^{12}}`; the C¹ match gives `b = −φ'(r_t)/(12 r_t^{11} φ(r_t))`
/// and `a = φ(r_t)·e^{b·r_t^{12}}`.
pub fn make_lj_kernel(p: f64, q: f64, eps: f64, r_m: f64, r_trunc: f64) -> Result<TruncatedKernel> {
    if !(p > q && q > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "lennard-jones exponents must satisfy p > q > 0, got p={p}, q={q}"
        )));
    }
    if eps <= 0.0 || r_m <= r_trunc || r_trunc <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "lennard-jones parameters must satisfy eps > 0 and r_m > r_trunc > 0, \
             got eps={eps}, r_m={r_m}, r_trunc={r_trunc}"
        )));
    }
    let base = BaseKernel::LjForce { p, q, eps, r_m };
    truncate(base, r_trunc, 12)
}

fn truncate(base: BaseKernel, r_trunc: f64, cap_power: i32) -> Result<TruncatedKernel> {
    let v = base.eval(r_trunc);
    let dv = base.deriv(r_trunc);
    if !v.is_finite() || !dv.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "kernel not finite at truncation radius {r_trunc}"
        )));
    }
    if v == 0.0 {
        return Err(Error::InvalidArgument(format!(
            "kernel vanishes at truncation radius {r_trunc}; cap is singular"
        )));
    }
    // cap(r) = a e^{−b r^p} has cap' = −p b r^{p−1} cap, so matching value
    // and slope at r_trunc determines (a, b) uniquely.
    let p = f64::from(cap_power);
    let b = -dv / (p * r_trunc.powi(cap_power - 1) * v);
    let a = v * (b * r_trunc.powi(cap_power)).exp();
    Ok(TruncatedKernel {
        base,
        r_trunc,
        a,
        b,
        cap_power,
    })
}

/// Piecewise-linear interpolant with constant extrapolation.
#[derive(Debug, Clone, PartialEq)]
pub struct Tabulated {
    knots: Vec<f64>,
    values: Vec<f64>,
}

impl Tabulated {
    pub fn new(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if knots.len() != values.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} knots vs {} values",
                knots.len(),
                values.len()
            )));
        }
        if knots.len() < 2 {
            return Err(Error::InvalidArgument(
                "tabulated kernel needs at least two knots".into(),
            ));
        }
        if knots.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument(
                "tabulated kernel knots must be strictly increasing".into(),
            ));
        }
        Ok(Tabulated { knots, values })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn eval(&self, r: f64) -> f64 {
        let n = self.knots.len();
        if r.is_nan() {
            return f64::NAN;
        }
        if r <= self.knots[0] {
            return self.values[0];
        }
        if r >= self.knots[n - 1] {
            return self.values[n - 1];
        }
        // partition_point: first knot strictly above r, so r lives in
        // [knots[hi-1], knots[hi]).
        let hi = self.knots.partition_point(|&k| k <= r);
        let (lo, hi) = (hi - 1, hi);
        let t = (r - self.knots[lo]) / (self.knots[hi] - self.knots[lo]);
        self.values[lo] + t * (self.values[hi] - self.values[lo])
    }
}

/// Piecewise polynomial (degree 0 or 1) on a uniform partition of
/// `[lo, hi]`, evaluating to zero outside the interval. Within subinterval
/// `j`, the local basis is `{1, (r - r_j)/h}` and `coeffs` stores the local
/// coefficients consecutively: `coeffs[j·(degree+1) + q]`.
///
/// No continuity is imposed across subintervals; this is exactly the shape
/// of a least-squares estimator over an independent-pieces basis.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewisePoly {
    lo: f64,
    hi: f64,
    degree: usize,
    partitions: usize,
    coeffs: Vec<f64>,
}

impl PiecewisePoly {
    pub fn new(
        lo: f64,
        hi: f64,
        degree: usize,
        partitions: usize,
        coeffs: Vec<f64>,
    ) -> Result<Self> {
        if !(hi > lo) {
            return Err(Error::InvalidArgument(format!(
                "empty interval [{lo}, {hi}]"
            )));
        }
        if degree > 1 {
            return Err(Error::InvalidArgument(format!(
                "only degrees 0 and 1 are supported, got {degree}"
            )));
        }
        if partitions == 0 {
            return Err(Error::InvalidArgument("need at least one subinterval".into()));
        }
        let expected = (degree + 1) * partitions;
        if coeffs.len() != expected {
            return Err(Error::ShapeMismatch {
                expected,
                got: coeffs.len(),
            });
        }
        Ok(PiecewisePoly {
            lo,
            hi,
            degree,
            partitions,
            coeffs,
        })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn partitions(&self) -> usize {
        self.partitions
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Subinterval containing `r`: `floor((r-lo)/(hi-lo)·P)` with the last
    /// subinterval closed at `hi`. `None` outside `[lo, hi]`.
    pub fn locate(&self, r: f64) -> Option<usize> {
        if r < self.lo || r > self.hi {
            return None;
        }
        let raw = ((r - self.lo) / (self.hi - self.lo) * self.partitions as f64).floor() as usize;
        Some(raw.min(self.partitions - 1))
    }

    /// Normalized offset of `r` within subinterval `j`.
    pub fn local_offset(&self, j: usize, r: f64) -> f64 {
        let h = (self.hi - self.lo) / self.partitions as f64;
        (r - (self.lo + j as f64 * h)) / h
    }

    pub fn eval(&self, r: f64) -> f64 {
        match self.locate(r) {
            None => 0.0,
            Some(j) => {
                let base = j * (self.degree + 1);
                if self.degree == 0 {
                    self.coeffs[base]
                } else {
                    self.coeffs[base] + self.coeffs[base + 1] * self.local_offset(j, r)
                }
            }
        }
    }
}

/// An evaluable interaction kernel.
#[derive(Debug, Clone, PartialEq)]
pub enum Kernel {
    Opinion,
    Truncated(TruncatedKernel),
    Zero,
    Tabulated(Tabulated),
    Piecewise(PiecewisePoly),
}

impl Kernel {
    pub fn eval(&self, r: f64) -> f64 {
        match self {
            Kernel::Opinion => opinion_kernel(r),
            Kernel::Truncated(t) => t.eval(r),
            Kernel::Zero => 0.0,
            Kernel::Tabulated(t) => t.eval(r),
            Kernel::Piecewise(p) => p.eval(r),
        }
    }
}

/// Heterophilious opinion kernel: distant opinions pull harder than close
/// ones. Piecewise constant at levels 0.4, 1, and 0 with two cosine ramps;
/// compactly supported on [0, 1.05], Lipschitz with constant 5π.
///
/// Panics if `r` is negative: pairwise distances never are.
pub fn opinion_kernel(r: f64) -> f64 {
    assert!(r >= 0.0, "distance must be non-negative, got {r}");
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let pi10 = 10.0 * std::f64::consts::PI;
    if r < s - 0.05 {
        0.4
    } else if r < s + 0.05 {
        -0.3 * (pi10 * (r - s + 0.05)).cos() + 0.7
    } else if r < 0.95 {
        1.0
    } else if r < 1.05 {
        0.5 * (pi10 * (r - 0.95)).cos() + 0.5
    } else {
        0.0
    }
}

/// Per-type initial-condition law for agent positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialSampler {
    /// Each coordinate i.i.d. uniform on `[lo, hi]`.
    UniformInterval { lo: f64, hi: f64 },
    /// Uniform in area over the disk of the given radius (d = 2).
    UniformDisk { radius: f64 },
    /// Uniform in area over the annulus `r_in ≤ |x| ≤ r_out` (d = 2).
    UniformAnnulus { r_in: f64, r_out: f64 },
    /// Each coordinate i.i.d. standard normal.
    StandardGaussian,
    /// `x_i = z_0 + √λ z_i` with `z_0, z_i` i.i.d. standard normal vectors;
    /// `z_0` is shared by all agents drawn in the same call, which makes the
    /// agents exchangeable with `cov(x_i) − cov(x_i, x_j) = λ I`.
    ExchangeableGaussian { lambda: f64 },
}

impl InitialSampler {
    pub fn validate(&self, d: usize) -> Result<()> {
        match *self {
            InitialSampler::UniformInterval { lo, hi } => {
                if lo >= hi {
                    return Err(Error::InvalidConfig(format!(
                        "uniform interval [{lo}, {hi}] is empty"
                    )));
                }
            }
            InitialSampler::UniformDisk { radius } => {
                if d != 2 {
                    return Err(Error::InvalidConfig(format!(
                        "disk sampler requires d = 2, got d = {d}"
                    )));
                }
                if radius <= 0.0 {
                    return Err(Error::InvalidConfig(format!("disk radius {radius} <= 0")));
                }
            }
            InitialSampler::UniformAnnulus { r_in, r_out } => {
                if d != 2 {
                    return Err(Error::InvalidConfig(format!(
                        "annulus sampler requires d = 2, got d = {d}"
                    )));
                }
                if !(0.0 <= r_in && r_in < r_out) {
                    return Err(Error::InvalidConfig(format!(
                        "annulus radii [{r_in}, {r_out}] out of order"
                    )));
                }
            }
            InitialSampler::StandardGaussian => {}
            InitialSampler::ExchangeableGaussian { lambda } => {
                if lambda <= 0.0 {
                    return Err(Error::InvalidConfig(format!(
                        "exchangeable-gaussian lambda {lambda} <= 0"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Draw one agent position into `out` (length d). `shared` is the
    /// common `z_0` used by the exchangeable-Gaussian law, `None` otherwise.
    fn sample_agent<R: Rng>(&self, out: &mut [f64], shared: Option<&[f64]>, rng: &mut R) {
        match *self {
            InitialSampler::UniformInterval { lo, hi } => {
                for x in out.iter_mut() {
                    *x = rng.random_range(lo..=hi);
                }
            }
            InitialSampler::UniformDisk { radius } => {
                sample_annulus(out, 0.0, radius, rng);
            }
            InitialSampler::UniformAnnulus { r_in, r_out } => {
                sample_annulus(out, r_in, r_out, rng);
            }
            InitialSampler::StandardGaussian => {
                for x in out.iter_mut() {
                    *x = rng.sample(StandardNormal);
                }
            }
            InitialSampler::ExchangeableGaussian { lambda } => {
                let z0 = shared.expect("exchangeable-gaussian needs a shared offset");
                for (x, &z) in out.iter_mut().zip(z0) {
                    let zi: f64 = rng.sample(StandardNormal);
                    *x = z + lambda.sqrt() * zi;
                }
            }
        }
    }
}

/// Uniform-in-area point of the annulus `r_in ≤ |x| ≤ r_out`: the radial
/// CDF is `(ρ² − r_in²)/(r_out² − r_in²)`, inverted by a √ of a uniform.
fn sample_annulus<R: Rng>(out: &mut [f64], r_in: f64, r_out: f64, rng: &mut R) {
    let u: f64 = rng.random();
    let rho = (r_in * r_in + u * (r_out * r_out - r_in * r_in)).sqrt();
    let theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    out[0] = rho * theta.cos();
    out[1] = rho * theta.sin();
}

/// Draw initial positions for all `N` agents into a flat `[i][c]` buffer of
/// length `N·d`. `samplers` has one entry per type and `type_of[i]` is the
/// type of agent `i`. A single shared Gaussian offset per call backs every
/// exchangeable-Gaussian type.
pub fn sample_initial<R: Rng>(
    samplers: &[InitialSampler],
    type_of: &[usize],
    d: usize,
    rng: &mut R,
    out: &mut [f64],
) -> Result<()> {
    if out.len() != type_of.len() * d {
        return Err(Error::ShapeMismatch {
            expected: type_of.len() * d,
            got: out.len(),
        });
    }
    for s in samplers {
        s.validate(d)?;
    }
    let needs_shared = samplers
        .iter()
        .any(|s| matches!(s, InitialSampler::ExchangeableGaussian { .. }));
    let shared: Option<Vec<f64>> = needs_shared.then(|| {
        (0..d)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect()
    });
    for (i, &k) in type_of.iter().enumerate() {
        let sampler = samplers.get(k).ok_or_else(|| {
            Error::InvalidConfig(format!("agent {i} has type {k} but only {} samplers", samplers.len()))
        })?;
        sampler.sample_agent(&mut out[i * d..(i + 1) * d], shared.as_deref(), rng);
    }
    Ok(())
}
