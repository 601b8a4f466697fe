//! Adaptive Dormand-Prince 5(4) integration with dense output.
//!
//! The systems integrated here are autonomous ODEs `dy/dt = f(y)` whose
//! right-hand side is moderately expensive (a sum over agent pairs), so the
//! integrator evaluates `f` as few times as possible: an embedded
//! fourth-order error estimate controls the step size, the first stage is
//! reused from the last stage of the previous step (FSAL), and solution
//! values at the caller's output times are produced by the method's own
//! fourth-order-accurate dense interpolant instead of by forcing steps onto
//! the output grid.

use crate::error::{Error, Result};

// Butcher tableau of the Dormand-Prince 5(4) pair.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

// Difference between the 5th- and the embedded 4th-order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

// Weights of the dense-output correction term.
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

// Step-size controller.
const SAFE: f64 = 0.9;
const EXPO1: f64 = 1.0 / 5.0;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;

/// Integration tolerances and limits.
#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    /// Relative tolerance of the local error control.
    pub rtol: f64,
    /// Absolute tolerance of the local error control.
    pub atol: f64,
    /// Abort after this many accepted or rejected steps.
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions {
            rtol: 1e-5,
            atol: 1e-6,
            max_steps: 100_000,
        }
    }
}

/// Dense-output coefficients of one accepted step.
struct DenseSegment {
    t0: f64,
    h: f64,
    cont: [Vec<f64>; 5],
}

impl DenseSegment {
    /// Evaluate the quartic interpolant at `t` within the segment.
    fn eval_into(&self, t: f64, out: &mut [f64]) {
        let s = (t - self.t0) / self.h;
        let s1 = 1.0 - s;
        for (j, y) in out.iter_mut().enumerate() {
            let c = &self.cont;
            *y = c[0][j] + s * (c[1][j] + s1 * (c[2][j] + s * (c[3][j] + s1 * c[4][j])));
        }
    }
}

/// Integrate `dy/dt = f(y)` from `times[0]`, returning the solution at each
/// requested time. `times` must be strictly increasing; the first entry is
/// the initial time and the returned row for it is `y0` itself.
///
/// `f(y, dydt)` writes the derivative of `y` into `dydt`. Errors returned by
/// `f` abort the integration, as do non-finite derivative values and failure
/// of the step-size control to advance.
pub fn integrate<F>(mut f: F, y0: &[f64], times: &[f64], opts: &OdeOptions) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<()>,
{
    if times.is_empty() {
        return Err(Error::InvalidArgument("no output times".into()));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument(
            "output times must be strictly increasing".into(),
        ));
    }
    let n = y0.len();
    let t_end = *times.last().unwrap();
    let mut output = Vec::with_capacity(times.len());
    output.push(y0.to_vec());
    if times.len() == 1 {
        return Ok(output);
    }
    let mut next_out = 1;

    let mut t = times[0];
    let mut y = y0.to_vec();
    let mut k: [Vec<f64>; 7] = std::array::from_fn(|_| vec![0.0; n]);
    let mut y_stage = vec![0.0; n];
    let mut y_new = vec![0.0; n];

    f(&y, &mut k[0])?;
    check_finite(t, &k[0])?;
    let mut h = initial_step(&mut f, t, &y, &k[0], t_end, opts)?;

    let mut steps = 0usize;
    let mut rejected_last = false;
    while t < t_end {
        steps += 1;
        if steps > opts.max_steps {
            return Err(Error::Integration {
                t,
                reason: format!("step limit {} exceeded", opts.max_steps),
            });
        }
        if t + h > t_end {
            h = t_end - t;
        }
        if h <= f64::EPSILON * t.abs().max(1.0) {
            return Err(Error::Integration {
                t,
                reason: "step size underflow".into(),
            });
        }

        // Stages 2..7. Stage 1 is k[0], either fresh or carried over (FSAL).
        for j in 0..n {
            y_stage[j] = y[j] + h * A21 * k[0][j];
        }
        f(&y_stage, &mut k[1])?;
        for j in 0..n {
            y_stage[j] = y[j] + h * (A31 * k[0][j] + A32 * k[1][j]);
        }
        f(&y_stage, &mut k[2])?;
        for j in 0..n {
            y_stage[j] = y[j] + h * (A41 * k[0][j] + A42 * k[1][j] + A43 * k[2][j]);
        }
        f(&y_stage, &mut k[3])?;
        for j in 0..n {
            y_stage[j] =
                y[j] + h * (A51 * k[0][j] + A52 * k[1][j] + A53 * k[2][j] + A54 * k[3][j]);
        }
        f(&y_stage, &mut k[4])?;
        for j in 0..n {
            y_stage[j] = y[j]
                + h * (A61 * k[0][j]
                    + A62 * k[1][j]
                    + A63 * k[2][j]
                    + A64 * k[3][j]
                    + A65 * k[4][j]);
        }
        f(&y_stage, &mut k[5])?;
        for j in 0..n {
            y_new[j] = y[j]
                + h * (A71 * k[0][j]
                    + A73 * k[2][j]
                    + A74 * k[3][j]
                    + A75 * k[4][j]
                    + A76 * k[5][j]);
        }
        f(&y_new, &mut k[6])?;
        let _ = (C2, C3, C4, C5); // quadrature nodes, unused for autonomous f

        // Scaled RMS norm of the embedded error estimate.
        let mut err_sq = 0.0;
        for j in 0..n {
            let e = h
                * (E1 * k[0][j]
                    + E3 * k[2][j]
                    + E4 * k[3][j]
                    + E5 * k[4][j]
                    + E6 * k[5][j]
                    + E7 * k[6][j]);
            let scale = opts.atol + opts.rtol * y[j].abs().max(y_new[j].abs());
            err_sq += (e / scale) * (e / scale);
        }
        let err = (err_sq / n as f64).sqrt();
        if !err.is_finite() {
            return Err(Error::Integration {
                t,
                reason: "non-finite state during step".into(),
            });
        }

        if err <= 1.0 {
            // Accept: build the dense interpolant and emit pending outputs.
            let seg = {
                let mut cont: [Vec<f64>; 5] = std::array::from_fn(|_| vec![0.0; n]);
                for j in 0..n {
                    let ydiff = y_new[j] - y[j];
                    let bspl = h * k[0][j] - ydiff;
                    cont[0][j] = y[j];
                    cont[1][j] = ydiff;
                    cont[2][j] = bspl;
                    cont[3][j] = ydiff - h * k[6][j] - bspl;
                    cont[4][j] = h
                        * (D1 * k[0][j]
                            + D3 * k[2][j]
                            + D4 * k[3][j]
                            + D5 * k[4][j]
                            + D6 * k[5][j]
                            + D7 * k[6][j]);
                }
                DenseSegment { t0: t, h, cont }
            };
            let t_new = t + h;
            while next_out < times.len() && times[next_out] <= t_new + 1e-12 * t_new.abs().max(1.0)
            {
                let mut row = vec![0.0; n];
                seg.eval_into(times[next_out].min(t_new), &mut row);
                output.push(row);
                next_out += 1;
            }

            t = t_new;
            std::mem::swap(&mut y, &mut y_new);
            k.swap(0, 6);
            check_finite(t, &y)?;

            let fac = (SAFE * err.powf(-EXPO1)).clamp(FAC_MIN, FAC_MAX);
            h *= if rejected_last { fac.min(1.0) } else { fac };
            rejected_last = false;
        } else {
            h *= (SAFE * err.powf(-EXPO1)).clamp(FAC_MIN, 1.0);
            rejected_last = true;
        }
    }

    debug_assert_eq!(next_out, times.len());
    Ok(output)
}

fn check_finite(t: f64, y: &[f64]) -> Result<()> {
    if y.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Integration {
            t,
            reason: "state is not finite".into(),
        })
    }
}

/// Starting step size from the scaled magnitudes of `y`, `f(y)`, and an
/// Euler probe of the second derivative.
fn initial_step<F>(
    f: &mut F,
    t0: f64,
    y0: &[f64],
    f0: &[f64],
    t_end: f64,
    opts: &OdeOptions,
) -> Result<f64>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<()>,
{
    let n = y0.len();
    let span = t_end - t0;
    let scale =
        |yj: f64| -> f64 { opts.atol + opts.rtol * yj.abs() };
    let mut d0 = 0.0;
    let mut d1 = 0.0;
    for j in 0..n {
        d0 += (y0[j] / scale(y0[j])).powi(2);
        d1 += (f0[j] / scale(y0[j])).powi(2);
    }
    d0 = (d0 / n as f64).sqrt();
    d1 = (d1 / n as f64).sqrt();
    let h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    }
    .min(span);

    let y1: Vec<f64> = (0..n).map(|j| y0[j] + h0 * f0[j]).collect();
    let mut f1 = vec![0.0; n];
    f(&y1, &mut f1)?;
    let mut d2 = 0.0;
    for j in 0..n {
        d2 += ((f1[j] - f0[j]) / scale(y0[j])).powi(2);
    }
    d2 = (d2 / n as f64).sqrt() / h0;

    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(EXPO1)
    };
    Ok(h1.min(100.0 * h0).min(span))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn options() -> OdeOptions {
        OdeOptions::default()
    }

    #[test]
    fn exponential_decay_matches_closed_form() {
        let times: Vec<f64> = (0..=10).map(|i| i as f64 * 0.5).collect();
        let sol = integrate(
            |y, dy| {
                dy[0] = -y[0];
                Ok(())
            },
            &[1.0],
            &times,
            &options(),
        )
        .unwrap();
        for (t, row) in times.iter().zip(&sol) {
            assert!(
                (row[0] - (-t).exp()).abs() < 1e-5,
                "t={t}: {} vs {}",
                row[0],
                (-t).exp()
            );
        }
    }

    #[test]
    fn harmonic_oscillator_closes_orbit() {
        let tau = std::f64::consts::TAU;
        let times = [0.0, tau / 3.0, tau];
        let sol = integrate(
            |y, dy| {
                dy[0] = y[1];
                dy[1] = -y[0];
                Ok(())
            },
            &[1.0, 0.0],
            &times,
            &options(),
        )
        .unwrap();
        assert!((sol[2][0] - 1.0).abs() < 1e-4);
        assert!(sol[2][1].abs() < 1e-4);
        // Interior dense-output point, compared against the exact orbit.
        assert!((sol[1][0] - (tau / 3.0).cos()).abs() < 1e-4);
        assert!((sol[1][1] + (tau / 3.0).sin()).abs() < 1e-4);
    }

    #[test]
    fn dense_output_tracks_many_intermediate_times() {
        // y(t) = tanh(t) solves y' = 1 - y^2; sample far more finely than
        // the accepted steps so most outputs come from the interpolant.
        let times: Vec<f64> = (0..=400).map(|i| i as f64 * 0.005).collect();
        let sol = integrate(
            |y, dy| {
                dy[0] = 1.0 - y[0] * y[0];
                Ok(())
            },
            &[0.0],
            &times,
            &options(),
        )
        .unwrap();
        for (t, row) in times.iter().zip(&sol) {
            assert!((row[0] - t.tanh()).abs() < 1e-5, "t={t}");
        }
    }

    #[test]
    fn stiff_decay_is_stable_and_accurate() {
        let times = [0.0, 0.5, 1.0];
        let sol = integrate(
            |y, dy| {
                dy[0] = -50.0 * y[0];
                Ok(())
            },
            &[1.0],
            &times,
            &options(),
        )
        .unwrap();
        for (t, row) in times.iter().zip(&sol) {
            assert!((row[0] - (-50.0 * t).exp()).abs() < 1e-5, "t={t}");
        }
    }

    #[test]
    fn rhs_error_propagates() {
        let times = [0.0, 1.0];
        let res = integrate(
            |_, _| {
                Err(Error::InvalidArgument("boom".into()))
            },
            &[1.0],
            &times,
            &options(),
        );
        assert!(res.is_err());
    }

    #[test]
    fn rejects_non_increasing_times() {
        let res = integrate(
            |_, dy| {
                dy[0] = 0.0;
                Ok(())
            },
            &[1.0],
            &[0.0, 0.0],
            &options(),
        );
        assert!(res.is_err());
    }

    #[test]
    fn first_row_is_the_initial_state() {
        let times = [0.0, 1.0];
        let sol = integrate(
            |y, dy| {
                dy[0] = y[0];
                Ok(())
            },
            &[3.5],
            &times,
            &options(),
        )
        .unwrap();
        assert_eq!(sol[0], vec![3.5]);
    }
}
