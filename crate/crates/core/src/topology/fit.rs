//! Gaussian fitting of transition histograms, connectivity confidence, and
//! time-window derivation.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::types::{GaussianModel, TransitionDistribution};

/// Fits `A * exp(-(x - mu)^2 / (2 sigma^2))` to the histogram densities by
/// bounded Levenberg-Marquardt least squares (at most 100 steps, relative
/// tolerance 1e-8) and reports the model with its fit error `1 - R^2`.
///
/// The amplitude is free, so truncated or contaminated histograms still pull
/// `mu` and `sigma` toward the dominant peak. Several deterministic starts
/// (moment-based and peak-based) guard against local minima on multi-modal
/// data. A histogram with a single non-empty bin short-circuits to
/// `sigma = bin_width / 2` with zero fit error.
pub fn fit_gaussian(d: &TransitionDistribution) -> Result<GaussianModel> {
    let w = d.bin_width();
    let non_empty = d.non_empty_bins();
    if non_empty == 0 {
        return Err(Error::Numeric("histogram has no mass to fit".into()));
    }
    if non_empty == 1 {
        let idx = d
            .masses()
            .iter()
            .position(|&m| m > 0.0)
            .expect("non-empty bin exists");
        return Ok(GaussianModel {
            mu: d.bin_center(idx),
            sigma: w / 2.0,
            fit_error: 0.0,
        });
    }

    let xs: Vec<f64> = (0..d.masses().len()).map(|i| d.bin_center(i)).collect();
    let ys: Vec<f64> = d.masses().iter().map(|m| m / w).collect();
    let (lo, hi) = d.range();
    let width = hi - lo;
    let max_y = ys.iter().cloned().fold(0.0_f64, f64::max);
    let bounds = Bounds {
        mu: (lo - width, hi + width),
        sigma: (w / 4.0, 10.0 * width),
        amp: (0.0, 1e6 * max_y.max(1e-300)),
    };

    // Moment-based start.
    let (m_mu, m_sigma) = d.mean_std();
    let mut starts = vec![[max_y, m_mu, m_sigma.max(w / 2.0)]];
    // Peak-based start: centre on the tallest bin, width from half-maximum.
    let peak = ys
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("non-empty histogram");
    let half = max_y / 2.0;
    let mut l = peak;
    while l > 0 && ys[l - 1] >= half {
        l -= 1;
    }
    let mut r = peak;
    while r + 1 < ys.len() && ys[r + 1] >= half {
        r += 1;
    }
    let fwhm_sigma = ((r - l + 1) as f64 * w / 2.355).max(w / 2.0);
    starts.push([max_y, xs[peak], fwhm_sigma]);
    starts.push([max_y, xs[peak], 3.0 * w]);

    let mut best: Option<([f64; 3], f64)> = None;
    for start in starts {
        let (params, cost) = levenberg_marquardt(&xs, &ys, start, &bounds);
        if best.as_ref().map_or(true, |(_, c)| cost < *c) {
            best = Some((params, cost));
        }
    }
    let ([_, mu, sigma], ss_res) = best.expect("at least one start");

    let mean_y = ys.iter().sum::<f64>() / ys.len() as f64;
    let ss_tot: f64 = ys.iter().map(|y| (y - mean_y) * (y - mean_y)).sum();
    // A histogram with no variance across bins has no peak structure for the
    // model to explain; report full fit error rather than 0/0.
    let r2 = if ss_tot <= 1e-30 {
        0.0
    } else {
        1.0 - ss_res / ss_tot
    };
    Ok(GaussianModel {
        mu,
        sigma: sigma.max(w / 4.0),
        fit_error: (1.0 - r2).clamp(0.0, 1.0),
    })
}

struct Bounds {
    mu: (f64, f64),
    sigma: (f64, f64),
    amp: (f64, f64),
}

impl Bounds {
    fn clamp(&self, p: [f64; 3]) -> [f64; 3] {
        [
            p[0].clamp(self.amp.0, self.amp.1),
            p[1].clamp(self.mu.0, self.mu.1),
            p[2].clamp(self.sigma.0, self.sigma.1),
        ]
    }
}

fn model(x: f64, p: &[f64; 3]) -> f64 {
    let z = (x - p[1]) / p[2];
    p[0] * (-0.5 * z * z).exp()
}

fn cost(xs: &[f64], ys: &[f64], p: &[f64; 3]) -> f64 {
    xs.iter()
        .zip(ys)
        .map(|(&x, &y)| {
            let r = model(x, p) - y;
            r * r
        })
        .sum()
}

/// Damped Gauss-Newton iteration on the three parameters `[A, mu, sigma]`.
fn levenberg_marquardt(
    xs: &[f64],
    ys: &[f64],
    start: [f64; 3],
    bounds: &Bounds,
) -> ([f64; 3], f64) {
    let mut p = bounds.clamp(start);
    let mut current = cost(xs, ys, &p);
    let mut lambda = 1e-3;
    for _ in 0..100 {
        // Accumulate J^T J and J^T r for residuals r_i = f(x_i) - y_i.
        let mut jtj = [[0.0_f64; 3]; 3];
        let mut jtr = [0.0_f64; 3];
        for (&x, &y) in xs.iter().zip(ys) {
            let zr = (x - p[1]) / p[2];
            let e = (-0.5 * zr * zr).exp();
            let f = p[0] * e;
            let grad = [e, f * zr / p[2], f * zr * zr / p[2]];
            let r = f - y;
            for i in 0..3 {
                jtr[i] += grad[i] * r;
                for j in 0..3 {
                    jtj[i][j] += grad[i] * grad[j];
                }
            }
        }
        let mut improved = false;
        for _ in 0..8 {
            let mut a = jtj;
            for (i, row) in a.iter_mut().enumerate() {
                row[i] += lambda * jtj[i][i].max(1e-12);
            }
            let rhs = [-jtr[0], -jtr[1], -jtr[2]];
            let Some(delta) = solve3(a, rhs) else {
                lambda *= 3.0;
                continue;
            };
            let candidate = bounds.clamp([p[0] + delta[0], p[1] + delta[1], p[2] + delta[2]]);
            let c = cost(xs, ys, &candidate);
            if c < current {
                let rel = (current - c) / current.max(1e-300);
                p = candidate;
                current = c;
                lambda = (lambda * 0.3).max(1e-12);
                improved = true;
                if rel < 1e-8 {
                    return (p, current);
                }
                break;
            }
            lambda *= 3.0;
        }
        if !improved {
            break;
        }
    }
    (p, current)
}

/// Solves a 3x3 linear system by Gaussian elimination with partial pivoting.
fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("non-empty range");
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..3 {
            let factor = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let mut acc = b[row];
        for k in row + 1..3 {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    if x.iter().all(|v| v.is_finite()) {
        Some(x)
    } else {
        None
    }
}

/// Connectivity confidence of a fitted link: `exp(-sigma / time_scale) * (1 - E)`,
/// clamped to `[0, 1]`.
///
/// Tight, well-explained transition distributions score near 1; wide or
/// poorly fitted ones decay toward 0. `time_scale` puts `sigma` in relative
/// units (callers pass the current search window unless configured
/// otherwise).
pub fn connectivity_confidence(m: &GaussianModel, time_scale: f64) -> f64 {
    assert!(time_scale > 0.0, "time scale must be positive");
    ((-m.sigma / time_scale).exp() * (1.0 - m.fit_error)).clamp(0.0, 1.0)
}

/// Derives the transition-time bounds and next search window from a fitted
/// model.
///
/// The bounds cover the central `range_percent` of the model
/// (`mu ± z * sigma` with `z` the matching standard-normal quantile), and the
/// window expands them by the residual fit error:
/// `T = (T_U - T_L) / (1 - E)` with `E` clamped to `max_fit_error`.
/// Returns `(T_L, T_U, T)`.
pub fn update_time_window(
    m: &GaussianModel,
    range_percent: f64,
    max_fit_error: f64,
) -> (f64, f64, f64) {
    assert!(
        range_percent > 0.0 && range_percent < 100.0,
        "coverage must be a percentage in (0, 100)"
    );
    let p = (1.0 + range_percent / 100.0) / 2.0;
    let z = Normal::new(0.0, 1.0)
        .expect("standard normal")
        .inverse_cdf(p);
    let t_l = m.mu - z * m.sigma;
    let t_u = m.mu + z * m.sigma;
    let e = m.fit_error.clamp(0.0, max_fit_error);
    (t_l, t_u, (t_u - t_l) / (1.0 - e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    /// Histogram whose masses are exactly proportional to N(mu, sigma^2)
    /// sampled at bin centers.
    fn analytic_histogram(mu: f64, sigma: f64, w: f64) -> TransitionDistribution {
        let lo = mu - 8.0 * sigma;
        let bins = (16.0 * sigma / w).ceil() as usize;
        let masses: Vec<f64> = (0..bins)
            .map(|i| {
                let x = lo + (i as f64 + 0.5) * w;
                let z = (x - mu) / sigma;
                (-0.5 * z * z).exp()
            })
            .collect();
        TransitionDistribution::from_parts(masses, w, lo, 1000).unwrap()
    }

    // ===== Gaussian fitting =====

    #[test]
    fn fit_recovers_analytic_gaussians_exactly() {
        for &(mu, sigma) in &[(30.0, 5.0), (10.0, 2.5), (-4.0, 1.5), (120.0, 20.0)] {
            let d = analytic_histogram(mu, sigma, 1.0_f64.min(sigma / 4.0));
            let m = fit_gaussian(&d).unwrap();
            assert!(
                (m.mu - mu).abs() < 1e-3,
                "mu {} vs {} (sigma {})",
                m.mu,
                mu,
                sigma
            );
            assert!((m.sigma - sigma).abs() < 1e-3, "sigma {} vs {}", m.sigma, sigma);
            assert!(m.fit_error <= 1e-6, "fit error {}", m.fit_error);
            m.validate().unwrap();
        }
    }

    #[test]
    fn fit_error_is_high_on_flat_histograms() {
        // Perfectly flat: no variance across bins, so no peak structure is
        // explainable and the error saturates at 1.
        let flat = TransitionDistribution::from_parts(vec![1.0; 60], 1.0, 0.0, 60).unwrap();
        let m = fit_gaussian(&flat).unwrap();
        println!("flat histogram fit error = {}", m.fit_error);
        assert!(m.fit_error >= 0.6);

        // Deterministic jitter around flat: the bump explains almost nothing.
        let masses: Vec<f64> = (0..60)
            .map(|i| if i % 2 == 0 { 1.1 } else { 0.9 })
            .collect();
        let jittered = TransitionDistribution::from_parts(masses, 1.0, 0.0, 60).unwrap();
        let m = fit_gaussian(&jittered).unwrap();
        println!("jittered-flat histogram fit error = {}", m.fit_error);
        assert!(m.fit_error >= 0.6);
    }

    #[test]
    fn single_bin_histogram_uses_degenerate_rule() {
        let d = TransitionDistribution::from_samples(&[12.3; 40], 1.0, (0.0, 30.0)).unwrap();
        let m = fit_gaussian(&d).unwrap();
        assert_relative_eq!(m.mu, 12.5);
        assert_relative_eq!(m.sigma, 0.5);
        assert_relative_eq!(m.fit_error, 0.0);
    }

    #[test]
    fn fit_locks_onto_dominant_peak_of_a_mixture() {
        // Sharp peak at 30 plus a broad low clump at -100: the free
        // amplitude lets the fit follow the peak.
        let mut masses = vec![0.0; 300];
        let w = 1.0;
        let lo = -150.0;
        for (i, m) in masses.iter_mut().enumerate() {
            let x = lo + (i as f64 + 0.5) * w;
            let zp = (x - 30.0) / 5.0;
            let zc = (x + 100.0) / 35.0;
            *m = (-0.5 * zp * zp).exp() + 0.35 * (-0.5 * zc * zc).exp();
        }
        let d = TransitionDistribution::from_parts(masses, w, lo, 500).unwrap();
        let m = fit_gaussian(&d).unwrap();
        assert!((m.mu - 30.0).abs() < 1.0, "mu pulled to {}", m.mu);
        assert!(m.sigma < 12.0, "sigma inflated to {}", m.sigma);
    }

    #[test]
    fn fit_handles_sampled_data_within_statistical_tolerance() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let samples: Vec<f64> = (0..500)
            .map(|_| {
                // Box-Muller to avoid a distribution dependency here.
                let u1: f64 = rng.gen_range(1e-12..1.0);
                let u2: f64 = rng.gen_range(0.0..1.0);
                let g = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
                30.0 + 5.0 * g
            })
            .collect();
        let d = TransitionDistribution::from_samples(&samples, 1.0, (0.0, 60.0)).unwrap();
        let m = fit_gaussian(&d).unwrap();
        assert!((m.mu - 30.0).abs() < 0.8, "mu {}", m.mu);
        assert!((m.sigma - 5.0).abs() < 0.9, "sigma {}", m.sigma);
        assert!(m.fit_error < 0.5, "fit error {}", m.fit_error);
    }

    // ===== Connectivity confidence =====

    #[test]
    fn confidence_matches_hand_computed_value() {
        // sigma / time_scale = 0.05 and E = 0.2 gives e^{-0.05} * 0.8.
        let m = GaussianModel {
            mu: 30.0,
            sigma: 30.0,
            fit_error: 0.2,
        };
        let conf = connectivity_confidence(&m, 600.0);
        assert_relative_eq!(conf, (-0.05_f64).exp() * 0.8, epsilon = 1e-12);
        assert!((conf - 0.7610).abs() < 1e-4);
    }

    #[test]
    fn confidence_is_monotone_and_bounded() {
        let scale = 600.0;
        let mut prev = f64::INFINITY;
        for sigma in [1.0, 5.0, 20.0, 100.0, 400.0] {
            let c = connectivity_confidence(
                &GaussianModel {
                    mu: 0.0,
                    sigma,
                    fit_error: 0.3,
                },
                scale,
            );
            assert!((0.0..=1.0).contains(&c));
            assert!(c < prev, "confidence must fall as sigma grows");
            prev = c;
        }
        let mut prev = f64::INFINITY;
        for e in [0.0, 0.2, 0.5, 0.9, 1.0] {
            let c = connectivity_confidence(
                &GaussianModel {
                    mu: 0.0,
                    sigma: 10.0,
                    fit_error: e,
                },
                scale,
            );
            assert!((0.0..=1.0).contains(&c));
            assert!(c < prev, "confidence must fall as fit error grows");
            prev = c;
        }
    }

    // ===== Time-window update =====

    #[test]
    fn window_update_matches_frozen_quantile_values() {
        let m = GaussianModel {
            mu: 30.0,
            sigma: 5.0,
            fit_error: 0.0,
        };
        let (tl, tu, t) = update_time_window(&m, 95.0, 0.9);
        assert_relative_eq!(tl, 20.2002, epsilon = 1e-3);
        assert_relative_eq!(tu, 39.7998, epsilon = 1e-3);
        assert_relative_eq!(t, 19.5996, epsilon = 1e-3);

        let half_err = GaussianModel {
            fit_error: 0.5,
            ..m
        };
        let (_, _, t) = update_time_window(&half_err, 95.0, 0.9);
        assert_relative_eq!(t, 39.1993, epsilon = 1e-3);

        // E above the clamp behaves like E = 0.9.
        let extreme = GaussianModel {
            fit_error: 0.95,
            ..m
        };
        let (_, _, t) = update_time_window(&extreme, 95.0, 0.9);
        assert_relative_eq!(t, 195.9964, epsilon = 1e-2);
    }

    #[test]
    fn window_grows_with_fit_error_and_sigma() {
        let base = GaussianModel {
            mu: 30.0,
            sigma: 5.0,
            fit_error: 0.0,
        };
        let mut prev = 0.0;
        for e in [0.0, 0.25, 0.5, 0.75, 0.9] {
            let (_, _, t) = update_time_window(&GaussianModel { fit_error: e, ..base }, 95.0, 0.9);
            assert!(t > prev);
            prev = t;
        }
        let mut prev = 0.0;
        for sigma in [1.0, 2.0, 4.0, 8.0] {
            let (_, _, t) = update_time_window(&GaussianModel { sigma, ..base }, 95.0, 0.9);
            assert!(t > prev);
            prev = t;
        }
    }

    #[test]
    fn bounds_are_symmetric_quantiles() {
        // 80% coverage uses z = 1.2816.
        let m = GaussianModel {
            mu: 0.0,
            sigma: 1.0,
            fit_error: 0.0,
        };
        let (tl, tu, _) = update_time_window(&m, 80.0, 0.9);
        assert_relative_eq!(tu, 1.2816, epsilon = 1e-3);
        assert_relative_eq!(tl, -tu, epsilon = 1e-12);
    }
}
