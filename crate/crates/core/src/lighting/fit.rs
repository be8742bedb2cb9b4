//! Least-squares fit of an SG mixture to an environment map.

use crate::error::{Error, Result};
use crate::lighting::{EnvironmentMap, GradientPattern, SgLobe, SgMixture};
use crate::math::{fibonacci_sphere, Rgb, Vec3};

#[derive(Debug, Clone)]
pub struct SgFitOptions {
    pub iters: usize,
    /// Resolution of the fixed lat-long sample set the loss is evaluated on.
    pub sample_width: usize,
    pub sample_height: usize,
}

impl Default for SgFitOptions {
    fn default() -> Self {
        SgFitOptions { iters: 500, sample_width: 96, sample_height: 48 }
    }
}

#[derive(Debug, Clone)]
pub struct SgFit {
    pub mixture: SgMixture,
    /// Per-channel RMS of the residual over the solid-angle-weighted samples.
    pub rmse: f64,
}

/// One lobe in optimization coordinates: unconstrained axis (normalized on
/// evaluation), log sharpness, and amplitudes clamped non-negative.
#[derive(Debug, Clone, Copy)]
struct LobeParams {
    axis_raw: Vec3,
    log_sharpness: f64,
    amplitude: Rgb,
}

impl LobeParams {
    fn lobe(&self) -> SgLobe {
        SgLobe {
            axis: self.axis_raw.normalize(),
            sharpness: self.log_sharpness.exp().max(1e-6),
            amplitude: self.amplitude.map(|a| a.max(0.0)),
        }
    }
}

struct FitProblem {
    dirs: Vec<Vec3>,
    weights: Vec<f64>,
    targets: Vec<Rgb>,
}

impl FitProblem {
    fn from_env(env: &EnvironmentMap, opts: &SgFitOptions) -> Self {
        let (w, h) = (opts.sample_width, opts.sample_height);
        let mut dirs = Vec::with_capacity(w * h);
        let mut weights = Vec::with_capacity(w * h);
        let mut targets = Vec::with_capacity(w * h);
        for j in 0..h {
            let theta = (j as f64 + 0.5) / h as f64 * std::f64::consts::PI;
            let wj = theta.sin() * (2.0 * std::f64::consts::PI / w as f64)
                * (std::f64::consts::PI / h as f64);
            for i in 0..w {
                let phi = (i as f64 + 0.5) / w as f64 * 2.0 * std::f64::consts::PI;
                let d = super::envmap::dir_from_spherical(phi, theta);
                dirs.push(d);
                weights.push(wj);
                targets.push(env.radiance(&d));
            }
        }
        FitProblem { dirs, weights, targets }
    }

    fn loss(&self, lobes: &[SgLobe]) -> f64 {
        let mut acc = 0.0;
        for ((d, w), t) in self.dirs.iter().zip(&self.weights).zip(&self.targets) {
            let mut mix = [0.0; 3];
            for l in lobes {
                let e = l.eval(d);
                for c in 0..3 {
                    mix[c] += e[c];
                }
            }
            for c in 0..3 {
                let r = mix[c] - t[c];
                acc += w * r * r;
            }
        }
        acc
    }

    /// Analytic gradient in optimization coordinates.
    fn gradient(&self, params: &[LobeParams]) -> Vec<LobeParams> {
        let lobes: Vec<SgLobe> = params.iter().map(LobeParams::lobe).collect();
        let mut grads = vec![
            LobeParams { axis_raw: Vec3::zeros(), log_sharpness: 0.0, amplitude: [0.0; 3] };
            params.len()
        ];
        for ((d, w), t) in self.dirs.iter().zip(&self.weights).zip(&self.targets) {
            let evals: Vec<Rgb> = lobes.iter().map(|l| l.eval(d)).collect();
            let mut resid = [0.0; 3];
            for e in &evals {
                for c in 0..3 {
                    resid[c] += e[c];
                }
            }
            for c in 0..3 {
                resid[c] -= t[c];
            }
            for (j, lobe) in lobes.iter().enumerate() {
                let basis = (lobe.sharpness * (d.dot(&lobe.axis) - 1.0)).exp();
                let cosm1 = d.dot(&lobe.axis) - 1.0;
                let mut coeff = 0.0; // Σ_c 2 r_c μ_c e
                for c in 0..3 {
                    grads[j].amplitude[c] += w * 2.0 * resid[c] * basis;
                    coeff += 2.0 * resid[c] * lobe.amplitude[c] * basis;
                }
                // log-sharpness: d/dρ = λ (ω·ξ − 1) · (μ e)
                grads[j].log_sharpness += w * coeff * lobe.sharpness * cosm1;
                // axis through normalization: (I − ξξᵀ)/|a| applied to λ ω
                let raw_norm = params[j].axis_raw.norm().max(1e-12);
                let proj = d - lobe.axis * d.dot(&lobe.axis);
                grads[j].axis_raw += proj * (w * coeff * lobe.sharpness / raw_norm);
            }
        }
        grads
    }
}

fn seeded_params(problem: &FitProblem, n_lobes: usize) -> Vec<LobeParams> {
    let axes = fibonacci_sphere(n_lobes);
    axes.iter()
        .map(|axis| {
            // local texel mean over the samples nearest to this axis
            let mut num = [0.0; 3];
            let mut den = 0.0;
            for ((d, w), t) in
                problem.dirs.iter().zip(&problem.weights).zip(&problem.targets)
            {
                let nearest = axes
                    .iter()
                    .map(|a| a.dot(d))
                    .fold(f64::NEG_INFINITY, f64::max);
                if (axis.dot(d) - nearest).abs() < 1e-12 {
                    for c in 0..3 {
                        num[c] += w * t[c];
                    }
                    den += w;
                }
            }
            let amplitude = if den > 0.0 { num.map(|v| v / den) } else { [0.1; 3] };
            LobeParams {
                axis_raw: *axis,
                log_sharpness: (2.0 * n_lobes as f64).ln(),
                amplitude,
            }
        })
        .collect()
}

/// Fit `n_lobes` spherical Gaussians to an environment map by projected
/// gradient descent with backtracking line search, minimizing the
/// solid-angle-weighted L2 over a fixed sample set. Fully deterministic.
pub fn fit_env_to_sgs(
    env: &EnvironmentMap,
    n_lobes: usize,
    opts: &SgFitOptions,
) -> Result<SgFit> {
    if n_lobes == 0 {
        return Err(Error::invalid("n_lobes must be at least 1"));
    }
    let problem = FitProblem::from_env(env, opts);
    let mut params = seeded_params(&problem, n_lobes);
    let mut loss = problem.loss(&params.iter().map(LobeParams::lobe).collect::<Vec<_>>());
    let mut step = 0.1;

    for _ in 0..opts.iters {
        let grads = problem.gradient(&params);
        let gnorm2: f64 = grads
            .iter()
            .map(|g| {
                g.axis_raw.norm_squared()
                    + g.log_sharpness * g.log_sharpness
                    + g.amplitude.iter().map(|a| a * a).sum::<f64>()
            })
            .sum();
        if gnorm2 < 1e-24 {
            break;
        }
        // backtracking: halve until the (projected) step decreases the loss
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<LobeParams> = params
                .iter()
                .zip(&grads)
                .map(|(p, g)| LobeParams {
                    axis_raw: p.axis_raw - g.axis_raw * step,
                    log_sharpness: (p.log_sharpness - g.log_sharpness * step)
                        .clamp(-14.0, 9.0),
                    amplitude: [
                        (p.amplitude[0] - g.amplitude[0] * step).max(0.0),
                        (p.amplitude[1] - g.amplitude[1] * step).max(0.0),
                        (p.amplitude[2] - g.amplitude[2] * step).max(0.0),
                    ],
                })
                .collect();
            let trial_loss =
                problem.loss(&trial.iter().map(LobeParams::lobe).collect::<Vec<_>>());
            if trial_loss < loss {
                params = trial;
                loss = trial_loss;
                step *= 1.25;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }

    let mixture = SgMixture { lobes: params.iter().map(LobeParams::lobe).collect() };
    let total_weight: f64 = problem.weights.iter().sum();
    let rmse = (loss / (3.0 * total_weight)).sqrt();
    Ok(SgFit { mixture, rmse })
}

/// Fit a capture illumination pattern, rasterized to an equirect map first
/// so the same optimizer and sample weighting apply.
pub fn fit_pattern_to_sgs(
    pattern: &GradientPattern,
    n_lobes: usize,
    opts: &SgFitOptions,
) -> Result<SgFit> {
    let env = EnvironmentMap::from_function(opts.sample_width, opts.sample_height, |w| {
        super::gradient_radiance(pattern, w)
    })?;
    fit_env_to_sgs(&env, n_lobes, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lighting::PatternKind;

    #[test]
    fn zero_lobes_is_an_input_error() {
        let env = EnvironmentMap::constant(8, 4, [1.0; 3]).unwrap();
        assert!(fit_env_to_sgs(&env, 0, &SgFitOptions::default()).is_err());
    }

    #[test]
    fn constant_env_single_lobe_integral_near_4pi() {
        let env = EnvironmentMap::constant(32, 16, [1.0; 3]).unwrap();
        let fit = fit_env_to_sgs(&env, 1, &SgFitOptions::default()).unwrap();
        let integral = fit.mixture.integral();
        let four_pi = 4.0 * std::f64::consts::PI;
        for c in 0..3 {
            assert!(
                (integral[c] - four_pi).abs() < 0.02 * four_pi,
                "channel {c}: integral {} vs 4π",
                integral[c]
            );
        }
    }

    #[test]
    fn recovers_a_single_lobe_env() {
        let truth = SgLobe::new(
            Vec3::new(0.3, 0.8, -0.5).normalize(),
            6.0,
            [1.5, 0.9, 0.4],
        )
        .unwrap();
        let env = EnvironmentMap::from_function(96, 48, |w| truth.eval(w)).unwrap();
        let fit = fit_env_to_sgs(&env, 1, &SgFitOptions { iters: 1200, ..Default::default() })
            .unwrap();
        let got = &fit.mixture.lobes[0];
        let axis_err_deg = got.axis.dot(&truth.axis).clamp(-1.0, 1.0).acos().to_degrees();
        assert!(axis_err_deg < 2.0, "axis off by {axis_err_deg}°");
        let rel = (got.sharpness - truth.sharpness).abs() / truth.sharpness;
        assert!(rel < 0.05, "sharpness {} vs {}", got.sharpness, truth.sharpness);
    }

    #[test]
    fn fit_loss_is_monotone_in_iteration_budget() {
        let env = EnvironmentMap::from_function(48, 24, |w| {
            [0.3 + 0.7 * w.y.max(0.0), 0.2, 0.5 * (1.0 - w.y.abs())]
        })
        .unwrap();
        let mut last = f64::INFINITY;
        for iters in [5, 25, 100, 300] {
            let fit = fit_env_to_sgs(&env, 3, &SgFitOptions { iters, ..Default::default() })
                .unwrap();
            assert!(fit.rmse <= last + 1e-12, "rmse {} after {} iters", fit.rmse, iters);
            last = fit.rmse;
        }
    }

    #[test]
    fn gradient_patterns_fit_tightly() {
        let [plus, minus, white] = GradientPattern::all_three(1.0).unwrap();
        for p in [plus, minus, white] {
            let fit = fit_pattern_to_sgs(&p, 3, &SgFitOptions::default()).unwrap();
            assert!(
                fit.rmse < 0.02,
                "{:?} pattern rmse {} exceeds 2% of L0",
                p.kind,
                fit.rmse
            );
        }
        let _ = PatternKind::Plus;
    }
}
