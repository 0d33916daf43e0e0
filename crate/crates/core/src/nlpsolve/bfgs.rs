use nalgebra::{DMatrix, DVector};

pub(super) struct InnerSettings {
    pub max_iter: usize,
    /// Stop when the projected-gradient norm falls to `gtol·max(1, |f|)`.
    pub gtol: f64,
    pub armijo: f64,
    pub backtrack: f64,
}

pub(super) struct InnerOutcome {
    pub x: Vec<f64>,
    pub stationarity: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

const MAX_BACKTRACKS: usize = 60;

fn projected_gradient_norm(x: &[f64], g: &[f64], lower: &[f64], upper: &[f64]) -> f64 {
    x.iter()
        .zip(g)
        .zip(lower.iter().zip(upper))
        .map(|((xi, gi), (lo, hi))| (xi - (xi - gi).clamp(*lo, *hi)).abs())
        .fold(0.0, f64::max)
}

/// Projected BFGS with an inverse-Hessian approximation restricted to the free variables.
///
/// Variables at a bound whose gradient pushes outward are frozen for the
/// iteration; the rest take a quasi-Newton step, projected back onto the box
/// and backtracked until the Armijo condition holds. A failed quasi-Newton
/// search is retried once along the projected steepest descent.
pub(super) fn projected_bfgs(
    f: &dyn Fn(&[f64], &mut [f64]) -> f64,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    settings: &InnerSettings,
    stop: &dyn Fn(&[f64], f64, f64) -> bool,
) -> InnerOutcome {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g);
    let mut evaluations = 1;
    let mut h_inv = DMatrix::<f64>::identity(n, n);
    let mut scaled = false;
    let mut iterations = 0;
    let mut stationarity = projected_gradient_norm(&x, &g, lower, upper) / fx.abs().max(1.0);
    let mut converged = stationarity <= settings.gtol || stop(&x, fx, stationarity);

    let mut trial = vec![0.0; n];
    let mut g_trial = vec![0.0; n];

    while !converged && iterations < settings.max_iter {
        iterations += 1;
        let free: Vec<bool> = (0..n)
            .map(|i| !((x[i] <= lower[i] && g[i] > 0.0) || (x[i] >= upper[i] && g[i] < 0.0)))
            .collect();
        if !scaled {
            let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if gmax > 0.0 {
                h_inv = DMatrix::identity(n, n) / gmax.max(1e-300);
            }
        }

        let mut accepted = None;
        for attempt in 0..2 {
            let d: Vec<f64> = if attempt == 0 {
                let gv = DVector::from_iterator(n, (0..n).map(|i| if free[i] { g[i] } else { 0.0 }));
                let hv = &h_inv * gv;
                (0..n).map(|i| if free[i] { -hv[i] } else { 0.0 }).collect()
            } else {
                let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
                (0..n).map(|i| if free[i] { -g[i] / gmax } else { 0.0 }).collect()
            };
            let slope: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
            if !(slope < 0.0) {
                continue;
            }
            let mut alpha = 1.0;
            for _ in 0..MAX_BACKTRACKS {
                for i in 0..n {
                    trial[i] = (x[i] + alpha * d[i]).clamp(lower[i], upper[i]);
                }
                let decrease: f64 = (0..n).map(|i| g[i] * (trial[i] - x[i])).sum();
                let ft = f(&trial, &mut g_trial);
                evaluations += 1;
                if ft.is_finite() && g_trial.iter().all(|v| v.is_finite()) && ft <= fx + settings.armijo * decrease {
                    accepted = Some(ft);
                    break;
                }
                alpha *= settings.backtrack;
            }
            if accepted.is_some() {
                break;
            }
            // Reset the curvature model before the steepest-descent retry.
            h_inv = DMatrix::identity(n, n);
            scaled = false;
        }
        let Some(f_new) = accepted else { break };

        let s = DVector::from_iterator(n, (0..n).map(|i| trial[i] - x[i]));
        let y = DVector::from_iterator(n, (0..n).map(|i| g_trial[i] - g[i]));
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() && sy > 0.0 {
            if !scaled {
                h_inv = DMatrix::identity(n, n) * (sy / y.dot(&y));
                scaled = true;
            }
            let rho = 1.0 / sy;
            let hy = &h_inv * &y;
            let yhy = y.dot(&hy);
            h_inv += (&s * s.transpose()) * (rho * rho * yhy + rho) - (&hy * s.transpose() + &s * hy.transpose()) * rho;
        }

        x.copy_from_slice(&trial);
        g.copy_from_slice(&g_trial);
        let f_prev = fx;
        fx = f_new;
        stationarity = projected_gradient_norm(&x, &g, lower, upper) / fx.abs().max(1.0);
        converged = stationarity <= settings.gtol || stop(&x, fx, stationarity);
        if !converged && (f_prev - fx).abs() <= 1e-16 * fx.abs().max(1e-300) && s.amax() <= 1e-15 {
            break;
        }
    }

    InnerOutcome { x, stationarity, iterations, evaluations, converged }
}
