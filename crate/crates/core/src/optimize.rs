//! Small unconstrained and box-constrained minimizers used by the
//! likelihood fits.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinimizeOptions {
    pub max_iterations: usize,
    /// Stop when the projected gradient's largest component falls below this.
    pub grad_tol: f64,
    /// Stop when an accepted step changes the objective by less than
    /// `rel_tol * (|f| + 1)`.
    pub rel_tol: f64,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            grad_tol: 1e-6,
            rel_tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

fn project(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((v, &lo), &hi) in x.iter_mut().zip(lower).zip(upper) {
        *v = v.clamp(lo, hi);
    }
}

fn projected_grad_norm(x: &[f64], g: &[f64], lower: &[f64], upper: &[f64]) -> f64 {
    x.iter()
        .zip(g)
        .zip(lower.iter().zip(upper))
        .map(|((&xi, &gi), (&lo, &hi))| {
            if (xi <= lo && gi > 0.0) || (xi >= hi && gi < 0.0) {
                0.0
            } else {
                gi.abs()
            }
        })
        .fold(0.0, f64::max)
}

/// BFGS with an Armijo backtracking line search, kept inside the box
/// `[lower, upper]` by projection.
///
/// `f(x, grad)` returns the objective and writes the gradient into `grad`.
pub fn bfgs<F>(mut f: F, x0: &[f64], lower: &[f64], upper: &[f64], opts: &MinimizeOptions) -> Minimum
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let dim = x0.len();
    let mut x = x0.to_vec();
    project(&mut x, lower, upper);
    let mut g = vec![0.0; dim];
    let mut fx = f(&x, &mut g);
    let mut evaluations = 1;
    let mut h = identity(dim);
    let mut fresh = true;
    let mut stalls = 0;

    let mut x_new = vec![0.0; dim];
    let mut g_new = vec![0.0; dim];
    let mut d = vec![0.0; dim];

    for iter in 0..opts.max_iterations {
        if !fx.is_finite() {
            return Minimum { x, value: fx, iterations: iter, evaluations, converged: false };
        }
        if projected_grad_norm(&x, &g, lower, upper) <= opts.grad_tol {
            return Minimum { x, value: fx, iterations: iter, evaluations, converged: true };
        }
        for i in 0..dim {
            d[i] = -(0..dim).map(|j| h[i * dim + j] * g[j]).sum::<f64>();
        }
        // Drop components that push into an active bound.
        for i in 0..dim {
            if (x[i] <= lower[i] && d[i] < 0.0) || (x[i] >= upper[i] && d[i] > 0.0) {
                d[i] = 0.0;
            }
        }
        let mut slope: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
        if slope >= 0.0 {
            for i in 0..dim {
                d[i] = -g[i];
            }
            for i in 0..dim {
                if (x[i] <= lower[i] && d[i] < 0.0) || (x[i] >= upper[i] && d[i] > 0.0) {
                    d[i] = 0.0;
                }
            }
            slope = d.iter().zip(&g).map(|(a, b)| a * b).sum();
            h = identity(dim);
            fresh = true;
        }
        let mut t = 1.0;
        if fresh {
            let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1.0 {
                t = 1.0 / norm;
            }
        }
        let mut accepted = false;
        let mut f_new = fx;
        for _ in 0..60 {
            for i in 0..dim {
                x_new[i] = x[i] + t * d[i];
            }
            project(&mut x_new, lower, upper);
            f_new = f(&x_new, &mut g_new);
            evaluations += 1;
            let decrease: f64 = x_new.iter().zip(&x).zip(&g).map(|((a, b), gi)| (a - b) * gi).sum();
            if f_new.is_finite() && f_new <= fx + 1e-4 * decrease.min(t * slope).min(0.0) {
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            if fresh {
                // No descent even along the steepest direction: stationary
                // to working precision.
                return Minimum { x, value: fx, iterations: iter + 1, evaluations, converged: true };
            }
            h = identity(dim);
            fresh = true;
            continue;
        }

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let change = (fx - f_new).abs();
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut g, &mut g_new);
        let f_old = fx;
        fx = f_new;

        let ss: f64 = s.iter().map(|v| v * v).sum();
        let yy: f64 = y.iter().map(|v| v * v).sum();
        if sy > 1e-12 * (ss * yy).sqrt() {
            if fresh {
                // Scale the initial inverse Hessian.
                let scale = sy / yy;
                for i in 0..dim {
                    for j in 0..dim {
                        h[i * dim + j] = if i == j { scale } else { 0.0 };
                    }
                }
            }
            bfgs_update(&mut h, &s, &y, sy);
            fresh = false;
        }
        if change <= opts.rel_tol * (f_old.abs() + 1.0) || ss.sqrt() <= 1e-12 * (1.0 + norm(&x)) {
            stalls += 1;
            if stalls >= 3 {
                return Minimum { x, value: fx, iterations: iter + 1, evaluations, converged: true };
            }
        } else {
            stalls = 0;
        }
    }
    let converged = projected_grad_norm(&x, &g, lower, upper) <= opts.grad_tol;
    Minimum { x, value: fx, iterations: opts.max_iterations, evaluations, converged }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn identity(dim: usize) -> Vec<f64> {
    let mut h = vec![0.0; dim * dim];
    for i in 0..dim {
        h[i * dim + i] = 1.0;
    }
    h
}

fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let dim = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..dim)
        .map(|i| (0..dim).map(|j| h[i * dim + j] * y[j]).sum())
        .collect();
    let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
    for i in 0..dim {
        for j in 0..dim {
            h[i * dim + j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

/// Nelder-Mead simplex search with standard coefficients. Points are
/// projected into the box before evaluation.
pub fn nelder_mead<F>(
    mut f: F,
    x0: &[f64],
    step: f64,
    lower: &[f64],
    upper: &[f64],
    opts: &MinimizeOptions,
) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let dim = x0.len();
    let mut eval = |x: &mut Vec<f64>, count: &mut usize| {
        project(x, lower, upper);
        *count += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut evaluations = 0;
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    let mut p = x0.to_vec();
    let v = eval(&mut p, &mut evaluations);
    simplex.push((p, v));
    for i in 0..dim {
        let mut p = simplex[0].0.clone();
        p[i] += if p[i] + step <= upper[i] { step } else { -step };
        let v = eval(&mut p, &mut evaluations);
        simplex.push((p, v));
    }

    let budget = opts.max_iterations * (dim + 1).max(4);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < budget {
        iterations += 1;
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[dim].1;
        let spread = simplex
            .iter()
            .skip(1)
            .map(|(p, _)| p.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if (worst - best).abs() <= opts.rel_tol.max(1e-10) * (best.abs() + 1.0) && spread <= 1e-7 {
            converged = true;
            break;
        }
        let centroid: Vec<f64> = (0..dim)
            .map(|i| simplex[..dim].iter().map(|(p, _)| p[i]).sum::<f64>() / dim as f64)
            .collect();
        let along = |coef: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[dim].0)
                .map(|(c, w)| c + coef * (c - w))
                .collect()
        };
        let mut xr = along(1.0);
        let fr = eval(&mut xr, &mut evaluations);
        if fr < simplex[0].1 {
            let mut xe = along(2.0);
            let fe = eval(&mut xe, &mut evaluations);
            simplex[dim] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[dim - 1].1 {
            simplex[dim] = (xr, fr);
        } else {
            let mut xc = if fr < worst { along(0.5) } else { along(-0.5) };
            let fc = eval(&mut xc, &mut evaluations);
            if fc < fr.min(worst) {
                simplex[dim] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for k in 1..=dim {
                    let mut p: Vec<f64> = simplex[k].0.iter().zip(&best).map(|(a, b)| b + 0.5 * (a - b)).collect();
                    let v = eval(&mut p, &mut evaluations);
                    simplex[k] = (p, v);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, value) = simplex.swap_remove(0);
    Minimum { x, value, iterations, evaluations, converged }
}
