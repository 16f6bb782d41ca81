//! Log-space Adam ascent used for marginal-likelihood maximization.

/// Natural-unit bounds applied to every hyperparameter.
pub const PARAM_MIN: f64 = 1e-4;
pub const PARAM_MAX: f64 = 1e4;

#[derive(Debug, Clone, Copy)]
pub struct AdamOptions {
    pub max_iters: usize,
    pub learning_rate: f64,
    /// Stop when the gradient infinity-norm (log space) falls below this.
    pub grad_tol: f64,
    /// Stop after this many consecutive iterations without improvement.
    pub patience: usize,
}

impl Default for AdamOptions {
    fn default() -> Self {
        Self {
            max_iters: 150,
            learning_rate: 0.08,
            grad_tol: 1e-5,
            patience: 12,
        }
    }
}

/// Result of one ascent run: best point seen (log space) and its objective.
pub struct AscentOutcome {
    pub log_params: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

/// Maximizes `objective` over log-parameters with Adam, clamping to the
/// global bounds. `objective` returns the value and its log-space gradient,
/// or `None` where it cannot be evaluated (e.g. factorization failure);
/// such points are skipped by stepping back toward the best point seen.
pub fn maximize<F>(objective: &mut F, start: &[f64], opts: &AdamOptions) -> Option<AscentOutcome>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let lo = PARAM_MIN.ln();
    let hi = PARAM_MAX.ln();
    let clamp = |x: &mut Vec<f64>| {
        for v in x.iter_mut() {
            *v = v.clamp(lo, hi);
        }
    };

    let mut x: Vec<f64> = start.to_vec();
    clamp(&mut x);
    let (mut best_f, grad) = objective(&x)?;
    let mut best_x = x.clone();
    let mut grad = grad;

    let dim = x.len();
    let mut m = vec![0.0; dim];
    let mut v = vec![0.0; dim];
    let (beta1, beta2, eps) = (0.9, 0.999, 1e-8);
    let mut stall = 0usize;
    let mut iterations = 0usize;

    for iter in 1..=opts.max_iters {
        iterations = iter;
        let ginf = grad.iter().fold(0.0f64, |a, g| a.max(g.abs()));
        if ginf < opts.grad_tol {
            break;
        }
        for i in 0..dim {
            m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
            let m_hat = m[i] / (1.0 - beta1.powi(iter as i32));
            let v_hat = v[i] / (1.0 - beta2.powi(iter as i32));
            // Ascent direction.
            x[i] += opts.learning_rate * m_hat / (v_hat.sqrt() + eps);
        }
        clamp(&mut x);
        match objective(&x) {
            Some((f, g)) => {
                grad = g;
                if f > best_f + 1e-10 * (1.0 + best_f.abs()) {
                    best_f = f;
                    best_x = x.clone();
                    stall = 0;
                } else {
                    stall += 1;
                    if stall >= opts.patience {
                        break;
                    }
                }
            }
            None => {
                // Objective failed here; retreat halfway toward the best point.
                for i in 0..dim {
                    x[i] = 0.5 * (x[i] + best_x[i]);
                }
                match objective(&x) {
                    Some((f, g)) => {
                        grad = g;
                        if f > best_f {
                            best_f = f;
                            best_x = x.clone();
                        }
                    }
                    None => break,
                }
            }
        }
    }

    Some(AscentOutcome {
        log_params: best_x,
        objective: best_f,
        iterations,
    })
}
