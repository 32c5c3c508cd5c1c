//! Logistic regression of answer correctness on visual faithfulness,
//! fitted by damped Newton iterations.

use serde::{Deserialize, Serialize};

pub const MAX_ITERATIONS: usize = 100;
pub const GRADIENT_TOLERANCE: f64 = 1e-8;
const RIDGE: f64 = 1e-8;
const MAX_HALVINGS: usize = 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitFit {
    pub intercept: f64,
    pub slope: f64,
    pub converged: bool,
    pub iterations: usize,
    pub log_likelihood: f64,
    pub n: usize,
    pub diagnostic: Option<String>,
}

/// ln(1 + e^z) without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binomial log-likelihood of P(correct) = sigmoid(b0 + b1·phi).
pub fn log_likelihood(beta: [f64; 2], pairs: &[(f64, bool)]) -> f64 {
    pairs
        .iter()
        .map(|&(x, y)| {
            let z = beta[0] + beta[1] * x;
            if y {
                -softplus(-z)
            } else {
                -softplus(z)
            }
        })
        .sum()
}

pub fn gradient(beta: [f64; 2], pairs: &[(f64, bool)]) -> [f64; 2] {
    let mut g = [0.0; 2];
    for &(x, y) in pairs {
        let r = y as u8 as f64 - sigmoid(beta[0] + beta[1] * x);
        g[0] += r;
        g[1] += r * x;
    }
    g
}

/// Negative Hessian (the Fisher information), row-major.
fn information(beta: [f64; 2], pairs: &[(f64, bool)]) -> [f64; 4] {
    let mut h = [0.0; 4];
    for &(x, _) in pairs {
        let p = sigmoid(beta[0] + beta[1] * x);
        let w = p * (1.0 - p);
        h[0] += w;
        h[1] += w * x;
        h[3] += w * x * x;
    }
    h[2] = h[1];
    h
}

/// Solves `h · d = g`; a ridge term is added when `h` is near singular.
fn solve(h: [f64; 4], g: [f64; 2]) -> [f64; 2] {
    let mut h = h;
    let scale = h[0].abs().max(h[3].abs()).max(1.0);
    let mut det = h[0] * h[3] - h[1] * h[2];
    if det.abs() <= 1e-12 * scale * scale {
        h[0] += RIDGE * scale;
        h[3] += RIDGE * scale;
        det = h[0] * h[3] - h[1] * h[2];
    }
    [(h[3] * g[0] - h[1] * g[1]) / det, (h[0] * g[1] - h[2] * g[0]) / det]
}

/// Complete separation: one class lies strictly above the other in phi.
fn separation(pairs: &[(f64, bool)]) -> Option<&'static str> {
    let range = |class: bool| {
        pairs
            .iter()
            .filter(|p| p.1 == class)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.0), hi.max(p.0)))
    };
    let (ok_lo, ok_hi) = range(true);
    let (bad_lo, bad_hi) = range(false);
    if bad_hi < ok_lo {
        Some("higher")
    } else if ok_hi < bad_lo {
        Some("lower")
    } else {
        None
    }
}

pub fn fit_faithfulness_logit(pairs: &[(f64, bool)]) -> LogitFit {
    let n = pairs.len();
    let positives = pairs.iter().filter(|p| p.1).count();
    let mut fit = LogitFit {
        intercept: 0.0,
        slope: 0.0,
        converged: false,
        iterations: 0,
        log_likelihood: log_likelihood([0.0, 0.0], pairs),
        n,
        diagnostic: None,
    };
    if n < 2 || positives == 0 || positives == n {
        fit.diagnostic = Some(format!("degenerate data: {n} points, {positives} correct; both outcomes are needed"));
        return fit;
    }
    if let Some(side) = separation(pairs) {
        fit.diagnostic = Some(format!(
            "outcomes are perfectly separated by phi (correct answers all have {side} phi); no finite maximum exists"
        ));
        return fit;
    }
    let mut beta = [0.0, 0.0];
    let mut ll = fit.log_likelihood;
    for it in 0..MAX_ITERATIONS {
        let g = gradient(beta, pairs);
        if g[0].hypot(g[1]) < GRADIENT_TOLERANCE {
            fit.converged = true;
            fit.iterations = it;
            break;
        }
        let d = solve(information(beta, pairs), g);
        let gnorm = g[0].hypot(g[1]);
        // Near the optimum the likelihood is flat to rounding; such steps are
        // still taken when they shrink the gradient.
        let flat = 1e-12 * (1.0 + ll.abs());
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            let cand = [beta[0] + t * d[0], beta[1] + t * d[1]];
            let cll = log_likelihood(cand, pairs);
            let improves = cll >= ll
                || (cll >= ll - flat && {
                    let cg = gradient(cand, pairs);
                    cg[0].hypot(cg[1]) < gnorm
                });
            if cll.is_finite() && improves {
                beta = cand;
                ll = ll.max(cll);
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        fit.iterations = it + 1;
        if !accepted {
            let g = gradient(beta, pairs);
            fit.converged = g[0].hypot(g[1]) < GRADIENT_TOLERANCE;
            if !fit.converged {
                fit.diagnostic = Some("line search stalled before the gradient tolerance was met".into());
            }
            break;
        }
    }
    if !fit.converged && fit.diagnostic.is_none() {
        let g = gradient(beta, pairs);
        fit.converged = g[0].hypot(g[1]) < GRADIENT_TOLERANCE;
        if !fit.converged {
            fit.diagnostic = Some(format!("no convergence within {MAX_ITERATIONS} iterations (separable data?)"));
        }
    }
    fit.intercept = beta[0];
    fit.slope = beta[1];
    fit.log_likelihood = ll;
    fit
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn degenerate_inputs() {
        let f = fit_faithfulness_logit(&[(0.2, true), (0.9, true)]);
        assert!(!f.converged && f.diagnostic.is_some());
        assert!(!fit_faithfulness_logit(&[(0.5, false)]).converged);
        assert!(!fit_faithfulness_logit(&[]).converged);
        let separated = fit_faithfulness_logit(&[(0.2, false), (0.4, false), (0.9, true)]);
        assert!(!separated.converged && separated.diagnostic.unwrap().contains("separated"));
    }

    #[test]
    fn recovers_known_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pairs: Vec<(f64, bool)> = (0..10_000)
            .map(|_| {
                let x: f64 = rng.gen();
                (x, rng.gen::<f64>() < sigmoid(-1.0 + 3.0 * x))
            })
            .collect();
        let f = fit_faithfulness_logit(&pairs);
        assert!(f.converged, "{f:?}");
        assert!((f.intercept + 1.0).abs() <= 0.15 && (f.slope - 3.0).abs() <= 0.15, "{f:?}");
    }

    #[test]
    fn singular_information_uses_ridge() {
        let pairs = [(0.5, true), (0.5, false), (0.5, true)];
        let f = fit_faithfulness_logit(&pairs);
        assert!(f.intercept.is_finite() && f.slope.is_finite());
        assert!((sigmoid(f.intercept + 0.5 * f.slope) - 2.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pairs: Vec<(f64, bool)> = (0..200).map(|_| (rng.gen(), rng.gen())).collect();
        let h = 1e-5;
        for _ in 0..20 {
            let b = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
            let g = gradient(b, &pairs);
            for k in 0..2 {
                let (mut up, mut down) = (b, b);
                up[k] += h;
                down[k] -= h;
                let fd = (log_likelihood(up, &pairs) - log_likelihood(down, &pairs)) / (2.0 * h);
                assert!((fd - g[k]).abs() <= 1e-6 * g[k].abs().max(1.0), "{fd} vs {}", g[k]);
            }
        }
    }
}
