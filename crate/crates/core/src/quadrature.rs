//! Gauss-Legendre quadrature, fixed order and adaptive.

use std::f64::consts::PI;
use std::sync::OnceLock;

/// Nodes and weights on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    /// Newton iteration on `P_n` from the Chebyshev-like initial guesses.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        GaussLegendre { nodes, weights }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * f(mid + half * x))
            .sum::<f64>()
            * half
    }
}

// (P_n(x), P_n'(x)) by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let nf = n as f64;
    (p1, nf * (x * p1 - p0) / (x * x - 1.0))
}

fn rule15() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(15))
}

/// Fixed 64-node rule.
pub fn gauss_legendre_64() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(64))
}

/// Panel budget for [`integrate_adaptive`].
pub const MAX_PANELS: usize = 2000;

struct Panel {
    a: f64,
    b: f64,
    left: f64,
    right: f64,
    err: f64,
}

impl Panel {
    fn new<F: Fn(f64) -> f64>(f: &F, rule: &GaussLegendre, a: f64, b: f64, whole: f64) -> Self {
        let mid = 0.5 * (a + b);
        let left = rule.integrate(a, mid, f);
        let right = rule.integrate(mid, b, f);
        Panel {
            a,
            b,
            left,
            right,
            err: (left + right - whole).abs(),
        }
    }
}

/// Globally adaptive 15-point Gauss-Legendre: the panel with the largest
/// whole-versus-halves discrepancy is split until the summed discrepancy is at
/// most `abs_tol` or [`MAX_PANELS`] is reached.
///
/// Returns 0 for an empty interval. Orientation is respected (`b < a` flips the sign).
pub fn integrate_adaptive<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let rule = rule15();
    let whole = rule.integrate(a, b, &f);
    let mut panels = vec![Panel::new(&f, rule, a, b, whole)];
    while panels.len() < MAX_PANELS {
        let total: f64 = panels.iter().map(|p| p.err).sum();
        if total <= abs_tol || !total.is_finite() {
            break;
        }
        let worst = panels
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.err.total_cmp(&y.1.err))
            .map(|(i, _)| i)
            .expect("non-empty");
        let p = panels.swap_remove(worst);
        let mid = 0.5 * (p.a + p.b);
        if mid == p.a || mid == p.b {
            panels.push(Panel { err: 0.0, ..p });
            continue;
        }
        panels.push(Panel::new(&f, rule, p.a, mid, p.left));
        panels.push(Panel::new(&f, rule, mid, p.b, p.right));
    }
    // sum in interval order so the result does not depend on split history
    panels.sort_by(|x, y| x.a.total_cmp(&y.a));
    panels.iter().map(|p| p.left + p.right).sum()
}
