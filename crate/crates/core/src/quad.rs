//! Gauss–Legendre rules and globally adaptive Gauss–Legendre quadrature.

use std::sync::OnceLock;

use crate::error::Error;

/// Nodes and weights of an `n`-point Gauss–Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, p_prev) = legendre(n, x);
                dp = nf * (x * p - p_prev) / (x * x - 1.0);
                let dx = p / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (p, p_prev) = legendre(n, x);
            dp = if p.is_finite() { nf * (x * p - p_prev) / (x * x - 1.0) } else { dp };
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        GaussLegendre { nodes, weights }
    }

    /// Apply the rule on `[a, b]`, returning `(∫f, ∫|f|)`.
    pub fn apply<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, f: &mut F) -> (f64, f64) {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut sum = 0.0;
        let mut abs_sum = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            let v = f(mid + half * x);
            sum += w * v;
            abs_sum += w * v.abs();
        }
        (half * sum, half.abs() * abs_sum)
    }

    /// Map the nodes onto `[a, b]`, returning `(nodes, weights)`.
    pub fn on_interval(&self, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        (
            self.nodes.iter().map(|x| mid + half * x).collect(),
            self.weights.iter().map(|w| half * w).collect(),
        )
    }
}

/// `(P_n(x), P_{n-1}(x))` by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p_prev = 1.0;
    let mut p = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let next = ((2.0 * kf - 1.0) * x * p - (kf - 1.0) * p_prev) / kf;
        p_prev = p;
        p = next;
    }
    (p, p_prev)
}

const PANEL_ORDER: usize = 15;
const INITIAL_PANELS: usize = 8;
const MAX_PANELS: usize = 20_000;

fn panel_rule() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(PANEL_ORDER))
}

/// Result of [`integrate`].
#[derive(Debug, Clone, Copy)]
pub struct Quadrature {
    pub value: f64,
    pub error: f64,
    pub panels: usize,
}

struct Panel {
    a: f64,
    b: f64,
    value: f64,
    abs_value: f64,
    error: f64,
}

fn panel<F: FnMut(f64) -> f64>(a: f64, b: f64, f: &mut F) -> Panel {
    let rule = panel_rule();
    let (whole, _) = rule.apply(a, b, f);
    let m = 0.5 * (a + b);
    let (left, left_abs) = rule.apply(a, m, f);
    let (right, right_abs) = rule.apply(m, b, f);
    let value = left + right;
    Panel { a, b, value, abs_value: left_abs + right_abs, error: (value - whole).abs() }
}

/// Globally adaptive quadrature of `f` over `[a, b]`.
///
/// Each panel is estimated with a 15-point Gauss–Legendre rule on its two
/// halves and the difference to the whole-panel rule serves as the error
/// estimate; the worst panel is bisected until the summed error is below
/// `rel_tol · ∫|f|`.
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, rel_tol: f64) -> Result<Quadrature, Error> {
    if a == b {
        return Ok(Quadrature { value: 0.0, error: 0.0, panels: 0 });
    }
    let width = (b - a) / INITIAL_PANELS as f64;
    let mut panels: Vec<Panel> = (0..INITIAL_PANELS)
        .map(|i| {
            let lo = a + width * i as f64;
            let hi = if i + 1 == INITIAL_PANELS { b } else { lo + width };
            panel(lo, hi, &mut f)
        })
        .collect();
    loop {
        let value: f64 = panels.iter().map(|p| p.value).sum();
        let abs_value: f64 = panels.iter().map(|p| p.abs_value).sum();
        let error: f64 = panels.iter().map(|p| p.error).sum();
        if error <= rel_tol * abs_value || error <= f64::MIN_POSITIVE {
            return Ok(Quadrature { value, error, panels: panels.len() });
        }
        if panels.len() >= MAX_PANELS || !error.is_finite() {
            return Err(Error::QuadratureNotConverged { a, b, estimate: value, error });
        }
        let worst = panels
            .iter()
            .enumerate()
            .max_by(|(_, p), (_, q)| p.error.total_cmp(&q.error))
            .map(|(i, _)| i)
            .expect("at least one panel");
        let p = panels.swap_remove(worst);
        let m = 0.5 * (p.a + p.b);
        if m == p.a || m == p.b {
            return Err(Error::QuadratureNotConverged { a, b, estimate: value, error });
        }
        panels.push(panel(p.a, m, &mut f));
        panels.push(panel(m, p.b, &mut f));
    }
}
