//! Polynomial expansion and half-line power expansions of expression trees.

use super::Expr;

/// Polynomial in `x` whose coefficients are polynomials in `t`:
/// `coeffs[i][j]` multiplies `x^i t^j`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Bivariate {
    coeffs: Vec<Vec<f64>>,
}

impl Bivariate {
    fn constant(c: f64) -> Self {
        Bivariate { coeffs: vec![vec![c]] }
    }

    pub(crate) fn from_expr(e: &Expr) -> Option<Self> {
        match e {
            Expr::Const(c) => Some(Self::constant(*c)),
            Expr::X => Some(Bivariate { coeffs: vec![vec![0.0], vec![1.0]] }),
            Expr::T => Some(Bivariate { coeffs: vec![vec![0.0, 1.0]] }),
            Expr::Add(a, b) => Some(Self::from_expr(a)?.add(&Self::from_expr(b)?)),
            Expr::Mul(a, b) => Some(Self::from_expr(a)?.mul(&Self::from_expr(b)?)),
            Expr::Pow(a, n) => {
                if a.depends_on_t() {
                    return None;
                }
                let base = Self::from_expr(a)?;
                let mut acc = Self::constant(1.0);
                for _ in 0..*n {
                    acc = acc.mul(&base);
                }
                Some(acc)
            }
            Expr::AbsPow(..) | Expr::SignedPow(..) | Expr::Exp(_) => None,
        }
    }

    fn add(&self, other: &Self) -> Self {
        let rows = self.coeffs.len().max(other.coeffs.len());
        let mut coeffs = vec![Vec::new(); rows];
        for (i, row) in coeffs.iter_mut().enumerate() {
            let a = self.coeffs.get(i).map(Vec::as_slice).unwrap_or(&[]);
            let b = other.coeffs.get(i).map(Vec::as_slice).unwrap_or(&[]);
            *row = (0..a.len().max(b.len()))
                .map(|j| a.get(j).copied().unwrap_or(0.0) + b.get(j).copied().unwrap_or(0.0))
                .collect();
        }
        Bivariate { coeffs }
    }

    fn mul(&self, other: &Self) -> Self {
        let rows = self.coeffs.len() + other.coeffs.len() - 1;
        let mut coeffs: Vec<Vec<f64>> = vec![Vec::new(); rows];
        for (i, ra) in self.coeffs.iter().enumerate() {
            for (k, rb) in other.coeffs.iter().enumerate() {
                if ra.is_empty() || rb.is_empty() {
                    continue;
                }
                let row = &mut coeffs[i + k];
                let need = ra.len() + rb.len() - 1;
                if row.len() < need {
                    row.resize(need, 0.0);
                }
                for (j, &a) in ra.iter().enumerate() {
                    for (l, &b) in rb.iter().enumerate() {
                        row[j + l] += a * b;
                    }
                }
            }
        }
        Bivariate { coeffs }
    }

    pub(crate) fn degree_in_x(&self) -> usize {
        self.coeffs
            .iter()
            .rposition(|row| row.iter().any(|&c| c != 0.0))
            .unwrap_or(0)
    }

    pub(crate) fn depends_on_t(&self) -> bool {
        self.coeffs.iter().any(|row| row.iter().skip(1).any(|&c| c != 0.0))
    }

    pub(crate) fn x_coefficients_at(&self, t: f64) -> Vec<f64> {
        let mut out: Vec<f64> = self
            .coeffs
            .iter()
            .map(|row| row.iter().rev().fold(0.0, |s, &a| s * t + a))
            .collect();
        out.truncate(self.degree_in_x() + 1);
        out
    }

    /// Coefficients with trailing zero rows and columns removed.
    pub(crate) fn into_coefficients(mut self) -> Vec<Vec<f64>> {
        for row in &mut self.coeffs {
            while row.len() > 1 && row.last() == Some(&0.0) {
                row.pop();
            }
        }
        self.coeffs.truncate(self.degree_in_x() + 1);
        self.coeffs
    }
}

/// One term `c·|x|^p` of a [`PowerTerms`] expansion, with separate
/// coefficients on the positive and negative half-lines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerTerm {
    pub exponent: f64,
    /// Coefficient of `|x|^p` for `x > 0`.
    pub positive: f64,
    /// Coefficient of `|x|^p` for `x < 0`.
    pub negative: f64,
}

/// Exact representation `f(x) = Σ_k c_k^± |x|^{p_k}` on each half-line.
///
/// Polynomials and abs-powers of monomials have such a form, which is what
/// tail (integrability, growth, Lipschitz) analysis needs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PowerTerms {
    terms: Vec<PowerTerm>,
}

const EXPONENT_MERGE: f64 = 1e-12;

impl PowerTerms {
    pub fn constant(c: f64) -> Self {
        let mut out = PowerTerms::default();
        out.push(0.0, c, c);
        out
    }

    fn monomial(k: u32) -> Self {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        let mut out = PowerTerms::default();
        out.push(k as f64, 1.0, sign);
        out
    }

    fn push(&mut self, exponent: f64, positive: f64, negative: f64) {
        if let Some(term) = self
            .terms
            .iter_mut()
            .find(|term| (term.exponent - exponent).abs() < EXPONENT_MERGE)
        {
            term.positive += positive;
            term.negative += negative;
        } else {
            self.terms.push(PowerTerm { exponent, positive, negative });
        }
    }

    pub fn terms(&self) -> &[PowerTerm] {
        &self.terms
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for t in &other.terms {
            out.push(t.exponent, t.positive, t.negative);
        }
        out
    }

    pub fn scale(&self, c: f64) -> Self {
        PowerTerms {
            terms: self
                .terms
                .iter()
                .map(|t| PowerTerm { exponent: t.exponent, positive: c * t.positive, negative: c * t.negative })
                .collect(),
        }
    }

    /// Same exponents with every coefficient replaced by its magnitude.
    pub fn abs_coefficients(&self) -> Self {
        PowerTerms {
            terms: self
                .terms
                .iter()
                .map(|t| PowerTerm { exponent: t.exponent, positive: t.positive.abs(), negative: t.negative.abs() })
                .collect(),
        }
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut out = PowerTerms::default();
        for a in &self.terms {
            for b in &other.terms {
                out.push(a.exponent + b.exponent, a.positive * b.positive, a.negative * b.negative);
            }
        }
        out
    }

    /// Largest exponent carrying a nonzero coefficient on either side.
    pub fn growth_exponent(&self) -> Option<f64> {
        self.terms
            .iter()
            .filter(|t| t.positive != 0.0 || t.negative != 0.0)
            .map(|t| t.exponent)
            .fold(None, |m: Option<f64>, p| Some(m.map_or(p, |m| m.max(p))))
    }

    /// Terms sorted by decreasing exponent.
    pub fn descending(&self) -> Vec<PowerTerm> {
        let mut v = self.terms.clone();
        v.sort_by(|a, b| b.exponent.total_cmp(&a.exponent));
        v
    }

    pub(crate) fn from_expr(e: &Expr) -> Option<Self> {
        match e {
            Expr::Const(c) => Some(Self::constant(*c)),
            Expr::X => Some(Self::monomial(1)),
            Expr::T | Expr::Exp(_) => None,
            Expr::Add(a, b) => Some(Self::from_expr(a)?.add(&Self::from_expr(b)?)),
            Expr::Mul(a, b) => Some(Self::from_expr(a)?.mul(&Self::from_expr(b)?)),
            Expr::Pow(a, n) => {
                let base = Self::from_expr(a)?;
                let mut acc = Self::constant(1.0);
                for _ in 0..*n {
                    acc = acc.mul(&base);
                }
                Some(acc)
            }
            Expr::AbsPow(a, s) => {
                let (coef, k) = monomial_of(a)?;
                let mag = coef.abs().powf(*s);
                let mut out = PowerTerms::default();
                out.push(k as f64 * s, mag, mag);
                Some(out)
            }
            Expr::SignedPow(a, p) => {
                let (coef, k) = monomial_of(a)?;
                let mag = coef.abs().powf(*p) * coef.signum();
                let neg_sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                let mut out = PowerTerms::default();
                out.push(k as f64 * p, mag, mag * neg_sign);
                Some(out)
            }
        }
    }
}

/// `(c, k)` when `e` is exactly the monomial `c·x^k`.
fn monomial_of(e: &Expr) -> Option<(f64, u32)> {
    let coeffs = Bivariate::from_expr(e)?;
    if coeffs.depends_on_t() {
        return None;
    }
    let c = coeffs.x_coefficients_at(0.0);
    let nonzero: Vec<usize> = (0..c.len()).filter(|&i| c[i] != 0.0).collect();
    match nonzero.as_slice() {
        [k] => Some((c[*k], *k as u32)),
        _ => None,
    }
}
