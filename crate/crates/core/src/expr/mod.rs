//! Scalar expressions in `x` (and optionally `t`) with exact symbolic
//! differentiation.
//!
//! The grammar is deliberately small: real constants, the variables `x` and
//! `t`, sums, products, non-negative integer powers, absolute-value powers
//! `abs(e)^s` with `s > 0`, and `exp(e)`. Division is only accepted by a
//! nonzero constant, which keeps [`Expr::differentiate`] total on everything
//! the parser can produce.

mod parser;
mod poly;

use std::fmt;

pub use parser::parse;
pub use poly::{PowerTerm, PowerTerms};

/// Errors produced while parsing, differentiating or evaluating expressions.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExprError {
    #[error("syntax error at position {pos}: {message}")]
    Syntax { pos: usize, message: String },
    #[error("division by a non-constant expression at position {pos}")]
    NonConstantDivision { pos: usize },
    #[error("division by zero at position {pos}")]
    DivisionByZero { pos: usize },
    #[error("abs() exponent must be positive, got {exponent} at position {pos}")]
    NegativeAbsExponent { pos: usize, exponent: f64 },
    #[error("invalid exponent at position {pos}: {message}")]
    InvalidExponent { pos: usize, message: String },
    #[error("abs-power with exponent {exponent} is not differentiable at 0")]
    NonDifferentiable { exponent: f64 },
    #[error("evaluation overflowed to {value} at x = {x}, t = {t}")]
    Overflow { x: f64, t: f64, value: f64 },
}

/// Expression tree.
///
/// `AbsPow(e, s)` is `|e|^s` and `SignedPow(e, p)` is `sign(e)·|e|^p`; the
/// latter only appears as the derivative of an abs-power and is printed in
/// terms of `abs`. Both evaluate to `0` when `e = 0`.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    X,
    T,
    Add(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, u32),
    AbsPow(Box<Expr>, f64),
    SignedPow(Box<Expr>, f64),
    Exp(Box<Expr>),
}

impl Expr {
    pub fn constant(value: f64) -> Expr {
        Expr::Const(value)
    }

    /// `|base|^s`, rejecting `s <= 0`.
    pub fn abs_pow(base: Expr, s: f64) -> Result<Expr, ExprError> {
        if !(s > 0.0) || !s.is_finite() {
            return Err(ExprError::NegativeAbsExponent { pos: 0, exponent: s });
        }
        Ok(match base {
            Expr::AbsPow(inner, r) => Expr::AbsPow(inner, r * s),
            Expr::Const(c) => Expr::Const(c.abs().powf(s)),
            other => Expr::AbsPow(Box::new(other), s),
        })
    }

    /// Sum with constant folding and zero elimination.
    pub fn add(a: Expr, b: Expr) -> Expr {
        match (a, b) {
            (Expr::Const(p), Expr::Const(q)) => Expr::Const(p + q),
            (Expr::Const(z), other) | (other, Expr::Const(z)) if z == 0.0 => other,
            (a, b) => Expr::Add(Box::new(a), Box::new(b)),
        }
    }

    /// Product with constant folding, zero and one elimination.
    pub fn mul(a: Expr, b: Expr) -> Expr {
        match (a, b) {
            (Expr::Const(p), Expr::Const(q)) => Expr::Const(p * q),
            (Expr::Const(z), _) | (_, Expr::Const(z)) if z == 0.0 => Expr::Const(0.0),
            (Expr::Const(o), other) | (other, Expr::Const(o)) if o == 1.0 => other,
            (Expr::Const(p), Expr::Mul(inner_a, inner_b)) => match *inner_a {
                Expr::Const(q) => Expr::mul(Expr::Const(p * q), *inner_b),
                inner_a => Expr::Mul(
                    Box::new(Expr::Const(p)),
                    Box::new(Expr::Mul(Box::new(inner_a), inner_b)),
                ),
            },
            (a, b) => Expr::Mul(Box::new(a), Box::new(b)),
        }
    }

    pub fn neg(a: Expr) -> Expr {
        Expr::mul(Expr::Const(-1.0), a)
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        Expr::add(a, Expr::neg(b))
    }

    pub fn pow(base: Expr, n: u32) -> Expr {
        match (base, n) {
            (_, 0) => Expr::Const(1.0),
            (base, 1) => base,
            (Expr::Const(c), n) => Expr::Const(c.powi(n as i32)),
            (base, n) => Expr::Pow(Box::new(base), n),
        }
    }

    fn signed_pow(base: Expr, p: f64) -> Expr {
        if p == 1.0 {
            return base;
        }
        match base {
            Expr::Const(c) if c == 0.0 => Expr::Const(0.0),
            Expr::Const(c) => Expr::Const(c.signum() * c.abs().powf(p)),
            other => Expr::SignedPow(Box::new(other), p),
        }
    }

    pub fn exp(a: Expr) -> Expr {
        match a {
            Expr::Const(c) => Expr::Const(c.exp()),
            other => Expr::Exp(Box::new(other)),
        }
    }

    /// Linear combination `Σ coeffs[i]·terms[i]`, skipping zero coefficients.
    pub fn linear_combination(coeffs: &[f64], terms: &[Expr]) -> Expr {
        coeffs
            .iter()
            .zip(terms)
            .fold(Expr::Const(0.0), |acc, (&c, e)| {
                Expr::add(acc, Expr::mul(Expr::Const(c), e.clone()))
            })
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Expr::Const(c) if *c == 0.0)
    }

    /// Whether `x` appears anywhere in the tree.
    pub fn depends_on_x(&self) -> bool {
        match self {
            Expr::X => true,
            Expr::Const(_) | Expr::T => false,
            Expr::Add(a, b) | Expr::Mul(a, b) => a.depends_on_x() || b.depends_on_x(),
            Expr::Pow(a, _) | Expr::AbsPow(a, _) | Expr::SignedPow(a, _) | Expr::Exp(a) => {
                a.depends_on_x()
            }
        }
    }

    /// Whether `t` appears anywhere in the tree.
    pub fn depends_on_t(&self) -> bool {
        match self {
            Expr::T => true,
            Expr::Const(_) | Expr::X => false,
            Expr::Add(a, b) | Expr::Mul(a, b) => a.depends_on_t() || b.depends_on_t(),
            Expr::Pow(a, _) | Expr::AbsPow(a, _) | Expr::SignedPow(a, _) | Expr::Exp(a) => {
                a.depends_on_t()
            }
        }
    }

    pub fn evaluate(&self, x: f64, t: f64) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::X => x,
            Expr::T => t,
            Expr::Add(a, b) => a.evaluate(x, t) + b.evaluate(x, t),
            Expr::Mul(a, b) => a.evaluate(x, t) * b.evaluate(x, t),
            Expr::Pow(a, n) => a.evaluate(x, t).powi(*n as i32),
            Expr::AbsPow(a, s) => abs_power(a.evaluate(x, t), *s),
            Expr::SignedPow(a, p) => {
                let v = a.evaluate(x, t);
                if v == 0.0 {
                    0.0
                } else {
                    v.signum() * abs_power(v, *p)
                }
            }
            Expr::Exp(a) => a.evaluate(x, t).exp(),
        }
    }

    /// Like [`Expr::evaluate`], but reports a non-finite result as
    /// [`ExprError::Overflow`] carrying the raw value.
    pub fn evaluate_checked(&self, x: f64, t: f64) -> Result<f64, ExprError> {
        let value = self.evaluate(x, t);
        if value.is_finite() {
            Ok(value)
        } else {
            Err(ExprError::Overflow { x, t, value })
        }
    }

    /// Exact derivative with respect to `x`.
    pub fn differentiate(&self) -> Result<Expr, ExprError> {
        Ok(match self {
            Expr::Const(_) | Expr::T => Expr::Const(0.0),
            Expr::X => Expr::Const(1.0),
            Expr::Add(a, b) => Expr::add(a.differentiate()?, b.differentiate()?),
            Expr::Mul(a, b) => Expr::add(
                Expr::mul(a.differentiate()?, (**b).clone()),
                Expr::mul((**a).clone(), b.differentiate()?),
            ),
            Expr::Pow(a, n) => Expr::mul(
                Expr::mul(Expr::Const(*n as f64), Expr::pow((**a).clone(), n - 1)),
                a.differentiate()?,
            ),
            Expr::AbsPow(a, s) => {
                if *s <= 1.0 {
                    return Err(ExprError::NonDifferentiable { exponent: *s });
                }
                Expr::mul(
                    Expr::mul(Expr::Const(*s), Expr::signed_pow((**a).clone(), s - 1.0)),
                    a.differentiate()?,
                )
            }
            Expr::SignedPow(a, p) => {
                // p == 1 never survives construction: signed_pow(u, 1) = u.
                if *p < 1.0 {
                    return Err(ExprError::NonDifferentiable { exponent: *p });
                }
                let inner = if *p == 1.0 {
                    Expr::Const(1.0)
                } else {
                    Expr::mul(Expr::Const(*p), Expr::abs_pow((**a).clone(), p - 1.0)?)
                };
                Expr::mul(inner, a.differentiate()?)
            }
            Expr::Exp(a) => Expr::mul(self.clone(), a.differentiate()?),
        })
    }

    /// Degree in `x` when the tree is a polynomial: no `abs`/`exp` nodes and
    /// no `t` inside a power. The zero polynomial has degree 0.
    pub fn polynomial_degree(&self) -> Option<usize> {
        poly::Bivariate::from_expr(self).map(|p| p.degree_in_x())
    }

    pub fn is_polynomial(&self) -> bool {
        self.polynomial_degree().is_some()
    }

    /// Coefficients `[a_0, a_1, ...]` of a `t`-free polynomial in `x`.
    pub fn polynomial_coefficients(&self) -> Option<Vec<f64>> {
        let p = poly::Bivariate::from_expr(self)?;
        if p.depends_on_t() {
            return None;
        }
        Some(p.x_coefficients_at(0.0))
    }

    /// Exact half-line power expansion of a `t`-free expression, or `None`
    /// when the tree contains `exp`, `t`, or an abs-power of something other
    /// than a monomial.
    pub fn power_terms(&self) -> Option<PowerTerms> {
        PowerTerms::from_expr(self)
    }

    /// Substitute a numeric value for `t` and fold constants.
    pub fn at_time(&self, t: f64) -> Expr {
        match self {
            Expr::T => Expr::Const(t),
            Expr::Const(_) | Expr::X => self.clone(),
            Expr::Add(a, b) => Expr::add(a.at_time(t), b.at_time(t)),
            Expr::Mul(a, b) => Expr::mul(a.at_time(t), b.at_time(t)),
            Expr::Pow(a, n) => Expr::pow(a.at_time(t), *n),
            Expr::AbsPow(a, s) => match a.at_time(t) {
                Expr::Const(c) => Expr::Const(abs_power(c, *s)),
                other => Expr::AbsPow(Box::new(other), *s),
            },
            Expr::SignedPow(a, p) => Expr::signed_pow(a.at_time(t), *p),
            Expr::Exp(a) => Expr::exp(a.at_time(t)),
        }
    }

    /// Prepare the expression for repeated evaluation. Polynomials are
    /// evaluated by Horner's rule, everything else by walking the tree.
    pub fn compile(&self) -> CompiledExpr {
        match poly::Bivariate::from_expr(self) {
            Some(p) => CompiledExpr::Poly(p.into_coefficients()),
            None => CompiledExpr::Tree(self.clone()),
        }
    }
}

fn abs_power(v: f64, s: f64) -> f64 {
    let a = v.abs();
    if s.fract() == 0.0 && s <= 64.0 {
        a.powi(s as i32)
    } else {
        a.powf(s)
    }
}

/// Evaluation form produced by [`Expr::compile`].
#[derive(Debug, Clone)]
pub enum CompiledExpr {
    /// `coeffs[i][j]` multiplies `x^i t^j`.
    Poly(Vec<Vec<f64>>),
    Tree(Expr),
}

impl CompiledExpr {
    #[inline]
    pub fn eval(&self, x: f64, t: f64) -> f64 {
        match self {
            CompiledExpr::Poly(coeffs) => {
                let mut acc = 0.0;
                for row in coeffs.iter().rev() {
                    let c = match row.len() {
                        0 => 0.0,
                        1 => row[0],
                        _ => row.iter().rev().fold(0.0, |s, &a| s * t + a),
                    };
                    acc = acc * x + c;
                }
                acc
            }
            CompiledExpr::Tree(e) => e.evaluate(x, t),
        }
    }
}

fn needs_parens_as_base(e: &Expr) -> bool {
    !matches!(e, Expr::X | Expr::T) && !matches!(e, Expr::Const(c) if *c >= 0.0)
}

fn fmt_const(c: f64, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    if c < 0.0 || (c == 0.0 && c.is_sign_negative()) {
        write!(f, "({c:?})")
    } else {
        write!(f, "{c:?}")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => fmt_const(*c, f),
            Expr::X => f.write_str("x"),
            Expr::T => f.write_str("t"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Mul(a, b) => match **b {
                Expr::Mul(..) => write!(f, "{a}*({b})"),
                _ => write!(f, "{a}*{b}"),
            },
            Expr::Pow(a, n) => {
                if needs_parens_as_base(a) {
                    write!(f, "({a})^{n}")
                } else {
                    write!(f, "{a}^{n}")
                }
            }
            Expr::AbsPow(a, s) => write!(f, "abs({a})^{s:?}"),
            Expr::SignedPow(a, p) => write!(f, "({a})*abs({a})^{:?}", p - 1.0),
            Expr::Exp(a) => write!(f, "exp({a})"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn central_difference(e: &Expr, x: f64) -> f64 {
        let h = 1e-6;
        (e.evaluate(x + h, 0.0) - e.evaluate(x - h, 0.0)) / (2.0 * h)
    }

    #[test]
    fn evaluates_spec_examples() {
        assert_eq!(parse("x^3").unwrap().evaluate(2.0, 0.0), 8.0);
        assert_eq!(parse("abs(x)^3").unwrap().evaluate(-2.0, 0.0), 8.0);
        // 1.5^6 = 2.25^3 = 11.390625 exactly in binary floating point.
        assert_eq!(parse("x^6").unwrap().evaluate(1.5, 0.0), 11.390625);
    }

    #[test]
    fn power_rule() {
        let d = parse("x^3").unwrap().differentiate().unwrap();
        assert_eq!(
            d,
            Expr::Mul(Box::new(Expr::Const(3.0)), Box::new(Expr::Pow(Box::new(Expr::X), 2)))
        );
        assert_eq!(d.to_string(), "3.0*x^2");
        let d6 = parse("x^6").unwrap().differentiate().unwrap();
        assert_eq!(d6.evaluate(1.0, 0.0), 6.0);
    }

    #[test]
    fn abs_pow_derivative_matches_finite_difference() {
        let e = parse("abs(x)^3").unwrap();
        let d = e.differentiate().unwrap();
        let exact = d.evaluate(-2.0, 0.0);
        assert_eq!(exact, -12.0);
        assert!((central_difference(&e, -2.0) - exact).abs() < 1e-5);
    }

    #[test]
    fn abs_pow_derivative_at_zero() {
        let d = parse("abs(x)^2.5").unwrap().differentiate().unwrap();
        assert_eq!(d.evaluate(0.0, 0.0), 0.0);
        let dd = d.differentiate().unwrap();
        assert_eq!(dd.evaluate(0.0, 0.0), 0.0);
        assert!((dd.evaluate(4.0, 0.0) - 2.5 * 1.5 * 2.0).abs() < 1e-12);
        // |x|^2 twice: 2 sign(x)|x| then 2.
        let d2 = parse("abs(x)^2").unwrap().differentiate().unwrap().differentiate().unwrap();
        assert_eq!(d2.evaluate(-3.0, 0.0), 2.0);
    }

    #[test]
    fn abs_pow_not_differentiable_at_or_below_one() {
        for src in ["abs(x)", "abs(x)^0.5"] {
            let err = parse(src).unwrap().differentiate().unwrap_err();
            assert!(matches!(err, ExprError::NonDifferentiable { .. }), "{src}");
        }
        // |x|^1.5 is once differentiable, the second derivative blows up at 0.
        let once = parse("abs(x)^1.5").unwrap().differentiate().unwrap();
        assert!(once.differentiate().is_err());
    }

    #[test]
    fn polynomial_detection() {
        assert_eq!(parse("x^3").unwrap().polynomial_degree(), Some(3));
        assert_eq!(parse("abs(x)^2.5").unwrap().polynomial_degree(), None);
        assert_eq!(parse("2*x^6 - x").unwrap().polynomial_degree(), Some(6));
        assert_eq!(parse("exp(x)").unwrap().polynomial_degree(), None);
        assert_eq!(parse("(t*x)^2").unwrap().polynomial_degree(), None);
        assert_eq!(parse("1 + t*x^2").unwrap().polynomial_degree(), Some(2));
        assert_eq!(parse("x^3 - x^3").unwrap().polynomial_degree(), Some(0));
    }

    #[test]
    fn derivative_of_constant_is_zero_constant() {
        assert_eq!(parse("4.5").unwrap().differentiate().unwrap(), Expr::Const(0.0));
        assert_eq!(parse("t^2").unwrap().differentiate().unwrap(), Expr::Const(0.0));
    }

    #[test]
    fn overflow_is_flagged() {
        let e = parse("exp(x)").unwrap();
        assert!(matches!(e.evaluate_checked(1000.0, 0.0), Err(ExprError::Overflow { .. })));
        assert_eq!(e.evaluate(1000.0, 0.0), f64::INFINITY);
        assert!(e.evaluate_checked(1.0, 0.0).is_ok());
    }

    #[test]
    fn compiled_matches_tree() {
        for src in ["0.5*x^2 - 1", "(1 + 0.5*t)*x^5 - 3*x", "abs(x)^2.5 + exp(-x)", "x^3*x^3"] {
            let e = parse(src).unwrap();
            let c = e.compile();
            for &x in &[-2.3, -0.1, 0.0, 0.7, 1.9] {
                let (a, b) = (e.evaluate(x, 0.4), c.eval(x, 0.4));
                assert!((a - b).abs() <= 1e-13 * (1.0 + a.abs()), "{src} at {x}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn at_time_folds_t() {
        let e = parse("(1 + 0.5*t)*x^2").unwrap();
        let fixed = e.at_time(2.0);
        assert!(!fixed.depends_on_t());
        assert_eq!(fixed.evaluate(3.0, 99.0), 18.0);
    }

    #[test]
    fn printing_signed_pow_is_reparseable() {
        let d = parse("abs(x)^3.5").unwrap().differentiate().unwrap();
        let re = parse(&d.to_string()).unwrap();
        for &x in &[-1.7, -0.2, 0.0, 0.3, 2.2] {
            let (a, b) = (d.evaluate(x, 0.0), re.evaluate(x, 0.0));
            assert!((a - b).abs() <= 1e-14 * (1.0 + a.abs()));
        }
    }
}
