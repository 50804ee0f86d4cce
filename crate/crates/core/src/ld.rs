//! Lexicographic directional derivative (LD-derivative) arithmetic.
//!
//! An [`LdScalar`] carries a function value together with the row of its
//! LD-derivatives along a shared directions matrix with `k` columns. Smooth
//! elementals act on the row through their ordinary derivative; `abs` and
//! `max` select a row through a lexicographic comparison of `(value, row)`,
//! which is what makes the arithmetic exact for piecewise-smooth functions.
//!
//! Branch decisions use an absolute dead-zone `tol` (default
//! [`DEFAULT_ZERO_TOL`]): an entry with `|v| <= tol` counts as zero.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Dead-zone for sign and tie decisions.
pub const DEFAULT_ZERO_TOL: f64 = 1e-12;

/// Relative singular-value threshold used to decide full row rank of a
/// directions matrix.
pub const DIRECTIONS_RANK_TOL: f64 = 1e-10;

fn check_finite(v: &[f64], what: &str) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(Error::invalid(format!(
            "{what}: non-finite entry {} at position {i}",
            v[i]
        ))),
        None => Ok(()),
    }
}

/// Sign of the first entry with magnitude above `tol`, or 0.
pub fn fsign(v: &[f64], tol: f64) -> Result<i8> {
    if v.is_empty() {
        return Err(Error::invalid("fsign of an empty sequence"));
    }
    check_finite(v, "fsign")?;
    Ok(first_sign(v.iter().copied(), tol))
}

fn first_sign(v: impl Iterator<Item = f64>, tol: f64) -> i8 {
    for x in v {
        if x > tol {
            return 1;
        }
        if x < -tol {
            return -1;
        }
    }
    0
}

/// `a >=_lex b` with the dead-zone applied to the entrywise difference.
fn lex_ge(a: &[f64], b: &[f64], tol: f64) -> bool {
    first_sign(a.iter().zip(b).map(|(x, y)| x - y), tol) >= 0
}

/// Shifted lexicographic maximum: the trailing `k` entries of whichever of
/// `a`, `b` is lexicographically larger. Ties select `a`.
pub fn slmax(a: &[f64], b: &[f64], tol: f64) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "slmax rows differ in length ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::invalid("slmax needs rows of length >= 2"));
    }
    check_finite(a, "slmax")?;
    check_finite(b, "slmax")?;
    let winner = if lex_ge(a, b, tol) { a } else { b };
    Ok(winner[1..].to_vec())
}

/// Drops the first column.
pub fn lshift(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.ncols() < 2 {
        return Err(Error::invalid(format!(
            "lshift needs at least two columns, got {}",
            m.ncols()
        )));
    }
    Ok(m.columns(1, m.ncols() - 1).into_owned())
}

/// Smooth elementals with a closed-form derivative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SmoothFn {
    Exp,
    Log,
    Sin,
    Cos,
    Sqrt,
    /// `x^a` for a stored constant exponent.
    Pow(f64),
}

impl SmoothFn {
    pub fn name(&self) -> &'static str {
        match self {
            SmoothFn::Exp => "exp",
            SmoothFn::Log => "log",
            SmoothFn::Sin => "sin",
            SmoothFn::Cos => "cos",
            SmoothFn::Sqrt => "sqrt",
            SmoothFn::Pow(_) => "pow",
        }
    }

    /// Value and slope at `x`, or a domain error.
    pub fn value_and_slope(&self, x: f64, tol: f64) -> Result<(f64, f64)> {
        let out = match *self {
            SmoothFn::Exp => {
                let e = x.exp();
                (e, e)
            }
            SmoothFn::Log => {
                if x <= tol {
                    return Err(Error::domain("", format!("log of non-positive value {x}")));
                }
                (x.ln(), 1.0 / x)
            }
            SmoothFn::Sin => (x.sin(), x.cos()),
            SmoothFn::Cos => (x.cos(), -x.sin()),
            SmoothFn::Sqrt => {
                if x <= tol {
                    return Err(Error::domain("", format!("sqrt of non-positive value {x}")));
                }
                let s = x.sqrt();
                (s, 0.5 / s)
            }
            SmoothFn::Pow(a) => pow_value_and_slope(x, a, tol)?,
        };
        if !out.0.is_finite() || !out.1.is_finite() {
            return Err(Error::domain("", format!("{} overflowed at {x}", self.name())));
        }
        Ok(out)
    }
}

fn pow_value_and_slope(x: f64, a: f64, tol: f64) -> Result<(f64, f64)> {
    let integral = a.fract() == 0.0 && a.abs() <= i32::MAX as f64;
    if integral {
        let n = a as i32;
        if n == 0 {
            return Ok((1.0, 0.0));
        }
        if n < 0 && x.abs() <= tol {
            return Err(Error::domain(
                "",
                format!("negative power {a} of (near-)zero value {x}"),
            ));
        }
        Ok((x.powi(n), a * x.powi(n - 1)))
    } else {
        if x <= tol {
            return Err(Error::domain(
                "",
                format!("fractional power {a} of non-positive value {x}"),
            ));
        }
        Ok((x.powf(a), a * x.powf(a - 1.0)))
    }
}

/// A scalar value with its LD-derivative row.
#[derive(Debug, Clone, PartialEq)]
pub struct LdScalar {
    value: f64,
    deriv: Vec<f64>,
}

impl LdScalar {
    pub fn new(value: f64, deriv: Vec<f64>) -> Self {
        LdScalar { value, deriv }
    }

    /// A constant: zero derivative row of width `k`.
    pub fn constant(value: f64, k: usize) -> Self {
        LdScalar {
            value,
            deriv: vec![0.0; k],
        }
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn deriv(&self) -> &[f64] {
        &self.deriv
    }

    pub fn into_deriv(self) -> Vec<f64> {
        self.deriv
    }

    pub fn width(&self) -> usize {
        self.deriv.len()
    }

    /// `[value, deriv...]`, the row compared by `abs` and `max`.
    pub fn augmented(&self) -> Vec<f64> {
        let mut row = Vec::with_capacity(1 + self.deriv.len());
        row.push(self.value);
        row.extend_from_slice(&self.deriv);
        row
    }

    fn same_width(&self, other: &Self) -> Result<()> {
        if self.deriv.len() != other.deriv.len() {
            return Err(Error::invalid(format!(
                "LD operands have different direction counts ({} vs {})",
                self.deriv.len(),
                other.deriv.len()
            )));
        }
        Ok(())
    }

    fn zip(&self, other: &Self, value: f64, f: impl Fn(f64, f64) -> f64) -> Self {
        LdScalar {
            value,
            deriv: self
                .deriv
                .iter()
                .zip(&other.deriv)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.same_width(other)?;
        Ok(self.zip(other, self.value + other.value, |a, b| a + b))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.same_width(other)?;
        Ok(self.zip(other, self.value - other.value, |a, b| a - b))
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.same_width(other)?;
        let (u, v) = (self.value, other.value);
        Ok(self.zip(other, u * v, |a, b| v * a + u * b))
    }

    pub fn div(&self, other: &Self, tol: f64) -> Result<Self> {
        self.same_width(other)?;
        let (u, v) = (self.value, other.value);
        if v.abs() <= tol {
            return Err(Error::domain("", format!("division by (near-)zero value {v}")));
        }
        let q = u / v;
        Ok(self.zip(other, q, |a, b| (a - q * b) / v))
    }

    pub fn neg(&self) -> Self {
        LdScalar {
            value: -self.value,
            deriv: self.deriv.iter().map(|a| -a).collect(),
        }
    }

    pub fn smooth(&self, f: SmoothFn, tol: f64) -> Result<Self> {
        let (value, slope) = f.value_and_slope(self.value, tol)?;
        Ok(LdScalar {
            value,
            deriv: self.deriv.iter().map(|a| slope * a).collect(),
        })
    }

    /// `abs` together with the selected sign (`fsign` of the augmented row).
    pub fn abs_branch(&self, tol: f64) -> Result<(Self, i8)> {
        let s = fsign(&self.augmented(), tol)?;
        let sf = f64::from(s);
        Ok((
            LdScalar {
                value: self.value.abs(),
                deriv: self.deriv.iter().map(|a| sf * a).collect(),
            },
            s,
        ))
    }

    /// `max` together with the selected operand (`0` for `self`, `1` for `other`).
    pub fn max_branch(&self, other: &Self, tol: f64) -> Result<(Self, i8)> {
        self.same_width(other)?;
        let (a, b) = (self.augmented(), other.augmented());
        check_finite(&a, "max")?;
        check_finite(&b, "max")?;
        let (deriv, pick) = if lex_ge(&a, &b, tol) {
            (self.deriv.clone(), 0)
        } else {
            (other.deriv.clone(), 1)
        };
        Ok((
            LdScalar {
                value: self.value.max(other.value),
                deriv,
            },
            pick,
        ))
    }
}

/// `|x|` with derivative `fsign(x, x') * x'`.
pub fn ld_abs(x: &LdScalar, tol: f64) -> Result<LdScalar> {
    x.abs_branch(tol).map(|(r, _)| r)
}

pub fn ld_max(x: &LdScalar, y: &LdScalar, tol: f64) -> Result<LdScalar> {
    x.max_branch(y, tol).map(|(r, _)| r)
}

/// `min(x, y) = -max(-x, -y)`.
pub fn ld_min(x: &LdScalar, y: &LdScalar, tol: f64) -> Result<LdScalar> {
    Ok(ld_max(&x.neg(), &y.neg(), tol)?.neg())
}

/// `mid(x, y, z) = max(min(x, y), min(max(x, y), z))`.
pub fn ld_mid(x: &LdScalar, y: &LdScalar, z: &LdScalar, tol: f64) -> Result<LdScalar> {
    let lo = ld_min(x, y, tol)?;
    let hi = ld_max(x, y, tol)?;
    ld_max(&lo, &ld_min(&hi, z, tol)?, tol)
}

pub fn ld_smooth_unary(f: SmoothFn, x: &LdScalar, tol: f64) -> Result<LdScalar> {
    x.smooth(f, tol)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
}

/// Componentwise arithmetic on LD vectors. `Neg` ignores `y`; the binary
/// operations require it.
pub fn ld_arith(op: ArithOp, x: &LdVector, y: Option<&LdVector>, tol: f64) -> Result<LdVector> {
    if op == ArithOp::Neg {
        return LdVector::from_scalars(&x.scalars().iter().map(LdScalar::neg).collect::<Vec<_>>());
    }
    let y = y.ok_or_else(|| Error::invalid(format!("{op:?} needs two operands")))?;
    if x.len() != y.len() || x.width() != y.width() {
        return Err(Error::invalid(format!(
            "non-conformable LD vectors ({}x{} vs {}x{})",
            x.len(),
            x.width(),
            y.len(),
            y.width()
        )));
    }
    let out = x
        .scalars()
        .iter()
        .zip(y.scalars().iter())
        .map(|(a, b)| match op {
            ArithOp::Add => a.add(b),
            ArithOp::Sub => a.sub(b),
            ArithOp::Mul => a.mul(b),
            ArithOp::Div => a.div(b, tol),
            ArithOp::Neg => unreachable!(),
        })
        .collect::<Result<Vec<_>>>()?;
    LdVector::from_scalars(&out)
}

/// A vector value with its `m x k` LD-derivative matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LdVector {
    value: DVector<f64>,
    deriv: DMatrix<f64>,
}

impl LdVector {
    pub fn new(value: DVector<f64>, deriv: DMatrix<f64>) -> Result<Self> {
        if value.len() != deriv.nrows() {
            return Err(Error::invalid(format!(
                "value has {} entries but derivative has {} rows",
                value.len(),
                deriv.nrows()
            )));
        }
        if deriv.ncols() == 0 {
            return Err(Error::invalid("LD vectors need at least one direction"));
        }
        Ok(LdVector { value, deriv })
    }

    /// The identity map seeded at `x0` along `m`: derivative equals `m`.
    pub fn seed(x0: &[f64], m: &DirectionsMatrix) -> Result<Self> {
        if x0.len() != m.dim() {
            return Err(Error::invalid(format!(
                "point has {} entries but directions matrix has {} rows",
                x0.len(),
                m.dim()
            )));
        }
        LdVector::new(DVector::from_column_slice(x0), m.as_matrix().clone())
    }

    pub fn from_scalars(parts: &[LdScalar]) -> Result<Self> {
        let k = parts.first().map(LdScalar::width).unwrap_or(0);
        if parts.iter().any(|p| p.width() != k) {
            return Err(Error::invalid("LD components have different direction counts"));
        }
        let value = DVector::from_iterator(parts.len(), parts.iter().map(LdScalar::value));
        let deriv = DMatrix::from_fn(parts.len(), k, |i, j| parts[i].deriv[j]);
        LdVector::new(value, deriv)
    }

    pub fn scalars(&self) -> Vec<LdScalar> {
        (0..self.len())
            .map(|i| LdScalar::new(self.value[i], self.deriv.row(i).iter().copied().collect()))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn width(&self) -> usize {
        self.deriv.ncols()
    }

    pub fn value(&self) -> &DVector<f64> {
        &self.value
    }

    pub fn deriv(&self) -> &DMatrix<f64> {
        &self.deriv
    }
}

/// An `n x k` matrix whose columns are probing directions, most important first.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionsMatrix(DMatrix<f64>);

impl DirectionsMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() == 0 || m.ncols() == 0 {
            return Err(Error::invalid("directions matrix must be at least 1x1"));
        }
        check_finite(m.as_slice(), "directions matrix")?;
        Ok(DirectionsMatrix(m))
    }

    /// `[d  I_n]`.
    pub fn with_primary(d: &[f64]) -> Result<Self> {
        let n = d.len();
        if n == 0 {
            return Err(Error::invalid("primary direction must be non-empty"));
        }
        check_finite(d, "primary direction")?;
        Ok(DirectionsMatrix(DMatrix::from_fn(n, n + 1, |i, j| {
            if j == 0 {
                d[i]
            } else if i + 1 == j {
                1.0
            } else {
                0.0
            }
        })))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.0.ncols()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn full_row_rank(&self) -> bool {
        let n = self.0.nrows();
        if self.0.ncols() < n {
            return false;
        }
        let sv = self.0.clone().svd(false, false).singular_values;
        let max = sv.iter().copied().fold(0.0, f64::max);
        max > 0.0 && sv.iter().filter(|&&s| s > DIRECTIONS_RANK_TOL * max).count() == n
    }

    /// True when the matrix is exactly `[d  I_n]` for some `d`.
    pub fn is_primary_form(&self) -> bool {
        let n = self.0.nrows();
        self.0.ncols() == n + 1
            && (0..n).all(|i| (0..n).all(|j| self.0[(i, j + 1)] == if i == j { 1.0 } else { 0.0 }))
    }
}

/// An L-derivative `J_L` with `J_L * M = f'(x0; M)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LDerivative(DMatrix<f64>);

impl LDerivative {
    pub fn entries(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }
}

/// Solves `J_L * M = ld` for `J_L`.
///
/// For `M = [d  I_n]` the solution is `lshift(ld)` exactly; otherwise the
/// minimum-norm least-squares solution through the SVD pseudo-inverse of `M`.
pub fn extract_l_derivative(ld: &DMatrix<f64>, m: &DirectionsMatrix) -> Result<LDerivative> {
    if ld.ncols() != m.ncols() {
        return Err(Error::invalid(format!(
            "LD-derivative has {} columns but directions matrix has {}",
            ld.ncols(),
            m.ncols()
        )));
    }
    if !m.full_row_rank() {
        return Err(Error::Precondition(
            "directions matrix does not have full row rank".into(),
        ));
    }
    if m.is_primary_form() {
        return Ok(LDerivative(lshift(ld)?));
    }
    let pinv = m
        .as_matrix()
        .clone()
        .svd(true, true)
        .pseudo_inverse(0.0)
        .map_err(|e| Error::invalid(e.to_string()))?;
    Ok(LDerivative(ld * pinv))
}

/// A vector function that can be evaluated both over reals and in LD arithmetic.
pub trait LdFunction {
    fn input_dim(&self) -> usize;

    fn eval(&self, x: &[f64]) -> Result<Vec<f64>>;

    fn eval_ld(&self, x: &[LdScalar]) -> Result<Vec<LdScalar>>;

    /// `f(x0)` and `f'(x0; M)`.
    fn ld_derivative(&self, x0: &[f64], m: &DirectionsMatrix) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let seeds = LdVector::seed(x0, m)?.scalars();
        let out = self.eval_ld(&seeds)?;
        let k = m.ncols();
        let deriv = DMatrix::from_fn(out.len(), k, |i, j| out[i].deriv()[j]);
        Ok((out.iter().map(LdScalar::value).collect(), deriv))
    }
}

/// `f(x0) + J_L f(x0; [d I]) d`, the first-order approximation of `f(x0 + d)`.
pub fn taylor_approx<F: LdFunction + ?Sized>(f: &F, x0: &[f64], d: &[f64]) -> Result<Vec<f64>> {
    if x0.len() != f.input_dim() || d.len() != f.input_dim() {
        return Err(Error::invalid(format!(
            "expected points of dimension {}, got x0 {} and d {}",
            f.input_dim(),
            x0.len(),
            d.len()
        )));
    }
    let m = DirectionsMatrix::with_primary(d)?;
    let (value, ld) = f.ld_derivative(x0, &m)?;
    let jl = extract_l_derivative(&ld, &m)?;
    let step = jl.entries() * DVector::from_column_slice(d);
    Ok(value.iter().zip(step.iter()).map(|(v, s)| v + s).collect())
}

/// `r(a) = |f(x0 + a d) - taylor_approx(f, x0, a d)| / a` for each scale `a`.
pub fn taylor_residual_profile<F: LdFunction + ?Sized>(
    f: &F,
    x0: &[f64],
    d: &[f64],
    scales: &[f64],
) -> Result<Vec<f64>> {
    if scales.is_empty() {
        return Err(Error::invalid("scale ladder is empty"));
    }
    if scales.iter().any(|&a| !(a > 0.0) || !a.is_finite()) || scales.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::invalid(
            "scales must be positive, finite and strictly decreasing",
        ));
    }
    scales
        .iter()
        .map(|&a| {
            let step: Vec<f64> = d.iter().map(|v| a * v).collect();
            let moved: Vec<f64> = x0.iter().zip(&step).map(|(x, s)| x + s).collect();
            let exact = f.eval(&moved)?;
            let approx = taylor_approx(f, x0, &step)?;
            let err = exact
                .iter()
                .zip(&approx)
                .map(|(e, p)| (e - p) * (e - p))
                .sum::<f64>()
                .sqrt();
            Ok(err / a)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOL: f64 = DEFAULT_ZERO_TOL;

    fn s(value: f64, deriv: &[f64]) -> LdScalar {
        LdScalar::new(value, deriv.to_vec())
    }

    #[test]
    fn fsign_examples() {
        assert_eq!(fsign(&[0.0, 2.0, -2.0], TOL).unwrap(), 1);
        assert_eq!(fsign(&[0.0, 0.0, 0.0], TOL).unwrap(), 0);
        assert_eq!(fsign(&[-3.0, 5.0], TOL).unwrap(), -1);
        assert_eq!(fsign(&[1e-13, -1.0], TOL).unwrap(), -1);
    }

    #[test]
    fn fsign_rejects_bad_input() {
        assert!(fsign(&[], TOL).is_err());
        assert!(fsign(&[0.0, f64::NAN], TOL).is_err());
        assert!(fsign(&[f64::INFINITY], TOL).is_err());
    }

    #[test]
    fn slmax_examples() {
        assert_eq!(
            slmax(&[0.0; 5], &[0.4, 0.1, 0.2, 0.3, 0.5], TOL).unwrap(),
            vec![0.1, 0.2, 0.3, 0.5]
        );
        assert_eq!(
            slmax(&[1.0, 7.0, 7.0], &[1.0, 7.0, 7.0], TOL).unwrap(),
            vec![7.0, 7.0]
        );
        assert_eq!(
            slmax(&[0.0, 0.0, 2.0], &[0.0, 0.0, -1.0], TOL).unwrap(),
            vec![0.0, 2.0]
        );
    }

    #[test]
    fn slmax_errors() {
        assert!(slmax(&[1.0, 2.0], &[1.0, 2.0, 3.0], TOL).is_err());
        assert!(slmax(&[1.0], &[1.0], TOL).is_err());
    }

    #[test]
    fn lshift_examples() {
        let m = DMatrix::from_row_slice(1, 3, &[0.0, 0.0, 1.0]);
        assert_eq!(lshift(&m).unwrap(), DMatrix::from_row_slice(1, 2, &[0.0, 1.0]));
        let eye = DMatrix::<f64>::identity(3, 3);
        assert_eq!(lshift(&eye).unwrap(), eye.columns(1, 2).into_owned());
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(lshift(&m).unwrap(), DMatrix::from_row_slice(2, 1, &[2.0, 4.0]));
        assert!(lshift(&DMatrix::from_row_slice(2, 1, &[1.0, 2.0])).is_err());
    }

    #[test]
    fn abs_examples() {
        assert_eq!(ld_abs(&s(1.0, &[5.0, 2.0]), TOL).unwrap(), s(1.0, &[5.0, 2.0]));
        assert_eq!(
            ld_abs(&s(0.0, &[0.0, 3.0, -1.0]), TOL).unwrap(),
            s(0.0, &[0.0, 3.0, -1.0])
        );
        assert_eq!(ld_abs(&s(-2.0, &[1.0, 1.0]), TOL).unwrap(), s(2.0, &[-1.0, -1.0]));
        assert!(ld_abs(&s(f64::NAN, &[1.0]), TOL).is_err());
    }

    #[test]
    fn max_examples() {
        let r = [0.3, -0.2, 0.7, 1.1];
        assert_eq!(ld_max(&s(0.0, &[0.0; 4]), &s(0.6, &r), TOL).unwrap(), s(0.6, &r));
        assert_eq!(
            ld_max(&s(3.0, &[1.0]), &s(3.0, &[1.0]), TOL).unwrap(),
            s(3.0, &[1.0])
        );
        assert_eq!(
            ld_max(&s(0.0, &[0.0, 2.0]), &s(0.0, &[0.0, -1.0]), TOL).unwrap(),
            s(0.0, &[0.0, 2.0])
        );
        assert!(ld_max(&s(0.0, &[1.0]), &s(0.0, &[1.0, 2.0]), TOL).is_err());
    }

    #[test]
    fn min_mid_examples() {
        assert_eq!(
            ld_min(&s(2.0, &[1.0]), &s(5.0, &[9.0]), TOL).unwrap(),
            s(2.0, &[1.0])
        );
        assert_eq!(
            ld_min(&s(0.0, &[1.0, 0.0]), &s(0.0, &[0.0, 1.0]), TOL).unwrap(),
            s(0.0, &[0.0, 1.0])
        );
        let (a, b, c) = (s(1.0, &[4.0]), s(2.0, &[5.0]), s(3.0, &[6.0]));
        for (x, y, z) in [(&a, &b, &c), (&c, &b, &a), (&b, &a, &c), (&a, &c, &b)] {
            assert_eq!(ld_mid(x, y, z, TOL).unwrap(), s(2.0, &[5.0]));
        }
        assert!(ld_mid(&a, &b, &s(3.0, &[1.0, 1.0]), TOL).is_err());
    }

    #[test]
    fn arith_examples() {
        let x = s(2.0, &[1.0, 0.0]);
        let y = s(3.0, &[0.0, 1.0]);
        assert_eq!(x.mul(&y).unwrap(), s(6.0, &[3.0, 2.0]));
        let a = s(1.7, &[0.5, -2.0]);
        assert_eq!(a.add(&LdScalar::constant(0.0, 2)).unwrap(), a);
        assert_eq!(s(1.0, &[1.0]).div(&s(2.0, &[0.0]), TOL).unwrap(), s(0.5, &[0.5]));
        assert!(matches!(
            s(1.0, &[1.0]).div(&s(0.0, &[1.0]), TOL),
            Err(Error::Domain { .. })
        ));
        assert_eq!(x.neg(), s(-2.0, &[-1.0, -0.0]));
    }

    #[test]
    fn quotient_rule_matches_central_difference() {
        // path t -> (1 + t, 2 + 0.3 t); d/dt (u / v) at t = 0
        let u = |t: f64| 1.0 + t;
        let v = |t: f64| 2.0 + 0.3 * t;
        let h = 1e-6;
        let fd = (u(h) / v(h) - u(-h) / v(-h)) / (2.0 * h);
        let q = s(1.0, &[1.0]).div(&s(2.0, &[0.3]), TOL).unwrap();
        assert!((q.deriv()[0] - fd).abs() < 1e-9);
    }

    #[test]
    fn ld_arith_vectors() {
        let x = LdVector::from_scalars(&[s(2.0, &[1.0, 0.0]), s(1.0, &[0.0, 0.0])]).unwrap();
        let y = LdVector::from_scalars(&[s(3.0, &[0.0, 1.0]), s(4.0, &[1.0, 1.0])]).unwrap();
        let p = ld_arith(ArithOp::Mul, &x, Some(&y), TOL).unwrap();
        assert_eq!(p.scalars()[0], s(6.0, &[3.0, 2.0]));
        assert_eq!(p.scalars()[1], s(4.0, &[1.0, 1.0]));
        let n = ld_arith(ArithOp::Neg, &x, None, TOL).unwrap();
        assert_eq!(n.value()[0], -2.0);
        assert!(ld_arith(ArithOp::Add, &x, None, TOL).is_err());
        let z = LdVector::from_scalars(&[s(3.0, &[0.0, 1.0])]).unwrap();
        assert!(ld_arith(ArithOp::Add, &x, Some(&z), TOL).is_err());
    }

    #[test]
    fn smooth_unary_examples() {
        assert_eq!(
            ld_smooth_unary(SmoothFn::Exp, &s(0.0, &[1.0, 2.0]), TOL).unwrap(),
            s(1.0, &[1.0, 2.0])
        );
        assert_eq!(
            ld_smooth_unary(SmoothFn::Sin, &s(0.0, &[3.0]), TOL).unwrap(),
            s(0.0, &[3.0])
        );
        assert_eq!(
            ld_smooth_unary(SmoothFn::Log, &s(1.0, &[2.0]), TOL).unwrap(),
            s(0.0, &[2.0])
        );
        assert!(ld_smooth_unary(SmoothFn::Log, &s(0.0, &[1.0]), TOL).is_err());
        assert!(ld_smooth_unary(SmoothFn::Sqrt, &s(-1.0, &[1.0]), TOL).is_err());
        assert!(ld_smooth_unary(SmoothFn::Pow(0.5), &s(-1.0, &[1.0]), TOL).is_err());
        assert!(ld_smooth_unary(SmoothFn::Pow(-1.0), &s(0.0, &[1.0]), TOL).is_err());
        let c = ld_smooth_unary(SmoothFn::Pow(3.0), &s(-2.0, &[1.0]), TOL).unwrap();
        assert_eq!(c, s(-8.0, &[12.0]));
    }

    #[test]
    fn extract_fast_path_and_general_path() {
        let m =
            DirectionsMatrix::new(DMatrix::from_row_slice(2, 3, &[0.3, 1.0, 0.0, -0.7, 0.0, 1.0])).unwrap();
        assert!(m.is_primary_form());
        let ld = DMatrix::from_row_slice(1, 3, &[0.0, 0.0, 1.0]);
        let jl = extract_l_derivative(&ld, &m).unwrap();
        assert_eq!(jl.entries(), &DMatrix::from_row_slice(1, 2, &[0.0, 1.0]));

        let a = DMatrix::from_row_slice(2, 2, &[1.0, -2.0, 0.5, 3.0]);
        let eye = DirectionsMatrix::new(DMatrix::identity(2, 2)).unwrap();
        let jl = extract_l_derivative(&a, &eye).unwrap();
        assert!((jl.entries() - &a).amax() < 1e-12);

        let general =
            DirectionsMatrix::new(DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 0.0, 1.0, -1.0, 3.0])).unwrap();
        let ld = &a * general.as_matrix();
        let jl = extract_l_derivative(&ld, &general).unwrap();
        let residual = (jl.entries() * general.as_matrix() - &ld).amax();
        assert!(residual <= 1e-10 * (1.0 + ld.amax()));
    }

    #[test]
    fn extract_rejects_rank_deficient() {
        let m = DirectionsMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0])).unwrap();
        assert!(!m.full_row_rank());
        let ld = DMatrix::zeros(1, 2);
        assert!(matches!(
            extract_l_derivative(&ld, &m),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn riot_minus_e1_l_derivative() {
        // X*(t) for d = -e1; J_L solves J_L [d I] = X*
        for t in [0.0, 0.3, 1.0] {
            let e = f64::exp(t);
            let ld = DMatrix::from_row_slice(1, 3, &[e - 1.0, 1.0 - e, e]);
            let m = DirectionsMatrix::with_primary(&[-1.0, 0.0]).unwrap();
            let jl = extract_l_derivative(&ld, &m).unwrap();
            // direct solve of the 1x3 system: J0 * (-1) = e - 1, columns 1,2 give J
            assert!((jl.entries()[(0, 0)] - (1.0 - e)).abs() < 1e-15);
            assert!((jl.entries()[(0, 1)] - e).abs() < 1e-15);
            assert!((-jl.entries()[(0, 0)] - (e - 1.0)).abs() < 1e-15);
        }
    }
}
