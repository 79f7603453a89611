//! Differential polynomials in jet variables with exact rational coefficients.
//!
//! A [`JetVariable`] stands for `∂x^p ∂y^q` applied to one of the two fields
//! `F` and `A`; negative orders stand for powers of the nonlocal operators
//! `∂x⁻¹`, `∂y⁻¹`. Symbolically `∂⁻¹∂ = id`, which is exact on the mean-free
//! subspace where the antiderivatives live.

use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};
use crate::spectral::{Axis, Grid, NonlocalConvention, SpectralField};

pub const DEFAULT_ORDER_CAP: u32 = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FieldId {
    F,
    A,
}

impl FieldId {
    fn symbol(self) -> char {
        match self {
            FieldId::F => 'F',
            FieldId::A => 'A',
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct JetVariable {
    pub field: FieldId,
    pub x_order: i32,
    pub y_order: i32,
}

impl JetVariable {
    pub fn new(field: FieldId, x_order: i32, y_order: i32) -> Self {
        Self {
            field,
            x_order,
            y_order,
        }
    }

    pub fn base(field: FieldId) -> Self {
        Self::new(field, 0, 0)
    }

    pub fn total_order(&self) -> u32 {
        self.x_order.unsigned_abs() + self.y_order.unsigned_abs()
    }

    pub fn is_local(&self) -> bool {
        self.x_order >= 0 && self.y_order >= 0
    }

    fn shifted(&self, axis: Axis, by: i32) -> Self {
        let mut v = *self;
        match axis {
            Axis::X => v.x_order += by,
            Axis::Y => v.y_order += by,
        }
        v
    }
}

impl fmt::Display for JetVariable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{},{}]", self.field.symbol(), self.x_order, self.y_order)
    }
}

/// A product of jet variables, kept sorted.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct Monomial(Vec<JetVariable>);

impl Monomial {
    pub fn new(mut vars: Vec<JetVariable>) -> Self {
        vars.sort();
        Self(vars)
    }

    pub fn one() -> Self {
        Self(Vec::new())
    }

    pub fn vars(&self) -> &[JetVariable] {
        &self.0
    }

    pub fn degree(&self) -> usize {
        self.0.len()
    }

    fn weight(&self) -> u32 {
        self.0.iter().map(JetVariable::total_order).sum()
    }

    fn times(&self, other: &Monomial) -> Monomial {
        let mut vars = self.0.clone();
        vars.extend_from_slice(&other.0);
        Monomial::new(vars)
    }

    fn replace(&self, at: usize, with: JetVariable) -> Monomial {
        let mut vars = self.0.clone();
        vars[at] = with;
        Monomial::new(vars)
    }

    fn without(&self, at: usize) -> Monomial {
        let mut vars = self.0.clone();
        vars.remove(at);
        Monomial(vars)
    }
}

// degree, then weight, then reverse lexicographic on the sorted factors
impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.degree()
            .cmp(&other.degree())
            .then(self.weight().cmp(&other.weight()))
            .then_with(|| other.0.iter().rev().cmp(self.0.iter().rev()))
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return write!(f, "1");
        }
        let parts: Vec<String> = self.0.iter().map(ToString::to_string).collect();
        write!(f, "{}", parts.join(" * "))
    }
}

pub type Coefficient = BigRational;

fn rational(n: i64) -> Coefficient {
    BigRational::from_integer(BigInt::from(n))
}

/// Exact polynomial in jet variables. Zero coefficients are never stored, so
/// equal polynomials have identical representations.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct DiffPoly {
    terms: BTreeMap<Monomial, Coefficient>,
}

/// Fields substituted for `F` and `A` during evaluation.
#[derive(Clone, Copy, Debug, Default)]
pub struct Assignment<'a> {
    pub f: Option<&'a SpectralField>,
    pub a: Option<&'a SpectralField>,
}

impl<'a> Assignment<'a> {
    pub fn new(f: &'a SpectralField, a: &'a SpectralField) -> Self {
        Self {
            f: Some(f),
            a: Some(a),
        }
    }

    pub fn only(field: FieldId, value: &'a SpectralField) -> Self {
        match field {
            FieldId::F => Self {
                f: Some(value),
                a: None,
            },
            FieldId::A => Self {
                f: None,
                a: Some(value),
            },
        }
    }

    pub fn get(&self, field: FieldId) -> Result<&'a SpectralField> {
        match field {
            FieldId::F => self.f,
            FieldId::A => self.a,
        }
        .ok_or(Error::Unassigned(field))
    }

    fn grid(&self) -> Result<Grid> {
        self.f
            .or(self.a)
            .map(SpectralField::grid)
            .ok_or(Error::Unassigned(FieldId::F))
    }
}

impl DiffPoly {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: Coefficient) -> Self {
        Self::term(c, Monomial::one())
    }

    pub fn integer(n: i64) -> Self {
        Self::constant(rational(n))
    }

    pub fn var(v: JetVariable) -> Self {
        Self::term(Coefficient::one(), Monomial::new(vec![v]))
    }

    /// Shorthand for the jet variable `field` with orders `(x, y)`.
    pub fn jet(field: FieldId, x_order: i32, y_order: i32) -> Self {
        Self::var(JetVariable::new(field, x_order, y_order))
    }

    pub fn term(c: Coefficient, m: Monomial) -> Self {
        let mut p = Self::zero();
        p.add_term(m, c);
        p
    }

    fn add_term(&mut self, m: Monomial, c: Coefficient) {
        if c.is_zero() {
            return;
        }
        match self.terms.entry(m) {
            Entry::Vacant(e) => {
                e.insert(c);
            }
            Entry::Occupied(mut e) => {
                *e.get_mut() += c;
                if e.get().is_zero() {
                    e.remove();
                }
            }
        }
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &Coefficient)> {
        self.terms.iter()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn degree(&self) -> usize {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    pub fn is_local(&self) -> bool {
        self.terms.keys().all(|m| m.0.iter().all(JetVariable::is_local))
    }

    pub fn max_order(&self) -> u32 {
        self.terms
            .keys()
            .flat_map(|m| m.0.iter().map(JetVariable::total_order))
            .max()
            .unwrap_or(0)
    }

    pub fn scale(&self, c: &Coefficient) -> Self {
        let mut out = Self::zero();
        for (m, k) in &self.terms {
            out.add_term(m.clone(), k * c);
        }
        out
    }

    /// `∂h/∂v`, treating every jet variable as independent.
    pub fn partial(&self, v: &JetVariable) -> Self {
        let mut out = Self::zero();
        for (m, c) in &self.terms {
            let count = m.0.iter().filter(|w| *w == v).count();
            if count == 0 {
                continue;
            }
            let at = m.0.iter().position(|w| w == v).expect("present");
            out.add_term(m.without(at), c * rational(count as i64));
        }
        out
    }

    fn derive_unchecked(&self, axis: Axis) -> Self {
        let mut out = Self::zero();
        for (m, c) in &self.terms {
            for (i, v) in m.0.iter().enumerate() {
                out.add_term(m.replace(i, v.shifted(axis, 1)), c.clone());
            }
        }
        out
    }

    pub fn total_derivative(&self, axis: Axis) -> Result<Self> {
        self.total_derivative_with_cap(axis, DEFAULT_ORDER_CAP)
    }

    /// Leibniz expansion of `D_axis p`.
    pub fn total_derivative_with_cap(&self, axis: Axis, cap: u32) -> Result<Self> {
        let out = self.derive_unchecked(axis);
        out.check_cap(cap)?;
        Ok(out)
    }

    fn check_cap(&self, cap: u32) -> Result<()> {
        for m in self.terms.keys() {
            if m.0.iter().any(|v| v.total_order() > cap) {
                return Err(Error::OrderCapExceeded {
                    monomial: m.to_string(),
                    cap,
                });
            }
        }
        Ok(())
    }

    /// `D_axis⁻¹` of a polynomial of degree ≤ 1 under the mean-free
    /// convention: constants go to zero, variables shift their order.
    fn antiderivative_linear(&self, axis: Axis) -> Result<Self> {
        let mut out = Self::zero();
        for (m, c) in &self.terms {
            match m.degree() {
                0 => {}
                1 => out.add_term(Monomial::new(vec![m.0[0].shifted(axis, -1)]), c.clone()),
                _ => {
                    return Err(Error::Unsupported(format!(
                        "nonlocal operator applied to nonlinear expression `{m}`"
                    )))
                }
            }
        }
        Ok(out)
    }

    /// `(−D_x)^p (−D_y)^q g`, negative powers meaning the nonlocal inverses.
    fn adjoint_shift(g: Self, p: i32, q: i32, cap: u32) -> Result<Self> {
        let mut out = g;
        for (axis, n) in [(Axis::X, p), (Axis::Y, q)] {
            for _ in 0..n.unsigned_abs() {
                out = if n > 0 {
                    out.total_derivative_with_cap(axis, cap)?
                } else {
                    out.antiderivative_linear(axis)?
                };
            }
            if n % 2 != 0 {
                out = -out;
            }
        }
        Ok(out)
    }

    pub fn variational_derivative(&self, field: FieldId) -> Result<Self> {
        self.variational_derivative_with_cap(field, DEFAULT_ORDER_CAP)
    }

    /// Euler operator `δ_field h = Σ (−D)^α (∂h/∂field_α)` over every jet
    /// variable of `field` present in `h`, local or not.
    pub fn variational_derivative_with_cap(&self, field: FieldId, cap: u32) -> Result<Self> {
        self.check_cap(cap)?;
        let vars: BTreeSet<JetVariable> = self
            .terms
            .keys()
            .flat_map(|m| m.0.iter().copied())
            .filter(|v| v.field == field)
            .collect();
        let mut out = Self::zero();
        for v in vars {
            let piece = Self::adjoint_shift(self.partial(&v), v.x_order, v.y_order, cap)?;
            out = &out + &piece;
        }
        Ok(out)
    }

    /// Canonical representative of `p` modulo total x- and y-derivatives.
    ///
    /// Terms are grouped by field content and total orders; within a group the
    /// image of `D_x`, `D_y` is row-reduced with monomials that put their
    /// derivatives on the first factor eliminated first.
    pub fn ibp_normal_form(&self) -> Result<Self> {
        if !self.is_local() {
            return Err(Error::Unsupported(
                "integration-by-parts normal form of a nonlocal polynomial".into(),
            ));
        }
        let mut classes: BTreeMap<WeightClass, Vec<(Monomial, Coefficient)>> = BTreeMap::new();
        for (m, c) in &self.terms {
            classes
                .entry(WeightClass::of(m))
                .or_default()
                .push((m.clone(), c.clone()));
        }
        let mut out = Self::zero();
        for (class, terms) in classes {
            for (m, c) in class.reduce(&terms) {
                out.add_term(m, c);
            }
        }
        Ok(out)
    }

    pub fn evaluate(
        &self,
        assignment: &Assignment<'_>,
        convention: &NonlocalConvention,
    ) -> Result<SpectralField> {
        let grid = assignment.grid()?;
        let mut cache: HashMap<JetVariable, SpectralField> = HashMap::new();
        let mut out = SpectralField::zeros(grid);
        for (m, c) in &self.terms {
            let coef = c.to_f64().unwrap_or(f64::NAN);
            if m.0.is_empty() {
                out += &SpectralField::constant(grid, coef);
                continue;
            }
            for v in &m.0 {
                if !cache.contains_key(v) {
                    let value = evaluate_variable(v, assignment, convention)?;
                    cache.insert(*v, value);
                }
            }
            let factors: Vec<&SpectralField> = m.0.iter().map(|v| &cache[v]).collect();
            out += &SpectralField::product(&factors)?.scale(coef);
        }
        Ok(out)
    }

    /// `∫ p dx dy` over the torus.
    pub fn integrate(
        &self,
        assignment: &Assignment<'_>,
        convention: &NonlocalConvention,
    ) -> Result<f64> {
        Ok(self.evaluate(assignment, convention)?.integral())
    }
}

fn evaluate_variable(
    v: &JetVariable,
    assignment: &Assignment<'_>,
    convention: &NonlocalConvention,
) -> Result<SpectralField> {
    let mut out = assignment.get(v.field)?.clone();
    for (axis, n) in [(Axis::X, v.x_order), (Axis::Y, v.y_order)] {
        if n > 0 {
            out = out.derive(axis, n as u32);
        }
    }
    for (axis, n) in [(Axis::X, v.x_order), (Axis::Y, v.y_order)] {
        for _ in 0..(-n).max(0) {
            out = out.antiderive(axis, convention)?;
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct WeightClass {
    fields: Vec<FieldId>,
    x: u32,
    y: u32,
}

impl WeightClass {
    fn of(m: &Monomial) -> Self {
        let mut fields: Vec<FieldId> = m.0.iter().map(|v| v.field).collect();
        fields.sort();
        Self {
            fields,
            x: m.0.iter().map(|v| v.x_order as u32).sum(),
            y: m.0.iter().map(|v| v.y_order as u32).sum(),
        }
    }

    fn monomials(&self) -> Vec<Monomial> {
        let k = self.fields.len();
        let mut out = BTreeSet::new();
        for xs in compositions(self.x, k) {
            for ys in compositions(self.y, k) {
                let vars = self
                    .fields
                    .iter()
                    .zip(xs.iter().zip(&ys))
                    .map(|(&f, (&x, &y))| JetVariable::new(f, x as i32, y as i32))
                    .collect();
                out.insert(Monomial::new(vars));
            }
        }
        out.into_iter().collect()
    }

    fn lowered(&self, axis: Axis) -> Option<Self> {
        let mut c = self.clone();
        match axis {
            Axis::X if c.x > 0 => c.x -= 1,
            Axis::Y if c.y > 0 => c.y -= 1,
            _ => return None,
        }
        Some(c)
    }

    fn reduce(&self, terms: &[(Monomial, Coefficient)]) -> Vec<(Monomial, Coefficient)> {
        if self.fields.is_empty() {
            return terms.to_vec();
        }
        let mut columns = self.monomials();
        columns.sort_by(|a, b| elimination_key(b).cmp(&elimination_key(a)).then(b.cmp(a)));
        let index: HashMap<&Monomial, usize> =
            columns.iter().enumerate().map(|(i, m)| (m, i)).collect();

        let mut rows: Vec<Vec<Coefficient>> = Vec::new();
        for axis in [Axis::X, Axis::Y] {
            let Some(lower) = self.lowered(axis) else {
                continue;
            };
            for m in lower.monomials() {
                let image = DiffPoly::term(Coefficient::one(), m).derive_unchecked(axis);
                let mut row = vec![Coefficient::zero(); columns.len()];
                for (mm, c) in image.terms {
                    row[index[&mm]] += c;
                }
                rows.push(row);
            }
        }
        let pivots = row_reduce(&mut rows);

        let mut target = vec![Coefficient::zero(); columns.len()];
        for (m, c) in terms {
            target[index[m]] += c;
        }
        for (r, &col) in pivots.iter().enumerate() {
            if target[col].is_zero() {
                continue;
            }
            let factor = target[col].clone();
            for (t, v) in target.iter_mut().zip(&rows[r]) {
                if !v.is_zero() {
                    *t -= &factor * v;
                }
            }
        }
        columns
            .into_iter()
            .zip(target)
            .filter(|(_, c)| !c.is_zero())
            .collect()
    }
}

/// Per-factor derivative orders, first factor first; larger keys are
/// eliminated before smaller ones.
fn elimination_key(m: &Monomial) -> Vec<(u32, i32)> {
    m.0.iter().map(|v| (v.total_order(), v.x_order)).collect()
}

/// All ways of writing `n` as an ordered sum of `k` non-negative parts.
fn compositions(n: u32, k: usize) -> Vec<Vec<u32>> {
    if k == 0 {
        return if n == 0 { vec![vec![]] } else { vec![] };
    }
    if k == 1 {
        return vec![vec![n]];
    }
    let mut out = Vec::new();
    for first in 0..=n {
        for mut rest in compositions(n - first, k - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

/// Reduced row echelon form in place; returns the pivot column of each
/// surviving row (rows beyond the rank are dropped).
fn row_reduce(rows: &mut Vec<Vec<Coefficient>>) -> Vec<usize> {
    let ncols = rows.first().map_or(0, Vec::len);
    let mut pivots = Vec::new();
    let mut r = 0;
    for col in 0..ncols {
        let Some(found) = (r..rows.len()).find(|&i| !rows[i][col].is_zero()) else {
            continue;
        };
        rows.swap(r, found);
        let inv = rows[r][col].recip();
        for v in rows[r].iter_mut() {
            *v *= &inv;
        }
        let pivot_row = rows[r].clone();
        for (i, row) in rows.iter_mut().enumerate() {
            if i == r || row[col].is_zero() {
                continue;
            }
            let factor = row[col].clone();
            for (v, p) in row.iter_mut().zip(&pivot_row) {
                if !p.is_zero() {
                    *v -= &factor * p;
                }
            }
        }
        pivots.push(col);
        r += 1;
        if r == rows.len() {
            break;
        }
    }
    rows.truncate(r);
    pivots
}

impl Add for &DiffPoly {
    type Output = DiffPoly;
    fn add(self, rhs: &DiffPoly) -> DiffPoly {
        let mut out = self.clone();
        for (m, c) in &rhs.terms {
            out.add_term(m.clone(), c.clone());
        }
        out
    }
}

impl Sub for &DiffPoly {
    type Output = DiffPoly;
    fn sub(self, rhs: &DiffPoly) -> DiffPoly {
        let mut out = self.clone();
        for (m, c) in &rhs.terms {
            out.add_term(m.clone(), -c.clone());
        }
        out
    }
}

impl Mul for &DiffPoly {
    type Output = DiffPoly;
    fn mul(self, rhs: &DiffPoly) -> DiffPoly {
        let mut out = DiffPoly::zero();
        for (m1, c1) in &self.terms {
            for (m2, c2) in &rhs.terms {
                out.add_term(m1.times(m2), c1 * c2);
            }
        }
        out
    }
}

impl Neg for DiffPoly {
    type Output = DiffPoly;
    fn neg(self) -> DiffPoly {
        self.scale(&rational(-1))
    }
}

macro_rules! owned_op {
    ($trait:ident, $method:ident) => {
        impl $trait for DiffPoly {
            type Output = DiffPoly;
            fn $method(self, rhs: DiffPoly) -> DiffPoly {
                (&self).$method(&rhs)
            }
        }
    };
}
owned_op!(Add, add);
owned_op!(Sub, sub);
owned_op!(Mul, mul);

/// `coef * F[p,q] * A[r,s] + ...`; the zero polynomial prints as `0`.
impl fmt::Display for DiffPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (i, (m, c)) in self.terms.iter().enumerate() {
            let magnitude = if i == 0 { c.clone() } else { c.abs() };
            if i > 0 {
                write!(f, " {} ", if c.is_negative() { '-' } else { '+' })?;
            }
            write!(f, "{magnitude}")?;
            for v in &m.0 {
                write!(f, " * {v}")?;
            }
        }
        Ok(())
    }
}

impl FromStr for DiffPoly {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Parser { src: s.as_bytes(), pos: 0 }.expression()
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn err<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(Error::Parse {
            pos: self.pos,
            msg: msg.into(),
        })
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expect(&mut self, byte: u8) -> Result<()> {
        if self.peek() == Some(byte) {
            self.pos += 1;
            Ok(())
        } else {
            self.err(format!("expected `{}`", byte as char))
        }
    }

    fn expression(&mut self) -> Result<DiffPoly> {
        let mut out = self.term()?;
        loop {
            match self.peek() {
                None => return Ok(out),
                Some(b'+') => {
                    self.pos += 1;
                    out = &out + &self.term()?;
                }
                Some(b'-') => {
                    self.pos += 1;
                    out = &out - &self.term()?;
                }
                Some(_) => return self.err("expected `+`, `-` or end of input"),
            }
        }
    }

    fn term(&mut self) -> Result<DiffPoly> {
        let mut coef = Coefficient::one();
        let mut vars = Vec::new();
        loop {
            match self.factor()? {
                Factor::Number(c) => coef *= c,
                Factor::Var(v) => vars.push(v),
            }
            if self.peek() == Some(b'*') {
                self.pos += 1;
            } else {
                break;
            }
        }
        Ok(DiffPoly::term(coef, Monomial::new(vars)))
    }

    fn factor(&mut self) -> Result<Factor> {
        match self.peek() {
            Some(b'F') | Some(b'A') => {
                let field = if self.src[self.pos] == b'F' {
                    FieldId::F
                } else {
                    FieldId::A
                };
                self.pos += 1;
                self.expect(b'[')?;
                let p = self.integer()?;
                self.expect(b',')?;
                let q = self.integer()?;
                self.expect(b']')?;
                let to_i32 = |n: BigInt, parser: &Self| {
                    n.to_i32().map_or_else(|| parser.err("order out of range"), Ok)
                };
                Ok(Factor::Var(JetVariable::new(field, to_i32(p, self)?, to_i32(q, self)?)))
            }
            Some(b'-') | Some(b'0'..=b'9') => {
                let num = self.integer()?;
                let den = if self.peek() == Some(b'/') {
                    self.pos += 1;
                    self.integer()?
                } else {
                    BigInt::one()
                };
                if den.is_zero() {
                    return self.err("zero denominator");
                }
                Ok(Factor::Number(BigRational::new(num, den)))
            }
            _ => self.err("expected a number or a jet variable"),
        }
    }

    fn integer(&mut self) -> Result<BigInt> {
        self.skip_ws();
        let start = self.pos;
        if self.src.get(self.pos) == Some(&b'-') {
            self.pos += 1;
        }
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        text.parse::<BigInt>()
            .or_else(|_| self.err(format!("bad integer `{text}`")))
    }
}

enum Factor {
    Number(Coefficient),
    Var(JetVariable),
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(s: &str) -> DiffPoly {
        s.parse().unwrap()
    }

    fn f(x: i32, y: i32) -> DiffPoly {
        DiffPoly::jet(FieldId::F, x, y)
    }

    fn a(x: i32, y: i32) -> DiffPoly {
        DiffPoly::jet(FieldId::A, x, y)
    }

    #[test]
    fn total_derivative_examples() {
        assert_eq!(f(0, 0).total_derivative(Axis::X).unwrap(), f(1, 0));
        let prod = &f(0, 0) * &a(1, 0);
        assert_eq!(
            prod.total_derivative(Axis::X).unwrap(),
            &(&f(1, 0) * &a(1, 0)) + &(&f(0, 0) * &a(2, 0))
        );
        assert_eq!(f(-1, 0).total_derivative(Axis::Y).unwrap(), f(-1, 1));
        assert_eq!(f(-1, 0).total_derivative(Axis::X).unwrap(), f(0, 0));
    }

    #[test]
    fn order_cap_is_enforced() {
        match f(4, 4).total_derivative(Axis::X) {
            Err(Error::OrderCapExceeded { monomial, cap }) => {
                assert_eq!(cap, 8);
                assert_eq!(monomial, "F[5,4]");
            }
            other => panic!("expected cap error, got {other:?}"),
        }
        assert!(f(2, 0).total_derivative_with_cap(Axis::Y, 2).is_err());
    }

    #[test]
    fn variational_derivative_examples() {
        let h0 = &a(0, 0) - &f(0, 0);
        assert_eq!(h0.variational_derivative(FieldId::A).unwrap(), DiffPoly::integer(1));
        assert_eq!(h0.variational_derivative(FieldId::F).unwrap(), DiffPoly::integer(-1));
        let sq = &f(0, 0) * &f(0, 0);
        assert_eq!(sq.variational_derivative(FieldId::F).unwrap(), f(0, 0).scale(&rational(2)));
        let h = &f(0, 0) * &a(1, 0);
        assert_eq!(h.variational_derivative(FieldId::A).unwrap(), -f(1, 0));
        assert_eq!(h.variational_derivative(FieldId::F).unwrap(), a(1, 0));
    }

    #[test]
    fn variational_derivative_of_nonlocal_terms() {
        // h = (∂x⁻¹a)·f  →  δ_a = −∂x⁻¹ f
        let h = &a(-1, 0) * &f(0, 0);
        assert_eq!(h.variational_derivative(FieldId::A).unwrap(), -f(-1, 0));
        // h = f_yy · ∂y⁻¹a
        let h = &f(0, 2) * &a(0, -1);
        assert_eq!(h.variational_derivative(FieldId::A).unwrap(), -f(0, 1));
        assert_eq!(h.variational_derivative(FieldId::F).unwrap(), a(0, 1));
        // nonlocal of a nonlinear expression is not representable
        let h = &(&a(-1, 0) * &f(0, 0)) * &f(0, 0);
        assert!(matches!(h.variational_derivative(FieldId::A), Err(Error::Unsupported(_))));
    }

    #[test]
    fn second_order_euler_terms() {
        // h = a_xx·f_y + a_xy·f + a_yy·f·f
        let h = &(&(&a(2, 0) * &f(0, 1)) + &(&a(1, 1) * &f(0, 0))) + &(&(&a(0, 2) * &f(0, 0)) * &f(0, 0));
        let expected = &(&f(2, 1) + &f(1, 1)) + &(&(&f(0, 2) * &f(0, 0)) + &(&f(0, 1) * &f(0, 1))).scale(&rational(2));
        assert_eq!(h.variational_derivative(FieldId::A).unwrap(), expected);
    }

    #[test]
    fn normal_form_examples() {
        let exact = &(&f(1, 0) * &a(0, 0)) + &(&f(0, 0) * &a(1, 0));
        assert!(exact.ibp_normal_form().unwrap().is_zero());
        assert!((&f(0, 0) * &f(1, 0)).ibp_normal_form().unwrap().is_zero());
        let lhs = (&f(0, 0) * &a(2, 0)).ibp_normal_form().unwrap();
        let rhs = (&f(2, 0) * &a(0, 0)).ibp_normal_form().unwrap();
        assert_eq!(lhs, rhs);
        assert_eq!(lhs, &f(0, 0) * &a(2, 0));
        assert!(f(-1, 0).ibp_normal_form().is_err());
        assert_eq!(f(0, 0).ibp_normal_form().unwrap(), f(0, 0));
        assert!(f(3, 1).ibp_normal_form().unwrap().is_zero());
    }

    #[test]
    fn printing_and_parsing() {
        let q = &(&f(0, 0) * &a(1, 0)).scale(&BigRational::new(3.into(), 2.into())) - &f(-1, 2);
        let text = q.to_string();
        assert_eq!(text, "-1 * F[-1,2] + 3/2 * F[0,0] * A[1,0]");
        assert_eq!(p(&text), q);
        assert_eq!(p("0"), DiffPoly::zero());
        assert_eq!(p("2 * F[0,0] - 2*F[0,0]"), DiffPoly::zero());
        assert_eq!(p("-5/2"), DiffPoly::constant(BigRational::new((-5).into(), 2.into())));
        assert!("3 * G[0,0]".parse::<DiffPoly>().is_err());
        assert!("1/0".parse::<DiffPoly>().is_err());
    }

    fn arb_var() -> impl Strategy<Value = JetVariable> {
        (prop_oneof![Just(FieldId::F), Just(FieldId::A)], 0i32..2, 0i32..2)
            .prop_map(|(f, x, y)| JetVariable::new(f, x, y))
    }

    fn arb_local_poly() -> impl Strategy<Value = DiffPoly> {
        proptest::collection::vec((-6i64..7, 1i64..4, proptest::collection::vec(arb_var(), 0..4)), 0..5)
            .prop_map(|terms| {
                let mut out = DiffPoly::zero();
                for (n, d, vars) in terms {
                    out.add_term(Monomial::new(vars), BigRational::new(n.into(), d.into()));
                }
                out
            })
    }

    proptest! {
        #[test]
        fn text_round_trip(q in arb_local_poly()) {
            prop_assert_eq!(q.to_string().parse::<DiffPoly>().unwrap(), q);
        }

        #[test]
        fn euler_operator_kills_divergences(q in arb_local_poly(), ax in prop_oneof![Just(Axis::X), Just(Axis::Y)]) {
            let d = q.total_derivative(ax).unwrap();
            for field in [FieldId::F, FieldId::A] {
                prop_assert!(d.variational_derivative(field).unwrap().is_zero());
            }
        }

        #[test]
        fn normal_form_ignores_divergences(q in arb_local_poly(), r in arb_local_poly()) {
            let shifted = &q + &(&r.total_derivative(Axis::X).unwrap() + &q.total_derivative(Axis::Y).unwrap());
            prop_assert_eq!(shifted.ibp_normal_form().unwrap(), q.ibp_normal_form().unwrap());
        }

        #[test]
        fn normal_form_is_idempotent_and_keeps_euler(q in arb_local_poly()) {
            let n = q.ibp_normal_form().unwrap();
            prop_assert_eq!(n.ibp_normal_form().unwrap(), n.clone());
            for field in [FieldId::F, FieldId::A] {
                prop_assert_eq!(n.variational_derivative(field).unwrap(), q.variational_derivative(field).unwrap());
            }
        }
    }
}
