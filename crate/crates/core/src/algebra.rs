//! The looped cotangent Virasoro algebra: elements `(f, a, α₁, α₂)`, the
//! regular dual `(g, b, c₁, c₂)`, the commutator with its two cocycles, the
//! pairing and the coadjoint action.

use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{Axis, Grid, SpectralField};

#[derive(Clone, Debug, PartialEq)]
pub struct AlgebraElement {
    pub f: SpectralField,
    pub a: SpectralField,
    pub alpha1: f64,
    pub alpha2: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DualPoint {
    pub g: SpectralField,
    pub b: SpectralField,
    pub c1: f64,
    pub c2: f64,
}

fn check(grid: Grid, other: Grid) -> Result<()> {
    if grid != other {
        return Err(Error::GridMismatch {
            left: (grid.nx, grid.ny),
            right: (other.nx, other.ny),
        });
    }
    Ok(())
}

impl AlgebraElement {
    pub fn new(f: SpectralField, a: SpectralField, alpha1: f64, alpha2: f64) -> Result<Self> {
        check(f.grid(), a.grid())?;
        Ok(Self { f, a, alpha1, alpha2 })
    }

    pub fn zero(grid: Grid) -> Self {
        Self::central(grid, 0.0, 0.0)
    }

    pub fn central(grid: Grid, alpha1: f64, alpha2: f64) -> Self {
        Self {
            f: SpectralField::zeros(grid),
            a: SpectralField::zeros(grid),
            alpha1,
            alpha2,
        }
    }

    /// Random element with band-limited fields and unit-scale centre.
    pub fn random(grid: Grid, seed: u64, stream: u64, band: i64) -> Self {
        let mut gen = crate::rng::stream(seed, stream);
        use rand::Rng;
        let alpha1 = gen.random_range(-1.0..1.0);
        let alpha2 = gen.random_range(-1.0..1.0);
        Self {
            f: SpectralField::random_stream(grid, seed, 3 * stream + 1, band, 1.0),
            a: SpectralField::random_stream(grid, seed, 3 * stream + 2, band, 1.0),
            alpha1,
            alpha2,
        }
    }

    pub fn grid(&self) -> Grid {
        self.f.grid()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            f: self.f.scale(s),
            a: self.a.scale(s),
            alpha1: s * self.alpha1,
            alpha2: s * self.alpha2,
        }
    }

    /// `sqrt(‖f‖² + ‖a‖² + α₁² + α₂²)` with L² norms over the torus.
    pub fn norm(&self) -> f64 {
        (self.f.l2_norm().powi(2) + self.a.l2_norm().powi(2) + self.alpha1.powi(2) + self.alpha2.powi(2))
            .sqrt()
    }
}

impl DualPoint {
    pub fn new(g: SpectralField, b: SpectralField, c1: f64, c2: f64) -> Result<Self> {
        check(g.grid(), b.grid())?;
        Ok(Self { g, b, c1, c2 })
    }

    pub fn zero(grid: Grid) -> Self {
        Self {
            g: SpectralField::zeros(grid),
            b: SpectralField::zeros(grid),
            c1: 0.0,
            c2: 0.0,
        }
    }

    pub fn random(grid: Grid, seed: u64, stream: u64, band: i64) -> Self {
        let AlgebraElement { f, a, alpha1, alpha2 } = AlgebraElement::random(grid, seed, stream, band);
        Self {
            g: f,
            b: a,
            c1: alpha1,
            c2: alpha2,
        }
    }

    pub fn grid(&self) -> Grid {
        self.g.grid()
    }

    pub fn norm(&self) -> f64 {
        (self.g.l2_norm().powi(2) + self.b.l2_norm().powi(2) + self.c1.powi(2) + self.c2.powi(2)).sqrt()
    }
}

macro_rules! linear_ops {
    ($ty:ident, $x:ident, $y:ident, $p:ident, $q:ident) => {
        impl Add for &$ty {
            type Output = $ty;
            fn add(self, rhs: &$ty) -> $ty {
                $ty {
                    $x: &self.$x + &rhs.$x,
                    $y: &self.$y + &rhs.$y,
                    $p: self.$p + rhs.$p,
                    $q: self.$q + rhs.$q,
                }
            }
        }

        impl Sub for &$ty {
            type Output = $ty;
            fn sub(self, rhs: &$ty) -> $ty {
                $ty {
                    $x: &self.$x - &rhs.$x,
                    $y: &self.$y - &rhs.$y,
                    $p: self.$p - rhs.$p,
                    $q: self.$q - rhs.$q,
                }
            }
        }
    };
}
linear_ops!(AlgebraElement, f, a, alpha1, alpha2);
linear_ops!(DualPoint, g, b, c1, c2);

/// Commutator. The centres of the arguments do not enter the result.
pub fn bracket(x: &AlgebraElement, y: &AlgebraElement) -> Result<AlgebraElement> {
    check(x.grid(), y.grid())?;
    let (f, a, g, b) = (&x.f, &x.a, &y.f, &y.a);
    let (fx, gx) = (f.dx(), g.dx());
    let first = SpectralField::pointwise(&[f, &gx, &fx, g], 2, |v| v[0] * v[1] - v[2] * v[3])?;
    let second = SpectralField::pointwise(&[f, &b.dx(), &fx, b, g, &a.dx(), &gx, a], 2, |v| {
        v[0] * v[1] + 2.0 * v[2] * v[3] - v[4] * v[5] - 2.0 * v[6] * v[7]
    })?;
    Ok(AlgebraElement {
        f: first,
        a: second,
        alpha1: cocycle(Cocycle::GelfandFuchs, x, y)?,
        alpha2: cocycle(Cocycle::Loop, x, y)?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cocycle {
    /// `∫ f g_xxx`
    GelfandFuchs,
    /// `∫ (f b_y − g a_y)`
    Loop,
}

pub fn cocycle(which: Cocycle, x: &AlgebraElement, y: &AlgebraElement) -> Result<f64> {
    check(x.grid(), y.grid())?;
    match which {
        Cocycle::GelfandFuchs => x.f.inner(&y.f.derive(Axis::X, 3)),
        Cocycle::Loop => Ok(x.f.inner(&y.a.dy())? - y.f.inner(&x.a.dy())?),
    }
}

/// `∫(f b + g a) + α₁c₁ + α₂c₂`.
pub fn pair(x: &AlgebraElement, m: &DualPoint) -> Result<f64> {
    check(x.grid(), m.grid())?;
    Ok(x.f.inner(&m.b)? + m.g.inner(&x.a)? + x.alpha1 * m.c1 + x.alpha2 * m.c2)
}

/// Coadjoint action of `x` on the regular dual; the output charges vanish.
pub fn coad(x: &AlgebraElement, m: &DualPoint) -> Result<DualPoint> {
    check(x.grid(), m.grid())?;
    let (f, a, g, b) = (&x.f, &x.a, &m.g, &m.b);
    let (fx, gx) = (f.dx(), g.dx());
    let mut first = SpectralField::pointwise(&[f, &gx, &fx, g], 2, |v| v[0] * v[1] - v[2] * v[3])?;
    first += &f.dy().scale(m.c2);
    let mut second = SpectralField::pointwise(&[f, &b.dx(), &fx, b, &a.dx(), g, a, &gx], 2, |v| {
        v[0] * v[1] + 2.0 * v[2] * v[3] - v[4] * v[5] - 2.0 * v[6] * v[7]
    })?;
    second += &f.derive(Axis::X, 3).scale(m.c1);
    second += &a.dy().scale(m.c2);
    Ok(DualPoint {
        g: first,
        b: second,
        c1: 0.0,
        c2: 0.0,
    })
}

/// Relation between the coadjoint action and the bracket:
/// `⟨Y, coad(X, m)⟩ = σ ⟨[X, Y], m⟩`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

/// The sign the coadjoint action carries, as found by [`calibrate_sign`].
pub const COAD_SIGN: Sign = Sign::Minus;

/// `|⟨Y, coad(X, m)⟩ − σ⟨[X, Y], m⟩|`.
pub fn coad_defect(x: &AlgebraElement, m: &DualPoint, y: &AlgebraElement, sign: Sign) -> Result<f64> {
    let lhs = pair(y, &coad(x, m)?)?;
    let rhs = pair(&bracket(x, y)?, m)?;
    Ok((lhs - sign.value() * rhs).abs())
}

/// Determines σ from random triples `(X, m, Y)`. Fails if neither sign makes
/// every relative defect smaller than `tolerance`.
pub fn calibrate_sign(grid: Grid, seed: u64, trials: u64, band: i64, tolerance: f64) -> Result<Sign> {
    let (mut plus, mut minus) = (0.0f64, 0.0f64);
    for t in 0..trials {
        let x = AlgebraElement::random(grid, seed, 3 * t, band);
        let y = AlgebraElement::random(grid, seed, 3 * t + 1, band);
        let m = DualPoint::random(grid, seed, 3 * t + 2, band);
        let scale = 1.0 + x.norm().max(y.norm()).max(m.norm());
        plus = plus.max(coad_defect(&x, &m, &y, Sign::Plus)? / scale);
        minus = minus.max(coad_defect(&x, &m, &y, Sign::Minus)? / scale);
    }
    if plus < tolerance && plus < minus {
        Ok(Sign::Plus)
    } else if minus < tolerance {
        Ok(Sign::Minus)
    } else {
        Err(Error::StructuralSign { plus, minus })
    }
}

/// Norm of `[[X,Y],Z] + [[Y,Z],X] + [[Z,X],Y]`, relative to the inputs.
pub fn jacobi_defect(x: &AlgebraElement, y: &AlgebraElement, z: &AlgebraElement) -> Result<f64> {
    let sum = &(&bracket(&bracket(x, y)?, z)? + &bracket(&bracket(y, z)?, x)?) + &bracket(&bracket(z, x)?, y)?;
    Ok(sum.norm() / (1.0 + x.norm().max(y.norm()).max(z.norm())))
}

/// `|ω([X,Y],Z) + ω([Y,Z],X) + ω([Z,X],Y)|`, relative to the inputs.
pub fn cocycle_defect(
    which: Cocycle,
    x: &AlgebraElement,
    y: &AlgebraElement,
    z: &AlgebraElement,
) -> Result<f64> {
    let sum = cocycle(which, &bracket(x, y)?, z)?
        + cocycle(which, &bracket(y, z)?, x)?
        + cocycle(which, &bracket(z, x)?, y)?;
    Ok(sum.abs() / (1.0 + x.norm().max(y.norm()).max(z.norm())))
}

/// Largest band for which brackets nested `depth` deep stay resolved on
/// `grid`, so that structure identities hold to round-off.
pub fn exact_band(grid: Grid, depth: u32) -> i64 {
    let n = grid.max_wavenumber(Axis::X).min(grid.max_wavenumber(Axis::Y));
    n / (depth as i64 + 1)
}
