//! The Lie-Poisson bracket on the regular dual, the constant brackets frozen
//! at `m₀ = (1, 1, c₁, c)` and in the limit `c → ∞`, Hamiltonian vector
//! fields, the compatibility pencil and the Lenard-Magri recursion.
//!
//! Points of the dual are [`DualPoint`]s whose `g` and `b` slots hold the
//! fields `f` and `a`. A gradient `dH = (δ_aH, δ_fH)` is read as the algebra
//! element with `f`-slot `δ_aH` and `a`-slot `δ_fH`, so that
//! `dH/dε = ⟨dH, ṁ⟩` under the pairing.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::algebra::{bracket, coad, cocycle, pair, AlgebraElement, Cocycle, DualPoint};
use crate::error::{Error, Result};
use crate::jet::{Assignment, DiffPoly, FieldId, JetVariable, Monomial};
use crate::quadrature;
use crate::spectral::{Axis, Grid, NonlocalConvention, SpectralField};

#[derive(Clone, Debug, PartialEq)]
pub struct GradientPair {
    pub da: SpectralField,
    pub df: SpectralField,
}

impl GradientPair {
    pub fn new(da: SpectralField, df: SpectralField) -> Result<Self> {
        if da.grid() != df.grid() {
            return Err(Error::GridMismatch {
                left: (da.grid().nx, da.grid().ny),
                right: (df.grid().nx, df.grid().ny),
            });
        }
        Ok(Self { da, df })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self {
            da: SpectralField::zeros(grid),
            df: SpectralField::zeros(grid),
        }
    }

    pub fn grid(&self) -> Grid {
        self.da.grid()
    }

    pub fn to_element(&self) -> AlgebraElement {
        AlgebraElement {
            f: self.da.clone(),
            a: self.df.clone(),
            alpha1: 0.0,
            alpha2: 0.0,
        }
    }

    /// `⟨dH, v⟩ = ∫(δ_aH·a_t + δ_fH·f_t)`.
    pub fn apply(&self, v: &TangentField) -> Result<f64> {
        Ok(self.da.inner(&v.a_t)? + self.df.inner(&v.f_t)?)
    }

    pub fn norm(&self) -> f64 {
        self.da.l2_norm().hypot(self.df.l2_norm())
    }

    pub fn max_difference(&self, other: &GradientPair) -> Result<f64> {
        Ok(self.da.max_difference(&other.da)?.max(self.df.max_difference(&other.df)?))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TangentField {
    pub f_t: SpectralField,
    pub a_t: SpectralField,
}

impl TangentField {
    pub fn zeros(grid: Grid) -> Self {
        Self {
            f_t: SpectralField::zeros(grid),
            a_t: SpectralField::zeros(grid),
        }
    }

    pub fn norm(&self) -> f64 {
        self.f_t.l2_norm().hypot(self.a_t.l2_norm())
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            f_t: self.f_t.scale(s),
            a_t: self.a_t.scale(s),
        }
    }

    /// `‖self − other‖ / (1 + max(‖self‖, ‖other‖))`.
    pub fn relative_distance(&self, other: &TangentField) -> f64 {
        let diff = (&self.f_t - &other.f_t).l2_norm().hypot((&self.a_t - &other.a_t).l2_norm());
        diff / (1.0 + self.norm().max(other.norm()))
    }

    fn from_dual(m: DualPoint) -> Self {
        Self { f_t: m.g, a_t: m.b }
    }
}

/// Frozen point `m₀ = (1, 1, c₁, c)` of the constant bracket.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrozenPoint {
    pub c: f64,
    #[serde(default)]
    pub c1: f64,
}

impl FrozenPoint {
    pub fn new(c: f64) -> Self {
        Self { c, c1: 0.0 }
    }

    pub fn dual_point(&self, grid: Grid) -> DualPoint {
        DualPoint {
            g: SpectralField::constant(grid, 1.0),
            b: SpectralField::constant(grid, 1.0),
            c1: self.c1,
            c2: self.c,
        }
    }
}

/// The second (constant-coefficient) member of the pencil.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstantStructure {
    Frozen(FrozenPoint),
    /// `c → ∞`: `f_t = (δ_aH)_y`, `a_t = (δ_fH)_y`.
    Limit,
}

impl ConstantStructure {
    pub fn dual_point(&self, grid: Grid) -> DualPoint {
        match self {
            ConstantStructure::Frozen(fp) => fp.dual_point(grid),
            ConstantStructure::Limit => DualPoint {
                c2: 1.0,
                ..DualPoint::zero(grid)
            },
        }
    }

    /// Hamiltonian vector field of a gradient.
    pub fn field(&self, grad: &GradientPair) -> TangentField {
        match self {
            ConstantStructure::Frozen(fp) => const_field(grad, fp),
            ConstantStructure::Limit => limit_field(grad),
        }
    }

    pub fn bracket(&self, df: &GradientPair, dg: &GradientPair) -> Result<f64> {
        match self {
            ConstantStructure::Frozen(fp) => pair(&bracket(&df.to_element(), &dg.to_element())?, &fp.dual_point(df.grid())),
            ConstantStructure::Limit => cocycle(Cocycle::Loop, &df.to_element(), &dg.to_element()),
        }
    }
}

/// `coad(grad, m)` read as a tangent vector.
pub fn lie_field(grad: &GradientPair, m: &DualPoint) -> Result<TangentField> {
    Ok(TangentField::from_dual(coad(&grad.to_element(), m)?))
}

/// `f_t = Λ(δ_aH)`, `a_t = 2(δ_aH)_x + Λ(δ_fH) + c₁(δ_aH)_xxx`.
pub fn const_field(grad: &GradientPair, fp: &FrozenPoint) -> TangentField {
    let mut a_t = &grad.da.dx().scale(2.0) + &grad.df.lambda_apply(fp.c);
    if fp.c1 != 0.0 {
        a_t += &grad.da.derive(Axis::X, 3).scale(fp.c1);
    }
    TangentField {
        f_t: grad.da.lambda_apply(fp.c),
        a_t,
    }
}

pub fn limit_field(grad: &GradientPair) -> TangentField {
    TangentField {
        f_t: grad.da.dy(),
        a_t: grad.df.dy(),
    }
}

pub fn ham_lie(h: &Functional, m: &DualPoint) -> Result<TangentField> {
    lie_field(&h.gradient(m)?, m)
}

pub fn ham_const(h: &Functional, m: &DualPoint, fp: &FrozenPoint) -> Result<TangentField> {
    Ok(const_field(&h.gradient(m)?, fp))
}

pub fn ham_limit(h: &Functional, m: &DualPoint) -> Result<TangentField> {
    Ok(limit_field(&h.gradient(m)?))
}

/// `{F, G}(m) = ⟨[dF, dG], m⟩`.
pub fn bracket_lie(f: &Functional, g: &Functional, m: &DualPoint) -> Result<f64> {
    pair(&bracket(&f.gradient(m)?.to_element(), &g.gradient(m)?.to_element())?, m)
}

/// `{F, G}_ω(m) = ⟨[dF, dG], m₀⟩`.
pub fn bracket_const(f: &Functional, g: &Functional, m: &DualPoint, fp: &FrozenPoint) -> Result<f64> {
    ConstantStructure::Frozen(*fp).bracket(&f.gradient(m)?, &g.gradient(m)?)
}

/// Limit bracket: the loop cocycle of the two gradients.
pub fn bracket_limit(f: &Functional, g: &Functional, m: &DualPoint) -> Result<f64> {
    ConstantStructure::Limit.bracket(&f.gradient(m)?, &g.gradient(m)?)
}

/// Natural size of a bracket value `⟨[dF, dG], m⟩`: `1 + ‖[dF, dG]‖·‖m‖`.
pub fn bracket_scale(df: &GradientPair, dg: &GradientPair, m: &DualPoint) -> Result<f64> {
    Ok(1.0 + bracket(&df.to_element(), &dg.to_element())?.norm() * m.norm())
}

type ValueFn = dyn Fn(&DualPoint) -> Result<f64> + Send + Sync;
type GradientFn = dyn Fn(&DualPoint) -> Result<GradientPair> + Send + Sync;

/// A functional on the regular dual with its value and gradient programs.
#[derive(Clone)]
pub struct Functional {
    name: String,
    integrand: Option<DiffPoly>,
    value: Arc<ValueFn>,
    gradient: Arc<GradientFn>,
}

impl fmt::Debug for Functional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Functional")
            .field("name", &self.name)
            .field("integrand", &self.integrand.as_ref().map(ToString::to_string))
            .finish()
    }
}

fn assignment(m: &DualPoint) -> Assignment<'_> {
    Assignment::new(&m.g, &m.b)
}

impl Functional {
    pub fn new(
        name: impl Into<String>,
        value: impl Fn(&DualPoint) -> Result<f64> + Send + Sync + 'static,
        gradient: impl Fn(&DualPoint) -> Result<GradientPair> + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            integrand: None,
            value: Arc::new(value),
            gradient: Arc::new(gradient),
        }
    }

    /// `H = ∫ h`, with the gradient given by the Euler operator.
    pub fn from_integrand(name: impl Into<String>, h: DiffPoly, convention: NonlocalConvention) -> Result<Self> {
        let da = h.variational_derivative(FieldId::A)?;
        let df = h.variational_derivative(FieldId::F)?;
        let value_poly = h.clone();
        let mut out = Self::new(
            name,
            move |m| value_poly.integrate(&assignment(m), &convention),
            move |m| {
                let asg = assignment(m);
                GradientPair::new(da.evaluate(&asg, &convention)?, df.evaluate(&asg, &convention)?)
            },
        );
        out.integrand = Some(h);
        Ok(out)
    }

    /// `F_X(m) = ⟨X, m⟩`; its gradient is `X` itself.
    pub fn linear(name: impl Into<String>, x: AlgebraElement) -> Self {
        let grad = GradientPair {
            da: x.f.clone(),
            df: x.a.clone(),
        };
        Self::new(name, move |m| pair(&x, m), move |_| Ok(grad.clone()))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn integrand(&self) -> Option<&DiffPoly> {
        self.integrand.as_ref()
    }

    pub fn value(&self, m: &DualPoint) -> Result<f64> {
        (self.value)(m)
    }

    pub fn gradient(&self, m: &DualPoint) -> Result<GradientPair> {
        (self.gradient)(m)
    }

    pub fn sum(&self, other: &Functional) -> Functional {
        let (a, b) = (self.clone(), other.clone());
        let (ga, gb) = (self.clone(), other.clone());
        Functional::new(
            format!("{} + {}", self.name, other.name),
            move |m| Ok(a.value(m)? + b.value(m)?),
            move |m| {
                let (x, y) = (ga.gradient(m)?, gb.gradient(m)?);
                Ok(GradientPair {
                    da: &x.da + &y.da,
                    df: &x.df + &y.df,
                })
            },
        )
    }

    pub fn scaled(&self, s: f64) -> Functional {
        let (a, g) = (self.clone(), self.clone());
        Functional::new(
            format!("{s}·{}", self.name),
            move |m| Ok(s * a.value(m)?),
            move |m| {
                let x = g.gradient(m)?;
                Ok(GradientPair {
                    da: x.da.scale(s),
                    df: x.df.scale(s),
                })
            },
        )
    }

    /// Largest relative disagreement between `⟨dH, φ⟩` and a central
    /// difference of the value program, over random directions `φ`.
    pub fn check_gradient(&self, m: &DualPoint, seed: u64, directions: u64) -> Result<f64> {
        let grid = m.grid();
        let dirs: Vec<_> = (0..directions)
            .map(|s| {
                (
                    SpectralField::random_stream(grid, seed, 2 * s, 4, 1.0),
                    SpectralField::random_stream(grid, seed, 2 * s + 1, 4, 1.0),
                )
            })
            .collect();
        self.check_gradient_along(m, &dirs)
    }

    /// As [`Functional::check_gradient`] along given `(δf, δa)` directions.
    pub fn check_gradient_along(&self, m: &DualPoint, directions: &[(SpectralField, SpectralField)]) -> Result<f64> {
        let grad = self.gradient(m)?;
        let eps = 1e-4;
        let mut worst: f64 = 0.0;
        for (phi, psi) in directions {
            let shifted = |t: f64| DualPoint {
                g: &m.g + &phi.scale(t),
                b: &m.b + &psi.scale(t),
                ..m.clone()
            };
            let fd = (self.value(&shifted(eps))? - self.value(&shifted(-eps))?) / (2.0 * eps);
            let exact = grad.df.inner(phi)? + grad.da.inner(psi)?;
            worst = worst.max((fd - exact).abs() / (1.0 + exact.abs()));
        }
        Ok(worst)
    }
}

/// `H₀ = ∫(a − f)`.
pub fn casimir_h0() -> Functional {
    let h = &DiffPoly::jet(FieldId::A, 0, 0) - &DiffPoly::jet(FieldId::F, 0, 0);
    Functional::from_integrand("H0", h, NonlocalConvention::default()).expect("local linear integrand")
}

/// `∫ f`, the alternative Casimir of the constant bracket.
pub fn casimir_f() -> Functional {
    Functional::from_integrand("F", DiffPoly::jet(FieldId::F, 0, 0), NonlocalConvention::default())
        .expect("local linear integrand")
}

/// `H₁ = ∫(Λ⁻¹(f_x)·a + Λ⁻¹(f_x)·f − Λ⁻²(f_xx)·f)`, `Λ = −∂x + c∂y`.
///
/// The gradient is `δ_a = Λ⁻¹f_x`, `δ_f = Λ⁻¹a_x + 2Λ⁻¹f_x − 2Λ⁻²f_xx`,
/// checked against finite differences on a probe free of resonant modes.
pub fn h1_closed_form(c: f64) -> Result<Functional> {
    let conv = NonlocalConvention::mean_free();
    let h = Functional::new(
        format!("H1(c={c})"),
        move |m| {
            let (f, a) = (&m.g, &m.b);
            let g = f.dx().lambda_invert(c, &conv)?;
            let h = g.dx().lambda_invert(c, &conv)?;
            Ok(g.inner(a)? + g.inner(f)? - h.inner(f)?)
        },
        move |m| {
            let (f, a) = (&m.g, &m.b);
            let g = f.dx().lambda_invert(c, &conv)?;
            let h = g.dx().lambda_invert(c, &conv)?;
            let df = &(&a.dx().lambda_invert(c, &conv)? + &g.scale(2.0)) - &h.scale(2.0);
            Ok(GradientPair { da: g, df })
        },
    );
    let symbol = |kx: i64, ky: i64| -(kx as f64) + c * ky as f64;
    let grid = Grid::square(16)?;
    let probe = non_resonant_probe(grid, 0x5eed, 4, symbol, conv.resonance_tolerance);
    let dirs: Vec<_> = (1..4)
        .map(|s| {
            let d = non_resonant_probe(grid, 0x5eed + s, 4, symbol, conv.resonance_tolerance);
            (d.g, d.b)
        })
        .collect();
    let err = h.check_gradient_along(&probe, &dirs)?;
    if err > 1e-6 {
        return Err(Error::GradientMismatch(err));
    }
    Ok(h)
}

/// `H₁ = ∫(∂y⁻¹f_x)(a + f)`, the first Magri step from `H₀` for the limit
/// structure. Its gradient is `δ_a = ∂y⁻¹f_x`, `δ_f = ∂y⁻¹(2f_x + a_x)`.
pub fn h1_limit_closed_form() -> Result<Functional> {
    let conv = NonlocalConvention::mean_free();
    let inv = move |phi: &SpectralField| phi.invert_symbol(&conv, |_, ky| ky as f64);
    let h = Functional::new(
        "H1(limit)",
        move |m| {
            let g = inv(&m.g.dx())?;
            g.inner(&(&m.b + &m.g))
        },
        move |m| {
            let da = inv(&m.g.dx())?;
            let df = inv(&(&m.g.dx().scale(2.0) + &m.b.dx()))?;
            Ok(GradientPair { da, df })
        },
    );
    let grid = Grid::square(16)?;
    let symbol = |_: i64, ky: i64| ky as f64;
    let probe = non_resonant_probe(grid, 0x11, 4, symbol, conv.resonance_tolerance);
    let dirs: Vec<_> = (1..4)
        .map(|s| {
            let d = non_resonant_probe(grid, 0x11 + s, 4, symbol, conv.resonance_tolerance);
            (d.g, d.b)
        })
        .collect();
    let err = h.check_gradient_along(&probe, &dirs)?;
    if err > 1e-6 {
        return Err(Error::GradientMismatch(err));
    }
    Ok(h)
}

/// Random dual point whose fields carry no modes with `|symbol| ≤ tol`.
pub fn non_resonant_probe(
    grid: Grid,
    seed: u64,
    band: i64,
    symbol: impl Fn(i64, i64) -> f64,
    tol: f64,
) -> DualPoint {
    let keep = |kx: i64, ky: i64| symbol(kx, ky).abs() > tol;
    DualPoint {
        g: SpectralField::random_stream(grid, seed, 100, band, 1.0).filter_modes(keep),
        b: SpectralField::random_stream(grid, seed, 101, band, 1.0).filter_modes(keep),
        c1: 0.0,
        c2: 0.0,
    }
}

/// Inverts the constant structure: returns `dH_{k+1}` with
/// `X^const_{H_{k+1}} = X_k`.
pub fn magri_step(x: &TangentField, structure: &ConstantStructure, conv: &NonlocalConvention) -> Result<GradientPair> {
    match structure {
        ConstantStructure::Frozen(fp) => {
            let da = x.f_t.lambda_invert(fp.c, conv)?;
            let mut rhs = &x.a_t - &da.dx().scale(2.0);
            if fp.c1 != 0.0 {
                rhs -= &da.derive(Axis::X, 3).scale(fp.c1);
            }
            let df = rhs.lambda_invert(fp.c, conv)?;
            Ok(GradientPair { da, df })
        }
        ConstantStructure::Limit => {
            let symbol = |_: i64, ky: i64| ky as f64;
            Ok(GradientPair {
                da: x.f_t.invert_symbol(conv, symbol)?,
                df: x.a_t.invert_symbol(conv, symbol)?,
            })
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Casimir {
    /// `H₀ = ∫(a − f)`
    #[default]
    AMinusF,
    /// `∫ f`
    F,
}

impl Casimir {
    fn gradient(self, grid: Grid) -> GradientPair {
        let (da, df) = match self {
            Casimir::AMinusF => (1.0, -1.0),
            Casimir::F => (0.0, 1.0),
        };
        GradientPair {
            da: SpectralField::constant(grid, da),
            df: SpectralField::constant(grid, df),
        }
    }
}

pub const MAX_DEPTH: usize = 3;
pub const HOMOTOPY_NODES: usize = 32;

/// The Lenard-Magri ladder `X_{H_k} = X^const_{H_{k+1}}` started from a
/// Casimir of the constant structure.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hierarchy {
    pub structure: ConstantStructure,
    #[serde(default)]
    pub casimir: Casimir,
    pub convention: NonlocalConvention,
}

impl Hierarchy {
    pub fn new(structure: ConstantStructure) -> Self {
        Self {
            structure,
            casimir: Casimir::AMinusF,
            convention: NonlocalConvention::mean_free(),
        }
    }

    pub fn frozen(c: f64) -> Self {
        Self::new(ConstantStructure::Frozen(FrozenPoint::new(c)))
    }

    fn check_depth(k: usize) -> Result<()> {
        if k > MAX_DEPTH {
            return Err(Error::InvalidConfig(format!("hierarchy depth {k} exceeds {MAX_DEPTH}")));
        }
        Ok(())
    }

    /// `dH_0, …, dH_k` at `m`.
    pub fn gradients(&self, k: usize, m: &DualPoint) -> Result<Vec<GradientPair>> {
        Self::check_depth(k)?;
        let mut out = vec![self.casimir.gradient(m.grid())];
        for _ in 0..k {
            let x = lie_field(out.last().expect("non-empty"), m)?;
            out.push(magri_step(&x, &self.structure, &self.convention)?);
        }
        Ok(out)
    }

    pub fn gradient(&self, k: usize, m: &DualPoint) -> Result<GradientPair> {
        Ok(self.gradients(k, m)?.pop().expect("non-empty"))
    }

    /// `X_{H_k}(m)` for the Lie-Poisson bracket.
    pub fn vector_field(&self, k: usize, m: &DualPoint) -> Result<TangentField> {
        lie_field(&self.gradient(k, m)?, m)
    }

    pub fn value(&self, k: usize, m: &DualPoint) -> Result<f64> {
        magri_reconstruct(self, k, m)
    }

    pub fn functional(&self, k: usize) -> Functional {
        let (hv, hg) = (*self, *self);
        Functional::new(format!("H{k}"), move |m| hv.value(k, m), move |m| hg.gradient(k, m))
    }
}

/// `H_k(m) = ∫₀¹ ⟨dH_k(t f, t a), (f, a)⟩ dt` with the charges held fixed,
/// checked against the rule with twice as many nodes.
pub fn magri_reconstruct(h: &Hierarchy, k: usize, m: &DualPoint) -> Result<f64> {
    Hierarchy::check_depth(k)?;
    let integrand = |t: f64| -> Result<f64> {
        let mt = DualPoint {
            g: m.g.scale(t),
            b: m.b.scale(t),
            ..m.clone()
        };
        let grad = h.gradient(k, &mt)?;
        Ok(grad.da.inner(&m.b)? + grad.df.inner(&m.g)?)
    };
    let v = quadrature::integrate(HOMOTOPY_NODES, integrand)?;
    let doubled = quadrature::integrate(2 * HOMOTOPY_NODES, integrand)?;
    let disagreement = (v - doubled).abs();
    if disagreement > 1e-6 * (1.0 + doubled.abs()) {
        return Err(Error::Accuracy {
            nodes: HOMOTOPY_NODES,
            doubled: 2 * HOMOTOPY_NODES,
            disagreement,
        });
    }
    Ok(v)
}

/// `{F, G}_λ = {F, G}_ω − λ{F, G}`.
pub fn pencil_bracket(lambda: f64, f: &Functional, g: &Functional, m: &DualPoint, fp: &FrozenPoint) -> Result<f64> {
    let (df, dg) = (f.gradient(m)?, g.gradient(m)?);
    let el = bracket(&df.to_element(), &dg.to_element())?;
    Ok(pair(&el, &fp.dual_point(m.grid()))? - lambda * pair(&el, m)?)
}

pub const FD_STEP: f64 = 1e-5;

/// Gradient of `value` at `m` by central differences along the real Fourier
/// basis of the grid.
pub fn fd_gradient(value: impl Fn(&DualPoint) -> Result<f64>, m: &DualPoint, step: f64) -> Result<GradientPair> {
    let grid = m.grid();
    let mut out = GradientPair::zeros(grid);
    for e in SpectralField::real_basis(grid) {
        let norm2 = e.inner(&e)?;
        let de = e.scale(step);
        let along_f = (value(&DualPoint { g: &m.g + &de, ..m.clone() })?
            - value(&DualPoint { g: &m.g - &de, ..m.clone() })?)
            / (2.0 * step);
        let along_a = (value(&DualPoint { b: &m.b + &de, ..m.clone() })?
            - value(&DualPoint { b: &m.b - &de, ..m.clone() })?)
            / (2.0 * step);
        out.df += &e.scale(along_f / norm2);
        out.da += &e.scale(along_a / norm2);
    }
    Ok(out)
}

/// Cyclic Jacobi sum of the `λ`-pencil, `|Σ {F, {G, H}_λ}_λ|`, relative to
/// `1 + max` of its three terms. Inner brackets are differentiated by
/// finite differences.
pub fn pencil_jacobi_defect(
    lambda: f64,
    fs: [&Functional; 3],
    m: &DualPoint,
    fp: &FrozenPoint,
) -> Result<f64> {
    let mut terms = [0.0; 3];
    for (i, term) in terms.iter_mut().enumerate() {
        let (a, b, c) = (fs[i], fs[(i + 1) % 3], fs[(i + 2) % 3]);
        let inner = fd_gradient(|p| pencil_bracket(lambda, b, c, p, fp), m, FD_STEP)?;
        let da = a.gradient(m)?;
        let el = bracket(&da.to_element(), &inner.to_element())?;
        *term = pair(&el, &fp.dual_point(m.grid()))? - lambda * pair(&el, m)?;
    }
    let scale = 1.0 + terms.iter().fold(0.0f64, |s, t| s.max(t.abs()));
    Ok(terms.iter().sum::<f64>().abs() / scale)
}

/// Random constant-coefficient polynomial functional with linear and
/// quadratic terms in jet variables of order at most one per axis.
pub fn random_quadratic(seed: u64, stream: u64) -> DiffPoly {
    let mut rng = crate::rng::stream(seed, stream);
    let var = |rng: &mut rand_chacha::ChaCha8Rng| {
        let field = if rng.random_bool(0.5) { FieldId::F } else { FieldId::A };
        JetVariable::new(field, rng.random_range(0..2), rng.random_range(0..2))
    };
    let mut out = DiffPoly::zero();
    for degree in [1usize, 2, 2, 2] {
        let vars = (0..degree).map(|_| var(&mut rng)).collect();
        let num: i64 = rng.random_range(-4..=4);
        let den: i64 = rng.random_range(1..=3);
        let coef = num_rational::BigRational::new(num.into(), den.into());
        out = &out + &DiffPoly::term(coef, Monomial::new(vars));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{PI, SQRT_2};

    fn point(seed: u64, band: i64, c1: f64, c2: f64) -> DualPoint {
        let grid = Grid::square(32).unwrap();
        DualPoint {
            g: SpectralField::random_stream(grid, seed, 0, band, 1.0),
            b: SpectralField::random_stream(grid, seed, 1, band, 1.0),
            c1,
            c2,
        }
    }

    #[test]
    fn h0_field_is_the_transport_system() {
        let h0 = casimir_h0();
        for c2 in [0.0, 1.0] {
            let m = point(1, 6, 0.3, c2);
            let x = ham_lie(&h0, &m).unwrap();
            let expect = TangentField {
                f_t: m.g.dx(),
                a_t: &m.g.dx().scale(2.0) + &m.b.dx(),
            };
            assert!(x.relative_distance(&expect) < 1e-13);
        }
    }

    #[test]
    fn h0_values_and_gradient() {
        let h0 = casimir_h0();
        let grid = Grid::square(16).unwrap();
        let one = SpectralField::constant(grid, 1.0);
        let m = DualPoint::new(one.clone(), one.clone(), 0.0, 0.0).unwrap();
        assert_eq!(h0.value(&m).unwrap(), 0.0);
        let m = DualPoint::new(SpectralField::from_fn(grid, |x, _| x.sin()), one.scale(2.0), 0.0, 0.0).unwrap();
        assert!((h0.value(&m).unwrap() - 8.0 * PI * PI).abs() < 1e-12);
        let g = h0.gradient(&m).unwrap();
        assert_eq!(g.da, SpectralField::constant(grid, 1.0));
        assert_eq!(g.df, SpectralField::constant(grid, -1.0));
    }

    #[test]
    fn constant_functional_has_no_flow() {
        let k = Functional::from_integrand("K", DiffPoly::integer(3), NonlocalConvention::default()).unwrap();
        let m = point(2, 4, 0.0, 0.0);
        assert_eq!(ham_lie(&k, &m).unwrap().norm(), 0.0);
    }

    #[test]
    fn const_field_examples() {
        let grid = Grid::square(16).unwrap();
        let h0 = casimir_h0();
        let m = point(3, 4, 0.0, 0.0);
        let x = ham_const(&h0, &m, &FrozenPoint::new(SQRT_2)).unwrap();
        assert!(x.norm() < 1e-14);

        let grad = GradientPair {
            da: SpectralField::from_fn(grid, |x, _| x.sin()),
            df: SpectralField::zeros(grid),
        };
        let x = const_field(&grad, &FrozenPoint::new(0.0));
        assert!(x.f_t.max_difference(&SpectralField::from_fn(grid, |x, _| -x.cos())).unwrap() < 1e-14);
        assert!(x.a_t.max_difference(&SpectralField::from_fn(grid, |x, _| 2.0 * x.cos())).unwrap() < 1e-14);

        // frozen-point display agrees with the coadjoint action at m₀
        let fp = FrozenPoint { c: 1.7, c1: 0.4 };
        let g = GradientPair {
            da: SpectralField::random_stream(grid, 9, 0, 5, 1.0),
            df: SpectralField::random_stream(grid, 9, 1, 5, 1.0),
        };
        let via_coad = lie_field(&g, &fp.dual_point(grid)).unwrap();
        assert!(const_field(&g, &fp).relative_distance(&via_coad) < 1e-14);
        let via_coad = lie_field(&g, &ConstantStructure::Limit.dual_point(grid)).unwrap();
        assert!(limit_field(&g).relative_distance(&via_coad) < 1e-14);
    }

    #[test]
    fn limit_field_examples() {
        let grid = Grid::square(16).unwrap();
        let m = point(4, 4, 0.0, 0.0);
        assert!(ham_limit(&casimir_h0(), &m).unwrap().norm() < 1e-14);
        let grad = GradientPair {
            da: SpectralField::from_fn(grid, |_, y| y.sin()),
            df: SpectralField::zeros(grid),
        };
        let x = limit_field(&grad);
        assert!(x.f_t.max_difference(&SpectralField::from_fn(grid, |_, y| y.cos())).unwrap() < 1e-14);

        let g = GradientPair {
            da: SpectralField::random_stream(grid, 5, 0, 5, 1.0),
            df: SpectralField::random_stream(grid, 5, 1, 5, 1.0),
        };
        let c = 1e6;
        let big = const_field(&g, &FrozenPoint::new(c)).scale(1.0 / c);
        assert!(big.relative_distance(&limit_field(&g)) < 1e-5);
    }

    #[test]
    fn h1_ladder_and_gradient() {
        let h1 = h1_closed_form(SQRT_2).unwrap();
        let fp = FrozenPoint::new(SQRT_2);
        for seed in 0..3 {
            let m = point(10 + seed, 6, 0.0, 0.5);
            let lhs = ham_const(&h1, &m, &fp).unwrap();
            let rhs = ham_lie(&casimir_h0(), &m).unwrap();
            assert!(lhs.relative_distance(&rhs) < 1e-12);
            assert!(h1.check_gradient(&m, seed, 3).unwrap() < 1e-7);
            let step = Hierarchy::frozen(SQRT_2).gradient(1, &m).unwrap();
            assert!(step.max_difference(&h1.gradient(&m).unwrap()).unwrap() < 1e-12);
        }
        let m = DualPoint { g: SpectralField::zeros(Grid::square(32).unwrap()), ..point(1, 5, 0.0, 0.0) };
        assert_eq!(h1.value(&m).unwrap(), 0.0);
    }

    #[test]
    fn limit_h1_matches_the_limit_hierarchy() {
        let grid = Grid::square(32).unwrap();
        let keep = |_: i64, ky: i64| ky != 0;
        let m = DualPoint {
            g: SpectralField::random_stream(grid, 4, 0, 6, 1.0).filter_modes(keep),
            b: SpectralField::random_stream(grid, 4, 1, 6, 1.0).filter_modes(keep),
            c1: 0.0,
            c2: 0.0,
        };
        let h1 = h1_limit_closed_form().unwrap();
        let h = Hierarchy::new(ConstantStructure::Limit);
        assert!(h.gradient(1, &m).unwrap().max_difference(&h1.gradient(&m).unwrap()).unwrap() < 1e-13);
        let v = h.value(1, &m).unwrap();
        let closed = h1.value(&m).unwrap();
        assert!((v - closed).abs() < 1e-10 * (1.0 + closed.abs()));
        let ladder = limit_field(&h1.gradient(&m).unwrap());
        assert!(ladder.relative_distance(&ham_lie(&casimir_h0(), &m).unwrap()) < 1e-13);
    }

    #[test]
    fn resonant_c_is_reported() {
        let grid = Grid::square(16).unwrap();
        let h1 = h1_closed_form(1.0).unwrap();
        let m = DualPoint::new(
            SpectralField::from_fn(grid, |x, y| (x + y).sin()),
            SpectralField::zeros(grid),
            0.0,
            0.0,
        )
        .unwrap();
        match h1.gradient(&m) {
            Err(Error::HierarchyObstruction { modes }) => assert_eq!(modes, vec![(-1, -1), (1, 1)]),
            other => panic!("expected obstruction, got {other:?}"),
        }
    }

    #[test]
    fn homotopy_values() {
        let h = Hierarchy::frozen(SQRT_2);
        let m = point(7, 5, 0.0, 0.3);
        let v0 = magri_reconstruct(&h, 0, &m).unwrap();
        assert!((v0 - casimir_h0().value(&m).unwrap()).abs() < 1e-12);
        let v1 = magri_reconstruct(&h, 1, &m).unwrap();
        let closed = h1_closed_form(SQRT_2).unwrap().value(&m).unwrap();
        assert!((v1 - closed).abs() < 1e-8 * (1.0 + closed.abs()));
        let doubled = DualPoint { g: m.g.scale(2.0), b: m.b.scale(2.0), ..m.clone() };
        let v1d = magri_reconstruct(&h, 1, &doubled).unwrap();
        assert!((v1d - 4.0 * v1).abs() < 1e-7 * (1.0 + v1d.abs()));
        assert!(magri_reconstruct(&h, 4, &m).is_err());
    }

    #[test]
    fn magri_step_of_zero_is_zero() {
        let grid = Grid::square(16).unwrap();
        let g = magri_step(&TangentField::zeros(grid), &ConstantStructure::Frozen(FrozenPoint::new(SQRT_2)), &NonlocalConvention::mean_free()).unwrap();
        assert_eq!(g.norm(), 0.0);
    }

    #[test]
    fn involution_through_h2() {
        let h = Hierarchy::frozen(SQRT_2);
        let fp = FrozenPoint::new(SQRT_2);
        let m = point(8, 5, 0.0, 0.7);
        let grads = h.gradients(2, &m).unwrap();
        let structure = ConstantStructure::Frozen(fp);
        for k in 0..3 {
            for l in 0..3 {
                let (a, b) = (&grads[k], &grads[l]);
                let scale = bracket_scale(a, b, &m).unwrap();
                let lie = pair(&bracket(&a.to_element(), &b.to_element()).unwrap(), &m).unwrap();
                let con = structure.bracket(a, b).unwrap();
                assert!(lie.abs() / scale < 1e-10, "lie {k},{l}: {lie}");
                assert!(con.abs() / scale < 1e-10, "const {k},{l}: {con}");
            }
        }
        for k in 0..2 {
            let lhs = structure.field(&grads[k + 1]);
            let rhs = lie_field(&grads[k], &m).unwrap();
            assert!(lhs.relative_distance(&rhs) < 1e-10);
        }
    }

    #[test]
    fn casimir_property_of_h0() {
        let fp = FrozenPoint::new(SQRT_2);
        let h0 = casimir_h0();
        for s in 0..10 {
            let g = Functional::from_integrand("G", random_quadratic(3, s), NonlocalConvention::default()).unwrap();
            let m = point(20 + s, 5, 0.0, 0.0);
            let v = bracket_const(&h0, &g, &m, &fp).unwrap();
            assert!(v.abs() < 1e-10 * (1.0 + g.gradient(&m).unwrap().norm()), "{v}");
            assert!(bracket_lie(&g, &g, &m).unwrap().abs() < 1e-10 * (1.0 + g.gradient(&m).unwrap().norm().powi(2)));
        }
    }

    #[test]
    fn fd_gradient_recovers_polynomial_gradients() {
        let grid = Grid::square(8).unwrap();
        let g = Functional::from_integrand("G", random_quadratic(5, 0), NonlocalConvention::default()).unwrap();
        let m = DualPoint {
            g: SpectralField::random_stream(grid, 1, 0, 2, 1.0),
            b: SpectralField::random_stream(grid, 1, 1, 2, 1.0),
            c1: 0.0,
            c2: 0.0,
        };
        let fd = fd_gradient(|p| g.value(p), &m, FD_STEP).unwrap();
        assert!(fd.max_difference(&g.gradient(&m).unwrap()).unwrap() < 1e-7);
    }

    #[test]
    fn pencil_jacobi_small() {
        let grid = Grid::square(8).unwrap();
        let fp = FrozenPoint::new(SQRT_2);
        let fs: Vec<Functional> = (0..3)
            .map(|s| Functional::from_integrand("G", random_quadratic(17, s), NonlocalConvention::default()).unwrap())
            .collect();
        let m = DualPoint {
            g: SpectralField::random_stream(grid, 2, 0, 1, 1.0),
            b: SpectralField::random_stream(grid, 2, 1, 1, 1.0),
            c1: 0.2,
            c2: 0.5,
        };
        for lambda in [0.0, -1.0, 2.0] {
            let d = pencil_jacobi_defect(lambda, [&fs[0], &fs[1], &fs[2]], &m, &fp).unwrap();
            assert!(d < 1e-7, "λ={lambda}: {d}");
        }
    }
}
