//! Band-limited real fields on the torus `[0, 2π)²`.
//!
//! A [`SpectralField`] stores the Fourier coefficients of a real function in
//! standard FFT ordering, normalised so that `u(x, y) = Σ ĉ(k) e^{i k·x}`.
//! The Nyquist row and column are always zero, which keeps odd-order
//! derivatives Hermitian. Products are computed on a zero-padded grid large
//! enough that the quadratic (or higher) product is alias free before it is
//! truncated back to the resolved band.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// (2π)², the area of the torus.
pub const TORUS_AREA: f64 = 4.0 * PI * PI;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
}

impl Grid {
    pub fn new(nx: usize, ny: usize) -> Result<Self> {
        if nx < 4 || ny < 4 || !nx.is_multiple_of(2) || !ny.is_multiple_of(2) {
            return Err(Error::InvalidGrid { nx, ny });
        }
        Ok(Self { nx, ny })
    }

    pub fn square(n: usize) -> Result<Self> {
        Self::new(n, n)
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Largest resolved wavenumber along `axis` (the Nyquist mode is dropped).
    pub fn max_wavenumber(&self, axis: Axis) -> i64 {
        match axis {
            Axis::X => self.nx as i64 / 2 - 1,
            Axis::Y => self.ny as i64 / 2 - 1,
        }
    }

    pub fn transposed(&self) -> Grid {
        Grid {
            nx: self.ny,
            ny: self.nx,
        }
    }

    pub fn x(&self, ix: usize) -> f64 {
        2.0 * PI * ix as f64 / self.nx as f64
    }

    pub fn y(&self, iy: usize) -> f64 {
        2.0 * PI * iy as f64 / self.ny as f64
    }

    fn index(&self, kx: i64, ky: i64) -> Option<usize> {
        if kx.abs() > self.max_wavenumber(Axis::X) || ky.abs() > self.max_wavenumber(Axis::Y) {
            return None;
        }
        let ix = kx.rem_euclid(self.nx as i64) as usize;
        let iy = ky.rem_euclid(self.ny as i64) as usize;
        Some(iy * self.nx + ix)
    }

    /// Wavenumbers of storage slot `idx`.
    fn wavenumbers(&self, idx: usize) -> (i64, i64) {
        (wavenumber(idx % self.nx, self.nx), wavenumber(idx / self.nx, self.ny))
    }

    pub fn check(&self, other: &Grid) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch {
                left: (self.nx, self.ny),
                right: (other.nx, other.ny),
            });
        }
        Ok(())
    }
}

fn wavenumber(i: usize, n: usize) -> i64 {
    if i < n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ZeroModeRule {
    /// `∂⁻¹φ = ∫₀ˣ φ dξ − ∫₀^{2π} φ dx`, reproduced mode by mode.
    #[default]
    PaperConstant,
    /// The antiderivative with zero mean along the axis.
    MeanFree,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonlocalConvention {
    pub zero_mode_rule: ZeroModeRule,
    pub resonance_tolerance: f64,
    /// Silently drop unsolvable components instead of failing.
    #[serde(default)]
    pub project: bool,
}

impl Default for NonlocalConvention {
    fn default() -> Self {
        Self {
            zero_mode_rule: ZeroModeRule::PaperConstant,
            resonance_tolerance: 1e-9,
            project: false,
        }
    }
}

impl NonlocalConvention {
    pub fn mean_free() -> Self {
        Self {
            zero_mode_rule: ZeroModeRule::MeanFree,
            ..Self::default()
        }
    }

    pub fn with_projection(mut self, project: bool) -> Self {
        self.project = project;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.resonance_tolerance.is_nan() || self.resonance_tolerance <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "resonance tolerance must be positive, got {}",
                self.resonance_tolerance
            )));
        }
        Ok(())
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(n)
        } else {
            p.plan_fft_forward(n)
        }
    })
}

/// Unnormalised 2-D transform of a row-major `ny × nx` buffer.
fn fft2(buf: &mut [Complex64], nx: usize, ny: usize, inverse: bool) {
    let row = plan(nx, inverse);
    row.process(buf);
    let col = plan(ny, inverse);
    let mut column = vec![Complex64::new(0.0, 0.0); ny];
    for ix in 0..nx {
        for iy in 0..ny {
            column[iy] = buf[iy * nx + ix];
        }
        col.process(&mut column);
        for iy in 0..ny {
            buf[iy * nx + ix] = column[iy];
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpectralField {
    grid: Grid,
    coeffs: Vec<Complex64>,
}

impl SpectralField {
    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            coeffs: vec![Complex64::new(0.0, 0.0); grid.len()],
        }
    }

    pub fn constant(grid: Grid, value: f64) -> Self {
        let mut out = Self::zeros(grid);
        out.coeffs[0] = Complex64::new(value, 0.0);
        out
    }

    /// Builds a real field from modes `(kx, ky, ĉ)`; the conjugate partner at
    /// `−k` is filled in, so each pair should be listed once.
    pub fn from_modes(grid: Grid, modes: &[(i64, i64, Complex64)]) -> Self {
        let mut out = Self::zeros(grid);
        for &(kx, ky, c) in modes {
            if let Some(i) = grid.index(kx, ky) {
                if kx == 0 && ky == 0 {
                    out.coeffs[i] += Complex64::new(c.re, 0.0);
                    continue;
                }
                out.coeffs[i] += c;
                let j = grid.index(-kx, -ky).expect("symmetric band");
                out.coeffs[j] += c.conj();
            }
        }
        out
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for iy in 0..grid.ny {
            for ix in 0..grid.nx {
                values.push(f(grid.x(ix), grid.y(iy)));
            }
        }
        Self::from_values(grid, &values)
    }

    /// Row-major grid values (`values[iy * nx + ix]`).
    pub fn from_grid(grid: Grid, values: &[f64]) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidConfig(format!(
                "expected {} grid values, got {}",
                grid.len(),
                values.len()
            )));
        }
        Ok(Self::from_values(grid, values))
    }

    fn from_values(grid: Grid, values: &[f64]) -> Self {
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft2(&mut buf, grid.nx, grid.ny, false);
        let scale = 1.0 / grid.len() as f64;
        buf.iter_mut().for_each(|c| *c *= scale);
        let mut out = Self { grid, coeffs: buf };
        out.symmetrize();
        out
    }

    fn complex_values(&self) -> Vec<Complex64> {
        let mut buf = self.coeffs.clone();
        fft2(&mut buf, self.grid.nx, self.grid.ny, true);
        buf
    }

    pub fn to_grid(&self) -> Vec<f64> {
        self.complex_values().into_iter().map(|c| c.re).collect()
    }

    /// Largest imaginary part of the inverse transform; a reality diagnostic.
    pub fn imaginary_residual(&self) -> f64 {
        self.complex_values()
            .into_iter()
            .fold(0.0, |m, c| m.max(c.im.abs()))
    }

    /// Largest violation of `ĉ(−k) = conj ĉ(k)`.
    pub fn hermitian_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, c) in self.coeffs.iter().enumerate() {
            let (kx, ky) = self.grid.wavenumbers(i);
            let partner = self.coeff(-kx, -ky);
            worst = worst.max((c - partner.conj()).norm());
        }
        worst
    }

    fn symmetrize(&mut self) {
        let grid = self.grid;
        let mut out = vec![Complex64::new(0.0, 0.0); grid.len()];
        for (i, slot) in out.iter_mut().enumerate() {
            let (kx, ky) = grid.wavenumbers(i);
            if grid.index(kx, ky).is_none() {
                continue;
            }
            let partner = self.coeff(-kx, -ky);
            *slot = 0.5 * (self.coeffs[i] + partner.conj());
        }
        self.coeffs = out;
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn coeff(&self, kx: i64, ky: i64) -> Complex64 {
        match self.grid.index(kx, ky) {
            Some(i) => self.coeffs[i],
            None => Complex64::new(0.0, 0.0),
        }
    }

    /// Resolved modes as `(kx, ky, ĉ)`.
    pub fn modes(&self) -> impl Iterator<Item = (i64, i64, Complex64)> + '_ {
        self.coeffs.iter().enumerate().filter_map(move |(i, &c)| {
            let (kx, ky) = self.grid.wavenumbers(i);
            self.grid.index(kx, ky).map(|_| (kx, ky, c))
        })
    }

    fn map_modes(&self, f: impl Fn(i64, i64, Complex64) -> Complex64) -> Self {
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let (kx, ky) = self.grid.wavenumbers(i);
                if self.grid.index(kx, ky).is_none() {
                    Complex64::new(0.0, 0.0)
                } else {
                    f(kx, ky, c)
                }
            })
            .collect();
        Self {
            grid: self.grid,
            coeffs,
        }
    }

    pub fn mean(&self) -> f64 {
        self.coeffs[0].re
    }

    /// `∫ φ dx dy` over the torus.
    pub fn integral(&self) -> f64 {
        TORUS_AREA * self.mean()
    }

    pub fn max_coeff(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |m, c| m.max(c.norm()))
    }

    /// `∫ φ ψ dx dy`, exact for resolved fields.
    pub fn inner(&self, other: &SpectralField) -> Result<f64> {
        self.grid.check(&other.grid)?;
        let s: f64 = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| (a * b.conj()).re)
            .sum();
        Ok(TORUS_AREA * s)
    }

    pub fn l2_norm(&self) -> f64 {
        let s: f64 = self.coeffs.iter().map(|c| c.norm_sqr()).sum();
        (TORUS_AREA * s).sqrt()
    }

    /// Root-mean-square value over the torus.
    pub fn rms(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.to_grid().into_iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map_modes(|_, _, c| c * s)
    }

    /// `(∂_axis)^order φ`.
    pub fn derive(&self, axis: Axis, order: u32) -> Self {
        if order == 0 {
            return self.clone();
        }
        self.map_modes(|kx, ky, c| {
            let k = match axis {
                Axis::X => kx,
                Axis::Y => ky,
            } as f64;
            c * Complex64::new(0.0, k).powu(order)
        })
    }

    pub fn dx(&self) -> Self {
        self.derive(Axis::X, 1)
    }

    pub fn dy(&self) -> Self {
        self.derive(Axis::Y, 1)
    }

    fn solvability_threshold(&self, tolerance: f64) -> f64 {
        tolerance * (1.0 + self.max_coeff())
    }

    /// Components with `k_axis = 0`, i.e. the mean along `axis` as a field.
    pub fn axis_mean(&self, axis: Axis) -> Self {
        self.map_modes(|kx, ky, c| {
            let k = if axis == Axis::X { kx } else { ky };
            if k == 0 {
                c
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
    }

    /// Removes the components with `k_axis = 0`.
    pub fn without_axis_mean(&self, axis: Axis) -> Self {
        self.map_modes(|kx, ky, c| {
            let k = if axis == Axis::X { kx } else { ky };
            if k == 0 {
                Complex64::new(0.0, 0.0)
            } else {
                c
            }
        })
    }

    /// Zeroes every mode for which `keep` is false.
    pub fn filter_modes(&self, keep: impl Fn(i64, i64) -> bool) -> Self {
        self.map_modes(|kx, ky, c| if keep(kx, ky) { c } else { Complex64::new(0.0, 0.0) })
    }

    /// Orthogonal real basis of the resolved fields on `grid`: the constant,
    /// then `cos(k·x)` and `sin(k·x)` for one representative of each `±k`.
    pub fn real_basis(grid: Grid) -> Vec<SpectralField> {
        let (bx, by) = (grid.max_wavenumber(Axis::X), grid.max_wavenumber(Axis::Y));
        let mut out = vec![Self::constant(grid, 1.0)];
        for ky in 0..=by {
            for kx in -bx..=bx {
                if ky == 0 && kx <= 0 {
                    continue;
                }
                out.push(Self::from_modes(grid, &[(kx, ky, Complex64::new(0.5, 0.0))]));
                out.push(Self::from_modes(grid, &[(kx, ky, Complex64::new(0.0, -0.5))]));
            }
        }
        out
    }

    /// Keeps modes with `|kx|, |ky| ≤ band`.
    pub fn band_limited(&self, band: i64) -> Self {
        self.map_modes(|kx, ky, c| {
            if kx.abs() <= band && ky.abs() <= band {
                c
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
    }

    /// `∂_axis⁻¹ φ` under `convention`.
    ///
    /// Modes with `k_axis ≠ 0` are divided by `i k_axis`. The `k_axis = 0`
    /// components must vanish (up to the tolerance) unless the convention
    /// allows projecting them away. Under [`ZeroModeRule::PaperConstant`] the
    /// new `k_axis = 0` components are those of `∫₀ˣ φ dξ − ∫₀^{2π} φ dx`.
    pub fn antiderive(&self, axis: Axis, convention: &NonlocalConvention) -> Result<Self> {
        let threshold = self.solvability_threshold(convention.resonance_tolerance);
        let along = |kx: i64, ky: i64| if axis == Axis::X { kx } else { ky };
        if !convention.project {
            let worst = self
                .modes()
                .filter(|&(kx, ky, c)| along(kx, ky) == 0 && c.norm() > threshold)
                .max_by(|a, b| a.2.norm().total_cmp(&b.2.norm()));
            if let Some((kx, ky, c)) = worst {
                return Err(Error::Solvability {
                    axis,
                    mode: (kx, ky),
                    magnitude: c.norm(),
                });
            }
        }
        let mut out = self.map_modes(|kx, ky, c| {
            let k = along(kx, ky);
            if k == 0 {
                Complex64::new(0.0, 0.0)
            } else {
                c / Complex64::new(0.0, k as f64)
            }
        });
        if convention.zero_mode_rule == ZeroModeRule::PaperConstant {
            // value at the origin of the axis is pinned to −2π·mean_axis(φ)
            let transverse_max = match axis {
                Axis::X => self.grid.max_wavenumber(Axis::Y),
                Axis::Y => self.grid.max_wavenumber(Axis::X),
            };
            for q in -transverse_max..=transverse_max {
                let (mut origin, mean) = (Complex64::new(0.0, 0.0), match axis {
                    Axis::X => self.coeff(0, q),
                    Axis::Y => self.coeff(q, 0),
                });
                let along_max = self.grid.max_wavenumber(axis);
                for k in -along_max..=along_max {
                    if k == 0 {
                        continue;
                    }
                    let (kx, ky) = if axis == Axis::X { (k, q) } else { (q, k) };
                    origin += out.coeff(kx, ky);
                }
                let idx = match axis {
                    Axis::X => self.grid.index(0, q),
                    Axis::Y => self.grid.index(q, 0),
                }
                .expect("resolved transverse mode");
                out.coeffs[idx] = -origin - 2.0 * PI * mean;
            }
        }
        Ok(out)
    }

    /// `Λφ` with `Λ = −∂x + c ∂y`.
    pub fn lambda_apply(&self, c: f64) -> Self {
        self.map_modes(|kx, ky, z| z * Complex64::new(0.0, -(kx as f64) + c * ky as f64))
    }

    /// `Λ⁻¹φ` on the non-resonant subspace.
    ///
    /// Modes whose symbol `|−kx + c·ky|` is below the tolerance must carry no
    /// energy; they are listed in the error otherwise. The kernel component of
    /// the result is zero.
    pub fn lambda_invert(&self, c: f64, convention: &NonlocalConvention) -> Result<Self> {
        self.invert_symbol(convention, |kx, ky| -(kx as f64) + c * ky as f64)
    }

    /// Divides by `i·symbol(k)`; resonant modes must carry no energy.
    pub fn invert_symbol(
        &self,
        convention: &NonlocalConvention,
        symbol: impl Fn(i64, i64) -> f64,
    ) -> Result<Self> {
        let tol = convention.resonance_tolerance;
        let threshold = self.solvability_threshold(tol);
        let mut obstructed: Vec<(i64, i64)> = self
            .modes()
            .filter(|&(kx, ky, z)| symbol(kx, ky).abs() <= tol && z.norm() > threshold)
            .map(|(kx, ky, _)| (kx, ky))
            .collect();
        if !obstructed.is_empty() && !convention.project {
            obstructed.sort();
            return Err(Error::HierarchyObstruction { modes: obstructed });
        }
        Ok(self.map_modes(|kx, ky, z| {
            let s = symbol(kx, ky);
            if s.abs() <= tol {
                Complex64::new(0.0, 0.0)
            } else {
                z / Complex64::new(0.0, s)
            }
        }))
    }

    /// The same Fourier series on another grid: modes the target cannot
    /// resolve are dropped, missing ones are zero.
    pub fn resample(&self, grid: Grid) -> Self {
        let mut out = Self::zeros(grid);
        for (kx, ky, c) in self.modes() {
            if let Some(i) = grid.index(kx, ky) {
                out.coeffs[i] = c;
            }
        }
        out
    }

    /// Alias-free pointwise product, truncated to the resolved band.
    pub fn multiply(&self, other: &SpectralField) -> Result<Self> {
        Self::pointwise(&[self, other], 2, |v| v[0] * v[1])
    }

    /// Product of several fields in one padded transform.
    pub fn product(fields: &[&SpectralField]) -> Result<Self> {
        let first = fields
            .first()
            .ok_or_else(|| Error::Unsupported("empty product".into()))?;
        if fields.len() == 1 {
            return Ok((*first).clone());
        }
        Self::pointwise(fields, fields.len(), |v| v.iter().product())
    }

    /// Evaluates a polynomial map of total degree at most `degree` pointwise
    /// on a grid padded so that the result is alias free.
    pub fn pointwise(
        fields: &[&SpectralField],
        degree: usize,
        op: impl Fn(&[f64]) -> f64,
    ) -> Result<Self> {
        let grid = fields
            .first()
            .ok_or_else(|| Error::Unsupported("pointwise map of no fields".into()))?
            .grid;
        for f in fields {
            grid.check(&f.grid)?;
        }
        let dealiaser = Dealiaser::for_degree(grid, degree.max(1));
        let lifted: Vec<Vec<f64>> = fields.iter().map(|f| dealiaser.lift(f)).collect();
        let mut scratch = vec![0.0; fields.len()];
        let values = (0..dealiaser.len())
            .map(|p| {
                for (s, l) in scratch.iter_mut().zip(&lifted) {
                    *s = l[p];
                }
                op(&scratch)
            })
            .collect();
        Ok(dealiaser.lower(values))
    }

    /// Exchanges the roles of x and y.
    pub fn transpose(&self) -> Self {
        let grid = self.grid.transposed();
        let mut out = Self::zeros(grid);
        for (kx, ky, c) in self.modes() {
            let i = grid.index(ky, kx).expect("transposed band");
            out.coeffs[i] = c;
        }
        out
    }

    pub fn max_difference(&self, other: &SpectralField) -> Result<f64> {
        self.grid.check(&other.grid)?;
        Ok((self - other).max_abs())
    }

    /// Deterministic random real field with `|kx|, |ky| ≤ band`, zero mean and
    /// root-mean-square value `amplitude`. Mode weights decay like `1/(1+|k|²)`.
    pub fn random(grid: Grid, seed: u64, band: i64, amplitude: f64) -> Self {
        Self::random_stream(grid, seed, 0, band, amplitude)
    }

    /// As [`SpectralField::random`], drawing from an independent stream.
    pub fn random_stream(grid: Grid, seed: u64, stream: u64, band: i64, amplitude: f64) -> Self {
        let mut gen = rng::stream(seed, stream);
        let bx = band.min(grid.max_wavenumber(Axis::X));
        let by = band.min(grid.max_wavenumber(Axis::Y));
        let mut modes = Vec::new();
        for ky in 0..=by {
            for kx in -bx..=bx {
                if ky == 0 && kx <= 0 {
                    continue;
                }
                let weight = 1.0 / (1.0 + (kx * kx + ky * ky) as f64);
                let re: f64 = gen.random_range(-1.0..1.0);
                let im: f64 = gen.random_range(-1.0..1.0);
                modes.push((kx, ky, Complex64::new(re, im) * weight));
            }
        }
        let field = Self::from_modes(grid, &modes);
        let rms = field.rms();
        if rms == 0.0 {
            return field;
        }
        field.scale(amplitude / rms)
    }
}

impl fmt::Display for SpectralField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "SpectralField({}x{}, rms={:.6e})",
            self.grid.nx,
            self.grid.ny,
            self.rms()
        )
    }
}

/// Moves fields to and from a zero-padded physical grid on which products of
/// up to `degree` resolved fields are exact.
#[derive(Clone, Copy, Debug)]
pub struct Dealiaser {
    grid: Grid,
    mx: usize,
    my: usize,
}

impl Dealiaser {
    pub fn for_degree(grid: Grid, degree: usize) -> Self {
        let padded = |n: usize| {
            let m = (degree + 1) * n / 2 + ((degree + 1) * n) % 2;
            m + m % 2
        };
        Self {
            grid,
            mx: padded(grid.nx),
            my: padded(grid.ny),
        }
    }

    pub fn len(&self) -> usize {
        self.mx * self.my
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn lift(&self, field: &SpectralField) -> Vec<f64> {
        let mut buf = vec![Complex64::new(0.0, 0.0); self.len()];
        for (kx, ky, c) in field.modes() {
            let ix = kx.rem_euclid(self.mx as i64) as usize;
            let iy = ky.rem_euclid(self.my as i64) as usize;
            buf[iy * self.mx + ix] = c;
        }
        fft2(&mut buf, self.mx, self.my, true);
        buf.into_iter().map(|c| c.re).collect()
    }

    pub fn lower(&self, values: Vec<f64>) -> SpectralField {
        let mut buf: Vec<Complex64> = values.into_iter().map(|v| Complex64::new(v, 0.0)).collect();
        fft2(&mut buf, self.mx, self.my, false);
        let scale = 1.0 / self.len() as f64;
        let mut out = SpectralField::zeros(self.grid);
        for (i, slot) in out.coeffs.iter_mut().enumerate() {
            let (kx, ky) = self.grid.wavenumbers(i);
            if self.grid.index(kx, ky).is_none() {
                continue;
            }
            let ix = kx.rem_euclid(self.mx as i64) as usize;
            let iy = ky.rem_euclid(self.my as i64) as usize;
            *slot = buf[iy * self.mx + ix] * scale;
        }
        out.symmetrize();
        out
    }
}

macro_rules! binary_op {
    ($trait:ident, $method:ident, $op:tt) => {
        impl $trait<&SpectralField> for &SpectralField {
            type Output = SpectralField;
            fn $method(self, rhs: &SpectralField) -> SpectralField {
                assert_eq!(self.grid, rhs.grid, "grid mismatch in field arithmetic");
                SpectralField {
                    grid: self.grid,
                    coeffs: self.coeffs.iter().zip(&rhs.coeffs).map(|(a, b)| a $op b).collect(),
                }
            }
        }
        impl $trait<SpectralField> for SpectralField {
            type Output = SpectralField;
            fn $method(self, rhs: SpectralField) -> SpectralField {
                &self $op &rhs
            }
        }
        impl $trait<&SpectralField> for SpectralField {
            type Output = SpectralField;
            fn $method(self, rhs: &SpectralField) -> SpectralField {
                &self $op rhs
            }
        }
    };
}

binary_op!(Add, add, +);
binary_op!(Sub, sub, -);

impl AddAssign<&SpectralField> for SpectralField {
    fn add_assign(&mut self, rhs: &SpectralField) {
        assert_eq!(self.grid, rhs.grid, "grid mismatch in field arithmetic");
        self.coeffs.iter_mut().zip(&rhs.coeffs).for_each(|(a, b)| *a += b);
    }
}

impl SubAssign<&SpectralField> for SpectralField {
    fn sub_assign(&mut self, rhs: &SpectralField) {
        assert_eq!(self.grid, rhs.grid, "grid mismatch in field arithmetic");
        self.coeffs.iter_mut().zip(&rhs.coeffs).for_each(|(a, b)| *a -= b);
    }
}

impl Mul<&SpectralField> for f64 {
    type Output = SpectralField;
    fn mul(self, rhs: &SpectralField) -> SpectralField {
        rhs.scale(self)
    }
}

impl Mul<SpectralField> for f64 {
    type Output = SpectralField;
    fn mul(self, rhs: SpectralField) -> SpectralField {
        rhs.scale(self)
    }
}

impl Neg for &SpectralField {
    type Output = SpectralField;
    fn neg(self) -> SpectralField {
        self.scale(-1.0)
    }
}

impl Neg for SpectralField {
    type Output = SpectralField;
    fn neg(self) -> SpectralField {
        self.scale(-1.0)
    }
}
