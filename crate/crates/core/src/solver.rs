//! Pseudospectral time integration of the dispersionless equations on the
//! torus, with first-integral monitoring and manufactured-solution studies.
//!
//! Every equation is stored in its `u_tx = N(u)` (or `Λu_t = N`) form. The
//! forcing `N` is evaluated alias free and then inverted. For `∂x` the
//! x-independent part of `N` cannot be inverted: its norm is logged as the
//! x-mean defect and the part is dropped or rejected per [`XMeanPolicy`].

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algebra::DualPoint;
use crate::error::{Error, Result};
use crate::poisson::{casimir_h0, h1_closed_form, h1_limit_closed_form, ConstantStructure, Functional, Hierarchy};
use crate::snapshot::Snapshot;
use crate::spectral::{Axis, Grid, NonlocalConvention, SpectralField};

/// Cap on the default initial-data band.
pub const DEFAULT_BAND: i64 = 2;

/// Largest x-mean defect accepted by [`XMeanPolicy::Error`].
pub const XMEAN_TOLERANCE: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Equation {
    /// `u_tx = u_xy u_y − u_yy u_x`
    Eq1,
    /// `u_tx = u_xx u_y − u_xy u_x + c u_yy`
    Eq2,
    /// The coupled `(u, v)` system bi-Hamiltonian for the limit pencil.
    TheoremSystem,
    /// The coupled `(u, v)` system of the frozen pencil at finite `c`.
    Intermediate,
    /// `u_tx = c(u_xy u_y − u_yy u_x) + u_xx u_y − u_xy u_x`
    Family,
}

impl Equation {
    pub fn is_coupled(self) -> bool {
        matches!(self, Equation::TheoremSystem | Equation::Intermediate)
    }

    pub fn components(self) -> usize {
        if self.is_coupled() {
            2
        } else {
            1
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum XMeanPolicy {
    #[default]
    ProjectAndLog,
    Error,
}

fn default_stride() -> usize {
    10
}

fn default_amplitude() -> f64 {
    1.0
}

fn default_c() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub equation: Equation,
    pub nx: usize,
    pub ny: usize,
    pub dt: f64,
    pub t_final: f64,
    /// Charge of eq2, interpolation parameter of the family, `Λ` parameter
    /// of the intermediate system.
    #[serde(default = "default_c")]
    pub c: f64,
    #[serde(default)]
    pub c1: f64,
    #[serde(default)]
    pub c2: f64,
    /// Used for `Λ⁻¹` in the intermediate system.
    #[serde(default = "NonlocalConvention::mean_free")]
    pub convention: NonlocalConvention,
    #[serde(default)]
    pub xmean_policy: XMeanPolicy,
    #[serde(default)]
    pub seed: u64,
    /// Log every `stride` steps.
    #[serde(default = "default_stride")]
    pub stride: usize,
    /// Keep a snapshot every `snapshot_stride` steps; 0 keeps only the first
    /// and last states.
    #[serde(default)]
    pub snapshot_stride: usize,
    /// Initial-data band; defaults to `min(N/6, 2)`. At unit norm, wider
    /// bands steepen into a gradient catastrophe well before `t = 1`.
    #[serde(default)]
    pub band: Option<i64>,
    /// L2 norm of each initial component.
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    #[serde(default)]
    pub monitor_h2: bool,
    /// Explicit initial data, one mode list per component, replacing the
    /// random default.
    #[serde(default)]
    pub initial_modes: Option<Vec<Vec<Mode>>>,
}

/// Fourier coefficient `ĉ(kx, ky) = re + i·im`; the conjugate partner is
/// implied.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mode {
    pub kx: i64,
    pub ky: i64,
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

impl SimConfig {
    pub fn new(equation: Equation, n: usize) -> Self {
        Self {
            equation,
            nx: n,
            ny: n,
            dt: 1e-3,
            t_final: 1.0,
            c: default_c(),
            c1: 0.0,
            c2: 0.0,
            convention: NonlocalConvention::mean_free(),
            xmean_policy: XMeanPolicy::default(),
            seed: 0,
            stride: default_stride(),
            snapshot_stride: 0,
            band: None,
            amplitude: default_amplitude(),
            monitor_h2: false,
            initial_modes: None,
        }
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.nx, self.ny)
    }

    pub fn band(&self) -> i64 {
        self.band.unwrap_or(((self.nx.min(self.ny) / 6) as i64).min(DEFAULT_BAND))
    }

    /// Number of steps; `t_final` must be a whole number of steps.
    pub fn steps(&self) -> Result<usize> {
        let n = (self.t_final / self.dt).round();
        if (n * self.dt - self.t_final).abs() > 1e-9 * self.t_final {
            return Err(Error::InvalidConfig(format!(
                "t_final = {} is not a multiple of dt = {}",
                self.t_final, self.dt
            )));
        }
        Ok(n as usize)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        self.grid()?;
        self.convention.validate()?;
        if self.dt <= 0.0 || !self.dt.is_finite() {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if self.t_final < self.dt || !self.t_final.is_finite() {
            return bad(format!("t_final = {} must be at least dt = {}", self.t_final, self.dt));
        }
        self.steps()?;
        if self.stride == 0 {
            return bad("stride must be at least 1".into());
        }
        if self.amplitude < 0.0 || !self.amplitude.is_finite() {
            return bad(format!("amplitude must be finite and non-negative, got {}", self.amplitude));
        }
        if self.band() < 1 {
            return bad(format!("initial band must be at least 1, got {}", self.band()));
        }
        for (name, v) in [("c", self.c), ("c1", self.c1), ("c2", self.c2)] {
            if !v.is_finite() {
                return bad(format!("{name} must be finite"));
            }
        }
        if self.equation == Equation::Intermediate && self.c == 0.0 {
            return bad("the intermediate system needs c ≠ 0".into());
        }
        Ok(())
    }

    /// Time derivative of every component at `fields`.
    pub fn rhs(&self, fields: &[SpectralField]) -> Result<Rhs> {
        let p = self.xmean_policy;
        match self.equation {
            Equation::Eq1 => single(rhs_eq1(&fields[0], p)?),
            Equation::Eq2 => single(rhs_eq2(&fields[0], self.c, p)?),
            Equation::Family => single(rhs_family(&fields[0], self.c, p)?),
            Equation::TheoremSystem => {
                let ((u_t, v_t), defect) = rhs_theorem_system(&fields[0], &fields[1], p)?;
                Ok(Rhs {
                    fields: vec![u_t, v_t],
                    defect,
                })
            }
            Equation::Intermediate => {
                let ((u_t, v_t), defect) =
                    rhs_intermediate(&fields[0], &fields[1], self.c, self.c1, self.c2, &self.convention)?;
                Ok(Rhs {
                    fields: vec![u_t, v_t],
                    defect,
                })
            }
        }
    }
}

fn single((field, defect): (SpectralField, f64)) -> Result<Rhs> {
    Ok(Rhs {
        fields: vec![field],
        defect,
    })
}

/// Time derivatives plus the norm of whatever the inversion discarded.
#[derive(Clone, Debug)]
pub struct Rhs {
    pub fields: Vec<SpectralField>,
    pub defect: f64,
}

/// `∂x⁻¹` of a forcing, returning the norm of its x-independent part.
pub fn invert_x(forcing: &SpectralField, policy: XMeanPolicy) -> Result<(SpectralField, f64)> {
    let mean = forcing.axis_mean(Axis::X);
    let defect = mean.l2_norm();
    if policy == XMeanPolicy::Error && defect > XMEAN_TOLERANCE {
        let (kx, ky, c) = mean
            .modes()
            .max_by(|a, b| a.2.norm().total_cmp(&b.2.norm()))
            .expect("a grid has modes");
        return Err(Error::Solvability {
            axis: Axis::X,
            mode: (kx, ky),
            magnitude: c.norm(),
        });
    }
    let inverted = forcing
        .without_axis_mean(Axis::X)
        .antiderive(Axis::X, &NonlocalConvention::mean_free())?;
    Ok((inverted, defect))
}

struct Derivatives {
    x: SpectralField,
    y: SpectralField,
    xx: SpectralField,
    xy: SpectralField,
    yy: SpectralField,
}

impl Derivatives {
    fn of(u: &SpectralField) -> Self {
        let x = u.dx();
        let y = u.dy();
        Self {
            xx: x.dx(),
            xy: x.dy(),
            yy: y.dy(),
            x,
            y,
        }
    }
}

pub fn eq1_forcing(u: &SpectralField) -> Result<SpectralField> {
    let d = Derivatives::of(u);
    SpectralField::pointwise(&[&d.xy, &d.y, &d.yy, &d.x], 2, |v| v[0] * v[1] - v[2] * v[3])
}

pub fn eq2_forcing(u: &SpectralField, c: f64) -> Result<SpectralField> {
    let d = Derivatives::of(u);
    let quadratic = SpectralField::pointwise(&[&d.xx, &d.y, &d.xy, &d.x], 2, |v| v[0] * v[1] - v[2] * v[3])?;
    Ok(quadratic + d.yy.scale(c))
}

pub fn family_forcing(u: &SpectralField, c: f64) -> Result<SpectralField> {
    let d = Derivatives::of(u);
    SpectralField::pointwise(&[&d.xy, &d.y, &d.yy, &d.x, &d.xx], 2, |v| {
        c * (v[0] * v[1] - v[2] * v[3]) + v[4] * v[1] - v[0] * v[3]
    })
}

/// Forcings `(U, V)` with `u_tx = U`, `v_tx = V`.
pub fn theorem_forcing(u: &SpectralField, v: &SpectralField) -> Result<(SpectralField, SpectralField)> {
    let d = Derivatives::of(u);
    let e = Derivatives::of(v);
    let big_u = SpectralField::pointwise(&[&d.xy, &d.y, &d.yy, &d.x], 2, |w| w[0] * w[1] - w[2] * w[3])?;
    let big_v = SpectralField::pointwise(
        &[&d.x, &d.y, &d.xy, &d.yy, &e.x, &e.y, &e.xy, &e.yy],
        2,
        |w| {
            let (ux, uy, uxy, uyy) = (w[0], w[1], w[2], w[3]);
            let (vx, vy, vxy, vyy) = (w[4], w[5], w[6], w[7]);
            2.0 * (uyy * vx - uxy * vy) + uy * vxy - ux * vyy - 2.0 * (uyy * ux + 2.0 * uxy * uy)
        },
    )?;
    Ok((big_u, big_v))
}

/// Forcings `(RU, RV)` with `Λu_t = RU`, `Λv_t = RV`, `Λ = −∂x + c∂y`.
pub fn intermediate_forcing(
    u: &SpectralField,
    v: &SpectralField,
    c: f64,
    c1: f64,
    c2: f64,
    conv: &NonlocalConvention,
) -> Result<(SpectralField, SpectralField)> {
    let d = Derivatives::of(u);
    let (vx, vy) = (v.dx(), v.dy());
    let (vxx, vxy) = (vx.dx(), vx.dy());
    let uxxx = d.xx.dx();
    let li_xxx = uxxx.lambda_invert(c, conv)?;
    let li_xx = d.xx.lambda_invert(c, conv)?;
    let li_xxy = d.xy.dx().lambda_invert(c, conv)?;
    let ru = SpectralField::pointwise(&[&d.xy, &d.x, &d.xx, &d.y], 2, |w| c * (w[0] * w[1] - w[2] * w[3]))?
        + d.xy.scale(c2);
    let quadratic = SpectralField::pointwise(
        &[&d.x, &d.y, &d.xx, &d.xy, &vx, &vy, &vxx, &vxy, &li_xxx, &li_xx],
        2,
        |w| {
            let (ux, uy, uxx, uxy) = (w[0], w[1], w[2], w[3]);
            let (vx, vy, vxx, vxy) = (w[4], w[5], w[6], w[7]);
            let (l3, l2) = (w[8], w[9]);
            c * (2.0 * uxx * vy - 2.0 * uxy * vx + ux * vxy - uy * vxx)
                + 2.0 * (uxx - l3) * (ux - c * uy)
                + 4.0 * (ux - l2) * (uxx - c * uxy)
        },
    )?;
    let linear = uxxx.dx().scale(c1) + (&vxy + &(d.xy.scale(2.0) - li_xxy.scale(2.0))).scale(c2);
    Ok((ru, quadratic + linear))
}

pub fn rhs_eq1(u: &SpectralField, policy: XMeanPolicy) -> Result<(SpectralField, f64)> {
    invert_x(&eq1_forcing(u)?, policy)
}

pub fn rhs_eq2(u: &SpectralField, c: f64, policy: XMeanPolicy) -> Result<(SpectralField, f64)> {
    invert_x(&eq2_forcing(u, c)?, policy)
}

pub fn rhs_family(u: &SpectralField, c: f64, policy: XMeanPolicy) -> Result<(SpectralField, f64)> {
    invert_x(&family_forcing(u, c)?, policy)
}

/// `(u_t, v_t)` and the combined x-mean defect.
pub fn rhs_theorem_system(
    u: &SpectralField,
    v: &SpectralField,
    policy: XMeanPolicy,
) -> Result<((SpectralField, SpectralField), f64)> {
    let (fu, fv) = theorem_forcing(u, v)?;
    let (u_t, du) = invert_x(&fu, policy)?;
    let (v_t, dv) = invert_x(&fv, policy)?;
    Ok(((u_t, v_t), du.hypot(dv)))
}

/// `(u_t, v_t)` and the norm of the forcing on the kernel of `Λ`, which is
/// dropped when the convention projects and rejected otherwise.
pub fn rhs_intermediate(
    u: &SpectralField,
    v: &SpectralField,
    c: f64,
    c1: f64,
    c2: f64,
    conv: &NonlocalConvention,
) -> Result<((SpectralField, SpectralField), f64)> {
    let (ru, rv) = intermediate_forcing(u, v, c, c1, c2, conv)?;
    let tol = conv.resonance_tolerance;
    let resonant = |kx: i64, ky: i64| (c * ky as f64 - kx as f64).abs() <= tol;
    let dropped = ru.filter_modes(resonant).l2_norm().hypot(rv.filter_modes(resonant).l2_norm());
    Ok(((ru.lambda_invert(c, conv)?, rv.lambda_invert(c, conv)?), dropped))
}

/// Default initial data: seeded random fields of the configured band with
/// zero x-mean (so `∂x`-forms are consistent), normalised to `amplitude`.
/// For the intermediate system the kernel of `Λ` is removed as well.
pub fn initial_state(config: &SimConfig) -> Result<SimState> {
    config.validate()?;
    let grid = config.grid()?;
    if let Some(lists) = &config.initial_modes {
        if lists.len() != config.equation.components() {
            return Err(Error::InvalidConfig(format!(
                "initial_modes has {} components, {:?} needs {}",
                lists.len(),
                config.equation,
                config.equation.components()
            )));
        }
        let fields = lists
            .iter()
            .map(|modes| {
                let modes: Vec<_> = modes
                    .iter()
                    .map(|m| (m.kx, m.ky, num_complex::Complex64::new(m.re, m.im)))
                    .collect();
                SpectralField::from_modes(grid, &modes)
            })
            .collect();
        return Ok(SimState { t: 0.0, fields });
    }
    let c = config.c;
    let tol = config.convention.resonance_tolerance;
    let intermediate = config.equation == Equation::Intermediate;
    let keep = |kx: i64, ky: i64| kx != 0 && !(intermediate && (c * ky as f64 - kx as f64).abs() <= tol);
    let fields = (0..config.equation.components() as u64)
        .map(|stream| {
            let raw = SpectralField::random_stream(grid, config.seed, stream, config.band(), 1.0).filter_modes(keep);
            let norm = raw.l2_norm();
            if norm == 0.0 {
                raw
            } else {
                raw.scale(config.amplitude / norm)
            }
        })
        .collect();
    Ok(SimState { t: 0.0, fields })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimState {
    pub t: f64,
    /// `[u]` or `[u, v]`.
    pub fields: Vec<SpectralField>,
}

impl SimState {
    pub fn new(t: f64, fields: Vec<SpectralField>) -> Self {
        Self { t, fields }
    }

    pub fn u(&self) -> &SpectralField {
        &self.fields[0]
    }

    pub fn v(&self) -> Option<&SpectralField> {
        self.fields.get(1)
    }
}

/// One classical RK4 step of `y' = rhs(t, y)`. Returns the new state and the
/// largest inversion defect seen across the four stages.
pub fn rk4_step(
    y: &[SpectralField],
    t: f64,
    dt: f64,
    mut rhs: impl FnMut(f64, &[SpectralField]) -> Result<Rhs>,
) -> Result<(Vec<SpectralField>, f64)> {
    let shifted = |k: &[SpectralField], s: f64| -> Vec<SpectralField> {
        y.iter().zip(k).map(|(yi, ki)| yi + &ki.scale(s)).collect()
    };
    let k1 = rhs(t, y)?;
    let k2 = rhs(t + 0.5 * dt, &shifted(&k1.fields, 0.5 * dt))?;
    let k3 = rhs(t + 0.5 * dt, &shifted(&k2.fields, 0.5 * dt))?;
    let k4 = rhs(t + dt, &shifted(&k3.fields, dt))?;
    let next = (0..y.len())
        .map(|i| {
            let incr = &(&k1.fields[i] + &k2.fields[i].scale(2.0)) + &(&k3.fields[i].scale(2.0) + &k4.fields[i]);
            &y[i] + &incr.scale(dt / 6.0)
        })
        .collect();
    let defect = k1.defect.max(k2.defect).max(k3.defect).max(k4.defect);
    Ok((next, defect))
}

/// Advances `state` by one step of `config.dt`.
pub fn step_rk4(state: &SimState, config: &SimConfig) -> Result<(SimState, f64)> {
    let (fields, defect) = rk4_step(&state.fields, state.t, config.dt, |_, y| config.rhs(y))?;
    if fields.iter().any(|f| !f.is_finite()) {
        return Err(Error::BlowUp { last_good_t: state.t });
    }
    Ok((SimState::new(state.t + config.dt, fields), defect))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub t: f64,
    pub h0: f64,
    pub h1: f64,
    pub h2: Option<f64>,
    pub xmean_defect: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConservationLog {
    pub rows: Vec<LogRow>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Quantity {
    H0,
    H1,
    H2,
}

impl ConservationLog {
    fn push(&mut self, row: LogRow) {
        debug_assert!(self.rows.last().is_none_or(|r| r.t < row.t));
        self.rows.push(row);
    }

    fn column(&self, q: Quantity) -> Vec<f64> {
        self.rows
            .iter()
            .filter_map(|r| match q {
                Quantity::H0 => Some(r.h0),
                Quantity::H1 => Some(r.h1),
                Quantity::H2 => r.h2,
            })
            .collect()
    }

    /// `max_t |H(t) − H(0)| / max(|H(0)|, 1e−12)`.
    pub fn relative_drift(&self, q: Quantity) -> f64 {
        let col = self.column(q);
        let Some(&h0) = col.first() else { return 0.0 };
        let scale = h0.abs().max(1e-12);
        col.iter().map(|h| (h - h0).abs() / scale).fold(0.0, f64::max)
    }

    pub fn max_xmean_defect(&self) -> f64 {
        self.rows.iter().map(|r| r.xmean_defect).fold(0.0, f64::max)
    }

    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "t,H0,H1,H2,xmean_defect")?;
        for r in &self.rows {
            let h2 = r.h2.map(|v| format!("{v:?}")).unwrap_or_default();
            writeln!(w, "{:?},{:?},{:?},{},{:?}", r.t, r.h0, r.h1, h2, r.xmean_defect)?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }
}

/// First integrals of each equation.
///
/// Single equations: `H₀ = ∫u`, and `H₁ = ∫u_x u_y` (eq1), `∫u_x²` (eq2),
/// `∫u_x(u_x + c u_y)` (family). Coupled systems are read as points of the
/// hierarchy: the theorem system through `f = (u_x)ᵀ`, `a = (v_x)ᵀ` in the
/// limit hierarchy (the system is written with x and y exchanged relative to
/// it), the intermediate system through `f = Λu`, `a = Λv`.
pub struct Monitor {
    equation: Equation,
    c: f64,
    c1: f64,
    c2: f64,
    h0: Functional,
    h1: Option<Functional>,
    hierarchy: Option<Hierarchy>,
}

impl Monitor {
    pub fn new(config: &SimConfig) -> Result<Self> {
        let (h1, hierarchy) = match config.equation {
            Equation::TheoremSystem => (
                Some(h1_limit_closed_form()?),
                Some(Hierarchy::new(ConstantStructure::Limit)),
            ),
            Equation::Intermediate => (
                Some(h1_closed_form(config.c)?),
                Some(Hierarchy {
                    convention: config.convention,
                    ..Hierarchy::frozen(config.c)
                }),
            ),
            _ => (None, None),
        };
        Ok(Self {
            equation: config.equation,
            c: config.c,
            c1: config.c1,
            c2: config.c2,
            h0: casimir_h0(),
            h1,
            hierarchy: if config.monitor_h2 { hierarchy } else { None },
        })
    }

    /// Hierarchy point of a coupled state.
    pub fn dual_point(&self, fields: &[SpectralField]) -> Option<DualPoint> {
        match self.equation {
            Equation::TheoremSystem => Some(DualPoint {
                g: fields[0].dx().transpose(),
                b: fields[1].dx().transpose(),
                c1: 0.0,
                c2: 0.0,
            }),
            Equation::Intermediate => Some(DualPoint {
                g: fields[0].lambda_apply(self.c),
                b: fields[1].lambda_apply(self.c),
                c1: self.c1,
                c2: self.c2,
            }),
            _ => None,
        }
    }

    pub fn measure(&self, t: f64, fields: &[SpectralField], xmean_defect: f64) -> Result<LogRow> {
        let (h0, h1, h2) = match self.dual_point(fields) {
            Some(m) => {
                let h1 = self.h1.as_ref().expect("coupled systems carry H1");
                let h2 = self.hierarchy.map(|h| h.value(2, &m)).transpose()?;
                (self.h0.value(&m)?, h1.value(&m)?, h2)
            }
            None => {
                let u = &fields[0];
                let (ux, uy) = (u.dx(), u.dy());
                let h1 = match self.equation {
                    Equation::Eq1 => ux.inner(&uy)?,
                    Equation::Eq2 => ux.inner(&ux)?,
                    _ => ux.inner(&ux)? + self.c * ux.inner(&uy)?,
                };
                (u.integral(), h1, None)
            }
        };
        Ok(LogRow {
            t,
            h0,
            h1,
            h2,
            xmean_defect,
        })
    }
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub state: SimState,
    pub log: ConservationLog,
    /// `(step, one snapshot per component)`.
    pub snapshots: Vec<(usize, Vec<Snapshot>)>,
}

fn snapshot(step: usize, state: &SimState) -> (usize, Vec<Snapshot>) {
    (step, state.fields.iter().map(|f| Snapshot::of(f, state.t)).collect())
}

/// Runs `config` from its default initial data.
pub fn run(config: &SimConfig) -> Result<RunOutput> {
    let state = initial_state(config)?;
    run_from(config, state)
}

/// Runs `config` from a given state.
pub fn run_from(config: &SimConfig, mut state: SimState) -> Result<RunOutput> {
    config.validate()?;
    let grid = config.grid()?;
    if state.fields.len() != config.equation.components() {
        return Err(Error::InvalidConfig(format!(
            "{:?} needs {} fields, got {}",
            config.equation,
            config.equation.components(),
            state.fields.len()
        )));
    }
    for f in &state.fields {
        grid.check(&f.grid())?;
    }
    let steps = config.steps()?;
    let monitor = Monitor::new(config)?;
    let initial_defect = config.rhs(&state.fields)?.defect;
    let mut log = ConservationLog::default();
    log.push(monitor.measure(state.t, &state.fields, initial_defect)?);
    let mut snapshots = vec![snapshot(0, &state)];
    let t0 = state.t;
    for n in 1..=steps {
        let (next, defect) = step_rk4(&state, config)?;
        state = SimState::new(t0 + n as f64 * config.dt, next.fields);
        if n % config.stride == 0 || n == steps {
            log.push(monitor.measure(state.t, &state.fields, defect)?);
        }
        let every = config.snapshot_stride;
        if (every > 0 && n % every == 0) || n == steps {
            snapshots.push(snapshot(n, &state));
        }
    }
    Ok(RunOutput { state, log, snapshots })
}

/// Runs independent configurations in parallel.
pub fn sweep(configs: &[SimConfig]) -> Vec<Result<RunOutput>> {
    configs.par_iter().map(run).collect()
}

type ScalarField = Box<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

/// A closed-form solution `u*(x, y, t)` per component with its time
/// derivative.
pub struct Manufactured {
    pub name: String,
    pub value: Vec<ScalarField>,
    pub time_derivative: Vec<ScalarField>,
}

impl Manufactured {
    pub fn sample(&self, grid: Grid, t: f64) -> Vec<SpectralField> {
        self.value.iter().map(|u| SpectralField::from_fn(grid, |x, y| u(x, y, t))).collect()
    }

    fn sample_rate(&self, grid: Grid, t: f64) -> Vec<SpectralField> {
        self.time_derivative
            .iter()
            .map(|u| SpectralField::from_fn(grid, |x, y| u(x, y, t)))
            .collect()
    }

    /// `u* = sin x sin y cos t`.
    pub fn separable() -> Self {
        Self {
            name: "sin(x)sin(y)cos(t)".into(),
            value: vec![Box::new(|x, y, t| x.sin() * y.sin() * t.cos())],
            time_derivative: vec![Box::new(|x, y, t| -x.sin() * y.sin() * t.sin())],
        }
    }

    /// `u* = exp(sin(x − t) + cos(y)/2)`, analytic but not band limited.
    pub fn analytic() -> Self {
        Self {
            name: "exp(sin(x-t)+cos(y)/2)".into(),
            value: vec![Box::new(|x, y, t| ((x - t).sin() + 0.5 * y.cos()).exp())],
            time_derivative: vec![Box::new(|x, y, t| {
                -(x - t).cos() * ((x - t).sin() + 0.5 * y.cos()).exp()
            })],
        }
    }

    /// A time-independent solution `u*(x, y)`.
    pub fn steady(u: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            name: "steady".into(),
            value: vec![Box::new(move |x, y, _| u(x, y))],
            time_derivative: vec![Box::new(|_, _, _| 0.0)],
        }
    }
}

/// Points per axis of the grid on which the manufactured forcing is formed.
/// The forcing is then truncated to the working grid, so it carries the
/// continuous operator rather than the discrete one and spatial errors show.
pub const REFERENCE_POINTS: usize = 128;

/// Integrates `u_t = rhs(u) + (u*_t − rhs(u*))` from `u*(0)` and returns the
/// max-norm error against `u*` at `t_final`.
pub fn manufactured_run(config: &SimConfig, solution: &Manufactured) -> Result<f64> {
    config.validate()?;
    if solution.value.len() != config.equation.components() {
        return Err(Error::InvalidConfig(format!(
            "manufactured solution has {} components, {:?} needs {}",
            solution.value.len(),
            config.equation,
            config.equation.components()
        )));
    }
    let grid = config.grid()?;
    let reference = Grid::new(
        REFERENCE_POINTS.max(2 * config.nx),
        REFERENCE_POINTS.max(2 * config.ny),
    )?;
    let fine = SimConfig {
        nx: reference.nx,
        ny: reference.ny,
        ..config.clone()
    };
    let steps = config.steps()?;
    let forced = |t: f64, y: &[SpectralField]| -> Result<Rhs> {
        let at_exact = fine.rhs(&solution.sample(reference, t))?;
        let at_y = config.rhs(y)?;
        let rate = solution.sample_rate(reference, t);
        let fields = at_y
            .fields
            .iter()
            .zip(&at_exact.fields)
            .zip(&rate)
            .map(|((a, b), r)| &(a - &b.resample(grid)) + &r.resample(grid))
            .collect();
        Ok(Rhs {
            fields,
            defect: at_y.defect,
        })
    };
    let mut y = solution.sample(grid, 0.0);
    let mut t = 0.0;
    for n in 1..=steps {
        let (next, _) = rk4_step(&y, t, config.dt, forced)?;
        if next.iter().any(|f| !f.is_finite()) {
            return Err(Error::BlowUp { last_good_t: t });
        }
        y = next;
        t = n as f64 * config.dt;
    }
    let exact = solution.sample(grid, t);
    Ok(y.iter()
        .zip(&exact)
        .map(|(a, b)| (a - b).max_abs())
        .fold(0.0, f64::max))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    /// `dt` for temporal studies, `N` for spatial ones.
    pub parameter: f64,
    pub error: f64,
    /// Previous error over this one.
    pub ratio: Option<f64>,
    /// `log(ratio) / log(refinement)`.
    pub order: Option<f64>,
}

fn table(params: &[f64], errors: Vec<Result<f64>>, coarse_over_fine: impl Fn(f64, f64) -> f64) -> Result<Vec<ConvergenceRow>> {
    let mut rows: Vec<ConvergenceRow> = Vec::with_capacity(params.len());
    for (&p, e) in params.iter().zip(errors) {
        let error = e?;
        let (ratio, order) = match rows.last() {
            Some(prev) => {
                let ratio = prev.error / error;
                (Some(ratio), Some(ratio.ln() / coarse_over_fine(prev.parameter, p).ln()))
            }
            None => (None, None),
        };
        rows.push(ConvergenceRow {
            parameter: p,
            error,
            ratio,
            order,
        });
    }
    Ok(rows)
}

/// Errors over a list of step sizes (runs in parallel).
pub fn temporal_convergence(base: &SimConfig, solution: &Manufactured, dts: &[f64]) -> Result<Vec<ConvergenceRow>> {
    let errors = dts
        .par_iter()
        .map(|&dt| manufactured_run(&SimConfig { dt, ..base.clone() }, solution))
        .collect();
    table(dts, errors, |prev, p| prev / p)
}

/// Errors over a list of square grid sizes (runs in parallel).
pub fn spatial_convergence(base: &SimConfig, solution: &Manufactured, ns: &[usize]) -> Result<Vec<ConvergenceRow>> {
    let errors = ns
        .par_iter()
        .map(|&n| {
            manufactured_run(
                &SimConfig {
                    nx: n,
                    ny: n,
                    ..base.clone()
                },
                solution,
            )
        })
        .collect();
    let params: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
    table(&params, errors, |prev, p| p / prev)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> Grid {
        Grid::square(n).unwrap()
    }

    fn rel(a: &SpectralField, b: &SpectralField) -> f64 {
        a.max_difference(b).unwrap() / (1.0 + a.max_abs().max(b.max_abs()))
    }

    #[test]
    fn x_independent_data_is_stationary() {
        let u = SpectralField::from_fn(grid(16), |_, y| y.sin() + 0.3 * (2.0 * y).cos());
        for rhs in [
            rhs_eq1(&u, XMeanPolicy::Error).unwrap(),
            rhs_family(&u, 2.5, XMeanPolicy::Error).unwrap(),
            rhs_eq2(&u, 0.0, XMeanPolicy::Error).unwrap(),
        ] {
            assert_eq!(rhs.0.max_abs(), 0.0);
            assert_eq!(rhs.1, 0.0);
        }
        let c = SpectralField::constant(grid(16), 3.0);
        assert_eq!(rhs_eq1(&c, XMeanPolicy::Error).unwrap().0.max_abs(), 0.0);
    }

    #[test]
    fn charge_term_alone_is_an_x_mean_defect() {
        let u = SpectralField::from_fn(grid(16), |_, y| y.cos());
        let (u_t, defect) = rhs_eq2(&u, 1.0, XMeanPolicy::ProjectAndLog).unwrap();
        assert_eq!(u_t.max_abs(), 0.0);
        // ‖cos y‖ on the torus
        assert!((defect - (2.0f64).sqrt() * std::f64::consts::PI).abs() < 1e-12);
        assert!(matches!(
            rhs_eq2(&u, 1.0, XMeanPolicy::Error),
            Err(Error::Solvability { axis: Axis::X, .. })
        ));
    }

    #[test]
    fn specialisations() {
        let g = grid(32);
        let u = SpectralField::random_stream(g, 1, 0, 5, 1.0);
        let p = XMeanPolicy::ProjectAndLog;
        let (fam, _) = rhs_family(&u, 0.0, p).unwrap();
        let (e2, _) = rhs_eq2(&u, 0.0, p).unwrap();
        assert!(fam.max_difference(&e2).unwrap() < 1e-14);

        let zero = SpectralField::zeros(g);
        let ((us, vs), _) = rhs_theorem_system(&u, &zero, p).unwrap();
        assert!(us.max_difference(&rhs_eq1(&u, p).unwrap().0).unwrap() < 1e-15);
        let d = Derivatives::of(&u);
        let expect = SpectralField::pointwise(&[&d.yy, &d.x, &d.xy, &d.y], 2, |w| {
            -2.0 * (w[0] * w[1] + 2.0 * w[2] * w[3])
        })
        .unwrap();
        assert!(vs.max_difference(&invert_x(&expect, p).unwrap().0).unwrap() < 1e-13);

        let ((a, b), _) = rhs_theorem_system(&zero, &u, p).unwrap();
        assert_eq!(a.max_abs() + b.max_abs(), 0.0);
        let conv = NonlocalConvention::mean_free();
        let ((a, b), _) = rhs_intermediate(&zero, &zero, 2f64.sqrt(), 0.3, 0.7, &conv).unwrap();
        assert_eq!(a.max_abs() + b.max_abs(), 0.0);
    }

    #[test]
    fn family_limit_tends_to_eq1() {
        let g = grid(32);
        for seed in 0..3 {
            let u = SpectralField::random_stream(g, seed, 0, 5, 1.0);
            let c = 1e3;
            let fam = family_forcing(&u, c).unwrap().scale(1.0 / c);
            let e1 = eq1_forcing(&u).unwrap();
            assert!(rel(&fam, &e1) < 2e-3);
        }
    }

    #[test]
    fn linear_ode_is_fourth_order() {
        let g = grid(8);
        let y0 = vec![SpectralField::from_fn(g, |x, y| (x + y).cos())];
        let lambda = -1.3;
        let err = |dt: f64| {
            let steps = (1.0 / dt).round() as usize;
            let mut y = y0.clone();
            for n in 0..steps {
                y = rk4_step(&y, n as f64 * dt, dt, |_, s| {
                    Ok(Rhs {
                        fields: vec![s[0].scale(lambda)],
                        defect: 0.0,
                    })
                })
                .unwrap()
                .0;
            }
            y[0].max_difference(&y0[0].scale(lambda.exp())).unwrap()
        };
        let e: Vec<f64> = [1e-2, 5e-3, 2.5e-3].iter().map(|&dt| err(dt)).collect();
        for w in e.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!((order - 4.0).abs() < 0.1, "order {order}");
        }
    }

    #[test]
    fn zero_data_stays_zero() {
        for eq in [Equation::Eq1, Equation::TheoremSystem, Equation::Intermediate] {
            let mut cfg = SimConfig::new(eq, 16);
            cfg.t_final = 0.01;
            cfg.c = 2f64.sqrt();
            let zero = vec![SpectralField::zeros(cfg.grid().unwrap()); eq.components()];
            let out = run_from(&cfg, SimState::new(0.0, zero)).unwrap();
            assert!(out.state.fields.iter().all(|f| f.max_abs() == 0.0));
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = SimConfig::new(Equation::Eq1, 16);
        assert!(cfg.validate().is_ok());
        cfg.dt = 0.0;
        assert!(cfg.validate().is_err());
        cfg.dt = 0.3;
        assert!(cfg.validate().is_err(), "t_final not a multiple of dt");
        cfg.dt = 2.0;
        assert!(cfg.validate().is_err());
        let mut cfg = SimConfig::new(Equation::Eq1, 15);
        assert!(cfg.validate().is_err());
        cfg.nx = 16;
        cfg.ny = 16;
        cfg.equation = Equation::Intermediate;
        cfg.c = 0.0;
        assert!(cfg.validate().is_err());
        let text = r#"{"equation":"theorem_system","nx":16,"ny":16,"dt":0.01,"t_final":0.1}"#;
        let parsed: SimConfig = serde_json::from_str(text).unwrap();
        assert_eq!(parsed.convention, NonlocalConvention::mean_free());
        assert!(serde_json::from_str::<SimConfig>(r#"{"equation":"eq1","nx":16,"ny":16,"dt":0.1,"t_final":1,"bogus":1}"#).is_err());
    }

    #[test]
    fn initial_data_is_normalised_and_x_mean_free() {
        let mut cfg = SimConfig::new(Equation::TheoremSystem, 32);
        cfg.band = Some(5);
        let s = initial_state(&cfg).unwrap();
        for f in &s.fields {
            assert!((f.l2_norm() - 1.0).abs() < 1e-12);
            assert_eq!(f.axis_mean(Axis::X).max_coeff(), 0.0);
            assert!(f.modes().all(|(kx, ky, z)| z.norm() == 0.0 || (kx.abs() <= 5 && ky.abs() <= 5)));
        }
        assert_eq!(initial_state(&cfg).unwrap(), s);
    }

    #[test]
    fn explicit_initial_modes() {
        let text = r#"{"equation":"eq1","nx":16,"ny":16,"dt":0.1,"t_final":0.5,
            "initial_modes":[[{"kx":0,"ky":1,"re":0.5},{"kx":0,"ky":2,"re":0.0,"im":0.25}]]}"#;
        let cfg: SimConfig = serde_json::from_str(text).unwrap();
        let s = initial_state(&cfg).unwrap();
        let expect = SpectralField::from_fn(cfg.grid().unwrap(), |_, y| y.cos() - 0.5 * (2.0 * y).sin());
        assert!(s.u().max_difference(&expect).unwrap() < 1e-15);
        let out = run(&cfg).unwrap();
        assert_eq!(out.state.u(), s.u());
        let bad = SimConfig {
            equation: Equation::TheoremSystem,
            ..cfg
        };
        assert!(initial_state(&bad).is_err());
    }

    #[test]
    fn blow_up_reports_last_good_time() {
        let mut cfg = SimConfig::new(Equation::Eq1, 16);
        cfg.dt = 0.5;
        cfg.t_final = 50.0;
        cfg.amplitude = 200.0;
        match run(&cfg) {
            Err(Error::BlowUp { last_good_t }) => assert!((0.0..50.0).contains(&last_good_t)),
            other => panic!("expected blow-up, got {:?}", other.map(|o| o.state.t)),
        }
    }

    #[test]
    fn log_csv_layout() {
        let mut cfg = SimConfig::new(Equation::Eq1, 16);
        cfg.dt = 0.01;
        cfg.t_final = 0.05;
        cfg.stride = 2;
        let out = run(&cfg).unwrap();
        let times: Vec<f64> = out.log.rows.iter().map(|r| r.t).collect();
        assert_eq!(times.len(), 4);
        assert!(times.windows(2).all(|w| w[0] < w[1]));
        let csv = out.log.to_csv_string();
        assert!(csv.starts_with("t,H0,H1,H2,xmean_defect\n0.0,"));
        assert_eq!(csv.lines().count(), 5);
        assert_eq!(out.snapshots.len(), 2);
    }
}
