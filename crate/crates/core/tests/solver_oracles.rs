use std::f64::consts::{PI, SQRT_2};

use loopvir::algebra::DualPoint;
use loopvir::poisson::{ConstantStructure, Hierarchy};
use loopvir::solver::{
    eq1_forcing, intermediate_forcing, manufactured_run, rhs_eq1, rhs_eq2, rhs_intermediate, rhs_theorem_system,
    run, spatial_convergence, temporal_convergence, theorem_forcing, Equation, Manufactured, Quantity, SimConfig,
    XMeanPolicy,
};
use loopvir::spectral::{Axis, Grid, NonlocalConvention, SpectralField};

const P: XMeanPolicy = XMeanPolicy::ProjectAndLog;

/// Periodic samples on an `n × n` grid with 8th-order central differences.
struct Fd {
    n: usize,
    h: f64,
}

const D1: [f64; 4] = [4.0 / 5.0, -1.0 / 5.0, 4.0 / 105.0, -1.0 / 280.0];
const D2: [f64; 5] = [-205.0 / 72.0, 8.0 / 5.0, -1.0 / 5.0, 8.0 / 315.0, -1.0 / 560.0];

impl Fd {
    fn new(n: usize) -> Self {
        Self { n, h: 2.0 * PI / n as f64 }
    }

    fn sample(&self, u: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let mut out = vec![0.0; self.n * self.n];
        for iy in 0..self.n {
            for ix in 0..self.n {
                out[iy * self.n + ix] = u(ix as f64 * self.h, iy as f64 * self.h);
            }
        }
        out
    }

    fn at(&self, v: &[f64], ix: isize, iy: isize) -> f64 {
        let n = self.n as isize;
        v[(iy.rem_euclid(n) * n + ix.rem_euclid(n)) as usize]
    }

    /// `order`-th derivative (1 or 2) along `axis`.
    fn d(&self, v: &[f64], axis: Axis, order: u32) -> Vec<f64> {
        let n = self.n as isize;
        let mut out = vec![0.0; v.len()];
        for iy in 0..n {
            for ix in 0..n {
                let shift = |k: isize| match axis {
                    Axis::X => self.at(v, ix + k, iy),
                    Axis::Y => self.at(v, ix, iy + k),
                };
                let s = if order == 1 {
                    (1..=4).map(|k| D1[k - 1] * (shift(k as isize) - shift(-(k as isize)))).sum::<f64>() / self.h
                } else {
                    (D2[0] * shift(0) + (1..=4).map(|k| D2[k] * (shift(k as isize) + shift(-(k as isize)))).sum::<f64>())
                        / (self.h * self.h)
                };
                out[(iy * n + ix) as usize] = s;
            }
        }
        out
    }

    fn dxy(&self, v: &[f64]) -> Vec<f64> {
        self.d(&self.d(v, Axis::X, 1), Axis::Y, 1)
    }

    /// Removes the mean of every constant-y row (trapezoid rule, exact for
    /// trigonometric polynomials).
    fn without_x_mean(&self, v: &[f64]) -> Vec<f64> {
        v.chunks(self.n)
            .flat_map(|row| {
                let m = row.iter().sum::<f64>() / self.n as f64;
                row.iter().map(move |x| x - m)
            })
            .collect()
    }
}

fn relative_max(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = a.iter().chain(b).map(|x| x.abs()).fold(0.0, f64::max);
    diff / (1.0 + scale)
}

#[test]
fn eq1_matches_finite_differences() {
    let fd = Fd::new(256);
    let u = fd.sample(|x, y| x.sin() * y.cos());
    let (ux, uy) = (fd.d(&u, Axis::X, 1), fd.d(&u, Axis::Y, 1));
    let (uxy, uyy) = (fd.dxy(&u), fd.d(&u, Axis::Y, 2));
    let forcing: Vec<f64> = (0..u.len()).map(|i| uxy[i] * uy[i] - uyy[i] * ux[i]).collect();
    let expect = fd.without_x_mean(&forcing);

    let grid = Grid::square(256).unwrap();
    let field = SpectralField::from_fn(grid, |x, y| x.sin() * y.cos());
    let (u_t, defect) = rhs_eq1(&field, P).unwrap();
    assert!(relative_max(&u_t.dx().to_grid(), &expect) < 1e-6);
    // the forcing is sin x cos x, whose x-mean vanishes
    let full = eq1_forcing(&field).unwrap();
    assert_eq!(defect, full.axis_mean(Axis::X).l2_norm());
    assert!(defect < 1e-12);
}

#[test]
fn intermediate_matches_finite_differences_on_a_single_mode() {
    let c = SQRT_2;
    let fd = Fd::new(256);
    let theta = |x: f64, y: f64| x + 2.0 * y;
    let u = fd.sample(|x, y| theta(x, y).sin());
    let (ux, uy) = (fd.d(&u, Axis::X, 1), fd.d(&u, Axis::Y, 1));
    let (uxx, uxy) = (fd.d(&u, Axis::X, 2), fd.dxy(&u));
    // Λ = −∂x + c∂y acts on the phase with symbol s = 2c − 1
    let s = 2.0 * c - 1.0;
    let li_xx = fd.sample(|x, y| theta(x, y).cos() / s);
    let li_xxx = fd.sample(|x, y| -theta(x, y).sin() / s);
    let ru: Vec<f64> = (0..u.len()).map(|i| c * (uxy[i] * ux[i] - uxx[i] * uy[i])).collect();
    let rv: Vec<f64> = (0..u.len())
        .map(|i| {
            2.0 * (uxx[i] - li_xxx[i]) * (ux[i] - c * uy[i]) + 4.0 * (ux[i] - li_xx[i]) * (uxx[i] - c * uxy[i])
        })
        .collect();

    let grid = Grid::square(256).unwrap();
    let field = SpectralField::from_fn(grid, |x, y| theta(x, y).sin());
    let zero = SpectralField::zeros(grid);
    let conv = NonlocalConvention::mean_free();
    let ((u_t, v_t), _) = rhs_intermediate(&field, &zero, c, 0.0, 0.0, &conv).unwrap();
    let (fu, fv) = intermediate_forcing(&field, &zero, c, 0.0, 0.0, &conv).unwrap();
    // the quadratic terms of a single mode have no resonant part here
    assert!(u_t.lambda_apply(c).max_difference(&fu).unwrap() < 1e-12);
    assert!(v_t.lambda_apply(c).max_difference(&fv).unwrap() < 1e-10);
    assert!(relative_max(&fu.to_grid(), &ru) < 1e-6);
    assert!(relative_max(&fv.to_grid(), &rv) < 1e-6);
}

#[test]
fn eq2_matches_its_nonlocal_form() {
    let grid = Grid::square(32).unwrap();
    let conv = NonlocalConvention::mean_free();
    for seed in 0..5 {
        let u = SpectralField::random_stream(grid, seed, 0, 5, 1.0).without_axis_mean(Axis::X);
        let c = 0.7;
        let f = u.dx();
        let inv = |g: &SpectralField| g.antiderive(Axis::X, &conv.with_projection(true)).unwrap();
        let nonlocal = SpectralField::pointwise(&[&f.dx(), &inv(&f.dy()), &f.dy(), &f], 2, |w| {
            w[0] * w[1] - w[2] * w[3]
        })
        .unwrap()
            + inv(&f.dy().dy()).scale(c);
        let (u_t, _) = rhs_eq2(&u, c, P).unwrap();
        let f_t = u_t.dx();
        let expect = nonlocal.without_axis_mean(Axis::X);
        let rel = f_t.max_difference(&expect).unwrap() / (1.0 + expect.max_abs());
        assert!(rel < 1e-8, "seed {seed}: {rel}");
    }
}

fn mean_free_pair(grid: Grid, seed: u64, band: i64) -> (SpectralField, SpectralField) {
    let keep = |kx: i64, _: i64| kx != 0;
    (
        SpectralField::random_stream(grid, seed, 0, band, 1.0).filter_modes(keep),
        SpectralField::random_stream(grid, seed, 1, band, 1.0).filter_modes(keep),
    )
}

#[test]
fn theorem_system_is_the_first_limit_flow() {
    let grid = Grid::square(32).unwrap();
    let h = Hierarchy::new(ConstantStructure::Limit);
    for seed in 0..5 {
        let (u, v) = mean_free_pair(grid, seed, 5);
        let m = DualPoint {
            g: u.dx().transpose(),
            b: v.dx().transpose(),
            c1: 0.0,
            c2: 0.0,
        };
        let x1 = h.vector_field(1, &m).unwrap();
        // (u_tx, v_tx) before inversion, read in the exchanged frame
        let (fu, fv) = theorem_forcing(&u, &v).unwrap();
        let (f_t, a_t) = (fu.transpose(), fv.transpose());
        let scale = 1.0 + x1.norm();
        let defect = (f_t.max_difference(&x1.f_t).unwrap()).max(a_t.max_difference(&x1.a_t).unwrap()) / scale;
        assert!(defect < 1e-6, "seed {seed}: {defect}");

        // the solver keeps everything but the x-independent part, whose
        // norm is the logged defect
        let ((u_t, v_t), defect) = rhs_theorem_system(&u, &v, P).unwrap();
        assert!(u_t.dx().max_difference(&fu.without_axis_mean(Axis::X)).unwrap() < 1e-12);
        assert!(v_t.dx().max_difference(&fv.without_axis_mean(Axis::X)).unwrap() < 1e-12);
        let dropped = fu.axis_mean(Axis::X).l2_norm().hypot(fv.axis_mean(Axis::X).l2_norm());
        assert!((defect - dropped).abs() < 1e-12 * (1.0 + dropped));
    }
}

#[test]
fn intermediate_system_is_the_first_frozen_flow() {
    let grid = Grid::square(32).unwrap();
    let c = SQRT_2;
    let (c1, c2) = (0.4, -0.3);
    let conv = NonlocalConvention::mean_free();
    let h = Hierarchy::frozen(c);
    for seed in 0..5 {
        let u = SpectralField::random_stream(grid, seed, 0, 5, 1.0);
        let v = SpectralField::random_stream(grid, seed, 1, 5, 1.0);
        let (ru, rv) = intermediate_forcing(&u, &v, c, c1, c2, &conv).unwrap();
        let m = DualPoint {
            g: u.lambda_apply(c),
            b: v.lambda_apply(c),
            c1,
            c2,
        };
        let x1 = h.vector_field(1, &m).unwrap();
        let scale = 1.0 + x1.norm();
        let defect = ru.max_difference(&x1.f_t).unwrap().max(rv.max_difference(&x1.a_t).unwrap()) / scale;
        assert!(defect < 1e-10, "seed {seed}: {defect}");
    }
}

/// Unit-norm random field on modes with `ky ≠ 0`.
fn transverse_field(grid: Grid, seed: u64, stream: u64, band: i64) -> SpectralField {
    let f = SpectralField::random_stream(grid, seed, stream, band, 1.0).filter_modes(|_, ky| ky != 0);
    f.scale(1.0 / f.l2_norm())
}

#[test]
fn intermediate_tends_to_the_exchanged_theorem_system() {
    // the gap is O(|k|/c); at c = 10³ it stays below 2·10⁻³ up to band 4
    let grid = Grid::square(16).unwrap();
    let c = 1e3;
    let conv = NonlocalConvention::mean_free();
    for seed in 0..3 {
        let u = transverse_field(grid, seed, 0, 2);
        let v = transverse_field(grid, seed, 1, 2);
        let (ru, rv) = intermediate_forcing(&u, &v, c, 0.0, 0.0, &conv).unwrap();
        let (tu, tv) = theorem_forcing(&u.transpose(), &v.transpose()).unwrap();
        let (tu, tv) = (tu.transpose(), tv.transpose());
        for (a, b) in [(ru.scale(1.0 / c), tu), (rv.scale(1.0 / c), tv)] {
            let rel = a.max_difference(&b).unwrap() / (1.0 + a.max_abs().max(b.max_abs()));
            assert!(rel < 2e-3, "seed {seed}: {rel}");
        }
        // the gap shrinks like 1/c
        let (_, rv2) = intermediate_forcing(&u, &v, 10.0 * c, 0.0, 0.0, &conv).unwrap();
        let (_, tv) = theorem_forcing(&u.transpose(), &v.transpose()).unwrap();
        let tv = tv.transpose();
        let g1 = rv.scale(1.0 / c).max_difference(&tv).unwrap();
        let g2 = rv2.scale(0.1 / c).max_difference(&tv).unwrap();
        assert!(g1 / g2 > 8.0 && g1 / g2 < 12.0, "{g1} {g2}");
    }
}

#[test]
fn single_equation_integrals_are_conserved() {
    for (eq, c) in [(Equation::Eq1, 0.0), (Equation::Eq2, 0.0), (Equation::Family, 0.8)] {
        let mut cfg = SimConfig::new(eq, 32);
        cfg.c = c;
        cfg.dt = 1e-3;
        cfg.t_final = 0.2;
        cfg.seed = 3;
        let out = run(&cfg).unwrap();
        assert!(out.log.relative_drift(Quantity::H1) < 1e-8, "{eq:?}: {}", out.log.relative_drift(Quantity::H1));
        let h0: Vec<f64> = out.log.rows.iter().map(|r| r.h0).collect();
        assert!(h0.iter().all(|v| v.abs() < 1e-13));
    }
}

#[test]
fn intermediate_run_conserves_its_hamiltonians() {
    let mut cfg = SimConfig::new(Equation::Intermediate, 16);
    cfg.c = SQRT_2;
    cfg.c1 = 0.1;
    cfg.c2 = 0.2;
    cfg.dt = 1e-3;
    cfg.t_final = 0.05;
    cfg.stride = 25;
    cfg.band = Some(2);
    cfg.monitor_h2 = true;
    let out = run(&cfg).unwrap();
    assert!(out.log.relative_drift(Quantity::H1) < 1e-8, "{}", out.log.relative_drift(Quantity::H1));
    assert!(out.log.relative_drift(Quantity::H2) < 1e-6, "{}", out.log.relative_drift(Quantity::H2));
}

#[test]
fn runs_are_bit_reproducible() {
    let mut cfg = SimConfig::new(Equation::TheoremSystem, 16);
    cfg.t_final = 0.05;
    cfg.stride = 5;
    let a = run(&cfg).unwrap();
    let b = run(&cfg).unwrap();
    assert_eq!(a.log.to_csv_string(), b.log.to_csv_string());
    assert_eq!(a.state, b.state);
}

#[test]
fn steady_manufactured_solution_is_held() {
    let mut cfg = SimConfig::new(Equation::Eq1, 16);
    cfg.dt = 1e-2;
    cfg.t_final = 0.1;
    let steady = Manufactured::steady(|x, y| (x + y).sin() + 0.5 * (2.0 * x - y).cos());
    assert!(manufactured_run(&cfg, &steady).unwrap() < 1e-9);
}

#[test]
fn manufactured_convergence_orders() {
    let mut cfg = SimConfig::new(Equation::Eq1, 16);
    cfg.t_final = 1.0;
    let rows = temporal_convergence(&cfg, &Manufactured::separable(), &[0.1, 0.05, 0.025]).unwrap();
    for r in &rows[1..] {
        let order = r.order.unwrap();
        assert!((order - 4.0).abs() < 0.2, "{rows:?}");
    }
    let mut cfg = SimConfig::new(Equation::Eq1, 16);
    cfg.dt = 1e-3;
    cfg.t_final = 0.1;
    let rows = spatial_convergence(&cfg, &Manufactured::analytic(), &[16, 32]).unwrap();
    assert!(rows[1].ratio.unwrap() >= 1e3, "{rows:?}");
}
