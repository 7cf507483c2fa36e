//! Test flows: exact solutions, the profile ladder and a pseudo-spectral
//! stepper. Viscosity is fixed to one.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{self, Grid3, ScalarField, SpectralRep, VectorField};
use crate::profile::{self, ProfileParams};
use crate::spacetime::{AnalyticFlow, SampledFlow, SpaceTimeField};

/// ABC flow on `[-pi, pi)^3`: `curl u0 = u0`, so `u = e^{-t} u0` with
/// `P = -|u|^2 / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeltramiAbc {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Default for BeltramiAbc {
    fn default() -> Self {
        Self {
            a: 1.0,
            b: 0.8,
            c: 0.6,
        }
    }
}

impl BeltramiAbc {
    pub fn initial(&self, x: [f64; 3]) -> [f64; 3] {
        [
            self.a * x[2].sin() + self.c * x[1].cos(),
            self.b * x[0].sin() + self.a * x[2].cos(),
            self.c * x[1].sin() + self.b * x[0].cos(),
        ]
    }

    /// `||u0||^2` on the `(2 pi)^3` box.
    pub fn initial_energy(&self) -> f64 {
        let v = (2.0 * std::f64::consts::PI).powi(3);
        v * (self.a * self.a + self.b * self.b + self.c * self.c)
    }
}

impl AnalyticFlow for BeltramiAbc {
    fn velocity(&self, t: f64, x: [f64; 3]) -> [f64; 3] {
        let d = (-t).exp();
        self.initial(x).map(|v| d * v)
    }
    fn pressure(&self, t: f64, x: [f64; 3]) -> f64 {
        let u = self.velocity(t, x);
        -0.5 * (u[0] * u[0] + u[1] * u[1] + u[2] * u[2])
    }
    fn dudt(&self, t: f64, x: [f64; 3]) -> [f64; 3] {
        self.velocity(t, x).map(|v| -v)
    }
}

/// Two-dimensional Taylor–Green vortex on `[-pi, pi)^3`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TaylorGreen;

impl AnalyticFlow for TaylorGreen {
    fn velocity(&self, t: f64, x: [f64; 3]) -> [f64; 3] {
        let d = (-2.0 * t).exp();
        [
            d * x[0].sin() * x[1].cos(),
            -d * x[0].cos() * x[1].sin(),
            0.0,
        ]
    }
    fn pressure(&self, t: f64, x: [f64; 3]) -> f64 {
        0.25 * ((2.0 * x[0]).cos() + (2.0 * x[1]).cos()) * (-4.0 * t).exp()
    }
    fn dudt(&self, t: f64, x: [f64; 3]) -> [f64; 3] {
        self.velocity(t, x).map(|v| -2.0 * v)
    }
}

/// `u = (A sin(k x_2) e^{-k^2 t}, 0, 0)`, `P = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShearMode {
    pub amplitude: f64,
    pub wavenumber: f64,
}

impl AnalyticFlow for ShearMode {
    fn velocity(&self, t: f64, x: [f64; 3]) -> [f64; 3] {
        let k = self.wavenumber;
        [
            self.amplitude * (k * x[1]).sin() * (-k * k * t).exp(),
            0.0,
            0.0,
        ]
    }
    fn pressure(&self, _t: f64, _x: [f64; 3]) -> f64 {
        0.0
    }
    fn dudt(&self, t: f64, x: [f64; 3]) -> [f64; 3] {
        let k = self.wavenumber;
        self.velocity(t, x).map(|v| -k * k * v)
    }
}

/// Uniform velocity and pressure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constant {
    pub velocity: [f64; 3],
    pub pressure: f64,
}

impl AnalyticFlow for Constant {
    fn velocity(&self, _t: f64, _x: [f64; 3]) -> [f64; 3] {
        self.velocity
    }
    fn pressure(&self, _t: f64, _x: [f64; 3]) -> f64 {
        self.pressure
    }
    fn dudt(&self, _t: f64, _x: [f64; 3]) -> [f64; 3] {
        [0.0; 3]
    }
}

/// The natural rescaling `lambda u(lambda^2 t, lambda x)`, pressure
/// `lambda^2 P(lambda^2 t, lambda x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rescaled<F> {
    pub inner: F,
    pub lambda: f64,
}

impl<F: AnalyticFlow> AnalyticFlow for Rescaled<F> {
    fn velocity(&self, t: f64, x: [f64; 3]) -> [f64; 3] {
        let l = self.lambda;
        self.inner
            .velocity(l * l * t, x.map(|v| l * v))
            .map(|v| l * v)
    }
    fn pressure(&self, t: f64, x: [f64; 3]) -> f64 {
        let l = self.lambda;
        l * l * self.inner.pressure(l * l * t, x.map(|v| l * v))
    }
    fn dudt(&self, t: f64, x: [f64; 3]) -> [f64; 3] {
        let l = self.lambda;
        self.inner
            .dudt(l * l * t, x.map(|v| l * v))
            .map(|v| l * l * l * v)
    }
    fn is_solution(&self) -> bool {
        self.inner.is_solution()
    }
}

/// Velocity multiplied by `amplitude`, pressure by `amplitude^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scaled<F> {
    pub inner: F,
    pub amplitude: f64,
}

impl<F: AnalyticFlow> AnalyticFlow for Scaled<F> {
    fn velocity(&self, t: f64, x: [f64; 3]) -> [f64; 3] {
        self.inner.velocity(t, x).map(|v| self.amplitude * v)
    }
    fn pressure(&self, t: f64, x: [f64; 3]) -> f64 {
        self.amplitude * self.amplitude * self.inner.pressure(t, x)
    }
    fn dudt(&self, t: f64, x: [f64; 3]) -> [f64; 3] {
        self.inner.dudt(t, x).map(|v| self.amplitude * v)
    }
    fn is_solution(&self) -> bool {
        self.inner.is_solution() && self.amplitude == 1.0
    }
}

/// What to generate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FlowKind {
    BeltramiAbc(BeltramiAbc),
    TaylorGreen,
    ShearMode { amplitude: f64, mode: u32 },
    ProfileLadder { s: f64, deltas: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSpec {
    pub kind: FlowKind,
    pub t_end: f64,
    pub slices: usize,
}

impl FlowSpec {
    pub fn name(&self) -> &'static str {
        match self.kind {
            FlowKind::BeltramiAbc(_) => "beltrami",
            FlowKind::TaylorGreen => "taylor_green",
            FlowKind::ShearMode { .. } => "shear",
            FlowKind::ProfileLadder { .. } => "profile_ladder",
        }
    }
}

/// Builds the flow of `spec` on `g`. The exact flows are sampled at `slices`
/// evenly spaced times in `[0, t_end]`.
pub fn generate(spec: &FlowSpec, g: &Grid3) -> Result<SpaceTimeField> {
    if !(spec.t_end > 0.0 && spec.t_end.is_finite()) {
        return Err(Error::Param(format!(
            "end time must be positive, got {}",
            spec.t_end
        )));
    }
    let times = crate::spacetime::linspace(0.0, spec.t_end, spec.slices.max(2));
    match &spec.kind {
        FlowKind::BeltramiAbc(b) => beltrami_flow(b, g, times),
        FlowKind::TaylorGreen => {
            SpaceTimeField::from_source(&SampledFlow::new(TaylorGreen, *g, times)?)
        }
        FlowKind::ShearMode { amplitude, mode } => {
            let flow = ShearMode {
                amplitude: *amplitude,
                wavenumber: std::f64::consts::PI / g.half_width() * *mode as f64,
            };
            SpaceTimeField::from_source(&SampledFlow::new(flow, *g, times)?)
        }
        FlowKind::ProfileLadder { s, deltas } => profile_ladder(*s, deltas, g),
    }
}

/// Exact ABC flow sampled at `times`.
pub fn beltrami_flow(b: &BeltramiAbc, g: &Grid3, times: Vec<f64>) -> Result<SpaceTimeField> {
    SpaceTimeField::from_source(&SampledFlow::new(*b, *g, times)?)
}

/// Blow-up time of the profile ladder.
pub const LADDER_BLOWUP_TIME: f64 = 1.0;

/// Profile snapshots at `t_k = 1 - delta_k^2`, ordered in time; pressure from
/// the velocity. Not a solution.
pub fn profile_ladder(s: f64, deltas: &[f64], g: &Grid3) -> Result<SpaceTimeField> {
    let mut ds = deltas.to_vec();
    ds.sort_by(|a, b| b.total_cmp(a));
    ds.dedup();
    if ds.is_empty() {
        return Err(Error::Param("profile ladder needs deltas".into()));
    }
    let mut times = Vec::with_capacity(ds.len());
    let mut velocity = Vec::with_capacity(ds.len());
    let mut pressure = Vec::with_capacity(ds.len());
    for &d in &ds {
        let u = profile::blowup_field(&ProfileParams::new(s, d)?, g)?;
        times.push(LADDER_BLOWUP_TIME - d * d);
        pressure.push(grid::pressure_from_velocity(&u));
        velocity.push(u);
    }
    SpaceTimeField::new(times, velocity, pressure, false)
}

/// Max-norm residual of `du/dt - lap u + u . grad u + grad P` for an analytic
/// flow at time `t`, with spectral spatial derivatives.
pub fn pde_residual(flow: &impl AnalyticFlow, g: &Grid3, t: f64) -> Result<f64> {
    let u = VectorField::from_fn(*g, |x| flow.velocity(t, x))?;
    let ut = VectorField::from_fn(*g, |x| flow.dudt(t, x))?;
    let p = ScalarField::from_fn(*g, |x| flow.pressure(t, x))?;
    let gp = grid::gradient(&p);
    let du = grid::velocity_gradient(&u);
    let mut worst = 0.0f64;
    for a in 0..3 {
        let lap = grid::laplacian(u.component(a));
        let vals: Vec<f64> = (0..g.len())
            .into_par_iter()
            .map(|i| {
                let uu = u.at(i);
                let adv: f64 = (0..3).map(|b| uu[b] * du[a][b].values()[i]).sum();
                ut.component(a).values()[i] - lap.values()[i] + adv + gp.component(a).values()[i]
            })
            .collect();
        worst = vals.iter().fold(worst, |m, v| m.max(v.abs()));
    }
    Ok(worst)
}

/// Time integrator of the stepper.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scheme {
    /// Heun's method on the full right-hand side.
    Heun,
    /// Heun's method with the viscous term integrated exactly.
    IntegratingFactor,
}

/// Largest stable step for the explicit viscous term: `2 / |k|^2_max`.
pub fn diffusive_limit(g: &Grid3) -> f64 {
    let kmax = (0..g.n())
        .map(|i| g.derivative_wavenumber(i).abs())
        .fold(0.0, f64::max);
    2.0 / (3.0 * kmax * kmax)
}

/// Advective CFL limit `0.5 h / ||u||_inf`.
pub fn cfl_limit(u: &VectorField) -> f64 {
    let m = u.max_abs();
    if m == 0.0 {
        f64::INFINITY
    } else {
        0.5 * u.grid().spacing() / m
    }
}

fn dealias_mask(g: &Grid3) -> Vec<bool> {
    let cut = g.n() as i64 / 3;
    (0..g.len())
        .map(|idx| {
            let (i, j, k) = g.unravel(idx);
            g.signed_mode(i).abs() <= cut
                && g.signed_mode(j).abs() <= cut
                && g.signed_mode(k).abs() <= cut
        })
        .collect()
}

struct Stepper {
    grid: Grid3,
    mask: Vec<bool>,
    k2: Vec<f64>,
}

impl Stepper {
    fn new(g: &Grid3) -> Self {
        let k2 = (0..g.len())
            .map(|idx| {
                let (i, j, k) = g.unravel(idx);
                let kv = [i, j, k].map(|m| g.derivative_wavenumber(m));
                kv[0] * kv[0] + kv[1] * kv[1] + kv[2] * kv[2]
            })
            .collect();
        Self {
            grid: *g,
            mask: dealias_mask(g),
            k2,
        }
    }

    /// `-P[(u . grad) u]`, dealiased, in spectral form.
    fn nonlinear(&self, uh: &[SpectralRep; 3]) -> [SpectralRep; 3] {
        let g = self.grid;
        let u = [0, 1, 2].map(|a| grid::inverse_transform(&uh[a]));
        let conv: Vec<ScalarField> = (0..3)
            .map(|a| {
                let d = [0, 1, 2]
                    .map(|b| grid::inverse_transform(&grid::spectral_derivative(&uh[a], b)));
                let vals: Vec<f64> = (0..g.len())
                    .into_par_iter()
                    .map(|i| (0..3).map(|b| u[b].values()[i] * d[b].values()[i]).sum())
                    .collect();
                ScalarField::from_raw(g, vals)
            })
            .collect();
        let conv = VectorField::new(conv[0].clone(), conv[1].clone(), conv[2].clone())
            .expect("shared grid");
        let projected = grid::leray_project(&conv);
        [0, 1, 2].map(|a| {
            let s = grid::transform(projected.component(a));
            s.map_indexed(|idx, c| {
                if self.mask[idx] {
                    -c
                } else {
                    Complex64::new(0.0, 0.0)
                }
            })
        })
    }

    fn step(&self, u: &VectorField, dt: f64, scheme: Scheme) -> VectorField {
        let uh = [0, 1, 2].map(|a| grid::transform(u.component(a)));
        let n1 = self.nonlinear(&uh);
        let out = match scheme {
            Scheme::Heun => {
                let f1: [SpectralRep; 3] = [0, 1, 2].map(|a| self.add_viscous(&n1[a], &uh[a]));
                let stage: [SpectralRep; 3] = [0, 1, 2].map(|a| uh[a].axpy(dt, &f1[a]));
                let n2 = self.nonlinear(&stage);
                [0, 1, 2].map(|a| {
                    let f2 = self.add_viscous(&n2[a], &stage[a]);
                    uh[a].axpy(0.5 * dt, &f1[a]).axpy(0.5 * dt, &f2)
                })
            }
            Scheme::IntegratingFactor => {
                let e = |s: &SpectralRep| s.map_indexed(|idx, c| c * (-self.k2[idx] * dt).exp());
                let stage: [SpectralRep; 3] = [0, 1, 2].map(|a| e(&uh[a].axpy(dt, &n1[a])));
                let n2 = self.nonlinear(&stage);
                [0, 1, 2].map(|a| e(&uh[a].axpy(0.5 * dt, &n1[a])).axpy(0.5 * dt, &n2[a]))
            }
        };
        let [a, b, c] = out.map(|s| grid::inverse_transform(&s));
        VectorField::new(a, b, c).expect("shared grid")
    }

    fn add_viscous(&self, n: &SpectralRep, u: &SpectralRep) -> SpectralRep {
        let visc = u.map_indexed(|idx, c| c * -self.k2[idx]);
        n.axpy(1.0, &visc)
    }
}

/// One step of the pseudo-spectral scheme: 2/3-rule dealiasing, convective
/// form projected with Leray, Heun time integration. Rejects steps beyond the
/// advective CFL limit or the explicit viscous stability limit.
pub fn spectral_step(u: &VectorField, dt: f64) -> Result<VectorField> {
    spectral_step_with(u, dt, Scheme::Heun)
}

pub fn spectral_step_with(u: &VectorField, dt: f64, scheme: Scheme) -> Result<VectorField> {
    check_step(u, dt, scheme)?;
    Ok(Stepper::new(u.grid()).step(u, dt, scheme))
}

fn check_step(u: &VectorField, dt: f64, scheme: Scheme) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Param(format!(
            "time step must be positive, got {dt}"
        )));
    }
    let cfl = cfl_limit(u);
    if dt > cfl {
        return Err(Error::Cfl { dt, limit: cfl });
    }
    if scheme == Scheme::Heun {
        let lim = diffusive_limit(u.grid());
        if dt > lim {
            return Err(Error::Cfl { dt, limit: lim });
        }
    }
    Ok(())
}

/// Advances `steps` steps of size `dt`, returning every intermediate state
/// (including the initial one).
pub fn integrate(
    u0: &VectorField,
    dt: f64,
    steps: usize,
    scheme: Scheme,
) -> Result<Vec<VectorField>> {
    let stepper = Stepper::new(u0.grid());
    let mut out = Vec::with_capacity(steps + 1);
    out.push(u0.clone());
    for _ in 0..steps {
        let last = out.last().expect("non-empty");
        check_step(last, dt, scheme)?;
        let next = stepper.step(last, dt, scheme);
        out.push(next);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::random_smooth_vector;
    use crate::norms::lp_norm;
    use crate::spacetime::FlowSource;
    use std::f64::consts::PI;

    fn box_pi(n: usize) -> Grid3 {
        Grid3::new(n, PI).unwrap()
    }

    #[test]
    fn exact_flows_solve_the_equations() {
        let g = box_pi(16);
        let b = BeltramiAbc::default();
        for t in [0.0, 0.13, 0.5, 0.77, 1.4] {
            assert!(pde_residual(&b, &g, t).unwrap() < 1e-8);
        }
        assert!(pde_residual(&TaylorGreen, &g, 0.3).unwrap() < 1e-8);
        let shear = ShearMode {
            amplitude: 1.5,
            wavenumber: 2.0,
        };
        assert!(pde_residual(&shear, &g, 0.2).unwrap() < 1e-8);
        let r = Rescaled {
            inner: shear,
            lambda: 2.0,
        };
        assert!(pde_residual(&r, &Grid3::new(16, PI / 2.0).unwrap(), 0.05).unwrap() < 1e-7);
        // the advection of a Beltrami field is a gradient, so scaling keeps it exact
        let s = Scaled {
            inner: b,
            amplitude: 2.0,
        };
        assert!(!s.is_solution());
        assert!(pde_residual(&s, &g, 0.1).unwrap() < 1e-8);
    }

    #[test]
    fn beltrami_samples() {
        let g = box_pi(16);
        let b = BeltramiAbc::default();
        let st = beltrami_flow(&b, &g, vec![0.0, 0.5]).unwrap();
        let u0 = VectorField::from_fn(g, |x| b.initial(x)).unwrap();
        assert_eq!(st.velocity(0), &u0);
        let e = lp_norm(st.velocity(1), 2.0).unwrap().powi(2);
        assert!((e - (-1.0f64).exp() * b.initial_energy()).abs() < 1e-10 * e);
        assert!(grid::max_divergence(st.velocity(1)) < 1e-8);
    }

    #[test]
    fn ladder_is_ordered_and_solenoidal() {
        let g = Grid3::new(16, 1.5).unwrap();
        let st = profile_ladder(0.3, &[0.25, 1.0, 0.5], &g).unwrap();
        assert_eq!(st.times(), &[0.0, 0.75, 0.9375]);
        assert!(!st.is_solution());
        for k in 0..3 {
            assert!(grid::max_divergence(st.velocity(k)) < 1e-8);
        }
    }

    #[test]
    fn zero_field_is_fixed_point() {
        let g = box_pi(16);
        let z = VectorField::zeros(g);
        assert_eq!(spectral_step(&z, 0.01).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn step_limits_are_enforced() {
        let g = box_pi(16);
        let u = VectorField::from_fn(g, |x| BeltramiAbc::default().initial(x)).unwrap();
        assert!(matches!(spectral_step(&u, 1.0), Err(Error::Cfl { .. })));
        assert!(matches!(
            spectral_step(&u, 0.9 * cfl_limit(&u).min(1.0)),
            Err(Error::Cfl { .. })
        ));
        assert!(spectral_step_with(&u, 0.9 * cfl_limit(&u), Scheme::IntegratingFactor).is_ok());
        assert!(spectral_step(&u, -0.1).is_err());
    }

    fn beltrami_error(dt: f64, t_end: f64) -> f64 {
        let g = box_pi(16);
        let b = BeltramiAbc::default();
        let u0 = VectorField::from_fn(g, |x| b.initial(x)).unwrap();
        let steps = (t_end / dt).round() as usize;
        let u = integrate(&u0, dt, steps, Scheme::Heun)
            .unwrap()
            .pop()
            .unwrap();
        let exact = u0.scale((-t_end).exp());
        u.lincomb(1.0, &exact, -1.0).unwrap().max_abs()
    }

    #[test]
    fn heun_converges_at_second_order() {
        let e1 = beltrami_error(0.01, 0.4);
        let e2 = beltrami_error(0.005, 0.4);
        assert!(((e1 / e2) - 4.0).abs() < 0.5, "{e1} {e2}");
    }

    #[test]
    fn shear_mode_decay() {
        let g = box_pi(16);
        let shear = ShearMode {
            amplitude: 1.0,
            wavenumber: 1.0,
        };
        let u0 = VectorField::from_fn(g, |x| shear.velocity(0.0, x)).unwrap();
        let err = |dt: f64| {
            let steps = (0.5 / dt).round() as usize;
            let u = integrate(&u0, dt, steps, Scheme::Heun)
                .unwrap()
                .pop()
                .unwrap();
            let exact = VectorField::from_fn(g, |x| shear.velocity(0.5, x)).unwrap();
            u.lincomb(1.0, &exact, -1.0).unwrap().max_abs()
        };
        let ratio = err(0.01) / err(0.005);
        assert!((ratio - 4.0).abs() < 0.5, "{ratio}");
    }

    #[test]
    fn integrating_factor_is_exact_on_beltrami() {
        let g = box_pi(16);
        let b = BeltramiAbc::default();
        let u0 = VectorField::from_fn(g, |x| b.initial(x)).unwrap();
        let u = integrate(&u0, 0.05, 4, Scheme::IntegratingFactor)
            .unwrap()
            .pop()
            .unwrap();
        let exact = u0.scale((-0.2f64).exp());
        assert!(u.lincomb(1.0, &exact, -1.0).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn energy_does_not_grow() {
        let g = box_pi(16);
        let u0 = grid::leray_project(&random_smooth_vector(g, 17, 10, 3)).scale(0.3);
        let dt = 0.5 * cfl_limit(&u0).min(diffusive_limit(&g));
        let states = integrate(&u0, dt, 100, Scheme::Heun).unwrap();
        let energies: Vec<f64> = states.iter().map(|u| lp_norm(u, 2.0).unwrap()).collect();
        assert!(energies.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
        assert!(states.iter().all(|u| grid::max_divergence(u) < 1e-8));
    }

    #[test]
    fn generate_dispatches() {
        let g = box_pi(8);
        let spec = FlowSpec {
            kind: FlowKind::ShearMode {
                amplitude: 1.0,
                mode: 1,
            },
            t_end: 1.0,
            slices: 4,
        };
        let st = generate(&spec, &g).unwrap();
        assert_eq!(st.times().len(), 4);
        assert_eq!(spec.name(), "shear");
        assert!(generate(&FlowSpec { t_end: 0.0, ..spec }, &g).is_err());
    }
}
