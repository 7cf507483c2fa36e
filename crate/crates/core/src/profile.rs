//! The logarithmic near-blow-up profile and the radial integrals that bound
//! its norms.
//!
//! With `delta = sqrt(T - t)` and the unit shape
//! `w(rho) = rho^delta (-ln rho)^s phi(rho)`, the pre-projection field is
//! `v(x) = delta^{-1} w(|x| / delta) c` for the fixed unit direction
//! `c = (1, 1, 1) / sqrt(3)`, and the profile is its Leray projection.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::grid::{self, Grid3, VectorField};
use crate::norms::{self, BallSampler};
use crate::quad;

/// Radius where the cutoff starts to fall off.
pub const CUTOFF_INNER: f64 = 0.5;
/// Radius beyond which the cutoff vanishes.
pub const CUTOFF_OUTER: f64 = 0.75;
/// Default ratio of the box half width to the support radius.
pub const DEFAULT_PADDING: f64 = 2.0;
/// RMS log-residual above which a slope fit is flagged as under-resolved.
pub const FIT_RESIDUAL_LIMIT: f64 = 0.05;

const QUAD_ABS: f64 = 1e-13;
const QUAD_REL: f64 = 1e-13;

/// `35 t^4 - 84 t^5 + 70 t^6 - 20 t^7`: rises from 0 to 1 on `[0, 1]` with
/// three vanishing derivatives at both ends.
pub fn smoothstep7(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        let t4 = t * t * t * t;
        t4 * (35.0 + t * (-84.0 + t * (70.0 - 20.0 * t)))
    }
}

/// Radial cutoff: 1 on `[0, 1/2]`, 0 from `3/4` on.
pub fn cutoff(rho: f64) -> f64 {
    1.0 - smoothstep7((rho - CUTOFF_INNER) / (CUTOFF_OUTER - CUTOFF_INNER))
}

/// Unit direction carried by the pre-projection bump.
pub fn direction() -> [f64; 3] {
    let c = 1.0 / 3f64.sqrt();
    [c, c, c]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileParams {
    /// Log exponent, in `(0, 2/3)`.
    pub s: f64,
    /// Spatial scale `sqrt(T - t)`, in `(0, 1]`.
    pub delta: f64,
    /// Power of `rho` in the shape; equal to `delta` for the actual profile.
    pub exponent: f64,
}

impl ProfileParams {
    pub fn new(s: f64, delta: f64) -> Result<Self> {
        Self::with_exponent(s, delta, delta)
    }

    /// Decouples the power of `rho` from the scale, which makes the family
    /// exactly self-similar in `delta`.
    pub fn with_exponent(s: f64, delta: f64, exponent: f64) -> Result<Self> {
        check_s(s)?;
        check_delta(delta)?;
        if !(exponent > 0.0 && exponent.is_finite()) {
            return Err(Error::Param(format!(
                "exponent must be positive, got {exponent}"
            )));
        }
        Ok(Self { s, delta, exponent })
    }

    /// `T - t = delta^2`.
    pub fn time_to_blowup(&self) -> f64 {
        self.delta * self.delta
    }

    pub fn support_radius(&self) -> f64 {
        CUTOFF_OUTER * self.delta
    }

    /// Unit shape `rho^a (-ln rho)^s phi(rho)` with `a = exponent`.
    pub fn shape(&self, rho: f64) -> f64 {
        if rho <= 0.0 || rho >= CUTOFF_OUTER {
            return 0.0;
        }
        rho.powf(self.exponent) * (-rho.ln()).powf(self.s) * cutoff(rho)
    }
}

fn check_s(s: f64) -> Result<()> {
    if s > 0.0 && s < 2.0 / 3.0 {
        Ok(())
    } else {
        Err(Error::Param(format!("s must lie in (0, 2/3), got {s}")))
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta <= 1.0 {
        Ok(())
    } else {
        Err(Error::Param(format!(
            "delta must lie in (0, 1], got {delta}"
        )))
    }
}

/// Pre-projection field `delta^{-1} w(|x| / delta) c` with the default padding.
pub fn raw_profile(p: &ProfileParams, g: &Grid3) -> Result<VectorField> {
    raw_profile_padded(p, g, DEFAULT_PADDING)
}

/// As [`raw_profile`], requiring `L >= padding * support radius`.
pub fn raw_profile_padded(p: &ProfileParams, g: &Grid3, padding: f64) -> Result<VectorField> {
    if !(padding >= 1.0) {
        return Err(Error::Param(format!(
            "padding must be at least 1, got {padding}"
        )));
    }
    let needed = padding * p.support_radius();
    if g.half_width() < needed * (1.0 - 1e-12) {
        return Err(Error::Grid(format!(
            "support radius {:.4} with padding {padding} needs half width {needed:.4}, box has {}",
            p.support_radius(),
            g.half_width()
        )));
    }
    let c = direction();
    let inv = 1.0 / p.delta;
    VectorField::from_fn(*g, |x| {
        let rho = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt() * inv;
        let w = inv * p.shape(rho);
        [w * c[0], w * c[1], w * c[2]]
    })
}

/// The divergence-free profile: Leray projection of [`raw_profile`].
pub fn blowup_field(p: &ProfileParams, g: &Grid3) -> Result<VectorField> {
    Ok(grid::leray_project(&raw_profile(p, g)?))
}

pub fn blowup_field_padded(p: &ProfileParams, g: &Grid3, padding: f64) -> Result<VectorField> {
    Ok(grid::leray_project(&raw_profile_padded(p, g, padding)?))
}

/// Grid for the unit-scale profile: half width `padding * 3/4`.
pub fn unit_grid(n: usize, padding: f64) -> Result<Grid3> {
    Grid3::new(n, padding * CUTOFF_OUTER)
}

/// A quadrature value with its closed-form bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleValue {
    pub value: f64,
    pub error: f64,
    pub bound: Option<f64>,
}

impl OracleValue {
    /// True when there is no bound or the value lies strictly below it.
    pub fn within_bound(&self) -> bool {
        self.bound.map_or(true, |b| self.value < b)
    }
}

fn log_tail(rate: f64, power: f64) -> Result<quad::QuadResult> {
    let a = (4.0f64 / 3.0).ln();
    quad::integrate_to_infinity(
        |eta| (-rate * eta).exp() * eta.powf(power),
        a,
        QUAD_ABS,
        QUAD_REL,
    )
}

/// `delta^3 int_0^{3/4} r^{3 delta - 1} (-ln r)^{3s} dr`, bounded by
/// `3^{-3s-1} delta^{2-3s} Gamma(3s + 1)`.
pub fn oracle_i1(s: f64, delta: f64) -> Result<OracleValue> {
    check_s(s)?;
    check_delta(delta)?;
    let q = log_tail(3.0 * delta, 3.0 * s)?;
    let d3 = delta.powi(3);
    Ok(OracleValue {
        value: d3 * q.value,
        error: d3 * q.error,
        bound: Some(3f64.powf(-3.0 * s - 1.0) * delta.powf(2.0 - 3.0 * s) * gamma(3.0 * s + 1.0)),
    })
}

/// `int_0^{3/4} r^{3 delta - 1} (-ln r)^{3s - 3} dr`, bounded by
/// `(2 - 3s)^{-1} (ln 4 - ln 3)^{3s - 2}`.
pub fn oracle_i2(s: f64, delta: f64) -> Result<OracleValue> {
    check_s(s)?;
    check_delta(delta)?;
    let q = log_tail(3.0 * delta, 3.0 * s - 3.0)?;
    Ok(OracleValue {
        value: q.value,
        error: q.error,
        bound: Some((4.0f64 / 3.0).ln().powf(3.0 * s - 2.0) / (2.0 - 3.0 * s)),
    })
}

/// `int_0^{3/4} r^{3 delta + 2} (-ln r)^{3s} dr`; only its value is reported.
pub fn oracle_i3(s: f64, delta: f64) -> Result<OracleValue> {
    check_s(s)?;
    check_delta(delta)?;
    let q = log_tail(3.0 * delta + 3.0, 3.0 * s)?;
    Ok(OracleValue {
        value: q.value,
        error: q.error,
        bound: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RieszOrigin {
    /// `(4 pi / 9) delta^{-1} int_0^1 r^{delta - 1} (-ln r)^s phi(r) dr`.
    pub numeric: f64,
    pub error: f64,
    /// `(2 pi / 9) Gamma(1 + s) delta^{-(2 + s)}`.
    pub bound: f64,
}

impl RieszOrigin {
    pub fn holds(&self) -> bool {
        self.numeric >= self.bound
    }
}

/// Double Riesz transform of the bump at the origin and its lower bound.
///
/// The plateau `[0, 1/2]` is integrated after `eta = -ln r`; the taper is
/// integrated directly.
pub fn riesz_origin_lower_bound(s: f64, delta: f64) -> Result<RieszOrigin> {
    check_s(s)?;
    check_delta(delta)?;
    let plateau = quad::integrate_to_infinity(
        |eta| (-delta * eta).exp() * eta.powf(s),
        2f64.ln(),
        QUAD_ABS,
        QUAD_REL,
    )?;
    let taper = quad::integrate(
        |r: f64| r.powf(delta - 1.0) * (-r.ln()).powf(s) * cutoff(r),
        CUTOFF_INNER,
        CUTOFF_OUTER,
        QUAD_ABS,
        QUAD_REL,
    )?;
    let pre = 4.0 * PI / 9.0 / delta;
    Ok(RieszOrigin {
        numeric: pre * (plateau.value + taper.value),
        error: pre * (plateau.error + taper.error),
        bound: 2.0 * PI / 9.0 * gamma(1.0 + s) * delta.powf(-(2.0 + s)),
    })
}

/// Closed-form quantities of the projected profile in `R^3`.
///
/// For a radial `w`, the Leray projection of `w c` is
/// `c (w - m/3) - y (y . c) (w - m)` with `y = x / |x|` and `m(r)` the average
/// of `w` over `B_r`. Angular averaging gives the energy density
/// `a^2 - (2/3) a b + b^2 / 3` with `a = w - m/3`, `b = w - m`, and the
/// pointwise magnitude is maximal at `max(|a|, 2|m|/3)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadialOracle {
    /// `||u||_{L^2}^2` in physical units.
    pub l2_sq: f64,
    /// `||u||_{L^inf}` in physical units.
    pub linf: f64,
    /// Share of the unit-scale energy outside the support ball.
    pub tail_fraction: f64,
}

fn ball_moment(p: &ProfileParams, r: f64) -> Result<f64> {
    if r <= 0.0 {
        return Ok(0.0);
    }
    let upper = r.min(CUTOFF_OUTER);
    Ok(quad::integrate(
        |rho: f64| p.shape(rho) * rho * rho,
        0.0,
        upper,
        1e-15,
        1e-12,
    )?
    .value)
}

pub fn radial_oracle(p: &ProfileParams) -> Result<RadialOracle> {
    let unit = ProfileParams { delta: 1.0, ..*p };
    let mean = |r: f64| -> Result<f64> { Ok(3.0 * ball_moment(&unit, r)? / (r * r * r)) };
    let q_total = ball_moment(&unit, CUTOFF_OUTER)?;
    let r_out = CUTOFF_OUTER;

    // energy inside the support; inner moments are re-integrated per node
    let inner_err = std::cell::Cell::new(None);
    let inside = quad::integrate(
        |r: f64| {
            let w = unit.shape(r);
            let m = match mean(r) {
                Ok(m) => m,
                Err(e) => {
                    inner_err.set(Some(e.to_string()));
                    0.0
                }
            };
            let a = w - m / 3.0;
            let b = w - m;
            4.0 * PI * r * r * (a * a - 2.0 / 3.0 * a * b + b * b / 3.0)
        },
        0.0,
        r_out,
        1e-12,
        1e-10,
    )?;
    if let Some(e) = inner_err.take() {
        return Err(Error::Quadrature(e));
    }
    let tail = 8.0 * PI * q_total * q_total / (3.0 * r_out.powi(3));
    let unit_energy = inside.value + tail;

    let samples = 4000;
    let sup = (1..=samples)
        .into_par_iter()
        .map(|i| {
            let r = r_out * i as f64 / samples as f64;
            let w = unit.shape(r);
            let m = 3.0 * ball_moment(&unit, r)? / (r * r * r);
            Ok((w - m / 3.0).abs().max(2.0 * m.abs() / 3.0))
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);

    Ok(RadialOracle {
        l2_sq: p.delta * unit_energy,
        linf: sup / p.delta,
        tail_fraction: tail / unit_energy,
    })
}

/// Least-squares line through `(x, y)` pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    /// RMS of the fit residuals.
    pub residual: f64,
}

pub fn fit_line(x: &[f64], y: &[f64]) -> Result<SlopeFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Param(
            "slope fit needs at least two matching points".into(),
        ));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::Param("slope fit needs distinct abscissae".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    Ok(SlopeFit {
        slope,
        intercept,
        residual: (ss / n).sqrt(),
    })
}

/// Slope of `ln y` against `ln x`.
pub fn fit_loglog(x: &[f64], y: &[f64]) -> Result<SlopeFit> {
    if x.iter().chain(y).any(|&v| !(v > 0.0)) {
        return Err(Error::Param("log-log fit needs positive values".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    fit_line(&lx, &ly)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanOptions {
    pub n: usize,
    pub padding: f64,
    pub bmo_stride: usize,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self {
            n: 128,
            padding: DEFAULT_PADDING,
            bmo_stride: 2,
        }
    }
}

/// Norms of the profile at one `delta`, in physical units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRecord {
    pub delta: f64,
    pub time_to_blowup: f64,
    pub l2_sq: f64,
    pub h1_sq: f64,
    pub linf: f64,
    pub bmo: f64,
    /// `sqrt(T - t) * ||u||_BMO`.
    pub bmo_scaled: f64,
    pub morrey: f64,
    /// `sqrt(T - t) * ||grad u||_{L^3}`.
    pub grad_l3_scaled: f64,
    pub max_divergence: f64,
    pub oracle_l2_sq: f64,
    pub oracle_linf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedSlope {
    pub fit: SlopeFit,
    pub under_resolved: bool,
}

impl FittedSlope {
    fn new(fit: SlopeFit) -> Self {
        Self {
            under_resolved: fit.residual > FIT_RESIDUAL_LIMIT,
            fit,
        }
    }
}

/// Per-delta norms and their log-log slopes against `T - t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub s: f64,
    pub options: ScanOptions,
    pub records: Vec<ScalingRecord>,
    pub l2_slope: FittedSlope,
    pub h1_slope: FittedSlope,
    pub linf_slope: FittedSlope,
    pub bmo_slope: FittedSlope,
    /// Slope of the closed-form sup norm.
    pub oracle_linf_slope: SlopeFit,
    pub bmo_scaled_sup: f64,
    /// `max / min` of `sqrt(T - t) ||u||_BMO` over the deltas.
    pub bmo_scaled_ratio: f64,
    /// Norms move in the directions of their power laws.
    pub monotone: bool,
}

/// Evaluates the profile at each `delta` on a grid of unit scale and converts
/// to physical norms by the change of variables `x = delta * y`.
pub fn scan_scaling(s: f64, deltas: &[f64], opts: &ScanOptions) -> Result<ScalingReport> {
    if deltas.len() < 2 {
        return Err(Error::Param("scan needs at least two deltas".into()));
    }
    let g = unit_grid(opts.n, opts.padding)?;
    let sampler = BallSampler::for_grid(&g, opts.bmo_stride);
    let mut records = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        let phys = ProfileParams::new(s, delta)?;
        let unit = ProfileParams::with_exponent(s, 1.0, delta)?;
        let u = blowup_field_padded(&unit, &g, opts.padding)?;
        let dv = g.cell_volume();
        let l2u = norms::lp_norm(&u, 2.0)?.powi(2);
        let gsq = grid::gradient_sq(&u);
        let h1u = grid::ordered_sum(gsq.values()) * dv;
        let l3: Vec<f64> = gsq.values().iter().map(|v| v.powf(1.5)).collect();
        let grad_l3 = (grid::ordered_sum(&l3) * dv).cbrt();
        let linf_u = norms::lp_norm(&u, f64::INFINITY)?;
        let bmo_u = norms::bmo_norm(&u, &sampler)?.value;
        let morrey = norms::morrey_21_norm(&u, &sampler)?.value;
        let div = grid::max_divergence(&u) / (delta * delta);
        let oracle = radial_oracle(&phys)?;
        records.push(ScalingRecord {
            delta,
            time_to_blowup: delta * delta,
            l2_sq: delta * l2u,
            h1_sq: h1u / delta,
            linf: linf_u / delta,
            bmo: bmo_u / delta,
            bmo_scaled: bmo_u,
            morrey,
            grad_l3_scaled: grad_l3,
            max_divergence: div,
            oracle_l2_sq: oracle.l2_sq,
            oracle_linf: oracle.linf,
        });
        log::info!("profile scan: delta = {delta} done");
    }
    summarize(s, *opts, records)
}

fn summarize(s: f64, options: ScanOptions, records: Vec<ScalingRecord>) -> Result<ScalingReport> {
    let t: Vec<f64> = records.iter().map(|r| r.time_to_blowup).collect();
    let col = |f: fn(&ScalingRecord) -> f64| records.iter().map(f).collect::<Vec<f64>>();
    let l2 = fit_loglog(&t, &col(|r| r.l2_sq))?;
    let h1 = fit_loglog(&t, &col(|r| r.h1_sq))?;
    let linf = fit_loglog(&t, &col(|r| r.linf))?;
    let bmo = fit_loglog(&t, &col(|r| r.bmo))?;
    let oracle_linf = fit_loglog(&t, &col(|r| r.oracle_linf))?;
    let scaled = col(|r| r.bmo_scaled);
    let sup = scaled.iter().cloned().fold(0.0, f64::max);
    let min = scaled.iter().cloned().fold(f64::INFINITY, f64::min);

    // sort by delta so monotonicity reads in one direction
    let mut order: Vec<&ScalingRecord> = records.iter().collect();
    order.sort_by(|a, b| a.delta.total_cmp(&b.delta));
    let monotone = order
        .windows(2)
        .all(|w| w[1].l2_sq > w[0].l2_sq && w[1].h1_sq < w[0].h1_sq && w[1].linf < w[0].linf);

    Ok(ScalingReport {
        s,
        options,
        l2_slope: FittedSlope::new(l2),
        h1_slope: FittedSlope::new(h1),
        linf_slope: FittedSlope::new(linf),
        bmo_slope: FittedSlope::new(bmo),
        oracle_linf_slope: oracle_linf,
        bmo_scaled_sup: sup,
        bmo_scaled_ratio: if min > 0.0 { sup / min } else { f64::INFINITY },
        monotone,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn cutoff_shape() {
        assert_eq!(cutoff(0.2), 1.0);
        assert_eq!(cutoff(0.5), 1.0);
        assert_eq!(cutoff(0.75), 0.0);
        assert_eq!(cutoff(0.9), 0.0);
        assert!((cutoff(0.625) - 0.5).abs() < 1e-15);
        // monotone on the taper
        let mut last = 1.0;
        for i in 0..=100 {
            let v = cutoff(0.5 + 0.25 * i as f64 / 100.0);
            assert!(v <= last + 1e-15);
            last = v;
        }
    }

    #[test]
    fn params_validation() {
        assert!(ProfileParams::new(0.0, 0.5).is_err());
        assert!(ProfileParams::new(2.0 / 3.0, 0.5).is_err());
        assert!(ProfileParams::new(0.3, 0.0).is_err());
        assert!(ProfileParams::new(0.3, 1.5).is_err());
        assert!(ProfileParams::new(0.3, 1.0).is_ok());
    }

    #[test]
    fn shape_on_plateau() {
        let p = ProfileParams::new(1.0 / 3.0, 1.0).unwrap();
        let r = (-1.0f64).exp();
        assert_relative_eq!(p.shape(r), r, max_relative = 1e-15);
        assert_eq!(p.shape(0.75), 0.0);
        assert_eq!(p.shape(0.8), 0.0);
    }

    #[test]
    fn raw_profile_support_and_rejection() {
        let p = ProfileParams::new(0.3, 0.5).unwrap();
        let g = Grid3::new(16, 0.75).unwrap();
        let v = raw_profile(&p, &g).unwrap();
        for idx in 0..g.len() {
            let x = g.point(idx);
            let rho = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt() / p.delta;
            if rho >= 0.75 {
                assert_eq!(v.at(idx), [0.0; 3]);
            }
        }
        let small = Grid3::new(16, 0.5).unwrap();
        assert!(raw_profile(&p, &small).is_err());
    }

    #[test]
    fn blowup_is_divergence_free_and_contracted() {
        let p = ProfileParams::new(1.0 / 3.0, 1.0).unwrap();
        let g = unit_grid(32, DEFAULT_PADDING).unwrap();
        let v = raw_profile(&p, &g).unwrap();
        let u = blowup_field(&p, &g).unwrap();
        assert!(grid::max_divergence(&u) < 1e-8);
        assert!(norms::lp_norm(&u, 2.0).unwrap() <= norms::lp_norm(&v, 2.0).unwrap());
    }

    #[test]
    fn self_similar_family_matches_unit_field() {
        let g1 = Grid3::new(16, 1.5).unwrap();
        let base = ProfileParams::with_exponent(0.3, 1.0, 0.25).unwrap();
        let u1 = blowup_field(&base, &g1).unwrap();
        for delta in [0.5, 0.25] {
            let p = ProfileParams::with_exponent(0.3, delta, 0.25).unwrap();
            let gd = g1.scaled(delta).unwrap();
            let ud = blowup_field(&p, &gd).unwrap().scale(delta);
            let diff = (0..3)
                .flat_map(|a| {
                    let (x, y) = (ud.component(a).values(), u1.component(a).values());
                    x.iter()
                        .zip(y)
                        .map(|(p, q)| (p - q).abs())
                        .collect::<Vec<_>>()
                })
                .fold(0.0, f64::max);
            assert!(diff < 1e-8 * u1.max_abs(), "{delta}: {diff}");
        }
    }

    #[test]
    fn oracle_i1_closed_form() {
        // int_0^{3/4} r^2 (-ln r) dr = [-(r^3/3) ln r + r^3/9] at 3/4
        let r: f64 = 0.75;
        let exact = -(r.powi(3) / 3.0) * r.ln() + r.powi(3) / 9.0;
        let o = oracle_i1(1.0 / 3.0, 1.0).unwrap();
        assert!((o.value - exact).abs() < 1e-12);
        assert!((o.value - 0.087330).abs() < 1e-6);
        assert!((o.bound.unwrap() - 1.0 / 9.0).abs() < 1e-14);
        assert!(o.within_bound());
    }

    #[test]
    fn oracle_i2_bound_value() {
        let o = oracle_i2(1.0 / 3.0, 1.0).unwrap();
        assert!((o.bound.unwrap() - 1.0 / (4.0f64 / 3.0).ln()).abs() < 1e-12);
        assert!((o.bound.unwrap() - 3.4761).abs() < 1e-4);
        assert!(o.within_bound());
        // with s = 1/3 the integrand is r^2 / (-ln r)^2 ... against a direct quadrature
        let direct = quad::integrate(
            |r: f64| r.powi(2) / (-r.ln()).powi(2),
            0.0,
            0.75,
            1e-13,
            0.0,
        )
        .unwrap();
        assert!((o.value - direct.value).abs() < 1e-10);
    }

    #[test]
    fn oracle_i3_matches_direct_quadrature() {
        let o = oracle_i3(0.4, 0.5).unwrap();
        let direct = quad::integrate(
            |r: f64| r.powf(3.5) * (-r.ln()).powf(1.2),
            0.0,
            0.75,
            1e-14,
            0.0,
        )
        .unwrap();
        assert!((o.value - direct.value).abs() < 1e-11);
        assert!(o.bound.is_none() && o.within_bound());
    }

    #[test]
    fn riesz_bound_values() {
        let r = riesz_origin_lower_bound(1.0 / 3.0, 1.0).unwrap();
        assert!((r.bound - 2.0 * PI / 9.0 * 0.892_979_511_569_249).abs() < 1e-9);
        assert!((r.bound - 0.623418).abs() < 1e-6);
        assert!(r.holds());
        let half = riesz_origin_lower_bound(1.0 / 3.0, 0.5).unwrap();
        assert_relative_eq!(
            half.bound / r.bound,
            2f64.powf(2.0 + 1.0 / 3.0),
            max_relative = 1e-12
        );
    }

    #[test]
    fn riesz_numeric_against_direct_integral() {
        let (s, delta) = (0.4, 0.5);
        let r = riesz_origin_lower_bound(s, delta).unwrap();
        // direct integral on [0, 1) after splitting, with r = e^{-eta} throughout
        let direct = quad::integrate_to_infinity(
            |eta: f64| (-delta * eta).exp() * eta.powf(s) * cutoff((-eta).exp()),
            0.0,
            1e-13,
            0.0,
        )
        .unwrap();
        assert!((r.numeric - 4.0 * PI / 9.0 / delta * direct.value).abs() < 1e-9);
    }

    #[test]
    fn oracles_hold_on_sweep() {
        for i in 0..6 {
            let s = 0.1 + 0.1 * i as f64;
            for delta in [1.0, 0.5, 0.25] {
                assert!(oracle_i1(s, delta).unwrap().within_bound());
                assert!(oracle_i2(s, delta).unwrap().within_bound());
                assert!(riesz_origin_lower_bound(s, delta).unwrap().holds());
            }
        }
    }

    #[test]
    fn radial_oracle_matches_grid() {
        let p = ProfileParams::new(1.0 / 3.0, 1.0).unwrap();
        let o = radial_oracle(&p).unwrap();
        let g = unit_grid(64, 4.0).unwrap();
        let u = blowup_field_padded(&p, &g, 4.0).unwrap();
        let l2 = norms::lp_norm(&u, 2.0).unwrap().powi(2);
        assert!((l2 - o.l2_sq).abs() < 0.03 * o.l2_sq, "{l2} vs {}", o.l2_sq);
        assert!(o.tail_fraction > 0.0 && o.tail_fraction < 0.5);
    }

    #[test]
    fn line_fits() {
        let x = [1.0, 2.0, 4.0, 8.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-0.5)).collect();
        let f = fit_loglog(&x, &y).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-12 && f.residual < 1e-12);
        assert!(fit_loglog(&[1.0, 1.0], &[1.0, 2.0]).is_err());
        assert!(fit_loglog(&[1.0, 2.0], &[0.0, 2.0]).is_err());
    }
}
