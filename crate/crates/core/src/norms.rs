//! Norm estimators: L^p, weak Lorentz in time, BMO, Morrey and
//! Littlewood–Paley blocks.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{self, ordered_sum, Grid3, ScalarField, VectorField};

/// Read access to the channels of a scalar or vector field.
pub trait FieldData: Sync {
    fn grid(&self) -> &Grid3;
    fn channels(&self) -> Vec<&[f64]>;
}

impl FieldData for ScalarField {
    fn grid(&self) -> &Grid3 {
        ScalarField::grid(self)
    }
    fn channels(&self) -> Vec<&[f64]> {
        vec![self.values()]
    }
}

impl FieldData for VectorField {
    fn grid(&self) -> &Grid3 {
        VectorField::grid(self)
    }
    fn channels(&self) -> Vec<&[f64]> {
        self.components().iter().map(|c| c.values()).collect()
    }
}

fn magnitudes(f: &impl FieldData) -> Vec<f64> {
    let ch = f.channels();
    if ch.len() == 1 {
        return ch[0].iter().map(|v| v.abs()).collect();
    }
    (0..f.grid().len())
        .into_par_iter()
        .map(|i| ch.iter().map(|c| c[i] * c[i]).sum::<f64>().sqrt())
        .collect()
}

/// Riemann-sum `L^p` norm with cell volume `h^3`; `p = inf` gives the max.
pub fn lp_norm(f: &impl FieldData, p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::Param(format!("p must be in [1, inf], got {p}")));
    }
    let mags = magnitudes(f);
    if p.is_infinite() {
        return Ok(mags.iter().fold(0.0, |m, &v| m.max(v)));
    }
    let powered: Vec<f64> = if p == 2.0 {
        mags.iter().map(|v| v * v).collect()
    } else {
        mags.iter().map(|v| v.powf(p)).collect()
    };
    Ok((ordered_sum(&powered) * f.grid().cell_volume()).powf(1.0 / p))
}

/// A nonnegative quantity sampled at strictly increasing times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl TimeSeries {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::Param(format!(
                "{} times but {} values",
                times.len(),
                values.len()
            )));
        }
        if times.is_empty() {
            return Err(Error::Param("empty time series".into()));
        }
        if times.iter().any(|t| !t.is_finite()) || times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Param(
                "times must be finite and strictly increasing".into(),
            ));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        if values.iter().any(|&v| v < 0.0) {
            return Err(Error::Param(
                "time series values must be nonnegative".into(),
            ));
        }
        Ok(Self { times, values })
    }

    /// Samples `f` at the given times.
    pub fn from_fn(times: Vec<f64>, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = times.iter().map(|&t| f(t)).collect();
        Self::new(times, values)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Step intervals: value `i` holds on `[t_i, t_{i+1})`.
    fn steps(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.times
            .windows(2)
            .zip(&self.values)
            .map(|(w, &v)| (v, w[1] - w[0]))
    }

    /// Piecewise-linear value at `t` (clamped to the sampled range).
    pub fn interpolate(&self, t: f64) -> f64 {
        let ts = &self.times;
        if t <= ts[0] {
            return self.values[0];
        }
        if t >= ts[ts.len() - 1] {
            return self.values[ts.len() - 1];
        }
        let k = ts.partition_point(|&s| s <= t);
        let (t0, t1) = (ts[k - 1], ts[k]);
        let w = (t - t0) / (t1 - t0);
        self.values[k - 1] * (1.0 - w) + self.values[k] * w
    }

    /// Restriction to `[a, b]`, with linearly interpolated endpoints.
    pub fn window(&self, a: f64, b: f64) -> Result<TimeSeries> {
        let mut times = vec![a];
        let mut values = vec![self.interpolate(a)];
        for (&t, &v) in self.times.iter().zip(&self.values) {
            if t > a && t < b {
                times.push(t);
                values.push(v);
            }
        }
        if b > a {
            times.push(b);
            values.push(self.interpolate(b));
        }
        TimeSeries::new(times, values)
    }

    /// Trapezoid integral of `g(value)` over the sampled range.
    pub fn trapezoid(&self, g: impl Fn(f64) -> f64) -> f64 {
        self.times
            .windows(2)
            .zip(self.values.windows(2))
            .map(|(t, v)| 0.5 * (t[1] - t[0]) * (g(v[0]) + g(v[1])))
            .sum()
    }
}

/// Times in `[t0, t_end)` refined geometrically toward `t_end`: the gaps
/// `t_end - t` run through `(t_end - t0) * 2^{-j / per_octave}`.
pub fn dyadic_times(t0: f64, t_end: f64, octaves: usize, per_octave: usize) -> Vec<f64> {
    let span = t_end - t0;
    (0..=octaves * per_octave)
        .map(|j| t_end - span * (-(j as f64) / per_octave as f64).exp2())
        .collect()
}

/// Weak `L^{r,inf}` norm of the right-continuous step function of `ts`.
///
/// The sup over levels is evaluated at the sampled values, where it is attained
/// for step functions: `max_k f_k * |{f >= f_k}|^{1/r}`.
pub fn lorentz_weak_norm(ts: &TimeSeries, r: f64) -> Result<f64> {
    if !(r >= 1.0 && r.is_finite()) {
        return Err(Error::Param(format!("r must be in [1, inf), got {r}")));
    }
    if ts.len() < 2 {
        return Err(Error::Param("weak norm needs at least two samples".into()));
    }
    let mut steps: Vec<(f64, f64)> = ts.steps().collect();
    steps.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut best = 0.0f64;
    let mut measure = 0.0;
    let mut i = 0;
    while i < steps.len() {
        let level = steps[i].0;
        while i < steps.len() && steps[i].0 == level {
            measure += steps[i].1;
            i += 1;
        }
        best = best.max(level * measure.powf(1.0 / r));
    }
    Ok(best)
}

/// Strong `L^r` norm of the same step function.
pub fn lorentz_strong_norm(ts: &TimeSeries, r: f64) -> Result<f64> {
    if !(r >= 1.0 && r.is_finite()) {
        return Err(Error::Param(format!("r must be in [1, inf), got {r}")));
    }
    Ok(ts
        .steps()
        .map(|(v, dt)| v.powf(r) * dt)
        .sum::<f64>()
        .powf(1.0 / r))
}

/// Weak-norm estimates of `f` on `[t0, t_end)` under successive refinement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementStudy {
    pub octaves: Vec<usize>,
    pub estimates: Vec<f64>,
    pub diverging: bool,
}

/// Samples `f` with growing numbers of dyadic octaves toward `t_end`. The
/// estimator is flagged as diverging when it grows by more than 5% at each of
/// the last three refinements.
pub fn weak_norm_refinement(
    f: impl Fn(f64) -> f64,
    t0: f64,
    t_end: f64,
    r: f64,
    octaves: &[usize],
    per_octave: usize,
) -> Result<RefinementStudy> {
    let mut estimates = Vec::with_capacity(octaves.len());
    for &oct in octaves {
        let ts = TimeSeries::from_fn(dyadic_times(t0, t_end, oct, per_octave), &f)?;
        estimates.push(lorentz_weak_norm(&ts, r)?);
    }
    let tail = estimates.len().saturating_sub(4);
    let diverging =
        estimates.len() >= 4 && estimates[tail..].windows(2).all(|w| w[1] > 1.05 * w[0]);
    Ok(RefinementStudy {
        octaves: octaves.to_vec(),
        estimates,
        diverging,
    })
}

/// `2 * 3^{3/4}`, the constant of the layer-cake estimate.
pub fn layer_cake_constant() -> f64 {
    2.0 * 3f64.powf(0.75)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerCake {
    pub t: f64,
    pub r: f64,
    /// Weak `L^2` norm of the series over the window.
    pub m: f64,
    /// `r^{-1/2} * int_{t - r^2}^{t} f^{3/2}` (trapezoid).
    pub lhs: f64,
    /// `2 * 3^{3/4} * M^{3/2}`.
    pub rhs: f64,
}

impl LayerCake {
    pub fn holds(&self) -> bool {
        self.lhs <= self.rhs
    }

    pub fn ratio(&self) -> f64 {
        if self.rhs > 0.0 {
            self.lhs / self.rhs
        } else {
            0.0
        }
    }
}

/// Checks `r^{-1/2} int_{t-r^2}^t f^{3/2} <= 2 3^{3/4} M^{3/2}` on one window.
///
/// `m` defaults to the weak `L^2` norm of the series restricted to the window.
/// The samples must cover the window up to `1e-9 r^2` at either end.
pub fn layer_cake_bound_check(
    ts: &TimeSeries,
    t: f64,
    r: f64,
    m: Option<f64>,
) -> Result<LayerCake> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::Param(format!(
            "window radius must be positive, got {r}"
        )));
    }
    let a = t - r * r;
    let slack = 1e-9 * r * r;
    let (first, last) = (ts.times()[0], ts.times()[ts.len() - 1]);
    if first > a + slack || last < t - slack {
        return Err(Error::Region(format!(
            "samples on [{first}, {last}] do not cover the window [{a}, {t}]"
        )));
    }
    let w = ts.window(a, t.min(last))?;
    let m = match m {
        Some(m) => m,
        None => lorentz_weak_norm(&w, 2.0)?,
    };
    let lhs = w.trapezoid(|v| v.powf(1.5)) / r.sqrt();
    Ok(LayerCake {
        t,
        r,
        m,
        lhs,
        rhs: layer_cake_constant() * m.powf(1.5),
    })
}

/// Where the ball centers of a [`BallSampler`] come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Centers {
    /// Grid points on a sublattice through the cell nearest the origin; the
    /// stride grows with the radius as `max(base, r / 2h)`.
    Lattice { stride: usize },
    /// Explicit points, each snapped to the nearest grid point.
    Points(Vec<[f64; 3]>),
}

/// Balls used to approximate a sup over all balls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallSampler {
    pub centers: Centers,
    pub r_min: f64,
    pub r_max: f64,
    pub per_octave: usize,
}

/// Minimum number of cells a ball must contain to be evaluated.
pub const MIN_BALL_CELLS: usize = 8;

impl BallSampler {
    /// Lattice centers and radii from `2h` to `L/2`.
    pub fn for_grid(grid: &Grid3, stride: usize) -> Self {
        Self {
            centers: Centers::Lattice { stride },
            r_min: 2.0 * grid.spacing(),
            r_max: 0.5 * grid.half_width(),
            per_octave: 4,
        }
    }

    /// Radii `r_max * 2^{-j / per_octave}` down to `r_min`, increasing.
    pub fn radii(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut j = 0;
        loop {
            let r = self.r_max * (-(j as f64) / self.per_octave.max(1) as f64).exp2();
            if r < self.r_min * (1.0 - 1e-12) {
                break;
            }
            out.push(r);
            j += 1;
        }
        out.reverse();
        out
    }

    fn validate(&self) -> Result<()> {
        if !(self.r_min > 0.0 && self.r_max >= self.r_min && self.r_max.is_finite()) {
            return Err(Error::Param(format!(
                "invalid radius range [{}, {}]",
                self.r_min, self.r_max
            )));
        }
        if self.per_octave == 0 {
            return Err(Error::Param("per_octave must be positive".into()));
        }
        if let Centers::Lattice { stride: 0 } = self.centers {
            return Err(Error::Param("stride must be positive".into()));
        }
        Ok(())
    }
}

impl fmt::Display for BallSampler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.centers {
            Centers::Lattice { stride } => write!(f, "stride={stride}")?,
            Centers::Points(p) => {
                let pts: Vec<String> = p
                    .iter()
                    .map(|x| format!("{} {} {}", x[0], x[1], x[2]))
                    .collect();
                write!(f, "points={}", pts.join(" / "))?
            }
        }
        write!(
            f,
            ",rmin={},rmax={},per_octave={}",
            self.r_min, self.r_max, self.per_octave
        )
    }
}

impl FromStr for BallSampler {
    type Err = Error;

    /// `stride=2,rmin=0.05,rmax=0.5,per_octave=4`; `points=x y z / x y z`
    /// replaces the lattice.
    fn from_str(s: &str) -> Result<Self> {
        let mut out = BallSampler {
            centers: Centers::Lattice { stride: 2 },
            r_min: f64::NAN,
            r_max: f64::NAN,
            per_octave: 4,
        };
        let bad = |k: &str, v: &str| Error::Param(format!("bad sampler value {k}={v}"));
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::Param(format!("sampler entry '{part}' is not key=value")))?;
            match k.trim() {
                "stride" => {
                    out.centers = Centers::Lattice {
                        stride: v.parse().map_err(|_| bad(k, v))?,
                    }
                }
                "rmin" => out.r_min = v.parse().map_err(|_| bad(k, v))?,
                "rmax" => out.r_max = v.parse().map_err(|_| bad(k, v))?,
                "per_octave" => out.per_octave = v.parse().map_err(|_| bad(k, v))?,
                "points" => {
                    let mut pts = Vec::new();
                    for p in v.split('/') {
                        let c: Vec<f64> = p
                            .split_whitespace()
                            .map(|x| x.parse().map_err(|_| bad(k, v)))
                            .collect::<Result<_>>()?;
                        if c.len() != 3 {
                            return Err(bad(k, v));
                        }
                        pts.push([c[0], c[1], c[2]]);
                    }
                    out.centers = Centers::Points(pts);
                }
                other => return Err(Error::Param(format!("unknown sampler key '{other}'"))),
            }
        }
        if out.r_min.is_nan() || out.r_max.is_nan() {
            return Err(Error::Param("sampler needs rmin and rmax".into()));
        }
        out.validate()?;
        Ok(out)
    }
}

/// Result of a sampled sup over balls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallEstimate {
    pub value: f64,
    pub center: [f64; 3],
    pub radius: f64,
    pub balls: usize,
    pub skipped_radii: Vec<f64>,
    pub sampler: String,
}

/// Integer offsets of cells whose centers lie within `r` of a grid point.
pub(crate) fn ball_offsets(grid: &Grid3, r: f64) -> Vec<[i64; 3]> {
    let h = grid.spacing();
    let m = (r / h).floor() as i64;
    let r2 = (r / h) * (r / h);
    let mut out = Vec::new();
    for k in -m..=m {
        for j in -m..=m {
            for i in -m..=m {
                if (i * i + j * j + k * k) as f64 <= r2 {
                    out.push([i, j, k]);
                }
            }
        }
    }
    out
}

fn centers_for(grid: &Grid3, sampler: &BallSampler, r: f64, reach: i64) -> Vec<[usize; 3]> {
    let n = grid.n() as i64;
    let inside = |c: i64| c - reach >= 0 && c + reach <= n - 1;
    match &sampler.centers {
        Centers::Lattice { stride } => {
            let stride = (*stride)
                .max((r / (2.0 * grid.spacing())).floor() as usize)
                .max(1) as i64;
            let start = (n / 2) % stride;
            let axis: Vec<i64> = (0..)
                .map(|m| start + m * stride)
                .take_while(|&c| c < n)
                .filter(|&c| inside(c))
                .collect();
            let mut out = Vec::with_capacity(axis.len().pow(3));
            for &k in &axis {
                for &j in &axis {
                    for &i in &axis {
                        out.push([i as usize, j as usize, k as usize]);
                    }
                }
            }
            out
        }
        Centers::Points(pts) => pts
            .iter()
            .map(|p| [0, 1, 2].map(|a| grid.nearest_index(p[a]) as i64))
            .filter(|c| c.iter().all(|&x| inside(x)))
            .map(|c| c.map(|x| x as usize))
            .collect(),
    }
}

/// Visits every sampled ball and keeps the largest `score`.
fn sup_over_balls<F>(grid: &Grid3, sampler: &BallSampler, score: F) -> Result<BallEstimate>
where
    F: Fn(&[usize], f64) -> f64 + Sync,
{
    sampler.validate()?;
    let mut best = BallEstimate {
        value: 0.0,
        center: [0.0; 3],
        radius: 0.0,
        balls: 0,
        skipped_radii: Vec::new(),
        sampler: sampler.to_string(),
    };
    let mut found = false;
    for r in sampler.radii() {
        let offsets = ball_offsets(grid, r);
        if offsets.len() < MIN_BALL_CELLS {
            log::warn!(
                "ball radius {r:.4e} covers {} cells; skipped",
                offsets.len()
            );
            best.skipped_radii.push(r);
            continue;
        }
        let reach = (r / grid.spacing()).floor() as i64;
        let centers = centers_for(grid, sampler, r, reach);
        let results: Vec<(f64, usize)> = centers
            .par_iter()
            .enumerate()
            .map_init(Vec::new, |cells, (ci, c)| {
                cells.clear();
                cells.extend(offsets.iter().map(|o| {
                    grid.index(
                        (c[0] as i64 + o[0]) as usize,
                        (c[1] as i64 + o[1]) as usize,
                        (c[2] as i64 + o[2]) as usize,
                    )
                }));
                (score(cells, r), ci)
            })
            .collect();
        best.balls += results.len();
        for (v, ci) in results {
            if !found || v > best.value {
                found = true;
                let c = centers[ci];
                best.value = v;
                best.center = [grid.coord(c[0]), grid.coord(c[1]), grid.coord(c[2])];
                best.radius = r;
            }
        }
    }
    if !found {
        return Err(Error::Region(format!(
            "no ball of the sampler ({sampler}) fits inside the box"
        )));
    }
    Ok(best)
}

/// Sampled BMO seminorm: the largest mean oscillation `avg_B |f - [f]_B|` over
/// the sampler's balls (a lower bound of the true sup). Vector fields use the
/// Euclidean norm of the deviation.
pub fn bmo_norm(f: &impl FieldData, sampler: &BallSampler) -> Result<BallEstimate> {
    let ch = f.channels();
    sup_over_balls(f.grid(), sampler, |cells, _| {
        let inv = 1.0 / cells.len() as f64;
        let means: Vec<f64> = ch
            .iter()
            .map(|c| cells.iter().map(|&i| c[i]).sum::<f64>() * inv)
            .collect();
        let dev: f64 = cells
            .iter()
            .map(|&i| {
                ch.iter()
                    .zip(&means)
                    .map(|(c, m)| (c[i] - m) * (c[i] - m))
                    .sum::<f64>()
                    .sqrt()
            })
            .sum();
        dev * inv
    })
}

/// Sampled Morrey `M^{2,1}` norm `sup r^{-1/2} (int_{B_r} |u|^2)^{1/2}`.
pub fn morrey_21_norm(f: &impl FieldData, sampler: &BallSampler) -> Result<BallEstimate> {
    let ch = f.channels();
    let dv = f.grid().cell_volume();
    sup_over_balls(f.grid(), sampler, |cells, r| {
        let mass: f64 = cells
            .iter()
            .map(|&i| ch.iter().map(|c| c[i] * c[i]).sum::<f64>())
            .sum();
        (mass * dv / r).sqrt()
    })
}

/// Littlewood–Paley symbol family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpSymbol {
    /// Annulus blocks whose squares sum to one: `psi_{-1} = chi`,
    /// `psi_j = sqrt(chi^2(2^{-j-1} xi) - chi^2(2^{-j} xi))`.
    Annulus,
    /// Low-pass partial sums `chi(2^{-j} xi)`; the kernel has unit integral.
    LowPass,
}

impl fmt::Display for LpSymbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LpSymbol::Annulus => "annulus",
            LpSymbol::LowPass => "lowpass",
        })
    }
}

impl FromStr for LpSymbol {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "annulus" => Ok(Self::Annulus),
            "lowpass" => Ok(Self::LowPass),
            _ => Err(Error::Param(format!(
                "unknown symbol '{s}' (annulus|lowpass)"
            ))),
        }
    }
}

const CHI_INNER: f64 = 0.75;
const CHI_OUTER: f64 = 4.0 / 3.0;

fn smooth_transition(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        let a = (-1.0 / t).exp();
        let b = (-1.0 / (1.0 - t)).exp();
        a / (a + b)
    }
}

/// Smooth radial bump: 1 on `|xi| <= 3/4`, 0 on `|xi| >= 4/3`, with `chi^2`
/// smooth and monotone in between.
pub fn lp_chi(xi: f64) -> f64 {
    let t = (xi.abs() - CHI_INNER) / (CHI_OUTER - CHI_INNER);
    if t <= 0.0 {
        1.0
    } else if t >= 1.0 {
        0.0
    } else {
        (0.5 * PI * smooth_transition(t)).cos()
    }
}

/// Multiplier of block `j` at frequency magnitude `xi`.
pub fn lp_symbol(symbol: LpSymbol, j: i32, xi: f64) -> f64 {
    match symbol {
        LpSymbol::LowPass => lp_chi(xi * (-j as f64).exp2()),
        LpSymbol::Annulus if j < 0 => lp_chi(xi),
        LpSymbol::Annulus => {
            let a = lp_chi(xi * (-(j as f64) - 1.0).exp2());
            let b = lp_chi(xi * (-j as f64).exp2());
            (a * a - b * b).max(0.0).sqrt()
        }
    }
}

/// Largest block index whose support fits below the axis Nyquist frequency.
pub fn max_block(n: usize, half_width: f64) -> i32 {
    let nyquist = PI * n as f64 / (2.0 * half_width);
    ((nyquist * 3.0 / 8.0).log2()).floor() as i32
}

fn check_block(j: i32, n: usize, half_width: f64) -> Result<()> {
    if j < -1 || j > max_block(n, half_width) {
        return Err(Error::Param(format!(
            "block {j} not resolvable (allowed -1..={} at n = {n}, L = {half_width})",
            max_block(n, half_width)
        )));
    }
    Ok(())
}

/// Block `Delta_j f` of a field on the periodic grid.
pub fn lp_block_decompose(f: &ScalarField, j: i32, symbol: LpSymbol) -> Result<ScalarField> {
    let g = f.grid();
    check_block(j, g.n(), g.half_width())?;
    let s = grid::transform(f);
    Ok(grid::inverse_transform(&s.map_wavevector(|k| {
        let xi = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]).sqrt();
        Complex64::new(lp_symbol(symbol, j, xi), 0.0)
    })))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockNorm {
    pub j: i32,
    pub sup: f64,
}

/// `||Delta_j f||_inf` for `j = -1..=j_max`.
pub fn besov_b0infinf_profile(
    f: &ScalarField,
    j_max: i32,
    symbol: LpSymbol,
) -> Result<Vec<BlockNorm>> {
    let g = f.grid();
    check_block(j_max, g.n(), g.half_width())?;
    let s = grid::transform(f);
    Ok((-1..=j_max)
        .map(|j| {
            let b = grid::inverse_transform(&s.map_wavevector(|k| {
                let xi = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]).sqrt();
                Complex64::new(lp_symbol(symbol, j, xi), 0.0)
            }));
            BlockNorm {
                j,
                sup: b.max_abs(),
            }
        })
        .collect())
}

/// Same block profile for a function on the periodic line `[-L, L)`, sampled
/// at `n` cell centers.
pub fn line_block_profile(
    f: impl Fn(f64) -> f64,
    n: usize,
    half_width: f64,
    j_max: i32,
    symbol: LpSymbol,
) -> Result<Vec<BlockNorm>> {
    if n < 8 || !n.is_power_of_two() {
        return Err(Error::Grid(format!(
            "line size must be a power of two >= 8, got {n}"
        )));
    }
    check_block(j_max, n, half_width)?;
    let h = 2.0 * half_width / n as f64;
    let samples: Vec<Complex64> = (0..n)
        .map(|i| Complex64::new(f(-half_width + (i as f64 + 0.5) * h), 0.0))
        .collect();
    if samples.iter().any(|c| !c.re.is_finite()) {
        return Err(Error::Param("line samples must be finite".into()));
    }
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut spec = samples;
    fwd.process(&mut spec);
    let xi: Vec<f64> = (0..n)
        .map(|i| {
            let m = if i < n / 2 {
                i as f64
            } else {
                i as f64 - n as f64
            };
            (PI / half_width * m).abs()
        })
        .collect();
    Ok((-1..=j_max)
        .map(|j| {
            let mut b: Vec<Complex64> = spec
                .iter()
                .zip(&xi)
                .map(|(c, &x)| c * lp_symbol(symbol, j, x))
                .collect();
            inv.process(&mut b);
            let sup = b.iter().fold(0.0f64, |m, c| m.max((c.re / n as f64).abs()));
            BlockNorm { j, sup }
        })
        .collect())
}

/// Mean of `sup_j / j` over `j_lo..=j_hi` and its relative spread
/// `(max - min) / mean`.
pub fn linear_growth_spread(blocks: &[BlockNorm], j_lo: i32, j_hi: i32) -> Result<(f64, f64)> {
    let ratios: Vec<f64> = blocks
        .iter()
        .filter(|b| b.j >= j_lo && b.j <= j_hi && b.j > 0)
        .map(|b| b.sup / b.j as f64)
        .collect();
    if ratios.is_empty() {
        return Err(Error::Param(format!("no blocks in {j_lo}..={j_hi}")));
    }
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let max = ratios.iter().cloned().fold(f64::MIN, f64::max);
    let min = ratios.iter().cloned().fold(f64::MAX, f64::min);
    Ok((mean, (max - min) / mean))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::random_smooth_field;

    #[test]
    fn lp_norm_of_constant() {
        let g = Grid3::new(8, 1.0).unwrap();
        let c = ScalarField::constant(g, -3.0);
        for p in [1.0, 2.0, 3.5] {
            let expect = 3.0 * 8f64.powf(1.0 / p);
            assert!((lp_norm(&c, p).unwrap() - expect).abs() < 1e-12 * expect);
        }
        assert_eq!(lp_norm(&c, f64::INFINITY).unwrap(), 3.0);
        assert!(lp_norm(&c, 0.5).is_err());
        let v = VectorField::from_fn(g, |_| [3.0, 4.0, 0.0]).unwrap();
        assert!((lp_norm(&v, f64::INFINITY).unwrap() - 5.0).abs() < 1e-14);
    }

    #[test]
    fn lp_norm_gaussian_bump() {
        let g = Grid3::new(32, 1.0).unwrap();
        let f = ScalarField::from_fn(g, |x| {
            (-(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]) / 0.08).exp()
        })
        .unwrap();
        // product of 1-D integrals of exp(-2 x^2 / 0.08) over the real line
        let one_d = (PI * 0.04).sqrt();
        let exact = one_d.powi(3).sqrt();
        let est = lp_norm(&f, 2.0).unwrap();
        assert!((est - exact).abs() < 0.02 * exact);
        assert!(lp_norm(&f, f64::INFINITY).unwrap() >= est / g.volume().sqrt());
    }

    #[test]
    fn time_series_validation() {
        assert!(TimeSeries::new(vec![], vec![]).is_err());
        assert!(TimeSeries::new(vec![0.0, 0.0], vec![1.0, 1.0]).is_err());
        assert!(TimeSeries::new(vec![0.0, 1.0], vec![1.0, -1.0]).is_err());
        assert!(TimeSeries::new(vec![0.0, 1.0], vec![1.0]).is_err());
        assert!(TimeSeries::new(vec![0.0, 1.0], vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn weak_norm_of_constant() {
        let ts =
            TimeSeries::from_fn((0..=100).map(|i| i as f64 * 0.02).collect(), |_| 3.0).unwrap();
        let w = lorentz_weak_norm(&ts, 2.0).unwrap();
        assert!((w - 3.0 * 2f64.sqrt()).abs() < 1e-12);
        assert!((lorentz_strong_norm(&ts, 2.0).unwrap() - w).abs() < 1e-12);
    }

    #[test]
    fn weak_norm_of_inverse_square_root() {
        let times = dyadic_times(0.0, 1.0, 20, 64);
        assert!(times.len() >= 1000);
        let ts = TimeSeries::from_fn(times, |t| (1.0 - t).powf(-0.5)).unwrap();
        let w = lorentz_weak_norm(&ts, 2.0).unwrap();
        assert!((w - 1.0).abs() < 0.05, "{w}");
    }

    #[test]
    fn refinement_flags_divergence() {
        let octs = [4, 8, 12, 16, 20];
        let bad = weak_norm_refinement(|t| 1.0 / (1.0 - t), 0.0, 1.0, 2.0, &octs, 16).unwrap();
        assert!(bad.diverging);
        let good =
            weak_norm_refinement(|t| (1.0 - t).powf(-0.5), 0.0, 1.0, 2.0, &octs, 16).unwrap();
        assert!(!good.diverging);
    }

    #[test]
    fn layer_cake_cases() {
        let constant =
            TimeSeries::from_fn((0..=200).map(|i| i as f64 / 200.0).collect(), |_| 1.0).unwrap();
        let lc = layer_cake_bound_check(&constant, 1.0, 1.0, None).unwrap();
        assert!((lc.lhs - 1.0).abs() < 1e-12 && (lc.m - 1.0).abs() < 1e-12);
        assert!((lc.rhs - 4.559).abs() < 1e-3 && lc.holds());

        let zero = TimeSeries::from_fn(vec![0.0, 0.5, 1.0], |_| 0.0).unwrap();
        let lc = layer_cake_bound_check(&zero, 1.0, 1.0, None).unwrap();
        assert_eq!(lc.lhs, 0.0);
        assert!(lc.holds());

        assert!(layer_cake_bound_check(&constant, 2.0, 1.0, None).is_err());
        assert!(layer_cake_bound_check(&constant, 1.0, 1.5, None).is_err());
    }

    #[test]
    fn layer_cake_borderline_saturates() {
        let r = 0.5;
        let ts = TimeSeries::from_fn(dyadic_times(1.0 - r * r, 1.0, 32, 64), |t| {
            (1.0 - t).powf(-0.5)
        })
        .unwrap();
        let lc = layer_cake_bound_check(&ts, 1.0, r, None).unwrap();
        assert!(lc.holds());
        // exact lhs is 4 and M = 1
        assert!((lc.lhs - 4.0).abs() < 0.02, "{lc:?}");
        assert!(lc.ratio() > 0.85);
    }

    #[test]
    fn sampler_parsing() {
        let s: BallSampler = "stride=3,rmin=0.1,rmax=0.4,per_octave=2".parse().unwrap();
        assert_eq!(s.centers, Centers::Lattice { stride: 3 });
        assert_eq!(s.radii().len(), 5);
        let back: BallSampler = s.to_string().parse().unwrap();
        assert_eq!(back, s);
        let p: BallSampler = "points=0 0 0 / 0.1 0 0,rmin=0.1,rmax=0.2".parse().unwrap();
        assert_eq!(p.to_string().parse::<BallSampler>().unwrap(), p);
        assert!("rmin=0.1".parse::<BallSampler>().is_err());
        assert!("stride=2,rmin=0.1,rmax=0.2,color=red"
            .parse::<BallSampler>()
            .is_err());
    }

    #[test]
    fn bmo_of_constant_and_step() {
        let g = Grid3::new(32, 1.0).unwrap();
        let sampler = BallSampler::for_grid(&g, 2);
        assert!(
            bmo_norm(&ScalarField::constant(g, 7.0), &sampler)
                .unwrap()
                .value
                < 1e-12
        );

        let step = ScalarField::from_fn(g, |x| 0.5 * (1.0 + (x[0] / 0.01).tanh())).unwrap();
        let est = bmo_norm(&step, &sampler).unwrap();
        assert!((est.value - 0.5).abs() < 0.05, "{est:?}");
    }

    #[test]
    fn morrey_of_constant() {
        let g = Grid3::new(16, 1.0).unwrap();
        let s = BallSampler::for_grid(&g, 2);
        let c = VectorField::from_fn(g, |_| [2.0, 0.0, 0.0]).unwrap();
        let est = morrey_21_norm(&c, &s).unwrap();
        assert!((est.radius - s.r_max).abs() < 1e-12);
        // cell-count volume of the largest ball against 4/3 pi r^3
        let cells = ball_offsets(&g, est.radius).len() as f64 * g.cell_volume();
        assert!((est.value - 2.0 * (cells / est.radius).sqrt()).abs() < 1e-12);
        let closed = 2.0 * (4.0 * PI / 3.0).sqrt() * est.radius;
        assert!((est.value - closed).abs() < 0.1 * closed);
        assert_eq!(
            morrey_21_norm(&VectorField::zeros(g), &s).unwrap().value,
            0.0
        );
    }

    #[test]
    fn lp_partition_of_unity_squared() {
        for xi in [0.0, 0.5, 1.0, 2.7, 10.0, 100.0, 1000.0] {
            let total: f64 = (-1..14)
                .map(|j| lp_symbol(LpSymbol::Annulus, j, xi).powi(2))
                .sum();
            assert!((total - 1.0).abs() < 1e-12, "{xi}: {total}");
        }
        assert_eq!(lp_chi(0.7), 1.0);
        assert_eq!(lp_chi(1.4), 0.0);
    }

    #[test]
    fn block_energy_partition() {
        let g = Grid3::new(32, 1.0).unwrap();
        // modes up to |k| = 4 sqrt(3) stay below the last block's plateau
        let f = random_smooth_field(g, 5, 20, 4);
        let total = lp_norm(&f, 2.0).unwrap().powi(2);
        let mut sum = 0.0;
        for j in -1..=max_block(g.n(), g.half_width()) {
            sum += lp_norm(&lp_block_decompose(&f, j, LpSymbol::Annulus).unwrap(), 2.0)
                .unwrap()
                .powi(2);
        }
        assert!((sum - total).abs() < 1e-6 * total);
    }

    #[test]
    fn single_mode_hits_neighbouring_blocks() {
        let g = Grid3::new(64, PI).unwrap();
        // physical frequency 8 = 2^3
        let f = ScalarField::from_fn(g, |x| (8.0 * x[0]).cos()).unwrap();
        let prof = besov_b0infinf_profile(&f, max_block(64, PI), LpSymbol::Annulus).unwrap();
        for b in prof {
            if (2..=4).contains(&b.j) {
                continue;
            }
            assert!(b.sup < 1e-12, "{b:?}");
        }
        let c = ScalarField::constant(g, 2.0);
        let prof = besov_b0infinf_profile(&c, 3, LpSymbol::Annulus).unwrap();
        assert!((prof[0].sup - 2.0).abs() < 1e-12);
        assert!(prof[1..].iter().all(|b| b.sup < 1e-12));
        assert!(besov_b0infinf_profile(&c, 10, LpSymbol::Annulus).is_err());
    }

    #[test]
    fn line_lowpass_log_grows_linearly() {
        let blocks =
            line_block_profile(|x: f64| x.abs().ln(), 4096, 1.0, 9, LpSymbol::LowPass).unwrap();
        let (mean, spread) = linear_growth_spread(&blocks, 4, 9).unwrap();
        assert!(mean > 0.0 && spread < 0.15, "{mean} {spread}");
    }
}
