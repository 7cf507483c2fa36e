//! Energy measures, dimension estimates and energy-equality residuals.
//!
//! A measure is a nonnegative cell density (cell mass = density * h^3) plus
//! an optional list of point atoms. Balls are intersected with the box and
//! never wrap.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{self, Grid3, ScalarField, VectorField};
use crate::local_energy::{
    self, BalanceTerms, RadialCutoff, SpaceTimeTest, TestSupport, TestValue, TimeRamp,
};
use crate::profile::{fit_loglog, SlopeFit};
use crate::spacetime::FlowSource;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub point: [f64; 3],
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasureApprox {
    grid: Grid3,
    density: Vec<f64>,
    atoms: Vec<Atom>,
}

impl MeasureApprox {
    pub fn new(grid: Grid3, density: Vec<f64>, atoms: Vec<Atom>) -> Result<Self> {
        if density.len() != grid.len() {
            return Err(Error::Param(format!(
                "expected {} densities, got {}",
                grid.len(),
                density.len()
            )));
        }
        if let Some(index) = density.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        if density.iter().any(|&v| v < 0.0) {
            return Err(Error::Param("measure density must be nonnegative".into()));
        }
        if atoms.iter().any(|a| !(a.mass >= 0.0 && a.mass.is_finite())) {
            return Err(Error::Param(
                "atom masses must be finite and nonnegative".into(),
            ));
        }
        Ok(Self {
            grid,
            density,
            atoms,
        })
    }

    pub fn zero(grid: Grid3) -> Self {
        Self {
            grid,
            density: vec![0.0; grid.len()],
            atoms: Vec::new(),
        }
    }

    pub fn from_density(f: &ScalarField) -> Result<Self> {
        Self::new(*f.grid(), f.values().to_vec(), Vec::new())
    }

    /// Point masses only.
    pub fn atoms_only(grid: Grid3, atoms: Vec<Atom>) -> Result<Self> {
        Self::new(grid, vec![0.0; grid.len()], atoms)
    }

    pub fn grid(&self) -> &Grid3 {
        &self.grid
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn density_field(&self) -> ScalarField {
        ScalarField::new(self.grid, self.density.clone()).expect("grid-sized density")
    }

    pub fn total_mass(&self) -> f64 {
        grid::ordered_sum(&self.density) * self.grid.cell_volume()
            + self.atoms.iter().map(|a| a.mass).sum::<f64>()
    }

    pub fn is_zero(&self) -> bool {
        self.density.iter().all(|&v| v == 0.0) && self.atoms.iter().all(|a| a.mass == 0.0)
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(
            self.grid,
            self.density.iter().map(|v| c * v).collect(),
            self.atoms
                .iter()
                .map(|a| Atom {
                    point: a.point,
                    mass: c * a.mass,
                })
                .collect(),
        )
    }

    /// `int phi dmu`; atoms are paired with `phi` at their nearest cell.
    pub fn pair(&self, phi: &ScalarField) -> Result<f64> {
        self.grid.check_same(phi.grid())?;
        let p = phi.values();
        let prod: Vec<f64> = self
            .density
            .par_iter()
            .zip(p.par_iter())
            .map(|(d, v)| d * v)
            .collect();
        let atoms: f64 = self
            .atoms
            .iter()
            .map(|a| {
                let [i, j, k] = a.point.map(|c| self.grid.nearest_index(c));
                a.mass * p[self.grid.index(i, j, k)]
            })
            .sum();
        Ok(grid::ordered_sum(&prod) * self.grid.cell_volume() + atoms)
    }
}

/// A set function evaluated on balls.
pub trait BallMass: Sync {
    fn ball_mass(&self, x: [f64; 3], r: f64) -> f64;
    /// Smallest radius the values resolve.
    fn resolution_floor(&self) -> f64;
}

impl BallMass for MeasureApprox {
    fn ball_mass(&self, x: [f64; 3], r: f64) -> f64 {
        let g = &self.grid;
        let range = |c: f64| {
            let lo = g.nearest_index(c - r).saturating_sub(1);
            let hi = (g.nearest_index(c + r) + 1).min(g.n() - 1);
            lo..=hi
        };
        let r2 = r * r;
        let mut sum = 0.0;
        for k in range(x[2]) {
            let dz = g.coord(k) - x[2];
            for j in range(x[1]) {
                let dy = g.coord(j) - x[1];
                let row = g.index(0, j, k);
                for i in range(x[0]) {
                    let dx = g.coord(i) - x[0];
                    if dx * dx + dy * dy + dz * dz <= r2 {
                        sum += self.density[row + i];
                    }
                }
            }
        }
        let atoms: f64 = self
            .atoms
            .iter()
            .filter(|a| {
                let d2: f64 = (0..3).map(|i| (a.point[i] - x[i]).powi(2)).sum();
                d2 <= r2
            })
            .map(|a| a.mass)
            .sum();
        sum * g.cell_volume() + atoms
    }

    fn resolution_floor(&self) -> f64 {
        2.0 * self.grid.spacing()
    }
}

/// `delta * base(B_{r/delta}(x/delta))`: the energy of `delta^{-1} U(x/delta)`
/// when `base` is the energy measure of `U`.
#[derive(Debug, Clone)]
pub struct ScaledMeasure {
    pub base: MeasureApprox,
    pub delta: f64,
}

impl BallMass for ScaledMeasure {
    fn ball_mass(&self, x: [f64; 3], r: f64) -> f64 {
        let d = self.delta;
        d * self.base.ball_mass(x.map(|v| v / d), r / d)
    }

    fn resolution_floor(&self) -> f64 {
        self.delta * self.base.resolution_floor()
    }
}

/// Pointwise supremum of several ball-mass functions.
pub struct Envelope<'a> {
    pub members: Vec<&'a dyn BallMass>,
}

impl BallMass for Envelope<'_> {
    fn ball_mass(&self, x: [f64; 3], r: f64) -> f64 {
        self.members
            .iter()
            .map(|m| m.ball_mass(x, r))
            .fold(0.0, f64::max)
    }

    fn resolution_floor(&self) -> f64 {
        self.members
            .iter()
            .map(|m| m.resolution_floor())
            .fold(0.0, f64::max)
    }
}

/// `|u|^2` per cell.
pub fn energy_density(u: &VectorField) -> MeasureApprox {
    MeasureApprox {
        grid: *u.grid(),
        density: u.magnitude_sq().into_values(),
        atoms: Vec::new(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionEstimate {
    pub point: [f64; 3],
    pub radii: Vec<f64>,
    pub masses: Vec<f64>,
    /// Slope of `ln mass` against `ln r` over the nonzero masses; `+inf`
    /// when fewer than two are nonzero.
    pub slope: f64,
    pub fit: Option<SlopeFit>,
    pub zero_masses: usize,
}

impl DimensionEstimate {
    pub fn is_infinite(&self) -> bool {
        self.slope.is_infinite()
    }
}

/// Geometric ladder of `count` radii from `r_min` to `r_max`.
pub fn radii_ladder(r_min: f64, r_max: f64, count: usize) -> Result<Vec<f64>> {
    if !(r_min > 0.0 && r_max > r_min && count >= 2) {
        return Err(Error::Param(format!(
            "invalid radius ladder [{r_min}, {r_max}] with {count} points"
        )));
    }
    let q = (r_max / r_min).ln() / (count - 1) as f64;
    Ok((0..count).map(|i| r_min * (q * i as f64).exp()).collect())
}

/// Radii used by default for dimension fits: 8 radii in `[4h, L/4]`, which
/// needs at least 64 points per axis.
pub fn default_radii(g: &Grid3) -> Result<Vec<f64>> {
    radii_ladder(4.0 * g.spacing(), 0.25 * g.half_width(), 8)
}

/// Least-squares slope of `ln m(B_r(x))` against `ln r`.
pub fn local_dimension(m: &dyn BallMass, x: [f64; 3], radii: &[f64]) -> Result<DimensionEstimate> {
    let mut radii = radii.to_vec();
    radii.sort_by(f64::total_cmp);
    let Some(&smallest) = radii.first() else {
        return Err(Error::Param("no radii given".into()));
    };
    let floor = m.resolution_floor();
    if smallest < floor * (1.0 - 1e-12) {
        return Err(Error::Param(format!(
            "radius {smallest} is below the resolution floor {floor}"
        )));
    }
    let masses: Vec<f64> = radii.iter().map(|&r| m.ball_mass(x, r)).collect();
    let nonzero: Vec<(f64, f64)> = radii
        .iter()
        .zip(&masses)
        .filter(|(_, &v)| v > 0.0)
        .map(|(&r, &v)| (r, v))
        .collect();
    let zero_masses = radii.len() - nonzero.len();
    let (slope, fit) = if nonzero.len() < 2 {
        (f64::INFINITY, None)
    } else {
        let (rs, vs): (Vec<f64>, Vec<f64>) = nonzero.into_iter().unzip();
        let fit = fit_loglog(&rs, &vs)?;
        (fit.slope, Some(fit))
    };
    Ok(DimensionEstimate {
        point: x,
        radii,
        masses,
        slope,
        fit,
        zero_masses,
    })
}

/// Local dimensions at many points in parallel.
pub fn local_dimensions(
    m: &dyn BallMass,
    points: &[[f64; 3]],
    radii: &[f64],
) -> Result<Vec<DimensionEstimate>> {
    points
        .par_iter()
        .map(|&x| local_dimension(m, x, radii))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationEstimate {
    /// Fitted slope of `ln N(eps)` against `ln(1/eps)`.
    pub dimension: f64,
    /// `(eps, N(eps))` per dyadic scale.
    pub counts: Vec<(f64, usize)>,
    /// The measure vanished and the conventional value 3 was returned.
    pub zero_measure: bool,
}

/// Box-counting proxy for the concentration dimension: at each dyadic scale
/// the fewest boxes that together carry `mass_fraction` of the mass.
///
/// Counting sets with a prescribed share of the mass overestimates the
/// smallest carrier dimension rather than bounding it from below.
pub fn concentration_dimension(
    m: &MeasureApprox,
    mass_fraction: f64,
) -> Result<ConcentrationEstimate> {
    if !(mass_fraction > 0.0 && mass_fraction <= 1.0) {
        return Err(Error::Param(format!(
            "mass fraction must lie in (0, 1], got {mass_fraction}"
        )));
    }
    let g = m.grid;
    let n = g.n();
    let levels = n.trailing_zeros() as usize;
    if levels < 3 {
        return Err(Error::Grid(format!(
            "grid of {n} points is too coarse for box counting"
        )));
    }
    let total = m.total_mass();
    if total <= 0.0 {
        return Ok(ConcentrationEstimate {
            dimension: 3.0,
            counts: Vec::new(),
            zero_measure: true,
        });
    }
    let dv = g.cell_volume();
    let mut counts = Vec::new();
    for level in 1..=levels - 2 {
        let boxes = 1usize << level;
        let width = n / boxes;
        let mut mass = vec![0.0; boxes * boxes * boxes];
        for k in 0..n {
            for j in 0..n {
                let row = g.index(0, j, k);
                let b = boxes * (j / width + boxes * (k / width));
                for i in 0..n {
                    mass[b + i / width] += m.density[row + i] * dv;
                }
            }
        }
        for a in &m.atoms {
            let [i, j, k] = a.point.map(|c| g.nearest_index(c) / width);
            mass[i + boxes * (j + boxes * k)] += a.mass;
        }
        mass.sort_by(|a, b| b.total_cmp(a));
        let target = mass_fraction * total * (1.0 - 1e-12);
        let mut acc = 0.0;
        let mut count = 0;
        for v in &mass {
            if acc >= target {
                break;
            }
            acc += v;
            count += 1;
        }
        counts.push((2.0 * g.half_width() / boxes as f64, count.max(1)));
    }
    let inv: Vec<f64> = counts.iter().map(|c| 1.0 / c.0).collect();
    let ns: Vec<f64> = counts.iter().map(|c| c.1 as f64).collect();
    let fit = fit_loglog(&inv, &ns)?;
    Ok(ConcentrationEstimate {
        dimension: fit.slope,
        counts,
        zero_measure: false,
    })
}

/// Something a measure can be paired with.
pub trait TestFn: Sync {
    fn pair(&self, m: &MeasureApprox) -> Result<f64>;
}

impl TestFn for ScalarField {
    fn pair(&self, m: &MeasureApprox) -> Result<f64> {
        m.pair(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DictionaryShape {
    Gaussian,
    Smoothstep,
}

/// Tensor-product test function centered at `center` with scale `width`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DictionaryFn {
    pub shape: DictionaryShape,
    pub center: [f64; 3],
    pub width: f64,
}

impl DictionaryFn {
    pub fn value(&self, x: [f64; 3]) -> f64 {
        let w = self.width;
        (0..3)
            .map(|i| {
                let d = x[i] - self.center[i];
                match self.shape {
                    DictionaryShape::Gaussian => (-0.5 * d * d / (w * w)).exp(),
                    DictionaryShape::Smoothstep => RadialCutoff {
                        inner: w,
                        outer: 2.0 * w,
                    }
                    .value(d.abs()),
                }
            })
            .product()
    }

    pub fn sample(&self, g: Grid3) -> ScalarField {
        ScalarField::from_fn(g, |x| self.value(x)).expect("finite test function")
    }
}

impl TestFn for DictionaryFn {
    fn pair(&self, m: &MeasureApprox) -> Result<f64> {
        let g = m.grid;
        let prod: Vec<f64> = (0..g.len())
            .into_par_iter()
            .map(|i| {
                let d = m.density[i];
                if d == 0.0 {
                    0.0
                } else {
                    d * self.value(g.point(i))
                }
            })
            .collect();
        let atoms: f64 = m.atoms.iter().map(|a| a.mass * self.value(a.point)).sum();
        Ok(grid::ordered_sum(&prod) * g.cell_volume() + atoms)
    }
}

/// Gaussians and smoothsteps at widths `L/8, L/4, L/2` on the 27 centers
/// `{-L/2, 0, L/2}^3`.
pub fn test_dictionary(g: &Grid3) -> Vec<DictionaryFn> {
    let l = g.half_width();
    let offs = [-0.5 * l, 0.0, 0.5 * l];
    let mut out = Vec::with_capacity(162);
    for shape in [DictionaryShape::Gaussian, DictionaryShape::Smoothstep] {
        for width in [l / 8.0, l / 4.0, l / 2.0] {
            for &z in &offs {
                for &y in &offs {
                    for &x in &offs {
                        out.push(DictionaryFn {
                            shape,
                            center: [x, y, z],
                            width,
                        });
                    }
                }
            }
        }
    }
    out
}

/// Dyadic times `T - 2^{-k}` for `k = k0..=k1`.
pub fn dyadic_ladder(t_blowup: f64, k0: u32, k1: u32) -> Vec<f64> {
    (k0..=k1)
        .map(|k| t_blowup - 0.5f64.powi(k as i32))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeakStarLimit {
    /// Cesàro mean of the sequence, present only when the pairings settle.
    pub limit: Option<MeasureApprox>,
    /// `pairings[k][i] = <mu_k, phi_i>`.
    pub pairings: Vec<Vec<f64>>,
    /// Largest change between the last two pairings over the test functions.
    pub final_change: f64,
    pub converged: bool,
}

/// Pairs every measure with every test function and declares convergence
/// when the last two rows differ by less than `tol` everywhere.
pub fn weak_star_limit<T: TestFn>(
    seq: &[MeasureApprox],
    tests: &[T],
    tol: f64,
) -> Result<WeakStarLimit> {
    let Some(first) = seq.first() else {
        return Err(Error::Param("empty measure sequence".into()));
    };
    let g = first.grid;
    for m in seq {
        g.check_same(&m.grid)?;
    }
    let pairings: Vec<Vec<f64>> = seq
        .iter()
        .map(|m| tests.iter().map(|t| t.pair(m)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let final_change = if pairings.len() < 2 {
        f64::INFINITY
    } else {
        let (a, b) = (&pairings[pairings.len() - 2], &pairings[pairings.len() - 1]);
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    };
    let converged = final_change < tol;
    if !converged {
        log::warn!("pairings have not settled: last change {final_change:.3e}");
    }
    let limit = if converged {
        let k = seq.len() as f64;
        let mut density = vec![0.0; g.len()];
        for m in seq {
            density
                .par_iter_mut()
                .zip(m.density.par_iter())
                .for_each(|(d, v)| *d += v / k);
        }
        let atoms = seq
            .iter()
            .flat_map(|m| {
                m.atoms.iter().map(move |a| Atom {
                    point: a.point,
                    mass: a.mass / k,
                })
            })
            .collect();
        Some(MeasureApprox::new(g, density, atoms)?)
    } else {
        None
    };
    Ok(WeakStarLimit {
        limit,
        pairings,
        final_change,
        converged,
    })
}

/// Minimum number of slices for the global residual.
pub const MIN_RESIDUAL_SLICES: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyResidual {
    pub times: Vec<f64>,
    /// `||u(t)||_2^2`.
    pub energy: Vec<f64>,
    /// `2 int_0^t ||grad u||_2^2` by the trapezoid rule.
    pub dissipation: Vec<f64>,
    /// `energy + dissipation - energy[0]`.
    pub residual: Vec<f64>,
    /// `residual / energy[0]` (the residual itself when `energy[0] = 0`).
    pub relative: Vec<f64>,
}

impl EnergyResidual {
    pub fn max_relative(&self) -> f64 {
        self.relative.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// `||u(t)||^2 + 2 int_0^t ||grad u||^2 - ||u_0||^2` at every slice.
pub fn global_energy_residual(src: &dyn FlowSource) -> Result<EnergyResidual> {
    let times = src.times().to_vec();
    if times.len() < MIN_RESIDUAL_SLICES {
        return Err(Error::Param(format!(
            "energy residual needs at least {MIN_RESIDUAL_SLICES} slices, got {}",
            times.len()
        )));
    }
    let dv = src.grid().cell_volume();
    let mut energy = Vec::with_capacity(times.len());
    let mut diss_rate = Vec::with_capacity(times.len());
    for k in 0..times.len() {
        let s = src.slice(k)?;
        energy.push(grid::ordered_sum(s.velocity.magnitude_sq().values()) * dv);
        diss_rate.push(grid::ordered_sum(grid::gradient_sq(&s.velocity).values()) * dv);
    }
    let mut dissipation = vec![0.0; times.len()];
    for k in 1..times.len() {
        dissipation[k] =
            dissipation[k - 1] + (times[k] - times[k - 1]) * (diss_rate[k] + diss_rate[k - 1]);
    }
    let e0 = energy[0];
    let residual: Vec<f64> = energy
        .iter()
        .zip(&dissipation)
        .map(|(e, d)| e + d - e0)
        .collect();
    let relative = residual
        .iter()
        .map(|r| if e0 > 0.0 { r / e0 } else { *r })
        .collect();
    Ok(EnergyResidual {
        times,
        energy,
        dissipation,
        residual,
        relative,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalResidual {
    pub terms: BalanceTerms,
    /// `lhs - rhs` of the local energy equality.
    pub residual: f64,
    pub relative: f64,
}

/// Residual of the local energy equality for the test function `phi`.
pub fn local_energy_residual(
    src: &dyn FlowSource,
    phi: &dyn SpaceTimeTest,
) -> Result<LocalResidual> {
    let terms = local_energy::energy_balance(src, phi)?;
    Ok(LocalResidual {
        residual: terms.residual(),
        relative: terms.relative_residual(),
        terms,
    })
}

/// `a(t) exp(-|x - c|^2 / (2 w^2)) b(|x - c|)` with a time ramp `a` and a
/// radial cutoff `b` from `radius / 2` to `radius`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianBump {
    pub center: [f64; 3],
    pub width: f64,
    pub radius: f64,
    pub ramp: TimeRamp,
    /// End of the time support.
    pub t_end: f64,
}

impl SpaceTimeTest for GaussianBump {
    fn eval(&self, t: f64, x: [f64; 3]) -> TestValue {
        let y = [0, 1, 2].map(|i| x[i] - self.center[i]);
        let r = (y[0] * y[0] + y[1] * y[1] + y[2] * y[2]).sqrt();
        let cut = RadialCutoff {
            inner: 0.5 * self.radius,
            outer: self.radius,
        };
        let [b, b1, b2] = cut.radial(r);
        let w2 = self.width * self.width;
        let gauss = (-0.5 * r * r / w2).exp();
        let g1 = -r / w2 * gauss;
        let g2 = (r * r / (w2 * w2) - 1.0 / w2) * gauss;
        // radial profile f = g b
        let f = gauss * b;
        let f1 = g1 * b + gauss * b1;
        let f2 = g2 * b + 2.0 * g1 * b1 + gauss * b2;
        let (a, a1) = self.ramp.eval(t);
        // grad f = f1 y / r and f1 / r -> -1 / w^2 at the center (b is flat there)
        let f1_over_r = if r > 0.0 { f1 / r } else { -1.0 / w2 };
        TestValue {
            value: a * f,
            dt: a1 * f,
            grad: y.map(|v| a * f1_over_r * v),
            laplacian: a * (f2 + 2.0 * f1_over_r),
        }
    }

    fn support(&self) -> TestSupport {
        TestSupport {
            t0: self.ramp.start,
            t1: self.t_end,
            ball: Some((self.center, self.radius)),
        }
    }
}

/// `phi = 1` on the whole box over `[t0, t1]`; the local equality then
/// reduces to the global one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitTest {
    pub t0: f64,
    pub t1: f64,
}

impl SpaceTimeTest for UnitTest {
    fn eval(&self, _t: f64, _x: [f64; 3]) -> TestValue {
        TestValue {
            value: 1.0,
            dt: 0.0,
            grad: [0.0; 3],
            laplacian: 0.0,
        }
    }

    fn support(&self) -> TestSupport {
        TestSupport {
            t0: self.t0,
            t1: self.t1,
            ball: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{BeltramiAbc, Constant};
    use crate::norms::lp_norm;
    use crate::spacetime::{linspace, SampledFlow};
    use std::f64::consts::PI;

    #[test]
    fn density_mass_matches_l2() {
        let g = Grid3::new(16, 1.0).unwrap();
        assert!(energy_density(&VectorField::zeros(g)).is_zero());
        let c = VectorField::from_fn(g, |_| [2.0, 0.0, 0.0]).unwrap();
        let m = energy_density(&c);
        assert!(m.density().iter().all(|&v| v == 4.0));
        assert!((m.total_mass() - 4.0 * g.volume()).abs() < 1e-12 * g.volume());
        let u = grid::random_smooth_vector(g, 3, 6, 3);
        let l2 = lp_norm(&u, 2.0).unwrap();
        let mass = energy_density(&u).total_mass();
        assert!((mass - l2 * l2).abs() < 1e-12 * mass);
    }

    #[test]
    fn rejects_negative_density() {
        let g = Grid3::new(8, 1.0).unwrap();
        let mut d = vec![0.0; g.len()];
        d[3] = -1.0;
        assert!(MeasureApprox::new(g, d, Vec::new()).is_err());
    }

    #[test]
    fn atom_dimension_zero() {
        let g = Grid3::new(64, 1.0).unwrap();
        let m = MeasureApprox::atoms_only(
            g,
            vec![Atom {
                point: [0.1, 0.0, 0.0],
                mass: 1.0,
            }],
        )
        .unwrap();
        let est = local_dimension(&m, [0.1, 0.0, 0.0], &default_radii(&g).unwrap()).unwrap();
        assert_eq!(est.slope.abs(), 0.0);
        let far = local_dimension(&m, [-0.7, 0.0, 0.0], &[0.125, 0.2]).unwrap();
        assert!(far.is_infinite() && far.zero_masses == 2);
        assert!(local_dimension(&m, [0.0; 3], &[0.01]).is_err());
        assert!(default_radii(&Grid3::new(32, 1.0).unwrap()).is_err());
        let c = concentration_dimension(&m, 0.9).unwrap();
        assert_eq!(c.dimension.abs(), 0.0);
    }

    #[test]
    fn lebesgue_dimension_three() {
        let g = Grid3::new(64, 1.0).unwrap();
        let m = MeasureApprox::new(g, vec![1.0; g.len()], Vec::new()).unwrap();
        let est = local_dimension(&m, [0.0; 3], &default_radii(&g).unwrap()).unwrap();
        assert!((est.slope - 3.0).abs() < 0.1, "{}", est.slope);
        let scaled = local_dimension(
            &m.scaled(7.5).unwrap(),
            [0.0; 3],
            &default_radii(&g).unwrap(),
        )
        .unwrap();
        assert!((scaled.slope - est.slope).abs() < 1e-12);
        let c = concentration_dimension(&m, 0.99).unwrap();
        assert!((c.dimension - 3.0).abs() < 0.2, "{}", c.dimension);
    }

    #[test]
    fn zero_measure_conventions() {
        let g = Grid3::new(16, 1.0).unwrap();
        let z = MeasureApprox::zero(g);
        let c = concentration_dimension(&z, 0.5).unwrap();
        assert!(c.zero_measure && c.dimension == 3.0);
        assert!(local_dimension(&z, [0.0; 3], &[0.25, 0.5])
            .unwrap()
            .is_infinite());
        assert!(concentration_dimension(&z, 0.0).is_err());
    }

    #[test]
    fn scaled_measure_matches_direct() {
        let g = Grid3::new(32, 1.0).unwrap();
        let d: Vec<f64> = (0..g.len()).map(|i| (i % 7) as f64).collect();
        let base = MeasureApprox::new(g, d, Vec::new()).unwrap();
        let s = ScaledMeasure {
            base: base.clone(),
            delta: 0.5,
        };
        let direct = 0.5 * base.ball_mass([0.2, 0.0, -0.2], 0.6);
        assert_eq!(s.ball_mass([0.1, 0.0, -0.1], 0.3), direct);
        let env = Envelope {
            members: vec![&base, &s],
        };
        assert!(env.ball_mass([0.0; 3], 0.3) >= base.ball_mass([0.0; 3], 0.3));
    }

    #[test]
    fn weak_star_constant_sequence() {
        let g = Grid3::new(16, 1.0).unwrap();
        let u = grid::random_smooth_vector(g, 1, 4, 2);
        let m = energy_density(&u);
        let dict = test_dictionary(&g);
        assert_eq!(dict.len(), 162);
        let w = weak_star_limit(&[m.clone(), m.clone(), m.clone()], &dict[..20], 1e-12).unwrap();
        assert!(w.converged);
        assert!(w.pairings.windows(2).all(|p| p[0] == p[1]));
        let lim = w.limit.unwrap();
        for (a, b) in lim.density().iter().zip(m.density()) {
            assert!((a - b).abs() < 1e-12 * b.max(1.0));
        }
        // sampled and pointwise pairings agree
        let phi = dict[5].sample(g);
        assert!((phi.pair(&m).unwrap() - dict[5].pair(&m).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn weak_star_flags_divergence() {
        let g = Grid3::new(16, 1.0).unwrap();
        let seq: Vec<MeasureApprox> = (1..4)
            .map(|k| MeasureApprox::new(g, vec![k as f64; g.len()], Vec::new()).unwrap())
            .collect();
        let w = weak_star_limit(&seq, &[ScalarField::constant(g, 1.0)], 1e-3).unwrap();
        assert!(!w.converged && w.limit.is_none());
    }

    #[test]
    fn global_residual_zero_and_truncated() {
        let g = Grid3::new(16, PI).unwrap();
        let zero = SampledFlow::new(
            Constant {
                velocity: [0.0; 3],
                pressure: 0.0,
            },
            g,
            linspace(0.0, 1.0, 16),
        )
        .unwrap();
        let r = global_energy_residual(&zero).unwrap();
        assert!(r.residual.iter().all(|&v| v == 0.0));
        let short = SampledFlow::new(BeltramiAbc::default(), g, linspace(0.0, 1.0, 8)).unwrap();
        assert!(global_energy_residual(&short).is_err());

        let src = SampledFlow::new(BeltramiAbc::default(), g, linspace(0.0, 1.0, 257)).unwrap();
        let r = global_energy_residual(&src).unwrap();
        assert!(r.max_relative() < 2e-5, "{}", r.max_relative());
        let e0 = r.energy[0];
        for (k, &t) in r.times.iter().enumerate() {
            let truncated = r.energy[k] - e0;
            let expected = -(1.0 - (-2.0 * t).exp()) * e0;
            assert!((truncated - expected).abs() < 1e-10 * e0);
        }
    }

    #[test]
    fn unit_test_function_reduces_to_global() {
        let g = Grid3::new(16, PI).unwrap();
        let src = SampledFlow::new(BeltramiAbc::default(), g, linspace(0.0, 1.0, 65)).unwrap();
        let glob = global_energy_residual(&src).unwrap();
        let loc = local_energy_residual(&src, &UnitTest { t0: 0.0, t1: 1.0 }).unwrap();
        let last = *glob.residual.last().unwrap();
        assert!((loc.residual - last).abs() < 1e-10 * glob.energy[0]);
    }

    #[test]
    fn gaussian_bump_derivatives() {
        let b = GaussianBump {
            center: [0.1, 0.0, 0.0],
            width: 0.5,
            radius: 1.5,
            ramp: TimeRamp {
                start: 0.1,
                end: 0.6,
            },
            t_end: 1.0,
        };
        let e = 1e-4;
        for x in [[0.1, 0.0, 0.0], [0.4, -0.2, 0.3], [0.9, 0.5, 0.1]] {
            let t = 0.4;
            let v = b.eval(t, x);
            let mut lap = 0.0;
            for i in 0..3 {
                let mut xp = x;
                xp[i] += e;
                let mut xm = x;
                xm[i] -= e;
                let (fp, fm) = (b.eval(t, xp).value, b.eval(t, xm).value);
                lap += (fp - 2.0 * v.value + fm) / (e * e);
                assert!(((fp - fm) / (2.0 * e) - v.grad[i]).abs() < 1e-6);
            }
            assert!((lap - v.laplacian).abs() < 1e-4 * (1.0 + v.laplacian.abs()));
            let fdt = (b.eval(t + e, x).value - b.eval(t - e, x).value) / (2.0 * e);
            assert!((fdt - v.dt).abs() < 1e-6 * (1.0 + v.dt.abs()));
        }
    }

    #[test]
    fn local_residual_of_zero_flow() {
        let g = Grid3::new(16, 1.0).unwrap();
        let src = SampledFlow::new(
            Constant {
                velocity: [0.0; 3],
                pressure: 0.0,
            },
            g,
            linspace(0.0, 1.0, 9),
        )
        .unwrap();
        let bump = GaussianBump {
            center: [0.0; 3],
            width: 0.3,
            radius: 0.8,
            ramp: TimeRamp {
                start: 0.2,
                end: 0.6,
            },
            t_end: 1.0,
        };
        assert_eq!(local_energy_residual(&src, &bump).unwrap().residual, 0.0);
        let outside = GaussianBump {
            center: [0.5, 0.0, 0.0],
            ..bump
        };
        assert!(local_energy_residual(&src, &outside).is_err());
    }
}
