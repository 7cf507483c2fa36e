//! Periodic-grid fields and spectral operators.
//!
//! The box is `[-L, L)^3` sampled with `n` points per axis. Transforms follow a
//! fixed convention: the forward transform is unscaled and the inverse divides by
//! `n^3`, so a constant field `c` has the single coefficient `c * n^3` at `k = 0`.
//!
//! Derivative multipliers use the physical wavenumber `(pi / L) * k` with the
//! Nyquist index `k = -n/2` zeroed along each axis. Every operator in this module
//! (gradient, divergence, Laplacian, Leray projection, Riesz transforms, pressure)
//! uses the same zeroed vector, so identities such as `div(grad f) = lap f` and
//! `div(P v) = 0` hold to round-off on the discrete level.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform periodic grid on `[-L, L)^3`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid3 {
    n: usize,
    half_width: f64,
    cell_centered: bool,
}

impl Grid3 {
    /// Cell-centered grid; no sample sits on the origin.
    pub fn new(n: usize, half_width: f64) -> Result<Self> {
        Self::with_offset(n, half_width, true)
    }

    pub fn with_offset(n: usize, half_width: f64, cell_centered: bool) -> Result<Self> {
        if n < 8 || !n.is_power_of_two() {
            return Err(Error::Grid(format!(
                "points per axis must be a power of two >= 8, got {n}"
            )));
        }
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(Error::Grid(format!(
                "half width must be positive, got {half_width}"
            )));
        }
        Ok(Self {
            n,
            half_width,
            cell_centered,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn cell_centered(&self) -> bool {
        self.cell_centered
    }

    /// Number of samples, `n^3`.
    pub fn len(&self) -> usize {
        self.n * self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / self.n as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(3)
    }

    pub fn volume(&self) -> f64 {
        (2.0 * self.half_width).powi(3)
    }

    /// Same sampling pattern on a box scaled by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::with_offset(self.n, self.half_width * factor, self.cell_centered)
    }

    /// Same box with a different resolution.
    pub fn resampled(&self, n: usize) -> Result<Self> {
        Self::with_offset(n, self.half_width, self.cell_centered)
    }

    /// Coordinate of sample `i` along any axis.
    #[inline]
    pub fn coord(&self, i: usize) -> f64 {
        let offset = if self.cell_centered { 0.5 } else { 0.0 };
        -self.half_width + (i as f64 + offset) * self.spacing()
    }

    /// Linear index, x fastest.
    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.n * (j + self.n * k)
    }

    #[inline]
    pub fn unravel(&self, idx: usize) -> (usize, usize, usize) {
        let n = self.n;
        (idx % n, (idx / n) % n, idx / (n * n))
    }

    #[inline]
    pub fn point(&self, idx: usize) -> [f64; 3] {
        let (i, j, k) = self.unravel(idx);
        [self.coord(i), self.coord(j), self.coord(k)]
    }

    /// Nearest sample index along one axis for coordinate `x` (clamped).
    pub fn nearest_index(&self, x: f64) -> usize {
        let offset = if self.cell_centered { 0.5 } else { 0.0 };
        let f = (x + self.half_width) / self.spacing() - offset;
        (f.round().max(0.0) as usize).min(self.n - 1)
    }

    /// Integer wavenumber of DFT index `i`, in `[-n/2, n/2)`.
    #[inline]
    pub fn signed_mode(&self, i: usize) -> i64 {
        let n = self.n as i64;
        let i = i as i64;
        if i < n / 2 {
            i
        } else {
            i - n
        }
    }

    /// Physical wavenumber used by derivative operators (Nyquist zeroed).
    #[inline]
    pub fn derivative_wavenumber(&self, i: usize) -> f64 {
        let m = self.signed_mode(i);
        if m == -(self.n as i64) / 2 {
            0.0
        } else {
            PI / self.half_width * m as f64
        }
    }

    /// Largest resolved physical wavenumber along one axis.
    pub fn axis_nyquist(&self) -> f64 {
        PI / self.half_width * (self.n / 2) as f64
    }

    fn wavenumbers(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.derivative_wavenumber(i)).collect()
    }

    pub(crate) fn check_same(&self, other: &Grid3) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }
}

/// Real scalar samples on a [`Grid3`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid3,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Grid3, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Param(format!(
                "expected {} samples, got {}",
                grid.len(),
                values.len()
            )));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { grid, values })
    }

    pub(crate) fn from_raw(grid: Grid3, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn zeros(grid: Grid3) -> Self {
        Self::from_raw(grid, vec![0.0; grid.len()])
    }

    pub fn constant(grid: Grid3, c: f64) -> Self {
        Self::from_raw(grid, vec![c; grid.len()])
    }

    /// Samples `f` at every grid point.
    pub fn from_fn<F>(grid: Grid3, f: F) -> Result<Self>
    where
        F: Fn([f64; 3]) -> f64 + Sync,
    {
        let values: Vec<f64> = (0..grid.len())
            .into_par_iter()
            .map(|idx| f(grid.point(idx)))
            .collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &Grid3 {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64 + Sync) -> Self {
        Self::from_raw(self.grid, self.values.par_iter().map(|&v| f(v)).collect())
    }

    pub fn scale(&self, a: f64) -> Self {
        self.map(|v| a * v)
    }

    /// `a * self + b * other`.
    pub fn lincomb(&self, a: f64, other: &ScalarField, b: f64) -> Result<Self> {
        self.grid.check_same(&other.grid)?;
        let values = self
            .values
            .par_iter()
            .zip(other.values.par_iter())
            .map(|(x, y)| a * x + b * y)
            .collect();
        Ok(Self::from_raw(self.grid, values))
    }

    pub fn mean(&self) -> f64 {
        ordered_sum(&self.values) / self.values.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Grid-weighted inner product `sum f g h^3`.
    pub fn inner(&self, other: &ScalarField) -> Result<f64> {
        self.grid.check_same(&other.grid)?;
        let products: Vec<f64> = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .collect();
        Ok(ordered_sum(&products) * self.grid.cell_volume())
    }

    /// Periodic shift by whole cells: `out(i) = self(i - shift)`.
    pub fn roll(&self, shift: [i64; 3]) -> Self {
        let g = self.grid;
        let n = g.n as i64;
        let mut out = vec![0.0; g.len()];
        out.par_chunks_mut(g.n * g.n)
            .enumerate()
            .for_each(|(k, plane)| {
                let sk = (k as i64 - shift[2]).rem_euclid(n) as usize;
                for j in 0..g.n {
                    let sj = (j as i64 - shift[1]).rem_euclid(n) as usize;
                    for i in 0..g.n {
                        let si = (i as i64 - shift[0]).rem_euclid(n) as usize;
                        plane[i + g.n * j] = self.values[g.index(si, sj, sk)];
                    }
                }
            });
        Self::from_raw(g, out)
    }
}

/// Three scalar components on a shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    comps: [ScalarField; 3],
}

impl VectorField {
    pub fn new(c0: ScalarField, c1: ScalarField, c2: ScalarField) -> Result<Self> {
        c0.grid.check_same(&c1.grid)?;
        c0.grid.check_same(&c2.grid)?;
        Ok(Self {
            comps: [c0, c1, c2],
        })
    }

    pub fn zeros(grid: Grid3) -> Self {
        Self {
            comps: [
                ScalarField::zeros(grid),
                ScalarField::zeros(grid),
                ScalarField::zeros(grid),
            ],
        }
    }

    pub fn from_fn<F>(grid: Grid3, f: F) -> Result<Self>
    where
        F: Fn([f64; 3]) -> [f64; 3] + Sync,
    {
        let samples: Vec<[f64; 3]> = (0..grid.len())
            .into_par_iter()
            .map(|idx| f(grid.point(idx)))
            .collect();
        let comp = |a: usize| samples.iter().map(|s| s[a]).collect::<Vec<f64>>();
        Self::new(
            ScalarField::new(grid, comp(0))?,
            ScalarField::new(grid, comp(1))?,
            ScalarField::new(grid, comp(2))?,
        )
    }

    pub fn grid(&self) -> &Grid3 {
        self.comps[0].grid()
    }

    pub fn component(&self, a: usize) -> &ScalarField {
        &self.comps[a]
    }

    pub fn components(&self) -> &[ScalarField; 3] {
        &self.comps
    }

    pub fn into_components(self) -> [ScalarField; 3] {
        self.comps
    }

    #[inline]
    pub fn at(&self, idx: usize) -> [f64; 3] {
        [
            self.comps[0].values[idx],
            self.comps[1].values[idx],
            self.comps[2].values[idx],
        ]
    }

    /// Pointwise `|u|^2`.
    pub fn magnitude_sq(&self) -> ScalarField {
        let g = *self.grid();
        let values = (0..g.len())
            .into_par_iter()
            .map(|idx| {
                let u = self.at(idx);
                u[0] * u[0] + u[1] * u[1] + u[2] * u[2]
            })
            .collect();
        ScalarField::from_raw(g, values)
    }

    pub fn max_abs(&self) -> f64 {
        self.magnitude_sq().max_abs().sqrt()
    }

    pub fn scale(&self, a: f64) -> Self {
        Self {
            comps: [
                self.comps[0].scale(a),
                self.comps[1].scale(a),
                self.comps[2].scale(a),
            ],
        }
    }

    pub fn lincomb(&self, a: f64, other: &VectorField, b: f64) -> Result<Self> {
        Ok(Self {
            comps: [
                self.comps[0].lincomb(a, &other.comps[0], b)?,
                self.comps[1].lincomb(a, &other.comps[1], b)?,
                self.comps[2].lincomb(a, &other.comps[2], b)?,
            ],
        })
    }

    pub fn inner(&self, other: &VectorField) -> Result<f64> {
        let mut s = 0.0;
        for a in 0..3 {
            s += self.comps[a].inner(&other.comps[a])?;
        }
        Ok(s)
    }

    pub fn roll(&self, shift: [i64; 3]) -> Self {
        Self {
            comps: [
                self.comps[0].roll(shift),
                self.comps[1].roll(shift),
                self.comps[2].roll(shift),
            ],
        }
    }
}

/// Fourier coefficients of a real field, indexed like the grid (x fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralRep {
    grid: Grid3,
    coeffs: Vec<Complex64>,
}

impl SpectralRep {
    pub fn grid(&self) -> &Grid3 {
        &self.grid
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    /// Coefficient of the integer wavevector `k`, each entry in `[-n/2, n/2)`.
    pub fn coeff(&self, k: [i64; 3]) -> Complex64 {
        let n = self.grid.n as i64;
        let w = |m: i64| m.rem_euclid(n) as usize;
        self.coeffs[self.grid.index(w(k[0]), w(k[1]), w(k[2]))]
    }

    /// Largest `|c(k) - conj(c(-k))|`; zero for spectra of real fields.
    pub fn hermitian_defect(&self) -> f64 {
        let g = self.grid;
        let n = g.n;
        let mirror = |i: usize| (n - i) % n;
        (0..g.len())
            .map(|idx| {
                let (i, j, k) = g.unravel(idx);
                let other = self.coeffs[g.index(mirror(i), mirror(j), mirror(k))];
                (self.coeffs[idx] - other.conj()).norm()
            })
            .fold(0.0, f64::max)
    }

    /// Spectral L2 norm squared under the transform convention (equals the grid
    /// norm `sum |f|^2 h^3`).
    pub fn l2_norm_sq(&self) -> f64 {
        let sq: Vec<f64> = self.coeffs.iter().map(|c| c.norm_sqr()).collect();
        ordered_sum(&sq) * self.grid.cell_volume() / self.grid.len() as f64
    }

    /// Applies a multiplier that depends on the derivative wavevector.
    pub fn map_wavevector(&self, m: impl Fn([f64; 3]) -> Complex64 + Sync) -> SpectralRep {
        let g = self.grid;
        let kv = g.wavenumbers();
        let mut coeffs = self.coeffs.clone();
        coeffs
            .par_chunks_mut(g.n * g.n)
            .enumerate()
            .for_each(|(k, plane)| {
                for j in 0..g.n {
                    for i in 0..g.n {
                        plane[i + g.n * j] *= m([kv[i], kv[j], kv[k]]);
                    }
                }
            });
        SpectralRep { grid: g, coeffs }
    }
}

impl SpectralRep {
    pub(crate) fn map_indexed(
        &self,
        f: impl Fn(usize, Complex64) -> Complex64 + Sync,
    ) -> SpectralRep {
        let coeffs = self
            .coeffs()
            .par_iter()
            .enumerate()
            .map(|(i, &c)| f(i, c))
            .collect();
        SpectralRep {
            grid: self.grid,
            coeffs,
        }
    }

    /// `self + a * other`.
    pub(crate) fn axpy(&self, a: f64, other: &SpectralRep) -> SpectralRep {
        let coeffs = self
            .coeffs()
            .par_iter()
            .zip(other.coeffs().par_iter())
            .map(|(x, y)| x + y * a)
            .collect();
        SpectralRep {
            grid: self.grid,
            coeffs,
        }
    }
}

/// Forward transform (unscaled).
pub fn transform(f: &ScalarField) -> SpectralRep {
    let g = f.grid;
    let mut data: Vec<Complex64> = f.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft::fft3(&mut data, g.n, false);
    SpectralRep {
        grid: g,
        coeffs: data,
    }
}

/// Inverse transform (divides by `n^3`), keeping the real part.
pub fn inverse_transform(s: &SpectralRep) -> ScalarField {
    let g = s.grid;
    let mut data = s.coeffs.clone();
    fft::fft3(&mut data, g.n, true);
    let scale = 1.0 / g.len() as f64;
    ScalarField::from_raw(g, data.iter().map(|c| c.re * scale).collect())
}

fn spectral_vector(v: &VectorField) -> [SpectralRep; 3] {
    [
        transform(v.component(0)),
        transform(v.component(1)),
        transform(v.component(2)),
    ]
}

fn physical_vector(s: &[SpectralRep; 3]) -> VectorField {
    VectorField {
        comps: [
            inverse_transform(&s[0]),
            inverse_transform(&s[1]),
            inverse_transform(&s[2]),
        ],
    }
}

/// Multiplies by `i k_a` for one axis.
pub fn spectral_derivative(s: &SpectralRep, axis: usize) -> SpectralRep {
    s.map_wavevector(|k| Complex64::new(0.0, k[axis]))
}

pub fn derivative(f: &ScalarField, axis: usize) -> ScalarField {
    inverse_transform(&spectral_derivative(&transform(f), axis))
}

pub fn gradient(f: &ScalarField) -> VectorField {
    let s = transform(f);
    VectorField {
        comps: [0, 1, 2].map(|a| inverse_transform(&spectral_derivative(&s, a))),
    }
}

pub fn divergence(v: &VectorField) -> ScalarField {
    let s = spectral_vector(v);
    let g = *v.grid();
    let mut acc = s[0].map_wavevector(|k| Complex64::new(0.0, k[0]));
    for a in 1..3 {
        let d = spectral_derivative(&s[a], a);
        acc.coeffs
            .par_iter_mut()
            .zip(d.coeffs.par_iter())
            .for_each(|(x, y)| *x += y);
    }
    debug_assert_eq!(acc.grid, g);
    inverse_transform(&acc)
}

pub fn laplacian(f: &ScalarField) -> ScalarField {
    let s = transform(f);
    inverse_transform(
        &s.map_wavevector(|k| Complex64::new(-(k[0] * k[0] + k[1] * k[1] + k[2] * k[2]), 0.0)),
    )
}

pub fn curl(v: &VectorField) -> VectorField {
    let s = spectral_vector(v);
    let d = |comp: usize, axis: usize| spectral_derivative(&s[comp], axis);
    let combine = |a: SpectralRep, b: SpectralRep| {
        let coeffs = a.coeffs.iter().zip(&b.coeffs).map(|(x, y)| x - y).collect();
        inverse_transform(&SpectralRep {
            grid: a.grid,
            coeffs,
        })
    };
    VectorField {
        comps: [
            combine(d(2, 1), d(1, 2)),
            combine(d(0, 2), d(2, 0)),
            combine(d(1, 0), d(0, 1)),
        ],
    }
}

/// Full velocity gradient: `out[a][b] = d_b u_a`.
pub fn velocity_gradient(u: &VectorField) -> [[ScalarField; 3]; 3] {
    let s = spectral_vector(u);
    [0, 1, 2].map(|a| [0, 1, 2].map(|b| inverse_transform(&spectral_derivative(&s[a], b))))
}

/// Pointwise `|grad u|^2 = sum_ab (d_b u_a)^2`.
pub fn gradient_sq(u: &VectorField) -> ScalarField {
    let g = *u.grid();
    let s = spectral_vector(u);
    let mut acc = vec![0.0; g.len()];
    for comp in &s {
        for axis in 0..3 {
            let d = inverse_transform(&spectral_derivative(comp, axis));
            acc.par_iter_mut()
                .zip(d.values.par_iter())
                .for_each(|(a, v)| *a += v * v);
        }
    }
    ScalarField::from_raw(g, acc)
}

fn leray_spectral(s: &mut [SpectralRep; 3]) {
    let g = s[0].grid;
    let kv = g.wavenumbers();
    let n = g.n;
    let [s0, s1, s2] = s;
    s0.coeffs
        .par_chunks_mut(n * n)
        .zip(s1.coeffs.par_chunks_mut(n * n))
        .zip(s2.coeffs.par_chunks_mut(n * n))
        .enumerate()
        .for_each(|(k, ((p0, p1), p2))| {
            for j in 0..n {
                for i in 0..n {
                    let kk = [kv[i], kv[j], kv[k]];
                    let k2 = kk[0] * kk[0] + kk[1] * kk[1] + kk[2] * kk[2];
                    if k2 == 0.0 {
                        continue;
                    }
                    let l = i + n * j;
                    let v = [p0[l], p1[l], p2[l]];
                    let kdotv = (v[0] * kk[0] + v[1] * kk[1] + v[2] * kk[2]) / k2;
                    p0[l] = v[0] - kdotv * kk[0];
                    p1[l] = v[1] - kdotv * kk[1];
                    p2[l] = v[2] - kdotv * kk[2];
                }
            }
        });
}

/// Leray projection `(delta_ij - k_i k_j / |k|^2) v_j`; the zero mode passes through.
pub fn leray_project(v: &VectorField) -> VectorField {
    let mut s = spectral_vector(v);
    leray_spectral(&mut s);
    physical_vector(&s)
}

/// Riesz transform along `axis`: multiplier `-i k_axis / |k|`, zero mode removed.
pub fn riesz_transform(axis: usize, f: &ScalarField) -> Result<ScalarField> {
    if axis > 2 {
        return Err(Error::Param(format!("axis must be 0, 1 or 2, got {axis}")));
    }
    let s = transform(f);
    Ok(inverse_transform(&s.map_wavevector(|k| {
        let norm = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]).sqrt();
        if norm == 0.0 {
            Complex64::new(0.0, 0.0)
        } else {
            Complex64::new(0.0, -k[axis] / norm)
        }
    })))
}

/// Largest pointwise divergence magnitude.
pub fn max_divergence(v: &VectorField) -> f64 {
    divergence(v).max_abs()
}

/// Divergence level above which [`pressure_from_velocity`] warns.
pub const PRESSURE_DIVERGENCE_TOL: f64 = 1e-8;

/// Solves `-lap P = d_i d_j (u_i u_j)` on the periodic box with zero mean.
pub fn pressure_from_velocity(u: &VectorField) -> ScalarField {
    let div = max_divergence(u);
    let scale = u.max_abs().max(f64::MIN_POSITIVE);
    if div > PRESSURE_DIVERGENCE_TOL * scale.max(1.0) {
        log::warn!("pressure solve on a field with divergence {div:.3e}");
    }
    pressure_from_weighted_stress(u, None)
}

/// Pressure of the stress `u_i u_j w` for an optional weight `w` (the localized
/// pressure when `w` is a cutoff).
pub(crate) fn pressure_from_weighted_stress(
    u: &VectorField,
    weight: Option<&ScalarField>,
) -> ScalarField {
    let g = *u.grid();
    let n = g.n;
    let kv = g.wavenumbers();
    let mut acc = vec![Complex64::new(0.0, 0.0); g.len()];
    for a in 0..3 {
        for b in a..3 {
            let ua = u.component(a).values();
            let ub = u.component(b).values();
            let values: Vec<f64> = match weight {
                Some(w) => (0..g.len()).map(|i| ua[i] * ub[i] * w.values[i]).collect(),
                None => (0..g.len()).map(|i| ua[i] * ub[i]).collect(),
            };
            let s = transform(&ScalarField::from_raw(g, values));
            let factor = if a == b { 1.0 } else { 2.0 };
            acc.par_chunks_mut(n * n)
                .zip(s.coeffs.par_chunks(n * n))
                .enumerate()
                .for_each(|(k, (out, inp))| {
                    for j in 0..n {
                        for i in 0..n {
                            let kk = [kv[i], kv[j], kv[k]];
                            let k2 = kk[0] * kk[0] + kk[1] * kk[1] + kk[2] * kk[2];
                            if k2 == 0.0 {
                                continue;
                            }
                            let l = i + n * j;
                            out[l] -= inp[l] * (factor * kk[a] * kk[b] / k2);
                        }
                    }
                });
        }
    }
    inverse_transform(&SpectralRep {
        grid: g,
        coeffs: acc,
    })
}

/// Band-limited random field: `modes` random Fourier modes with integer
/// wavevectors in `[-kmax, kmax]^3` and unit-scale amplitudes.
pub fn random_smooth_field(grid: Grid3, seed: u64, modes: usize, kmax: i64) -> ScalarField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let terms: Vec<([f64; 3], f64, f64)> = (0..modes)
        .map(|_| {
            let k = [0, 1, 2].map(|_| rng.gen_range(-kmax..=kmax) as f64 * PI / grid.half_width());
            (k, rng.gen_range(-1.0..1.0), rng.gen_range(0.0..2.0 * PI))
        })
        .collect();
    let offset = rng.gen_range(-1.0..1.0);
    ScalarField::from_fn(grid, |x| {
        offset
            + terms
                .iter()
                .map(|(k, a, ph)| a * (k[0] * x[0] + k[1] * x[1] + k[2] * x[2] + ph).cos())
                .sum::<f64>()
    })
    .expect("trigonometric sums are finite")
}

pub fn random_smooth_vector(grid: Grid3, seed: u64, modes: usize, kmax: i64) -> VectorField {
    VectorField {
        comps: [0, 1, 2]
            .map(|a| random_smooth_field(grid, seed.wrapping_mul(31).wrapping_add(a), modes, kmax)),
    }
}

/// Sum in a fixed order, split into fixed-size blocks summed in parallel so the
/// result does not depend on thread scheduling.
pub(crate) fn ordered_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 4096;
    let partial: Vec<f64> = values
        .par_chunks(BLOCK)
        .map(|c| c.iter().sum::<f64>())
        .collect();
    partial.iter().sum()
}

mod fft {
    use super::*;

    thread_local! {
        static PLANS: RefCell<HashMap<(usize, bool), Arc<dyn Fft<f64>>>> = RefCell::new(HashMap::new());
    }

    fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
        PLANS.with(|p| {
            p.borrow_mut()
                .entry((n, inverse))
                .or_insert_with(|| {
                    let mut planner = FftPlanner::new();
                    if inverse {
                        planner.plan_fft_inverse(n)
                    } else {
                        planner.plan_fft_forward(n)
                    }
                })
                .clone()
        })
    }

    fn lines(data: &mut [Complex64], n: usize, inverse: bool) {
        data.par_chunks_mut(n * n).for_each(|plane| {
            let f = plan(n, inverse);
            let mut scratch = vec![Complex64::new(0.0, 0.0); f.get_inplace_scratch_len()];
            f.process_with_scratch(plane, &mut scratch);
        });
    }

    /// 3-D transform of an `n^3` array in x-fastest order.
    pub(super) fn fft3(data: &mut [Complex64], n: usize, inverse: bool) {
        let nn = n * n;
        lines(data, n, inverse);

        // y axis: make y fastest inside each z plane
        let mut buf = vec![Complex64::new(0.0, 0.0); data.len()];
        buf.par_chunks_mut(nn).enumerate().for_each(|(k, out)| {
            let inp = &data[k * nn..(k + 1) * nn];
            for i in 0..n {
                for j in 0..n {
                    out[j + n * i] = inp[i + n * j];
                }
            }
        });
        lines(&mut buf, n, inverse);
        data.par_chunks_mut(nn).enumerate().for_each(|(k, out)| {
            let inp = &buf[k * nn..(k + 1) * nn];
            for j in 0..n {
                for i in 0..n {
                    out[i + n * j] = inp[j + n * i];
                }
            }
        });

        // z axis: out[(j n + i) n + k] = in[(k n + j) n + i]
        {
            let src: &[Complex64] = data;
            buf.par_chunks_mut(nn).enumerate().for_each(|(j, out)| {
                for i in 0..n {
                    for k in 0..n {
                        out[k + n * i] = src[i + n * (j + n * k)];
                    }
                }
            });
        }
        lines(&mut buf, n, inverse);
        data.par_chunks_mut(nn).enumerate().for_each(|(k, out)| {
            for j in 0..n {
                for i in 0..n {
                    out[i + n * j] = buf[k + n * (i + n * j)];
                }
            }
        });
    }
}
