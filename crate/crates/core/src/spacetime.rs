//! Time-sampled velocity/pressure pairs.
//!
//! Diagnostics consume any [`FlowSource`]: an in-memory [`SpaceTimeField`], an
//! analytic flow sampled on demand ([`SampledFlow`]), or a dataset directory
//! read slice by slice ([`DatasetSource`]).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::grid::{self, Grid3, ScalarField, VectorField};
use crate::io;

/// One time sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Slice {
    pub t: f64,
    pub velocity: VectorField,
    pub pressure: ScalarField,
}

pub trait FlowSource: Sync {
    fn grid(&self) -> &Grid3;
    fn times(&self) -> &[f64];
    fn slice(&self, k: usize) -> Result<Slice>;
    /// Whether the samples come from an actual solution of the equations.
    fn is_solution(&self) -> bool;
}

fn check_times(times: &[f64]) -> Result<()> {
    if times.is_empty() {
        return Err(Error::Param("no time samples".into()));
    }
    if times.iter().any(|t| !t.is_finite()) || times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Param(
            "times must be finite and strictly increasing".into(),
        ));
    }
    Ok(())
}

/// Velocity and pressure stored for every sampled time.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeField {
    grid: Grid3,
    times: Vec<f64>,
    velocity: Vec<VectorField>,
    pressure: Vec<ScalarField>,
    solution: bool,
}

impl SpaceTimeField {
    pub fn new(
        times: Vec<f64>,
        velocity: Vec<VectorField>,
        pressure: Vec<ScalarField>,
        solution: bool,
    ) -> Result<Self> {
        check_times(&times)?;
        if velocity.len() != times.len() || pressure.len() != times.len() {
            return Err(Error::Param(format!(
                "{} times, {} velocities, {} pressures",
                times.len(),
                velocity.len(),
                pressure.len()
            )));
        }
        let grid = *velocity[0].grid();
        for (u, p) in velocity.iter().zip(&pressure) {
            grid.check_same(u.grid())?;
            grid.check_same(p.grid())?;
        }
        Ok(Self {
            grid,
            times,
            velocity,
            pressure,
            solution,
        })
    }

    /// Materializes every slice of a source.
    pub fn from_source(src: &dyn FlowSource) -> Result<Self> {
        let mut velocity = Vec::with_capacity(src.times().len());
        let mut pressure = Vec::with_capacity(src.times().len());
        for k in 0..src.times().len() {
            let s = src.slice(k)?;
            velocity.push(s.velocity);
            pressure.push(s.pressure);
        }
        Self::new(src.times().to_vec(), velocity, pressure, src.is_solution())
    }

    pub fn velocity(&self, k: usize) -> &VectorField {
        &self.velocity[k]
    }

    pub fn pressure(&self, k: usize) -> &ScalarField {
        &self.pressure[k]
    }
}

impl FlowSource for SpaceTimeField {
    fn grid(&self) -> &Grid3 {
        &self.grid
    }
    fn times(&self) -> &[f64] {
        &self.times
    }
    fn slice(&self, k: usize) -> Result<Slice> {
        if k >= self.times.len() {
            return Err(Error::Param(format!("slice {k} out of range")));
        }
        Ok(Slice {
            t: self.times[k],
            velocity: self.velocity[k].clone(),
            pressure: self.pressure[k].clone(),
        })
    }
    fn is_solution(&self) -> bool {
        self.solution
    }
}

/// A flow known in closed form.
pub trait AnalyticFlow: Sync {
    fn velocity(&self, t: f64, x: [f64; 3]) -> [f64; 3];
    fn pressure(&self, t: f64, x: [f64; 3]) -> f64;
    /// Time derivative of the velocity.
    fn dudt(&self, t: f64, x: [f64; 3]) -> [f64; 3];
    fn is_solution(&self) -> bool {
        true
    }
}

impl<F: AnalyticFlow + ?Sized> AnalyticFlow for &F {
    fn velocity(&self, t: f64, x: [f64; 3]) -> [f64; 3] {
        (**self).velocity(t, x)
    }
    fn pressure(&self, t: f64, x: [f64; 3]) -> f64 {
        (**self).pressure(t, x)
    }
    fn dudt(&self, t: f64, x: [f64; 3]) -> [f64; 3] {
        (**self).dudt(t, x)
    }
    fn is_solution(&self) -> bool {
        (**self).is_solution()
    }
}

/// Pressure used when sampling an analytic flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PressureMode {
    Analytic,
    /// Recovered from the sampled velocity on the periodic box.
    FromVelocity,
}

/// An analytic flow evaluated on a grid when a slice is requested.
pub struct SampledFlow<F> {
    flow: F,
    grid: Grid3,
    times: Vec<f64>,
    pressure: PressureMode,
}

impl<F: AnalyticFlow> SampledFlow<F> {
    pub fn new(flow: F, grid: Grid3, times: Vec<f64>) -> Result<Self> {
        check_times(&times)?;
        Ok(Self {
            flow,
            grid,
            times,
            pressure: PressureMode::Analytic,
        })
    }

    pub fn with_pressure(mut self, mode: PressureMode) -> Self {
        self.pressure = mode;
        self
    }

    pub fn flow(&self) -> &F {
        &self.flow
    }
}

impl<F: AnalyticFlow> FlowSource for SampledFlow<F> {
    fn grid(&self) -> &Grid3 {
        &self.grid
    }
    fn times(&self) -> &[f64] {
        &self.times
    }
    fn slice(&self, k: usize) -> Result<Slice> {
        let t = *self
            .times
            .get(k)
            .ok_or_else(|| Error::Param(format!("slice {k} out of range")))?;
        let velocity = VectorField::from_fn(self.grid, |x| self.flow.velocity(t, x))?;
        let pressure = match self.pressure {
            PressureMode::Analytic => {
                ScalarField::from_fn(self.grid, |x| self.flow.pressure(t, x))?
            }
            PressureMode::FromVelocity => grid::pressure_from_velocity(&velocity),
        };
        Ok(Slice {
            t,
            velocity,
            pressure,
        })
    }
    fn is_solution(&self) -> bool {
        self.flow.is_solution()
    }
}

/// Evenly spaced times `t0, ..., t1` (inclusive).
pub fn linspace(t0: f64, t1: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![t0];
    }
    (0..count)
        .map(|i| t0 + (t1 - t0) * i as f64 / (count - 1) as f64)
        .collect()
}

pub const MANIFEST: &str = "manifest.txt";

fn slice_paths(dir: &Path, k: usize) -> (PathBuf, PathBuf) {
    (
        dir.join(format!("slice_{k:04}.u.bin")),
        dir.join(format!("slice_{k:04}.p.bin")),
    )
}

/// Writes every slice of `src` plus a `key=value` manifest.
pub fn write_dataset(dir: impl AsRef<Path>, kind: &str, src: &dyn FlowSource) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for k in 0..src.times().len() {
        let s = src.slice(k)?;
        let (u, p) = slice_paths(dir, k);
        io::write_vector(&u, &s.velocity)?;
        io::write_scalar(&p, &s.pressure)?;
    }
    let g = src.grid();
    let mut m = String::new();
    let times: Vec<String> = src.times().iter().map(|t| format!("{t:e}")).collect();
    writeln!(m, "kind={kind}").unwrap();
    writeln!(m, "n={}", g.n()).unwrap();
    writeln!(m, "L={:e}", g.half_width()).unwrap();
    writeln!(m, "cell_centered={}", g.cell_centered()).unwrap();
    writeln!(m, "solution={}", src.is_solution()).unwrap();
    writeln!(m, "times={}", times.join(",")).unwrap();
    let path = dir.join(MANIFEST);
    fs::write(&path, m).map_err(|e| Error::io(&path, e))
}

/// A dataset directory read lazily, one slice per request.
#[derive(Debug, Clone)]
pub struct DatasetSource {
    dir: PathBuf,
    kind: String,
    grid: Grid3,
    times: Vec<f64>,
    solution: bool,
}

impl DatasetSource {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut entries = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Format {
                path: path.clone(),
                offset: lineno as u64,
                reason: format!("line {} is not key=value", lineno + 1),
            })?;
            entries.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| {
            entries.get(k).ok_or_else(|| Error::Format {
                path: path.clone(),
                offset: 0,
                reason: format!("manifest lacks '{k}'"),
            })
        };
        let bad = |k: &str| Error::Format {
            path: path.clone(),
            offset: 0,
            reason: format!("manifest value for '{k}' is malformed"),
        };
        let n: usize = get("n")?.parse().map_err(|_| bad("n"))?;
        let l: f64 = get("L")?.parse().map_err(|_| bad("L"))?;
        let cc: bool = match entries.get("cell_centered") {
            Some(v) => v.parse().map_err(|_| bad("cell_centered"))?,
            None => true,
        };
        let solution: bool = get("solution")?.parse().map_err(|_| bad("solution"))?;
        let times: Vec<f64> = get("times")?
            .split(',')
            .map(|t| t.trim().parse().map_err(|_| bad("times")))
            .collect::<Result<_>>()?;
        check_times(&times)?;
        Ok(Self {
            kind: get("kind")?.clone(),
            grid: Grid3::with_offset(n, l, cc)?,
            dir,
            times,
            solution,
        })
    }

    pub fn kind(&self) -> &str {
        &self.kind
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

impl FlowSource for DatasetSource {
    fn grid(&self) -> &Grid3 {
        &self.grid
    }
    fn times(&self) -> &[f64] {
        &self.times
    }
    fn slice(&self, k: usize) -> Result<Slice> {
        let t = *self
            .times
            .get(k)
            .ok_or_else(|| Error::Param(format!("slice {k} out of range")))?;
        let (up, pp) = slice_paths(&self.dir, k);
        let u = io::read_field(&up)?;
        let p = io::read_field(&pp)?;
        self.grid.check_same(&u.grid)?;
        self.grid.check_same(&p.grid)?;
        Ok(Slice {
            t,
            velocity: u.into_vector()?,
            pressure: p.into_scalar()?,
        })
    }
    fn is_solution(&self) -> bool {
        self.solution
    }
}
