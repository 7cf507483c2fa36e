//! Run configuration and the verification suite.
//!
//! Every check carries an id, a short descriptive anchor naming the
//! statement it tests, a status, named measured values and the tolerance it
//! was judged against. Reports serialize to JSON, a text table and CSV, all
//! byte-stable for a fixed configuration.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::energy_measure::{
    self, concentration_dimension, energy_density, local_dimension, Atom, BallMass, Envelope,
    GaussianBump, MeasureApprox, ScaledMeasure,
};
use crate::error::{Error, Result};
use crate::flow::{self, BeltramiAbc, Constant, Scaled, Scheme, ShearMode};
use crate::grid::{self, Grid3, ScalarField, VectorField};
use crate::local_energy::{self, ParabolicCylinder, TimeRamp, Verdict};
use crate::norms::{self, dyadic_times, layer_cake_bound_check, LpSymbol, TimeSeries};
use crate::profile::{self, fit_loglog, ScalingReport, ScanOptions};
use crate::spacetime::{linspace, DatasetSource, SampledFlow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Full,
    Quick,
}

impl FromStr for Scale {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Scale::Full),
            "quick" => Ok(Scale::Quick),
            _ => Err(Error::Config(format!(
                "scale must be full or quick, got {s:?}"
            ))),
        }
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scale::Full => "full",
            Scale::Quick => "quick",
        })
    }
}

/// Named tolerances and their defaults.
pub const DEFAULT_TOLERANCES: &[(&str, f64)] = &[
    ("bmo_ratio", 2.0),
    ("constant_forms", 0.01),
    ("dim_atom", 0.1),
    ("dim_lebesgue_concentration", 0.2),
    ("dim_lebesgue_local", 0.1),
    ("dim_tube_concentration", 0.2),
    ("dim_tube_local", 0.1),
    ("global_residual", 1e-6),
    ("heat_balance", 0.01),
    ("invariant_slope", 0.3),
    ("ladder_dimension", 0.1),
    ("layer_borderline", 0.5),
    ("leray", 1e-12),
    ("linear_growth_spread", 0.15),
    ("linf_margin", 0.1),
    ("local_residual", 0.01),
    ("quadrature", 1e-10),
    ("riesz", 1e-10),
    ("roundtrip", 1e-12),
    ("scaling_invariance", 0.02),
    ("slope_band", 0.1),
    ("stepper_ratio", 0.5),
];

/// Flat `key = value` configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Points per axis of the profile scan.
    pub grid: usize,
    pub padding: f64,
    pub eps0: f64,
    /// Ball sampler for field norms; `None` uses the grid default.
    pub sampler: Option<String>,
    pub tolerances: BTreeMap<String, f64>,
    pub out: Option<PathBuf>,
    /// Optional dataset directory checked by the suite.
    pub data: Option<PathBuf>,
    pub seed: u64,
    pub scale: Scale,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            grid: 128,
            padding: profile::DEFAULT_PADDING,
            eps0: local_energy::DEFAULT_EPS0,
            sampler: None,
            tolerances: DEFAULT_TOLERANCES
                .iter()
                .map(|(k, v)| (k.to_string(), *v))
                .collect(),
            out: None,
            data: None,
            seed: 1,
            scale: Scale::Full,
        }
    }
}

impl RunConfig {
    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected key = value, got {raw:?}",
                    no + 1
                )));
            };
            cfg.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", no + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Sets one key; unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("invalid value {v:?} for {key}")))
        }
        match key {
            "grid" => {
                let n: usize = num(key, value)?;
                if n < 8 || !n.is_power_of_two() {
                    return Err(Error::Config(format!(
                        "grid must be a power of two >= 8, got {n}"
                    )));
                }
                self.grid = n;
            }
            "padding" => {
                let p: f64 = num(key, value)?;
                if !(p >= 1.0 && p.is_finite()) {
                    return Err(Error::Config(format!(
                        "padding must be at least 1, got {p}"
                    )));
                }
                self.padding = p;
            }
            "eps0" => {
                let e: f64 = num(key, value)?;
                if !(e >= 0.0 && e.is_finite()) {
                    return Err(Error::Config(format!("eps0 must be nonnegative, got {e}")));
                }
                self.eps0 = e;
            }
            "sampler" => {
                norms::BallSampler::from_str(value)?;
                self.sampler = Some(value.to_string());
            }
            "out" => self.out = Some(PathBuf::from(value)),
            "data" => self.data = Some(PathBuf::from(value)),
            "seed" => self.seed = num(key, value)?,
            "scale" => self.scale = value.parse()?,
            _ => {
                let Some(name) = key.strip_prefix("tol.") else {
                    return Err(Error::Config(format!("unknown key {key:?}")));
                };
                if !self.tolerances.contains_key(name) {
                    return Err(Error::Config(format!("unknown tolerance {name:?}")));
                }
                let v: f64 = num(key, value)?;
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(Error::Config(format!(
                        "tolerance {name} must be nonnegative"
                    )));
                }
                self.tolerances.insert(name.to_string(), v);
            }
        }
        Ok(())
    }

    pub fn tol(&self, name: &str) -> f64 {
        *self
            .tolerances
            .get(name)
            .unwrap_or_else(|| panic!("no tolerance named {name}"))
    }

    /// Canonical `key = value` listing, recorded in every report.
    pub fn entries(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("grid".into(), self.grid.to_string());
        m.insert("padding".into(), self.padding.to_string());
        m.insert("eps0".into(), self.eps0.to_string());
        m.insert("seed".into(), self.seed.to_string());
        m.insert("scale".into(), self.scale.to_string());
        if let Some(s) = &self.sampler {
            m.insert("sampler".into(), s.clone());
        }
        if let Some(d) = &self.data {
            m.insert("data".into(), d.display().to_string());
        }
        for (k, v) in &self.tolerances {
            m.insert(format!("tol.{k}"), v.to_string());
        }
        m
    }

    fn sizes(&self) -> Sizes {
        match self.scale {
            Scale::Full => Sizes {
                scan: self.grid,
                line: 4096,
                global: (16, 1025),
                local: (64, 32),
                constant: 64,
                scaling: 64,
                slopes: 64,
                dims: 64,
                ladder: 256,
                stepper: 16,
            },
            Scale::Quick => Sizes {
                scan: 32,
                line: 512,
                global: (8, 65),
                local: (16, 16),
                constant: 16,
                scaling: 16,
                slopes: 32,
                dims: 64,
                ladder: 64,
                stepper: 8,
            },
        }
    }
}

struct Sizes {
    scan: usize,
    line: usize,
    global: (usize, usize),
    local: (usize, usize),
    constant: usize,
    scaling: usize,
    slopes: usize,
    dims: usize,
    ladder: usize,
    stepper: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    Info,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Info => "INFO",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub id: String,
    pub anchor: String,
    pub status: Status,
    #[serde(with = "finite_map")]
    pub values: BTreeMap<String, f64>,
    pub tolerance: String,
}

impl Check {
    pub fn new(id: &str, anchor: &str) -> Self {
        Self {
            id: id.to_string(),
            anchor: anchor.to_string(),
            status: Status::Info,
            values: BTreeMap::new(),
            tolerance: String::new(),
        }
    }

    pub fn value(mut self, key: &str, v: f64) -> Self {
        self.values.insert(key.to_string(), v);
        self
    }

    /// Judges the check; `tolerance` describes the criterion.
    pub fn judge(mut self, pass: bool, tolerance: impl Into<String>) -> Self {
        self.status = if pass { Status::Pass } else { Status::Fail };
        self.tolerance = tolerance.into();
        self
    }

    pub fn info(mut self, note: impl Into<String>) -> Self {
        self.status = Status::Info;
        self.tolerance = note.into();
        self
    }

    /// One human-readable line.
    pub fn line(&self) -> String {
        let vals: Vec<String> = self
            .values
            .iter()
            .map(|(k, v)| format!("{k}={}", fmt_num(*v)))
            .collect();
        format!(
            "{} {} [{}] {} ({})",
            self.status,
            self.id,
            self.anchor,
            vals.join(" "),
            self.tolerance
        )
    }
}

/// Non-finite values are written as the strings `inf`, `-inf` and `nan`.
mod finite_map {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Num {
        F(f64),
        S(String),
    }

    pub fn serialize<S: Serializer>(m: &BTreeMap<String, f64>, s: S) -> Result<S::Ok, S::Error> {
        let out: BTreeMap<&String, Num> = m
            .iter()
            .map(|(k, &v)| {
                let n = if v.is_finite() {
                    Num::F(v)
                } else if v.is_nan() {
                    Num::S("nan".into())
                } else if v > 0.0 {
                    Num::S("inf".into())
                } else {
                    Num::S("-inf".into())
                };
                (k, n)
            })
            .collect();
        out.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<String, f64>, D::Error> {
        let raw = BTreeMap::<String, Num>::deserialize(d)?;
        raw.into_iter()
            .map(|(k, n)| {
                let v = match n {
                    Num::F(v) => v,
                    Num::S(s) => match s.as_str() {
                        "inf" => f64::INFINITY,
                        "-inf" => f64::NEG_INFINITY,
                        "nan" => f64::NAN,
                        other => {
                            return Err(serde::de::Error::custom(format!("bad number {other:?}")))
                        }
                    },
                };
                Ok((k, v))
            })
            .collect()
    }
}

fn fmt_num(v: f64) -> String {
    if v.is_finite() && v != 0.0 && (v.abs() < 1e-3 || v.abs() >= 1e5) {
        format!("{v:.6e}")
    } else if v.is_finite() {
        format!("{v:.6}")
    } else {
        format!("{v}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub pass: usize,
    pub fail: usize,
    pub info: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub seed: u64,
    pub config: BTreeMap<String, String>,
    pub checks: Vec<Check>,
}

impl VerificationReport {
    pub fn new(cfg: &RunConfig) -> Self {
        Self {
            seed: cfg.seed,
            config: cfg.entries(),
            checks: Vec::new(),
        }
    }

    /// Appends a check; ids must be unique.
    pub fn push(&mut self, c: Check) -> Result<()> {
        if self.checks.iter().any(|o| o.id == c.id) {
            return Err(Error::Param(format!("duplicate check id {}", c.id)));
        }
        self.checks.push(c);
        Ok(())
    }

    pub fn extend(&mut self, cs: Vec<Check>) -> Result<()> {
        cs.into_iter().try_for_each(|c| self.push(c))
    }

    pub fn summary(&self) -> Summary {
        let count = |s: Status| self.checks.iter().filter(|c| c.status == s).count();
        Summary {
            pass: count(Status::Pass),
            fail: count(Status::Fail),
            info: count(Status::Info),
        }
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != Status::Fail)
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Out<'a> {
            seed: u64,
            config: &'a BTreeMap<String, String>,
            checks: &'a [Check],
            summary: Summary,
        }
        let out = Out {
            seed: self.seed,
            config: &self.config,
            checks: &self.checks,
            summary: self.summary(),
        };
        let mut s = serde_json::to_string_pretty(&out).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format {
            path: PathBuf::from("<report>"),
            offset: e.column() as u64,
            reason: e.to_string(),
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "seed {}", self.seed);
        for (k, v) in &self.config {
            let _ = writeln!(s, "  {k} = {v}");
        }
        let wid = self
            .checks
            .iter()
            .map(|c| c.id.len())
            .max()
            .unwrap_or(2)
            .max(2);
        let wan = self
            .checks
            .iter()
            .map(|c| c.anchor.len())
            .max()
            .unwrap_or(6)
            .max(6);
        let _ = writeln!(
            s,
            "{:<6} {:<wid$} {:<wan$} values / tolerance",
            "status", "id", "anchor"
        );
        for c in &self.checks {
            let vals: Vec<String> = c
                .values
                .iter()
                .map(|(k, v)| format!("{k}={}", fmt_num(*v)))
                .collect();
            let _ = writeln!(
                s,
                "{:<6} {:<wid$} {:<wan$} {} | {}",
                c.status.to_string(),
                c.id,
                c.anchor,
                vals.join(" "),
                c.tolerance
            );
        }
        let sm = self.summary();
        let _ = writeln!(s, "{} pass, {} fail, {} info", sm.pass, sm.fail, sm.info);
        s
    }

    /// One row per measured value: `id,status,anchor,key,value,tolerance`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("id,status,anchor,key,value,tolerance\n");
        for c in &self.checks {
            let status = c.status.to_string();
            if c.values.is_empty() {
                let _ = writeln!(
                    s,
                    "{},{},{},,,{}",
                    csv_field(&c.id),
                    status,
                    csv_field(&c.anchor),
                    csv_field(&c.tolerance)
                );
            }
            for (k, v) in &c.values {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{}",
                    csv_field(&c.id),
                    status,
                    csv_field(&c.anchor),
                    csv_field(k),
                    v,
                    csv_field(&c.tolerance)
                );
            }
        }
        s
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Text,
    Csv,
}

impl FromStr for Format {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(Format::Json),
            "text" | "txt" => Ok(Format::Text),
            "csv" => Ok(Format::Csv),
            _ => Err(Error::Config(format!("unknown report format {s:?}"))),
        }
    }
}

impl Format {
    pub fn extension(&self) -> &'static str {
        match self {
            Format::Json => "json",
            Format::Text => "txt",
            Format::Csv => "csv",
        }
    }
}

pub fn render(report: &VerificationReport, format: Format) -> String {
    match format {
        Format::Json => report.to_json(),
        Format::Text => report.to_text(),
        Format::Csv => report.to_csv(),
    }
}

/// Writes `report.<ext>` for each format into `dir` and returns the paths.
pub fn emit(
    report: &VerificationReport,
    formats: &[Format],
    dir: impl AsRef<Path>,
) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    formats
        .iter()
        .map(|f| {
            let path = dir.join(format!("report.{}", f.extension()));
            std::fs::write(&path, render(report, *f)).map_err(|e| Error::io(&path, e))?;
            Ok(path)
        })
        .collect()
}

const ANCHOR_SCALING: &str = "self-similar profile: energy, dissipation, sup-norm and BMO scaling";
const ANCHOR_CLOSED: &str =
    "closed-form radial integrals and the double Riesz transform at the origin";
const ANCHOR_LAYER: &str = "layer-cake bound for weak-L2-in-time BMO series";
const ANCHOR_BESOV: &str = "ln|x| in B^0_{inf,inf} with linearly growing blocks";
const ANCHOR_ENERGY: &str = "energy equality for exact solutions, global and local";
const ANCHOR_INVARIANTS: &str = "scale-invariant quantities on parabolic cylinders";
const ANCHOR_DIMS: &str = "local and concentration dimension of the energy measure";
const ANCHOR_LADDER: &str = "linear upper bound on the energy of small balls";
const ANCHOR_ORACLES: &str = "spectral operator identities and stepper order";
const ANCHOR_CKN: &str = "smallness of C + D certifies regularity";
const ANCHOR_LEDGER: &str = "decay estimates for the cubic and pressure terms";
const ANCHOR_DATA: &str = "energy equality on a stored dataset";

/// Exponent of the profile under test.
pub const SCAN_S: f64 = 1.0 / 3.0;

/// `2^-2, ..., 2^-6`.
pub fn scan_deltas() -> Vec<f64> {
    (2..=6).map(|k| 0.5f64.powi(k)).collect()
}

pub fn profile_scan(cfg: &RunConfig) -> Result<ScalingReport> {
    let opts = ScanOptions {
        n: cfg.sizes().scan,
        padding: cfg.padding,
        ..ScanOptions::default()
    };
    profile::scan_scaling(SCAN_S, &scan_deltas(), &opts)
}

/// Fitted power laws of the profile scan.
pub fn scaling_checks(cfg: &RunConfig, scan: &ScalingReport) -> Vec<Check> {
    let band = cfg.tol("slope_band");
    let l2 = scan.l2_slope.fit;
    let h1 = scan.h1_slope.fit;
    let growth = -scan.linf_slope.fit.slope;
    let need = 1.0 + scan.s / 2.0 - cfg.tol("linf_margin");
    let ratio = scan.bmo_scaled_ratio;
    vec![
        Check::new("scaling.l2_slope", ANCHOR_SCALING)
            .value("slope", l2.slope)
            .value("fit_residual", l2.residual)
            .judge(
                (l2.slope - 0.5).abs() <= band,
                format!("slope in 0.5 +- {band}"),
            ),
        Check::new("scaling.h1_slope", ANCHOR_SCALING)
            .value("slope", h1.slope)
            .value("fit_residual", h1.residual)
            .judge(
                (h1.slope + 0.5).abs() <= band,
                format!("slope in -0.5 +- {band}"),
            ),
        Check::new("scaling.linf_exponent", ANCHOR_SCALING)
            .value("growth_exponent", growth)
            .value("oracle_growth_exponent", -scan.oracle_linf_slope.slope)
            .value("required", need)
            .judge(
                growth >= need,
                format!("growth exponent >= 1 + s/2 - {}", cfg.tol("linf_margin")),
            ),
        Check::new("scaling.bmo_bounded", ANCHOR_SCALING)
            .value("sup", scan.bmo_scaled_sup)
            .value("max_over_min", ratio)
            .judge(
                scan.bmo_scaled_sup.is_finite() && ratio <= cfg.tol("bmo_ratio"),
                format!("sqrt(T-t) ||u||_BMO varies <= {}x", cfg.tol("bmo_ratio")),
            ),
    ]
}

/// Quadrature against the closed-form bounds on a 5 x 3 sweep.
pub fn closed_form_checks(cfg: &RunConfig) -> Result<Vec<Check>> {
    let acc = cfg.tol("quadrature");
    let ss = [0.1, 0.2, 1.0 / 3.0, 0.45, 0.6];
    let ds = [0.25, 0.0625, 0.015625];
    let mut out = Vec::new();
    for (id, f) in [
        (
            "closed_forms.i1",
            profile::oracle_i1 as fn(f64, f64) -> Result<profile::OracleValue>,
        ),
        ("closed_forms.i2", profile::oracle_i2),
    ] {
        let mut all = true;
        let mut margin = f64::INFINITY;
        let mut err = 0.0f64;
        for &s in &ss {
            for &d in &ds {
                let v = f(s, d)?;
                let b = v.bound.expect("bounded oracle");
                all &= v.within_bound() && v.error <= acc * v.value.abs().max(1.0);
                margin = margin.min((b - v.value) / b);
                err = err.max(v.error);
            }
        }
        out.push(
            Check::new(id, ANCHOR_CLOSED)
                .value("min_relative_margin", margin)
                .value("max_quadrature_error", err)
                .judge(
                    all,
                    format!("value < bound strictly on 15 cases, quadrature error <= {acc}"),
                ),
        );
    }
    let mut all = true;
    let mut margin = f64::INFINITY;
    let mut err = 0.0f64;
    for &s in &ss {
        for &d in &ds {
            let r = profile::riesz_origin_lower_bound(s, d)?;
            all &= r.holds() && r.error <= acc * r.numeric.abs().max(1.0);
            margin = margin.min((r.numeric - r.bound) / r.bound);
            err = err.max(r.error);
        }
    }
    out.push(
        Check::new("closed_forms.riesz", ANCHOR_CLOSED)
            .value("min_relative_margin", margin)
            .value("max_quadrature_error", err)
            .judge(
                all,
                format!("numeric >= bound on 15 cases, quadrature error <= {acc}"),
            ),
    );
    Ok(out)
}

/// Random windows `(t, r)` inside `[t0, t1]`, seeded.
fn random_windows(rng: &mut ChaCha8Rng, t0: f64, t1: f64, count: usize) -> Vec<(f64, f64)> {
    let span = t1 - t0;
    (0..count)
        .map(|_| {
            // log-uniform heights and gaps below the top of the series
            let r2 = span * 10f64.powf(rng.gen_range(-4.0..-0.3));
            let gap = (span - r2) * 10f64.powf(rng.gen_range(-5.0..0.0));
            let t = t1 - gap;
            (t, r2.sqrt())
        })
        .collect()
}

/// Layer-cake bound on seeded random windows.
pub fn layer_cake_checks(cfg: &RunConfig, scan: &ScalingReport) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let t_blowup = 1.0;
    let times = dyadic_times(0.0, t_blowup, 20, 8);
    let (t0, t1) = (times[0], times[times.len() - 1]);

    // ||u(t)||_BMO = B(delta) / delta with B interpolated in ln delta
    let mut recs: Vec<(f64, f64)> = scan
        .records
        .iter()
        .map(|r| (r.delta.ln(), r.bmo_scaled))
        .collect();
    recs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let b_of = |ld: f64| -> f64 {
        let k = recs.partition_point(|r| r.0 <= ld).clamp(1, recs.len() - 1);
        let (x0, y0) = recs[k - 1];
        let (x1, y1) = recs[k];
        let w = ((ld - x0) / (x1 - x0)).clamp(0.0, 1.0);
        y0 + w * (y1 - y0)
    };
    let profile_series = TimeSeries::from_fn(times.clone(), |t| {
        let delta = (t_blowup - t).sqrt();
        b_of(delta.ln()) / delta
    })?;
    let borderline = TimeSeries::from_fn(times, |t| (t_blowup - t).powf(-0.5))?;

    let mut out = Vec::new();
    for (id, series, need_ratio) in [
        ("layer_cake.profile_series", &profile_series, None),
        (
            "layer_cake.borderline",
            &borderline,
            Some(cfg.tol("layer_borderline")),
        ),
    ] {
        let windows = random_windows(&mut rng, t0, t1, 100);
        let mut all = true;
        let mut best = 0.0f64;
        for (t, r) in windows {
            let lc = layer_cake_bound_check(series, t, r, None)?;
            all &= lc.holds();
            best = best.max(lc.ratio());
        }
        let pass = all && need_ratio.map_or(true, |q| best >= q);
        let tol = match need_ratio {
            Some(q) => format!("lhs <= 2*3^(3/4) M^(3/2) on 100 windows, max lhs/rhs >= {q}"),
            None => "lhs <= 2*3^(3/4) M^(3/2) on 100 windows".to_string(),
        };
        out.push(
            Check::new(id, ANCHOR_LAYER)
                .value("max_ratio", best)
                .value("windows", 100.0)
                .judge(pass, tol),
        );
    }
    Ok(out)
}

/// Block sup norms of `ln|x|` on the line.
pub fn besov_checks(cfg: &RunConfig) -> Result<Vec<Check>> {
    let n = cfg.sizes().line;
    let (jlo, jhi) = match cfg.scale {
        Scale::Full => (4, 9),
        Scale::Quick => (3, 6),
    };
    let spread_tol = cfg.tol("linear_growth_spread");
    let f = |x: f64| x.abs().ln();
    let low = norms::line_block_profile(f, n, PI, jhi, LpSymbol::LowPass)?;
    let (mean, spread) = norms::linear_growth_spread(&low, jlo, jhi)?;
    let ann = norms::line_block_profile(f, n, PI, jhi, LpSymbol::Annulus)?;
    let (amean, aspread) = norms::linear_growth_spread(&ann, jlo, jhi)?;
    Ok(vec![
        Check::new("besov.log_blocks", ANCHOR_BESOV)
            .value("n", n as f64)
            .value("mean_sup_over_j", mean)
            .value("relative_spread", spread)
            .judge(
                spread <= spread_tol,
                format!(
                    "low-pass ||S_j ln|x|||_inf / j spread <= {spread_tol} for j in [{jlo}, {jhi}]"
                ),
            ),
        Check::new("besov.annulus_blocks", ANCHOR_BESOV)
            .value("mean_sup_over_j", amean)
            .value("relative_spread", aspread)
            .info("annulus blocks of ln|x| stay bounded instead of growing"),
    ])
}

/// Global and local energy equalities on the Beltrami flow.
pub fn energy_checks(cfg: &RunConfig) -> Result<Vec<Check>> {
    let sz = cfg.sizes();
    let b = BeltramiAbc::default();
    let (n, slices) = sz.global;
    let src = SampledFlow::new(b, Grid3::new(n, PI)?, linspace(0.0, 1.0, slices))?;
    let glob = energy_measure::global_energy_residual(&src)?;
    let gtol = cfg.tol("global_residual");

    let (n, slices) = sz.local;
    let g = Grid3::new(n, PI)?;
    let src = SampledFlow::new(b, g, linspace(0.0, 1.0, slices))?;
    let bump = GaussianBump {
        center: [0.0; 3],
        width: 0.6,
        radius: 2.4,
        ramp: TimeRamp {
            start: 0.0,
            end: 0.5,
        },
        t_end: 1.0,
    };
    let loc = energy_measure::local_energy_residual(&src, &bump)?;
    let ltol = cfg.tol("local_residual");

    // heat-kernel test function of Q_r inside Q_rho
    let rho: f64 = 2.4;
    let r = 0.5;
    let t_top = rho * rho;
    let steps = ((t_top / (r * r / 8.0)).ceil() as usize).max(slices);
    let src = SampledFlow::new(b, g, linspace(0.0, t_top, steps + 1))?;
    let q = ParabolicCylinder::new(t_top, [0.1, 0.0, -0.2], r)?;
    let hb = local_energy::heat_test_balance(&src, &q, &q.with_radius(rho)?)?;
    let htol = cfg.tol("heat_balance");

    Ok(vec![
        Check::new("energy.global_residual", ANCHOR_ENERGY)
            .value("slices", glob.times.len() as f64)
            .value("max_relative_residual", glob.max_relative())
            .judge(
                glob.max_relative() <= gtol,
                format!("|residual(t)| / E0 <= {gtol}"),
            ),
        Check::new("energy.local_residual", ANCHOR_ENERGY)
            .value("n", n as f64)
            .value("slices", slices as f64)
            .value("lhs", loc.terms.lhs())
            .value("rhs", loc.terms.rhs())
            .value("relative_residual", loc.relative)
            .judge(loc.relative <= ltol, format!("|lhs - rhs| / max <= {ltol}")),
        Check::new("energy.heat_kernel_balance", ANCHOR_ENERGY)
            .value("lhs", hb.terms.lhs())
            .value("heat", hb.terms.heat)
            .value("flux", hb.terms.flux)
            .value("relative_residual", hb.relative_residual)
            .judge(
                hb.relative_residual <= htol,
                format!("|lhs - rhs| / max <= {htol}"),
            ),
    ])
}

/// Closed forms, scaling invariance and small-radius slopes of A, B, C, D.
pub fn invariant_checks(cfg: &RunConfig) -> Result<Vec<Check>> {
    let sz = cfg.sizes();
    let mut out = Vec::new();

    let g = Grid3::new(sz.constant, 1.0)?;
    let c = Constant {
        velocity: [1.0, 0.0, 0.0],
        pressure: 0.0,
    };
    let src = SampledFlow::new(c, g, linspace(0.0, 1.0, 9))?;
    let r: f64 = 0.5;
    let v = local_energy::invariants(&src, &ParabolicCylinder::new(1.0, [0.0; 3], r)?)?;
    let a_exact = 4.0 * PI / 3.0 * r * r;
    let c_exact = 4.0 * PI / 3.0 * r.powi(3);
    let (ea, ec) = (
        (v.a - a_exact).abs() / a_exact,
        (v.c - c_exact).abs() / c_exact,
    );
    let ctol = cfg.tol("constant_forms");
    out.push(
        Check::new("invariants.constant_forms", ANCHOR_INVARIANTS)
            .value("a_relative_error", ea)
            .value("c_relative_error", ec)
            .value("b", v.b)
            .value("d", v.d)
            .judge(
                ea <= ctol && ec <= ctol && v.b.abs() < 1e-12 && v.d == 0.0,
                format!("A, C within {ctol}, B = D = 0"),
            ),
    );

    let g = Grid3::new(sz.scaling, PI)?;
    let shear = ShearMode {
        amplitude: 1.0,
        wavenumber: 1.0,
    };
    let q = ParabolicCylinder::new(1.0, [0.3, 0.2, 0.0], 1.0)?;
    let chk = local_energy::scaling_invariance_check(&shear, &g, &linspace(0.0, 1.0, 9), &q, 0.5)?;
    let stol = cfg.tol("scaling_invariance");
    out.push(
        Check::new("invariants.scaling_half", ANCHOR_INVARIANTS)
            .value("max_relative_difference", chk.max_relative_difference)
            .value("a_before", chk.before.a)
            .value("a_after", chk.after.a)
            .judge(
                chk.max_relative_difference <= stol,
                format!("lambda = 1/2 changes A..D by <= {stol}"),
            ),
    );

    // smooth field: quantities over shrinking concentric cylinders
    let g = Grid3::new(sz.slopes, PI)?;
    let src = SampledFlow::new(BeltramiAbc::default(), g, linspace(0.96, 1.0, 65))?;
    let radii = [0.2, 0.1, 0.05];
    let cyls: Vec<ParabolicCylinder> = radii
        .iter()
        .map(|&r| ParabolicCylinder::new(1.0, [0.3, -0.2, 0.1], r))
        .collect::<Result<_>>()?;
    let vals = local_energy::invariants_many(&src, &cyls)?;
    let band = cfg.tol("invariant_slope");
    for (name, pick, expected) in [
        (
            "a",
            (|q: &local_energy::InvariantQuad| q.a) as fn(&local_energy::InvariantQuad) -> f64,
            2.0,
        ),
        ("b", |q| q.b, 2.0),
        ("c", |q| q.c, 3.0),
        ("d", |q| q.d, 3.0),
    ] {
        let ys: Vec<f64> = vals.iter().map(pick).collect();
        let fit = fit_loglog(&radii, &ys)?;
        out.push(
            Check::new(&format!("invariants.slope_{name}"), ANCHOR_INVARIANTS)
                .value("slope", fit.slope)
                .value("expected", expected)
                .judge(
                    (fit.slope - expected).abs() <= band,
                    format!("slope in {expected} +- {band}"),
                ),
        );
    }
    Ok(out)
}

/// Point mass, segment and Lebesgue calibrations, and the profile ladder.
pub fn dimension_checks(cfg: &RunConfig) -> Result<Vec<Check>> {
    let sz = cfg.sizes();
    let g = Grid3::new(sz.dims, 1.0)?;
    let radii = energy_measure::default_radii(&g)?;
    let h = g.spacing();
    let on_line = [h / 2.0, h / 2.0, h / 2.0];
    let mut out = Vec::new();

    let atom = MeasureApprox::atoms_only(
        g,
        vec![Atom {
            point: on_line,
            mass: 1.0,
        }],
    )?;
    let d = local_dimension(&atom, on_line, &radii)?.slope;
    let c = concentration_dimension(&atom, 0.9)?.dimension;
    let t = cfg.tol("dim_atom");
    out.push(
        Check::new("dims.atom", ANCHOR_DIMS)
            .value("local", d)
            .value("concentration", c)
            .judge(
                d.abs() <= t && c.abs() <= t,
                format!("both within {t} of 0"),
            ),
    );

    // unit mass per unit length on the row of cells through the point
    let n = g.n();
    let mut dens = vec![0.0; g.len()];
    for i in 0..n {
        dens[g.index(i, n / 2, n / 2)] = 1.0 / (h * h * h);
    }
    let tube = MeasureApprox::new(g, dens, Vec::new())?;
    let d = local_dimension(&tube, on_line, &radii)?.slope;
    let c = concentration_dimension(&tube, 0.9)?.dimension;
    let (tl, tc) = (cfg.tol("dim_tube_local"), cfg.tol("dim_tube_concentration"));
    out.push(
        Check::new("dims.tube_local", ANCHOR_DIMS)
            .value("local", d)
            .judge((d - 1.0).abs() <= tl, format!("1 +- {tl}")),
    );
    out.push(
        Check::new("dims.tube_concentration", ANCHOR_DIMS)
            .value("concentration", c)
            .judge((c - 1.0).abs() <= tc, format!("1 +- {tc}")),
    );

    let leb = MeasureApprox::new(g, vec![1.0; g.len()], Vec::new())?;
    let d = local_dimension(&leb, [0.0; 3], &radii)?.slope;
    let c = concentration_dimension(&leb, 0.99)?.dimension;
    let (ll, lc) = (
        cfg.tol("dim_lebesgue_local"),
        cfg.tol("dim_lebesgue_concentration"),
    );
    out.push(
        Check::new("dims.lebesgue_local", ANCHOR_DIMS)
            .value("local", d)
            .judge((d - 3.0).abs() <= ll, format!("3 +- {ll}")),
    );
    out.push(
        Check::new("dims.lebesgue_concentration", ANCHOR_DIMS)
            .value("concentration", c)
            .judge((c - 3.0).abs() <= lc, format!("3 +- {lc}")),
    );

    out.extend(ladder_checks(cfg, sz.ladder)?);
    Ok(out)
}

fn ladder_checks(cfg: &RunConfig, n: usize) -> Result<Vec<Check>> {
    // each member delta^{-1} U(x / delta) comes from one unit-scale field
    let ug = profile::unit_grid(n, cfg.padding)?;
    let deltas = scan_deltas();
    let members: Vec<ScaledMeasure> = deltas
        .iter()
        .map(|&delta| {
            let p = profile::ProfileParams::with_exponent(SCAN_S, 1.0, delta)?;
            let u = profile::blowup_field_padded(&p, &ug, cfg.padding)?;
            Ok(ScaledMeasure {
                base: energy_density(&u),
                delta,
            })
        })
        .collect::<Result<_>>()?;
    let env = Envelope {
        members: members.iter().map(|m| m as &dyn BallMass).collect(),
    };
    // the [4h, L/4] fit window of the coarsest member, in physical units
    let coarse = deltas.iter().cloned().fold(0.0, f64::max);
    let radii = energy_measure::radii_ladder(
        4.0 * coarse * ug.spacing(),
        coarse * ug.half_width() / 4.0,
        8,
    )?;
    let points = [
        [0.0; 3],
        [0.005, 0.005, 0.0],
        [0.01, 0.0, 0.0],
        [0.05, 0.0, 0.0],
        [0.1, 0.1, 0.0],
    ];
    let mut min_dim = f64::INFINITY;
    let mut sup_ratio = 0.0f64;
    for est in energy_measure::local_dimensions(&env, &points, &radii)? {
        if est.masses.iter().all(|&m| m == 0.0) {
            continue;
        }
        min_dim = min_dim.min(est.slope);
        for (r, m) in est.radii.iter().zip(&est.masses) {
            sup_ratio = sup_ratio.max(m / r);
        }
    }
    let floor = 1.0 - cfg.tol("ladder_dimension");
    Ok(vec![
        Check::new("dims.ladder_linear_bound", ANCHOR_LADDER)
            .value("sup_mass_over_r", sup_ratio)
            .value("n", n as f64)
            .info("C in E(B_r(x)) <= C r over the sampled balls"),
        Check::new("dims.ladder_local_dimension", ANCHOR_LADDER)
            .value("min_local_dimension", min_dim)
            .value("points", points.len() as f64)
            .judge(
                min_dim >= floor,
                format!("fitted local dimension >= {floor} at nonzero-mass points"),
            ),
    ])
}

/// Transform, projection and Riesz identities, and second-order stepping.
pub fn oracle_checks(cfg: &RunConfig) -> Result<Vec<Check>> {
    let g = Grid3::new(32, 1.0)?;
    let f = grid::random_smooth_field(g, cfg.seed, 24, 6);
    let back = grid::inverse_transform(&grid::transform(&f));
    let rt = back.lincomb(1.0, &f, -1.0)?.max_abs() / f.max_abs();

    let v = grid::random_smooth_vector(g, cfg.seed.wrapping_add(1), 24, 6);
    let p1 = grid::leray_project(&v);
    let p2 = grid::leray_project(&p1);
    let idem = p2.lincomb(1.0, &p1, -1.0)?.max_abs() / p1.max_abs().max(f64::MIN_POSITIVE);

    // sum_i R_i R_i f = -(f - mean f)
    let mut sum = ScalarField::zeros(g);
    for axis in 0..3 {
        let rr = grid::riesz_transform(axis, &grid::riesz_transform(axis, &f)?)?;
        sum = sum.lincomb(1.0, &rr, 1.0)?;
    }
    let centered = f.map(|x| x - f.mean());
    let riesz = sum.lincomb(1.0, &centered, 1.0)?.max_abs() / centered.max_abs();

    let gs = Grid3::new(cfg.sizes().stepper, PI)?;
    let b = BeltramiAbc::default();
    let u0 = VectorField::from_fn(gs, |x| b.initial(x))?;
    let t_end: f64 = 0.4;
    let err = |dt: f64| -> Result<f64> {
        let steps = (t_end / dt).round() as usize;
        let u = flow::integrate(&u0, dt, steps, Scheme::Heun)?
            .pop()
            .expect("at least one state");
        let exact = u0.scale((-t_end).exp());
        Ok(u.lincomb(1.0, &exact, -1.0)?.max_abs())
    };
    let ratio = err(0.01)? / err(0.005)?;
    let (trt, tl, tr, ts) = (
        cfg.tol("roundtrip"),
        cfg.tol("leray"),
        cfg.tol("riesz"),
        cfg.tol("stepper_ratio"),
    );
    Ok(vec![
        Check::new("oracles.transform_roundtrip", ANCHOR_ORACLES)
            .value("relative_error", rt)
            .judge(rt <= trt, format!("<= {trt}")),
        Check::new("oracles.leray_idempotence", ANCHOR_ORACLES)
            .value("relative_error", idem)
            .judge(idem <= tl, format!("<= {tl}")),
        Check::new("oracles.riesz_composition", ANCHOR_ORACLES)
            .value("relative_error", riesz)
            .judge(riesz <= tr, format!("<= {tr}")),
        Check::new("oracles.stepper_order", ANCHOR_ORACLES)
            .value("error_ratio", ratio)
            .judge((ratio - 4.0).abs() <= ts, format!("4 +- {ts} per halving")),
    ])
}

/// Regularity verdicts over an amplitude sweep of the Beltrami flow.
pub fn ckn_checks(cfg: &RunConfig) -> Result<Vec<Check>> {
    let g = Grid3::new(16, PI)?;
    let q = ParabolicCylinder::new(0.5, [0.0; 3], 0.5)?;
    let times = linspace(0.0, 0.5, 9);
    let mut out = Vec::new();
    for (i, amp) in [0.01, 0.1, 1.0].into_iter().enumerate() {
        let f = Scaled {
            inner: BeltramiAbc::default(),
            amplitude: amp,
        };
        let src = SampledFlow::new(f, g, times.clone())?;
        let res = local_energy::ckn_test(&src, &q, cfg.eps0)?;
        let verdict = match res.verdict {
            Verdict::RegularCertified => "regular",
            Verdict::Inconclusive => "inconclusive",
        };
        out.push(
            Check::new(&format!("ckn.amplitude_{i}"), ANCHOR_CKN)
                .value("amplitude", amp)
                .value("c", res.c)
                .value("d", res.d)
                .value("eps0", cfg.eps0)
                .info(verdict),
        );
    }
    Ok(out)
}

/// Implied constants of the decay estimates on the Beltrami flow.
pub fn ledger_checks(_cfg: &RunConfig) -> Result<Vec<Check>> {
    let g = Grid3::new(32, PI)?;
    let src = SampledFlow::new(BeltramiAbc::default(), g, linspace(0.0, 1.0, 33))?;
    let q_rho = ParabolicCylinder::new(1.0, [0.0; 3], 1.0)?;
    let q_r = q_rho.with_radius(0.5)?;
    let m = local_energy::invariants(&src, &q_rho)?.a;
    let cubic = local_energy::cubic_decay_ledger(&src, &q_r, &q_rho, m)?;
    let pressure = local_energy::pressure_decay_ledger(&src, &q_r, &q_rho)?;
    let row = |id: &str, r: local_energy::LedgerRow| {
        Check::new(id, ANCHOR_LEDGER)
            .value("lhs", r.lhs)
            .value("term_1", r.terms[0])
            .value("term_2", r.terms[1])
            .value("implied_constant", r.implied_constant.unwrap_or(f64::NAN))
            .info("implied constant of the estimate")
    };
    Ok(vec![
        row("ledger.cubic", cubic),
        row("ledger.pressure", pressure),
    ])
}

/// Global energy residual of a stored dataset.
pub fn dataset_checks(dir: &Path) -> Result<Vec<Check>> {
    let src = DatasetSource::open(dir)?;
    let r = energy_measure::global_energy_residual(&src)?;
    Ok(vec![Check::new("data.energy_residual", ANCHOR_DATA)
        .value("slices", r.times.len() as f64)
        .value("max_relative_residual", r.max_relative())
        .info(format!("dataset kind {}", src.kind()))])
}

/// Runs every check in dependency order.
pub fn run_suite(cfg: &RunConfig) -> Result<VerificationReport> {
    let mut rep = VerificationReport::new(cfg);
    if let Some(dir) = &cfg.data {
        if !dir.is_dir() {
            return Err(Error::Config(format!(
                "data directory {} does not exist",
                dir.display()
            )));
        }
    }
    log::info!("suite: profile scan");
    let scan = profile_scan(cfg)?;
    rep.extend(scaling_checks(cfg, &scan))?;
    log::info!("suite: closed forms");
    rep.extend(closed_form_checks(cfg)?)?;
    log::info!("suite: layer cake");
    rep.extend(layer_cake_checks(cfg, &scan)?)?;
    log::info!("suite: block norms");
    rep.extend(besov_checks(cfg)?)?;
    log::info!("suite: energy equality");
    rep.extend(energy_checks(cfg)?)?;
    log::info!("suite: invariants");
    rep.extend(invariant_checks(cfg)?)?;
    log::info!("suite: dimensions");
    rep.extend(dimension_checks(cfg)?)?;
    log::info!("suite: oracles");
    rep.extend(oracle_checks(cfg)?)?;
    rep.extend(ckn_checks(cfg)?)?;
    rep.extend(ledger_checks(cfg)?)?;
    if let Some(dir) = &cfg.data {
        rep.extend(dataset_checks(dir)?)?;
    }
    Ok(rep)
}
