//! Command-line front end for the blow-up diagnostics library.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use nsdiag::energy_measure::{self, MeasureApprox};
use nsdiag::flow::{self, BeltramiAbc, FlowKind, FlowSpec, ShearMode, TaylorGreen};
use nsdiag::grid::{Grid3, ScalarField};
use nsdiag::local_energy::{self, ParabolicCylinder, Verdict};
use nsdiag::norms::{self, BallSampler, LpSymbol};
use nsdiag::profile::{self, ScanOptions};
use nsdiag::report::{self, Format, RunConfig};
use nsdiag::spacetime::{self, linspace, DatasetSource, FlowSource, SampledFlow};

#[derive(Parser)]
#[command(
    name = "nsdiag",
    version,
    about = "Diagnostics for self-similar blow-up profiles and suitable weak solutions"
)]
struct Cli {
    /// Flat key = value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every randomized sampler.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file for tables, or output directory for `gen` and `suite`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Configuration override `key=value`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a flow and store it as a dataset directory.
    Gen(GenArgs),
    /// Norms of the self-similar profile against the time to blow-up.
    ProfileScan(ScanArgs),
    /// Norms of a stored field.
    Norms(NormsArgs),
    /// Littlewood-Paley block norms of ln|x|.
    BesovLn(BesovArgs),
    /// A, B, C, D on parabolic cylinders of a dataset.
    Invariants(InvariantsArgs),
    /// Regularity test `C + D <= eps0` on parabolic cylinders.
    CknTest(CknArgs),
    /// Implied constants of the cubic and pressure decay estimates.
    Ledger(LedgerArgs),
    /// Local dimensions of a stored measure.
    Dims(DimsArgs),
    /// Global energy equality residual of a dataset.
    EnergyResidual(DataArgs),
    /// Run every verification check and write the report.
    Suite(SuiteArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Beltrami,
    TaylorGreen,
    Shear,
    ProfileLadder,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum)]
    kind: Kind,
    #[arg(long, default_value_t = 64)]
    grid: usize,
    /// End time of the sampled interval `[0, t]`.
    #[arg(long, default_value_t = 1.0)]
    t: f64,
    #[arg(long, default_value_t = 32)]
    slices: usize,
    /// Profile exponent for `profile-ladder`.
    #[arg(long, default_value_t = 1.0 / 3.0)]
    s: f64,
    /// Comma-separated deltas for `profile-ladder`.
    #[arg(long, default_value = "0.25,0.125,0.0625")]
    deltas: String,
}

#[derive(Args)]
struct ScanArgs {
    #[arg(long, default_value_t = 1.0 / 3.0)]
    s: f64,
    #[arg(long, default_value = "0.25,0.125,0.0625,0.03125,0.015625")]
    deltas: String,
    /// Points per axis (default from the config).
    #[arg(long)]
    grid: Option<usize>,
}

#[derive(Args)]
struct NormsArgs {
    /// Field file in the binary field format.
    #[arg(long)]
    field: PathBuf,
    #[arg(long, default_value = "l2,linf,bmo,morrey")]
    which: String,
    /// Ball sampler, e.g. `stride=2,rmin=0.1,rmax=0.8,per_octave=4`.
    #[arg(long)]
    sampler: Option<String>,
}

#[derive(Args)]
struct BesovArgs {
    #[arg(long, default_value_t = 9)]
    jmax: i32,
    #[arg(long, default_value_t = 4096)]
    grid: usize,
    /// 1 for the line, 3 for the periodic box.
    #[arg(long, default_value_t = 1)]
    dim: u8,
    /// `lowpass` or `annulus`.
    #[arg(long, default_value = "lowpass")]
    symbol: String,
}

#[derive(Args)]
struct DataArgs {
    /// Dataset directory written by `gen`.
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args)]
struct InvariantsArgs {
    #[arg(long)]
    data: PathBuf,
    /// `t,x,y,z,r` entries separated by `;`.
    #[arg(long)]
    cylinders: String,
}

#[derive(Args)]
struct CknArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    cylinders: String,
    /// Threshold (default from the config).
    #[arg(long)]
    eps0: Option<f64>,
}

#[derive(Args)]
struct LedgerArgs {
    #[arg(long)]
    data: PathBuf,
    /// `t,x,y,z,r,rho` entries separated by `;`.
    #[arg(long)]
    pairs: String,
}

#[derive(Args)]
struct DimsArgs {
    /// Scalar measure density or velocity field file.
    #[arg(long)]
    measure: PathBuf,
    /// `x y z` points separated by `;`.
    #[arg(long, default_value = "0 0 0")]
    points: String,
    /// Comma-separated radii, or `rmin:rmax:count`; default `[4h, L/4]`.
    #[arg(long)]
    radii: Option<String>,
}

#[derive(Args)]
struct SuiteArgs {
    /// `full` or `quick`.
    #[arg(long)]
    scale: Option<String>,
    /// Comma-separated report formats.
    #[arg(long, default_value = "json,text,csv")]
    format: String,
}

/// Failure of a check, distinct from usage or data errors.
struct ChecksFailed;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(None) => ExitCode::SUCCESS,
        Ok(Some(ChecksFailed)) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(2)
        }
    }
}

/// The error chain, skipping causes already spelled out by their parent.
fn describe(e: &anyhow::Error) -> String {
    let mut msg = e.to_string();
    let mut last = msg.clone();
    for cause in e.chain().skip(1) {
        let c = cause.to_string();
        if !last.contains(&c) {
            msg.push_str(": ");
            msg.push_str(&c);
        }
        last = c;
    }
    msg
}

fn run(cli: Cli) -> Result<Option<ChecksFailed>> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for kv in &cli.overrides {
        let (k, v) = kv
            .split_once('=')
            .with_context(|| format!("override {kv:?} is not key=value"))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = Some(o.clone());
    }
    let out = cfg.out.clone();

    match cli.command {
        Command::Gen(a) => gen(&a, out.as_deref())?,
        Command::ProfileScan(a) => profile_scan(&a, &cfg, out.as_deref())?,
        Command::Norms(a) => field_norms(&a, &cfg, out.as_deref())?,
        Command::BesovLn(a) => besov_ln(&a, out.as_deref())?,
        Command::Invariants(a) => invariants(&a, out.as_deref())?,
        Command::CknTest(a) => ckn(&a, &cfg, out.as_deref())?,
        Command::Ledger(a) => ledger(&a, out.as_deref())?,
        Command::Dims(a) => dims(&a, out.as_deref())?,
        Command::EnergyResidual(a) => energy_residual(&a, out.as_deref())?,
        Command::Suite(a) => return suite(&a, cfg),
    }
    Ok(None)
}

/// Writes `text` to `out`, or to stdout when no path is given.
fn write_table(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)
                    .with_context(|| format!("creating {}", dir.display()))?;
            }
            std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))
        }
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.parse::<f64>()
                .with_context(|| format!("invalid number {p:?}"))
        })
        .collect()
}

fn parse_entries(s: &str, width: usize, what: &str) -> Result<Vec<Vec<f64>>> {
    let rows: Vec<Vec<f64>> = s
        .split(';')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(parse_list)
        .collect::<Result<_>>()?;
    if rows.is_empty() || rows.iter().any(|r| r.len() != width) {
        bail!("{what} needs {width} comma-separated numbers per entry, got {s:?}");
    }
    Ok(rows)
}

fn parse_cylinders(s: &str) -> Result<Vec<ParabolicCylinder>> {
    parse_entries(s, 5, "cylinder")?
        .into_iter()
        .map(|r| Ok(ParabolicCylinder::new(r[0], [r[1], r[2], r[3]], r[4])?))
        .collect()
}

fn parse_points(s: &str) -> Result<Vec<[f64; 3]>> {
    s.split(';')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            let c: Vec<f64> = p
                .split_whitespace()
                .map(|x| {
                    x.parse::<f64>()
                        .with_context(|| format!("invalid coordinate {x:?}"))
                })
                .collect::<Result<_>>()?;
            match c[..] {
                [x, y, z] => Ok([x, y, z]),
                _ => bail!("point {p:?} needs three coordinates"),
            }
        })
        .collect()
}

fn gen(a: &GenArgs, out: Option<&Path>) -> Result<()> {
    let dir = out.context("gen needs --out <dir>")?;
    let g = Grid3::new(a.grid, std::f64::consts::PI)?;
    let times = linspace(0.0, a.t, a.slices.max(2));
    let (name, n) = match a.kind {
        Kind::Beltrami => {
            spacetime::write_dataset(
                dir,
                "beltrami",
                &SampledFlow::new(BeltramiAbc::default(), g, times)?,
            )?;
            ("beltrami", a.slices)
        }
        Kind::TaylorGreen => {
            spacetime::write_dataset(
                dir,
                "taylor_green",
                &SampledFlow::new(TaylorGreen, g, times)?,
            )?;
            ("taylor_green", a.slices)
        }
        Kind::Shear => {
            let f = ShearMode {
                amplitude: 1.0,
                wavenumber: 1.0,
            };
            spacetime::write_dataset(dir, "shear", &SampledFlow::new(f, g, times)?)?;
            ("shear", a.slices)
        }
        Kind::ProfileLadder => {
            let spec = FlowSpec {
                kind: FlowKind::ProfileLadder {
                    s: a.s,
                    deltas: parse_list(&a.deltas)?,
                },
                t_end: 1.0,
                slices: 0,
            };
            let g = Grid3::new(a.grid, 2.0)?;
            let st = flow::generate(&spec, &g)?;
            spacetime::write_dataset(dir, spec.name(), &st)?;
            (spec.name(), st.times().len())
        }
    };
    eprintln!("wrote {n} slices of {name} to {}", dir.display());
    Ok(())
}

fn profile_scan(a: &ScanArgs, cfg: &RunConfig, out: Option<&Path>) -> Result<()> {
    let opts = ScanOptions {
        n: a.grid.unwrap_or(cfg.grid),
        padding: cfg.padding,
        ..ScanOptions::default()
    };
    let rep = profile::scan_scaling(a.s, &parse_list(&a.deltas)?, &opts)?;
    let mut csv = String::from("delta,L2sq,H1sq,Linf,BMO\n");
    for r in &rep.records {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            r.delta, r.l2_sq, r.h1_sq, r.linf, r.bmo
        ));
    }
    write_table(out, &csv)?;
    let summary = serde_json::json!({
        "s": rep.s,
        "n": opts.n,
        "l2_slope": rep.l2_slope,
        "h1_slope": rep.h1_slope,
        "linf_slope": rep.linf_slope,
        "bmo_slope": rep.bmo_slope,
        "oracle_linf_slope": rep.oracle_linf_slope,
        "bmo_scaled_sup": rep.bmo_scaled_sup,
        "bmo_scaled_ratio": rep.bmo_scaled_ratio,
        "monotone": rep.monotone,
    });
    let text = serde_json::to_string_pretty(&summary)? + "\n";
    match out {
        Some(p) => write_table(Some(&p.with_extension("json")), &text),
        None => write_table(None, &text),
    }
}

fn norm_row(which: &str, f: &impl norms::FieldData, sampler: &BallSampler) -> Result<String> {
    let ball = |e: norms::BallEstimate| {
        format!(
            "{which},{},{},{},{},{}\n",
            e.value, e.center[0], e.center[1], e.center[2], e.radius
        )
    };
    Ok(match which {
        "l2" => format!("{which},{},,,,\n", norms::lp_norm(f, 2.0)?),
        "linf" => format!("{which},{},,,,\n", norms::lp_norm(f, f64::INFINITY)?),
        "bmo" => ball(norms::bmo_norm(f, sampler)?),
        "morrey" => ball(norms::morrey_21_norm(f, sampler)?),
        other => bail!("unknown norm {other:?}; expected l2, linf, bmo or morrey"),
    })
}

fn field_norms(a: &NormsArgs, cfg: &RunConfig, out: Option<&Path>) -> Result<()> {
    let file = nsdiag::io::read_field(&a.field)?;
    let sampler = match a.sampler.as_deref().or(cfg.sampler.as_deref()) {
        Some(s) => s.parse::<BallSampler>()?,
        None => BallSampler::for_grid(&file.grid, 2),
    };
    let which: Vec<&str> = a
        .which
        .split(',')
        .map(str::trim)
        .filter(|w| !w.is_empty())
        .collect();
    let mut csv = String::from("norm,value,center_x,center_y,center_z,radius\n");
    if file.components.len() == 3 {
        let u = file.into_vector()?;
        for w in which {
            csv.push_str(&norm_row(w, &u, &sampler)?);
        }
    } else {
        let f = file.into_scalar()?;
        for w in which {
            csv.push_str(&norm_row(w, &f, &sampler)?);
        }
    }
    write_table(out, &csv)
}

fn besov_ln(a: &BesovArgs, out: Option<&Path>) -> Result<()> {
    let symbol: LpSymbol = a.symbol.parse()?;
    let blocks = match a.dim {
        1 => norms::line_block_profile(
            |x: f64| x.abs().ln(),
            a.grid,
            std::f64::consts::PI,
            a.jmax,
            symbol,
        )?,
        3 => {
            let g = Grid3::new(a.grid, std::f64::consts::PI)?;
            let f =
                ScalarField::from_fn(g, |x| (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt().ln())?;
            norms::besov_b0infinf_profile(&f, a.jmax, symbol)?
        }
        d => bail!("--dim must be 1 or 3, got {d}"),
    };
    let mut csv = String::from("j,blocknorm,blocknorm_over_j\n");
    for b in blocks {
        let per_j = if b.j > 0 {
            b.sup / b.j as f64
        } else {
            f64::NAN
        };
        csv.push_str(&format!("{},{},{}\n", b.j, b.sup, per_j));
    }
    write_table(out, &csv)
}

fn invariants(a: &InvariantsArgs, out: Option<&Path>) -> Result<()> {
    let src = DatasetSource::open(&a.data)?;
    let cyls = parse_cylinders(&a.cylinders)?;
    let vals = local_energy::invariants_many(&src, &cyls)?;
    let mut csv = String::from("t,x,y,z,r,A,B,C,D\n");
    for (q, v) in cyls.iter().zip(&vals) {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            q.t, q.x[0], q.x[1], q.x[2], q.r, v.a, v.b, v.c, v.d
        ));
    }
    write_table(out, &csv)
}

fn ckn(a: &CknArgs, cfg: &RunConfig, out: Option<&Path>) -> Result<()> {
    let src = DatasetSource::open(&a.data)?;
    let cyls = parse_cylinders(&a.cylinders)?;
    let eps0 = a.eps0.unwrap_or(cfg.eps0);
    if !(eps0 >= 0.0) {
        bail!("eps0 must be nonnegative, got {eps0}");
    }
    let vals = local_energy::invariants_many(&src, &cyls)?;
    let mut csv = String::from("t,x,y,z,r,C,D,eps0,verdict\n");
    for (q, v) in cyls.iter().zip(&vals) {
        let res = local_energy::ckn_from(v, eps0);
        let verdict = match res.verdict {
            Verdict::RegularCertified => "regular_certified",
            Verdict::Inconclusive => "inconclusive",
        };
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            q.t, q.x[0], q.x[1], q.x[2], q.r, res.c, res.d, eps0, verdict
        ));
    }
    write_table(out, &csv)
}

fn ledger(a: &LedgerArgs, out: Option<&Path>) -> Result<()> {
    let src = DatasetSource::open(&a.data)?;
    let mut csv = String::from("estimate,t,x,y,z,r,rho,lhs,term_1,term_2,implied_constant\n");
    for p in parse_entries(&a.pairs, 6, "pair")? {
        let q_rho = ParabolicCylinder::new(p[0], [p[1], p[2], p[3]], p[5])?;
        let q_r = q_rho.with_radius(p[4])?;
        let m = local_energy::invariants(&src, &q_rho)?.a;
        for (name, row) in [
            (
                "cubic",
                local_energy::cubic_decay_ledger(&src, &q_r, &q_rho, m)?,
            ),
            (
                "pressure",
                local_energy::pressure_decay_ledger(&src, &q_r, &q_rho)?,
            ),
        ] {
            let k = row
                .implied_constant
                .map_or(String::new(), |c| c.to_string());
            csv.push_str(&format!(
                "{name},{},{},{},{},{},{},{},{},{},{k}\n",
                row.t,
                row.x[0],
                row.x[1],
                row.x[2],
                row.r,
                row.rho,
                row.lhs,
                row.terms[0],
                row.terms[1]
            ));
        }
    }
    write_table(out, &csv)
}

fn dims(a: &DimsArgs, out: Option<&Path>) -> Result<()> {
    let file = nsdiag::io::read_field(&a.measure)?;
    let m = match file.components.len() {
        1 => MeasureApprox::from_density(&file.into_scalar()?)?,
        3 => energy_measure::energy_density(&file.into_vector()?),
        k => bail!(
            "{} has {k} components; expected a density or a velocity",
            a.measure.display()
        ),
    };
    let radii = match &a.radii {
        None => energy_measure::default_radii(m.grid())?,
        Some(s) if s.contains(':') => {
            let parts: Vec<&str> = s.split(':').collect();
            let [lo, hi, count] = parts[..] else {
                bail!("radii ladder must be rmin:rmax:count, got {s:?}");
            };
            energy_measure::radii_ladder(lo.parse()?, hi.parse()?, count.parse()?)?
        }
        Some(s) => parse_list(s)?,
    };
    let points = parse_points(&a.points)?;
    let mut csv = String::from("x,y,z,dimension,fit_residual,zero_masses,radii\n");
    for est in energy_measure::local_dimensions(&m, &points, &radii)? {
        let resid = est.fit.map_or(f64::NAN, |f| f.residual);
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            est.point[0],
            est.point[1],
            est.point[2],
            est.slope,
            resid,
            est.zero_masses,
            est.radii.len()
        ));
    }
    write_table(out, &csv)
}

fn energy_residual(a: &DataArgs, out: Option<&Path>) -> Result<()> {
    let src = DatasetSource::open(&a.data)?;
    let r = energy_measure::global_energy_residual(&src)?;
    let mut csv = String::from("t,residual,relative_residual\n");
    for i in 0..r.times.len() {
        csv.push_str(&format!(
            "{},{},{}\n",
            r.times[i], r.residual[i], r.relative[i]
        ));
    }
    write_table(out, &csv)
}

fn suite(a: &SuiteArgs, mut cfg: RunConfig) -> Result<Option<ChecksFailed>> {
    if let Some(s) = &a.scale {
        cfg.set("scale", s)?;
    }
    let formats: Vec<Format> = a
        .format
        .split(',')
        .map(str::trim)
        .filter(|f| !f.is_empty())
        .map(str::parse)
        .collect::<nsdiag::Result<_>>()?;
    let rep = report::run_suite(&cfg)?;
    let dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("report"));
    for p in report::emit(&rep, &formats, &dir)? {
        eprintln!("wrote {}", p.display());
    }
    print!("{}", rep.to_text());
    Ok((!rep.passed()).then_some(ChecksFailed))
}
