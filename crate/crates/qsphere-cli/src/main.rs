use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use qsphere::config::RunConfig;
use qsphere::kernels::{kernel_factors, KernelContext, SignPair, SpectrumPoint};
use qsphere::lattice::{GradedFunction, LatticePoint};
use qsphere::product::ProductVariant;
use qsphere::transform::{
    fit_density, forward, inverse, roundtrip_report, Density, DensityFitOptions, SphericalField,
};
use qsphere::verify::{run_many, ProductSelection, Suite};
use qsphere::{Complex64, Error};

/// Exit codes: 0 pass, 1 suite failure, 2 input error, 3 conditioning error.
#[derive(Parser)]
#[command(name = "qsphere", version)]
#[command(about = "Spherical kernels, graded transforms and product-formula checks on -q^N u q^Z")]
struct Cli {
    #[command(flatten)]
    run: RunArgs,
    #[command(subcommand)]
    command: Command,
}

/// Overrides on top of `QSPHERE_CONFIG` (or the built-in defaults).
#[derive(Args)]
struct RunArgs {
    /// TOML or JSON config file; takes precedence over QSPHERE_CONFIG
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    q: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    kmin: Option<i32>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    kmax: Option<i32>,
    /// Gauss-Legendre nodes on the principal series
    #[arg(long, global = true)]
    nodes: Option<usize>,
    /// Largest discrete-series index
    #[arg(long, global = true)]
    nmax: Option<u32>,
    /// Tolerance override, repeatable: --tol product=1e-3
    #[arg(long, global = true, value_name = "NAME=VALUE")]
    tol: Vec<String>,
    /// unit, fitted, or a phase provider JSON file
    #[arg(long, global = true)]
    phase_provider: Option<String>,
    /// none, or an a-provider JSON file
    #[arg(long, global = true)]
    a_provider: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Write the main output here instead of stdout
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate K_j^{σ,τ}(p0; x) with its S-function factorization
    Kernel(KernelArgs),
    /// Forward or inverse spherical transform, or a roundtrip check
    Transform(TransformArgs),
    /// Run invariant suites and emit a pass/fail report
    Verify(VerifyArgs),
}

#[derive(Args)]
struct KernelArgs {
    #[arg(long, default_value_t = 1)]
    j: u8,
    /// ++, +-, -+ or --
    #[arg(long, default_value = "++", allow_hyphen_values = true)]
    signs: String,
    /// Lattice point such as -q^2 or +q^-1
    #[arg(long, allow_hyphen_values = true)]
    p0: String,
    /// Principal series point x in [-1, 1]
    #[arg(long, allow_hyphen_values = true, conflicts_with_all = ["discrete_n", "complementary", "sweep"])]
    x: Option<f64>,
    /// Discrete series point mu(q^{2n+1})
    #[arg(long, conflicts_with_all = ["complementary", "sweep"])]
    discrete_n: Option<u32>,
    /// Complementary series point x in (1, mu(q))
    #[arg(long, conflicts_with = "sweep")]
    complementary: Option<f64>,
    /// Evaluate on this many evenly spaced principal points in [-1, 1]
    #[arg(long)]
    sweep: Option<usize>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TransformAction {
    Forward,
    Inverse,
    Roundtrip,
}

#[derive(Args)]
struct TransformArgs {
    #[arg(value_enum)]
    action: TransformAction,
    /// Graded function JSON (forward, roundtrip) or spherical field JSON (inverse)
    #[arg(long)]
    input: PathBuf,
    /// Density JSON matched to the grid
    #[arg(long, conflicts_with = "fit_density")]
    density: Option<PathBuf>,
    /// Fit the density instead of reading one
    #[arg(long)]
    fit_density: bool,
}

#[derive(Args)]
struct VerifyArgs {
    /// qseries, symmetry, triviality, plancherel or product
    #[arg(value_parser = parse_suite, required_unless_present = "all")]
    suites: Vec<Suite>,
    #[arg(long, conflicts_with = "suites")]
    all: bool,
    /// Restrict the product suite to one variant
    #[arg(long)]
    variant: Option<String>,
    #[arg(long, allow_hyphen_values = true, requires = "p2")]
    p1: Option<String>,
    #[arg(long, allow_hyphen_values = true, requires = "p1")]
    p2: Option<String>,
}

fn parse_suite(s: &str) -> Result<Suite, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

enum Failure {
    Error(Error),
    Threshold(serde_json::Value),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

type CliResult = Result<(), Failure>;

fn input(msg: impl Into<String>) -> Failure {
    Failure::Error(Error::Input(msg.into()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = resolve(&cli.run)
        .map_err(Failure::from)
        .and_then(|cfg| match &cli.command {
            Command::Kernel(a) => cmd_kernel(a, &cli.run, &cfg),
            Command::Transform(a) => cmd_transform(a, &cli.run, &cfg),
            Command::Verify(a) => cmd_verify(a, &cli.run, &cfg),
        });
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Threshold(reason)) => {
            eprintln!(
                "{}",
                json!({ "status": "fail", "exit_code": 1, "reason": reason })
            );
            ExitCode::from(1)
        }
        Err(Failure::Error(e)) => {
            let code = match e.name() {
                "IllConditioned" => 3,
                _ => 2,
            };
            eprintln!(
                "{}",
                json!({ "status": "error", "exit_code": code, "error": e.name(), "reason": e.to_string() })
            );
            ExitCode::from(code)
        }
    }
}

fn resolve(a: &RunArgs) -> qsphere::Result<RunConfig> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::from_env()?,
    };
    if let Some(q) = a.q {
        cfg.q = q;
    }
    if let Some(k) = a.kmin {
        cfg.k_min = k;
    }
    if let Some(k) = a.kmax {
        cfg.k_max = k;
    }
    if let Some(n) = a.nodes {
        cfg.nodes = n;
    }
    if let Some(n) = a.nmax {
        cfg.n_max = n;
    }
    for t in &a.tol {
        let (name, value) = t
            .split_once('=')
            .ok_or_else(|| Error::Input(format!("--tol expects NAME=VALUE, got {t:?}")))?;
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| Error::Input(format!("--tol {name}: {value:?} is not a number")))?;
        cfg.tol.set(name.trim(), value)?;
    }
    if let Some(p) = &a.phase_provider {
        cfg.phase_provider = p.clone();
    }
    if let Some(p) = &a.a_provider {
        cfg.a_provider = p.clone();
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn emit(out: &Option<PathBuf>, text: &str) -> qsphere::Result<()> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| Error::Input(format!("{}: {e}", p.display()))),
        None => {
            let mut stdout = io::stdout().lock();
            let tail = if text.ends_with('\n') { "" } else { "\n" };
            match stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.write_all(tail.as_bytes()))
            {
                Err(e) if e.kind() != io::ErrorKind::BrokenPipe => {
                    Err(Error::Input(format!("stdout: {e}")))
                }
                _ => Ok(()),
            }
        }
    }
}

fn read(path: &Path) -> qsphere::Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))
}

// ---------------------------------------------------------------- kernel

#[derive(Serialize)]
struct KernelRow {
    j: u8,
    signs: String,
    p0: String,
    point: String,
    x: f64,
    re: f64,
    im: f64,
    abs: f64,
    s_variant: String,
    s_re: f64,
    s_im: f64,
    display_sign: f64,
    phase_re: f64,
    phase_im: f64,
    reflection: f64,
}

const KERNEL_HEADER: &str =
    "j,signs,p0,point,x,re,im,abs,s_variant,s_re,s_im,display_sign,phase_re,phase_im,reflection";

impl KernelRow {
    fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.j,
            self.signs,
            self.p0,
            self.point,
            self.x,
            self.re,
            self.im,
            self.abs,
            self.s_variant,
            self.s_re,
            self.s_im,
            self.display_sign,
            self.phase_re,
            self.phase_im,
            self.reflection
        )
    }
}

fn kernel_row(
    j: u8,
    signs: SignPair,
    p0: LatticePoint,
    pt: &SpectrumPoint,
    ctx: &KernelContext,
) -> qsphere::Result<KernelRow> {
    let f = kernel_factors(j, signs, p0, pt, ctx)?;
    let point = match pt {
        SpectrumPoint::Principal { .. } => "principal".to_string(),
        SpectrumPoint::Discrete { n } => format!("discrete:{n}"),
        SpectrumPoint::Complementary { .. } => "complementary".to_string(),
    };
    let variant = f
        .variant
        .map_or("none".to_string(), |v| format!("{v:?}").to_lowercase());
    Ok(KernelRow {
        j,
        signs: signs.to_string(),
        p0: p0.to_string(),
        point,
        x: pt.x(ctx.q()),
        re: f.value.re,
        im: f.value.im,
        abs: f.value.norm(),
        s_variant: variant,
        s_re: f.s_value.re,
        s_im: f.s_value.im,
        display_sign: f.display_sign,
        phase_re: f.phase.re,
        phase_im: f.phase.im,
        reflection: f.reflection,
    })
}

fn cmd_kernel(a: &KernelArgs, run: &RunArgs, cfg: &RunConfig) -> CliResult {
    let signs: SignPair = a.signs.parse()?;
    let p0: LatticePoint = a.p0.parse()?;
    if !(1..=2).contains(&a.j) {
        return Err(Error::DomainError(format!("j = {} is not in {{1, 2}}", a.j)).into());
    }
    let points = match (a.x, a.discrete_n, a.complementary, a.sweep) {
        (Some(x), None, None, None) => vec![SpectrumPoint::principal(x)?],
        (None, Some(n), None, None) => vec![SpectrumPoint::discrete(n)?],
        (None, None, Some(x), None) => vec![SpectrumPoint::complementary(x, cfg.q)?],
        (None, None, None, Some(n)) if n >= 2 => (0..n)
            .map(|i| SpectrumPoint::principal(-1.0 + 2.0 * i as f64 / (n - 1) as f64))
            .collect::<qsphere::Result<_>>()?,
        (None, None, None, Some(n)) => {
            return Err(input(format!("--sweep needs at least 2 points, got {n}")))
        }
        _ => {
            return Err(input(
                "give one of --x, --discrete-n, --complementary or --sweep",
            ))
        }
    };
    let ctx = cfg.context()?;
    let rows = points
        .iter()
        .map(|pt| kernel_row(a.j, signs, p0, pt, &ctx))
        .collect::<qsphere::Result<Vec<_>>>()?;
    let text = match run.format.unwrap_or(Format::Csv) {
        Format::Csv => {
            let mut s = String::from(KERNEL_HEADER);
            s.push('\n');
            for r in &rows {
                s.push_str(&r.csv());
                s.push('\n');
            }
            s
        }
        Format::Json => serde_json::to_string_pretty(&json!({ "config": cfg, "rows": rows }))
            .expect("serializable"),
    };
    emit(&run.out, &text)?;
    Ok(())
}

// ---------------------------------------------------------------- transform

fn density_for(
    a: &TransformArgs,
    embedded: Option<Density>,
    cfg: &RunConfig,
    ctx: &KernelContext,
) -> qsphere::Result<(Density, &'static str)> {
    let grid = cfg.grid()?;
    if let Some(p) = &a.density {
        return Ok((Density::from_json(&read(p)?, &grid)?, "file"));
    }
    if a.fit_density {
        let (d, _) = fit_density(&grid, cfg.window(), ctx, &DensityFitOptions::default())?;
        return Ok((d, "fitted"));
    }
    match embedded {
        Some(d) => Ok((d, "embedded")),
        None => Err(Error::MissingProvider(
            "give --density FILE or --fit-density".into(),
        )),
    }
}

fn load_function(path: &Path, cfg: &RunConfig) -> qsphere::Result<GradedFunction> {
    let f = GradedFunction::from_json(&read(path)?)?;
    if f.q() != cfg.q {
        return Err(Error::Input(format!(
            "function has q = {}, config has q = {}",
            f.q(),
            cfg.q
        )));
    }
    if f.window() != cfg.window() {
        return Err(Error::GridMismatch(format!(
            "function window k ∈ [{}, {}] differs from the configured [{}, {}]",
            f.window().k_min,
            f.window().k_max,
            cfg.k_min,
            cfg.k_max
        )));
    }
    Ok(f)
}

fn cmd_transform(a: &TransformArgs, run: &RunArgs, cfg: &RunConfig) -> CliResult {
    let ctx = cfg.context()?;
    let grid = cfg.grid()?;
    let format = run.format.unwrap_or(Format::Json);
    match a.action {
        TransformAction::Forward => {
            let f = load_function(&a.input, cfg)?;
            let field = forward(&f, &grid, &ctx)?;
            let text = match format {
                Format::Json => field.to_json(None),
                Format::Csv => field.to_csv(cfg.q),
            };
            emit(&run.out, &text)?;
            eprintln!(
                "{}",
                json!({
                    "diagonal_only": field.is_diagonal_only(),
                    "off_diagonal_only": field.is_off_diagonal_only(),
                })
            );
        }
        TransformAction::Inverse => {
            let (field, embedded) = SphericalField::from_json(&read(&a.input)?)?;
            if field.grid != grid {
                return Err(Error::GridMismatch(
                    "field grid differs from the configured grid".into(),
                )
                .into());
            }
            let (d, _) = density_for(a, embedded, cfg, &ctx)?;
            let back = inverse(&field, &grid, &d, cfg.window(), &ctx)?;
            if format == Format::Csv {
                return Err(input("inverse writes JSON only"));
            }
            emit(&run.out, &back.to_json())?;
        }
        TransformAction::Roundtrip => {
            let f = load_function(&a.input, cfg)?;
            let (d, source) = density_for(a, None, cfg, &ctx)?;
            let back = inverse(&forward(&f, &grid, &ctx)?, &grid, &d, cfg.window(), &ctx)?;
            let mut residuals = serde_json::Map::new();
            let mut worst: f64 = 0.0;
            let scale = f
                .even_entries()
                .chain(f.odd_entries())
                .map(|(_, v)| v.norm())
                .fold(0.0, f64::max)
                .max(f64::MIN_POSITIVE);
            for p in cfg.window().points() {
                for (tag, a, b) in [
                    ("even", f.even(&p), back.even(&p)),
                    ("odd", f.odd(&p), back.odd(&p)),
                ] {
                    let r = (a - b).norm() / scale;
                    if r > 0.0 || a != Complex64::default() {
                        residuals.insert(format!("{tag}[{p}]"), json!(r));
                    }
                    worst = worst.max(r);
                }
            }
            let gram = roundtrip_report(cfg.window(), &grid, &d, &ctx)?;
            let passed = worst <= cfg.tol.roundtrip;
            let report = json!({
                "config": cfg,
                "density": source,
                "passed": passed,
                "residual_max": worst,
                "threshold": cfg.tol.roundtrip,
                "gram_opnorm": gram.get("gram_opnorm"),
                "gram_max_entry": gram.get("gram_max_entry"),
                "residuals": residuals,
            });
            emit(
                &run.out,
                &serde_json::to_string_pretty(&report).expect("serializable"),
            )?;
            if !passed {
                return Err(Failure::Threshold(json!(format!(
                    "roundtrip residual {worst:e} > {:e}",
                    cfg.tol.roundtrip
                ))));
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- verify

fn cmd_verify(a: &VerifyArgs, run: &RunArgs, cfg: &RunConfig) -> CliResult {
    let suites: Vec<Suite> = if a.all {
        Suite::ALL.to_vec()
    } else {
        a.suites.clone()
    };
    let variant = a
        .variant
        .as_deref()
        .map(str::parse::<ProductVariant>)
        .transpose()?;
    let pair = match (&a.p1, &a.p2) {
        (Some(p1), Some(p2)) => Some((p1.parse::<LatticePoint>()?, p2.parse::<LatticePoint>()?)),
        _ => None,
    };
    if pair.is_some() && variant.is_none() {
        return Err(input("--p1/--p2 need --variant"));
    }
    if (variant.is_some() || pair.is_some()) && !suites.contains(&Suite::Product) {
        return Err(input("--variant, --p1 and --p2 apply to the product suite"));
    }
    let report = run_many(&suites, cfg, &ProductSelection { variant, pair })?;
    let text = match run.format.unwrap_or(Format::Json) {
        Format::Json => report.to_json(),
        Format::Csv => {
            let mut s = String::from("suite,check,value,threshold,bound,passed\n");
            for r in &report.suites {
                for c in &r.checks {
                    s.push_str(&format!(
                        "{},{},{},{},{},{}\n",
                        r.suite, c.name, c.value, c.threshold, c.bound, c.passed
                    ));
                }
            }
            s
        }
    };
    emit(&run.out, &text)?;
    if report.passed {
        return Ok(());
    }
    let failed: Vec<_> = report
        .suites
        .iter()
        .flat_map(|r| {
            r.checks.iter().filter(|c| !c.passed).map(move |c| {
                json!({
                    "suite": r.suite,
                    "check": c.name,
                    "reason": c.reason,
                })
            })
        })
        .collect();
    Err(Failure::Threshold(json!(failed)))
}
