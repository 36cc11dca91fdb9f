//! Command-line driver.
//!
//! Subcommands: `spectrum`, `admissible`, `perturb`, `verify`, `sweep`,
//! `theorem4`. Lattices are given as presets (`eye:n`, `diag:a,b[,c…]`,
//! `ab:a,b`) or as a JSON file `{"n": 2, "basis_columns": [[1,0],[0,2]]}`.
//! The environment variable `CONFSPEC_THREADS` pins the solver thread count;
//! outputs are byte-identical across reruns for a fixed configuration.
//!
//! Exit codes: 0 pass, 1 verification failure (the mathematics disagrees),
//! 2 usage/input error, 3 numerical-infrastructure error.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::casework;
use crate::error::{Error, Result};
use crate::lattice::{
    conformal_upper_bound, flat_spectrum, EnumerationConfig, Lattice, LatticeSpec,
};
use crate::perturbation::{
    admissible_subspace, check_admissible, second_variation_alpha, EigenspaceCluster,
    PerturbationReport,
};
use crate::report::{
    branches_to_csv, locate_cluster, resolve_phi, run_sweep, run_verify, sweep_to_csv, JobConfig,
    PhiSpec, SweepFamily,
};
use crate::trig::TrigPolySpec;

#[derive(Debug, Parser)]
#[command(
    name = "confspec",
    about = "Spectral laboratory for conformal deformations of flat tori",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Text,
}

#[derive(Debug, Args)]
struct LatticeArg {
    /// Lattice preset `eye:n`, `diag:a,b[,c…]`, `ab:a,b`, or a JSON file path.
    #[arg(long)]
    lattice: String,
}

#[derive(Debug, Args)]
struct OutputArgs {
    /// Directory for output artifacts (also printed to stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output format.
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Exact flat spectrum: eigenvalue, q, multiplicity, representatives.
    Spectrum {
        #[command(flatten)]
        lattice: LatticeArg,
        /// Number of nonzero levels to list.
        #[arg(long, default_value_t = 5)]
        levels: usize,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Admissibility residuals of a direction and the admissible subspace of
    /// the cluster span.
    Admissible {
        #[command(flatten)]
        lattice: LatticeArg,
        /// Eigenvalue index opening the cluster (multiplicity-counted).
        #[arg(long, default_value_t = 1)]
        k: usize,
        /// Direction: `u1`, `auto`, or a JSON coefficient file.
        #[arg(long, default_value = "u1")]
        phi: String,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Variation operators and the Taylor coefficient of the functional.
    Perturb {
        #[command(flatten)]
        lattice: LatticeArg,
        #[arg(long, default_value_t = 1)]
        k: usize,
        #[arg(long, default_value = "u1")]
        phi: String,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Full verification bundle with deformed-solver cross-checks.
    Verify {
        #[command(flatten)]
        lattice: LatticeArg,
        #[arg(long, default_value_t = 1)]
        k: usize,
        #[arg(long, default_value = "u1")]
        phi: String,
        /// Truncation ball override `|w|² ≤ radius_sq`.
        #[arg(long)]
        radius_sq: Option<f64>,
        /// Deformation step h of the grid {0, ±h, ±2h, ±3h}.
        #[arg(long)]
        t_step: Option<f64>,
        /// Weight-quadrature points per axis.
        #[arg(long)]
        grid: Option<usize>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// One-parameter lattice family scan (CSV rows).
    Sweep {
        /// Family: `diag-s` for diag(1,s), `ab-circle` for the unit-circle
        /// boundary family.
        #[arg(long)]
        family: String,
        #[arg(long)]
        from: f64,
        #[arg(long)]
        to: f64,
        #[arg(long)]
        step: f64,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Closed-form verdict for lattices with a unique shortest dual vector.
    Theorem4 {
        #[command(flatten)]
        lattice: LatticeArg,
        #[command(flatten)]
        output: OutputArgs,
    },
}

/// Parses a lattice preset or JSON file.
pub fn parse_lattice(spec: &str) -> Result<Lattice> {
    if let Some(rest) = spec.strip_prefix("eye:") {
        let n: usize = rest
            .parse()
            .map_err(|_| Error::Usage(format!("bad dimension in `{spec}`")))?;
        return Lattice::identity(n);
    }
    if let Some(rest) = spec.strip_prefix("diag:") {
        let entries: Vec<f64> = rest
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Usage(format!("bad diagonal entry `{s}`")))
            })
            .collect::<Result<_>>()?;
        return Lattice::diagonal(&entries);
    }
    if let Some(rest) = spec.strip_prefix("ab:") {
        let parts: Vec<&str> = rest.split(',').collect();
        if parts.len() != 2 {
            return Err(Error::Usage(format!(
                "`ab:` preset needs two entries, got `{spec}`"
            )));
        }
        let a: f64 = parts[0]
            .trim()
            .parse()
            .map_err(|_| Error::Usage(format!("bad value `{}`", parts[0])))?;
        let b: f64 = parts[1]
            .trim()
            .parse()
            .map_err(|_| Error::Usage(format!("bad value `{}`", parts[1])))?;
        return Lattice::planar(a, b);
    }
    let text = std::fs::read_to_string(Path::new(spec))
        .map_err(|e| Error::Usage(format!("cannot read lattice file `{spec}`: {e}")))?;
    let parsed: LatticeSpec = serde_json::from_str(&text)
        .map_err(|e| Error::Usage(format!("cannot parse lattice JSON `{spec}`: {e}")))?;
    Lattice::from_spec(&parsed)
}

fn parse_phi(spec: &str) -> Result<PhiSpec> {
    match spec {
        "u1" => Ok(PhiSpec::U1),
        "auto" => Ok(PhiSpec::Auto),
        path => {
            let text = std::fs::read_to_string(Path::new(path))
                .map_err(|e| Error::Usage(format!("cannot read phi file `{path}`: {e}")))?;
            let parsed: TrigPolySpec = serde_json::from_str(&text)
                .map_err(|e| Error::Usage(format!("cannot parse phi JSON `{path}`: {e}")))?;
            Ok(PhiSpec::Explicit(parsed))
        }
    }
}

fn parse_family(spec: &str) -> Result<SweepFamily> {
    match spec {
        "diag-s" => Ok(SweepFamily::DiagS),
        "ab-circle" => Ok(SweepFamily::AbCircle),
        other => Err(Error::Usage(format!(
            "unknown family `{other}`; expected `diag-s` or `ab-circle`"
        ))),
    }
}

fn env_threads() -> usize {
    std::env::var("CONFSPEC_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&t| t >= 1)
        .unwrap_or(1)
}

fn emit(payload: &str, out: &Option<PathBuf>, filename: &str) -> Result<()> {
    if payload.ends_with('\n') {
        print!("{payload}");
    } else {
        println!("{payload}");
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(filename), payload)?;
    }
    Ok(())
}

fn json_of<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)?)
}

#[derive(Serialize)]
struct SchemaWrap<T: Serialize> {
    schema: &'static str,
    #[serde(flatten)]
    payload: T,
}

fn wrap<T: Serialize>(payload: T) -> SchemaWrap<T> {
    SchemaWrap {
        schema: "1",
        payload,
    }
}

fn cmd_spectrum(lattice: &str, levels: usize, output: &OutputArgs) -> Result<i32> {
    let lattice = Arc::new(parse_lattice(lattice)?);
    let spectrum = flat_spectrum(&lattice, levels, EnumerationConfig::default())?;
    let bound = if lattice.dim() <= 4 {
        Some(conformal_upper_bound(&lattice, EnumerationConfig::default())?)
    } else {
        None
    };
    match output.format {
        Format::Csv | Format::Text => {
            let mut out = String::from("index,eigenvalue,q,multiplicity,representatives\n");
            for level in &spectrum {
                let reps: Vec<String> = level
                    .frequency_pairs
                    .iter()
                    .map(|p| format!("{:?}", p.coords).replace(' ', ""))
                    .collect();
                out.push_str(&format!(
                    "{},{:.12},{:.12},{},{}\n",
                    level.index,
                    level.eigenvalue,
                    level.q,
                    level.multiplicity,
                    reps.join(";")
                ));
            }
            emit(&out, &output.out, "spectrum.csv")?;
        }
        Format::Json => {
            #[derive(Serialize)]
            struct SpectrumOut<'a> {
                lattice: LatticeSpec,
                levels: &'a [crate::lattice::SpectrumLevel],
                #[serde(skip_serializing_if = "Option::is_none")]
                conformal_bound: &'a Option<crate::lattice::ConformalBound>,
            }
            let payload = json_of(&wrap(SpectrumOut {
                lattice: lattice.to_spec(),
                levels: &spectrum,
                conformal_bound: &bound,
            }))?;
            emit(&payload, &output.out, "spectrum.json")?;
        }
    }
    Ok(0)
}

fn cmd_admissible(lattice: &str, k: usize, phi: &str, output: &OutputArgs) -> Result<i32> {
    let lattice = Arc::new(parse_lattice(lattice)?);
    let (level_index, spectrum) = locate_cluster(&lattice, k)?;
    let cluster = EigenspaceCluster::from_spectrum(lattice.clone(), &spectrum, level_index)?;
    let phi_spec = parse_phi(phi)?;
    let phi = resolve_phi(&phi_spec, &lattice, &cluster)?;

    #[derive(Serialize)]
    struct AdmissibleOut {
        k: usize,
        multiplicity: usize,
        admissible: bool,
        mean: f64,
        residual_mass: f64,
        residual_grad: f64,
        subspace_dimension: usize,
        subspace: Vec<TrigPolySpec>,
    }
    let (admissible, mean, residual_mass, residual_grad) = match check_admissible(&phi, &cluster) {
        Ok(d) => (
            true,
            phi.integrate().norm(),
            d.residual_mass(),
            d.residual_grad(),
        ),
        Err(Error::NotAdmissible {
            mean,
            residual_mass,
            residual_grad,
        }) => (false, mean, residual_mass, residual_grad),
        Err(e) => return Err(e),
    };
    let subspace = admissible_subspace(cluster.basis(), &cluster)?;
    let payload = json_of(&wrap(AdmissibleOut {
        k,
        multiplicity: cluster.multiplicity(),
        admissible,
        mean,
        residual_mass,
        residual_grad,
        subspace_dimension: subspace.len(),
        subspace: subspace.iter().map(|f| f.to_poly_spec()).collect(),
    }))?;
    emit(&payload, &output.out, "admissible.json")?;
    Ok(0)
}

fn cmd_perturb(lattice: &str, k: usize, phi: &str, output: &OutputArgs) -> Result<i32> {
    let lattice = Arc::new(parse_lattice(lattice)?);
    let (level_index, spectrum) = locate_cluster(&lattice, k)?;
    let cluster = EigenspaceCluster::from_spectrum(lattice.clone(), &spectrum, level_index)?;
    let phi_spec = parse_phi(phi)?;
    let phi = resolve_phi(&phi_spec, &lattice, &cluster)?;
    let direction = check_admissible(&phi, &cluster)?;
    let outcome = second_variation_alpha(&direction, &cluster)?;
    let report = PerturbationReport::from_outcome(lattice.as_ref(), &cluster, &direction, &outcome);
    let payload = json_of(&wrap(report))?;
    emit(&payload, &output.out, "perturb.json")?;
    Ok(0)
}

#[allow(clippy::too_many_arguments)]
fn cmd_verify(
    lattice: &str,
    k: usize,
    phi: &str,
    radius_sq: Option<f64>,
    t_step: Option<f64>,
    grid: Option<usize>,
    output: &OutputArgs,
) -> Result<i32> {
    let lattice = Arc::new(parse_lattice(lattice)?);
    let mut cfg = JobConfig::new(lattice);
    cfg.k = k;
    cfg.phi = parse_phi(phi)?;
    cfg.radius_sq = radius_sq;
    cfg.t_step = t_step;
    cfg.grid_per_axis = grid;
    cfg.threads = env_threads();
    let bundle = run_verify(&cfg)?;
    let payload = json_of(&bundle)?;
    emit(&payload, &output.out, "verify.json")?;
    if let (Some(dir), Some(branches)) = (&output.out, &bundle.branches) {
        std::fs::write(dir.join("branches.csv"), branches_to_csv(branches))?;
    }
    if output.format == Format::Csv {
        if let Some(branches) = &bundle.branches {
            println!("{}", branches_to_csv(branches));
        }
    }
    for check in &bundle.checks {
        eprintln!(
            "[{}] {}: observed {:.3e} (threshold {:.3e})",
            if check.passed { "PASS" } else { "FAIL" },
            check.name,
            check.observed,
            check.threshold
        );
    }
    if bundle.pass {
        Ok(0)
    } else if bundle.stopped_at.is_some() {
        eprintln!(
            "verification stopped at stage `{}`",
            bundle.stopped_at.as_deref().unwrap_or("?")
        );
        Ok(2)
    } else {
        Ok(1)
    }
}

fn cmd_sweep(
    family: &str,
    from: f64,
    to: f64,
    step: f64,
    output: &OutputArgs,
) -> Result<i32> {
    let rows = run_sweep(parse_family(family)?, from, to, step)?;
    match output.format {
        Format::Json => {
            let payload = json_of(&wrap(serde_json::json!({ "rows": rows })))?;
            emit(&payload, &output.out, "sweep.json")?;
        }
        Format::Csv | Format::Text => {
            emit(&sweep_to_csv(&rows), &output.out, "sweep.csv")?;
        }
    }
    Ok(0)
}

fn cmd_theorem4(lattice: &str, output: &OutputArgs) -> Result<i32> {
    let lattice = Arc::new(parse_lattice(lattice)?);
    let report = casework::casework_report(&lattice)?;
    match output.format {
        Format::Text => {
            emit(
                &casework::render_report_text(&report),
                &output.out,
                "theorem4.txt",
            )?;
        }
        _ => {
            let payload = json_of(&wrap(&report))?;
            emit(&payload, &output.out, "theorem4.json")?;
        }
    }
    Ok(0)
}

/// Parses arguments and runs; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            // clap handles --help/--version with success exits.
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Spectrum {
            lattice,
            levels,
            output,
        } => cmd_spectrum(&lattice.lattice, *levels, output),
        Command::Admissible {
            lattice,
            k,
            phi,
            output,
        } => cmd_admissible(&lattice.lattice, *k, phi, output),
        Command::Perturb {
            lattice,
            k,
            phi,
            output,
        } => cmd_perturb(&lattice.lattice, *k, phi, output),
        Command::Verify {
            lattice,
            k,
            phi,
            radius_sq,
            t_step,
            grid,
            output,
        } => cmd_verify(
            &lattice.lattice,
            *k,
            phi,
            *radius_sq,
            *t_step,
            *grid,
            output,
        ),
        Command::Sweep {
            family,
            from,
            to,
            step,
            output,
        } => cmd_sweep(family, *from, *to, *step, output),
        Command::Theorem4 { lattice, output } => cmd_theorem4(&lattice.lattice, output),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
