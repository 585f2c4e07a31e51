//! Command-line front end: case ingestion, reduction, identification,
//! simulation and variant comparison, with plain-text artifacts.
//!
//! Exit codes: 0 success, 2 input error, 3 numerical failure,
//! 4 identification did not converge.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use gridequiv::fdne::FdneCoefficients;
use gridequiv::rlsident::{identify_fdne, ProbeConfig};
use gridequiv::scenarios::{
    compare, default_probe, run_scenario, ScenarioConfig, ScenarioResult, Variant,
    DEFAULT_FDNE_ORDER,
};
use gridequiv::tsaequiv::{aggregate_generators, reduce_external};
use gridequiv::{CaseFile, Error};

mod manifest;

use manifest::RunManifest;

const EXIT_INPUT: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_NOT_CONVERGED: u8 = 4;

/// Override precedence for the output directory: env beats flags and
/// manifest values, per the artifact plumbing contract.
const OUTPUT_DIR_ENV: &str = "GRIDEQUIV_OUTPUT_DIR";

#[derive(Parser)]
#[command(name = "gridequiv", version, about = "Power-grid model-order reduction toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Aggregate external generators and reduce the external network to
    /// the boundary, writing the equivalent-machine and two-port documents.
    Reduce {
        /// Case file (TOML).
        case: PathBuf,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Probe the external area and identify its port admittance, writing
    /// the coefficient document and fit report.
    Identify {
        case: PathBuf,
        /// Model order (number of poles).
        #[arg(long, default_value_t = DEFAULT_FDNE_ORDER)]
        order: usize,
        /// Probe RNG seed.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Probe RMS amplitude, pu.
        #[arg(long)]
        amplitude: Option<f64>,
        /// Probe band lower edge, Hz.
        #[arg(long)]
        f_lo: Option<f64>,
        /// Probe band upper edge, Hz.
        #[arg(long)]
        f_hi: Option<f64>,
        /// Multisine tone count.
        #[arg(long)]
        tones: Option<usize>,
        /// Probe record length, seconds.
        #[arg(long)]
        probe_duration: Option<f64>,
        /// Sample interval, seconds.
        #[arg(long)]
        dt: Option<f64>,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Run one fault-scenario variant and write its trace.
    Simulate {
        case: PathBuf,
        /// One of: full, fdne, tsa, fdne+tsa.
        #[arg(long)]
        variant: String,
        /// Coefficient document for the fdne variants; identified from the
        /// case when omitted.
        #[arg(long)]
        coeffs: Option<PathBuf>,
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Additionally write one (t, value) two-column file per channel.
        #[arg(long)]
        emit_plot_data: bool,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Run all four variants described by a run manifest and write the
    /// comparison report.
    Compare {
        /// Run manifest (TOML).
        manifest: PathBuf,
        /// Additionally write one (t, value) file per boundary-power trace.
        #[arg(long)]
        emit_plot_data: bool,
    },
}

#[derive(Args)]
struct OutputArgs {
    /// Artifact directory (created if absent).
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct ScenarioArgs {
    /// EMT step, seconds.
    #[arg(long)]
    dt: Option<f64>,
    /// Run length, seconds.
    #[arg(long)]
    duration: Option<f64>,
    /// Faulted bus id.
    #[arg(long)]
    fault_bus: Option<u32>,
    /// Fault application time, seconds.
    #[arg(long)]
    fault_on: Option<f64>,
    /// Fault clearing time, seconds.
    #[arg(long)]
    fault_off: Option<f64>,
    /// Fault conductance, pu.
    #[arg(long)]
    fault_g: Option<f64>,
}

impl ScenarioArgs {
    fn apply(&self, cfg: &mut ScenarioConfig) {
        if let Some(v) = self.dt {
            cfg.dt = v;
        }
        if let Some(v) = self.duration {
            cfg.duration = v;
        }
        if let Some(v) = self.fault_bus {
            cfg.fault.bus = gridequiv::BusId(v);
        }
        if let Some(v) = self.fault_on {
            cfg.fault.t_on = v;
        }
        if let Some(v) = self.fault_off {
            cfg.fault.t_off = v;
        }
        if let Some(v) = self.fault_g {
            cfg.fault.conductance = v;
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::CaseFormat(_)
        | Error::CaseInvariant(_)
        | Error::UnknownBus(_)
        | Error::ZeroImpedanceBranch { .. }
        | Error::OperatingPointMismatch { .. }
        | Error::Invalid(_)
        | Error::Io(_) => EXIT_INPUT,
        Error::NotConverged { .. } | Error::UnstableModel { .. } => EXIT_NOT_CONVERGED,
        Error::SingularBlock { .. }
        | Error::IsolatedNode(_)
        | Error::NonFinite { .. }
        | Error::RankDeficient { .. }
        | Error::WindowMismatch { .. } => EXIT_NUMERICAL,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Reduce { case, out } => cmd_reduce(&case, &out_dir(out.out)?),
        Command::Identify {
            case,
            order,
            seed,
            amplitude,
            f_lo,
            f_hi,
            tones,
            probe_duration,
            dt,
            out,
        } => {
            let case = CaseFile::load(&case)?;
            let mut probe = default_probe(dt.unwrap_or(ScenarioConfig::default().dt));
            probe.seed = seed;
            if let Some(v) = amplitude {
                probe.amplitude = v;
            }
            if let Some(v) = f_lo {
                probe.f_lo_hz = v;
            }
            if let Some(v) = f_hi {
                probe.f_hi_hz = v;
            }
            if let Some(v) = tones {
                probe.tones = v;
            }
            if let Some(v) = probe_duration {
                probe.duration_s = v;
            }
            cmd_identify(&case, &probe, order, &out_dir(out.out)?)
        }
        Command::Simulate {
            case,
            variant,
            coeffs,
            scenario,
            emit_plot_data,
            out,
        } => {
            let case = CaseFile::load(&case)?;
            let variant = parse_variant(&variant)?;
            let mut cfg = ScenarioConfig::default();
            scenario.apply(&mut cfg);
            let dir = out_dir(out.out)?;
            let coeffs = load_or_identify(&case, variant, coeffs.as_deref(), &cfg)?;
            let result = run_scenario(&case, variant, coeffs.as_ref(), &cfg)?;
            write_trace(&dir, &result, emit_plot_data)?;
            println!(
                "{variant}: {} steps in {:.2} s, trace written to {}",
                result.boundary_p.len(),
                result.runtime_s,
                dir.display()
            );
            Ok(())
        }
        Command::Compare { manifest, emit_plot_data } => {
            let m = RunManifest::load(&manifest)?;
            cmd_compare(&m, emit_plot_data)
        }
    }
}

fn parse_variant(s: &str) -> Result<Variant, Error> {
    match s {
        "full" => Ok(Variant::Full),
        "fdne" => Ok(Variant::Fdne),
        "tsa" => Ok(Variant::Tsa),
        "fdne+tsa" => Ok(Variant::FdneTsa),
        other => Err(Error::Invalid(format!(
            "unknown variant {other:?}; expected one of: full, fdne, tsa, fdne+tsa"
        ))),
    }
}

/// Resolve the artifact directory (env override wins) and create it.
fn out_dir(flag: PathBuf) -> Result<PathBuf, Error> {
    let dir = match std::env::var_os(OUTPUT_DIR_ENV) {
        Some(v) => PathBuf::from(v),
        None => flag,
    };
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn cmd_reduce(case_path: &Path, dir: &Path) -> Result<(), Error> {
    let case = CaseFile::load(case_path)?;
    let eq = aggregate_generators(&case)?;
    let red = reduce_external(&case, &eq)?;
    write_toml(&dir.join("equivalent_machine.toml"), &eq)?;
    write_toml(&dir.join("reduced_network.toml"), &red)?;
    println!(
        "aggregate machine: {:.0} MVA, H = {:.3} s, X'd = {:.4} pu (system base)",
        eq.s_mva, eq.h_s, eq.xdp_system_pu
    );
    println!(
        "two-port at bus {}: y_bb = {:.4}{:+.4}j, y_bg = {:.4}{:+.4}j (asymmetry {:.1e})",
        red.boundary,
        red.y_bb.re,
        red.y_bb.im,
        red.y_bg.re,
        red.y_bg.im,
        red.asymmetry()
    );
    println!("artifacts written to {}", dir.display());
    Ok(())
}

fn cmd_identify(
    case: &CaseFile,
    probe: &ProbeConfig,
    order: usize,
    dir: &Path,
) -> Result<(), Error> {
    let (coeffs, fit) = identify_fdne(case, probe, order, 1.0, 1e9)?;
    coeffs.save(&dir.join("coefficients.toml"))?;
    write_toml(&dir.join("fit_report.toml"), &fit)?;
    let worst_pole = fit.pole_moduli.iter().cloned().fold(0.0_f64, f64::max);
    println!(
        "order {} fit over {} samples: innovation {:.3e} of output {:.3e}, worst pole modulus {:.6}",
        coeffs.order, fit.samples, fit.innovation_rms, fit.output_rms, worst_pole
    );
    println!("artifacts written to {}", dir.display());
    if !fit.stable {
        return Err(Error::UnstableModel { modulus: worst_pole });
    }
    Ok(())
}

fn load_or_identify(
    case: &CaseFile,
    variant: Variant,
    coeffs: Option<&Path>,
    cfg: &ScenarioConfig,
) -> Result<Option<FdneCoefficients>, Error> {
    if !variant.needs_fdne() {
        return Ok(None);
    }
    match coeffs {
        Some(p) => Ok(Some(FdneCoefficients::load(p)?)),
        None => {
            let (c, fit) = identify_fdne(case, &default_probe(cfg.dt), DEFAULT_FDNE_ORDER, 1.0, 1e9)?;
            if !fit.stable {
                let worst = fit.pole_moduli.iter().cloned().fold(0.0_f64, f64::max);
                return Err(Error::UnstableModel { modulus: worst });
            }
            Ok(Some(c))
        }
    }
}

fn cmd_compare(m: &RunManifest, emit_plot_data: bool) -> Result<(), Error> {
    let case = CaseFile::load(&m.case)?;
    let cfg = m.scenario_config();
    let dir = out_dir(m.output_dir.clone())?;

    let mut probe = default_probe(cfg.dt);
    probe.seed = m.seed;
    let order = m.params.order.unwrap_or(DEFAULT_FDNE_ORDER);
    let (coeffs, fit) = identify_fdne(&case, &probe, order, 1.0, 1e9)?;
    if !fit.stable {
        let worst = fit.pole_moduli.iter().cloned().fold(0.0_f64, f64::max);
        return Err(Error::UnstableModel { modulus: worst });
    }
    coeffs.save(&dir.join("coefficients.toml"))?;

    let mut results = Vec::new();
    for v in Variant::ALL {
        let r = run_scenario(&case, v, Some(&coeffs), &cfg)?;
        write_trace(&dir, &r, emit_plot_data)?;
        results.push(r);
    }
    let report = compare(&results, &cfg)?;
    let text = report.to_string();
    std::fs::write(dir.join("report.txt"), &text)?;
    write_toml(&dir.join("metrics.toml"), &report)?;
    print!("{text}");
    println!("artifacts written to {}", dir.display());
    Ok(())
}

fn write_trace(dir: &Path, r: &ScenarioResult, emit_plot_data: bool) -> Result<(), Error> {
    let tag = r.variant.to_string().replace('+', "_");
    std::fs::write(dir.join(format!("trace_{tag}.csv")), r.trace.to_csv())?;

    // boundary power is derived from the trace, not a channel of it
    let mut p = String::new();
    for (k, v) in r.boundary_p.iter().enumerate() {
        p.push_str(&format!("{} {}\n", r.trace.time(k), v));
    }
    std::fs::write(dir.join(format!("boundary_p_{tag}.dat")), p)?;

    if emit_plot_data {
        for name in r.trace.names() {
            let data = r.trace.channel(name).unwrap();
            let mut out = String::new();
            for (k, v) in data.iter().enumerate() {
                out.push_str(&format!("{} {}\n", r.trace.time(k), v));
            }
            let fname = format!("plot_{tag}_{}.dat", name.replace([':', '/'], "_"));
            std::fs::write(dir.join(fname), out)?;
        }
    }
    Ok(())
}

fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let text = toml::to_string_pretty(value).map_err(|e| Error::Invalid(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}
