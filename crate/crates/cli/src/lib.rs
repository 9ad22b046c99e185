//! `opmlab` command line.
//!
//! Exit codes: 0 on success, 1 for usage and configuration errors, 2 when
//! a simulation, fit or I/O step fails.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use opmlab::budget::noise_components;
use opmlab::config::{Config, SeedSource};
use opmlab::io;
use opmlab::lockin::fit_resonance;
use opmlab::model::xi2_from_db;
use opmlab::sim::{simulate_carrier_cycles, simulate_field_scan, simulate_quadrature_cycles, simulate_v_cycles, SimMode, SimPlan};
use opmlab::spectral::{fit_noise_budget, psd_hann, BudgetFitOptions};
use opmlab::sweep::{density_provenance, fit_eq2, run_sweep, Eq2Options};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Runtime(#[from] opmlab::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Runtime(opmlab::Error::Config(_)) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "opmlab", version, about = "Quantum-noise simulation and analysis for optically pumped magnetometers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate acquisition cycles at one operating point and write the traces.
    Simulate(SimulateArgs),
    /// Simulate a field scan, fit the resonance.
    Scan(PointArgs),
    /// Simulate cycles and write their averaged PSD.
    Spectrum(PointArgs),
    /// Run the density × squeezing sweep.
    Sweep(SweepArgs),
    /// Fit the optical noise budget to a spectrum CSV.
    FitBudget(FitBudgetArgs),
    /// Fit the density model to a sweep CSV at one analysis frequency.
    FitEq2(Eq2Args),
    /// Number-optimized quantum advantage from a sweep CSV.
    Advantage(Eq2Args),
}

#[derive(Debug, Args)]
struct ConfigArg {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PointArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Atomic density in atoms/cm³.
    #[arg(long, default_value_t = 4.3e12)]
    density: f64,
    /// Input squeezing in dB (negative is squeezed).
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    squeezing_db: f64,
    /// Output directory; defaults to the config's `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TraceFormat {
    Csv,
    Bin,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    point: PointArgs,
    #[arg(long, value_enum, default_value_t = TraceFormat::Csv)]
    format: TraceFormat,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FitBudgetArgs {
    /// Spectrum CSV (freq_hz, psd_v2hz).
    #[arg(long)]
    from: PathBuf,
    /// Number of averaged periodograms behind the spectrum.
    #[arg(long, default_value_t = 50)]
    averages: usize,
    /// Fit s_mba as well; requires --spn-reference.
    #[arg(long, requires = "spn_reference")]
    mba_free: bool,
    /// Spin-projection level from an unpumped spectrum, V²/Hz.
    #[arg(long)]
    spn_reference: Option<f64>,
    /// Starting linewidth, s⁻¹.
    #[arg(long)]
    hint: Option<f64>,
    #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
    range: Option<Vec<f64>>,
    /// JSON output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct Eq2Args {
    #[command(flatten)]
    config: ConfigArg,
    /// Sweep CSV.
    #[arg(long)]
    from: PathBuf,
    /// Analysis frequency in Hz.
    #[arg(long)]
    freq: f64,
    /// Include the back-action term.
    #[arg(long)]
    with_mba: bool,
    /// Bootstrap resamples; defaults to the config value.
    #[arg(long)]
    resamples: Option<usize>,
    /// Bootstrap seed; defaults to the effective config seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Provenance written next to every artifact directory.
#[derive(Debug, Serialize)]
struct Manifest {
    tool: &'static str,
    version: &'static str,
    command: String,
    config_path: Option<PathBuf>,
    /// SHA-256 of the config file bytes, or of the canonical default config.
    config_sha256: String,
    seed: u64,
    seed_source: SeedSource,
    densities: Vec<DensityEntry>,
    outputs: Vec<String>,
}

#[derive(Debug, Serialize)]
struct DensityEntry {
    n_cm3: f64,
    provenance: &'static str,
}

struct LoadedConfig {
    cfg: Config,
    path: Option<PathBuf>,
    sha256: String,
    seed: u64,
    seed_source: SeedSource,
}

fn load_config(arg: &ConfigArg) -> CliResult<LoadedConfig> {
    let (cfg, bytes) = match &arg.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
            (Config::parse(&text)?, text.into_bytes())
        }
        None => {
            let cfg = Config::default();
            let text = toml::to_string(&cfg).map_err(|e| opmlab::Error::Config(e.to_string()))?;
            (cfg, text.into_bytes())
        }
    };
    let (seed, seed_source) = cfg.effective_seed()?;
    Ok(LoadedConfig {
        cfg,
        path: arg.config.clone(),
        sha256: hex::encode(Sha256::digest(&bytes)),
        seed,
        seed_source,
    })
}

impl LoadedConfig {
    fn out_dir(&self, out: &Option<PathBuf>) -> CliResult<PathBuf> {
        let dir = out.clone().unwrap_or_else(|| self.cfg.output_dir.clone());
        fs::create_dir_all(&dir).map_err(opmlab::Error::from)?;
        Ok(dir)
    }

    fn plan(&self, p: &PointArgs) -> CliResult<SimPlan> {
        let params = self.cfg.params(p.density)?.with_squeezing(xi2_from_db(p.squeezing_db));
        let sweep = self.cfg.sweep_config(self.seed)?;
        let plan = sweep.plan(params, self.seed);
        plan.validate()?;
        Ok(plan)
    }

    fn write_manifest(&self, dir: &Path, command: &str, densities: &[f64], outputs: Vec<String>) -> CliResult<()> {
        let manifest = Manifest {
            tool: "opmlab",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            config_path: self.path.clone(),
            config_sha256: self.sha256.clone(),
            seed: self.seed,
            seed_source: self.seed_source,
            densities: densities
                .iter()
                .map(|&n| DensityEntry {
                    n_cm3: n,
                    provenance: density_provenance(n),
                })
                .collect(),
            outputs,
        };
        io::write_json(&dir.join("manifest.json"), &manifest)?;
        Ok(())
    }
}

fn emit_json<T: Serialize>(value: &T, out: &Option<PathBuf>) -> CliResult<()> {
    match out {
        Some(path) => io::write_json(path, value)?,
        None => {
            let s = serde_json::to_string_pretty(value).map_err(opmlab::Error::from)?;
            println!("{s}");
        }
    }
    Ok(())
}

fn cmd_simulate(a: &SimulateArgs) -> CliResult<()> {
    let lc = load_config(&a.point.config)?;
    let plan = lc.plan(&a.point)?;
    let cycles = match plan.mode {
        SimMode::Baseband => simulate_quadrature_cycles(&plan)?,
        SimMode::Carrier => simulate_carrier_cycles(&plan)?,
    };
    let dir = lc.out_dir(&a.point.out)?;
    let mut outputs = Vec::with_capacity(cycles.len());
    for (i, ts) in cycles.iter().enumerate() {
        let name = match a.format {
            TraceFormat::Csv => format!("trace_{i:03}.csv"),
            TraceFormat::Bin => format!("trace_{i:03}.bin"),
        };
        let path = dir.join(&name);
        match a.format {
            TraceFormat::Csv => io::write_trace_csv(&path, ts)?,
            TraceFormat::Bin => io::write_trace_bin(&path, ts)?,
        }
        outputs.push(name);
    }
    lc.write_manifest(&dir, "simulate", &[a.point.density], outputs)?;
    eprintln!("wrote {} cycles to {}", cycles.len(), dir.display());
    Ok(())
}

fn cmd_scan(a: &PointArgs) -> CliResult<()> {
    let lc = load_config(&a.config)?;
    let plan = lc.plan(a)?;
    let scan = simulate_field_scan(&plan)?;
    if scan.non_adiabatic {
        eprintln!("warning: scan rate is not adiabatic for this linewidth");
    }
    let fit = fit_resonance(&scan, plan.params.field.gyromagnetic_ratio)?;
    let dir = lc.out_dir(&a.out)?;
    io::write_scan_csv(&dir.join("scan.csv"), &scan)?;
    io::write_json(&dir.join("resonance.json"), &fit)?;
    lc.write_manifest(&dir, "scan", &[a.density], vec!["scan.csv".into(), "resonance.json".into()])?;
    Ok(())
}

fn cmd_spectrum(a: &PointArgs) -> CliResult<()> {
    let lc = load_config(&a.config)?;
    let plan = lc.plan(a)?;
    let spec = psd_hann(&simulate_v_cycles(&plan)?)?;
    let model = noise_components(&plan.params)?;
    let dir = lc.out_dir(&a.out)?;
    io::write_spectrum_csv(&dir.join("spectrum.csv"), &spec)?;
    io::write_json(&dir.join("budget_model.json"), &model)?;
    lc.write_manifest(&dir, "spectrum", &[a.density], vec!["spectrum.csv".into(), "budget_model.json".into()])?;
    Ok(())
}

fn cmd_sweep(a: &SweepArgs) -> CliResult<()> {
    let lc = load_config(&a.config)?;
    let cfg = lc.cfg.sweep_config(lc.seed)?;
    let rows = run_sweep(&cfg)?;
    let failed = rows.iter().filter(|r| !r.is_ok()).count();
    let dir = lc.out_dir(&a.out)?;
    io::write_sweep_csv(&dir.join("sweep.csv"), &rows)?;
    lc.write_manifest(&dir, "sweep", &cfg.densities, vec!["sweep.csv".into()])?;
    eprintln!("{} rows ({failed} failed) written to {}", rows.len(), dir.join("sweep.csv").display());
    Ok(())
}

fn cmd_fit_budget(a: &FitBudgetArgs) -> CliResult<()> {
    if a.averages == 0 {
        return Err(CliError::Usage("--averages must be at least 1".into()));
    }
    let spec = io::read_spectrum_csv(&a.from, a.averages)?;
    let mut opts = BudgetFitOptions {
        mba_fixed_zero: !a.mba_free,
        linewidth_hint: a.hint,
        spn_reference: a.spn_reference,
        ..BudgetFitOptions::default()
    };
    if let Some(r) = &a.range {
        opts.freq_range = (r[0], r[1]);
    }
    emit_json(&fit_noise_budget(&spec, &opts)?, &a.out)
}

fn eq2_fit(a: &Eq2Args) -> CliResult<opmlab::sweep::Eq2Fit> {
    let lc = load_config(&a.config)?;
    let rows = io::read_sweep_csv(&a.from)?;
    let base = lc.cfg.params(rows.first().map(|r| r.n).unwrap_or(4.3e12))?;
    let opts = Eq2Options {
        linewidth_model: base.linewidth,
        transmission: Some(base.transmission),
        bootstrap_resamples: a.resamples.unwrap_or(lc.cfg.analysis.bootstrap_resamples),
        seed: a.seed.unwrap_or(lc.seed),
        density_range: lc.cfg.analysis.advantage_density_range,
    };
    Ok(fit_eq2(&rows, opmlab::angular(a.freq), !a.with_mba, &opts)?)
}

fn cmd_fit_eq2(a: &Eq2Args) -> CliResult<()> {
    emit_json(&eq2_fit(a)?, &a.out)
}

fn cmd_advantage(a: &Eq2Args) -> CliResult<()> {
    let fit = eq2_fit(a)?;
    let report = fit.advantage.ok_or_else(|| {
        opmlab::Error::InsufficientData("sweep has no squeezed rows to compare against".into())
    })?;
    emit_json(&report, &a.out)
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Scan(a) => cmd_scan(a),
        Command::Spectrum(a) => cmd_spectrum(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::FitBudget(a) => cmd_fit_budget(a),
        Command::FitEq2(a) => cmd_fit_eq2(a),
        Command::Advantage(a) => cmd_advantage(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("opmlab: {e}");
            e.exit_code()
        }
    }
}
