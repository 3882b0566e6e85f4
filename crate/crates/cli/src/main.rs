//! `iris-sim`: scenario-driven batch front end.
//!
//! Subcommands mirror the campaign workflow: `validate` a scenario file,
//! `run` it as a seeded Monte Carlo campaign (optionally swept over
//! parameter grids), `topo` to materialise or inspect deployments, and
//! `report` to reduce a finished campaign's rows to CDF or boxplot form.
//!
//! Exit codes: 0 success, 1 configuration or validation problem, 2 runtime
//! assertion (an engine audit tripped mid-run).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use iris_core::campaign::{self, CampaignError, CampaignSpec};
use iris_core::engine::EngineError;
use iris_core::metrics;
use iris_core::scenario::Scenario;
use iris_core::topology;

#[derive(Parser)]
#[command(name = "iris-sim", version, about = "IRIS pipeline network simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check a scenario file and print its fully-resolved configuration.
    Validate { scenario: PathBuf },
    /// Run a Monte Carlo campaign and write CSV artifacts.
    Run {
        scenario: PathBuf,
        /// Runs per grid cell; run i uses seed base+i.
        #[arg(long, default_value_t = 50)]
        runs: u32,
        /// Base seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory (one subdirectory per sweep cell).
        #[arg(long)]
        out: PathBuf,
        /// Worker threads; 0 means one per core. IRIS_MAX_WORKERS caps it.
        #[arg(long, default_value_t = 0)]
        parallel: usize,
        /// Sweep axis `path=v1,v2,...`; repeat for a grid.
        #[arg(long = "sweep")]
        sweeps: Vec<String>,
    },
    /// Deployment tools.
    Topo {
        #[command(subcommand)]
        cmd: TopoCmd,
    },
    /// Reduce a campaign's runs.csv to plot-ready tables on stdout.
    Report {
        #[command(subcommand)]
        cmd: ReportCmd,
    },
}

#[derive(Subcommand)]
enum TopoCmd {
    /// Materialise the scenario's topology to a positions file.
    Gen {
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print deployment statistics.
    Show { scenario: PathBuf },
}

#[derive(Subcommand)]
enum ReportCmd {
    /// Formation-time CDF over the formed runs.
    Cdf { runs_csv: PathBuf },
    /// Formation-time boxplot statistics over the formed runs.
    Box { runs_csv: PathBuf },
}

/// Failures sorted into the two nonzero exit classes.
enum CliError {
    Validation(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Runtime(m) => m,
        }
    }
}

impl From<CampaignError> for CliError {
    fn from(e: CampaignError) -> Self {
        match e {
            CampaignError::Engine(EngineError::AuditFailed { .. }) => {
                CliError::Runtime(e.to_string())
            }
            other => CliError::Validation(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version are successes; anything else is a usage
            // problem and lands in the validation exit class.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<(), CliError> {
    match cmd {
        Cmd::Validate { scenario } => validate(&scenario),
        Cmd::Run {
            scenario,
            runs,
            seed,
            out,
            parallel,
            sweeps,
        } => run(&scenario, runs, seed, &out, parallel, &sweeps),
        Cmd::Topo { cmd } => topo(cmd),
        Cmd::Report { cmd } => report(cmd),
    }
}

fn validate(path: &Path) -> Result<(), CliError> {
    let sc = Scenario::from_path(path).map_err(|e| CliError::Validation(e.to_string()))?;
    println!("{} is valid; resolved configuration:\n", path.display());
    print!("{}", sc.resolved_toml());
    Ok(())
}

fn run(
    path: &Path,
    runs: u32,
    seed: u64,
    out: &Path,
    parallel: usize,
    sweeps: &[String],
) -> Result<(), CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
    let axes = sweeps
        .iter()
        .map(|s| campaign::parse_sweep_axis(s))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Validation(e.to_string()))?;
    let cells =
        campaign::sweep_grid(&text, &axes).map_err(|e| CliError::Validation(e.to_string()))?;

    // Probe the output tree before burning any compute.
    std::fs::create_dir_all(out)
        .and_then(|()| {
            let probe = out.join(".write-probe");
            std::fs::write(&probe, b"")?;
            std::fs::remove_file(&probe)
        })
        .map_err(|e| CliError::Validation(format!("output dir {}: {e}", out.display())))?;

    let spec = CampaignSpec {
        runs,
        base_seed: seed,
        workers: effective_workers(parallel),
    };
    let single_cell = cells.len() == 1;
    for cell in &cells {
        let dir = if single_cell {
            out.to_path_buf()
        } else {
            out.join(&cell.label)
        };
        std::fs::create_dir_all(&dir)
            .map_err(|e| CliError::Validation(format!("output dir {}: {e}", dir.display())))?;
        let rows = campaign::run_campaign(&cell.scenario, &spec)?;
        write(&dir, "runs.csv", &campaign::runs_csv(&rows))?;
        write(&dir, "manifest.toml", &manifest(&cell.scenario, &spec, &cell.label))?;
        let formed: Vec<f64> = rows.iter().filter_map(|r| r.formation_time_s).collect();
        if let Ok(cdf) = metrics::Cdf::from_samples(&formed) {
            write(&dir, "cdf.csv", &campaign::cdf_csv(&cdf))?;
        }
        if let Ok(stats) = metrics::boxplot_stats(&formed) {
            write(&dir, "box.csv", &campaign::box_csv(&stats))?;
        }
        let p90 = metrics::percentile(&formed, 90.0)
            .map(|v| format!("{:.2} h", v / 3600.0))
            .unwrap_or_else(|_| "n/a".into());
        println!(
            "{}: {}/{} formed, p90 formation {}",
            cell.label,
            formed.len(),
            rows.len(),
            p90
        );
    }
    Ok(())
}

fn effective_workers(requested: usize) -> usize {
    let wanted = if requested == 0 {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        requested
    };
    match std::env::var("IRIS_MAX_WORKERS") {
        Ok(v) => match v.parse::<usize>() {
            Ok(cap) if cap >= 1 => wanted.min(cap),
            _ => wanted,
        },
        Err(_) => wanted,
    }
}

fn manifest(sc: &Scenario, spec: &CampaignSpec, label: &str) -> String {
    format!(
        "# Campaign cell {label}: seeds {}..={}\nruns = {}\nbase_seed = {}\n\n{}",
        spec.base_seed,
        spec.base_seed + spec.runs as u64 - 1,
        spec.runs,
        spec.base_seed,
        sc.resolved_toml()
    )
}

fn write(dir: &Path, name: &str, content: &str) -> Result<(), CliError> {
    std::fs::write(dir.join(name), content)
        .map_err(|e| CliError::Runtime(format!("writing {}/{name}: {e}", dir.display())))
}

fn topo(cmd: TopoCmd) -> Result<(), CliError> {
    match cmd {
        TopoCmd::Gen { scenario, out } => {
            let sc = Scenario::from_path(&scenario)
                .map_err(|e| CliError::Validation(e.to_string()))?;
            let topo = topology::generate(&sc.topology, sc.seed)
                .map_err(|e| CliError::Validation(e.to_string()))?;
            topology::save(&topo, &out).map_err(|e| CliError::Runtime(e.to_string()))?;
            println!(
                "wrote {} nodes over {:.1} km to {}",
                topo.n_nodes(),
                topo.length_km(),
                out.display()
            );
            Ok(())
        }
        TopoCmd::Show { scenario } => {
            let sc = Scenario::from_path(&scenario)
                .map_err(|e| CliError::Validation(e.to_string()))?;
            let topo = topology::generate(&sc.topology, sc.seed)
                .map_err(|e| CliError::Validation(e.to_string()))?;
            let gaps: Vec<f64> = topo
                .positions_km
                .windows(2)
                .map(|w| w[1] - w[0])
                .collect();
            let (mut min, mut max, mut sum) = (f64::INFINITY, 0.0f64, 0.0);
            for &g in &gaps {
                min = min.min(g);
                max = max.max(g);
                sum += g;
            }
            println!("nodes:       {}", topo.n_nodes());
            println!("length:      {:.3} km", topo.length_km());
            println!("range:       {:.1} km", topo.range_km);
            println!(
                "gaps:        min {:.3} / mean {:.3} / max {:.3} km",
                min,
                sum / gaps.len() as f64,
                max
            );
            Ok(())
        }
    }
}

fn report(cmd: ReportCmd) -> Result<(), CliError> {
    let path = match &cmd {
        ReportCmd::Cdf { runs_csv } | ReportCmd::Box { runs_csv } => runs_csv.clone(),
    };
    let times = formation_column(&path)?;
    match cmd {
        ReportCmd::Cdf { .. } => {
            let cdf = metrics::Cdf::from_samples(&times)
                .map_err(|e| CliError::Validation(e.to_string()))?;
            print!("{}", campaign::cdf_csv(&cdf));
        }
        ReportCmd::Box { .. } => {
            let stats = metrics::boxplot_stats(&times)
                .map_err(|e| CliError::Validation(e.to_string()))?;
            print!("{}", campaign::box_csv(&stats));
        }
    }
    Ok(())
}

/// Pull formation_time_s out of a runs.csv, skipping unformed runs.
fn formation_column(path: &Path) -> Result<Vec<f64>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| CliError::Validation(format!("{}: empty file", path.display())))?;
    let col = header
        .split(',')
        .position(|c| c == "formation_time_s")
        .ok_or_else(|| {
            CliError::Validation(format!("{}: no formation_time_s column", path.display()))
        })?;
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let cell = line.split(',').nth(col).unwrap_or("");
        if cell.is_empty() {
            continue;
        }
        let v: f64 = cell.parse().map_err(|_| {
            CliError::Validation(format!(
                "{}:{}: bad formation_time_s {cell:?}",
                path.display(),
                i + 2
            ))
        })?;
        out.push(v);
    }
    Ok(out)
}
