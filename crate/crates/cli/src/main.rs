use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use serde::Deserialize;

use fracising::analysis::{analyze, render_summary, AnalysisConfig, Report, REPORT_FILE};
use fracising::campaign::{run_campaign, CampaignConfig};
use fracising::couplings::{
    asymptotic_exponent, momentum_coupling, residual_exponent, residual_subleading, CouplingTable,
    FractionalOrder, PeriodicCouplingTable,
};
use fracising::Parallelism;

const EXIT_CONFIG: u8 = 2;
const EXIT_PARTIAL: u8 = 3;
const EXIT_PRECONDITION: u8 = 4;

#[derive(Parser)]
#[command(name = "fracising", version, about = "Fractional Ising model simulations and finite-size scaling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Export real-space, residual and momentum-space coupling tables.
    Couplings {
        /// Fractional order; repeat for several.
        #[arg(long = "q", required = true, num_args = 1..)]
        q: Vec<f64>,
        /// Largest distance in the real-space table.
        #[arg(long, default_value_t = 10_000, value_parser = clap::value_parser!(u64).range(1..))]
        r_max: u64,
        /// Ring size for the image-summed column.
        #[arg(long)]
        size: Option<usize>,
        #[arg(long, default_value_t = 1e-12)]
        tolerance: f64,
        /// Momentum grid points over [-π, π].
        #[arg(long, default_value_t = 512)]
        k_points: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a simulation campaign into a record store.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Store directory; overrides `output` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (0 = one per core).
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        #[arg(long)]
        seed_override: Option<u64>,
    },
    /// Finite-size-scaling analysis of a record store.
    Analyze {
        store: PathBuf,
        /// TOML file with an `[analysis]` section; defaults to the one saved
        /// in the manifest.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory; defaults to `<store>/analysis`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        /// Replaces the bootstrap seed of the analysis.
        #[arg(long)]
        seed_override: Option<u64>,
    },
    /// Print a readable summary of an analysis report.
    Report {
        /// Analysis directory or report file.
        path: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn fail(code: u8) -> impl FnOnce(anyhow::Error) -> Failure {
    move |error| Failure { code, error }
}

fn parallelism(jobs: usize) -> Parallelism {
    match jobs {
        0 => Parallelism::Auto,
        n => Parallelism::from_jobs(n),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Couplings {
            q,
            r_max,
            size,
            tolerance,
            k_points,
            out,
        } => cmd_couplings(&q, r_max as usize, size, tolerance, k_points, &out),
        Command::Run {
            config,
            out,
            jobs,
            seed_override,
        } => cmd_run(&config, out, jobs, seed_override),
        Command::Analyze {
            store,
            config,
            out,
            jobs,
            seed_override,
        } => cmd_analyze(&store, config.as_deref(), out, jobs, seed_override),
        Command::Report { path, out } => cmd_report(&path, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn write_file(path: &Path, body: &str) -> Result<(), Failure> {
    fs::write(path, body)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(fail(1))
}

fn cmd_couplings(
    qs: &[f64],
    r_max: usize,
    size: Option<usize>,
    tolerance: f64,
    k_points: usize,
    out: &Path,
) -> Result<(), Failure> {
    let orders: Vec<FractionalOrder> = qs
        .iter()
        .map(|&q| FractionalOrder::new(q).map_err(|e| anyhow!(e)))
        .collect::<Result<_, _>>()
        .map_err(fail(EXIT_CONFIG))?;
    if k_points < 2 {
        return Err(fail(EXIT_CONFIG)(anyhow!("k_points must be at least 2")));
    }
    fs::create_dir_all(out)
        .with_context(|| format!("creating {}", out.display()))
        .map_err(fail(1))?;
    let mut summary = String::from("q,window_lo,window_hi,slope,residual_slope\n");
    for q in orders {
        let table = CouplingTable::build(q, r_max).map_err(|e| fail(EXIT_CONFIG)(anyhow!(e)))?;
        let periodic = match size {
            Some(l) => Some(
                PeriodicCouplingTable::new(&table, l, tolerance).map_err(|e| fail(EXIT_CONFIG)(anyhow!(e)))?,
            ),
            None => None,
        };
        let amp = q.amplitude();
        let s = 1.0 + q.value();
        let mut real = format!(
            "# q: {}, r_max: {r_max}, L: {}, tolerance: {tolerance:e}\nr,J,J_periodic,asymptote,residual\n",
            q.value(),
            size.map(|l| l.to_string()).unwrap_or_default()
        );
        for (i, &j) in table.values().iter().enumerate() {
            let r = i + 1;
            let jp = periodic
                .as_ref()
                .filter(|p| r <= p.size() / 2)
                .map(|p| p.at(r).to_string())
                .unwrap_or_default();
            let asym = amp * (r as f64).powf(-s);
            let _ = writeln!(real, "{r},{j:e},{jp},{asym:e},{:e}", j - asym);
        }
        write_file(&out.join(format!("couplings_q{}.csv", q.value())), &real)?;

        let mut mom = format!("# q: {}\nk,momentum_coupling,spectral_sum\n", q.value());
        for m in 0..=k_points {
            let k = -std::f64::consts::PI + 2.0 * std::f64::consts::PI * m as f64 / k_points as f64;
            let _ = writeln!(mom, "{k},{},{}", momentum_coupling(q, k), table.spectral_sum(k));
        }
        write_file(&out.join(format!("momentum_q{}.csv", q.value())), &mom)?;

        let (lo, hi) = (100, 10_000.min(r_max));
        if q.is_local() || hi <= lo {
            let _ = writeln!(summary, "{},,,,", q.value());
            continue;
        }
        let slope = asymptotic_exponent(&table, lo, hi).ok();
        let resid = residual_subleading(&table, amp, lo, hi)
            .ok()
            .and_then(|r| residual_exponent(&r).ok());
        let f = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(summary, "{},{lo},{hi},{},{}", q.value(), f(slope), f(resid));
        println!("q = {}: slope {} residual slope {}", q.value(), f(slope), f(resid));
    }
    write_file(&out.join("slopes.csv"), &summary)
}

fn load_campaign(path: &Path) -> Result<CampaignConfig, Failure> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(fail(EXIT_CONFIG))?;
    let config: CampaignConfig = toml::from_str(&text)
        .with_context(|| format!("parsing {}", path.display()))
        .map_err(fail(EXIT_CONFIG))?;
    config.validate().map_err(|e| fail(EXIT_CONFIG)(anyhow!(e)))?;
    Ok(config)
}

fn cmd_run(path: &Path, out: Option<PathBuf>, jobs: usize, seed_override: Option<u64>) -> Result<(), Failure> {
    let mut config = load_campaign(path)?;
    if let Some(seed) = seed_override {
        config.seed = seed;
    }
    let dir = out
        .or_else(|| config.output.clone())
        .ok_or_else(|| fail(EXIT_CONFIG)(anyhow!("no output directory: pass --out or set `output`")))?;
    let outcome = run_campaign(&config, &dir, parallelism(jobs)).map_err(|e| fail(1)(anyhow!(e)))?;
    let failures = outcome.failures();
    let total = outcome.manifest.points.len();
    println!(
        "{} of {total} points written to {} (manifest {})",
        total - failures.len(),
        dir.display(),
        outcome.manifest.manifest_hash
    );
    if failures.is_empty() {
        return Ok(());
    }
    for f in &failures {
        eprintln!("failed: {} ({})", f.stem, f.error.as_deref().unwrap_or("unknown error"));
    }
    Err(fail(EXIT_PARTIAL)(anyhow!("{} of {total} grid points failed", failures.len())))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AnalysisFile {
    #[serde(default)]
    analysis: AnalysisConfig,
}

fn load_analysis_config(path: &Path) -> Result<AnalysisConfig, Failure> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(fail(EXIT_CONFIG))?;
    if let Ok(c) = toml::from_str::<CampaignConfig>(&text) {
        return Ok(c.analysis.unwrap_or_default());
    }
    toml::from_str::<AnalysisFile>(&text)
        .map(|f| f.analysis)
        .with_context(|| format!("parsing {}", path.display()))
        .map_err(fail(EXIT_CONFIG))
}

fn cmd_analyze(
    store: &Path,
    config: Option<&Path>,
    out: Option<PathBuf>,
    jobs: usize,
    seed_override: Option<u64>,
) -> Result<(), Failure> {
    let mut analysis = match config {
        Some(p) => load_analysis_config(p)?,
        None => fracising::store::Manifest::read(store)
            .ok()
            .and_then(|m| m.config.analysis)
            .unwrap_or_default(),
    };
    if let Some(seed) = seed_override {
        analysis.seed = seed;
    }
    let output = analyze(store, &analysis, parallelism(jobs)).map_err(|e| fail(EXIT_PRECONDITION)(anyhow!(e)))?;
    let dir = out.unwrap_or_else(|| store.join("analysis"));
    output.write(&dir).map_err(|e| fail(1)(anyhow!(e)))?;
    print!("{}", render_summary(&output.report));
    Ok(())
}

fn cmd_report(path: &Path, out: Option<&Path>) -> Result<(), Failure> {
    let file = if path.is_dir() { path.join(REPORT_FILE) } else { path.to_path_buf() };
    let text = fs::read_to_string(&file)
        .with_context(|| format!("reading {}", file.display()))
        .map_err(fail(EXIT_PRECONDITION))?;
    let report: Report = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", file.display()))
        .map_err(fail(EXIT_PRECONDITION))?;
    let summary = render_summary(&report);
    match out {
        Some(p) => write_file(p, &summary),
        None => {
            print!("{summary}");
            Ok(())
        }
    }
}
