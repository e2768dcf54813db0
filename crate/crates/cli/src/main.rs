mod manifest;
mod matrix;
mod overrides;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use thiserror::Error;
use toml::Table;

use endcloud_core::sched::{decisions_csv, Instance};
use endcloud_core::sim::{run_simulation, MetricsReport, SimConfig, CSV_HEADER};
use endcloud_core::verify::{self, Fault};

use manifest::{sha256_hex, Manifest};
use matrix::{format_value, MatrixSpec};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Property(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Property(_) => 2,
            CliError::Io { .. } => 3,
        }
    }
}

#[derive(Parser)]
#[command(name = "endcloud", version, about = "End/cloud MoE pipeline simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one config and write its report and manifest.
    Run {
        /// Config TOML, or a manifest JSON written by an earlier run.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Dotted-path override, e.g. `--set scheduler.alpha=0.3`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
        #[arg(long, default_value = "out/run")]
        out: PathBuf,
    },
    /// Run every point of an experiment matrix into one CSV.
    Sweep {
        /// Matrix TOML, or a manifest JSON written by an earlier sweep.
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        jobs: Option<usize>,
        /// Overrides the matrix's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the oracle suite and print a pass/fail table.
    Verify {
        /// Only checks whose name contains this string.
        #[arg(long)]
        filter: Option<String>,
        /// Also write the table and the brute-force gap report here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, hide = true)]
        inject_fault: Option<Fault>,
    },
    /// Place one scheduling instance and print the decisions as CSV.
    Schedule {
        #[arg(long)]
        instance: PathBuf,
    },
}

const REPORTED_FIELDS: [&str; 5] = ["mode", "num_experts", "num_groups", "request_rate", "link_fluctuation"];

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

fn parse_table(text: &str, what: &str) -> Result<Table, CliError> {
    toml::from_str(text).map_err(|e| CliError::Validation(format!("cannot parse {what}: {}", e.message())))
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "json")
}

fn to_config(table: &Table) -> Result<SimConfig, CliError> {
    let text = toml::to_string(table).map_err(|e| CliError::Validation(e.to_string()))?;
    let cfg = SimConfig::from_toml_str(&text).map_err(|e| CliError::Validation(e.to_string()))?;
    cfg.validate().map_err(|e| CliError::Validation(e.to_string()))?;
    Ok(cfg)
}

fn simulate(cfg: &SimConfig) -> Result<MetricsReport, CliError> {
    run_simulation(cfg).map_err(|e| CliError::Validation(e.to_string()))
}

fn cmd_run(config: &Path, seed: Option<u64>, sets: &[String], out: &Path) -> Result<(), CliError> {
    let text = read(config)?;
    let base = if is_json(config) {
        let m = Manifest::from_json(&text)?;
        let cfg = m
            .config
            .ok_or_else(|| CliError::Validation("manifest carries no run config".into()))?;
        if sha256_hex(cfg.as_bytes()) != m.config_sha256 {
            return Err(CliError::Validation("manifest config does not match its hash".into()));
        }
        cfg
    } else {
        text
    };
    let mut table = parse_table(&base, "config")?;
    for s in sets {
        overrides::apply(&mut table, s)?;
    }
    if let Some(seed) = seed {
        table.insert("seed".into(), toml::Value::Integer(seed as i64));
    }
    let cfg = to_config(&table)?;
    let report = simulate(&cfg)?;

    create_dir(out)?;
    let resolved = cfg.to_toml_string();
    let mut m = Manifest::new("run", vec![cfg.seed], sha256_hex(resolved.as_bytes()));
    m.config = Some(resolved);
    m.outputs.push(manifest::write(&out.join("report.csv"), &report.to_csv())?);
    let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    m.outputs.push(manifest::write(&out.join("report.json"), &json)?);
    if let Some(trace) = report.trace_csv() {
        m.outputs.push(manifest::write(&out.join("trace.csv"), &trace)?);
    }
    manifest::write(&out.join("manifest.json"), &m.to_json())?;
    print!("{}", report.to_csv());
    Ok(())
}

fn cmd_sweep(matrix: &Path, jobs: Option<usize>, out: Option<&Path>) -> Result<(), CliError> {
    let text = read(matrix)?;
    let mut spec = if is_json(matrix) {
        let m = Manifest::from_json(&text)?;
        m.matrix
            .ok_or_else(|| CliError::Validation("manifest carries no matrix".into()))?
    } else {
        MatrixSpec::from_toml_str(&text)?
    };
    spec.inline_base(matrix.parent().unwrap_or(Path::new(".")))?;
    let points = spec.expand()?;
    let configs = points
        .iter()
        .map(|p| to_config(&p.config))
        .collect::<Result<Vec<_>, _>>()?;
    // One expert bank for the whole matrix, whatever the traffic seed.
    let model_seed = configs.first().map(SimConfig::model_seed);
    let configs: Vec<SimConfig> = configs
        .into_iter()
        .map(|mut c| {
            c.model_seed = c.model_seed.or(model_seed);
            c
        })
        .collect();

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        if j == 0 {
            return Err(CliError::Validation("--jobs must be at least 1".into()));
        }
        pool = pool.num_threads(j);
    }
    let pool = pool.build().map_err(|e| CliError::Validation(e.to_string()))?;
    let reports = pool.install(|| configs.par_iter().map(simulate).collect::<Result<Vec<_>, _>>())?;

    // Axes the report row already carries get no column of their own.
    let extra: Vec<usize> = (0..spec.axes.len())
        .filter(|&i| !REPORTED_FIELDS.contains(&spec.axes[i].name.as_str()))
        .collect();
    let mut csv = String::from("seed");
    for &i in &extra {
        csv.push(',');
        csv.push_str(&spec.axes[i].name);
    }
    csv.push(',');
    csv.push_str(CSV_HEADER);
    csv.push('\n');
    for (p, r) in points.iter().zip(&reports) {
        csv.push_str(&p.seed.to_string());
        for &i in &extra {
            csv.push(',');
            csv.push_str(&format_value(&p.values[i]));
        }
        csv.push(',');
        csv.push_str(&r.csv_row());
        csv.push('\n');
    }

    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(&spec.output_dir));
    create_dir(&dir)?;
    let canonical = serde_json::to_string(&spec).expect("matrix serializes");
    let mut seeds: Vec<u64> = points.iter().map(|p| p.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    let mut m = Manifest::new("sweep", seeds, sha256_hex(canonical.as_bytes()));
    m.matrix = Some(spec);
    m.outputs.push(manifest::write(&dir.join("sweep.csv"), &csv)?);
    manifest::write(&dir.join("manifest.json"), &m.to_json())?;
    print!("{csv}");
    Ok(())
}

fn cmd_verify(filter: Option<&str>, out: Option<&Path>, fault: Option<Fault>) -> Result<(), CliError> {
    let start = Instant::now();
    let results = verify::run_suite(filter, fault);
    if results.is_empty() {
        return Err(CliError::Validation(format!(
            "no check matches `{}`",
            filter.unwrap_or_default()
        )));
    }
    let mut table = String::from("status,check,cases,detail\n");
    for (r, _) in &results {
        let status = if r.passed { "PASS" } else { "FAIL" };
        table.push_str(&format!("{status},{},{},{}\n", r.name, r.cases, r.detail.replace(',', ";")));
        println!("{status:<5} {:<26} {:>6}  {}", r.name, r.cases, r.detail);
    }
    let failed: Vec<&str> = results.iter().filter(|(r, _)| !r.passed).map(|(r, _)| r.name.as_str()).collect();
    println!("{}/{} checks passed", results.len() - failed.len(), results.len());
    eprintln!("verify took {:.2?}", start.elapsed());

    if let Some(dir) = out {
        create_dir(dir)?;
        let mut m = Manifest::new("verify", Vec::new(), sha256_hex(filter.unwrap_or_default().as_bytes()));
        m.outputs.push(manifest::write(&dir.join("checks.csv"), &table)?);
        if filter.is_none_or(|f| "brute_force_gap".contains(f)) {
            let gap = verify::brute_force_gap_report(500, 12);
            let json = serde_json::to_string_pretty(&gap).expect("report serializes") + "\n";
            m.outputs.push(manifest::write(&dir.join("gap_report.json"), &json)?);
        }
        manifest::write(&dir.join("manifest.json"), &m.to_json())?;
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Property(format!("failed: {}", failed.join(", "))))
    }
}

fn cmd_schedule(instance: &Path) -> Result<(), CliError> {
    let inst = Instance::from_toml_str(&read(instance)?).map_err(CliError::Validation)?;
    let decisions = inst.place().map_err(|e| CliError::Validation(e.to_string()))?;
    print!("{}", decisions_csv(&decisions));
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Run { config, seed, sets, out } => cmd_run(config, *seed, sets, out),
        Command::Sweep { matrix, jobs, out } => cmd_sweep(matrix, *jobs, out.as_deref()),
        Command::Verify {
            filter,
            out,
            inject_fault,
        } => cmd_verify(filter.as_deref(), out.as_deref(), *inject_fault),
        Command::Schedule { instance } => cmd_schedule(instance),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
