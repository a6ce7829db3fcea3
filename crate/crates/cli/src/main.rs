//! `contour` runs sampling experiments from JSON configs, writes presets,
//! and summarizes metric CSVs. Exit codes: 0 success, 2 config or input
//! problem, 3 numerical abort.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use contour_core::harness::{load_config, preset, run_experiment, PRESET_NAMES};
use contour_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "contour",
    about = "Contour-guided stochastic gradient Langevin experiments",
    after_help = "The CONTOUR_THREADS environment variable caps worker parallelism; \
                  CONTOUR_THREADS=1 forces the sequential path."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config file.
    Run {
        #[arg(long, value_name = "FILE")]
        config: PathBuf,
        /// Multiply the round budget, keeping everything else fixed.
        #[arg(long, value_name = "F")]
        scale: Option<f64>,
        /// Override the config's base seed.
        #[arg(long, value_name = "N")]
        seed: Option<u64>,
        /// Override the config's output directory.
        #[arg(long, value_name = "DIR")]
        out: Option<String>,
        /// Record coordinator traffic to per-trial message CSVs.
        #[arg(long)]
        log_messages: bool,
    },
    /// Write a named preset's config file.
    Preset {
        /// One of: d2_multimodal, d5_mixture, mnist_style.
        name: String,
        #[arg(long, value_name = "DIR", default_value = ".")]
        out: PathBuf,
    },
    /// Summarize two metric CSVs as per-round mean and standard error tables.
    Compare {
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        a: PathBuf,
        b: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run {
            config,
            scale,
            seed,
            out,
            log_messages,
        } => cmd_run(&config, scale, seed, out, log_messages),
        Command::Preset { name, out } => cmd_preset(&name, &out),
        Command::Compare { out, a, b } => cmd_compare(&out, &a, &b),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {}", err);
            match err {
                Error::Numerical { .. } => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}

/// Prints one line, reporting whether stdout is still writable. A reader
/// that closed the pipe early (`contour ... | head`) stops the output
/// without failing the command.
fn emit(line: &str) -> bool {
    writeln!(io::stdout(), "{}", line).is_ok()
}

fn cmd_run(
    config_path: &PathBuf,
    scale: Option<f64>,
    seed: Option<u64>,
    out: Option<String>,
    log_messages: bool,
) -> Result<u8> {
    let mut config = load_config(config_path)?;
    if let Some(factor) = scale {
        config.apply_scale(factor)?;
    }
    if let Some(base) = seed {
        config.base_seed = base;
    }
    if let Some(dir) = out {
        config.output_dir = dir;
    }
    if log_messages {
        config.log_messages = true;
    }

    let output = run_experiment(&config)?;
    let mut aborted = 0usize;
    let mut live = true;
    for trial in &output.trials {
        let line = match &trial.result.aborted {
            Some(message) => {
                aborted += 1;
                format!(
                    "trial seed {} ({}): aborted: {}",
                    trial.result.seed, trial.result.algorithm, message
                )
            }
            None => format!(
                "trial seed {} ({}): ok",
                trial.result.seed, trial.result.algorithm
            ),
        };
        if live {
            live = emit(&line);
        }
    }
    if live {
        emit(&format!(
            "{} chain steps budgeted, {} files in {}",
            output.manifest.budget_chain_steps,
            output.files.len(),
            config.output_dir
        ));
    }
    Ok(if aborted > 0 { 3 } else { 0 })
}

fn cmd_preset(name: &str, out: &PathBuf) -> Result<u8> {
    let config = preset(name).map_err(|_| {
        Error::input(format!(
            "unknown preset `{}`; available: {}",
            name,
            PRESET_NAMES.join(", ")
        ))
    })?;
    fs::create_dir_all(out)?;
    let path = out.join(format!("{}.json", name));
    fs::write(&path, config.to_json())?;
    emit(&format!("{}", path.display()));
    Ok(0)
}

/// Per-round samples of one metric across a file's trials.
type MetricRounds = BTreeMap<u64, Vec<f64>>;

const COMPARED_METRICS: [&str; 2] = ["kl", "theta_tv"];

fn cmd_compare(out: &PathBuf, a: &PathBuf, b: &PathBuf) -> Result<u8> {
    let table_a = read_metrics(a)?;
    let table_b = read_metrics(b)?;
    fs::create_dir_all(out)?;

    let mut live = emit(&format!("A = {}", a.display()));
    live = live && emit(&format!("B = {}", b.display()));
    let mut emitted = 0usize;
    for metric in COMPARED_METRICS {
        let side_a = table_a.get(metric);
        let side_b = table_b.get(metric);
        let mut rounds: Vec<u64> = side_a
            .into_iter()
            .chain(side_b)
            .flat_map(|m| m.keys().copied())
            .collect();
        rounds.sort_unstable();
        rounds.dedup();
        if rounds.is_empty() {
            continue;
        }
        emitted += 1;

        let mut csv = String::from("round,a_mean,a_stderr,b_mean,b_stderr\n");
        if live {
            live = emit(&format!("\n{}", metric));
        }
        if live {
            live = emit(&format!(
                "{:>10} {:>12} {:>10} {:>12} {:>10}",
                "round", "A mean", "A stderr", "B mean", "B stderr"
            ));
        }
        for round in rounds {
            let cell = |side: Option<&MetricRounds>| {
                side.and_then(|m| m.get(&round)).map(|xs| mean_stderr(xs))
            };
            let (a_cell, b_cell) = (cell(side_a), cell(side_b));
            let fmt_csv = |c: Option<(f64, f64)>| match c {
                Some((m, s)) => format!("{},{}", m, s),
                None => ",".to_string(),
            };
            csv.push_str(&format!(
                "{},{},{}\n",
                round,
                fmt_csv(a_cell),
                fmt_csv(b_cell)
            ));
            let fmt_col = |c: Option<(f64, f64)>| match c {
                Some((m, s)) => format!("{:>12.5} {:>10.5}", m, s),
                None => format!("{:>12} {:>10}", "-", "-"),
            };
            if live {
                live = emit(&format!(
                    "{:>10} {} {}",
                    round,
                    fmt_col(a_cell),
                    fmt_col(b_cell)
                ));
            }
        }
        let path = out.join(format!("compare_{}.csv", metric));
        fs::write(&path, csv)?;
    }
    if emitted == 0 {
        return Err(Error::input(
            "neither file has data in a comparable metric column (kl, theta_tv)",
        ));
    }
    Ok(0)
}

/// Hand-rolled reader for the harness's metrics.csv layout: a header naming
/// the columns, then one row per checkpoint per trial. Empty cells mean the
/// metric was not computed for that run.
fn read_metrics(path: &PathBuf) -> Result<BTreeMap<&'static str, MetricRounds>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::input(format!("{}: empty file", path.display())))?;
    let columns: Vec<&str> = header.split(',').collect();
    let column = |name: &str| columns.iter().position(|c| *c == name);
    let round_idx = column("round")
        .ok_or_else(|| Error::input(format!("{}: no `round` column", path.display())))?;

    let mut table: BTreeMap<&'static str, MetricRounds> = BTreeMap::new();
    let metric_idx: Vec<(usize, &'static str)> = COMPARED_METRICS
        .iter()
        .filter_map(|&m| column(m).map(|i| (i, m)))
        .collect();

    for (lineno, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != columns.len() {
            return Err(Error::input(format!(
                "{}:{}: expected {} fields, got {}",
                path.display(),
                lineno + 1,
                columns.len(),
                fields.len()
            )));
        }
        let round: u64 = fields[round_idx].parse().map_err(|_| {
            Error::input(format!(
                "{}:{}: bad round `{}`",
                path.display(),
                lineno + 1,
                fields[round_idx]
            ))
        })?;
        for &(idx, name) in &metric_idx {
            if fields[idx].is_empty() {
                continue;
            }
            let value: f64 = fields[idx].parse().map_err(|_| {
                Error::input(format!(
                    "{}:{}: bad {} value `{}`",
                    path.display(),
                    lineno + 1,
                    name,
                    fields[idx]
                ))
            })?;
            table.entry(name).or_default().entry(round).or_default().push(value);
        }
    }
    Ok(table)
}

fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
