use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use labcli::config::{load_config, parse_config};
use labcli::record::read_records;
use labcli::report::{default_keys, to_csv, to_json, Format};
use labcli::{replay, run_batch, ExperimentRecord};

#[derive(Parser)]
#[command(name = "lab", version = env!("LAB_BUILD_ID"), about = "Run, replay and report freelab experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiments of a config file and append JSON-lines records.
    Run {
        config: PathBuf,
        /// append records here instead of printing them
        #[arg(long)]
        out: Option<PathBuf>,
        /// master seed; overrides seeds in the config
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Re-run stored records (or a config) and diff against the stored outputs.
    Replay {
        record: PathBuf,
        /// replay with another seed (reported as non-comparable)
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Flatten records into CSV or a JSON summary.
    Report {
        records: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
        /// comma-separated keys; defaults to kind, label, seed, pass and all scalar outputs
        #[arg(long, value_delimiter = ',')]
        select: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn emit(out: Option<&PathBuf>, text: &str, append: bool) -> Result<()> {
    match out {
        Some(path) => {
            let mut f = std::fs::OpenOptions::new()
                .create(true)
                .append(append)
                .write(true)
                .truncate(!append)
                .open(path)
                .with_context(|| format!("opening {}", path.display()))?;
            f.write_all(text.as_bytes())?;
        }
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn summary(r: &ExperimentRecord) -> String {
    let verdict = if r.pass { "PASS" } else { "FAIL" };
    let label = r.config.label.as_deref().map(|l| format!(" [{l}]")).unwrap_or_default();
    let detail = match &r.error {
        Some(e) => e.clone(),
        None => r.verdicts.iter().filter(|v| !v.pass).map(|v| format!("{} = {:.3e} vs {:.3e}", v.name, v.value, v.threshold)).collect::<Vec<_>>().join("; "),
    };
    format!("{verdict} {}{label} seed={} {:.2}s {detail}", r.config.kind.name(), r.config.seed.unwrap_or(0), r.wall_time_s)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run { config, out, seed, jobs } => {
            let (items, batch_seed) = load_config(&config)?;
            let master = seed.or(batch_seed).unwrap_or(0);
            let records = run_batch(&items, master, seed.is_some(), jobs)?;
            let mut text = String::new();
            for r in &records {
                eprintln!("{}", summary(r));
                text.push_str(&r.to_line());
                text.push('\n');
            }
            emit(out.as_ref(), &text, true)?;
            Ok(records.iter().all(|r| r.pass))
        }
        Command::Replay { record, seed } => {
            let text = std::fs::read_to_string(&record).with_context(|| format!("reading {}", record.display()))?;
            let stored = match read_records(&text) {
                Ok(r) if !r.is_empty() => r,
                _ => {
                    // a config file: run it and report without a diff
                    let (items, batch_seed) = parse_config(&text, record.parent())?;
                    let master = seed.or(batch_seed).unwrap_or(0);
                    let records = run_batch(&items, master, seed.is_some(), 1)?;
                    for r in &records {
                        eprintln!("{}", summary(r));
                        println!("{}", r.to_line());
                    }
                    return Ok(records.iter().all(|r| r.pass));
                }
            };
            let mut all = true;
            for s in &stored {
                let rep = replay(s, seed);
                let status = if !rep.comparable {
                    "NON-COMPARABLE"
                } else if rep.matches {
                    "MATCH"
                } else {
                    "DIFFER"
                };
                eprintln!("{status} {}", summary(&rep.record));
                println!("{}", serde_json::to_string(&rep)?);
                all &= rep.ok();
            }
            Ok(all)
        }
        Command::Report { records, format, select, out } => {
            let text = std::fs::read_to_string(&records).with_context(|| format!("reading {}", records.display()))?;
            let recs = read_records(&text)?;
            let keys = if select.is_empty() { default_keys(&recs) } else { select };
            let body = match format {
                Format::Csv => to_csv(&recs, &keys)?,
                Format::Json => format!("{}\n", serde_json::to_string_pretty(&to_json(&recs, &keys))?),
            };
            emit(out.as_ref(), &body, false)?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
