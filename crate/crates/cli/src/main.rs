use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nalgebra::DMatrix;
use sva_core::basisfit::HatMatrix;
use sva_core::factorize::{parallel_analysis, PaConfig};
use sva_core::fdrkit::SignificanceSet;
use sva_core::graphsem::{build_lowdim_sem, build_sem, simulate, SemConfig};
use sva_core::{run_experiment, run_sweep, seeded, ExperimentConfig, Result, SvaError, SweepSpec};

#[derive(Parser)]
#[command(
    name = "sva",
    version,
    about = "Surrogate variable analysis experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one dataset from an SEM and write it as CSV.
    Simulate {
        /// SemConfig JSON; without it the --scenario preset is used.
        #[arg(long)]
        config: Option<PathBuf>,
        /// `lowdim` or `highdim_base`.
        #[arg(long, default_value = "lowdim")]
        scenario: String,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory for data.csv and sem.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an experiment and print its summary as JSON.
    Run {
        /// ExperimentConfig JSON; without it the --scenario preset is used.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a sensitivity sweep described by a SweepSpec JSON.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parallel analysis on a numeric CSV matrix (rows are observations).
    Pa {
        #[arg(long)]
        input: PathBuf,
        /// Center columns first and use the intercept projector.
        #[arg(long)]
        center: bool,
        #[arg(long, default_value_t = 100)]
        b: usize,
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// q-values and local FDR for a one-column CSV of p-values.
    Fdr {
        #[arg(long)]
        input: PathBuf,
        /// Write pvalue,qvalue,lfdr rows here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path)
        .map_err(|e| SvaError::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let parsed: std::result::Result<Vec<f64>, _> =
            record.iter().map(|f| f.trim().parse::<f64>()).collect();
        match parsed {
            Ok(v) => rows.push(v),
            // A non-numeric first row is a header.
            Err(_) if i == 0 => continue,
            Err(e) => {
                return Err(SvaError::Argument(format!(
                    "{}: row {}: {e}",
                    path.display(),
                    i + 1
                )))
            }
        }
    }
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 {
        return Err(SvaError::Argument(format!(
            "{}: no numeric rows",
            path.display()
        )));
    }
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(SvaError::Argument(format!(
            "{}: ragged rows",
            path.display()
        )));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn experiment_preset(name: &str) -> Result<ExperimentConfig> {
    match name {
        "lowdim" => Ok(ExperimentConfig::lowdim()),
        "highdim_base" => Ok(ExperimentConfig::highdim_base()),
        other => Err(SvaError::Config(format!(
            "unknown scenario '{other}' (expected lowdim or highdim_base)"
        ))),
    }
}

fn override_fields(
    cfg: &mut ExperimentConfig,
    scenario: Option<String>,
    seed: Option<u64>,
    reps: Option<usize>,
    out: Option<PathBuf>,
) {
    if let Some(s) = scenario {
        cfg.scenario = s;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(m) = reps {
        cfg.reps = m;
    }
    if out.is_some() {
        cfg.out_dir = out;
    }
}

fn print_json(value: serde_json::Value) -> Result<()> {
    let mut stdout = io::stdout().lock();
    serde_json::to_writer_pretty(&mut stdout, &value)?;
    writeln!(stdout)?;
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            config,
            scenario,
            n,
            seed,
            out,
        } => {
            let mut rng = seeded(seed);
            let spec = match (config, scenario.as_str()) {
                (Some(path), _) => {
                    let cfg: SemConfig = serde_json::from_str(&read_file(&path)?)
                        .map_err(|e| SvaError::Config(format!("invalid SEM config: {e}")))?;
                    build_sem(&cfg, &mut rng)?
                }
                (None, "lowdim") => build_lowdim_sem(&mut rng),
                (None, "highdim_base") => build_sem(&SemConfig::highdim_base(), &mut rng)?,
                (None, other) => {
                    return Err(SvaError::Config(format!("unknown scenario '{other}'")))
                }
            };
            let data = simulate(&spec, n, &mut rng)?;
            fs::create_dir_all(&out)?;
            data.save_csv(&out.join("data.csv"))?;
            fs::write(out.join("sem.json"), spec.to_json()?)?;
            eprintln!(
                "wrote {} rows x {} responses to {}",
                n,
                spec.j,
                out.display()
            );
        }
        Command::Run {
            config,
            scenario,
            seed,
            reps,
            out,
        } => {
            let mut cfg = match &config {
                Some(path) => ExperimentConfig::from_json(&read_file(path)?)?,
                None => experiment_preset(scenario.as_deref().unwrap_or("highdim_base"))?,
            };
            override_fields(
                &mut cfg,
                scenario.filter(|_| config.is_some()),
                seed,
                reps,
                out,
            );
            let result = run_experiment(&cfg)?;
            for f in &result.failures {
                eprintln!("rep {} {}: {}", f.rep, f.method, f.error);
            }
            print_json(serde_json::to_value(&result.summary)?)?;
        }
        Command::Sweep {
            config,
            scenario,
            seed,
            reps,
            out,
        } => {
            let mut sweep = SweepSpec::from_json(&read_file(&config)?)?;
            override_fields(&mut sweep.base, scenario, seed, reps, None);
            let result = run_sweep(&sweep, out.as_deref())?;
            for (value, why) in &result.skipped {
                eprintln!("skipped {value}: {why}");
            }
            let summaries: Vec<_> = result
                .points
                .iter()
                .map(|p| serde_json::json!({ "value": p.value, "summary": p.result.summary }))
                .collect();
            print_json(serde_json::Value::Array(summaries))?;
        }
        Command::Pa {
            input,
            center,
            b,
            alpha,
            seed,
        } => {
            let x = read_matrix(&input)?;
            let n = x.nrows();
            let hat = if center {
                HatMatrix::centering(n)
            } else {
                HatMatrix::none(n)
            };
            let r = hat.residualize(&x);
            let cfg = PaConfig {
                b,
                alpha,
                ..PaConfig::default()
            };
            let report = parallel_analysis(&r, &hat, &cfg, &mut seeded(seed))?;
            print_json(serde_json::to_value(&report)?)?;
        }
        Command::Fdr { input, out } => {
            let m = read_matrix(&input)?;
            if m.ncols() != 1 {
                return Err(SvaError::Argument(format!(
                    "expected one column of p-values, got {}",
                    m.ncols()
                )));
            }
            let p: Vec<f64> = m.column(0).iter().copied().collect();
            let set = SignificanceSet::compute(&p)?;
            let sink: Box<dyn Write> = match &out {
                Some(path) => Box::new(fs::File::create(path)?),
                None => Box::new(io::stdout().lock()),
            };
            let mut w = csv::Writer::from_writer(sink);
            w.write_record(["pvalue", "qvalue", "lfdr"])?;
            for ((pi, q), l) in p.iter().zip(&set.qvalues).zip(&set.lfdr) {
                w.write_record([pi.to_string(), q.to_string(), l.to_string()])?;
            }
            w.flush()?;
            eprintln!("pi0 = {}", set.pi0_hat);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}
