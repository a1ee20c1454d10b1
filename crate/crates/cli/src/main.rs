use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dina_core::em::{fit, EMConfig};
use dina_core::experiment::{load_experiment, run_experiment, worker_count};
use dina_core::model::simulate;
use dina_core::qmatrix::{identifiability_verdict, parse_qmatrix};
use dina_core::witness::{certify_with, DEFAULT_PERTURBATION};
use dina_core::{DinaError, ModelParams, QMatrix, ResponseDataset};

/// DINA model toolkit: identifiability checks, simulation, EM fitting,
/// non-identifiability witnesses and consistency studies.
#[derive(Debug, Parser)]
#[command(name = "dina", version)]
struct Cli {
    /// Master seed (simulate, fit, experiment).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Machine-readable output.
    #[arg(long, global = true)]
    json: bool,
    /// Output file (output directory for `experiment`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Identifiability verdict for a Q-matrix. Exit 0 identifiable, 2 not.
    Check { qmatrix: PathBuf },
    /// Simulate a response dataset.
    Simulate {
        qmatrix: PathBuf,
        params: PathBuf,
        #[arg(short = 'n', long)]
        subjects: usize,
    },
    /// Maximum-likelihood fit by multi-start EM.
    Fit {
        qmatrix: PathBuf,
        data: PathBuf,
        #[command(flatten)]
        em: EmArgs,
    },
    /// Two parameter sets with the same response distribution.
    /// Exit 2 when Q is identifiable, 3 when the pattern is unsupported.
    Witness {
        qmatrix: PathBuf,
        params: PathBuf,
        /// Scale applied to the (0,0) proportions.
        #[arg(long, default_value_t = DEFAULT_PERTURBATION)]
        rho: f64,
    },
    /// Monte Carlo MSE study from a JSON spec.
    Experiment {
        spec: PathBuf,
        /// Override the replication count of the spec.
        #[arg(long)]
        replications: Option<usize>,
    },
}

#[derive(Debug, Args)]
struct EmArgs {
    #[arg(long, default_value_t = 8)]
    starts: usize,
    #[arg(long, default_value_t = 2000)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 1e-4)]
    clip: f64,
}

const EXIT_ERROR: u8 = 1;
const EXIT_NEGATIVE: u8 = 2;
const EXIT_UNSUPPORTED: u8 = 3;

const IDENTIFIABLE_MESSAGE: &str =
    "Q is identifiable; Conditions 1 and 2 hold, so no witness exists";

struct Failure {
    code: u8,
    message: String,
}

impl From<DinaError> for Failure {
    fn from(e: DinaError) -> Self {
        let code = match e {
            DinaError::Unsupported(_) => EXIT_UNSUPPORTED,
            _ => EXIT_ERROR,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type CmdResult = Result<u8, Failure>;

fn read(path: &Path) -> Result<String, DinaError> {
    fs::read_to_string(path).map_err(|e| DinaError::io(path.display().to_string(), e))
}

fn load_q(path: &Path) -> Result<QMatrix, DinaError> {
    parse_qmatrix(&read(path)?).map_err(|e| match e {
        DinaError::Parse { line, message } => DinaError::Parse {
            line,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), DinaError> {
    match out {
        Some(path) => {
            fs::write(path, text).map_err(|e| DinaError::io(path.display().to_string(), e))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn with_newline(mut s: String) -> String {
    s.push('\n');
    s
}

fn cmd_check(cli: &Cli, qmatrix: &Path) -> CmdResult {
    let q = load_q(qmatrix)?;
    let report = identifiability_verdict(&q)?;
    let text = if cli.json {
        with_newline(serde_json::to_string_pretty(&report).map_err(DinaError::from)?)
    } else {
        let mut t = with_newline(report.summary());
        if let Some(rows) = &report.identity_rows {
            let rows: Vec<String> = rows.iter().map(|r| r.to_string()).collect();
            t.push_str(&format!("identity rows: {}\n", rows.join(",")));
        }
        let counts: Vec<String> = report
            .attribute_counts
            .iter()
            .map(|c| c.to_string())
            .collect();
        t.push_str(&format!("items per attribute: {}\n", counts.join(",")));
        if !report.zero_rows.is_empty() {
            let rows: Vec<String> = report.zero_rows.iter().map(|r| r.to_string()).collect();
            t.push_str(&format!("zero rows ignored: {}\n", rows.join(",")));
        }
        t
    };
    emit(cli.out.as_deref(), &text)?;
    Ok(if report.is_identifiable() {
        0
    } else {
        EXIT_NEGATIVE
    })
}

fn cmd_simulate(cli: &Cli, qmatrix: &Path, params: &Path, n: usize) -> CmdResult {
    let q = load_q(qmatrix)?;
    let truth = ModelParams::from_json(&q, &read(params)?)?;
    let data = simulate(&q, &truth, n, cli.seed.unwrap_or(0))?;
    let rates = data.positive_rates();
    let summary = if cli.json {
        with_newline(
            serde_json::json!({"subjects": data.subjects(), "items": data.items(), "positive_rates": rates})
                .to_string(),
        )
    } else {
        let rates: Vec<String> = rates.iter().map(|r| format!("{r:.4}")).collect();
        format!(
            "N = {}, J = {}\npositive rates: {}\n",
            data.subjects(),
            data.items(),
            rates.join(",")
        )
    };
    match &cli.out {
        Some(path) => {
            emit(Some(path), &data.to_csv())?;
            print!("{summary}");
        }
        None => {
            print!("{}", data.to_csv());
            eprint!("{summary}");
        }
    }
    Ok(0)
}

fn cmd_fit(cli: &Cli, qmatrix: &Path, data: &Path, em: &EmArgs) -> CmdResult {
    let q = load_q(qmatrix)?;
    let dataset = ResponseDataset::parse_csv(&read(data)?)?;
    let config = EMConfig {
        max_iterations: em.max_iter,
        tolerance: em.tol,
        starts: em.starts,
        seed: cli.seed.unwrap_or(0),
        clip: em.clip,
    };
    let result = fit(&q, &dataset, &config)?;
    for w in &result.warnings {
        eprintln!("warning: {w}");
    }
    emit(
        cli.out.as_deref(),
        &with_newline(serde_json::to_string_pretty(&result).map_err(DinaError::from)?),
    )?;
    Ok(0)
}

fn cmd_witness(cli: &Cli, qmatrix: &Path, params: &Path, rho: f64) -> CmdResult {
    let q = load_q(qmatrix)?;
    if identifiability_verdict(&q)?.is_identifiable() {
        println!("{IDENTIFIABLE_MESSAGE}");
        return Ok(EXIT_NEGATIVE);
    }
    let original = ModelParams::from_json(&q, &read(params)?)?;
    match certify_with(&q, &original, rho) {
        Ok(pair) => {
            emit(
                cli.out.as_deref(),
                &with_newline(serde_json::to_string_pretty(&pair).map_err(DinaError::from)?),
            )?;
            if !cli.json {
                eprintln!(
                    "witness verified: moment gap {:.3e}, residual {:.3e}",
                    pair.distribution_gap, pair.residual
                );
            }
            Ok(0)
        }
        Err(DinaError::Identifiable) => {
            println!("{IDENTIFIABLE_MESSAGE}");
            Ok(EXIT_NEGATIVE)
        }
        Err(e) => Err(e.into()),
    }
}

fn cmd_experiment(cli: &Cli, spec: &Path, replications: Option<usize>) -> CmdResult {
    let mut exp = load_experiment(spec)?;
    if let Some(seed) = cli.seed {
        exp.spec.seed = seed;
    }
    if let Some(r) = replications {
        exp.spec.replications = r;
    }
    if let Some(out) = &cli.out {
        exp.output_dir = out.clone();
    }
    let report = run_experiment(&exp, worker_count()?)?;
    let written = report.write_outputs(&exp.output_dir)?;
    if cli.json {
        println!("{}", report.to_json_pretty());
    } else {
        print!("{}", report.table_csv());
        for s in &report.summaries {
            if s.not_converged + s.errors > 0 {
                eprintln!(
                    "N = {}: {} not converged, {} failed (excluded)",
                    s.sample_size, s.not_converged, s.errors
                );
            }
        }
        for path in written {
            eprintln!("wrote {}", path.display());
        }
    }
    Ok(0)
}

fn run(cli: &Cli) -> CmdResult {
    match &cli.command {
        Command::Check { qmatrix } => cmd_check(cli, qmatrix),
        Command::Simulate {
            qmatrix,
            params,
            subjects,
        } => cmd_simulate(cli, qmatrix, params, *subjects),
        Command::Fit { qmatrix, data, em } => cmd_fit(cli, qmatrix, data, em),
        Command::Witness {
            qmatrix,
            params,
            rho,
        } => cmd_witness(cli, qmatrix, params, *rho),
        Command::Experiment { spec, replications } => cmd_experiment(cli, spec, *replications),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
