//! Batch front-end: reads an experiment file, runs it and writes CSV tables
//! plus a JSON metadata sidecar.

pub mod config;
pub mod output;

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use thiserror::Error;
use tmb_core::asympt::{run_family, solve_family, summarize, MemberRecord};
use tmb_core::blowup::rescale_profile_with;
use tmb_core::solve::{nodal_solution, RadialSolution};
use tmb_core::Precision;

pub use config::{Command, ExperimentConfig, Overrides, Resolved};
use output::{emit_csv, Metadata, Table};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error{}{}: {message}", field.as_ref().map(|f| format!(" in `{f}`")).unwrap_or_default(), line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    Config {
        field: Option<String>,
        line: Option<usize>,
        message: String,
    },
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
    #[error("refusing to write {0}: no records")]
    EmptyOutput(String),
    #[error(transparent)]
    Core(#[from] tmb_core::Error),
}

impl CliError {
    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            _ => 1,
        }
    }
}

/// One command-line invocation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Invocation {
    pub command: Option<Command>,
    pub config: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub precision: Option<Precision>,
    pub k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub output_dir: PathBuf,
    pub files: Vec<PathBuf>,
    /// Members that could not be solved.
    pub failures: Vec<String>,
    /// Lines for the terminal.
    pub report: Vec<String>,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.failures.is_empty() {
            0
        } else {
            1
        }
    }
}

struct Writer<'a> {
    dir: &'a Path,
    files: Vec<PathBuf>,
}

impl Writer<'_> {
    fn csv(&mut self, name: &str, table: &Table) -> Result<(), CliError> {
        let path = self.dir.join(name);
        emit_csv(table, &path)?;
        self.files.push(path);
        Ok(())
    }
}

pub fn run(inv: &Invocation) -> Result<Outcome, CliError> {
    let command = inv.command.ok_or_else(|| CliError::Config {
        field: None,
        line: None,
        message: "no command given".into(),
    })?;
    let (cfg, source) = match &inv.config {
        Some(p) => config::load(p)?,
        None if command == Command::Bessel => (ExperimentConfig::default(), String::new()),
        None => {
            return Err(CliError::Config {
                field: None,
                line: None,
                message: format!("`{}` needs --config <file>", command.name()),
            })
        }
    };
    let over = Overrides {
        output_dir: inv.out.clone(),
        precision: inv.precision,
        bessel_count: inv.k,
    };
    let resolved = cfg.resolve(command, &source, &over)?;
    if inv.jobs == Some(0) {
        return Err(CliError::Config {
            field: Some("--jobs".into()),
            line: None,
            message: "--jobs must be at least 1".into(),
        });
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(inv.jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Io {
            path: "thread pool".into(),
            message: e.to_string(),
        })?;
    let threads = pool.current_num_threads();
    pool.install(|| execute(&resolved, threads))
}

fn execute(r: &Resolved, threads: usize) -> Result<Outcome, CliError> {
    let started = Instant::now();
    let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    std::fs::create_dir_all(&r.output_dir).map_err(|e| CliError::io(&r.output_dir, e))?;
    let mut w = Writer {
        dir: &r.output_dir,
        files: Vec::new(),
    };
    let mut failures = Vec::new();
    let mut report = Vec::new();

    match r.command {
        Command::Bessel => {
            let pairs = tmb_core::bessel::eigenpairs(r.bessel_count)?;
            for p in &pairs {
                report.push(format!("k = {}  t_k = {:.15}  lambda_k = {:.15}", p.k, p.t_k, p.lambda_k));
            }
            w.csv("bessel.csv", &output::bessel_table(&pairs, &r.hash))?;
        }
        Command::Solve => {
            let params = r.params.expect("resolved for solve");
            let record = match nodal_solution(r.k, &params, &r.solver) {
                Ok(sol) => {
                    let s = summarize(&sol, params.beta())?;
                    report.push(format!(
                        "k = {}  lambda = {:e}  u(0) = {:.12e}  peaks = {:?}",
                        r.k,
                        s.lambda,
                        s.amplitude,
                        s.peaks()
                    ));
                    member(0, params.lambda(), params.beta(), Ok(s))
                }
                Err(e) => {
                    failures.push(format!("member 0: {e}"));
                    member(0, params.lambda(), params.beta(), Err(e))
                }
            };
            w.csv("solutions.csv", &output::solutions_table(&[record], r.k, &r.hash))?;
        }
        Command::Sweep | Command::Verify => {
            let spec = r.family.as_ref().expect("resolved for family commands");
            let exp = run_family(spec, &r.solver)?;
            for rec in &exp.records {
                if let Some(f) = &rec.failure {
                    failures.push(format!("member {}: {f}", rec.index));
                }
            }
            w.csv("solutions.csv", &output::solutions_table(&exp.records, r.k, &r.hash))?;
            if r.command == Command::Verify {
                w.csv("formulas.csv", &output::formulas_table(&exp.formula_reports, &r.hash))?;
                let seq = output::formula_sequences_table(&exp.formula_reports, &r.hash);
                if !seq.rows.is_empty() {
                    w.csv("formula_sequences.csv", &seq)?;
                }
                for f in exp.formula_reports.iter().filter(|f| f.applicable) {
                    report.push(format!(
                        "{:<18} last = {:<14.6e} extrapolated = {:<14.6e} target = {:<14.6e} rel_error = {:.3e}{}",
                        f.formula_id,
                        f.raw_last,
                        f.extrapolated,
                        f.target,
                        f.rel_error,
                        if f.slow_rate_flag { "  [slow rate]" } else { "" }
                    ));
                    if let Some(n) = &f.note {
                        report.push(format!("{:<18} note: {n}", ""));
                    }
                }
            } else {
                for s in exp.successes() {
                    report.push(format!("lambda = {:e}  beta = {}  peaks = {:?}", s.lambda, s.beta, s.peaks()));
                }
            }
        }
        Command::Profile => {
            let (solutions, lambdas, betas, beta_star): (Vec<tmb_core::Result<RadialSolution>>, Vec<f64>, Vec<f64>, f64) =
                match (&r.family, r.params) {
                    (Some(spec), _) => (
                        solve_family(spec, &r.solver)?,
                        spec.lambda_schedule.clone(),
                        spec.beta_schedule.clone(),
                        spec.resolved_beta_star(),
                    ),
                    (None, Some(p)) => (
                        vec![nodal_solution(r.k, &p, &r.solver)],
                        vec![p.lambda()],
                        vec![p.beta()],
                        p.beta(),
                    ),
                    (None, None) => unreachable!("resolve requires params or a family"),
                };
            let domains: Vec<usize> = r.profile_domains.clone().unwrap_or_else(|| (1..=r.k + 1).collect());
            let mut records = Vec::new();
            for (n, sol) in solutions.into_iter().enumerate() {
                let sol = match sol {
                    Ok(s) => s,
                    Err(e) => {
                        failures.push(format!("member {n}: {e}"));
                        records.push(member(n, lambdas[n], betas[n], Err(e)));
                        continue;
                    }
                };
                for &i in &domains {
                    match rescale_profile_with(&sol, i, &r.grid, beta_star) {
                        Ok(diag) => {
                            report.push(format!(
                                "member {n} domain {i}: mu = {:.6e}  sup|z_n - z| = {:.3e}  c/c_pred = {:.4}",
                                diag.peak_value,
                                diag.sup_deviation,
                                diag.corr_coefficient / diag.predicted_coefficient
                            ));
                            w.csv(&format!("profile_n{n}_d{i}.csv"), &output::profile_table(&diag, &r.hash))?;
                        }
                        Err(e) => report.push(format!("member {n} domain {i}: skipped ({e})")),
                    }
                }
                records.push(member(n, lambdas[n], betas[n], summarize(&sol, beta_star)));
            }
            w.csv("solutions.csv", &output::solutions_table(&records, r.k, &r.hash))?;
        }
    }

    let mut files = w.files;
    let meta_path = r.output_dir.join("metadata.json");
    let meta = Metadata {
        config_hash: r.hash.clone(),
        command: r.command.name().into(),
        seed_note: r.seed_note.clone(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        precision: r.solver.integrate.precision.to_string(),
        threads,
        started_unix_seconds: started_unix,
        wall_time_seconds: started.elapsed().as_secs_f64(),
        files: files
            .iter()
            .filter_map(|p| p.file_name().map(|f| f.to_string_lossy().into_owned()))
            .collect(),
        failures: failures.clone(),
    };
    output::write_metadata(&meta, &meta_path)?;
    files.push(meta_path);
    Ok(Outcome {
        output_dir: r.output_dir.clone(),
        files,
        failures,
        report,
    })
}

fn member(
    index: usize,
    lambda: f64,
    beta: f64,
    outcome: tmb_core::Result<tmb_core::asympt::MemberSummary>,
) -> MemberRecord {
    let (summary, failure) = match outcome {
        Ok(s) => (Some(s), None),
        Err(e) => (None, Some(e.to_string())),
    };
    MemberRecord {
        index,
        lambda,
        beta,
        summary,
        failure,
    }
}
