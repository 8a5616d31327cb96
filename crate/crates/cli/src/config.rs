//! Experiment configuration files (TOML) and their validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tmb_core::asympt::FamilySpec;
use tmb_core::solve::SolverOptions;
use tmb_core::{Precision, ProblemParams};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Solve,
    Sweep,
    Profile,
    Verify,
    Bessel,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Sweep => "sweep",
            Command::Profile => "profile",
            Command::Verify => "verify",
            Command::Bessel => "bessel",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsConfig {
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyConfig {
    /// Explicit λ_n.
    pub lambda_schedule: Option<Vec<f64>>,
    /// Geometric λ_n = lambda_start · lambda_ratioⁿ, n < members.
    pub lambda_start: Option<f64>,
    pub lambda_ratio: Option<f64>,
    pub members: Option<usize>,
    /// Explicit β_n; `params.beta` repeated when absent.
    pub beta_schedule: Option<Vec<f64>>,
    pub beta_star: Option<f64>,
    pub coupling_note: Option<String>,
    pub concentrating_domains: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceConfig {
    pub rtol: Option<f64>,
    pub atol: Option<f64>,
    pub min_step: Option<f64>,
    pub max_steps: Option<usize>,
    pub log_lambda_tol: Option<f64>,
    pub scan_points: Option<usize>,
    pub s_min: Option<f64>,
    pub s_max: Option<f64>,
    pub precision: Option<Precision>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileConfig {
    pub r_min: Option<f64>,
    pub r_max: Option<f64>,
    pub step: Option<f64>,
    /// 1-based domains to profile; all when absent.
    pub domains: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BesselConfig {
    pub count: Option<usize>,
}

/// The file as written by the user.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: Option<Command>,
    pub seed_note: Option<String>,
    pub output_dir: Option<PathBuf>,
    pub k: Option<usize>,
    #[serde(default)]
    pub params: ParamsConfig,
    pub family: Option<FamilyConfig>,
    #[serde(default)]
    pub tolerances: ToleranceConfig,
    #[serde(default)]
    pub profile: ProfileConfig,
    #[serde(default)]
    pub bessel: BesselConfig,
}

/// Command-line values that override the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub output_dir: Option<PathBuf>,
    pub precision: Option<Precision>,
    pub bessel_count: Option<usize>,
}

/// What the runner needs, fully checked.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub command: Command,
    pub seed_note: Option<String>,
    pub output_dir: PathBuf,
    pub k: usize,
    pub params: Option<ProblemParams>,
    pub family: Option<FamilySpec>,
    pub solver: SolverOptions,
    pub grid: Vec<f64>,
    pub profile_domains: Option<Vec<usize>>,
    pub bessel_count: usize,
    /// SHA-256 of the canonical form, hex.
    pub hash: String,
}

pub const DEFAULT_OUTPUT_DIR: &str = "tmb-out";

/// Field-level failure; `line` is 1-based when the key appears in the source.
fn field_error(source: &str, path: &str, message: String) -> CliError {
    CliError::Config {
        field: Some(path.to_string()),
        line: locate(source, path),
        message,
    }
}

/// Line of `table.key` (or a top-level `key`) in a TOML source.
fn locate(source: &str, path: &str) -> Option<usize> {
    let (table, key) = match path.rsplit_once('.') {
        Some((t, k)) => (t, k),
        None => ("", path),
    };
    let key = key.split('[').next().unwrap_or(key);
    let mut current = String::new();
    for (n, raw) in source.lines().enumerate() {
        let line = raw.trim();
        if let Some(h) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = h.trim().to_string();
            continue;
        }
        let Some((lhs, _)) = line.split_once('=') else { continue };
        let lhs = lhs.trim();
        let (tbl, k) = match lhs.rsplit_once('.') {
            Some((t, k)) if current.is_empty() => (t.trim().to_string(), k.trim()),
            _ => (current.clone(), lhs),
        };
        if tbl == table && k == key {
            return Some(n + 1);
        }
    }
    None
}

pub fn parse(source: &str) -> Result<ExperimentConfig, CliError> {
    toml::from_str(source).map_err(|e| {
        let line = e.span().map(|s| source[..s.start.min(source.len())].matches('\n').count() + 1);
        CliError::Config {
            field: None,
            line,
            message: e.message().to_string(),
        }
    })
}

pub fn load(path: &Path) -> Result<(ExperimentConfig, String), CliError> {
    let source = std::fs::read_to_string(path).map_err(|e| CliError::Config {
        field: None,
        line: None,
        message: format!("cannot read {}: {e}", path.display()),
    })?;
    Ok((parse(&source)?, source))
}

fn positive(source: &str, path: &str, v: Option<f64>) -> Result<Option<f64>, CliError> {
    match v {
        Some(x) if !(x > 0.0 && x.is_finite()) => Err(field_error(
            source,
            path,
            format!("`{path}` = {x} must be a positive finite number"),
        )),
        _ => Ok(v),
    }
}

fn check_beta(source: &str, path: &str, b: f64) -> Result<(), CliError> {
    if !(b > 0.0 && b < 2.0) {
        return Err(field_error(
            source,
            path,
            format!("`{path}` = {b} is outside the legal interval (0, 2)"),
        ));
    }
    Ok(())
}

fn require<T: Copy>(source: &str, path: &str, v: Option<T>, cmd: Command) -> Result<T, CliError> {
    v.ok_or_else(|| field_error(source, path, format!("`{path}` is required by `{}`", cmd.name())))
}

impl ExperimentConfig {
    /// Checks the command-specific requirements and builds solver inputs.
    pub fn resolve(&self, command: Command, source: &str, over: &Overrides) -> Result<Resolved, CliError> {
        if let Some(c) = self.command {
            if c != command {
                return Err(field_error(
                    source,
                    "command",
                    format!("config is for `{}` but `{}` was requested", c.name(), command.name()),
                ));
            }
        }
        let tol = &self.tolerances;
        let mut solver = SolverOptions::default();
        let t = &mut solver.integrate.tolerances;
        if let Some(x) = positive(source, "tolerances.rtol", tol.rtol)? {
            t.rtol = x;
        }
        if let Some(x) = positive(source, "tolerances.atol", tol.atol)? {
            t.atol = x;
        }
        if let Some(x) = positive(source, "tolerances.min_step", tol.min_step)? {
            t.min_step = x;
        }
        if let Some(n) = tol.max_steps {
            if n == 0 {
                return Err(field_error(source, "tolerances.max_steps", "`tolerances.max_steps` must be positive".into()));
            }
            t.max_steps = n;
        }
        if let Some(x) = positive(source, "tolerances.log_lambda_tol", tol.log_lambda_tol)? {
            solver.log_lambda_tol = x;
        }
        if let Some(n) = tol.scan_points {
            if n < 2 {
                return Err(field_error(source, "tolerances.scan_points", "`tolerances.scan_points` must be at least 2".into()));
            }
            solver.scan_points = n;
        }
        if let Some(x) = positive(source, "tolerances.s_min", tol.s_min)? {
            solver.s_min = x;
        }
        solver.s_max = positive(source, "tolerances.s_max", tol.s_max)?;
        if let Some(p) = over.precision.or(tol.precision) {
            solver.integrate.precision = p;
        }

        let bessel_count = over.bessel_count.or(self.bessel.count).unwrap_or(3);
        if command == Command::Bessel && !(1..=tmb_core::bessel::MAX_ZERO_INDEX).contains(&bessel_count) {
            return Err(field_error(
                source,
                "bessel.count",
                format!(
                    "`bessel.count` = {bessel_count} must lie in 1..={}",
                    tmb_core::bessel::MAX_ZERO_INDEX
                ),
            ));
        }

        let needs_problem = command != Command::Bessel;
        let k = if needs_problem {
            require(source, "k", self.k, command)?
        } else {
            self.k.unwrap_or(0)
        };
        let p = &self.params;
        if let Some(a) = p.alpha {
            positive(source, "params.alpha", Some(a))?;
        }
        if let Some(b) = p.beta {
            check_beta(source, "params.beta", b)?;
        }
        positive(source, "params.lambda", p.lambda)?;

        let family = match (&self.family, command) {
            (Some(f), Command::Sweep | Command::Verify | Command::Profile) => {
                Some(self.family_spec(f, k, command, source)?)
            }
            (None, Command::Sweep | Command::Verify) => {
                return Err(field_error(
                    source,
                    "family",
                    format!("a [family] table is required by `{}`", command.name()),
                ))
            }
            _ => None,
        };
        let params = if needs_problem && family.is_none() {
            let alpha = require(source, "params.alpha", p.alpha, command)?;
            let beta = require(source, "params.beta", p.beta, command)?;
            let lambda = require(source, "params.lambda", p.lambda, command)?;
            Some(ProblemParams::new(alpha, beta, lambda).map_err(|e| field_error(source, "params", e.to_string()))?)
        } else {
            None
        };

        let pr = &self.profile;
        let r_min = pr.r_min.unwrap_or(0.0);
        let r_max = pr.r_max.unwrap_or(6.0);
        let step = positive(source, "profile.step", pr.step)?.unwrap_or(0.1);
        if !(r_min.is_finite() && r_max.is_finite() && r_max > r_min) {
            return Err(field_error(
                source,
                "profile.r_max",
                format!("profile window [{r_min}, {r_max}] is empty"),
            ));
        }
        let count = ((r_max - r_min) / step + 1e-9).floor() as usize;
        let grid: Vec<f64> = (0..=count).map(|j| r_min + j as f64 * step).collect();
        if let Some(ds) = &pr.domains {
            if let Some(&bad) = ds.iter().find(|&&d| d == 0 || d > k + 1) {
                return Err(field_error(
                    source,
                    "profile.domains",
                    format!("profile domain {bad} is outside 1..={}", k + 1),
                ));
            }
        }

        let output_dir = over
            .output_dir
            .clone()
            .or_else(|| self.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR));

        let mut resolved = Resolved {
            command,
            seed_note: self.seed_note.clone(),
            output_dir,
            k,
            params,
            family,
            solver,
            grid,
            profile_domains: pr.domains.clone(),
            bessel_count,
            hash: String::new(),
        };
        resolved.hash = resolved.canonical_hash();
        Ok(resolved)
    }

    fn family_spec(&self, f: &FamilyConfig, k: usize, command: Command, source: &str) -> Result<FamilySpec, CliError> {
        let lambdas = match (&f.lambda_schedule, f.lambda_start) {
            (Some(l), None) => l.clone(),
            (None, Some(start)) => {
                positive(source, "family.lambda_start", Some(start))?;
                let ratio = require(source, "family.lambda_ratio", f.lambda_ratio, command)?;
                positive(source, "family.lambda_ratio", Some(ratio))?;
                let members = require(source, "family.members", f.members, command)?;
                (0..members).map(|n| start * ratio.powi(n as i32)).collect()
            }
            (Some(_), Some(_)) => {
                return Err(field_error(
                    source,
                    "family.lambda_start",
                    "give either `family.lambda_schedule` or `family.lambda_start`, not both".into(),
                ))
            }
            (None, None) => {
                return Err(field_error(
                    source,
                    "family.lambda_schedule",
                    "`family.lambda_schedule` or `family.lambda_start` is required".into(),
                ))
            }
        };
        for (n, &l) in lambdas.iter().enumerate() {
            positive(source, "family.lambda_schedule", Some(l)).map_err(|_| {
                field_error(
                    source,
                    "family.lambda_schedule",
                    format!("`family.lambda_schedule[{n}]` = {l} must be a positive finite number"),
                )
            })?;
        }
        let betas = match &f.beta_schedule {
            Some(b) => b.clone(),
            None => vec![require(source, "params.beta", self.params.beta, command)?; lambdas.len()],
        };
        for (n, &b) in betas.iter().enumerate() {
            check_beta(source, "family.beta_schedule", b).map_err(|_| {
                field_error(
                    source,
                    "family.beta_schedule",
                    format!("`family.beta_schedule[{n}]` = {b} is outside the legal interval (0, 2)"),
                )
            })?;
        }
        if let Some(b) = f.beta_star {
            check_beta(source, "family.beta_star", b)?;
        }
        let alpha = require(source, "params.alpha", self.params.alpha, command)?;
        let spec = FamilySpec {
            k,
            alpha,
            lambda_schedule: lambdas,
            beta_schedule: betas,
            coupling_note: f.coupling_note.clone(),
            beta_star: f.beta_star,
            concentrating_domains: f.concentrating_domains,
        };
        spec.validate().map_err(|e| field_error(source, "family", e.to_string()))?;
        Ok(spec)
    }
}

/// Every input that can change the numbers, in a fixed order. The output
/// directory is excluded so relocated runs join on the same hash.
#[derive(Serialize)]
struct Canonical<'a> {
    command: &'a str,
    seed_note: &'a Option<String>,
    k: usize,
    params: Option<(f64, f64, f64)>,
    family: &'a Option<FamilySpec>,
    rtol: f64,
    atol: f64,
    min_step: f64,
    max_steps: usize,
    log_lambda_tol: f64,
    scan_points: usize,
    s_min: f64,
    s_max: Option<f64>,
    precision: String,
    grid: &'a [f64],
    profile_domains: &'a Option<Vec<usize>>,
    bessel_count: usize,
}

impl Resolved {
    fn canonical_hash(&self) -> String {
        let t = &self.solver.integrate.tolerances;
        let c = Canonical {
            command: self.command.name(),
            seed_note: &self.seed_note,
            k: self.k,
            params: self.params.map(|p| (p.alpha(), p.beta(), p.lambda())),
            family: &self.family,
            rtol: t.rtol,
            atol: t.atol,
            min_step: t.min_step,
            max_steps: t.max_steps,
            log_lambda_tol: self.solver.log_lambda_tol,
            scan_points: self.solver.scan_points,
            s_min: self.solver.s_min,
            s_max: self.solver.s_max,
            precision: self.solver.integrate.precision.to_string(),
            grid: &self.grid,
            profile_domains: &self.profile_domains,
            bessel_count: self.bessel_count,
        };
        let json = serde_json::to_vec(&c).expect("canonical config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}
