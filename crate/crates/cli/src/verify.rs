use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use observa::simulator::SimulatorReport;
use observa::timebase::DEFAULT_TOLERANCE_FACTOR;
use observa::verify::{verify_session, Thresholds, VerifyOptions};
use serde::{Deserialize, Serialize};

use crate::config::resolve;
use crate::error::{CliError, Kind};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    /// Pretty JSON report followed by the one-line summary.
    #[default]
    Both,
    Json,
    Line,
}

/// Check a session for integrity, continuity and (optionally) alignment.
/// Exits 0, 1 or 2 for PASS, WARN or FAIL.
#[derive(Args, Debug, Serialize)]
pub struct VerifyArgs {
    /// Session file to check.
    session: Option<PathBuf>,
    /// Simulator report to compare clock fits and markers against.
    #[arg(long)]
    ground_truth: Option<PathBuf>,
    /// Gap threshold as a multiple of the sample period.
    #[arg(long)]
    tolerance_factor: Option<f64>,
    /// Completeness below this fails.
    #[arg(long)]
    fail_below: Option<f64>,
    /// Completeness below this warns.
    #[arg(long)]
    warn_below: Option<f64>,
    /// Also write the JSON report here.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct VerifyConfig {
    session: Option<PathBuf>,
    ground_truth: Option<PathBuf>,
    tolerance_factor: f64,
    fail_below: f64,
    warn_below: f64,
    report: Option<PathBuf>,
    format: Format,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        let t = Thresholds::default();
        Self {
            session: None,
            ground_truth: None,
            tolerance_factor: DEFAULT_TOLERANCE_FACTOR,
            fail_below: t.fail_below,
            warn_below: t.warn_below,
            report: None,
            format: Format::Both,
        }
    }
}

pub fn run(args: &VerifyArgs, config: Option<&Path>) -> Result<i32, CliError> {
    let cfg: VerifyConfig = resolve("verify", args, config)?;
    let session = cfg.session.clone().ok_or_else(|| CliError::usage("verify needs a session file"))?;
    if !(cfg.tolerance_factor.is_finite() && cfg.tolerance_factor > 1.0) {
        return Err(CliError::usage("--tolerance-factor must be greater than 1"));
    }
    if !(0.0..=1.0).contains(&cfg.fail_below)
        || !(0.0..=1.0).contains(&cfg.warn_below)
        || cfg.fail_below > cfg.warn_below
    {
        return Err(CliError::usage("need 0 <= fail-below <= warn-below <= 1"));
    }
    if !session.exists() {
        return Err(CliError::new(Kind::Io, format!("{}: no such file", session.display())));
    }
    let ground_truth = match &cfg.ground_truth {
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            Some(
                SimulatorReport::from_json_str(&text)
                    .map_err(|e| CliError::usage(format!("ground truth {}: {e}", p.display())))?,
            )
        }
        None => None,
    };
    let opts = VerifyOptions {
        tolerance_factor: cfg.tolerance_factor,
        thresholds: Thresholds { fail_below: cfg.fail_below, warn_below: cfg.warn_below },
        ground_truth,
    };
    let report = verify_session(&session, &opts)?;
    let json = report.to_json_pretty();
    if let Some(p) = &cfg.report {
        std::fs::write(p, &json)?;
    }
    if cfg.format != Format::Line {
        println!("{json}");
    }
    if cfg.format != Format::Json {
        println!("{}", report.one_line());
    }
    Ok(report.verdict.exit_code())
}
