use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Args;
use observa::markers::{load_task_script, run_task_harness, LineSink, MarkerSink, Pacing};
use observa::model::DenyList;
use serde::{Deserialize, Serialize};

use crate::config::resolve;
use crate::error::CliError;

/// Play a scripted task, emitting one marker line per interaction.
#[derive(Args, Debug, Serialize)]
pub struct TaskRunArgs {
    /// Task script (JSON).
    #[arg(long)]
    script: Option<PathBuf>,
    /// `-` for stdout, or a file or FIFO to append lines to.
    #[arg(long)]
    sink: Option<String>,
    /// Emit every event immediately.
    #[arg(long)]
    unpaced: bool,
    /// Source name stamped on each marker.
    #[arg(long)]
    source: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TaskRunConfig {
    script: Option<PathBuf>,
    sink: String,
    unpaced: bool,
    source: String,
}

impl Default for TaskRunConfig {
    fn default() -> Self {
        Self { script: None, sink: "-".into(), unpaced: false, source: "task".into() }
    }
}

pub fn run(args: &TaskRunArgs, config: Option<&Path>) -> Result<i32, CliError> {
    let cfg: TaskRunConfig = resolve("task-run", args, config)?;
    let path = cfg.script.clone().ok_or_else(|| CliError::usage("task-run needs --script"))?;
    let script = load_task_script(&path)?;
    script.validate(&DenyList::interpretative())?;
    let pacing = if cfg.unpaced { Pacing::Unpaced } else { Pacing::RealTime };
    let out: Box<dyn Write + Send> = if cfg.sink == "-" {
        Box::new(std::io::stdout())
    } else {
        Box::new(OpenOptions::new().append(true).create(true).open(&cfg.sink)?)
    };
    let sink = LineSink::new(out);
    let n = run_task_harness(&script, &sink as &dyn MarkerSink, pacing, &cfg.source)?;
    sink.into_inner().flush()?;
    eprintln!("emitted {n} markers");
    Ok(0)
}
