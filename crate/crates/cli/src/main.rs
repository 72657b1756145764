use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use tract_noise::pipeline::{self, PipelineError, RunConfig, Session};
use tract_noise::synth::{self, ScenarioConfig};

/// Hourly census-tract aircraft-noise exposure analytics.
#[derive(Parser)]
#[command(name = "tract-noise", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded synthetic input bundle with its ground truth.
    Synth(SynthArgs),
    /// Cross-check the input files and write findings.
    Validate(RunArgs),
    /// Hourly LAeq per terminal.
    Laeq(RunArgs),
    /// Tract × hour records joined to terminal levels and population.
    Fuse(RunArgs),
    /// Exposure matrices, Gini series, basis comparison and rotation contrast.
    Exposure(RunArgs),
    /// Boosted-tree models for take-off and landing noise.
    Train(RunArgs),
    /// Shapley attributions for the trained models.
    Explain(RunArgs),
    /// Every stage plus report.json.
    Report(RunArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Days to simulate.
    #[arg(long, default_value_t = 31)]
    days: u32,
}

#[derive(Args)]
struct RunArgs {
    /// Input directory holding the six CSV files.
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// key = value settings; flags override them.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Exposure threshold in dBA; repeatable.
    #[arg(long = "theta")]
    thetas: Vec<f64>,
    #[arg(long)]
    retention_dba: Option<f64>,
    #[arg(long)]
    window_start: Option<String>,
    #[arg(long)]
    window_end: Option<String>,
    #[arg(long, value_parser = ["containing", "nearest"])]
    mapping: Option<String>,
    #[arg(long, value_parser = ["csv", "json"])]
    format: Option<String>,
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig, PipelineError> {
        let mut c = RunConfig::default();
        if let Some(path) = &self.config {
            c.apply_file(path)?;
        }
        if let Some(p) = &self.input {
            c.input = p.clone();
        }
        if let Some(p) = &self.out {
            c.output = p.clone();
        }
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if !self.thetas.is_empty() {
            c.set_thresholds(self.thetas.clone())?;
        }
        if let Some(r) = self.retention_dba {
            c.retention_dba = r;
        }
        if self.window_start.is_some() || self.window_end.is_some() {
            c.set_window(self.window_start.as_deref(), self.window_end.as_deref())?;
        }
        if let Some(m) = &self.mapping {
            c.set("mapping", m)?;
        }
        if let Some(f) = &self.format {
            c.set("format", f)?;
        }
        Ok(c)
    }

    fn session(&self) -> anyhow::Result<Session> {
        let mut s = Session::open(self.config()?)?;
        s.validate()?;
        Ok(s)
    }
}

fn run(command: Command) -> anyhow::Result<String> {
    Ok(match command {
        Command::Synth(a) => {
            let config = ScenarioConfig {
                seed: a.seed,
                days: a.days,
                ..Default::default()
            };
            let scenario = synth::generate(&config)?;
            synth::write_scenario(&a.out, &scenario)?;
            format!(
                "synth: {} samples, {} flights, {} tracts written to {}",
                scenario.bundle.spl.len(),
                scenario.bundle.flights.len(),
                scenario.bundle.tracts.len(),
                a.out.display()
            )
        }
        Command::Validate(a) => {
            let mut s = Session::open(a.config()?)?;
            let report = s.validate()?;
            format!(
                "validate: {} finding(s), none of severity error",
                report.findings.len()
            )
        }
        Command::Laeq(a) => {
            let mut s = a.session()?;
            let hourly = s.hourly_laeq()?;
            let measured = hourly.iter().filter(|h| h.laeq.is_some()).count();
            format!("laeq: {} terminal-hours, {measured} with a level", hourly.len())
        }
        Command::Fuse(a) => {
            let mut s = a.session()?;
            let n = s.fused()?.len();
            format!("fuse: {n} tract-hour records")
        }
        Command::Exposure(a) => {
            let mut s = a.session()?;
            let r = pipeline::run_exposure(&mut s)?;
            let undefined: usize = r
                .gini
                .iter()
                .map(|g| g.entries.iter().filter(|e| e.gini.is_none()).count())
                .sum();
            format!(
                "exposure: {} threshold(s), {} tracts × {} hours, {undefined} undefined Gini value(s)",
                r.defacto.len(),
                r.defacto.first().map_or(0, |m| m.n_tracts()),
                s.window.hour_count()
            )
        }
        Command::Train(a) => {
            let mut s = a.session()?;
            let models = pipeline::run_train(&mut s)?;
            let parts: Vec<String> = models
                .iter()
                .map(|m| {
                    format!(
                        "{} test MAE {:.3} ({} trees)",
                        m.target.as_str(),
                        m.test.mae,
                        m.document.trees.len()
                    )
                })
                .collect();
            format!("train: {}", parts.join(", "))
        }
        Command::Explain(a) => {
            let mut s = a.session()?;
            let models = pipeline::run_train(&mut s)?;
            let shap = pipeline::run_explain(&mut s, &models)?;
            let parts: Vec<String> = shap
                .iter()
                .map(|r| {
                    let top = r.ranking.first().map_or("-", |f| f.feature.as_str());
                    format!("{} top feature {top} over {} rows", r.target.as_str(), r.n_rows)
                })
                .collect();
            format!("explain: {}", parts.join(", "))
        }
        Command::Report(a) => {
            let mut s = a.session()?;
            let bytes = pipeline::run_report(&mut s)?;
            let path = s.config.output.join(pipeline::REPORT_FILE);
            format!("report: {} bytes written to {}", bytes.len(), path.display())
        }
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            let usage = e
                .downcast_ref::<PipelineError>()
                .is_some_and(PipelineError::is_usage);
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}
