//! Train, explain, evaluate and report pipeline over the core diagnostics.

pub mod config;
pub mod error;
pub mod pipeline;
pub mod svg;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use xaidiag_core::diagnostics::{DcClassPolicy, FaithfulnessVariant, NormScope};

pub use config::RunConfig;
pub use error::{CliError, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "xaidiag", version, about = "Diagnostic properties of saliency explanations for text classifiers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train K models and K random initializations per architecture.
    Train(Common),
    /// Write saliency maps for every model over the test split.
    Explain(Common),
    /// Compute the five properties and write the report.
    Evaluate(Common),
    /// Render radar charts and a summary table from the report.
    Report(Common),
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub dc_class_policy: Option<DcPolicyArg>,
    #[arg(long, value_enum)]
    pub faithfulness_variant: Option<VariantArg>,
    #[arg(long, value_enum)]
    pub norm_scope: Option<ScopeArg>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DcPolicyArg {
    OwnGold,
    PaperLiteral,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum VariantArg {
    Table,
    Equation,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScopeArg {
    PerBlock,
    Global,
}

impl Common {
    /// Loads the config file and applies command-line overrides.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        let p = &mut cfg.properties;
        if let Some(v) = self.dc_class_policy {
            p.dc_class_policy = match v {
                DcPolicyArg::OwnGold => DcClassPolicy::OwnGold,
                DcPolicyArg::PaperLiteral => DcClassPolicy::PaperLiteral,
            };
        }
        if let Some(v) = self.faithfulness_variant {
            p.faithfulness_variant = match v {
                VariantArg::Table => FaithfulnessVariant::Table,
                VariantArg::Equation => FaithfulnessVariant::Equation,
            };
        }
        if let Some(v) = self.norm_scope {
            p.norm_scope = match v {
                ScopeArg::PerBlock => NormScope::PerBlock,
                ScopeArg::Global => NormScope::Global,
            };
        }
        Ok(cfg)
    }
}

pub fn execute(command: &Command) -> Result<()> {
    match command {
        Command::Train(c) => {
            let m = pipeline::cmd_train(&c.resolve()?)?;
            for a in &m.architectures {
                println!(
                    "{}: test macro-F1 {:.4} ± {:.4} (random init {:.4})",
                    a.architecture, a.trained_test_f1.mean, a.trained_test_f1.std, a.random_test_f1.mean
                );
            }
        }
        Command::Explain(c) => {
            let m = pipeline::cmd_explain(&c.resolve()?)?;
            println!("wrote {} saliency files", m.entries.len());
        }
        Command::Evaluate(c) => {
            let cfg = c.resolve()?;
            let e = pipeline::cmd_evaluate(&cfg)?;
            println!(
                "wrote {} report rows to {}",
                e.report.reports.len(),
                cfg.out_dir.join(pipeline::REPORT_DIR).display()
            );
        }
        Command::Report(c) => {
            let cfg = c.resolve()?;
            for path in svg::cmd_report(&cfg.out_dir)? {
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(&cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}
