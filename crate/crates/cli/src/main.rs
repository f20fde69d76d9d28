//! `cbir`: extract descriptors from FMAP files, build an index, query it and
//! evaluate recall.
//!
//! Exit codes: 0 success, 2 input format, 3 config, 4 labeling,
//! 5 dimension or usage.

mod commands;
mod config;
mod error;
mod files;

use std::path::PathBuf;
use std::process::ExitCode;

use cbir_core::RepresentativeMode;
use clap::{Parser, Subcommand};

use crate::error::{Category, CliError};

#[derive(Parser)]
#[command(name = "cbir", version, about = "Image retrieval over CNN feature-map descriptors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute a combined descriptor for every FMAP file in a directory.
    Extract {
        #[arg(long)]
        fmaps: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Build an INDX file from a DESC file and `image_id<TAB>class_id` labels.
    Index {
        #[arg(long)]
        desc: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        mode: Option<RepresentativeMode>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Rank classes (and optionally images) for one FMAP file; JSON lines on stdout.
    Query {
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long)]
        fmap: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
        /// Re-rank images within the top M classes (default 5).
        #[arg(long, value_name = "M", num_args = 0..=1)]
        refine: Option<Option<usize>>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// End-to-end recall@k experiment; writes a JSON report.
    Eval {
        #[arg(long)]
        index_fmaps: Option<PathBuf>,
        #[arg(long)]
        query_fmaps: Option<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        ks: Option<Vec<usize>>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        mode: Option<RepresentativeMode>,
        #[arg(long, value_name = "M", num_args = 0..=1)]
        refine: Option<Option<usize>>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Extract { fmaps, config, out, jobs } => commands::extract(commands::ExtractArgs {
            fmaps,
            config,
            out,
            jobs,
        }),
        Command::Index {
            desc,
            labels,
            mode,
            out,
            config,
        } => commands::index(commands::IndexArgs {
            desc,
            labels,
            mode,
            out,
            config,
        }),
        Command::Query {
            index,
            fmap,
            k,
            refine,
            config,
        } => commands::query(commands::QueryArgs {
            index,
            fmap,
            k,
            refine,
            config,
        }),
        Command::Eval {
            index_fmaps,
            query_fmaps,
            truth,
            ks,
            out,
            mode,
            refine,
            config,
        } => commands::eval(commands::EvalArgs {
            index_fmaps,
            query_fmaps,
            truth,
            ks,
            out,
            mode,
            refine,
            config,
        }),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(Category::Usage as u8)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
