mod commands;
mod errors;
mod manifest;
mod util;

use clap::{Parser, Subcommand};

use crate::errors::CliResult;

/// Tucker-decomposed convolution toolkit: kernel compression, a tiled
/// CPU-executable model of the core convolution, latency-model-driven tiling
/// search, constrained training, and rank planning under FLOPs budgets.
#[derive(Parser)]
#[command(name = "tdc", version, about, max_term_width = 100)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tucker-2 decompose a kernel file into factor files.
    Decompose(commands::decompose::DecomposeArgs),
    /// Rebuild a kernel from factor files.
    Reconstruct(commands::reconstruct::ReconstructArgs),
    /// Time the tiled convolution executor on generated data.
    ConvBench(commands::conv_bench::ConvBenchArgs),
    /// Rank candidate tilings by the latency model or by measurement.
    TileSelect(commands::tile_select::TileSelectArgs),
    /// Train the toy CNN with low-rank-constrained kernels.
    AdmmTrain(commands::admm_train::AdmmTrainArgs),
    /// Pick per-layer ranks under a FLOPs budget.
    RankSelect(commands::rank_select::RankSelectArgs),
    /// Summarize a tiling ranking as a runtime/speedup table.
    Report(commands::report::ReportArgs),
}

fn run(cli: &Cli) -> CliResult<()> {
    match &cli.cmd {
        Command::Decompose(a) => commands::decompose::run(a),
        Command::Reconstruct(a) => commands::reconstruct::run(a),
        Command::ConvBench(a) => commands::conv_bench::run(a),
        Command::TileSelect(a) => commands::tile_select::run(a),
        Command::AdmmTrain(a) => commands::admm_train::run(a),
        Command::RankSelect(a) => commands::rank_select::run(a),
        Command::Report(a) => commands::report::run(a),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
