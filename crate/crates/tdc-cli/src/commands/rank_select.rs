use std::path::{Path, PathBuf};

use clap::Args;
use serde_json::json;
use tdc_core::rank::{
    build_rank_latency_table, default_grids, select_ranks_exact, select_ranks_under_budget, Arch,
};

use crate::errors::{CliError, CliResult};
use crate::manifest::ManifestBuilder;
use crate::util::{ensure_dir, guard_outputs, load_gpu, read_to_string, write_text};

pub const BUNDLED_ARCHS: [&str; 3] = ["resnet18-like", "vgg16-like", "toy6"];

#[derive(Debug, Args)]
pub struct RankSelectArgs {
    /// Bundled architecture name (resnet18-like, vgg16-like, toy6) or a JSON
    /// file of layer descriptors.
    #[arg(long)]
    pub arch: String,
    /// Target fractional FLOPs reduction, e.g. 0.63.
    #[arg(long)]
    pub budget: f64,
    /// Device preset (a100, 2080ti) or GPU spec JSON path.
    #[arg(long, default_value = "a100")]
    pub gpu: String,
    /// Solve exactly over the rank grid instead of greedily.
    #[arg(long)]
    pub exact: bool,
    /// Output path for the plan JSON; the manifest lands beside it.
    #[arg(long)]
    pub out: PathBuf,
    /// Overwrite existing outputs.
    #[arg(long)]
    pub force: bool,
    /// Recorded in the manifest; the plan is deterministic.
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Threads for building the latency table (default: host parallelism;
    /// the table is identical for any count).
    #[arg(long)]
    pub workers: Option<usize>,
}

fn load_arch(arg: &str) -> CliResult<(Arch, Option<PathBuf>)> {
    if BUNDLED_ARCHS.contains(&arg) {
        return Ok((Arch::bundled(arg)?, None));
    }
    let path = Path::new(arg);
    if !path.exists() {
        return Err(CliError::Usage(format!(
            "--arch '{arg}' is neither a bundled architecture ({}) nor an existing file",
            BUNDLED_ARCHS.join(", ")
        )));
    }
    let arch = Arch::from_json_str(&read_to_string(path)?)?;
    Ok((arch, Some(path.to_path_buf())))
}

pub fn run(a: &RankSelectArgs) -> CliResult<()> {
    let (arch, arch_file) = load_arch(&a.arch)?;
    let gpu = load_gpu(&a.gpu)?;
    let out_dir = a
        .out
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    ensure_dir(&out_dir)?;
    let manifest_path = out_dir.join(crate::manifest::MANIFEST_FILE);
    guard_outputs(&[a.out.clone(), manifest_path], a.force)?;

    let grids = default_grids(&arch.layers);
    let build = || build_rank_latency_table(&arch.layers, &grids, &gpu);
    let table = match a.workers {
        Some(w) => {
            if w == 0 {
                return Err(CliError::Usage("--workers must be at least 1".into()));
            }
            rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .map_err(|e| CliError::Usage(format!("cannot build thread pool: {e}")))?
                .install(build)?
        }
        None => build()?,
    };
    let plan = if a.exact {
        select_ranks_exact(&arch.layers, &grids, a.budget, &table)?
    } else {
        select_ranks_under_budget(&arch.layers, &grids, a.budget, &table)?
    };

    let mut plan_text = serde_json::to_string_pretty(&plan)?;
    plan_text.push('\n');
    write_text(&a.out, &plan_text)?;

    let config = json!({
        "arch": a.arch,
        "budget": a.budget,
        "gpu": gpu.name,
        "exact": a.exact,
        "out": a.out.display().to_string(),
    });
    let mut mb = ManifestBuilder::new("rank-select", a.seed, 1, config);
    if let Some(p) = &arch_file {
        mb.record_input(p)?;
    }
    mb.record_output(&a.out)?;
    let decomposed = plan.layers.iter().filter(|l| l.decomposed).count();
    let result = json!({
        "achieved_reduction": plan.achieved_reduction,
        "total_latency_s": plan.total_latency_s,
        "layers": plan.layers.len(),
        "decomposed_layers": decomposed,
    });
    mb.write(&out_dir, result)?;
    println!(
        "planned {} of {} layers for '{}': FLOPs reduction {:.2}% (budget {:.2}%), modeled latency {:.4e} s",
        decomposed,
        plan.layers.len(),
        arch.name,
        plan.achieved_reduction * 100.0,
        a.budget * 100.0,
        plan.total_latency_s
    );
    Ok(())
}
