use std::path::PathBuf;

use clap::{Args, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use tdc_core::conv::{kernel_to_crsn, FeatureMap, Layout};
use tdc_core::tiling::{
    auto_divisors_only, enumerate_valid_tilings, ranking_to_csv, select_tiling_analytical,
    select_tiling_exhaustive, Evaluator, TilingCandidate,
};

use crate::errors::{CliError, CliResult};
use crate::manifest::ManifestBuilder;
use crate::util::{
    ensure_dir, gen_kernel, gen_uniform, guard_outputs, load_gpu, shape_from_arg, write_text,
    SelectedPlan,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    /// Two-stage analytical selection from the latency model.
    Model,
    /// Exhaustive argmin over every candidate.
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvaluatorArg {
    /// Score candidates by modeled combined latency.
    Modeled,
    /// Score candidates by wall-clock runs of the executor (oracle mode only).
    Measured,
}

#[derive(Debug, Args)]
pub struct TileSelectArgs {
    /// Convolution shape H,W,C,N,R,S (square odd filter, same padding).
    #[arg(long)]
    pub shape: String,
    /// Device preset (a100, 2080ti) or GPU spec JSON path.
    #[arg(long, default_value = "a100")]
    pub gpu: String,
    #[arg(long, value_enum, default_value_t = ModeArg::Model)]
    pub mode: ModeArg,
    #[arg(long, value_enum, default_value_t = EvaluatorArg::Modeled)]
    pub evaluator: EvaluatorArg,
    /// Stage-1 keep fraction; overrides the device preset's value.
    #[arg(long)]
    pub top_frac: Option<f64>,
    /// Restrict tile sizes to divisors of each axis.
    #[arg(long)]
    pub divisors_only: bool,
    /// Timed runs per candidate for the measured evaluator.
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    /// Seed for measured-evaluator input generation.
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Recorded in the manifest. Candidate scoring is order-independent and
    /// measured runs are serialized, so results do not depend on this.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Output directory for ranking.csv, selected.json, manifest.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Overwrite existing outputs.
    #[arg(long)]
    pub force: bool,
}

pub fn run(a: &TileSelectArgs) -> CliResult<()> {
    let shape = shape_from_arg(&a.shape)?;
    let mut gpu = load_gpu(&a.gpu)?;
    if let Some(f) = a.top_frac {
        if !(f > 0.0 && f <= 1.0) {
            return Err(CliError::Usage(format!(
                "--top-frac must lie in (0, 1], got {f}"
            )));
        }
        gpu.top_frac = f;
    }
    if a.mode == ModeArg::Model && a.evaluator == EvaluatorArg::Measured {
        return Err(CliError::Usage(
            "--evaluator measured applies to --mode oracle".into(),
        ));
    }

    let mut divisors_only = a.divisors_only;
    if !divisors_only && auto_divisors_only(&shape) {
        divisors_only = true;
        eprintln!(
            "note: raw candidate grid for this shape exceeds the enumeration limit; \
             restricting to divisor tilings"
        );
    }
    let candidates = enumerate_valid_tilings(&shape, &gpu, divisors_only);
    if candidates.is_empty() {
        return Err(CliError::Usage(format!(
            "no tiling for {shape:?} fits device '{}'",
            gpu.name
        )));
    }

    ensure_dir(&a.out)?;
    let csv_path = a.out.join("ranking.csv");
    let sel_path = a.out.join("selected.json");
    let manifest_path = a.out.join(crate::manifest::MANIFEST_FILE);
    guard_outputs(&[csv_path.clone(), sel_path.clone(), manifest_path], a.force)?;

    let evaluator_name = match (a.mode, a.evaluator) {
        (ModeArg::Model, _) => "modeled",
        (ModeArg::Oracle, EvaluatorArg::Modeled) => "modeled",
        (ModeArg::Oracle, EvaluatorArg::Measured) => "measured",
    };
    let (selected, ranking): (TilingCandidate, Vec<TilingCandidate>) = match a.mode {
        ModeArg::Model => {
            let pick = select_tiling_analytical(&shape, &gpu, &candidates)?;
            let ex = select_tiling_exhaustive(&shape, &gpu, &candidates, &Evaluator::Modeled)?;
            (pick, ex.ranking)
        }
        ModeArg::Oracle => match a.evaluator {
            EvaluatorArg::Modeled => {
                let ex =
                    select_tiling_exhaustive(&shape, &gpu, &candidates, &Evaluator::Modeled)?;
                (ex.best, ex.ranking)
            }
            EvaluatorArg::Measured => {
                let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
                let x = FeatureMap::from_vec(
                    Layout::Hwc,
                    shape.c,
                    shape.h,
                    shape.w,
                    gen_uniform(&mut rng, shape.c * shape.h * shape.w),
                )?;
                let kernel = gen_kernel(&mut rng, &shape);
                let k_crsn = kernel_to_crsn(&kernel);
                let ex = select_tiling_exhaustive(
                    &shape,
                    &gpu,
                    &candidates,
                    &Evaluator::Measured {
                        x: &x,
                        k_crsn: &k_crsn,
                        repeats: a.repeats,
                    },
                )?;
                (ex.best, ex.ranking)
            }
        },
    };

    write_text(&csv_path, &ranking_to_csv(&ranking))?;
    let mode_name = match a.mode {
        ModeArg::Model => "model",
        ModeArg::Oracle => "oracle",
    };
    let plan = SelectedPlan {
        shape,
        tiling: selected.config,
        mode: mode_name.to_string(),
        evaluator: evaluator_name.to_string(),
        combined_s: selected.estimate.combined,
        measured_s: selected.measured,
    };
    let mut plan_text = serde_json::to_string_pretty(&plan)?;
    plan_text.push('\n');
    write_text(&sel_path, &plan_text)?;

    let config = json!({
        "shape": shape,
        "gpu": gpu,
        "mode": mode_name,
        "evaluator": evaluator_name,
        "divisors_only": divisors_only,
        "repeats": a.repeats,
        "out": a.out.display().to_string(),
    });
    let mut mb = ManifestBuilder::new("tile-select", a.seed, 1, config);
    mb.record_output(&csv_path)?;
    mb.record_output(&sel_path)?;
    let result = json!({
        "selected": plan,
        "candidates": ranking.len(),
    });
    mb.write(&a.out, result)?;
    println!(
        "selected tile ({}, {}, {}) for {}x{}x{}x{} on '{}' out of {} candidates ({mode_name}/{evaluator_name})",
        selected.config.th,
        selected.config.tw,
        selected.config.tc,
        shape.h,
        shape.w,
        shape.c,
        shape.n,
        gpu.name,
        ranking.len()
    );
    Ok(())
}
