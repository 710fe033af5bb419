use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use tdc_core::conv::{
    kernel_to_crsn, tiled_core_conv, FeatureMap, Layout, Precision, TiledConvOptions,
};
use tdc_core::io::{write_tdct, Dtype};

use crate::errors::{CliError, CliResult};
use crate::manifest::{sha256_file, ManifestBuilder};
use crate::util::{
    default_workers, ensure_dir, gen_kernel, gen_uniform, guard_outputs, median, read_to_string,
    shape_from_arg, tiling_from_arg, SelectedPlan,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LayoutArg {
    Hwc,
    Chw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PrecisionArg {
    F32,
    F64,
}

pub const BENCH_CSV_HEADER: &str =
    "H,W,C,N,R,S,TH,TW,TC,layout,precision,flip_kernel,workers,repeats,seed,flops,output_sha256,median_time_s";

#[derive(Debug, Args)]
pub struct ConvBenchArgs {
    /// Convolution shape H,W,C,N,R,S (square odd filter, same padding).
    #[arg(long)]
    pub shape: String,
    /// Tile sizes TH,TW,TC. Mutually exclusive with --plan.
    #[arg(long)]
    pub tiling: Option<String>,
    /// selected.json from tile-select; supplies the tiling.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    /// Timed runs (after one untimed warm-up); the CSV reports the median.
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    /// Layout of the written output feature map.
    #[arg(long, value_enum, default_value_t = LayoutArg::Hwc)]
    pub layout: LayoutArg,
    /// Arithmetic width of the executor.
    #[arg(long, value_enum, default_value_t = PrecisionArg::F64)]
    pub precision: PrecisionArg,
    /// Rotate the filter 180 degrees (true convolution orientation).
    #[arg(long)]
    pub flip_kernel: bool,
    /// Worker threads (default: host parallelism; results are identical
    /// for any count, 1 is the canonical reproducible mode).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Seed for the generated input map and kernel.
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Output directory for y.tdct, bench.csv, manifest.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Overwrite existing outputs.
    #[arg(long)]
    pub force: bool,
}

pub fn run(a: &ConvBenchArgs) -> CliResult<()> {
    let shape = shape_from_arg(&a.shape)?;
    if a.repeats == 0 {
        return Err(CliError::Usage("--repeats must be at least 1".into()));
    }
    let (tiling, plan_source) = match (&a.tiling, &a.plan) {
        (Some(t), None) => (tiling_from_arg(t)?, None),
        (None, Some(p)) => {
            let plan: SelectedPlan = serde_json::from_str(&read_to_string(p)?)?;
            if plan.shape != shape {
                return Err(CliError::Usage(format!(
                    "--plan {} was selected for shape {:?}, not {:?}",
                    p.display(),
                    plan.shape,
                    shape
                )));
            }
            (plan.tiling, Some(p.clone()))
        }
        _ => {
            return Err(CliError::Usage(
                "pass exactly one of --tiling TH,TW,TC or --plan selected.json".into(),
            ));
        }
    };

    ensure_dir(&a.out)?;
    let y_path = a.out.join("y.tdct");
    let csv_path = a.out.join("bench.csv");
    let manifest_path = a.out.join(crate::manifest::MANIFEST_FILE);
    guard_outputs(&[y_path.clone(), csv_path.clone(), manifest_path], a.force)?;

    let workers = a.workers.unwrap_or_else(default_workers);
    let opts = TiledConvOptions {
        workers,
        flip_kernel: a.flip_kernel,
        precision: match a.precision {
            PrecisionArg::F32 => Precision::F32,
            PrecisionArg::F64 => Precision::F64,
        },
    };

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

    let y = tiled_core_conv(&x, &k_crsn, &shape, &tiling, &opts)?;
    let mut times = Vec::with_capacity(a.repeats);
    for _ in 0..a.repeats {
        let start = Instant::now();
        tiled_core_conv(&x, &k_crsn, &shape, &tiling, &opts)?;
        times.push(start.elapsed().as_secs_f64());
    }
    let med = median(times.clone());

    let (layout_name, target) = match a.layout {
        LayoutArg::Hwc => ("hwc", Layout::Hwc),
        LayoutArg::Chw => ("chw", Layout::Chw),
    };
    let y_out = y.convert(target);
    let dims: Vec<u64> = match target {
        Layout::Hwc => vec![y.height() as u64, y.width() as u64, y.channels() as u64],
        Layout::Chw => vec![y.channels() as u64, y.height() as u64, y.width() as u64],
    };
    let dtype = match a.precision {
        PrecisionArg::F32 => Dtype::F32,
        PrecisionArg::F64 => Dtype::F64,
    };
    write_tdct(&y_path, &dims, y_out.data(), dtype)?;
    let y_digest = sha256_file(&y_path)?;

    let precision_name = match a.precision {
        PrecisionArg::F32 => "f32",
        PrecisionArg::F64 => "f64",
    };
    let flops: u64 = 2
        * (shape.out_h() as u64)
        * (shape.out_w() as u64)
        * (shape.c as u64)
        * (shape.n as u64)
        * (shape.r as u64)
        * (shape.s as u64);
    let csv = format!(
        "{BENCH_CSV_HEADER}\n{},{},{},{},{},{},{},{},{},{layout_name},{precision_name},{},{workers},{},{},{flops},{y_digest},{med}\n",
        shape.h,
        shape.w,
        shape.c,
        shape.n,
        shape.r,
        shape.s,
        tiling.th,
        tiling.tw,
        tiling.tc,
        a.flip_kernel,
        a.repeats,
        a.seed,
    );
    crate::util::write_text(&csv_path, &csv)?;

    let config = json!({
        "shape": shape,
        "tiling": tiling,
        "plan": plan_source.as_ref().map(|p| p.display().to_string()),
        "repeats": a.repeats,
        "layout": layout_name,
        "precision": precision_name,
        "flip_kernel": a.flip_kernel,
        "workers": workers,
        "out": a.out.display().to_string(),
    });
    let mut mb = ManifestBuilder::new("conv-bench", a.seed, workers, config);
    if let Some(p) = &plan_source {
        mb.record_input(p)?;
    }
    mb.record_output(&y_path)?;
    mb.record_output(&csv_path)?;
    let result = json!({
        "median_time_s": med,
        "times_s": times,
        "flops": flops,
        "output_sha256": y_digest,
    });
    mb.write(&a.out, result)?;
    println!(
        "tiled conv {}x{}x{}x{} tile ({},{},{}): median {med:.6e} s over {} runs",
        shape.h, shape.w, shape.c, shape.n, tiling.th, tiling.tw, tiling.tc, a.repeats
    );
    Ok(())
}
