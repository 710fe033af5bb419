use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use tdc_core::conv::{ConvShape, TilingConfig};
use tdc_core::perf::GpuSpec;
use tdc_core::tensor::Tensor4;

use crate::errors::{CliError, CliResult};

/// Tiling chosen by `tile-select`, consumed by `conv-bench --plan`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectedPlan {
    pub shape: ConvShape,
    pub tiling: TilingConfig,
    pub mode: String,
    pub evaluator: String,
    pub combined_s: f64,
    pub measured_s: Option<f64>,
}

pub fn parse_usize_list(s: &str, n: usize, what: &str) -> CliResult<Vec<usize>> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != n {
        return Err(CliError::Usage(format!(
            "{what} wants {n} comma-separated integers, got '{s}'"
        )));
    }
    parts
        .iter()
        .map(|p| {
            p.parse::<usize>()
                .map_err(|e| CliError::Usage(format!("{what}: bad integer '{p}': {e}")))
        })
        .collect()
}

/// Parse `H,W,C,N,R,S` into a same-padded stride-1 shape (the form the tiled
/// executor accepts).
pub fn shape_from_arg(s: &str) -> CliResult<ConvShape> {
    let v = parse_usize_list(s, 6, "--shape")?;
    if v[4] != v[5] {
        return Err(CliError::Usage(format!(
            "--shape wants a square filter (R = S), got {}x{}",
            v[4], v[5]
        )));
    }
    let shape = ConvShape::same(v[0], v[1], v[2], v[3], v[4])?;
    shape.validate_tiled_path()?;
    Ok(shape)
}

pub fn tiling_from_arg(s: &str) -> CliResult<TilingConfig> {
    let v = parse_usize_list(s, 3, "--tiling")?;
    Ok(TilingConfig::new(v[0], v[1], v[2]))
}

pub fn ranks_from_arg(s: &str) -> CliResult<(usize, usize)> {
    let v = parse_usize_list(s, 2, "--ranks")?;
    Ok((v[0], v[1]))
}

/// `--gpu` accepts a preset name (`a100`, `2080ti`) or a JSON file path.
pub fn load_gpu(arg: &str) -> CliResult<GpuSpec> {
    if let Ok(spec) = GpuSpec::preset(arg) {
        return Ok(spec);
    }
    let path = Path::new(arg);
    if !path.exists() {
        return Err(CliError::Usage(format!(
            "--gpu '{arg}' is neither a preset (a100, 2080ti) nor an existing file"
        )));
    }
    let text = std::fs::read_to_string(path)?;
    Ok(GpuSpec::from_json_str(&text)?)
}

pub fn default_workers() -> usize {
    std::thread::available_parallelism()
        .map(std::num::NonZeroUsize::get)
        .unwrap_or(1)
}

/// Idempotence guard: refuse to clobber existing outputs unless `--force`.
pub fn guard_outputs(paths: &[PathBuf], force: bool) -> CliResult<()> {
    if force {
        return Ok(());
    }
    for p in paths {
        if p.exists() {
            return Err(CliError::Usage(format!(
                "output {} already exists; pass --force to overwrite",
                p.display()
            )));
        }
    }
    Ok(())
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Usage(format!("cannot create {}: {e}", dir.display())))
}

pub fn read_to_string(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text)
        .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))
}

/// Print without panicking when the reader has closed the pipe (e.g. `head`).
pub fn print_stdout(text: &str) {
    use std::io::Write;
    let _ = std::io::stdout().write_all(text.as_bytes());
}

/// Uniform values in [-1, 1) drawn from the command's single seeded stream.
pub fn gen_uniform<R: Rng>(rng: &mut R, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect()
}

pub fn gen_kernel<R: Rng>(rng: &mut R, shape: &ConvShape) -> Tensor4 {
    let data = gen_uniform(rng, shape.c * shape.n * shape.r * shape.s);
    Tensor4::from_vec([shape.c, shape.n, shape.r, shape.s], data)
        .expect("generated kernel length matches its dims")
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
