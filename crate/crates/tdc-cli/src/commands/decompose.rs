use std::path::PathBuf;

use clap::Args;
use serde_json::json;
use tdc_core::io::{read_tensor4, write_matrix, write_tensor4};
use tdc_core::tucker::{tucker2_decompose, tucker2_reconstruct};

use crate::errors::{CliError, CliResult};
use crate::manifest::ManifestBuilder;
use crate::util::{ensure_dir, guard_outputs, ranks_from_arg};

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    /// Kernel tensor file (.tdct, dims C,N,R,S).
    #[arg(long)]
    pub kernel: PathBuf,
    /// Target ranks D1,D2 for the input/output channel modes.
    #[arg(long)]
    pub ranks: String,
    /// Output directory for u1.tdct, u2.tdct, core.tdct, manifest.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Overwrite existing outputs.
    #[arg(long)]
    pub force: bool,
    /// Recorded in the manifest; this command is fully deterministic.
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

pub fn run(a: &DecomposeArgs) -> CliResult<()> {
    let (d1, d2) = ranks_from_arg(&a.ranks)?;
    ensure_dir(&a.out)?;
    let u1_path = a.out.join("u1.tdct");
    let u2_path = a.out.join("u2.tdct");
    let core_path = a.out.join("core.tdct");
    let manifest_path = a.out.join(crate::manifest::MANIFEST_FILE);
    guard_outputs(
        &[u1_path.clone(), u2_path.clone(), core_path.clone(), manifest_path],
        a.force,
    )?;

    let kernel = read_tensor4(&a.kernel)?;
    let factors = tucker2_decompose(&kernel, d1, d2)?;
    let rebuilt = tucker2_reconstruct(&factors);
    let norm = kernel.frobenius_norm();
    if norm == 0.0 {
        return Err(CliError::Numerical(
            "kernel has zero Frobenius norm; relative error undefined".into(),
        ));
    }
    let err = kernel.sub(&rebuilt)?.frobenius_norm() / norm;

    write_matrix(&u1_path, &factors.u1)?;
    write_matrix(&u2_path, &factors.u2)?;
    write_tensor4(&core_path, &factors.core)?;

    let config = json!({
        "kernel": a.kernel.display().to_string(),
        "ranks": [d1, d2],
        "out": a.out.display().to_string(),
    });
    let mut mb = ManifestBuilder::new("decompose", a.seed, 1, config);
    mb.record_input(&a.kernel)?;
    mb.record_output(&u1_path)?;
    mb.record_output(&u2_path)?;
    mb.record_output(&core_path)?;
    let result = json!({
        "kernel_dims": kernel.dims(),
        "ranks": [d1, d2],
        "reconstruction_error_rel": err,
    });
    mb.write(&a.out, result)?;
    println!(
        "decomposed {:?} at ranks ({d1}, {d2}); relative reconstruction error {err:.6e}",
        kernel.dims()
    );
    Ok(())
}
