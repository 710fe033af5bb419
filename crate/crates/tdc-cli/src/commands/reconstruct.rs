use std::path::PathBuf;

use clap::Args;
use serde_json::json;
use tdc_core::io::{read_matrix, read_tensor4, write_tensor4};
use tdc_core::tucker::{tucker2_reconstruct, TuckerFactors};

use crate::errors::CliResult;
use crate::manifest::ManifestBuilder;
use crate::util::{ensure_dir, guard_outputs};

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    /// Directory holding u1.tdct, u2.tdct, core.tdct (as written by decompose).
    pub factors: PathBuf,
    /// Output directory for k_hat.tdct and its manifest (default: FACTORS/recon).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long)]
    pub force: bool,
    /// Recorded in the manifest; this command is fully deterministic.
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

pub fn run(a: &ReconstructArgs) -> CliResult<()> {
    let out = a.out.clone().unwrap_or_else(|| a.factors.join("recon"));
    ensure_dir(&out)?;
    let k_hat_path = out.join("k_hat.tdct");
    let manifest_path = out.join(crate::manifest::MANIFEST_FILE);
    guard_outputs(&[k_hat_path.clone(), manifest_path], a.force)?;

    let u1_path = a.factors.join("u1.tdct");
    let u2_path = a.factors.join("u2.tdct");
    let core_path = a.factors.join("core.tdct");
    let factors = TuckerFactors {
        u1: read_matrix(&u1_path)?,
        u2: read_matrix(&u2_path)?,
        core: read_tensor4(&core_path)?,
    };
    let k_hat = tucker2_reconstruct(&factors);
    write_tensor4(&k_hat_path, &k_hat)?;

    let config = json!({
        "factors": a.factors.display().to_string(),
        "out": out.display().to_string(),
    });
    let mut mb = ManifestBuilder::new("reconstruct", a.seed, 1, config);
    mb.record_input(&u1_path)?;
    mb.record_input(&u2_path)?;
    mb.record_input(&core_path)?;
    mb.record_output(&k_hat_path)?;
    let result = json!({
        "k_hat_dims": k_hat.dims(),
        "core_dims": factors.core.dims(),
    });
    mb.write(&out, result)?;
    println!(
        "reconstructed kernel {:?} -> {}",
        k_hat.dims(),
        k_hat_path.display()
    );
    Ok(())
}
