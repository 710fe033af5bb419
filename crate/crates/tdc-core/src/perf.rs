//! Analytical latency model for the tiled core convolution.
//!
//! Compute latency is modeled in whole GPU waves: occupancy bounds how many
//! thread blocks fit per SM, the wave count is the ceiling of total blocks
//! over simultaneously resident blocks, and each wave costs the closed-form
//! per-block latency. Memory latency converts the per-launch data-movement
//! volume (kernel reloads per spatial tile, haloed input tiles, output
//! partial sums per channel tile) through an effective-bandwidth term.

use serde::{Deserialize, Serialize};

use crate::conv::{ConvShape, TilingConfig};
use crate::error::{Error, Result};

fn default_bandwidth_efficiency() -> f64 {
    0.8
}

fn default_top_frac() -> f64 {
    0.05
}

/// Hardware description consumed by the latency model. Loaded from JSON with
/// exactly these field names; `bandwidth_efficiency` and `top_frac` are
/// optional with defaults 0.8 and 0.05.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpuSpec {
    pub name: String,
    pub num_sms: usize,
    pub max_threads_per_sm: usize,
    pub max_threads_per_block: usize,
    pub smem_per_block_bytes: u64,
    pub smem_per_sm_bytes: u64,
    pub max_blocks_per_sm: usize,
    pub peak_flops: f64,
    pub mem_bandwidth: f64,
    #[serde(default = "default_bandwidth_efficiency")]
    pub bandwidth_efficiency: f64,
    #[serde(default = "default_top_frac")]
    pub top_frac: f64,
}

impl GpuSpec {
    /// Total simultaneously resident threads the device can hold.
    pub fn gpu_ths(&self) -> usize {
        self.num_sms * self.max_threads_per_sm
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let spec: GpuSpec = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    /// Bundled hardware presets by name.
    pub fn preset(name: &str) -> Result<Self> {
        let body = match name {
            "a100" => include_str!("../presets/a100.json"),
            "2080ti" => include_str!("../presets/2080ti.json"),
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown GPU preset '{other}' (have: a100, 2080ti)"
                )))
            }
        };
        Self::from_json_str(body)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_sms == 0
            || self.max_threads_per_sm == 0
            || self.max_threads_per_block == 0
        {
            return Err(Error::InvalidArgument(
                "GPU spec SM/thread limits must be positive".into(),
            ));
        }
        if !(self.peak_flops > 0.0) || !(self.mem_bandwidth > 0.0) {
            return Err(Error::InvalidArgument(
                "GPU spec peak_flops and mem_bandwidth must be positive".into(),
            ));
        }
        if !(self.bandwidth_efficiency > 0.0 && self.bandwidth_efficiency <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "bandwidth_efficiency must be in (0, 1], got {}",
                self.bandwidth_efficiency
            )));
        }
        if !(self.top_frac > 0.0 && self.top_frac <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "top_frac must be in (0, 1], got {}",
                self.top_frac
            )));
        }
        Ok(())
    }
}

/// Occupancy estimate for one tiling. `valid` is false when the tile blows
/// the shared-memory budget, the block needs more threads than the device
/// allows, or no block fits on an SM; such tilings are skipped, not errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Occupancy {
    pub occupancy: f64,
    pub valid: bool,
}

/// Shared-memory bytes one block stages: the haloed f32 input tile.
pub fn smem_block_bytes(shape: &ConvShape, t: &TilingConfig) -> u64 {
    (t.tc * (t.th + shape.r - 1) * (t.tw + shape.s - 1) * 4) as u64
}

pub fn estimate_occupancy(shape: &ConvShape, t: &TilingConfig, g: &GpuSpec) -> Occupancy {
    let smem_blk = smem_block_bytes(shape, t);
    if smem_blk > g.smem_per_block_bytes || shape.n > g.max_threads_per_block {
        return Occupancy {
            occupancy: 0.0,
            valid: false,
        };
    }
    let by_smem = (g.smem_per_sm_bytes / smem_blk) as usize;
    let by_threads = g.max_threads_per_sm / shape.n;
    let blocks_per_sm = by_smem.min(g.max_blocks_per_sm).min(by_threads);
    if blocks_per_sm == 0 {
        return Occupancy {
            occupancy: 0.0,
            valid: false,
        };
    }
    let occ = (blocks_per_sm * shape.n) as f64 / g.max_threads_per_sm as f64;
    Occupancy {
        occupancy: occ.min(1.0),
        valid: true,
    }
}

/// Closed-form compute latency of one wave of thread blocks: every resident
/// thread processes its tile's haloed footprint through the RxS filter at
/// FMA throughput. The output-channel count cancels out of the derivation.
pub fn comp_latency_block(shape: &ConvShape, t: &TilingConfig, g: &GpuSpec) -> f64 {
    let halo = ((t.th + shape.r - 1) * (t.tw + shape.s - 1)) as f64;
    2.0 * halo * t.tc as f64 * g.gpu_ths() as f64 * (shape.r * shape.s) as f64 / g.peak_flops
}

fn tile_counts(shape: &ConvShape, t: &TilingConfig) -> (u64, u64, u64) {
    (
        shape.h.div_ceil(t.th) as u64,
        shape.w.div_ceil(t.tw) as u64,
        shape.c.div_ceil(t.tc) as u64,
    )
}

/// Number of GPU waves needed to run every tile block at the given
/// occupancy. Exact-quotient boundaries snap down before the ceiling so a
/// perfectly filled device counts one wave.
pub fn comp_waves(shape: &ConvShape, t: &TilingConfig, g: &GpuSpec, occupancy: f64) -> u64 {
    let (nh, nw, nc) = tile_counts(shape, t);
    let total_threads = (nh * nw * nc * shape.n as u64) as f64;
    let capacity = g.gpu_ths() as f64 * occupancy;
    let waves = (total_threads / capacity - 1e-12).ceil();
    (waves.max(1.0)) as u64
}

/// Wave count times per-wave latency. Errors when the tiling cannot run on
/// the device at all.
pub fn comp_latency_total(shape: &ConvShape, t: &TilingConfig, g: &GpuSpec) -> Result<f64> {
    let occ = estimate_occupancy(shape, t, g);
    if !occ.valid {
        return Err(Error::InvalidTiling(format!(
            "tiling {t:?} does not fit on '{}'",
            g.name
        )));
    }
    Ok(comp_waves(shape, t, g, occ.occupancy) as f64 * comp_latency_block(shape, t, g))
}

/// Per-launch element traffic: filter reloads per spatial tile, haloed input
/// tiles, and one output pass per channel tile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataVolumes {
    pub volume_k: u64,
    pub volume_x: u64,
    pub volume_y: u64,
    pub total: u64,
}

pub fn data_volumes(shape: &ConvShape, t: &TilingConfig) -> DataVolumes {
    let (nh, nw, nc) = tile_counts(shape, t);
    let halo = ((t.th + shape.r - 1) * (t.tw + shape.s - 1)) as u64;
    let volume_k = nh * nw * (shape.c * shape.n) as u64;
    let volume_x = nh * nw * shape.c as u64 * halo;
    let volume_y = (shape.h * shape.w * shape.n) as u64 * nc;
    DataVolumes {
        volume_k,
        volume_x,
        volume_y,
        total: volume_k + volume_x + volume_y,
    }
}

/// Seconds to move `total_elements` f32 values at effective bandwidth.
pub fn mem_latency(total_elements: u64, g: &GpuSpec) -> f64 {
    total_elements as f64 * 4.0 / (g.mem_bandwidth * g.bandwidth_efficiency)
}

/// Full model evaluation for one tiling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyEstimate {
    pub comp_latency_blk: f64,
    pub occupancy: f64,
    pub comp_waves: u64,
    pub comp_latency: f64,
    pub volume_k: u64,
    pub volume_x: u64,
    pub volume_y: u64,
    pub volume_total: u64,
    pub mem_latency: f64,
    pub combined: f64,
}

pub fn estimate_latency(
    shape: &ConvShape,
    t: &TilingConfig,
    g: &GpuSpec,
) -> Result<LatencyEstimate> {
    t.validate(shape)?;
    let occ = estimate_occupancy(shape, t, g);
    if !occ.valid {
        return Err(Error::InvalidTiling(format!(
            "tiling {t:?} does not fit on '{}'",
            g.name
        )));
    }
    let blk = comp_latency_block(shape, t, g);
    let waves = comp_waves(shape, t, g, occ.occupancy);
    let vols = data_volumes(shape, t);
    let mem = mem_latency(vols.total, g);
    let comp = waves as f64 * blk;
    Ok(LatencyEstimate {
        comp_latency_blk: blk,
        occupancy: occ.occupancy,
        comp_waves: waves,
        comp_latency: comp,
        volume_k: vols.volume_k,
        volume_x: vols.volume_x,
        volume_y: vols.volume_y,
        volume_total: vols.total,
        mem_latency: mem,
        combined: comp + mem,
    })
}
