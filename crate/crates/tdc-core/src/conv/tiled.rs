//! CPU executable model of the tiled core-convolution kernel.
//!
//! The launch decomposes the output into `ceil(H/TH) * ceil(W/TW) *
//! ceil(C/TC)` tile tasks. Each task materializes one input tile of
//! `(TH+R-1) x (TW+S-1) x TC` elements (the halo tile a thread block would
//! stage in shared memory; the zero-fill outside the map contributes
//! nothing, so only the in-map part is staged and scattered), then scatters
//! every tile element through the filter taps into a `TH x TW x N` block
//! laid out with the output channel fastest, walking all `N` output
//! channels per tap so the filter reads stay contiguous. Partial blocks from
//! different channel tiles are summed into the final map in ascending
//! channel-tile order, which makes the result bit-identical for any worker
//! count. Output is returned channel-last (HWN order), matching how the
//! modeled kernel writes memory.

use rayon::prelude::*;

use crate::conv::{ConvShape, FeatureMap, Layout, TilingConfig};
use crate::error::{Error, Result};

/// Arithmetic width of the modeled kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy)]
pub struct TiledConvOptions {
    /// Worker threads for tile tasks; 1 runs fully serialized.
    pub workers: usize,
    /// Read filter taps in reversed (r, s) order, turning the engine's
    /// native sliding-window correlation into a true convolution.
    pub flip_kernel: bool,
    pub precision: Precision,
}

impl Default for TiledConvOptions {
    fn default() -> Self {
        Self {
            workers: 1,
            flip_kernel: false,
            precision: Precision::F64,
        }
    }
}

trait Elem: Copy + Send + Sync + 'static {
    const ZERO: Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn mul_add_into(self, k: Self, acc: &mut Self);
    fn add(self, other: Self) -> Self;
}

impl Elem for f64 {
    const ZERO: Self = 0.0;
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    #[inline(always)]
    fn mul_add_into(self, k: Self, acc: &mut Self) {
        *acc += self * k;
    }
    #[inline(always)]
    fn add(self, other: Self) -> Self {
        self + other
    }
}

impl Elem for f32 {
    const ZERO: Self = 0.0;
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline(always)]
    fn mul_add_into(self, k: Self, acc: &mut Self) {
        *acc += self * k;
    }
    #[inline(always)]
    fn add(self, other: Self) -> Self {
        self + other
    }
}

struct Task {
    th_id: usize,
    tw_id: usize,
    tc_id: usize,
}

fn ceil_div(a: usize, b: usize) -> usize {
    a.div_ceil(b)
}

fn halo_len(shape: &ConvShape, t: &TilingConfig) -> usize {
    t.tc * (t.th + shape.r - 1) * (t.tw + shape.s - 1)
}

/// Degenerate 1x1 spatial tile: the output pixel is a plain dot product of
/// the in-map filter window with the kernel, so the halo staging step would
/// only copy values that are read straight back out (or zeros whose taps
/// contribute nothing). Reading the input directly keeps the per-element
/// accumulation in the same (channel, tap) order as the staged path.
fn run_task_point<T: Elem>(
    task: &Task,
    x: &[T],
    k_crsn: &[T],
    shape: &ConvShape,
    t: &TilingConfig,
    block: &mut [T],
) {
    let (h, w, c, n) = (shape.h, shape.w, shape.c, shape.n);
    let (r, s) = (shape.r, shape.s);
    let pad = shape.pad;
    let (gi, gj) = (task.th_id, task.tw_id);
    let rr_lo = pad.saturating_sub(gi);
    let rr_hi = r.min(h + pad - gi);
    let ss_lo = pad.saturating_sub(gj);
    let ss_hi = s.min(w + pad - gj);
    let live_c = (c - task.tc_id * t.tc).min(t.tc);
    for lc in 0..live_c {
        let gc = task.tc_id * t.tc + lc;
        let chan = &x[gc * h * w..(gc + 1) * h * w];
        let k_chan = &k_crsn[gc * r * s * n..(gc + 1) * r * s * n];
        for rr in rr_lo..rr_hi {
            let row_base = (gi + rr - pad) * w;
            for ss in ss_lo..ss_hi {
                let v = chan[row_base + gj + ss - pad];
                let taps = &k_chan[(rr * s + ss) * n..(rr * s + ss + 1) * n];
                for (d, &kv) in block.iter_mut().zip(taps) {
                    v.mul_add_into(kv, d);
                }
            }
        }
    }
}

/// One tile task: stage the halo tile (zero-filled outside the map), then
/// run every in-map output pixel of the tile through the full `R x S` filter
/// window against the staged data, accumulating into the task's
/// `TH x TW x N` block (output channel fastest). For a fixed output element
/// the contributions arrive in (channel, tap) order, so the result never
/// depends on how tasks are scheduled. `tile` is worker-local scratch;
/// `block` arrives zeroed.
fn run_task<T: Elem>(
    task: &Task,
    x: &[T],
    k_crsn: &[T],
    shape: &ConvShape,
    t: &TilingConfig,
    tile: &mut [T],
    block: &mut [T],
) {
    if t.th == 1 && t.tw == 1 {
        return run_task_point(task, x, k_crsn, shape, t, block);
    }
    let (h, w, c, n) = (shape.h, shape.w, shape.c, shape.n);
    let (r, s) = (shape.r, shape.s);
    let pad = shape.pad as isize;
    let (th, tw, tc) = (t.th, t.tw, t.tc);
    let (halo_h, halo_w) = (th + r - 1, tw + s - 1);
    let base_row = (task.th_id * th) as isize - pad;
    let base_col = (task.tw_id * tw) as isize - pad;
    let live_c = (c - task.tc_id * tc).min(tc);

    // Stage the shared-memory tile: zero fill, then copy the part that
    // overlaps the map one row span at a time.
    let lh_lo = (-base_row).max(0) as usize;
    let lh_hi = halo_h.min((h as isize - base_row).max(0) as usize);
    let lw_lo = (-base_col).max(0) as usize;
    let lw_hi = halo_w.min((w as isize - base_col).max(0) as usize);
    tile[..live_c * halo_h * halo_w].fill(T::ZERO);
    if lh_lo < lh_hi && lw_lo < lw_hi {
        let span = lw_hi - lw_lo;
        for lc in 0..live_c {
            let gc = task.tc_id * tc + lc;
            let chan = &x[gc * h * w..(gc + 1) * h * w];
            for lh in lh_lo..lh_hi {
                let src =
                    (base_row + lh as isize) as usize * w + (base_col + lw_lo as isize) as usize;
                let dst = (lc * halo_h + lh) * halo_w + lw_lo;
                tile[dst..dst + span].copy_from_slice(&chan[src..src + span]);
            }
        }
    }

    // Ragged edge tiles: output rows/cols beyond the map are never read, so
    // they are not computed either.
    let y_rows = th.min(h - task.th_id * th);
    let y_cols = tw.min(w - task.tw_id * tw);
    for lc in 0..live_c {
        let gc = task.tc_id * tc + lc;
        let tile_c = &tile[lc * halo_h * halo_w..(lc + 1) * halo_h * halo_w];
        let k_chan = &k_crsn[gc * r * s * n..(gc + 1) * r * s * n];
        for yr in 0..y_rows {
            for yc in 0..y_cols {
                let dst = &mut block[(yr * tw + yc) * n..(yr * tw + yc + 1) * n];
                for rr in 0..r {
                    let row = (yr + rr) * halo_w + yc;
                    for ss in 0..s {
                        let v = tile_c[row + ss];
                        let taps = &k_chan[(rr * s + ss) * n..(rr * s + ss + 1) * n];
                        for (d, &kv) in dst.iter_mut().zip(taps) {
                            v.mul_add_into(kv, d);
                        }
                    }
                }
            }
        }
    }
}

fn run<T: Elem>(
    x: &FeatureMap,
    k_crsn: &[f64],
    shape: &ConvShape,
    t: &TilingConfig,
    opts: &TiledConvOptions,
) -> Result<Vec<f64>> {
    let x_chw = x.convert(Layout::Chw);
    let x_t: Vec<T> = x_chw.data().iter().map(|&v| T::from_f64(v)).collect();
    // True convolution is a one-time tap reversal of the filter buffer; the
    // scatter itself always runs in sliding-window order.
    let mut k_t: Vec<T> = k_crsn.iter().map(|&v| T::from_f64(v)).collect();
    if opts.flip_kernel {
        let (c, n, r, s) = (shape.c, shape.n, shape.r, shape.s);
        let plain = k_t.clone();
        for gc in 0..c {
            for rr in 0..r {
                for ss in 0..s {
                    let dst = ((gc * r + rr) * s + ss) * n;
                    let src = ((gc * r + (r - 1 - rr)) * s + (s - 1 - ss)) * n;
                    k_t[dst..dst + n].copy_from_slice(&plain[src..src + n]);
                }
            }
        }
    }

    let (n_th, n_tw, n_tc) = (
        ceil_div(shape.h, t.th),
        ceil_div(shape.w, t.tw),
        ceil_div(shape.c, t.tc),
    );
    // Channel-tile-major order so the sequential reduction below adds
    // partial sums in ascending channel-tile index.
    let mut tasks = Vec::with_capacity(n_th * n_tw * n_tc);
    for tc_id in 0..n_tc {
        for th_id in 0..n_th {
            for tw_id in 0..n_tw {
                tasks.push(Task { th_id, tw_id, tc_id });
            }
        }
    }

    // Deterministic reduction: partials land in ascending task index order,
    // so each output element accumulates its channel-tile partials in a
    // fixed order regardless of worker count. Each partial is always summed
    // up from zero inside its own block before joining the output, keeping
    // the grouping of floating-point additions identical on every path.
    let blk_len = t.th * t.tw * shape.n;
    let (h, w, n) = (shape.h, shape.w, shape.n);
    let mut out = vec![T::ZERO; h * w * n];
    if opts.workers == 1 {
        let mut tile = vec![T::ZERO; halo_len(shape, t)];
        let mut block = vec![T::ZERO; blk_len];
        for task in &tasks {
            block.iter_mut().for_each(|v| *v = T::ZERO);
            run_task::<T>(task, &x_t, &k_t, shape, t, &mut tile, &mut block);
            add_block(&mut out, task, &block, shape, t);
        }
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.workers)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))?;
        let mut blocks: Vec<T> = vec![T::ZERO; tasks.len() * blk_len];
        pool.install(|| {
            blocks
                .par_chunks_mut(blk_len)
                .enumerate()
                .for_each_init(
                    || vec![T::ZERO; halo_len(shape, t)],
                    |tile, (i, block)| {
                        run_task::<T>(&tasks[i], &x_t, &k_t, shape, t, tile, block)
                    },
                )
        });
        for (task, block) in tasks.iter().zip(blocks.chunks(blk_len)) {
            add_block(&mut out, task, block, shape, t);
        }
    }
    Ok(out.into_iter().map(Elem::to_f64).collect())
}

/// Add one task's `TH x TW x N` partial block into the channel-last output.
fn add_block<T: Elem>(out: &mut [T], task: &Task, block: &[T], shape: &ConvShape, t: &TilingConfig) {
    let (h, w, n) = (shape.h, shape.w, shape.n);
    for lh in 0..t.th {
        let gi = task.th_id * t.th + lh;
        if gi >= h {
            break;
        }
        for lw in 0..t.tw {
            let gj = task.tw_id * t.tw + lw;
            if gj >= w {
                break;
            }
            let src = &block[(lh * t.tw + lw) * n..(lh * t.tw + lw + 1) * n];
            let dst = &mut out[(gi * w + gj) * n..(gi * w + gj + 1) * n];
            for (d, &b) in dst.iter_mut().zip(src) {
                *d = d.add(b);
            }
        }
    }
}

/// Run the modeled tiled kernel. `k_crsn` is the filter in CRSN order; the
/// result is a channel-last map with `N` channels and the input's spatial
/// extent.
pub fn tiled_core_conv(
    x: &FeatureMap,
    k_crsn: &[f64],
    shape: &ConvShape,
    t: &TilingConfig,
    opts: &TiledConvOptions,
) -> Result<FeatureMap> {
    shape.validate_tiled_path()?;
    t.validate(shape)?;
    if opts.workers == 0 {
        return Err(Error::InvalidArgument("workers must be at least 1".into()));
    }
    if (x.channels(), x.height(), x.width()) != (shape.c, shape.h, shape.w) {
        return Err(Error::ShapeMismatch(format!(
            "input map ({},{},{}) does not match conv shape ({},{},{})",
            x.channels(),
            x.height(),
            x.width(),
            shape.c,
            shape.h,
            shape.w
        )));
    }
    if k_crsn.len() != shape.c * shape.n * shape.r * shape.s {
        return Err(Error::ShapeMismatch(format!(
            "CRSN buffer length {} does not match shape {:?}",
            k_crsn.len(),
            shape
        )));
    }
    let data = match opts.precision {
        Precision::F64 => run::<f64>(x, k_crsn, shape, t, opts)?,
        Precision::F32 => run::<f32>(x, k_crsn, shape, t, opts)?,
    };
    FeatureMap::from_vec(Layout::Hwc, shape.n, shape.h, shape.w, data)
}
