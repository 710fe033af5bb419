//! Tiling-size search: the fast two-stage analytical selector and the
//! exhaustive search that evaluates every valid candidate, either through
//! the latency model or by timing the CPU executable kernel.

use std::time::Instant;

use rayon::prelude::*;

use crate::conv::{tiled_core_conv, ConvShape, FeatureMap, TilingConfig, TiledConvOptions};
use crate::error::{Error, Result};
use crate::perf::{estimate_latency, estimate_occupancy, GpuSpec, LatencyEstimate};

/// One evaluated tiling: its model estimate and, when the exhaustive search
/// timed the executable kernel, the median measured seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct TilingCandidate {
    pub config: TilingConfig,
    pub estimate: LatencyEstimate,
    pub measured: Option<f64>,
}

/// Above this raw triple count the CLI defaults to divisor tilings.
pub const ENUMERATION_LIMIT: u64 = 100_000;

pub fn auto_divisors_only(shape: &ConvShape) -> bool {
    (shape.h as u64) * (shape.w as u64) * (shape.c as u64) > ENUMERATION_LIMIT
}

/// All tile triples `1..=H x 1..=W x 1..=C` that fit the device, in
/// lexicographic `(TH, TW, TC)` order. `divisors_only` restricts each axis
/// to exact divisors of its extent.
pub fn enumerate_valid_tilings(
    shape: &ConvShape,
    g: &GpuSpec,
    divisors_only: bool,
) -> Vec<TilingConfig> {
    let keep = |tile: usize, extent: usize| !divisors_only || extent % tile == 0;
    let mut out = Vec::new();
    for th in 1..=shape.h {
        if !keep(th, shape.h) {
            continue;
        }
        for tw in 1..=shape.w {
            if !keep(tw, shape.w) {
                continue;
            }
            for tc in 1..=shape.c {
                if !keep(tc, shape.c) {
                    continue;
                }
                let t = TilingConfig::new(th, tw, tc);
                if estimate_occupancy(shape, &t, g).valid {
                    out.push(t);
                }
            }
        }
    }
    out
}

fn estimate_all(
    shape: &ConvShape,
    g: &GpuSpec,
    candidates: &[TilingConfig],
) -> Result<Vec<TilingCandidate>> {
    candidates
        .par_iter()
        .map(|t| {
            Ok(TilingCandidate {
                config: *t,
                estimate: estimate_latency(shape, t, g)?,
                measured: None,
            })
        })
        .collect()
}

/// Two-stage analytical selection: keep the `top_frac` fraction of
/// candidates with the lowest compute latency (at least one), then return
/// the survivor with the lowest memory latency. Ties break lexicographically
/// on the tile triple, so identical inputs always select identically.
pub fn select_tiling_analytical(
    shape: &ConvShape,
    g: &GpuSpec,
    candidates: &[TilingConfig],
) -> Result<TilingCandidate> {
    if candidates.is_empty() {
        return Err(Error::EmptyCandidateSet(
            "no valid tilings to select from".into(),
        ));
    }
    let mut evaluated = estimate_all(shape, g, candidates)?;
    evaluated.sort_by(|a, b| {
        a.estimate
            .comp_latency
            .total_cmp(&b.estimate.comp_latency)
            .then(a.config.cmp(&b.config))
    });
    let keep = ((g.top_frac * evaluated.len() as f64).ceil() as usize)
        .clamp(1, evaluated.len());
    let survivors = &evaluated[..keep];
    let best = survivors
        .iter()
        .min_by(|a, b| {
            a.estimate
                .mem_latency
                .total_cmp(&b.estimate.mem_latency)
                .then(a.config.cmp(&b.config))
        })
        .expect("survivor set is nonempty");
    Ok(best.clone())
}

/// How the exhaustive search scores one candidate.
pub enum Evaluator<'a> {
    /// Rank by the model's combined compute-plus-memory latency.
    Modeled,
    /// Rank by wall-clock timing of the executable kernel on this host:
    /// one untimed warm-up run, then the median of `repeats` timed runs.
    /// Candidates run strictly one at a time.
    Measured {
        x: &'a FeatureMap,
        k_crsn: &'a [f64],
        repeats: usize,
    },
}

#[derive(Debug, Clone)]
pub struct ExhaustiveResult {
    pub best: TilingCandidate,
    /// Every candidate, sorted ascending by the evaluator's score.
    pub ranking: Vec<TilingCandidate>,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Evaluate every candidate and return the argmin plus the full ranking.
pub fn select_tiling_exhaustive(
    shape: &ConvShape,
    g: &GpuSpec,
    candidates: &[TilingConfig],
    evaluator: &Evaluator,
) -> Result<ExhaustiveResult> {
    if candidates.is_empty() {
        return Err(Error::EmptyCandidateSet(
            "no valid tilings to search over".into(),
        ));
    }
    let mut ranking = estimate_all(shape, g, candidates)?;
    match evaluator {
        Evaluator::Modeled => {
            ranking.sort_by(|a, b| {
                a.estimate
                    .combined
                    .total_cmp(&b.estimate.combined)
                    .then(a.config.cmp(&b.config))
            });
        }
        Evaluator::Measured { x, k_crsn, repeats } => {
            if *repeats == 0 {
                return Err(Error::InvalidArgument(
                    "measured search needs at least one repeat".into(),
                ));
            }
            let opts = TiledConvOptions::default();
            // One untimed warm-up pass over the whole field, then one timed
            // run per candidate per pass, so every candidate's samples are
            // spread across the sweep. A transient slowdown of the host then
            // taxes all candidates alike instead of whichever ones happened
            // to be measured during it, and the median discards it.
            let mut times = vec![Vec::with_capacity(*repeats); ranking.len()];
            for cand in ranking.iter() {
                tiled_core_conv(x, k_crsn, shape, &cand.config, &opts)?;
            }
            for _ in 0..*repeats {
                for (cand, samples) in ranking.iter().zip(times.iter_mut()) {
                    let start = Instant::now();
                    tiled_core_conv(x, k_crsn, shape, &cand.config, &opts)?;
                    samples.push(start.elapsed().as_secs_f64());
                }
            }
            for (cand, samples) in ranking.iter_mut().zip(times) {
                cand.measured = Some(median(samples));
            }
            ranking.sort_by(|a, b| {
                a.measured
                    .unwrap()
                    .total_cmp(&b.measured.unwrap())
                    .then(a.config.cmp(&b.config))
            });
        }
    }
    Ok(ExhaustiveResult {
        best: ranking[0].clone(),
        ranking,
    })
}

/// Flat CSV row for persisted rankings.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingRow {
    pub th: usize,
    pub tw: usize,
    pub tc: usize,
    pub occupancy: f64,
    pub comp_waves: u64,
    pub comp_latency_s: f64,
    pub volume_total: u64,
    pub mem_latency_s: f64,
    pub combined_s: f64,
    pub measured_s: Option<f64>,
}

impl From<&TilingCandidate> for RankingRow {
    fn from(c: &TilingCandidate) -> Self {
        RankingRow {
            th: c.config.th,
            tw: c.config.tw,
            tc: c.config.tc,
            occupancy: c.estimate.occupancy,
            comp_waves: c.estimate.comp_waves,
            comp_latency_s: c.estimate.comp_latency,
            volume_total: c.estimate.volume_total,
            mem_latency_s: c.estimate.mem_latency,
            combined_s: c.estimate.combined,
            measured_s: c.measured,
        }
    }
}

pub const RANKING_CSV_HEADER: &str =
    "TH,TW,TC,occupancy,comp_waves,comp_latency_s,volume_total,mem_latency_s,combined_s,measured_s";

pub fn ranking_to_csv(ranking: &[TilingCandidate]) -> String {
    let mut out = String::from(RANKING_CSV_HEADER);
    out.push('\n');
    for cand in ranking {
        let row = RankingRow::from(cand);
        let measured = row
            .measured_s
            .map(|m| m.to_string())
            .unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            row.th,
            row.tw,
            row.tc,
            row.occupancy,
            row.comp_waves,
            row.comp_latency_s,
            row.volume_total,
            row.mem_latency_s,
            row.combined_s,
            measured
        ));
    }
    out
}

pub fn ranking_from_csv(text: &str) -> Result<Vec<RankingRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == RANKING_CSV_HEADER => {}
        other => {
            return Err(Error::Format(format!(
                "bad ranking CSV header: {other:?}"
            )))
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 10 {
            return Err(Error::Format(format!(
                "ranking CSV line {} has {} columns, want 10",
                i + 2,
                cols.len()
            )));
        }
        let field = |j: usize, name: &str| -> Result<f64> {
            cols[j]
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::Format(format!("line {}: bad {name}: {e}", i + 2)))
        };
        let int = |j: usize, name: &str| -> Result<u64> {
            cols[j]
                .trim()
                .parse::<u64>()
                .map_err(|e| Error::Format(format!("line {}: bad {name}: {e}", i + 2)))
        };
        let measured = cols[9].trim();
        rows.push(RankingRow {
            th: int(0, "TH")? as usize,
            tw: int(1, "TW")? as usize,
            tc: int(2, "TC")? as usize,
            occupancy: field(3, "occupancy")?,
            comp_waves: int(4, "comp_waves")?,
            comp_latency_s: field(5, "comp_latency_s")?,
            volume_total: int(6, "volume_total")?,
            mem_latency_s: field(7, "mem_latency_s")?,
            combined_s: field(8, "combined_s")?,
            measured_s: if measured.is_empty() {
                None
            } else {
                Some(field(9, "measured_s")?)
            },
        });
    }
    Ok(rows)
}
