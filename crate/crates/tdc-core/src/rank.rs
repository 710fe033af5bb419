//! FLOPs accounting and hardware-aware Tucker-rank selection.
//!
//! A rank-latency table is benchmarked once per architecture: for every
//! allowed layer and every grid rank pair, the core convolution's modeled
//! latency under its best tiling plus the memory cost of the two 1x1
//! stages. Selection then descends from maximal ranks, repeatedly taking
//! the single-layer rank reduction with the best latency-per-FLOP payoff
//! until the compression budget is met, finishing with a local-optimality
//! pass. An exact Pareto-frontier sweep over the grid is available for
//! small models as an optimality reference.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conv::ConvShape;
use crate::error::{Error, Result};
use crate::perf::{mem_latency, GpuSpec};
use crate::tiling::{enumerate_valid_tilings, select_tiling_analytical, auto_divisors_only};

/// One convolution layer of an architecture. Layers with `allowed = false`
/// (stems, pointwise convolutions) are never decomposed but still count
/// toward totals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDesc {
    pub id: String,
    pub shape: ConvShape,
    pub allowed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arch {
    pub name: String,
    pub layers: Vec<LayerDesc>,
}

impl Arch {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let arch: Arch = serde_json::from_str(s)?;
        arch.validate()?;
        Ok(arch)
    }

    /// Bundled architecture descriptions by name.
    pub fn bundled(name: &str) -> Result<Self> {
        let body = match name {
            "resnet18-like" => include_str!("../archs/resnet18-like.json"),
            "vgg16-like" => include_str!("../archs/vgg16-like.json"),
            "toy6" => include_str!("../archs/toy6.json"),
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown bundled arch '{other}' (have: resnet18-like, vgg16-like, toy6)"
                )))
            }
        };
        Self::from_json_str(body)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidArgument("arch has no layers".into()));
        }
        for l in &self.layers {
            l.shape.validate()?;
        }
        Ok(())
    }
}

/// Dense and Tucker-format FLOPs of one layer (1 MAC = 2 FLOPs). The Tucker
/// count covers the input projection, the core convolution, and the output
/// expansion.
pub fn flops_counts(shape: &ConvShape, d1: usize, d2: usize) -> Result<(u64, u64)> {
    if d1 == 0 || d2 == 0 || d1 > shape.c || d2 > shape.n {
        return Err(Error::InvalidArgument(format!(
            "ranks ({d1}, {d2}) out of bounds for channels ({}, {})",
            shape.c, shape.n
        )));
    }
    let (h, w) = (shape.h as u64, shape.w as u64);
    let (oh, ow) = (shape.out_h() as u64, shape.out_w() as u64);
    let (c, n, r, s) = (
        shape.c as u64,
        shape.n as u64,
        shape.r as u64,
        shape.s as u64,
    );
    let (d1, d2) = (d1 as u64, d2 as u64);
    let orig = 2 * oh * ow * c * n * r * s;
    let tucker = 2 * h * w * c * d1 + 2 * oh * ow * d1 * d2 * r * s + 2 * oh * ow * d2 * n;
    Ok((orig, tucker))
}

/// Candidate ranks per axis for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RankGrid {
    pub d1: Vec<usize>,
    pub d2: Vec<usize>,
}

/// Default grid: multiples of `ceil(extent/8)` up to the full extent, with
/// the full extent always included.
pub fn default_rank_grid(extent: usize) -> Vec<usize> {
    let step = extent.div_ceil(8);
    let mut grid: Vec<usize> = (1..=8).map(|k| (k * step).min(extent)).collect();
    grid.dedup();
    grid
}

pub fn default_grids(layers: &[LayerDesc]) -> Vec<RankGrid> {
    layers
        .iter()
        .map(|l| RankGrid {
            d1: default_rank_grid(l.shape.c),
            d2: default_rank_grid(l.shape.n),
        })
        .collect()
}

/// One benchmarked cell: a layer at specific ranks, the tiling the analytical
/// search picked for its core convolution, and the modeled seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankTableEntry {
    pub layer_id: String,
    pub d1: usize,
    pub d2: usize,
    pub tiling: crate::conv::TilingConfig,
    pub latency_s: f64,
    pub tucker_flops: u64,
}

/// The full rank-latency benchmark for an architecture, plus the modeled
/// latency of each non-decomposed layer's dense convolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankTable {
    pub entries: Vec<RankTableEntry>,
    pub baseline_latency: BTreeMap<String, f64>,
}

impl RankTable {
    pub fn lookup(&self, layer_id: &str, d1: usize, d2: usize) -> Option<&RankTableEntry> {
        self.entries
            .iter()
            .find(|e| e.layer_id == layer_id && e.d1 == d1 && e.d2 == d2)
    }
}

/// Modeled seconds for a dense convolution at `shape`: best analytical
/// tiling's combined latency.
fn dense_latency(shape: &ConvShape, g: &GpuSpec) -> Result<f64> {
    let cands = enumerate_valid_tilings(shape, g, auto_divisors_only(shape));
    let best = select_tiling_analytical(shape, g, &cands)?;
    Ok(best.estimate.combined)
}

/// Elements moved by the two 1x1 stages around the core convolution: inputs,
/// factor matrices, and outputs of both projections.
fn one_by_one_volume(shape: &ConvShape, d1: usize, d2: usize) -> u64 {
    let hw = (shape.h * shape.w) as u64;
    let ohw = (shape.out_h() * shape.out_w()) as u64;
    let (c, n) = (shape.c as u64, shape.n as u64);
    let (d1, d2) = (d1 as u64, d2 as u64);
    hw * c + c * d1 + hw * d1 + ohw * d2 + d2 * n + ohw * n
}

fn cell_latency(shape: &ConvShape, d1: usize, d2: usize, g: &GpuSpec) -> Result<RankTableEntry> {
    let core = ConvShape {
        c: d1,
        n: d2,
        ..*shape
    };
    let cands = enumerate_valid_tilings(&core, g, auto_divisors_only(&core));
    let best = select_tiling_analytical(&core, g, &cands)?;
    let extra = mem_latency(one_by_one_volume(shape, d1, d2), g);
    Ok(RankTableEntry {
        layer_id: String::new(),
        d1,
        d2,
        tiling: best.config,
        latency_s: best.estimate.combined + extra,
        tucker_flops: 0,
    })
}

/// Benchmark every (allowed layer, rank pair) cell of the grid.
pub fn build_rank_latency_table(
    layers: &[LayerDesc],
    grids: &[RankGrid],
    g: &GpuSpec,
) -> Result<RankTable> {
    if layers.len() != grids.len() {
        return Err(Error::InvalidArgument(format!(
            "{} layers but {} grids",
            layers.len(),
            grids.len()
        )));
    }
    let mut cells = Vec::new();
    for (idx, (layer, grid)) in layers.iter().zip(grids).enumerate() {
        if !layer.allowed {
            continue;
        }
        for &d1 in &grid.d1 {
            for &d2 in &grid.d2 {
                if d1 == 0 || d1 > layer.shape.c || d2 == 0 || d2 > layer.shape.n {
                    return Err(Error::InvalidArgument(format!(
                        "grid rank ({d1}, {d2}) out of bounds for layer {}",
                        layer.id
                    )));
                }
                cells.push((idx, d1, d2));
            }
        }
    }
    let entries: Result<Vec<RankTableEntry>> = cells
        .par_iter()
        .map(|&(idx, d1, d2)| {
            let layer = &layers[idx];
            let mut e = cell_latency(&layer.shape, d1, d2, g)?;
            e.layer_id = layer.id.clone();
            e.tucker_flops = flops_counts(&layer.shape, d1, d2)?.1;
            Ok(e)
        })
        .collect();
    let mut baseline = BTreeMap::new();
    for layer in layers.iter().filter(|l| !l.allowed) {
        baseline.insert(layer.id.clone(), dense_latency(&layer.shape, g)?);
    }
    Ok(RankTable {
        entries: entries?,
        baseline_latency: baseline,
    })
}

/// A solved plan: chosen ranks per decomposed layer, plus totals that let
/// the budget claim be re-checked independently.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanLayer {
    pub id: String,
    pub decomposed: bool,
    pub d1: Option<usize>,
    pub d2: Option<usize>,
    pub orig_flops: u64,
    pub plan_flops: u64,
    pub latency_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankPlan {
    pub layers: Vec<PlanLayer>,
    pub requested_budget: f64,
    pub achieved_reduction: f64,
    pub total_orig_flops: u64,
    pub total_plan_flops: u64,
    pub total_latency_s: f64,
}

struct Problem<'a> {
    layers: &'a [LayerDesc],
    grids: &'a [RankGrid],
    /// (latency, tucker flops) per allowed layer per (d1 idx, d2 idx).
    cost: Vec<Option<Vec<Vec<(f64, u64)>>>>,
    orig: Vec<u64>,
    baseline_lat: Vec<f64>,
    total_orig: u64,
}

impl<'a> Problem<'a> {
    fn new(layers: &'a [LayerDesc], grids: &'a [RankGrid], table: &RankTable) -> Result<Self> {
        let mut cost = Vec::with_capacity(layers.len());
        let mut orig = Vec::with_capacity(layers.len());
        let mut baseline_lat = Vec::with_capacity(layers.len());
        for (layer, grid) in layers.iter().zip(grids) {
            let o = flops_counts(&layer.shape, 1, 1)?.0;
            orig.push(o);
            if layer.allowed {
                let mut per_d1 = Vec::with_capacity(grid.d1.len());
                for &d1 in &grid.d1 {
                    let mut per_d2 = Vec::with_capacity(grid.d2.len());
                    for &d2 in &grid.d2 {
                        let e = table.lookup(&layer.id, d1, d2).ok_or_else(|| {
                            Error::InvalidArgument(format!(
                                "table missing cell ({}, {d1}, {d2})",
                                layer.id
                            ))
                        })?;
                        per_d2.push((e.latency_s, e.tucker_flops));
                    }
                    per_d1.push(per_d2);
                }
                cost.push(Some(per_d1));
                baseline_lat.push(0.0);
            } else {
                cost.push(None);
                let lat = table.baseline_latency.get(&layer.id).copied().ok_or_else(
                    || {
                        Error::InvalidArgument(format!(
                            "table missing baseline latency for {}",
                            layer.id
                        ))
                    },
                )?;
                baseline_lat.push(lat);
            }
        }
        let total_orig = orig.iter().sum();
        Ok(Problem {
            layers,
            grids,
            cost,
            orig,
            baseline_lat,
            total_orig,
        })
    }

    fn cap(&self, budget: f64) -> f64 {
        (1.0 - budget) * self.total_orig as f64
    }

    /// Totals for a choice vector (grid indices per layer; ignored for
    /// non-decomposed layers).
    fn totals(&self, choice: &[(usize, usize)]) -> (u64, f64) {
        let mut flops = 0u64;
        let mut lat = 0.0;
        for (idx, c) in self.cost.iter().enumerate() {
            match c {
                Some(grid) => {
                    let (l, f) = grid[choice[idx].0][choice[idx].1];
                    flops += f;
                    lat += l;
                }
                None => {
                    flops += self.orig[idx];
                    lat += self.baseline_lat[idx];
                }
            }
        }
        (flops, lat)
    }

    fn min_flops(&self) -> u64 {
        let choice: Vec<(usize, usize)> = vec![(0, 0); self.layers.len()];
        self.totals(&choice).0
    }

    fn plan_from(&self, choice: &[(usize, usize)], budget: f64) -> RankPlan {
        let (total_flops, total_lat) = self.totals(choice);
        let mut layers = Vec::with_capacity(self.layers.len());
        for (idx, layer) in self.layers.iter().enumerate() {
            match &self.cost[idx] {
                Some(grid) => {
                    let (i, j) = choice[idx];
                    let (lat, flops) = grid[i][j];
                    layers.push(PlanLayer {
                        id: layer.id.clone(),
                        decomposed: true,
                        d1: Some(self.grids[idx].d1[i]),
                        d2: Some(self.grids[idx].d2[j]),
                        orig_flops: self.orig[idx],
                        plan_flops: flops,
                        latency_s: lat,
                    });
                }
                None => layers.push(PlanLayer {
                    id: layer.id.clone(),
                    decomposed: false,
                    d1: None,
                    d2: None,
                    orig_flops: self.orig[idx],
                    plan_flops: self.orig[idx],
                    latency_s: self.baseline_lat[idx],
                }),
            }
        }
        RankPlan {
            layers,
            requested_budget: budget,
            achieved_reduction: 1.0 - total_flops as f64 / self.total_orig as f64,
            total_orig_flops: self.total_orig,
            total_plan_flops: total_flops,
            total_latency_s: total_lat,
        }
    }
}

fn check_budget(budget: f64) -> Result<()> {
    if !(budget > 0.0 && budget < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "budget must be a reduction fraction in (0, 1), got {budget}"
        )));
    }
    Ok(())
}

/// Greedy budget descent plus a local-optimality pass: afterwards no single
/// one-step rank increase can satisfy the budget while strictly lowering the
/// total modeled latency.
pub fn select_ranks_under_budget(
    layers: &[LayerDesc],
    grids: &[RankGrid],
    budget: f64,
    table: &RankTable,
) -> Result<RankPlan> {
    check_budget(budget)?;
    let p = Problem::new(layers, grids, table)?;
    let cap = p.cap(budget);
    if (p.min_flops() as f64) > cap {
        let max_red = 1.0 - p.min_flops() as f64 / p.total_orig as f64;
        return Err(Error::InfeasibleBudget(format!(
            "budget {budget} infeasible; maximum achievable reduction is {max_red:.4}"
        )));
    }

    // Start at maximal grid ranks.
    let mut choice: Vec<(usize, usize)> = layers
        .iter()
        .zip(grids)
        .map(|(_, g)| (g.d1.len().saturating_sub(1), g.d2.len().saturating_sub(1)))
        .collect();

    loop {
        let (flops, lat) = p.totals(&choice);
        if (flops as f64) <= cap {
            break;
        }
        // Candidate moves: one grid step down along d1 or d2 of one layer.
        let mut best: Option<(f64, usize, usize)> = None; // (ratio, layer, axis)
        for (idx, c) in p.cost.iter().enumerate() {
            let Some(grid) = c else { continue };
            let (i, j) = choice[idx];
            for (axis, (ni, nj)) in [(0usize, (i.wrapping_sub(1), j)), (1, (i, j.wrapping_sub(1)))]
            {
                if (axis == 0 && i == 0) || (axis == 1 && j == 0) {
                    continue;
                }
                let (cur_lat, cur_flops) = grid[i][j];
                let (new_lat, new_flops) = grid[ni][nj];
                debug_assert!(new_flops < cur_flops);
                let ratio = (cur_lat - new_lat) / (cur_flops - new_flops) as f64;
                let better = match &best {
                    None => true,
                    Some((r, bi, ba)) => {
                        ratio > *r
                            || (ratio == *r && (idx, axis) < (*bi, *ba))
                    }
                };
                if better {
                    best = Some((ratio, idx, axis));
                }
            }
        }
        let Some((_, idx, axis)) = best else {
            // No downward move left, yet infeasible: cannot happen after the
            // feasibility check above, but guard anyway.
            return Err(Error::InfeasibleBudget(format!(
                "stuck at {flops} FLOPs (latency {lat:.3e}) above cap {cap:.0}"
            )));
        };
        if axis == 0 {
            choice[idx].0 -= 1;
        } else {
            choice[idx].1 -= 1;
        }
    }

    // Local-optimality pass: take any single one-step rank increase that
    // keeps the budget and strictly lowers total latency, until none exists.
    loop {
        let (_, cur_lat) = p.totals(&choice);
        let mut applied = false;
        'scan: for (idx, c) in p.cost.iter().enumerate() {
            let Some(grid) = c else { continue };
            let (i, j) = choice[idx];
            let ups = [
                (i + 1 < grid.len(), (i + 1, j)),
                (j + 1 < grid[i].len(), (i, j + 1)),
            ];
            for (ok, (ni, nj)) in ups {
                if !ok {
                    continue;
                }
                let mut trial = choice.clone();
                trial[idx] = (ni, nj);
                let (t_flops, t_lat) = p.totals(&trial);
                if (t_flops as f64) <= cap && t_lat < cur_lat {
                    choice = trial;
                    applied = true;
                    break 'scan;
                }
            }
        }
        if !applied {
            break;
        }
    }

    Ok(p.plan_from(&choice, budget))
}

const EXACT_MAX_LAYERS: usize = 20;
const EXACT_MAX_GRID: usize = 8;

/// Exact reference solver: minimizes total modeled latency over the whole
/// grid subject to the FLOPs cap, via a Pareto frontier over
/// (flops, latency) prefix sums. Guarded to small models.
pub fn select_ranks_exact(
    layers: &[LayerDesc],
    grids: &[RankGrid],
    budget: f64,
    table: &RankTable,
) -> Result<RankPlan> {
    check_budget(budget)?;
    let p = Problem::new(layers, grids, table)?;
    let allowed: Vec<usize> = (0..layers.len()).filter(|&i| p.cost[i].is_some()).collect();
    if allowed.len() > EXACT_MAX_LAYERS {
        return Err(Error::InvalidArgument(format!(
            "exact solver limited to {EXACT_MAX_LAYERS} decomposable layers, got {}",
            allowed.len()
        )));
    }
    for &idx in &allowed {
        if grids[idx].d1.len() > EXACT_MAX_GRID || grids[idx].d2.len() > EXACT_MAX_GRID {
            return Err(Error::InvalidArgument(format!(
                "exact solver limited to {EXACT_MAX_GRID} grid points per axis"
            )));
        }
    }
    let cap = p.cap(budget);
    if (p.min_flops() as f64) > cap {
        let max_red = 1.0 - p.min_flops() as f64 / p.total_orig as f64;
        return Err(Error::InfeasibleBudget(format!(
            "budget {budget} infeasible; maximum achievable reduction is {max_red:.4}"
        )));
    }

    let base_flops: u64 = (0..layers.len())
        .filter(|i| p.cost[*i].is_none())
        .map(|i| p.orig[i])
        .sum();
    // Cheapest completion from each suffix, for cap pruning.
    let mut min_suffix = vec![0u64; allowed.len() + 1];
    for (pos, &idx) in allowed.iter().enumerate().rev() {
        let grid = p.cost[idx].as_ref().unwrap();
        let m = grid
            .iter()
            .flat_map(|row| row.iter().map(|&(_, f)| f))
            .min()
            .unwrap();
        min_suffix[pos] = min_suffix[pos + 1] + m;
    }

    #[derive(Clone)]
    struct Node {
        flops: u64,
        lat: f64,
        parent: usize,
        pick: (usize, usize),
    }
    let mut arena: Vec<Node> = vec![Node {
        flops: 0,
        lat: 0.0,
        parent: usize::MAX,
        pick: (0, 0),
    }];
    let mut frontier: Vec<usize> = vec![0];

    for (pos, &idx) in allowed.iter().enumerate() {
        let grid = p.cost[idx].as_ref().unwrap();
        let mut next: Vec<usize> = Vec::new();
        for &node_id in &frontier {
            let (nf, nl) = (arena[node_id].flops, arena[node_id].lat);
            for (i, row) in grid.iter().enumerate() {
                for (j, &(l, f)) in row.iter().enumerate() {
                    let flops = nf + f;
                    if (base_flops + flops + min_suffix[pos + 1]) as f64 > cap {
                        continue;
                    }
                    arena.push(Node {
                        flops,
                        lat: nl + l,
                        parent: node_id,
                        pick: (i, j),
                    });
                    next.push(arena.len() - 1);
                }
            }
        }
        // Pareto prune: keep, per ascending flops, strictly descending
        // latency. Stable deterministic ordering.
        next.sort_by(|&a, &b| {
            arena[a]
                .flops
                .cmp(&arena[b].flops)
                .then(arena[a].lat.total_cmp(&arena[b].lat))
        });
        let mut pruned: Vec<usize> = Vec::with_capacity(next.len());
        let mut best_lat = f64::INFINITY;
        for id in next {
            if arena[id].lat < best_lat {
                best_lat = arena[id].lat;
                pruned.push(id);
            }
        }
        frontier = pruned;
    }

    let best_id = frontier
        .iter()
        .copied()
        .filter(|&id| (base_flops + arena[id].flops) as f64 <= cap)
        .min_by(|&a, &b| {
            arena[a]
                .lat
                .total_cmp(&arena[b].lat)
                .then(arena[a].flops.cmp(&arena[b].flops))
        })
        .ok_or_else(|| {
            Error::InfeasibleBudget(format!("no grid assignment satisfies cap {cap:.0}"))
        })?;

    // Walk parents back into a full choice vector.
    let mut choice: Vec<(usize, usize)> = vec![(0, 0); layers.len()];
    let mut cur = best_id;
    for &idx in allowed.iter().rev() {
        choice[idx] = arena[cur].pick;
        cur = arena[cur].parent;
    }
    Ok(p.plan_from(&choice, budget))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gpu() -> GpuSpec {
        GpuSpec::preset("a100").unwrap()
    }

    fn layer(id: &str, h: usize, c: usize, n: usize, allowed: bool) -> LayerDesc {
        LayerDesc {
            id: id.into(),
            shape: ConvShape::same(h, h, c, n, 3).unwrap(),
            allowed,
        }
    }

    #[test]
    fn flops_hand_case() {
        let shape = ConvShape::same(14, 14, 256, 256, 3).unwrap();
        let (orig, tucker) = flops_counts(&shape, 64, 64).unwrap();
        assert_eq!(orig, 231_211_008);
        assert_eq!(tucker, 6_422_528 + 14_450_688 + 6_422_528);
        assert_eq!(tucker, 27_295_744);
    }

    #[test]
    fn pointwise_full_rank_has_overhead() {
        let shape = ConvShape::new(14, 14, 64, 64, 1, 1, 0, 1).unwrap();
        let (orig, tucker) = flops_counts(&shape, 64, 64).unwrap();
        assert!(tucker > orig);
    }

    #[test]
    fn rank_bounds_checked() {
        let shape = ConvShape::same(14, 14, 64, 64, 3).unwrap();
        assert!(flops_counts(&shape, 0, 4).is_err());
        assert!(flops_counts(&shape, 4, 0).is_err());
        assert!(flops_counts(&shape, 65, 4).is_err());
    }

    #[test]
    fn default_grid_shape() {
        assert_eq!(default_rank_grid(64), vec![8, 16, 24, 32, 40, 48, 56, 64]);
        assert_eq!(default_rank_grid(8), vec![1, 2, 3, 4, 5, 6, 7, 8]);
        assert_eq!(default_rank_grid(4), vec![1, 2, 3, 4]);
        let g10 = default_rank_grid(10);
        assert_eq!(*g10.last().unwrap(), 10);
        assert!(g10.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn single_cell_grid_gives_one_row_per_layer() {
        let layers = vec![layer("a", 8, 8, 8, true), layer("b", 8, 8, 8, true)];
        let grids = vec![
            RankGrid {
                d1: vec![4],
                d2: vec![4],
            };
            2
        ];
        let table = build_rank_latency_table(&layers, &grids, &gpu()).unwrap();
        assert_eq!(table.entries.len(), 2);
        assert!(table.baseline_latency.is_empty());
    }

    #[test]
    fn table_rows_match_direct_selection() {
        let layers = vec![layer("a", 14, 16, 16, true)];
        let grids = vec![RankGrid {
            d1: vec![4, 16],
            d2: vec![8],
        }];
        let g = gpu();
        let table = build_rank_latency_table(&layers, &grids, &g).unwrap();
        let e = table.lookup("a", 4, 8).unwrap();
        let core = ConvShape::same(14, 14, 4, 8, 3).unwrap();
        let cands = enumerate_valid_tilings(&core, &g, auto_divisors_only(&core));
        let best = select_tiling_analytical(&core, &g, &cands).unwrap();
        assert_eq!(e.tiling, best.config);
        let extra = mem_latency(one_by_one_volume(&layers[0].shape, 4, 8), &g);
        assert!((e.latency_s - (best.estimate.combined + extra)).abs() < 1e-15);
    }

    #[test]
    fn smaller_ranks_model_no_slower() {
        let layers = vec![layer("a", 14, 64, 64, true)];
        let grids = vec![RankGrid {
            d1: vec![8, 64],
            d2: vec![8, 64],
        }];
        let table = build_rank_latency_table(&layers, &grids, &gpu()).unwrap();
        let small = table.lookup("a", 8, 8).unwrap().latency_s;
        let large = table.lookup("a", 64, 64).unwrap().latency_s;
        assert!(small <= large, "small {small} vs large {large}");
    }

    fn toy_problem() -> (Vec<LayerDesc>, Vec<RankGrid>, RankTable) {
        let layers = vec![
            layer("stem", 14, 4, 16, false),
            layer("mid", 14, 16, 16, true),
            layer("late", 7, 16, 32, true),
        ];
        let grids = vec![
            RankGrid { d1: vec![], d2: vec![] },
            RankGrid {
                d1: default_rank_grid(16),
                d2: default_rank_grid(16),
            },
            RankGrid {
                d1: default_rank_grid(16),
                d2: default_rank_grid(32),
            },
        ];
        let table = build_rank_latency_table(&layers, &grids, &gpu()).unwrap();
        (layers, grids, table)
    }

    #[test]
    fn tiny_budget_keeps_max_feasible_ranks() {
        // A grid whose maximal point is already feasible for a tiny budget:
        // ranks well below the overhead crossover.
        let layers = vec![layer("only", 14, 16, 16, true)];
        let grids = vec![RankGrid {
            d1: vec![2, 4],
            d2: vec![2, 4],
        }];
        let table = build_rank_latency_table(&layers, &grids, &gpu()).unwrap();
        let plan = select_ranks_under_budget(&layers, &grids, 0.01, &table).unwrap();
        assert_eq!((plan.layers[0].d1, plan.layers[0].d2), (Some(4), Some(4)));
    }

    #[test]
    fn forced_move_reaches_smaller_ranks() {
        let layers = vec![layer("only", 14, 16, 16, true)];
        let grids = vec![RankGrid {
            d1: vec![2, 4],
            d2: vec![2, 4],
        }];
        let table = build_rank_latency_table(&layers, &grids, &gpu()).unwrap();
        // Budget between the (4,4) and (2,2) reductions forces descent.
        let (orig, t22) = flops_counts(&layers[0].shape, 2, 2).unwrap();
        let b = 1.0 - (t22 as f64 / orig as f64) - 0.001;
        let plan = select_ranks_under_budget(&layers, &grids, b, &table).unwrap();
        assert_eq!((plan.layers[0].d1, plan.layers[0].d2), (Some(2), Some(2)));
        assert!(plan.achieved_reduction >= b);
    }

    #[test]
    fn infeasible_budget_reports_max_achievable() {
        let layers = vec![layer("only", 14, 16, 16, true)];
        let grids = vec![RankGrid {
            d1: vec![8, 16],
            d2: vec![8, 16],
        }];
        let table = build_rank_latency_table(&layers, &grids, &gpu()).unwrap();
        let err = select_ranks_under_budget(&layers, &grids, 0.99, &table).unwrap_err();
        match err {
            Error::InfeasibleBudget(msg) => assert!(msg.contains("maximum achievable")),
            other => panic!("wrong error: {other}"),
        }
    }

    #[test]
    fn greedy_plan_meets_budget_and_is_locally_optimal() {
        let (layers, grids, table) = toy_problem();
        let budget = 0.7;
        let plan = select_ranks_under_budget(&layers, &grids, budget, &table).unwrap();
        assert!(plan.achieved_reduction >= budget);
        // Independent re-summation.
        let mut orig_sum = 0u64;
        let mut plan_sum = 0u64;
        for pl in &plan.layers {
            let layer = layers.iter().find(|l| l.id == pl.id).unwrap();
            let (orig, _) = flops_counts(&layer.shape, 1, 1).unwrap();
            orig_sum += orig;
            plan_sum += if pl.decomposed {
                flops_counts(&layer.shape, pl.d1.unwrap(), pl.d2.unwrap())
                    .unwrap()
                    .1
            } else {
                orig
            };
        }
        assert_eq!(orig_sum, plan.total_orig_flops);
        assert_eq!(plan_sum, plan.total_plan_flops);
        let cap = (1.0 - budget) * orig_sum as f64;
        assert!((plan_sum as f64) <= cap);
        // Local optimality: no one-step rank increase keeps the budget while
        // strictly lowering latency.
        for pl in plan.layers.iter().filter(|p| p.decomposed) {
            let layer = layers.iter().find(|l| l.id == pl.id).unwrap();
            let gidx = layers.iter().position(|l| l.id == pl.id).unwrap();
            let grid = &grids[gidx];
            let i = grid.d1.iter().position(|&d| d == pl.d1.unwrap()).unwrap();
            let j = grid.d2.iter().position(|&d| d == pl.d2.unwrap()).unwrap();
            let mut ups = Vec::new();
            if i + 1 < grid.d1.len() {
                ups.push((grid.d1[i + 1], pl.d2.unwrap()));
            }
            if j + 1 < grid.d2.len() {
                ups.push((pl.d1.unwrap(), grid.d2[j + 1]));
            }
            for (ud1, ud2) in ups {
                let e = table.lookup(&pl.id, ud1, ud2).unwrap();
                let new_flops = plan.total_plan_flops - pl.plan_flops + e.tucker_flops;
                let new_lat = plan.total_latency_s - pl.latency_s + e.latency_s;
                assert!(
                    (new_flops as f64) > cap || new_lat >= plan.total_latency_s,
                    "increase on {} to ({ud1},{ud2}) beats the plan",
                    layer.id
                );
            }
        }
    }

    #[test]
    fn exact_never_loses_to_greedy() {
        let (layers, grids, table) = toy_problem();
        for budget in [0.6, 0.7, 0.8] {
            let greedy = select_ranks_under_budget(&layers, &grids, budget, &table).unwrap();
            let exact = select_ranks_exact(&layers, &grids, budget, &table).unwrap();
            assert!(exact.achieved_reduction >= budget);
            assert!(
                exact.total_latency_s <= greedy.total_latency_s + 1e-15,
                "exact {} vs greedy {}",
                exact.total_latency_s,
                greedy.total_latency_s
            );
        }
    }

    #[test]
    fn exact_guards_size() {
        let layers: Vec<LayerDesc> =
            (0..21).map(|i| layer(&format!("l{i}"), 7, 8, 8, true)).collect();
        let grids = default_grids(&layers);
        let table = RankTable {
            entries: vec![],
            baseline_latency: BTreeMap::new(),
        };
        assert!(select_ranks_exact(&layers, &grids, 0.5, &table).is_err());
    }

    #[test]
    fn determinism_across_runs() {
        let (layers, grids, table) = toy_problem();
        let a = select_ranks_under_budget(&layers, &grids, 0.7, &table).unwrap();
        let b = select_ranks_under_budget(&layers, &grids, 0.7, &table).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bundled_archs_parse() {
        let r = Arch::bundled("resnet18-like").unwrap();
        assert_eq!(r.layers.len(), 17);
        assert!(!r.layers[0].allowed);
        assert_eq!(r.layers.iter().filter(|l| l.allowed).count(), 16);
        let v = Arch::bundled("vgg16-like").unwrap();
        assert_eq!(v.layers.iter().filter(|l| l.allowed).count(), 12);
        let t = Arch::bundled("toy6").unwrap();
        assert_eq!(t.layers.len(), 6);
        assert!(Arch::bundled("lenet").is_err());
    }
}
