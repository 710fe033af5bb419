//! Cross-checks of the public API against the independent reference oracles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tdc_core::conv::{
    kernel_to_crsn, tiled_core_conv, ConvShape, FeatureMap, Layout, Precision, TiledConvOptions,
    TilingConfig,
};
use tdc_core::perf::{estimate_latency, GpuSpec};
use tdc_core::rank::{
    build_rank_latency_table, default_grids, flops_counts, select_ranks_under_budget, Arch,
};
use tdc_core::tensor::{mode_n_matricize, Tensor4};
use tdc_core::tiling::{
    enumerate_valid_tilings, ranking_from_csv, ranking_to_csv, select_tiling_analytical,
    select_tiling_exhaustive, Evaluator,
};
use tdc_core::tucker::{tucker2_decompose, tucker2_reconstruct};
use tdc_oracles::{naive_conv2d, tail_energy};

fn random_kernel(rng: &mut ChaCha8Rng, dims: [usize; 4]) -> Tensor4 {
    let len = dims.iter().product();
    let data: Vec<f64> = (0..len).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
    Tensor4::from_vec(dims, data).unwrap()
}

fn random_map(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> FeatureMap {
    let data: Vec<f64> = (0..c * h * w).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
    FeatureMap::from_vec(Layout::Hwc, c, h, w, data).unwrap()
}

/// Max elementwise deviation of the tiled result from the oracle, relative to
/// the oracle's largest magnitude.
fn relative_gap(y: &FeatureMap, oracle: &[f64], n: usize, h: usize, w: usize) -> f64 {
    let mut worst = 0.0f64;
    let mut scale = 0.0f64;
    for oc in 0..n {
        for i in 0..h {
            for j in 0..w {
                let reference = oracle[oc * h * w + i * w + j];
                worst = worst.max((y.get(oc, i, j) - reference).abs());
                scale = scale.max(reference.abs());
            }
        }
    }
    worst / scale.max(1e-30)
}

#[test]
fn tiled_executor_matches_naive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for trial in 0..30 {
        let h = rng.gen_range(3..=20);
        let w = rng.gen_range(3..=20);
        let c = rng.gen_range(1..=24);
        let n = rng.gen_range(1..=24);
        let shape = ConvShape::same(h, w, c, n, 3).unwrap();
        let tiling = TilingConfig::new(
            rng.gen_range(1..=h),
            rng.gen_range(1..=w),
            rng.gen_range(1..=c),
        );
        let x = random_map(&mut rng, c, h, w);
        let kernel = random_kernel(&mut rng, [c, n, 3, 3]);
        let k_crsn = kernel_to_crsn(&kernel);

        let mut x_chw = vec![0.0; c * h * w];
        for ch in 0..c {
            for i in 0..h {
                for j in 0..w {
                    x_chw[ch * h * w + i * w + j] = x.get(ch, i, j);
                }
            }
        }
        let oracle = naive_conv2d(&x_chw, kernel.data(), h, w, c, n, 3, 3, 1, 1);

        let workers = 1 + trial % 4;
        let opts = TiledConvOptions {
            workers,
            flip_kernel: false,
            precision: Precision::F64,
        };
        let y = tiled_core_conv(&x, &k_crsn, &shape, &tiling, &opts).unwrap();
        let gap = relative_gap(&y, &oracle, n, h, w);
        assert!(
            gap <= 1e-10,
            "trial {trial}: f64 gap {gap:.3e} for shape {shape:?} tiling {tiling:?}"
        );

        let opts32 = TiledConvOptions {
            precision: Precision::F32,
            ..opts
        };
        let y32 = tiled_core_conv(&x, &k_crsn, &shape, &tiling, &opts32).unwrap();
        let gap32 = relative_gap(&y32, &oracle, n, h, w);
        assert!(
            gap32 <= 1e-4,
            "trial {trial}: f32 gap {gap32:.3e} for shape {shape:?} tiling {tiling:?}"
        );
    }
}

#[test]
fn worker_count_never_changes_results() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let shape = ConvShape::same(13, 11, 10, 6, 3).unwrap();
    let x = random_map(&mut rng, shape.c, shape.h, shape.w);
    let kernel = random_kernel(&mut rng, [shape.c, shape.n, 3, 3]);
    let k_crsn = kernel_to_crsn(&kernel);
    let tiling = TilingConfig::new(4, 5, 3);
    let base = tiled_core_conv(
        &x,
        &k_crsn,
        &shape,
        &tiling,
        &TiledConvOptions::default(),
    )
    .unwrap();
    for workers in [2, 3, 8] {
        let opts = TiledConvOptions {
            workers,
            ..TiledConvOptions::default()
        };
        let y = tiled_core_conv(&x, &k_crsn, &shape, &tiling, &opts).unwrap();
        assert_eq!(y.data(), base.data(), "workers={workers} changed bits");
    }
}

#[test]
fn full_rank_decomposition_reconstructs() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10 {
        let c = rng.gen_range(2..=10);
        let n = rng.gen_range(2..=10);
        let k = random_kernel(&mut rng, [c, n, 3, 3]);
        let f = tucker2_decompose(&k, c, n).unwrap();
        let rebuilt = tucker2_reconstruct(&f);
        let rel = k.sub(&rebuilt).unwrap().frobenius_norm() / k.frobenius_norm();
        assert!(rel <= 1e-5, "full-rank rel err {rel:.3e}");
    }
}

#[test]
fn truncated_error_within_oracle_tail_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..10 {
        let c = rng.gen_range(3..=10);
        let n = rng.gen_range(3..=10);
        let d1 = rng.gen_range(1..c);
        let d2 = rng.gen_range(1..n);
        let k = random_kernel(&mut rng, [c, n, 3, 3]);
        let f = tucker2_decompose(&k, d1, d2).unwrap();
        let rebuilt = tucker2_reconstruct(&f);
        let err_sq = k.sub(&rebuilt).unwrap().frobenius_norm().powi(2);

        let m0 = mode_n_matricize(&k, 0).unwrap();
        let m1 = mode_n_matricize(&k, 1).unwrap();
        let bound = tail_energy(m0.data(), m0.rows(), m0.cols(), d1)
            + tail_energy(m1.data(), m1.rows(), m1.cols(), d2);
        assert!(
            err_sq <= bound * (1.0 + 1e-9) + 1e-12,
            "truncation error {err_sq:.6e} exceeds oracle bound {bound:.6e}"
        );
    }
}

#[test]
fn analytical_pick_survives_recomputed_stage_one() {
    let gpu = GpuSpec::preset("a100").unwrap();
    let shape = ConvShape::same(14, 14, 64, 64, 3).unwrap();
    let candidates = enumerate_valid_tilings(&shape, &gpu, false);
    let pick = select_tiling_analytical(&shape, &gpu, &candidates).unwrap();

    // Recompute stage 1 from scratch: lowest compute latency, lexicographic
    // tie-break, keep ceil(top_frac * len).
    let mut scored: Vec<(f64, TilingConfig)> = candidates
        .iter()
        .map(|t| (estimate_latency(&shape, t, &gpu).unwrap().comp_latency, *t))
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let keep = ((gpu.top_frac * scored.len() as f64).ceil() as usize).clamp(1, scored.len());
    assert!(
        scored[..keep].iter().any(|(_, t)| *t == pick.config),
        "pick {:?} not in the recomputed stage-1 set of {keep}",
        pick.config
    );
}

#[test]
fn ranking_csv_round_trips_and_is_sorted() {
    let gpu = GpuSpec::preset("2080ti").unwrap();
    let shape = ConvShape::same(14, 14, 32, 32, 3).unwrap();
    let candidates = enumerate_valid_tilings(&shape, &gpu, true);
    let ex = select_tiling_exhaustive(&shape, &gpu, &candidates, &Evaluator::Modeled).unwrap();
    for pair in ex.ranking.windows(2) {
        assert!(pair[0].estimate.combined <= pair[1].estimate.combined);
    }
    assert_eq!(ex.best.config, ex.ranking[0].config);

    let csv = ranking_to_csv(&ex.ranking);
    let rows = ranking_from_csv(&csv).unwrap();
    assert_eq!(rows.len(), ex.ranking.len());
    for (row, cand) in rows.iter().zip(&ex.ranking) {
        assert_eq!((row.th, row.tw, row.tc), (cand.config.th, cand.config.tw, cand.config.tc));
        assert_eq!(row.combined_s, cand.estimate.combined);
    }
}

#[test]
fn measured_exhaustive_agrees_with_executor() {
    let gpu = GpuSpec::preset("a100").unwrap();
    let shape = ConvShape::same(8, 8, 8, 8, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_map(&mut rng, shape.c, shape.h, shape.w);
    let kernel = random_kernel(&mut rng, [shape.c, shape.n, 3, 3]);
    let k_crsn = kernel_to_crsn(&kernel);
    let candidates = enumerate_valid_tilings(&shape, &gpu, true);
    let ex = select_tiling_exhaustive(
        &shape,
        &gpu,
        &candidates,
        &Evaluator::Measured {
            x: &x,
            k_crsn: &k_crsn,
            repeats: 2,
        },
    )
    .unwrap();
    assert!(ex.ranking.iter().all(|c| c.measured.is_some()));
    for pair in ex.ranking.windows(2) {
        assert!(pair[0].measured.unwrap() <= pair[1].measured.unwrap());
    }
}

#[test]
fn toy_arch_plan_meets_resummed_budget() {
    let arch = Arch::bundled("toy6").unwrap();
    let gpu = GpuSpec::preset("a100").unwrap();
    let grids = default_grids(&arch.layers);
    let table = build_rank_latency_table(&arch.layers, &grids, &gpu).unwrap();
    let budget = 0.7;
    let plan = select_ranks_under_budget(&arch.layers, &grids, budget, &table).unwrap();

    let mut orig_total = 0u64;
    let mut plan_total = 0u64;
    for (layer, planned) in arch.layers.iter().zip(&plan.layers) {
        assert_eq!(layer.id, planned.id);
        let (orig, _) = flops_counts(&layer.shape, 1, 1).unwrap();
        orig_total += orig;
        if planned.decomposed {
            let (_, tucker) =
                flops_counts(&layer.shape, planned.d1.unwrap(), planned.d2.unwrap()).unwrap();
            plan_total += tucker;
        } else {
            plan_total += orig;
        }
    }
    let reduction = 1.0 - plan_total as f64 / orig_total as f64;
    assert!(
        reduction >= budget,
        "re-summed reduction {reduction:.4} misses budget {budget}"
    );
    assert!((reduction - plan.achieved_reduction).abs() < 1e-12);
}
