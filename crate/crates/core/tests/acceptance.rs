//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on failure.

mod common;

use std::collections::HashMap;
use std::process::ExitCode;
use std::time::Instant;

use common::*;
use rand::Rng;
use reflectance_prior::annotations::{
    symmetrize, transitive_closure, ClosureOptions, ComparisonGraph, Judgment, Point, PointId, Relation,
};
use reflectance_prior::crf::{
    build_palette_spaced, chromaticity_unary, meanfield_step, mu_matrices, pairwise_messages, LabelPalette,
    MeanFieldConfig, MeanFieldState, NoPairwise,
};
use reflectance_prior::decompose::{decompose, DecomposeConfig, Variant};
use reflectance_prior::fixtures::{evaluate, oracle_scorer, relight_sequence, sofa_gradient, three_region, two_region};
use reflectance_prior::imaging::LinearImage;
use reflectance_prior::metrics::{error_rate, mpre, predict_relations, whdr, Frame};
use reflectance_prior::nystrom::{sample_grid, NystromFilter};
use reflectance_prior::ordering::{energy_of, solve_continuous, solve_discrete, OrderingProblem};
use reflectance_prior::scorer::{BaselineWeights, Scorer};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn augmentation() -> Outcome {
    let started = Instant::now();
    let mut rng = rng(1001);
    for k in 0..500 {
        let (g, _) = random_consistent_graph(&mut rng, 8);
        let closed = transitive_closure(&symmetrize(&g), &ClosureOptions::default());
        if closed.truncated || relation_set(&closed.graph) != entailed_relations(&g) {
            return Err(format!("graph {k} differs from the completion oracle"));
        }
    }
    // a > k1 > b and a < k2 < b: the pair (a, b) has contradictory support
    for _ in 0..50 {
        let points = (0..4).map(|id| Point { id, x: rng.gen_range(0.0..1.0), y: 0.5 }).collect();
        let c = rng.gen_range(4..=8) as f64 / 8.0;
        let g = ComparisonGraph::new(
            "conflict",
            points,
            vec![
                Judgment::original(0, 2, Relation::Greater, c),
                Judgment::original(2, 1, Relation::Greater, c),
                Judgment::original(0, 3, Relation::Less, c),
                Judgment::original(3, 1, Relation::Less, c),
            ],
        )
        .map_err(|e| e.to_string())?;
        let closed = transitive_closure(&symmetrize(&g), &ClosureOptions::default());
        if closed.graph.judgment(0, 1).is_some() || closed.graph.judgment(1, 0).is_some() {
            return Err("a pair with conflicting pivots was completed".into());
        }
    }
    // a cyclic triangle keeps exactly its own judgments
    let points = (0..3).map(|id| Point { id, x: 0.3, y: 0.3 }).collect();
    let cyclic = ComparisonGraph::new(
        "cycle",
        points,
        vec![
            Judgment::original(0, 1, Relation::Less, 1.0),
            Judgment::original(1, 2, Relation::Less, 1.0),
            Judgment::original(2, 0, Relation::Less, 1.0),
        ],
    )
    .map_err(|e| e.to_string())?;
    let sym = symmetrize(&cyclic);
    let closed = transitive_closure(&sym, &ClosureOptions::default());
    if closed.added != 0 || relation_set(&closed.graph) != relation_set(&sym) {
        return Err("closure altered an inconsistent triangle".into());
    }
    let secs = started.elapsed().as_secs_f64();
    check(secs < 5.0, format!("500 graphs match the oracle, conflicts left open, {secs:.2} s (budget 5 s)"))
}

fn grid_problem(p: &OrderingProblem) -> Result<OrderingProblem, String> {
    let grid = (0..256).map(|k| k as f64 / 255.0).collect();
    OrderingProblem::new(p.n, p.edges.clone(), Some(grid))
        .and_then(|q| q.with_margin(p.margin))
        .map_err(|e| e.to_string())
}

fn ordering() -> Outcome {
    let mut rng = rng(1002);
    for k in 0..200 {
        let p = random_problem(&mut rng, 6, 5, k % 2 == 1);
        let o = solve_discrete(&p).map_err(|e| e.to_string())?;
        let brute = brute_force_min(&p);
        if o.energy != brute || energy_of(&p, &o.values).map_err(|e| e.to_string())? != o.energy {
            return Err(format!("problem {k}: discrete {} vs enumeration {brute}", o.energy));
        }
    }
    let mut worst = 0.0f64;
    for k in 0..200 {
        let mut p = random_problem(&mut rng, 6, 5, false);
        p.margin = if k % 2 == 1 { 51.0 / 255.0 } else { 0.0 };
        let grid = solve_discrete(&grid_problem(&p)?).map_err(|e| e.to_string())?;
        let c = solve_continuous(&p, 20_000).map_err(|e| e.to_string())?;
        worst = worst.max((c.energy - grid.energy).abs());
    }
    check(
        worst < 1e-4,
        format!("200 discrete solves exact; continuous vs 256-level grid max gap {worst:.2e} (tol 1e-4)"),
    )
}

fn frobenius(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn nystrom() -> Outcome {
    let (img, values) = striped(5, 5, 20);
    let scorer = Scorer::oracle_from_values(values, 0.1, 0.01).map_err(|e| e.to_string())?;
    let samples = sample_grid(img.width, img.height, 64).map_err(|e| e.to_string())?;
    let f = NystromFilter::build(&scorer, &img, &samples, 1e-6).map_err(|e| e.to_string())?;
    let w = dense_scores(&scorer, &img);
    let exact = dense_comparison_matrix(&w, img.len());
    let diff: Vec<f64> = exact.iter().zip(f.dense_approximation()).map(|(a, b)| a - b).collect();
    let frob = frobenius(&diff) / frobenius(&exact);

    let mut rng = rng(1003);
    let q = random_distribution(&mut rng, img.len(), 5);
    let got = f.apply(&q, 5).map_err(|e| e.to_string())?;
    let want = dense_filter(&w, img.len(), &q, 5);
    let got_all: Vec<f64> = [got.eq, got.lt, got.gt].concat();
    let want_all: Vec<f64> = want.concat();
    let err: Vec<f64> = got_all.iter().zip(&want_all).map(|(a, b)| a - b).collect();
    let matvec = frobenius(&err) / frobenius(&want_all);

    let full_img = LinearImage::from_fn(7, 5, |x, y| {
        [0.1 + 0.1 * x as f64, 0.2 + 0.05 * y as f64, 0.3 + 0.02 * (x * y) as f64]
    });
    let baseline = Scorer::baseline(BaselineWeights::default()).map_err(|e| e.to_string())?;
    let all: Vec<usize> = (0..full_img.len()).collect();
    let full = NystromFilter::build(&baseline, &full_img, &all, 1e-13).map_err(|e| e.to_string())?;
    let full_err = max_abs_diff(
        &dense_comparison_matrix(&dense_scores(&baseline, &full_img), full_img.len()),
        &full.dense_approximation(),
    );
    check(
        frob < 1e-6 && matvec < 1e-6 && full_err < 1e-9,
        format!(
            "500 px, K=64: Frobenius {frob:.2e}, matvec {matvec:.2e} (tol 1e-6); full sampling {full_err:.2e} (tol 1e-9)"
        ),
    )
}

fn meanfield() -> Outcome {
    let (img, values) = striped(5, 4, 25);
    let n = img.len();
    let scorer = Scorer::oracle_from_values(values, 0.1, 0.01).map_err(|e| e.to_string())?;
    let f = NystromFilter::build(&scorer, &img, &sample_grid(img.width, img.height, 64).map_err(|e| e.to_string())?, 1e-6)
        .map_err(|e| e.to_string())?;
    let palette = build_palette_spaced(&img, 6, 0.0).map_err(|e| e.to_string())?;
    let mu = mu_matrices(&palette);
    let l = palette.len();
    let mut rng = rng(1004);
    let unary: Vec<f64> = (0..n * l).map(|_| rng.gen_range(0.0..3.0)).collect();
    let cfg = MeanFieldConfig { iters: 10, damping: 0.5, lambda: 50.0 };
    let mut state = MeanFieldState::from_unary(&unary, n, l).map_err(|e| e.to_string())?;
    let mut worst_row = 0.0f64;
    for _ in 0..=cfg.iters {
        for i in 0..n {
            worst_row = worst_row.max((state.row(i).iter().sum::<f64>() - 1.0).abs());
        }
        state = meanfield_step(&state, &unary, &f, &mu, &cfg).map_err(|e| e.to_string())?;
    }

    let s0 = MeanFieldState::from_unary(&unary, n, l).map_err(|e| e.to_string())?;
    let s1 = meanfield_step(&s0, &unary, &NoPairwise(n), &mu, &cfg).map_err(|e| e.to_string())?;
    let fixed = s0.q == s1.q;

    let (small, small_values) = striped(4, 3, 6);
    let small_scorer = Scorer::oracle_from_values(small_values, 0.1, 0.01).map_err(|e| e.to_string())?;
    let all: Vec<usize> = (0..small.len()).collect();
    let exact = NystromFilter::build(&small_scorer, &small, &all, 1e-9).map_err(|e| e.to_string())?;
    let pal = LabelPalette::new(vec![0.1, 0.2, 0.35, 0.6, 0.9], vec![[1.0 / 3.0; 3]; 5]).map_err(|e| e.to_string())?;
    let q = random_distribution(&mut rng, small.len(), pal.len());
    let got = pairwise_messages(&exact, &mu_matrices(&pal), &q, 1.0).map_err(|e| e.to_string())?;
    let want = dense_messages(&dense_scores(&small_scorer, &small), small.len(), &pal.values, &q);
    let msg_err = max_abs_diff(&got, &want);
    check(
        worst_row <= 1e-9 && fixed && msg_err < 1e-6,
        format!(
            "row sums within {worst_row:.1e} (tol 1e-9); zero-pairwise fixed point exact: {fixed}; messages vs dense {msg_err:.1e} (tol 1e-6)"
        ),
    )
}

fn end_to_end() -> Outcome {
    let cfg = DecomposeConfig::default();
    let fx = two_region(64);
    let sc = oracle_scorer(&fx, cfg.delta, cfg.epsilon).map_err(|e| e.to_string())?;
    let r = decompose(&fx.image, Some(&sc), &cfg, Variant::ChromPriorShading).map_err(|e| e.to_string())?;
    let e = evaluate(&fx, &r).map_err(|e| e.to_string())?;
    let purity = e.region_purity.iter().copied().fold(1.0, f64::min);

    let sofa = sofa_gradient(64);
    let sc = oracle_scorer(&sofa, cfg.delta, cfg.epsilon).map_err(|e| e.to_string())?;
    let prior = evaluate(&sofa, &decompose(&sofa.image, Some(&sc), &cfg, Variant::ChromPriorShading).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let bell = evaluate(&sofa, &decompose(&sofa.image, Some(&sc), &cfg, Variant::BellBaseline).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let (prior_labels, bell_labels) = (prior.labels_per_region[1], bell.labels_per_region[1]);
    check(
        purity >= 0.99
            && e.shading_rmse < 0.02
            && e.reconstruction_error <= 0.02
            && prior_labels == 1
            && bell_labels >= 2,
        format!(
            "two-region purity {purity:.4} (>= 0.99), shading RMSE {:.4} (< 0.02), reconstruction {:.1e} (<= 0.02); sofa labels: prior {prior_labels}, baseline {bell_labels}",
            e.shading_rmse, e.reconstruction_error
        ),
    )
}

fn ablation() -> Outcome {
    let cfg = DecomposeConfig::default();
    let mut means = [0.0; 3];
    let variants = [Variant::Chrom, Variant::ChromPrior, Variant::ChromPriorShading];
    let suite = [two_region(64), three_region(64), sofa_gradient(64)];
    for fx in &suite {
        let sc = oracle_scorer(fx, cfg.delta, cfg.epsilon).map_err(|e| e.to_string())?;
        for (m, v) in means.iter_mut().zip(variants) {
            let r = decompose(&fx.image, Some(&sc), &cfg, v).map_err(|e| e.to_string())?;
            *m += evaluate(fx, &r).map_err(|e| e.to_string())?.error_rate / suite.len() as f64;
        }
    }
    check(
        means[0] > means[1] && means[1] >= means[2],
        format!("mean error rate chrom {:.4} > chrom+prior {:.4} >= full {:.4}", means[0], means[1], means[2]),
    )
}

fn relighting() -> Outcome {
    let cfg = DecomposeConfig::default();
    let seq = relight_sequence(64, 3);
    let truth: Vec<Frame> = seq
        .iter()
        .map(|fx| Frame { image: fx.image.clone(), reflectance: fx.reflectance.clone(), shading: fx.shading.clone() })
        .collect();
    let exact = mpre(&truth).map_err(|e| e.to_string())?;
    let mut scores = Vec::new();
    for v in [Variant::ChromPriorShading, Variant::Chrom] {
        let frames = seq
            .iter()
            .map(|fx| {
                let sc = oracle_scorer(fx, cfg.delta, cfg.epsilon)?;
                let r = decompose(&fx.image, Some(&sc), &cfg, v)?;
                Ok(Frame { image: fx.image.clone(), reflectance: r.reflectance, shading: r.shading })
            })
            .collect::<reflectance_prior::Result<Vec<_>>>()
            .map_err(|e| e.to_string())?;
        scores.push(mpre(&frames).map_err(|e| e.to_string())?);
    }
    check(
        exact < 1e-6 && scores[0] < scores[1],
        format!("ground truth {exact:.1e} (< 1e-6); pipeline {:.3e} < chrom-only {:.3e}", scores[0], scores[1]),
    )
}

/// Points 0..4 with reflectance 0.2, 0.5, 0.52, 0.9: under a 10% band
/// 0 < 1 = 2 < 3.
fn crafted(judgments: &[(PointId, PointId, Relation, f64)]) -> Result<ComparisonGraph, String> {
    let points = (0..4).map(|id| Point { id, x: 0.2 * id as f64, y: 0.5 }).collect();
    let js = judgments.iter().map(|&(i, j, r, c)| Judgment::original(i, j, r, c)).collect();
    ComparisonGraph::new("crafted", points, js).map_err(|e| e.to_string())
}

fn metrics() -> Outcome {
    use Relation::{Equal as E, Greater as G, Less as L};
    let refl: HashMap<PointId, f64> = [(0, 0.2), (1, 0.5), (2, 0.52), (3, 0.9)].into_iter().collect();
    // (judgments, whdr, error rate) worked out by hand
    let cases: Vec<(Vec<(PointId, PointId, Relation, f64)>, f64, f64)> = vec![
        (vec![(0, 1, L, 1.0)], 0.0, 0.0),
        (vec![(0, 1, G, 1.0)], 1.0, 1.0),
        (vec![(0, 1, L, 0.5), (1, 2, L, 0.5)], 0.5, 0.5),
        (vec![(0, 1, L, 0.75), (1, 2, L, 0.25)], 0.25, 0.5),
        (vec![(1, 2, E, 1.0), (2, 3, E, 0.5), (3, 0, G, 0.5)], 0.25, 1.0 / 3.0),
        (vec![(0, 1, E, 0.25), (1, 3, L, 0.75)], 0.25, 0.5),
        (
            vec![(0, 1, L, 1.0), (1, 2, E, 1.0), (2, 3, L, 1.0), (3, 0, G, 1.0), (1, 3, L, 1.0), (0, 2, G, 0.5)],
            1.0 / 11.0,
            1.0 / 6.0,
        ),
        (vec![(3, 0, L, 0.625), (2, 1, E, 0.125), (0, 3, L, 0.25)], 0.625, 1.0 / 3.0),
        (vec![(0, 2, L, 1.0), (2, 0, G, 1.0), (1, 2, G, 1.0), (2, 1, L, 1.0)], 0.5, 0.5),
        (vec![(1, 3, E, 0.875), (0, 1, E, 0.875), (1, 2, E, 0.25)], 0.875, 2.0 / 3.0),
    ];
    for (k, (js, want_whdr, want_err)) in cases.iter().enumerate() {
        let g = crafted(js)?;
        let w = whdr(&g, &refl, 0.1).map_err(|e| e.to_string())?;
        let preds = predict_relations(&g, &refl, 0.1).map_err(|e| e.to_string())?;
        let e = error_rate(&g, &preds).map_err(|e| e.to_string())?;
        if w != *want_whdr || e != *want_err {
            return Err(format!("set {k}: whdr {w} (want {want_whdr}), error rate {e} (want {want_err})"));
        }
    }
    let mut rng = rng(1008);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let (mut g, _) = random_consistent_graph(&mut rng, 8);
        let c = rng.gen_range(0.05..1.0);
        g.judgments.iter_mut().for_each(|j| j.confidence = c);
        if g.judgments.is_empty() {
            continue;
        }
        let r: HashMap<PointId, f64> = g.points.iter().map(|p| (p.id, rng.gen_range(0.05..1.0))).collect();
        let w = whdr(&g, &r, 0.1).map_err(|e| e.to_string())?;
        let e = error_rate(&g, &predict_relations(&g, &r, 0.1).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        worst = worst.max((w - e).abs());
    }
    check(
        worst <= 1e-12,
        format!("10 crafted sets exact; equal-confidence whdr vs error rate max gap {worst:.1e} (tol 1e-12)"),
    )
}

fn performance() -> Outcome {
    let side = 256;
    let image = LinearImage::from_fn(side, side, |x, y| {
        let (u, v) = (x as f64 / side as f64, y as f64 / side as f64);
        let t = (u * 7.0).sin() * (v * 5.0).cos();
        [0.3 + 0.25 * t, 0.35 + 0.2 * (u * 3.0 + v).sin(), 0.3 + 0.2 * (v * 4.0).cos()]
    });
    let scorer = Scorer::baseline(BaselineWeights::default()).map_err(|e| e.to_string())?;
    let started = Instant::now();
    let samples = sample_grid(side, side, 64).map_err(|e| e.to_string())?;
    let filter = NystromFilter::build(&scorer, &image, &samples, 1e-6).map_err(|e| e.to_string())?;
    let build = started.elapsed().as_secs_f64();
    let palette = build_palette_spaced(&image, 20, 0.0).map_err(|e| e.to_string())?;
    let unary = chromaticity_unary(&image, &palette, DecomposeConfig::default().unary_weights());
    let state = MeanFieldState::from_unary(&unary, image.len(), palette.len()).map_err(|e| e.to_string())?;
    let mu = mu_matrices(&palette);
    let started = Instant::now();
    pairwise_messages(&filter, &mu, &state.q, 1.0 / image.len() as f64).map_err(|e| e.to_string())?;
    let pass = started.elapsed().as_secs_f64();
    check(
        pass < 2.0 && build < 10.0 && palette.len() == 20,
        format!(
            "256x256, L={}, K=64 on {} thread(s): message pass {pass:.2} s (< 2 s), build {build:.2} s (< 10 s)",
            palette.len(),
            rayon::current_num_threads()
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("augmentation-oracle", augmentation),
        ("ordering-exactness", ordering),
        ("nystrom-exactness", nystrom),
        ("meanfield-contracts", meanfield),
        ("end-to-end-fixtures", end_to_end),
        ("ablation-direction", ablation),
        ("relighting-mpre", relighting),
        ("metrics-oracle", metrics),
        ("performance-envelope", performance),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        match run() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
