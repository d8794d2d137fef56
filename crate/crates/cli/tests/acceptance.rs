//! Acceptance criteria, one PASS/FAIL line each. Runs without the libtest
//! harness so the report prints in order; exits nonzero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use ndarray::{Array2, ArrayView2};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use topoprior::ablation::Control;
use topoprior::adapter::{Adapter, AdapterBatch, AdapterConfig, CONTEXT_DIM};
use topoprior::backbone::{quantile_loss, Backbone, BackboneBatch, BackboneConfig};
use topoprior::corpus::SeriesCorpus;
use topoprior::experiment::{run_cold_start, run_planted, ColdStartExperiment, PlantedExperiment};
use topoprior::forecast::Variant;
use topoprior::landscape::{
    default_stability_constant, fingerprint, landscape_value, stability_check, BLOCKS, FINGERPRINT_DIM, GRID_POINTS,
};
use topoprior::manifold::{knn_weight_graph, DistanceGraph, WeightGraph};
use topoprior::nn::gradcheck::{check_layer, check_params, END_TO_END_STEP, END_TO_END_TOLERANCE, LAYER_TOLERANCE};
use topoprior::nn::{
    huber_quantile_loss, rng_from_seed, Ctx, Dropout, Embedding, Gelu, Layer, LayerNorm, Linear, Module,
    MultiHeadAttention, Param, Relu, Rng, Softmax, QUANTILES,
};
use topoprior::persistence::{betti_numbers_at, diagram_of_graph, DiagramJson, PersistenceDiagram};
use topoprior::screening::{ScreeningReport, Thresholds};
use topoprior::sheaf::{sheaf_dirichlet_energy, spectral_coordinates, svd_truncated, SpectralOptions, SHEAF_DIM};
use topoprior::Execution;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn gaussian(rows: usize, cols: usize, rng: &mut Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
}

fn random_points(n: usize, dim: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..dim).map(|_| rng.random::<f64>()).collect()).collect()
}

// 1 ------------------------------------------------------------------------

fn persistence_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = rng_from_seed(1);
    let (mut checks, mut mismatches) = (0usize, Vec::new());
    for g in 0..200 {
        let n = rng.random_range(1..=8);
        let points = random_points(n, 2 + g % 2, &mut rng);
        let full = DistanceGraph::from_points(&points).map_err(|e| e.to_string())?;
        // Every other graph drops edges so non-complete clique complexes are covered.
        let graph = if g % 2 == 1 {
            let kept: Vec<(usize, usize, f64)> = full
                .edges()
                .iter()
                .filter(|_| rng.random_bool(0.7))
                .map(|e| (e.i, e.j, e.d))
                .collect();
            DistanceGraph::from_edges(n, kept).map_err(|e| e.to_string())?
        } else {
            full
        };
        let diagram = diagram_of_graph(&graph, Execution::Sequential).map_err(|e| e.to_string())?;
        let top = graph.max_distance().max(1e-3) * 1.1;
        let edge_lengths: Vec<f64> = graph.edges().iter().map(|e| e.d).collect();
        for k in 0..20 {
            // Half the thresholds sit exactly on edge lengths, where ties matter.
            let eps = if k % 2 == 0 && !edge_lengths.is_empty() {
                edge_lengths[rng.random_range(0..edge_lengths.len())]
            } else {
                rng.random::<f64>() * top
            };
            let oracle = betti_numbers_at(&graph, eps);
            let derived = (diagram.betti_at(0, eps), diagram.betti_at(1, eps));
            checks += 1;
            if oracle != derived {
                mismatches.push(format!("graph {g} eps {eps}: oracle {oracle:?} vs diagram {derived:?}"));
            }
        }
    }
    let elapsed = start.elapsed();
    ensure(mismatches.is_empty(), || format!("{} mismatches, first: {}", mismatches.len(), mismatches[0]))?;
    ensure(elapsed < Duration::from_secs(30), || format!("took {elapsed:?}"))?;
    Ok(format!("{checks} thresholds, 0 mismatches, {:.2}s", elapsed.as_secs_f64()))
}

// 2 ------------------------------------------------------------------------

/// ℓ-th largest tent by repeated removal of the maximum.
fn landscape_oracle(pairs: &[(f64, f64)], layer: usize, t: f64) -> f64 {
    let mut tents: Vec<f64> = pairs.iter().map(|&(b, d)| (t - b).min(d - t).max(0.0)).collect();
    let mut value = 0.0;
    for _ in 0..layer {
        let Some((idx, &max)) = tents.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)) else {
            return 0.0;
        };
        value = max;
        tents.swap_remove(idx);
    }
    value
}

fn random_diagram(rng: &mut Rng) -> PersistenceDiagram {
    let dims: Vec<DiagramJson> = (0..3)
        .map(|dim| DiagramJson {
            dim,
            pairs: (0..rng.random_range(0..7))
                .map(|_| {
                    let b = rng.random::<f64>();
                    let d = (!rng.random_bool(0.15)).then(|| b + 1e-3 + rng.random::<f64>());
                    (b, d)
                })
                .collect(),
        })
        .collect();
    PersistenceDiagram::from_json(&dims).expect("valid random diagram")
}

fn landscape_fidelity() -> Outcome {
    let mut rng = rng_from_seed(2);
    let mut compared = 0;
    for trial in 0..100 {
        let diagram = random_diagram(&mut rng);
        let fp = fingerprint(&diagram);
        let cap = diagram.max_finite_death().unwrap_or(1.0);
        ensure(fp.cap_value == cap, || format!("trial {trial}: cap {} vs {cap}", fp.cap_value))?;
        ensure(fp.values.len() == FINGERPRINT_DIM, || "fingerprint length".into())?;
        for (block, &(dim, layer)) in BLOCKS.iter().enumerate() {
            let pairs: Vec<(f64, f64)> = diagram
                .pairs(dim)
                .iter()
                .map(|p| (p.birth, if p.death.is_finite() { p.death } else { cap }))
                .collect();
            for i in 0..GRID_POINTS {
                let t = cap * i as f64 / (GRID_POINTS - 1) as f64;
                let got = fp.block(block)[i];
                let direct = landscape_value(&pairs, layer, t);
                let oracle = landscape_oracle(&pairs, layer, t);
                ensure(got == direct && got == oracle, || {
                    format!("trial {trial} block {block} t {t}: fingerprint {got}, direct {direct}, oracle {oracle}")
                })?;
                compared += 1;
            }
        }
    }
    let square = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]].map(|p| p.to_vec());
    let graph = DistanceGraph::from_points(&square).map_err(|e| e.to_string())?;
    let diagram = diagram_of_graph(&graph, Execution::Sequential).map_err(|e| e.to_string())?;
    let h1 = diagram.pairs(1);
    ensure(
        h1.len() == 1 && (h1[0].birth - 1.0).abs() < 1e-12 && (h1[0].death - 2f64.sqrt()).abs() < 1e-12,
        || format!("square H1 = {h1:?}"),
    )?;
    Ok(format!("{compared} grid values exact; square H1 = ({}, {:.12})", h1[0].birth, h1[0].death))
}

// 3 ------------------------------------------------------------------------

fn lipschitz_stability() -> Outcome {
    let constant = default_stability_constant();
    let mut worst: f64 = 0.0;
    for trial in 0..50u64 {
        let mut rng = rng_from_seed(300 + trial);
        let a = random_points(10, 2, &mut rng);
        let b: Vec<Vec<f64>> = a
            .iter()
            .map(|p| p.iter().map(|v| v + 0.05 * (2.0 * rng.random::<f64>() - 1.0)).collect())
            .collect();
        let da = diagram_of_graph(&DistanceGraph::from_points(&a).unwrap(), Execution::Sequential).unwrap();
        let db = diagram_of_graph(&DistanceGraph::from_points(&b).unwrap(), Execution::Sequential).unwrap();
        let r = stability_check(&da, &db, constant).map_err(|e| e.to_string())?;
        ensure(r.lhs <= r.rhs + 1e-9, || format!("trial {trial}: {} > {}", r.lhs, r.rhs))?;
        if r.rhs > 0.0 {
            worst = worst.max(r.lhs / r.rhs);
        }
    }
    Ok(format!("50 trials, C = sqrt(125), largest lhs/rhs = {worst:.4}"))
}

// 4 ------------------------------------------------------------------------

fn screening_arithmetic() -> Outcome {
    let mut parts = Vec::new();
    for (name, n, h1, printed, three) in [
        ("METR-LA", 207, 46, 0.22, 0.222),
        ("ECL", 321, 83, 0.26, 0.259),
        ("Monash Weather", 3010, 1847, 0.61, 0.614),
    ] {
        let r = ScreeningReport::from_counts(n, h1, 0.0, Thresholds::default()).map_err(|e| e.to_string())?;
        ensure((r.ratio - printed).abs() <= 0.005, || format!("{name}: {} vs {printed}", r.ratio))?;
        ensure((r.ratio - three).abs() < 5e-4, || format!("{name}: {} vs {three}", r.ratio))?;
        parts.push(format!("{name} {:.3}", r.ratio));
    }
    Ok(parts.join(", "))
}

// 5 ------------------------------------------------------------------------

fn max_gram_deviation(m: ArrayView2<f64>) -> f64 {
    let g = m.t().dot(&m);
    g.indexed_iter()
        .map(|((i, j), v)| (v - if i == j { 1.0 } else { 0.0 }).abs())
        .fold(0.0, f64::max)
}

fn random_frame(n: usize, k: usize, rng: &mut Rng) -> Array2<f64> {
    let mut q = gaussian(n, k, rng);
    for j in 0..k {
        for i in 0..j {
            let proj = q.column(i).dot(&q.column(j));
            let ci = q.column(i).to_owned();
            q.column_mut(j).scaled_add(-proj, &ci);
        }
        let norm = q.column(j).dot(&q.column(j)).sqrt();
        q.column_mut(j).mapv_inplace(|v| v / norm);
    }
    q
}

/// Three clusters sharing a common factor with positive loadings, so every
/// pairwise correlation is non-negative.
fn nonnegative_corpus(seed: u64) -> SeriesCorpus {
    let mut rng = rng_from_seed(seed);
    let t = 80;
    let common: Vec<f64> = (0..t).map(|_| StandardNormal.sample(&mut rng)).collect();
    let factors: Vec<Vec<f64>> = (0..3).map(|_| (0..t).map(|_| StandardNormal.sample(&mut rng)).collect()).collect();
    let rows: Vec<Vec<f64>> = (0..30)
        .map(|i| {
            let (a, b) = (1.0 + rng.random::<f64>(), 1.5 + 0.5 * rng.random::<f64>());
            (0..t)
                .map(|s| {
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    a * factors[i % 3][s] + b * common[s] + 0.3 * noise
                })
                .collect()
        })
        .collect();
    SeriesCorpus::from_rows(&rows).unwrap()
}

fn adjacency_trace(graph: &WeightGraph, x: ArrayView2<f64>) -> f64 {
    graph
        .edges
        .iter()
        .map(|&(i, j, w)| 2.0 * w * x.row(i).dot(&x.row(j)))
        .sum()
}

fn svd_contract() -> Outcome {
    let diag = ndarray::arr2(&[[3.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 1.0]]);
    let svd = svd_truncated(diag.view(), 2).map_err(|e| e.to_string())?;
    let recon = (&svd.u * &ndarray::Array1::from(svd.s.clone())).dot(&svd.v.t());
    let residual: f64 = (&diag - &recon).mapv(|v| v * v).sum();
    ensure(svd.s == [3.0, 2.0] && residual == 1.0, || format!("S {:?}, residual² {residual}", svd.s))?;

    let mut rng = rng_from_seed(5);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let (n, t) = (rng.random_range(3..25), rng.random_range(3..35));
        let k = rng.random_range(1..=n.min(t));
        let m = gaussian(n, t, &mut rng);
        let svd = svd_truncated(m.view(), k).map_err(|e| e.to_string())?;
        worst = worst.max(max_gram_deviation(svd.u.view())).max(max_gram_deviation(svd.v.view()));
    }
    ensure(worst <= 1e-6, || format!("orthonormality deviation {worst:e}"))?;

    let corpus = nonnegative_corpus(55);
    let graph = knn_weight_graph(&corpus, None, Execution::Sequential).map_err(|e| e.to_string())?;
    ensure(graph.edges.iter().all(|&(_, _, w)| w >= 0.0), || "negative weight".into())?;
    let corr_min = {
        let z = topoprior::corpus::zscore_per_series(&corpus);
        let v = z.values();
        let c = v.dot(&v.t()) / v.ncols() as f64;
        c.iter().copied().fold(f64::INFINITY, f64::min)
    };
    ensure(corr_min >= 0.0, || format!("corpus has correlation {corr_min}"))?;
    let k = 3;
    let options = SpectralOptions {
        normalize: true,
        max_rank: Some(k),
    };
    let coords = spectral_coordinates(&corpus, None, &options, Execution::Sequential).map_err(|e| e.to_string())?;
    ensure(coords.coords.ncols() == SHEAF_DIM, || "width".into())?;
    let top = coords.coords.slice(ndarray::s![.., 0..k]).to_owned();
    let energy = sheaf_dirichlet_energy(&graph, top.view()).map_err(|e| e.to_string())?;
    let trace = adjacency_trace(&graph, top.view());
    let mut min_random = f64::INFINITY;
    for trial in 0..100 {
        let frame = random_frame(corpus.n(), k, &mut rng);
        let e = sheaf_dirichlet_energy(&graph, frame.view()).map_err(|e| e.to_string())?;
        let tr = adjacency_trace(&graph, frame.view());
        ensure(energy <= e, || format!("frame {trial}: spectral energy {energy} > random {e}"))?;
        ensure(trace >= tr, || format!("frame {trial}: spectral trace {trace} < random {tr}"))?;
        min_random = min_random.min(e);
    }
    Ok(format!(
        "residual² 1, orthonormality {worst:.1e}, energy {energy:.3} vs best random {min_random:.3}"
    ))
}

// 6 ------------------------------------------------------------------------

fn gradient_checks() -> Outcome {
    let mut worst_layer: f64 = 0.0;
    let mut worst_model: f64 = 0.0;
    for seed in 0..5u64 {
        let mut rng = rng_from_seed(600 + seed);
        let (rows, inp, out) = (2 + seed as usize, 3 + seed as usize, 2 + seed as usize % 3);
        let x = gaussian(rows, inp, &mut rng);
        let mut ln = LayerNorm::new("ln", inp);
        ln.gamma.value = gaussian(1, inp, &mut rng);
        ln.beta.value = gaussian(1, inp, &mut rng);
        let heads = 1 + seed as usize % 2;
        let mut layers: Vec<(&str, Box<dyn Layer>, Array2<f64>)> = vec![
            ("linear", Box::new(Linear::new("l", inp, out, &mut rng)), x.clone()),
            ("layer_norm", Box::new(ln), x.clone()),
            ("relu", Box::new(Relu::default()), off_kink(&x)),
            ("gelu", Box::new(Gelu::default()), x.clone()),
            ("softmax", Box::new(Softmax::default()), x.clone()),
            ("dropout", Box::new(Dropout::new(0.3)), x.clone()),
            (
                "attention",
                Box::new(MultiHeadAttention::new("att", heads, 3, 6, &mut rng)),
                gaussian(6, heads * 3, &mut rng),
            ),
        ];
        for (name, layer, input) in &mut layers {
            let r = check_layer(layer.as_mut(), input, seed);
            ensure(r.max_relative_error < LAYER_TOLERANCE, || format!("{name} seed {seed}: {r:?}"))?;
            worst_layer = worst_layer.max(r.max_relative_error);
        }

        // Embedding: parameters only, through a weighted sum of looked-up rows.
        let mut emb = Embedding::new("e", 5, 3, &mut rng);
        let ids = [0, 3, 3, 1];
        let upstream = gaussian(ids.len(), 3, &mut rng);
        emb.zero_grad();
        emb.lookup(&ids).unwrap();
        emb.backward(&upstream);
        let r = check_params(&mut emb, |e| (&e.lookup(&ids).unwrap() * &upstream).sum(), 1, 1e-4);
        ensure(r.max_relative_error < LAYER_TOLERANCE, || format!("embedding seed {seed}: {r:?}"))?;

        // Quantile loss with respect to the predictions.
        let pred = gaussian(4, QUANTILES.len(), &mut rng);
        let target = gaussian(1, 4, &mut rng).row(0).to_owned();
        let (_, grad) = huber_quantile_loss(&pred, target.view(), &QUANTILES, 0.5).unwrap();
        let mut holder = LossInput(Param::new("pred", pred));
        holder.0.grad = grad;
        let r = check_params(
            &mut holder,
            |h| huber_quantile_loss(&h.0.value, target.view(), &QUANTILES, 0.5).unwrap().0,
            1,
            1e-6,
        );
        ensure(r.max_relative_error < LAYER_TOLERANCE, || format!("quantile loss seed {seed}: {r:?}"))?;

        for variant in [Variant::Vanilla, Variant::TdaSheaf] {
            let cfg = BackboneConfig {
                d_model: 16,
                layers: 1,
                heads: 2,
                head_dim: 8,
                ffn_dim: 32,
                dropout: 0.0,
                ..BackboneConfig::desk(4, 2)
            };
            let mut model = Backbone::new(&cfg, variant, seed).unwrap();
            let b = 2;
            let batch = BackboneBatch {
                values: gaussian(b, cfg.context_len, &mut rng),
                temporal: gaussian(b, cfg.temporal_feature_dim, &mut rng),
                entities: None,
                tda: variant.uses_tda().then(|| gaussian(b, FINGERPRINT_DIM, &mut rng)),
                sheaf: variant.uses_sheaf().then(|| gaussian(b, SHEAF_DIM, &mut rng)),
            };
            let targets = gaussian(b, cfg.horizon, &mut rng);
            model.zero_grad();
            let out = model.forward(&batch, &mut Ctx::eval()).unwrap();
            let (_, grad) = quantile_loss(&out, &targets, 1.0).unwrap();
            model.backward(&grad);
            let r = check_params(
                &mut model,
                |m| quantile_loss(&m.forward(&batch, &mut Ctx::eval()).unwrap(), &targets, 1.0).unwrap().0,
                7,
                END_TO_END_STEP,
            );
            ensure(r.max_relative_error < END_TO_END_TOLERANCE, || format!("backbone {variant} seed {seed}: {r:?}"))?;
            worst_model = worst_model.max(r.max_relative_error);
        }
    }
    Ok(format!("layers max rel err {worst_layer:.1e}, backbone {worst_model:.1e}"))
}

/// Moves entries away from zero so the central difference never straddles the kink.
fn off_kink(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| if v.abs() < 1e-2 { v.signum() * 1e-2 + v } else { v })
}

struct LossInput(Param);

impl Module for LossInput {
    fn params(&self) -> Vec<&Param> {
        vec![&self.0]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.0]
    }
}

// 7 ------------------------------------------------------------------------

fn adapter_identity() -> Outcome {
    let mut rng = rng_from_seed(7);
    let mut inputs = 0;
    for round in 0..10u64 {
        let h = 1 + round as usize % 4;
        let variant = Variant::ALL[round as usize % Variant::ALL.len()];
        let adapter = Adapter::new(&AdapterConfig::new(h), variant, round).map_err(|e| e.to_string())?;
        let n = 100;
        let scale = 10f64.powi(round as i32 - 4);
        let batch = AdapterBatch {
            tda: gaussian(n, FINGERPRINT_DIM, &mut rng),
            sheaf: gaussian(n, SHEAF_DIM, &mut rng),
            ctx: gaussian(n, CONTEXT_DIM, &mut rng),
            base: gaussian(n, h, &mut rng) * scale,
        };
        let out = adapter.predict(&batch, Execution::Parallel).map_err(|e| e.to_string())?;
        for (f, base) in out.iter().zip(batch.base.rows()) {
            for (hh, b) in base.iter().enumerate() {
                ensure(f.values.row(hh).iter().all(|v| v.to_bits() == b.to_bits()), || {
                    format!("round {round} ({variant}): {:?} vs base {b}", f.values.row(hh))
                })?;
            }
            inputs += 1;
        }
    }
    Ok(format!("{inputs} inputs, all quantiles bitwise equal to the base"))
}

// 8 ------------------------------------------------------------------------

fn planted_ordering() -> Outcome {
    let start = Instant::now();
    let cfg = PlantedExperiment::default();
    let (screening, table) = run_planted(&cfg, &[Control::Vanilla, Control::Rand, Control::TdaSheaf], Execution::Parallel)
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let mae = |c| table.row(c).map(|r| r.mae).ok_or_else(|| format!("missing row {c}"));
    let (sheaf, vanilla, rand) = (mae(Control::TdaSheaf)?, mae(Control::Vanilla)?, mae(Control::Rand)?);
    let summary = format!(
        "N {} H1 {}; median MAE tda+sheaf {sheaf:.5} vanilla {vanilla:.5} rand {rand:.5}; {:.1}s",
        screening.n,
        screening.h1_count,
        elapsed.as_secs_f64()
    );
    ensure(screening.h1_count >= 1, || format!("no H1 on planted corpus: {summary}"))?;
    ensure(sheaf <= vanilla && vanilla <= rand, || format!("ordering violated: {summary}"))?;
    ensure(elapsed < Duration::from_secs(600), || format!("too slow: {summary}"))?;
    Ok(summary)
}

// 9 ------------------------------------------------------------------------

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn cold_start_direction() -> Outcome {
    let cfg = ColdStartExperiment::default();
    let (mut tda, mut vanilla) = (Vec::new(), Vec::new());
    for seed in 0..5 {
        let out = run_cold_start(&cfg, &[Variant::Vanilla, Variant::Tda], seed, Execution::Parallel)
            .map_err(|e| e.to_string())?;
        let week0 = |v| out.week_mae(v, 0).ok_or_else(|| format!("seed {seed}: no week-0 MAE for {v}"));
        tda.push(week0(Variant::Tda)?);
        vanilla.push(week0(Variant::Vanilla)?);
    }
    let (t, v) = (median(tda), median(vanilla));
    ensure(t < v, || format!("median week-0 MAE tda {t:.4} vs vanilla {v:.4}"))?;
    Ok(format!("median week-0 MAE tda {t:.4} < vanilla {v:.4}"))
}

// 10 -----------------------------------------------------------------------

const CLI_CONFIG: &str = r#"
[data]
path = "corpus.csv"
[windows]
stride = 4
[backbone]
epochs = 1
batch_size = 64
[adapter]
epochs = 2
branch_dim = 8
hidden_dim = 16
[ablate]
seeds = [0, 1]
"#;

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn cli_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    std::fs::write(dir.path().join("c.toml"), CLI_CONFIG).map_err(|e| e.to_string())?;
    let run = |args: &[&str]| -> Result<(), String> {
        let out = Command::new(env!("CARGO_BIN_EXE_topoprior"))
            .args(args)
            .current_dir(dir.path())
            .output()
            .map_err(|e| e.to_string())?;
        ensure(out.status.success(), || {
            format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr))
        })
    };
    run(&["synth", "--kind", "planted", "--out", "corpus.csv"])?;
    let steps: [&[&str]; 9] = [
        &["fingerprint"],
        &["sheaf"],
        &["screen"],
        &["train-backbone", "--variant", "tda"],
        &["build-cache"],
        &["adapt", "--variant", "tda+sheaf"],
        &["eval", "--variant", "tda+sheaf"],
        &["eval", "--model", "backbone", "--variant", "tda"],
        &["ablate", "--variants", "vanilla,rand,shuffle,tda,tda+sheaf"],
    ];
    let all = |seed: &str| -> Result<(), String> {
        for s in steps {
            let mut args = vec!["--config", "c.toml", "--seed", seed];
            args.extend_from_slice(s);
            run(&args)?;
        }
        Ok(())
    };
    all("3")?;
    let first = snapshot(&dir.path().join("artifacts"));
    all("3")?;
    let second = snapshot(&dir.path().join("artifacts"));
    let differing: Vec<&str> = first
        .iter()
        .zip(&second)
        .filter(|(a, b)| a != b)
        .map(|(a, _)| a.0.as_str())
        .collect();
    ensure(first.len() == second.len() && differing.is_empty(), || {
        format!("artifacts differ: {differing:?}")
    })?;
    Ok(format!("{} artifacts from {} commands byte-identical on rerun", first.len(), steps.len()))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("persistence oracle equivalence", persistence_oracle),
        ("landscape fidelity", landscape_fidelity),
        ("Lipschitz stability", lipschitz_stability),
        ("screening arithmetic", screening_arithmetic),
        ("SVD contract", svd_contract),
        ("gradient checks", gradient_checks),
        ("adapter residual identity", adapter_identity),
        ("planted-topology ordering", planted_ordering),
        ("cold-start direction", cold_start_direction),
        ("CLI determinism", cli_determinism),
    ];
    let only: Option<usize> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let number = i + 1;
        if only.is_some_and(|o| o != number) {
            continue;
        }
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match result {
            Ok(detail) => println!("criterion {number:>2} PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {number:>2} FAIL  {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
