//! Acceptance suite. Runs every criterion and prints one PASS/FAIL line per
//! criterion; exits non-zero if any criterion fails.
//!
//! The ISOLET criterion is slow and needs external data. It runs only when
//! `--ignored` or `--include-ignored` is passed (for example
//! `cargo test --test acceptance -- --ignored`), reading `isolet1+2+3+4.data`
//! and `isolet5.data` from the directory named by `CCML_ISOLET_DIR`.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use ccml_core::classify::{ccknn_classify, ccknn_posterior};
use ccml_core::dataset::{generate_sandwich, load_csv, split, CsvOptions, LabeledDataset, SandwichConfig, Split, SplitSpec};
use ccml_core::eval::{loo_knn_error, retrieval_curve, retrieval_curve_embedded};
use ccml_core::knn;
use ccml_core::pipeline::{self, PipelineConfig};
use ccml_core::{CcknnOptions, Embedding, InitSpec, PcaMode, PreprocessConfig, TrainConfig, Variant};
use common::*;
use rand::Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn wine() -> LabeledDataset {
    load_csv(data_dir().join("wine.csv"), &CsvOptions::default()).expect("wine data")
}

fn sandwich(seed: u64) -> LabeledDataset {
    generate_sandwich(&SandwichConfig {
        seed,
        ..Default::default()
    })
    .expect("sandwich")
}

fn seeded(train: TrainConfig, seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        init: InitSpec {
            seed,
            ..train.init
        },
        ..train
    }
}

fn sandwich_pipeline(seed: u64) -> PipelineConfig {
    PipelineConfig {
        output_dim: Some(2),
        train: seeded(
            TrainConfig {
                k: 1,
                ..Default::default()
            },
            seed,
        ),
        ..Default::default()
    }
}

fn wine_pipeline(k: usize, learning_rate: f64) -> PipelineConfig {
    PipelineConfig {
        preprocess: PreprocessConfig {
            standardize: true,
            pca: Some(PcaMode::RetainVariance(0.99)),
        },
        train: TrainConfig {
            k,
            learning_rate,
            ..Default::default()
        },
        ..Default::default()
    }
}

fn gradient_correctness() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut instances = 0;
    for seed in 0..25 {
        for variant in [Variant::AllClasses, Variant::CorrectClass] {
            worst = worst.max(ccml_gradient_check(seed, variant));
            instances += 1;
        }
    }
    check(
        worst <= 1e-4,
        format!("{instances} instances, worst relative error {worst:.2e} (limit 1e-4)"),
    )
}

fn oracle_equivalence() -> Outcome {
    let opts = CcknnOptions::default();
    let cases = 120;
    let mut mismatches = Vec::new();
    let mut largest = 0;
    for seed in 0..cases {
        let c = knn_case(seed);
        largest = largest.max(c.zr.nrows());
        let per_class = knn::knn_per_class(c.zq.view(), c.zr.view(), &c.labels, c.classes, c.k, None).unwrap();
        let want = oracle_knn_per_class(c.zq.view(), c.zr.view(), &c.labels, c.classes, c.k, false);
        let per_class_ok = (0..c.zq.nrows()).all(|q| {
            (0..c.classes).all(|class| {
                let got: Vec<(f64, usize)> = per_class.get(q, class).iter().map(|n| (n.sq_dist, n.index)).collect();
                got == want[q][class]
            })
        });
        let mut r = rng(seed ^ 0x5eed);
        let excluded: Vec<usize> = (0..c.zq.nrows()).map(|_| r.gen_range(0..c.classes)).collect();
        let others = knn::knn_excluding_class(c.zq.view(), c.zr.view(), &c.labels, &excluded, c.k).unwrap();
        let want_others = oracle_knn_excluding(c.zq.view(), c.zr.view(), &c.labels, &excluded, c.k);
        let excluding_ok = others.iter().zip(&want_others).all(|(got, want)| {
            got.iter().map(|n| (n.sq_dist, n.index)).collect::<Vec<_>>() == *want
        });
        let predicted = ccknn_classify(c.zq.view(), c.zr.view(), &c.labels, c.classes, c.k, &opts).unwrap();
        let ccknn_ok = predicted.predicted == oracle_ccknn(c.zq.view(), c.zr.view(), &c.labels, c.classes, c.k);
        for (name, ok) in [("knn_per_class", per_class_ok), ("knn_excluding_class", excluding_ok), ("ccknn", ccknn_ok)] {
            if !ok {
                mismatches.push(format!("{name}@{seed}"));
            }
        }
    }
    check(
        mismatches.is_empty(),
        format!("{cases} instances up to n={largest}, mismatches: {mismatches:?}"),
    )
}

fn posterior_consistency() -> Outcome {
    let opts = CcknnOptions::default();
    let mut queries = 0;
    let mut disagreements = 0;
    for seed in 1000..1120 {
        let c = knn_case(seed);
        let hard = ccknn_classify(c.zq.view(), c.zr.view(), &c.labels, c.classes, c.k, &opts).unwrap();
        let soft = ccknn_posterior(c.zq.view(), c.zr.view(), &c.labels, c.classes, c.k, &opts).unwrap();
        for (q, row) in soft.scores.rows().into_iter().enumerate() {
            // First index of the maximum, matching the lowest-id tie rule.
            let argmax = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0;
            queries += 1;
            if argmax != hard.predicted[q] {
                disagreements += 1;
            }
        }
    }
    check(
        disagreements == 0,
        format!("{queries} queries, {disagreements} disagreements"),
    )
}

fn sandwich_claim() -> Outcome {
    let mut wins = 0;
    let mut worst_learned: f64 = 0.0;
    let mut rows = Vec::new();
    for seed in 0..5 {
        let ds = sandwich(seed);
        let base = loo_knn_error(ds.features().view(), ds.labels(), 1).unwrap();
        let model = pipeline::fit(&ds, &sandwich_pipeline(seed)).map_err(|e| e.to_string())?;
        let z = model.embed(ds.features().view()).unwrap();
        let learned = loo_knn_error(z.view(), ds.labels(), 1).unwrap();
        if learned < base {
            wins += 1;
        }
        worst_learned = worst_learned.max(learned);
        rows.push(format!("{learned:.3}/{base:.3}"));
    }
    check(
        wins >= 4 && worst_learned < 0.10,
        format!(
            "learned/euclidean LOO 1-NN error per seed {}; wins {wins}/5, worst learned {worst_learned:.3}",
            rows.join(" ")
        ),
    )
}

fn wine_quantitative() -> Outcome {
    let ds = wine();
    let grid: Vec<PipelineConfig> = [1, 3, 5]
        .into_iter()
        .flat_map(|k| [0.001, 0.01].map(|lr| wine_pipeline(k, lr)))
        .collect();
    let folds = pipeline::nested_cross_validate(&ds, &grid, 10, 10, 0).map_err(|e| e.to_string())?;
    let mean = |f: &dyn Fn(&pipeline::SelectedFold) -> f64| {
        pipeline::mean_sd(&folds.iter().map(f).collect::<Vec<_>>())
    };
    let (ccknn, ccknn_sd) = mean(&|f| f.result.learned.ccknn);
    let (euclid, euclid_sd) = mean(&|f| f.result.euclidean.knn);
    check(
        ccknn <= 0.05 && ccknn <= euclid,
        format!(
            "10-fold nested CV: CCML+CCKNN {:.2}% ± {:.2}, Euclidean-PCA KNN {:.2}% ± {:.2}",
            100.0 * ccknn,
            100.0 * ccknn_sd,
            100.0 * euclid,
            100.0 * euclid_sd
        ),
    )
}

fn isolet_ordering() -> Outcome {
    let dir = std::env::var_os("CCML_ISOLET_DIR")
        .map(PathBuf::from)
        .ok_or("CCML_ISOLET_DIR is not set")?;
    let train_path = dir.join("isolet1+2+3+4.data");
    let test_path = dir.join("isolet5.data");
    let train = load_csv(&train_path, &CsvOptions::default())
        .map_err(|e| format!("{}: {e}", train_path.display()))?;
    let opts = CsvOptions {
        class_names: train.class_names().map(<[String]>::to_vec),
        ..Default::default()
    };
    let test = load_csv(&test_path, &opts).map_err(|e| format!("{}: {e}", test_path.display()))?;
    let cfg = PipelineConfig {
        preprocess: PreprocessConfig {
            standardize: true,
            pca: Some(PcaMode::RetainVariance(0.99)),
        },
        train: TrainConfig {
            k: 3,
            epochs: 50,
            ..Default::default()
        },
        ..Default::default()
    };
    let (_, r) = pipeline::fit_and_evaluate(&train, &test, &cfg).map_err(|e| e.to_string())?;
    let ordering = r.learned.ccknn < r.euclidean.knn;
    let no_degrade = r.learned.ccknn <= r.learned.knn + 0.005 && r.euclidean.ccknn <= r.euclidean.knn + 0.005;
    check(
        ordering && no_degrade,
        format!(
            "{}/{} rows: CCML knn {:.2}% ccknn {:.2}%, Euclidean-PCA knn {:.2}% ccknn {:.2}%",
            train.n_samples(),
            test.n_samples(),
            100.0 * r.learned.knn,
            100.0 * r.learned.ccknn,
            100.0 * r.euclidean.knn,
            100.0 * r.euclidean.ccknn
        ),
    )
}

/// Per-query nDCG pooled over the test folds of a 10-fold split, for the
/// learned metric and each baseline embedding.
fn pooled_curves(
    ds: &LabeledDataset,
    cfg: &PipelineConfig,
    seed: u64,
    include_raw: bool,
) -> Result<Vec<Vec<f64>>, String> {
    let depths: Vec<usize> = (1..=10).collect();
    let Split::Folds(parts) = split(
        ds,
        &SplitSpec {
            folds: Some(10),
            seed,
            ..Default::default()
        },
    )
    .map_err(|e| e.to_string())?
    else {
        unreachable!("folds requested")
    };
    let curves = if include_raw { 3 } else { 2 };
    let mut sums = vec![vec![0.0; depths.len()]; curves];
    let mut queries = 0.0;
    for p in &parts {
        let model = pipeline::fit(&p.train, cfg).map_err(|e| e.to_string())?;
        let (xq, xr) = (p.test.features().view(), p.train.features().view());
        let (lq, lr) = (p.test.labels(), p.train.labels());
        let mut fold = vec![
            retrieval_curve(&model, xq, lq, xr, lr, &depths).unwrap(),
            retrieval_curve(&model.euclidean_baseline(), xq, lq, xr, lr, &depths).unwrap(),
        ];
        if include_raw {
            fold.push(retrieval_curve_embedded(xq, lq, xr, lr, &depths).unwrap());
        }
        let weight = p.test.n_samples() as f64;
        queries += weight;
        for (sum, curve) in sums.iter_mut().zip(&fold) {
            for (s, (_, v)) in sum.iter_mut().zip(&curve.points) {
                *s += v * weight;
            }
        }
    }
    Ok(sums
        .into_iter()
        .map(|s| s.into_iter().map(|v| v / queries).collect())
        .collect())
}

fn dominates(learned: &[f64], baseline: &[f64]) -> (bool, f64) {
    let pointwise = learned.iter().zip(baseline).all(|(a, b)| a >= b);
    let gap = learned.iter().zip(baseline).map(|(a, b)| a - b).sum::<f64>() / learned.len() as f64;
    (pointwise && gap > 0.0, gap)
}

fn retrieval_ordering() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    let sw = pooled_curves(&sandwich(0), &sandwich_pipeline(0), 0, true)?;
    for (name, baseline) in [("standardized", &sw[1]), ("raw", &sw[2])] {
        let (pass, gap) = dominates(&sw[0], baseline);
        ok &= pass;
        notes.push(format!("sandwich vs {name} gap {gap:+.3}"));
    }
    let wine_curves = pooled_curves(&wine(), &wine_pipeline(3, 0.01), 0, false)?;
    let (pass, gap) = dominates(&wine_curves[0], &wine_curves[1]);
    ok &= pass;
    notes.push(format!("wine vs Euclidean-PCA gap {gap:+.3}"));
    notes.push(format!(
        "nDCG@1..10 sandwich {:.3}..{:.3}, wine {:.3}..{:.3}",
        sw[0][0], sw[0][9], wine_curves[0][0], wine_curves[0][9]
    ));
    check(ok, notes.join("; "))
}

fn run_cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_ccml"))
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn cli_determinism() -> Outcome {
    let wine_csv = data_dir().join("wine.csv");
    let wine_csv = wine_csv.to_str().unwrap();
    let script: Vec<Vec<&str>> = vec![
        vec!["synth", "--seed", "5", "-o", "sw.csv"],
        vec!["split", "sw.csv", "--seed", "5", "--out-dir", "sp"],
        vec!["train", "sp/train.csv", "--k", "2", "--epochs", "20", "--seed", "5", "--trace", "trace.csv", "-o", "m.json"],
        vec!["train", "sp/train.csv", "--learner", "nca", "--epochs", "10", "--seed", "5", "-o", "nca.json"],
        vec!["train", wine_csv, "--pca", "0.99", "--epochs", "10", "--seed", "5", "-o", "wine.json"],
        vec![
            "eval", "sp/test.csv", "--model", "m.json", "--train", "sp/train.csv", "--baseline", "euclidean",
            "--report", "eval.csv", "--predictions", "pred.csv",
        ],
        vec!["eval", wine_csv, "--model", "wine.json", "--cv", "5", "--seed", "5", "--baseline", "euclidean", "--report", "cv.csv"],
        vec![
            "retrieve", "sp/test.csv", "--model", "m.json", "--reference", "sp/train.csv", "--top", "5",
            "--neighbors", "nb.csv", "--curve", "curve.csv",
        ],
        vec!["embed", "sp/test.csv", "--model", "nca.json", "-o", "embed.csv"],
        vec!["sweep", "sp/train.csv", "--grid-k", "1,2", "--epochs", "5", "--seed", "5", "--out-dir", "sweep"],
    ];
    let runs: Vec<tempfile::TempDir> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    for dir in &runs {
        for args in &script {
            run_cli(dir.path(), args)?;
        }
    }
    let mut files = Vec::new();
    let mut stack = vec![PathBuf::new()];
    while let Some(rel) = stack.pop() {
        for entry in std::fs::read_dir(runs[0].path().join(&rel)).unwrap() {
            let entry = entry.unwrap();
            let rel = rel.join(entry.file_name());
            if entry.file_type().unwrap().is_dir() {
                stack.push(rel);
            } else {
                files.push(rel);
            }
        }
    }
    files.sort();
    let differing: Vec<String> = files
        .iter()
        .filter(|f| std::fs::read(runs[0].path().join(f)).ok() != std::fs::read(runs[1].path().join(f)).ok())
        .map(|f| f.display().to_string())
        .collect();
    check(
        differing.is_empty(),
        format!("{} commands, {} output files compared, differing: {differing:?}", script.len(), files.len()),
    )
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let slow = args.iter().any(|a| a == "--ignored" || a == "--include-ignored");
    let listing = args.iter().any(|a| a == "--list");
    let criteria: [(&str, fn() -> Outcome, bool); 8] = [
        ("1 gradient correctness", gradient_correctness, false),
        ("2 oracle equivalence", oracle_equivalence, false),
        ("3 posterior argmax equals prediction", posterior_consistency, false),
        ("4 sandwich learned beats euclidean", sandwich_claim, false),
        ("5 wine nested cross-validation", wine_quantitative, false),
        ("6 isolet ordering", isolet_ordering, true),
        ("7 retrieval ordering", retrieval_ordering, false),
        ("8 cli determinism", cli_determinism, false),
    ];
    if listing {
        for (name, _, _) in &criteria {
            println!("{name}: test");
        }
        return;
    }
    let mut failed = 0;
    for (name, run, is_slow) in criteria {
        if is_slow && !slow {
            println!("SKIP criterion {name}: slow suite, pass --ignored with CCML_ISOLET_DIR set");
            continue;
        }
        let start = Instant::now();
        match run() {
            Ok(detail) => println!("PASS criterion {name}: {detail} [{:.1?}]", start.elapsed()),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {name}: {detail} [{:.1?}]", start.elapsed());
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
