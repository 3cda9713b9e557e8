use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ccml_core::dataset::{self, CsvOptions, LabeledDataset, SandwichConfig, Split, SplitSpec};
use ccml_core::pipeline::{self, FittedModel, RuleErrors};
use ccml_core::{
    classify, eval, knn, CcknnMode, CcknnOptions, Embedding, GradientMode, InitKind, PcaMode, PipelineConfig,
    Priors, Variant,
};
use log::{info, warn};
use rayon::prelude::*;

use crate::args::*;
use crate::error::{CliError, Result};
use crate::model::{fingerprint, ModelFile};

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(&a),
        Command::Split(a) => split(&a),
        Command::Train(a) => train(&a),
        Command::Eval(a) => evaluate(&a),
        Command::Retrieve(a) => retrieve(&a),
        Command::Embed(a) => embed(&a),
        Command::Sweep(a) => sweep(&a),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| CliError::io(path, e))
}

fn load(input: &DataArgs, class_names: Option<&[String]>) -> Result<(LabeledDataset, Vec<u8>)> {
    let bytes = read_bytes(&input.data)?;
    let options = CsvOptions {
        label_column: input.label_column.clone(),
        class_names: class_names.map(<[String]>::to_vec),
        ..Default::default()
    };
    let ds = dataset::read_csv(bytes.as_slice(), &options)?;
    Ok((ds, bytes))
}

fn load_with_model(path: &Path, input: &DataArgs, model: &ModelFile) -> Result<LabeledDataset> {
    let args = DataArgs {
        data: path.to_path_buf(),
        label_column: input.label_column.clone(),
    };
    let (ds, _) = load(&args, Some(&model.class_names))?;
    let expected = model.fitted().input_dim();
    if ds.n_features() != expected {
        return Err(CliError::Incompatible(format!(
            "{} has {} features but the model expects {expected}",
            path.display(),
            ds.n_features()
        )));
    }
    Ok(ds)
}

fn names(ds: &LabeledDataset) -> Vec<String> {
    ds.class_names()
        .map(<[String]>::to_vec)
        .unwrap_or_else(|| (0..ds.n_classes()).map(|c| c.to_string()).collect())
}

fn synth(a: &SynthArgs) -> Result<()> {
    let cfg = SandwichConfig {
        n_per_class: a.per_strip * a.strips,
        classes: a.classes,
        strips_per_class: a.strips,
        noise_sd: a.noise,
        horizontal_spacing: a.spacing,
        seed: a.seed,
    };
    let ds = dataset::generate_sandwich(&cfg)?;
    ds.write_csv(create(&a.output)?)?;
    println!("n={} C={} D={}", ds.n_samples(), ds.n_classes(), ds.n_features());
    Ok(())
}

fn split(a: &SplitArgs) -> Result<()> {
    let (ds, _) = load(&a.input, None)?;
    let spec = SplitSpec {
        train_fraction: a.train_fraction,
        stratified: !a.no_stratify,
        seed: a.seed,
        folds: a.folds,
    };
    std::fs::create_dir_all(&a.out_dir).map_err(|e| CliError::io(&a.out_dir, e))?;
    match dataset::split(&ds, &spec)? {
        Split::Holdout(p) => {
            p.train.write_csv(create(&a.out_dir.join("train.csv"))?)?;
            p.test.write_csv(create(&a.out_dir.join("test.csv"))?)?;
            println!("train={} test={}", p.train.n_samples(), p.test.n_samples());
        }
        Split::Folds(parts) => {
            for (f, p) in parts.iter().enumerate() {
                p.train.write_csv(create(&a.out_dir.join(format!("fold{f}_train.csv")))?)?;
                p.test.write_csv(create(&a.out_dir.join(format!("fold{f}_test.csv")))?)?;
                println!("fold {f}: train={} test={}", p.train.n_samples(), p.test.n_samples());
            }
        }
    }
    Ok(())
}

/// Settings recorded in a pipeline configuration, as if given by flag.
fn options_from_pipeline(cfg: &PipelineConfig) -> TrainOptions {
    let t = &cfg.train;
    let (init, init_sd) = match t.init.kind {
        InitKind::IdentityTruncated => (InitArg::Identity, None),
        InitKind::PcaSeeded => (InitArg::Pca, None),
        InitKind::ScaledGaussian { sd } => (InitArg::Gaussian, sd),
    };
    TrainOptions {
        learner: Some(cfg.learner),
        k: Some(t.k),
        variant: Some(match t.variant {
            Variant::AllClasses => VariantArg::AllClasses,
            Variant::CorrectClass => VariantArg::CorrectClass,
        }),
        gradient_mode: Some(match t.gradient_mode {
            GradientMode::Full => GradientArg::Full,
            GradientMode::QueryOnly => GradientArg::QueryOnly,
        }),
        standardize: Some(cfg.preprocess.standardize),
        pca: cfg.preprocess.pca.map(|p| match p {
            PcaMode::FixedComponents(n) => PcaArg::Count(n),
            PcaMode::RetainVariance(f) => PcaArg::Fraction(f),
        }),
        epochs: Some(t.epochs),
        lr: Some(t.learning_rate),
        batch_size: Some(t.batch_size),
        weight_decay: Some(t.weight_decay),
        dim: cfg.output_dim,
        init: Some(init),
        init_sd,
        seed: Some(t.seed),
        log_every: Some(t.log_every),
        decision_k: cfg.decision_k,
        ccknn_mode: Some(match cfg.ccknn.mode {
            CcknnMode::SumSquared => CcknnModeArg::SumSquared,
            CcknnMode::Gaussian => CcknnModeArg::Gaussian,
        }),
        priors: match cfg.ccknn.priors {
            Priors::Uniform => Some(PriorsArg::Uniform),
            Priors::Frequency => Some(PriorsArg::Frequency),
            Priors::Explicit(_) => None,
        },
    }
}

fn resolve_options(flags: &TrainOptions, config: Option<&Path>) -> Result<TrainOptions> {
    let file = match config {
        None => TrainOptions::default(),
        Some(path) if path.extension().is_some_and(|e| e == "json") => {
            options_from_pipeline(ModelFile::load(path)?.config())
        }
        Some(path) => TrainOptions::from_toml_file(path)?,
    };
    Ok(flags.clone().or(file))
}

fn train(a: &TrainArgs) -> Result<()> {
    let cfg = resolve_options(&a.options, a.config.as_deref())?.to_pipeline()?;
    let (ds, bytes) = load(&a.input, None)?;
    let fitted = pipeline::fit(&ds, &cfg)?;
    if let Some(pca) = &fitted.preprocessor.pca {
        println!(
            "pca: {} components retaining {:.4} of variance",
            pca.n_components(),
            pca.variance_fraction_retained
        );
    }
    let model = ModelFile::new(&fitted, cfg, names(&ds), fingerprint(&bytes));
    model.save(&a.output)?;
    if let Some(path) = &a.trace {
        fitted.trace.write_csv(create(path)?)?;
    }
    if let Some(last) = fitted.trace.records.last() {
        println!(
            "step {}: objective {:.6} mean probability {:.6}",
            last.step, last.objective, last.mean_prob
        );
    }
    println!(
        "wrote {} ({} x {} metric)",
        a.output.display(),
        fitted.metric.output_dim(),
        fitted.metric.input_dim()
    );
    Ok(())
}

fn rule_options(model: &ModelFile, rules: &RuleArgs) -> (usize, CcknnOptions) {
    let cfg = model.config();
    let mut opts = cfg.ccknn.clone();
    if let Some(mode) = rules.ccknn_mode {
        opts.mode = match mode {
            CcknnModeArg::SumSquared => CcknnMode::SumSquared,
            CcknnModeArg::Gaussian => CcknnMode::Gaussian,
        };
    }
    if let Some(p) = rules.priors {
        opts.priors = match p {
            PriorsArg::Uniform => Priors::Uniform,
            PriorsArg::Frequency => Priors::Frequency,
        };
    }
    (rules.k.unwrap_or_else(|| cfg.decision_k()), opts)
}

struct ReportRow {
    fold: String,
    metric: &'static str,
    errors: RuleErrors,
}

fn write_report(path: &Path, rows: &[ReportRow]) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| CliError::io(path, e);
    writeln!(w, "fold,metric,rule,error").map_err(io)?;
    for r in rows {
        writeln!(w, "{},{},knn,{}", r.fold, r.metric, r.errors.knn).map_err(io)?;
        writeln!(w, "{},{},ccknn,{}", r.fold, r.metric, r.errors.ccknn).map_err(io)?;
    }
    w.flush().map_err(io)
}

fn evaluate(a: &EvalArgs) -> Result<()> {
    let model = ModelFile::load(&a.model)?;
    let (k, ccknn) = rule_options(&model, &a.rules);
    let data = load_with_model(&a.input.data, &a.input, &model)?;
    let mut rows = Vec::new();
    if let Some(folds) = a.cv {
        let mut cfg = model.config().clone();
        cfg.decision_k = Some(k);
        cfg.ccknn = ccknn;
        let results = pipeline::cross_validate(&data, &cfg, folds, a.seed)?;
        for (f, r) in results.iter().enumerate() {
            rows.push(ReportRow { fold: f.to_string(), metric: "learned", errors: r.learned });
            if a.baseline.is_some() {
                rows.push(ReportRow { fold: f.to_string(), metric: "euclidean", errors: r.euclidean });
            }
        }
        let mut summary = |metric: &'static str, pick: fn(&pipeline::FoldResult) -> RuleErrors| {
            let knn: Vec<f64> = results.iter().map(|r| pick(r).knn).collect();
            let cc: Vec<f64> = results.iter().map(|r| pick(r).ccknn).collect();
            let (km, ks) = pipeline::mean_sd(&knn);
            let (cm, cs) = pipeline::mean_sd(&cc);
            println!("{metric:<9}  knn {km:.4} ± {ks:.4}   ccknn {cm:.4} ± {cs:.4}   ({folds} folds)");
            rows.push(ReportRow { fold: "mean".into(), metric, errors: RuleErrors { knn: km, ccknn: cm } });
            rows.push(ReportRow { fold: "sd".into(), metric, errors: RuleErrors { knn: ks, ccknn: cs } });
        };
        summary("learned", |r| r.learned);
        if a.baseline.is_some() {
            summary("euclidean", |r| r.euclidean);
        }
    } else {
        let train_path = a.train.as_ref().expect("clap requires --train without --cv");
        let reference = load_with_model(train_path, &a.input, &model)?;
        let ref_bytes = read_bytes(train_path)?;
        if fingerprint(&ref_bytes) != model.dataset_fingerprint {
            warn!("{} is not the file the model was trained on", train_path.display());
        }
        let fitted = model.fitted();
        let learned = pipeline::evaluate_rules(&fitted, &reference, &data, k, &ccknn)?;
        println!("learned    knn {:.4}   ccknn {:.4}", learned.knn, learned.ccknn);
        rows.push(ReportRow { fold: "all".into(), metric: "learned", errors: learned });
        if a.baseline.is_some() {
            let base = pipeline::evaluate_rules(&fitted.euclidean_baseline(), &reference, &data, k, &ccknn)?;
            println!("euclidean  knn {:.4}   ccknn {:.4}", base.knn, base.ccknn);
            rows.push(ReportRow { fold: "all".into(), metric: "euclidean", errors: base });
        }
        if let Some(path) = &a.predictions {
            write_predictions(path, &fitted, &reference, &data, k, &ccknn, &model.class_names)?;
        }
    }
    if let Some(path) = &a.report {
        write_report(path, &rows)?;
    }
    Ok(())
}

fn write_predictions(
    path: &Path,
    fitted: &FittedModel,
    reference: &LabeledDataset,
    queries: &LabeledDataset,
    k: usize,
    ccknn: &CcknnOptions,
    class_names: &[String],
) -> Result<()> {
    let zr = fitted.embed(reference.features().view())?;
    let zq = fitted.embed(queries.features().view())?;
    let c = class_names.len();
    let knn_pred = classify::knn_classify(zq.view(), zr.view(), reference.labels(), c, k)?;
    let scores = classify::ccknn_classify(zq.view(), zr.view(), reference.labels(), c, k, ccknn)?;
    let mut w = csv::Writer::from_writer(create(path)?);
    let mut header = vec![
        "query_index".to_string(),
        "label".into(),
        "knn".into(),
        "ccknn".into(),
    ];
    header.extend(class_names.iter().map(|n| format!("score_{n}")));
    w.write_record(&header).map_err(ccml_core::Error::from)?;
    for q in 0..queries.n_samples() {
        let mut rec = vec![
            q.to_string(),
            class_names[queries.labels()[q]].clone(),
            class_names[knn_pred[q]].clone(),
            class_names[scores.predicted[q]].clone(),
        ];
        rec.extend(scores.scores.row(q).iter().map(|s| s.to_string()));
        w.write_record(&rec).map_err(ccml_core::Error::from)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn retrieve(a: &RetrieveArgs) -> Result<()> {
    let model = ModelFile::load(&a.model)?;
    let queries = load_with_model(&a.input.data, &a.input, &model)?;
    let reference = load_with_model(&a.reference, &a.input, &model)?;
    let grid = parse_k_grid(&a.k_grid)?;
    if a.top == 0 {
        return Err(CliError::Usage("--top must be at least 1".into()));
    }
    let fitted = model.fitted();
    let zq = fitted.embed(queries.features().view())?;
    let zr = fitted.embed(reference.features().view())?;
    if let Some(path) = &a.neighbors {
        let nbs = knn::knn_global(zq.view(), zr.view(), a.top, None)?;
        let mut w = csv::Writer::from_writer(create(path)?);
        let mut header = vec!["query_index".to_string(), "query_label".into()];
        for prefix in ["id", "label", "sqdist"] {
            header.extend((1..=a.top).map(|i| format!("{prefix}_{i}")));
        }
        w.write_record(&header).map_err(ccml_core::Error::from)?;
        for (q, list) in nbs.iter().enumerate() {
            let mut rec = vec![q.to_string(), model.class_names[queries.labels()[q]].clone()];
            rec.extend(list.iter().map(|n| n.index.to_string()));
            rec.extend(list.iter().map(|n| model.class_names[reference.labels()[n.index]].clone()));
            rec.extend(list.iter().map(|n| n.sq_dist.to_string()));
            w.write_record(&rec).map_err(ccml_core::Error::from)?;
        }
        w.flush().map_err(|e| CliError::io(path, e))?;
    }
    let curve = eval::retrieval_curve_embedded(
        zq.view(),
        queries.labels(),
        zr.view(),
        reference.labels(),
        &grid,
    )?;
    for (k, v) in &curve.points {
        println!("nDCG@{k}: {v:.4}");
    }
    if let Some(path) = &a.curve {
        curve.write_csv(create(path)?)?;
    }
    Ok(())
}

fn embed(a: &EmbedArgs) -> Result<()> {
    let model = ModelFile::load(&a.model)?;
    let ds = load_with_model(&a.input.data, &a.input, &model)?;
    let z = model.fitted().embed(ds.features().view())?;
    let mut w = csv::Writer::from_writer(create(&a.output)?);
    let mut header: Vec<String> = (0..z.ncols()).map(|j| format!("z{j}")).collect();
    header.push("label".into());
    w.write_record(&header).map_err(ccml_core::Error::from)?;
    for (row, &label) in z.rows().into_iter().zip(ds.labels()) {
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        rec.push(model.class_names[label].clone());
        w.write_record(&rec).map_err(ccml_core::Error::from)?;
    }
    w.flush().map_err(|e| CliError::io(&a.output, e))?;
    println!("wrote {} rows x {} dims", z.nrows(), z.ncols());
    Ok(())
}

fn grid_points(a: &SweepArgs, base: &TrainOptions) -> Vec<TrainOptions> {
    fn axis<T: Copy>(values: &[T]) -> Vec<Option<T>> {
        if values.is_empty() {
            vec![None]
        } else {
            values.iter().copied().map(Some).collect()
        }
    }
    let mut points = Vec::new();
    for k in axis(&a.grid_k) {
        for lr in axis(&a.grid_lr) {
            for wd in axis(&a.grid_weight_decay) {
                for dim in axis(&a.grid_dim) {
                    for batch in axis(&a.grid_batch_size) {
                        let mut o = base.clone();
                        o.k = k.or(o.k);
                        o.lr = lr.or(o.lr);
                        o.weight_decay = wd.or(o.weight_decay);
                        o.dim = dim.or(o.dim);
                        o.batch_size = batch.or(o.batch_size);
                        points.push(o);
                    }
                }
            }
        }
    }
    points
}

fn sweep(a: &SweepArgs) -> Result<()> {
    let base = resolve_options(&a.options, a.config.as_deref())?;
    let (ds, bytes) = load(&a.input, None)?;
    let spec = SplitSpec {
        train_fraction: 1.0 - a.validation_fraction,
        seed: a.split_seed,
        ..Default::default()
    };
    let Split::Holdout(part) = dataset::split(&ds, &spec)? else {
        unreachable!("holdout requested")
    };
    std::fs::create_dir_all(&a.out_dir).map_err(|e| CliError::io(&a.out_dir, e))?;
    let configs: Vec<PipelineConfig> = grid_points(a, &base)
        .iter()
        .map(TrainOptions::to_pipeline)
        .collect::<Result<_>>()?;
    info!("sweeping {} grid points", configs.len());
    let class_names = names(&ds);
    let print = fingerprint(&bytes);
    let outcomes: Vec<Result<(PathBuf, RuleErrors)>> = configs
        .par_iter()
        .enumerate()
        .map(|(i, cfg)| {
            let (fitted, result) = pipeline::fit_and_evaluate(&part.train, &part.test, cfg)?;
            let path = a.out_dir.join(format!("model_{i:03}.json"));
            ModelFile::new(&fitted, cfg.clone(), class_names.clone(), print.clone()).save(&path)?;
            Ok((path, result.learned))
        })
        .collect();
    let summary_path = a.out_dir.join("summary.csv");
    let mut w = create(&summary_path)?;
    let io = |e| CliError::io(&summary_path, e);
    writeln!(w, "index,model,k,learning_rate,weight_decay,dim,batch_size,knn_error,ccknn_error").map_err(io)?;
    let mut best: Option<(usize, f64)> = None;
    for (i, (cfg, outcome)) in configs.iter().zip(outcomes).enumerate() {
        match outcome {
            Ok((path, errors)) => {
                let t = &cfg.train;
                writeln!(
                    w,
                    "{i},{},{},{},{},{},{},{},{}",
                    path.file_name().unwrap().to_string_lossy(),
                    t.k,
                    t.learning_rate,
                    t.weight_decay,
                    cfg.output_dim.map_or("input".to_string(), |d| d.to_string()),
                    t.batch_size,
                    errors.knn,
                    errors.ccknn
                )
                .map_err(io)?;
                if best.is_none_or(|(_, e)| errors.ccknn < e) {
                    best = Some((i, errors.ccknn));
                }
            }
            Err(e) => {
                warn!("grid point {i} failed: {e}");
                writeln!(w, "{i},,{},{},{},,{},,", cfg.train.k, cfg.train.learning_rate, cfg.train.weight_decay, cfg.train.batch_size)
                    .map_err(io)?;
            }
        }
    }
    w.flush().map_err(io)?;
    match best {
        Some((i, e)) => println!("best grid point {i}: validation ccknn error {e:.4}"),
        None => return Err(CliError::Usage("every grid point failed".into())),
    }
    Ok(())
}
