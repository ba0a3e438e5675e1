use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Parser;
use log::info;

use molbridge_core::analysis::{
    depth_probe, pair_path_statistic, stratify_by_distance, top_edges, PathStatistic,
};
use molbridge_core::checkpoint::Checkpoint;
use molbridge_core::metrics::{
    accumulate, macro_metrics, parse_label_subset, stratified_metrics, Metrics,
};
use molbridge_core::model::{predict, refine, ModelParams};
use molbridge_core::smiles::{featurize, parse_smiles, FeaturedGraph, Molecule};
use molbridge_core::training::{
    argmax, load_dataset, make_splits, predict_samples, train, Dataset, SelectionMetric, SplitMode,
    TrainConfig, FOLDS,
};

use crate::config::ConfigFile;
use crate::manifest::{run_dir, DatasetDigest, RunManifest, MANIFEST_FILE};
use crate::{
    AnalyzeCommand, Cli, Command, DistanceArgs, EdgesArgs, EvalArgs, ModeArg, OversmoothArgs,
    PredictArgs, ReplayArgs, SelectArg, SplitArg, TrainArgs, UsageError,
};

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Analyze(AnalyzeCommand::Oversmooth(a)) => cmd_oversmooth(a),
        Command::Analyze(AnalyzeCommand::Distance(a)) => cmd_distance(a),
        Command::Analyze(AnalyzeCommand::Edges(a)) => cmd_edges(a),
        Command::Replay(a) => cmd_replay(a),
    }
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn mode_of(arg: ModeArg) -> SplitMode {
    match arg {
        ModeArg::Transductive => SplitMode::Transductive,
        ModeArg::S1 => SplitMode::InductiveS1,
        ModeArg::S2 => SplitMode::InductiveS2,
    }
}

fn absolute(path: &Path) -> String {
    std::path::absolute(path)
        .unwrap_or_else(|_| path.to_path_buf())
        .display()
        .to_string()
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        return Err(usage(format!("{what} {} does not exist", path.display())));
    }
    Ok(())
}

fn parse_pair(first: &str, second: &str) -> Result<(Molecule, Molecule)> {
    let parse = |which: &str, s: &str| {
        parse_smiles(s).map_err(|e| usage(format!("cannot parse {which} {s:?}: {e}")))
    };
    Ok((parse("smiles_1", first)?, parse("smiles_2", second)?))
}

fn write_json(
    dir: &Path,
    name: &str,
    value: &impl serde::Serialize,
    outputs: &mut Vec<String>,
) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    write_text(dir, name, &(text + "\n"), outputs)
}

fn write_text(dir: &Path, name: &str, text: &str, outputs: &mut Vec<String>) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    outputs.push(name.to_string());
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    require_file(path, "checkpoint")?;
    Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

/// Loads `path` and widens its class count to the checkpoint's.
fn load_for(path: &Path, params: &ModelParams) -> Result<Dataset> {
    require_file(path, "dataset")?;
    let ds = load_dataset(path).with_context(|| format!("loading {}", path.display()))?;
    if ds.classes > params.config.classes {
        bail!(
            "dataset has labels up to {} but the checkpoint predicts {} classes",
            ds.classes - 1,
            params.config.classes
        );
    }
    Ok(ds.with_classes(params.config.classes)?)
}

/// Split settings from flags, falling back to those the checkpoint was trained
/// with.
fn split_settings(
    ckpt: &Checkpoint,
    mode: Option<ModeArg>,
    fold: Option<usize>,
    seed: Option<u64>,
) -> Result<(SplitMode, usize, u64)> {
    let recorded = |key: &str| ckpt.config.get(key).cloned();
    let mode = match mode {
        Some(m) => mode_of(m),
        None => recorded("split.mode")
            .map(|m| m.parse::<SplitMode>().map_err(anyhow::Error::msg))
            .transpose()?
            .unwrap_or(SplitMode::Transductive),
    };
    let fold = match fold {
        Some(f) => f,
        None => recorded("split.fold")
            .map(|f| f.parse())
            .transpose()?
            .unwrap_or(0),
    };
    let seed = match seed {
        Some(s) => s,
        None => recorded("split.seed")
            .map(|s| s.parse())
            .transpose()?
            .unwrap_or(42),
    };
    Ok((mode, fold, seed))
}

fn split_indices(
    ds: &Dataset,
    split: SplitArg,
    mode: SplitMode,
    fold: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    if split == SplitArg::All {
        return Ok((0..ds.len()).collect());
    }
    let plan = make_splits(ds, mode, fold, seed)?;
    Ok(match split {
        SplitArg::Train => plan.train,
        SplitArg::Val => plan.val,
        SplitArg::Test => plan.test,
        SplitArg::All => unreachable!(),
    })
}

fn split_name(split: SplitArg) -> &'static str {
    match split {
        SplitArg::Train => "train",
        SplitArg::Val => "val",
        SplitArg::Test => "test",
        SplitArg::All => "all",
    }
}

/// Flags over config file over defaults.
fn resolve_train(args: &TrainArgs, file: &ConfigFile) -> Result<(SplitMode, usize, TrainConfig)> {
    let defaults = TrainConfig::default();
    let mode_text = file.resolve(
        args.mode.map(|m| mode_of(m).to_string()),
        "mode",
        "transductive".to_string(),
    )?;
    let mode: SplitMode = mode_text.parse().map_err(anyhow::Error::msg)?;
    let fold = file.resolve(args.fold, "fold", 0usize)?;
    if fold >= FOLDS {
        bail!("fold must be below {FOLDS}, got {fold}");
    }
    let dim = file.resolve(args.dim, "dim", defaults.dim)?;
    let select = match args.select {
        Some(SelectArg::Accuracy) => Some(SelectionMetric::Accuracy),
        Some(SelectArg::MacroF1) => Some(SelectionMetric::MacroF1),
        None => None,
    };
    let config = TrainConfig {
        batch_size: file.resolve(args.batch, "batch", defaults.batch_size)?,
        lr: file.resolve(args.lr, "lr", defaults.lr)?,
        seed: file.resolve(args.seed, "seed", defaults.seed)?,
        layers: file.resolve(args.layers, "layers", defaults.layers)?,
        heads: file.resolve(args.heads, "heads", defaults.heads)?,
        dim,
        hidden: file.resolve(args.hidden, "hidden", 2 * dim)?,
        max_epochs: file.resolve(args.epochs, "epochs", defaults.max_epochs)?,
        weight_decay: file.resolve(args.weight_decay, "weight_decay", defaults.weight_decay)?,
        selection: file.resolve(select, "select", defaults.selection)?,
    };
    Ok((mode, fold, config))
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    require_file(&args.data, "dataset")?;
    let file = match &args.config {
        Some(p) => ConfigFile::load(p).map_err(|e| usage(format!("{e:#}")))?,
        None => ConfigFile::default(),
    };
    let (mode, fold, config) = resolve_train(&args, &file).map_err(|e| usage(format!("{e:#}")))?;
    config.validate().map_err(|e| usage(e.to_string()))?;

    let dir = run_dir(args.out.as_deref(), "train")?;
    let canonical = vec![
        "train".to_string(),
        "--data".into(),
        absolute(&args.data),
        "--mode".into(),
        match mode {
            SplitMode::Transductive => "transductive",
            SplitMode::InductiveS1 => "s1",
            SplitMode::InductiveS2 => "s2",
        }
        .into(),
        "--fold".into(),
        fold.to_string(),
        "--seed".into(),
        config.seed.to_string(),
        "--epochs".into(),
        config.max_epochs.to_string(),
        "--batch".into(),
        config.batch_size.to_string(),
        "--lr".into(),
        config.lr.to_string(),
        "--dim".into(),
        config.dim.to_string(),
        "--hidden".into(),
        config.hidden.to_string(),
        "--layers".into(),
        config.layers.to_string(),
        "--heads".into(),
        config.heads.to_string(),
        "--weight-decay".into(),
        config.weight_decay.to_string(),
        "--select".into(),
        match config.selection {
            SelectionMetric::Accuracy => "accuracy",
            SelectionMetric::MacroF1 => "macro-f1",
        }
        .into(),
    ];
    let mut manifest = RunManifest::start("train", canonical);
    manifest.datasets.push(DatasetDigest::of(&args.data)?);
    manifest.seed = Some(config.seed);

    let ds =
        load_dataset(&args.data).with_context(|| format!("loading {}", args.data.display()))?;
    info!(
        "{} samples, {} classes, {} quarantined",
        ds.len(),
        ds.classes,
        ds.quarantined.len()
    );
    let plan = make_splits(&ds, mode, fold, config.seed)?;
    let mut outcome = train(&ds, &plan, &config)?;

    let mut block = config.to_config_block();
    block.insert("split.mode".into(), mode.to_string());
    block.insert("split.fold".into(), fold.to_string());
    block.insert("split.seed".into(), config.seed.to_string());
    block.insert("data.sha256".into(), manifest.datasets[0].sha256.clone());
    let checkpoint = Checkpoint::new(outcome.best.clone(), block);
    manifest.config = checkpoint.config.clone();

    let mut outputs = Vec::new();
    checkpoint.save(&dir.join("best.ckpt"))?;
    outputs.push("best.ckpt".to_string());
    outcome.record.checkpoint = Some("best.ckpt".into());
    let mut jsonl = Vec::new();
    outcome.record.write_jsonl(&mut jsonl)?;
    write_text(&dir, "run.jsonl", &String::from_utf8(jsonl)?, &mut outputs)?;
    write_json(&dir, "split.json", &plan, &mut outputs)?;
    if !ds.quarantined.is_empty() {
        write_json(&dir, "quarantined.json", &ds.quarantined, &mut outputs)?;
    }

    let best = &outcome.record.epochs[outcome.record.best_epoch];
    println!("run directory: {}", dir.display());
    println!(
        "best epoch {} ({} {} = {:.4})",
        outcome.record.best_epoch + 1,
        best.selection_set,
        config.selection,
        config.selection.of(&best.val)
    );
    if !plan.test.is_empty() {
        let test = metrics_for(&ds, &plan.test, &outcome.best)?;
        print!("{}", prefixed("test_", &test));
        write_json(&dir, "test_metrics.json", &test, &mut outputs)?;
    }
    manifest.outputs = outputs;
    manifest.write(&dir)?;
    Ok(())
}

fn prefixed(prefix: &str, m: &Metrics) -> String {
    m.to_key_values()
        .lines()
        .map(|l| format!("{prefix}{l}\n"))
        .collect()
}

fn metrics_for(ds: &Dataset, indices: &[usize], params: &ModelParams) -> Result<Metrics> {
    let (preds, labels) = predictions(ds, indices, params)?;
    Ok(macro_metrics(&accumulate(
        &preds,
        &labels,
        params.config.classes,
    )?)?)
}

fn predictions(
    ds: &Dataset,
    indices: &[usize],
    params: &ModelParams,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let probs = predict_samples(ds, indices, params)?;
    let preds = probs.iter().map(|p| argmax(p)).collect();
    let labels = indices.iter().map(|&i| ds.label(i)).collect();
    Ok((preds, labels))
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let subset = args
        .labels
        .as_deref()
        .map(|text| parse_label_subset(text).map_err(|e| usage(format!("--labels: {e}"))))
        .transpose()?;
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let params = &ckpt.params;
    let ds = load_for(&args.data, params)?;
    let (mode, fold, seed) = split_settings(&ckpt, args.mode, args.fold, args.seed)?;
    let indices = split_indices(&ds, args.split, mode, fold, seed)?;
    if indices.is_empty() {
        bail!("the {} split is empty", split_name(args.split));
    }

    let dir = run_dir(args.out.as_deref(), "eval")?;
    let mut canonical = vec![
        "eval".to_string(),
        "--checkpoint".into(),
        absolute(&args.checkpoint),
        "--data".into(),
        absolute(&args.data),
        "--split".into(),
        split_name(args.split).into(),
        "--mode".into(),
        match mode {
            SplitMode::Transductive => "transductive",
            SplitMode::InductiveS1 => "s1",
            SplitMode::InductiveS2 => "s2",
        }
        .into(),
        "--fold".into(),
        fold.to_string(),
        "--seed".into(),
        seed.to_string(),
    ];
    if let Some(l) = &args.labels {
        canonical.extend(["--labels".to_string(), l.clone()]);
    }
    let mut manifest = RunManifest::start("eval", canonical);
    manifest.datasets.push(DatasetDigest::of(&args.data)?);
    manifest.seed = Some(seed);
    manifest.config = ckpt.config.clone();

    let (preds, labels) = predictions(&ds, &indices, params)?;
    let classes = params.config.classes;
    let metrics = match &subset {
        Some(s) => stratified_metrics(&preds, &labels, classes, s)?,
        None => macro_metrics(&accumulate(&preds, &labels, classes)?)?,
    };
    let mut outputs = Vec::new();
    write_text(&dir, "metrics.txt", &metrics.to_key_values(), &mut outputs)?;
    write_json(&dir, "metrics.json", &metrics, &mut outputs)?;
    print!("{}", metrics.to_key_values());
    manifest.outputs = outputs;
    manifest.write(&dir)?;
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> Result<()> {
    if args.top_k == Some(0) {
        return Err(usage("--top-k must be at least 1"));
    }
    let (m1, m2) = parse_pair(&args.smiles_1, &args.smiles_2)?;
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let probs = predict(&featurize(&m1), &featurize(&m2), &ckpt.params)?;

    let dir = run_dir(args.out.as_deref(), "predict")?;
    let mut canonical = vec![
        "predict".to_string(),
        "--checkpoint".into(),
        absolute(&args.checkpoint),
        args.smiles_1.clone(),
        args.smiles_2.clone(),
    ];
    if let Some(k) = args.top_k {
        canonical.extend(["--top-k".to_string(), k.to_string()]);
    }
    let mut manifest = RunManifest::start("predict", canonical);
    manifest.config = ckpt.config.clone();

    let mut ranked: Vec<(usize, f64)> = probs.iter().copied().enumerate().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(args.top_k.unwrap_or(ranked.len()));
    let mut text = String::from("class\tprobability\n");
    for (c, p) in &ranked {
        text.push_str(&format!("{c}\t{p:.12}\n"));
    }
    print!("{text}");
    let mut outputs = Vec::new();
    write_text(&dir, "prediction.tsv", &text, &mut outputs)?;
    write_json(&dir, "probabilities.json", &probs, &mut outputs)?;
    manifest.outputs = outputs;
    manifest.write(&dir)?;
    Ok(())
}

fn cmd_oversmooth(args: OversmoothArgs) -> Result<()> {
    if args.depth < 2 || args.trials == 0 {
        return Err(usage("--depth must be at least 2 and --trials at least 1"));
    }
    let dir = run_dir(args.out.as_deref(), "oversmooth")?;
    let canonical = vec![
        "analyze".to_string(),
        "oversmooth".into(),
        "--seed".into(),
        args.seed.to_string(),
        "--depth".into(),
        args.depth.to_string(),
        "--trials".into(),
        args.trials.to_string(),
    ];
    let mut manifest = RunManifest::start("analyze oversmooth", canonical);
    manifest.seed = Some(args.seed);

    let report = depth_probe(args.seed, args.depth, args.trials)?;
    let mut outputs = Vec::new();
    write_text(&dir, "depth.tsv", &report.to_tsv(), &mut outputs)?;
    write_json(&dir, "trials.json", &report.per_trial, &mut outputs)?;
    print!("{}", report.to_tsv());
    println!(
        "plain stack more similar than gformer at depth {}: {}/{} trials",
        args.depth,
        report.plain_wins_at(args.depth),
        args.trials
    );
    manifest.outputs = outputs;
    manifest.write(&dir)?;
    Ok(())
}

fn cmd_distance(args: DistanceArgs) -> Result<()> {
    if args.quantiles == 0 {
        return Err(usage("--quantiles must be at least 1"));
    }
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let params = &ckpt.params;
    let ds = load_for(&args.data, params)?;
    let (mode, fold, seed) = split_settings(&ckpt, args.mode, args.fold, args.seed)?;
    let indices = split_indices(&ds, args.split, mode, fold, seed)?;
    if indices.is_empty() {
        bail!("the {} split is empty", split_name(args.split));
    }

    let dir = run_dir(args.out.as_deref(), "distance")?;
    let mut canonical = vec![
        "analyze".to_string(),
        "distance".into(),
        "--checkpoint".into(),
        absolute(&args.checkpoint),
        "--data".into(),
        absolute(&args.data),
        "--split".into(),
        split_name(args.split).into(),
        "--mode".into(),
        match mode {
            SplitMode::Transductive => "transductive",
            SplitMode::InductiveS1 => "s1",
            SplitMode::InductiveS2 => "s2",
        }
        .into(),
        "--fold".into(),
        fold.to_string(),
        "--seed".into(),
        seed.to_string(),
        "--quantiles".into(),
        args.quantiles.to_string(),
    ];
    if args.first_drug {
        canonical.push("--first-drug".into());
    }
    let mut manifest = RunManifest::start("analyze distance", canonical);
    manifest.datasets.push(DatasetDigest::of(&args.data)?);
    manifest.seed = Some(seed);
    manifest.config = ckpt.config.clone();

    let which = if args.first_drug {
        PathStatistic::FirstDrug
    } else {
        PathStatistic::PairMean
    };
    let stats: Vec<f64> = indices
        .iter()
        .map(|&i| {
            let (a, b) = ds.pairs[i];
            pair_path_statistic(&ds.drugs[a].molecule, &ds.drugs[b].molecule, which)
        })
        .collect();
    let (preds, labels) = predictions(&ds, &indices, params)?;
    let strata = stratify_by_distance(
        &stats,
        &preds,
        &labels,
        params.config.classes,
        args.quantiles,
    )?;
    let mut outputs = Vec::new();
    write_text(&dir, "strata.tsv", &strata.to_tsv(), &mut outputs)?;
    write_json(&dir, "strata.json", &strata, &mut outputs)?;
    print!("{}", strata.to_tsv());
    manifest.outputs = outputs;
    manifest.write(&dir)?;
    Ok(())
}

fn atom_label(mol: &Molecule, i: usize) -> String {
    let atom = &mol.atoms()[i];
    let symbol = if atom.aromatic {
        atom.element.to_lowercase()
    } else {
        atom.element.to_string()
    };
    format!("{symbol}{i}")
}

fn cmd_edges(args: EdgesArgs) -> Result<()> {
    let (m1, m2) = parse_pair(&args.smiles_1, &args.smiles_2)?;
    if args.k == 0 {
        return Err(usage("-k must be at least 1"));
    }
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let (g1, g2): (FeaturedGraph, FeaturedGraph) = (featurize(&m1), featurize(&m2));
    let refined = refine(&g1, &g2, &ckpt.params)?;
    let edges = top_edges(&refined.reconstructed, args.k, refined.boundary)
        .map_err(|e| usage(e.to_string()))?;

    let dir = run_dir(args.out.as_deref(), "edges")?;
    let canonical = vec![
        "analyze".to_string(),
        "edges".into(),
        "--checkpoint".into(),
        absolute(&args.checkpoint),
        args.smiles_1.clone(),
        args.smiles_2.clone(),
        "-k".into(),
        args.k.to_string(),
    ];
    let mut manifest = RunManifest::start("analyze edges", canonical);
    manifest.config = ckpt.config.clone();

    let mut text = String::from("rank\tatom_1\tatom_2\tweight\n");
    for (r, e) in edges.iter().enumerate() {
        text.push_str(&format!(
            "{}\t{}\t{}\t{:.8}\n",
            r + 1,
            atom_label(&m1, e.p),
            atom_label(&m2, e.q - refined.boundary),
            e.weight
        ));
    }
    print!("{text}");
    let mut outputs = Vec::new();
    write_text(&dir, "edges.tsv", &text, &mut outputs)?;
    let mut summary = BTreeMap::new();
    summary.insert("alpha", refined.alpha);
    write_json(&dir, "refinement.json", &summary, &mut outputs)?;
    manifest.outputs = outputs;
    manifest.write(&dir)?;
    Ok(())
}

fn cmd_replay(args: ReplayArgs) -> Result<()> {
    let path = if args.manifest.is_dir() {
        args.manifest.join(MANIFEST_FILE)
    } else {
        args.manifest.clone()
    };
    require_file(&path, "manifest")?;
    let manifest = RunManifest::load(&path)?;
    for d in &manifest.datasets {
        let now = DatasetDigest::of(&d.path)?;
        if now.sha256 != d.sha256 {
            bail!(
                "dataset {} changed since the run (sha256 {} != {})",
                d.path.display(),
                now.sha256,
                d.sha256
            );
        }
    }
    let out: PathBuf = run_dir(args.out.as_deref(), "replay")?;
    let argv = std::iter::once("molbridge".to_string())
        .chain(manifest.args.iter().cloned())
        .chain(["--out".to_string(), out.display().to_string()]);
    let cli = Cli::try_parse_from(argv)
        .map_err(|e| usage(format!("manifest arguments no longer parse: {e}")))?;
    if matches!(cli.command, Command::Replay(_)) {
        return Err(usage("a replay manifest cannot replay itself"));
    }
    info!("replaying {} into {}", manifest.command, out.display());
    run(cli.command)
}
