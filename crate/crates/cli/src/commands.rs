use std::collections::BTreeSet;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use advmil::checkpoint::Checkpoint;
use advmil::data::{
    make_cv_splits, normalize_times_from, read_bag, split_fold, write_bag, CohortManifest, FeatureBag, FoldSplit,
    TimeNormalizer,
};
use advmil::eval::{coverage_check, evaluate, occlusion_sweep, write_occlusion_csv, EvalItem, OcclusionPoint};
use advmil::generator::{EncoderKind, NoiseCode};
use advmil::patching::{build_bag, PatchGrid};
use advmil::synth::{generate, SynthSpec, Truth};
use advmil::trainer::{fit, fit_supervised, mask_labels, write_history_csv, FitResult, ModelBundle, Sample};
use advmil::parallel;
use anyhow::{anyhow, Context};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::{plots, BuildArgs, CliError, Encoder, EvalArgs, OccludeArgs, PlotArgs, RunArgs, SemiArgs, SplitName, SynthArgs, TrainArgs};

pub const CHECKPOINT: &str = "checkpoint.json";
pub const SUMMARY: &str = "run.json";
pub const HISTORY: &str = "history.csv";
pub const OCCLUSION: &str = "occlusion.csv";

type CliResult<T = ()> = Result<T, CliError>;

fn usage(e: impl Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn under_root(path: &Path, root: Option<&Path>) -> PathBuf {
    match root {
        Some(r) if path.is_relative() => r.join(path),
        _ => path.to_path_buf(),
    }
}

fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).unwrap_or_default());
}

/// What a training run leaves behind for later evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub fold: usize,
    pub seed: u64,
    /// Time normalizer fitted on the labels the model saw.
    pub t_max: f64,
    pub feature_dim: usize,
    pub best_epoch: Option<usize>,
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub train_ids: Vec<String>,
    pub validation_ids: Vec<String>,
    /// Training patients whose labels were hidden.
    pub masked_ids: Vec<String>,
    pub unlabeled_ids: Vec<String>,
    pub fold_usage: Vec<usize>,
}

pub fn synth(a: &SynthArgs, root: Option<&Path>) -> CliResult {
    let mut spec = match &a.spec {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
            toml::from_str::<SynthSpec>(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?
        }
        None => SynthSpec::default(),
    };
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => {$(
            if let Some(v) = a.$flag {
                spec.$field = v;
            }
        )*};
    }
    set!(n_patients => n_patients, patches => m, feature_dim => c, patches_per_region => s,
         noise_sd => noise_sd, censor_rate => censor_rate, seed => seed);
    spec.validate().map_err(usage)?;

    let out = under_root(&a.out, root);
    let cohort = generate(&spec)?;
    fs::create_dir_all(out.join("bags")).with_context(|| format!("creating {}", out.display()))?;
    let written = parallel::map_range(cohort.bags.len(), |i| {
        let path = out.join(&cohort.manifest.entries[i].bag_path);
        write_bag(&cohort.bags[i], &path).with_context(|| format!("writing {}", path.display()))
    });
    written.into_iter().collect::<anyhow::Result<Vec<()>>>()?;
    cohort.manifest.write_csv(&out.join("manifest.csv"))?;
    fs::write(out.join("truth.json"), cohort.truth.to_json()?)?;
    fs::write(out.join("synth.toml"), toml::to_string_pretty(&spec).map_err(|e| anyhow!(e))?)?;
    let events = cohort.manifest.entries.iter().filter(|e| e.delta == Some(0)).count();
    print_json(&serde_json::json!({
        "out": out,
        "patients": spec.n_patients,
        "event_rate": events as f64 / spec.n_patients as f64,
        "censor_horizon": cohort.truth.censor_horizon,
    }));
    Ok(())
}

pub fn build(a: &BuildArgs) -> CliResult {
    let patient_id = a
        .out
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| usage(format!("cannot take a patient id from {}", a.out.display())))?;
    let mut reader = csv::Reader::from_path(&a.patches).with_context(|| format!("opening {}", a.patches.display()))?;
    let mut coords = Vec::new();
    let mut values = Vec::new();
    let mut width = None;
    for (line, record) in reader.records().enumerate() {
        let record = record.context("reading patch table")?;
        let row = line + 2;
        if record.len() < 3 {
            return Err(anyhow!("row {row}: need row, col and at least one feature").into());
        }
        if *width.get_or_insert(record.len()) != record.len() {
            return Err(anyhow!("row {row}: ragged feature columns").into());
        }
        let int = |k: usize| -> anyhow::Result<i32> {
            record[k].trim().parse().with_context(|| format!("row {row}: bad coordinate {:?}", &record[k]))
        };
        coords.push([int(0)?, int(1)?]);
        for field in record.iter().skip(2) {
            values.push(field.trim().parse::<f32>().with_context(|| format!("row {row}: bad feature {field:?}"))?);
        }
    }
    let c = width.map_or(0, |w| w - 2);
    let features = Array2::from_shape_vec((coords.len(), c), values).map_err(|e| anyhow!(e))?;
    let grid = PatchGrid::new(coords).with_eta(a.eta);
    let bag = build_bag(patient_id, &grid, &features)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_bag(&bag, &a.out)?;
    print_json(&serde_json::json!({
        "patient_id": patient_id,
        "patches": bag.n_valid(),
        "padded": bag.n_patches(),
        "regions": bag.n_regions(),
        "feature_dim": bag.feature_dim(),
    }));
    Ok(())
}

fn load_config(run: &RunArgs, root: Option<&Path>, tweak: impl FnOnce(&mut RunConfig) -> CliResult) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::load(&run.config).map_err(usage)?;
    if let Some(f) = run.fold {
        cfg.fold = f;
    }
    if let Some(s) = run.seed {
        cfg.seed = s;
    }
    if let Some(o) = &run.out {
        cfg.paths.output = o.clone();
    }
    tweak(&mut cfg)?;
    cfg.resolve(root).map_err(usage)?;
    Ok(cfg)
}

fn apply_train_flags(cfg: &mut RunConfig, a: &TrainArgs) -> CliResult {
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(l) = a.lambda_adv {
        cfg.loss.lambda_adv = l;
    }
    if let Some(l) = a.lambda_sl {
        cfg.loss.lambda_sl = l;
    }
    if let Some(k) = a.encoder {
        cfg.generator.encoder.kind = match k {
            Encoder::Attention => EncoderKind::Attention,
            Encoder::Cluster => EncoderKind::Cluster,
            Encoder::Sequence => EncoderKind::Sequence,
        };
    }
    if let Some(code) = &a.noise_code {
        cfg.generator.noise.code = code.parse::<NoiseCode>().map_err(usage)?;
    }
    if let Some(lr) = a.lr {
        cfg.train.lr_g = lr;
        cfg.train.lr_d = lr;
    }
    Ok(())
}

/// Manifest with folds (assigned from the seed when absent) and the split of `cfg.fold`.
fn prepare(cfg: &RunConfig) -> CliResult<(CohortManifest, FoldSplit)> {
    let mut manifest = CohortManifest::read_csv(&cfg.paths.manifest)
        .with_context(|| format!("reading manifest {}", cfg.paths.manifest.display()))?;
    if let Some(dir) = &cfg.paths.bag_dir {
        for e in &mut manifest.entries {
            if let Some(name) = e.bag_path.file_name() {
                e.bag_path = dir.join(name);
            }
        }
    }
    if manifest.entries.iter().any(|e| e.fold.is_none()) {
        manifest = make_cv_splits(manifest, cfg.seed)?;
    }
    let split = split_fold(&manifest, cfg.fold, cfg.seed)?;
    Ok((manifest, split))
}

fn load_bags(manifest: &CohortManifest, idx: &[usize]) -> CliResult<Vec<FeatureBag>> {
    let bags = parallel::map(idx, |&i| {
        let e = &manifest.entries[i];
        let mut bag = read_bag(&e.bag_path).with_context(|| format!("reading bag {}", e.bag_path.display()))?;
        bag.patient_id = e.patient_id.clone();
        Ok::<_, anyhow::Error>(bag)
    });
    Ok(bags.into_iter().collect::<anyhow::Result<Vec<_>>>()?)
}

fn ids(manifest: &CohortManifest, idx: &[usize]) -> Vec<String> {
    idx.iter().map(|&i| manifest.entries[i].patient_id.clone()).collect()
}

struct Plan {
    labeled: Vec<usize>,
    masked: Vec<usize>,
    unlabeled: Vec<usize>,
    validation: Vec<usize>,
    semi: bool,
}

fn feature_dim(bags: &[&FeatureBag]) -> CliResult<usize> {
    let c = bags.first().map(|b| b.feature_dim()).ok_or_else(|| anyhow!("no training bags"))?;
    if let Some(b) = bags.iter().find(|b| b.feature_dim() != c) {
        return Err(anyhow!("bag {} has feature dimension {}, expected {c}", b.patient_id, b.feature_dim()).into());
    }
    Ok(c)
}

/// Fails when a hidden label reached either loss.
fn check_no_leak(result: &FitResult, masked: &BTreeSet<&str>) -> anyhow::Result<()> {
    for stats in &result.epochs {
        for w in &stats.windows {
            if let Some(id) = w.sl_ids.iter().chain(&w.real_pair_ids).find(|id| masked.contains(id.as_str())) {
                return Err(anyhow!("masked label of {id} was used in epoch {}", stats.epoch));
            }
        }
    }
    Ok(())
}

fn fit_and_save(cfg: &RunConfig, manifest: CohortManifest, plan: Plan) -> CliResult {
    let manifest = normalize_times_from(manifest, &plan.labeled)?;
    let labeled_bags = load_bags(&manifest, &plan.labeled)?;
    let unlabeled_bags = load_bags(&manifest, &plan.unlabeled)?;
    let validation_bags = load_bags(&manifest, &plan.validation)?;
    let all: Vec<&FeatureBag> = labeled_bags.iter().chain(&unlabeled_bags).chain(&validation_bags).collect();
    let c = feature_dim(&all)?;

    let labeled_samples = |bags: &[FeatureBag], idx: &[usize]| -> CliResult<Vec<Sample>> {
        bags.iter()
            .zip(idx)
            .map(|(bag, &i)| {
                let record = manifest.entries[i].record().ok_or_else(|| anyhow!("{} has no label", bag.patient_id))?;
                Ok(Sample::labeled(bag, record)?)
            })
            .collect()
    };
    let labeled = labeled_samples(&labeled_bags, &plan.labeled)?;
    let validation = labeled_samples(&validation_bags, &plan.validation)?;
    let unlabeled = unlabeled_bags.iter().map(Sample::unlabeled).collect::<advmil::Result<Vec<_>>>()?;

    let bundle = ModelBundle::new(cfg.generator_config(c), cfg.discriminator_config(c), cfg.seed)?;
    let result = if plan.semi {
        fit(bundle, &labeled, &unlabeled, &validation, &cfg.train, cfg.loss)?
    } else {
        fit_supervised(bundle, &labeled, &validation, &cfg.train, cfg.loss)?
    };
    let masked_ids = ids(&manifest, &plan.masked);
    let unlabeled_ids = ids(&manifest, &plan.unlabeled);
    let hidden: BTreeSet<&str> = unlabeled_ids.iter().map(String::as_str).collect();
    check_no_leak(&result, &hidden)?;

    let out = &cfg.paths.output;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    cfg.write_snapshot(out)?;
    Checkpoint::from_bundle(&result.bundle, result.best_epoch).save(&out.join(CHECKPOINT))?;
    write_history_csv(&result.history, &out.join(HISTORY))?;
    let summary = RunSummary {
        fold: cfg.fold,
        seed: cfg.seed,
        t_max: manifest.t_max.unwrap_or(0.0),
        feature_dim: c,
        best_epoch: result.best_epoch,
        epochs_run: result.history.len(),
        stopped_early: result.stopped_early,
        train_ids: ids(&manifest, &plan.labeled),
        validation_ids: ids(&manifest, &plan.validation),
        masked_ids,
        unlabeled_ids,
        fold_usage: result.fold_usage.clone(),
    };
    fs::write(out.join(SUMMARY), serde_json::to_string_pretty(&summary).map_err(|e| anyhow!(e))?)?;
    let last = result.history.last();
    print_json(&serde_json::json!({
        "out": out,
        "fold": cfg.fold,
        "epochs_run": summary.epochs_run,
        "best_epoch": summary.best_epoch,
        "stopped_early": summary.stopped_early,
        "val_sl": last.map(|r| r.val_sl),
        "labeled": summary.train_ids.len(),
        "unlabeled": summary.unlabeled_ids.len(),
    }));
    Ok(())
}

pub fn train(a: &TrainArgs, root: Option<&Path>) -> CliResult {
    let cfg = load_config(&a.run, root, |cfg| apply_train_flags(cfg, a))?;
    let (manifest, split) = prepare(&cfg)?;
    let plan = Plan {
        labeled: split.train,
        masked: Vec::new(),
        unlabeled: Vec::new(),
        validation: split.validation,
        semi: false,
    };
    fit_and_save(&cfg, manifest, plan)
}

pub fn train_semi(a: &SemiArgs, root: Option<&Path>) -> CliResult {
    if !(a.labeled_ratio > 0.0 && a.labeled_ratio <= 1.0) {
        return Err(usage(format!("--labeled-ratio {} outside (0, 1]", a.labeled_ratio)));
    }
    let cfg = load_config(&a.train.run, root, |cfg| {
        apply_train_flags(cfg, &a.train)?;
        if let Some(k) = a.k {
            cfg.train.k_folds_unlabeled = k;
        }
        Ok(())
    })?;
    let (manifest, split) = prepare(&cfg)?;
    let (keep, hide) = mask_labels(split.train.len(), a.labeled_ratio, cfg.seed)?;
    let labeled: Vec<usize> = keep.iter().map(|&p| split.train[p]).collect();
    let masked: Vec<usize> = hide.iter().map(|&p| split.train[p]).collect();
    let mut unlabeled = masked.clone();
    unlabeled.extend(&split.unlabeled);
    let plan = Plan {
        labeled,
        masked,
        unlabeled,
        validation: split.validation,
        semi: true,
    };
    fit_and_save(&cfg, manifest, plan)
}

/// A trained run reloaded for evaluation.
struct Loaded {
    cfg: RunConfig,
    checkpoint_path: PathBuf,
    bundle: ModelBundle,
    normalizer: TimeNormalizer,
    manifest: CohortManifest,
    idx: Vec<usize>,
    bags: Vec<FeatureBag>,
}

impl Loaded {
    fn items(&self) -> Vec<EvalItem<'_>> {
        self.bags
            .iter()
            .zip(&self.idx)
            .map(|(bag, &i)| {
                let e = &self.manifest.entries[i];
                let (t_raw, delta) = (e.t_raw.unwrap_or_default(), e.delta.unwrap_or_default());
                EvalItem {
                    bag,
                    record: self.normalizer.record(t_raw, delta),
                }
            })
            .collect()
    }
}

fn load_run(a: &EvalArgs, root: Option<&Path>) -> CliResult<Loaded> {
    let cfg = load_config(&a.run, root, |cfg| {
        if let Some(d) = a.draws {
            cfg.eval.n_draws = d;
        }
        Ok(())
    })?;
    let checkpoint_path = a.checkpoint.clone().unwrap_or_else(|| cfg.paths.output.join(CHECKPOINT));
    let summary_path = checkpoint_path.with_file_name(SUMMARY);
    let summary: RunSummary = serde_json::from_str(
        &fs::read_to_string(&summary_path).with_context(|| format!("reading {}", summary_path.display()))?,
    )
    .with_context(|| format!("parsing {}", summary_path.display()))?;
    if summary.fold != cfg.fold {
        return Err(usage(format!("checkpoint was trained on fold {}, config asks for fold {}", summary.fold, cfg.fold)));
    }
    let bundle = Checkpoint::load(&checkpoint_path)
        .with_context(|| format!("loading {}", checkpoint_path.display()))?
        .to_bundle()?;
    let (manifest, split) = prepare(&cfg)?;
    let idx = match a.split {
        SplitName::Test => split.test,
        SplitName::Validation => split.validation,
    };
    let bags = load_bags(&manifest, &idx)?;
    if let Some(b) = bags.iter().find(|b| b.feature_dim() != summary.feature_dim) {
        return Err(anyhow!("bag {} has feature dimension {}, model expects {}", b.patient_id, b.feature_dim(), summary.feature_dim).into());
    }
    Ok(Loaded {
        cfg,
        checkpoint_path,
        bundle,
        normalizer: TimeNormalizer { t_max: summary.t_max },
        manifest,
        idx,
        bags,
    })
}

fn report_name(split: SplitName, stem: &str) -> String {
    match split {
        SplitName::Test => format!("{stem}.json"),
        SplitName::Validation => format!("{stem}_validation.json"),
    }
}

pub fn eval(a: &EvalArgs, root: Option<&Path>) -> CliResult {
    let run = load_run(a, root)?;
    let (cfg, gen) = (&run.cfg, &run.bundle.generator);
    let items = run.items();
    let mut report = evaluate(gen, &items, cfg.eval.n_draws, cfg.seed)?;
    report.metadata.checkpoint = Some(run.checkpoint_path.display().to_string());
    if let Some(path) = &cfg.paths.truth {
        let truth = Truth::from_json(&fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?)?;
        let bags: Vec<&FeatureBag> = run.bags.iter().collect();
        let [lo, hi] = cfg.eval.coverage_probs;
        report.coverage = Some(coverage_check(
            gen,
            &bags,
            Some(&truth),
            &run.normalizer,
            (lo, hi),
            cfg.eval.n_draws,
            cfg.seed,
        )?);
    }
    fs::create_dir_all(&cfg.paths.output)?;
    let path = cfg.paths.output.join(report_name(a.split, "report"));
    report.write_json(&path)?;
    print_json(&serde_json::json!({
        "report": path,
        "patients": report.patients.len(),
        "c_index": report.c_index,
        "mae": report.mae,
        "coverage": report.coverage,
    }));
    Ok(())
}

pub fn occlude(a: &OccludeArgs, root: Option<&Path>) -> CliResult {
    let run = load_run(&a.eval, root)?;
    let cfg = &run.cfg;
    let ratios = a.ratios.clone().unwrap_or_else(|| cfg.eval.mask_ratios.clone());
    if ratios.is_empty() || ratios.iter().any(|r| !(0.0..1.0).contains(r)) {
        return Err(usage("mask ratios must be nonempty and lie in [0, 1)"));
    }
    let items = run.items();
    let points = occlusion_sweep(&run.bundle.generator, &items, &ratios, cfg.eval.n_draws, cfg.seed)?;
    fs::create_dir_all(&cfg.paths.output)?;
    let path = cfg.paths.output.join(match a.eval.split {
        SplitName::Test => OCCLUSION.to_string(),
        SplitName::Validation => "occlusion_validation.csv".to_string(),
    });
    write_occlusion_csv(&points, &path)?;
    print_json(&serde_json::json!({ "occlusion": path, "points": points }));
    Ok(())
}

fn read_occlusion(path: &Path) -> anyhow::Result<Vec<OcclusionPoint>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    r.deserialize().collect::<Result<_, _>>().with_context(|| format!("reading {}", path.display()))
}

pub fn plot(a: &PlotArgs) -> CliResult {
    let report = advmil::eval::EvalReport::read_json(&a.report).with_context(|| format!("reading {}", a.report.display()))?;
    let base = a.report.parent().unwrap_or(Path::new("."));
    let out = a.out.clone().unwrap_or_else(|| base.to_path_buf());
    fs::create_dir_all(&out)?;
    let mut written = vec![out.join("estimates.svg")];
    plots::strip_plot(&report.patients, a.max_patients, &written[0])?;
    let occlusion = match &a.occlusion {
        Some(p) => read_occlusion(p)?,
        None if !report.occlusion.is_empty() => report.occlusion.clone(),
        None if base.join(OCCLUSION).exists() => read_occlusion(&base.join(OCCLUSION))?,
        None => Vec::new(),
    };
    if !occlusion.is_empty() {
        let path = out.join("occlusion.svg");
        plots::occlusion_curve(&occlusion, &path)?;
        written.push(path);
    }
    print_json(&serde_json::json!({ "plots": written }));
    Ok(())
}
