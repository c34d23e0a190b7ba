use std::path::{Path, PathBuf};

use anyhow::Context;
use log::{info, warn};
use serde::{Deserialize, Serialize};

use lfi::als::{load_model, save_model, train_als_traced};
use lfi::data::RatingScale;
use lfi::influence::{explain_against, render_svg, Aggregation, Estimator, InfluenceQuery, InfluenceReport};
use lfi::ingest::{encode_one_hot, filter_features, item_mask, load_metadata, load_ratings, FeatureFilterSpec, LoadedRatings, RatingsFormat};
use lfi::regress::TreeParams;
use lfi::shadow::{agreement_report, AgreementReport, AgreementScope, ShadowBundle};
use lfi::sweep::{run_sweep, SweepGrid, SweepRow, SweepSettings};
use lfi::synth::{run_hypothesis_experiment, Baseline, Comparison, ExperimentResult, Ranking, SimConfig};
use lfi::{AlsConfig, FactorModel, IdMap, MetadataMatrix, ShadowConfig, ShadowKind};

use crate::config::{self, missing, ConfigError};
use crate::lookup::resolve;
use crate::output::{num, opt, pval, table, write_json, write_jsonl};
use crate::{
    AggregationArg, Cli, Command, EstimatorArg, ExplainArgs, FeatureArgs, KindArg, RankingArg, RatingsInput, ScopeArg, ShadowArgs,
    SweepArgs, SynthArgs, TrainArgs,
};

pub fn run(cli: &Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Train(a) => train(cli, a),
        Command::Shadow(a) => shadow(cli, a),
        Command::Explain(a) => explain(cli, a),
        Command::Sweep(a) => sweep(cli, a),
        Command::Synth(a) => synth(cli, a),
    }
}

/// Ratings-file settings shared by `train` and `sweep` config files.
#[derive(Deserialize, Default)]
#[serde(default)]
struct RatingsFile {
    ratings: Option<PathBuf>,
    delimiter: Option<char>,
    no_header: Option<bool>,
    scale_low: Option<f64>,
    scale_high: Option<f64>,
}

fn load_ratings_input(flags: &RatingsInput, file: &RatingsFile) -> anyhow::Result<LoadedRatings> {
    let path = flags.ratings.clone().or_else(|| file.ratings.clone()).ok_or_else(|| missing("ratings"))?;
    let defaults = RatingsFormat::default();
    let scale = RatingScale::new(
        flags.scale_low.or(file.scale_low).unwrap_or(defaults.scale.low),
        flags.scale_high.or(file.scale_high).unwrap_or(defaults.scale.high),
    )?;
    let delimiter = flags.delimiter.or(file.delimiter).unwrap_or(defaults.delimiter as char);
    if !delimiter.is_ascii() {
        return Err(ConfigError(format!("delimiter {delimiter:?} must be a single ASCII character")).into());
    }
    let format = RatingsFormat {
        delimiter: delimiter as u8,
        has_header: !(flags.no_header || file.no_header.unwrap_or(false)),
        scale,
    };
    let loaded = load_ratings(&path, format)?;
    info!(
        "loaded {} ratings from {} ({} users, {} items)",
        loaded.matrix.len(),
        path.display(),
        loaded.users.len(),
        loaded.items.len()
    );
    Ok(loaded)
}

/// Feature-filter and pruning settings shared by `shadow` and `sweep`.
#[derive(Deserialize, Default)]
#[serde(default)]
struct FeatureFile {
    min_entropy: Option<f64>,
    top_entropy: Option<usize>,
    min_support: Option<usize>,
    min_features: Option<usize>,
}

fn filter_spec(flags: &FeatureArgs, file: &FeatureFile) -> anyhow::Result<FeatureFilterSpec> {
    let from_flags = [
        flags.min_entropy.map(|bits| FeatureFilterSpec::EntropyThreshold { bits }),
        flags.top_entropy.map(|count| FeatureFilterSpec::TopKEntropy { count }),
        flags.min_support.map(|count| FeatureFilterSpec::MinSupport { count }),
    ];
    let from_file = [
        file.min_entropy.map(|bits| FeatureFilterSpec::EntropyThreshold { bits }),
        file.top_entropy.map(|count| FeatureFilterSpec::TopKEntropy { count }),
        file.min_support.map(|count| FeatureFilterSpec::MinSupport { count }),
    ];
    let file_specs: Vec<_> = from_file.into_iter().flatten().collect();
    if file_specs.len() > 1 {
        return Err(ConfigError("config sets more than one feature filter".into()).into());
    }
    let spec = from_flags
        .into_iter()
        .flatten()
        .next()
        .or(file_specs.first().copied())
        .unwrap_or_default();
    spec.validate()?;
    Ok(spec)
}

/// Metadata re-indexed onto `items`, feature-filtered, plus the mask of
/// items with enough metadata to take part in shadow training.
fn prepare_metadata(
    path: &Path,
    items: &IdMap,
    flags: &FeatureArgs,
    file: &FeatureFile,
) -> anyhow::Result<(MetadataMatrix, Vec<bool>)> {
    let spec = filter_spec(flags, file)?;
    let min_features = flags.min_features.or(file.min_features).unwrap_or(1);
    if min_features == 0 {
        return Err(ConfigError("--min-features must be at least 1".into()).into());
    }
    let records = load_metadata(path)?;
    let encoded = encode_one_hot(&records)?.align_to(items)?;
    let meta = filter_features(&encoded, spec)?;
    if meta.n_features() == 0 {
        return Err(ConfigError(format!("no metadata feature passes the filter {spec:?}")).into());
    }
    let mask = item_mask(&meta, min_features);
    let kept = mask.iter().filter(|&&m| m).count();
    let without = (0..items.len()).filter(|&i| encoded.item_features(i).map_or(true, |f| f.is_empty())).count();
    if without > 0 {
        warn!("{without} of {} items have no metadata", items.len());
    }
    info!(
        "metadata: {} of {} features kept, {kept} of {} items eligible",
        meta.n_features(),
        encoded.n_features(),
        items.len()
    );
    Ok((meta, mask))
}

fn scope(arg: Option<ScopeArg>, file: Option<AgreementScope>) -> AgreementScope {
    match arg {
        Some(ScopeArg::Eval) => AgreementScope::Eval,
        Some(ScopeArg::Train) => AgreementScope::Train,
        Some(ScopeArg::All) => AgreementScope::All,
        None => file.unwrap_or(AgreementScope::Eval),
    }
}

#[derive(Deserialize, Default)]
#[serde(default)]
struct TrainFile {
    #[serde(flatten)]
    input: RatingsFile,
    rank: Option<usize>,
    lambda: Option<f64>,
    iters: Option<usize>,
    out: Option<PathBuf>,
    seed: Option<u64>,
}

fn train(cli: &Cli, a: &TrainArgs) -> anyhow::Result<()> {
    let file: TrainFile = config::load(a.config.as_deref())?;
    let d = AlsConfig::default();
    let cfg = AlsConfig {
        rank: a.rank.or(file.rank).unwrap_or(d.rank),
        lambda: a.lambda.or(file.lambda).unwrap_or(d.lambda),
        max_iterations: a.iters.or(file.iters).unwrap_or(d.max_iterations),
        seed: cli.seed.or(file.seed).unwrap_or(d.seed),
        ..d
    };
    cfg.validate()?;
    let out = a.out.clone().or(file.out).ok_or_else(|| missing("out"))?;
    let loaded = load_ratings_input(&a.input, &file.input)?;
    let (model, trace) = train_als_traced(&loaded.matrix, &cfg)?;
    let model = FactorModel::with_ids(model.lambda, model.user_factors, model.item_factors, loaded.users, loaded.items)?;
    save_model(&model, &out)?;
    let rmse = trace.rmse.last().copied().unwrap_or(f64::NAN);
    println!(
        "trained rank-{} model on {} ratings ({} users, {} items)",
        model.rank,
        loaded.matrix.len(),
        model.n_users(),
        model.n_items()
    );
    println!("training RMSE {rmse:.6} after {} iterations", trace.rmse.len());
    println!("model written to {}", out.display());
    Ok(())
}

#[derive(Deserialize, Default)]
#[serde(default)]
struct ShadowFile {
    model: Option<PathBuf>,
    metadata: Option<PathBuf>,
    kind: Option<String>,
    depth: Option<usize>,
    bins: Option<usize>,
    min_leaf: Option<usize>,
    ridge: Option<f64>,
    split: Option<f64>,
    scope: Option<AgreementScope>,
    #[serde(flatten)]
    features: FeatureFile,
    out: Option<PathBuf>,
    report: Option<PathBuf>,
    seed: Option<u64>,
}

fn shadow_kind(a: &ShadowArgs, file: &ShadowFile) -> anyhow::Result<ShadowKind> {
    let kind = match (a.kind, file.kind.as_deref()) {
        (Some(k), _) => k,
        (None, None | Some("tree")) => KindArg::Tree,
        (None, Some("linear")) => KindArg::Linear,
        (None, Some(other)) => return Err(ConfigError(format!("unknown shadow kind {other:?} (linear|tree)")).into()),
    };
    let depth = a.depth.or(file.depth);
    let bins = a.bins.or(file.bins);
    let min_leaf = a.min_leaf.or(file.min_leaf);
    let ridge = a.ridge.or(file.ridge);
    Ok(match kind {
        KindArg::Linear => {
            for (flag, set) in [("depth", depth.is_some()), ("bins", bins.is_some()), ("min-leaf", min_leaf.is_some())] {
                if set {
                    warn!("--{flag} only applies to tree shadows; ignored for a linear shadow");
                }
            }
            ShadowKind::Linear { ridge: ridge.unwrap_or(0.1) }
        }
        KindArg::Tree => {
            if ridge.is_some() {
                warn!("--ridge only applies to linear shadows; ignored for a tree shadow");
            }
            let d = TreeParams::default();
            let p = TreeParams {
                max_depth: depth.unwrap_or(d.max_depth),
                bins: bins.unwrap_or(d.bins),
                min_leaf: min_leaf.unwrap_or(d.min_leaf),
            };
            p.validate()?;
            ShadowKind::Tree(p)
        }
    })
}

fn agreement_table(r: &AgreementReport) -> String {
    let faith = if r.faithfulness_exact {
        format!("exact (>= {:.3e})", r.faithfulness)
    } else {
        num(r.faithfulness)
    };
    let mut rows = vec![
        vec!["measured on".to_string(), r.measured_on.clone()],
        vec!["items".into(), r.n_items.to_string()],
        vec!["user-item pairs".into(), r.n_pairs.to_string()],
        vec!["mean latent MAE".into(), num(r.mean_latent_mae)],
        vec!["observational MAE".into(), num(r.observational_mae)],
        vec!["observational MSE".into(), num(r.observational_mse)],
        vec!["faithfulness".into(), faith],
    ];
    for (j, e) in r.per_factor_mae.iter().enumerate() {
        rows.push(vec![format!("factor {} MAE", j + 1), num(*e)]);
    }
    table(&["metric", "value"], &rows)
}

fn shadow(cli: &Cli, a: &ShadowArgs) -> anyhow::Result<()> {
    let file: ShadowFile = config::load(a.config.as_deref())?;
    let kind = shadow_kind(a, &file)?;
    let split = a.split.or(file.split).unwrap_or(0.8);
    let seed = cli.seed.or(file.seed).unwrap_or(0);
    let scope = scope(a.scope, file.scope);
    let out = a.out.clone().or(file.out.clone()).ok_or_else(|| missing("out"))?;
    let model_path = a.model.clone().or(file.model.clone()).ok_or_else(|| missing("model"))?;
    let meta_path = a.metadata.clone().or(file.metadata.clone()).ok_or_else(|| missing("metadata"))?;
    let cfg = ShadowConfig { kind, train_fraction: split, seed };

    let baseline = load_model(&model_path)?;
    let (meta, mask) = prepare_metadata(&meta_path, &baseline.item_ids, &a.features, &file.features)?;
    let shadow = lfi::train_shadow(&baseline, &meta, Some(&mask), &cfg)?;
    let report = agreement_report(&shadow, &baseline, &meta, scope, seed)?;
    if report.measured_on == "train-set" && scope == AgreementScope::Eval {
        warn!("no held-out items (split {split}); agreement is measured on the training set");
    }
    ShadowBundle::new(shadow, baseline).save(&out)?;
    if let Some(path) = a.report.clone().or(file.report) {
        write_json(&path, &report)?;
    }
    println!("{} shadow of rank {}", kind.label(), report.per_factor_mae.len());
    print!("{}", agreement_table(&report));
    println!("shadow model written to {}", out.display());
    Ok(())
}

#[derive(Serialize)]
struct ExplainOutput<'a> {
    user_id: &'a str,
    item_id: Option<&'a str>,
    report: &'a InfluenceReport,
}

fn explain(cli: &Cli, a: &ExplainArgs) -> anyhow::Result<()> {
    if a.top_k == 0 {
        return Err(ConfigError("--top-k must be at least 1".into()).into());
    }
    let bundle = ShadowBundle::load(&a.shadow)?;
    let (shadow, baseline) = (&bundle.shadow, &bundle.baseline);
    let records = load_metadata(&a.metadata)?;
    let encoded = encode_one_hot(&records)?.align_to(&baseline.item_ids)?;
    let absent: Vec<&String> = shadow.feature_names.iter().filter(|n| encoded.feature_index(n).is_none()).collect();
    if !absent.is_empty() {
        warn!("{} shadow feature(s) are absent from this metadata file and read as 0", absent.len());
    }
    let meta = encoded.project_features(&shadow.feature_names)?;

    let user = resolve(&baseline.user_ids, &a.user, "user")?;
    let (mut q, item_id) = match &a.item {
        Some(id) => (InfluenceQuery::single(user, resolve(&baseline.item_ids, id, "item")?), Some(id.as_str())),
        None => (InfluenceQuery::aggregate(user, shadow.eligible_items()), None),
    };
    q.estimator = match a.estimator {
        EstimatorArg::Exact => Estimator::ExactBinary,
        EstimatorArg::MonteCarlo => Estimator::MonteCarlo { samples: a.samples, seed: cli.seed.unwrap_or(0) },
    };
    q.aggregation = match a.aggregation {
        AggregationArg::Mean => Aggregation::Mean,
        AggregationArg::MeanAbsolute => Aggregation::MeanAbsolute,
    };
    let report = explain_against(shadow, &meta, Some(baseline), &q, a.top_k)?;
    for w in &report.warnings {
        warn!("{w}");
    }

    let title = match item_id {
        Some(item) => format!("user {}, item {item}", a.user),
        None => format!("user {}, all {} items", a.user, q.items().len()),
    };
    match report.baseline_rating {
        Some(b) => println!("{title}: shadow rating {:.4}, baseline rating {b:.4}", report.shadow_rating),
        None => println!("{title}: mean shadow rating {:.4}", report.shadow_rating),
    }
    let rows: Vec<Vec<String>> = report
        .influences
        .iter()
        .enumerate()
        .map(|(r, f)| vec![(r + 1).to_string(), f.feature.clone(), format!("{:+.4}", f.influence)])
        .collect();
    print!("{}", table(&["#", "feature", "influence (stars)"], &rows));

    if let Some(path) = &a.svg {
        std::fs::write(path, render_svg(&report, &title)).with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(path) = &a.out {
        write_json(path, &ExplainOutput { user_id: &a.user, item_id, report: &report })?;
    }
    Ok(())
}

#[derive(Deserialize, Default)]
#[serde(default)]
struct GridFile {
    #[serde(flatten)]
    input: RatingsFile,
    metadata: Option<PathBuf>,
    grid: Option<SweepGrid>,
    settings: Option<SweepSettings>,
    #[serde(flatten)]
    features: FeatureFile,
    out: Option<PathBuf>,
}

fn sweep(cli: &Cli, a: &SweepArgs) -> anyhow::Result<()> {
    let file: GridFile = config::load(a.grid.as_deref())?;
    let grid = file.grid.clone().unwrap_or_default();
    grid.validate()?;
    let base = file.settings.unwrap_or_default();
    let settings = SweepSettings {
        max_iterations: a.iters.unwrap_or(base.max_iterations),
        train_fraction: a.split.unwrap_or(base.train_fraction),
        scope: scope(a.scope, Some(base.scope)),
        seed: cli.seed.unwrap_or(base.seed),
    };
    let meta_path = a.metadata.clone().or(file.metadata.clone()).ok_or_else(|| missing("metadata"))?;
    let loaded = load_ratings_input(&a.input, &file.input)?;
    let (meta, mask) = prepare_metadata(&meta_path, &loaded.items, &a.features, &file.features)?;
    info!("sweeping {} cells", grid.cells().len());
    let rows = run_sweep(&loaded.matrix, &meta, Some(&mask), &grid, &settings)?;

    let text: Vec<Vec<String>> = rows.iter().map(sweep_line).collect();
    print!(
        "{}",
        table(
            &["cell", "rank", "lambda", "kind", "depth", "bins", "latent MAE", "obs. MAE", "faithfulness", "measured on"],
            &text
        )
    );
    for r in rows.iter().filter(|r| r.error.is_some()) {
        warn!("{} failed: {}", r.cell.label(), r.error.as_deref().unwrap_or_default());
    }
    if let Some(path) = a.out.clone().or(file.out) {
        write_jsonl(&path, &rows)?;
    }
    Ok(())
}

fn sweep_line(r: &SweepRow) -> Vec<String> {
    let (kind, depth, bins) = match r.cell.kind {
        ShadowKind::Linear { .. } => ("linear", "-".to_string(), "-".to_string()),
        ShadowKind::Tree(p) => ("tree", p.max_depth.to_string(), p.bins.to_string()),
    };
    vec![
        r.cell.label(),
        r.cell.rank.to_string(),
        r.cell.lambda.to_string(),
        kind.into(),
        depth,
        bins,
        opt(r.mean_latent_mae),
        opt(r.observational_mae),
        opt(r.faithfulness),
        r.measured_on.clone().unwrap_or_else(|| "failed".into()),
    ]
}

#[derive(Deserialize)]
#[serde(default)]
struct SynthFile {
    seed: Option<u64>,
    baseline: Baseline,
    /// Item metadata to simulate over instead of generated items.
    metadata: Option<PathBuf>,
    sim: SimConfig,
    als: AlsConfig,
    shadow: ShadowConfig,
}

impl Default for SynthFile {
    fn default() -> Self {
        SynthFile {
            seed: None,
            baseline: Baseline::Als,
            metadata: None,
            sim: SimConfig::default(),
            als: AlsConfig { rank: 3, ..AlsConfig::default() },
            shadow: ShadowConfig {
                kind: ShadowKind::Linear { ridge: 0.1 },
                train_fraction: 1.0,
                seed: 0,
            },
        }
    }
}

#[derive(Serialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum SynthRecord<'a> {
    Summary {
        parameters: String,
        baseline: Baseline,
        means: &'a lfi::synth::ConditionMeans,
        true_vs_semi_random: &'a Comparison,
        semi_random_vs_random: &'a Comparison,
        true_vs_random: &'a Comparison,
    },
    Repetition(&'a lfi::synth::RepetitionSummary),
    Sample(&'a lfi::synth::ScoreSample),
}

fn describe(sim: &SimConfig, als: &AlsConfig, baseline: Baseline) -> String {
    let pool = match sim.feature_pool {
        FeatureFilterSpec::TopKEntropy { count } => format!("{count} h.e.f."),
        FeatureFilterSpec::MinSupport { count } => format!("support >= {count}"),
        FeatureFilterSpec::EntropyThreshold { bits } => format!("entropy >= {bits}"),
    };
    let model = match baseline {
        Baseline::Als => format!("rn {}", als.rank),
        Baseline::DirectEncode => "direct".into(),
    };
    format!("N={}, {} pr, {model}, {pool}", sim.repetitions, sim.n_profiles)
}

fn synth(cli: &Cli, a: &SynthArgs) -> anyhow::Result<()> {
    let mut file: SynthFile = config::load(a.config.as_deref())?;
    if let Some(seed) = cli.seed.or(file.seed) {
        file.sim.seed = seed;
    }
    if let Some(r) = a.repetitions {
        file.sim.repetitions = r;
    }
    if let Some(d) = a.delta {
        file.sim.delta = d;
    }
    if let Some(r) = a.ranking {
        file.sim.ranking = match r {
            RankingArg::Signed => Ranking::Signed,
            RankingArg::Magnitude => Ranking::Magnitude,
        };
    }
    if let Some(g) = a.aggregation {
        file.sim.aggregation = match g {
            AggregationArg::Mean => Aggregation::Mean,
            AggregationArg::MeanAbsolute => Aggregation::MeanAbsolute,
        };
    }
    if a.direct_encode {
        file.baseline = Baseline::DirectEncode;
    }
    file.sim.validate()?;
    file.als.validate()?;
    if let ShadowKind::Tree(p) = file.shadow.kind {
        p.validate()?;
    }
    let items = match &file.metadata {
        Some(path) => Some(encode_one_hot(&load_metadata(path)?)?),
        None => None,
    };
    info!("running {} repetitions", file.sim.repetitions);
    let result = run_hypothesis_experiment(&file.sim, &file.als, &file.shadow, file.baseline, items.as_ref())?;

    let parameters = describe(&file.sim, &file.als, file.baseline);
    print!("{}", synth_table(&parameters, &result));
    if let Some(path) = &a.out {
        let mut records = vec![SynthRecord::Summary {
            parameters,
            baseline: file.baseline,
            means: &result.means,
            true_vs_semi_random: &result.true_vs_semi_random,
            semi_random_vs_random: &result.semi_random_vs_random,
            true_vs_random: &result.true_vs_random,
        }];
        records.extend(result.repetitions.iter().map(SynthRecord::Repetition));
        records.extend(result.samples.iter().map(SynthRecord::Sample));
        write_jsonl(path, &records)?;
    }
    Ok(())
}

fn synth_table(parameters: &str, r: &ExperimentResult) -> String {
    let es = |c: &Comparison| c.effect_size.map_or_else(|| "-".into(), |d| format!("{d:.1}"));
    let row = vec![
        parameters.to_string(),
        format!("{:.2}", r.means.true_mean),
        format!("{:.2}", r.means.semi_random_mean),
        format!("{:.2}", r.means.random_mean),
        pval(r.true_vs_semi_random.p),
        es(&r.true_vs_semi_random),
        pval(r.semi_random_vs_random.p),
        es(&r.semi_random_vs_random),
        pval(r.true_vs_random.p),
        es(&r.true_vs_random),
    ];
    table(
        &["parameters", "t. mean", "s.r. mean", "r. mean", "t.>s.r. p", "e.s.", "s.r.>r. p", "e.s.", "t.>r. p", "e.s."],
        &[row],
    )
}
