use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use finsent::classifier::corpus::{self, label_distribution, read_corpus_path, read_id_list_path, SPLIT_NAMES};
use finsent::classifier::maxent::predict_batch;
use finsent::classifier::{cohens_kappa, evaluate, train_maxent, MaxEntModel, MaxEntParams, SplitSet, Task};
use finsent::event_study::{self, EventStudyConfig, EventStudyInputs, EventStudyOutput, ReturnsPanel};
use finsent::market_data::{self, FactorSeries, ReturnSeries, TradingCalendar};
use finsent::regression::{self, BootstrapConfig, Estimator, ModelResults, RegressionConfig};
use finsent::sentiment_features::{self, DroppedObservation};
use serde::Serialize;

use crate::config::{check_exist, RunConfig};
use crate::error::{CliError, Outcome};
use crate::manifest::{digest_file, FileDigest, OutputDir, RunManifest};

fn digests(paths: &[(&str, &Path)]) -> Result<Vec<FileDigest>, CliError> {
    paths.iter().map(|(role, p)| digest_file(role, p)).collect()
}

struct MarketInputs {
    panel: ReturnsPanel,
    factors: Option<FactorSeries>,
    events: Vec<event_study::EventRecord>,
    skipped_instruments: Vec<(String, String)>,
}

impl MarketInputs {
    fn market(&self, cfg: &RunConfig) -> Option<&ReturnSeries> {
        self.panel.returns.get(&cfg.event_study.market_instrument)
    }
}

fn load_market(cfg: &RunConfig) -> Result<MarketInputs, CliError> {
    let i = &cfg.inputs;
    let prices_path = i.prices.as_deref().expect("validated");
    let prices = market_data::read_prices_path(prices_path).map_err(CliError::schema)?;
    let calendar = match &i.calendar {
        Some(p) => TradingCalendar::from_path(p).map_err(CliError::schema)?,
        None => match prices.get(&cfg.event_study.market_instrument) {
            Some(m) => TradingCalendar::from_prices(m),
            None => TradingCalendar::from_dates(
                prices.values().flat_map(|s| s.observations().iter().map(|(d, _)| *d)),
            ),
        },
    };
    let (panel, skipped_instruments) = ReturnsPanel::from_prices(&prices, cfg.event_study.return_method, calendar);
    for (id, why) in &skipped_instruments {
        log::warn!("skipping instrument {id}: {why}");
    }
    let factors = if cfg.event_study.model.needs_factors() {
        Some(FactorSeries::from_path(i.factors.as_deref().expect("validated")).map_err(CliError::schema)?)
    } else {
        None
    };
    let events = event_study::read_events_path(i.events.as_deref().expect("validated")).map_err(CliError::schema)?;
    let out = MarketInputs {
        panel,
        factors,
        events,
        skipped_instruments,
    };
    if cfg.event_study.model.needs_market() && out.market(cfg).is_none() {
        return Err(CliError::Schema(format!(
            "market instrument {:?} not found in {}",
            cfg.event_study.market_instrument,
            prices_path.display()
        )));
    }
    Ok(out)
}

fn study(cfg: &RunConfig, m: &MarketInputs) -> Result<EventStudyOutput, CliError> {
    let inputs = EventStudyInputs {
        calendar: &m.panel.calendar,
        stock_returns: &m.panel.returns,
        market: m.market(cfg),
        factors: m.factors.as_ref(),
        events: &m.events,
    };
    let config = EventStudyConfig {
        model: cfg.event_study.model,
        windows: cfg.event_study.windows.clone(),
        estimation_length: cfg.event_study.estimation_length,
        min_estimation_obs: cfg.event_study.min_estimation_obs,
    };
    event_study::run_event_study(&inputs, &config).map_err(|e| CliError::Analytic(e.to_string()))
}

fn write_study(out: &mut OutputDir, s: &EventStudyOutput) -> Result<(), CliError> {
    out.write_csv("cars", "cars.csv", |w| event_study::write_cars(w, &s.cars))?;
    out.write_csv("caars", "caars.csv", |w| event_study::write_caars(w, &s.caars))?;
    out.write_csv("mean_ar", "mean_ar.csv", |w| event_study::write_mean_ar(w, &s.mean_ar))?;
    out.write_csv("events", "events.csv", |w| event_study::write_events(w, &s.events))?;
    out.write_csv("dropped_events", "dropped_events.csv", |w| {
        event_study::write_dropped(w, &s.dropped)
    })?;
    Ok(())
}

fn report_dropped(s: &EventStudyOutput) {
    if !s.dropped.is_empty() {
        eprintln!("{} of {} events dropped:", s.dropped.len(), s.dropped.len() + s.events.len());
        for d in &s.dropped {
            eprintln!("  {} {}: {}", d.firm, d.submission_date, d.reason);
        }
    }
}

pub fn event_study_cmd(cfg: &RunConfig) -> Result<Outcome, CliError> {
    cfg.validate_windows()?;
    let required = cfg.event_study_inputs()?;
    check_exist(&required)?;
    let mut manifest = RunManifest::start("event-study", cfg, digests(&required)?);
    let m = load_market(cfg)?;
    let s = study(cfg, &m)?;
    let mut out = OutputDir::create(&cfg.output_dir)?;
    write_study(&mut out, &s)?;
    report_dropped(&s);
    let outcome = if s.dropped.is_empty() { Outcome::Success } else { Outcome::Partial };
    manifest.log("dropped_events", &s.dropped);
    manifest.log("skipped_instruments", &m.skipped_instruments);
    manifest.log("overlapping_events", &s.events.iter().filter(|e| e.overlapping).count());
    manifest.exit_code = outcome.code();
    out.finish(manifest)?;
    Ok(outcome)
}

pub fn returns_cmd(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let prices = cfg
        .inputs
        .prices
        .as_deref()
        .ok_or_else(|| CliError::Config("inputs.prices is required for this command".into()))?;
    let mut required = vec![("prices", prices)];
    if let Some(c) = &cfg.inputs.calendar {
        required.push(("calendar", c.as_path()));
    }
    check_exist(&required)?;
    let mut manifest = RunManifest::start("returns", cfg, digests(&required)?);
    let series = market_data::read_prices_path(prices).map_err(CliError::schema)?;
    let calendar = match &cfg.inputs.calendar {
        Some(p) => TradingCalendar::from_path(p).map_err(CliError::schema)?,
        None => TradingCalendar::from_dates(series.values().flat_map(|s| s.observations().iter().map(|(d, _)| *d))),
    };
    let (panel, skipped) = ReturnsPanel::from_prices(&series, cfg.event_study.return_method, calendar);
    let mut out = OutputDir::create(&cfg.output_dir)?;
    out.write_csv("returns", "returns.csv", |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["instrument", "date", "return"])?;
        for (id, r) in &panel.returns {
            for (d, v) in r.observations() {
                w.write_record([id.clone(), d.format(market_data::DATE_FORMAT).to_string(), v.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    })?;
    let outcome = if skipped.is_empty() { Outcome::Success } else { Outcome::Partial };
    manifest.log("skipped_instruments", &skipped);
    manifest.log("calendar_gaps", &panel.gaps);
    manifest.exit_code = outcome.code();
    out.finish(manifest)?;
    Ok(outcome)
}

#[derive(Serialize)]
struct RunMetadata<'a> {
    seed: u64,
    lambda: f64,
    resamples: usize,
    windows: &'a [usize],
    models: Vec<u8>,
    estimators: Vec<&'static str>,
    cell_seeds: BTreeMap<String, u64>,
    events_used: usize,
    events_dropped: usize,
    feature_rows_dropped: usize,
    /// Per "model{m}_w{w}": rows dropped while building the design matrix.
    design_rows_dropped: BTreeMap<String, usize>,
    /// Per cell: columns without variation, reported as NA.
    columns_dropped: BTreeMap<String, Vec<String>>,
    failed_cells: usize,
}

fn cell_name(model: u8, window: usize, estimator: Option<Estimator>) -> String {
    match estimator {
        Some(e) => format!("model{model}_w{window}_{}", e.as_str()),
        None => format!("model{model}_w{window}"),
    }
}

fn write_dropped_rows(out: &mut OutputDir, rows: &[(String, DroppedObservation)]) -> Result<(), CliError> {
    out.write_csv("dropped_rows", "dropped_rows.csv", |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["stage", "firm", "event_date", "reason"])?;
        for (stage, d) in rows {
            w.write_record([
                stage.clone(),
                d.firm.clone(),
                d.event_date.format(market_data::DATE_FORMAT).to_string(),
                d.reason.clone(),
            ])?;
        }
        w.flush()?;
        Ok(())
    })?;
    Ok(())
}

fn write_results(out: &mut OutputDir, cfg: &RegressionConfig, results: &ModelResults) -> Result<(), CliError> {
    for &model in &cfg.models {
        let m = model.get();
        let cells: Vec<_> = results.cells.iter().filter(|c| c.model == model).collect();
        for c in &cells {
            let name = format!("{}.csv", cell_name(m, c.window, Some(c.estimator)));
            out.write_csv("results", &name, |w| regression::write_cell_results(w, [*c]))?;
        }
        out.write_csv("results", &format!("model{m}.csv"), |w| {
            regression::write_cell_results(w, cells.iter().copied())
        })?;
        let ridge: Vec<_> = cells.iter().copied().filter(|c| c.estimator == Estimator::Ridge).collect();
        if !ridge.is_empty() {
            out.write_csv("percentiles", &format!("model{m}_percentiles.csv"), |w| {
                regression::write_percentiles(w, ridge.iter().copied())
            })?;
        }
        let grid = results.r2_grid(model, &cfg.windows);
        out.write_csv("r2_grid", &format!("model{m}_r2.csv"), |w| regression::write_r2_grid(w, &grid))?;
    }
    out.write_csv("failures", "failed_cells.csv", |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["model", "window", "estimator", "reason"])?;
        for f in &results.failures {
            w.write_record([
                f.model.to_string(),
                f.window.to_string(),
                f.estimator.map(|e| e.as_str()).unwrap_or("all").to_string(),
                f.reason.clone(),
            ])?;
        }
        w.flush()?;
        Ok(())
    })?;
    Ok(())
}

pub fn regress_cmd(cfg: &RunConfig) -> Result<Outcome, CliError> {
    cfg.validate_windows()?;
    let required = cfg.regression_inputs()?;
    check_exist(&required)?;
    let mut manifest = RunManifest::start("regress", cfg, digests(&required)?);
    let m = load_market(cfg)?;
    let s = study(cfg, &m)?;
    report_dropped(&s);

    let annotations = sentiment_features::read_annotations_path(cfg.inputs.annotations.as_deref().expect("validated"))
        .map_err(CliError::schema)?;
    let documents = sentiment_features::group_documents(annotations);
    let fundamentals =
        sentiment_features::read_fundamentals_path(cfg.inputs.fundamentals.as_deref().expect("validated"))
            .map_err(CliError::schema)?;
    let (features, feature_drops) = sentiment_features::assemble_features(
        &s.events,
        &documents,
        &fundamentals,
        &m.panel.returns,
        cfg.regression.report_year_offset,
    );
    if features.is_empty() {
        return Err(CliError::Analytic("no event has a complete feature vector".into()));
    }

    let rc = RegressionConfig {
        models: cfg.regression.models.clone(),
        windows: cfg.event_study.windows.clone(),
        estimators: cfg.regression.estimators.clone(),
        lambda: cfg.regression.lambda,
        bootstrap: BootstrapConfig {
            resamples: cfg.regression.resamples,
            seed: cfg.seed,
        },
    };
    let results = regression::run_models(&features, &s.cars, &rc);

    let mut dropped_rows: Vec<(String, DroppedObservation)> =
        feature_drops.iter().map(|d| ("features".to_string(), d.clone())).collect();
    let mut design_rows_dropped = BTreeMap::new();
    let mut columns_dropped = BTreeMap::new();
    let mut cell_seeds = BTreeMap::new();
    let mut seen_designs = BTreeSet::new();
    for c in &results.cells {
        let design = cell_name(c.model.get(), c.window, None);
        if seen_designs.insert(design.clone()) {
            design_rows_dropped.insert(design.clone(), c.dropped_rows);
        }
        if !c.dropped_columns.is_empty() {
            columns_dropped.insert(cell_name(c.model.get(), c.window, Some(c.estimator)), c.dropped_columns.clone());
        }
        if let Some(seed) = c.seed {
            cell_seeds.insert(cell_name(c.model.get(), c.window, Some(c.estimator)), seed);
        }
    }
    // score rows dropped per window are the same for models 2 and 4: log once per design
    for &model in &rc.models {
        if !model.uses_scores() {
            continue;
        }
        for &window in &rc.windows {
            if let Ok(dm) = sentiment_features::build_design_matrix(model, &features, &s.cars, window) {
                for d in dm.dropped {
                    dropped_rows.push((cell_name(model.get(), window, None), d));
                }
            }
        }
    }

    let mut out = OutputDir::create(&cfg.output_dir)?;
    out.write_csv("cars", "cars.csv", |w| event_study::write_cars(w, &s.cars))?;
    out.write_csv("dropped_events", "dropped_events.csv", |w| {
        event_study::write_dropped(w, &s.dropped)
    })?;
    write_dropped_rows(&mut out, &dropped_rows)?;
    write_results(&mut out, &rc, &results)?;
    let meta = RunMetadata {
        seed: cfg.seed,
        lambda: rc.lambda,
        resamples: rc.bootstrap.resamples,
        windows: &rc.windows,
        models: rc.models.iter().map(|m| m.get()).collect(),
        estimators: rc.estimators.iter().map(|e| e.as_str()).collect(),
        cell_seeds,
        events_used: features.len(),
        events_dropped: s.dropped.len(),
        feature_rows_dropped: feature_drops.len(),
        design_rows_dropped,
        columns_dropped,
        failed_cells: results.failures.len(),
    };
    out.write_json("metadata", "run_metadata.json", &meta)?;

    for f in &results.failures {
        eprintln!(
            "model {} window {} {}: {}",
            f.model,
            f.window,
            f.estimator.map(|e| e.as_str()).unwrap_or("all"),
            f.reason
        );
    }
    let outcome = if s.dropped.is_empty() && feature_drops.is_empty() && results.failures.is_empty() {
        Outcome::Success
    } else {
        Outcome::Partial
    };
    manifest.log("dropped_events", &s.dropped);
    manifest.log("dropped_rows", &dropped_rows.iter().map(|(st, d)| (st, d)).collect::<Vec<_>>());
    manifest.log("failed_cells", &results.failures);
    manifest.exit_code = outcome.code();
    out.finish(manifest)?;
    Ok(outcome)
}

struct ClassifyData {
    docs: Vec<corpus::CorpusDocument>,
    splits: SplitSet,
    inputs: Vec<FileDigest>,
}

fn load_classify(cfg: &RunConfig, need_train: bool) -> Result<ClassifyData, CliError> {
    let c = &cfg.classify;
    let corpus_path = cfg
        .inputs
        .corpus
        .as_deref()
        .ok_or_else(|| CliError::Config("inputs.corpus is required for this command".into()))?;
    if need_train && c.train_split.is_none() {
        return Err(CliError::Config("classify.train_split is required".into()));
    }
    let mut required: Vec<(&str, &Path)> = vec![("corpus", corpus_path)];
    for (name, p) in SPLIT_NAMES.iter().zip([&c.train_split, &c.dev_split, &c.test_split]) {
        if let Some(p) = p {
            required.push((name, p.as_path()));
        }
    }
    check_exist(&required)?;
    let inputs = digests(&required)?;
    let docs = read_corpus_path(corpus_path).map_err(CliError::schema)?;
    let read = |p: &Option<PathBuf>| -> Result<Vec<String>, CliError> {
        p.as_deref()
            .map(|p| read_id_list_path(p).map_err(CliError::schema))
            .transpose()
            .map(Option::unwrap_or_default)
    };
    let splits =
        SplitSet::new(read(&c.train_split)?, read(&c.dev_split)?, read(&c.test_split)?).map_err(CliError::schema)?;
    Ok(ClassifyData { docs, splits, inputs })
}

fn model_path(cfg: &RunConfig) -> PathBuf {
    cfg.classify
        .model_file
        .clone()
        .unwrap_or_else(|| cfg.output_dir.join("model.json"))
}

pub fn classify_train_cmd(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let data = load_classify(cfg, true)?;
    let task = cfg.classify.task;
    let mut manifest = RunManifest::start("classify train", cfg, data.inputs.clone());
    let classes = task.classes();

    let mut stats: Vec<Vec<u64>> = Vec::new();
    let mut train_set = None;
    for split in SPLIT_NAMES {
        let docs = data.splits.select(split, &data.docs).map_err(CliError::schema)?;
        let set = corpus::instances(docs, task).map_err(CliError::schema)?;
        stats.push(label_distribution(&set.instances, classes.len()));
        if split == "train" {
            train_set = Some(set);
        }
    }
    let train = train_set.expect("train split visited");
    let params = MaxEntParams {
        learning_rate: cfg.classify.learning_rate,
        l2: cfg.classify.l2,
        max_epochs: cfg.classify.max_epochs,
        min_df: cfg.classify.min_df,
        ..MaxEntParams::default()
    };
    let tokens: Vec<Vec<String>> = train.instances.iter().map(|i| i.tokens.clone()).collect();
    let labels: Vec<usize> = train.instances.iter().map(|i| i.label).collect();
    let model = train_maxent(&tokens, &labels, classes.clone(), Some(task), &params).map_err(|e| match e {
        finsent::classifier::ClassifierError::Diverged(_) => CliError::Analytic(e.to_string()),
        other => CliError::schema(other),
    })?;

    let mut out = OutputDir::create(&cfg.output_dir)?;
    let mut bytes = Vec::new();
    model
        .write_json(&mut bytes)
        .map_err(|e| CliError::Output {
            path: "model".into(),
            message: e.to_string(),
        })?;
    let path = model_path(cfg);
    if path.parent() == Some(out.root()) {
        let name = path.file_name().expect("file name").to_string_lossy().into_owned();
        out.write("model", &name, &bytes)?;
    } else {
        std::fs::write(&path, &bytes).map_err(|e| CliError::Output {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
    }
    out.write_csv("split_stats", "split_stats.csv", |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["class", "train", "dev", "test"])?;
        for (k, class) in classes.iter().enumerate() {
            w.write_record([
                class.clone(),
                stats[0][k].to_string(),
                stats[1][k].to_string(),
                stats[2][k].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    })?;
    manifest.log("empty_documents", &train.empty_documents);
    manifest.log("unlabelled_documents", &train.unlabelled_documents);
    manifest.log("vocabulary_size", &model.vocabulary.len());
    manifest.log("training", &model.trace);
    out.finish(manifest)?;
    Ok(Outcome::Success)
}

pub fn classify_eval_cmd(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let mut data = load_classify(cfg, false)?;
    let split: &'static str = SPLIT_NAMES
        .iter()
        .copied()
        .find(|s| *s == cfg.classify.eval_split)
        .ok_or_else(|| CliError::Config(format!("unknown eval split {:?}", cfg.classify.eval_split)))?;
    let mpath = model_path(cfg);
    check_exist(&[("model", mpath.as_path())])?;
    data.inputs.push(digest_file("model", &mpath)?);
    let mut manifest = RunManifest::start("classify eval", cfg, data.inputs.clone());
    let file = std::fs::File::open(&mpath).map_err(CliError::schema)?;
    let model = MaxEntModel::read_json(file).map_err(CliError::schema)?;
    let task: Task = model.task.unwrap_or(cfg.classify.task);

    let docs = data.splits.select(split, &data.docs).map_err(CliError::schema)?;
    let set = corpus::instances(docs, task).map_err(CliError::schema)?;
    if set.instances.is_empty() {
        return Err(CliError::Schema(format!("split {split} has no labelled instances")));
    }
    let tokens: Vec<Vec<String>> = set.instances.iter().map(|i| i.tokens.clone()).collect();
    let preds = predict_batch(&model, &tokens);
    let predicted: Vec<usize> = preds.iter().map(|p| p.label).collect();
    let gold: Vec<usize> = set.instances.iter().map(|i| i.label).collect();
    let report = evaluate(&predicted, &gold, &model.classes).map_err(CliError::schema)?;

    let mut out = OutputDir::create(&cfg.output_dir)?;
    out.write_csv("eval", &format!("eval_{split}.csv"), |w| report.write_csv(w))?;
    out.write_csv("confusion", &format!("confusion_{split}.csv"), |w| report.write_confusion_csv(w))?;
    out.write_csv("predictions", &format!("predictions_{split}.csv"), |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["id", "gold", "predicted", "probability", "oov"])?;
        for ((inst, p), g) in set.instances.iter().zip(&preds).zip(&gold) {
            w.write_record([
                inst.doc_id.clone(),
                model.classes[*g].clone(),
                model.classes[p.label].clone(),
                p.probabilities[p.label].to_string(),
                p.oov.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    })?;
    manifest.log("accuracy", &report.accuracy);
    manifest.log("macro_f1", &report.macro_f1);
    manifest.log("empty_documents", &set.empty_documents);
    out.finish(manifest)?;
    println!("{split}: accuracy {:.4}, macro F1 {:.4}", report.accuracy, report.macro_f1);
    Ok(Outcome::Success)
}

pub fn classify_kappa_cmd(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let c = &cfg.classify;
    let (a, b) = match (&c.annotator_a, &c.annotator_b) {
        (Some(a), Some(b)) => (a.as_path(), b.as_path()),
        _ => {
            return Err(CliError::Config(
                "classify.annotator_a and classify.annotator_b are required".into(),
            ))
        }
    };
    let required = [("annotator_a", a), ("annotator_b", b)];
    check_exist(&required)?;
    let mut manifest = RunManifest::start("classify kappa", cfg, digests(&required)?);
    let da = read_corpus_path(a).map_err(CliError::schema)?;
    let db = read_corpus_path(b).map_err(CliError::schema)?;
    let by_id: BTreeMap<&str, &corpus::CorpusDocument> = db.iter().map(|d| (d.id.as_str(), d)).collect();
    if da.len() != db.len() {
        return Err(CliError::Schema(format!(
            "annotator files cover different documents ({} vs {})",
            da.len(),
            db.len()
        )));
    }
    let task = c.task;
    let mut la = Vec::new();
    let mut lb = Vec::new();
    for doc in &da {
        let other = by_id
            .get(doc.id.as_str())
            .ok_or_else(|| CliError::Schema(format!("document {:?} missing from {}", doc.id, b.display())))?;
        let (x, y) = (doc.labels(task), other.labels(task));
        if x.len() != y.len() {
            return Err(CliError::Schema(format!(
                "document {:?}: {} vs {} {} labels",
                doc.id,
                x.len(),
                y.len(),
                task.as_str()
            )));
        }
        for (p, q) in x.iter().zip(y) {
            la.push(task.class_index(p).map_err(CliError::schema)?);
            lb.push(task.class_index(q).map_err(CliError::schema)?);
        }
    }
    let kappa = cohens_kappa(&la, &lb).map_err(CliError::schema)?;
    let mut out = OutputDir::create(&cfg.output_dir)?;
    out.write_csv("kappa", &format!("kappa_{}.csv", task.as_str()), |w| kappa.write_csv(w))?;
    manifest.log("kappa", &kappa);
    out.finish(manifest)?;
    println!("{} kappa {} (n = {})", task.as_str(), kappa.value, kappa.n);
    Ok(if kappa.degenerate { Outcome::Partial } else { Outcome::Success })
}
