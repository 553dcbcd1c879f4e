use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use anyhow::Result;
use psychocal::dataio::{
    make_folds, read_difficulties, read_embeddings, read_items, read_predictions, read_responses,
    read_responses_unchecked, write_jsonl, write_predictions, DataError,
};
use psychocal::difficulty::predict_difficulties;
use psychocal::irt::{self, ScoredResponse};
use psychocal::metrics::{self, MetricError};
use psychocal::pairs::{export_pairs, mine};
use psychocal::prompt::PromptTemplate;
use psychocal::sim::{
    parse_envelope, run_simulation, sample_population, GeneratorBackend, HttpBackend, Item, NoisyScorer, PromptSet,
    ScorerBackend, SubprocessBackend, SyntheticGenerator, SyntheticScorer,
};
use serde::Serialize;

use crate::config::RunConfig;
use crate::output::Run;
use crate::{BackendKind, EvaluateArgs, FitArgs, FoldArgs, MineArgs, PredictArgs, SimulateArgs, UsageError};

pub fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig> {
    let mut config = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        config.rng_seed = s;
    }
    Ok(config)
}

fn items_by_id(items: &[Item]) -> BTreeMap<String, Item> {
    items.iter().map(|i| (i.item_id.clone(), i.clone())).collect()
}

fn categories_of(items: &[Item]) -> BTreeMap<String, usize> {
    items.iter().map(|i| (i.item_id.clone(), i.num_categories)).collect()
}

#[derive(Serialize)]
struct FitReport {
    final_loss: f64,
    holdout_qwk: Option<f64>,
    loss_curve: Vec<f64>,
    n_items: usize,
    n_responses: usize,
    n_students: usize,
}

pub fn fit_irt(mut config: RunConfig, args: FitArgs) -> Result<()> {
    let mut run = Run::new("fit-irt", &args.out)?;
    run.input("items", &args.items)?;
    run.input("responses", &args.responses)?;
    let fit_cfg = &mut config.fit;
    if let Some(v) = args.epochs {
        fit_cfg.epochs = v;
    }
    if let Some(v) = args.learning_rate {
        fit_cfg.learning_rate = v;
    }
    if let Some(v) = args.weight_decay {
        fit_cfg.weight_decay = v;
    }
    if let Some(v) = args.batch_size {
        fit_cfg.batch_size = v;
    }
    if let Some(v) = args.holdout_fraction {
        fit_cfg.holdout_fraction = v;
    }
    config.fit.rng_seed = config.stage_seed("fit");

    let items = read_items(&args.items)?;
    let cats = categories_of(&items);
    let responses = read_responses(&args.responses, &cats)?;
    let fit = irt::fit(&responses, &cats, &config.fit, None)?;
    irt::write_params(&fit, run.output("params.json"))?;
    run.write_json(
        "fit_report.json",
        &FitReport {
            final_loss: fit.final_loss,
            holdout_qwk: fit.holdout_qwk,
            loss_curve: fit.loss_curve.clone(),
            n_items: fit.item_params.len(),
            n_responses: responses.len(),
            n_students: fit.abilities.len(),
        },
    )?;
    run.finish(&config)?;
    match fit.holdout_qwk {
        Some(q) => println!(
            "fitted {} items and {} students; holdout QWK {q:.4}",
            fit.item_params.len(),
            fit.abilities.len()
        ),
        None => println!("fitted {} items and {} students", fit.item_params.len(), fit.abilities.len()),
    }
    Ok(())
}

pub fn mine_pairs(mut config: RunConfig, args: MineArgs) -> Result<()> {
    let mut run = Run::new("mine-pairs", &args.out)?;
    run.input("responses", &args.responses)?;
    run.input("params", &args.params)?;
    run.optional_input("items", args.items.as_deref())?;
    run.optional_input("template", args.template.as_deref())?;
    if let Some(v) = args.epsilon {
        config.mining.epsilon = v;
    }
    if let Some(v) = args.m {
        config.mining.negatives_per_response = v;
    }
    if let Some(v) = args.train_fraction {
        config.mining.train_fraction = v;
    }
    config.mining.rng_seed = config.stage_seed("mining");

    let fit = irt::read_params(&args.params)?;
    let items = match &args.items {
        Some(p) => read_items(p)?,
        None => Vec::new(),
    };
    let cats = if items.is_empty() {
        fit.item_params
            .iter()
            .map(|(id, p)| (id.clone(), p.num_categories()))
            .collect()
    } else {
        categories_of(&items)
    };
    let template = match &args.template {
        Some(p) => PromptTemplate::from_file(p)?,
        None => PromptTemplate::simulated_student(),
    };
    let responses = read_responses(&args.responses, &cats)?;
    let pairs = mine(&responses, &fit, &config.mining)?;
    let n = export_pairs(&pairs, &items_by_id(&items), &template, run.output("pairs.jsonl"))?;
    write_jsonl(&run.output("pairs_detail.jsonl"), &pairs)?;
    run.finish(&config)?;
    println!("wrote {n} preference pairs");
    Ok(())
}

fn prompt_set(config: &RunConfig) -> Result<PromptSet> {
    let load = |p: &Option<String>, fallback: fn() -> PromptTemplate| -> Result<PromptTemplate> {
        Ok(match p {
            Some(path) => PromptTemplate::from_file(path)?,
            None => fallback(),
        })
    };
    let student = load(&config.backend.student_template, PromptTemplate::simulated_student)?;
    let scorer = load(&config.backend.scorer_template, PromptTemplate::scorer)?;
    Ok(PromptSet::new(student, scorer)?)
}

enum Backends {
    Synthetic(SyntheticGenerator, Option<NoisyScorer<SyntheticScorer>>),
    Subprocess(SubprocessBackend),
    Http(HttpBackend),
}

impl Backends {
    fn pair(&self) -> (&dyn GeneratorBackend, &dyn ScorerBackend) {
        match self {
            Backends::Synthetic(g, Some(noisy)) => (g, noisy),
            Backends::Synthetic(g, None) => (g, &SyntheticScorer),
            Backends::Subprocess(b) => (b, b),
            Backends::Http(b) => (b, b),
        }
    }
}

pub fn simulate(mut config: RunConfig, args: SimulateArgs) -> Result<()> {
    let mut run = Run::new("simulate", &args.out)?;
    run.input("items", &args.items)?;
    run.input("params", &args.params)?;
    run.optional_input("plan", args.plan.as_deref())?;
    run.optional_input("truth", args.truth.as_deref())?;
    if let Some(p) = &args.plan {
        let plan = RunConfig::load(p)?;
        config.simulation = plan.simulation;
        if plan.backend != Default::default() {
            config.backend = plan.backend;
        }
    }
    if let Some(v) = args.population_size {
        config.simulation.population_size = v;
    }
    if let Some(v) = args.parallelism {
        config.simulation.parallelism = v;
    }
    if let Some(w) = &args.worker {
        config.backend.command = w.split_whitespace().map(str::to_string).collect();
    }
    if let Some(u) = &args.url {
        config.backend.url = Some(u.clone());
    }
    if let Some(v) = args.noise {
        config.backend.noise = v;
    }
    config.simulation.rng_seed = config.stage_seed("simulate");
    let plan = config.simulation.clone();
    plan.validate()?;

    let calibrated = irt::read_params(&args.params)?;
    let items = read_items(&args.items)?;
    let train_thetas: Vec<f64> = calibrated.abilities.values().map(|a| a.theta).collect();
    let population = sample_population(&train_thetas, plan.population_size, plan.histogram_bins, plan.rng_seed)?;

    let backends = match args.backend {
        BackendKind::Synthetic => {
            let truth_path = args
                .truth
                .as_ref()
                .ok_or_else(|| UsageError("the synthetic backend needs --truth".into()))?;
            let truth = irt::read_params(truth_path)?;
            if let Some(missing) = items.iter().find(|i| !truth.item_params.contains_key(&i.item_id)) {
                return Err(DataError::Invalid(format!("no ground truth for item `{}`", missing.item_id)).into());
            }
            let noisy = if config.backend.noise > 0.0 {
                Some(NoisyScorer::new(SyntheticScorer, config.backend.noise)?)
            } else {
                None
            };
            Backends::Synthetic(SyntheticGenerator::new(truth.item_params), noisy)
        }
        BackendKind::Subprocess => {
            let (program, rest) = config
                .backend
                .command
                .split_first()
                .ok_or_else(|| UsageError("the subprocess backend needs --worker".into()))?;
            Backends::Subprocess(SubprocessBackend::spawn(program, rest)?.with_prompts(prompt_set(&config)?))
        }
        BackendKind::Http => {
            let url = config
                .backend
                .url
                .clone()
                .ok_or_else(|| UsageError("the http backend needs --url".into()))?;
            let timeout = Duration::from_millis(config.backend.timeout_ms);
            Backends::Http(HttpBackend::new(&url, timeout).with_prompts(prompt_set(&config)?))
        }
    };
    let (generator, scorer) = backends.pair();
    let output = run_simulation(&items, &population, &plan, generator, scorer)?;

    write_jsonl(&run.output("responses.jsonl"), &output.scored())?;
    write_jsonl(&run.output("cells.jsonl"), &output.responses)?;
    write_jsonl(&run.output("failed.jsonl"), &output.failed)?;
    run.write_json("population.json", &population)?;
    run.finish(&config)?;
    println!(
        "simulated {} responses ({} failed cells)",
        output.responses.len(),
        output.failed.len()
    );
    Ok(())
}

pub fn predict_difficulty(mut config: RunConfig, args: PredictArgs) -> Result<()> {
    let mut run = Run::new("predict-difficulty", &args.out)?;
    run.input("train_responses", &args.train_responses)?;
    run.input("sim_responses", &args.sim_responses)?;
    run.input("calibrated", &args.calibrated)?;
    run.optional_input("items", args.items.as_deref())?;
    config.fit.rng_seed = config.stage_seed("refit");

    let calibrated = irt::read_params(&args.calibrated)?;
    let mut cats: BTreeMap<String, usize> = calibrated
        .item_params
        .iter()
        .map(|(id, p)| (id.clone(), p.num_categories()))
        .collect();
    let items = match &args.items {
        Some(p) => Some(read_items(p)?),
        None => None,
    };
    if let Some(items) = &items {
        cats.extend(categories_of(items));
    }
    let train = read_responses(&args.train_responses, &cats)?;
    let sim = match &items {
        Some(_) => read_responses(&args.sim_responses, &cats)?,
        None => {
            let sim = read_responses_unchecked(&args.sim_responses)?;
            infer_categories(&sim, &mut cats);
            sim
        }
    };
    if let Some(items) = &items {
        let seen: std::collections::BTreeSet<&str> =
            train.iter().chain(&sim).map(|r| r.item_id.as_str()).collect();
        let uncovered: Vec<&str> = items
            .iter()
            .map(|i| i.item_id.as_str())
            .filter(|id| !seen.contains(id))
            .collect();
        if !uncovered.is_empty() {
            return Err(DataError::Invalid(format!(
                "no simulated responses for test items: {}",
                uncovered.join(", ")
            ))
            .into());
        }
    }

    let preds = predict_difficulties(&train, &sim, &calibrated, &cats, &config.fit)?;
    write_predictions(run.output("predictions.csv"), &preds)?;
    run.finish(&config)?;
    println!("predicted difficulties for {} unseen items", preds.len());
    Ok(())
}

/// Score categories for items known only from simulated responses: one more
/// than the highest observed score, and at least two.
fn infer_categories(responses: &[ScoredResponse], cats: &mut BTreeMap<String, usize>) {
    let mut highest: BTreeMap<&str, usize> = BTreeMap::new();
    for r in responses {
        let h = highest.entry(&r.item_id).or_insert(0);
        *h = (*h).max(r.score);
    }
    for (id, h) in highest {
        if !cats.contains_key(id) {
            log::warn!("item `{id}` has no declared score range; assuming {} categories", (h + 1).max(2));
            cats.insert(id.to_string(), (h + 1).max(2));
        }
    }
}

#[derive(Debug, Serialize, serde::Deserialize, PartialEq)]
pub struct MetricValue {
    pub value: f64,
    pub n: usize,
}

fn record(report: &mut BTreeMap<String, MetricValue>, name: &str, n: usize, value: Result<f64, MetricError>) {
    match value {
        Ok(value) => {
            report.insert(name.to_string(), MetricValue { value, n });
        }
        Err(e) => log::warn!("{name} not reported: {e}"),
    }
}

fn group_vectors(rows: impl IntoIterator<Item = (String, Vec<f64>)>) -> BTreeMap<String, Vec<Vec<f64>>> {
    let mut out: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
    for (id, v) in rows {
        out.entry(id).or_default().push(v);
    }
    out
}

pub fn evaluate(config: RunConfig, args: EvaluateArgs) -> Result<()> {
    let mut run = Run::new("evaluate", &args.out)?;
    run.input("pred", &args.pred)?;
    run.input("truth", &args.truth)?;
    run.optional_input("sim_responses", args.sim_responses.as_deref())?;
    run.optional_input("embeddings", args.embeddings.as_deref())?;
    run.optional_input("sim_embeddings", args.sim_embeddings.as_deref())?;

    let preds = read_predictions(&args.pred)?;
    let truth = read_difficulties(&args.truth)?;
    let mut predicted = Vec::with_capacity(preds.len());
    let mut actual = Vec::with_capacity(preds.len());
    for p in &preds {
        let t = truth
            .get(&p.item_id)
            .ok_or_else(|| DataError::Invalid(format!("no true difficulty for item `{}`", p.item_id)))?;
        predicted.push(p.normalized_difficulty);
        actual.push(*t);
    }
    let mut report = BTreeMap::new();
    let n = preds.len();
    record(&mut report, "pcc", n, metrics::pcc(&predicted, &actual));
    record(&mut report, "scc", n, metrics::scc(&predicted, &actual));
    record(&mut report, "rmse", n, metrics::rmse(&predicted, &actual));

    let sim = match &args.sim_responses {
        Some(p) => read_responses_unchecked(p)?,
        None => Vec::new(),
    };
    let (thetas, scores): (Vec<f64>, Vec<usize>) =
        sim.iter().filter_map(|r| r.prior_ability.map(|t| (t, r.score))).unzip();
    if !thetas.is_empty() {
        record(&mut report, "theta_align", thetas.len(), metrics::theta_align(&thetas, &scores));
    }

    if let Some(path) = &args.embeddings {
        let reference = group_vectors(read_embeddings(path)?.into_iter().map(|r| (r.item_id, r.vector)));
        let simulated = match &args.sim_embeddings {
            Some(p) => group_vectors(read_embeddings(p)?.into_iter().map(|r| (r.item_id, r.vector))),
            None => group_vectors(
                sim.iter()
                    .filter_map(|r| parse_envelope(&r.text).ok().map(|e| (r.item_id.clone(), e.features))),
            ),
        };
        let mut fids = Vec::new();
        let mut kls = Vec::new();
        for (id, a) in &reference {
            let Some(b) = simulated.get(id) else { continue };
            match (metrics::fid(a, b), metrics::diversity_kl(a, b)) {
                (Ok(f), Ok(k)) => {
                    fids.push(f);
                    kls.push(k);
                }
                (Err(e), _) | (_, Err(e)) => log::warn!("distribution metrics skipped for `{id}`: {e}"),
            }
        }
        if fids.is_empty() {
            log::warn!("no item has enough real and simulated embeddings for FID");
        } else {
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            record(&mut report, "fid", fids.len(), Ok(mean(&fids)));
            record(&mut report, "diversity_kl", kls.len(), Ok(mean(&kls)));
        }
    }

    run.write_json("report.json", &report)?;
    run.finish(&config)?;
    for (name, m) in &report {
        println!("{name}: {:.4} (n = {})", m.value, m.n);
    }
    Ok(())
}

pub fn split_folds(mut config: RunConfig, args: FoldArgs) -> Result<()> {
    let mut run = Run::new("split-folds", &args.out)?;
    run.input("items", &args.items)?;
    run.input("difficulties", &args.difficulties)?;
    if let Some(v) = args.folds {
        config.folds.n_folds = v;
    }
    if let Some(v) = args.buckets {
        config.folds.n_buckets = v;
    }
    if let Some(v) = &args.sizes {
        config.folds.sizes = match v.as_slice() {
            &[train, val, test] => [train, val, test],
            _ => return Err(UsageError("--sizes takes three values: train,val,test".into()).into()),
        };
    }
    let seed = config.stage_seed("folds");

    let items = read_items(&args.items)?;
    let all = read_difficulties(&args.difficulties)?;
    let mut diffs = BTreeMap::new();
    for item in &items {
        let b = all
            .get(&item.item_id)
            .ok_or_else(|| DataError::Invalid(format!("no difficulty for item `{}`", item.item_id)))?;
        diffs.insert(item.item_id.clone(), *b);
    }
    let [train, val, test] = config.folds.sizes;
    let folds = make_folds(&diffs, config.folds.n_folds, config.folds.n_buckets, (train, val, test), seed)?;
    run.write_json("folds.json", &folds)?;
    run.finish(&config)?;
    println!("wrote {} folds over {} items", folds.len(), diffs.len());
    Ok(())
}
