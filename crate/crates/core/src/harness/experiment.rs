use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Problem};
use super::metrics::{mean_std, nmse, population_sigma, select_hidden};
use crate::error::{Error, Result};
use crate::gp::{self, Hyperparameters};
use crate::maml::{self, MetaModel, Normalizer};
use crate::pca::{self, PcaModel};
use crate::population::{self, Sample, StructureSpec, TaskDataset};
use crate::seed::{self, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    Maml,
    Gp,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Maml => "MAML",
            Method::Gp => "GP",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "MAML" | "maml" => Ok(Method::Maml),
            "GP" | "gp" => Ok(Method::Gp),
            other => Err(Error::Parse(format!("unknown method `{other}`"))),
        }
    }
}

/// One evaluation cell: method, population size, shots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub problem: Problem,
    pub method: Method,
    pub n_train_structures: usize,
    /// Hidden size of the MAML network; `None` for the GP.
    pub hidden: Option<usize>,
    pub shots: usize,
    /// Mean NMSE over testing structures, percent.
    pub nmse_mean: f64,
    /// 1/N standard deviation of the per-structure NMSE, percent.
    pub nmse_std: f64,
    /// Per-structure NMSE in testing-population order, failed fits omitted.
    pub per_structure_nmse: Vec<f64>,
    /// Ids of structures whose fit failed and were excluded.
    pub failed_structures: Vec<String>,
    pub wall_time: f64,
}

/// A testing structure's data: the shot pool and held-out evaluation samples.
#[derive(Debug, Clone)]
pub struct TestStructure {
    pub spec: StructureSpec,
    pub shot_pool: Vec<Sample>,
    pub evaluation: Vec<Sample>,
}

/// Everything generated for one cell before any model is trained.
#[derive(Debug, Clone)]
pub struct ProblemData {
    pub problem: Problem,
    pub train: Vec<TaskDataset>,
    pub validation: TaskDataset,
    pub test: Vec<TestStructure>,
    /// Present for the FRF problem; targets above are already projected.
    pub pca: Option<PcaModel>,
    pub sigma_pop: f64,
}

impl ProblemData {
    /// Every evaluation target of every testing structure.
    pub fn evaluation_targets(&self) -> impl Iterator<Item = &[f64]> {
        self.test
            .iter()
            .flat_map(|t| t.evaluation.iter().map(|s| s.target.as_slice()))
    }
}

fn relabel(specs: Vec<StructureSpec>, prefix: &str) -> Vec<StructureSpec> {
    specs
        .into_iter()
        .enumerate()
        .map(|(i, s)| s.with_id(format!("{prefix}-{i:03}")))
        .collect()
}

/// Training, validation and testing populations for a configuration.
///
/// Each role draws from its own seed stream. Training structures are the
/// first `n_train` of one fixed sequence, so larger training populations
/// contain the smaller ones, and the testing population does not depend on
/// `n_train` at all.
pub fn sample_roles(config: &ExperimentConfig) -> Result<(Vec<StructureSpec>, StructureSpec, Vec<StructureSpec>)> {
    let m = config.master_seed;
    let interval = config.stiffness_interval;
    let train = population::sample_population(
        config.n_train_structures,
        interval,
        seed::derive_seed(m, &[stream::TRAIN_POPULATION]),
    )?;
    let validation = population::sample_population(1, interval, seed::derive_seed(m, &[stream::VALIDATION_POPULATION]))?;
    let test = population::sample_population(
        config.n_test_structures,
        interval,
        seed::derive_seed(m, &[stream::TEST_POPULATION]),
    )?;
    let validation = relabel(validation, "val").remove(0);
    Ok((relabel(train, "train"), validation, relabel(test, "test")))
}

/// Generates (and for the FRF problem, projects) all task data of a cell.
pub fn generate_problem_data(config: &ExperimentConfig) -> Result<ProblemData> {
    config.validate()?;
    let (train_specs, val_spec, test_specs) = sample_roles(config)?;
    let kind = config.problem.target_kind();
    let m = config.master_seed;
    let range = config.temperature_range;
    let grid = &config.grid;
    let task_seed = |role: u64, i: usize| seed::derive_seed(m, &[stream::TASK_DATA, role, i as u64]);

    let train = train_specs
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            population::make_task_dataset(s, config.train_samples_per_structure, kind, range, grid, task_seed(stream::TRAIN_POPULATION, i))
        })
        .collect::<Result<Vec<_>>>()?;
    let validation = population::make_task_dataset(
        &val_spec,
        config.train_samples_per_structure,
        kind,
        range,
        grid,
        task_seed(stream::VALIDATION_POPULATION, 0),
    )?;
    let pool = config.max_shots();
    let test = test_specs
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut d = population::make_task_dataset(
                s,
                pool + config.eval_samples_per_structure,
                kind,
                range,
                grid,
                task_seed(stream::TEST_POPULATION, i),
            )?;
            let evaluation = d.samples.split_off(pool);
            Ok(TestStructure {
                spec: d.structure,
                shot_pool: d.samples,
                evaluation,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let (train, validation, test, pca) = if config.problem == Problem::FullFrfPca {
        let corpus: Vec<Vec<f64>> = train
            .iter()
            .chain(std::iter::once(&validation))
            .flat_map(|t| t.samples.iter().map(|s| s.target.clone()))
            .collect();
        let model = pca::pca_fit(&corpus, config.n_components)?;
        let project = |y: &[f64]| pca::pca_transform(&model, y).expect("dimension checked by fit");
        let train = train.iter().map(|t| t.map_targets(project)).collect();
        let validation = validation.map_targets(project);
        let proj_samples = |v: &[Sample]| {
            v.iter()
                .map(|s| Sample {
                    input: s.input,
                    target: project(&s.target),
                })
                .collect()
        };
        let test = test
            .iter()
            .map(|t| TestStructure {
                spec: t.spec.clone(),
                shot_pool: proj_samples(&t.shot_pool),
                evaluation: proj_samples(&t.evaluation),
            })
            .collect();
        (train, validation, test, Some(model))
    } else {
        (train, validation, test, None)
    };

    let mut data = ProblemData {
        problem: config.problem,
        train,
        validation,
        test,
        pca,
        sigma_pop: 0.0,
    };
    data.sigma_pop = population_sigma(data.evaluation_targets())?;
    audit_leakage(&data)?;
    Ok(data)
}

/// Testing structures never share ids with training/validation structures,
/// and no evaluation sample is also a shot.
pub fn audit_leakage(data: &ProblemData) -> Result<()> {
    let known: std::collections::HashSet<&str> = data
        .train
        .iter()
        .chain(std::iter::once(&data.validation))
        .map(|t| t.structure.id.as_str())
        .collect();
    for t in &data.test {
        if known.contains(t.spec.id.as_str()) {
            return Err(Error::invalid(format!("testing structure {} also used for training", t.spec.id)));
        }
        let shots: std::collections::HashSet<u64> = t.shot_pool.iter().map(|s| s.input.to_bits()).collect();
        if t.evaluation.iter().any(|s| shots.contains(&s.input.to_bits())) {
            return Err(Error::invalid(format!("structure {} has a shot among its evaluation samples", t.spec.id)));
        }
    }
    Ok(())
}

/// Summary of one trained hidden size.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HiddenCandidate {
    pub hidden: usize,
    pub validation_loss: f64,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GpFitLog {
    pub structure_id: String,
    pub shots: usize,
    /// One entry per output dimension.
    pub hyperparameters: Vec<Hyperparameters>,
}

/// Everything a cell produces.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub config: ExperimentConfig,
    pub records: Vec<ResultRecord>,
    pub candidates: Vec<HiddenCandidate>,
    pub selected_hidden: usize,
    pub model: MetaModel,
    pub data: ProblemData,
    pub gp_fits: Vec<GpFitLog>,
    pub training_seconds: f64,
}

/// Meta-trains every hidden size and returns all models in `hidden_sizes`
/// order.
pub fn train_hidden_sizes(config: &ExperimentConfig, data: &ProblemData) -> Result<Vec<MetaModel>> {
    let maml_cfg = training_config(config);
    config
        .hidden_sizes
        .par_iter()
        .map(|&h| maml::meta_train(&data.train, &data.validation, h, &maml_cfg))
        .collect()
}

fn training_config(config: &ExperimentConfig) -> maml::MamlConfig {
    maml::MamlConfig {
        seed: config.master_seed,
        ..config.maml.clone()
    }
}

/// Per-shot-count scores of one testing structure.
struct StructureEval {
    maml: Vec<f64>,
    /// GP score and fitted hyperparameters per shot count, or the first
    /// fit error, which excludes the structure from the GP aggregate.
    gp: std::result::Result<Vec<(f64, Vec<Hyperparameters>)>, String>,
}

fn evaluate_structure(
    config: &ExperimentConfig,
    model: &MetaModel,
    sigma: f64,
    index: usize,
    t: &TestStructure,
) -> Result<StructureEval> {
    let norm = &model.normalizer;
    let observations: Vec<Vec<f64>> = t.evaluation.iter().map(|s| s.target.clone()).collect();
    let eval_inputs: Vec<f64> = t.evaluation.iter().map(|s| norm.input(s.input)).collect();
    let mut maml_scores = Vec::with_capacity(config.shot_counts.len());
    let mut gp = Ok(Vec::with_capacity(config.shot_counts.len()));
    for &shots in &config.shot_counts {
        let support = &t.shot_pool[..shots];
        let adapted = maml::adapt(model, support, model.config.adapt_steps, model.config.alpha)?;
        let preds = t
            .evaluation
            .iter()
            .map(|s| model.predict(&adapted, s.input))
            .collect::<Result<Vec<_>>>()?;
        maml_scores.push(nmse(&preds, &observations, sigma)?);

        if let Ok(scores) = &mut gp {
            match gp_predictions(config, norm, index, shots, support, &eval_inputs) {
                Ok((preds, hyper)) => scores.push((nmse(&preds, &observations, sigma)?, hyper)),
                Err(e) => gp = Err(e.to_string()),
            }
        }
    }
    Ok(StructureEval { maml: maml_scores, gp })
}

fn gp_predictions(
    config: &ExperimentConfig,
    norm: &Normalizer,
    index: usize,
    shots: usize,
    support: &[Sample],
    eval_inputs: &[f64],
) -> Result<(Vec<Vec<f64>>, Vec<Hyperparameters>)> {
    let xs: Vec<f64> = support.iter().map(|s| norm.input(s.input)).collect();
    let ys: Vec<Vec<f64>> = support.iter().map(|s| norm.target(&s.target)).collect();
    let gp_seed = seed::derive_seed(config.master_seed, &[stream::GP, index as u64, shots as u64]);
    let models = gp::gp_fit_multi(&xs, &ys, config.gp_restarts, gp_seed)?;
    let per_dim: Vec<Vec<f64>> = models.iter().map(|m| m.predict_mean(eval_inputs)).collect();
    let preds = (0..eval_inputs.len())
        .map(|i| {
            let z: Vec<f64> = per_dim.iter().map(|d| d[i]).collect();
            norm.denormalize_target(&z)
        })
        .collect();
    Ok((preds, models.iter().map(|m| m.hyper).collect()))
}

/// Runs one cell end to end: data generation, meta-training of every hidden
/// size, selection on the validation structure, and few-shot evaluation of
/// MAML and the GP on every testing structure.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    config.validate()?;
    let pool = match config.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::invalid(format!("cannot build worker pool: {e}")))?,
        None => rayon::ThreadPoolBuilder::new()
            .build()
            .map_err(|e| Error::invalid(format!("cannot build worker pool: {e}")))?,
    };
    pool.install(|| run_experiment_inner(config))
}

fn run_experiment_inner(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let data = generate_problem_data(config)?;
    let started = Instant::now();
    let models = train_hidden_sizes(config, &data)?;
    let training_seconds = started.elapsed().as_secs_f64();
    let candidates: Vec<HiddenCandidate> = models
        .iter()
        .map(|m| HiddenCandidate {
            hidden: m.hidden(),
            validation_loss: m.best_validation_loss(),
            best_epoch: m.best_epoch,
        })
        .collect();
    let losses: BTreeMap<usize, f64> = candidates.iter().map(|c| (c.hidden, c.validation_loss)).collect();
    let selected_hidden = select_hidden(&losses)?;
    let model = models
        .into_iter()
        .find(|m| m.hidden() == selected_hidden)
        .expect("selected hidden size was trained");
    log::info!(
        "{} n_train={}: selected hidden={} (validation loss {:.4e})",
        config.problem,
        config.n_train_structures,
        selected_hidden,
        losses[&selected_hidden]
    );

    let (records, gp_fits) = evaluate_model(config, &model, &data)?;
    Ok(ExperimentOutcome {
        config: config.clone(),
        records,
        candidates,
        selected_hidden,
        model,
        data,
        gp_fits,
        training_seconds,
    })
}

/// Few-shot evaluation of a trained model and the GP baseline on every
/// testing structure, one MAML and one GP record per shot count.
pub fn evaluate_model(
    config: &ExperimentConfig,
    model: &MetaModel,
    data: &ProblemData,
) -> Result<(Vec<ResultRecord>, Vec<GpFitLog>)> {
    let started = Instant::now();
    let evals = data
        .test
        .par_iter()
        .enumerate()
        .map(|(i, t)| evaluate_structure(config, model, data.sigma_pop, i, t))
        .collect::<Result<Vec<_>>>()?;
    let elapsed = started.elapsed().as_secs_f64();

    let mut records = Vec::with_capacity(2 * config.shot_counts.len());
    let mut gp_fits = Vec::new();
    let failed: Vec<String> = data
        .test
        .iter()
        .zip(&evals)
        .filter(|(_, e)| e.gp.is_err())
        .map(|(t, _)| t.spec.id.clone())
        .collect();
    if !failed.is_empty() {
        log::warn!(
            "{} n_train={}: GP fit failed on {} of {} testing structures; excluded from GP aggregate",
            config.problem,
            config.n_train_structures,
            failed.len(),
            data.test.len()
        );
    }
    for (k, &shots) in config.shot_counts.iter().enumerate() {
        let maml_scores: Vec<f64> = evals.iter().map(|e| e.maml[k]).collect();
        let (m, s) = mean_std(&maml_scores);
        records.push(ResultRecord {
            problem: config.problem,
            method: Method::Maml,
            n_train_structures: config.n_train_structures,
            hidden: Some(model.hidden()),
            shots,
            nmse_mean: m,
            nmse_std: s,
            per_structure_nmse: maml_scores,
            failed_structures: Vec::new(),
            wall_time: elapsed,
        });
        let mut gp_scores = Vec::with_capacity(evals.len());
        for (t, e) in data.test.iter().zip(&evals) {
            if let Ok(v) = &e.gp {
                gp_scores.push(v[k].0);
                gp_fits.push(GpFitLog {
                    structure_id: t.spec.id.clone(),
                    shots,
                    hyperparameters: v[k].1.clone(),
                });
            }
        }
        let (m, s) = mean_std(&gp_scores);
        records.push(ResultRecord {
            problem: config.problem,
            method: Method::Gp,
            n_train_structures: config.n_train_structures,
            hidden: None,
            shots,
            nmse_mean: m,
            nmse_std: s,
            per_structure_nmse: gp_scores,
            failed_structures: failed.clone(),
            wall_time: elapsed,
        });
    }
    Ok((records, gp_fits))
}

/// NMSE of a predictor that always outputs the testing population's mean
/// target, averaged over testing structures.
pub fn mean_predictor_nmse(data: &ProblemData) -> Result<f64> {
    let targets: Vec<&[f64]> = data.evaluation_targets().collect();
    let dim = targets.first().ok_or(Error::Empty("evaluation targets"))?.len();
    let mut mean = vec![0.0; dim];
    for t in &targets {
        mean.iter_mut().zip(t.iter()).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= targets.len() as f64);
    let scores = data
        .test
        .iter()
        .map(|t| {
            let obs: Vec<Vec<f64>> = t.evaluation.iter().map(|s| s.target.clone()).collect();
            nmse(&vec![mean.clone(); obs.len()], &obs, data.sigma_pop)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_std(&scores).0)
}
