use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use popmaml::harness::{self, output, SweepConfig};
use popmaml::population::{self, TargetKind};
use popmaml::seed::{self, stream};
use serde_json::json;

#[derive(Parser)]
#[command(name = "popmaml", version, about = "Population-based meta-learning benchmark for structural responses")]
struct Cli {
    /// Flat `key = value` configuration file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Export the population datasets of every problem kind as CSV.
    Generate {
        #[arg(long, default_value = "data")]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Meta-train one cell (the first training-population size) and write
    /// its checkpoint.
    Train {
        #[arg(long, default_value = "run")]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Few-shot evaluation of a checkpoint on the testing population.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "run")]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Full protocol for one problem over every training-population size.
    Sweep {
        #[arg(long, default_value = "run")]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Re-render the charts from a results CSV.
    Plot {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the effective configuration in the config-file format.
    ShowConfig {
        #[command(flatten)]
        overrides: Overrides,
    },
}

/// One flag per configuration key.
#[derive(Args, Default)]
struct Overrides {
    /// line1hz | line50hz | frf-pca [default: line1hz]
    #[arg(long)]
    problem: Option<String>,
    /// Comma-separated training-population sizes [default: 2,4,6,8]
    #[arg(long)]
    train_structures: Option<String>,
    /// Comma-separated hidden-layer sizes [default: 10,20,...,100]
    #[arg(long)]
    hidden_sizes: Option<String>,
    /// Comma-separated shot counts [default: 1,...,10]
    #[arg(long)]
    shot_counts: Option<String>,
    /// [default: 200]
    #[arg(long)]
    test_structures: Option<String>,
    /// Evaluation samples per testing structure [default: 100]
    #[arg(long)]
    eval_samples: Option<String>,
    /// Samples per training/validation structure [default: 100]
    #[arg(long)]
    train_samples: Option<String>,
    /// Principal components for frf-pca [default: 3]
    #[arg(long)]
    components: Option<String>,
    /// Master seed
    #[arg(long)]
    seed: Option<String>,
    /// Inner and adaptation learning rate
    #[arg(long)]
    alpha: Option<String>,
    /// Meta learning rate
    #[arg(long)]
    beta: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    inner_batch: Option<String>,
    #[arg(long)]
    meta_batch: Option<String>,
    /// Gradient steps at adaptation time
    #[arg(long)]
    adapt_steps: Option<String>,
    /// true | false
    #[arg(long)]
    second_order: Option<String>,
    /// tanh | sigmoid
    #[arg(long)]
    activation: Option<String>,
    #[arg(long)]
    gp_restarts: Option<String>,
    #[arg(long)]
    stiffness_min: Option<String>,
    #[arg(long)]
    stiffness_max: Option<String>,
    #[arg(long)]
    temperature_min: Option<String>,
    #[arg(long)]
    temperature_max: Option<String>,
    /// Worker threads, 0 for all cores
    #[arg(long)]
    workers: Option<String>,
}

impl Overrides {
    fn pairs(&self) -> Vec<(&'static str, &Option<String>)> {
        vec![
            ("problem", &self.problem),
            ("train_structures", &self.train_structures),
            ("hidden_sizes", &self.hidden_sizes),
            ("shot_counts", &self.shot_counts),
            ("test_structures", &self.test_structures),
            ("eval_samples", &self.eval_samples),
            ("train_samples", &self.train_samples),
            ("components", &self.components),
            ("seed", &self.seed),
            ("alpha", &self.alpha),
            ("beta", &self.beta),
            ("epochs", &self.epochs),
            ("inner_batch", &self.inner_batch),
            ("meta_batch", &self.meta_batch),
            ("adapt_steps", &self.adapt_steps),
            ("second_order", &self.second_order),
            ("activation", &self.activation),
            ("gp_restarts", &self.gp_restarts),
            ("stiffness_min", &self.stiffness_min),
            ("stiffness_max", &self.stiffness_max),
            ("temperature_min", &self.temperature_min),
            ("temperature_max", &self.temperature_max),
            ("workers", &self.workers),
        ]
    }
}

fn load_config(path: Option<&Path>, overrides: &Overrides) -> Result<(SweepConfig, bool)> {
    let mut cfg = SweepConfig::default();
    let mut seeded = false;
    if let Some(p) = path {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        cfg.apply_text(&text)?;
        seeded |= text
            .lines()
            .any(|l| l.split('#').next().unwrap_or("").trim_start().starts_with("seed"));
    }
    for (key, value) in overrides.pairs() {
        if let Some(v) = value {
            cfg.set(key, v)?;
            seeded |= key == "seed";
        }
    }
    cfg.validate()?;
    Ok((cfg, seeded))
}

fn generate(cfg: &SweepConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let n_train = cfg.train_structure_counts.iter().copied().max().unwrap_or(1);
    let cell = cfg.cell(n_train);
    let (train, val, test) = harness::sample_roles(&cell)?;
    let b = &cfg.base;
    let m = b.master_seed;
    let kinds = [
        ("line1hz", TargetKind::LINE_1HZ),
        ("line50hz", TargetKind::LINE_50HZ),
        ("frf", TargetKind::FullFrf),
    ];
    let mut files = Vec::new();
    for (name, kind) in kinds {
        for (role, code, specs, n) in [
            ("train", stream::TRAIN_POPULATION, &train, b.train_samples_per_structure),
            ("validation", stream::VALIDATION_POPULATION, &vec![val.clone()], b.train_samples_per_structure),
            ("test", stream::TEST_POPULATION, &test, b.max_shots() + b.eval_samples_per_structure),
        ] {
            let datasets = specs
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    let sd = seed::derive_seed(m, &[stream::TASK_DATA, code, i as u64]);
                    population::make_task_dataset(s, n, kind, b.temperature_range, &b.grid, sd)
                })
                .collect::<popmaml::Result<Vec<_>>>()?;
            let file = format!("{name}-{role}.csv");
            population::write_datasets_csv(&datasets, &out.join(&file))?;
            files.push(file);
        }
    }
    let mut structures = train.clone();
    structures.push(val);
    structures.extend(test);
    let manifest = population::DatasetManifest {
        grid_hz: b.grid.lines().to_vec(),
        temperature_range: b.temperature_range,
        stiffness_interval: b.stiffness_interval,
        seed: m,
        samples_per_structure: b.train_samples_per_structure,
        structures,
        files,
    };
    std::fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    println!("wrote {} dataset files to {}", manifest.files.len(), out.display());
    Ok(())
}

fn train(cfg: &SweepConfig, out: &Path) -> Result<()> {
    let n = cfg.train_structure_counts[0];
    let cell = cfg.cell(n);
    let data = harness::generate_problem_data(&cell)?;
    let models = harness::train_hidden_sizes(&cell, &data)?;
    let losses = models.iter().map(|m| (m.hidden(), m.best_validation_loss())).collect();
    let selected = harness::select_hidden(&losses)?;
    let stem = format!("{}-n{n}", cell.problem.name());
    let dir = out.join("checkpoints");
    for m in &models {
        output::write_checkpoint(m, &dir.join(format!("{stem}-h{}.json", m.hidden())))?;
    }
    let best = models.iter().find(|m| m.hidden() == selected).expect("selected model exists");
    output::write_checkpoint(best, &dir.join(format!("{stem}.json")))?;
    if let Some(p) = &data.pca {
        std::fs::write(dir.join(format!("{stem}-pca.json")), serde_json::to_string_pretty(p)?)?;
    }
    let summary = json!({
        "problem": cell.problem.name(),
        "n_train_structures": n,
        "validation_losses": losses,
        "selected_hidden": selected,
        "config_text": cfg.to_text(),
    });
    std::fs::write(out.join("train.json"), serde_json::to_string_pretty(&summary)?)?;
    for (h, l) in &losses {
        println!("hidden {h:>4}: validation loss {l:.6e}");
    }
    println!("selected hidden size {selected}; checkpoint {}", dir.join(format!("{stem}.json")).display());
    Ok(())
}

fn evaluate(cfg: &SweepConfig, checkpoint: &Path, out: &Path) -> Result<()> {
    let model = output::read_checkpoint(checkpoint)?;
    let n = cfg.train_structure_counts[0];
    let cell = cfg.cell(n);
    let data = harness::generate_problem_data(&cell)?;
    if model.params.out_dim() != data.validation.target_dim() {
        bail!(
            "checkpoint predicts {} outputs but problem {} has {}",
            model.params.out_dim(),
            cell.problem,
            data.validation.target_dim()
        );
    }
    let (records, _) = harness::evaluate_model(&cell, &model, &data)?;
    let manifest = json!({
        "checkpoint": checkpoint.display().to_string(),
        "problem": cell.problem.name(),
        "n_train_structures": n,
        "sigma_pop": data.sigma_pop,
        "config_text": cfg.to_text(),
        "error_bars": output::ERROR_BAR_CONVENTION,
    });
    output::emit_outputs(&records, &manifest, out)?;
    print_summary(&records);
    Ok(())
}

fn print_summary(records: &[harness::ResultRecord]) {
    println!("{:<9} {:<5} {:>7} {:>6} {:>12} {:>12}", "problem", "method", "n_train", "shots", "nmse_mean", "nmse_std");
    for r in records {
        println!(
            "{:<9} {:<5} {:>7} {:>6} {:>12.4} {:>12.4}",
            r.problem.name(),
            r.method.name(),
            r.n_train_structures,
            r.shots,
            r.nmse_mean,
            r.nmse_std
        );
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let config_path = cli.config.as_deref();
    match cli.command {
        Command::Generate { out, overrides } => {
            let (cfg, _) = load_config(config_path, &overrides)?;
            generate(&cfg, &out)
        }
        Command::Train { out, overrides } => {
            let (cfg, _) = load_config(config_path, &overrides)?;
            train(&cfg, &out)
        }
        Command::Evaluate { checkpoint, out, overrides } => {
            let (cfg, _) = load_config(config_path, &overrides)?;
            evaluate(&cfg, &checkpoint, &out)
        }
        Command::Sweep { out, overrides } => {
            let (cfg, seeded) = load_config(config_path, &overrides)?;
            if !seeded {
                bail!("sweep requires an explicit seed (--seed or `seed = ...` in the config file)");
            }
            let started = std::time::Instant::now();
            let outcome = output::run_sweep(&cfg, Some(&out))?;
            print_summary(&outcome.records());
            log::info!("sweep finished in {:.1}s; results in {}", started.elapsed().as_secs_f64(), out.display());
            Ok(())
        }
        Command::Plot { results, out } => {
            let rows = output::read_results_csv(&results)?;
            let dest = out.unwrap_or_else(|| results.parent().map(Path::to_path_buf).unwrap_or_default());
            for p in output::emit_charts(&rows, &dest)? {
                println!("wrote {}", p.display());
            }
            Ok(())
        }
        Command::ShowConfig { overrides } => {
            let (cfg, _) = load_config(config_path, &overrides)?;
            print!("{}", cfg.to_text());
            Ok(())
        }
    }
}
