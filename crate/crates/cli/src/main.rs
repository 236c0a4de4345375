//! `ogae`: corrupted-digit anomaly detection experiments from the command line.

mod config;
mod workspace;

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use log::info;

use ogae_core::data::{anomaly_labels, build_experiment1_splits, load_mnist, LabeledImageSet};
use ogae_core::metrics::{curve_metrics, paired_bootstrap_report, ModelScores, TestReport};
use ogae_core::models::{read_checkpoint, write_checkpoint, Autoencoder};
use ogae_core::ocsvm::SolutionFile;
use ogae_core::pipeline::{
    fit_final_ocsvm, hyperparameter_search, score_set, train_ogae, ExperimentManifest, Method, MetricBlock,
    TrainConfig,
};

use config::CliConfig;
use workspace::{read_splits, write_splits, Workspace};

/// A required input is absent or does not match the manifest (exit code 2).
#[derive(Debug)]
pub struct MissingInput(pub String);

impl fmt::Display for MissingInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for MissingInput {}

#[derive(Parser, Debug)]
#[command(name = "ogae", version, about = "OCSVM-guided autoencoders for anomaly detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON configuration file; defaults apply to absent keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory shared by all subcommands.
    #[arg(long, global = true, default_value = "runs/default")]
    out: PathBuf,
    /// Overrides the model and bootstrap seeds of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for the grid search and the bootstrap.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Build the corrupted train/early-stop/validation/test caches.
    Corrupt,
    /// Train one autoencoder per method (after the grid search, if configured).
    Train,
    /// Fit the final OCSVM of each OCSVM-scored method.
    FitSvm,
    /// Write per-sample anomaly scores of the validation and test sets.
    Score,
    /// Compute metrics and the paired bootstrap comparison.
    Evaluate,
    /// Check artifact hashes and print the comparison table.
    Report,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Corrupt => "corrupt",
            Command::Train => "train",
            Command::FitSvm => "fit-svm",
            Command::Score => "score",
            Command::Evaluate => "evaluate",
            Command::Report => "report",
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(core) = cause.downcast_ref::<ogae_core::Error>() {
            return if core.is_numeric() { 3 } else { 2 };
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    let config = CliConfig::load(cli.config.as_deref())?.with_seed(cli.seed);
    let start = Instant::now();
    let fresh = matches!(cli.command, Command::Corrupt);
    let mut ws = Workspace::open(&cli.out, &config, fresh)?;
    let jobs = cli.jobs.max(1);
    match cli.command {
        Command::Corrupt => corrupt(&mut ws, &config)?,
        Command::Train => train(&mut ws, &config, jobs)?,
        Command::FitSvm => fit_svm(&mut ws, &config)?,
        Command::Score => score(&mut ws, &config)?,
        Command::Evaluate => evaluate(&mut ws, &config, jobs)?,
        Command::Report => report(&mut ws)?,
    }
    ws.record_step(cli.command.name(), start.elapsed().as_secs_f64());
    ws.save()
}

fn corrupt(ws: &mut Workspace, config: &CliConfig) -> Result<()> {
    let dir = &config.data.mnist_dir;
    if !dir.join("train-images-idx3-ubyte").exists() {
        bail!(MissingInput(format!(
            "MNIST IDX files not found in {} (set data.mnist_dir)",
            dir.display()
        )));
    }
    let (train, test) = load_mnist(dir)?;
    let splits = build_experiment1_splits(&train, &test, &config.data.experiment)?;
    write_splits(ws, &splits)?;
    println!(
        "train {} / early stop {} / validation {} / test {}",
        splits.train.len(),
        splits.earlystop.len(),
        splits.val.len(),
        splits.test.len()
    );
    Ok(())
}

fn checkpoint_path(method: Method) -> String {
    format!("models/{}.ckpt", method.id())
}

fn train(ws: &mut Workspace, config: &CliConfig, jobs: usize) -> Result<()> {
    let splits = read_splits(ws)?;
    let outlier = config.data.experiment.outlier;
    // Methods with identical effective training configs share one model.
    let mut done: HashMap<String, (Vec<u8>, ogae_core::pipeline::TrainingLog, f64)> = HashMap::new();
    for &method in &config.methods {
        let cells = config.search.cells(&config.train, method);
        let chosen: TrainConfig = if cells.len() > 1 {
            let search = hyperparameter_search(method, &cells, &splits, outlier, jobs)?;
            ws.write_json(&format!("search/{}.json", method.id()), &search)?;
            search.best_config().clone()
        } else {
            cells[0].clone()
        };
        let mut key_cfg = chosen.clone();
        key_cfg.scale_latents = false;
        if key_cfg.guidance.lambda == 0.0 {
            key_cfg.nu = 0.0;
            key_cfg.gamma = 0.0;
            key_cfg.guidance = Default::default();
            key_cfg.guidance.lambda = 0.0;
        }
        let key = serde_json::to_string(&key_cfg)?;
        if !done.contains_key(&key) {
            let t = Instant::now();
            let outcome = train_ogae(&splits.train, &splits.earlystop, &chosen)?;
            let mut bytes = Vec::new();
            write_checkpoint(&outcome.model, &mut bytes)?;
            done.insert(key.clone(), (bytes, outcome.log, t.elapsed().as_secs_f64()));
        }
        let (bytes, log, seconds) = &done[&key];
        ws.write_bytes(&checkpoint_path(method), bytes)?;
        ws.write_json(&format!("models/{}.log.json", method.id()), log)?;
        let mut m = ExperimentManifest::new(method, &chosen, &config.data.experiment, &splits);
        m.best_epoch = Some(log.best_epoch);
        m.wall_clock_seconds = *seconds;
        m.artifacts.insert("checkpoint".into(), ws.manifest.artifacts[&checkpoint_path(method)].clone());
        ws.manifest.methods.insert(method.id().to_string(), m);
        println!("{}: trained (best epoch {}, {:.0} s)", method.id(), log.best_epoch, seconds);
    }
    Ok(())
}

fn method_entry<'a>(ws: &'a Workspace, method: Method) -> Result<&'a ExperimentManifest> {
    ws.manifest
        .methods
        .get(method.id())
        .ok_or_else(|| MissingInput(format!("{} has not been trained; run `ogae train` first", method.id())).into())
}

fn load_model(ws: &Workspace, method: Method) -> Result<Autoencoder> {
    let path = ws.verify(&checkpoint_path(method))?;
    let file = fs::File::open(&path)?;
    Ok(read_checkpoint(std::io::BufReader::new(file))?)
}

fn solution_path(method: Method) -> String {
    format!("svm/{}.solution.json", method.id())
}

fn fit_svm(ws: &mut Workspace, config: &CliConfig) -> Result<()> {
    let splits = read_splits(ws)?;
    let all = splits.full_train();
    for &method in config.methods.iter().filter(|m| m.uses_ocsvm()) {
        let cfg = method_entry(ws, method)?.config.clone();
        let model = load_model(ws, method)?;
        let (file, sol) = fit_final_ocsvm(&model, &all, &cfg)
            .with_context(|| format!("final OCSVM of {}", method.id()))?;
        let rel = solution_path(method);
        ws.write_json(&rel, &file)?;
        let entry = ws.manifest.methods.get_mut(method.id()).expect("checked above");
        entry.artifacts.insert("solution".into(), ws.manifest.artifacts[&rel].clone());
        println!(
            "{}: {} support vectors ({} on the margin), rho {:.6}, {} iterations",
            method.id(),
            file.support_indices.len(),
            sol.margin_sv_indices.len(),
            sol.rho,
            sol.iterations
        );
    }
    Ok(())
}

fn score_path(method: Method, split: &str) -> String {
    format!("scores/{}.{split}.csv", method.id())
}

fn sample_id(set: &LabeledImageSet, i: usize) -> String {
    let origin = match set.origins[i] {
        ogae_core::data::Origin::MnistTrain => "mnist-train",
        ogae_core::data::Origin::MnistTest => "mnist-test",
        ogae_core::data::Origin::External => "external",
    };
    format!("{origin}:{}:{}", set.source_index[i], set.corruptions[i])
}

fn score(ws: &mut Workspace, config: &CliConfig) -> Result<()> {
    let splits = read_splits(ws)?;
    let outlier = config.data.experiment.outlier;
    for &method in &config.methods {
        method_entry(ws, method)?;
        let model = load_model(ws, method)?;
        let solution: Option<SolutionFile> = if method.uses_ocsvm() {
            Some(ws.read_json(&solution_path(method))?)
        } else {
            None
        };
        for (name, set) in [("validation", &splits.val), ("test", &splits.test)] {
            let s = score_set(&model, solution.as_ref(), set)?;
            let scores = if method.uses_ocsvm() { s.ocsvm.expect("solution given") } else { s.recons };
            let labels = anomaly_labels(set, outlier);
            let mut csv = String::from("id,label,score\n");
            for i in 0..set.len() {
                csv.push_str(&format!("{},{},{}\n", sample_id(set, i), labels[i] as u8, scores[i]));
            }
            let rel = score_path(method, name);
            ws.write_bytes(&rel, csv.as_bytes())?;
            let entry = ws.manifest.methods.get_mut(method.id()).expect("checked above");
            entry.artifacts.insert(format!("{name}-scores"), ws.manifest.artifacts[&rel].clone());
        }
        println!("{}: scored {} validation and {} test samples", method.id(), splits.val.len(), splits.test.len());
    }
    Ok(())
}

struct ScoreTable {
    ids: Vec<String>,
    labels: Vec<bool>,
    scores: Vec<f64>,
}

fn read_scores(ws: &Workspace, rel: &str) -> Result<ScoreTable> {
    let path = ws.verify(rel)?;
    let text = fs::read_to_string(&path)?;
    let mut lines = text.lines();
    if lines.next() != Some("id,label,score") {
        bail!(MissingInput(format!("{rel}: unexpected header")));
    }
    let mut t = ScoreTable {
        ids: Vec::new(),
        labels: Vec::new(),
        scores: Vec::new(),
    };
    for (k, line) in lines.enumerate() {
        let mut parts = line.split(',');
        let (Some(id), Some(label), Some(score), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
            bail!(MissingInput(format!("{rel}:{}: expected three fields", k + 2)));
        };
        t.ids.push(id.to_string());
        t.labels.push(match label {
            "0" => false,
            "1" => true,
            _ => bail!(MissingInput(format!("{rel}:{}: label must be 0 or 1", k + 2))),
        });
        t.scores.push(score.parse().with_context(|| format!("{rel}:{}", k + 2))?);
    }
    Ok(t)
}

fn evaluate(ws: &mut Workspace, config: &CliConfig, jobs: usize) -> Result<()> {
    let mut test_models = Vec::new();
    let mut test_labels: Option<(Vec<String>, Vec<bool>)> = None;
    for &method in &config.methods {
        method_entry(ws, method)?;
        let val = read_scores(ws, &score_path(method, "validation"))?;
        let test = read_scores(ws, &score_path(method, "test"))?;
        let block = MetricBlock {
            validation: curve_metrics(&val.scores, &val.labels)?,
            test: curve_metrics(&test.scores, &test.labels)?,
        };
        match &test_labels {
            None => test_labels = Some((test.ids.clone(), test.labels.clone())),
            Some((ids, labels)) => {
                if *ids != test.ids || *labels != test.labels {
                    bail!(MissingInput(format!("{} scored a different test set", method.id())));
                }
            }
        }
        ws.manifest.methods.get_mut(method.id()).expect("checked above").metrics = Some(block);
        test_models.push(ModelScores {
            name: method.id().to_string(),
            scores: test.scores,
        });
    }
    let Some((_, labels)) = test_labels else {
        bail!(MissingInput("no methods configured".into()));
    };
    let report = paired_bootstrap_report(
        &test_models,
        &labels,
        config.bootstrap.resamples,
        config.bootstrap.seed,
        jobs,
    )?;
    ws.write_json("report.json", &report)?;
    print!("{}", report.render_table());
    Ok(())
}

fn report(ws: &mut Workspace) -> Result<()> {
    ws.verify_all()?;
    for (name, m) in &ws.manifest.methods {
        for (kind, a) in &m.artifacts {
            let Some(current) = ws.manifest.artifacts.get(&a.path) else {
                bail!(MissingInput(format!("{name}: {kind} artifact {} is not recorded", a.path)));
            };
            if current.sha256 != a.sha256 {
                bail!(MissingInput(format!(
                    "{name}: {kind} artifact {} was replaced after the method used it",
                    a.path
                )));
            }
        }
    }
    let report: TestReport = ws.read_json("report.json")?;
    let table = report.render_table();
    ws.write_bytes("report.txt", table.as_bytes())?;
    print!("{table}");
    info!("all {} artifacts match the manifest", ws.manifest.artifacts.len());
    Ok(())
}
