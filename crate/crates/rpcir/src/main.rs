//! rpcir command line: dataset validation, path statistics, training,
//! evaluation, rule export, lambda sweeps and gradient self-checks.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use rpcir::error::{Error, Result};
use rpcir::evaluator::{self, EvalConfig};
use rpcir::kg::{validate_inductive_split, InductiveSplit, KnowledgeGraph, Triple};
use rpcir::model::{Model, ModelConfig, PathEncoder};
use rpcir::paths::count_paths_stats;
use rpcir::rules::{extract_rules, format_rule, rules_to_tsv};
use rpcir::synth::{self, SynthConfig};
use rpcir::trainer::{self, Ablation, TrainConfig};

#[derive(Parser)]
#[command(name = "rpcir", version, about = "Inductive relation prediction with relational path contrast")]
struct Cli {
    /// Worker threads for evaluation (fallback: env RPCIR_THREADS).
    /// Training itself is single-threaded for determinism.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the fully-inductive split invariants
    Validate {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Subgraph/path statistics over the training targets
    Stats {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 3)]
        k: usize,
        #[arg(long, default_value_t = 3)]
        lmax: usize,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Train a model and write a checkpoint
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Evaluate a checkpoint on the ind-test split
    Eval {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 10)]
        k_rank: usize,
        #[arg(long, default_value_t = 50)]
        num_negatives: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// include per-triple scores and ranks in the report
        #[arg(long)]
        dump_scores: bool,
        /// disable the path branch (for checkpoints trained with the
        /// no-paths ablation)
        #[arg(long)]
        no_paths: bool,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Extract first-order rules with confidences from a checkpoint
    Rules {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        min_confidence: f64,
        /// which side's target subgraphs to mine: the ind-test or train split
        #[arg(long, value_enum, default_value_t = RuleSide::Test)]
        on: RuleSide,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Grid over (lambda1, lambda2): mean AUC-PR over seeds as a CSV heat-map
    Sweep {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_delimiter = ',', default_value = "0.2,0.4,0.6,0.8,1.0,1.2")]
        lambda1: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0.2,0.4,0.6,0.8,1.0,1.2")]
        lambda2: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
        seeds: Vec<u64>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Finite-difference check of the full training loss
    Gradcheck {
        #[arg(long, default_value_t = 4)]
        dim: usize,
        #[arg(long, default_value_t = 5)]
        examples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        #[command(flatten)]
        out: OutArgs,
    },
}

#[derive(Args)]
struct OutArgs {
    /// directory for all artifacts (created if missing)
    #[arg(long, default_value = "rpcir_out")]
    output_dir: PathBuf,
}

#[derive(Args)]
struct DataArgs {
    /// dataset directory containing train/valid/test.txt; the ind-test half
    /// defaults to the sibling <dir>_ind
    #[arg(long, conflicts_with = "synthetic")]
    dataset: Option<PathBuf>,
    /// explicit ind-test directory
    #[arg(long, requires = "dataset")]
    ind_dataset: Option<PathBuf>,
    /// use the built-in planted-rule synthetic split instead of files
    #[arg(long)]
    synthetic: bool,
    /// generator seed for --synthetic
    #[arg(long, default_value_t = 0)]
    synth_seed: u64,
}

impl DataArgs {
    fn load(&self) -> Result<(InductiveSplit, String)> {
        if self.synthetic {
            let data = synth::generate(&SynthConfig {
                seed: self.synth_seed,
                ..SynthConfig::default()
            })?;
            return Ok((data.split, format!("synthetic(seed={})", self.synth_seed)));
        }
        match &self.dataset {
            Some(dir) => {
                let split = match &self.ind_dataset {
                    Some(ind) => InductiveSplit::load_pair(dir, ind)?,
                    None => InductiveSplit::load(dir)?,
                };
                Ok((split, dir.display().to_string()))
            }
            None => Err(Error::State(
                "either --dataset or --synthetic is required".into(),
            )),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum EncoderArg {
    Cbow,
    Cnn,
}

#[derive(Clone, Copy, ValueEnum)]
enum AblationArg {
    Full,
    NoPaths,
    NoContrasts,
}

#[derive(Clone, Copy, ValueEnum)]
enum RuleSide {
    Train,
    Test,
}

/// Optional JSON config file plus flag overrides; flags win.
#[derive(Args)]
struct ConfigArgs {
    /// JSON file with {"model": {...}, "train": {...}} (both sections optional)
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    lmax: Option<usize>,
    #[arg(long, value_enum)]
    encoder: Option<EncoderArg>,
    #[arg(long)]
    edge_dropout: Option<f64>,
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    ablation: Option<AblationArg>,
}

#[derive(serde::Deserialize, Default)]
#[serde(default)]
struct ConfigFile {
    model: Option<ModelConfig>,
    train: Option<TrainConfig>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<(ModelConfig, TrainConfig)> {
        let file = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
                    path: path.clone(),
                    source,
                })?;
                serde_json::from_str::<ConfigFile>(&text).map_err(|e| Error::Parse {
                    path: path.clone(),
                    line: e.line(),
                    msg: e.to_string(),
                })?
            }
            None => ConfigFile::default(),
        };
        let mut model = file.model.unwrap_or_default();
        let mut train = file.train.unwrap_or_default();
        if let Some(v) = self.dim {
            model.dim = v;
        }
        if let Some(v) = self.layers {
            model.num_layers = v;
        }
        if let Some(v) = self.k {
            model.k = v;
        }
        if let Some(v) = self.lmax {
            model.l_max = v;
        }
        if let Some(v) = self.encoder {
            model.path_encoder = match v {
                EncoderArg::Cbow => PathEncoder::Cbow,
                EncoderArg::Cnn => PathEncoder::Cnn,
            };
        }
        if let Some(v) = self.edge_dropout {
            model.edge_dropout = v;
        }
        if let Some(v) = self.margin {
            train.margin = v;
        }
        if let Some(v) = self.lambda1 {
            train.lambda1 = v;
        }
        if let Some(v) = self.lambda2 {
            train.lambda2 = v;
        }
        if let Some(v) = self.lr {
            train.learning_rate = v;
        }
        if let Some(v) = self.batch_size {
            train.batch_size = v;
        }
        if let Some(v) = self.epochs {
            train.epochs = v;
        }
        if let Some(v) = self.seed {
            train.seed = v;
        }
        if let Some(v) = self.ablation {
            train.ablation = match v {
                AblationArg::Full => Ablation::Full,
                AblationArg::NoPaths => Ablation::NoPaths,
                AblationArg::NoContrasts => Ablation::NoContrasts,
            };
        }
        model.validate()?;
        Ok((model, train))
    }
}

#[derive(Serialize)]
struct Manifest<C: Serialize> {
    version: String,
    command: String,
    dataset: String,
    config: C,
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|source| Error::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    std::fs::write(path, contents).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_manifest<C: Serialize>(out: &OutArgs, command: &str, dataset: &str, config: C) -> Result<()> {
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.to_string(),
        dataset: dataset.to_string(),
        config,
    };
    write_file(
        &out.output_dir.join("manifest.json"),
        &serde_json::to_string_pretty(&manifest).expect("serialize manifest"),
    )
}

fn load_checkpoint(path: &Path) -> Result<Model> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Model::from_json(&text)
}

/// Targets restricted to base relations (graph files never contain inverse
/// ids, but be defensive about programmatic splits).
fn base_targets(targets: &[Triple], g: &KnowledgeGraph) -> Vec<Triple> {
    targets
        .iter()
        .filter(|t| t.relation < g.num_base_relations())
        .copied()
        .collect()
}

fn run(cli: Cli) -> Result<i32> {
    if let Some(n) = cli
        .threads
        .or_else(|| std::env::var("RPCIR_THREADS").ok().and_then(|v| v.parse().ok()))
    {
        // Ignore the error if a global pool already exists (e.g. under tests).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::Validate { data, out } => {
            let (split, name) = data.load()?;
            let report = validate_inductive_split(&split);
            let json = serde_json::to_string_pretty(&report).expect("serialize report");
            write_file(&out.output_dir.join("validate.json"), &json)?;
            write_manifest(&out, "validate", &name, serde_json::json!({}))?;
            println!("{json}");
            Ok(if report.pass() { 0 } else { 3 })
        }
        Command::Stats { data, k, lmax, out } => {
            let (split, name) = data.load()?;
            let g = split.train_graph.add_inverse_relations()?;
            let targets = base_targets(&split.train_targets, &g);
            let stats = count_paths_stats(&g, &targets, k, lmax)?;
            let json = serde_json::to_string_pretty(&stats).expect("serialize stats");
            write_file(&out.output_dir.join("stats.json"), &json)?;
            write_manifest(&out, "stats", &name, serde_json::json!({"k": k, "lmax": lmax}))?;
            println!("{json}");
            Ok(0)
        }
        Command::Train { data, cfg, out } => {
            let (split, name) = data.load()?;
            let (model_cfg, train_cfg) = cfg.resolve()?;
            let g = split.train_graph.add_inverse_relations()?;
            let targets = base_targets(&split.train_targets, &g);
            let outcome = trainer::train(&g, &targets, &split.valid_targets, model_cfg.clone(), &train_cfg)?;
            write_file(&out.output_dir.join("checkpoint.json"), &outcome.model.to_json())?;
            let log_lines: String = outcome
                .log
                .iter()
                .map(|e| serde_json::to_string(e).expect("serialize epoch") + "\n")
                .collect();
            write_file(&out.output_dir.join("train_log.jsonl"), &log_lines)?;
            write_manifest(
                &out,
                "train",
                &name,
                serde_json::json!({"model": model_cfg, "train": train_cfg}),
            )?;
            if let Some(last) = outcome.log.last() {
                println!(
                    "trained {} epochs; final mean loss {:.4}; best epoch {:?}",
                    outcome.log.len(),
                    last.mean_loss,
                    outcome.best_epoch
                );
            } else {
                println!("trained 0 epochs (initialization checkpoint written)");
            }
            Ok(0)
        }
        Command::Eval {
            data,
            checkpoint,
            k_rank,
            num_negatives,
            seed,
            dump_scores,
            no_paths,
            out,
        } => {
            let (split, name) = data.load()?;
            let model = load_checkpoint(&checkpoint)?;
            let g = split.ind_test_graph.add_inverse_relations()?;
            let eval_cfg = EvalConfig {
                k_rank,
                num_negatives,
                seed,
                dump_scores,
                use_paths: !no_paths,
            };
            let report = evaluator::evaluate(&model, &g, &split.test_targets, &eval_cfg)?;
            let json = serde_json::to_string_pretty(&report).expect("serialize eval report");
            write_file(&out.output_dir.join("eval.json"), &json)?;
            write_manifest(&out, "eval", &name, &eval_cfg)?;
            println!("{json}");
            Ok(0)
        }
        Command::Rules {
            data,
            checkpoint,
            min_confidence,
            on,
            out,
        } => {
            let (split, name) = data.load()?;
            let model = load_checkpoint(&checkpoint)?;
            let (g, targets) = match on {
                RuleSide::Test => (
                    split.ind_test_graph.add_inverse_relations()?,
                    split.test_targets.clone(),
                ),
                RuleSide::Train => {
                    let g = split.train_graph.add_inverse_relations()?;
                    let targets = base_targets(&split.train_targets, &g);
                    (g, targets)
                }
            };
            let rules = extract_rules(&model, &g, &targets, min_confidence)?;
            write_file(
                &out.output_dir.join("rules.tsv"),
                &rules_to_tsv(&rules, g.relation_vocab()),
            )?;
            write_manifest(
                &out,
                "rules",
                &name,
                serde_json::json!({"min_confidence": min_confidence}),
            )?;
            for rule in &rules {
                println!("{}", format_rule(rule, g.relation_vocab()));
            }
            println!("# {} rules written", rules.len());
            Ok(0)
        }
        Command::Sweep {
            data,
            cfg,
            lambda1,
            lambda2,
            seeds,
            out,
        } => {
            let (split, name) = data.load()?;
            let (model_cfg, base_train_cfg) = cfg.resolve()?;
            let g = split.train_graph.add_inverse_relations()?;
            let g_ind = split.ind_test_graph.add_inverse_relations()?;
            let targets = base_targets(&split.train_targets, &g);
            let mut csv = String::from("lambda1\\lambda2");
            for l2 in &lambda2 {
                csv.push_str(&format!(",{l2}"));
            }
            csv.push('\n');
            for &l1 in &lambda1 {
                csv.push_str(&format!("{l1}"));
                for &l2 in &lambda2 {
                    let mut sum = 0.0;
                    for &seed in &seeds {
                        let train_cfg = TrainConfig {
                            lambda1: l1,
                            lambda2: l2,
                            seed,
                            ..base_train_cfg.clone()
                        };
                        let outcome =
                            trainer::train(&g, &targets, &split.valid_targets, model_cfg.clone(), &train_cfg)?;
                        sum += evaluator::auc_with_sampled_negatives(
                            &outcome.model,
                            &g_ind,
                            &split.test_targets,
                            seed,
                            train_cfg.ablation != Ablation::NoPaths,
                        )?;
                    }
                    let mean = sum / seeds.len() as f64;
                    csv.push_str(&format!(",{mean:.4}"));
                    log::info!("lambda1={l1} lambda2={l2} mean auc-pr {mean:.4}");
                }
                csv.push('\n');
            }
            write_file(&out.output_dir.join("sweep.csv"), &csv)?;
            write_manifest(
                &out,
                "sweep",
                &name,
                serde_json::json!({
                    "model": model_cfg,
                    "train": base_train_cfg,
                    "lambda1": lambda1,
                    "lambda2": lambda2,
                    "seeds": seeds,
                }),
            )?;
            print!("{csv}");
            Ok(0)
        }
        Command::Gradcheck {
            dim,
            examples,
            seed,
            step,
            tolerance,
            out,
        } => {
            let report = gradcheck(dim, examples, seed, step, tolerance)?;
            let json = serde_json::to_string_pretty(&report).expect("serialize gradcheck");
            write_file(&out.output_dir.join("gradcheck.json"), &json)?;
            write_manifest(
                &out,
                "gradcheck",
                "builtin-toy",
                serde_json::json!({"dim": dim, "examples": examples, "seed": seed, "step": step}),
            )?;
            println!("{json}");
            if report.iter().all(|r| r.pass()) {
                Ok(0)
            } else {
                Err(Error::Numeric("gradient check failed".into()))
            }
        }
    }
}

/// Finite-difference check of the full joint loss on toy synthetic examples.
fn gradcheck(
    dim: usize,
    examples: usize,
    seed: u64,
    step: f64,
    tolerance: f64,
) -> Result<Vec<rpcir::tensor::GradCheckReport>> {
    use rand::SeedableRng;
    let data = synth::generate(&SynthConfig {
        num_train_entities: 20,
        num_ind_entities: 10,
        num_train_chains: 6,
        num_ind_chains: 3,
        num_train_noise: 4,
        num_ind_noise: 2,
        seed,
        ..SynthConfig::default()
    })?;
    let g = data.split.train_graph.add_inverse_relations()?;
    let model_cfg = ModelConfig {
        dim,
        num_layers: 2,
        k: 2,
        l_max: 3,
        edge_dropout: 0.0,
        ..ModelConfig::default()
    };
    let train_cfg = TrainConfig::default();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let model = Model::new(model_cfg.clone(), g.num_base_relations(), &mut rng)?;
    let mut reports = Vec::with_capacity(examples);
    for i in 0..examples.min(data.split.train_targets.len()) {
        let triple = data.split.train_targets[i];
        let ex = trainer::prepare_example(&g, &triple, &model_cfg, Ablation::Full, &mut rng)?;
        let f = |p: &rpcir::tensor::ParamStore| {
            let probe = Model {
                cfg: model_cfg.clone(),
                params: p.clone(),
                num_relations: model.num_relations,
                num_base_relations: model.num_base_relations,
            };
            let tape = rpcir::tensor::Tape::new();
            let bm = probe.bind(&tape);
            let parts = trainer::example_loss(&bm, &ex, &train_cfg).expect("forward pass");
            let grads = tape.backward(parts.total).expect("backward pass");
            (
                tape.value_scalar(parts.total),
                bm.bound.grads_by_name(&probe.params, &grads),
            )
        };
        reports.push(rpcir::tensor::gradient_check(&model.params, &f, step, tolerance));
    }
    Ok(reports)
}

fn main() {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
