//! One function per subcommand. Each returns the text for standard output;
//! files are written as a side effect.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use hetscene::checks::{gradient_suite, worst_error, CaseResult, Scope};
use hetscene::encoder::EncoderConfig;
use hetscene::kg::{build_kg_graph_with, train_kg, KgConfig, KgDataset, KgReport};
use hetscene::scene::{load_scene, Task};
use hetscene::synth::{velocity_baseline, write_dataset, Dataset, DatasetManifest, GenConfig, MlpConfig};
use hetscene::train::{
    confusion_for, evaluate, load_checkpoint, save_checkpoint, train, AgentClassifier, CheckpointModel, Confusion,
    MetricReport, ModelSpec, SceneSample, TrainConfig, TrainOutcome,
};
use hetscene::Error;

use crate::args::*;
use crate::{config_hash, read_config, thread_pool, write_json, CliError, CliResult};

pub const CONFIG_FILE: &str = "config.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const KG_METRICS_FILE: &str = "kg_metrics.json";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const TRAIN_LOG_FILE: &str = "train_log.json";

/// Largest relative gradient error accepted by `gradcheck`.
pub fn gradcheck_tolerance(scope: Scope) -> f64 {
    match scope {
        Scope::Ops | Scope::Layer => 1e-5,
        Scope::End2End => 1e-4,
    }
}

pub fn run(cli: Cli) -> CliResult<String> {
    match cli.command {
        Command::Generate(a) => generate(&a),
        Command::SceneTrain(a) => scene_train(&a),
        Command::SceneEval(a) => scene_eval(&a),
        Command::Kg(a) => kg(&a),
        Command::Gradcheck(a) => gradcheck(a.scope.into()),
    }
}

pub fn generate(args: &GenerateArgs) -> CliResult<String> {
    let mut cfg: GenConfig = match &args.config {
        Some(p) => read_config(p)?,
        None => GenConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(n) = args.scenes {
        cfg.scenes = n;
    }
    let m: DatasetManifest = write_dataset(&cfg, &args.out)?;
    Ok(format!(
        "wrote {} scenes to {} (train {}, val {}, test {})\n",
        cfg.scenes,
        args.out.display(),
        m.train.len(),
        m.val.len(),
        m.test.len()
    ))
}

/// Everything that determines a `scene-train` run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneRunConfig {
    pub model: ModelKind,
    pub task: TaskChoice,
    pub seed: u64,
    pub seeds: usize,
    pub encoder: EncoderConfig,
    pub mlp: MlpConfig,
    pub train: TrainConfig,
}

impl Default for SceneRunConfig {
    fn default() -> Self {
        SceneRunConfig {
            model: ModelKind::Scene,
            task: TaskChoice::Parked,
            seed: 0,
            seeds: 5,
            encoder: EncoderConfig::default(),
            mlp: MlpConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl SceneRunConfig {
    pub fn validate(&self) -> CliResult<()> {
        if self.seeds == 0 {
            return Err(Error::Config("seeds must be positive".into()).into());
        }
        match self.model {
            ModelKind::Scene => self.encoder.validate()?,
            ModelKind::Mlp => {}
            ModelKind::Velocity => {
                if self.task != TaskChoice::Parked {
                    return Err(Error::Config("the velocity baseline only predicts the parked task".into()).into());
                }
            }
        }
        if self.model != ModelKind::Velocity {
            self.train.validate()?;
        }
        Ok(())
    }

    pub fn seed_list(&self) -> Vec<u64> {
        (0..self.seeds as u64).map(|i| self.seed + i).collect()
    }

    pub fn spec(&self) -> Option<ModelSpec> {
        match self.model {
            ModelKind::Scene => Some(ModelSpec::Scene {
                encoder: self.encoder.clone(),
            }),
            ModelKind::Mlp => Some(ModelSpec::Mlp { mlp: self.mlp.clone() }),
            ModelKind::Velocity => None,
        }
    }

    /// Applies the command-line overrides.
    pub fn with_args(mut self, a: &SceneTrainArgs) -> Self {
        if let Some(s) = a.seed {
            self.seed = s;
        }
        if let Some(n) = a.seeds {
            self.seeds = n;
        }
        if let Some(t) = a.task {
            self.task = t;
        }
        if let Some(m) = a.model {
            self.model = m;
        }
        if let Some(c) = a.context {
            self.encoder.context = c.into();
        }
        if a.no_temporal {
            self.encoder.use_temporal = false;
        }
        if a.no_residual {
            self.encoder.use_residual_concat = false;
        }
        if a.no_edge_features {
            self.encoder.use_edge_features = false;
        }
        self
    }
}

/// Outcome of one seed of a `scene-train` run.
#[derive(Clone, Debug)]
pub struct SeedRun {
    pub seed: u64,
    /// Test confusion per task, in task order.
    pub confusion: Vec<Confusion>,
    pub outcome: Option<TrainOutcome>,
    pub model: Option<CheckpointModel>,
}

/// Result of [`run_scene`].
#[derive(Clone, Debug)]
pub struct SceneRun {
    pub config: SceneRunConfig,
    pub reports: Vec<MetricReport>,
    pub runs: Vec<SeedRun>,
    pub num_params: usize,
}

/// Trains and tests every seed of `cfg` on a loaded dataset, in parallel.
/// Results are in seed order regardless of scheduling.
pub fn run_scene(cfg: &SceneRunConfig, data: &Dataset) -> CliResult<SceneRun> {
    cfg.validate()?;
    let tasks = cfg.task.tasks();
    let seeds = cfg.seed_list();
    let runs: Vec<SeedRun> = match cfg.spec() {
        None => {
            let confusion = velocity_confusion(data)?;
            seeds
                .iter()
                .map(|&seed| SeedRun {
                    seed,
                    confusion: vec![confusion],
                    outcome: None,
                    model: None,
                })
                .collect()
        }
        Some(spec) => {
            let pool = thread_pool()?;
            pool.install(|| {
                seeds
                    .par_iter()
                    .map(|&seed| -> hetscene::Result<SeedRun> {
                        let mut model = CheckpointModel::build(&spec, &tasks, seed)?;
                        let outcome = train(&mut model, &cfg.train, &data.train, &data.val, seed)?;
                        let confusion = evaluate(&model, &data.test)?;
                        Ok(SeedRun {
                            seed,
                            confusion,
                            outcome: Some(outcome),
                            model: Some(model),
                        })
                    })
                    .collect::<hetscene::Result<Vec<_>>>()
            })?
        }
    };
    let hash = config_hash(cfg);
    let reports = tasks
        .iter()
        .enumerate()
        .map(|(h, t)| MetricReport::new(t.name(), seeds.clone(), runs.iter().map(|r| r.confusion[h]).collect(), hash.clone()))
        .collect();
    let num_params = runs
        .first()
        .and_then(|r| r.model.as_ref())
        .map_or(0, |m| m.store().num_scalars());
    Ok(SceneRun {
        config: cfg.clone(),
        reports,
        runs,
        num_params,
    })
}

fn velocity_confusion(data: &Dataset) -> CliResult<Confusion> {
    let predictions = data
        .test
        .iter()
        .map(|s| load_scene(data.root.join(&s.name)).map(|scene| velocity_baseline(&scene)))
        .collect::<hetscene::Result<Vec<_>>>()?;
    Ok(confusion_for(&data.test, Task::Parked, |k, i| predictions[k][i]))
}

/// Writes the resolved config, metrics and per-seed checkpoints and logs.
pub fn write_scene_run(run: &SceneRun, out: &Path) -> CliResult<()> {
    write_json(&out.join(CONFIG_FILE), &run.config)?;
    write_json(&out.join(METRICS_FILE), &run.reports)?;
    for r in &run.runs {
        let dir = out.join(format!("seed_{}", r.seed));
        if let Some(outcome) = &r.outcome {
            write_json(&dir.join(TRAIN_LOG_FILE), outcome)?;
        }
        if let Some(model) = &r.model {
            save_checkpoint(dir.join(CHECKPOINT_FILE), model)?;
        }
    }
    Ok(())
}

pub fn render_reports(reports: &[MetricReport]) -> String {
    let mut s = format!("{:<8} {:>8}{:9} {:>8}\n", "task", "F1", "", "accuracy");
    for r in reports {
        let _ = writeln!(
            s,
            "{:<8} {:>8.4} ± {:<6.4} {:>8.4} ± {:<6.4}",
            r.task, r.f1_mean, r.f1_std, r.acc_mean, r.acc_std
        );
    }
    s
}

pub fn scene_train(args: &SceneTrainArgs) -> CliResult<String> {
    let base: SceneRunConfig = match &args.config {
        Some(p) => read_config(p)?,
        None => SceneRunConfig::default(),
    };
    let cfg = base.with_args(args);
    cfg.validate()?;
    let data = Dataset::load(&args.data)?;
    let run = run_scene(&cfg, &data)?;
    write_scene_run(&run, &args.out)?;
    let mut s = String::new();
    let _ = writeln!(s, "model {:?}, seeds {:?}, parameters {}", cfg.model, cfg.seed_list(), run.num_params);
    s.push_str(&render_reports(&run.reports));
    let _ = writeln!(s, "results in {}", args.out.display());
    Ok(s)
}

#[derive(Serialize)]
struct EvalIdentity<'a> {
    model: &'a ModelSpec,
    tasks: &'a [Task],
    split: &'a str,
}

fn split_name(split: Split) -> &'static str {
    match split {
        Split::Train => "train",
        Split::Val => "val",
        Split::Test => "test",
    }
}

/// Metrics of a stored model on one split; `tasks` defaults to all of the
/// checkpoint's heads.
pub fn evaluate_checkpoint(
    checkpoint: &Path,
    data: &Dataset,
    tasks: Option<&[Task]>,
    split: Split,
) -> CliResult<Vec<MetricReport>> {
    let model = load_checkpoint(checkpoint)?;
    let heads = model.tasks().to_vec();
    let wanted = tasks.map_or_else(|| heads.clone(), <[Task]>::to_vec);
    if let Some(t) = wanted.iter().find(|t| !heads.contains(t)) {
        return Err(Error::Config(format!("the checkpoint has no {} head", t.name())).into());
    }
    let samples: &[SceneSample] = match split {
        Split::Train => &data.train,
        Split::Val => &data.val,
        Split::Test => &data.test,
    };
    let confusion = evaluate(&model, samples)?;
    let hash = config_hash(&EvalIdentity {
        model: &model.spec(),
        tasks: &wanted,
        split: split_name(split),
    });
    Ok(wanted
        .iter()
        .map(|t| {
            let h = heads.iter().position(|x| x == t).expect("checked above");
            MetricReport::new(t.name(), Vec::new(), vec![confusion[h]], hash.clone())
        })
        .collect())
}

pub fn scene_eval(args: &SceneEvalArgs) -> CliResult<String> {
    let data = Dataset::load(&args.data)?;
    let tasks = args.task.map(TaskChoice::tasks);
    let reports = evaluate_checkpoint(&args.checkpoint, &data, tasks.as_deref(), args.split)?;
    if let Some(out) = &args.out {
        write_json(&out.join(METRICS_FILE), &reports)?;
    }
    let mut s = format!("{} split of {}\n", split_name(args.split), args.data.display());
    s.push_str(&render_reports(&reports));
    Ok(s)
}

/// Resolved `kg` run: the dataset directory, seeds and model settings.
#[derive(Clone, Debug, Serialize)]
pub struct KgRunConfig {
    pub dataset: String,
    pub data: PathBuf,
    pub seeds: Vec<u64>,
    pub config: KgConfig,
}

/// Trains one model per seed in parallel on a loaded dataset.
pub fn run_kg(dataset: &KgDataset, cfg: &KgConfig, seeds: &[u64]) -> CliResult<KgReport> {
    cfg.validate()?;
    if seeds.is_empty() {
        return Err(Error::Config("seeds must be positive".into()).into());
    }
    let kg = build_kg_graph_with(&dataset.store, &dataset.task, &cfg.build_options())?;
    let pool = thread_pool()?;
    let runs = pool.install(|| {
        seeds
            .par_iter()
            .map(|&s| train_kg::<f32>(&kg, &dataset.task, cfg, s).map(|(_, run)| run))
            .collect::<hetscene::Result<Vec<_>>>()
    })?;
    Ok(KgReport::new(&dataset.name, &kg, &runs))
}

pub fn render_kg(r: &KgReport) -> String {
    let mut s = format!(
        "{}: {} target, {} other nodes, {} edges, {} relations\n",
        r.dataset, r.target_nodes, r.other_nodes, r.edges, r.relations
    );
    let _ = writeln!(s, "{:<6} {:>9}", "seed", "accuracy");
    for (seed, acc) in r.seeds.iter().zip(&r.accuracies) {
        let _ = writeln!(s, "{seed:<6} {acc:>9.4}");
    }
    let _ = writeln!(s, "mean   {:>9.4} ± {:.4}", r.acc_mean, r.acc_std);
    s
}

pub fn kg(args: &KgArgs) -> CliResult<String> {
    let cfg: KgConfig = match &args.config {
        Some(p) => read_config(p)?,
        None => KgConfig::default(),
    };
    let seed = args.seed.unwrap_or(0);
    let n = args.seeds.unwrap_or(10) as u64;
    let seeds: Vec<u64> = (0..n).map(|i| seed + i).collect();
    let dir = args.data.join(args.dataset.dir_name());
    let dataset = KgDataset::load(&dir)?;
    let report = run_kg(&dataset, &cfg, &seeds)?;
    if let Some(out) = &args.out {
        let resolved = KgRunConfig {
            dataset: args.dataset.dir_name().to_string(),
            data: dir,
            seeds,
            config: cfg,
        };
        write_json(&out.join(CONFIG_FILE), &resolved)?;
        write_json(&out.join(KG_METRICS_FILE), &report)?;
    }
    Ok(render_kg(&report))
}

pub fn render_gradcheck(cases: &[CaseResult]) -> String {
    let mut s = String::new();
    for c in cases {
        let _ = write!(s, "{:<16} {:>6} entries  max rel error {:.3e}", c.name, c.checked, c.max_rel_error);
        if let Some((name, i)) = &c.worst {
            let _ = write!(s, "  ({name}[{i}])");
        }
        s.push('\n');
    }
    s
}

pub fn gradcheck(scope: Scope) -> CliResult<String> {
    let cases = gradient_suite(scope)?;
    let worst = worst_error(&cases);
    let tolerance = gradcheck_tolerance(scope);
    let mut s = render_gradcheck(&cases);
    if worst < tolerance {
        let _ = writeln!(s, "PASS {scope}: max relative error {worst:.3e} < {tolerance:.0e}");
        Ok(s)
    } else {
        print!("{s}");
        Err(CliError::GradcheckFailed { worst, tolerance })
    }
}
