use std::path::{Path, PathBuf};
use std::time::Instant;

use interpole::audit::{self, AuditCriteria, CohortPredicate};
use interpole::envs::{self, EnvironmentSpec};
use interpole::io::{self, ModelFile};
use interpole::learner::{self, FitConfig, KnownValues, Prior};
use interpole::metrics::{self, EvalOptions};
use interpole::{plot, FreezeMask, ThetaEstimate};
use serde::{Deserialize, Serialize};

use crate::args::{AuditArgs, EvaluateArgs, ExportPlotArgs, InitKind, Method, SimulateArgs, TrainArgs};
use crate::error::{CliError, CliResult};
use crate::manifest::{sibling, RunManifest};

fn manifest_path(explicit: &Option<PathBuf>, out: &Path) -> PathBuf {
    explicit.clone().unwrap_or_else(|| sibling(out, "manifest.json"))
}

fn load_environment(name: &str, seed: u64) -> CliResult<EnvironmentSpec> {
    let path = Path::new(name);
    if path.is_file() {
        let env: EnvironmentSpec = io::read_json(path)?;
        env.validate()?;
        Ok(env)
    } else {
        Ok(envs::by_name(name, seed)?)
    }
}

pub fn simulate(args: &SimulateArgs) -> CliResult<()> {
    let start = Instant::now();
    let seed = args.seed.unwrap_or(0);
    let env = load_environment(&args.env, seed)?;
    let (dataset, truth) = envs::generate_dataset(&env, args.n, seed)?;
    let truth_out = args.truth_out.clone().unwrap_or_else(|| sibling(&args.out, "truth.jsonl"));
    let model_out = args.model_out.clone().unwrap_or_else(|| sibling(&args.out, "model.json"));

    io::write_text(&args.out, &io::dataset_to_jsonl(&dataset))?;
    io::write_text(&truth_out, &io::ground_truth_to_jsonl(&truth))?;
    let behaviour = ThetaEstimate::new(env.agent_params.clone(), env.behavior.clone(), FreezeMask::none())?;
    io::write_text(&model_out, &io::to_pretty_json(&ModelFile::new(&behaviour, Some(seed))))?;

    let config = serde_json::json!({ "env": args.env, "n": args.n, "environment": env.name });
    let inputs: Vec<&Path> = if Path::new(&args.env).is_file() { vec![Path::new(&args.env)] } else { vec![] };
    RunManifest::build("simulate", config, Some(seed), &inputs, &[&args.out, &truth_out, &model_out], start.elapsed())?
        .write(&manifest_path(&args.manifest, &args.out))
}

/// Training settings as read from a config file; every field is optional there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub method: Method,
    pub freeze: String,
    pub known: Option<PathBuf>,
    pub init: InitKind,
    pub fit: FitConfig,
    pub prior: Prior,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            method: Method::Joint,
            freeze: String::new(),
            known: None,
            init: InitKind::Warm,
            fit: FitConfig::default(),
            prior: Prior::default(),
        }
    }
}

impl TrainSettings {
    /// Defaults, overlaid by the config file, overlaid by flags.
    pub fn resolve(args: &TrainArgs) -> CliResult<Self> {
        let mut s: TrainSettings = match &args.config {
            Some(path) => io::read_json(path)?,
            None => TrainSettings::default(),
        };
        if let Some(m) = args.method {
            s.method = m;
        }
        if let Some(f) = &args.freeze {
            s.freeze = f.clone();
        }
        if let Some(k) = &args.known {
            s.known = Some(k.clone());
        }
        if let Some(i) = args.init {
            s.init = i;
        }
        if let Some(lr) = args.lr {
            s.fit.learning_rate = lr;
        }
        if let Some(n) = args.max_iters {
            s.fit.max_iterations = n;
        }
        if let Some(p) = args.patience {
            s.fit.patience = p;
        }
        if let Some(t) = args.tolerance {
            s.fit.improvement_tolerance = t;
        }
        if let Some(seed) = args.seed {
            s.fit.seed = seed;
        }
        s.fit.validate()?;
        s.prior.validate()?;
        Ok(s)
    }
}

pub fn train(args: &TrainArgs) -> CliResult<()> {
    let start = Instant::now();
    let settings = TrainSettings::resolve(args)?;
    let mask: FreezeMask = settings.freeze.parse()?;
    let dataset = io::load_dataset(&args.data)?;

    let mut inputs: Vec<&Path> = vec![&args.data];
    if let Some(c) = &args.config {
        inputs.push(c);
    }
    let known = match &settings.known {
        Some(path) => {
            let m = io::load_model(path)?;
            if m.params.spaces() != dataset.spaces {
                return Err(CliError::Usage(format!(
                    "{}: model spaces do not match the dataset",
                    path.display()
                )));
            }
            KnownValues::from_truth(&m.params, &m.policy, mask)
        }
        None => KnownValues::default(),
    };
    if let Some(path) = &settings.known {
        inputs.push(path);
    }

    let mut init = learner::init_random(&dataset.spaces, settings.fit.seed, mask, &known)?;
    if settings.init == InitKind::Warm && settings.fit.max_iterations > 0 {
        init = learner::warm_start(&dataset, &init, &settings.prior, &settings.fit)?;
    }
    let report = match settings.method {
        Method::Joint => learner::fit(&dataset, &init, &settings.prior, &settings.fit)?,
        Method::TwoStage => learner::two_stage_fit(&dataset, &init, &settings.prior, &settings.fit)?,
    };

    let report_out = args.report.clone().unwrap_or_else(|| sibling(&args.out, "report.json"));
    io::write_text(&args.out, &io::to_pretty_json(&ModelFile::new(&report.estimate, Some(settings.fit.seed))))?;
    io::write_text(&report_out, &io::to_pretty_json(&report))?;
    let config = serde_json::to_value(&settings).expect("settings serialize");
    RunManifest::build("train", config, Some(settings.fit.seed), &inputs, &[&args.out, &report_out], start.elapsed())?
        .write(&manifest_path(&args.manifest, &args.out))?;

    if report.converged || settings.fit.max_iterations == 0 {
        Ok(())
    } else {
        Err(CliError::NotConverged {
            iterations: report.iterations_run,
        })
    }
}

pub fn evaluate(args: &EvaluateArgs) -> CliResult<()> {
    let start = Instant::now();
    let dataset = io::load_dataset(&args.data)?;
    let model = io::load_model(&args.model)?.theta()?;
    let truth = args.truth.as_deref().map(io::load_ground_truth).transpose()?;
    let options = EvalOptions {
        positive_action: args.positive_action,
        align_states: args.align_states,
    };
    let report = metrics::evaluate(&dataset, &model, truth.as_ref(), &options)?;

    io::write_text(&args.out, &io::to_pretty_json(&report))?;
    let mut outputs: Vec<&Path> = vec![&args.out];
    if let Some(csv) = &args.csv {
        io::write_text(csv, &report.to_csv()?)?;
        outputs.push(csv);
    }
    let mut inputs: Vec<&Path> = vec![&args.data, &args.model];
    if let Some(t) = &args.truth {
        inputs.push(t);
    }
    let config = serde_json::json!({ "align_states": args.align_states, "positive_action": args.positive_action });
    RunManifest::build("evaluate", config, None, &inputs, &outputs, start.elapsed())?
        .write(&manifest_path(&args.manifest, &args.out))
}

pub fn audit(args: &AuditArgs) -> CliResult<()> {
    let start = Instant::now();
    let dataset = io::load_dataset(&args.data)?;
    let model = io::load_model(&args.model)?.theta()?;
    let criteria = AuditCriteria {
        boundary_confidence: args.confidence,
        informativeness_fraction: args.informativeness,
        test_action: args.test_action,
    };
    let cohorts = args
        .cohort
        .iter()
        .map(|c| c.parse::<CohortPredicate>())
        .collect::<Result<Vec<_>, _>>()?;
    let report = audit::audit(&dataset, &model, &criteria, &cohorts)?;

    io::write_text(&args.out, &io::to_pretty_json(&report))?;
    let mut outputs: Vec<&Path> = vec![&args.out];
    if let Some(csv) = &args.csv {
        io::write_text(csv, &report.to_csv()?)?;
        outputs.push(csv);
    }
    let config = serde_json::json!({ "criteria": criteria, "cohorts": args.cohort });
    RunManifest::build("audit", config, None, &[&args.data, &args.model], &outputs, start.elapsed())?
        .write(&manifest_path(&args.manifest, &args.out))
}

pub fn export_plot(args: &ExportPlotArgs) -> CliResult<()> {
    let start = Instant::now();
    let dataset = io::load_dataset(&args.data)?;
    let model = io::load_model(&args.model)?.theta()?;
    io::write_text(&args.out, &plot::plot_csv(&model, &dataset)?)?;
    RunManifest::build("export-plot", serde_json::json!({}), None, &[&args.data, &args.model], &[&args.out], start.elapsed())?
        .write(&manifest_path(&args.manifest, &args.out))
}
