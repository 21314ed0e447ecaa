use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use pleas_core::budget::{measure_loo_accuracies, solve_budget, BudgetPlan, BudgetSurrogate, SurrogateOptions};
use pleas_core::data::{make_synthetic_task, Dataset, GaussianUniverse, InputTransform, Split, TaskKind, TaskParams};
use pleas_core::eval::{accuracy, linear_probe, run_tradeoff, Ensemble, ProbeHyper, TradeoffConfig, TradeoffMeta, TRADEOFF_META_FILE};
use pleas_core::matching::{weight_match, MatchMode, PermutationSet};
use pleas_core::merging::{ensemble_forward, EnsembleMode, MergeOptions, Solver};
use pleas_core::network::{train_toy, Capture, NetworkCheckpoint, NetworkSpec, TrainHyper};
use pleas_core::pipeline::{match_models, merge_models, MergeData, Method, PipelineConfig, Sizing};
use serde::Serialize;
use serde_json::json;
use tracing::info;

use crate::args::*;

pub const RUN_FILE: &str = "run.json";

/// Proxy stream for `make-task`, distinct from the train and test streams.
const PROXY_STREAM: u64 = 30;

#[derive(Serialize)]
struct RunRecord<'a> {
    version: &'static str,
    #[serde(flatten)]
    cli: &'a Cli,
}

pub fn dispatch(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    let out = g.out.as_deref().context("--out is required")?;
    let run_dir = match &cli.command {
        Command::Match(_) | Command::PlanBudget(_) if is_json_file(out) => out.parent().unwrap_or(Path::new(".")).to_path_buf(),
        _ => out.to_path_buf(),
    };
    match &cli.command {
        Command::TrainToy(a) => train(g, a, out),
        Command::MakeTask(a) => make_task(g, a, out),
        Command::CollectActs(a) => collect_acts(g, a, out),
        Command::Match(a) => match_cmd(g, a, out),
        Command::PlanBudget(a) => plan_budget(g, a, out),
        Command::Merge(a) => merge(g, a, out),
        Command::Eval(a) => eval(a, out),
        Command::Probe(a) => probe(g, a, out),
        Command::Tradeoff(a) => tradeoff(g, a, out),
    }?;
    write_json(
        &run_dir.join(RUN_FILE),
        &RunRecord {
            version: env!("CARGO_PKG_VERSION"),
            cli,
        },
    )
}

fn is_json_file(p: &Path) -> bool {
    p.extension().is_some_and(|e| e == "json")
}

/// Resolves an output that is either a `.json` file or a directory that
/// receives `default_name`.
fn output_file(out: &Path, default_name: &str) -> Result<PathBuf> {
    if is_json_file(out) {
        if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
            ensure_dir(parent)?;
        }
        Ok(out.to_path_buf())
    } else {
        ensure_dir(out)?;
        Ok(out.join(default_name))
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

/// A CSV file, or an IDX pair written `IMAGES,LABELS`.
fn load_dataset(path: &Path, classes: Option<usize>) -> Result<Dataset> {
    let s = path.to_string_lossy();
    let data = match s.split_once(',') {
        Some((images, labels)) => Dataset::read_idx(Path::new(images), Path::new(labels), classes),
        None => Dataset::read_csv(path, classes),
    };
    data.with_context(|| format!("loading dataset {s}"))
}

fn load_model(path: &Path) -> Result<NetworkCheckpoint> {
    NetworkCheckpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn output_width(net: &NetworkCheckpoint) -> usize {
    *net.widths().last().expect("networks have an output")
}

/// Owned backing for [`MergeData`].
enum LoadedData {
    Task(Dataset, Dataset),
    Proxy(Dataset),
}

impl LoadedData {
    fn load(args: &DataArgs, classes: usize) -> Result<Self> {
        match (&args.proxy_data, &args.data_a, &args.data_b) {
            (Some(p), _, _) => Ok(LoadedData::Proxy(load_dataset(p, Some(classes))?)),
            (None, Some(a), Some(b)) => Ok(LoadedData::Task(load_dataset(a, Some(classes))?, load_dataset(b, Some(classes))?)),
            _ => bail!("merge data required: give --data-a and --data-b, or --proxy-data"),
        }
    }

    fn view(&self) -> MergeData<'_> {
        match self {
            LoadedData::Task(a, b) => MergeData::Task { a, b },
            LoadedData::Proxy(p) => MergeData::Proxy(p),
        }
    }
}

fn merge_options(r: &RefitArgs) -> MergeOptions {
    MergeOptions {
        target_mode: r.target_mode,
        objective_variant: r.objective_variant,
        ls_scope: r.ls_scope,
        solver: match r.solver {
            SolverArg::ClosedForm => Solver::ClosedForm,
            SolverArg::GradientDescent => Solver::GradientDescent {
                steps: r.gd_steps,
                lr: r.gd_lr,
            },
        },
        ridge: r.ridge,
    }
}

fn check_budget(budget: f64) -> Result<()> {
    if !(1.0..=2.0).contains(&budget) {
        bail!(pleas_core::Error::Invalid(format!("budget must be in [1,2], got {budget}")));
    }
    Ok(())
}

fn train(g: &Global, a: &TrainToy, out: &Path) -> Result<()> {
    let spec = NetworkSpec::new(a.widths.clone(), a.batchnorm)?;
    let data = load_dataset(&a.data, spec.widths.last().copied())?;
    let hyper = TrainHyper {
        lr: a.lr,
        steps: a.steps,
        batch_size: a.batch_size,
        seed: g.seed,
    };
    if g.dry_run {
        println!("would train {:?} (batchnorm {}) on {} samples of {}", spec.widths, spec.batchnorm, data.len(), data.task_id);
        return Ok(());
    }
    let outcome = train_toy(&data, &spec, hyper)?;
    let acc = accuracy(&outcome.net, &data)?;
    info!(initial = outcome.initial_loss, final_loss = outcome.final_loss, train_accuracy = acc, "trained");
    outcome.net.save(out)?;
    write_json(
        &out.join("train.json"),
        &json!({
            "task": data.task_id,
            "widths": spec.widths,
            "batchnorm": spec.batchnorm,
            "hyper": { "lr": hyper.lr, "steps": hyper.steps, "batch_size": hyper.batch_size, "seed": hyper.seed },
            "initial_loss": outcome.initial_loss,
            "final_loss": outcome.final_loss,
            "train_accuracy": acc,
            "content_hash": outcome.net.content_hash()?,
        }),
    )?;
    println!("train accuracy {acc:.4}, loss {:.4} -> {:.4}", outcome.initial_loss, outcome.final_loss);
    Ok(())
}

fn make_task(g: &Global, a: &MakeTask, out: &Path) -> Result<()> {
    let params = TaskParams {
        input_dim: a.input_dim,
        classes: a.classes,
        train_per_class: a.train_per_class,
        test_per_class: a.test_per_class,
        separation: a.separation,
        noise: a.noise,
    };
    let kind = match a.kind {
        TaskKindArg::Rotation => TaskKind::SharedLabelRotation {
            transforms: [InputTransform::Identity, InputTransform::Rotation { angle: a.angle }],
        },
        TaskKindArg::Disjoint => {
            let half = a.classes / 2;
            let pick = |given: &[usize], default: std::ops::Range<usize>| {
                if given.is_empty() {
                    default.collect()
                } else {
                    given.to_vec()
                }
            };
            TaskKind::DisjointLabelSubset {
                subsets: [pick(&a.subset_a, 0..half), pick(&a.subset_b, half..a.classes)],
            }
        }
    };
    let pair = make_synthetic_task(&kind, &params, g.seed)?;
    let proxy = match a.proxy_angle {
        Some(angle) => {
            let all: Vec<usize> = (0..a.classes).collect();
            let universe = GaussianUniverse::new(params, g.seed)?;
            Some(universe.sample(&all, a.proxy_per_class, &InputTransform::Rotation { angle }, Split::Custom(PROXY_STREAM), "proxy")?)
        }
        None => None,
    };
    if g.dry_run {
        println!("would write 4 task files{} to {}", if proxy.is_some() { " and a proxy" } else { "" }, out.display());
        return Ok(());
    }
    ensure_dir(out)?;
    for (t, name) in ["a", "b"].iter().enumerate() {
        pair.train[t].write_csv(&out.join(format!("task_{name}_train.csv")))?;
        pair.test[t].write_csv(&out.join(format!("task_{name}_test.csv")))?;
    }
    if let Some(p) = proxy {
        p.write_csv(&out.join("proxy.csv"))?;
    }
    Ok(())
}

fn collect_acts(g: &Global, a: &CollectActs, out: &Path) -> Result<()> {
    let net = load_model(&a.model)?;
    let data = load_dataset(&a.data, Some(output_width(&net)))?;
    let capture = match a.capture {
        CaptureArg::Inputs => Capture::Inputs,
        CaptureArg::PreActivations => Capture::PreActivations,
        CaptureArg::Both => Capture::Both,
    };
    let (_, trace) = net.forward(&data.inputs, capture)?;
    let trace = trace.expect("capture requested");
    if g.dry_run {
        println!("would write activations of {} samples", trace.samples);
        return Ok(());
    }
    trace.save(out)?;
    Ok(())
}

fn match_cmd(g: &Global, a: &Match, out: &Path) -> Result<()> {
    let na = load_model(&a.a)?;
    let nb = load_model(&a.b)?;
    let perms = match a.mode {
        MatchMode::Weight => {
            let report = weight_match(&na, &nb, g.seed)?;
            info!(sweeps = report.sweeps, converged = report.converged, objective = report.objective_history.last(), "weight matching");
            report.perms
        }
        MatchMode::Activation => {
            let data = LoadedData::load(&a.data, output_width(&na))?;
            match_models(&na, &nb, Method::Pleas, data.view(), a.feature.into(), g.seed)?
        }
    };
    let path = output_file(out, "perms.json")?;
    perms.save(&path)?;
    println!("wrote {} ({} boundaries)", path.display(), perms.boundaries.len());
    Ok(())
}

fn plan_budget(g: &Global, a: &PlanBudget, out: &Path) -> Result<()> {
    check_budget(a.budget)?;
    let na = load_model(&a.a)?;
    let nb = load_model(&a.b)?;
    let data = LoadedData::load(&a.data, output_width(&na))?;
    let view = data.view();
    let perms = match &a.perms {
        Some(p) => PermutationSet::load(p)?,
        None => {
            let method = match a.mode {
                MatchMode::Activation => Method::Pleas,
                MatchMode::Weight => Method::PleasWeight,
            };
            match_models(&na, &nb, method, view, a.refit.match_feature.into(), g.seed)?
        }
    };
    let opts = SurrogateOptions {
        refit: a.budget_args.surrogate_refit.then(|| merge_options(&a.refit)),
        bn_batch_size: a.refit.bn_batch_size,
        bn_batches: a.refit.bn_batches,
    };
    let widths = na.widths();
    let accs = measure_loo_accuracies(&na, &nb, &perms, &view.combined()?, &opts)?;
    let surrogate = BudgetSurrogate::new(accs, a.budget, a.budget_args.orientation)?;
    let config = solve_budget(&surrogate, &widths, a.budget, a.budget_args.q)?;
    let plan = BudgetPlan::new(surrogate, &widths, &config)?;
    println!("ratios {:?}, footprint {:.4}", plan.ratios, plan.footprint);
    let path = output_file(out, "budget.json")?;
    plan.save(&path)?;
    Ok(())
}

fn merge(g: &Global, a: &Merge, out: &Path) -> Result<()> {
    let sizing = match (a.budget, a.ratios.is_empty(), &a.plan) {
        (Some(b), true, None) => {
            check_budget(b)?;
            Sizing::Budget {
                budget: b,
                q: a.budget_args.q,
                orientation: a.budget_args.orientation,
            }
        }
        (None, false, None) => Sizing::Ratios(a.ratios.clone()),
        (None, true, Some(p)) => Sizing::Ratios(BudgetPlan::load(p)?.interior_ratios()),
        _ => bail!("give exactly one of --budget, --ratios or --plan"),
    };
    let perms = a.perms.as_deref().map(PermutationSet::load).transpose()?;
    let method = a.method.unwrap_or(match perms.as_ref().map(|p| p.mode) {
        Some(MatchMode::Weight) => Method::PleasWeight,
        _ => Method::Pleas,
    });
    let na = load_model(&a.a)?;
    let nb = load_model(&a.b)?;
    let data = LoadedData::load(&a.data, output_width(&na))?;
    let cfg = PipelineConfig {
        options: merge_options(&a.refit),
        match_feature: a.refit.match_feature,
        seed: g.seed,
        bn_batches: a.refit.bn_batches,
        bn_batch_size: a.refit.bn_batch_size,
        surrogate_refit: a.budget_args.surrogate_refit,
        ..PipelineConfig::new(method, sizing)
    };
    let outcome = merge_models(&na, &nb, data.view(), &cfg, perms.as_ref())?;
    let meta = &outcome.merged.meta;
    println!(
        "{}: ratios {:?}, merged counts {:?}, footprint {:.4}",
        meta.method, meta.ratios, meta.merged_counts, meta.footprint
    );
    if g.dry_run {
        return Ok(());
    }
    outcome.merged.save(out)?;
    if let Some(plan) = &outcome.budget {
        plan.save(&out.join("budget.json"))?;
    }
    if let Some(report) = &outcome.refit {
        write_json(&out.join("refit.json"), report)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct EvalRow {
    task: String,
    samples: usize,
    accuracy: f64,
}

fn eval(a: &Eval, out: &Path) -> Result<()> {
    let net = load_model(&a.model)?;
    let other = a.with.as_deref().map(load_model).transpose()?;
    let classes = output_width(&net);
    let mut rows = Vec::new();
    for path in &a.data {
        let data = load_dataset(path, Some(classes))?;
        let acc = match &other {
            Some(b) => accuracy(&Ensemble { a: &net, b }, &data)?,
            None => accuracy(&net, &data)?,
        };
        println!("{}: {acc:.4}", data.task_id);
        rows.push(EvalRow {
            task: data.task_id.clone(),
            samples: data.len(),
            accuracy: acc,
        });
    }
    let mean = rows.iter().map(|r| r.accuracy).sum::<f64>() / rows.len() as f64;
    write_json(
        &out.join("eval.json"),
        &json!({
            "model": net.content_hash()?,
            "with": other.as_ref().map(|b| b.content_hash()).transpose()?,
            "results": rows,
            "mean_accuracy": mean,
        }),
    )
}

fn probe(g: &Global, a: &Probe, out: &Path) -> Result<()> {
    let net = load_model(&a.model)?;
    let other = a.with.as_deref().map(load_model).transpose()?;
    let train = load_dataset(&a.train, None)?;
    let test = load_dataset(&a.test, None)?;
    let features = |x| match &other {
        Some(b) => ensemble_forward(&net, b, x, EnsembleMode::FeatureConcat),
        None => net.penultimate(x),
    };
    let hyper = ProbeHyper {
        lr: a.lr,
        epochs: a.epochs,
        batch_size: a.batch_size,
        l2: a.l2,
        seed: g.seed,
    };
    let acc = linear_probe(&features(&train.inputs)?, &train.labels, &features(&test.inputs)?, &test.labels, hyper)?;
    println!("probe accuracy {acc:.4}");
    write_json(
        &out.join("probe.json"),
        &json!({
            "model": net.content_hash()?,
            "with": other.as_ref().map(|b| b.content_hash()).transpose()?,
            "train": train.task_id,
            "test": test.task_id,
            "hyper": hyper,
            "accuracy": acc,
        }),
    )
}

fn tradeoff(g: &Global, a: &Tradeoff, out: &Path) -> Result<()> {
    for &b in &a.budgets {
        check_budget(b)?;
    }
    let na = load_model(&a.a)?;
    let nb = load_model(&a.b)?;
    let classes = output_width(&na);
    let train_a = load_dataset(&a.train_a, Some(classes))?;
    let train_b = load_dataset(&a.train_b, Some(classes))?;
    let tests = a.test.iter().map(|p| load_dataset(p, Some(classes))).collect::<Result<Vec<_>>>()?;
    let proxy = a.proxy_data.as_deref().map(|p| load_dataset(p, Some(classes))).transpose()?;
    let cfg = TradeoffConfig {
        methods: if a.methods.is_empty() { Method::ALL.to_vec() } else { a.methods.clone() },
        budgets: a.budgets.clone(),
        seeds: if a.seeds.is_empty() { vec![g.seed] } else { a.seeds.clone() },
        q: a.budget_args.q,
        orientation: a.budget_args.orientation,
        options: merge_options(&a.refit),
        match_feature: a.refit.match_feature,
        bn_batches: a.refit.bn_batches,
        bn_batch_size: a.refit.bn_batch_size,
    };
    let test_refs: Vec<&Dataset> = tests.iter().collect();
    let meta = TradeoffMeta::new(&na, &nb, &test_refs, &cfg, proxy.as_ref())?;
    if g.dry_run {
        println!(
            "would run {} methods x {} budgets x {} seeds on {} test sets",
            cfg.methods.len(),
            cfg.budgets.len(),
            cfg.seeds.len(),
            tests.len()
        );
        return Ok(());
    }
    let result = run_tradeoff(&na, &nb, [&train_a, &train_b], &test_refs, &cfg, proxy.as_ref())?;
    ensure_dir(out)?;
    result.write_csv(&out.join("tradeoff.csv"))?;
    meta.save(&out.join(TRADEOFF_META_FILE))?;
    println!("wrote {} rows to {}", result.rows.len(), out.join("tradeoff.csv").display());
    Ok(())
}
