//! Command-line driver. Every command writes its artifacts and a manifest
//! under `<out-dir>/<run-id>`.
//!
//! Exit codes: 0 success, 1 validation or argument error, 2 runtime failure.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::config::{file_digest, RunConfig};
use crate::cor::{PromptTemplate, TemplateFamily};
use crate::data::{clean_dataset, draw_distill_subset, load_dataset, parse_rules, write_dataset};
use crate::distill::{build_distill_set, OracleStage, ScriptedOracle};
use crate::eval::{
    aggregate, aggregate_best_of_n, emit_report, evaluate_best_of_n, evaluate_pairwise, load_bench, parse_report,
    BenchFile, EvalError, EvalMode, FixturesProvider, JudgmentProvider, OrderMode, ReportFormat, Scheme,
    ToyPolicyProvider,
};
use crate::grpo::{GrpoConfig, KlEstimator};
use crate::jsonl;
use crate::policy::ToyPolicy;
use crate::reward::RewardKind;
use crate::synthetic::{self, TrainConfig, TrainError};
use crate::theory::{check_instance, random_instance};

#[derive(Debug, Parser)]
#[command(name = "rubric-rl", version, about = "Reasoning reward model toolkit")]
pub struct Cli {
    /// Flat TOML settings file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, default_value = "runs")]
    pub out_dir: PathBuf,
    /// Silence progress output on stderr.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Filter a preference file with cleaning rules.
    Clean(CleanArgs),
    /// Draw a subset and build distillation traces from a scripted oracle.
    BuildDistill(DistillArgs),
    /// Train a toy policy with GRPO on the synthetic judgment task.
    Train(TrainArgs),
    /// Judge a benchmark file and report accuracies.
    Eval(EvalArgs),
    /// Check the filtering-gap results on random instances.
    VerifyTheory(TheoryArgs),
    /// Render a saved report.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct CleanArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// One rule per line.
    #[arg(long)]
    pub rules: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DistillArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Line-delimited scripted traces keyed by sample id.
    #[arg(long)]
    pub oracle: Option<PathBuf>,
    /// Share of the input drawn for distillation.
    #[arg(long)]
    pub fraction: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub clip_epsilon: Option<f64>,
    #[arg(long)]
    pub kl_coefficient: Option<f64>,
    #[arg(long)]
    pub group_size: Option<usize>,
    /// k1 or k3.
    #[arg(long)]
    pub kl_estimator: Option<String>,
    /// rm-r1, cold-start or cold-start:<format>.
    #[arg(long)]
    pub reward: Option<String>,
    /// Checkpoint to start from instead of uniform logits.
    #[arg(long)]
    pub init: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Fixture rollouts (file or directory) or a toy-policy checkpoint.
    #[arg(long)]
    pub provider: Option<PathBuf>,
    /// pairwise or bon.
    #[arg(long)]
    pub mode: Option<String>,
    /// macro-category or micro.
    #[arg(long)]
    pub scheme: Option<String>,
    /// fixed, seeded or both.
    #[arg(long)]
    pub order_mode: Option<String>,
    #[arg(long)]
    pub template: Option<String>,
}

#[derive(Debug, Args)]
pub struct TheoryArgs {
    #[arg(long)]
    pub instances: Option<usize>,
    #[arg(long)]
    pub size: Option<usize>,
    /// Draw instances without enforcing the assumptions.
    #[arg(long)]
    pub no_enforce: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Report in records form.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// table-text or records.
    #[arg(long)]
    pub format: Option<String>,
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
pub enum CliError {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Validation(e)
    }
}

type CliResult<T> = Result<T, CliError>;

fn invalid(msg: impl std::fmt::Display) -> CliError {
    CliError::Validation(anyhow!("{msg}"))
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Clean(_) => "clean",
            Command::BuildDistill(_) => "build-distill",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::VerifyTheory(_) => "verify-theory",
            Command::Report(_) => "report",
        }
    }

    fn overrides(&self) -> RunConfig {
        let mut c = RunConfig::default();
        match self {
            Command::Clean(a) => {
                c.input = a.input.clone();
                c.rules = a.rules.clone();
            }
            Command::BuildDistill(a) => {
                c.input = a.input.clone();
                c.oracle = a.oracle.clone();
                c.fraction = a.fraction;
            }
            Command::Train(a) => {
                c.steps = a.steps;
                c.lr = a.lr;
                c.clip_epsilon = a.clip_epsilon;
                c.kl_coefficient = a.kl_coefficient;
                c.group_size = a.group_size;
                c.kl_estimator = a.kl_estimator.clone();
                c.reward = a.reward.clone();
                c.init = a.init.clone();
            }
            Command::Eval(a) => {
                c.dataset = a.dataset.clone();
                c.provider = a.provider.clone();
                c.mode = a.mode.clone();
                c.scheme = a.scheme.clone();
                c.order_mode = a.order_mode.clone();
                c.template = a.template.clone();
            }
            Command::VerifyTheory(a) => {
                c.instances = a.instances;
                c.size = a.size;
                if a.no_enforce {
                    c.enforce = Some(false);
                }
            }
            Command::Report(a) => {
                c.input = a.input.clone();
                c.format = a.format.clone();
            }
        }
        c
    }
}

/// Effective settings plus the run directory.
struct Run {
    command: &'static str,
    cfg: RunConfig,
    dir: PathBuf,
    quiet: bool,
    inputs: Vec<PathBuf>,
}

impl Run {
    fn note(&self, msg: impl std::fmt::Display) {
        if !self.quiet {
            eprintln!("{msg}");
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn input(&mut self, p: &Path) -> CliResult<PathBuf> {
        if !p.exists() {
            return Err(invalid(format!("input {} does not exist", p.display())));
        }
        self.inputs.push(p.to_path_buf());
        Ok(p.to_path_buf())
    }

    fn write(&self, name: &str, text: &str) -> CliResult<()> {
        let p = self.path(name);
        fs::write(&p, text)
            .with_context(|| format!("write {}", p.display()))
            .map_err(CliError::Runtime)
    }

    fn write_json<T: Serialize>(&self, name: &str, v: &T) -> CliResult<()> {
        self.write(name, &(serde_json::to_string_pretty(v).expect("serializable") + "\n"))
    }

    fn write_manifest(&self, outcome: serde_json::Value) -> CliResult<()> {
        let mut digests = serde_json::Map::new();
        for p in &self.inputs {
            let d = if p.is_dir() {
                dir_digest(p)
            } else {
                file_digest(p)
            }
            .with_context(|| format!("digest {}", p.display()))
            .map_err(CliError::Runtime)?;
            digests.insert(p.display().to_string(), json!(d));
        }
        self.write_json(
            "manifest.json",
            &json!({
                "command": self.command,
                "version": env!("CARGO_PKG_VERSION"),
                "config": self.cfg,
                "input_sha256": digests,
                "outcome": outcome,
            }),
        )
    }
}

fn dir_digest(dir: &Path) -> std::io::Result<String> {
    let mut names: Vec<PathBuf> = fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>()?;
    names.sort();
    let mut joined = String::new();
    for p in names.iter().filter(|p| p.is_file()) {
        joined.push_str(&format!("{} {}\n", p.file_name().unwrap_or_default().to_string_lossy(), file_digest(p)?));
    }
    Ok(crate::config::file_digest_bytes(joined.as_bytes()))
}

fn parse_setting<T: std::str::FromStr<Err = String>>(key: &str, v: Option<&String>, default: T) -> CliResult<T> {
    match v {
        None => Ok(default),
        Some(s) => s.parse().map_err(|e: String| invalid(format!("{key}: {e}"))),
    }
}

fn require<'a, T>(key: &str, v: &'a Option<T>) -> CliResult<&'a T> {
    v.as_ref().ok_or_else(|| invalid(format!("missing setting {key} (flag --{} or config key)", key.replace('_', "-"))))
}

fn cmd_clean(run: &mut Run) -> CliResult<serde_json::Value> {
    let input = run.input(require("input", &run.cfg.input.clone())?)?;
    let rules_path = run.input(require("rules", &run.cfg.rules.clone())?)?;
    let d = load_dataset(&input).map_err(|e| invalid(format!("{}: {e}", input.display())))?;
    let text = fs::read_to_string(&rules_path).map_err(|e| invalid(format!("{}: {e}", rules_path.display())))?;
    let rules = parse_rules(&text).map_err(|e| invalid(format!("{}: {e}", rules_path.display())))?;
    let (cleaned, report) = clean_dataset(&d, &rules);
    fs::create_dir_all(&run.dir).context("create run directory").map_err(CliError::Runtime)?;
    write_dataset(&run.path("cleaned.jsonl"), &cleaned).map_err(|e| CliError::Runtime(e.into()))?;
    run.write_json("cleaning_report.json", &report)?;
    run.note(format!("retained {} of {} samples", report.retained, d.len()));
    Ok(serde_json::to_value(&report).expect("serializable"))
}

fn cmd_build_distill(run: &mut Run) -> CliResult<serde_json::Value> {
    let input = run.input(require("input", &run.cfg.input.clone())?)?;
    let oracle_path = run.input(require("oracle", &run.cfg.oracle.clone())?)?;
    let fraction = *run.cfg.fraction.get_or_insert(1.0);
    let seed = *run.cfg.seed.get_or_insert(0);
    let d = load_dataset(&input).map_err(|e| invalid(format!("{}: {e}", input.display())))?;
    let subset = draw_distill_subset(&d, fraction, seed).map_err(invalid)?;
    let oracle = ScriptedOracle::load(&oracle_path).map_err(|e| invalid(format!("{}: {e}", oracle_path.display())))?;
    let set = build_distill_set(&subset, &oracle);
    fs::create_dir_all(&run.dir).context("create run directory").map_err(CliError::Runtime)?;
    write_dataset(&run.path("subset.jsonl"), &subset).map_err(|e| CliError::Runtime(e.into()))?;
    run.write("distill.jsonl", &jsonl::to_string(&set.records))?;
    run.write("skipped.jsonl", &jsonl::to_string(&set.skipped))?;
    let summary = json!({
        "subset": subset.len(),
        "first_pass": set.count(OracleStage::FirstPass),
        "corrected": set.count(OracleStage::Corrected),
        "skipped": set.skipped.len(),
    });
    run.note(format!("distillation records: {summary}"));
    Ok(summary)
}

fn train_config(cfg: &mut RunConfig) -> CliResult<TrainConfig> {
    let d = TrainConfig::default();
    let grpo = GrpoConfig {
        clip_epsilon: *cfg.clip_epsilon.get_or_insert(d.grpo.clip_epsilon),
        kl_coefficient: *cfg.kl_coefficient.get_or_insert(d.grpo.kl_coefficient),
        group_size: *cfg.group_size.get_or_insert(d.grpo.group_size),
        kl_estimator: parse_setting::<KlEstimator>("kl_estimator", cfg.kl_estimator.as_ref(), d.grpo.kl_estimator)?,
    };
    grpo.validate().map_err(invalid)?;
    let reward = parse_setting::<RewardKind>("reward", cfg.reward.as_ref(), d.reward)?;
    cfg.kl_estimator = Some(format!("{:?}", grpo.kl_estimator).to_lowercase());
    cfg.reward = Some(reward.to_string());
    let t = TrainConfig {
        steps: *cfg.steps.get_or_insert(d.steps),
        lr: *cfg.lr.get_or_insert(d.lr),
        seed: *cfg.seed.get_or_insert(d.seed),
        grpo,
        reward,
    };
    if !(t.lr >= 0.0 && t.lr.is_finite()) {
        return Err(invalid(format!("lr must be finite and non-negative, got {}", t.lr)));
    }
    Ok(t)
}

fn cmd_train(run: &mut Run) -> CliResult<serde_json::Value> {
    let tc = train_config(&mut run.cfg)?;
    let init = match run.cfg.init.clone() {
        Some(p) => {
            let p = run.input(&p)?;
            let text = fs::read_to_string(&p).map_err(|e| invalid(format!("{}: {e}", p.display())))?;
            ToyPolicy::from_checkpoint(&text).map_err(|e| invalid(format!("{}: {e}", p.display())))?
        }
        None => ToyPolicy::uniform(synthetic::CONTEXTS, synthetic::VOCAB).expect("positive shape"),
    };
    fs::create_dir_all(&run.dir).context("create run directory").map_err(CliError::Runtime)?;
    let metrics_path = run.path("metrics.jsonl");
    let mut metrics = fs::File::create(&metrics_path)
        .with_context(|| format!("create {}", metrics_path.display()))
        .map_err(CliError::Runtime)?;
    let mut write_err = None;
    let quiet = run.quiet;
    let result = synthetic::train(&init, &tc, |m| {
        let line = serde_json::to_string(m).expect("serializable");
        if let Err(e) = writeln!(metrics, "{line}") {
            write_err.get_or_insert(e);
        }
        if !quiet && (m.step % 50 == 0) {
            eprintln!("step {:>4}  mean reward {:+.3}  expected {:+.4}", m.step, m.mean_reward, m.expected_reward);
        }
    });
    if let Some(e) = write_err {
        return Err(CliError::Runtime(anyhow!("write metrics: {e}")));
    }
    let out = match result {
        Ok(out) => out,
        Err(TrainError::NonFinite { step, group }) => {
            run.write_json("failed_group.json", &group)?;
            return Err(CliError::Runtime(anyhow!(
                "non-finite objective at step {step} in group {}; dumped to {}",
                group.prompt_id,
                run.path("failed_group.json").display()
            )));
        }
        Err(e) => return Err(CliError::Runtime(e.into())),
    };
    run.write("checkpoint.txt", &out.policy.to_checkpoint())?;
    let initial = synthetic::expected_reward(&init, tc.reward);
    run.note(format!(
        "expected reward {initial:+.4} -> {:+.4} after {} steps",
        out.final_expected_reward, tc.steps
    ));
    Ok(json!({
        "steps": tc.steps,
        "initial_expected_reward": initial,
        "final_expected_reward": out.final_expected_reward,
    }))
}

fn load_provider(run: &mut Run, path: &Path) -> CliResult<Box<dyn JudgmentProvider>> {
    let path = run.input(path)?;
    if path.is_file() {
        let text = fs::read_to_string(&path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        if text.starts_with("toy-policy") {
            let policy = ToyPolicy::from_checkpoint(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
            return Ok(Box::new(ToyPolicyProvider::new(policy).map_err(invalid)?));
        }
    }
    Ok(Box::new(FixturesProvider::load(&path).map_err(invalid)?))
}

fn cmd_eval(run: &mut Run) -> CliResult<serde_json::Value> {
    let dataset = run.input(require("dataset", &run.cfg.dataset.clone())?)?;
    let provider_path = require("provider", &run.cfg.provider.clone())?.clone();
    let mode = parse_setting::<EvalMode>("mode", run.cfg.mode.as_ref(), EvalMode::Pairwise)?;
    let scheme = parse_setting::<Scheme>("scheme", run.cfg.scheme.as_ref(), Scheme::MacroCategory)?;
    let order_mode = parse_setting::<OrderMode>("order_mode", run.cfg.order_mode.as_ref(), OrderMode::Seeded)?;
    let family = parse_setting::<TemplateFamily>("template", run.cfg.template.as_ref(), TemplateFamily::InstructCor)?;
    let seed = *run.cfg.seed.get_or_insert(0);
    run.cfg.mode = Some(mode.to_string());
    run.cfg.scheme = Some(scheme.to_string());
    run.cfg.order_mode = Some(order_mode.to_string());
    run.cfg.template = Some(family.name().to_string());

    let bench = load_bench(&dataset).map_err(|e| invalid(format!("{}: {e}", dataset.display())))?;
    if bench.mode() != mode {
        return Err(invalid(EvalError::ModeMismatch {
            requested: mode,
            found: bench.mode(),
            path: dataset.display().to_string(),
        }));
    }
    let provider = load_provider(run, &provider_path)?;
    let template = PromptTemplate::builtin(family);
    fs::create_dir_all(&run.dir).context("create run directory").map_err(CliError::Runtime)?;
    let mut report = match bench {
        BenchFile::Pairwise(samples) => {
            let records = evaluate_pairwise(provider.as_ref(), &template, &samples, order_mode, seed);
            run.write("records.jsonl", &jsonl::to_string(&records))?;
            aggregate(&records, scheme).map_err(invalid)?
        }
        BenchFile::Bon(groups) => {
            let outcomes = evaluate_best_of_n(provider.as_ref(), &template, &groups, seed).map_err(invalid)?;
            run.write("records.jsonl", &jsonl::to_string(&outcomes))?;
            aggregate_best_of_n(&outcomes, scheme).map_err(invalid)?
        }
    };
    report.seed = Some(seed);
    report.order_mode = (mode == EvalMode::Pairwise).then_some(order_mode);
    let table = emit_report(&report, ReportFormat::TableText);
    run.write("report.jsonl", &emit_report(&report, ReportFormat::Records))?;
    run.write("report.txt", &table)?;
    print!("{table}");
    Ok(json!({ "provider": provider.name(), "overall": report.overall }))
}

fn cmd_verify_theory(run: &mut Run) -> CliResult<serde_json::Value> {
    let instances = *run.cfg.instances.get_or_insert(1000);
    let size = *run.cfg.size.get_or_insert(8);
    let enforce = *run.cfg.enforce.get_or_insert(true);
    let seed = *run.cfg.seed.get_or_insert(0);
    if size < 2 {
        return Err(invalid(format!("size must be at least 2, got {size}")));
    }
    fs::create_dir_all(&run.dir).context("create run directory").map_err(CliError::Runtime)?;
    let mut lines = Vec::with_capacity(instances);
    let (mut passed, mut assumptions_failed, mut violated) = (0usize, 0usize, 0usize);
    for i in 0..instances {
        let inst = random_instance(size, seed.wrapping_add(i as u64), enforce).map_err(|e| CliError::Runtime(e.into()))?;
        let check = check_instance(&inst);
        if !check.violations.is_empty() {
            violated += 1;
            run.note(format!("instance {i}: {}", check.violations.join("; ")));
        } else if check.gap.assumptions.all() {
            passed += 1;
        } else {
            assumptions_failed += 1;
        }
        lines.push(json!({ "index": i, "instance": inst, "check": check }));
    }
    run.write("results.jsonl", &jsonl::to_string(&lines))?;
    println!("instances  assumptions-hold-and-pass  assumptions-fail  violations");
    println!("{instances:>9}  {passed:>25}  {assumptions_failed:>16}  {violated:>10}");
    println!("{}", if violated == 0 { "PASS" } else { "FAIL" });
    let summary = json!({
        "instances": instances,
        "passed": passed,
        "assumptions_failed": assumptions_failed,
        "violations": violated,
    });
    run.write_manifest(summary.clone())?;
    if violated > 0 {
        return Err(CliError::Runtime(anyhow!("{violated} instance(s) violated a theory check")));
    }
    Ok(summary)
}

fn cmd_report(run: &mut Run) -> CliResult<serde_json::Value> {
    let input = run.input(require("input", &run.cfg.input.clone())?)?;
    let format = parse_setting::<ReportFormat>("format", run.cfg.format.as_ref(), ReportFormat::TableText)?;
    run.cfg.format = Some(match format {
        ReportFormat::TableText => "table-text".into(),
        ReportFormat::Records => "records".into(),
    });
    let text = fs::read_to_string(&input).map_err(|e| invalid(format!("{}: {e}", input.display())))?;
    let report = parse_report(&text).map_err(|e| invalid(format!("{}: {e}", input.display())))?;
    let rendered = emit_report(&report, format);
    fs::create_dir_all(&run.dir).context("create run directory").map_err(CliError::Runtime)?;
    run.write("report.txt", &rendered)?;
    print!("{rendered}");
    Ok(json!({ "overall": report.overall }))
}

fn execute(cli: Cli) -> CliResult<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.overlay(&cli.command.overrides());
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    let command = cli.command.name();
    let run_id = cfg.run_id.clone().unwrap_or_else(|| cfg.derived_run_id(command));
    cfg.run_id = Some(run_id.clone());
    let mut run = Run {
        command,
        cfg,
        dir: cli.out_dir.join(&run_id),
        quiet: cli.quiet,
        inputs: Vec::new(),
    };
    if let Some(p) = &cli.config {
        run.input(p)?;
    }
    let outcome = match cli.command {
        Command::Clean(_) => cmd_clean(&mut run)?,
        Command::BuildDistill(_) => cmd_build_distill(&mut run)?,
        Command::Train(_) => cmd_train(&mut run)?,
        Command::Eval(_) => cmd_eval(&mut run)?,
        // writes its manifest before deciding the exit code
        Command::VerifyTheory(_) => return cmd_verify_theory(&mut run).map(|_| ()),
        Command::Report(_) => cmd_report(&mut run)?,
    };
    run.write_manifest(outcome)?;
    run.note(format!("artifacts in {}", run.dir.display()));
    Ok(())
}

/// Parses `args` (program name first) and runs the command; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let filter = if cli.quiet { "error" } else { "warn" };
    let _ = tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(filter)),
        )
        .with_writer(std::io::stderr)
        .try_init();
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            let (CliError::Validation(err) | CliError::Runtime(err)) = &e;
            eprintln!("error: {err:#}");
            e.exit_code()
        }
    }
}
