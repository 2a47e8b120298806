//! Command-line front end. Every subcommand reads an optional JSON
//! [`ExperimentConfig`], applies `--seed`, writes its outputs and a
//! `run.json` manifest under `--out`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::adapters::{read_specs, specs_to_json, TrainMode};
use crate::backbone::{load_checkpoint, pretrain_with, save_checkpoint, Backbone};
use crate::error::{Error, Result};
use crate::harness::report::{self, write_json, write_manifest};
use crate::harness::{
    correlation_table, dataset_correlation_matrix, random_search, run_gradient_suite, score_task, select_lr,
    single_adapter_sweep, summarize, train_transfer_cached, ExperimentConfig, ScoreOptions, SearchOptions,
    SweepOptions, SweepRecord, SweepSummary, TaskCache, SUITE_EPS, SUITE_TOL,
};
use crate::scoring::{Aggregator, AggregatorKind, ScoreMatrix};
use crate::selection::{
    gga_select_traced, positional_select, random_select, stride_candidates, topk_select, DiscountParams, Policy,
    Position,
};

#[derive(Debug, Parser)]
#[command(name = "adaptgraph", version, about = "Adapter placement search on small transformer encoders")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Experiment config JSON; omitted fields take the built-in defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config's master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BackboneArg {
    /// Checkpoint directory; when omitted the backbone is pretrained from the
    /// config and saved under `<out>/backbone`.
    #[arg(long)]
    pub backbone: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pretrain a backbone on the source task and save a checkpoint.
    Pretrain {
        #[command(flatten)]
        common: Common,
    },
    /// Train one adapter at every candidate edge.
    SweepSingle {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        backbone: BackboneArg,
        #[arg(long)]
        stride: Option<usize>,
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Compute probe-gradient score matrices.
    Score {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        backbone: BackboneArg,
        /// srank, fro, nuc, spec, mincol, maxcol or all.
        #[arg(long)]
        aggregator: Option<String>,
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long)]
        head_steps: Option<usize>,
        #[arg(long)]
        batches: Option<usize>,
        #[arg(long)]
        stride: Option<usize>,
    },
    /// Choose adapter placements and write them as an adapter-spec file.
    Select {
        #[command(flatten)]
        common: Common,
        /// Score CSV written by `score` (needed by gga and topk).
        #[arg(long)]
        scores: Option<PathBuf>,
        /// gga, topk, random, first or last.
        #[arg(long)]
        policy: Option<String>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        gamma: Option<f64>,
    },
    /// Transfer the backbone to the target task.
    Finetune {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        backbone: BackboneArg,
        /// Adapter-spec JSON; omitted means no adapters.
        #[arg(long)]
        adapters: Option<PathBuf>,
        /// adapters, linear-probe or full-ft.
        #[arg(long, default_value = "adapters")]
        mode: String,
        /// Pick the learning rate from the config grid by validation accuracy.
        #[arg(long)]
        select_lr: bool,
    },
    /// Train random multi-adapter placements and rank them.
    RandomSearch {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        backbone: BackboneArg,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        n: Option<usize>,
    },
    /// Correlate score matrices with sweep outcomes.
    Report {
        #[command(flatten)]
        common: Common,
        /// Score CSVs written by `score`.
        #[arg(long, required = true, num_args = 1..)]
        scores: Vec<PathBuf>,
        /// `sweep.json` written by `sweep-single`.
        #[arg(long)]
        sweep: PathBuf,
        /// Additional `name=sweep.json` pairs for the cross-task matrix.
        #[arg(long = "task-sweep")]
        task_sweeps: Vec<String>,
    },
    /// Run the finite-difference gradient suite.
    Gradcheck {
        #[command(flatten)]
        common: Common,
    },
}

/// `sweep.json` contents.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepOutput {
    pub records: Vec<SweepRecord>,
    pub summary: SweepSummary,
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let cfg = match common.seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn inputs<'a>(common: &'a Common, extra: &[&'a Path]) -> Vec<&'a Path> {
    common.config.iter().map(PathBuf::as_path).chain(extra.iter().copied()).collect()
}

fn resolve_backbone(arg: &BackboneArg, cfg: &ExperimentConfig, out: &Path) -> Result<Backbone> {
    let mut b = match &arg.backbone {
        Some(dir) => load_checkpoint(dir)?,
        None => {
            let (b, rep) = pretrain_with(cfg.backbone, &cfg.source, cfg.pretrain_steps, cfg.seed, &cfg.pretrain)?;
            save_checkpoint(&b, &out.join("backbone"))?;
            write_json(&out.join("pretrain.json"), &rep)?;
            b
        }
    };
    if b.config != cfg.backbone {
        return Err(Error::InvalidArgument("checkpoint shape differs from the config backbone".into()));
    }
    b.freeze();
    Ok(b)
}

fn parse_mode(s: &str) -> Result<TrainMode> {
    match s {
        "adapters" => Ok(TrainMode::Adapters),
        "linear-probe" => Ok(TrainMode::LinearProbe),
        "full-ft" => Ok(TrainMode::FullFinetune),
        other => Err(Error::InvalidArgument(format!("unknown mode {other:?}"))),
    }
}

fn read_scores(path: &Path) -> Result<ScoreMatrix> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::InvalidArgument(format!("bad score path {}", path.display())))?;
    ScoreMatrix::read(dir, stem)
}

fn read_sweep(path: &Path) -> Result<SweepOutput> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

/// Runs one parsed command. `Ok(false)` means the command completed but its
/// check failed.
pub fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Pretrain { common } => {
            let cfg = load_config(&common)?;
            let (b, rep) = pretrain_with(cfg.backbone, &cfg.source, cfg.pretrain_steps, cfg.seed, &cfg.pretrain)?;
            save_checkpoint(&b, &common.out.join("backbone"))?;
            write_json(&common.out.join("pretrain.json"), &rep)?;
            write_manifest(&common.out, "pretrain", cfg.seed, &cfg, &inputs(&common, &[]))?;
        }
        Command::SweepSingle { common, backbone, stride, repeats } => {
            let cfg = load_config(&common)?;
            let b = resolve_backbone(&backbone, &cfg, &common.out)?;
            let n = cfg.backbone.num_nodes();
            let mask = stride_candidates(n, stride.unwrap_or(cfg.sweep.stride))?;
            let opts =
                SweepOptions { repeats: repeats.unwrap_or(cfg.sweep.repeats), template: cfg.template(), threads: cfg.threads };
            let records = single_adapter_sweep(&b, &cfg.target_data()?, &mask, &opts, &cfg.train)?;
            let out = SweepOutput { summary: summarize(&records), records };
            write_json(&common.out.join("sweep.json"), &out)?;
            std::fs::write(common.out.join("sweep.csv"), report::sweep_csv(&out.records))?;
            std::fs::write(common.out.join("sweep_grid.csv"), report::sweep_grid_csv(&out.records, n))?;
            let extra: Vec<&Path> = backbone.backbone.iter().map(PathBuf::as_path).collect();
            write_manifest(&common.out, "sweep-single", cfg.seed, &cfg, &inputs(&common, &extra))?;
        }
        Command::Score { common, backbone, aggregator, eta, head_steps, batches, stride } => {
            let cfg = load_config(&common)?;
            let b = resolve_backbone(&backbone, &cfg, &common.out)?;
            let eta = eta.unwrap_or(cfg.score.eta);
            let kinds: Vec<AggregatorKind> = match aggregator.as_deref() {
                Some("all") => AggregatorKind::ALL.to_vec(),
                Some(s) => vec![s.parse()?],
                None => vec![cfg.score.aggregator],
            };
            let aggs = kinds.iter().map(|&k| Aggregator::new(k, eta)).collect::<Result<Vec<_>>>()?;
            let mask = stride_candidates(cfg.backbone.num_nodes(), stride.unwrap_or(cfg.sweep.stride))?;
            let opts = ScoreOptions {
                head_steps: head_steps.unwrap_or(cfg.head_steps()),
                batches: batches.unwrap_or(cfg.score.batches),
                batch_size: cfg.score.batch_size,
                seed: cfg.seed,
            };
            let res = score_task(&b, &cfg.target_data()?, &mask, &aggs, &opts, &cfg.train)?;
            for m in &res.matrices {
                m.write(&common.out, &format!("scores_{}", m.meta.aggregator))?;
            }
            write_json(&common.out.join("head.json"), &serde_json::json!({"head": res.head, "probe_loss": res.probe_loss}))?;
            let extra: Vec<&Path> = backbone.backbone.iter().map(PathBuf::as_path).collect();
            write_manifest(&common.out, "score", cfg.seed, &cfg, &inputs(&common, &extra))?;
        }
        Command::Select { common, scores, policy, n, gamma } => {
            let cfg = load_config(&common)?;
            let policy: Policy = match policy {
                Some(p) => p.parse()?,
                None => cfg.select.policy,
            };
            let n_pick = n.unwrap_or(cfg.select.n);
            let layers = cfg.backbone.layers;
            let need_scores = || {
                scores
                    .as_deref()
                    .ok_or_else(|| Error::InvalidArgument(format!("policy {policy} needs --scores")))
                    .and_then(read_scores)
            };
            let result = match policy {
                Policy::Gga => gga_select_traced(&need_scores()?, n_pick, DiscountParams::new(gamma.unwrap_or(cfg.select.gamma))?)?,
                Policy::Topk => topk_select(&need_scores()?, n_pick)?,
                Policy::Random => {
                    let mask = stride_candidates(cfg.backbone.num_nodes(), cfg.sweep.stride)?;
                    random_select(&mask, n_pick, cfg.seed)?
                }
                Policy::First => positional_select(Position::First, n_pick, layers)?,
                Policy::Last => positional_select(Position::Last, n_pick, layers)?,
            };
            write_json(&common.out.join("selection.json"), &result)?;
            std::fs::create_dir_all(&common.out)?;
            std::fs::write(common.out.join("adapters.json"), specs_to_json(&result.to_specs(&cfg.template()))? + "\n")?;
            let extra: Vec<&Path> = scores.iter().map(PathBuf::as_path).collect();
            write_manifest(&common.out, "select", cfg.seed, &cfg, &inputs(&common, &extra))?;
        }
        Command::Finetune { common, backbone, adapters, mode, select_lr: pick_lr } => {
            let cfg = load_config(&common)?;
            let mode = parse_mode(&mode)?;
            let b = resolve_backbone(&backbone, &cfg, &common.out)?;
            let specs = match &adapters {
                Some(p) => read_specs(p)?,
                None => vec![],
            };
            let data = cfg.target_data()?;
            let mut train = cfg.train;
            let mut lr_trials = vec![];
            if pick_lr {
                let (lr, trials) = select_lr(&b, &specs, &train, &data, &cfg.lr_grid)?;
                train = train.with_lr(lr);
                lr_trials = trials;
            }
            let cache = if mode == TrainMode::FullFinetune { None } else { Some(TaskCache::build(&b, &data)?) };
            let (_, metrics) = train_transfer_cached(&b, &specs, mode, &train, &data, cache.as_ref())?;
            write_json(
                &common.out.join("metrics.json"),
                &serde_json::json!({"mode": mode, "specs": specs, "lr": train.base_lr, "lr_trials": lr_trials, "metrics": metrics}),
            )?;
            let extra: Vec<&Path> = backbone.backbone.iter().chain(adapters.iter()).map(PathBuf::as_path).collect();
            write_manifest(&common.out, "finetune", cfg.seed, &cfg, &inputs(&common, &extra))?;
        }
        Command::RandomSearch { common, backbone, samples, n } => {
            let cfg = load_config(&common)?;
            let b = resolve_backbone(&backbone, &cfg, &common.out)?;
            let mask = stride_candidates(cfg.backbone.num_nodes(), cfg.sweep.stride)?;
            let opts = SearchOptions {
                samples: samples.unwrap_or(cfg.search.samples),
                num_adapters: n.unwrap_or(cfg.search.n),
                repeats: cfg.search.repeats,
                template: cfg.template(),
                threads: cfg.threads,
            };
            let rep = random_search(&b, &cfg.target_data()?, &mask, &opts, &cfg.train, cfg.seed)?;
            write_json(&common.out.join("search.json"), &rep)?;
            std::fs::write(common.out.join("search.csv"), report::search_csv(&rep))?;
            let extra: Vec<&Path> = backbone.backbone.iter().map(PathBuf::as_path).collect();
            write_manifest(&common.out, "random-search", cfg.seed, &cfg, &inputs(&common, &extra))?;
        }
        Command::Report { common, scores, sweep, task_sweeps } => {
            let cfg = load_config(&common)?;
            let matrices = scores.iter().map(|p| read_scores(p)).collect::<Result<Vec<_>>>()?;
            let records = read_sweep(&sweep)?.records;
            let table = correlation_table(&matrices, &records)?;
            std::fs::create_dir_all(&common.out)?;
            write_json(&common.out.join("correlation.json"), &table)?;
            std::fs::write(common.out.join("correlation.csv"), report::correlation_csv(&table))?;
            for r in &table {
                std::fs::write(common.out.join(format!("scatter_{}.csv", r.aggregator)), report::scatter_csv(r))?;
            }
            let mut extra: Vec<PathBuf> = scores.iter().flat_map(|p| [p.clone(), p.with_extension("json")]).collect();
            extra.push(sweep.clone());
            if !task_sweeps.is_empty() {
                let mut sweeps = Vec::with_capacity(task_sweeps.len());
                for pair in &task_sweeps {
                    let (name, path) = pair
                        .split_once('=')
                        .ok_or_else(|| Error::InvalidArgument(format!("--task-sweep expects name=path, got {pair:?}")))?;
                    sweeps.push((name.to_string(), read_sweep(Path::new(path))?.records));
                    extra.push(PathBuf::from(path));
                }
                let m = dataset_correlation_matrix(&sweeps)?;
                write_json(&common.out.join("datasets.json"), &m)?;
                std::fs::write(common.out.join("datasets.csv"), report::dataset_csv(&m))?;
            }
            let extra: Vec<&Path> = extra.iter().map(PathBuf::as_path).collect();
            write_manifest(&common.out, "report", cfg.seed, &cfg, &inputs(&common, &extra))?;
        }
        Command::Gradcheck { common } => {
            let cfg = load_config(&common)?;
            let rep = run_gradient_suite(cfg.seed, SUITE_EPS, SUITE_TOL)?;
            write_json(&common.out.join("gradcheck.json"), &rep)?;
            write_manifest(&common.out, "gradcheck", cfg.seed, &cfg, &inputs(&common, &[]))?;
            return Ok(rep.passed());
        }
    }
    Ok(true)
}

/// Parses the process arguments, runs the command and maps the outcome to
/// an exit code. Errors go to stderr as one JSON object.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("{}", serde_json::json!({"error": "check_failed", "message": "one or more checks failed"}));
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("{}", serde_json::json!({"error": e.kind(), "message": e.to_string()}));
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_subcommand_parses() {
        for args in [
            "pretrain --out o",
            "sweep-single --out o --stride 3 --repeats 2 --seed 1",
            "score --out o --aggregator all --eta 0.05 --head-steps 3 --batches 2",
            "select --out o --policy gga --n 4 --gamma 0.5 --scores s.csv",
            "finetune --out o --adapters a.json --mode linear-probe --select-lr",
            "random-search --out o --samples 4 --n 2 --config c.json",
            "report --out o --scores a.csv b.csv --sweep s.json --task-sweep x=y.json",
            "gradcheck --out o",
        ] {
            let argv = std::iter::once("adaptgraph").chain(args.split(' '));
            assert!(Cli::try_parse_from(argv).is_ok(), "{args}");
        }
        assert!(Cli::try_parse_from(["adaptgraph", "score"]).is_err());
    }

    #[test]
    fn modes_parse() {
        assert_eq!(parse_mode("full-ft").unwrap(), TrainMode::FullFinetune);
        assert!(parse_mode("lora").is_err());
    }
}
