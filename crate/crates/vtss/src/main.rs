use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use vtss::config::{build_context, load_data, parse_config, range_grid, ExperimentConfig};
use vtss::conflict::{
    estimate_conflict_rate, rank_tasks_by_predicted_usefulness, ConflictMode, ConflictReport,
    EXACT_MODE_PROBE_LIMIT, SAMPLED_MODE_PAIRS,
};
use vtss::error::{Error, Result};
use vtss::experiments::{
    exp2_task, run_ablation_classes, run_ablation_range, run_ablation_samples, run_exp1, run_exp2,
    run_pretrain, run_semisup_eval, ResultRecord,
};
use vtss::model::{load_checkpoint, save_checkpoint};
use vtss::pretext::VtssTaskSpec;
use vtss::report::{
    read_records_csv, render_line_chart, write_records_csv, write_records_json, RunManifest,
    Series,
};

#[derive(Parser)]
#[command(name = "vtss", version, about = "Transformation-prediction pretext experiments")]
struct Cli {
    /// Worker contexts for independent table rows (rows run sequentially
    /// when 1; values above 1 are accepted but execution stays serial on
    /// single-core hosts).
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain a backbone on the config's pretext task and save a checkpoint.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
    },
    /// Frozen-feature semi-supervised evaluation of a saved checkpoint.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Conflict-injection schedule: one pretrain + evaluation per run.
    Exp1 {
        #[arg(long)]
        config: PathBuf,
    },
    /// Individual and combined transformation tasks plus supervised baselines.
    Exp2 {
        #[arg(long)]
        config: PathBuf,
    },
    /// Usefulness over a grid of transformation ranges.
    AblateRange {
        #[arg(long)]
        config: PathBuf,
    },
    /// Usefulness over (pretext x semi-supervised) sample counts.
    AblateSamples {
        #[arg(long)]
        config: PathBuf,
    },
    /// Usefulness over class-subset sizes.
    AblateClasses {
        #[arg(long)]
        config: PathBuf,
    },
    /// Measure transformation-conflict rates and rank candidate tasks.
    ConflictScan {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset name override (fmnist, mnist, cifar10, synth, raw).
        #[arg(long)]
        dataset: Option<String>,
        /// Task descriptors, e.g. "rotation", "trans:5", "scale:2,4", "R+T".
        /// Defaults to rotation, translation and scale.
        #[arg(long)]
        task: Vec<String>,
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Render an SVG trend plot from a previously written CSV.
    Report {
        /// Directory holding <fig>.csv.
        #[arg(long = "in")]
        input: PathBuf,
        /// Figure name, e.g. exp1 or exp2.
        #[arg(long)]
        fig: String,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Pretrain { .. } => "pretrain",
            Command::Evaluate { .. } => "evaluate",
            Command::Exp1 { .. } => "exp1",
            Command::Exp2 { .. } => "exp2",
            Command::AblateRange { .. } => "ablate-range",
            Command::AblateSamples { .. } => "ablate-samples",
            Command::AblateClasses { .. } => "ablate-classes",
            Command::ConflictScan { .. } => "conflict-scan",
            Command::Report { .. } => "report",
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name = cli.command.name();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let log = serde_json::json!({
                "command": name,
                "error": err.to_string(),
            });
            eprintln!("{log}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if cli.jobs == 0 {
        return Err(Error::Range("--jobs must be at least 1".into()));
    }
    match cli.command {
        Command::Pretrain { config } => cmd_pretrain(&config),
        Command::Evaluate { config, checkpoint } => cmd_evaluate(&config, &checkpoint),
        Command::Exp1 { config } => {
            run_table(&config, "exp1", |cfg, ctx| run_exp1(ctx, &cfg.task_spec()?))
        }
        Command::Exp2 { config } => run_table(&config, "exp2", |cfg, ctx| {
            let default_rows = [
                "R", "T", "S", "R+T", "S+T", "R+S", "R+T+S", "FS3", "FS4",
            ];
            let rows: Vec<&str> = match &cfg.rows {
                Some(rows) => rows.iter().map(String::as_str).collect(),
                None => default_rows.to_vec(),
            };
            run_exp2(ctx, &rows, cfg.margin, cfg.translation_pixels, &cfg.scale_zooms)
        }),
        Command::AblateRange { config } => run_table(&config, "ablate-range", |cfg, ctx| {
            run_ablation_range(ctx, &range_grid(cfg)?)
        }),
        Command::AblateSamples { config } => run_table(&config, "ablate-samples", |cfg, ctx| {
            let (_, records) = run_ablation_samples(ctx, &cfg.task_spec()?, &cfg.samples_grid)?;
            Ok(records)
        }),
        Command::AblateClasses { config } => run_table(&config, "ablate-classes", |cfg, ctx| {
            run_ablation_classes(ctx, &cfg.task_spec()?, &cfg.class_sizes)
        }),
        Command::ConflictScan {
            config,
            dataset,
            task,
            epsilon,
        } => cmd_conflict_scan(config.as_deref(), dataset, &task, epsilon),
        Command::Report { input, fig } => cmd_report(&input, &fig),
    }
}

fn prepare(config_path: &Path) -> Result<(ExperimentConfig, PathBuf)> {
    let cfg = parse_config(config_path)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    let out = cfg.output_dir.clone();
    Ok((cfg, out))
}

/// Shared driver for the table-producing commands: run, then persist
/// CSV + JSON + manifest under the config's output directory.
fn run_table(
    config_path: &Path,
    name: &str,
    body: impl FnOnce(&ExperimentConfig, &vtss::experiments::ExperimentContext) -> Result<Vec<ResultRecord>>,
) -> Result<()> {
    let (cfg, out) = prepare(config_path)?;
    let (train, test) = load_data(&cfg)?;
    let ctx = build_context(&cfg, train, test);
    let records = body(&cfg, &ctx)?;

    let csv_path = out.join(format!("{name}.csv"));
    let json_path = out.join(format!("{name}.json"));
    write_records_csv(&records, &csv_path)?;
    write_records_json(&records, &json_path)?;
    let mut manifest = RunManifest::new(name, Some(config_path), &out, cfg.seed)?;
    manifest.record_output(&csv_path);
    manifest.record_output(&json_path);
    manifest.write(&out.join(format!("{name}.manifest.json")))?;

    for r in &records {
        println!(
            "{:<14} {:<18} pretext {:6.2}%  C {:6.2}%",
            r.experiment, r.row_id, r.pretext_acc, r.semisup_acc
        );
    }
    Ok(())
}

fn cmd_pretrain(config_path: &Path) -> Result<()> {
    let (cfg, out) = prepare(config_path)?;
    let (train, test) = load_data(&cfg)?;
    let ctx = build_context(&cfg, train, test);
    let task = cfg.task_spec()?;
    let outcome = run_pretrain(&ctx, &task, None)?;

    let ckpt_path = out.join(format!("pretrain-{}.ckpt", task.name()));
    let digest = save_checkpoint(&outcome.model, &ckpt_path)?;
    let summary = serde_json::json!({
        "task": task.name(),
        "pretext_acc": 100.0 * outcome.pretext_accuracy,
        "checkpoint": ckpt_path,
        "checkpoint_hash": digest,
        "epoch_loss": outcome.report.epoch_loss,
        "epoch_test_accuracy": outcome.report.epoch_test_accuracy,
    });
    let summary_path = out.join("pretrain.json");
    std::fs::write(&summary_path, serde_json::to_string_pretty(&summary)?)?;
    let mut manifest = RunManifest::new("pretrain", Some(config_path), &out, cfg.seed)?;
    manifest.record_output(&ckpt_path);
    manifest.record_output(&summary_path);
    manifest.write(&out.join("pretrain.manifest.json"))?;
    println!(
        "pretrain {} pretext {:.2}% checkpoint {}",
        task.name(),
        100.0 * outcome.pretext_accuracy,
        digest
    );
    Ok(())
}

fn cmd_evaluate(config_path: &Path, checkpoint: &Path) -> Result<()> {
    let (cfg, out) = prepare(config_path)?;
    let (train, test) = load_data(&cfg)?;
    let ctx = build_context(&cfg, train, test);
    let task = cfg.task_spec()?;
    let mut backbone = load_checkpoint(checkpoint)?;
    let semi = run_semisup_eval(&ctx, &mut backbone, task.frame())?;

    let record = ResultRecord {
        experiment: "evaluate".into(),
        row_id: "eval".into(),
        dataset: cfg.dataset.name.clone(),
        task: task.name().to_string(),
        injection: "none".into(),
        pretext_acc: 0.0,
        semisup_acc: 100.0 * semi.accuracy,
        seed: cfg.seed,
        runtime_s: semi.report.wall_clock_s,
        fingerprint: semi.frozen_hash_after[..16].to_string(),
    };
    let csv_path = out.join("evaluate.csv");
    write_records_csv(std::slice::from_ref(&record), &csv_path)?;
    let mut manifest = RunManifest::new("evaluate", Some(config_path), &out, cfg.seed)?;
    manifest.record_output(&csv_path);
    manifest.write(&out.join("evaluate.manifest.json"))?;
    println!("evaluate C {:.2}% (frozen hash {})", record.semisup_acc, &semi.frozen_hash_after[..16]);
    Ok(())
}

/// Parse a conflict-scan task descriptor: a task family name with optional
/// parameters ("rotation", "trans:5", "scale:2,4") or EXP 2 row letters.
fn scan_task(cfg: &ExperimentConfig, text: &str) -> Result<VtssTaskSpec> {
    let (head, params) = match text.split_once(':') {
        Some((h, p)) => (h, Some(p)),
        None => (text, None),
    };
    let bad = |msg: String| Error::Spec(msg);
    match head {
        "rotation" | "rot" if params.is_none() => {
            exp2_task("R", cfg.margin, cfg.translation_pixels, &cfg.scale_zooms)
        }
        "translation" | "trans" => {
            let pixels = match params {
                Some(p) => p
                    .parse()
                    .map_err(|e| bad(format!("bad translation pixels '{p}': {e}")))?,
                None => cfg.translation_pixels,
            };
            exp2_task("T", cfg.margin.max(pixels), pixels, &cfg.scale_zooms)
        }
        "scale" => {
            let zooms = match params {
                Some(p) => p
                    .split(',')
                    .map(|z| z.trim().parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| bad(format!("bad zoom list '{p}': {e}")))?,
                None => cfg.scale_zooms.clone(),
            };
            exp2_task("S", cfg.margin, cfg.translation_pixels, &zooms)
        }
        _ => exp2_task(text, cfg.margin, cfg.translation_pixels, &cfg.scale_zooms),
    }
}

fn cmd_conflict_scan(
    config_path: Option<&Path>,
    dataset: Option<String>,
    tasks: &[String],
    epsilon: Option<f64>,
) -> Result<()> {
    let mut cfg = match config_path {
        Some(p) => parse_config(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(name) = dataset {
        cfg.dataset.name = name;
    }
    if let Some(eps) = epsilon {
        if eps < 0.0 {
            return Err(Error::Range("epsilon must be non-negative".into()));
        }
        cfg.epsilon = eps;
    }
    std::fs::create_dir_all(&cfg.output_dir)?;
    let (train, _) = load_data(&cfg)?;

    let task_texts: Vec<String> = if tasks.is_empty() {
        vec!["rotation".into(), "translation".into(), "scale".into()]
    } else {
        tasks.to_vec()
    };
    let mut reports: Vec<(String, ConflictReport)> = Vec::new();
    for text in &task_texts {
        let task = scan_task(&cfg, text)?;
        let probes = train.len() * (task.num_classes() - 1);
        let mode = if probes <= EXACT_MODE_PROBE_LIMIT {
            ConflictMode::Exact
        } else {
            ConflictMode::Sampled {
                pairs: SAMPLED_MODE_PAIRS.min(probes),
                seed: cfg.seed,
            }
        };
        let report = estimate_conflict_rate(&train, &task, cfg.epsilon, mode)?;
        reports.push((task.name().to_string(), report));
    }
    let ranked = rank_tasks_by_predicted_usefulness(&reports)?;

    let json_path = cfg.output_dir.join("conflict.json");
    std::fs::write(&json_path, serde_json::to_string_pretty(&reports)?)?;
    let mut manifest = RunManifest::new("conflict-scan", config_path, &cfg.output_dir, cfg.seed)?;
    manifest.record_output(&json_path);
    manifest.write(&cfg.output_dir.join("conflict.manifest.json"))?;

    println!("epsilon {}  dataset {}", cfg.epsilon, cfg.dataset.name);
    println!("{:<4} {:<24} {:>10} {:>10} {:>10}", "rank", "task", "case_a", "case_b", "combined");
    for (i, (name, rate)) in ranked.iter().enumerate() {
        let report = &reports.iter().find(|(n, _)| n == name).unwrap().1;
        println!(
            "{:<4} {:<24} {:>10.4} {:>10.4} {:>10.4}",
            i + 1,
            name,
            report.case_a_rate,
            report.case_b_rate,
            rate
        );
    }
    Ok(())
}

fn cmd_report(input: &Path, fig: &str) -> Result<()> {
    let csv_path = input.join(format!("{fig}.csv"));
    let records = read_records_csv(&csv_path)?;
    if records.is_empty() {
        return Err(Error::Consistency(format!("{} holds no rows", csv_path.display())));
    }
    let ticks: Vec<(f64, String)> = records
        .iter()
        .enumerate()
        .map(|(i, r)| (i as f64, r.row_id.clone()))
        .collect();
    let mut series = vec![Series {
        name: "C (semi-sup)".into(),
        points: records
            .iter()
            .enumerate()
            .map(|(i, r)| (i as f64, r.semisup_acc))
            .collect(),
    }];
    if records.iter().any(|r| r.pretext_acc > 0.0) {
        series.push(Series {
            name: "pretext".into(),
            points: records
                .iter()
                .enumerate()
                .map(|(i, r)| (i as f64, r.pretext_acc))
                .collect(),
        });
    }
    let svg_path = input.join(format!("{fig}.svg"));
    render_line_chart(
        &format!("{fig}: accuracy by row"),
        "row",
        "accuracy (%)",
        &ticks,
        &series,
        &svg_path,
    )?;
    println!("wrote {}", svg_path.display());
    Ok(())
}
