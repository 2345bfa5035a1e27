use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::{
    accuracy_matrix, budget_sweep, build_family, collect_pairs, correlate_with, label_items,
    pair_regrets, sample_items, CorrelationReport, ExperimentConfig, Family, PairRecord, Statistic,
    SweepRow, Target,
};
use crate::annotator::{build_k_response_testset, AnnotatorSpec};
use crate::error::{Error, Result};
use crate::goodhart::{curve_csv, empirical_goodhart_scatter, goodhart_curve, scatter_csv};
use crate::metrics::{evaluate_tables, Metric};
use crate::policyopt::{bon_trajectory, kl_divergence, ndr, optimize, trajectory_csv, Policy};
use crate::rng;
use crate::synthworld::{generate_world, World};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    GenWorld,
    TrainRms,
    EvalMetrics,
    Optimize,
    Correlate,
    GoodhartCurve,
    AnnotateSim,
    RunAll,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::GenWorld,
        Stage::TrainRms,
        Stage::EvalMetrics,
        Stage::Optimize,
        Stage::Correlate,
        Stage::GoodhartCurve,
        Stage::AnnotateSim,
        Stage::RunAll,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::GenWorld => "gen-world",
            Stage::TrainRms => "train-rms",
            Stage::EvalMetrics => "eval-metrics",
            Stage::Optimize => "optimize",
            Stage::Correlate => "correlate",
            Stage::GoodhartCurve => "goodhart-curve",
            Stage::AnnotateSim => "annotate-sim",
            Stage::RunAll => "run-all",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One line of progress output.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StageSummary {
    pub stage: Stage,
    pub message: String,
    pub files: Vec<String>,
}

impl fmt::Display for StageSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.stage, self.message)?;
        if !self.files.is_empty() {
            write!(f, " -> {}", self.files.join(", "))?;
        }
        Ok(())
    }
}

/// Written next to every run's outputs; the only file carrying a timestamp.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub stage: String,
    pub master_seed: u64,
    pub world_seed: u64,
    pub created_unix_secs: u64,
    pub files: Vec<String>,
    pub config: ExperimentConfig,
}

struct Run<'a> {
    cfg: &'a ExperimentConfig,
    out: PathBuf,
    world: Option<World>,
    family: Option<Family>,
    files: Vec<String>,
}

impl<'a> Run<'a> {
    fn world(&mut self) -> Result<&World> {
        if self.world.is_none() {
            self.world = Some(generate_world(&self.cfg.world)?);
        }
        Ok(self.world.as_ref().expect("just set"))
    }

    fn world_and_family(&mut self) -> Result<(&World, &Family)> {
        if self.family.is_none() {
            self.world()?;
            let family = build_family(self.world.as_ref().expect("built"), self.cfg)?;
            self.family = Some(family);
        }
        Ok((
            self.world.as_ref().expect("built"),
            self.family.as_ref().expect("built"),
        ))
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<String> {
        fs::write(self.out.join(name), contents)?;
        self.files.push(name.to_string());
        Ok(name.to_string())
    }
}

/// Runs one CLI stage (or all of them), writing into `out`; returns one summary per stage.
pub fn run_stage(stage: Stage, cfg: &ExperimentConfig, out: &Path) -> Result<Vec<StageSummary>> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    let mut run = Run {
        cfg,
        out: out.to_path_buf(),
        world: None,
        family: None,
        files: Vec::new(),
    };
    let stages: Vec<Stage> = match stage {
        Stage::RunAll => Stage::ALL[..7].to_vec(),
        s => vec![s],
    };
    let mut summaries = Vec::new();
    for s in stages {
        let summary = run_one(s, &mut run).map_err(|e| in_stage(s, e))?;
        summaries.push(summary);
    }
    let manifest = Manifest {
        tool: "rmlab".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        stage: stage.name().into(),
        master_seed: cfg.seed,
        world_seed: cfg.world.seed,
        created_unix_secs: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
        files: run.files.clone(),
        config: cfg.clone(),
    };
    fs::write(
        out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(summaries)
}

fn in_stage(stage: Stage, e: Error) -> Error {
    match e {
        Error::Spec { field, reason } => Error::Spec {
            field,
            reason: format!("{reason} (stage {stage})"),
        },
        Error::Infeasible(m) => Error::Infeasible(format!("{stage}: {m}")),
        Error::Degenerate(m) => Error::Degenerate(format!("{stage}: {m}")),
        Error::UndefinedRatio(m) => Error::UndefinedRatio(format!("{stage}: {m}")),
        other => other,
    }
}

fn run_one(stage: Stage, run: &mut Run) -> Result<StageSummary> {
    let cfg = run.cfg;
    let (message, files) = match stage {
        Stage::GenWorld => {
            let w = run.world()?;
            let msg = format!(
                "{} prompts x {} candidates, {} features, {} categories, {:?}",
                w.num_prompts(),
                w.pool_size(),
                w.feature_dim(),
                w.spec().num_categories,
                w.spec().nonlinearity
            );
            let json = w.to_json()?;
            (msg, vec![run.write("world.json", &json)?])
        }
        Stage::TrainRms => {
            let (_, fam) = run.world_and_family()?;
            let models = serde_json::to_string_pretty(&fam.models)?;
            let datasets: Vec<(String, String)> = fam
                .datasets
                .iter()
                .map(|d| Ok((format!("train_alpha_{}.jsonl", d.flip_rate), d.to_jsonl()?)))
                .collect::<Result<_>>()?;
            let msg = format!("{} {:?} models", fam.len(), cfg.family.mode).to_lowercase();
            let mut files = vec![run.write("models.json", &models)?];
            for (name, body) in datasets {
                files.push(run.write(&name, &body)?);
            }
            (msg, files)
        }
        Stage::EvalMetrics => {
            let (world, fam) = run.world_and_family()?;
            let golden = world.golden_table();
            let items = sample_items(
                &cfg.testset,
                world.num_prompts(),
                world.pool_size(),
                cfg.seed,
                0,
            )?;
            let seed = rng::derive_seed(cfg.seed, "eval-annotator", 0);
            let (testset, _) = label_items(&items, &golden, &cfg.testset, seed)?;
            let mut w = csv::Writer::from_writer(Vec::new());
            let mut header = vec!["model_id".to_string()];
            header.extend(cfg.metrics.iter().map(|m| m.name().to_string()));
            w.write_record(&header)?;
            let mut best: Option<(f64, String)> = None;
            for (model, table) in fam.models.iter().zip(&fam.tables) {
                let report =
                    evaluate_tables(table, &golden, &testset, &cfg.metrics, &cfg.metric_config)?;
                let mut row = vec![model.id.clone()];
                row.extend(cfg.metrics.iter().map(|&m| fmt_opt(report.get(m))));
                w.write_record(&row)?;
                if let Some(a) = report.get(Metric::Accuracy) {
                    if best.as_ref().is_none_or(|(b, _)| a > *b) {
                        best = Some((a, model.id.clone()));
                    }
                }
            }
            let msg = match best {
                Some((a, id)) => format!(
                    "{} models on {} prompts; best accuracy {a:.4} ({id})",
                    fam.len(),
                    testset.items.len()
                ),
                None => format!("{} models on {} prompts", fam.len(), testset.items.len()),
            };
            let body = csv_string(w)?;
            (msg, vec![run.write("metrics.csv", &body)?])
        }
        Stage::Optimize => {
            let (world, fam) = run.world_and_family()?;
            let golden = world.golden_table();
            let golden_id = "golden".to_string();
            let trajectories = fam
                .tables
                .iter()
                .map(|t| bon_trajectory(&golden, t, &cfg.trajectory_n, cfg.log_base))
                .collect::<Result<Vec<_>>>()?;
            let traj = trajectory_csv(
                fam.models
                    .iter()
                    .zip(&trajectories)
                    .map(|(m, t)| (m.id.as_str(), golden_id.as_str(), t.as_slice())),
            )?;
            let uniform = Policy::uniform(world.num_prompts(), world.pool_size());
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["proxy_id", "optimizer", "ndr", "kl"])?;
            let mut ndr_sum = 0.0;
            let mut ndr_count = 0usize;
            for (m, t) in fam.models.iter().zip(&fam.tables) {
                for (name, spec) in &cfg.optimizers {
                    let v = ndr(&golden, t, spec)?;
                    let kl = kl_divergence(&optimize(t, spec)?, &uniform, cfg.log_base)?;
                    ndr_sum += v;
                    ndr_count += 1;
                    w.write_record([m.id.clone(), name.clone(), v.to_string(), kl.to_string()])?;
                }
            }
            let body = csv_string(w)?;
            let msg = format!(
                "{} proxies x {} optimizers against the world golden; mean NDR {:.4}",
                fam.len(),
                cfg.optimizers.len(),
                ndr_sum / ndr_count.max(1) as f64
            );
            (
                msg,
                vec![
                    run.write("trajectories.csv", &traj)?,
                    run.write("optimize.csv", &body)?,
                ],
            )
        }
        Stage::Correlate => {
            let (world, fam) = run.world_and_family()?;
            let records = collect_pairs(world, fam, cfg)?;
            let mut reports = Vec::new();
            let categories: Vec<Option<usize>> = if cfg.group_by_category {
                std::iter::once(None)
                    .chain((0..world.spec().num_categories).map(Some))
                    .collect()
            } else {
                vec![None]
            };
            let mut targets: Vec<Target> = cfg
                .optimizers
                .keys()
                .map(|k| Target::Ndr(k.clone()))
                .collect();
            targets.push(Target::ExactRegret);
            for &c in &categories {
                for &m in &cfg.metrics {
                    for t in &targets {
                        reports.push(correlate_with(&records, m, t, c, &cfg.statistics)?);
                    }
                }
            }
            let ts = cfg.testset.clone();
            let items = sample_items(&ts, world.num_prompts(), world.pool_size(), cfg.seed, 0)?;
            let (testset, _) = label_items(
                &items,
                &fam.tables[0],
                &crate::harness::TestsetSpec {
                    annotator_beta: None,
                    budget: None,
                    ..ts
                },
                0,
            )?;
            let matrix = accuracy_matrix(fam, &testset)?;
            let ids: Vec<String> = fam.models.iter().map(|m| m.id.clone()).collect();

            let headline = reports
                .iter()
                .find(|r| {
                    r.metric == Metric::Accuracy.name()
                        && r.category.is_none()
                        && r.target != "exact_regret"
                })
                .or_else(|| reports.first());
            let msg = match headline.and_then(|r| r.mean(Statistic::Spearman).map(|s| (r, s))) {
                Some((r, s)) => format!(
                    "{} records; mean spearman({}, ndr {}) = {s:.4}",
                    records.len(),
                    r.metric,
                    r.target
                ),
                None => format!("{} records", records.len()),
            };
            let records_body = records_csv(&records, &cfg.metrics)?;
            let corr_body = correlations_csv(&reports)?;
            let matrix_body = matrix_csv(&ids, &matrix)?;
            (
                msg,
                vec![
                    run.write("records.csv", &records_body)?,
                    run.write("correlations.csv", &corr_body)?,
                    run.write("accuracy_matrix.csv", &matrix_body)?,
                ],
            )
        }
        Stage::GoodhartCurve => {
            let sigma_r = cfg.world.reward_std;
            let grid: Vec<f64> = cfg.goodhart_grid.iter().map(|s| s * sigma_r).collect();
            let curve = goodhart_curve(sigma_r, &grid)?;
            let curve_body = curve_csv(&curve)?;
            let (world, fam) = run.world_and_family()?;
            let golden = world.golden_table();
            let (opt_name, opt) = cfg.optimizers.iter().next().expect("validated non-empty");
            let proxies: Vec<(String, crate::ScoreTable)> = fam
                .models
                .iter()
                .zip(&fam.tables)
                .map(|(m, t)| (m.id.clone(), t.clone()))
                .collect();
            let scatter = empirical_goodhart_scatter(&golden, &proxies, opt)?;
            let max_dev = scatter
                .iter()
                .filter_map(|p| p.deviation())
                .fold(0.0f64, |a, d| a.max(d.abs()));
            let msg = format!(
                "{} curve points; {} scatter points under {opt_name}, max |d_pi - theory| {max_dev:.4}",
                curve.len(),
                scatter.len()
            );
            let scatter_body = scatter_csv(&scatter)?;
            (
                msg,
                vec![
                    run.write("goodhart_curve.csv", &curve_body)?,
                    run.write("scatter.csv", &scatter_body)?,
                ],
            )
        }
        Stage::AnnotateSim => {
            let world = run.world()?;
            let golden = world.golden_table();
            let ts = &cfg.testset;
            let spec = AnnotatorSpec {
                beta: ts.annotator_beta.unwrap_or(AnnotatorSpec::default().beta),
                seed: rng::derive_seed(cfg.seed, "annotate-sim", 0),
            };
            let annotated =
                build_k_response_testset(&golden, ts.num_prompts, ts.k, ts.budget, spec)?;
            let msg = format!(
                "{} prompts x {} responses, {} comparisons at beta {}",
                annotated.prompts_used(),
                annotated.k,
                annotated.comparisons_used(),
                spec.beta
            );
            let body = annotated.to_jsonl()?;
            let mut files = vec![run.write("testset.jsonl", &body)?];
            if cfg.budget_sweep.is_some() {
                let (world, fam) = run.world_and_family()?;
                let regrets = pair_regrets(fam, cfg, None)?;
                let rows = budget_sweep(world, fam, &regrets, cfg)?;
                let body = sweep_csv(&rows)?;
                files.push(run.write("budget_sweep.csv", &body)?);
            }
            (msg, files)
        }
        Stage::RunAll => unreachable!("expanded by run_stage"),
    };
    Ok(StageSummary {
        stage,
        message,
        files,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_string(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// One row per record: ids, category, resample, metric values, NDR per optimizer, exact regret.
pub fn records_csv(records: &[PairRecord], metrics: &[Metric]) -> Result<String> {
    let optimizers: Vec<String> = records
        .first()
        .map(|r| r.ndr.keys().cloned().collect())
        .unwrap_or_default();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = ["golden_id", "proxy_id", "category", "resample"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(metrics.iter().map(|m| m.name().to_string()));
    header.extend(optimizers.iter().map(|o| format!("ndr_{o}")));
    header.push("exact_regret".into());
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![
            r.golden_id.clone(),
            r.proxy_id.clone(),
            r.category
                .map(|c| c.to_string())
                .unwrap_or_else(|| "all".into()),
            r.resample.to_string(),
        ];
        row.extend(
            metrics
                .iter()
                .map(|m| fmt_opt(r.metrics.get(m.name()).copied().flatten())),
        );
        row.extend(optimizers.iter().map(|o| fmt_opt(r.ndr.get(o).copied())));
        row.push(r.exact_regret.to_string());
        w.write_record(&row)?;
    }
    csv_string(w)
}

/// One row per (metric, target, category, statistic).
pub fn correlations_csv(reports: &[CorrelationReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "metric",
        "target",
        "category",
        "statistic",
        "mean",
        "lo",
        "hi",
        "half_width",
        "resamples_used",
        "undefined",
    ])?;
    for r in reports {
        for (stat, a) in &r.aggregates {
            w.write_record([
                r.metric.clone(),
                r.target.clone(),
                r.category
                    .map(|c| c.to_string())
                    .unwrap_or_else(|| "all".into()),
                stat.clone(),
                fmt_opt(a.mean),
                fmt_opt(a.lo),
                fmt_opt(a.hi),
                fmt_opt(a.half_width),
                a.resamples_used.to_string(),
                a.undefined.to_string(),
            ])?;
        }
    }
    csv_string(w)
}

pub fn matrix_csv(ids: &[String], matrix: &[Vec<f64>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["golden_id".to_string()];
    header.extend(ids.iter().cloned());
    w.write_record(&header)?;
    for (id, row) in ids.iter().zip(matrix) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    csv_string(w)
}

pub fn sweep_csv(rows: &[SweepRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "k",
        "size",
        "prompts_used",
        "statistic",
        "mean",
        "lo",
        "hi",
        "half_width",
        "status",
    ])?;
    for r in rows {
        let a = r.aggregate;
        w.write_record([
            r.k.to_string(),
            r.size.to_string(),
            r.prompts_used.to_string(),
            r.statistic.clone(),
            fmt_opt(a.and_then(|a| a.mean)),
            fmt_opt(a.and_then(|a| a.lo)),
            fmt_opt(a.and_then(|a| a.hi)),
            fmt_opt(a.and_then(|a| a.half_width)),
            r.status.clone(),
        ])?;
    }
    csv_string(w)
}
