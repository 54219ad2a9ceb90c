//! Command-line harness: reproducible synthetic runs, component ablations,
//! gradient verification, and activation dumps.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use pseudocal::gradcheck;
use pseudocal::metrics::CalibrationMetrics;
use pseudocal::pipeline::{run_training, Components, ToyStack, TrainingRun};
use pseudocal::synth::{generate_scenario, render_map};
use pseudocal::tensor::FeatureMap;

use pseudocal_cli::config::RunConfig;

#[derive(Parser)]
#[command(name = "pseudocal", version, about = "Noise-calibration harness for pseudo-labeled training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonOpts {
    /// Configuration file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for CSV/JSON/tensor artifacts.
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Overrides the clustering radius.
    #[arg(long)]
    eps: Option<f64>,
    /// Overrides the clustering density floor.
    #[arg(long)]
    min_samples: Option<usize>,
    /// Overrides the online update momentum.
    #[arg(long)]
    gamma: Option<f64>,
    /// Overrides the offline smoothing factor.
    #[arg(long)]
    m: Option<f64>,
    /// Overrides the contrastive temperature.
    #[arg(long)]
    temperature: Option<f64>,
    /// Worker threads for fanning out independent runs.
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Runs the full epoch loop and writes per-epoch metrics, a summary, and
    /// a dictionary checkpoint.
    Run(CommonOpts),
    /// Runs every component combination and writes the comparison table.
    Ablate(CommonOpts),
    /// Verifies every analytic gradient against central finite differences.
    CheckGradients {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Minimum compared partial derivatives per battery item.
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
    },
    /// Writes rendered maps, filtered maps, and thresholds as canonical
    /// tensors for a few instances.
    DumpActivations {
        #[command(flatten)]
        common: CommonOpts,
        /// Number of instances to dump.
        #[arg(long, default_value_t = 3)]
        count: usize,
    },
}

fn load_config(opts: &CommonOpts) -> Result<RunConfig> {
    let mut cfg = match &opts.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = opts.seed {
        cfg.scenario.seed = seed;
    }
    if let Some(eps) = opts.eps {
        cfg.dbscan.eps = eps;
    }
    if let Some(min_samples) = opts.min_samples {
        cfg.dbscan.min_samples = min_samples;
    }
    if let Some(gamma) = opts.gamma {
        cfg.cpr.gamma = gamma;
    }
    if let Some(m) = opts.m {
        cfg.cpr.m = m;
    }
    if let Some(temperature) = opts.temperature {
        cfg.cpr.temperature = temperature;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cfg: &RunConfig, components: &Components) -> Result<TrainingRun> {
    run_training(&cfg.scenario, &cfg.dbscan, &cfg.cpr, &cfg.train, components)
        .context("training run failed")
}

fn metrics_csv(metrics: &[CalibrationMetrics]) -> String {
    let mut out = String::from(CalibrationMetrics::csv_header());
    out.push('\n');
    for m in metrics {
        out.push_str(&m.csv_row());
        out.push('\n');
    }
    out
}

#[derive(serde::Serialize)]
struct Summary<'a> {
    scenario: &'a pseudocal::synth::SyntheticScenario,
    dbscan: &'a pseudocal::cluster::DbscanConfig,
    cpr: &'a pseudocal::proxy::CprConfig,
    train: &'a pseudocal::pipeline::TrainConfig,
    components: &'a Components,
    cluster_count: usize,
    proxy_count: usize,
    proxy_dim: usize,
    stored_values: usize,
    per_epoch: &'a [CalibrationMetrics],
    r#final: &'a CalibrationMetrics,
}

fn cmd_run(opts: &CommonOpts) -> Result<()> {
    let cfg = load_config(opts)?;
    let run = execute(&cfg, &cfg.components)?;
    std::fs::create_dir_all(&opts.out_dir)
        .with_context(|| format!("cannot create {}", opts.out_dir.display()))?;

    std::fs::write(opts.out_dir.join("metrics.csv"), metrics_csv(&run.metrics))?;
    let summary = Summary {
        scenario: &cfg.scenario,
        dbscan: &cfg.dbscan,
        cpr: &cfg.cpr,
        train: &cfg.train,
        components: &cfg.components,
        cluster_count: run.cluster_count,
        proxy_count: run.dictionary.len(),
        proxy_dim: run.dictionary.dim(),
        stored_values: run.dictionary.value_count(),
        per_epoch: &run.metrics,
        r#final: run.metrics.last().expect("at least one epoch"),
    };
    std::fs::write(
        opts.out_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary)? + "\n",
    )?;
    // the effective configuration, replayable through --config
    std::fs::write(opts.out_dir.join("config.ini"), cfg.to_text())?;
    run.dictionary.save(
        &opts.out_dir.join("proxies.tsr"),
        &opts.out_dir.join("proxies.json"),
    )?;

    let last = run.metrics.last().expect("at least one epoch");
    println!(
        "run complete: {} epochs, {} clusters | purity {:.4} ari {:.4} retrieval {:.4}",
        run.metrics.len(),
        run.cluster_count,
        last.purity,
        last.ari,
        last.retrieval_acc
    );
    println!("wrote {}", opts.out_dir.join("metrics.csv").display());
    Ok(())
}

/// The six component combinations of the comparison table, all-on last.
const ABLATION_ROWS: [(bool, bool, bool); 6] = [
    (false, true, true),
    (true, false, true),
    (false, false, true),
    (true, true, false),
    (false, false, false),
    (true, true, true),
];

fn cmd_ablate(opts: &CommonOpts) -> Result<()> {
    let cfg = load_config(opts)?;
    let threads = opts.threads.max(1);
    let mut rows: Vec<Option<Result<TrainingRun>>> = (0..ABLATION_ROWS.len()).map(|_| None).collect();

    std::thread::scope(|scope| {
        let cfg = &cfg;
        let mut pending: Vec<(usize, &(bool, bool, bool))> = ABLATION_ROWS.iter().enumerate().collect();
        while !pending.is_empty() {
            let batch: Vec<_> = pending.drain(..pending.len().min(threads)).collect();
            let handles: Vec<_> = batch
                .into_iter()
                .map(|(idx, &(pdt, scf, cpr))| {
                    let components = Components { pdt, scf, cpr };
                    (idx, scope.spawn(move || execute(cfg, &components)))
                })
                .collect();
            for (idx, handle) in handles {
                rows[idx] = Some(handle.join().expect("ablation worker panicked"));
            }
        }
    });

    let mut csv = String::from("pdt,scf,cpr,cluster_count,purity,ari,retrieval_acc,mean_loss,filtered_clutter_rate\n");
    for ((pdt, scf, cpr), row) in ABLATION_ROWS.iter().zip(rows) {
        let run = row.expect("all rows executed")?;
        let m = run.metrics.last().expect("at least one epoch");
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            *pdt as u8, *scf as u8, *cpr as u8, run.cluster_count, m.purity, m.ari,
            m.retrieval_acc, m.mean_loss, m.filtered_clutter_rate
        ));
    }
    std::fs::create_dir_all(&opts.out_dir)
        .with_context(|| format!("cannot create {}", opts.out_dir.display()))?;
    let path = opts.out_dir.join("ablation.csv");
    std::fs::write(&path, csv)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_check_gradients(seed: u64, trials: usize) -> Result<()> {
    if trials == 0 {
        bail!("--trials must be at least 1");
    }
    let reports = gradcheck::run_battery(seed, trials)?;
    let mut all_ok = true;
    for report in &reports {
        let verdict = if report.passed() { "ok" } else { "FAIL" };
        println!(
            "{:<18} max rel error {:.3e} over {} comparisons (tolerance {:.0e}) .. {verdict}",
            report.name, report.max_rel_error, report.comparisons, report.tolerance
        );
        all_ok &= report.passed();
    }
    let worst = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    println!("max relative error across the battery: {worst:.3e}");
    if !all_ok {
        bail!("gradient battery failed");
    }
    Ok(())
}

fn write_tensor(path: &Path, map: &FeatureMap) -> Result<()> {
    let mut file = std::fs::File::create(path)
        .with_context(|| format!("cannot create {}", path.display()))?;
    map.write(&mut file)?;
    Ok(())
}

fn cmd_dump_activations(opts: &CommonOpts, count: usize) -> Result<()> {
    let cfg = load_config(opts)?;
    let (dataset, _) = generate_scenario(&cfg.scenario)?;
    let stack = ToyStack::new(
        cfg.scenario.feature_dim,
        &cfg.components,
        &cfg.train,
        cfg.scenario.seed,
    )?;
    std::fs::create_dir_all(&opts.out_dir)
        .with_context(|| format!("cannot create {}", opts.out_dir.display()))?;
    let n = count.min(dataset.instances.len());
    for (idx, instance) in dataset.instances.iter().take(n).enumerate() {
        let map = render_map(&cfg.scenario, &instance.latent, 1, idx)?;
        let extraction = stack.extract(&map)?;
        write_tensor(&opts.out_dir.join(format!("instance_{idx:03}_input.tsr")), &map)?;
        for (s, cache) in extraction.caches().iter().enumerate() {
            let tau = FeatureMap::new(1, 1, cache.tau().len(), cache.tau().to_vec())?;
            write_tensor(
                &opts.out_dir.join(format!("instance_{idx:03}_stage{}_tau.tsr", s + 1)),
                &tau,
            )?;
            if s + 1 < extraction.caches().len() {
                write_tensor(
                    &opts.out_dir.join(format!("instance_{idx:03}_stage{}.tsr", s + 1)),
                    extraction.caches()[s + 1].input(),
                )?;
            }
        }
        let stages = extraction.caches().len();
        write_tensor(
            &opts.out_dir.join(format!("instance_{idx:03}_stage{stages}.tsr")),
            &extraction.output,
        )?;
    }
    println!("dumped {n} instances to {}", opts.out_dir.display());
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run(opts) => cmd_run(opts),
        Command::Ablate(opts) => cmd_ablate(opts),
        Command::CheckGradients { seed, trials } => cmd_check_gradients(*seed, *trials),
        Command::DumpActivations { common, count } => cmd_dump_activations(common, *count),
    };
    if let Err(err) = outcome {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
