use pseudocal::cluster::DbscanConfig;
use pseudocal::metrics::cluster_majorities;
use pseudocal::pipeline::{run_epoch, Components, ToyStack, TrainConfig};
use pseudocal::pipeline::run_training;
use pseudocal::proxy::{CprConfig, EpochSnapshot};
use pseudocal::synth::{generate_scenario, SyntheticScenario};

fn combo(name: &str, pdt: bool, scf: bool, cpr: bool) -> (String, Components) {
    (name.to_string(), Components { pdt, scf, cpr })
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mode = args.get(1).cloned().unwrap_or_else(|| "sweep".into());

    if mode == "detail" {
        let seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(7);
        let lr: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0.01);
        let temperature: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(0.05);
        let heldout_noise: f64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(0.45);
        let eps: f64 = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(0.35);
        let scenario = SyntheticScenario { seed, heldout_noise, ..SyntheticScenario::default() };
        let train = TrainConfig { learning_rate: lr, ..TrainConfig::default() };
        let db = DbscanConfig { eps, ..DbscanConfig::default() };
        let cpr = CprConfig { temperature, ..CprConfig::default() };
        for (name, comp) in [
            combo("all-on  ", true, true, true),
            combo("-pdt    ", false, true, true),
            combo("-scf    ", true, false, true),
            combo("-cpr    ", true, true, false),
            combo("-pdt-scf", false, false, true),
            combo("all-off ", false, false, false),
        ] {
            match run_training(&scenario, &db, &cpr, &train, &comp) {
                Ok(run) => {
                    print!("{name} k={:2} |", run.cluster_count);
                    for m in &run.metrics {
                        print!(" e{}: p={:.4} r={:.4} l={:.3} z={:.3} |", m.epoch, m.purity, m.retrieval_acc, m.mean_loss, m.filtered_clutter_rate);
                    }
                    if run.stack.is_filtering() {
                        let l0: f64 = run.stack.stage_lambda(0).iter().sum::<f64>() / run.stack.stage_lambda(0).len() as f64;
                        print!(" lam0={l0:.3}");
                    }
                    println!();
                }
                Err(e) => println!("{name} FAILED: {e}"),
            }
        }
        return;
    }

    if mode == "diag" {
        let seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(7);
        let scenario = SyntheticScenario { seed, ..SyntheticScenario::default() };
        let db = DbscanConfig { eps: 0.35, ..DbscanConfig::default() };
        let cpr = CprConfig::default();
        let train = TrainConfig { learning_rate: 0.0, ..TrainConfig::default() };
        let components = Components::default();
        let (mut dataset, truth) = generate_scenario(&scenario).unwrap();
        let mut stack =
            ToyStack::new(scenario.feature_dim, &components, &train, scenario.seed).unwrap();
        let mut snapshot = EpochSnapshot::default();
        for _ in 0..train.epochs {
            let outcome = run_epoch(
                &mut dataset, &truth, &mut stack, &snapshot, &db, &cpr, &train, &components,
            )
            .unwrap();
            snapshot = outcome.snapshot;
            let labels: Vec<i64> = dataset.instances.iter().map(|i| i.label).collect();
            let majorities =
                cluster_majorities(&labels, &truth.identity, outcome.assignment.cluster_count);
            // angle between each identity-majority proxy and that identity's center
            let mut angles = Vec::new();
            for (k, &gid) in majorities.iter().enumerate() {
                if gid < 0 {
                    continue;
                }
                let proxy = outcome.dictionary.proxy(k);
                let cos: f64 = proxy
                    .iter()
                    .zip(&truth.centers[gid as usize])
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
                    .clamp(-1.0, 1.0);
                angles.push(cos.acos().to_degrees());
            }
            let mean = angles.iter().sum::<f64>() / angles.len() as f64;
            let max = angles.iter().cloned().fold(0.0f64, f64::max);
            println!(
                "epoch {}: k={:2} retrieval={:.4} purity={:.4} proxy-angle mean {:>5.2} max {:>5.2}",
                outcome.metrics.epoch,
                outcome.assignment.cluster_count,
                outcome.metrics.retrieval_acc,
                outcome.metrics.purity,
                mean,
                max
            );
        }
        return;
    }

    // sweep: for each (lr, temperature, heldout_noise) x seeds at eps 0.35,
    // check the criterion-7 conditions and report margins
    for lr in [0.003, 0.01, 0.03] {
        for temperature in [0.1, 0.2, 0.3] {
            for (heldout_noise, eps) in [(0.45, 0.35), (0.6, 0.35)] {
                let mut pass = 0;
                let mut trend_margins = Vec::new();
                let mut purity_ok = 0;
                let mut min_k = usize::MAX;
                let seeds: Vec<u64> = (1..=8).collect();
                for &seed in &seeds {
                    let scenario = SyntheticScenario { seed, heldout_noise, ..SyntheticScenario::default() };
                    let train = TrainConfig { learning_rate: lr, ..TrainConfig::default() };
                    let db = DbscanConfig { eps, ..DbscanConfig::default() };
                    let cpr = CprConfig { temperature, ..CprConfig::default() };
                    let all_on = run_training(&scenario, &db, &cpr, &train, &Components::default());
                    let no_pdt = run_training(&scenario, &db, &cpr, &train, &Components { pdt: false, scf: true, cpr: true });
                    let no_scf = run_training(&scenario, &db, &cpr, &train, &Components { pdt: true, scf: false, cpr: true });
                    let no_cpr = run_training(&scenario, &db, &cpr, &train, &Components { pdt: true, scf: true, cpr: false });
                    let (Ok(a), Ok(b), Ok(c), Ok(d)) = (all_on, no_pdt, no_scf, no_cpr) else {
                        println!("  seed {seed}: RUN FAILED");
                        continue;
                    };
                    min_k = min_k.min(a.cluster_count);
                    let r1 = a.metrics[0].retrieval_acc;
                    let r5 = a.metrics[4].retrieval_acc;
                    let p = a.metrics[4].purity;
                    let ok_trend = r5 > r1;
                    let ok_purity = p >= b.metrics[4].purity && p >= c.metrics[4].purity && p >= d.metrics[4].purity;
                    trend_margins.push(r5 - r1);
                    if ok_purity {
                        purity_ok += 1;
                    }
                    if ok_trend && ok_purity {
                        pass += 1;
                    }
                }
                let mean_margin: f64 = trend_margins.iter().sum::<f64>() / trend_margins.len().max(1) as f64;
                let min_margin = trend_margins.iter().cloned().fold(f64::INFINITY, f64::min);
                println!(
                    "lr={lr:<6} T={temperature:<4} hq={heldout_noise:<5} eps={eps:<5} pass {pass}/8 purity_ok {purity_ok}/8 min_k {min_k} trend mean {mean_margin:+.4} min {min_margin:+.4}"
                );
            }
        }
    }
}
