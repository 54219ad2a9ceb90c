//! Central finite-difference batteries for every analytic gradient.
//!
//! Each check compares analytic partials against `(f(p + h) - f(p - h)) / 2h`
//! and reports the worst relative error over all compared partials. Points
//! are kept a margin away from the filter knee `|x| = tau` (the derivative is
//! discontinuous there, so finite differences are meaningless across it) and
//! per-channel maxima are kept clearly separated so a perturbation cannot
//! flip the argmax.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::cluster::InstanceFeature;
use crate::error::{Error, Result};
use crate::filter::{scf_forward, FilterParams};
use crate::pdaf::{pdaf_apply, pdaf_backward, pdt_backward, pdt_forward, MlpParams};
use crate::proxy::{CprConfig, ProxyDictionary};
use crate::synth::stream;
use crate::tensor::FeatureMap;

/// Finite-difference step.
const FD_STEP: f64 = 1e-5;
/// Points keep at least this margin from the filter knee.
const KNEE_MARGIN: f64 = 0.1;
/// Both gradients below this magnitude count as agreeing zeros.
const ZERO_FLOOR: f64 = 1e-8;

/// Outcome of one battery item.
#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: &'static str,
    pub max_rel_error: f64,
    pub comparisons: usize,
    pub tolerance: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

fn rel_error(analytic: f64, fd: f64) -> f64 {
    let scale = analytic.abs().max(fd.abs());
    if scale < ZERO_FLOOR {
        0.0
    } else {
        (analytic - fd).abs() / scale
    }
}

/// Checks a (possibly substituted) backward implementation of the
/// self-calibrating filter against finite differences of the forward pass,
/// on active-zone points with `|x| - tau > KNEE_MARGIN`.
pub fn check_scf_backward(
    seed: u64,
    trials: usize,
    backward: impl Fn(f64, f64, f64, f64) -> (f64, f64, f64),
) -> CheckReport {
    let mut rng: ChaCha8Rng = stream(seed, 0x10, 0);
    let mut worst = 0.0f64;
    let mut comparisons = 0;
    let mut done = 0;
    while done < trials {
        let tau = rng.random_range(0.01..2.0);
        let x: f64 = rng.random_range(-4.0..4.0);
        let lambda = rng.random_range(0.02..0.98);
        if x.abs() - tau <= KNEE_MARGIN {
            continue;
        }
        done += 1;
        let (dx, dtau, dl) = backward(x, tau, lambda, 1.0);
        let h = FD_STEP;
        let fd_x = (scf_forward(x + h, tau, lambda) - scf_forward(x - h, tau, lambda)) / (2.0 * h);
        let fd_tau = (scf_forward(x, tau + h, lambda) - scf_forward(x, tau - h, lambda)) / (2.0 * h);
        let fd_l = (scf_forward(x, tau, lambda + h) - scf_forward(x, tau, lambda - h)) / (2.0 * h);
        for (a, f) in [(dx, fd_x), (dtau, fd_tau), (dl, fd_l)] {
            worst = worst.max(rel_error(a, f));
            comparisons += 1;
        }
    }
    CheckReport { name: "scf_backward", max_rel_error: worst, comparisons, tolerance: 1e-5 }
}

/// Builds a map whose entries all sit a comfortable margin away from the
/// resulting threshold, with per-channel maxima clearly separated from the
/// runner-up. Entries near the knee are pushed above it and the threshold is
/// recomputed until the configuration is stable.
fn admissible_map(
    rng: &mut ChaCha8Rng,
    h: usize,
    w: usize,
    c: usize,
    mlp: &MlpParams,
) -> Result<FeatureMap> {
    'attempt: for _ in 0..50 {
        let mut map = FeatureMap::from_fn(h, w, c, |_, _, _| rng.random_range(0.05..1.5))?;
        for _ in 0..80 {
            let (tau, _, _) = pdt_forward(&map, mlp)?;
            let mut moved = false;
            for y in 0..h {
                for x in 0..w {
                    for ch in 0..c {
                        let v = map.get(y, x, ch);
                        if (v - tau[ch]).abs() < KNEE_MARGIN * 1.3 {
                            map.set(y, x, ch, tau[ch] + KNEE_MARGIN * 2.0);
                            moved = true;
                        }
                    }
                }
            }
            // keep the channel max clear of the runner-up so finite
            // differences cannot flip the argmax
            for ch in 0..c {
                let mut best = f64::NEG_INFINITY;
                let mut second = f64::NEG_INFINITY;
                let mut best_pos = (0, 0);
                for y in 0..h {
                    for x in 0..w {
                        let v = map.get(y, x, ch);
                        if v > best {
                            second = best;
                            best = v;
                            best_pos = (y, x);
                        } else if v > second {
                            second = v;
                        }
                    }
                }
                if best - second < 0.02 {
                    map.set(best_pos.0, best_pos.1, ch, best + 0.05);
                    moved = true;
                }
            }
            if !moved {
                // verify the final margins before accepting
                let (tau, _, _) = pdt_forward(&map, mlp)?;
                let ok = (0..h).all(|y| {
                    (0..w).all(|x| {
                        (0..c).all(|ch| (map.get(y, x, ch) - tau[ch]).abs() > KNEE_MARGIN)
                    })
                });
                if ok {
                    return Ok(map);
                }
                continue 'attempt;
            }
        }
    }
    Err(Error::InvalidConfig(
        "could not construct a map with all entries clear of the threshold knee".into(),
    ))
}

fn random_mlp(rng: &mut ChaCha8Rng, channels: usize, reduction: usize) -> Result<MlpParams> {
    let mut mlp = MlpParams::random(channels, reduction, rng)?;
    // give the output layer real weights so both layers carry gradient
    let mut flat = mlp.flat();
    let first_layer = mlp.hidden() * channels + mlp.hidden();
    for v in flat.iter_mut().skip(first_layer) {
        *v = rng.random_range(-0.4..0.4);
    }
    mlp.set_flat(&flat);
    Ok(mlp)
}

/// Checks the threshold path alone: the loss is the sum of per-channel
/// thresholds, differentiated against MLP parameters and map entries.
pub fn check_pdt_path(seed: u64, min_comparisons: usize) -> Result<CheckReport> {
    let mut rng: ChaCha8Rng = stream(seed, 0x11, 0);
    let (h, w, c, r) = (3, 3, 4, 2);
    let mut worst = 0.0f64;
    let mut comparisons = 0;
    while comparisons < min_comparisons {
        let mlp = random_mlp(&mut rng, c, r)?;
        let map = admissible_map(&mut rng, h, w, c, &mlp)?;
        let loss = |map: &FeatureMap, mlp: &MlpParams| -> Result<f64> {
            let (tau, _, _) = pdt_forward(map, mlp)?;
            Ok(tau.iter().sum())
        };
        let (_, _, cache) = pdt_forward(&map, &mlp)?;
        let (d_input, d_mlp) = pdt_backward(&cache, &vec![1.0; c])?;

        let mut flat = mlp.flat();
        let analytic_flat = d_mlp.flat();
        for i in 0..flat.len() {
            let orig = flat[i];
            flat[i] = orig + FD_STEP;
            let mut m = mlp.clone();
            m.set_flat(&flat);
            let plus = loss(&map, &m)?;
            flat[i] = orig - FD_STEP;
            m.set_flat(&flat);
            let minus = loss(&map, &m)?;
            flat[i] = orig;
            worst = worst.max(rel_error(analytic_flat[i], (plus - minus) / (2.0 * FD_STEP)));
            comparisons += 1;
        }
        let mut perturbed = map.clone();
        for idx in 0..map.as_slice().len() {
            let orig = map.as_slice()[idx];
            perturbed.as_mut_slice()[idx] = orig + FD_STEP;
            let plus = loss(&perturbed, &mlp)?;
            perturbed.as_mut_slice()[idx] = orig - FD_STEP;
            let minus = loss(&perturbed, &mlp)?;
            perturbed.as_mut_slice()[idx] = orig;
            worst = worst.max(rel_error(d_input.as_slice()[idx], (plus - minus) / (2.0 * FD_STEP)));
            comparisons += 1;
        }
    }
    Ok(CheckReport { name: "pdt_path", max_rel_error: worst, comparisons, tolerance: 1e-4 })
}

/// Checks the full filter application: the loss is the sum of the filtered
/// map, differentiated against MLP parameters, blend weights, and map
/// entries.
pub fn check_pdaf_backward(seed: u64, min_comparisons: usize) -> Result<CheckReport> {
    let mut rng: ChaCha8Rng = stream(seed, 0x12, 0);
    let (h, w, c, r) = (3, 3, 4, 2);
    let mut worst = 0.0f64;
    let mut comparisons = 0;
    while comparisons < min_comparisons {
        let mlp = random_mlp(&mut rng, c, r)?;
        let map = admissible_map(&mut rng, h, w, c, &mlp)?;
        let lambda: Vec<f64> = (0..c).map(|_| rng.random_range(0.1..0.9)).collect();
        let params = FilterParams::with_lambda(lambda.clone(), 2)?;
        let loss = |map: &FeatureMap, mlp: &MlpParams, params: &FilterParams| -> Result<f64> {
            let (out, _) = pdaf_apply(map, mlp, params)?;
            Ok(out.as_slice().iter().sum())
        };
        let (_, cache) = pdaf_apply(&map, &mlp, &params)?;
        let upstream = FeatureMap::from_fn(h, w, c, |_, _, _| 1.0)?;
        let grads = pdaf_backward(&cache, &upstream)?;

        let mut flat = mlp.flat();
        let analytic_flat = grads.d_mlp.flat();
        for i in 0..flat.len() {
            let orig = flat[i];
            flat[i] = orig + FD_STEP;
            let mut m = mlp.clone();
            m.set_flat(&flat);
            let plus = loss(&map, &m, &params)?;
            flat[i] = orig - FD_STEP;
            m.set_flat(&flat);
            let minus = loss(&map, &m, &params)?;
            flat[i] = orig;
            worst = worst.max(rel_error(analytic_flat[i], (plus - minus) / (2.0 * FD_STEP)));
            comparisons += 1;
        }
        for ch in 0..c {
            let mut bumped = lambda.clone();
            bumped[ch] += FD_STEP;
            let plus = loss(&map, &mlp, &FilterParams::with_lambda(bumped.clone(), 2)?)?;
            bumped[ch] = lambda[ch] - FD_STEP;
            let minus = loss(&map, &mlp, &FilterParams::with_lambda(bumped, 2)?)?;
            worst = worst.max(rel_error(grads.d_lambda[ch], (plus - minus) / (2.0 * FD_STEP)));
            comparisons += 1;
        }
        let mut perturbed = map.clone();
        for idx in 0..map.as_slice().len() {
            let orig = map.as_slice()[idx];
            perturbed.as_mut_slice()[idx] = orig + FD_STEP;
            let plus = loss(&perturbed, &mlp, &params)?;
            perturbed.as_mut_slice()[idx] = orig - FD_STEP;
            let minus = loss(&perturbed, &mlp, &params)?;
            perturbed.as_mut_slice()[idx] = orig;
            worst = worst
                .max(rel_error(grads.d_input.as_slice()[idx], (plus - minus) / (2.0 * FD_STEP)));
            comparisons += 1;
        }
    }
    Ok(CheckReport { name: "pdaf_backward", max_rel_error: worst, comparisons, tolerance: 1e-4 })
}

/// Checks the contrastive-loss feature gradient against finite differences.
pub fn check_contrastive(seed: u64, min_comparisons: usize) -> Result<CheckReport> {
    let mut rng: ChaCha8Rng = stream(seed, 0x13, 0);
    let (k, d) = (6usize, 8usize);
    let mut features = Vec::with_capacity(2 * k);
    let mut labels = Vec::with_capacity(2 * k);
    for i in 0..2 * k {
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = crate::cluster::l2_normalize(&InstanceFeature::new(v)?)?;
        features.push(f);
        labels.push((i % k) as i64);
    }
    let assignment = crate::cluster::ClusterAssignment { labels, cluster_count: k };
    let dict = ProxyDictionary::init_proxies(&features, &assignment, &CprConfig::default())?;

    let mut worst = 0.0f64;
    let mut comparisons = 0;
    let mut query_idx = 0u64;
    while comparisons < min_comparisons {
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-3 {
            continue;
        }
        let f: Vec<f64> = v.iter().map(|x| x / norm).collect();
        let positive = (query_idx as usize) % k;
        query_idx += 1;
        let (_, grad) = dict.contrastive_loss(&f, positive)?;
        for dim in 0..d {
            let mut plus = f.clone();
            plus[dim] += FD_STEP;
            let mut minus = f.clone();
            minus[dim] -= FD_STEP;
            let (lp, _) = dict.contrastive_loss(&plus, positive)?;
            let (lm, _) = dict.contrastive_loss(&minus, positive)?;
            worst = worst.max(rel_error(grad[dim], (lp - lm) / (2.0 * FD_STEP)));
            comparisons += 1;
        }
    }
    Ok(CheckReport { name: "contrastive_loss", max_rel_error: worst, comparisons, tolerance: 1e-5 })
}

/// Runs the full battery: the filter derivative, the threshold path, the
/// full filter application, and the contrastive loss, each with at least
/// `trials` compared partials.
pub fn run_battery(seed: u64, trials: usize) -> Result<Vec<CheckReport>> {
    if trials == 0 {
        return Err(Error::InvalidConfig("trials must be at least 1".into()));
    }
    Ok(vec![
        check_scf_backward(seed, trials, crate::filter::scf_backward),
        check_pdt_path(seed, trials)?,
        check_pdaf_backward(seed, trials)?,
        check_contrastive(seed, trials)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn battery_passes_on_the_real_implementations() {
        for report in run_battery(123, 600).unwrap() {
            assert!(
                report.passed(),
                "{} failed: max rel error {} over {} comparisons",
                report.name,
                report.max_rel_error,
                report.comparisons
            );
        }
    }

    #[test]
    fn battery_catches_an_injected_sign_bug() {
        let sabotaged = |x: f64, tau: f64, lambda: f64, up: f64| {
            let (dx, dtau, dl) = crate::filter::scf_backward(x, tau, lambda, up);
            (dx, -dtau, dl)
        };
        let report = check_scf_backward(123, 500, sabotaged);
        assert!(!report.passed(), "sign bug went undetected");
    }
}
