//! Perception-driven adaptive filtering of activation maps.
//!
//! The per-channel threshold is `tau = alpha * avg_pool(F)`: the channel mean
//! acts as a base threshold and `alpha = sigmoid(MLP(max_pool(F)))` scales it
//! by how strongly the channel's peak response indicates foreground content.
//! The thresholded map is produced by the self-calibrating filter from
//! [`crate::filter`], applied element-wise.
//!
//! Everything here is a pure function; backward passes consume caches
//! returned by the forward passes rather than hidden state.

use rand::Rng;

use crate::error::{Error, Result};
use crate::filter::{scf_backward, scf_forward, FilterParams};
use crate::tensor::{avg_pool, max_pool_with_argmax, ChannelVector, FeatureMap};

/// Two dense layers squeezing `C` channels through `max(1, C / reduction)`
/// hidden units. There is no hidden activation; the sigmoid that bounds the
/// scaling factor is applied by the caller.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    channels: usize,
    hidden: usize,
    reduction: usize,
    /// hidden x channels, row-major
    w1: Vec<f64>,
    b1: Vec<f64>,
    /// channels x hidden, row-major
    w2: Vec<f64>,
    b2: Vec<f64>,
}

impl MlpParams {
    fn shape(channels: usize, reduction: usize) -> Result<(usize, usize)> {
        if channels == 0 || reduction == 0 {
            return Err(Error::InvalidConfig(format!(
                "mlp needs positive channels and reduction, got {channels} / {reduction}"
            )));
        }
        Ok((channels, (channels / reduction).max(1)))
    }

    /// All-zero parameters. With them the scaling factor is sigmoid(0) = 0.5
    /// for every channel.
    pub fn zeros(channels: usize, reduction: usize) -> Result<Self> {
        let (channels, hidden) = Self::shape(channels, reduction)?;
        Ok(Self {
            channels,
            hidden,
            reduction,
            w1: vec![0.0; hidden * channels],
            b1: vec![0.0; hidden],
            w2: vec![0.0; channels * hidden],
            b2: vec![0.0; channels],
        })
    }

    /// Random first layer, zero-initialized output layer, so training starts
    /// from the gentle alpha = 0.5 filter regardless of the draw.
    pub fn random(channels: usize, reduction: usize, rng: &mut impl Rng) -> Result<Self> {
        let mut params = Self::zeros(channels, reduction)?;
        let bound = 1.0 / (channels as f64).sqrt();
        for w in &mut params.w1 {
            *w = rng.random_range(-bound..bound);
        }
        Ok(params)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn reduction(&self) -> usize {
        self.reduction
    }

    /// Returns `(hidden_activations, output)`.
    pub fn forward(&self, input: &[f64]) -> (Vec<f64>, Vec<f64>) {
        debug_assert_eq!(input.len(), self.channels);
        let mut hidden = self.b1.clone();
        for i in 0..self.hidden {
            let row = &self.w1[i * self.channels..(i + 1) * self.channels];
            hidden[i] += row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
        }
        let mut out = self.b2.clone();
        for c in 0..self.channels {
            let row = &self.w2[c * self.hidden..(c + 1) * self.hidden];
            out[c] += row.iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>();
        }
        (hidden, out)
    }

    /// Gradient container with the same shapes, all zero.
    pub fn zeros_like(&self) -> Self {
        Self {
            channels: self.channels,
            hidden: self.hidden,
            reduction: self.reduction,
            w1: vec![0.0; self.w1.len()],
            b1: vec![0.0; self.b1.len()],
            w2: vec![0.0; self.w2.len()],
            b2: vec![0.0; self.b2.len()],
        }
    }

    pub fn accumulate(&mut self, other: &MlpParams) {
        for (a, b) in self.w1.iter_mut().zip(&other.w1) {
            *a += b;
        }
        for (a, b) in self.b1.iter_mut().zip(&other.b1) {
            *a += b;
        }
        for (a, b) in self.w2.iter_mut().zip(&other.w2) {
            *a += b;
        }
        for (a, b) in self.b2.iter_mut().zip(&other.b2) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self
            .w1
            .iter_mut()
            .chain(&mut self.b1)
            .chain(&mut self.w2)
            .chain(&mut self.b2)
        {
            *v *= factor;
        }
    }

    /// One descent step with gradients shaped like the parameters.
    pub fn sgd_step(&mut self, grad: &MlpParams, learning_rate: f64) {
        debug_assert_eq!(self.channels, grad.channels);
        for (p, g) in self.w1.iter_mut().zip(&grad.w1) {
            *p -= learning_rate * g;
        }
        for (p, g) in self.b1.iter_mut().zip(&grad.b1) {
            *p -= learning_rate * g;
        }
        for (p, g) in self.w2.iter_mut().zip(&grad.w2) {
            *p -= learning_rate * g;
        }
        for (p, g) in self.b2.iter_mut().zip(&grad.b2) {
            *p -= learning_rate * g;
        }
    }

    /// Flat parameter view in a fixed order (w1, b1, w2, b2); used by the
    /// finite-difference battery.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len());
        out.extend_from_slice(&self.w1);
        out.extend_from_slice(&self.b1);
        out.extend_from_slice(&self.w2);
        out.extend_from_slice(&self.b2);
        out
    }

    /// Writes the flat view back into the parameters.
    pub fn set_flat(&mut self, flat: &[f64]) {
        let mut it = flat.iter();
        for v in self
            .w1
            .iter_mut()
            .chain(&mut self.b1)
            .chain(&mut self.w2)
            .chain(&mut self.b2)
        {
            *v = *it.next().expect("flat parameter vector too short");
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Forward intermediates for the threshold computation. `mlp` is `None` when
/// the threshold is the plain channel average (the ungated ablation mode).
#[derive(Debug, Clone)]
pub struct ThresholdCache {
    height: usize,
    width: usize,
    channels: usize,
    avg: Vec<f64>,
    max: Vec<f64>,
    argmax: Vec<usize>,
    hidden: Vec<f64>,
    alpha: Vec<f64>,
    tau_raw: Vec<f64>,
    tau: Vec<f64>,
    mlp: Option<MlpParams>,
}

impl ThresholdCache {
    pub fn tau(&self) -> &[f64] {
        &self.tau
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }
}

pub(crate) fn threshold_forward(map: &FeatureMap, mlp: Option<&MlpParams>) -> Result<ThresholdCache> {
    if let Some(mlp) = mlp {
        if mlp.channels() != map.channels() {
            return Err(Error::ShapeMismatch {
                expected: format!("mlp over {} channels", map.channels()),
                got: format!("{}", mlp.channels()),
            });
        }
    }
    let avg = avg_pool(map).into_inner();
    let (max, argmax) = max_pool_with_argmax(map);
    let (hidden, alpha) = match mlp {
        Some(mlp) => {
            let (hidden, z) = mlp.forward(&max);
            (hidden, z.into_iter().map(sigmoid).collect::<Vec<_>>())
        }
        // no perception pathway: the scaling stays at the sigmoid-of-zero
        // constant, so the threshold is a fixed half of the channel mean
        None => (Vec::new(), vec![0.5; map.channels()]),
    };
    let tau_raw: Vec<f64> = alpha.iter().zip(&avg).map(|(a, m)| a * m).collect();
    // Thresholds below zero carry no meaning for a shrinkage dead zone; they
    // are clamped and the clamp gates the backward pass.
    let tau: Vec<f64> = tau_raw.iter().map(|t| t.max(0.0)).collect();
    Ok(ThresholdCache {
        height: map.height(),
        width: map.width(),
        channels: map.channels(),
        avg,
        max,
        argmax,
        hidden,
        alpha,
        tau_raw,
        tau,
        mlp: mlp.cloned(),
    })
}

/// Routes a per-channel threshold gradient back to the input map and the MLP.
///
/// The average-pool path spreads its share uniformly over the grid; the
/// max-pool path routes through the recorded argmax (lowest index on ties).
pub(crate) fn threshold_backward(
    cache: &ThresholdCache,
    d_tau: &[f64],
) -> Result<(FeatureMap, Option<MlpParams>)> {
    if d_tau.len() != cache.channels {
        return Err(Error::ShapeMismatch {
            expected: format!("{} threshold gradients", cache.channels),
            got: format!("{}", d_tau.len()),
        });
    }
    let c = cache.channels;
    let area = (cache.height * cache.width) as f64;
    let gate: Vec<f64> = cache
        .tau_raw
        .iter()
        .map(|t| if *t >= 0.0 { 1.0 } else { 0.0 })
        .collect();
    let d_avg: Vec<f64> = (0..c).map(|i| d_tau[i] * gate[i] * cache.alpha[i]).collect();

    let mut d_input = FeatureMap::zeros(cache.height, cache.width, cache.channels)?;
    {
        let slice = d_input.as_mut_slice();
        for (i, v) in slice.iter_mut().enumerate() {
            *v += d_avg[i % c] / area;
        }
    }

    let d_mlp = match &cache.mlp {
        Some(mlp) => {
            let d_alpha: Vec<f64> = (0..c).map(|i| d_tau[i] * gate[i] * cache.avg[i]).collect();
            let dz: Vec<f64> = (0..c)
                .map(|i| d_alpha[i] * cache.alpha[i] * (1.0 - cache.alpha[i]))
                .collect();
            let mut grad = mlp.zeros_like();
            let hidden = mlp.hidden();
            let mut d_hidden = vec![0.0; hidden];
            for ch in 0..c {
                grad.b2[ch] = dz[ch];
                for j in 0..hidden {
                    grad.w2[ch * hidden + j] = dz[ch] * cache.hidden[j];
                    d_hidden[j] += mlp.w2[ch * hidden + j] * dz[ch];
                }
            }
            let mut d_max = vec![0.0; c];
            for i in 0..hidden {
                grad.b1[i] = d_hidden[i];
                for j in 0..c {
                    grad.w1[i * c + j] = d_hidden[i] * cache.max[j];
                    d_max[j] += mlp.w1[i * c + j] * d_hidden[i];
                }
            }
            let slice = d_input.as_mut_slice();
            for ch in 0..c {
                slice[cache.argmax[ch] * c + ch] += d_max[ch];
            }
            Some(grad)
        }
        None => None,
    };
    Ok((d_input, d_mlp))
}

/// Computes the perception-driven threshold `tau = sigmoid(MLP(max)) * avg`.
/// Returns the threshold, the scaling factor, and the cache for the backward
/// pass.
pub fn pdt_forward(
    map: &FeatureMap,
    mlp: &MlpParams,
) -> Result<(ChannelVector, ChannelVector, ThresholdCache)> {
    let cache = threshold_forward(map, Some(mlp))?;
    let tau = ChannelVector::new(cache.tau.clone())?;
    let alpha = ChannelVector::new(cache.alpha.clone())?;
    Ok((tau, alpha, cache))
}

/// Backward pass of [`pdt_forward`] alone: routes a threshold gradient to the
/// input map and the MLP parameters.
pub fn pdt_backward(cache: &ThresholdCache, d_tau: &[f64]) -> Result<(FeatureMap, MlpParams)> {
    let (d_input, d_mlp) = threshold_backward(cache, d_tau)?;
    let d_mlp = d_mlp.ok_or_else(|| {
        Error::InvalidConfig("cache was built without an mlp; no mlp gradient exists".into())
    })?;
    Ok((d_input, d_mlp))
}

/// Forward cache of one filter application.
#[derive(Debug, Clone)]
pub struct PdafCache {
    input: FeatureMap,
    threshold: ThresholdCache,
    lambda: Vec<f64>,
}

impl PdafCache {
    pub fn tau(&self) -> &[f64] {
        self.threshold.tau()
    }

    /// The map this stage was applied to.
    pub fn input(&self) -> &FeatureMap {
        &self.input
    }
}

/// Gradients of everything feeding one filter application.
#[derive(Debug, Clone)]
pub struct FilterGradients {
    /// Same shape as the input map.
    pub d_input: FeatureMap,
    /// Per-channel gradient of the blend weights.
    pub d_lambda: Vec<f64>,
    /// MLP-shaped parameter gradients.
    pub d_mlp: MlpParams,
    /// Per-channel gradient accumulated on the threshold vector itself.
    pub d_threshold: Vec<f64>,
}

pub(crate) fn stage_forward(
    map: &FeatureMap,
    mlp: Option<&MlpParams>,
    params: &FilterParams,
) -> Result<(FeatureMap, PdafCache)> {
    if params.channels() != map.channels() {
        return Err(Error::ShapeMismatch {
            expected: format!("filter over {} channels", map.channels()),
            got: format!("{}", params.channels()),
        });
    }
    if params.order() != 2 {
        return Err(Error::InvalidConfig(format!(
            "the self-calibrating blend is second-order; got order {}",
            params.order()
        )));
    }
    let threshold = threshold_forward(map, mlp)?;
    let lambda = params.lambda().to_vec();
    let c = map.channels();
    let mut out = map.clone();
    for (i, v) in out.as_mut_slice().iter_mut().enumerate() {
        let ch = i % c;
        *v = scf_forward(*v, threshold.tau[ch], lambda[ch]);
    }
    Ok((
        out,
        PdafCache { input: map.clone(), threshold, lambda },
    ))
}

pub(crate) fn stage_backward(cache: &PdafCache, upstream: &FeatureMap) -> Result<StageGradients> {
    if !upstream.same_shape(&cache.input) {
        return Err(Error::ShapeMismatch {
            expected: format!(
                "upstream {}x{}x{}",
                cache.input.height(),
                cache.input.width(),
                cache.input.channels()
            ),
            got: format!(
                "{}x{}x{}",
                upstream.height(),
                upstream.width(),
                upstream.channels()
            ),
        });
    }
    let c = cache.input.channels();
    let mut d_input = FeatureMap::zeros(cache.input.height(), cache.input.width(), c)?;
    let mut d_lambda = vec![0.0; c];
    let mut d_threshold = vec![0.0; c];
    {
        let d_slice = d_input.as_mut_slice();
        for (i, (&x, &up)) in cache
            .input
            .as_slice()
            .iter()
            .zip(upstream.as_slice())
            .enumerate()
        {
            let ch = i % c;
            let (dx, dtau, dl) = scf_backward(x, cache.threshold.tau[ch], cache.lambda[ch], up);
            d_slice[i] = dx;
            d_threshold[ch] += dtau;
            d_lambda[ch] += dl;
        }
    }
    let (d_input_pool, d_mlp) = threshold_backward(&cache.threshold, &d_threshold)?;
    for (a, b) in d_input.as_mut_slice().iter_mut().zip(d_input_pool.as_slice()) {
        *a += b;
    }
    Ok(StageGradients { d_input, d_lambda, d_mlp, d_threshold })
}

/// Like [`FilterGradients`] but for stages whose threshold may be the plain
/// channel average (no MLP).
#[derive(Debug, Clone)]
pub(crate) struct StageGradients {
    pub d_input: FeatureMap,
    pub d_lambda: Vec<f64>,
    pub d_mlp: Option<MlpParams>,
    pub d_threshold: Vec<f64>,
}

/// Applies the self-calibrating filter under the perception-driven threshold
/// to every element of the map. Dead-zone entries come out exactly zero.
pub fn pdaf_apply(
    map: &FeatureMap,
    mlp: &MlpParams,
    params: &FilterParams,
) -> Result<(FeatureMap, PdafCache)> {
    stage_forward(map, Some(mlp), params)
}

/// Chain rule through one [`pdaf_apply`] call: the filter itself, the
/// `tau = alpha * avg` product, the sigmoid/MLP path, and both pooling
/// operators.
pub fn pdaf_backward(cache: &PdafCache, upstream: &FeatureMap) -> Result<FilterGradients> {
    let grads = stage_backward(cache, upstream)?;
    let d_mlp = grads.d_mlp.ok_or_else(|| {
        Error::InvalidConfig("cache was built without an mlp; use the stage-level backward".into())
    })?;
    Ok(FilterGradients {
        d_input: grads.d_input,
        d_lambda: grads.d_lambda,
        d_mlp,
        d_threshold: grads.d_threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::scf_backward;
    use rand::SeedableRng;

    #[test]
    fn zero_mlp_gives_half_alpha() {
        let map = FeatureMap::from_fn(2, 3, 4, |y, x, c| (y + x + c) as f64 * 0.1 + 0.2).unwrap();
        let mlp = MlpParams::zeros(4, 16).unwrap();
        let (tau, alpha, _) = pdt_forward(&map, &mlp).unwrap();
        let avg = avg_pool(&map);
        for c in 0..4 {
            assert_eq!(alpha[c], 0.5);
            assert!((tau[c] - 0.5 * avg[c]).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_map_gives_zero_threshold() {
        let map = FeatureMap::zeros(3, 3, 2).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let mlp = MlpParams::random(2, 1, &mut rng).unwrap();
        let (tau, _, _) = pdt_forward(&map, &mlp).unwrap();
        assert!(tau.iter().all(|&t| t == 0.0));
    }

    #[test]
    fn random_init_keeps_alpha_at_half() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let mlp = MlpParams::random(8, 4, &mut rng).unwrap();
        let map = FeatureMap::from_fn(4, 4, 8, |y, x, c| ((y * 4 + x + c) % 7) as f64 * 0.3).unwrap();
        let (_, alpha, _) = pdt_forward(&map, &mlp).unwrap();
        // zero-initialized output layer forces sigmoid(0)
        assert!(alpha.iter().all(|&a| a == 0.5));
    }

    #[test]
    fn pdt_matches_compositional_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(41);
        let (h, w, c, r) = (4, 5, 6, 2);
        let map = FeatureMap::from_fn(h, w, c, |_, _, _| {
            rand::Rng::random_range(&mut rng, 0.0..2.0)
        })
        .unwrap();
        let mut mlp = MlpParams::random(c, r, &mut rng).unwrap();
        // give the output layer real weights so the oracle exercises both layers
        let flat_len = mlp.flat().len();
        let mut flat = mlp.flat();
        for v in flat.iter_mut().skip(flat_len / 2) {
            *v = rand::Rng::random_range(&mut rng, -0.5..0.5);
        }
        mlp.set_flat(&flat);

        let (tau, alpha, _) = pdt_forward(&map, &mlp).unwrap();

        // independent scalar-loop recomputation
        for ch in 0..c {
            let mut sum = 0.0;
            let mut max = f64::NEG_INFINITY;
            for y in 0..h {
                for x in 0..w {
                    sum += map.get(y, x, ch);
                    max = max.max(map.get(y, x, ch));
                }
            }
            let avg = sum / (h * w) as f64;
            let maxes: Vec<f64> = (0..c)
                .map(|cc| {
                    let mut m = f64::NEG_INFINITY;
                    for y in 0..h {
                        for x in 0..w {
                            m = m.max(map.get(y, x, cc));
                        }
                    }
                    m
                })
                .collect();
            let (_, z) = mlp.forward(&maxes);
            let a = 1.0 / (1.0 + (-z[ch]).exp());
            assert!((alpha[ch] - a).abs() < 1e-10);
            assert!((tau[ch] - a * avg).abs() < 1e-10);
            let _ = max;
        }
    }

    #[test]
    fn mlp_shape_mismatch_is_config_error() {
        let map = FeatureMap::zeros(2, 2, 3).unwrap();
        let mlp = MlpParams::zeros(4, 2).unwrap();
        assert!(pdt_forward(&map, &mlp).is_err());
    }

    #[test]
    fn apply_zero_map_is_zero() {
        let map = FeatureMap::zeros(3, 4, 2).unwrap();
        let mlp = MlpParams::zeros(2, 1).unwrap();
        let fp = FilterParams::new(2, 2).unwrap();
        let (out, _) = pdaf_apply(&map, &mlp, &fp).unwrap();
        assert!(out.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn apply_with_zero_lambda_is_soft_threshold_of_half_avg() {
        let map = FeatureMap::from_fn(3, 3, 2, |y, x, c| ((y * 3 + x) as f64 * 0.2) + c as f64 * 0.05)
            .unwrap();
        let mlp = MlpParams::zeros(2, 1).unwrap();
        let fp = FilterParams::new(2, 2).unwrap();
        let (out, _) = pdaf_apply(&map, &mlp, &fp).unwrap();
        let avg = avg_pool(&map);
        for y in 0..3 {
            for x in 0..3 {
                for c in 0..2 {
                    let expected = crate::filter::soft_threshold(map.get(y, x, c), 0.5 * avg[c]);
                    assert_eq!(out.get(y, x, c), expected);
                }
            }
        }
    }

    #[test]
    fn apply_matches_element_loop_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        let (h, w, c) = (4, 4, 3);
        let map = FeatureMap::from_fn(h, w, c, |_, _, _| {
            rand::Rng::random_range(&mut rng, 0.0..1.5)
        })
        .unwrap();
        let mlp = MlpParams::random(c, 1, &mut rng).unwrap();
        let fp = FilterParams::with_lambda(vec![0.3, 0.6, 0.9], 2).unwrap();
        let (out, cache) = pdaf_apply(&map, &mlp, &fp).unwrap();
        let (tau, _, _) = pdt_forward(&map, &mlp).unwrap();
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    let expected = scf_forward(map.get(y, x, ch), tau[ch], fp.lambda()[ch]);
                    assert!((out.get(y, x, ch) - expected).abs() < 1e-10);
                }
            }
        }
        assert_eq!(cache.tau(), &tau[..]);
    }

    #[test]
    fn backward_zero_upstream_gives_zero_gradients() {
        let map = FeatureMap::from_fn(2, 2, 2, |y, x, c| (y + x + c) as f64 * 0.4 + 0.1).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let mlp = MlpParams::random(2, 1, &mut rng).unwrap();
        let fp = FilterParams::with_lambda(vec![0.5, 0.5], 2).unwrap();
        let (_, cache) = pdaf_apply(&map, &mlp, &fp).unwrap();
        let upstream = FeatureMap::zeros(2, 2, 2).unwrap();
        let grads = pdaf_backward(&cache, &upstream).unwrap();
        assert!(grads.d_input.as_slice().iter().all(|&v| v == 0.0));
        assert!(grads.d_lambda.iter().all(|&v| v == 0.0));
        assert!(grads.d_mlp.flat().iter().all(|&v| v == 0.0));
        assert!(grads.d_threshold.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_rejects_mismatched_upstream() {
        let map = FeatureMap::zeros(2, 2, 2).unwrap();
        let mlp = MlpParams::zeros(2, 1).unwrap();
        let fp = FilterParams::new(2, 2).unwrap();
        let (_, cache) = pdaf_apply(&map, &mlp, &fp).unwrap();
        let upstream = FeatureMap::zeros(3, 2, 2).unwrap();
        assert!(pdaf_backward(&cache, &upstream).is_err());
    }

    /// Hand derivation for a single-pixel map, where the whole chain collapses
    /// to scalars: out = scf(x, sigmoid(w2*(w1*x + b1) + b2) * x, lambda).
    #[test]
    fn backward_single_pixel_matches_hand_chain() {
        let x0 = 2.0;
        let (a, b, d, e) = (0.3, 0.1, 0.5, -0.2);
        let lambda = 0.4;

        let map = FeatureMap::new(1, 1, 1, vec![x0]).unwrap();
        let mut mlp = MlpParams::zeros(1, 1).unwrap();
        mlp.set_flat(&[a, b, d, e]);
        let fp = FilterParams::with_lambda(vec![lambda], 2).unwrap();
        let (_, cache) = pdaf_apply(&map, &mlp, &fp).unwrap();
        let upstream = FeatureMap::new(1, 1, 1, vec![1.0]).unwrap();
        let grads = pdaf_backward(&cache, &upstream).unwrap();

        // scalar chain written out by hand
        let hidden = a * x0 + b;
        let z = d * hidden + e;
        let alpha = 1.0 / (1.0 + (-z as f64).exp());
        let tau = alpha * x0;
        let (dx, dtau, dl) = scf_backward(x0, tau, lambda, 1.0);
        let d_alpha = dtau * x0;
        let dz = d_alpha * alpha * (1.0 - alpha);
        let d_w2 = dz * hidden;
        let d_b2 = dz;
        let d_hidden = d * dz;
        let d_w1 = d_hidden * x0;
        let d_b1 = d_hidden;
        let d_max = a * d_hidden;
        let d_input = dx + dtau * alpha + d_max;

        assert!((grads.d_input.get(0, 0, 0) - d_input).abs() < 1e-12);
        assert!((grads.d_lambda[0] - dl).abs() < 1e-12);
        assert!((grads.d_threshold[0] - dtau).abs() < 1e-12);
        let flat = grads.d_mlp.flat();
        assert!((flat[0] - d_w1).abs() < 1e-12);
        assert!((flat[1] - d_b1).abs() < 1e-12);
        assert!((flat[2] - d_w2).abs() < 1e-12);
        assert!((flat[3] - d_b2).abs() < 1e-12);
    }
}
