//! Dense activation maps and per-channel vectors.
//!
//! A [`FeatureMap`] is an `H x W x C` block of finite reals. Storage layout is
//! an internal detail; element access goes through `(row, col, channel)`
//! indices. The canonical order used by [`FeatureMap::write`] (and everywhere
//! a flat view is exposed) is row-major with the channel index fastest:
//! `(0,0,0), (0,0,1), ..., (0,1,0), ...`.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};

/// An `H x W x C` activation tensor with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    /// Builds a map from values in canonical order. Rejects empty dimensions,
    /// length mismatches and non-finite entries.
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::InvalidConfig(format!(
                "feature map dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::ShapeMismatch {
                expected: format!("{} values", height * width * channels),
                got: format!("{}", data.len()),
            });
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("feature map entry {bad}")));
        }
        Ok(Self { height, width, channels, data })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Result<Self> {
        Self::new(height, width, channels, vec![0.0; height * width * channels])
    }

    /// Builds a map by evaluating `f(row, col, channel)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    fn offset(&self, y: usize, x: usize, c: usize) -> usize {
        debug_assert!(y < self.height && x < self.width && c < self.channels);
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[self.offset(y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, value: f64) {
        let i = self.offset(y, x, c);
        self.data[i] = value;
    }

    /// Flat view in canonical order.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn same_shape(&self, other: &FeatureMap) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    /// Writes the canonical text serialization: a header line
    /// `f64 <H> <W> <C>` followed by one value per line in canonical order.
    /// Values round-trip exactly through their shortest decimal form.
    pub fn write(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "f64 {} {} {}", self.height, self.width, self.channels)?;
        for v in &self.data {
            writeln!(w, "{v}")?;
        }
        Ok(())
    }

    /// Parses the canonical text serialization produced by [`FeatureMap::write`].
    pub fn read(r: impl BufRead) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty tensor file".into()))??;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 4 || fields[0] != "f64" {
            return Err(Error::Parse(format!(
                "bad tensor header {header:?}, expected \"f64 H W C\""
            )));
        }
        let dims: Vec<usize> = fields[1..]
            .iter()
            .map(|s| {
                s.parse::<usize>()
                    .map_err(|_| Error::Parse(format!("bad dimension {s:?} in header")))
            })
            .collect::<Result<_>>()?;
        let (h, w, c) = (dims[0], dims[1], dims[2]);
        let mut data = Vec::with_capacity(h * w * c);
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let v: f64 = line
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("bad value {line:?} at line {}", i + 2)))?;
            data.push(v);
        }
        Self::new(h, w, c, data)
    }
}

/// A `1 x 1 x C` per-channel vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelVector {
    values: Vec<f64>,
}

impl ChannelVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidConfig("channel vector must be non-empty".into()));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("channel vector entry {bad}")));
        }
        Ok(Self { values })
    }

    pub(crate) fn from_finite(values: Vec<f64>) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite()));
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.values
    }
}

impl std::ops::Deref for ChannelVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.values
    }
}

/// Per-channel mean over the spatial grid.
pub fn avg_pool(map: &FeatureMap) -> ChannelVector {
    let area = (map.height() * map.width()) as f64;
    let mut sums = vec![0.0; map.channels()];
    for (i, v) in map.as_slice().iter().enumerate() {
        sums[i % map.channels()] += v;
    }
    for s in &mut sums {
        *s /= area;
    }
    ChannelVector::from_finite(sums)
}

/// Per-channel max over the spatial grid.
pub fn max_pool(map: &FeatureMap) -> ChannelVector {
    ChannelVector::from_finite(max_pool_with_argmax(map).0)
}

/// Per-channel max plus the flat spatial index (`y * W + x`) where it occurs.
/// Ties resolve to the lowest index, which is also where the gradient is
/// routed on the backward pass.
pub(crate) fn max_pool_with_argmax(map: &FeatureMap) -> (Vec<f64>, Vec<usize>) {
    let c = map.channels();
    let mut maxima = vec![f64::NEG_INFINITY; c];
    let mut argmax = vec![0usize; c];
    for (i, v) in map.as_slice().iter().enumerate() {
        let ch = i % c;
        if *v > maxima[ch] {
            maxima[ch] = *v;
            argmax[ch] = i / c;
        }
    }
    (maxima, argmax)
}
