//! Dense containers for branch features and per-location maps.
//!
//! A [`FeatureMap`] is a `C x H x W` block of `f32` values stored row-major in
//! `(c, j, k)` order, so the channel vector at a spatial location `(j, k)` is
//! strided by `H * W`. A [`SpatialMap`] is an `H x W` field of `f64` values
//! holding per-location statistics. Both are immutable once built and reject
//! non-finite values at construction.

use std::fmt;

use crate::error::{Error, Result};

fn first_non_finite<I: IntoIterator<Item = bool>>(finite: I) -> Option<usize> {
    finite.into_iter().position(|ok| !ok)
}

/// One branch's feature output at a single fusion site.
#[derive(Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::ZeroDimension {
                channels,
                height,
                width,
            });
        }
        let expected = channels * height * width;
        if data.len() != expected {
            return Err(Error::Length {
                expected,
                got: data.len(),
            });
        }
        if let Some(index) = first_non_finite(data.iter().map(|v| v.is_finite())) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    /// Copies `data` into a new map.
    pub fn from_slice(channels: usize, height: usize, width: usize, data: &[f32]) -> Result<Self> {
        Self::new(channels, height, width, data.to_vec())
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Result<Self> {
        Self::new(
            channels,
            height,
            width,
            vec![0.0; channels * height * width],
        )
    }

    /// Builds a map from a function of `(c, j, k)`.
    pub fn from_fn<F>(channels: usize, height: usize, width: usize, mut f: F) -> Result<Self>
    where
        F: FnMut(usize, usize, usize) -> f32,
    {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for j in 0..height {
                for k in 0..width {
                    data.push(f(c, j, k));
                }
            }
        }
        Self::new(channels, height, width, data)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `(C, H, W)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, c: usize, j: usize, k: usize) -> f32 {
        self.data[(c * self.height + j) * self.width + k]
    }

    /// Channel values at flat spatial index `p = j * W + k`.
    pub fn channel_iter(&self, p: usize) -> impl Iterator<Item = f32> + Clone + '_ {
        self.data.iter().skip(p).step_by(self.plane_len()).copied()
    }

    /// Channel vector at flat spatial index `p`, copied out.
    pub fn channel_vector(&self, p: usize) -> Vec<f32> {
        self.channel_iter(p).collect()
    }

    /// Elementwise map. Fails if the result is not finite.
    pub fn map<F: FnMut(f32) -> f32>(&self, f: F) -> Result<Self> {
        let data = self.data.iter().copied().map(f).collect();
        Self::new(self.channels, self.height, self.width, data)
    }

    /// Multiplies every element by `factor`.
    pub fn scale(&self, factor: f32) -> Result<Self> {
        self.map(|v| v * factor)
    }

    pub(crate) fn ensure_same_shape(&self, other: &FeatureMap) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape {
                left: shape_string(self.shape()),
                right: shape_string(other.shape()),
            });
        }
        Ok(())
    }
}

impl fmt::Debug for FeatureMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FeatureMap")
            .field("shape", &(self.channels, self.height, self.width))
            .field("data", &self.data)
            .finish()
    }
}

pub(crate) fn shape_string((c, h, w): (usize, usize, usize)) -> String {
    format!("{c}x{h}x{w}")
}

/// A per-location scalar field (σ, σ̂, ρ, or a simulator image).
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialMap {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl SpatialMap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::ZeroDimension {
                channels: 1,
                height,
                width,
            });
        }
        if data.len() != height * width {
            return Err(Error::Length {
                expected: height * width,
                got: data.len(),
            });
        }
        if let Some(index) = first_non_finite(data.iter().map(|v| v.is_finite())) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn from_fn<F: FnMut(usize, usize) -> f64>(
        height: usize,
        width: usize,
        mut f: F,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for j in 0..height {
            for k in 0..width {
                data.push(f(j, k));
            }
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.data[j * self.width + k]
    }

    /// Sequential row-major sum.
    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    /// Lossy `f32` view as a single-channel feature map, for serialization.
    pub fn to_feature_map(&self) -> Result<FeatureMap> {
        FeatureMap::new(
            1,
            self.height,
            self.width,
            self.data.iter().map(|&v| v as f32).collect(),
        )
    }

    /// Reads back a single-channel feature map.
    pub fn from_feature_map(map: &FeatureMap) -> Result<Self> {
        if map.channels() != 1 {
            return Err(Error::Shape {
                left: shape_string(map.shape()),
                right: shape_string((1, map.height(), map.width())),
            });
        }
        Self::new(
            map.height(),
            map.width(),
            map.as_slice().iter().map(|&v| v as f64).collect(),
        )
    }
}

/// Which fusion case fired at a spatial location.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Selection {
    Averaged,
    Winner(usize),
}

impl Selection {
    /// Numeric tag used on disk: `-1` for averaged, the branch index otherwise.
    pub fn tag(self) -> f32 {
        match self {
            Selection::Averaged => -1.0,
            Selection::Winner(b) => b as f32,
        }
    }

    /// Gray level used in PGM exports.
    pub fn gray(self) -> u8 {
        match self {
            Selection::Averaged => 0,
            Selection::Winner(b) => (64 + 64 * b).min(255) as u8,
        }
    }
}

/// Per-location record of the fusion decisions of one merge.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SelectionMask {
    height: usize,
    width: usize,
    branches: usize,
    entries: Vec<Selection>,
}

impl SelectionMask {
    pub fn new(
        height: usize,
        width: usize,
        branches: usize,
        entries: Vec<Selection>,
    ) -> Result<Self> {
        if entries.len() != height * width {
            return Err(Error::Length {
                expected: height * width,
                got: entries.len(),
            });
        }
        if let Some(bad) = entries
            .iter()
            .find(|s| matches!(s, Selection::Winner(b) if *b >= branches))
        {
            return Err(Error::invalid(
                "selection",
                format!("{bad:?} with only {branches} branches"),
            ));
        }
        Ok(Self {
            height,
            width,
            branches,
            entries,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn branches(&self) -> usize {
        self.branches
    }

    pub fn entries(&self) -> &[Selection] {
        &self.entries
    }

    pub fn get(&self, j: usize, k: usize) -> Selection {
        self.entries[j * self.width + k]
    }

    pub fn averaged_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|s| **s == Selection::Averaged)
            .count()
    }

    pub fn averaged_fraction(&self) -> f64 {
        self.averaged_count() as f64 / self.entries.len() as f64
    }

    /// Fraction of locations won outright by branch `b`.
    pub fn win_fraction(&self, b: usize) -> f64 {
        let wins = self
            .entries
            .iter()
            .filter(|s| **s == Selection::Winner(b))
            .count();
        wins as f64 / self.entries.len() as f64
    }

    /// Stores the numeric tags as a single-channel map.
    pub fn to_feature_map(&self) -> Result<FeatureMap> {
        FeatureMap::new(
            1,
            self.height,
            self.width,
            self.entries.iter().map(|s| s.tag()).collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_map() {
        let m = FeatureMap::new(1, 1, 1, vec![0.0]).unwrap();
        assert_eq!(m.shape(), (1, 1, 1));
        assert_eq!(m.as_slice(), &[0.0]);
    }

    #[test]
    fn rejects_nan_with_index() {
        let err = FeatureMap::new(1, 1, 1, vec![f32::NAN]).unwrap_err();
        assert_eq!(err.to_string(), "non-finite at index 0");
        let err = FeatureMap::new(1, 1, 3, vec![0.0, 1.0, f32::INFINITY]).unwrap_err();
        assert_eq!(err.to_string(), "non-finite at index 2");
    }

    #[test]
    fn rejects_length_mismatch() {
        let err = FeatureMap::new(2, 2, 2, vec![0.0; 7]).unwrap_err();
        assert_eq!(err.to_string(), "length mismatch: expected 8 values, got 7");
        assert!(matches!(
            FeatureMap::new(0, 2, 2, vec![]),
            Err(Error::ZeroDimension { .. })
        ));
    }

    #[test]
    fn data_is_copied() {
        let mut src = vec![1.0, 2.0];
        let m = FeatureMap::from_slice(2, 1, 1, &src).unwrap();
        src[0] = 9.0;
        assert_eq!(m.as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn channel_vector_is_strided() {
        let m = FeatureMap::from_fn(3, 2, 2, |c, j, k| (100 * c + 10 * j + k) as f32).unwrap();
        assert_eq!(m.channel_vector(3), vec![11.0, 111.0, 211.0]);
        assert_eq!(m.get(2, 1, 0), 210.0);
    }

    #[test]
    fn scale_overflow_is_rejected() {
        let m = FeatureMap::new(1, 1, 1, vec![f32::MAX]).unwrap();
        assert!(matches!(m.scale(10.0), Err(Error::NonFinite { index: 0 })));
    }

    #[test]
    fn selection_mask_rejects_out_of_range_winner() {
        assert!(SelectionMask::new(1, 1, 2, vec![Selection::Winner(2)]).is_err());
        let m = SelectionMask::new(
            1,
            3,
            2,
            vec![
                Selection::Averaged,
                Selection::Winner(1),
                Selection::Winner(0),
            ],
        )
        .unwrap();
        assert!((m.averaged_fraction() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(Selection::Winner(5).gray(), 255);
        assert_eq!(Selection::Winner(1).gray(), 128);
    }
}
