//! Uniform periodic grids on the unit torus T^{2n}.
//!
//! Coordinates live in [0,1) per axis with opposite sides identified; the
//! grid places N points per axis at i/N. The torus dimension is even (2n)
//! because everything downstream pairs axis j with axis j+n through the
//! standard symplectic form.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Uniform grid over T^{2n}: N points per axis, spacing 1/N.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    half_dim: usize,
    points_per_axis: usize,
}

impl GridSpec {
    /// N must be even and at least 8 so spectral differentiation has a
    /// well-defined Nyquist convention (the N/2 mode is dropped).
    pub fn new(half_dim: usize, points_per_axis: usize) -> Result<Self> {
        if half_dim == 0 {
            return Err(Error::InvalidGrid("half_dim must be positive".into()));
        }
        if points_per_axis < 8 || points_per_axis % 2 != 0 {
            return Err(Error::InvalidGrid(format!(
                "points_per_axis must be even and >= 8, got {points_per_axis}"
            )));
        }
        Ok(Self { half_dim, points_per_axis })
    }

    pub fn half_dim(&self) -> usize {
        self.half_dim
    }

    /// Torus dimension 2n.
    pub fn dim(&self) -> usize {
        2 * self.half_dim
    }

    pub fn points_per_axis(&self) -> usize {
        self.points_per_axis
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.points_per_axis as f64
    }

    /// Total number of grid nodes, N^{2n}.
    pub fn len(&self) -> usize {
        self.points_per_axis.pow(self.dim() as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Row-major flat index of a multi-index.
    pub fn flat_index(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.dim());
        let n = self.points_per_axis;
        idx.iter().fold(0, |acc, &i| acc * n + i)
    }

    /// Multi-index of a row-major flat index.
    pub fn multi_index(&self, mut flat: usize, out: &mut [usize]) {
        let n = self.points_per_axis;
        for slot in out.iter_mut().rev() {
            *slot = flat % n;
            flat /= n;
        }
    }

    /// Coordinates of the node with the given flat index.
    pub fn node_coords(&self, flat: usize, out: &mut [f64]) {
        let n = self.points_per_axis;
        let h = self.spacing();
        let mut rem = flat;
        for slot in out.iter_mut().rev() {
            *slot = (rem % n) as f64 * h;
            rem /= n;
        }
    }

    /// All node coordinates, flattened point-major (len() * dim() values).
    pub fn node_coords_flat(&self) -> Vec<f64> {
        let d = self.dim();
        let mut out = vec![0.0; self.len() * d];
        for flat in 0..self.len() {
            self.node_coords(flat, &mut out[flat * d..(flat + 1) * d]);
        }
        out
    }
}

/// Reduce a single coordinate into [0,1).
#[inline]
pub fn wrap_coord(x: f64) -> f64 {
    let r = x - x.floor();
    // x.floor() can round r to exactly 1.0 for tiny negative x.
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// Reduce coordinates into [0,1) in place.
#[inline]
pub fn wrap_slice(coords: &mut [f64]) {
    for c in coords.iter_mut() {
        *c = wrap_coord(*c);
    }
}

/// Signed difference a - b reduced to [-1/2, 1/2).
#[inline]
pub fn wrap_diff(a: f64, b: f64) -> f64 {
    let mut d = a - b;
    d -= d.round();
    d
}

/// Per-axis wrap-around distance, each component at most 1/2.
#[inline]
pub fn axis_dist(a: f64, b: f64) -> f64 {
    wrap_diff(a, b).abs()
}

/// Euclidean distance on the torus (nearest-image convention).
pub fn torus_dist(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = wrap_diff(x, y);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// A point on the torus with coordinates reduced into [0,1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TorusPoint {
    coords: Vec<f64>,
}

impl TorusPoint {
    /// Wrap raw coordinates onto the torus. Rejects non-finite input.
    pub fn wrap(raw: &[f64]) -> Result<Self> {
        for (axis, &value) in raw.iter().enumerate() {
            if !value.is_finite() {
                return Err(Error::NonFinite { axis, value });
            }
        }
        let coords = raw.iter().map(|&x| wrap_coord(x)).collect();
        Ok(Self { coords })
    }

    /// Wrap coordinates already known to be finite.
    pub fn wrap_unchecked(raw: &[f64]) -> Self {
        Self { coords: raw.iter().map(|&x| wrap_coord(x)).collect() }
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn dist(&self, other: &TorusPoint) -> f64 {
        torus_dist(&self.coords, &other.coords)
    }
}
