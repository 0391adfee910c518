//! Periodic scalar and vector fields sampled on a torus grid.
//!
//! Fields are immutable after construction; the spectral coefficient cache
//! fills lazily with compute-once semantics, so evaluation is safe to share
//! across threads.

use crate::error::{Error, Result};
use crate::grid::{wrap_coord, GridSpec};
use crate::spectral;
use num_complex::Complex64;
use std::sync::{Arc, OnceLock};

/// Interpolation scheme for off-node evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InterpKind {
    /// Trigonometric (spectral) interpolation; exact for band-limited fields.
    #[default]
    Trigonometric,
    /// Periodic multilinear interpolation; fast fallback.
    Multilinear,
}

/// Real scalar field on a torus grid.
#[derive(Debug, Clone)]
pub struct ScalarField {
    grid: GridSpec,
    values: Vec<f64>,
    coeffs: OnceLock<Arc<Vec<Complex64>>>,
}

impl ScalarField {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        Ok(Self { grid, values, coeffs: OnceLock::new() })
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn(&[f64]) -> f64) -> Self {
        let d = grid.dim();
        let mut x = vec![0.0; d];
        let values = (0..grid.len())
            .map(|flat| {
                grid.node_coords(flat, &mut x);
                f(&x)
            })
            .collect();
        Self { grid, values, coeffs: OnceLock::new() }
    }

    pub fn constant(grid: GridSpec, c: f64) -> Self {
        Self { grid, values: vec![c; grid.len()], coeffs: OnceLock::new() }
    }

    pub fn zero(grid: GridSpec) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Spectral coefficients, computed on first use.
    pub fn coeffs(&self) -> &Arc<Vec<Complex64>> {
        self.coeffs
            .get_or_init(|| Arc::new(spectral::forward(&self.grid, &self.values)))
    }

    /// Arithmetic average over grid nodes = discrete integral over the
    /// unit torus = zero-frequency coefficient / N^d.
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// max - min over grid nodes. A lower-biased estimate of the true
    /// oscillation when extrema fall between nodes.
    pub fn osc(&self) -> f64 {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in &self.values {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        hi - lo
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, &v| m.max(v.abs()))
    }

    /// Evaluate at an arbitrary point with the requested interpolation.
    pub fn eval_with(&self, point: &[f64], kind: InterpKind) -> f64 {
        match kind {
            InterpKind::Trigonometric => spectral::eval_trig(&self.grid, self.coeffs(), point),
            InterpKind::Multilinear => self.eval_linear(point),
        }
    }

    /// Trigonometric evaluation (the default scheme).
    pub fn eval(&self, point: &[f64]) -> f64 {
        self.eval_with(point, InterpKind::Trigonometric)
    }

    /// Periodic multilinear interpolation.
    pub fn eval_linear(&self, point: &[f64]) -> f64 {
        let n = self.grid.points_per_axis();
        let d = self.grid.dim();
        debug_assert_eq!(point.len(), d);
        let mut base = vec![0usize; d];
        let mut frac = vec![0.0; d];
        for a in 0..d {
            let scaled = wrap_coord(point[a]) * n as f64;
            let cell = scaled.floor();
            base[a] = cell as usize % n;
            frac[a] = scaled - cell;
        }
        let mut acc = 0.0;
        let mut idx = vec![0usize; d];
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            for a in 0..d {
                if corner >> a & 1 == 1 {
                    idx[a] = (base[a] + 1) % n;
                    w *= frac[a];
                } else {
                    idx[a] = base[a];
                    w *= 1.0 - frac[a];
                }
            }
            acc += w * self.values[self.grid.flat_index(&idx)];
        }
        acc
    }

    /// Spectral partial derivative along one axis.
    pub fn derivative(&self, axis: usize) -> ScalarField {
        let dc = spectral::derivative_coeffs(&self.grid, self.coeffs(), axis);
        let values = spectral::inverse_real(&self.grid, &dc);
        ScalarField { grid: self.grid, values, coeffs: OnceLock::new() }
    }

    pub fn add(&self, other: &ScalarField) -> Result<ScalarField> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &ScalarField) -> Result<ScalarField> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, factor: f64) -> ScalarField {
        self.map(|v| v * factor)
    }

    pub fn add_scalar(&self, c: f64) -> ScalarField {
        self.map(|v| v + c)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        let values = self.values.iter().map(|&v| f(v)).collect();
        ScalarField { grid: self.grid, values, coeffs: OnceLock::new() }
    }

    pub fn zip_with(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Result<ScalarField> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch("scalar fields on different grids".into()));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(ScalarField { grid: self.grid, values, coeffs: OnceLock::new() })
    }
}

/// A 2n-component vector field on a torus grid (one ScalarField per axis).
#[derive(Debug, Clone)]
pub struct VectorField {
    components: Vec<ScalarField>,
}

impl VectorField {
    pub fn new(components: Vec<ScalarField>) -> Result<Self> {
        let grid = *components
            .first()
            .ok_or_else(|| Error::GridMismatch("vector field needs components".into()))?
            .grid();
        if components.len() != grid.dim() {
            return Err(Error::GridMismatch(format!(
                "expected {} components, got {}",
                grid.dim(),
                components.len()
            )));
        }
        for c in &components {
            if *c.grid() != grid {
                return Err(Error::GridMismatch("vector components on different grids".into()));
            }
        }
        Ok(Self { components })
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn(&[f64], &mut [f64])) -> Self {
        let d = grid.dim();
        let mut x = vec![0.0; d];
        let mut v = vec![0.0; d];
        let mut comps: Vec<Vec<f64>> = vec![Vec::with_capacity(grid.len()); d];
        for flat in 0..grid.len() {
            grid.node_coords(flat, &mut x);
            f(&x, &mut v);
            for a in 0..d {
                comps[a].push(v[a]);
            }
        }
        Self {
            components: comps
                .into_iter()
                .map(|values| ScalarField::new(grid, values).expect("sized by construction"))
                .collect(),
        }
    }

    pub fn zero(grid: GridSpec) -> Self {
        Self {
            components: (0..grid.dim()).map(|_| ScalarField::zero(grid)).collect(),
        }
    }

    pub fn grid(&self) -> &GridSpec {
        self.components[0].grid()
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn component(&self, axis: usize) -> &ScalarField {
        &self.components[axis]
    }

    pub fn components(&self) -> &[ScalarField] {
        &self.components
    }

    pub fn into_components(self) -> Vec<ScalarField> {
        self.components
    }

    pub fn eval(&self, point: &[f64], out: &mut [f64]) {
        for (a, c) in self.components.iter().enumerate() {
            out[a] = c.eval(point);
        }
    }

    /// Largest pointwise Euclidean norm over grid nodes.
    pub fn sup_norm(&self) -> f64 {
        let mut best = 0.0f64;
        for flat in 0..self.grid().len() {
            let s: f64 = self
                .components
                .iter()
                .map(|c| c.values()[flat] * c.values()[flat])
                .sum();
            best = best.max(s.sqrt());
        }
        best
    }
}
