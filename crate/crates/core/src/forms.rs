//! One-forms on the flat torus: closedness checks, Hodge decomposition,
//! harmonic norms, and the flux (Calabi) invariant of isotopies.
//!
//! On T^{2n} with the flat metric the harmonic 1-forms are exactly the
//! constant-coefficient forms Σ c_i dθ_i, so harmonic projection is the
//! componentwise grid mean and the exact part is recovered by inverting d
//! mode by mode in frequency space.

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::grid::GridSpec;
use crate::isotopy::Isotopy;
use crate::spectral::{self, signed_freq};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Default tolerance below which a one-form counts as closed. Generating
/// forms of numerically integrated flows are only approximately closed.
pub const DEFAULT_CLOSEDNESS_TOL: f64 = 1e-6;

/// Norm on the (finite dimensional) space of harmonic 1-forms. Reports
/// record which choice was in effect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    /// Σ|c_i|; the default, matching the worked rotation examples.
    #[default]
    L1,
    L2,
    LInf,
}

impl NormKind {
    pub fn apply(&self, coeffs: &[f64]) -> f64 {
        match self {
            NormKind::L1 => coeffs.iter().map(|c| c.abs()).sum(),
            NormKind::L2 => coeffs.iter().map(|c| c * c).sum::<f64>().sqrt(),
            NormKind::LInf => coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs())),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            NormKind::L1 => "l1",
            NormKind::L2 => "l2",
            NormKind::LInf => "linf",
        }
    }
}

/// Constant-coefficient (harmonic) 1-form Σ c_i dθ_i.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarmonicForm {
    coeffs: Vec<f64>,
}

impl HarmonicForm {
    pub fn new(coeffs: Vec<f64>) -> Self {
        Self { coeffs }
    }

    pub fn zero(dim: usize) -> Self {
        Self { coeffs: vec![0.0; dim] }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn dim(&self) -> usize {
        self.coeffs.len()
    }

    pub fn norm(&self, kind: NormKind) -> f64 {
        kind.apply(&self.coeffs)
    }

    pub fn add(&self, other: &HarmonicForm) -> HarmonicForm {
        HarmonicForm::new(
            self.coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(a, b)| a + b)
                .collect(),
        )
    }

    pub fn scale(&self, s: f64) -> HarmonicForm {
        HarmonicForm::new(self.coeffs.iter().map(|c| c * s).collect())
    }

    /// Exact representation as a one-form with constant components.
    pub fn to_one_form(&self, grid: GridSpec) -> OneForm {
        OneForm::new(
            self.coeffs
                .iter()
                .map(|&c| ScalarField::constant(grid, c))
                .collect(),
        )
        .expect("constant components share the grid")
    }
}

/// A 1-form Σ a_i dθ_i with grid-sampled coefficient fields.
#[derive(Debug, Clone)]
pub struct OneForm {
    components: Vec<ScalarField>,
}

impl OneForm {
    pub fn new(components: Vec<ScalarField>) -> Result<Self> {
        let grid = *components
            .first()
            .ok_or_else(|| Error::GridMismatch("one-form needs components".into()))?
            .grid();
        if components.len() != grid.dim() {
            return Err(Error::GridMismatch(format!(
                "one-form on T^{} needs {} components, got {}",
                grid.dim(),
                grid.dim(),
                components.len()
            )));
        }
        for c in &components {
            if *c.grid() != grid {
                return Err(Error::GridMismatch("one-form components on different grids".into()));
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

    /// The exterior derivative of a scalar potential, dF = Σ ∂_i F dθ_i.
    pub fn exterior_derivative(potential: &ScalarField) -> Self {
        let d = potential.grid().dim();
        Self {
            components: (0..d).map(|a| potential.derivative(a)).collect(),
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

    pub fn sup_norm(&self) -> f64 {
        self.components.iter().fold(0.0f64, |m, c| m.max(c.sup_norm()))
    }

    /// Componentwise grid means: the harmonic part on the flat torus.
    pub fn component_means(&self) -> HarmonicForm {
        HarmonicForm::new(self.components.iter().map(|c| c.mean()).collect())
    }
}

/// Max over grid nodes and index pairs i < j of |∂_i a_j - ∂_j a_i|,
/// via spectral differentiation. Zero (up to rounding) iff the form is
/// closed at grid resolution.
pub fn d_residual(alpha: &OneForm) -> f64 {
    let d = alpha.dim();
    let mut worst = 0.0f64;
    for i in 0..d {
        for j in (i + 1)..d {
            let di_aj = alpha.component(j).derivative(i);
            let dj_ai = alpha.component(i).derivative(j);
            for (x, y) in di_aj.values().iter().zip(dj_ai.values()) {
                worst = worst.max((x - y).abs());
            }
        }
    }
    worst
}

/// Hodge split of a closed one-form: α = H + du with H constant and u of
/// mean zero (the gauge fixing that keeps osc unaffected and results
/// reproducible).
#[derive(Debug, Clone)]
pub struct HodgeDecomposition {
    pub harmonic: HarmonicForm,
    pub potential: ScalarField,
    /// sup-norm of α - H - du over the grid.
    pub residual_norm: f64,
}

/// Hodge-decompose with the default closedness tolerance.
pub fn hodge(alpha: &OneForm) -> Result<HodgeDecomposition> {
    hodge_with_tolerance(alpha, DEFAULT_CLOSEDNESS_TOL)
}

/// Hodge-decompose a one-form that is closed within `tolerance`.
///
/// The potential solves du = α - H in frequency space: for wavevector
/// k ≠ 0 the coefficient is the least-squares inversion of the gradient
/// symbol, which is exact when the input is closed. The zero mode is set
/// to 0 (mean-zero gauge).
pub fn hodge_with_tolerance(alpha: &OneForm, tolerance: f64) -> Result<HodgeDecomposition> {
    let residual = d_residual(alpha);
    if residual > tolerance {
        return Err(Error::NotClosed { residual, tolerance });
    }
    Ok(hodge_unchecked(alpha))
}

/// The projection itself, without the closedness gate. Useful when the
/// caller has already validated the form or wants the least-squares split
/// of a slightly non-closed input.
pub fn hodge_unchecked(alpha: &OneForm) -> HodgeDecomposition {
    let grid = *alpha.grid();
    let d = grid.dim();
    let n = grid.points_per_axis();
    let harmonic = alpha.component_means();

    // u_hat(k) = Σ_i conj(2πi k_i) β_i_hat(k) / (4π² |k|²), Nyquist axes dropped.
    let comp_coeffs: Vec<_> = alpha.components().iter().map(|c| c.coeffs().clone()).collect();
    let mut u_hat = vec![Complex64::default(); grid.len()];
    let mut idx = vec![0usize; d];
    for flat in 0..grid.len() {
        grid.multi_index(flat, &mut idx);
        let mut num = Complex64::default();
        let mut den = 0.0;
        for (axis, &m) in idx.iter().enumerate() {
            if m == n / 2 || m == 0 {
                continue;
            }
            let k = 2.0 * PI * signed_freq(m, n) as f64;
            // conj(i k) = -i k
            num += Complex64::new(0.0, -k) * comp_coeffs[axis][flat];
            den += k * k;
        }
        if den > 0.0 {
            u_hat[flat] = num / den;
        }
    }
    // Remove the constant offsets H_i before they reach the numerator:
    // they only live in the k = 0 mode, which the loop above skips, so
    // no explicit subtraction is needed.
    let mut u_values = spectral::inverse_real(&grid, &u_hat);
    let u_mean = u_values.iter().sum::<f64>() / u_values.len() as f64;
    for v in &mut u_values {
        *v -= u_mean;
    }
    let potential = ScalarField::new(grid, u_values).expect("sized by construction");

    let du = OneForm::exterior_derivative(&potential);
    let mut residual_norm = 0.0f64;
    for axis in 0..d {
        let h = harmonic.coeffs()[axis];
        for (a, b) in alpha.component(axis).values().iter().zip(du.component(axis).values()) {
            residual_norm = residual_norm.max((a - h - b).abs());
        }
    }

    HodgeDecomposition { harmonic, potential, residual_norm }
}

/// Flux (Calabi invariant) of an isotopy: the harmonic representative of
/// the time integral of its generating one-forms, by the composite
/// trapezoid rule over the node grid.
pub fn flux(iso: &Isotopy) -> Result<HarmonicForm> {
    flux_with_tolerance(iso, DEFAULT_CLOSEDNESS_TOL)
}

pub fn flux_with_tolerance(iso: &Isotopy, tolerance: f64) -> Result<HarmonicForm> {
    let steps = iso.steps();
    let dt = 1.0 / steps as f64;
    let mut acc = HarmonicForm::zero(iso.grid().dim());
    for node in 0..=steps {
        let form = iso.generating_one_form_at_node(node)?;
        let residual = d_residual(&form);
        if residual > tolerance {
            return Err(Error::NotClosed { residual, tolerance });
        }
        let weight = if node == 0 || node == steps { 0.5 } else { 1.0 };
        acc = acc.add(&form.component_means().scale(weight * dt));
    }
    Ok(acc)
}
