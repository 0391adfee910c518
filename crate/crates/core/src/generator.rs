//! Isotopy generators: Hamiltonian families, harmonic rotations, explicit
//! velocity fields, and composites built by the group operations.
//!
//! Sign convention, derived once and used everywhere: with
//! ω = Σ_{j=1}^n dθ_j ∧ dθ_{j+n} and a vector field X,
//!
//!   i(X)ω = Σ_j (X^j dθ_{j+n} - X^{j+n} dθ_j),
//!
//! so matching i(X)ω = dF = Σ_i ∂_i F dθ_i componentwise gives
//!
//!   X^j = ∂_{j+n} F,   X^{j+n} = -∂_j F      (0-based j < n).
//!
//! On T² this is X = (∂F/∂θ_1, -∂F/∂θ_0).

use crate::field::{ScalarField, VectorField};
use crate::isotopy::Isotopy;
use crate::maps::TorusMap;
use std::f64::consts::PI;
use std::sync::Arc;

pub type ScalarTFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;
pub type VecTFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;

/// Closed-form time-t flow: (t, x, out) writes the lifted image of x.
pub type FlowFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
/// Jacobian of the closed-form flow at time t (row-major d×d).
pub type FlowJacFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;

/// Hamiltonian given by closures for F and ∇F.
#[derive(Clone)]
pub struct AnalyticScalar {
    pub f: ScalarTFn,
    pub grad: VecTFn,
    pub autonomous: bool,
    /// Exact flow of the induced vector field, when known in closed form.
    /// Only consulted for autonomous generators (where flow(-t) inverts).
    pub closed_flow: Option<FlowFn>,
    pub closed_flow_jac: Option<FlowJacFn>,
}

impl std::fmt::Debug for AnalyticScalar {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "AnalyticScalar(autonomous={})", self.autonomous)
    }
}

/// Explicit vector field given by a closure.
#[derive(Clone)]
pub struct AnalyticVector {
    pub v: VecTFn,
    pub autonomous: bool,
    pub closed_flow: Option<FlowFn>,
    pub closed_flow_jac: Option<FlowJacFn>,
}

impl std::fmt::Debug for AnalyticVector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "AnalyticVector(autonomous={})", self.autonomous)
    }
}

/// Time family of a Hamiltonian: sampled on the node grid or analytic.
#[derive(Debug, Clone)]
pub enum HamiltonianData {
    /// One field per time node (T+1 entries); linear interpolation between
    /// nodes when evaluated off-node.
    Sampled(Arc<Vec<ScalarField>>),
    Analytic(AnalyticScalar),
}

#[derive(Debug, Clone)]
pub enum ExplicitData {
    Sampled(Arc<Vec<VectorField>>),
    Analytic(AnalyticVector),
}

/// Algebra tag for composite isotopies.
#[derive(Debug, Clone)]
pub enum Composite {
    /// {φ_t^{-1}} of the child.
    Inverse(Isotopy),
    /// Pointwise composition {φ_t ∘ ψ_t}: outer first field, inner second.
    Compose(Isotopy, Isotopy),
    /// {φ ∘ h_t ∘ φ^{-1}} for a fixed symplectic map φ.
    Conjugate { map: TorusMap, map_inv: TorusMap, inner: Isotopy },
}

#[derive(Debug, Clone)]
pub enum Generator {
    Hamiltonian(HamiltonianData),
    HarmonicRotation(Vec<f64>),
    Explicit(ExplicitData),
    Composite(Composite),
}

impl Generator {
    pub fn kind_label(&self) -> &'static str {
        match self {
            Generator::Hamiltonian(_) => "hamiltonian",
            Generator::HarmonicRotation(_) => "harmonic-rotation",
            Generator::Explicit(_) => "explicit",
            Generator::Composite(Composite::Inverse(_)) => "inverse",
            Generator::Composite(Composite::Compose(..)) => "compose",
            Generator::Composite(Composite::Conjugate { .. }) => "conjugate",
        }
    }
}

/// One Fourier mode of a Hamiltonian: amp · cos(2π k·θ + phase).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Mode {
    pub wave: Vec<i32>,
    pub amp: f64,
    #[serde(default)]
    pub phase: f64,
}

/// Scalar time weight applied to a whole mode sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeWeight {
    #[default]
    Constant,
    /// g(t) = t.
    Linear,
}

impl TimeWeight {
    fn eval(&self, t: f64) -> f64 {
        match self {
            TimeWeight::Constant => 1.0,
            TimeWeight::Linear => t,
        }
    }
}

/// Band-limited Hamiltonian F(θ,t) = g(t) Σ_m amp_m cos(2π k_m·θ + phase_m).
pub fn mode_sum_hamiltonian(dim: usize, modes: Vec<Mode>, time: TimeWeight) -> AnalyticScalar {
    let modes_f = modes.clone();
    let modes_g = modes;
    let f: ScalarTFn = Arc::new(move |t, x: &[f64]| {
        let w = time.eval(t);
        let mut acc = 0.0;
        for m in &modes_f {
            let ang: f64 = 2.0 * PI
                * m.wave
                    .iter()
                    .zip(x)
                    .map(|(&k, &xi)| k as f64 * xi)
                    .sum::<f64>()
                + m.phase;
            acc += m.amp * ang.cos();
        }
        w * acc
    });
    let grad: VecTFn = Arc::new(move |t, x: &[f64], out: &mut [f64]| {
        let w = time.eval(t);
        out.fill(0.0);
        for m in &modes_g {
            let ang: f64 = 2.0 * PI
                * m.wave
                    .iter()
                    .zip(x)
                    .map(|(&k, &xi)| k as f64 * xi)
                    .sum::<f64>()
                + m.phase;
            let s = -m.amp * ang.sin() * 2.0 * PI * w;
            for (o, &k) in out.iter_mut().zip(&m.wave) {
                *o += s * k as f64;
            }
        }
    });
    let _ = dim;
    AnalyticScalar {
        f,
        grad,
        autonomous: time == TimeWeight::Constant,
        closed_flow: None,
        closed_flow_jac: None,
    }
}

/// Horizontal shear on T²: F = (amp/2π) sin(2πθ_1), so the induced field is
/// X = (amp cos(2πθ_1), 0) and the time-t flow is
/// (θ_0 + t·amp·cos(2πθ_1), θ_1) — closed form.
pub fn shear_hamiltonian(amp: f64) -> AnalyticScalar {
    let f: ScalarTFn = Arc::new(move |_t, x: &[f64]| amp / (2.0 * PI) * (2.0 * PI * x[1]).sin());
    let grad: VecTFn = Arc::new(move |_t, x: &[f64], out: &mut [f64]| {
        out[0] = 0.0;
        out[1] = amp * (2.0 * PI * x[1]).cos();
    });
    let flow: FlowFn = Arc::new(move |t, x: &[f64], out: &mut [f64]| {
        out[0] = x[0] + t * amp * (2.0 * PI * x[1]).cos();
        out[1] = x[1];
    });
    let flow_jac: FlowJacFn = Arc::new(move |t, x: &[f64], out: &mut [f64]| {
        out[0] = 1.0;
        out[1] = -t * amp * 2.0 * PI * (2.0 * PI * x[1]).sin();
        out[2] = 0.0;
        out[3] = 1.0;
    });
    AnalyticScalar {
        f,
        grad,
        autonomous: true,
        closed_flow: Some(flow),
        closed_flow_jac: Some(flow_jac),
    }
}

/// Vertical shear on T²: F = -(amp/2π) sin(2πθ_0), X = (0, amp cos(2πθ_0)).
pub fn vertical_shear_hamiltonian(amp: f64) -> AnalyticScalar {
    let f: ScalarTFn = Arc::new(move |_t, x: &[f64]| -amp / (2.0 * PI) * (2.0 * PI * x[0]).sin());
    let grad: VecTFn = Arc::new(move |_t, x: &[f64], out: &mut [f64]| {
        out[0] = -amp * (2.0 * PI * x[0]).cos();
        out[1] = 0.0;
    });
    let flow: FlowFn = Arc::new(move |t, x: &[f64], out: &mut [f64]| {
        out[0] = x[0];
        out[1] = x[1] + t * amp * (2.0 * PI * x[0]).cos();
    });
    let flow_jac: FlowJacFn = Arc::new(move |t, x: &[f64], out: &mut [f64]| {
        out[0] = 1.0;
        out[1] = 0.0;
        out[2] = -t * amp * 2.0 * PI * (2.0 * PI * x[0]).sin();
        out[3] = 1.0;
    });
    AnalyticScalar {
        f,
        grad,
        autonomous: true,
        closed_flow: Some(flow),
        closed_flow_jac: Some(flow_jac),
    }
}

/// Two-mode Hamiltonian F = (amp/2π) sin(2πθ_0) sin(2πθ_1): the flow is
/// genuinely nonlinear in both coordinates, so a fixed-step integrator
/// leaves a measurable O(Δt⁴) symplecticity defect. Used for convergence
/// checks.
pub fn product_hamiltonian(amp: f64) -> AnalyticScalar {
    let f: ScalarTFn = Arc::new(move |_t, x: &[f64]| {
        amp / (2.0 * PI) * (2.0 * PI * x[0]).sin() * (2.0 * PI * x[1]).sin()
    });
    let grad: VecTFn = Arc::new(move |_t, x: &[f64], out: &mut [f64]| {
        out[0] = amp * (2.0 * PI * x[0]).cos() * (2.0 * PI * x[1]).sin();
        out[1] = amp * (2.0 * PI * x[0]).sin() * (2.0 * PI * x[1]).cos();
    });
    AnalyticScalar { f, grad, autonomous: true, closed_flow: None, closed_flow_jac: None }
}
