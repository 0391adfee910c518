//! Symplectic isotopies from generators: flow integration, group
//! operations (inverse, pointwise composition, conjugation), generating
//! one-forms, and symplecticity checks.
//!
//! Flows use a fixed-step classical 4th-order integrator on the time grid;
//! symplecticity is monitored (see [`symplectic_residual_at`]) rather than
//! enforced. Inverse flows integrate backward in time instead of inverting
//! maps by root finding. Composite isotopies never integrate their own
//! assembled velocity fields: their maps are chains of the children's maps,
//! and the assembled fields only feed forms and length functionals.
//!
//! [`symplectic_residual_at`]: Isotopy::symplectic_residual_at

use crate::error::{Error, Result};
use crate::field::{ScalarField, VectorField};
use crate::forms::OneForm;
use crate::generator::{
    AnalyticScalar, AnalyticVector, Composite, ExplicitData, Generator, HamiltonianData,
};
use crate::grid::{wrap_slice, GridSpec, TorusPoint};
use crate::maps::{solve_small, FlowDirection, FlowMap, PointMap, TorusMap, MAX_DIM};
use std::sync::{Arc, OnceLock};

/// Default number of integrator steps on [0,1].
pub const DEFAULT_STEPS: usize = 100;

struct Inner {
    grid: GridSpec,
    steps: usize,
    generator: Generator,
    node_maps: OnceLock<Arc<Vec<FlowMap>>>,
}

/// A symplectic isotopy {φ_t}, t ∈ [0,1], φ_0 = id.
#[derive(Clone)]
pub struct Isotopy {
    inner: Arc<Inner>,
}

impl std::fmt::Debug for Isotopy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "Isotopy({}, N={}, T={})",
            self.generator().kind_label(),
            self.grid().points_per_axis(),
            self.steps()
        )
    }
}

impl Isotopy {
    pub fn new(grid: GridSpec, steps: usize, generator: Generator) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidGrid("steps must be positive".into()));
        }
        if let Generator::HarmonicRotation(v) = &generator {
            if v.len() != grid.dim() {
                return Err(Error::GridMismatch(format!(
                    "rotation vector has {} entries on T^{}",
                    v.len(),
                    grid.dim()
                )));
            }
        }
        Ok(Self {
            inner: Arc::new(Inner { grid, steps, generator, node_maps: OnceLock::new() }),
        })
    }

    /// The identity isotopy (zero velocity).
    pub fn identity(grid: GridSpec, steps: usize) -> Self {
        Self::new(grid, steps, Generator::HarmonicRotation(vec![0.0; grid.dim()]))
            .expect("identity generator is valid")
    }

    /// Harmonic 1-parameter rotation group t ↦ x + t·v.
    pub fn rotation(grid: GridSpec, steps: usize, v: Vec<f64>) -> Result<Self> {
        Self::new(grid, steps, Generator::HarmonicRotation(v))
    }

    /// Hamiltonian isotopy from a sampled time family (one field per node).
    pub fn hamiltonian_sampled(grid: GridSpec, fields: Vec<ScalarField>) -> Result<Self> {
        if fields.len() < 2 {
            return Err(Error::InvalidGrid("need at least two time samples".into()));
        }
        for f in &fields {
            if *f.grid() != grid {
                return Err(Error::GridMismatch("Hamiltonian samples on a different grid".into()));
            }
        }
        let steps = fields.len() - 1;
        Self::new(
            grid,
            steps,
            Generator::Hamiltonian(HamiltonianData::Sampled(Arc::new(fields))),
        )
    }

    /// Hamiltonian isotopy from closures for F and ∇F.
    pub fn hamiltonian_analytic(grid: GridSpec, steps: usize, data: AnalyticScalar) -> Result<Self> {
        Self::new(grid, steps, Generator::Hamiltonian(HamiltonianData::Analytic(data)))
    }

    /// Explicit velocity field from a closure.
    pub fn explicit_analytic(grid: GridSpec, steps: usize, data: AnalyticVector) -> Result<Self> {
        Self::new(grid, steps, Generator::Explicit(ExplicitData::Analytic(data)))
    }

    /// Explicit velocity field sampled per node.
    pub fn explicit_sampled(grid: GridSpec, fields: Vec<VectorField>) -> Result<Self> {
        if fields.len() < 2 {
            return Err(Error::InvalidGrid("need at least two time samples".into()));
        }
        let steps = fields.len() - 1;
        Self::new(grid, steps, Generator::Explicit(ExplicitData::Sampled(Arc::new(fields))))
    }

    pub fn grid(&self) -> &GridSpec {
        &self.inner.grid
    }

    pub fn steps(&self) -> usize {
        self.inner.steps
    }

    pub fn generator(&self) -> &Generator {
        &self.inner.generator
    }

    pub fn time_nodes(&self) -> Vec<f64> {
        let t = self.inner.steps;
        (0..=t).map(|k| k as f64 / t as f64).collect()
    }

    pub fn is_autonomous(&self) -> bool {
        match &self.inner.generator {
            Generator::HarmonicRotation(_) => true,
            Generator::Hamiltonian(HamiltonianData::Analytic(a)) => a.autonomous,
            Generator::Explicit(ExplicitData::Analytic(a)) => a.autonomous,
            _ => false,
        }
    }

    /// The Hamiltonian F_t when this isotopy carries one (directly, or as a
    /// conjugate F_t ∘ φ^{-1} of a Hamiltonian child).
    pub fn hamiltonian_field_at(&self, t: f64) -> Option<ScalarField> {
        match &self.inner.generator {
            Generator::Hamiltonian(HamiltonianData::Sampled(fields)) => {
                Some(lerp_fields(fields, t, self.inner.steps))
            }
            Generator::Hamiltonian(HamiltonianData::Analytic(a)) => {
                let f = a.f.clone();
                Some(ScalarField::from_fn(self.inner.grid, |x| f(t, x)))
            }
            Generator::Composite(Composite::Conjugate { map_inv, inner, .. }) => {
                match &inner.inner.generator {
                    Generator::Hamiltonian(HamiltonianData::Analytic(a)) => {
                        let f = a.f.clone();
                        let m = map_inv.clone();
                        let d = self.inner.grid.dim();
                        Some(ScalarField::from_fn(self.inner.grid, move |x| {
                            let mut z = vec![0.0; d];
                            m.apply(x, &mut z);
                            f(t, &z)
                        }))
                    }
                    Generator::Hamiltonian(HamiltonianData::Sampled(fields)) => {
                        let field = lerp_fields(fields, t, inner.inner.steps);
                        let m = map_inv.clone();
                        let d = self.inner.grid.dim();
                        Some(ScalarField::from_fn(self.inner.grid, move |x| {
                            let mut z = vec![0.0; d];
                            m.apply(x, &mut z);
                            field.eval(&z)
                        }))
                    }
                    _ => None,
                }
            }
            _ => None,
        }
    }

    // ------------------------------------------------------------------
    // velocity evaluation
    // ------------------------------------------------------------------

    /// Velocity field φ̇_t at a single point. Coordinates may be unwrapped.
    pub fn velocity_point(&self, t: f64, x: &[f64], out: &mut [f64]) {
        match &self.inner.generator {
            Generator::HarmonicRotation(v) => out.copy_from_slice(v),
            Generator::Hamiltonian(HamiltonianData::Analytic(a)) => {
                let d = self.inner.grid.dim();
                let mut g = [0.0; MAX_DIM];
                (a.grad)(t, x, &mut g[..d]);
                grad_to_velocity(&g[..d], out);
            }
            Generator::Hamiltonian(HamiltonianData::Sampled(fields)) => {
                let field = lerp_fields(fields, t, self.inner.steps);
                let vel = hamiltonian_velocity_field(&field);
                vel.eval(x, out);
            }
            Generator::Explicit(ExplicitData::Analytic(a)) => (a.v)(t, x, out),
            Generator::Explicit(ExplicitData::Sampled(fields)) => {
                let k = (t * self.inner.steps as f64).clamp(0.0, self.inner.steps as f64);
                let k0 = (k.floor() as usize).min(self.inner.steps - 1);
                let frac = k - k0 as f64;
                let d = self.inner.grid.dim();
                let mut a = [0.0; MAX_DIM];
                let mut b = [0.0; MAX_DIM];
                fields[k0].eval(x, &mut a[..d]);
                fields[k0 + 1].eval(x, &mut b[..d]);
                for i in 0..d {
                    out[i] = a[i] * (1.0 - frac) + b[i] * frac;
                }
            }
            Generator::Composite(c) => composite_velocity_point(self, c, t, x, out),
        }
    }

    /// Velocity sampled over the whole grid at an arbitrary time.
    pub fn velocity_field_at(&self, t: f64) -> VectorField {
        match &self.inner.generator {
            Generator::HarmonicRotation(v) => {
                let grid = self.inner.grid;
                VectorField::new(
                    v.iter().map(|&c| ScalarField::constant(grid, c)).collect(),
                )
                .expect("constant components share the grid")
            }
            Generator::Hamiltonian(HamiltonianData::Sampled(fields)) => {
                hamiltonian_velocity_field(&lerp_fields(fields, t, self.inner.steps))
            }
            Generator::Hamiltonian(HamiltonianData::Analytic(a)) => {
                let grad = a.grad.clone();
                let d = self.inner.grid.dim();
                VectorField::from_fn(self.inner.grid, |x, out| {
                    let mut g = [0.0; MAX_DIM];
                    grad(t, x, &mut g[..d]);
                    grad_to_velocity(&g[..d], out);
                })
            }
            Generator::Explicit(ExplicitData::Analytic(a)) => {
                let v = a.v.clone();
                VectorField::from_fn(self.inner.grid, |x, out| v(t, x, out))
            }
            Generator::Explicit(ExplicitData::Sampled(fields)) => {
                let k = (t * self.inner.steps as f64).clamp(0.0, self.inner.steps as f64);
                let k0 = (k.floor() as usize).min(self.inner.steps - 1);
                let frac = k - k0 as f64;
                let comps = (0..self.inner.grid.dim())
                    .map(|a| {
                        fields[k0]
                            .component(a)
                            .zip_with(fields[k0 + 1].component(a), |p, q| {
                                p * (1.0 - frac) + q * frac
                            })
                            .expect("same grid")
                    })
                    .collect();
                VectorField::new(comps).expect("components share the grid")
            }
            Generator::Composite(c) => composite_velocity_field(self, c, t),
        }
    }

    /// Generating one-form i(φ̇_t)ω of the velocity at time t.
    pub fn generating_one_form_at(&self, t: f64) -> Result<OneForm> {
        Ok(velocity_to_form(&self.velocity_field_at(t)))
    }

    pub fn generating_one_form_at_node(&self, node: usize) -> Result<OneForm> {
        let t = node as f64 / self.inner.steps as f64;
        self.generating_one_form_at(t)
    }

    // ------------------------------------------------------------------
    // flows and maps
    // ------------------------------------------------------------------

    /// The time-t map as an evaluatable object. Rotations and closed-form
    /// generators return exact maps; everything else integrates on demand.
    pub fn map_at(&self, t: f64) -> TorusMap {
        match &self.inner.generator {
            Generator::HarmonicRotation(v) => {
                TorusMap::translation(v.iter().map(|&c| c * t).collect())
            }
            Generator::Hamiltonian(HamiltonianData::Analytic(a)) if a.closed_flow.is_some() => {
                closed_flow_map(self.inner.grid.dim(), a.closed_flow.clone().unwrap(), a.closed_flow_jac.clone(), t)
            }
            Generator::Explicit(ExplicitData::Analytic(a)) if a.closed_flow.is_some() => {
                closed_flow_map(self.inner.grid.dim(), a.closed_flow.clone().unwrap(), a.closed_flow_jac.clone(), t)
            }
            Generator::Composite(Composite::Inverse(inner)) => inner.inverse_map_at(t),
            Generator::Composite(Composite::Compose(outer, inner)) => {
                inner.map_at(t).then(&outer.map_at(t))
            }
            Generator::Composite(Composite::Conjugate { map, map_inv, inner }) => {
                map_inv.clone().then(&inner.map_at(t)).then(map)
            }
            _ => TorusMap::from_impl(Arc::new(FlowEval {
                iso: self.clone(),
                t_from: 0.0,
                t_to: t,
            })),
        }
    }

    /// The inverse of the time-t map, by backward integration (or exactly,
    /// for rotations and closed-form flows).
    pub fn inverse_map_at(&self, t: f64) -> TorusMap {
        match &self.inner.generator {
            Generator::HarmonicRotation(v) => {
                TorusMap::translation(v.iter().map(|&c| -c * t).collect())
            }
            Generator::Hamiltonian(HamiltonianData::Analytic(a))
                if a.closed_flow.is_some() && a.autonomous =>
            {
                closed_flow_map(self.inner.grid.dim(), a.closed_flow.clone().unwrap(), a.closed_flow_jac.clone(), -t)
            }
            Generator::Explicit(ExplicitData::Analytic(a))
                if a.closed_flow.is_some() && a.autonomous =>
            {
                closed_flow_map(self.inner.grid.dim(), a.closed_flow.clone().unwrap(), a.closed_flow_jac.clone(), -t)
            }
            Generator::Composite(Composite::Inverse(inner)) => inner.map_at(t),
            Generator::Composite(Composite::Compose(outer, inner)) => {
                outer.inverse_map_at(t).then(&inner.inverse_map_at(t))
            }
            Generator::Composite(Composite::Conjugate { map, map_inv, inner }) => {
                map_inv.clone().then(&inner.inverse_map_at(t)).then(map)
            }
            _ => TorusMap::from_impl(Arc::new(FlowEval {
                iso: self.clone(),
                t_from: t,
                t_to: 0.0,
            })),
        }
    }

    pub fn time_one_map(&self) -> TorusMap {
        self.map_at(1.0)
    }

    /// Flow a single point from time 0 to time t.
    pub fn flow_point(&self, t: f64, p: &TorusPoint) -> TorusPoint {
        let mut out = vec![0.0; self.inner.grid.dim()];
        self.map_at(t).apply(p.coords(), &mut out);
        TorusPoint::wrap_unchecked(&out)
    }

    /// Tabulated flow maps at every time node, built incrementally over the
    /// grid and cached (write-once). Only available for directly generated
    /// isotopies; composites chain their children's maps instead.
    pub fn node_flow_maps(&self) -> Result<Arc<Vec<FlowMap>>> {
        if matches!(self.inner.generator, Generator::Composite(_)) {
            return Err(Error::Unsupported(
                "composite isotopies chain child maps; tabulate the children instead".into(),
            ));
        }
        Ok(self
            .inner
            .node_maps
            .get_or_init(|| Arc::new(self.tabulate_node_maps()))
            .clone())
    }

    fn tabulate_node_maps(&self) -> Vec<FlowMap> {
        let grid = self.inner.grid;
        let d = grid.dim();
        let steps = self.inner.steps;
        let dt = 1.0 / steps as f64;
        let mut states = grid.node_coords_flat();
        let mut maps = Vec::with_capacity(steps + 1);
        maps.push(FlowMap::identity(grid));
        for k in 0..steps {
            let t0 = k as f64 * dt;
            rk4_advance_points(self, d, &mut states, t0, t0 + dt, 1);
            maps.push(FlowMap::from_lifted_images(grid, &states, FlowDirection::Forward));
        }
        maps
    }

    /// Symplecticity defect of the time-t map: sup over grid nodes of the
    /// deviation of the pulled-back form from ω (|det J - 1| on T²).
    pub fn symplectic_residual_at(&self, t: f64) -> f64 {
        crate::maps::symplectic_residual(&self.map_at(t), &self.inner.grid)
    }

    // ------------------------------------------------------------------
    // group operations
    // ------------------------------------------------------------------

    /// The inverse isotopy {φ_t^{-1}}. Rotations negate their vector and
    /// autonomous generators negate their field (φ_t^{-1} = φ_{-t});
    /// otherwise the inverse wraps the original with velocities
    /// -(φ_t^{-1})_* φ̇_t assembled on demand and flows integrated backward.
    pub fn invert(&self) -> Isotopy {
        let grid = self.inner.grid;
        let steps = self.inner.steps;
        match &self.inner.generator {
            Generator::HarmonicRotation(v) => {
                Isotopy::rotation(grid, steps, v.iter().map(|c| -c).collect())
                    .expect("negated rotation is valid")
            }
            Generator::Hamiltonian(HamiltonianData::Analytic(a)) if a.autonomous => {
                // F is conserved along its own flow, so the inverse of an
                // autonomous Hamiltonian isotopy is generated by -F.
                let f = a.f.clone();
                let grad = a.grad.clone();
                let d = grid.dim();
                let neg = AnalyticScalar {
                    f: Arc::new(move |t, x: &[f64]| -f(t, x)),
                    grad: Arc::new(move |t, x: &[f64], out: &mut [f64]| {
                        grad(t, x, out);
                        for o in out.iter_mut().take(d) {
                            *o = -*o;
                        }
                    }),
                    autonomous: true,
                    closed_flow: a.closed_flow.clone().map(negate_time_flow),
                    closed_flow_jac: a.closed_flow_jac.clone().map(negate_time_flow),
                };
                Isotopy::hamiltonian_analytic(grid, steps, neg).expect("valid")
            }
            Generator::Explicit(ExplicitData::Analytic(a)) if a.autonomous => {
                let v = a.v.clone();
                let d = grid.dim();
                let neg = AnalyticVector {
                    v: Arc::new(move |t, x: &[f64], out: &mut [f64]| {
                        v(t, x, out);
                        for o in out.iter_mut().take(d) {
                            *o = -*o;
                        }
                    }),
                    autonomous: true,
                    closed_flow: a.closed_flow.clone().map(negate_time_flow),
                    closed_flow_jac: a.closed_flow_jac.clone().map(negate_time_flow),
                };
                Isotopy::explicit_analytic(grid, steps, neg).expect("valid")
            }
            Generator::Composite(Composite::Inverse(inner)) => inner.clone(),
            _ => Isotopy::new(grid, steps, Generator::Composite(Composite::Inverse(self.clone())))
                .expect("valid"),
        }
    }

    /// Pointwise composition {φ_t ∘ ψ_t} (self is the outer factor φ).
    pub fn compose_pointwise(&self, inner: &Isotopy) -> Result<Isotopy> {
        if self.inner.grid != inner.inner.grid || self.inner.steps != inner.inner.steps {
            return Err(Error::GridMismatch(
                "pointwise composition needs matching grids and time grids".into(),
            ));
        }
        // Translations commute and add.
        if let (Generator::HarmonicRotation(u), Generator::HarmonicRotation(v)) =
            (&self.inner.generator, &inner.inner.generator)
        {
            let sum = u.iter().zip(v).map(|(a, b)| a + b).collect();
            return Isotopy::rotation(self.inner.grid, self.inner.steps, sum);
        }
        Isotopy::new(
            self.inner.grid,
            self.inner.steps,
            Generator::Composite(Composite::Compose(self.clone(), inner.clone())),
        )
    }

    /// Conjugation {φ ∘ h_t ∘ φ^{-1}} by a fixed map with available inverse.
    pub fn conjugate_by(&self, map: &TorusMap) -> Result<Isotopy> {
        let map_inv = map.inverse().ok_or_else(|| {
            Error::Unsupported("conjugating map has no available inverse".into())
        })?;
        Isotopy::new(
            self.inner.grid,
            self.inner.steps,
            Generator::Composite(Composite::Conjugate {
                map: map.clone(),
                map_inv,
                inner: self.clone(),
            }),
        )
    }
}

/// Convert ∇F to the induced vector field (see module docs for the sign
/// derivation): X^j = ∂_{j+n}F, X^{j+n} = -∂_j F.
#[inline]
pub fn grad_to_velocity(grad: &[f64], out: &mut [f64]) {
    let n = grad.len() / 2;
    for j in 0..n {
        out[j] = grad[j + n];
        out[j + n] = -grad[j];
    }
}

/// i(X)ω = Σ_j (X^j dθ_{j+n} - X^{j+n} dθ_j): β_j = -X^{j+n}, β_{j+n} = X^j.
pub fn velocity_to_form(vel: &VectorField) -> OneForm {
    let d = vel.dim();
    let n = d / 2;
    let mut comps: Vec<Option<ScalarField>> = vec![None; d];
    for j in 0..n {
        comps[j] = Some(vel.component(j + n).scale(-1.0));
        comps[j + n] = Some(vel.component(j).clone());
    }
    OneForm::new(comps.into_iter().map(|c| c.unwrap()).collect()).expect("components share grid")
}

/// Velocity field with i(X)ω = β: X^j = β_{j+n}, X^{j+n} = -β_j.
pub fn form_to_velocity(form: &OneForm) -> VectorField {
    let d = form.dim();
    let n = d / 2;
    let mut comps: Vec<Option<ScalarField>> = vec![None; d];
    for j in 0..n {
        comps[j] = Some(form.component(j + n).clone());
        comps[j + n] = Some(form.component(j).scale(-1.0));
    }
    VectorField::new(comps.into_iter().map(|c| c.unwrap()).collect()).expect("components share grid")
}

/// Spectral Hamiltonian vector field of a sampled F.
pub fn hamiltonian_velocity_field(f: &ScalarField) -> VectorField {
    let d = f.grid().dim();
    let n = d / 2;
    let mut comps: Vec<Option<ScalarField>> = vec![None; d];
    for j in 0..n {
        comps[j] = Some(f.derivative(j + n));
        comps[j + n] = Some(f.derivative(j).scale(-1.0));
    }
    VectorField::new(comps.into_iter().map(|c| c.unwrap()).collect()).expect("components share grid")
}

fn lerp_fields(fields: &[ScalarField], t: f64, steps: usize) -> ScalarField {
    let k = (t * steps as f64).clamp(0.0, steps as f64);
    let k0 = (k.floor() as usize).min(steps - 1);
    let frac = k - k0 as f64;
    if frac.abs() < 1e-12 {
        return fields[k0].clone();
    }
    fields[k0]
        .zip_with(&fields[k0 + 1], |a, b| a * (1.0 - frac) + b * frac)
        .expect("family shares one grid")
}

fn negate_time_flow(
    f: Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>,
) -> Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync> {
    Arc::new(move |t, x: &[f64], out: &mut [f64]| f(-t, x, out))
}

fn closed_flow_map(
    dim: usize,
    flow: Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>,
    jac: Option<Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>>,
    t: f64,
) -> TorusMap {
    let fwd = {
        let flow = flow.clone();
        Arc::new(move |x: &[f64], out: &mut [f64]| flow(t, x, out))
            as Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>
    };
    let fwd_jac = jac.clone().map(|j| {
        Arc::new(move |x: &[f64], out: &mut [f64]| j(t, x, out))
            as Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>
    });
    let bwd = {
        let flow = flow.clone();
        Arc::new(move |x: &[f64], out: &mut [f64]| flow(-t, x, out))
            as Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>
    };
    let bwd_jac = jac.map(|j| {
        Arc::new(move |x: &[f64], out: &mut [f64]| j(-t, x, out))
            as Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>
    });
    let (m, _inv) = crate::maps::closed_form_pair(dim, fwd, fwd_jac, bwd, bwd_jac);
    m
}

// ---------------------------------------------------------------------
// composite velocity assembly (chain rule)
// ---------------------------------------------------------------------

fn composite_velocity_point(iso: &Isotopy, c: &Composite, t: f64, x: &[f64], out: &mut [f64]) {
    let d = iso.grid().dim();
    match c {
        Composite::Inverse(inner) => {
            // V_t(y) = -[Dφ_t(y)]^{-1} φ̇_t(φ_t(y))
            let m = inner.map_at(t);
            let mut w = [0.0; MAX_DIM];
            m.apply(x, &mut w[..d]);
            let mut vel = [0.0; MAX_DIM];
            inner.velocity_point(t, &w[..d], &mut vel[..d]);
            let mut jac = [0.0; MAX_DIM * MAX_DIM];
            m.jacobian(x, &mut jac[..d * d]);
            let mut solved = [0.0; MAX_DIM];
            solve_small(d, &jac[..d * d], &vel[..d], &mut solved[..d]);
            for i in 0..d {
                out[i] = -solved[i];
            }
        }
        Composite::Compose(outer, inner) => {
            // σ̇ = φ̇ + (φ_t)_* ψ̇ evaluated at y: z = φ_t^{-1}(y).
            let m = outer.map_at(t);
            let minv = outer.inverse_map_at(t);
            let mut z = [0.0; MAX_DIM];
            minv.apply(x, &mut z[..d]);
            let mut vin = [0.0; MAX_DIM];
            inner.velocity_point(t, &z[..d], &mut vin[..d]);
            let mut jac = [0.0; MAX_DIM * MAX_DIM];
            m.jacobian(&z[..d], &mut jac[..d * d]);
            outer.velocity_point(t, x, out);
            for i in 0..d {
                let mut acc = 0.0;
                for j in 0..d {
                    acc += jac[i * d + j] * vin[j];
                }
                out[i] += acc;
            }
        }
        Composite::Conjugate { map, map_inv, inner } => {
            // Ψ̇_t = φ_* ḣ_t: V(y) = Dφ(z)·ḣ_t(z), z = φ^{-1}(y).
            let mut z = [0.0; MAX_DIM];
            map_inv.apply(x, &mut z[..d]);
            let mut vin = [0.0; MAX_DIM];
            inner.velocity_point(t, &z[..d], &mut vin[..d]);
            let mut jac = [0.0; MAX_DIM * MAX_DIM];
            map.jacobian(&z[..d], &mut jac[..d * d]);
            for i in 0..d {
                let mut acc = 0.0;
                for j in 0..d {
                    acc += jac[i * d + j] * vin[j];
                }
                out[i] = acc;
            }
        }
    }
}

fn composite_velocity_field(iso: &Isotopy, c: &Composite, t: f64) -> VectorField {
    let grid = *iso.grid();
    VectorField::from_fn(grid, |x, out| composite_velocity_point(iso, c, t, x, out))
}

// ---------------------------------------------------------------------
// integration
// ---------------------------------------------------------------------

/// Classical RK4 over a fixed number of steps, advancing `count` points of
/// dimension `d` stored point-major in `states` (covering-space lift, never
/// wrapped). `t_to` < `t_from` integrates backward.
fn rk4_advance_points(iso: &Isotopy, d: usize, states: &mut [f64], t_from: f64, t_to: f64, nsteps: usize) {
    let count = states.len() / d;
    let h = (t_to - t_from) / nsteps as f64;
    let mut k1 = [0.0; MAX_DIM];
    let mut k2 = [0.0; MAX_DIM];
    let mut k3 = [0.0; MAX_DIM];
    let mut k4 = [0.0; MAX_DIM];
    let mut stage = [0.0; MAX_DIM];
    for step in 0..nsteps {
        let t = t_from + step as f64 * h;
        for p in 0..count {
            let x = &mut states[p * d..(p + 1) * d];
            iso.velocity_point(t, x, &mut k1[..d]);
            for i in 0..d {
                stage[i] = x[i] + 0.5 * h * k1[i];
            }
            iso.velocity_point(t + 0.5 * h, &stage[..d], &mut k2[..d]);
            for i in 0..d {
                stage[i] = x[i] + 0.5 * h * k2[i];
            }
            iso.velocity_point(t + 0.5 * h, &stage[..d], &mut k3[..d]);
            for i in 0..d {
                stage[i] = x[i] + h * k3[i];
            }
            iso.velocity_point(t + h, &stage[..d], &mut k4[..d]);
            for i in 0..d {
                x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
    }
}

/// Number of fixed-size steps to cover |t_to - t_from| at the isotopy's
/// base resolution; off-node targets shorten the step slightly.
fn step_count(steps: usize, t_from: f64, t_to: f64) -> usize {
    let span = (t_to - t_from).abs();
    ((span * steps as f64 - 1e-9).ceil() as usize).max(1)
}

/// Point-flow map: integrates the isotopy's velocity between two times on
/// every application.
struct FlowEval {
    iso: Isotopy,
    t_from: f64,
    t_to: f64,
}

impl PointMap for FlowEval {
    fn dim(&self) -> usize {
        self.iso.grid().dim()
    }

    fn apply_lift(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(x);
        if (self.t_to - self.t_from).abs() < 1e-15 {
            return;
        }
        let n = step_count(self.iso.steps(), self.t_from, self.t_to);
        rk4_advance_points(&self.iso, x.len(), out, self.t_from, self.t_to, n);
    }

    fn inverse_map(&self) -> Option<TorusMap> {
        Some(TorusMap::from_impl(Arc::new(FlowEval {
            iso: self.iso.clone(),
            t_from: self.t_to,
            t_to: self.t_from,
        })))
    }
}

/// Max deviation between the assembled velocity field and a centered
/// finite difference of the flow maps, over the given sample points:
/// |(φ_{t+δ}(x) - φ_{t-δ}(x))/2δ - φ̇_t(φ_t(x))|. Validates chain-rule
/// velocity assembly of composites.
pub fn velocity_consistency_residual(iso: &Isotopy, t: f64, samples: &[Vec<f64>]) -> f64 {
    let d = iso.grid().dim();
    let delta = 1.0 / iso.steps() as f64;
    let before = iso.map_at(t - delta);
    let here = iso.map_at(t);
    let after = iso.map_at(t + delta);
    let mut worst = 0.0f64;
    let mut a = vec![0.0; d];
    let mut b = vec![0.0; d];
    let mut mid = vec![0.0; d];
    let mut vel = vec![0.0; d];
    for x in samples {
        before.apply_lift(x, &mut a);
        after.apply_lift(x, &mut b);
        here.apply(x, &mut mid);
        iso.velocity_point(t, &mid, &mut vel);
        for i in 0..d {
            let fd = (b[i] - a[i]) / (2.0 * delta);
            worst = worst.max((fd - vel[i]).abs());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{mode_sum_hamiltonian, product_hamiltonian, shear_hamiltonian, Mode, TimeWeight};
    use crate::grid::torus_dist;
    use std::f64::consts::PI;

    fn t2(n: usize) -> GridSpec {
        GridSpec::new(1, n).unwrap()
    }

    fn shear_iso(grid: GridSpec, steps: usize, amp: f64) -> Isotopy {
        Isotopy::hamiltonian_analytic(grid, steps, shear_hamiltonian(amp)).unwrap()
    }

    #[test]
    fn identity_isotopy_has_zero_velocity_and_fixed_points() {
        let g = t2(16);
        let id = Isotopy::identity(g, 10);
        let v = id.velocity_field_at(0.5);
        assert!(v.sup_norm() < 1e-15);
        let p = TorusPoint::wrap(&[0.3, 0.8]).unwrap();
        assert!(id.flow_point(1.0, &p).dist(&p) < 1e-14);
    }

    #[test]
    fn constant_hamiltonian_is_identity() {
        let g = t2(16);
        let f = ScalarField::constant(g, 3.0);
        let iso = Isotopy::hamiltonian_sampled(g, vec![f.clone(), f.clone(), f]).unwrap();
        assert!(iso.velocity_field_at(0.0).sup_norm() < 1e-10);
    }

    #[test]
    fn rotation_flow_is_exact_translation() {
        let g = t2(16);
        let iso = Isotopy::rotation(g, 10, vec![0.5, 0.0]).unwrap();
        let p = TorusPoint::wrap(&[0.1, 0.3]).unwrap();
        let q = iso.flow_point(1.0, &p);
        assert!(torus_dist(q.coords(), &[0.6, 0.3]) < 1e-12);
        // Partial time too.
        let q = iso.flow_point(0.5, &p);
        assert!(torus_dist(q.coords(), &[0.35, 0.3]) < 1e-12);
    }

    #[test]
    fn rotation_generating_form_matches_contraction() {
        // v = (a,b) on T² gives a dθ_1 - b dθ_0.
        let g = t2(16);
        let iso = Isotopy::rotation(g, 10, vec![0.3, 0.4]).unwrap();
        let form = iso.generating_one_form_at(0.2).unwrap();
        assert!((form.component(0).mean() + 0.4).abs() < 1e-13);
        assert!((form.component(1).mean() - 0.3).abs() < 1e-13);
        assert!(form.component(0).osc() < 1e-13);
    }

    #[test]
    fn shear_velocity_and_flow_match_closed_form() {
        let g = t2(64);
        let iso = shear_iso(g, 100, 1.0);
        let mut v = [0.0; 2];
        iso.velocity_point(0.0, &[0.0, 0.0], &mut v);
        assert!((v[0] - 1.0).abs() < 1e-13);
        assert!(v[1].abs() < 1e-13);

        for p in [[0.0, 0.25], [0.2, 0.0], [0.9, 0.61]] {
            let q = iso.flow_point(1.0, &TorusPoint::wrap(&p).unwrap());
            let expect = [p[0] + (2.0 * PI * p[1]).cos(), p[1]];
            assert!(
                torus_dist(q.coords(), &TorusPoint::wrap(&expect).unwrap().coords()) < 1e-8,
                "flow mismatch at {p:?}"
            );
        }
    }

    #[test]
    fn integrated_flow_matches_closed_form_without_shortcut() {
        // Strip the closed-form flow so map_at really integrates.
        let g = t2(64);
        let mut data = shear_hamiltonian(0.7);
        data.closed_flow = None;
        data.closed_flow_jac = None;
        let iso = Isotopy::hamiltonian_analytic(g, 100, data).unwrap();
        let p = [0.1, 0.37];
        let q = iso.flow_point(1.0, &TorusPoint::wrap(&p).unwrap());
        let expect =
            TorusPoint::wrap(&[p[0] + 0.7 * (2.0 * PI * p[1]).cos(), p[1]]).unwrap();
        assert!(q.dist(&expect) < 1e-8);
    }

    #[test]
    fn hamiltonian_generating_form_round_trips_df() {
        let g = t2(32);
        let h = mode_sum_hamiltonian(
            2,
            vec![
                Mode { wave: vec![1, 0], amp: 0.2, phase: 0.3 },
                Mode { wave: vec![0, 2], amp: 0.1, phase: 0.0 },
            ],
            TimeWeight::Constant,
        );
        let f_sample = {
            let f = h.f.clone();
            ScalarField::from_fn(g, move |x| f(0.0, x))
        };
        let iso = Isotopy::hamiltonian_analytic(g, 50, h).unwrap();
        let form = iso.generating_one_form_at(0.0).unwrap();
        let df = OneForm::exterior_derivative(&f_sample);
        for a in 0..2 {
            let max: f64 = form
                .component(a)
                .values()
                .iter()
                .zip(df.component(a).values())
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            assert!(max < 1e-8, "component {a} deviates by {max}");
        }
    }

    #[test]
    fn invert_rotation_negates_vector() {
        let g = t2(16);
        let iso = Isotopy::rotation(g, 10, vec![0.25, -0.1]).unwrap();
        let inv = iso.invert();
        match inv.generator() {
            Generator::HarmonicRotation(v) => {
                assert!((v[0] + 0.25).abs() < 1e-15);
                assert!((v[1] - 0.1).abs() < 1e-15);
            }
            other => panic!("expected rotation, got {other:?}"),
        }
        // Double inversion returns to the original behavior.
        let back = inv.invert();
        let p = TorusPoint::wrap(&[0.6, 0.6]).unwrap();
        assert!(back.flow_point(1.0, &p).dist(&iso.flow_point(1.0, &p)) < 1e-12);
    }

    #[test]
    fn invert_round_trip_for_shear() {
        let g = t2(64);
        let iso = shear_iso(g, 100, 0.8);
        let inv = iso.invert();
        for p in [[0.1, 0.2], [0.5, 0.77], [0.93, 0.04]] {
            let tp = TorusPoint::wrap(&p).unwrap();
            let there = iso.flow_point(1.0, &tp);
            let back = inv.flow_point(1.0, &there);
            assert!(back.dist(&tp) < 1e-6);
        }
    }

    #[test]
    fn invert_generic_uses_backward_integration() {
        let g = t2(64);
        // Time-dependent Hamiltonian: no autonomous shortcut applies.
        let h = mode_sum_hamiltonian(
            2,
            vec![Mode { wave: vec![0, 1], amp: 0.3, phase: 0.0 }],
            TimeWeight::Linear,
        );
        let iso = Isotopy::hamiltonian_analytic(g, 50, h).unwrap();
        let inv = iso.invert();
        assert!(matches!(inv.generator(), Generator::Composite(Composite::Inverse(_))));
        let p = TorusPoint::wrap(&[0.21, 0.43]).unwrap();
        let there = iso.flow_point(1.0, &p);
        let back = inv.flow_point(1.0, &there);
        assert!(back.dist(&p) < 1e-6, "round trip error {}", back.dist(&p));

        // Velocity of the inverse at t=0.4 against the pushforward formula,
        // spot-checked through the consistency residual.
        let samples: Vec<Vec<f64>> = vec![vec![0.3, 0.1], vec![0.8, 0.55]];
        let r = velocity_consistency_residual(&inv, 0.4, &samples);
        assert!(r < 1e-3, "consistency residual {r}");
    }

    #[test]
    fn compose_rotations_adds_vectors() {
        let g = t2(16);
        let a = Isotopy::rotation(g, 10, vec![0.2, 0.3]).unwrap();
        let b = Isotopy::rotation(g, 10, vec![0.1, -0.05]).unwrap();
        let c = a.compose_pointwise(&b).unwrap();
        match c.generator() {
            Generator::HarmonicRotation(v) => {
                assert!((v[0] - 0.3).abs() < 1e-15);
                assert!((v[1] - 0.25).abs() < 1e-15);
            }
            other => panic!("expected rotation, got {other:?}"),
        }
    }

    #[test]
    fn compose_with_identity_is_neutral() {
        let g = t2(64);
        let shear = shear_iso(g, 50, 0.4);
        let id = Isotopy::identity(g, 50);
        let c = id.compose_pointwise(&shear).unwrap();
        for p in [[0.15, 0.3], [0.6, 0.91]] {
            let tp = TorusPoint::wrap(&p).unwrap();
            assert!(c.flow_point(1.0, &tp).dist(&shear.flow_point(1.0, &tp)) < 1e-10);
        }
        // Velocity assembly through the chain rule agrees too.
        let v1 = c.velocity_field_at(0.5);
        let v2 = shear.velocity_field_at(0.5);
        for a in 0..2 {
            let max: f64 = v1
                .component(a)
                .values()
                .iter()
                .zip(v2.component(a).values())
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            assert!(max < 1e-9);
        }
    }

    #[test]
    fn compose_inverse_gives_identity() {
        let g = t2(64);
        let shear = shear_iso(g, 100, 0.6);
        let c = shear.invert().compose_pointwise(&shear).unwrap();
        for t in [0.25, 0.5, 1.0] {
            for p in [[0.2, 0.45], [0.7, 0.1]] {
                let tp = TorusPoint::wrap(&p).unwrap();
                assert!(c.flow_point(t, &tp).dist(&tp) < 1e-6);
            }
        }
    }

    #[test]
    fn compose_rejects_mismatched_grids() {
        let a = Isotopy::identity(t2(16), 10);
        let b = Isotopy::identity(t2(32), 10);
        assert!(a.compose_pointwise(&b).is_err());
    }

    #[test]
    fn conjugate_by_identity_is_itself() {
        let g = t2(64);
        let rot = Isotopy::rotation(g, 50, vec![0.3, 0.4]).unwrap();
        let conj = rot.conjugate_by(&TorusMap::identity(2)).unwrap();
        for p in [[0.0, 0.0], [0.31, 0.77]] {
            let tp = TorusPoint::wrap(&p).unwrap();
            assert!(conj.flow_point(1.0, &tp).dist(&rot.flow_point(1.0, &tp)) < 1e-12);
        }
        let v = conj.velocity_field_at(0.3);
        assert!((v.component(0).mean() - 0.3).abs() < 1e-12);
        assert!((v.component(1).mean() - 0.4).abs() < 1e-12);
    }

    #[test]
    fn conjugate_of_identity_is_identity() {
        let g = t2(64);
        let id = Isotopy::identity(g, 50);
        let shear_map = shear_iso(g, 50, 0.3).time_one_map();
        let conj = id.conjugate_by(&shear_map).unwrap();
        let p = TorusPoint::wrap(&[0.4, 0.9]).unwrap();
        assert!(conj.flow_point(1.0, &p).dist(&p) < 1e-10);
        assert!(conj.velocity_field_at(0.5).sup_norm() < 1e-10);
    }

    #[test]
    fn conjugation_preserves_harmonic_part() {
        // h = rotation, φ = shear time-one map: the generating form of the
        // conjugate keeps the same componentwise means.
        let g = t2(64);
        let rot = Isotopy::rotation(g, 50, vec![0.3, 0.4]).unwrap();
        let phi = shear_iso(g, 50, 0.1).time_one_map();
        let conj = rot.conjugate_by(&phi).unwrap();
        let form = conj.generating_one_form_at(0.5).unwrap();
        assert!((form.component(0).mean() + 0.4).abs() < 1e-4);
        assert!((form.component(1).mean() - 0.3).abs() < 1e-4);
    }

    #[test]
    fn symplectic_residual_examples() {
        let g = t2(64);
        assert!(Isotopy::identity(g, 10).symplectic_residual_at(1.0) < 1e-12);
        let rot = Isotopy::rotation(g, 10, vec![0.37, 0.18]).unwrap();
        assert!(rot.symplectic_residual_at(1.0) < 1e-10);
        // Shear at default resolution: the flow is integrated exactly and
        // the map is triangular, so the residual sits at rounding level;
        // 1e-4 is the acceptance ceiling, ~1e-12 the observed baseline.
        let shear = shear_iso(g, 100, 1.0);
        let r = shear.symplectic_residual_at(1.0);
        assert!(r <= 1e-4, "shear residual {r}");
        assert!(r <= 1e-10, "regression: shear residual grew to {r}");
    }

    #[test]
    fn fourth_order_convergence_on_nonlinear_flow() {
        let g = t2(32);
        let coarse = Isotopy::hamiltonian_analytic(g, 10, product_hamiltonian(1.0)).unwrap();
        let fine = Isotopy::hamiltonian_analytic(g, 20, product_hamiltonian(1.0)).unwrap();
        let r_coarse = coarse.symplectic_residual_at(1.0);
        let r_fine = fine.symplectic_residual_at(1.0);
        assert!(r_coarse > 1e-12, "need measurable truncation error");
        assert!(
            r_coarse / r_fine >= 8.0,
            "expected ≥8x reduction, got {r_coarse:.3e}/{r_fine:.3e} = {:.2}",
            r_coarse / r_fine
        );
    }

    #[test]
    fn composite_velocity_consistent_with_map_derivative() {
        let g = t2(64);
        let rot = Isotopy::rotation(g, 50, vec![0.2, 0.1]).unwrap();
        let shear = shear_iso(g, 50, 0.5);
        let comp = rot.compose_pointwise(&shear).unwrap();
        let samples: Vec<Vec<f64>> = vec![
            vec![0.1, 0.2],
            vec![0.33, 0.85],
            vec![0.64, 0.5],
            vec![0.9, 0.05],
        ];
        let r = velocity_consistency_residual(&comp, 0.5, &samples);
        assert!(r < 1e-4, "composite consistency residual {r}");
    }

    #[test]
    fn node_maps_are_cached_and_nodal_exact() {
        let g = t2(32);
        let iso = shear_iso(g, 20, 0.5);
        let maps = iso.node_flow_maps().unwrap();
        assert_eq!(maps.len(), 21);
        let first = Arc::as_ptr(&maps);
        let again = iso.node_flow_maps().unwrap();
        assert_eq!(first, Arc::as_ptr(&again), "cache must be write-once");

        // Node images match a direct flow.
        let mut img = [0.0; 2];
        let mut x = vec![0.0; 2];
        for flat in [0usize, 17, 500] {
            g.node_coords(flat, &mut x);
            maps[20].node_image(flat, &mut img);
            let q = iso.flow_point(1.0, &TorusPoint::wrap(&x).unwrap());
            assert!(torus_dist(&img, q.coords()) < 1e-9);
        }
    }

    #[test]
    fn time_zero_map_is_identity() {
        let g = t2(32);
        for iso in [
            Isotopy::rotation(g, 10, vec![0.4, 0.2]).unwrap(),
            shear_iso(g, 10, 0.9),
        ] {
            let p = TorusPoint::wrap(&[0.12, 0.95]).unwrap();
            assert!(iso.flow_point(0.0, &p).dist(&p) < 1e-13);
        }
    }
}
