//! Torus self-maps as evaluatable objects.
//!
//! Maps are represented in the covering space: `apply_lift` returns an
//! unwrapped image and must be continuous and deck-equivariant
//! (lift(x + e_i) = lift(x) + e_i). That makes finite-difference Jacobians
//! and composition well defined without seam special-cases; callers wrap
//! the image onto [0,1)^d when they need torus coordinates.

use crate::field::{InterpKind, ScalarField};
use crate::grid::{wrap_slice, GridSpec};
use std::sync::Arc;

/// Centered-difference spacing for Jacobians evaluated through map
/// evaluators. Chosen so truncation (h²/6·|∂³φ|) stays below 1e-4 even for
/// the narrow bump flows, while subtractive rounding stays near 1e-10.
pub const DEFAULT_FD_SPACING: f64 = 1.0 / 2048.0;

pub const MAX_DIM: usize = 8;

/// Object-safe torus map interface. Implementors provide the lifted image;
/// Jacobians default to centered differences through the evaluator.
pub trait PointMap: Send + Sync {
    fn dim(&self) -> usize;

    /// Image of `x` in the covering space (not wrapped).
    fn apply_lift(&self, x: &[f64], out: &mut [f64]);

    /// Fill `out` (row-major d×d) with the Jacobian and return true when an
    /// analytic expression is available.
    fn jacobian_analytic(&self, _x: &[f64], _out: &mut [f64]) -> bool {
        false
    }

    fn inverse_map(&self) -> Option<TorusMap> {
        None
    }

    /// Factors of a composition, first-applied first; used to flatten
    /// nested chains.
    fn chain_parts(&self) -> Option<&[TorusMap]> {
        None
    }
}

/// Shared handle to a torus map.
#[derive(Clone)]
pub struct TorusMap {
    inner: Arc<dyn PointMap>,
}

impl std::fmt::Debug for TorusMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "TorusMap(dim={})", self.dim())
    }
}

impl TorusMap {
    pub fn from_impl(inner: Arc<dyn PointMap>) -> Self {
        Self { inner }
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_impl(Arc::new(Translation { v: vec![0.0; dim] }))
    }

    pub fn translation(v: Vec<f64>) -> Self {
        Self::from_impl(Arc::new(Translation { v }))
    }

    /// Closed-form map from closures. The Jacobian and inverse closures are
    /// optional; without them finite differences / None are used.
    pub fn from_closures(
        dim: usize,
        f: Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>,
        jac: Option<Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>>,
    ) -> Self {
        Self::from_impl(Arc::new(ClosureMap { dim, f, jac, inv: std::sync::Mutex::new(None) }))
    }

    pub fn dim(&self) -> usize {
        self.inner.dim()
    }

    pub fn apply_lift(&self, x: &[f64], out: &mut [f64]) {
        self.inner.apply_lift(x, out);
    }

    /// Image wrapped onto the torus.
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        self.inner.apply_lift(x, out);
        wrap_slice(out);
    }

    pub fn apply_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.apply(x, &mut out);
        out
    }

    /// Row-major d×d Jacobian: analytic when the implementation has one,
    /// centered finite differences through the evaluator otherwise.
    pub fn jacobian(&self, x: &[f64], out: &mut [f64]) {
        if !self.inner.jacobian_analytic(x, out) {
            fd_jacobian(self.inner.as_ref(), x, DEFAULT_FD_SPACING, out);
        }
    }

    pub fn inverse(&self) -> Option<TorusMap> {
        self.inner.inverse_map()
    }

    /// Composition applying `self` first, then `after`.
    pub fn then(&self, after: &TorusMap) -> TorusMap {
        let mut maps = Vec::new();
        for m in [self, after] {
            match m.inner.chain_parts() {
                Some(parts) => maps.extend(parts.iter().cloned()),
                None => maps.push(m.clone()),
            }
        }
        TorusMap::from_impl(Arc::new(ChainMap { maps }))
    }

    /// Sup distance to another map over the grid nodes (wrap metric).
    pub fn sup_distance(&self, other: &TorusMap, grid: &GridSpec) -> f64 {
        let d = grid.dim();
        let mut x = vec![0.0; d];
        let mut a = vec![0.0; d];
        let mut b = vec![0.0; d];
        let mut worst = 0.0f64;
        for flat in 0..grid.len() {
            grid.node_coords(flat, &mut x);
            self.apply(&x, &mut a);
            other.apply(&x, &mut b);
            worst = worst.max(crate::grid::torus_dist(&a, &b));
        }
        worst
    }
}

struct Translation {
    v: Vec<f64>,
}

impl PointMap for Translation {
    fn dim(&self) -> usize {
        self.v.len()
    }

    fn apply_lift(&self, x: &[f64], out: &mut [f64]) {
        for (o, (a, b)) in out.iter_mut().zip(x.iter().zip(&self.v)) {
            *o = a + b;
        }
    }

    fn jacobian_analytic(&self, _x: &[f64], out: &mut [f64]) -> bool {
        identity_matrix(self.v.len(), out);
        true
    }

    fn inverse_map(&self) -> Option<TorusMap> {
        Some(TorusMap::translation(self.v.iter().map(|c| -c).collect()))
    }
}

struct ClosureMap {
    dim: usize,
    f: Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>,
    jac: Option<Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>>,
    inv: std::sync::Mutex<Option<TorusMap>>,
}

impl ClosureMap {
    fn set_inverse(&self, inv: TorusMap) {
        *self.inv.lock().unwrap() = Some(inv);
    }
}

impl PointMap for ClosureMap {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply_lift(&self, x: &[f64], out: &mut [f64]) {
        (self.f)(x, out);
    }

    fn jacobian_analytic(&self, x: &[f64], out: &mut [f64]) -> bool {
        match &self.jac {
            Some(j) => {
                j(x, out);
                true
            }
            None => false,
        }
    }

    fn inverse_map(&self) -> Option<TorusMap> {
        self.inv.lock().unwrap().clone()
    }
}

/// Build a closed-form map with an explicit inverse; both directions know
/// about each other.
pub fn closed_form_pair(
    dim: usize,
    f: Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>,
    f_jac: Option<Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>>,
    g: Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>,
    g_jac: Option<Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>>,
) -> (TorusMap, TorusMap) {
    let fwd_impl = Arc::new(ClosureMap { dim, f, jac: f_jac, inv: std::sync::Mutex::new(None) });
    let bwd_impl = Arc::new(ClosureMap { dim, f: g, jac: g_jac, inv: std::sync::Mutex::new(None) });
    let fwd = TorusMap::from_impl(fwd_impl.clone());
    let bwd = TorusMap::from_impl(bwd_impl.clone());
    fwd_impl.set_inverse(bwd.clone());
    bwd_impl.set_inverse(fwd.clone());
    (fwd, bwd)
}

struct ChainMap {
    maps: Vec<TorusMap>,
}

impl PointMap for ChainMap {
    fn dim(&self) -> usize {
        self.maps[0].dim()
    }

    fn apply_lift(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim();
        let mut cur = [0.0; MAX_DIM];
        cur[..d].copy_from_slice(x);
        let mut next = [0.0; MAX_DIM];
        for m in &self.maps {
            m.apply_lift(&cur[..d], &mut next[..d]);
            cur[..d].copy_from_slice(&next[..d]);
        }
        out.copy_from_slice(&cur[..d]);
    }

    fn jacobian_analytic(&self, x: &[f64], out: &mut [f64]) -> bool {
        // Chain rule through the intermediate points; factors fall back to
        // finite differences individually.
        let d = self.dim();
        let mut cur = [0.0; MAX_DIM];
        cur[..d].copy_from_slice(x);
        let mut next = [0.0; MAX_DIM];
        let mut total = [0.0; MAX_DIM * MAX_DIM];
        identity_matrix(d, &mut total[..d * d]);
        let mut factor = [0.0; MAX_DIM * MAX_DIM];
        let mut product = [0.0; MAX_DIM * MAX_DIM];
        for m in &self.maps {
            m.jacobian(&cur[..d], &mut factor[..d * d]);
            mat_mul(d, &factor[..d * d], &total[..d * d], &mut product[..d * d]);
            total[..d * d].copy_from_slice(&product[..d * d]);
            m.apply_lift(&cur[..d], &mut next[..d]);
            cur[..d].copy_from_slice(&next[..d]);
        }
        out.copy_from_slice(&total[..d * d]);
        true
    }

    fn inverse_map(&self) -> Option<TorusMap> {
        let mut inv_maps = Vec::with_capacity(self.maps.len());
        for m in self.maps.iter().rev() {
            inv_maps.push(m.inverse()?);
        }
        Some(TorusMap::from_impl(Arc::new(ChainMap { maps: inv_maps })))
    }

    fn chain_parts(&self) -> Option<&[TorusMap]> {
        Some(&self.maps)
    }
}

/// Direction tag for flow maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowDirection {
    Forward,
    Backward,
}

/// A flow map tabulated on grid nodes: stores the lifted displacement field
/// and evaluates off-node by interpolation of the displacement.
#[derive(Debug, Clone)]
pub struct FlowMap {
    grid: GridSpec,
    displacement: Vec<ScalarField>,
    pub direction: FlowDirection,
    pub interp: InterpKind,
}

impl FlowMap {
    /// `images_lift` holds the unwrapped image of every node, point-major.
    pub fn from_lifted_images(grid: GridSpec, images_lift: &[f64], direction: FlowDirection) -> Self {
        let d = grid.dim();
        assert_eq!(images_lift.len(), grid.len() * d);
        let mut x = vec![0.0; d];
        let mut comps: Vec<Vec<f64>> = vec![Vec::with_capacity(grid.len()); d];
        for flat in 0..grid.len() {
            grid.node_coords(flat, &mut x);
            for a in 0..d {
                comps[a].push(images_lift[flat * d + a] - x[a]);
            }
        }
        let displacement = comps
            .into_iter()
            .map(|values| ScalarField::new(grid, values).expect("sized by construction"))
            .collect();
        Self { grid, displacement, direction, interp: InterpKind::Trigonometric }
    }

    pub fn identity(grid: GridSpec) -> Self {
        let d = grid.dim();
        Self {
            grid,
            displacement: (0..d).map(|_| ScalarField::zero(grid)).collect(),
            direction: FlowDirection::Forward,
            interp: InterpKind::Trigonometric,
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn displacement(&self) -> &[ScalarField] {
        &self.displacement
    }

    /// Stored (wrapped) image of a grid node.
    pub fn node_image(&self, flat: usize, out: &mut [f64]) {
        let d = self.grid.dim();
        let mut x = vec![0.0; d];
        self.grid.node_coords(flat, &mut x);
        for a in 0..d {
            out[a] = x[a] + self.displacement[a].values()[flat];
        }
        wrap_slice(out);
    }

    pub fn into_map(self) -> TorusMap {
        TorusMap::from_impl(Arc::new(self))
    }
}

impl PointMap for FlowMap {
    fn dim(&self) -> usize {
        self.grid.dim()
    }

    fn apply_lift(&self, x: &[f64], out: &mut [f64]) {
        for (a, comp) in self.displacement.iter().enumerate() {
            out[a] = x[a] + comp.eval_with(x, self.interp);
        }
    }
}

pub fn identity_matrix(d: usize, out: &mut [f64]) {
    out[..d * d].fill(0.0);
    for i in 0..d {
        out[i * d + i] = 1.0;
    }
}

/// out = a · b for row-major d×d matrices.
pub fn mat_mul(d: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    for i in 0..d {
        for j in 0..d {
            let mut acc = 0.0;
            for k in 0..d {
                acc += a[i * d + k] * b[k * d + j];
            }
            out[i * d + j] = acc;
        }
    }
}

/// Solve J·y = v for small d (Gaussian elimination with partial pivoting).
pub fn solve_small(d: usize, jac: &[f64], v: &[f64], out: &mut [f64]) {
    let mut a = [0.0; MAX_DIM * (MAX_DIM + 1)];
    for i in 0..d {
        for j in 0..d {
            a[i * (d + 1) + j] = jac[i * d + j];
        }
        a[i * (d + 1) + d] = v[i];
    }
    for col in 0..d {
        let mut piv = col;
        for r in col + 1..d {
            if a[r * (d + 1) + col].abs() > a[piv * (d + 1) + col].abs() {
                piv = r;
            }
        }
        if piv != col {
            for j in 0..=d {
                a.swap(col * (d + 1) + j, piv * (d + 1) + j);
            }
        }
        let p = a[col * (d + 1) + col];
        for r in 0..d {
            if r == col || a[r * (d + 1) + col] == 0.0 {
                continue;
            }
            let factor = a[r * (d + 1) + col] / p;
            for j in col..=d {
                a[r * (d + 1) + j] -= factor * a[col * (d + 1) + j];
            }
        }
    }
    for i in 0..d {
        out[i] = a[i * (d + 1) + d] / a[i * (d + 1) + i];
    }
}

fn fd_jacobian(map: &dyn PointMap, x: &[f64], h: f64, out: &mut [f64]) {
    let d = map.dim();
    let mut xp = [0.0; MAX_DIM];
    let mut xm = [0.0; MAX_DIM];
    let mut fp = [0.0; MAX_DIM];
    let mut fm = [0.0; MAX_DIM];
    for j in 0..d {
        xp[..d].copy_from_slice(x);
        xm[..d].copy_from_slice(x);
        xp[j] += h;
        xm[j] -= h;
        map.apply_lift(&xp[..d], &mut fp[..d]);
        map.apply_lift(&xm[..d], &mut fm[..d]);
        for i in 0..d {
            out[i * d + j] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
}

/// Max over grid nodes of the deviation of the pulled-back symplectic form
/// from ω, measured on coordinate basis pairs via finite-difference (or
/// analytic) Jacobians: sup |(JᵀΩJ - Ω)_{ij}|. On T² this is |det J - 1|.
pub fn symplectic_residual(map: &TorusMap, grid: &GridSpec) -> f64 {
    let d = grid.dim();
    let n = d / 2;
    let mut x = vec![0.0; d];
    let mut jac = [0.0; MAX_DIM * MAX_DIM];
    let mut worst = 0.0f64;
    for flat in 0..grid.len() {
        grid.node_coords(flat, &mut x);
        map.jacobian(&x, &mut jac[..d * d]);
        // (JᵀΩJ)_{ij} = Σ_a [J_{a i} J_{a+n, j} - J_{a+n, i} J_{a j}]
        for i in 0..d {
            for j in (i + 1)..d {
                let mut v = 0.0;
                for a in 0..n {
                    v += jac[a * d + i] * jac[(a + n) * d + j] - jac[(a + n) * d + i] * jac[a * d + j];
                }
                let omega_ij = if j == i + n { 1.0 } else { 0.0 };
                worst = worst.max((v - omega_ij).abs());
            }
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn translation_and_inverse() {
        let m = TorusMap::translation(vec![0.5, 0.0]);
        let y = m.apply_vec(&[0.1, 0.3]);
        assert!((y[0] - 0.6).abs() < 1e-15);
        assert!((y[1] - 0.3).abs() < 1e-15);
        let inv = m.inverse().unwrap();
        let back = inv.apply_vec(&y);
        assert!((back[0] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn identity_residual_is_zero() {
        let grid = GridSpec::new(1, 16).unwrap();
        let id = TorusMap::identity(2);
        assert!(symplectic_residual(&id, &grid) < 1e-12);
    }

    #[test]
    fn translation_residual_is_tiny() {
        let grid = GridSpec::new(1, 16).unwrap();
        let m = TorusMap::translation(vec![0.37, 0.11]);
        assert!(symplectic_residual(&m, &grid) < 1e-10);
    }

    #[test]
    fn shear_residual_small_via_fd() {
        // (θ0 + ε cos 2πθ1, θ1) preserves area exactly.
        let grid = GridSpec::new(1, 16).unwrap();
        let m = TorusMap::from_closures(
            2,
            Arc::new(|x: &[f64], out: &mut [f64]| {
                out[0] = x[0] + 0.1 * (2.0 * PI * x[1]).cos();
                out[1] = x[1];
            }),
            None,
        );
        assert!(symplectic_residual(&m, &grid) < 1e-9);
    }

    #[test]
    fn chain_jacobian_matches_product() {
        let shear = TorusMap::from_closures(
            2,
            Arc::new(|x: &[f64], out: &mut [f64]| {
                out[0] = x[0] + 0.2 * (2.0 * PI * x[1]).cos();
                out[1] = x[1];
            }),
            Some(Arc::new(|x: &[f64], out: &mut [f64]| {
                out[0] = 1.0;
                out[1] = -0.2 * 2.0 * PI * (2.0 * PI * x[1]).sin();
                out[2] = 0.0;
                out[3] = 1.0;
            })),
        );
        let rot = TorusMap::translation(vec![0.25, 0.5]);
        let chain = rot.then(&shear);
        let x = [0.3, 0.7];
        let mut j = [0.0; 4];
        chain.jacobian(&x, &mut j);
        // D(shear ∘ rot)(x) = Dshear(rot x) since Drot = I.
        let y = rot.apply_vec(&x);
        let expect1 = -0.2 * 2.0 * PI * (2.0 * PI * y[1]).sin();
        assert!((j[0] - 1.0).abs() < 1e-12);
        assert!((j[1] - expect1).abs() < 1e-12);
        assert!((j[3] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn chain_inverse_round_trip() {
        let a = TorusMap::translation(vec![0.2, 0.0]);
        let b = TorusMap::translation(vec![0.0, 0.45]);
        let chain = a.then(&b);
        let inv = chain.inverse().unwrap();
        let x = [0.9, 0.9];
        let y = chain.apply_vec(&x);
        let back = inv.apply_vec(&y);
        assert!(crate::grid::torus_dist(&back, &x) < 1e-14);
    }

    #[test]
    fn flow_map_nodal_exactness() {
        let grid = GridSpec::new(1, 16).unwrap();
        let d = grid.dim();
        // A smooth synthetic flow image: x + small band-limited displacement.
        let mut images = vec![0.0; grid.len() * d];
        let mut x = vec![0.0; d];
        for flat in 0..grid.len() {
            grid.node_coords(flat, &mut x);
            images[flat * d] = x[0] + 0.05 * (2.0 * PI * x[1]).sin();
            images[flat * d + 1] = x[1] - 0.03 * (2.0 * PI * x[0]).cos();
        }
        let fm = FlowMap::from_lifted_images(grid, &images, FlowDirection::Forward);
        let mut out = vec![0.0; d];
        for flat in [0usize, 7, 100, 255] {
            grid.node_coords(flat, &mut x);
            let map = fm.clone().into_map();
            map.apply(&x, &mut out);
            let mut expect = [images[flat * d], images[flat * d + 1]];
            wrap_slice(&mut expect);
            assert!(crate::grid::torus_dist(&out, &expect) < 1e-12);
        }
    }

    #[test]
    fn solve_small_2x2() {
        let jac = [2.0, 1.0, 1.0, 3.0];
        let v = [5.0, 10.0];
        let mut out = [0.0; 2];
        solve_small(2, &jac, &v, &mut out);
        assert!((out[0] - 1.0).abs() < 1e-12);
        assert!((out[1] - 3.0).abs() < 1e-12);
    }
}
