//! Discretization of the bulk domain, its boundary, and the coupled
//! operators (bulk Laplacian with boundary flux rows, surface Laplacian,
//! trace, outward normal derivative) plus the quadrature weights behind all
//! bulk and surface integrals.
//!
//! Two geometries are supported:
//!
//! * `Interval1D(n)`: the unit interval with `n` cells; the boundary is the
//!   two endpoints, each carrying unit surface weight, so the surface
//!   Laplacian is identically zero.
//! * `DiscPolar2D(n_r, n_t)`: the unit disc on a polar tensor grid with a
//!   single shared origin node; the boundary is the unit circle and its
//!   Laplacian is the periodic second difference in the angle.
//!
//! The gradient bilinear form is assembled as a sum over edges, and the
//! nodal bulk Laplacian is defined by splitting the stiffness action into a
//! volume part and a boundary-flux part. With that split the discrete
//! integration-by-parts identity holds exactly by construction, which is
//! what conservation and the duality between the operator pair and the
//! gradient form rest on.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const TRACE_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DomainKind {
    Interval1D { n_cells: usize },
    DiscPolar2D { n_radial: usize, n_angular: usize },
}

/// A pair of nodal functions, one on the bulk grid and one on the boundary
/// grid. For fields representing conforming functions the surface part is
/// the trace of the bulk part; general pairs keep them independent.
#[derive(Clone, Debug, PartialEq)]
pub struct CoupledField {
    pub bulk: DVector<f64>,
    pub surf: DVector<f64>,
}

impl CoupledField {
    pub fn zeros(dom: &CoupledDomain) -> Self {
        Self {
            bulk: DVector::zeros(dom.n_bulk),
            surf: DVector::zeros(dom.n_surf),
        }
    }

    pub fn constant(dom: &CoupledDomain, c: f64) -> Self {
        Self {
            bulk: DVector::from_element(dom.n_bulk, c),
            surf: DVector::from_element(dom.n_surf, c),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.bulk.iter().chain(self.surf.iter()).all(|x| x.is_finite())
    }

    pub fn scale(&self, a: f64) -> Self {
        Self {
            bulk: &self.bulk * a,
            surf: &self.surf * a,
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        Self {
            bulk: &self.bulk + &other.bulk,
            surf: &self.surf + &other.surf,
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self {
            bulk: &self.bulk - &other.bulk,
            surf: &self.surf - &other.surf,
        }
    }

    /// a*x + y, allocating the result.
    pub fn axpy(a: f64, x: &Self, y: &Self) -> Self {
        Self {
            bulk: &x.bulk * a + &y.bulk,
            surf: &x.surf * a + &y.surf,
        }
    }

    pub fn shift(&self, c: f64) -> Self {
        Self {
            bulk: self.bulk.add_scalar(c),
            surf: self.surf.add_scalar(c),
        }
    }

    pub fn linf(&self) -> f64 {
        self.bulk
            .iter()
            .chain(self.surf.iter())
            .fold(0.0f64, |m, x| m.max(x.abs()))
    }

    /// Largest deviation of the surface part from the trace of the bulk part.
    pub fn trace_mismatch(&self, dom: &CoupledDomain) -> f64 {
        dom.boundary_nodes
            .iter()
            .zip(self.surf.iter())
            .fold(0.0f64, |m, (&i, &s)| m.max((self.bulk[i] - s).abs()))
    }

    /// Applies a scalar map nodewise, with separate bulk and surface maps.
    pub fn map_pair(&self, fb: impl Fn(f64) -> f64, fs: impl Fn(f64) -> f64) -> Self {
        Self {
            bulk: self.bulk.map(fb),
            surf: self.surf.map(fs),
        }
    }
}

/// Weighted edge between two bulk (or two surface) nodes; the gradient form
/// contributes `g * (u_a - u_b) * (z_a - z_b)` per edge.
#[derive(Clone, Copy, Debug)]
struct Edge {
    a: usize,
    b: usize,
    g: f64,
}

#[derive(Clone, Debug)]
pub struct CoupledDomain {
    pub kind: DomainKind,
    pub kappa1: f64,
    pub kappa2: f64,
    pub n_bulk: usize,
    pub n_surf: usize,
    pub bulk_weights: DVector<f64>,
    pub surf_weights: DVector<f64>,
    /// Bulk index of each boundary node, in surface-node order.
    pub boundary_nodes: Vec<usize>,
    pub bulk_coords: Vec<[f64; 2]>,
    pub surf_coords: Vec<[f64; 2]>,
    bulk_edges: Vec<Edge>,
    surf_edges: Vec<Edge>,
    /// Outward normal derivative stencil, one row per surface node.
    normal_stencil: Vec<Vec<(usize, f64)>>,
}

impl CoupledDomain {
    pub fn build(kind: DomainKind, kappa1: f64, kappa2: f64) -> Result<Self> {
        if !(kappa1 > 0.0 && kappa2 > 0.0 && kappa1.is_finite() && kappa2.is_finite()) {
            return Err(Error::Config(format!(
                "gradient-energy coefficients must be positive, got kappa1={kappa1}, kappa2={kappa2}"
            )));
        }
        match kind {
            DomainKind::Interval1D { n_cells } => {
                if n_cells < 4 {
                    return Err(Error::Config(format!(
                        "interval grid needs at least 4 cells, got {n_cells}"
                    )));
                }
                Ok(Self::build_interval(n_cells, kappa1, kappa2))
            }
            DomainKind::DiscPolar2D { n_radial, n_angular } => {
                if n_radial < 3 || n_angular < 8 {
                    return Err(Error::Config(format!(
                        "polar grid needs n_radial >= 3 and n_angular >= 8, got {n_radial} x {n_angular}"
                    )));
                }
                Ok(Self::build_disc(n_radial, n_angular, kappa1, kappa2))
            }
        }
    }

    fn build_interval(n: usize, kappa1: f64, kappa2: f64) -> Self {
        let h = 1.0 / n as f64;
        let n_bulk = n + 1;
        let mut bulk_weights = DVector::from_element(n_bulk, h);
        bulk_weights[0] = 0.5 * h;
        bulk_weights[n] = 0.5 * h;
        let surf_weights = DVector::from_element(2, 1.0);
        let bulk_coords: Vec<[f64; 2]> = (0..n_bulk).map(|i| [i as f64 * h, 0.0]).collect();
        let surf_coords = vec![[0.0, 0.0], [1.0, 0.0]];
        let bulk_edges = (0..n)
            .map(|i| Edge {
                a: i,
                b: i + 1,
                g: 1.0 / h,
            })
            .collect();
        // A two-point boundary has no intrinsic gradient.
        let surf_edges = Vec::new();
        let normal_stencil = vec![
            vec![(0, 1.5 / h), (1, -2.0 / h), (2, 0.5 / h)],
            vec![(n, 1.5 / h), (n - 1, -2.0 / h), (n - 2, 0.5 / h)],
        ];
        Self {
            kind: DomainKind::Interval1D { n_cells: n },
            kappa1,
            kappa2,
            n_bulk,
            n_surf: 2,
            bulk_weights,
            surf_weights,
            boundary_nodes: vec![0, n],
            bulk_coords,
            surf_coords,
            bulk_edges,
            surf_edges,
            normal_stencil,
        }
    }

    fn build_disc(n_r: usize, n_t: usize, kappa1: f64, kappa2: f64) -> Self {
        let dr = 1.0 / n_r as f64;
        let dt = std::f64::consts::TAU / n_t as f64;
        let n_bulk = 1 + n_r * n_t;
        let node = |k: usize, l: usize| 1 + (k - 1) * n_t + (l % n_t);

        let mut bulk_weights = DVector::zeros(n_bulk);
        // Finite-volume cell areas: a small disc at the origin, annular
        // sectors inside, half-width sectors on the boundary ring. Their sum
        // telescopes to the exact disc area.
        bulk_weights[0] = std::f64::consts::PI * (0.5 * dr).powi(2);
        for k in 1..=n_r {
            let r = k as f64 * dr;
            let w = if k < n_r {
                r * dr * dt
            } else {
                (r - 0.25 * dr) * (0.5 * dr) * dt
            };
            for l in 0..n_t {
                bulk_weights[node(k, l)] = w;
            }
        }
        let surf_weights = DVector::from_element(n_t, dt);

        let mut bulk_coords = vec![[0.0, 0.0]; n_bulk];
        for k in 1..=n_r {
            let r = k as f64 * dr;
            for l in 0..n_t {
                let th = l as f64 * dt;
                bulk_coords[node(k, l)] = [r * th.cos(), r * th.sin()];
            }
        }
        let surf_coords: Vec<[f64; 2]> = (0..n_t)
            .map(|l| {
                let th = l as f64 * dt;
                [th.cos(), th.sin()]
            })
            .collect();

        let mut bulk_edges = Vec::new();
        for l in 0..n_t {
            // Origin to first ring, through the face at r = dr/2.
            bulk_edges.push(Edge {
                a: 0,
                b: node(1, l),
                g: 0.5 * dr * dt / dr,
            });
        }
        for k in 1..n_r {
            let r_face = (k as f64 + 0.5) * dr;
            for l in 0..n_t {
                bulk_edges.push(Edge {
                    a: node(k, l),
                    b: node(k + 1, l),
                    g: r_face * dt / dr,
                });
            }
        }
        for k in 1..=n_r {
            let r = k as f64 * dr;
            let radial_extent = if k < n_r { dr } else { 0.5 * dr };
            for l in 0..n_t {
                bulk_edges.push(Edge {
                    a: node(k, l),
                    b: node(k, l + 1),
                    g: radial_extent / (r * dt),
                });
            }
        }

        let surf_edges = (0..n_t)
            .map(|l| Edge {
                a: l,
                b: (l + 1) % n_t,
                g: 1.0 / dt,
            })
            .collect();

        let normal_stencil = (0..n_t)
            .map(|l| {
                vec![
                    (node(n_r, l), 1.5 / dr),
                    (node(n_r - 1, l), -2.0 / dr),
                    (node(n_r - 2, l), 0.5 / dr),
                ]
            })
            .collect();

        Self {
            kind: DomainKind::DiscPolar2D {
                n_radial: n_r,
                n_angular: n_t,
            },
            kappa1,
            kappa2,
            n_bulk,
            n_surf: n_t,
            bulk_weights,
            surf_weights,
            boundary_nodes: (0..n_t).map(|l| node(n_r, l)).collect(),
            bulk_coords,
            surf_coords,
            bulk_edges,
            surf_edges,
            normal_stencil,
        }
    }

    pub fn measure_bulk(&self) -> f64 {
        self.bulk_weights.sum()
    }

    pub fn measure_surf(&self) -> f64 {
        self.surf_weights.sum()
    }

    pub fn total_measure(&self) -> f64 {
        self.measure_bulk() + self.measure_surf()
    }

    pub fn integrate_bulk(&self, f: &DVector<f64>) -> f64 {
        self.bulk_weights.dot(f)
    }

    pub fn integrate_surf(&self, f: &DVector<f64>) -> f64 {
        self.surf_weights.dot(f)
    }

    pub fn inner_h(&self, a: &CoupledField, b: &CoupledField) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.n_bulk {
            acc += self.bulk_weights[i] * a.bulk[i] * b.bulk[i];
        }
        for j in 0..self.n_surf {
            acc += self.surf_weights[j] * a.surf[j] * b.surf[j];
        }
        acc
    }

    pub fn norm_h(&self, a: &CoupledField) -> f64 {
        self.inner_h(a, a).max(0.0).sqrt()
    }

    /// Restriction of a bulk field to the boundary nodes.
    pub fn trace(&self, bulk: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.n_surf,
            self.boundary_nodes.iter().map(|&i| bulk[i]),
        )
    }

    /// Attaches the trace to a bulk vector, producing a conforming field.
    pub fn lift(&self, bulk: DVector<f64>) -> CoupledField {
        let surf = self.trace(&bulk);
        CoupledField { bulk, surf }
    }

    /// Builds a conforming field from a coordinate function.
    pub fn field_from_fn(&self, f: impl Fn(f64, f64) -> f64) -> CoupledField {
        let bulk = DVector::from_iterator(
            self.n_bulk,
            self.bulk_coords.iter().map(|c| f(c[0], c[1])),
        );
        self.lift(bulk)
    }

    /// One-sided second-order outward normal derivative on the boundary.
    pub fn normal_derivative(&self, bulk: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.n_surf,
            self.normal_stencil
                .iter()
                .map(|row| row.iter().map(|&(i, c)| c * bulk[i]).sum::<f64>()),
        )
    }

    /// Unit-coefficient bulk stiffness action `u -> K u` via the edge list;
    /// exactly zero on constants.
    pub fn stiffness_bulk(&self, u: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.n_bulk);
        for e in &self.bulk_edges {
            let d = e.g * (u[e.a] - u[e.b]);
            out[e.a] += d;
            out[e.b] -= d;
        }
        out
    }

    /// Unit-coefficient surface stiffness action.
    pub fn stiffness_surf(&self, u: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.n_surf);
        for e in &self.surf_edges {
            let d = e.g * (u[e.a] - u[e.b]);
            out[e.a] += d;
            out[e.b] -= d;
        }
        out
    }

    /// Nodal bulk Laplacian: the stiffness action minus the boundary-flux
    /// contribution, divided by the cell volumes. Splitting off the normal
    /// derivative this way is what makes the discrete integration-by-parts
    /// identity exact.
    pub fn laplacian_bulk(&self, u: &DVector<f64>) -> DVector<f64> {
        let mut out = self.stiffness_bulk(u);
        let nd = self.normal_derivative(u);
        for (j, &i) in self.boundary_nodes.iter().enumerate() {
            out[i] -= self.surf_weights[j] * nd[j];
        }
        for i in 0..self.n_bulk {
            out[i] = -out[i] / self.bulk_weights[i];
        }
        out
    }

    /// Nodal surface Laplacian (identically zero on the interval boundary).
    pub fn laplacian_surf(&self, u: &DVector<f64>) -> DVector<f64> {
        let mut out = self.stiffness_surf(u);
        for j in 0..self.n_surf {
            out[j] = -out[j] / self.surf_weights[j];
        }
        out
    }

    /// Gradient bilinear form
    /// `kappa1 * sum_bulk_edges + kappa2 * sum_surf_edges`,
    /// evaluated on the bulk and surface parts of the fields as given.
    pub fn grad_form(&self, u: &CoupledField, z: &CoupledField) -> f64 {
        let mut acc = 0.0;
        for e in &self.bulk_edges {
            acc += self.kappa1 * e.g * (u.bulk[e.a] - u.bulk[e.b]) * (z.bulk[e.a] - z.bulk[e.b]);
        }
        for e in &self.surf_edges {
            acc += self.kappa2 * e.g * (u.surf[e.a] - u.surf[e.b]) * (z.surf[e.a] - z.surf[e.b]);
        }
        acc
    }

    /// Same form with unit coefficients (used by the full Sobolev pair norm).
    pub fn grad_form_unweighted(&self, u: &CoupledField, z: &CoupledField) -> f64 {
        let mut acc = 0.0;
        for e in &self.bulk_edges {
            acc += e.g * (u.bulk[e.a] - u.bulk[e.b]) * (z.bulk[e.a] - z.bulk[e.b]);
        }
        for e in &self.surf_edges {
            acc += e.g * (u.surf[e.a] - u.surf[e.b]) * (z.surf[e.a] - z.surf[e.b]);
        }
        acc
    }

    /// The coupled elliptic operator pair
    /// `(-kappa1 * lap u, kappa1 * normal u - kappa2 * surf_lap u)`,
    /// scaled so that pairing it with any conforming field in the weighted
    /// inner product reproduces the gradient form exactly.
    pub fn apply_stiffness(&self, v: &CoupledField) -> Result<CoupledField> {
        let mismatch = v.trace_mismatch(self);
        if mismatch > TRACE_TOL {
            return Err(Error::Consistency(format!(
                "surface part deviates from the bulk trace by {mismatch:.3e} (tolerance {TRACE_TOL:.0e})"
            )));
        }
        let nd = self.normal_derivative(&v.bulk);
        let mut bulk = self.stiffness_bulk(&v.bulk);
        for (j, &i) in self.boundary_nodes.iter().enumerate() {
            bulk[i] -= self.surf_weights[j] * nd[j];
        }
        for i in 0..self.n_bulk {
            bulk[i] = self.kappa1 * bulk[i] / self.bulk_weights[i];
        }
        let ks = self.stiffness_surf(&v.surf);
        let surf = DVector::from_iterator(
            self.n_surf,
            (0..self.n_surf)
                .map(|j| self.kappa1 * nd[j] + self.kappa2 * ks[j] / self.surf_weights[j]),
        );
        Ok(CoupledField { bulk, surf })
    }

    /// Dense unit-coefficient bulk stiffness matrix.
    pub(crate) fn stiffness_bulk_matrix(&self) -> DMatrix<f64> {
        let mut k = DMatrix::zeros(self.n_bulk, self.n_bulk);
        for e in &self.bulk_edges {
            k[(e.a, e.a)] += e.g;
            k[(e.b, e.b)] += e.g;
            k[(e.a, e.b)] -= e.g;
            k[(e.b, e.a)] -= e.g;
        }
        k
    }

    /// Dense unit-coefficient surface stiffness matrix.
    pub(crate) fn stiffness_surf_matrix(&self) -> DMatrix<f64> {
        let mut k = DMatrix::zeros(self.n_surf, self.n_surf);
        for e in &self.surf_edges {
            k[(e.a, e.a)] += e.g;
            k[(e.b, e.b)] += e.g;
            k[(e.a, e.b)] -= e.g;
            k[(e.b, e.a)] -= e.g;
        }
        k
    }
}
