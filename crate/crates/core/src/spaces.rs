//! Function-space operator layer over a coupled domain: the combined mean,
//! the mean-free projection, the gradient bilinear form, the duality map of
//! that form on mean-free fields together with its inverse, the dual norm it
//! induces, and the discrete Poincare constant.
//!
//! The inverse duality map is realized by one LU factorization of the
//! stiffness system bordered with the mean constraint, computed at
//! construction and reused by every solve, norm evaluation and time step.

use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector, LU};

use crate::domain::{CoupledDomain, CoupledField};
use crate::error::{Error, Result};

/// Absolute tolerance on the combined mean below which a field counts as
/// mean-free. Fixed, so error semantics do not drift with the grid.
pub const MEAN_TOL: f64 = 1e-12;

#[derive(Debug)]
pub struct SpaceOps {
    dom: Arc<CoupledDomain>,
    /// Dense coefficient-weighted stiffness on conforming fields
    /// (bulk dofs; the surface part acts through the trace).
    s_v: DMatrix<f64>,
    /// Diagonal of the combined mass on conforming fields; also the load
    /// vector of the constant 1, so it doubles as the mean-constraint row.
    mass: DVector<f64>,
    kkt: LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    poincare: OnceLock<f64>,
}

impl SpaceOps {
    pub fn new(dom: Arc<CoupledDomain>) -> Result<Self> {
        let n = dom.n_bulk;
        let k_bulk = dom.stiffness_bulk_matrix();
        let k_surf = dom.stiffness_surf_matrix();
        let mut s_v = k_bulk * dom.kappa1;
        for (js, &is) in dom.boundary_nodes.iter().enumerate() {
            for (jt, &it) in dom.boundary_nodes.iter().enumerate() {
                s_v[(is, it)] += dom.kappa2 * k_surf[(js, jt)];
            }
        }
        let mut mass = DVector::zeros(n);
        for i in 0..n {
            mass[i] = dom.bulk_weights[i];
        }
        for (j, &i) in dom.boundary_nodes.iter().enumerate() {
            mass[i] += dom.surf_weights[j];
        }
        let mut kkt = DMatrix::zeros(n + 1, n + 1);
        kkt.view_mut((0, 0), (n, n)).copy_from(&s_v);
        for i in 0..n {
            kkt[(i, n)] = mass[i];
            kkt[(n, i)] = mass[i];
        }
        let kkt = LU::new(kkt);
        Ok(Self {
            dom,
            s_v,
            mass,
            kkt,
            poincare: OnceLock::new(),
        })
    }

    pub fn domain(&self) -> &CoupledDomain {
        &self.dom
    }

    pub fn domain_arc(&self) -> Arc<CoupledDomain> {
        Arc::clone(&self.dom)
    }

    pub(crate) fn stiffness_matrix(&self) -> &DMatrix<f64> {
        &self.s_v
    }

    pub(crate) fn mass_diag(&self) -> &DVector<f64> {
        &self.mass
    }

    /// Combined mean: total integral over bulk and boundary divided by the
    /// total measure.
    pub fn mean(&self, z: &CoupledField) -> f64 {
        (self.dom.integrate_bulk(&z.bulk) + self.dom.integrate_surf(&z.surf))
            / self.dom.total_measure()
    }

    /// Mean-free projection `z - mean(z) * 1`.
    pub fn project(&self, z: &CoupledField) -> CoupledField {
        z.shift(-self.mean(z))
    }

    pub fn grad_form(&self, u: &CoupledField, z: &CoupledField) -> f64 {
        self.dom.grad_form(u, z)
    }

    /// Seminorm induced by the gradient form; a norm on mean-free fields.
    pub fn grad_norm(&self, z: &CoupledField) -> f64 {
        self.dom.grad_form(z, z).max(0.0).sqrt()
    }

    /// Squared full pair Sobolev norm (unit-coefficient gradients plus the
    /// weighted squared values on bulk and boundary).
    pub fn v_norm_sq(&self, z: &CoupledField) -> f64 {
        self.dom.grad_form_unweighted(z, z) + self.dom.inner_h(z, z)
    }

    fn require_mean_free(&self, z: &CoupledField, what: &str) -> Result<()> {
        let m = self.mean(z);
        if m.abs() > MEAN_TOL {
            return Err(Error::Precondition(format!(
                "{what} requires a mean-free field (|mean| = {:.3e} > {MEAN_TOL:.0e})",
                m.abs()
            )));
        }
        Ok(())
    }

    /// Duality map of the gradient form on mean-free conforming fields: the
    /// pair whose weighted pairing with any conforming test field equals the
    /// form. Realized by the coupled elliptic operator pair.
    pub fn duality_map(&self, z: &CoupledField) -> Result<CoupledField> {
        self.require_mean_free(z, "duality_map")?;
        self.dom.apply_stiffness(z)
    }

    /// Load vector of a general pair against conforming test fields.
    pub(crate) fn load_vector(&self, g: &CoupledField) -> DVector<f64> {
        let mut b = DVector::zeros(self.dom.n_bulk);
        for i in 0..self.dom.n_bulk {
            b[i] = self.dom.bulk_weights[i] * g.bulk[i];
        }
        for (j, &i) in self.dom.boundary_nodes.iter().enumerate() {
            b[i] += self.dom.surf_weights[j] * g.surf[j];
        }
        b
    }

    /// Inverse duality map: solves the stiffness system bordered with the
    /// mean constraint, returning the mean-free conforming field whose
    /// gradient form against every mean-free test field reproduces the
    /// weighted pairing with `g`.
    pub fn duality_solve(&self, g: &CoupledField) -> Result<CoupledField> {
        self.require_mean_free(g, "duality_solve")?;
        let n = self.dom.n_bulk;
        let mut rhs = DVector::zeros(n + 1);
        rhs.rows_mut(0, n).copy_from(&self.load_vector(g));
        let sol = self
            .kkt
            .solve(&rhs)
            .ok_or_else(|| Error::numeric("duality_solve", "bordered stiffness solve failed"))?;
        Ok(self.dom.lift(sol.rows(0, n).into_owned()))
    }

    /// Norm of the dual space on mean-free pairs:
    /// `sqrt((g, duality_solve(g))_H)`.
    pub fn dual_norm(&self, g: &CoupledField) -> Result<f64> {
        let w = self.duality_solve(g)?;
        Ok(self.dom.inner_h(g, &w).max(0.0).sqrt())
    }

    /// Discrete Poincare constant: the largest ratio of the squared full
    /// pair norm to the squared gradient seminorm over mean-free conforming
    /// fields, computed from the generalized eigenproblem of the two Gram
    /// matrices restricted to the constraint plane.
    pub fn poincare_constant(&self) -> f64 {
        *self.poincare.get_or_init(|| self.compute_poincare())
    }

    fn compute_poincare(&self) -> f64 {
        let dom = &self.dom;
        let n = dom.n_bulk;
        // Full-norm Gram on conforming fields.
        let k_bulk = dom.stiffness_bulk_matrix();
        let k_surf = dom.stiffness_surf_matrix();
        let mut g_v = k_bulk;
        for (js, &is) in dom.boundary_nodes.iter().enumerate() {
            for (jt, &it) in dom.boundary_nodes.iter().enumerate() {
                g_v[(is, it)] += k_surf[(js, jt)];
            }
        }
        for i in 0..n {
            g_v[(i, i)] += self.mass[i];
        }
        // Orthonormal basis of the constraint plane via one Householder
        // reflection sending the first coordinate axis onto the mass vector.
        let mut u = self.mass.normalize();
        u[0] -= 1.0;
        let un = u.norm();
        let z = if un > 1e-14 {
            let u = u / un;
            let mut h = DMatrix::identity(n, n);
            h -= 2.0 * &u * u.transpose();
            h.columns(1, n - 1).into_owned()
        } else {
            DMatrix::identity(n, n).columns(1, n - 1).into_owned()
        };
        let a = z.transpose() * &self.s_v * &z;
        let b = z.transpose() * g_v * &z;
        // lambda_max of B x = lambda A x through the Cholesky factor of A:
        // the pencil is similar to L^-1 B L^-T.
        let chol = nalgebra::Cholesky::new(a).expect("reduced stiffness is positive definite");
        let l = chol.l();
        let y = l
            .solve_lower_triangular(&b)
            .expect("triangular solve of the reduced pencil");
        let zt = l
            .solve_lower_triangular(&y.transpose())
            .expect("triangular solve of the reduced pencil");
        let c_sym = 0.5 * (&zt + zt.transpose());
        let eig = nalgebra::SymmetricEigen::new(c_sym);
        eig.eigenvalues.iter().fold(0.0f64, |m, &x| m.max(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::DomainKind;
    use approx::assert_abs_diff_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn interval_ops(n: usize) -> SpaceOps {
        let dom = Arc::new(
            CoupledDomain::build(DomainKind::Interval1D { n_cells: n }, 1.0, 1.0).unwrap(),
        );
        SpaceOps::new(dom).unwrap()
    }

    fn disc_ops(nr: usize, nt: usize) -> SpaceOps {
        let dom = Arc::new(
            CoupledDomain::build(
                DomainKind::DiscPolar2D { n_radial: nr, n_angular: nt },
                1.0,
                1.0,
            )
            .unwrap(),
        );
        SpaceOps::new(dom).unwrap()
    }

    fn random_pair(ops: &SpaceOps, seed: u64) -> CoupledField {
        let mut rng = StdRng::seed_from_u64(seed);
        CoupledField {
            bulk: DVector::from_fn(ops.domain().n_bulk, |_, _| rng.random_range(-1.0..1.0)),
            surf: DVector::from_fn(ops.domain().n_surf, |_, _| rng.random_range(-1.0..1.0)),
        }
    }

    fn random_conforming(ops: &SpaceOps, seed: u64) -> CoupledField {
        let mut rng = StdRng::seed_from_u64(seed);
        let bulk = DVector::from_fn(ops.domain().n_bulk, |_, _| rng.random_range(-1.0..1.0));
        ops.domain().lift(bulk)
    }

    #[test]
    fn mean_values() {
        let ops = interval_ops(8);
        let c = CoupledField::constant(ops.domain(), 4.2);
        assert_abs_diff_eq!(ops.mean(&c), 4.2, epsilon = 1e-14);
        let z = CoupledField::zeros(ops.domain());
        assert_eq!(ops.mean(&z), 0.0);
        // Bulk zero, both endpoint values 3: total integral 6, measure 3.
        let g = CoupledField {
            bulk: DVector::zeros(ops.domain().n_bulk),
            surf: DVector::from_element(2, 3.0),
        };
        assert_abs_diff_eq!(ops.mean(&g), 2.0, epsilon = 1e-14);
    }

    #[test]
    fn projection_properties() {
        let ops = interval_ops(12);
        let c = CoupledField::constant(ops.domain(), -1.3);
        assert!(ops.project(&c).linf() < 1e-14);
        for s in 0..20 {
            let z = random_pair(&ops, s);
            let p = ops.project(&z);
            assert!(ops.mean(&p).abs() < 1e-14);
            let pp = ops.project(&p);
            assert!(pp.sub(&p).linf() < 1e-14);
        }
    }

    #[test]
    fn projection_operator_norm_bound() {
        // The projection is linear with weighted-norm bound
        // 1 + total_measure^{-1} * |1|_H^2 = 2 (the constant has unit mean).
        let ops = interval_ops(10);
        for s in 0..10 {
            let z = random_pair(&ops, 100 + s);
            let p = ops.project(&z);
            let nz = ops.domain().norm_h(&z);
            let np = ops.domain().norm_h(&p);
            assert!(np <= 2.0 * nz + 1e-12);
        }
    }

    #[test]
    fn grad_form_values() {
        let ops = interval_ops(8);
        let c = CoupledField::constant(ops.domain(), 2.0);
        let z = random_conforming(&ops, 3);
        assert_abs_diff_eq!(ops.grad_form(&c, &z), 0.0, epsilon = 1e-13);
        // Linear profile with unit slope: gradient energy 1 on the unit
        // interval; the two-point boundary contributes nothing.
        let lin = ops.domain().field_from_fn(|x, _| x - 0.5);
        assert_abs_diff_eq!(ops.grad_form(&lin, &lin), 1.0, epsilon = 1e-12);
        for s in 0..10 {
            let u = random_conforming(&ops, 40 + s);
            let v = random_conforming(&ops, 80 + s);
            let a = ops.grad_form(&u, &v);
            let b = ops.grad_form(&v, &u);
            assert!((a - b).abs() <= 1e-13 * a.abs().max(1.0));
        }
    }

    #[test]
    fn duality_roundtrip() {
        for ops in [interval_ops(16), disc_ops(6, 12)] {
            let zero = CoupledField::zeros(ops.domain());
            assert!(ops.duality_solve(&zero).unwrap().linf() < 1e-14);
            for s in 0..10 {
                let z = ops.project(&random_conforming(&ops, 500 + s));
                let fz = ops.duality_map(&z).unwrap();
                let back = ops.duality_solve(&fz).unwrap();
                assert!(
                    back.sub(&z).linf() < 1e-10,
                    "roundtrip error {:.3e}",
                    back.sub(&z).linf()
                );
            }
        }
    }

    #[test]
    fn duality_solve_matches_dense_oracle() {
        // Independent route: assemble the stiffness Gram from the public
        // bilinear form on coordinate basis fields, restrict to the
        // constraint plane with an explicitly built basis, and solve dense.
        let ops = interval_ops(16);
        let dom = ops.domain();
        let n = dom.n_bulk;
        let g = ops.project(&dom.field_from_fn(|x, _| (std::f64::consts::PI * x).cos()));

        let mut s = DMatrix::zeros(n, n);
        let mut basis = Vec::with_capacity(n);
        for i in 0..n {
            let mut e = DVector::zeros(n);
            e[i] = 1.0;
            basis.push(dom.lift(e));
        }
        for i in 0..n {
            for j in 0..n {
                s[(i, j)] = dom.grad_form(&basis[i], &basis[j]);
            }
        }
        let mut load = DVector::zeros(n);
        for i in 0..n {
            load[i] = dom.inner_h(&g, &basis[i]);
        }
        let mut mass = DVector::zeros(n);
        for i in 0..n {
            mass[i] = dom.inner_h(&CoupledField::constant(dom, 1.0), &basis[i]);
        }
        // Nullspace-free solve: drop the last dof in favor of the
        // constraint mass . w = 0.
        let mut sys = DMatrix::zeros(n + 1, n + 1);
        sys.view_mut((0, 0), (n, n)).copy_from(&s);
        for i in 0..n {
            sys[(i, n)] = mass[i];
            sys[(n, i)] = mass[i];
        }
        let mut rhs = DVector::zeros(n + 1);
        rhs.rows_mut(0, n).copy_from(&load);
        let dense = sys.full_piv_lu().solve(&rhs).unwrap().rows(0, n).into_owned();

        let w = ops.duality_solve(&g).unwrap();
        for i in 0..n {
            assert!(
                (w.bulk[i] - dense[i]).abs() < 1e-10,
                "node {i}: {} vs {}",
                w.bulk[i],
                dense[i]
            );
        }
    }

    #[test]
    fn norms() {
        let ops = interval_ops(12);
        let zero = CoupledField::zeros(ops.domain());
        assert_eq!(ops.grad_norm(&zero), 0.0);
        assert_eq!(ops.dual_norm(&zero).unwrap(), 0.0);
        for s in 0..10 {
            let z = ops.project(&random_conforming(&ops, 900 + s));
            let g = ops.project(&random_pair(&ops, 950 + s));
            let alpha = -2.5;
            assert_abs_diff_eq!(
                ops.grad_norm(&z.scale(alpha)),
                alpha.abs() * ops.grad_norm(&z),
                epsilon = 1e-12
            );
            assert_abs_diff_eq!(
                ops.dual_norm(&g.scale(alpha)).unwrap(),
                alpha.abs() * ops.dual_norm(&g).unwrap(),
                epsilon = 1e-12
            );
            // Duality pairing bound sampled on random pairs.
            let pairing = ops.domain().inner_h(&g, &z);
            let bound = ops.dual_norm(&g).unwrap() * ops.grad_norm(&z) + 1e-10;
            assert!(pairing <= bound, "{pairing} > {bound}");
        }
    }

    #[test]
    fn mean_free_preconditions() {
        let ops = interval_ops(8);
        let c = CoupledField::constant(ops.domain(), 1.0);
        assert!(matches!(ops.duality_map(&c), Err(Error::Precondition(_))));
        assert!(matches!(ops.duality_solve(&c), Err(Error::Precondition(_))));
    }

    #[test]
    fn poincare_inequality_holds() {
        for ops in [interval_ops(16), disc_ops(6, 12)] {
            let cp = ops.poincare_constant();
            assert!(cp > 0.0);
            for s in 0..200 {
                let z = ops.project(&random_conforming(&ops, 2000 + s));
                let lhs = ops.v_norm_sq(&z);
                let rhs = cp * ops.grad_norm(&z).powi(2);
                assert!(lhs <= rhs * (1.0 + 1e-10) + 1e-12, "{lhs} > {rhs}");
            }
        }
    }

    #[test]
    fn poincare_constant_stable_under_refinement() {
        let c16 = interval_ops(16).poincare_constant();
        let c32 = interval_ops(32).poincare_constant();
        assert!(
            c32 <= c16 || (c32 - c16).abs() <= 0.05 * c16,
            "{c16} -> {c32}"
        );
        // The full norm contains the weighted values on top of the
        // gradients, so the ratio exceeds 1/kappa1 = 1.
        assert!(c16 > 1.0);
    }
}
