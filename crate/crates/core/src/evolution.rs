//! Implicit time stepping of the viscous regularized evolution.
//!
//! One step advances the mean-free order-parameter deviation `v` by solving
//! the coupled system in the unknowns `(v, mu)`:
//!
//! * mass balance: `M (v - v_old)/dt + S mu = 0`, which simultaneously
//!   enforces the flow driven by the chemical potential on mean-free test
//!   fields and exact conservation of the combined mean;
//! * potential relation: `M mu = eps M delta + S v + load(beta_eps(u))
//!   - mean(beta_eps(u)) c + load(cutoff(u) - f)`, with `u = v + m0`.
//!
//! `M` is the diagonal combined mass, `S` the coefficient-weighted stiffness
//! and `c` the mass vector; `beta_eps` denotes the regularized graph pair
//! and `cutoff` the (possibly bypassed) perturbation pair. Newton uses the
//! exact regularized-slope Jacobian with Armijo backtracking. The mean of
//! `mu` then automatically equals the mean of `cutoff(u) - f`, matching the
//! reconstruction used by the diagnostics.

use nalgebra::{DMatrix, DVector};

use crate::domain::CoupledField;
use crate::error::{Error, Result};
use crate::graphs::{CompatibilityWitness, MonotoneGraph};
use crate::perturbation::{CutoffPerturbation, LipschitzPerturbation};
use crate::spaces::SpaceOps;

/// Perturbation as used by the scheme: cut off outside the potential
/// domain, or raw in prototype mode (unbounded domains).
#[derive(Clone, Debug)]
pub enum PerturbationMode {
    Cutoff(CutoffPerturbation),
    Raw(LipschitzPerturbation),
}

impl PerturbationMode {
    pub fn eval(&self, r: f64) -> f64 {
        match self {
            PerturbationMode::Cutoff(c) => c.eval(r),
            PerturbationMode::Raw(p) => p.eval(r),
        }
    }

    pub fn slope(&self, r: f64) -> f64 {
        match self {
            PerturbationMode::Cutoff(c) => c.slope(r),
            PerturbationMode::Raw(p) => p.slope(r),
        }
    }

    /// Supremum of the absolute value over the line; `None` in raw mode
    /// where no global bound exists.
    pub fn sup_abs(&self) -> Option<f64> {
        match self {
            PerturbationMode::Cutoff(c) => Some(c.sup_abs()),
            PerturbationMode::Raw(_) => None,
        }
    }

    pub fn is_cutoff(&self) -> bool {
        matches!(self, PerturbationMode::Cutoff(_))
    }
}

/// The nonlinear data of the problem: bulk and boundary graphs (the
/// boundary one carrying the compatibility constant as its resolvent
/// scale), the compatibility witness, and the two perturbations.
#[derive(Clone, Debug)]
pub struct PotentialSystem {
    pub bulk_graph: MonotoneGraph,
    pub surf_graph: MonotoneGraph,
    pub witness: CompatibilityWitness,
    pub bulk_pert: PerturbationMode,
    pub surf_pert: PerturbationMode,
}

impl PotentialSystem {
    /// The prescribed mean must lie strictly inside the boundary-graph
    /// domain; the coercivity of the scheme degenerates on the boundary.
    pub fn require_interior_mean(&self, m0: f64) -> Result<()> {
        let g = &self.surf_graph;
        if !(m0 > g.domain_lo && m0 < g.domain_hi) {
            return Err(Error::assumption(
                "M0",
                format!(
                    "prescribed mean m0 = {m0} is not strictly inside the boundary potential \
                     domain ({}, {})",
                    g.domain_lo, g.domain_hi
                ),
            ));
        }
        Ok(())
    }
}

/// State advanced by the stepper: mean-free conforming deviation `v`, time,
/// regularization parameter, step size and prescribed mean.
#[derive(Clone, Debug)]
pub struct SolverState {
    pub v: CoupledField,
    pub t: f64,
    pub eps: f64,
    pub dt: f64,
    pub m0: f64,
}

/// Per-step outcome: iteration counts, the reconstructed chemical potential
/// pair, the regularized graph pair at the new state, the mean of the
/// perturbation-minus-forcing pair, and the regularized energy.
#[derive(Clone, Debug)]
pub struct StepReport {
    pub newton_iters: usize,
    pub residual_norm: f64,
    pub mu: CoupledField,
    pub xi: CoupledField,
    pub omega: f64,
    pub phi_eps: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-11,
            max_iters: 50,
        }
    }
}

pub struct Evolution<'a> {
    pub spaces: &'a SpaceOps,
    pub system: &'a PotentialSystem,
    pub newton: NewtonOptions,
}

impl<'a> Evolution<'a> {
    pub fn new(spaces: &'a SpaceOps, system: &'a PotentialSystem) -> Self {
        Self {
            spaces,
            system,
            newton: NewtonOptions::default(),
        }
    }

    pub fn with_newton(mut self, newton: NewtonOptions) -> Self {
        self.newton = newton;
        self
    }

    /// Regularized graph pair at `u = v + m0`.
    pub fn yosida_pair(&self, u: &CoupledField, eps: f64) -> Result<CoupledField> {
        let mut bulk = DVector::zeros(u.bulk.len());
        for i in 0..u.bulk.len() {
            bulk[i] = self.system.bulk_graph.yosida(eps, u.bulk[i])?;
        }
        let mut surf = DVector::zeros(u.surf.len());
        for j in 0..u.surf.len() {
            surf[j] = self.system.surf_graph.yosida(eps, u.surf[j])?;
        }
        Ok(CoupledField { bulk, surf })
    }

    fn pert_pair(&self, u: &CoupledField) -> CoupledField {
        CoupledField {
            bulk: u.bulk.map(|r| self.system.bulk_pert.eval(r)),
            surf: u.surf.map(|r| self.system.surf_pert.eval(r)),
        }
    }

    /// Right-hand side of the potential relation (everything except the
    /// `M mu` term), as a load vector on conforming test fields.
    fn potential_rhs(
        &self,
        v: &DVector<f64>,
        delta: &DVector<f64>,
        eps: f64,
        m0: f64,
        f_slice: &CoupledField,
    ) -> Result<DVector<f64>> {
        let dom = self.spaces.domain();
        let u = dom.lift(v.add_scalar(m0));
        let beta = self.yosida_pair(&u, eps)?;
        let mean_beta = self.spaces.mean(&beta);
        let pert = self.pert_pair(&u);
        let reaction = beta.add(&pert).sub(f_slice);
        let mut rhs = self.spaces.load_vector(&reaction);
        let mass = self.spaces.mass_diag();
        let s = self.spaces.stiffness_matrix();
        rhs += s * v;
        for i in 0..rhs.len() {
            rhs[i] += eps * mass[i] * delta[i] - mean_beta * mass[i];
        }
        Ok(rhs)
    }

    /// Nodal weighted norm of a load-space residual.
    fn load_norm(&self, r1: &DVector<f64>, r2: &DVector<f64>) -> f64 {
        let mass = self.spaces.mass_diag();
        let mut acc = 0.0;
        for i in 0..r1.len() {
            acc += r1[i] * r1[i] / mass[i] + r2[i] * r2[i] / mass[i];
        }
        acc.max(0.0).sqrt()
    }

    #[allow(clippy::too_many_arguments)]
    fn residuals(
        &self,
        v: &DVector<f64>,
        mu: &DVector<f64>,
        v_old: &DVector<f64>,
        dt: f64,
        eps: f64,
        m0: f64,
        f_slice: &CoupledField,
    ) -> Result<(DVector<f64>, DVector<f64>)> {
        let mass = self.spaces.mass_diag();
        let s = self.spaces.stiffness_matrix();
        let delta = (v - v_old) / dt;
        let mut r1 = s * mu;
        for i in 0..r1.len() {
            r1[i] += mass[i] * delta[i];
        }
        let mut r2 = -self.potential_rhs(v, &delta, eps, m0, f_slice)?;
        for i in 0..r2.len() {
            r2[i] += mass[i] * mu[i];
        }
        Ok((r1, r2))
    }

    /// One implicit step from `state` under the forcing slice at the new
    /// time. Fails with `StepFailed` when Newton stalls; the caller may
    /// halve `dt` and retry.
    pub fn step(&self, state: &SolverState, f_slice: &CoupledField) -> Result<(SolverState, StepReport)> {
        let dom = self.spaces.domain();
        let n = dom.n_bulk;
        if !(state.dt > 0.0 && state.eps > 0.0) {
            return Err(Error::Precondition(format!(
                "step needs positive dt and eps, got dt = {}, eps = {}",
                state.dt, state.eps
            )));
        }
        if !state.v.is_finite() || !f_slice.is_finite() {
            return Err(Error::Precondition("non-finite state or forcing".into()));
        }
        if self.spaces.mean(&state.v).abs() > 1e-10 {
            return Err(Error::Precondition(format!(
                "state is not mean-free (mean = {:.3e})",
                self.spaces.mean(&state.v)
            )));
        }
        self.system.require_interior_mean(state.m0)?;

        let mass = self.spaces.mass_diag();
        let s = self.spaces.stiffness_matrix();
        let v_old = state.v.bulk.clone();
        let (dt, eps, m0) = (state.dt, state.eps, state.m0);

        let mut v = v_old.clone();
        // Warm-start mu from the explicit potential relation at delta = 0.
        let zero_delta = DVector::zeros(n);
        let rhs0 = self.potential_rhs(&v, &zero_delta, eps, m0, f_slice)?;
        let mut mu = DVector::from_fn(n, |i, _| rhs0[i] / mass[i]);

        let (mut r1, mut r2) = self.residuals(&v, &mu, &v_old, dt, eps, m0, f_slice)?;
        let mut res = self.load_norm(&r1, &r2);
        let mut iters = 0usize;

        while res > self.newton.tol {
            if iters >= self.newton.max_iters {
                return Err(Error::StepFailed {
                    t: state.t + dt,
                    residual: res,
                    iters,
                });
            }
            iters += 1;

            // Jacobian blocks; only the lower-left one depends on the state.
            let u = dom.lift(v.add_scalar(m0));
            let mut react_diag = DVector::zeros(n);
            for i in 0..n {
                react_diag[i] = dom.bulk_weights[i]
                    * (self.system.bulk_graph.yosida_slope(eps, u.bulk[i])?
                        + self.system.bulk_pert.slope(u.bulk[i]));
            }
            let mut mean_grad = DVector::zeros(n);
            for i in 0..n {
                mean_grad[i] =
                    dom.bulk_weights[i] * self.system.bulk_graph.yosida_slope(eps, u.bulk[i])?;
            }
            for (j, &i) in dom.boundary_nodes.iter().enumerate() {
                let gslope = self.system.surf_graph.yosida_slope(eps, u.surf[j])?;
                react_diag[i] +=
                    dom.surf_weights[j] * (gslope + self.system.surf_pert.slope(u.surf[j]));
                mean_grad[i] += dom.surf_weights[j] * gslope;
            }
            mean_grad /= dom.total_measure();

            let mut jac = DMatrix::zeros(2 * n, 2 * n);
            for i in 0..n {
                jac[(i, i)] = mass[i] / dt;
            }
            jac.view_mut((0, n), (n, n)).copy_from(s);
            {
                let mut j21 = jac.view_mut((n, 0), (n, n));
                j21.copy_from(&(-s));
                for i in 0..n {
                    j21[(i, i)] -= eps * mass[i] / dt + react_diag[i];
                }
                for i in 0..n {
                    for k in 0..n {
                        j21[(i, k)] += mass[i] * mean_grad[k];
                    }
                }
            }
            for i in 0..n {
                jac[(n + i, n + i)] = mass[i];
            }

            let mut rhs = DVector::zeros(2 * n);
            for i in 0..n {
                rhs[i] = -r1[i];
                rhs[n + i] = -r2[i];
            }
            let update = jac
                .lu()
                .solve(&rhs)
                .ok_or_else(|| Error::numeric("step", "singular Newton system"))?;
            let dv = update.rows(0, n).into_owned();
            let dmu = update.rows(n, n).into_owned();

            // Armijo backtracking on the squared residual norm.
            let mut alpha = 1.0;
            loop {
                let v_try = &v + &dv * alpha;
                let mu_try = &mu + &dmu * alpha;
                if let Ok((t1, t2)) =
                    self.residuals(&v_try, &mu_try, &v_old, dt, eps, m0, f_slice)
                {
                    let res_try = self.load_norm(&t1, &t2);
                    if res_try * res_try <= (1.0 - 1e-4 * alpha) * res * res
                        || res_try <= self.newton.tol
                    {
                        v = v_try;
                        mu = mu_try;
                        r1 = t1;
                        r2 = t2;
                        res = res_try;
                        break;
                    }
                }
                alpha *= 0.5;
                if alpha < 1e-12 {
                    return Err(Error::StepFailed {
                        t: state.t + dt,
                        residual: res,
                        iters,
                    });
                }
            }
        }

        // Scrub the rounding-level mean drift so conservation stays at
        // machine zero over arbitrarily long runs.
        let v_pair = dom.lift(v);
        let v_pair = self.spaces.project(&v_pair);

        let new_state = SolverState {
            v: v_pair,
            t: state.t + dt,
            eps,
            dt,
            m0: state.m0,
        };
        let u_new = dom.lift(new_state.v.bulk.add_scalar(m0));
        let xi = self.yosida_pair(&u_new, eps)?;
        let pert = self.pert_pair(&u_new);
        let omega = self.spaces.mean(&pert.sub(f_slice));
        let phi_eps = self.regularized_energy(&new_state)?;
        let report = StepReport {
            newton_iters: iters,
            residual_norm: res,
            mu: dom.lift(mu),
            xi,
            omega,
            phi_eps,
        };
        Ok((new_state, report))
    }

    /// Reconstructs the chemical potential pair of a completed step from
    /// the backward difference, together with the mean of the
    /// perturbation-minus-forcing pair (which equals the mean of the
    /// reconstruction).
    pub fn chemical_potential(
        &self,
        prev: &SolverState,
        next: &SolverState,
        f_slice: &CoupledField,
    ) -> Result<(CoupledField, f64)> {
        let dom = self.spaces.domain();
        let mass = self.spaces.mass_diag();
        let delta = (&next.v.bulk - &prev.v.bulk) / next.dt;
        let rhs = self.potential_rhs(&next.v.bulk, &delta, next.eps, next.m0, f_slice)?;
        let mu = DVector::from_fn(dom.n_bulk, |i, _| rhs[i] / mass[i]);
        let u = dom.lift(next.v.bulk.add_scalar(next.m0));
        let omega = self.spaces.mean(&self.pert_pair(&u).sub(f_slice));
        Ok((dom.lift(mu), omega))
    }

    /// Regularized energy: half the gradient form plus the integrals of the
    /// envelope pair at `u = v + m0`.
    pub fn regularized_energy(&self, state: &SolverState) -> Result<f64> {
        let dom = self.spaces.domain();
        let mut acc = 0.5 * dom.grad_form(&state.v, &state.v);
        for i in 0..dom.n_bulk {
            acc += dom.bulk_weights[i]
                * self
                    .system
                    .bulk_graph
                    .moreau_yosida(state.eps, state.v.bulk[i] + state.m0)?;
        }
        for j in 0..dom.n_surf {
            acc += dom.surf_weights[j]
                * self
                    .system
                    .surf_graph
                    .moreau_yosida(state.eps, state.v.surf[j] + state.m0)?;
        }
        Ok(acc)
    }

    /// Global bound used by the step-energy inequality: the squared
    /// weighted norm the perturbation pair can reach. In cut-off mode this
    /// is a state-independent constant; in raw mode the current value of
    /// the pair is used instead.
    pub fn perturbation_bound(&self, u: &CoupledField) -> f64 {
        let dom = self.spaces.domain();
        match (self.system.bulk_pert.sup_abs(), self.system.surf_pert.sup_abs()) {
            (Some(sb), Some(ss)) => {
                dom.measure_bulk() * sb * sb + dom.measure_surf() * ss * ss
            }
            _ => {
                let pert = self.pert_pair(u);
                dom.inner_h(&pert, &pert)
            }
        }
    }

    /// Margin of the discrete step-energy inequality
    /// `eps |delta|_H^2 + |delta|_*^2 + 2 (phi(next) - phi(prev)) / dt
    ///  <= |f|_V^2 + M / eps`;
    /// nonnegative up to solver tolerance for the implicit scheme. Logged,
    /// never enforced.
    pub fn energy_margin(
        &self,
        prev: &SolverState,
        next: &SolverState,
        f_slice: &CoupledField,
    ) -> Result<f64> {
        let dom = self.spaces.domain();
        let delta = next.v.sub(&prev.v).scale(1.0 / next.dt);
        // The difference of mean-free states is mean-free; strip rounding
        // noise before the dual solve.
        let delta = self.spaces.project(&delta);
        let visc = next.eps * dom.inner_h(&delta, &delta);
        let dual = self.spaces.dual_norm(&delta)?.powi(2);
        let dphi =
            2.0 * (self.regularized_energy(next)? - self.regularized_energy(prev)?) / next.dt;
        let u_new = dom.lift(next.v.bulk.add_scalar(next.m0));
        let rhs = self.spaces.v_norm_sq(f_slice) + self.perturbation_bound(&u_new) / next.eps;
        Ok(rhs - (visc + dual + dphi))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{CoupledDomain, DomainKind};
    use approx::assert_abs_diff_eq;
    use nalgebra::DVector;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use std::sync::Arc;

    fn interval_spaces(n: usize) -> SpaceOps {
        let dom = Arc::new(
            CoupledDomain::build(DomainKind::Interval1D { n_cells: n }, 1.0, 1.0).unwrap(),
        );
        SpaceOps::new(dom).unwrap()
    }

    fn prototype_system() -> PotentialSystem {
        PotentialSystem {
            bulk_graph: MonotoneGraph::cubic(),
            surf_graph: MonotoneGraph::cubic(),
            witness: CompatibilityWitness { rho: 1.0, c0: 0.0 },
            bulk_pert: PerturbationMode::Raw(LipschitzPerturbation::linear(-1.0).unwrap()),
            surf_pert: PerturbationMode::Raw(LipschitzPerturbation::linear(-1.0).unwrap()),
        }
    }

    fn log_system() -> PotentialSystem {
        let cut = |slope: f64| {
            PerturbationMode::Cutoff(
                CutoffPerturbation::new(LipschitzPerturbation::linear(slope).unwrap(), -1.0, 1.0)
                    .unwrap(),
            )
        };
        PotentialSystem {
            bulk_graph: MonotoneGraph::logarithmic(1.0).unwrap(),
            surf_graph: MonotoneGraph::logarithmic(1.0).unwrap(),
            witness: CompatibilityWitness { rho: 1.0, c0: 0.0 },
            bulk_pert: cut(-2.0),
            surf_pert: cut(-2.0),
        }
    }

    fn random_state(spaces: &SpaceOps, eps: f64, dt: f64, m0: f64, seed: u64) -> SolverState {
        let mut rng = StdRng::seed_from_u64(seed);
        let bulk =
            DVector::from_fn(spaces.domain().n_bulk, |_, _| rng.random_range(-0.2..0.2));
        let v = spaces.project(&spaces.domain().lift(bulk));
        SolverState { v, t: 0.0, eps, dt, m0 }
    }

    #[test]
    fn zero_is_a_fixed_point() {
        let spaces = interval_spaces(8);
        let system = prototype_system();
        let ev = Evolution::new(&spaces, &system);
        let state = SolverState {
            v: CoupledField::zeros(spaces.domain()),
            t: 0.0,
            eps: 0.5,
            dt: 1e-2,
            m0: 0.0,
        };
        let f = CoupledField::zeros(spaces.domain());
        let (next, report) = ev.step(&state, &f).unwrap();
        assert!(next.v.linf() < 1e-13);
        assert!(report.mu.linf() < 1e-12);
        assert_eq!(report.omega, 0.0);
        assert_eq!(report.phi_eps, 0.0);
    }

    #[test]
    fn mass_is_conserved() {
        let spaces = interval_spaces(16);
        let system = log_system();
        let ev = Evolution::new(&spaces, &system);
        let f = spaces.domain().field_from_fn(|x, _| 0.3 * (2.0 * x - 1.0));
        let mut state = random_state(&spaces, 0.2, 5e-3, 0.1, 11);
        for _ in 0..25 {
            let (next, _) = ev.step(&state, &f).unwrap();
            assert!(spaces.mean(&next.v).abs() < 1e-12);
            state = next;
        }
    }

    #[test]
    fn chemical_potential_identities() {
        let spaces = interval_spaces(8);
        let system = log_system();
        let ev = Evolution::new(&spaces, &system);
        let f = spaces.domain().field_from_fn(|x, _| 0.2 * (3.1 * x).sin());
        let prev = random_state(&spaces, 0.3, 1e-3, 0.05, 5);
        let (next, report) = ev.step(&prev, &f).unwrap();
        let (mu, omega) = ev.chemical_potential(&prev, &next, &f).unwrap();

        // The Newton-solved potential and the reconstruction agree.
        assert!(report.mu.sub(&mu).linf() < 1e-9);
        // Mean decomposition: projecting off the mean leaves a mean-free
        // pair, and the mean itself equals omega.
        let p_mu = spaces.project(&mu);
        assert!(spaces.mean(&p_mu).abs() < 1e-13);
        assert_abs_diff_eq!(spaces.mean(&mu), omega, epsilon = 1e-12);
        assert_abs_diff_eq!(report.omega, omega, epsilon = 1e-12);

        // Termwise strong-form identity at interior nodes.
        let dom = spaces.domain();
        let dt = next.dt;
        let delta = (&next.v.bulk - &prev.v.bulk) / dt;
        let u = dom.lift(next.v.bulk.add_scalar(next.m0));
        let beta = ev.yosida_pair(&u, next.eps).unwrap();
        let mean_beta = spaces.mean(&beta);
        let lap = dom.laplacian_bulk(&next.v.bulk);
        for i in 0..dom.n_bulk {
            if dom.boundary_nodes.contains(&i) {
                continue;
            }
            let rhs = next.eps * delta[i] - dom.kappa1 * lap[i] + beta.bulk[i] - mean_beta
                + system.bulk_pert.eval(u.bulk[i])
                - f.bulk[i];
            assert!(
                (mu.bulk[i] - rhs).abs() < 1e-10,
                "node {i}: {} vs {}",
                mu.bulk[i],
                rhs
            );
        }
    }

    #[test]
    fn zero_state_zero_potential() {
        let spaces = interval_spaces(8);
        let system = prototype_system();
        let ev = Evolution::new(&spaces, &system);
        let zero = SolverState {
            v: CoupledField::zeros(spaces.domain()),
            t: 0.0,
            eps: 0.4,
            dt: 1e-2,
            m0: 0.0,
        };
        let f = CoupledField::zeros(spaces.domain());
        let (next, _) = ev.step(&zero, &f).unwrap();
        let (mu, omega) = ev.chemical_potential(&zero, &next, &f).unwrap();
        assert!(mu.linf() < 1e-12);
        assert!(omega.abs() < 1e-14);
    }

    #[test]
    fn regularized_energy_values() {
        let spaces = interval_spaces(8);
        let mut system = log_system();
        system.bulk_graph = MonotoneGraph::indicator(-1.0, 1.0).unwrap();
        system.surf_graph = MonotoneGraph::indicator(-1.0, 1.0).unwrap();
        let ev = Evolution::new(&spaces, &system);
        let zero = SolverState {
            v: CoupledField::zeros(spaces.domain()),
            t: 0.0,
            eps: 0.3,
            dt: 1e-2,
            m0: 0.0,
        };
        assert_eq!(ev.regularized_energy(&zero).unwrap(), 0.0);

        let lin = SolverState {
            v: spaces.domain().field_from_fn(|x, _| x - 0.5),
            ..zero.clone()
        };
        // Indicator envelopes vanish inside the window; only the gradient
        // part contributes: (1/2) * 1.
        assert_abs_diff_eq!(ev.regularized_energy(&lin).unwrap(), 0.5, epsilon = 1e-12);
        assert!(ev.regularized_energy(&lin).unwrap() >= 0.0);
    }

    #[test]
    fn energy_margin_zero_trajectory() {
        let spaces = interval_spaces(8);
        let system = log_system();
        let ev = Evolution::new(&spaces, &system);
        let zero = SolverState {
            v: CoupledField::zeros(spaces.domain()),
            t: 0.0,
            eps: 0.5,
            dt: 1e-2,
            m0: 0.0,
        };
        let f = CoupledField::zeros(spaces.domain());
        let (next, _) = ev.step(&zero, &f).unwrap();
        let margin = ev.energy_margin(&zero, &next, &f).unwrap();
        let u = CoupledField::constant(spaces.domain(), 0.0);
        let expected = ev.perturbation_bound(&u) / zero.eps;
        assert_abs_diff_eq!(margin, expected, epsilon = 1e-9);
        assert!(margin >= 0.0);
    }

    #[test]
    fn energy_margin_nonnegative_on_forced_run() {
        let spaces = interval_spaces(16);
        let system = log_system();
        let ev = Evolution::new(&spaces, &system);
        let f = spaces.domain().field_from_fn(|x, _| 0.2 * (std::f64::consts::PI * x).cos());
        let mut state = random_state(&spaces, 0.3, 2e-3, 0.0, 21);
        for _ in 0..20 {
            let (next, _) = ev.step(&state, &f).unwrap();
            let margin = ev.energy_margin(&state, &next, &f).unwrap();
            assert!(margin >= -1e-8, "margin {margin}");
            state = next;
        }
    }

    #[test]
    fn subdifferential_monotonicity() {
        // The convex part of the reaction (elliptic pair plus projected
        // regularized graph pair) is monotone in the weighted inner product.
        let spaces = interval_spaces(12);
        let system = log_system();
        let ev = Evolution::new(&spaces, &system);
        let eps = 0.2;
        let m0 = 0.1;
        let grad = |v: &CoupledField| -> CoupledField {
            let dom = spaces.domain();
            let av = dom.apply_stiffness(v).unwrap();
            let u = dom.lift(v.bulk.add_scalar(m0));
            let beta = ev.yosida_pair(&u, eps).unwrap();
            av.add(&spaces.project(&beta))
        };
        for s in 0..20 {
            let v1 = random_state(&spaces, eps, 1e-3, m0, 300 + s).v;
            let v2 = random_state(&spaces, eps, 1e-3, m0, 600 + s).v;
            let d = v1.sub(&v2);
            let g = grad(&v1).sub(&grad(&v2));
            assert!(spaces.domain().inner_h(&g, &d) >= -1e-11);
        }
    }

    #[test]
    fn newton_system_viscous_coercivity() {
        // With the perturbation switched off, the primal Schur operator
        // (viscous mass + inverse-duality mass + stiffness + monotone
        // reaction) has generalized eigenvalues at least eps/dt in the
        // weighted inner product, restricted to mean-free fields.
        let spaces = interval_spaces(8);
        let mut system = log_system();
        system.bulk_pert = PerturbationMode::Raw(LipschitzPerturbation::linear(0.0).unwrap());
        system.surf_pert = PerturbationMode::Raw(LipschitzPerturbation::linear(0.0).unwrap());
        let ev = Evolution::new(&spaces, &system);
        let dom = spaces.domain();
        let n = dom.n_bulk;
        let (eps, dt, m0) = (0.2, 1e-2, 0.1);
        let state = random_state(&spaces, eps, dt, m0, 77);
        let u = dom.lift(state.v.bulk.add_scalar(m0));

        let mass = spaces.mass_diag().clone();
        let mut jac = spaces.stiffness_matrix().clone();
        for i in 0..n {
            jac[(i, i)] += eps / dt * mass[i]
                + dom.bulk_weights[i] * ev.system.bulk_graph.yosida_slope(eps, u.bulk[i]).unwrap();
        }
        for (j, &i) in dom.boundary_nodes.iter().enumerate() {
            jac[(i, i)] += dom.surf_weights[j]
                * ev.system.surf_graph.yosida_slope(eps, u.surf[j]).unwrap();
        }
        // Inverse-duality contribution, column by column.
        for k in 0..n {
            let mut e = DVector::zeros(n);
            e[k] = 1.0;
            let pair = spaces.project(&dom.lift(e));
            let w = spaces.duality_solve(&pair).unwrap();
            for i in 0..n {
                jac[(i, k)] += mass[i] * w.bulk[i] / dt;
            }
        }
        // Rayleigh quotients on random mean-free directions.
        let mut rng = StdRng::seed_from_u64(123);
        for _ in 0..50 {
            let x = spaces
                .project(&dom.lift(DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))));
            let jx = &jac * &x.bulk;
            let num: f64 = (0..n).map(|i| jx[i] * x.bulk[i]).sum();
            let den: f64 = (0..n).map(|i| mass[i] * x.bulk[i] * x.bulk[i]).sum();
            assert!(num / den >= eps / dt - 1e-8, "quotient {}", num / den);
        }
    }

    #[test]
    fn one_step_local_order_two() {
        // One backward-Euler step has a local error of order dt^2 against a
        // finely resolved reference; halving dt divides it by about four.
        let spaces = interval_spaces(8);
        let system = prototype_system();
        let ev = Evolution::new(&spaces, &system);
        let f = spaces.domain().field_from_fn(|x, _| 0.5 * (2.0 * x - 1.0));
        // A smooth low mode keeps the dynamics in the asymptotic-step
        // regime; rough data would be dominated by stiff transients.
        let v0 = spaces.project(
            &spaces
                .domain()
                .field_from_fn(|x, _| 0.2 * (std::f64::consts::PI * x).cos()),
        );

        let advance = |dt: f64, n: usize| -> CoupledField {
            let mut st = SolverState { v: v0.clone(), t: 0.0, eps: 0.5, dt, m0: 0.0 };
            for _ in 0..n {
                let (next, _) = ev.step(&st, &f).unwrap();
                st = next;
            }
            st.v
        };
        let dt = 0.005;
        let reference = advance(dt / 64.0, 64);
        let e1 = spaces.domain().norm_h(&advance(dt, 1).sub(&reference));
        let reference_half = advance(dt / 64.0, 32);
        let e2 = spaces
            .domain()
            .norm_h(&advance(dt / 2.0, 1).sub(&reference_half));
        let ratio = e1 / e2;
        assert!(
            (2.5..6.0).contains(&ratio),
            "local order ratio {ratio} (e1 = {e1:.3e}, e2 = {e2:.3e})"
        );
    }

    #[test]
    fn custom_graph_steps_through_fd_jacobian() {
        // A custom graph expressing the same law as the indicator-plus-cubic
        // kind must produce the same step through the finite-difference
        // slope fallback.
        let spaces = interval_spaces(8);
        let witness = crate::graphs::CompatibilityWitness { rho: 1.0, c0: 1.0 };
        let cut = || {
            PerturbationMode::Cutoff(
                crate::perturbation::CutoffPerturbation::new(
                    LipschitzPerturbation::linear(-1.0).unwrap(),
                    -1.0,
                    1.0,
                )
                .unwrap(),
            )
        };
        let custom = PotentialSystem {
            bulk_graph: MonotoneGraph::custom(
                std::sync::Arc::new(|r: f64| 0.25 * r.powi(4)),
                std::sync::Arc::new(|r: f64| r * r * r),
                -1.0,
                1.0,
            )
            .unwrap(),
            surf_graph: MonotoneGraph::indicator(-1.0, 1.0).unwrap(),
            witness,
            bulk_pert: cut(),
            surf_pert: cut(),
        };
        let reference = PotentialSystem {
            bulk_graph: MonotoneGraph::indicator_plus_cubic(-1.0, 1.0).unwrap(),
            ..custom.clone()
        };
        let state = random_state(&spaces, 0.4, 1e-3, 0.0, 33);
        let f = spaces.domain().field_from_fn(|x, _| 0.2 * (2.0 * x).cos());
        let (a, _) = Evolution::new(&spaces, &custom).step(&state, &f).unwrap();
        let (b, _) = Evolution::new(&spaces, &reference).step(&state, &f).unwrap();
        assert!(
            a.v.sub(&b.v).linf() < 1e-9,
            "custom vs closed-form step gap {:.3e}",
            a.v.sub(&b.v).linf()
        );
    }

    #[test]
    fn step_failure_is_reported() {
        let spaces = interval_spaces(8);
        let system = log_system();
        let ev = Evolution::new(&spaces, &system).with_newton(NewtonOptions {
            tol: 1e-30,
            max_iters: 2,
        });
        let state = random_state(&spaces, 0.2, 1e-2, 0.0, 4);
        let f = spaces.domain().field_from_fn(|x, _| x);
        match ev.step(&state, &f) {
            Err(Error::StepFailed { residual, .. }) => assert!(residual.is_finite()),
            other => panic!("expected StepFailed, got {other:?}"),
        }
    }

    #[test]
    fn rejects_boundary_mean() {
        let spaces = interval_spaces(8);
        let system = log_system();
        let ev = Evolution::new(&spaces, &system);
        let state = SolverState {
            v: CoupledField::zeros(spaces.domain()),
            t: 0.0,
            eps: 0.1,
            dt: 1e-3,
            m0: 1.0,
        };
        let f = CoupledField::zeros(spaces.domain());
        assert!(matches!(
            ev.step(&state, &f),
            Err(Error::Assumption { label: "M0", .. })
        ));
    }
}
