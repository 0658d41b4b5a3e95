//! Time-periodic orbits of the viscous evolution: the period map, a relaxed
//! Picard iteration on its fixed points (optionally Anderson-mixed), the
//! continuation of the regularization parameter toward zero, and a
//! posteriori verification of the weak formulation along converged orbits.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::diagnostics::EstimateLog;
use crate::domain::{CoupledDomain, CoupledField, TRACE_TOL};
use crate::error::{Error, Result};
use crate::evolution::{Evolution, NewtonOptions, PerturbationMode, PotentialSystem, SolverState, StepReport};
use crate::spaces::{SpaceOps, MEAN_TOL};

/// Tolerance on `|f(0) - f(T)|` for the forcing to count as periodic.
pub const FORCING_PERIOD_TOL: f64 = 1e-12;

/// Spatial profile of the separable forcing.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ProfileKind {
    Uniform,
    /// `x - 1/2` on the interval; the first coordinate on the disc.
    Linear,
    /// `cos(pi x)` on the interval; `cos(pi r)` on the disc.
    Cosine,
}

impl ProfileKind {
    pub fn eval(&self, dom: &CoupledDomain, x: f64, y: f64) -> f64 {
        match (self, dom.kind) {
            (ProfileKind::Uniform, _) => 1.0,
            (ProfileKind::Linear, crate::domain::DomainKind::Interval1D { .. }) => x - 0.5,
            (ProfileKind::Linear, _) => x,
            (ProfileKind::Cosine, crate::domain::DomainKind::Interval1D { .. }) => {
                (std::f64::consts::PI * x).cos()
            }
            (ProfileKind::Cosine, _) => (std::f64::consts::PI * (x * x + y * y).sqrt()).cos(),
        }
    }
}

/// Periodic forcing: zero, a separable sinusoid, or tabulated samples over
/// one period (linearly interpolated, wrapping around).
#[derive(Clone, Debug)]
pub enum Forcing {
    Zero,
    Sinusoid {
        amplitude: f64,
        profile: ProfileKind,
        phase: f64,
    },
    Tabulated {
        times: Vec<f64>,
        fields: Vec<CoupledField>,
    },
}

impl Forcing {
    pub fn eval(&self, dom: &CoupledDomain, period: f64, t: f64) -> CoupledField {
        match self {
            Forcing::Zero => CoupledField::zeros(dom),
            Forcing::Sinusoid {
                amplitude,
                profile,
                phase,
            } => {
                let s = amplitude * (std::f64::consts::TAU * t / period + phase).sin();
                let mut f = dom.field_from_fn(|x, y| profile.eval(dom, x, y));
                f = f.scale(s);
                f
            }
            Forcing::Tabulated { times, fields } => {
                let tau = t.rem_euclid(period);
                // times are validated to start at 0 and end at period.
                let idx = times.partition_point(|&x| x <= tau).clamp(1, times.len() - 1);
                let (t0, t1) = (times[idx - 1], times[idx]);
                let w = if t1 > t0 { (tau - t0) / (t1 - t0) } else { 0.0 };
                CoupledField::axpy(w, &fields[idx].sub(&fields[idx - 1]), &fields[idx - 1])
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ProblemTolerances {
    /// Convergence threshold on the weighted norm of `v0 - map(v0)`.
    pub periodicity: f64,
    pub max_picard: usize,
    /// Relaxation weight of the Picard update.
    pub relaxation: f64,
    /// History depth of Anderson mixing; 0 disables it.
    pub anderson_depth: usize,
    pub newton: NewtonOptions,
}

impl Default for ProblemTolerances {
    fn default() -> Self {
        Self {
            periodicity: 1e-10,
            max_picard: 200,
            relaxation: 1.0,
            anderson_depth: 0,
            newton: NewtonOptions::default(),
        }
    }
}

/// Full description of one periodic problem.
#[derive(Debug)]
pub struct PeriodicProblem {
    pub spaces: Arc<SpaceOps>,
    pub system: PotentialSystem,
    pub forcing: Forcing,
    pub m0: f64,
    pub period: f64,
    pub steps_per_period: usize,
    pub tol: ProblemTolerances,
}

/// One integrated period: states at every grid time (including the initial
/// one), per-step reports, and the estimate log.
#[derive(Debug)]
pub struct Orbit {
    pub states: Vec<SolverState>,
    pub reports: Vec<StepReport>,
    pub log: EstimateLog,
}

/// Result of the fixed-point iteration. `converged` distinguishes a met
/// tolerance from a best-effort iterate; non-convergence is an outcome the
/// caller decides about, not an error.
#[derive(Debug)]
pub struct PeriodicSolution {
    pub eps: f64,
    pub v0: CoupledField,
    pub orbit: Orbit,
    pub residual: f64,
    pub converged: bool,
    pub picard_iters: usize,
    pub history: Vec<PicardRecord>,
}

#[derive(Clone, Copy, Debug)]
pub struct PicardRecord {
    pub iter: usize,
    pub residual: f64,
    /// Regularized energy of the iterate's initial state.
    pub energy: f64,
}

/// Continuation outcome over a decreasing schedule; failed entries are
/// recorded and skipped, keeping the last good warm start.
pub struct ContinuationOutcome {
    pub solutions: Vec<PeriodicSolution>,
    /// Weighted-norm gaps between consecutive converged initial states.
    pub cauchy_diffs: Vec<f64>,
    pub failures: Vec<(f64, String)>,
}

/// A posteriori residuals of the weak formulation along a converged orbit.
#[derive(Clone, Debug)]
pub struct WeakFormReport {
    /// Largest weighted-norm residual of the flow identity.
    pub max_flow_residual: f64,
    /// Largest weighted-norm residual of the potential identity, evaluated
    /// with the raw perturbation and without the viscous rate term.
    pub max_potential_residual: f64,
    /// Largest excess of the distance from `(u, xi)` to the graph over
    /// `eps * scale * |xi|` (per node, recomputed through the resolvent).
    pub max_graph_gap: f64,
    pub slices: usize,
}

impl PeriodicProblem {
    pub fn time_at(&self, k: usize) -> f64 {
        k as f64 * self.period / self.steps_per_period as f64
    }

    pub fn dt(&self) -> f64 {
        self.period / self.steps_per_period as f64
    }

    pub fn forcing_at(&self, t: f64) -> CoupledField {
        self.forcing.eval(self.spaces.domain(), self.period, t)
    }

    /// Structural validation of the problem data: positive period and step
    /// count, periodic forcing, interior prescribed mean, sane tolerances.
    pub fn validate(&self) -> Result<()> {
        if !(self.period > 0.0 && self.period.is_finite()) {
            return Err(Error::Config(format!("period must be positive, got {}", self.period)));
        }
        if self.steps_per_period == 0 {
            return Err(Error::Config("steps_per_period must be at least 1".into()));
        }
        if !(self.tol.relaxation > 0.0 && self.tol.relaxation <= 1.0) {
            return Err(Error::Config(format!(
                "relaxation must lie in (0, 1], got {}",
                self.tol.relaxation
            )));
        }
        let gap = self
            .forcing_at(0.0)
            .sub(&self.forcing_at(self.period))
            .linf();
        if gap > FORCING_PERIOD_TOL {
            return Err(Error::assumption(
                "A1",
                format!("forcing is not periodic: |f(0) - f(period)| = {gap:.3e}"),
            ));
        }
        if let Forcing::Tabulated { times, fields } = &self.forcing {
            if times.len() != fields.len() || times.len() < 2 {
                return Err(Error::Config(
                    "tabulated forcing needs matching times and fields, at least two samples".into(),
                ));
            }
            if times[0] != 0.0 || (times[times.len() - 1] - self.period).abs() > 1e-14 {
                return Err(Error::assumption(
                    "A1",
                    "tabulated forcing must span exactly one period, from 0 to the period",
                ));
            }
            let wrap = fields[0].sub(&fields[fields.len() - 1]).linf();
            if wrap > FORCING_PERIOD_TOL {
                return Err(Error::assumption(
                    "A1",
                    format!("tabulated forcing is not periodic: endpoint gap {wrap:.3e}"),
                ));
            }
        }
        self.system.require_interior_mean(self.m0)?;
        Ok(())
    }

    fn check_initial(&self, v0: &CoupledField) -> Result<()> {
        if !v0.is_finite() {
            return Err(Error::Precondition("initial state is not finite".into()));
        }
        if self.spaces.mean(v0).abs() > MEAN_TOL {
            return Err(Error::Precondition(format!(
                "initial state is not mean-free (mean = {:.3e})",
                self.spaces.mean(v0)
            )));
        }
        let mismatch = v0.trace_mismatch(self.spaces.domain());
        if mismatch > TRACE_TOL {
            return Err(Error::Consistency(format!(
                "initial surface part deviates from the bulk trace by {mismatch:.3e}"
            )));
        }
        Ok(())
    }

    fn evolution(&self) -> Evolution<'_> {
        Evolution::new(&self.spaces, &self.system).with_newton(self.tol.newton)
    }

    /// One grid step with halving on failure: a step that stalls is retried
    /// as 2, 4 or 8 substeps covering the same interval before the failure
    /// is propagated. The returned report belongs to the last accepted
    /// (sub)step; the arrival state sits on the unchanged time grid.
    fn robust_step(
        &self,
        ev: &Evolution,
        state: &SolverState,
        t_from: f64,
        t_to: f64,
    ) -> Result<(SolverState, StepReport)> {
        let f = self.forcing_at(t_to);
        let first = ev.step(state, &f);
        let Err(Error::StepFailed { .. }) = &first else {
            return first;
        };
        for splits in [2usize, 4, 8] {
            let sub_dt = state.dt / splits as f64;
            let mut cur = state.clone();
            cur.dt = sub_dt;
            let mut last = None;
            for j in 1..=splits {
                let t_sub = t_from + (t_to - t_from) * j as f64 / splits as f64;
                let f_sub = self.forcing_at(t_sub);
                match ev.step(&cur, &f_sub) {
                    Ok((next, rep)) => {
                        cur = next;
                        last = Some(rep);
                    }
                    Err(_) => {
                        last = None;
                        break;
                    }
                }
            }
            if let Some(rep) = last {
                cur.dt = state.dt;
                cur.t = t_to;
                return Ok((cur, rep));
            }
        }
        first
    }

    /// Integrates one period and returns the terminal state (the period
    /// map). Step failures propagate with the failing time attached.
    pub fn poincare_map(&self, eps: f64, v0: &CoupledField) -> Result<CoupledField> {
        self.check_initial(v0)?;
        let ev = self.evolution();
        let mut state = SolverState {
            v: v0.clone(),
            t: 0.0,
            eps,
            dt: self.dt(),
            m0: self.m0,
        };
        for k in 0..self.steps_per_period {
            let (next, _) =
                self.robust_step(&ev, &state, self.time_at(k), self.time_at(k + 1))?;
            state = next;
        }
        Ok(state.v)
    }

    /// Integrates one period keeping the whole orbit and its estimate log.
    pub fn integrate_period(&self, eps: f64, v0: &CoupledField) -> Result<Orbit> {
        self.check_initial(v0)?;
        let ev = self.evolution();
        let dt = self.dt();
        let mut log = EstimateLog::new(&ev, eps, dt);
        let mut states = Vec::with_capacity(self.steps_per_period + 1);
        let mut reports = Vec::with_capacity(self.steps_per_period);
        states.push(SolverState {
            v: v0.clone(),
            t: 0.0,
            eps,
            dt,
            m0: self.m0,
        });
        for k in 0..self.steps_per_period {
            let f = self.forcing_at(self.time_at(k + 1));
            let prev = states.last().unwrap().clone();
            let (next, report) =
                self.robust_step(&ev, &prev, self.time_at(k), self.time_at(k + 1))?;
            log.record(&ev, &prev, &next, &f, &report)?;
            states.push(next);
            reports.push(report);
        }
        Ok(Orbit {
            states,
            reports,
            log,
        })
    }

    /// Relaxed Picard iteration on the period map, optionally Anderson
    /// mixed. Returns the best iterate when the budget runs out, flagged
    /// non-converged.
    pub fn fixed_point_solve(&self, eps: f64, v_init: &CoupledField) -> Result<PeriodicSolution> {
        self.validate()?;
        let ev = self.evolution();
        let mut v = self.spaces.project(v_init);
        // Keep the surface part consistent after projection of arbitrary input.
        v = self.spaces.domain().lift(v.bulk.clone());
        v = self.spaces.project(&v);
        self.check_initial(&v)?;

        let mut history = Vec::new();
        let mut best: Option<(CoupledField, f64)> = None;
        let mut mixer = AndersonMixer::new(self.tol.anderson_depth);
        let mut iters = 0usize;

        loop {
            iters += 1;
            let mapped = self.poincare_map(eps, &v)?;
            let residual = self.spaces.domain().norm_h(&v.sub(&mapped));
            let energy = ev.regularized_energy(&SolverState {
                v: v.clone(),
                t: 0.0,
                eps,
                dt: self.dt(),
                m0: self.m0,
            })?;
            history.push(PicardRecord {
                iter: iters,
                residual,
                energy,
            });
            if best.as_ref().map(|(_, r)| residual < *r).unwrap_or(true) {
                best = Some((v.clone(), residual));
            }
            if residual <= self.tol.periodicity {
                let orbit = self.integrate_period(eps, &v)?;
                return Ok(PeriodicSolution {
                    eps,
                    v0: v,
                    orbit,
                    residual,
                    converged: true,
                    picard_iters: iters,
                    history,
                });
            }
            if iters >= self.tol.max_picard {
                let (v_best, residual) = best.unwrap();
                let orbit = self.integrate_period(eps, &v_best)?;
                return Ok(PeriodicSolution {
                    eps,
                    v0: v_best,
                    orbit,
                    residual,
                    converged: false,
                    picard_iters: iters,
                    history,
                });
            }
            let relaxed = CoupledField::axpy(
                self.tol.relaxation,
                &mapped.sub(&v),
                &v,
            );
            let next = mixer.update(&v.bulk, &mapped.sub(&v).bulk, &relaxed.bulk);
            v = self.spaces.project(&self.spaces.domain().lift(next));
        }
    }

    /// Warm-started continuation over a strictly decreasing schedule.
    pub fn epsilon_continuation(&self, schedule: &[f64]) -> Result<ContinuationOutcome> {
        if schedule.is_empty() {
            return Err(Error::Precondition("empty continuation schedule".into()));
        }
        for w in schedule.windows(2) {
            if !(w[1] < w[0]) {
                return Err(Error::Precondition(format!(
                    "continuation schedule must be strictly decreasing, got {} before {}",
                    w[0], w[1]
                )));
            }
        }
        if !(schedule[schedule.len() - 1] > 0.0) {
            return Err(Error::Precondition("schedule entries must be positive".into()));
        }
        let mut warm = CoupledField::zeros(self.spaces.domain());
        let mut solutions: Vec<PeriodicSolution> = Vec::new();
        let mut failures = Vec::new();
        for &eps in schedule {
            match self.fixed_point_solve(eps, &warm) {
                Ok(sol) => {
                    warm = sol.v0.clone();
                    solutions.push(sol);
                }
                Err(e) => {
                    failures.push((eps, e.to_string()));
                }
            }
        }
        let cauchy_diffs = solutions
            .windows(2)
            .map(|w| self.spaces.domain().norm_h(&w[0].v0.sub(&w[1].v0)))
            .collect();
        Ok(ContinuationOutcome {
            solutions,
            cauchy_diffs,
            failures,
        })
    }

    /// Replays the converged orbit for a second period and returns the
    /// largest state gap between the two periods at matching times.
    pub fn replay_gap(&self, sol: &PeriodicSolution) -> Result<f64> {
        let second = self.integrate_period(sol.eps, &sol.orbit.states.last().unwrap().v)?;
        let mut worst = 0.0f64;
        for (a, b) in sol.orbit.states.iter().zip(second.states.iter()) {
            worst = worst.max(self.spaces.domain().norm_h(&a.v.sub(&b.v)));
        }
        Ok(worst)
    }

    /// Evaluates the flow and potential identities of the weak formulation
    /// on every stored slice against the full nodal test basis, plus the
    /// graph-inclusion gap of `(u, xi)` through the resolvent.
    pub fn verify_weak_solution(&self, sol: &PeriodicSolution) -> Result<WeakFormReport> {
        let spaces = &self.spaces;
        let dom = spaces.domain();
        let mass = spaces.mass_diag();
        let s = spaces.stiffness_matrix();
        let n = dom.n_bulk;
        let dt = self.dt();
        let mut max_flow = 0.0f64;
        let mut max_pot = 0.0f64;
        let mut max_gap = f64::NEG_INFINITY;

        let raw_pert = |mode: &PerturbationMode, r: f64| match mode {
            PerturbationMode::Cutoff(c) => c.base.eval(r),
            PerturbationMode::Raw(p) => p.eval(r),
        };

        for k in 1..sol.orbit.states.len() {
            let prev = &sol.orbit.states[k - 1];
            let next = &sol.orbit.states[k];
            let report = &sol.orbit.reports[k - 1];
            let f = self.forcing_at(self.time_at(k));
            let delta = (&next.v.bulk - &prev.v.bulk) / dt;

            // Flow identity: weighted rate plus stiffness of the potential.
            let mut r1 = s * &report.mu.bulk;
            for i in 0..n {
                r1[i] += mass[i] * delta[i];
            }
            let flow = (0..n).map(|i| r1[i] * r1[i] / mass[i]).sum::<f64>().sqrt();
            max_flow = max_flow.max(flow);

            // Potential identity with the raw perturbation and no viscous
            // term: the defect it reports is the regularization residue.
            let u = dom.lift(next.v.bulk.add_scalar(next.m0));
            let xi = &report.xi;
            let mean_xi = spaces.mean(xi);
            let reaction = CoupledField {
                bulk: DVector::from_fn(n, |i, _| {
                    xi.bulk[i] + raw_pert(&self.system.bulk_pert, u.bulk[i]) - f.bulk[i]
                }),
                surf: DVector::from_fn(dom.n_surf, |j, _| {
                    xi.surf[j] + raw_pert(&self.system.surf_pert, u.surf[j]) - f.surf[j]
                }),
            };
            let mut rhs2 = spaces.load_vector(&reaction);
            rhs2 += s * &next.v.bulk;
            for i in 0..n {
                rhs2[i] -= mean_xi * mass[i];
            }
            let mut pot = 0.0;
            for i in 0..n {
                let res = mass[i] * report.mu.bulk[i] - rhs2[i];
                pot += res * res / mass[i];
            }
            max_pot = max_pot.max(pot.sqrt());

            // Graph-inclusion gap through the resolvent.
            let es_bulk = sol.eps * self.system.bulk_graph.resolvent_scale;
            for i in 0..n {
                let j = self.system.bulk_graph.resolvent(sol.eps, u.bulk[i])?;
                let gap = (u.bulk[i] - j).abs() - es_bulk * xi.bulk[i].abs();
                max_gap = max_gap.max(gap);
            }
            let es_surf = sol.eps * self.system.surf_graph.resolvent_scale;
            for jn in 0..dom.n_surf {
                let j = self.system.surf_graph.resolvent(sol.eps, u.surf[jn])?;
                let gap = (u.surf[jn] - j).abs() - es_surf * xi.surf[jn].abs();
                max_gap = max_gap.max(gap);
            }
        }
        Ok(WeakFormReport {
            max_flow_residual: max_flow,
            max_potential_residual: max_pot,
            max_graph_gap: max_gap,
            slices: sol.orbit.states.len() - 1,
        })
    }
}

/// Depth-limited Anderson mixing on the fixed-point residual. With depth 0
/// the relaxed update passes through unchanged.
struct AndersonMixer {
    depth: usize,
    xs: Vec<DVector<f64>>,
    gs: Vec<DVector<f64>>,
}

impl AndersonMixer {
    fn new(depth: usize) -> Self {
        Self {
            depth,
            xs: Vec::new(),
            gs: Vec::new(),
        }
    }

    fn update(
        &mut self,
        x: &DVector<f64>,
        residual: &DVector<f64>,
        relaxed: &DVector<f64>,
    ) -> DVector<f64> {
        if self.depth == 0 {
            return relaxed.clone();
        }
        self.xs.push(x.clone());
        self.gs.push(residual.clone());
        if self.xs.len() > self.depth + 1 {
            self.xs.remove(0);
            self.gs.remove(0);
        }
        let m = self.xs.len() - 1;
        if m == 0 {
            return relaxed.clone();
        }
        let n = x.len();
        let mut dg = DMatrix::zeros(n, m);
        let mut dx = DMatrix::zeros(n, m);
        for c in 0..m {
            dg.set_column(c, &(&self.gs[c + 1] - &self.gs[c]));
            dx.set_column(c, &(&self.xs[c + 1] - &self.xs[c]));
        }
        let gamma = match dg.clone().svd(true, true).solve(residual, 1e-12) {
            Ok(g) => g,
            Err(_) => return relaxed.clone(),
        };
        // x + g - (dx + dg) gamma
        let mut out = x + residual;
        out -= (&dx + &dg) * gamma;
        if out.iter().all(|v| v.is_finite()) {
            out
        } else {
            relaxed.clone()
        }
    }
}
