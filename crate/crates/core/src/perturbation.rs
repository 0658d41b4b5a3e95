//! Lipschitz perturbations, their compactly supported cut-offs, and
//! nonnegative primitives used by the energy diagnostics.
//!
//! The cut-off agrees with the base perturbation on `[lo, hi]`, ramps
//! linearly to zero over one unit on each side and vanishes beyond, which
//! makes it globally bounded and globally Lipschitz. In prototype mode the
//! raw perturbation is used instead and no cut-off is built.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::graphs::ScalarFn;

/// A locally Lipschitz scalar perturbation with a known constant.
#[derive(Clone)]
pub struct LipschitzPerturbation {
    eval: ScalarFn,
    pub lipschitz_const: f64,
}

impl std::fmt::Debug for LipschitzPerturbation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "LipschitzPerturbation(L={})", self.lipschitz_const)
    }
}

impl LipschitzPerturbation {
    pub fn new(eval: ScalarFn, lipschitz_const: f64) -> Result<Self> {
        if !(lipschitz_const > 0.0 && lipschitz_const.is_finite()) {
            return Err(Error::Config(format!(
                "Lipschitz constant must be positive and finite, got {lipschitz_const}"
            )));
        }
        if !eval(0.0).is_finite() {
            return Err(Error::Config("perturbation is not finite at 0".into()));
        }
        Ok(Self {
            eval,
            lipschitz_const,
        })
    }

    /// `r -> slope * r`; a zero slope is allowed (any positive constant is a
    /// valid Lipschitz constant for the zero map).
    pub fn linear(slope: f64) -> Result<Self> {
        let l = if slope.abs() > 0.0 { slope.abs() } else { 1.0 };
        Self::new(Arc::new(move |r| slope * r), l)
    }

    pub fn eval(&self, r: f64) -> f64 {
        (self.eval)(r)
    }

    /// Centered finite-difference slope; exact to rounding for the linear
    /// perturbations shipped in the configs.
    pub fn slope(&self, r: f64) -> f64 {
        let h = 1e-6 * (1.0 + r.abs());
        (self.eval(r + h) - self.eval(r - h)) / (2.0 * h)
    }

    /// Spot-check of the Lipschitz bound on sampled pairs of `[lo, hi]`.
    pub fn validate_on(&self, lo: f64, hi: f64, samples: usize) -> Result<()> {
        let n = samples.max(2);
        let at = |k: usize| lo + (hi - lo) * k as f64 / (n - 1) as f64;
        for i in 0..n {
            for j in (i + 1)..n {
                let (r, s) = (at(i), at(j));
                let gap = (self.eval(r) - self.eval(s)).abs();
                let bound = self.lipschitz_const * (s - r).abs() + 1e-10;
                if gap > bound {
                    return Err(Error::assumption(
                        "A2",
                        format!(
                            "perturbation violates its declared Lipschitz constant {} \
                             between {r} and {s} (|difference| = {gap:.3e})",
                            self.lipschitz_const
                        ),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Five-branch cut-off of a Lipschitz perturbation.
#[derive(Clone, Debug)]
pub struct CutoffPerturbation {
    pub base: LipschitzPerturbation,
    pub lo: f64,
    pub hi: f64,
    /// Global Lipschitz constant: max of the base constant and the two ramp
    /// slopes `|base(lo)|`, `|base(hi)|`.
    pub lipschitz_const: f64,
    val_lo: f64,
    val_hi: f64,
    sup: f64,
}

impl CutoffPerturbation {
    pub fn new(base: LipschitzPerturbation, lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Config(format!(
                "cut-off window must be a bounded interval, got [{lo}, {hi}]"
            )));
        }
        let val_lo = base.eval(lo);
        let val_hi = base.eval(hi);
        if !(val_lo.is_finite() && val_hi.is_finite()) {
            return Err(Error::Config(
                "perturbation is not finite at the cut-off window endpoints".into(),
            ));
        }
        let lipschitz_const = base
            .lipschitz_const
            .max(val_lo.abs())
            .max(val_hi.abs());
        // The supremum over the line is attained on the support; scan the
        // window once at construction (the ramps peak at the window values).
        let mut sup: f64 = val_lo.abs().max(val_hi.abs());
        let n = 2048;
        for k in 0..=n {
            let r = lo + (hi - lo) * k as f64 / n as f64;
            sup = sup.max(base.eval(r).abs());
        }
        Ok(Self {
            base,
            lo,
            hi,
            lipschitz_const,
            val_lo,
            val_hi,
            sup,
        })
    }

    /// Piecewise value: zero outside `[lo-1, hi+1]`, the base value on
    /// `[lo, hi]`, linear ramps between. Continuous by construction.
    pub fn eval(&self, r: f64) -> f64 {
        if r <= self.lo - 1.0 || r >= self.hi + 1.0 {
            0.0
        } else if r < self.lo {
            self.val_lo * (r - self.lo + 1.0)
        } else if r <= self.hi {
            self.base.eval(r)
        } else {
            -self.val_hi * (r - self.hi - 1.0)
        }
    }

    pub fn slope(&self, r: f64) -> f64 {
        if r <= self.lo - 1.0 || r >= self.hi + 1.0 {
            0.0
        } else if r < self.lo {
            self.val_lo
        } else if r <= self.hi {
            self.base.slope(r)
        } else {
            -self.val_hi
        }
    }

    /// Supremum of the absolute value over the line, attained on the
    /// support `[lo-1, hi+1]` and cached at construction.
    pub fn sup_abs(&self) -> f64 {
        self.sup
    }
}

/// Antiderivative of a cut-off perturbation, shifted so that its minimum
/// over the support is zero. Integrals of the primitive composed with any
/// field are then nonnegative, which the step-energy diagnostics rely on.
#[derive(Clone, Debug)]
pub struct Primitive {
    cutoff: CutoffPerturbation,
    /// Cumulative Simpson table over `[lo, hi]` (the ramps are integrated in
    /// closed form).
    table: Arc<Vec<f64>>,
    step: f64,
    shift: f64,
    total: f64,
}

impl Primitive {
    pub fn of_cutoff(cutoff: CutoffPerturbation) -> Self {
        let n = 4096usize;
        let step = (cutoff.hi - cutoff.lo) / n as f64;
        // Cumulative integral of the base over [lo, lo + k*step], composite
        // Simpson on each cell.
        let mut table = Vec::with_capacity(n + 1);
        table.push(0.0);
        let mut acc = 0.0;
        for k in 0..n {
            let a = cutoff.lo + k as f64 * step;
            let b = a + step;
            let m = 0.5 * (a + b);
            acc += step / 6.0
                * (cutoff.base.eval(a) + 4.0 * cutoff.base.eval(m) + cutoff.base.eval(b));
            table.push(acc);
        }
        let mut prim = Self {
            cutoff,
            table: Arc::new(table),
            step,
            shift: 0.0,
            total: 0.0,
        };
        prim.total = prim.raw(prim.cutoff.hi + 1.0);
        // Normalize: make the minimum over the support zero.
        let mut min = f64::INFINITY;
        let m = 8192;
        let lo = prim.cutoff.lo - 1.0;
        let span = prim.cutoff.hi + 1.0 - lo;
        for k in 0..=m {
            let r = lo + span * k as f64 / m as f64;
            min = min.min(prim.raw(r));
        }
        prim.shift = -min;
        prim
    }

    /// Unshifted integral from the left support edge `lo - 1`.
    fn raw(&self, r: f64) -> f64 {
        let c = &self.cutoff;
        if r <= c.lo - 1.0 {
            return 0.0;
        }
        // Lower ramp: val_lo * (r - lo + 1), integrates to a square.
        let ramp_lo = |x: f64| 0.5 * c.val_lo * (x - c.lo + 1.0).powi(2);
        if r <= c.lo {
            return ramp_lo(r);
        }
        let mut acc = ramp_lo(c.lo);
        if r <= c.hi {
            return acc + self.middle(r);
        }
        acc += self.middle(c.hi);
        // Upper ramp: -val_hi * (x - hi - 1).
        let ramp_hi =
            |x: f64| -0.5 * c.val_hi * ((x - c.hi - 1.0).powi(2) - 1.0);
        if r <= c.hi + 1.0 {
            acc + ramp_hi(r)
        } else {
            acc + ramp_hi(c.hi + 1.0)
        }
    }

    /// Integral of the base over `[lo, r]` for `r` inside the window: table
    /// lookup plus a Simpson correction on the partial cell.
    fn middle(&self, r: f64) -> f64 {
        let c = &self.cutoff;
        let x = ((r - c.lo) / self.step).clamp(0.0, self.table.len() as f64 - 1.0);
        let k = (x.floor() as usize).min(self.table.len() - 2);
        let a = c.lo + k as f64 * self.step;
        let mut acc = self.table[k];
        if r > a {
            let m = 0.5 * (a + r);
            acc += (r - a) / 6.0
                * (c.base.eval(a) + 4.0 * c.base.eval(m) + c.base.eval(r));
        }
        acc
    }

    pub fn eval(&self, r: f64) -> f64 {
        self.shift + self.raw(r)
    }
}
