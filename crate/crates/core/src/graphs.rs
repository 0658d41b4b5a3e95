//! Maximal monotone graphs with resolvents, Yosida approximations and
//! Moreau-Yosida envelopes.
//!
//! A graph is described by a convex primitive `p` with `p(0) = 0`; the graph
//! itself is the subdifferential of `p`. Four closed-form kinds cover the
//! shipped potentials (logarithmic, interval indicator, indicator plus cubic,
//! plain cubic); `Custom` takes user closures and falls back to bisection.
//!
//! Every evaluation is a pure function of immutable data, so a graph can be
//! shared freely across threads.

use std::sync::Arc;

use crate::error::{Error, Result};

/// Scalar function object usable from any thread.
pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum GraphKind {
    /// `(gain/2) * ln((1+r)/(1-r))` on the open interval (-1, 1).
    Logarithmic { gain: f64 },
    /// Subdifferential of the indicator of `[lo, hi]`.
    IndicatorSubdifferential { lo: f64, hi: f64 },
    /// Indicator subdifferential plus `r^3` on `[lo, hi]`.
    IndicatorPlusCubic { lo: f64, hi: f64 },
    /// `r^3` on the whole line (prototype double-well derivative part).
    Cubic,
    /// User-supplied primitive and minimal section on `[lo, hi]`.
    /// Maximal monotonicity is asserted by the caller, not verified.
    Custom {
        primitive: ScalarFn,
        section: ScalarFn,
        lo: f64,
        hi: f64,
    },
}

impl std::fmt::Debug for GraphKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GraphKind::Logarithmic { gain } => write!(f, "Logarithmic(gain={gain})"),
            GraphKind::IndicatorSubdifferential { lo, hi } => {
                write!(f, "IndicatorSubdifferential({lo}, {hi})")
            }
            GraphKind::IndicatorPlusCubic { lo, hi } => {
                write!(f, "IndicatorPlusCubic({lo}, {hi})")
            }
            GraphKind::Cubic => write!(f, "Cubic"),
            GraphKind::Custom { lo, hi, .. } => write!(f, "Custom({lo}, {hi})"),
        }
    }
}

/// A maximal monotone graph together with the scale factor that multiplies
/// the regularization parameter inside its resolvent (1 for the bulk graph,
/// the compatibility constant `rho` for the boundary graph).
#[derive(Clone, Debug)]
pub struct MonotoneGraph {
    pub kind: GraphKind,
    /// Lower endpoint of the closure of the effective domain (may be -inf).
    pub domain_lo: f64,
    /// Upper endpoint of the closure of the effective domain (may be +inf).
    pub domain_hi: f64,
    pub resolvent_scale: f64,
}

/// Constants of the bulk/boundary compatibility inequality
/// `|minimal_section_bulk(r)| <= rho * |minimal_section_surface(r)| + c0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CompatibilityWitness {
    pub rho: f64,
    pub c0: f64,
}

/// Outcome of a compatibility sweep.
#[derive(Clone, Debug)]
pub struct CompatibilityReport {
    pub holds: bool,
    /// Smallest slack `rho*|surface| + c0 - |bulk|` over all checks;
    /// negative means a violation.
    pub worst_margin: f64,
    pub failures: Vec<CompatibilityFailure>,
}

#[derive(Clone, Debug)]
pub struct CompatibilityFailure {
    pub sample: f64,
    /// `None` for the graph inequality, `Some(eps)` for the regularized one.
    pub eps: Option<f64>,
    pub margin: f64,
}

const COMPAT_SLACK: f64 = 1e-10;

impl MonotoneGraph {
    pub fn logarithmic(gain: f64) -> Result<Self> {
        if !(gain > 0.0 && gain.is_finite()) {
            return Err(Error::Config(format!(
                "logarithmic potential gain must be positive and finite, got {gain}"
            )));
        }
        Ok(Self {
            kind: GraphKind::Logarithmic { gain },
            domain_lo: -1.0,
            domain_hi: 1.0,
            resolvent_scale: 1.0,
        })
    }

    pub fn indicator(lo: f64, hi: f64) -> Result<Self> {
        Self::check_interval(lo, hi)?;
        Ok(Self {
            kind: GraphKind::IndicatorSubdifferential { lo, hi },
            domain_lo: lo,
            domain_hi: hi,
            resolvent_scale: 1.0,
        })
    }

    pub fn indicator_plus_cubic(lo: f64, hi: f64) -> Result<Self> {
        Self::check_interval(lo, hi)?;
        Ok(Self {
            kind: GraphKind::IndicatorPlusCubic { lo, hi },
            domain_lo: lo,
            domain_hi: hi,
            resolvent_scale: 1.0,
        })
    }

    pub fn cubic() -> Self {
        Self {
            kind: GraphKind::Cubic,
            domain_lo: f64::NEG_INFINITY,
            domain_hi: f64::INFINITY,
            resolvent_scale: 1.0,
        }
    }

    pub fn custom(primitive: ScalarFn, section: ScalarFn, lo: f64, hi: f64) -> Result<Self> {
        Self::check_interval(lo, hi)?;
        if primitive(0.0).abs() > 1e-12 {
            return Err(Error::Config(
                "custom graph primitive must vanish at the origin".into(),
            ));
        }
        Ok(Self {
            kind: GraphKind::Custom {
                primitive,
                section,
                lo,
                hi,
            },
            domain_lo: lo,
            domain_hi: hi,
            resolvent_scale: 1.0,
        })
    }

    fn check_interval(lo: f64, hi: f64) -> Result<()> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Config(format!(
                "graph domain must be a bounded interval with lo < hi, got [{lo}, {hi}]"
            )));
        }
        if !(lo..=hi).contains(&0.0) {
            // The primitive is required to vanish at the origin, so the
            // origin must belong to the domain.
            return Err(Error::Config(format!(
                "graph domain [{lo}, {hi}] must contain 0"
            )));
        }
        Ok(())
    }

    pub fn with_scale(mut self, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Config(format!(
                "resolvent scale must be positive and finite, got {scale}"
            )));
        }
        self.resolvent_scale = scale;
        Ok(self)
    }

    /// True when the domain of the graph is a bounded interval.
    pub fn has_bounded_domain(&self) -> bool {
        self.domain_lo.is_finite() && self.domain_hi.is_finite()
    }

    /// Membership in the effective domain of the graph itself. The interval
    /// of the logarithmic graph is open; the indicator ones are closed.
    pub fn domain_contains(&self, r: f64) -> bool {
        match &self.kind {
            GraphKind::Logarithmic { .. } => r > self.domain_lo && r < self.domain_hi,
            _ => r >= self.domain_lo && r <= self.domain_hi,
        }
    }

    /// Convex primitive `p(r)`; `+inf` outside the domain of `p`.
    pub fn primitive(&self, r: f64) -> f64 {
        match &self.kind {
            GraphKind::Logarithmic { gain } => {
                if !(-1.0..=1.0).contains(&r) {
                    f64::INFINITY
                } else {
                    // (1 +/- r) ln(1 +/- r) extended by continuity at the endpoints.
                    let up = if r == -1.0 {
                        0.0
                    } else {
                        (1.0 + r) * (1.0 + r).ln()
                    };
                    let dn = if r == 1.0 {
                        0.0
                    } else {
                        (1.0 - r) * (1.0 - r).ln()
                    };
                    0.5 * gain * (up + dn)
                }
            }
            GraphKind::IndicatorSubdifferential { lo, hi } => {
                if r < *lo || r > *hi {
                    f64::INFINITY
                } else {
                    0.0
                }
            }
            GraphKind::IndicatorPlusCubic { lo, hi } => {
                if r < *lo || r > *hi {
                    f64::INFINITY
                } else {
                    0.25 * r.powi(4)
                }
            }
            GraphKind::Cubic => 0.25 * r.powi(4),
            GraphKind::Custom { primitive, lo, hi, .. } => {
                if r < *lo || r > *hi {
                    f64::INFINITY
                } else {
                    primitive(r)
                }
            }
        }
    }

    /// Element of the graph at `r` with smallest absolute value.
    pub fn minimal_section(&self, r: f64) -> Result<f64> {
        if !self.domain_contains(r) {
            return Err(Error::numeric(
                "minimal_section",
                format!("{r} lies outside the graph domain [{}, {}]", self.domain_lo, self.domain_hi),
            ));
        }
        Ok(match &self.kind {
            GraphKind::Logarithmic { gain } => 0.5 * gain * ((1.0 + r).ln() - (1.0 - r).ln()),
            GraphKind::IndicatorSubdifferential { .. } => 0.0,
            // At an endpoint the section set is a half line starting at r^3;
            // the endpoint value itself has the smallest modulus because the
            // domain contains the origin.
            GraphKind::IndicatorPlusCubic { .. } => r * r * r,
            GraphKind::Cubic => r * r * r,
            GraphKind::Custom { section, .. } => section(r),
        })
    }

    #[inline]
    fn eps_scaled(&self, eps: f64) -> f64 {
        eps * self.resolvent_scale
    }

    /// Resolvent: the unique `s` with `s + eps*scale*g(s)` containing `r`.
    pub fn resolvent(&self, eps: f64, r: f64) -> Result<f64> {
        Ok(self.solve(eps, r)?.0)
    }

    /// Yosida approximation `(r - resolvent(r)) / (eps*scale)`.
    pub fn yosida(&self, eps: f64, r: f64) -> Result<f64> {
        Ok(self.solve(eps, r)?.1)
    }

    /// Resolvent and Yosida value in one solve.
    pub fn resolvent_yosida(&self, eps: f64, r: f64) -> Result<(f64, f64)> {
        self.solve(eps, r)
    }

    /// Derivative of the Yosida approximation with respect to `r`, obtained
    /// from implicit differentiation of the resolvent equation.
    pub fn yosida_slope(&self, eps: f64, r: f64) -> Result<f64> {
        let es = self.eps_scaled(eps);
        match &self.kind {
            GraphKind::IndicatorSubdifferential { lo, hi } => {
                Ok(if r < *lo || r > *hi { 1.0 / es } else { 0.0 })
            }
            GraphKind::IndicatorPlusCubic { lo, hi } => {
                let (j, _) = self.solve(eps, r)?;
                if (j <= *lo && r < *lo) || (j >= *hi && r > *hi) {
                    Ok(1.0 / es)
                } else {
                    Ok(3.0 * j * j / (1.0 + 3.0 * es * j * j))
                }
            }
            GraphKind::Cubic => {
                let (j, _) = self.solve(eps, r)?;
                Ok(3.0 * j * j / (1.0 + 3.0 * es * j * j))
            }
            GraphKind::Logarithmic { gain } => {
                let (j, _) = self.solve(eps, r)?;
                Ok(1.0 / ((1.0 - j * j) / gain + es))
            }
            GraphKind::Custom { .. } => {
                let h = 1e-6 * (1.0 + r.abs());
                let yp = self.yosida(eps, r + h)?;
                let ym = self.yosida(eps, r - h)?;
                Ok((yp - ym) / (2.0 * h))
            }
        }
    }

    /// Moreau-Yosida envelope
    /// `|r - J(r)|^2 / (2*eps*scale) + primitive(J(r))`.
    pub fn moreau_yosida(&self, eps: f64, r: f64) -> Result<f64> {
        let es = self.eps_scaled(eps);
        let (j, y) = self.solve(eps, r)?;
        // r - j == es * y by the resolvent equation; the product form avoids
        // the cancellation in r - j when the mismatch is small.
        let quad = 0.5 * es * y * y;
        let p = self.primitive(j);
        // Root-finding can park j a rounding error outside a closed domain.
        let p = if p.is_finite() {
            p
        } else {
            self.primitive(j.clamp(self.domain_lo, self.domain_hi))
        };
        Ok(quad + p)
    }

    /// Core solve of `s + eps*scale*g(s) = r`, returning `(resolvent, yosida)`.
    fn solve(&self, eps: f64, r: f64) -> Result<(f64, f64)> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::numeric(
                "resolvent",
                format!("regularization parameter must be positive, got {eps}"),
            ));
        }
        if !r.is_finite() {
            return Err(Error::numeric("resolvent", format!("argument {r} is not finite")));
        }
        // The primitive vanishes at the origin, so 0 always resolves to 0.
        if r == 0.0 {
            return Ok((0.0, 0.0));
        }
        let es = self.eps_scaled(eps);
        match &self.kind {
            GraphKind::IndicatorSubdifferential { lo, hi } => {
                let j = r.clamp(*lo, *hi);
                Ok((j, (r - j) / es))
            }
            GraphKind::Cubic => {
                let j = cubic_resolvent(es, r);
                Ok((j, j * j * j))
            }
            GraphKind::IndicatorPlusCubic { lo, hi } => {
                let s = cubic_resolvent(es, r);
                let j = s.clamp(*lo, *hi);
                if j == s {
                    Ok((j, j * j * j))
                } else {
                    Ok((j, (r - j) / es))
                }
            }
            GraphKind::Logarithmic { gain } => {
                let (j, w) = log_resolvent(*gain, es, r)?;
                Ok((j, w))
            }
            GraphKind::Custom { section, lo, hi, .. } => {
                let (j, interior) = bisect_resolvent(section, *lo, *hi, es, r)?;
                let y = if interior { section(j) } else { (r - j) / es };
                Ok((j, y))
            }
        }
    }
}

/// Root of `s + es*s^3 = r` (strictly increasing, unique real root).
fn cubic_resolvent(es: f64, r: f64) -> f64 {
    if r == 0.0 {
        return 0.0;
    }
    // The root shares the sign of r and |root| <= |r|.
    let mut lo = if r > 0.0 { 0.0 } else { r };
    let mut hi = if r > 0.0 { r } else { 0.0 };
    let mut s = r / (1.0 + es * r * r); // decent starting guess
    for _ in 0..100 {
        let f = s + es * s * s * s - r;
        if f > 0.0 {
            hi = s;
        } else {
            lo = s;
        }
        let df = 1.0 + 3.0 * es * s * s;
        let mut next = s - f / df;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - s).abs() <= 1e-16 * (1.0 + s.abs()) {
            return next;
        }
        s = next;
    }
    s
}

/// Resolvent of the logarithmic graph, solved in the graph-value variable:
/// with `w = g(s)` the equation becomes `tanh(w/gain) + es*w = r`, which
/// stays well conditioned however hard the argument saturates. Returns
/// `(s, w)`; the Yosida value equals `w` exactly.
fn log_resolvent(gain: f64, es: f64, r: f64) -> Result<(f64, f64)> {
    let f = |w: f64| (w / gain).tanh() + es * w - r;
    // tanh is within (-1,1), so the root lies in this bracket.
    let mut lo = (r - 1.0) / es;
    let mut hi = (r + 1.0) / es;
    let mut w = gain * r / (1.0 + gain * es);
    if !(w > lo && w < hi) {
        w = 0.5 * (lo + hi);
    }
    for _ in 0..200 {
        let fw = f(w);
        if fw == 0.0 {
            return Ok(((w / gain).tanh(), w));
        }
        if fw > 0.0 {
            hi = w;
        } else {
            lo = w;
        }
        let t = (w / gain).tanh();
        let df = (1.0 - t * t) / gain + es;
        let mut next = w - fw / df;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - w).abs() <= 1e-16 * (1.0 + w.abs()) {
            w = next;
            break;
        }
        w = next;
    }
    let fw = f(w);
    if fw.abs() > 1e-10 * (1.0 + r.abs() + es * w.abs()) {
        return Err(Error::numeric(
            "resolvent",
            format!("logarithmic resolvent did not converge at r = {r}, eps*scale = {es} (residual {fw:.3e})"),
        ));
    }
    Ok(((w / gain).tanh(), w))
}

/// Safeguarded bisection for custom graphs: solves
/// `s + es*section(s) = r` over the closure of the domain.
fn bisect_resolvent(
    section: &ScalarFn,
    lo: f64,
    hi: f64,
    es: f64,
    r: f64,
) -> Result<(f64, bool)> {
    let margin = 1e-14 * (1.0 + lo.abs().max(hi.abs()));
    let a = lo + margin;
    let b = hi - margin;
    let h = |s: f64| s + es * section(s) - r;
    let ha = h(a);
    let hb = h(b);
    if !ha.is_finite() || !hb.is_finite() {
        return Err(Error::numeric(
            "resolvent",
            format!("custom section not finite near the domain endpoints at r = {r}"),
        ));
    }
    // Outside the bracket the indicator part of the graph absorbs the
    // mismatch: clamp to the endpoint.
    if ha >= 0.0 {
        return Ok((lo, false));
    }
    if hb <= 0.0 {
        return Ok((hi, false));
    }
    let (mut a, mut b) = (a, b);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        let hm = h(mid);
        if !hm.is_finite() {
            return Err(Error::numeric(
                "resolvent",
                format!("custom section not finite at {mid}"),
            ));
        }
        if hm > 0.0 {
            b = mid;
        } else {
            a = mid;
        }
        if b - a <= 1e-13 {
            return Ok((0.5 * (a + b), true));
        }
    }
    Err(Error::numeric(
        "resolvent",
        format!("bisection on custom graph failed to reach tolerance at r = {r}, eps*scale = {es}"),
    ))
}

/// Sweeps the compatibility inequality in both its graph form (on samples
/// inside the boundary-graph domain) and its regularized form (on all
/// samples, for each entry of `eps_values`). The two graphs are evaluated
/// with their own resolvent scales, so the boundary graph must carry
/// `witness.rho` as its scale for the regularized check to be meaningful.
pub fn check_compatibility(
    bulk: &MonotoneGraph,
    surface: &MonotoneGraph,
    witness: &CompatibilityWitness,
    samples: &[f64],
    eps_values: &[f64],
) -> CompatibilityReport {
    let mut worst = f64::INFINITY;
    let mut failures = Vec::new();
    for &r in samples {
        if surface.domain_contains(r) && bulk.domain_contains(r) {
            if let (Ok(bs), Ok(ss)) = (bulk.minimal_section(r), surface.minimal_section(r)) {
                let margin = witness.rho * ss.abs() + witness.c0 - bs.abs();
                if margin < worst {
                    worst = margin;
                }
                if margin < -COMPAT_SLACK {
                    failures.push(CompatibilityFailure {
                        sample: r,
                        eps: None,
                        margin,
                    });
                }
            }
        }
        for &eps in eps_values {
            let (yb, ys) = match (bulk.yosida(eps, r), surface.yosida(eps, r)) {
                (Ok(a), Ok(b)) => (a, b),
                _ => continue,
            };
            let margin = witness.rho * ys.abs() + witness.c0 - yb.abs();
            if margin < worst {
                worst = margin;
            }
            if margin < -COMPAT_SLACK {
                failures.push(CompatibilityFailure {
                    sample: r,
                    eps: Some(eps),
                    margin,
                });
            }
        }
    }
    CompatibilityReport {
        holds: failures.is_empty(),
        worst_margin: worst,
        failures,
    }
}
