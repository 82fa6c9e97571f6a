//! Sequence-space diagnostics for the weak ideals L_{p,∞}, the Lorentz
//! ideal M_{1,∞}, eigenvalue partial sums, and the logarithmic-fit test for
//! universal measurability.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{geometric_points, linear_fit, linear_fit_real};
use crate::operators::{
    eigenvalues, singular_values, tol, Operator, SingularSequence, Spectrum, C64,
};

/// Ratio of the geometric sampling grid used by the log fits.
pub const FIT_GRID_RATIO: f64 = 1.189_207_115_002_721; // 2^(1/4)

/// Default measurability tolerance (absolute residual) for acceptance runs.
pub const DEFAULT_MEASURABILITY_TOL: f64 = 0.5;

/// A slope counts as zero when |z| is below this fraction of the tolerance.
pub const ZERO_SLOPE_FRACTION: f64 = 0.2;

/// sup_k (k+1)^{1/p} μ(k).
pub fn quasi_norm_pinf(mu: &SingularSequence, p: f64) -> Result<f64> {
    if p <= 0.0 || !p.is_finite() {
        return Err(Error::Contract(format!(
            "exponent p must be positive, got {p}"
        )));
    }
    Ok(mu
        .values()
        .iter()
        .enumerate()
        .map(|(k, m)| ((k + 1) as f64).powf(1.0 / p) * m)
        .fold(0.0, f64::max))
}

/// sup_{n<N} (Σ_{k≤n} μ(k)) / log(2+n).
pub fn lorentz_norm_m1inf(mu: &SingularSequence) -> f64 {
    let mut s = 0.0;
    let mut best: f64 = 0.0;
    for (n, m) in mu.values().iter().enumerate() {
        s += m;
        best = best.max(s / (2.0 + n as f64).ln());
    }
    best
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HolderReport {
    /// 1/p = Σ 1/p_m.
    pub p: f64,
    pub product_quasi_norm: f64,
    pub factor_norm_product: f64,
    /// Constant of the weak-type Hölder inequality, m^{1/p} for m factors.
    pub constant: f64,
    pub observed_ratio: f64,
    pub pass: bool,
}

/// Checks ‖A₁⋯A_m‖_{p,∞} ≤ C ∏‖A_k‖_{p_k,∞} with 1/p = Σ 1/p_k.
pub fn holder_product_check(ops: &[(Operator, f64)]) -> Result<HolderReport> {
    let Some((first, _)) = ops.first() else {
        return Err(Error::Contract(
            "holder_product_check needs at least one factor".into(),
        ));
    };
    let mut product = Operator::identity(first.dim());
    let mut inv_p = 0.0;
    let mut factor_norm_product = 1.0;
    for (op, pk) in ops {
        product = product.try_mul(op)?;
        inv_p += 1.0 / pk;
        factor_norm_product *= quasi_norm_pinf(&singular_values(op)?, *pk)?;
    }
    let p = 1.0 / inv_p;
    let product_quasi_norm = quasi_norm_pinf(&singular_values(&product)?, p)?;
    let constant = (ops.len() as f64).powf(1.0 / p);
    let observed_ratio = if factor_norm_product > 0.0 {
        product_quasi_norm / factor_norm_product
    } else {
        0.0
    };
    let pass = product_quasi_norm <= constant * factor_norm_product * (1.0 + 1e-12) + 1e-300;
    Ok(HolderReport {
        p,
        product_quasi_norm,
        factor_norm_product,
        constant,
        observed_ratio,
        pass,
    })
}

/// n ↦ Σ_{k≤n} λ(k,T) together with the tie-group structure of the terms.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PartialSumSeries {
    sums: Vec<C64>,
    /// `group_end[n]` is true when term n is the last of its equal-modulus group.
    group_end: Vec<bool>,
    source_label: String,
}

impl PartialSumSeries {
    /// Cumulative sums of modulus-ordered terms.
    pub fn from_terms(terms: &[C64], source_label: impl Into<String>) -> Self {
        let mut sums = Vec::with_capacity(terms.len());
        let mut acc = C64::new(0.0, 0.0);
        for t in terms {
            acc += t;
            sums.push(acc);
        }
        let group_end = (0..terms.len())
            .map(|n| match terms.get(n + 1) {
                None => true,
                Some(next) => {
                    let (a, b) = (terms[n].norm(), next.norm());
                    // zero terms leave the sums unchanged, so any of them can end a group
                    a.max(b) == 0.0 || (a - b).abs() > tol::TIE * a.max(b)
                }
            })
            .collect();
        Self {
            sums,
            group_end,
            source_label: source_label.into(),
        }
    }

    /// A series given directly by its values; every index is its own group.
    pub fn from_sums(sums: Vec<C64>, source_label: impl Into<String>) -> Self {
        let group_end = vec![true; sums.len()];
        Self {
            sums,
            group_end,
            source_label: source_label.into(),
        }
    }

    pub fn from_spectrum(spectrum: &Spectrum, source_label: impl Into<String>) -> Self {
        Self::from_terms(spectrum.values(), source_label)
    }

    pub fn sums(&self) -> &[C64] {
        &self.sums
    }

    pub fn len(&self) -> usize {
        self.sums.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sums.is_empty()
    }

    pub fn source_label(&self) -> &str {
        &self.source_label
    }

    /// Last index of the tie group containing n.
    pub fn group_end_at_or_after(&self, n: usize) -> usize {
        let mut m = n;
        while m + 1 < self.sums.len() && !self.group_end[m] {
            m += 1;
        }
        m
    }

    /// Last index of the previous tie group, if any.
    fn group_end_before(&self, n: usize) -> Option<usize> {
        (0..n).rev().find(|&m| self.group_end[m])
    }

    /// CSV with columns n, re_sum, im_sum.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "n,re_sum,im_sum")?;
        for (n, s) in self.sums.iter().enumerate() {
            writeln!(w, "{n},{:e},{:e}", s.re, s.im)?;
        }
        Ok(())
    }
}

/// Cumulative eigenvalue sums of T in canonical order.
pub fn eigenvalue_partial_sums(t: &Operator) -> Result<PartialSumSeries> {
    Ok(PartialSumSeries::from_spectrum(&eigenvalues(t)?, t.label()))
}

/// Index range [lo, hi] sampled by the log fits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitWindow {
    pub lo: usize,
    pub hi: usize,
}

impl FitWindow {
    /// [⌈√N⌉, N-1-⌈√N⌉]: drops the head, where the asymptotics have not set
    /// in, and the last √N indices, where truncation perturbs the spectrum.
    pub fn default_for(len: usize) -> Self {
        let r = (len as f64).sqrt().ceil() as usize;
        Self {
            lo: r.max(1),
            hi: len.saturating_sub(1 + r),
        }
    }

    fn dyadic_points(&self) -> usize {
        (0..64)
            .map(|j| 1usize << j)
            .filter(|&d| d >= self.lo && d <= self.hi)
            .count()
    }
}

/// z log(n+1) + c fitted to a partial-sum series.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LogFit {
    pub z: C64,
    pub intercept: C64,
    pub residual_sup: f64,
    pub window: FitWindow,
    pub points: usize,
}

/// Least-squares fit of sums[n] against log(n+1) on a geometric grid inside
/// the window. Grid points are moved to the end of their tie group so the
/// result does not depend on how equal-modulus eigenvalues are ordered.
pub fn log_fit(series: &PartialSumSeries, window: FitWindow) -> Result<LogFit> {
    if window.hi >= series.len() || window.lo > window.hi {
        return Err(Error::DegenerateWindow(format!(
            "window [{}, {}] outside series of length {}",
            window.lo,
            window.hi,
            series.len()
        )));
    }
    if window.dyadic_points() < 3 {
        return Err(Error::DegenerateWindow(format!(
            "window [{}, {}] spans fewer than 3 dyadic points",
            window.lo, window.hi
        )));
    }
    let mut idx: Vec<usize> = Vec::new();
    let raw = geometric_points(window.lo.max(1) as f64, window.hi as f64, FIT_GRID_RATIO)
        .into_iter()
        .map(|x| x.round() as usize)
        .chain(std::iter::once(window.hi));
    for n in raw {
        let end = series.group_end_at_or_after(n);
        let snapped = if end <= window.hi {
            Some(end)
        } else {
            series.group_end_before(n).filter(|&m| m >= window.lo)
        };
        if let Some(m) = snapped {
            if idx.last() != Some(&m) && !idx.contains(&m) {
                idx.push(m);
            }
        }
    }
    idx.sort_unstable();
    if idx.len() < 3 {
        return Err(Error::DegenerateWindow(format!(
            "only {} distinct tie-group ends in window",
            idx.len()
        )));
    }
    let xs: Vec<f64> = idx.iter().map(|&n| ((n + 1) as f64).ln()).collect();
    let ys: Vec<C64> = idx.iter().map(|&n| series.sums[n]).collect();
    let (z, intercept, residual_sup) = linear_fit(&xs, &ys);
    Ok(LogFit {
        z,
        intercept,
        residual_sup,
        window,
        points: idx.len(),
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum MeasurabilityVerdict {
    /// Σλ = z log(n+1) + O(1) with |z| above the tolerance.
    Measurable {
        z: C64,
        fit: LogFit,
    },
    /// Σλ = O(1): the operator behaves like an element of the commutator subspace.
    CommutatorSubspace {
        fit: LogFit,
    },
    Inconclusive {
        fit: LogFit,
        reason: String,
    },
}

impl MeasurabilityVerdict {
    pub fn fit(&self) -> &LogFit {
        match self {
            Self::Measurable { fit, .. }
            | Self::CommutatorSubspace { fit }
            | Self::Inconclusive { fit, .. } => fit,
        }
    }

    /// The value every normalised trace would take: z, 0, or None.
    pub fn value(&self) -> Option<C64> {
        match self {
            Self::Measurable { z, .. } => Some(*z),
            Self::CommutatorSubspace { .. } => Some(C64::new(0.0, 0.0)),
            Self::Inconclusive { .. } => None,
        }
    }

    pub fn is_measurable(&self) -> bool {
        !matches!(self, Self::Inconclusive { .. })
    }
}

/// Decision rule on a partial-sum series with the default window.
pub fn measurability_of_series(
    series: &PartialSumSeries,
    tolerance: f64,
) -> Result<MeasurabilityVerdict> {
    let fit = log_fit(series, FitWindow::default_for(series.len()))?;
    let zabs = fit.z.norm();
    Ok(if fit.residual_sup <= tolerance && zabs > tolerance {
        MeasurabilityVerdict::Measurable { z: fit.z, fit }
    } else if fit.residual_sup <= tolerance && zabs <= ZERO_SLOPE_FRACTION * tolerance {
        MeasurabilityVerdict::CommutatorSubspace { fit }
    } else {
        let reason = if fit.residual_sup > tolerance {
            format!(
                "residual {:.3e} above tolerance {tolerance}",
                fit.residual_sup
            )
        } else {
            format!("slope |z| = {zabs:.3e} neither zero nor above tolerance {tolerance}")
        };
        MeasurabilityVerdict::Inconclusive { fit, reason }
    })
}

pub fn universal_measurability_test(t: &Operator, tolerance: f64) -> Result<MeasurabilityVerdict> {
    measurability_of_series(&eigenvalue_partial_sums(t)?, tolerance)
}

/// Log–log slope of μ(k) against k+1 over the default window, negated.
/// Infinite when μ vanishes inside the window (finite rank).
pub fn decay_exponent(mu: &SingularSequence) -> f64 {
    let w = FitWindow::default_for(mu.len());
    if w.hi <= w.lo {
        return f64::NAN;
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for x in geometric_points(w.lo as f64, w.hi as f64, FIT_GRID_RATIO) {
        let k = x.round() as usize;
        let m = mu.values()[k];
        if m <= 0.0 {
            return f64::INFINITY;
        }
        xs.push(((k + 1) as f64).ln());
        ys.push(m.ln());
    }
    if xs.len() < 2 {
        return f64::NAN;
    }
    -linear_fit_real(&xs, &ys).0
}

/// Tolerance on fitted decay exponents in membership verdicts.
pub const DECAY_TOL: f64 = 0.05;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IdealDiagnostics {
    pub p: f64,
    pub quasi_norm_pinf: f64,
    pub lorentz_norm: f64,
    pub fitted_decay_exponent: f64,
    pub verdicts: BTreeMap<String, bool>,
}

/// Membership diagnostics of a singular sequence at exponent p.
///
/// * `weak_lp`: decay exponent ≥ 1/p - 0.05.
/// * `l1inf`: decay exponent ≥ 1 - 0.05.
/// * `m1inf`: the Lorentz ratio Σμ/log(2+n) at the end of the window is at
///   most 10% above its supremum up to the start of the window.
pub fn diagnose(mu: &SingularSequence, p: f64) -> Result<IdealDiagnostics> {
    let quasi = quasi_norm_pinf(mu, p)?;
    let lorentz = lorentz_norm_m1inf(mu);
    let decay = decay_exponent(mu);
    let mut verdicts = BTreeMap::new();
    verdicts.insert("weak_lp".to_string(), decay >= 1.0 / p - DECAY_TOL);
    verdicts.insert("l1inf".to_string(), decay >= 1.0 - DECAY_TOL);
    verdicts.insert("m1inf".to_string(), lorentz_ratio_stable(mu));
    Ok(IdealDiagnostics {
        p,
        quasi_norm_pinf: quasi,
        lorentz_norm: lorentz,
        fitted_decay_exponent: decay,
        verdicts,
    })
}

fn lorentz_ratio_stable(mu: &SingularSequence) -> bool {
    let w = FitWindow::default_for(mu.len());
    if w.hi <= w.lo {
        return false;
    }
    let mut s = 0.0;
    let mut head_sup: f64 = 0.0;
    let mut end = 0.0;
    for (n, m) in mu.values().iter().enumerate().take(w.hi + 1) {
        s += m;
        let r = s / (2.0 + n as f64).ln();
        if n <= w.lo {
            head_sup = head_sup.max(r);
        }
        end = r;
    }
    end <= 1.1 * head_sup + 1e-300
}

/// max over the grid of n_{|T|}(1/n) / n^p; bounded when μ(k) = O(k^{-1/p}).
pub fn counting_growth(mu: &SingularSequence, p: f64, grid: &[f64]) -> f64 {
    grid.iter()
        .map(|&n| {
            let count = mu.values().iter().take_while(|&&m| m > 1.0 / n).count();
            count as f64 / n.powf(p)
        })
        .fold(0.0, f64::max)
}
