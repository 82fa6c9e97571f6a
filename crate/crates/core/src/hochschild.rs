//! Hochschild chains over the model algebras, the boundary b, the operators
//! Ω(c), ch(c) and W_𝒜(c), the Chern character Ch(c) = ½Tr(ch(c)), and the
//! checks linking them to singular traces.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{geometric_points, linear_fit};
use crate::ideals::{
    eigenvalue_partial_sums, log_fit, measurability_of_series, FitWindow, LogFit,
    MeasurabilityVerdict, PartialSumSeries, DEFAULT_MEASURABILITY_TOL, FIT_GRID_RATIO,
};
use crate::operators::{commutator, singular_values, trace, Operator, C64, ONE, ZERO};
use crate::traces::{
    dixmier_logmean_series, measurability_criterion_check, CriterionReport, ExtendedLimitScheme,
    TraceEstimate,
};
use crate::triples::{
    word_product, AlgebraElement, ModelKind, ModelSpec, Parity, QPoly, SpectralTripleModel, Word,
};

/// Tolerance for exact operator identities on the interior.
pub const IDENTITY_TOL: f64 = 1e-10;

/// Symbolic chain Σ c(q)·w₀⊗…⊗w_q over normal-ordered words.
#[derive(Clone, Debug, PartialEq)]
pub struct Chain {
    model: ModelKind,
    degree: usize,
    terms: BTreeMap<Vec<Word>, QPoly>,
}

impl Chain {
    pub fn zero(model: ModelKind, degree: usize) -> Self {
        Self {
            model,
            degree,
            terms: BTreeMap::new(),
        }
    }

    pub fn elementary(model: ModelKind, tensor: Vec<Word>) -> Result<Self> {
        let degree = tensor
            .len()
            .checked_sub(1)
            .ok_or_else(|| Error::Contract("empty tensor".into()))?;
        let mut c = Self::zero(model, degree);
        c.add_term(QPoly::constant(ONE), tensor)?;
        Ok(c)
    }

    pub fn model(&self) -> ModelKind {
        self.model
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Vec<Word>, &QPoly)> {
        self.terms.iter()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn add_term(&mut self, coeff: QPoly, tensor: Vec<Word>) -> Result<()> {
        if tensor.len() != self.degree + 1 {
            return Err(Error::Contract(format!(
                "tensor of length {} in a degree-{} chain",
                tensor.len(),
                self.degree
            )));
        }
        let tensor: Vec<Word> = tensor
            .into_iter()
            .map(|w| match self.model {
                ModelKind::NcTorus { .. } => w,
                _ => [w[0], 0],
            })
            .collect();
        let e = self.terms.entry(tensor.clone()).or_default();
        e.add_assign(&coeff);
        if e.is_zero() {
            self.terms.remove(&tensor);
        }
        Ok(())
    }

    pub fn try_add(&self, other: &Chain) -> Result<Chain> {
        if self.model != other.model {
            return Err(Error::MixedModels(self.model.id(), other.model.id()));
        }
        if self.degree != other.degree {
            return Err(Error::Contract(format!(
                "degrees {} and {} differ",
                self.degree, other.degree
            )));
        }
        let mut out = self.clone();
        for (t, c) in &other.terms {
            out.add_term(c.clone(), t.clone())?;
        }
        Ok(out)
    }

    pub fn scale(&self, s: C64) -> Chain {
        let mut out = Chain::zero(self.model, self.degree);
        for (t, c) in &self.terms {
            out.add_term(c.scale(s), t.clone()).expect("same degree");
        }
        out
    }

    /// Largest Σ_k band(w_k) over the terms.
    pub fn total_band(&self) -> usize {
        self.terms
            .keys()
            .map(|t| t.iter().map(|w| self.model.band_of(w)).sum())
            .max()
            .unwrap_or(0)
    }

    /// Every coefficient with q collapsed to 1.
    pub fn collapsed(&self) -> Chain {
        let mut out = Chain::zero(self.model, self.degree);
        for (t, c) in &self.terms {
            out.add_term(c.collapse(), t.clone()).expect("same degree");
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        let mut out = Vec::new();
        for (t, c) in &self.terms {
            for (k, v) in c.terms() {
                out.push(ChainTermJson {
                    coeff: [v.re, v.im],
                    q_power: k,
                    tensor: t
                        .iter()
                        .map(|w| w[..self.model.word_len()].to_vec())
                        .collect(),
                });
            }
        }
        Ok(serde_json::to_string_pretty(&out)?)
    }

    pub fn from_json(model: ModelKind, text: &str) -> Result<Chain> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let terms: Vec<ChainTermJson> = serde_path_to_error::deserialize(de)
            .map_err(|e| Error::Format(format!("{} at {}", e.inner(), e.path())))?;
        let Some(first) = terms.first() else {
            return Err(Error::Format("chain has no terms".into()));
        };
        let mut c = Chain::zero(model, first.tensor.len().saturating_sub(1));
        for t in terms {
            let mut tensor = Vec::with_capacity(t.tensor.len());
            for w in &t.tensor {
                if w.len() != model.word_len() {
                    return Err(Error::Format(format!(
                        "word {w:?} has {} exponents, model {} expects {}",
                        w.len(),
                        model.id(),
                        model.word_len()
                    )));
                }
                tensor.push([w[0], w.get(1).copied().unwrap_or(0)]);
            }
            let coeff = QPoly::monomial(C64::new(t.coeff[0], t.coeff[1]), t.q_power);
            c.add_term(coeff, tensor)
                .map_err(|e| Error::Format(e.to_string()))?;
        }
        Ok(c)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ChainTermJson {
    coeff: [f64; 2],
    #[serde(default, skip_serializing_if = "is_zero_i64")]
    q_power: i64,
    tensor: Vec<Vec<i64>>,
}

fn is_zero_i64(x: &i64) -> bool {
    *x == 0
}

/// b(a₀⊗…⊗a_n) = Σ_{j<n} (−1)^j …⊗a_j a_{j+1}⊗… + (−1)^n a_n a₀⊗a₁⊗…⊗a_{n−1}.
pub fn boundary(c: &Chain) -> Result<Chain> {
    let n = c.degree;
    if n == 0 {
        return Err(Error::Contract("boundary needs degree at least 1".into()));
    }
    let mut out = Chain::zero(c.model, n - 1);
    for (t, coeff) in &c.terms {
        for j in 0..n {
            let (w, k) = word_product(&c.model, &t[j], &t[j + 1]);
            let mut tensor = t[..j].to_vec();
            tensor.push(w);
            tensor.extend_from_slice(&t[j + 2..]);
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            out.add_term(coeff.shift(k).scale(C64::new(sign, 0.0)), tensor)?;
        }
        let (w, k) = word_product(&c.model, &t[n], &t[0]);
        let mut tensor = vec![w];
        tensor.extend_from_slice(&t[1..n]);
        let sign = if n.is_multiple_of(2) { 1.0 } else { -1.0 };
        out.add_term(coeff.shift(k).scale(C64::new(sign, 0.0)), tensor)?;
    }
    Ok(out)
}

/// bc = 0 exactly; q is formal unless the model's phase is trivial.
pub fn is_cycle(c: &Chain) -> Result<bool> {
    let b = boundary(c)?;
    let commutative = !matches!(c.model, ModelKind::NcTorus { theta } if theta != 0.0);
    Ok(if commutative {
        b.collapsed().is_empty()
    } else {
        b.is_empty()
    })
}

/// κ((UV)^{-1}⊗U⊗V − (VU)^{-1}⊗V⊗U).
pub fn nc_torus_volume_cycle(model: ModelKind, kappa: f64) -> Result<Chain> {
    if !matches!(model, ModelKind::NcTorus { .. }) {
        return Err(Error::Contract(format!(
            "volume cycle needs the torus, got {}",
            model.id()
        )));
    }
    let (u, v, ui, vi) = ([1, 0], [0, 1], [-1, 0], [0, -1]);
    let (t1, k1) = word_product(&model, &vi, &ui);
    let (t2, k2) = word_product(&model, &ui, &vi);
    let mut c = Chain::zero(model, 2);
    c.add_term(QPoly::monomial(C64::new(kappa, 0.0), k1), vec![t1, u, v])?;
    c.add_term(QPoly::monomial(C64::new(-kappa, 0.0), k2), vec![t2, v, u])?;
    Ok(c)
}

/// Σ_σ sign(σ) a₀⊗a_σ(1)⊗…⊗a_σ(p); a cycle whenever the words commute.
pub fn antisymmetrized(model: ModelKind, a0: Word, rest: &[Word]) -> Result<Chain> {
    let mut c = Chain::zero(model, rest.len());
    let mut idx: Vec<usize> = (0..rest.len()).collect();
    permute(&mut idx, 0, &mut |perm| {
        let sign = permutation_sign(perm);
        let mut tensor = vec![a0];
        tensor.extend(perm.iter().map(|&i| rest[i]));
        c.add_term(QPoly::constant(C64::new(sign, 0.0)), tensor)
            .expect("degree matches");
    });
    Ok(c)
}

fn permute(v: &mut Vec<usize>, k: usize, f: &mut dyn FnMut(&[usize])) {
    if k == v.len() {
        f(v);
        return;
    }
    for i in k..v.len() {
        v.swap(k, i);
        permute(v, k + 1, f);
        v.swap(k, i);
    }
}

fn permutation_sign(p: &[usize]) -> f64 {
    let mut inv = 0;
    for i in 0..p.len() {
        for j in i + 1..p.len() {
            if p[i] > p[j] {
                inv += 1;
            }
        }
    }
    if inv % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Named chains used by the harness and the tests.
pub fn builtin_chain(name: &str, model: ModelKind) -> Result<Chain> {
    match (name, model) {
        ("circle-winding", ModelKind::Circle) => Chain::elementary(model, vec![[-1, 0], [1, 0]]),
        ("circle-even", ModelKind::Circle) => antisymmetrized(model, [-3, 0], &[[1, 0], [2, 0]]),
        ("torus-volume", ModelKind::NcTorus { .. }) => nc_torus_volume_cycle(model, 1.0),
        ("torus-odd", ModelKind::NcTorus { .. }) => Chain::elementary(model, vec![[-1, 0], [1, 0]]),
        ("toy-cycle", ModelKind::DiagonalToy { .. }) => {
            antisymmetrized(model, [-6, 0], &[[1, 0], [2, 0], [3, 0]])
        }
        _ => Err(Error::Config(format!(
            "no builtin chain `{name}` for model {}",
            model.id()
        ))),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum Slot {
    Plain,
    D,
    AbsD,
    F,
}

/// Realized words and their commutators, cached per model.
struct Factors<'a> {
    model: &'a SpectralTripleModel,
    cache: HashMap<(Word, Slot), Operator>,
}

impl<'a> Factors<'a> {
    fn new(model: &'a SpectralTripleModel) -> Self {
        Self {
            model,
            cache: HashMap::new(),
        }
    }

    fn get(&mut self, w: Word, slot: Slot) -> Result<Operator> {
        if let Some(op) = self.cache.get(&(w, slot)) {
            return Ok(op.clone());
        }
        let plain = self
            .model
            .realize(&AlgebraElement::word(self.model.kind(), w))?;
        let op = match slot {
            Slot::Plain => plain,
            Slot::D => self.model.partial_d(&plain)?,
            Slot::AbsD => self.model.delta(&plain)?,
            Slot::F => self.model.f_comm(&plain)?,
        };
        self.cache.insert((w, slot), op.clone());
        Ok(op)
    }
}

fn theta_of(model: &SpectralTripleModel) -> f64 {
    match model.kind() {
        ModelKind::NcTorus { theta } => theta,
        _ => 0.0,
    }
}

fn check_chain(c: &Chain, model: &SpectralTripleModel) -> Result<()> {
    if c.model != model.kind() {
        return Err(Error::MixedModels(c.model.id(), model.kind().id()));
    }
    if c.degree != model.p() {
        return Err(Error::DegreeMismatch {
            degree: c.degree,
            p: model.p(),
        });
    }
    let band = c.total_band();
    if band > model.buffer() && !matches!(model.kind(), ModelKind::DiagonalToy { .. }) {
        return Err(Error::BandExceedsBuffer {
            band,
            buffer: model.buffer(),
        });
    }
    Ok(())
}

/// Σ coeff · prefix · ∏ slot_k(w_k), compressed to the interior.
fn chain_operator(
    c: &Chain,
    model: &SpectralTripleModel,
    prefix: &Operator,
    slots: &dyn Fn(usize) -> Slot,
) -> Result<Operator> {
    check_chain(c, model)?;
    let theta = theta_of(model);
    let mut factors = Factors::new(model);
    let mut acc = Operator::zeros(model.dim());
    for (t, coeff) in &c.terms {
        let mut prod = prefix.clone();
        for (k, w) in t.iter().enumerate() {
            prod = prod.try_mul(&factors.get(*w, slots(k))?)?;
        }
        acc = acc.try_add(&prod.scale(coeff.eval(theta)))?;
    }
    Ok(model.compress(&acc).with_label("chain operator"))
}

/// Ω(c) = Γa₀∏[D,a_k] on the interior.
pub fn omega(c: &Chain, model: &SpectralTripleModel) -> Result<Operator> {
    let g = model.gamma_or_identity();
    chain_operator(c, model, &g, &|k| {
        if k == 0 {
            Slot::Plain
        } else {
            Slot::D
        }
    })
    .map(|o| o.with_label("Omega(c)"))
}

/// ch(c) = FΓ∏_{k=0}^p [F,a_k] on the interior.
pub fn ch_op(c: &Chain, model: &SpectralTripleModel) -> Result<Operator> {
    let fg = model.f().try_mul(&model.gamma_or_identity())?;
    chain_operator(c, model, &fg, &|_| Slot::F).map(|o| o.with_label("ch(c)"))
}

/// ½Tr(ch(c)) at the model's truncation.
pub fn chern_value(c: &Chain, model: &SpectralTripleModel) -> Result<C64> {
    Ok(trace(&ch_op(c, model)?) * 0.5)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChernReport {
    pub value: C64,
    /// (N', Ch at N') for N' = N/4, N/2, N (those ≥ 8).
    pub convergence: Vec<(usize, C64)>,
    /// 2·Ch_N − Ch_{N/2}, cancelling a 1/N error term.
    pub extrapolated: C64,
    /// |Ch_N − Ch_{N/2}| ≤ |Ch_{N/2} − Ch_{N/4}|.
    pub increments_decreasing: bool,
}

/// Ch(c) with a convergence record over N/4, N/2, N.
pub fn chern(c: &Chain, model: &SpectralTripleModel) -> Result<ChernReport> {
    let value = chern_value(c, model)?;
    let spec = spec_of(model);
    let mut convergence = Vec::new();
    for div in [4, 2] {
        let n = model.n() / div;
        if n >= 8 {
            let m = ModelSpec { n, ..spec.clone() }.build()?;
            convergence.push((n, chern_value(c, &m)?));
        }
    }
    convergence.push((model.n(), value));
    let extrapolated = match convergence.len() {
        1 => value,
        l => value * 2.0 - convergence[l - 2].1,
    };
    let increments_decreasing = if convergence.len() == 3 {
        (convergence[2].1 - convergence[1].1).norm()
            <= (convergence[1].1 - convergence[0].1).norm() + 1e-12
    } else {
        true
    };
    Ok(ChernReport {
        value,
        convergence,
        extrapolated,
        increments_decreasing,
    })
}

fn spec_of(model: &SpectralTripleModel) -> ModelSpec {
    let d = model.descriptor();
    ModelSpec {
        kind: d.kind,
        n: d.n,
        p: Some(d.p),
        band: d.band,
        kernel_phase: d.kernel_phase,
    }
}

/// Subset 𝒜 ⊂ {1..p} with its inversion count n_𝒜.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetSpec {
    pub subset: Vec<usize>,
    pub n_a: usize,
}

impl SubsetSpec {
    pub fn new(p: usize, subset: &[usize]) -> Result<Self> {
        let s = Self {
            subset: subset.to_vec(),
            n_a: count_pairs(p, subset),
        };
        s.validate(p)?;
        Ok(s)
    }

    /// Range, duplicates, and the stored n_𝒜 against a recount.
    pub fn validate(&self, p: usize) -> Result<()> {
        let mut seen = vec![false; p + 1];
        for &i in &self.subset {
            if i == 0 || i > p {
                return Err(Error::InvalidSubset(format!("{i} outside 1..={p}")));
            }
            if seen[i] {
                return Err(Error::InvalidSubset(format!("{i} repeated")));
            }
            seen[i] = true;
        }
        let n = count_pairs(p, &self.subset);
        if n != self.n_a {
            return Err(Error::InvalidSubset(format!(
                "stored n_A = {} but recount gives {n}",
                self.n_a
            )));
        }
        Ok(())
    }

    pub fn contains(&self, k: usize) -> bool {
        self.subset.contains(&k)
    }

    pub fn sign(&self) -> f64 {
        if self.n_a.is_multiple_of(2) {
            1.0
        } else {
            -1.0
        }
    }
}

/// #{(i,j): i<j, i∈𝒜, j∉𝒜} inside {1..p}.
pub fn count_pairs(p: usize, subset: &[usize]) -> usize {
    let mut n = 0;
    for &i in subset {
        for j in (i + 1)..=p {
            if !subset.contains(&j) {
                n += 1;
            }
        }
    }
    n
}

/// W_𝒜(c) = Γa₀∏[b_k,a_k], b_k = |D| on 𝒜 and F elsewhere (unsigned).
pub fn w_subset(c: &Chain, model: &SpectralTripleModel, spec: &SubsetSpec) -> Result<Operator> {
    spec.validate(model.p())?;
    let g = model.gamma_or_identity();
    chain_operator(c, model, &g, &|k| match k {
        0 => Slot::Plain,
        k if spec.contains(k) => Slot::AbsD,
        _ => Slot::F,
    })
    .map(|o| o.with_label("W_A(c)"))
}

pub fn w_m(c: &Chain, model: &SpectralTripleModel, m: usize) -> Result<Operator> {
    if m == 0 || m > model.p() {
        return Err(Error::InvalidSubset(format!(
            "m = {m} outside 1..={}",
            model.p()
        )));
    }
    w_subset(c, model, &SubsetSpec::new(model.p(), &[m])?)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IdentityReport {
    pub name: String,
    pub defect: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl IdentityReport {
    fn new(name: &str, defect: f64) -> Self {
        Self {
            name: name.into(),
            defect,
            tolerance: IDENTITY_TOL,
            pass: defect <= IDENTITY_TOL,
        }
    }
}

/// ‖2W_∅(c) − [F, F·W_∅(c)] − (−1)^{p−1}ch(c)‖ on the interior.
pub fn bob_identity_check(c: &Chain, model: &SpectralTripleModel) -> Result<IdentityReport> {
    let w = w_subset(c, model, &SubsetSpec::new(model.p(), &[])?)?;
    let f = model.compress(model.f());
    let fw = f.try_mul(&w)?;
    let sign = if model.p() % 2 == 1 { 1.0 } else { -1.0 };
    let defect = w
        .scale_real(2.0)
        .try_sub(&commutator(&f, &fw)?)?
        .try_sub(&ch_op(c, model)?.scale_real(sign))?;
    Ok(IdentityReport::new("bob_identity", defect.norm_bound()))
}

/// Second-order Leibniz defects for δ and for [F, δ(·)].
pub fn appendix_identity_checks(
    a1: &AlgebraElement,
    a2: &AlgebraElement,
    model: &SpectralTripleModel,
) -> Result<Vec<IdentityReport>> {
    let (x, y) = (model.realize(a1)?, model.realize(a2)?);
    let xy = model.realize(&a1.mul(a2)?)?;
    let d = |t: &Operator| model.delta(t);
    let fc = |t: &Operator| model.f_comm(t);
    let (dx, dy, dxy) = (d(&x)?, d(&y)?, d(&xy)?);
    let first = d(&dxy)?
        .try_sub(&x.try_mul(&d(&dy)?)?)?
        .try_sub(&d(&dx)?.try_mul(&y)?)?
        .try_sub(&dx.try_mul(&dy)?.scale_real(2.0))?;
    let second = fc(&dxy)?
        .try_sub(&x.try_mul(&fc(&dy)?)?)?
        .try_sub(&fc(&dx)?.try_mul(&y)?)?
        .try_sub(&fc(&x)?.try_mul(&dy)?)?
        .try_sub(&dx.try_mul(&fc(&y)?)?)?;
    Ok(vec![
        IdentityReport::new("delta_squared_leibniz", model.interior_norm(&first)),
        IdentityReport::new("phase_delta_leibniz", model.interior_norm(&second)),
    ])
}

/// |(bθ)(c) − θ(bc)| for θ(a₀,…,a_q) = Tr(P a₀∏[F,a_k]) over the interior P.
pub fn coboundary_duality_defect(c: &Chain, model: &SpectralTripleModel) -> Result<f64> {
    let theta = theta_of(model);
    let mut factors = Factors::new(model);
    let q = c.degree;
    if q == 0 {
        return Err(Error::Contract("duality needs degree at least 1".into()));
    }
    let functional = |ops: &[Operator], factors_f: &[Operator]| -> Result<C64> {
        let mut prod = ops[0].clone();
        for f in factors_f {
            prod = prod.try_mul(f)?;
        }
        Ok(trace(&model.compress(&prod)))
    };
    let f = model.f().clone();
    let fcomm = |x: &Operator| commutator(&f, x);
    let mut lhs = ZERO;
    for (t, coeff) in c.terms() {
        let ops: Vec<Operator> = t
            .iter()
            .map(|w| factors.get(*w, Slot::Plain))
            .collect::<Result<_>>()?;
        let mut total = ZERO;
        for j in 0..q {
            let mut merged: Vec<Operator> = ops[..j].to_vec();
            merged.push(ops[j].try_mul(&ops[j + 1])?);
            merged.extend_from_slice(&ops[j + 2..]);
            let comms: Vec<Operator> = merged[1..].iter().map(&fcomm).collect::<Result<_>>()?;
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            total += functional(&merged, &comms)? * sign;
        }
        let mut merged = vec![ops[q].try_mul(&ops[0])?];
        merged.extend_from_slice(&ops[1..q]);
        let comms: Vec<Operator> = merged[1..].iter().map(&fcomm).collect::<Result<_>>()?;
        let sign = if q.is_multiple_of(2) { 1.0 } else { -1.0 };
        total += functional(&merged, &comms)? * sign;
        lhs += total * coeff.eval(theta);
    }
    let b = boundary(c)?;
    let mut rhs = ZERO;
    for (t, coeff) in b.terms() {
        let ops: Vec<Operator> = t
            .iter()
            .map(|w| factors.get(*w, Slot::Plain))
            .collect::<Result<_>>()?;
        let comms: Vec<Operator> = t[1..]
            .iter()
            .map(|w| factors.get(*w, Slot::F))
            .collect::<Result<_>>()?;
        rhs += functional(&ops, &comms)? * coeff.eval(theta);
    }
    Ok((lhs - rhs).norm())
}

fn require_cycle(c: &Chain) -> Result<()> {
    if is_cycle(c)? {
        Ok(())
    } else {
        Err(Error::NotACycle)
    }
}

/// Spectral window for series read from a model: the default window of its
/// true prefix.
pub fn model_window(model: &SpectralTripleModel) -> FitWindow {
    FitWindow::default_for(model.true_prefix_len())
}

/// Eigenvalue partial sums of an interior operator restricted to the
/// model's prefix positions.
pub fn model_partial_sums(t: &Operator, model: &SpectralTripleModel) -> Result<PartialSumSeries> {
    eigenvalue_partial_sums(&model.restrict_prefix(t).with_label(t.label()))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReductionReport {
    /// Fit of the partial sums of Ω(c)|D₀|^{-p} − pW_p(c)D₀^{-1}.
    pub difference: LogFit,
    pub omega_fit: LogFit,
    pub w_fit: LogFit,
    pub slope_tol: f64,
    pub residual_tol: f64,
    pub pass: bool,
}

/// Reduction of Ω(c)|D₀|^{-p} to pW_p(c)D₀^{-1} modulo the commutator
/// subspace, on the invertible double.
pub fn reduction_partial_sum_check(
    c: &Chain,
    model: &SpectralTripleModel,
) -> Result<ReductionReport> {
    require_cycle(c)?;
    let (dm, _) = model.invertible_double()?;
    let p = dm.p();
    let abs_pow = dm.compress(&dm.abs_d_pow(-(p as f64))?);
    let d_inv = dm.compress(&dm.d_inverse()?);
    let om = omega(c, &dm)?.try_mul(&abs_pow)?;
    let w = w_m(c, &dm, p)?.try_mul(&d_inv)?.scale_real(p as f64);
    let diff = om.try_sub(&w)?.with_label("reduction difference");
    let window = model_window(&dm);
    let fit = |t: &Operator| -> Result<LogFit> { log_fit(&model_partial_sums(t, &dm)?, window) };
    let difference = fit(&diff)?;
    let slope_tol = 0.1;
    let residual_tol = DEFAULT_MEASURABILITY_TOL;
    Ok(ReductionReport {
        pass: difference.z.norm() <= slope_tol && difference.residual_sup <= residual_tol,
        omega_fit: fit(&om)?,
        w_fit: fit(&w)?,
        difference,
        slope_tol,
        residual_tol,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HeatCycleReport {
    pub samples: Vec<(f64, C64)>,
    pub z: C64,
    pub intercept: C64,
    pub residual_sup: f64,
    pub s_floor: f64,
    pub warnings: Vec<String>,
}

/// Default s-grid: ratio 2^{1/4} on [s_floor, max(1/8, 4·s_floor)], where
/// s_floor = 30^{1/(p+1)}/N keeps e^{-(s|D₀|)^{p+1}} below e^{-30} at the
/// truncation edge.
pub fn default_s_grid(model: &SpectralTripleModel) -> (Vec<f64>, f64) {
    let n = model.n() as f64;
    let p = model.p() as f64;
    let floor = 30f64.powf(1.0 / (p + 1.0)) / n;
    let ceil = (1.0 / 8.0f64).max(4.0 * floor);
    (geometric_points(floor, ceil, FIT_GRID_RATIO), floor)
}

/// g(s) = Tr(W_p(c)D₀^{-1}e^{-(s|D₀|)^{p+1}}) fitted against log(1/s).
pub fn heat_cycle_trace(
    c: &Chain,
    model: &SpectralTripleModel,
    s_grid: Option<&[f64]>,
) -> Result<HeatCycleReport> {
    require_cycle(c)?;
    let (dm, _) = model.invertible_double()?;
    let p = dm.p();
    let y = w_m(c, &dm, p)?.try_mul(&dm.compress(&dm.d_inverse()?))?;
    let diag = y.diagonal_values();
    let abs: Vec<f64> = dm
        .compress(dm.abs_d())
        .diagonal_values()
        .iter()
        .map(|v| v.re)
        .collect();
    let (default_grid, floor) = default_s_grid(model);
    let mut warnings = Vec::new();
    let grid: Vec<f64> = match s_grid {
        None => default_grid,
        Some(g) => g
            .iter()
            .copied()
            .filter(|&s| {
                let keep = s >= floor;
                if !keep {
                    warnings.push(format!(
                        "s = {s} below resolution floor {floor:.4e}; excluded"
                    ));
                }
                keep
            })
            .collect(),
    };
    if grid.len() < 3 {
        return Err(Error::DegenerateWindow(format!(
            "{} usable s values",
            grid.len()
        )));
    }
    let e = (p + 1) as i32;
    let samples: Vec<(f64, C64)> = grid
        .iter()
        .map(|&s| {
            let g: C64 = diag
                .iter()
                .zip(&abs)
                .map(|(d, a)| d * (-(s * a).powi(e)).exp())
                .sum();
            (s, g)
        })
        .collect();
    let xs: Vec<f64> = samples.iter().map(|s| (1.0 / s.0).ln()).collect();
    let ys: Vec<C64> = samples.iter().map(|s| s.1).collect();
    let (z, intercept, residual_sup) = linear_fit(&xs, &ys);
    Ok(HeatCycleReport {
        samples,
        z,
        intercept,
        residual_sup,
        s_floor: floor,
        warnings,
    })
}

/// Trace norm of a₀∏[D,a_k]|D₀|^{-p} − a₀∏[D₀,a_k]|D₀|^{-p}, summed over terms.
pub fn double_replacement_defect(c: &Chain, model: &SpectralTripleModel) -> Result<f64> {
    check_chain(c, model)?;
    let (dm, _) = model.invertible_double()?;
    let id = Operator::identity(model.dim());
    let slots = |k: usize| if k == 0 { Slot::Plain } else { Slot::D };
    let a = chain_operator(c, model, &id, &slots)?;
    let b = chain_operator(c, &dm, &id, &slots)?;
    let w = dm.compress(&dm.abs_d_pow(-(model.p() as f64))?);
    let diff = a.try_sub(&b)?.try_mul(&w)?;
    Ok(singular_values(&diff)?.values().iter().sum())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParityCase {
    Matched,
    OddTripleEvenP,
    EvenTripleOddP,
}

pub fn parity_case(model: &SpectralTripleModel) -> ParityCase {
    match (model.parity(), model.p().is_multiple_of(2)) {
        (Parity::Odd, true) => ParityCase::OddTripleEvenP,
        (Parity::Even, false) => ParityCase::EvenTripleOddP,
        _ => ParityCase::Matched,
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MainTheoremReport {
    pub parity_case: ParityCase,
    pub chern: ChernReport,
    pub z_spec: C64,
    pub spec_fit: LogFit,
    pub verdict: MeasurabilityVerdict,
    /// Absent when V is in neither L_{1,∞} nor M_{1,∞}; the reason is in
    /// `criterion_note`.
    pub criterion: Option<CriterionReport>,
    pub criterion_note: Option<String>,
    pub dixmier: TraceEstimate,
    pub tolerance: f64,
    pub spec_gap: f64,
    pub heat_gap: Option<f64>,
    pub pass: bool,
}

/// Relative tolerance of main_theorem_check.
pub const MAIN_THEOREM_TOL: f64 = 0.15;

/// |Ch| bound for the wrong-parity cases.
pub const PARITY_CHERN_TOL: f64 = 1e-8;

/// |z| bound for the wrong-parity cases.
pub const PARITY_Z_TOL: f64 = 0.05;

/// Heat exponent used by the heat-side estimates.
pub const HEAT_ALPHA: f64 = 2.0;

/// φ(Ω(c)(1+D²)^{-p/2}) by eigenvalue sums, heat functional and Dixmier
/// log-mean, against Ch(c). For mismatched parity both sides must vanish.
pub fn main_theorem_check(
    c: &Chain,
    model: &SpectralTripleModel,
    tolerance: f64,
) -> Result<MainTheoremReport> {
    require_cycle(c)?;
    let om = omega(c, model)?;
    let v = model.compress(&model.resolvent_power(model.p() as f64));
    let t = om.try_mul(&v)?.with_label("Omega(c)(1+D^2)^(-p/2)");
    let series = model_partial_sums(&t, model)?;
    let window = model_window(model);
    let spec_fit = log_fit(&series, window)?;
    let verdict = measurability_of_series(&series, DEFAULT_MEASURABILITY_TOL)?;
    let (criterion, criterion_note) = match measurability_criterion_check(
        &model.restrict_prefix(&om),
        &model.restrict_prefix(&v),
        HEAT_ALPHA,
        Some(window),
    ) {
        Ok(r) => (Some(r), None),
        Err(Error::Branch(msg)) => (None, Some(msg)),
        Err(e) => return Err(e),
    };
    let dixmier = dixmier_logmean_series(&series, &ExtendedLimitScheme::default())?;
    let chern = chern(c, model)?;
    let case = parity_case(model);
    let spec_gap = (spec_fit.z - chern.value).norm();
    let heat_gap = criterion
        .as_ref()
        .map(|r| (r.z_heat.z - chern.value).norm());
    let pass = match case {
        ParityCase::Matched => {
            let bound = tolerance * chern.value.norm().max(1.0);
            spec_gap <= bound && heat_gap.is_some_and(|g| g <= bound)
        }
        _ => {
            chern.value.norm() <= PARITY_CHERN_TOL
                && spec_fit.z.norm() <= PARITY_Z_TOL
                && criterion
                    .as_ref()
                    .is_none_or(|r| r.z_heat.z.norm() <= PARITY_Z_TOL)
        }
    };
    Ok(MainTheoremReport {
        parity_case: case,
        z_spec: spec_fit.z,
        pass,
        chern,
        spec_fit,
        verdict,
        criterion,
        criterion_note,
        dixmier,
        tolerance,
        spec_gap,
        heat_gap,
    })
}
