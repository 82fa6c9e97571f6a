//! Truncated spectral triples: the circle (p = 1, odd), the noncommutative
//! torus (p = 2, even) and a diagonal toy model, together with the
//! derivations δ = [|D|, ·], ∂ = [D, ·] and the phase commutator [F, ·].
//!
//! All algebra happens on a working space with modes up to N + B; spectral
//! statistics are read on the interior modes up to N.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ideals::{diagnose, quasi_norm_pinf, IdealDiagnostics};
use crate::operators::{commutator, singular_values, Operator, SingularSequence, C64, ONE, ZERO};

/// Exponents of a normal-ordered word: u^k on the circle, U^a V^b on the
/// torus, g^k in the toy model (second slot unused outside the torus).
pub type Word = [i64; 2];

/// Laurent polynomial in the formal phase q = e^{2πiθ}.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QPoly(BTreeMap<i64, C64>);

impl QPoly {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: C64) -> Self {
        Self::monomial(c, 0)
    }

    pub fn monomial(c: C64, power: i64) -> Self {
        let mut m = BTreeMap::new();
        if c != ZERO {
            m.insert(power, c);
        }
        Self(m)
    }

    pub fn terms(&self) -> impl Iterator<Item = (i64, C64)> + '_ {
        self.0.iter().map(|(&k, &c)| (k, c))
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_empty()
    }

    pub fn add_assign(&mut self, other: &QPoly) {
        for (&k, &c) in &other.0 {
            let e = self.0.entry(k).or_insert(ZERO);
            *e += c;
            if *e == ZERO {
                self.0.remove(&k);
            }
        }
    }

    pub fn mul(&self, other: &QPoly) -> QPoly {
        let mut out = QPoly::zero();
        for (&a, &x) in &self.0 {
            for (&b, &y) in &other.0 {
                out.add_assign(&QPoly::monomial(x * y, a + b));
            }
        }
        out
    }

    pub fn scale(&self, s: C64) -> QPoly {
        let mut out = QPoly::zero();
        for (&k, &c) in &self.0 {
            out.add_assign(&QPoly::monomial(c * s, k));
        }
        out
    }

    pub fn shift(&self, power: i64) -> QPoly {
        Self(self.0.iter().map(|(&k, &c)| (k + power, c)).collect())
    }

    /// Complex conjugate, with q̄ = q^{-1}.
    pub fn conj(&self) -> QPoly {
        Self(self.0.iter().map(|(&k, &c)| (-k, c.conj())).collect())
    }

    /// All powers merged into q^0 (the value at q = 1).
    pub fn collapse(&self) -> QPoly {
        QPoly::constant(self.0.values().sum())
    }

    pub fn eval(&self, theta: f64) -> C64 {
        self.0.iter().map(|(&k, &c)| c * phase(theta, k)).sum()
    }
}

/// e^{2πiθm}, reducing θm mod 1 first.
pub fn phase(theta: f64, m: i64) -> C64 {
    if theta == 0.0 || m == 0 {
        return ONE;
    }
    let x = (theta * m as f64).rem_euclid(1.0);
    C64::from_polar(1.0, TAU * x)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    Circle,
    NcTorus { theta: f64 },
    DiagonalToy { phase: f64 },
}

impl ModelKind {
    pub fn id(&self) -> String {
        match self {
            ModelKind::Circle => "circle".into(),
            ModelKind::NcTorus { theta } => format!("nc_torus(theta={theta})"),
            ModelKind::DiagonalToy { phase } => format!("diagonal_toy(phase={phase})"),
        }
    }

    /// q-power picked up by W(a,b)·W(c,d).
    fn twist(&self, x: &Word, y: &Word) -> i64 {
        match self {
            ModelKind::NcTorus { .. } => x[1] * y[0],
            _ => 0,
        }
    }

    fn is_commutative(&self) -> bool {
        !matches!(self, ModelKind::NcTorus { theta } if *theta != 0.0)
    }

    pub fn word_len(&self) -> usize {
        match self {
            ModelKind::NcTorus { .. } => 2,
            _ => 1,
        }
    }

    pub fn band_of(&self, w: &Word) -> usize {
        match self {
            ModelKind::Circle => w[0].unsigned_abs() as usize,
            ModelKind::NcTorus { .. } => w[0].unsigned_abs().max(w[1].unsigned_abs()) as usize,
            ModelKind::DiagonalToy { .. } => 0,
        }
    }
}

/// Finite sum Σ c_w(q)·w over normal-ordered words.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlgebraElement {
    pub model: ModelKind,
    pub terms: BTreeMap<Word, QPoly>,
}

impl AlgebraElement {
    pub fn zero(model: ModelKind) -> Self {
        Self {
            model,
            terms: BTreeMap::new(),
        }
    }

    pub fn one(model: ModelKind) -> Self {
        Self::word(model, [0, 0])
    }

    pub fn word(model: ModelKind, w: Word) -> Self {
        Self::monomial(model, w, QPoly::constant(ONE))
    }

    pub fn monomial(model: ModelKind, w: Word, coeff: QPoly) -> Self {
        let mut e = Self::zero(model);
        if !coeff.is_zero() {
            e.terms.insert(normalize_word(&model, w), coeff);
        }
        e
    }

    pub fn band_width(&self) -> usize {
        self.terms
            .keys()
            .map(|w| self.model.band_of(w))
            .max()
            .unwrap_or(0)
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    fn same_model(&self, other: &Self) -> Result<()> {
        if self.model != other.model {
            return Err(Error::MixedModels(self.model.id(), other.model.id()));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.same_model(other)?;
        let mut out = self.clone();
        for (w, c) in &other.terms {
            let e = out.terms.entry(*w).or_default();
            e.add_assign(c);
            if e.is_zero() {
                out.terms.remove(w);
            }
        }
        Ok(out)
    }

    pub fn scale(&self, s: C64) -> Self {
        let mut out = Self::zero(self.model);
        for (w, c) in &self.terms {
            let c = c.scale(s);
            if !c.is_zero() {
                out.terms.insert(*w, c);
            }
        }
        out
    }

    /// Symbolic product with exact q-bookkeeping.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.same_model(other)?;
        let mut out = Self::zero(self.model);
        for (x, cx) in &self.terms {
            for (y, cy) in &other.terms {
                let (w, k) = word_product(&self.model, x, y);
                let c = cx.mul(cy).shift(k);
                let e = out.terms.entry(w).or_default();
                e.add_assign(&c);
                if e.is_zero() {
                    out.terms.remove(&w);
                }
            }
        }
        Ok(out)
    }

    /// Adjoint: (U^aV^b)* = q^{ab} U^{-a}V^{-b}.
    pub fn adjoint(&self) -> Self {
        let mut out = Self::zero(self.model);
        for (w, c) in &self.terms {
            let k = match self.model {
                ModelKind::NcTorus { .. } => w[0] * w[1],
                _ => 0,
            };
            out.terms.insert(
                normalize_word(&self.model, [-w[0], -w[1]]),
                c.conj().shift(k),
            );
        }
        out
    }

    /// Random element with small integer coefficients and the given band.
    pub fn random<R: Rng + ?Sized>(
        model: ModelKind,
        band: usize,
        terms: usize,
        rng: &mut R,
    ) -> Self {
        let b = band as i64;
        let mut e = Self::zero(model);
        for _ in 0..terms {
            let w = match model {
                ModelKind::NcTorus { .. } => [rng.random_range(-b..=b), rng.random_range(-b..=b)],
                ModelKind::DiagonalToy { .. } => [rng.random_range(-3..=3), 0],
                ModelKind::Circle => [rng.random_range(-b..=b), 0],
            };
            let c = C64::new(
                rng.random_range(-3..=3) as f64,
                rng.random_range(-3..=3) as f64,
            );
            e = e
                .add(&Self::monomial(model, w, QPoly::constant(c)))
                .expect("same model");
        }
        e
    }
}

fn normalize_word(model: &ModelKind, w: Word) -> Word {
    match model {
        ModelKind::NcTorus { .. } => w,
        _ => [w[0], 0],
    }
}

/// Product of two normal-ordered words: (word, q-power).
pub fn word_product(model: &ModelKind, x: &Word, y: &Word) -> (Word, i64) {
    let w = normalize_word(model, [x[0] + y[0], x[1] + y[1]]);
    (w, model.twist(x, y))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parity {
    Odd,
    Even,
}

/// Value of the phase F on ker D.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelPhase {
    /// sign(0) = +1, so F = E_D[0,∞) − E_D(−∞,0).
    #[default]
    PlusOne,
    /// Torus only: the spinor swap on the zero mode, which anticommutes with Γ.
    GradedSwap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelDescriptor {
    pub name: String,
    pub kind: ModelKind,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "B")]
    pub buffer: usize,
    pub band: usize,
    pub p: usize,
    pub parity: Parity,
    pub kernel_phase: KernelPhase,
    pub doubled: bool,
    pub conventions: BTreeMap<String, String>,
}

/// Build parameters of a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    #[serde(rename = "N")]
    pub n: usize,
    /// Defaults to the model's geometric exponent.
    #[serde(default)]
    pub p: Option<usize>,
    /// Largest word band the model must carry; buffer B = (p+1)·band.
    #[serde(default = "default_band")]
    pub band: usize,
    #[serde(default)]
    pub kernel_phase: KernelPhase,
}

fn default_band() -> usize {
    1
}

/// Irrational default, frac(1/√2) = 1/√2.
pub const DEFAULT_THETA: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Default phase of the toy generator, (√5 − 1)/2.
pub const TOY_PHASE: f64 = 0.618_033_988_749_894_9;

/// Largest order accepted by qc_seminorm.
pub const QC_MAX_ORDER: usize = 3;

impl ModelSpec {
    pub fn circle(n: usize) -> Self {
        Self {
            kind: ModelKind::Circle,
            n,
            p: None,
            band: 1,
            kernel_phase: KernelPhase::PlusOne,
        }
    }

    pub fn nc_torus(n: usize, theta: f64) -> Self {
        Self {
            kind: ModelKind::NcTorus { theta },
            ..Self::circle(n)
        }
    }

    pub fn diagonal_toy(n: usize, p: usize) -> Self {
        Self {
            kind: ModelKind::DiagonalToy { phase: TOY_PHASE },
            p: Some(p),
            band: 0,
            ..Self::circle(n)
        }
    }

    pub fn with_p(mut self, p: usize) -> Self {
        self.p = Some(p);
        self
    }

    pub fn with_band(mut self, band: usize) -> Self {
        self.band = band;
        self
    }

    pub fn with_kernel_phase(mut self, k: KernelPhase) -> Self {
        self.kernel_phase = k;
        self
    }

    pub fn build(&self) -> Result<SpectralTripleModel> {
        SpectralTripleModel::build(self)
    }
}

#[derive(Clone, Debug)]
pub struct SpectralTripleModel {
    descriptor: ModelDescriptor,
    d: Operator,
    f: Operator,
    abs_d: Operator,
    gamma: Option<Operator>,
    interior: Vec<usize>,
    /// Working half-width N + B.
    m: i64,
}

pub fn build_circle(n: usize) -> Result<SpectralTripleModel> {
    ModelSpec::circle(n).build()
}

pub fn build_nc_torus(n: usize, theta: f64) -> Result<SpectralTripleModel> {
    ModelSpec::nc_torus(n, theta).build()
}

pub fn build_diagonal_toy(n: usize, p: usize) -> Result<SpectralTripleModel> {
    ModelSpec::diagonal_toy(n, p).build()
}

impl SpectralTripleModel {
    pub fn build(spec: &ModelSpec) -> Result<Self> {
        let n = spec.n;
        if n < 8 {
            return Err(Error::Contract(format!(
                "truncation N must be at least 8, got {n}"
            )));
        }
        let (p_default, parity) = match spec.kind {
            ModelKind::Circle => (1, Parity::Odd),
            ModelKind::NcTorus { theta } => {
                if !(0.0..1.0).contains(&theta) {
                    return Err(Error::Contract(format!(
                        "theta must lie in [0,1), got {theta}"
                    )));
                }
                (2, Parity::Even)
            }
            ModelKind::DiagonalToy { .. } => (1, Parity::Odd),
        };
        let p = spec.p.unwrap_or(p_default);
        if p == 0 {
            return Err(Error::Contract(
                "summability exponent p must be positive".into(),
            ));
        }
        if spec.kernel_phase == KernelPhase::GradedSwap && parity != Parity::Even {
            return Err(Error::Contract(
                "graded kernel phase needs an even model".into(),
            ));
        }
        let band = match spec.kind {
            ModelKind::DiagonalToy { .. } => 0,
            _ => spec.band,
        };
        let buffer = (p + 1) * band;
        let m = (n + buffer) as i64;
        let mut conventions = BTreeMap::new();
        conventions.insert("sign_zero".into(), "+1".into());
        let (name, d, f, abs_d, gamma, interior) = match spec.kind {
            ModelKind::Circle => {
                conventions.insert("basis".into(), "fourier modes k, u e_k = e_{k+1}".into());
                let ks: Vec<i64> = (-m..=m).collect();
                let d = Operator::real_diagonal(ks.iter().map(|&k| k as f64)).with_label("D");
                let f =
                    Operator::real_diagonal(ks.iter().map(|&k| if k >= 0 { 1.0 } else { -1.0 }))
                        .with_label("F");
                let abs_d =
                    Operator::real_diagonal(ks.iter().map(|&k| k.abs() as f64)).with_label("|D|");
                let interior: Vec<usize> = (0..ks.len())
                    .filter(|&i| ks[i].unsigned_abs() as usize <= n)
                    .collect();
                ("circle", d, f, abs_d, None, interior)
            }
            ModelKind::NcTorus { .. } => {
                conventions.insert(
                    "dirac".into(),
                    "[[0, d1 + i d2], [d1 - i d2, 0]], tau = i".into(),
                );
                conventions.insert("commutation".into(), "VU = e^{2 pi i theta} UV".into());
                conventions.insert("kernel_phase".into(), format!("{:?}", spec.kernel_phase));
                let side = 2 * m + 1;
                let dim = (side * side * 2) as usize;
                let mut dt = Vec::with_capacity(dim);
                let mut ft = Vec::with_capacity(dim);
                let mut at = Vec::with_capacity(dim);
                let mut gt = Vec::with_capacity(dim);
                let mut interior = Vec::new();
                for n1 in -m..=m {
                    for n2 in -m..=m {
                        let i0 = torus_index(m, n1, n2, 0);
                        let i1 = i0 + 1;
                        let a = C64::new(-(n2 as f64), n1 as f64);
                        let r = a.norm();
                        dt.push((i0, i1, a));
                        dt.push((i1, i0, a.conj()));
                        if r == 0.0 {
                            match spec.kernel_phase {
                                KernelPhase::PlusOne => {
                                    ft.push((i0, i0, ONE));
                                    ft.push((i1, i1, ONE));
                                }
                                KernelPhase::GradedSwap => {
                                    ft.push((i0, i1, ONE));
                                    ft.push((i1, i0, ONE));
                                }
                            }
                        } else {
                            ft.push((i0, i1, a / r));
                            ft.push((i1, i0, a.conj() / r));
                        }
                        at.push((i0, i0, C64::new(r, 0.0)));
                        at.push((i1, i1, C64::new(r, 0.0)));
                        gt.push((i0, i0, ONE));
                        gt.push((i1, i1, -ONE));
                        if n1.unsigned_abs() as usize <= n && n2.unsigned_abs() as usize <= n {
                            interior.push(i0);
                            interior.push(i1);
                        }
                    }
                }
                interior.sort_unstable();
                (
                    "nc_torus",
                    Operator::from_triplets(dim, dt)?.with_label("D"),
                    Operator::from_triplets(dim, ft)?.with_label("F"),
                    Operator::from_triplets(dim, at)?.with_label("|D|"),
                    Some(Operator::from_triplets(dim, gt)?.with_label("Gamma")),
                    interior,
                )
            }
            ModelKind::DiagonalToy { .. } => {
                conventions.insert("dirac".into(), format!("diag((k+1)^(1/{p}))"));
                let d =
                    Operator::real_diagonal((0..n).map(|k| ((k + 1) as f64).powf(1.0 / p as f64)))
                        .with_label("D");
                let abs_d = d.clone().with_label("|D|");
                (
                    "diagonal_toy",
                    d,
                    Operator::identity(n).with_label("F"),
                    abs_d,
                    None,
                    (0..n).collect(),
                )
            }
        };
        let m = match spec.kind {
            ModelKind::DiagonalToy { .. } => n as i64,
            _ => m,
        };
        Ok(Self {
            descriptor: ModelDescriptor {
                name: name.into(),
                kind: spec.kind,
                n,
                buffer,
                band,
                p,
                parity,
                kernel_phase: spec.kernel_phase,
                doubled: false,
                conventions,
            },
            d,
            f,
            abs_d,
            gamma,
            interior,
            m,
        })
    }

    pub fn descriptor(&self) -> &ModelDescriptor {
        &self.descriptor
    }

    pub fn kind(&self) -> ModelKind {
        self.descriptor.kind
    }

    pub fn p(&self) -> usize {
        self.descriptor.p
    }

    pub fn n(&self) -> usize {
        self.descriptor.n
    }

    pub fn buffer(&self) -> usize {
        self.descriptor.buffer
    }

    pub fn parity(&self) -> Parity {
        self.descriptor.parity
    }

    pub fn dim(&self) -> usize {
        self.d.dim()
    }

    pub fn d(&self) -> &Operator {
        &self.d
    }

    pub fn f(&self) -> &Operator {
        &self.f
    }

    pub fn abs_d(&self) -> &Operator {
        &self.abs_d
    }

    pub fn gamma(&self) -> Option<&Operator> {
        self.gamma.as_ref()
    }

    /// Γ, or the identity for odd models.
    pub fn gamma_or_identity(&self) -> Operator {
        self.gamma
            .clone()
            .unwrap_or_else(|| Operator::identity(self.dim()))
    }

    pub fn interior(&self) -> &[usize] {
        &self.interior
    }

    pub fn compress(&self, op: &Operator) -> Operator {
        op.compress(&self.interior)
    }

    /// Rigorous bound on the operator norm of the interior compression.
    pub fn interior_norm(&self, op: &Operator) -> f64 {
        self.compress(op).norm_bound()
    }

    /// Positions inside the interior whose modes lie in the disk |n| ≤ N
    /// (torus); every position otherwise. On these the leading eigenvalues of
    /// (1+D²)^{-s} coincide with those of the untruncated operator.
    pub fn prefix_positions(&self) -> Vec<usize> {
        match self.descriptor.kind {
            ModelKind::NcTorus { .. } => {
                let n = self.descriptor.n as i64;
                let side = (2 * self.m + 1) as usize;
                self.interior
                    .iter()
                    .enumerate()
                    .filter(|(_, &g)| {
                        let cell = g / 2;
                        let n1 = (cell / side) as i64 - self.m;
                        let n2 = (cell % side) as i64 - self.m;
                        n1 * n1 + n2 * n2 <= n * n
                    })
                    .map(|(pos, _)| pos)
                    .collect()
            }
            _ => (0..self.interior.len()).collect(),
        }
    }

    /// Restriction of an interior operator to the prefix positions.
    pub fn restrict_prefix(&self, interior_op: &Operator) -> Operator {
        match self.descriptor.kind {
            ModelKind::NcTorus { .. } => interior_op.compress(&self.prefix_positions()),
            _ => interior_op.clone(),
        }
    }

    pub fn true_prefix_len(&self) -> usize {
        self.prefix_positions().len()
    }

    pub fn generators(&self) -> Vec<(String, AlgebraElement)> {
        let k = self.kind();
        match k {
            ModelKind::Circle => vec![
                ("u".into(), AlgebraElement::word(k, [1, 0])),
                ("u*".into(), AlgebraElement::word(k, [-1, 0])),
            ],
            ModelKind::NcTorus { .. } => vec![
                ("U".into(), AlgebraElement::word(k, [1, 0])),
                ("V".into(), AlgebraElement::word(k, [0, 1])),
                ("U*".into(), AlgebraElement::word(k, [-1, 0])),
                ("V*".into(), AlgebraElement::word(k, [0, -1])),
            ],
            ModelKind::DiagonalToy { .. } => vec![
                ("g".into(), AlgebraElement::word(k, [1, 0])),
                ("g*".into(), AlgebraElement::word(k, [-1, 0])),
            ],
        }
    }

    fn check_model(&self, a: &AlgebraElement) -> Result<()> {
        if a.model != self.descriptor.kind {
            return Err(Error::MixedModels(a.model.id(), self.descriptor.kind.id()));
        }
        Ok(())
    }

    /// Matrix of a on the working space.
    pub fn realize(&self, a: &AlgebraElement) -> Result<Operator> {
        self.check_model(a)?;
        let band = a.band_width();
        if band > self.descriptor.buffer && !matches!(self.kind(), ModelKind::DiagonalToy { .. }) {
            return Err(Error::BandExceedsBuffer {
                band,
                buffer: self.descriptor.buffer,
            });
        }
        let theta = match self.kind() {
            ModelKind::NcTorus { theta } => theta,
            _ => 0.0,
        };
        let mut triplets = Vec::new();
        for (w, c) in &a.terms {
            let coeff = c.eval(theta);
            self.push_word(w, coeff, &mut triplets);
        }
        Ok(Operator::from_triplets(self.dim(), triplets)?.with_label("a"))
    }

    fn push_word(&self, w: &Word, coeff: C64, out: &mut Vec<(usize, usize, C64)>) {
        let m = self.m;
        match self.kind() {
            ModelKind::Circle => {
                for k in -m..=m {
                    let j = k + w[0];
                    if j.abs() <= m {
                        out.push(((j + m) as usize, (k + m) as usize, coeff));
                    }
                }
            }
            ModelKind::NcTorus { theta } => {
                for n1 in -m..=m {
                    let ph = coeff * phase(theta, w[1] * n1);
                    let t1 = n1 + w[0];
                    if t1.abs() > m {
                        continue;
                    }
                    for n2 in -m..=m {
                        let t2 = n2 + w[1];
                        if t2.abs() > m {
                            continue;
                        }
                        for s in 0..2 {
                            out.push((torus_index(m, t1, t2, s), torus_index(m, n1, n2, s), ph));
                        }
                    }
                }
            }
            ModelKind::DiagonalToy { phase: phi } => {
                for j in 0..self.dim() {
                    let x = (phi * (w[0] * j as i64) as f64).rem_euclid(1.0);
                    out.push((j, j, coeff * C64::from_polar(1.0, TAU * x)));
                }
            }
        }
    }

    /// ∂(a) = [D, a].
    pub fn partial_d(&self, a: &Operator) -> Result<Operator> {
        commutator(&self.d, a)
    }

    /// δ(a) = [|D|, a].
    pub fn delta(&self, a: &Operator) -> Result<Operator> {
        commutator(&self.abs_d, a)
    }

    /// [F, a].
    pub fn f_comm(&self, a: &Operator) -> Result<Operator> {
        commutator(&self.f, a)
    }

    /// q_n(a) = Σ_{k≤n} ‖δ^k(a)‖ + ‖δ^k(∂a)‖ on the interior.
    pub fn qc_seminorm(&self, a: &AlgebraElement, order: usize) -> Result<f64> {
        if order > QC_MAX_ORDER {
            return Err(Error::Contract(format!(
                "qc order {order} exceeds maximum {QC_MAX_ORDER}"
            )));
        }
        let mut x = self.realize(a)?;
        let mut y = self.partial_d(&x)?;
        let mut total = 0.0;
        for k in 0..=order {
            if k > 0 {
                x = self.delta(&x)?;
                y = self.delta(&y)?;
            }
            total += self.compress(&x).op_norm() + self.compress(&y).op_norm();
        }
        Ok(total)
    }

    /// |D|^s, which is diagonal in every model; Domain error at 0 for s < 0.
    pub fn abs_d_pow(&self, s: f64) -> Result<Operator> {
        let vals = self
            .abs_d
            .diagonal_values()
            .into_iter()
            .map(|v| {
                let y = v.re.powf(s);
                if y.is_finite() {
                    Ok(y)
                } else {
                    Err(Error::Domain { eigenvalue: v.re })
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(Operator::real_diagonal(vals))
    }

    /// D^{-1} = F|D|^{-1}.
    pub fn d_inverse(&self) -> Result<Operator> {
        self.f.try_mul(&self.abs_d_pow(-1.0)?)
    }

    /// (1 + D²)^{-s/2}.
    pub fn resolvent_power(&self, s: f64) -> Operator {
        Operator::real_diagonal(
            self.abs_d
                .diagonal_values()
                .into_iter()
                .map(|v| (1.0 + v.re * v.re).powf(-s / 2.0)),
        )
        .with_label(format!("(1+D^2)^(-{s}/2)"))
    }

    /// The model with D₀ = F(1+D²)^{1/2}, and D₁ = D₀ − D.
    pub fn invertible_double(&self) -> Result<(SpectralTripleModel, Operator)> {
        let root = Operator::real_diagonal(
            self.abs_d
                .diagonal_values()
                .into_iter()
                .map(|v| (1.0 + v.re * v.re).sqrt()),
        );
        let d0 = self.f.try_mul(&root)?.with_label("D0");
        let d1 = d0.try_sub(&self.d)?.with_label("D1");
        let mut doubled = self.clone();
        doubled.d = d0;
        doubled.abs_d = root.with_label("|D0|");
        doubled.descriptor.doubled = true;
        doubled.descriptor.name = format!("{}+double", self.descriptor.name);
        Ok((doubled, d1))
    }

    /// F(|D| + (1+|D|²)^{1/2})^{-1}.
    pub fn d1_closed_form(&self) -> Result<Operator> {
        let inv = Operator::real_diagonal(
            self.abs_d
                .diagonal_values()
                .into_iter()
                .map(|v| 1.0 / (v.re + (1.0 + v.re * v.re).sqrt())),
        );
        self.f.try_mul(&inv)
    }

    pub fn summability_report(&self) -> Result<SummabilityReport> {
        let p = self.p() as f64;
        let resolvent = self.compress(&self.resolvent_power(p));
        let mu = singular_values(&resolvent)?;
        let prefix = SingularSequence::new(mu.values()[..self.true_prefix_len()].to_vec())?;
        let resolvent = diagnose(&prefix, 1.0)?;
        let mut generators = Vec::new();
        for (name, g) in self.generators() {
            let x = self.realize(&g)?;
            let fc = self.compress(&self.f_comm(&x)?);
            let fd = self.compress(&self.f_comm(&self.delta(&x)?)?);
            generators.push(GeneratorSummability {
                name,
                f_comm_quasi_norm: quasi_norm_pinf(&singular_values(&fc)?, p)?,
                f_delta_quasi_norm: quasi_norm_pinf(&singular_values(&fd)?, p)?,
            });
        }
        Ok(SummabilityReport {
            model: self.descriptor.name.clone(),
            p: self.p(),
            resolvent,
            generators,
        })
    }

    /// Interior norms of ∂(ab) − ∂(a)b − a∂(b) and δ(ab) − δ(a)b − aδ(b).
    pub fn leibniz_defects(&self, a: &AlgebraElement, b: &AlgebraElement) -> Result<(f64, f64)> {
        let (x, y) = (self.realize(a)?, self.realize(b)?);
        let xy = self.realize(&a.mul(b)?)?;
        let mut out = [0.0; 2];
        for (slot, der) in out.iter_mut().zip([&self.d, &self.abs_d]) {
            let lhs = commutator(der, &xy)?;
            let rhs = commutator(der, &x)?
                .try_mul(&y)?
                .try_add(&x.try_mul(&commutator(der, &y)?)?)?;
            *slot = self.interior_norm(&lhs.try_sub(&rhs)?);
        }
        Ok((out[0], out[1]))
    }

    /// ‖[D,a] − ([F,δa]|D|^{-1} + δ(a)D^{-1} + [F,a])|D|‖ on the interior;
    /// needs invertible |D|.
    pub fn phase_split_defect(&self, a: &AlgebraElement) -> Result<f64> {
        let x = self.realize(a)?;
        let da = self.delta(&x)?;
        let inner = self
            .f_comm(&da)?
            .try_mul(&self.abs_d_pow(-1.0)?)?
            .try_add(&da.try_mul(&self.d_inverse()?)?)?
            .try_add(&self.f_comm(&x)?)?;
        let rhs = inner.try_mul(&self.abs_d)?;
        Ok(self.interior_norm(&self.partial_d(&x)?.try_sub(&rhs)?))
    }

    pub fn grading_report(&self) -> Result<Option<GradingReport>> {
        let Some(g) = &self.gamma else {
            return Ok(None);
        };
        let id = Operator::identity(self.dim());
        let mut generators: f64 = 0.0;
        for (_, a) in self.generators() {
            generators = generators.max(self.interior_norm(&commutator(g, &self.realize(&a)?)?));
        }
        Ok(Some(GradingReport {
            self_adjoint: self.interior_norm(&g.try_sub(&g.adjoint())?),
            involution: self.interior_norm(&g.try_mul(g)?.try_sub(&id)?),
            commutes_with_generators: generators,
            anticommutes_with_d: self.interior_norm(&crate::operators::anticommutator(g, &self.d)?),
            anticommutes_with_f: self.interior_norm(&crate::operators::anticommutator(g, &self.f)?),
        }))
    }

    /// ‖VU − e^{2πiθ}UV‖ on the interior (torus only).
    pub fn commutation_defect(&self) -> Result<f64> {
        let ModelKind::NcTorus { theta } = self.kind() else {
            return Err(Error::Contract(
                "commutation relation is defined on the torus only".into(),
            ));
        };
        let u = self.realize(&AlgebraElement::word(self.kind(), [1, 0]))?;
        let v = self.realize(&AlgebraElement::word(self.kind(), [0, 1]))?;
        let lhs = v.try_mul(&u)?;
        let rhs = u.try_mul(&v)?.scale(phase(theta, 1));
        Ok(self.interior_norm(&lhs.try_sub(&rhs)?))
    }

    /// Whether the q-twist is trivial, so symbolic coefficients may collapse q → 1.
    pub fn is_commutative(&self) -> bool {
        self.kind().is_commutative()
    }
}

fn torus_index(m: i64, n1: i64, n2: i64, s: usize) -> usize {
    let side = 2 * m + 1;
    ((((n1 + m) * side) + (n2 + m)) * 2) as usize + s
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GeneratorSummability {
    pub name: String,
    pub f_comm_quasi_norm: f64,
    pub f_delta_quasi_norm: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SummabilityReport {
    pub model: String,
    pub p: usize,
    /// Diagnostics of (1+D²)^{-p/2} at exponent 1.
    pub resolvent: IdealDiagnostics,
    pub generators: Vec<GeneratorSummability>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GradingReport {
    pub self_adjoint: f64,
    pub involution: f64,
    pub commutes_with_generators: f64,
    pub anticommutes_with_d: f64,
    /// Non-zero exactly when F fails to anticommute with Γ on ker D.
    pub anticommutes_with_f: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{eigenvalues, phase_modulus};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const EXACT: f64 = 1e-10;

    #[test]
    fn circle_basics() {
        let m = build_circle(16).unwrap();
        let u = m
            .realize(&AlgebraElement::word(ModelKind::Circle, [1, 0]))
            .unwrap();
        assert!(m.interior_norm(&m.partial_d(&u).unwrap().try_sub(&u).unwrap()) < EXACT);
        let fu = m.compress(&m.f_comm(&u).unwrap());
        let nz: Vec<_> = fu.iter().filter(|e| e.2.norm() > 0.0).collect();
        assert_eq!(nz.len(), 1);
        // row mode 0, column mode -1, value 2 (interior index = mode + N)
        assert_eq!((nz[0].0, nz[0].1), (16, 15));
        assert!((nz[0].2 - C64::new(2.0, 0.0)).norm() < EXACT);

        let r = m.compress(&m.resolvent_power(1.0));
        let mu = singular_values(&r).unwrap();
        let expect = [
            1.0,
            0.5f64.sqrt(),
            0.5f64.sqrt(),
            0.2f64.sqrt(),
            0.2f64.sqrt(),
        ];
        for (a, b) in mu.values().iter().zip(expect) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn circle_delta_of_shift() {
        let m = build_circle(10).unwrap();
        let u = m
            .realize(&AlgebraElement::word(ModelKind::Circle, [1, 0]))
            .unwrap();
        let du = m.compress(&m.delta(&u).unwrap());
        for (i, j, v) in du.iter() {
            let k = j as i64 - 10;
            assert_eq!(i, j + 1);
            assert_eq!(v.re, ((k + 1).abs() - k.abs()) as f64);
        }
    }

    #[test]
    fn closed_form_phase_matches_functional_calculus() {
        for m in [build_circle(8).unwrap(), build_nc_torus(8, 0.3).unwrap()] {
            let (f, abs) = phase_modulus(m.d()).unwrap();
            assert!(f.try_sub(m.f()).unwrap().max_abs() < 1e-12);
            assert!(abs.try_sub(m.abs_d()).unwrap().max_abs() < 1e-12);
        }
    }

    #[test]
    fn torus_relations() {
        let m0 = build_nc_torus(8, 0.0).unwrap();
        assert!(m0.commutation_defect().unwrap() < EXACT);
        let m = build_nc_torus(8, DEFAULT_THETA).unwrap();
        assert!(m.commutation_defect().unwrap() < EXACT);
        let g = m.grading_report().unwrap().unwrap();
        assert!(g.self_adjoint < EXACT && g.involution < EXACT);
        assert!(g.commutes_with_generators < EXACT && g.anticommutes_with_d < EXACT);
        // sign(0) = +1 breaks {Γ, F} = 0 on the two zero modes only
        assert!((g.anticommutes_with_f - 2.0).abs() < EXACT);
        let swap = ModelSpec::nc_torus(8, DEFAULT_THETA)
            .with_kernel_phase(KernelPhase::GradedSwap)
            .build()
            .unwrap();
        assert!(swap.grading_report().unwrap().unwrap().anticommutes_with_f < EXACT);
    }

    #[test]
    fn torus_commutators_of_generators() {
        let m = build_nc_torus(8, DEFAULT_THETA).unwrap();
        let k = m.kind();
        let u = m.realize(&AlgebraElement::word(k, [1, 0])).unwrap();
        let du = m.compress(&m.partial_d(&u).unwrap());
        for (i, j, v) in du.iter() {
            let expect = if i % 2 == 0 {
                C64::new(0.0, 1.0)
            } else {
                C64::new(0.0, -1.0)
            };
            assert_ne!(i % 2, j % 2);
            assert!((v - expect).norm() < EXACT);
        }
    }

    #[test]
    fn realize_examples() {
        let m = build_circle(8).unwrap();
        let k = m.kind();
        let one = m.realize(&AlgebraElement::one(k)).unwrap();
        assert!(one.try_sub(&Operator::identity(m.dim())).unwrap().max_abs() == 0.0);
        let u = AlgebraElement::word(k, [1, 0]);
        let prod = m
            .realize(&u)
            .unwrap()
            .try_mul(&m.realize(&u.adjoint()).unwrap())
            .unwrap();
        assert!(
            m.compress(&prod)
                .try_sub(&Operator::identity(17))
                .unwrap()
                .max_abs()
                == 0.0
        );
        assert_eq!(m.realize(&AlgebraElement::zero(k)).unwrap().nnz(), 0);
        let far = AlgebraElement::word(k, [5, 0]);
        assert!(matches!(
            m.realize(&far),
            Err(Error::BandExceedsBuffer { .. })
        ));
    }

    #[test]
    fn symbolic_products_match_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let spec = ModelSpec::nc_torus(8, DEFAULT_THETA).with_band(2);
        let m = spec.build().unwrap();
        for _ in 0..3 {
            let a = AlgebraElement::random(m.kind(), 1, 3, &mut rng);
            let b = AlgebraElement::random(m.kind(), 1, 3, &mut rng);
            let lhs = m.realize(&a.mul(&b).unwrap()).unwrap();
            let rhs = m
                .realize(&a)
                .unwrap()
                .try_mul(&m.realize(&b).unwrap())
                .unwrap();
            assert!(m.interior_norm(&lhs.try_sub(&rhs).unwrap()) < EXACT);
            let adj = m.realize(&a.adjoint()).unwrap();
            assert!(
                m.interior_norm(&adj.try_sub(&m.realize(&a).unwrap().adjoint()).unwrap()) < EXACT
            );
        }
    }

    #[test]
    fn leibniz_on_random_elements() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for spec in [
            ModelSpec::circle(12).with_band(2),
            ModelSpec::nc_torus(8, DEFAULT_THETA).with_band(2),
        ] {
            let m = spec.build().unwrap();
            let a = AlgebraElement::random(m.kind(), 1, 4, &mut rng);
            let b = AlgebraElement::random(m.kind(), 1, 4, &mut rng);
            let (d1, d2) = m.leibniz_defects(&a, &b).unwrap();
            assert!(d1 < EXACT && d2 < EXACT, "{d1} {d2}");
        }
    }

    #[test]
    fn toy_model_is_degenerate() {
        let m = build_diagonal_toy(1000, 3).unwrap();
        let g = m.realize(&AlgebraElement::word(m.kind(), [1, 0])).unwrap();
        assert_eq!(m.partial_d(&g).unwrap().max_abs(), 0.0);
        assert_eq!(m.delta(&g).unwrap().max_abs(), 0.0);
        assert_eq!(m.f_comm(&g).unwrap().max_abs(), 0.0);
        assert!(
            (m.qc_seminorm(&AlgebraElement::word(m.kind(), [1, 0]), 3)
                .unwrap()
                - 1.0)
                .abs()
                < 1e-9
        );
    }

    #[test]
    fn qc_seminorms() {
        let m = build_circle(16).unwrap();
        let k = m.kind();
        assert!((m.qc_seminorm(&AlgebraElement::one(k), 0).unwrap() - 1.0).abs() < 1e-9);
        let u = AlgebraElement::word(k, [1, 0]);
        let q0 = m.qc_seminorm(&u, 0).unwrap();
        for n in 1..=3 {
            assert!(m.qc_seminorm(&u, n).unwrap() <= 2f64.powi(n as i32) * q0 + 1e-9);
        }
        assert!(m.qc_seminorm(&u, 4).is_err());
    }

    #[test]
    fn invertible_double_examples() {
        let m = build_circle(32).unwrap();
        let (dm, d1) = m.invertible_double().unwrap();
        for (i, v) in dm.d().diagonal_values().iter().enumerate() {
            let k = i as f64 - 34.0;
            let s = if k >= 0.0 { 1.0 } else { -1.0 };
            assert!((v.re - s * (1.0 + k * k).sqrt()).abs() < 1e-12);
        }
        assert!(eigenvalues(dm.d())
            .unwrap()
            .values()
            .iter()
            .all(|z| z.norm() >= 1.0));
        assert!(d1.try_sub(&m.d1_closed_form().unwrap()).unwrap().max_abs() < EXACT);
        let q = quasi_norm_pinf(&singular_values(&m.compress(&d1)).unwrap(), 1.0).unwrap();
        assert!(q.is_finite() && q < 2.0);
        assert!(dm.f().try_sub(m.f()).unwrap().max_abs() == 0.0);
    }

    #[test]
    fn phase_split_identity_on_double() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for spec in [ModelSpec::circle(16), ModelSpec::nc_torus(8, DEFAULT_THETA)] {
            let (dm, _) = spec.build().unwrap().invertible_double().unwrap();
            let a = AlgebraElement::random(dm.kind(), 1, 3, &mut rng);
            assert!(dm.phase_split_defect(&a).unwrap() < 1e-9);
        }
    }

    #[test]
    fn summability_examples() {
        let r = build_circle(2048).unwrap().summability_report().unwrap();
        assert!((r.resolvent.fitted_decay_exponent - 1.0).abs() < 0.05);
        assert!(r.generators.iter().all(|g| g.f_comm_quasi_norm.is_finite()));
        let r = build_nc_torus(32, DEFAULT_THETA)
            .unwrap()
            .summability_report()
            .unwrap();
        assert!(
            (r.resolvent.fitted_decay_exponent - 1.0).abs() < 0.05,
            "{}",
            r.resolvent.fitted_decay_exponent
        );
        let r = build_diagonal_toy(100_000, 3)
            .unwrap()
            .summability_report()
            .unwrap();
        assert!((r.resolvent.fitted_decay_exponent - 1.0).abs() < 0.05);
    }

    #[test]
    fn descriptor_round_trips_through_json() {
        let m = build_nc_torus(8, DEFAULT_THETA).unwrap();
        let s = serde_json::to_string(m.descriptor()).unwrap();
        let back: ModelDescriptor = serde_json::from_str(&s).unwrap();
        assert_eq!(&back, m.descriptor());
    }
}
