//! Experiment configuration, check dispatch, reports and curated suites.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::hochschild::{
    appendix_identity_checks, bob_identity_check, boundary, builtin_chain, chern, chern_value,
    coboundary_duality_defect, heat_cycle_trace, is_cycle, main_theorem_check, model_partial_sums,
    model_window, nc_torus_volume_cycle, reduction_partial_sum_check, Chain, IDENTITY_TOL,
};
use crate::ideals::{
    log_fit, measurability_of_series, universal_measurability_test, DEFAULT_MEASURABILITY_TOL,
};
use crate::operators::{singular_values, Operator, C64};
use crate::traces::{
    dixmier_logmean, dixmier_logmean_series, heat_estimate, heat_xi, lemma_estimate_scalings,
    measurability_criterion_check, ExtendedLimitScheme, TraceEstimate,
};
use crate::triples::{
    AlgebraElement, GradingReport, KernelPhase, ModelKind, ModelSpec, QPoly, SpectralTripleModel,
    DEFAULT_THETA, TOY_PHASE,
};

/// Check names accepted in a config, each bound to one operation.
pub const CHECKS: &[&str] = &[
    "model_build",
    "is_cycle",
    "chern",
    "theta_independence",
    "eigen_sums",
    "heat",
    "dixmier",
    "measure",
    "reduce",
    "main_theorem",
    "concordance",
    "scheme_robustness",
    "bob_identity",
    "appendix_identities",
    "leibniz",
    "grading",
    "boundary_squared",
    "coboundary_duality",
    "diagonal_oracle",
];

/// Checks run by the `identity-suite` verb.
pub const IDENTITY_CHECKS: &[&str] = &[
    "boundary_squared",
    "bob_identity",
    "appendix_identities",
    "leibniz",
    "grading",
    "coboundary_duality",
];

/// Ratios used by the scheme robustness check.
pub const ROBUSTNESS_RATIOS: [f64; 3] = [1.5, 2.0, 3.0];

/// Largest spread of z over ROBUSTNESS_RATIOS.
pub const ROBUSTNESS_TOL: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// circle | nc-torus | toy
    pub name: String,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(default)]
    pub theta: Option<f64>,
    #[serde(default)]
    pub p: Option<usize>,
    #[serde(default)]
    pub band: Option<usize>,
    #[serde(default)]
    pub kernel_phase: KernelPhase,
}

impl ModelConfig {
    pub fn kind(&self) -> Result<ModelKind> {
        match self.name.as_str() {
            "circle" => Ok(ModelKind::Circle),
            "nc-torus" | "torus" => Ok(ModelKind::NcTorus {
                theta: self.theta.unwrap_or(DEFAULT_THETA),
            }),
            "toy" | "diagonal-toy" => Ok(ModelKind::DiagonalToy { phase: TOY_PHASE }),
            other => Err(Error::Config(format!(
                "unknown model `{other}` (circle | nc-torus | toy)"
            ))),
        }
    }

    pub fn spec(&self) -> Result<ModelSpec> {
        let kind = self.kind()?;
        let mut spec = match kind {
            ModelKind::Circle => ModelSpec::circle(self.n),
            ModelKind::NcTorus { theta } => ModelSpec::nc_torus(self.n, theta),
            ModelKind::DiagonalToy { .. } => ModelSpec::diagonal_toy(self.n, self.p.unwrap_or(1)),
        };
        if let Some(p) = self.p {
            spec = spec.with_p(p);
        }
        if let Some(b) = self.band {
            spec = spec.with_band(b);
        }
        Ok(spec.with_kernel_phase(self.kernel_phase))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ChainConfig {
    Builtin {
        builtin: String,
        #[serde(default)]
        kappa: Option<f64>,
    },
    Inline {
        inline: Value,
    },
}

impl ChainConfig {
    pub fn builtin(name: &str) -> Self {
        Self::Builtin {
            builtin: name.into(),
            kappa: None,
        }
    }

    pub fn resolve(&self, kind: ModelKind) -> Result<Chain> {
        match self {
            Self::Builtin { builtin, kappa } => match (builtin.as_str(), kappa) {
                ("torus-volume", Some(k)) => nc_torus_volume_cycle(kind, *k),
                (name, _) => builtin_chain(name, kind),
            },
            Self::Inline { inline } => Chain::from_json(kind, &inline.to_string()),
        }
    }
}

/// Builtin chain for a model when the config names none.
pub fn default_chain(kind: ModelKind, p: usize) -> Option<ChainConfig> {
    let name = match (kind, p) {
        (ModelKind::Circle, 1) => "circle-winding",
        (ModelKind::Circle, 2) => "circle-even",
        (ModelKind::NcTorus { .. }, 2) => "torus-volume",
        (ModelKind::NcTorus { .. }, 1) => "torus-odd",
        (ModelKind::DiagonalToy { .. }, 3) => "toy-cycle",
        _ => return None,
    };
    Some(ChainConfig::builtin(name))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "default_measurability")]
    pub measurability: f64,
    #[serde(default = "default_main")]
    pub main_theorem: f64,
}

fn default_measurability() -> f64 {
    DEFAULT_MEASURABILITY_TOL
}

fn default_main() -> f64 {
    crate::hochschild::MAIN_THEOREM_TOL
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            measurability: default_measurability(),
            main_theorem: default_main(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub model: ModelConfig,
    #[serde(default)]
    pub chain: Option<ChainConfig>,
    #[serde(default)]
    pub checks: Vec<String>,
    #[serde(default)]
    pub scheme: ExtendedLimitScheme,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<String>,
}

impl ExperimentConfig {
    pub fn new(name: &str, model: ModelConfig, checks: &[&str]) -> Self {
        Self {
            name: name.into(),
            model,
            chain: None,
            checks: checks.iter().map(|s| s.to_string()).collect(),
            scheme: ExtendedLimitScheme::default(),
            tolerances: Tolerances::default(),
            seed: 0,
            output: None,
        }
    }

    pub fn with_chain(mut self, chain: ChainConfig) -> Self {
        self.chain = Some(chain);
        self
    }

    /// Parse JSON; errors carry the field path and line/column.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let inner = e.inner();
            Error::Config(format!("{inner}, field `{}`", e.path()))
        })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        for c in &self.checks {
            if !CHECKS.contains(&c.as_str()) {
                return Err(Error::Config(format!("unknown check `{c}`")));
            }
        }
        self.model.kind()?;
        Ok(())
    }
}

/// Named configs shipped with the crate.
pub fn builtin_config(name: &str) -> Result<ExperimentConfig> {
    let model = |name: &str, n: usize| ModelConfig {
        name: name.into(),
        n,
        theta: None,
        p: None,
        band: None,
        kernel_phase: KernelPhase::PlusOne,
    };
    let main = [
        "is_cycle",
        "chern",
        "eigen_sums",
        "heat",
        "dixmier",
        "measure",
        "reduce",
        "main_theorem",
        "concordance",
        "scheme_robustness",
    ];
    Ok(match name {
        "circle-character" | "circle-charater" => {
            ExperimentConfig::new("circle-character", model("circle", 2048), &main)
        }
        "torus-character" => {
            let mut checks = main.to_vec();
            checks.push("theta_independence");
            ExperimentConfig::new("torus-character", model("nc-torus", 64), &checks)
        }
        "circle-parity" => {
            let mut m = model("circle", 1024);
            m.p = Some(2);
            m.band = Some(2);
            ExperimentConfig::new("circle-parity", m, &["is_cycle", "main_theorem"])
        }
        "torus-parity" => {
            let mut m = model("nc-torus", 64);
            m.p = Some(1);
            ExperimentConfig::new("torus-parity", m, &["is_cycle", "main_theorem"])
        }
        "diagonal-oracle" => {
            let mut m = model("toy", 100_000);
            m.p = Some(1);
            ExperimentConfig::new("diagonal-oracle", m, &["diagonal_oracle"])
        }
        "toy" => {
            let mut m = model("toy", 4096);
            m.p = Some(3);
            ExperimentConfig::new(
                "toy",
                m,
                &["is_cycle", "chern", "main_theorem", "bob_identity"],
            )
        }
        other => return Err(Error::Config(format!("no builtin config `{other}`"))),
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckRecord {
    pub name: String,
    pub inputs_digest: String,
    pub pass: bool,
    pub z: BTreeMap<String, [f64; 2]>,
    pub residuals: BTreeMap<String, f64>,
    pub details: Value,
}

/// Tabulated curve written as CSV and gnuplot data.
#[derive(Clone, Debug)]
pub struct Curve {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Curve {
    fn new(name: &str, columns: &[&str]) -> Self {
        Self {
            name: name.into(),
            columns: columns.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn from_complex(name: &str, x: &str, samples: &[(f64, C64)]) -> Self {
        let mut c = Self::new(name, &[x, "re", "im"]);
        c.rows = samples.iter().map(|(x, v)| vec![*x, v.re, v.im]).collect();
        c
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.columns.join(",");
        s.push('\n');
        for r in &self.rows {
            let line: Vec<String> = r.iter().map(|v| format!("{v:e}")).collect();
            s.push_str(&line.join(","));
            s.push('\n');
        }
        s
    }

    pub fn to_dat(&self) -> String {
        let mut s = format!("# {}\n", self.columns.join(" "));
        for r in &self.rows {
            let line: Vec<String> = r.iter().map(|v| format!("{v:e}")).collect();
            s.push_str(&line.join(" "));
            s.push('\n');
        }
        s
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Environment {
    pub package: String,
    pub version: String,
    pub os: String,
    pub arch: String,
}

impl Environment {
    pub fn current() -> Self {
        Self {
            package: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
        }
    }
}

/// Deterministic given config and seed; runtimes live in `timings`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Report {
    pub config: String,
    pub seed: u64,
    pub environment: Environment,
    pub checks: Vec<CheckRecord>,
    pub pass: bool,
}

impl Report {
    pub fn markdown(&self) -> String {
        let mut s = format!(
            "# {}\n\nseed {}, {} checks, ",
            self.config,
            self.seed,
            self.checks.len()
        );
        s.push_str(if self.pass {
            "all pass\n\n"
        } else {
            "FAILURES\n\n"
        });
        s.push_str("| check | result | z | residuals |\n|---|---|---|---|\n");
        for c in &self.checks {
            let z: Vec<String> =
                c.z.iter()
                    .map(|(k, v)| format!("{k} = {}", fmt_c(v)))
                    .collect();
            let r: Vec<String> = c
                .residuals
                .iter()
                .map(|(k, v)| format!("{k} = {v:.3e}"))
                .collect();
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} |",
                c.name,
                if c.pass { "pass" } else { "FAIL" },
                z.join("; "),
                r.join("; ")
            );
        }
        s
    }
}

fn fmt_c(v: &[f64; 2]) -> String {
    format!("{:.6}{:+.6}i", v[0], v[1])
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub report: Report,
    pub curves: Vec<Curve>,
    /// (check, seconds)
    pub timings: Vec<(String, f64)>,
}

impl RunOutput {
    /// report.json, report.md, timings.csv and one .csv/.dat pair per curve.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(
            dir.join("report.json"),
            serde_json::to_string_pretty(&self.report)? + "\n",
        )?;
        fs::write(dir.join("report.md"), self.report.markdown())?;
        let mut t = String::from("check,seconds\n");
        for (name, secs) in &self.timings {
            let _ = writeln!(t, "{name},{secs:.6}");
        }
        fs::write(dir.join("timings.csv"), t)?;
        for c in &self.curves {
            let stem = c.name.replace([':', '/'], "-");
            fs::write(dir.join(format!("{stem}.csv")), c.to_csv())?;
            fs::write(dir.join(format!("{stem}.dat")), c.to_dat())?;
        }
        Ok(())
    }
}

struct Outcome {
    pass: bool,
    z: BTreeMap<String, [f64; 2]>,
    residuals: BTreeMap<String, f64>,
    details: Value,
    curves: Vec<Curve>,
}

impl Outcome {
    fn new(pass: bool, details: Value) -> Self {
        Self {
            pass,
            z: BTreeMap::new(),
            residuals: BTreeMap::new(),
            details,
            curves: Vec::new(),
        }
    }

    fn z(mut self, k: &str, v: C64) -> Self {
        self.z.insert(k.into(), [v.re, v.im]);
        self
    }

    fn residual(mut self, k: &str, v: f64) -> Self {
        self.residuals.insert(k.into(), v);
        self
    }

    fn curve(mut self, c: Curve) -> Self {
        self.curves.push(c);
        self
    }
}

struct Context<'a> {
    config: &'a ExperimentConfig,
    model: SpectralTripleModel,
    chain: Option<Chain>,
}

impl Context<'_> {
    fn chain(&self) -> Result<&Chain> {
        self.chain.as_ref().ok_or_else(|| {
            Error::Config(format!(
                "check needs a chain; none given for {}",
                self.model.kind().id()
            ))
        })
    }

    /// Ω(c)(1+D²)^{-p/2} on the interior together with Ω(c) and V.
    fn pairing(&self) -> Result<(Operator, Operator, Operator)> {
        let om = crate::hochschild::omega(self.chain()?, &self.model)?;
        let v = self
            .model
            .compress(&self.model.resolvent_power(self.model.p() as f64));
        let t = om.try_mul(&v)?.with_label("Omega(c)(1+D^2)^(-p/2)");
        Ok((om, v, t))
    }
}

fn to_value<T: Serialize>(v: &T) -> Result<Value> {
    Ok(serde_json::to_value(v)?)
}

fn digest(config: &ExperimentConfig, check: &str) -> Result<String> {
    let input = json!({
        "model": config.model,
        "chain": config.chain,
        "check": check,
        "scheme": config.scheme,
        "tolerances": config.tolerances,
        "seed": config.seed,
    });
    let bytes = Sha256::digest(serde_json::to_vec(&input)?);
    Ok(bytes.iter().map(|b| format!("{b:02x}")).collect())
}

/// Builds the model once and runs the checks in parallel; records keep the
/// config order.
pub fn run(config: &ExperimentConfig) -> Result<RunOutput> {
    config.validate()?;
    let spec = config.model.spec()?;
    let model = spec.build()?;
    let chain_cfg = config
        .chain
        .clone()
        .or_else(|| default_chain(model.kind(), model.p()));
    let chain = chain_cfg
        .as_ref()
        .map(|c| c.resolve(model.kind()))
        .transpose()?;
    let ctx = Context {
        config,
        model,
        chain,
    };
    let results: Vec<Result<(CheckRecord, Vec<Curve>, f64)>> = config
        .checks
        .par_iter()
        .map(|name| {
            let start = Instant::now();
            let out = run_check(&ctx, name)?;
            let secs = start.elapsed().as_secs_f64();
            let record = CheckRecord {
                name: name.clone(),
                inputs_digest: digest(config, name)?,
                pass: out.pass,
                z: out.z,
                residuals: out.residuals,
                details: out.details,
            };
            let curves = out
                .curves
                .into_iter()
                .map(|mut c| {
                    c.name = format!("{}-{}", name, c.name);
                    c
                })
                .collect();
            Ok((record, curves, secs))
        })
        .collect();
    let mut checks = Vec::new();
    let mut curves = Vec::new();
    let mut timings = Vec::new();
    for r in results {
        let (rec, cs, secs) = r?;
        timings.push((rec.name.clone(), secs));
        checks.push(rec);
        curves.extend(cs);
    }
    let pass = checks.iter().all(|c| c.pass);
    Ok(RunOutput {
        report: Report {
            config: config.name.clone(),
            seed: config.seed,
            environment: Environment::current(),
            checks,
            pass,
        },
        curves,
        timings,
    })
}

fn run_check(ctx: &Context<'_>, name: &str) -> Result<Outcome> {
    let m = &ctx.model;
    let cfg = ctx.config;
    let tol = cfg.tolerances;
    match name {
        "model_build" => {
            let s = m.summability_report()?;
            let pass = s.resolvent.verdicts["l1inf"] || s.resolvent.verdicts["m1inf"];
            Ok(Outcome::new(
                pass,
                json!({"descriptor": m.descriptor(), "summability": s}),
            ))
        }
        "is_cycle" => {
            let c = ctx.chain()?;
            let ok = is_cycle(c)?;
            Ok(Outcome::new(
                ok,
                json!({"degree": c.degree(), "terms": c.len(), "cycle": ok}),
            ))
        }
        "chern" => {
            let r = chern(ctx.chain()?, m)?;
            let mut curve = Curve::new("convergence", &["N", "re", "im"]);
            curve.rows = r
                .convergence
                .iter()
                .map(|(n, v)| vec![*n as f64, v.re, v.im])
                .collect();
            Ok(Outcome::new(r.increments_decreasing, to_value(&r)?)
                .z("chern", r.value)
                .z("chern_extrapolated", r.extrapolated)
                .curve(curve))
        }
        "theta_independence" => {
            let ModelKind::NcTorus { theta } = m.kind() else {
                return Err(Error::Config("theta_independence needs the torus".into()));
            };
            let other = if theta == 0.0 { DEFAULT_THETA } else { 0.0 };
            let spec = ModelConfig {
                theta: Some(other),
                ..cfg.model.clone()
            };
            let m2 = spec.spec()?.build()?;
            let chain_cfg = cfg
                .chain
                .clone()
                .or_else(|| default_chain(m2.kind(), m2.p()));
            let c2 = chain_cfg
                .ok_or_else(|| Error::Config("no chain".into()))?
                .resolve(m2.kind())?;
            let (a, b) = (chern_value(ctx.chain()?, m)?, chern_value(&c2, &m2)?);
            let rel = (a - b).norm() / a.norm().max(b.norm()).max(f64::MIN_POSITIVE);
            Ok(Outcome::new(
                rel <= 0.02,
                json!({"theta": [theta, other], "relative_gap": rel}),
            )
            .z("chern", a)
            .z("chern_other_theta", b)
            .residual("relative_gap", rel))
        }
        "eigen_sums" => {
            let (_, _, t) = ctx.pairing()?;
            let series = model_partial_sums(&t, m)?;
            let verdict = measurability_of_series(&series, tol.measurability)?;
            let mut curve = Curve::new("partial_sums", &["n", "re_sum", "im_sum"]);
            curve.rows = series
                .sums()
                .iter()
                .enumerate()
                .map(|(n, s)| vec![n as f64, s.re, s.im])
                .collect();
            let fit = verdict.fit().clone();
            Ok(Outcome::new(verdict.is_measurable(), to_value(&verdict)?)
                .z("z_spec", fit.z)
                .residual("fit", fit.residual_sup)
                .curve(curve))
        }
        "heat" => {
            let r = heat_cycle_trace(ctx.chain()?, m, None)?;
            Ok(
                Outcome::new(r.residual_sup <= tol.measurability, to_value(&r)?)
                    .z("z_heat_cycle", r.z)
                    .residual("fit", r.residual_sup)
                    .curve(Curve::from_complex("heat_cycle", "s", &r.samples)),
            )
        }
        "dixmier" => {
            let (_, _, t) = ctx.pairing()?;
            let d = dixmier_logmean_series(&model_partial_sums(&t, m)?, &cfg.scheme)?;
            Ok(estimate_outcome("z_dixmier", &d, tol.measurability)?
                .curve(Curve::from_complex("logmean", "n", &d.samples)))
        }
        "measure" => {
            let (om, v, _) = ctx.pairing()?;
            let r = measurability_criterion_check(
                &m.restrict_prefix(&om),
                &m.restrict_prefix(&v),
                crate::hochschild::HEAT_ALPHA,
                Some(model_window(m)),
            )?;
            Ok(Outcome::new(r.pass, to_value(&r)?)
                .z("z_heat", r.z_heat.z)
                .z("z_spec", r.z_spec)
                .residual("heat", r.z_heat.residual_sup)
                .residual("spec", r.spec_residual)
                .curve(Curve::from_complex("heat", "n", &r.z_heat.samples)))
        }
        "reduce" => {
            let r = reduction_partial_sum_check(ctx.chain()?, m)?;
            Ok(Outcome::new(r.pass, to_value(&r)?)
                .z("difference", r.difference.z)
                .z("omega", r.omega_fit.z)
                .z("w", r.w_fit.z)
                .residual("difference", r.difference.residual_sup))
        }
        "main_theorem" => {
            let r = main_theorem_check(ctx.chain()?, m, tol.main_theorem)?;
            let mut o = Outcome::new(r.pass, to_value(&r)?)
                .z("chern", r.chern.value)
                .z("z_spec", r.z_spec)
                .z("z_dixmier", r.dixmier.z)
                .residual("spec", r.spec_fit.residual_sup)
                .residual("dixmier", r.dixmier.residual_sup);
            if let Some(c) = &r.criterion {
                o = o
                    .z("z_heat", c.z_heat.z)
                    .residual("heat", c.z_heat.residual_sup);
            }
            Ok(o)
        }
        "concordance" => concordance(ctx),
        "scheme_robustness" => {
            let (_, _, t) = ctx.pairing()?;
            let (values, spread) = scheme_spread(&model_partial_sums(&t, m)?, &cfg.scheme)?;
            let mut o = Outcome::new(
                spread < ROBUSTNESS_TOL,
                json!({"spread": spread, "tolerance": ROBUSTNESS_TOL}),
            );
            for (r, z) in values {
                o = o.z(&format!("r={r}"), z);
            }
            Ok(o.residual("spread", spread))
        }
        "bob_identity" => {
            let r = bob_identity_check(ctx.chain()?, m)?;
            Ok(Outcome::new(r.pass, to_value(&r)?).residual("defect", r.defect))
        }
        "appendix_identities" => {
            let mut reports = Vec::new();
            for (_, a) in m.generators() {
                for (_, b) in m.generators() {
                    reports.extend(appendix_identity_checks(&a, &b, m)?);
                }
            }
            let worst = reports.iter().map(|r| r.defect).fold(0.0, f64::max);
            Ok(Outcome::new(
                reports.iter().all(|r| r.pass),
                json!({"pairs": reports.len() / 2}),
            )
            .residual("defect", worst))
        }
        "leibniz" => {
            let mut worst: f64 = 0.0;
            for (_, a) in m.generators() {
                for (_, b) in m.generators() {
                    let (d, ad) = m.leibniz_defects(&a, &b)?;
                    worst = worst.max(d).max(ad);
                }
            }
            Ok(Outcome::new(worst <= IDENTITY_TOL, Value::Null).residual("defect", worst))
        }
        "grading" => match m.grading_report()? {
            None => Ok(Outcome::new(true, json!({"grading": "odd model"}))),
            Some(g) => {
                let worst = grading_defect(&g);
                Ok(Outcome::new(worst <= IDENTITY_TOL, to_value(&g)?)
                    .residual("defect", worst)
                    .residual("anticommutes_with_f", g.anticommutes_with_f))
            }
        },
        "boundary_squared" => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut failures = 0;
            let trials = 20;
            for t in 0..trials {
                let c = random_chain(m.kind(), 2 + t % 3, 4, &mut rng)?;
                if !boundary(&boundary(&c)?)?.is_empty() {
                    failures += 1;
                }
            }
            Ok(Outcome::new(
                failures == 0,
                json!({"trials": trials, "failures": failures, "max_degree": 4}),
            ))
        }
        "coboundary_duality" => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
            let mut worst: f64 = 0.0;
            for _ in 0..3 {
                let c = random_band_one_chain(m.kind(), m.p(), &mut rng)?;
                worst = worst.max(coboundary_duality_defect(&c, m)?);
            }
            Ok(Outcome::new(worst <= 1e-9, json!({"trials": 3})).residual("defect", worst))
        }
        "diagonal_oracle" => {
            let r = diagonal_oracle(m.n())?;
            let mut o = Outcome::new(r.pass, to_value(&r)?);
            for (k, v) in &r.values {
                o = o.z(k, C64::new(v[0], v[1]));
            }
            Ok(o)
        }
        other => Err(Error::Config(format!("unknown check `{other}`"))),
    }
}

fn estimate_outcome(key: &str, e: &TraceEstimate, tol: f64) -> Result<Outcome> {
    Ok(Outcome::new(e.residual_sup <= tol, to_value(e)?)
        .z(key, e.z)
        .residual(key, e.residual_sup))
}

fn spread(zs: &[C64]) -> f64 {
    let mut s: f64 = 0.0;
    for (i, a) in zs.iter().enumerate() {
        for b in &zs[i + 1..] {
            s = s.max((a - b).norm());
        }
    }
    s
}

/// Largest defect among the defining relations Γ = Γ*, Γ² = 1, [Γ, a] = 0
/// and {Γ, D} = 0. {Γ, F} = 0 follows from these only for invertible D and
/// is reported separately.
pub fn grading_defect(g: &GradingReport) -> f64 {
    [
        g.self_adjoint,
        g.involution,
        g.commutes_with_generators,
        g.anticommutes_with_d,
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConcordanceEstimate {
    pub method: String,
    pub z: C64,
    pub residual: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConcordancePair {
    pub pair: (String, String),
    pub gap: f64,
    pub budget: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConcordanceReport {
    pub estimates: Vec<ConcordanceEstimate>,
    pub pairs: Vec<ConcordancePair>,
    /// Why the heat estimate is missing, if it is.
    pub heat_note: Option<String>,
    pub pass: bool,
}

/// Partial-sum fit, heat fit and Dixmier log-mean of φ(AV), compared
/// pairwise against the sum of their residuals.
pub fn estimator_concordance(
    a: &Operator,
    v: &Operator,
    scheme: &ExtendedLimitScheme,
) -> Result<ConcordanceReport> {
    let series = crate::ideals::eigenvalue_partial_sums(&a.try_mul(v)?)?;
    let spec = log_fit(&series, crate::ideals::FitWindow::default_for(series.len()))?;
    let dix = dixmier_logmean_series(&series, scheme)?;
    let mut estimates = vec![ConcordanceEstimate {
        method: "partial_sum".into(),
        z: spec.z,
        residual: spec.residual_sup,
    }];
    let heat_note = match heat_estimate(a, v, crate::hochschild::HEAT_ALPHA) {
        Ok(h) => {
            estimates.push(ConcordanceEstimate {
                method: "heat".into(),
                z: h.z,
                residual: h.residual_sup,
            });
            None
        }
        Err(e) => Some(e.to_string()),
    };
    estimates.push(ConcordanceEstimate {
        method: "dixmier".into(),
        z: dix.z,
        residual: dix.residual_sup,
    });
    let mut pairs = Vec::new();
    for i in 0..estimates.len() {
        for j in i + 1..estimates.len() {
            pairs.push(ConcordancePair {
                pair: (estimates[i].method.clone(), estimates[j].method.clone()),
                gap: (estimates[i].z - estimates[j].z).norm(),
                budget: estimates[i].residual + estimates[j].residual,
            });
        }
    }
    let pass = estimates.len() == 3 && pairs.iter().all(|p| p.gap <= p.budget);
    Ok(ConcordanceReport {
        estimates,
        pairs,
        heat_note,
        pass,
    })
}

fn concordance(ctx: &Context<'_>) -> Result<Outcome> {
    let m = &ctx.model;
    let (om, v, _) = ctx.pairing()?;
    let r = estimator_concordance(
        &m.restrict_prefix(&om),
        &m.restrict_prefix(&v),
        &ctx.config.scheme,
    )?;
    let mut o = Outcome::new(r.pass, to_value(&r)?);
    for e in &r.estimates {
        o = o.z(&e.method, e.z).residual(&e.method, e.residual);
    }
    Ok(o)
}

/// Dixmier log-mean under the base scheme and each of ROBUSTNESS_RATIOS,
/// with the largest pairwise distance.
pub fn scheme_spread(
    series: &crate::ideals::PartialSumSeries,
    base: &ExtendedLimitScheme,
) -> Result<(Vec<(f64, C64)>, f64)> {
    let mut out = vec![(base.ratio, dixmier_logmean_series(series, base)?.z)];
    for r in ROBUSTNESS_RATIOS {
        let scheme = ExtendedLimitScheme { ratio: r, ..*base };
        out.push((r, dixmier_logmean_series(series, &scheme)?.z));
    }
    let zs: Vec<C64> = out.iter().map(|x| x.1).collect();
    Ok((out, spread(&zs)))
}

fn random_chain(
    kind: ModelKind,
    degree: usize,
    terms: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Chain> {
    let mut c = Chain::zero(kind, degree);
    for _ in 0..terms {
        let tensor: Vec<[i64; 2]> = (0..=degree)
            .map(|_| [rng.random_range(-2..=2), rng.random_range(-2..=2)])
            .collect();
        let coeff = QPoly::monomial(
            C64::new(rng.random_range(-3..=3) as f64, 0.0),
            rng.random_range(-1..=1),
        );
        c.add_term(coeff, tensor)?;
    }
    Ok(c)
}

fn random_band_one_chain(kind: ModelKind, degree: usize, rng: &mut ChaCha8Rng) -> Result<Chain> {
    let mut c = Chain::zero(kind, degree);
    for _ in 0..3 {
        let tensor: Vec<[i64; 2]> = (0..=degree)
            .map(|_| match kind {
                ModelKind::NcTorus { .. } => {
                    if rng.random_bool(0.5) {
                        [rng.random_range(-1..=1), 0]
                    } else {
                        [0, rng.random_range(-1..=1)]
                    }
                }
                _ => [rng.random_range(-1..=1), 0],
            })
            .collect();
        c.add_term(
            QPoly::constant(C64::new(rng.random_range(-2..=2) as f64, 1.0)),
            tensor,
        )?;
    }
    Ok(c)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiagonalOracleReport {
    pub n: usize,
    /// Estimates keyed by name, as [re, im].
    pub values: BTreeMap<String, [f64; 2]>,
    pub lemma_slopes: Vec<(f64, f64, f64)>,
    pub failures: Vec<String>,
    pub pass: bool,
}

/// V = diag(1/(k+1)) and the alternating A = diag((−1)^k) through every
/// estimator: z = 1 ± 0.05, lemma slopes within 0.05 of 1−α and 1, and
/// z = 0 ± 0.02 for the alternating pairing.
pub fn diagonal_oracle(n: usize) -> Result<DiagonalOracleReport> {
    let v = Operator::real_diagonal((0..n).map(|k| 1.0 / (k as f64 + 1.0))).with_label("V");
    let alt = Operator::real_diagonal((0..n).map(|k| if k % 2 == 0 { 1.0 } else { -1.0 }))
        .with_label("A");
    let scheme = ExtendedLimitScheme::default();
    let mut values = BTreeMap::new();
    let mut failures = Vec::new();
    let mut record = |name: &str, z: C64, target: f64, tol: f64| {
        values.insert(name.to_string(), [z.re, z.im]);
        if (z - C64::new(target, 0.0)).norm() > tol {
            failures.push(format!("{name} = {z:.4} not within {tol} of {target}"));
        }
    };
    let mu = singular_values(&v)?;
    record("dixmier", dixmier_logmean(&mu, &scheme)?.z, 1.0, 0.05);
    record("heat_xi", heat_xi(&v, &scheme)?.z, 1.0, 0.05);
    record(
        "heat",
        heat_estimate(&Operator::identity(n), &v, 2.0)?.z,
        1.0,
        0.05,
    );
    let av = alt.try_mul(&v)?;
    let z = universal_measurability_test(&av, DEFAULT_MEASURABILITY_TOL)?
        .fit()
        .z;
    record("alternating_partial_sum", z, 0.0, 0.02);
    record(
        "alternating_heat",
        heat_estimate(&alt, &v, 2.0)?.z,
        0.0,
        0.02,
    );
    let series = crate::ideals::eigenvalue_partial_sums(&av)?;
    record(
        "alternating_dixmier",
        dixmier_logmean_series(&series, &scheme)?.z,
        0.0,
        0.02,
    );
    let mut lemma_slopes = Vec::new();
    for alpha in [1.5, 2.0] {
        let r = lemma_estimate_scalings(&v, alpha, None)?;
        if (r.tail_slope - (1.0 - alpha)).abs() > 0.05 || (r.count_slope - 1.0).abs() > 0.05 {
            failures.push(format!(
                "alpha {alpha}: slopes {:.4}, {:.4} vs {}, 1",
                r.tail_slope,
                r.count_slope,
                1.0 - alpha
            ));
        }
        lemma_slopes.push((alpha, r.tail_slope, r.count_slope));
    }
    Ok(DiagonalOracleReport {
        n,
        pass: failures.is_empty(),
        values,
        lemma_slopes,
        failures,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuiteName {
    Quick,
    Full,
}

impl std::str::FromStr for SuiteName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quick" => Ok(Self::Quick),
            "full" => Ok(Self::Full),
            other => Err(Error::Config(format!(
                "unknown suite `{other}` (quick | full)"
            ))),
        }
    }
}

/// Configs of a curated suite. Quick stays at N ≤ 512 for dense models.
pub fn suite_configs(name: SuiteName) -> Vec<ExperimentConfig> {
    let (circle_n, torus_n) = match name {
        SuiteName::Quick => (512, 40),
        SuiteName::Full => (2048, 64),
    };
    let model = |name: &str, n: usize| ModelConfig {
        name: name.into(),
        n,
        theta: None,
        p: None,
        band: None,
        kernel_phase: KernelPhase::PlusOne,
    };
    let mut out = Vec::new();
    out.push(ExperimentConfig::new(
        "circle-algebra",
        model("circle", 256),
        IDENTITY_CHECKS,
    ));
    let mut torus_algebra = IDENTITY_CHECKS.to_vec();
    torus_algebra.push("is_cycle");
    out.push(ExperimentConfig::new(
        "torus-algebra",
        model("nc-torus", 32),
        &torus_algebra,
    ));
    out.push(ExperimentConfig::new(
        "diagonal-oracle",
        ModelConfig {
            p: Some(1),
            ..model("toy", 100_000)
        },
        &["diagonal_oracle"],
    ));
    for base in [
        "circle-character",
        "torus-character",
        "circle-parity",
        "torus-parity",
    ] {
        let mut c = builtin_config(base).expect("builtin");
        c.model.n = if base.starts_with("circle") {
            circle_n
        } else {
            torus_n
        };
        out.push(c);
    }
    out
}

/// Runs every config of the suite; check names are prefixed by the config.
pub fn run_suite(name: SuiteName) -> Result<RunOutput> {
    let mut checks = Vec::new();
    let mut curves = Vec::new();
    let mut timings = Vec::new();
    for cfg in suite_configs(name) {
        let out = run(&cfg)?;
        for mut c in out.report.checks {
            c.name = format!("{}:{}", cfg.name, c.name);
            checks.push(c);
        }
        for mut c in out.curves {
            c.name = format!("{}-{}", cfg.name, c.name);
            curves.push(c);
        }
        timings.extend(
            out.timings
                .into_iter()
                .map(|(n, s)| (format!("{}:{n}", cfg.name), s)),
        );
    }
    let pass = checks.iter().all(|c| c.pass);
    Ok(RunOutput {
        report: Report {
            config: format!(
                "suite-{}",
                if name == SuiteName::Quick {
                    "quick"
                } else {
                    "full"
                }
            ),
            seed: 0,
            environment: Environment::current(),
            checks,
            pass,
        },
        curves,
        timings,
    })
}

/// Unit element, generators and their pairwise products, used by the CLI.
pub fn sample_elements(kind: ModelKind) -> Vec<AlgebraElement> {
    let mut out = vec![AlgebraElement::one(kind)];
    match kind {
        ModelKind::NcTorus { .. } => {
            out.push(AlgebraElement::word(kind, [1, 0]));
            out.push(AlgebraElement::word(kind, [0, 1]));
        }
        _ => out.push(AlgebraElement::word(kind, [1, 0])),
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(name: &str, n: usize, checks: &[&str]) -> ExperimentConfig {
        ExperimentConfig::new(
            "t",
            ModelConfig {
                name: name.into(),
                n,
                theta: None,
                p: None,
                band: None,
                kernel_phase: KernelPhase::PlusOne,
            },
            checks,
        )
    }

    #[test]
    fn config_errors_name_the_field() {
        let err = ExperimentConfig::from_json(
            r#"{"name": "x", "model": {"name": "circle", "N": "big"}}"#,
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("model.N") && msg.contains("line 1"), "{msg}");
        let cfg = small("circle", 64, &["no_such_check"]);
        assert!(matches!(run(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn empty_check_list_passes() {
        let out = run(&small("circle", 16, &[])).unwrap();
        assert!(out.report.pass && out.report.checks.is_empty());
    }

    #[test]
    fn circle_checks_and_determinism() {
        let cfg = small(
            "circle",
            256,
            &[
                "chern",
                "eigen_sums",
                "bob_identity",
                "grading",
                "boundary_squared",
            ],
        );
        let a = run(&cfg).unwrap();
        assert!(a.report.pass, "{}", a.report.markdown());
        let b = run(&cfg).unwrap();
        assert_eq!(
            serde_json::to_string(&a.report).unwrap(),
            serde_json::to_string(&b.report).unwrap()
        );
        let z = a.report.checks[0].z["chern"];
        assert!((z[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn outputs_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let out = run(&small("circle", 64, &["eigen_sums"])).unwrap();
        out.write(dir.path()).unwrap();
        for f in [
            "report.json",
            "report.md",
            "timings.csv",
            "eigen_sums-partial_sums.csv",
            "eigen_sums-partial_sums.dat",
        ] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let csv = fs::read_to_string(dir.path().join("eigen_sums-partial_sums.csv")).unwrap();
        assert!(csv.starts_with("n,re_sum,im_sum\n"));
    }

    #[test]
    fn builtin_configs_parse_round_trip() {
        for name in [
            "circle-character",
            "circle-charater",
            "torus-character",
            "circle-parity",
            "torus-parity",
            "diagonal-oracle",
            "toy",
        ] {
            let c = builtin_config(name).unwrap();
            c.validate().unwrap();
            let back = ExperimentConfig::from_json(&serde_json::to_string(&c).unwrap()).unwrap();
            assert_eq!(back, c);
        }
        assert!(builtin_config("nope").is_err());
    }

    #[test]
    fn inline_chain_config() {
        let text = r#"{"name": "inline", "model": {"name": "circle", "N": 64},
            "chain": {"inline": [{"coeff": [1, 0], "tensor": [[-1], [1]]}]},
            "checks": ["is_cycle", "chern"]}"#;
        let out = run(&ExperimentConfig::from_json(text).unwrap()).unwrap();
        assert!(out.report.pass);
    }
}
