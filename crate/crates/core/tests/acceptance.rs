//! Acceptance criteria 1-6. Each criterion prints one PASS/FAIL line, plus
//! indented diagnostic lines; the test asserts all of them at the end.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use singtrace::harness::{
    diagonal_oracle, estimator_concordance, grading_defect, scheme_spread, ROBUSTNESS_TOL,
};
use singtrace::hochschild::{
    appendix_identity_checks, bob_identity_check, boundary, builtin_chain, chern, heat_cycle_trace,
    is_cycle, main_theorem_check, model_partial_sums, nc_torus_volume_cycle, omega,
    reduction_partial_sum_check, Chain, IDENTITY_TOL, MAIN_THEOREM_TOL, PARITY_CHERN_TOL,
    PARITY_Z_TOL,
};
use singtrace::ideals::{measurability_of_series, MeasurabilityVerdict, DEFAULT_MEASURABILITY_TOL};
use singtrace::operators::{Operator, C64};
use singtrace::traces::ExtendedLimitScheme;
use singtrace::triples::{
    build_circle, build_diagonal_toy, build_nc_torus, AlgebraElement, KernelPhase, ModelSpec,
    QPoly, SpectralTripleModel, DEFAULT_THETA,
};

struct Outcome {
    id: usize,
    title: &'static str,
    pass: bool,
    elapsed: Duration,
    budget: Duration,
    failures: Vec<String>,
    notes: Vec<String>,
}

impl Outcome {
    fn new(id: usize, title: &'static str, budget_secs: u64) -> Self {
        Self {
            id,
            title,
            pass: true,
            elapsed: Duration::ZERO,
            budget: Duration::from_secs(budget_secs),
            failures: Vec::new(),
            notes: Vec::new(),
        }
    }

    fn require(&mut self, ok: bool, what: String) {
        if !ok {
            self.pass = false;
            self.failures.push(what);
        }
    }

    fn note(&mut self, s: String) {
        self.notes.push(s);
    }

    fn finish(mut self, start: Instant) -> Self {
        self.elapsed = start.elapsed();
        let within = self.elapsed <= self.budget;
        self.require(
            within,
            format!("runtime {:.1?} exceeds {:?}", self.elapsed, self.budget),
        );
        println!(
            "criterion {}: {} ({}, {:.2?})",
            self.id,
            if self.pass { "PASS" } else { "FAIL" },
            self.title,
            self.elapsed
        );
        for f in &self.failures {
            println!("    failed: {f}");
        }
        for n in &self.notes {
            println!("    note: {n}");
        }
        self
    }
}

fn random_chain(m: &SpectralTripleModel, degree: usize, rng: &mut ChaCha8Rng) -> Chain {
    let mut c = Chain::zero(m.kind(), degree);
    for _ in 0..4 {
        let t: Vec<[i64; 2]> = (0..=degree)
            .map(|_| [rng.random_range(-2..=2), rng.random_range(-2..=2)])
            .collect();
        let q = QPoly::monomial(
            C64::new(rng.random_range(-3..=3) as f64, 0.0),
            rng.random_range(-1..=1),
        );
        c.add_term(q, t).unwrap();
    }
    c
}

fn exact_algebra() -> Outcome {
    let start = Instant::now();
    let mut o = Outcome::new(1, "exact algebra, circle N=256 and torus N=32", 10);
    let circle = build_circle(256).unwrap();
    let torus = build_nc_torus(32, DEFAULT_THETA).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for m in [&circle, &torus] {
        let name = m.descriptor().name.clone();
        for degree in 2..=4 {
            for _ in 0..5 {
                let c = random_chain(m, degree, &mut rng);
                let bb = boundary(&boundary(&c).unwrap()).unwrap();
                o.require(
                    bb.is_empty(),
                    format!("{name}: b(b(c)) != 0 at degree {degree}"),
                );
            }
        }
        let gens: Vec<AlgebraElement> = m.generators().into_iter().map(|g| g.1).collect();
        let mut worst_app: f64 = 0.0;
        let mut worst_leib: f64 = 0.0;
        for a in &gens {
            for b in &gens {
                for r in appendix_identity_checks(a, b, m).unwrap() {
                    worst_app = worst_app.max(r.defect);
                }
                let (d, ad) = m.leibniz_defects(a, b).unwrap();
                worst_leib = worst_leib.max(d).max(ad);
            }
        }
        for _ in 0..3 {
            let a = AlgebraElement::random(m.kind(), 1, 3, &mut rng);
            let b = AlgebraElement::random(m.kind(), 1, 3, &mut rng);
            for r in appendix_identity_checks(&a, &b, m).unwrap() {
                worst_app = worst_app.max(r.defect);
            }
        }
        o.require(
            worst_app <= IDENTITY_TOL,
            format!("{name}: appendix identities defect {worst_app:.3e}"),
        );
        o.require(
            worst_leib <= IDENTITY_TOL,
            format!("{name}: Leibniz defect {worst_leib:.3e}"),
        );
        if let Some(g) = m.grading_report().unwrap() {
            let d = grading_defect(&g);
            o.require(
                d <= IDENTITY_TOL,
                format!("{name}: grading relations defect {d:.3e}"),
            );
            o.note(format!(
                "{name}: |{{Gamma, F}}| = {:.3e} on the interior",
                g.anticommutes_with_f
            ));
        }
    }
    let c = builtin_chain("circle-winding", circle.kind()).unwrap();
    let r = bob_identity_check(&c, &circle).unwrap();
    o.require(
        r.pass,
        format!("circle bob identity defect {:.3e}", r.defect),
    );
    let vol = nc_torus_volume_cycle(torus.kind(), 1.0).unwrap();
    let r = bob_identity_check(&vol, &torus).unwrap();
    o.require(
        r.pass,
        format!(
            "torus bob identity defect {:.3e} (F = +1 on ker D does not anticommute with Gamma)",
            r.defect
        ),
    );
    let swap = ModelSpec::nc_torus(32, DEFAULT_THETA)
        .with_kernel_phase(KernelPhase::GradedSwap)
        .build()
        .unwrap();
    let r = bob_identity_check(&vol, &swap).unwrap();
    o.note(format!(
        "torus bob identity with the graded swap on ker D: defect {:.3e}",
        r.defect
    ));
    o.finish(start)
}

fn diagonal_suite() -> Outcome {
    let start = Instant::now();
    let mut o = Outcome::new(2, "diagonal oracles, N=1e5", 30);
    let r = diagonal_oracle(100_000).unwrap();
    for f in &r.failures {
        o.require(false, f.clone());
    }
    for (k, v) in &r.values {
        o.note(format!("{k} = {:.4}", v[0]));
    }
    for (alpha, tail, count) in &r.lemma_slopes {
        o.note(format!(
            "alpha {alpha}: tail slope {tail:.4}, count slope {count:.4}"
        ));
    }
    o.finish(start)
}

fn circle_theorem() -> Outcome {
    let start = Instant::now();
    let mut o = Outcome::new(3, "circle character, N=2048", 300);
    let m = build_circle(2048).unwrap();
    let c = builtin_chain("circle-winding", m.kind()).unwrap();
    let ch = chern(&c, &m).unwrap().value;
    o.require(
        (ch - C64::new(2.0, 0.0)).norm() <= 0.02,
        format!("Ch = {ch:.6}"),
    );
    let om = omega(&c, &m).unwrap();
    let v = m.compress(&m.resolvent_power(1.0));
    let series = model_partial_sums(&om.try_mul(&v).unwrap(), &m).unwrap();
    match measurability_of_series(&series, DEFAULT_MEASURABILITY_TOL).unwrap() {
        MeasurabilityVerdict::Measurable { z, fit } => {
            o.require(
                (z - C64::new(2.0, 0.0)).norm() <= 0.1,
                format!("z_spec = {z:.6}"),
            );
            o.note(format!(
                "z_spec = {z:.6}, residual {:.3e}",
                fit.residual_sup
            ));
        }
        other => o.require(false, format!("verdict {other:?}")),
    }
    let h = heat_cycle_trace(&c, &m, None).unwrap();
    o.require(
        (h.z - C64::new(2.0, 0.0)).norm() <= 0.2,
        format!("heat-cycle z = {:.6}", h.z),
    );
    o.note(format!("Ch = {ch:.6}, heat-cycle z = {:.6}", h.z));
    let r = reduction_partial_sum_check(&c, &m).unwrap();
    o.require(
        r.pass,
        format!(
            "reduction fit z = {:.3e}, residual {:.3e}",
            r.difference.z, r.difference.residual_sup
        ),
    );
    o.finish(start)
}

fn torus_theorem() -> Outcome {
    let start = Instant::now();
    let mut o = Outcome::new(4, "NC torus character, N=64", 900);
    let mut chern_by_theta = Vec::new();
    for theta in [0.0, DEFAULT_THETA] {
        let m = build_nc_torus(64, theta).unwrap();
        let c = nc_torus_volume_cycle(m.kind(), 1.0).unwrap();
        o.require(
            is_cycle(&c).unwrap(),
            format!("volume cycle not a cycle at theta = {theta}"),
        );
        let r = main_theorem_check(&c, &m, MAIN_THEOREM_TOL).unwrap();
        let ch = r.chern.value;
        o.require(
            r.spec_gap <= 0.15 * ch.norm(),
            format!(
                "theta = {theta:.4}: |z_spec - Ch| = {:.4} > 0.15 |Ch| = {:.4}",
                r.spec_gap,
                0.15 * ch.norm()
            ),
        );
        let heat = r.criterion.as_ref().map(|c| c.z_heat.z).unwrap_or_default();
        o.note(format!(
            "theta = {theta:.4}: Ch = {ch:.5} (N/4, N/2, N: {}), z_spec = {:.5}, z_heat = {heat:.5}, Dixmier = {:.5}",
            r.chern
                .convergence
                .iter()
                .map(|(n, v)| format!("{n}:{:.5}", v.im))
                .collect::<Vec<_>>()
                .join(" "),
            r.z_spec,
            r.dixmier.z
        ));
        chern_by_theta.push(ch);
    }
    let rel = (chern_by_theta[0] - chern_by_theta[1]).norm() / chern_by_theta[1].norm();
    o.require(
        rel <= 0.02,
        format!("Ch differs by {rel:.3e} between theta = 0 and 1/sqrt 2"),
    );
    o.note(format!("theta independence of Ch: relative gap {rel:.3e}"));

    let swap = ModelSpec::nc_torus(64, DEFAULT_THETA)
        .with_kernel_phase(KernelPhase::GradedSwap)
        .build()
        .unwrap();
    let c = nc_torus_volume_cycle(swap.kind(), 1.0).unwrap();
    let r = main_theorem_check(&c, &swap, MAIN_THEOREM_TOL).unwrap();
    o.note(format!(
        "graded swap on ker D: Ch = {:.5}, z_spec = {:.5}, |z_spec + Ch| = {:.4}, 4 pi = {:.5}",
        r.chern.value,
        r.z_spec,
        (r.z_spec + r.chern.value).norm(),
        4.0 * std::f64::consts::PI
    ));

    let circle = ModelSpec::circle(1024)
        .with_p(2)
        .with_band(2)
        .build()
        .unwrap();
    let torus_odd = ModelSpec::nc_torus(64, DEFAULT_THETA)
        .with_p(1)
        .build()
        .unwrap();
    for (m, name) in [(&circle, "circle-even"), (&torus_odd, "torus-odd")] {
        let c = builtin_chain(name, m.kind()).unwrap();
        let r = main_theorem_check(&c, m, MAIN_THEOREM_TOL).unwrap();
        let (ch, z) = (r.chern.value.norm(), r.z_spec.norm());
        o.require(
            ch <= PARITY_CHERN_TOL && z <= PARITY_Z_TOL,
            format!("{name}: |Ch| = {ch:.3e}, |z| = {z:.3e}"),
        );
        o.note(format!(
            "parity case {name}: |Ch| = {ch:.3e}, |z| = {z:.3e}"
        ));
    }
    o.finish(start)
}

fn pairings() -> Vec<(String, Operator, Operator)> {
    let mut out = Vec::new();
    let circle = build_circle(2048).unwrap();
    let c = builtin_chain("circle-winding", circle.kind()).unwrap();
    out.push((
        "circle".into(),
        omega(&c, &circle).unwrap(),
        circle.compress(&circle.resolvent_power(1.0)),
    ));
    let torus = build_nc_torus(64, DEFAULT_THETA).unwrap();
    let c = nc_torus_volume_cycle(torus.kind(), 1.0).unwrap();
    out.push((
        "torus".into(),
        torus.restrict_prefix(&omega(&c, &torus).unwrap()),
        torus.restrict_prefix(&torus.compress(&torus.resolvent_power(2.0))),
    ));
    let toy = build_diagonal_toy(100_000, 3).unwrap();
    let c = builtin_chain("toy-cycle", toy.kind()).unwrap();
    out.push((
        "toy".into(),
        omega(&c, &toy).unwrap(),
        toy.compress(&toy.resolvent_power(3.0)),
    ));
    let n = 100_000;
    let v = Operator::real_diagonal((0..n).map(|k| 1.0 / (k as f64 + 1.0)));
    out.push(("harmonic".into(), Operator::identity(n), v.clone()));
    let alt = Operator::real_diagonal((0..n).map(|k| if k % 2 == 0 { 1.0 } else { -1.0 }));
    out.push(("alternating".into(), alt, v));
    out
}

fn concordance(pairs: &[(String, Operator, Operator)]) -> Outcome {
    let start = Instant::now();
    let mut o = Outcome::new(5, "estimator concordance", 600);
    for (name, a, v) in pairs {
        let r = estimator_concordance(a, v, &ExtendedLimitScheme::default()).unwrap();
        if let Some(note) = &r.heat_note {
            o.require(false, format!("{name}: heat estimate unavailable: {note}"));
        }
        for p in &r.pairs {
            o.require(
                p.gap <= p.budget,
                format!(
                    "{name}: {} vs {} gap {:.3e} > budget {:.3e}",
                    p.pair.0, p.pair.1, p.gap, p.budget
                ),
            );
        }
        let est: Vec<String> = r
            .estimates
            .iter()
            .map(|e| format!("{} {:.5} (+-{:.1e})", e.method, e.z, e.residual))
            .collect();
        o.note(format!("{name}: {}", est.join(", ")));
    }
    o.finish(start)
}

fn robustness(pairs: &[(String, Operator, Operator)]) -> Outcome {
    let start = Instant::now();
    let mut o = Outcome::new(6, "scheme robustness, r in {1.5, 2, 3}", 600);
    for (name, a, v) in pairs {
        let series = singtrace::ideals::eigenvalue_partial_sums(&a.try_mul(v).unwrap()).unwrap();
        let verdict = measurability_of_series(&series, DEFAULT_MEASURABILITY_TOL).unwrap();
        if !verdict.is_measurable() {
            o.note(format!(
                "{name}: not measurable at this truncation, skipped"
            ));
            continue;
        }
        let (values, spread) = scheme_spread(&series, &ExtendedLimitScheme::default()).unwrap();
        o.require(
            spread < ROBUSTNESS_TOL,
            format!("{name}: spread {spread:.3e}"),
        );
        let vals: Vec<String> = values
            .iter()
            .map(|(r, z)| format!("r={r:.3}: {z:.5}"))
            .collect();
        o.note(format!("{name}: spread {spread:.2e}; {}", vals.join(", ")));
    }
    o.finish(start)
}

#[test]
fn acceptance_criteria() {
    let mut outcomes = vec![
        exact_algebra(),
        diagonal_suite(),
        circle_theorem(),
        torus_theorem(),
    ];
    let pairs = pairings();
    outcomes.push(concordance(&pairs));
    outcomes.push(robustness(&pairs));
    println!();
    for o in &outcomes {
        println!(
            "criterion {}: {}",
            o.id,
            if o.pass { "PASS" } else { "FAIL" }
        );
    }
    let failed: Vec<String> = outcomes
        .iter()
        .filter(|o| !o.pass)
        .map(|o| {
            format!(
                "criterion {} ({}): {}",
                o.id,
                o.title,
                o.failures.join("; ")
            )
        })
        .collect();
    assert!(
        failed.is_empty(),
        "failing acceptance criteria:\n{}",
        failed.join("\n")
    );
}
