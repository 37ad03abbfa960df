//! Generators shared by the property tests and the acceptance run.
#![allow(dead_code)]

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Distribution, Exp};

use eligo::dsl::{eligibility, parse_spec, Bindings, CriterionSpec, Eligibility, Literal};
use eligo::ehr::PatientStore;
use eligo::metrics::SurvivalRecord;

/// Threshold targets with plausible value ranges.
const TARGETS: &[(&str, f64, f64)] = &[
    ("age", 18.0, 95.0),
    ("bmi", 15.0, 45.0),
    ("weight", 40.0, 130.0),
    ("max(SOFA)", 0.0, 24.0),
    ("min(GCS)", 3.0, 15.0),
    ("max(AKI_stage)", 0.0, 3.0),
];

const OPS: &[&str] = &[">=", ">", "<=", "<"];

/// A threshold-only spec with a base binding and a relaxation of it.
pub struct MonotoneCase {
    pub spec: CriterionSpec,
    pub base: Bindings,
    pub relaxed: Bindings,
}

/// Builds a random threshold-only spec. Each criterion bounds one target
/// with an adjustable threshold; `relaxed` moves a random subset of the
/// thresholds in the direction that admits more patients and leaves the rest.
pub fn monotone_case(rng: &mut impl Rng) -> MonotoneCase {
    let k = rng.random_range(1..=4);
    let mut text = String::from("INTERVENTION: has_event(\"hydrocortisone\")\n");
    let mut adjust = String::new();
    let mut base = Bindings::new();
    let mut relaxed = Bindings::new();
    for i in 0..k {
        let &(target, lo, hi) = TARGETS.choose(rng).unwrap();
        let op = *OPS.choose(rng).unwrap();
        let include = rng.random_bool(0.7);
        let mut a = (rng.random_range(lo..=hi) * 2.0).round() / 2.0;
        let mut b = (rng.random_range(lo..=hi) * 2.0).round() / 2.0;
        if a == b {
            b += 0.5;
        }
        if a > b {
            std::mem::swap(&mut a, &mut b);
        }
        let name = format!("t{i}");
        let kw = if include { "INCLUDE" } else { "EXCLUDE" };
        text.push_str(&format!("{kw} c{i}: {target} {op} ${name}\n"));
        adjust.push_str(&format!("ADJUST ${name} IN {{{a}, {b}}}\n"));

        let lower_bound = op.starts_with('>');
        // Smaller thresholds admit more when the criterion keeps values above
        // them (inclusion) or removes values below them (exclusion).
        let smaller_relaxes = lower_bound == include;
        let pick = if rng.random_bool(0.5) { a } else { b };
        let loosest = if smaller_relaxes { a } else { b };
        base.insert(name.clone(), Literal::Number(pick));
        relaxed.insert(name, Literal::Number(if rng.random_bool(0.5) { loosest } else { pick }));
    }
    text.push_str(&adjust);
    let spec = parse_spec(&text).unwrap_or_else(|e| panic!("generated spec rejected: {e}\n{text}"));
    MonotoneCase { spec, base, relaxed }
}

/// Count of eligible patients, and whether the base set is contained in the
/// relaxed set.
pub fn check_monotone(store: &PatientStore, case: &MonotoneCase) -> (usize, usize, bool) {
    let eligible = |b: &Bindings, p| !matches!(eligibility(p, &case.spec, b).unwrap(), Eligibility::Ineligible);
    let (mut n_base, mut n_relaxed, mut subset) = (0, 0, true);
    for p in store.patients() {
        let e_base = eligible(&case.base, p);
        let e_relaxed = eligible(&case.relaxed, p);
        n_base += usize::from(e_base);
        n_relaxed += usize::from(e_relaxed);
        subset &= !e_base || e_relaxed;
    }
    (n_base, n_relaxed, subset)
}

/// Matched-style survival data: `n` subjects split evenly between arms,
/// exponential event times with hazard `base_rate` (control) and
/// `base_rate * hr` (treated), independent exponential censoring, and
/// administrative censoring at `horizon`.
pub fn simulate_survival(
    rng: &mut impl Rng,
    n: usize,
    hr: f64,
    base_rate: f64,
    censor_rate: f64,
    horizon: f64,
) -> Vec<SurvivalRecord> {
    let censor = Exp::new(censor_rate).unwrap();
    (0..n)
        .map(|i| {
            let treated = i < n / 2;
            let rate = if treated { base_rate * hr } else { base_rate };
            let t_event = Exp::new(rate).unwrap().sample(rng);
            let t_censor = censor.sample(rng).min(horizon);
            SurvivalRecord {
                patient_id: format!("s{i:05}"),
                time: t_event.min(t_censor),
                event: t_event <= t_censor,
                treated,
                covariates: Vec::new(),
            }
        })
        .collect()
}
