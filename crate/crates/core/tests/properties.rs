mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::OnceLock;

use proptest::prelude::*;
use proptest::sample::subsequence;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use eligo::cohort::{match_cohort, CaliperRule, EligibleCohort};
use eligo::dsl::{evaluate_predicate, parse_spec, serialize_predicate, serialize_spec, Bindings, CriterionSpec, Predicate};
use eligo::ehr::{generate_synthetic, Gender, PatientRecord, PatientStore, SyntheticConfig};
use eligo::grid::{enumerate, Constraints, DEFAULT_MAX_CANDIDATES};
use eligo::metrics::{diversity_entropy, fit_cox, SurvivalRecord, Ties};
use eligo::pipeline::{evaluate_candidate, CandidateEvaluation, EvalConfig};
use eligo::results::{ResultRecord, ResultsTable};
use eligo::session::{RecordInput, Session, StageMeta};
use eligo::temporal::aggregate_group;

fn store() -> &'static PatientStore {
    static STORE: OnceLock<PatientStore> = OnceLock::new();
    STORE.get_or_init(|| {
        let config = SyntheticConfig { n_patients: 400, ..Default::default() };
        generate_synthetic(&config, 17).unwrap()
    })
}

fn grid_spec() -> CriterionSpec {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("specs/case_i_3x4x2.tcl");
    parse_spec(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn predicate(text: &str) -> Predicate {
    parse_spec(&format!("INTERVENTION: {text}\n")).unwrap_or_else(|e| panic!("{text}: {e}")).intervention
}

fn leaf_text() -> impl Strategy<Value = String> {
    let op = prop::sample::select(vec![">=", ">", "<=", "<", "=", "!="]);
    let number = (0u32..200).prop_map(|v| f64::from(v) / 2.0);
    prop_oneof![
        (op.clone(), number.clone()).prop_map(|(o, v)| format!("age {o} {v}")),
        (op.clone(), number.clone()).prop_map(|(o, v)| format!("bmi {o} {v}")),
        (op.clone(), 0u32..25).prop_map(|(o, v)| format!("max(SOFA) {o} {v}")),
        (op.clone(), 3u32..16).prop_map(|(o, v)| format!("min(GCS) {o} {v}")),
        (op, 0u32..5, 1u32..10).prop_map(|(o, v, d)| format!("count(SCr) within_first {d} days {o} {v}")),
        prop::sample::select(vec!["cardiac_surgery", "mechanical_ventilation", "hydrocortisone"])
            .prop_map(|c| format!("has_event(\"{c}\")")),
        (1u32..13).prop_map(|m| format!("has_event(\"cardiac_surgery\") within_last {m} months")),
        any::<bool>().prop_map(|b| format!("mechanical_ventilation = {b}")),
    ]
}

fn predicate_text() -> impl Strategy<Value = String> {
    leaf_text().prop_recursive(4, 24, 4, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 2..4).prop_map(|v| format!("({})", v.join(" AND "))),
            prop::collection::vec(inner.clone(), 2..4).prop_map(|v| format!("({})", v.join(" OR "))),
            inner.clone().prop_map(|p| format!("NOT ({p})")),
            prop::collection::vec(inner, 1..4)
                .prop_flat_map(|v| (1..=v.len(), Just(v)))
                .prop_map(|(k, v)| format!("at_least {k} of [{}]", v.join(", "))),
        ]
    })
}

fn truth(p: &Predicate, patient: &PatientRecord) -> bool {
    evaluate_predicate(p, patient, &Bindings::new()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn predicate_print_parse_round_trip(text in predicate_text()) {
        let p = predicate(&text);
        let printed = serialize_predicate(&p);
        let again = predicate(&printed);
        prop_assert_eq!(&p, &again);
        prop_assert_eq!(printed, serialize_predicate(&again));
    }

    #[test]
    fn de_morgan_and_at_least_identities(
        a in leaf_text(), b in leaf_text(), c in leaf_text(), idx in 0usize..400,
    ) {
        let patient = &store().patients()[idx];
        let (pa, pb, pc) = (predicate(&a), predicate(&b), predicate(&c));
        let not = |p: Predicate| Predicate::Not { item: Box::new(p) };
        let items = vec![pa.clone(), pb.clone(), pc.clone()];

        let lhs = not(Predicate::And { items: vec![pa.clone(), pb.clone()] });
        let rhs = Predicate::Or { items: vec![not(pa.clone()), not(pb.clone())] };
        prop_assert_eq!(truth(&lhs, patient), truth(&rhs, patient));
        let lhs = not(Predicate::Or { items: vec![pa.clone(), pb.clone()] });
        let rhs = Predicate::And { items: vec![not(pa.clone()), not(pb.clone())] };
        prop_assert_eq!(truth(&lhs, patient), truth(&rhs, patient));

        let at_least = |k| truth(&Predicate::AtLeast { k, items: items.clone() }, patient);
        prop_assert_eq!(at_least(1), truth(&Predicate::Or { items: items.clone() }, patient));
        prop_assert_eq!(at_least(3), truth(&Predicate::And { items: items.clone() }, patient));
        let pairwise = Predicate::Or {
            items: vec![
                Predicate::And { items: vec![pa.clone(), pb.clone()] },
                Predicate::And { items: vec![pa, pc.clone()] },
                Predicate::And { items: vec![pb, pc] },
            ],
        };
        prop_assert_eq!(at_least(2), truth(&pairwise, patient));
    }

    #[test]
    fn grid_ids_are_a_bijection(id in 0u64..24) {
        let grid = enumerate(&grid_spec(), DEFAULT_MAX_CANDIDATES).unwrap();
        let a = grid.assignment(id).unwrap();
        prop_assert_eq!(grid.id_of(&a.bindings).unwrap(), id);
    }

    #[test]
    fn ticks_and_filters_agree(mask in prop::collection::vec(any::<bool>(), 9)) {
        let spec = grid_spec();
        let grid = enumerate(&spec, DEFAULT_MAX_CANDIDATES).unwrap();
        // Each adjustable is either left free or restricted to a nonempty subset.
        let mut constraints = Constraints::new();
        let mut bit = mask.iter();
        for a in &spec.adjustables {
            let chosen: Vec<_> = a.values.iter().filter(|_| *bit.next().unwrap_or(&false)).cloned().collect();
            if !chosen.is_empty() && chosen.len() < a.values.len() {
                constraints.insert(a.name.clone(), chosen);
            }
        }
        let ids = grid.filter_by_binding(&constraints).unwrap();
        let brute: Vec<u64> = grid
            .assignments()
            .filter(|a| constraints.iter().all(|(k, vs)| vs.contains(&a.bindings[k])))
            .map(|a| a.candidate_id)
            .collect();
        prop_assert_eq!(&ids, &brute);

        let ticks = grid.tick_counts(&constraints).unwrap();
        for a in &spec.adjustables {
            let mut others = constraints.clone();
            others.remove(&a.name);
            let free = grid.filter_by_binding(&others).unwrap();
            prop_assert_eq!(ticks[&a.name].iter().sum::<u64>(), free.len() as u64);
            if !constraints.contains_key(&a.name) {
                prop_assert_eq!(ticks[&a.name].iter().sum::<u64>(), ids.len() as u64);
            }
        }
        if constraints.is_empty() {
            for counts in ticks.values() {
                prop_assert_eq!(counts.iter().sum::<u64>(), grid.len());
            }
        }
    }

    #[test]
    fn matching_invariants(
        treated in prop::collection::vec(0.0f64..1.0, 1..30),
        control in prop::collection::vec(0.0f64..1.0, 1..30),
        logit_rule in any::<bool>(),
    ) {
        let cohort = EligibleCohort {
            candidate_id: 0,
            treated_ids: (0..treated.len()).map(|i| format!("t{i:03}")).collect(),
            control_ids: (0..control.len()).map(|i| format!("c{i:03}")).collect(),
        };
        let scores: BTreeMap<String, f64> = cohort
            .treated_ids
            .iter()
            .zip(&treated)
            .chain(cohort.control_ids.iter().zip(&control))
            .map(|(id, &s)| (id.clone(), s.clamp(1e-6, 1.0 - 1e-6)))
            .collect();
        let rule = if logit_rule { CaliperRule::LogitSd { multiplier: 0.2 } } else { CaliperRule::Mad };
        let m = match_cohort(&cohort, &scores, rule).unwrap();
        let controls: BTreeSet<&str> = m.control_ids().collect();
        prop_assert_eq!(controls.len(), m.pairs.len());
        prop_assert!(m.pairs.len() <= treated.len().min(control.len()));
        prop_assert_eq!(m.discarded_treated, treated.len() - m.pairs.len());
        for p in &m.pairs {
            prop_assert!(p.distance <= m.caliper);
        }
    }

    #[test]
    fn cox_label_swap_and_scaling(
        rows in prop::collection::vec((0.1f64..100.0, any::<bool>(), any::<bool>(), -2.0f64..2.0), 8..40),
        scale in 0.1f64..10.0,
    ) {
        let records: Vec<SurvivalRecord> = rows
            .iter()
            .enumerate()
            .map(|(i, &(time, event, treated, x))| SurvivalRecord {
                patient_id: format!("p{i}"),
                time,
                event,
                treated,
                covariates: vec![x],
            })
            .collect();
        let fit = fit_cox(&records, Ties::Breslow);
        prop_assume!(fit.as_ref().is_ok_and(|f| f.converged && !f.degenerate && f.beta_t.abs() < 5.0));
        let fit = fit.unwrap();

        let swapped: Vec<_> = records.iter().cloned().map(|mut r| { r.treated = !r.treated; r }).collect();
        let s = fit_cox(&swapped, Ties::Breslow).unwrap();
        prop_assert!((s.beta_t + fit.beta_t).abs() < 1e-6, "{} vs {}", s.beta_t, fit.beta_t);

        let scaled: Vec<_> = records.iter().cloned().map(|mut r| { r.covariates[0] *= scale; r }).collect();
        let s = fit_cox(&scaled, Ties::Breslow).unwrap();
        prop_assert!((s.beta_t - fit.beta_t).abs() < 1e-6);
        prop_assert!((s.covariate_betas[0] * scale - fit.covariate_betas[0]).abs() < 1e-6);
    }

    #[test]
    fn entropy_is_bounded(people in prop::collection::vec((0u32..110, any::<bool>()), 1..60)) {
        let patients: Vec<PatientRecord> = people
            .iter()
            .enumerate()
            .map(|(i, &(age, f))| PatientRecord::new(format!("p{i}"), age, if f { Gender::Female } else { Gender::Male }))
            .collect();
        let refs: Vec<&PatientRecord> = patients.iter().collect();
        let h = diversity_entropy(&refs).unwrap();
        prop_assert!(h >= 0.0);
        prop_assert!(h <= (patients.len().min(20) as f64).ln() + 1e-12);
    }

    #[test]
    fn result_records_round_trip_bit_exact(
        n in 0usize..100_000,
        vals in prop::collection::vec(prop::option::of(any::<f64>().prop_filter("finite", |x| x.is_finite())), 7),
    ) {
        let table = ResultsTable {
            header: sweep_fixture().0.header.clone(),
            records: vec![ResultRecord {
                candidate_id: 0,
                bindings: Bindings::new(),
                n,
                diversity: vals[0],
                hr: vals[1],
                hr_lo: vals[2],
                hr_hi: vals[3],
                p: vals[4],
                kidney_rr: vals[5],
                liver_rr: vals[6],
                status: eligo::metrics::Status::Ok,
            }],
        };
        let back = ResultsTable::read_json(table.to_json().as_bytes()).unwrap();
        let bits = |r: &ResultRecord| {
            [r.diversity, r.hr, r.hr_lo, r.hr_hi, r.p, r.kidney_rr, r.liver_rr].map(|v| v.map(f64::to_bits))
        };
        prop_assert_eq!(bits(&back.records[0]), bits(&table.records[0]));
    }
}

/// A small evaluated grid with profiles, shared by the group and session properties.
fn sweep_fixture() -> &'static (ResultsTable, Vec<CandidateEvaluation>) {
    static FIXTURE: OnceLock<(ResultsTable, Vec<CandidateEvaluation>)> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let spec = grid_spec();
        let config = EvalConfig::default();
        let grid = enumerate(&spec, DEFAULT_MAX_CANDIDATES).unwrap();
        let evals: Vec<_> =
            grid.assignments().map(|a| evaluate_candidate(store(), &spec, &a, &config, true).unwrap()).collect();
        let options = eligo::sweep::SweepOptions { threads: 1, ..Default::default() };
        let table = eligo::sweep::run_sweep(store(), &spec, &config, &options, None).unwrap().table;
        (table, evals)
    })
}

fn assert_close(a: &serde_json::Value, b: &serde_json::Value, tol: f64) -> Result<(), String> {
    use serde_json::Value;
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => {
            let (x, y) = (x.as_f64().unwrap(), y.as_f64().unwrap());
            if (x - y).abs() <= tol * x.abs().max(1.0) {
                Ok(())
            } else {
                Err(format!("{x} vs {y}"))
            }
        }
        (Value::Array(x), Value::Array(y)) if x.len() == y.len() => {
            x.iter().zip(y).try_for_each(|(x, y)| assert_close(x, y, tol))
        }
        (Value::Object(x), Value::Object(y)) if x.len() == y.len() => x.iter().try_for_each(|(k, v)| {
            y.get(k).ok_or_else(|| format!("missing {k}")).and_then(|w| assert_close(v, w, tol))
        }),
        _ if a == b => Ok(()),
        _ => Err(format!("{a} vs {b}")),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn group_aggregation_ignores_member_order(
        members in subsequence((0usize..24).collect::<Vec<_>>(), 1..=24),
        seed in any::<u64>(),
    ) {
        let evals = &sweep_fixture().1;
        let with_profiles: Vec<_> = members.iter().filter(|&&i| evals[i].profile.is_some()).copied().collect();
        prop_assume!(!with_profiles.is_empty());
        let collect = |order: &[usize]| {
            let profiles: Vec<_> = order.iter().map(|&i| evals[i].profile.clone().unwrap()).collect();
            let outcomes: Vec<_> = order.iter().map(|&i| evals[i].outcome.clone()).collect();
            serde_json::to_value(aggregate_group(&profiles, &outcomes).unwrap()).unwrap()
        };
        let mut shuffled = with_profiles.clone();
        rand::seq::SliceRandom::shuffle(&mut shuffled[..], &mut ChaCha8Rng::seed_from_u64(seed));
        let (a, b) = (collect(&with_profiles), collect(&shuffled));
        if let Err(e) = assert_close(&a, &b, 1e-12) {
            return Err(TestCaseError::fail(e));
        }
    }

    #[test]
    fn session_json_round_trip(
        stages in prop::collection::vec(
            (1u8..=5, prop::collection::vec("[a-z]{1,8}", 0..3), "[ -~]{0,30}",
             prop::collection::vec(subsequence((0u64..24).collect::<Vec<_>>(), 0..6), 0..4)),
            0..4,
        ),
    ) {
        let table = &sweep_fixture().0;
        let mut session = Session::new("prop", table.header.spec_hash.clone());
        for (importance, keywords, description, records) in stages {
            let id = session.create_stage(StageMeta { importance, keywords, description }).unwrap();
            for (t, selected) in records.into_iter().enumerate() {
                let input = RecordInput { selected_candidates: selected, timestamp: Some(t as u64), ..Default::default() };
                session.append_record(id, input, table).unwrap();
            }
        }
        let back = Session::from_json(&session.to_json()).unwrap();
        prop_assert_eq!(&back, &session);
        prop_assert_eq!(back.to_json(), session.to_json());
    }
}

#[test]
fn eligibility_is_monotone_under_relaxation() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for i in 0..200 {
        let case = common::monotone_case(&mut rng);
        let (base, relaxed, subset) = common::check_monotone(store(), &case);
        assert!(subset && relaxed >= base, "case {i}: {base} -> {relaxed}\n{}", serialize_spec(&case.spec));
    }
}
