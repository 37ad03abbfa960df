use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    ClinicalEvent, EventKind, Gender, PatientRecord, PatientStore, ReferenceRange, StoreError,
    HOURS_PER_DAY, KIDNEY_INDICATOR, LIVER_INDICATOR,
};

/// Abnormality probability for one indicator, per arm, per day.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmRates {
    pub treated: f64,
    pub control: f64,
}

/// A coded event planted with some prevalence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedEvent {
    pub code: String,
    pub kind: EventKind,
    pub prevalence: f64,
    /// When set, the event happens before admission, uniformly within this many days.
    #[serde(default)]
    pub history_days: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_patients: usize,
    pub treated_fraction: f64,
    /// Log-odds of treatment per standard deviation of age.
    pub treatment_age_effect: f64,
    pub treatment_female_effect: f64,
    pub true_log_hr: f64,
    pub baseline_death_rate_per_day: f64,
    /// Log hazard per standard deviation of age.
    pub hazard_age_effect: f64,
    pub hazard_female_effect: f64,
    pub discharge_rate_per_day: f64,
    pub horizon_days: u32,
    pub kidney_abnormal_rate: ArmRates,
    pub liver_abnormal_rate: ArmRates,
    /// Probability that any one daily SCr/AST sample is dropped.
    pub missing_rate: f64,
    /// Probability that height or weight is unrecorded.
    pub anthropometric_missing_rate: f64,
    pub intervention_code: String,
    pub events: Vec<PlantedEvent>,
    pub ranges: BTreeMap<String, [f64; 2]>,
    pub confounders: Vec<String>,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        let mut ranges = BTreeMap::new();
        ranges.insert(KIDNEY_INDICATOR.to_string(), [0.6, 1.3]);
        ranges.insert(LIVER_INDICATOR.to_string(), [8.0, 40.0]);
        Self {
            n_patients: 1000,
            treated_fraction: 0.4,
            treatment_age_effect: 0.4,
            treatment_female_effect: 0.2,
            true_log_hr: 0.5f64.ln(),
            baseline_death_rate_per_day: 0.02,
            hazard_age_effect: 0.3,
            hazard_female_effect: -0.1,
            discharge_rate_per_day: 0.08,
            horizon_days: 28,
            kidney_abnormal_rate: ArmRates { treated: 0.2, control: 0.25 },
            liver_abnormal_rate: ArmRates { treated: 0.15, control: 0.12 },
            missing_rate: 0.1,
            anthropometric_missing_rate: 0.05,
            intervention_code: "hydrocortisone".into(),
            events: vec![
                PlantedEvent {
                    code: "septic_shock".into(),
                    kind: EventKind::Diagnosis,
                    prevalence: 0.9,
                    history_days: None,
                },
                PlantedEvent {
                    code: "sepsis_aki".into(),
                    kind: EventKind::Diagnosis,
                    prevalence: 0.6,
                    history_days: None,
                },
                PlantedEvent {
                    code: "mechanical_ventilation".into(),
                    kind: EventKind::Device,
                    prevalence: 0.5,
                    history_days: None,
                },
                PlantedEvent {
                    code: "cardiac_surgery".into(),
                    kind: EventKind::Procedure,
                    prevalence: 0.15,
                    history_days: Some(720.0),
                },
            ],
            ranges,
            confounders: vec!["age".into(), "gender_code".into()],
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SyntheticError {
    #[error("n_patients must be positive")]
    NoPatients,
    #[error("treated fraction {0} outside (0, 1)")]
    TreatedFraction(f64),
    #[error("{0} must be a probability")]
    Probability(&'static str),
    #[error("{0} must be positive")]
    NonPositive(&'static str),
    #[error("invalid configuration: {0}")]
    Store(#[from] StoreError),
}

const RACES: [(&str, f64); 5] =
    [("white", 0.62), ("black", 0.14), ("hispanic", 0.1), ("asian", 0.08), ("other", 0.06)];

const AGE_MEAN: f64 = 62.0;
const AGE_SD: f64 = 16.0;
const FEMALE_SHARE: f64 = 0.45;
/// Daily samples are drawn one hour into each day.
const SAMPLE_OFFSET_H: f64 = 1.0;
/// Stays last at least this long, so admission-time events fit inside them.
const MIN_STAY_H: f64 = 2.0;

fn check_prob(p: f64, name: &'static str) -> Result<(), SyntheticError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(SyntheticError::Probability(name))
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn lab_value(rng: &mut ChaCha8Rng, range: ReferenceRange, abnormal: bool) -> f64 {
    let width = range.upper - range.lower;
    if abnormal {
        range.upper * rng.random_range(1.15..2.0)
    } else {
        rng.random_range(range.lower + 0.05 * width..range.upper - 0.05 * width)
    }
}

/// Draws a store from `config`. A pure function of `(config, seed)`.
pub fn generate_synthetic(config: &SyntheticConfig, seed: u64) -> Result<PatientStore, SyntheticError> {
    if config.n_patients == 0 {
        return Err(SyntheticError::NoPatients);
    }
    if !(config.treated_fraction > 0.0 && config.treated_fraction < 1.0) {
        return Err(SyntheticError::TreatedFraction(config.treated_fraction));
    }
    check_prob(config.missing_rate, "missing_rate")?;
    check_prob(config.anthropometric_missing_rate, "anthropometric_missing_rate")?;
    for (name, r) in [("kidney_abnormal_rate", config.kidney_abnormal_rate), ("liver_abnormal_rate", config.liver_abnormal_rate)] {
        check_prob(r.treated, name)?;
        check_prob(r.control, name)?;
    }
    for ev in &config.events {
        check_prob(ev.prevalence, "event prevalence")?;
    }
    if !(config.baseline_death_rate_per_day > 0.0) {
        return Err(SyntheticError::NonPositive("baseline_death_rate_per_day"));
    }
    if !(config.discharge_rate_per_day > 0.0) {
        return Err(SyntheticError::NonPositive("discharge_rate_per_day"));
    }

    let mut dictionary = BTreeMap::new();
    for (name, [lo, hi]) in &config.ranges {
        dictionary.insert(name.clone(), ReferenceRange::new(*lo, *hi).map_err(StoreError::from)?);
    }
    let kidney = *dictionary
        .get(KIDNEY_INDICATOR)
        .ok_or_else(|| StoreError::MissingRange(KIDNEY_INDICATOR.into()))?;
    let liver = *dictionary
        .get(LIVER_INDICATOR)
        .ok_or_else(|| StoreError::MissingRange(LIVER_INDICATOR.into()))?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let age_dist = Normal::new(AGE_MEAN, AGE_SD).expect("valid normal");
    let std_normal = Normal::<f64>::new(0.0, 1.0).expect("valid normal");
    let discharge_dist =
        Exp::new(config.discharge_rate_per_day / HOURS_PER_DAY).expect("positive rate");
    let base_logit = logit(config.treated_fraction);
    let horizon_h = f64::from(config.horizon_days) * HOURS_PER_DAY;

    let mut patients = Vec::with_capacity(config.n_patients);
    for i in 0..config.n_patients {
        let age = age_dist.sample(&mut rng).round().clamp(16.0, 99.0);
        let gender = if rng.random::<f64>() < FEMALE_SHARE { Gender::Female } else { Gender::Male };
        let female = gender.code();
        let mut pick = rng.random::<f64>();
        let mut race = RACES[RACES.len() - 1].0;
        for (name, w) in RACES {
            if pick < w {
                race = name;
                break;
            }
            pick -= w;
        }

        let z_age = (age - AGE_MEAN) / AGE_SD;
        let p_treat = sigmoid(
            base_logit
                + config.treatment_age_effect * z_age
                + config.treatment_female_effect * (female - FEMALE_SHARE),
        );
        let treated = rng.random::<f64>() < p_treat;

        let mean_height: f64 = if gender == Gender::Female { 1.62 } else { 1.75 };
        let height = (mean_height + 0.08 * std_normal.sample(&mut rng)).clamp(1.3, 2.1);
        let bmi = (27.0 + 5.0 * std_normal.sample(&mut rng)).clamp(15.0, 55.0);
        let weight = bmi * height * height;
        let height_missing = rng.random::<f64>() < config.anthropometric_missing_rate;
        let weight_missing = rng.random::<f64>() < config.anthropometric_missing_rate;

        let log_hazard = config.true_log_hr * if treated { 1.0 } else { 0.0 }
            + config.hazard_age_effect * z_age
            + config.hazard_female_effect * female;
        let death_rate = config.baseline_death_rate_per_day / HOURS_PER_DAY * log_hazard.exp();
        let death_at = MIN_STAY_H + Exp::new(death_rate).expect("positive rate").sample(&mut rng);
        let discharge_at = MIN_STAY_H + discharge_dist.sample(&mut rng);

        let mut p = PatientRecord::new(format!("p{i:06}"), age as u32, gender);
        p.race = race.to_string();
        p.height = (!height_missing).then_some(height);
        p.weight = (!weight_missing).then_some(weight);
        if death_at <= discharge_at {
            p.death_time = Some(death_at);
        } else {
            p.discharge_time = Some(discharge_at);
        }
        let end = death_at.min(discharge_at);

        for ev in &config.events {
            if rng.random::<f64>() >= ev.prevalence {
                continue;
            }
            let start_time = match ev.history_days {
                Some(days) => -rng.random_range(1.0..days.max(1.0 + f64::EPSILON)) * HOURS_PER_DAY,
                None => 0.5,
            };
            p.events.push(ClinicalEvent { kind: ev.kind, code: ev.code.clone(), start_time, end_time: None });
        }
        if treated {
            p.events.push(ClinicalEvent {
                kind: EventKind::Medication,
                code: config.intervention_code.clone(),
                start_time: 1.0,
                end_time: None,
            });
        }

        // Admission severity scores.
        let sofa = (6.0 + 3.5 * std_normal.sample(&mut rng) + 1.5 * z_age).round().clamp(0.0, 24.0);
        let gcs = (12.0 + 3.0 * std_normal.sample(&mut rng)).round().clamp(3.0, 15.0);
        let aki = rng.random_range(0..4u8);
        p.push_lab("SOFA", SAMPLE_OFFSET_H, sofa);
        p.push_lab("GCS", SAMPLE_OFFSET_H, gcs);
        p.push_lab("AKI_stage", SAMPLE_OFFSET_H, f64::from(aki));

        let (k_rate, l_rate) = if treated {
            (config.kidney_abnormal_rate.treated, config.liver_abnormal_rate.treated)
        } else {
            (config.kidney_abnormal_rate.control, config.liver_abnormal_rate.control)
        };
        for day in 0..=config.horizon_days {
            let t = f64::from(day) * HOURS_PER_DAY + SAMPLE_OFFSET_H;
            if t > end || t > horizon_h + SAMPLE_OFFSET_H {
                break;
            }
            // Draw unconditionally so missingness never shifts later draws.
            let k_abn = rng.random::<f64>() < k_rate;
            let k_val = lab_value(&mut rng, kidney, k_abn);
            let k_drop = rng.random::<f64>() < config.missing_rate;
            let l_abn = rng.random::<f64>() < l_rate;
            let l_val = lab_value(&mut rng, liver, l_abn);
            let l_drop = rng.random::<f64>() < config.missing_rate;
            if !k_drop {
                p.push_lab(KIDNEY_INDICATOR, t, k_val);
            }
            if !l_drop {
                p.push_lab(LIVER_INDICATOR, t, l_val);
            }
        }
        patients.push(p);
    }

    let mut confounders = config.confounders.clone();
    confounders.dedup();
    Ok(PatientStore::new(patients, dictionary, confounders)?)
}
