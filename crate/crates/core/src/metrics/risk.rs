use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::MatchedCohort;
use crate::ehr::{LabSeries, PatientRecord, PatientStore, ReferenceRange, HOURS_PER_DAY, KIDNEY_INDICATOR, LIVER_INDICATOR};

/// A series is discarded when more than this share of its in-stay days is
/// missing.
pub const MAX_MISSING_SHARE: f64 = 0.5;
/// A series is discarded when it has a run of missing days longer than this.
pub const MAX_GAP_DAYS: usize = 3;
/// Continuity correction added to abnormal counts (and twice to totals).
const CORRECTION: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Organ {
    Kidney,
    Liver,
}

impl Organ {
    pub const ALL: [Organ; 2] = [Organ::Kidney, Organ::Liver];

    pub fn indicator(self) -> &'static str {
        match self {
            Organ::Kidney => KIDNEY_INDICATOR,
            Organ::Liver => LIVER_INDICATOR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RiskError {
    #[error("no reference range for indicator `{0}`")]
    NoRange(String),
}

/// Last day index of the daily grid `0..=last_day`.
pub fn last_day(horizon: f64) -> u32 {
    (horizon / HOURS_PER_DAY).floor().max(0.0) as u32
}

/// Daily values on `0..=last_day(horizon)`. The outer `None` means the series
/// was discarded; inner `None` marks days at or after death.
pub fn impute_series(
    series: &LabSeries,
    discharge_time: Option<f64>,
    death_time: Option<f64>,
    horizon: f64,
    range: ReferenceRange,
) -> Option<Vec<Option<f64>>> {
    let days = last_day(horizon) as usize + 1;
    let mut sums = vec![(0.0, 0usize); days];
    for &(t, v) in &series.points {
        if t < 0.0 {
            continue;
        }
        let d = (t / HOURS_PER_DAY).floor() as usize;
        if d < days {
            sums[d].0 += v;
            sums[d].1 += 1;
        }
    }
    let start = |d: usize| d as f64 * HOURS_PER_DAY;
    let dead = |d: usize| death_time.is_some_and(|t| t <= start(d));
    let gone = |d: usize| discharge_time.is_some_and(|t| t <= start(d));
    // In-stay days form a prefix of the grid.
    let stay = (0..days).take_while(|&d| !dead(d) && !gone(d)).count();

    let mut out: Vec<Option<f64>> = sums.iter().map(|&(s, n)| (n > 0).then(|| s / n as f64)).collect();
    let observed: Vec<usize> = (0..stay).filter(|&d| out[d].is_some()).collect();
    if stay > 0 {
        let missing = stay - observed.len();
        if missing as f64 > MAX_MISSING_SHARE * stay as f64 {
            return None;
        }
        let mut run = 0;
        for v in &out[..stay] {
            run = if v.is_none() { run + 1 } else { 0 };
            if run > MAX_GAP_DAYS {
                return None;
            }
        }
        let (first, last) = (observed[0], observed[observed.len() - 1]);
        let (fv, lv) = (out[first], out[last]);
        for v in &mut out[..first] {
            *v = fv;
        }
        for v in &mut out[last + 1..stay] {
            *v = lv;
        }
        for w in observed.windows(2) {
            let (a, b) = (w[0], w[1]);
            let (va, vb) = (out[a].unwrap(), out[b].unwrap());
            for d in a + 1..b {
                let f = (d - a) as f64 / (b - a) as f64;
                out[d] = Some(va + f * (vb - va));
            }
        }
    }
    for (d, v) in out.iter_mut().enumerate().skip(stay) {
        *v = if dead(d) { None } else { Some(range.midpoint()) };
    }
    Some(out)
}

/// [`impute_series`] for one patient's indicator; a missing series counts as
/// all days missing.
pub fn impute_patient(p: &PatientRecord, indicator: &str, horizon: f64, range: ReferenceRange) -> Option<Vec<Option<f64>>> {
    let empty = LabSeries::new(indicator);
    let series = p.lab(indicator).unwrap_or(&empty);
    impute_series(series, p.discharge_time, p.death_time, horizon, range)
}

/// Usable patients and abnormal patients on one day of one arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DayCount {
    pub usable: usize,
    pub abnormal: usize,
}

impl DayCount {
    pub fn fraction(self) -> Option<f64> {
        (self.usable > 0).then(|| self.abnormal as f64 / self.usable as f64)
    }
}

/// Per-day counts over patients alive that day with a usable series.
pub fn daily_counts<'a>(
    patients: impl IntoIterator<Item = &'a PatientRecord>,
    indicator: &str,
    horizon: f64,
    range: ReferenceRange,
) -> Vec<DayCount> {
    let days = last_day(horizon) as usize + 1;
    let mut counts = vec![DayCount::default(); days];
    for p in patients {
        let Some(series) = impute_patient(p, indicator, horizon, range) else { continue };
        for (d, v) in series.into_iter().enumerate() {
            if let Some(v) = v {
                counts[d].usable += 1;
                counts[d].abnormal += usize::from(range.is_abnormal(v));
            }
        }
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskSeries {
    pub organ: Organ,
    pub daily_ratios: Vec<(u32, Option<f64>)>,
    /// Mean of the present daily ratios; `None` when no day has both arms.
    pub mean_ratio: Option<f64>,
}

/// Ratio of continuity-corrected abnormal proportions, treated over control.
pub fn corrected_ratio(treated: DayCount, control: DayCount) -> Option<f64> {
    if treated.usable == 0 || control.usable == 0 {
        return None;
    }
    let pt = (treated.abnormal as f64 + CORRECTION) / (treated.usable as f64 + 2.0 * CORRECTION);
    let pc = (control.abnormal as f64 + CORRECTION) / (control.usable as f64 + 2.0 * CORRECTION);
    Some(pt / pc)
}

pub fn risk_from_counts(organ: Organ, treated: &[DayCount], control: &[DayCount]) -> RiskSeries {
    let daily_ratios: Vec<(u32, Option<f64>)> =
        treated.iter().zip(control).enumerate().map(|(d, (&t, &c))| (d as u32, corrected_ratio(t, c))).collect();
    let present: Vec<f64> = daily_ratios.iter().filter_map(|&(_, r)| r).collect();
    let mean_ratio = (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64);
    RiskSeries { organ, daily_ratios, mean_ratio }
}

pub fn organ_risk_ratio(
    store: &PatientStore,
    matched: &MatchedCohort,
    organ: Organ,
    horizon: f64,
) -> Result<RiskSeries, RiskError> {
    let indicator = organ.indicator();
    let range = store.range(indicator).ok_or_else(|| RiskError::NoRange(indicator.to_string()))?;
    let treated = daily_counts(matched.treated_ids().filter_map(|id| store.get(id)), indicator, horizon, range);
    let control = daily_counts(matched.control_ids().filter_map(|id| store.get(id)), indicator, horizon, range);
    Ok(risk_from_counts(organ, &treated, &control))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCR: ReferenceRange = ReferenceRange { lower: 0.6, upper: 1.3 };

    fn series(points: &[(u32, f64)]) -> LabSeries {
        let mut s = LabSeries::new("SCr");
        s.points = points.iter().map(|&(d, v)| (d as f64 * 24.0 + 1.0, v)).collect();
        s
    }

    #[test]
    fn full_series_is_identity() {
        let s = series(&[(0, 1.0), (1, 1.1), (2, 1.2), (3, 0.9)]);
        let out = impute_series(&s, None, None, 72.0, SCR).unwrap();
        assert_eq!(out, vec![Some(1.0), Some(1.1), Some(1.2), Some(0.9)]);
    }

    #[test]
    fn discharge_midpoint() {
        let s = series(&[(0, 1.0), (1, 1.1), (2, 1.2), (3, 2.0)]);
        let out = impute_series(&s, Some(3.0 * 24.0 + 5.0), None, 7.0 * 24.0, SCR).unwrap();
        assert_eq!(out.len(), 8);
        assert_eq!(out[3], Some(2.0));
        for v in &out[4..] {
            assert!((v.unwrap() - 0.95).abs() < 1e-12);
        }
    }

    #[test]
    fn interior_gap_interpolated() {
        let s = series(&[(0, 1.0), (1, 2.0), (3, 4.0)]);
        let out = impute_series(&s, None, None, 72.0, SCR).unwrap();
        assert_eq!(out[2], Some(3.0));
        let s = series(&[(0, 1.0), (4, 5.0), (5, 5.0), (6, 5.0)]);
        let out = impute_series(&s, None, None, 6.0 * 24.0, SCR).unwrap();
        assert_eq!(out[1], Some(2.0));
        assert_eq!(out[3], Some(4.0));
    }

    #[test]
    fn daily_mean_and_edges() {
        let mut s = series(&[(1, 1.0), (2, 2.0)]);
        s.points.push((2.0 * 24.0 + 5.0, 3.0));
        let out = impute_series(&s, None, None, 72.0, SCR).unwrap();
        assert_eq!(out, vec![Some(1.0), Some(1.0), Some(2.5), Some(2.5)]);
    }

    #[test]
    fn discard_rules() {
        // 4-day gap.
        let s = series(&[(0, 1.0), (5, 1.0), (6, 1.0), (7, 1.0), (8, 1.0), (9, 1.0)]);
        assert!(impute_series(&s, None, None, 9.0 * 24.0, SCR).is_none());
        // 3-day gap is fine.
        let s = series(&[(0, 1.0), (4, 1.0), (5, 1.0), (6, 1.0), (7, 1.0)]);
        assert!(impute_series(&s, None, None, 7.0 * 24.0, SCR).is_some());
        // More than half missing.
        let s = series(&[(0, 1.0), (3, 1.0), (6, 1.0)]);
        assert!(impute_series(&s, None, None, 6.0 * 24.0, SCR).is_none());
        // No data at all.
        assert!(impute_series(&LabSeries::new("SCr"), None, None, 48.0, SCR).is_none());
    }

    #[test]
    fn death_truncates() {
        let s = series(&[(0, 1.0), (1, 1.5)]);
        let out = impute_series(&s, None, Some(40.0), 96.0, SCR).unwrap();
        assert_eq!(out, vec![Some(1.0), Some(1.5), None, None, None]);
    }

    #[test]
    fn corrected_ratio_hand_example() {
        let dc = |usable, abnormal| DayCount { usable, abnormal };
        let r = risk_from_counts(Organ::Kidney, &[dc(4, 2), dc(4, 1)], &[dc(4, 1), dc(4, 2)]);
        let d: Vec<f64> = r.daily_ratios.iter().map(|x| x.1.unwrap()).collect();
        assert!((d[0] - 2.5 / 1.5).abs() < 1e-12);
        assert!((d[1] - 0.6).abs() < 1e-12);
        assert!((r.mean_ratio.unwrap() - 1.133_333_333_333_333_3).abs() < 1e-12);
        let r = risk_from_counts(Organ::Kidney, &[dc(0, 0)], &[dc(3, 1)]);
        assert_eq!(r.daily_ratios[0].1, None);
        assert_eq!(r.mean_ratio, None);
    }
}
