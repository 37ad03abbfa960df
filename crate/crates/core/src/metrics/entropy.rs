use std::collections::BTreeMap;

use crate::ehr::{Gender, PatientRecord};

/// Last age bin is open-ended (90+).
pub const AGE_BINS: usize = 10;

pub fn age_bin(age: u32) -> usize {
    (age as usize / 10).min(AGE_BINS - 1)
}

pub fn age_bin_label(bin: usize) -> String {
    if bin + 1 >= AGE_BINS {
        format!("{}+", bin * 10)
    } else {
        format!("{}-{}", bin * 10, bin * 10 + 9)
    }
}

/// Shannon entropy (nats) of the joint gender x age-decade distribution.
/// `None` for an empty list.
pub fn diversity_entropy(patients: &[&PatientRecord]) -> Option<f64> {
    if patients.is_empty() {
        return None;
    }
    let mut cells: BTreeMap<(Gender, usize), usize> = BTreeMap::new();
    for p in patients {
        *cells.entry((p.gender, age_bin(p.age))).or_default() += 1;
    }
    let n = patients.len() as f64;
    let h = -cells
        .values()
        .map(|&c| {
            let q = c as f64 / n;
            q * q.ln()
        })
        .sum::<f64>();
    Some(h.max(0.0))
}
