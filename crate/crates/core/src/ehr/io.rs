use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    ClinicalEvent, EventKind, Gender, PatientRecord, PatientStore, RecordError, ReferenceRange,
    StoreError,
};

pub const PATIENTS_FILE: &str = "patients.csv";
pub const EVENTS_FILE: &str = "events.csv";
pub const LABS_FILE: &str = "labs.csv";
pub const DICTIONARY_FILE: &str = "dictionary.json";

const PATIENT_HEADER: [&str; 8] =
    ["patient_id", "age", "gender", "race", "height_m", "weight_kg", "discharge_h", "death_h"];
const EVENT_HEADER: [&str; 5] = ["patient_id", "kind", "code", "start_h", "end_h"];
const LAB_HEADER: [&str; 4] = ["patient_id", "indicator", "time_h", "value"];

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{file}: {source}")]
    Io {
        file: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}: {message}")]
    Row { file: PathBuf, line: u64, message: String },
    #[error("{file}: {message}")]
    Dictionary { file: PathBuf, message: String },
    #[error("{file}: {source}")]
    Store {
        file: PathBuf,
        #[source]
        source: StoreError,
    },
}

impl IngestError {
    fn row(file: &Path, line: u64, message: impl Into<String>) -> Self {
        IngestError::Row { file: file.to_path_buf(), line, message: message.into() }
    }
}

/// Row counts read from each file.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct StoreCounts {
    pub patients: usize,
    pub events: usize,
    pub labs: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct DictionaryFile {
    ranges: BTreeMap<String, [f64; 2]>,
    #[serde(default)]
    confounders: Vec<String>,
}

fn open_csv(path: &Path) -> Result<csv::Reader<File>, IngestError> {
    let f = File::open(path).map_err(|e| IngestError::Io { file: path.to_path_buf(), source: e })?;
    Ok(csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(f))
}

fn check_header(
    rdr: &mut csv::Reader<File>,
    path: &Path,
    expected: &[&str],
) -> Result<(), IngestError> {
    let hdr = rdr.headers().map_err(|e| IngestError::row(path, 1, e.to_string()))?;
    let got: Vec<&str> = hdr.iter().collect();
    if got != expected {
        return Err(IngestError::row(
            path,
            1,
            format!("expected header `{}`, found `{}`", expected.join(","), got.join(",")),
        ));
    }
    Ok(())
}

fn opt_f64(s: &str) -> Result<Option<f64>, String> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse::<f64>()
        .map_err(|_| format!("`{s}` is not a number"))
        .and_then(|v| if v.is_finite() { Ok(Some(v)) } else { Err(format!("`{s}` is not finite")) })
}

fn req_f64(s: &str, field: &str) -> Result<f64, String> {
    opt_f64(s)?.ok_or_else(|| format!("{field} is required"))
}

/// Reads and validates the four input files.
pub fn load_store(
    patients_file: &Path,
    events_file: &Path,
    labs_file: &Path,
    dictionary_file: &Path,
) -> Result<(PatientStore, StoreCounts), IngestError> {
    let mut counts = StoreCounts::default();

    let dict_text = std::fs::read_to_string(dictionary_file)
        .map_err(|e| IngestError::Io { file: dictionary_file.to_path_buf(), source: e })?;
    let dict: DictionaryFile = serde_json::from_str(&dict_text).map_err(|e| {
        IngestError::Dictionary { file: dictionary_file.to_path_buf(), message: e.to_string() }
    })?;
    let mut dictionary = BTreeMap::new();
    for (name, [lo, hi]) in dict.ranges {
        let range = ReferenceRange::new(lo, hi).map_err(|e| IngestError::Dictionary {
            file: dictionary_file.to_path_buf(),
            message: format!("{name}: {e}"),
        })?;
        dictionary.insert(name, range);
    }

    let mut patients: Vec<PatientRecord> = Vec::new();
    let mut by_id: BTreeMap<String, usize> = BTreeMap::new();
    let mut rdr = open_csv(patients_file)?;
    check_header(&mut rdr, patients_file, &PATIENT_HEADER)?;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            IngestError::row(patients_file, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let err = |m: String| IngestError::row(patients_file, line, m);
        let id = rec[0].to_string();
        if id.is_empty() {
            return Err(err("empty patient_id".into()));
        }
        let age: u32 = rec[1].parse().map_err(|_| err(format!("bad age `{}`", &rec[1])))?;
        let gender = Gender::parse(&rec[2]).ok_or_else(|| err(format!("bad gender `{}`", &rec[2])))?;
        let mut p = PatientRecord::new(id.clone(), age, gender);
        p.race = rec[3].to_string();
        p.height = opt_f64(&rec[4]).map_err(err)?;
        p.weight = opt_f64(&rec[5]).map_err(err)?;
        p.discharge_time = opt_f64(&rec[6]).map_err(err)?;
        p.death_time = opt_f64(&rec[7]).map_err(err)?;
        if by_id.insert(id.clone(), patients.len()).is_some() {
            return Err(err(format!("duplicate patient_id `{id}`")));
        }
        patients.push(p);
        counts.patients += 1;
    }

    let mut rdr = open_csv(events_file)?;
    check_header(&mut rdr, events_file, &EVENT_HEADER)?;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            IngestError::row(events_file, e.position().map_or(0, |p| p.line()), e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let err = |m: String| IngestError::row(events_file, line, m);
        let &idx = by_id
            .get(&rec[0])
            .ok_or_else(|| err(format!("unknown patient_id `{}`", &rec[0])))?;
        let kind = EventKind::parse(&rec[1]).ok_or_else(|| err(format!("bad kind `{}`", &rec[1])))?;
        let start_time = req_f64(&rec[3], "start_h").map_err(err)?;
        let end_time = opt_f64(&rec[4]).map_err(err)?;
        patients[idx].events.push(ClinicalEvent { kind, code: rec[2].to_string(), start_time, end_time });
        counts.events += 1;
    }

    let mut rdr = open_csv(labs_file)?;
    check_header(&mut rdr, labs_file, &LAB_HEADER)?;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            IngestError::row(labs_file, e.position().map_or(0, |p| p.line()), e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let err = |m: String| IngestError::row(labs_file, line, m);
        let &idx = by_id
            .get(&rec[0])
            .ok_or_else(|| err(format!("unknown patient_id `{}`", &rec[0])))?;
        let time = req_f64(&rec[2], "time_h").map_err(err)?;
        let value = req_f64(&rec[3], "value").map_err(err)?;
        let indicator = &rec[1];
        if let Some(last) = patients[idx].labs.get(indicator).and_then(|s| s.points.last()) {
            if time <= last.0 {
                return Err(err(format!(
                    "{indicator} times for `{}` are not strictly increasing",
                    &rec[0]
                )));
            }
        }
        patients[idx].push_lab(indicator, time, value);
        counts.labs += 1;
    }

    // Record-level failures are attributed to the patients file.
    let store = PatientStore::new(patients, dictionary, dict.confounders).map_err(|e| match e {
        StoreError::MissingRange(_) => {
            IngestError::Store { file: dictionary_file.to_path_buf(), source: e }
        }
        StoreError::Record(RecordError::NonMonotoneLab { .. }) => {
            IngestError::Store { file: labs_file.to_path_buf(), source: e }
        }
        _ => IngestError::Store { file: patients_file.to_path_buf(), source: e },
    })?;
    Ok((store, counts))
}

/// Loads `patients.csv`, `events.csv`, `labs.csv` and `dictionary.json` from a directory.
pub fn load_store_dir(dir: &Path) -> Result<(PatientStore, StoreCounts), IngestError> {
    load_store(
        &dir.join(PATIENTS_FILE),
        &dir.join(EVENTS_FILE),
        &dir.join(LABS_FILE),
        &dir.join(DICTIONARY_FILE),
    )
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes the store back out in the ingestion schema.
pub fn write_store(store: &PatientStore, dir: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut pw = csv::Writer::from_writer(BufWriter::new(File::create(dir.join(PATIENTS_FILE))?));
    let mut ew = csv::Writer::from_writer(BufWriter::new(File::create(dir.join(EVENTS_FILE))?));
    let mut lw = csv::Writer::from_writer(BufWriter::new(File::create(dir.join(LABS_FILE))?));
    pw.write_record(PATIENT_HEADER)?;
    ew.write_record(EVENT_HEADER)?;
    lw.write_record(LAB_HEADER)?;
    for p in store.patients() {
        pw.write_record([
            p.patient_id.clone(),
            p.age.to_string(),
            p.gender.as_str().to_string(),
            p.race.clone(),
            fmt_opt(p.height),
            fmt_opt(p.weight),
            fmt_opt(p.discharge_time),
            fmt_opt(p.death_time),
        ])?;
        for ev in &p.events {
            ew.write_record([
                p.patient_id.clone(),
                ev.kind.as_str().to_string(),
                ev.code.clone(),
                ev.start_time.to_string(),
                fmt_opt(ev.end_time),
            ])?;
        }
        for series in p.labs.values() {
            for &(t, v) in &series.points {
                lw.write_record([
                    p.patient_id.clone(),
                    series.indicator.clone(),
                    t.to_string(),
                    v.to_string(),
                ])?;
            }
        }
    }
    pw.flush()?;
    ew.flush()?;
    lw.flush()?;
    let dict = DictionaryFile {
        ranges: store.dictionary.iter().map(|(k, r)| (k.clone(), [r.lower, r.upper])).collect(),
        confounders: store.confounders.clone(),
    };
    let mut f = BufWriter::new(File::create(dir.join(DICTIONARY_FILE))?);
    serde_json::to_writer_pretty(&mut f, &dict)?;
    f.write_all(b"\n")?;
    f.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    const DICT: &str = r#"{"ranges": {"SCr": [0.6, 1.3], "AST": [8, 40]}, "confounders": ["age"]}"#;

    fn write_files(dir: &Path, patients: &str, events: &str, labs: &str, dict: &str) {
        std::fs::write(dir.join(PATIENTS_FILE), patients).unwrap();
        std::fs::write(dir.join(EVENTS_FILE), events).unwrap();
        std::fs::write(dir.join(LABS_FILE), labs).unwrap();
        std::fs::write(dir.join(DICTIONARY_FILE), dict).unwrap();
    }

    const PH: &str = "patient_id,age,gender,race,height_m,weight_kg,discharge_h,death_h\n";
    const EH: &str = "patient_id,kind,code,start_h,end_h\n";
    const LH: &str = "patient_id,indicator,time_h,value\n";

    #[test]
    fn three_patients_no_events() {
        let dir = tempfile::tempdir().unwrap();
        let pats = format!("{PH}p1,30,male,white,1.8,80,100,\np2,40,female,black,,,,\np3,50,male,asian,1.7,,,20\n");
        write_files(dir.path(), &pats, EH, LH, DICT);
        let (store, counts) = load_store_dir(dir.path()).unwrap();
        assert_eq!(store.len(), 3);
        assert_eq!(counts, StoreCounts { patients: 3, events: 0, labs: 0 });
        assert_eq!(store.get("p3").unwrap().death_time, Some(20.0));
        assert_eq!(store.confounders, vec!["age".to_string()]);
    }

    #[test]
    fn duplicate_id_located() {
        let dir = tempfile::tempdir().unwrap();
        let pats = format!("{PH}p1,30,male,white,,,,\np1,31,male,white,,,,\n");
        write_files(dir.path(), &pats, EH, LH, DICT);
        match load_store_dir(dir.path()) {
            Err(IngestError::Row { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("duplicate"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dangling_lab_reference() {
        let dir = tempfile::tempdir().unwrap();
        let pats = format!("{PH}p1,30,male,white,,,,\n");
        let labs = format!("{LH}p9,SCr,1,1.0\n");
        write_files(dir.path(), &pats, EH, &labs, DICT);
        let err = load_store_dir(dir.path()).unwrap_err();
        assert!(err.to_string().contains("unknown patient_id `p9`"), "{err}");
        assert!(err.to_string().contains("labs.csv:2"), "{err}");
    }

    #[test]
    fn non_monotone_lab_times() {
        let dir = tempfile::tempdir().unwrap();
        let pats = format!("{PH}p1,30,male,white,,,,\n");
        let labs = format!("{LH}p1,SCr,5,1.0\np1,SCr,5,1.1\n");
        write_files(dir.path(), &pats, EH, &labs, DICT);
        let err = load_store_dir(dir.path()).unwrap_err();
        assert!(err.to_string().contains("strictly increasing"), "{err}");
    }

    #[test]
    fn missing_range_for_ast() {
        let dir = tempfile::tempdir().unwrap();
        let pats = format!("{PH}p1,30,male,white,,,,\n");
        write_files(dir.path(), &pats, EH, LH, r#"{"ranges": {"SCr": [0.6, 1.3]}}"#);
        let err = load_store_dir(dir.path()).unwrap_err();
        assert!(matches!(
            err,
            IngestError::Store { source: StoreError::MissingRange(ref s), .. } if s == "AST"
        ));
    }

    #[test]
    fn missing_file_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let pats = format!("{PH}p1,30,male,white,,,,\n");
        write_files(dir.path(), &pats, EH, LH, DICT);
        std::fs::remove_file(dir.path().join(LABS_FILE)).unwrap();
        assert!(matches!(load_store_dir(dir.path()), Err(IngestError::Io { .. })));
    }
}
