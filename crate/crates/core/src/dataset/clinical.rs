//! Clinical records, the tabular CSV format and the 4-value clinical encoding.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::slope::{self, DesignPair};

pub const CSV_HEADER: [&str; 6] = ["patient_id", "weeks", "fvc", "age", "sex", "smoking_status"];

pub const AGE_BOUNDS: (u32, u32) = (18, 120);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sex {
    Male,
    Female,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoking {
    CurrentlySmokes,
    ExSmoker,
    NeverSmoked,
}

impl Smoking {
    /// Two-bit code `(bit1, bit0)`. `(1, 1)` is unused.
    pub fn bits(self) -> (u8, u8) {
        match self {
            Smoking::NeverSmoked => (0, 0),
            Smoking::ExSmoker => (0, 1),
            Smoking::CurrentlySmokes => (1, 0),
        }
    }
}

impl FromStr for Sex {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "Male" => Ok(Sex::Male),
            "Female" => Ok(Sex::Female),
            other => Err(format!("unknown sex {other:?}")),
        }
    }
}

impl fmt::Display for Sex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sex::Male => "Male",
            Sex::Female => "Female",
        })
    }
}

impl FromStr for Smoking {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "Currently smokes" => Ok(Smoking::CurrentlySmokes),
            "Ex-smoker" => Ok(Smoking::ExSmoker),
            "Never smoked" => Ok(Smoking::NeverSmoked),
            other => Err(format!("unknown smoking status {other:?}")),
        }
    }
}

impl fmt::Display for Smoking {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Smoking::CurrentlySmokes => "Currently smokes",
            Smoking::ExSmoker => "Ex-smoker",
            Smoking::NeverSmoked => "Never smoked",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClinicalRecord {
    pub patient_id: String,
    pub age: u32,
    pub sex: Sex,
    pub smoking: Smoking,
}

/// One CSV row: a single FVC visit plus the patient's clinical fields.
#[derive(Debug, Clone, PartialEq)]
pub struct ClinicalRow {
    pub patient_id: String,
    pub week: f64,
    pub fvc: f64,
    pub record: ClinicalRecord,
}

/// Chronologically ordered FVC visits `(week, mL)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FvcSeries {
    points: Vec<(f64, f64)>,
}

impl FvcSeries {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::Invalid(format!(
                "FVC series needs at least 2 visits, got {}",
                points.len()
            )));
        }
        for w in points.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::Invalid(format!(
                    "FVC timestamps not strictly increasing at week {}",
                    w[1].0
                )));
            }
        }
        if let Some(p) = points.iter().find(|p| !(p.1 > 0.0) || !p.1.is_finite() || !p.0.is_finite()) {
            return Err(Error::Invalid(format!("invalid FVC {} at week {}", p.1, p.0)));
        }
        Ok(FvcSeries { points })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn baseline(&self) -> f64 {
        self.points[0].1
    }

    /// Weeks shifted so the first visit is at zero.
    pub fn rezeroed_times(&self) -> Vec<f64> {
        let t0 = self.points[0].0;
        self.points.iter().map(|p| p.0 - t0).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.1).collect()
    }

    pub fn design_pair(&self) -> Result<DesignPair> {
        DesignPair::new(self.rezeroed_times(), self.values())
    }

    /// Ground-truth decline rate (mL/week) of the least-squares line.
    pub fn slope_target(&self) -> Result<f64> {
        Ok(slope::ols_fit(&self.design_pair()?)?.slope)
    }
}

/// Four-value model input `[age_norm, sex, smoke_bit1, smoke_bit0]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClinicalVector(pub [f64; 4]);

/// Min-max statistics for age normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub age_min: f64,
    pub age_max: f64,
}

impl NormStats {
    pub fn new(age_min: f64, age_max: f64) -> Result<Self> {
        if !(age_min < age_max) {
            return Err(Error::Invalid(format!("age_min {age_min} must be < age_max {age_max}")));
        }
        Ok(NormStats { age_min, age_max })
    }

    /// Range over the given records; a single distinct age widens to one year.
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a ClinicalRecord>) -> Result<Self> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for r in records {
            lo = lo.min(f64::from(r.age));
            hi = hi.max(f64::from(r.age));
        }
        if !lo.is_finite() {
            return Err(Error::Invalid("no records to compute age statistics".into()));
        }
        if hi <= lo {
            hi = lo + 1.0;
        }
        NormStats::new(lo, hi)
    }
}

pub fn encode_clinical(record: &ClinicalRecord, stats: &NormStats) -> ClinicalVector {
    let age = ((f64::from(record.age) - stats.age_min) / (stats.age_max - stats.age_min)).clamp(0.0, 1.0);
    let sex = match record.sex {
        Sex::Male => 1.0,
        Sex::Female => 0.0,
    };
    let (b1, b0) = record.smoking.bits();
    ClinicalVector([age, sex, f64::from(b1), f64::from(b0)])
}

fn field<'r>(rec: &'r csv::StringRecord, idx: usize, row: usize) -> Result<&'r str> {
    rec.get(idx).map(str::trim).ok_or_else(|| Error::Csv {
        row,
        message: format!("missing column {}", CSV_HEADER[idx]),
    })
}

fn number(rec: &csv::StringRecord, idx: usize, row: usize) -> Result<f64> {
    let raw = field(rec, idx, row)?;
    raw.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Csv {
            row,
            message: format!("non-numeric {} {raw:?}", CSV_HEADER[idx]),
        })
}

/// Parses CSV text. Row numbers in errors count the header as row 1.
pub fn parse_clinical_str(text: &str) -> Result<Vec<ClinicalRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| Error::Csv {
        row: 1,
        message: e.to_string(),
    })?;
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    if names != CSV_HEADER {
        let missing: Vec<&str> = CSV_HEADER.iter().filter(|c| !names.contains(c)).copied().collect();
        return Err(Error::Csv {
            row: 1,
            message: if missing.is_empty() {
                format!("header must be {}", CSV_HEADER.join(","))
            } else {
                format!("missing column {}", missing.join(", "))
            },
        });
    }

    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| Error::Csv {
            row,
            message: e.to_string(),
        })?;
        let patient_id = field(&rec, 0, row)?.to_string();
        if patient_id.is_empty() {
            return Err(Error::Csv {
                row,
                message: "empty patient_id".into(),
            });
        }
        let week = number(&rec, 1, row)?;
        let fvc = number(&rec, 2, row)?;
        let age_raw = field(&rec, 3, row)?;
        let age: u32 = age_raw.parse().map_err(|_| Error::Csv {
            row,
            message: format!("non-integer age {age_raw:?}"),
        })?;
        if age < AGE_BOUNDS.0 || age > AGE_BOUNDS.1 {
            return Err(Error::Csv {
                row,
                message: format!("age {age} outside [{}, {}]", AGE_BOUNDS.0, AGE_BOUNDS.1),
            });
        }
        let sex = field(&rec, 4, row)?
            .parse::<Sex>()
            .map_err(|message| Error::Csv { row, message })?;
        let smoking = field(&rec, 5, row)?
            .parse::<Smoking>()
            .map_err(|message| Error::Csv { row, message })?;
        rows.push(ClinicalRow {
            record: ClinicalRecord {
                patient_id: patient_id.clone(),
                age,
                sex,
                smoking,
            },
            patient_id,
            week,
            fvc,
        });
    }
    Ok(rows)
}

pub fn parse_clinical_csv(path: &Path) -> Result<Vec<ClinicalRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_clinical_str(&text)
}

/// Per-patient clinical record and visit list, before the series is validated.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedPatient {
    pub record: ClinicalRecord,
    pub visits: Vec<(f64, f64)>,
}

impl GroupedPatient {
    pub fn series(&self) -> Result<FvcSeries> {
        FvcSeries::new(self.visits.clone())
            .map_err(|e| Error::Invalid(format!("patient {}: {e}", self.record.patient_id)))
    }
}

/// Groups rows by patient, sorts visits by week and averages duplicate weeks.
pub fn group_rows(rows: &[ClinicalRow]) -> Result<BTreeMap<String, GroupedPatient>> {
    let mut by_patient: BTreeMap<String, (ClinicalRecord, BTreeMap<u64, (f64, f64, usize)>)> = BTreeMap::new();
    for r in rows {
        let entry = by_patient
            .entry(r.patient_id.clone())
            .or_insert_with(|| (r.record.clone(), BTreeMap::new()));
        if entry.0 != r.record {
            return Err(Error::Invalid(format!(
                "patient {} has inconsistent clinical fields",
                r.patient_id
            )));
        }
        // key on the bit pattern of the (normalized) week so equal weeks merge
        let week = if r.week == 0.0 { 0.0 } else { r.week };
        let slot = entry.1.entry(week.to_bits()).or_insert((week, 0.0, 0));
        slot.1 += r.fvc;
        slot.2 += 1;
    }
    Ok(by_patient
        .into_iter()
        .map(|(id, (record, weeks))| {
            let mut visits: Vec<(f64, f64)> = weeks
                .into_values()
                .map(|(w, sum, n)| (w, sum / n as f64))
                .collect();
            visits.sort_by(|a, b| a.0.total_cmp(&b.0));
            (id, GroupedPatient { record, visits })
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const HEAD: &str = "patient_id,weeks,fvc,age,sex,smoking_status\n";

    #[test]
    fn parses_one_row() {
        let rows = parse_clinical_str(&format!("{HEAD}P1,0,2690,67,Male,Ex-smoker\n")).unwrap();
        assert_eq!(rows.len(), 1);
        let r = &rows[0];
        assert_eq!((r.patient_id.as_str(), r.week, r.fvc), ("P1", 0.0, 2690.0));
        assert_eq!(
            r.record,
            ClinicalRecord {
                patient_id: "P1".into(),
                age: 67,
                sex: Sex::Male,
                smoking: Smoking::ExSmoker
            }
        );
    }

    #[test]
    fn duplicate_weeks_are_averaged() {
        let text = format!(
            "{HEAD}P1,4,2000,67,Male,Ex-smoker\nP1,0,2500,67,Male,Ex-smoker\nP1,4,2200,67,Male,Ex-smoker\n"
        );
        let grouped = group_rows(&parse_clinical_str(&text).unwrap()).unwrap();
        assert_eq!(grouped["P1"].visits, vec![(0.0, 2500.0), (4.0, 2100.0)]);
    }

    #[test]
    fn unknown_smoking_names_the_row() {
        let text = format!("{HEAD}P1,0,2690,67,Male,Ex-smoker\nP1,3,2600,67,Male,Vaper\n");
        let err = parse_clinical_str(&text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("unknown smoking status") && msg.contains("row 3"), "{msg}");
    }

    #[test]
    fn schema_errors() {
        let err = parse_clinical_str("patient_id,weeks,fvc,age,sex\nP1,0,1,60,Male\n").unwrap_err();
        assert!(err.to_string().contains("missing column smoking_status"));
        let err = parse_clinical_str(&format!("{HEAD}P1,zero,2690,67,Male,Ex-smoker\n")).unwrap_err();
        assert!(err.to_string().contains("non-numeric weeks"));
        let err = parse_clinical_str(&format!("{HEAD}P1,0,2690,7,Male,Ex-smoker\n")).unwrap_err();
        assert!(err.to_string().contains("age 7"));
    }

    #[test]
    fn inconsistent_clinical_fields_rejected() {
        let text = format!("{HEAD}P1,0,2690,67,Male,Ex-smoker\nP1,3,2600,68,Male,Ex-smoker\n");
        assert!(group_rows(&parse_clinical_str(&text).unwrap()).is_err());
    }

    #[test]
    fn encoding_examples() {
        let stats = NormStats::new(49.0, 88.0).unwrap();
        let rec = |age, sex, smoking| ClinicalRecord {
            patient_id: "P".into(),
            age,
            sex,
            smoking,
        };
        assert_eq!(encode_clinical(&rec(49, Sex::Female, Smoking::NeverSmoked), &stats).0[0], 0.0);
        assert_eq!(encode_clinical(&rec(88, Sex::Female, Smoking::NeverSmoked), &stats).0[0], 1.0);
        let v = encode_clinical(&rec(67, Sex::Male, Smoking::ExSmoker), &stats).0;
        assert!((v[0] - 18.0 / 39.0).abs() < 1e-15);
        assert_eq!(&v[1..], &[1.0, 0.0, 1.0]);
        // clamping
        assert_eq!(encode_clinical(&rec(30, Sex::Male, Smoking::ExSmoker), &stats).0[0], 0.0);
        assert_eq!(encode_clinical(&rec(100, Sex::Male, Smoking::ExSmoker), &stats).0[0], 1.0);
        assert!(NormStats::new(5.0, 5.0).is_err());
    }

    #[test]
    fn categorical_codes_are_injective() {
        let stats = NormStats::new(49.0, 88.0).unwrap();
        let mut seen = Vec::new();
        for sex in [Sex::Male, Sex::Female] {
            for smoking in [Smoking::CurrentlySmokes, Smoking::ExSmoker, Smoking::NeverSmoked] {
                let r = ClinicalRecord {
                    patient_id: "P".into(),
                    age: 60,
                    sex,
                    smoking,
                };
                let code = encode_clinical(&r, &stats).0;
                assert!(!seen.contains(&code));
                assert_ne!((code[2], code[3]), (1.0, 1.0));
                seen.push(code);
            }
        }
        assert_eq!(seen.len(), 6);
    }

    #[test]
    fn series_invariants() {
        assert!(FvcSeries::new(vec![(0.0, 1.0)]).is_err());
        assert!(FvcSeries::new(vec![(0.0, 1.0), (0.0, 2.0)]).is_err());
        assert!(FvcSeries::new(vec![(0.0, 1.0), (1.0, -2.0)]).is_err());
        let s = FvcSeries::new(vec![(-3.0, 3000.0), (7.0, 2950.0), (17.0, 2900.0)]).unwrap();
        assert_eq!(s.rezeroed_times(), vec![0.0, 10.0, 20.0]);
        assert!((s.slope_target().unwrap() + 5.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn grouped_visits_strictly_increase(rows in prop::collection::vec((0u8..3, -12i32..60, 800.0f64..6000.0), 1..60)) {
            let mut text = HEAD.to_string();
            for (p, w, f) in &rows {
                text.push_str(&format!("P{p},{w},{f},60,Female,Never smoked\n"));
            }
            let grouped = group_rows(&parse_clinical_str(&text).unwrap()).unwrap();
            for g in grouped.values() {
                for w in g.visits.windows(2) {
                    prop_assert!(w[1].0 > w[0].0);
                }
            }
        }
    }
}
