//! Subject records and the CSV file formats.
//!
//! Longitudinal file: `subject_id,time_months,value`, one row per measurement.
//! Survival file: `subject_id,time_months,event,<covariates...>`, one row per
//! subject, `event` is 1 for an observed event and 0 for censoring.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::survival::SurvivalRecord;

/// Minimum number of longitudinal measurements per subject.
pub const MIN_MEASUREMENTS: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub id: String,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub survival: SurvivalRecord,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub subjects: Vec<Subject>,
    pub covariate_names: Vec<String>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn n_events(&self) -> usize {
        self.subjects.iter().filter(|s| s.survival.delta).count()
    }

    pub fn censoring_rate(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        1.0 - self.n_events() as f64 / self.len() as f64
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for s in &self.subjects {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Validation(format!("duplicate subject id {}", s.id)));
            }
            if s.times.len() != s.values.len() {
                return Err(Error::Contract(format!(
                    "subject {}: {} times but {} values",
                    s.id,
                    s.times.len(),
                    s.values.len()
                )));
            }
            if s.times.len() < MIN_MEASUREMENTS {
                return Err(Error::Validation(format!(
                    "subject {} has {} longitudinal measurements, need at least {MIN_MEASUREMENTS}",
                    s.id,
                    s.times.len()
                )));
            }
            if s.times.iter().chain(&s.values).any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("subject {} has non-finite measurements", s.id)));
            }
            if s.survival.z_baseline.len() != self.covariate_names.len() {
                return Err(Error::Contract(format!(
                    "subject {} has {} covariates, expected {}",
                    s.id,
                    s.survival.z_baseline.len(),
                    self.covariate_names.len()
                )));
            }
            s.survival.validate().map_err(|e| e.for_subject(&s.id))?;
        }
        Ok(())
    }

    /// Keep only the named baseline covariates, in the given order.
    pub fn select_covariates(&self, names: &[String]) -> Result<Dataset> {
        let idx: Vec<usize> = names
            .iter()
            .map(|n| {
                self.covariate_names
                    .iter()
                    .position(|c| c == n)
                    .ok_or_else(|| Error::Validation(format!("covariate {n} not found in survival data")))
            })
            .collect::<Result<_>>()?;
        let mut out = self.clone();
        out.covariate_names = names.to_vec();
        for s in &mut out.subjects {
            s.survival.z_baseline = idx.iter().map(|&i| s.survival.z_baseline[i]).collect();
        }
        Ok(out)
    }

    pub fn read_csv(longitudinal: &Path, survival: &Path) -> Result<Dataset> {
        let long = read_to_string(longitudinal)?;
        let surv = read_to_string(survival)?;
        Self::parse_csv(&long, &surv)
    }

    /// Parse both files from memory. Subjects are ordered as in the survival file.
    pub fn parse_csv(longitudinal: &str, survival: &str) -> Result<Dataset> {
        let mut measurements: HashMap<String, Vec<(f64, f64)>> = HashMap::new();
        let mut long_order = Vec::new();
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(longitudinal.as_bytes());
        expect_header(&mut rdr, &["subject_id", "time_months", "value"], "longitudinal")?;
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Parse(format!("longitudinal file: {e}")))?;
            let line = row + 2;
            if rec.len() != 3 {
                return Err(Error::Parse(format!(
                    "longitudinal file line {line}: expected 3 fields, found {}",
                    rec.len()
                )));
            }
            let id = rec[0].to_string();
            let t = parse_f64(&rec[1], "longitudinal", line, "time_months")?;
            let x = parse_f64(&rec[2], "longitudinal", line, "value")?;
            let entry = measurements.entry(id.clone()).or_insert_with(|| {
                long_order.push(id);
                Vec::new()
            });
            entry.push((t, x));
        }

        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(survival.as_bytes());
        let header = rdr
            .headers()
            .map_err(|e| Error::Parse(format!("survival file: {e}")))?
            .clone();
        let fixed = ["subject_id", "time_months", "event"];
        if header.len() < 3 || header.iter().take(3).ne(fixed.iter().copied()) {
            return Err(Error::Parse(format!(
                "survival file header must start with {}, found {}",
                fixed.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let covariate_names: Vec<String> = header.iter().skip(3).map(str::to_string).collect();
        let mut subjects = Vec::new();
        let mut surv_ids = BTreeSet::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Parse(format!("survival file: {e}")))?;
            let line = row + 2;
            if rec.len() != header.len() {
                return Err(Error::Parse(format!(
                    "survival file line {line}: expected {} fields, found {}",
                    header.len(),
                    rec.len()
                )));
            }
            let id = rec[0].to_string();
            let y = parse_f64(&rec[1], "survival", line, "time_months")?;
            let delta = match &rec[2] {
                "1" => true,
                "0" => false,
                other => {
                    return Err(Error::Parse(format!(
                        "survival file line {line}: event must be 0 or 1, found {other:?}"
                    )))
                }
            };
            let z = (3..rec.len())
                .map(|k| parse_f64(&rec[k], "survival", line, &header[k]))
                .collect::<Result<Vec<_>>>()?;
            if !surv_ids.insert(id.clone()) {
                return Err(Error::Validation(format!("subject {id} appears twice in the survival file")));
            }
            subjects.push((id, y, delta, z));
        }

        let long_only: Vec<&str> = long_order
            .iter()
            .filter(|id| !surv_ids.contains(*id))
            .map(String::as_str)
            .collect();
        let surv_only: Vec<&str> = subjects
            .iter()
            .filter(|(id, ..)| !measurements.contains_key(id))
            .map(|(id, ..)| id.as_str())
            .collect();
        if !long_only.is_empty() || !surv_only.is_empty() {
            let mut msg = String::from("subject ids must appear in both files;");
            if !long_only.is_empty() {
                msg += &format!(" longitudinal only: {}", long_only.join(", "));
            }
            if !surv_only.is_empty() {
                if !long_only.is_empty() {
                    msg += ";";
                }
                msg += &format!(" survival only: {}", surv_only.join(", "));
            }
            return Err(Error::Validation(msg));
        }

        let subjects = subjects
            .into_iter()
            .map(|(id, y, delta, z)| {
                let mut rows = measurements.remove(&id).unwrap_or_default();
                rows.sort_by(|a, b| a.0.total_cmp(&b.0));
                Subject {
                    times: rows.iter().map(|r| r.0).collect(),
                    values: rows.iter().map(|r| r.1).collect(),
                    survival: SurvivalRecord {
                        y,
                        delta,
                        z_baseline: z,
                    },
                    id,
                }
            })
            .collect();
        let ds = Dataset {
            subjects,
            covariate_names,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn longitudinal_csv(&self) -> String {
        let mut out = String::from("subject_id,time_months,value\n");
        for s in &self.subjects {
            for (t, x) in s.times.iter().zip(&s.values) {
                out += &format!("{},{},{}\n", s.id, t, x);
            }
        }
        out
    }

    pub fn survival_csv(&self) -> String {
        let mut out = String::from("subject_id,time_months,event");
        for c in &self.covariate_names {
            out.push(',');
            out += c;
        }
        out.push('\n');
        for s in &self.subjects {
            out += &format!("{},{},{}", s.id, s.survival.y, s.survival.delta as u8);
            for z in &s.survival.z_baseline {
                out += &format!(",{z}");
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, longitudinal: &Path, survival: &Path) -> Result<()> {
        write_string(longitudinal, &self.longitudinal_csv())?;
        write_string(survival, &self.survival_csv())
    }
}

fn expect_header<R: Read>(rdr: &mut csv::Reader<R>, expected: &[&str], which: &str) -> Result<()> {
    let header = rdr
        .headers()
        .map_err(|e| Error::Parse(format!("{which} file: {e}")))?;
    if header.iter().ne(expected.iter().copied()) {
        return Err(Error::Parse(format!(
            "{which} file header must be {}, found {}",
            expected.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    Ok(())
}

fn parse_f64(field: &str, which: &str, line: usize, column: &str) -> Result<f64> {
    let v: f64 = field.parse().map_err(|_| {
        Error::Parse(format!("{which} file line {line}, column {column}: cannot parse {field:?} as a number"))
    })?;
    if !v.is_finite() {
        return Err(Error::Parse(format!("{which} file line {line}, column {column}: value is not finite")));
    }
    Ok(v)
}

pub(crate) fn read_to_string(path: &Path) -> Result<String> {
    let mut s = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut s))
        .map_err(|e| Error::io(path, e))?;
    Ok(s)
}

pub(crate) fn write_string(path: &Path, contents: &str) -> Result<()> {
    File::create(path)
        .and_then(|mut f| f.write_all(contents.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const LONG: &str = "subject_id,time_months,value\na,1,4.5\na,0,4.0\nb,0,3.0\nb,2,3.5\nb,1,3.2\n";
    const SURV: &str = "subject_id,time_months,event,age\nb,5.5,1,-0.3\na,2.25,0,1.2\n";

    #[test]
    fn parses_and_orders_by_survival_file() {
        let ds = Dataset::parse_csv(LONG, SURV).unwrap();
        assert_eq!(ds.covariate_names, vec!["age"]);
        assert_eq!(ds.subjects[0].id, "b");
        assert_eq!(ds.subjects[0].times, vec![0.0, 1.0, 2.0]);
        assert_eq!(ds.subjects[0].values, vec![3.0, 3.2, 3.5]);
        assert!(ds.subjects[0].survival.delta);
        assert_eq!(ds.subjects[1].times, vec![0.0, 1.0]);
        assert_eq!(ds.subjects[1].survival.z_baseline, vec![1.2]);
        assert_eq!(ds.censoring_rate(), 0.5);
    }

    #[test]
    fn round_trip() {
        let ds = Dataset::parse_csv(LONG, SURV).unwrap();
        let again = Dataset::parse_csv(&ds.longitudinal_csv(), &ds.survival_csv()).unwrap();
        assert_eq!(ds, again);
    }

    #[test]
    fn one_file_only_ids_are_listed() {
        let surv = "subject_id,time_months,event\nb,5.5,1\nc,1,0\n";
        let err = Dataset::parse_csv(LONG, surv).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Validation(_)));
        assert!(msg.contains("longitudinal only: a"), "{msg}");
        assert!(msg.contains("survival only: c"), "{msg}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn too_few_measurements() {
        let long = "subject_id,time_months,value\na,0,4.0\n";
        let surv = "subject_id,time_months,event\na,1,1\n";
        assert!(matches!(Dataset::parse_csv(long, surv), Err(Error::Validation(_))));
    }

    #[test]
    fn parse_errors_name_line_and_column() {
        let long = "subject_id,time_months,value\na,0,4.0\na,x,4.0\n";
        let msg = Dataset::parse_csv(long, "subject_id,time_months,event\na,1,1\n")
            .unwrap_err()
            .to_string();
        assert!(msg.contains("line 3") && msg.contains("time_months"), "{msg}");
        let bad_event = "subject_id,time_months,event\na,1,2\n";
        assert!(matches!(
            Dataset::parse_csv("subject_id,time_months,value\na,0,1\na,1,1\n", bad_event),
            Err(Error::Parse(_))
        ));
        let bad_header = "id,time,value\na,0,1\n";
        assert!(matches!(Dataset::parse_csv(bad_header, SURV), Err(Error::Parse(_))));
    }

    #[test]
    fn covariate_selection() {
        let ds = Dataset::parse_csv(LONG, SURV).unwrap();
        assert!(ds.select_covariates(&[]).unwrap().subjects[0].survival.z_baseline.is_empty());
        assert!(matches!(ds.select_covariates(&["bmi".into()]), Err(Error::Validation(_))));
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = Dataset::read_csv(Path::new("/nonexistent/l.csv"), Path::new("/nonexistent/s.csv")).unwrap_err();
        assert_eq!(err.exit_code(), 4);
    }
}
