//! Line-oriented cohort files.
//!
//! ```text
//! #duacm-cohort v1
//! @feature<TAB>name<TAB>min<TAB>max        one line per feature, in column order
//! @diagnosis<TAB>id<TAB>name               one line per vocabulary entry
//! @end
//! id<TAB>name...<TAB>diagnosis<TAB>outcome<TAB>latent
//! p000000<TAB>0.25<TAB>...<TAB>3<TAB>1<TAB>0.1,-0.4
//! ```
//!
//! Values are tab separated. Floats use the shortest representation that
//! parses back to the same bits. An empty diagnosis field means unlabelled and
//! an empty latent field means no ground-truth state.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{Cohort, Diagnosis, DiagnosisId, FeatureSchema, PatientRecord};
use crate::error::{Error, Result};

const MAGIC: &str = "#duacm-cohort v1";

pub fn write_cohort<W: Write>(cohort: &Cohort, mut w: W) -> Result<()> {
    writeln!(w, "{MAGIC}")?;
    for (name, (lo, hi)) in cohort.schema.names.iter().zip(&cohort.schema.ranges) {
        writeln!(w, "@feature\t{name}\t{lo}\t{hi}")?;
    }
    for d in &cohort.diagnosis_vocab {
        writeln!(w, "@diagnosis\t{}\t{}", d.id, d.name)?;
    }
    writeln!(w, "@end")?;
    write!(w, "id")?;
    for name in &cohort.schema.names {
        write!(w, "\t{name}")?;
    }
    writeln!(w, "\tdiagnosis\toutcome\tlatent")?;
    for r in &cohort.records {
        write!(w, "{}", r.id)?;
        for v in &r.features {
            write!(w, "\t{v}")?;
        }
        match r.diagnosis {
            Some(d) => write!(w, "\t{d}")?,
            None => write!(w, "\t")?,
        }
        write!(w, "\t{}\t", r.outcome as u8)?;
        if let Some(z) = &r.latent_state {
            let parts: Vec<String> = z.iter().map(|v| v.to_string()).collect();
            write!(w, "{}", parts.join(","))?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

fn parse_f64(s: &str, line: usize, what: &str) -> Result<f64> {
    s.parse::<f64>().map_err(|_| Error::Parse {
        line,
        message: format!("invalid {what} `{s}`"),
    })
}

pub fn read_cohort<R: BufRead>(r: R) -> Result<Cohort> {
    let mut lines = r.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, first) = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "empty file".into(),
    })?;
    if first?.trim_end() != MAGIC {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected `{MAGIC}` header"),
        });
    }

    let mut schema = FeatureSchema::default();
    let mut vocab = Vec::new();
    let mut header_done = false;
    for (no, line) in lines.by_ref() {
        let line = line?;
        let fields: Vec<&str> = line.split('\t').collect();
        match fields[0] {
            "@feature" if fields.len() == 4 => {
                schema.names.push(fields[1].to_string());
                schema.ranges.push((
                    parse_f64(fields[2], no, "range")?,
                    parse_f64(fields[3], no, "range")?,
                ));
            }
            "@diagnosis" if fields.len() == 3 => {
                let id = fields[1].parse::<u32>().map_err(|_| Error::Parse {
                    line: no,
                    message: format!("invalid diagnosis id `{}`", fields[1]),
                })?;
                vocab.push(Diagnosis {
                    id: DiagnosisId(id),
                    name: fields[2].to_string(),
                });
            }
            "@end" => {
                header_done = true;
                break;
            }
            _ => {
                return Err(Error::Parse {
                    line: no,
                    message: format!("unexpected header line `{line}`"),
                })
            }
        }
    }
    if !header_done {
        return Err(Error::Parse {
            line: 0,
            message: "missing @end".into(),
        });
    }
    let n_features = schema.len();
    let (no, columns) = lines.next().ok_or(Error::Parse {
        line: 0,
        message: "missing column header".into(),
    })?;
    let columns = columns?;
    let expected_cols = n_features + 4;
    if columns.split('\t').count() != expected_cols {
        return Err(Error::Schema(format!(
            "column header at line {no} does not match the {n_features} declared features"
        )));
    }

    let known: std::collections::HashSet<DiagnosisId> = vocab.iter().map(|d| d.id).collect();
    let mut records = Vec::new();
    for (no, line) in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != expected_cols {
            return Err(Error::Schema(format!(
                "record at line {no} has {} fields, expected {expected_cols}",
                fields.len()
            )));
        }
        let features = fields[1..=n_features]
            .iter()
            .map(|s| parse_f64(s, no, "feature value"))
            .collect::<Result<Vec<_>>>()?;
        let diagnosis = match fields[n_features + 1] {
            "" => None,
            s => {
                let id = DiagnosisId(s.parse::<u32>().map_err(|_| Error::Parse {
                    line: no,
                    message: format!("invalid diagnosis `{s}`"),
                })?);
                if !known.contains(&id) {
                    return Err(Error::Schema(format!(
                        "record at line {no}: diagnosis {id} is not in the vocabulary"
                    )));
                }
                Some(id)
            }
        };
        let outcome = match fields[n_features + 2] {
            "0" => false,
            "1" => true,
            s => {
                return Err(Error::Parse {
                    line: no,
                    message: format!("outcome must be 0 or 1, got `{s}`"),
                })
            }
        };
        let latent_state = match fields[n_features + 3] {
            "" => None,
            s => Some(
                s.split(',')
                    .map(|v| parse_f64(v, no, "latent value"))
                    .collect::<Result<Vec<_>>>()?,
            ),
        };
        records.push(PatientRecord {
            id: fields[0].to_string(),
            features,
            diagnosis,
            outcome,
            latent_state,
        });
    }
    Cohort::new(schema, records, vocab)
}

/// Writes to a temporary sibling and renames it into place.
pub fn save_cohort(cohort: &Cohort, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("tmp");
    {
        let f = File::create(&tmp)?;
        write_cohort(cohort, BufWriter::new(f))?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_cohort(path: impl AsRef<Path>) -> Result<Cohort> {
    read_cohort(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{generate_cohort, CohortSpec};

    fn roundtrip(c: &Cohort) -> Cohort {
        let mut buf = Vec::new();
        write_cohort(c, &mut buf).unwrap();
        read_cohort(buf.as_slice()).unwrap()
    }

    #[test]
    fn empty_cohort_round_trips() {
        let c = Cohort::default();
        assert_eq!(roundtrip(&c), c);
    }

    #[test]
    fn synthetic_cohort_round_trips_bitwise() {
        let c = generate_cohort(&CohortSpec { n_patients: 1000, seed: 3, ..CohortSpec::default() }).unwrap();
        let back = roundtrip(&c);
        assert_eq!(back, c);
        for (a, b) in c.records.iter().zip(&back.records) {
            for (x, y) in a.features.iter().zip(&b.features) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn absent_latent_and_diagnosis_survive() {
        let mut c = generate_cohort(&CohortSpec { n_patients: 20, seed: 1, ..CohortSpec::default() }).unwrap();
        for r in c.records.iter_mut().step_by(2) {
            r.latent_state = None;
            r.diagnosis = None;
        }
        assert_eq!(roundtrip(&c), c);
    }

    #[test]
    fn unknown_diagnosis_is_a_schema_error() {
        let text = "#duacm-cohort v1\n@feature\tx0\t0\t1\n@diagnosis\t0\tdx0\n@end\nid\tx0\tdiagnosis\toutcome\tlatent\np1\t0.5\t7\t1\t\n";
        match read_cohort(text.as_bytes()) {
            Err(Error::Schema(msg)) => assert!(msg.contains("diagnosis 7"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_value_reports_line() {
        let text = "#duacm-cohort v1\n@feature\tx0\t0\t1\n@end\nid\tx0\tdiagnosis\toutcome\tlatent\np1\t0.5\t\t1\t\np2\tabc\t\t0\t\n";
        match read_cohort(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 6),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn save_and_load_through_a_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.tsv");
        let c = generate_cohort(&CohortSpec { n_patients: 50, seed: 8, ..CohortSpec::default() }).unwrap();
        save_cohort(&c, &path).unwrap();
        assert_eq!(load_cohort(&path).unwrap(), c);
        assert!(!path.with_extension("tmp").exists());
    }
}
