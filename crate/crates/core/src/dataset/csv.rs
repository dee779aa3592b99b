use std::io::{Read, Write};
use std::path::Path;

use super::SubjectRecord;
use crate::error::{Error, Result};

const FIXED: [&str; 6] = ["id", "l", "q", "t_obs", "delta", "c1"];

/// Column layout of a subject file:
/// `id,l,q,t_obs,delta,c1,z1_1,...,z1_p[,gap,gap_len][,c2][,t_fail,c_latent]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CsvSchema {
    pub p: usize,
    pub gap: bool,
    pub c2: bool,
    /// Latent simulation columns `t_fail,c_latent`.
    pub latent: bool,
}

impl CsvSchema {
    pub fn new(p: usize) -> Self {
        CsvSchema {
            p,
            gap: false,
            c2: false,
            latent: false,
        }
    }

    pub fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = FIXED.iter().map(|s| s.to_string()).collect();
        h.extend((1..=self.p).map(|j| format!("z1_{j}")));
        if self.gap {
            h.extend(["gap".to_string(), "gap_len".to_string()]);
        }
        if self.c2 {
            h.push("c2".into());
        }
        if self.latent {
            h.extend(["t_fail".to_string(), "c_latent".to_string()]);
        }
        h
    }

    pub fn covariate_names(&self) -> Vec<String> {
        (1..=self.p).map(|j| format!("z1_{j}")).collect()
    }

    /// Reads the layout off a header row.
    pub fn from_header<S: AsRef<str>>(header: &[S]) -> Result<Self> {
        let cols: Vec<&str> = header.iter().map(|s| s.as_ref().trim()).collect();
        for (i, want) in FIXED.iter().enumerate() {
            match cols.get(i) {
                Some(got) if got == want => {}
                Some(got) => {
                    return Err(Error::parse(1, Some(got), format!("expected column `{want}` at position {}", i + 1)))
                }
                None => return Err(Error::parse(1, Some(want), "missing required column")),
            }
        }
        let mut p = 0;
        while cols.get(FIXED.len() + p) == Some(&format!("z1_{}", p + 1).as_str()) {
            p += 1;
        }
        if p == 0 {
            return Err(Error::parse(1, Some("z1_1"), "missing required column"));
        }
        let mut schema = CsvSchema::new(p);
        let mut rest = &cols[FIXED.len() + p..];
        if rest.first() == Some(&"gap") {
            if rest.get(1) != Some(&"gap_len") {
                return Err(Error::parse(1, Some("gap_len"), "`gap` must be followed by `gap_len`"));
            }
            schema.gap = true;
            rest = &rest[2..];
        }
        if rest.first() == Some(&"c2") {
            schema.c2 = true;
            rest = &rest[1..];
        }
        if rest.first() == Some(&"t_fail") {
            if rest.get(1) != Some(&"c_latent") {
                return Err(Error::parse(1, Some("c_latent"), "`t_fail` must be followed by `c_latent`"));
            }
            schema.latent = true;
            rest = &rest[2..];
        }
        if let Some(extra) = rest.first() {
            return Err(Error::parse(1, Some(extra), "unexpected column"));
        }
        Ok(schema)
    }

    pub fn infer(path: &Path) -> Result<Self> {
        let mut rdr = ::csv::ReaderBuilder::new().from_path(path).map_err(csv_err)?;
        let header = rdr.headers().map_err(csv_err)?.clone();
        CsvSchema::from_header(&header.iter().collect::<Vec<_>>())
    }
}

fn csv_err(e: ::csv::Error) -> Error {
    let row = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        ::csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::parse(row, None, format!("{other:?}")),
    }
}

/// Loads and validates subject records. The header must match `schema`.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Vec<SubjectRecord>> {
    let file = std::fs::File::open(path)?;
    read_csv(file, schema)
}

pub fn read_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<Vec<SubjectRecord>> {
    let mut rdr = ::csv::ReaderBuilder::new().trim(::csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers().map_err(csv_err)?.iter().map(str::to_owned).collect();
    let found = CsvSchema::from_header(&header)?;
    if found != *schema {
        return Err(Error::parse(
            1,
            None,
            format!("header {:?} does not match expected {:?}", header, schema.header()),
        ));
    }
    let names = schema.header();
    let mut out = Vec::new();
    let mut ids = std::collections::HashSet::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(csv_err)?;
        if rec.len() != names.len() {
            return Err(Error::parse(row, None, format!("expected {} fields, found {}", names.len(), rec.len())));
        }
        let cell = |j: usize| rec.get(j).unwrap_or("");
        let real = |j: usize| -> Result<Option<f64>> {
            let s = cell(j);
            if s.is_empty() {
                return Ok(None);
            }
            s.parse::<f64>()
                .map(Some)
                .map_err(|_| Error::parse(row, Some(&names[j]), format!("not a number: `{s}`")))
        };
        let required = |j: usize| -> Result<f64> {
            real(j)?.ok_or_else(|| Error::parse(row, Some(&names[j]), "missing value"))
        };
        let binary = |j: usize| -> Result<Option<bool>> {
            match cell(j) {
                "" => Ok(None),
                "0" => Ok(Some(false)),
                "1" => Ok(Some(true)),
                s => Err(Error::parse(row, Some(&names[j]), format!("expected 0/1, got `{s}`"))),
            }
        };
        let id: u64 = cell(0)
            .parse()
            .map_err(|_| Error::parse(row, Some("id"), format!("not an integer id: `{}`", cell(0))))?;
        if !ids.insert(id) {
            return Err(Error::parse(row, Some("id"), format!("duplicate id {id}")));
        }
        let l = binary(1)?.ok_or_else(|| Error::parse(row, Some("l"), "missing value"))?;
        let q = binary(2)?.ok_or_else(|| Error::parse(row, Some("q"), "missing value"))?;
        let t_obs = real(3)?;
        let delta = binary(4)?;
        let c1 = required(5)?;
        let z1 = (0..schema.p).map(|k| required(6 + k)).collect::<Result<Vec<_>>>()?;
        let mut j = 6 + schema.p;
        let (mut gap, mut gap_len) = (None, None);
        if schema.gap {
            gap = binary(j)?;
            gap_len = real(j + 1)?;
            j += 2;
        }
        let mut c2 = None;
        if schema.c2 {
            c2 = real(j)?;
            j += 1;
        }
        let (mut t_fail, mut c_latent) = (None, None);
        if schema.latent {
            t_fail = real(j)?;
            c_latent = real(j + 1)?;
        }
        let record = SubjectRecord {
            id,
            z1,
            t_fail,
            c1,
            c2,
            q,
            l,
            delta,
            t_obs,
            gap,
            gap_len,
            c_latent,
        };
        record.validate(None).map_err(|m| Error::parse(row, None, m))?;
        out.push(record);
    }
    Ok(out)
}

pub fn save_csv(path: &Path, subjects: &[SubjectRecord], schema: &CsvSchema) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_csv(file, subjects, schema)
}

pub fn write_csv<W: Write>(writer: W, subjects: &[SubjectRecord], schema: &CsvSchema) -> Result<()> {
    let mut w = ::csv::Writer::from_writer(writer);
    let io = |e: ::csv::Error| match e.into_kind() {
        ::csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::InvalidInput(format!("{other:?}")),
    };
    w.write_record(schema.header()).map_err(io)?;
    let real = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
    let bin = |v: Option<bool>| v.map(|b| if b { "1" } else { "0" }.to_string()).unwrap_or_default();
    for s in subjects {
        if s.z1.len() != schema.p {
            return Err(Error::InvalidInput(format!(
                "subject {} has {} covariates, schema expects {}",
                s.id,
                s.z1.len(),
                schema.p
            )));
        }
        let mut row = vec![
            s.id.to_string(),
            bin(Some(s.l)),
            bin(Some(s.q)),
            real(s.t_obs),
            bin(s.delta),
            real(Some(s.c1)),
        ];
        row.extend(s.z1.iter().map(|v| format!("{v}")));
        if schema.gap {
            row.push(bin(s.gap));
            row.push(real(s.gap_len));
        }
        if schema.c2 {
            row.push(real(s.c2));
        }
        if schema.latent {
            row.push(real(s.t_fail));
            row.push(real(s.c_latent));
        }
        w.write_record(&row).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const WELL_FORMED: &str = "\
id,l,q,t_obs,delta,c1,z1_1,z1_2
1,1,0,9.5,0,5,1,0.25
2,0,1,2.5,1,5,0,-1
3,0,0,,,4.2,1,1.5
";

    #[test]
    fn reads_three_rows() {
        let schema = CsvSchema::new(2);
        let recs = read_csv(WELL_FORMED.as_bytes(), &schema).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[2].t_obs, None);
        assert_eq!(recs[2].delta, None);
        assert_eq!(recs[1].z1, vec![0.0, -1.0]);
    }

    #[test]
    fn class3_with_outcome_is_rejected_with_row_number() {
        let bad = WELL_FORMED.replace("3,0,0,,,4.2", "3,0,0,7.0,0,4.2");
        let err = read_csv(bad.as_bytes(), &CsvSchema::new(2)).unwrap_err();
        match err {
            Error::Parse { row, .. } => assert_eq!(row, 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn q1_with_missing_outcome_is_rejected() {
        let bad = WELL_FORMED.replace("2,0,1,2.5,1", "2,0,1,,");
        assert!(matches!(
            read_csv(bad.as_bytes(), &CsvSchema::new(2)),
            Err(Error::Parse { row: 3, .. })
        ));
    }

    #[test]
    fn missing_column_reports_header_row() {
        let bad = "id,l,q,t_obs,c1,z1_1\n1,1,0,2,5,1\n";
        match CsvSchema::from_header(&bad.lines().next().unwrap().split(',').collect::<Vec<_>>()) {
            Err(Error::Parse { row: 1, column, .. }) => assert_eq!(column.as_deref(), Some("c1")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn schema_round_trips_through_header() {
        let schema = CsvSchema {
            p: 3,
            gap: true,
            c2: true,
            latent: true,
        };
        assert_eq!(CsvSchema::from_header(&schema.header()).unwrap(), schema);
        let mut h = schema.header();
        h.push("extra".into());
        assert!(CsvSchema::from_header(&h).is_err());
    }

    #[test]
    fn sentinel_binary_is_rejected() {
        let bad = WELL_FORMED.replace("3,0,0,,,4.2", "3,0,0,,-1,4.2");
        assert!(read_csv(bad.as_bytes(), &CsvSchema::new(2)).is_err());
    }
}
