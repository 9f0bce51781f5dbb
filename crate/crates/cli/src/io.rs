//! CSV datasets: `x1..xd,y[,label]` files and the crab measurement file.
//!
//! Numbers are written in the shortest form that parses back to the same
//! `f64`, so a write/read cycle is lossless.

use std::fs;
use std::io::Read;
use std::path::Path;

use cwm::{Dataset, Label};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const LABEL_COLUMN: &str = "label";
pub const RESPONSE_COLUMN: &str = "y";

/// Renders a dataset with header `x1,…,xd,y` plus `label` when labels are present.
pub fn dataset_to_csv(data: &Dataset) -> String {
    let mut out = String::new();
    let mut header: Vec<String> = (1..=data.d()).map(|j| format!("x{j}")).collect();
    header.push(RESPONSE_COLUMN.into());
    if data.labels().is_some() {
        header.push(LABEL_COLUMN.into());
    }
    out.push_str(&header.join(","));
    out.push('\n');
    for i in 0..data.n() {
        let mut fields: Vec<String> = data.x_row(i).iter().map(|v| v.to_string()).collect();
        fields.push(data.y()[i].to_string());
        if let Some(l) = data.labels() {
            fields.push(l[i].to_string());
        }
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn write_dataset(data: &Dataset, path: &Path) -> CliResult<()> {
    write_text(path, &dataset_to_csv(data))
}

fn read_bytes(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_sha256(path: &Path) -> CliResult<String> {
    Ok(sha256_hex(&read_bytes(path)?))
}

fn parse_number(field: &str, path: &str, line: u64, column: &str) -> CliResult<f64> {
    let v: f64 = field.trim().parse().map_err(|_| CliError::Parse {
        path: path.into(),
        line,
        message: format!("column `{column}`: `{field}` is not a number"),
    })?;
    if !v.is_finite() {
        return Err(CliError::Parse { path: path.into(), line, message: format!("column `{column}`: non-finite value") });
    }
    Ok(v)
}

/// Reads a dataset: every column other than `y` and `label` is a covariate, in file order.
pub fn parse_dataset(reader: impl Read, source: &str) -> CliResult<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| CliError::Parse { path: source.into(), line: 1, message: e.to_string() })?
        .clone();
    let names: Vec<&str> = headers.iter().collect();
    let y_col = names
        .iter()
        .position(|h| *h == RESPONSE_COLUMN)
        .ok_or_else(|| CliError::MissingColumn { path: source.into(), column: RESPONSE_COLUMN.into() })?;
    let label_col = names.iter().position(|h| *h == LABEL_COLUMN);
    let x_cols: Vec<usize> = (0..names.len()).filter(|&j| j != y_col && Some(j) != label_col).collect();
    if x_cols.is_empty() {
        return Err(CliError::Data(format!("{source}: no covariate columns")));
    }
    let (mut x, mut y, mut labels) = (Vec::new(), Vec::new(), Vec::new());
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::Parse {
            path: source.into(),
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        for &j in &x_cols {
            x.push(parse_number(&rec[j], source, line, names[j])?);
        }
        y.push(parse_number(&rec[y_col], source, line, RESPONSE_COLUMN)?);
        if let Some(j) = label_col {
            let l: Label = rec[j]
                .parse()
                .map_err(|e: cwm::CwmError| CliError::Parse { path: source.into(), line, message: e.to_string() })?;
            labels.push(l);
        }
    }
    if y.is_empty() {
        return Err(CliError::Data(format!("{source}: no data rows")));
    }
    Ok(Dataset::new(x, x_cols.len(), y, label_col.map(|_| labels))?)
}

pub fn read_dataset(path: &Path) -> CliResult<Dataset> {
    parse_dataset(read_bytes(path)?.as_slice(), &path.display().to_string())
}

/// Covariate columns of the crab file, in the order used for `x`.
pub const CRAB_COVARIATES: [&str; 4] = ["FL", "RW", "CW", "BD"];
/// Response column of the crab file.
pub const CRAB_RESPONSE: &str = "CL";
pub const CRAB_SEX: &str = "sex";
/// Rows per sex kept by the subsample option.
pub const CRAB_PER_SEX: usize = 50;
/// SHA-256 of the 200-row `crabs.csv` export (columns rownames, sp, sex, index, FL, RW, CL, CW, BD).
pub const CRAB_SHA256: &str = "ce380bd79208547b9fdcc1c1bf737955ed1b54dda3bb0b8f6dfced407fc98aef";

/// Reads the crab measurements: `x = (FL, RW, CW, BD)`, `y = CL`, group 1 = males, group 2 = females.
///
/// With `subsample`, keeps the first 50 rows of each sex in file order.
pub fn parse_crab(reader: impl Read, source: &str, subsample: bool) -> CliResult<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| CliError::Parse { path: source.into(), line: 1, message: e.to_string() })?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::MissingColumn { path: source.into(), column: name.into() })
    };
    let x_cols = CRAB_COVARIATES.map(col);
    let x_cols: Vec<usize> = x_cols.into_iter().collect::<CliResult<_>>()?;
    let y_col = col(CRAB_RESPONSE)?;
    let sex_col = col(CRAB_SEX)?;
    let (mut x, mut y, mut labels) = (Vec::new(), Vec::new(), Vec::new());
    let mut kept = [0usize; 2];
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::Parse {
            path: source.into(),
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let g = match rec[sex_col].to_ascii_uppercase().as_str() {
            "M" => 0,
            "F" => 1,
            other => {
                return Err(CliError::Parse { path: source.into(), line, message: format!("unknown sex `{other}`") })
            }
        };
        if subsample && kept[g] == CRAB_PER_SEX {
            continue;
        }
        kept[g] += 1;
        for (&j, name) in x_cols.iter().zip(CRAB_COVARIATES) {
            x.push(parse_number(&rec[j], source, line, name)?);
        }
        y.push(parse_number(&rec[y_col], source, line, CRAB_RESPONSE)?);
        labels.push(Label::Group(g));
    }
    if subsample && kept != [CRAB_PER_SEX; 2] {
        return Err(CliError::Data(format!(
            "{source}: subsample needs {CRAB_PER_SEX} rows of each sex, found {} male and {} female",
            kept[0], kept[1]
        )));
    }
    Ok(Dataset::new(x, CRAB_COVARIATES.len(), y, Some(labels))?)
}

pub fn load_crab_csv(path: &Path, subsample: bool) -> CliResult<Dataset> {
    parse_crab(read_bytes(path)?.as_slice(), &path.display().to_string(), subsample)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let x = vec![0.1, 1e-300, -3.0, std::f64::consts::PI];
        let y = vec![1.0 / 3.0, -2.5e10];
        let data = Dataset::new(x, 2, y, Some(vec![Label::Group(0), Label::Noise])).unwrap();
        let text = dataset_to_csv(&data);
        assert!(text.starts_with("x1,x2,y,label\n"));
        assert_eq!(parse_dataset(text.as_bytes(), "mem").unwrap(), data);
    }

    #[test]
    fn unlabelled_round_trip() {
        let data = Dataset::new(vec![1.0, 2.0], 1, vec![3.0, 4.0], None).unwrap();
        assert_eq!(parse_dataset(dataset_to_csv(&data).as_bytes(), "mem").unwrap(), data);
    }

    #[test]
    fn parse_errors_name_the_line() {
        let err = parse_dataset("x1,y\n1,2\n3,abc\n".as_bytes(), "f.csv").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        let err = parse_dataset("x1,z\n1,2\n".as_bytes(), "f.csv").unwrap_err();
        assert!(matches!(err, CliError::MissingColumn { .. }));
    }

    fn crab_text(n_per_sex: usize, drop: Option<&str>) -> String {
        let cols = ["rownames", "sp", "sex", "index", "FL", "RW", "CL", "CW", "BD"];
        let keep: Vec<usize> = (0..cols.len()).filter(|&j| Some(cols[j]) != drop).collect();
        let mut s = keep.iter().map(|&j| cols[j]).collect::<Vec<_>>().join(",") + "\n";
        for (k, sex) in ["M", "F", "M", "F"].iter().enumerate() {
            for i in 0..n_per_sex {
                let row = [
                    format!("{}", k * n_per_sex + i + 1),
                    "B".into(),
                    sex.to_string(),
                    format!("{}", i + 1),
                    format!("{}.1", 10 + i),
                    format!("{}.2", 8 + k),
                    format!("{}.3", 20 + i),
                    format!("{}.4", 25 + i),
                    "7.5".into(),
                ];
                s += &(keep.iter().map(|&j| row[j].clone()).collect::<Vec<_>>().join(",") + "\n");
            }
        }
        s
    }

    #[test]
    fn crab_subsample_takes_first_fifty_per_sex() {
        let full = parse_crab(crab_text(50, None).as_bytes(), "crabs", false).unwrap();
        assert_eq!(full.n(), 200);
        let sub = parse_crab(crab_text(50, None).as_bytes(), "crabs", true).unwrap();
        assert_eq!(sub.n(), 100);
        let labels = sub.labels().unwrap();
        assert_eq!(labels.iter().filter(|l| **l == Label::Group(0)).count(), 50);
        assert_eq!(sub.x_row(0), &[10.1, 8.2, 25.4, 7.5]);
        assert_eq!(sub.y()[0], 20.3);
    }

    #[test]
    fn crab_missing_column_is_named() {
        let err = parse_crab(crab_text(2, Some("CL")).as_bytes(), "crabs", false).unwrap_err();
        assert!(err.to_string().contains("`CL`"), "{err}");
    }
}
