//! Text formats for training sets and hyperparameters.
//!
//! Training sets are CSV with a header `p_1,…,p_d,tau_1,…,tau_n` and one
//! row per sample. Hyperparameters are a sectioned key-value file:
//!
//! ```text
//! [output_1]
//! signal_std = 1.2
//! lengthscale_1 = 0.4
//! lengthscale_2 = 0.9
//! noise_std = 0.05
//! ```

use std::fmt::Write as _;
use std::io::{Read, Write};

use nalgebra::DMatrix;

use super::kernel::Hyperparameters;
use crate::error::{Error, Result};

/// Writes `inputs` (`d × m`, one column per sample) and `targets` (`m × n`).
pub fn write_training_csv<W: Write>(
    writer: W,
    inputs: &DMatrix<f64>,
    targets: &DMatrix<f64>,
) -> Result<()> {
    if inputs.ncols() != targets.nrows() {
        return Err(Error::invalid(
            "inputs and targets disagree on sample count",
        ));
    }
    let mut w = csv::Writer::from_writer(writer);
    let header: Vec<String> = (1..=inputs.nrows())
        .map(|i| format!("p_{i}"))
        .chain((1..=targets.ncols()).map(|i| format!("tau_{i}")))
        .collect();
    w.write_record(&header).map_err(csv_err)?;
    for j in 0..inputs.ncols() {
        let row: Vec<String> = inputs
            .column(j)
            .iter()
            .chain(targets.row(j).iter())
            .map(|v| v.to_string())
            .collect();
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_training_csv<R: Read>(reader: R) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let mut r = csv::Reader::from_reader(reader);
    let header = r.headers().map_err(csv_err)?.clone();
    let d = header.iter().filter(|h| h.starts_with("p_")).count();
    let n = header.iter().filter(|h| h.starts_with("tau_")).count();
    let expected: Vec<String> = (1..=d)
        .map(|i| format!("p_{i}"))
        .chain((1..=n).map(|i| format!("tau_{i}")))
        .collect();
    if d == 0 || n == 0 || header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::Parse(format!(
            "training CSV header must be p_1..p_d,tau_1..tau_n, got {:?}",
            header.iter().collect::<Vec<_>>()
        )));
    }
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        for (col, field) in rec.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::Parse(format!(
                    "row {}, column {}: not a number: {field:?}",
                    line + 2,
                    col + 1
                ))
            })?;
            if col < d {
                inputs.push(v);
            } else {
                targets.push(v);
            }
        }
    }
    let m = inputs.len() / d;
    Ok((
        DMatrix::from_column_slice(d, m, &inputs),
        DMatrix::from_row_slice(m, n, &targets),
    ))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

pub fn format_hyperparameters(hyper: &[Hyperparameters]) -> String {
    let mut out = String::new();
    for (i, h) in hyper.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let _ = writeln!(out, "[output_{}]", i + 1);
        let _ = writeln!(out, "signal_std = {:?}", h.signal_std);
        for (d, l) in h.lengthscales.iter().enumerate() {
            let _ = writeln!(out, "lengthscale_{} = {:?}", d + 1, l);
        }
        let _ = writeln!(out, "noise_std = {:?}", h.noise_std);
    }
    out
}

pub fn parse_hyperparameters(text: &str) -> Result<Vec<Hyperparameters>> {
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?;
    let mut out = Vec::new();
    for i in 1.. {
        let key = format!("output_{i}");
        let Some(section) = table.get(&key) else {
            break;
        };
        let section = section
            .as_table()
            .ok_or_else(|| Error::Parse(format!("[{key}] is not a section")))?;
        let num = |name: &str| -> Result<f64> {
            section
                .get(name)
                .and_then(|v| v.as_float().or_else(|| v.as_integer().map(|i| i as f64)))
                .ok_or_else(|| Error::Parse(format!("[{key}] missing numeric `{name}`")))
        };
        let mut lengthscales = Vec::new();
        for d in 1.. {
            let name = format!("lengthscale_{d}");
            if !section.contains_key(&name) {
                break;
            }
            lengthscales.push(num(&name)?);
        }
        out.push(Hyperparameters::new(
            num("signal_std")?,
            lengthscales,
            num("noise_std")?,
        )?);
    }
    if out.is_empty() {
        return Err(Error::Parse("no [output_1] section found".into()));
    }
    if table.len() != out.len() {
        return Err(Error::Parse(
            "unexpected sections in hyperparameter file".into(),
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let x = DMatrix::from_row_slice(3, 2, &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        let y = DMatrix::from_row_slice(2, 1, &[7.0, 8.0]);
        let mut buf = Vec::new();
        write_training_csv(&mut buf, &x, &y).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("p_1,p_2,p_3,tau_1"));
        assert_eq!(lines.next(), Some("0,2,4,7"));
        assert_eq!(lines.next(), Some("1,3,5,8"));
    }

    #[test]
    fn rejects_bad_header() {
        let text = "x,tau_1\n1,2\n";
        assert!(read_training_csv(text.as_bytes()).is_err());
    }

    #[test]
    fn hyper_file_missing_key() {
        let text = "[output_1]\nsignal_std = 1.0\nlengthscale_1 = 2.0\n";
        assert!(parse_hyperparameters(text).is_err());
    }

    proptest! {
        #[test]
        fn training_csv_round_trip(
            vals in proptest::collection::vec(-1e6f64..1e6, 15),
        ) {
            let x = DMatrix::from_column_slice(3, 3, &vals[..9]);
            let y = DMatrix::from_row_slice(3, 2, &vals[9..]);
            let mut buf = Vec::new();
            write_training_csv(&mut buf, &x, &y).unwrap();
            let (x2, y2) = read_training_csv(buf.as_slice()).unwrap();
            prop_assert_eq!(x, x2);
            prop_assert_eq!(y, y2);
        }

        #[test]
        fn hyper_round_trip(
            sf in 1e-4f64..1e3, sn in 1e-6f64..10.0,
            ls in proptest::collection::vec(1e-3f64..1e3, 1..7),
            outputs in 1usize..4,
        ) {
            let h: Vec<_> = (0..outputs)
                .map(|k| Hyperparameters::new(sf * (k + 1) as f64, ls.clone(), sn).unwrap())
                .collect();
            let parsed = parse_hyperparameters(&format_hyperparameters(&h)).unwrap();
            prop_assert_eq!(parsed, h);
        }
    }
}
