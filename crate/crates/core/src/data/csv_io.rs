use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::{Dataset, FeatureSchema, TravelMode, MODE_COLUMN};
use crate::error::{Error, Result};

pub fn load_csv(path: impl AsRef<Path>, schema: &FeatureSchema) -> Result<Dataset> {
    read_csv(File::open(path)?, schema)
}

fn check_header(header: &csv::StringRecord, schema: &FeatureSchema) -> Result<()> {
    let found: Vec<&str> = header.iter().map(str::trim).collect();
    let mut expected = schema.names();
    expected.push(MODE_COLUMN.to_string());

    if let Some(extra) = found.iter().find(|c| !expected.iter().any(|e| e == *c)) {
        return Err(Error::Schema(format!("unexpected column `{extra}`")));
    }
    if let Some(missing) = expected.iter().find(|e| !found.contains(&e.as_str())) {
        return Err(Error::Schema(format!("missing column `{missing}`")));
    }
    if found.len() != expected.len() {
        return Err(Error::Schema("duplicate column in header".into()));
    }
    for (pos, (f, e)) in found.iter().zip(&expected).enumerate() {
        if f != e {
            return Err(Error::Schema(format!(
                "column `{f}` at position {pos}, expected `{e}`"
            )));
        }
    }
    Ok(())
}

/// Reads a comma-separated dataset whose header is the schema's names followed by `mode`.
pub fn read_csv<R: Read>(reader: R, schema: &FeatureSchema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    check_header(rdr.headers()?, schema)?;

    let p = schema.len();
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::Validation { row, message: e.to_string() })?;
        for (j, spec) in schema.features().iter().enumerate() {
            let cell = record[j].trim();
            let v: f64 = cell.parse().map_err(|_| Error::Validation {
                row,
                message: format!("`{}` is not numeric: `{cell}`", spec.name),
            })?;
            values.push(v);
        }
        let mode: TravelMode = record[p]
            .trim()
            .parse()
            .map_err(|e: Error| Error::Validation { row, message: e.to_string() })?;
        labels.push(mode);
        schema
            .validate_row(&values[row * p..])
            .map_err(|message| Error::Validation { row, message })?;
    }
    Dataset::new(schema.clone(), values, labels)
}

pub fn write_csv(path: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    let mut file = File::create(path)?;
    write_csv_to(&mut file, data)?;
    file.flush()?;
    Ok(())
}

/// Writes the canonical layout: LF line endings, shortest round-trip number formatting.
pub fn write_csv_to<W: Write>(writer: W, data: &Dataset) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    let mut header = data.schema().names();
    header.push(MODE_COLUMN.to_string());
    w.write_record(&header)?;
    let mut record = Vec::with_capacity(header.len());
    for i in 0..data.n_rows() {
        record.clear();
        record.extend(data.row(i).iter().map(|v| v.to_string()));
        record.push(data.labels()[i].as_str().to_string());
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}
