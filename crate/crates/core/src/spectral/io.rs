//! CSV layout for spectra.
//!
//! Dataset files carry `id,group_id,label,kind,w0001,...,w0350`; the
//! wavelength sidecar is a single data row under the same `wNNNN` header.
//! Reals are written in scientific notation with 17 significant digits so
//! every value round-trips bit-exactly.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{Dataset, Spectrum, Split, WavelengthGrid, N_CHANNELS};
use crate::{Error, Result};

const META_COLUMNS: [&str; 4] = ["id", "group_id", "label", "kind"];

fn channel_columns() -> impl Iterator<Item = String> {
    (1..=N_CHANNELS).map(|c| format!("w{c:04}"))
}

pub(crate) fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<csv::Reader<File>> {
    csv::ReaderBuilder::new().has_headers(true).from_path(path).map_err(|e| Error::csv(path, e))
}

fn parse<T: std::str::FromStr>(path: &Path, row: usize, col: &str, field: &str) -> Result<T> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::Data(format!("{}: row {row}, column {col}: cannot parse {field:?}", path.display())))
}

pub fn write_dataset(path: &Path, spectra: &[Spectrum]) -> Result<()> {
    let mut w = create(path)?;
    let header: Vec<String> = META_COLUMNS.iter().map(|s| s.to_string()).chain(channel_columns()).collect();
    let io = |e| Error::io(path, e);
    writeln!(w, "{}", header.join(",")).map_err(io)?;
    for s in spectra {
        if s.values.len() != N_CHANNELS {
            return Err(Error::Data(format!("spectrum {} has {} channels", s.id, s.values.len())));
        }
        let mut line = format!("{},{},{},{}", s.id, s.group_id, s.label, s.kind.as_str());
        for &v in &s.values {
            line.push(',');
            line.push_str(&fmt_real(v));
        }
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_dataset(path: &Path) -> Result<Vec<Spectrum>> {
    let mut rdr = open(path)?;
    let headers = rdr.headers().map_err(|e| Error::csv(path, e))?.clone();
    let expected: Vec<String> = META_COLUMNS.iter().map(|s| s.to_string()).chain(channel_columns()).collect();
    if headers.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::Data(format!(
            "{}: header does not match id,group_id,label,kind,w0001..w{N_CHANNELS:04}",
            path.display()
        )));
    }
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let values = (0..N_CHANNELS)
            .map(|c| parse::<f64>(path, row, &expected[4 + c], &rec[4 + c]))
            .collect::<Result<Vec<_>>>()?;
        out.push(Spectrum {
            id: parse(path, row, "id", &rec[0])?,
            group_id: parse(path, row, "group_id", &rec[1])?,
            label: parse(path, row, "label", &rec[2])?,
            kind: parse(path, row, "kind", &rec[3])?,
            values,
        });
    }
    Ok(out)
}

pub fn write_wavelengths(path: &Path, grid: &WavelengthGrid) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "{}", channel_columns().collect::<Vec<_>>().join(",")).map_err(io)?;
    let row: Vec<String> = grid.wavelengths().iter().map(|&v| fmt_real(v)).collect();
    writeln!(w, "{}", row.join(",")).map_err(io)?;
    w.flush().map_err(io)
}

pub fn read_wavelengths(path: &Path) -> Result<WavelengthGrid> {
    let mut rdr = open(path)?;
    let mut rows = rdr.records();
    let rec = rows
        .next()
        .ok_or_else(|| Error::Data(format!("{}: no wavelength row", path.display())))?
        .map_err(|e| Error::csv(path, e))?;
    if rows.next().is_some() {
        return Err(Error::Data(format!("{}: expected a single wavelength row", path.display())));
    }
    let w = rec
        .iter()
        .enumerate()
        .map(|(c, f)| parse::<f64>(path, 0, &format!("w{:04}", c + 1), f))
        .collect::<Result<Vec<_>>>()?;
    WavelengthGrid::from_wavelengths(w)
}

pub fn write_splits(path: &Path, splits: &BTreeMap<u32, Split>) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "group_id,split").map_err(io)?;
    for (g, s) in splits {
        writeln!(w, "{g},{}", s.as_str()).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_splits(path: &Path) -> Result<BTreeMap<u32, Split>> {
    let mut rdr = open(path)?;
    let mut out = BTreeMap::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let g: u32 = parse(path, row, "group_id", &rec[0])?;
        let s: Split = parse(path, row, "split", &rec[1])?;
        if out.insert(g, s).is_some() {
            return Err(Error::Data(format!("{}: group {g} listed twice", path.display())));
        }
    }
    Ok(out)
}

impl Dataset {
    pub fn read(data: &Path, splits: &Path) -> Result<Dataset> {
        Ok(Dataset { spectra: read_dataset(data)?, splits: read_splits(splits)? })
    }
}
