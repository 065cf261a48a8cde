use std::path::Path;

use crate::error::{Error, Result};

/// A multivariate series: one timestamp column plus `M` numeric channels.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesTable {
    pub timestamps: Vec<String>,
    pub channel_names: Vec<String>,
    /// Row-major `rows × channels`.
    values: Vec<f32>,
}

impl SeriesTable {
    pub fn new(timestamps: Vec<String>, channel_names: Vec<String>, values: Vec<f32>) -> Result<Self> {
        let m = channel_names.len();
        if m == 0 {
            return Err(Error::Contract("a series needs at least one channel".into()));
        }
        if values.len() != timestamps.len() * m {
            return Err(Error::Dimension {
                op: "SeriesTable::new",
                lhs: vec![timestamps.len(), m],
                rhs: vec![values.len()],
            });
        }
        Ok(SeriesTable {
            timestamps,
            channel_names,
            values,
        })
    }

    /// Builds a table with synthetic `t0, t1, …` timestamps and `c0, c1, …` names.
    pub fn from_rows(rows: usize, channels: usize, values: Vec<f32>) -> Result<Self> {
        Self::new(
            (0..rows).map(|i| format!("t{i}")).collect(),
            (0..channels).map(|i| format!("c{i}")).collect(),
            values,
        )
    }

    pub fn rows(&self) -> usize {
        self.timestamps.len()
    }

    pub fn channels(&self) -> usize {
        self.channel_names.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn get(&self, row: usize, channel: usize) -> f32 {
        self.values[row * self.channels() + channel]
    }

    pub fn row(&self, row: usize) -> &[f32] {
        let m = self.channels();
        &self.values[row * m..(row + 1) * m]
    }

    pub fn column(&self, channel: usize) -> Vec<f32> {
        (0..self.rows()).map(|r| self.get(r, channel)).collect()
    }

    /// Rows `start..end` as a new table.
    pub fn slice_rows(&self, start: usize, end: usize) -> SeriesTable {
        let m = self.channels();
        SeriesTable {
            timestamps: self.timestamps[start..end].to_vec(),
            channel_names: self.channel_names.clone(),
            values: self.values[start * m..end * m].to_vec(),
        }
    }
}

/// Reads a header-first CSV whose first column is the timestamp (`date`)
/// and whose remaining columns are numeric channels, in file order.
pub fn load_csv(path: impl AsRef<Path>) -> Result<SeriesTable> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);
    let parse_err = |row: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        row,
        msg,
    };

    let header = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    if header.len() < 2 {
        return Err(parse_err(1, "header needs a timestamp column and at least one channel".into()));
    }
    let channel_names: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
    let m = channel_names.len();

    let mut timestamps = Vec::new();
    let mut values = Vec::new();
    for (i, record) in reader.records().enumerate() {
        // header is line 1
        let line = i + 2;
        let record = record.map_err(|e| parse_err(line, e.to_string()))?;
        if record.len() != m + 1 {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", m + 1, record.len()),
            ));
        }
        timestamps.push(record[0].to_string());
        for (c, cell) in record.iter().skip(1).enumerate() {
            let v: f32 = cell.trim().parse().map_err(|_| {
                parse_err(line, format!("non-numeric cell {cell:?} in column {:?}", channel_names[c]))
            })?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("non-finite cell {cell:?}")));
            }
            values.push(v);
        }
    }
    if timestamps.is_empty() {
        return Err(parse_err(1, "no data rows".into()));
    }
    SeriesTable::new(timestamps, channel_names, values)
}

/// Writes a table in the layout [`load_csv`] reads. Values use the shortest
/// representation that parses back to the same `f32`.
pub fn write_csv(table: &SeriesTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    let mut header = vec!["date".to_string()];
    header.extend(table.channel_names.iter().cloned());
    w.write_record(&header).map_err(io)?;
    for r in 0..table.rows() {
        let mut rec = vec![table.timestamps[r].clone()];
        rec.extend(table.row(r).iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
