//! Plain-text field snapshots: a one-line JSON header followed by the real
//! grid values, one grid row (fixed y) per line. Values use Rust's shortest
//! round-trip formatting, so a write/read cycle is bit exact.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{Grid, SpectralField};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotHeader {
    pub nx: usize,
    pub ny: usize,
    pub t: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub header: SnapshotHeader,
    /// Row-major values, `values[iy * nx + ix]`.
    pub values: Vec<f64>,
}

impl Snapshot {
    pub fn of(field: &SpectralField, t: f64) -> Self {
        let grid = field.grid();
        Self {
            header: SnapshotHeader {
                nx: grid.nx,
                ny: grid.ny,
                t,
            },
            values: field.to_grid(),
        }
    }

    pub fn to_field(&self) -> Result<SpectralField> {
        SpectralField::from_grid(Grid::new(self.header.nx, self.header.ny)?, &self.values)
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "{}", serde_json::to_string(&self.header)?)?;
        for row in self.values.chunks(self.header.nx) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }

    pub fn read_from(r: impl BufRead) -> Result<Self> {
        let mut lines = r.lines();
        let header_line = lines
            .next()
            .ok_or_else(|| Error::InvalidConfig("empty snapshot".into()))??;
        let header: SnapshotHeader = serde_json::from_str(&header_line)?;
        let mut values = Vec::with_capacity(header.nx * header.ny);
        for (row, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let before = values.len();
            for tok in line.split(',') {
                let v: f64 = tok.trim().parse().map_err(|_| Error::Parse {
                    pos: row,
                    msg: format!("bad value `{tok}`"),
                })?;
                values.push(v);
            }
            if values.len() - before != header.nx {
                return Err(Error::Parse {
                    pos: row,
                    msg: format!("expected {} values in row", header.nx),
                });
            }
        }
        if values.len() != header.nx * header.ny {
            return Err(Error::InvalidConfig(format!(
                "snapshot has {} values, header says {}x{}",
                values.len(),
                header.nx,
                header.ny
            )));
        }
        Ok(Self { header, values })
    }
}
