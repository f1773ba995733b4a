//! Binary and CSV dumps of range-angle maps and soft maps, and the per-scan
//! track log.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fusion::{GridSpec, SoftMap};
use crate::sensing::RangeAngleMap;

const RA_MAGIC: u64 = u64::from_le_bytes(*b"CSRAMAP\0");
const SOFT_MAGIC: u64 = u64::from_le_bytes(*b"CSSOFTMP");
const MAP_VERSION: u64 = 1;

fn put(w: &mut impl Write, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn putf(w: &mut impl Write, v: f64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    off: usize,
    path: &'a Path,
}

impl Cursor<'_> {
    fn err(&self, reason: &str) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            reason: reason.to_string(),
        }
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self
            .bytes
            .get(self.off..self.off + 8)
            .ok_or_else(|| self.err("truncated file"))?;
        self.off += 8;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self
            .bytes
            .get(self.off..self.off + 2)
            .ok_or_else(|| self.err("truncated file"))?;
        self.off += 2;
        Ok(u16::from_le_bytes(b.try_into().expect("2 bytes")))
    }

    fn done(&self) -> Result<()> {
        if self.off != self.bytes.len() {
            return Err(self.err("trailing bytes"));
        }
        Ok(())
    }
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    Ok(bytes)
}

/// Header of eight u64 fields (magic, version, rows, cols, range bin,
/// angle step, BS id, scan index; floats as IEEE bits), then the scan
/// directions and the row-major values as little-endian f64.
pub fn write_range_angle_map(path: &Path, map: &RangeAngleMap) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let step = if map.n_dirs() > 1 {
        map.scan_dirs_rad[1] - map.scan_dirs_rad[0]
    } else {
        0.0
    };
    for v in [
        RA_MAGIC,
        MAP_VERSION,
        map.n_range as u64,
        map.n_dirs() as u64,
        map.range_bin_m.to_bits(),
        step.to_bits(),
        map.bs_id as u64,
        map.scan_index as u64,
    ] {
        put(&mut w, v)?;
    }
    for d in &map.scan_dirs_rad {
        putf(&mut w, *d)?;
    }
    for v in &map.values {
        putf(&mut w, *v)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_range_angle_map(path: &Path) -> Result<RangeAngleMap> {
    let bytes = read_all(path)?;
    let mut c = Cursor {
        bytes: &bytes,
        off: 0,
        path,
    };
    if c.u64()? != RA_MAGIC {
        return Err(c.err("not a range-angle map"));
    }
    if c.u64()? != MAP_VERSION {
        return Err(c.err("unsupported map version"));
    }
    let rows = c.u64()? as usize;
    let cols = c.u64()? as usize;
    let range_bin_m = c.f64()?;
    let _step = c.f64()?;
    let bs_id = c.u64()? as usize;
    let scan_index = c.u64()? as usize;
    let dirs = (0..cols).map(|_| c.f64()).collect::<Result<Vec<_>>>()?;
    let values = (0..rows * cols)
        .map(|_| c.f64())
        .collect::<Result<Vec<_>>>()?;
    c.done()?;
    Ok(RangeAngleMap {
        n_range: rows,
        values,
        range_bin_m,
        scan_dirs_rad: dirs,
        bs_id,
        scan_index,
    })
}

/// Same header layout with ny, nx, dx, dy, scan index and BS count, then
/// x_min, y_min, the BS ids, the values and the per-cell coverage (u16).
pub fn write_soft_map(path: &Path, map: &SoftMap) -> Result<()> {
    let g = &map.grid;
    let mut w = BufWriter::new(File::create(path)?);
    for v in [
        SOFT_MAGIC,
        MAP_VERSION,
        g.ny as u64,
        g.nx as u64,
        g.dx_m.to_bits(),
        g.dy_m.to_bits(),
        map.scan_index as u64,
        map.contributing_bs.len() as u64,
    ] {
        put(&mut w, v)?;
    }
    putf(&mut w, g.x_min_m)?;
    putf(&mut w, g.y_min_m)?;
    for b in &map.contributing_bs {
        put(&mut w, *b as u64)?;
    }
    for v in &map.values {
        putf(&mut w, *v)?;
    }
    for c in &map.coverage {
        w.write_all(&c.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_soft_map(path: &Path) -> Result<SoftMap> {
    let bytes = read_all(path)?;
    let mut c = Cursor {
        bytes: &bytes,
        off: 0,
        path,
    };
    if c.u64()? != SOFT_MAGIC {
        return Err(c.err("not a soft map"));
    }
    if c.u64()? != MAP_VERSION {
        return Err(c.err("unsupported map version"));
    }
    let ny = c.u64()? as usize;
    let nx = c.u64()? as usize;
    let dx_m = c.f64()?;
    let dy_m = c.f64()?;
    let scan_index = c.u64()? as usize;
    let n_bs = c.u64()? as usize;
    let x_min_m = c.f64()?;
    let y_min_m = c.f64()?;
    let contributing_bs = (0..n_bs)
        .map(|_| c.u64().map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let values = (0..nx * ny).map(|_| c.f64()).collect::<Result<Vec<_>>>()?;
    let coverage = (0..nx * ny).map(|_| c.u16()).collect::<Result<Vec<_>>>()?;
    c.done()?;
    Ok(SoftMap {
        values,
        grid: GridSpec {
            x_min_m,
            y_min_m,
            dx_m,
            dy_m,
            nx,
            ny,
        },
        scan_index,
        contributing_bs,
        coverage,
    })
}

/// Long-format CSV: range_bin, dir_index, range_m, angle_rad, value.
pub fn write_range_angle_csv(path: &Path, map: &RangeAngleMap) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["range_bin", "dir_index", "range_m", "angle_rad", "value"])?;
    for r in 0..map.n_range {
        for (j, a) in map.scan_dirs_rad.iter().enumerate() {
            w.write_record(&[
                r.to_string(),
                j.to_string(),
                (r as f64 * map.range_bin_m).to_string(),
                a.to_string(),
                map.get(r, j).to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One row of the per-scan track log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrackLogRow {
    pub scan_index: usize,
    pub filter: &'static str,
    pub track_id: u64,
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub weight: f64,
    pub class_label: String,
}

pub fn write_csv_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::Area;

    #[test]
    fn range_angle_round_trip() {
        let cols = vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]];
        let m = RangeAngleMap::from_columns(cols, vec![-0.1, 0.1], 2.5, 3, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.bin");
        write_range_angle_map(&p, &m).unwrap();
        assert_eq!(read_range_angle_map(&p).unwrap(), m);
        write_range_angle_csv(&dir.path().join("m.csv"), &m).unwrap();
        let text = std::fs::read_to_string(dir.path().join("m.csv")).unwrap();
        assert_eq!(text.lines().count(), 7);
    }

    #[test]
    fn soft_map_round_trip_and_bad_magic() {
        let mut m = SoftMap::zeros(GridSpec::covering(&Area::square(1.0), 0.5, 0.25), 4);
        m.values[3] = 1.5;
        m.coverage[3] = 2;
        m.contributing_bs = vec![0, 2];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.bin");
        write_soft_map(&p, &m).unwrap();
        assert_eq!(read_soft_map(&p).unwrap(), m);
        assert!(matches!(
            read_range_angle_map(&p),
            Err(Error::Format { .. })
        ));
    }
}
