//! Binary snapshots.
//!
//! ```text
//! MPE1\n
//! nx ny nz lx ly\n          grid, floats in round-trip notation
//! time <t>\n
//! fields 4 ghosts 1\n
//! <4 x (nx+3)(ny+3)(nz+3) little-endian f64, x fastest, v1 v2 T q>
//! ```
//!
//! Ghost values are stored so a round trip is bitwise exact.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::field::Field3D;
use crate::grid::Grid;
use crate::state::{FieldKind, State};

pub const MAGIC: &str = "MPE";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: snapshot version {found}, expected {VERSION}")]
    Version { path: PathBuf, found: String },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("{path}: truncated, expected {expected} data bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },
}

/// Serializes `s` on grid `g`.
pub fn encode(s: &State, g: &Grid) -> Vec<u8> {
    let mut out = format!(
        "{MAGIC}{VERSION}\n{} {} {} {:?} {:?}\ntime {:?}\nfields 4 ghosts 1\n",
        g.nx, g.ny, g.nz, g.lx, g.ly, s.time
    )
    .into_bytes();
    for k in FieldKind::ALL {
        for v in s.field(k).raw() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn header_line<'a>(bytes: &'a [u8], pos: &mut usize, path: &Path) -> Result<&'a str, SnapshotError> {
    let fmt = |m: &str| SnapshotError::Format {
        path: path.to_path_buf(),
        message: m.to_string(),
    };
    let rest = &bytes[*pos..];
    let end = rest
        .iter()
        .take(256)
        .position(|&b| b == b'\n')
        .ok_or_else(|| fmt("unterminated header"))?;
    *pos += end + 1;
    std::str::from_utf8(&rest[..end]).map_err(|_| fmt("header is not ASCII"))
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<(Grid, State), SnapshotError> {
    let fmt = |m: String| SnapshotError::Format {
        path: path.to_path_buf(),
        message: m,
    };
    let mut pos = 0;
    let magic = header_line(bytes, &mut pos, path)?;
    let version = magic
        .strip_prefix(MAGIC)
        .ok_or_else(|| fmt(format!("bad magic `{magic}`")))?;
    if version != VERSION.to_string() {
        return Err(SnapshotError::Version {
            path: path.to_path_buf(),
            found: version.to_string(),
        });
    }
    let dims: Vec<&str> = header_line(bytes, &mut pos, path)?.split_whitespace().collect();
    if dims.len() != 5 {
        return Err(fmt("grid line needs nx ny nz lx ly".into()));
    }
    let int = |s: &str| s.parse::<usize>().map_err(|_| fmt(format!("bad grid size `{s}`")));
    let flt = |s: &str| s.parse::<f64>().map_err(|_| fmt(format!("bad length `{s}`")));
    let g = Grid::new(
        int(dims[0])?,
        int(dims[1])?,
        int(dims[2])?,
        flt(dims[3])?,
        flt(dims[4])?,
    )
    .map_err(|e| fmt(e.to_string()))?;
    let tl = header_line(bytes, &mut pos, path)?;
    let time = tl
        .strip_prefix("time ")
        .and_then(|t| t.parse::<f64>().ok())
        .ok_or_else(|| fmt(format!("bad time line `{tl}`")))?;
    let fl = header_line(bytes, &mut pos, path)?;
    if fl != "fields 4 ghosts 1" {
        return Err(fmt(format!("unsupported layout `{fl}`")));
    }
    let per = (g.nx + 3) * (g.ny + 3) * (g.nz + 3);
    let expected = 4 * per * 8;
    let data = &bytes[pos..];
    if data.len() != expected {
        return Err(SnapshotError::Truncated {
            path: path.to_path_buf(),
            expected,
            found: data.len(),
        });
    }
    let mut s = State::zeros(&g);
    s.time = time;
    for (c, k) in FieldKind::ALL.into_iter().enumerate() {
        let vals: Vec<f64> = data[c * per * 8..(c + 1) * per * 8]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        *s.field_mut(k) = Field3D::from_raw(g.nx, g.ny, g.nz, vals).expect("sized buffer");
    }
    Ok((g, s))
}

pub fn emit_snapshot(s: &State, g: &Grid, path: &Path) -> Result<(), SnapshotError> {
    fs::write(path, encode(s, g)).map_err(|source| SnapshotError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_snapshot_with_grid(path: &Path) -> Result<(Grid, State), SnapshotError> {
    let bytes = fs::read(path).map_err(|source| SnapshotError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode(&bytes, path)
}

pub fn load_snapshot(path: &Path) -> Result<State, SnapshotError> {
    load_snapshot_with_grid(path).map(|x| x.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::PhysParams;

    fn sample() -> (Grid, State) {
        let g = Grid::new(6, 5, 4, 1.5, 0.7).unwrap();
        let mut s = crate::experiments::random_state(&g, &PhysParams::default(), 4, 1.3);
        s.time = 0.1 + 0.2;
        (g, s)
    }

    fn bits(s: &State) -> Vec<u64> {
        FieldKind::ALL
            .iter()
            .flat_map(|&k| s.field(k).raw().iter().map(|v| v.to_bits()))
            .collect()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let (g, s) = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.mpe");
        emit_snapshot(&s, &g, &path).unwrap();
        let (g2, s2) = load_snapshot_with_grid(&path).unwrap();
        assert_eq!(g2, g);
        assert_eq!(s2.time.to_bits(), s.time.to_bits());
        assert_eq!(bits(&s2), bits(&s));
    }

    #[test]
    fn truncated_file_is_a_structured_error() {
        let (g, s) = sample();
        let bytes = encode(&s, &g);
        let p = Path::new("t.mpe");
        match decode(&bytes[..bytes.len() - 5], p) {
            Err(SnapshotError::Truncated { expected, found, .. }) => assert_eq!(expected, found + 5),
            other => panic!("{other:?}"),
        }
        assert!(matches!(decode(b"MPE1\n5 4", p), Err(SnapshotError::Format { .. })));
    }

    #[test]
    fn version_mismatch_is_explicit() {
        let (g, s) = sample();
        let mut bytes = encode(&s, &g);
        bytes[3] = b'2';
        match decode(&bytes, Path::new("v.mpe")) {
            Err(SnapshotError::Version { found, .. }) => assert_eq!(found, "2"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            decode(b"XYZ1\n", Path::new("m")),
            Err(SnapshotError::Format { .. })
        ));
    }

    #[test]
    fn missing_file_names_the_path() {
        let e = load_snapshot(Path::new("/nonexistent/x.mpe")).unwrap_err();
        assert!(e.to_string().contains("/nonexistent/x.mpe"));
    }
}
