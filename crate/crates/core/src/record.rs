//! Snapshots, run manifests and their on-disk formats.
//!
//! Every text output starts with a `# manifest <hash>` line (PLY files use a
//! `comment manifest <hash>` header line). Floats are written with Rust's
//! shortest round-trip formatting, so identical runs give identical bytes.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::flows::Termination;
use crate::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchDiagnostics {
    pub kappa: f64,
    pub interp_error: f64,
    pub greville_deviation: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    pub time: f64,
    pub positions: Vec<Vec3>,
    pub normals: Option<Vec<Vec3>>,
    pub field_u: Option<Vec<f64>>,
    pub field_w: Option<Vec<f64>>,
    pub patches: Vec<PatchDiagnostics>,
}

/// Resolved configuration, input hash, timings and outcome of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: serde_json::Value,
    pub hash: String,
    pub step_seconds: Vec<f64>,
    pub termination: Option<Termination>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        let hash = content_hash(command, &config);
        Self {
            tool: "manifold-flow".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config,
            hash,
            step_seconds: Vec::new(),
            termination: None,
            outputs: Vec::new(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }
}

/// SHA-256 over a git-style blob header and the canonical JSON of the inputs.
pub fn content_hash(command: &str, config: &serde_json::Value) -> String {
    let body = format!("{command}\n{config}");
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", body.len()).as_bytes());
    h.update(body.as_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn csv_writer(path: &Path, hash: &str, header: &str) -> Result<BufWriter<File>> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# manifest {hash}")?;
    writeln!(w, "{header}")?;
    Ok(w)
}

/// `x,y,z` per point, followed by `nx,ny,nz`, `u` and `w` when present.
pub fn write_snapshot_csv(path: &Path, snap: &Snapshot, hash: &str) -> Result<()> {
    let mut header = String::from("x,y,z");
    if snap.normals.is_some() {
        header.push_str(",nx,ny,nz");
    }
    if snap.field_u.is_some() {
        header.push_str(",u");
    }
    if snap.field_w.is_some() {
        header.push_str(",w");
    }
    let mut w = csv_writer(path, hash, &header)?;
    for (i, p) in snap.positions.iter().enumerate() {
        write!(w, "{},{},{}", p.x, p.y, p.z)?;
        if let Some(n) = &snap.normals {
            write!(w, ",{},{},{}", n[i].x, n[i].y, n[i].z)?;
        }
        if let Some(u) = &snap.field_u {
            write!(w, ",{}", u[i])?;
        }
        if let Some(f) = &snap.field_w {
            write!(w, ",{}", f[i])?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-patch diagnostics of a snapshot.
pub fn write_patch_csv(path: &Path, snap: &Snapshot, hash: &str) -> Result<()> {
    let mut w = csv_writer(path, hash, "patch,kappa,interp_error,greville_deviation,points")?;
    for (k, d) in snap.patches.iter().enumerate() {
        writeln!(w, "{k},{},{},{},{}", d.kappa, d.interp_error, d.greville_deviation, d.points)?;
    }
    w.flush()?;
    Ok(())
}

/// Radius series with columns `t,r_numeric,r_analytic`; the last column is
/// empty when no analytic value exists.
pub fn write_radius_csv(path: &Path, rows: &[(f64, f64, Option<f64>)], hash: &str) -> Result<()> {
    let mut w = csv_writer(path, hash, "t,r_numeric,r_analytic")?;
    for (t, r, a) in rows {
        match a {
            Some(a) => writeln!(w, "{t},{r},{a}")?,
            None => writeln!(w, "{t},{r},")?,
        }
    }
    w.flush()?;
    Ok(())
}

/// Generic headered table of already formatted cells.
pub fn write_table_csv(path: &Path, columns: &[&str], rows: &[Vec<String>], hash: &str) -> Result<()> {
    let mut w = csv_writer(path, hash, &columns.join(","))?;
    for r in rows {
        writeln!(w, "{}", r.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Binary little-endian PLY with float32 positions and, when present,
/// per-vertex normals.
pub fn write_ply(path: &Path, positions: &[Vec3], normals: Option<&[Vec3]>, hash: &str) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "ply")?;
    writeln!(w, "format binary_little_endian 1.0")?;
    writeln!(w, "comment manifest {hash}")?;
    writeln!(w, "element vertex {}", positions.len())?;
    for c in ["x", "y", "z"] {
        writeln!(w, "property float {c}")?;
    }
    if normals.is_some() {
        for c in ["nx", "ny", "nz"] {
            writeln!(w, "property float {c}")?;
        }
    }
    writeln!(w, "end_header")?;
    for (i, p) in positions.iter().enumerate() {
        for c in p.iter() {
            w.write_all(&(*c as f32).to_le_bytes())?;
        }
        if let Some(n) = normals {
            for c in n[i].iter() {
                w.write_all(&(*c as f32).to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn snap() -> Snapshot {
        Snapshot {
            step: 3,
            time: 0.003,
            positions: vec![Vec3::new(1.0, 0.5, -0.25), Vec3::new(0.1, 0.2, 0.3)],
            normals: Some(vec![Vec3::x(), Vec3::y()]),
            field_u: Some(vec![0.5, 1.5]),
            field_w: None,
            patches: vec![PatchDiagnostics { kappa: 12.0, interp_error: 1e-9, greville_deviation: 0.01, points: 36 }],
        }
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = content_hash("evolve", &serde_json::json!({"dt": 0.001}));
        assert_eq!(a, content_hash("evolve", &serde_json::json!({"dt": 0.001})));
        assert_ne!(a, content_hash("evolve", &serde_json::json!({"dt": 0.002})));
        assert_eq!(a.len(), 64);
    }

    #[test]
    fn csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        write_snapshot_csv(&path, &snap(), "abc").unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# manifest abc");
        assert_eq!(lines[1], "x,y,z,nx,ny,nz,u");
        assert_eq!(lines[2], "1,0.5,-0.25,1,0,0,0.5");
        assert_eq!(lines.len(), 4);

        let path = dir.path().join("r.csv");
        write_radius_csv(&path, &[(0.0, 1.0, Some(1.0)), (0.1, 0.5, None)], "abc").unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "# manifest abc\nt,r_numeric,r_analytic\n0,1,1\n0.1,0.5,\n");
    }

    #[test]
    fn ply_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.ply");
        let s = snap();
        write_ply(&path, &s.positions, s.normals.as_deref(), "abc").unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let end = b"end_header\n";
        let pos = bytes.windows(end.len()).position(|w| w == end).unwrap() + end.len();
        let header = std::str::from_utf8(&bytes[..pos]).unwrap();
        assert!(header.contains("comment manifest abc"));
        assert!(header.contains("element vertex 2"));
        assert_eq!(bytes.len() - pos, 2 * 6 * 4);
        assert_eq!(f32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()), 1.0);
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = RunManifest::new("evolve", serde_json::json!({"n": 4}));
        m.termination = Some(Termination::Completed);
        let path = dir.path().join("manifest.json");
        m.write(&path).unwrap();
        let back: RunManifest = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
