//! Energy-history CSV and legacy VTK surface snapshots.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use surfch_core::mesh::ActiveMesh;
use surfch_core::sav::EnergyReport;

pub const CSV_HEADER: [&str; 8] = ["t", "dt", "modified_energy", "E1", "r", "r_consistency", "mass", "balance_residual"];

/// Appends one row per report and flushes after each row.
pub struct EnergyCsv {
    writer: csv::Writer<File>,
}

impl EnergyCsv {
    pub fn create(path: &Path) -> anyhow::Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut writer = csv::Writer::from_path(path)?;
        writer.write_record(CSV_HEADER)?;
        writer.flush()?;
        Ok(Self { writer })
    }

    pub fn push(&mut self, r: &EnergyReport) -> anyhow::Result<()> {
        let row = [r.t, r.dt, r.modified_energy, r.e1, r.r, r.r_consistency, r.mass, r.balance_residual];
        self.writer.write_record(row.iter().map(|v| format!("{v:.17e}")))?;
        self.writer.flush()?;
        Ok(())
    }
}

/// Γ_h as an indexed triangle mesh with the P1 field sampled at its vertices.
/// Vertices lying on the same background edge are merged.
pub struct SurfaceSample {
    pub points: Vec<[f64; 3]>,
    pub triangles: Vec<[usize; 3]>,
    pub values: Vec<f64>,
}

pub fn sample_surface(active: &ActiveMesh, c: &[f64]) -> SurfaceSample {
    let mut index: HashMap<(usize, usize), usize> = HashMap::new();
    let mut out = SurfaceSample { points: Vec::new(), triangles: Vec::new(), values: Vec::new() };
    for e in &active.elements {
        let poly = &e.polygon;
        let ids: Vec<usize> = poly
            .vertices
            .iter()
            .zip(&poly.edges)
            .map(|(x, &(a, b))| {
                let (na, nb) = (e.nodes[a], e.nodes[b]);
                let key = (na.min(nb), na.max(nb));
                *index.entry(key).or_insert_with(|| {
                    let lam = e.barycentric(x);
                    out.points.push([x[0], x[1], x[2]]);
                    out.values.push((0..4).map(|i| lam[i] * c[e.dofs[i]]).sum());
                    out.points.len() - 1
                })
            })
            .collect();
        out.triangles.extend(poly.triangles.iter().map(|t| t.map(|i| ids[i])));
    }
    out
}

/// Legacy ASCII VTK POLYDATA with point scalar `concentration`.
pub fn write_vtk(path: &Path, active: &ActiveMesh, c: &[f64], t: f64) -> anyhow::Result<()> {
    let s = sample_surface(active, c);
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "surface concentration t={t:.9e}")?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET POLYDATA")?;
    writeln!(w, "POINTS {} double", s.points.len())?;
    for p in &s.points {
        writeln!(w, "{:.12e} {:.12e} {:.12e}", p[0], p[1], p[2])?;
    }
    writeln!(w, "POLYGONS {} {}", s.triangles.len(), 4 * s.triangles.len())?;
    for t in &s.triangles {
        writeln!(w, "3 {} {} {}", t[0], t[1], t[2])?;
    }
    writeln!(w, "POINT_DATA {}", s.points.len())?;
    writeln!(w, "SCALARS concentration double 1")?;
    writeln!(w, "LOOKUP_TABLE default")?;
    for v in &s.values {
        writeln!(w, "{v:.12e}")?;
    }
    w.flush()?;
    Ok(())
}
