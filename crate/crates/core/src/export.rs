//! Nodal CSV and legacy VTK output, plus atomic file writes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fem::ScalarField;
use crate::mesh::Mesh;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    VtkLegacy,
}

impl ExportFormat {
    pub fn from_name(s: &str) -> Option<ExportFormat> {
        match s {
            "csv" => Some(ExportFormat::Csv),
            "vtk" => Some(ExportFormat::VtkLegacy),
            _ => None,
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            ExportFormat::Csv => "csv",
            ExportFormat::VtkLegacy => "vtk",
        }
    }
}

/// Write through a sibling temp file and rename over the target.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn check_columns(mesh: &Mesh, columns: &[(&str, &ScalarField)]) -> Result<()> {
    for (name, f) in columns {
        if f.len() != mesh.num_vertices() {
            return Err(Error::Contract(format!(
                "field `{name}` has {} values for {} vertices",
                f.len(),
                mesh.num_vertices()
            )));
        }
    }
    Ok(())
}

/// `node_id,x,y,<name>...` with one row per vertex.
pub fn nodal_csv(mesh: &Mesh, columns: &[(&str, &ScalarField)]) -> Result<String> {
    check_columns(mesh, columns)?;
    let mut out = String::from("node_id,x,y");
    for (name, _) in columns {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for (i, p) in mesh.vertices().iter().enumerate() {
        write!(out, "{i},{:.16e},{:.16e}", p[0], p[1]).expect("writing to a String");
        for (_, f) in columns {
            write!(out, ",{:.16e}", f[i]).expect("writing to a String");
        }
        out.push('\n');
    }
    Ok(out)
}

/// Parsed nodal CSV: column names after `node_id,x,y` and the value rows.
#[derive(Debug, Clone, PartialEq)]
pub struct NodalTable {
    pub names: Vec<String>,
    pub points: Vec<[f64; 2]>,
    pub columns: Vec<Vec<f64>>,
}

impl NodalTable {
    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.names.iter().position(|n| n == name).map(|k| self.columns[k].as_slice())
    }
}

pub fn read_nodal_csv(text: &str) -> Result<NodalTable> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::Parse("empty CSV".into()))?;
    let fields: Vec<&str> = header.split(',').map(str::trim).collect();
    if fields.len() < 3 || fields[..3] != ["node_id", "x", "y"] {
        return Err(Error::Parse(format!("CSV header must start with node_id,x,y: `{header}`")));
    }
    let names: Vec<String> = fields[3..].iter().map(|s| s.to_string()).collect();
    let mut points = Vec::new();
    let mut columns = vec![Vec::new(); names.len()];
    for (row, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != fields.len() {
            return Err(Error::Parse(format!("row {row} has {} cells, expected {}", cells.len(), fields.len())));
        }
        let id: usize = cells[0].parse().map_err(|_| Error::Parse(format!("bad node id `{}`", cells[0])))?;
        if id != row {
            return Err(Error::Parse(format!("row {row} has node id {id}")));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| Error::Parse(format!("bad number `{s}`")));
        points.push([num(cells[1])?, num(cells[2])?]);
        for (k, c) in cells[3..].iter().enumerate() {
            columns[k].push(num(c)?);
        }
    }
    Ok(NodalTable { names, points, columns })
}

/// Legacy ASCII VTK unstructured grid of triangles with point scalars.
pub fn vtk_legacy(mesh: &Mesh, title: &str, columns: &[(&str, &ScalarField)]) -> Result<String> {
    check_columns(mesh, columns)?;
    let mut out = String::new();
    let w = &mut out;
    let nv = mesh.num_vertices();
    let nt = mesh.num_triangles();
    writeln!(w, "# vtk DataFile Version 3.0").unwrap();
    writeln!(w, "{}", title.lines().next().unwrap_or("")).unwrap();
    writeln!(w, "ASCII").unwrap();
    writeln!(w, "DATASET UNSTRUCTURED_GRID").unwrap();
    writeln!(w, "POINTS {nv} double").unwrap();
    for p in mesh.vertices() {
        writeln!(w, "{:.16e} {:.16e} 0", p[0], p[1]).unwrap();
    }
    writeln!(w, "CELLS {nt} {}", 4 * nt).unwrap();
    for t in mesh.triangles() {
        writeln!(w, "3 {} {} {}", t[0], t[1], t[2]).unwrap();
    }
    writeln!(w, "CELL_TYPES {nt}").unwrap();
    for _ in 0..nt {
        writeln!(w, "5").unwrap();
    }
    if !columns.is_empty() {
        writeln!(w, "POINT_DATA {nv}").unwrap();
        for (name, f) in columns {
            writeln!(w, "SCALARS {name} double 1").unwrap();
            writeln!(w, "LOOKUP_TABLE default").unwrap();
            for v in f.values() {
                writeln!(w, "{v:.16e}").unwrap();
            }
        }
    }
    Ok(out)
}

/// Write `columns` next to each other as `<dir>/<stem>.<ext>`.
pub fn export_fields(
    dir: &Path,
    stem: &str,
    mesh: &Mesh,
    columns: &[(&str, &ScalarField)],
    format: ExportFormat,
) -> Result<std::path::PathBuf> {
    let path = dir.join(format!("{stem}.{}", format.extension()));
    let text = match format {
        ExportFormat::Csv => nodal_csv(mesh, columns)?,
        ExportFormat::VtkLegacy => vtk_legacy(mesh, stem, columns)?,
    };
    write_atomic(&path, text.as_bytes())?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::ring_mesh;

    #[test]
    fn constant_field_csv() {
        let m = ring_mesh(3);
        let f = ScalarField::constant(&m, 1.25);
        let csv = nodal_csv(&m, &[("value", &f)]).unwrap();
        let t = read_nodal_csv(&csv).unwrap();
        assert_eq!(t.names, vec!["value"]);
        assert!(t.column("value").unwrap().iter().all(|&v| v == 1.25));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let m = ring_mesh(5);
        let f = ScalarField::from_fn(&m, |p| (p[0] * 17.0).sin() / 3.0 + 1e-300 * p[1]);
        let t = read_nodal_csv(&nodal_csv(&m, &[("value", &f)]).unwrap()).unwrap();
        assert_eq!(t.column("value").unwrap(), f.values());
        assert_eq!(t.points, m.vertices());
    }

    #[test]
    fn vtk_counts_match_mesh() {
        let m = ring_mesh(4);
        let f = ScalarField::from_fn(&m, |p| p[0]);
        let vtk = vtk_legacy(&m, "test", &[("u", &f)]).unwrap();
        let count = |key: &str| -> usize {
            let line = vtk.lines().find(|l| l.starts_with(key)).unwrap();
            line.split_whitespace().nth(1).unwrap().parse().unwrap()
        };
        assert_eq!(count("POINTS"), m.num_vertices());
        assert_eq!(count("CELLS"), m.num_triangles());
        assert_eq!(count("CELL_TYPES"), m.num_triangles());
        assert_eq!(count("POINT_DATA"), m.num_vertices());
        assert_eq!(vtk, vtk_legacy(&m, "test", &[("u", &f)]).unwrap());
    }

    #[test]
    fn atomic_write_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let m = ring_mesh(2);
        let f = ScalarField::constant(&m, 0.0);
        let p = export_fields(dir.path(), "f", &m, &[("value", &f)], ExportFormat::VtkLegacy).unwrap();
        assert!(p.exists());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn bad_csv_is_rejected() {
        assert!(read_nodal_csv("a,b,c\n").is_err());
        assert!(read_nodal_csv("node_id,x,y,v\n0,1,2\n").is_err());
        assert!(read_nodal_csv("node_id,x,y,v\n1,0,0,0\n").is_err());
    }
}
