//! Legacy ASCII VTK unstructured-grid export/import and the electrode-map
//! sidecar.
//!
//! Electrode map format (plain text, `#` starts a comment line):
//!
//! ```text
//! electrode-map 1
//! electrodes <count>
//! electrode <1-based index> <face count>
//! <node> <node> <node>        one line per face, 0-based VTK point indices
//! ...
//! ```

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

use super::extrude::SALINE_REGION;
use super::mesh::Mesh;
use crate::error::{Error, Result};

const VTK_TETRA: u32 = 10;
const TITLE_PREFIX: &str = "lumen-eit mesh";

/// Writes `mesh` as a legacy ASCII unstructured grid. The region labels are
/// always written as integer cell data `region`; `cell_scalars` adds extra
/// per-element float fields.
pub fn write_vtk<W: Write>(
    out: &mut W,
    mesh: &Mesh,
    cell_scalars: &[(&str, &[f64])],
) -> Result<()> {
    let mut s = String::new();
    let n = mesh.node_count();
    let m = mesh.element_count();
    writeln!(s, "# vtk DataFile Version 3.0").unwrap();
    writeln!(s, "{TITLE_PREFIX} h={}", mesh.characteristic_size).unwrap();
    writeln!(s, "ASCII").unwrap();
    writeln!(s, "DATASET UNSTRUCTURED_GRID").unwrap();
    writeln!(s, "POINTS {n} double").unwrap();
    for p in &mesh.nodes {
        writeln!(s, "{} {} {}", p[0], p[1], p[2]).unwrap();
    }
    writeln!(s, "CELLS {m} {}", 5 * m).unwrap();
    for t in &mesh.elements {
        writeln!(s, "4 {} {} {} {}", t[0], t[1], t[2], t[3]).unwrap();
    }
    writeln!(s, "CELL_TYPES {m}").unwrap();
    for _ in 0..m {
        writeln!(s, "{VTK_TETRA}").unwrap();
    }
    writeln!(s, "CELL_DATA {m}").unwrap();
    writeln!(s, "SCALARS region int 1").unwrap();
    writeln!(s, "LOOKUP_TABLE default").unwrap();
    for r in &mesh.element_region {
        writeln!(s, "{r}").unwrap();
    }
    for (name, values) in cell_scalars {
        if values.len() != m {
            return Err(Error::Input(format!(
                "cell field `{name}` has {} values for {m} cells",
                values.len()
            )));
        }
        writeln!(s, "SCALARS {name} double 1").unwrap();
        writeln!(s, "LOOKUP_TABLE default").unwrap();
        for v in *values {
            writeln!(s, "{v}").unwrap();
        }
    }
    out.write_all(s.as_bytes())?;
    Ok(())
}

pub fn write_electrode_map<W: Write>(out: &mut W, mesh: &Mesh) -> Result<()> {
    let mut s = String::new();
    writeln!(s, "electrode-map 1").unwrap();
    writeln!(s, "electrodes {}", mesh.electrode_count()).unwrap();
    for (k, patch) in mesh.electrodes.iter().enumerate() {
        writeln!(s, "electrode {} {}", k + 1, patch.len()).unwrap();
        for f in patch {
            writeln!(s, "{} {} {}", f[0], f[1], f[2]).unwrap();
        }
    }
    out.write_all(s.as_bytes())?;
    Ok(())
}

/// Writes `<stem>.vtk` and `<stem>.electrodes` next to each other.
pub fn save_mesh(mesh: &Mesh, vtk_path: &Path) -> Result<()> {
    let mut f = fs::File::create(vtk_path)?;
    write_vtk(&mut f, mesh, &[])?;
    let mut e = fs::File::create(electrode_map_path(vtk_path))?;
    write_electrode_map(&mut e, mesh)?;
    Ok(())
}

pub fn electrode_map_path(vtk_path: &Path) -> std::path::PathBuf {
    vtk_path.with_extension("electrodes")
}

/// Loads a mesh written by [`save_mesh`].
pub fn load_mesh(vtk_path: &Path) -> Result<Mesh> {
    let text = fs::read_to_string(vtk_path)?;
    let mut mesh = parse_vtk(&text).map_err(|m| Error::parse(vtk_path, m))?;
    let map_path = electrode_map_path(vtk_path);
    let map = fs::read_to_string(&map_path)?;
    mesh.electrodes = parse_electrode_map(&map).map_err(|m| Error::parse(&map_path, m))?;
    mesh.validate()?;
    Ok(mesh)
}

struct Tokens<'a> {
    inner: std::iter::Peekable<std::str::SplitWhitespace<'a>>,
}

impl<'a> Tokens<'a> {
    fn next(&mut self) -> std::result::Result<&'a str, String> {
        self.inner.next().ok_or_else(|| "unexpected end of file".to_string())
    }

    fn expect(&mut self, word: &str) -> std::result::Result<(), String> {
        let t = self.next()?;
        if t.eq_ignore_ascii_case(word) {
            Ok(())
        } else {
            Err(format!("expected `{word}`, found `{t}`"))
        }
    }

    fn parse<T: std::str::FromStr>(&mut self) -> std::result::Result<T, String> {
        let t = self.next()?;
        t.parse().map_err(|_| format!("cannot parse `{t}`"))
    }
}

pub fn parse_vtk(text: &str) -> std::result::Result<Mesh, String> {
    let mut lines = text.lines();
    let version = lines.next().ok_or("empty file")?;
    if !version.starts_with("# vtk DataFile") {
        return Err("missing VTK header".into());
    }
    let title = lines.next().ok_or("missing title")?;
    let characteristic_size = title
        .strip_prefix(TITLE_PREFIX)
        .and_then(|rest| rest.trim().strip_prefix("h="))
        .and_then(|v| v.parse().ok())
        .unwrap_or(0.0);
    let body: String = lines.collect::<Vec<_>>().join("\n");
    let mut tok = Tokens {
        inner: body.split_whitespace().peekable(),
    };
    tok.expect("ASCII")?;
    tok.expect("DATASET")?;
    tok.expect("UNSTRUCTURED_GRID")?;
    tok.expect("POINTS")?;
    let n: usize = tok.parse()?;
    tok.next()?;
    let mut nodes = Vec::with_capacity(n);
    for _ in 0..n {
        nodes.push([tok.parse()?, tok.parse()?, tok.parse()?]);
    }
    tok.expect("CELLS")?;
    let m: usize = tok.parse()?;
    let _size: usize = tok.parse()?;
    let mut elements = Vec::with_capacity(m);
    for _ in 0..m {
        let k: usize = tok.parse()?;
        if k != 4 {
            return Err(format!("only tetrahedra are supported, found a {k}-node cell"));
        }
        elements.push([tok.parse()?, tok.parse()?, tok.parse()?, tok.parse()?]);
    }
    tok.expect("CELL_TYPES")?;
    let mt: usize = tok.parse()?;
    if mt != m {
        return Err("CELL_TYPES count differs from CELLS".into());
    }
    for _ in 0..m {
        let t: u32 = tok.parse()?;
        if t != VTK_TETRA {
            return Err(format!("unsupported VTK cell type {t}"));
        }
    }
    let mut element_region = vec![SALINE_REGION; m];
    while let Some(word) = tok.inner.next() {
        if word.eq_ignore_ascii_case("SCALARS") {
            let name = tok.next()?;
            tok.next()?;
            if tok.inner.peek().is_some_and(|t| t.parse::<usize>().is_ok()) {
                tok.next()?;
            }
            tok.expect("LOOKUP_TABLE")?;
            tok.next()?;
            if name == "region" {
                for r in element_region.iter_mut() {
                    *r = tok.parse()?;
                }
            } else {
                for _ in 0..m {
                    tok.next()?;
                }
            }
        }
    }
    Ok(Mesh {
        nodes,
        elements,
        element_region,
        electrodes: Vec::new(),
        characteristic_size,
    })
}

pub fn parse_electrode_map(text: &str) -> std::result::Result<Vec<Vec<[usize; 3]>>, String> {
    let body: String = text
        .lines()
        .filter(|l| !l.trim_start().starts_with('#'))
        .collect::<Vec<_>>()
        .join("\n");
    let mut tok = Tokens {
        inner: body.split_whitespace().peekable(),
    };
    tok.expect("electrode-map")?;
    let version: u32 = tok.parse()?;
    if version != 1 {
        return Err(format!("unsupported electrode-map version {version}"));
    }
    tok.expect("electrodes")?;
    let count: usize = tok.parse()?;
    let mut patches = Vec::with_capacity(count);
    for k in 0..count {
        tok.expect("electrode")?;
        let index: usize = tok.parse()?;
        if index != k + 1 {
            return Err(format!("electrode blocks out of order at {index}"));
        }
        let faces: usize = tok.parse()?;
        let mut patch = Vec::with_capacity(faces);
        for _ in 0..faces {
            patch.push([tok.parse()?, tok.parse()?, tok.parse()?]);
        }
        patches.push(patch);
    }
    Ok(patches)
}
