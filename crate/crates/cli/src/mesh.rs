//! Per-frame mesh export: grid triangulation written as OBJ and PLY.
//!
//! Every complete quad of present grid cells becomes two triangles; absent
//! cells leave holes. Vertex order matches the point columns of the shape
//! stack, so the files line up with the matrices they were exported from.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use nrsfm_core::prelude::*;

/// Triangulates the present cells of a grid, two triangles per complete quad.
pub fn grid_faces(topo: &GridTopology) -> Vec<[usize; 3]> {
    let mut faces = Vec::new();
    for r in 0..topo.rows().saturating_sub(1) {
        for c in 0..topo.cols().saturating_sub(1) {
            let (r, c) = (r as isize, c as isize);
            let quad = (
                topo.index_of(r, c),
                topo.index_of(r, c + 1),
                topo.index_of(r + 1, c),
                topo.index_of(r + 1, c + 1),
            );
            if let (Some(v00), Some(v01), Some(v10), Some(v11)) = quad {
                faces.push([v00, v01, v11]);
                faces.push([v00, v11, v10]);
            }
        }
    }
    faces
}

/// Extracts the P vertices of one frame from a 3F×P shape stack.
pub fn frame_vertices(s: &ShapeStack, frame: usize) -> Vec<[f64; 3]> {
    let d = s.data();
    (0..s.points())
        .map(|p| [d[(3 * frame, p)], d[(3 * frame + 1, p)], d[(3 * frame + 2, p)]])
        .collect()
}

/// Writes a Wavefront OBJ file (1-based face indices).
pub fn write_obj(path: &Path, vertices: &[[f64; 3]], faces: &[[usize; 3]]) -> Result<()> {
    let file =
        File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut out = BufWriter::new(file);
    for v in vertices {
        writeln!(out, "v {} {} {}", v[0], v[1], v[2])?;
    }
    for f in faces {
        writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    out.flush()
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Writes an ASCII PLY file (0-based face indices).
pub fn write_ply(path: &Path, vertices: &[[f64; 3]], faces: &[[usize; 3]]) -> Result<()> {
    let file =
        File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut out = BufWriter::new(file);
    writeln!(out, "ply")?;
    writeln!(out, "format ascii 1.0")?;
    writeln!(out, "element vertex {}", vertices.len())?;
    writeln!(out, "property double x")?;
    writeln!(out, "property double y")?;
    writeln!(out, "property double z")?;
    writeln!(out, "element face {}", faces.len())?;
    writeln!(out, "property list uchar int vertex_indices")?;
    writeln!(out, "end_header")?;
    for v in vertices {
        writeln!(out, "{} {} {}", v[0], v[1], v[2])?;
    }
    for f in faces {
        writeln!(out, "3 {} {} {}", f[0], f[1], f[2])?;
    }
    out.flush()
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Writes `frame_NNNN.obj` and `.ply` for every frame; returns the frame count.
pub fn write_frame_meshes(dir: &Path, s: &ShapeStack, topo: &GridTopology) -> Result<usize> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let faces = grid_faces(topo);
    for i in 0..s.frames() {
        let vertices = frame_vertices(s, i);
        write_obj(&dir.join(format!("frame_{i:04}.obj")), &vertices, &faces)?;
        write_ply(&dir.join(format!("frame_{i:04}.ply")), &vertices, &faces)?;
    }
    Ok(s.frames())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn full_grid_has_two_triangles_per_quad() {
        let topo = GridTopology::full(4, 5).unwrap();
        let faces = grid_faces(&topo);
        assert_eq!(faces.len(), 2 * 3 * 4, "4x5 grid has 3x4 quads");
        for f in &faces {
            assert!(f.iter().all(|&v| v < 20), "face index out of range: {f:?}");
        }
    }

    #[test]
    fn absent_center_removes_every_touching_quad() {
        let mut present = vec![true; 9];
        present[4] = false;
        let topo = GridTopology::from_mask(3, 3, &present).unwrap();
        assert!(
            grid_faces(&topo).is_empty(),
            "every 3x3 quad touches the removed center"
        );
    }

    #[test]
    fn single_row_grid_has_no_faces() {
        let topo = GridTopology::full(1, 6).unwrap();
        assert!(grid_faces(&topo).is_empty());
    }

    #[test]
    fn obj_and_ply_files_list_vertices_and_faces() {
        let dir = tempfile::tempdir().unwrap();
        let topo = GridTopology::full(2, 2).unwrap();
        let shape = ShapeStack::new(DMatrix::from_row_slice(
            3,
            4,
            &[
                0.0, 1.0, 0.0, 1.0, //
                0.0, 0.0, 1.0, 1.0, //
                0.25, 0.5, 0.75, 1.0,
            ],
        ))
        .unwrap();
        let frames = write_frame_meshes(dir.path(), &shape, &topo).unwrap();
        assert_eq!(frames, 1);

        let obj = fs::read_to_string(dir.path().join("frame_0000.obj")).unwrap();
        let v_lines = obj.lines().filter(|l| l.starts_with("v ")).count();
        let f_lines: Vec<&str> = obj.lines().filter(|l| l.starts_with("f ")).collect();
        assert_eq!(v_lines, 4);
        assert_eq!(f_lines, vec!["f 1 2 4", "f 1 4 3"], "1-based quad split");

        let ply = fs::read_to_string(dir.path().join("frame_0000.ply")).unwrap();
        assert!(ply.starts_with("ply\nformat ascii 1.0\n"));
        assert!(ply.contains("element vertex 4"));
        assert!(ply.contains("element face 2"));
        assert!(ply.ends_with("3 0 1 3\n3 0 3 2\n"), "0-based faces: {ply}");
    }
}
