//! Reader for Gmsh MSH 2.2 ASCII meshes.
//!
//! Supported element types: 2 (3-node triangle), 9 (6-node triangle),
//! 1 (2-node line), 8 (3-node line). Points (type 15) are skipped. A file
//! must not mix first- and second-order elements. Nodes not referenced by any
//! triangle are dropped. When the file carries no line elements the boundary
//! is extracted topologically and tagged 0.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::mesh::{BoundaryEdge, Order, Point, TriangleMesh};

const LINE2: u32 = 1;
const TRI3: u32 = 2;
const LINE3: u32 = 8;
const TRI6: u32 = 9;
const POINT: u32 = 15;

// gmsh tri6: corners then edges (0,1), (1,2), (2,0)
const TRI6_TO_LOCAL: [usize; 6] = [0, 1, 2, 4, 5, 3];

pub fn load_gmsh(path: impl AsRef<Path>) -> Result<TriangleMesh> {
    let path = path.as_ref();
    let text = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = String::from_utf8(text).map_err(|_| Error::BinaryMsh)?;
    parse_gmsh(&text)
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn next_line(&mut self) -> Result<&'a str> {
        loop {
            match self.inner.next() {
                Some((i, l)) => {
                    self.line = i + 1;
                    let l = l.trim();
                    if !l.is_empty() {
                        return Ok(l);
                    }
                }
                None => return Err(self.err("unexpected end of file")),
            }
        }
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::GmshParse {
            line: self.line,
            message: msg.into(),
        }
    }

    fn expect(&mut self, token: &str) -> Result<()> {
        let l = self.next_line()?;
        if l == token {
            Ok(())
        } else {
            Err(self.err(format!("expected {token}, found {l:?}")))
        }
    }
}

fn parse_num<T: std::str::FromStr>(lines: &Lines, tok: Option<&str>, what: &str) -> Result<T> {
    tok.and_then(|t| t.parse().ok())
        .ok_or_else(|| lines.err(format!("bad or missing {what}")))
}

pub fn parse_gmsh(text: &str) -> Result<TriangleMesh> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        line: 0,
    };
    let mut version_seen = false;
    let mut nodes: Vec<(u64, Point)> = Vec::new();
    let mut triangles: Vec<(u32, Vec<u64>)> = Vec::new();
    let mut edges: Vec<(u32, i32, Vec<u64>)> = Vec::new();

    loop {
        let header = match lines.next_line() {
            Ok(h) => h,
            Err(_) => break,
        };
        match header {
            "$MeshFormat" => {
                let l = lines.next_line()?;
                let mut it = l.split_whitespace();
                let version: String = parse_num(&lines, it.next(), "version")?;
                let file_type: u32 = parse_num(&lines, it.next(), "file type")?;
                if file_type != 0 {
                    return Err(Error::BinaryMsh);
                }
                if !version.starts_with("2.") {
                    return Err(lines.err(format!("MSH version {version} is not supported (need 2.2)")));
                }
                lines.expect("$EndMeshFormat")?;
                version_seen = true;
            }
            "$Nodes" => {
                let l = lines.next_line()?;
                let count: usize = parse_num(&lines, Some(l), "node count")?;
                nodes.reserve(count);
                for _ in 0..count {
                    let l = lines.next_line()?;
                    let mut it = l.split_whitespace();
                    let id: u64 = parse_num(&lines, it.next(), "node id")?;
                    let x: f64 = parse_num(&lines, it.next(), "x coordinate")?;
                    let y: f64 = parse_num(&lines, it.next(), "y coordinate")?;
                    nodes.push((id, [x, y]));
                }
                lines.expect("$EndNodes")?;
            }
            "$Elements" => {
                let l = lines.next_line()?;
                let count: usize = parse_num(&lines, Some(l), "element count")?;
                for _ in 0..count {
                    let l = lines.next_line()?;
                    let fields: Vec<&str> = l.split_whitespace().collect();
                    let ty: u32 = parse_num(&lines, fields.get(1).copied(), "element type")?;
                    let ntags: usize = parse_num(&lines, fields.get(2).copied(), "tag count")?;
                    let n_nodes = match ty {
                        LINE2 => 2,
                        TRI3 => 3,
                        LINE3 => 3,
                        TRI6 => 6,
                        POINT => continue,
                        other => return Err(Error::UnsupportedElementType(other)),
                    };
                    let tags = fields.get(3..3 + ntags).ok_or_else(|| lines.err("missing tags"))?;
                    let ids = fields
                        .get(3 + ntags..3 + ntags + n_nodes)
                        .ok_or_else(|| lines.err("missing element nodes"))?
                        .iter()
                        .map(|t| parse_num::<u64>(&lines, Some(t), "node reference"))
                        .collect::<Result<Vec<_>>>()?;
                    match ty {
                        TRI3 | TRI6 => triangles.push((ty, ids)),
                        _ => {
                            let tag_of = |k: usize| -> Result<i32> {
                                parse_num(&lines, tags.get(k).copied(), "tag")
                            };
                            let physical = if ntags > 0 { tag_of(0)? } else { 0 };
                            let tag = if physical == 0 && ntags > 1 { tag_of(1)? } else { physical };
                            edges.push((ty, tag, ids));
                        }
                    }
                }
                lines.expect("$EndElements")?;
            }
            other if other.starts_with("$") => {
                let end = format!("$End{}", &other[1..]);
                while lines.next_line()? != end {}
            }
            other => return Err(lines.err(format!("unexpected content {other:?}"))),
        }
    }

    if !version_seen {
        return Err(Error::GmshParse {
            line: 0,
            message: "missing $MeshFormat section".into(),
        });
    }
    if triangles.is_empty() {
        return Err(Error::InvalidMesh("no triangle elements".into()));
    }
    let tri_type = triangles[0].0;
    if triangles.iter().any(|t| t.0 != tri_type) {
        return Err(Error::InvalidMesh("mixed 3-node and 6-node triangles".into()));
    }
    let (order, line_type) = if tri_type == TRI3 {
        (Order::P1, LINE2)
    } else {
        (Order::P2, LINE3)
    };
    if let Some(e) = edges.iter().find(|e| e.0 != line_type) {
        return Err(Error::InvalidMesh(format!(
            "line element type {} does not match triangle type {tri_type}",
            e.0
        )));
    }

    let position: HashMap<u64, usize> = nodes.iter().enumerate().map(|(i, n)| (n.0, i)).collect();
    if position.len() != nodes.len() {
        return Err(Error::InvalidMesh("duplicate node ids".into()));
    }
    let lookup = |id: u64| {
        position
            .get(&id)
            .copied()
            .ok_or_else(|| Error::InvalidMesh(format!("reference to undefined node {id}")))
    };

    // keep only nodes used by triangles, in file order
    let mut used = vec![false; nodes.len()];
    for (_, ids) in &triangles {
        for &id in ids {
            used[lookup(id)?] = true;
        }
    }
    let mut remap = vec![usize::MAX; nodes.len()];
    let mut coords = Vec::new();
    for (i, n) in nodes.iter().enumerate() {
        if used[i] {
            remap[i] = coords.len();
            coords.push(n.1);
        }
    }

    let mut tri_nodes = Vec::with_capacity(triangles.len() * order.nodes_per_element());
    for (_, ids) in &triangles {
        match order {
            Order::P1 => {
                for &id in ids {
                    tri_nodes.push(remap[lookup(id)?]);
                }
            }
            Order::P2 => {
                for &k in &TRI6_TO_LOCAL {
                    tri_nodes.push(remap[lookup(ids[k])?]);
                }
            }
        }
    }
    let mut boundary = Vec::with_capacity(edges.len());
    for (_, tag, ids) in &edges {
        let mut nodes = Vec::with_capacity(ids.len());
        for &id in ids {
            let i = remap[lookup(id)?];
            if i == usize::MAX {
                return Err(Error::InvalidMesh(format!(
                    "boundary line references node {id} outside every triangle"
                )));
            }
            nodes.push(i);
        }
        boundary.push(BoundaryEdge { nodes, tag: *tag });
    }

    let mesh = TriangleMesh::new(coords, tri_nodes, order, boundary)?;
    if mesh.boundary_edges().is_empty() {
        let edges = mesh.extract_boundary_edges(0);
        return TriangleMesh::new(
            mesh.coords().to_vec(),
            mesh.connectivity().to_vec(),
            order,
            edges,
        );
    }
    Ok(mesh)
}

/// MSH 2.2 ASCII text for `mesh`: triangles with physical tag 1 and the
/// boundary edges with their own tags.
pub fn write_gmsh(mesh: &TriangleMesh) -> String {
    use std::fmt::Write;
    let (tri_type, line_type) = match mesh.order() {
        Order::P1 => (TRI3, LINE2),
        Order::P2 => (TRI6, LINE3),
    };
    let mut out = String::from("$MeshFormat\n2.2 0 8\n$EndMeshFormat\n$Nodes\n");
    let _ = writeln!(out, "{}", mesh.n_nodes());
    for (i, p) in mesh.coords().iter().enumerate() {
        let _ = writeln!(out, "{} {:e} {:e} 0", i + 1, p[0], p[1]);
    }
    out.push_str("$EndNodes\n$Elements\n");
    let _ = writeln!(out, "{}", mesh.boundary_edges().len() + mesh.n_elements());
    let mut id = 0;
    for e in mesh.boundary_edges() {
        id += 1;
        let _ = write!(out, "{id} {line_type} 2 {} {}", e.tag, e.tag);
        for &n in &e.nodes {
            let _ = write!(out, " {}", n + 1);
        }
        out.push('\n');
    }
    for el in mesh.elements() {
        id += 1;
        let _ = write!(out, "{id} {tri_type} 2 1 1");
        match mesh.order() {
            Order::P1 => el.iter().for_each(|n| {
                let _ = write!(out, " {}", n + 1);
            }),
            Order::P2 => {
                // inverse of TRI6_TO_LOCAL
                for k in [0, 1, 2, 5, 3, 4] {
                    let _ = write!(out, " {}", el[k] + 1);
                }
            }
        }
        out.push('\n');
    }
    out.push_str("$EndElements\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const UNIT_SQUARE: &str = "$MeshFormat
2.2 0 8
$EndMeshFormat
$Nodes
4
1 0 0 0
2 1 0 0
3 1 1 0
4 0 1 0
$EndNodes
$Elements
6
1 1 2 1 1 1 2
2 1 2 2 2 2 3
3 1 2 3 3 3 4
4 1 2 4 4 4 1
5 2 2 10 1 1 2 3
6 2 2 10 1 1 4 3
$EndElements
";

    #[test]
    fn unit_square_fixture() {
        let m = parse_gmsh(UNIT_SQUARE).unwrap();
        assert_eq!(m.n_nodes(), 4);
        assert_eq!(m.n_elements(), 2);
        assert_eq!(m.boundary_edges().len(), 4);
        assert_eq!(m.boundary_tags(), vec![1, 2, 3, 4]);
        // element 6 is listed clockwise and must come out flipped
        assert_eq!(m.element(1), &[0, 2, 3]);
        assert!((m.area() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_quads_and_binary() {
        let quad = UNIT_SQUARE.replace("6 2 2 10 1 1 4 3", "6 3 2 10 1 1 2 3 4");
        assert!(matches!(parse_gmsh(&quad), Err(Error::UnsupportedElementType(3))));
        let bin = UNIT_SQUARE.replace("2.2 0 8", "2.2 1 8");
        assert!(matches!(parse_gmsh(&bin), Err(Error::BinaryMsh)));
    }

    #[test]
    fn rejects_dangling_nodes() {
        let bad = UNIT_SQUARE.replace("6 2 2 10 1 1 4 3", "6 2 2 10 1 1 4 7");
        assert!(matches!(parse_gmsh(&bad), Err(Error::InvalidMesh(_))));
    }

    #[test]
    fn missing_lines_extracts_boundary() {
        let text = UNIT_SQUARE
            .replace("6\n1 1 2 1 1 1 2\n2 1 2 2 2 2 3\n3 1 2 3 3 3 4\n4 1 2 4 4 4 1\n", "2\n");
        let m = parse_gmsh(&text).unwrap();
        assert_eq!(m.boundary_edges().len(), 4);
        assert_eq!(m.boundary_tags(), vec![0]);
    }

    #[test]
    fn write_then_parse_round_trips() {
        use crate::mesh::{generate_structured_unit_square, promote_to_p2};
        let p1 = generate_structured_unit_square(3).unwrap();
        for m in [p1.clone(), promote_to_p2(&p1).unwrap()] {
            let back = parse_gmsh(&write_gmsh(&m)).unwrap();
            assert_eq!(back.order(), m.order());
            assert_eq!(back.connectivity(), m.connectivity());
            assert_eq!(back.coords(), m.coords());
            assert_eq!(back.boundary_edges(), m.boundary_edges());
        }
    }

    #[test]
    fn second_order_triangle() {
        let text = "$MeshFormat\n2.2 0 8\n$EndMeshFormat\n$Nodes\n6\n\
1 0 0 0\n2 1 0 0\n3 0 1 0\n4 0.5 0 0\n5 0.5 0.5 0\n6 0 0.5 0\n$EndNodes\n\
$Elements\n5\n1 15 2 0 1 1\n2 9 2 7 1 1 2 3 4 5 6\n3 8 2 5 1 1 2 4\n4 8 2 5 1 2 3 5\n5 8 2 5 1 3 1 6\n$EndElements\n";
        let m = parse_gmsh(text).unwrap();
        assert_eq!(m.order(), Order::P2);
        // local node 3 is the midside opposite corner 0
        assert_eq!(m.element(0), &[0, 1, 2, 4, 5, 3]);
        assert_eq!(m.boundary_edges()[0].nodes, vec![0, 1, 3]);
    }
}
