//! Triangulations of the unit disk with a tagged, counterclockwise boundary loop.

use std::collections::HashMap;
use std::f64::consts::{PI, TAU};
use std::io::{BufRead, Write};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Boundary vertices must sit on the unit circle to this tolerance.
pub const CIRCLE_TOL: f64 = 1e-12;

/// Rings per unit of `1 / target_h` for the concentric generator.
const RING_DENSITY: f64 = 2.45;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EdgeTag {
    Dirichlet,
    Neumann,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryEdge {
    /// Start and end vertex, in counterclockwise order along the boundary.
    pub nodes: [usize; 2],
    /// Polar angle of the edge midpoint in (-pi, pi].
    pub angle: f64,
    pub normal: Point,
    pub tangent: Point,
    pub tag: EdgeTag,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    boundary: Vec<BoundaryEdge>,
}

/// Map an angle to (-pi, pi].
pub fn canonical_angle(t: f64) -> f64 {
    let mut a = t.rem_euclid(TAU);
    if a > PI {
        a -= TAU;
    }
    if a <= -PI {
        a += TAU;
    }
    a
}

impl Mesh {
    /// Build a mesh from raw vertices and counterclockwise triangles.
    ///
    /// The boundary loop is recovered from the topology and every edge starts
    /// out tagged `Neumann`.
    pub fn from_parts(vertices: Vec<Point>, triangles: Vec<[usize; 3]>) -> Result<Mesh> {
        if triangles.is_empty() {
            return Err(Error::Contract("mesh has no triangles".into()));
        }
        let nv = vertices.len();
        for (t, tri) in triangles.iter().enumerate() {
            if tri.iter().any(|&v| v >= nv) {
                return Err(Error::Contract(format!("triangle {t} references a missing vertex")));
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(Error::Contract(format!("triangle {t} is degenerate")));
            }
            let a = signed_area(vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]);
            if !(a > 0.0) {
                return Err(Error::Contract(format!("triangle {t} has non-positive area {a:e}")));
            }
        }

        // Directed edges seen once are boundary edges; their triangle-induced
        // direction already walks the boundary counterclockwise.
        let mut count: HashMap<(usize, usize), (usize, [usize; 2])> = HashMap::new();
        for tri in &triangles {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                let e = count.entry((a.min(b), a.max(b))).or_insert((0, [a, b]));
                e.0 += 1;
            }
        }
        let mut next: HashMap<usize, usize> = HashMap::new();
        for (key, (c, dir)) in &count {
            match c {
                1 => {
                    if next.insert(dir[0], dir[1]).is_some() {
                        return Err(Error::Contract(format!(
                            "boundary vertex {} starts two boundary edges",
                            dir[0]
                        )));
                    }
                }
                2 => {}
                _ => {
                    return Err(Error::Contract(format!(
                        "edge ({}, {}) is shared by {c} triangles",
                        key.0, key.1
                    )))
                }
            }
        }
        if next.is_empty() {
            return Err(Error::Contract("mesh has no boundary".into()));
        }
        for &v in next.keys() {
            let r = norm(vertices[v]);
            if (r - 1.0).abs() > CIRCLE_TOL {
                return Err(Error::Contract(format!(
                    "boundary vertex {v} has radius {r}, not on the unit circle"
                )));
            }
        }

        // Start at the boundary vertex with the smallest angle in [0, 2pi).
        let start = *next
            .keys()
            .min_by(|&&a, &&b| {
                let ta = polar(vertices[a]).rem_euclid(TAU);
                let tb = polar(vertices[b]).rem_euclid(TAU);
                ta.total_cmp(&tb).then(a.cmp(&b))
            })
            .expect("non-empty");
        let mut boundary = Vec::with_capacity(next.len());
        let mut v = start;
        loop {
            let w = next[&v];
            boundary.push(make_edge(&vertices, v, w, EdgeTag::Neumann));
            v = w;
            if v == start {
                break;
            }
            if boundary.len() > next.len() {
                return Err(Error::Contract("boundary edges do not form a closed loop".into()));
            }
        }
        if boundary.len() != next.len() {
            return Err(Error::Contract(format!(
                "boundary has {} edges but the loop through vertex {start} has {}",
                next.len(),
                boundary.len()
            )));
        }

        Ok(Mesh { vertices, triangles, boundary })
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn boundary_edges(&self) -> &[BoundaryEdge] {
        &self.boundary
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    /// Boundary vertices in counterclockwise loop order.
    pub fn boundary_nodes(&self) -> Vec<usize> {
        self.boundary.iter().map(|e| e.nodes[0]).collect()
    }

    /// Sorted vertices touched by at least one Dirichlet edge.
    pub fn dirichlet_nodes(&self) -> Vec<usize> {
        let mut nodes: Vec<usize> = self
            .boundary
            .iter()
            .filter(|e| e.tag == EdgeTag::Dirichlet)
            .flat_map(|e| e.nodes)
            .collect();
        nodes.sort_unstable();
        nodes.dedup();
        nodes
    }

    pub fn triangle_points(&self, t: usize) -> [Point; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangle_points(t);
        signed_area(a, b, c)
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.area(t)).sum()
    }

    pub fn centroid(&self, t: usize) -> Point {
        let [a, b, c] = self.triangle_points(t);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    /// Longest edge of triangle `t`.
    pub fn diameter(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangle_points(t);
        dist(a, b).max(dist(b, c)).max(dist(c, a))
    }

    pub fn max_diameter(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.diameter(t)).fold(0.0, f64::max)
    }

    /// `2 r / R`: 1 for an equilateral triangle, 0 for a degenerate one.
    pub fn quality(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangle_points(t);
        let (la, lb, lc) = (dist(b, c), dist(c, a), dist(a, b));
        let area = signed_area(a, b, c);
        let s = 0.5 * (la + lb + lc);
        let inradius = area / s;
        let circumradius = la * lb * lc / (4.0 * area);
        2.0 * inradius / circumradius
    }

    /// Largest interior angle of triangle `t`, in radians.
    pub fn max_angle(&self, t: usize) -> f64 {
        let p = self.triangle_points(t);
        (0..3)
            .map(|k| {
                let (o, u, v) = (p[k], p[(k + 1) % 3], p[(k + 2) % 3]);
                let (du, dv) = (sub(u, o), sub(v, o));
                let c = (du[0] * dv[0] + du[1] * dv[1]) / (norm(du) * norm(dv));
                c.clamp(-1.0, 1.0).acos()
            })
            .fold(0.0, f64::max)
    }

    /// Gradients of the three P1 basis functions on triangle `t`, and its area.
    pub fn basis_gradients(&self, t: usize) -> ([Point; 3], f64) {
        let [p0, p1, p2] = self.triangle_points(t);
        let two_a = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]);
        let g = [
            [(p1[1] - p2[1]) / two_a, (p2[0] - p1[0]) / two_a],
            [(p2[1] - p0[1]) / two_a, (p0[0] - p2[0]) / two_a],
            [(p0[1] - p1[1]) / two_a, (p1[0] - p0[0]) / two_a],
        ];
        (g, 0.5 * two_a)
    }

    pub fn num_edges(&self) -> usize {
        let mut edges: Vec<(usize, usize)> = self
            .triangles
            .iter()
            .flat_map(|t| (0..3).map(move |k| (t[k].min(t[(k + 1) % 3]), t[k].max(t[(k + 1) % 3]))))
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges.len()
    }

    /// V - E + T.
    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.num_edges() as i64 + self.triangles.len() as i64
    }

    /// Re-check every structural invariant.
    pub fn validate(&self) -> Result<()> {
        let rebuilt = Mesh::from_parts(self.vertices.clone(), self.triangles.clone())?;
        if rebuilt.boundary.len() != self.boundary.len() {
            return Err(Error::Contract("stored boundary loop is stale".into()));
        }
        for (a, b) in rebuilt.boundary.iter().zip(&self.boundary) {
            if a.nodes != b.nodes {
                return Err(Error::Contract("stored boundary loop is stale".into()));
            }
        }
        if self.euler_characteristic() != 1 {
            return Err(Error::Contract(format!(
                "Euler characteristic is {}, expected 1",
                self.euler_characteristic()
            )));
        }
        Ok(())
    }

    /// Tag each boundary edge Dirichlet iff its midpoint angle lies in `gamma`.
    pub fn tag_boundary(&self, gamma: &BoundarySpec) -> Mesh {
        let mut out = self.clone();
        for e in &mut out.boundary {
            e.tag = if gamma.contains(e.angle) { EdgeTag::Dirichlet } else { EdgeTag::Neumann };
        }
        out
    }

    /// Total length of Dirichlet edges.
    pub fn dirichlet_length(&self) -> f64 {
        self.boundary
            .iter()
            .filter(|e| e.tag == EdgeTag::Dirichlet)
            .map(|e| dist(self.vertices[e.nodes[0]], self.vertices[e.nodes[1]]))
            .sum()
    }

    pub fn boundary_length(&self) -> f64 {
        self.boundary
            .iter()
            .map(|e| dist(self.vertices[e.nodes[0]], self.vertices[e.nodes[1]]))
            .sum()
    }

    /// Uniform red refinement. New boundary vertices are pushed onto the unit
    /// circle and inherit the tag of the edge they split.
    pub fn refine(&self) -> Mesh {
        let n_old = self.vertices.len();
        let mut vertices = self.vertices.clone();
        let boundary_tag: HashMap<(usize, usize), EdgeTag> = self
            .boundary
            .iter()
            .map(|e| ((e.nodes[0].min(e.nodes[1]), e.nodes[0].max(e.nodes[1])), e.tag))
            .collect();
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid_tag: HashMap<usize, EdgeTag> = HashMap::new();
        let mut mid = |a: usize, b: usize, vertices: &mut Vec<Point>| -> usize {
            let key = (a.min(b), a.max(b));
            *midpoint.entry(key).or_insert_with(|| {
                let (pa, pb) = (vertices[a], vertices[b]);
                let mut m = [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])];
                let idx = vertices.len();
                if let Some(&tag) = boundary_tag.get(&key) {
                    let r = norm(m);
                    m = [m[0] / r, m[1] / r];
                    mid_tag.insert(idx, tag);
                }
                vertices.push(m);
                idx
            })
        };
        let mut triangles = Vec::with_capacity(4 * self.triangles.len());
        for &[a, b, c] in &self.triangles {
            let ab = mid(a, b, &mut vertices);
            let bc = mid(b, c, &mut vertices);
            let ca = mid(c, a, &mut vertices);
            triangles.push([a, ab, ca]);
            triangles.push([ab, b, bc]);
            triangles.push([ca, bc, c]);
            triangles.push([ab, bc, ca]);
        }
        let mut out = Mesh::from_parts(vertices, triangles)
            .expect("refinement of a valid mesh is valid");
        for e in &mut out.boundary {
            let m = if e.nodes[0] >= n_old { e.nodes[0] } else { e.nodes[1] };
            e.tag = mid_tag[&m];
        }
        out
    }

    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "vertices {}", self.vertices.len())?;
        for p in &self.vertices {
            writeln!(w, "{:.16e} {:.16e}", p[0], p[1])?;
        }
        writeln!(w, "triangles {}", self.triangles.len())?;
        for t in &self.triangles {
            writeln!(w, "{} {} {}", t[0], t[1], t[2])?;
        }
        writeln!(w, "boundary_edges {}", self.boundary.len())?;
        for e in &self.boundary {
            let tag = match e.tag {
                EdgeTag::Dirichlet => 'D',
                EdgeTag::Neumann => 'N',
            };
            writeln!(w, "{} {} {}", e.nodes[0], e.nodes[1], tag)?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Mesh> {
        let mut lines = r.lines();
        let mut next_line = || -> Result<String> {
            loop {
                match lines.next() {
                    Some(l) => {
                        let l = l?;
                        if !l.trim().is_empty() {
                            return Ok(l);
                        }
                    }
                    None => return Err(Error::Parse("unexpected end of mesh file".into())),
                }
            }
        };
        let header = |line: String, name: &str| -> Result<usize> {
            let mut it = line.split_whitespace();
            match (it.next(), it.next().map(str::parse::<usize>)) {
                (Some(h), Some(Ok(n))) if h == name => Ok(n),
                _ => Err(Error::Parse(format!("expected `{name} <count>`, got `{line}`"))),
            }
        };
        let nv = header(next_line()?, "vertices")?;
        let mut vertices = Vec::with_capacity(nv);
        for _ in 0..nv {
            let line = next_line()?;
            let xs: Vec<f64> = parse_row(&line)?;
            if xs.len() != 2 {
                return Err(Error::Parse(format!("bad vertex row `{line}`")));
            }
            vertices.push([xs[0], xs[1]]);
        }
        let nt = header(next_line()?, "triangles")?;
        let mut triangles = Vec::with_capacity(nt);
        for _ in 0..nt {
            let line = next_line()?;
            let ids: Vec<usize> = parse_row(&line)?;
            if ids.len() != 3 {
                return Err(Error::Parse(format!("bad triangle row `{line}`")));
            }
            triangles.push([ids[0], ids[1], ids[2]]);
        }
        let nb = header(next_line()?, "boundary_edges")?;
        let mut tags = HashMap::new();
        for _ in 0..nb {
            let line = next_line()?;
            let f: Vec<&str> = line.split_whitespace().collect();
            let parsed = match f.as_slice() {
                [a, b, t] => match (a.parse::<usize>(), b.parse::<usize>(), *t) {
                    (Ok(a), Ok(b), "D") => Some(((a, b), EdgeTag::Dirichlet)),
                    (Ok(a), Ok(b), "N") => Some(((a, b), EdgeTag::Neumann)),
                    _ => None,
                },
                _ => None,
            };
            let (key, tag) =
                parsed.ok_or_else(|| Error::Parse(format!("bad boundary row `{line}`")))?;
            tags.insert(key, tag);
        }
        let mut mesh = Mesh::from_parts(vertices, triangles)?;
        if tags.len() != mesh.boundary.len() {
            return Err(Error::Parse(format!(
                "file lists {} boundary edges, topology has {}",
                tags.len(),
                mesh.boundary.len()
            )));
        }
        for e in &mut mesh.boundary {
            e.tag = *tags.get(&(e.nodes[0], e.nodes[1])).ok_or_else(|| {
                Error::Parse(format!("boundary edge {:?} missing from file", e.nodes))
            })?;
        }
        Ok(mesh)
    }
}

fn parse_row<T: std::str::FromStr>(line: &str) -> Result<Vec<T>> {
    line.split_whitespace()
        .map(|s| s.parse::<T>().map_err(|_| Error::Parse(format!("cannot parse `{s}`"))))
        .collect()
}

fn make_edge(vertices: &[Point], a: usize, b: usize, tag: EdgeTag) -> BoundaryEdge {
    let (pa, pb) = (vertices[a], vertices[b]);
    let d = sub(pb, pa);
    let len = norm(d);
    let normal = [d[1] / len, -d[0] / len];
    let tangent = [-normal[1], normal[0]];
    let angle = canonical_angle(polar([0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]));
    BoundaryEdge { nodes: [a, b], angle, normal, tangent, tag }
}

pub(crate) fn signed_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

fn norm(a: Point) -> f64 {
    a[0].hypot(a[1])
}

fn dist(a: Point, b: Point) -> f64 {
    norm(sub(a, b))
}

fn polar(p: Point) -> f64 {
    p[1].atan2(p[0])
}

/// Concentric-ring triangulation of the unit disk.
///
/// Ring `k` holds `6k` vertices at radius `k/n`. Neighbouring rings are
/// stitched by always taking the shorter diagonal, which keeps every angle
/// below 90 degrees.
pub fn build_disk_mesh(target_h: f64) -> Result<Mesh> {
    if !(target_h > 0.0 && target_h < 1.0) {
        return Err(Error::Parameter(format!("target_h must lie in (0, 1), got {target_h}")));
    }
    let n = (RING_DENSITY / target_h).ceil() as usize;
    Ok(ring_mesh(n))
}

/// Ring mesh with `n` rings, `1 + 3n(n+1)` vertices and `6n^2` triangles.
pub fn ring_mesh(n: usize) -> Mesh {
    assert!(n >= 1);
    let mut vertices = vec![[0.0, 0.0]];
    let mut start = vec![0usize];
    for k in 1..=n {
        start.push(vertices.len());
        let m = 6 * k;
        let r = k as f64 / n as f64;
        for j in 0..m {
            let t = TAU * j as f64 / m as f64;
            let p = if k == n { [t.cos(), t.sin()] } else { [r * t.cos(), r * t.sin()] };
            vertices.push(p);
        }
    }
    let mut triangles = Vec::with_capacity(6 * n * n);
    for j in 0..6 {
        triangles.push([0, start[1] + j, start[1] + (j + 1) % 6]);
    }
    for k in 2..=n {
        let (si, mi) = (start[k - 1], 6 * (k - 1));
        let (so, mo) = (start[k], 6 * k);
        let inner = |q: usize| si + q % mi;
        let outer = |q: usize| so + q % mo;
        let (mut i, mut j) = (0, 0);
        while i < mi || j < mo {
            let advance_outer = if i >= mi {
                true
            } else if j >= mo {
                false
            } else {
                let d1 = dist(vertices[inner(i)], vertices[outer(j + 1)]);
                let d2 = dist(vertices[outer(j)], vertices[inner(i + 1)]);
                d1 < d2
            };
            if advance_outer {
                triangles.push([inner(i), outer(j), outer(j + 1)]);
                j += 1;
            } else {
                triangles.push([inner(i), outer(j), inner(i + 1)]);
                i += 1;
            }
        }
    }
    Mesh::from_parts(vertices, triangles).expect("ring mesh is valid by construction")
}

/// Controlled boundary arcs, each a half-open angle interval `[a, b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundarySpec {
    arcs: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GammaPreset {
    Large,
    Medium,
    Small,
    Full,
}

impl GammaPreset {
    pub const ALL: [GammaPreset; 4] =
        [GammaPreset::Large, GammaPreset::Medium, GammaPreset::Small, GammaPreset::Full];

    pub fn name(self) -> &'static str {
        match self {
            GammaPreset::Large => "large",
            GammaPreset::Medium => "medium",
            GammaPreset::Small => "small",
            GammaPreset::Full => "full",
        }
    }

    pub fn from_name(s: &str) -> Option<GammaPreset> {
        GammaPreset::ALL.into_iter().find(|g| g.name() == s)
    }

    pub fn spec(self) -> BoundarySpec {
        let arc = match self {
            GammaPreset::Large => (3.0 * PI / 8.0, 17.0 * PI / 8.0),
            GammaPreset::Medium => (3.0 * PI / 4.0, 7.0 * PI / 4.0),
            GammaPreset::Small => (9.0 * PI / 8.0, 11.0 * PI / 8.0),
            GammaPreset::Full => (0.0, TAU),
        };
        BoundarySpec { arcs: vec![arc] }
    }
}

impl BoundarySpec {
    pub fn new(arcs: Vec<(f64, f64)>) -> Result<BoundarySpec> {
        if arcs.is_empty() {
            return Err(Error::Parameter("boundary spec needs at least one arc".into()));
        }
        let mut total = 0.0;
        for &(a, b) in &arcs {
            if !(a.is_finite() && b.is_finite()) {
                return Err(Error::Parameter(format!("arc [{a}, {b}) is not finite")));
            }
            let len = b - a;
            if !(len > 0.0) {
                return Err(Error::Parameter(format!("arc [{a}, {b}) is empty")));
            }
            if len > TAU {
                return Err(Error::Parameter(format!("arc [{a}, {b}) exceeds a full turn")));
            }
            total += len;
        }
        if total > TAU * (1.0 + 1e-12) {
            return Err(Error::Parameter(format!("arcs cover {total} > 2pi")));
        }
        let spec = BoundarySpec { arcs };
        for (i, &(ai, _)) in spec.arcs.iter().enumerate() {
            for j in 0..spec.arcs.len() {
                if i != j && spec.arc_contains(j, ai) {
                    return Err(Error::Parameter(format!("arcs {i} and {j} overlap")));
                }
            }
        }
        Ok(spec)
    }

    pub fn arcs(&self) -> &[(f64, f64)] {
        &self.arcs
    }

    pub fn measure(&self) -> f64 {
        self.arcs.iter().map(|(a, b)| b - a).sum()
    }

    fn arc_contains(&self, i: usize, t: f64) -> bool {
        let (a, b) = self.arcs[i];
        (t - a).rem_euclid(TAU) < b - a
    }

    /// Whether the angle `t` (any branch) lies in some arc.
    pub fn contains(&self, t: f64) -> bool {
        (0..self.arcs.len()).any(|i| self.arc_contains(i, t))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_triangle() -> Mesh {
        // Not a disk mesh, so build the struct directly for geometry checks.
        Mesh {
            vertices: vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            triangles: vec![[0, 1, 2]],
            boundary: vec![],
        }
    }

    #[test]
    fn coarse_mesh_is_valid() {
        let m = build_disk_mesh(0.5).unwrap();
        assert!(m.num_triangles() >= 12);
        m.validate().unwrap();
        assert!(m.max_diameter() <= 0.75);
    }

    #[test]
    fn rejects_bad_target_h() {
        for h in [0.0, -0.1, 1.0, 2.0, f64::NAN] {
            assert!(matches!(build_disk_mesh(h), Err(Error::Parameter(_))));
        }
    }

    #[test]
    fn desk_mesh_size_and_area() {
        let m = build_disk_mesh(0.03).unwrap();
        assert!((15_000..=30_000).contains(&m.num_vertices()), "{}", m.num_vertices());
        assert!((m.total_area() - PI).abs() / PI < 0.005);
        assert!(m.max_diameter() <= 1.5 * 0.03);
        for t in 0..m.num_triangles() {
            assert!(m.quality(t) >= 0.3);
            assert!(m.max_angle(t) <= 0.5 * PI + 1e-12);
        }
    }

    #[test]
    fn ring_counts() {
        for n in 1..8 {
            let m = ring_mesh(n);
            assert_eq!(m.num_vertices(), 1 + 3 * n * (n + 1));
            assert_eq!(m.num_triangles(), 6 * n * n);
            assert_eq!(m.boundary_edges().len(), 6 * n);
            assert_eq!(m.euler_characteristic(), 1);
        }
    }

    #[test]
    fn polygon_area_matches_formula() {
        // A regular m-gon inscribed in the unit circle has area m sin(2pi/m) / 2.
        for n in [3, 10, 40] {
            let m = ring_mesh(n);
            let k = 6 * n;
            let exact = 0.5 * k as f64 * (TAU / k as f64).sin();
            assert!((m.total_area() - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn boundary_loop_is_ccw_and_geometric() {
        let m = build_disk_mesh(0.2).unwrap();
        let b = m.boundary_edges();
        for (k, e) in b.iter().enumerate() {
            assert_eq!(e.nodes[1], b[(k + 1) % b.len()].nodes[0]);
            assert!(e.angle > -PI && e.angle <= PI);
            let p = m.vertices()[e.nodes[0]];
            let q = m.vertices()[e.nodes[1]];
            let mid = [0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])];
            assert!(e.normal[0] * mid[0] + e.normal[1] * mid[1] > 0.0);
            assert!((e.tangent[0] + e.normal[1]).abs() < 1e-15);
            assert!((e.tangent[1] - e.normal[0]).abs() < 1e-15);
        }
    }

    #[test]
    fn full_circle_tags_everything() {
        let m = build_disk_mesh(0.1).unwrap().tag_boundary(&GammaPreset::Full.spec());
        assert!(m.boundary_edges().iter().all(|e| e.tag == EdgeTag::Dirichlet));
    }

    #[test]
    fn small_and_medium_arc_lengths() {
        let h = 0.03;
        let base = build_disk_mesh(h).unwrap();
        let small = base.tag_boundary(&GammaPreset::Small.spec());
        assert!((small.dirichlet_length() - PI / 4.0).abs() <= 2.0 * h);
        let medium = base.tag_boundary(&GammaPreset::Medium.spec());
        let frac = medium.dirichlet_length() / medium.boundary_length();
        assert!((frac - 0.5).abs() <= h);
        // Tagging returns a new mesh.
        assert!(base.boundary_edges().iter().all(|e| e.tag == EdgeTag::Neumann));
    }

    #[test]
    fn refine_quadruples_and_projects() {
        let m = build_disk_mesh(0.3).unwrap().tag_boundary(&GammaPreset::Medium.spec());
        let r = m.refine();
        assert_eq!(r.num_triangles(), 4 * m.num_triangles());
        r.validate().unwrap();
        for &v in &r.boundary_nodes() {
            assert!((norm(r.vertices()[v]) - 1.0).abs() <= 1e-12);
        }
        let d_old = m.boundary_edges().iter().filter(|e| e.tag == EdgeTag::Dirichlet).count();
        let d_new = r.boundary_edges().iter().filter(|e| e.tag == EdgeTag::Dirichlet).count();
        assert_eq!(d_new, 2 * d_old);
    }

    #[test]
    fn refinement_area_increases_toward_pi() {
        let m0 = build_disk_mesh(0.4).unwrap();
        let m1 = m0.refine();
        let m2 = m1.refine();
        let (a0, a1, a2) = (m0.total_area(), m1.total_area(), m2.total_area());
        assert!(a0 < a1 && a1 < a2 && a2 < PI);
        assert!(PI - a2 < PI - a1 && PI - a1 < PI - a0);
    }

    #[test]
    fn refine_commutes_with_tagging() {
        let h = 0.2;
        let gamma = GammaPreset::Large.spec();
        let m = build_disk_mesh(h).unwrap();
        let a = m.tag_boundary(&gamma).refine().refine();
        let b = m.refine().refine().tag_boundary(&gamma);
        for (ea, eb) in a.boundary_edges().iter().zip(b.boundary_edges()) {
            assert_eq!(ea.nodes, eb.nodes);
            if ea.tag != eb.tag {
                // Disagreement only right next to an arc endpoint.
                let near = gamma.arcs().iter().any(|&(lo, hi)| {
                    [lo, hi].iter().any(|&t| canonical_angle(ea.angle - t).abs() <= 2.0 * h)
                });
                assert!(near, "tag mismatch far from arc ends at angle {}", ea.angle);
            }
        }
    }

    #[test]
    fn text_round_trip_is_exact() {
        let m = build_disk_mesh(0.25).unwrap().tag_boundary(&GammaPreset::Small.spec());
        let mut buf = Vec::new();
        m.write_text(&mut buf).unwrap();
        let back = Mesh::read_text(buf.as_slice()).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn read_rejects_garbage() {
        assert!(matches!(Mesh::read_text("vertices x\n".as_bytes()), Err(Error::Parse(_))));
        assert!(matches!(Mesh::read_text("".as_bytes()), Err(Error::Parse(_))));
    }

    #[test]
    fn basis_gradients_on_reference_triangle() {
        let m = reference_triangle();
        let (g, a) = m.basis_gradients(0);
        assert_eq!(a, 0.5);
        assert_eq!(g, [[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]]);
        assert!((m.quality(0) - 2.0 * (2f64.sqrt() - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn boundary_spec_validation() {
        assert!(BoundarySpec::new(vec![]).is_err());
        assert!(BoundarySpec::new(vec![(1.0, 1.0)]).is_err());
        assert!(BoundarySpec::new(vec![(0.0, 7.0)]).is_err());
        assert!(BoundarySpec::new(vec![(0.0, 1.0), (0.5, 2.0)]).is_err());
        // Overlap modulo 2pi.
        assert!(BoundarySpec::new(vec![(0.0, 1.0), (TAU + 0.5, TAU + 0.7)]).is_err());
        let s = BoundarySpec::new(vec![(0.0, 1.0), (1.0, 2.0)]).unwrap();
        assert!(s.contains(0.0) && s.contains(1.0) && !s.contains(2.0));
        assert!(s.contains(TAU + 0.5));
        assert!((s.measure() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn presets_have_expected_measure() {
        let m = |g: GammaPreset| g.spec().measure();
        assert!((m(GammaPreset::Large) - 7.0 * PI / 4.0).abs() < 1e-15);
        assert!((m(GammaPreset::Medium) - PI).abs() < 1e-15);
        assert!((m(GammaPreset::Small) - PI / 4.0).abs() < 1e-15);
        assert!((m(GammaPreset::Full) - TAU).abs() < 1e-15);
        for g in GammaPreset::ALL {
            assert_eq!(GammaPreset::from_name(g.name()), Some(g));
        }
    }

    #[test]
    fn canonical_angle_range() {
        assert_eq!(canonical_angle(-PI), PI);
        assert_eq!(canonical_angle(PI), PI);
        assert!((canonical_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-15);
    }
}
