//! Forward data synthesis: potentials, power densities, the true current
//! angle, and interpolation between meshes.

use std::collections::HashMap;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::fem::{
    element_gradient, project_to_nodes, solve_mixed, NodeValues, ScalarField, SolveReport,
    SolverOptions, VectorField,
};
use crate::mesh::{EdgeTag, Mesh, Point};

/// Default floor for `D = sqrt(det H)`.
pub const DEFAULT_EPS_D: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TestCaseConductivity {
    /// `1 + exp(-5|x|²)`.
    Case1,
    /// One plus three Gaussian bumps of different widths.
    Case2,
    Constant(f64),
}

impl TestCaseConductivity {
    pub fn eval(&self, p: Point) -> f64 {
        let [x, y] = p;
        match *self {
            TestCaseConductivity::Case1 => 1.0 + (-5.0 * (x * x + y * y)).exp(),
            TestCaseConductivity::Case2 => {
                1.0 + (-20.0 * ((x + 0.5).powi(2) + y * y)).exp()
                    + (-20.0 * (x * x + (y + 0.5).powi(2))).exp()
                    + (-50.0 * ((x - 0.5).powi(2) + (y - 0.5).powi(2))).exp()
            }
            TestCaseConductivity::Constant(c) => c,
        }
    }

    pub fn field(&self, mesh: &Mesh) -> ScalarField {
        ScalarField::from_fn(mesh, |p| self.eval(p))
    }

    pub fn name(&self) -> String {
        match self {
            TestCaseConductivity::Case1 => "1".into(),
            TestCaseConductivity::Case2 => "2".into(),
            TestCaseConductivity::Constant(c) => format!("const({c})"),
        }
    }
}

/// Boundary data `f1 = x`, `f2 = y` on the Dirichlet nodes.
pub fn coordinate_bcs(mesh: &Mesh) -> (NodeValues, NodeValues) {
    let nodes = mesh.dirichlet_nodes();
    let f1 = nodes.iter().map(|&i| (i, mesh.vertices()[i][0])).collect();
    let f2 = nodes.iter().map(|&i| (i, mesh.vertices()[i][1])).collect();
    (f1, f2)
}

/// Nodal power-density matrix `[[h11, h12], [h12, h22]]` with `D = sqrt(det)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerDensity {
    pub h11: ScalarField,
    pub h12: ScalarField,
    pub h22: ScalarField,
    /// `sqrt(max(det, eps_d²))`.
    pub d: ScalarField,
    pub eps_d: f64,
    /// Nodes where `D` was raised to `eps_d`.
    pub clamped_nodes: Vec<usize>,
}

impl PowerDensity {
    pub fn new(h11: ScalarField, h12: ScalarField, h22: ScalarField, eps_d: f64) -> Result<PowerDensity> {
        if !(eps_d > 0.0) {
            return Err(Error::Parameter(format!("eps_d must be positive, got {eps_d}")));
        }
        let n = h11.len();
        if h12.len() != n || h22.len() != n {
            return Err(Error::Contract("power density components differ in length".into()));
        }
        let mut clamped_nodes = Vec::new();
        let mut d = Vec::with_capacity(n);
        for i in 0..n {
            let det = h11[i] * h22[i] - h12[i] * h12[i];
            if det.sqrt() >= eps_d {
                d.push(det.sqrt());
            } else {
                clamped_nodes.push(i);
                d.push(eps_d);
            }
        }
        Ok(PowerDensity { h11, h12, h22, d: ScalarField::from_values(d), eps_d, clamped_nodes })
    }

    pub fn len(&self) -> usize {
        self.h11.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h11.is_empty()
    }

    /// Unclamped determinant at node `i`.
    pub fn det(&self, i: usize) -> f64 {
        self.h11[i] * self.h22[i] - self.h12[i] * self.h12[i]
    }

    pub fn matrix(&self, i: usize) -> [f64; 3] {
        [self.h11[i], self.h12[i], self.h22[i]]
    }

    /// Rebuild from per-node `[h11, h12, h22]` triples.
    pub fn from_triples(triples: &[[f64; 3]], eps_d: f64) -> Result<PowerDensity> {
        let col = |k: usize| ScalarField::from_values(triples.iter().map(|m| m[k]).collect());
        PowerDensity::new(col(0), col(1), col(2), eps_d)
    }

    pub fn scaled(&self, c: f64) -> Result<PowerDensity> {
        PowerDensity::new(self.h11.map(|v| c * v), self.h12.map(|v| c * v), self.h22.map(|v| c * v), self.eps_d)
    }

    pub fn transfer(&self, map: &TransferMap) -> Result<PowerDensity> {
        PowerDensity::new(map.apply(&self.h11)?, map.apply(&self.h12)?, map.apply(&self.h22)?, self.eps_d)
    }
}

/// `H_ij = sigma grad u_i · grad u_j` per element, with sigma at the centroid
/// taken as the vertex mean, then lumped onto the nodes.
pub fn power_density(
    mesh: &Mesh,
    sigma: &ScalarField,
    u1: &ScalarField,
    u2: &ScalarField,
    eps_d: f64,
) -> Result<PowerDensity> {
    for f in [sigma, u1, u2] {
        if f.len() != mesh.num_vertices() {
            return Err(Error::Contract("field does not match mesh".into()));
        }
    }
    let g1 = element_gradient(mesh, u1);
    let g2 = element_gradient(mesh, u2);
    let sc = sigma.centroid_values(mesh);
    let comp = |f: &dyn Fn(Point, Point) -> f64| -> Vec<f64> {
        (0..mesh.num_triangles()).map(|t| sc[t] * f(g1[t], g2[t])).collect()
    };
    let e11 = comp(&|a, _| a[0] * a[0] + a[1] * a[1]);
    let e12 = comp(&|a, b| a[0] * b[0] + a[1] * b[1]);
    let e22 = comp(&|_, b| b[0] * b[0] + b[1] * b[1]);
    PowerDensity::new(
        project_to_nodes(mesh, &e11)?,
        project_to_nodes(mesh, &e12)?,
        project_to_nodes(mesh, &e22)?,
        eps_d,
    )
}

/// Nodal angle field stored with its unit-vector components, so that it can
/// be interpolated without crossing the branch cut.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleField {
    pub cos: ScalarField,
    pub sin: ScalarField,
    /// `atan2(sin, cos)` in (-pi, pi].
    pub theta: ScalarField,
    /// Nodes where the angle is undefined (zero gradient in every adjacent element).
    pub flagged: Vec<usize>,
}

impl AngleField {
    fn from_components(c: Vec<f64>, s: Vec<f64>, mut flagged: Vec<usize>) -> AngleField {
        let mut theta = Vec::with_capacity(c.len());
        for i in 0..c.len() {
            if c[i] == 0.0 && s[i] == 0.0 {
                flagged.push(i);
                theta.push(0.0);
            } else {
                theta.push(canonical_atan2(s[i], c[i]));
            }
        }
        flagged.sort_unstable();
        flagged.dedup();
        AngleField {
            cos: ScalarField::from_values(c),
            sin: ScalarField::from_values(s),
            theta: ScalarField::from_values(theta),
            flagged,
        }
    }

    pub fn transfer(&self, map: &TransferMap) -> Result<AngleField> {
        let c = map.apply(&self.cos)?.into_values();
        let s = map.apply(&self.sin)?.into_values();
        Ok(AngleField::from_components(c, s, Vec::new()))
    }
}

fn canonical_atan2(y: f64, x: f64) -> f64 {
    let t = y.atan2(x);
    if t <= -PI {
        t + 2.0 * PI
    } else {
        t
    }
}

/// Angle of `grad u1`, averaged onto nodes as unit vectors.
pub fn true_theta(mesh: &Mesh, u1: &ScalarField) -> Result<AngleField> {
    let g = element_gradient(mesh, u1);
    let mut flagged = Vec::new();
    let (mut c, mut s) = (Vec::new(), Vec::new());
    for (t, v) in g.values().iter().enumerate() {
        let r = v[0].hypot(v[1]);
        // Round-off level relative to the vertex values: a constant element.
        let tri = mesh.triangles()[t];
        let scale = tri.iter().map(|&i| u1[i].abs()).fold(0.0, f64::max) / mesh.diameter(t);
        if r <= 16.0 * f64::EPSILON * scale {
            flagged.extend_from_slice(&mesh.triangles()[t]);
            c.push(0.0);
            s.push(0.0);
        } else {
            c.push(v[0] / r);
            s.push(v[1] / r);
        }
    }
    let c = project_to_nodes(mesh, &c)?.into_values();
    let s = project_to_nodes(mesh, &s)?.into_values();
    Ok(AngleField::from_components(c, s, flagged))
}

/// Interpolation weights from a source mesh onto the vertices of a target mesh.
#[derive(Debug, Clone)]
pub struct TransferMap {
    source_vertices: usize,
    stencil: Vec<([usize; 3], [f64; 3])>,
    /// Target vertices that fell outside the source mesh and were snapped.
    pub snapped: usize,
}

struct Grid {
    lo: Point,
    cell: f64,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<usize>>,
}

impl Grid {
    fn new(mesh: &Mesh) -> Grid {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in mesh.vertices() {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let target = (mesh.num_triangles() as f64 / 2.0).sqrt().max(1.0);
        let cell = ((hi[0] - lo[0]).max(hi[1] - lo[1]) / target).max(1e-12);
        let nx = ((hi[0] - lo[0]) / cell) as usize + 1;
        let ny = ((hi[1] - lo[1]) / cell) as usize + 1;
        let mut grid = Grid { lo, cell, nx, ny, buckets: vec![Vec::new(); nx * ny] };
        for t in 0..mesh.num_triangles() {
            let ps = mesh.triangle_points(t);
            let (mut a, mut b) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
            for p in ps {
                for k in 0..2 {
                    a[k] = a[k].min(p[k]);
                    b[k] = b[k].max(p[k]);
                }
            }
            let (i0, j0) = grid.cell_of(a);
            let (i1, j1) = grid.cell_of(b);
            for j in j0..=j1 {
                for i in i0..=i1 {
                    grid.buckets[j * nx + i].push(t);
                }
            }
        }
        grid
    }

    fn cell_of(&self, p: Point) -> (usize, usize) {
        let f = |v: f64, lo: f64, n: usize| (((v - lo) / self.cell).floor().max(0.0) as usize).min(n - 1);
        (f(p[0], self.lo[0], self.nx), f(p[1], self.lo[1], self.ny))
    }
}

fn barycentric(ps: [Point; 3], q: Point) -> [f64; 3] {
    let [a, b, c] = ps;
    let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
    let l1 = ((q[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (q[1] - a[1])) / det;
    let l2 = ((b[0] - a[0]) * (q[1] - a[1]) - (q[0] - a[0]) * (b[1] - a[1])) / det;
    [1.0 - l1 - l2, l1, l2]
}

/// Closest point of the triangle to `q`, as barycentric weights and distance².
fn closest_on_triangle(ps: [Point; 3], q: Point) -> ([f64; 3], f64) {
    let l = barycentric(ps, q);
    if l.iter().all(|&v| v >= 0.0) {
        return (l, 0.0);
    }
    let mut best = ([0.0; 3], f64::INFINITY);
    for k in 0..3 {
        let (a, b) = (ps[k], ps[(k + 1) % 3]);
        let d = [b[0] - a[0], b[1] - a[1]];
        let s = (((q[0] - a[0]) * d[0] + (q[1] - a[1]) * d[1]) / (d[0] * d[0] + d[1] * d[1])).clamp(0.0, 1.0);
        let p = [a[0] + s * d[0], a[1] + s * d[1]];
        let dist2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2);
        if dist2 < best.1 {
            let mut w = [0.0; 3];
            w[k] = 1.0 - s;
            w[(k + 1) % 3] = s;
            best = (w, dist2);
        }
    }
    best
}

impl TransferMap {
    pub fn new(from: &Mesh, to: &Mesh) -> TransferMap {
        let grid = Grid::new(from);
        let mut snapped = 0;
        let stencil = to
            .vertices()
            .iter()
            .map(|&q| {
                let (i, j) = grid.cell_of(q);
                for &t in &grid.buckets[j * grid.nx + i] {
                    let l = barycentric(from.triangle_points(t), q);
                    if l.iter().all(|&v| v >= -1e-12) {
                        return (from.triangles()[t], l);
                    }
                }
                snapped += 1;
                let mut best: Option<(usize, [f64; 3], f64)> = None;
                let mut radius = 1;
                while best.is_none() || radius <= 2 {
                    let (ilo, jlo) = (i.saturating_sub(radius), j.saturating_sub(radius));
                    let (ihi, jhi) = ((i + radius).min(grid.nx - 1), (j + radius).min(grid.ny - 1));
                    let mut cands: Vec<usize> = (jlo..=jhi)
                        .flat_map(|jj| (ilo..=ihi).map(move |ii| (ii, jj)))
                        .flat_map(|(ii, jj)| grid.buckets[jj * grid.nx + ii].iter().copied())
                        .collect();
                    cands.sort_unstable();
                    cands.dedup();
                    for t in cands {
                        let (w, d2) = closest_on_triangle(from.triangle_points(t), q);
                        if best.is_none_or(|b| d2 < b.2) {
                            best = Some((t, w, d2));
                        }
                    }
                    if radius > grid.nx.max(grid.ny) {
                        break;
                    }
                    radius += 1;
                }
                let (t, w, _) = best.expect("source mesh has triangles");
                (from.triangles()[t], w)
            })
            .collect();
        TransferMap { source_vertices: from.num_vertices(), stencil, snapped }
    }

    pub fn apply(&self, field: &ScalarField) -> Result<ScalarField> {
        if field.len() != self.source_vertices {
            return Err(Error::Contract(format!(
                "field has {} values, transfer source has {} vertices",
                field.len(),
                self.source_vertices
            )));
        }
        Ok(ScalarField::from_values(
            self.stencil
                .iter()
                .map(|(v, w)| w[0] * field[v[0]] + w[1] * field[v[1]] + w[2] * field[v[2]])
                .collect(),
        ))
    }
}

/// Barycentric interpolation of a P1 field onto the vertices of another mesh.
pub fn transfer(field: &ScalarField, from: &Mesh, to: &Mesh) -> Result<ScalarField> {
    TransferMap::new(from, to).apply(field)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetDiagnostics {
    /// Smallest unclamped `det H` over the nodes.
    pub min_det: f64,
    pub argmin: usize,
    /// `log(max(det H, eps_d²))`.
    pub log_det: ScalarField,
}

pub fn det_diagnostics(h: &PowerDensity) -> DetDiagnostics {
    let floor = h.eps_d * h.eps_d;
    let mut min_det = f64::INFINITY;
    let mut argmin = 0;
    let mut log_det = Vec::with_capacity(h.len());
    for i in 0..h.len() {
        let det = h.det(i);
        if det < min_det {
            min_det = det;
            argmin = i;
        }
        log_det.push(det.max(floor).ln());
    }
    DetDiagnostics { min_det, argmin, log_det: ScalarField::from_values(log_det) }
}

/// Largest `|grad u · n| / |grad u|` over the elements touching a no-flux edge.
pub fn neumann_normal_ratio(mesh: &Mesh, grad: &VectorField) -> f64 {
    let mut owner: HashMap<(usize, usize), usize> = HashMap::new();
    for (t, tri) in mesh.triangles().iter().enumerate() {
        for k in 0..3 {
            owner.insert((tri[k], tri[(k + 1) % 3]), t);
        }
    }
    mesh.boundary_edges()
        .iter()
        .filter(|e| e.tag == EdgeTag::Neumann)
        .filter_map(|e| {
            let g = grad[owner[&(e.nodes[0], e.nodes[1])]];
            let r = g[0].hypot(g[1]);
            (r > 0.0).then(|| (g[0] * e.normal[0] + g[1] * e.normal[1]).abs() / r)
        })
        .fold(0.0, f64::max)
}

/// Everything synthesized on the data mesh for one conductivity and arc.
#[derive(Debug, Clone)]
pub struct ForwardData {
    pub sigma: ScalarField,
    pub u1: ScalarField,
    pub u2: ScalarField,
    pub h: PowerDensity,
    pub theta: AngleField,
    pub reports: [SolveReport; 2],
}

/// Solve with coordinate boundary data on `mesh` (already tagged) and derive
/// the power density and the true angle field.
pub fn synthesize(
    mesh: &Mesh,
    sigma: &ScalarField,
    eps_d: f64,
    opts: &SolverOptions,
) -> Result<ForwardData> {
    let (f1, f2) = coordinate_bcs(mesh);
    let (u1, r1) = solve_mixed(mesh, sigma, &f1, opts)?;
    let (u2, r2) = solve_mixed(mesh, sigma, &f2, opts)?;
    let h = power_density(mesh, sigma, &u1, &u2, eps_d)?;
    let theta = true_theta(mesh, &u1)?;
    Ok(ForwardData { sigma: sigma.clone(), u1, u2, h, theta, reports: [r1, r2] })
}
