//! P1 finite elements on a [`Mesh`]: assembly, constrained solves, gradients,
//! nodal projection and L² norms.

pub mod sparse;

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::mesh::{Mesh, Point};

pub use sparse::{CsrMatrix, SolveReport, SolverKind, SolverOptions};

/// Prescribed values keyed by vertex index.
pub type NodeValues = BTreeMap<usize, f64>;

/// One finite value per vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField(Vec<f64>);

/// One finite 2-vector per triangle.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField(Vec<Point>);

impl ScalarField {
    pub fn new(mesh: &Mesh, values: Vec<f64>) -> Result<ScalarField> {
        if values.len() != mesh.num_vertices() {
            return Err(Error::Contract(format!(
                "scalar field has {} values for {} vertices",
                values.len(),
                mesh.num_vertices()
            )));
        }
        let bad: Vec<usize> = (0..values.len()).filter(|&i| !values[i].is_finite()).collect();
        if !bad.is_empty() {
            return Err(Error::domain("non-finite nodal value", bad));
        }
        Ok(ScalarField(values))
    }

    /// Wrap values without a mesh check; callers guarantee finiteness.
    pub(crate) fn from_values(values: Vec<f64>) -> ScalarField {
        ScalarField(values)
    }

    pub fn constant(mesh: &Mesh, c: f64) -> ScalarField {
        ScalarField(vec![c; mesh.num_vertices()])
    }

    pub fn from_fn(mesh: &Mesh, f: impl Fn(Point) -> f64) -> ScalarField {
        ScalarField(mesh.vertices().iter().map(|&p| f(p)).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        ScalarField(self.0.iter().map(|&v| f(v)).collect())
    }

    /// Mean of the three vertex values of each triangle.
    pub fn centroid_values(&self, mesh: &Mesh) -> Vec<f64> {
        mesh.triangles().iter().map(|t| (self.0[t[0]] + self.0[t[1]] + self.0[t[2]]) / 3.0).collect()
    }

    pub(crate) fn check_mesh(&self, mesh: &Mesh) -> Result<()> {
        if self.0.len() != mesh.num_vertices() {
            return Err(Error::Contract(format!(
                "scalar field has {} values, mesh has {} vertices",
                self.0.len(),
                mesh.num_vertices()
            )));
        }
        Ok(())
    }
}

impl std::ops::Index<usize> for ScalarField {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl VectorField {
    pub fn new(mesh: &Mesh, values: Vec<Point>) -> Result<VectorField> {
        if values.len() != mesh.num_triangles() {
            return Err(Error::Contract(format!(
                "vector field has {} values for {} triangles",
                values.len(),
                mesh.num_triangles()
            )));
        }
        if let Some(t) = values.iter().position(|v| !(v[0].is_finite() && v[1].is_finite())) {
            return Err(Error::Contract(format!("non-finite vector on triangle {t}")));
        }
        Ok(VectorField(values))
    }

    pub fn constant(mesh: &Mesh, v: Point) -> VectorField {
        VectorField(vec![v; mesh.num_triangles()])
    }

    pub fn zeros(mesh: &Mesh) -> VectorField {
        Self::constant(mesh, [0.0, 0.0])
    }

    pub fn values(&self) -> &[Point] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub(crate) fn check_mesh(&self, mesh: &Mesh) -> Result<()> {
        if self.0.len() != mesh.num_triangles() {
            return Err(Error::Contract(format!(
                "vector field has {} values, mesh has {} triangles",
                self.0.len(),
                mesh.num_triangles()
            )));
        }
        Ok(())
    }
}

impl std::ops::Index<usize> for VectorField {
    type Output = Point;
    fn index(&self, t: usize) -> &Point {
        &self.0[t]
    }
}

/// Symmetric system with a set of constrained unknowns.
#[derive(Debug, Clone)]
pub struct SparseSpdSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    pub constraints: NodeValues,
}

impl SparseSpdSystem {
    /// Eliminate the constrained unknowns symmetrically and solve for the rest.
    pub fn solve(&self, opts: &SolverOptions) -> Result<(Vec<f64>, SolveReport)> {
        let n = self.matrix.n();
        if self.constraints.is_empty() {
            return Err(Error::SingularSystem("no constrained nodes; the operator has a null space".into()));
        }
        if let Some((&i, _)) = self.constraints.iter().find(|(&i, _)| i >= n) {
            return Err(Error::Contract(format!("constraint on missing node {i}")));
        }
        let mut map = vec![None; n];
        let mut free = Vec::with_capacity(n);
        for (i, slot) in map.iter_mut().enumerate() {
            if !self.constraints.contains_key(&i) {
                *slot = Some(free.len());
                free.push(i);
            }
        }
        let mut u = vec![0.0; n];
        for (&i, &v) in &self.constraints {
            u[i] = v;
        }
        if free.is_empty() {
            let report = SolveReport { iterations: 0, relative_residual: 0.0, direct: true };
            return Ok((u, report));
        }
        let reduced = self.matrix.submatrix(&map, free.len());
        let b: Vec<f64> = free
            .iter()
            .map(|&i| {
                let known: f64 = self
                    .matrix
                    .row(i)
                    .filter(|(j, _)| map[*j].is_none())
                    .map(|(j, a)| a * u[j])
                    .sum();
                self.rhs[i] - known
            })
            .collect();
        let (x, report) = sparse::solve_spd(&reduced, &b, opts)?;
        for (k, &i) in free.iter().enumerate() {
            u[i] = x[k];
        }
        Ok((u, report))
    }

    /// Max-norm residual of the full system over unconstrained rows.
    pub fn free_residual(&self, u: &[f64]) -> f64 {
        let mut au = vec![0.0; u.len()];
        self.matrix.matvec(u, &mut au);
        (0..u.len())
            .filter(|i| !self.constraints.contains_key(i))
            .map(|i| (self.rhs[i] - au[i]).abs())
            .fold(0.0, f64::max)
    }
}

fn stiffness_pattern(mesh: &Mesh) -> CsrMatrix {
    let mut pattern: Vec<Vec<usize>> = vec![Vec::new(); mesh.num_vertices()];
    for t in mesh.triangles() {
        for &a in t {
            pattern[a].extend_from_slice(t);
        }
    }
    for row in &mut pattern {
        row.sort_unstable();
        row.dedup();
    }
    CsrMatrix::with_pattern(pattern)
}

/// Stiffness matrix of `-div(sigma grad u)` with zero right-hand side and no
/// constraints. sigma is integrated with vertex quadrature, which for constant
/// P1 gradients means the vertex mean times the element stiffness.
pub fn assemble_conductivity(mesh: &Mesh, sigma: &ScalarField) -> Result<SparseSpdSystem> {
    sigma.check_mesh(mesh)?;
    let bad: Vec<usize> = (0..sigma.len()).filter(|&i| !(sigma[i] > 0.0)).collect();
    if !bad.is_empty() {
        return Err(Error::domain("conductivity must be positive", bad));
    }
    let mut matrix = stiffness_pattern(mesh);
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let (g, area) = mesh.basis_gradients(t);
        let s = (sigma[tri[0]] + sigma[tri[1]] + sigma[tri[2]]) / 3.0;
        for a in 0..3 {
            for b in 0..3 {
                let k = s * area * (g[a][0] * g[b][0] + g[a][1] * g[b][1]);
                matrix.add(tri[a], tri[b], k);
            }
        }
    }
    Ok(SparseSpdSystem { matrix, rhs: vec![0.0; mesh.num_vertices()], constraints: NodeValues::new() })
}

/// Solve `-div(sigma grad u) = 0` with `u = f` on the Dirichlet arc and no flux
/// elsewhere. `dirichlet` must give a value for exactly the Dirichlet nodes.
pub fn solve_mixed(
    mesh: &Mesh,
    sigma: &ScalarField,
    dirichlet: &NodeValues,
    opts: &SolverOptions,
) -> Result<(ScalarField, SolveReport)> {
    let nodes = mesh.dirichlet_nodes();
    if nodes.is_empty() || dirichlet.is_empty() {
        return Err(Error::SingularSystem("no Dirichlet nodes on the boundary".into()));
    }
    if let Some(&i) = nodes.iter().find(|i| !dirichlet.contains_key(i)) {
        return Err(Error::Contract(format!("no Dirichlet value for node {i}")));
    }
    if dirichlet.len() != nodes.len() {
        let extra = dirichlet.keys().find(|i| nodes.binary_search(i).is_err()).copied();
        return Err(Error::Contract(format!("node {extra:?} is not a Dirichlet node")));
    }
    let mut system = assemble_conductivity(mesh, sigma)?;
    system.constraints = dirichlet.clone();
    let (u, report) = system.solve(opts)?;
    Ok((ScalarField::new(mesh, u)?, report))
}

/// Solve `∫ grad w · grad v = ∫ F · grad v` for interior test functions `v`,
/// with `w` fixed at every boundary node. This is `Δw = div F` without ever
/// differentiating `F`.
pub fn solve_poisson_weak_div(
    mesh: &Mesh,
    f: &VectorField,
    boundary_values: &NodeValues,
    opts: &SolverOptions,
) -> Result<(ScalarField, SolveReport)> {
    f.check_mesh(mesh)?;
    for i in mesh.boundary_nodes() {
        if !boundary_values.contains_key(&i) {
            return Err(Error::Contract(format!("missing boundary value for node {i}")));
        }
    }
    let mut system = assemble_conductivity(mesh, &ScalarField::constant(mesh, 1.0))?;
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let (g, area) = mesh.basis_gradients(t);
        let ft = f[t];
        for a in 0..3 {
            system.rhs[tri[a]] += area * (ft[0] * g[a][0] + ft[1] * g[a][1]);
        }
    }
    system.constraints = boundary_values.clone();
    let (w, report) = system.solve(opts)?;
    Ok((ScalarField::new(mesh, w)?, report))
}

/// Exact gradient of the P1 interpolant on each triangle.
pub fn element_gradient(mesh: &Mesh, field: &ScalarField) -> VectorField {
    assert_eq!(field.len(), mesh.num_vertices(), "field does not match mesh");
    let grads = mesh
        .triangles()
        .iter()
        .enumerate()
        .map(|(t, tri)| {
            let (g, _) = mesh.basis_gradients(t);
            let mut v = [0.0; 2];
            for a in 0..3 {
                v[0] += field[tri[a]] * g[a][0];
                v[1] += field[tri[a]] * g[a][1];
            }
            v
        })
        .collect();
    VectorField(grads)
}

/// Area-weighted average of per-element values over each vertex star.
pub fn project_to_nodes(mesh: &Mesh, element_values: &[f64]) -> Result<ScalarField> {
    if element_values.len() != mesh.num_triangles() {
        return Err(Error::Contract(format!(
            "{} element values for {} triangles",
            element_values.len(),
            mesh.num_triangles()
        )));
    }
    let n = mesh.num_vertices();
    let mut num = vec![0.0; n];
    let mut den = vec![0.0; n];
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let a = mesh.area(t);
        for &v in tri {
            num[v] += a * element_values[t];
            den[v] += a;
        }
    }
    let values = num.iter().zip(&den).map(|(n, d)| n / d).collect();
    ScalarField::new(mesh, values)
}

/// Componentwise [`project_to_nodes`] of an element vector field.
pub fn project_vector_to_nodes(mesh: &Mesh, field: &VectorField) -> Result<[ScalarField; 2]> {
    let x: Vec<f64> = field.values().iter().map(|v| v[0]).collect();
    let y: Vec<f64> = field.values().iter().map(|v| v[1]).collect();
    Ok([project_to_nodes(mesh, &x)?, project_to_nodes(mesh, &y)?])
}

/// `∫ f²` with the consistent P1 mass matrix.
pub fn l2_norm_squared(mesh: &Mesh, f: &[f64]) -> f64 {
    mesh.triangles()
        .iter()
        .enumerate()
        .map(|(t, &[a, b, c])| {
            let (fa, fb, fc) = (f[a], f[b], f[c]);
            mesh.area(t) / 6.0 * (fa * fa + fb * fb + fc * fc + fa * fb + fb * fc + fc * fa)
        })
        .sum()
}

pub fn l2_norm(mesh: &Mesh, f: &ScalarField) -> f64 {
    l2_norm_squared(mesh, f.values()).sqrt()
}

/// `‖a − b‖ / ‖b‖` in L²(Ω).
pub fn l2_relative_error(mesh: &Mesh, a: &ScalarField, b: &ScalarField) -> Result<f64> {
    a.check_mesh(mesh)?;
    b.check_mesh(mesh)?;
    let nb = l2_norm(mesh, b);
    if nb == 0.0 {
        return Err(Error::domain("reference field has zero L2 norm", vec![]));
    }
    let d: Vec<f64> = a.values().iter().zip(b.values()).map(|(x, y)| x - y).collect();
    Ok(l2_norm_squared(mesh, &d).sqrt() / nb)
}

/// L² norm of a piecewise-constant vector field.
pub fn l2_norm_vector(mesh: &Mesh, v: &VectorField) -> f64 {
    v.values()
        .iter()
        .enumerate()
        .map(|(t, g)| mesh.area(t) * (g[0] * g[0] + g[1] * g[1]))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_disk_mesh, ring_mesh, GammaPreset};

    fn boundary_map(mesh: &Mesh, f: impl Fn(Point) -> f64) -> NodeValues {
        mesh.boundary_nodes().into_iter().map(|i| (i, f(mesh.vertices()[i]))).collect()
    }

    fn dirichlet_map(mesh: &Mesh, f: impl Fn(Point) -> f64) -> NodeValues {
        mesh.dirichlet_nodes().into_iter().map(|i| (i, f(mesh.vertices()[i]))).collect()
    }

    #[test]
    fn reference_element_stiffness() {
        // The ring mesh has no right-angled triangle, so check the element
        // formula directly on the unit reference triangle.
        let g = [[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]];
        let area = 0.5;
        let expected = [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]];
        for a in 0..3 {
            for b in 0..3 {
                let k: f64 = area * (g[a][0] * g[b][0] + g[a][1] * g[b][1]);
                assert_eq!(k, expected[a][b]);
            }
        }
    }

    #[test]
    fn stiffness_scales_and_kills_constants() {
        let m = ring_mesh(6);
        let k1 = assemble_conductivity(&m, &ScalarField::constant(&m, 1.0)).unwrap().matrix;
        let k3 = assemble_conductivity(&m, &ScalarField::constant(&m, 3.0)).unwrap().matrix;
        assert!(k1.is_symmetric());
        for i in 0..m.num_vertices() {
            for (j, v) in k1.row(i) {
                assert!((k3.get(i, j) - 3.0 * v).abs() <= 1e-14 * v.abs().max(1.0));
            }
        }
        let sigma = ScalarField::from_fn(&m, |p| 1.0 + (-5.0 * (p[0] * p[0] + p[1] * p[1])).exp());
        let k = assemble_conductivity(&m, &sigma).unwrap().matrix;
        let mut out = vec![0.0; m.num_vertices()];
        k.matvec(&vec![1.0; m.num_vertices()], &mut out);
        assert!(out.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn non_positive_sigma_names_node() {
        let m = ring_mesh(3);
        let mut s = vec![1.0; m.num_vertices()];
        s[5] = 0.0;
        let err = assemble_conductivity(&m, &ScalarField::new(&m, s).unwrap()).unwrap_err();
        match err {
            Error::Domain { nodes, .. } => assert_eq!(nodes, vec![5]),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn linear_solution_is_exact() {
        let m = build_disk_mesh(0.1).unwrap().tag_boundary(&GammaPreset::Full.spec());
        for kind in [SolverKind::Direct, SolverKind::Pcg] {
            let opts = SolverOptions { kind, ..Default::default() };
            let (u, _) = solve_mixed(&m, &ScalarField::constant(&m, 1.0), &dirichlet_map(&m, |p| p[0]), &opts).unwrap();
            for (i, p) in m.vertices().iter().enumerate() {
                assert!((u[i] - p[0]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn no_dirichlet_nodes_is_singular() {
        let m = ring_mesh(4);
        let r = solve_mixed(&m, &ScalarField::constant(&m, 1.0), &NodeValues::new(), &SolverOptions::default());
        assert!(matches!(r, Err(Error::SingularSystem(_))));
    }

    #[test]
    fn max_principle_on_medium_arc() {
        let m = build_disk_mesh(0.1).unwrap().tag_boundary(&GammaPreset::Medium.spec());
        let bc = dirichlet_map(&m, |p| p[0]);
        let (u, _) = solve_mixed(&m, &ScalarField::constant(&m, 1.0), &bc, &SolverOptions::default()).unwrap();
        let lo = bc.values().copied().fold(f64::INFINITY, f64::min);
        let hi = bc.values().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(u.values().iter().all(|&v| v >= lo - 1e-9 && v <= hi + 1e-9));
    }

    #[test]
    fn self_convergence_case1_large() {
        let sigma = |p: Point| 1.0 + (-5.0 * (p[0] * p[0] + p[1] * p[1])).exp();
        let coarse = build_disk_mesh(0.08).unwrap().tag_boundary(&GammaPreset::Large.spec());
        let fine = coarse.refine();
        let opts = SolverOptions::default();
        let (uc, _) = solve_mixed(&coarse, &ScalarField::from_fn(&coarse, sigma), &dirichlet_map(&coarse, |p| p[0]), &opts).unwrap();
        let (uf, _) = solve_mixed(&fine, &ScalarField::from_fn(&fine, sigma), &dirichlet_map(&fine, |p| p[0]), &opts).unwrap();
        // Refinement keeps the coarse vertices at their indices.
        let uf_on_coarse = ScalarField::new(&coarse, uf.values()[..coarse.num_vertices()].to_vec()).unwrap();
        assert!(l2_relative_error(&coarse, &uc, &uf_on_coarse).unwrap() <= 0.02);
    }

    #[test]
    fn poisson_constant_and_linear() {
        let m = ring_mesh(8);
        let opts = SolverOptions::default();
        let (w, _) = solve_poisson_weak_div(&m, &VectorField::zeros(&m), &boundary_map(&m, |_| 2.5), &opts).unwrap();
        assert!(w.values().iter().all(|v| (v - 2.5).abs() < 1e-12));
        let (w, _) = solve_poisson_weak_div(&m, &VectorField::constant(&m, [1.0, 0.0]), &boundary_map(&m, |p| p[0]), &opts).unwrap();
        for (i, p) in m.vertices().iter().enumerate() {
            assert!((w[i] - p[0]).abs() < 1e-10);
        }
    }

    #[test]
    fn poisson_reproduces_p1_product() {
        let m = ring_mesh(10);
        let xy = ScalarField::from_fn(&m, |p| p[0] * p[1]);
        let f = element_gradient(&m, &xy);
        let (w, _) = solve_poisson_weak_div(&m, &f, &boundary_map(&m, |p| p[0] * p[1]), &SolverOptions::default()).unwrap();
        for i in 0..m.num_vertices() {
            assert!((w[i] - xy[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn poisson_requires_every_boundary_node() {
        let m = ring_mesh(3);
        let mut bc = boundary_map(&m, |_| 0.0);
        let first = *bc.keys().next().unwrap();
        bc.remove(&first);
        let r = solve_poisson_weak_div(&m, &VectorField::zeros(&m), &bc, &SolverOptions::default());
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    #[test]
    fn gradients_of_linears() {
        let m = ring_mesh(4);
        for (f, g) in [
            (ScalarField::from_fn(&m, |p| p[0]), [1.0, 0.0]),
            (ScalarField::constant(&m, 7.0), [0.0, 0.0]),
            (ScalarField::from_fn(&m, |p| p[0] + 2.0 * p[1]), [1.0, 2.0]),
        ] {
            for v in element_gradient(&m, &f).values() {
                assert!((v[0] - g[0]).abs() < 1e-12 && (v[1] - g[1]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn projection_examples() {
        let m = ring_mesh(12);
        let c = project_to_nodes(&m, &vec![4.0; m.num_triangles()]).unwrap();
        assert!(c.values().iter().all(|v| (v - 4.0).abs() < 1e-14));
        let cx: Vec<f64> = (0..m.num_triangles()).map(|t| m.centroid(t)[0]).collect();
        let px = project_to_nodes(&m, &cx).unwrap();
        let h = m.max_diameter();
        for (i, p) in m.vertices().iter().enumerate() {
            assert!((px[i] - p[0]).abs() <= h);
        }
    }

    #[test]
    fn l2_examples() {
        let m = ring_mesh(6);
        let b = ScalarField::from_fn(&m, |p| 1.0 + p[0]);
        assert_eq!(l2_relative_error(&m, &b, &b).unwrap(), 0.0);
        let a = b.map(|v| 2.0 * v);
        assert!((l2_relative_error(&m, &a, &b).unwrap() - 1.0).abs() < 1e-14);
        let zero = ScalarField::constant(&m, 0.0);
        assert!(matches!(l2_relative_error(&m, &a, &zero), Err(Error::Domain { .. })));
    }

    #[test]
    fn l2_of_hat_matches_quadrature() {
        // ∫ φ_i² over its star is Σ area/6, since a hat is 1 at one vertex only.
        let m = ring_mesh(5);
        let i = 20;
        let mut hat = vec![0.0; m.num_vertices()];
        hat[i] = 1.0;
        let star: f64 = (0..m.num_triangles())
            .filter(|&t| m.triangles()[t].contains(&i))
            .map(|t| m.area(t) / 6.0)
            .sum();
        assert!((l2_norm_squared(&m, &hat) - star).abs() < 1e-12);

        // ‖1 + φ_i‖² - ‖1‖² = 2∫φ_i + ∫φ_i², with ∫φ_i = Σ area/3.
        let one = vec![1.0; m.num_vertices()];
        let plus: Vec<f64> = one.iter().zip(&hat).map(|(a, b)| a + b).collect();
        let int_hat: f64 = (0..m.num_triangles())
            .filter(|&t| m.triangles()[t].contains(&i))
            .map(|t| m.area(t) / 3.0)
            .sum();
        let lhs = l2_norm_squared(&m, &plus) - l2_norm_squared(&m, &one);
        assert!((lhs - (2.0 * int_hat + star)).abs() < 1e-12);
    }

    #[test]
    fn scalar_field_rejects_nan_and_wrong_length() {
        let m = ring_mesh(2);
        assert!(ScalarField::new(&m, vec![1.0; 3]).is_err());
        let mut v = vec![1.0; m.num_vertices()];
        v[2] = f64::NAN;
        assert!(matches!(ScalarField::new(&m, v), Err(Error::Domain { .. })));
    }
}
