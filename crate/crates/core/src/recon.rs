//! Two-step reconstruction from power densities: the current angle θ from
//! `Δθ = div F`, then `log σ` from `Δ log σ = div G`.

use std::f64::consts::{PI, TAU};

use crate::error::{Error, Result};
use crate::fem::{
    element_gradient, l2_norm_vector, l2_relative_error, solve_poisson_weak_div, NodeValues,
    ScalarField, SolveReport, SolverOptions, VectorField,
};
use crate::forward::{det_diagnostics, PowerDensity};
use crate::mesh::{canonical_angle, Mesh, Point};

/// Rotation by +90 degrees.
fn j(v: Point) -> Point {
    [-v[1], v[0]]
}

/// Reflection `diag(1, -1)`.
fn u(v: Point) -> Point {
    [v[0], -v[1]]
}

/// Vector fields derived from `H` that drive both Poisson solves. `V12` is
/// identically zero for the Gram-Schmidt frame and is not stored.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferFields {
    pub d: ScalarField,
    pub v11: VectorField,
    pub v21: VectorField,
    pub v22: VectorField,
    /// `(-V21 - J grad log D) / 2`, which equals `grad θ` for exact data.
    pub f: VectorField,
}

/// Build `V11`, `V21`, `V22` and `F` from nodal `H`. Every rational or
/// logarithmic expression is formed nodally and differentiated once per element.
pub fn vector_fields(mesh: &Mesh, h: &PowerDensity) -> Result<TransferFields> {
    if h.len() != mesh.num_vertices() {
        return Err(Error::Contract("power density does not match mesh".into()));
    }
    let bad: Vec<usize> = (0..h.len()).filter(|&i| !(h.h11[i] > 0.0 && h.d[i] > 0.0)).collect();
    if !bad.is_empty() {
        return Err(Error::domain("H11 and D must be positive", bad));
    }
    let n = h.len();
    let ln_h11: Vec<f64> = (0..n).map(|i| h.h11[i].ln()).collect();
    let ratio: Vec<f64> = (0..n).map(|i| h.h12[i] / h.h11[i]).collect();
    let ln_d: Vec<f64> = (0..n).map(|i| h.d[i].ln()).collect();
    let v22_pot: Vec<f64> = (0..n).map(|i| 0.5 * ln_h11[i] - ln_d[i]).collect();

    let grad = |v: Vec<f64>| element_gradient(mesh, &ScalarField::from_values(v));
    let g_ln_h11 = grad(ln_h11);
    let g_ratio = grad(ratio);
    let g_ln_d = grad(ln_d);
    let v22 = grad(v22_pot);
    let h11_c = h.h11.centroid_values(mesh);
    let d_c = h.d.centroid_values(mesh);

    let v11: Vec<Point> = g_ln_h11.values().iter().map(|g| [-0.5 * g[0], -0.5 * g[1]]).collect();
    let v21: Vec<Point> = (0..mesh.num_triangles())
        .map(|t| {
            let s = -h11_c[t] / d_c[t];
            [s * g_ratio[t][0], s * g_ratio[t][1]]
        })
        .collect();
    let f: Vec<Point> = (0..mesh.num_triangles())
        .map(|t| {
            let jg = j(g_ln_d[t]);
            [0.5 * (-v21[t][0] - jg[0]), 0.5 * (-v21[t][1] - jg[1])]
        })
        .collect();
    Ok(TransferFields {
        d: h.d.clone(),
        v11: VectorField::new(mesh, v11)?,
        v21: VectorField::new(mesh, v21)?,
        v22,
        f: VectorField::new(mesh, f)?,
    })
}

/// How boundary angles are made continuous before the θ solve.
#[derive(Debug, Clone, PartialEq)]
pub enum UnwrapMode {
    /// Walk the boundary loop and remove every jump larger than pi.
    Auto,
    /// Add 2pi on the nodes whose polar angle lies in one of the closed intervals.
    Interval(Vec<(f64, f64)>),
}

/// Continuous boundary data for θ from raw angles in (-pi, pi].
pub fn boundary_theta(mesh: &Mesh, raw: &NodeValues, mode: &UnwrapMode) -> Result<NodeValues> {
    let nodes = mesh.boundary_nodes();
    if let Some(i) = nodes.iter().find(|i| !raw.contains_key(i)) {
        return Err(Error::Contract(format!("missing raw boundary angle at node {i}")));
    }
    match mode {
        UnwrapMode::Auto => {
            let mut out = NodeValues::new();
            let mut offset = 0.0;
            let mut prev = raw[&nodes[0]];
            out.insert(nodes[0], prev);
            for k in 1..=nodes.len() {
                let i = nodes[k % nodes.len()];
                let cur = raw[&i];
                let jump = cur - prev;
                if jump.abs() == PI {
                    return Err(Error::domain(
                        "boundary angle jumps by exactly pi; direction is ambiguous, use interval unwrapping",
                        vec![i],
                    ));
                }
                if jump > PI {
                    offset -= TAU;
                } else if jump < -PI {
                    offset += TAU;
                }
                if k < nodes.len() {
                    out.insert(i, cur + offset);
                } else if offset != 0.0 {
                    return Err(Error::domain(
                        format!(
                            "boundary angle winds {} times around the loop; no continuous branch exists",
                            (offset / TAU).round()
                        ),
                        vec![i],
                    ));
                }
                prev = cur;
            }
            Ok(out)
        }
        UnwrapMode::Interval(intervals) => Ok(nodes
            .iter()
            .map(|&i| {
                let p = mesh.vertices()[i];
                let t = canonical_angle(p[1].atan2(p[0]));
                let inside = intervals.iter().any(|&(a, b)| (t - a).rem_euclid(TAU) <= b - a);
                (i, raw[&i] + if inside { TAU } else { 0.0 })
            })
            .collect()),
    }
}

/// Largest jump between consecutive boundary values along the loop.
pub fn max_boundary_jump(mesh: &Mesh, values: &NodeValues) -> f64 {
    let nodes = mesh.boundary_nodes();
    (0..nodes.len())
        .map(|k| (values[&nodes[(k + 1) % nodes.len()]] - values[&nodes[k]]).abs())
        .fold(0.0, f64::max)
}

pub fn reconstruct_theta(
    mesh: &Mesh,
    fields: &TransferFields,
    boundary: &NodeValues,
    opts: &SolverOptions,
) -> Result<(ScalarField, SolveReport)> {
    solve_poisson_weak_div(mesh, &fields.f, boundary, opts)
}

/// `G = cos 2θ K + sin 2θ J K` with `K = U(V11 - V22) + J U V21` and θ taken
/// at element centroids.
pub fn sigma_rhs(mesh: &Mesh, theta: &ScalarField, fields: &TransferFields) -> Result<VectorField> {
    theta.check_mesh(mesh)?;
    fields.v11.check_mesh(mesh)?;
    let theta_c = theta.centroid_values(mesh);
    let g = (0..mesh.num_triangles())
        .map(|t| {
            let (a, b, c) = (fields.v11[t], fields.v22[t], fields.v21[t]);
            let p = u([a[0] - b[0], a[1] - b[1]]);
            let q = j(u(c));
            let k = [p[0] + q[0], p[1] + q[1]];
            let jk = j(k);
            let (s, c) = (2.0 * theta_c[t]).sin_cos();
            [c * k[0] + s * jk[0], c * k[1] + s * jk[1]]
        })
        .collect();
    VectorField::new(mesh, g)
}

/// Solve for `log σ` with Dirichlet data `log(sigma_boundary)` and exponentiate.
pub fn reconstruct_sigma(
    mesh: &Mesh,
    g: &VectorField,
    sigma_boundary: &NodeValues,
    opts: &SolverOptions,
) -> Result<(ScalarField, SolveReport)> {
    let bad: Vec<usize> = sigma_boundary.iter().filter(|(_, &v)| !(v > 0.0)).map(|(&i, _)| i).collect();
    if !bad.is_empty() {
        return Err(Error::domain("boundary conductivity must be positive", bad));
    }
    let logs: NodeValues = sigma_boundary.iter().map(|(&i, &v)| (i, v.ln())).collect();
    let (w, report) = solve_poisson_weak_div(mesh, g, &logs, opts)?;
    Ok((w.map(f64::exp), report))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconDiagnostics {
    /// Smallest `det H` of the data fed to the reconstruction.
    pub min_det: f64,
    /// Nodes where `D` hit its floor.
    pub clamped_d: usize,
    pub theta_solve: SolveReport,
    pub sigma_solve: SolveReport,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReconMetrics {
    pub err_cos2theta: f64,
    pub err_sin2theta: f64,
    /// `‖e^{2iθ} - e^{2iθ_true}‖ / ‖e^{2iθ_true}‖`.
    pub err_angle_pair: f64,
    pub err_sigma: f64,
}

#[derive(Debug, Clone)]
pub struct ReconResult {
    pub theta: ScalarField,
    pub sigma: ScalarField,
    pub fields: TransferFields,
    pub diagnostics: ReconDiagnostics,
    pub metrics: Option<ReconMetrics>,
}

/// Ground truth used to score a reconstruction.
#[derive(Debug, Clone, Copy)]
pub struct Truth<'a> {
    pub theta: &'a ScalarField,
    pub sigma: &'a ScalarField,
}

/// Relative L² errors of `cos 2θ`, `sin 2θ` and their pair. These are blind
/// to 2pi branch shifts of either angle.
pub fn angle_errors(mesh: &Mesh, theta: &ScalarField, truth: &ScalarField) -> Result<(f64, f64, f64)> {
    let c = |f: &ScalarField| f.map(|t| (2.0 * t).cos());
    let s = |f: &ScalarField| f.map(|t| (2.0 * t).sin());
    let e_cos = l2_relative_error(mesh, &c(theta), &c(truth))?;
    let e_sin = l2_relative_error(mesh, &s(theta), &s(truth))?;
    let dc: Vec<f64> = c(theta).values().iter().zip(c(truth).values()).map(|(a, b)| a - b).collect();
    let ds: Vec<f64> = s(theta).values().iter().zip(s(truth).values()).map(|(a, b)| a - b).collect();
    let num = crate::fem::l2_norm_squared(mesh, &dc) + crate::fem::l2_norm_squared(mesh, &ds);
    let den = crate::fem::l2_norm_squared(mesh, c(truth).values())
        + crate::fem::l2_norm_squared(mesh, s(truth).values());
    Ok((e_cos, e_sin, (num / den).sqrt()))
}

/// Vector fields, θ solve, then σ solve. Low determinants never abort the
/// run; they show up in the diagnostics.
pub fn reconstruct(
    mesh: &Mesh,
    h: &PowerDensity,
    theta_boundary: &NodeValues,
    sigma_boundary: &NodeValues,
    truth: Option<Truth<'_>>,
    opts: &SolverOptions,
) -> Result<ReconResult> {
    let fields = vector_fields(mesh, h)?;
    let (theta, theta_solve) = reconstruct_theta(mesh, &fields, theta_boundary, opts)?;
    let g = sigma_rhs(mesh, &theta, &fields)?;
    let (sigma, sigma_solve) = reconstruct_sigma(mesh, &g, sigma_boundary, opts)?;
    let metrics = match truth {
        Some(t) => {
            let (err_cos2theta, err_sin2theta, err_angle_pair) = angle_errors(mesh, &theta, t.theta)?;
            let err_sigma = l2_relative_error(mesh, &sigma, t.sigma)?;
            Some(ReconMetrics { err_cos2theta, err_sin2theta, err_angle_pair, err_sigma })
        }
        None => None,
    };
    let diagnostics = ReconDiagnostics {
        min_det: det_diagnostics(h).min_det,
        clamped_d: h.clamped_nodes.len(),
        theta_solve,
        sigma_solve,
    };
    Ok(ReconResult { theta, sigma, fields, diagnostics, metrics })
}

/// `‖grad θ - F‖ / ‖grad θ‖` over the triangles whose centroid lies within
/// `radius` of the origin (all triangles when `None`). Vertex angles are
/// unwrapped per triangle before differentiating.
pub fn angle_gradient_residual(
    mesh: &Mesh,
    theta: &ScalarField,
    f: &VectorField,
    radius: Option<f64>,
) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (t, tri) in mesh.triangles().iter().enumerate() {
        if let Some(r) = radius {
            let c = mesh.centroid(t);
            if c[0].hypot(c[1]) >= r {
                continue;
            }
        }
        let base = theta[tri[0]];
        let (g, area) = mesh.basis_gradients(t);
        let mut grad = [0.0; 2];
        for a in 0..3 {
            let v = theta[tri[a]];
            let v = v - TAU * ((v - base) / TAU).round();
            grad[0] += v * g[a][0];
            grad[1] += v * g[a][1];
        }
        let d = [grad[0] - f[t][0], grad[1] - f[t][1]];
        num += area * (d[0] * d[0] + d[1] * d[1]);
        den += area * (grad[0] * grad[0] + grad[1] * grad[1]);
    }
    (num / den).sqrt()
}

/// L² norm of `F`, handy when `grad θ` vanishes.
pub fn f_norm(mesh: &Mesh, fields: &TransferFields) -> f64 {
    l2_norm_vector(mesh, &fields.f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{synthesize, TestCaseConductivity, DEFAULT_EPS_D};
    use crate::mesh::{build_disk_mesh, ring_mesh, GammaPreset};

    fn constant_h(mesh: &Mesh, m: [f64; 3]) -> PowerDensity {
        PowerDensity::from_triples(&vec![m; mesh.num_vertices()], DEFAULT_EPS_D).unwrap()
    }

    fn boundary_const(mesh: &Mesh, c: f64) -> NodeValues {
        mesh.boundary_nodes().into_iter().map(|i| (i, c)).collect()
    }

    #[test]
    fn identity_gives_zero_fields() {
        let m = ring_mesh(4);
        let f = vector_fields(&m, &constant_h(&m, [1.0, 0.0, 1.0])).unwrap();
        for v in [&f.v11, &f.v21, &f.v22, &f.f] {
            assert!(v.values().iter().all(|g| g[0] == 0.0 && g[1] == 0.0));
        }
    }

    #[test]
    fn exponential_h11() {
        let m = build_disk_mesh(0.1).unwrap();
        let t: Vec<[f64; 3]> = m.vertices().iter().map(|p| [(2.0 * p[0]).exp(), 0.0, 1.0]).collect();
        let h = PowerDensity::from_triples(&t, DEFAULT_EPS_D).unwrap();
        let f = vector_fields(&m, &h).unwrap();
        for g in f.v11.values() {
            assert!((g[0] + 1.0).abs() < 1e-9 && g[1].abs() < 1e-9);
        }
    }

    #[test]
    fn nonpositive_h11_is_rejected() {
        let m = ring_mesh(2);
        let h = constant_h(&m, [-1.0, 0.0, 1.0]);
        assert!(matches!(vector_fields(&m, &h), Err(Error::Domain { .. })));
    }

    #[test]
    fn unwrap_constant_is_unchanged() {
        let m = ring_mesh(5);
        let raw = boundary_const(&m, 0.0);
        assert_eq!(boundary_theta(&m, &raw, &UnwrapMode::Auto).unwrap(), raw);
    }

    #[test]
    fn unwrap_single_cut_crossing() {
        // Angle rises from 2 to 2 + 2pi/3 and back along the loop, so it
        // crosses the pi cut twice with zero net winding.
        let m = ring_mesh(6);
        let nodes = m.boundary_nodes();
        let n = nodes.len();
        let raw: NodeValues = nodes
            .iter()
            .enumerate()
            .map(|(k, &i)| {
                let s = (TAU * k as f64 / n as f64).sin();
                (i, canonical_angle(2.5 + 1.2 * s))
            })
            .collect();
        assert!(max_boundary_jump(&m, &raw) > PI);
        let out = boundary_theta(&m, &raw, &UnwrapMode::Auto).unwrap();
        assert!(max_boundary_jump(&m, &out) <= PI);
        assert_eq!(out[&nodes[0]], raw[&nodes[0]]);
        for (&i, &v) in &out {
            let shift = (v - raw[&i]) / TAU;
            assert!((shift - shift.round()).abs() < 1e-12);
            assert!(shift.round() == 0.0 || shift.round() == 1.0);
        }
    }

    #[test]
    fn unwrap_rejects_exact_pi_and_winding() {
        let m = ring_mesh(2);
        let nodes = m.boundary_nodes();
        let mut raw = boundary_const(&m, 0.0);
        raw.insert(nodes[3], PI);
        assert!(matches!(boundary_theta(&m, &raw, &UnwrapMode::Auto), Err(Error::Domain { .. })));
        // The outward normal angle winds once around the circle.
        let winding: NodeValues = nodes
            .iter()
            .map(|&i| {
                let p = m.vertices()[i];
                (i, canonical_angle(p[1].atan2(p[0])))
            })
            .collect();
        assert!(boundary_theta(&m, &winding, &UnwrapMode::Auto).is_err());
    }

    #[test]
    fn interval_mode_adds_two_pi() {
        let m = ring_mesh(8);
        let raw = boundary_const(&m, 0.1);
        let out = boundary_theta(&m, &raw, &UnwrapMode::Interval(vec![(-PI / 2.0, -3.0 * PI / 8.0)])).unwrap();
        for (&i, &v) in &out {
            let p = m.vertices()[i];
            let t = p[1].atan2(p[0]);
            let inside = (-PI / 2.0 - 1e-12..=-3.0 * PI / 8.0 + 1e-12).contains(&t);
            assert_eq!(v, if inside { 0.1 + TAU } else { 0.1 });
        }
    }

    #[test]
    fn theta_constant_boundary() {
        let m = ring_mesh(5);
        let fields = vector_fields(&m, &constant_h(&m, [2.0, 0.0, 2.0])).unwrap();
        let (th, _) = reconstruct_theta(&m, &fields, &boundary_const(&m, PI / 4.0), &SolverOptions::default()).unwrap();
        assert!(th.values().iter().all(|v| (v - PI / 4.0).abs() < 1e-12));
    }

    #[test]
    fn sigma_rhs_examples() {
        let m = build_disk_mesh(0.2).unwrap();
        let t: Vec<[f64; 3]> =
            m.vertices().iter().map(|p| [1.0 + 0.3 * p[0], 0.2 * p[1], 1.5 + p[0] * p[1]]).collect();
        let fields = vector_fields(&m, &PowerDensity::from_triples(&t, DEFAULT_EPS_D).unwrap()).unwrap();
        let k = sigma_rhs(&m, &ScalarField::constant(&m, 0.0), &fields).unwrap();
        let minus = sigma_rhs(&m, &ScalarField::constant(&m, PI / 2.0), &fields).unwrap();
        for (a, b) in k.values().iter().zip(minus.values()) {
            assert!((a[0] + b[0]).abs() < 1e-12 && (a[1] + b[1]).abs() < 1e-12);
        }
        // K from its definition.
        for tri in 0..m.num_triangles() {
            let (a, b, c) = (fields.v11[tri], fields.v22[tri], fields.v21[tri]);
            let expected = [a[0] - b[0] + c[1], -(a[1] - b[1]) + c[0]];
            assert!((k[tri][0] - expected[0]).abs() < 1e-12 && (k[tri][1] - expected[1]).abs() < 1e-12);
        }
        let zero = vector_fields(&m, &constant_h(&m, [1.0, 0.0, 1.0])).unwrap();
        let g = sigma_rhs(&m, &ScalarField::constant(&m, 0.7), &zero).unwrap();
        assert!(g.values().iter().all(|v| v[0] == 0.0 && v[1] == 0.0));
    }

    #[test]
    fn sigma_constant_boundary() {
        let m = ring_mesh(5);
        let g = VectorField::zeros(&m);
        for c in [1.0, std::f64::consts::E] {
            let (s, _) = reconstruct_sigma(&m, &g, &boundary_const(&m, c), &SolverOptions::default()).unwrap();
            assert!(s.values().iter().all(|v| (v - c).abs() < 1e-12 * c));
        }
        assert!(reconstruct_sigma(&m, &g, &boundary_const(&m, 0.0), &SolverOptions::default()).is_err());
    }

    #[test]
    fn full_boundary_constant_sigma_end_to_end() {
        let m = build_disk_mesh(0.1).unwrap().tag_boundary(&GammaPreset::Full.spec());
        let sigma = ScalarField::constant(&m, 2.0);
        let opts = SolverOptions::default();
        let data = synthesize(&m, &sigma, DEFAULT_EPS_D, &opts).unwrap();
        let raw: NodeValues = m.boundary_nodes().into_iter().map(|i| (i, data.theta.theta[i])).collect();
        let th_b = boundary_theta(&m, &raw, &UnwrapMode::Auto).unwrap();
        let s_b: NodeValues = m.boundary_nodes().into_iter().map(|i| (i, 2.0)).collect();
        let truth = Truth { theta: &data.theta.theta, sigma: &sigma };
        let r = reconstruct(&m, &data.h, &th_b, &s_b, Some(truth), &opts).unwrap();
        assert!(r.fields.f.values().iter().all(|v| v[0].abs() < 1e-9 && v[1].abs() < 1e-9));
        assert!(r.theta.values().iter().all(|t| t.abs() < 1e-6));
        assert!(r.metrics.unwrap().err_sigma < 1e-6);
    }

    #[test]
    fn scaling_h_leaves_sigma_unchanged() {
        let m = build_disk_mesh(0.1).unwrap().tag_boundary(&GammaPreset::Large.spec());
        let sigma = TestCaseConductivity::Case1.field(&m);
        let opts = SolverOptions::default();
        let data = synthesize(&m, &sigma, DEFAULT_EPS_D, &opts).unwrap();
        let raw: NodeValues = m.boundary_nodes().into_iter().map(|i| (i, data.theta.theta[i])).collect();
        let th_b = boundary_theta(&m, &raw, &UnwrapMode::Auto).unwrap();
        let s_b: NodeValues = m.boundary_nodes().into_iter().map(|i| (i, sigma[i])).collect();
        let a = reconstruct(&m, &data.h, &th_b, &s_b, None, &opts).unwrap();
        let b = reconstruct(&m, &data.h.scaled(7.5).unwrap(), &th_b, &s_b, None, &opts).unwrap();
        for i in 0..m.num_vertices() {
            assert!((a.sigma[i] - b.sigma[i]).abs() <= 1e-9 * a.sigma[i]);
        }
    }

    #[test]
    fn angle_errors_ignore_branch_shifts() {
        let m = ring_mesh(6);
        let t = ScalarField::from_fn(&m, |p| 0.3 + p[0]);
        let shifted = t.map(|v| v + TAU);
        let (c, s, pair) = angle_errors(&m, &shifted, &t).unwrap();
        assert!(c < 1e-14 && s < 1e-14 && pair < 1e-14);
    }
}
