//! End-to-end experiments and the sweeps over arc size, mesh size and noise.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::export::{nodal_csv, read_nodal_csv, write_atomic};
use crate::fem::{NodeValues, ScalarField, SolverOptions};
use crate::forward::{det_diagnostics, synthesize, ForwardData, PowerDensity, TestCaseConductivity, TransferMap, DEFAULT_EPS_D};
use crate::mesh::{build_disk_mesh, BoundarySpec, GammaPreset, Mesh};
use crate::noise::{clamp_eigenvalues, perturb, symmetrize, NoiseSpec, DEFAULT_SEED};
use crate::recon::{boundary_theta, reconstruct, ReconResult, Truth, UnwrapMode};

/// Data meshes default to this many times finer than the reconstruction mesh.
pub const DATA_REFINEMENT_RATIO: f64 = 1.5;

/// Relative residual used for the forward solves that generate data. Tiny
/// determinants near the no-flux arc are sensitive to solver error.
pub const DATA_REL_TOL: f64 = 1e-12;

/// Reference values for the arc-size sweep:
/// `(case, gamma, min det, cos 2θ error, sin 2θ error, σ error)`, errors as fractions.
pub const GAMMA_SWEEP_REFERENCE: [(u8, &str, f64, f64, f64, f64); 6] = [
    (1, "large", 3.94e-6, 0.0079, 0.0204, 0.3202),
    (1, "medium", 3.87e-10, 0.0140, 0.0201, 1.04),
    (1, "small", 9.94e-18, 0.0224, 0.0237, 1.77),
    (2, "large", 2.94e-6, 0.0077, 0.0186, 0.3362),
    (2, "medium", 3.57e-10, 0.0141, 0.0197, 1.08),
    (2, "small", 1.07e-17, 0.0225, 0.0233, 1.80),
];

/// Reference values for the mesh sweep: `(N_data, N_recon, σ error)`.
pub const MESH_SWEEP_REFERENCE: [(usize, usize, f64); 3] =
    [(44_880, 20_100, 1.037), (79_281, 44_880, 0.8638), (124_265, 79_281, 0.7885)];

/// `(alpha percent, eigenvalue floor)` pairs for the noise sweep.
pub const NOISE_SWEEP_LEVELS: [(f64, f64); 3] = [(1.0, 1e-6), (5.0, 1e-5), (10.0, 1e-5)];

/// Untagged data and reconstruction meshes plus the interpolation between them.
#[derive(Debug, Clone)]
pub struct MeshPair {
    pub data: Mesh,
    pub recon: Mesh,
    pub map: TransferMap,
}

impl MeshPair {
    pub fn new(data: Mesh, recon: Mesh) -> MeshPair {
        let map = TransferMap::new(&data, &recon);
        MeshPair { data, recon, map }
    }

    pub fn build(data_h: f64, recon_h: f64, refinements: usize) -> Result<MeshPair> {
        let mut data = build_disk_mesh(data_h)?;
        let mut recon = build_disk_mesh(recon_h)?;
        for _ in 0..refinements {
            data = data.refine();
            recon = recon.refine();
        }
        Ok(MeshPair::new(data, recon))
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentSetup {
    pub case: TestCaseConductivity,
    pub gamma_name: String,
    pub gamma: BoundarySpec,
    /// `None` runs on the exact synthesized data.
    pub noise: Option<NoiseSpec>,
    pub eps_d: f64,
    pub unwrap: UnwrapMode,
    pub solver: SolverOptions,
    pub data_solver: SolverOptions,
}

impl ExperimentSetup {
    pub fn new(case: TestCaseConductivity, gamma: GammaPreset) -> ExperimentSetup {
        let solver = SolverOptions::default();
        ExperimentSetup {
            case,
            gamma_name: gamma.name().to_string(),
            gamma: gamma.spec(),
            noise: None,
            eps_d: DEFAULT_EPS_D,
            unwrap: UnwrapMode::Auto,
            solver,
            data_solver: SolverOptions { rel_tol: solver.rel_tol.min(DATA_REL_TOL), ..solver },
        }
    }
}

/// One row of a results table.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRecord {
    pub case: String,
    pub gamma: String,
    pub n_data: usize,
    pub n_recon: usize,
    /// Smallest `det H` of the exact data on the reconstruction mesh.
    pub min_det: f64,
    pub err_cos2theta: f64,
    pub err_sin2theta: f64,
    pub err_angle_pair: f64,
    pub err_sigma: f64,
    pub alpha_percent: f64,
    pub seed: u64,
    pub eig_floor: f64,
    pub eig_clamped: usize,
    /// Wall-clock seconds; shown in text output only, never in CSV.
    pub runtime_s: f64,
}

/// Everything the reconstruction consumes, on the reconstruction mesh.
/// This is what `forward` writes to disk and `reconstruct` reads back.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedData {
    pub case: String,
    pub gamma: String,
    pub n_data: usize,
    /// Reconstruction mesh with its boundary tags.
    pub mesh: Mesh,
    /// Smallest `det H` of the exact data.
    pub min_det: f64,
    /// Data after the optional noise stage.
    pub h: PowerDensity,
    pub theta_true: ScalarField,
    pub sigma_true: ScalarField,
    /// Zero alpha and zero floor when no noise stage ran.
    pub noise: NoiseSpec,
    pub eig_clamped: usize,
}

const PREPARED_MESH: &str = "recon_mesh.txt";
const PREPARED_DATA: &str = "data.csv";
const PREPARED_META: &str = "meta.toml";

impl PreparedData {
    /// Write `recon_mesh.txt`, `data.csv` and `meta.toml` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        let mut mesh = Vec::new();
        self.mesh.write_text(&mut mesh)?;
        write_atomic(&dir.join(PREPARED_MESH), &mesh)?;
        let csv = nodal_csv(
            &self.mesh,
            &[
                ("h11", &self.h.h11),
                ("h12", &self.h.h12),
                ("h22", &self.h.h22),
                ("theta", &self.theta_true),
                ("sigma", &self.sigma_true),
            ],
        )?;
        write_atomic(&dir.join(PREPARED_DATA), csv.as_bytes())?;
        let mut meta = toml::Table::new();
        meta.insert("case".into(), self.case.clone().into());
        meta.insert("gamma".into(), self.gamma.clone().into());
        meta.insert("n_data".into(), (self.n_data as i64).into());
        meta.insert("min_det".into(), self.min_det.into());
        meta.insert("eps_d".into(), self.h.eps_d.into());
        meta.insert("alpha_percent".into(), self.noise.alpha_percent.into());
        meta.insert("seed".into(), (self.noise.seed as i64).into());
        meta.insert("eig_floor".into(), self.noise.eig_floor.into());
        meta.insert("eig_clamped".into(), (self.eig_clamped as i64).into());
        write_atomic(&dir.join(PREPARED_META), meta.to_string().as_bytes())
    }

    /// Inverse of [`PreparedData::write_dir`]. `data.csv` may also come from
    /// another tool as long as it has the `h11,h12,h22,theta,sigma` columns;
    /// θ and σ are used as boundary data and as the reference for the errors.
    pub fn read_dir(dir: &Path) -> Result<PreparedData> {
        let file = std::fs::File::open(dir.join(PREPARED_MESH))?;
        let mesh = Mesh::read_text(std::io::BufReader::new(file))?;
        let table = read_nodal_csv(&std::fs::read_to_string(dir.join(PREPARED_DATA))?)?;
        if table.points.len() != mesh.num_vertices() {
            return Err(Error::Parse(format!(
                "{PREPARED_DATA} has {} rows for {} vertices",
                table.points.len(),
                mesh.num_vertices()
            )));
        }
        let meta: toml::Table = std::fs::read_to_string(dir.join(PREPARED_META))?
            .parse()
            .map_err(|e: toml::de::Error| Error::Parse(format!("{PREPARED_META}: {e}")))?;
        let key = |k: &str| meta.get(k).ok_or_else(|| Error::Parse(format!("{PREPARED_META}: missing `{k}`")));
        let float = |k: &str| {
            key(k)?.as_float().ok_or_else(|| Error::Parse(format!("{PREPARED_META}: `{k}` is not a float")))
        };
        let int = |k: &str| {
            key(k)?
                .as_integer()
                .filter(|&v| v >= 0)
                .ok_or_else(|| Error::Parse(format!("{PREPARED_META}: `{k}` is not a non-negative integer")))
        };
        let text = |k: &str| {
            key(k)?.as_str().map(str::to_owned).ok_or_else(|| Error::Parse(format!("{PREPARED_META}: `{k}` is not a string")))
        };
        let column = |name: &str| -> Result<ScalarField> {
            let values = table.column(name).ok_or_else(|| Error::Parse(format!("{PREPARED_DATA}: missing column `{name}`")))?;
            ScalarField::new(&mesh, values.to_vec())
        };
        let h = PowerDensity::new(column("h11")?, column("h12")?, column("h22")?, float("eps_d")?)?;
        Ok(PreparedData {
            case: text("case")?,
            gamma: text("gamma")?,
            n_data: int("n_data")? as usize,
            min_det: float("min_det")?,
            h,
            theta_true: column("theta")?,
            sigma_true: column("sigma")?,
            noise: NoiseSpec {
                alpha_percent: float("alpha_percent")?,
                seed: int("seed")? as u64,
                eig_floor: float("eig_floor")?,
            },
            eig_clamped: int("eig_clamped")? as usize,
            mesh,
        })
    }
}

/// Forward synthesis on the data mesh and everything derived from it.
#[derive(Debug, Clone)]
pub struct ForwardStage {
    pub data_mesh: Mesh,
    pub forward: ForwardData,
    /// Exact data interpolated onto the reconstruction mesh.
    pub h_exact: PowerDensity,
    pub prepared: PreparedData,
}

/// Reconstruction from [`PreparedData`] and its scores.
#[derive(Debug, Clone)]
pub struct ReconStage {
    pub record: ExperimentRecord,
    pub theta_boundary: NodeValues,
    pub sigma_boundary: NodeValues,
    pub result: ReconResult,
}

/// Fields produced by one experiment, kept for export.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub forward: ForwardStage,
    pub recon: ReconStage,
}

impl ExperimentOutput {
    pub fn record(&self) -> &ExperimentRecord {
        &self.recon.record
    }
}

/// Noise, symmetrization and eigenvalue floor, in that order.
pub fn apply_noise(h: &PowerDensity, spec: &NoiseSpec) -> Result<(PowerDensity, usize)> {
    let noisy = symmetrize(&perturb(h, spec)?);
    if spec.eig_floor > 0.0 {
        clamp_eigenvalues(&noisy, spec.eig_floor)
    } else {
        Ok((noisy, 0))
    }
}

/// Synthesize on the data mesh, move to the reconstruction mesh and
/// optionally corrupt.
pub fn forward_stage(meshes: &MeshPair, setup: &ExperimentSetup) -> Result<ForwardStage> {
    let data_mesh = meshes.data.tag_boundary(&setup.gamma);
    let recon_mesh = meshes.recon.tag_boundary(&setup.gamma);
    let forward = synthesize(&data_mesh, &setup.case.field(&data_mesh), setup.eps_d, &setup.data_solver)?;
    let h_exact = forward.h.transfer(&meshes.map)?;
    let theta_true = forward.theta.transfer(&meshes.map)?.theta;
    let sigma_true = setup.case.field(&recon_mesh);
    let min_det = det_diagnostics(&h_exact).min_det;
    let (h, eig_clamped) = match &setup.noise {
        Some(spec) => apply_noise(&h_exact, spec)?,
        None => (h_exact.clone(), 0),
    };
    let prepared = PreparedData {
        case: setup.case.name(),
        gamma: setup.gamma_name.clone(),
        n_data: data_mesh.num_vertices(),
        mesh: recon_mesh,
        min_det,
        h,
        theta_true,
        sigma_true,
        noise: setup.noise.unwrap_or(NoiseSpec { alpha_percent: 0.0, seed: DEFAULT_SEED, eig_floor: 0.0 }),
        eig_clamped,
    };
    Ok(ForwardStage { data_mesh, forward, h_exact, prepared })
}

/// Reconstruct from prepared data and score against its truth fields.
pub fn reconstruct_stage(data: &PreparedData, unwrap: &UnwrapMode, solver: &SolverOptions) -> Result<ReconStage> {
    let start = Instant::now();
    let mesh = &data.mesh;
    let boundary = mesh.boundary_nodes();
    let raw: NodeValues = boundary.iter().map(|&i| (i, data.theta_true[i])).collect();
    let theta_boundary = boundary_theta(mesh, &raw, unwrap)?;
    let sigma_boundary: NodeValues = boundary.iter().map(|&i| (i, data.sigma_true[i])).collect();
    let truth = Truth { theta: &data.theta_true, sigma: &data.sigma_true };
    let result = reconstruct(mesh, &data.h, &theta_boundary, &sigma_boundary, Some(truth), solver)?;
    let m = result.metrics.expect("truth supplied");
    let record = ExperimentRecord {
        case: data.case.clone(),
        gamma: data.gamma.clone(),
        n_data: data.n_data,
        n_recon: mesh.num_vertices(),
        min_det: data.min_det,
        err_cos2theta: m.err_cos2theta,
        err_sin2theta: m.err_sin2theta,
        err_angle_pair: m.err_angle_pair,
        err_sigma: m.err_sigma,
        alpha_percent: data.noise.alpha_percent,
        seed: data.noise.seed,
        eig_floor: data.noise.eig_floor,
        eig_clamped: data.eig_clamped,
        runtime_s: start.elapsed().as_secs_f64(),
    };
    Ok(ReconStage { record, theta_boundary, sigma_boundary, result })
}

/// [`forward_stage`] followed by [`reconstruct_stage`].
pub fn run_experiment(meshes: &MeshPair, setup: &ExperimentSetup) -> Result<ExperimentOutput> {
    let start = Instant::now();
    let forward = forward_stage(meshes, setup)?;
    let mut recon = reconstruct_stage(&forward.prepared, &setup.unwrap, &setup.solver)?;
    recon.record.runtime_s = start.elapsed().as_secs_f64();
    Ok(ExperimentOutput { forward, recon })
}

/// Shared settings for the sweeps.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    /// Reconstruction mesh size (the coarsest level for the mesh sweep).
    pub target_h: f64,
    /// Data mesh size; defaults to `target_h / DATA_REFINEMENT_RATIO`.
    pub data_h: Option<f64>,
    pub refinements: usize,
    pub eps_d: f64,
    pub unwrap: UnwrapMode,
    pub solver: SolverOptions,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            target_h: 0.03,
            data_h: None,
            refinements: 0,
            eps_d: DEFAULT_EPS_D,
            unwrap: UnwrapMode::Auto,
            solver: SolverOptions::default(),
            seed: DEFAULT_SEED,
        }
    }
}

impl SweepConfig {
    pub fn data_h(&self) -> f64 {
        self.data_h.unwrap_or(self.target_h / DATA_REFINEMENT_RATIO)
    }

    fn setup(&self, case: TestCaseConductivity, gamma: GammaPreset) -> ExperimentSetup {
        let mut s = ExperimentSetup::new(case, gamma);
        s.eps_d = self.eps_d;
        s.unwrap = self.unwrap.clone();
        s.solver = self.solver;
        s.data_solver = SolverOptions { rel_tol: self.solver.rel_tol.min(DATA_REL_TOL), ..self.solver };
        s
    }
}

/// Run independent experiments on scoped threads; results keep input order.
fn run_all(jobs: Vec<(&MeshPair, ExperimentSetup)>) -> Result<Vec<ExperimentRecord>> {
    let results: Vec<Result<ExperimentRecord>> = std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .iter()
            .map(|(pair, setup)| scope.spawn(move || run_experiment(pair, setup).map(|o| o.recon.record)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("experiment thread panicked")).collect()
    });
    results.into_iter().collect()
}

/// Cases 1 and 2 on the large, medium and small arcs, without noise.
pub fn table_gamma_sweep(cfg: &SweepConfig) -> Result<Vec<ExperimentRecord>> {
    let pair = MeshPair::build(cfg.data_h(), cfg.target_h, cfg.refinements)?;
    let mut jobs = Vec::new();
    for case in [TestCaseConductivity::Case1, TestCaseConductivity::Case2] {
        for gamma in [GammaPreset::Large, GammaPreset::Medium, GammaPreset::Small] {
            jobs.push((&pair, cfg.setup(case, gamma)));
        }
    }
    run_all(jobs)
}

/// Mesh sizes of the four levels used by [`table_mesh_sweep`].
pub fn mesh_sweep_levels(h0: f64) -> [f64; 4] {
    [h0, h0 / 1.5, h0 / 2.0, h0 / 2.5]
}

/// Case 1 on the medium arc at three resolutions, where each level
/// reconstructs on the previous level's data mesh.
pub fn table_mesh_sweep(cfg: &SweepConfig) -> Result<Vec<ExperimentRecord>> {
    let h = mesh_sweep_levels(cfg.target_h);
    let pairs: Vec<MeshPair> = (0..3)
        .map(|k| MeshPair::build(h[k + 1], h[k], cfg.refinements))
        .collect::<Result<_>>()?;
    let jobs = pairs.iter().map(|p| (p, cfg.setup(TestCaseConductivity::Case1, GammaPreset::Medium))).collect();
    run_all(jobs)
}

/// Case 2 on the medium arc at each level of [`NOISE_SWEEP_LEVELS`].
pub fn noise_sweep(cfg: &SweepConfig) -> Result<Vec<ExperimentRecord>> {
    let pair = MeshPair::build(cfg.data_h(), cfg.target_h, cfg.refinements)?;
    let jobs = NOISE_SWEEP_LEVELS
        .iter()
        .map(|&(alpha_percent, eig_floor)| {
            let mut s = cfg.setup(TestCaseConductivity::Case2, GammaPreset::Medium);
            s.noise = Some(NoiseSpec { alpha_percent, seed: cfg.seed, eig_floor });
            (&pair, s)
        })
        .collect();
    run_all(jobs)
}

pub const CSV_HEADER: &str = "case,gamma,n_data,n_recon,min_det,err_cos2theta,err_sin2theta,err_angle_pair,err_sigma,alpha_percent,seed,eig_floor,eig_clamped";

/// Deterministic CSV: fixed header, 17 significant digits, no timings.
pub fn records_to_csv(records: &[ExperimentRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{:.16e},{}",
            r.case,
            r.gamma,
            r.n_data,
            r.n_recon,
            r.min_det,
            r.err_cos2theta,
            r.err_sin2theta,
            r.err_angle_pair,
            r.err_sigma,
            r.alpha_percent,
            r.seed,
            r.eig_floor,
            r.eig_clamped
        )
        .expect("writing to a String");
    }
    out
}

/// Aligned plain-text table with percentages and runtimes.
pub fn records_to_text(records: &[ExperimentRecord]) -> String {
    let mut out = format!(
        "{:<5} {:<7} {:>7} {:>7} {:>10} {:>8} {:>8} {:>8} {:>6} {:>8} {:>8}\n",
        "case", "gamma", "N_data", "N_recon", "min det", "cos2θ %", "sin2θ %", "σ %", "α %", "L", "time s"
    );
    for r in records {
        writeln!(
            out,
            "{:<5} {:<7} {:>7} {:>7} {:>10.3e} {:>8.2} {:>8.2} {:>8.2} {:>6.1} {:>8.1e} {:>8.2}",
            r.case,
            r.gamma,
            r.n_data,
            r.n_recon,
            r.min_det,
            100.0 * r.err_cos2theta,
            100.0 * r.err_sin2theta,
            100.0 * r.err_sigma,
            r.alpha_percent,
            r.eig_floor,
            r.runtime_s
        )
        .expect("writing to a String");
    }
    out
}
