//! File-based stages from a URDF to identified base parameters.
//!
//! Every stage reads its inputs from, and writes its artifacts to, one output
//! directory, so stages can be rerun individually.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::base_params::{compute_base_projection_with, rank_sensitivity, BaseParamOptions, BaseProjection};
use crate::collision::{compute_mfpee, read_point_cloud, resolve_all, CollisionModel, EllipsoidSpec, EmOptions, LinkRef, Mfpee};
use crate::dataset::Dataset;
use crate::dynamics::{param_label, StdParams};
use crate::error::{Error, Result};
use crate::excitation::{dense_check, optimize, DenseCheck, ExcitationProblem, OptResult, OptimizerOptions};
use crate::filter::{filter_dataset, FilterOptions, FilterSummary};
use crate::fourier::{BoundaryMode, FourierTrajectory, TrajectoryFile};
use crate::identify::{build_bounds, identify, validate, BoundsOptions, BvlsOptions, IdentReport, TorqueFit};
use crate::sim::{simulate_dataset, NoiseSpec, Pulse};
use crate::urdf::KinematicChain;

pub const OUTPUT_DIR_ENV: &str = "EXID_OUTPUT_DIR";

pub const CHAIN_FILE: &str = "chain.json";
pub const BASE_PARAMS_FILE: &str = "base_params.json";
pub const MFPEE_FILE: &str = "mfpee.json";
pub const TRAJECTORY_FILE: &str = "trajectory.json";
pub const OPT_REPORT_FILE: &str = "opt_report.json";
pub const TRAJECTORY_SAMPLES_FILE: &str = "trajectory_samples.csv";
pub const DATASET_FILE: &str = "dataset.csv";
pub const VALIDATION_DATASET_FILE: &str = "validation.csv";
pub const VALIDATION_TRAJECTORY_FILE: &str = "validation_trajectory.json";
pub const SIM_REPORT_FILE: &str = "sim_report.json";
pub const FILTERED_DATASET_FILE: &str = "dataset_filtered.csv";
pub const FILTERED_VALIDATION_FILE: &str = "validation_filtered.csv";
pub const FILTER_SUMMARY_FILE: &str = "filter_summary.json";
pub const IDENT_REPORT_FILE: &str = "ident_report.json";
pub const THETA_B_FILE: &str = "theta_b.json";
pub const VALIDATION_REPORT_FILE: &str = "validation_report.json";
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OffsetPolicy {
    MidRange,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum QOffset {
    Policy(OffsetPolicy),
    Values(Vec<f64>),
}

impl QOffset {
    pub fn resolve(&self, chain: &KinematicChain) -> Result<DVector<f64>> {
        match self {
            QOffset::Policy(OffsetPolicy::MidRange) => Ok(FourierTrajectory::mid_range_offset(chain)),
            QOffset::Policy(OffsetPolicy::Zero) => Ok(DVector::zeros(chain.dof)),
            QOffset::Values(v) if v.len() == chain.dof => Ok(DVector::from_column_slice(v)),
            QOffset::Values(v) => Err(Error::Config(format!("q_offset has {} entries, the chain has {} joints", v.len(), chain.dof))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FourierConfig {
    #[serde(rename = "L")]
    pub order: usize,
    /// Fundamental frequency (Hz).
    pub f_f: f64,
    /// Regressor sampling rate (Hz).
    pub f_s: f64,
    pub boundary_mode: BoundaryMode,
    pub q_offset: QOffset,
}

impl Default for FourierConfig {
    fn default() -> Self {
        FourierConfig {
            order: 5,
            f_f: 0.1,
            f_s: 20.0,
            boundary_mode: BoundaryMode::Derived,
            q_offset: QOffset::Policy(OffsetPolicy::MidRange),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MfpeeConfig {
    pub k_max: usize,
    pub em: EmOptions,
}

impl Default for MfpeeConfig {
    fn default() -> Self {
        MfpeeConfig { k_max: crate::collision::DEFAULT_K_MAX, em: EmOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub f_s: f64,
    pub periods: usize,
    pub validation_periods: usize,
    pub sigma_tau: f64,
    pub sigma_dq: f64,
    pub external_pulse: Option<Pulse>,
    /// True friction per joint; empty means zero.
    pub coulomb: Vec<f64>,
    pub viscous: Vec<f64>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            f_s: 1000.0,
            periods: 2,
            validation_periods: 1,
            sigma_tau: 0.0,
            sigma_dq: 0.0,
            external_pulse: None,
            coulomb: Vec::new(),
            viscous: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdentifyConfig {
    pub mu_margin: f64,
    pub floor: f64,
    pub coulomb_cap: f64,
    pub viscous_cap: f64,
    pub solver: BvlsOptions,
}

impl Default for IdentifyConfig {
    fn default() -> Self {
        let b = BoundsOptions::default();
        IdentifyConfig {
            mu_margin: b.mu_margin,
            floor: b.floor,
            coulomb_cap: b.coulomb_cap,
            viscous_cap: b.viscous_cap,
            solver: BvlsOptions::default(),
        }
    }
}

impl IdentifyConfig {
    pub fn bounds(&self) -> BoundsOptions {
        BoundsOptions { mu_margin: self.mu_margin, floor: self.floor, coulomb_cap: self.coulomb_cap, viscous_cap: self.viscous_cap }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EllipsoidSource {
    Inline(Vec<EllipsoidSpec>),
    File(PathBuf),
}

impl Default for EllipsoidSource {
    fn default() -> Self {
        EllipsoidSource::Inline(Vec::new())
    }
}

/// One JSON document configuring every stage. Relative input paths are taken
/// relative to the config file, `output_dir` relative to the working
/// directory. Seeds inside stage sections are replaced by
/// values derived from the top-level `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub urdf_path: PathBuf,
    pub ee_cloud_path: Option<PathBuf>,
    /// Link carrying the end effector; defaults to the last moving link.
    pub ee_link: Option<LinkRef>,
    pub ellipsoids: EllipsoidSource,
    pub seed: u64,
    pub base_params: BaseParamOptions,
    pub mfpee: MfpeeConfig,
    pub fourier: FourierConfig,
    pub optimizer: OptimizerOptions,
    pub simulate: SimulateConfig,
    pub filter: FilterOptions,
    pub identify: IdentifyConfig,
    pub output_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            urdf_path: PathBuf::new(),
            ee_cloud_path: None,
            ee_link: None,
            ellipsoids: EllipsoidSource::default(),
            seed: 0,
            base_params: BaseParamOptions::default(),
            mfpee: MfpeeConfig::default(),
            fourier: FourierConfig::default(),
            optimizer: OptimizerOptions::default(),
            simulate: SimulateConfig::default(),
            filter: FilterOptions::default(),
            identify: IdentifyConfig::default(),
            output_dir: PathBuf::from("exid-out"),
        }
    }
}

fn rebase(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn require_file(what: &str, p: &Path) -> Result<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} `{}` does not exist", p.display())))
    }
}

impl PipelineConfig {
    /// Parses a config, resolves relative paths against `base_dir` and checks
    /// that every referenced input file exists.
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: PipelineConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.urdf_path.as_os_str().is_empty() {
            return Err(Error::Config("`urdf_path` is required".into()));
        }
        cfg.urdf_path = rebase(base_dir, &cfg.urdf_path);
        require_file("urdf_path", &cfg.urdf_path)?;
        if let Some(p) = &cfg.ee_cloud_path {
            let p = rebase(base_dir, p);
            require_file("ee_cloud_path", &p)?;
            cfg.ee_cloud_path = Some(p);
        }
        if let EllipsoidSource::File(p) = &cfg.ellipsoids {
            let p = rebase(base_dir, p);
            require_file("ellipsoids", &p)?;
            cfg.ellipsoids = EllipsoidSource::File(p);
        }
        cfg.output_dir = match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => cfg.output_dir,
        };
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_json(&text, base)
    }

    pub fn ellipsoid_specs(&self) -> Result<Vec<EllipsoidSpec>> {
        match &self.ellipsoids {
            EllipsoidSource::Inline(v) => Ok(v.clone()),
            EllipsoidSource::File(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
            }
        }
    }

    /// Seed for one stage, derived from the top-level seed and a fixed label.
    pub fn stage_seed(&self, label: &str) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in label.bytes() {
            h = (h ^ b as u64).wrapping_mul(0x0100_0000_01b3);
        }
        let mut z = self.seed ^ h;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Inspect,
    BaseParams,
    Mfpee,
    Optimize,
    Simulate,
    Filter,
    Identify,
    Validate,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Inspect,
        Stage::BaseParams,
        Stage::Mfpee,
        Stage::Optimize,
        Stage::Simulate,
        Stage::Filter,
        Stage::Identify,
        Stage::Validate,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Inspect => "inspect",
            Stage::BaseParams => "base-params",
            Stage::Mfpee => "mfpee",
            Stage::Optimize => "optimize",
            Stage::Simulate => "simulate",
            Stage::Filter => "filter",
            Stage::Identify => "identify",
            Stage::Validate => "validate",
            Stage::Report => "report",
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct StageOutcome {
    pub artifacts: Vec<PathBuf>,
    /// Set when the optimizer could not meet the constraints; its
    /// least-violating result is still written.
    pub infeasible: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InspectArtifact {
    pub dof: usize,
    pub joint_names: Vec<String>,
    pub chain: crate::urdf::ChainDump,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProjectionArtifact {
    pub rank: usize,
    pub n_params: usize,
    /// Independent columns by parameter label.
    pub b_idx: Vec<String>,
    pub b_idx_indices: Vec<usize>,
    pub d_idx: Vec<usize>,
    /// `rank × n_params`, row-major.
    #[serde(rename = "K")]
    pub k: Vec<Vec<f64>>,
    #[serde(rename = "K_d")]
    pub kd: Vec<Vec<f64>>,
    pub rank_at_1e_8: usize,
    pub rank_at_1e_6: usize,
    pub ill_conditioned: bool,
    pub seconds: f64,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>], ncols: usize) -> Result<DMatrix<f64>> {
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Dataset("ragged matrix in artifact".into()));
    }
    Ok(DMatrix::from_row_iterator(rows.len(), ncols, rows.iter().flatten().copied()))
}

impl ProjectionArtifact {
    pub fn projection(&self) -> Result<BaseProjection> {
        Ok(BaseProjection {
            b_idx: self.b_idx_indices.clone(),
            d_idx: self.d_idx.clone(),
            kd: from_rows(&self.kd, self.d_idx.len())?,
            k: from_rows(&self.k, self.n_params)?,
            rank: self.rank,
            n_params: self.n_params,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MfpeeArtifact {
    #[serde(flatten)]
    pub mfpee: Mfpee,
    pub k_star: usize,
    pub bic: Vec<(usize, f64)>,
    pub hull_points: Vec<[f64; 3]>,
    pub em_log_likelihood: Vec<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizeArtifact {
    #[serde(flatten)]
    pub result: OptResult,
    pub dense_check: DenseCheck,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimReport {
    pub labels: Vec<String>,
    pub theta_b_true: Vec<f64>,
    pub theta_true: Vec<f64>,
    pub noise: NoiseSpec,
    pub validation_noise: NoiseSpec,
    pub f_s: f64,
    pub samples: usize,
    pub validation_samples: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilterArtifact {
    pub training: FilterSummary,
    pub validation: Option<FilterSummary>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdentArtifact {
    #[serde(flatten)]
    pub report: IdentReport,
    pub lb: Vec<f64>,
    pub ub: Vec<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationArtifact {
    #[serde(flatten)]
    pub fit: TorqueFit,
    pub seconds: f64,
}

/// A loaded config together with its parsed chain.
pub struct Pipeline {
    pub cfg: PipelineConfig,
    pub chain: KinematicChain,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig) -> Result<Self> {
        let chain = KinematicChain::from_urdf_file(&cfg.urdf_path)?;
        Ok(Pipeline { cfg, chain })
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.cfg.output_dir.join(file)
    }

    fn read_artifact<T: DeserializeOwned>(&self, file: &str, artifact: &'static str, stage: &'static str) -> Result<T> {
        let path = self.path(file);
        if !path.is_file() {
            return Err(Error::MissingArtifact { artifact, path, stage });
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    fn read_dataset(&self, file: &str, artifact: &'static str, stage: &'static str) -> Result<Dataset> {
        let path = self.path(file);
        if !path.is_file() {
            return Err(Error::MissingArtifact { artifact, path, stage });
        }
        Dataset::read(&path)
    }

    fn projection(&self) -> Result<BaseProjection> {
        let art: ProjectionArtifact = self.read_artifact(BASE_PARAMS_FILE, "base parameter projection", "base-params")?;
        let proj = art.projection()?;
        if proj.n_params != crate::dynamics::PARAMS_PER_JOINT * self.chain.dof {
            return Err(Error::dim("projection parameters", crate::dynamics::PARAMS_PER_JOINT * self.chain.dof, proj.n_params));
        }
        Ok(proj)
    }

    fn trajectory(&self, file: &str) -> Result<FourierTrajectory> {
        let f: TrajectoryFile = self.read_artifact(file, "trajectory", "optimize")?;
        FourierTrajectory::from_file(&f)
    }

    pub fn template(&self) -> Result<FourierTrajectory> {
        let f = &self.cfg.fourier;
        if !(f.f_f > 0.0) {
            return Err(Error::Config("fourier.f_f must be positive".into()));
        }
        FourierTrajectory::zeros(self.chain.dof, f.order, std::f64::consts::TAU * f.f_f, f.q_offset.resolve(&self.chain)?)
    }

    pub fn ee_link(&self) -> Result<usize> {
        match &self.cfg.ee_link {
            Some(r) => r.resolve(&self.chain),
            None => Ok(self.chain.dof - 1),
        }
    }

    /// Collision model from the MFPEE artifact, if ellipsoids are configured.
    pub fn collision_model(&self) -> Result<Option<CollisionModel>> {
        let specs = self.ellipsoid_specs()?;
        if specs.is_empty() {
            return Ok(None);
        }
        let art: MfpeeArtifact = self.read_artifact(MFPEE_FILE, "end-effector feature points", "mfpee")?;
        let model = CollisionModel::new(&self.chain, self.ee_link()?, art.mfpee.means(), resolve_all(&specs, &self.chain)?)?;
        Ok(Some(model))
    }

    fn ellipsoid_specs(&self) -> Result<Vec<EllipsoidSpec>> {
        self.cfg.ellipsoid_specs()
    }

    fn problem(&self, proj: &BaseProjection, collision: Option<CollisionModel>, opts: &OptimizerOptions) -> Result<ExcitationProblem> {
        ExcitationProblem::new(&self.chain, proj, &self.template()?, self.cfg.fourier.f_s, self.cfg.fourier.boundary_mode, collision, opts)
    }

    fn optimizer_options(&self) -> OptimizerOptions {
        OptimizerOptions { seed: self.cfg.stage_seed("optimize"), ..self.cfg.optimizer }
    }

    fn true_params(&self) -> Result<StdParams> {
        let n = self.chain.dof;
        let pick = |v: &Vec<f64>| if v.is_empty() { vec![0.0; n] } else { v.clone() };
        StdParams::nominal(&self.chain).with_friction(&pick(&self.cfg.simulate.coulomb), &pick(&self.cfg.simulate.viscous))
    }

    pub fn run(&self, stage: Stage) -> Result<StageOutcome> {
        std::fs::create_dir_all(&self.cfg.output_dir).map_err(|e| Error::io(&self.cfg.output_dir, e))?;
        let start = Instant::now();
        let secs = || start.elapsed().as_secs_f64();
        let mut out = StageOutcome::default();
        match stage {
            Stage::Inspect => {
                let path = self.path(CHAIN_FILE);
                write_json(
                    &path,
                    &InspectArtifact {
                        dof: self.chain.dof,
                        joint_names: self.chain.joint_names(),
                        chain: self.chain.dump(),
                        seconds: secs(),
                    },
                )?;
                out.artifacts.push(path);
            }
            Stage::BaseParams => {
                let opts = BaseParamOptions { seed: self.cfg.stage_seed("base-params"), ..self.cfg.base_params };
                let proj = compute_base_projection_with(&self.chain, &opts)?;
                let (r8, r6) = rank_sensitivity(&self.chain, &opts)?;
                let path = self.path(BASE_PARAMS_FILE);
                write_json(
                    &path,
                    &ProjectionArtifact {
                        rank: proj.rank,
                        n_params: proj.n_params,
                        b_idx: proj.b_idx.iter().map(|&j| param_label(j)).collect(),
                        b_idx_indices: proj.b_idx.clone(),
                        d_idx: proj.d_idx.clone(),
                        k: rows_of(&proj.k),
                        kd: rows_of(&proj.kd),
                        rank_at_1e_8: r8,
                        rank_at_1e_6: r6,
                        ill_conditioned: r8 != r6,
                        seconds: secs(),
                    },
                )?;
                out.artifacts.push(path);
            }
            Stage::Mfpee => {
                let cloud_path = self
                    .cfg
                    .ee_cloud_path
                    .as_ref()
                    .ok_or_else(|| Error::Config("`ee_cloud_path` is required for the mfpee stage".into()))?;
                let text = std::fs::read_to_string(cloud_path).map_err(|e| Error::io(cloud_path, e))?;
                let cloud = read_point_cloud(&text)?;
                let fit = compute_mfpee(&cloud, self.cfg.mfpee.k_max, self.cfg.stage_seed("mfpee"), &self.cfg.mfpee.em)?;
                let path = self.path(MFPEE_FILE);
                write_json(
                    &path,
                    &MfpeeArtifact {
                        k_star: fit.mfpee.mu.len(),
                        mfpee: fit.mfpee,
                        bic: fit.bic,
                        hull_points: fit.hull_points.iter().map(|p| [p.x, p.y, p.z]).collect(),
                        em_log_likelihood: fit.history,
                        seconds: secs(),
                    },
                )?;
                out.artifacts.push(path);
            }
            Stage::Optimize => {
                let proj = self.projection()?;
                let model = self.collision_model()?;
                let opts = self.optimizer_options();
                let problem = self.problem(&proj, model.clone(), &opts)?;
                let mut result = optimize(&problem, &opts)?;
                result.seconds = secs();
                let traj = result.traj()?;
                let check = dense_check(
                    &self.chain,
                    &traj,
                    self.cfg.fourier.boundary_mode,
                    model.as_ref().map(|m| (m, opts.margin)),
                    self.cfg.fourier.f_s,
                    opts.collision_oversample.max(1),
                )?;
                out.infeasible = !result.feasible || check.max_violation >= crate::excitation::FEASIBILITY_TOL;
                let tpath = self.path(TRAJECTORY_FILE);
                write_json(&tpath, &result.trajectory)?;
                let rpath = self.path(OPT_REPORT_FILE);
                write_json(&rpath, &OptimizeArtifact { result, dense_check: check })?;
                let spath = self.path(TRAJECTORY_SAMPLES_FILE);
                Dataset::new(self.chain.dof, traj.sample_grid(self.cfg.fourier.f_s)?)?.write(&spath)?;
                out.artifacts.extend([tpath, rpath, spath]);
            }
            Stage::Simulate => {
                let traj = self.trajectory(TRAJECTORY_FILE)?;
                let proj = self.projection()?;
                let sim = &self.cfg.simulate;
                let theta = self.true_params()?;
                let noise = NoiseSpec {
                    sigma_tau: sim.sigma_tau,
                    sigma_dq: sim.sigma_dq,
                    seed: self.cfg.stage_seed("simulate"),
                    external_pulse: sim.external_pulse,
                };
                let train = simulate_dataset(&self.chain, &traj, &theta, &noise, sim.f_s, sim.periods)?;

                // Held-out excitation: a random feasible trajectory.
                let opts = self.optimizer_options();
                let problem = self.problem(&proj, self.collision_model()?, &opts)?;
                let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.stage_seed("validation"));
                let sample = problem.sample_start(&mut rng, &opts.sampler)?;
                let vtraj = problem.ctx.trajectory(&sample.coeffs);
                let vnoise = NoiseSpec { seed: self.cfg.stage_seed("validation-noise"), external_pulse: None, ..noise };
                let val = simulate_dataset(&self.chain, &vtraj, &theta, &vnoise, sim.f_s, sim.validation_periods)?;

                let paths = [
                    self.path(DATASET_FILE),
                    self.path(VALIDATION_DATASET_FILE),
                    self.path(VALIDATION_TRAJECTORY_FILE),
                    self.path(SIM_REPORT_FILE),
                ];
                train.write(&paths[0])?;
                val.write(&paths[1])?;
                write_json(&paths[2], &vtraj.to_file())?;
                write_json(
                    &paths[3],
                    &SimReport {
                        labels: proj.labels(),
                        theta_b_true: proj.project(&theta)?.0.iter().copied().collect(),
                        theta_true: theta.0.iter().copied().collect(),
                        noise,
                        validation_noise: vnoise,
                        f_s: sim.f_s,
                        samples: train.len(),
                        validation_samples: val.len(),
                        seconds: secs(),
                    },
                )?;
                out.artifacts.extend(paths);
            }
            Stage::Filter => {
                let train = self.read_dataset(DATASET_FILE, "measured dataset", "simulate")?;
                let (ftrain, training) = filter_dataset(&train, &self.cfg.filter)?;
                let p = self.path(FILTERED_DATASET_FILE);
                ftrain.write(&p)?;
                out.artifacts.push(p);
                let vpath = self.path(VALIDATION_DATASET_FILE);
                let validation = if vpath.is_file() {
                    let (fval, summary) = filter_dataset(&Dataset::read(&vpath)?, &self.cfg.filter)?;
                    let p = self.path(FILTERED_VALIDATION_FILE);
                    fval.write(&p)?;
                    out.artifacts.push(p);
                    Some(summary)
                } else {
                    None
                };
                let p = self.path(FILTER_SUMMARY_FILE);
                write_json(&p, &FilterArtifact { training, validation, seconds: secs() })?;
                out.artifacts.push(p);
            }
            Stage::Identify => {
                self.trajectory(TRAJECTORY_FILE)?;
                let proj = self.projection()?;
                let ds = self.read_dataset(FILTERED_DATASET_FILE, "filtered dataset", "filter")?;
                let (lb, ub) = build_bounds(&self.chain, &proj, &self.cfg.identify.bounds())?;
                let report = identify(&self.chain, &proj, &ds, &lb, &ub, &self.cfg.identify.solver)?;
                let theta: BTreeMap<String, f64> = report.labels.iter().cloned().zip(report.theta_b_hat.iter().copied()).collect();
                let paths = [self.path(IDENT_REPORT_FILE), self.path(THETA_B_FILE)];
                write_json(
                    &paths[0],
                    &IdentArtifact { report, lb: lb.iter().copied().collect(), ub: ub.iter().copied().collect(), seconds: secs() },
                )?;
                write_json(&paths[1], &theta)?;
                out.artifacts.extend(paths);
            }
            Stage::Validate => {
                let ident: IdentArtifact = self.read_artifact(IDENT_REPORT_FILE, "identification report", "identify")?;
                let proj = self.projection()?;
                let ds = self.read_dataset(FILTERED_VALIDATION_FILE, "filtered validation dataset", "filter")?;
                let fit = validate(&self.chain, &proj, &DVector::from_vec(ident.report.theta_b_hat), &ds)?;
                let p = self.path(VALIDATION_REPORT_FILE);
                write_json(&p, &ValidationArtifact { fit, seconds: secs() })?;
                out.artifacts.push(p);
            }
            Stage::Report => {
                let p = self.path(REPORT_FILE);
                write_json(&p, &self.report()?)?;
                out.artifacts.push(p);
            }
        }
        Ok(out)
    }

    fn optional(&self, file: &str) -> Result<Option<Value>> {
        let path = self.path(file);
        if !path.is_file() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Some(serde_json::from_str(&text)?))
    }

    /// Summary of whatever artifacts exist. Each section names its source
    /// file; absent artifacts give `null` sections.
    pub fn report(&self) -> Result<Value> {
        let mut sections = serde_json::Map::new();
        let mut seconds = serde_json::Map::new();
        let pick = |v: &Value, keys: &[&str]| -> Value {
            keys.iter().map(|k| (k.to_string(), v.get(*k).cloned().unwrap_or(Value::Null))).collect::<serde_json::Map<_, _>>().into()
        };
        let entries: [(&str, &str, &str, &[&str]); 7] = [
            ("chain", "inspect", CHAIN_FILE, &["dof", "joint_names"]),
            ("base_params", "base-params", BASE_PARAMS_FILE, &["rank", "b_idx", "ill_conditioned"]),
            ("mfpee", "mfpee", MFPEE_FILE, &["k_star", "mu", "pi"]),
            (
                "optimization",
                "optimize",
                OPT_REPORT_FILE,
                &[
                    "r_c",
                    "cond_scaled",
                    "cond_raw",
                    "constraint_max_violation",
                    "feasible",
                    "start_index",
                    "step1_r_c",
                    "step2_r_c",
                    "dense_check",
                ],
            ),
            ("filter", "filter", FILTER_SUMMARY_FILE, &["training", "validation"]),
            (
                "identification",
                "identify",
                IDENT_REPORT_FILE,
                &[
                    "torque_rms_per_joint",
                    "max_abs_error_per_joint",
                    "cond_scaled",
                    "cond_raw",
                    "active_bounds",
                    "converged",
                    "kkt_satisfied",
                    "regularized",
                ],
            ),
            (
                "validation",
                "validate",
                VALIDATION_REPORT_FILE,
                &["torque_rms_per_joint", "max_abs_error_per_joint", "cond_scaled", "cond_raw", "n_samples"],
            ),
        ];
        for (name, stage, file, keys) in entries {
            match self.optional(file)? {
                Some(v) => {
                    let mut s = pick(&v, keys);
                    s["source"] = json!(file);
                    if let Some(t) = v.get("seconds") {
                        seconds.insert(stage.to_string(), t.clone());
                    }
                    sections.insert(name.to_string(), s);
                }
                None => {
                    sections.insert(name.to_string(), Value::Null);
                }
            }
        }
        if let Some(sim) = self.optional(SIM_REPORT_FILE)? {
            if let Some(t) = sim.get("seconds") {
                seconds.insert("simulate".into(), t.clone());
            }
        }
        sections.insert("theta_b_error".into(), self.theta_b_error()?);
        sections.insert("stage_seconds".into(), Value::Object(seconds));
        Ok(Value::Object(sections))
    }

    fn theta_b_error(&self) -> Result<Value> {
        let (Some(sim), Some(ident)) = (self.optional(SIM_REPORT_FILE)?, self.optional(IDENT_REPORT_FILE)?) else {
            return Ok(Value::Null);
        };
        let sim: SimReport = serde_json::from_value(sim)?;
        let ident: IdentArtifact = serde_json::from_value(ident)?;
        if sim.theta_b_true.len() != ident.report.theta_b_hat.len() {
            return Ok(Value::Null);
        }
        let truth = DVector::from_vec(sim.theta_b_true);
        let est = DVector::from_vec(ident.report.theta_b_hat);
        let err = &est - &truth;
        Ok(json!({
            "relative_linf": err.amax() / truth.amax().max(f64::MIN_POSITIVE),
            "per_parameter": ident.report.labels.iter().zip(err.iter()).map(|(l, e)| (l.clone(), json!(e))).collect::<serde_json::Map<_, _>>(),
            "sources": [SIM_REPORT_FILE, IDENT_REPORT_FILE],
        }))
    }
}
