//! File formats: JSON datasets and solutions, CSV tables, plain coordinate lists.
//!
//! Every writer goes through [`write_atomic`], so a file is either absent or
//! complete. Reals are written in Rust's shortest round-trip form and parsed
//! back exactly.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{Ellipsoid, ErrorStats, Superposition};
use crate::model::{Constraint, ConstraintKind, CovarianceMatrix, CycleReport, SolveConfig, StateVector};
use crate::scheduler::Solution;
use crate::synth::{Dataset, NoiseSpec};

pub const DATASET_SCHEMA: &str = "dikf-dataset/1";
pub const SOLUTION_SCHEMA: &str = "dikf-solution/1";
pub const EVALUATION_SCHEMA: &str = "dikf-evaluation/1";

/// Writes `bytes` to a temporary file next to `path`, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::Builder::new().prefix(".dikf-").tempfile_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    out.push(b'\n');
    Ok(out)
}

fn from_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn check_schema(found: &str, expected: &str) -> Result<()> {
    if found != expected {
        return Err(Error::Format(format!("schema `{found}`, expected `{expected}`")));
    }
    Ok(())
}

/// One constraint as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintRecord {
    pub id: u64,
    pub kind: String,
    pub atoms: Vec<usize>,
    pub measured: f64,
    pub variance: f64,
}

impl From<&Constraint> for ConstraintRecord {
    fn from(c: &Constraint) -> Self {
        Self {
            id: c.id(),
            kind: c.kind().name().to_string(),
            atoms: c.atoms().to_vec(),
            measured: c.measured(),
            variance: c.variance(),
        }
    }
}

impl ConstraintRecord {
    pub fn to_constraint(&self) -> Result<Constraint> {
        let kind = ConstraintKind::from_parts(&self.kind, &self.atoms)?;
        Constraint::new(self.id, kind, self.measured, self.variance)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetFile {
    pub schema: String,
    pub n_atoms: usize,
    pub fraction: f64,
    /// Seed of the target walk and of the subset draw.
    pub seed: u64,
    pub noise: NoiseSpec,
    pub target: Option<Vec<[f64; 3]>>,
    pub constraints: Vec<ConstraintRecord>,
}

impl From<&Dataset> for DatasetFile {
    fn from(ds: &Dataset) -> Self {
        Self {
            schema: DATASET_SCHEMA.to_string(),
            n_atoms: ds.n_atoms,
            fraction: ds.fraction,
            seed: ds.seed,
            noise: ds.noise,
            target: ds.target.clone(),
            constraints: ds.constraints.iter().map(ConstraintRecord::from).collect(),
        }
    }
}

impl DatasetFile {
    pub fn into_dataset(self) -> Result<Dataset> {
        check_schema(&self.schema, DATASET_SCHEMA)?;
        self.noise.validate()?;
        let constraints = self.constraints.iter().map(ConstraintRecord::to_constraint).collect::<Result<Vec<_>>>()?;
        let ds = Dataset {
            n_atoms: self.n_atoms,
            constraints,
            noise: self.noise,
            target: self.target,
            fraction: self.fraction,
            seed: self.seed,
        };
        ds.validate()?;
        Ok(ds)
    }
}

pub fn dataset_to_json(ds: &Dataset) -> Result<Vec<u8>> {
    to_json(&DatasetFile::from(ds))
}

pub fn save_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    write_atomic(path, &dataset_to_json(ds)?)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    from_json::<DatasetFile>(path)?.into_dataset()
}

/// `E` for one constraint; `None` when it could not be evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub id: u64,
    pub error: Option<f64>,
}

/// Where a solution came from: the dataset's generating parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub dataset_seed: u64,
    pub fraction: f64,
    pub noise: NoiseSpec,
}

impl From<&Dataset> for Provenance {
    fn from(ds: &Dataset) -> Self {
        Self { dataset_seed: ds.seed, fraction: ds.fraction, noise: ds.noise }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionFile {
    pub schema: String,
    pub n_atoms: usize,
    pub converged: bool,
    pub cycles_run: usize,
    pub best_cycle: usize,
    pub config: SolveConfig,
    pub provenance: Provenance,
    pub coordinates: Vec<[f64; 3]>,
    /// Diagonal 3×3 block of each atom, row-major.
    pub atom_covariances: Vec<[[f64; 3]; 3]>,
    /// Full covariance, one row per coordinate.
    pub covariance: Vec<Vec<f64>>,
    pub errors: Vec<ErrorRecord>,
}

impl SolutionFile {
    pub fn new(solution: &Solution, cfg: &SolveConfig, dataset: &Dataset) -> Result<Self> {
        let cov = &solution.covariance;
        let n = solution.state.n_atoms();
        let mut blocks = Vec::with_capacity(n);
        for i in 0..n {
            let b = cov.atom_block(i, i)?;
            blocks.push([0, 1, 2].map(|r| [0, 1, 2].map(|c| b[(r, c)])));
        }
        let m = cov.as_matrix();
        Ok(Self {
            schema: SOLUTION_SCHEMA.to_string(),
            n_atoms: n,
            converged: solution.converged,
            cycles_run: solution.cycles_run,
            best_cycle: solution.best_cycle,
            config: cfg.clone(),
            provenance: Provenance::from(dataset),
            coordinates: solution.state.to_points(),
            atom_covariances: blocks,
            covariance: (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect(),
            errors: solution
                .per_constraint_errors
                .iter()
                .map(|&(id, e)| ErrorRecord { id, error: e.is_finite().then_some(e) })
                .collect(),
        })
    }

    pub fn state(&self) -> Result<StateVector> {
        StateVector::from_points(&self.coordinates)
    }

    pub fn covariance_matrix(&self) -> Result<CovarianceMatrix> {
        let dim = 3 * self.n_atoms;
        if self.covariance.len() != dim || self.covariance.iter().any(|r| r.len() != dim) {
            return Err(Error::Format(format!("covariance is not {dim}×{dim}")));
        }
        CovarianceMatrix::from_matrix(DMatrix::from_fn(dim, dim, |r, c| self.covariance[r][c]))
    }

    fn validate(&self) -> Result<()> {
        check_schema(&self.schema, SOLUTION_SCHEMA)?;
        if self.coordinates.len() != self.n_atoms || self.atom_covariances.len() != self.n_atoms {
            return Err(Error::Format("solution arrays disagree with n_atoms".into()));
        }
        self.state()?;
        self.covariance_matrix()?;
        self.config.validate()
    }
}

pub fn save_solution(path: &Path, file: &SolutionFile) -> Result<()> {
    write_atomic(path, &to_json(file)?)
}

pub fn load_solution(path: &Path) -> Result<SolutionFile> {
    let file: SolutionFile = from_json(path)?;
    file.validate()?;
    Ok(file)
}

/// `# key: value` lines that make a table self-describing.
fn provenance_header(out: &mut String, lines: &[(&str, String)]) {
    for (k, v) in lines {
        let _ = writeln!(out, "# {k}: {v}");
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Cycle trace as CSV, with the config and provenance as leading comments.
pub fn trace_csv(trace: &[CycleReport], cfg: &SolveConfig, provenance: &Provenance) -> Result<String> {
    let mut out = String::new();
    provenance_header(
        &mut out,
        &[
            ("config", serde_json::to_string(cfg).map_err(|e| Error::Format(e.to_string()))?),
            ("provenance", serde_json::to_string(provenance).map_err(|e| Error::Format(e.to_string()))?),
        ],
    );
    out.push_str("cycle,avg_error,max_error,rmsd_to_target,skipped,wall_time\n");
    for r in trace {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.cycle,
            r.avg_error,
            r.max_error,
            opt(r.rmsd_to_target),
            r.skipped,
            r.wall_time
        );
    }
    Ok(out)
}

pub fn histogram_csv(stats: &ErrorStats) -> String {
    let mut out = String::from("bin_start,bin_end,count\n");
    for &(start, count) in &stats.histogram {
        let _ = writeln!(out, "{},{},{}", start, start + stats.bin_width, count);
    }
    out
}

/// Block-norm matrix as CSV, one row per atom.
pub fn covariance_map_csv(map: &DMatrix<f64>) -> String {
    let mut out = String::from("atom");
    for j in 0..map.ncols() {
        let _ = write!(out, ",{j}");
    }
    out.push('\n');
    for i in 0..map.nrows() {
        let _ = write!(out, "{i}");
        for j in 0..map.ncols() {
            let _ = write!(out, ",{}", map[(i, j)]);
        }
        out.push('\n');
    }
    out
}

pub fn ellipsoids_csv(ellipsoids: &[Ellipsoid], k_sd: f64) -> String {
    let mut out = String::new();
    provenance_header(&mut out, &[("k_sd", k_sd.to_string())]);
    out.push_str("atom,x,y,z,a1,a2,a3,u1x,u1y,u1z,u2x,u2y,u2z,u3x,u3y,u3z\n");
    for (i, e) in ellipsoids.iter().enumerate() {
        let _ = write!(out, "{i},{},{},{}", e.center[0], e.center[1], e.center[2]);
        for a in e.semi_axes {
            let _ = write!(out, ",{a}");
        }
        for axis in e.axes {
            for c in axis {
                let _ = write!(out, ",{c}");
            }
        }
        out.push('\n');
    }
    out
}

/// Summary written by `evaluate`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub schema: String,
    pub avg_error: f64,
    pub max_error: f64,
    pub evaluated: usize,
    pub skipped: usize,
    pub superposition: Option<Superposition>,
    pub config: SolveConfig,
    pub provenance: Provenance,
}

pub fn evaluation_to_json(report: &EvaluationReport) -> Result<Vec<u8>> {
    to_json(report)
}

/// Parses `x y z` lines; blank lines and `#` comments are ignored.
pub fn parse_coordinates(text: &str) -> Result<Vec<[f64; 3]>> {
    let mut points = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let bad = || Error::Format(format!("line {}: expected `x y z`, got `{raw}`", lineno + 1));
        if fields.len() != 3 {
            return Err(bad());
        }
        let mut p = [0.0; 3];
        for (slot, f) in p.iter_mut().zip(&fields) {
            *slot = f.parse::<f64>().map_err(|_| bad())?;
            if !slot.is_finite() {
                return Err(bad());
            }
        }
        points.push(p);
    }
    if points.is_empty() {
        return Err(Error::Format("no coordinates found".into()));
    }
    Ok(points)
}

pub fn load_coordinates(path: &Path) -> Result<Vec<[f64; 3]>> {
    parse_coordinates(&std::fs::read_to_string(path)?)
}

pub fn format_coordinates(points: &[[f64; 3]]) -> String {
    let mut out = String::from("# x y z\n");
    for p in points {
        let _ = writeln!(out, "{} {} {}", p[0], p[1], p[2]);
    }
    out
}
