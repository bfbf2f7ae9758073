//! Simulated population of two-degree-of-freedom mass-spring-damper
//! structures and the temperature-to-response regression tasks drawn from it.
//!
//! Each structure is a fixed-free chain (ground, spring/damper, m1,
//! spring/damper, m2) excited by a unit harmonic force on the first mass.
//! Temperature enters through the stiffness law
//! `k(T) = k0 - 13 T^2 + 500 T`, where `k0` is the structure's sampled base
//! stiffness.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use nalgebra::Matrix2;
use num_complex::Complex64;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub const DEFAULT_MASS: f64 = 1.0;
pub const DEFAULT_DAMPING: f64 = 10.0;
pub const DEFAULT_STIFFNESS_INTERVAL: (f64, f64) = (8000.0, 12000.0);

/// Temperature-dependent stiffness increment, `-13 T^2 + 500 T`.
pub fn stiffness_increment(temperature: f64) -> f64 {
    -13.0 * temperature * temperature + 500.0 * temperature
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureSpec {
    pub id: String,
    pub mass: f64,
    pub damping: f64,
    pub base_stiffness: f64,
}

impl StructureSpec {
    pub fn new(id: impl Into<String>, base_stiffness: f64) -> Self {
        StructureSpec {
            id: id.into(),
            mass: DEFAULT_MASS,
            damping: DEFAULT_DAMPING,
            base_stiffness,
        }
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.mass > 0.0 && self.mass.is_finite()) {
            return Err(Error::InvalidStructure(format!(
                "{}: mass must be positive, got {}",
                self.id, self.mass
            )));
        }
        if !(self.damping >= 0.0 && self.damping.is_finite()) {
            return Err(Error::InvalidStructure(format!(
                "{}: damping must be non-negative, got {}",
                self.id, self.damping
            )));
        }
        if !(self.base_stiffness > 0.0 && self.base_stiffness.is_finite()) {
            return Err(Error::InvalidStructure(format!(
                "{}: base stiffness must be positive, got {}",
                self.id, self.base_stiffness
            )));
        }
        Ok(())
    }
}

/// Closed interval of admissible operating temperatures, in degrees Celsius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureRange {
    pub lo: f64,
    pub hi: f64,
}

impl Default for TemperatureRange {
    fn default() -> Self {
        TemperatureRange { lo: 0.0, hi: 20.0 }
    }
}

impl TemperatureRange {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::invalid(format!(
                "temperature range [{lo}, {hi}] must be finite and increasing"
            )));
        }
        Ok(TemperatureRange { lo, hi })
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.lo && t <= self.hi
    }

    fn check(&self, t: f64) -> Result<()> {
        if self.contains(t) {
            Ok(())
        } else {
            Err(Error::TemperatureOutOfRange {
                temperature: t,
                lo: self.lo,
                hi: self.hi,
            })
        }
    }
}

/// Ordered list of spectral lines in Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    lines: Vec<f64>,
}

impl Default for FrequencyGrid {
    /// 1 Hz to 100 Hz inclusive at 1 Hz spacing.
    fn default() -> Self {
        FrequencyGrid {
            lines: (1..=100).map(f64::from).collect(),
        }
    }
}

impl FrequencyGrid {
    pub fn new(lines: Vec<f64>) -> Result<Self> {
        if lines.is_empty() {
            return Err(Error::Empty("frequency grid"));
        }
        if lines.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
            return Err(Error::invalid("frequency lines must be positive and finite"));
        }
        if lines.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("frequency lines must be strictly increasing"));
        }
        Ok(FrequencyGrid { lines })
    }

    pub fn lines(&self) -> &[f64] {
        &self.lines
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    /// Position of an exact grid line.
    pub fn index_of(&self, hz: f64) -> Option<usize> {
        self.lines.iter().position(|&f| f == hz)
    }
}

/// FRF magnitudes of both degrees of freedom at one temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct FrfSample {
    pub temperature: f64,
    pub magnitudes_dof1: Vec<f64>,
    pub magnitudes_dof2: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TargetKind {
    /// |H11| at a single grid line, in Hz.
    Line(f64),
    /// |H11| over the grid followed by |H21| over the grid.
    FullFrf,
}

impl TargetKind {
    pub const LINE_1HZ: TargetKind = TargetKind::Line(1.0);
    pub const LINE_50HZ: TargetKind = TargetKind::Line(50.0);

    pub fn target_dim(&self, grid: &FrequencyGrid) -> usize {
        match self {
            TargetKind::Line(_) => 1,
            TargetKind::FullFrf => 2 * grid.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub input: f64,
    pub target: Vec<f64>,
}

/// One structure's regression task: temperature to response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDataset {
    pub structure: StructureSpec,
    pub samples: Vec<Sample>,
    pub target_kind: TargetKind,
    pub temperature_range: TemperatureRange,
}

impl TaskDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn target_dim(&self) -> usize {
        self.samples.first().map_or(0, |s| s.target.len())
    }

    /// Same task with every target passed through `f`.
    pub fn map_targets(&self, mut f: impl FnMut(&[f64]) -> Vec<f64>) -> TaskDataset {
        TaskDataset {
            structure: self.structure.clone(),
            samples: self
                .samples
                .iter()
                .map(|s| Sample {
                    input: s.input,
                    target: f(&s.target),
                })
                .collect(),
            target_kind: self.target_kind,
            temperature_range: self.temperature_range,
        }
    }
}

/// Draws `count` structures with base stiffness i.i.d. uniform on
/// `stiffness_interval`.
pub fn sample_population(
    count: usize,
    stiffness_interval: (f64, f64),
    seed: u64,
) -> Result<Vec<StructureSpec>> {
    let (lo, hi) = stiffness_interval;
    if count == 0 {
        return Err(Error::invalid("population count must be at least 1"));
    }
    if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi) {
        return Err(Error::invalid(format!(
            "stiffness interval [{lo}, {hi}] must be positive and ordered"
        )));
    }
    let mut rng = seed::rng_for(seed, &[]);
    Ok((0..count)
        .map(|i| {
            let k0 = if lo == hi { lo } else { rng.gen_range(lo..=hi) };
            StructureSpec::new(format!("s{i:04}"), k0)
        })
        .collect())
}

pub fn stiffness_at(spec: &StructureSpec, temperature: f64, range: &TemperatureRange) -> Result<f64> {
    range.check(temperature)?;
    let k = spec.base_stiffness + stiffness_increment(temperature);
    if k <= 0.0 {
        return Err(Error::InvalidStructure(format!(
            "{}: stiffness {k} is not positive at T = {temperature}",
            spec.id
        )));
    }
    Ok(k)
}

/// Mass, damping and stiffness matrices of the fixed-free chain.
pub fn system_matrices(
    spec: &StructureSpec,
    temperature: f64,
    range: &TemperatureRange,
) -> Result<(Matrix2<f64>, Matrix2<f64>, Matrix2<f64>)> {
    spec.validate()?;
    let k = stiffness_at(spec, temperature, range)?;
    let pattern = Matrix2::new(2.0, -1.0, -1.0, 1.0);
    Ok((
        Matrix2::identity() * spec.mass,
        pattern * spec.damping,
        pattern * k,
    ))
}

/// Full 2x2 receptance matrix `(K + iωC - ω²M)^-1` at frequency `hz`.
pub fn receptance_matrix(
    spec: &StructureSpec,
    temperature: f64,
    hz: f64,
    range: &TemperatureRange,
) -> Result<[[Complex64; 2]; 2]> {
    let (m, c, k) = system_matrices(spec, temperature, range)?;
    receptance_from_matrices(&m, &c, &k, hz, &spec.id)
}

fn receptance_from_matrices(
    m: &Matrix2<f64>,
    c: &Matrix2<f64>,
    k: &Matrix2<f64>,
    hz: f64,
    id: &str,
) -> Result<[[Complex64; 2]; 2]> {
    let w = 2.0 * PI * hz;
    let a = |i: usize, j: usize| Complex64::new(k[(i, j)] - w * w * m[(i, j)], w * c[(i, j)]);
    let (a00, a01, a10, a11) = (a(0, 0), a(0, 1), a(1, 0), a(1, 1));
    let det = a00 * a11 - a01 * a10;
    let inv = 1.0 / det;
    if det.norm() == 0.0 || !inv.re.is_finite() || !inv.im.is_finite() {
        return Err(Error::InvalidStructure(format!(
            "{id}: dynamic stiffness is singular at {hz} Hz"
        )));
    }
    Ok([[a11 * inv, -a01 * inv], [-a10 * inv, a00 * inv]])
}

/// |H11| and |H21| for a unit force on the first degree of freedom.
pub fn frf_magnitudes(
    spec: &StructureSpec,
    temperature: f64,
    grid: &FrequencyGrid,
    range: &TemperatureRange,
) -> Result<FrfSample> {
    let (m, c, k) = system_matrices(spec, temperature, range)?;
    let mut dof1 = Vec::with_capacity(grid.len());
    let mut dof2 = Vec::with_capacity(grid.len());
    for &hz in grid.lines() {
        let h = receptance_from_matrices(&m, &c, &k, hz, &spec.id)?;
        dof1.push(h[0][0].norm());
        dof2.push(h[1][0].norm());
    }
    Ok(FrfSample {
        temperature,
        magnitudes_dof1: dof1,
        magnitudes_dof2: dof2,
    })
}

/// Target vector of `kind` for one temperature.
pub fn target_for(
    spec: &StructureSpec,
    temperature: f64,
    kind: TargetKind,
    grid: &FrequencyGrid,
    range: &TemperatureRange,
) -> Result<Vec<f64>> {
    match kind {
        TargetKind::Line(hz) => {
            if grid.index_of(hz).is_none() {
                return Err(Error::invalid(format!("{hz} Hz is not a grid line")));
            }
            let h = receptance_matrix(spec, temperature, hz, range)?;
            Ok(vec![h[0][0].norm()])
        }
        TargetKind::FullFrf => {
            let s = frf_magnitudes(spec, temperature, grid, range)?;
            let mut v = s.magnitudes_dof1;
            v.extend(s.magnitudes_dof2);
            Ok(v)
        }
    }
}

/// Samples `n_samples` temperatures uniformly and evaluates the targets.
pub fn make_task_dataset(
    spec: &StructureSpec,
    n_samples: usize,
    target_kind: TargetKind,
    temperature_range: TemperatureRange,
    grid: &FrequencyGrid,
    seed: u64,
) -> Result<TaskDataset> {
    if n_samples == 0 {
        return Err(Error::invalid("a task needs at least one sample"));
    }
    if let TargetKind::Line(hz) = target_kind {
        if grid.index_of(hz).is_none() {
            return Err(Error::invalid(format!("{hz} Hz is not a grid line")));
        }
    }
    let mut rng = seed::rng_for(seed, &[]);
    let samples = (0..n_samples)
        .map(|_| {
            let t = rng.gen_range(temperature_range.lo..=temperature_range.hi);
            target_for(spec, t, target_kind, grid, &temperature_range).map(|target| Sample {
                input: t,
                target,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TaskDataset {
        structure: spec.clone(),
        samples,
        target_kind,
        temperature_range,
    })
}

/// Writes datasets as `structure_id,k0,temperature,target_0,...`.
pub fn write_datasets_csv(datasets: &[TaskDataset], path: &Path) -> Result<()> {
    let dim = datasets.first().map_or(0, |d| d.target_dim());
    let mut out = String::from("structure_id,k0,temperature");
    for i in 0..dim {
        out.push_str(&format!(",target_{i}"));
    }
    out.push('\n');
    for d in datasets {
        for s in &d.samples {
            if s.target.len() != dim {
                return Err(Error::DimensionMismatch {
                    context: "dataset export",
                    expected: dim,
                    actual: s.target.len(),
                });
            }
            out.push_str(&format!("{},{},{}", d.structure.id, d.structure.base_stiffness, s.input));
            for v in &s.target {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub grid_hz: Vec<f64>,
    pub temperature_range: TemperatureRange,
    pub stiffness_interval: (f64, f64),
    pub seed: u64,
    pub samples_per_structure: usize,
    pub structures: Vec<StructureSpec>,
    pub files: Vec<String>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn range() -> TemperatureRange {
        TemperatureRange::default()
    }

    #[test]
    fn degenerate_interval_pins_stiffness() {
        let pop = sample_population(1, (8000.0, 8000.0), 42).unwrap();
        assert_eq!(pop.len(), 1);
        assert_eq!(pop[0].base_stiffness, 8000.0);
        assert_eq!(pop[0].mass, 1.0);
        assert_eq!(pop[0].damping, 10.0);
    }

    #[test]
    fn population_within_interval() {
        let pop = sample_population(200, (8000.0, 12000.0), 7).unwrap();
        assert_eq!(pop.len(), 200);
        assert!(pop.iter().all(|s| (8000.0..=12000.0).contains(&s.base_stiffness)));
    }

    #[test]
    fn population_errors() {
        assert!(sample_population(0, (8000.0, 12000.0), 1).is_err());
        assert!(sample_population(3, (12000.0, 8000.0), 1).is_err());
    }

    #[test]
    fn stiffness_law_values() {
        let r = range();
        assert_eq!(stiffness_at(&StructureSpec::new("a", 10000.0), 0.0, &r).unwrap(), 10000.0);
        assert_eq!(stiffness_at(&StructureSpec::new("a", 7200.0), 10.0, &r).unwrap(), 10900.0);
        let t = 500.0 / 26.0;
        let k = stiffness_at(&StructureSpec::new("a", 8000.0), t, &r).unwrap();
        assert!((k - (8000.0 + 250000.0 / 52.0)).abs() < 1e-9);
        assert!((k - 12807.69).abs() < 0.01);
        assert!(matches!(
            stiffness_at(&StructureSpec::new("a", 8000.0), 25.0, &r),
            Err(Error::TemperatureOutOfRange { .. })
        ));
    }

    #[test]
    fn matrices_of_the_chain() {
        let (m, c, k) = system_matrices(&StructureSpec::new("a", 10000.0), 0.0, &range()).unwrap();
        assert_eq!(m, Matrix2::identity());
        assert_eq!(k, Matrix2::new(20000.0, -10000.0, -10000.0, 10000.0));
        assert_eq!(c, Matrix2::new(20.0, -10.0, -10.0, 10.0));
        assert!((k.determinant() - 1e8).abs() < 1e-4);
    }

    #[test]
    fn grid_validation() {
        assert!(FrequencyGrid::new(vec![]).is_err());
        assert!(FrequencyGrid::new(vec![1.0, 1.0]).is_err());
        assert!(FrequencyGrid::new(vec![0.0, 1.0]).is_err());
        let g = FrequencyGrid::default();
        assert_eq!(g.len(), 100);
        assert_eq!(g.index_of(1.0), Some(0));
        assert_eq!(g.index_of(50.0), Some(49));
        assert_eq!(g.index_of(100.0), Some(99));
    }

    #[test]
    fn undamped_resonance_is_singular() {
        let mut spec = StructureSpec::new("u", 10000.0);
        spec.damping = 0.0;
        let lambda = (3.0 - 5f64.sqrt()) / 2.0;
        let hz = (lambda * 10000.0f64).sqrt() / (2.0 * PI);
        // Exactly singular only in exact arithmetic; the solve must either
        // fail cleanly or return a huge finite value.
        match receptance_matrix(&spec, 0.0, hz, &range()) {
            Err(Error::InvalidStructure(_)) => {}
            Ok(h) => assert!(h[0][0].norm() > 1.0),
            Err(e) => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn datasets_have_requested_shape() {
        let spec = StructureSpec::new("a", 9000.0);
        let g = FrequencyGrid::default();
        let d = make_task_dataset(&spec, 100, TargetKind::LINE_1HZ, range(), &g, 3).unwrap();
        assert_eq!(d.len(), 100);
        assert!(d.samples.iter().all(|s| s.target.len() == 1 && range().contains(s.input)));
        let d = make_task_dataset(&spec, 1, TargetKind::FullFrf, range(), &g, 3).unwrap();
        assert_eq!(d.samples[0].target.len(), 200);
        assert!(make_task_dataset(&spec, 5, TargetKind::Line(1.5), range(), &g, 3).is_err());
        assert!(make_task_dataset(&spec, 0, TargetKind::LINE_1HZ, range(), &g, 3).is_err());
    }

    #[test]
    fn datasets_are_deterministic() {
        let spec = StructureSpec::new("a", 9000.0);
        let g = FrequencyGrid::default();
        let a = make_task_dataset(&spec, 20, TargetKind::FullFrf, range(), &g, 11).unwrap();
        let b = make_task_dataset(&spec, 20, TargetKind::FullFrf, range(), &g, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn csv_export_header_and_rows() {
        let spec = StructureSpec::new("x1", 9000.0);
        let g = FrequencyGrid::new(vec![1.0, 2.0]).unwrap();
        let d = make_task_dataset(&spec, 3, TargetKind::FullFrf, range(), &g, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        write_datasets_csv(&[d], &p).unwrap();
        let text = std::fs::read_to_string(p).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "structure_id,k0,temperature,target_0,target_1,target_2,target_3");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("x1,9000,"));
    }
}
