//! Dataset generation (sample parameters, build grids, solve, store), the
//! on-disk container and train/validation/test splits.
//!
//! A dataset directory holds `manifest.json`, `data.bin` and, when some draws
//! had to be resampled, `failures.log`. `data.bin` is the concatenation over
//! samples of the fields `f, phi, g, w`, each `nx·ny` little-endian f64 in
//! row-major node order, followed by the 32-byte SHA-256 of everything before it.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::exec::Execution;
use crate::geometry::{
    self, BoundaryParams, BoundaryRanges, EllipseParams, EllipseRanges, ForceParams, ForceRanges,
    GaussianShapeRanges, GaussianSumParams, Interval, ScalarField,
};
use crate::mesh::{interpolate_nodal, masks_for, BackgroundMesh, FieldGrid};
use crate::phifem::ground_truth;
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const FIELDS: [&str; 4] = ["f", "phi", "g", "w"];
pub const MANIFEST_FILE: &str = "manifest.json";
pub const DATA_FILE: &str = "data.bin";
pub const FAILURES_FILE: &str = "failures.log";
/// Resampling attempts after the first failed draw of a sample.
pub const MAX_RETRIES: u32 = 10;
const CHECKSUM_LEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SampleParams {
    Ellipse {
        ellipse: EllipseParams,
        force: ForceParams,
        bc: BoundaryParams,
    },
    GaussianShape {
        shape: GaussianSumParams,
        force: ForceParams,
        bc: BoundaryParams,
    },
}

impl SampleParams {
    /// Analytic level-set on an `nx × ny` grid.
    pub fn levelset(&self, nx: usize, ny: usize) -> Result<ScalarField> {
        match self {
            SampleParams::Ellipse { ellipse, .. } => Ok(ellipse.field()),
            SampleParams::GaussianShape { shape, .. } => geometry::gaussian_sum_levelset(shape, nx, ny),
        }
    }

    pub fn force(&self) -> ForceParams {
        match self {
            SampleParams::Ellipse { force, .. } | SampleParams::GaussianShape { force, .. } => *force,
        }
    }

    pub fn bc(&self) -> BoundaryParams {
        match self {
            SampleParams::Ellipse { bc, .. } | SampleParams::GaussianShape { bc, .. } => *bc,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub index: usize,
    /// Seed of the draw that was kept.
    pub seed: u64,
    /// Number of rejected draws before it.
    pub retries: u32,
    pub params: SampleParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub f: FieldGrid,
    pub phi: FieldGrid,
    pub g: FieldGrid,
    pub w: FieldGrid,
    pub record: SampleRecord,
}

impl Sample {
    pub fn fields(&self) -> [&FieldGrid; 4] {
        [&self.f, &self.phi, &self.g, &self.w]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub index: usize,
    pub retry: u32,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct EllipseGenerator {
    pub ellipse: EllipseRanges,
    /// Bounding-box margin; two grid cells when absent.
    pub margin: Option<f64>,
    pub force: ForceRanges,
    pub bc: BoundaryRanges,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaussianShapeGenerator {
    pub shape: GaussianShapeRanges,
    pub force: ForceRanges,
    pub bc: BoundaryRanges,
}

impl Default for GaussianShapeGenerator {
    fn default() -> Self {
        Self {
            shape: GaussianShapeRanges::default(),
            force: ForceRanges { allow_negative: false, ..ForceRanges::default() },
            bc: BoundaryRanges::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case")]
pub enum GeneratorConfig {
    Ellipse(EllipseGenerator),
    GaussianShape(GaussianShapeGenerator),
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            GeneratorConfig::Ellipse(c) => {
                c.ellipse.validate()?;
                c.force.validate()?;
                c.bc.validate()
            }
            GeneratorConfig::GaussianShape(c) => {
                c.shape.validate()?;
                c.force.validate()?;
                c.bc.validate()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub nx: usize,
    pub ny: usize,
    pub sigma_d: f64,
    pub master_seed: u64,
    pub generator: GeneratorConfig,
    pub samples: Vec<Sample>,
    pub failures: Vec<FailureRecord>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Seed of draw `retry` of sample `index`.
pub fn derive_seed(master: u64, index: u64, retry: u32) -> u64 {
    let mut h = Sha256::new();
    h.update(b"sample");
    h.update(master.to_le_bytes());
    h.update(index.to_le_bytes());
    h.update(retry.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

fn design_seed(master: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(b"design");
    h.update(master.to_le_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

/// Nodal grids for one parameter record, with `w` solved.
pub fn build_sample(params: &SampleParams, nx: usize, ny: usize, sigma_d: f64) -> Result<[FieldGrid; 4]> {
    let mesh = BackgroundMesh::new(nx, ny)?;
    let phi = interpolate_nodal(&params.levelset(nx, ny)?, &mesh)?;
    let masks = masks_for(&phi)?;
    if masks.count_s0() == 0 {
        return Err(Error::EmptyDomain);
    }
    let touches_border = (0..nx).any(|i| masks.s0[i * ny] || masks.s0[i * ny + ny - 1])
        || (0..ny).any(|j| masks.s0[j] || masks.s0[(nx - 1) * ny + j]);
    if touches_border {
        return Err(Error::Degenerate("active domain reaches the grid border".into()));
    }
    let f = interpolate_nodal(&params.force().field(), &mesh)?;
    let g = interpolate_nodal(&params.bc().field(), &mesh)?;
    let w = ground_truth(&f, &phi, &g, sigma_d, Execution::Sequential)?;
    Ok([f, phi, g, w])
}

fn draw_ellipse(rng: &mut ChaCha8Rng, cfg: &EllipseGenerator, nx: usize) -> Result<SampleParams> {
    let margin = cfg.margin.unwrap_or_else(|| geometry::default_margin(nx));
    let ellipse = geometry::sample_ellipse(rng, &cfg.ellipse, margin)?;
    let force = geometry::sample_force(rng, &ellipse.field(), &cfg.force)?;
    let bc = geometry::sample_bc(rng, &cfg.bc);
    Ok(SampleParams::Ellipse { ellipse, force, bc })
}

/// The 17 jointly stratified coordinates of a Gaussian-shape sample: three
/// centers, three σ, three γ, |A|, σx, σy, α, β. The force center is drawn
/// afterwards by rejection, since its admissible set depends on the shape.
fn gaussian_dims(cfg: &GaussianShapeGenerator) -> Vec<Interval> {
    let mut d = vec![cfg.shape.center; 6];
    d.extend([cfg.shape.width; 6]);
    d.extend([cfg.force.amplitude, cfg.force.sigma, cfg.force.sigma, cfg.bc.alpha, cfg.bc.beta]);
    d
}

fn gaussian_from_row(row: &[f64], rng: &mut ChaCha8Rng, cfg: &GaussianShapeGenerator, nx: usize, ny: usize) -> Result<SampleParams> {
    let shape = GaussianSumParams {
        centers: [[row[0], row[1]], [row[2], row[3]], [row[4], row[5]]],
        sigma: [row[6], row[7], row[8]],
        gamma: [row[9], row[10], row[11]],
    };
    let phi = geometry::gaussian_sum_levelset(&shape, nx, ny)?;
    let sign = if cfg.force.allow_negative && rng.random::<bool>() { -1.0 } else { 1.0 };
    let (mu0, mu1) = geometry::sample_interior_point(rng, &phi, cfg.force.mu, cfg.force.interior_threshold)?;
    let force = ForceParams { amplitude: sign * row[12], mu0, mu1, sigma_x: row[13], sigma_y: row[14] };
    let bc = BoundaryParams { alpha: row[15], beta: row[16] };
    Ok(SampleParams::GaussianShape { shape, force, bc })
}

fn uniform_row(rng: &mut ChaCha8Rng, dims: &[Interval]) -> Vec<f64> {
    dims.iter().map(|&(lo, hi)| lo + (hi - lo) * rng.random::<f64>()).collect()
}

struct Outcome {
    sample: Result<Sample>,
    failures: Vec<FailureRecord>,
}

fn generate_one(index: usize, master: u64, nx: usize, ny: usize, sigma_d: f64, gen: &GeneratorConfig, design: Option<&[f64]>) -> Outcome {
    let mut failures = Vec::new();
    for retry in 0..=MAX_RETRIES {
        let seed = derive_seed(master, index as u64, retry);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = match gen {
            GeneratorConfig::Ellipse(c) => draw_ellipse(&mut rng, c, nx),
            GeneratorConfig::GaussianShape(c) => {
                // The first draw keeps its design row; retries leave the design.
                let row = match (retry, design) {
                    (0, Some(r)) => r.to_vec(),
                    _ => uniform_row(&mut rng, &gaussian_dims(c)),
                };
                gaussian_from_row(&row, &mut rng, c, nx, ny)
            }
        };
        let built = params.and_then(|p| build_sample(&p, nx, ny, sigma_d).map(|g| (p, g)));
        match built {
            Ok((params, [f, phi, g, w])) => {
                let record = SampleRecord { index, seed, retries: retry, params };
                return Outcome { sample: Ok(Sample { f, phi, g, w, record }), failures };
            }
            Err(e) if e.is_numerical() => failures.push(FailureRecord { index, retry, seed, error: e.to_string() }),
            Err(e) => return Outcome { sample: Err(e), failures },
        }
    }
    let last = failures.last().map(|f| f.error.clone()).unwrap_or_default();
    Outcome {
        sample: Err(Error::Degenerate(format!(
            "sample {index} failed after {MAX_RETRIES} retries; last error: {last}"
        ))),
        failures,
    }
}

/// Generates `n` samples. Sample `i` depends only on `(seed, i)` (and, for
/// Gaussian shapes, the Latin-hypercube design drawn from `seed`), so the
/// result does not depend on `exec`.
pub fn generate(n: usize, nx: usize, ny: usize, seed: u64, sigma_d: f64, gen: &GeneratorConfig, exec: Execution) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("dataset size must be at least 1".into()));
    }
    if nx < 4 || ny < 4 {
        return Err(Error::InvalidArgument(format!("grid {nx}x{ny} too small for generation")));
    }
    if !(sigma_d > 0.0 && sigma_d.is_finite()) {
        return Err(Error::InvalidArgument(format!("sigma_D must be positive, got {sigma_d}")));
    }
    gen.validate()?;
    let design = match gen {
        GeneratorConfig::GaussianShape(c) => {
            let mut rng = ChaCha8Rng::seed_from_u64(design_seed(seed));
            Some(geometry::latin_hypercube(n, &gaussian_dims(c), &mut rng)?)
        }
        GeneratorConfig::Ellipse(_) => None,
    };
    let outcomes = exec.map_range(n, |i| generate_one(i, seed, nx, ny, sigma_d, gen, design.as_ref().map(|d| d[i].as_slice())));
    let mut samples = Vec::with_capacity(n);
    let mut failures = Vec::new();
    for o in outcomes {
        failures.extend(o.failures);
        samples.push(o.sample?);
    }
    Ok(Dataset { nx, ny, sigma_d, master_seed: seed, generator: *gen, samples, failures })
}

pub fn generate_ellipse_dataset(n: usize, nx: usize, ny: usize, seed: u64, sigma_d: f64, exec: Execution) -> Result<Dataset> {
    generate(n, nx, ny, seed, sigma_d, &GeneratorConfig::Ellipse(EllipseGenerator::default()), exec)
}

pub fn generate_gaussian_shape_dataset(n: usize, nx: usize, ny: usize, seed: u64, sigma_d: f64, exec: Execution) -> Result<Dataset> {
    generate(n, nx, ny, seed, sigma_d, &GeneratorConfig::GaussianShape(GaussianShapeGenerator::default()), exec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub nx: usize,
    pub ny: usize,
    pub n_samples: usize,
    pub fields: Vec<String>,
    pub scalar: String,
    pub byte_order: String,
    pub sigma_d: f64,
    pub generator: GeneratorConfig,
    pub master_seed: u64,
    pub samples: Vec<SampleRecord>,
    pub failures: Vec<FailureRecord>,
    /// Hex SHA-256 of the data section of `data.bin`.
    pub checksum: String,
}

impl DatasetManifest {
    pub fn blob_len(&self) -> usize {
        self.n_samples * FIELDS.len() * self.nx * self.ny * 8
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn write_dataset(d: &Dataset, dir: &Path) -> Result<()> {
    for s in &d.samples {
        if s.fields().iter().any(|g| g.nx != d.nx || g.ny != d.ny) {
            return Err(Error::ShapeMismatch(format!("sample {} does not match the {}x{} grid", s.record.index, d.nx, d.ny)));
        }
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut blob = Vec::with_capacity(d.len() * 4 * d.nx * d.ny * 8 + CHECKSUM_LEN);
    for s in &d.samples {
        for g in s.fields() {
            for v in &g.values {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let digest = Sha256::digest(&blob);
    blob.extend_from_slice(&digest);
    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        nx: d.nx,
        ny: d.ny,
        n_samples: d.len(),
        fields: FIELDS.iter().map(|s| s.to_string()).collect(),
        scalar: "f64".into(),
        byte_order: "little".into(),
        sigma_d: d.sigma_d,
        generator: d.generator,
        master_seed: d.master_seed,
        samples: d.samples.iter().map(|s| s.record).collect(),
        failures: d.failures.clone(),
        checksum: hex(&digest),
    };
    let data_path = dir.join(DATA_FILE);
    std::fs::write(&data_path, &blob).map_err(|e| Error::io(&data_path, e))?;
    let manifest_path = dir.join(MANIFEST_FILE);
    std::fs::write(&manifest_path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&manifest_path, e))?;
    let failures_path = dir.join(FAILURES_FILE);
    if d.failures.is_empty() {
        if failures_path.exists() {
            std::fs::remove_file(&failures_path).map_err(|e| Error::io(&failures_path, e))?;
        }
    } else {
        let mut w = BufWriter::new(File::create(&failures_path).map_err(|e| Error::io(&failures_path, e))?);
        for f in &d.failures {
            writeln!(w, "sample {} retry {} seed {}: {}", f.index, f.retry, f.seed, f.error).map_err(|e| Error::io(&failures_path, e))?;
        }
        w.flush().map_err(|e| Error::io(&failures_path, e))?;
    }
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let m: DatasetManifest = serde_json::from_slice(&text).map_err(|e| Error::format(&path, e.to_string()))?;
    if m.format_version != FORMAT_VERSION {
        return Err(Error::format(&path, format!("unsupported format version {}", m.format_version)));
    }
    if m.fields != FIELDS || m.scalar != "f64" || m.byte_order != "little" {
        return Err(Error::format(&path, "unsupported field list, scalar type or byte order"));
    }
    if m.samples.len() != m.n_samples {
        return Err(Error::format(&path, "per-sample log does not match n_samples"));
    }
    if m.nx < 2 || m.ny < 2 {
        return Err(Error::format(&path, "grid smaller than 2x2"));
    }
    Ok(m)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let m = read_manifest(dir)?;
    let path = dir.join(DATA_FILE);
    let blob = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    if blob.len() != m.blob_len() + CHECKSUM_LEN {
        return Err(Error::format(
            &path,
            format!("expected {} bytes for {} samples, found {}", m.blob_len() + CHECKSUM_LEN, m.n_samples, blob.len()),
        ));
    }
    let (data, sum) = blob.split_at(m.blob_len());
    let digest = Sha256::digest(data);
    if digest.as_slice() != sum || hex(&digest) != m.checksum {
        return Err(Error::format(&path, "checksum mismatch"));
    }
    let n = m.nx * m.ny;
    let mut values = data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let mut next = || FieldGrid::new(m.nx, m.ny, values.by_ref().take(n).collect());
    let mut samples = Vec::with_capacity(m.n_samples);
    for record in &m.samples {
        let (f, phi, g, w) = (next()?, next()?, next()?, next()?);
        samples.push(Sample { f, phi, g, w, record: *record });
    }
    Ok(Dataset {
        nx: m.nx,
        ny: m.ny,
        sigma_d: m.sigma_d,
        master_seed: m.master_seed,
        generator: m.generator,
        samples,
        failures: m.failures,
    })
}

/// Disjoint seeded partition into train, validation and test sets.
pub fn split(d: &Dataset, sizes: (usize, usize, usize), seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    let (a, b, c) = sizes;
    if a + b + c > d.len() {
        return Err(Error::InvalidArgument(format!("split sizes {sizes:?} exceed {} samples", d.len())));
    }
    let mut order: Vec<usize> = (0..d.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let part = |idx: &[usize]| Dataset {
        samples: idx.iter().map(|&i| d.samples[i].clone()).collect(),
        failures: Vec::new(),
        ..d.clone_meta()
    };
    Ok((part(&order[..a]), part(&order[a..a + b]), part(&order[a + b..a + b + c])))
}

impl Dataset {
    fn clone_meta(&self) -> Dataset {
        Dataset {
            nx: self.nx,
            ny: self.ny,
            sigma_d: self.sigma_d,
            master_seed: self.master_seed,
            generator: self.generator,
            samples: Vec::new(),
            failures: Vec::new(),
        }
    }
}
