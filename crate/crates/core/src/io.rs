//! On-disk formats: binary fields and sample matrices, checkpoints, JSON reports.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::grid::{SpectralGrid, TimeGrid};
use crate::network::{Architecture, InputScaling, NetworkParams};
use crate::physics::ModelSpec;
use crate::quadrature::SampleMatrix;
use crate::refsolver::Trajectory;
use crate::spectral::Field;
use crate::training::{Collocation, Domain};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("malformed file: {0}")]
    Format(String),
}

const CKPT_MAGIC: &[u8; 8] = b"GKDVCKPT";
const TRAJ_MAGIC: &[u8; 8] = b"GKDVTRAJ";

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IoError> {
        if self.buf.len() < n {
            return Err(IoError::Format(format!("truncated: wanted {n} bytes, {} left", self.buf.len())));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u64(&mut self) -> Result<u64, IoError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64, IoError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, IoError> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| IoError::Format("length overflow".into()))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }

    fn finish(&self) -> Result<(), IoError> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(IoError::Format(format!("{} trailing bytes", self.buf.len())))
        }
    }
}

fn count(n: u64) -> Result<usize, IoError> {
    usize::try_from(n).map_err(|_| IoError::Format(format!("count {n} too large")))
}

/// `.field`: `N` (u64), `R` (f64), then `N` pairs `(re, im)`; all little-endian.
pub fn encode_field(field: &Field<f64>) -> Vec<u8> {
    let n = field.grid().n_points();
    let mut out = Vec::with_capacity(16 + 16 * n);
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&field.grid().half_width().to_le_bytes());
    for v in field.values() {
        out.extend_from_slice(&v.re.to_le_bytes());
        out.extend_from_slice(&v.im.to_le_bytes());
    }
    out
}

pub fn decode_field(bytes: &[u8]) -> Result<Field<f64>, IoError> {
    let mut r = Reader { buf: bytes };
    let n = count(r.u64()?)?;
    let grid = SpectralGrid::new(r.f64()?, n).map_err(|e| IoError::Format(e.to_string()))?;
    let raw = r.f64s(2 * n)?;
    r.finish()?;
    let values = raw.chunks_exact(2).map(|c| Complex::new(c[0], c[1])).collect();
    Field::from_complex(grid, values).map_err(|e| IoError::Format(e.to_string()))
}

/// Sample matrix: the field header `N`, `R`, then `M` (u64), `T` (f64) and
/// the `M x N` real block, row-major with rows = time.
pub fn encode_samples(samples: &SampleMatrix<f64>) -> Vec<u8> {
    let (m, n) = (samples.rows(), samples.cols());
    let mut out = Vec::with_capacity(32 + 8 * m * n);
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&samples.space_grid().half_width().to_le_bytes());
    out.extend_from_slice(&(m as u64).to_le_bytes());
    out.extend_from_slice(&samples.time_grid().half_length().to_le_bytes());
    for v in samples.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_samples(bytes: &[u8]) -> Result<SampleMatrix<f64>, IoError> {
    let mut r = Reader { buf: bytes };
    let n = count(r.u64()?)?;
    let space = SpectralGrid::new(r.f64()?, n).map_err(|e| IoError::Format(e.to_string()))?;
    let m = count(r.u64()?)?;
    let time = TimeGrid::new(r.f64()?, m).map_err(|e| IoError::Format(e.to_string()))?;
    let values = r.f64s(m.checked_mul(n).ok_or_else(|| IoError::Format("length overflow".into()))?)?;
    r.finish()?;
    SampleMatrix::new(time, space, values).map_err(|e| IoError::Format(e.to_string()))
}

/// Metadata stored alongside checkpoint parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub arch: Architecture,
    pub scaling: InputScaling,
    pub seed: u64,
    pub k: u32,
    pub s: f64,
    pub domain: Domain,
    pub collocation: Collocation,
    pub iteration: usize,
    pub param_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: NetworkParams<f64>,
}

impl Checkpoint {
    pub fn new(params: NetworkParams<f64>, model: &ModelSpec, seed: u64, domain: Domain, collocation: Collocation, iteration: usize) -> Self {
        let meta = CheckpointMeta {
            arch: params.arch(),
            scaling: params.scaling(),
            seed,
            k: model.k,
            s: model.s,
            domain,
            collocation,
            iteration,
            param_count: params.flat().len(),
        };
        Self { meta, params }
    }

    /// `GKDVCKPT`, JSON length (u64 LE), JSON metadata, parameters (f64 LE).
    pub fn encode(&self) -> Result<Vec<u8>, IoError> {
        let json = serde_json::to_vec(&self.meta)?;
        let flat = self.params.flat();
        let mut out = Vec::with_capacity(16 + json.len() + 8 * flat.len());
        out.extend_from_slice(CKPT_MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for v in flat {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, IoError> {
        let mut r = Reader { buf: bytes };
        if r.take(8)? != CKPT_MAGIC {
            return Err(IoError::Format("not a checkpoint".into()));
        }
        let len = count(r.u64()?)?;
        let meta: CheckpointMeta = serde_json::from_slice(r.take(len)?)?;
        if meta.arch.param_count() != meta.param_count {
            return Err(IoError::Format("parameter count disagrees with architecture".into()));
        }
        let flat = r.f64s(meta.param_count)?;
        r.finish()?;
        let params = NetworkParams::from_flat(meta.arch, flat)
            .map_err(|e| IoError::Format(e.to_string()))?
            .with_scaling(meta.scaling);
        Ok(Self { meta, params })
    }

    pub fn save(&self, path: &Path) -> Result<(), IoError> {
        write_atomic(path, &self.encode()?)
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        Self::decode(&fs::read(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct TrajectoryHeader {
    times: Vec<f64>,
    model: ModelSpec,
    grid: SpectralGrid<f64>,
}

/// `.traj`: `GKDVTRAJ`, JSON header length (u64 LE), JSON `{times, model,
/// grid}`, then one `.field` record per saved time.
pub fn encode_trajectory(traj: &Trajectory) -> Result<Vec<u8>, IoError> {
    if traj.times.len() != traj.slices.len() {
        return Err(IoError::Format("trajectory has mismatched times and slices".into()));
    }
    let header = TrajectoryHeader {
        times: traj.times.clone(),
        model: traj.model,
        grid: traj.grid,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::new();
    out.extend_from_slice(TRAJ_MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for slice in &traj.slices {
        let field = Field::from_real(traj.grid, slice).map_err(|e| IoError::Format(e.to_string()))?;
        out.extend_from_slice(&encode_field(&field));
    }
    Ok(out)
}

pub fn decode_trajectory(bytes: &[u8]) -> Result<Trajectory, IoError> {
    let mut r = Reader { buf: bytes };
    if r.take(8)? != TRAJ_MAGIC {
        return Err(IoError::Format("not a trajectory".into()));
    }
    let len = count(r.u64()?)?;
    let header: TrajectoryHeader = serde_json::from_slice(r.take(len)?)?;
    let n = header.grid.n_points();
    let record = 16 + 16 * n;
    let mut slices = Vec::with_capacity(header.times.len());
    for _ in &header.times {
        let field = decode_field(r.take(record)?)?;
        if field.grid() != &header.grid {
            return Err(IoError::Format("slice grid differs from the header".into()));
        }
        slices.push(field.real_values());
    }
    r.finish()?;
    Ok(Trajectory {
        times: header.times,
        model: header.model,
        grid: header.grid,
        slices,
    })
}

pub fn save_trajectory(path: &Path, traj: &Trajectory) -> Result<(), IoError> {
    write_atomic(path, &encode_trajectory(traj)?)
}

pub fn load_trajectory(path: &Path) -> Result<Trajectory, IoError> {
    decode_trajectory(&fs::read(path)?)
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut text = serde_json::to_vec_pretty(value)?;
    text.push(b'\n');
    write_atomic(path, &text)
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let mut text = String::new();
    fs::File::open(path)?.read_to_string(&mut text)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn save_field(path: &Path, field: &Field<f64>) -> Result<(), IoError> {
    write_atomic(path, &encode_field(field))
}

pub fn load_field(path: &Path) -> Result<Field<f64>, IoError> {
    decode_field(&fs::read(path)?)
}

pub fn save_samples(path: &Path, samples: &SampleMatrix<f64>) -> Result<(), IoError> {
    write_atomic(path, &encode_samples(samples))
}

pub fn load_samples(path: &Path) -> Result<SampleMatrix<f64>, IoError> {
    decode_samples(&fs::read(path)?)
}
