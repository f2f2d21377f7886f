//! Little-endian binary dumps.
//!
//! Noise: `n, dt, steps, seed, stream_id` as 64-bit fields, then the
//! increments row-major. Kernels and paths start with a type byte (`K`, `P`)
//! followed by their own 64-bit header fields and row-major data.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::gaussian::CovarianceKernel;
use crate::lattice::{DomainGrid, ScalarField};
use crate::noise::NoiseRealisation;

const KERNEL_TAG: u8 = b'K';
const PATH_TAG: u8 = b'P';

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_floats<'a>(out: &mut Vec<u8>, vs: impl Iterator<Item = &'a f64>) {
    for v in vs {
        put_f64(out, *v);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, k: usize) -> Result<&'a [u8]> {
        if self.pos + k > self.buf.len() {
            return Err(Error::Config(format!("dump truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + k];
        self.pos += k;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn floats(&mut self, count: usize) -> Result<Vec<f64>> {
        (0..count).map(|_| self.f64()).collect()
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Config(format!("{} trailing bytes in dump", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::File::create(path)?.write_all(bytes)?;
    Ok(())
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    Ok(buf)
}

pub fn encode_noise(xi: &NoiseRealisation) -> Vec<u8> {
    let mut out = Vec::with_capacity(40 + 8 * xi.increments.len());
    put_u64(&mut out, xi.grid.n() as u64);
    put_f64(&mut out, xi.dt);
    put_u64(&mut out, xi.steps() as u64);
    put_u64(&mut out, xi.seed);
    put_u64(&mut out, xi.stream_id);
    put_floats(&mut out, xi.increments.iter());
    out
}

/// The dump carries no start time; the caller supplies it.
pub fn decode_noise(bytes: &[u8], t_start: f64) -> Result<NoiseRealisation> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let grid = DomainGrid::new(r.u64()? as usize)?;
    let dt = r.f64()?;
    let steps = r.u64()? as usize;
    let seed = r.u64()?;
    let stream_id = r.u64()?;
    let data = r.floats(steps * grid.len())?;
    r.finish()?;
    let increments = Array2::from_shape_vec((steps, grid.len()), data).expect("shape checked");
    Ok(NoiseRealisation { grid, dt, t_start, seed, stream_id, increments })
}

pub fn encode_kernel(k: &CovarianceKernel) -> Vec<u8> {
    let mut out = vec![KERNEL_TAG];
    put_u64(&mut out, k.grid.n() as u64);
    put_f64(&mut out, k.eps_pair.0);
    put_f64(&mut out, k.eps_pair.1);
    put_floats(&mut out, k.matrix.iter());
    out
}

/// Kernel matrix with its grid and scale pair; the covariance method is not
/// stored.
pub fn decode_kernel(bytes: &[u8]) -> Result<(DomainGrid, (f64, f64), Array2<f64>)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(1)?[0] != KERNEL_TAG {
        return Err(Error::Config("not a kernel dump".into()));
    }
    let grid = DomainGrid::new(r.u64()? as usize)?;
    let eps = (r.f64()?, r.f64()?);
    let data = r.floats(grid.len() * grid.len())?;
    r.finish()?;
    Ok((grid, eps, Array2::from_shape_vec((grid.len(), grid.len()), data).expect("shape checked")))
}

/// Header: tag, `n`, slice count, then one time per slice before the data.
pub fn encode_path(path: &[ScalarField]) -> Result<Vec<u8>> {
    let first = path.first().ok_or_else(|| Error::InsufficientData("empty path".into()))?;
    let g = *first.grid();
    let mut out = vec![PATH_TAG];
    put_u64(&mut out, g.n() as u64);
    put_u64(&mut out, path.len() as u64);
    for p in path {
        if p.grid() != &g {
            return Err(Error::GridMismatch("path slices on different grids".into()));
        }
        put_f64(&mut out, p.time().unwrap_or(f64::NAN));
    }
    for p in path {
        put_floats(&mut out, p.values().iter());
    }
    Ok(out)
}

pub fn decode_path(bytes: &[u8]) -> Result<Vec<ScalarField>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(1)?[0] != PATH_TAG {
        return Err(Error::Config("not a path dump".into()));
    }
    let grid = DomainGrid::new(r.u64()? as usize)?;
    let slices = r.u64()? as usize;
    let times = r.floats(slices)?;
    let mut out = Vec::with_capacity(slices);
    for t in times {
        let f = ScalarField::from_values(grid, r.floats(grid.len())?.into())?;
        out.push(if t.is_nan() { f } else { f.with_time(t) });
    }
    r.finish()?;
    Ok(out)
}

pub fn write_noise(path: &Path, xi: &NoiseRealisation) -> Result<()> {
    write_file(path, &encode_noise(xi))
}

pub fn read_noise(path: &Path, t_start: f64) -> Result<NoiseRealisation> {
    decode_noise(&read_file(path)?, t_start)
}

pub fn write_kernel(path: &Path, k: &CovarianceKernel) -> Result<()> {
    write_file(path, &encode_kernel(k))
}

pub fn write_path(path: &Path, p: &[ScalarField]) -> Result<()> {
    write_file(path, &encode_path(p)?)
}

pub fn read_path(path: &Path) -> Result<Vec<ScalarField>> {
    decode_path(&read_file(path)?)
}
