use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};

use super::grid::TimeGrid;
use crate::error::{Error, Result};
use crate::rng::Stream;

const MAGIC: &[u8; 8] = b"OLNOISE\0";
const VERSION: u32 = 1;

#[derive(Clone, Debug)]
enum Source {
    Generated(Stream),
    Stored(Arc<Vec<f64>>),
}

/// Brownian increments for `n_paths` paths on a grid. Increments are drawn
/// on demand from a per-path substream, so nothing path-sized is held in
/// memory unless the ensemble was loaded from disk.
#[derive(Clone, Debug)]
pub struct PathEnsemble {
    grid: TimeGrid,
    d: usize,
    seed: u64,
    n_paths: usize,
    source: Source,
}

impl PathEnsemble {
    pub fn new(grid: TimeGrid, d: usize, seed: u64, n_paths: usize) -> Self {
        Self::with_label(grid, d, seed, n_paths, "market")
    }

    pub fn with_label(grid: TimeGrid, d: usize, seed: u64, n_paths: usize, label: &str) -> Self {
        Self {
            grid,
            d,
            seed,
            n_paths,
            source: Source::Generated(Stream::new(seed, label)),
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    /// Same noise source restricted to the first `n` paths.
    pub fn truncated(&self, n: usize) -> Self {
        let mut e = self.clone();
        e.n_paths = n.min(self.n_paths);
        e
    }

    /// Length of one path's increment buffer, `N · d`, laid out step-major.
    pub fn path_len(&self) -> usize {
        self.grid.steps() * self.d
    }

    pub fn increments(&self, path: usize, out: &mut [f64]) {
        match &self.source {
            Source::Generated(stream) => {
                fill_normal(stream, path as u64, &self.grid, 0, self.d, out);
            }
            Source::Stored(body) => {
                let len = self.path_len();
                out[..len].copy_from_slice(&body[path * len..(path + 1) * len]);
            }
        }
    }

    /// Noise for conditional sub-simulations branched at step `k0`: inner
    /// path `j` of outer path `o` gets its own substream.
    pub fn inner(&self, k0: usize, n_inner: usize) -> InnerNoise {
        InnerNoise {
            stream: Stream::new(self.seed, "inner").derive(k0 as u64),
            grid: self.grid.clone(),
            d: self.d,
            k0,
            n_inner,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(MAGIC)?;
        f.write_all(&VERSION.to_le_bytes())?;
        f.write_all(&self.seed.to_le_bytes())?;
        f.write_all(&(self.n_paths as u64).to_le_bytes())?;
        f.write_all(&(self.d as u32).to_le_bytes())?;
        f.write_all(&(self.grid.times().len() as u64).to_le_bytes())?;
        for t in self.grid.times() {
            f.write_all(&t.to_le_bytes())?;
        }
        let mut buf = vec![0.0; self.path_len()];
        for p in 0..self.n_paths {
            self.increments(p, &mut buf);
            for v in &buf {
                f.write_all(&v.to_le_bytes())?;
            }
        }
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 8];
        f.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::State("not a noise file".into()));
        }
        let version = read_u32(&mut f)?;
        if version != VERSION {
            return Err(Error::State(format!("unsupported noise file version {version}")));
        }
        let seed = read_u64(&mut f)?;
        let n_paths = read_u64(&mut f)? as usize;
        let d = read_u32(&mut f)? as usize;
        let n_times = read_u64(&mut f)? as usize;
        let times = (0..n_times).map(|_| read_f64(&mut f)).collect::<Result<Vec<_>>>()?;
        let grid = TimeGrid::from_times(times)?;
        let len = n_paths * grid.steps() * d;
        let mut bytes = vec![0u8; len * 8];
        f.read_exact(&mut bytes)?;
        let body = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self {
            grid,
            d,
            seed,
            n_paths,
            source: Source::Stored(Arc::new(body)),
        })
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    Ok(f64::from_bits(read_u64(r)?))
}

fn fill_normal(stream: &Stream, index: u64, grid: &TimeGrid, k0: usize, d: usize, out: &mut [f64]) {
    let mut rng = stream.rng(index);
    for k in k0..grid.steps() {
        let sd = grid.dt(k).sqrt();
        let base = (k - k0) * d;
        for j in 0..d {
            let z: f64 = StandardNormal.sample(&mut rng);
            out[base + j] = sd * z;
        }
    }
}

#[derive(Clone, Debug)]
pub struct InnerNoise {
    stream: Stream,
    grid: TimeGrid,
    d: usize,
    k0: usize,
    n_inner: usize,
}

impl InnerNoise {
    pub fn k0(&self) -> usize {
        self.k0
    }

    pub fn n_inner(&self) -> usize {
        self.n_inner
    }

    pub fn path_len(&self) -> usize {
        (self.grid.steps() - self.k0) * self.d
    }

    /// Increments for steps `k0..N` of inner path `j` under outer path `outer`.
    pub fn increments(&self, outer: usize, j: usize, out: &mut [f64]) {
        let index = (outer * self.n_inner + j) as u64;
        fill_normal(&self.stream, index, &self.grid, self.k0, self.d, out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn increments_are_reproducible() {
        let g = TimeGrid::uniform(1.0, 10).unwrap();
        let a = PathEnsemble::new(g.clone(), 2, 7, 4);
        let b = PathEnsemble::new(g, 2, 7, 4);
        let (mut x, mut y) = (vec![0.0; 20], vec![0.0; 20]);
        a.increments(3, &mut x);
        b.increments(3, &mut y);
        assert_eq!(x, y);
    }

    #[test]
    fn save_load_round_trip() {
        let g = TimeGrid::uniform(1.0, 5).unwrap();
        let a = PathEnsemble::new(g, 2, 11, 3);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("noise.bin");
        a.save(&p).unwrap();
        let b = PathEnsemble::load(&p).unwrap();
        assert_eq!(b.seed(), 11);
        assert_eq!(b.grid(), a.grid());
        let (mut x, mut y) = (vec![0.0; 10], vec![0.0; 10]);
        for i in 0..3 {
            a.increments(i, &mut x);
            b.increments(i, &mut y);
            assert_eq!(x, y);
        }
    }
}
