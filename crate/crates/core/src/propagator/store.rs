use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;

use super::Trajectory;
use crate::error::{CoreError, Result};
use crate::grid::TimeGrid;

const MAGIC: &[u8; 8] = b"SDTRAJ01";
const HEADER_LEN: u64 = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoreManifest {
    pub model_hash: u64,
    pub grid: TimeGrid,
    pub seed0: u64,
    pub count: u64,
    pub d_s: usize,
}

impl StoreManifest {
    /// Bytes per trajectory record: the seed and `(n_steps+1) d_s²` complex doubles.
    pub fn record_len(&self) -> u64 {
        8 + (self.grid.len() * self.d_s * self.d_s * 16) as u64
    }

    fn encode(&self) -> [u8; HEADER_LEN as usize] {
        let mut out = [0u8; HEADER_LEN as usize];
        out[..8].copy_from_slice(MAGIC);
        let fields = [
            self.model_hash,
            self.grid.t0().to_bits(),
            self.grid.dt().to_bits(),
            self.grid.n_steps() as u64,
            self.seed0,
            self.count,
            self.d_s as u64,
        ];
        for (i, f) in fields.iter().enumerate() {
            out[8 + 8 * i..16 + 8 * i].copy_from_slice(&f.to_le_bytes());
        }
        out
    }

    fn decode(bytes: &[u8; HEADER_LEN as usize]) -> Result<Self> {
        if &bytes[..8] != MAGIC {
            return Err(CoreError::Store("not a trajectory store (bad magic)".into()));
        }
        let field = |i: usize| u64::from_le_bytes(bytes[8 + 8 * i..16 + 8 * i].try_into().expect("8 bytes"));
        let grid = TimeGrid::new(f64::from_bits(field(1)), f64::from_bits(field(2)), field(3) as usize)?;
        Ok(Self {
            model_hash: field(0),
            grid,
            seed0: field(4),
            count: field(5),
            d_s: field(6) as usize,
        })
    }
}

/// Append-only binary file of trajectory records behind a fixed header.
/// The header count is rewritten only after a record is fully written, so
/// an interrupted append leaves a consistent store.
#[derive(Debug)]
pub struct TrajectoryStore {
    path: PathBuf,
    file: File,
    manifest: StoreManifest,
}

impl TrajectoryStore {
    /// Creates (or truncates) a store for trajectories starting at `seed0`.
    pub fn create(path: impl AsRef<Path>, model_hash: u64, grid: TimeGrid, seed0: u64, d_s: usize) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(true)
            .open(&path)?;
        let manifest = StoreManifest {
            model_hash,
            grid,
            seed0,
            count: 0,
            d_s,
        };
        file.write_all(&manifest.encode())?;
        file.flush()?;
        Ok(Self { path, file, manifest })
    }

    /// Opens an existing store, discarding any partially written record.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut file = OpenOptions::new().read(true).write(true).open(&path)?;
        let mut header = [0u8; HEADER_LEN as usize];
        file.read_exact(&mut header)
            .map_err(|e| CoreError::Store(format!("{}: truncated header ({e})", path.display())))?;
        let manifest = StoreManifest::decode(&header)?;
        let expected = HEADER_LEN + manifest.count * manifest.record_len();
        let actual = file.metadata()?.len();
        if actual < expected {
            return Err(CoreError::Store(format!(
                "{}: manifest lists {} records but file holds {actual} bytes",
                path.display(),
                manifest.count
            )));
        }
        if actual > expected {
            file.set_len(expected)?;
        }
        Ok(Self { path, file, manifest })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn manifest(&self) -> &StoreManifest {
        &self.manifest
    }

    pub fn len(&self) -> usize {
        self.manifest.count as usize
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.count == 0
    }

    pub fn append(&mut self, traj: &Trajectory) -> Result<()> {
        let m = &self.manifest;
        if traj.grid != m.grid || traj.d_s != m.d_s {
            return Err(CoreError::Structural("trajectory shape does not match store".into()));
        }
        let expected_seed = m.seed0 + m.count;
        if traj.seed != expected_seed {
            return Err(CoreError::Structural(format!(
                "store expects seed {expected_seed}, got {}",
                traj.seed
            )));
        }
        let mut buf = Vec::with_capacity(m.record_len() as usize);
        buf.extend_from_slice(&traj.seed.to_le_bytes());
        for z in &traj.rho {
            buf.extend_from_slice(&z.re.to_le_bytes());
            buf.extend_from_slice(&z.im.to_le_bytes());
        }
        self.file.seek(SeekFrom::Start(HEADER_LEN + m.count * m.record_len()))?;
        self.file.write_all(&buf)?;
        let mut updated = *m;
        updated.count += 1;
        self.file.seek(SeekFrom::Start(0))?;
        self.file.write_all(&updated.encode())?;
        self.file.flush()?;
        self.manifest = updated;
        Ok(())
    }

    pub fn read(&mut self, index: usize) -> Result<Trajectory> {
        let m = self.manifest;
        if index as u64 >= m.count {
            return Err(CoreError::Store(format!("record {index} out of range ({} stored)", m.count)));
        }
        let mut buf = vec![0u8; m.record_len() as usize];
        self.file.seek(SeekFrom::Start(HEADER_LEN + index as u64 * m.record_len()))?;
        self.file.read_exact(&mut buf)?;
        let seed = u64::from_le_bytes(buf[..8].try_into().expect("8 bytes"));
        let rho = buf[8..]
            .chunks_exact(16)
            .map(|c| {
                Complex64::new(
                    f64::from_le_bytes(c[..8].try_into().expect("8 bytes")),
                    f64::from_le_bytes(c[8..].try_into().expect("8 bytes")),
                )
            })
            .collect();
        Ok(Trajectory {
            seed,
            grid: m.grid,
            d_s: m.d_s,
            rho,
        })
    }

    /// Writes one record as CSV: `t` then `re_i_j,im_i_j` for every entry.
    pub fn export_csv<W: Write>(&mut self, index: usize, mut out: W) -> Result<()> {
        let traj = self.read(index)?;
        let d = traj.d_s;
        write!(out, "t")?;
        for i in 1..=d {
            for j in 1..=d {
                write!(out, ",re_{i}_{j},im_{i}_{j}")?;
            }
        }
        writeln!(out)?;
        for k in 0..traj.len() {
            write!(out, "{:?}", traj.grid.time(k))?;
            for z in traj.rho_at(k) {
                write!(out, ",{:?},{:?}", z.re, z.im)?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}
