//! Episode datasets and their binary container.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! "VFDS" | u16 version | u32 width | u32 height | u32 kappa | u64 seed | u32 n_episodes
//! per episode: u32 n_steps, then n_steps * (width*height + 4) f32
//!              (image row-major, state x, state y, action x, action y)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::Image;

pub const DATASET_MAGIC: &[u8; 4] = b"VFDS";
pub const DATASET_VERSION: u16 = 1;

/// Round to the nearest single-precision value.
#[inline]
pub fn f32_round(v: f64) -> f64 {
    f64::from(v as f32)
}

/// One recorded episode: per step an observation, the pusher position, and
/// the action commanded from that observation.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub frames: Vec<Image>,
    pub states: Vec<[f64; 2]>,
    pub actions: Vec<[f64; 2]>,
}

impl EpisodeRecord {
    /// Values are rounded to single precision so the record survives a
    /// save/load cycle unchanged.
    pub fn new(frames: Vec<Image>, states: Vec<[f64; 2]>, actions: Vec<[f64; 2]>) -> Result<Self> {
        if frames.len() != states.len() || frames.len() != actions.len() {
            return Err(Error::DimensionMismatch(format!(
                "episode has {} frames, {} states, {} actions",
                frames.len(),
                states.len(),
                actions.len()
            )));
        }
        if let Some(first) = frames.first() {
            if frames.iter().any(|f| f.dims() != first.dims()) {
                return Err(Error::DimensionMismatch(
                    "frame dimensions differ within episode".into(),
                ));
            }
        }
        let frames = frames
            .into_iter()
            .map(|mut f| {
                f.data_mut().iter_mut().for_each(|v| *v = f32_round(*v));
                f
            })
            .collect();
        let round2 = |v: [f64; 2]| [f32_round(v[0]), f32_round(v[1])];
        Ok(Self {
            frames,
            states: states.into_iter().map(round2).collect(),
            actions: actions.into_iter().map(round2).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub width: usize,
    pub height: usize,
    pub kappa: usize,
    pub seed: u64,
    pub episodes: Vec<EpisodeRecord>,
}

impl Dataset {
    pub fn new(width: usize, height: usize, kappa: usize, seed: u64) -> Self {
        Self {
            width,
            height,
            kappa,
            seed,
            episodes: Vec::new(),
        }
    }

    pub fn push(&mut self, ep: EpisodeRecord) -> Result<()> {
        if let Some(f) = ep.frames.first() {
            if f.dims() != (self.width, self.height) {
                return Err(Error::DimensionMismatch(format!(
                    "episode frames {}x{} in {}x{} dataset",
                    f.width(),
                    f.height(),
                    self.width,
                    self.height
                )));
            }
        }
        self.episodes.push(ep);
        Ok(())
    }

    pub fn total_steps(&self) -> usize {
        self.episodes.iter().map(EpisodeRecord::len).sum()
    }
}

/// Little-endian writer for the container formats.
pub(crate) struct LeWriter<W: Write> {
    inner: W,
}

impl<W: Write> LeWriter<W> {
    pub fn new(inner: W) -> Self {
        Self { inner }
    }
    pub fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.inner.write_all(b)?;
        Ok(())
    }
    pub fn u16(&mut self, v: u16) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    pub fn u32(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} overflows u32")))?;
        self.bytes(&v.to_le_bytes())
    }
    pub fn u64(&mut self, v: u64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    pub fn f32(&mut self, v: f64) -> Result<()> {
        self.bytes(&(v as f32).to_le_bytes())
    }
    pub fn into_inner(self) -> W {
        self.inner
    }
}

/// Little-endian reader that reports short reads as [`Error::TruncatedFile`].
pub(crate) struct LeReader<R: Read> {
    inner: R,
}

impl<R: Read> LeReader<R> {
    pub fn new(inner: R) -> Self {
        Self { inner }
    }
    fn fill(&mut self, buf: &mut [u8]) -> Result<()> {
        let mut read = 0;
        while read < buf.len() {
            match self.inner.read(&mut buf[read..]) {
                Ok(0) => {
                    return Err(Error::TruncatedFile {
                        expected: buf.len() - read,
                    })
                }
                Ok(n) => read += n,
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        Ok(())
    }
    pub fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let mut m = [0u8; 4];
        self.fill(&mut m)?;
        if &m != expected {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&m),
                String::from_utf8_lossy(expected)
            )));
        }
        Ok(())
    }
    pub fn u16(&mut self) -> Result<u16> {
        let mut b = [0u8; 2];
        self.fill(&mut b)?;
        Ok(u16::from_le_bytes(b))
    }
    pub fn u32(&mut self) -> Result<usize> {
        let mut b = [0u8; 4];
        self.fill(&mut b)?;
        Ok(u32::from_le_bytes(b) as usize)
    }
    pub fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.fill(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }
    pub fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let mut buf = vec![0u8; n * 4];
        self.fill(&mut buf)?;
        Ok(buf
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect())
    }
    /// True when no bytes remain.
    pub fn at_end(&mut self) -> Result<bool> {
        let mut b = [0u8; 1];
        Ok(self.inner.read(&mut b)? == 0)
    }
}

pub fn write_dataset<W: Write>(ds: &Dataset, out: W) -> Result<W> {
    let mut w = LeWriter::new(out);
    w.bytes(DATASET_MAGIC)?;
    w.u16(DATASET_VERSION)?;
    w.u32(ds.width)?;
    w.u32(ds.height)?;
    w.u32(ds.kappa)?;
    w.u64(ds.seed)?;
    w.u32(ds.episodes.len())?;
    for ep in &ds.episodes {
        w.u32(ep.len())?;
        for ((frame, s), a) in ep.frames.iter().zip(&ep.states).zip(&ep.actions) {
            for &v in frame.data() {
                w.f32(v)?;
            }
            w.f32(s[0])?;
            w.f32(s[1])?;
            w.f32(a[0])?;
            w.f32(a[1])?;
        }
    }
    Ok(w.into_inner())
}

pub fn read_dataset<R: Read>(input: R) -> Result<Dataset> {
    let mut r = LeReader::new(input);
    r.magic(DATASET_MAGIC)?;
    let version = r.u16()?;
    if version != DATASET_VERSION {
        return Err(Error::Format(format!("unsupported dataset version {version}")));
    }
    let width = r.u32()?;
    let height = r.u32()?;
    let kappa = r.u32()?;
    let seed = r.u64()?;
    let n_episodes = r.u32()?;
    let mut ds = Dataset::new(width, height, kappa, seed);
    let pixels = width * height;
    for _ in 0..n_episodes {
        let steps = r.u32()?;
        let mut frames = Vec::with_capacity(steps);
        let mut states = Vec::with_capacity(steps);
        let mut actions = Vec::with_capacity(steps);
        for _ in 0..steps {
            let vals = r.f32s(pixels + 4)?;
            frames.push(Image::from_vec(width, height, vals[..pixels].to_vec())?);
            states.push([vals[pixels], vals[pixels + 1]]);
            actions.push([vals[pixels + 2], vals[pixels + 3]]);
        }
        ds.push(EpisodeRecord {
            frames,
            states,
            actions,
        })?;
    }
    if !r.at_end()? {
        return Err(Error::Format("trailing bytes after last episode".into()));
    }
    Ok(ds)
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let file = File::create(path)?;
    let mut w = write_dataset(ds, BufWriter::new(file))?;
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    read_dataset(BufReader::new(File::open(path)?))
}
