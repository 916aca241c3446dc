use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const LAPF_MAGIC: &[u8; 4] = b"LAPF";
pub const LAPF_VERSION: u8 = 1;
const HEADER_LEN: usize = 4 + 1 + 12;

/// A labelled stream of per-frame features.
///
/// Features are stored at single precision, exactly as on disk, and
/// promoted to `f64` on access. Label 0 is background; action labels run
/// `1..=num_classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub name: String,
    pub num_classes: u32,
    pub dim: usize,
    pub features: Vec<f32>,
    pub labels: Vec<u16>,
}

impl FeatureSequence {
    pub fn new(name: impl Into<String>, num_classes: u32, dim: usize, features: Vec<f32>, labels: Vec<u16>) -> Result<Self> {
        let seq = FeatureSequence {
            name: name.into(),
            num_classes,
            dim,
            features,
            labels,
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Dimension("feature dimension must be positive".into()));
        }
        if self.features.len() != self.labels.len() * self.dim {
            return Err(Error::Dimension(format!(
                "{} feature values for {} frames of dimension {}",
                self.features.len(),
                self.labels.len(),
                self.dim
            )));
        }
        if let Some(t) = self.features.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite feature in frame {}", t / self.dim)));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| u32::from(l) > self.num_classes) {
            return Err(Error::Dimension(format!(
                "label {bad} exceeds {} action classes",
                self.num_classes
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Frame `t` promoted to double precision.
    pub fn frame(&self, t: usize) -> Vec<f64> {
        self.features[t * self.dim..(t + 1) * self.dim]
            .iter()
            .map(|&v| f64::from(v))
            .collect()
    }

    pub fn label(&self, t: usize) -> usize {
        usize::from(self.labels[t])
    }

    /// Classifier outputs needed for this data: background plus actions.
    pub fn output_classes(&self) -> usize {
        self.num_classes as usize + 1
    }

    /// Serialized `LAPF` bytes: magic, version, `T`, `D`, `C` (u32 LE),
    /// features (f32 LE, row-major), labels (u16 LE), CRC-32 of everything
    /// before it.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.features.len() * 4 + self.labels.len() * 2 + 4);
        out.extend_from_slice(LAPF_MAGIC);
        out.push(LAPF_VERSION);
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&self.num_classes.to_le_bytes());
        for v in &self.features {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for l in &self.labels {
            out.extend_from_slice(&l.to_le_bytes());
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(name: impl Into<String>, bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != LAPF_MAGIC {
            return Err(Error::format("magic", "file does not start with LAPF"));
        }
        if bytes.len() < 5 || bytes[4] != LAPF_VERSION {
            let found = bytes.get(4).map_or("missing".to_string(), |v| v.to_string());
            return Err(Error::format("version", format!("expected {LAPF_VERSION}, found {found}")));
        }
        if bytes.len() < HEADER_LEN + 4 {
            return Err(Error::format("checksum", "file too short to hold a checksum"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        let actual = crc32fast::hash(body);
        if stored != actual {
            return Err(Error::format(
                "checksum",
                format!("stored {stored:#010x}, computed {actual:#010x}"),
            ));
        }
        let read_u32 = |at: usize| u32::from_le_bytes(body[at..at + 4].try_into().expect("4 bytes"));
        let (frames, dim, classes) = (read_u32(5) as usize, read_u32(9) as usize, read_u32(13));
        let expected = HEADER_LEN + frames * dim * 4 + frames * 2;
        if body.len() != expected {
            return Err(Error::format(
                "length",
                format!("header implies {expected} bytes before the checksum, found {}", body.len()),
            ));
        }
        let feat_end = HEADER_LEN + frames * dim * 4;
        let features = body[HEADER_LEN..feat_end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let labels = body[feat_end..]
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes(c.try_into().expect("2 bytes")))
            .collect();
        FeatureSequence::new(name, classes, dim, features, labels)
    }
}

pub fn save_sequence(seq: &FeatureSequence, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&seq.to_bytes()).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Loads a sequence; its name is the file stem.
pub fn load_sequence(path: &Path) -> Result<FeatureSequence> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    FeatureSequence::from_bytes(name, &bytes)
}

/// Reads a `LAPF` file one frame at a time without touching later frames.
/// Labels and checksum are read and verified once the last frame has been
/// handed out.
pub struct LapfFrameReader<R: Read> {
    inner: R,
    hasher: crc32fast::Hasher,
    frames: usize,
    dim: usize,
    next: usize,
    finished: bool,
}

impl LapfFrameReader<BufReader<File>> {
    pub fn open(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        LapfFrameReader::new(BufReader::new(file))
    }
}

impl<R: Read> LapfFrameReader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        let mut header = [0u8; HEADER_LEN];
        inner
            .read_exact(&mut header)
            .map_err(|_| Error::format("magic", "stream too short for a LAPF header"))?;
        if &header[..4] != LAPF_MAGIC {
            return Err(Error::format("magic", "stream does not start with LAPF"));
        }
        if header[4] != LAPF_VERSION {
            return Err(Error::format("version", format!("expected {LAPF_VERSION}, found {}", header[4])));
        }
        let mut hasher = crc32fast::Hasher::new();
        hasher.update(&header);
        let read_u32 = |at: usize| u32::from_le_bytes(header[at..at + 4].try_into().expect("4 bytes")) as usize;
        Ok(LapfFrameReader {
            inner,
            hasher,
            frames: read_u32(5),
            dim: read_u32(9),
            next: 0,
            finished: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn next_frame(&mut self) -> Result<Option<Vec<f64>>> {
        if self.next == self.frames {
            if !self.finished {
                self.finish()?;
            }
            return Ok(None);
        }
        let mut buf = vec![0u8; self.dim * 4];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| Error::format("features", format!("frame {} is truncated", self.next)))?;
        self.hasher.update(&buf);
        self.next += 1;
        let frame: Vec<f64> = buf
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
            .collect();
        if frame.iter().any(|v| !v.is_finite()) {
            return Err(Error::format("features", format!("frame {} is not finite", self.next - 1)));
        }
        Ok(Some(frame))
    }

    fn finish(&mut self) -> Result<()> {
        let mut labels = vec![0u8; self.frames * 2];
        self.inner
            .read_exact(&mut labels)
            .map_err(|_| Error::format("checksum", "labels or checksum truncated"))?;
        self.hasher.update(&labels);
        let mut tail = [0u8; 4];
        self.inner
            .read_exact(&mut tail)
            .map_err(|_| Error::format("checksum", "checksum truncated"))?;
        let actual = self.hasher.clone().finalize();
        let stored = u32::from_le_bytes(tail);
        if stored != actual {
            return Err(Error::format(
                "checksum",
                format!("stored {stored:#010x}, computed {actual:#010x}"),
            ));
        }
        self.finished = true;
        Ok(())
    }
}
