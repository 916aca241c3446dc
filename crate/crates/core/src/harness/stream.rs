use std::io::BufRead;
use std::path::Path;

use crate::cells::{FrameOutput, LapNet, StreamState};
use crate::data::LapfFrameReader;
use crate::error::{Error, Result};

/// A source that yields one frame per call and nothing ahead of it.
pub trait FrameSource {
    fn next_frame(&mut self) -> Result<Option<Vec<f64>>>;
}

impl<T: FrameSource + ?Sized> FrameSource for Box<T> {
    fn next_frame(&mut self) -> Result<Option<Vec<f64>>> {
        (**self).next_frame()
    }
}

impl<R: std::io::Read> FrameSource for LapfFrameReader<R> {
    fn next_frame(&mut self) -> Result<Option<Vec<f64>>> {
        LapfFrameReader::next_frame(self)
    }
}

/// Text input: one frame per line, values separated by commas and/or
/// whitespace. Blank lines and lines starting with `#` are skipped.
pub struct TextFrameReader<R> {
    inner: R,
    line: usize,
    dim: Option<usize>,
}

impl<R: BufRead> TextFrameReader<R> {
    pub fn new(inner: R, dim: Option<usize>) -> Self {
        TextFrameReader { inner, line: 0, dim }
    }
}

impl<R: BufRead> FrameSource for TextFrameReader<R> {
    fn next_frame(&mut self) -> Result<Option<Vec<f64>>> {
        let mut buf = String::new();
        loop {
            buf.clear();
            self.line += 1;
            let n = self
                .inner
                .read_line(&mut buf)
                .map_err(|e| Error::io(format!("<input line {}>", self.line), e))?;
            if n == 0 {
                return Ok(None);
            }
            let text = buf.trim();
            if text.is_empty() || text.starts_with('#') {
                continue;
            }
            let frame = text
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| Error::format("frame", format!("line {}: `{s}` is not a finite number", self.line)))
                })
                .collect::<Result<Vec<f64>>>()?;
            if let Some(d) = self.dim {
                if frame.len() != d {
                    return Err(Error::format(
                        "frame",
                        format!("line {}: expected {d} values, got {}", self.line, frame.len()),
                    ));
                }
            }
            return Ok(Some(frame));
        }
    }
}

/// Opens `path` as LAPF when it carries the LAPF magic, as text otherwise.
pub fn open_frame_source(path: &Path, dim: usize) -> Result<Box<dyn FrameSource + Send>> {
    let mut magic = [0u8; 4];
    let is_lapf = {
        use std::io::Read;
        let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        f.read(&mut magic).map_err(|e| Error::io(path, e))? == 4 && magic == *crate::data::LAPF_MAGIC
    };
    if is_lapf {
        let reader = LapfFrameReader::open(path)?;
        if reader.dim() != dim {
            return Err(Error::Dimension(format!(
                "input has {}-dimensional frames, checkpoint expects {dim}",
                reader.dim()
            )));
        }
        Ok(Box::new(reader))
    } else {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(Box::new(TextFrameReader::new(std::io::BufReader::new(f), Some(dim))))
    }
}

/// Online inference over one stream.
#[derive(Debug, Clone)]
pub struct StreamSession {
    state: StreamState,
    frames: usize,
}

impl StreamSession {
    pub fn new(model: &LapNet) -> Self {
        StreamSession {
            state: model.new_stream(),
            frames: 0,
        }
    }

    /// Frames consumed so far.
    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn push(&mut self, model: &LapNet, frame: &[f64]) -> Result<FrameOutput> {
        let out = model.eval_step(&mut self.state, frame)?;
        self.frames += 1;
        Ok(out)
    }
}

/// Pulls frames from `source` one at a time, runs `step` on each and hands
/// the output to `emit` before the next frame is requested. Returns the
/// frame count.
pub fn drive_stream<S, O, E, P, F>(source: &mut S, mut step: P, mut emit: F) -> Result<usize, E>
where
    S: FrameSource + ?Sized,
    E: From<Error>,
    P: FnMut(&[f64]) -> Result<O, E>,
    F: FnMut(usize, &O) -> Result<(), E>,
{
    let mut t = 0;
    while let Some(frame) = source.next_frame()? {
        let out = step(&frame)?;
        emit(t, &out)?;
        t += 1;
    }
    Ok(t)
}

/// Header of the per-frame stream output.
pub fn stream_csv_header(num_classes: usize) -> String {
    let mut out = String::from("frame");
    for c in 0..num_classes {
        out.push_str(&format!(",p_{c}"));
    }
    out.push_str(",state");
    out
}

/// One output line: frame index, class probabilities, progression state.
pub fn stream_csv_row(frame: usize, out: &FrameOutput) -> String {
    let mut row = frame.to_string();
    for p in &out.probs {
        row.push_str(&format!(",{p}"));
    }
    row.push_str(&format!(",{}", out.state));
    row
}
