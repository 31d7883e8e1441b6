//! The `TOPD` binary dataset format and its JSON sidecar.
//!
//! ```text
//! "TOPD"  u32 version  u32 count
//! count × { u16 nely  u16 nelx  u16 frames  frames·nely·nelx × f32 }
//! ```
//!
//! All integers and floats are little-endian; each frame is row-major.
//! The sidecar (`<stem>.meta.json`) holds the problem of every record.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Cursor, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::SamplerConfig;
use crate::error::{Error, Result};
use crate::fem::Problem;
use crate::simp::{IterationHistory, SimpConfig};

pub const MAGIC: [u8; 4] = *b"TOPD";
pub const VERSION: u32 = 1;
const HEADER_LEN: u64 = 12;
const RECORD_HEADER_LEN: u64 = 6;

/// Stored frames of one record, in single precision.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameStack {
    nelx: usize,
    nely: usize,
    count: usize,
    data: Vec<f32>,
}

impl FrameStack {
    pub fn new(nelx: usize, nely: usize, count: usize, data: Vec<f32>) -> Result<Self> {
        for (name, v) in [("nelx", nelx), ("nely", nely), ("frame count", count)] {
            if v == 0 || v > u16::MAX as usize {
                return Err(Error::shape(format!("{name} must lie in [1, 65535], got {v}")));
            }
        }
        if data.len() != nelx * nely * count {
            return Err(Error::shape(format!(
                "{count} frames of {nely}x{nelx} need {} values, got {}",
                nelx * nely * count,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::shape(format!("density {} at index {i} outside [0, 1]", data[i])));
        }
        Ok(Self { nelx, nely, count, data })
    }

    pub fn from_history(history: &IterationHistory) -> Result<Self> {
        let first = history.frames.first().ok_or_else(|| Error::shape("history has no frames"))?;
        let (nelx, nely) = (first.nelx(), first.nely());
        let data = history
            .frames
            .iter()
            .flat_map(|f| f.values().iter().map(|&v| v as f32))
            .collect();
        Self::new(nelx, nely, history.frames.len(), data)
    }

    pub fn nelx(&self) -> usize {
        self.nelx
    }

    pub fn nely(&self) -> usize {
        self.nely
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Stored frame `i` (the design after update `i + 1`).
    pub fn frame(&self, i: usize) -> &[f32] {
        let n = self.nelx * self.nely;
        &self.data[i * n..(i + 1) * n]
    }
}

/// A problem and its stored SIMP history.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    problem: Problem,
    frames: FrameStack,
}

impl DatasetRecord {
    pub fn new(problem: Problem, frames: FrameStack) -> Result<Self> {
        if problem.nelx() != frames.nelx || problem.nely() != frames.nely {
            return Err(Error::shape(format!(
                "problem grid {}x{} does not match frames {}x{}",
                problem.nely(),
                problem.nelx(),
                frames.nely,
                frames.nelx
            )));
        }
        Ok(Self { problem, frames })
    }

    pub fn from_history(history: &IterationHistory) -> Result<Self> {
        Self::new(history.problem.clone(), FrameStack::from_history(history)?)
    }

    pub fn problem(&self) -> &Problem {
        &self.problem
    }

    pub fn frames(&self) -> &FrameStack {
        &self.frames
    }

    /// Number of stored updates.
    pub fn frame_count(&self) -> usize {
        self.frames.count
    }

    /// Design after `k` updates, `0 ≤ k ≤ frame_count()`; `design(0)` is the
    /// uniform starting field.
    pub fn design(&self, k: usize) -> Result<Vec<f64>> {
        if k > self.frames.count {
            return Err(Error::InvalidParameter(format!(
                "iteration {k} beyond the {} stored frames",
                self.frames.count
            )));
        }
        Ok(if k == 0 {
            vec![self.problem.vol_frac(); self.frames.nelx * self.frames.nely]
        } else {
            self.frames.frame(k - 1).iter().map(|&v| v as f64).collect()
        })
    }

    pub fn final_design(&self) -> Vec<f64> {
        self.frames.frame(self.frames.count - 1).iter().map(|&v| v as f64).collect()
    }
}

/// Sidecar contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub format: String,
    pub version: u32,
    pub count: usize,
    pub problems: Vec<Problem>,
    /// Per-record compliance history, when known.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub compliances: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generation: Option<GenerationInfo>,
}

impl DatasetMeta {
    pub fn new(problems: Vec<Problem>) -> Self {
        Self {
            format: "TOPD".into(),
            version: VERSION,
            count: problems.len(),
            problems,
            compliances: Vec::new(),
            generation: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationInfo {
    pub seed: u64,
    pub sampler: SamplerConfig,
    pub simp: SimpConfig,
    /// Sampling attempts over the whole run, accepted ones included.
    pub attempts: usize,
    /// Attempts discarded because a Poisson count came out zero.
    pub zero_count_redraws: usize,
    /// Attempts with nonzero counts that failed the well-posedness check.
    pub ill_posed_rejections: usize,
    /// Accepted problems whose SIMP run failed and were replaced.
    pub simp_failures: usize,
    /// `ill_posed_rejections / (attempts - zero_count_redraws)`.
    pub ill_posed_rate: f64,
    /// Mean raw `(N_x, N_y, N_L)` over all attempts.
    pub mean_counts: [f64; 3],
    /// Records whose `f0` draw was clamped into the configured range.
    pub f0_clamped: usize,
}

/// `data.topd` → `data.meta.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

/// Streams records into a `TOPD` file whose count is fixed up front.
pub struct DatasetWriter<W: Write> {
    inner: W,
    expected: usize,
    written: usize,
}

impl<W: Write> DatasetWriter<W> {
    pub fn new(mut inner: W, count: usize) -> Result<Self> {
        let c = u32::try_from(count)
            .map_err(|_| Error::InvalidParameter(format!("record count {count} exceeds u32")))?;
        inner.write_all(&MAGIC)?;
        inner.write_all(&VERSION.to_le_bytes())?;
        inner.write_all(&c.to_le_bytes())?;
        Ok(Self {
            inner,
            expected: count,
            written: 0,
        })
    }

    pub fn write(&mut self, frames: &FrameStack) -> Result<()> {
        if self.written == self.expected {
            return Err(Error::InvalidParameter(format!(
                "dataset already holds its {} records",
                self.expected
            )));
        }
        let mut buf = Vec::with_capacity(6 + 4 * frames.data.len());
        for v in [frames.nely, frames.nelx, frames.count] {
            buf.extend_from_slice(&(v as u16).to_le_bytes());
        }
        for v in &frames.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        self.inner.write_all(&buf)?;
        self.written += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        if self.written != self.expected {
            return Err(Error::InvalidParameter(format!(
                "dataset declared {} records but {} were written",
                self.expected, self.written
            )));
        }
        self.inner.flush()?;
        Ok(self.inner)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::file(path, e))
}

pub(crate) fn write_meta(path: &Path, meta: &DatasetMeta) -> Result<()> {
    let side = sidecar_path(path);
    let mut w = create(&side)?;
    serde_json::to_writer_pretty(&mut w, meta)?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| Error::file(&side, e))
}

pub(crate) fn partial_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".partial");
    PathBuf::from(s)
}

/// Writes `records` and a sidecar listing their problems.
pub fn write_dataset(path: &Path, records: &[DatasetRecord]) -> Result<()> {
    let tmp = partial_path(path);
    let mut w = DatasetWriter::new(create(&tmp)?, records.len())?;
    for r in records {
        w.write(&r.frames)?;
    }
    w.finish()?;
    std::fs::rename(&tmp, path).map_err(|e| Error::file(path, e))?;
    write_meta(path, &DatasetMeta::new(records.iter().map(|r| r.problem.clone()).collect()))
}

/// Location and shape of one record inside a `TOPD` stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecordIndex {
    pub offset: u64,
    pub nely: usize,
    pub nelx: usize,
    pub frames: usize,
}

impl RecordIndex {
    fn payload_len(&self) -> u64 {
        4 * (self.nely * self.nelx * self.frames) as u64
    }
}

/// Validates a `TOPD` stream's layout up front and loads records on demand.
#[derive(Debug)]
pub struct DatasetReader<R> {
    inner: R,
    index: Vec<RecordIndex>,
}

fn read_at<R: Read>(r: &mut R, buf: &mut [u8], offset: u64, what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::format(offset, format!("truncated {what}")),
        _ => Error::Io(e),
    })
}

impl<R: Read + Seek> DatasetReader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        let total = inner.seek(SeekFrom::End(0))?;
        inner.seek(SeekFrom::Start(0))?;
        if total < HEADER_LEN {
            return Err(Error::format(
                total,
                format!("truncated header: file has {total} bytes, header needs {HEADER_LEN}"),
            ));
        }
        let mut head = [0u8; HEADER_LEN as usize];
        read_at(&mut inner, &mut head, 0, "header")?;
        if head[..4] != MAGIC {
            return Err(Error::format(0, format!("bad magic {:02x?}, expected \"TOPD\"", &head[..4])));
        }
        let version = u32::from_le_bytes(head[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::format(4, format!("unsupported version {version}, expected {VERSION}")));
        }
        let count = u32::from_le_bytes(head[8..12].try_into().expect("4 bytes")) as u64;
        let mut pos = HEADER_LEN;
        if count * RECORD_HEADER_LEN > total - pos {
            return Err(Error::format(
                8,
                format!("count {count} cannot fit in the remaining {} bytes", total - pos),
            ));
        }
        let mut index = Vec::with_capacity(count as usize);
        for i in 0..count {
            if total - pos < RECORD_HEADER_LEN {
                return Err(Error::format(pos, format!("record {i}: truncated record header")));
            }
            let mut rh = [0u8; RECORD_HEADER_LEN as usize];
            read_at(&mut inner, &mut rh, pos, "record header")?;
            let field = |j: usize| u16::from_le_bytes([rh[2 * j], rh[2 * j + 1]]) as usize;
            let rec = RecordIndex {
                offset: pos,
                nely: field(0),
                nelx: field(1),
                frames: field(2),
            };
            if rec.nely == 0 || rec.nelx == 0 || rec.frames == 0 {
                return Err(Error::format(
                    pos,
                    format!(
                        "record {i}: empty shape {}x{}x{}",
                        rec.frames, rec.nely, rec.nelx
                    ),
                ));
            }
            let body = pos + RECORD_HEADER_LEN;
            let need = rec.payload_len();
            if need > total - body {
                return Err(Error::format(
                    body,
                    format!(
                        "record {i}: payload needs {need} bytes, only {} remain",
                        total - body
                    ),
                ));
            }
            pos = body + need;
            inner.seek(SeekFrom::Start(pos))?;
            index.push(rec);
        }
        if pos != total {
            return Err(Error::format(pos, format!("{} trailing bytes after last record", total - pos)));
        }
        Ok(Self { inner, index })
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn index(&self) -> &[RecordIndex] {
        &self.index
    }

    pub fn read_frames(&mut self, i: usize) -> Result<FrameStack> {
        let rec = *self.index.get(i).ok_or_else(|| {
            Error::InvalidParameter(format!("record {i} out of range ({} records)", self.index.len()))
        })?;
        let body = rec.offset + RECORD_HEADER_LEN;
        self.inner.seek(SeekFrom::Start(body))?;
        let mut bytes = vec![0u8; rec.payload_len() as usize];
        read_at(&mut self.inner, &mut bytes, body, "record payload")?;
        let mut data = Vec::with_capacity(bytes.len() / 4);
        for (j, c) in bytes.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(c.try_into().expect("4 bytes"));
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::format(
                    body + 4 * j as u64,
                    format!("record {i}: density {v} outside [0, 1]"),
                ));
            }
            data.push(v);
        }
        FrameStack::new(rec.nelx, rec.nely, rec.frames, data)
    }
}

/// Decodes a whole in-memory `TOPD` image.
pub fn parse_dataset(bytes: &[u8]) -> Result<Vec<FrameStack>> {
    let mut r = DatasetReader::new(Cursor::new(bytes))?;
    (0..r.len()).map(|i| r.read_frames(i)).collect()
}

/// Summary of a successful [`Dataset::verify`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct VerifyReport {
    pub records: usize,
    pub frames: usize,
}

/// A `TOPD` file paired with its sidecar.
#[derive(Debug)]
pub struct Dataset {
    path: PathBuf,
    reader: DatasetReader<BufReader<File>>,
    meta: DatasetMeta,
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::file(path, e))?;
    let reader = DatasetReader::new(BufReader::new(file))?;
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).map_err(|e| Error::file(&side, e))?;
    let meta: DatasetMeta = serde_json::from_str(&text)?;
    if meta.count != reader.len() || meta.problems.len() != reader.len() {
        return Err(Error::format(
            8,
            format!(
                "sidecar lists {} problems (count {}), dataset holds {} records",
                meta.problems.len(),
                meta.count,
                reader.len()
            ),
        ));
    }
    for (i, (p, rec)) in meta.problems.iter().zip(reader.index()).enumerate() {
        if p.nelx() != rec.nelx || p.nely() != rec.nely {
            return Err(Error::format(
                rec.offset,
                format!(
                    "record {i} is {}x{} but its problem is {}x{}",
                    rec.nely,
                    rec.nelx,
                    p.nely(),
                    p.nelx()
                ),
            ));
        }
    }
    Ok(Dataset {
        path: path.to_path_buf(),
        reader,
        meta,
    })
}

impl Dataset {
    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.reader.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reader.is_empty()
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    pub fn problem(&self, i: usize) -> Option<&Problem> {
        self.meta.problems.get(i)
    }

    pub fn record(&mut self, i: usize) -> Result<DatasetRecord> {
        let frames = self.reader.read_frames(i)?;
        DatasetRecord::new(self.meta.problems[i].clone(), frames)
    }

    /// Records `range` loaded eagerly.
    pub fn records(&mut self, range: std::ops::Range<usize>) -> Result<Vec<DatasetRecord>> {
        range.map(|i| self.record(i)).collect()
    }

    pub fn all_records(&mut self) -> Result<Vec<DatasetRecord>> {
        self.records(0..self.len())
    }

    /// Re-checks that every stored frame keeps its volume fraction to `tol`.
    pub fn verify(&mut self, tol: f64) -> Result<VerifyReport> {
        let mut frames = 0;
        for i in 0..self.len() {
            let r = self.record(i)?;
            let f0 = r.problem.vol_frac();
            for k in 0..r.frames.count {
                let f = r.frames.frame(k);
                let mean = f.iter().map(|&v| v as f64).sum::<f64>() / f.len() as f64;
                if (mean - f0).abs() > tol {
                    return Err(Error::NumericFailure(format!(
                        "record {i}, frame {}: volume {mean} differs from {f0} by more than {tol}",
                        k + 1
                    )));
                }
            }
            frames += r.frames.count;
        }
        Ok(VerifyReport {
            records: self.len(),
            frames,
        })
    }
}
