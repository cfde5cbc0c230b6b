//! On-disk formats.
//!
//! Frame record (little-endian):
//!
//! ```text
//! "DGVT" u32 version=1 u64 frame_id u32 width u32 height
//! f64×4 intrinsics (fx, fy, cx, cy)
//! f64×12 pose (row-major rotation, then translation)
//! f32×(height·width) depth, row-major
//! u32 L u32 C f32×(L·C) features, row-major
//! ```
//!
//! Tensor container (little-endian):
//!
//! ```text
//! "DGVW" u32 version=1 u32 count
//! count × { u32 name_len, utf-8 name, u32 rows, u32 cols, f64×(rows·cols) row-major }
//! ```
//!
//! A trajectory log is a TOML manifest listing frame record files relative
//! to the manifest's directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{FeatureMatrix, FrameObservation};
use crate::fusion::AttentionWeights;
use crate::geometry::{DepthMap, Intrinsics, Pose};

pub const FRAME_MAGIC: &[u8; 4] = b"DGVT";
pub const TENSOR_MAGIC: &[u8; 4] = b"DGVW";
pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_VERSION: u32 = 1;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                Error::Format(format!(
                    "truncated: need {n} bytes at offset {}, have {}",
                    self.pos,
                    self.buf.len() - self.pos
                ))
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u32(&mut self) -> Result<u32> {
        self.array().map(u32::from_le_bytes)
    }

    fn u64(&mut self) -> Result<u64> {
        self.array().map(u64::from_le_bytes)
    }

    fn f64(&mut self) -> Result<f64> {
        self.array().map(f64::from_le_bytes)
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::Format("size overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
            .collect())
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("size overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect())
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let m = self.take(4)?;
        if m != expected {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(m),
                String::from_utf8_lossy(expected)
            )));
        }
        let version = self.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after payload",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn dim(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Format(format!("{what} {v} exceeds u32")))
}

pub fn encode_frame(frame: &FrameObservation) -> Result<Vec<u8>> {
    let (w, h) = (frame.depth.width(), frame.depth.height());
    let (l, c) = (frame.features.rows(), frame.features.cols());
    let mut out = Vec::with_capacity(4 + 4 + 8 + 8 + 16 * 8 + w * h * 4 + 8 + l * c * 4);
    out.extend_from_slice(FRAME_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&frame.frame_id.to_le_bytes());
    out.extend_from_slice(&dim(w, "width")?.to_le_bytes());
    out.extend_from_slice(&dim(h, "height")?.to_le_bytes());
    let k = &frame.intrinsics;
    for v in [k.fx, k.fy, k.cx, k.cy] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let r = &frame.pose.rotation;
    for i in 0..3 {
        for j in 0..3 {
            out.extend_from_slice(&r[(i, j)].to_le_bytes());
        }
    }
    for v in frame.pose.translation.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for d in frame.depth.values() {
        out.extend_from_slice(&(*d as f32).to_le_bytes());
    }
    out.extend_from_slice(&dim(l, "token count")?.to_le_bytes());
    out.extend_from_slice(&dim(c, "feature dim")?.to_le_bytes());
    for v in frame.features.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_frame(bytes: &[u8]) -> Result<FrameObservation> {
    let mut r = Reader::new(bytes);
    r.magic(FRAME_MAGIC)?;
    let frame_id = r.u64()?;
    let width = r.u32()? as usize;
    let height = r.u32()? as usize;
    let intrinsics = Intrinsics {
        fx: r.f64()?,
        fy: r.f64()?,
        cx: r.f64()?,
        cy: r.f64()?,
    };
    let rot = r.f64s(9)?;
    let trans = r.f64s(3)?;
    let pose = Pose {
        rotation: Matrix3::from_row_slice(&rot),
        translation: Vector3::from_row_slice(&trans),
    };
    let pixels = width
        .checked_mul(height)
        .ok_or_else(|| Error::Format("depth size overflow".into()))?;
    let depth: Vec<f64> = r.f32s(pixels)?.into_iter().map(f64::from).collect();
    let l = r.u32()? as usize;
    let c = r.u32()? as usize;
    let n = l
        .checked_mul(c)
        .ok_or_else(|| Error::Format("feature size overflow".into()))?;
    let features = r.f32s(n)?;
    r.finish()?;

    let frame = FrameObservation {
        frame_id,
        depth: DepthMap::new(width, height, depth)?,
        intrinsics,
        pose,
        features: FeatureMatrix::new(l, c, features)?,
    };
    frame
        .validate()
        .map_err(|e| Error::Format(format!("frame {frame_id}: {e}")))?;
    Ok(frame)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub frames: Vec<PathBuf>,
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Self> {
        let m: Self = toml::from_str(text).map_err(|e| Error::Format(format!("manifest: {e}")))?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::Format(format!("unsupported manifest version {}", m.version)));
        }
        if m.frames.is_empty() {
            return Err(Error::Format("manifest lists no frames".into()));
        }
        Ok(m)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest is always representable as TOML")
    }
}

pub fn frame_file_name(frame_id: u64) -> String {
    format!("frame_{frame_id:06}.dgvt")
}

/// Writes one record per frame plus `manifest.toml` into `dir`.
pub fn write_log(dir: &Path, frames: &[FrameObservation]) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut names = Vec::with_capacity(frames.len());
    for frame in frames {
        let name = frame_file_name(frame.frame_id);
        fs::write(dir.join(&name), encode_frame(frame)?)?;
        names.push(PathBuf::from(name));
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        frames: names,
    };
    let path = dir.join("manifest.toml");
    fs::write(&path, manifest.to_toml())?;
    Ok(path)
}

/// Record paths of a manifest, resolved against its directory.
pub fn manifest_frame_paths(manifest_path: &Path) -> Result<Vec<PathBuf>> {
    let text = fs::read_to_string(manifest_path)
        .map_err(|e| Error::Format(format!("{}: {e}", manifest_path.display())))?;
    let manifest = Manifest::parse(&text)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    Ok(manifest.frames.iter().map(|f| base.join(f)).collect())
}

pub fn read_frame(path: &Path) -> Result<FrameObservation> {
    let bytes = fs::read(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    decode_frame(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Loads every frame of a log and checks that ids strictly increase.
pub fn read_log(manifest_path: &Path) -> Result<Vec<FrameObservation>> {
    let frames = manifest_frame_paths(manifest_path)?
        .iter()
        .map(|p| read_frame(p))
        .collect::<Result<Vec<_>>>()?;
    for w in frames.windows(2) {
        if w[1].frame_id <= w[0].frame_id {
            return Err(Error::Format(format!(
                "frame ids not strictly increasing: {} then {}",
                w[0].frame_id, w[1].frame_id
            )));
        }
    }
    Ok(frames)
}

pub type Tensors = BTreeMap<String, DMatrix<f64>>;

pub fn encode_tensors(tensors: &Tensors) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&dim(tensors.len(), "tensor count")?.to_le_bytes());
    for (name, m) in tensors {
        out.extend_from_slice(&dim(name.len(), "name length")?.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&dim(m.nrows(), "rows")?.to_le_bytes());
        out.extend_from_slice(&dim(m.ncols(), "cols")?.to_le_bytes());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                out.extend_from_slice(&m[(i, j)].to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn decode_tensors(bytes: &[u8]) -> Result<Tensors> {
    let mut r = Reader::new(bytes);
    r.magic(TENSOR_MAGIC)?;
    let count = r.u32()?;
    let mut tensors = Tensors::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Format("tensor name is not utf-8".into()))?
            .to_string();
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Format("tensor size overflow".into()))?;
        let data = r.f64s(n)?;
        if tensors
            .insert(name.clone(), DMatrix::from_row_slice(rows, cols, &data))
            .is_some()
        {
            return Err(Error::Format(format!("duplicate tensor {name:?}")));
        }
    }
    r.finish()?;
    Ok(tensors)
}

/// Fusion parameters stored as tensors `w_q`, `w_k`, `w_v`, `w_o`, an
/// optional `align` projection and an optional 1×1 `num_heads`.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionWeights {
    pub align: Option<DMatrix<f64>>,
    pub attention: AttentionWeights,
}

impl FusionWeights {
    pub fn from_tensors(mut t: Tensors, default_heads: usize) -> Result<Self> {
        let mut take = |name: &str| {
            t.remove(name)
                .ok_or_else(|| Error::Format(format!("missing tensor {name:?}")))
        };
        let (w_q, w_k, w_v, w_o) = (take("w_q")?, take("w_k")?, take("w_v")?, take("w_o")?);
        let heads = match t.remove("num_heads") {
            Some(m) if m.shape() == (1, 1) && m[(0, 0)] >= 1.0 && m[(0, 0)].fract() == 0.0 => {
                m[(0, 0)] as usize
            }
            Some(_) => return Err(Error::Format("num_heads must be a positive 1x1 integer".into())),
            None => default_heads,
        };
        Ok(Self {
            align: t.remove("align"),
            attention: AttentionWeights::new(heads, w_q, w_k, w_v, w_o)?,
        })
    }

    pub fn to_tensors(&self) -> Tensors {
        let a = &self.attention;
        let mut t = Tensors::new();
        t.insert("w_q".into(), a.w_q.clone());
        t.insert("w_k".into(), a.w_k.clone());
        t.insert("w_v".into(), a.w_v.clone());
        t.insert("w_o".into(), a.w_o.clone());
        t.insert(
            "num_heads".into(),
            DMatrix::from_element(1, 1, a.num_heads as f64),
        );
        if let Some(p) = &self.align {
            t.insert("align".into(), p.clone());
        }
        t
    }
}
