//! Morton ordering, the compressed container and entropy estimates.
//!
//! Container layout (all integers little-endian):
//!
//! ```text
//! "ELMG"  version:u16  flags:u16  count:u64  aabb:6×f64 (min xyz, max xyz)
//! 6 × { id:u8 bits:u8 signed:u8 reserved:u8 step:f64 raw_len:u64 comp_len:u64 deflate[comp_len] }
//! crc32:u32   (over every preceding byte)
//! ```
//!
//! Each record's payload is a raw DEFLATE stream of the attribute's codes,
//! two's complement, `ceil(bits/8)` bytes each, in stored Gaussian order.

use std::io::{Read, Write};

use flate2::read::DeflateDecoder;
use flate2::write::DeflateEncoder;
use flate2::{Compression, Crc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quantization::{QuantError, QuantizedScene, QuantizerState};
use crate::scalar::Real;
use crate::scene::{Attribute, GaussianScene};

pub const MAGIC: [u8; 4] = *b"ELMG";
pub const VERSION: u16 = 1;
pub const FLAG_MORTON: u16 = 1;
/// DEFLATE level used for every stream.
pub const COMPRESSION_LEVEL: u32 = 9;
/// Bits per axis of the Morton grid.
pub const MORTON_BITS: u32 = 21;
pub const MORTON_MAX: u32 = (1 << MORTON_BITS) - 1;

const HEADER_LEN: usize = 4 + 2 + 2 + 8 + 6 * 8;
const RECORD_HEADER_LEN: usize = 4 + 8 + 8 + 8;
const TRAILER_LEN: usize = 4;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("not a container: {0}")]
    Format(String),
    #[error("corrupt container: {0}")]
    Corruption(String),
    #[error("morton coordinate {0} exceeds 21 bits")]
    CoordinateRange(u32),
    #[error("non-finite position at gaussian {0}")]
    NonFinite(usize),
    #[error("entropy of an empty sequence is undefined")]
    Empty,
    #[error(transparent)]
    Quant(#[from] QuantError),
    #[error("deflate stream: {0}")]
    Io(#[from] std::io::Error),
}

/// Interleaved 63-bit Z-order key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MortonKey(pub u64);

/// Spreads the low 21 bits of `v` so bit k lands at bit 3k.
fn spread(v: u32) -> u64 {
    let mut x = u64::from(v) & 0x1f_ffff;
    x = (x | x << 32) & 0x001f_0000_0000_ffff;
    x = (x | x << 16) & 0x001f_0000_ff00_00ff;
    x = (x | x << 8) & 0x100f_00f0_0f00_f00f;
    x = (x | x << 4) & 0x10c3_0c30_c30c_30c3;
    x = (x | x << 2) & 0x1249_2492_4924_9249;
    x
}

fn compact(mut x: u64) -> u32 {
    x &= 0x1249_2492_4924_9249;
    x = (x ^ (x >> 2)) & 0x10c3_0c30_c30c_30c3;
    x = (x ^ (x >> 4)) & 0x100f_00f0_0f00_f00f;
    x = (x ^ (x >> 8)) & 0x001f_0000_ff00_00ff;
    x = (x ^ (x >> 16)) & 0x001f_0000_0000_ffff;
    x = (x ^ (x >> 32)) & 0x1f_ffff;
    x as u32
}

/// Bit k of axis a goes to bit 3k + a, with x as axis 0.
pub fn morton_encode(grid: [u32; 3]) -> Result<MortonKey, CodecError> {
    if let Some(&c) = grid.iter().find(|&&c| c > MORTON_MAX) {
        return Err(CodecError::CoordinateRange(c));
    }
    Ok(MortonKey(spread(grid[0]) | spread(grid[1]) << 1 | spread(grid[2]) << 2))
}

pub fn morton_decode(key: MortonKey) -> [u32; 3] {
    [compact(key.0), compact(key.0 >> 1), compact(key.0 >> 2)]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    /// Bounds of `points`; the empty set yields the zero box.
    pub fn from_points(points: &[[f64; 3]]) -> Result<Self, CodecError> {
        if points.is_empty() {
            return Ok(Self {
                min: [0.0; 3],
                max: [0.0; 3],
            });
        }
        let mut min = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        for (i, p) in points.iter().enumerate() {
            if p.iter().any(|c| !c.is_finite()) {
                return Err(CodecError::NonFinite(i));
            }
            for a in 0..3 {
                min[a] = min[a].min(p[a]);
                max[a] = max[a].max(p[a]);
            }
        }
        Ok(Self { min, max })
    }

    /// Per-axis linear map onto [0, 2²¹); degenerate axes map to 0.
    pub fn grid(&self, p: [f64; 3]) -> [u32; 3] {
        std::array::from_fn(|a| {
            let extent = self.max[a] - self.min[a];
            if !(extent > 0.0) {
                return 0;
            }
            let t = ((p[a] - self.min[a]) / extent).clamp(0.0, 1.0);
            ((t * f64::from(1u32 << MORTON_BITS)).floor() as u32).min(MORTON_MAX)
        })
    }

    fn to_bytes(self, out: &mut Vec<u8>) {
        for v in self.min.iter().chain(&self.max) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

/// Morton keys of `points` over their own bounding box.
pub fn morton_keys(points: &[[f64; 3]]) -> Result<(Aabb, Vec<MortonKey>), CodecError> {
    let aabb = Aabb::from_points(points)?;
    let keys = points
        .iter()
        .map(|&p| morton_encode(aabb.grid(p)))
        .collect::<Result<_, _>>()?;
    Ok((aabb, keys))
}

/// Stable sort of point indices by Morton key.
pub fn morton_order(points: &[[f64; 3]]) -> Result<Vec<usize>, CodecError> {
    let (_, keys) = morton_keys(points)?;
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by_key(|&i| keys[i]);
    Ok(order)
}

pub fn morton_sort_scene<T: Real>(scene: &GaussianScene<T>) -> Result<Vec<usize>, CodecError> {
    let points: Vec<[f64; 3]> = scene
        .positions
        .iter()
        .map(|p| [p[0].as_f64(), p[1].as_f64(), p[2].as_f64()])
        .collect();
    morton_order(&points)
}

pub fn morton_sort(q: &QuantizedScene) -> Result<Vec<usize>, CodecError> {
    morton_order(&q.positions_f64())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ordering {
    Morton,
    Original,
}

/// A decoded container. Gaussians stay in stored order.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub scene: QuantizedScene,
    pub morton: bool,
    pub aabb: Aabb,
}

/// Per-stream sizes of an encoded container.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamSize {
    pub attribute: Attribute,
    pub raw_bytes: u64,
    pub compressed_bytes: u64,
}

pub fn serialize_codes(codes: &[i64], qs: &QuantizerState) -> Vec<u8> {
    let width = qs.code_width();
    let mut out = Vec::with_capacity(codes.len() * width);
    for &c in codes {
        out.extend_from_slice(&c.to_le_bytes()[..width]);
    }
    out
}

pub fn deserialize_codes(bytes: &[u8], qs: &QuantizerState) -> Result<Vec<i64>, CodecError> {
    let width = qs.code_width();
    if bytes.len() % width != 0 {
        return Err(CodecError::Corruption(format!(
            "{} bytes is not a multiple of the {width}-byte code width",
            bytes.len()
        )));
    }
    bytes
        .chunks_exact(width)
        .map(|chunk| {
            let mut buf = [0u8; 8];
            buf[..width].copy_from_slice(chunk);
            let mut code = i64::from_le_bytes(buf);
            if qs.signed {
                let shift = 64 - 8 * width as u32;
                code = (code << shift) >> shift;
            }
            if qs.contains(code) {
                Ok(code)
            } else {
                Err(CodecError::Corruption(format!(
                    "{} code {code} outside [{}, {}]",
                    qs.attribute,
                    -qs.q_n(),
                    qs.q_p()
                )))
            }
        })
        .collect()
}

fn deflate(raw: &[u8]) -> Result<Vec<u8>, CodecError> {
    let mut enc = DeflateEncoder::new(Vec::new(), Compression::new(COMPRESSION_LEVEL));
    enc.write_all(raw)?;
    Ok(enc.finish()?)
}

fn inflate(comp: &[u8], expected: usize) -> Result<Vec<u8>, CodecError> {
    let mut out = Vec::with_capacity(expected);
    DeflateDecoder::new(comp)
        .take(expected as u64 + 1)
        .read_to_end(&mut out)
        .map_err(|e| CodecError::Corruption(format!("deflate stream: {e}")))?;
    if out.len() != expected {
        return Err(CodecError::Corruption(format!(
            "stream inflates to {} bytes, header says {expected}",
            out.len()
        )));
    }
    Ok(out)
}

/// Serializes `q`, Morton-sorting it first when asked.
pub fn encode(q: &QuantizedScene, order: Ordering) -> Result<Vec<u8>, CodecError> {
    encode_with_sizes(q, order).map(|(bytes, _)| bytes)
}

pub fn encode_with_sizes(q: &QuantizedScene, order: Ordering) -> Result<(Vec<u8>, [StreamSize; 6]), CodecError> {
    q.validate()?;
    let points = q.positions_f64();
    let (aabb, keys) = morton_keys(&points)?;
    let sorted;
    let (scene, flags) = match order {
        Ordering::Morton => {
            let mut perm: Vec<usize> = (0..q.count).collect();
            perm.sort_by_key(|&i| keys[i]);
            sorted = q.permute(&perm);
            (&sorted, FLAG_MORTON)
        }
        Ordering::Original => (q, 0),
    };

    let mut out = Vec::with_capacity(HEADER_LEN + 6 * RECORD_HEADER_LEN + TRAILER_LEN);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&flags.to_le_bytes());
    out.extend_from_slice(&(scene.count as u64).to_le_bytes());
    aabb.to_bytes(&mut out);

    let mut sizes = Vec::with_capacity(6);
    for attr in Attribute::ALL {
        let qs = scene.quantizer(attr);
        let raw = serialize_codes(scene.codes(attr), qs);
        let comp = deflate(&raw)?;
        out.extend_from_slice(&[attr.id(), qs.bits, u8::from(qs.signed), 0]);
        out.extend_from_slice(&qs.step.to_le_bytes());
        out.extend_from_slice(&(raw.len() as u64).to_le_bytes());
        out.extend_from_slice(&(comp.len() as u64).to_le_bytes());
        out.extend_from_slice(&comp);
        sizes.push(StreamSize {
            attribute: attr,
            raw_bytes: raw.len() as u64,
            compressed_bytes: comp.len() as u64,
        });
    }
    let mut crc = Crc::new();
    crc.update(&out);
    out.extend_from_slice(&crc.sum().to_le_bytes());
    Ok((out, sizes.try_into().expect("six streams")))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CodecError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(CodecError::Corruption(format!(
                "truncated while reading {what} at offset {}",
                self.pos
            ))),
        }
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N], CodecError> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }

    fn u8(&mut self, what: &str) -> Result<u8, CodecError> {
        Ok(self.array::<1>(what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16, CodecError> {
        self.array(what).map(u16::from_le_bytes)
    }

    fn u64(&mut self, what: &str) -> Result<u64, CodecError> {
        self.array(what).map(u64::from_le_bytes)
    }

    fn f64(&mut self, what: &str) -> Result<f64, CodecError> {
        self.array(what).map(f64::from_le_bytes)
    }
}

pub fn decode(bytes: &[u8]) -> Result<Container, CodecError> {
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        return Err(CodecError::Format("bad magic".into()));
    }
    let mut cur = Cursor { bytes, pos: 4 };
    let version = cur.u16("version")?;
    if version != VERSION {
        return Err(CodecError::Format(format!("unsupported version {version}")));
    }
    if bytes.len() < HEADER_LEN + TRAILER_LEN {
        return Err(CodecError::Corruption("truncated header".into()));
    }
    let body_len = bytes.len() - TRAILER_LEN;
    let stored_crc = u32::from_le_bytes(bytes[body_len..].try_into().expect("four bytes"));
    let mut crc = Crc::new();
    crc.update(&bytes[..body_len]);
    if crc.sum() != stored_crc {
        return Err(CodecError::Corruption("checksum mismatch".into()));
    }
    let mut cur = Cursor {
        bytes: &bytes[..body_len],
        pos: cur.pos,
    };

    let flags = cur.u16("flags")?;
    if flags & !FLAG_MORTON != 0 {
        return Err(CodecError::Format(format!("unknown flags {flags:#06x}")));
    }
    let count = usize::try_from(cur.u64("count")?)
        .map_err(|_| CodecError::Corruption("count exceeds address space".into()))?;
    let mut aabb = Aabb {
        min: [0.0; 3],
        max: [0.0; 3],
    };
    for a in 0..3 {
        aabb.min[a] = cur.f64("aabb")?;
    }
    for a in 0..3 {
        aabb.max[a] = cur.f64("aabb")?;
    }

    let mut codes: [Vec<i64>; 6] = Default::default();
    let mut quantizers = Vec::with_capacity(6);
    for attr in Attribute::ALL {
        let id = cur.u8("attribute id")?;
        if id != attr.id() {
            return Err(CodecError::Format(format!("record {} has attribute id {id}", attr.id())));
        }
        let bits = cur.u8("bits")?;
        let signed = match cur.u8("signed")? {
            0 => false,
            1 => true,
            s => return Err(CodecError::Format(format!("{attr}: signed byte {s}"))),
        };
        if cur.u8("reserved")? != 0 {
            return Err(CodecError::Format(format!("{attr}: reserved byte set")));
        }
        let step = cur.f64("step")?;
        let qs = QuantizerState::new(attr, bits, signed, step)
            .map_err(|e| CodecError::Format(format!("{attr}: {e}")))?;
        let raw_len = cur.u64("raw length")?;
        let comp_len = cur.u64("compressed length")?;
        let expected = count
            .checked_mul(attr.arity() * qs.code_width())
            .filter(|&n| n as u64 == raw_len)
            .ok_or_else(|| {
                CodecError::Corruption(format!(
                    "{attr}: raw length {raw_len} disagrees with {count} gaussians"
                ))
            })?;
        let comp_len = usize::try_from(comp_len)
            .map_err(|_| CodecError::Corruption(format!("{attr}: compressed length overflow")))?;
        let payload = cur.take(comp_len, "stream")?;
        let raw = inflate(payload, expected)?;
        codes[attr.id() as usize] = deserialize_codes(&raw, &qs)?;
        quantizers.push(qs);
    }
    if cur.pos != cur.bytes.len() {
        return Err(CodecError::Corruption(format!(
            "{} trailing bytes after the last stream",
            cur.bytes.len() - cur.pos
        )));
    }

    let scene = QuantizedScene {
        count,
        codes,
        quantizers: quantizers.try_into().expect("six records"),
    };
    scene.validate()?;
    Ok(Container {
        scene,
        morton: flags & FLAG_MORTON != 0,
        aabb,
    })
}

/// First-order entropy of the empirical symbol distribution, in bits/symbol.
pub fn entropy_bits(codes: &[i64]) -> Result<f64, CodecError> {
    if codes.is_empty() {
        return Err(CodecError::Empty);
    }
    let mut sorted = codes.to_vec();
    sorted.sort_unstable();
    let n = sorted.len() as f64;
    let h = sorted
        .chunk_by(|a, b| a == b)
        .map(|run| {
            let p = run.len() as f64 / n;
            -p * p.log2()
        })
        .sum::<f64>();
    Ok(h.max(0.0))
}
