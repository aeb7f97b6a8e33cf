//! Binary checkpoint: `DDUN`, version, config text, parameter records, an
//! optional optimizer section and a trailing CRC-64 of everything before it.
//! All integers are little-endian.

use std::collections::BTreeMap;
use std::path::Path;

use crc::{Crc, CRC_64_XZ};

use crate::engine::{DType, Element, Tensor};
use crate::error::{Error, Result};
use crate::network::ModelParams;
use crate::optim::{AdamW, AdamWConfig, Moments};

pub const MAGIC: &[u8; 4] = b"DDUN";
pub const VERSION: u32 = 1;
const CHECKSUM: Crc<u64> = Crc::<u64>::new(&CRC_64_XZ);
const MOMENT_KINDS: [&str; 3] = ["m", "v", "vmax"];

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T: Element> {
    pub step: u64,
    pub moments: BTreeMap<String, Moments<T>>,
}

impl<T: Element> OptimizerState<T> {
    pub fn of(opt: &AdamW<T>) -> Self {
        OptimizerState { step: opt.step, moments: opt.moments.clone() }
    }

    pub fn into_adamw(self, config: AdamWConfig) -> AdamW<T> {
        AdamW { config, step: self.step, moments: self.moments }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T: Element> {
    /// Resolved run configuration text.
    pub config: String,
    pub params: ModelParams<T>,
    pub optimizer: Option<OptimizerState<T>>,
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u64(out, s.len() as u64);
    out.extend_from_slice(s.as_bytes());
}

fn put_record<T: Element>(out: &mut Vec<u8>, name: &str, t: &Tensor<T>) {
    put_str(out, name);
    put_u64(out, t.rank() as u64);
    for &e in t.shape() {
        put_u64(out, e as u64);
    }
    out.extend_from_slice(&T::DTYPE.code().to_le_bytes());
    out.extend_from_slice(&t.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format(format!("checkpoint truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v)
            .ok()
            .filter(|&n| n <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("implausible length {v} in checkpoint")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.len()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("checkpoint text is not UTF-8".into()))
    }

    fn record<T: Element>(&mut self) -> Result<(String, Tensor<T>)> {
        let name = self.string()?;
        let rank = self.len()?;
        let shape = (0..rank).map(|_| self.len()).collect::<Result<Vec<_>>>()?;
        let code = u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes"));
        let dtype = DType::from_code(code).ok_or_else(|| Error::Format(format!("{name}: unknown element code {code}")))?;
        let n = shape.iter().try_fold(dtype.size(), |a, &e| a.checked_mul(e));
        let n = n.ok_or_else(|| Error::Format(format!("{name}: extents {shape:?} overflow")))?;
        let raw = self.take(n)?;
        let t = match dtype {
            DType::F32 => Tensor::<f32>::from_le_bytes(&shape, raw)?.cast(),
            DType::F64 => Tensor::<f64>::from_le_bytes(&shape, raw)?.cast(),
        };
        Ok((name, t))
    }
}

impl<T: Element> Checkpoint<T> {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut out, &self.config);
        put_u64(&mut out, self.params.len() as u64);
        for (name, t) in self.params.iter() {
            put_record(&mut out, name, t);
        }
        match &self.optimizer {
            None => out.push(0),
            Some(opt) => {
                out.push(1);
                put_u64(&mut out, opt.step);
                put_u64(&mut out, (opt.moments.len() * MOMENT_KINDS.len()) as u64);
                for (name, mo) in &opt.moments {
                    for (kind, t) in MOMENT_KINDS.iter().zip([&mo.m, &mo.v, &mo.v_max]) {
                        put_record(&mut out, &format!("{kind}/{name}"), t);
                    }
                }
            }
        }
        let sum = CHECKSUM.checksum(&out);
        put_u64(&mut out, sum);
        out
    }

    /// Records stored at the other precision are converted.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 4 + 8 || &bytes[..4] != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let (payload, tail) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
        if CHECKSUM.checksum(payload) != stored {
            return Err(Error::Format("checkpoint checksum mismatch".into()));
        }
        let mut r = Reader { bytes: payload, pos: 8 };
        let config = r.string()?;
        let mut params = ModelParams::new();
        for _ in 0..r.len()? {
            let (name, t) = r.record()?;
            params.insert(name, t)?;
        }
        let optimizer = match r.take(1)?[0] {
            0 => None,
            1 => {
                let step = r.u64()?;
                let count = r.len()?;
                let mut parts: BTreeMap<String, [Option<Tensor<T>>; 3]> = BTreeMap::new();
                for _ in 0..count {
                    let (full, t) = r.record()?;
                    let (kind, name) = full
                        .split_once('/')
                        .ok_or_else(|| Error::Format(format!("bad optimizer record '{full}'")))?;
                    let k = MOMENT_KINDS
                        .iter()
                        .position(|m| *m == kind)
                        .ok_or_else(|| Error::Format(format!("bad optimizer record '{full}'")))?;
                    let slot = &mut parts.entry(name.to_string()).or_default()[k];
                    if slot.replace(t).is_some() {
                        return Err(Error::Format(format!("duplicate optimizer record '{full}'")));
                    }
                }
                let moments = parts
                    .into_iter()
                    .map(|(name, [m, v, v_max])| match (m, v, v_max) {
                        (Some(m), Some(v), Some(v_max)) => Ok((name, Moments { m, v, v_max })),
                        _ => Err(Error::Format(format!("incomplete optimizer state for '{name}'"))),
                    })
                    .collect::<Result<_>>()?;
                Some(OptimizerState { step, moments })
            }
            f => return Err(Error::Format(format!("bad optimizer flag {f}"))),
        };
        if r.pos != payload.len() {
            return Err(Error::Format(format!("{} trailing bytes in checkpoint", payload.len() - r.pos)));
        }
        Ok(Checkpoint { config, params, optimizer })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}
