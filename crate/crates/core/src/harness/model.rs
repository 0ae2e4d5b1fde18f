//! Versioned binary model files.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` payload length, the
//! payload, then the SHA-256 of everything before it. All integers and
//! floats are little-endian; floats are stored as raw bits.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::dal::{DaLayerState, MixedStats, Mode};
use crate::error::{Error, Result};
use crate::net::{Dense, Layer, Network};

pub const MAGIC: &[u8; 8] = b"DALKMODL";
pub const FORMAT_VERSION: u32 = 1;
const HEADER: usize = 8 + 4 + 8;
const DIGEST: usize = 32;

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_bits().to_le_bytes());
    }
    fn f64s(&mut self, vs: &[f64]) {
        self.u32(vs.len());
        vs.iter().for_each(|&v| self.f64(v));
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

fn fmt_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| fmt_err("model payload truncated"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn flag(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(fmt_err(format!("invalid flag byte {b}"))),
        }
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.u32()?;
        if n > (self.buf.len() - self.pos) / 8 {
            return Err(fmt_err("model payload truncated"));
        }
        (0..n).map(|_| self.f64()).collect()
    }
}

const TAG_DENSE: u8 = 0;
const TAG_RELU: u8 = 1;
const TAG_DA: u8 = 2;
const TAG_SOFTMAX: u8 = 3;

fn write_stats(w: &mut Writer, s: &MixedStats) {
    w.f64s(&s.mu_st);
    w.f64s(&s.var_st);
    w.f64s(&s.mu_ts);
    w.f64s(&s.var_ts);
    w.f64(s.eps);
    w.f64(s.alpha_used);
}

fn read_stats(r: &mut Reader<'_>) -> Result<MixedStats> {
    Ok(MixedStats {
        mu_st: r.f64s()?,
        var_st: r.f64s()?,
        mu_ts: r.f64s()?,
        var_ts: r.f64s()?,
        eps: r.f64()?,
        alpha_used: r.f64()?,
    })
}

fn payload(net: &Network) -> Vec<u8> {
    let mut w = Writer::default();
    w.u32(net.layers().len());
    for layer in net.layers() {
        match layer {
            Layer::Dense(d) => {
                w.u8(TAG_DENSE);
                w.u32(d.inputs);
                w.u32(d.outputs);
                w.f64s(&d.weight);
                match &d.bias {
                    Some(b) => {
                        w.u8(1);
                        w.f64s(b);
                    }
                    None => w.u8(0),
                }
            }
            Layer::Relu => w.u8(TAG_RELU),
            Layer::Da(st) => {
                w.u8(TAG_DA);
                w.u32(st.channels);
                w.f64(st.alpha);
                w.u8(st.alpha_trainable as u8);
                w.f64(st.momentum);
                w.f64(st.eps);
                w.u64(st.updates);
                w.u8((st.mode == Mode::Frozen) as u8);
                w.f64s(&st.moving_mu_s);
                w.f64s(&st.moving_var_s);
                w.f64s(&st.moving_mu_t);
                w.f64s(&st.moving_var_t);
                match &st.frozen_stats {
                    Some(s) => {
                        w.u8(1);
                        write_stats(&mut w, s);
                    }
                    None => w.u8(0),
                }
            }
            Layer::Softmax { classes } => {
                w.u8(TAG_SOFTMAX);
                w.u32(*classes);
            }
        }
    }
    w.0
}

fn parse_payload(buf: &[u8]) -> Result<Network> {
    let mut r = Reader { buf, pos: 0 };
    let count = r.u32()?;
    let mut layers = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        layers.push(match r.u8()? {
            TAG_DENSE => Layer::Dense(Dense {
                inputs: r.u32()?,
                outputs: r.u32()?,
                weight: r.f64s()?,
                bias: if r.flag()? { Some(r.f64s()?) } else { None },
            }),
            TAG_RELU => Layer::Relu,
            TAG_DA => {
                let channels = r.u32()?;
                let alpha = r.f64()?;
                let alpha_trainable = r.flag()?;
                let momentum = r.f64()?;
                let eps = r.f64()?;
                let updates = r.u64()?;
                let mode = if r.flag()? { Mode::Frozen } else { Mode::Train };
                let (moving_mu_s, moving_var_s, moving_mu_t, moving_var_t) =
                    (r.f64s()?, r.f64s()?, r.f64s()?, r.f64s()?);
                let frozen_stats = if r.flag()? { Some(read_stats(&mut r)?) } else { None };
                if [&moving_mu_s, &moving_var_s, &moving_mu_t, &moving_var_t]
                    .iter()
                    .any(|v| v.len() != channels)
                    || frozen_stats.as_ref().is_some_and(|s| s.channels() != channels)
                    || (mode == Mode::Frozen) != frozen_stats.is_some()
                {
                    return Err(fmt_err("inconsistent DA-layer record"));
                }
                Layer::Da(DaLayerState {
                    alpha,
                    alpha_trainable,
                    channels,
                    moving_mu_s,
                    moving_var_s,
                    moving_mu_t,
                    moving_var_t,
                    momentum,
                    eps,
                    mode,
                    frozen_stats,
                    updates,
                })
            }
            TAG_SOFTMAX => Layer::Softmax { classes: r.u32()? },
            t => return Err(fmt_err(format!("unknown layer tag {t}"))),
        });
    }
    if r.pos != buf.len() {
        return Err(fmt_err("trailing bytes after model payload"));
    }
    Network::from_layers(layers).map_err(|e| fmt_err(format!("invalid network: {e}")))
}

pub fn encode_model(net: &Network) -> Vec<u8> {
    let body = payload(net);
    let mut out = Vec::with_capacity(HEADER + body.len() + DIGEST);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(body.len() as u64).to_le_bytes());
    out.extend_from_slice(&body);
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

/// Decodes a model file image. Nothing is returned unless the header,
/// length and checksum all verify.
pub fn decode_model(bytes: &[u8]) -> Result<Network> {
    if bytes.len() < HEADER {
        return Err(fmt_err("model file truncated"));
    }
    if &bytes[..8] != MAGIC {
        return Err(fmt_err("not a model file (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(fmt_err(format!(
            "unsupported model format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let expected = (HEADER as u64).checked_add(len).and_then(|n| n.checked_add(DIGEST as u64));
    match expected {
        Some(n) if n == bytes.len() as u64 => {}
        Some(n) if n > bytes.len() as u64 => return Err(fmt_err("model file truncated")),
        _ => return Err(fmt_err("model file length does not match its header")),
    }
    let split = bytes.len() - DIGEST;
    if Sha256::digest(&bytes[..split]).as_slice() != &bytes[split..] {
        return Err(fmt_err("model checksum mismatch"));
    }
    parse_payload(&bytes[HEADER..split])
}

pub fn save_model(net: &Network, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.to_path_buf(), e))?;
    }
    std::fs::write(path, encode_model(net)).map_err(|e| Error::io(path.to_path_buf(), e))
}

pub fn load_model(path: &Path) -> Result<Network> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.to_path_buf(), e))?;
    decode_model(&bytes)
}
