//! Model checkpoints: a single-line JSON header (kind, dtype, endianness,
//! config, tensor directory) followed by a newline and the raw little-endian
//! f64 payload. Spectral weights are stored complex-interleaved (re, im).

use crate::bcbf::BarrierModel;
use crate::error::{Error, Result};
use crate::neural_operator::{FnoConfig, FnoModel};
use crate::scalar::Real;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

#[derive(Debug, Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    /// Number of f64 values (interleaved complex counts both planes).
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct BarrierHeader {
    widths: Vec<usize>,
    alpha: f64,
    c_gain: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    kind: String,
    dtype: String,
    endianness: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    fno: Option<FnoConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bcbf: Option<BarrierHeader>,
    tensors: Vec<TensorInfo>,
}

fn write_checkpoint(path: &Path, header: &Header, payload: &[f64]) -> Result<()> {
    let mut bytes = serde_json::to_string(header)
        .map_err(|e| Error::Corrupt(format!("header serialization failed: {e}")))?
        .into_bytes();
    bytes.push(b'\n');
    bytes.reserve(payload.len() * 8);
    for v in payload {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

fn read_checkpoint(path: &Path) -> Result<(Header, Vec<f64>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(|_| Error::Missing(format!("checkpoint {}", path.display())))?
        .read_to_end(&mut bytes)?;
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Corrupt(format!("{}: no header line", path.display())))?;
    let header: Header = serde_json::from_slice(&bytes[..nl]).map_err(|e| {
        Error::Corrupt(format!("{}: malformed header: {e}", path.display()))
    })?;
    if header.dtype != "f64" {
        return Err(Error::Corrupt(format!(
            "{}: unsupported dtype {}",
            path.display(),
            header.dtype
        )));
    }
    if header.endianness != "little" {
        return Err(Error::Corrupt(format!(
            "{}: unsupported endianness {}",
            path.display(),
            header.endianness
        )));
    }
    let want: usize = header.tensors.iter().map(|t| t.len).sum();
    let payload = &bytes[nl + 1..];
    if payload.len() != want * 8 {
        return Err(Error::Corrupt(format!(
            "{}: payload truncated or oversized: expected {} floats ({} bytes), found {} bytes",
            path.display(),
            want,
            want * 8,
            payload.len()
        )));
    }
    let floats = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((header, floats))
}

fn fno_tensor_dir(cfg: &FnoConfig) -> Vec<TensorInfo> {
    let c = cfg.channels;
    let mut t = vec![
        TensorInfo { name: "p_w".into(), len: cfg.lift_in_dim() * c },
        TensorInfo { name: "p_b".into(), len: c },
    ];
    for l in 0..cfg.layers {
        t.push(TensorInfo {
            name: format!("blocks.{l}.r"),
            len: 2 * cfg.modes * c * c,
        });
        t.push(TensorInfo { name: format!("blocks.{l}.w"), len: c * c });
        t.push(TensorInfo { name: format!("blocks.{l}.b"), len: c });
    }
    t.push(TensorInfo { name: "q1_w".into(), len: c * c });
    t.push(TensorInfo { name: "q1_b".into(), len: c });
    t.push(TensorInfo { name: "q2_w".into(), len: c * cfg.d_y });
    t.push(TensorInfo { name: "q2_b".into(), len: cfg.d_y });
    t
}

pub fn save_fno<S: Real>(path: &Path, model: &FnoModel<S>) -> Result<()> {
    let header = Header {
        kind: "fno".into(),
        dtype: "f64".into(),
        endianness: "little".into(),
        fno: Some(model.cfg.clone()),
        bcbf: None,
        tensors: fno_tensor_dir(&model.cfg),
    };
    let mut payload = Vec::with_capacity(model.n_params());
    let push = |payload: &mut Vec<f64>, t: &[S]| {
        payload.extend(t.iter().map(|v| v.as_f64()));
    };
    push(&mut payload, &model.p_w);
    push(&mut payload, &model.p_b);
    for blk in &model.blocks {
        for (re, im) in blk.r_re.iter().zip(&blk.r_im) {
            payload.push(re.as_f64());
            payload.push(im.as_f64());
        }
        push(&mut payload, &blk.w);
        push(&mut payload, &blk.b);
    }
    push(&mut payload, &model.q1_w);
    push(&mut payload, &model.q1_b);
    push(&mut payload, &model.q2_w);
    push(&mut payload, &model.q2_b);
    write_checkpoint(path, &header, &payload)
}

pub fn load_fno<S: Real>(path: &Path) -> Result<FnoModel<S>> {
    let (header, floats) = read_checkpoint(path)?;
    if header.kind != "fno" {
        return Err(Error::Corrupt(format!(
            "{}: checkpoint kind is '{}', expected 'fno'",
            path.display(),
            header.kind
        )));
    }
    let cfg = header.fno.ok_or_else(|| {
        Error::Corrupt(format!("{}: missing operator config", path.display()))
    })?;
    let expected = fno_tensor_dir(&cfg);
    if header.tensors.len() != expected.len()
        || header
            .tensors
            .iter()
            .zip(&expected)
            .any(|(a, b)| a.name != b.name || a.len != b.len)
    {
        return Err(Error::Corrupt(format!(
            "{}: tensor directory does not match the stored config",
            path.display()
        )));
    }
    let mut model = FnoModel::<S>::zeros(cfg)?;
    let mut pos = 0usize;
    let mut take = |n: usize| {
        let s = &floats[pos..pos + n];
        pos += n;
        s
    };
    let fill = |dst: &mut [S], src: &[f64]| {
        for (d, s) in dst.iter_mut().zip(src) {
            *d = S::of(*s);
        }
    };
    let (pw_len, pb_len) = (model.p_w.len(), model.p_b.len());
    fill(&mut model.p_w, take(pw_len));
    fill(&mut model.p_b, take(pb_len));
    for blk in model.blocks.iter_mut() {
        let r = take(2 * blk.r_re.len());
        for (i, pair) in r.chunks_exact(2).enumerate() {
            blk.r_re[i] = S::of(pair[0]);
            blk.r_im[i] = S::of(pair[1]);
        }
        let (w_len, b_len) = (blk.w.len(), blk.b.len());
        fill(&mut blk.w, take(w_len));
        fill(&mut blk.b, take(b_len));
    }
    let (q1w, q1b, q2w, q2b) = (
        model.q1_w.len(),
        model.q1_b.len(),
        model.q2_w.len(),
        model.q2_b.len(),
    );
    fill(&mut model.q1_w, take(q1w));
    fill(&mut model.q1_b, take(q1b));
    fill(&mut model.q2_w, take(q2w));
    fill(&mut model.q2_b, take(q2b));
    debug_assert_eq!(pos, floats.len());
    Ok(model)
}

/// Load and require the stored config to equal `want` exactly.
pub fn load_fno_expect<S: Real>(path: &Path, want: &FnoConfig) -> Result<FnoModel<S>> {
    let model = load_fno::<S>(path)?;
    if model.cfg != *want {
        return Err(Error::Corrupt(format!(
            "{}: stored operator config differs from the requested one \
             (stored channels {}, layers {}, modes {}, range [{}, {}])",
            path.display(),
            model.cfg.channels,
            model.cfg.layers,
            model.cfg.modes,
            model.cfg.m_min,
            model.cfg.m_max
        )));
    }
    Ok(model)
}

pub fn save_bcbf<S: Real>(path: &Path, model: &BarrierModel<S>) -> Result<()> {
    let mut tensors = Vec::new();
    for (k, (w, b)) in model.w.iter().zip(&model.b).enumerate() {
        tensors.push(TensorInfo { name: format!("w{k}"), len: w.len() });
        tensors.push(TensorInfo { name: format!("b{k}"), len: b.len() });
    }
    let header = Header {
        kind: "bcbf".into(),
        dtype: "f64".into(),
        endianness: "little".into(),
        fno: None,
        bcbf: Some(BarrierHeader {
            widths: model.widths.clone(),
            alpha: model.alpha.as_f64(),
            c_gain: model.c_gain.as_f64(),
        }),
        tensors,
    };
    let mut payload = Vec::with_capacity(model.n_params());
    for (w, b) in model.w.iter().zip(&model.b) {
        payload.extend(w.iter().map(|v| v.as_f64()));
        payload.extend(b.iter().map(|v| v.as_f64()));
    }
    write_checkpoint(path, &header, &payload)
}

pub fn load_bcbf<S: Real>(path: &Path) -> Result<BarrierModel<S>> {
    let (header, floats) = read_checkpoint(path)?;
    if header.kind != "bcbf" {
        return Err(Error::Corrupt(format!(
            "{}: checkpoint kind is '{}', expected 'bcbf'",
            path.display(),
            header.kind
        )));
    }
    let bh = header.bcbf.ok_or_else(|| {
        Error::Corrupt(format!("{}: missing barrier header", path.display()))
    })?;
    let mut model = BarrierModel::<S>::with_widths(
        &bh.widths,
        S::of(bh.alpha),
        S::of(bh.c_gain),
    )?;
    let want: usize = model.n_params();
    if floats.len() != want {
        return Err(Error::Corrupt(format!(
            "{}: barrier payload holds {} floats, widths imply {want}",
            path.display(),
            floats.len()
        )));
    }
    let mut pos = 0usize;
    for (w, b) in model.w.iter_mut().zip(model.b.iter_mut()) {
        for v in w.iter_mut() {
            *v = S::of(floats[pos]);
            pos += 1;
        }
        for v in b.iter_mut() {
            *v = S::of(floats[pos]);
            pos += 1;
        }
    }
    Ok(model)
}

/// Hex SHA-256 of a file, for run manifests.
pub fn sha256_hex(path: &Path) -> Result<String> {
    use sha2::{Digest, Sha256};
    let mut f = std::fs::File::open(path)
        .map_err(|_| Error::Missing(format!("file {}", path.display())))?;
    let mut hasher = Sha256::new();
    std::io::copy(&mut f, &mut hasher)?;
    Ok(hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}
