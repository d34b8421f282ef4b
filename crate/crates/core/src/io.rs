//! Binary and text file formats.
//!
//! All binary formats are little-endian with `f32` payloads in row-major
//! order.
//!
//! * TRGE embeddings: `"TRGE"`, version `u16` = 1, reserved `u16` = 0,
//!   rows `u32`, cols `u32`, payload. Labels live in a
//!   `<stem>.labels.json` sidecar.
//! * TRGW checkpoints: `"TRGW"`, version `u16` = 1, then records of
//!   name length `u16`, UTF-8 name, rank `u8`, extents `u32` each, payload.
//! * TRGS sequences: `"TRGS"`, version `u16` = 1, C0 `u32`, T `u32`,
//!   V `u32`, payload of shape `C0 x T x V`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::textgraph::LabeledEmbeddings;

const EMBED_MAGIC: &[u8; 4] = b"TRGE";
const WEIGHT_MAGIC: &[u8; 4] = b"TRGW";
const SEQ_MAGIC: &[u8; 4] = b"TRGS";
const VERSION: u16 = 1;

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], what: &'static str) -> Self {
        Reader { buf, pos: 0, what }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(Error::Truncated(self.what))?;
        let s = self.buf.get(self.pos..end).ok_or(Error::Truncated(self.what))?;
        self.pos = end;
        Ok(s)
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let found = self.take(4)?;
        if found != expected {
            return Err(Error::BadMagic {
                expected: String::from_utf8_lossy(expected).into_owned(),
                found: String::from_utf8_lossy(found).into_owned(),
            });
        }
        Ok(())
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(4).ok_or(Error::Truncated(self.what))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
            .collect())
    }

    fn version(&mut self, format: &'static str) -> Result<()> {
        match self.u16()? {
            VERSION => Ok(()),
            v => Err(Error::Version { format, version: v }),
        }
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

fn push_f32s(out: &mut Vec<u8>, data: &[f64]) {
    out.reserve(data.len() * 4);
    for &v in data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

// ---- embeddings -------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSidecar {
    pub labels: Vec<String>,
    #[serde(default)]
    pub source: String,
    #[serde(default = "default_pooling")]
    pub pooling: String,
}

fn default_pooling() -> String {
    "mean".into()
}

/// `foo/bar.trge` -> `foo/bar.labels.json`
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("labels.json")
}

pub fn decode_embedding_payload(bytes: &[u8]) -> Result<Tensor> {
    let mut r = Reader::new(bytes, "TRGE");
    r.magic(EMBED_MAGIC)?;
    r.version("TRGE")?;
    let _reserved = r.u16()?;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let data = r.f32s(rows * cols)?;
    if !r.done() {
        return Err(Error::invalid("trailing bytes after TRGE payload"));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("TRGE payload".into()));
    }
    Ok(Tensor::new([rows, cols], data)?)
}

pub fn encode_embedding_payload(m: &Tensor) -> Result<Vec<u8>> {
    let [rows, cols] = m.shape()[..] else {
        return Err(Error::invalid("embedding matrix must be 2-D"));
    };
    let mut out = Vec::with_capacity(16 + m.numel() * 4);
    out.extend_from_slice(EMBED_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(cols as u32).to_le_bytes());
    push_f32s(&mut out, m.data());
    Ok(out)
}

pub fn read_embeddings(path: &Path) -> Result<LabeledEmbeddings> {
    let matrix = decode_embedding_payload(&read_file(path)?)?;
    let side_path = sidecar_path(path);
    let side: LabelSidecar = serde_json::from_slice(&read_file(&side_path)?)?;
    LabeledEmbeddings::new(side.labels, matrix)
}

pub fn write_embeddings(path: &Path, e: &LabeledEmbeddings, source: &str) -> Result<()> {
    write_file(path, &encode_embedding_payload(e.matrix())?)?;
    let side = LabelSidecar {
        labels: e.labels().to_vec(),
        source: source.to_string(),
        pooling: default_pooling(),
    };
    write_file(&sidecar_path(path), serde_json::to_string_pretty(&side)?.as_bytes())
}

// ---- checkpoints ------------------------------------------------------------

pub fn encode_checkpoint<'a>(tensors: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(WEIGHT_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for (name, t) in tensors {
        let nb = name.as_bytes();
        let len = u16::try_from(nb.len()).map_err(|_| Error::invalid("tensor name too long"))?;
        let rank = u8::try_from(t.rank()).map_err(|_| Error::invalid("tensor rank too large"))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(nb);
        out.push(rank);
        for &e in t.shape() {
            let e = u32::try_from(e).map_err(|_| Error::invalid("extent exceeds u32"))?;
            out.extend_from_slice(&e.to_le_bytes());
        }
        push_f32s(&mut out, t.data());
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<BTreeMap<String, Tensor>> {
    let mut r = Reader::new(bytes, "TRGW");
    r.magic(WEIGHT_MAGIC)?;
    r.version("TRGW")?;
    let mut out = BTreeMap::new();
    while !r.done() {
        let len = r.u16()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::invalid("tensor name is not UTF-8"))?;
        let rank = r.u8()? as usize;
        let shape = (0..rank)
            .map(|_| r.u32().map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = shape.iter().product();
        let t = Tensor::new(shape, r.f32s(n)?)?;
        if out.insert(name.clone(), t).is_some() {
            return Err(Error::invalid(format!("duplicate tensor {name} in checkpoint")));
        }
    }
    Ok(out)
}

pub fn write_checkpoint<'a>(
    path: &Path,
    tensors: impl IntoIterator<Item = (&'a str, &'a Tensor)>,
) -> Result<()> {
    write_file(path, &encode_checkpoint(tensors)?)
}

pub fn read_checkpoint(path: &Path) -> Result<BTreeMap<String, Tensor>> {
    decode_checkpoint(&read_file(path)?)
}

// ---- sequences --------------------------------------------------------------

pub fn encode_sequence(x: &Tensor) -> Result<Vec<u8>> {
    let [c, t, v] = x.shape()[..] else {
        return Err(Error::invalid(format!("sequence must be C0 x T x V, got {:?}", x.shape())));
    };
    let mut out = Vec::with_capacity(18 + x.numel() * 4);
    out.extend_from_slice(SEQ_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for d in [c, t, v] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    push_f32s(&mut out, x.data());
    Ok(out)
}

pub fn decode_sequence(bytes: &[u8]) -> Result<Tensor> {
    let mut r = Reader::new(bytes, "TRGS");
    r.magic(SEQ_MAGIC)?;
    r.version("TRGS")?;
    let c = r.u32()? as usize;
    let t = r.u32()? as usize;
    let v = r.u32()? as usize;
    let data = r.f32s(c * t * v)?;
    if !r.done() {
        return Err(Error::invalid("trailing bytes after TRGS payload"));
    }
    if data.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("TRGS payload".into()));
    }
    Ok(Tensor::new([c, t, v], data)?)
}

pub fn write_sequence(path: &Path, x: &Tensor) -> Result<()> {
    write_file(path, &encode_sequence(x)?)
}

pub fn read_sequence(path: &Path) -> Result<Tensor> {
    decode_sequence(&read_file(path)?)
}

// ---- label CSVs -------------------------------------------------------------

/// `frame_index,label` with a header row.
pub fn labels_to_csv(labels: &[usize]) -> String {
    let mut s = String::from("frame_index,label\n");
    for (i, l) in labels.iter().enumerate() {
        s.push_str(&format!("{i},{l}\n"));
    }
    s
}

pub fn labels_from_csv(text: &str) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (lineno == 0 && line.starts_with("frame_index")) {
            continue;
        }
        let (idx, label) = line
            .split_once(',')
            .ok_or_else(|| Error::invalid(format!("line {}: expected frame_index,label", lineno + 1)))?;
        let parse = |s: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::invalid(format!("line {}: bad integer {s:?}", lineno + 1)))
        };
        let idx = parse(idx)?;
        if idx != out.len() {
            return Err(Error::invalid(format!(
                "line {}: frame index {idx}, expected {}",
                lineno + 1,
                out.len()
            )));
        }
        out.push(parse(label)?);
    }
    Ok(out)
}

pub fn write_labels(path: &Path, labels: &[usize]) -> Result<()> {
    write_file(path, labels_to_csv(labels).as_bytes())
}

pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let bytes = read_file(path)?;
    labels_from_csv(&String::from_utf8_lossy(&bytes))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    write_file(path, text.as_bytes())
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedding_header_is_sixteen_bytes() {
        let m = Tensor::from_fn([52, 768], |i| i as f64 * 1e-3 + 1.0);
        let bytes = encode_embedding_payload(&m).unwrap();
        assert_eq!(bytes.len(), 16 + 52 * 768 * 4);
    }

    #[test]
    fn embedding_round_trip_is_exact_for_f32_values() {
        let m = Tensor::from_fn([3, 4], |i| f64::from(i as f32 * 0.25 - 1.0));
        let back = decode_embedding_payload(&encode_embedding_payload(&m).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn bad_magic_and_truncation() {
        let m = Tensor::ones([2, 2]);
        let mut bytes = encode_embedding_payload(&m).unwrap();
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(
            decode_embedding_payload(&bytes),
            Err(Error::BadMagic { .. })
        ));
        let bytes = encode_embedding_payload(&m).unwrap();
        assert!(matches!(
            decode_embedding_payload(&bytes[..bytes.len() - 1]),
            Err(Error::Truncated("TRGE"))
        ));
    }

    #[test]
    fn sidecar_label_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.trge");
        fs::write(&path, encode_embedding_payload(&Tensor::ones([3, 2])).unwrap()).unwrap();
        fs::write(sidecar_path(&path), r#"{"labels": ["a", "b"], "source": "t", "pooling": "mean"}"#)
            .unwrap();
        assert!(matches!(
            read_embeddings(&path),
            Err(Error::LabelMismatch { labels: 2, rows: 3 })
        ));
    }

    #[test]
    fn non_finite_payload_rejected() {
        let m = Tensor::new([1, 2], vec![1.0, f64::NAN]).unwrap();
        let bytes = encode_embedding_payload(&m).unwrap();
        assert!(matches!(decode_embedding_payload(&bytes), Err(Error::NonFinite(_))));
    }

    #[test]
    fn checkpoint_layout() {
        let t = Tensor::new([2], vec![1.5, -2.0]).unwrap();
        let bytes = encode_checkpoint([("ab", &t)]).unwrap();
        let mut want = b"TRGW".to_vec();
        want.extend_from_slice(&1u16.to_le_bytes());
        want.extend_from_slice(&2u16.to_le_bytes());
        want.extend_from_slice(b"ab");
        want.push(1);
        want.extend_from_slice(&2u32.to_le_bytes());
        want.extend_from_slice(&1.5f32.to_le_bytes());
        want.extend_from_slice(&(-2.0f32).to_le_bytes());
        assert_eq!(bytes, want);
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back["ab"], t);
    }

    #[test]
    fn labels_csv_round_trip_and_errors() {
        let labels = vec![0, 0, 2, 1];
        assert_eq!(labels_from_csv(&labels_to_csv(&labels)).unwrap(), labels);
        assert!(labels_from_csv("frame_index,label\n1,0\n").is_err());
        assert!(labels_from_csv("0,x\n").is_err());
    }

    #[test]
    fn sequence_round_trip() {
        let x = Tensor::from_fn([2, 3, 4], |i| f64::from(i as f32));
        assert_eq!(decode_sequence(&encode_sequence(&x).unwrap()).unwrap(), x);
    }
}
