//! File formats: WDC1 datasets, WCK1 parameter checkpoints, WGP1 GAN
//! checkpoints, and headerless CSV for measured channels.
//!
//! Every multi-byte field is little-endian. Writes go to a temporary file in
//! the destination directory and are renamed into place, so a failed write
//! never leaves a partial file behind. Layouts are documented in
//! `docs/formats.md`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use num_complex::Complex64;

use crate::cgan::{GanPair, GanSpec};
use crate::chanmodel::{ComplexVec, WirelessDataset};
use crate::error::{Error, Result};
use crate::ndnet::{MlpSpec, ParamVector};

pub const DATASET_MAGIC: &[u8; 4] = b"WDC1";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"WCK1";
pub const GAN_MAGIC: &[u8; 4] = b"WGP1";
pub const FORMAT_VERSION: u16 = 1;

/// Bytes before the metadata JSON in a WDC1 file.
pub const DATASET_FIXED_HEADER: usize = 4 + 2 + 4 + 8 + 4 + 8 + 4;
/// Bytes before the parameters in a WCK1 file (64-char hex digest).
pub const CHECKPOINT_HEADER: usize = 4 + 2 + 4 + 64 + 8;

/// Writes `bytes` to `path` through a sibling temporary file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if path.as_os_str().is_empty() {
        return Err(Error::io(path, std::io::Error::new(std::io::ErrorKind::InvalidInput, "empty path")));
    }
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Corruption {
                offset: self.buf.len() as u64,
                reason: format!("file ends inside {what}, which needs bytes up to {}", self.pos as u64 + n as u64),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: u64, what: &str) -> Result<Vec<f64>> {
        let bytes = n
            .checked_mul(8)
            .and_then(|b| usize::try_from(b).ok())
            .ok_or_else(|| Error::Format(format!("{what} length {n} is implausible")))?;
        let raw = self.take(bytes, what)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn magic(&mut self, want: &[u8; 4]) -> Result<()> {
        let got = self.take(4, "magic")?;
        if got != want {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(want)
            )));
        }
        let v = self.u16("version")?;
        if v != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported format version {v}")));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Corruption {
                offset: self.pos as u64,
                reason: format!("{} trailing bytes", self.buf.len() - self.pos),
            });
        }
        Ok(())
    }
}

fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_dataset_file(ds: &WirelessDataset) -> Result<Vec<u8>> {
    ds.validate()?;
    let meta = serde_json::to_vec(&ds.meta).map_err(|e| Error::Format(e.to_string()))?;
    let nt = u32::try_from(ds.nt).map_err(|_| Error::invalid("nt does not fit in 32 bits"))?;
    let cond = u32::try_from(ds.condition_index).map_err(|_| Error::invalid("condition index does not fit in 32 bits"))?;
    let meta_len = u32::try_from(meta.len()).map_err(|_| Error::invalid("metadata too large"))?;
    let mut out = Vec::with_capacity(DATASET_FIXED_HEADER + meta.len() + ds.len() * ds.nt * 16);
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&nt.to_le_bytes());
    out.extend_from_slice(&(ds.len() as u64).to_le_bytes());
    out.extend_from_slice(&cond.to_le_bytes());
    out.extend_from_slice(&ds.scale.to_le_bytes());
    out.extend_from_slice(&meta_len.to_le_bytes());
    out.extend_from_slice(&meta);
    for s in &ds.samples {
        for c in &s.0 {
            out.extend_from_slice(&c.re.to_le_bytes());
            out.extend_from_slice(&c.im.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_dataset_file(bytes: &[u8]) -> Result<WirelessDataset> {
    let mut r = Reader::new(bytes);
    r.magic(DATASET_MAGIC)?;
    let nt = r.u32("nt")? as usize;
    let count = r.u64("sample count")?;
    let condition_index = r.u32("condition index")? as usize;
    let scale = r.f64("scale")?;
    let meta_len = r.u32("metadata length")? as usize;
    let meta_start = r.pos as u64;
    let meta: BTreeMap<String, String> = serde_json::from_slice(r.take(meta_len, "metadata")?)
        .map_err(|e| Error::Corruption {
            offset: meta_start,
            reason: format!("metadata is not a JSON string map: {e}"),
        })?;
    let values = r.f64s(count.saturating_mul(2 * nt as u64), "sample body")?;
    r.finish()?;
    let samples = if nt == 0 {
        Vec::new()
    } else {
        values
            .chunks_exact(2 * nt)
            .map(|s| ComplexVec(s.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect()))
            .collect()
    };
    let ds = WirelessDataset {
        nt,
        samples,
        condition_index,
        scale,
        meta,
    };
    ds.validate().map_err(|e| Error::Format(format!("decoded dataset is invalid: {e}")))?;
    Ok(ds)
}

pub fn save_dataset(ds: &WirelessDataset, path: &Path) -> Result<()> {
    write_atomic(path, &encode_dataset_file(ds)?)
}

pub fn load_dataset(path: &Path) -> Result<WirelessDataset> {
    decode_dataset_file(&read_file(path)?)
}

/// Parameters together with the digest of the spec they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec_digest: String,
    pub params: ParamVector,
}

fn encode_checkpoint(spec_digest: &str, params: &ParamVector) -> Result<Vec<u8>> {
    if spec_digest.len() != 64 || !spec_digest.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(Error::invalid("spec digest must be 64 hex characters"));
    }
    let mut out = Vec::with_capacity(CHECKPOINT_HEADER + 8 * params.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&64u32.to_le_bytes());
    out.extend_from_slice(spec_digest.as_bytes());
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    put_f64s(&mut out, params.as_slice());
    Ok(out)
}

fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::new(bytes);
    r.magic(CHECKPOINT_MAGIC)?;
    let dlen = r.u32("digest length")? as usize;
    if dlen != 64 {
        return Err(Error::Format(format!("digest length {dlen}, expected 64")));
    }
    let spec_digest = String::from_utf8(r.take(dlen, "spec digest")?.to_vec())
        .map_err(|_| Error::Format("spec digest is not ASCII".into()))?;
    let n = r.u64("parameter count")?;
    let params = ParamVector::new(r.f64s(n, "parameters")?);
    r.finish()?;
    Ok(Checkpoint { spec_digest, params })
}

pub fn save_checkpoint(spec_digest: &str, params: &ParamVector, path: &Path) -> Result<()> {
    write_atomic(path, &encode_checkpoint(spec_digest, params)?)
}

/// Reads a checkpoint without checking it against any spec.
pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&read_file(path)?)
}

/// Reads a checkpoint written for `spec`, rejecting any other.
pub fn load_checkpoint(path: &Path, spec: &MlpSpec) -> Result<ParamVector> {
    let ck = read_checkpoint(path)?;
    let want = spec.digest();
    if ck.spec_digest != want {
        return Err(Error::Compatibility(format!(
            "checkpoint was written for spec {}, expected {want}",
            ck.spec_digest
        )));
    }
    if ck.params.len() != spec.param_count() {
        return Err(Error::Compatibility(format!(
            "checkpoint holds {} parameters, spec needs {}",
            ck.params.len(),
            spec.param_count()
        )));
    }
    Ok(ck.params)
}

/// Saves both networks and the architecture. Optimizer state is not kept.
pub fn save_gan(pair: &GanPair, path: &Path) -> Result<()> {
    let spec = serde_json::to_vec(&pair.spec).map_err(|e| Error::Format(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(GAN_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(spec.len() as u32).to_le_bytes());
    out.extend_from_slice(&spec);
    for p in [&pair.gen_params, &pair.disc_params] {
        out.extend_from_slice(&(p.len() as u64).to_le_bytes());
        put_f64s(&mut out, p.as_slice());
    }
    write_atomic(path, &out)
}

/// Loads a pair saved by [`save_gan`], with fresh default optimizers.
pub fn load_gan(path: &Path) -> Result<GanPair> {
    let bytes = read_file(path)?;
    let mut r = Reader::new(&bytes);
    r.magic(GAN_MAGIC)?;
    let len = r.u32("spec length")? as usize;
    let at = r.pos as u64;
    let spec: GanSpec = serde_json::from_slice(r.take(len, "spec")?).map_err(|e| Error::Corruption {
        offset: at,
        reason: format!("spec is not valid JSON: {e}"),
    })?;
    let n = r.u64("generator length")?;
    let gen = ParamVector::new(r.f64s(n, "generator parameters")?);
    let n = r.u64("discriminator length")?;
    let disc = ParamVector::new(r.f64s(n, "discriminator parameters")?);
    r.finish()?;
    GanPair::from_params(spec, gen, disc).map_err(|e| Error::Compatibility(e.to_string()))
}

/// Like [`load_gan`], but fails unless the stored architecture is `spec`.
pub fn load_gan_expecting(path: &Path, spec: &GanSpec) -> Result<GanPair> {
    let pair = load_gan(path)?;
    if pair.spec.digest() != spec.digest() {
        return Err(Error::Compatibility("GAN checkpoint architecture differs from the configured one".into()));
    }
    Ok(pair)
}

/// Headerless CSV, one channel per row: `Re h_1, Im h_1, ..., Re h_nt, Im h_nt`.
pub fn import_csv(path: &Path, nt: usize, condition_index: usize) -> Result<WirelessDataset> {
    if nt == 0 {
        return Err(Error::invalid("nt must be at least 1"));
    }
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut samples = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| match e.position() {
            Some(p) => Error::Parse {
                line: p.line() as usize,
                reason: e.to_string(),
            },
            None => Error::Format(e.to_string()),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != 2 * nt {
            return Err(Error::Parse {
                line,
                reason: format!("expected {} fields, found {}", 2 * nt, rec.len()),
            });
        }
        let mut vals = Vec::with_capacity(2 * nt);
        for (col, field) in rec.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                line,
                reason: format!("field {} ({field:?}) is not a number", col + 1),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    reason: format!("field {} is not finite", col + 1),
                });
            }
            vals.push(v);
        }
        samples.push(ComplexVec(vals.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect()));
    }
    if samples.is_empty() {
        return Err(Error::invalid(format!("{} holds no samples", path.display())));
    }
    Ok(WirelessDataset::new(nt, samples, condition_index, 1.0)?.with_meta("source", "imported"))
}

/// Writes physical-unit samples in the [`import_csv`] layout. Values use the
/// shortest representation that parses back to the same bits.
pub fn export_csv(ds: &WirelessDataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    for i in 0..ds.len() {
        let row: Vec<String> = ds
            .physical(i)
            .0
            .iter()
            .flat_map(|c| [c.re.to_string(), c.im.to_string()])
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}
