//! File formats: PMTS records, BLVC checkpoints, CSV records. All binary
//! fields little-endian; all writes atomic (temp file + rename) so a
//! crashed run never leaves a truncated artifact behind.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ModelDims, ModelParams, LATENT_DIM};
use crate::numgrad::{Matrix, ParamStore};
use crate::pipeline::{check_latent_dim, Checkpoint, EpochStats, Normalizer};
use crate::synth::{ModeLabel, OperatingPoint, PressureRecord, CHANNELS};

const PMTS_MAGIC: &[u8; 4] = b"PMTS";
const PMTS_VERSION: u16 = 1;
const CKPT_MAGIC: &[u8; 4] = b"BLVC";
const CKPT_VERSION: u16 = 1;

/// Writes via a sibling temp file and rename so readers never observe a
/// partial artifact.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "record".into())
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Writer {
        Writer { buf: Vec::new() }
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn bytes(&mut self, v: &[u8]) {
        self.buf.extend_from_slice(v);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Reader<'a> {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format(format!(
                "truncated at byte {} reading {field}",
                self.pos
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self, field: &str) -> Result<u8> {
        Ok(self.take(1, field)?[0])
    }

    fn u16(&mut self, field: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, field)?.try_into().unwrap()))
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }

    fn u64(&mut self, field: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, field)?.try_into().unwrap()))
    }

    fn f64(&mut self, field: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, field)?.try_into().unwrap()))
    }

    fn f64_vec(&mut self, n: usize, field: &str) -> Result<Vec<f64>> {
        let raw = self.take(8 * n, field)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn finish(&self, what: &str) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!(
                "{what}: {} trailing bytes after byte {}",
                self.buf.len() - self.pos,
                self.pos
            )));
        }
        Ok(())
    }
}

pub fn save_record_pmts(rec: &PressureRecord, path: &Path) -> Result<()> {
    let mut w = Writer::new();
    w.bytes(PMTS_MAGIC);
    w.u16(PMTS_VERSION);
    w.u16(rec.samples.cols() as u16);
    w.f64(rec.sample_rate);
    w.u64(rec.n_samples() as u64);
    w.f64(rec.operating_point.q);
    w.f64(rec.operating_point.phi);
    w.u8(rec.label.map_or(0, ModeLabel::as_u8));
    for v in rec.samples.as_slice() {
        w.f64(*v);
    }
    write_atomic(path, &w.buf)
}

pub fn load_record_pmts(path: &Path) -> Result<PressureRecord> {
    let bytes = fs::read(path)?;
    let mut r = Reader::new(&bytes);
    let magic = r.take(4, "magic")?;
    if magic != PMTS_MAGIC {
        return Err(Error::Format(format!(
            "{}: bad magic {magic:02x?}, expected PMTS",
            path.display()
        )));
    }
    let version = r.u16("version")?;
    if version != PMTS_VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported PMTS version {version}",
            path.display()
        )));
    }
    let channels = r.u16("channel count")? as usize;
    if channels != CHANNELS {
        return Err(Error::Format(format!(
            "{}: channel count {channels}, expected {CHANNELS}",
            path.display()
        )));
    }
    let sample_rate = r.f64("sample rate")?;
    let count = r.u64("sample count")? as usize;
    let q = r.f64("Q")?;
    let phi = r.f64("phi")?;
    let label_byte = r.u8("label")?;
    let label = match label_byte {
        0 => None,
        1..=3 => ModeLabel::from_u8(label_byte),
        other => {
            return Err(Error::Format(format!(
                "{}: label byte {other} outside 0..=3",
                path.display()
            )))
        }
    };
    let data = r.f64_vec(
        count
            .checked_mul(CHANNELS)
            .ok_or_else(|| Error::Format("sample count overflows".into()))?,
        "samples",
    )?;
    r.finish("PMTS record")?;
    let samples = Matrix::from_vec(count, CHANNELS, data)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if !(sample_rate > 0.0) || !sample_rate.is_finite() {
        return Err(Error::Format(format!(
            "{}: bad sample rate {sample_rate}",
            path.display()
        )));
    }
    PressureRecord::new(
        samples,
        sample_rate,
        count as f64 / sample_rate,
        OperatingPoint::new(q, phi),
        label,
        file_stem(path),
    )
}

fn channel_name(i: usize) -> String {
    format!("ch{i:02}")
}

pub fn save_record_csv(rec: &PressureRecord, path: &Path, with_time: bool) -> Result<()> {
    let mut out = String::new();
    if with_time {
        out.push_str("t,");
    }
    let names: Vec<String> = (0..CHANNELS).map(channel_name).collect();
    out.push_str(&names.join(","));
    out.push('\n');
    for i in 0..rec.n_samples() {
        let mut fields = Vec::with_capacity(CHANNELS + 1);
        if with_time {
            fields.push(format!("{:.9}", i as f64 / rec.sample_rate));
        }
        for v in rec.samples.row(i) {
            fields.push(format!("{v:.17e}"));
        }
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

/// CSV records carry no metadata, so rate, operating point, and label come
/// from the caller.
pub fn load_record_csv(
    path: &Path,
    sample_rate: f64,
    op: OperatingPoint,
    label: Option<ModeLabel>,
) -> Result<PressureRecord> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Format(format!("{}: empty file", path.display())))?;
    let fields: Vec<&str> = header.split(',').map(str::trim).collect();
    let has_time = fields.first().map(|f| f.eq_ignore_ascii_case("t")) == Some(true);
    let ch_fields = if has_time { &fields[1..] } else { &fields[..] };
    if ch_fields.len() != CHANNELS {
        return Err(Error::Format(format!(
            "{}: header has {} channel columns, expected {CHANNELS}",
            path.display(),
            ch_fields.len()
        )));
    }
    for (i, f) in ch_fields.iter().enumerate() {
        if !f.eq_ignore_ascii_case(&channel_name(i)) {
            return Err(Error::Format(format!(
                "{}: header field {:?}, expected {:?}",
                path.display(),
                f,
                channel_name(i)
            )));
        }
    }
    let mut data = Vec::new();
    let mut rows = 0usize;
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',').map(str::trim);
        if has_time {
            fields.next();
        }
        let mut count = 0;
        for f in fields {
            let v: f64 = f.parse().map_err(|_| {
                Error::Format(format!(
                    "{}:{}: cannot parse {f:?} as a number",
                    path.display(),
                    lineno + 1
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::Format(format!(
                    "{}:{}: non-finite value {f:?}",
                    path.display(),
                    lineno + 1
                )));
            }
            data.push(v);
            count += 1;
        }
        if count != CHANNELS {
            return Err(Error::Format(format!(
                "{}:{}: {count} channel values, expected {CHANNELS}",
                path.display(),
                lineno + 1
            )));
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::Format(format!(
            "{}: no data rows",
            path.display()
        )));
    }
    if !(sample_rate > 0.0) || !sample_rate.is_finite() {
        return Err(Error::Input(format!("bad sample rate {sample_rate}")));
    }
    let samples = Matrix::from_vec(rows, CHANNELS, data)?;
    PressureRecord::new(
        samples,
        sample_rate,
        rows as f64 / sample_rate,
        op,
        label,
        file_stem(path),
    )
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let mut w = Writer::new();
    w.bytes(CKPT_MAGIC);
    w.u16(CKPT_VERSION);
    w.u16(ckpt.dims.channels as u16);
    w.u32(ckpt.dims.h1 as u32);
    w.u32(ckpt.dims.h2 as u32);
    w.u32(LATENT_DIM as u32);
    w.u64(ckpt.window_len as u64);
    w.u64(ckpt.stride as u64);
    w.u64(ckpt.seed);
    w.f64(ckpt.beta);
    w.f64(ckpt.learning_rate);
    w.u16(ckpt.normalizer.channels() as u16);
    for v in &ckpt.normalizer.mean {
        w.f64(*v);
    }
    for v in &ckpt.normalizer.std {
        w.f64(*v);
    }
    let store = ckpt.params.to_store();
    w.u16(store.len() as u16);
    for (name, tensor, _) in store.entries() {
        w.u16(name.len() as u16);
        w.bytes(name.as_bytes());
        w.u32(2);
        w.u64(tensor.rows() as u64);
        w.u64(tensor.cols() as u64);
        for v in tensor.as_slice() {
            w.f64(*v);
        }
    }
    w.u64(ckpt.history.len() as u64);
    for e in &ckpt.history {
        w.f64(e.train_loss);
        w.f64(e.val_loss);
    }
    write_atomic(path, &w.buf)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path)?;
    let mut r = Reader::new(&bytes);
    let magic = r.take(4, "magic")?;
    if magic != CKPT_MAGIC {
        return Err(Error::Format(format!(
            "{}: bad magic {magic:02x?}, expected BLVC",
            path.display()
        )));
    }
    let version = r.u16("version")?;
    if version != CKPT_VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported checkpoint version {version}",
            path.display()
        )));
    }
    let channels = r.u16("channels")? as usize;
    let h1 = r.u32("h1")? as usize;
    let h2 = r.u32("h2")? as usize;
    let latent = r.u32("latent dim")? as usize;
    check_latent_dim(latent).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let window_len = r.u64("window length")? as usize;
    let stride = r.u64("stride")? as usize;
    let seed = r.u64("seed")?;
    let beta = r.f64("beta")?;
    let learning_rate = r.f64("learning rate")?;
    let norm_channels = r.u16("normalizer channels")? as usize;
    if norm_channels != channels {
        return Err(Error::Format(format!(
            "{}: normalizer has {norm_channels} channels, hyperparameters say {channels}",
            path.display()
        )));
    }
    let mean = r.f64_vec(norm_channels, "normalizer means")?;
    let std = r.f64_vec(norm_channels, "normalizer stds")?;
    for (ch, s) in std.iter().enumerate() {
        if !(*s > 0.0) || !s.is_finite() {
            return Err(Error::Format(format!(
                "{}: normalizer std for ch{ch:02} is {s}",
                path.display()
            )));
        }
    }
    let tensor_count = r.u16("tensor count")? as usize;
    let mut store = ParamStore::new();
    for i in 0..tensor_count {
        let name_len = r.u16("tensor name length")? as usize;
        let name_bytes = r.take(name_len, "tensor name")?;
        let name = std::str::from_utf8(name_bytes)
            .map_err(|_| Error::Format(format!("tensor {i}: name is not UTF-8")))?
            .to_string();
        let rank = r.u32("tensor rank")?;
        if rank != 2 {
            return Err(Error::Format(format!(
                "tensor {name:?}: rank {rank}, expected 2"
            )));
        }
        let rows = r.u64("tensor rows")? as usize;
        let cols = r.u64("tensor cols")? as usize;
        let len = rows
            .checked_mul(cols)
            .filter(|&l| l <= (bytes.len() - r.pos) / 8 + 1)
            .ok_or_else(|| Error::Format(format!("tensor {name:?}: implausible shape")))?;
        let data = r.f64_vec(len, "tensor data")?;
        let m = Matrix::from_vec(rows, cols, data)
            .map_err(|e| Error::Format(format!("tensor {name:?}: {e}")))?;
        store
            .insert(&name, m)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    }
    let epoch_count = r.u64("history length")? as usize;
    if epoch_count > (bytes.len() - r.pos) / 16 + 1 {
        return Err(Error::Format("implausible history length".into()));
    }
    let mut history = Vec::with_capacity(epoch_count);
    for _ in 0..epoch_count {
        let train_loss = r.f64("history train loss")?;
        let val_loss = r.f64("history val loss")?;
        history.push(EpochStats {
            train_loss,
            val_loss,
        });
    }
    r.finish("checkpoint")?;
    let dims = ModelDims::new(channels, h1, h2)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let params = ModelParams::from_store(dims, &store)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    Ok(Checkpoint {
        dims,
        window_len,
        stride,
        seed,
        beta,
        learning_rate,
        normalizer: Normalizer { mean, std },
        params,
        history,
    })
}
