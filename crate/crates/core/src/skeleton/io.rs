//! Dataset file format.
//!
//! Little-endian. A fixed 64-byte header:
//!
//! ```text
//! 0   magic  "ACFLDS01"
//! 8   u32    version (1)
//! 12  u32    M, T, V, C, N, count
//! 36  u32    split (0 train, 1 test)
//! 40  u32    form (0 joint, 1 bone, 2 hybrid)
//! 44  u64    generator seed
//! 52  zero padding to 64
//! ```
//!
//! followed by `count` records of `u32 label` + `f32[M·T·V·C]`.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{Dataset, Form, SkeletonSequence, Split};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const DATASET_MAGIC: &[u8; 8] = b"ACFLDS01";
pub const DATASET_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 64;

pub fn encode_dataset(ds: &Dataset) -> Vec<u8> {
    let [m, t, v, c] = ds.dims();
    let per = m * t * v * c;
    let mut out = Vec::with_capacity(HEADER_LEN + ds.samples.len() * (4 + 4 * per));
    out.extend_from_slice(DATASET_MAGIC);
    for x in [
        DATASET_VERSION,
        m as u32,
        t as u32,
        v as u32,
        c as u32,
        ds.class_count as u32,
        ds.samples.len() as u32,
        ds.split as u32,
        ds.form().index() as u32,
    ] {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out.extend_from_slice(&ds.seed.to_le_bytes());
    out.resize(HEADER_LEN, 0);
    for s in &ds.samples {
        out.extend_from_slice(&(s.label as u32).to_le_bytes());
        for &x in s.data.data() {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    out
}

fn u32_at(bytes: &[u8], off: usize) -> u32 {
    u32::from_le_bytes(bytes[off..off + 4].try_into().expect("4 bytes"))
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(
            "header",
            format!("{} bytes, need {HEADER_LEN}", bytes.len()),
        ));
    }
    if &bytes[..8] != DATASET_MAGIC {
        return Err(Error::format("magic", format!("{:?}", &bytes[..8])));
    }
    let version = u32_at(bytes, 8);
    if version != DATASET_VERSION {
        return Err(Error::format("version", format!("{version}, expected {DATASET_VERSION}")));
    }
    let field = |name: &'static str, off: usize| -> Result<usize> {
        match u32_at(bytes, off) {
            0 => Err(Error::format(name, "zero")),
            x => Ok(x as usize),
        }
    };
    let m = field("M", 12)?;
    let t = field("T", 16)?;
    let v = field("V", 20)?;
    let c = field("C", 24)?;
    let n = field("N", 28)?;
    let count = field("count", 32)?;
    let split = match u32_at(bytes, 36) {
        0 => Split::Train,
        1 => Split::Test,
        x => return Err(Error::format("split", format!("{x}"))),
    };
    let form = Form::from_index(u32_at(bytes, 40) as usize)
        .ok_or_else(|| Error::format("form", format!("{}", u32_at(bytes, 40))))?;
    let seed = u64::from_le_bytes(bytes[44..52].try_into().expect("8 bytes"));
    if bytes[52..HEADER_LEN].iter().any(|&b| b != 0) {
        return Err(Error::format("padding", "reserved header bytes are not zero"));
    }

    let per = m * t * v * c;
    let record = 4 + 4 * per;
    let expected = HEADER_LEN + count * record;
    if bytes.len() != expected {
        return Err(Error::format(
            "payload",
            format!("{} bytes, header implies {expected}", bytes.len()),
        ));
    }
    let mut samples = Vec::with_capacity(count);
    for i in 0..count {
        let off = HEADER_LEN + i * record;
        let label = u32_at(bytes, off) as usize;
        if label >= n {
            return Err(Error::Validation(format!(
                "sample {i} has label {label} but N = {n}"
            )));
        }
        let data = bytes[off + 4..off + record]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
            .collect();
        samples.push(SkeletonSequence::new(Tensor::new(&[m, t, v, c], data)?, label, form)?);
    }
    Dataset::new(samples, n, split, seed)
}

/// Whole-file atomic write: temp file in the same directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(d) = dir {
        fs::create_dir_all(d)?;
    }
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    write_atomic(path, &encode_dataset(ds))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    decode_dataset(&fs::read(path)?)
}
