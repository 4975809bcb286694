//! Minimal NPY (v1.0/v2.0/v3.0) reader and writer for `|u1` and `<f8`
//! arrays, and NPZ archives of them.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Read, Seek, Write};
use std::path::Path;

use super::DatasetError;

const MAGIC: &[u8; 6] = b"\x93NUMPY";

#[derive(Debug, Clone, PartialEq)]
pub enum NpyData {
    U8(Vec<u8>),
    F64(Vec<f64>),
}

impl NpyData {
    pub fn len(&self) -> usize {
        match self {
            NpyData::U8(v) => v.len(),
            NpyData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn descr(&self) -> &'static str {
        match self {
            NpyData::U8(_) => "|u1",
            NpyData::F64(_) => "<f8",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NpyArray {
    pub shape: Vec<usize>,
    pub fortran_order: bool,
    pub data: NpyData,
}

impl NpyArray {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    /// Element strides (in items) for the stored memory order.
    pub fn strides(&self) -> Vec<usize> {
        let n = self.shape.len();
        let mut strides = vec![1; n];
        if self.fortran_order {
            for i in 1..n {
                strides[i] = strides[i - 1] * self.shape[i - 1];
            }
        } else {
            for i in (0..n.saturating_sub(1)).rev() {
                strides[i] = strides[i + 1] * self.shape[i + 1];
            }
        }
        strides
    }

    pub fn value(&self, offset: usize) -> f64 {
        match &self.data {
            NpyData::U8(v) => f64::from(v[offset]),
            NpyData::F64(v) => v[offset],
        }
    }
}

pub fn read_npy<R: Read>(r: &mut R) -> Result<NpyArray, DatasetError> {
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)
        .map_err(|_| DatasetError::Truncated("magic string".into()))?;
    if &magic != MAGIC {
        return Err(DatasetError::BadMagic);
    }
    let mut version = [0u8; 2];
    r.read_exact(&mut version)
        .map_err(|_| DatasetError::Truncated("version".into()))?;
    let header_len = match version[0] {
        1 => {
            let mut b = [0u8; 2];
            r.read_exact(&mut b)
                .map_err(|_| DatasetError::Truncated("header length".into()))?;
            u16::from_le_bytes(b) as usize
        }
        2 | 3 => {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)
                .map_err(|_| DatasetError::Truncated("header length".into()))?;
            u32::from_le_bytes(b) as usize
        }
        major => return Err(DatasetError::UnsupportedVersion(major, version[1])),
    };
    let mut header = vec![0u8; header_len];
    r.read_exact(&mut header)
        .map_err(|_| DatasetError::Truncated("header".into()))?;
    let header = String::from_utf8(header)
        .map_err(|_| DatasetError::BadHeader("header is not text".into()))?;
    let (descr, fortran_order, shape) = parse_header(&header)?;
    let numel: usize = shape.iter().product();
    let data = match descr.as_str() {
        "|u1" | "<u1" | "u1" => {
            let mut v = vec![0u8; numel];
            r.read_exact(&mut v)
                .map_err(|_| DatasetError::Truncated(format!("payload of {numel} bytes")))?;
            NpyData::U8(v)
        }
        "<f8" => {
            let mut bytes = vec![0u8; numel * 8];
            r.read_exact(&mut bytes)
                .map_err(|_| DatasetError::Truncated(format!("payload of {numel} doubles")))?;
            NpyData::F64(
                bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
            )
        }
        other => return Err(DatasetError::UnsupportedDtype(other.to_string())),
    };
    Ok(NpyArray {
        shape,
        fortran_order,
        data,
    })
}

/// Parses the Python dict literal, e.g.
/// `{'descr': '|u1', 'fortran_order': False, 'shape': (2, 2), }`.
fn parse_header(header: &str) -> Result<(String, bool, Vec<usize>), DatasetError> {
    let bad = |msg: &str| DatasetError::BadHeader(format!("{msg} in {header:?}"));
    let body = header.trim().trim_end_matches('\n').trim();
    let body = body
        .strip_prefix('{')
        .and_then(|b| b.trim_end().strip_suffix('}'))
        .ok_or_else(|| bad("not a dict"))?;

    let value_after = |key: &str| -> Result<&str, DatasetError> {
        let pat_single = format!("'{key}'");
        let pat_double = format!("\"{key}\"");
        let at = body
            .find(&pat_single)
            .map(|i| i + pat_single.len())
            .or_else(|| body.find(&pat_double).map(|i| i + pat_double.len()))
            .ok_or_else(|| bad(&format!("missing key {key}")))?;
        let rest = body[at..].trim_start();
        rest.strip_prefix(':')
            .map(str::trim_start)
            .ok_or_else(|| bad(&format!("no value for {key}")))
    };

    let descr_raw = value_after("descr")?;
    let quote = descr_raw.chars().next().ok_or_else(|| bad("empty descr"))?;
    if quote != '\'' && quote != '"' {
        return Err(bad("descr is not a string"));
    }
    let end = descr_raw[1..].find(quote).ok_or_else(|| bad("unterminated descr"))?;
    let descr = descr_raw[1..1 + end].to_string();

    let fo = value_after("fortran_order")?;
    let fortran_order = if fo.starts_with("True") {
        true
    } else if fo.starts_with("False") {
        false
    } else {
        return Err(bad("fortran_order is not a bool"));
    };

    let shape_raw = value_after("shape")?;
    let inner = shape_raw
        .strip_prefix('(')
        .and_then(|s| s.find(')').map(|e| &s[..e]))
        .ok_or_else(|| bad("shape is not a tuple"))?;
    let shape = inner
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.trim_end_matches('L').parse::<usize>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| bad("non-integer shape entry"))?;
    Ok((descr, fortran_order, shape))
}

/// Writes a version 1.0 file with the header padded to a 64-byte boundary.
pub fn write_npy<W: Write>(w: &mut W, array: &NpyArray) -> Result<(), DatasetError> {
    if array.numel() != array.data.len() {
        return Err(DatasetError::BadHeader(format!(
            "shape {:?} does not match {} items",
            array.shape,
            array.data.len()
        )));
    }
    let shape = match array.shape.len() {
        1 => format!("({},)", array.shape[0]),
        _ => format!(
            "({})",
            array
                .shape
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(", ")
        ),
    };
    let mut header = format!(
        "{{'descr': '{}', 'fortran_order': {}, 'shape': {}, }}",
        array.data.descr(),
        if array.fortran_order { "True" } else { "False" },
        shape
    );
    let unpadded = MAGIC.len() + 2 + 2 + header.len() + 1;
    header.push_str(&" ".repeat((64 - unpadded % 64) % 64));
    header.push('\n');
    let len = u16::try_from(header.len())
        .map_err(|_| DatasetError::BadHeader("header too long for v1.0".into()))?;
    w.write_all(MAGIC)?;
    w.write_all(&[1, 0])?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(header.as_bytes())?;
    match &array.data {
        NpyData::U8(v) => w.write_all(v)?,
        NpyData::F64(v) => {
            for x in v {
                w.write_all(&x.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

/// Reads every `.npy` entry of a zip archive, keyed by entry name without
/// the extension.
pub fn read_npz<R: Read + Seek>(reader: R) -> Result<BTreeMap<String, NpyArray>, DatasetError> {
    let mut archive = zip::ZipArchive::new(reader)?;
    let mut out = BTreeMap::new();
    for i in 0..archive.len() {
        let mut entry = archive.by_index(i)?;
        if entry.is_dir() {
            continue;
        }
        let name = entry.name().to_string();
        let key = name.strip_suffix(".npy").unwrap_or(&name).to_string();
        let array = read_npy(&mut entry)?;
        out.insert(key, array);
    }
    if out.is_empty() {
        return Err(DatasetError::NoArrays);
    }
    Ok(out)
}

pub fn load_npz(path: &Path) -> Result<BTreeMap<String, NpyArray>, DatasetError> {
    let file = File::open(path).map_err(|e| DatasetError::Open(path.display().to_string(), e))?;
    read_npz(BufReader::new(file))
}

/// Uncompressed archive writer, used for fixtures and dataset dumps.
pub fn write_npz<W: Write + Seek>(
    writer: W,
    arrays: &BTreeMap<String, NpyArray>,
) -> Result<(), DatasetError> {
    let mut zip = zip::ZipWriter::new(writer);
    let options = zip::write::SimpleFileOptions::default()
        .compression_method(zip::CompressionMethod::Stored);
    for (name, array) in arrays {
        zip.start_file(format!("{name}.npy"), options)?;
        write_npy(&mut zip, array)?;
    }
    zip.finish()?;
    Ok(())
}
