//! CPIA: a self-describing container for dense `f64` arrays.
//!
//! | bytes | field |
//! |-------|-------|
//! | 4 | magic `CPIA` |
//! | 4 | header length `n` (u32 LE) |
//! | n | JSON header: version, dtype, shape, axes with units and scales, attrs |
//! | 8 x len | data, `f64` LE, row-major |
//! | 8 | checksum of header and data |

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use cpi_core::correlator::CorrelationTensor;
use cpi_core::refocus::RefocusedImage;
use cpi_core::Arm;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::FormatError;

pub const MAGIC: &[u8; 4] = b"CPIA";
pub const VERSION: u16 = 1;

type Result<T> = std::result::Result<T, FormatError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisInfo {
    pub name: String,
    pub unit: String,
    /// Coordinate of index 0.
    pub origin: f64,
    pub step: f64,
}

impl AxisInfo {
    pub fn new(name: &str, unit: &str, origin: f64, step: f64) -> Self {
        AxisInfo { name: name.into(), unit: unit.into(), origin, step }
    }

    pub fn coord(&self, i: usize) -> f64 {
        self.origin + i as f64 * self.step
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayHeader {
    pub version: u16,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub axes: Vec<AxisInfo>,
    #[serde(default)]
    pub attrs: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Array {
    pub axes: Vec<AxisInfo>,
    pub shape: Vec<usize>,
    pub attrs: Map<String, Value>,
    pub data: Vec<f64>,
}

impl Array {
    pub fn new(axes: Vec<AxisInfo>, shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(axes.len(), shape.len());
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Array { axes, shape, attrs: Map::new(), data }
    }

    pub fn with_attr(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.attrs.insert(key.into(), value.into());
        self
    }

    pub fn axis(&self, name: &str) -> Option<&AxisInfo> {
        self.axes.iter().find(|a| a.name == name)
    }

    pub fn attr_f64(&self, key: &str) -> Option<f64> {
        self.attrs.get(key).and_then(Value::as_f64)
    }

    fn header(&self) -> ArrayHeader {
        ArrayHeader {
            version: VERSION,
            dtype: "f64".into(),
            shape: self.shape.clone(),
            axes: self.axes.clone(),
            attrs: self.attrs.clone(),
        }
    }

    /// Encoded file contents.
    pub fn to_bytes(&self) -> Vec<u8> {
        let json = serde_json::to_vec(&self.header()).expect("header serializes");
        let mut out = Vec::with_capacity(16 + json.len() + 8 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let sum = crate::checksum::checksum(&out[8..]);
        out.extend_from_slice(&sum.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let actual = bytes.len() as u64;
        let truncated = |expected| FormatError::Truncated { path: path.to_path_buf(), expected, actual };
        if bytes.len() < 4 {
            return Err(truncated(16));
        }
        if &bytes[..4] != MAGIC {
            return Err(FormatError::BadMagic { path: path.to_path_buf(), expected: "CPIA" });
        }
        if bytes.len() < 8 {
            return Err(truncated(16));
        }
        let n = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
        if bytes.len() < 8 + n {
            return Err(truncated(8 + n as u64 + 8));
        }
        let header: ArrayHeader = serde_json::from_slice(&bytes[8..8 + n])
            .map_err(|e| FormatError::header(path, format!("array header: {e}")))?;
        if header.version != VERSION {
            return Err(FormatError::UnsupportedVersion { path: path.to_path_buf(), version: header.version });
        }
        if header.dtype != "f64" {
            return Err(FormatError::header(path, format!("unsupported dtype {:?}", header.dtype)));
        }
        if header.axes.len() != header.shape.len() {
            return Err(FormatError::header(path, "axis count differs from rank"));
        }
        let len = header
            .shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| FormatError::header(path, "shape overflows"))?;
        let expected = 8 + n as u64 + 8 * len as u64 + 8;
        if actual < expected {
            return Err(truncated(expected));
        }
        if actual > expected {
            return Err(FormatError::header(path, format!("{} trailing bytes after the checksum", actual - expected)));
        }
        let body = &bytes[8..bytes.len() - 8];
        let stored = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().expect("8 bytes"));
        let computed = crate::checksum::checksum(body);
        if stored != computed {
            return Err(FormatError::ChecksumMismatch { path: path.to_path_buf(), stored, computed });
        }
        let data = body[n..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(Array { axes: header.axes, shape: header.shape, attrs: header.attrs, data })
    }
}

pub fn write_array(array: &Array, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| FormatError::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&array.to_bytes()).map_err(|e| FormatError::io(path, e))?;
    w.flush().map_err(|e| FormatError::io(path, e))
}

pub fn read_array(path: &Path) -> Result<Array> {
    let bytes = std::fs::read(path).map_err(|e| FormatError::io(path, e))?;
    Array::from_bytes(&bytes, path)
}

const GAMMA_AXES: [&str; 4] = ["y_a", "x_a", "y_b", "x_b"];

/// Gamma as a `(y_a, x_a, y_b, x_b)` array.
pub fn tensor_to_array(t: &CorrelationTensor) -> Array {
    let mut axes = Vec::with_capacity(4);
    let mut shape = Vec::with_capacity(4);
    for arm in Arm::BOTH {
        let k = arm as usize;
        let [cols, rows] = t.shape(arm);
        let (yn, xn) = (GAMMA_AXES[2 * k], GAMMA_AXES[2 * k + 1]);
        axes.push(AxisInfo::new(yn, "mm", t.origin[k][1], t.pitch[k]));
        axes.push(AxisInfo::new(xn, "mm", t.origin[k][0], t.pitch[k]));
        shape.push(rows);
        shape.push(cols);
    }
    Array::new(axes, shape, t.values.clone())
        .with_attr("quantity", "gamma")
        .with_attr("n_t", t.n_t)
}

pub fn array_to_tensor(a: &Array, path: &Path) -> Result<CorrelationTensor> {
    let names: Vec<&str> = a.axes.iter().map(|x| x.name.as_str()).collect();
    if names != GAMMA_AXES {
        return Err(FormatError::header(path, format!("expected gamma axes {GAMMA_AXES:?}, found {names:?}")));
    }
    let n_t = a
        .attrs
        .get("n_t")
        .and_then(Value::as_u64)
        .ok_or_else(|| FormatError::header(path, "gamma array lacks the n_t attribute"))?;
    let ax = &a.axes;
    if ax[0].step != ax[1].step || ax[2].step != ax[3].step {
        return Err(FormatError::header(path, "gamma bins must be square"));
    }
    Ok(CorrelationTensor::new(
        [a.shape[1], a.shape[0]],
        [a.shape[3], a.shape[2]],
        ax[0].step,
        ax[2].step,
        [ax[1].origin, ax[0].origin],
        [ax[3].origin, ax[2].origin],
        n_t,
        a.data.clone(),
    ))
}

/// A refocused plane as a `(y_r, x_r)` array.
pub fn image_to_array(img: &RefocusedImage) -> Array {
    let [cols, rows] = img.shape;
    Array::new(
        vec![
            AxisInfo::new("y_r", "mm", img.origin[1], img.pitch),
            AxisInfo::new("x_r", "mm", img.origin[0], img.pitch),
        ],
        vec![rows, cols],
        img.values.clone(),
    )
    .with_attr("quantity", "refocused")
    .with_attr("z", img.z)
    .with_attr("s_radius", img.s_radius)
    .with_attr("undersampled_aperture", img.undersampled_aperture)
}

/// Writes `(coordinate, value)` rows.
pub fn write_profile_csv(path: &Path, header: [&str; 2], coords: &[f64], values: &[f64]) -> Result<()> {
    write_csv(path, &header, coords.iter().zip(values).map(|(c, v)| vec![*c, *v]))
}

pub fn write_csv<I>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<f64>>,
{
    let csv_err = |e: csv::Error| FormatError::io(path, std::io::Error::other(e));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(row.iter().map(|v| format!("{v}"))).map_err(csv_err)?;
    }
    w.flush().map_err(|e| FormatError::io(path, e))
}
