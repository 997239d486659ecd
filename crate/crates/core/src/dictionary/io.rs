//! VD1 dictionaries: a JSON sidecar plus raw little-endian f64 atoms, atom-major.

use std::fs;
use std::path::Path;

use ndarray::{Array2, ShapeBuilder};
use serde::{Deserialize, Serialize};

use super::{Dictionary, Provenance};
use crate::error::{Error, Result};
use crate::volume::{stem, with_suffix, PatchSpec};

pub const VD1: &str = "VD1";

/// Norm tolerance applied when loading.
pub const LOAD_NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    n: usize,
    k: usize,
    patch: [usize; 3],
    lambda: f64,
    #[serde(default)]
    provenance: Option<Provenance>,
}

pub fn save_dictionary(dictionary: &Dictionary, path: impl AsRef<Path>) -> Result<()> {
    let stem = stem(path.as_ref());
    if let Some(dir) = stem.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let spec = dictionary.spec();
    let header = Header {
        format: VD1.into(),
        n: dictionary.n(),
        k: dictionary.k(),
        patch: [spec.h, spec.h, spec.v],
        lambda: dictionary.provenance.lambda,
        provenance: Some(dictionary.provenance.clone()),
    };
    let mut bytes = Vec::with_capacity(dictionary.n() * dictionary.k() * 8);
    for col in dictionary.atoms().columns() {
        for v in col {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(with_suffix(&stem, ".json"), serde_json::to_string_pretty(&header)?)?;
    fs::write(with_suffix(&stem, ".raw"), bytes)?;
    Ok(())
}

pub fn load_dictionary(path: impl AsRef<Path>) -> Result<Dictionary> {
    let stem = stem(path.as_ref());
    let json = with_suffix(&stem, ".json");
    let bad = |reason: String| Error::MalformedHeader {
        path: json.clone(),
        reason,
    };
    let header: Header = serde_json::from_str(&fs::read_to_string(&json)?).map_err(|e| bad(e.to_string()))?;
    if header.format != VD1 {
        return Err(bad(format!("format {:?}, expected {VD1:?}", header.format)));
    }
    let [h, h2, v] = header.patch;
    if h != h2 {
        return Err(bad(format!("patch {:?} is not square laterally", header.patch)));
    }
    if h * h * v != header.n || header.n == 0 || header.k == 0 {
        return Err(bad(format!("n = {} does not match patch {:?}", header.n, header.patch)));
    }
    let raw = with_suffix(&stem, ".raw");
    let bytes = fs::read(&raw)?;
    let count = header.n * header.k;
    if bytes.len() != count * 8 {
        return Err(Error::PayloadLength {
            path: raw,
            expected: count * 8,
            found: bytes.len(),
        });
    }
    let mut data = Vec::with_capacity(count);
    for (index, chunk) in bytes.chunks_exact(8).enumerate() {
        let x = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        if !x.is_finite() {
            return Err(Error::NonFinite { index });
        }
        data.push(x);
    }
    let atoms = Array2::from_shape_vec((header.n, header.k).f(), data).expect("length checked");
    let spec = PatchSpec::dense(h, v);
    Dictionary::check(&spec, &atoms, LOAD_NORM_TOLERANCE)?;
    let mut provenance = header.provenance.unwrap_or_default();
    provenance.lambda = header.lambda;
    Ok(Dictionary {
        spec,
        atoms,
        provenance,
    })
}
