//! Dictionary cache file.
//!
//! Layout, all integers and floats little-endian:
//!
//! | bytes        | content                                        |
//! |--------------|------------------------------------------------|
//! | 8            | magic `BLIPDICT`                               |
//! | 4            | format version (`u32`, currently 1)            |
//! | 4            | header length `H` in bytes (`u32`)             |
//! | H            | UTF-8 JSON [`DictionaryHeader`]                |
//! | 16 * P * L   | atoms row-major, each entry `re: f64, im: f64` |
//!
//! The header carries the grid axes, the full excitation sequence and its
//! SHA-256 digest (see [`sequence_hash`]), so a cached dictionary can be
//! checked against the sequence an experiment is about to use.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BlochDictionary, ParameterGrid};
use crate::bloch::ExcitationSequence;
use crate::error::{Error, Result};

pub const DICT_MAGIC: &[u8; 8] = b"BLIPDICT";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DictionaryHeader {
    pub grid: ParameterGrid,
    pub sequence: ExcitationSequence,
    pub sequence_sha256: String,
    pub atoms: usize,
    pub sequence_length: usize,
}

/// SHA-256 over the pulse count (`u64`) followed by every flip angle and
/// then every repetition time as `f64`, little-endian, as lowercase hex.
pub fn sequence_hash(seq: &ExcitationSequence) -> String {
    let mut h = Sha256::new();
    h.update((seq.len() as u64).to_le_bytes());
    for a in seq.flip_angles() {
        h.update(a.to_le_bytes());
    }
    for tr in seq.repetition_times() {
        h.update(tr.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn write_dictionary(dict: &BlochDictionary, path: &Path) -> Result<()> {
    let header = DictionaryHeader {
        grid: dict.grid().clone(),
        sequence: dict.sequence().clone(),
        sequence_sha256: sequence_hash(dict.sequence()),
        atoms: dict.len(),
        sequence_length: dict.sequence_len(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(DICT_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    for v in dict.atoms().iter() {
        w.write_all(&v.re.to_le_bytes())?;
        w.write_all(&v.im.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Read a cached dictionary. When `expected` is given its hash must match
/// the one recorded in the file.
pub fn read_dictionary(path: &Path, expected: Option<&ExcitationSequence>) -> Result<BlochDictionary> {
    let bad = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != DICT_MAGIC {
        return Err(bad("missing BLIPDICT magic".into()));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported format version {version}")));
    }
    r.read_exact(&mut word)?;
    let mut json = vec![0u8; u32::from_le_bytes(word) as usize];
    r.read_exact(&mut json)?;
    let header: DictionaryHeader =
        serde_json::from_slice(&json).map_err(|e| bad(format!("header: {e}")))?;
    header.grid.validate()?;
    let sequence = ExcitationSequence::new(
        header.sequence.flip_angles().to_vec(),
        header.sequence.repetition_times().to_vec(),
    )?;
    let digest = sequence_hash(&sequence);
    if digest != header.sequence_sha256 {
        return Err(bad("sequence digest does not match stored sequence".into()));
    }
    if let Some(seq) = expected {
        if sequence_hash(seq) != digest {
            return Err(bad("dictionary was built for a different excitation sequence".into()));
        }
    }
    if header.atoms != header.grid.len() || header.sequence_length != sequence.len() {
        return Err(bad("header dimensions are inconsistent".into()));
    }
    let (p, l) = (header.atoms, header.sequence_length);
    let mut raw = Vec::with_capacity(16 * p * l);
    r.read_to_end(&mut raw)?;
    if raw.len() != 16 * p * l {
        return Err(bad(format!(
            "expected {} bytes of atom data, found {}",
            16 * p * l,
            raw.len()
        )));
    }
    let values: Vec<Complex64> = raw
        .chunks_exact(16)
        .map(|c| {
            Complex64::new(
                f64::from_le_bytes(c[..8].try_into().unwrap()),
                f64::from_le_bytes(c[8..].try_into().unwrap()),
            )
        })
        .collect();
    let atoms = Array2::from_shape_vec((p, l), values).map_err(|e| bad(e.to_string()))?;
    BlochDictionary::from_atoms(header.grid, sequence, atoms)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(a: f64) -> ExcitationSequence {
        ExcitationSequence::with_constant_tr(vec![a, -0.2, 0.15, 0.3, -0.05], 10.0).unwrap()
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let grid = ParameterGrid::new(vec![400.0, 900.0], vec![50.0, 90.0], vec![0.0, 5.0]).unwrap();
        let d = BlochDictionary::build(&grid, &seq(0.1)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.bin");
        write_dictionary(&d, &path).unwrap();
        let back = read_dictionary(&path, Some(&seq(0.1))).unwrap();
        assert_eq!(back.atoms(), d.atoms());
        assert_eq!(back.norms(), d.norms());
        assert_eq!(back.grid(), d.grid());
        assert!(matches!(
            read_dictionary(&path, Some(&seq(0.11))),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn truncated_file_is_rejected() {
        let grid = ParameterGrid::new(vec![400.0], vec![50.0], vec![0.0]).unwrap();
        let d = BlochDictionary::build(&grid, &seq(0.1)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.bin");
        write_dictionary(&d, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(read_dictionary(&path, None).is_err());
        std::fs::write(&path, b"NOTADICT").unwrap();
        assert!(read_dictionary(&path, None).is_err());
    }

    #[test]
    fn hash_is_sensitive_to_every_field() {
        let a = seq(0.1);
        let b = ExcitationSequence::new(a.flip_angles().to_vec(), vec![10.0, 10.0, 10.0, 10.0, 11.0])
            .unwrap();
        assert_ne!(sequence_hash(&a), sequence_hash(&b));
        assert_ne!(sequence_hash(&a), sequence_hash(&a.truncated(4).unwrap()));
        assert_eq!(sequence_hash(&a).len(), 64);
    }
}
