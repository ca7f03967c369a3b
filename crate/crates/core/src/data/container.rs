//! `MMIX` feature container and its JSON sidecar manifest.
//!
//! Binary layout, all integers little-endian:
//!
//! ```text
//! "MMIX"                      4 bytes
//! version                     u16 (= 1)
//! N (modalities)              u16
//! repeated until end of file:
//!   id length                 u16
//!   id                        UTF-8 bytes
//!   label                     u32
//!   N times:
//!     T                       u32
//!     d_f                     u32
//!     T * d_f values          f32, row-major
//! ```
//!
//! The manifest sits next to the container with a `.json` extension.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{class_counts, ModalSample, TaskSpec};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"MMIX";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub samples: usize,
    pub per_class: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u16,
    /// Modality names in stream order; concatenations follow this order.
    pub modalities: Vec<String>,
    pub class_names: Vec<String>,
    pub counts: SplitCounts,
    pub seq_len: usize,
    pub d_f: usize,
    /// Generator settings when the data is synthetic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<TaskSpec>,
}

impl Manifest {
    pub fn for_samples(
        samples: &[ModalSample],
        modalities: Vec<String>,
        class_names: Vec<String>,
        task: Option<TaskSpec>,
    ) -> Self {
        Manifest {
            format: "MMIX".into(),
            version: VERSION,
            modalities,
            counts: SplitCounts {
                samples: samples.len(),
                per_class: class_counts(samples, class_names.len()),
            },
            class_names,
            seq_len: samples.first().map_or(0, ModalSample::seq_len),
            d_f: samples.first().map_or(0, ModalSample::d_f),
            task,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub samples: Vec<ModalSample>,
}

pub fn manifest_path(container: &Path) -> PathBuf {
    container.with_extension("json")
}

pub fn encode(samples: &[ModalSample], n_modalities: usize) -> Result<Vec<u8>> {
    let n = u16::try_from(n_modalities)
        .map_err(|_| Error::Argument(format!("{n_modalities} modalities do not fit u16")))?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&n.to_le_bytes());
    for s in samples {
        s.validate()?;
        if s.sequences.len() != n_modalities {
            return Err(Error::Validation(vec![format!(
                "sample {} has {} modalities, container expects {n_modalities}",
                s.id,
                s.sequences.len()
            )]));
        }
        let id = s.id.as_bytes();
        let id_len = u16::try_from(id.len())
            .map_err(|_| Error::Argument(format!("sample id {:?} is too long", s.id)))?;
        let label = u32::try_from(s.label)
            .map_err(|_| Error::Argument(format!("label {} does not fit u32", s.label)))?;
        buf.extend_from_slice(&id_len.to_le_bytes());
        buf.extend_from_slice(id);
        buf.extend_from_slice(&label.to_le_bytes());
        for seq in &s.sequences {
            let (t, d) = seq.dims2();
            buf.extend_from_slice(&(t as u32).to_le_bytes());
            buf.extend_from_slice(&(d as u32).to_le_bytes());
            for v in seq.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(buf)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.pos as u64,
                format!(
                    "truncated {what}: need {n} bytes, {} left",
                    self.bytes.len() - self.pos
                ),
            ));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn at_end(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

/// Decodes a whole container. Any malformed or truncated record fails the
/// entire read.
pub fn decode(bytes: &[u8]) -> Result<(usize, Vec<ModalSample>)> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::format(0, format!("bad magic {magic:?}, expected \"MMIX\"")));
    }
    let version = cur.u16("version")?;
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let n = cur.u16("modality count")? as usize;
    if n == 0 {
        return Err(Error::format(6, "container declares zero modalities"));
    }
    let mut samples = Vec::new();
    while !cur.at_end() {
        let start = cur.pos as u64;
        let id_len = cur.u16("id length")? as usize;
        let id = std::str::from_utf8(cur.take(id_len, "id")?)
            .map_err(|e| Error::format(start + 2, format!("id is not UTF-8: {e}")))?
            .to_string();
        let label = cur.u32("label")? as usize;
        let mut sequences = Vec::with_capacity(n);
        for _ in 0..n {
            let t = cur.u32("sequence length")? as usize;
            let d = cur.u32("feature width")? as usize;
            let count = t.checked_mul(d).filter(|c| c.checked_mul(4).is_some()).ok_or_else(
                || Error::format(cur.pos as u64, format!("sequence size {t}x{d} overflows")),
            )?;
            let raw = cur.take(count * 4, "sequence data")?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            sequences.push(Tensor::new(vec![t, d], data)?);
        }
        samples.push(ModalSample {
            id,
            label,
            sequences,
        });
    }
    Ok((n, samples))
}

/// Writes the container and its manifest. Files are written to a temporary
/// name first and renamed into place.
pub fn write_container(samples: &[ModalSample], manifest: &Manifest, path: &Path) -> Result<()> {
    validate_manifest(manifest, manifest.modalities.len(), samples)?;
    let bytes = encode(samples, manifest.modalities.len())?;
    let json = serde_json::to_vec_pretty(manifest).map_err(|e| Error::Json {
        path: manifest_path(path),
        source: e,
    })?;
    write_atomic(path, &bytes)?;
    write_atomic(&manifest_path(path), &json)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Checks that a manifest describes `samples`.
pub fn validate_manifest(manifest: &Manifest, n: usize, samples: &[ModalSample]) -> Result<()> {
    let mut bad = Vec::new();
    if manifest.modalities.len() != n {
        bad.push(format!(
            "manifest lists {} modalities, container has {n}",
            manifest.modalities.len()
        ));
    }
    if manifest.counts.samples != samples.len() {
        bad.push(format!(
            "manifest counts {} samples, container has {}",
            manifest.counts.samples,
            samples.len()
        ));
    }
    let k = manifest.num_classes();
    if let Some(s) = samples.iter().find(|s| s.label >= k) {
        bad.push(format!(
            "sample {} has label {} but the manifest names {k} classes",
            s.id, s.label
        ));
    } else if manifest.counts.per_class != class_counts(samples, k) {
        bad.push("manifest per-class counts disagree with labels".into());
    }
    for s in samples {
        if s.sequences.len() != n {
            bad.push(format!("sample {} has {} modalities", s.id, s.sequences.len()));
        } else if let Err(Error::Validation(v)) = s.validate() {
            bad.extend(v);
        } else if s.seq_len() != manifest.seq_len || s.d_f() != manifest.d_f {
            bad.push(format!(
                "sample {} is [{}, {}], manifest says [{}, {}]",
                s.id,
                s.seq_len(),
                s.d_f(),
                manifest.seq_len,
                manifest.d_f
            ));
        }
        if bad.len() > 16 {
            break;
        }
    }
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(bad))
    }
}

/// Reads a container and its manifest, validating one against the other.
pub fn read_container(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (n, samples) = decode(&bytes)?;
    let mpath = manifest_path(path);
    let text = fs::read(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: Manifest = serde_json::from_slice(&text).map_err(|e| Error::Json {
        path: mpath.clone(),
        source: e,
    })?;
    validate_manifest(&manifest, n, &samples)?;
    Ok(Dataset { manifest, samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, TaskSpec};

    fn tiny() -> (TaskSpec, Vec<ModalSample>) {
        let spec = TaskSpec {
            m: 2,
            seq_len: 3,
            d_f: 4,
            train_per_class: 2,
            test_per_class: 1,
            ..TaskSpec::default()
        };
        let (train, _) = generate(&spec).unwrap();
        (spec, train)
    }

    #[test]
    fn header_bytes() {
        let (_, samples) = tiny();
        let bytes = encode(&samples, 2).unwrap();
        assert_eq!(&bytes[..4], b"MMIX");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!(u16::from_le_bytes([bytes[6], bytes[7]]), 2);
    }

    #[test]
    fn every_truncation_fails_with_offset() {
        let (_, samples) = tiny();
        let bytes = encode(&samples, 2).unwrap();
        let record = (bytes.len() - 8) / samples.len();
        for cut in [1, 5, 7, 9, 8 + record - 1, bytes.len() - 1] {
            match decode(&bytes[..cut]) {
                Err(Error::Format { offset, .. }) => assert!(offset <= cut as u64),
                other => panic!("cut at {cut}: expected format error, got {other:?}"),
            }
        }
        // a cut exactly on a record boundary is a shorter valid file
        let (_, fewer) = decode(&bytes[..8 + record]).unwrap();
        assert_eq!(fewer.len(), 1);
    }

    #[test]
    fn bad_magic_and_version() {
        let (_, samples) = tiny();
        let mut bytes = encode(&samples, 2).unwrap();
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(Error::Format { offset: 0, .. })));
        bytes[0] = b'M';
        bytes[4] = 9;
        assert!(matches!(decode(&bytes), Err(Error::Format { offset: 4, .. })));
    }

    #[test]
    fn manifest_class_count_mismatch() {
        let (spec, samples) = tiny();
        let mut manifest = Manifest::for_samples(
            &samples,
            spec.modality_names(),
            spec.class_names(),
            Some(spec.clone()),
        );
        validate_manifest(&manifest, 2, &samples).unwrap();
        manifest.class_names.pop();
        assert!(matches!(
            validate_manifest(&manifest, 2, &samples),
            Err(Error::Validation(_))
        ));
    }
}
