//! Little-endian container of named `f64` matrices, used for the context
//! dictionary, fusion head and projector.
//!
//! ```text
//! "EMBS" | u32 version = 1
//! u32 meta_len | meta_len bytes of UTF-8 provenance
//! u32 sections
//! per section: u32 name_len | name | u32 rows | u32 cols | rows*cols f64
//! ```

use std::fs;
use std::path::Path;

use fsosr_core::alignment::Projector;
use fsosr_core::context::{ContextDictionary, FusionHead};
use fsosr_core::numkit::Matrix;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"EMBS";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Container {
    pub meta: String,
    pub sections: Vec<(String, Matrix)>,
}

fn u32_of(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Data(format!("{what} too large for container")))
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(Error::Truncation {
                expected: (self.at + n) as u64,
                found: self.bytes.len() as u64,
            })?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
}

impl Container {
    pub fn new(meta: impl Into<String>) -> Self {
        Container {
            meta: meta.into(),
            sections: Vec::new(),
        }
    }

    pub fn push(&mut self, name: &str, m: Matrix) {
        self.sections.push((name.to_string(), m));
    }

    pub fn push_vec(&mut self, name: &str, v: &[f64]) {
        self.push(
            name,
            Matrix::from_vec(1, v.len(), v.to_vec()).expect("single row"),
        );
    }

    pub fn get(&self, name: &str) -> Result<&Matrix> {
        self.sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
            .ok_or_else(|| Error::Format(format!("container has no {name:?} section")))
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&u32_of(self.meta.len(), "metadata")?.to_le_bytes());
        out.extend_from_slice(self.meta.as_bytes());
        out.extend_from_slice(&u32_of(self.sections.len(), "section count")?.to_le_bytes());
        for (name, m) in &self.sections {
            out.extend_from_slice(&u32_of(name.len(), "section name")?.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&u32_of(m.rows(), "row count")?.to_le_bytes());
            out.extend_from_slice(&u32_of(m.cols(), "column count")?.to_le_bytes());
            for v in m.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("bad magic, not a model container".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "unsupported container version {version}"
            )));
        }
        let meta_len = r.u32()? as usize;
        let meta = std::str::from_utf8(r.take(meta_len)?)
            .map_err(|_| Error::Format("container metadata is not UTF-8".into()))?
            .to_string();
        let count = r.u32()?;
        let mut sections = Vec::with_capacity(count.min(64) as usize);
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Format("section name is not UTF-8".into()))?
                .to_string();
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let raw = r.take(
                rows.checked_mul(cols)
                    .and_then(|n| n.checked_mul(8))
                    .ok_or_else(|| Error::Format(format!("section {name:?} is too large")))?,
            )?;
            let values: Vec<f64> = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("non-finite value in section {name:?}")));
            }
            sections.push((name, Matrix::from_vec(rows, cols, values)?));
        }
        if r.at != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after container",
                bytes.len() - r.at
            )));
        }
        Ok(Container { meta, sections })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Container::decode(&fs::read(path).map_err(Error::io(path))?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()?).map_err(Error::io(path))
    }
}

fn row_vector(m: &Matrix, name: &str) -> Result<Vec<f64>> {
    if m.rows() != 1 {
        return Err(Error::Format(format!(
            "section {name:?} must be a single row"
        )));
    }
    Ok(m.as_slice().to_vec())
}

pub fn dictionary_to_container(dict: &ContextDictionary, meta: &str) -> Container {
    let mut c = Container::new(meta);
    c.push("prototypes", dict.prototypes().clone());
    c.push_vec(
        "group_sizes",
        &dict
            .group_sizes()
            .iter()
            .map(|&s| s as f64)
            .collect::<Vec<_>>(),
    );
    c
}

pub fn dictionary_from_container(c: &Container) -> Result<ContextDictionary> {
    let sizes = row_vector(c.get("group_sizes")?, "group_sizes")?
        .into_iter()
        .map(|s| {
            if s >= 0.0 && s.fract() == 0.0 && s <= u32::MAX as f64 {
                Ok(s as usize)
            } else {
                Err(Error::Data(format!("group size {s} is not a count")))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ContextDictionary::from_parts(
        c.get("prototypes")?.clone(),
        sizes,
    )?)
}

pub fn head_to_container(head: &FusionHead, meta: &str) -> Container {
    let mut c = Container::new(meta);
    c.push("query", head.query.clone());
    c.push("key", head.key.clone());
    c.push("classifier", head.classifier.clone());
    c.push_vec("bias", &head.bias);
    c
}

pub fn head_from_container(c: &Container) -> Result<FusionHead> {
    let head = FusionHead {
        query: c.get("query")?.clone(),
        key: c.get("key")?.clone(),
        classifier: c.get("classifier")?.clone(),
        bias: row_vector(c.get("bias")?, "bias")?,
    };
    head.validate()?;
    Ok(head)
}

pub fn projector_to_container(p: &Projector, meta: &str) -> Container {
    let mut c = Container::new(meta);
    c.push("w1", p.w1.clone());
    c.push_vec("b1", &p.b1);
    c.push("w2", p.w2.clone());
    c.push_vec("b2", &p.b2);
    c
}

pub fn projector_from_container(c: &Container) -> Result<Projector> {
    let p = Projector {
        w1: c.get("w1")?.clone(),
        b1: row_vector(c.get("b1")?, "b1")?,
        w2: c.get("w2")?.clone(),
        b2: row_vector(c.get("b2")?, "b2")?,
    };
    p.validate()?;
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn head_survives_round_trip() {
        let head = FusionHead::initialized(4, 3, 12);
        let bytes = head_to_container(&head, "tool=test").encode().unwrap();
        let back = Container::decode(&bytes).unwrap();
        assert_eq!(back.meta, "tool=test");
        assert_eq!(head_from_container(&back).unwrap(), head);
    }

    #[test]
    fn rejects_truncated_and_foreign() {
        let bytes = projector_to_container(&Projector::initialized(3, 3, 1), "")
            .encode()
            .unwrap();
        assert_eq!(
            Container::decode(&bytes[..bytes.len() - 1])
                .unwrap_err()
                .category(),
            "truncation"
        );
        assert_eq!(
            Container::decode(b"EMB1\x01\0\0\0").unwrap_err().category(),
            "format"
        );
        let mut extra = bytes.clone();
        extra.push(0);
        assert_eq!(Container::decode(&extra).unwrap_err().category(), "format");
    }

    #[test]
    fn missing_section_is_a_format_error() {
        let c = Container::new("");
        assert_eq!(head_from_container(&c).unwrap_err().category(), "format");
    }
}
