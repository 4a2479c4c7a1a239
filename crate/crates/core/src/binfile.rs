//! Named-section little-endian container shared by mesh files and
//! checkpoints.
//!
//! Layout: 8-byte magic, `u32` version, `u32` section count, then one
//! manifest entry per section (`u16` name length, UTF-8 name, `u8` dtype,
//! `u8` rank, `u64` dims, `u64` byte length), then the section payloads in
//! manifest order. Writing is deterministic, so load → save is byte-exact.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SectionType {
    F32,
    F64,
    U32,
    I32,
    U8,
}

impl SectionType {
    fn tag(self) -> u8 {
        match self {
            SectionType::F32 => 0,
            SectionType::F64 => 1,
            SectionType::U32 => 2,
            SectionType::I32 => 3,
            SectionType::U8 => 4,
        }
    }

    fn from_tag(t: u8) -> Option<Self> {
        Some(match t {
            0 => SectionType::F32,
            1 => SectionType::F64,
            2 => SectionType::U32,
            3 => SectionType::I32,
            4 => SectionType::U8,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            SectionType::F64 => 8,
            SectionType::U8 => 1,
            _ => 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Section {
    pub name: String,
    pub dtype: SectionType,
    pub shape: Vec<usize>,
    pub bytes: Vec<u8>,
}

macro_rules! typed {
    ($from:ident, $to:ident, $t:ty, $variant:ident) => {
        pub fn $from(name: &str, shape: &[usize], data: &[$t]) -> Self {
            assert_eq!(shape.iter().product::<usize>(), data.len(), "{name}");
            let mut bytes = Vec::with_capacity(data.len() * std::mem::size_of::<$t>());
            for v in data {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            Self {
                name: name.to_string(),
                dtype: SectionType::$variant,
                shape: shape.to_vec(),
                bytes,
            }
        }

        pub fn $to(&self) -> Result<Vec<$t>> {
            if self.dtype != SectionType::$variant {
                return Err(Error::Format(format!(
                    "section `{}` has type {:?}, expected {:?}",
                    self.name,
                    self.dtype,
                    SectionType::$variant
                )));
            }
            const W: usize = std::mem::size_of::<$t>();
            Ok(self
                .bytes
                .chunks_exact(W)
                .map(|c| <$t>::from_le_bytes(c.try_into().unwrap()))
                .collect())
        }
    };
}

impl Section {
    typed!(from_f32, to_f32, f32, F32);
    typed!(from_f64, to_f64, f64, F64);
    typed!(from_u32, to_u32, u32, U32);
    typed!(from_i32, to_i32, i32, I32);
    typed!(from_u8, to_u8, u8, U8);

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SectionFile {
    pub magic: [u8; 8],
    pub version: u32,
    pub sections: Vec<Section>,
}

impl SectionFile {
    pub fn new(magic: [u8; 8], version: u32) -> Self {
        Self {
            magic,
            version,
            sections: Vec::new(),
        }
    }

    pub fn push(&mut self, s: Section) {
        assert!(self.get(&s.name).is_none(), "duplicate section {}", s.name);
        self.sections.push(s);
    }

    pub fn get(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&Section> {
        self.get(name)
            .ok_or_else(|| Error::Format(format!("missing section `{name}`")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.magic);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        for s in &self.sections {
            out.extend_from_slice(&(s.name.len() as u16).to_le_bytes());
            out.extend_from_slice(s.name.as_bytes());
            out.push(s.dtype.tag());
            out.push(s.shape.len() as u8);
            for &d in &s.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&(s.bytes.len() as u64).to_le_bytes());
        }
        for s in &self.sections {
            out.extend_from_slice(&s.bytes);
        }
        out
    }

    /// Parses a container, checking the magic and accepting versions up to
    /// `max_version`.
    pub fn from_bytes(bytes: &[u8], magic: [u8; 8], max_version: u32) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != magic {
            return Err(Error::Format(format!(
                "bad magic, expected {:?}",
                String::from_utf8_lossy(&magic)
            )));
        }
        let version = r.u32()?;
        if version == 0 || version > max_version {
            return Err(Error::Format(format!(
                "unsupported version {version} (max {max_version})"
            )));
        }
        let count = r.u32()? as usize;
        let mut heads = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::Format("section name is not UTF-8".into()))?;
            let dtype = SectionType::from_tag(r.u8()?)
                .ok_or_else(|| Error::Format(format!("section `{name}`: unknown type")))?;
            let rank = r.u8()? as usize;
            let shape = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let nbytes = r.u64()? as usize;
            let expect = shape.iter().try_fold(dtype.size(), |a, &d| a.checked_mul(d));
            if expect != Some(nbytes) {
                return Err(Error::Format(format!(
                    "section `{name}`: {nbytes} bytes do not match shape {shape:?}"
                )));
            }
            heads.push((name, dtype, shape, nbytes));
        }
        let mut file = SectionFile::new(magic, version);
        for (name, dtype, shape, nbytes) in heads {
            let data = r.take(nbytes)?.to_vec();
            if file.get(&name).is_some() {
                return Err(Error::Format(format!("duplicate section `{name}`")));
            }
            file.sections.push(Section {
                name,
                dtype,
                shape,
                bytes: data,
            });
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after last section".into()));
        }
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, magic: [u8; 8], max_version: u32) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, magic, max_version)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("unexpected end of file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
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

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
