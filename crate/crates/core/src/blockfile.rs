//! Binary container for named tensor blocks.
//!
//! Layout: an 8-byte magic string, a u32 format version, a length-prefixed
//! JSON header (carrying a `kind` tag plus caller metadata such as the
//! config echo), a u64 block count, then per block: name length (u64),
//! UTF-8 name, rank (u64), extents (u64 each), and values as little-endian
//! 64-bit floats. Round trips are bit-exact. All integers little-endian.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"MESHFRM1";
pub const VERSION: u32 = 1;

#[derive(Debug)]
pub struct BlockFile {
    pub kind: String,
    pub meta: serde_json::Value,
    pub blocks: Vec<(String, Tensor)>,
}

pub fn write_blockfile(
    path: &Path,
    kind: &str,
    meta: &serde_json::Value,
    blocks: &[(String, Tensor)],
) -> Result<()> {
    let mut header = serde_json::Map::new();
    header.insert("kind".into(), serde_json::Value::String(kind.to_string()));
    header.insert("meta".into(), meta.clone());
    let header_bytes = serde_json::to_vec(&serde_json::Value::Object(header))
        .map_err(|e| Error::Data(format!("header serialization failed: {e}")))?;

    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header_bytes);
    buf.extend_from_slice(&(blocks.len() as u64).to_le_bytes());
    for (name, tensor) in blocks {
        let name_bytes = name.as_bytes();
        buf.extend_from_slice(&(name_bytes.len() as u64).to_le_bytes());
        buf.extend_from_slice(name_bytes);
        buf.extend_from_slice(&(tensor.rank() as u64).to_le_bytes());
        for &e in tensor.shape() {
            buf.extend_from_slice(&(e as u64).to_le_bytes());
        }
        for &v in tensor.values() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    file.write_all(&buf).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: String,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Data(format!(
                "{}: unexpected end of file at byte {} while reading {what} ({} bytes needed, {} left)",
                self.path,
                self.pos,
                n,
                self.bytes.len() - self.pos
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn read_blockfile(path: &Path) -> Result<BlockFile> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut r = Reader { bytes: &bytes, pos: 0, path: path.display().to_string() };

    let magic = r.take(8, "magic")?;
    if magic != MAGIC {
        return Err(Error::Data(format!("{}: bad magic {:?}", r.path, magic)));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Data(format!(
            "{}: unsupported format version {version}, expected {VERSION}",
            r.path
        )));
    }
    let header_len = r.u64("header length")? as usize;
    let header_bytes = r.take(header_len, "header")?;
    let header: serde_json::Value = serde_json::from_slice(header_bytes)
        .map_err(|e| Error::Data(format!("{}: bad header JSON: {e}", r.path)))?;
    let kind = header
        .get("kind")
        .and_then(|k| k.as_str())
        .ok_or_else(|| Error::Data(format!("{}: header missing 'kind'", r.path)))?
        .to_string();
    let meta = header.get("meta").cloned().unwrap_or(serde_json::Value::Null);

    let count = r.u64("block count")? as usize;
    let mut blocks = Vec::with_capacity(count);
    for i in 0..count {
        let name_len = r.u64("name length")? as usize;
        let name = String::from_utf8(r.take(name_len, "block name")?.to_vec())
            .map_err(|e| Error::Data(format!("{}: block {i} name is not UTF-8: {e}", r.path)))?;
        let rank = r.u64("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64("extent")? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(numel * 8, &format!("values of '{name}'"))?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        blocks.push((name, Tensor::new(shape, values)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::Data(format!(
            "{}: {} trailing bytes after last block",
            r.path,
            bytes.len() - r.pos
        )));
    }
    Ok(BlockFile { kind, meta, blocks })
}
