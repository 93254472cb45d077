//! XEMB binary embedding files.
//!
//! ```text
//! "XEMB" | u32 version (=1) | u32 rows | u32 dim
//! u32 meta_len | meta_len bytes of UTF-8 JSON {"ids":[...],"provenance":{...}}
//! rows * dim little-endian f32, row-major
//! ```
//! All integers are little-endian.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EmbeddingStore, Provenance};
use crate::error::{Error, Result};

pub const XEMB_MAGIC: &[u8; 4] = b"XEMB";
pub const XEMB_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Meta {
    ids: Vec<String>,
    provenance: Provenance,
}

pub fn write_embeddings<W: Write>(store: &EmbeddingStore, out: &mut W) -> std::io::Result<()> {
    let rows = u32::try_from(store.len()).map_err(std::io::Error::other)?;
    let dim = u32::try_from(store.dim()).map_err(std::io::Error::other)?;
    let meta = serde_json::to_vec(&Meta {
        ids: store.ids().to_vec(),
        provenance: store.provenance().clone(),
    })?;
    out.write_all(XEMB_MAGIC)?;
    out.write_all(&XEMB_VERSION.to_le_bytes())?;
    out.write_all(&rows.to_le_bytes())?;
    out.write_all(&dim.to_le_bytes())?;
    out.write_all(&(meta.len() as u32).to_le_bytes())?;
    out.write_all(&meta)?;
    for x in store.raw() {
        out.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub fn save_embeddings(store: &EmbeddingStore, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io_err = |e| Error::io(path, e);
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    write_embeddings(store, &mut out).map_err(io_err)?;
    out.flush().map_err(io_err)
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingStore> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    parse(&bytes, path)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(Error::Truncated {
                path: self.path.to_path_buf(),
                message: format!(
                    "{what}: need {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.bytes.len()
                ),
            }),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

fn parse(bytes: &[u8], path: &Path) -> Result<EmbeddingStore> {
    if bytes.len() < 4 || &bytes[..4] != XEMB_MAGIC {
        return Err(Error::NotXemb(path.to_path_buf()));
    }
    let mut cur = Cursor {
        bytes,
        pos: 4,
        path,
    };
    let version = cur.u32("version")?;
    if version != XEMB_VERSION {
        return Err(Error::invalid(format!(
            "{}: unsupported XEMB version {version}",
            path.display()
        )));
    }
    let rows = cur.u32("row count")? as usize;
    let dim = cur.u32("dimension")? as usize;
    let meta_len = cur.u32("metadata length")? as usize;
    let meta: Meta = serde_json::from_slice(cur.take(meta_len, "metadata")?)
        .map_err(|e| Error::invalid(format!("{}: bad XEMB metadata: {e}", path.display())))?;
    if meta.ids.len() != rows {
        return Err(Error::invalid(format!(
            "{}: header declares {rows} rows but metadata lists {} ids",
            path.display(),
            meta.ids.len()
        )));
    }
    let payload_len = rows
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::invalid("XEMB payload size overflows"))?;
    let payload = cur.take(payload_len, "payload")?;
    if cur.pos != bytes.len() {
        return Err(Error::invalid(format!(
            "{}: {} trailing bytes after payload",
            path.display(),
            bytes.len() - cur.pos
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    EmbeddingStore::new(meta.ids, dim, data, meta.provenance)
}
