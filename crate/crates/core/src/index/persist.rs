//! On-disk index layout: a directory holding a term dictionary, a postings
//! file and a stats file. Each file starts with an 8-byte magic string and a
//! little-endian u32 format version; all integers are little-endian u32.

use std::fs;
use std::path::Path;

use super::{InvertedIndex, Posting, VocabKind};
use crate::error::{Error, Result};

const VERSION: u32 = 1;
const DICT_MAGIC: &[u8; 8] = b"LEEDICT\0";
const POSTINGS_MAGIC: &[u8; 8] = b"LEEPOST\0";
const STATS_MAGIC: &[u8; 8] = b"LEESTAT\0";

pub const DICT_FILE: &str = "terms.dict";
pub const POSTINGS_FILE: &str = "postings.bin";
pub const STATS_FILE: &str = "stats.bin";

pub fn write_index(index: &InvertedIndex, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut dict = header(DICT_MAGIC);
    put_u32(&mut dict, index.terms.len());
    for t in &index.terms {
        put_str(&mut dict, t);
    }

    let mut postings = header(POSTINGS_MAGIC);
    put_u32(&mut postings, index.postings.len());
    for list in &index.postings {
        put_u32(&mut postings, list.len());
        for p in list {
            postings.extend_from_slice(&p.unit.to_le_bytes());
            postings.extend_from_slice(&p.tf.to_le_bytes());
        }
    }

    let mut stats = header(STATS_MAGIC);
    stats.push(match index.kind {
        VocabKind::Word => 0,
        VocabKind::Entity => 1,
    });
    put_u32(&mut stats, index.unit_ids.len());
    for (id, len) in index.unit_ids.iter().zip(&index.unit_lengths) {
        put_str(&mut stats, id);
        stats.extend_from_slice(&len.to_le_bytes());
    }

    for (name, bytes) in [(DICT_FILE, dict), (POSTINGS_FILE, postings), (STATS_FILE, stats)] {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

pub fn read_index(dir: impl AsRef<Path>) -> Result<InvertedIndex> {
    let dir = dir.as_ref();
    let load = |name: &str| {
        let path = dir.join(name);
        fs::read(&path).map(|b| (path.clone(), b)).map_err(|e| Error::io(&path, e))
    };

    let (path, bytes) = load(DICT_FILE)?;
    let mut r = Reader::new(&bytes, &path, DICT_MAGIC)?;
    let n_terms = r.u32()? as usize;
    let mut terms = Vec::with_capacity(n_terms);
    for _ in 0..n_terms {
        terms.push(r.string()?);
    }
    r.finish()?;
    if terms.windows(2).any(|w| w[0] >= w[1]) {
        return Err(r.corrupt("term dictionary is not strictly sorted"));
    }

    let (path, bytes) = load(STATS_FILE)?;
    let mut r = Reader::new(&bytes, &path, STATS_MAGIC)?;
    let kind = match r.u8()? {
        0 => VocabKind::Word,
        1 => VocabKind::Entity,
        other => return Err(r.corrupt(&format!("unknown vocabulary tag {other}"))),
    };
    let n_units = r.u32()? as usize;
    let mut unit_ids = Vec::with_capacity(n_units);
    let mut stored_lengths = Vec::with_capacity(n_units);
    for _ in 0..n_units {
        unit_ids.push(r.string()?);
        stored_lengths.push(r.u32()?);
    }
    r.finish()?;

    let (path, bytes) = load(POSTINGS_FILE)?;
    let mut r = Reader::new(&bytes, &path, POSTINGS_MAGIC)?;
    let n_lists = r.u32()? as usize;
    if n_lists != n_terms {
        return Err(r.corrupt("postings count differs from dictionary size"));
    }
    let mut postings = Vec::with_capacity(n_lists);
    for _ in 0..n_lists {
        let len = r.u32()? as usize;
        let mut list = Vec::with_capacity(len);
        for _ in 0..len {
            let unit = r.u32()?;
            let tf = r.u32()?;
            if unit as usize >= n_units || tf == 0 {
                return Err(r.corrupt("posting out of range"));
            }
            list.push(Posting { unit, tf });
        }
        if list.windows(2).any(|w| w[0].unit >= w[1].unit) {
            return Err(r.corrupt("posting list not sorted by unit"));
        }
        postings.push(list);
    }
    r.finish()?;

    let index = InvertedIndex::from_parts(kind, terms, postings, unit_ids);
    if index.unit_lengths != stored_lengths {
        return Err(Error::Validation(format!(
            "{}: unit lengths disagree with postings",
            dir.display()
        )));
    }
    Ok(index)
}

fn header(magic: &[u8; 8]) -> Vec<u8> {
    let mut buf = magic.to_vec();
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf
}

fn put_u32(buf: &mut Vec<u8>, n: usize) {
    let n = u32::try_from(n).expect("index sizes fit in u32");
    buf.extend_from_slice(&n.to_le_bytes());
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    put_u32(buf, s.len());
    buf.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], path: &'a Path, magic: &[u8; 8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(8)? != magic {
            return Err(r.corrupt("bad magic header"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(r.corrupt(&format!("unsupported format version {version}")));
        }
        Ok(r)
    }

    fn corrupt(&self, what: &str) -> Error {
        Error::Validation(format!("{}: {what} (offset {})", self.path.display(), self.pos))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(self.corrupt("unexpected end of file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| self.corrupt("invalid utf-8"))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.corrupt("trailing bytes"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_everything() {
        let idx = InvertedIndex::build(
            VocabKind::Entity,
            [
                ("d1", vec!["Q1", "Q2", "Q1"]),
                ("d2", vec![]),
                ("d3", vec!["Q3", "Q2"]),
            ],
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_index(&idx, dir.path()).unwrap();
        let back = read_index(dir.path()).unwrap();
        assert_eq!(idx, back);
    }

    #[test]
    fn rejects_foreign_files() {
        let dir = tempfile::tempdir().unwrap();
        let idx = InvertedIndex::build(VocabKind::Word, [("d1", vec!["a"])]).unwrap();
        write_index(&idx, dir.path()).unwrap();
        fs::write(dir.path().join(DICT_FILE), b"not an index").unwrap();
        assert!(matches!(read_index(dir.path()), Err(Error::Validation(_))));
    }
}
