//! Binary container for per-line internal-state vectors (`PTAS` files).
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "PTAS" | format_version u32 | header_json_len u32 | header JSON (UTF-8)
//! record_count × [ snippet_id u32 | line_index u32 | token_index u32 |
//!                  line_token_count u32 | label_flag u8 | 0x00 0x00 0x00 |
//!                  dim × f32 ]
//! ```
//!
//! The header JSON is right-padded with spaces to the width it would have
//! with the largest representable record count, so the header has a fixed
//! size for a given model id and the count can be patched in place once the
//! writer knows it.

use std::collections::{HashMap, HashSet};
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const STORE_MAGIC: &[u8; 4] = b"PTAS";
pub const STORE_VERSION: u32 = 1;
pub const DTYPE_F32LE: &str = "f32le";
/// Byte size of the fixed part of each record, before the vector.
pub const RECORD_HEADER_BYTES: u64 = 20;
/// `line_index` of the record holding the final generated token's state.
pub const FINAL_TOKEN_LINE: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelFlag {
    Unknown,
    Correct,
    Buggy,
}

impl LabelFlag {
    pub fn to_byte(self) -> u8 {
        match self {
            LabelFlag::Unknown => 0,
            LabelFlag::Correct => 1,
            LabelFlag::Buggy => 2,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(LabelFlag::Unknown),
            1 => Some(LabelFlag::Correct),
            2 => Some(LabelFlag::Buggy),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreHeader {
    pub format_version: u32,
    pub model_id: String,
    /// Probed layer (first quarter of the network by default).
    pub layer_index: u32,
    pub dim: u32,
    pub record_count: u64,
    pub dtype_tag: String,
}

impl StoreHeader {
    pub fn new(model_id: impl Into<String>, layer_index: u32, dim: u32) -> Self {
        StoreHeader {
            format_version: STORE_VERSION,
            model_id: model_id.into(),
            layer_index,
            dim,
            record_count: 0,
            dtype_tag: DTYPE_F32LE.to_string(),
        }
    }

    /// Serialized header JSON, padded to the fixed width.
    fn encode(&self) -> Result<Vec<u8>> {
        let mut widest = self.clone();
        widest.record_count = u32::MAX as u64;
        let width = serde_json::to_vec(&widest)
            .map_err(|e| Error::Argument(e.to_string()))?
            .len();
        let mut json = serde_json::to_vec(self).map_err(|e| Error::Argument(e.to_string()))?;
        json.resize(width.max(json.len()), b' ');
        Ok(json)
    }

    pub fn record_bytes(&self) -> u64 {
        RECORD_HEADER_BYTES + 4 * self.dim as u64
    }
}

/// The state vector for one code line of one snippet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationRecord {
    pub snippet_id: u32,
    pub line_index: u32,
    /// Position of the profiled token in the full token stream.
    pub token_index: u32,
    pub line_token_count: u32,
    pub label_flag: LabelFlag,
    pub vector: Vec<f32>,
}

impl ActivationRecord {
    pub fn key(&self) -> (u32, u32) {
        (self.snippet_id, self.line_index)
    }

    pub fn is_final_token(&self) -> bool {
        self.line_index == FINAL_TOKEN_LINE
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WriteSummary {
    pub count: u64,
    pub bytes: u64,
}

// ---------------------------------------------------------------------------
// Writing
// ---------------------------------------------------------------------------

/// Streaming single-writer. Records go to a temporary sibling file which is
/// renamed over the destination by [`StoreWriter::finish`]; dropping the
/// writer without finishing removes the temporary file.
pub struct StoreWriter {
    path: PathBuf,
    tmp_path: PathBuf,
    out: Option<BufWriter<File>>,
    header: StoreHeader,
    json_offset: u64,
    header_len: u64,
    seen: HashSet<(u32, u32)>,
}

impl StoreWriter {
    pub fn create(path: impl AsRef<Path>, header: &StoreHeader) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        if header.dim == 0 {
            return Err(Error::Argument("store dim must be >= 1".into()));
        }
        if header.dtype_tag != DTYPE_F32LE {
            return Err(Error::Argument(format!(
                "unsupported dtype tag {:?}",
                header.dtype_tag
            )));
        }
        let mut header = header.clone();
        header.format_version = STORE_VERSION;
        header.record_count = 0;

        let tmp_path = tmp_sibling(&path);
        let file = File::create(&tmp_path).map_err(|e| Error::io(&tmp_path, e))?;
        let mut out = BufWriter::new(file);
        let json = header.encode()?;
        let write = |out: &mut BufWriter<File>| -> io::Result<()> {
            out.write_all(STORE_MAGIC)?;
            out.write_u32::<LittleEndian>(STORE_VERSION)?;
            out.write_u32::<LittleEndian>(json.len() as u32)?;
            out.write_all(&json)
        };
        write(&mut out).map_err(|e| Error::io(&tmp_path, e))?;
        Ok(StoreWriter {
            path,
            tmp_path,
            out: Some(out),
            header,
            json_offset: 12,
            header_len: 12 + json.len() as u64,
            seen: HashSet::new(),
        })
    }

    pub fn header(&self) -> &StoreHeader {
        &self.header
    }

    pub fn push(&mut self, record: &ActivationRecord) -> Result<()> {
        let position = self.header.record_count;
        let dim = self.header.dim as usize;
        if record.vector.len() != dim {
            return Err(Error::RecordDimension {
                position,
                expected: dim,
                actual: record.vector.len(),
            });
        }
        if record.vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                snippet_id: record.snippet_id,
                line_index: record.line_index,
            });
        }
        if record.line_token_count == 0 {
            return Err(Error::Argument(format!(
                "record (snippet {}, line {}) has line_token_count 0",
                record.snippet_id, record.line_index
            )));
        }
        if !self.seen.insert(record.key()) {
            return Err(Error::DuplicateRecord {
                snippet_id: record.snippet_id,
                line_index: record.line_index,
            });
        }
        if position >= u32::MAX as u64 {
            return Err(Error::Argument("store record limit reached".into()));
        }
        let out = self.out.as_mut().expect("writer already finished");
        write_record(out, record).map_err(|e| Error::io(&self.tmp_path, e))?;
        self.header.record_count += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<WriteSummary> {
        let out = self.out.take().expect("writer already finished");
        let json = self.header.encode()?;
        debug_assert_eq!(12 + json.len() as u64, self.header_len);
        let patch = |out: BufWriter<File>, offset: u64| -> io::Result<File> {
            let mut file = out.into_inner().map_err(|e| e.into_error())?;
            file.seek(SeekFrom::Start(offset))?;
            file.write_all(&json)?;
            file.sync_all()?;
            Ok(file)
        };
        patch(out, self.json_offset).map_err(|e| Error::io(&self.tmp_path, e))?;
        fs::rename(&self.tmp_path, &self.path).map_err(|e| Error::io(&self.path, e))?;
        Ok(WriteSummary {
            count: self.header.record_count,
            bytes: self.header_len + self.header.record_count * self.header.record_bytes(),
        })
    }
}

impl Drop for StoreWriter {
    fn drop(&mut self) {
        if self.out.take().is_some() {
            let _ = fs::remove_file(&self.tmp_path);
        }
    }
}

fn tmp_sibling(path: &Path) -> PathBuf {
    let mut name = path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(format!(".tmp-{}", std::process::id()));
    path.with_file_name(name)
}

fn write_record<W: Write>(out: &mut W, r: &ActivationRecord) -> io::Result<()> {
    out.write_u32::<LittleEndian>(r.snippet_id)?;
    out.write_u32::<LittleEndian>(r.line_index)?;
    out.write_u32::<LittleEndian>(r.token_index)?;
    out.write_u32::<LittleEndian>(r.line_token_count)?;
    out.write_all(&[r.label_flag.to_byte(), 0, 0, 0])?;
    for v in &r.vector {
        out.write_f32::<LittleEndian>(*v)?;
    }
    Ok(())
}

/// Write a whole store in one call.
pub fn write_store<'a, I>(
    path: impl AsRef<Path>,
    header: &StoreHeader,
    records: I,
) -> Result<WriteSummary>
where
    I: IntoIterator<Item = &'a ActivationRecord>,
{
    let mut writer = StoreWriter::create(path, header)?;
    for r in records {
        writer.push(r)?;
    }
    writer.finish()
}

// ---------------------------------------------------------------------------
// Reading
// ---------------------------------------------------------------------------

type Filter = Box<dyn Fn(u32, LabelFlag) -> bool + Send>;

/// Streaming reader yielding records in file order.
///
/// A filter on `(snippet_id, label_flag)` is evaluated on the fixed record
/// header; rejected vectors are skipped with a seek instead of being read.
pub struct StoreReader {
    path: PathBuf,
    input: BufReader<File>,
    header: StoreHeader,
    offset: u64,
    remaining: u64,
    file_len: u64,
    filter: Option<Filter>,
    failed: bool,
}

impl StoreReader {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let file_len = file.metadata().map_err(|e| Error::io(&path, e))?.len();
        let mut input = BufReader::new(file);
        let bad_magic = || Error::BadMagic {
            path: path.clone(),
            expected: "PTAS",
        };

        let mut magic = [0u8; 4];
        input.read_exact(&mut magic).map_err(|_| bad_magic())?;
        if &magic != STORE_MAGIC {
            return Err(bad_magic());
        }
        let version = input.read_u32::<LittleEndian>().map_err(|_| bad_magic())?;
        if version != STORE_VERSION {
            return Err(bad_magic());
        }
        let json_len = input
            .read_u32::<LittleEndian>()
            .map_err(|e| Error::io(&path, e))? as u64;
        if 12 + json_len > file_len {
            return Err(Error::BadHeader {
                path,
                reason: "header length exceeds file size".into(),
            });
        }
        let mut json = vec![0u8; json_len as usize];
        input.read_exact(&mut json).map_err(|e| Error::io(&path, e))?;
        let header: StoreHeader =
            serde_json::from_slice(&json).map_err(|e| Error::BadHeader {
                path: path.clone(),
                reason: e.to_string(),
            })?;
        if header.dim == 0 || header.dtype_tag != DTYPE_F32LE || header.format_version != version
        {
            return Err(Error::BadHeader {
                path,
                reason: format!(
                    "dim {} dtype {:?} version {}",
                    header.dim, header.dtype_tag, header.format_version
                ),
            });
        }
        let offset = 12 + json_len;
        Ok(StoreReader {
            remaining: header.record_count,
            path,
            input,
            header,
            offset,
            file_len,
            filter: None,
            failed: false,
        })
    }

    pub fn header(&self) -> &StoreHeader {
        &self.header
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn with_filter<F>(mut self, filter: F) -> Self
    where
        F: Fn(u32, LabelFlag) -> bool + Send + 'static,
    {
        self.filter = Some(Box::new(filter));
        self
    }

    fn read_one(&mut self) -> Result<Option<ActivationRecord>> {
        let dim = self.header.dim as usize;
        let record_bytes = self.header.record_bytes();
        loop {
            if self.remaining == 0 {
                if self.offset != self.file_len {
                    return Err(Error::BadHeader {
                        path: self.path.clone(),
                        reason: format!("trailing bytes after record {}", self.header.record_count),
                    });
                }
                return Ok(None);
            }
            let start = self.offset;
            if start + record_bytes > self.file_len {
                return Err(Error::Truncated { offset: start });
            }
            let truncated = |_| Error::Truncated { offset: start };
            let snippet_id = self.input.read_u32::<LittleEndian>().map_err(truncated)?;
            let line_index = self.input.read_u32::<LittleEndian>().map_err(truncated)?;
            let token_index = self.input.read_u32::<LittleEndian>().map_err(truncated)?;
            let line_token_count = self.input.read_u32::<LittleEndian>().map_err(truncated)?;
            let mut flag = [0u8; 4];
            self.input.read_exact(&mut flag).map_err(truncated)?;
            let label_flag = LabelFlag::from_byte(flag[0]).ok_or_else(|| Error::BadHeader {
                path: self.path.clone(),
                reason: format!("bad label flag {} at offset {start}", flag[0]),
            })?;
            self.remaining -= 1;
            self.offset += record_bytes;

            let keep = self
                .filter
                .as_ref()
                .is_none_or(|f| f(snippet_id, label_flag));
            if !keep {
                self.input
                    .seek_relative(4 * dim as i64)
                    .map_err(|e| Error::io(&self.path, e))?;
                continue;
            }
            let mut vector = vec![0f32; dim];
            self.input
                .read_f32_into::<LittleEndian>(&mut vector)
                .map_err(truncated)?;
            return Ok(Some(ActivationRecord {
                snippet_id,
                line_index,
                token_index,
                line_token_count,
                label_flag,
                vector,
            }));
        }
    }
}

impl Iterator for StoreReader {
    type Item = Result<ActivationRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        match self.read_one() {
            Ok(Some(r)) => Some(Ok(r)),
            Ok(None) => None,
            Err(e) => {
                self.failed = true;
                Some(Err(e))
            }
        }
    }
}

/// Open a store and stream its records, optionally filtered.
pub fn stream_records(
    path: impl AsRef<Path>,
    filter: Option<Filter>,
) -> Result<StoreReader> {
    let reader = StoreReader::open(path)?;
    Ok(match filter {
        Some(f) => reader.with_filter(f),
        None => reader,
    })
}

/// Group records by snippet, lines ascending, groups in first-seen order.
pub fn group_by_snippet<I>(records: I) -> Result<Vec<(u32, Vec<ActivationRecord>)>>
where
    I: IntoIterator<Item = Result<ActivationRecord>>,
{
    let mut slot: HashMap<u32, usize> = HashMap::new();
    let mut groups: Vec<(u32, Vec<ActivationRecord>)> = Vec::new();
    let mut seen = HashSet::new();
    for r in records {
        let r = r?;
        if !seen.insert(r.key()) {
            return Err(Error::DuplicateRecord {
                snippet_id: r.snippet_id,
                line_index: r.line_index,
            });
        }
        let idx = *slot.entry(r.snippet_id).or_insert_with(|| {
            groups.push((r.snippet_id, Vec::new()));
            groups.len() - 1
        });
        groups[idx].1.push(r);
    }
    for (_, lines) in &mut groups {
        lines.sort_by_key(|r| r.line_index);
    }
    Ok(groups)
}

/// A store held fully in memory with a `(snippet_id, line_index)` index.
#[derive(Debug, Clone)]
pub struct LoadedStore {
    pub header: StoreHeader,
    pub records: Vec<ActivationRecord>,
    index: HashMap<(u32, u32), usize>,
}

impl LoadedStore {
    pub fn new(header: StoreHeader, records: Vec<ActivationRecord>) -> Result<Self> {
        let mut index = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if r.vector.len() != header.dim as usize {
                return Err(Error::RecordDimension {
                    position: i as u64,
                    expected: header.dim as usize,
                    actual: r.vector.len(),
                });
            }
            if index.insert(r.key(), i).is_some() {
                return Err(Error::DuplicateRecord {
                    snippet_id: r.snippet_id,
                    line_index: r.line_index,
                });
            }
        }
        Ok(LoadedStore {
            header,
            records,
            index,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let reader = StoreReader::open(path)?;
        let header = reader.header().clone();
        let records = reader.collect::<Result<Vec<_>>>()?;
        LoadedStore::new(header, records)
    }

    pub fn get(&self, snippet_id: u32, line_index: u32) -> Option<usize> {
        self.index.get(&(snippet_id, line_index)).copied()
    }

    pub fn dim(&self) -> usize {
        self.header.dim as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(snippet_id: u32, line_index: u32, dim: usize, flag: LabelFlag) -> ActivationRecord {
        ActivationRecord {
            snippet_id,
            line_index,
            token_index: line_index * 7,
            line_token_count: 3 + line_index,
            label_flag: flag,
            vector: (0..dim)
                .map(|i| (i as f32 + 0.25) * (snippet_id as f32 - line_index as f32))
                .collect(),
        }
    }

    fn header(dim: u32) -> StoreHeader {
        StoreHeader::new("test-model", 8, dim)
    }

    #[test]
    fn empty_store_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.ptas");
        let summary = write_store(&p, &header(4), []).unwrap();
        assert_eq!(summary.count, 0);
        let bytes = fs::read(&p).unwrap();
        assert_eq!(&bytes[..4], b"PTAS");
        assert_eq!(bytes.len() as u64, summary.bytes);
        let reader = StoreReader::open(&p).unwrap();
        assert_eq!(reader.header().record_count, 0);
        assert_eq!(reader.count(), 0);
    }

    #[test]
    fn wide_single_record() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("wide.ptas");
        let r = rec(0, 0, 8192, LabelFlag::Unknown);
        let summary = write_store(&p, &header(8192), [&r]).unwrap();
        assert_eq!(summary.count, 1);
        let back: Vec<_> = StoreReader::open(&p).unwrap().map(|r| r.unwrap()).collect();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].vector.len(), 8192);
    }

    #[test]
    fn three_records_round_trip_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("three.ptas");
        let mut records = vec![
            rec(1, 0, 5, LabelFlag::Correct),
            rec(1, 1, 5, LabelFlag::Buggy),
            rec(2, 0, 5, LabelFlag::Unknown),
        ];
        records[2].vector[3] = -0.0;
        records[2].vector[4] = f32::MIN_POSITIVE / 2.0;
        write_store(&p, &header(5), &records).unwrap();
        let back: Vec<_> = StoreReader::open(&p).unwrap().map(|r| r.unwrap()).collect();
        assert_eq!(back.len(), 3);
        for (a, b) in records.iter().zip(&back) {
            assert_eq!(a.key(), b.key());
            assert_eq!(a.label_flag, b.label_flag);
            let abits: Vec<u32> = a.vector.iter().map(|v| v.to_bits()).collect();
            let bbits: Vec<u32> = b.vector.iter().map(|v| v.to_bits()).collect();
            assert_eq!(abits, bbits);
        }
    }

    #[test]
    fn dimension_mismatch_aborts_with_position() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.ptas");
        let records = [rec(1, 0, 4, LabelFlag::Unknown), rec(1, 1, 3, LabelFlag::Unknown)];
        let err = write_store(&p, &header(4), &records).unwrap_err();
        assert!(matches!(err, Error::RecordDimension { position: 1, expected: 4, actual: 3 }));
        assert!(!p.exists());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0, "temp file left behind");
    }

    #[test]
    fn non_finite_aborts_with_record_id() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("nan.ptas");
        let mut r = rec(9, 2, 4, LabelFlag::Unknown);
        r.vector[1] = f32::NAN;
        let err = write_store(&p, &header(4), [&r]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { snippet_id: 9, line_index: 2 }));
    }

    #[test]
    fn filter_selects_snippet() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.ptas");
        let records = [
            rec(1, 0, 3, LabelFlag::Unknown),
            rec(2, 0, 3, LabelFlag::Unknown),
            rec(1, 1, 3, LabelFlag::Unknown),
            rec(2, 1, 3, LabelFlag::Buggy),
        ];
        write_store(&p, &header(3), &records).unwrap();
        let only2: Vec<_> = stream_records(&p, Some(Box::new(|s, _| s == 2)))
            .unwrap()
            .map(|r| r.unwrap())
            .collect();
        assert_eq!(only2, vec![records[1].clone(), records[3].clone()]);
        let all: Vec<_> = stream_records(&p, None).unwrap().map(|r| r.unwrap()).collect();
        assert_eq!(all, records.to_vec());
    }

    #[test]
    fn truncated_file_reports_record_offset() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.ptas");
        let records: Vec<_> = (0..4).map(|l| rec(3, l, 6, LabelFlag::Unknown)).collect();
        let summary = write_store(&p, &header(6), &records).unwrap();
        let bytes = fs::read(&p).unwrap();
        let rb = RECORD_HEADER_BYTES + 24;
        let header_bytes = summary.bytes - 4 * rb;
        // cut in the middle of the third record
        let cut = header_bytes + 2 * rb + 10;
        fs::write(&p, &bytes[..cut as usize]).unwrap();
        let results: Vec<_> = StoreReader::open(&p).unwrap().collect();
        assert_eq!(results.len(), 3);
        assert!(results[0].is_ok() && results[1].is_ok());
        match &results[2] {
            Err(Error::Truncated { offset }) => assert_eq!(*offset, header_bytes + 2 * rb),
            other => panic!("expected truncation, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.ptas");
        fs::write(&p, b"NOPE\x01\x00\x00\x00").unwrap();
        assert!(matches!(StoreReader::open(&p), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn duplicate_key_rejected_on_write() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.ptas");
        let records = [rec(1, 0, 2, LabelFlag::Unknown), rec(1, 0, 2, LabelFlag::Unknown)];
        assert!(matches!(
            write_store(&p, &header(2), &records),
            Err(Error::DuplicateRecord { snippet_id: 1, line_index: 0 })
        ));
    }

    #[test]
    fn grouping_sorts_lines_and_keeps_first_seen_order() {
        let input = vec![
            rec(1, 1, 1, LabelFlag::Unknown),
            rec(2, 0, 1, LabelFlag::Unknown),
            rec(1, 0, 1, LabelFlag::Unknown),
        ];
        let groups = group_by_snippet(input.clone().into_iter().map(Ok)).unwrap();
        assert_eq!(groups.len(), 2);
        assert_eq!(groups[0].0, 1);
        assert_eq!(
            groups[0].1.iter().map(|r| r.line_index).collect::<Vec<_>>(),
            vec![0, 1]
        );
        assert_eq!(groups[1].0, 2);

        // hash-map oracle
        let mut oracle: HashMap<u32, Vec<u32>> = HashMap::new();
        for r in &input {
            oracle.entry(r.snippet_id).or_default().push(r.line_index);
        }
        for (id, lines) in &groups {
            let mut want = oracle[id].clone();
            want.sort();
            assert_eq!(lines.iter().map(|r| r.line_index).collect::<Vec<_>>(), want);
        }

        assert!(group_by_snippet(std::iter::empty()).unwrap().is_empty());
        let dup = vec![rec(4, 2, 1, LabelFlag::Unknown), rec(4, 2, 1, LabelFlag::Unknown)];
        assert!(matches!(
            group_by_snippet(dup.into_iter().map(Ok)),
            Err(Error::DuplicateRecord { snippet_id: 4, line_index: 2 })
        ));
    }
}
