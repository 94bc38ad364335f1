//! Line-aligned block splitting.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::EngineError;

/// A contiguous, line-aligned byte range of one input file; the unit of
/// mapper work.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogBlock {
    pub block_id: usize,
    pub file_id: usize,
    pub path: Arc<Path>,
    pub byte_start: u64,
    pub byte_end: u64,
    pub record_count: u64,
}

impl LogBlock {
    pub fn len(&self) -> u64 {
        self.byte_end - self.byte_start
    }

    pub fn is_empty(&self) -> bool {
        self.byte_end == self.byte_start
    }
}

/// Splits `path` into blocks of roughly `block_size` bytes. A block ends at
/// the first line end at or past `block_size` bytes from its start, so no
/// line straddles two blocks.
pub fn split_blocks(path: &Path, block_size: u64) -> Result<Vec<LogBlock>, EngineError> {
    split_file(path, 0, 0, block_size)
}

/// As [`split_blocks`], numbering blocks from `first_block_id` and tagging
/// them with `file_id`.
pub(crate) fn split_file(
    path: &Path,
    file_id: usize,
    first_block_id: usize,
    block_size: u64,
) -> Result<Vec<LogBlock>, EngineError> {
    if block_size == 0 {
        return Err(EngineError::InvalidConfig("block_size must be positive".into()));
    }
    let io_err = |source| EngineError::Io {
        path: PathBuf::from(path),
        source,
    };
    let shared: Arc<Path> = Arc::from(path);
    let mut reader = BufReader::with_capacity(1 << 16, File::open(path).map_err(io_err)?);

    let mut blocks = Vec::new();
    let mut line = Vec::with_capacity(256);
    let (mut pos, mut block_start, mut lines_in_block, mut line_no) = (0u64, 0u64, 0u64, 0u64);
    loop {
        line.clear();
        let n = reader.read_until(b'\n', &mut line).map_err(io_err)? as u64;
        if n == 0 {
            break;
        }
        line_no += 1;
        if n > block_size {
            return Err(EngineError::LineTooLong {
                path: PathBuf::from(path),
                line_no,
                len: n,
                block_size,
            });
        }
        pos += n;
        lines_in_block += 1;
        if pos - block_start >= block_size {
            blocks.push(LogBlock {
                block_id: first_block_id + blocks.len(),
                file_id,
                path: shared.clone(),
                byte_start: block_start,
                byte_end: pos,
                record_count: lines_in_block,
            });
            block_start = pos;
            lines_in_block = 0;
        }
    }
    if lines_in_block > 0 {
        blocks.push(LogBlock {
            block_id: first_block_id + blocks.len(),
            file_id,
            path: shared,
            byte_start: block_start,
            byte_end: pos,
            record_count: lines_in_block,
        });
    }
    Ok(blocks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file_with(content: &[u8]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content).unwrap();
        f
    }

    fn check_cover(blocks: &[LogBlock], content: &[u8]) {
        let mut expect = 0;
        for b in blocks {
            assert_eq!(b.byte_start, expect);
            expect = b.byte_end;
            let slice = &content[b.byte_start as usize..b.byte_end as usize];
            assert!(b.byte_end as usize == content.len() || slice.ends_with(b"\n"));
        }
        assert_eq!(expect as usize, content.len());
    }

    #[test]
    fn small_file_is_one_block() {
        let content: String = (0..10).map(|i| format!("line {i}\n")).collect();
        let f = file_with(content.as_bytes());
        let blocks = split_blocks(f.path(), 1 << 20).unwrap();
        assert_eq!(blocks.len(), 1);
        assert_eq!(blocks[0].record_count, 10);
        check_cover(&blocks, content.as_bytes());
    }

    #[test]
    fn hundred_byte_lines_in_256_byte_blocks() {
        let line = format!("{}\n", "x".repeat(99));
        let content = line.repeat(1000);
        let f = file_with(content.as_bytes());
        let blocks = split_blocks(f.path(), 256).unwrap();
        check_cover(&blocks, content.as_bytes());
        let mut total = 0;
        for b in &blocks {
            // independent recount from the bytes
            let slice = &content.as_bytes()[b.byte_start as usize..b.byte_end as usize];
            let lines = slice.iter().filter(|c| **c == b'\n').count() as u64;
            assert_eq!(lines, b.record_count);
            assert!((2..=3).contains(&lines) || b.byte_end as usize == content.len());
            assert!(b.len() <= 256 + 100);
            total += lines;
        }
        assert_eq!(total, 1000);
    }

    #[test]
    fn trailing_line_without_newline() {
        let f = file_with(b"a\nbb\nccc");
        let blocks = split_blocks(f.path(), 3).unwrap();
        assert_eq!(
            blocks.iter().map(|b| (b.byte_start, b.byte_end, b.record_count)).collect::<Vec<_>>(),
            [(0, 5, 2), (5, 8, 1)]
        );
    }

    #[test]
    fn empty_file_has_no_blocks() {
        let f = file_with(b"");
        assert!(split_blocks(f.path(), 16).unwrap().is_empty());
    }

    #[test]
    fn line_longer_than_block_is_reported() {
        let f = file_with(b"ok\nthis line is long\nok\n");
        match split_blocks(f.path(), 8) {
            Err(EngineError::LineTooLong { line_no, len, .. }) => {
                assert_eq!(line_no, 2);
                assert_eq!(len, 18);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_file() {
        let err = split_blocks(Path::new("/nonexistent/hadec.log"), 16).unwrap_err();
        assert!(matches!(err, EngineError::Io { .. }));
    }
}
