//! Append-only event and reminder log.
//!
//! One wire message per line, fsynced per append batch. A torn final line
//! (crash mid-write) is tolerated: replay truncates it with a warning.
//! Corruption anywhere earlier is a hard error.

use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use super::wire::{decode_message, encode_message, Message};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: corrupt record at line {line}: {message}")]
    CorruptInterior {
        path: String,
        line: usize,
        message: String,
    },
}

/// Result of reading a store file back.
#[derive(Debug, Clone)]
pub struct Replay {
    pub records: Vec<Message>,
    /// True when a torn trailing line was dropped.
    pub truncated_tail: bool,
}

/// Parse store content; `byte_len_of_good` reports where the valid prefix
/// ends so recovery can truncate.
fn parse_store(path: &Path, text: &str) -> Result<(Replay, usize), StoreError> {
    let mut records = Vec::new();
    let mut truncated_tail = false;
    let mut good_bytes = 0usize;

    let mut offset = 0usize;
    let mut line_no = 0usize;
    let segments: Vec<&str> = text.split('\n').collect();
    let last_segment = segments.len().saturating_sub(1);
    for (i, segment) in segments.iter().enumerate() {
        let has_newline = i < last_segment;
        if segment.is_empty() {
            offset += usize::from(has_newline);
            continue;
        }
        line_no += 1;
        match decode_message(segment) {
            Ok(message) => {
                if !has_newline {
                    // Complete JSON but the newline never made it to disk;
                    // treat it as torn so a later append cannot glue onto it.
                    truncated_tail = true;
                    break;
                }
                records.push(message);
                offset += segment.len() + 1;
                good_bytes = offset;
            }
            Err(e) => {
                let is_tail = i == last_segment || segments[i + 1..].iter().all(|s| s.is_empty());
                if is_tail {
                    truncated_tail = true;
                    break;
                }
                return Err(StoreError::CorruptInterior {
                    path: path.display().to_string(),
                    line: line_no,
                    message: e.to_string(),
                });
            }
        }
    }
    Ok((Replay { records, truncated_tail }, good_bytes))
}

/// Read a store file without touching it.
pub fn replay(path: impl AsRef<Path>) -> Result<Replay, StoreError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| StoreError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_store(path, &text).map(|(replay, _)| replay)
}

/// The append handle. Opening recovers existing content (truncating a torn
/// tail) and returns the replayed records.
#[derive(Debug)]
pub struct EventStore {
    file: File,
    path: PathBuf,
}

impl EventStore {
    pub fn open(path: impl AsRef<Path>) -> Result<(Self, Replay), StoreError> {
        let path = path.as_ref().to_path_buf();
        let io_err = |source| StoreError::Io { path: path.display().to_string(), source };
        let mut file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(false)
            .open(&path)
            .map_err(io_err)?;
        let mut text = String::new();
        file.read_to_string(&mut text).map_err(io_err)?;
        let (replay, good_bytes) = parse_store(&path, &text)?;
        if good_bytes < text.len() {
            file.set_len(good_bytes as u64).map_err(io_err)?;
        }
        file.seek(SeekFrom::Start(good_bytes as u64)).map_err(io_err)?;
        Ok((Self { file, path }, replay))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Append records and fsync once for the batch.
    pub fn append_batch(&mut self, messages: &[Message]) -> Result<(), StoreError> {
        let io_err = |source| StoreError::Io { path: self.path.display().to_string(), source };
        let mut buffer = String::new();
        for message in messages {
            buffer.push_str(&encode_message(message));
            buffer.push('\n');
        }
        self.file.write_all(buffer.as_bytes()).map_err(io_err)?;
        self.file.sync_data().map_err(io_err)
    }

    pub fn append(&mut self, message: &Message) -> Result<(), StoreError> {
        self.append_batch(std::slice::from_ref(message))
    }
}
