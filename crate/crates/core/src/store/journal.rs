//! On-disk formats.
//!
//! Journal `hivemind.log`:
//!
//! ```text
//! header  : "HMLOG" (5 bytes) | version u8 = 1
//! record  : len u32 LE | tag u8 | payload (len - 1 bytes) | crc u32 LE
//! ```
//!
//! `len` counts the tag and the payload. `crc` is CRC-32 (IEEE) over the tag
//! and the payload. The payload is the JSON object `{"seq": n, "op": {...}}`;
//! the tag repeats the op's type so a reader can reject a record whose tag
//! and body disagree. Replay stops at the first short or corrupt record and
//! truncates the file there: such a tail belongs to a write that was never
//! acknowledged.
//!
//! Snapshot `hivemind.snap`:
//!
//! ```text
//! "HMSNAP" (6 bytes) | version u8 = 1 | len u32 LE | JSON image | crc u32 LE
//! ```
//!
//! The snapshot is written to `hivemind.snap.tmp`, synced and renamed into
//! place; only then is the journal cut back to its header. Journal records
//! with a sequence number not above the snapshot's are skipped on replay.

use std::fs::{self, File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::state::{Image, Op, State};
use crate::error::{Error, Result};

pub const JOURNAL_FILE: &str = "hivemind.log";
pub const SNAPSHOT_FILE: &str = "hivemind.snap";
const JOURNAL_MAGIC: &[u8; 5] = b"HMLOG";
const SNAPSHOT_MAGIC: &[u8; 6] = b"HMSNAP";
const VERSION: u8 = 1;
const HEADER_LEN: u64 = 6;

#[derive(Serialize)]
struct RecordOut<'a> {
    seq: u64,
    op: &'a Op,
}

#[derive(Deserialize)]
struct RecordIn {
    seq: u64,
    op: Op,
}

fn storage(msg: impl std::fmt::Display) -> Error {
    Error::StorageFailure(msg.to_string())
}

pub(crate) fn encode_record(seq: u64, op: &Op) -> Vec<u8> {
    let payload = serde_json::to_vec(&RecordOut { seq, op }).expect("ops always serialize");
    let mut out = Vec::with_capacity(payload.len() + 9);
    out.extend_from_slice(&(payload.len() as u32 + 1).to_le_bytes());
    out.push(op.tag());
    out.extend_from_slice(&payload);
    let mut h = crc32fast::Hasher::new();
    h.update(&[op.tag()]);
    h.update(&payload);
    out.extend_from_slice(&h.finalize().to_le_bytes());
    out
}

/// Decodes records from the bytes after the header. Returns the decoded
/// records and the number of bytes they occupy; anything after that is a
/// torn or corrupt tail.
pub(crate) fn decode_records(mut bytes: &[u8]) -> (Vec<(u64, Op)>, usize) {
    let mut out = Vec::new();
    let mut used = 0;
    let mut last_seq = 0;
    loop {
        if bytes.len() < 4 {
            break;
        }
        let len = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
        if len == 0 || bytes.len() < 4 + len + 4 {
            break;
        }
        let body = &bytes[4..4 + len];
        let crc = u32::from_le_bytes(bytes[4 + len..8 + len].try_into().unwrap());
        if crc32fast::hash(body) != crc {
            break;
        }
        let Ok(rec) = serde_json::from_slice::<RecordIn>(&body[1..]) else {
            break;
        };
        if rec.op.tag() != body[0] || rec.seq <= last_seq {
            break;
        }
        last_seq = rec.seq;
        out.push((rec.seq, rec.op));
        used += 8 + len;
        bytes = &bytes[8 + len..];
    }
    (out, used)
}

pub(crate) struct Journal {
    file: File,
    len: u64,
    sync: bool,
    /// Bytes that may still be written before a simulated crash.
    budget: Option<u64>,
}

impl Journal {
    /// Opens or creates the journal, returning it with every intact record.
    pub(crate) fn open(path: &Path, sync: bool, budget: Option<u64>) -> Result<(Journal, Vec<(u64, Op)>)> {
        let mut file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(false)
            .open(path)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;
        let mut journal = Journal {
            file,
            len: 0,
            sync,
            budget,
        };
        if bytes.len() < HEADER_LEN as usize {
            // Fresh file, or a crash while writing the header.
            journal.file.set_len(0)?;
            journal.file.seek(SeekFrom::Start(0))?;
            let mut header = JOURNAL_MAGIC.to_vec();
            header.push(VERSION);
            journal.write(&header)?;
            return Ok((journal, Vec::new()));
        }
        if &bytes[..5] != JOURNAL_MAGIC {
            return Err(storage(format!("{} is not a journal", path.display())));
        }
        if bytes[5] != VERSION {
            return Err(storage(format!("unsupported journal version {}", bytes[5])));
        }
        let (records, used) = decode_records(&bytes[HEADER_LEN as usize..]);
        journal.len = HEADER_LEN + used as u64;
        if journal.len < bytes.len() as u64 {
            journal.file.set_len(journal.len)?;
            journal.file.sync_all()?;
        }
        journal.file.seek(SeekFrom::Start(journal.len))?;
        Ok((journal, records))
    }

    fn write(&mut self, bytes: &[u8]) -> Result<()> {
        if let Some(budget) = self.budget.as_mut() {
            if (bytes.len() as u64) > *budget {
                let part = *budget as usize;
                self.file.write_all(&bytes[..part])?;
                self.file.flush()?;
                *budget = 0;
                self.len += part as u64;
                return Err(storage("simulated crash during journal write"));
            }
            *budget -= bytes.len() as u64;
        }
        self.file.write_all(bytes)?;
        if self.sync {
            self.file.sync_data()?;
        }
        self.len += bytes.len() as u64;
        Ok(())
    }

    pub(crate) fn append(&mut self, seq: u64, op: &Op) -> Result<()> {
        self.write(&encode_record(seq, op))
    }

    /// Drops every record, keeping the header.
    pub(crate) fn reset(&mut self) -> Result<()> {
        self.file.set_len(HEADER_LEN)?;
        self.file.seek(SeekFrom::Start(HEADER_LEN))?;
        self.file.sync_all()?;
        self.len = HEADER_LEN;
        Ok(())
    }

    pub(crate) fn simulated_crash(&self) -> bool {
        self.budget == Some(0)
    }
}

pub(crate) fn write_snapshot(dir: &Path, state: &State) -> Result<()> {
    let json = serde_json::to_vec(&state.to_image()).map_err(storage)?;
    let mut bytes = SNAPSHOT_MAGIC.to_vec();
    bytes.push(VERSION);
    bytes.extend_from_slice(&(json.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&json);
    bytes.extend_from_slice(&crc32fast::hash(&json).to_le_bytes());

    let tmp = dir.join(format!("{SNAPSHOT_FILE}.tmp"));
    let mut f = File::create(&tmp)?;
    f.write_all(&bytes)?;
    f.sync_all()?;
    drop(f);
    fs::rename(&tmp, dir.join(SNAPSHOT_FILE))?;
    if let Ok(d) = File::open(dir) {
        let _ = d.sync_all();
    }
    Ok(())
}

pub(crate) fn read_snapshot(dir: &Path) -> Result<Option<State>> {
    let path = dir.join(SNAPSHOT_FILE);
    let bytes = match fs::read(&path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    let bad = || storage(format!("corrupt snapshot {}", path.display()));
    if bytes.len() < 11 || &bytes[..6] != SNAPSHOT_MAGIC {
        return Err(bad());
    }
    if bytes[6] != VERSION {
        return Err(storage(format!("unsupported snapshot version {}", bytes[6])));
    }
    let len = u32::from_le_bytes(bytes[7..11].try_into().unwrap()) as usize;
    if bytes.len() != 11 + len + 4 {
        return Err(bad());
    }
    let json = &bytes[11..11 + len];
    let crc = u32::from_le_bytes(bytes[11 + len..].try_into().unwrap());
    if crc32fast::hash(json) != crc {
        return Err(bad());
    }
    let image: Image = serde_json::from_slice(json).map_err(|_| bad())?;
    Ok(Some(State::from_image(image)))
}
