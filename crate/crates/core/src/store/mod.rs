//! Single-writer, multi-reader persistence.
//!
//! Every mutation is built as an [`Op`] against the current snapshot,
//! appended to the journal and only then applied and acknowledged. Readers
//! take an `Arc<State>` snapshot that never changes under them.

mod journal;
mod manifest;
mod state;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use serde::{Deserialize, Serialize};

pub use journal::{JOURNAL_FILE, SNAPSHOT_FILE};
pub use manifest::{
    all_paths, load_bulk, parse_expand, AnnLinkView, CommandView, ConceptLinkView, ConceptView, Cursor, EntityType,
    ExpansionPath, Filter, MachineView, Mode, MotorView, QueryResult, Row, MAX_DEPTH,
};
pub use state::{Op, State};

use crate::error::{Error, Result};
use crate::registry::MachineDef;
use crate::Id;
use journal::Journal;

#[derive(Debug, Clone)]
pub struct StoreOptions {
    /// fsync after every journal record.
    pub sync: bool,
    /// Compact into a snapshot after this many journal records.
    pub compact_every: Option<u64>,
    /// Fault injection: the journal accepts this many bytes, then the write
    /// in flight is torn and the store refuses further writes.
    pub crash_after_bytes: Option<u64>,
}

impl Default for StoreOptions {
    fn default() -> Self {
        Self {
            sync: true,
            compact_every: Some(10_000),
            crash_after_bytes: None,
        }
    }
}

struct Writer {
    journal: Option<Journal>,
    dir: Option<PathBuf>,
    since_compact: u64,
    failed: Option<String>,
}

pub struct Store {
    current: RwLock<Arc<State>>,
    writer: Mutex<Writer>,
    options: StoreOptions,
}

/// Something `save_entity` can insert.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Entity {
    Concept {
        name: String,
        #[serde(default)]
        description: String,
    },
    Ann {
        name: String,
        #[serde(default)]
        description: String,
        notation: String,
    },
    Machine(MachineDef),
}

impl Store {
    /// A store without a directory; nothing survives the process.
    pub fn in_memory() -> Store {
        Store {
            current: RwLock::new(Arc::new(State::default())),
            writer: Mutex::new(Writer {
                journal: None,
                dir: None,
                since_compact: 0,
                failed: None,
            }),
            options: StoreOptions::default(),
        }
    }

    pub fn open(dir: impl AsRef<Path>) -> Result<Store> {
        Store::open_with(dir, StoreOptions::default())
    }

    /// Opens (creating the final directory component if needed) and
    /// recovers: snapshot first, then every intact journal record after it.
    pub fn open_with(dir: impl AsRef<Path>, options: StoreOptions) -> Result<Store> {
        let dir = dir.as_ref();
        if !dir.is_dir() {
            fs::create_dir(dir)
                .map_err(|e| Error::StorageFailure(format!("cannot create store at {}: {e}", dir.display())))?;
        }
        let mut state = journal::read_snapshot(dir)?.unwrap_or_default();
        let (journal, records) = Journal::open(&dir.join(JOURNAL_FILE), options.sync, options.crash_after_bytes)?;
        let mut replayed = 0;
        for (seq, op) in records {
            if seq <= state.seq() {
                continue;
            }
            state.apply(seq, op);
            replayed += 1;
        }
        Ok(Store {
            current: RwLock::new(Arc::new(state)),
            writer: Mutex::new(Writer {
                journal: Some(journal),
                dir: Some(dir.to_path_buf()),
                since_compact: replayed,
                failed: None,
            }),
            options,
        })
    }

    /// A consistent, immutable view of everything acknowledged so far.
    pub fn snapshot(&self) -> Arc<State> {
        self.current.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    fn lock_writer(&self) -> MutexGuard<'_, Writer> {
        self.writer.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Runs one mutation. `build` sees the latest state and returns the op to
    /// persist plus the caller's result; `Op::Noop` persists nothing. The
    /// result is returned only after the op is journaled and applied.
    pub fn commit<T>(&self, build: impl FnOnce(&State) -> Result<(Op, T)>) -> Result<T> {
        let mut w = self.lock_writer();
        if let Some(why) = &w.failed {
            return Err(Error::StorageFailure(format!(
                "store is read-only after a failed write: {why}"
            )));
        }
        let (op, out, seq) = {
            let snap = self.snapshot();
            let (op, out) = build(&snap)?;
            (op, out, snap.seq() + 1)
        };
        if op == Op::Noop {
            return Ok(out);
        }
        if let Some(j) = w.journal.as_mut() {
            if let Err(e) = j.append(seq, &op) {
                w.failed = Some(e.to_string());
                return Err(e);
            }
        }
        {
            let mut cur = self.current.write().unwrap_or_else(|e| e.into_inner());
            Arc::make_mut(&mut cur).apply(seq, op);
        }
        w.since_compact += 1;
        if let Some(every) = self.options.compact_every {
            if w.since_compact >= every {
                // A failed compaction loses nothing: the journal still holds every record.
                let _ = self.compact_locked(&mut w);
            }
        }
        Ok(out)
    }

    /// Writes a snapshot of the current state and empties the journal.
    pub fn compact(&self) -> Result<()> {
        let mut w = self.lock_writer();
        self.compact_locked(&mut w)
    }

    fn compact_locked(&self, w: &mut Writer) -> Result<()> {
        let Some(dir) = w.dir.clone() else {
            return Ok(());
        };
        if w.journal.as_ref().is_some_and(Journal::simulated_crash) {
            return Err(Error::StorageFailure("store has crashed".into()));
        }
        journal::write_snapshot(&dir, &self.snapshot())?;
        if let Some(j) = w.journal.as_mut() {
            j.reset()?;
        }
        w.since_compact = 0;
        Ok(())
    }

    /// Inserts a new entity through the owning module and returns its id.
    pub fn save_entity(&self, entity: &Entity) -> Result<Id> {
        match entity {
            Entity::Concept { name, description } => Ok(crate::graph::create_concept(self, name, description)?.id),
            Entity::Ann {
                name,
                description,
                notation,
            } => Ok(
                crate::interop::upload_ann(self, name, description, notation.as_bytes())?
                    .package
                    .id,
            ),
            Entity::Machine(def) => Ok(crate::registry::register_machine(self, def)?.id),
        }
    }

    pub fn load_bulk(&self, ty: EntityType, filter: &Filter, expand: &[ExpansionPath]) -> Result<QueryResult> {
        manifest::load_bulk(&self.snapshot(), ty, filter, expand)
    }

    pub fn open_stream(&self, ty: EntityType, filter: &Filter, chunk_size: usize) -> Result<Cursor> {
        Cursor::open(self.snapshot(), ty, filter, chunk_size)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{create_concept, map_relation, MappingKind, StrengthGrade};

    #[test]
    fn reopen_recovers_journal_and_snapshot() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s");
        let opts = StoreOptions {
            sync: false,
            compact_every: Some(3),
            crash_after_bytes: None,
        };
        let before = {
            let store = Store::open_with(&path, opts.clone()).unwrap();
            let ids: Vec<Id> = (0..5)
                .map(|i| create_concept(&store, &format!("c{i}"), "").unwrap().id)
                .collect();
            map_relation(
                &store,
                ids[0],
                MappingKind::Attribute,
                ids[1],
                StrengthGrade::new(0.5, 0.1).unwrap(),
            )
            .unwrap();
            store.snapshot()
        };
        assert!(path.join(SNAPSHOT_FILE).exists());
        let store = Store::open_with(&path, opts).unwrap();
        assert_eq!(*store.snapshot(), *before);
        assert_eq!(store.snapshot().next_id(), 6);
    }

    #[test]
    fn open_fails_when_parent_is_missing() {
        assert!(matches!(
            Store::open("/nonexistent/dir/x"),
            Err(Error::StorageFailure(_))
        ));
    }

    #[test]
    fn save_entity_assigns_fresh_ids() {
        let store = Store::in_memory();
        let a = store
            .save_entity(&Entity::Concept {
                name: "wall".into(),
                description: String::new(),
            })
            .unwrap();
        let b = store
            .save_entity(&Entity::Concept {
                name: "roof".into(),
                description: String::new(),
            })
            .unwrap();
        assert!(b > a);
        assert!(store
            .save_entity(&Entity::Concept {
                name: " ".into(),
                description: String::new(),
            })
            .is_err());
    }
}
