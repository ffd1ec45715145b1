//! Mask-read audit trail.
//!
//! Every ground-truth mask decoded from disk is logged together with the
//! domain it belongs to and the purpose active on the reading thread. Training
//! code runs under [`Purpose::Training`] (the default); evaluation entry points
//! switch to [`Purpose::Evaluation`] for their duration. A leakage audit then
//! reduces to: no target-domain mask was ever read for training.

use std::cell::Cell;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use crate::data::DomainTag;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Purpose {
    Training,
    Evaluation,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskRead {
    pub path: PathBuf,
    pub domain: DomainTag,
    pub purpose: Purpose,
}

thread_local! {
    static PURPOSE: Cell<Purpose> = const { Cell::new(Purpose::Training) };
}

static LOG: Mutex<Vec<MaskRead>> = Mutex::new(Vec::new());

pub fn current_purpose() -> Purpose {
    PURPOSE.with(|p| p.get())
}

/// Runs `f` with the given purpose active on this thread.
pub fn with_purpose<T>(purpose: Purpose, f: impl FnOnce() -> T) -> T {
    let previous = PURPOSE.with(|p| p.replace(purpose));
    struct Restore(Purpose);
    impl Drop for Restore {
        fn drop(&mut self) {
            PURPOSE.with(|p| p.set(self.0));
        }
    }
    let _restore = Restore(previous);
    f()
}

pub(crate) fn record(path: &Path, domain: DomainTag) {
    let entry = MaskRead { path: path.to_path_buf(), domain, purpose: current_purpose() };
    LOG.lock().unwrap_or_else(|e| e.into_inner()).push(entry);
}

pub fn snapshot() -> Vec<MaskRead> {
    LOG.lock().unwrap_or_else(|e| e.into_inner()).clone()
}

pub fn clear() {
    LOG.lock().unwrap_or_else(|e| e.into_inner()).clear();
}

/// Target-domain mask reads that happened outside evaluation.
pub fn leaks(reads: &[MaskRead]) -> Vec<MaskRead> {
    reads.iter().filter(|r| r.domain == DomainTag::Target && r.purpose != Purpose::Evaluation).cloned().collect()
}
