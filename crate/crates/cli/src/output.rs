//! Output sets: every file of one command goes through a single writer
//! thread, which also records its SHA-256 digest for the manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::mpsc::{sync_channel, SyncSender};
use std::thread::JoinHandle;

use genbayes::analysis::experiment::CellKey;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::FileConfig;
use crate::error::CliError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

type Digests = BTreeMap<String, String>;

pub struct OutputSet {
    root: PathBuf,
    tx: SyncSender<(String, Vec<u8>)>,
    writer: JoinHandle<Result<Digests, CliError>>,
}

impl OutputSet {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root)
            .map_err(|e| CliError::io(format!("cannot create {}", root.display()), e))?;
        let (tx, rx) = sync_channel::<(String, Vec<u8>)>(64);
        let base = root.to_path_buf();
        let writer = std::thread::spawn(move || {
            let mut digests = Digests::new();
            let mut failure = None;
            for (rel, bytes) in rx {
                if failure.is_some() {
                    continue;
                }
                let path = base.join(&rel);
                let written = path
                    .parent()
                    .map_or(Ok(()), fs::create_dir_all)
                    .and_then(|_| fs::write(&path, &bytes));
                match written {
                    Ok(()) => {
                        digests.insert(rel, sha256_hex(&bytes));
                    }
                    Err(e) => {
                        failure = Some(CliError::io(format!("cannot write {}", path.display()), e))
                    }
                }
            }
            failure.map_or(Ok(digests), Err)
        });
        Ok(OutputSet {
            root: root.to_path_buf(),
            tx,
            writer,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// A handle that worker threads can use to queue files.
    pub fn sender(&self) -> SyncSender<(String, Vec<u8>)> {
        self.tx.clone()
    }

    /// Queues `bytes` for `rel`, a path relative to the output root.
    pub fn put(&self, rel: impl Into<String>, bytes: Vec<u8>) -> Result<(), CliError> {
        self.tx
            .send((rel.into(), bytes))
            .map_err(|_| CliError::Io("output writer stopped".into()))
    }

    /// Waits for all queued files and returns their digests by relative path.
    pub fn finish(self) -> Result<Digests, CliError> {
        drop(self.tx);
        self.writer
            .join()
            .map_err(|_| CliError::Io("output writer panicked".into()))?
    }
}

/// Provenance record written next to every output set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub master_seed: u64,
    pub config: FileConfig,
    /// Digests of files the command read.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub inputs: Digests,
    /// SHA-256 of every written file, by path relative to the output root.
    pub outputs: Digests,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub missing_cells: Vec<CellKey>,
    /// Wall-clock times; only recorded with `--timing`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub started_at: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<String>,
}

impl RunManifest {
    pub fn new(command: &str, config: &FileConfig) -> Self {
        RunManifest {
            tool: "genbayes".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            master_seed: config.master_seed(),
            config: config.clone(),
            inputs: Digests::new(),
            outputs: Digests::new(),
            missing_cells: Vec::new(),
            started_at: None,
            finished_at: None,
        }
    }

    pub fn write(&self, root: &Path, name: &str) -> Result<(), CliError> {
        let mut text =
            serde_json::to_string_pretty(self).map_err(|e| CliError::Io(e.to_string()))?;
        text.push('\n');
        let path = root.join(name);
        fs::write(&path, text)
            .map_err(|e| CliError::io(format!("cannot write {}", path.display()), e))
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("cannot read {}", path.display()), e))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

pub fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}
