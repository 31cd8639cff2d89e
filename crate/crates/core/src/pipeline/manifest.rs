//! Append-only run log with stage fingerprints, used to skip finished stages.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use crate::error::{Error, Result};
use crate::tsv;

pub const MANIFEST_LOG: &str = "manifest.log";
const COLUMNS: [&str; 6] = ["time_ms", "event", "stage", "fingerprint", "artifacts", "message"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageStatus {
    Completed,
    CacheHit,
    Failed,
}

impl StageStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            StageStatus::Completed => "complete",
            StageStatus::CacheHit => "cache-hit",
            StageStatus::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageRecord {
    pub stage: String,
    pub status: StageStatus,
    pub fingerprint: String,
    /// Relative to the run directory.
    pub artifacts: Vec<PathBuf>,
    pub message: String,
}

/// Single writer for `manifest.log`; all events go through one lock.
pub struct RunManifest {
    root: PathBuf,
    file: Mutex<File>,
    previous: HashMap<String, (String, Vec<PathBuf>)>,
    records: Mutex<Vec<StageRecord>>,
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

impl RunManifest {
    /// Opens (or creates) the log in `root`, remembering stages finished by earlier runs.
    pub fn open(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let path = root.join(MANIFEST_LOG);
        let mut previous = HashMap::new();
        let fresh = !path.exists();
        if !fresh {
            let table = tsv::read(&path)?;
            for row in &table.rows {
                let [_, event, stage, fp, artifacts, _] = row.fields.as_slice() else {
                    continue;
                };
                match event.as_str() {
                    "complete" | "cache-hit" => {
                        let paths = artifacts
                            .split(',')
                            .filter(|a| !a.is_empty())
                            .map(PathBuf::from)
                            .collect();
                        previous.insert(stage.clone(), (fp.clone(), paths));
                    }
                    "failed" | "start" => {
                        previous.remove(stage);
                    }
                    _ => {}
                }
            }
        }
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        if fresh {
            file.write_all(tsv::line(&COLUMNS).as_bytes())
                .map_err(|e| Error::io(&path, e))?;
        }
        Ok(Self {
            root: root.to_path_buf(),
            file: Mutex::new(file),
            previous,
            records: Mutex::new(Vec::new()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn records(&self) -> Vec<StageRecord> {
        self.records.lock().expect("manifest lock").clone()
    }

    fn relative(&self, p: &Path) -> PathBuf {
        p.strip_prefix(&self.root)
            .map(Path::to_path_buf)
            .unwrap_or_else(|_| p.to_path_buf())
    }

    fn log(&self, event: &str, stage: &str, fingerprint: &str, artifacts: &[PathBuf], message: &str) -> Result<()> {
        let joined = artifacts
            .iter()
            .map(|a| a.display().to_string())
            .collect::<Vec<_>>()
            .join(",");
        let line = tsv::line(&[
            now_ms().to_string(),
            event.into(),
            stage.into(),
            fingerprint.into(),
            joined,
            message.into(),
        ]);
        let mut f = self.file.lock().expect("manifest lock");
        f.write_all(line.as_bytes())
            .and_then(|_| f.flush())
            .map_err(|e| Error::io(self.root.join(MANIFEST_LOG), e))
    }

    pub fn note(&self, stage: &str, message: &str) -> Result<()> {
        self.log("note", stage, "", &[], message)
    }

    /// Runs `compute` unless an earlier run finished `stage` with the same
    /// fingerprint and its artifacts still exist. Returns whether it was a cache hit.
    pub fn stage(
        &self,
        stage: &str,
        fingerprint: &str,
        artifacts: &[PathBuf],
        compute: impl FnOnce() -> Result<()>,
    ) -> Result<bool> {
        let rel: Vec<PathBuf> = artifacts.iter().map(|a| self.relative(a)).collect();
        let hit = self.previous.get(stage).is_some_and(|(fp, prev)| {
            fp == fingerprint && *prev == rel && rel.iter().all(|a| self.root.join(a).exists())
        });
        let status = if hit {
            self.log("cache-hit", stage, fingerprint, &rel, "")?;
            StageStatus::CacheHit
        } else {
            self.log("start", stage, fingerprint, &[], "")?;
            let outcome = compute().and_then(|_| match artifacts.iter().find(|a| !a.exists()) {
                Some(missing) => Err(Error::Config(format!(
                    "stage {stage} did not produce {}",
                    missing.display()
                ))),
                None => Ok(()),
            });
            if let Err(e) = outcome {
                let msg = format!("error[{}] {e}", e.category());
                self.log("failed", stage, fingerprint, &[], &msg)?;
                self.push(stage, StageStatus::Failed, fingerprint, rel, msg);
                return Err(e);
            }
            self.log("complete", stage, fingerprint, &rel, "")?;
            StageStatus::Completed
        };
        self.push(stage, status, fingerprint, rel, String::new());
        Ok(hit)
    }

    fn push(&self, stage: &str, status: StageStatus, fingerprint: &str, artifacts: Vec<PathBuf>, message: String) {
        self.records.lock().expect("manifest lock").push(StageRecord {
            stage: stage.into(),
            status,
            fingerprint: fingerprint.into(),
            artifacts,
            message,
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn second_run_hits_the_cache() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("a.txt");
        let m = RunManifest::open(dir.path()).unwrap();
        let mut calls = 0;
        let hit = m
            .stage("s", "fp1", std::slice::from_ref(&out), || {
                calls += 1;
                fs::write(&out, "x").map_err(|e| Error::io(&out, e))
            })
            .unwrap();
        assert!(!hit);
        drop(m);

        let m = RunManifest::open(dir.path()).unwrap();
        assert!(m
            .stage("s", "fp1", std::slice::from_ref(&out), || unreachable!())
            .unwrap());
        // Changed fingerprint recomputes.
        assert!(!m.stage("s", "fp2", std::slice::from_ref(&out), || Ok(())).unwrap());
        assert_eq!(calls, 1);
        drop(m);

        // Deleting the artifact recomputes.
        fs::remove_file(&out).unwrap();
        let m = RunManifest::open(dir.path()).unwrap();
        let again = m.stage("s", "fp2", std::slice::from_ref(&out), || {
            fs::write(&out, "y").map_err(|e| Error::io(&out, e))
        });
        assert!(!again.unwrap());
    }

    #[test]
    fn failures_are_logged_and_missing_artifacts_fail() {
        let dir = tempfile::tempdir().unwrap();
        let m = RunManifest::open(dir.path()).unwrap();
        let err = m
            .stage("boom", "fp", &[], || Err(Error::Routing("no model".into())))
            .unwrap_err();
        assert_eq!(err.category(), "routing");
        let ghost = dir.path().join("ghost");
        assert!(m.stage("lazy", "fp", &[ghost], || Ok(())).is_err());
        let log = fs::read_to_string(dir.path().join(MANIFEST_LOG)).unwrap();
        assert!(log.contains("failed\tboom"));
        assert_eq!(
            m.records().iter().filter(|r| r.status == StageStatus::Failed).count(),
            2
        );
    }
}
