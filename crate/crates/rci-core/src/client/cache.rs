//! Append-only JSONL inference cache, one file per (model, manifest) pair.
//!
//! Records are flushed line by line, so an interrupted run loses at most the
//! line being written; a torn final line is truncated away on the next open.
//! One key never maps to two different answers: a conflicting append and a
//! conflicting pair of lines on disk are both hard errors.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use super::{ClientError, InferenceRecord};

#[derive(Debug)]
pub struct InferenceCache {
    path: PathBuf,
    records: HashMap<String, InferenceRecord>,
    file: Option<File>,
    /// Existing file ends without a newline; the next append writes one first.
    needs_newline: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheStats {
    pub path: PathBuf,
    pub record_count: usize,
    pub file_bytes: u64,
}

fn sanitize(part: &str) -> String {
    part.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '-') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

pub fn cache_file_name(model_id: &str, manifest_name: &str) -> String {
    format!("{}__{}.jsonl", sanitize(manifest_name), sanitize(model_id))
}

pub fn cache_path(cache_dir: &Path, model_id: &str, manifest_name: &str) -> PathBuf {
    cache_dir.join(cache_file_name(model_id, manifest_name))
}

impl InferenceCache {
    /// Opens (creating the directory if needed) and loads any existing
    /// records. Duplicate identical lines are tolerated; duplicate keys with
    /// different answers are a conflict error.
    pub fn open(
        cache_dir: &Path,
        model_id: &str,
        manifest_name: &str,
    ) -> Result<Self, ClientError> {
        fs::create_dir_all(cache_dir).map_err(|source| ClientError::CacheIo {
            path: cache_dir.to_path_buf(),
            source,
        })?;
        let path = cache_path(cache_dir, model_id, manifest_name);
        let mut records = HashMap::new();
        let mut needs_newline = false;

        if path.exists() {
            let text = fs::read_to_string(&path).map_err(|source| ClientError::CacheIo {
                path: path.clone(),
                source,
            })?;
            let lines: Vec<&str> = text.split('\n').collect();
            let mut keep_bytes: u64 = 0;
            let mut torn = false;
            for (i, line) in lines.iter().enumerate() {
                if line.is_empty() {
                    continue;
                }
                match serde_json::from_str::<InferenceRecord>(line) {
                    Ok(record) => {
                        if let Some(existing) = records.get(&record.cache_key) {
                            let existing: &InferenceRecord = existing;
                            if existing.answer_text != record.answer_text {
                                return Err(ClientError::CacheConflict {
                                    key: record.cache_key,
                                });
                            }
                        } else {
                            records.insert(record.cache_key.clone(), record);
                        }
                        keep_bytes += line.len() as u64 + 1;
                    }
                    Err(err) => {
                        let is_last =
                            i == lines.len() - 1 || lines[i + 1..].iter().all(|l| l.is_empty());
                        if is_last {
                            torn = true;
                            break;
                        }
                        return Err(ClientError::CacheParse {
                            path,
                            line: i + 1,
                            detail: err.to_string(),
                        });
                    }
                }
            }
            if torn {
                let file = OpenOptions::new()
                    .write(true)
                    .open(&path)
                    .map_err(|source| ClientError::CacheIo {
                        path: path.clone(),
                        source,
                    })?;
                file.set_len(keep_bytes)
                    .map_err(|source| ClientError::CacheIo {
                        path: path.clone(),
                        source,
                    })?;
            } else {
                needs_newline = !text.is_empty() && !text.ends_with('\n');
            }
        }

        Ok(InferenceCache {
            path,
            records,
            file: None,
            needs_newline,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn get(&self, key: &str) -> Option<&InferenceRecord> {
        self.records.get(key)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = &InferenceRecord> {
        self.records.values()
    }

    /// Appends one record and flushes it. Re-appending an identical answer is
    /// a no-op; a different answer under an existing key is a conflict.
    pub fn append(&mut self, record: InferenceRecord) -> Result<(), ClientError> {
        if let Some(existing) = self.records.get(&record.cache_key) {
            if existing.answer_text == record.answer_text {
                return Ok(());
            }
            return Err(ClientError::CacheConflict {
                key: record.cache_key,
            });
        }

        if self.file.is_none() {
            let mut file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&self.path)
                .map_err(|source| ClientError::CacheIo {
                    path: self.path.clone(),
                    source,
                })?;
            file.seek(SeekFrom::End(0))
                .map_err(|source| ClientError::CacheIo {
                    path: self.path.clone(),
                    source,
                })?;
            self.file = Some(file);
        }
        let file = self.file.as_mut().unwrap();
        let line = serde_json::to_string(&record).map_err(|err| ClientError::CacheParse {
            path: self.path.clone(),
            line: 0,
            detail: err.to_string(),
        })?;
        if self.needs_newline {
            file.write_all(b"\n")
                .map_err(|source| ClientError::CacheIo {
                    path: self.path.clone(),
                    source,
                })?;
            self.needs_newline = false;
        }
        file.write_all(line.as_bytes())
            .and_then(|_| file.write_all(b"\n"))
            .and_then(|_| file.flush())
            .map_err(|source| ClientError::CacheIo {
                path: self.path.clone(),
                source,
            })?;
        self.records.insert(record.cache_key.clone(), record);
        Ok(())
    }

    pub fn stats(&self) -> CacheStats {
        let file_bytes = fs::metadata(&self.path).map(|m| m.len()).unwrap_or(0);
        CacheStats {
            path: self.path.clone(),
            record_count: self.records.len(),
            file_bytes,
        }
    }
}

/// All cache files in a directory, sorted by file name.
pub fn list_cache_files(cache_dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    if !cache_dir.exists() {
        return Ok(files);
    }
    for entry in fs::read_dir(cache_dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("jsonl") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::RegionKey;

    fn record(key: &str, answer: &str) -> InferenceRecord {
        InferenceRecord {
            cache_key: key.into(),
            model_id: "m".into(),
            sample_id: "s".into(),
            region: RegionKey::Full,
            repetition: 0,
            answer_text: answer.into(),
            created_at: "2026-01-01T00:00:00Z".into(),
            attempt_count: 1,
        }
    }

    #[test]
    fn append_then_reload() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut cache = InferenceCache::open(dir.path(), "m", "d").unwrap();
            cache.append(record("k1", "a1")).unwrap();
            cache.append(record("k2", "a2")).unwrap();
        }
        let cache = InferenceCache::open(dir.path(), "m", "d").unwrap();
        assert_eq!(cache.len(), 2);
        assert_eq!(cache.get("k1").unwrap().answer_text, "a1");
    }

    #[test]
    fn conflicting_append_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut cache = InferenceCache::open(dir.path(), "m", "d").unwrap();
        cache.append(record("k1", "a1")).unwrap();
        // identical answer: fine
        cache.append(record("k1", "a1")).unwrap();
        assert!(matches!(
            cache.append(record("k1", "different")),
            Err(ClientError::CacheConflict { .. })
        ));
    }

    #[test]
    fn conflicting_lines_on_disk_are_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = cache_path(dir.path(), "m", "d");
        let a = serde_json::to_string(&record("k1", "a1")).unwrap();
        let b = serde_json::to_string(&record("k1", "a2")).unwrap();
        fs::write(&path, format!("{a}\n{b}\n")).unwrap();
        assert!(matches!(
            InferenceCache::open(dir.path(), "m", "d"),
            Err(ClientError::CacheConflict { .. })
        ));
    }

    #[test]
    fn torn_final_line_is_repaired() {
        let dir = tempfile::tempdir().unwrap();
        let path = cache_path(dir.path(), "m", "d");
        let a = serde_json::to_string(&record("k1", "a1")).unwrap();
        fs::write(&path, format!("{a}\n{{\"cache_key\":\"k2\",\"mod")).unwrap();

        let mut cache = InferenceCache::open(dir.path(), "m", "d").unwrap();
        assert_eq!(cache.len(), 1);
        // appending after repair keeps the file parseable
        cache.append(record("k2", "a2")).unwrap();
        drop(cache);
        let cache = InferenceCache::open(dir.path(), "m", "d").unwrap();
        assert_eq!(cache.len(), 2);
    }

    #[test]
    fn valid_final_line_without_newline_is_kept() {
        let dir = tempfile::tempdir().unwrap();
        let path = cache_path(dir.path(), "m", "d");
        let a = serde_json::to_string(&record("k1", "a1")).unwrap();
        fs::write(&path, a).unwrap();

        let mut cache = InferenceCache::open(dir.path(), "m", "d").unwrap();
        assert_eq!(cache.len(), 1);
        cache.append(record("k2", "a2")).unwrap();
        drop(cache);
        let cache = InferenceCache::open(dir.path(), "m", "d").unwrap();
        assert_eq!(cache.len(), 2);
    }

    #[test]
    fn bad_interior_line_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = cache_path(dir.path(), "m", "d");
        let a = serde_json::to_string(&record("k1", "a1")).unwrap();
        fs::write(&path, format!("not json\n{a}\n")).unwrap();
        assert!(matches!(
            InferenceCache::open(dir.path(), "m", "d"),
            Err(ClientError::CacheParse { line: 1, .. })
        ));
    }

    #[test]
    fn file_names_are_sanitized() {
        let name = cache_file_name("oracle:/tmp/x.json", "my dataset");
        assert_eq!(name, "my_dataset__oracle__tmp_x.json.jsonl");
    }

    #[test]
    fn list_cache_files_finds_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let mut cache = InferenceCache::open(dir.path(), "m", "d").unwrap();
        cache.append(record("k", "a")).unwrap();
        fs::write(dir.path().join("other.txt"), "x").unwrap();
        let files = list_cache_files(dir.path()).unwrap();
        assert_eq!(files.len(), 1);
        assert!(files[0].ends_with("d__m.jsonl"));
    }
}
