//! Atomic file writes and JSONL helpers shared by the exporters.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde_json::Value;

/// Writes `bytes` to `path` via a temp file in the same directory plus a
/// rename, so readers never observe a half-written file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut name = path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(name);
    {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(bytes)?;
        file.sync_all()?;
    }
    fs::rename(&tmp, path)
}

/// Serializes a leading `_meta` record (when given) followed by one
/// record per line.
pub fn write_jsonl(path: &Path, meta: Option<&Value>, records: &[Value]) -> std::io::Result<()> {
    let mut out = Vec::new();
    if let Some(meta) = meta {
        let header = serde_json::json!({ "_meta": meta });
        serde_json::to_writer(&mut out, &header).expect("meta serializes");
        out.push(b'\n');
    }
    for record in records {
        serde_json::to_writer(&mut out, record).expect("record serializes");
        out.push(b'\n');
    }
    atomic_write(path, &out)
}

/// Reads a JSONL file, splitting off the `_meta` record when present.
pub fn read_jsonl(path: &Path) -> std::io::Result<(Option<Value>, Vec<Value>)> {
    let text = fs::read_to_string(path)?;
    let mut meta = None;
    let mut records = Vec::new();
    for (index, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(line).map_err(|e| {
            std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("{}:{}: {}", path.display(), index + 1, e),
            )
        })?;
        match value.get("_meta") {
            Some(m) if index == 0 => meta = Some(m.clone()),
            _ => records.push(value),
        }
    }
    Ok((meta, records))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip_preserves_meta_and_records() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.jsonl");
        let meta = serde_json::json!({"seed": 7});
        let records = vec![
            serde_json::json!({"id": "a"}),
            serde_json::json!({"id": "b"}),
        ];
        write_jsonl(&path, Some(&meta), &records).unwrap();
        let (read_meta, read_records) = read_jsonl(&path).unwrap();
        assert_eq!(read_meta, Some(meta));
        assert_eq!(read_records, records);
    }

    #[test]
    fn jsonl_without_meta_has_no_header_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bare.jsonl");
        write_jsonl(&path, None, &[serde_json::json!({"id": "a"})]).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1);
        let (meta, records) = read_jsonl(&path).unwrap();
        assert!(meta.is_none());
        assert_eq!(records.len(), 1);
    }

    #[test]
    fn atomic_write_replaces_existing_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("file.txt");
        atomic_write(&path, b"first").unwrap();
        atomic_write(&path, b"second").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"second");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
