//! Result-file writers. Every output file embeds the manifest hash: JSONL
//! files carry a header record, TSV files a comment line, JSON files a
//! top-level field, SVG files an XML comment.

use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Debug, Serialize, Deserialize)]
pub struct JsonlHeader {
    pub manifest_hash: String,
    pub schema: String,
    pub n_records: usize,
}

pub fn write_jsonl<T: Serialize>(
    path: &Path,
    manifest_hash: &str,
    schema: &str,
    records: &[T],
) -> std::io::Result<()> {
    let mut out = Vec::new();
    let header = JsonlHeader {
        manifest_hash: manifest_hash.to_string(),
        schema: schema.to_string(),
        n_records: records.len(),
    };
    writeln!(out, "{}", serde_json::to_string(&header)?)?;
    for record in records {
        writeln!(out, "{}", serde_json::to_string(record)?)?;
    }
    std::fs::write(path, out)
}

/// Read a JSONL file written by [`write_jsonl`], checking the schema name.
pub fn read_jsonl<T: DeserializeOwned>(
    path: &Path,
    schema: &str,
) -> std::io::Result<(JsonlHeader, Vec<T>)> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header_line = lines
        .next()
        .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::InvalidData, "empty file"))?;
    let header: JsonlHeader = serde_json::from_str(header_line)
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
    if header.schema != schema {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!("expected schema `{schema}`, found `{}`", header.schema),
        ));
    }
    let mut records = Vec::new();
    for line in lines {
        records.push(
            serde_json::from_str(line)
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?,
        );
    }
    Ok((header, records))
}

/// Deterministic float formatting for delimited tables ("nan" for undefined
/// cells, shortest round-trip otherwise).
pub fn format_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        format!("{v}")
    }
}

pub fn format_opt(v: Option<f64>) -> String {
    v.map(format_f64).unwrap_or_else(|| "nan".to_string())
}

pub fn write_tsv(
    path: &Path,
    manifest_hash: &str,
    header: &[&str],
    rows: &[Vec<String>],
) -> std::io::Result<()> {
    let mut out = String::new();
    out.push_str(&format!("# manifest_hash={manifest_hash}\n"));
    out.push_str(&header.join("\t"));
    out.push('\n');
    for row in rows {
        out.push_str(&row.join("\t"));
        out.push('\n');
    }
    std::fs::write(path, out)
}

/// Wrap a serializable value with the manifest hash and schema tag.
pub fn write_json<T: Serialize>(
    path: &Path,
    manifest_hash: &str,
    schema: &str,
    data: &T,
) -> std::io::Result<()> {
    #[derive(Serialize)]
    struct Wrapped<'a, T> {
        manifest_hash: &'a str,
        schema: &'a str,
        data: &'a T,
    }
    let text = serde_json::to_string_pretty(&Wrapped { manifest_hash, schema, data })?;
    std::fs::write(path, text)
}

pub fn read_json<T: DeserializeOwned>(path: &Path, schema: &str) -> std::io::Result<T> {
    #[derive(Deserialize)]
    struct Wrapped<T> {
        schema: String,
        data: T,
    }
    let text = std::fs::read_to_string(path)?;
    let wrapped: Wrapped<T> = serde_json::from_str(&text)
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
    if wrapped.schema != schema {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!("expected schema `{schema}`, found `{}`", wrapped.schema),
        ));
    }
    Ok(wrapped.data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Row {
        k: u32,
        v: f64,
    }

    #[test]
    fn jsonl_round_trip_with_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rows.jsonl");
        let rows = vec![Row { k: 1, v: 0.5 }, Row { k: 2, v: -1.25 }];
        write_jsonl(&path, "abc", "rows.v1", &rows).unwrap();
        let (header, loaded): (JsonlHeader, Vec<Row>) = read_jsonl(&path, "rows.v1").unwrap();
        assert_eq!(header.manifest_hash, "abc");
        assert_eq!(header.n_records, 2);
        assert_eq!(loaded, rows);
        assert!(read_jsonl::<Row>(&path, "other").is_err());
    }

    #[test]
    fn tsv_embeds_hash_comment() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.tsv");
        write_tsv(&path, "xyz", &["a", "b"], &[vec!["1".into(), "2".into()]]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# manifest_hash=xyz\na\tb\n1\t2\n"));
    }

    #[test]
    fn nan_formats_as_text() {
        assert_eq!(format_f64(f64::NAN), "nan");
        assert_eq!(format_f64(1.5), "1.5");
        assert_eq!(format_opt(None), "nan");
    }
}
