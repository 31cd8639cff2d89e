//! Tab-separated files with a mandatory header row.
//!
//! Fields escape backslash, tab, newline and carriage return as `\\`, `\t`,
//! `\n` and `\r`, so every record stays on a single line.

use std::borrow::Cow;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub fn escape(field: &str) -> Cow<'_, str> {
    if !field.contains(['\\', '\t', '\n', '\r']) {
        return Cow::Borrowed(field);
    }
    let mut out = String::with_capacity(field.len() + 8);
    for c in field.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    Cow::Owned(out)
}

pub fn unescape(field: &str) -> std::result::Result<String, String> {
    if !field.contains('\\') {
        return Ok(field.to_string());
    }
    let mut out = String::with_capacity(field.len());
    let mut chars = field.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some(other) => return Err(format!("unknown escape sequence \\{other}")),
            None => return Err("dangling backslash".into()),
        }
    }
    Ok(out)
}

/// One parsed data row: 1-based line number plus unescaped fields.
#[derive(Debug, Clone)]
pub struct Row {
    pub line: usize,
    pub fields: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Row>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

pub fn read(path: &Path) -> Result<Table> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&text, &path.display().to_string())
}

pub fn parse(text: &str, origin: &str) -> Result<Table> {
    let mut lines = text.split('\n').enumerate();
    let header = match lines.next() {
        Some((_, h)) if !h.trim().is_empty() => h.trim_end_matches('\r'),
        _ => return Err(Error::format(origin, 1, "missing header row")),
    };
    let header: Vec<String> = header.split('\t').map(str::to_string).collect();
    let mut rows = Vec::new();
    for (idx, raw) in lines {
        let raw = raw.trim_end_matches('\r');
        if raw.is_empty() {
            continue;
        }
        let line = idx + 1;
        let fields = raw
            .split('\t')
            .map(|f| unescape(f).map_err(|m| Error::format(origin, line, m)))
            .collect::<Result<Vec<_>>>()?;
        if fields.len() != header.len() {
            return Err(Error::format(
                origin,
                line,
                format!("expected {} columns, found {}", header.len(), fields.len()),
            ));
        }
        rows.push(Row { line, fields });
    }
    Ok(Table { header, rows })
}

/// Renders a header and rows as TSV text (LF line endings, trailing newline).
pub fn render<H, R, Row, F>(header: &[H], rows: R) -> String
where
    H: AsRef<str>,
    R: IntoIterator<Item = Row>,
    Row: AsRef<[F]>,
    F: AsRef<str>,
{
    let mut out = String::new();
    push_line(&mut out, header.iter().map(AsRef::as_ref));
    for row in rows {
        push_line(&mut out, row.as_ref().iter().map(AsRef::as_ref));
    }
    out
}

/// One escaped record with its trailing newline.
pub fn line<F: AsRef<str>>(fields: &[F]) -> String {
    let mut out = String::new();
    push_line(&mut out, fields.iter().map(AsRef::as_ref));
    out
}

fn push_line<'a>(out: &mut String, fields: impl Iterator<Item = &'a str>) {
    for (i, f) in fields.enumerate() {
        if i > 0 {
            out.push('\t');
        }
        out.push_str(&escape(f));
    }
    out.push('\n');
}

pub fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn escape_round_trips(s in "\\PC*|[\\\\\t\n\ra-z]*") {
            let e = escape(&s);
            prop_assert!(!e.contains(['\t', '\n', '\r']));
            prop_assert_eq!(unescape(&e).unwrap(), s);
        }
    }

    #[test]
    fn parse_checks_column_count() {
        let t = parse("a\tb\n1\t2\n\n3\t4\n", "mem").unwrap();
        assert_eq!(t.rows.len(), 2);
        assert_eq!(t.rows[1].line, 4);
        let err = parse("a\tb\n1\n", "mem").unwrap_err();
        assert!(err.to_string().contains("mem:2"), "{err}");
        assert!(parse("", "mem").is_err());
    }
}
