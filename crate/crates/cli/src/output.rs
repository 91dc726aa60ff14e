//! CSV encoding and all-or-nothing file output.

use std::fs;
use std::path::{Path, PathBuf};

/// Seventeen significant digits, enough to round-trip any `f64`.
pub fn num(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{x:.16e}")
    }
}

/// RFC-4180 quoting.
pub fn field(s: &str) -> String {
    if s.contains([',', '"', '\r', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub struct Csv {
    text: String,
}

impl Csv {
    pub fn new(header: &str, columns: &[String]) -> Self {
        let mut csv = Self {
            text: format!("# {header}\r\n"),
        };
        csv.row(columns.iter().map(|c| field(c)));
        csv
    }

    /// Appends one record; fields must already be encoded.
    pub fn row<I: IntoIterator<Item = String>>(&mut self, fields: I) {
        let cells: Vec<String> = fields.into_iter().collect();
        self.text.push_str(&cells.join(","));
        self.text.push_str("\r\n");
    }

    pub fn into_string(self) -> String {
        self.text
    }
}

/// Files are buffered and written only by [`Output::commit`], so a failing
/// command leaves nothing behind.
pub struct Output {
    dir: PathBuf,
    files: Vec<(String, String)>,
}

impl Output {
    pub fn new(dir: &Path) -> Self {
        Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        }
    }

    pub fn add(&mut self, name: &str, contents: String) {
        self.files.push((name.to_string(), contents));
    }

    pub fn add_csv(&mut self, name: &str, csv: Csv) {
        self.add(name, csv.into_string());
    }

    pub fn names(&self) -> Vec<&str> {
        self.files.iter().map(|f| f.0.as_str()).collect()
    }

    /// Writes every file via a temporary name and rename; on error removes
    /// whatever this call already produced.
    pub fn commit(self) -> std::io::Result<Vec<PathBuf>> {
        fs::create_dir_all(&self.dir)?;
        let mut done: Vec<PathBuf> = Vec::new();
        for (name, contents) in &self.files {
            let target = self.dir.join(name);
            let tmp = self.dir.join(format!(".{name}.partial"));
            let res = fs::write(&tmp, contents).and_then(|_| fs::rename(&tmp, &target));
            if let Err(e) = res {
                let _ = fs::remove_file(&tmp);
                for p in &done {
                    let _ = fs::remove_file(p);
                }
                return Err(e);
            }
            done.push(target);
        }
        Ok(done)
    }
}
