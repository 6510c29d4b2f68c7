//! Output directory handling: the single-writer lock and metrics logs.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::{Map, Value};

use crate::CliError;

pub const LOCK_FILE: &str = ".ppow.lock";

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Runtime(format!("cannot create output dir {}: {e}", dir.display())))?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::Runtime(format!(
                "output dir {} is locked by another run (remove {} if stale)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(CliError::Runtime(format!("cannot lock output dir {}: {e}", dir.display()))),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

/// Line-delimited JSON records. Every record gets a `wall_time` field
/// (seconds since the log opened); nothing else in a record depends on the
/// clock.
pub struct MetricsLog {
    out: BufWriter<File>,
    start: Instant,
}

impl MetricsLog {
    pub fn create(path: &Path) -> Result<Self, CliError> {
        let file = File::create(path)
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
        Ok(Self {
            out: BufWriter::new(file),
            start: Instant::now(),
        })
    }

    /// Writes `kind` plus the fields of `record`, which must serialize to an
    /// object.
    pub fn record<S: Serialize>(&mut self, kind: &str, record: &S) -> Result<(), CliError> {
        let mut map = match serde_json::to_value(record).map_err(|e| CliError::Runtime(e.to_string()))? {
            Value::Object(m) => m,
            other => {
                let mut m = Map::new();
                m.insert("value".into(), other);
                m
            }
        };
        map.insert("kind".into(), Value::from(kind));
        map.insert("wall_time".into(), Value::from(self.start.elapsed().as_secs_f64()));
        serde_json::to_writer(&mut self.out, &map).map_err(|e| CliError::Runtime(e.to_string()))?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<(), CliError> {
        Ok(self.out.flush()?)
    }
}

/// Two whitespace-separated columns per line for external plotting.
pub fn write_plot(path: &Path, rows: impl IntoIterator<Item = (f64, f64)>) -> Result<(), CliError> {
    let mut s = String::new();
    for (x, y) in rows {
        s.push_str(&format!("{x} {y}\n"));
    }
    std::fs::write(path, s).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

/// Drops the `wall_time` field from one metrics line, for rerun comparisons.
pub fn strip_wall_time(line: &str) -> Result<String, CliError> {
    let mut v: Value = serde_json::from_str(line).map_err(|e| CliError::Runtime(e.to_string()))?;
    if let Value::Object(m) = &mut v {
        m.remove("wall_time");
    }
    Ok(v.to_string())
}
