//! CSV and `run_meta` files for one run.

use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use super::config::ExperimentConfig;

pub const BUILD_ID: &str = match option_env!("CONFOCAL_HMC_BUILD_ID") {
    Some(id) => id,
    None => "unknown",
};

/// Destination directory plus the timestamp tag shared by a run's files.
#[derive(Clone, Debug)]
pub struct OutputSink {
    dir: PathBuf,
    tag: String,
    written: Vec<PathBuf>,
}

impl OutputSink {
    /// Creates `dir` if needed. Without an explicit tag, the tag is the
    /// current UNIX time in milliseconds.
    pub fn new(dir: &Path, tag: Option<String>) -> io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        let tag = tag.unwrap_or_else(|| {
            SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis().to_string())
                .unwrap_or_else(|_| "0".into())
        });
        Ok(Self {
            dir: dir.to_path_buf(),
            tag,
            written: Vec::new(),
        })
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    /// `<stem>_<tag>.csv`, or `<stem>_<tag>_<part>.csv` for a named part.
    pub fn csv_path(&self, stem: &str, part: Option<&str>) -> PathBuf {
        let name = match part {
            Some(part) => format!("{stem}_{}_{part}.csv", self.tag),
            None => format!("{stem}_{}.csv", self.tag),
        };
        self.dir.join(name)
    }

    /// Writes a header and rows as CSV.
    pub fn write_csv<R, I>(&mut self, stem: &str, part: Option<&str>, header: &[&str], rows: I) -> io::Result<PathBuf>
    where
        I: IntoIterator<Item = R>,
        R: IntoIterator,
        R::Item: AsRef<[u8]>,
    {
        let path = self.csv_path(stem, part);
        let mut writer = csv::Writer::from_path(&path).map_err(into_io)?;
        writer.write_record(header).map_err(into_io)?;
        for row in rows {
            writer.write_record(row).map_err(into_io)?;
        }
        writer.flush()?;
        self.written.push(path.clone());
        Ok(path)
    }

    /// `run_meta_<tag>`: every setting, build id, wall time, and any extra
    /// experiment-specific entries.
    pub fn write_meta(
        &mut self,
        cfg: &ExperimentConfig,
        wall_time_sec: f64,
        extra: &[(String, String)],
    ) -> io::Result<PathBuf> {
        let path = self.dir.join(format!("run_meta_{}", self.tag));
        let mut f = File::create(&path)?;
        for (k, v) in cfg.describe() {
            writeln!(f, "{k} = {v}")?;
        }
        writeln!(f, "build = {} {}", env!("CARGO_PKG_VERSION"), BUILD_ID)?;
        writeln!(f, "wall_time_sec = {wall_time_sec}")?;
        for (k, v) in extra {
            writeln!(f, "{k} = {v}")?;
        }
        self.written.push(path.clone());
        Ok(path)
    }
}

fn into_io(e: csv::Error) -> io::Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => e,
        other => io::Error::other(format!("{other:?}")),
    }
}

/// Shortest round-trip formatting for floats in CSV cells.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:e}")
}
