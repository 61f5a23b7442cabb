//! Artifact emission: CSV and JSON result bodies with provenance comment
//! headers, and a per-run sidecar carrying the only timestamp.
//!
//! Result bodies are deterministic functions of (config, seed): floats are
//! written with Rust's shortest-roundtrip formatting and every file repeats
//! the canonical config hash, so reruns are byte-comparable and artifacts
//! from different configs are distinguishable at a glance.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nelab::{Error, Result};

/// Sink for one run's artifacts.
pub struct Emitter {
    pub dir: PathBuf,
    pub config_hash: String,
    pub seed: u64,
    pub preset: String,
    files: std::cell::RefCell<Vec<String>>,
}

impl Emitter {
    pub fn new(dir: &Path, config_hash: &str, seed: u64, preset: &str) -> Result<Emitter> {
        std::fs::create_dir_all(dir)?;
        Ok(Emitter {
            dir: dir.to_path_buf(),
            config_hash: config_hash.to_string(),
            seed,
            preset: preset.to_string(),
            files: std::cell::RefCell::new(Vec::new()),
        })
    }

    fn provenance(&self) -> String {
        format!(
            "# config_hash={}\n# seed={}\n# preset={}\n",
            self.config_hash, self.seed, self.preset
        )
    }

    /// Write a CSV body: provenance comments, a header row, then rows of
    /// already-formatted cells.
    pub fn csv(&self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<PathBuf> {
        let mut body = self.provenance();
        let _ = writeln!(body, "{}", header.join(","));
        for row in rows {
            if row.len() != header.len() {
                return Err(Error::Config(format!(
                    "csv {name}: row width {} vs header {}",
                    row.len(),
                    header.len()
                )));
            }
            let _ = writeln!(body, "{}", row.join(","));
        }
        self.write(name, body.as_bytes())
    }

    /// Write a JSON report; the config hash and seed are injected at the top
    /// level so every report is self-identifying.
    pub fn json(&self, name: &str, mut value: serde_json::Value) -> Result<PathBuf> {
        if let Some(map) = value.as_object_mut() {
            map.insert("config_hash".into(), self.config_hash.clone().into());
            map.insert("seed".into(), self.seed.into());
            map.insert("preset".into(), self.preset.clone().into());
        }
        let mut body = serde_json::to_string_pretty(&value)
            .map_err(|e| Error::Config(format!("json encode {name}: {e}")))?;
        body.push('\n');
        self.write(name, body.as_bytes())
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes)?;
        self.files.borrow_mut().push(name.to_string());
        Ok(path)
    }

    /// Record a file emitted through another channel (binary containers).
    pub fn note_file(&self, name: &str) {
        self.files.borrow_mut().push(name.to_string());
    }

    pub fn container_path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// The sidecar: command, emitted files, and the run's wall-clock stamp.
    /// This is the only artifact carrying a timestamp, so result bodies stay
    /// byte-identical across reruns.
    pub fn sidecar(&self, command: &str) -> Result<PathBuf> {
        let stamp = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let value = serde_json::json!({
            "command": command,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "preset": self.preset,
            "version": env!("CARGO_PKG_VERSION"),
            "unix_time": stamp,
            "files": *self.files.borrow(),
        });
        let mut body = serde_json::to_string_pretty(&value)
            .map_err(|e| Error::Config(format!("sidecar encode: {e}")))?;
        body.push('\n');
        let path = self.dir.join("meta.json");
        std::fs::write(&path, body.as_bytes())?;
        Ok(path)
    }
}

/// Shortest-roundtrip float cell.
pub fn cell(v: f64) -> String {
    format!("{v}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_bodies_carry_provenance_and_exact_floats() {
        let dir = std::env::temp_dir().join(format!("nelab-emit-{}", std::process::id()));
        let em = Emitter::new(&dir, "abcd", 7, "tiny-chain").unwrap();
        let path = em
            .csv(
                "x.csv",
                &["a", "b"],
                &[vec![cell(0.1), cell(1.0 / 3.0)], vec![cell(-2.0), cell(f64::MIN_POSITIVE)]],
            )
            .unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# config_hash=abcd\n# seed=7\n# preset=tiny-chain\na,b\n"));
        assert!(text.contains("0.1,0.3333333333333333"));
        let back: f64 = text.lines().last().unwrap().split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(back, f64::MIN_POSITIVE);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn json_reports_are_self_identifying_and_sidecar_lists_files() {
        let dir = std::env::temp_dir().join(format!("nelab-emit2-{}", std::process::id()));
        let em = Emitter::new(&dir, "ffff", 3, "flat").unwrap();
        em.json("r.json", serde_json::json!({"x": 1})).unwrap();
        let meta = em.sidecar("spectrum").unwrap();
        let report: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.join("r.json")).unwrap()).unwrap();
        assert_eq!(report["config_hash"], "ffff");
        assert_eq!(report["x"], 1);
        let side: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&meta).unwrap()).unwrap();
        assert_eq!(side["files"][0], "r.json");
        assert!(side["unix_time"].as_u64().unwrap() > 0);
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
