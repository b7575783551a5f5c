//! Checksum-verified download of public raw datasets listed in a manifest.

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::raw_io::RawIoError;

/// One manifest row.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub url: String,
    /// Destination path relative to the download root.
    pub path: String,
    /// Lower-case hex SHA-256 of the file contents.
    pub sha256: String,
    pub size: u64,
    #[serde(default)]
    pub split: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    /// Parse CSV with header `url,path,sha256,size,split`.
    pub fn from_csv(text: &str) -> Result<Self, RawIoError> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let entries = rdr
            .deserialize()
            .collect::<Result<Vec<ManifestEntry>, _>>()
            .map_err(|e| RawIoError::Manifest(e.to_string()))?;
        for e in &entries {
            let rel = Path::new(&e.path);
            if rel.is_absolute() || rel.components().any(|c| matches!(c, Component::ParentDir)) {
                return Err(RawIoError::Manifest(format!("unsafe path {:?}", e.path)));
            }
            if e.sha256.len() != 64 || hex::decode(&e.sha256).is_err() {
                return Err(RawIoError::Manifest(format!("bad sha256 for {:?}", e.path)));
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self, RawIoError> {
        let text = fs::read_to_string(path).map_err(|e| RawIoError::io(path, e))?;
        Self::from_csv(&text)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for e in &self.entries {
            w.serialize(e).expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf8")
    }

    pub fn split<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a ManifestEntry> + 'a {
        self.entries.iter().filter(move |e| e.split == name)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FetchFailure {
    pub path: String,
    pub reason: String,
    pub hint: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FetchReport {
    /// Files downloaded and verified in this run.
    pub downloaded: Vec<String>,
    /// Files already present with a matching checksum.
    pub verified_existing: Vec<String>,
    /// Downloads whose content did not match the manifest checksum or size.
    pub rejected: Vec<FetchFailure>,
    /// Transfers that failed before a checksum could be computed.
    pub failed: Vec<FetchFailure>,
}

impl FetchReport {
    pub fn is_complete(&self) -> bool {
        self.rejected.is_empty() && self.failed.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("path,status,detail\n");
        for p in &self.downloaded {
            out.push_str(&format!("{p},downloaded,\n"));
        }
        for p in &self.verified_existing {
            out.push_str(&format!("{p},present,\n"));
        }
        for f in &self.rejected {
            out.push_str(&format!("{},rejected,\"{}\"\n", f.path, f.reason.replace('"', "'")));
        }
        for f in &self.failed {
            out.push_str(&format!(
                "{},failed,\"{} ({})\"\n",
                f.path,
                f.reason.replace('"', "'"),
                f.hint
            ));
        }
        out
    }
}

fn sha256_file(path: &Path) -> io::Result<(String, u64)> {
    let mut f = fs::File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut total = 0u64;
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        total += n as u64;
        h.update(&buf[..n]);
    }
    Ok((hex::encode(h.finalize()), total))
}

fn is_valid(path: &Path, entry: &ManifestEntry) -> bool {
    matches!(sha256_file(path), Ok((sum, size)) if sum == entry.sha256.to_ascii_lowercase() && size == entry.size)
}

enum Transfer {
    Done { sha256: String, size: u64 },
    Failed(String),
}

fn download(url: &str, tmp: &Path) -> Transfer {
    let resp = match ureq::get(url).call() {
        Ok(r) => r,
        Err(e) => return Transfer::Failed(e.to_string()),
    };
    let mut reader = resp.into_body().into_reader();
    let mut file = match fs::File::create(tmp) {
        Ok(f) => f,
        Err(e) => return Transfer::Failed(e.to_string()),
    };
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut total = 0u64;
    loop {
        let n = match reader.read(&mut buf) {
            Ok(0) => break,
            Ok(n) => n,
            Err(e) => return Transfer::Failed(e.to_string()),
        };
        h.update(&buf[..n]);
        total += n as u64;
        if let Err(e) = file.write_all(&buf[..n]) {
            return Transfer::Failed(e.to_string());
        }
    }
    Transfer::Done {
        sha256: hex::encode(h.finalize()),
        size: total,
    }
}

/// Download every manifest entry into `destination`, skipping files that
/// already verify. Mismatching downloads are deleted and reported.
pub fn fetch_dataset(manifest: &DatasetManifest, destination: &Path) -> Result<FetchReport, RawIoError> {
    fs::create_dir_all(destination).map_err(|e| RawIoError::io(destination, e))?;
    let mut report = FetchReport::default();
    for entry in &manifest.entries {
        let target: PathBuf = destination.join(&entry.path);
        if target.exists() && is_valid(&target, entry) {
            report.verified_existing.push(entry.path.clone());
            continue;
        }
        if let Some(parent) = target.parent() {
            fs::create_dir_all(parent).map_err(|e| RawIoError::io(parent, e))?;
        }
        let tmp = target.with_extension("part");
        match download(&entry.url, &tmp) {
            Transfer::Done { sha256, size } => {
                if sha256 == entry.sha256.to_ascii_lowercase() && size == entry.size {
                    fs::rename(&tmp, &target).map_err(|e| RawIoError::io(&target, e))?;
                    report.downloaded.push(entry.path.clone());
                } else {
                    let _ = fs::remove_file(&tmp);
                    report.rejected.push(FetchFailure {
                        path: entry.path.clone(),
                        reason: format!(
                            "checksum mismatch: got {sha256} ({size} bytes), expected {} ({} bytes)",
                            entry.sha256, entry.size
                        ),
                        hint: "the source changed or the manifest is stale".into(),
                    });
                }
            }
            Transfer::Failed(reason) => {
                let _ = fs::remove_file(&tmp);
                report.failed.push(FetchFailure {
                    path: entry.path.clone(),
                    reason,
                    hint: "network failure; rerun to resume, verified files are skipped".into(),
                });
            }
        }
    }
    Ok(report)
}

/// Compute the manifest row fields of a local file.
pub fn describe_file(path: &Path) -> Result<(String, u64), RawIoError> {
    sha256_file(path).map_err(|e| RawIoError::io(path, e))
}
