//! Routing table of the cascade: (viewpoint, AU) → checkpoint file,
//! persisted as a manifest with content hashes so routing is bit-exact.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::detectors::AuCode;
use crate::error::{Error, Result};
use crate::net::{load_network_bytes, Network};
use crate::TrainScalar;

use super::Viewpoint;

fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    format!("{:x}", h.finalize())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexEntry {
    pub path: PathBuf,
    pub sha256: String,
}

/// Map from (viewpoint, AU) to checkpoint reference. The cascade may
/// only start once the index is complete for its view/AU grid.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EnsembleIndex {
    entries: BTreeMap<(Viewpoint, AuCode), IndexEntry>,
}

impl EnsembleIndex {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a checkpoint file, recording its content hash.
    pub fn register(&mut self, view: Viewpoint, au: AuCode, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path).map_err(|e| Error::Checkpoint {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        self.entries.insert(
            (view, au),
            IndexEntry {
                path: path.to_path_buf(),
                sha256: sha256_hex(&bytes),
            },
        );
        Ok(())
    }

    pub fn entry(&self, view: Viewpoint, au: AuCode) -> Option<&IndexEntry> {
        self.entries.get(&(view, au))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Errors on the first hole in the views × aus grid, naming it.
    pub fn validate_complete(&self, views: &[Viewpoint], aus: &[AuCode]) -> Result<()> {
        for &view in views {
            for &au in aus {
                if !self.entries.contains_key(&(view, au)) {
                    return Err(Error::MissingCheckpoint {
                        view: view.as_str().to_string(),
                        au: au.value(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Loads the detectors of one view, verifying each file still has
    /// the hash recorded at registration.
    pub fn route(
        &self,
        view: Viewpoint,
        aus: &[AuCode],
    ) -> Result<BTreeMap<AuCode, Network<TrainScalar>>> {
        let mut nets = BTreeMap::new();
        for &au in aus {
            let entry = self
                .entry(view, au)
                .ok_or_else(|| Error::MissingCheckpoint {
                    view: view.as_str().to_string(),
                    au: au.value(),
                })?;
            let bytes = std::fs::read(&entry.path).map_err(|e| Error::Checkpoint {
                path: entry.path.clone(),
                reason: e.to_string(),
            })?;
            if sha256_hex(&bytes) != entry.sha256 {
                return Err(Error::Checkpoint {
                    path: entry.path.clone(),
                    reason: "content hash does not match the index".into(),
                });
            }
            let (net, _meta) = load_network_bytes(&bytes).map_err(|e| Error::Checkpoint {
                path: entry.path.clone(),
                reason: e.to_string(),
            })?;
            nets.insert(au, net);
        }
        Ok(nets)
    }

    /// Writes the manifest: one line per entry, columns view, au, path,
    /// sha256.
    pub fn write_manifest(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut w = csv::Writer::from_path(path)
            .map_err(|e| Error::data(format!("writing {}: {}", path.display(), e)))?;
        w.write_record(["view", "au", "path", "sha256"])
            .map_err(|e| Error::data(e.to_string()))?;
        for ((view, au), entry) in &self.entries {
            w.write_record([
                view.as_str(),
                &au.label(),
                &entry.path.display().to_string(),
                &entry.sha256,
            ])
            .map_err(|e| Error::data(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a manifest back; AU labels are resolved against `set`.
    pub fn read_manifest(path: &Path, set: crate::detectors::AuSet) -> Result<EnsembleIndex> {
        let mut r = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| Error::data(format!("reading {}: {}", path.display(), e)))?;
        let headers = r
            .headers()
            .map_err(|e| Error::data(e.to_string()))?
            .clone();
        let expect = ["view", "au", "path", "sha256"];
        if headers.iter().collect::<Vec<_>>() != expect {
            return Err(Error::data(format!(
                "manifest {} must have columns {:?}, found {:?}",
                path.display(),
                expect,
                headers
            )));
        }
        let mut index = EnsembleIndex::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| Error::data(format!("{}: {}", path.display(), e)))?;
            let line = rec
                .position()
                .map(|p| p.line().to_string())
                .unwrap_or_default();
            let at = |i: usize| -> Result<&str> {
                rec.get(i).ok_or_else(|| {
                    Error::data(format!("{}:{}: short record", path.display(), line))
                })
            };
            let view = Viewpoint::parse(at(0)?)?;
            let au = AuCode::parse(at(1)?, set)?;
            index.entries.insert(
                (view, au),
                IndexEntry {
                    path: PathBuf::from(at(2)?),
                    sha256: at(3)?.to_string(),
                },
            );
        }
        Ok(index)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detectors::AuSet;
    use crate::net::{save_network, CheckpointMeta, FusionMode, Profile};
    use crate::tensor::Tensor;

    fn toy_profile() -> Profile {
        let mut p = Profile::tiny(2);
        p.input_side = 16;
        p.conv_blocks = vec![vec![4]];
        p.hidden_fcs = vec![8];
        p
    }

    fn au(c: u8) -> AuCode {
        AuCode::new(c, AuSet::Fera).unwrap()
    }

    fn save_toy(dir: &Path, name: &str, seed: u64) -> (PathBuf, Network<TrainScalar>) {
        let net = Network::for_fusion(&toy_profile(), FusionMode::RgbOnly, seed).unwrap();
        let meta = CheckpointMeta {
            profile: "tiny".into(),
            fusion: FusionMode::RgbOnly,
            seed,
        };
        let path = dir.join(name);
        save_network(&path, &net, &meta).unwrap();
        (path, net)
    }

    #[test]
    fn manifest_round_trip_preserves_entries() {
        let dir = tempfile::tempdir().unwrap();
        let (p1, _) = save_toy(dir.path(), "v5_au1.aunc", 1);
        let (p2, _) = save_toy(dir.path(), "v5_au12.aunc", 2);
        let mut index = EnsembleIndex::new();
        index.register(Viewpoint::frontal(), au(1), &p1).unwrap();
        index.register(Viewpoint::frontal(), au(12), &p2).unwrap();
        assert_eq!(index.len(), 2);

        let manifest = dir.path().join("index.csv");
        index.write_manifest(&manifest).unwrap();
        let back = EnsembleIndex::read_manifest(&manifest, AuSet::Fera).unwrap();
        assert_eq!(back, index);
    }

    #[test]
    fn missing_entry_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let (p1, _) = save_toy(dir.path(), "a.aunc", 1);
        let mut index = EnsembleIndex::new();
        for v in Viewpoint::all() {
            for &c in AuSet::Fera.codes() {
                if v.as_str() == "V9" && c == 23 {
                    continue;
                }
                index.register(v, au(c), &p1).unwrap();
            }
        }
        let views: Vec<_> = Viewpoint::all().collect();
        let aus: Vec<_> = AuSet::Fera.codes().iter().map(|&c| au(c)).collect();
        let err = index.validate_complete(&views, &aus).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("V9") && msg.contains("AU23"), "{}", msg);

        index.register(Viewpoint::new(9).unwrap(), au(23), &p1).unwrap();
        assert!(index.validate_complete(&views, &aus).is_ok());
        assert_eq!(index.len(), 90);
    }

    #[test]
    fn route_loads_bit_exactly_and_detects_tampering() {
        let dir = tempfile::tempdir().unwrap();
        let (p1, orig) = save_toy(dir.path(), "v2_au6.aunc", 7);
        let mut index = EnsembleIndex::new();
        let v2 = Viewpoint::new(2).unwrap();
        index.register(v2, au(6), &p1).unwrap();

        let probe = Tensor::full([3, 16, 16], 0.42f32);
        let input = crate::net::NetInput::Single(probe);
        let first = index.route(v2, &[au(6)]).unwrap();
        let second = index.route(v2, &[au(6)]).unwrap();
        let y0 = orig.forward(&input).unwrap();
        assert_eq!(first[&au(6)].forward(&input).unwrap().data(), y0.data());
        assert_eq!(second[&au(6)].forward(&input).unwrap().data(), y0.data());

        // Routing a view/AU hole names it.
        let err = index.route(v2, &[au(6), au(10)]).unwrap_err();
        assert!(err.to_string().contains("AU10"));

        // Flip one payload byte: the hash check must catch it.
        let mut bytes = std::fs::read(&p1).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0x01;
        std::fs::write(&p1, &bytes).unwrap();
        let err = index.route(v2, &[au(6)]).unwrap_err();
        assert!(err.to_string().contains("hash"), "{}", err);
    }

    #[test]
    fn registering_a_missing_file_fails() {
        let mut index = EnsembleIndex::new();
        assert!(index
            .register(Viewpoint::frontal(), au(1), Path::new("/nonexistent.aunc"))
            .is_err());
    }
}
