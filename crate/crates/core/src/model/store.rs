use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::Deserialize;

use super::{ContentHash, EpisodeId, Image, ImageRef, ModelError, Termination, Trajectory};

/// Payloads keyed by content hash, as produced while running episodes.
#[derive(Debug, Clone, Default)]
pub struct ImageSet(BTreeMap<ContentHash, Image>);

impl ImageSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, image: Image) -> ImageRef {
        let r = *image.reference();
        self.0.entry(image.hash()).or_insert(image);
        r
    }

    pub fn get(&self, hash: &ContentHash) -> Option<&Image> {
        self.0.get(hash)
    }

    pub fn extend(&mut self, other: ImageSet) {
        for (k, v) in other.0 {
            self.0.entry(k).or_insert(v);
        }
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Content-addressed payload directory: `<root>/<first2hex>/<hash>`.
#[derive(Debug, Clone)]
pub struct BlobStore {
    root: PathBuf,
}

impl BlobStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn path_of(&self, hash: &ContentHash) -> PathBuf {
        let hex = hash.to_hex();
        self.root.join(&hex[..2]).join(hex)
    }

    pub fn contains(&self, hash: &ContentHash) -> bool {
        self.path_of(hash).is_file()
    }

    pub fn put(&self, image: &Image) -> Result<PathBuf, ModelError> {
        let path = self.path_of(&image.hash());
        if path.is_file() {
            return Ok(path);
        }
        let dir = path.parent().expect("blob path has a parent");
        fs::create_dir_all(dir)?;
        // write-then-rename keeps partially written blobs invisible
        let tmp = dir.join(format!(".{}.{}.tmp", image.hash().to_hex(), std::process::id()));
        fs::write(&tmp, image.bytes())?;
        fs::rename(&tmp, &path)?;
        Ok(path)
    }

    pub fn get(&self, r: &ImageRef) -> Result<Image, ModelError> {
        let path = self.path_of(&r.content_hash);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(ModelError::DanglingRef(r.content_hash))
            }
            Err(e) => return Err(e.into()),
        };
        let image = Image::with_kind(bytes, r.media_kind)?;
        if image.hash() != r.content_hash {
            return Err(ModelError::MalformedImage(format!(
                "blob {} does not match its address",
                r.content_hash
            )));
        }
        Ok(image)
    }
}

struct Index {
    offsets: HashMap<EpisodeId, u64>,
    order: Vec<EpisodeId>,
    file: File,
    end: u64,
}

/// Append-only line-delimited trajectory log with a sibling `blobs/`
/// directory.
///
/// Appends are serialized through an internal lock; reads only take the lock
/// long enough to look up an offset and then use their own file handle.
pub struct TrajectoryStore {
    log_path: PathBuf,
    blobs: BlobStore,
    index: Mutex<Index>,
}

#[derive(Deserialize)]
struct IdOnly {
    episode_id: EpisodeId,
}

impl TrajectoryStore {
    /// Opens (creating if needed) the log at `log_path`.
    pub fn open(log_path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let log_path = log_path.as_ref().to_path_buf();
        let dir = log_path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."))
            .to_path_buf();
        fs::create_dir_all(&dir)?;
        let file = OpenOptions::new()
            .create(true)
            .read(true)
            .append(true)
            .open(&log_path)?;
        let mut offsets = HashMap::new();
        let mut order = Vec::new();
        let mut reader = BufReader::new(File::open(&log_path)?);
        let mut offset = 0u64;
        let mut line = String::new();
        let mut lineno = 0;
        loop {
            line.clear();
            let n = reader.read_line(&mut line)?;
            if n == 0 {
                break;
            }
            lineno += 1;
            if !line.trim().is_empty() {
                let rec: IdOnly = serde_json::from_str(&line).map_err(|e| ModelError::Corrupt {
                    line: lineno,
                    reason: e.to_string(),
                })?;
                if offsets.insert(rec.episode_id.clone(), offset).is_some() {
                    return Err(ModelError::Corrupt {
                        line: lineno,
                        reason: format!("duplicate episode {}", rec.episode_id),
                    });
                }
                order.push(rec.episode_id);
            }
            offset += n as u64;
        }
        Ok(Self {
            blobs: BlobStore::new(dir.join("blobs")),
            log_path,
            index: Mutex::new(Index {
                offsets,
                order,
                file,
                end: offset,
            }),
        })
    }

    pub fn log_path(&self) -> &Path {
        &self.log_path
    }

    pub fn blobs(&self) -> &BlobStore {
        &self.blobs
    }

    pub fn len(&self) -> usize {
        self.index.lock().unwrap().order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, id: &EpisodeId) -> bool {
        self.index.lock().unwrap().offsets.contains_key(id)
    }

    /// Episode ids in append order.
    pub fn ids(&self) -> Vec<EpisodeId> {
        self.index.lock().unwrap().order.clone()
    }

    /// Persists a terminated trajectory and any payloads it references that
    /// the blob directory does not hold yet. Returns the record's byte offset.
    pub fn write(&self, trajectory: &Trajectory, images: &ImageSet) -> Result<u64, ModelError> {
        trajectory.validate()?;
        if trajectory.termination().is_none() {
            return Err(ModelError::Invalid(vec![super::Violation::new(
                "termination",
                "episode is not terminated",
            )]));
        }
        let mut line = serde_json::to_string(trajectory)?;
        line.push('\n');

        let mut index = self.index.lock().unwrap();
        if index.offsets.contains_key(trajectory.episode_id()) {
            return Err(ModelError::Conflict(trajectory.episode_id().clone()));
        }
        for r in trajectory.image_refs() {
            if self.blobs.contains(&r.content_hash) {
                continue;
            }
            match images.get(&r.content_hash) {
                Some(img) => {
                    self.blobs.put(img)?;
                }
                None => return Err(ModelError::DanglingRef(r.content_hash)),
            }
        }
        let offset = index.end;
        index.file.write_all(line.as_bytes())?;
        index.file.flush()?;
        index.end += line.len() as u64;
        index.offsets.insert(trajectory.episode_id().clone(), offset);
        index.order.push(trajectory.episode_id().clone());
        Ok(offset)
    }

    pub fn read(&self, id: &EpisodeId) -> Result<Trajectory, ModelError> {
        let offset = *self
            .index
            .lock()
            .unwrap()
            .offsets
            .get(id)
            .ok_or_else(|| ModelError::NotFound(id.clone()))?;
        let mut file = File::open(&self.log_path)?;
        file.seek(SeekFrom::Start(offset))?;
        let mut reader = BufReader::new(file);
        let mut line = String::new();
        reader.read_line(&mut line)?;
        let trajectory: Trajectory = serde_json::from_str(&line)?;
        trajectory.validate()?;
        for r in trajectory.image_refs() {
            if !self.blobs.contains(&r.content_hash) {
                return Err(ModelError::DanglingRef(r.content_hash));
            }
        }
        Ok(trajectory)
    }

    /// Loads the payload behind a reference.
    pub fn image(&self, r: &ImageRef) -> Result<Image, ModelError> {
        self.blobs.get(r)
    }

    pub fn read_all(&self) -> Result<Vec<Trajectory>, ModelError> {
        self.ids().iter().map(|id| self.read(id)).collect()
    }

    /// Ids of every stored episode with the given termination.
    pub fn ids_with(&self, termination: Termination) -> Result<Vec<EpisodeId>, ModelError> {
        Ok(self
            .read_all()?
            .into_iter()
            .filter(|t| t.termination() == Some(termination))
            .map(|t| t.episode_id().clone())
            .collect())
    }
}
