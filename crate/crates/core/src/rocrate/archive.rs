use std::collections::BTreeMap;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use thiserror::Error;
use zip::write::SimpleFileOptions;
use zip::{CompressionMethod, DateTime, ZipArchive, ZipWriter};

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("zip: {0}")]
    Zip(#[from] zip::result::ZipError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("unsafe member path {0:?}")]
    UnsafePath(String),
    #[error("duplicate member {0:?}")]
    Duplicate(String),
}

/// Relative, forward-slash, no `.`/`..` components, no empty segments.
pub fn is_safe_member_path(path: &str) -> bool {
    !path.is_empty()
        && !path.starts_with('/')
        && !path.contains('\\')
        && path
            .split('/')
            .all(|seg| !seg.is_empty() && seg != "." && seg != "..")
}

/// An in-memory crate: member path to bytes, kept sorted.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CrateArchive {
    members: BTreeMap<String, Vec<u8>>,
}

impl CrateArchive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, path: impl Into<String>, bytes: Vec<u8>) -> Result<(), ArchiveError> {
        let path = path.into();
        if !is_safe_member_path(&path) {
            return Err(ArchiveError::UnsafePath(path));
        }
        if self.members.contains_key(&path) {
            return Err(ArchiveError::Duplicate(path));
        }
        self.members.insert(path, bytes);
        Ok(())
    }

    pub fn get(&self, path: &str) -> Option<&[u8]> {
        self.members.get(path).map(Vec::as_slice)
    }

    pub fn get_mut(&mut self, path: &str) -> Option<&mut Vec<u8>> {
        self.members.get_mut(path)
    }

    pub fn remove(&mut self, path: &str) -> Option<Vec<u8>> {
        self.members.remove(path)
    }

    pub fn contains(&self, path: &str) -> bool {
        self.members.contains_key(path)
    }

    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.members.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Sorted members, deflated, fixed 1980-01-01 timestamps and 0644 modes,
    /// so equal contents always give equal bytes.
    pub fn to_zip_bytes(&self) -> Result<Vec<u8>, ArchiveError> {
        let options = SimpleFileOptions::default()
            .compression_method(CompressionMethod::Deflated)
            .last_modified_time(DateTime::default())
            .unix_permissions(0o644);
        let mut writer = ZipWriter::new(Cursor::new(Vec::new()));
        for (path, bytes) in &self.members {
            writer.start_file(path.as_str(), options)?;
            writer.write_all(bytes)?;
        }
        Ok(writer.finish()?.into_inner())
    }

    pub fn from_zip_bytes(bytes: &[u8]) -> Result<Self, ArchiveError> {
        let mut zip = ZipArchive::new(Cursor::new(bytes))?;
        let mut archive = CrateArchive::new();
        for i in 0..zip.len() {
            let mut file = zip.by_index(i)?;
            if file.is_dir() {
                continue;
            }
            let name = file.name().to_owned();
            let mut buf = Vec::with_capacity(file.size() as usize);
            file.read_to_end(&mut buf)?;
            archive.insert(name, buf)?;
        }
        Ok(archive)
    }

    pub fn write_to(&self, path: &Path) -> Result<(), ArchiveError> {
        std::fs::write(path, self.to_zip_bytes()?)?;
        Ok(())
    }

    pub fn read_from(path: &Path) -> Result<Self, ArchiveError> {
        Self::from_zip_bytes(&std::fs::read(path)?)
    }
}
