//! Loading a train from a directory or a tar archive.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use globset::{Glob, GlobMatcher};
use pasta_core::model::{BundleFile, ModelError, TrainBundle, TrainMetadata};
use pasta_core::supply_chain::{BUILD_FILES, MANIFEST_FILE};
use thiserror::Error;
use walkdir::WalkDir;

pub const DESCRIPTORS: [&str; 2] = ["train.toml", "train.json"];

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("{0}: not a train (no source files)")]
    NotATrain(String),
    #[error("{0}: both train.toml and train.json are present")]
    DuplicateDescriptor(String),
    #[error("invalid train descriptor {path}: {message}")]
    BadDescriptor { path: String, message: String },
    #[error("invalid source glob: {0}")]
    BadGlob(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
}

/// Metadata values that override (or stand in for) the descriptor.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MetadataOverrides {
    pub name: Option<String>,
    pub version: Option<String>,
    pub creator: Option<String>,
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub source_glob: String,
    pub metadata: MetadataOverrides,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            source_glob: crate::config::DEFAULT_SOURCE_GLOB.to_string(),
            metadata: MetadataOverrides::default(),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> BundleError + '_ {
    move |source| BundleError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn is_archive(path: &Path) -> bool {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().to_ascii_lowercase())
        .unwrap_or_default();
    name.ends_with(".tar") || name.ends_with(".tar.gz") || name.ends_with(".tgz")
}

fn unpack(archive: &Path, dest: &Path) -> Result<(), BundleError> {
    let file = fs::File::open(archive).map_err(io_err(archive))?;
    let name = archive.to_string_lossy().to_ascii_lowercase();
    let reader: Box<dyn io::Read> = if name.ends_with(".tar") {
        Box::new(file)
    } else {
        Box::new(flate2::read::GzDecoder::new(file))
    };
    let mut tar = tar::Archive::new(reader);
    for entry in tar.entries().map_err(io_err(archive))? {
        let mut entry = entry.map_err(io_err(archive))?;
        // `unpack_in` refuses paths escaping `dest`.
        entry.unpack_in(dest).map_err(io_err(archive))?;
    }
    Ok(())
}

/// An archive holding a single top-level directory is treated as that
/// directory.
fn single_child_dir(dir: &Path) -> io::Result<PathBuf> {
    let entries: Vec<_> = fs::read_dir(dir)?.collect::<Result<_, _>>()?;
    match entries.as_slice() {
        [only] if only.file_type()?.is_dir() => Ok(only.path()),
        _ => Ok(dir.to_path_buf()),
    }
}

fn read_descriptor(root: &Path) -> Result<Option<TrainMetadata>, BundleError> {
    let present: Vec<&str> = DESCRIPTORS
        .iter()
        .copied()
        .filter(|d| root.join(d).is_file())
        .collect();
    let bad = |path: &Path, message: String| BundleError::BadDescriptor {
        path: path.display().to_string(),
        message,
    };
    match present.as_slice() {
        [] => Ok(None),
        [one] => {
            let path = root.join(one);
            let text = fs::read_to_string(&path).map_err(io_err(&path))?;
            let meta: TrainMetadata = if one.ends_with(".toml") {
                toml::from_str(&text).map_err(|e| bad(&path, e.to_string()))?
            } else {
                serde_json::from_str(&text).map_err(|e| bad(&path, e.to_string()))?
            };
            Ok(Some(meta))
        }
        _ => Err(BundleError::DuplicateDescriptor(root.display().to_string())),
    }
}

fn collect(
    root: &Path,
    glob: &GlobMatcher,
    origin: &Path,
    opts: &LoadOptions,
) -> Result<TrainBundle, BundleError> {
    let descriptor = read_descriptor(root)?;
    let mut sources = Vec::new();
    let mut resources = Vec::new();
    let mut manifest = None;
    let mut build = None;
    let walker = WalkDir::new(root)
        .sort_by_file_name()
        .into_iter()
        .filter_entry(|e| e.depth() == 0 || !(e.file_type().is_dir() && e.file_name() == ".git"));
    for entry in walker {
        let entry = entry.map_err(|e| BundleError::Io {
            path: root.display().to_string(),
            source: io::Error::other(e),
        })?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry
            .path()
            .strip_prefix(root)
            .expect("walk stays under root")
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/");
        if DESCRIPTORS.contains(&rel.as_str()) {
            continue;
        }
        let contents = fs::read(entry.path()).map_err(io_err(entry.path()))?;
        let file = BundleFile::new(rel.clone(), contents);
        if rel == MANIFEST_FILE {
            manifest = Some(file);
        } else if BUILD_FILES.contains(&rel.as_str()) && build.is_none() {
            build = Some(file);
        } else if glob.is_match(&rel) {
            sources.push(file);
        } else {
            resources.push(file);
        }
    }
    if sources.is_empty() {
        return Err(BundleError::NotATrain(origin.display().to_string()));
    }
    let fallback_name = origin
        .file_name()
        .map(|n| {
            let n = n.to_string_lossy();
            n.trim_end_matches(".tar.gz")
                .trim_end_matches(".tgz")
                .trim_end_matches(".tar")
                .to_string()
        })
        .unwrap_or_else(|| "train".to_string());
    let mut meta = descriptor.unwrap_or(TrainMetadata {
        name: fallback_name,
        version: "0".into(),
        creator: String::new(),
        commit_id: None,
    });
    let o = &opts.metadata;
    if let Some(v) = &o.name {
        meta.name = v.clone();
    }
    if let Some(v) = &o.version {
        meta.version = v.clone();
    }
    if let Some(v) = &o.creator {
        meta.creator = v.clone();
    }
    Ok(TrainBundle::new(
        origin, sources, manifest, build, resources, meta,
    )?)
}

/// Read a train from a directory or a `.tar`, `.tar.gz` or `.tgz` archive.
///
/// Files matching the source glob are sources; `requirements.txt` and a
/// `Dockerfile`/`Containerfile` at the root are the manifest and build file;
/// everything else is a resource.
pub fn load_bundle(path: &Path, opts: &LoadOptions) -> Result<TrainBundle, BundleError> {
    let glob = Glob::new(&opts.source_glob)
        .map_err(|e| BundleError::BadGlob(e.to_string()))?
        .compile_matcher();
    if path.is_file() && is_archive(path) {
        let tmp = tempfile::tempdir().map_err(io_err(path))?;
        unpack(path, tmp.path())?;
        let root = single_child_dir(tmp.path()).map_err(io_err(path))?;
        return collect(&root, &glob, path, opts);
    }
    if !path.is_dir() {
        return Err(BundleError::NotATrain(path.display().to_string()));
    }
    collect(path, &glob, path, opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(root: &Path, files: &[(&str, &str)]) {
        for (p, c) in files {
            let path = root.join(p);
            fs::create_dir_all(path.parent().unwrap()).unwrap();
            fs::write(path, c).unwrap();
        }
    }

    #[test]
    fn directory_with_all_parts() {
        let dir = tempfile::tempdir().unwrap();
        write(
            dir.path(),
            &[
                ("main.py", "print('hi')"),
                ("requirements.txt", "numpy==1.26.0"),
                ("Dockerfile", "FROM python:3.12-slim"),
                ("lib/util.py", "x = 1"),
                ("data/readme.md", "notes"),
                (
                    "train.toml",
                    "name = \"demo\"\nversion = \"2\"\ncreator = \"ann\"\n",
                ),
            ],
        );
        let b = load_bundle(dir.path(), &LoadOptions::default()).unwrap();
        let srcs: Vec<&str> = b.source_files().iter().map(|f| f.path.as_str()).collect();
        assert_eq!(srcs, ["lib/util.py", "main.py"]);
        assert_eq!(
            b.dependency_manifest.as_ref().unwrap().path,
            "requirements.txt"
        );
        assert_eq!(b.container_build_file.as_ref().unwrap().path, "Dockerfile");
        assert_eq!(b.resources().len(), 1);
        assert_eq!(
            (b.metadata.name.as_str(), b.metadata.version.as_str()),
            ("demo", "2")
        );
    }

    #[test]
    fn empty_directory_is_not_a_train() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_bundle(dir.path(), &LoadOptions::default()),
            Err(BundleError::NotATrain(_))
        ));
        write(dir.path(), &[("notes.txt", "x")]);
        assert!(matches!(
            load_bundle(dir.path(), &LoadOptions::default()),
            Err(BundleError::NotATrain(_))
        ));
    }

    #[test]
    fn duplicate_descriptor() {
        let dir = tempfile::tempdir().unwrap();
        write(
            dir.path(),
            &[
                ("main.py", ""),
                ("train.toml", "name='a'\nversion='1'"),
                ("train.json", "{}"),
            ],
        );
        assert!(matches!(
            load_bundle(dir.path(), &LoadOptions::default()),
            Err(BundleError::DuplicateDescriptor(_))
        ));
    }

    #[test]
    fn overrides_and_fallback_name() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("my-train");
        write(&root, &[("main.py", "")]);
        let b = load_bundle(&root, &LoadOptions::default()).unwrap();
        assert_eq!(b.metadata.name, "my-train");
        let opts = LoadOptions {
            metadata: MetadataOverrides {
                version: Some("9".into()),
                ..Default::default()
            },
            ..Default::default()
        };
        assert_eq!(load_bundle(&root, &opts).unwrap().metadata.version, "9");
    }

    #[test]
    fn custom_glob() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), &[("analysis.R", "x <- 1"), ("main.py", "")]);
        let opts = LoadOptions {
            source_glob: "**/*.R".into(),
            ..Default::default()
        };
        let b = load_bundle(dir.path(), &opts).unwrap();
        assert_eq!(b.source_files()[0].path, "analysis.R");
        assert_eq!(b.resources()[0].path, "main.py");
    }

    #[test]
    fn tar_gz_archive() {
        let dir = tempfile::tempdir().unwrap();
        let archive = dir.path().join("train.tar.gz");
        {
            let f = fs::File::create(&archive).unwrap();
            let gz = flate2::write::GzEncoder::new(f, flate2::Compression::default());
            let mut t = tar::Builder::new(gz);
            for (p, c) in [
                ("pkg/main.py", "print(1)\n"),
                ("pkg/Dockerfile", "FROM python:3.12-slim\n"),
            ] {
                let mut h = tar::Header::new_gnu();
                h.set_size(c.len() as u64);
                h.set_mode(0o644);
                h.set_cksum();
                t.append_data(&mut h, p, c.as_bytes()).unwrap();
            }
            t.into_inner().unwrap().finish().unwrap();
        }
        let b = load_bundle(&archive, &LoadOptions::default()).unwrap();
        assert_eq!(b.source_files()[0].path, "main.py");
        assert!(b.container_build_file.is_some());
        assert_eq!(b.metadata.name, "train");
    }
}
