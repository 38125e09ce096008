//! Graph bundles and run manifests.
//!
//! A bundle is a directory holding the normalized input tables
//! (`entities.csv`, `relationships.csv`, `indicators.csv`, `legalforms.csv`,
//! `citylinks.csv`) and a `manifest.json` with their SHA-256 digests. Rows
//! are written in LEI / key order, so the same accepted records always give
//! byte-identical files.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ingest::{
    read_inputs, write_entities, write_indicators, write_legal_forms, write_relationships,
    BuildReport, FileErrors, IngestError, InputPaths,
};
use crate::linking::{write_city_links, CityLink, CityLinks};
use crate::model::{CompanyRecord, EdgeKind, GraphStore, RelationshipEdge};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const ENTITIES_FILE: &str = "entities.csv";
pub const RELATIONSHIPS_FILE: &str = "relationships.csv";
pub const INDICATORS_FILE: &str = "indicators.csv";
pub const LEGAL_FORMS_FILE: &str = "legalforms.csv";
pub const CITY_LINKS_FILE: &str = "citylinks.csv";

pub const TOOL: &str = "taxgraph";

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: invalid manifest: {source}")]
    Manifest {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: digest mismatch, expected {expected}, found {found}")]
    DigestMismatch {
        path: PathBuf,
        expected: String,
        found: String,
    },
    #[error("{0}: not listed in the bundle manifest")]
    Unlisted(PathBuf),
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BundleError + '_ {
    move |source| BundleError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn sha256_file(path: &Path) -> Result<String, BundleError> {
    let mut f = File::open(path).map_err(io_err(path))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(io_err(path))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path, recorded_as: &str) -> Result<Self, BundleError> {
        Ok(FileDigest {
            path: recorded_as.to_string(),
            sha256: sha256_file(path)?,
        })
    }
}

/// Provenance of one command run. Output paths are relative to the
/// manifest's directory; input paths are recorded as given.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub parameters: BTreeMap<String, String>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        RunManifest {
            tool: TOOL.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            parameters: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn param(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.parameters.insert(key.to_string(), value.to_string());
        self
    }

    pub fn add_input(&mut self, path: &Path) -> Result<&mut Self, BundleError> {
        let shown = path.to_string_lossy().into_owned();
        self.inputs.push(FileDigest::of(path, &shown)?);
        Ok(self)
    }

    /// Records `path` relative to `base` (the manifest's directory).
    pub fn add_output(&mut self, base: &Path, path: &Path) -> Result<&mut Self, BundleError> {
        let rel = path.strip_prefix(base).unwrap_or(path);
        self.outputs
            .push(FileDigest::of(path, &rel.to_string_lossy())?);
        Ok(self)
    }

    pub fn write(&self, path: &Path) -> Result<(), BundleError> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        fs::write(path, text).map_err(io_err(path))
    }

    pub fn read(path: &Path) -> Result<Self, BundleError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|source| BundleError::Manifest {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Recomputes every output digest relative to `base`.
    pub fn verify_outputs(&self, base: &Path) -> Result<(), BundleError> {
        for out in &self.outputs {
            let path = base.join(&out.path);
            let found = sha256_file(&path)?;
            if found != out.sha256 {
                return Err(BundleError::DigestMismatch {
                    path,
                    expected: out.sha256.clone(),
                    found,
                });
            }
        }
        Ok(())
    }
}

/// Manifest path written next to a single output file.
pub fn manifest_path_for(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    output.with_file_name(name)
}

pub fn company_record(c: &crate::model::Company) -> CompanyRecord {
    CompanyRecord {
        lei: c.lei,
        legal_name: c.legal_name.clone(),
        legal: c.legal.clone(),
        hq: c.hq.clone(),
        legal_form: c.legal_form.clone(),
    }
}

pub fn city_links_of(store: &GraphStore) -> CityLinks {
    let mut links = CityLinks::default();
    for c in store.companies() {
        links.insert(
            c.lei,
            CityLink {
                hq: c.hq_city_link.clone(),
                legal: c.legal_city_link.clone(),
            },
        );
    }
    links
}

fn create(path: &Path) -> Result<BufWriter<File>, BundleError> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

/// Writes the store's tables into `dir` and returns their digests, in file
/// name order. Stub companies are implied by the edges and not written.
pub fn write_tables(
    dir: &Path,
    store: &GraphStore,
    links: &CityLinks,
) -> Result<Vec<PathBuf>, BundleError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let records: Vec<CompanyRecord> = store
        .companies()
        .iter()
        .filter(|c| !c.stub)
        .map(company_record)
        .collect();
    let mut edges: Vec<RelationshipEdge> = Vec::new();
    for kind in EdgeKind::ALL {
        edges.extend(store.edges(kind).map(|(c, p)| RelationshipEdge {
            child: store.lei(c),
            parent: store.lei(p),
            kind,
        }));
    }
    let paths: Vec<PathBuf> = [
        CITY_LINKS_FILE,
        ENTITIES_FILE,
        INDICATORS_FILE,
        LEGAL_FORMS_FILE,
        RELATIONSHIPS_FILE,
    ]
    .iter()
    .map(|f| dir.join(f))
    .collect();
    let wrap = |p: &Path| {
        let p = p.to_path_buf();
        move |e: IngestError| BundleError::Ingest(e.in_file(&p))
    };
    write_city_links(create(&paths[0])?, links).map_err(wrap(&paths[0]))?;
    write_entities(create(&paths[1])?, &records).map_err(wrap(&paths[1]))?;
    write_indicators(create(&paths[2])?, store.indicators()).map_err(wrap(&paths[2]))?;
    write_legal_forms(create(&paths[3])?, store.legal_forms()).map_err(wrap(&paths[3]))?;
    write_relationships(create(&paths[4])?, &edges).map_err(wrap(&paths[4]))?;
    Ok(paths)
}

/// Writes a complete bundle with `manifest` (inputs and parameters already
/// filled in) completed by the table digests.
pub fn save_bundle(
    dir: &Path,
    store: &GraphStore,
    links: &CityLinks,
    mut manifest: RunManifest,
) -> Result<RunManifest, BundleError> {
    let paths = write_tables(dir, store, links)?;
    manifest.outputs.clear();
    for p in &paths {
        manifest.add_output(dir, p)?;
    }
    manifest.write(&dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

#[derive(Debug)]
pub struct LoadedBundle {
    pub store: GraphStore,
    pub report: BuildReport,
    pub manifest: RunManifest,
    pub row_errors: Vec<FileErrors>,
}

/// Loads a bundle after checking every table against the manifest.
pub fn load_bundle(dir: &Path) -> Result<LoadedBundle, BundleError> {
    let manifest = RunManifest::read(&dir.join(MANIFEST_FILE))?;
    manifest.verify_outputs(dir)?;
    let listed = |name: &str| manifest.outputs.iter().any(|o| o.path == name);
    for required in [
        ENTITIES_FILE,
        RELATIONSHIPS_FILE,
        INDICATORS_FILE,
        LEGAL_FORMS_FILE,
    ] {
        if !listed(required) {
            return Err(BundleError::Unlisted(dir.join(required)));
        }
    }
    let paths = InputPaths {
        entities: dir.join(ENTITIES_FILE),
        relationships: dir.join(RELATIONSHIPS_FILE),
        indicators: dir.join(INDICATORS_FILE),
        legal_forms: dir.join(LEGAL_FORMS_FILE),
        city_links: listed(CITY_LINKS_FILE).then(|| dir.join(CITY_LINKS_FILE)),
    };
    let (store, report, row_errors) = read_inputs(&paths)?.build();
    Ok(LoadedBundle {
        store,
        report,
        manifest,
        row_errors,
    })
}

/// Writes `table` as CSV, buffered.
pub fn write_table(path: &Path, table: &crate::table::Table) -> Result<(), BundleError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let mut w = create(path)?;
    table
        .write_csv(&mut w)
        .map_err(|e| BundleError::Ingest(IngestError::from(e).in_file(path)))?;
    w.flush().map_err(io_err(path))
}
