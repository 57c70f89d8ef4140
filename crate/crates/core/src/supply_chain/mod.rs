//! Dependency-manifest and container-image scanning.
//!
//! Image contents come from host-supplied package catalogs (one per base
//! image) instead of unpacking real image layers.

mod containerfile;
mod requirements;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Finding, Severity, StageId};
use crate::vuln_db::{parse_version, Advisory, AdvisoryDb, Version};

pub use containerfile::{
    parse_containerfile, pinned_installs, BaseImage, ImageSpec, InstalledPackage, Instruction,
    Keyword,
};
pub use requirements::{parse_requirements, Constraint, DependencyManifest, Requirement};

#[derive(Debug, Error, PartialEq)]
pub enum SupplyChainError {
    #[error("requirements line {line}: {reason}")]
    InvalidRequirementLine { line: usize, reason: String },
    #[error("container build file has no FROM instruction")]
    NoFromInstruction,
    #[error("invalid package catalog: {0}")]
    InvalidCatalog(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogPackage {
    pub ecosystem: String,
    pub name: String,
    pub version: Version,
}

/// SBOM-like inventory of the OS packages in one base image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackageCatalog {
    /// `name:tag` of the image this catalog describes.
    pub image: String,
    #[serde(default)]
    pub packages: Vec<CatalogPackage>,
}

impl PackageCatalog {
    pub fn from_toml(text: &str) -> Result<Self, SupplyChainError> {
        let catalog: PackageCatalog =
            toml::from_str(text).map_err(|e| SupplyChainError::InvalidCatalog(e.to_string()))?;
        let key = BaseImage::parse(&catalog.image).key();
        if catalog.image.trim().is_empty() || key != catalog.image {
            return Err(SupplyChainError::InvalidCatalog(format!(
                "image key `{}` must be written as name:tag",
                catalog.image
            )));
        }
        Ok(catalog)
    }
}

pub const MANIFEST_FILE: &str = "requirements.txt";
pub const BUILD_FILES: [&str; 2] = ["Dockerfile", "Containerfile"];

fn advisory_message(adv: &Advisory, package: &str, version: &str, context: &str) -> String {
    let fix = adv
        .fixed_in
        .as_ref()
        .map(|v| format!(" (fixed in {v})"))
        .unwrap_or_default();
    format!(
        "{package} {version}{context}: {}{fix} [CVSS {:.1}]",
        adv.summary, adv.cvss_score
    )
}

/// Match declared dependencies against the advisory database. Exact pins are
/// checked at their version, minimum constraints at their floor; unpinned
/// entries yield an informational finding.
pub fn scan_dependencies(
    manifest: &DependencyManifest,
    manifest_path: Option<&str>,
    db: &AdvisoryDb,
) -> Vec<Finding> {
    let mut out = Vec::new();
    for entry in &manifest.entries {
        let version = match &entry.constraint {
            Constraint::Exact(v) | Constraint::Minimum(v) => v,
            Constraint::Unconstrained => {
                let mut f = Finding::new(
                    StageId::DependencyScan,
                    "dep.unpinned",
                    Severity::Info,
                    format!("{} has no version constraint; not matched", entry.package),
                );
                f.file = manifest_path.map(str::to_string);
                out.push(f);
                continue;
            }
        };
        for adv in db.match_package("pypi", &entry.package, version) {
            let mut f = Finding::new(
                StageId::DependencyScan,
                adv.id.clone(),
                adv.severity(),
                advisory_message(adv, &entry.package, version.as_str(), ""),
            );
            f.file = manifest_path.map(str::to_string);
            out.push(f);
        }
    }
    out.sort_by(|a, b| {
        (a.rule_id.as_str(), a.message.as_str()).cmp(&(b.rule_id.as_str(), b.message.as_str()))
    });
    out
}

/// Audit the packaged image: base-image catalog packages and pinned RUN
/// installs against the database, plus configuration checks.
pub fn scan_image(
    spec: &ImageSpec,
    build_file_path: Option<&str>,
    catalogs: &[PackageCatalog],
    db: &AdvisoryDb,
) -> Vec<Finding> {
    let key = spec.base_image.key();
    let with_file = |mut f: Finding| {
        f.file = build_file_path.map(str::to_string);
        f
    };
    let mut vulns = Vec::new();
    let mut seen = BTreeSet::new();

    match catalogs.iter().find(|c| c.image == key) {
        Some(catalog) => {
            for pkg in &catalog.packages {
                for adv in db.match_package(&pkg.ecosystem, &pkg.name, &pkg.version) {
                    if seen.insert((adv.id.clone(), pkg.name.clone(), pkg.version.to_string())) {
                        vulns.push(with_file(Finding::new(
                            StageId::ImageAnalysis,
                            adv.id.clone(),
                            adv.severity(),
                            advisory_message(
                                adv,
                                &pkg.name,
                                pkg.version.as_str(),
                                &format!(" in {key}"),
                            ),
                        )));
                    }
                }
            }
        }
        None => vulns.push(with_file(Finding::new(
            StageId::ImageAnalysis,
            "image.catalog-missing",
            Severity::Info,
            format!("no package catalog covers base image {key}; OS packages not audited"),
        ))),
    }

    for pin in pinned_installs(spec) {
        let Ok(version) = parse_version(&pin.version) else {
            continue;
        };
        for adv in db.match_package(&pin.ecosystem, &pin.package, &version) {
            if seen.insert((adv.id.clone(), pin.package.clone(), pin.version.clone())) {
                vulns.push(with_file(Finding::new(
                    StageId::ImageAnalysis,
                    adv.id.clone(),
                    adv.severity(),
                    advisory_message(
                        adv,
                        &pin.package,
                        &pin.version,
                        &format!(" (RUN line {})", pin.line),
                    ),
                )));
            }
        }
    }

    match spec.user() {
        None => vulns.push(with_file(Finding::new(
            StageId::ImageAnalysis,
            "image.runs-as-root",
            Severity::Low,
            "no USER instruction; the container runs as root",
        ))),
        Some(user) if matches!(user.split(':').next(), Some("root" | "0")) => {
            vulns.push(with_file(Finding::new(
                StageId::ImageAnalysis,
                "image.runs-as-root",
                Severity::Low,
                format!("USER {user} runs the container as root"),
            )))
        }
        Some(_) => {}
    }
    if spec.base_image.tag == "latest" {
        vulns.push(with_file(Finding::new(
            StageId::ImageAnalysis,
            "image.uses-latest-tag",
            Severity::Low,
            format!("base image {} is not pinned to a tag", spec.base_image.name),
        )));
    }

    vulns.sort_by(|a, b| {
        (a.rule_id.as_str(), a.message.as_str()).cmp(&(b.rule_id.as_str(), b.message.as_str()))
    });
    vulns
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const DB: &str = concat!(
        r#"{"id":"CVE-2018-18074","ecosystem":"pypi","package":"requests","affected_ranges":[{"upper":{"version":"2.20.0","inclusive":false}}],"cvss_score":9.8,"summary":"leak","fixed_in":"2.20.0"}"#,
        "\n",
        r#"{"id":"CVE-2022-23219","ecosystem":"debian","package":"glibc","affected_ranges":[{"upper":{"version":"2.28-10+deb10u2","inclusive":false}}],"cvss_score":9.8,"summary":"overflow","fixed_in":"2.28-10+deb10u2"}"#,
        "\n",
    );

    fn db() -> AdvisoryDb {
        AdvisoryDb::from_ndjson(DB).unwrap()
    }

    fn buster() -> PackageCatalog {
        PackageCatalog::from_toml(
            "image = \"debian:10\"\n[[packages]]\necosystem = \"debian\"\nname = \"glibc\"\nversion = \"2.28-10\"\n",
        )
        .unwrap()
    }

    #[test]
    fn requests_pin_is_flagged() {
        let manifest = parse_requirements("requests==2.18.4").unwrap();
        let findings = scan_dependencies(&manifest, Some("requirements.txt"), &db());
        assert_eq!(findings.len(), 1);
        assert_eq!(findings[0].rule_id, "CVE-2018-18074");
        assert_eq!(findings[0].severity, Severity::Critical);
    }

    #[test]
    fn empty_manifest_and_unpinned() {
        assert!(scan_dependencies(&DependencyManifest::default(), None, &db()).is_empty());
        let findings = scan_dependencies(&parse_requirements("requests").unwrap(), None, &db());
        assert_eq!(findings.len(), 1);
        assert_eq!(
            (findings[0].rule_id.as_str(), findings[0].severity),
            ("dep.unpinned", Severity::Info)
        );
    }

    #[test]
    fn minimum_constraint_checked_at_floor() {
        let findings =
            scan_dependencies(&parse_requirements("requests>=2.0").unwrap(), None, &db());
        assert_eq!(findings.len(), 1);
        assert!(
            scan_dependencies(&parse_requirements("requests>=2.20").unwrap(), None, &db())
                .is_empty()
        );
    }

    #[test]
    fn dependency_scan_ignores_line_order() {
        let a = scan_dependencies(
            &parse_requirements("requests==2.18.4\nnumpy\nflask==1.0").unwrap(),
            None,
            &db(),
        );
        let b = scan_dependencies(
            &parse_requirements("flask==1.0\nnumpy\nrequests==2.18.4").unwrap(),
            None,
            &db(),
        );
        assert_eq!(a, b);
    }

    #[test]
    fn vulnerable_base_image() {
        let spec = parse_containerfile("FROM debian:10\nUSER app\n").unwrap();
        let findings = scan_image(&spec, Some("Dockerfile"), &[buster()], &db());
        assert_eq!(findings.len(), 1);
        assert_eq!(findings[0].rule_id, "CVE-2022-23219");
        assert_eq!(findings[0].severity, Severity::Critical);
    }

    #[test]
    fn configuration_checks() {
        let spec = parse_containerfile("FROM debian\n").unwrap();
        let ids: Vec<_> = scan_image(&spec, None, &[], &db())
            .into_iter()
            .map(|f| f.rule_id)
            .collect();
        assert_eq!(
            ids,
            [
                "image.catalog-missing",
                "image.runs-as-root",
                "image.uses-latest-tag"
            ]
        );

        let spec = parse_containerfile("FROM debian:10\nUSER root\n").unwrap();
        let ids: Vec<_> = scan_image(&spec, None, &[buster()], &db())
            .into_iter()
            .map(|f| f.rule_id)
            .collect();
        assert!(ids.contains(&"image.runs-as-root".to_string()));
    }

    #[test]
    fn missing_catalog_yields_single_info() {
        let spec = parse_containerfile("FROM alpine:3.19\nUSER app\n").unwrap();
        let findings = scan_image(&spec, None, &[buster()], &db());
        assert_eq!(findings.len(), 1);
        assert_eq!(
            (findings[0].rule_id.as_str(), findings[0].severity),
            ("image.catalog-missing", Severity::Info)
        );
    }

    #[test]
    fn run_install_pins_are_matched() {
        let spec = parse_containerfile(
            "FROM alpine:3.19\nUSER app\nRUN apt-get install -y glibc=2.28-10\n",
        )
        .unwrap();
        let findings = scan_image(&spec, None, &[], &db());
        assert!(findings.iter().any(|f| f.rule_id == "CVE-2022-23219"));
    }

    #[test]
    fn catalog_rejects_bad_key() {
        assert!(PackageCatalog::from_toml("image = \"\"\n").is_err());
        assert!(PackageCatalog::from_toml("image = \"debian:10\"\n[[packages]]\necosystem=\"debian\"\nname=\"x\"\nversion=\"??\"\n").is_err());
    }

    proptest! {
        // Replacing a package's version with the advisory's fix removes the finding.
        #[test]
        fn fix_closure(minor in 0u64..28, rev in 0u64..10) {
            let version = format!("2.{minor}-{rev}");
            let catalog = PackageCatalog::from_toml(&format!(
                "image = \"debian:10\"\n[[packages]]\necosystem = \"debian\"\nname = \"glibc\"\nversion = \"{version}\"\n"
            )).unwrap();
            let spec = parse_containerfile("FROM debian:10\nUSER app\n").unwrap();
            let before = scan_image(&spec, None, std::slice::from_ref(&catalog), &db());
            prop_assert!(before.iter().any(|f| f.rule_id == "CVE-2022-23219"));

            let mut fixed = catalog;
            let adv = db().advisories().iter().find(|a| a.id == "CVE-2022-23219").unwrap().clone();
            fixed.packages[0].version = adv.fixed_in.clone().unwrap();
            let after = scan_image(&spec, None, &[fixed], &db());
            prop_assert!(after.iter().all(|f| f.rule_id != "CVE-2022-23219"));
        }
    }
}
