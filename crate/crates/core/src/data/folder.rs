use std::collections::BTreeSet;
use std::path::Path;

use log::warn;

use super::ClassMap;
use crate::error::{Error, Result};
use crate::ImageTensor;

/// One labeled image patch.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPatch {
    pub id: String,
    pub image: ImageTensor,
    pub class_id: usize,
    /// Source slide or patient; folds never split a group.
    pub group_id: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadReport {
    pub loaded: usize,
    pub per_class: Vec<usize>,
    pub skipped: Vec<(String, String)>,
    pub empty_classes: Vec<String>,
    pub warnings: Vec<String>,
}

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "tif", "tiff"];

/// Derives the group (slide/patient) of a patch from its file stem.
///
/// `slide__rest` yields `slide`; TCGA barcodes yield the patient part
/// (`TCGA-XX-XXXX`); anything else is its own group.
pub fn parse_group_id(stem: &str) -> String {
    if let Some((prefix, _)) = stem.split_once("__") {
        if !prefix.is_empty() {
            return prefix.to_string();
        }
    }
    if stem.starts_with("TCGA-") {
        let parts: Vec<&str> = stem.split('-').collect();
        if parts.len() >= 3 && !parts[1].is_empty() && !parts[2].is_empty() {
            let tail: String = parts[2].chars().take_while(|c| c.is_ascii_alphanumeric()).collect();
            if !tail.is_empty() {
                return format!("TCGA-{}-{}", parts[1], tail);
            }
        }
    }
    stem.to_string()
}

/// Loads `root/<class_code>/*.{png,jpg,tif}` into labeled patches.
///
/// Unreadable files are skipped and listed in the report. Subdirectories that
/// are not class codes are an error.
pub fn load_image_folder(root: &Path, class_map: &ClassMap) -> Result<(Vec<LabeledPatch>, LoadReport)> {
    let mut report = LoadReport {
        per_class: vec![0; class_map.len()],
        ..Default::default()
    };
    let mut dirs = Vec::new();
    for entry in std::fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let path = entry.path();
        if !path.is_dir() {
            continue;
        }
        let name = entry.file_name().to_string_lossy().into_owned();
        let class_id = class_map
            .id_of(&name)
            .ok_or_else(|| Error::UnknownClassDir(name.clone()))?;
        dirs.push((class_id, name, path));
    }
    dirs.sort();

    let mut patches = Vec::new();
    let mut seen_ids = BTreeSet::new();
    for (class_id, code, dir) in dirs {
        let mut files: Vec<_> = std::fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.is_file()
                    && p.extension()
                        .and_then(|e| e.to_str())
                        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
            })
            .collect();
        files.sort();
        for file in files {
            let stem = file
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let id = format!("{code}/{stem}");
            match ImageTensor::load(&file) {
                Ok(image) => {
                    if !seen_ids.insert(id.clone()) {
                        let msg = format!("duplicate patch id `{id}` skipped");
                        warn!("{msg}");
                        report.skipped.push((file.display().to_string(), msg));
                        continue;
                    }
                    patches.push(LabeledPatch {
                        group_id: parse_group_id(&stem),
                        id,
                        image,
                        class_id,
                    });
                    report.per_class[class_id] += 1;
                    report.loaded += 1;
                }
                Err(e) => {
                    warn!("skipping unreadable image {}: {e}", file.display());
                    report.skipped.push((file.display().to_string(), e.to_string()));
                }
            }
        }
    }
    for (class_id, count) in report.per_class.iter().enumerate() {
        if *count == 0 {
            let code = class_map.code(class_id).unwrap_or_default().to_string();
            let msg = format!("class `{code}` has no images");
            warn!("{msg}");
            report.warnings.push(msg);
            report.empty_classes.push(code);
        }
    }
    Ok((patches, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::class_histogram;

    fn write_png(path: &Path, value: u8) {
        let img = image::RgbImage::from_pixel(4, 4, image::Rgb([value, value, 255 - value]));
        img.save(path).unwrap();
    }

    #[test]
    fn three_classes_two_images_each() {
        let dir = tempfile::tempdir().unwrap();
        let map = ClassMap::from_codes(&["A", "B", "C"]).unwrap();
        for code in ["A", "B", "C"] {
            std::fs::create_dir(dir.path().join(code)).unwrap();
            write_png(&dir.path().join(code).join("s1__p0.png"), 10);
            write_png(&dir.path().join(code).join("s2__p1.png"), 200);
        }
        let (patches, report) = load_image_folder(dir.path(), &map).unwrap();
        assert_eq!(patches.len(), 6);
        assert_eq!(class_histogram(&patches, 3), vec![2, 2, 2]);
        assert_eq!(report.loaded, 6);
        assert!(report.warnings.is_empty());
        assert_eq!(patches[0].group_id, "s1");
        assert!((patches[1].image.data()[[0, 0, 0]] - 200.0 / 255.0).abs() < 1e-6);
    }

    #[test]
    fn empty_class_dir_warns() {
        let dir = tempfile::tempdir().unwrap();
        let map = ClassMap::from_codes(&["A", "B"]).unwrap();
        std::fs::create_dir(dir.path().join("A")).unwrap();
        std::fs::create_dir(dir.path().join("B")).unwrap();
        write_png(&dir.path().join("A").join("x.png"), 1);
        let (patches, report) = load_image_folder(dir.path(), &map).unwrap();
        assert_eq!(patches.len(), 1);
        assert_eq!(report.per_class, vec![1, 0]);
        assert_eq!(report.empty_classes, vec!["B".to_string()]);
    }

    #[test]
    fn unknown_directory_is_named_in_error() {
        let dir = tempfile::tempdir().unwrap();
        let map = ClassMap::from_codes(&["A"]).unwrap();
        std::fs::create_dir(dir.path().join("ZZZ")).unwrap();
        let err = load_image_folder(dir.path(), &map).unwrap_err();
        assert!(err.to_string().contains("ZZZ"));
    }

    #[test]
    fn unreadable_file_is_skipped_and_counted() {
        let dir = tempfile::tempdir().unwrap();
        let map = ClassMap::from_codes(&["A"]).unwrap();
        std::fs::create_dir(dir.path().join("A")).unwrap();
        write_png(&dir.path().join("A").join("good.png"), 3);
        std::fs::write(dir.path().join("A").join("bad.png"), b"not a png").unwrap();
        let (patches, report) = load_image_folder(dir.path(), &map).unwrap();
        assert_eq!(patches.len(), 1);
        assert_eq!(report.skipped.len(), 1);
    }

    #[test]
    fn nct_layout_gives_nine_classes() {
        let dir = tempfile::tempdir().unwrap();
        let map = ClassMap::nct();
        for code in map.codes() {
            std::fs::create_dir(dir.path().join(code)).unwrap();
            write_png(&dir.path().join(code).join(format!("{code}-AAAA.tif.png")), 9);
        }
        let (patches, _) = load_image_folder(dir.path(), &map).unwrap();
        assert_eq!(class_histogram(&patches, map.len()), vec![1; 9]);
    }

    #[test]
    fn group_id_parsing() {
        assert_eq!(parse_group_id("slide7__x12_y3"), "slide7");
        assert_eq!(parse_group_id("TCGA-AA-3520-01Z-00-DX1_patch9"), "TCGA-AA-3520");
        assert_eq!(parse_group_id("ADI-AAAFLCLY"), "ADI-AAAFLCLY");
        assert_eq!(parse_group_id("__weird"), "__weird");
    }
}
