use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::UNCERTAIN_CODE;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub class_id: usize,
    pub code: String,
    pub name: String,
}

/// Ordered class vocabulary. Class ids are the positions `0..len`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassMap {
    entries: Vec<ClassEntry>,
}

impl ClassMap {
    /// Builds a map from `(code, long name)` pairs in class-id order.
    pub fn new<S: Into<String>>(classes: impl IntoIterator<Item = (S, S)>) -> Result<Self> {
        let entries: Vec<ClassEntry> = classes
            .into_iter()
            .enumerate()
            .map(|(class_id, (code, name))| ClassEntry {
                class_id,
                code: code.into(),
                name: name.into(),
            })
            .collect();
        if entries.is_empty() {
            return Err(Error::InvalidArgument("class map is empty".into()));
        }
        for (i, e) in entries.iter().enumerate() {
            if e.code == UNCERTAIN_CODE {
                return Err(Error::InvalidArgument(format!(
                    "`{UNCERTAIN_CODE}` cannot be a training class"
                )));
            }
            if e.code.is_empty() {
                return Err(Error::InvalidArgument("empty class code".into()));
            }
            if entries[..i].iter().any(|o| o.code == e.code) {
                return Err(Error::InvalidArgument(format!("duplicate class code `{}`", e.code)));
            }
        }
        Ok(Self { entries })
    }

    /// Codes only; the long name repeats the code.
    pub fn from_codes<S: AsRef<str>>(codes: &[S]) -> Result<Self> {
        Self::new(codes.iter().map(|c| (c.as_ref().to_string(), c.as_ref().to_string())))
    }

    /// The nine-class colorectal tissue vocabulary.
    pub fn nct() -> Self {
        Self::new([
            ("ADI", "Adipose"),
            ("BACK", "Background"),
            ("DEB", "Debris"),
            ("LYM", "Lymphocytes"),
            ("MUC", "Mucus"),
            ("MUS", "Smooth muscle"),
            ("NORM", "Normal colon mucosa"),
            ("STR", "Cancer-associated stroma"),
            ("TUM", "Colorectal adenocarcinoma epithelium"),
        ])
        .expect("static class map is valid")
    }

    /// The eleven-class pan-cancer vocabulary.
    pub fn tcga11() -> Self {
        Self::new([
            ("BRCA", "Breast invasive carcinoma"),
            ("COAD", "Colon adenocarcinoma"),
            ("KIRC", "Kidney renal clear cell carcinoma"),
            ("KIRP", "Kidney renal papillary cell carcinoma"),
            ("LUAD", "Lung adenocarcinoma"),
            ("LUSC", "Lung squamous cell carcinoma"),
            ("DLBCL", "Lymphoid neoplasm diffuse large B-cell lymphoma"),
            ("PRAD", "Prostate adenocarcinoma"),
            ("READ", "Rectum adenocarcinoma"),
            ("SARC", "Sarcoma"),
            ("SKCM", "Skin cutaneous melanoma"),
        ])
        .expect("static class map is valid")
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ClassEntry] {
        &self.entries
    }

    pub fn codes(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.code.as_str())
    }

    pub fn code(&self, class_id: usize) -> Option<&str> {
        self.entries.get(class_id).map(|e| e.code.as_str())
    }

    pub fn id_of(&self, code: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.code == code)
    }

    /// Class codes followed by the uncertain code.
    pub fn vocabulary(&self) -> Vec<String> {
        self.codes()
            .map(str::to_string)
            .chain(std::iter::once(UNCERTAIN_CODE.to_string()))
            .collect()
    }

    pub fn is_valid_label(&self, label: &str) -> bool {
        label == UNCERTAIN_CODE || self.id_of(label).is_some()
    }
}
