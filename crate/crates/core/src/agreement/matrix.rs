use std::collections::HashMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::UncertainMode;
use crate::error::{Error, Result};
use crate::surrogate::LabelMap;
use crate::UNCERTAIN_CODE;

/// Items × raters grid of nominal labels. A `None` entry is a missing rating.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationMatrix {
    items: Vec<String>,
    raters: Vec<String>,
    /// Class codes; `???` is always accepted in addition.
    vocabulary: Vec<String>,
    /// Row-major, `items.len() × raters.len()`.
    labels: Vec<Option<String>>,
}

#[derive(Debug, Deserialize, Serialize)]
struct CsvRow {
    item_id: String,
    rater_id: String,
    label: String,
}

/// Integer-coded view after applying an uncertain mode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Coded {
    /// Retained items × raters.
    pub rows: Vec<Vec<Option<usize>>>,
    pub items: Vec<usize>,
    pub num_categories: usize,
    pub excluded_items: usize,
}

impl AnnotationMatrix {
    pub fn new(
        items: Vec<String>,
        raters: Vec<String>,
        vocabulary: Vec<String>,
        labels: Vec<Vec<Option<String>>>,
    ) -> Result<Self> {
        if labels.len() != items.len() || labels.iter().any(|r| r.len() != raters.len()) {
            return Err(Error::Shape(format!(
                "labels must be {} items × {} raters",
                items.len(),
                raters.len()
            )));
        }
        check_unique("item", &items)?;
        check_unique("rater", &raters)?;
        check_unique("vocabulary code", &vocabulary)?;
        if vocabulary.iter().any(|c| c == UNCERTAIN_CODE) {
            return Err(Error::InvalidArgument(format!("`{UNCERTAIN_CODE}` is reserved")));
        }
        let m = Self {
            items,
            raters,
            vocabulary,
            labels: labels.into_iter().flatten().collect(),
        };
        for l in m.labels.iter().flatten() {
            m.check_label(l)?;
        }
        Ok(m)
    }

    /// Builds from `(item, rater, label)` triples; items and raters keep their
    /// first-appearance order and absent pairs are missing.
    pub fn from_records<I>(vocabulary: Vec<String>, records: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String, String)>,
    {
        let mut items: Vec<String> = Vec::new();
        let mut raters: Vec<String> = Vec::new();
        let mut item_idx = HashMap::new();
        let mut rater_idx = HashMap::new();
        let mut triples = Vec::new();
        for (item, rater, label) in records {
            let i = *item_idx.entry(item.clone()).or_insert_with(|| {
                items.push(item);
                items.len() - 1
            });
            let r = *rater_idx.entry(rater.clone()).or_insert_with(|| {
                raters.push(rater);
                raters.len() - 1
            });
            triples.push((i, r, label));
        }
        let mut grid = vec![vec![None; raters.len()]; items.len()];
        for (i, r, label) in triples {
            if grid[i][r].is_some() {
                return Err(Error::Format(format!(
                    "duplicate rating for item `{}` by rater `{}`",
                    items[i], raters[r]
                )));
            }
            grid[i][r] = Some(label);
        }
        Self::new(items, raters, vocabulary, grid)
    }

    /// Reads `item_id,rater_id,label` rows.
    pub fn read_csv<R: Read>(input: R, vocabulary: Vec<String>) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(input);
        let headers = reader.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["item_id", "rater_id", "label"] {
            return Err(Error::Format(format!(
                "expected header item_id,rater_id,label, found {}",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let rows = reader
            .deserialize::<CsvRow>()
            .map(|r| r.map(|r| (r.item_id, r.rater_id, r.label)))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Self::from_records(vocabulary, rows)
    }

    /// Writes one row per present rating, item-major.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["item_id", "rater_id", "label"])?;
        for (i, item) in self.items.iter().enumerate() {
            for (r, rater) in self.raters.iter().enumerate() {
                if let Some(l) = self.get(i, r) {
                    w.write_record([item.as_str(), rater.as_str(), l])?;
                }
            }
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    /// One rater per map, one item `cell_i_j` per labeled cell across all maps.
    /// Maps must share class codes.
    pub fn from_label_maps(maps: &[&LabelMap]) -> Result<Self> {
        let Some(first) = maps.first() else {
            return Err(Error::InsufficientData("no label maps".into()));
        };
        if maps.iter().any(|m| m.class_codes != first.class_codes) {
            return Err(Error::InvalidArgument("label maps use different class codes".into()));
        }
        let mut cells: Vec<(usize, usize)> = maps.iter().flat_map(|m| m.entries.iter().map(|e| (e.i, e.j))).collect();
        cells.sort_unstable();
        cells.dedup();
        let items = cells.iter().map(|(i, j)| cell_item_id(*i, *j)).collect();
        let raters = maps.iter().map(|m| m.method.clone()).collect();
        let labels = cells
            .iter()
            .map(|&(i, j)| {
                maps.iter()
                    .map(|m| m.label_at(i, j).map(|l| m.class_codes[l].clone()))
                    .collect()
            })
            .collect();
        Self::new(items, raters, first.class_codes.clone(), labels)
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    pub fn raters(&self) -> &[String] {
        &self.raters
    }

    pub fn vocabulary(&self) -> &[String] {
        &self.vocabulary
    }

    pub fn num_items(&self) -> usize {
        self.items.len()
    }

    pub fn num_raters(&self) -> usize {
        self.raters.len()
    }

    pub fn get(&self, item: usize, rater: usize) -> Option<&str> {
        self.labels[item * self.raters.len() + rater].as_deref()
    }

    pub fn rater_index(&self, id: &str) -> Option<usize> {
        self.raters.iter().position(|r| r == id)
    }

    pub fn column(&self, rater: usize) -> Vec<Option<&str>> {
        (0..self.items.len()).map(|i| self.get(i, rater)).collect()
    }

    /// A copy restricted to the given raters, in the given order.
    pub fn select_raters(&self, raters: &[usize]) -> Result<Self> {
        if let Some(&bad) = raters.iter().find(|&&r| r >= self.raters.len()) {
            return Err(Error::OutOfRange {
                what: "rater",
                index: bad,
                limit: self.raters.len(),
            });
        }
        let labels = (0..self.items.len())
            .map(|i| raters.iter().map(|&r| self.get(i, r).map(String::from)).collect())
            .collect();
        Self::new(
            self.items.clone(),
            raters.iter().map(|&r| self.raters[r].clone()).collect(),
            self.vocabulary.clone(),
            labels,
        )
    }

    /// Category index of a label: vocabulary position, with `???` after the
    /// vocabulary.
    pub(crate) fn category(&self, label: &str) -> usize {
        self.vocabulary
            .iter()
            .position(|c| c == label)
            .unwrap_or(self.vocabulary.len())
    }

    /// Integer codes under `mode`. In exclude mode every item carrying a `???`
    /// from any rater is removed.
    pub(crate) fn coded(&self, mode: UncertainMode) -> Coded {
        let mut rows = Vec::new();
        let mut items = Vec::new();
        let mut excluded_items = 0;
        for i in 0..self.items.len() {
            let row: Vec<Option<&str>> = (0..self.raters.len()).map(|r| self.get(i, r)).collect();
            if mode == UncertainMode::Exclude && row.contains(&Some(UNCERTAIN_CODE)) {
                excluded_items += 1;
                continue;
            }
            rows.push(row.iter().map(|l| l.map(|l| self.category(l))).collect());
            items.push(i);
        }
        let num_categories = self.vocabulary.len() + usize::from(mode == UncertainMode::Category);
        Coded {
            rows,
            items,
            num_categories,
            excluded_items,
        }
    }

    fn check_label(&self, label: &str) -> Result<()> {
        if label == UNCERTAIN_CODE || self.vocabulary.iter().any(|c| c == label) {
            Ok(())
        } else {
            Err(Error::UnknownLabel(label.to_string()))
        }
    }
}

/// Item id used for atlas cells.
pub fn cell_item_id(i: usize, j: usize) -> String {
    format!("cell_{i}_{j}")
}

fn check_unique(what: &str, ids: &[String]) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(Error::InvalidArgument(format!("duplicate {what} `{id}`")));
        }
    }
    Ok(())
}
