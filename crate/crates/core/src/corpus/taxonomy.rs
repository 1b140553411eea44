use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use crate::error::{Error, Result};
use crate::similarity::Dimension;

/// Raw tag -> (dimension, label) mapping, loaded from a
/// `raw_tag,dimension,label` CSV. Tags are matched case-insensitively.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Taxonomy {
    map: HashMap<String, (Dimension, String)>,
}

impl Taxonomy {
    pub fn load(path: &Path) -> Result<Self> {
        Self::parse_csv(&std::fs::read_to_string(path)?)
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(text.as_bytes());
        let mut map = HashMap::new();
        for (i, rec) in reader.records().enumerate() {
            let row = i + 1;
            let rec = rec?;
            let err = |msg: String| Error::Taxonomy { row, msg };
            if rec.len() != 3 {
                return Err(err(format!("expected 3 fields, got {}", rec.len())));
            }
            if row == 1 && rec[0].eq_ignore_ascii_case("raw_tag") {
                continue;
            }
            let dim: Dimension = rec[1].parse().map_err(|e: Error| err(e.to_string()))?;
            if !dim.is_tag() {
                return Err(err(format!("{dim} is not a tag dimension")));
            }
            let tag = rec[0].to_lowercase();
            let entry = (dim, rec[2].to_string());
            if let Some(prev) = map.get(&tag) {
                if *prev != entry {
                    return Err(err(format!("tag {tag:?} mapped twice")));
                }
            }
            map.insert(tag, entry);
        }
        Ok(Self { map })
    }

    pub fn lookup(&self, raw_tag: &str) -> Option<&(Dimension, String)> {
        self.map.get(&raw_tag.trim().to_lowercase())
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Groups raw tags into per-dimension label sets; unmapped tags are dropped.
pub fn group_tags<'a>(
    raw_tags: impl IntoIterator<Item = &'a str>,
    taxonomy: &Taxonomy,
) -> BTreeMap<Dimension, BTreeSet<String>> {
    let mut out: BTreeMap<Dimension, BTreeSet<String>> = BTreeMap::new();
    for tag in raw_tags {
        if let Some((dim, label)) = taxonomy.lookup(tag) {
            out.entry(*dim).or_default().insert(label.clone());
        }
    }
    out
}
