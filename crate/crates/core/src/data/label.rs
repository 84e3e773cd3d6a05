use serde::{Deserialize, Serialize};

use crate::error::{GfdError, Result};

/// One source class. Index 0 is always the real class.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SourceLabel {
    pub index: usize,
    pub name: String,
    pub is_real: bool,
}

/// The ordered label taxonomy `{real, GAN_1, .., GAN_N}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    labels: Vec<SourceLabel>,
}

impl LabelSet {
    /// Builds a taxonomy from `(name, is_real)` pairs. The real class is moved
    /// to index 0, the remaining classes keep their relative order.
    pub fn new<S: AsRef<str>>(classes: &[(S, bool)]) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for (name, _) in classes {
            if !seen.insert(name.as_ref()) {
                return Err(GfdError::DuplicateLabel(name.as_ref().to_string()));
            }
        }
        let reals: Vec<_> = classes.iter().filter(|(_, r)| *r).collect();
        match reals.len() {
            0 => return Err(GfdError::NoRealClass),
            1 => {}
            n => {
                return Err(GfdError::Manifest(format!(
                    "{n} classes marked is_real, expected exactly one"
                )))
            }
        }
        let mut labels = Vec::with_capacity(classes.len());
        for (name, is_real) in classes
            .iter()
            .filter(|(_, r)| *r)
            .chain(classes.iter().filter(|(_, r)| !*r))
        {
            labels.push(SourceLabel {
                index: labels.len(),
                name: name.as_ref().to_string(),
                is_real: *is_real,
            });
        }
        if labels.len() < 2 {
            return Err(GfdError::Manifest(
                "need at least one generated class besides real".into(),
            ));
        }
        Ok(Self { labels })
    }

    /// The two-way `{real, fake}` taxonomy used by detection.
    pub fn binary() -> Self {
        Self::new(&[("real", true), ("fake", false)]).expect("static taxonomy")
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Number of generated sources N (the taxonomy has N + 1 labels).
    pub fn num_generators(&self) -> usize {
        self.labels.len() - 1
    }

    pub fn get(&self, index: usize) -> Result<&SourceLabel> {
        self.labels.get(index).ok_or(GfdError::LabelOutOfRange {
            index,
            num_classes: self.labels.len(),
        })
    }

    pub fn by_name(&self, name: &str) -> Option<&SourceLabel> {
        self.labels.iter().find(|l| l.name == name)
    }

    pub fn real(&self) -> &SourceLabel {
        &self.labels[0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &SourceLabel> {
        self.labels.iter()
    }

    pub fn names(&self) -> Vec<String> {
        self.labels.iter().map(|l| l.name.clone()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn real_moves_to_front() {
        let set = LabelSet::new(&[("ganA", false), ("real", true), ("ganB", false)]).unwrap();
        assert_eq!(set.names(), vec!["real", "ganA", "ganB"]);
        assert!(set.real().is_real);
        assert_eq!(set.get(2).unwrap().index, 2);
        assert_eq!(set.num_generators(), 2);
    }

    #[test]
    fn rejects_bad_taxonomies() {
        assert!(matches!(
            LabelSet::new(&[("a", false), ("b", false)]),
            Err(GfdError::NoRealClass)
        ));
        assert!(matches!(
            LabelSet::new(&[("real", true), ("real", false)]),
            Err(GfdError::DuplicateLabel(_))
        ));
        assert!(LabelSet::new(&[("r1", true), ("r2", true)]).is_err());
        assert!(matches!(
            LabelSet::binary().get(2),
            Err(GfdError::LabelOutOfRange {
                index: 2,
                num_classes: 2
            })
        ));
    }
}
