use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    None,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::None => "none",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            "none" => Some(Split::None),
            _ => None,
        }
    }
}

/// Per-node class ids and train/val/test membership.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelSet {
    labels: Vec<Option<usize>>,
    splits: Vec<Split>,
    num_classes: usize,
}

impl LabelSet {
    /// Every node in a train, val or test split must carry a label and every
    /// label must be below `num_classes`, which must be at least 2.
    pub fn new(labels: Vec<Option<usize>>, splits: Vec<Split>, num_classes: usize) -> Result<Self> {
        if labels.len() != splits.len() {
            return Err(Error::shape("LabelSet", labels.len(), splits.len()));
        }
        if num_classes < 2 {
            return Err(Error::InvalidLabels(format!(
                "need at least 2 classes, got {num_classes}"
            )));
        }
        for (i, (l, s)) in labels.iter().zip(&splits).enumerate() {
            match l {
                Some(c) if *c >= num_classes => {
                    return Err(Error::InvalidLabels(format!(
                        "node {i} has class {c} but only {num_classes} classes exist"
                    )))
                }
                None if *s != Split::None => {
                    return Err(Error::InvalidLabels(format!(
                        "node {i} is in the {} split but has no label",
                        s.as_str()
                    )))
                }
                _ => {}
            }
        }
        Ok(Self {
            labels,
            splits,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn label(&self, i: usize) -> Option<usize> {
        self.labels[i]
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn split(&self, i: usize) -> Split {
        self.splits[i]
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.splits[i] == split)
            .collect()
    }

    /// Label visible to training: only train nodes count as labeled.
    pub fn train_label(&self, i: usize) -> Option<usize> {
        match self.splits[i] {
            Split::Train => self.labels[i],
            _ => None,
        }
    }

    pub fn permute(&self, perm: &[usize]) -> Self {
        let mut labels = vec![None; self.len()];
        let mut splits = vec![Split::None; self.len()];
        for (i, &p) in perm.iter().enumerate() {
            labels[p] = self.labels[i];
            splits[p] = self.splits[i];
        }
        Self {
            labels,
            splits,
            num_classes: self.num_classes,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_members_must_be_labeled() {
        let err = LabelSet::new(vec![Some(0), None], vec![Split::Train, Split::Test], 2);
        assert!(err.is_err());
        let ok = LabelSet::new(vec![Some(0), None], vec![Split::Train, Split::None], 2).unwrap();
        assert_eq!(ok.indices(Split::Train), vec![0]);
    }

    #[test]
    fn at_least_two_classes() {
        assert!(LabelSet::new(vec![Some(0)], vec![Split::Train], 1).is_err());
    }

    #[test]
    fn only_train_labels_are_visible_to_training() {
        let l = LabelSet::new(vec![Some(0), Some(1)], vec![Split::Train, Split::Val], 2).unwrap();
        assert_eq!(l.train_label(0), Some(0));
        assert_eq!(l.train_label(1), None);
    }
}
