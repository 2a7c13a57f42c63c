//! Samples and the training / unlabeled partition.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Mask, Volume};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Labeled,
    Pseudo,
    Unlabeled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    id: String,
    volume: Volume,
    mask: Option<Mask>,
    provenance: Provenance,
    pseudo_cycle: Option<u32>,
}

impl Sample {
    pub fn labeled(id: impl Into<String>, volume: Volume, mask: Mask) -> Result<Self> {
        check_mask_shape(&volume, &mask)?;
        Ok(Self {
            id: id.into(),
            volume,
            mask: Some(mask),
            provenance: Provenance::Labeled,
            pseudo_cycle: None,
        })
    }

    pub fn unlabeled(id: impl Into<String>, volume: Volume) -> Self {
        Self {
            id: id.into(),
            volume,
            mask: None,
            provenance: Provenance::Unlabeled,
            pseudo_cycle: None,
        }
    }

    pub fn pseudo(id: impl Into<String>, volume: Volume, mask: Mask, cycle: u32) -> Result<Self> {
        check_mask_shape(&volume, &mask)?;
        Ok(Self {
            id: id.into(),
            volume,
            mask: Some(mask),
            provenance: Provenance::Pseudo,
            pseudo_cycle: Some(cycle),
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn volume(&self) -> &Volume {
        &self.volume
    }

    pub fn mask(&self) -> Option<&Mask> {
        self.mask.as_ref()
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn pseudo_cycle(&self) -> Option<u32> {
        self.pseudo_cycle
    }
}

fn check_mask_shape(volume: &Volume, mask: &Mask) -> Result<()> {
    if volume.shape() != mask.shape() {
        return Err(Error::ShapeMismatch {
            expected: volume.shape().to_vec(),
            actual: mask.shape().to_vec(),
        });
    }
    Ok(())
}

/// The training set T (labeled and pseudo-labeled) and the unlabeled set U.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetPool {
    training: Vec<Sample>,
    unlabeled: Vec<Sample>,
}

impl DatasetPool {
    pub fn new(training: Vec<Sample>, unlabeled: Vec<Sample>) -> Result<Self> {
        let mut seen = HashSet::new();
        for s in &training {
            if s.provenance == Provenance::Unlabeled {
                return Err(Error::config("training", format!("sample `{}` is unlabeled", s.id)));
            }
            if !seen.insert(s.id.as_str()) {
                return Err(Error::DuplicateId(s.id.clone()));
            }
        }
        for s in &unlabeled {
            if s.provenance != Provenance::Unlabeled {
                return Err(Error::config("unlabeled", format!("sample `{}` carries a mask", s.id)));
            }
            if !seen.insert(s.id.as_str()) {
                return Err(Error::DuplicateId(s.id.clone()));
            }
        }
        Ok(Self {
            training,
            unlabeled,
        })
    }

    pub fn training(&self) -> &[Sample] {
        &self.training
    }

    pub fn unlabeled(&self) -> &[Sample] {
        &self.unlabeled
    }

    pub fn total(&self) -> usize {
        self.training.len() + self.unlabeled.len()
    }

    pub fn sizes(&self) -> (usize, usize) {
        (self.training.len(), self.unlabeled.len())
    }

    /// Move the named unlabeled samples into training as pseudo-labeled samples.
    ///
    /// Ids not currently unlabeled (including ones already promoted) are unknown.
    /// Validation happens before any mutation, so on error the pool is unchanged.
    pub fn promote(&mut self, ids: &[String], masks: Vec<Mask>, cycle: u32) -> Result<()> {
        if ids.len() != masks.len() {
            return Err(Error::LengthMismatch {
                left: ids.len(),
                right: masks.len(),
            });
        }
        let mut positions = BTreeMap::new();
        for (k, (id, mask)) in ids.iter().zip(&masks).enumerate() {
            let pos = self
                .unlabeled
                .iter()
                .position(|s| &s.id == id)
                .ok_or_else(|| Error::UnknownId(id.clone()))?;
            check_mask_shape(&self.unlabeled[pos].volume, mask)?;
            if positions.insert(pos, k).is_some() {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        let mut masks: Vec<Option<Mask>> = masks.into_iter().map(Some).collect();
        let mut moved: Vec<(usize, Sample)> = Vec::with_capacity(positions.len());
        // Remove from the back so earlier positions stay valid.
        for (&pos, &k) in positions.iter().rev() {
            let mut s = self.unlabeled.remove(pos);
            s.mask = masks[k].take();
            s.provenance = Provenance::Pseudo;
            s.pseudo_cycle = Some(cycle);
            moved.push((k, s));
        }
        moved.sort_by_key(|(k, _)| *k);
        self.training.extend(moved.into_iter().map(|(_, s)| s));
        Ok(())
    }
}

/// Ground truth for samples whose masks must stay out of training.
///
/// Nothing that influences training reads this store; the trainer may only
/// use it to log the quality of the pseudo-labels it assigned.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HiddenTruth {
    masks: BTreeMap<String, Mask>,
}

impl HiddenTruth {
    pub fn insert(&mut self, id: impl Into<String>, mask: Mask) {
        self.masks.insert(id.into(), mask);
    }

    pub fn get(&self, id: &str) -> Option<&Mask> {
        self.masks.get(id)
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Mask)> {
        self.masks.iter()
    }
}
