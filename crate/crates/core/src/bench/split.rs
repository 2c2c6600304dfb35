//! Contiguous, class-stratified train/validation/test splits.

use serde::{Deserialize, Serialize};

use crate::signal::NetworkInput;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SplitError {
    #[error("invalid split ratios: {}", .0.join("; "))]
    Ratios(Vec<String>),
    #[error("class {class} has {frames} frames, too few for ({train}, {val}, {test}) blocks")]
    ClassTooSmall {
        class: u32,
        frames: usize,
        train: usize,
        val: usize,
        test: usize,
    },
    #[error("inputs mix sessions {0} and {1}")]
    MixedSessions(String, String),
    #[error("no inputs to split")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.6,
            val: 0.2,
            test: 0.2,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<(), SplitError> {
        let mut v = Vec::new();
        for (name, r) in [("train", self.train), ("val", self.val), ("test", self.test)] {
            if !(r > 0.0 && r.is_finite()) {
                v.push(format!("{name} ratio {r} must be positive"));
            }
        }
        let sum = self.train + self.val + self.test;
        if (sum - 1.0).abs() > 1e-9 {
            v.push(format!("ratios sum to {sum}, not 1"));
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(SplitError::Ratios(v))
        }
    }

    /// Block sizes for a class of `n` frames: train and val are rounded,
    /// test takes the remainder.
    pub fn block_sizes(&self, n: usize) -> (usize, usize, usize) {
        let train = ((self.train * n as f64).round() as usize).min(n);
        let val = ((self.val * n as f64).round() as usize).min(n - train);
        (train, val, n - train - val)
    }
}

/// One session's inputs with a split assignment per input.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionDataset {
    pub subject_id: String,
    pub session_id: String,
    pub inputs: Vec<NetworkInput>,
    /// `assignment[i]` is the split of `inputs[i]`.
    pub assignment: Vec<Split>,
}

impl SessionDataset {
    fn collect(&self, split: Split) -> Vec<NetworkInput> {
        self.inputs
            .iter()
            .zip(&self.assignment)
            .filter(|(_, s)| **s == split)
            .map(|(x, _)| x.clone())
            .collect()
    }

    pub fn train(&self) -> Vec<NetworkInput> {
        self.collect(Split::Train)
    }

    pub fn val(&self) -> Vec<NetworkInput> {
        self.collect(Split::Val)
    }

    pub fn test(&self) -> Vec<NetworkInput> {
        self.collect(Split::Test)
    }

    /// Frame indices assigned to `split`.
    pub fn frames(&self, split: Split) -> Vec<usize> {
        self.inputs
            .iter()
            .zip(&self.assignment)
            .filter(|(_, s)| **s == split)
            .map(|(x, _)| x.provenance.frame)
            .collect()
    }
}

/// Cuts each class's frames, in temporal order, into train, validation and
/// test blocks. No randomness is involved, so there is no seed.
pub fn split_session(inputs: Vec<NetworkInput>, ratios: &SplitRatios) -> Result<SessionDataset, SplitError> {
    ratios.validate()?;
    let first = inputs.first().ok_or(SplitError::Empty)?;
    let (subject_id, session_id) = (first.provenance.subject_id.clone(), first.provenance.session_id.clone());
    if let Some(x) = inputs
        .iter()
        .find(|x| x.provenance.subject_id != subject_id || x.provenance.session_id != session_id)
    {
        return Err(SplitError::MixedSessions(
            format!("{subject_id}/{session_id}"),
            format!("{}/{}", x.provenance.subject_id, x.provenance.session_id),
        ));
    }

    let mut classes: Vec<u32> = inputs.iter().map(|x| x.label).collect();
    classes.sort_unstable();
    classes.dedup();
    let mut assignment = vec![Split::Train; inputs.len()];
    for class in classes {
        let mut members: Vec<usize> = (0..inputs.len()).filter(|&i| inputs[i].label == class).collect();
        members.sort_by_key(|&i| inputs[i].provenance.frame);
        let (train, val, test) = ratios.block_sizes(members.len());
        if train == 0 || val == 0 || test == 0 {
            return Err(SplitError::ClassTooSmall {
                class,
                frames: members.len(),
                train,
                val,
                test,
            });
        }
        for (rank, &i) in members.iter().enumerate() {
            assignment[i] = if rank < train {
                Split::Train
            } else if rank < train + val {
                Split::Val
            } else {
                Split::Test
            };
        }
    }
    Ok(SessionDataset {
        subject_id,
        session_id,
        inputs,
        assignment,
    })
}
