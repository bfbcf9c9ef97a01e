use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mvs::Pose;
use crate::numerics::FTensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyframePolicy {
    pub capacity: usize,
    /// Weight of the rotation angle (radians) against translation.
    pub lambda: f64,
    pub threshold: f64,
}

impl Default for KeyframePolicy {
    fn default() -> Self {
        Self {
            capacity: 30,
            lambda: 1.0,
            threshold: 0.35,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Keyframe {
    pub pose: Pose,
    pub feature: FTensor,
}

/// FIFO store of past features indexed by pose.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyframeBuffer {
    policy: KeyframePolicy,
    feature_shape: Vec<usize>,
    entries: VecDeque<Keyframe>,
}

impl KeyframeBuffer {
    pub fn new(policy: KeyframePolicy, feature_shape: Vec<usize>) -> Result<Self> {
        if policy.capacity == 0 {
            return Err(Error::config("keyframe buffer capacity must be positive"));
        }
        if !(policy.lambda >= 0.0 && policy.threshold >= 0.0) {
            return Err(Error::config("keyframe lambda and threshold must be nonnegative"));
        }
        Ok(Self {
            policy,
            feature_shape,
            entries: VecDeque::new(),
        })
    }

    pub fn policy(&self) -> &KeyframePolicy {
        &self.policy
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries, oldest first.
    pub fn entries(&self) -> impl Iterator<Item = &Keyframe> {
        self.entries.iter()
    }

    pub fn store(&mut self, pose: Pose, feature: FTensor) -> Result<()> {
        if feature.shape() != self.feature_shape.as_slice() {
            return Err(Error::shape(format!(
                "keyframe feature {:?} does not match configured {:?}",
                feature.shape(),
                self.feature_shape
            )));
        }
        self.entries.push_back(Keyframe { pose, feature });
        while self.entries.len() > self.policy.capacity {
            self.entries.pop_front();
        }
        Ok(())
    }

    /// Up to `n` entries within the threshold, nearest first; equal
    /// distances go to the most recent insertion.
    pub fn select_n(&self, current: &Pose, n: usize) -> Vec<&Keyframe> {
        let mut scored: Vec<(f64, usize)> = self
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| (e.pose.distance(current, self.policy.lambda), i))
            .filter(|(d, _)| *d <= self.policy.threshold)
            .collect();
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)));
        scored.into_iter().take(n).map(|(_, i)| &self.entries[i]).collect()
    }

    pub fn select(&self, current: &Pose) -> Option<&Keyframe> {
        self.select_n(current, 1).into_iter().next()
    }
}
