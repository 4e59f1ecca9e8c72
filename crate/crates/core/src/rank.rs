//! Ordering images for presentation.
//!
//! Images sharing the same unordered `(x, y)` axis pair form a group whose
//! score is the sum of its non-degenerate members' scores. The top `n`
//! images of each of the top `m` groups are shown; within a group, images
//! whose `z` differs from the first image's `z` can be demoted by a
//! penalty factor.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cube::Triple;
use crate::viz::ImageSidecar;

/// What ranking needs to know about one image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredImage {
    pub id: String,
    pub triple: Triple,
    pub x_dim: usize,
    pub y_dim: usize,
    pub z_dim: usize,
    pub z_lo: u32,
    pub score: f64,
    pub degenerate: bool,
}

impl ScoredImage {
    pub fn axis_key(&self) -> (usize, usize) {
        (self.x_dim.min(self.y_dim), self.x_dim.max(self.y_dim))
    }

    fn tie_key(&self) -> (Triple, usize, u32) {
        (self.triple, self.z_dim, self.z_lo)
    }
}

impl From<&ImageSidecar> for ScoredImage {
    fn from(s: &ImageSidecar) -> Self {
        Self {
            id: s.id.clone(),
            triple: s.triple,
            x_dim: s.x_dim,
            y_dim: s.y_dim,
            z_dim: s.z_dim,
            z_lo: s.z_range[0],
            score: s.score,
            degenerate: s.degenerate,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisGroup {
    pub key: (usize, usize),
    /// Indexes into the scored image list.
    pub members: Vec<usize>,
    pub score: f64,
}

/// Partitions images by axis pair; groups come out ordered by key.
pub fn group_images(images: &[ScoredImage]) -> Vec<AxisGroup> {
    let mut groups: BTreeMap<(usize, usize), AxisGroup> = BTreeMap::new();
    for (i, img) in images.iter().enumerate() {
        let key = img.axis_key();
        let g = groups.entry(key).or_insert_with(|| AxisGroup {
            key,
            members: Vec::new(),
            score: 0.0,
        });
        g.members.push(i);
        if !img.degenerate {
            g.score += img.score;
        }
    }
    groups.into_values().collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedImage {
    pub id: String,
    pub z_dim: usize,
    pub score: f64,
    /// Score after the diversity penalty.
    pub effective_score: f64,
    #[serde(skip)]
    tie: Option<(Triple, usize, u32)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedGroup {
    pub key: (usize, usize),
    pub score: f64,
    pub images: Vec<RankedImage>,
}

fn by_score_desc(a: f64, b: f64) -> Ordering {
    b.total_cmp(&a)
}

/// Top `n` images of the top `m` groups. With `reverse` the lowest
/// scoring groups come first; members stay best first.
pub fn select(images: &[ScoredImage], n: usize, m: usize, reverse: bool) -> Vec<RankedGroup> {
    let mut groups = group_images(images);
    groups.sort_by(|a, b| {
        let s = by_score_desc(a.score, b.score);
        let s = if reverse { s.reverse() } else { s };
        s.then(a.key.cmp(&b.key))
    });
    groups
        .into_iter()
        .take(m)
        .map(|g| {
            let mut members: Vec<&ScoredImage> = g.members.iter().map(|&i| &images[i]).collect();
            members.sort_by(|a, b| by_score_desc(a.score, b.score).then(a.tie_key().cmp(&b.tie_key())));
            RankedGroup {
                key: g.key,
                score: g.score,
                images: members
                    .into_iter()
                    .take(n)
                    .map(|img| RankedImage {
                        id: img.id.clone(),
                        z_dim: img.z_dim,
                        score: img.score,
                        effective_score: img.score,
                        tie: Some(img.tie_key()),
                    })
                    .collect(),
            }
        })
        .collect()
}

/// Within each group, images whose `z` differs from the leading image's
/// `z` have their score multiplied by `factor`; members are re-sorted.
pub fn diversity_penalty(mut groups: Vec<RankedGroup>, factor: f64) -> Vec<RankedGroup> {
    for g in &mut groups {
        let Some(first_z) = g.images.first().map(|i| i.z_dim) else { continue };
        for img in &mut g.images {
            img.effective_score = if img.z_dim == first_z { img.score } else { img.score * factor };
        }
        g.images.sort_by(|a, b| {
            by_score_desc(a.effective_score, b.effective_score)
                .then(by_score_desc(a.score, b.score))
                .then(a.tie.cmp(&b.tie))
        });
    }
    groups
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankOptions {
    pub per_group: usize,
    pub top_groups: usize,
    pub penalty: f64,
    pub reverse: bool,
}

impl Default for RankOptions {
    fn default() -> Self {
        Self {
            per_group: 4,
            top_groups: 30,
            penalty: 0.5,
            reverse: false,
        }
    }
}

pub fn rank(images: &[ScoredImage], opts: &RankOptions) -> Vec<RankedGroup> {
    diversity_penalty(
        select(images, opts.per_group, opts.top_groups, opts.reverse),
        opts.penalty,
    )
}
