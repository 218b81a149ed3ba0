use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::RoiSample;
use crate::types::{ClassId, ClassTable, InstanceId, InstanceLabeling, PredictedLabeling, StixelFrame};

/// Complete-linkage clustering on `(x, z)` with per-class stop distances in
/// meters, keyed by class name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HacConfig {
    pub mu: BTreeMap<String, f64>,
}

impl Default for HacConfig {
    fn default() -> Self {
        let mu = [
            ("person", 1.0),
            ("rider", 5.0),
            ("car", 5.0),
            ("truck", 15.0),
            ("bus", 20.0),
            ("motorcycle", 5.0),
            ("bicycle", 2.5),
        ];
        HacConfig {
            mu: mu.iter().map(|&(n, m)| (n.to_string(), m)).collect(),
        }
    }
}

impl HacConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, &m) in &self.mu {
            if !(m > 0.0) {
                return Err(Error::Parameter(format!("mu of {name} must be positive")));
            }
        }
        Ok(())
    }

    /// Stop distance of a class, looked up after merging.
    pub fn mu(&self, classes: &ClassTable, class: ClassId) -> Result<f64> {
        let name = classes.name(classes.merged(class));
        self.mu
            .get(name)
            .copied()
            .ok_or_else(|| Error::Parameter(format!("no HAC distance for class {name}")))
    }
}

fn distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dz) = (a.0 - b.0, a.1 - b.1);
    (dx * dx + dz * dz).sqrt()
}

/// Agglomerative complete-linkage clustering. Merging stops once the
/// smallest cluster distance exceeds `mu`; equal distances merge the
/// lexicographically smallest pair, where a cluster is identified by its
/// smallest point index. Returns clusters ordered by smallest member, each
/// sorted ascending.
pub fn hac_cluster(points: &[(f64, f64)], mu: f64) -> Vec<Vec<usize>> {
    let n = points.len();
    let mut d = vec![0.0f64; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = distance(points[i], points[j]);
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    let mut active = vec![true; n];
    let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    // Nearest active partner with a larger index, smallest index on ties.
    let nearest = |i: usize, d: &[f64], active: &[bool]| -> Option<(f64, usize)> {
        let mut best: Option<(f64, usize)> = None;
        for j in i + 1..n {
            if active[j] && best.is_none_or(|(b, _)| d[i * n + j] < b) {
                best = Some((d[i * n + j], j));
            }
        }
        best
    };
    let mut nn: Vec<Option<(f64, usize)>> = (0..n).map(|i| nearest(i, &d, &active)).collect();
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..n {
            if let (true, Some((v, j))) = (active[i], nn[i]) {
                if best.is_none_or(|(b, _, _)| v < b) {
                    best = Some((v, i, j));
                }
            }
        }
        let Some((v, i, j)) = best else { break };
        if v > mu {
            break;
        }
        for k in 0..n {
            if active[k] && k != i && k != j {
                let m = d[i * n + k].max(d[j * n + k]);
                d[i * n + k] = m;
                d[k * n + i] = m;
            }
        }
        active[j] = false;
        let moved = std::mem::take(&mut members[j]);
        members[i].extend(moved);
        for k in 0..n {
            if active[k] && (k == i || nn[k].is_some_and(|(_, p)| p == i || p == j)) {
                nn[k] = nearest(k, &d, &active);
            }
        }
    }
    let mut out: Vec<Vec<usize>> = members
        .into_iter()
        .zip(&active)
        .filter(|(_, &a)| a)
        .map(|(mut m, _)| {
            m.sort_unstable();
            m
        })
        .collect();
    out.sort_by_key(|m| m[0]);
    out
}

/// Cluster the Stixels of each semantic thing class separately; every
/// cluster becomes one instance with confidence 1.
pub fn hac_img(frame: &StixelFrame, config: &HacConfig, classes: &ClassTable) -> Result<PredictedLabeling> {
    let mut by_class: BTreeMap<ClassId, Vec<usize>> = BTreeMap::new();
    for (i, s) in frame.stixels.iter().enumerate() {
        let c = classes.merged(s.label);
        if classes.is_thing(c) {
            by_class.entry(c).or_default().push(i);
        }
    }
    let mut labeling = InstanceLabeling::background(frame);
    let mut scores = BTreeMap::new();
    for (class, idx) in by_class {
        let mu = config.mu(classes, class)?;
        let points: Vec<(f64, f64)> = idx.iter().map(|&i| (frame.stixels[i].x, frame.stixels[i].z)).collect();
        for (k, cluster) in hac_cluster(&points, mu).into_iter().enumerate() {
            let id = InstanceId::object(class, k as u32);
            for p in cluster {
                labeling.labels.insert(frame.stixels[idx[p]].stixel_id, id);
            }
            scores.insert(id, 1.0);
        }
    }
    Ok(PredictedLabeling { labeling, scores })
}

/// Cluster the captured Stixels that carry the box's label and keep the
/// cluster with the largest summed pixel area (ties to the cluster with the
/// smaller first Stixel).
pub fn hac_roi(sample: &RoiSample, config: &HacConfig, classes: &ClassTable) -> Result<Vec<bool>> {
    let label = classes.merged(sample.roi.box_label());
    let mu = config.mu(classes, label)?;
    let idx: Vec<usize> = (0..sample.len())
        .filter(|&i| classes.merged(sample.labels[i]) == label)
        .collect();
    let mut out = vec![false; sample.len()];
    if idx.is_empty() {
        return Ok(out);
    }
    let points: Vec<(f64, f64)> = idx
        .iter()
        .map(|&i| {
            let r = sample.features.row(i);
            (r[crate::filter::col::X], r[crate::filter::col::Z])
        })
        .collect();
    let clusters = hac_cluster(&points, mu);
    let area = |c: &[usize]| c.iter().map(|&p| sample.rects[idx[p]].area()).sum::<f64>();
    let mut best = &clusters[0];
    let mut best_area = area(best);
    for c in &clusters[1..] {
        let a = area(c);
        if a > best_area {
            best = c;
            best_area = a;
        }
    }
    for &p in best {
        out[idx[p]] = true;
    }
    Ok(out)
}
