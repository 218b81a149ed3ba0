use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::evaluated_classes;
use crate::exec::Execution;
use crate::filter::{filter_frame, FilterParams, RoiSample};
use crate::ingest::Dataset;
use crate::pointnet::sample_targets;
use crate::types::{ClassId, ClassTable};

/// Class-wise mean fraction of captured Stixels that belong to the boxed
/// object, keyed by merged class.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassPercentages {
    pub values: BTreeMap<ClassId, f64>,
}

impl ClassPercentages {
    pub fn get(&self, class: ClassId) -> Result<f64> {
        self.values
            .get(&class)
            .copied()
            .ok_or_else(|| Error::Invalid(format!("no percentage for class {class}")))
    }

    pub fn validate(&self) -> Result<()> {
        for (&c, &p) in &self.values {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::Invalid(format!("percentage {p} of class {c} outside (0, 1]")));
            }
        }
        Ok(())
    }

    pub fn to_csv(&self, classes: &ClassTable) -> String {
        let mut s = String::from("class,p\n");
        for (&c, &p) in &self.values {
            s.push_str(&format!("{},{p:.6}\n", classes.name(c)));
        }
        s
    }

    pub fn from_csv(text: &str, classes: &ClassTable) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (n, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let err = |m: &str| Error::Parse {
                path: "percentages".into(),
                line: n + 1,
                message: m.to_string(),
            };
            let (name, p) = line.split_once(',').ok_or_else(|| err("expected class,p"))?;
            let class = classes.index_of(name.trim()).ok_or_else(|| err("unknown class"))?;
            let p: f64 = p.trim().parse().map_err(|_| err("invalid number"))?;
            values.insert(class, p);
        }
        let out = ClassPercentages { values };
        out.validate()?;
        Ok(out)
    }
}

/// Mean object fraction of associated RoIs, per merged class. Evaluated
/// classes without any associated RoI get the mean over all RoIs.
pub fn estimate_percentages(dataset: &Dataset, filter: &FilterParams, exec: Execution) -> Result<ClassPercentages> {
    let per_frame = exec.map(&dataset.samples, |s| -> Result<Vec<(ClassId, f64)>> {
        let rois = filter_frame(&s.frame, &s.detections, filter, &dataset.classes)?;
        Ok(rois
            .iter()
            .filter_map(|(_, sample)| {
                let t = sample_targets(sample, &s.gt, &dataset.classes);
                t.instance?;
                let class = dataset.classes.merged(sample.roi.box_label());
                Some((class, t.positives() as f64 / sample.len() as f64))
            })
            .collect())
    });
    let mut sums: BTreeMap<ClassId, (f64, usize)> = BTreeMap::new();
    for f in per_frame {
        for (c, frac) in f? {
            let e = sums.entry(c).or_insert((0.0, 0));
            e.0 += frac;
            e.1 += 1;
        }
    }
    let (total, count) = sums.values().fold((0.0, 0), |a, &(s, n)| (a.0 + s, a.1 + n));
    if count == 0 {
        return Err(Error::Empty("associated RoIs"));
    }
    let mut values: BTreeMap<ClassId, f64> = sums.into_iter().map(|(c, (s, n))| (c, s / n as f64)).collect();
    for c in evaluated_classes(&dataset.classes) {
        values.entry(c).or_insert(total / count as f64);
    }
    Ok(ClassPercentages { values })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    L1,
    #[default]
    L2,
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(Metric::L1),
            "l2" => Ok(Metric::L2),
            _ => Err(Error::Parameter(format!("unknown metric {s:?}"))),
        }
    }
}

/// Number of Stixels the statistical baseline labels.
pub fn center_count(p: f64, n: usize) -> usize {
    // The epsilon keeps exact products such as 0.5 * 10 from rounding down.
    ((p * n as f64 + 1e-9).floor() as usize).min(n)
}

/// Label the `floor(p N')` Stixels closest to the RoI center.
pub fn statistical_segment(sample: &RoiSample, p: f64, metric: Metric) -> Result<Vec<bool>> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Parameter(format!("percentage {p} outside (0, 1]")));
    }
    let (cu, cv) = sample.roi.rect.center();
    let dist = |i: usize| {
        let (u, v) = sample.rects[i].center();
        let (du, dv) = (u - cu, v - cv);
        match metric {
            Metric::L1 => du.abs() + dv.abs(),
            Metric::L2 => (du * du + dv * dv).sqrt(),
        }
    };
    let mut order: Vec<usize> = (0..sample.len()).collect();
    order.sort_by(|&a, &b| dist(a).total_cmp(&dist(b)).then(sample.stixel_ids[a].cmp(&sample.stixel_ids[b])));
    let mut labels = vec![false; sample.len()];
    for &i in &order[..center_count(p, sample.len())] {
        labels[i] = true;
    }
    Ok(labels)
}
