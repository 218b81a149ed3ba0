//! Frame-level inference: filter, per-RoI segmentation, best prediction
//! selection.

use serde::{Deserialize, Serialize};

use crate::baselines::{hac_img, hac_roi, statistical_segment, ClassPercentages, HacConfig, Metric};
use crate::bps::{bps, BpsConfig, RoiVotes};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::filter::{filter_frame, FilterParams, RoiSample};
use crate::ingest::{Dataset, Sample};
use crate::pointnet::{object_probability, sample_targets, Batch, ModelState};
use crate::types::{ClassTable, PredictedLabeling};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Stxpn,
    Statistical,
    HacRoi,
    HacImg,
    Oracle,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stxpn" => Ok(Method::Stxpn),
            "statistical" => Ok(Method::Statistical),
            "hac-roi" => Ok(Method::HacRoi),
            "hac-img" => Ok(Method::HacImg),
            "oracle" => Ok(Method::Oracle),
            _ => Err(Error::Parameter(format!(
                "unknown method {s:?} (expected stxpn, statistical, hac-roi, hac-img or oracle)"
            ))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Stxpn => "stxpn",
            Method::Statistical => "statistical",
            Method::HacRoi => "hac-roi",
            Method::HacImg => "hac-img",
            Method::Oracle => "oracle",
        })
    }
}

/// A configured segmentation method.
#[derive(Debug, Clone)]
pub enum Segmenter {
    Network(ModelState),
    Statistical { percentages: ClassPercentages, metric: Metric },
    HacRoi(HacConfig),
    HacImg(HacConfig),
    /// Ground-truth binary segmentations passed through selection.
    Oracle,
}

impl Segmenter {
    pub fn method(&self) -> Method {
        match self {
            Segmenter::Network(_) => Method::Stxpn,
            Segmenter::Statistical { .. } => Method::Statistical,
            Segmenter::HacRoi(_) => Method::HacRoi,
            Segmenter::HacImg(_) => Method::HacImg,
            Segmenter::Oracle => Method::Oracle,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineParams {
    pub filter: FilterParams,
    pub bps: BpsConfig,
}

impl PipelineParams {
    pub fn validate(&self) -> Result<()> {
        self.filter.validate()?;
        self.bps.validate()
    }
}

/// Object probability per captured Stixel of every RoI.
pub fn segment_rois(segmenter: &Segmenter, rois: &[RoiSample], sample: &Sample, classes: &ClassTable) -> Result<Vec<Vec<f64>>> {
    let binary = |b: Vec<bool>| b.into_iter().map(|x| if x { 1.0 } else { 0.0 }).collect();
    match segmenter {
        Segmenter::Network(model) => {
            if rois.is_empty() {
                return Ok(Vec::new());
            }
            let batch = Batch::stack(rois.iter().map(|r| r.features.view()))?;
            let pc = object_probability(&model.logits(&batch)?);
            Ok((0..rois.len()).map(|s| pc[batch.range(s)].to_vec()).collect())
        }
        Segmenter::Statistical { percentages, metric } => rois
            .iter()
            .map(|r| {
                let p = percentages.get(classes.merged(r.roi.box_label()))?;
                Ok(binary(statistical_segment(r, p, *metric)?))
            })
            .collect(),
        Segmenter::HacRoi(cfg) => rois.iter().map(|r| Ok(binary(hac_roi(r, cfg, classes)?))).collect(),
        Segmenter::Oracle => Ok(rois
            .iter()
            .map(|r| {
                sample_targets(r, &sample.gt, classes)
                    .targets
                    .into_iter()
                    .map(f64::from)
                    .collect()
            })
            .collect()),
        Segmenter::HacImg(_) => Err(Error::Parameter("hac-img does not segment RoIs".into())),
    }
}

pub fn infer_frame(segmenter: &Segmenter, sample: &Sample, params: &PipelineParams, classes: &ClassTable) -> Result<PredictedLabeling> {
    if let Segmenter::HacImg(cfg) = segmenter {
        return hac_img(&sample.frame, cfg, classes);
    }
    let rois: Vec<RoiSample> = filter_frame(&sample.frame, &sample.detections, &params.filter, classes)?
        .into_iter()
        .map(|(_, s)| s)
        .collect();
    let pcs = segment_rois(segmenter, &rois, sample, classes)?;
    let votes: Vec<RoiVotes> = rois
        .into_iter()
        .zip(pcs)
        .map(|(r, pc)| RoiVotes {
            box_label: classes.merged(r.roi.box_label()),
            c_bb: r.roi.box_conf(),
            stixel_ids: r.stixel_ids,
            pc,
        })
        .collect();
    Ok(bps(&sample.frame, &votes, &params.bps))
}

pub fn infer_dataset(
    segmenter: &Segmenter,
    dataset: &Dataset,
    params: &PipelineParams,
    exec: Execution,
) -> Result<Vec<PredictedLabeling>> {
    params.validate()?;
    exec.map(&dataset.samples, |s| infer_frame(segmenter, s, params, &dataset.classes))
        .into_iter()
        .collect()
}
