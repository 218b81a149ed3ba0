use std::collections::BTreeMap;

use crate::geometry::{union_overlap, Rect};
use crate::ingest::mask::{decode_code, InstanceMask};
use crate::types::{ClassId, ClassTable, StixelFrame};

fn rects(frame: &StixelFrame, ids: &[u32]) -> Vec<Rect> {
    ids.iter().filter_map(|&id| frame.get(id)).map(|s| s.rect()).collect()
}

/// IoU of the pixel regions covered by two sets of Stixels of one frame.
pub fn instance_iou(pred: &[u32], gt: &[u32], frame: &StixelFrame) -> f64 {
    let (inter, union) = union_overlap(&rects(frame, pred), &rects(frame, gt));
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Pixel footprint of a mask instance.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskRegion {
    pub code: u16,
    pub class: ClassId,
    pub pixels: usize,
}

/// Thing-class regions of a mask, in code order. Codes whose class is not in
/// the table are ignored.
pub fn mask_regions(mask: &InstanceMask, classes: &ClassTable) -> Vec<MaskRegion> {
    let mut counts: BTreeMap<u16, usize> = BTreeMap::new();
    for &c in &mask.codes {
        if c >= 1000 {
            *counts.entry(c).or_insert(0) += 1;
        }
    }
    counts
        .into_iter()
        .filter_map(|(code, pixels)| {
            let inst = decode_code(code)?;
            let class = classes.by_mask_id(inst.class_code)?;
            Some(MaskRegion { code, class, pixels })
        })
        .collect()
}

/// Pixel areas of predicted regions and their intersections with mask
/// regions: `(areas[p], inter[p][g])`. A predicted region is the pixel
/// rasterization of the union of its Stixel rectangles.
pub fn mask_overlaps(
    frame: &StixelFrame,
    predicted: &[Vec<u32>],
    mask: &InstanceMask,
    regions: &[MaskRegion],
) -> (Vec<usize>, Vec<Vec<usize>>) {
    let index: BTreeMap<u16, usize> = regions.iter().enumerate().map(|(i, r)| (r.code, i)).collect();
    let mut stamp = vec![0u32; mask.width * mask.height];
    let mut areas = Vec::with_capacity(predicted.len());
    let mut inter = Vec::with_capacity(predicted.len());
    for (p, ids) in predicted.iter().enumerate() {
        let mark = p as u32 + 1;
        let mut area = 0;
        let mut hits = vec![0usize; regions.len()];
        for r in rects(frame, ids) {
            let b = r.pixel_bounds(mask.width, mask.height);
            for v in b.v0..b.v1 {
                let row = v * mask.width;
                for u in b.u0..b.u1 {
                    if stamp[row + u] == mark {
                        continue;
                    }
                    stamp[row + u] = mark;
                    area += 1;
                    if let Some(&g) = index.get(&mask.codes[row + u]) {
                        hits[g] += 1;
                    }
                }
            }
        }
        areas.push(area);
        inter.push(hits);
    }
    (areas, inter)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Stixel;
    use proptest::prelude::*;

    fn frame(rects: &[(f64, f64, f64, f64)]) -> StixelFrame {
        let stixels = rects
            .iter()
            .enumerate()
            .map(|(i, &(a, b, c, d))| Stixel {
                stixel_id: i as u32,
                x: 0.0,
                y: 0.0,
                z: 1.0,
                w: 1.0,
                h: 1.0,
                u_tl: a,
                v_tl: b,
                u_br: c,
                v_br: d,
                label: 0,
                label_conf: 1.0,
            })
            .collect();
        StixelFrame::new(0, 64, 64, stixels)
    }

    fn raster(frame: &StixelFrame, ids: &[u32]) -> Vec<bool> {
        let mut grid = vec![false; 64 * 64];
        for r in rects(frame, ids) {
            let b = r.pixel_bounds(64, 64);
            for v in b.v0..b.v1 {
                for u in b.u0..b.u1 {
                    grid[v * 64 + u] = true;
                }
            }
        }
        grid
    }

    #[test]
    fn identical_and_disjoint() {
        let f = frame(&[(0.0, 0.0, 4.0, 4.0), (10.0, 10.0, 12.0, 20.0)]);
        assert_eq!(instance_iou(&[0, 1], &[1, 0], &f), 1.0);
        assert_eq!(instance_iou(&[0], &[1], &f), 0.0);
    }

    #[test]
    fn hand_case() {
        // pred: [0,4)x[0,4) ∪ [2,6)x[0,4) = 24; gt: [4,8)x[0,4) = 16; inter 8.
        let f = frame(&[(0.0, 0.0, 4.0, 4.0), (2.0, 0.0, 6.0, 4.0), (4.0, 0.0, 8.0, 4.0)]);
        assert!((instance_iou(&[0, 1], &[2], &f) - 8.0 / 32.0).abs() < 1e-12);
    }

    #[test]
    fn mask_overlap_counts_pixels_once() {
        let f = frame(&[(0.0, 0.0, 4.0, 4.0), (2.0, 0.0, 6.0, 4.0)]);
        let mut mask = InstanceMask::new(64, 64);
        for v in 0..4 {
            for u in 4..8 {
                mask.set(u, v, 26001);
            }
        }
        let classes = ClassTable::cityscapes();
        let regions = mask_regions(&mask, &classes);
        assert_eq!(regions, vec![MaskRegion { code: 26001, class: 2, pixels: 16 }]);
        let (areas, inter) = mask_overlaps(&f, &[vec![0, 1]], &mask, &regions);
        assert_eq!(areas, vec![24]);
        assert_eq!(inter, vec![vec![8]]);
    }

    fn rect_strategy() -> impl Strategy<Value = (f64, f64, f64, f64)> {
        (0u32..60, 0u32..60, 1u32..12, 1u32..12).prop_map(|(u, v, w, h)| {
            (u as f64, v as f64, (u + w).min(64) as f64, (v + h).min(64) as f64)
        })
    }

    proptest! {
        #[test]
        fn iou_matches_rasterization(rs in prop::collection::vec(rect_strategy(), 2..8), split in 1usize..7) {
            let f = frame(&rs);
            let n = rs.len() as u32;
            let split = (split as u32).min(n - 1);
            let a: Vec<u32> = (0..split).collect();
            let b: Vec<u32> = (split / 2..n).collect();
            let (ga, gb) = (raster(&f, &a), raster(&f, &b));
            let inter = ga.iter().zip(&gb).filter(|(x, y)| **x && **y).count();
            let union = ga.iter().zip(&gb).filter(|(x, y)| **x || **y).count();
            let expect = inter as f64 / union as f64;
            let got = instance_iou(&a, &b, &f);
            prop_assert!((got - expect).abs() < 1e-12);
            prop_assert!((got - instance_iou(&b, &a, &f)).abs() < 1e-15);
        }
    }
}
