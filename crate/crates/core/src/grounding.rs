//! Visual grounding of candidate entities: an entity is grounded when the
//! open-vocabulary detector or the open-vocabulary segmenter confirms it.
//! The grounded set is the union of both verdicts.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{self, BackendError, Detector, Segmenter};
use crate::model::{Entity, EntitySet, ImageRef};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("{name} must lie in {range}, got {value}")]
    OutOfRange {
        name: &'static str,
        range: &'static str,
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroundingConfig {
    pub detection_threshold: f64,
    pub segmentation_confidence_threshold: f64,
    pub segmentation_min_coverage: f64,
    /// Skip segmentation for entities the detector already grounded.
    /// Changes the evidence recorded, never the verdicts.
    pub short_circuit: bool,
}

impl Default for GroundingConfig {
    fn default() -> Self {
        Self {
            detection_threshold: 0.3,
            segmentation_confidence_threshold: 0.5,
            segmentation_min_coverage: 0.0,
            short_circuit: false,
        }
    }
}

impl GroundingConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let open = |name, value: f64| {
            if value > 0.0 && value < 1.0 {
                Ok(())
            } else {
                Err(ConfigError::OutOfRange {
                    name,
                    range: "(0, 1)",
                    value,
                })
            }
        };
        open("detection_threshold", self.detection_threshold)?;
        open("segmentation_confidence_threshold", self.segmentation_confidence_threshold)?;
        if !(self.segmentation_min_coverage >= 0.0 && self.segmentation_min_coverage < 1.0) {
            return Err(ConfigError::OutOfRange {
                name: "segmentation_min_coverage",
                range: "[0, 1)",
                value: self.segmentation_min_coverage,
            });
        }
        Ok(())
    }

    fn detected(&self, score: f64) -> bool {
        score >= self.detection_threshold
    }

    fn segmented(&self, confidence: f64, coverage: f64) -> bool {
        confidence >= self.segmentation_confidence_threshold && coverage >= self.segmentation_min_coverage
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundedVia {
    Detection,
    Segmentation,
    Both,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityEvidence {
    pub entity: Entity,
    pub det_score: f64,
    /// `None` when segmentation was disabled or short-circuited.
    pub seg_conf: Option<f64>,
    pub seg_cov: Option<f64>,
    pub via: GroundedVia,
}

impl EntityEvidence {
    pub fn grounded(&self) -> bool {
        self.via != GroundedVia::None
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundingResult {
    pub grounded: EntitySet,
    pub via_detection: EntitySet,
    pub via_segmentation: EntitySet,
    pub ungrounded: EntitySet,
    /// One entry per candidate, in candidate order.
    pub evidence: Vec<EntityEvidence>,
}

impl GroundingResult {
    pub fn evidence_for(&self, entity: &Entity) -> Option<&EntityEvidence> {
        self.evidence.iter().find(|e| e.entity.key() == entity.key())
    }
}

/// Queries both tools for every candidate (the segmenter may be absent) and
/// records the union verdict. Empty input makes no backend calls.
pub fn ground_entities(
    candidates: &EntitySet,
    image: &ImageRef,
    cfg: &GroundingConfig,
    detector: &dyn Detector,
    segmenter: Option<&dyn Segmenter>,
) -> Result<GroundingResult, BackendError> {
    if candidates.is_empty() {
        return Ok(GroundingResult::default());
    }
    let queries = candidates.surfaces();
    let detections = backend::detect(detector, image, &queries)?;

    let mut seg_scores: Vec<Option<(f64, f64)>> = vec![None; queries.len()];
    if let Some(seg) = segmenter {
        let pending: Vec<usize> = (0..queries.len())
            .filter(|&i| !(cfg.short_circuit && cfg.detected(detections[i].max_confidence)))
            .collect();
        if !pending.is_empty() {
            let subset: Vec<String> = pending.iter().map(|&i| queries[i].clone()).collect();
            for (i, r) in pending.into_iter().zip(backend::segment(seg, image, &subset)?) {
                seg_scores[i] = Some((r.confidence, r.coverage));
            }
        }
    }

    let mut out = GroundingResult::default();
    for ((entity, det), seg) in candidates.iter().zip(&detections).zip(seg_scores) {
        let by_det = cfg.detected(det.max_confidence);
        let by_seg = seg.is_some_and(|(c, v)| cfg.segmented(c, v));
        let via = match (by_det, by_seg) {
            (true, true) => GroundedVia::Both,
            (true, false) => GroundedVia::Detection,
            (false, true) => GroundedVia::Segmentation,
            (false, false) => GroundedVia::None,
        };
        if by_det {
            out.via_detection.insert(entity.clone());
        }
        if by_seg {
            out.via_segmentation.insert(entity.clone());
        }
        if by_det || by_seg {
            out.grounded.insert(entity.clone());
        } else {
            out.ungrounded.insert(entity.clone());
        }
        out.evidence.push(EntityEvidence {
            entity: entity.clone(),
            det_score: det.max_confidence,
            seg_conf: seg.map(|s| s.0),
            seg_cov: seg.map(|s| s.1),
            via,
        });
    }
    Ok(out)
}
