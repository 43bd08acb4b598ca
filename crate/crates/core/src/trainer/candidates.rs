use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::geometry::{
    conic_through, l2l_error, line_through, p2c_error, p2l_error, p2p_error, ErrorSignal, KernelKind,
};
use crate::neural::KernelGraph;
use crate::scalar::Real;
use crate::scene_sim::{FeatureClass, FeatureObservation, IMAGE_HEIGHT, IMAGE_WIDTH};

/// One hypothesized feature association: member ids grouped by geometric entity.
///
/// p2p: `[[a], [b]]`; p2l: `[[point], [end0, end1]]`; l2l: `[[a0, a1], [b0, b1]]`;
/// p2c: `[[point], [c0, .., c4]]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Association {
    pub kind: KernelKind,
    pub entities: Vec<Vec<u32>>,
}

impl Association {
    pub fn ids(&self) -> Vec<u32> {
        self.entities.iter().flatten().copied().collect()
    }

    pub fn id_set(&self) -> Vec<u32> {
        let mut ids = self.ids();
        ids.sort_unstable();
        ids
    }
}

#[derive(Default)]
struct Inventory {
    points: Vec<u32>,
    segments: Vec<Vec<u32>>,
    conics: Vec<Vec<u32>>,
}

fn inventory<'a, T: Real + 'a>(observations: impl IntoIterator<Item = &'a FeatureObservation<T>>) -> Inventory {
    let mut points = BTreeMap::new();
    let mut segments: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    let mut conics: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for o in observations {
        match (o.feature_class, o.entity) {
            (FeatureClass::SegmentEndpoint, Some(e)) => segments.entry(e).or_default().push(o.id),
            (FeatureClass::ConicPoint, Some(e)) => conics.entry(e).or_default().push(o.id),
            _ => {
                points.insert(o.id, ());
            }
        }
    }
    let tidy = |m: BTreeMap<u32, Vec<u32>>, size: usize| {
        m.into_values()
            .map(|mut v| {
                v.sort_unstable();
                v.dedup();
                v
            })
            .filter(|v| v.len() == size)
            .collect()
    };
    Inventory { points: points.into_keys().collect(), segments: tidy(segments, 2), conics: tidy(conics, 5) }
}

/// Enumerates every candidate association of `kind` among the features seen in
/// `frames`. Candidates are identified by feature id, so one list serves all frames.
pub fn build_candidates<T: Real>(
    frames: &[Vec<FeatureObservation<T>>],
    kind: KernelKind,
) -> Result<Vec<Association>, TrainError> {
    let inv = inventory(frames.iter().flatten());
    let few = |needed: &str| TrainError::TooFewFeatures { kind, needed: needed.to_string() };
    let entities: Vec<Vec<Vec<u32>>> = match kind {
        KernelKind::P2p => {
            let p = &inv.points;
            if p.len() < 2 {
                return Err(few("two points"));
            }
            (0..p.len()).flat_map(|i| (i + 1..p.len()).map(move |j| vec![vec![p[i]], vec![p[j]]])).collect()
        }
        KernelKind::P2l => {
            if inv.points.is_empty() || inv.segments.is_empty() {
                return Err(few("a point and a segment"));
            }
            inv.points.iter().flat_map(|&p| inv.segments.iter().map(move |s| vec![vec![p], s.clone()])).collect()
        }
        KernelKind::L2l => {
            let s = &inv.segments;
            if s.len() < 2 {
                return Err(few("two segments"));
            }
            (0..s.len()).flat_map(|i| (i + 1..s.len()).map(move |j| vec![s[i].clone(), s[j].clone()])).collect()
        }
        KernelKind::P2c => {
            if inv.points.is_empty() || inv.conics.is_empty() {
                return Err(few("a point and a five-point conic"));
            }
            inv.points.iter().flat_map(|&p| inv.conics.iter().map(move |c| vec![vec![p], c.clone()])).collect()
        }
    };
    Ok(entities.into_iter().map(|entities| Association { kind, entities }).collect())
}

/// Network input for one observed feature: descriptor followed by the pixel
/// position scaled to roughly `[-1, 1]`.
pub fn node_encoding<T: Real>(o: &FeatureObservation<T>) -> Vec<T> {
    let (hw, hh) = (T::lit(IMAGE_WIDTH / 2.0), T::lit(IMAGE_HEIGHT / 2.0));
    let mut enc = o.descriptor.clone();
    enc.push((o.pixel.u - hw) / hw);
    enc.push((o.pixel.v - hh) / hh);
    enc
}

/// Network input and geometric error of one association on one frame.
pub type Instance<T> = (KernelGraph<T>, ErrorSignal<T>);

/// Graph and geometric error of `assoc` on one frame, or `None` when a member is
/// missing, invisible, or the members are geometrically degenerate.
pub fn instantiate<T: Real>(
    assoc: &Association,
    frame: &[FeatureObservation<T>],
) -> Result<Option<Instance<T>>, TrainError> {
    let mut members: Vec<Vec<&FeatureObservation<T>>> = Vec::with_capacity(assoc.entities.len());
    for ent in &assoc.entities {
        let mut obs = Vec::with_capacity(ent.len());
        for id in ent {
            match frame.iter().find(|o| o.id == *id) {
                Some(o) if o.visible => obs.push(o),
                _ => return Ok(None),
            }
        }
        members.push(obs);
    }
    let px = |e: usize, k: usize| members[e][k].pixel;
    let error = match assoc.kind {
        KernelKind::P2p => Ok(p2p_error(px(0, 0), px(1, 0))),
        KernelKind::P2l => line_through(px(1, 0), px(1, 1)).map(|l| p2l_error(px(0, 0), &l)),
        KernelKind::L2l => line_through(px(1, 0), px(1, 1)).and_then(|l| l2l_error((px(0, 0), px(0, 1)), &l)),
        KernelKind::P2c => {
            let pts = [0, 1, 2, 3, 4].map(|k| px(1, k));
            conic_through(&pts).map(|c| p2c_error(px(0, 0), &c))
        }
    };
    let Ok(error) = error else { return Ok(None) };
    let entities = members.iter().map(|ent| ent.iter().map(|o| node_encoding(o)).collect()).collect();
    let graph = KernelGraph::from_entities(assoc.kind, entities)?;
    Ok(Some((graph, error)))
}
