//! Toy-scale two-stage detector: a strided convolutional backbone, an RPN
//! over square anchors, ROI max pooling, and an RCNN head with an explicit
//! background class.

pub mod proposals;
pub mod roi;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{clamp_prob, sigmoid, softmax, ConvGeom, Graph, Var};
use crate::datagen::Image;
use crate::error::{Error, Result};
use crate::geometry::{argsort_desc, nms_sorted, BBox};
use crate::params::{Init, ParamId, ParamStore};

pub use proposals::{anchor_grid, select_proposals, Proposal, ProposalMap};
pub use roi::{roi_bins, roi_pool};

/// Channel-major `channels x rows x cols` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    #[inline]
    pub fn at(&self, c: usize, u: usize, v: usize) -> f64 {
        self.data[(c * self.rows + u) * self.cols + v]
    }
}

/// Per-proposal `K`-dimensional features, row-major `n x K`.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceFeatures {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl InstanceFeatures {
    pub fn len(&self) -> usize {
        self.data.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    /// Distribution over background (index 0) and the `C` foreground classes.
    pub class_dist: Vec<f64>,
    pub refined_box: BBox,
    /// Index of the proposal this detection refines.
    pub source_proposal: usize,
}

/// Final detector output after thresholding and per-class NMS.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectedObject {
    pub class_id: usize,
    pub score: f64,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub backbone_channels: Vec<usize>,
    pub backbone_strides: Vec<usize>,
    pub rpn_hidden: usize,
    pub anchor_sizes: Vec<f64>,
    pub roi_size: usize,
    pub instance_dim: usize,
    pub image_classifier_hidden: usize,
    pub instance_classifier_hidden: usize,
    pub instance_dropout: f64,
    pub head_init_std: f64,
    pub proposal_nms_iou: f64,
    pub train_proposals: usize,
    pub test_proposals: usize,
    pub max_detections: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            classes: 3,
            backbone_channels: vec![16, 32, 32, 64],
            backbone_strides: vec![2, 2, 1, 1],
            rpn_hidden: 64,
            anchor_sizes: vec![8.0, 16.0, 24.0],
            roi_size: 4,
            instance_dim: 256,
            image_classifier_hidden: 32,
            instance_classifier_hidden: 128,
            instance_dropout: 0.5,
            head_init_std: 0.01,
            proposal_nms_iou: 0.7,
            train_proposals: 16,
            test_proposals: 32,
            max_detections: 50,
        }
    }
}

impl DetectorConfig {
    pub fn stride(&self) -> usize {
        self.backbone_strides.iter().product()
    }

    pub fn feature_dim(&self) -> usize {
        *self.backbone_channels.last().unwrap_or(&0)
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.height / self.stride(), self.width / self.stride())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.backbone_channels.is_empty() || self.backbone_channels.len() != self.backbone_strides.len() {
            return bad("backbone_channels and backbone_strides must be non-empty and equal length");
        }
        if self.backbone_strides.contains(&0) || self.backbone_channels.contains(&0) {
            return bad("backbone strides and channels must be positive");
        }
        if !self.height.is_multiple_of(self.stride()) || !self.width.is_multiple_of(self.stride()) {
            return bad("image size must be divisible by the backbone stride");
        }
        if self.classes == 0 || self.anchor_sizes.is_empty() || self.roi_size == 0 || self.instance_dim == 0 {
            return bad("classes, anchors, roi_size and instance_dim must be positive");
        }
        if !(0.0..1.0).contains(&self.instance_dropout) {
            return bad("instance_dropout must lie in [0, 1)");
        }
        if self.train_proposals == 0 || self.test_proposals == 0 {
            return bad("proposal counts must be >= 1");
        }
        if !(self.proposal_nms_iou > 0.0 && self.proposal_nms_iou <= 1.0) {
            return bad("proposal_nms_iou must lie in (0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Layer {
    w: ParamId,
    b: ParamId,
}

/// Parameter handles and geometry of the detector. Values live in a
/// [`ParamStore`] shared with the domain classifiers.
#[derive(Debug, Clone)]
pub struct Detector {
    pub cfg: DetectorConfig,
    backbone: Vec<(Layer, ConvGeom)>,
    rpn_conv: Layer,
    rpn_cls: Layer,
    rpn_reg: Layer,
    roi_fc: Layer,
    cls: Layer,
    reg: Layer,
    anchors: Vec<BBox>,
}

/// Graph handles for one image through backbone and RPN.
#[derive(Debug, Clone, Copy)]
pub struct ImageOutputs {
    /// `D x U x V`.
    pub features: Var,
    /// `R x U x V` logits.
    pub objectness_logits: Var,
    /// `4R x U x V`, channel `r * 4 + j`.
    pub deltas: Var,
}

/// Graph handles for a batch of ROIs through the RCNN head.
#[derive(Debug, Clone, Copy)]
pub struct InstanceOutputs {
    /// `n x K`.
    pub features: Var,
    /// `n x (C + 1)`.
    pub class_logits: Var,
    /// `n x 4`.
    pub deltas: Var,
}

fn add_layer<R: Rng>(
    store: &mut ParamStore,
    name: &str,
    w_shape: &[usize],
    init: Init,
    rng: &mut R,
) -> Layer {
    let w = store.add(&format!("{name}.weight"), w_shape, init, true, rng);
    let b = store.add(&format!("{name}.bias"), &[w_shape[0]], Init::Zeros, false, rng);
    Layer { w, b }
}

impl Detector {
    pub fn register<R: Rng>(cfg: DetectorConfig, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let head = Init::Gaussian(cfg.head_init_std);
        let mut backbone = Vec::new();
        let (mut c_in, mut h, mut w) = (3, cfg.height, cfg.width);
        for (i, (&c_out, &stride)) in cfg.backbone_channels.iter().zip(&cfg.backbone_strides).enumerate() {
            let geom = ConvGeom {
                c_in,
                h,
                w,
                c_out,
                k: 3,
                stride,
                pad: 1,
            };
            let fan_in = c_in * 9;
            let layer = add_layer(store, &format!("backbone.conv{}", i + 1), &[c_out, fan_in], Init::FanIn(fan_in), rng);
            backbone.push((layer, geom));
            (h, w) = geom.out_hw();
            c_in = c_out;
        }
        let d = cfg.feature_dim();
        let r = cfg.anchor_sizes.len();
        let rpn_conv = add_layer(store, "rpn.conv", &[cfg.rpn_hidden, d], head, rng);
        let rpn_cls = add_layer(store, "rpn.cls", &[r, cfg.rpn_hidden], head, rng);
        let rpn_reg = add_layer(store, "rpn.reg", &[4 * r, cfg.rpn_hidden], head, rng);
        let pooled = d * cfg.roi_size * cfg.roi_size;
        let roi_fc = add_layer(store, "rcnn.fc", &[cfg.instance_dim, pooled], head, rng);
        let cls = add_layer(store, "rcnn.cls", &[cfg.classes + 1, cfg.instance_dim], head, rng);
        let reg = add_layer(store, "rcnn.reg", &[4, cfg.instance_dim], head, rng);
        let (rows, cols) = cfg.grid();
        let anchors = anchor_grid(rows, cols, cfg.stride() as f64, &cfg.anchor_sizes);
        Ok(Self {
            cfg,
            backbone,
            rpn_conv,
            rpn_cls,
            rpn_reg,
            roi_fc,
            cls,
            reg,
            anchors,
        })
    }

    pub fn anchors(&self) -> &[BBox] {
        &self.anchors
    }

    /// Zeroes the RPN and RCNN output layers.
    pub fn zero_heads(&self, store: &mut ParamStore) {
        for l in [self.rpn_cls, self.rpn_reg, self.cls, self.reg] {
            store.get_mut(l.w).value.fill(0.0);
            store.get_mut(l.b).value.fill(0.0);
        }
    }

    fn leaf(&self, store: &ParamStore, g: &mut Graph, l: Layer) -> (Var, Var) {
        (store.leaf(g, l.w), store.leaf(g, l.b))
    }

    fn pointwise(&self, g: &mut Graph, store: &ParamStore, x: Var, l: Layer, c_in: usize, c_out: usize) -> Result<Var> {
        let (rows, cols) = self.cfg.grid();
        let (w, b) = self.leaf(store, g, l);
        g.conv2d(
            x,
            w,
            b,
            ConvGeom {
                c_in,
                h: rows,
                w: cols,
                c_out,
                k: 1,
                stride: 1,
                pad: 0,
            },
        )
    }

    pub fn check_image(&self, image: &Image) -> Result<()> {
        if image.height != self.cfg.height || image.width != self.cfg.width {
            return Err(Error::Config(format!(
                "image is {}x{}, detector expects {}x{}",
                image.height, image.width, self.cfg.height, self.cfg.width
            )));
        }
        Ok(())
    }

    pub fn backbone_graph(&self, store: &ParamStore, g: &mut Graph, image: &Image) -> Result<Var> {
        self.check_image(image)?;
        let mut x = g.input(image.to_chw(), vec![3, image.height, image.width]);
        for (layer, geom) in &self.backbone {
            let (w, b) = self.leaf(store, g, *layer);
            let y = g.conv2d(x, w, b, *geom)?;
            x = g.relu(y);
        }
        Ok(x)
    }

    pub fn rpn_graph(&self, store: &ParamStore, g: &mut Graph, features: Var) -> Result<(Var, Var)> {
        let d = self.cfg.feature_dim();
        let r = self.cfg.anchor_sizes.len();
        let hidden = self.pointwise(g, store, features, self.rpn_conv, d, self.cfg.rpn_hidden)?;
        let hidden = g.relu(hidden);
        let obj = self.pointwise(g, store, hidden, self.rpn_cls, self.cfg.rpn_hidden, r)?;
        let deltas = self.pointwise(g, store, hidden, self.rpn_reg, self.cfg.rpn_hidden, 4 * r)?;
        Ok((obj, deltas))
    }

    pub fn forward_image(&self, store: &ParamStore, g: &mut Graph, image: &Image) -> Result<ImageOutputs> {
        let features = self.backbone_graph(store, g, image)?;
        let (objectness_logits, deltas) = self.rpn_graph(store, g, features)?;
        Ok(ImageOutputs {
            features,
            objectness_logits,
            deltas,
        })
    }

    /// Reads the RPN outputs off the graph into `U x V x R` layout.
    pub fn proposal_map(&self, g: &Graph, out: &ImageOutputs) -> ProposalMap {
        let (rows, cols) = self.cfg.grid();
        proposal_map_from_raw(
            g.value(out.objectness_logits),
            g.value(out.deltas),
            rows,
            cols,
            self.cfg.anchor_sizes.len(),
        )
    }

    pub fn select(&self, pm: &ProposalMap, top_k: usize) -> Vec<Proposal> {
        select_proposals(
            pm,
            &self.anchors,
            top_k,
            self.cfg.proposal_nms_iou,
            (self.cfg.height, self.cfg.width),
        )
    }

    /// ROI-pools `features` under every box and runs the RCNN head.
    pub fn instance_graph(&self, store: &ParamStore, g: &mut Graph, features: Var, boxes: &[BBox]) -> Result<InstanceOutputs> {
        let (rows, cols) = self.cfg.grid();
        let stride = self.cfg.stride() as f64;
        let bins = boxes
            .iter()
            .map(|b| roi_bins(b, stride, rows, cols, self.cfg.roi_size))
            .collect::<Result<Vec<_>>>()?;
        let pooled = g.roi_pool(features, &bins);
        let (w, b) = self.leaf(store, g, self.roi_fc);
        let fc = g.linear(pooled, w, b)?;
        let inst = g.relu(fc);
        let (w, b) = self.leaf(store, g, self.cls);
        let class_logits = g.linear(inst, w, b)?;
        let (w, b) = self.leaf(store, g, self.reg);
        let deltas = g.linear(inst, w, b)?;
        Ok(InstanceOutputs {
            features: inst,
            class_logits,
            deltas,
        })
    }

    /// Backbone features for one image.
    pub fn backbone_forward(&self, store: &ParamStore, image: &Image) -> Result<FeatureMap> {
        let mut g = Graph::new();
        let f = self.backbone_graph(store, &mut g, image)?;
        let (rows, cols) = self.cfg.grid();
        Ok(FeatureMap {
            channels: self.cfg.feature_dim(),
            rows,
            cols,
            data: g.value(f).to_vec(),
        })
    }

    /// RPN head on precomputed backbone features.
    pub fn rpn_forward(&self, store: &ParamStore, features: &FeatureMap) -> Result<ProposalMap> {
        let (rows, cols) = self.cfg.grid();
        if features.channels != self.cfg.feature_dim() || features.rows != rows || features.cols != cols {
            return Err(Error::Shape(format!(
                "features {}x{}x{} do not match {}x{}x{}",
                features.rows,
                features.cols,
                features.channels,
                rows,
                cols,
                self.cfg.feature_dim()
            )));
        }
        let mut g = Graph::new();
        let f = g.input(features.data.clone(), vec![features.channels, rows, cols]);
        let (obj, deltas) = self.rpn_graph(store, &mut g, f)?;
        Ok(proposal_map_from_raw(
            g.value(obj),
            g.value(deltas),
            rows,
            cols,
            self.cfg.anchor_sizes.len(),
        ))
    }

    /// Pooled-and-projected instance features for the given boxes.
    pub fn instance_features(&self, store: &ParamStore, features: &FeatureMap, boxes: &[BBox]) -> Result<InstanceFeatures> {
        let mut g = Graph::new();
        let f = g.input(features.data.clone(), vec![features.channels, features.rows, features.cols]);
        let out = self.instance_graph(store, &mut g, f, boxes)?;
        Ok(InstanceFeatures {
            dim: self.cfg.instance_dim,
            data: g.value(out.features).to_vec(),
        })
    }

    /// RCNN classification and box refinement for instance features taken
    /// from `proposals` (same order).
    pub fn rcnn_forward(&self, store: &ParamStore, features: &InstanceFeatures, proposals: &[BBox]) -> Result<Vec<Detection>> {
        if features.len() != proposals.len() {
            return Err(Error::Shape(format!(
                "{} feature rows for {} proposals",
                features.len(),
                proposals.len()
            )));
        }
        let mut g = Graph::new();
        let x = g.input(features.data.clone(), vec![features.len(), features.dim]);
        let (w, b) = self.leaf(store, &mut g, self.cls);
        let logits = g.linear(x, w, b)?;
        let (w, b) = self.leaf(store, &mut g, self.reg);
        let deltas = g.linear(x, w, b)?;
        Ok(self.detections_from_raw(g.value(logits), g.value(deltas), proposals))
    }

    pub fn detections_from_raw(&self, logits: &[f64], deltas: &[f64], proposals: &[BBox]) -> Vec<Detection> {
        let k = self.cfg.classes + 1;
        proposals
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let d = &deltas[i * 4..i * 4 + 4];
                Detection {
                    class_dist: softmax(&logits[i * k..(i + 1) * k]),
                    refined_box: p
                        .decode([d[0], d[1], d[2], d[3]])
                        .clip(self.cfg.width as f64, self.cfg.height as f64),
                    source_proposal: i,
                }
            })
            .collect()
    }

    /// Full inference: proposals, RCNN, score threshold and per-class NMS.
    pub fn detect(&self, store: &ParamStore, image: &Image, score_threshold: f64, nms_iou: f64) -> Result<Vec<DetectedObject>> {
        let mut g = Graph::new();
        let out = self.forward_image(store, &mut g, image)?;
        let pm = self.proposal_map(&g, &out);
        let proposals: Vec<BBox> = self
            .select(&pm, self.cfg.test_proposals)
            .iter()
            .map(|p| p.bbox)
            .collect();
        if proposals.is_empty() {
            return Ok(Vec::new());
        }
        let inst = self.instance_graph(store, &mut g, out.features, &proposals)?;
        let dets = self.detections_from_raw(g.value(inst.class_logits), g.value(inst.deltas), &proposals);
        Ok(postprocess(&dets, self.cfg.classes, score_threshold, nms_iou, self.cfg.max_detections))
    }
}

/// Converts raw `R x U x V` objectness logits and `4R x U x V` deltas into a
/// [`ProposalMap`].
pub fn proposal_map_from_raw(logits: &[f64], deltas: &[f64], rows: usize, cols: usize, r: usize) -> ProposalMap {
    let plane = rows * cols;
    let mut objectness = Vec::with_capacity(plane * r);
    let mut box_deltas = Vec::with_capacity(plane * r * 4);
    for cell in 0..plane {
        for a in 0..r {
            objectness.push(clamp_prob(sigmoid(logits[a * plane + cell])));
            for j in 0..4 {
                box_deltas.push(deltas[(a * 4 + j) * plane + cell]);
            }
        }
    }
    ProposalMap {
        rows,
        cols,
        anchors_per_cell: r,
        objectness,
        box_deltas,
    }
}

/// Thresholds every foreground class score, then NMS per class. Background
/// (index 0) is never emitted. Output sorted by descending score.
pub fn postprocess(dets: &[Detection], classes: usize, score_threshold: f64, nms_iou: f64, limit: usize) -> Vec<DetectedObject> {
    let mut out = Vec::new();
    for c in 1..=classes {
        let cand: Vec<&Detection> = dets
            .iter()
            .filter(|d| d.class_dist[c] >= score_threshold && d.refined_box.is_valid())
            .collect();
        let boxes: Vec<BBox> = cand.iter().map(|d| d.refined_box).collect();
        let scores: Vec<f64> = cand.iter().map(|d| d.class_dist[c]).collect();
        let keep = nms_sorted(&boxes, &argsort_desc(&scores), nms_iou, limit);
        out.extend(keep.into_iter().map(|i| DetectedObject {
            class_id: c,
            score: scores[i],
            bbox: boxes[i],
        }));
    }
    out.sort_by(|a, b| b.score.total_cmp(&a.score));
    out.truncate(limit);
    out
}

/// Default display threshold for detections.
pub const DISPLAY_SCORE_THRESHOLD: f64 = 0.5;
/// Per-class NMS threshold at inference.
pub const DETECTION_NMS_IOU: f64 = 0.5;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::{rng_for, Stream};

    fn setup() -> (Detector, ParamStore) {
        let mut store = ParamStore::default();
        let mut rng = rng_for(0, Stream::Init, 0);
        let det = Detector::register(DetectorConfig::default(), &mut store, &mut rng).unwrap();
        (det, store)
    }

    fn test_image(seed: u64) -> Image {
        let mut rng = rng_for(seed, Stream::Sample, 0);
        let mut img = Image::filled(64, 64, [0.0; 3]);
        img.data.iter_mut().for_each(|v| *v = rng.random::<f64>());
        img
    }

    #[test]
    fn backbone_shape_and_determinism() {
        let (det, store) = setup();
        let img = test_image(1);
        let f = det.backbone_forward(&store, &img).unwrap();
        assert_eq!((f.rows, f.cols, f.channels), (16, 16, 64));
        assert_eq!(f, det.backbone_forward(&store, &img).unwrap());
        assert!(f.data.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn wrong_image_size_is_config_error() {
        let (det, store) = setup();
        let img = Image::filled(32, 64, [0.5; 3]);
        assert!(matches!(det.backbone_forward(&store, &img), Err(Error::Config(_))));
    }

    #[test]
    fn zero_heads_give_uniform_outputs() {
        let (det, mut store) = setup();
        det.zero_heads(&mut store);
        let img = test_image(2);
        let f = det.backbone_forward(&store, &img).unwrap();
        let pm = det.rpn_forward(&store, &f).unwrap();
        assert_eq!(pm.objectness.len(), 16 * 16 * 3);
        assert_eq!(pm.box_deltas.len(), 16 * 16 * 3 * 4);
        assert!(pm.objectness.iter().all(|&p| p == 0.5));
        let props: Vec<BBox> = det.select(&pm, 8).iter().map(|p| p.bbox).collect();
        // Zero deltas decode to the anchors themselves (clipped).
        for p in &props {
            assert!(det.anchors().iter().any(|a| a.clip(64.0, 64.0) == *p));
        }
        let inst = det.instance_features(&store, &f, &props).unwrap();
        let dets = det.rcnn_forward(&store, &inst, &props).unwrap();
        for (d, p) in dets.iter().zip(&props) {
            assert_eq!(d.class_dist, vec![0.25; 4]);
            assert_eq!(d.refined_box, *p);
        }
        assert!(det.detect(&store, &img, 0.5, 0.5).unwrap().is_empty());
    }

    #[test]
    fn postprocess_threshold_and_background() {
        let d = |dist: Vec<f64>, b: BBox| Detection {
            class_dist: dist,
            refined_box: b,
            source_proposal: 0,
        };
        let b = BBox::new(0.0, 0.0, 10.0, 10.0);
        let dets = vec![d(vec![0.05, 0.9, 0.03, 0.02], b), d(vec![0.97, 0.01, 0.01, 0.01], b)];
        let out = postprocess(&dets, 3, DISPLAY_SCORE_THRESHOLD, 0.5, 10);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].class_id, 1);
        assert_eq!(out[0].score, 0.9);
        let bg_only = vec![d(vec![0.97, 0.01, 0.01, 0.01], b)];
        assert!(postprocess(&bg_only, 3, 0.5, 0.5, 10).is_empty());
    }

    #[test]
    fn rcnn_softmax_on_simplex() {
        let (det, store) = setup();
        let mut rng = rng_for(4, Stream::Init, 4);
        for _ in 0..10 {
            let n = 100;
            let data: Vec<f64> = (0..n * 256).map(|_| rng.random_range(-5.0..5.0)).collect();
            let feats = InstanceFeatures { dim: 256, data };
            let props = vec![BBox::new(2.0, 2.0, 20.0, 20.0); n];
            for d in det.rcnn_forward(&store, &feats, &props).unwrap() {
                assert!((d.class_dist.iter().sum::<f64>() - 1.0).abs() < 1e-6);
                assert!(d.class_dist.iter().all(|&p| (0.0..=1.0).contains(&p)));
            }
        }
    }

    /// Perturbing one input pixel moves the features linearly (up to ReLU
    /// kinks): compare the directional change against the backprop gradient.
    #[test]
    fn backbone_input_sensitivity_matches_finite_differences() {
        let (det, store) = setup();
        let img = test_image(5);
        // Probe objective: weighted sum of features.
        let mut rng = rng_for(6, Stream::Init, 6);
        let weights: Vec<f64> = (0..16 * 16 * 64).map(|_| rng.random_range(-1.0..1.0)).collect();
        let objective = |im: &Image| -> f64 {
            let f = det.backbone_forward(&store, im).unwrap();
            f.data.iter().zip(&weights).map(|(a, b)| a * b).sum()
        };
        // Analytic gradient w.r.t. the input, placed on the tape as an extra
        // parameter slot after the detector's own.
        let slot = store.len();
        let mut g = Graph::new();
        let x = g.param(slot, &img.to_chw(), &[3, 64, 64]);
        let mut h = x;
        for (layer, geom) in &det.backbone {
            let (w, b) = (store.leaf(&mut g, layer.w), store.leaf(&mut g, layer.b));
            let y = g.conv2d(h, w, b, *geom).unwrap();
            h = g.relu(y);
        }
        let wl = g.input(weights.clone(), vec![1, weights.len()]);
        let bl = g.input(vec![0.0], vec![1]);
        let lin = g.linear(h, wl, bl).unwrap();
        let loss = g.sum(vec![lin]);
        let grads = g.backward(loss, slot + 1);
        let gx = grads.get(slot).unwrap();
        let eps = 1e-6;
        for &(y, xx, c) in &[(10usize, 10usize, 0usize), (31, 40, 1), (50, 3, 2)] {
            let mut plus = img.clone();
            plus.data[(y * 64 + xx) * 3 + c] += eps;
            let mut minus = img.clone();
            minus.data[(y * 64 + xx) * 3 + c] -= eps;
            let fd = (objective(&plus) - objective(&minus)) / (2.0 * eps);
            let an = gx[c * 64 * 64 + y * 64 + xx];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
            assert!(rel < 1e-3, "pixel ({y},{xx},{c}): fd {fd} vs {an}");
        }
    }
}
