//! The full model: backbone + BiFPN feature extractor, shared projection
//! head for co-attention, and the comparer MLP.
//!
//! Parameters live in a flat [`ParamSet`]; registration order is a pure
//! function of the config, so checkpoints restore by position and name.

use std::path::{Path, PathBuf};

use ndarray::{Array1, Array3, ArrayD, IxDyn};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Scalar, Var};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamSet};
use crate::pyramid::{BackboneKind, ExtractorConfig, FeaturePyramid};

const BN_EPS: f64 = 1e-5;
const FUSION_EPS: f64 = 1e-4;
const SMALL_CNN_STEM: usize = 16;
const SMALL_CNN_BLOCKS: [usize; 4] = [24, 32, 48, 64];

fn default_mlp_hidden() -> Vec<usize> {
    vec![128, 64]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub extractor: ExtractorConfig,
    pub input_size: usize,
    /// Latent width of the shared co-attention projection.
    pub projection_dim: usize,
    /// Hidden widths of the comparer MLP (input is 2C, output 1).
    #[serde(default = "default_mlp_hidden")]
    pub mlp_hidden: Vec<usize>,
    pub norm_mean: [f32; 3],
    pub norm_std: [f32; 3],
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            extractor: ExtractorConfig::default(),
            input_size: 256,
            projection_dim: 64,
            mlp_hidden: default_mlp_hidden(),
            norm_mean: [0.5, 0.5, 0.5],
            norm_std: [0.5, 0.5, 0.5],
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.extractor.validate(self.input_size)?;
        if self.projection_dim < 1 {
            return Err(Error::Config("projection_dim must be >= 1".into()));
        }
        if self.mlp_hidden.is_empty() || self.mlp_hidden.iter().any(|&w| w == 0) {
            return Err(Error::Config("mlp_hidden must be non-empty positive widths".into()));
        }
        if self.norm_std.iter().any(|&s| s <= 0.0) {
            return Err(Error::Config("norm_std entries must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConvIds {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct BnIds {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub mean: ParamId,
    pub var: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct LinearIds {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Debug, Clone)]
struct BasicBlockIds {
    conv1: ConvIds,
    bn1: BnIds,
    conv2: ConvIds,
    bn2: BnIds,
    down: Option<(ConvIds, BnIds)>,
}

#[derive(Debug, Clone)]
enum BackboneLayout {
    SmallCnn {
        stem: ConvIds,
        blocks: Vec<ConvIds>,
    },
    Resnet18 {
        conv1: ConvIds,
        bn1: BnIds,
        layers: Vec<Vec<BasicBlockIds>>,
    },
}

#[derive(Debug, Clone)]
struct BifpnRepeat {
    /// Top-down fusion conv + two weights per level 0..L-1.
    td: Vec<(ConvIds, ParamId, ParamId)>,
    /// Bottom-up fusion conv + weights per level 1..L; the third weight is
    /// present on middle levels only.
    out: Vec<(ConvIds, ParamId, ParamId, Option<ParamId>)>,
    /// Used when L == 1: a single refinement conv.
    solo: Option<ConvIds>,
}

#[derive(Debug, Clone)]
struct ModelLayout {
    backbone: BackboneLayout,
    laterals: Vec<ConvIds>,
    bifpn: Vec<BifpnRepeat>,
    projection: LinearIds,
    mlp: Vec<LinearIds>,
}

enum Init {
    ConvHe,
    Linear,
    Zero,
    One,
}

/// Graph-side patch set: the patch-matrix node plus its grid geometry.
#[derive(Debug, Clone)]
pub struct PatchSetVar {
    /// [N, C] patch embeddings on the tape.
    pub var: Var,
    pub coords: Vec<(usize, usize)>,
    pub scale_index: usize,
    pub stride: usize,
    pub grid: (usize, usize),
}

pub struct Model<F: Scalar> {
    pub config: ModelConfig,
    pub params: ParamSet<F>,
    layout: ModelLayout,
}

struct Registrar<'a, F: Scalar> {
    ps: ParamSet<F>,
    init: &'a mut dyn FnMut(&str, &[usize], Init) -> ArrayD<F>,
}

impl<'a, F: Scalar> Registrar<'a, F> {
    fn tensor(&mut self, name: String, shape: &[usize], kind: Init) -> ParamId {
        let value = (self.init)(&name, shape, kind);
        self.ps.register(name, value)
    }

    fn conv(&mut self, name: &str, co: usize, ci: usize, k: usize) -> ConvIds {
        ConvIds {
            w: self.tensor(format!("{name}.w"), &[co, ci, k, k], Init::ConvHe),
            b: self.tensor(format!("{name}.b"), &[co], Init::Zero),
        }
    }

    fn bn(&mut self, name: &str, c: usize) -> BnIds {
        BnIds {
            gamma: self.tensor(format!("{name}.gamma"), &[c], Init::One),
            beta: self.tensor(format!("{name}.beta"), &[c], Init::Zero),
            mean: self.tensor(format!("{name}.mean"), &[c], Init::Zero),
            var: self.tensor(format!("{name}.var"), &[c], Init::One),
        }
    }
}

fn register_all<F: Scalar>(
    config: &ModelConfig,
    mut init: impl FnMut(&str, &[usize], Init) -> ArrayD<F>,
) -> (ParamSet<F>, ModelLayout) {
    let mut reg = Registrar {
        ps: ParamSet::<F>::new(),
        init: &mut init,
    };

    let levels = config.extractor.levels;
    let c_out = config.extractor.channels;

    let (backbone, tap_channels) = match config.extractor.backbone {
        BackboneKind::SmallCnn => {
            let stem = reg.conv("backbone.stem", SMALL_CNN_STEM, 3, 3);
            let mut blocks = Vec::new();
            let mut cin = SMALL_CNN_STEM;
            for (i, &co) in SMALL_CNN_BLOCKS.iter().enumerate() {
                blocks.push(reg.conv(&format!("backbone.block{i}"), co, cin, 3));
                cin = co;
            }
            let taps: Vec<usize> = (0..levels).map(|i| SMALL_CNN_BLOCKS[i + 1]).collect();
            (BackboneLayout::SmallCnn { stem, blocks }, taps)
        }
        BackboneKind::PretrainedResnet18 => {
            let conv1 = reg.conv("backbone.conv1", 64, 3, 7);
            let bn1 = reg.bn("backbone.bn1", 64);
            let widths = [64usize, 128, 256, 512];
            let mut layers = Vec::new();
            let mut cin = 64usize;
            for (li, &w) in widths.iter().enumerate() {
                let mut blocks = Vec::new();
                for bi in 0..2 {
                    let stride = if li > 0 && bi == 0 { 2 } else { 1 };
                    let name = format!("backbone.layer{}.{bi}", li + 1);
                    let conv1b = reg.conv(&format!("{name}.conv1"), w, cin, 3);
                    let bn1b = reg.bn(&format!("{name}.bn1"), w);
                    let conv2b = reg.conv(&format!("{name}.conv2"), w, w, 3);
                    let bn2b = reg.bn(&format!("{name}.bn2"), w);
                    let down = if stride != 1 || cin != w {
                        let dc = ConvIds {
                            w: reg.tensor(format!("{name}.down.w"), &[w, cin, 1, 1], Init::ConvHe),
                            b: reg.tensor(format!("{name}.down.b"), &[w], Init::Zero),
                        };
                        let db = reg.bn(&format!("{name}.down.bn"), w);
                        Some((dc, db))
                    } else {
                        None
                    };
                    blocks.push(BasicBlockIds {
                        conv1: conv1b,
                        bn1: bn1b,
                        conv2: conv2b,
                        bn2: bn2b,
                        down,
                    });
                    cin = w;
                }
                layers.push(blocks);
            }
            let taps: Vec<usize> = (0..levels).map(|i| widths[i + 1]).collect();
            (BackboneLayout::Resnet18 { conv1, bn1, layers }, taps)
        }
    };

    let mut laterals: Vec<ConvIds> = Vec::with_capacity(tap_channels.len());
    for (i, &tc) in tap_channels.iter().enumerate() {
        let name = format!("fpn.lateral{i}");
        laterals.push(ConvIds {
            w: reg.tensor(format!("{name}.w"), &[c_out, tc, 1, 1], Init::ConvHe),
            b: reg.tensor(format!("{name}.b"), &[c_out], Init::Zero),
        });
    }

    let mut bifpn = Vec::new();
    for r in 0..config.extractor.bifpn_repeats {
        if levels == 1 {
            let solo = reg.conv(&format!("fpn.r{r}.solo"), c_out, c_out, 3);
            bifpn.push(BifpnRepeat {
                td: Vec::new(),
                out: Vec::new(),
                solo: Some(solo),
            });
            continue;
        }
        let mut td = Vec::new();
        for i in 0..levels - 1 {
            let cids = reg.conv(&format!("fpn.r{r}.td{i}"), c_out, c_out, 3);
            let wa = reg.tensor(format!("fpn.r{r}.td{i}.wa"), &[1], Init::One);
            let wb = reg.tensor(format!("fpn.r{r}.td{i}.wb"), &[1], Init::One);
            td.push((cids, wa, wb));
        }
        let mut out = Vec::new();
        for i in 1..levels {
            let cids = reg.conv(&format!("fpn.r{r}.out{i}"), c_out, c_out, 3);
            let wa = reg.tensor(format!("fpn.r{r}.out{i}.wa"), &[1], Init::One);
            let wb = reg.tensor(format!("fpn.r{r}.out{i}.wb"), &[1], Init::One);
            let wc = if i < levels - 1 {
                Some(reg.tensor(format!("fpn.r{r}.out{i}.wc"), &[1], Init::One))
            } else {
                None
            };
            out.push((cids, wa, wb, wc));
        }
        bifpn.push(BifpnRepeat { td, out, solo: None });
    }

    let projection = LinearIds {
        w: reg.tensor(
            "attention.projection.w".into(),
            &[config.projection_dim, c_out],
            Init::Linear,
        ),
        b: reg.tensor(
            "attention.projection.b".into(),
            &[config.projection_dim],
            Init::Zero,
        ),
    };

    let mut mlp = Vec::new();
    let mut prev = 2 * c_out;
    for (i, &width) in config.mlp_hidden.iter().chain(std::iter::once(&1)).enumerate() {
        let name = format!("comparer.fc{i}");
        mlp.push(LinearIds {
            w: reg.tensor(format!("{name}.w"), &[width, prev], Init::Linear),
            b: reg.tensor(format!("{name}.b"), &[width], Init::Zero),
        });
        prev = width;
    }

    (
        reg.ps,
        ModelLayout {
            backbone,
            laterals,
            bifpn,
            projection,
            mlp,
        },
    )
}

impl<F: Scalar> Model<F> {
    /// Fresh model with seed-determined random initialization. The
    /// pretrained backbone additionally requires a weights file.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0f64, 1.0).unwrap();
        let (params, layout) = register_all::<F>(&config, |_, shape, kind| {
            let n: usize = shape.iter().product();
            match kind {
                Init::Zero => ArrayD::from_elem(IxDyn(shape), F::zero()),
                Init::One => ArrayD::from_elem(IxDyn(shape), F::one()),
                Init::ConvHe => {
                    let fan_in: usize = shape[1..].iter().product();
                    let std = (2.0 / fan_in as f64).sqrt();
                    let data: Vec<F> = (0..n)
                        .map(|_| F::from_f64(normal.sample(&mut rng) * std))
                        .collect();
                    ArrayD::from_shape_vec(IxDyn(shape), data).unwrap()
                }
                Init::Linear => {
                    let std = (2.0 / (shape[0] + shape[1]) as f64).sqrt();
                    let data: Vec<F> = (0..n)
                        .map(|_| F::from_f64(normal.sample(&mut rng) * std))
                        .collect();
                    ArrayD::from_shape_vec(IxDyn(shape), data).unwrap()
                }
            }
        });
        let mut model = Model {
            config,
            params,
            layout,
        };
        if model.config.extractor.backbone == BackboneKind::PretrainedResnet18 {
            let path = model.config.extractor.backbone_weights.clone().ok_or_else(|| {
                Error::Config(
                    "backbone pretrained-resnet18 requires extractor.backbone_weights".into(),
                )
            })?;
            model.load_backbone_weights(&path)?;
        }
        Ok(model)
    }

    /// Rebuild a model around restored parameter tensors, validating the
    /// expected name/shape sequence for this config.
    pub fn from_parts(config: ModelConfig, params: ParamSet<F>) -> Result<Self> {
        config.validate()?;
        let (expected, layout) =
            register_all::<F>(&config, |_, shape, _| ArrayD::from_elem(IxDyn(shape), F::zero()));
        if expected.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "parameter count mismatch: expected {}, got {}",
                expected.len(),
                params.len()
            )));
        }
        for (e, got) in expected.entries().iter().zip(params.entries()) {
            if e.name != got.name || e.value.shape() != got.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter mismatch: expected {} {:?}, got {} {:?}",
                    e.name,
                    e.value.shape(),
                    got.name,
                    got.value.shape()
                )));
            }
        }
        Ok(Model {
            config,
            params,
            layout,
        })
    }

    fn load_backbone_weights(&mut self, path: &Path) -> Result<()> {
        let tensors = crate::checkpoint::read_named_tensors(path)?;
        let mut by_name: std::collections::BTreeMap<String, ArrayD<f32>> =
            tensors.into_iter().collect();
        for i in 0..self.params.len() {
            let id = ParamId(i);
            let name = self.params.name(id).to_string();
            if !name.starts_with("backbone.") {
                continue;
            }
            let tensor = by_name.remove(&name).ok_or_else(|| {
                Error::Checkpoint(format!("backbone weights file {} lacks {name}", path.display()))
            })?;
            if tensor.shape() != self.params.value(id).shape() {
                return Err(Error::Checkpoint(format!(
                    "backbone weight {name}: expected shape {:?}, file has {:?}",
                    self.params.value(id).shape(),
                    tensor.shape()
                )));
            }
            *self.params.value_mut(id) = tensor.mapv(|v| F::from_f64(v as f64));
        }
        if !by_name.is_empty() {
            return Err(Error::Checkpoint(format!(
                "backbone weights file {} has unknown tensors: {:?}",
                path.display(),
                by_name.keys().take(4).collect::<Vec<_>>()
            )));
        }
        Ok(())
    }

    pub fn projection(&self) -> LinearIds {
        self.layout.projection
    }

    /// Normalize an H×W×3 [0,1] image to the model's CHW input tensor.
    fn normalize(&self, image: &Array3<f32>) -> Result<ArrayD<F>> {
        let (h, w, c) = image.dim();
        let n = self.config.input_size;
        if h != n || w != n || c != 3 {
            return Err(Error::Shape(format!(
                "expected preprocessed {n}x{n}x3 image, got {h}x{w}x{c}"
            )));
        }
        let mut out = ndarray::Array3::<F>::zeros((3, n, n));
        for ch in 0..3 {
            let mean = self.config.norm_mean[ch];
            let std = self.config.norm_std[ch];
            for y in 0..n {
                for x in 0..n {
                    out[(ch, y, x)] = F::from_f64(((image[(y, x, ch)] - mean) / std) as f64);
                }
            }
        }
        Ok(out.into_dyn())
    }

    fn conv_block(&self, g: &mut Graph<F>, x: Var, ids: ConvIds, stride: usize, pad: usize) -> Var {
        let w = g.param(&self.params, ids.w);
        let b = g.param(&self.params, ids.b);
        g.conv2d(x, w, b, stride, pad)
    }

    fn bn(&self, g: &mut Graph<F>, x: Var, ids: BnIds) -> Var {
        let gamma = g.param(&self.params, ids.gamma);
        let beta = g.param(&self.params, ids.beta);
        let mean = self
            .params
            .value(ids.mean)
            .view()
            .into_dimensionality::<ndarray::Ix1>()
            .unwrap()
            .to_owned();
        let var = self
            .params
            .value(ids.var)
            .view()
            .into_dimensionality::<ndarray::Ix1>()
            .unwrap()
            .to_owned();
        g.batchnorm_frozen(x, gamma, beta, mean, var, F::from_f64(BN_EPS))
    }

    fn backbone_taps(&self, g: &mut Graph<F>, x: Var) -> Vec<Var> {
        let levels = self.config.extractor.levels;
        match &self.layout.backbone {
            BackboneLayout::SmallCnn { stem, blocks } => {
                let mut h = self.conv_block(g, x, *stem, 2, 1);
                h = g.relu(h);
                h = self.conv_block(g, h, blocks[0], 2, 1);
                h = g.relu(h);
                let mut taps = Vec::with_capacity(levels);
                for i in 1..=levels {
                    h = self.conv_block(g, h, blocks[i], 2, 1);
                    h = g.relu(h);
                    taps.push(h);
                }
                taps
            }
            BackboneLayout::Resnet18 { conv1, bn1, layers } => {
                let mut h = self.conv_block(g, x, *conv1, 2, 3);
                h = self.bn(g, h, *bn1);
                h = g.relu(h);
                h = g.maxpool2d(h, 3, 2, 1);
                let mut taps = Vec::with_capacity(levels);
                for (li, layer) in layers.iter().enumerate() {
                    for (bi, block) in layer.iter().enumerate() {
                        let stride = if li > 0 && bi == 0 { 2 } else { 1 };
                        h = self.basic_block(g, h, block, stride);
                    }
                    if li >= 1 {
                        taps.push(h);
                        if taps.len() == levels {
                            break;
                        }
                    }
                }
                taps
            }
        }
    }

    fn basic_block(&self, g: &mut Graph<F>, x: Var, ids: &BasicBlockIds, stride: usize) -> Var {
        let mut h = self.conv_block(g, x, ids.conv1, stride, 1);
        h = self.bn(g, h, ids.bn1);
        h = g.relu(h);
        h = self.conv_block(g, h, ids.conv2, 1, 1);
        h = self.bn(g, h, ids.bn2);
        let shortcut = match &ids.down {
            Some((dc, dbn)) => {
                let d = self.conv_block(g, x, *dc, stride, 0);
                self.bn(g, d, *dbn)
            }
            None => x,
        };
        let sum = g.add(h, shortcut);
        g.relu(sum)
    }

    /// Fast-normalized fusion: relu-gated weights, normalized by their sum.
    fn fuse(&self, g: &mut Graph<F>, inputs: &[(Var, ParamId)]) -> Var {
        let gated: Vec<(Var, Var)> = inputs
            .iter()
            .map(|(x, wid)| {
                let w = g.param(&self.params, *wid);
                (*x, g.relu(w))
            })
            .collect();
        let weights: Vec<Var> = gated.iter().map(|(_, w)| *w).collect();
        let denom_sum = g.add_n(&weights);
        let denom = g.add_scalar(denom_sum, F::from_f64(FUSION_EPS));
        let terms: Vec<Var> = gated
            .iter()
            .map(|(x, w)| g.mul_by_scalar_var(*x, *w))
            .collect();
        let num = g.add_n(&terms);
        g.div_by_scalar_var(num, denom)
    }

    fn bifpn_repeat(&self, g: &mut Graph<F>, repeat: &BifpnRepeat, inputs: &[Var]) -> Vec<Var> {
        let levels = inputs.len();
        if let Some(solo) = &repeat.solo {
            let c = self.conv_block(g, inputs[0], *solo, 1, 1);
            return vec![g.relu(c)];
        }
        // Top-down: coarse information flows into finer levels.
        let mut td = vec![Var::default(); levels];
        td[levels - 1] = inputs[levels - 1];
        for i in (0..levels - 1).rev() {
            let (conv, wa, wb) = repeat.td[i];
            let up = g.upsample_nearest2(td[i + 1]);
            let fused = self.fuse(g, &[(inputs[i], wa), (up, wb)]);
            let c = self.conv_block(g, fused, conv, 1, 1);
            td[i] = g.relu(c);
        }
        // Bottom-up: refined fine levels flow back down.
        let mut out = vec![Var::default(); levels];
        out[0] = td[0];
        for i in 1..levels {
            let (conv, wa, wb, wc) = repeat.out[i - 1];
            let down = g.maxpool2d(out[i - 1], 2, 2, 0);
            let fused = match wc {
                Some(wc) => self.fuse(g, &[(inputs[i], wa), (td[i], wb), (down, wc)]),
                None => self.fuse(g, &[(inputs[i], wa), (down, wb)]),
            };
            let c = self.conv_block(g, fused, conv, 1, 1);
            out[i] = g.relu(c);
        }
        out
    }

    /// Forward pass to the L pyramid levels (graph nodes, finest first).
    pub fn forward_pyramid(&self, g: &mut Graph<F>, image: &Array3<f32>) -> Result<Vec<Var>> {
        let x = g.input(self.normalize(image)?);
        let taps = self.backbone_taps(g, x);
        let mut levels: Vec<Var> = taps
            .iter()
            .zip(self.layout.laterals.iter())
            .map(|(t, lat)| self.conv_block(g, *t, *lat, 1, 0))
            .collect();
        for repeat in &self.layout.bifpn {
            levels = self.bifpn_repeat(g, repeat, &levels);
        }
        Ok(levels)
    }

    /// Flatten a pyramid level node into its dense patch-set node.
    pub fn patchify_var(&self, g: &mut Graph<F>, level: Var, scale_index: usize) -> PatchSetVar {
        let dims = g.value(level).shape().to_vec();
        let (c, h, w) = (dims[0], dims[1], dims[2]);
        let flat = g.reshape(level, &[c, h * w]);
        let patches = g.transpose2(flat);
        let coords = (0..h)
            .flat_map(|r| (0..w).map(move |col| (r, col)))
            .collect();
        PatchSetVar {
            var: patches,
            coords,
            scale_index,
            stride: self.config.extractor.strides()[scale_index],
            grid: (h, w),
        }
    }

    pub fn forward_patchsets(
        &self,
        g: &mut Graph<F>,
        image: &Array3<f32>,
    ) -> Result<Vec<PatchSetVar>> {
        let levels = self.forward_pyramid(g, image)?;
        Ok(levels
            .into_iter()
            .enumerate()
            .map(|(i, l)| self.patchify_var(g, l, i))
            .collect())
    }

    /// Comparer MLP on concatenated [q, r] rows; sigmoid after every layer,
    /// so outputs are strictly inside (0, 1).
    pub fn comparer_forward(&self, g: &mut Graph<F>, pairs: Var) -> Var {
        let mut h = pairs;
        for ids in &self.layout.mlp {
            let w = g.param(&self.params, ids.w);
            let b = g.param(&self.params, ids.b);
            h = g.linear(h, w, b);
            h = g.sigmoid(h);
        }
        h
    }

    /// Shared projection into the co-attention latent space.
    pub fn project(&self, g: &mut Graph<F>, patches: Var) -> Var {
        let w = g.param(&self.params, self.layout.projection.w);
        let b = g.param(&self.params, self.layout.projection.b);
        g.linear(patches, w, b)
    }

    /// Zero every parameter whose name starts with `prefix` (test support).
    pub fn zero_params_with_prefix(&mut self, prefix: &str) {
        for e in self.params.entries_mut() {
            if e.name.starts_with(prefix) {
                e.value.fill(F::zero());
            }
        }
    }

    pub fn backbone_weights_path(&self) -> Option<&PathBuf> {
        self.config.extractor.backbone_weights.as_ref()
    }
}

impl Model<f32> {
    /// Value-level pyramid extraction (evaluation mode).
    pub fn extract_pyramid(&self, image: &Array3<f32>) -> Result<FeaturePyramid> {
        let mut g = Graph::<f32>::new();
        let levels = self.forward_pyramid(&mut g, image)?;
        let arrays: Vec<Array3<f32>> = levels
            .iter()
            .map(|v| {
                g.value(*v)
                    .view()
                    .into_dimensionality::<ndarray::Ix3>()
                    .unwrap()
                    .to_owned()
            })
            .collect();
        Ok(FeaturePyramid {
            levels: arrays,
            scales: self.config.extractor.strides().to_vec(),
        })
    }

    /// Mean-pooled top-level feature vector, the default FID embedding.
    pub fn global_feature(&self, image: &Array3<f32>) -> Result<Array1<f64>> {
        let pyr = self.extract_pyramid(image)?;
        let top = pyr.levels.last().unwrap();
        let (c, h, w) = top.dim();
        let mut out = Array1::<f64>::zeros(c);
        for ch in 0..c {
            let mut s = 0.0f64;
            for y in 0..h {
                for x in 0..w {
                    s += top[(ch, y, x)] as f64;
                }
            }
            out[ch] = s / (h * w) as f64;
        }
        Ok(out)
    }
}
