//! The counting network.
//!
//! Backbone: four parallel convolutions with different kernel sizes,
//! concatenated along channels, then `pool_stages` rounds of
//! 2x2 max-pool + 3x3 conv. A dilated block with tied weights is applied
//! `shared_repeats` times; its output is fused by element-wise addition with
//! the features of every earlier stage (max-pooled down to the final
//! resolution), followed by one more dilated conv.
//!
//! Heads on the fused features:
//! - classification: SPP -> FC -> PReLU -> FC -> count-class logits
//! - segmentation: conv -> conv1x1 -> sigmoid
//! - density: conv -> conv1x1 -> ReLU gives the intermediate map; the
//!   segmentation map is added to it and a conv -> conv1x1 -> ReLU stack
//!   produces the final map.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use segcrowd_autograd::{spp_output_len, ConvSpec, Tape, Tensor, Var};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::groundtruth::NUM_CLASSES;
use crate::io::checkpoint::Checkpoint;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub branch_kernels: Vec<usize>,
    pub branch_filters: usize,
    pub trunk_filters: usize,
    pub pool_stages: usize,
    pub shared_dilation: usize,
    pub shared_repeats: usize,
    pub fusion_dilation: usize,
    pub head_filters: usize,
    pub spp_levels: Vec<usize>,
    pub fc_widths: (usize, usize),
    /// Route the segmentation map into the density pathway.
    pub seg_attention: bool,
    pub init_std: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            in_channels: 1,
            branch_kernels: vec![3, 5, 7, 9],
            branch_filters: 16,
            trunk_filters: 16,
            pool_stages: 2,
            shared_dilation: 2,
            shared_repeats: 2,
            fusion_dilation: 2,
            head_filters: 8,
            spp_levels: vec![1, 2, 4],
            fc_widths: (64, NUM_CLASSES),
            seg_attention: true,
            init_std: 0.01,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// A few filters per layer, for gradient checks and quick tests.
    pub fn tiny(seed: u64) -> Self {
        Self {
            branch_filters: 2,
            trunk_filters: 3,
            head_filters: 2,
            shared_repeats: 2,
            fc_widths: (4, NUM_CLASSES),
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(format!("model config: {m}")));
        if self.branch_kernels.len() != 4 {
            return bad(format!(
                "exactly 4 branches required, got {}",
                self.branch_kernels.len()
            ));
        }
        if let Some(k) = self.branch_kernels.iter().find(|&&k| k % 2 == 0) {
            return bad(format!("branch kernel sizes must be odd, got {k}"));
        }
        if self.fc_widths.1 != NUM_CLASSES {
            return bad(format!(
                "classifier width must be {NUM_CLASSES}, got {}",
                self.fc_widths.1
            ));
        }
        for (name, v) in [
            ("in_channels", self.in_channels),
            ("branch_filters", self.branch_filters),
            ("trunk_filters", self.trunk_filters),
            ("head_filters", self.head_filters),
            ("shared_dilation", self.shared_dilation),
            ("fusion_dilation", self.fusion_dilation),
            ("fc hidden width", self.fc_widths.0),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if self.spp_levels.is_empty() || self.spp_levels.contains(&0) {
            return bad("spp levels must be non-empty and positive".into());
        }
        if self.pool_stages > 8 {
            return bad(format!("{} pooling stages is too many", self.pool_stages));
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return bad(format!("init_std must be positive, got {}", self.init_std));
        }
        Ok(())
    }

    /// Spatial downsampling between input and output maps.
    pub fn output_stride(&self) -> usize {
        1 << self.pool_stages
    }

    /// Smallest input extent accepted on each axis.
    pub fn min_input_size(&self) -> usize {
        let level = self.spp_levels.iter().copied().max().unwrap_or(1);
        level.max(2 - usize::from(self.pool_stages == 0)) * self.output_stride()
    }

    pub fn output_dims(&self, height: usize, width: usize) -> (usize, usize) {
        let mut dims = (height, width);
        for _ in 0..self.pool_stages {
            dims = (dims.0 / 2, dims.1 / 2);
        }
        dims
    }

    fn branch_spec(&self, k: usize) -> ConvSpec {
        ConvSpec::same(k, self.in_channels, self.branch_filters, 1)
    }

    fn stage_spec(&self, stage: usize) -> ConvSpec {
        let c_in = if stage == 0 {
            4 * self.branch_filters
        } else {
            self.trunk_filters
        };
        ConvSpec::same(3, c_in, self.trunk_filters, 1)
    }

    fn trunk_channels(&self) -> usize {
        if self.pool_stages == 0 {
            4 * self.branch_filters
        } else {
            self.trunk_filters
        }
    }

    fn shared_spec(&self) -> ConvSpec {
        let c = self.trunk_channels();
        ConvSpec::same(3, c, c, self.shared_dilation)
    }

    fn fusion_spec(&self) -> ConvSpec {
        let c = self.trunk_channels();
        ConvSpec::same(3, c, c, self.fusion_dilation)
    }

    fn head_spec(&self) -> ConvSpec {
        ConvSpec::same(3, self.trunk_channels(), self.head_filters, 1)
    }

    fn refine_spec(&self) -> ConvSpec {
        ConvSpec::same(3, 1, self.head_filters, 1)
    }

    fn project_spec(&self) -> ConvSpec {
        ConvSpec::same(1, self.head_filters, 1, 1)
    }

    /// Every parameter with its dims and initialiser, in a fixed order.
    fn layout(&self) -> Vec<(String, Vec<usize>, Init)> {
        let mut out = Vec::new();
        let mut conv = |name: &str, spec: ConvSpec| {
            out.push((format!("{name}.weight"), spec.weight_dims().to_vec(), Init::Normal));
            out.push((format!("{name}.bias"), vec![spec.out_channels], Init::Zero));
        };
        for (i, &k) in self.branch_kernels.iter().enumerate() {
            conv(&format!("branch{i}"), self.branch_spec(k));
        }
        for s in 0..self.pool_stages {
            conv(&format!("stage{s}"), self.stage_spec(s));
        }
        conv("shared", self.shared_spec());
        conv("fusion", self.fusion_spec());
        conv("seg.conv", self.head_spec());
        conv("seg.out", self.project_spec());
        conv("den.conv", self.head_spec());
        conv("den.out", self.project_spec());
        conv("fin.conv", self.refine_spec());
        conv("fin.out", self.project_spec());
        let (hidden, classes) = self.fc_widths;
        let spp_len = spp_output_len(self.trunk_channels(), &self.spp_levels);
        out.push(("cls.fc1.weight".into(), vec![hidden, spp_len], Init::Normal));
        out.push(("cls.fc1.bias".into(), vec![hidden], Init::Zero));
        out.push(("cls.prelu.slope".into(), vec![hidden], Init::Const(0.25)));
        out.push(("cls.fc2.weight".into(), vec![classes, hidden], Init::Normal));
        out.push(("cls.fc2.bias".into(), vec![classes], Init::Zero));
        out
    }

    fn meta_records(&self) -> Vec<(String, Tensor)> {
        let vec = |v: &[usize]| Tensor::from_vec(v.iter().map(|&x| x as f64).collect()).expect("finite");
        let one = |x: usize| Tensor::scalar(x as f64);
        vec![
            ("meta.in_channels".into(), one(self.in_channels)),
            ("meta.branch_kernels".into(), vec(&self.branch_kernels)),
            ("meta.branch_filters".into(), one(self.branch_filters)),
            ("meta.trunk_filters".into(), one(self.trunk_filters)),
            ("meta.pool_stages".into(), one(self.pool_stages)),
            ("meta.shared_dilation".into(), one(self.shared_dilation)),
            ("meta.shared_repeats".into(), one(self.shared_repeats)),
            ("meta.fusion_dilation".into(), one(self.fusion_dilation)),
            ("meta.head_filters".into(), one(self.head_filters)),
            ("meta.spp_levels".into(), vec(&self.spp_levels)),
            ("meta.fc_widths".into(), vec(&[self.fc_widths.0, self.fc_widths.1])),
            ("meta.seg_attention".into(), one(usize::from(self.seg_attention))),
        ]
    }

    fn from_meta(meta: &BTreeMap<String, Tensor>) -> Result<Self> {
        let get = |name: &str| -> Result<Vec<usize>> {
            let t = meta
                .get(&format!("meta.{name}"))
                .ok_or_else(|| Error::format("SCNW", format!("missing meta.{name}")))?;
            t.values()
                .iter()
                .map(|&v| {
                    if v >= 0.0 && v.fract() == 0.0 && v < 1e9 {
                        Ok(v as usize)
                    } else {
                        Err(Error::format("SCNW", format!("meta.{name} holds a non-integer {v}")))
                    }
                })
                .collect()
        };
        let scalar = |name: &str| -> Result<usize> {
            match get(name)?.as_slice() {
                [v] => Ok(*v),
                other => Err(Error::format(
                    "SCNW",
                    format!("meta.{name} should hold one value, got {}", other.len()),
                )),
            }
        };
        let fc = get("fc_widths")?;
        if fc.len() != 2 {
            return Err(Error::format("SCNW", "meta.fc_widths should hold two values"));
        }
        Ok(Self {
            in_channels: scalar("in_channels")?,
            branch_kernels: get("branch_kernels")?,
            branch_filters: scalar("branch_filters")?,
            trunk_filters: scalar("trunk_filters")?,
            pool_stages: scalar("pool_stages")?,
            shared_dilation: scalar("shared_dilation")?,
            shared_repeats: scalar("shared_repeats")?,
            fusion_dilation: scalar("fusion_dilation")?,
            head_filters: scalar("head_filters")?,
            spp_levels: get("spp_levels")?,
            fc_widths: (fc[0], fc[1]),
            seg_attention: scalar("seg_attention")? != 0,
            ..Self::default()
        })
    }
}

#[derive(Debug, Clone, Copy)]
enum Init {
    Normal,
    Zero,
    Const(f64),
}

/// All learnable tensors of a network, keyed by layer name.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    tensors: BTreeMap<String, Tensor>,
}

/// Zero-mean Gaussian weights (`init_std`), zero biases, PReLU slopes 0.25.
pub fn build(config: &ModelConfig) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let normal = Normal::new(0.0, config.init_std).map_err(|e| Error::invalid(e.to_string()))?;
    let tensors = config
        .layout()
        .into_iter()
        .map(|(name, dims, init)| {
            let n = dims.iter().product();
            let vals = match init {
                Init::Normal => (0..n).map(|_| normal.sample(&mut rng)).collect(),
                Init::Zero => vec![0.0; n],
                Init::Const(c) => vec![c; n],
            };
            (name, Tensor::new(dims, vals).expect("layout dims"))
        })
        .collect();
    Ok(ModelParams {
        config: config.clone(),
        tensors,
    })
}

impl ModelParams {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Records every parameter on `tape` as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape) -> Result<BoundParams> {
        let vars = self
            .tensors
            .iter()
            .map(|(k, t)| Ok((k.clone(), tape.param(t.clone())?)))
            .collect::<Result<_>>()?;
        Ok(BoundParams { vars })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut records = self.config.meta_records();
        records.extend(self.tensors.iter().map(|(k, v)| (k.clone(), v.clone())));
        Checkpoint { records }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let (meta, tensors): (BTreeMap<_, _>, BTreeMap<_, _>) =
            ckpt.records.iter().cloned().partition(|(k, _)| k.starts_with("meta."));
        let config = ModelConfig::from_meta(&meta)?;
        config.validate()?;
        let layout = config.layout();
        if layout.len() != tensors.len() {
            return Err(Error::format(
                "SCNW",
                format!("expected {} parameter tensors, found {}", layout.len(), tensors.len()),
            ));
        }
        for (name, dims, _) in &layout {
            match tensors.get(name) {
                Some(t) if t.dims() == dims.as_slice() => {}
                Some(t) => {
                    return Err(Error::format(
                        "SCNW",
                        format!("{name} has dims {:?}, expected {dims:?}", t.dims()),
                    ))
                }
                None => return Err(Error::format("SCNW", format!("missing parameter {name}"))),
            }
        }
        Ok(Self { config, tensors })
    }
}

/// Tape handles for a bound parameter set.
#[derive(Debug, Clone)]
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    /// Pair externally created vars with parameter names in `params.names()` order.
    pub fn from_vars(params: &ModelParams, vars: &[Var]) -> Result<Self> {
        if vars.len() != params.tensors.len() {
            return Err(Error::invalid(format!(
                "expected {} vars, got {}",
                params.tensors.len(),
                vars.len()
            )));
        }
        Ok(Self {
            vars: params.names().cloned().zip(vars.iter().copied()).collect(),
        })
    }

    pub fn var(&self, name: &str) -> Var {
        self.vars[name]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}

/// Tape handles for one forward pass. `seg_map` is absent when the model
/// was configured without segmentation attention.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    pub class_logits: Var,
    pub seg_map: Option<Var>,
    pub density_intermediate: Var,
    pub density_final: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub class_logits: Tensor,
    pub seg_map: Option<Grid>,
    pub density_intermediate: Grid,
    pub density_final: Grid,
}

fn conv_relu(tape: &mut Tape, p: &BoundParams, name: &str, spec: ConvSpec, x: Var) -> Result<Var> {
    let y = conv(tape, p, name, spec, x)?;
    Ok(tape.relu(y)?)
}

fn conv(tape: &mut Tape, p: &BoundParams, name: &str, spec: ConvSpec, x: Var) -> Result<Var> {
    let w = p.var(&format!("{name}.weight"));
    let b = p.var(&format!("{name}.bias"));
    Ok(tape.conv2d(x, spec, w, b)?)
}

/// Check an image tensor against the model's input contract.
pub fn check_input(config: &ModelConfig, image: &Tensor) -> Result<()> {
    let (c, h, w) = image.chw()?;
    if c != config.in_channels {
        return Err(Error::invalid(format!(
            "model expects {} input channel(s), image has {c}",
            config.in_channels
        )));
    }
    let min = config.min_input_size();
    if h < min || w < min {
        return Err(Error::invalid(format!(
            "input {h}x{w} is below the {min}x{min} minimum set by {} pooling stage(s) and SPP level {}",
            config.pool_stages,
            config.spp_levels.iter().max().copied().unwrap_or(1)
        )));
    }
    Ok(())
}

/// Records the full network on `tape`.
pub fn forward_on_tape(tape: &mut Tape, params: &ModelParams, bound: &BoundParams, image: Var) -> Result<ForwardVars> {
    let cfg = params.config();
    check_input(cfg, tape.value(image))?;

    let branches = cfg
        .branch_kernels
        .iter()
        .enumerate()
        .map(|(i, &k)| conv_relu(tape, bound, &format!("branch{i}"), cfg.branch_spec(k), image))
        .collect::<Result<Vec<_>>>()?;
    let mut x = tape.concat_channels(&branches)?;

    let mut stage_features = Vec::with_capacity(cfg.pool_stages);
    for s in 0..cfg.pool_stages {
        let pooled = tape.max_pool2d(x)?;
        x = conv_relu(tape, bound, &format!("stage{s}"), cfg.stage_spec(s), pooled)?;
        stage_features.push(x);
    }

    let mut shared = x;
    for _ in 0..cfg.shared_repeats {
        shared = conv_relu(tape, bound, "shared", cfg.shared_spec(), shared)?;
    }

    // cross-depth fusion: the tied block's output, its input, and every
    // earlier stage max-pooled down to the final resolution
    let mut fused = shared;
    if cfg.shared_repeats > 0 {
        fused = tape.add(fused, x)?;
    }
    let depth = stage_features.len();
    for (s, &feat) in stage_features.iter().enumerate().take(depth.saturating_sub(1)) {
        let mut f = feat;
        for _ in s + 1..depth {
            f = tape.max_pool2d(f)?;
        }
        fused = tape.add(fused, f)?;
    }
    let trunk = conv_relu(tape, bound, "fusion", cfg.fusion_spec(), fused)?;

    let spp = tape.spp(trunk, &cfg.spp_levels)?;
    let h1 = tape.fully_connected(spp, bound.var("cls.fc1.weight"), bound.var("cls.fc1.bias"))?;
    let h1 = tape.prelu(h1, bound.var("cls.prelu.slope"))?;
    let class_logits = tape.fully_connected(h1, bound.var("cls.fc2.weight"), bound.var("cls.fc2.bias"))?;

    let d = conv_relu(tape, bound, "den.conv", cfg.head_spec(), trunk)?;
    let d = conv(tape, bound, "den.out", cfg.project_spec(), d)?;
    let density_intermediate = tape.relu(d)?;

    let (seg_map, attended) = if cfg.seg_attention {
        let s = conv_relu(tape, bound, "seg.conv", cfg.head_spec(), trunk)?;
        let s = conv(tape, bound, "seg.out", cfg.project_spec(), s)?;
        let s = tape.sigmoid(s)?;
        (Some(s), tape.add(s, density_intermediate)?)
    } else {
        (None, density_intermediate)
    };

    let f = conv_relu(tape, bound, "fin.conv", cfg.refine_spec(), attended)?;
    let f = conv(tape, bound, "fin.out", cfg.project_spec(), f)?;
    let density_final = tape.relu(f)?;

    Ok(ForwardVars {
        class_logits,
        seg_map,
        density_intermediate,
        density_final,
    })
}

/// Inference on one `[C, H, W]` (or `[H, W]`) image.
pub fn forward(params: &ModelParams, image: &Tensor) -> Result<ForwardOutput> {
    let mut tape = Tape::new();
    let bound = params.bind_constants(&mut tape)?;
    let x = tape.constant(image.clone())?;
    let v = forward_on_tape(&mut tape, params, &bound, x)?;
    Ok(ForwardOutput {
        class_logits: tape.value(v.class_logits).clone(),
        seg_map: v.seg_map.map(|s| Grid::from_tensor(tape.value(s))).transpose()?,
        density_intermediate: Grid::from_tensor(tape.value(v.density_intermediate))?,
        density_final: Grid::from_tensor(tape.value(v.density_final))?,
    })
}

impl ModelParams {
    fn bind_constants(&self, tape: &mut Tape) -> Result<BoundParams> {
        let vars = self
            .tensors
            .iter()
            .map(|(k, t)| Ok((k.clone(), tape.constant(t.clone())?)))
            .collect::<Result<_>>()?;
        Ok(BoundParams { vars })
    }
}

/// Integrate a density map into a count.
pub fn count_from_density(map: &Grid) -> f64 {
    map.sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_params() {
        let cfg = ModelConfig {
            seed: 11,
            ..ModelConfig::default()
        };
        assert_eq!(build(&cfg).unwrap(), build(&cfg).unwrap());
        let other = ModelConfig {
            seed: 12,
            ..cfg.clone()
        };
        assert_ne!(build(&cfg).unwrap(), build(&other).unwrap());
    }

    #[test]
    fn layer_shapes() {
        let p = build(&ModelConfig::default()).unwrap();
        for (i, k) in [3, 5, 7, 9].into_iter().enumerate() {
            assert_eq!(p.get(&format!("branch{i}.weight")).unwrap().dims(), &[16, 1, k, k]);
        }
        assert_eq!(p.get("cls.fc2.weight").unwrap().dims(), &[5, 64]);
        assert_eq!(p.get("cls.fc1.weight").unwrap().dims(), &[64, 16 * 21]);
        assert!(p.get("cls.prelu.slope").unwrap().values().iter().all(|&a| a == 0.25));
        assert!(p.get("fusion.bias").unwrap().values().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn rejects_bad_configs() {
        let bad = [
            ModelConfig {
                branch_kernels: vec![3, 5, 7],
                ..ModelConfig::default()
            },
            ModelConfig {
                branch_kernels: vec![3, 5, 7, 8],
                ..ModelConfig::default()
            },
            ModelConfig {
                fc_widths: (64, 4),
                ..ModelConfig::default()
            },
            ModelConfig {
                trunk_filters: 0,
                ..ModelConfig::default()
            },
            ModelConfig {
                spp_levels: vec![],
                ..ModelConfig::default()
            },
        ];
        for cfg in bad {
            assert!(build(&cfg).is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn output_resolution_is_quarter() {
        let p = build(&ModelConfig::tiny(3)).unwrap();
        let out = forward(&p, &Tensor::full(&[1, 64, 64], 0.5)).unwrap();
        assert_eq!(out.density_final.dims(), (16, 16));
        assert_eq!(out.density_intermediate.dims(), (16, 16));
        assert_eq!(out.seg_map.as_ref().unwrap().dims(), (16, 16));
        assert_eq!(out.class_logits.len(), 5);
    }

    #[test]
    fn undersized_input_names_constraint() {
        let p = build(&ModelConfig::tiny(3)).unwrap();
        assert_eq!(p.config().min_input_size(), 16);
        let err = forward(&p, &Tensor::zeros(&[1, 15, 40])).unwrap_err();
        assert!(err.to_string().contains("16x16 minimum"), "{err}");
        assert!(forward(&p, &Tensor::zeros(&[1, 16, 16])).is_ok());
    }

    #[test]
    fn checkpoint_restores_config_and_params() {
        let cfg = ModelConfig {
            seg_attention: false,
            shared_repeats: 3,
            ..ModelConfig::tiny(5)
        };
        let p = build(&cfg).unwrap();
        let back = ModelParams::from_checkpoint(&p.to_checkpoint()).unwrap();
        assert_eq!(back.tensors, p.tensors);
        assert_eq!(back.config().layout().len(), cfg.layout().len());
        assert!(!back.config().seg_attention);
        assert_eq!(back.config().shared_repeats, 3);
    }

    #[test]
    fn checkpoint_missing_param_rejected() {
        let mut ck = build(&ModelConfig::tiny(1)).unwrap().to_checkpoint();
        ck.records.retain(|(k, _)| k != "fusion.bias");
        assert!(ModelParams::from_checkpoint(&ck).is_err());
    }

    #[test]
    fn count_is_linear() {
        let g = Grid::from_fn(4, 4, |r, c| (r + c) as f64 * 0.1);
        assert_eq!(count_from_density(&Grid::zeros(3, 3)), 0.0);
        assert!((count_from_density(&g.map(|v| 2.0 * v)) - 2.0 * count_from_density(&g)).abs() < 1e-12);
    }
}
