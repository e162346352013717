use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::layers::{Branch, Layer, LayerCache, LayerSpec, ParamRole, Pw, DEFAULT_BRANCHES};
use super::{NetError, Result, Tensor};
use crate::geo::ChannelStats;

/// Architecture hyper-parameters of the regressor.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub in_channels: usize,
    /// Widths of the entry 1×1 convolutions; the last one is the feature
    /// depth carried through the pyramid blocks.
    pub entry_widths: Vec<usize>,
    pub num_blocks: usize,
    pub branches: Vec<Branch>,
}

impl ModelConfig {
    pub fn new(in_channels: usize) -> Self {
        ModelConfig {
            in_channels,
            entry_widths: vec![128, 256, 256],
            num_blocks: 8,
            branches: DEFAULT_BRANCHES.to_vec(),
        }
    }

    pub fn layer_specs(&self) -> Result<Vec<LayerSpec>> {
        if self.entry_widths.is_empty() {
            return Err(NetError::Spec("at least one entry width is required".into()));
        }
        let mut specs = Vec::new();
        let mut c = self.in_channels;
        for &w in &self.entry_widths {
            specs.push(LayerSpec::pointwise(c, w, true));
            c = w;
        }
        for _ in 0..self.num_blocks {
            specs.push(LayerSpec::prfx_block(c, c, &self.branches, true));
        }
        Ok(specs)
    }
}

/// Per-pixel model outputs, each `(H, W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    pub pred: Tensor,
    pub var: Tensor,
    pub m2: Tensor,
}

/// Upstream gradients for the three heads; `None` means zero.
#[derive(Debug, Clone, Copy)]
pub struct HeadGrads<'a> {
    pub pred: &'a [f32],
    pub var: Option<&'a [f32]>,
    pub m2: Option<&'a [f32]>,
}

pub struct ModelCache {
    layers: Vec<LayerCache>,
    features: Tensor,
}

/// Layer stack, three 1×1 heads and a flat parameter buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    in_channels: usize,
    layers: Vec<Layer>,
    heads: [Pw; 3],
    params: Vec<f32>,
    normalization: Option<ChannelStats>,
    band_indices: Vec<usize>,
}

pub const HEAD_NAMES: [&str; 3] = ["predictions", "variances", "second_moments"];

impl Model {
    /// Builds the layer stack with all parameters zero.
    pub fn from_specs(in_channels: usize, specs: Vec<LayerSpec>) -> Result<Self> {
        let mut next = 0usize;
        let mut c = in_channels;
        let mut layers = Vec::with_capacity(specs.len());
        for spec in specs {
            if spec.in_channels != c {
                return Err(NetError::ChannelMismatch {
                    expected: c,
                    actual: spec.in_channels,
                });
            }
            c = spec.out_channels;
            layers.push(Layer::new(spec, &mut next)?);
        }
        let mut head = || {
            let p = Pw {
                off: next,
                cin: c,
                cout: 1,
            };
            next += p.len();
            p
        };
        let heads = [head(), head(), head()];
        Ok(Model {
            in_channels,
            layers,
            heads,
            params: vec![0.0; next],
            normalization: None,
            band_indices: (0..in_channels).collect(),
        })
    }

    /// He-normal weights, zero biases.
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut m = Self::from_specs(config.in_channels, config.layer_specs()?)?;
        m.init_weights(seed);
        Ok(m)
    }

    pub fn init_weights(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut roles: Vec<_> = self.layers.iter().flat_map(|l| l.param_roles()).collect();
        for h in &self.heads {
            roles.push((h.off..h.off + h.cin, ParamRole::Weight { fan_in: h.cin }));
            roles.push((h.off + h.cin..h.off + h.len(), ParamRole::Bias));
        }
        roles.sort_by_key(|(r, _)| r.start);
        for (range, role) in roles {
            match role {
                ParamRole::Bias => self.params[range].iter_mut().for_each(|v| *v = 0.0),
                ParamRole::Weight { fan_in } => {
                    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
                    for v in &mut self.params[range] {
                        *v = normal.sample(&mut rng) as f32;
                    }
                }
            }
        }
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn feature_depth(&self) -> usize {
        self.heads[0].cin
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec().clone()).collect()
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f32] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn set_params(&mut self, params: Vec<f32>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(NetError::Shape(format!(
                "parameter count {} does not match model's {}",
                params.len(),
                self.params.len()
            )));
        }
        self.params = params;
        Ok(())
    }

    /// Index into the flat buffer of head `i`'s bias (0 = predictions).
    pub fn head_bias_index(&self, i: usize) -> usize {
        let h = &self.heads[i];
        h.off + h.cin
    }

    pub fn normalization(&self) -> Option<&ChannelStats> {
        self.normalization.as_ref()
    }

    pub fn set_normalization(&mut self, stats: Option<ChannelStats>) -> Result<()> {
        if let Some(s) = &stats {
            if s.band_count() != self.in_channels {
                return Err(NetError::ChannelMismatch {
                    expected: self.in_channels,
                    actual: s.band_count(),
                });
            }
        }
        self.normalization = stats;
        Ok(())
    }

    /// Source-raster band indices feeding the input channels.
    pub fn band_indices(&self) -> &[usize] {
        &self.band_indices
    }

    pub fn set_band_indices(&mut self, bands: Vec<usize>) -> Result<()> {
        if bands.len() != self.in_channels {
            return Err(NetError::ChannelMismatch {
                expected: self.in_channels,
                actual: bands.len(),
            });
        }
        self.band_indices = bands;
        Ok(())
    }

    fn check_cube(&self, cube: &Tensor) -> Result<(usize, usize)> {
        let (c, h, w) = cube.chw()?;
        if c != self.in_channels {
            return Err(NetError::ChannelMismatch {
                expected: self.in_channels,
                actual: c,
            });
        }
        cube.ensure_finite(|| "input cube".into())?;
        Ok((h, w))
    }

    fn heads_forward(&self, features: &Tensor, h: usize, w: usize) -> Result<ModelOutput> {
        let hw = h * w;
        let mut outs = self.heads.iter().enumerate().map(|(i, head)| {
            let mut o = vec![0.0f32; hw];
            head.forward(&self.params, features.data(), hw, &mut o);
            let t = Tensor::new(vec![h, w], o)?;
            t.ensure_finite(|| format!("head {}", HEAD_NAMES[i]))?;
            Ok::<_, NetError>(t)
        });
        Ok(ModelOutput {
            pred: outs.next().unwrap()?,
            var: outs.next().unwrap()?,
            m2: outs.next().unwrap()?,
        })
    }

    /// Inference pass over a normalised `(C, H, W)` cube.
    pub fn forward(&self, cube: &Tensor) -> Result<ModelOutput> {
        let (h, w) = self.check_cube(cube)?;
        let mut x = cube.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(&self.params, &x)?;
            x.ensure_finite(|| format!("layer {i} ({:?})", layer.spec().kind))?;
        }
        self.heads_forward(&x, h, w)
    }

    pub fn forward_train(&self, cube: &Tensor) -> Result<(ModelOutput, ModelCache)> {
        let (h, w) = self.check_cube(cube)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut x = cube.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let (y, c) = layer.forward_train(&self.params, &x)?;
            y.ensure_finite(|| format!("layer {i} ({:?})", layer.spec().kind))?;
            caches.push(c);
            x = y;
        }
        let out = self.heads_forward(&x, h, w)?;
        Ok((
            out,
            ModelCache {
                layers: caches,
                features: x,
            },
        ))
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// with respect to the input cube.
    pub fn backward(&self, cache: &ModelCache, upstream: HeadGrads<'_>, grads: &mut [f32]) -> Result<Tensor> {
        if grads.len() != self.params.len() {
            return Err(NetError::Shape(format!(
                "gradient buffer {} != parameter count {}",
                grads.len(),
                self.params.len()
            )));
        }
        let (f, h, w) = cache.features.chw()?;
        let hw = h * w;
        let mut dfeat = vec![0.0f32; f * hw];
        let ups = [Some(upstream.pred), upstream.var, upstream.m2];
        for (head, up) in self.heads.iter().zip(ups) {
            if let Some(g) = up {
                if g.len() != hw {
                    return Err(NetError::Shape(format!("head gradient length {} != {hw}", g.len())));
                }
                head.backward(&self.params, cache.features.data(), g, hw, Some(&mut dfeat), grads);
            }
        }
        let mut d = Tensor::new(vec![f, h, w], dfeat)?;
        for (i, (layer, c)) in self.layers.iter().zip(&cache.layers).enumerate().rev() {
            d = layer.backward(&self.params, c, &d, grads)?;
            d.ensure_finite(|| format!("gradient at layer {i} ({:?})", layer.spec().kind))?;
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(NetError::NonFinite(format!("parameter gradient {i}")));
        }
        Ok(d)
    }
}
