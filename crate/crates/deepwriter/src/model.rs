//! Architecture presets and forward/backward orchestration for the
//! single-stream (Half) and two-stream networks. The two-stream variant runs
//! both patches through one shared parameter set and fuses the FC7 outputs by
//! element-wise sum before the classifier.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{DwError, Result};
use crate::layers::{
    conv2d_backward, conv2d_forward, dropout_backward, dropout_forward, fc_backward, fc_forward,
    maxpool2d_backward, maxpool2d_forward, relu_backward, relu_forward,
    softmax_cross_entropy_backward, softmax_cross_entropy_forward, ConvSpec, LayerParams, Mode,
    PoolSpec,
};
use crate::tensor::{elementwise_sum, Scalar, Tensor};

/// One entry in the ordered layer stack.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerEntry {
    Conv(ConvSpec),
    Pool(PoolSpec),
    Fc(usize),
    Relu,
    Dropout(f64),
}

/// Ordered layer stack plus input geometry. The last entry must be a
/// fully-connected classifier of width `num_classes`; softmax is applied by
/// the loss / score computation, not listed as an entry.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchitectureSpec {
    pub entries: Vec<LayerEntry>,
    pub input_side: usize,
    pub input_channels: usize,
    pub num_classes: usize,
}

fn scaled(n: usize, scale: f64) -> usize {
    ((n as f64 * scale).round() as usize).max(1)
}

impl ArchitectureSpec {
    /// The default stack: Conv1 96C5S2, M3S2, Conv2 256C3S1P1, M3S2,
    /// Conv3-5 384/384/256 C3S1P1, M3S2, FC6 1024, FC7 1024, classifier.
    /// ReLU after every conv/fc, dropout 0.5 after FC6 and FC7. `scale`
    /// shrinks channel counts and fc widths for desk-scale runs.
    pub fn deepwriter(input_side: usize, num_classes: usize, scale: f64) -> Self {
        use LayerEntry::*;
        let entries = vec![
            Conv(ConvSpec::new(scaled(96, scale), 5, 2, 0)),
            Relu,
            Pool(PoolSpec::new(3, 2)),
            Conv(ConvSpec::new(scaled(256, scale), 3, 1, 1)),
            Relu,
            Pool(PoolSpec::new(3, 2)),
            Conv(ConvSpec::new(scaled(384, scale), 3, 1, 1)),
            Relu,
            Conv(ConvSpec::new(scaled(384, scale), 3, 1, 1)),
            Relu,
            Conv(ConvSpec::new(scaled(256, scale), 3, 1, 1)),
            Relu,
            Pool(PoolSpec::new(3, 2)),
            Fc(scaled(1024, scale)),
            Relu,
            Dropout(0.5),
            Fc(scaled(1024, scale)),
            Relu,
            Dropout(0.5),
            Fc(num_classes),
        ];
        ArchitectureSpec {
            entries,
            input_side,
            input_channels: 1,
            num_classes,
        }
    }

    /// The 227/131-pixel kernel-size ablation variant: AlexNet-style Conv1
    /// 96C11S4 and Conv2 256C5S1P2, rest of the stack unchanged.
    pub fn kernel_variant_alexnet(input_side: usize, num_classes: usize) -> Self {
        let mut spec = Self::deepwriter(input_side, num_classes, 1.0);
        spec.entries[0] = LayerEntry::Conv(ConvSpec::new(96, 11, 4, 0));
        spec.entries[3] = LayerEntry::Conv(ConvSpec::new(256, 5, 1, 2));
        spec
    }

    /// The fc-width ablation: FC6/FC7 at `fc_width` neurons.
    pub fn fc_width_variant(input_side: usize, num_classes: usize, fc_width: usize) -> Self {
        let mut spec = Self::deepwriter(input_side, num_classes, 1.0);
        let mut fc_seen = 0;
        for e in spec.entries.iter_mut() {
            if let LayerEntry::Fc(w) = e {
                fc_seen += 1;
                if fc_seen <= 2 {
                    *w = fc_width;
                }
            }
        }
        spec
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_side < 1 || self.input_channels < 1 {
            return Err(DwError::Shape("input geometry must be >= 1".into()));
        }
        if self.num_classes < 2 {
            return Err(DwError::Domain("need at least 2 classes".into()));
        }
        match self.entries.last() {
            Some(LayerEntry::Fc(w)) if *w == self.num_classes => {}
            other => {
                return Err(DwError::Shape(format!(
                    "final entry must be an fc classifier of width {}, got {other:?}",
                    self.num_classes
                )))
            }
        }
        self.output_shapes().map(|_| ())
    }

    /// Dims after every layer entry, starting from [C, side, side].
    pub fn output_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut dims: Vec<usize> = vec![self.input_channels, self.input_side, self.input_side];
        let mut out = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            dims = match (e, dims.as_slice()) {
                (LayerEntry::Conv(spec), [_, h, w]) => {
                    vec![spec.out_channels, spec.out_side(*h)?, spec.out_side(*w)?]
                }
                (LayerEntry::Conv(_), d) => {
                    return Err(DwError::Shape(format!("conv after flatten (dims {d:?})")))
                }
                (LayerEntry::Pool(spec), [c, h, w]) => {
                    vec![*c, spec.out_side(*h)?, spec.out_side(*w)?]
                }
                (LayerEntry::Pool(_), d) => {
                    return Err(DwError::Shape(format!("pool after flatten (dims {d:?})")))
                }
                (LayerEntry::Fc(width), d) => {
                    let _flat: usize = d.iter().product();
                    vec![*width]
                }
                (LayerEntry::Relu | LayerEntry::Dropout(_), d) => d.to_vec(),
            };
            out.push(dims.clone());
        }
        Ok(out)
    }

    /// Canonical text encoding of the geometry and layer stack. Two specs are
    /// interchangeable iff their canonical strings are equal, and the encoding
    /// is invertible via `from_canonical`.
    pub fn canonical_string(&self) -> String {
        let mut repr = format!(
            "in={}x{}x{};k={};",
            self.input_channels, self.input_side, self.input_side, self.num_classes
        );
        for e in &self.entries {
            match e {
                LayerEntry::Conv(c) => repr.push_str(&format!(
                    "C{},{},{},{};",
                    c.out_channels, c.kernel, c.stride, c.padding
                )),
                LayerEntry::Pool(p) => repr.push_str(&format!("M{},{};", p.window, p.stride)),
                LayerEntry::Fc(w) => repr.push_str(&format!("F{w};")),
                LayerEntry::Relu => repr.push_str("R;"),
                LayerEntry::Dropout(r) => repr.push_str(&format!("D{r};")),
            }
        }
        repr
    }

    /// Parses a spec back from its canonical encoding.
    pub fn from_canonical(repr: &str) -> Result<Self> {
        let bad = |msg: &str| DwError::Format(format!("bad architecture string: {msg}"));
        let mut tokens = repr.split(';').filter(|t| !t.is_empty());
        let geom = tokens.next().ok_or_else(|| bad("empty"))?;
        let geom = geom
            .strip_prefix("in=")
            .ok_or_else(|| bad("missing in= prefix"))?;
        let mut gi = geom.split('x');
        let next_usize = |gi: &mut std::str::Split<char>| -> Result<usize> {
            gi.next()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| bad("geometry"))
        };
        let input_channels = next_usize(&mut gi)?;
        let input_side = next_usize(&mut gi)?;
        let side2 = next_usize(&mut gi)?;
        if side2 != input_side {
            return Err(bad("non-square input"));
        }
        let classes = tokens.next().ok_or_else(|| bad("missing class count"))?;
        let num_classes: usize = classes
            .strip_prefix("k=")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad("class count"))?;
        let mut entries = Vec::new();
        for tok in tokens {
            let (kind, rest) = tok.split_at(1);
            let nums: Vec<&str> = rest.split(',').collect();
            let entry = match kind {
                "C" => {
                    let v: Vec<usize> = nums
                        .iter()
                        .map(|n| n.parse().map_err(|_| bad("conv field")))
                        .collect::<Result<_>>()?;
                    if v.len() != 4 {
                        return Err(bad("conv arity"));
                    }
                    LayerEntry::Conv(ConvSpec::new(v[0], v[1], v[2], v[3]))
                }
                "M" => {
                    let v: Vec<usize> = nums
                        .iter()
                        .map(|n| n.parse().map_err(|_| bad("pool field")))
                        .collect::<Result<_>>()?;
                    if v.len() != 2 {
                        return Err(bad("pool arity"));
                    }
                    LayerEntry::Pool(PoolSpec::new(v[0], v[1]))
                }
                "F" => LayerEntry::Fc(rest.parse().map_err(|_| bad("fc width"))?),
                "R" if rest.is_empty() => LayerEntry::Relu,
                "D" => LayerEntry::Dropout(rest.parse().map_err(|_| bad("dropout ratio"))?),
                _ => return Err(bad("unknown layer token")),
            };
            entries.push(entry);
        }
        let spec = ArchitectureSpec {
            entries,
            input_side,
            input_channels,
            num_classes,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// A stable 64-bit fingerprint of the layer stack and geometry, used to
    /// match checkpoints to architectures.
    pub fn fingerprint(&self) -> u64 {
        // FNV-1a over the canonical text encoding
        let mut hash: u64 = 0xcbf29ce484222325;
        for b in self.canonical_string().bytes() {
            hash ^= b as u64;
            hash = hash.wrapping_mul(0x100000001b3);
        }
        hash
    }
}

/// The network: one shared parameter collection, run as one stream (Half) or
/// two streams fused before the classifier. Parameter count is independent of
/// the stream count.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T: Scalar = f32> {
    pub spec: ArchitectureSpec,
    pub streams: u8,
    /// (name, params) per parameterized layer, in stack order. Names number
    /// conv/fc layers consecutively: conv1..conv5, fc6, fc7, fc8.
    pub params: Vec<(String, LayerParams<T>)>,
    pub mode: Mode,
    /// Scalar subtracted from [0,1]-scaled pixels before the first layer.
    pub input_mean: f64,
}

/// Per-invocation caches from a forward pass, consumed by `backward`.
pub struct ForwardContext<T: Scalar> {
    /// Input to each layer entry, per stream.
    layer_inputs: Vec<Vec<Tensor<T>>>,
    /// Pool argmax indices keyed by entry index, per stream.
    pool_args: Vec<Vec<Option<Vec<usize>>>>,
    /// Dropout masks keyed by entry index, per stream.
    drop_masks: Vec<Vec<Option<Vec<T>>>>,
    /// Input of the classifier entry (the fused vector for two streams).
    classifier_input: Tensor<T>,
    probs: Tensor<T>,
    label: Option<usize>,
}

impl<T: Scalar> Network<T> {
    /// Initializes parameters: zero-mean Gaussian weights with fan-in-scaled
    /// std sqrt(2 / fan_in), zero biases. Deterministic for a given seed.
    ///
    /// A fixed std (the classic 0.01) collapses activations to numerical
    /// noise after five conv layers at reduced channel counts, leaving the
    /// network untrainable; fan-in scaling keeps activation variance of order
    /// one at every preset size.
    pub fn build(spec: ArchitectureSpec, streams: u8, seed: u64) -> Result<Self> {
        assert!(streams == 1 || streams == 2, "streams must be 1 or 2");
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shapes = spec.output_shapes()?;
        let mut params = Vec::new();
        let mut in_dims: Vec<usize> = vec![spec.input_channels, spec.input_side, spec.input_side];
        let mut layer_no = 0usize;
        for (i, e) in spec.entries.iter().enumerate() {
            match e {
                LayerEntry::Conv(c) => {
                    layer_no += 1;
                    let in_ch = in_dims[0];
                    let wdims = vec![c.out_channels, in_ch, c.kernel, c.kernel];
                    let n: usize = wdims.iter().product();
                    let std = T::from_f64((2.0 / (in_ch * c.kernel * c.kernel) as f64).sqrt());
                    let data = (0..n).map(|_| T::standard_normal(&mut rng) * std).collect();
                    params.push((
                        format!("conv{layer_no}"),
                        LayerParams::new(
                            Tensor::from_vec(wdims, data)?,
                            Tensor::zeros(vec![c.out_channels]),
                        ),
                    ));
                }
                LayerEntry::Fc(width) => {
                    layer_no += 1;
                    let in_f: usize = in_dims.iter().product();
                    let n = width * in_f;
                    let std = T::from_f64((2.0 / in_f as f64).sqrt());
                    let data = (0..n).map(|_| T::standard_normal(&mut rng) * std).collect();
                    params.push((
                        format!("fc{layer_no}"),
                        LayerParams::new(
                            Tensor::from_vec(vec![*width, in_f], data)?,
                            Tensor::zeros(vec![*width]),
                        ),
                    ));
                }
                _ => {}
            }
            in_dims = shapes[i].clone();
        }
        Ok(Network {
            spec,
            streams,
            params,
            mode: Mode::Test,
            input_mean: 0.0,
        })
    }

    /// Total scalar count over all weights and biases.
    pub fn param_count(&self) -> usize {
        self.params.iter().map(|(_, p)| p.scalar_count()).sum()
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    /// Name of the classifier (last parameterized) layer.
    pub fn classifier_name(&self) -> &str {
        &self.params.last().expect("built network has layers").0
    }

    fn check_patch(&self, patch: &Tensor<T>) -> Result<()> {
        let want = [self.spec.input_channels, self.spec.input_side, self.spec.input_side];
        if patch.dims() != want {
            return Err(DwError::Shape(format!(
                "patch dims {:?} do not match network input {want:?}",
                patch.dims()
            )));
        }
        Ok(())
    }

    /// Runs one stream through all entries before the classifier. Returns the
    /// pre-classifier vector plus per-entry caches.
    #[allow(clippy::type_complexity)]
    fn run_stream<R: Rng + ?Sized>(
        &self,
        patch: &Tensor<T>,
        rng: &mut R,
    ) -> Result<(Tensor<T>, Vec<Tensor<T>>, Vec<Option<Vec<usize>>>, Vec<Option<Vec<T>>>)> {
        let n = self.spec.entries.len();
        let mut inputs = Vec::with_capacity(n);
        let mut pool_args: Vec<Option<Vec<usize>>> = vec![None; n];
        let mut drop_masks: Vec<Option<Vec<T>>> = vec![None; n];
        let mut x = patch.clone();
        let mut param_idx = 0usize;
        for (i, e) in self.spec.entries[..n - 1].iter().enumerate() {
            inputs.push(x.clone());
            x = match e {
                LayerEntry::Conv(spec) => {
                    let out = conv2d_forward(&x, spec, &self.params[param_idx].1)?;
                    param_idx += 1;
                    out
                }
                LayerEntry::Pool(spec) => {
                    let (out, arg) = maxpool2d_forward(&x, spec)?;
                    pool_args[i] = Some(arg);
                    out
                }
                LayerEntry::Fc(_) => {
                    let flat = x.clone().reshaped(vec![x.len()])?;
                    let out = fc_forward(&flat, &self.params[param_idx].1)?;
                    param_idx += 1;
                    out
                }
                LayerEntry::Relu => relu_forward(&x),
                LayerEntry::Dropout(ratio) => {
                    let (out, mask) = dropout_forward(&x, *ratio, self.mode, rng)?;
                    drop_masks[i] = mask;
                    out
                }
            };
        }
        Ok((x, inputs, pool_args, drop_masks))
    }

    fn classify(&self, pre: &Tensor<T>, label: usize) -> Result<(Tensor<T>, T)> {
        let flat = pre.clone().reshaped(vec![pre.len()])?;
        let logits = fc_forward(&flat, &self.params.last().unwrap().1)?;
        softmax_cross_entropy_forward(&logits, label)
    }

    /// Single-patch forward. Returns the class probability vector, the loss
    /// against `label` (0 when only scoring), and caches for `backward`.
    pub fn forward_single<R: Rng + ?Sized>(
        &self,
        patch: &Tensor<T>,
        label: usize,
        rng: &mut R,
    ) -> Result<(Tensor<T>, T, ForwardContext<T>)> {
        self.check_patch(patch)?;
        let (pre, inputs, pool_args, drop_masks) = self.run_stream(patch, rng)?;
        let (probs, loss) = self.classify(&pre, label)?;
        Ok((
            probs.clone(),
            loss,
            ForwardContext {
                layer_inputs: vec![inputs],
                pool_args: vec![pool_args],
                drop_masks: vec![drop_masks],
                classifier_input: pre,
                probs,
                label: Some(label),
            },
        ))
    }

    /// Two-patch forward: both patches run the shared stream, their
    /// pre-classifier vectors are summed, and the fused vector feeds the
    /// classifier.
    pub fn forward_pair<R: Rng + ?Sized>(
        &self,
        patch1: &Tensor<T>,
        patch2: &Tensor<T>,
        label: usize,
        rng: &mut R,
    ) -> Result<(Tensor<T>, T, ForwardContext<T>)> {
        if self.streams != 2 {
            return Err(DwError::Domain(
                "forward_pair requires a two-stream network".into(),
            ));
        }
        self.check_patch(patch1)?;
        self.check_patch(patch2)?;
        let (pre1, in1, pa1, dm1) = self.run_stream(patch1, rng)?;
        let (pre2, in2, pa2, dm2) = self.run_stream(patch2, rng)?;
        let fused = elementwise_sum(&pre1, &pre2)?;
        let (probs, loss) = self.classify(&fused, label)?;
        Ok((
            probs.clone(),
            loss,
            ForwardContext {
                layer_inputs: vec![in1, in2],
                pool_args: vec![pa1, pa2],
                drop_masks: vec![dm1, dm2],
                classifier_input: fused,
                probs,
                label: Some(label),
            },
        ))
    }

    /// Test-mode scoring without a label.
    pub fn score_single(&self, patch: &Tensor<T>) -> Result<Tensor<T>> {
        let mut rng = NoRng;
        let (probs, _, _) = self.forward_single(patch, 0, &mut rng)?;
        Ok(probs)
    }

    pub fn score_pair(&self, patch1: &Tensor<T>, patch2: &Tensor<T>) -> Result<Tensor<T>> {
        let mut rng = NoRng;
        let (probs, _, _) = self.forward_pair(patch1, patch2, 0, &mut rng)?;
        Ok(probs)
    }

    /// Backpropagates the softmax cross-entropy loss through the cached
    /// forward pass. Returns (weight grad, bias grad) per layer in `params`
    /// order; for two streams the shared-parameter gradients are the sum of
    /// the per-stream contributions.
    pub fn backward(&self, ctx: &ForwardContext<T>) -> Result<Vec<(Tensor<T>, Tensor<T>)>> {
        let label = ctx
            .label
            .ok_or_else(|| DwError::Domain("backward needs a labelled forward pass".into()))?;
        let mut grads: Vec<(Tensor<T>, Tensor<T>)> = self
            .params
            .iter()
            .map(|(_, p)| {
                (
                    Tensor::zeros(p.weights.dims().to_vec()),
                    Tensor::zeros(p.biases.dims().to_vec()),
                )
            })
            .collect();

        let dlogits = softmax_cross_entropy_backward(&ctx.probs, label)?;
        let flat_in = ctx
            .classifier_input
            .clone()
            .reshaped(vec![ctx.classifier_input.len()])?;
        let last = self.params.len() - 1;
        let (dfused, gw, gb) = fc_backward(&flat_in, &self.params[last].1, &dlogits)?;
        grads[last] = (gw, gb);

        for stream in 0..ctx.layer_inputs.len() {
            let mut dx = dfused.clone();
            let mut param_idx = last; // walk backwards over parameterized layers
            let n = self.spec.entries.len();
            for i in (0..n - 1).rev() {
                let input = &ctx.layer_inputs[stream][i];
                dx = match &self.spec.entries[i] {
                    LayerEntry::Conv(spec) => {
                        param_idx -= 1;
                        let (din, gw, gb) =
                            conv2d_backward(input, spec, &self.params[param_idx].1, &dx)?;
                        accumulate(&mut grads[param_idx], &gw, &gb)?;
                        din
                    }
                    LayerEntry::Pool(spec) => {
                        let _ = spec;
                        let arg = ctx.pool_args[stream][i].as_ref().expect("cached pool argmax");
                        maxpool2d_backward(input.dims(), arg, &dx)?
                    }
                    LayerEntry::Fc(_) => {
                        param_idx -= 1;
                        let flat = input.clone().reshaped(vec![input.len()])?;
                        let (din, gw, gb) = fc_backward(&flat, &self.params[param_idx].1, &dx)?;
                        accumulate(&mut grads[param_idx], &gw, &gb)?;
                        din.reshaped(input.dims().to_vec())?
                    }
                    LayerEntry::Relu => relu_backward(input, &dx)?,
                    LayerEntry::Dropout(_) => {
                        dropout_backward(ctx.drop_masks[stream][i].as_deref(), &dx)?
                    }
                };
            }
        }
        Ok(grads)
    }

    /// Mutable access to the parameter list alone (for the optimizer).
    pub fn params_mut(&mut self) -> Vec<&mut LayerParams<T>> {
        self.params.iter_mut().map(|(_, p)| p).collect()
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            spec: self.spec.clone(),
            streams: self.streams,
            params: self
                .params
                .iter()
                .map(|(n, p)| {
                    (
                        n.clone(),
                        LayerParams {
                            weights: p.weights.cast(),
                            biases: p.biases.cast(),
                            lr_mult: p.lr_mult,
                        },
                    )
                })
                .collect(),
            mode: self.mode,
            input_mean: self.input_mean,
        }
    }
}

fn accumulate<T: Scalar>(
    acc: &mut (Tensor<T>, Tensor<T>),
    gw: &Tensor<T>,
    gb: &Tensor<T>,
) -> Result<()> {
    acc.0 = elementwise_sum(&acc.0, gw)?;
    acc.1 = elementwise_sum(&acc.1, gb)?;
    Ok(())
}

/// RNG stand-in for test-mode passes, which must not consume randomness.
struct NoRng;

impl rand::RngCore for NoRng {
    fn next_u32(&mut self) -> u32 {
        panic!("test-mode forward must not consume randomness");
    }
    fn next_u64(&mut self) -> u64 {
        panic!("test-mode forward must not consume randomness");
    }
    fn fill_bytes(&mut self, _dest: &mut [u8]) {
        panic!("test-mode forward must not consume randomness");
    }
    fn try_fill_bytes(&mut self, _dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        panic!("test-mode forward must not consume randomness");
    }
}
