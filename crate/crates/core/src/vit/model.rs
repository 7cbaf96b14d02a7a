use std::collections::BTreeMap;
use std::path::Path;
use std::rc::Rc;
use std::sync::atomic::{AtomicUsize, Ordering};

use super::{weights, ViTConfig, ViTWeights, LAYERNORM_EPS};
use crate::classifier::ImageClassifier;
use crate::error::{Error, Result};
use crate::tensor::{Gradients, Graph, Tensor, Var};

/// Activations recorded at one captured block.
///
/// `layer` is 1-based, so a window of `w` on an `L`-block model yields
/// layers `L - w + 1 ..= L`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerCapture {
    pub layer: usize,
    /// Scaled pre-softmax attention scores, `[B, H, N, N]`.
    pub attn_logits: Tensor,
    /// Per-head value projections, `[B, H, N, d_h]`.
    pub values: Tensor,
    /// [CLS] row of the head-concatenated attention output, before the
    /// block's output projection, `[B, d]`.
    pub cls_out: Tensor,
    /// d(class logit)/d(cls_out), `[B, d]`; set by
    /// [`VisionTransformer::backward_class`].
    pub cls_out_grad: Option<Tensor>,
}

#[derive(Clone, Debug, Default)]
pub struct ForwardOptions {
    pub capture: bool,
    /// Overrides the config's layer window for this pass.
    pub window: Option<usize>,
    /// `(layer, offset)`: adds `offset[b]` (`[B, d]`) to the [CLS] row of that
    /// block's attention output. Used to probe sensitivities directly.
    pub cls_offset: Option<(usize, Tensor)>,
}

/// One recorded forward pass: the graph, its outputs and, after a backward
/// call, the gradients.
pub struct ForwardPass {
    graph: Graph,
    input: Var,
    logits: Var,
    params: BTreeMap<String, Var>,
    captures: Vec<LayerCapture>,
    capture_nodes: Vec<Vec<Var>>,
    gradients: Option<Gradients>,
}

impl ForwardPass {
    pub fn logits(&self) -> Tensor {
        self.graph.value(self.logits).clone()
    }

    pub fn captures(&self) -> &[LayerCapture] {
        &self.captures
    }

    pub fn into_captures(self) -> Vec<LayerCapture> {
        self.captures
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn logits_var(&self) -> Var {
        self.logits
    }

    /// Gradient with respect to the input image from the last backward call.
    pub fn input_gradient(&self) -> Option<Tensor> {
        self.gradients.as_ref().map(|g| g.get(self.input))
    }

    pub fn parameter_gradient(&self, name: &str) -> Option<Tensor> {
        let var = *self.params.get(name)?;
        self.gradients.as_ref().map(|g| g.get(var))
    }

    /// Runs backward from an arbitrary scalar built on this pass's graph.
    pub fn backward_from(&mut self, root: Var) -> Result<()> {
        let grads = self.graph.backward(root)?;
        for (capture, nodes) in self.captures.iter_mut().zip(&self.capture_nodes) {
            let rows: Vec<Tensor> = nodes
                .iter()
                .map(|&node| grads.get(node).index_axis0(0))
                .collect();
            capture.cls_out_grad = Some(Tensor::stack(&rows)?);
        }
        self.gradients = Some(grads);
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct CallCounts {
    pub forward: usize,
    pub backward: usize,
}

/// Pre-norm ViT: patch embedding, `L` attention/MLP blocks, final layernorm
/// and a linear head on the [CLS] token.
#[derive(Debug)]
pub struct VisionTransformer {
    config: ViTConfig,
    weights: ViTWeights,
    forward_calls: AtomicUsize,
    backward_calls: AtomicUsize,
}

impl Clone for VisionTransformer {
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            weights: self.weights.clone(),
            forward_calls: AtomicUsize::new(0),
            backward_calls: AtomicUsize::new(0),
        }
    }
}

impl VisionTransformer {
    pub fn new(config: ViTConfig, weights: ViTWeights) -> Result<Self> {
        weights.validate(&config)?;
        Ok(Self {
            config,
            weights,
            forward_calls: AtomicUsize::new(0),
            backward_calls: AtomicUsize::new(0),
        })
    }

    pub fn init(config: ViTConfig, seed: u64) -> Result<Self> {
        let weights = ViTWeights::init(&config, seed)?;
        Self::new(config, weights)
    }

    pub fn config(&self) -> &ViTConfig {
        &self.config
    }

    pub fn weights(&self) -> &ViTWeights {
        &self.weights
    }

    /// Mutable access for training and controlled edits. Shapes must not change.
    pub fn weights_mut(&mut self) -> &mut ViTWeights {
        &mut self.weights
    }

    /// Replaces the attribution hyperparameters, keeping the weights.
    pub fn set_attribution_params(&mut self, layer_window: usize, temperature: f64) -> Result<()> {
        let mut cfg = self.config.clone();
        cfg.layer_window = layer_window;
        cfg.temperature = temperature;
        cfg.validate()?;
        self.config = cfg;
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        weights::encode(&self.config, &self.weights)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (config, weights) = weights::decode(bytes)?;
        Self::new(config, weights)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn call_counts(&self) -> CallCounts {
        CallCounts {
            forward: self.forward_calls.load(Ordering::Relaxed),
            backward: self.backward_calls.load(Ordering::Relaxed),
        }
    }

    pub fn reset_call_counts(&self) {
        self.forward_calls.store(0, Ordering::Relaxed);
        self.backward_calls.store(0, Ordering::Relaxed);
    }

    pub fn check_image(&self, image: &Tensor) -> Result<usize> {
        let c = &self.config;
        match image.shape() {
            &[b, 3, h, w] if b > 0 && h == c.image_height && w == c.image_width => Ok(b),
            s => Err(Error::shape(format!(
                "expected image [B, 3, {}, {}], got {s:?}",
                c.image_height, c.image_width
            ))),
        }
    }

    pub fn forward(&self, image: &Tensor, capture: bool) -> Result<ForwardPass> {
        self.forward_with(
            image,
            &ForwardOptions {
                capture,
                ..Default::default()
            },
        )
    }

    pub fn forward_with(&self, image: &Tensor, opts: &ForwardOptions) -> Result<ForwardPass> {
        let batch = self.check_image(image)?;
        let cfg = &self.config;
        let window = opts.window.unwrap_or(cfg.layer_window);
        if window == 0 || window > cfg.num_layers {
            return Err(Error::param(format!(
                "layer window {window} outside 1..={}",
                cfg.num_layers
            )));
        }
        if let Some((layer, offset)) = &opts.cls_offset {
            if !(1..=cfg.num_layers).contains(layer) || offset.shape() != [batch, cfg.embed_dim] {
                return Err(Error::shape(format!(
                    "cls offset for layer {layer} with shape {:?}",
                    offset.shape()
                )));
            }
        }
        self.forward_calls.fetch_add(1, Ordering::Relaxed);

        let graph = Graph::new();
        let input = graph.leaf(image.clone())?;
        let mut params = BTreeMap::new();
        for (name, t) in self.weights.iter() {
            params.insert(name.clone(), graph.leaf(t.clone())?);
        }
        let first_captured = cfg.num_layers - window + 1;
        let patch_index = Rc::new(self.patch_indices());

        let mut rows = Vec::with_capacity(batch);
        let mut per_sample: Vec<Vec<SampleCapture>> = Vec::with_capacity(batch);
        for b in 0..batch {
            let offset = opts
                .cls_offset
                .as_ref()
                .map(|(layer, t)| (*layer, t.index_axis0(b)));
            let (row, caps) = self.sample_forward(
                &graph,
                input,
                &params,
                b,
                &patch_index,
                opts.capture.then_some(first_captured),
                offset,
            )?;
            rows.push(row);
            per_sample.push(caps);
        }
        let logits = graph.concat(&rows, 0)?;

        let (captures, capture_nodes) = if opts.capture {
            self.assemble_captures(&graph, first_captured, per_sample)?
        } else {
            (Vec::new(), Vec::new())
        };

        Ok(ForwardPass {
            graph,
            input,
            logits,
            params,
            captures,
            capture_nodes,
            gradients: None,
        })
    }

    /// Flat input indices of every patch of sample 0, patch-major with
    /// `(channel, dy, dx)` inside a patch. Add `b * 3HW` for sample `b`.
    fn patch_indices(&self) -> Vec<usize> {
        let c = &self.config;
        let (rows, cols) = c.grid();
        let p = c.patch_size;
        let (h, w) = (c.image_height, c.image_width);
        let mut idx = Vec::with_capacity(c.num_patches() * c.patch_dim());
        for pr in 0..rows {
            for pc in 0..cols {
                for ch in 0..3 {
                    for dy in 0..p {
                        for dx in 0..p {
                            idx.push(ch * h * w + (pr * p + dy) * w + pc * p + dx);
                        }
                    }
                }
            }
        }
        idx
    }

    #[allow(clippy::too_many_arguments)]
    fn sample_forward(
        &self,
        g: &Graph,
        input: Var,
        params: &BTreeMap<String, Var>,
        b: usize,
        patch_index: &Rc<Vec<usize>>,
        capture_from: Option<usize>,
        cls_offset: Option<(usize, Tensor)>,
    ) -> Result<(Var, Vec<SampleCapture>)> {
        let c = &self.config;
        let d = c.embed_dim;
        let p = |name: &str| params[name];
        let image_len = 3 * c.image_height * c.image_width;
        let indices = if b == 0 {
            patch_index.clone()
        } else {
            Rc::new(patch_index.iter().map(|i| i + b * image_len).collect())
        };

        let embed = (|| {
            let patches = g.gather(input, indices, &[c.num_patches(), c.patch_dim()])?;
            let emb = g.matmul(patches, p("patch_embed.weight"))?;
            let emb = g.add_bias(emb, p("patch_embed.bias"))?;
            let mut tokens = vec![g.reshape(p("cls_token"), &[1, d])?];
            if c.distillation_token {
                tokens.push(g.reshape(p("dist_token"), &[1, d])?);
            }
            tokens.push(emb);
            let x = g.concat(&tokens, 0)?;
            g.add(x, p("pos_embed"))
        })()
        .map_err(|e| e.in_context("patch embedding"))?;

        let mut x = embed;
        let mut caps = Vec::new();
        for l in 0..c.num_layers {
            let layer = l + 1;
            let offset = cls_offset
                .as_ref()
                .filter(|(at, _)| *at == layer)
                .map(|(_, t)| t);
            let capture = capture_from.is_some_and(|first| layer >= first);
            let (next, cap) = self
                .block(g, params, l, x, offset, capture)
                .map_err(|e| e.in_context(&format!("layer {layer}")))?;
            x = next;
            caps.extend(cap);
        }

        let head = (|| {
            let x = g.layernorm(x, p("norm.gain"), p("norm.bias"), LAYERNORM_EPS)?;
            let cls = g.slice(x, 0, 0, 1)?;
            let logits = g.matmul(cls, p("head.weight"))?;
            g.add_bias(logits, p("head.bias"))
        })()
        .map_err(|e| e.in_context("head"))?;
        Ok((head, caps))
    }

    fn block(
        &self,
        g: &Graph,
        params: &BTreeMap<String, Var>,
        l: usize,
        x: Var,
        cls_offset: Option<&Tensor>,
        capture: bool,
    ) -> Result<(Var, Option<SampleCapture>)> {
        let c = &self.config;
        let p = |s: &str| params[&format!("blocks.{l}.{s}")];
        let dh = c.head_dim();
        let n = c.num_tokens();

        let h = g.layernorm(x, p("norm1.gain"), p("norm1.bias"), LAYERNORM_EPS)?;
        let linear = |input: Var, name: &str| -> Result<Var> {
            let y = g.matmul(input, p(&format!("{name}.weight")))?;
            g.add_bias(y, p(&format!("{name}.bias")))
        };
        let q = linear(h, "attn.q")?;
        let k = linear(h, "attn.k")?;
        let v = linear(h, "attn.v")?;

        let scale = 1.0 / (dh as f64).sqrt();
        let mut head_out = Vec::with_capacity(c.num_heads);
        let mut head_logits = Vec::with_capacity(c.num_heads);
        let mut head_values = Vec::with_capacity(c.num_heads);
        for head in 0..c.num_heads {
            let qh = g.slice_last(q, head * dh, dh)?;
            let kh = g.slice_last(k, head * dh, dh)?;
            let vh = g.slice_last(v, head * dh, dh)?;
            let scores = g.scale(g.matmul(qh, g.transpose(kh)?)?, scale)?;
            let attn = g.softmax(scores, 1.0)?;
            head_out.push(g.matmul(attn, vh)?);
            head_logits.push(scores);
            head_values.push(vh);
        }
        let mut attn_out = g.concat_last(&head_out)?;
        if let Some(offset) = cls_offset {
            let mut full = Tensor::zeros(&[n, c.embed_dim]);
            full.data_mut()[..c.embed_dim].copy_from_slice(offset.data());
            attn_out = g.add(attn_out, g.leaf(full)?)?;
        }

        let proj = linear(attn_out, "attn.proj")?;
        let x = g.add(x, proj)?;

        let h = g.layernorm(x, p("norm2.gain"), p("norm2.bias"), LAYERNORM_EPS)?;
        let h = g.gelu(linear(h, "mlp.fc1")?)?;
        let h = linear(h, "mlp.fc2")?;
        let x = g.add(x, h)?;

        let cap = capture.then(|| SampleCapture {
            layer: l + 1,
            logits: head_logits,
            values: head_values,
            attn_out,
        });
        Ok((x, cap))
    }

    fn assemble_captures(
        &self,
        g: &Graph,
        first_captured: usize,
        per_sample: Vec<Vec<SampleCapture>>,
    ) -> Result<(Vec<LayerCapture>, Vec<Vec<Var>>)> {
        let c = &self.config;
        let (n, dh, heads) = (c.num_tokens(), c.head_dim(), c.num_heads);
        let batch = per_sample.len();
        let window = c.num_layers - first_captured + 1;
        let mut captures = Vec::with_capacity(window);
        let mut nodes = Vec::with_capacity(window);
        for i in 0..window {
            let mut logits = Vec::with_capacity(batch * heads * n * n);
            let mut values = Vec::with_capacity(batch * heads * n * dh);
            let mut cls_out = Vec::with_capacity(batch * c.embed_dim);
            let mut layer_nodes = Vec::with_capacity(batch);
            for sample in &per_sample {
                let cap = &sample[i];
                debug_assert_eq!(cap.layer, first_captured + i);
                for (&lg, &vh) in cap.logits.iter().zip(&cap.values) {
                    logits.extend_from_slice(g.value(lg).data());
                    values.extend_from_slice(g.value(vh).data());
                }
                cls_out.extend_from_slice(&g.value(cap.attn_out).data()[..c.embed_dim]);
                layer_nodes.push(cap.attn_out);
            }
            captures.push(LayerCapture {
                layer: first_captured + i,
                attn_logits: Tensor::new(vec![batch, heads, n, n], logits)?,
                values: Tensor::new(vec![batch, heads, n, dh], values)?,
                cls_out: Tensor::new(vec![batch, c.embed_dim], cls_out)?,
                cls_out_grad: None,
            });
            nodes.push(layer_nodes);
        }
        Ok((captures, nodes))
    }

    /// Backpropagates logit `class` (summed over the batch) and fills every
    /// capture's `cls_out_grad`.
    pub fn backward_class(&self, pass: &mut ForwardPass, class: usize) -> Result<()> {
        if class >= self.config.num_classes {
            return Err(Error::param(format!(
                "class {class} out of range 0..{}",
                self.config.num_classes
            )));
        }
        self.backward_calls.fetch_add(1, Ordering::Relaxed);
        let g = &pass.graph;
        let y = g.sum(g.slice(pass.logits, 1, class, 1)?)?;
        pass.backward_from(y)
    }

    /// Backpropagates the summed cross-entropy against `labels` and returns
    /// its value.
    pub fn backward_cross_entropy(&self, pass: &mut ForwardPass, labels: &[usize]) -> Result<f64> {
        let g = &pass.graph;
        let logits = pass.logits;
        let shape = g.shape(logits);
        if labels.len() != shape[0] {
            return Err(Error::shape(format!(
                "{} labels for a batch of {}",
                labels.len(),
                shape[0]
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= shape[1]) {
            return Err(Error::param(format!(
                "class {bad} out of range 0..{}",
                shape[1]
            )));
        }
        let mut onehot = Tensor::zeros(&shape);
        for (b, &y) in labels.iter().enumerate() {
            onehot.set(&[b, y], -1.0);
        }
        let logp = g.log_softmax(logits)?;
        let loss = g.sum(g.mul(logp, g.leaf(onehot)?)?)?;
        let value = g.value(loss).item()?;
        self.backward_calls.fetch_add(1, Ordering::Relaxed);
        pass.backward_from(loss)?;
        Ok(value)
    }
}

struct SampleCapture {
    layer: usize,
    logits: Vec<Var>,
    values: Vec<Var>,
    attn_out: Var,
}

impl ImageClassifier for VisionTransformer {
    fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    fn logits(&self, images: &Tensor) -> Result<Tensor> {
        Ok(self.forward(images, false)?.logits())
    }

    fn loss_gradient(&self, images: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
        let mut pass = self.forward(images, false)?;
        let loss = self.backward_cross_entropy(&mut pass, labels)?;
        let grad = pass.input_gradient().expect("backward just ran");
        Ok((loss, grad))
    }
}
