use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    Dense,
}

/// One layer of a model, described by the dimensions the cost model uses.
///
/// For a convolution, `input_rows x input_cols` is the spatial size of the
/// feature map the layer reads (and, with stride 1 and "same" padding, also
/// the size it writes). For a dense layer `kernel_rows = kernel_cols = 1` and
/// the flattened input length is `input_channels * input_rows * input_cols`:
/// a dense layer that follows a convolution keeps the per-channel spatial
/// size in `input_rows x input_cols`, a dense layer following another dense
/// layer has `input_rows = input_cols = 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub neurons: usize,
    pub kernel_rows: usize,
    pub kernel_cols: usize,
    pub input_rows: usize,
    pub input_cols: usize,
    pub input_channels: usize,
}

impl LayerSpec {
    pub fn conv(neurons: usize, input_channels: usize, kernel: usize, rows: usize, cols: usize) -> Self {
        Self {
            kind: LayerKind::Conv,
            neurons,
            kernel_rows: kernel,
            kernel_cols: kernel,
            input_rows: rows,
            input_cols: cols,
            input_channels,
        }
    }

    pub fn dense(neurons: usize, input_channels: usize, rows: usize, cols: usize) -> Self {
        Self {
            kind: LayerKind::Dense,
            neurons,
            kernel_rows: 1,
            kernel_cols: 1,
            input_rows: rows,
            input_cols: cols,
            input_channels,
        }
    }

    /// Length of the slice of one neuron's weights that reads a single input channel.
    pub fn per_channel_len(&self) -> usize {
        match self.kind {
            LayerKind::Conv => self.kernel_rows * self.kernel_cols,
            LayerKind::Dense => self.input_rows * self.input_cols,
        }
    }

    /// Number of weights of one neuron (bias excluded).
    pub fn fan_in(&self) -> usize {
        self.input_channels * self.per_channel_len()
    }

    /// Spatial size of one input channel.
    pub fn input_area(&self) -> usize {
        self.input_rows * self.input_cols
    }

    /// The same layer with a different neuron / input-channel count.
    pub fn resized(&self, neurons: usize, input_channels: usize) -> Self {
        Self { neurons, input_channels, ..*self }
    }

    fn check_dims(&self, idx: usize) -> Result<()> {
        let dims = [
            self.neurons,
            self.kernel_rows,
            self.kernel_cols,
            self.input_rows,
            self.input_cols,
            self.input_channels,
        ];
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidSpec(format!("layer {idx}: every dimension must be >= 1")));
        }
        if self.kind == LayerKind::Dense && (self.kernel_rows != 1 || self.kernel_cols != 1) {
            return Err(Error::InvalidSpec(format!("layer {idx}: dense layers need 1x1 kernels")));
        }
        Ok(())
    }
}

/// Ordered layer stack plus the number of output classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub layers: Vec<LayerSpec>,
    pub class_count: usize,
}

impl ModelSpec {
    pub fn new(layers: Vec<LayerSpec>, class_count: usize) -> Result<Self> {
        let spec = Self { layers, class_count };
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Checks dimension, channel chaining and pooling rules.
    ///
    /// Between two convolutions the spatial size either stays the same or is
    /// halved (floor) by a 2x2 max pool. A dense layer after a convolution
    /// sees that convolution's (possibly pooled) map. Dense layers cannot be
    /// followed by convolutions and the final layer must be dense.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidSpec("model has no layers".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            l.check_dims(i)?;
        }
        for i in 1..self.layers.len() {
            let prev = &self.layers[i - 1];
            let cur = &self.layers[i];
            if cur.input_channels != prev.neurons {
                return Err(Error::InvalidSpec(format!(
                    "layer {i}: input_channels {} != previous layer's neurons {}",
                    cur.input_channels, prev.neurons
                )));
            }
            match (prev.kind, cur.kind) {
                (LayerKind::Conv, _) => {
                    let same = cur.input_rows == prev.input_rows && cur.input_cols == prev.input_cols;
                    let pooled =
                        cur.input_rows == prev.input_rows / 2 && cur.input_cols == prev.input_cols / 2;
                    if !same && !pooled {
                        return Err(Error::InvalidSpec(format!(
                            "layer {i}: input {}x{} is neither {}x{} nor its 2x2-pooled size",
                            cur.input_rows, cur.input_cols, prev.input_rows, prev.input_cols
                        )));
                    }
                }
                (LayerKind::Dense, LayerKind::Dense) => {
                    if cur.input_area() != 1 {
                        return Err(Error::InvalidSpec(format!(
                            "layer {i}: dense after dense must have 1x1 input"
                        )));
                    }
                }
                (LayerKind::Dense, LayerKind::Conv) => {
                    return Err(Error::InvalidSpec(format!("layer {i}: convolution after dense layer")));
                }
            }
        }
        let last = self.layers.last().expect("non-empty");
        if last.kind != LayerKind::Dense {
            return Err(Error::InvalidSpec("final layer must be dense".into()));
        }
        if last.neurons != self.class_count {
            return Err(Error::InvalidSpec(format!(
                "final layer has {} neurons but class_count is {}",
                last.neurons, self.class_count
            )));
        }
        Ok(())
    }

    /// Flattened length of one input sample.
    pub fn input_len(&self) -> usize {
        self.layers.first().map_or(0, |l| l.input_channels * l.input_area())
    }

    /// Whether a 2x2 max pool sits between layer `i` and layer `i + 1`.
    pub fn pool_after(&self, i: usize) -> bool {
        match (self.layers.get(i), self.layers.get(i + 1)) {
            (Some(cur), Some(next)) => cur.kind == LayerKind::Conv && next.input_rows < cur.input_rows,
            _ => false,
        }
    }

    pub fn neuron_counts(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.neurons).collect()
    }

    pub fn total_neurons(&self) -> usize {
        self.layers.iter().map(|l| l.neurons).sum()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.neurons * (l.fan_in() + 1)).sum()
    }

    /// The sub-model that keeps `keep[i]` neurons of layer `i`. Input channels
    /// of every layer after the first follow the previous layer's kept count.
    pub fn kept_layers(&self, keep: &[usize]) -> Vec<LayerSpec> {
        let mut out = Vec::with_capacity(self.layers.len());
        let mut in_ch = self.layers.first().map_or(0, |l| l.input_channels);
        for (l, &k) in self.layers.iter().zip(keep) {
            out.push(l.resized(k, in_ch));
            in_ch = k;
        }
        out
    }
}
