//! Channel arithmetic of the pyramidal dense block.

use crate::error::{Error, Result};

/// Growth-rate description of one pyramidal dense block.
///
/// Layer `j` (1-based) emits `g0 + g (j - 1)` channels and runs its 3x3
/// convolution with `j + 1` groups.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct GrowthSchedule {
    /// Channels after the block's 1x1 reduction.
    pub c0: usize,
    /// Base growth rate.
    pub g0: usize,
    /// Growth-rate increment per layer.
    pub g: usize,
    /// Number of dense layers.
    pub layers: usize,
}

/// Channel plan of one dense layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DenseLayer {
    /// 1-based layer index.
    pub index: usize,
    /// Width of the concatenated input.
    pub in_channels: usize,
    /// Width after the 1x1 bottleneck and the grouped 3x3.
    pub out_channels: usize,
    pub groups: usize,
}

impl Default for GrowthSchedule {
    fn default() -> Self {
        GrowthSchedule {
            c0: 16,
            g0: 32,
            g: 16,
            layers: 4,
        }
    }
}

/// Output width of layer `j` with a varying growth rate.
pub fn pyramid_output_channels(g0: usize, g: usize, j: usize) -> usize {
    g0 + g * (j - 1)
}

/// Input width of layer `i` with a varying growth rate, closed form.
pub fn pyramid_input_channels(c0: usize, g0: usize, g: usize, i: usize) -> usize {
    c0 + (i - 1) * g0 + g * (i - 1) * (i.max(2) - 2) / 2
}

/// Input width of layer `i` with a fixed growth rate `g0`.
pub fn fixed_input_channels(c0: usize, g0: usize, i: usize) -> usize {
    c0 + (i - 1) * g0
}

/// Group count of layer `i`.
pub fn layer_groups(i: usize) -> usize {
    i + 1
}

impl GrowthSchedule {
    pub fn new(c0: usize, g0: usize, g: usize, layers: usize) -> Self {
        GrowthSchedule { c0, g0, g, layers }
    }

    /// Per-layer channel plan; rejects the first layer whose output width
    /// is not divisible by its group count.
    pub fn table(&self) -> Result<Vec<DenseLayer>> {
        if self.c0 == 0 || self.g0 == 0 || self.layers == 0 {
            return Err(Error::Config(format!(
                "growth schedule needs positive c0, g0 and layer count: {self:?}"
            )));
        }
        (1..=self.layers)
            .map(|i| {
                let layer = DenseLayer {
                    index: i,
                    in_channels: pyramid_input_channels(self.c0, self.g0, self.g, i),
                    out_channels: pyramid_output_channels(self.g0, self.g, i),
                    groups: layer_groups(i),
                };
                if layer.out_channels % layer.groups != 0 {
                    return Err(Error::Schedule {
                        layer: i,
                        channels: layer.out_channels,
                        groups: layer.groups,
                    });
                }
                Ok(layer)
            })
            .collect()
    }

    /// Input widths of the same block with a fixed growth rate, for comparison.
    pub fn fixed_growth_inputs(&self) -> Vec<usize> {
        (1..=self.layers)
            .map(|i| fixed_input_channels(self.c0, self.g0, i))
            .collect()
    }

    /// Width of the concatenation of the block input and all layer outputs.
    pub fn concat_width(&self) -> usize {
        self.c0
            + (1..=self.layers)
                .map(|j| pyramid_output_channels(self.g0, self.g, j))
                .sum::<usize>()
    }
}
