#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
}

impl LayerSpec {
    pub const fn new(kernel: usize, stride: usize, dilation: usize) -> Self {
        Self {
            kernel,
            stride,
            dilation,
        }
    }
}

/// Receptive field and total stride of a stack of valid convolutions,
/// in input steps. `None` for an empty stack.
pub fn effective_receptive_field(layers: &[LayerSpec]) -> Option<(usize, usize)> {
    if layers.is_empty() {
        return None;
    }
    let mut rf = 1;
    let mut jump = 1;
    for l in layers {
        rf += (l.kernel - 1) * l.dilation * jump;
        jump *= l.stride;
    }
    Some((rf, jump))
}

/// Smallest input length that yields at least one output step.
pub fn min_input_len(layers: &[LayerSpec]) -> usize {
    effective_receptive_field(layers).map_or(1, |(rf, _)| rf)
}

/// Output length of the stack for `t` input steps.
pub fn output_len(layers: &[LayerSpec], t: usize) -> Option<usize> {
    layers.iter().try_fold(t, |t, l| {
        let span = l.dilation * (l.kernel - 1) + 1;
        (t >= span).then(|| (t - span) / l.stride + 1)
    })
}
