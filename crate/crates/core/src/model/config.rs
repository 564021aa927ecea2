use crate::error::{Error, Result};

/// Gate nonlinearity applied to the texture layer output.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum GateKind {
    /// Softmax across channels at every pixel.
    #[default]
    ChannelSoftmax,
    /// Elementwise logistic sigmoid.
    Sigmoid,
}

impl GateKind {
    pub fn code(self) -> u8 {
        match self {
            GateKind::ChannelSoftmax => 0,
            GateKind::Sigmoid => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(GateKind::ChannelSoftmax),
            1 => Some(GateKind::Sigmoid),
            _ => None,
        }
    }
}

/// Architecture hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct GtcnnConfig {
    /// Image channels: 1 (grayscale) or 3 (color).
    pub c_in: usize,
    /// Feature channels in the noise stream and in every texture-layer stage.
    pub channels: usize,
    /// Number of gated CBR layers.
    pub depth: usize,
    /// Pooling stages in each gated texture layer.
    pub stages: usize,
    pub gate: GateKind,
    /// Append a 1x1 convolution after the texture layer's last block.
    pub use_1x1: bool,
}

impl Default for GtcnnConfig {
    fn default() -> Self {
        Self::d1()
    }
}

impl GtcnnConfig {
    pub const fn d1() -> Self {
        GtcnnConfig {
            c_in: 1,
            channels: 64,
            depth: 1,
            stages: 4,
            gate: GateKind::ChannelSoftmax,
            use_1x1: false,
        }
    }

    pub const fn d3() -> Self {
        GtcnnConfig { depth: 3, ..Self::d1() }
    }

    pub const fn d6() -> Self {
        GtcnnConfig {
            depth: 6,
            use_1x1: true,
            ..Self::d1()
        }
    }

    /// Checks the ranges representable in the weights file header.
    pub fn validate(&self) -> Result<()> {
        if self.c_in != 1 && self.c_in != 3 {
            return Err(Error::InvalidConfig(format!(
                "image channels must be 1 or 3, got {}",
                self.c_in
            )));
        }
        if self.channels == 0 || self.channels > u16::MAX as usize {
            return Err(Error::InvalidConfig(format!(
                "feature channels must be in 1..=65535, got {}",
                self.channels
            )));
        }
        if self.depth == 0 || self.depth > u8::MAX as usize {
            return Err(Error::InvalidConfig(format!(
                "depth must be in 1..=255, got {}",
                self.depth
            )));
        }
        // 2^stages must stay a sane padding multiple.
        if self.stages > 16 {
            return Err(Error::InvalidConfig(format!(
                "stages must be at most 16, got {}",
                self.stages
            )));
        }
        Ok(())
    }

    /// Spatial multiple the texture layer pads its input to.
    pub fn spatial_multiple(&self) -> usize {
        1 << self.stages
    }
}

/// Shifts the texture layer's recorded skip `e_stage` of GCBR layer `layer`
/// by `lambda` before it is concatenated in the decoder.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Modulation {
    lambda: f64,
    pub stage: usize,
    pub layer: usize,
}

impl Modulation {
    pub const LAMBDA_MIN: f64 = -0.5;
    pub const LAMBDA_MAX: f64 = 0.5;
    pub const DEFAULT_STAGE: usize = 2;
    pub const DEFAULT_LAYER: usize = 0;

    /// `lambda` is clamped to `[-0.5, 0.5]`.
    pub fn new(lambda: f64, stage: usize, layer: usize) -> Self {
        let lambda = if lambda.is_nan() {
            0.0
        } else {
            lambda.clamp(Self::LAMBDA_MIN, Self::LAMBDA_MAX)
        };
        Modulation { lambda, stage, layer }
    }

    /// Modulates `e_2` of the first layer.
    pub fn with_lambda(lambda: f64) -> Self {
        Self::new(lambda, Self::DEFAULT_STAGE, Self::DEFAULT_LAYER)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn check(&self, config: &GtcnnConfig) -> Result<()> {
        if self.layer >= config.depth {
            return Err(Error::Modulation(format!(
                "layer {} out of range (model has {} layers)",
                self.layer, config.depth
            )));
        }
        if self.stage >= config.stages {
            return Err(Error::Modulation(format!(
                "stage {} out of range (texture layer records skips 0..{})",
                self.stage, config.stages
            )));
        }
        Ok(())
    }
}
