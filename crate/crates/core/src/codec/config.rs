use serde::{Deserialize, Serialize};

/// Smallest legal image side: four stride-2 stages must leave a 4x4 latent.
pub const MIN_IMAGE_SIDE: usize = 64;
/// Total downsampling of the core transforms.
pub const LATENT_STRIDE: usize = 16;
/// Total downsampling from image to hyper-latent.
pub const HYPER_STRIDE: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    ConvTranspose,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub relu: bool,
}

impl LayerSpec {
    pub(crate) fn conv(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, relu: bool) -> Self {
        Self {
            kind: LayerKind::Conv,
            in_channels,
            out_channels,
            kernel,
            stride,
            relu,
        }
    }

    pub(crate) fn tconv(in_channels: usize, out_channels: usize, kernel: usize, relu: bool) -> Self {
        Self {
            kind: LayerKind::ConvTranspose,
            in_channels,
            out_channels,
            kernel,
            stride: 2,
            relu,
        }
    }

    pub fn padding(&self) -> usize {
        self.kernel / 2
    }

    /// Extra rows/cols appended by a transposed layer so it exactly doubles.
    pub fn output_padding(&self) -> usize {
        match self.kind {
            LayerKind::Conv => 0,
            LayerKind::ConvTranspose => self.stride - 1,
        }
    }

    /// Weight tensor shape: `[out, in, k, k]` for convolutions and
    /// `[in, out, k, k]` for transposed convolutions.
    pub fn weight_shape(&self) -> [usize; 4] {
        match self.kind {
            LayerKind::Conv => [self.out_channels, self.in_channels, self.kernel, self.kernel],
            LayerKind::ConvTranspose => [self.in_channels, self.out_channels, self.kernel, self.kernel],
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.weight_shape().iter().product::<usize>() + self.out_channels
    }
}

/// Widths and kernel sizes of the hyperprior autoencoder. Strides and
/// activations are fixed by the architecture.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Channels of the core latent `y`.
    pub latent_channels: usize,
    /// Channels of the hyper-latent `z` and of all hidden layers.
    pub hyper_channels: usize,
    pub core_kernel: usize,
    pub hyper_kernel: usize,
    /// Kernel of the stride-1 layers at the ends of the hyper transforms.
    pub hyper_outer_kernel: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self::full()
    }
}

impl NetworkConfig {
    pub fn full() -> Self {
        Self {
            latent_channels: 192,
            hyper_channels: 128,
            core_kernel: 5,
            hyper_kernel: 5,
            hyper_outer_kernel: 3,
        }
    }

    pub fn toy() -> Self {
        Self {
            latent_channels: 32,
            hyper_channels: 16,
            ..Self::full()
        }
    }

    pub fn analysis_layers(&self) -> Vec<LayerSpec> {
        let (m, n, k) = (self.latent_channels, self.hyper_channels, self.core_kernel);
        vec![
            LayerSpec::conv(3, n, k, 2, true),
            LayerSpec::conv(n, n, k, 2, true),
            LayerSpec::conv(n, n, k, 2, true),
            LayerSpec::conv(n, m, k, 2, false),
        ]
    }

    pub fn synthesis_layers(&self) -> Vec<LayerSpec> {
        let (m, n, k) = (self.latent_channels, self.hyper_channels, self.core_kernel);
        vec![
            LayerSpec::tconv(m, n, k, true),
            LayerSpec::tconv(n, n, k, true),
            LayerSpec::tconv(n, n, k, true),
            LayerSpec::tconv(n, 3, k, false),
        ]
    }

    pub fn hyper_analysis_layers(&self) -> Vec<LayerSpec> {
        let (m, n) = (self.latent_channels, self.hyper_channels);
        vec![
            LayerSpec::conv(m, n, self.hyper_outer_kernel, 1, true),
            LayerSpec::conv(n, n, self.hyper_kernel, 2, true),
            LayerSpec::conv(n, n, self.hyper_kernel, 2, false),
        ]
    }

    /// Ends in `2 * latent_channels` outputs: means first, then scales.
    pub fn hyper_synthesis_layers(&self) -> Vec<LayerSpec> {
        let (m, n) = (self.latent_channels, self.hyper_channels);
        vec![
            LayerSpec::tconv(n, n, self.hyper_kernel, true),
            LayerSpec::tconv(n, n, self.hyper_kernel, true),
            LayerSpec::conv(n, 2 * m, self.hyper_outer_kernel, 1, false),
        ]
    }

    pub fn parameter_count(&self) -> usize {
        let conv: usize = [
            self.analysis_layers(),
            self.synthesis_layers(),
            self.hyper_analysis_layers(),
            self.hyper_synthesis_layers(),
        ]
        .iter()
        .flatten()
        .map(LayerSpec::parameter_count)
        .sum();
        conv + crate::entropy::FactorizedPrior::parameter_count_for(self.hyper_channels)
    }

    /// Stable 32-bit identifier stored in bitstream headers.
    pub fn id(&self) -> u32 {
        let canonical = format!(
            "M={};N={};kc={};kh={};ko={}",
            self.latent_channels,
            self.hyper_channels,
            self.core_kernel,
            self.hyper_kernel,
            self.hyper_outer_kernel
        );
        crc32fast::hash(canonical.as_bytes())
    }

    pub fn validate(&self) -> crate::Result<()> {
        let ok = self.latent_channels > 0
            && self.hyper_channels > 0
            && [self.core_kernel, self.hyper_kernel, self.hyper_outer_kernel]
                .iter()
                .all(|k| k % 2 == 1);
        if ok {
            Ok(())
        } else {
            Err(crate::Error::Config(format!(
                "channel counts must be positive and kernels odd: {self:?}"
            )))
        }
    }
}

/// Image dims rounded up to the latent stride.
pub fn padded_dims(height: usize, width: usize) -> (usize, usize) {
    (
        height.div_ceil(LATENT_STRIDE) * LATENT_STRIDE,
        width.div_ceil(LATENT_STRIDE) * LATENT_STRIDE,
    )
}

pub fn latent_dims(height: usize, width: usize) -> (usize, usize) {
    (height.div_ceil(LATENT_STRIDE), width.div_ceil(LATENT_STRIDE))
}

pub fn hyper_latent_dims(height: usize, width: usize) -> (usize, usize) {
    (height.div_ceil(HYPER_STRIDE), width.div_ceil(HYPER_STRIDE))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stride_structure() {
        let c = NetworkConfig::toy();
        let strided = |ls: &[LayerSpec]| ls.iter().filter(|l| l.stride == 2).count();
        assert_eq!(strided(&c.analysis_layers()), 4);
        assert_eq!(strided(&c.synthesis_layers()), 4);
        assert_eq!(strided(&c.hyper_analysis_layers()), 2);
        assert_eq!(strided(&c.hyper_synthesis_layers()), 2);
        assert_eq!(
            c.hyper_synthesis_layers().last().unwrap().out_channels,
            2 * c.latent_channels
        );
    }

    #[test]
    fn dims() {
        assert_eq!(padded_dims(100, 100), (112, 112));
        assert_eq!(latent_dims(128, 96), (8, 6));
        assert_eq!(hyper_latent_dims(128, 96), (2, 2));
        assert_eq!(hyper_latent_dims(64, 64), (1, 1));
    }

    #[test]
    fn id_depends_on_widths() {
        assert_ne!(NetworkConfig::toy().id(), NetworkConfig::full().id());
        assert_eq!(NetworkConfig::toy().id(), NetworkConfig::toy().id());
    }
}
