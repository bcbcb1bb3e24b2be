use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{Init, ParamId, ParamStore};
use crate::tensor::Scalar;

/// 3D convolution over `[C × T × H × W]` clips.
#[derive(Debug, Clone)]
pub struct Conv3d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl Conv3d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: [usize; 3],
        stride: [usize; 3],
        padding: [usize; 3],
        rng: &mut R,
    ) -> Result<Self> {
        Self::validate(in_channels, out_channels, kernel, stride, padding)?;
        let fan_in = in_channels * kernel.iter().product::<usize>();
        let init = Init::Uniform {
            bound: 1.0 / (fan_in as f64).sqrt(),
        };
        let shape = [out_channels, in_channels, kernel[0], kernel[1], kernel[2]];
        let weight = store.insert(format!("{name}.weight"), init.sample(&shape, rng));
        let bias = store.insert(format!("{name}.bias"), init.sample(&[out_channels], rng));
        Ok(Self {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        })
    }

    pub fn validate(
        in_channels: usize,
        out_channels: usize,
        kernel: [usize; 3],
        stride: [usize; 3],
        padding: [usize; 3],
    ) -> Result<()> {
        if in_channels == 0 || out_channels == 0 {
            return Err(Error::config("conv3d channels must be positive"));
        }
        for a in 0..3 {
            if kernel[a] == 0 || stride[a] == 0 {
                return Err(Error::config(format!(
                    "conv3d kernel {kernel:?} and stride {stride:?} must be positive"
                )));
            }
            if padding[a] >= kernel[a] {
                return Err(Error::config(format!(
                    "conv3d padding {padding:?} must be smaller than kernel {kernel:?}"
                )));
            }
        }
        Ok(())
    }

    pub fn num_params(&self) -> u64 {
        (self.out_channels * self.in_channels * self.kernel.iter().product::<usize>()
            + self.out_channels) as u64
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        g.conv3d(x, w, Some(b), self.stride, self.padding)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn unit_kernel_is_identity() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = Conv3d::new(&mut store, "c", 1, 1, [1, 1, 1], [1, 1, 1], [0, 0, 0], &mut rng).unwrap();
        store.set(c.weight, Tensor::ones([1, 1, 1, 1, 1]));
        store.set(c.bias, Tensor::zeros([1]));
        let x = Init::Normal { std: 1.0 }.sample::<f64, _>(&[1, 3, 4, 5], &mut rng);
        let mut g = Graph::new(&store);
        let xv = g.input(x.clone());
        let y = c.forward(&mut g, xv).unwrap();
        assert_eq!(g.value(y), &x);
    }

    #[test]
    fn padding_must_be_below_kernel() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert!(Conv3d::new(&mut store, "c", 1, 1, [3, 3, 3], [1, 1, 1], [3, 1, 1], &mut rng).is_err());
        assert!(Conv3d::new(&mut store, "c", 1, 1, [3, 3, 3], [1, 1, 1], [1, 1, 1], &mut rng).is_ok());
    }
}
