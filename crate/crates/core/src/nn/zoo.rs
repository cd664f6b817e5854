//! Architectures used by the experiment presets.

use super::{LayerSpec, Network};

/// Dense ReLU stack: each hidden block is `dense -> [bn] -> relu -> [dropout]`,
/// followed by an affine output layer.
pub fn mlp(input: usize, hidden: &[usize], outputs: usize, batch_norm: bool, dropout: Option<f64>) -> Network {
    let mut layers = Vec::new();
    let mut prev = input;
    for &h in hidden {
        layers.push(LayerSpec::Dense { in_features: prev, out_features: h });
        if batch_norm {
            layers.push(LayerSpec::batch_norm(h));
        }
        layers.push(LayerSpec::Relu);
        if let Some(rate) = dropout {
            layers.push(LayerSpec::Dropout { rate });
        }
        prev = h;
    }
    layers.push(LayerSpec::Dense { in_features: prev, out_features: outputs });
    Network::new(vec![input], layers).expect("mlp dims are consistent by construction")
}

/// Default dropout rate for the tabular/MNIST MLP presets.
pub const PRESET_DROPOUT: f64 = 0.5;

pub fn mlp_adult() -> Network {
    mlp(104, &[256, 128, 64], 2, true, Some(PRESET_DROPOUT))
}

pub fn mlp_breast() -> Network {
    mlp(30, &[64, 32], 2, true, Some(PRESET_DROPOUT))
}

pub fn mlp_har() -> Network {
    mlp(561, &[512, 256], 6, true, None)
}

pub fn mlp_mnist() -> Network {
    mlp(784, &[256, 128], 10, true, Some(PRESET_DROPOUT))
}

/// LeNet-5 with ReLU and max pooling on `1x28x28` inputs.
pub fn lenet5(classes: usize) -> Network {
    Network::new(
        vec![1, 28, 28],
        vec![
            LayerSpec::Conv2d { in_channels: 1, out_channels: 6, kernel: 5, stride: 1, padding: 2 },
            LayerSpec::Relu,
            LayerSpec::MaxPool2d { kernel: 2, stride: 2 },
            LayerSpec::Conv2d { in_channels: 6, out_channels: 16, kernel: 5, stride: 1, padding: 0 },
            LayerSpec::Relu,
            LayerSpec::MaxPool2d { kernel: 2, stride: 2 },
            LayerSpec::Flatten,
            LayerSpec::Dense { in_features: 400, out_features: 120 },
            LayerSpec::Relu,
            LayerSpec::Dense { in_features: 120, out_features: 84 },
            LayerSpec::Relu,
            LayerSpec::Dense { in_features: 84, out_features: classes },
        ],
    )
    .expect("lenet5 dims are consistent")
}

/// Narrow LeNet-5 variant (4 and 8 channels, one 32-unit hidden layer) on
/// square `1 x side x side` inputs. `side` must be at least 16.
pub fn lenet5_lite(side: usize, classes: usize) -> Network {
    assert!(side >= 16, "lenet5_lite needs side >= 16");
    let s1 = (side - 4) / 2;
    let s2 = (s1 - 4) / 2;
    Network::new(
        vec![1, side, side],
        vec![
            LayerSpec::Conv2d { in_channels: 1, out_channels: 4, kernel: 5, stride: 1, padding: 0 },
            LayerSpec::Relu,
            LayerSpec::MaxPool2d { kernel: 2, stride: 2 },
            LayerSpec::Conv2d { in_channels: 4, out_channels: 8, kernel: 5, stride: 1, padding: 0 },
            LayerSpec::Relu,
            LayerSpec::MaxPool2d { kernel: 2, stride: 2 },
            LayerSpec::Flatten,
            LayerSpec::Dense { in_features: 8 * s2 * s2, out_features: 32 },
            LayerSpec::Relu,
            LayerSpec::Dense { in_features: 32, out_features: classes },
        ],
    )
    .expect("lenet5_lite dims are consistent")
}
