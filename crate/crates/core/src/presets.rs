//! Reference model architectures.

use crate::nn::{LayerSpec, ModelSpec};

/// VGG-13 for 32x32x3 inputs: ten 3x3 convolutions in five pooled blocks of
/// two (64, 128, 256, 512, 512 channels), then 512-512-10 dense layers.
pub fn vgg13_cifar10() -> ModelSpec {
    let blocks = [64, 128, 256, 512, 512];
    let mut layers = Vec::new();
    let (mut ch, mut side) = (3, 32);
    for &width in &blocks {
        for _ in 0..2 {
            layers.push(LayerSpec::conv(width, ch, 3, side, side));
            ch = width;
        }
        side /= 2;
    }
    layers.push(LayerSpec::dense(512, ch, side, side));
    layers.push(LayerSpec::dense(512, 512, 1, 1));
    layers.push(LayerSpec::dense(10, 512, 1, 1));
    ModelSpec::new(layers, 10).expect("valid preset")
}

/// AlexNet adapted to 32x32x3 inputs: 5x5 convolutions of 64 and 192
/// filters (each pooled), three 3x3 convolutions (384, 256, 256, pooled),
/// then 1024-512-10 dense layers.
pub fn alexnet_cifar10() -> ModelSpec {
    let layers = vec![
        LayerSpec::conv(64, 3, 5, 32, 32),
        LayerSpec::conv(192, 64, 5, 16, 16),
        LayerSpec::conv(384, 192, 3, 8, 8),
        LayerSpec::conv(256, 384, 3, 8, 8),
        LayerSpec::conv(256, 256, 3, 8, 8),
        LayerSpec::dense(1024, 256, 4, 4),
        LayerSpec::dense(512, 1024, 1, 1),
        LayerSpec::dense(10, 512, 1, 1),
    ];
    ModelSpec::new(layers, 10).expect("valid preset")
}

/// Small LeNet-style network for 28x28 grey-scale digits: two pooled 3x3
/// convolutions (8 and 16 filters) and a 64-unit hidden dense layer.
pub fn lenet_mnist() -> ModelSpec {
    let layers = vec![
        LayerSpec::conv(8, 1, 3, 28, 28),
        LayerSpec::conv(16, 8, 3, 14, 14),
        LayerSpec::dense(64, 16, 7, 7),
        LayerSpec::dense(10, 64, 1, 1),
    ];
    ModelSpec::new(layers, 10).expect("valid preset")
}

/// LeNet-style network sized for arbitrary `side x side` single-channel
/// inputs with `classes` outputs.
pub fn lenet_for(side: usize, channels: usize, classes: usize) -> ModelSpec {
    let half = side / 2;
    let quarter = half / 2;
    let layers = vec![
        LayerSpec::conv(8, channels, 3, side, side),
        LayerSpec::conv(16, 8, 3, half, half),
        LayerSpec::dense(64, 16, quarter, quarter),
        LayerSpec::dense(classes, 64, 1, 1),
    ];
    ModelSpec::new(layers, classes).expect("valid preset")
}

/// Looks a preset up by name.
pub fn by_name(name: &str) -> Option<ModelSpec> {
    match name {
        "vgg13" | "vgg13-cifar10" => Some(vgg13_cifar10()),
        "alexnet" | "alexnet-cifar10" => Some(alexnet_cifar10()),
        "lenet" | "lenet-mnist" => Some(lenet_mnist()),
        _ => None,
    }
}

pub const NAMES: [&str; 3] = ["vgg13-cifar10", "alexnet-cifar10", "lenet-mnist"];
