use ramnet::network::{builtin_specs, specs, LayerKind, Network};

#[test]
fn every_builtin_reaches_its_declared_sizes() {
    for spec in builtin_specs() {
        let net = Network::<f32>::build(&spec).unwrap();
        for (layer, declared) in net.layers().iter().zip(&spec.layers) {
            if let Some(size) = declared.expected_size {
                assert_eq!(layer.out_size, size, "{} layer {}", spec.name, layer.index);
            }
        }
    }
}

#[test]
fn parameter_count_is_weights_plus_untied_biases() {
    for spec in builtin_specs() {
        let net = Network::<f32>::build(&spec).unwrap();
        let mut weights = 0;
        let mut biases = 0;
        for l in net.layers() {
            match l.kind {
                LayerKind::Conv => {
                    weights += l.out_channels * l.in_channels * l.filter * l.filter;
                    biases += l.out_channels * l.out_size * l.out_size;
                }
                LayerKind::Dense => {
                    weights += l.in_channels;
                    biases += 1;
                }
                _ => {}
            }
        }
        assert_eq!(net.count_parameters(), weights + biases, "{}", spec.name);
        assert_eq!(net.count_conv_bias(), biases - 1, "{}", spec.name);
    }
}

#[test]
fn forward_output_matches_resolved_feature_size() {
    let net = Network::<f32>::build_initialized(&specs::net_small(), 1).unwrap();
    let x = ramnet::tensor::Tensor::full(&[3, 64, 64], 0.25f32);
    let trace = net.forward(&x).unwrap();
    assert_eq!(trace.last_conv().shape(), &[32, 15, 15]);
    assert_eq!(net.feature_size(), 15);
}

#[test]
fn rescaled_small_net_keeps_its_layer_count() {
    let base = specs::net_small();
    let big = base.with_input_size(128).unwrap();
    let a = Network::<f32>::build(&base).unwrap();
    let b = Network::<f32>::build(&big).unwrap();
    assert_eq!(a.layers().len(), b.layers().len());
    assert_eq!(b.feature_size(), 31);
    assert!(b.count_parameters() > a.count_parameters());
}
