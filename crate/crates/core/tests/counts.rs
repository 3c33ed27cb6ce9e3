//! Parameter and MACC counts against brute-force loop nests.

use edgesplit_core::model::{build_vgg16, count_maccs, count_params, LayerKind, SplitModel};
use proptest::prelude::*;

/// Counts one multiply-accumulate per (output element, kernel tap) pair,
/// padded taps included.
fn brute_conv_maccs(c: usize, h: usize, w: usize, oc: usize, k: usize, s: usize, p: usize) -> u64 {
    let mut n = 0u64;
    for _o in 0..oc {
        let mut oy = 0;
        while oy * s + k <= h + 2 * p {
            let mut ox = 0;
            while ox * s + k <= w + 2 * p {
                for _ic in 0..c {
                    for _ky in 0..k {
                        for _kx in 0..k {
                            n += 1;
                        }
                    }
                }
                ox += 1;
            }
            oy += 1;
        }
    }
    n
}

fn brute_conv_params(c: usize, oc: usize, k: usize, bias: bool) -> u64 {
    let mut n = 0u64;
    for _ in 0..oc {
        for _ in 0..c * k * k {
            n += 1;
        }
        if bias {
            n += 1;
        }
    }
    n
}

proptest! {
    #[test]
    fn conv_counts(c in 1usize..5, h in 1usize..12, w in 1usize..12, oc in 1usize..5,
                   k in 1usize..4, s in 1usize..3, p in 0usize..2, bias: bool) {
        prop_assume!(k <= h + 2 * p && k <= w + 2 * p);
        let kind = LayerKind::Conv2d { in_channels: c, out_channels: oc, kernel: k, stride: s, padding: p, bias };
        let (out, params, maccs) = kind.infer(&[c, h, w]).unwrap();
        prop_assert_eq!(maccs, brute_conv_maccs(c, h, w, oc, k, s, p));
        prop_assert_eq!(params, brute_conv_params(c, oc, k, bias));
        prop_assert_eq!(out[0], oc);
    }

    #[test]
    fn linear_counts(f in 1usize..50, o in 1usize..20) {
        let (_, params, maccs) = LayerKind::Linear { in_features: f, out_features: o }.infer(&[f]).unwrap();
        let mut n = 0u64;
        for _ in 0..o { for _ in 0..f { n += 1; } }
        prop_assert_eq!(maccs, n);
        prop_assert_eq!(params, n + o as u64);
    }
}

#[test]
fn vgg_totals_sum_layer_loop_nests() {
    let vgg = build_vgg16(10, [3, 32, 32]).unwrap();
    let mut maccs = 0;
    for l in &vgg.layers {
        if let LayerKind::Conv2d { in_channels, out_channels, kernel, stride, padding, .. } = l.kind {
            let [_, h, w] = l.input_shape[..] else { panic!("conv input is C×H×W") };
            maccs += brute_conv_maccs(in_channels, h, w, out_channels, kernel, stride, padding);
        } else if let LayerKind::Linear { in_features, out_features } = l.kind {
            maccs += (in_features * out_features) as u64;
        }
    }
    assert_eq!(vgg.total_maccs(), maccs);
    let kinds = vgg.kinds();
    assert_eq!(count_maccs(&kinds, &[3, 32, 32]).unwrap(), maccs);
    assert_eq!(count_params(&vgg.layers), vgg.total_params());
}

#[test]
fn split_partitions_base_counts() {
    let vgg = build_vgg16(10, [3, 32, 32]).unwrap();
    for p in vgg.positions() {
        let s = SplitModel::new(&vgg, p, None, 4).unwrap();
        assert_eq!(s.edge_base_params() + s.cloud_base_params(), vgg.total_params(), "split {p}");
        let edge_base: u64 = s.edge_layers.iter().map(|l| l.maccs).sum();
        let cloud_base: u64 = s.cloud_layers.iter().map(|l| l.maccs).sum();
        assert_eq!(edge_base + cloud_base, vgg.total_maccs(), "split {p}");
    }
}
