use gsdyn::nn::ParamStore;
use gsdyn::selftest::divergence_max;
use gsdyn::velocity::{encode_position, integrate_positions, velocity_at, Field, VelocityFieldConfig, VelocityFieldNet};
use gsdyn_autodiff::{Tape, Tensor};
use nalgebra::{Rotation3, Vector3};
use proptest::prelude::*;
use rand::SeedableRng;

fn small_net(seed: u64) -> (ParamStore, VelocityFieldNet) {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let cfg = VelocityFieldConfig {
        patterns: 4,
        code_dim: 8,
        hidden: 16,
        hidden_layers: 2,
        ..Default::default()
    };
    let net = VelocityFieldNet::new(&mut store, cfg, 1e-3, &mut rng);
    (store, net)
}

#[test]
fn divergence_vanishes_at_a_thousand_samples() {
    let d = divergence_max(1000, 99).unwrap();
    assert!(d < 1e-6, "max |div v| = {d:e}");
}

#[test]
fn rk4_follows_a_rigid_rotation() {
    let (mut store, net) = small_net(1);
    let omega = 2.0;
    net.set_constant(&mut store, [0.0, 0.0, 0.0, 0.0, omega, 0.0]);
    let tape = Tape::new();
    let params = store.attach_constants(&tape);
    let start = [Vector3::new(0.3, 0.1, 0.0), Vector3::new(-0.2, 0.5, 0.4)];
    let p0 = tape.constant(Tensor::new([2, 3], start.iter().flat_map(|p| p.iter().copied()).collect()).unwrap());
    let h = net.bottleneck(&params, net.codes(&params, p0).unwrap()).unwrap();
    let field = Field::Structured { net: &net, h };
    let t1 = 0.5;
    let p1 = integrate_positions(&field, &params, p0, 0.0, t1, 50).unwrap().value();
    let rot = Rotation3::from_axis_angle(&Vector3::y_axis(), omega * t1);
    for (i, p) in start.iter().enumerate() {
        let want = rot * p;
        let got = Vector3::from_column_slice(&p1.data()[3 * i..3 * i + 3]);
        assert!((got - want).norm() < 1e-8, "{got:?} vs {want:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn field_is_affine_in_position(seed in 0u64..500, t in 0.0f64..2.0,
                                   a in prop::array::uniform3(-1.0f64..1.0),
                                   b in prop::array::uniform3(-1.0f64..1.0),
                                   s in 0.0f64..1.0) {
        // v(p) = V_lin + ω × p, so v is affine along any segment.
        let (store, net) = small_net(seed);
        let z = vec![0.4; 8];
        let (pa, pb) = (Vector3::from(a), Vector3::from(b));
        let va = velocity_at(&net, &store, &z, t, &pa).unwrap();
        let vb = velocity_at(&net, &store, &z, t, &pb).unwrap();
        let vm = velocity_at(&net, &store, &z, t, &(pa * (1.0 - s) + pb * s)).unwrap();
        prop_assert!((vm - (va * (1.0 - s) + vb * s)).norm() < 1e-12);
    }

    #[test]
    fn rotational_part_is_orthogonal_to_offsets(seed in 0u64..500, t in 0.0f64..2.0,
                                               a in prop::array::uniform3(-1.0f64..1.0),
                                               d in prop::array::uniform3(-1.0f64..1.0)) {
        // (v(p + d) − v(p)) = ω × d is perpendicular to d.
        let (store, net) = small_net(seed);
        let z = vec![-0.3; 8];
        let (p, d) = (Vector3::from(a), Vector3::from(d));
        let dv = velocity_at(&net, &store, &z, t, &(p + d)).unwrap() - velocity_at(&net, &store, &z, t, &p).unwrap();
        prop_assert!(dv.dot(&d).abs() < 1e-12);
    }

    #[test]
    fn encoding_is_bounded(x in prop::array::uniform3(-5.0f64..5.0), freqs in 0usize..8) {
        let e = encode_position(&Vector3::from(x), freqs);
        prop_assert_eq!(e.len(), 3 + 6 * freqs);
        let stride = 2 * freqs + 1;
        prop_assert!(e.iter().enumerate().all(|(i, v)| i % stride == 0 || v.abs() <= 1.0));
    }
}
