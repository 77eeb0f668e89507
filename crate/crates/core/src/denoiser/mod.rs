//! Encoder-decoder denoiser trained on the fidelity plus observer loss,
//! with hand-written reverse-mode gradients.

mod checkpoint;
pub mod gradcheck;
mod layers;
mod loss;
mod network;
mod scalar;
mod tensor;
mod train;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint};
pub use layers::ConvShape;
pub use loss::{observer_loss, loss_gradient, AbsentCentroidPolicy, LossConfig, LossTerms};
pub use network::{forward, init_network, ArchConfig, Params, LAYER_NAMES};
pub use scalar::Scalar;
pub use train::{denoise, input_scale, train, train_from, EpochRecord, History, TrainConfig, TrainSample};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::build_channels;
    use crate::image::{Image2D, Image3D};
    use crate::rng::RngStream;
    use rand::Rng;

    fn toy_arch() -> ArchConfig {
        ArchConfig { n_slices: 3, widths: [3, 4], kernel: 3, residual: true }
    }

    fn toy_loss(lambda: f64) -> LossConfig {
        LossConfig {
            lambda,
            slice_half_width: 1,
            channels: build_channels(16, &[1.0 / 16.0, 1.0 / 8.0, 1.0 / 4.0, 1.0 / 2.0]).unwrap(),
            absent_policy: AbsentCentroidPolicy::CanonicalRandom,
        }
    }

    fn random_volume(w: usize, h: usize, s: usize, g: &mut impl Rng) -> Image3D {
        Image3D::from_vec(w, h, s, (0..w * h * s).map(|_| g.random_range(0.0..2.0)).collect()).unwrap()
    }

    fn random_params(arch: &ArchConfig, seed: u64) -> Params<f64> {
        let mut p = init_network::<f64>(arch, RngStream::new(seed, 0)).unwrap();
        let mut g = RngStream::new(seed, 1).generator();
        for b in p.biases.iter_mut().flatten() {
            *b = g.random_range(-0.1..0.1);
        }
        p
    }

    type Batch = Vec<(Image3D, Image3D, Option<[usize; 3]>)>;

    fn random_batch(seed: u64) -> Batch {
        let mut g = RngStream::new(seed, 2).generator();
        (0..2)
            .map(|_| {
                let c = [g.random_range(3..13), g.random_range(3..13), g.random_range(0..3)];
                (random_volume(16, 16, 3, &mut g), random_volume(16, 16, 3, &mut g), Some(c))
            })
            .collect()
    }


    #[test]
    fn parameter_count_matches_shape_arithmetic() {
        let arch = ArchConfig::default();
        // (in, out, k) per layer: 8->16, 16->32, 32->32, 32->16, 16->16 (3x3), 16->8 (1x1)
        let oracle = [(8, 16, 3), (16, 32, 3), (32, 32, 3), (32, 16, 3), (16, 16, 3), (16, 8, 1)]
            .iter()
            .map(|&(i, o, k)| i * o * k * k + o)
            .sum::<usize>();
        assert_eq!(arch.parameter_count(), oracle);
        let p = init_network::<f32>(&arch, RngStream::new(1, 1)).unwrap();
        assert_eq!(p.len(), oracle);
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let arch = ArchConfig::default();
        let a = init_network::<f32>(&arch, RngStream::new(4, 2)).unwrap();
        let b = init_network::<f32>(&arch, RngStream::new(4, 2)).unwrap();
        assert_eq!(a, b);
        assert!(a.biases.iter().flatten().all(|&v| v == 0.0));
        let bound = (6.0f32 / (8.0 * 9.0 + 16.0 * 9.0)).sqrt();
        assert!(a.weights[0].iter().all(|v| v.abs() <= bound));
        assert_ne!(a, init_network::<f32>(&arch, RngStream::new(5, 2)).unwrap());
        assert!(init_network::<f32>(&ArchConfig { kernel: 2, ..arch }, RngStream::new(1, 1)).is_err());
    }

    #[test]
    fn forward_shapes_and_rectified_output() {
        let arch = toy_arch();
        let p = random_params(&arch, 3);
        let mut g = RngStream::new(3, 3).generator();
        let x = Image3D::from_vec(16, 8, 3, (0..384).map(|_| g.random_range(-2.0..2.0)).collect()).unwrap();
        let y = forward(&p, &x).unwrap();
        assert_eq!(y.dims(), x.dims());
        assert!(y.as_slice().iter().all(|&v| v >= 0.0));
        assert_eq!(forward(&p, &x).unwrap(), y);
        assert!(forward(&p, &Image3D::zeros(16, 16, 2)).is_err());
        assert!(forward(&p, &Image3D::zeros(14, 16, 3)).is_err());
    }

    #[test]
    fn zero_parameters_give_zero_or_identity() {
        let x = random_volume(16, 16, 3, &mut RngStream::new(5, 5).generator());
        let plain = Params::<f64>::zeros(&ArchConfig { residual: false, ..toy_arch() }).unwrap();
        assert!(forward(&plain, &x).unwrap().as_slice().iter().all(|&v| v == 0.0));
        let residual = Params::<f64>::zeros(&toy_arch()).unwrap();
        assert_eq!(forward(&residual, &x).unwrap(), x);
    }

    #[test]
    fn loss_trivial_cases() {
        let mut g = RngStream::new(6, 0).generator();
        let t = random_volume(16, 16, 3, &mut g);
        let p = random_volume(16, 16, 3, &mut g);
        let cfg = toy_loss(2.0);
        assert_eq!(observer_loss(&t, &t, Some([8, 8, 1]), &cfg).unwrap(), LossTerms::default());
        let zero = observer_loss(&p, &t, Some([8, 8, 1]), &toy_loss(0.0)).unwrap();
        assert_eq!(zero.total, zero.mse);
        assert!(zero.channel > 0.0);
        assert!(matches!(observer_loss(&p, &t, None, &cfg), Err(crate::Error::Validation(_))));
    }

    #[test]
    fn loss_matches_dense_matrix_oracle() {
        let ch = build_channels(8, &[0.1, 0.3]).unwrap();
        assert_eq!(ch.n_channels(), 1);
        let cfg = LossConfig { lambda: 0.7, slice_half_width: 1, channels: ch.clone(), absent_policy: AbsentCentroidPolicy::LvCenter };
        let target = Image3D::filled(8, 8, 3, 1.0);
        let mut pred = target.clone();
        // hand-set difference: a bump on slice 1, a ramp on slice 2, one voxel on slice 0
        for y in 0..8 {
            for x in 0..8 {
                pred.set(x, y, 1, 1.0 - if (x as i64 - 5).abs() + (y as i64 - 2).abs() <= 1 { 0.5 } else { 0.0 });
                pred.set(x, y, 2, 1.0 + 0.05 * x as f64);
            }
        }
        pred.set(0, 7, 0, 3.0);
        let centroid = [5, 2, 1];
        // dense 1 x 64 row of S U: template moved from (4, 4) to (5, 2), zero fill
        let u = &ch.templates()[0];
        let su: Vec<f64> = (0..64)
            .map(|i| {
                let (x, y) = ((i % 8) as i64 - 1, (i / 8) as i64 + 2);
                if (0..8).contains(&x) && (0..8).contains(&y) { u.get(x as usize, y as usize) } else { 0.0 }
            })
            .collect();
        let mut mse = 0.0;
        let mut chan = 0.0;
        for s in 0..3 {
            let d: Vec<f64> = (0..64).map(|i| target.get(i % 8, i / 8, s) - pred.get(i % 8, i / 8, s)).collect();
            mse += d.iter().map(|v| v * v).sum::<f64>();
            let r: f64 = su.iter().zip(&d).map(|(a, b)| a * b).sum();
            chan += r * r;
        }
        let got = observer_loss(&pred, &target, Some(centroid), &cfg).unwrap();
        assert!((got.mse - mse).abs() < 1e-12 && (got.channel - chan).abs() < 1e-12);
        assert!((got.total - (mse + 0.7 * chan)).abs() < 1e-12);
    }

    #[test]
    fn channel_term_ignores_slices_outside_range() {
        let ch = build_channels(16, &[1.0 / 16.0, 1.0 / 4.0]).unwrap();
        let cfg = LossConfig { lambda: 1.0, slice_half_width: 1, channels: ch, absent_policy: AbsentCentroidPolicy::LvCenter };
        let mut g = RngStream::new(7, 0).generator();
        let t = random_volume(16, 16, 6, &mut g);
        let p = random_volume(16, 16, 6, &mut g);
        let a = observer_loss(&p, &t, Some([8, 8, 2]), &cfg).unwrap();
        let mut p2 = p.clone();
        p2.set_slice(5, &Image2D::filled(16, 16, 9.0));
        let b = observer_loss(&p2, &t, Some([8, 8, 2]), &cfg).unwrap();
        assert_eq!(a.channel, b.channel);
        assert!(b.mse > a.mse);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let arch = toy_arch();
        for seed in 0..2 {
            let mut p = random_params(&arch, 10 + seed);
            let batch = random_batch(20 + seed);
            let inputs: Vec<Image3D> = batch.iter().map(|b| b.0.clone()).collect();
            gradcheck::condition_rectifiers(&mut p, &inputs, 0.05, 0.3, RngStream::new(seed, 7)).unwrap();
            assert!(gradcheck::rectifier_margin(&p, &inputs) >= 0.05 - 1e-12);
            let r = gradcheck::finite_difference_check(&p, &batch, &toy_loss(3.0), 1e-3).unwrap();
            assert_eq!(r.n_params, arch.parameter_count());
            assert_eq!(r.pattern_changes, 0);
            assert!(r.max_rel_error < 1e-5, "seed {seed}: {r:?}");
        }
    }

    #[test]
    fn unconditioned_probes_detect_rectifier_flips() {
        // without conditioning, step 1e-3 moves some rectifier across its kink
        let arch = toy_arch();
        let p = random_params(&arch, 10);
        let r = gradcheck::finite_difference_check(&p, &random_batch(20), &toy_loss(3.0), 1e-3).unwrap();
        assert!(r.pattern_changes > 0);
    }

    #[test]
    fn perfect_prediction_has_zero_gradient() {
        let arch = toy_arch();
        let p = random_params(&arch, 30);
        let mut batch = random_batch(31);
        for item in &mut batch {
            item.1 = forward(&p, &item.0).unwrap();
        }
        let (g, terms) = loss_gradient(&p, &batch, &toy_loss(2.0)).unwrap();
        assert_eq!(terms.total, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_is_affine_in_lambda() {
        let arch = toy_arch();
        let p = random_params(&arch, 40);
        let batch = random_batch(41);
        let g = |l: f64| loss_gradient(&p, &batch, &toy_loss(l)).unwrap().0;
        let (g0, g1, g2) = (g(0.0), g(1.5), g(3.0));
        for ((a, b), c) in g0.iter().zip(g1.iter()).zip(g2.iter()) {
            assert!(((c - b) - (b - a)).abs() <= 1e-9 * (1.0 + c.abs()));
        }
    }

    fn synthetic_set(n: usize, seed: u64) -> Vec<TrainSample> {
        let mut g = RngStream::new(seed, 9).generator();
        (0..n)
            .map(|k| {
                let normal = Image3D::from_vec(16, 16, 3, (0..768).map(|i| 1.0 + ((i % 16) as f64 / 8.0)).collect()).unwrap();
                let low = Image3D::from_vec(16, 16, 3, normal.as_slice().iter().map(|v| v * g.random_range(0.5..1.5)).collect()).unwrap();
                let present = k % 2 == 0;
                TrainSample {
                    low,
                    normal,
                    centroid: present.then_some([8, 6, 1]),
                    absent_centroids: vec![[8, 6, 1], [8, 10, 1]],
                    lv_center: [8, 8, 1],
                }
            })
            .collect()
    }

    fn quick_cfg(epochs: usize) -> TrainConfig {
        TrainConfig { epochs, batch_size: 4, learning_rate: 3e-3, seed: 5, crop: None, ..Default::default() }
    }

    #[test]
    fn training_reduces_loss_and_is_reproducible() {
        let data = synthetic_set(12, 1);
        let arch = toy_arch();
        let (p1, h1) = train::<f64>(&data, &arch, &toy_loss(1.0), &quick_cfg(10)).unwrap();
        let (p2, h2) = train::<f64>(&data, &arch, &toy_loss(1.0), &quick_cfg(10)).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(h1, h2);
        assert_eq!(h1.epochs.len(), 11);
        assert!(h1.epochs[10].train_total < h1.epochs[0].train_total);
        assert!(h1.to_csv().starts_with("epoch,train_total,train_mse,train_channel,val_total"));
        assert_eq!(h1.to_csv().lines().count(), 12);
    }

    #[test]
    fn channel_term_is_logged_and_penalized() {
        let data = synthetic_set(12, 2);
        let arch = toy_arch();
        let (_, h0) = train::<f64>(&data, &arch, &toy_loss(0.0), &quick_cfg(8)).unwrap();
        let (_, h1) = train::<f64>(&data, &arch, &toy_loss(50.0), &quick_cfg(8)).unwrap();
        assert!(h0.epochs.iter().all(|r| r.train_channel > 0.0));
        assert!(h1.epochs[8].train_channel < h0.epochs[8].train_channel);
    }

    #[test]
    fn cropped_training_and_full_size_denoising() {
        let mut data = synthetic_set(6, 3);
        for s in &mut data {
            s.low = Image3D::from_vec(32, 32, 3, (0..3072).map(|i| s.low.as_slice()[i % 768]).collect()).unwrap();
            s.normal = Image3D::from_vec(32, 32, 3, (0..3072).map(|i| s.normal.as_slice()[i % 768]).collect()).unwrap();
            s.centroid = s.centroid.map(|_| [25, 20, 1]);
        }
        let cfg = TrainConfig { crop: Some(16), ..quick_cfg(2) };
        let (p, _) = train::<f32>(&data, &toy_arch(), &toy_loss(1.0), &cfg).unwrap();
        let out = denoise(&p, &data[0].low).unwrap();
        assert_eq!(out.dims(), (32, 32, 3));
        assert_eq!(out, denoise(&p, &data[0].low).unwrap());
    }

    #[test]
    fn absent_samples_need_candidates() {
        let mut data = synthetic_set(4, 4);
        data[1].absent_centroids.clear();
        assert!(train::<f64>(&data, &toy_arch(), &toy_loss(1.0), &quick_cfg(1)).is_err());
    }

    #[test]
    fn checkpoint_roundtrip_and_rejection() {
        let p = init_network::<f32>(&ArchConfig::default(), RngStream::new(2, 2)).unwrap();
        let bytes = encode_checkpoint(&p).unwrap();
        assert_eq!(&bytes[..4], b"TDNW");
        assert_eq!(decode_checkpoint(&bytes).unwrap(), p);
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_checkpoint(&bad).is_err());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.tdnw");
        write_checkpoint(&path, &p).unwrap();
        assert_eq!(read_checkpoint(&path).unwrap(), p);
    }
}
