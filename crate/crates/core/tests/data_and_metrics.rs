use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use taylornet::data::seqfile::{read_sequences, write_sequences, ElementType};
use taylornet::data::{builtin_glyphs, BounceSpec, BouncingDataset, DataConfig, Split};
use taylornet::eval::metrics::{frame_metrics, ssim, FrameShape};

mod common;
use common::ssim_direct;

#[test]
fn objects_never_leave_the_canvas() {
    let sprites = builtin_glyphs().downsample(2).unwrap();
    let n = sprites.size() as f64;
    let spec = BounceSpec {
        height: 32,
        width: 40,
        seq_len: 50,
        num_objects: 1,
        max_speed: 7.5,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..10_000 {
        let mut track = spec.sample_objects(&sprites, &mut rng).unwrap()[0];
        let max = (spec.height as f64 - n, spec.width as f64 - n);
        for _ in 0..spec.seq_len {
            let (r, c) = track.pos;
            assert!(r >= 0.0 && r + n <= spec.height as f64, "row {} at {:?}", r, track);
            assert!(c >= 0.0 && c + n <= spec.width as f64, "col {} at {:?}", c, track);
            track.advance(max);
        }
    }
}

#[test]
fn frames_stay_in_unit_range_and_are_seed_pure() {
    let ds = BouncingDataset::new(&DataConfig::tiny(), 20, 5, Split::Train).unwrap();
    let a = ds.batch(0, 16).unwrap();
    assert!(a.frames.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    assert!(a.frames.data().iter().any(|&v| v > 0.5));
    let again = BouncingDataset::new(&DataConfig::tiny(), 20, 5, Split::Train).unwrap();
    assert_eq!(again.batch(0, 16).unwrap().frames, a.frames);
    // Any sub-range is the same sequences.
    assert_eq!(again.batch(3, 2).unwrap().frames, a.frames.narrow0(3, 2).unwrap());
    let test = BouncingDataset::new(&DataConfig::tiny(), 20, 5, Split::Test).unwrap();
    assert_ne!(test.batch(0, 16).unwrap().frames, a.frames);
}

#[test]
fn sequence_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let ds = BouncingDataset::new(&DataConfig::tiny(), 6, 1, Split::Test).unwrap();
    let frames = ds.batch(0, 3).unwrap().frames;
    let path = dir.path().join("s.tnseq");
    write_sequences(&path, &frames, ElementType::F32, &Default::default()).unwrap();
    let (back, _) = read_sequences(&path).unwrap();
    assert_eq!(back, frames);
}

fn random_frame(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(0.0..=1.0)).collect()
}

#[test]
fn metric_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let shape = FrameShape::new(1, 24, 20);
    for _ in 0..20 {
        let a = random_frame(&mut rng, shape.len());
        let b = random_frame(&mut rng, shape.len());
        let same = frame_metrics(&a, &a, shape).unwrap();
        assert_eq!(same.mse, 0.0);
        assert!((same.ssim - 1.0).abs() < 1e-12);
        let ab = frame_metrics(&a, &b, shape).unwrap();
        let ba = frame_metrics(&b, &a, shape).unwrap();
        assert_eq!(ab.mae, ba.mae);
        assert!(ab.mse > 0.0 && ab.ssim < 1.0);
    }
}

#[test]
fn psnr_falls_as_a_constant_offset_grows() {
    let shape = FrameShape::new(1, 16, 16);
    let target = vec![0.2; shape.len()];
    let mut last = f64::INFINITY;
    for step in 1..=10 {
        let pred = vec![0.2 + 0.05 * step as f64; shape.len()];
        let m = frame_metrics(&pred, &target, shape).unwrap();
        assert!(m.psnr < last, "offset {}: psnr {} after {}", step, m.psnr, last);
        last = m.psnr;
    }
}

#[test]
fn constant_offset_on_a_64_frame() {
    let shape = FrameShape::new(1, 64, 64);
    let m = frame_metrics(&vec![0.5; 4096], &vec![0.4; 4096], shape).unwrap();
    assert!((m.mse - 40.96).abs() < 1e-9, "{}", m.mse);
    assert!((m.mae - 409.6).abs() < 1e-9, "{}", m.mae);
    assert!((m.psnr - 20.0).abs() < 1e-9, "{}", m.psnr);
}

#[test]
fn ssim_agrees_with_the_direct_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (h, w) = (32, 27);
    let shape = FrameShape::new(1, h, w);
    for pair in 0..5 {
        let x = random_frame(&mut rng, h * w);
        // Correlated second image so SSIM is not near zero.
        let y: Vec<f64> = x
            .iter()
            .map(|v| (0.7 * v + 0.3 * rng.random_range(0.0..=1.0)).clamp(0.0, 1.0))
            .collect();
        let fast = ssim(&x, &y, shape).unwrap();
        let direct = ssim_direct(&x, &y, h, w);
        assert!((fast - direct).abs() < 1e-6, "pair {}: {} vs {}", pair, fast, direct);
    }
}
