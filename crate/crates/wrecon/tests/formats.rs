use std::path::Path;

use proptest::prelude::*;
use wrecon::checkpoint::{self, load_checkpoint, save_checkpoint};
use wrecon::imgf::{self, load_image_f32, save_image_f32};
use wrecon::maskfile::{self, load_mask, save_mask};
use wrecon::png::{decode_png, encode_png, window_to_u8};
use wrecon::report::{self, Report};
use wrecon::FormatError;
use wrecon_core::kspace::generate_mask;
use wrecon_core::metrics::ImageMetrics;
use wrecon_core::model::Network;
use wrecon_core::{Checkpoint, Tensor, TrainConfig, Wcnn, WcnnConfig};

fn ramp(h: usize, w: usize) -> Tensor<f32> {
    Tensor::from_fn(&[h, w], |i| i as f32 / (h * w) as f32)
}

#[test]
fn imgf_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x.imgf");
    let img = Tensor::new(&[2, 3], vec![0.0, -0.0, 1.5, f32::MIN_POSITIVE, 1e-30, 0.1]).unwrap();
    save_image_f32(&img, &p).unwrap();
    let back = load_image_f32(&p).unwrap();
    assert_eq!(back.shape(), &[2, 3]);
    let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&back), bits(&img));
    assert_eq!(std::fs::metadata(&p).unwrap().len(), 16 + 4 * 6);
}

#[test]
fn imgf_rejects_damaged_files() {
    let bytes = imgf::encode(&ramp(4, 4)).unwrap();
    assert!(imgf::decode(&[]).is_err());
    assert!(imgf::decode(&bytes[..16]).is_err(), "header only");
    assert!(matches!(imgf::decode(&bytes[..bytes.len() - 1]), Err(FormatError::Truncated { .. })));
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(imgf::decode(&extra).is_err());
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(matches!(imgf::decode(&magic), Err(FormatError::BadMagic { .. })));
    let mut version = bytes.clone();
    version[4] = 9;
    assert!(matches!(imgf::decode(&version), Err(FormatError::Version { .. })));
    let mut huge = bytes[..16].to_vec();
    huge[8..12].copy_from_slice(&u32::MAX.to_le_bytes());
    huge[12..16].copy_from_slice(&u32::MAX.to_le_bytes());
    assert!(imgf::decode(&huge).is_err());
    let mut zero = bytes.clone();
    zero[8..12].copy_from_slice(&0u32.to_le_bytes());
    assert!(imgf::decode(&zero).is_err());
}

#[test]
fn empty_file_on_disk_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("empty.imgf");
    std::fs::write(&p, b"").unwrap();
    assert!(load_image_f32(&p).is_err());
    assert!(load_image_f32(&dir.path().join("missing.imgf")).is_err());
}

fn png_pixels(img: &Tensor<f32>, window: (f32, f32)) -> Vec<u8> {
    let t = decode_png(&encode_png(img, window).unwrap()).unwrap();
    t.data().iter().map(|v| (v * 255.0).round() as u8).collect()
}

#[test]
fn png_windowing() {
    let lo = Tensor::full(&[4, 6], 0.2);
    assert!(png_pixels(&lo, (0.2, 0.8)).iter().all(|&p| p == 0));
    let hi = Tensor::full(&[4, 6], 0.8);
    assert!(png_pixels(&hi, (0.2, 0.8)).iter().all(|&p| p == 255));
    let mid = Tensor::full(&[4, 6], 0.5);
    assert!(png_pixels(&mid, (0.2, 0.8)).iter().all(|&p| p.abs_diff(128) <= 1));
    let outside = Tensor::new(&[1, 2], vec![-5.0, 5.0]).unwrap();
    assert_eq!(png_pixels(&outside, (0.0, 1.0)), vec![0, 255]);
    assert!(encode_png(&mid, (0.5, 0.5)).is_err());
    assert!(encode_png(&mid, (1.0, 0.0)).is_err());
    assert!(encode_png(&mid, (0.0, f32::NAN)).is_err());
}

#[test]
fn png_import_keeps_extents() {
    let img = ramp(5, 7);
    let back = decode_png(&encode_png(&img, (0.0, 1.0)).unwrap()).unwrap();
    assert_eq!(back.shape(), &[5, 7]);
    assert!(back.max_abs_diff(&img).unwrap() <= 0.5 / 255.0 + 1e-6);
}

#[test]
fn mask_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.txt");
    let m = generate_mask(64, 5.0, 4, 0.15, 9).unwrap();
    save_mask(&m, &p).unwrap();
    assert_eq!(load_mask(&p).unwrap(), m);
    let text = maskfile::encode(&m);
    assert!(maskfile::decode(&text.replace("rows ", "rows 1")).is_err());
    assert!(maskfile::decode(&text.replace("seed", "sead")).is_err());
    assert!(maskfile::decode("height 2\n").is_err());
}

fn tiny_checkpoint() -> Checkpoint {
    let cfg = WcnnConfig {
        levels: 2,
        block_depth: 1,
        base_channels: 2,
        input_channels: 1,
    };
    let net = Network::Standalone(Wcnn::<f32>::new(cfg, 3).unwrap());
    Checkpoint::capture(&net, &TrainConfig::default(), 4, 3)
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.wcnn");
    let ck = tiny_checkpoint();
    save_checkpoint(&ck, &p).unwrap();
    let back = load_checkpoint(&p).unwrap();
    assert_eq!(back.meta, ck.meta);
    assert_eq!(back.tensors.len(), ck.tensors.len());
    for ((na, ta), (nb, tb)) in back.tensors.iter().zip(&ck.tensors) {
        assert_eq!(na, nb);
        assert_eq!(ta.shape(), tb.shape());
        assert!(ta.data().iter().zip(tb.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
    assert_eq!(checkpoint::encode(&back).unwrap(), std::fs::read(&p).unwrap());
    back.restore().unwrap();
}

#[test]
fn checkpoint_rejects_damage() {
    let bytes = checkpoint::encode(&tiny_checkpoint()).unwrap();
    assert!(checkpoint::decode(&bytes[..bytes.len() - 2]).is_err());
    assert!(checkpoint::decode(&bytes[..10]).is_err());
    let mut magic = bytes.clone();
    magic[..4].copy_from_slice(b"IMGF");
    assert!(checkpoint::decode(&magic).is_err());
    let mut trailing = bytes.clone();
    trailing.extend_from_slice(&[1, 2, 3, 4]);
    assert!(checkpoint::decode(&trailing).is_err());
}

fn metrics(seed: f64) -> ImageMetrics {
    ImageMetrics::from_values([0.01 * seed, 20.0 + seed, 0.5 + 0.01 * seed, 0.3 - 0.01 * seed])
}

#[test]
fn report_round_trip_keeps_aggregates() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("r.csv");
    let r = Report::new((0..5).map(|i| (format!("phantom_{i:04}"), metrics(f64::from(i)))).collect()).unwrap();
    report::save_report(&r, &p).unwrap();
    let text = std::fs::read_to_string(&p).unwrap();
    assert!(text.starts_with("id,nmse,psnr,ssim,hfen\n"));
    assert!(text.contains("\nmean,") && text.contains("\nstd,"));
    let back = report::load_report(&p).unwrap();
    assert_eq!(back, r);
    assert!((back.summary.mean.psnr - 22.0).abs() < 1e-12);
    assert!((back.summary.std.psnr - 2f64.sqrt()).abs() < 1e-12);
}

#[test]
fn report_requires_header_and_aggregates() {
    assert!(report::decode(b"id,a,b\nx,1,2\n").is_err());
    assert!(report::decode(b"id,nmse,psnr,ssim,hfen\nx,1,2,3,4\n").is_err());
    assert!(report::decode(b"id,nmse,psnr,ssim,hfen\nx,1,2,3,z\nmean,1,2,3,4\nstd,0,0,0,0\n").is_err());
}

fn tmp_write(dir: &Path, name: &str, bytes: &[u8]) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, bytes).unwrap();
    p
}

#[test]
fn load_any_dispatches_on_extension() {
    let dir = tempfile::tempdir().unwrap();
    let img = ramp(4, 4);
    let png = tmp_write(dir.path(), "a.PNG", &encode_png(&img, (0.0, 1.0)).unwrap());
    let raw = tmp_write(dir.path(), "a.imgf", &imgf::encode(&img).unwrap());
    assert_eq!(wrecon::png::load_any(&png).unwrap().shape(), &[4, 4]);
    assert_eq!(wrecon::png::load_any(&raw).unwrap(), img);
}

proptest! {
    #[test]
    fn imgf_round_trips_any_values(h in 1usize..9, w in 1usize..9, bits in prop::collection::vec(any::<u32>(), 64)) {
        let data: Vec<f32> = (0..h * w).map(|i| f32::from_bits(bits[i])).collect();
        let img = Tensor::new(&[h, w], data).unwrap();
        let back = imgf::decode(&imgf::encode(&img).unwrap()).unwrap();
        prop_assert!(back.data().iter().zip(img.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn window_is_monotone(a in -2.0f32..3.0, b in -2.0f32..3.0) {
        let (lo, hi) = (a.min(b), a.max(b));
        prop_assert!(window_to_u8(lo, -1.0, 2.0) <= window_to_u8(hi, -1.0, 2.0));
    }

    #[test]
    fn truncated_imgf_never_decodes(cut in 0usize..40) {
        let bytes = imgf::encode(&ramp(3, 3)).unwrap();
        prop_assert!(imgf::decode(&bytes[..cut.min(bytes.len() - 1)]).is_err());
    }
}
