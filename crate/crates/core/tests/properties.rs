//! Randomized property coverage for the serialization and image layers.

use proptest::prelude::*;

use neurodecode::io::dctf::{read_tensor, read_tensor_from, write_tensor, write_tensor_to};
use neurodecode::io::image::{load_image, resize_bilinear, save_image, ImageRGB};
use neurodecode::TensorF32;

fn finite_f32() -> impl Strategy<Value = f32> {
    any::<f32>().prop_filter("finite", |v| v.is_finite())
}

fn tensor_strategy() -> impl Strategy<Value = TensorF32> {
    prop::collection::vec(1usize..=5, 1..=4).prop_flat_map(|dims| {
        let n: usize = dims.iter().product();
        prop::collection::vec(finite_f32(), n)
            .prop_map(move |data| TensorF32::new(dims.clone(), data).unwrap())
    })
}

fn image_strategy(max: usize) -> impl Strategy<Value = ImageRGB> {
    (1usize..=max, 1usize..=max).prop_flat_map(|(h, w)| {
        prop::collection::vec(0.0f32..=1.0, h * w * 3).prop_map(move |data| {
            ImageRGB::new(TensorF32::new(vec![h, w, 3], data).unwrap()).unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn dctf_roundtrips_bit_exactly(t in tensor_strategy()) {
        let mut buf = Vec::new();
        write_tensor_to(&t, &mut buf).unwrap();
        let back = read_tensor_from(&mut buf.as_slice()).unwrap();
        prop_assert_eq!(back.dims(), t.dims());
        for (a, b) in back.data().iter().zip(t.data()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn dctf_file_roundtrip(t in tensor_strategy()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.dctf");
        write_tensor(&t, &path).unwrap();
        let back = read_tensor(&path).unwrap();
        prop_assert_eq!(back.dims(), t.dims());
        for (a, b) in back.data().iter().zip(t.data()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn png_roundtrip_within_quantization(img in image_strategy(10)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        save_image(&img, &path).unwrap();
        let back = load_image(&path).unwrap();
        prop_assert_eq!(back.tensor().dims(), img.tensor().dims());
        for (a, b) in back.data().iter().zip(img.data()) {
            // 8-bit quantization: half a level plus float slack
            prop_assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn resize_hits_exact_dims_and_stays_bounded(
        img in image_strategy(12),
        oh in 1usize..=12,
        ow in 1usize..=12,
    ) {
        let out = resize_bilinear(&img, oh, ow).unwrap();
        prop_assert_eq!(out.tensor().dims(), &[oh, ow, 3]);
        let lo = img.data().iter().copied().fold(f32::INFINITY, f32::min);
        let hi = img.data().iter().copied().fold(f32::NEG_INFINITY, f32::max);
        for &v in out.data() {
            // bilinear output is a convex combination of input values
            prop_assert!(v >= lo - 1e-6 && v <= hi + 1e-6, "{v} outside [{lo}, {hi}]");
        }
    }

    #[test]
    fn resize_to_same_dims_is_identity(img in image_strategy(8)) {
        let out = resize_bilinear(&img, img.height(), img.width()).unwrap();
        prop_assert_eq!(out.data(), img.data());
    }
}
