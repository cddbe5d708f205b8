use rand::Rng;

use super::curriculum::{sample_resolution, CurriculumState, ResolutionSet};
use super::resample::resize_bilinear;
use super::{Image, ImageRecord};
use crate::error::{invalid, Result};

/// Shortest side after the geometry resize.
pub const RESIZE_SHORTEST: usize = 256;
/// Side of the square network input.
pub const CROP_SIZE: usize = 224;

/// Output dims when resizing `(h, w)` so the shortest side equals `target`.
/// The long side is rounded half-to-even and never drops below 1.
pub fn shortest_side_dims(h: usize, w: usize, target: usize) -> (usize, usize) {
    let scale_long = |long: usize, short: usize| {
        let exact = long as f64 * target as f64 / short as f64;
        (exact.round_ties_even() as usize).max(1)
    };
    if h <= w {
        (target, scale_long(w, h))
    } else {
        (scale_long(h, w), target)
    }
}

pub fn resize_shortest_side(img: &Image, target: usize) -> Image {
    let (h, w) = shortest_side_dims(img.height(), img.width(), target);
    resize_bilinear(img, h, w)
}

/// Like [`degrade`], also returning the intermediate (low-resolution) dims
/// when the downsampling branch was taken.
pub fn degrade_traced(
    img: &ImageRecord,
    target: u32,
) -> Result<(ImageRecord, Option<(usize, usize)>)> {
    if target < 1 {
        return Err(invalid("degradation target must be at least 1 pixel"));
    }
    let target = target as usize;
    if target >= img.image.shortest_side() {
        return Ok((img.clone(), None));
    }
    let (h, w) = img.image.dims();
    let small = resize_shortest_side(&img.image, target);
    let small_dims = small.dims();
    let restored = resize_bilinear(&small, h, w);
    Ok((
        ImageRecord::new(restored, img.identity, img.media_id),
        Some(small_dims),
    ))
}

/// Downsamples so the shortest side equals `target` (aspect preserved), then
/// resizes back to the native dimensions. A no-op when `target` is not
/// smaller than the native shortest side.
pub fn degrade(img: &ImageRecord, target: u32) -> Result<ImageRecord> {
    degrade_traced(img, target).map(|(out, _)| out)
}

/// Top-left corner of a centered `size x size` window.
pub fn center_crop_origin(h: usize, w: usize, size: usize) -> (usize, usize) {
    (h.saturating_sub(size) / 2, w.saturating_sub(size) / 2)
}

/// Deterministic evaluation preprocessing: optional degradation, resize to
/// shortest side 256, center crop 224.
pub fn prepare_eval_input(img: &ImageRecord, target: Option<u32>) -> Result<Image> {
    let degraded;
    let src = match target {
        Some(t) => {
            degraded = degrade(img, t)?;
            &degraded.image
        }
        None => &img.image,
    };
    let resized = resize_shortest_side(src, RESIZE_SHORTEST);
    let (top, left) = center_crop_origin(resized.height(), resized.width(), CROP_SIZE);
    resized.crop(top, left, CROP_SIZE, CROP_SIZE)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainView {
    pub teacher_input: Image,
    pub student_input: Image,
    pub degraded: bool,
    pub degraded_resolution: Option<u32>,
    /// Top-left corner of the shared crop window in the 256-resized frame.
    pub crop_origin: (usize, usize),
}

pub fn prepare_train_view<R: Rng + ?Sized>(
    img: &ImageRecord,
    state: &CurriculumState,
    rng: &mut R,
    rset: &ResolutionSet,
) -> Result<TrainView> {
    prepare_train_view_with_probability(img, state.degrade_probability(), rng, rset)
}

/// Builds a teacher/student pair. Draw order from `rng`: one uniform for the
/// degradation Bernoulli, one resolution draw if degraded, then the crop
/// offsets (row, column).
pub fn prepare_train_view_with_probability<R: Rng + ?Sized>(
    img: &ImageRecord,
    probability: f64,
    rng: &mut R,
    rset: &ResolutionSet,
) -> Result<TrainView> {
    if !(0.0..=1.0).contains(&probability) {
        return Err(invalid(format!("degradation probability {probability} outside [0, 1]")));
    }
    let degraded = rng.gen::<f64>() < probability;
    let degraded_resolution = degraded.then(|| sample_resolution(rng, rset));

    let teacher_full = resize_shortest_side(&img.image, RESIZE_SHORTEST);
    let student_full = match degraded_resolution {
        Some(r) => resize_shortest_side(&degrade(img, r)?.image, RESIZE_SHORTEST),
        None => teacher_full.clone(),
    };

    let top = rng.gen_range(0..=teacher_full.height() - CROP_SIZE);
    let left = rng.gen_range(0..=teacher_full.width() - CROP_SIZE);
    Ok(TrainView {
        teacher_input: teacher_full.crop(top, left, CROP_SIZE, CROP_SIZE)?,
        student_input: student_full.crop(top, left, CROP_SIZE, CROP_SIZE)?,
        degraded,
        degraded_resolution,
        crop_origin: (top, left),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn textured(h: usize, w: usize) -> ImageRecord {
        let data = (0..h * w)
            .map(|i| {
                let (y, x) = ((i / w) as f64, (i % w) as f64);
                0.5 + 0.25 * (x * 0.7).sin() * (y * 0.3).cos() + 0.2 * ((x + y) * 1.9).sin()
            })
            .collect();
        ImageRecord::new(Image::new(h, w, 1, data).unwrap(), 3, 11)
    }

    #[test]
    fn long_side_rounding() {
        assert_eq!(shortest_side_dims(100, 150, 8), (8, 12));
        assert_eq!(shortest_side_dims(64, 64, 16), (16, 16));
        assert_eq!(shortest_side_dims(300, 400, 256), (256, 341));
        assert_eq!(shortest_side_dims(180, 137, 256), (336, 256));
        // 3 * 5 / 2 = 7.5 rounds to even.
        assert_eq!(shortest_side_dims(2, 5, 3), (3, 8));
        // 4 * 3 / 8 = 1.5 rounds to even.
        assert_eq!(shortest_side_dims(8, 4, 3), (6, 3));
        assert_eq!(shortest_side_dims(5, 2, 1), (2, 1));
    }

    #[test]
    fn degrade_intermediate_shapes() {
        let img = textured(100, 150);
        let (out, mid) = degrade_traced(&img, 8).unwrap();
        assert_eq!(mid, Some((8, 12)));
        assert_eq!(out.image.dims(), (100, 150));
        assert_eq!((out.identity, out.media_id), (3, 11));

        let (out, mid) = degrade_traced(&textured(64, 64), 16).unwrap();
        assert_eq!(mid, Some((16, 16)));
        assert_eq!(out.image.dims(), (64, 64));
    }

    #[test]
    fn degrade_noop_when_target_not_smaller() {
        let img = textured(137, 180);
        let (out, mid) = degrade_traced(&img, 256).unwrap();
        assert_eq!(mid, None);
        assert_eq!(out, img);
        assert_eq!(degrade(&img, 137).unwrap(), img);
        assert!(degrade(&img, 0).is_err());
    }

    #[test]
    fn degrade_removes_detail() {
        let img = textured(100, 150);
        let out = degrade(&img, 8).unwrap();
        assert_ne!(out, img);
        let var = |im: &Image| {
            let m = im.data().iter().sum::<f64>() / im.data().len() as f64;
            im.data().iter().map(|v| (v - m).powi(2)).sum::<f64>()
        };
        assert!(var(&out.image) < var(&img.image));
    }

    #[test]
    fn eval_input_center_offsets() {
        assert_eq!(center_crop_origin(256, 341, 224), (16, 58));
        assert_eq!(center_crop_origin(256, 256, 224), (16, 16));
        let img = textured(300, 400);
        let out = prepare_eval_input(&img, None).unwrap();
        assert_eq!(out.dims(), (CROP_SIZE, CROP_SIZE));
        let resized = resize_shortest_side(&img.image, 256);
        assert_eq!(resized.dims(), (256, 341));
        assert_eq!(out, resized.crop(16, 58, 224, 224).unwrap());
    }

    #[test]
    fn eval_input_composes_with_degrade() {
        let img = textured(137, 180);
        let direct = prepare_eval_input(&img, Some(24)).unwrap();
        let composed = prepare_eval_input(&degrade(&img, 24).unwrap(), None).unwrap();
        assert_eq!(direct, composed);
        assert!(prepare_eval_input(&img, Some(0)).is_err());
    }

    #[test]
    fn train_view_probability_zero_is_undegraded() {
        let img = textured(137, 180);
        let state = CurriculumState::new(0, 1000).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let v = prepare_train_view(&img, &state, &mut rng, &ResolutionSet::default()).unwrap();
            assert!(!v.degraded);
            assert_eq!(v.degraded_resolution, None);
            assert_eq!(v.teacher_input, v.student_input);
            assert_eq!(v.teacher_input.dims(), (224, 224));
        }
    }

    #[test]
    fn train_view_probability_one_always_degrades() {
        let img = textured(137, 180);
        let state = CurriculumState::new(1000, 1000).unwrap();
        let rset = ResolutionSet::default();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..10 {
            let v = prepare_train_view(&img, &state, &mut rng, &rset).unwrap();
            assert!(v.degraded);
            let r = v.degraded_resolution.unwrap();
            assert!(rset.values().contains(&r));
            assert_eq!(v.student_input.dims(), (224, 224));
            if r < 137 {
                assert_ne!(v.teacher_input, v.student_input);
            }
        }
    }

    #[test]
    fn train_view_is_deterministic() {
        let img = textured(137, 180);
        let rset = ResolutionSet::default();
        let a = prepare_train_view_with_probability(
            &img,
            0.5,
            &mut ChaCha8Rng::seed_from_u64(99),
            &rset,
        )
        .unwrap();
        let b = prepare_train_view_with_probability(
            &img,
            0.5,
            &mut ChaCha8Rng::seed_from_u64(99),
            &rset,
        )
        .unwrap();
        assert_eq!(a, b);
        assert!(prepare_train_view_with_probability(
            &img,
            1.5,
            &mut ChaCha8Rng::seed_from_u64(0),
            &rset
        )
        .is_err());
    }
}
