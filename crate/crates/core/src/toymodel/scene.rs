//! Procedural two-object scenes with striped interiors.
//!
//! Each scene places one object on the left half of the canvas and one on
//! the right. Objects carry a high-frequency vertical stripe texture
//! (period 4 px along x) so focus metrics have something to measure. The
//! renderer is deterministic and anti-aliased by 4x4 supersampling.

use ndarray::Array3;
use rand::Rng;

use crate::conditioning::{Prompt, Vocabulary};
use crate::error::{Error, Result};
use crate::metrics::Roi;

/// Default canvas edge length in pixels (square RGB canvas).
pub const CANVAS_SIZE: usize = 64;

/// Object half-extent as a fraction of the canvas edge (11 px at the
/// default 64 px canvas). Every shape fits the same bounding box, centred
/// in its half of the canvas.
const OBJECT_RADIUS_FRAC: f64 = 11.0 / 64.0;

fn object_radius(canvas: usize) -> f64 {
    canvas as f64 * OBJECT_RADIUS_FRAC
}

const BACKGROUND: f32 = 0.5;
const STRIPE_PERIOD: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Circle,
    Square,
    Triangle,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Circle, Shape::Square, Shape::Triangle];

    pub fn token(&self) -> &'static str {
        match self {
            Shape::Circle => "circle",
            Shape::Square => "square",
            Shape::Triangle => "triangle",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Color {
    Red,
    Green,
    Blue,
}

impl Color {
    pub const ALL: [Color; 3] = [Color::Red, Color::Green, Color::Blue];

    pub fn token(&self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
        }
    }

    fn rgb(&self) -> [f32; 3] {
        match self {
            Color::Red => [0.9, 0.1, 0.1],
            Color::Green => [0.1, 0.8, 0.1],
            Color::Blue => [0.15, 0.25, 0.9],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn token(&self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
        }
    }
}

/// One object: what it looks like and which half it occupies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ObjectSpec {
    pub shape: Shape,
    pub color: Color,
    pub side: Side,
    /// Stripe offset in pixels, `0..4`.
    pub texture_phase: usize,
}

/// A two-object scene; the objects always occupy distinct sides.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SceneSpec {
    pub left: ObjectSpec,
    pub right: ObjectSpec,
}

impl SceneSpec {
    pub fn new(a: ObjectSpec, b: ObjectSpec) -> Result<Self> {
        if a.side == b.side {
            return Err(Error::invalid("scene objects must occupy distinct sides"));
        }
        if a.texture_phase >= STRIPE_PERIOD || b.texture_phase >= STRIPE_PERIOD {
            return Err(Error::invalid("texture phase must be in 0..4"));
        }
        let (left, right) = if a.side == Side::Left { (a, b) } else { (b, a) };
        Ok(SceneSpec { left, right })
    }

    pub fn object(&self, side: Side) -> &ObjectSpec {
        match side {
            Side::Left => &self.left,
            Side::Right => &self.right,
        }
    }

    /// The six attribute tokens of both objects, left object first.
    pub fn global_tokens(&self) -> Vec<&'static str> {
        let mut t = self.left.tokens().to_vec();
        t.extend(self.right.tokens());
        t
    }
}

impl ObjectSpec {
    /// The object's three attribute tokens.
    pub fn tokens(&self) -> [&'static str; 3] {
        [self.shape.token(), self.color.token(), self.side.token()]
    }
}

/// The closed scene vocabulary: shapes, colors and sides (plus the
/// reserved null token contributed by the vocabulary itself).
pub fn scene_vocabulary() -> Vocabulary {
    Vocabulary::new([
        "circle", "square", "triangle", "red", "green", "blue", "left", "right",
    ])
    .expect("static names are unique")
}

fn center(side: Side, canvas: usize) -> (f64, f64) {
    let quarter = canvas as f64 / 4.0;
    match side {
        Side::Left => (quarter, canvas as f64 / 2.0),
        Side::Right => (3.0 * quarter, canvas as f64 / 2.0),
    }
}

/// Bounding box of the object on `side`, for a square canvas of edge
/// `canvas`. The box depends only on the side, never on the shape, so
/// regions of interest can be derived from the prompt alone.
pub fn object_bbox(side: Side, canvas: usize) -> Roi {
    let (cx, cy) = center(side, canvas);
    let r = object_radius(canvas).ceil() as usize;
    Roi {
        x0: cx as usize - r,
        y0: cy as usize - r,
        width: 2 * r,
        height: 2 * r,
    }
}

/// Signed membership test at subpixel coordinates relative to the object
/// center.
fn inside(shape: Shape, dx: f64, dy: f64, r: f64) -> bool {
    match shape {
        Shape::Circle => dx * dx + dy * dy <= r * r,
        Shape::Square => {
            let s = r * 0.9;
            dx.abs() <= s && dy.abs() <= s
        }
        Shape::Triangle => {
            // Upward triangle: apex at (0, -r), base at y = +r spanning [-r, r].
            if dy < -r || dy > r {
                return false;
            }
            let half_width = (dy + r) / 2.0;
            dx.abs() <= half_width
        }
    }
}

/// Deterministic rasterization of a scene: mid-gray background, both
/// objects drawn with anti-aliased edges and period-4 vertical stripes.
pub fn render_scene(spec: &SceneSpec) -> Array3<f32> {
    render_scene_sized(spec, CANVAS_SIZE)
}

/// Rasterization at an explicit canvas size (square, RGB).
pub fn render_scene_sized(spec: &SceneSpec, canvas: usize) -> Array3<f32> {
    const SS: usize = 4; // supersampling factor per axis
    let mut img = Array3::from_elem((canvas, canvas, 3), BACKGROUND);
    for obj in [&spec.left, &spec.right] {
        let (cx, cy) = center(obj.side, canvas);
        let radius = object_radius(canvas);
        let base = obj.color.rgb();
        let bbox = object_bbox(obj.side, canvas);
        for y in bbox.y0..(bbox.y0 + bbox.height).min(canvas) {
            for x in bbox.x0..(bbox.x0 + bbox.width).min(canvas) {
                let mut covered = 0usize;
                for sy in 0..SS {
                    for sx in 0..SS {
                        let px = x as f64 + (sx as f64 + 0.5) / SS as f64;
                        let py = y as f64 + (sy as f64 + 0.5) / SS as f64;
                        if inside(obj.shape, px - cx, py - cy, radius) {
                            covered += 1;
                        }
                    }
                }
                if covered == 0 {
                    continue;
                }
                let coverage = covered as f32 / (SS * SS) as f32;
                // Stripe factor on the pixel grid so the interior row
                // profile alternates cleanly with period 4.
                let bright = (x + obj.texture_phase) % STRIPE_PERIOD < STRIPE_PERIOD / 2;
                let factor = if bright { 1.0 } else { 0.5 };
                for c in 0..3 {
                    let obj_value = base[c] * factor;
                    let cur = img[[y, x, c]];
                    img[[y, x, c]] = cur + coverage * (obj_value - cur);
                }
            }
        }
    }
    img
}

/// A dataset item: the rendered image, the full-scene prompt and the two
/// per-object local prompts (left first).
#[derive(Debug, Clone)]
pub struct DatasetItem {
    pub spec: SceneSpec,
    pub image: Array3<f32>,
    pub global_prompt: Prompt,
    pub local_prompts: [Prompt; 2],
}

fn random_object<R: Rng>(side: Side, rng: &mut R) -> ObjectSpec {
    let shape = Shape::ALL[rng.random_range(0..3)];
    let color = Color::ALL[rng.random_range(0..3)];
    let texture_phase = rng.random_range(0..STRIPE_PERIOD);
    ObjectSpec { shape, color, side, texture_phase }
}

/// Draws a uniform random scene and renders it at the default canvas
/// size. The global prompt is the six attribute tokens of both objects;
/// each local prompt is the three tokens of one object.
pub fn sample_dataset_item<R: Rng>(vocab: &Vocabulary, rng: &mut R) -> Result<DatasetItem> {
    sample_dataset_item_sized(vocab, CANVAS_SIZE, rng)
}

/// [`sample_dataset_item`] at an explicit canvas size.
pub fn sample_dataset_item_sized<R: Rng>(
    vocab: &Vocabulary,
    canvas: usize,
    rng: &mut R,
) -> Result<DatasetItem> {
    let spec = SceneSpec::new(random_object(Side::Left, rng), random_object(Side::Right, rng))?;
    let image = render_scene_sized(&spec, canvas);
    let global_prompt = Prompt::parse(vocab, &spec.global_tokens())?;
    let local_prompts = [
        Prompt::parse(vocab, &spec.left.tokens())?,
        Prompt::parse(vocab, &spec.right.tokens())?,
    ];
    Ok(DatasetItem { spec, image, global_prompt, local_prompts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(shape: Shape, color: Color, phase: usize) -> SceneSpec {
        SceneSpec::new(
            ObjectSpec { shape, color, side: Side::Left, texture_phase: phase },
            ObjectSpec { shape: Shape::Square, color: Color::Blue, side: Side::Right, texture_phase: 0 },
        )
        .unwrap()
    }

    #[test]
    fn rendering_is_deterministic() {
        let s = spec(Shape::Circle, Color::Red, 1);
        assert_eq!(render_scene(&s), render_scene(&s));
    }

    #[test]
    fn objects_stay_in_their_halves() {
        for shape in Shape::ALL {
            let s = SceneSpec::new(
                ObjectSpec { shape, color: Color::Green, side: Side::Left, texture_phase: 0 },
                ObjectSpec { shape, color: Color::Green, side: Side::Right, texture_phase: 0 },
            )
            .unwrap();
            let img = render_scene(&s);
            let w = CANVAS_SIZE;
            // Background untouched on the dividing column band.
            for y in 0..w {
                for x in [w / 2 - 1, w / 2] {
                    // objects are centred at w/4 and 3w/4 with radius 11 < w/4
                    assert_eq!(img[[y, x, 0]], BACKGROUND, "shape {shape:?} leaks at ({y},{x})");
                }
            }
            // Something was drawn on each side.
            let left_drawn = (0..w).any(|y| (0..w / 2).any(|x| img[[y, x, 0]] != BACKGROUND));
            let right_drawn = (0..w).any(|y| (w / 2..w).any(|x| img[[y, x, 0]] != BACKGROUND));
            assert!(left_drawn && right_drawn);
        }
    }

    #[test]
    fn bbox_contains_all_non_background_pixels() {
        for shape in Shape::ALL {
            let s = spec(shape, Color::Red, 2);
            let img = render_scene(&s);
            let bbox = object_bbox(Side::Left, CANVAS_SIZE);
            for y in 0..CANVAS_SIZE {
                for x in 0..CANVAS_SIZE / 2 {
                    if img[[y, x, 1]] != BACKGROUND || img[[y, x, 0]] != BACKGROUND {
                        assert!(
                            x >= bbox.x0 && x < bbox.x0 + bbox.width
                                && y >= bbox.y0 && y < bbox.y0 + bbox.height,
                            "{shape:?}: pixel ({y},{x}) outside bbox {bbox:?}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn interior_row_profile_alternates_with_period_four() {
        // A square interior avoids edge anti-aliasing: read the red channel
        // along the center row and check the 2-on / 2-off stripe pattern.
        let s = spec(Shape::Square, Color::Red, 0);
        let img = render_scene(&s);
        let y = CANVAS_SIZE / 2;
        let bright = Color::Red.rgb()[0];
        let dark = bright * 0.5;
        for x in 8..22 {
            let expected = if x % 4 < 2 { bright } else { dark };
            assert_eq!(img[[y, x, 0]], expected, "column {x}");
        }
        for x in 8..18 {
            assert_eq!(img[[y, x, 0]], img[[y, x + 4, 0]], "period break at {x}");
        }
    }

    #[test]
    fn texture_phase_shifts_stripes() {
        let a = render_scene(&spec(Shape::Square, Color::Red, 0));
        let b = render_scene(&spec(Shape::Square, Color::Red, 2));
        let y = CANVAS_SIZE / 2;
        // Phase 2 inverts the pattern at the same column.
        assert_ne!(a[[y, 12, 0]], b[[y, 12, 0]]);
    }

    #[test]
    fn same_side_objects_rejected() {
        let a = ObjectSpec { shape: Shape::Circle, color: Color::Red, side: Side::Left, texture_phase: 0 };
        assert!(SceneSpec::new(a, a).is_err());
    }

    #[test]
    fn prompt_shapes_match_contract() {
        let vocab = scene_vocabulary();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let item = sample_dataset_item(&vocab, &mut rng).unwrap();
            assert_eq!(item.global_prompt.len(), 6);
            for local in &item.local_prompts {
                assert_eq!(local.len(), 3);
                for id in local.token_ids() {
                    assert!(item.global_prompt.token_ids().contains(id));
                }
            }
        }
    }

    #[test]
    fn shape_frequencies_are_uniform_over_many_draws() {
        let vocab = scene_vocabulary();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 10_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            let item = sample_dataset_item(&vocab, &mut rng).unwrap();
            for obj in [&item.spec.left, &item.spec.right] {
                let k = Shape::ALL.iter().position(|s| *s == obj.shape).unwrap();
                counts[k] += 1;
            }
        }
        let draws = (2 * n) as f64;
        let p = 1.0 / 3.0;
        let sigma = (draws * p * (1.0 - p)).sqrt();
        for (k, c) in counts.iter().enumerate() {
            let dev = (*c as f64 - draws * p).abs();
            assert!(dev <= 3.0 * sigma, "shape {k}: count {c}, deviation {dev} > 3 sigma {sigma}");
        }
    }

    #[test]
    fn identical_seeds_give_identical_streams() {
        let vocab = scene_vocabulary();
        let mut a = ChaCha8Rng::seed_from_u64(99);
        let mut b = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..20 {
            let ia = sample_dataset_item(&vocab, &mut a).unwrap();
            let ib = sample_dataset_item(&vocab, &mut b).unwrap();
            assert_eq!(ia.spec, ib.spec);
            assert_eq!(ia.image, ib.image);
        }
    }

    #[test]
    fn auto_roi_area_is_valid() {
        let bbox = object_bbox(Side::Left, CANVAS_SIZE);
        assert!(bbox.width * bbox.height >= 9);
        let right = object_bbox(Side::Right, CANVAS_SIZE);
        assert!(right.x0 >= CANVAS_SIZE / 2);
        assert!(bbox.x0 + bbox.width <= CANVAS_SIZE / 2);
    }
}
