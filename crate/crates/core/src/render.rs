//! Software rendering of block wireframes, wind-slice overlays and simple
//! plots into RGB images, plus PPM/PNG encoding.
//!
//! Pixel `(x, y)` covers `[x − ½, x + ½] × [y − ½, y + ½]` in image
//! coordinates, so projected points are rounded to the nearest pixel.

use crate::camera::CameraIntrinsics;
use crate::scene::{Block, ColorTag, Provenance, Scene, Trajectories};
use crate::se3::Pose;
use crate::wind::{GridSpec, WindField};
use nalgebra::{Vector2, Vector3};
use std::io::Write;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum RenderError {
    #[error("image dimensions must be positive, got {width}×{height}")]
    InvalidDimensions { width: u32, height: u32 },
    #[error("malformed PPM: {0}")]
    Format(String),
    #[error("png encoding failed: {0}")]
    Png(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Rgb = [u8; 3];

pub const BLUE: Rgb = [40, 90, 255];
pub const RED: Rgb = [230, 40, 40];
pub const YELLOW: Rgb = [240, 200, 30];
pub const GRAY: Rgb = [200, 200, 200];

pub fn tag_color(tag: ColorTag) -> Rgb {
    match tag {
        ColorTag::Blue => BLUE,
        ColorTag::Red => RED,
        ColorTag::Yellow => YELLOW,
        ColorTag::Other => GRAY,
    }
}

/// Row-major 8-bit RGB.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl Image {
    pub fn new(width: u32, height: u32) -> Result<Self, RenderError> {
        Self::filled(width, height, [0, 0, 0])
    }

    pub fn filled(width: u32, height: u32, color: Rgb) -> Result<Self, RenderError> {
        if width == 0 || height == 0 {
            return Err(RenderError::InvalidDimensions { width, height });
        }
        Ok(Self {
            width,
            height,
            pixels: color.repeat(width as usize * height as usize),
        })
    }

    pub fn from_raw(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, RenderError> {
        if width == 0 || height == 0 {
            return Err(RenderError::InvalidDimensions { width, height });
        }
        if pixels.len() != 3 * width as usize * height as usize {
            return Err(RenderError::Format("buffer length is not 3·w·h".into()));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn blank_for(k: &CameraIntrinsics) -> Self {
        Self::filled(k.width, k.height, [0, 0, 0]).expect("validated intrinsics have positive size")
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: u32, y: u32) -> Rgb {
        let o = 3 * (y as usize * self.width as usize + x as usize);
        [self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]]
    }

    pub fn set(&mut self, x: u32, y: u32, c: Rgb) {
        let o = 3 * (y as usize * self.width as usize + x as usize);
        self.pixels[o..o + 3].copy_from_slice(&c);
    }

    fn set_checked(&mut self, x: i64, y: i64, c: Rgb) {
        if x >= 0 && y >= 0 && x < self.width as i64 && y < self.height as i64 {
            self.set(x as u32, y as u32, c);
        }
    }

    pub fn count_where(&self, pred: impl Fn(Rgb) -> bool) -> usize {
        self.pixels.chunks_exact(3).filter(|p| pred([p[0], p[1], p[2]])).count()
    }
}

// ---------------------------------------------------------------------------
// Lines

/// Geometry closer than this to the camera plane is clipped.
pub const NEAR_PLANE: f64 = 1e-3;
const DASH_ON: usize = 6;
const DASH_PERIOD: usize = 10;

/// Clips a segment to `z ≥ NEAR_PLANE` in camera space.
fn clip_near(a: Vector3<f64>, b: Vector3<f64>) -> Option<(Vector3<f64>, Vector3<f64>)> {
    match (a.z >= NEAR_PLANE, b.z >= NEAR_PLANE) {
        (true, true) => Some((a, b)),
        (false, false) => None,
        (a_in, _) => {
            let t = (NEAR_PLANE - a.z) / (b.z - a.z);
            let p = a + (b - a) * t;
            if a_in {
                Some((a, p))
            } else {
                Some((p, b))
            }
        }
    }
}

/// Liang–Barsky clip to an axis-aligned rectangle.
fn clip_rect(a: Vector2<f64>, b: Vector2<f64>, min: Vector2<f64>, max: Vector2<f64>) -> Option<(Vector2<f64>, Vector2<f64>)> {
    let d = b - a;
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for (p, q) in [
        (-d.x, a.x - min.x),
        (d.x, max.x - a.x),
        (-d.y, a.y - min.y),
        (d.y, max.y - a.y),
    ] {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
            if t0 > t1 {
                return None;
            }
        }
    }
    Some((a + d * t0, a + d * t1))
}

/// Integer midpoint (Bresenham) line between pixel centers.
pub fn draw_line(img: &mut Image, a: (i64, i64), b: (i64, i64), color: Rgb, dashed: bool) {
    let (mut x, mut y) = a;
    let dx = (b.0 - a.0).abs();
    let dy = -(b.1 - a.1).abs();
    let sx = if a.0 < b.0 { 1 } else { -1 };
    let sy = if a.1 < b.1 { 1 } else { -1 };
    let mut err = dx + dy;
    let mut n = 0usize;
    loop {
        if !dashed || n % DASH_PERIOD < DASH_ON {
            img.set_checked(x, y, color);
        }
        if (x, y) == b {
            break;
        }
        n += 1;
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

fn draw_segment_3d(img: &mut Image, k: &CameraIntrinsics, a: Vector3<f64>, b: Vector3<f64>, color: Rgb, dashed: bool) {
    let Some((a, b)) = clip_near(a, b) else {
        return;
    };
    let (Ok(pa), Ok(pb)) = (k.project(&a), k.project(&b)) else {
        return;
    };
    let min = Vector2::new(-0.5, -0.5);
    let max = Vector2::new(img.width as f64 - 0.5, img.height as f64 - 0.5);
    let Some((pa, pb)) = clip_rect(pa, pb, min, max) else {
        return;
    };
    let round = |p: Vector2<f64>| (p.x.round() as i64, p.y.round() as i64);
    draw_line(img, round(pa), round(pb), color, dashed);
}

// ---------------------------------------------------------------------------
// Wireframes

/// One block to draw, posed object→camera.
#[derive(Debug, Clone)]
pub struct WireItem<'a> {
    pub block: &'a Block,
    pub pose: Pose,
    pub dashed: bool,
}

/// Draws the 12 edges of every item. Anchor-inferred poses are dashed.
pub fn render_wireframe(items: &[WireItem<'_>], k: &CameraIntrinsics, base: &Image) -> Image {
    let mut img = base.clone();
    for item in items {
        let corners = item.block.corners().map(|c| item.pose.transform_point(&c));
        let color = tag_color(item.block.color_tag);
        for (i, j) in Block::EDGES {
            draw_segment_3d(&mut img, k, corners[i], corners[j], color, item.dashed);
        }
    }
    img
}

/// Scene blocks at their world poses, seen through a world→camera extrinsic.
pub fn scene_items<'a>(scene: &'a Scene, extrinsic: &Pose) -> Vec<WireItem<'a>> {
    scene
        .blocks
        .iter()
        .filter_map(|b| {
            let world = scene.world_poses.get(&b.id)?;
            Some(WireItem {
                block: b,
                pose: extrinsic.compose(world).ok()?,
                dashed: false,
            })
        })
        .collect()
}

/// Tracked object→camera poses at one frame.
pub fn track_items<'a>(scene: &'a Scene, tracks: &Trajectories, frame: usize) -> Vec<WireItem<'a>> {
    scene
        .blocks
        .iter()
        .filter_map(|b| {
            let e = tracks.get(&b.id)?.get(frame)?;
            Some(WireItem {
                block: b,
                pose: e.pose.clone(),
                dashed: matches!(e.provenance, Provenance::AnchorInferred { .. }),
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Wind overlay

/// Five evenly spaced stops, low speed to high.
pub const COLORMAP: [Rgb; 5] = [[68, 1, 84], [59, 82, 139], [33, 145, 140], [94, 201, 98], [253, 231, 37]];

/// Piecewise-linear lookup; `t` is clamped to `[0, 1]`.
pub fn colormap(t: f64) -> Rgb {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let s = t * (COLORMAP.len() - 1) as f64;
    let i = (s.floor() as usize).min(COLORMAP.len() - 2);
    let f = s - i as f64;
    std::array::from_fn(|c| {
        let (a, b) = (COLORMAP[i][c] as f64, COLORMAP[i + 1][c] as f64);
        (a + (b - a) * f).round() as u8
    })
}

fn blend(base: Rgb, over: Rgb, alpha: f64) -> Rgb {
    std::array::from_fn(|c| (base[c] as f64 * (1.0 - alpha) + over[c] as f64 * alpha).round() as u8)
}

/// Grid cell hit by the ray through pixel `(x, y)`, if it is fluid.
fn slice_cell(
    field: &WindField,
    spec: &GridSpec,
    cam_center: &Vector3<f64>,
    cam_to_world: &Pose,
    k: &CameraIntrinsics,
    x: u32,
    y: u32,
) -> Option<usize> {
    let dir = cam_to_world.rotation.rotate(&k.back_project(x as f64, y as f64));
    if dir.z == 0.0 {
        return None;
    }
    let s = (spec.slice_height - cam_center.z) / dir.z;
    if !(s > 0.0) {
        return None;
    }
    let p = cam_center + dir * s;
    let gi = ((p.x - spec.origin[0]) / spec.dx).floor();
    let gj = ((p.y - spec.origin[1]) / spec.dx).floor();
    if gi < 0.0 || gj < 0.0 || gi >= field.nx as f64 || gj >= field.ny as f64 {
        return None;
    }
    let c = gj as usize * field.nx + gi as usize;
    (!field.solid[c]).then_some(c)
}

/// Paints each pixel whose ray meets a fluid cell of the slice plane with
/// that cell's speed color, blended over `base` by `alpha`. Speeds are
/// normalized by the field's maximum.
pub fn render_wind_overlay(
    field: &WindField,
    spec: &GridSpec,
    extrinsic: &Pose,
    k: &CameraIntrinsics,
    base: &Image,
    alpha: f64,
) -> Image {
    let mut img = base.clone();
    let alpha = alpha.clamp(0.0, 1.0);
    if alpha == 0.0 {
        return img;
    }
    let cam_to_world = extrinsic.inverse();
    let center = cam_to_world.translation;
    let max = field.max_speed();
    for y in 0..img.height {
        for x in 0..img.width {
            if let Some(c) = slice_cell(field, spec, &center, &cam_to_world, k, x, y) {
                let t = if max > 0.0 { field.ux[c].hypot(field.uy[c]) / max } else { 0.0 };
                let px = blend(img.get(x, y), colormap(t), alpha);
                img.set(x, y, px);
            }
        }
    }
    img
}

/// Plan view of the slice: `scale`×`scale` pixels per cell, +y up, speed
/// colors normalized by the field maximum, solid cells gray.
pub fn render_speed_map(field: &WindField, scale: u32) -> Result<Image, RenderError> {
    let scale = scale.max(1);
    let mut img = Image::new(field.nx as u32 * scale, field.ny as u32 * scale)?;
    let max = field.max_speed();
    for j in 0..field.ny {
        for i in 0..field.nx {
            let c = j * field.nx + i;
            let color = if field.solid[c] {
                GRAY
            } else if max > 0.0 {
                colormap(field.ux[c].hypot(field.uy[c]) / max)
            } else {
                colormap(0.0)
            };
            let row = (field.ny - 1 - j) as u32 * scale;
            for dy in 0..scale {
                for dx in 0..scale {
                    img.set(i as u32 * scale + dx, row + dy, color);
                }
            }
        }
    }
    Ok(img)
}

// ---------------------------------------------------------------------------
// Plots

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeriesStyle {
    Line,
    Markers,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub points: Vec<[f64; 2]>,
    pub color: Rgb,
    pub style: SeriesStyle,
}

/// Axes from the origin to the data maxima, no labels.
pub fn render_plot(series: &[Series], width: u32, height: u32) -> Result<Image, RenderError> {
    let mut img = Image::filled(width, height, [255, 255, 255])?;
    let margin = 20i64;
    let (w, h) = (width as i64, height as i64);
    let axis = [90, 90, 90];
    draw_line(&mut img, (margin, h - margin), (w - margin, h - margin), axis, false);
    draw_line(&mut img, (margin, h - margin), (margin, margin), axis, false);
    let pts = series.iter().flat_map(|s| s.points.iter());
    let (xmax, ymax) = pts.fold((0.0f64, 0.0f64), |(a, b), p| (a.max(p[0]), b.max(p[1])));
    let sx = if xmax > 0.0 { (w - 2 * margin) as f64 / xmax } else { 0.0 };
    let sy = if ymax > 0.0 { (h - 2 * margin) as f64 / ymax } else { 0.0 };
    let to_px = |p: &[f64; 2]| (margin + (p[0] * sx).round() as i64, h - margin - (p[1] * sy).round() as i64);
    for s in series {
        match s.style {
            SeriesStyle::Line => {
                for pair in s.points.windows(2) {
                    draw_line(&mut img, to_px(&pair[0]), to_px(&pair[1]), s.color, false);
                }
            }
            SeriesStyle::Markers => {
                for p in &s.points {
                    let (cx, cy) = to_px(p);
                    for dy in -2..=2 {
                        for dx in -2..=2 {
                            img.set_checked(cx + dx, cy + dy, s.color);
                        }
                    }
                }
            }
        }
    }
    Ok(img)
}

// ---------------------------------------------------------------------------
// Encoding

/// Binary P6 with maxval 255.
pub fn encode_ppm(img: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8], RenderError> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(RenderError::Format("truncated header".into()));
    }
    Ok(&bytes[start..*pos])
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Image, RenderError> {
    let mut pos = 0;
    if next_token(bytes, &mut pos)? != b"P6" {
        return Err(RenderError::Format("not a P6 file".into()));
    }
    let mut num = || -> Result<u32, RenderError> {
        std::str::from_utf8(next_token(bytes, &mut pos)?)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| RenderError::Format("bad header number".into()))
    };
    let (w, h, maxval) = (num()?, num()?, num()?);
    if maxval != 255 {
        return Err(RenderError::Format("only maxval 255 is supported".into()));
    }
    // Exactly one whitespace byte separates the header from the raster.
    Image::from_raw(w, h, bytes.get(pos + 1..).unwrap_or_default().to_vec())
}

pub fn write_ppm(img: &Image, path: &Path) -> Result<(), RenderError> {
    std::fs::write(path, encode_ppm(img))?;
    Ok(())
}

pub fn read_ppm(path: &Path) -> Result<Image, RenderError> {
    decode_ppm(&std::fs::read(path)?)
}

pub fn encode_png(img: &Image) -> Result<Vec<u8>, RenderError> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width, img.height);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| RenderError::Png(e.to_string()))?;
        writer.write_image_data(&img.pixels).map_err(|e| RenderError::Png(e.to_string()))?;
    }
    Ok(out)
}

/// PNG when the path ends in `.png`, P6 PPM otherwise.
pub fn write_image(img: &Image, path: &Path) -> Result<(), RenderError> {
    let bytes = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
        encode_png(img)?
    } else {
        encode_ppm(img)
    };
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

/// Frame file name used for rendered sequences.
pub fn frame_name(index: usize, ext: &str) -> String {
    format!("frame_{index:05}.{ext}")
}

/// Deterministic inputs for golden-image checks.
pub mod fixtures {
    use super::*;
    use crate::bench::look_at;
    use crate::scene::{TrackEntry, TrackedTrajectory};
    use crate::se3::Rotation;
    use crate::wind::{run_to_steady, voxelize};

    pub fn intrinsics() -> CameraIntrinsics {
        CameraIntrinsics::new(300.0, 300.0, 80.0, 60.0, 160, 120).expect("valid")
    }

    pub fn camera() -> Pose {
        look_at(&Vector3::new(0.35, -0.3, 0.3), &Vector3::new(0.0, 0.0, 0.0))
    }

    /// Default tabletop scene with red drawn as anchor-inferred.
    pub fn wireframe() -> Image {
        let scene = Scene::default_tabletop();
        let cam = camera();
        let mut tracks = Trajectories::new();
        for item in scene_items(&scene, &cam) {
            let mut t = TrackedTrajectory::new(item.block.id.clone(), 0);
            let provenance = if item.block.id == "red" {
                Provenance::AnchorInferred { anchor: "blue".into() }
            } else {
                Provenance::Observed
            };
            t.entries.push(TrackEntry {
                pose: item.pose,
                provenance,
                confidence: None,
            });
            tracks.insert(item.block.id.clone(), t);
        }
        let k = intrinsics();
        render_wireframe(&track_items(&scene, &tracks, 0), &k, &Image::blank_for(&k))
    }

    pub fn wind_spec() -> GridSpec {
        GridSpec {
            nx: 48,
            ny: 24,
            dx: 0.01,
            origin: [-0.24, -0.12],
            slice_height: 0.0075,
            inlet_velocity: 0.05,
            tau: 0.8,
            ..Default::default()
        }
    }

    /// Flow past the default scene, overlaid at half opacity under the
    /// wireframe.
    pub fn overlay() -> Image {
        let scene = Scene::default_tabletop().with_block(
            Block::jenga("extra", ColorTag::Other),
            Pose::new(Rotation::rot_z(0.5), Vector3::new(0.05, 0.07, 0.0075), "", crate::scene::WORLD),
        );
        let spec = wind_spec();
        let mask = voxelize(&scene, &spec).expect("fixture scene fits");
        let field = run_to_steady(&mask, &spec, 1e-4, 600).expect("stable fixture");
        let k = intrinsics();
        let cam = camera();
        let base = Image::filled(k.width, k.height, [30, 30, 30]).expect("valid");
        let img = render_wind_overlay(&field, &spec, &cam, &k, &base, 0.5);
        render_wireframe(&scene_items(&scene, &cam), &k, &img)
    }

    /// Name and image of every golden fixture.
    pub fn all() -> Vec<(&'static str, Image)> {
        vec![("wireframe.ppm", wireframe()), ("overlay.ppm", overlay())]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::look_at;
    use crate::camera::project_point;
    use crate::scene::WORLD;
    use crate::se3::Rotation;
    use crate::wind::{ObstacleMask, XBoundary, YBoundary};

    fn k(w: u32, h: u32, f: f64) -> CameraIntrinsics {
        CameraIntrinsics::new(f, f, w as f64 / 2.0, h as f64 / 2.0, w, h).unwrap()
    }

    #[test]
    fn dimensions_and_buffer() {
        assert!(Image::new(0, 3).is_err());
        let img = Image::new(4, 3).unwrap();
        assert_eq!(img.pixels().len(), 36);
        assert!(Image::from_raw(2, 2, vec![0; 11]).is_err());
    }

    #[test]
    fn minimal_ppm() {
        let img = Image::filled(1, 1, [255, 0, 0]).unwrap();
        let bytes = encode_ppm(&img);
        assert_eq!(&bytes[..11], b"P6\n1 1\n255\n");
        assert_eq!(&bytes[11..], &[0xFF, 0x00, 0x00]);
        assert_eq!(bytes.len(), 14);
    }

    #[test]
    fn ppm_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = Image::new(7, 5).unwrap();
        for y in 0..5 {
            for x in 0..7 {
                img.set(x, y, [x as u8 * 30, y as u8 * 40, 9]);
            }
        }
        let path = dir.path().join("a.ppm");
        write_image(&img, &path).unwrap();
        assert_eq!(read_ppm(&path).unwrap(), img);
        assert!(matches!(write_ppm(&img, &dir.path().join("missing/a.ppm")), Err(RenderError::Io(_))));
        assert!(decode_ppm(b"P3\n1 1\n255\n").is_err());

        let png_path = dir.path().join("a.png");
        write_image(&img, &png_path).unwrap();
        assert_eq!(&std::fs::read(&png_path).unwrap()[..8], b"\x89PNG\r\n\x1a\n");
    }

    #[test]
    fn bresenham_endpoints_and_octants() {
        for (a, b) in [((1, 1), (8, 4)), ((8, 1), (1, 6)), ((3, 7), (3, 0)), ((0, 0), (5, 5))] {
            let mut img = Image::new(10, 10).unwrap();
            draw_line(&mut img, a, b, [255, 255, 255], false);
            let n = img.count_where(|p| p == [255, 255, 255]);
            let expected = (b.0 - a.0).abs().max((b.1 - a.1).abs()) as usize + 1;
            assert_eq!(n, expected);
            assert_eq!(img.get(a.0 as u32, a.1 as u32), [255, 255, 255]);
            assert_eq!(img.get(b.0 as u32, b.1 as u32), [255, 255, 255]);
        }
        let mut img = Image::new(40, 1).unwrap();
        draw_line(&mut img, (0, 0), (39, 0), [1, 1, 1], true);
        assert_eq!(img.count_where(|p| p == [1, 1, 1]), 24);
    }

    #[test]
    fn empty_scene_leaves_base() {
        let kk = k(64, 48, 100.0);
        let base = Image::filled(64, 48, [9, 8, 7]).unwrap();
        assert_eq!(render_wireframe(&[], &kk, &base), base);
    }

    #[test]
    fn cube_edges_land_on_projected_corners() {
        let kk = k(640, 480, 500.0);
        let cube = Block::new("c", [0.5, 0.5, 0.5], ColorTag::Red).unwrap();
        let pose = Pose::new(Rotation::identity(), Vector3::new(0.0, 0.0, 5.0), "c", "camera");
        let img = render_wireframe(
            &[WireItem { block: &cube, pose: pose.clone(), dashed: false }],
            &kk,
            &Image::blank_for(&kk),
        );
        let ident = Pose::identity("camera", "camera");
        let mut xs = Vec::new();
        for c in cube.corners() {
            let p = project_point(&pose.transform_point(&c), &ident, &kk).unwrap();
            let (x, y) = (p.x.round() as u32, p.y.round() as u32);
            assert_eq!(img.get(x, y), RED, "corner at ({x}, {y})");
            xs.push(x);
        }
        // Front face x from 320 − 500·0.5/4.5, back face 320 − 500·0.5/5.5.
        assert!(xs.contains(&264) && xs.contains(&275));
        // Everything lit lies inside the front face's box.
        for y in 0..480 {
            for x in 0..640 {
                if img.get(x, y) == RED {
                    assert!((264..=376).contains(&x) && (184..=296).contains(&y));
                }
            }
        }
    }

    #[test]
    fn block_behind_camera_is_clipped() {
        let kk = k(64, 48, 100.0);
        let b = Block::jenga("b", ColorTag::Blue);
        let pose = Pose::new(Rotation::identity(), Vector3::new(0.0, 0.0, -1.0), "b", "camera");
        let base = Image::new(64, 48).unwrap();
        assert_eq!(render_wireframe(&[WireItem { block: &b, pose, dashed: false }], &kk, &base), base);

        // Straddling the camera plane still draws the visible part.
        // Long axis along the optical axis, spanning z from −0.0175 to 0.0575.
        let straddle = Pose::new(Rotation::rot_y(std::f64::consts::FRAC_PI_2), Vector3::new(0.0, 0.0, 0.02), "b", "camera");
        let img = render_wireframe(&[WireItem { block: &b, pose: straddle, dashed: false }], &kk, &base);
        assert!(img.count_where(|p| p == BLUE) > 0);
    }

    #[test]
    fn colormap_stops() {
        assert_eq!(colormap(0.0), COLORMAP[0]);
        assert_eq!(colormap(0.25), COLORMAP[1]);
        assert_eq!(colormap(1.0), COLORMAP[4]);
        assert_eq!(colormap(7.0), COLORMAP[4]);
        assert_eq!(colormap(f64::NAN), COLORMAP[0]);
    }

    #[test]
    fn speed_map_puts_row_zero_at_bottom() {
        let mask = ObstacleMask::empty(4, 3).fill_rect(0..1, 0..1);
        let mut field = WindField::uniform(&mask, 1.0, [0.0, 0.0]);
        field.ux[3 * 4 - 1] = 0.1;
        let img = render_speed_map(&field, 2).unwrap();
        assert_eq!((img.width(), img.height()), (8, 6));
        assert_eq!(img.get(0, 5), GRAY);
        assert_eq!(img.get(7, 0), COLORMAP[4]);
        assert_eq!(img.get(3, 3), COLORMAP[0]);
    }

    fn top_down(spec: &GridSpec, height: f64) -> Pose {
        let cx = spec.origin[0] + 0.5 * spec.nx as f64 * spec.dx;
        let cy = spec.origin[1] + 0.5 * spec.ny as f64 * spec.dx;
        // Slightly off vertical keeps the look-at basis well defined.
        look_at(&Vector3::new(cx + 1e-4, cy, height), &Vector3::new(cx, cy, spec.slice_height))
    }

    fn small_spec() -> GridSpec {
        GridSpec {
            nx: 20,
            ny: 16,
            dx: 0.01,
            origin: [-0.1, -0.08],
            slice_height: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn alpha_zero_is_identity() {
        let spec = small_spec();
        let mask = ObstacleMask::empty(20, 16);
        let field = WindField::uniform(&mask, 1.0, [0.05, 0.0]);
        let kk = k(80, 60, 100.0);
        let base = Image::filled(80, 60, [1, 2, 3]).unwrap();
        assert_eq!(render_wind_overlay(&field, &spec, &top_down(&spec, 0.5), &kk, &base, 0.0), base);
    }

    #[test]
    fn uniform_field_covers_projected_slice_once() {
        let spec = small_spec();
        let mask = ObstacleMask::empty(20, 16);
        let field = WindField::uniform(&mask, 1.0, [0.05, 0.0]);
        let kk = k(120, 100, 150.0);
        let cam = look_at(&Vector3::new(0.25, -0.2, 0.3), &Vector3::zeros());
        let base = Image::new(120, 100).unwrap();
        let img = render_wind_overlay(&field, &spec, &cam, &kk, &base, 1.0);
        let top = COLORMAP[4];
        assert_eq!(img.count_where(|p| p != [0, 0, 0] && p != top), 0);

        // Projected quad area by the shoelace formula, ±1 px band along its border.
        let corners = [[0, 0], [20, 0], [20, 16], [0, 16]].map(|[i, j]| {
            let p = Vector3::new(spec.origin[0] + i as f64 * spec.dx, spec.origin[1] + j as f64 * spec.dx, 0.0);
            project_point(&p, &cam, &kk).unwrap()
        });
        let mut area = 0.0;
        let mut perimeter = 0.0;
        for i in 0..4 {
            let (a, b) = (corners[i], corners[(i + 1) % 4]);
            area += a.x * b.y - b.x * a.y;
            perimeter += (b - a).norm();
        }
        let area = area.abs() / 2.0;
        let lit = img.count_where(|p| p == top) as f64;
        assert!((lit - area).abs() <= perimeter, "lit {lit}, area {area}, band {perimeter}");
    }

    #[test]
    fn solid_cells_stay_untouched() {
        let spec = small_spec();
        let mask = ObstacleMask::empty(20, 16).fill_rect(0..20, 0..8);
        let field = WindField::uniform(&mask, 1.0, [0.05, 0.0]);
        let kk = k(80, 80, 100.0);
        let cam = top_down(&spec, 0.5);
        let base = Image::new(80, 80).unwrap();
        let img = render_wind_overlay(&field, &spec, &cam, &kk, &base, 1.0);
        // World point in the solid half projects to an untouched pixel.
        let p = project_point(&Vector3::new(0.0, -0.04, 0.0), &cam, &kk).unwrap();
        assert_eq!(img.get(p.x.round() as u32, p.y.round() as u32), [0, 0, 0]);
        let q = project_point(&Vector3::new(0.0, 0.04, 0.0), &cam, &kk).unwrap();
        assert_eq!(img.get(q.x.round() as u32, q.y.round() as u32), COLORMAP[4]);
    }

    #[test]
    fn poiseuille_centerline_has_max_color() {
        let spec = GridSpec {
            nx: 16,
            ny: 32,
            dx: 0.01,
            origin: [-0.08, -0.16],
            slice_height: 0.0,
            tau: 1.0,
            x_boundary: XBoundary::Periodic,
            y_boundary: YBoundary::Walls,
            body_force: [1e-5, 0.0],
            ..Default::default()
        };
        let mask = ObstacleMask::empty(16, 32);
        let field = crate::wind::run_to_steady(&mask, &spec, 1e-7, 50_000).unwrap();
        let kk = k(100, 100, 200.0);
        let cam = top_down(&spec, 1.0);
        let img = render_wind_overlay(&field, &spec, &cam, &kk, &Image::new(100, 100).unwrap(), 1.0);
        let center = project_point(&Vector3::new(0.0, -0.005, 0.0), &cam, &kk).unwrap();
        assert_eq!(img.get(center.x.round() as u32, center.y.round() as u32), COLORMAP[4]);
        let near_wall = project_point(&Vector3::new(0.0, -0.155, 0.0), &cam, &kk).unwrap();
        assert_ne!(img.get(near_wall.x.round() as u32, near_wall.y.round() as u32), COLORMAP[4]);
    }

    #[test]
    fn renders_are_deterministic() {
        assert_eq!(fixtures::wireframe(), fixtures::wireframe());
        let scene = Scene::default_tabletop();
        assert!(scene.world_poses.values().all(|p| p.dst == WORLD));
    }

    #[test]
    fn plot_draws_series() {
        let img = render_plot(
            &[
                Series { points: vec![[0.1, 0.1], [0.4, 0.4]], color: BLUE, style: SeriesStyle::Line },
                Series { points: vec![[0.2, 0.21]], color: RED, style: SeriesStyle::Markers },
            ],
            200,
            150,
        )
        .unwrap();
        assert!(img.count_where(|p| p == BLUE) > 50);
        assert_eq!(img.count_where(|p| p == RED), 25);
    }
}
