//! Synthetic moving-background videos with known ground truth.
//!
//! A phantom frame is a crop of a static texture taken at a per-frame integer
//! offset, with disk-shaped blobs painted on top. Offsets are expressed as the
//! crop origin relative to the texture centre, so a step of `(+1, 0)` moves the
//! field of view one pixel to the right and the content one pixel to the left.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::filters::gaussian_blur;
use crate::frame::{Frame, Mask, VideoSequence};
use crate::kv::{parse_list, KvFile};
use crate::stabilize::Offset;

#[derive(Debug, Clone, PartialEq)]
pub enum Texture {
    /// Blurred white noise rescaled to `[low, high]`.
    Smooth { sigma: f64, low: f64, high: f64 },
    Constant(f64),
}

impl Default for Texture {
    fn default() -> Self {
        Texture::Smooth {
            sigma: 3.0,
            low: 0.2,
            high: 0.8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waypoint {
    pub frame: usize,
    pub row: f64,
    pub col: f64,
}

/// A disk moving along a piecewise-linear path through its waypoints.
#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    pub radius: f64,
    pub intensity: f64,
    pub path: Vec<Waypoint>,
}

impl Blob {
    pub fn position(&self, frame: usize) -> (f64, f64) {
        let path = &self.path;
        if frame <= path[0].frame {
            return (path[0].row, path[0].col);
        }
        for pair in path.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            if frame <= b.frame {
                let span = (b.frame - a.frame) as f64;
                let t = if span == 0.0 { 1.0 } else { (frame - a.frame) as f64 / span };
                return (a.row + t * (b.row - a.row), a.col + t * (b.col - a.col));
            }
        }
        let last = path[path.len() - 1];
        (last.row, last.col)
    }

    fn covers(&self, frame: usize, row: usize, col: usize) -> bool {
        let (cy, cx) = self.position(frame);
        let dy = row as f64 - cy;
        let dx = col as f64 - cx;
        dy * dy + dx * dx <= self.radius * self.radius
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub texture: Texture,
    /// Crop origin per frame; length must equal `frames`.
    pub offsets: Vec<Offset>,
    pub blobs: Vec<Blob>,
    /// Texture border around the centred crop. Defaults to the largest offset.
    pub margin: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomTruth {
    pub offsets: Vec<Offset>,
    pub foreground: Vec<Mask>,
    /// The blob-free render of every frame.
    pub background: VideoSequence,
}

impl PhantomSpec {
    /// Keys understood by [`PhantomSpec::from_kv`].
    pub const KEYS: &'static [&'static str] = &[
        "height",
        "width",
        "frames",
        "texture",
        "texture_sigma",
        "texture_low",
        "texture_high",
        "texture_value",
        "margin",
        "offsets",
        "step",
        "blob",
    ];

    /// A static, blob-free phantom.
    pub fn still(height: usize, width: usize, frames: usize) -> Self {
        Self {
            height,
            width,
            frames,
            texture: Texture::default(),
            offsets: vec![Offset::ZERO; frames],
            blobs: Vec::new(),
            margin: None,
        }
    }

    /// Constant per-frame motion: `offsets[t] = t * step`.
    pub fn with_step(mut self, step: Offset) -> Self {
        self.offsets = (0..self.frames)
            .map(|t| Offset::new(step.u * t as i32, step.v * t as i32))
            .collect();
        self
    }

    pub fn required_margin(&self) -> usize {
        self.offsets
            .iter()
            .map(|o| o.u.unsigned_abs().max(o.v.unsigned_abs()) as usize)
            .max()
            .unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.height < crate::frame::MIN_FRAME_SIDE || self.width < crate::frame::MIN_FRAME_SIDE {
            return Err(Error::Phantom(format!(
                "frame size {}x{} below minimum",
                self.height, self.width
            )));
        }
        if self.frames == 0 {
            return Err(Error::Phantom("frames must be >= 1".into()));
        }
        if self.offsets.len() != self.frames {
            return Err(Error::Phantom(format!(
                "{} offsets for {} frames",
                self.offsets.len(),
                self.frames
            )));
        }
        if let Some(m) = self.margin {
            if self.required_margin() > m {
                return Err(Error::Phantom(format!(
                    "offsets reach {} px, outside the {m} px texture margin",
                    self.required_margin()
                )));
            }
        }
        match self.texture {
            Texture::Smooth { sigma, low, high } => {
                if !(sigma > 0.0) || !(0.0..=1.0).contains(&low) || !(low..=1.0).contains(&high) {
                    return Err(Error::Phantom("bad smooth texture parameters".into()));
                }
            }
            Texture::Constant(v) => {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Phantom("texture value outside [0, 1]".into()));
                }
            }
        }
        for blob in &self.blobs {
            if !(0.0..=1.0).contains(&blob.intensity) {
                return Err(Error::Phantom("blob intensity outside [0, 1]".into()));
            }
            if !(blob.radius >= 0.0) {
                return Err(Error::Phantom("negative blob radius".into()));
            }
            if blob.path.is_empty() || blob.path.windows(2).any(|w| w[1].frame < w[0].frame) {
                return Err(Error::Phantom("blob path must be non-empty and ordered by frame".into()));
            }
        }
        Ok(())
    }

    pub fn from_kv(kv: &KvFile) -> Result<Self> {
        let height = kv.parse_or("height", 128usize)?;
        let width = kv.parse_or("width", 128usize)?;
        let frames = kv.parse_or("frames", 16usize)?;
        let texture = match kv.get("texture").unwrap_or("smooth") {
            "smooth" => Texture::Smooth {
                sigma: kv.parse_or("texture_sigma", 3.0)?,
                low: kv.parse_or("texture_low", 0.2)?,
                high: kv.parse_or("texture_high", 0.8)?,
            },
            "constant" => Texture::Constant(kv.parse_or("texture_value", 0.5)?),
            other => return Err(Error::Config(format!("unknown texture {other:?}"))),
        };
        let mut spec = PhantomSpec {
            height,
            width,
            frames,
            texture,
            offsets: vec![Offset::ZERO; frames],
            blobs: Vec::new(),
            margin: kv.parse_value("margin")?,
        };
        if let Some(list) = kv.get("offsets") {
            spec.offsets = list
                .split(';')
                .filter(|s| !s.trim().is_empty())
                .map(parse_offset)
                .collect::<Result<_>>()?;
        } else if let Some(step) = kv.get("step") {
            spec = spec.with_step(parse_offset(step)?);
        }
        for line in kv.get_all("blob") {
            spec.blobs.push(parse_blob(line)?);
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_kv(&self) -> KvFile {
        let mut kv = KvFile::default();
        kv.push("height", self.height);
        kv.push("width", self.width);
        kv.push("frames", self.frames);
        match self.texture {
            Texture::Smooth { sigma, low, high } => {
                kv.push("texture", "smooth");
                kv.push("texture_sigma", sigma);
                kv.push("texture_low", low);
                kv.push("texture_high", high);
            }
            Texture::Constant(v) => {
                kv.push("texture", "constant");
                kv.push("texture_value", v);
            }
        }
        if let Some(m) = self.margin {
            kv.push("margin", m);
        }
        let offsets: Vec<String> = self.offsets.iter().map(|o| format!("{},{}", o.u, o.v)).collect();
        kv.push("offsets", offsets.join("; "));
        for b in &self.blobs {
            let path: Vec<String> = b
                .path
                .iter()
                .map(|w| format!("{}:{},{}", w.frame, w.row, w.col))
                .collect();
            kv.push(
                "blob",
                format!("radius={} intensity={} path={}", b.radius, b.intensity, path.join(";")),
            );
        }
        kv
    }
}

fn parse_offset(s: &str) -> Result<Offset> {
    let v = parse_list::<i32>(s)?;
    match v.as_slice() {
        [u, v] => Ok(Offset::new(*u, *v)),
        _ => Err(Error::Config(format!("offset must be `u,v`, got {s:?}"))),
    }
}

/// `radius=R intensity=I path=F:ROW,COL;F:ROW,COL`
fn parse_blob(line: &str) -> Result<Blob> {
    let bad = |what: &str| Error::Config(format!("blob {line:?}: {what}"));
    let (mut radius, mut intensity, mut path) = (None, None, Vec::new());
    for field in line.split_whitespace() {
        let (k, v) = field.split_once('=').ok_or_else(|| bad("expected key=value fields"))?;
        match k {
            "radius" => radius = Some(v.parse::<f64>().map_err(|_| bad("radius"))?),
            "intensity" => intensity = Some(v.parse::<f64>().map_err(|_| bad("intensity"))?),
            "path" => {
                for wp in v.split(';').filter(|s| !s.is_empty()) {
                    let (f, pos) = wp.split_once(':').ok_or_else(|| bad("waypoint F:ROW,COL"))?;
                    let xy = parse_list::<f64>(pos)?;
                    if xy.len() != 2 {
                        return Err(bad("waypoint F:ROW,COL"));
                    }
                    path.push(Waypoint {
                        frame: f.parse().map_err(|_| bad("waypoint frame"))?,
                        row: xy[0],
                        col: xy[1],
                    });
                }
            }
            _ => return Err(bad("unknown field")),
        }
    }
    Ok(Blob {
        radius: radius.ok_or_else(|| bad("missing radius"))?,
        intensity: intensity.ok_or_else(|| bad("missing intensity"))?,
        path,
    })
}

fn render_texture(texture: &Texture, height: usize, width: usize, seed: u64) -> Frame {
    match *texture {
        Texture::Constant(v) => Frame::filled(height, width, v),
        Texture::Smooth { sigma, low, high } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let noise = Frame::from_fn(height, width, |_, _| StandardNormal.sample(&mut rng));
            let smooth = gaussian_blur(&noise, sigma);
            let (min, max) = smooth
                .data()
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
            let span = (max - min).max(f64::MIN_POSITIVE);
            smooth.map(|v| low + (high - low) * (v - min) / span)
        }
    }
}

/// Renders the phantom. The texture is seeded by `seed`; blob motion is
/// deterministic from the spec.
pub fn generate_phantom(spec: &PhantomSpec, seed: u64) -> Result<(VideoSequence, PhantomTruth)> {
    spec.validate()?;
    let margin = spec.margin.unwrap_or_else(|| spec.required_margin());
    let tex_h = spec.height + 2 * margin;
    let tex_w = spec.width + 2 * margin;
    let texture = render_texture(&spec.texture, tex_h, tex_w, seed);

    let mut clean = Vec::with_capacity(spec.frames);
    let mut backgrounds = Vec::with_capacity(spec.frames);
    let mut masks = Vec::with_capacity(spec.frames);
    for (t, off) in spec.offsets.iter().enumerate() {
        let row0 = margin as i64 + off.v as i64;
        let col0 = margin as i64 + off.u as i64;
        debug_assert!(row0 >= 0 && col0 >= 0);
        let bg = texture.crop(row0 as usize, col0 as usize, spec.height, spec.width)?;
        let mut frame = bg.clone();
        for blob in &spec.blobs {
            for r in 0..spec.height {
                for c in 0..spec.width {
                    if blob.covers(t, r, c) {
                        frame.set(r, c, blob.intensity);
                    }
                }
            }
        }
        masks.push(Mask::from_fn(spec.height, spec.width, |r, c| {
            frame.get(r, c) != bg.get(r, c)
        }));
        clean.push(frame);
        backgrounds.push(bg);
    }
    Ok((
        VideoSequence::new(clean)?,
        PhantomTruth {
            offsets: spec.offsets.clone(),
            foreground: masks,
            background: VideoSequence::new(backgrounds)?,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn static_phantom_frames_identical() {
        let spec = PhantomSpec::still(16, 16, 4);
        let (seq, truth) = generate_phantom(&spec, 1).unwrap();
        assert!(seq.iter().all(|f| f == &seq.frames()[0]));
        assert!(truth.foreground.iter().all(|m| m.count() == 0));
    }

    #[test]
    fn unit_steps_are_exact_pixel_shifts() {
        let spec = PhantomSpec::still(16, 20, 5).with_step(Offset::new(1, 0));
        let (seq, _) = generate_phantom(&spec, 9).unwrap();
        for pair in seq.frames().windows(2) {
            let (prev, cur) = (&pair[0], &pair[1]);
            for r in 0..16 {
                for c in 0..19 {
                    assert_eq!(cur.get(r, c), prev.get(r, c + 1));
                }
            }
        }
    }

    #[test]
    fn radius_three_disk_has_29_pixels() {
        // lattice points with dx^2 + dy^2 <= 9
        let oracle = (-3i32..=3)
            .flat_map(|y| (-3i32..=3).map(move |x| (x, y)))
            .filter(|(x, y)| x * x + y * y <= 9)
            .count();
        assert_eq!(oracle, 29);
        let mut spec = PhantomSpec::still(16, 16, 1);
        spec.texture = Texture::Constant(0.5);
        spec.blobs.push(Blob {
            radius: 3.0,
            intensity: 1.0,
            path: vec![Waypoint { frame: 0, row: 8.0, col: 8.0 }],
        });
        let (_, truth) = generate_phantom(&spec, 0).unwrap();
        assert_eq!(truth.foreground[0].count(), oracle);
    }

    #[test]
    fn truth_mask_is_difference_from_background() {
        let mut spec = PhantomSpec::still(24, 24, 3).with_step(Offset::new(1, -1));
        spec.blobs.push(Blob {
            radius: 4.0,
            intensity: 0.95,
            path: vec![
                Waypoint { frame: 0, row: 6.0, col: 6.0 },
                Waypoint { frame: 2, row: 16.0, col: 12.0 },
            ],
        });
        let (seq, truth) = generate_phantom(&spec, 3).unwrap();
        for t in 0..3 {
            let f = &seq.frames()[t];
            let bg = &truth.background.frames()[t];
            for r in 0..24 {
                for c in 0..24 {
                    assert_eq!(truth.foreground[t].get(r, c), f.get(r, c) != bg.get(r, c));
                }
            }
        }
        assert_eq!(spec.blobs[0].position(1), (11.0, 9.0));
    }

    #[test]
    fn margin_violation_is_an_error() {
        let mut spec = PhantomSpec::still(16, 16, 4).with_step(Offset::new(3, 0));
        spec.margin = Some(5);
        assert!(matches!(generate_phantom(&spec, 0), Err(Error::Phantom(_))));
        spec.margin = Some(9);
        assert!(generate_phantom(&spec, 0).is_ok());
    }

    #[test]
    fn kv_round_trip() {
        let mut spec = PhantomSpec::still(32, 40, 3).with_step(Offset::new(2, -1));
        spec.blobs.push(Blob {
            radius: 2.5,
            intensity: 0.9,
            path: vec![
                Waypoint { frame: 0, row: 3.0, col: 4.5 },
                Waypoint { frame: 2, row: 10.0, col: 20.0 },
            ],
        });
        let text = spec.to_kv().to_text();
        let back = PhantomSpec::from_kv(&KvFile::parse(&text).unwrap()).unwrap();
        assert_eq!(back, spec);

        let stepped = PhantomSpec::from_kv(&KvFile::parse("frames = 3\nstep = 1,2").unwrap()).unwrap();
        assert_eq!(stepped.offsets[2], Offset::new(2, 4));
    }
}
