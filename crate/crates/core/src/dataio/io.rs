//! On-disk dataset layout: a JSON manifest listing 8-bit PNG frames with their
//! camera poses, plus a plain-text event file.
//!
//! Event file:
//!
//! ```text
//! # events width=<W> height=<H> C=<float>
//! t x y p
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataio::types::{CameraModel, Event, EventStream, Frame, FrameSequence};
use crate::error::{Error, Result};
use crate::fsutil::{read_json, write_atomic, write_json};
use crate::image::Image;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestFrame {
    pub path: String,
    pub timestamp_us: u64,
    pub camera: CameraModel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub width: usize,
    pub height: usize,
    pub frames: Vec<ManifestFrame>,
    pub events_path: String,
}

pub fn encode_events(stream: &EventStream) -> String {
    let mut out = String::with_capacity(stream.events.len() * 16 + 64);
    let _ = writeln!(
        out,
        "# events width={} height={} C={}",
        stream.width, stream.height, stream.contrast
    );
    for e in &stream.events {
        let _ = writeln!(out, "{} {} {} {}", e.t, e.x, e.y, e.p);
    }
    out
}

pub fn write_events(path: &Path, stream: &EventStream) -> Result<()> {
    write_atomic(path, encode_events(stream).as_bytes())
}

fn parse_header(line: &str, path: &Path) -> Result<(usize, usize, f64)> {
    let bad = |m: &str| Error::data(path, Some(1), m.to_string());
    let rest = line.strip_prefix("# events").ok_or_else(|| bad("missing '# events' header"))?;
    let (mut w, mut h, mut c) = (None, None, None);
    for tok in rest.split_whitespace() {
        let (k, v) = tok.split_once('=').ok_or_else(|| bad("malformed header field"))?;
        match k {
            "width" => w = v.parse().ok(),
            "height" => h = v.parse().ok(),
            "C" => c = v.parse().ok(),
            _ => return Err(bad(&format!("unknown header field '{k}'"))),
        }
    }
    match (w, h, c) {
        (Some(w), Some(h), Some(c)) => Ok((w, h, c)),
        _ => Err(bad("header needs width, height and C")),
    }
}

pub fn parse_events(text: &str, path: &Path) -> Result<EventStream> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::data(path, Some(1), "empty event file"))?;
    let (width, height, contrast) = parse_header(header, path)?;
    if !(contrast > 0.0) {
        return Err(Error::data(path, Some(1), "contrast threshold must be positive"));
    }
    let mut events = Vec::new();
    let mut prev_t = 0u64;
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |m: String| Error::data(path, Some(lineno), m);
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 4 {
            return Err(bad(format!("expected 't x y p', got '{line}'")));
        }
        let t: u64 = f[0].parse().map_err(|_| bad(format!("bad timestamp '{}'", f[0])))?;
        let x: u32 = f[1].parse().map_err(|_| bad(format!("bad x '{}'", f[1])))?;
        let y: u32 = f[2].parse().map_err(|_| bad(format!("bad y '{}'", f[2])))?;
        let p: i8 = match f[3] {
            "1" | "+1" => 1,
            "-1" => -1,
            other => return Err(bad(format!("polarity must be 1 or -1, got '{other}'"))),
        };
        if x as usize >= width || y as usize >= height {
            return Err(bad(format!("event ({x}, {y}) outside {width}x{height} sensor")));
        }
        if t < prev_t {
            return Err(bad(format!("events not sorted: t={t} after t={prev_t}")));
        }
        prev_t = t;
        events.push(Event::new(t, x, y, p));
    }
    Ok(EventStream {
        events,
        width,
        height,
        contrast,
    })
}

pub fn read_events(path: &Path) -> Result<EventStream> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_events(&text, path)
}

fn resolve(base: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Loads and validates a dataset. Events outside the frame time span are dropped.
pub fn load_dataset(manifest_path: &Path) -> Result<(FrameSequence, EventStream)> {
    let manifest: Manifest = read_json(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    if manifest.frames.is_empty() {
        return Err(Error::data(manifest_path, None, "empty sequence"));
    }
    let mut frames = Vec::with_capacity(manifest.frames.len());
    for (i, mf) in manifest.frames.iter().enumerate() {
        let path = resolve(base, &mf.path);
        if !path.exists() {
            return Err(Error::data(
                manifest_path,
                None,
                format!("frame {i}: missing file {}", path.display()),
            ));
        }
        let image = Image::read_png(&path)?;
        if image.width != manifest.width || image.height != manifest.height {
            return Err(Error::data(
                &path,
                None,
                format!(
                    "resolution {}x{} does not match manifest {}x{}",
                    image.width, image.height, manifest.width, manifest.height
                ),
            ));
        }
        let image = if image.channels == 1 {
            let mut rgb = Image::new(image.width, image.height, 3);
            for (o, v) in rgb.data.chunks_exact_mut(3).zip(&image.data) {
                o.fill(*v);
            }
            rgb
        } else {
            image
        };
        mf.camera
            .validate()
            .map_err(|e| Error::data(manifest_path, None, format!("frame {i}: {e}")))?;
        frames.push(Frame {
            image,
            timestamp_us: mf.timestamp_us,
            camera: mf.camera.clone(),
        });
    }
    for (i, w) in frames.windows(2).enumerate() {
        if w[1].timestamp_us <= w[0].timestamp_us {
            return Err(Error::data(
                manifest_path,
                None,
                format!("frame {} timestamp not strictly increasing", i + 1),
            ));
        }
    }
    let seq = FrameSequence {
        frames,
        width: manifest.width,
        height: manifest.height,
    };

    let events_path = resolve(base, &manifest.events_path);
    if !events_path.exists() {
        return Err(Error::data(
            manifest_path,
            None,
            format!("missing event file {}", events_path.display()),
        ));
    }
    let mut stream = read_events(&events_path)?;
    if stream.width != manifest.width || stream.height != manifest.height {
        return Err(Error::data(
            &events_path,
            Some(1),
            format!(
                "sensor {}x{} does not match manifest {}x{}",
                stream.width, stream.height, manifest.width, manifest.height
            ),
        ));
    }
    let (t0, t1) = seq.span();
    stream.events.retain(|e| e.t >= t0 && e.t <= t1);
    Ok((seq, stream))
}

/// Writes frames as `frames/frame_NNNN.png`, events as `events.txt` and the
/// manifest as `manifest_name` inside `dir`. Returns the manifest path.
pub fn write_dataset(dir: &Path, frames: &FrameSequence, stream: &EventStream, manifest_name: &str, frame_subdir: &str) -> Result<PathBuf> {
    let mut entries = Vec::with_capacity(frames.len());
    for (i, f) in frames.frames.iter().enumerate() {
        let rel = format!("{frame_subdir}/frame_{i:04}.png");
        f.image.write_png(&dir.join(&rel))?;
        entries.push(ManifestFrame {
            path: rel,
            timestamp_us: f.timestamp_us,
            camera: f.camera.clone(),
        });
    }
    let events_rel = "events.txt".to_string();
    let events_path = dir.join(&events_rel);
    write_events(&events_path, stream)?;
    let manifest = Manifest {
        width: frames.width,
        height: frames.height,
        frames: entries,
        events_path: events_rel,
    };
    let path = dir.join(manifest_name);
    write_json(&path, &manifest)?;
    Ok(path)
}
