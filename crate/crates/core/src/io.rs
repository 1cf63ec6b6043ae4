//! Scene directories, images and point-cloud output.
//!
//! Layout of a scene directory:
//!
//! ```text
//! spec.json               scene spec (JSON)
//! gt_joints.json          ground-truth joints (JSON)
//! matches.csv             pix0_u,pix0_v,view0,pix1_u,pix1_v,view1,is_outlier_gt
//! state{0,1}/view_###.rgb.png     8-bit RGB
//! state{0,1}/view_###.depth.f32   little-endian f32 camera z, row-major, 0 = no data
//! state{0,1}/view_###.mask.png    16-bit gray, view-local mask ids (0 = none)
//! state{0,1}/view_###.gtmask.png  16-bit gray, ground-truth part index + 1
//! state{0,1}/view_###.cam.json    {width, height, intrinsics 3x3, extrinsics 4x4 world-to-camera}
//! state{0,1}/test/view_###.*      held-out views, same files
//! ```

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::corr::PixelMatch;
use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::geom::{Camera, CameraFile, Vec3};
use crate::grid::{DepthMap, Grid, LabelMap, RgbImage};
use crate::synth::{GeneratedScene, GtJoints, SceneSpec};

fn mkdir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write_json<T: serde::Serialize>(path: &Path, v: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(v).map_err(|e| Error::format(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::format(path, e))
}

pub fn write_json_file<T: serde::Serialize>(path: &Path, v: &T) -> Result<()> {
    write_json(path, v)
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_rgb_png(path: &Path, img: &RgbImage) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), img.width as u32, img.height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut w = enc.write_header().map_err(|e| Error::format(path, e))?;
    let bytes: Vec<u8> = img.data.iter().flat_map(|p| p.map(quantize)).collect();
    w.write_image_data(&bytes).map_err(|e| Error::format(path, e))
}

pub fn write_label_png(path: &Path, labels: &LabelMap) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), labels.width as u32, labels.height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Sixteen);
    let mut w = enc.write_header().map_err(|e| Error::format(path, e))?;
    let bytes: Vec<u8> = labels.data.iter().flat_map(|l| l.to_be_bytes()).collect();
    w.write_image_data(&bytes).map_err(|e| Error::format(path, e))
}

fn read_png(path: &Path) -> Result<(png::OutputInfo, Vec<u8>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let dec = png::Decoder::new(BufReader::new(file));
    let mut reader = dec.read_info().map_err(|e| Error::format(path, e))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::format(path, "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::format(path, e))?;
    buf.truncate(info.buffer_size());
    Ok((info, buf))
}

pub fn read_rgb_png(path: &Path) -> Result<RgbImage> {
    let (info, buf) = read_png(path)?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::format(path, "expected 8-bit RGB"));
    }
    let data = buf
        .chunks_exact(3)
        .map(|c| [c[0] as f32 / 255.0, c[1] as f32 / 255.0, c[2] as f32 / 255.0])
        .collect();
    Ok(Grid::from_vec(info.width as usize, info.height as usize, data))
}

pub fn read_label_png(path: &Path) -> Result<LabelMap> {
    let (info, buf) = read_png(path)?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Sixteen {
        return Err(Error::format(path, "expected 16-bit grayscale"));
    }
    let data = buf.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect();
    Ok(Grid::from_vec(info.width as usize, info.height as usize, data))
}

pub fn write_depth(path: &Path, depth: &DepthMap) -> Result<()> {
    let bytes: Vec<u8> = depth.data.iter().flat_map(|d| d.to_le_bytes()).collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_depth(path: &Path, width: usize, height: usize) -> Result<DepthMap> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != 4 * width * height {
        return Err(Error::format(
            path,
            format!("{} bytes for a {width}x{height} depth map", bytes.len()),
        ));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Grid::from_vec(width, height, data))
}

fn view_stem(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("view_{i:03}"))
}

fn with_ext(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(ext);
    PathBuf::from(s)
}

fn write_view(dir: &Path, i: usize, frame: &Frame, local: &LabelMap) -> Result<()> {
    let stem = view_stem(dir, i);
    write_rgb_png(&with_ext(&stem, ".rgb.png"), &frame.rgb)?;
    write_depth(&with_ext(&stem, ".depth.f32"), &frame.depth)?;
    write_label_png(&with_ext(&stem, ".mask.png"), local)?;
    write_label_png(&with_ext(&stem, ".gtmask.png"), &frame.labels)?;
    write_json(&with_ext(&stem, ".cam.json"), &CameraFile::from(frame.camera.clone()))
}

/// One stored view: the frame with local masks and its GT mask if present.
#[derive(Clone, Debug)]
pub struct StoredView {
    pub frame: Frame,
    pub gt_labels: Option<LabelMap>,
}

fn read_view(dir: &Path, i: usize, state: u8) -> Result<StoredView> {
    let stem = view_stem(dir, i);
    let cam: CameraFile = read_json(&with_ext(&stem, ".cam.json"))?;
    let camera = Camera::try_from(cam)?;
    let rgb = read_rgb_png(&with_ext(&stem, ".rgb.png"))?;
    let depth = read_depth(&with_ext(&stem, ".depth.f32"), camera.width, camera.height)?;
    let labels = read_label_png(&with_ext(&stem, ".mask.png"))?;
    for (name, w, h) in [("rgb", rgb.width, rgb.height), ("mask", labels.width, labels.height)] {
        if (w, h) != (camera.width, camera.height) {
            return Err(Error::format(
                &stem,
                format!("{name} is {w}x{h}, camera is {}x{}", camera.width, camera.height),
            ));
        }
    }
    let gt_path = with_ext(&stem, ".gtmask.png");
    let gt_labels = if gt_path.exists() {
        Some(read_label_png(&gt_path)?)
    } else {
        None
    };
    Ok(StoredView {
        frame: Frame {
            view: i,
            state,
            camera,
            rgb,
            depth,
            labels,
        },
        gt_labels,
    })
}

fn read_views(dir: &Path, state: u8) -> Result<Vec<StoredView>> {
    let mut out = Vec::new();
    while with_ext(&view_stem(dir, out.len()), ".cam.json").exists() {
        out.push(read_view(dir, out.len(), state)?);
    }
    Ok(out)
}

pub fn write_matches(path: &Path, rows: &[PixelMatch]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "pix0_u,pix0_v,view0,pix1_u,pix1_v,view1,is_outlier_gt").map_err(io)?;
    for r in rows {
        let flag = match r.is_outlier_gt {
            Some(b) => b.to_string(),
            None => String::new(),
        };
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.pix0_u, r.pix0_v, r.view0, r.pix1_u, r.pix1_v, r.view1, flag
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_matches(path: &Path) -> Result<Vec<PixelMatch>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::format(path, e)))
        .collect()
}

/// Writes a generated scene in the directory layout above.
pub fn write_scene(dir: &Path, scene: &GeneratedScene) -> Result<()> {
    mkdir(dir)?;
    write_json(&dir.join("spec.json"), &scene.spec)?;
    write_json(&dir.join("gt_joints.json"), &scene.gt)?;
    write_matches(&dir.join("matches.csv"), &scene.matches.rows)?;
    for s in 0..2 {
        let sd = dir.join(format!("state{s}"));
        mkdir(&sd)?;
        for (i, (v, l)) in scene.views[s].iter().zip(&scene.local[s].labels).enumerate() {
            write_view(&sd, i, &v.frame, l)?;
        }
        let td = sd.join("test");
        mkdir(&td)?;
        for (i, v) in scene.test_views[s].iter().enumerate() {
            write_view(&td, i, &v.frame, &v.frame.labels)?;
        }
    }
    Ok(())
}

/// A scene directory read back from disk.
#[derive(Clone, Debug)]
pub struct SceneDir {
    pub spec: Option<SceneSpec>,
    pub gt: Option<GtJoints>,
    pub views: [Vec<StoredView>; 2],
    pub matches: Vec<PixelMatch>,
}

impl SceneDir {
    /// Training frames of a state with their local masks.
    pub fn frames(&self, state: u8) -> Vec<Frame> {
        self.views[state as usize].iter().map(|v| v.frame.clone()).collect()
    }
}

pub fn read_scene(dir: &Path) -> Result<SceneDir> {
    if !dir.is_dir() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "scene directory not found"),
        ));
    }
    let opt_json = |name: &str| -> Result<Option<PathBuf>> {
        let p = dir.join(name);
        Ok(p.exists().then_some(p))
    };
    let spec = opt_json("spec.json")?.map(|p| read_json(&p)).transpose()?;
    let gt = opt_json("gt_joints.json")?.map(|p| read_json(&p)).transpose()?;
    let views = [read_views(&dir.join("state0"), 0)?, read_views(&dir.join("state1"), 1)?];
    for (s, v) in views.iter().enumerate() {
        if v.is_empty() {
            return Err(Error::format(dir, format!("no views in state{s}/")));
        }
    }
    let matches = read_matches(&dir.join("matches.csv"))?;
    Ok(SceneDir {
        spec,
        gt,
        views,
        matches,
    })
}

/// ASCII PLY point cloud with per-point part index.
pub fn write_ply(path: &Path, points: &[(Vec3, usize)]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    write!(
        w,
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nproperty int part\nend_header\n",
        points.len()
    )
    .map_err(io)?;
    for (p, k) in points {
        writeln!(w, "{:.6} {:.6} {:.6} {k}", p.x, p.y, p.z).map_err(io)?;
    }
    w.flush().map_err(io)
}
