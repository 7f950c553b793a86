//! On-disk clips: `frame_000.png ...`, `clip.json` and optional `JMFL` flow files.

use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma, Rgb};
use serde::{Deserialize, Serialize};

use crate::data::clip::{FrameClip, SceneMeta};
use crate::data::pose::{BBox, PersonPose};
use crate::data::synthetic::SyntheticSceneSpec;
use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipAnnotation {
    pub delta: usize,
    pub keyframe_index: usize,
    pub person_box: BBox,
    pub meta: SceneMeta,
    pub poses: Vec<Vec<[f64; 3]>>,
    #[serde(default)]
    pub flow_files: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<SyntheticSceneSpec>,
}

#[derive(Clone, Debug)]
pub struct StoredClip {
    pub clip: FrameClip,
    pub poses: Vec<PersonPose>,
    /// Consecutive-frame flows when the clip ships flow files.
    pub flows: Option<Vec<FlowField>>,
}

impl StoredClip {
    pub fn keyframe_pose(&self) -> &PersonPose {
        &self.poses[self.clip.keyframe_index]
    }
}

pub fn frame_file_name(i: usize) -> String {
    format!("frame_{i:03}.png")
}

fn to_u16(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

/// Writes a `[1 | 3, H, W]` frame as a 16-bit PNG.
pub fn save_frame(frame: &Tensor, path: &Path) -> Result<()> {
    let s = frame.shape();
    let (c, h, w) = (s[0], s[1] as u32, s[2] as u32);
    let plane = (h * w) as usize;
    let d = frame.data();
    match c {
        1 => {
            let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(w, h, |x, y| Luma([to_u16(d[(y * w + x) as usize])]));
            buf.save(path)?;
        }
        3 => {
            let buf: ImageBuffer<Rgb<u16>, Vec<u16>> = ImageBuffer::from_fn(w, h, |x, y| {
                let i = (y * w + x) as usize;
                Rgb([to_u16(d[i]), to_u16(d[plane + i]), to_u16(d[2 * plane + i])])
            });
            buf.save(path)?;
        }
        _ => return Err(Error::Shape(format!("cannot store a {c}-channel frame"))),
    }
    Ok(())
}

pub fn load_frame(path: &Path, channels: usize) -> Result<Tensor> {
    let img = image::open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match channels {
        1 => {
            let g = img.into_luma16();
            Tensor::from_vec(&[1, h, w], g.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect())
        }
        3 => {
            let rgb = img.into_rgb16();
            let mut data = vec![0.0; 3 * h * w];
            for (i, p) in rgb.pixels().enumerate() {
                for c in 0..3 {
                    data[c * h * w + i] = p.0[c] as f64 / 65535.0;
                }
            }
            Tensor::from_vec(&[3, h, w], data)
        }
        _ => Err(Error::Shape(format!("cannot load a {channels}-channel frame"))),
    }
}

pub fn save_clip(dir: &Path, clip: &FrameClip, poses: &[PersonPose], flows: Option<&[FlowField]>) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (i, f) in clip.frames.iter().enumerate() {
        save_frame(f, &dir.join(frame_file_name(i)))?;
    }
    let mut flow_files = Vec::new();
    if let Some(flows) = flows {
        for (i, f) in flows.iter().enumerate() {
            let name = format!("flow_{i:03}.jmfl");
            f.save(&dir.join(&name))?;
            flow_files.push(name);
        }
    }
    let ann = ClipAnnotation {
        delta: clip.delta,
        keyframe_index: clip.keyframe_index,
        person_box: clip.person_box,
        meta: clip.meta,
        poses: poses.iter().map(|p| p.to_rows()).collect(),
        flow_files,
        scene: clip.scene.clone(),
    };
    fs::write(dir.join("clip.json"), serde_json::to_string_pretty(&ann)?)?;
    Ok(())
}

pub fn load_clip(dir: &Path) -> Result<StoredClip> {
    let ann: ClipAnnotation = serde_json::from_str(&fs::read_to_string(dir.join("clip.json"))?)?;
    let n = 2 * ann.delta + 1;
    if ann.keyframe_index != ann.delta || ann.poses.len() != n {
        return Err(Error::Dataset(format!("{}: inconsistent delta/keyframe/poses", dir.display())));
    }
    let first = image::open(dir.join(frame_file_name(0)))?;
    let channels = if first.color().has_color() { 3 } else { 1 };
    let frames = (0..n).map(|i| load_frame(&dir.join(frame_file_name(i)), channels)).collect::<Result<Vec<_>>>()?;
    let flows = if ann.flow_files.is_empty() {
        None
    } else {
        Some(ann.flow_files.iter().map(|f| FlowField::load(&dir.join(f))).collect::<Result<Vec<_>>>()?)
    };
    let clip = FrameClip::new(frames, ann.delta, ann.person_box, ann.meta, ann.scene)?;
    let poses = ann.poses.iter().map(|rows| PersonPose::from_rows(rows)).collect();
    Ok(StoredClip { clip, poses, flows })
}

/// Clip directories (those holding a `clip.json`) under `root`, sorted by name.
pub fn list_clip_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("clip.json").is_file())
        .collect();
    dirs.sort();
    Ok(dirs)
}

pub fn load_dataset(root: &Path) -> Result<Vec<StoredClip>> {
    let dirs = list_clip_dirs(root)?;
    if dirs.is_empty() {
        return Err(Error::Dataset(format!("no clips under {}", root.display())));
    }
    dirs.iter().map(|d| load_clip(d)).collect()
}

/// PoseTrack-style annotations: `{"images": [{"id", "file_name"}], "annotations":
/// [{"image_id", "keypoints": [x, y, v, ...], "bbox"?: [x, y, w, h]}]}`.
/// 17-point lists (with ears at slots 3 and 4) are reduced to the 15-joint layout.
pub mod posetrack {
    use super::*;

    #[derive(Deserialize)]
    struct Image {
        id: u64,
        file_name: String,
    }

    #[derive(Deserialize)]
    struct Annotation {
        image_id: u64,
        keypoints: Vec<f64>,
        #[serde(default)]
        bbox: Option<[f64; 4]>,
    }

    #[derive(Deserialize)]
    struct File {
        images: Vec<Image>,
        annotations: Vec<Annotation>,
    }

    #[derive(Clone, Debug, PartialEq)]
    pub struct PersonAnnotation {
        pub file_name: String,
        pub pose: PersonPose,
        pub person_box: Option<BBox>,
    }

    pub fn parse(json: &str) -> Result<Vec<PersonAnnotation>> {
        let file: File = serde_json::from_str(json)?;
        file.annotations
            .iter()
            .map(|a| {
                let image = file
                    .images
                    .iter()
                    .find(|i| i.id == a.image_id)
                    .ok_or_else(|| Error::Dataset(format!("annotation refers to unknown image {}", a.image_id)))?;
                if a.keypoints.len() % 3 != 0 {
                    return Err(Error::Dataset("keypoint list length is not a multiple of 3".into()));
                }
                let mut rows: Vec<[f64; 3]> = a.keypoints.chunks_exact(3).map(|c| [c[0], c[1], if c[2] > 0.0 { 1.0 } else { 0.0 }]).collect();
                match rows.len() {
                    15 => {}
                    17 => {
                        rows.drain(3..5);
                    }
                    n => return Err(Error::Dataset(format!("unsupported keypoint count {n}"))),
                }
                let person_box = a.bbox.map(|[x, y, w, h]| BBox { x0: x, y0: y, x1: x + w, y1: y + h });
                Ok(PersonAnnotation { file_name: image.file_name.clone(), pose: PersonPose::from_rows(&rows), person_box })
            })
            .collect()
    }
}
