use std::fs;
use std::path::{Path, PathBuf};

use super::nifti::{load_nifti, save_nifti, NiftiDtype, NiftiVolume};
use crate::engine::{center_crop_starts, Tensor};
use crate::error::{arg_err, shape_err, Error, Result};

/// Input channel order.
pub const MODALITIES: [&str; 4] = ["t1", "t1ce", "t2", "flair"];
pub const NUM_LABELS: usize = 4;
const STD_FLOOR: f64 = 1e-6;

/// One case: four co-registered modality volumes `(D, H, W)` and a mask with
/// raw labels {0, 1, 2, 4}.
#[derive(Clone, Debug, PartialEq)]
pub struct Subject {
    pub id: String,
    pub modalities: [Tensor<f32>; 4],
    pub mask: Tensor<f32>,
}

impl Subject {
    pub fn extents(&self) -> &[usize] {
        self.mask.shape()
    }

    fn validate(&self) -> Result<()> {
        if self.mask.rank() != 3 {
            return Err(shape_err!("{}: mask must be 3D, got {:?}", self.id, self.mask.shape()));
        }
        for (m, name) in self.modalities.iter().zip(MODALITIES) {
            if m.shape() != self.mask.shape() {
                return Err(shape_err!("{}: {name} extents {:?} differ from mask {:?}", self.id, m.shape(), self.mask.shape()));
            }
        }
        Ok(())
    }
}

/// Network-ready case: `(4, D, H, W)` image and one-hot target.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: Tensor<f32>,
    pub target: Tensor<f32>,
    /// Crop origin in the subject's voxel grid.
    pub crop_starts: Vec<usize>,
}

/// {0, 1, 2, 4} -> {0, 1, 2, 3}.
pub fn remap_label(raw: f32) -> Result<u8> {
    match raw {
        v if v == 0.0 => Ok(0),
        v if v == 1.0 => Ok(1),
        v if v == 2.0 => Ok(2),
        v if v == 4.0 => Ok(3),
        v => Err(Error::Format(format!("unexpected raw label {v}"))),
    }
}

/// `(C, ...)` one-hot encoding of `labels` laid out over `spatial`.
pub fn one_hot(labels: &[u8], spatial: &[usize], classes: usize) -> Result<Tensor<f32>> {
    let sp: usize = spatial.iter().product();
    if labels.len() != sp {
        return Err(shape_err!("{} labels for extents {spatial:?}", labels.len()));
    }
    let mut data = vec![0.0f32; classes * sp];
    for (k, &l) in labels.iter().enumerate() {
        if l as usize >= classes {
            return Err(arg_err!("label {l} out of range for {classes} classes"));
        }
        data[l as usize * sp + k] = 1.0;
    }
    let mut shape = vec![classes];
    shape.extend_from_slice(spatial);
    Tensor::from_vec(&shape, data)
}

/// In-place `(x - mean) / max(std, 1e-6)` with population statistics.
fn z_score(v: &mut [f32]) {
    let n = v.len() as f64;
    let mean = v.iter().map(|&x| x as f64).sum::<f64>() / n;
    let var = v.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt().max(STD_FLOOR);
    v.iter_mut().for_each(|x| *x = ((*x as f64 - mean) / std) as f32);
}

/// Centered crop, per-modality z-score, label remap and one-hot target.
pub fn preprocess_subject(subject: &Subject, crop_to: [usize; 3]) -> Result<Sample> {
    subject.validate()?;
    let starts = center_crop_starts(subject.extents(), &crop_to)?;
    let sp: usize = crop_to.iter().product();
    let mut image = Vec::with_capacity(4 * sp);
    for m in &subject.modalities {
        let mut c = m.crop(&starts, &crop_to)?.into_vec();
        z_score(&mut c);
        image.extend(c);
    }
    let image = Tensor::from_vec(&[4, crop_to[0], crop_to[1], crop_to[2]], image)?;
    let labels = subject
        .mask
        .crop(&starts, &crop_to)?
        .data()
        .iter()
        .map(|&v| remap_label(v))
        .collect::<Result<Vec<u8>>>()
        .map_err(|e| Error::Format(format!("{}: {e}", subject.id)))?;
    Ok(Sample {
        id: subject.id.clone(),
        image,
        target: one_hot(&labels, &crop_to, NUM_LABELS)?,
        crop_starts: starts,
    })
}

fn find_volume(dir: &Path, id: &str, suffix: &str) -> Result<PathBuf> {
    for ext in ["nii.gz", "nii"] {
        let p = dir.join(format!("{id}_{suffix}.{ext}"));
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(Error::Format(format!("{}: missing {id}_{suffix}.nii(.gz)", dir.display())))
}

/// Reads `<dir>/<id>_{t1,t1ce,t2,flair,seg}.nii(.gz)` where `<id>` is the
/// directory name.
pub fn load_subject(dir: impl AsRef<Path>) -> Result<Subject> {
    let dir = dir.as_ref();
    let id = dir
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| arg_err!("bad subject directory {}", dir.display()))?
        .to_string();
    let read = |suffix: &str| -> Result<Tensor<f32>> { load_nifti(find_volume(dir, &id, suffix)?)?.to_tensor() };
    let subject = Subject {
        modalities: [read(MODALITIES[0])?, read(MODALITIES[1])?, read(MODALITIES[2])?, read(MODALITIES[3])?],
        mask: read("seg")?,
        id,
    };
    subject.validate()?;
    Ok(subject)
}

/// Writes a subject in the layout read by [`load_subject`].
pub fn save_subject(subject: &Subject, root: impl AsRef<Path>, gzip: bool) -> Result<PathBuf> {
    subject.validate()?;
    let dir = root.as_ref().join(&subject.id);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let ext = if gzip { "nii.gz" } else { "nii" };
    for (m, name) in subject.modalities.iter().zip(MODALITIES) {
        let vol = NiftiVolume::from_tensor(m, NiftiDtype::F32)?;
        save_nifti(&vol, dir.join(format!("{}_{name}.{ext}", subject.id)))?;
    }
    let seg = NiftiVolume::from_tensor(&subject.mask, NiftiDtype::U8)?;
    save_nifti(&seg, dir.join(format!("{}_seg.{ext}", subject.id)))?;
    Ok(dir)
}

/// Subject directories under `root`, sorted by name.
pub fn list_subject_dirs(root: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let root = root.as_ref();
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Format(format!("no subject directories under {}", root.display())));
    }
    Ok(dirs)
}
