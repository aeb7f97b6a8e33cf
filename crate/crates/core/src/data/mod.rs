//! Volume I/O, preprocessing, augmentation, splitting and synthetic data.

mod augment;
mod nifti;
mod phantom;
mod split;
mod subject;

pub use augment::{
    apply_plan, augment, flip_w, rotate_bilinear, rotate_labels, AugmentPlan, AUGMENT_PROB,
    MAX_ROTATION_DEG, NOISE_STD,
};
pub use nifti::{encode_nifti, load_nifti, parse_nifti, save_nifti, NiftiDtype, NiftiVolume};
pub use phantom::{generate_phantom, phantom_subject, MIN_PHANTOM_SIZE};
pub use split::split_dataset;
pub use subject::{
    list_subject_dirs, load_subject, one_hot, preprocess_subject, remap_label, save_subject,
    Sample, Subject, MODALITIES, NUM_LABELS,
};
