//! Masked copy-paste augmentation: a library of masked object crops
//! is pasted, size-matched and gradient-blended, onto pseudo-labeled
//! images, producing merged true-plus-pseudo label files.

mod augment;
mod library;

pub use augment::{
    augment_dataset, augment_image, AugmentConfig, AugmentRunReport, AugmentationRecord,
    ImageFailure, PasteRecord, SkipRecord,
};
pub use library::{build_crop_library, CropAsset, CropLibraryReport, ExcludedCrop};
