"""Dataset manifests, PPM images, preprocessing, splits and synthetic scenes."""
from .dataset import (ImageSet, class_distribution, iterate_batches, load_image_set, load_images,
                      scene_distribution, split_dataset, write_distribution_csv)
from .labels import (LEVEL_ENGLISH, NUM_LEVELS, LevelLabel, ManifestRecord, SceneLabel, load_manifest,
                     write_manifest)
from .ppm import decode_image, read_ppm, write_pgm, write_ppm
from .synth import synth_dataset, synth_images
from .transforms import NormStats, augment, hflip, preprocess, resize_bilinear

__all__ = [
    "ImageSet", "LEVEL_ENGLISH", "LevelLabel", "ManifestRecord", "NUM_LEVELS", "NormStats", "SceneLabel",
    "augment", "class_distribution", "decode_image", "hflip", "iterate_batches", "load_image_set",
    "load_images", "load_manifest", "preprocess", "read_ppm", "resize_bilinear", "scene_distribution",
    "split_dataset", "synth_dataset", "synth_images", "write_distribution_csv", "write_manifest",
    "write_pgm", "write_ppm",
]
