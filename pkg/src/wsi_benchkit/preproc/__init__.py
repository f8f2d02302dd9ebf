from .tile import Patch, tile
from .macenko import DEFAULT_REFERENCE, StainProfile, macenko_fit, macenko_normalise
from .augment import AUGMENTATION_KINDS, AugmentationSpec, apply_augmentation, sample_spec
from .embed import RandomProjectionEmbedder
from .cache import FeatureCacheReader, build_feature_cache, write_cache

__all__ = [
    "Patch", "tile",
    "DEFAULT_REFERENCE", "StainProfile", "macenko_fit", "macenko_normalise",
    "AUGMENTATION_KINDS", "AugmentationSpec", "apply_augmentation", "sample_spec",
    "RandomProjectionEmbedder",
    "FeatureCacheReader", "build_feature_cache", "write_cache",
]
