"""Synthetic whole-slide data: geometry, slide generation, splits and label noise."""
from .geometry import clip_to_rect, compute_coverage, coverage_grid, shoelace_area, union_area
from .noise import NoiseSpec, apply_noise, inject_border_noise, inject_uniform_noise
from .sampling import balanced_batches, shuffled_batches
from .slides import (
    EXCLUDED,
    CenterProfile,
    DataConfig,
    Dataset,
    SlideSpec,
    center_profiles,
    generate_dataset,
    generate_slide,
    label_tiles,
)
from .splits import PARTITIONS, SplitSpec, make_split
