from .masking import (DEFAULT_UNIT_PX, MaskSpec, UniformSample, mask_count, random_mask,
                      stack_masks, stack_samples, uniform_sample)
from .reconstruction import compose_panels, emit_reconstruction
from .simmim import SimMIM, SimMIMHead, pixel_mask_from_units, simmim_loss
from .ummae import (UMMAE, UMMAEDecoder, compact_reorganize, loss_units, patchify,
                    scatter_compact_units, ummae_loss, unpatchify)

__all__ = [
    "DEFAULT_UNIT_PX", "MaskSpec", "SimMIM", "SimMIMHead", "UMMAE", "UMMAEDecoder",
    "UniformSample", "compact_reorganize", "compose_panels", "emit_reconstruction", "loss_units",
    "mask_count", "patchify", "pixel_mask_from_units", "random_mask", "scatter_compact_units",
    "simmim_loss", "stack_masks", "stack_samples", "ummae_loss", "uniform_sample", "unpatchify",
]
