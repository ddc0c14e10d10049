"""Region-aware GAN inversion: segment, refine per region, edit.

Images are split into in-domain pixels (reconstructable by tuning
generator weights) and out-of-domain pixels (reconstructable only by
optimizing an injected intermediate feature); the two refinements run
side by side under complementary loss masks, and edits replay the latent
walk with both results frozen.
"""

from .benchmark import BenchmarkRow, format_table, render_curve, run_benchmark
from .editing import (EditDirection, apply_direction, edit, load_direction,
                      save_direction, synthetic_direction)
from .embedding import (EmbeddingResult, coarse_invert, embed, lift_to_wplus,
                        load_latent, resolve_encoder, save_latent)
from .errors import (ConfigError, DegenerateRegionError, RefinementDiverged,
                     StageError)
from .generator import (FeatureMap, Grads, LatentCode, LatentSpace, ToyConfig,
                        ToyGenerator)
from .metrics import (EvalRecord, HuberOracle, PointwiseOracle, PyramidOracle,
                      evaluate_dirs, evaluate_pair, make_oracle, mse, psnr)
from .pipeline import (Bundle, InvertResult, RunConfig, config_fingerprint,
                       edit_bundle, invert_image, load_bundle, load_generator,
                       parse_config, run_batch, run_invert, serialize_config)
from .refinement import (GradientSplitReport, RefineConfig, RefinementSession,
                         downsample_mask, gradient_split_check, masked_loss,
                         masked_loss_grad, refine)
from .segmentation import (LossMap, ParsingMask, SegmentationResult,
                           SuperpixelPartition, binarize, fuse,
                           identity_parsing, load_parsing, loss_map,
                           make_parsing, partition_scores, save_parsing,
                           segment, slic_superpixels)
from .storage import (load_image, load_mask, save_image, save_mask)
from .toydata import (ToyInstance, make_instances, noise_patch_instance,
                      reachable_image, sample_latent)

__version__ = "0.1.0"
