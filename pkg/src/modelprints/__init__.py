"""Fingerprints of synthetic image generators, extracted from sets of samples.

A generative process leaves a stable high-frequency trace on everything it
produces. This package plants such traces in a controlled synthetic zoo,
recovers them two ways (averaged residuals and a contrastively trained set
encoder), and quantifies how distinct, attributable, and clusterable the
recovered fingerprints are.
"""

from .ablation import stability_ablation
from .attribution import (AttributionResult, binary_auc, evaluate_attribution,
                          kfold_attribution, macro_auc,
                          train_attribution_classifier)
from .autodiff import Tensor, backward, forward_op
from .clustering import (Dendrogram, adjusted_rand_index, cut_at_k,
                         dendrogram_coordinates, hierarchical_cluster)
from .correlation import (CorrelationMatrix, abs_pearson, correlation_matrix,
                          decorrelation_score, fingerprint_distance_matrix,
                          separation)
from .dataio import (RunConfig, load_config, read_archive, read_checkpoint,
                     read_manifest, write_archive, write_checkpoint,
                     write_manifest)
from .encoder import (Bag, Embedding, ModelFingerprint, SetEncoder,
                      contrastive_batch_loss, model_fingerprint, pair_distance,
                      set_encode, train_encoder)
from .optim import Adam
from .residuals import median3, prnu_fingerprint, residual
from .zoo import (SyntheticModelSpec, ZooManifest, apply_band, build_zoo,
                  generate_dataset, highband_mask, ring_masks, sample_image,
                  sample_model_images, sector_masks, smooth_base)

__version__ = "0.1.0"

__all__ = [
    "Adam", "AttributionResult", "Bag", "CorrelationMatrix", "Dendrogram",
    "Embedding", "ModelFingerprint", "RunConfig", "SetEncoder",
    "SyntheticModelSpec", "Tensor", "ZooManifest", "abs_pearson",
    "adjusted_rand_index", "apply_band", "backward", "binary_auc", "build_zoo",
    "contrastive_batch_loss", "correlation_matrix", "cut_at_k",
    "decorrelation_score", "dendrogram_coordinates", "evaluate_attribution",
    "fingerprint_distance_matrix", "forward_op", "generate_dataset",
    "hierarchical_cluster", "highband_mask", "kfold_attribution", "load_config",
    "macro_auc", "median3", "model_fingerprint", "pair_distance",
    "prnu_fingerprint", "read_archive", "read_checkpoint", "read_manifest",
    "residual", "ring_masks", "sample_image", "sample_model_images", "sector_masks",
    "separation", "set_encode",
    "smooth_base", "stability_ablation", "train_attribution_classifier",
    "train_encoder", "write_archive", "write_checkpoint", "write_manifest",
]
