"""Per-image model adaptation.

Three strategies over an externally trained base model:

* finetune: extract training pairs from the test image's own pyramid and
  run the normal trainer on them at a fixed 1e-4 learning rate.
* finetune_augmented: mix the internal pairs with pairs from supplied
  similar external images before finetuning.
* select_model: rank a pool of stored (typically already-adapted) models
  by how well each restores the input image from a further-downscaled
  copy, and super-resolve with the best one(s). Cheap where finetuning is
  expensive, and usable when the image is too small to mine for examples.

The probe score uses the same psnr/shave code path as final evaluation.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint
from .data import PyramidSpec, build_external_set, extract_internal_examples
from .errors import ConfigError, NoExamplesError
from .imageops import bicubic_resize, modcrop, psnr
from .pipeline import SROptions, superresolve
from .train import TrainConfig, finetune_config, train

FINETUNE_LR = 1e-4


@dataclass
class AdaptResult:
    checkpoint: Checkpoint
    pairs_used: int
    warning: str | None = None


def image_id(img: np.ndarray) -> str:
    """Stable short identity for provenance tags."""
    return hashlib.sha256(np.ascontiguousarray(img).tobytes()).hexdigest()[:12]


def finetune(
    base: Checkpoint,
    lr_image: np.ndarray,
    scale: int,
    pyramid: PyramidSpec,
    epochs: int,
    *,
    cfg: TrainConfig | None = None,
    seed: int = 0,
    source_id: str | None = None,
) -> AdaptResult:
    """Adapt `base` to the internal examples of one image.

    epochs=0 returns the base checkpoint itself. An image too small to
    yield a single pair also returns the base, with a warning set. The
    base checkpoint is never mutated.
    """
    if epochs == 0:
        return AdaptResult(base, 0)
    try:
        pairs = extract_internal_examples(lr_image, pyramid, scale)
    except NoExamplesError as err:
        return AdaptResult(base, 0, warning=str(err))
    return _run_finetune(base, pairs, epochs, cfg, seed,
                         source_id or image_id(lr_image), "finetune")


def finetune_augmented(
    base: Checkpoint,
    lr_image: np.ndarray,
    scale: int,
    pyramid: PyramidSpec,
    external: list[np.ndarray],
    epochs: int,
    *,
    cfg: TrainConfig | None = None,
    seed: int = 0,
    source_id: str | None = None,
) -> AdaptResult:
    """Finetune on internal pairs mixed with pairs from similar images.

    With an empty external list this is exactly `finetune` (same seed,
    same shuffling). The external pairs are cut at the same target scale
    and stride as the internal ones.
    """
    if epochs == 0:
        return AdaptResult(base, 0)
    try:
        pairs = extract_internal_examples(lr_image, pyramid, scale)
    except NoExamplesError as err:
        pairs = []
        internal_warning = str(err)
    else:
        internal_warning = None
    if external:
        pairs = pairs + build_external_set(
            external, scales=(scale,), stride=pyramid.stride,
            augment=False, seed=seed,
        )
    if not pairs:
        return AdaptResult(base, 0, warning=internal_warning or "no training pairs")
    return _run_finetune(base, pairs, epochs, cfg, seed,
                         source_id or image_id(lr_image), "finetune+augment")


def _run_finetune(base, pairs, epochs, cfg, seed, source_id, mode) -> AdaptResult:
    net = base.network()
    fcfg = finetune_config(cfg or TrainConfig(), epochs, seed)
    meta = dict(base.metadata)
    meta.update({"adapted_to": source_id, "adaptation": mode,
                 "finetune_epochs": str(epochs)})
    result = train(net, pairs, fcfg, metadata=meta)
    return AdaptResult(result.checkpoint, len(pairs))


@dataclass
class PoolEntry:
    model_id: str
    checkpoint: Checkpoint
    provenance: str = ""


@dataclass
class ModelPool:
    entries: list[PoolEntry] = field(default_factory=list)

    def __post_init__(self):
        ids = [e.model_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ConfigError("pool model_ids must be unique")

    def get(self, model_id: str) -> PoolEntry:
        for e in self.entries:
            if e.model_id == model_id:
                return e
        raise ConfigError(f"no pool entry {model_id!r}")


@dataclass
class ModelScore:
    model_id: str
    probe_psnr: float


@dataclass
class SelectionReport:
    ranking: list[ModelScore]  # descending probe psnr, ties by model_id
    chosen: list[str]
    scale: int


def probe_feasible(lr_image: np.ndarray, scale: int) -> bool:
    crop = modcrop(lr_image, scale)
    return min(crop.shape) >= 2 * scale + 1 and min(crop.shape) // scale >= 3


def select_model(
    pool: ModelPool, lr_image: np.ndarray, scale: int, top_k: int = 1
) -> SelectionReport:
    """Rank pool models by input-restoration quality.

    The probe downscales the input by 1/scale, super-resolves it back
    with every model, and scores against the input itself, which serves
    as ground truth at the probe level. No HR data is touched.
    """
    if not pool.entries:
        raise ConfigError("model pool is empty")
    if top_k < 1:
        raise ConfigError(f"top_k must be >= 1, got {top_k}")
    if not probe_feasible(lr_image, scale):
        raise ConfigError(
            f"image {lr_image.shape} is too small to probe at x{scale}; "
            "adapt by finetuning instead"
        )
    gt = modcrop(lr_image, scale)
    probe = bicubic_resize(gt, 1.0 / scale)
    opts = SROptions(scale=scale)
    scores = []
    for entry in pool.entries:
        sr = superresolve(entry.checkpoint, probe, opts)
        scores.append(ModelScore(entry.model_id, psnr(gt, sr, shave=scale)))
    ranking = sorted(scores, key=lambda s: (-s.probe_psnr, s.model_id))
    chosen = [s.model_id for s in ranking[: min(top_k, len(ranking))]]
    return SelectionReport(ranking, chosen, scale)


# --- pool manifest I/O ------------------------------------------------------

def save_pool_manifest(path: str | Path, entries: list[tuple[str, str, str]]) -> None:
    """Write lines of model_id<TAB>checkpoint_path<TAB>provenance."""
    with open(path, "w") as fh:
        for model_id, ckpt_path, provenance in entries:
            fh.write(f"{model_id}\t{ckpt_path}\t{provenance}\n")


def load_pool(path: str | Path) -> ModelPool:
    """Read a pool manifest; relative checkpoint paths resolve next to it."""
    base_dir = Path(path).parent
    entries = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) < 2:
            raise ConfigError(f"bad pool manifest line: {line!r}")
        model_id, ckpt_path = parts[0], parts[1]
        provenance = parts[2] if len(parts) > 2 else ""
        p = Path(ckpt_path)
        if not p.is_absolute():
            p = base_dir / p
        entries.append(PoolEntry(model_id, Checkpoint.load(p), provenance))
    return ModelPool(entries)


def write_selection_csv(path: str | Path, report: SelectionReport) -> None:
    """Selection report CSV, schema selection-v1."""
    with open(path, "w") as fh:
        fh.write("# projsr-csv selection-v1\n")
        fh.write("rank,model_id,probe_psnr_db,chosen\n")
        for rank, s in enumerate(report.ranking, start=1):
            chosen = int(s.model_id in report.chosen)
            fh.write(f"{rank},{s.model_id},{s.probe_psnr:.6f},{chosen}\n")
