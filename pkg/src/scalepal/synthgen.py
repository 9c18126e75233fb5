"""Synthetic sweeps generated from known laws, used as ground truth for fits."""

import json
import logging
import math
from collections import OrderedDict
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from scalepal.constants import MAX_EXPERTS, MIN_KNOB_VALUES, RNG_ALGORITHM, SIX_PD_FACTOR
from scalepal.exceptions import InputFileNotFound, InvalidCoefficients, InvalidSpec, ParseError
from scalepal.file_utils import PathLike, text_digest
from scalepal.hparam_scaling import Heatmap
from scalepal.loss_laws import (
    COEFFICIENT_TYPES,
    LawCoefficients,
    LawName,
    predict,
)
from scalepal.models import Knob, LossKind, Provenance, RunSet, TrainingRecord

logger = logging.getLogger(__name__)

DEFAULT_BATCH_SIZE = 256
DEFAULT_SEQ_LEN = 2048
DEFAULT_LEARNING_RATE = 3e-4
DEFAULT_CURVATURE = 0.5

# Stream offsets keep run noise and each heatmap on separate generators
HEATMAP_STREAMS = {Knob.BATCH_SIZE: 1, Knob.LEARNING_RATE: 2}


class NoiseModel(Enum):
    """Noise applied to generated losses."""

    NONE = "none"
    LOGNORMAL = "lognormal"


@dataclass(frozen=True)
class PlantedLaw:
    """knob_opt = lam / L**alpha."""

    lam: float
    alpha: float

    def knob_at(self, loss: float) -> float:
        """Optimal knob value at a loss."""
        return self.lam / loss ** self.alpha


@dataclass(frozen=True)
class SynthSpec:
    """Everything needed to generate a synthetic sweep."""

    coefficients: LawCoefficients
    scales: Tuple[float, ...]
    tokens: Tuple[float, ...]
    experts: Tuple[int, ...] = (1,)
    noise: NoiseModel = NoiseModel.NONE
    sigma_log: float = 0.0
    seed: int = 0
    batch_size: int = DEFAULT_BATCH_SIZE
    seq_len: int = DEFAULT_SEQ_LEN
    learning_rate: float = DEFAULT_LEARNING_RATE
    bopt_law: Optional[PlantedLaw] = None
    epsopt_law: Optional[PlantedLaw] = None
    batch_grid: Tuple[float, ...] = ()
    lr_grid: Tuple[float, ...] = ()
    token_levels: Tuple[float, ...] = ()
    curvature: float = DEFAULT_CURVATURE
    run_prefix: str = "synth"

    def __post_init__(self):
        """Validate grids and noise settings."""
        _check_grid("scales", self.scales)
        _check_grid("tokens", self.tokens, increasing=True)
        if not self.experts:
            raise InvalidSpec("experts", "must not be empty")
        for experts in self.experts:
            if experts < 1 or int(experts) != experts:
                raise InvalidSpec("experts", f"must be integers >= 1, got {experts}")
            if self.law is LawName.MOE and experts >= MAX_EXPERTS:
                raise InvalidSpec("experts", f"must be below {MAX_EXPERTS} for the moe law")
        if not self.sigma_log >= 0 or math.isinf(self.sigma_log):
            raise InvalidSpec("sigma_log", "must be a finite non-negative number")
        if self.batch_size < 1 or self.seq_len < 1 or not self.learning_rate > 0:
            raise InvalidSpec("batch_size", "batch_size, seq_len and learning_rate must be positive")
        if self.token_levels:
            _check_grid("token_levels", self.token_levels)
        if not self.curvature > 0:
            raise InvalidSpec("curvature", "must be positive")

    @property
    def law(self) -> LawName:
        """The law the coefficients belong to."""
        return self.coefficients.law

    @property
    def levels(self) -> Tuple[float, ...]:
        """Token levels of generated heatmaps."""
        return self.token_levels or self.tokens


def _check_grid(name: str, values: Sequence[float], increasing: bool = False) -> None:
    if not len(values):
        raise InvalidSpec(name, "must not be empty")
    array = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(array)) or np.any(array <= 0):
        raise InvalidSpec(name, "values must be finite and positive")
    if increasing and np.any(np.diff(array) <= 0):
        raise InvalidSpec(name, "values must be strictly increasing")


def _loss(spec: SynthSpec, scale: float, tokens: float, experts: int) -> float:
    return float(predict(spec.coefficients, scale, tokens, experts))


def _record_fields(spec: SynthSpec, scale: float, tokens: float) -> Dict[str, float]:
    """Scale-related fields of a generated record, consistent with C = N * D."""
    if spec.law in (LawName.CLARK, LawName.QUADRATIC):
        params = scale
        model_scale = SIX_PD_FACTOR * scale
    else:
        params = scale / SIX_PD_FACTOR
        model_scale = scale
    return {"params": params, "model_scale": model_scale, "flops": model_scale * tokens}


def generate_runs(spec: SynthSpec) -> RunSet:
    """
    Generate one run per (scale, experts) pair.

    Loss is the law's prediction times exp(noise), with noise drawn in record
    order from numpy's PCG64 generator seeded with spec.seed.

    Args:
        spec: The sweep to generate.

    Returns:
        A RunSet in the canonical schema.
    """
    rng = np.random.default_rng(spec.seed)
    pairs = [(s, e) for s in spec.scales for e in spec.experts]
    total = len(pairs) * len(spec.tokens)
    if spec.noise is NoiseModel.LOGNORMAL and spec.sigma_log > 0:
        noise = rng.normal(0.0, spec.sigma_log, size=total)
    else:
        noise = None

    records: List[TrainingRecord] = []
    index = 0
    for run_index, (scale, experts) in enumerate(pairs):
        run_id = f"{spec.run_prefix}-{run_index:03d}-s{scale:.4g}-e{experts}"
        for step, tokens in enumerate(spec.tokens, start=1):
            loss = _loss(spec, scale, tokens, experts)
            if noise is not None:
                loss = loss * math.exp(noise[index])
            index += 1
            records.append(
                TrainingRecord(
                    run_id=run_id,
                    step=step,
                    tokens=float(tokens),
                    loss=loss,
                    experts=int(experts),
                    batch_size=spec.batch_size,
                    seq_len=spec.seq_len,
                    learning_rate=spec.learning_rate,
                    loss_kind=LossKind.TRAIN,
                    **_record_fields(spec, scale, tokens),
                )
            )

    provenance = Provenance(
        digest=text_digest(json.dumps(spec_to_dict(spec), sort_keys=True)),
        source=f"synthgen:{RNG_ALGORITHM}:seed={spec.seed}",
    )
    logger.info("generated %d records in %d runs", len(records), len(pairs))
    return RunSet.from_records(records, provenance)


def generate_heatmap(spec: SynthSpec, knob: Union[Knob, str]) -> Heatmap:
    """
    Generate iso-token contours with a planted optimum.

    On each token level the base loss is the law at the first scale and
    expert count; loss = base + curvature * (log knob - log knob_opt)**2,
    times exp(noise), where knob_opt follows the planted law in the base loss.

    Raises:
        InvalidSpec: If the planted law or knob grid for the knob is missing.
    """
    knob = Knob(knob) if isinstance(knob, str) else knob
    if spec.law in (LawName.CLARK, LawName.QUADRATIC):
        raise InvalidSpec("coefficients", "heatmaps need a law with a token term")
    if knob is Knob.BATCH_SIZE:
        planted, grid, names = spec.bopt_law, spec.batch_grid, ("bopt_law", "batch_grid")
    else:
        planted, grid, names = spec.epsopt_law, spec.lr_grid, ("epsopt_law", "lr_grid")
    if planted is None:
        raise InvalidSpec(names[0], f"is required for a {knob.value} heatmap")
    _check_grid(names[1], grid, increasing=True)
    if len(grid) < MIN_KNOB_VALUES:
        raise InvalidSpec(names[1], f"needs at least {MIN_KNOB_VALUES} values")

    rng = np.random.default_rng([spec.seed, HEATMAP_STREAMS[knob]])
    noisy = spec.noise is NoiseModel.LOGNORMAL and spec.sigma_log > 0
    log_grid = np.log(np.asarray(grid, dtype=float))

    heat: Heatmap = OrderedDict()
    for level in spec.levels:
        base = _loss(spec, spec.scales[0], level, spec.experts[0])
        log_opt = math.log(planted.knob_at(base))
        losses = base + spec.curvature * (log_grid - log_opt) ** 2
        if noisy:
            losses = losses * np.exp(rng.normal(0.0, spec.sigma_log, size=len(grid)))
        heat[float(level)] = [(float(k), float(l)) for k, l in zip(grid, losses)]
    return heat


def simulate_gradient_norms(
    grad_norm_sq: float,
    trace_sigma: float,
    batch_sizes: Sequence[int],
    samples: int,
    dimension: int = 100,
    seed: int = 0,
) -> List[Tuple[float, float]]:
    """
    Simulate mean squared batch-gradient norms.

    Per-example gradients are a fixed mean vector with |G|^2 = grad_norm_sq
    plus isotropic noise with total variance trace_sigma. A batch mean of B
    such gradients is drawn directly as G + N(0, trace_sigma / (dimension * B)).

    Args:
        grad_norm_sq: Planted |G|^2.
        trace_sigma: Planted tr(Sigma).
        batch_sizes: Batch sizes to measure at.
        samples: Batch gradients drawn per batch size.
        dimension: Gradient dimension.
        seed: Generator seed.

    Returns:
        (batch size, mean |G_B|^2) per batch size.
    """
    if grad_norm_sq < 0 or trace_sigma < 0:
        raise InvalidSpec("gradient", "grad_norm_sq and trace_sigma must be non-negative")
    if samples < 1 or dimension < 1:
        raise InvalidSpec("samples", "samples and dimension must be positive")
    rng = np.random.default_rng(seed)
    mean = np.full(dimension, math.sqrt(grad_norm_sq / dimension))
    rows = []
    for batch in batch_sizes:
        if batch < 1:
            raise InvalidSpec("batch_sizes", "must be at least 1")
        scale = math.sqrt(trace_sigma / (dimension * batch))
        draws = mean + rng.normal(0.0, scale, size=(samples, dimension))
        rows.append((float(batch), float(np.mean(np.sum(draws ** 2, axis=1)))))
    return rows


# Spec documents


def _grid(document: Mapping[str, object], name: str, required: bool = True) -> Tuple[float, ...]:
    value = document.get(name)
    if value is None:
        if required:
            raise InvalidSpec(name, "is required")
        return ()
    if isinstance(value, Mapping):
        try:
            start, stop, count = float(value["start"]), float(value["stop"]), int(value["count"])
        except (KeyError, TypeError, ValueError):
            raise InvalidSpec(name, "a grid object needs numeric start, stop and count")
        if not 0 < start < stop or count < 2:
            raise InvalidSpec(name, "a grid object needs 0 < start < stop and count >= 2")
        return tuple(float(v) for v in np.logspace(math.log10(start), math.log10(stop), count))
    if isinstance(value, (list, tuple)):
        try:
            return tuple(float(v) for v in value)
        except (TypeError, ValueError):
            raise InvalidSpec(name, "values must be numbers")
    raise InvalidSpec(name, "must be a list or a {start, stop, count} object")


def _planted(document: Mapping[str, object], name: str) -> Optional[PlantedLaw]:
    value = document.get(name)
    if value is None:
        return None
    try:
        return PlantedLaw(lam=float(value["lambda"]), alpha=float(value["alpha"]))  # type: ignore[index]
    except (KeyError, TypeError, ValueError):
        raise InvalidSpec(name, "needs numeric 'lambda' and 'alpha'")


def spec_from_dict(document: Mapping[str, object]) -> SynthSpec:
    """
    Build a SynthSpec from a JSON document.

    Raises:
        InvalidSpec: Naming the first missing or invalid field.
    """
    if not isinstance(document, Mapping):
        raise InvalidSpec("spec", "must be a JSON object")
    try:
        law = LawName(document.get("law", ""))
    except ValueError:
        raise InvalidSpec("law", f"must be one of {[l.value for l in LawName]}")
    values = document.get("coefficients")
    if not isinstance(values, Mapping):
        raise InvalidSpec("coefficients", "is required")
    cls = COEFFICIENT_TYPES[law]
    missing = [name for name in cls.names if name not in values]
    if missing:
        raise InvalidSpec("coefficients", f"missing {', '.join(missing)}")
    try:
        coefficients = cls(**{name: float(values[name]) for name in cls.names})
    except (TypeError, ValueError, InvalidCoefficients) as e:
        raise InvalidSpec("coefficients", str(e))

    noise_doc = document.get("noise", "none")
    if isinstance(noise_doc, Mapping):
        model, sigma_log = noise_doc.get("model", "lognormal"), noise_doc.get("sigma_log", 0.0)
    else:
        model, sigma_log = noise_doc, 0.0
    try:
        noise = NoiseModel(model)
        sigma_log = float(sigma_log)  # type: ignore[arg-type]
    except (TypeError, ValueError):
        raise InvalidSpec("noise", "model must be 'none' or 'lognormal' with a numeric sigma_log")

    hparams = document.get("hparams") or {}
    if not isinstance(hparams, Mapping):
        raise InvalidSpec("hparams", "must be a JSON object")

    try:
        return SynthSpec(
            coefficients=coefficients,
            scales=_grid(document, "scales"),
            tokens=_grid(document, "tokens"),
            experts=tuple(int(e) for e in document.get("experts", [1])),  # type: ignore[union-attr]
            noise=noise,
            sigma_log=sigma_log,
            seed=int(document.get("seed", 0)),  # type: ignore[arg-type]
            batch_size=int(document.get("batch_size", DEFAULT_BATCH_SIZE)),  # type: ignore[arg-type]
            seq_len=int(document.get("seq_len", DEFAULT_SEQ_LEN)),  # type: ignore[arg-type]
            learning_rate=float(document.get("learning_rate", DEFAULT_LEARNING_RATE)),  # type: ignore[arg-type]
            bopt_law=_planted(hparams, "bopt_law"),
            epsopt_law=_planted(hparams, "epsopt_law"),
            batch_grid=_grid(hparams, "batch_grid", required=False),
            lr_grid=_grid(hparams, "lr_grid", required=False),
            token_levels=_grid(hparams, "token_levels", required=False),
            curvature=float(hparams.get("curvature", DEFAULT_CURVATURE)),  # type: ignore[arg-type]
            run_prefix=str(document.get("run_prefix", "synth")),
        )
    except (TypeError, ValueError) as e:
        raise InvalidSpec("spec", str(e))


def load_spec(path: PathLike) -> SynthSpec:
    """Read a SynthSpec JSON file."""
    try:
        with open(path, "r", encoding="utf-8") as handle:
            document = json.load(handle)
    except FileNotFoundError:
        raise InputFileNotFound(str(path))
    except json.JSONDecodeError as e:
        raise ParseError(f"cannot parse '{path}' as JSON: {e}")
    return spec_from_dict(document)


def spec_to_dict(spec: SynthSpec) -> Dict[str, object]:
    """Describe a SynthSpec as a JSON document accepted by spec_from_dict."""
    document: Dict[str, object] = {
        "law": spec.law.value,
        "coefficients": {name: getattr(spec.coefficients, name) for name in spec.coefficients.names},
        "scales": list(spec.scales),
        "tokens": list(spec.tokens),
        "experts": list(spec.experts),
        "noise": {"model": spec.noise.value, "sigma_log": spec.sigma_log},
        "seed": spec.seed,
        "batch_size": spec.batch_size,
        "seq_len": spec.seq_len,
        "learning_rate": spec.learning_rate,
        "run_prefix": spec.run_prefix,
        "rng": RNG_ALGORITHM,
    }
    hparams: Dict[str, object] = {"curvature": spec.curvature}
    if spec.bopt_law:
        hparams["bopt_law"] = {"lambda": spec.bopt_law.lam, "alpha": spec.bopt_law.alpha}
    if spec.epsopt_law:
        hparams["epsopt_law"] = {"lambda": spec.epsopt_law.lam, "alpha": spec.epsopt_law.alpha}
    for name in ("batch_grid", "lr_grid", "token_levels"):
        if getattr(spec, name):
            hparams[name] = list(getattr(spec, name))
    document["hparams"] = hparams
    return document
