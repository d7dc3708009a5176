"""Run files: one YAML document describing a complete optimization run.

Example::

    dataset: images/kodim01.png     # relative to the run file
    modality: image                 # optional; inferred from the extension
    space: space.yaml               # optional; otherwise every activation on `depth` layers
    output_dir: out/kodim01
    seed: 0
    budget: {n_init: 30, n_iter: 100, epochs: 2000, batch: null}
    acquisition: {samples: 64, candidates: 2048, features: 1024, refine_steps: 2}
    network: {depth: 3, width: 256, pe_bands: 6, output_init: null, max_side: 128}
    gp: {starts: 8, max_evals: 200}

Occupancy runs replace ``dataset`` with an inline shape, e.g.
``dataset: {shape: {type: sphere, radius: 0.5}, resolution: 32}``.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any

from .acquisition import AcquisitionConfig
from .docs import Doc, load_document, parse_document
from .driver import BOSettings
from .errors import ConfigError
from .objectives import (INRObjective, SignalDataset, TrainBudget, load_audio_wav, load_image,
                         make_occupancy)
from .space import SearchSpace, load_space

IMAGE_SUFFIXES = {".png", ".pgm", ".ppm", ".pnm"}
AUDIO_SUFFIXES = {".wav"}
OUTPUT_DIR_ENV = "INRBO_OUTPUT_DIR"

_TOP_LEVEL = {"dataset", "modality", "space", "output_dir", "seed", "budget", "acquisition",
              "network", "gp"}


@dataclass(frozen=True)
class RunFile:
    source: str
    dataset: Any                # Path for file datasets, dict for occupancy shapes
    modality: str
    space_path: Path | None
    output_dir: Path
    seed: int
    n_init: int
    n_iter: int
    budget: TrainBudget
    acquisition: AcquisitionConfig
    depth: int
    max_side: int
    max_samples: int
    resolution: int
    gp_starts: int
    gp_max_evals: int

    def dataset_reference(self) -> Any:
        return str(self.dataset) if isinstance(self.dataset, Path) else self.dataset

    def objective_settings(self) -> dict:
        """Everything that changes the objective, recorded in the log header."""
        data = {"modality": self.modality, "dataset": self.dataset_reference()}
        data.update(self.budget.to_dict())
        if self.modality == "image":
            data["max_side"] = self.max_side
        elif self.modality == "audio":
            data["max_samples"] = self.max_samples
        else:
            data["resolution"] = self.resolution
        return data

    def settings(self) -> BOSettings:
        return BOSettings(n_init=self.n_init, n_iter=self.n_iter, seed=self.seed,
                          acquisition=self.acquisition, gp_starts=self.gp_starts,
                          gp_max_evals=self.gp_max_evals, objective=self.objective_settings())

    def load_space(self) -> SearchSpace:
        if self.space_path is None:
            return SearchSpace.uniform(self.depth)
        space = load_space(self.space_path)
        if space.layer_count != self.depth:
            raise ConfigError(f"space has {space.layer_count} layers but network.depth is {self.depth}",
                              source=self.source, field="network.depth")
        return space

    def load_dataset(self) -> SignalDataset:
        """Read the signal. Unreadable files raise ``OSError`` or ``CorruptFile``."""
        if self.modality == "occupancy":
            return make_occupancy(self.dataset["shape"], self.resolution)
        if self.modality == "audio":
            return load_audio_wav(self.dataset, self.max_samples)
        return load_image(self.dataset, self.max_side)

    def objective(self, dataset: SignalDataset | None = None) -> INRObjective:
        return INRObjective(dataset or self.load_dataset(), self.budget)


def _infer_modality(doc: Doc, dataset: Any) -> str:
    given = doc.get(("modality",), None)
    if given is not None:
        if given not in ("image", "audio", "occupancy"):
            raise doc.error(("modality",), f"must be image, audio or occupancy, got {given!r}")
        return given
    if isinstance(dataset, dict):
        return "occupancy"
    suffix = dataset.suffix.lower()
    if suffix in IMAGE_SUFFIXES:
        return "image"
    if suffix in AUDIO_SUFFIXES:
        return "audio"
    raise doc.error(("dataset",), f"cannot infer modality from extension {suffix!r}; set 'modality'")


def _check_keys(doc: Doc, path: tuple, allowed: set) -> None:
    node = doc.get(path, {}) if path else doc.data
    if node is None:
        return
    if not isinstance(node, dict):
        raise doc.error(path, "expected a mapping")
    for key in node:
        if key not in allowed:
            raise doc.error(path + (key,), f"unknown field (allowed: {', '.join(sorted(allowed))})")


def runfile_from_doc(doc: Doc, base_dir: Path, check_files: bool = True) -> RunFile:
    if not isinstance(doc.data, dict):
        raise doc.error((), "run file must be a mapping")
    _check_keys(doc, (), _TOP_LEVEL)
    _check_keys(doc, ("budget",), {"n_init", "n_iter", "epochs", "batch"})
    _check_keys(doc, ("acquisition",), {"samples", "candidates", "features", "refine_steps",
                                        "refine_step_size", "workers"})
    _check_keys(doc, ("network",), {"depth", "width", "pe_bands", "output_init", "max_side",
                                    "max_samples", "resolution", "dtype"})
    _check_keys(doc, ("gp",), {"starts", "max_evals"})

    raw_dataset = doc.get(("dataset",))
    if isinstance(raw_dataset, dict):
        if "shape" not in raw_dataset or not isinstance(raw_dataset["shape"], dict):
            raise doc.error(("dataset", "shape"), "occupancy dataset needs a 'shape' mapping")
        dataset: Any = raw_dataset
    elif isinstance(raw_dataset, str):
        dataset = (base_dir / raw_dataset).resolve()
        if check_files and not dataset.is_file():
            raise doc.error(("dataset",), f"dataset file not found: {dataset}")
    else:
        raise doc.error(("dataset",), "expected a file path or an occupancy mapping")
    modality = _infer_modality(doc, dataset)
    if (modality == "occupancy") != isinstance(dataset, dict):
        raise doc.error(("modality",), f"modality {modality!r} does not match the dataset entry")

    space_path = None
    raw_space = doc.get(("space",), None)
    if raw_space is not None:
        space_path = (base_dir / str(raw_space)).resolve()
        if check_files and not space_path.is_file():
            raise doc.error(("space",), f"space file not found: {space_path}")
    output_dir = (base_dir / str(doc.get(("output_dir",), "inrbo_out"))).resolve()

    batch = doc.get(("budget", "batch"), None)
    if batch is not None:
        batch = doc.number(("budget", "batch"), integer=True, minimum=1)
    output_init = doc.get(("network", "output_init"), None)
    if output_init is not None:
        output_init = float(doc.number(("network", "output_init"), positive=True))
    dtype = doc.get(("network", "dtype"), "float32")
    if dtype not in ("float32", "float64"):
        raise doc.error(("network", "dtype"), f"must be float32 or float64, got {dtype!r}")
    budget = TrainBudget(
        epochs=doc.number(("budget", "epochs"), 2000, integer=True, minimum=1),
        batch=batch,
        width=doc.number(("network", "width"), 256, integer=True, minimum=1),
        pe_bands=doc.number(("network", "pe_bands"), 6, integer=True, minimum=0),
        output_init_halfwidth=output_init, dtype=dtype, modality=modality)
    acq = AcquisitionConfig(
        sample_count=doc.number(("acquisition", "samples"), 64, integer=True, minimum=1),
        candidate_count=doc.number(("acquisition", "candidates"), 2048, integer=True, minimum=1),
        feature_count=doc.number(("acquisition", "features"), 1024, integer=True, minimum=1),
        refine_steps=doc.number(("acquisition", "refine_steps"), 2, integer=True, minimum=0),
        refine_step_size=float(doc.number(("acquisition", "refine_step_size"), 0.1, positive=True,
                                          maximum=1.0)),
        workers=doc.number(("acquisition", "workers"), 1, integer=True, minimum=1))
    return RunFile(
        source=doc.source, dataset=dataset, modality=modality, space_path=space_path,
        output_dir=output_dir,
        seed=doc.number(("seed",), 0, integer=True, minimum=0),
        n_init=doc.number(("budget", "n_init"), 30, integer=True, minimum=2),
        n_iter=doc.number(("budget", "n_iter"), 100, integer=True, minimum=0),
        budget=budget, acquisition=acq,
        depth=doc.number(("network", "depth"), 3, integer=True, minimum=1),
        max_side=doc.number(("network", "max_side"), 128, integer=True, minimum=1),
        max_samples=doc.number(("network", "max_samples"), 16000, integer=True, minimum=1),
        resolution=doc.number(("network", "resolution"), 32, integer=True, minimum=1, maximum=64),
        gp_starts=doc.number(("gp", "starts"), 8, integer=True, minimum=1),
        gp_max_evals=doc.number(("gp", "max_evals"), 200, integer=True, minimum=1),
    )


def load_runfile(path: str | Path, check_files: bool = True) -> RunFile:
    path = Path(path)
    return runfile_from_doc(load_document(path), path.resolve().parent, check_files)


def parse_runfile(text: str, base_dir: str | Path = ".", source: str = "<string>",
                  check_files: bool = True) -> RunFile:
    return runfile_from_doc(parse_document(text, source), Path(base_dir).resolve(), check_files)


def apply_overrides(run: RunFile, *, n_init=None, n_iter=None, seed=None, epochs=None,
                    workers=None, output_dir=None) -> RunFile:
    """Command-line values shadow the run file; ``None`` leaves a field alone."""
    if n_init is not None:
        if n_init < 2:
            raise ConfigError("must be at least 2", source="--n-init")
        run = replace(run, n_init=n_init)
    if n_iter is not None:
        if n_iter < 0:
            raise ConfigError("must be non-negative", source="--n-iter")
        run = replace(run, n_iter=n_iter)
    if seed is not None:
        run = replace(run, seed=seed)
    if epochs is not None:
        if epochs < 1:
            raise ConfigError("must be at least 1", source="--epochs")
        run = replace(run, budget=replace(run.budget, epochs=epochs))
    if workers is not None:
        if workers < 1:
            raise ConfigError("must be at least 1", source="--workers")
        run = replace(run, acquisition=replace(run.acquisition, workers=workers))
    if output_dir is not None:
        run = replace(run, output_dir=Path(output_dir).resolve())
    return run


__all__ = ["OUTPUT_DIR_ENV", "RunFile", "apply_overrides", "load_runfile", "parse_runfile",
           "runfile_from_doc"]
