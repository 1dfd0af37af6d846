"""Labeled measurement datasets: probe sweeps over random networks, on disk.

A dataset is a directory holding ``manifest.json`` (the full generation
configuration), ``train.jsonl`` and ``test.jsonl``.  Each line of the record
files is one network draw: the atom count and coordinates, the environment
couplings, and the 400 output-probe occupation probabilities measured at the
end of the transport window (probe 1's 200 sweep positions first, then probe
2's).

Records are pure functions of (configuration, split, record index): seeds for
the box layout, the background gas and the probe Rabi draw are all derived
from that triple (see :mod:`.seeding`).  Generation is therefore resumable
mid-file, parallelisable across worker processes, and byte-stable: the same
configuration always produces identical files.
"""

from __future__ import annotations

import json
import hashlib
import multiprocessing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .geometry import (DEFAULT_MIN_SEPARATION, BoxLayout, probe_trajectory,
                       realization_positions, sample_box_layout)
from .physics import (EnvironmentRealization, PhysicalConstants,
                      interaction_matrix, rescale_decoherence,
                      sample_environment, from_mhz)
from .dynamics import (PropagationSettings, initial_excitation, populations,
                       propagate, propagate_states)
from .seeding import derive_seed

SCHEMA_VERSION = 1
N_FEATURES = 400

# transport window, us, by box size; other sizes scale linearly
_T_END_BY_BOX = {10.0: 0.05, 15.0: 0.08, 20.0: 0.10}

DECOHERENCE_MODES = ("none", "realistic", "rescaled")


def default_t_end(box_size: float) -> float:
    for size, t_end in _T_END_BY_BOX.items():
        if abs(box_size - size) < 1e-9:
            return t_end
    return 0.005 * box_size


def canonical_json(doc) -> str:
    """Stable, compact JSON used for every artifact this package writes."""
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), allow_nan=False)


@dataclass(frozen=True)
class DecoherenceSpec:
    """How the environment enters a dataset.

    * ``none``: closed-system transport, no gas.
    * ``realistic``: gas-induced shifts and decay with the probe Rabi
      frequency drawn uniformly from [omega_p_min, omega_p_max] per record.
    * ``rescaled``: shifts dropped and the decay normalised so the box-pair
      mean of gamma equals ``gamma_target``.
    """

    mode: str = "none"
    omega_p_min: float = from_mhz(1.0)    # rad/us
    omega_p_max: float = from_mhz(13.0)   # rad/us
    gamma_target: Optional[float] = None  # rad/us, rescaled mode only

    def validate(self) -> None:
        if self.mode not in DECOHERENCE_MODES:
            raise ValueError(f"unknown decoherence mode {self.mode!r}")
        if self.mode == "rescaled" and (self.gamma_target is None or self.gamma_target < 0):
            raise ValueError("rescaled mode needs a nonnegative gamma_target")
        if not (0 < self.omega_p_min <= self.omega_p_max):
            raise ValueError("need 0 < omega_p_min <= omega_p_max")

    def to_dict(self) -> dict:
        return {"mode": self.mode, "omega_p_min": self.omega_p_min,
                "omega_p_max": self.omega_p_max, "gamma_target": self.gamma_target}

    @classmethod
    def from_dict(cls, doc: dict) -> "DecoherenceSpec":
        return cls(mode=doc["mode"], omega_p_min=float(doc["omega_p_min"]),
                   omega_p_max=float(doc["omega_p_max"]),
                   gamma_target=None if doc.get("gamma_target") is None
                   else float(doc["gamma_target"]))


@dataclass(frozen=True)
class DatasetConfig:
    """Everything that determines a dataset, and hence its manifest."""

    train_counts: dict
    test_counts: dict
    box_size: float = 10.0
    t_end: Optional[float] = None          # defaults per box size
    dt: float = 1e-4
    min_separation: float = DEFAULT_MIN_SEPARATION
    probe2_path: str = "x_sweep"
    decoherence: DecoherenceSpec = field(default_factory=DecoherenceSpec)
    constants: PhysicalConstants = field(default_factory=PhysicalConstants)
    global_seed: int = 0

    @property
    def window(self) -> float:
        return default_t_end(self.box_size) if self.t_end is None else self.t_end

    def validate(self) -> None:
        self.decoherence.validate()
        for counts in (self.train_counts, self.test_counts):
            for m, c in counts.items():
                if int(m) not in (1, 2, 3, 4) or int(c) < 0:
                    raise ValueError(f"bad record counts {counts}")
        if self.window <= 0 or self.dt <= 0:
            raise ValueError("need positive transport window and step")
        test = {int(c) for c in self.test_counts.values() if int(c)}
        if len(test) > 1:
            raise ValueError("test split must be balanced across atom counts")

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA_VERSION,
            "train_counts": {str(m): int(c) for m, c in sorted(self.train_counts.items())},
            "test_counts": {str(m): int(c) for m, c in sorted(self.test_counts.items())},
            "box_size": self.box_size,
            "t_end": self.window,
            "dt": self.dt,
            "min_separation": self.min_separation,
            "probe2_path": self.probe2_path,
            "decoherence": self.decoherence.to_dict(),
            "constants": self.constants.to_dict(),
            "global_seed": self.global_seed,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "DatasetConfig":
        if doc.get("schema") != SCHEMA_VERSION:
            raise ValueError(f"unsupported manifest schema {doc.get('schema')!r}")
        return cls(
            train_counts={int(m): int(c) for m, c in doc["train_counts"].items()},
            test_counts={int(m): int(c) for m, c in doc["test_counts"].items()},
            box_size=float(doc["box_size"]),
            t_end=float(doc["t_end"]),
            dt=float(doc["dt"]),
            min_separation=float(doc["min_separation"]),
            probe2_path=doc["probe2_path"],
            decoherence=DecoherenceSpec.from_dict(doc["decoherence"]),
            constants=PhysicalConstants.from_dict(doc["constants"]),
            global_seed=int(doc["global_seed"]),
        )


@dataclass(frozen=True, eq=False)
class FeatureRecord:
    """One labeled measurement: a network draw and its 400 probe probabilities."""

    seed: int
    split: str
    index: int
    m: int
    box_size: float
    t_end: float
    dt: float
    probe2_path: str
    mode: str
    omega_p: float
    gamma_target: Optional[float]
    scale: Optional[float]
    box_positions: np.ndarray   # (m, 2)
    h_prime: np.ndarray         # (m + 3,)
    l: np.ndarray               # (m + 3,) complex
    features: np.ndarray        # (400,)

    @property
    def n_atoms(self) -> int:
        return self.m + 3

    def validate(self) -> None:
        if not (1 <= self.m <= 4):
            raise ValueError(f"record has invalid atom count {self.m}")
        if self.box_positions.shape != (self.m, 2):
            raise ValueError("box coordinate shape does not match the atom count")
        n = self.n_atoms
        if self.h_prime.shape != (n,) or self.l.shape != (n,):
            raise ValueError("environment coupling length does not match the atom count")
        if self.features.shape != (N_FEATURES,):
            raise ValueError(f"expected {N_FEATURES} features, got {self.features.shape}")
        finite = (np.all(np.isfinite(self.features)) and np.all(np.isfinite(self.h_prime))
                  and np.all(np.isfinite(self.l)) and np.all(np.isfinite(self.box_positions)))
        if not finite:
            raise ValueError("record contains non-finite values")
        if self.features.min() < 0.0 or self.features.max() > 1.0:
            raise ValueError("features must be probabilities in [0, 1]")

    def to_json_line(self) -> str:
        doc = {
            "schema": SCHEMA_VERSION,
            "seed": self.seed,
            "split": self.split,
            "index": self.index,
            "m": self.m,
            "box_size": self.box_size,
            "t_end": self.t_end,
            "dt": self.dt,
            "probe2_path": self.probe2_path,
            "mode": self.mode,
            "omega_p": self.omega_p,
            "gamma_target": self.gamma_target,
            "scale": self.scale,
            "box_positions": [[float(x), float(y)] for x, y in self.box_positions],
            "h_prime": [float(v) for v in self.h_prime],
            "l": [[float(v.real), float(v.imag)] for v in self.l],
            "features": [float(v) for v in self.features],
        }
        return canonical_json(doc)

    @classmethod
    def from_json_line(cls, line: str) -> "FeatureRecord":
        doc = json.loads(line)
        if doc.get("schema") != SCHEMA_VERSION:
            raise ValueError(f"unsupported record schema {doc.get('schema')!r}")
        l = np.array([complex(re, im) for re, im in doc["l"]])
        rec = cls(
            seed=int(doc["seed"]), split=doc["split"], index=int(doc["index"]),
            m=int(doc["m"]), box_size=float(doc["box_size"]),
            t_end=float(doc["t_end"]), dt=float(doc["dt"]),
            probe2_path=doc["probe2_path"], mode=doc["mode"],
            omega_p=float(doc["omega_p"]),
            gamma_target=None if doc.get("gamma_target") is None else float(doc["gamma_target"]),
            scale=None if doc.get("scale") is None else float(doc["scale"]),
            box_positions=np.array(doc["box_positions"], dtype=float).reshape(-1, 2),
            h_prime=np.array(doc["h_prime"], dtype=float),
            l=l,
            features=np.array(doc["features"], dtype=float),
        )
        rec.validate()
        return rec


def record_features(box: BoxLayout, env: EnvironmentRealization,
                    config: DatasetConfig) -> np.ndarray:
    """Run the 200-configuration probe sweep and collect both probes' signals."""
    configs = probe_trajectory(config.box_size, config.probe2_path)
    pos = realization_positions(box, configs)
    w = interaction_matrix(pos, config.constants.c3)
    settings = PropagationSettings(t_end=config.window, dt=config.dt)
    n = box.n_atoms + 3
    if env.is_trivial:
        # closed system: amplitudes carry the full state at a fraction of the cost
        psi0 = np.zeros((len(configs), n), dtype=complex)
        psi0[:, 0] = 1.0
        psi = propagate_states(psi0, w, settings)
        probs = np.clip(psi.real ** 2 + psi.imag ** 2, 0.0, 1.0)
    else:
        rho0 = np.broadcast_to(initial_excitation(n), (len(configs), n, n)).copy()
        rho = propagate(rho0, w, env, settings)
        probs = populations(rho)
    return np.concatenate([probs[:, n - 2], probs[:, n - 1]])


def generate_record(config: DatasetConfig, split: str, index: int, m: int) -> FeatureRecord:
    """Produce the record at a dataset position; pure in (config, split, index, m)."""
    config.validate()
    seed = derive_seed(config.global_seed, split, index)
    box = sample_box_layout(m, config.box_size, derive_seed(seed, "box"),
                            config.min_separation)
    dec = config.decoherence
    if dec.mode == "none":
        env = EnvironmentRealization.trivial(m + 3)
        omega_p = 0.0
    else:
        rng = np.random.default_rng(derive_seed(seed, "omega"))
        omega_p = float(rng.uniform(dec.omega_p_min, dec.omega_p_max))
        env = sample_environment(box, omega_p, config.constants,
                                 derive_seed(seed, "environment"))
        if dec.mode == "rescaled":
            env = rescale_decoherence(env, dec.gamma_target, m)
    features = record_features(box, env, config)
    rec = FeatureRecord(
        seed=seed, split=split, index=index, m=m,
        box_size=config.box_size, t_end=config.window, dt=config.dt,
        probe2_path=config.probe2_path, mode=env.mode, omega_p=omega_p,
        gamma_target=env.gamma_target, scale=env.scale,
        box_positions=box.positions, h_prime=env.h_prime, l=env.l,
        features=features,
    )
    rec.validate()
    return rec


def label_sequence(counts: dict) -> list[int]:
    """Atom counts in dataset order: a round robin over the requested sizes."""
    remaining = {int(m): int(c) for m, c in counts.items() if int(c) > 0}
    seq: list[int] = []
    while remaining:
        for m in sorted(remaining):
            seq.append(m)
            remaining[m] -= 1
            if remaining[m] == 0:
                del remaining[m]
    return seq


_worker_config: Optional[DatasetConfig] = None


def _pool_init(config: DatasetConfig) -> None:
    global _worker_config
    _worker_config = config


def _pool_task(task: tuple) -> str:
    split, index, m = task
    return generate_record(_worker_config, split, index, m).to_json_line()


@dataclass(frozen=True)
class GenerationResult:
    out_dir: Path
    n_written: int
    n_skipped: int


def generate_dataset(config: DatasetConfig, out_dir, workers: int = 1,
                     resume: bool = False,
                     progress: Optional[Callable[[str, int, int], None]] = None
                     ) -> GenerationResult:
    """Write (or resume writing) a dataset directory.

    Existing record files are only extended when ``resume`` is set, and only
    under a manifest identical to ``config``; anything else is an error
    rather than a silent mix of configurations.
    """
    config.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest_text = canonical_json(config.to_dict()) + "\n"
    manifest_path = out / "manifest.json"
    if manifest_path.exists():
        if manifest_path.read_text() != manifest_text:
            raise FileExistsError(
                f"{manifest_path} exists with a different configuration")
    else:
        manifest_path.write_text(manifest_text)

    written = skipped = 0
    for split, counts in (("train", config.train_counts), ("test", config.test_counts)):
        labels = label_sequence(counts)
        path = out / f"{split}.jsonl"
        done = 0
        if path.exists():
            with open(path) as fh:
                done = sum(1 for line in fh if line.strip())
            if done and not resume:
                raise FileExistsError(f"{path} already holds {done} records; "
                                      "pass resume to extend it")
            if done > len(labels):
                raise ValueError(f"{path} holds more records than configured")
        skipped += done
        path.touch()
        tasks = [(split, i, labels[i]) for i in range(done, len(labels))]
        if not tasks:
            continue
        with open(path, "a") as fh:
            if workers > 1:
                with multiprocessing.Pool(workers, _pool_init, (config,)) as pool:
                    for k, line in enumerate(pool.imap(_pool_task, tasks, chunksize=4)):
                        fh.write(line + "\n")
                        written += 1
                        if progress:
                            progress(split, done + k + 1, len(labels))
            else:
                for k, task in enumerate(tasks):
                    fh.write(generate_record(config, *task).to_json_line() + "\n")
                    written += 1
                    if progress:
                        progress(split, done + k + 1, len(labels))
    return GenerationResult(out_dir=out, n_written=written, n_skipped=skipped)


def load_records(path) -> list[FeatureRecord]:
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(FeatureRecord.from_json_line(line))
            except (ValueError, KeyError) as err:
                raise ValueError(f"{path}:{lineno}: bad record ({err})") from err
    return records


@dataclass(frozen=True)
class Dataset:
    config: DatasetConfig
    train: list
    test: list


def load_dataset(dataset_dir) -> Dataset:
    """Read a dataset directory back, verifying counts against its manifest."""
    root = Path(dataset_dir)
    with open(root / "manifest.json") as fh:
        config = DatasetConfig.from_dict(json.load(fh))
    data = {}
    for split, counts in (("train", config.train_counts), ("test", config.test_counts)):
        records = load_records(root / f"{split}.jsonl")
        expected = sum(int(c) for c in counts.values())
        if len(records) != expected:
            raise ValueError(f"{split} split holds {len(records)} records, "
                             f"manifest promises {expected}")
        seen = {m: sum(1 for r in records if r.m == m) for m in counts}
        for m, c in counts.items():
            if seen[int(m)] != int(c):
                raise ValueError(f"{split} split has {seen[int(m)]} records "
                                 f"with {m} atoms, manifest promises {c}")
        data[split] = records
    return Dataset(config=config, train=data["train"], test=data["test"])


def file_digest(path) -> str:
    """SHA-256 of a file's bytes; how reports pin dataset and model identity."""
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def select_records(records: Sequence[FeatureRecord], m: Optional[int] = None) -> list:
    return [r for r in records if m is None or r.m == m]


def features_matrix(records: Sequence[FeatureRecord]) -> np.ndarray:
    return np.stack([r.features for r in records])


def count_labels(records: Sequence[FeatureRecord]) -> np.ndarray:
    return np.array([r.m for r in records], dtype=int)


def _uniform_m(records: Sequence[FeatureRecord]) -> int:
    ms = {r.m for r in records}
    if len(ms) != 1:
        raise ValueError(f"records mix atom counts {sorted(ms)}; filter to one size first")
    return ms.pop()


def position_matrix(records: Sequence[FeatureRecord]) -> np.ndarray:
    """Flattened box coordinates (x1, y1, x2, y2, ...), shape (R, 2M)."""
    _uniform_m(records)
    return np.stack([r.box_positions.reshape(-1) for r in records])


def operator_matrix(records: Sequence[FeatureRecord]) -> np.ndarray:
    """Environment couplings as real vectors (h', Re l, Im l), shape (R, 3N)."""
    _uniform_m(records)
    return np.stack([np.concatenate([r.h_prime, r.l.real, r.l.imag]) for r in records])


def operator_component_names(n_atoms: int) -> list[str]:
    return ([f"h_{i}" for i in range(n_atoms)]
            + [f"re_l_{i}" for i in range(n_atoms)]
            + [f"im_l_{i}" for i in range(n_atoms)])
