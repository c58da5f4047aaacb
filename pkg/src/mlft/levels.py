"""Level hierarchy, composed level solvers, sample generation and dataset files."""
from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import solvers
from .errors import MLFTError, ResolutionMismatchError, SampleGenerationError
from .grid import INTERPOLATIONS, RESTRICTIONS, Field, Grid, interpolate, restrict

SPLITS = ("train", "validation", "test")
_SPLIT_CODE = {"train": 0, "validation": 1, "test": 2}


@dataclass(frozen=True)
class TransferKind:
    restriction: str = "fourier"
    interpolation: str = "cubic"

    def __post_init__(self):
        if self.restriction not in RESTRICTIONS:
            raise ValueError(f"restriction must be one of {RESTRICTIONS}")
        if self.interpolation not in INTERPOLATIONS:
            raise ValueError(f"interpolation must be one of {INTERPOLATIONS}")


@dataclass(frozen=True)
class Problem:
    """A parametric PDE: its parameter distribution and its grid solver."""

    name: str
    params: object
    dist: object = None

    def __post_init__(self):
        if self.name not in solvers.PROBLEMS:
            raise ValueError(f"unknown problem {self.name!r}")

    @property
    def dim(self) -> int:
        return 2 if self.name == "elliptic" else 1

    def sample(self, grid: Grid, seed) -> Field:
        if self.name == "nls":
            return solvers.sample_nls_potential(self.dist, grid, seed)
        if self.name == "burgers":
            return solvers.sample_burgers_initial(self.params.k_steps, grid, seed)
        return solvers.sample_elliptic_potential(self.params, grid, seed)

    def solve(self, v: Field) -> Field:
        if self.name == "nls":
            return solvers.solve_nls(v, self.params)
        if self.name == "burgers":
            return solvers.solve_burgers(v, self.params)
        return solvers.solve_diag_inverse(v)

    def center(self, level_n: int, v: Field, u: Field):
        c = getattr(self.params, "c_shift", 0.0)
        return solvers.center_sample(self.name, level_n, v, u, c_shift=c)


@dataclass(frozen=True)
class LevelSpec:
    index: int
    n: int
    cost: float
    problem: Problem
    transfer: TransferKind = field(default_factory=TransferKind)

    def __post_init__(self):
        if self.index < 1 or self.n < 1 or self.cost <= 0:
            raise ValueError("LevelSpec needs index >= 1, n >= 1, cost > 0")


def check_hierarchy(levels) -> None:
    if not levels:
        raise ValueError("empty hierarchy")
    n_l = levels[-1].n
    for a, b in zip(levels, levels[1:]):
        if not (a.n < b.n and a.cost < b.cost):
            raise ValueError("levels must be strictly increasing in n and cost")
    for lv in levels:
        if n_l % lv.n:
            raise ResolutionMismatchError(f"level n={lv.n} does not divide finest n={n_l}")
        if lv.problem != levels[0].problem:
            raise ValueError("all levels must share one problem")
    if [lv.index for lv in levels] != list(range(1, len(levels) + 1)):
        raise ValueError("level indices must be 1..L")


def apply_level(v: Field, level: LevelSpec, finest_n: int):
    """``f_l = I o F_l o R`` on the finest grid, followed by centering.

    Returns the centered ``(v, u)`` pair.
    """
    if v.grid.n != finest_n:
        raise ResolutionMismatchError(f"parameter lives on n={v.grid.n}, expected {finest_n}")
    if finest_n % level.n:
        raise ResolutionMismatchError(f"{level.n} does not divide {finest_n}")
    prob = level.problem
    if level.n == finest_n:
        u = prob.solve(v)
    else:
        vc = restrict(v, level.transfer.restriction, level.n)
        u = interpolate(prob.solve(vc), level.transfer.interpolation, finest_n)
    return prob.center(level.n, v, u)


def sample_seed(seed: int, split: str, level: int, index: int) -> np.random.SeedSequence:
    """Counter-mode seed for one sample; independent of generation order."""
    return np.random.SeedSequence([int(seed), _SPLIT_CODE[split], int(level), int(index)])


@dataclass(frozen=True, eq=False)
class SampleSet:
    """Centered pairs on the finest grid, stacked along axis 0."""

    level: int
    grid: Grid
    v: np.ndarray
    u: np.ndarray
    seed: int
    split: str
    u_prev: np.ndarray | None = None

    def __post_init__(self):
        for arr in (self.v, self.u, self.u_prev):
            if arr is not None:
                if arr.shape[1:] != self.grid.shape or arr.shape[0] != self.v.shape[0]:
                    raise ValueError("sample arrays must be (count, *grid.shape)")
                arr.setflags(write=False)

    @property
    def paired(self) -> bool:
        return self.u_prev is not None

    def __len__(self):
        return self.v.shape[0]

    def __eq__(self, other):
        if not isinstance(other, SampleSet):
            return NotImplemented
        same_prev = (self.u_prev is None and other.u_prev is None) or (
            self.u_prev is not None
            and other.u_prev is not None
            and np.array_equal(self.u_prev, other.u_prev)
        )
        return (
            (self.level, self.grid, self.seed, self.split) == (other.level, other.grid, other.seed, other.split)
            and np.array_equal(self.v, other.v)
            and np.array_equal(self.u, other.u)
            and same_prev
        )

    def subset(self, count: int) -> "SampleSet":
        prev = None if self.u_prev is None else self.u_prev[:count].copy()
        return SampleSet(self.level, self.grid, self.v[:count].copy(), self.u[:count].copy(),
                         self.seed, self.split, prev)

    def with_targets(self, u: np.ndarray) -> "SampleSet":
        return SampleSet(self.level, self.grid, self.v.copy(), np.array(u, dtype=float),
                         self.seed, self.split, None)

    def digest(self) -> str:
        h = hashlib.sha256()
        for arr in (self.v, self.u, self.u_prev):
            if arr is not None:
                h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return h.hexdigest()


def generate_samples(
    level: LevelSpec,
    hierarchy,
    m: int,
    seed: int,
    split: str = "train",
    paired: bool = False,
    threads: int = 1,
) -> SampleSet:
    """Draw ``m`` parameters on the finest grid and evaluate ``f_l`` (and ``f_{l-1}``)."""
    if m < 1:
        raise ValueError("m must be >= 1")
    if split not in SPLITS:
        raise ValueError(f"split must be one of {SPLITS}")
    finest_n = hierarchy[-1].n
    grid = Grid(level.problem.dim, finest_n)
    prev = None
    if paired:
        if level.index < 2:
            raise ValueError("paired generation needs a previous level")
        prev = hierarchy[level.index - 2]

    def one(i):
        try:
            v = level.problem.sample(grid, sample_seed(seed, split, level.index, i))
            vc, u = apply_level(v, level, finest_n)
            up = apply_level(v, prev, finest_n)[1].values if prev is not None else None
        except MLFTError as exc:
            raise SampleGenerationError(f"sample {i} failed: {exc}", index=i) from exc
        return vc.values, u.values, up

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            out = list(pool.map(one, range(m)))
    else:
        out = [one(i) for i in range(m)]
    v = np.stack([o[0] for o in out])
    u = np.stack([o[1] for o in out])
    up = np.stack([o[2] for o in out]) if paired else None
    return SampleSet(level.index, grid, v, u, int(seed), split, up)


def cost_of(levels, m) -> float:
    costs = [lv.cost if isinstance(lv, LevelSpec) else float(lv) for lv in levels]
    if len(costs) != len(m):
        raise ValueError(f"{len(costs)} levels but {len(m)} counts")
    return float(sum(mi * t for mi, t in zip(m, costs)))


# -- dataset files ----------------------------------------------------------------

MAGIC = "MLFTDS1"


def dataset_header(s: SampleSet) -> str:
    return (
        f"{MAGIC} dim={s.grid.dim} n={s.grid.n} level={s.level} count={len(s)} "
        f"split={s.split} seed={s.seed} paired={int(s.paired)}"
    )


def save_dataset(s: SampleSet, path, config_text: str | None = None) -> Path:
    path = Path(path)
    header = dataset_header(s)
    blocks = [s.v, s.u] + ([s.u_prev] if s.paired else [])
    body = np.stack(blocks, axis=1).astype("<f8")  # per sample: v, u, u_prev
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii") + b"\n")
        fh.write(body.tobytes(order="C"))
    sidecar = path.with_name(path.name + ".txt")
    text = header + "\n"
    if config_text:
        text += "\n" + config_text.rstrip("\n") + "\n"
    sidecar.write_text(text)
    return path


def parse_header(line: str) -> dict:
    parts = line.split()
    if not parts or parts[0] != MAGIC:
        raise ValueError("not an MLFTDS1 dataset")
    fields = dict(p.split("=", 1) for p in parts[1:])
    return {
        "dim": int(fields["dim"]),
        "n": int(fields["n"]),
        "level": int(fields["level"]),
        "count": int(fields["count"]),
        "split": fields["split"],
        "seed": int(fields["seed"]),
        "paired": fields["paired"] == "1",
    }


def load_dataset(path) -> SampleSet:
    raw = Path(path).read_bytes()
    head, _, body = raw.partition(b"\n")
    meta = parse_header(head.decode("ascii"))
    grid = Grid(meta["dim"], meta["n"])
    nb = 3 if meta["paired"] else 2
    data = np.frombuffer(body, dtype="<f8").astype(np.float64)
    data = data.reshape((meta["count"], nb) + grid.shape)
    return SampleSet(
        meta["level"], grid, data[:, 0].copy(), data[:, 1].copy(), meta["seed"], meta["split"],
        data[:, 2].copy() if meta["paired"] else None,
    )


@dataclass(frozen=True, eq=False)
class MultiLevelSet:
    """One set of parameters with the centered targets of every level.

    ``u[l - 1]`` holds ``f_l`` for level ``l``; used for test and validation
    splits, where level gaps and per-level errors are measured on shared
    parameters.
    """

    grid: Grid
    v: np.ndarray
    u: tuple
    seed: int
    split: str

    def __len__(self):
        return self.v.shape[0]

    def gap(self, l: int) -> float:
        """Mean vec2 of ``f_l - f_{l-1}`` (levels counted from 1)."""
        d = (self.u[l - 1] - self.u[l - 2]).reshape(len(self), -1)
        return float(np.mean(np.linalg.norm(d, axis=1)))

    def distance_to_finest(self, l: int) -> float:
        d = (self.u[-1] - self.u[l - 1]).reshape(len(self), -1)
        return float(np.mean(np.linalg.norm(d, axis=1)))


def generate_multilevel(hierarchy, m: int, seed: int, split: str = "test", threads: int = 1) -> MultiLevelSet:
    if m < 1:
        raise ValueError("m must be >= 1")
    finest_n = hierarchy[-1].n
    prob = hierarchy[0].problem
    grid = Grid(prob.dim, finest_n)

    def one(i):
        try:
            v = prob.sample(grid, sample_seed(seed, split, 0, i))
            pairs = [apply_level(v, lv, finest_n) for lv in hierarchy]
        except MLFTError as exc:
            raise SampleGenerationError(f"sample {i} failed: {exc}", index=i) from exc
        return pairs[0][0].values, [p[1].values for p in pairs]

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            out = list(pool.map(one, range(m)))
    else:
        out = [one(i) for i in range(m)]
    v = np.stack([o[0] for o in out])
    u = tuple(np.stack([o[1][l] for o in out]) for l in range(len(hierarchy)))
    for arr in (v,) + u:
        arr.setflags(write=False)
    return MultiLevelSet(grid, v, u, int(seed), split)
