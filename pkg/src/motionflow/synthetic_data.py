"""Seeded synthetic identity x motion scenes.

A *world* fixes everything shared by a dataset: the code bank, the per-token
lip amplitudes and the token feature tables. A *scene* draws one identity
(orthogonal to the bank span), a token sequence with durations, and a motion
trajectory

    motion[j] = sum_k a_k sin(w_k j + psi_k) bank[k]
                + lip[j] bank[K] + noise_level * (z_j @ bank)

where ``lip`` linearly interpolates the tokens' lip amplitudes between token
centres. All motion lies in the bank span.
"""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .audio_mapper import ContentFeatures
from .latent_space import CodeBank, random_bank

VOCAB = 16


@dataclass(frozen=True)
class SceneConfig:
    T: int = 32
    K: int = 3
    noise_level: float = 0.01
    dim: int = 20
    n_codes: int = 12
    n_tokens: int = 8
    embed_dim: int = 8
    amp_range: tuple = (0.2, 1.0)
    freq_range: tuple = (0.05, 0.4)
    lip_gain: float = 0.5
    identity_scale: float = 1.0

    def __post_init__(self):
        if self.T < 2:
            raise ValueError("T must be >= 2")
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.noise_level < 0:
            raise ValueError("noise_level must be >= 0")
        if not 1 <= self.n_tokens <= self.T:
            raise ValueError("need 1 <= n_tokens <= T")
        if self.n_codes >= self.dim:
            raise ValueError("identity needs a complement: n_codes must be < dim")


@dataclass(frozen=True)
class World:
    bank: CodeBank
    lip_table: np.ndarray  # (VOCAB,)
    token_embed: np.ndarray  # (VOCAB, embed_dim)
    token_feature: np.ndarray  # (VOCAB, embed_dim)


@dataclass
class SyntheticScene:
    identity: np.ndarray  # (d,)
    motion_seq: np.ndarray  # (T, d)
    content_tokens: np.ndarray  # (L,) ints in [0, VOCAB)
    durations: np.ndarray  # (L,) positive, sum T
    noise_level: float
    magnitudes: np.ndarray = field(repr=False, default=None)  # (T, M) code coordinates

    def visual_features(self) -> np.ndarray:
        return self.identity + self.motion_seq

    def content(self, world: World) -> ContentFeatures:
        e_t = world.token_embed[self.content_tokens]
        f_up = np.repeat(world.token_feature[self.content_tokens], self.durations, axis=0)
        return ContentFeatures(e_t, f_up)


@dataclass
class Dataset:
    seed: int
    cfg: SceneConfig
    world: World
    scenes: list
    train_idx: list
    heldout_idx: list

    @property
    def train(self) -> list:
        return [self.scenes[i] for i in self.train_idx]

    @property
    def heldout(self) -> list:
        return [self.scenes[i] for i in self.heldout_idx]


def make_world(seed: int, cfg: SceneConfig) -> World:
    rng = np.random.default_rng([seed, 0x517])
    bank = random_bank(cfg.n_codes, cfg.dim, rng)
    return World(
        bank=bank,
        lip_table=rng.normal(size=VOCAB),
        token_embed=rng.normal(size=(VOCAB, cfg.embed_dim)),
        token_feature=rng.normal(size=(VOCAB, cfg.embed_dim)),
    )


def random_durations(rng: np.random.Generator, T: int, L: int) -> np.ndarray:
    cuts = np.sort(rng.choice(np.arange(1, T), size=L - 1, replace=False))
    return np.diff(np.concatenate([[0], cuts, [T]])).astype(int)


def lip_track(tokens: np.ndarray, durations: np.ndarray, lip_table: np.ndarray) -> np.ndarray:
    T = int(durations.sum())
    centres = np.cumsum(durations) - durations / 2.0 - 0.5
    return np.interp(np.arange(T), centres, lip_table[tokens])


def gen_scene(seed, cfg: SceneConfig, world: World) -> SyntheticScene:
    rng = np.random.default_rng(seed)
    bank = world.bank.directions
    M = bank.shape[0]
    g = rng.normal(scale=cfg.identity_scale, size=cfg.dim)
    identity = g - (g @ bank.T) @ bank
    tokens = rng.integers(0, VOCAB, size=cfg.n_tokens)
    durations = random_durations(rng, cfg.T, cfg.n_tokens)

    j = np.arange(cfg.T)
    amps = rng.uniform(*cfg.amp_range, size=cfg.K)
    freqs = rng.uniform(*cfg.freq_range, size=cfg.K)
    phases = rng.uniform(0, 2 * np.pi, size=cfg.K)
    mags = np.zeros((cfg.T, M))
    for k in range(cfg.K):
        mags[:, k % M] += amps[k] * np.sin(freqs[k] * j + phases[k])
    mags[:, cfg.K % M] += cfg.lip_gain * lip_track(tokens, durations, world.lip_table)
    mags += cfg.noise_level * rng.standard_normal((cfg.T, M))
    return SyntheticScene(identity, mags @ bank, tokens, durations, cfg.noise_level, mags)


def split_indices(n: int, rng: np.random.Generator) -> tuple[list, list]:
    n_held = max(1, int(round(0.1 * n)))
    perm = rng.permutation(n)
    return sorted(perm[n_held:].tolist()), sorted(perm[:n_held].tolist())


def gen_dataset(seed: int, n_scenes: int, cfg: SceneConfig = SceneConfig()) -> Dataset:
    """``n_scenes`` scenes sharing one world, with a seeded 90/10 split."""
    if n_scenes < 2:
        raise ValueError(f"need at least 2 scenes, got {n_scenes}")
    world = make_world(seed, cfg)
    children = np.random.SeedSequence([seed, 0x5CE]).spawn(n_scenes)
    scenes = [gen_scene(s, cfg, world) for s in children]
    train, held = split_indices(n_scenes, np.random.default_rng([seed, 0x5B1]))
    return Dataset(seed, cfg, world, scenes, train, held)


# ---------------------------------------------------------------- persistence

def config_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, default=list).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _write_matrix(path: Path, header: list[str], rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def _read_matrix(path: Path) -> np.ndarray:
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    return np.array([[float(v) for v in r] for r in rows])


def export_dataset(ds: Dataset, out_dir) -> Path:
    """Write one CSV per scene plus world tables and a JSON manifest."""
    out = Path(out_dir)
    (out / "scenes").mkdir(parents=True, exist_ok=True)
    d = ds.cfg.dim
    _write_matrix(out / "bank.csv", [f"d{j}" for j in range(d)], ds.world.bank.directions)
    _write_matrix(out / "tokens.csv", ["lip"] + [f"e{j}" for j in range(ds.cfg.embed_dim)]
                  + [f"f{j}" for j in range(ds.cfg.embed_dim)],
                  np.column_stack([ds.world.lip_table, ds.world.token_embed, ds.world.token_feature]))
    for i, sc in enumerate(ds.scenes):
        _write_matrix(out / "scenes" / f"scene_{i:04d}_motion.csv",
                      ["frame"] + [f"m{j}" for j in range(d)],
                      [[j, *row] for j, row in enumerate(sc.motion_seq)])
        _write_matrix(out / "scenes" / f"scene_{i:04d}_meta.csv", ["kind"] + [f"v{j}" for j in range(d)],
                      [["identity", *sc.identity]])
        with (out / "scenes" / f"scene_{i:04d}_tokens.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["token", "duration"])
            w.writerows(zip(sc.content_tokens.tolist(), sc.durations.tolist()))
    cfg = asdict(ds.cfg)
    manifest = {
        "seed": ds.seed,
        "n_scenes": len(ds.scenes),
        "cfg": cfg,
        "config_hash": config_hash(cfg),
        "train_idx": ds.train_idx,
        "heldout_idx": ds.heldout_idx,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return out


def import_dataset(in_dir) -> Dataset:
    src = Path(in_dir)
    manifest = json.loads((src / "manifest.json").read_text())
    raw = manifest["cfg"]
    cfg = SceneConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in raw.items()})
    bank = CodeBank(_read_matrix(src / "bank.csv"))
    tab = _read_matrix(src / "tokens.csv")
    k = cfg.embed_dim
    world = World(bank, tab[:, 0], tab[:, 1:1 + k], tab[:, 1 + k:1 + 2 * k])
    scenes = []
    for i in range(manifest["n_scenes"]):
        motion = _read_matrix(src / "scenes" / f"scene_{i:04d}_motion.csv")[:, 1:]
        with (src / "scenes" / f"scene_{i:04d}_meta.csv").open(newline="") as fh:
            identity = np.array([float(v) for v in list(csv.reader(fh))[1][1:]])
        tok = _read_matrix(src / "scenes" / f"scene_{i:04d}_tokens.csv").astype(int)
        scenes.append(SyntheticScene(identity, motion, tok[:, 0], tok[:, 1], cfg.noise_level,
                                     motion @ bank.directions.T))
    return Dataset(manifest["seed"], cfg, world, scenes, manifest["train_idx"], manifest["heldout_idx"])
