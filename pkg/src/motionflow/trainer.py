"""Training loops, sampling, evaluation and the normaliser ablation."""
from __future__ import annotations

import json
import logging
import platform
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .audio_mapper import MrfConfig, MrfMapper
from .cfm import DivergenceError, FlowBatch, FlowConfig, cfm_loss, make_vector_field, sample
from .latent_space import make_extractor
from .metrics import div_std, jerk, moment_errors, write_report
from .netcore import Adam, Affine, Module, Tensor, backward, load_model, save_model
from .normaliser import ae_loss, make_autoencoder, prior_nll
from .prior import PriorInput, PriorNet, prior_forward
from .synthetic_data import Dataset, SceneConfig, config_hash

log = logging.getLogger(__name__)

MODES = ("normalised", "direct_regression")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    batch: int = 16
    ae_batch: int = 8
    window: int = 32
    lambda_cfm: float = 0.1
    lambda_ae: float = 1.0
    lambda_prior: float = 0.1
    # decoupled weight decay on the prior network only; it memorises training trajectories without it
    prior_weight_decay: float = 1.0
    # recorded for completeness; their losses are not part of this toolkit
    lambda_gan: float = 0.1
    lambda_rec: float = 1.0
    lambda_id: float = 0.3
    lambda_sync: float = 0.1
    lambda_tts: float = 1.0
    epochs_ae: int = 200
    epochs_sampler: int = 500
    epochs_extractor: int = 100
    seed: int = 7
    mode: str = "normalised"
    n_scenes: int = 256
    compressed: int = 8
    ae_hidden: int = 64
    flow_hidden: int = 64
    prior_width: int = 32
    mrf_channels: int = 16
    extractor_hidden: int = 32
    sigma_min: float = 1e-4
    euler_steps: int = 10
    temperature: float = 1.0
    n_samples: int = 16
    scene: SceneConfig = field(default_factory=SceneConfig)

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.window < 3:
            raise ValueError("window must be >= 3 frames")
        if min(self.lambda_cfm, self.lambda_ae, self.lambda_prior) < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.prior_weight_decay < 0:
            raise ValueError("prior_weight_decay must be nonnegative")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.batch < 1 or self.ae_batch < 1:
            raise ValueError("batch sizes must be >= 1")

    def flow_config(self, temperature: float | None = None) -> FlowConfig:
        return FlowConfig(self.sigma_min, self.euler_steps,
                          self.temperature if temperature is None else temperature)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        scene = d.pop("scene", None)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if scene is not None and not isinstance(scene, SceneConfig):
            scene = SceneConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in scene.items()})
        return cls(**d, **({"scene": scene} if scene is not None else {}))

    def hash(self) -> str:
        return config_hash(self.to_dict())


class TrainingError(RuntimeError):
    pass


def _check_finite(value: float, what: str, step: int) -> None:
    if not np.isfinite(value):
        raise DivergenceError(f"{what} diverged (non-finite loss) at step {step}")


def motion_array(scenes) -> np.ndarray:
    return np.stack([s.motion_seq for s in scenes])


def motion_scale(ds: Dataset) -> float:
    """Factor bringing training motion to unit pooled variance."""
    return float(1.0 / np.std(motion_array(ds.train)))


def windows(ds_scenes, window: int) -> np.ndarray:
    X = motion_array(ds_scenes)
    if X.shape[1] < window:
        raise ValueError(f"scenes have {X.shape[1]} frames, window needs {window}")
    return X[:, :window]


def _batches(n: int, batch: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    for i in range(0, n, batch):
        yield perm[i:i + batch]


# ------------------------------------------------------------------ extractor

@dataclass
class ExtractorResult:
    extractor: Module
    losses: list


def train_extractor(ds: Dataset, cfg: TrainConfig) -> ExtractorResult:
    """Fit the 5-layer MLP extractor to the bank-projection magnitudes."""
    rng = np.random.default_rng([cfg.seed, 11])
    bank = ds.world.bank
    net = make_extractor(bank.dim, bank.n_codes, cfg.extractor_hidden, rng)
    F = np.concatenate([s.visual_features() for s in ds.train])
    Y = F @ bank.directions.T
    opt = Adam(net.parameters(), lr=cfg.lr)
    frames_per_batch = cfg.batch * cfg.scene.T
    losses = []
    step = 0
    for _ in range(cfg.epochs_extractor):
        total = 0.0
        for idx in _batches(len(F), frames_per_batch, rng):
            loss = ae_loss(net(Tensor(F[idx])), Y[idx])
            grads = backward(net, loss)
            _check_finite(loss.item(), "extractor", step)
            opt.step(grads)
            total += loss.item() * len(idx)
            step += 1
        losses.append(total / len(F))
    return ExtractorResult(net, losses)


# ---------------------------------------------------------------- autoencoder

@dataclass
class AEResult:
    encoder: Module
    decoder: Module
    scale: float
    losses: list

    def container(self) -> Module:
        return _Pair(self.encoder, self.decoder)

    def encode(self, motion) -> np.ndarray:
        return self.encoder(Tensor(np.asarray(motion) * self.scale)).data

    def reconstruct(self, motion) -> np.ndarray:
        z = self.encoder(Tensor(np.asarray(motion) * self.scale))
        return self.decoder(z).data / self.scale


class _Pair(Module):
    def __init__(self, encoder: Module, decoder: Module):
        super().__init__()
        self.encoder = encoder
        self.decoder = decoder


def train_ae(ds: Dataset, cfg: TrainConfig, out_dir=None) -> AEResult:
    if not ds.train:
        raise TrainingError("empty training set")
    rng = np.random.default_rng([cfg.seed, 21])
    enc, dec = make_autoencoder(cfg.scene.dim, cfg.compressed, cfg.ae_hidden, rng)
    pair = _Pair(enc, dec)
    scale = motion_scale(ds)
    X = windows(ds.train, cfg.window) * scale
    opt = Adam(pair.parameters(), lr=cfg.lr)
    losses = []
    step = 0
    for _ in range(cfg.epochs_ae):
        total = 0.0
        for idx in _batches(len(X), cfg.ae_batch, rng):
            x = Tensor(X[idx])
            rec = ae_loss(dec(enc(x)), x)
            loss = rec * cfg.lambda_ae
            grads = backward(pair, loss)
            _check_finite(loss.item(), "autoencoder", step)
            opt.step(grads)
            total += rec.item() * len(idx)
            step += 1
        losses.append(total / len(X))
    result = AEResult(enc, dec, scale, losses)
    if out_dir is not None:
        save_ae(result, Path(out_dir) / "ae.fmck")
    return result


def save_ae(result: AEResult, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    save_model(path, result.container(), extra={"data_scale": np.array([result.scale])})


def load_ae(path, cfg: TrainConfig) -> AEResult:
    if path is None or not Path(path).exists():
        raise TrainingError(f"autoencoder checkpoint not found: {path}")
    enc, dec = make_autoencoder(cfg.scene.dim, cfg.compressed, cfg.ae_hidden, np.random.default_rng(0))
    extra = load_model(path, _Pair(enc, dec))
    return AEResult(enc, dec, float(extra["data_scale"][0]), [])


# -------------------------------------------------------------------- sampler

class SamplerNets(Module):
    """Vector field, prior, content mapper and the lip projection."""

    def __init__(self, flow_dim: int, cfg: TrainConfig, rng: np.random.Generator):
        super().__init__()
        sc = cfg.scene
        c_in = 2 * sc.embed_dim + 1
        self.flow = make_vector_field(flow_dim, cfg.flow_hidden, rng)
        self.prior = PriorNet(flow_dim, cfg.prior_width, rng)
        self.mapper = MrfMapper(MrfConfig(channels=cfg.mrf_channels), c_in, sc.dim, rng)
        self.lip_proj = Affine(sc.dim, flow_dim, rng)

    def mean_sequence(self, first_motion, condition) -> Tensor:
        f_lip = self.mapper(Tensor(condition))
        return prior_forward(self.prior, PriorInput(Tensor(first_motion), self.lip_proj(f_lip)))


@dataclass
class SamplerResult:
    nets: SamplerNets
    mode: str
    scale: float
    ae: AEResult | None
    log: list  # (step, total, cfm, prior)
    cfg: TrainConfig

    @property
    def flow_dim(self) -> int:
        return self.nets.flow.out_features

    def targets(self, scenes) -> np.ndarray:
        """Flow-space targets ``x1``: compressed codes or scaled motion."""
        X = windows(scenes, self.cfg.window)
        if self.mode == "normalised":
            return self.ae.encode(X)
        return X * self.scale

    def to_motion(self, x: np.ndarray) -> np.ndarray:
        if self.mode == "normalised":
            return self.ae.decoder(Tensor(x)).data / self.scale
        return x / self.scale


def conditions(scenes, ds: Dataset, window: int) -> np.ndarray:
    return np.stack([s.content(ds.world).condition()[:window] for s in scenes])


def sampler_losses(nets: SamplerNets, x1, cond, cfg: TrainConfig, rng: np.random.Generator):
    """Returns ``(total, cfm, prior)`` tensors for one batch.

    The source noise is drawn around the (detached) prior mean, matching the
    ``N(mu, I)`` start used at sampling time.
    """
    mu = nets.mean_sequence(x1[:, 0, :], cond)
    x0 = mu.data + rng.standard_normal(x1.shape)
    t = rng.uniform(0.0, 1.0, size=len(x1))
    l_cfm = cfm_loss(nets.flow, FlowBatch(x0, x1, t, mu), cfg.flow_config())
    l_prior = prior_nll(Tensor(x1), mu) * (1.0 / len(x1))
    total = l_cfm * cfg.lambda_cfm + l_prior * cfg.lambda_prior
    return total, l_cfm, l_prior


def train_sampler(ds: Dataset, ae: AEResult | str | Path | None, cfg: TrainConfig, out_dir=None) -> SamplerResult:
    """Joint OT-CFM + prior training of the flow, prior and content mapper."""
    if cfg.mode == "normalised":
        if ae is None:
            raise TrainingError("normalised mode needs an autoencoder checkpoint")
        if not isinstance(ae, AEResult):
            ae = load_ae(ae, cfg)
        scale, flow_dim = ae.scale, cfg.compressed
    else:
        ae = None
        scale, flow_dim = motion_scale(ds), cfg.scene.dim
    rng = np.random.default_rng([cfg.seed, 31, MODES.index(cfg.mode)])
    nets = SamplerNets(flow_dim, cfg, rng)
    result = SamplerResult(nets, cfg.mode, scale, ae, [], cfg)
    X1 = result.targets(ds.train)
    C = conditions(ds.train, ds, cfg.window)
    params = nets.parameters()
    is_prior = {k: k.startswith("prior.") for k in params}
    opts = [Adam({k: p for k, p in params.items() if not is_prior[k]}, lr=cfg.lr),
            Adam({k: p for k, p in params.items() if is_prior[k]}, lr=cfg.lr, weight_decay=cfg.prior_weight_decay)]
    step = 0
    for _ in range(cfg.epochs_sampler):
        for idx in _batches(len(X1), cfg.batch, rng):
            total, l_cfm, l_prior = sampler_losses(nets, X1[idx], C[idx], cfg, rng)
            grads = backward(nets, total)
            _check_finite(total.item(), "sampler", step)
            for opt in opts:
                opt.step(grads)
            result.log.append((step, total.item(), l_cfm.item(), l_prior.item()))
            step += 1
    if out_dir is not None:
        save_sampler(result, Path(out_dir) / f"sampler_{cfg.mode}.fmck")
    return result


def save_sampler(result: SamplerResult, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    save_model(path, result.nets, extra={"data_scale": np.array([result.scale])})


def load_sampler(path, cfg: TrainConfig, ae: AEResult | None = None) -> SamplerResult:
    flow_dim = cfg.compressed if cfg.mode == "normalised" else cfg.scene.dim
    nets = SamplerNets(flow_dim, cfg, np.random.default_rng(0))
    extra = load_model(path, nets)
    if cfg.mode == "normalised" and ae is None:
        raise TrainingError("normalised sampler needs its autoencoder")
    return SamplerResult(nets, cfg.mode, float(extra["data_scale"][0]), ae, [], cfg)


def heldout_cfm_loss(result: SamplerResult, ds: Dataset, seed: int = 0) -> float:
    """CFM loss on the held-out scenes with a fixed noise/time draw."""
    rng = np.random.default_rng([seed, 41])
    x1 = result.targets(ds.heldout)
    cond = conditions(ds.heldout, ds, result.cfg.window)
    _, l_cfm, _ = sampler_losses(result.nets, x1, cond, result.cfg, rng)
    return l_cfm.item()


def generate(result: SamplerResult, ds: Dataset, scenes, rng: np.random.Generator,
             temperature: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Sample one sequence per scene, seeded by each scene's source frame.

    Returns ``(flow-space samples, motion-space samples)``.
    """
    x1 = result.targets(scenes)
    cond = conditions(scenes, ds, result.cfg.window)
    mu = result.nets.mean_sequence(x1[:, 0, :], cond).data
    z = sample(result.nets.flow, mu, result.cfg.flow_config(temperature), rng)
    return z, result.to_motion(z)


def sample_heldout(result: SamplerResult, ds: Dataset, n: int, seed: int,
                   temperature: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    held = ds.heldout
    scenes = [held[i % len(held)] for i in range(n)]
    return generate(result, ds, scenes, np.random.default_rng([seed, 51]), temperature)


def fidelity(result: SamplerResult, ds: Dataset, seed: int, reps: int = 8) -> dict:
    """Moment errors of held-out samples in flow space, and DIV at two temperatures.

    Each held-out scene is sampled ``reps`` times so that the sampled moments
    are not dominated by the noise of a single draw per scene.
    """
    held = ds.heldout
    z, _ = generate(result, ds, [s for s in held for _ in range(reps)], np.random.default_rng([seed, 61]))
    mean_err, cov_err = moment_errors(z, result.targets(held))
    _, warm = sample_heldout(result, ds, result.cfg.n_samples, seed, temperature=1.0)
    _, cold = sample_heldout(result, ds, result.cfg.n_samples, seed, temperature=0.0)
    return {"mean_rel_err": mean_err, "cov_rel_err": cov_err,
            "div_t1": div_std(warm), "div_t0": div_std(cold)}


def mean_jerk(motion: np.ndarray) -> float:
    return float(np.mean([jerk(m) for m in motion]))


# ------------------------------------------------------------------- ablation

@dataclass
class SeedRun:
    seed: int
    ae: AEResult
    normalised: SamplerResult
    direct: SamplerResult


def train_seed(ds: Dataset, cfg: TrainConfig, seed: int) -> SeedRun:
    c = replace(cfg, seed=seed)
    ae = train_ae(ds, c)
    norm = train_sampler(ds, ae, replace(c, mode="normalised"))
    direct = train_sampler(ds, None, replace(c, mode="direct_regression"))
    return SeedRun(seed, ae, norm, direct)


def ablation_rows(ds: Dataset, run: SeedRun, cfg: TrainConfig) -> list[dict]:
    rows = []
    for mode, res in (("normalised", run.normalised), ("direct_regression", run.direct)):
        _, motion = sample_heldout(res, ds, cfg.n_samples, run.seed)
        rows.append({"seed": run.seed, "mode": mode, "mean_jerk": mean_jerk(motion),
                     "div_std": div_std(motion)})
    return rows


def run_ablation(ds: Dataset, seeds: list, cfg: TrainConfig = TrainConfig(), out_dir=None,
                 runs: dict | None = None) -> list[dict]:
    """Normaliser vs direct regression: mean jerk and DIV of held-out samples per seed.

    ``runs`` optionally caches trained :class:`SeedRun` objects by seed.
    """
    if len(seeds) < 5:
        raise ValueError(f"ablation needs at least 5 seeds, got {len(seeds)}")
    rows = []
    for s in seeds:
        if runs is not None and s in runs:
            run = runs[s]
        else:
            run = train_seed(ds, cfg, s)
            if runs is not None:
                runs[s] = run
        log.info("ablation seed %s trained", s)
        rows.extend(ablation_rows(ds, run, cfg))
    if out_dir is not None:
        write_ablation_csv(rows, Path(out_dir) / "ablation.csv")
    return rows


def write_ablation_csv(rows: list[dict], path) -> None:
    import csv
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "mode", "mean_jerk", "div_std"])
        for r in rows:
            w.writerow([r["seed"], r["mode"], repr(r["mean_jerk"]), repr(r["div_std"])])


def normaliser_wins(rows: list[dict]) -> tuple[int, int]:
    """(seeds where normalised jerk < direct jerk, seeds compared)."""
    by_seed: dict = {}
    for r in rows:
        by_seed.setdefault(r["seed"], {})[r["mode"]] = r["mean_jerk"]
    wins = sum(v["normalised"] < v["direct_regression"] for v in by_seed.values())
    return wins, len(by_seed)


# ------------------------------------------------------------------ manifests

def write_manifest(out_dir, cfg: TrainConfig, command: str, extra: dict | None = None) -> None:
    manifest = {
        "command": command,
        "config": cfg.to_dict(),
        "config_hash": cfg.hash(),
        "versions": {"motionflow": __version__, "numpy": np.__version__,
                     "python": platform.python_version()},
    }
    manifest.update(extra or {})
    Path(out_dir, "manifest.json").write_text(json.dumps(manifest, indent=2, default=list))


def metric_rows(metrics: dict, seed: int, chash: str) -> list:
    return [(k, v, seed, chash) for k, v in metrics.items()]


def write_metrics(out_dir, metrics: dict, cfg: TrainConfig) -> Path:
    path = Path(out_dir) / "metrics.csv"
    write_report(path, metric_rows(metrics, cfg.seed, cfg.hash()))
    return path
