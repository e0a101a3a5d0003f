import numpy as np
import pytest
from dataclasses import replace

from motionflow.metrics import read_report, recon_rmse
from motionflow.normaliser import prior_nll
from motionflow.synthetic_data import SceneConfig, gen_dataset
from motionflow.trainer import (TrainConfig, TrainingError, ablation_rows, conditions,
                                heldout_cfm_loss, load_ae, load_sampler, run_ablation, sample_heldout,
                                save_ae, save_sampler, train_ae, train_sampler, train_seed, windows,
                                write_metrics)

SCENE = SceneConfig(T=12, n_tokens=4)
TINY = TrainConfig(batch=4, ae_batch=4, window=12, n_scenes=12, compressed=4, ae_hidden=8, flow_hidden=8,
                   prior_width=8, mrf_channels=4, extractor_hidden=8, epochs_ae=2, epochs_sampler=2,
                   epochs_extractor=2, n_samples=4, scene=SCENE)


@pytest.fixture(scope="module")
def tiny_ds():
    return gen_dataset(1, TINY.n_scenes, SCENE)


def snapshot(module):
    return {k: p.data.copy() for k, p in module.parameters().items()}


def same(a, b):
    return a.keys() == b.keys() and all(a[k].tobytes() == b[k].tobytes() for k in a)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lr=0.0)
    with pytest.raises(ValueError):
        TrainConfig(window=2)
    with pytest.raises(ValueError):
        TrainConfig(lambda_prior=-1.0)
    with pytest.raises(ValueError):
        TrainConfig(mode="other")
    with pytest.raises(ValueError):
        TrainConfig(prior_weight_decay=-1.0)


def test_config_dict_round_trip():
    d = TINY.to_dict()
    back = TrainConfig.from_dict(d)
    assert back == TINY and back.hash() == TINY.hash()
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"bogus": 1})


def test_ae_zero_epochs_keeps_initial_parameters(tiny_ds):
    a = train_ae(tiny_ds, replace(TINY, epochs_ae=0))
    b = train_ae(tiny_ds, replace(TINY, epochs_ae=0))
    c = train_ae(tiny_ds, TINY)
    assert same(snapshot(a.container()), snapshot(b.container()))
    assert not same(snapshot(a.container()), snapshot(c.container()))
    assert a.losses == []


def test_ae_zero_weight_keeps_parameters(tiny_ds):
    init = train_ae(tiny_ds, replace(TINY, epochs_ae=0))
    trained = train_ae(tiny_ds, replace(TINY, lambda_ae=0.0, epochs_ae=3))
    assert same(snapshot(init.container()), snapshot(trained.container()))


def test_ae_empty_dataset(tiny_ds):
    empty = replace(tiny_ds, train_idx=[])
    with pytest.raises(TrainingError):
        train_ae(empty, TINY)


def test_normalised_sampler_needs_autoencoder(tiny_ds, tmp_path):
    with pytest.raises(TrainingError):
        train_sampler(tiny_ds, None, TINY)
    with pytest.raises(TrainingError):
        train_sampler(tiny_ds, tmp_path / "missing.fmck", TINY)


def test_loss_decomposition_every_step(tiny_ds):
    ae = train_ae(tiny_ds, TINY)
    res = train_sampler(tiny_ds, ae, TINY)
    assert len(res.log) == TINY.epochs_sampler * int(np.ceil(len(tiny_ds.train) / TINY.batch))
    for _, total, cfm, prior in res.log:
        assert abs(total - (TINY.lambda_cfm * cfm + TINY.lambda_prior * prior)) <= 1e-12


def test_zero_prior_weight(tiny_ds):
    ae = train_ae(tiny_ds, TINY)
    # decay off, so any movement of the prior comes from the flow loss
    cfg = replace(TINY, lambda_prior=0.0, prior_weight_decay=0.0)
    init = train_sampler(tiny_ds, ae, replace(cfg, epochs_sampler=0))
    res = train_sampler(tiny_ds, ae, cfg)
    for _, total, cfm, _ in res.log:
        assert total == cfg.lambda_cfm * cfm
    # the prior still moves: it feeds the flow's conditioning
    assert not same(snapshot(init.nets.prior), snapshot(res.nets.prior))


def test_both_weights_zero_freezes_everything(tiny_ds):
    ae = train_ae(tiny_ds, TINY)
    cfg = replace(TINY, lambda_prior=0.0, lambda_cfm=0.0, prior_weight_decay=0.0)
    init = train_sampler(tiny_ds, ae, replace(cfg, epochs_sampler=0))
    res = train_sampler(tiny_ds, ae, cfg)
    assert same(snapshot(init.nets), snapshot(res.nets))


def test_prior_weight_decay_alone_shrinks_only_the_prior(tiny_ds):
    ae = train_ae(tiny_ds, TINY)
    cfg = replace(TINY, lambda_prior=0.0, lambda_cfm=0.0, prior_weight_decay=50.0)
    init = train_sampler(tiny_ds, ae, replace(cfg, epochs_sampler=0))
    res = train_sampler(tiny_ds, ae, cfg)
    steps = len(res.log)
    shrink = (1.0 - cfg.lr * cfg.prior_weight_decay) ** steps
    before, after = snapshot(init.nets), snapshot(res.nets)
    for k in before:
        expected = before[k] * shrink if k.startswith("prior.") else before[k]
        np.testing.assert_allclose(after[k], expected, rtol=1e-12, atol=1e-300)


def test_direct_mode_targets_raw_motion(tiny_ds):
    res = train_sampler(tiny_ds, None, replace(TINY, mode="direct_regression"))
    assert res.flow_dim == SCENE.dim
    x1 = res.targets(tiny_ds.heldout)
    np.testing.assert_array_equal(x1, windows(tiny_ds.heldout, TINY.window) * res.scale)
    z, motion = sample_heldout(res, tiny_ds, 3, seed=0)
    np.testing.assert_allclose(motion, z / res.scale)


def test_training_is_deterministic(tiny_ds, tmp_path):
    a_ae, b_ae = train_ae(tiny_ds, TINY, tmp_path / "a"), train_ae(tiny_ds, TINY)
    a, b = train_sampler(tiny_ds, a_ae, TINY), train_sampler(tiny_ds, b_ae, TINY)
    assert same(snapshot(a.nets), snapshot(b.nets))
    assert a.log == b.log
    za, _ = sample_heldout(a, tiny_ds, 4, seed=3)
    zb, _ = sample_heldout(b, tiny_ds, 4, seed=3)
    assert za.tobytes() == zb.tobytes()


def test_checkpoint_round_trip(tiny_ds, tmp_path):
    ae = train_ae(tiny_ds, TINY)
    res = train_sampler(tiny_ds, ae, TINY)
    save_ae(ae, tmp_path / "ae.fmck")
    save_sampler(res, tmp_path / "s.fmck")
    ae2 = load_ae(tmp_path / "ae.fmck", TINY)
    res2 = load_sampler(tmp_path / "s.fmck", TINY, ae2)
    assert ae2.scale == ae.scale
    H = windows(tiny_ds.heldout, TINY.window)
    assert ae2.reconstruct(H).tobytes() == ae.reconstruct(H).tobytes()
    x1 = res.targets(tiny_ds.heldout)
    cond = conditions(tiny_ds.heldout, tiny_ds, TINY.window)
    mu1 = res.nets.mean_sequence(x1[:, 0], cond).data
    mu2 = res2.nets.mean_sequence(x1[:, 0], cond).data
    assert mu1.tobytes() == mu2.tobytes()
    with pytest.raises(TrainingError):
        load_sampler(tmp_path / "s.fmck", TINY, None)
    with pytest.raises(TrainingError):
        load_ae(tmp_path / "nothing.fmck", TINY)


def test_ablation_needs_five_seeds(tiny_ds):
    with pytest.raises(ValueError):
        run_ablation(tiny_ds, [1], TINY)


def test_ablation_repeated_seed_rows_identical(tiny_ds, tmp_path):
    runs = {}
    rows = run_ablation(tiny_ds, [3, 4, 3, 5, 6], TINY, tmp_path, runs=None)
    by = [(r["seed"], r["mode"]) for r in rows]
    assert by[0:2] == [(3, "normalised"), (3, "direct_regression")]
    assert rows[0] == rows[4] and rows[1] == rows[5]
    assert (tmp_path / "ablation.csv").read_text().splitlines()[0] == "seed,mode,mean_jerk,div_std"
    assert runs == {}


def test_metrics_csv_bitwise_repeatable(tiny_ds, tmp_path):
    paths = []
    for name in ("a", "b"):
        run = train_seed(tiny_ds, TINY, 2)
        rows = ablation_rows(tiny_ds, run, TINY)
        out = tmp_path / name
        out.mkdir()
        metrics = {f"{r['mode']}_{k}": r[k] for r in rows for k in ("mean_jerk", "div_std")}
        paths.append(write_metrics(out, metrics, TINY))
    assert paths[0].read_bytes() == paths[1].read_bytes()
    assert read_report(paths[0])[0]["config_hash"] == TINY.hash()


# ----------------------------------------------------------------- default-size runs

@pytest.mark.slow
def test_default_autoencoder_quality(run_cache):
    ae = run_cache.get(7).ae
    H = windows(run_cache.ds.heldout, run_cache.cfg.window)
    assert recon_rmse(ae.reconstruct(H) * ae.scale, H * ae.scale) < 0.05
    # smoothed loss over the second half of training never increases
    second = np.array(ae.losses[len(ae.losses) // 2:])
    smooth = np.convolve(second, np.ones(10) / 10, mode="valid")
    assert np.all(np.diff(smooth) <= 0)


@pytest.mark.slow
def test_trained_prior_beats_zero_prior_on_heldout(run_cache):
    res = run_cache.get(7).normalised
    ds = run_cache.ds
    x1 = res.targets(ds.heldout)
    cond = conditions(ds.heldout, ds, res.cfg.window)
    mu = res.nets.mean_sequence(x1[:, 0], cond).data
    assert prior_nll(x1, mu) < prior_nll(x1, np.zeros_like(x1))


@pytest.mark.slow
def test_heldout_cfm_loss_drops_fivefold(run_cache):
    ds, cfg = run_cache.ds, run_cache.cfg
    trained = run_cache.get(7).normalised
    initial = train_sampler(ds, trained.ae, replace(cfg, epochs_sampler=0))
    before, after = heldout_cfm_loss(initial, ds), heldout_cfm_loss(trained, ds)
    print(f"held-out cfm loss {before:.4f} -> {after:.4f} (x{before / after:.2f})")
    assert after * 5 <= before
