"""Training harness: loss identities, metrics, sampler, schedule, checkpoint,
smoke training and bit-exact resume."""
import numpy as np
import pytest

from fmionet import tensor as T
from fmionet.batching import BatchSpec, EpochSampler
from fmionet.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from fmionet.fields import gen_random_fields
from fmionet.losses import LossSpec, lp_loss, mae, r2, radial_diff, derivative_mask
from fmionet.records import ScalarParams
from fmionet.schedule import snapshot_schedule
from fmionet.simulator import GridSpec, simulate_case
from fmionet.tensor import Tensor
from fmionet.training import (
    ExperimentConfig,
    MetricsReport,
    SnapshotMetric,
    evaluate_unseen_time,
    lr_schedule,
    model_from_checkpoint,
    resolve_time_subset,
    train,
)


def make_dataset(n_cases=6, nz=8, nr=16, seed=0, schedule=None):
    sched = schedule or snapshot_schedule()
    grid = GridSpec(nz=nz, nr=nr)
    records = []
    for i in range(n_cases):
        rng = np.random.default_rng(seed * 1000 + i)
        thick = float(rng.uniform(50, 200))
        fields = gen_random_fields(rng, nz, nr, thickness=thick)
        scalars = ScalarParams.sample(rng, thickness=thick)
        records.append(simulate_case(fields, scalars, sched, grid))
    return records


@pytest.fixture(scope="module")
def tiny_dataset():
    return make_dataset()


# ---------------------------------------------------------------- loss identities

def t64(x):
    return Tensor(np.asarray(x, dtype=np.float64))


def test_lp_loss_zero_on_perfect_prediction():
    rng = np.random.default_rng(0)
    y = rng.uniform(0, 1, (2, 4, 6))
    mask = np.ones((2, 4, 6))
    loss = lp_loss(t64(y), y, mask)
    assert loss.item() == pytest.approx(0.0, abs=1e-12)


def test_lp_loss_beta0_double_prediction_is_one():
    rng = np.random.default_rng(1)
    y = rng.uniform(0.5, 1.0, (3, 4, 6))
    loss = lp_loss(t64(2 * y), y, np.ones_like(y), LossSpec(beta=0.0))
    assert loss.item() == pytest.approx(1.0, rel=1e-7)


def lp_loss_oracle(pred, y, mask, p=2.0, beta=0.5, eps=1e-8):
    """Independent scripted evaluation of the loss formula."""
    total = 0.0
    for b in range(pred.shape[0]):
        e = (pred[b] - y[b]) * mask[b]
        ym = y[b] * mask[b]
        d0 = (np.abs(e) ** p).sum() ** (1 / p) / ((np.abs(ym) ** p).sum() ** (1 / p) + eps)
        dm = derivative_mask(mask[b] > 0).astype(float)
        dp_ = radial_diff(pred[b]) * dm
        dy = radial_diff(y[b]) * dm
        d1 = (np.abs(dp_ - dy) ** p).sum() ** (1 / p) / ((np.abs(dy) ** p).sum() ** (1 / p) + eps)
        total += d0 + beta * d1
    return total / pred.shape[0]


def test_lp_loss_matches_hand_oracle():
    rng = np.random.default_rng(2)
    y = rng.uniform(0, 1, (1, 2, 3))
    pred = rng.uniform(0, 1, (1, 2, 3))
    mask = np.ones((1, 2, 3))
    got = lp_loss(t64(pred), y, mask, LossSpec(p=2, beta=0.5)).item()
    want = lp_loss_oracle(pred, y, mask)
    assert got == pytest.approx(want, rel=1e-10)


def test_lp_loss_masked_region_irrelevant():
    rng = np.random.default_rng(3)
    y = rng.uniform(0, 1, (2, 4, 6))
    mask = np.zeros((2, 4, 6))
    mask[:, :2] = 1.0
    pred_a = y.copy()
    pred_b = y.copy()
    pred_b[:, 2:] += 100.0  # outside the mask
    la = lp_loss(t64(pred_a), y, mask).item()
    lb = lp_loss(t64(pred_b), y, mask).item()
    assert la == pytest.approx(lb, abs=1e-12)


def test_lp_loss_general_p():
    rng = np.random.default_rng(4)
    y = rng.uniform(0.2, 1, (1, 3, 4))
    pred = rng.uniform(0.2, 1, (1, 3, 4))
    got = lp_loss(t64(pred), y, np.ones_like(y), LossSpec(p=3, beta=0.25)).item()
    want = lp_loss_oracle(pred, y, np.ones_like(y), p=3, beta=0.25)
    assert got == pytest.approx(want, rel=1e-9)


def test_lp_loss_is_differentiable():
    rng = np.random.default_rng(5)
    y = rng.uniform(0, 1, (2, 4, 6))
    pred = Tensor(rng.uniform(0, 1, (2, 4, 6)), requires_grad=True, dtype=np.float64)
    loss = lp_loss(pred, y, np.ones_like(y))
    loss.backward()
    assert pred.grad is not None and np.isfinite(pred.grad).all()


def test_loss_spec_validation():
    with pytest.raises(ValueError):
        LossSpec(p=0.5)
    with pytest.raises(ValueError):
        LossSpec(beta=-1)


# ---------------------------------------------------------------- metrics

def test_r2_mae_perfect_prediction():
    y = np.random.default_rng(6).uniform(0, 1, (3, 4))
    mask = np.ones((3, 4), dtype=bool)
    assert r2(y, y, mask) == 1.0
    assert mae(y, y, mask) == 0.0


def test_r2_of_mean_prediction_is_zero():
    y = np.random.default_rng(7).uniform(0, 1, (50,))
    pred = np.full_like(y, y.mean())
    assert r2(y, pred, np.ones_like(y, dtype=bool)) == pytest.approx(0.0, abs=1e-12)


def test_r2_mae_hand_case():
    y = np.array([1.0, 2.0, 3.0])
    pred = np.array([1.0, 2.0, 4.0])
    mask = np.ones(3, dtype=bool)
    assert mae(y, pred, mask) == pytest.approx(1.0 / 3.0)
    assert r2(y, pred, mask) == pytest.approx(0.5)


def test_r2_zero_variance_sentinel():
    y = np.ones(10)
    assert np.isnan(r2(y, y + 0.1, np.ones(10, dtype=bool)))


def test_metrics_ignore_out_of_mask_values():
    rng = np.random.default_rng(8)
    y = rng.uniform(0, 1, (4, 5))
    pred = y + rng.normal(0, 0.1, (4, 5))
    mask = rng.uniform(0, 1, (4, 5)) > 0.4
    y2 = y.copy()
    pred2 = pred.copy()
    y2[~mask] = 77.0
    pred2[~mask] = -55.0
    assert r2(y, pred, mask) == r2(y2, pred2, mask)
    assert mae(y, pred, mask) == mae(y2, pred2, mask)


# ---------------------------------------------------------------- sampler

def test_sampler_full_schedule_every_step():
    spec = BatchSpec(batch_case=4, batch_time=24)
    sampler = EpochSampler(12, range(24), spec, np.random.default_rng(0))
    for _, tchunk in sampler.epoch():
        assert sorted(tchunk.tolist()) == list(range(24))


def test_sampler_single_snapshot_per_step():
    spec = BatchSpec(batch_case=2, batch_time=1)
    sampler = EpochSampler(6, range(24), spec, np.random.default_rng(1))
    for _, tchunk in sampler.epoch():
        assert tchunk.size == 1


def test_sampler_chunks_are_distinct_and_counts_even():
    spec = BatchSpec(batch_case=1, batch_time=8)
    seen = list(range(24))
    sampler = EpochSampler(24, seen, spec, np.random.default_rng(2))
    counts = {i: 0 for i in seen}
    for _, tchunk in sampler.epoch():
        assert len(set(tchunk.tolist())) == 8
        for t in tchunk:
            counts[int(t)] += 1
    values = list(counts.values())
    assert max(values) - min(values) <= 1


def test_sampler_cases_partition_each_epoch():
    spec = BatchSpec(batch_case=4, batch_time=2)
    sampler = EpochSampler(10, range(4), spec, np.random.default_rng(3))
    cases = np.concatenate([c for c, _ in sampler.epoch()])
    assert sorted(cases.tolist()) == list(range(10))


def test_sampler_rejects_oversized_batch_time():
    with pytest.raises(ValueError):
        EpochSampler(4, range(6), BatchSpec(batch_time=8), np.random.default_rng(0))


# ---------------------------------------------------------------- lr schedule

def test_lr_schedule_values():
    assert lr_schedule(0) == 0.001
    assert lr_schedule(5, decay=1.0) == 0.001
    assert lr_schedule(2, decay=0.9) == pytest.approx(0.00081)
    with pytest.raises(ValueError):
        lr_schedule(1, decay=0.0)


def test_resolve_time_subset():
    assert resolve_time_subset(None) == tuple(range(24))
    assert resolve_time_subset("half") == tuple(range(0, 24, 2))
    assert resolve_time_subset([3, 1, 2]) == (1, 2, 3)
    with pytest.raises(ValueError):
        resolve_time_subset("nope")
    with pytest.raises(ValueError):
        resolve_time_subset([25])


# ---------------------------------------------------------------- checkpoint

def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(9)
    params = [("a.w", rng.standard_normal((3, 4)).astype(np.float32)),
              ("b.b", rng.standard_normal(5).astype(np.float64))]
    opt = [np.zeros((3, 4), dtype=np.float32), np.ones(5)]
    g = np.random.default_rng(42)
    g.standard_normal(10)
    path = tmp_path / "m.fmck"
    save_checkpoint(path, config={"kind": "test"}, params=params, opt_buffers=opt,
                    opt_scalars={"t": 3, "lr": 1e-3, "beta1": 0.9, "beta2": 0.999,
                                 "eps": 1e-8},
                    rng_state=g.bit_generator.state, extra={"note": 1})
    data = load_checkpoint(path)
    for (n0, a0), (n1, a1) in zip(params, data["params"]):
        assert n0 == n1 and np.array_equal(a0, a1) and a0.dtype == a1.dtype
    for a0, a1 in zip(opt, data["opt_buffers"]):
        assert np.array_equal(a0, a1)
    g2 = np.random.default_rng(0)
    g2.bit_generator.state = data["rng_state"]
    assert g2.standard_normal(3).tolist() == g.standard_normal(3).tolist()


def test_checkpoint_corruption_detected(tmp_path):
    path = tmp_path / "m.fmck"
    save_checkpoint(path, config={}, params=[("x", np.ones(4))], opt_buffers=[],
                    opt_scalars={}, rng_state={}, extra={})
    blob = bytearray(path.read_bytes())
    blob[30] ^= 0x55
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


# ---------------------------------------------------------------- training runs

def smoke_config(**kw):
    base = dict(model="fmionet", target="sg", epochs=1, batch_case=2, batch_time=4,
                seed=3, val_cases=2,
                model_overrides={"width": 8, "modes": (2, 2), "unet_width": 8,
                                 "branch2_widths": (16,), "trunk_widths": (16,)})
    base.update(kw)
    return ExperimentConfig(**base)


def test_one_epoch_smoke_run_writes_loadable_checkpoint(tmp_path, tiny_dataset):
    result = train(tiny_dataset, smoke_config(), tmp_path / "run")
    model, norm, exp, data = model_from_checkpoint(result.checkpoint_path)
    assert exp.model == "fmionet"
    assert data["extra"]["epoch"] == 1
    assert len(result.history) == 1
    rep = result.report
    assert rep.n_cases == 2 and len(rep.per_snapshot) == 24


def test_loss_decreases_over_epochs(tmp_path, tiny_dataset):
    medians = []
    for seed in (0, 1, 2):
        result = train(tiny_dataset, smoke_config(epochs=10, seed=seed, val_cases=0),
                       tmp_path / f"run{seed}")
        losses = [h["train_loss"] for h in result.history]
        medians.append(losses[-1] / losses[0])
    assert np.median(medians) < 1.0


def test_resume_bit_matches_uninterrupted(tmp_path, tiny_dataset):
    cfg = smoke_config(epochs=4)
    full = train(tiny_dataset, cfg, tmp_path / "full")
    part = train(tiny_dataset, smoke_config(epochs=2), tmp_path / "part")
    resumed = train(tiny_dataset, cfg, tmp_path / "resumed",
                    resume_from=part.checkpoint_path)
    a = load_checkpoint(full.checkpoint_path)
    b = load_checkpoint(resumed.checkpoint_path)
    for (n0, p0), (n1, p1) in zip(a["params"], b["params"]):
        assert n0 == n1
        assert np.array_equal(p0, p1), f"parameter {n0} differs after resume"
    for m0, m1 in zip(a["opt_buffers"], b["opt_buffers"]):
        assert np.array_equal(m0, m1)


def test_training_metrics_report_round_trip(tmp_path, tiny_dataset):
    result = train(tiny_dataset, smoke_config(), tmp_path / "run")
    path = tmp_path / "metrics.csv"
    result.report.to_csv(path)
    back = MetricsReport.from_csv(path)
    assert back.model == result.report.model
    assert back.n_cases == result.report.n_cases
    assert np.isclose(back.r2_all, result.report.r2_all, equal_nan=True)
    assert np.isclose(back.runtime_s, result.report.runtime_s)
    for s0, s1 in zip(result.report.per_snapshot, back.per_snapshot):
        assert (s0.index, s0.time_days, s0.seen) == (s1.index, s1.time_days, s1.seen)
        assert np.isclose(s0.r2, s1.r2, equal_nan=True)
        assert np.isclose(s0.mae, s1.mae, equal_nan=True)


def test_evaluate_unseen_time_tags_split(tmp_path, tiny_dataset):
    cfg = smoke_config(time_subset="half", batch_time=4)
    result = train(tiny_dataset, cfg, tmp_path / "run")
    report = evaluate_unseen_time(result.checkpoint_path, tiny_dataset)
    seen = [s for s in report.per_snapshot if s.seen]
    unseen = [s for s in report.per_snapshot if not s.seen]
    assert len(seen) == 12 and len(unseen) == 12
    assert all(s.index % 2 == 0 for s in seen)
    # seen-index metrics agree with a direct evaluation restricted to them
    direct = evaluate_unseen_time(result.checkpoint_path, tiny_dataset,
                                  seen=tuple(range(0, 24, 2)))
    for s0, s1 in zip(report.per_snapshot, direct.per_snapshot):
        assert s0.r2 == s1.r2


def test_train_all_model_kinds_smoke(tmp_path, tiny_dataset):
    for kind in ("ufno", "mionet", "mionet-fnn"):
        overrides = {}
        if kind == "ufno":
            overrides = {"width": 8, "modes": (2, 2), "unet_width": 8}
        elif kind in ("mionet", "mionet-fnn"):
            overrides = {"p": 32, "branch2_widths": (32,), "trunk_widths": (32,)}
        cfg = ExperimentConfig(model=kind, epochs=1, batch_case=2, batch_time=4,
                               seed=0, val_cases=2, model_overrides=overrides)
        result = train(tiny_dataset, cfg, tmp_path / kind)
        assert len(result.report.per_snapshot) == 24
        model, _, exp, _ = model_from_checkpoint(result.checkpoint_path)
        assert exp.model == kind
