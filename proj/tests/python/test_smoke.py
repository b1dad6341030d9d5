import json
import math
import os
import pathlib

import pytest

import metasched

FIXTURES = pathlib.Path(os.environ.get("METASCHED_FIXTURE_DIR", pathlib.Path(__file__).parent.parent / "fixtures"))


def test_param_count():
    assert metasched.param_count(40) == 14881
    assert metasched.param_count(5) == 286


def test_forward_stays_inside_the_bound():
    theta = metasched.init_params(5, 2.0, 3)
    h = c = None
    for loss in [2.3, 1.1, 0.4, 1e6, 0.0]:
        alpha, h, c = metasched.mlrsnet_forward(5, 2.0, theta, loss, h, c)
        assert 0.0 < alpha < 2.0
        assert len(h) == 5 and len(c) == 5


def test_zero_network_gives_half_gamma():
    theta = [0.0] * metasched.param_count(4)
    alpha, _, _ = metasched.mlrsnet_forward(4, 3.0, theta, 1.0)
    assert alpha == 1.5
    grad = metasched.mlrsnet_backward_theta(4, 3.0, theta, 1.0)
    assert grad[-1] == pytest.approx(0.75, rel=1e-15)


def test_backward_matches_central_differences():
    theta = metasched.init_params(3, 1.0, 8)
    grad = metasched.mlrsnet_backward_theta(3, 1.0, theta, 0.7)
    for j in [0, 10, len(theta) - 4, len(theta) - 1]:
        eps = 1e-6 * (1 + abs(theta[j]))
        up, down = list(theta), list(theta)
        up[j] += eps
        down[j] -= eps
        fd = (metasched.mlrsnet_forward(3, 1.0, up, 0.7)[0] - metasched.mlrsnet_forward(3, 1.0, down, 0.7)[0]) / (2 * eps)
        assert abs(fd - grad[j]) <= 1e-6 * (abs(fd) + abs(grad[j])) + 1e-10


def test_fixture_checkpoint():
    ckpt = metasched.load_checkpoint(FIXTURES / "mlrsnet_h5_seed42.json")
    assert ckpt["hidden_size"] == 5
    assert ckpt["theta"] == metasched.init_params(5, 1.0, 42)
    assert math.fsum(ckpt["theta"]) == pytest.approx(2.5107816196996384, rel=1e-13)


def test_schedules():
    assert metasched.schedule_lr({"kind": "fixed", "lr": 0.1}, 500) == 0.1
    assert metasched.schedule_lr({"kind": "multistep", "lr0": 0.1, "period_epochs": 60, "factor": 0.1}, 60) == pytest.approx(0.01)
    sgdr = {"kind": "sgdr", "eta_max": 0.1, "eta_min": 1e-5, "t0": 10, "t_mult": 2}
    assert metasched.schedule_lr(sgdr, 0) == 0.1
    assert metasched.schedule_lr(sgdr, 5) == pytest.approx(0.050005, abs=1e-15)
    assert metasched.schedule_lr(sgdr, 30) == 0.1
    with pytest.raises(metasched.ConfigError):
        metasched.schedule_lr({"kind": "fixed", "lr": -1}, 0)


def test_transfer_plan():
    assert metasched.select_checkpoint_epochs(200, 3) == [1, 100, 200]
    assert metasched.transfer_boundaries(3, 100) == [0, 33, 67, 100]


def test_run_experiment_is_deterministic():
    config = {
        "dataset": {"n_train": 96, "n_test": 40, "dim": 3, "classes": 2, "seed": 4},
        "training": {"epochs": 2, "batch_size": 32},
        "meta": {"hidden_size": 3, "t_val": 2, "val_batch_size": 8},
        "seeds": [1],
    }
    a = metasched.run_experiment(config, 1)
    b = metasched.run_experiment(json.dumps(config), 1)
    assert not a["diverged"]
    assert a["metrics_csv"] == b["metrics_csv"]
    assert len(a["checkpoints"]) == 2
    rows = metasched.parse_metrics_csv(a["metrics_csv"])
    assert rows == a["metrics"]
    assert all(0.0 < r["lr"] < 1.0 for r in rows if r["phase"] == "train")


def test_cli_exit_codes():
    assert metasched.run_cli(["--definitely-not-a-flag"])[0] == 2
    code, out, _ = metasched.run_cli(["gradcheck", "--instances", "1"])
    assert code == 0
    assert "FAIL" not in out
