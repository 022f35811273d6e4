import numpy as np
import pytest

import tof


def test_whittaker_keeps_lines():
    y = [0.5 + 0.1 * t for t in range(12)]
    np.testing.assert_allclose(tof.whittaker_smooth(y, 800.0), y, atol=1e-8)


def test_synth_plot_shapes():
    plot = tof.synth_plot(seed=3, cover=0.2)
    assert plot["stack"].shape == (24, 14, 14, 16)
    assert plot["stack"].dtype == np.float32
    assert plot["label"].shape == (14, 14)
    assert set(np.unique(plot["label"])) <= {0, 1}


def test_network_predict_range_and_checkpoint(tmp_path):
    net = tof.Network(seed=1, config={"hidden_per_direction": 4, "fpa_width": 8, "conv_block_width": 8})
    x = tof.synth_plot(seed=4)["stack"][::6].astype(np.float64)
    p = net.predict(x)
    assert p.shape == (14, 14)
    assert np.all((p > 0) & (p < 1))
    net.save(str(tmp_path / "ck"), 0.4)
    loaded, threshold = tof.Network.load(str(tmp_path / "ck"))
    assert threshold == 0.4
    np.testing.assert_array_equal(loaded.predict(x), p)
    scene = np.concatenate([x, x], axis=2)
    assert net.predict_scene(scene).shape == (14, 28)


def test_metrics():
    truth = np.zeros((3, 3), np.uint8)
    pred = np.zeros((3, 3), np.uint8)
    truth[0, 0] = 1
    pred[1, 1] = 1
    c = tof.tolerant_confusion(truth, pred)
    assert (c["tp"], c["fp"], c["fn"]) == (1, 0, 0)
    ua, pa = tof.users_producers(0, 0, 3)
    assert ua is None and pa == 0.0
    assert tof.select_threshold([0.1, 0.1, 0.9], [0, 0, 1]) == 0.5


def test_errors_map_to_python():
    with pytest.raises(ValueError):
        tof.select_threshold([0.2, 0.3], [1, 1])
    with pytest.raises(ValueError):
        tof.Network(config={"hidden_per_direction": 0})
    assert tof.cli(["frobnicate"]) == 2
