import math

import numpy as np
import pytest

from ichloc.core import DetectorParams, ParameterError
from ichloc.morphology import detect_peaks, local_maxima
from ichloc.synth import BagConfig, SceneConfig, generate_bags, generate_scene, generate_scenes, scene_id


def test_zero_blobs_is_pure_noise():
    cfg = SceneConfig(blob_count=(0, 0), noise=0.02, seed=1)
    m, boxes = generate_scene(cfg, 0)
    assert boxes == []
    assert m.shape == (64, 64)
    assert np.all((0 <= m) & (m < 0.02))


def test_single_blob_peak_equals_amplitude():
    cfg = SceneConfig(blob_count=(1, 1), amplitude=(1.0, 1.0), noise=0.0, seed=2)
    for i in range(10):
        m, (box,) = generate_scene(cfg, i)
        r, c = np.unravel_index(np.argmax(m), m.shape)
        assert m[r, c] == 1.0
        assert box.contains(c, r)
        # box is centred on the blob with half-width ceil(3 sigma) <= ceil(9)
        assert box.x0 <= c - 5 and c + 5 < box.x1


def test_scene_determinism():
    cfg = SceneConfig(seed=3)
    a, ba = generate_scene(cfg, 17)
    b, bb = generate_scene(cfg, 17)
    assert a.tobytes() == b.tobytes() and ba == bb
    c, _ = generate_scene(cfg, 18)
    assert a.tobytes() != c.tobytes()


def test_scene_invariants():
    cfg = SceneConfig(seed=4)
    maps, boxes = generate_scenes(cfg, range(100))
    assert list(maps) == [scene_id(i) for i in range(100)]
    for sid, m in maps.items():
        assert np.all(m >= 0)
        mine = [b for b in boxes if b.slice_id == sid]
        assert 1 <= len(mine) <= 3
        peaks = [(int(p[0][1]), int(p[0][0])) for p in local_maxima(m) if m[tuple(p[0])] > 0.25]
        for b in mine:
            assert b.x1 <= 64 and b.y1 <= 64
            # the blob's own maximum lies inside its box
            assert any(b.contains(x, y) for x, y in peaks)
        centres = [((b.x0 + b.x1 - 1) / 2, (b.y0 + b.y1 - 1) / 2) for b in mine
                   if b.x0 > 0 and b.y0 > 0 and b.x1 < 64 and b.y1 < 64]
        for i, (x1, y1) in enumerate(centres):
            for x2, y2 in centres[i + 1:]:
                assert math.hypot(x1 - x2, y1 - y2) >= 4 * cfg.sigma[1]


def test_scene_detectable_with_default_noise():
    cfg = SceneConfig(seed=5)
    m, boxes = generate_scene(cfg, 0)
    dets = detect_peaks(m, DetectorParams(h=0.1, T=0.2, d=5))
    assert len(dets) == len(boxes)


def test_placement_error():
    from ichloc.synth import PlacementError

    cfg = SceneConfig(rows=32, cols=32, blob_count=(3, 3), sigma=(3.0, 3.0), seed=0)
    with pytest.raises(PlacementError):
        for i in range(50):
            generate_scene(cfg, i, max_attempts=3)


def test_scene_config_validation():
    with pytest.raises(ParameterError):
        SceneConfig(rows=16)
    with pytest.raises(ParameterError):
        SceneConfig(blob_count=(3, 1))
    with pytest.raises(ParameterError):
        SceneConfig(sigma=(0.0, 1.0))
    with pytest.raises(ParameterError):
        SceneConfig(noise=-1)


def test_bags_all_negative():
    bags = generate_bags(BagConfig(seed=1), 0, 20)
    assert [y for _, y in bags] == [0] * 20
    assert all(not b.instance_labels.any() for b, _ in bags)


def test_bags_witness_near_mean():
    cfg = BagConfig(seed=2)
    wm, _ = cfg.witness_means()
    for bag, y in generate_bags(cfg, 100, 0):
        assert y == 1
        dist = np.linalg.norm(bag.H - wm, axis=1)
        assert 1 <= bag.instance_labels.sum() <= 3
        assert np.all(dist[bag.instance_labels] <= 0.5)
        assert bag.K == 16 and bag.M == 8 and (bag.grid_rows, bag.grid_cols) == (4, 4)


def test_bags_deterministic():
    a = generate_bags(BagConfig(seed=3), 5, 5)
    b = generate_bags(BagConfig(seed=3), 5, 5)
    for (ba, ya), (bb, yb) in zip(a, b):
        assert ya == yb and ba.H.tobytes() == bb.H.tobytes()


def test_bag_config_validation():
    with pytest.raises(ParameterError):
        BagConfig(K=16, grid=(3, 3))
    with pytest.raises(ParameterError):
        BagConfig(M=2, witness_mean=(0.5, 0.5))
    with pytest.raises(ParameterError):
        BagConfig(witnesses=(0, 2))
