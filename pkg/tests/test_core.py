import numpy as np
import pytest
from hypothesis import given, strategies as st

from labelflow.core import (VOID_ID, ConfidenceMap, FlowField, FrameTimeline,
                            LabelMask, PseudoLabel, nearest_key_frame,
                            validate_timeline)


def make_timeline(frames, keys, fps=30.0, missing_step=None):
    phase_of = {f: 0 for f in frames}
    step_of = {f: 0 for f in frames}
    if missing_step is not None:
        step_of.pop(missing_step)
    return FrameTimeline("v", fps, tuple(frames), frozenset(keys), phase_of, step_of)


class TestValidateTimeline:
    def test_well_formed_timeline_passes(self):
        frames = range(0, 90)
        t = make_timeline(frames, keys=[0, 30, 60], fps=30.0)
        assert validate_timeline(t) == []

    def test_stray_key_frame_named(self):
        t = make_timeline([0, 1, 2], keys=[0, 7])
        violations = validate_timeline(t)
        assert len(violations) == 1
        assert "7" in violations[0]

    def test_missing_step_reported(self):
        t = make_timeline([0, 1], keys=[0], missing_step=1)
        violations = validate_timeline(t)
        assert any("missing step" in v for v in violations)

    def test_non_increasing_frames(self):
        t = make_timeline([0, 2, 1], keys=[0])
        assert any("strictly increasing" in v for v in validate_timeline(t))

    def test_bad_fps(self):
        t = make_timeline([0], keys=[0], fps=-1)
        assert any("fps" in v for v in validate_timeline(t))


class TestNearestKeyFrame:
    @pytest.mark.parametrize("f, expected", [
        (10, (0, 10)),
        (15, (0, 15)),  # equidistant tie breaks toward the earlier key
        (30, (30, 0)),
        (29, (30, -1)),
    ])
    def test_examples(self, f, expected):
        t = make_timeline(range(31), keys=[0, 30])
        assert nearest_key_frame(t, f) == expected

    def test_empty_keys_raises(self):
        t = make_timeline([0, 1], keys=[])
        with pytest.raises(ValueError):
            nearest_key_frame(t, 0)

    def test_frame_not_in_timeline(self):
        t = make_timeline([0, 1], keys=[0])
        with pytest.raises(ValueError):
            nearest_key_frame(t, 99)

    @given(st.sets(st.integers(0, 200), min_size=1, max_size=12))
    def test_distance_bounded_by_half_max_gap(self, keys):
        frames = list(range(0, 201))
        t = make_timeline(frames, keys=keys)
        ks = sorted(keys)
        gaps = [b - a for a, b in zip(ks, ks[1:])]
        half_gap = max(gaps) / 2 if gaps else 0
        for f in range(ks[0], ks[-1] + 1):
            _, d = nearest_key_frame(t, f)
            assert abs(d) <= max(half_gap, 0.5)


class TestLabelMask:
    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            LabelMask(4, 4, np.zeros((3, 4), np.uint8))

    def test_instance_requires_class_mapping(self):
        data = np.full((2, 2), 7, np.uint8)
        with pytest.raises(ValueError, match="without class"):
            LabelMask(2, 2, data, kind="instance", class_of_instance={})
        m = LabelMask(2, 2, data, kind="instance", class_of_instance={7: 1})
        assert (m.class_raster() == 1).all()

    def test_immutable(self):
        m = LabelMask(2, 2, np.zeros((2, 2), np.uint8))
        with pytest.raises(ValueError):
            m.data[0, 0] = 1

    def test_label_ids_exclude_void(self):
        data = np.array([[1, VOID_ID], [2, 1]], np.uint8)
        assert LabelMask(2, 2, data).label_ids() == [1, 2]


class TestFlowField:
    def test_rejects_non_finite(self):
        fx = np.zeros((2, 2), np.float32)
        fx_bad = fx.copy()
        fx_bad[0, 0] = np.inf
        with pytest.raises(ValueError):
            FlowField(2, 2, fx_bad, fx, (0, 1))

    def test_rejects_dim_mismatch(self):
        with pytest.raises(ValueError):
            FlowField(3, 2, np.zeros((2, 2)), np.zeros((2, 2)), (0, 1))


class TestConfidenceMap:
    def test_range_enforced(self):
        with pytest.raises(ValueError):
            ConfidenceMap(2, 2, np.full((2, 2), 1.5))

    def test_full(self):
        c = ConfidenceMap.full(3, 2, 0.5)
        assert c.c.shape == (2, 3) and float(c.c[0, 0]) == 0.5


class TestPseudoLabel:
    def _mask(self):
        return LabelMask(2, 2, np.zeros((2, 2), np.uint8))

    def test_key_frame_weight_dichotomy(self):
        conf = ConfidenceMap.full(2, 2)
        with pytest.raises(ValueError):
            PseudoLabel(self._mask(), conf, 0.03, 0, 0)  # hop 0 must be weight 1
        pl = PseudoLabel(self._mask(), conf, 1.0, 0, 0)
        assert pl.loss_weight == 1.0
        pl = PseudoLabel(self._mask(), conf, 0.03, 0, 5)
        assert pl.loss_weight == 0.03
