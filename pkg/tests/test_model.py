"""Full pipeline: invariances, batching, gradients."""

import numpy as np
import pytest
from conftest import tiny_config, tiny_scenes

from starcast.geometry import Pose
from starcast.model import ModelConfig, Sample, TrajectoryModel, prepare_sample, to_global_prediction
from starcast.nn.gradcheck import check_param_gradients
from starcast.scene import PositionTrack, Scene
from starcast.training import LossConfig, batch_loss


def _model(seed=0, **kw):
    m = TrajectoryModel(tiny_config(**kw), seed=seed)
    m.eval()
    return m


def _prepared(model, scenes, targets=None):
    return [prepare_sample(Sample(s, targets or s.agent_ids), model.cfg) for s in scenes]


def relabel(scene: Scene, mapping, order):
    """Copy of ``scene`` with agent ids renamed by ``mapping`` and tracks listed in ``order``."""
    tracks = {t.agent_id: t for t in scene.tracks}
    new = [PositionTrack(mapping[a], tracks[a].kind, tracks[a].points, tracks[a].valid) for a in order]
    return Scene(new, {mapping[a]: f for a, f in scene.futures.items()}, scene.map, scene.dt)


class TestForward:
    def test_output_shapes(self):
        m = _model()
        data = _prepared(m, tiny_scenes(2))
        preds, out = m.predict(data)
        assert out.positions.shape == (6, 2, 6, 2)
        assert len(preds) == 6
        for p in preds:
            assert p.scores.sum() == pytest.approx(1.0, abs=1e-6)

    @pytest.mark.parametrize("joint", [False, True])
    def test_batching_equivalence(self, joint):
        m = _model()
        data = _prepared(m, tiny_scenes(3))
        together = m.predict(data, joint)[1].positions.data
        alone = np.concatenate([m.predict([d], joint)[1].positions.data for d in data])
        np.testing.assert_allclose(together, alone, atol=1e-6)

    def test_single_mode_ignores_other_targets(self):
        m = _model()
        scene = tiny_scenes(1)[0]
        full = m.predict(_prepared(m, [scene]))[1].positions.data
        one = m.predict(_prepared(m, [scene], [scene.agent_ids[1]]))[1].positions.data
        np.testing.assert_allclose(one[0], full[1], atol=1e-12)

    def test_joint_differs_from_single(self):
        m = _model()
        data = _prepared(m, tiny_scenes(1))
        a = m.predict(data, False)[1].positions.data
        b = m.predict(data, True)[1].positions.data
        assert np.abs(a - b).max() > 0

    def test_global_prediction_round_trip(self):
        m = _model()
        data = _prepared(m, tiny_scenes(1))
        preds, out = m.predict(data)
        g = to_global_prediction(preds[0], out.frames[0].pose)
        np.testing.assert_allclose(out.frames[0].pose.to_local(g.modes), preds[0].modes, atol=1e-9)

    def test_config_round_trip(self):
        cfg = tiny_config()
        assert ModelConfig.from_dict(cfg.to_dict()) == cfg
        assert ModelConfig.from_dict(cfg.to_dict()).fingerprint() == cfg.fingerprint()


class TestInvariances:
    @pytest.mark.parametrize("joint", [False, True])
    def test_agent_relabeling_equivariance(self, joint):
        m = _model()
        scene = tiny_scenes(1, agents=3, templates=("intersection",))[0]
        ids = scene.agent_ids
        mapping = {ids[0]: 40, ids[1]: 7, ids[2]: 19}
        order = [ids[2], ids[0], ids[1]]
        moved = relabel(scene, mapping, order)
        base = m.predict(_prepared(m, [scene], ids), joint)[1].positions.data
        targets = [mapping[a] for a in order]
        got = m.predict(_prepared(m, [moved], targets), joint)[1].positions.data
        for i, a in enumerate(order):
            np.testing.assert_allclose(got[i], base[ids.index(a)], atol=1e-6)

    @pytest.mark.parametrize("joint", [False, True])
    @pytest.mark.parametrize("pose", [Pose(120.0, -45.0, 2.1), Pose(-3.0, 900.0, -0.7)])
    def test_rigid_motion_invariance(self, joint, pose):
        m = _model()
        scene = tiny_scenes(1, templates=("curve",))[0]
        a = m.predict(_prepared(m, [scene]), joint)[1].positions.data
        b = m.predict(_prepared(m, [scene.transformed(pose)]), joint)[1].positions.data
        np.testing.assert_allclose(a, b, atol=1e-6)


class TestGradients:
    @pytest.mark.parametrize("joint", [False, True])
    def test_end_to_end_finite_differences(self, joint):
        m = TrajectoryModel(tiny_config(max_vectors=2), seed=1)
        m.train()
        data = _prepared(m, tiny_scenes(2, agents=2))
        params = list(m.store.params.values())

        def loss():
            return batch_loss(m.forward(data, joint), LossConfig())[0]

        err = check_param_gradients(loss, params, eps=1e-6, max_entries=3, rng=np.random.default_rng(0))
        assert err < 1e-3

    def test_gradient_reaches_encoders(self):
        m = TrajectoryModel(tiny_config(), seed=0)
        m.train()
        loss = batch_loss(m.forward(_prepared(m, tiny_scenes(2)), True), LossConfig())[0]
        loss.backward()
        for name in ("pos_enc.out.weight", "map_embed.weight", "star.gat0.proj.weight", "interaction.q.weight", "joint.v.weight"):
            assert np.linalg.norm(m.store.params[name].grad) > 0, name
