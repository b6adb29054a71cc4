import csv

import numpy as np
import pytest
import torch

from stdvos import ablate
from stdvos.attention import AttentionConfig
from stdvos.config import ExperimentConfig
from stdvos.losses import LossConfig
from stdvos.metrics import EvalReport
from stdvos.model import ModelConfig, STDNet
from stdvos.pipeline import (evaluate_outputs, gt_trajectories, load_predicted_masks, run_pipeline,
                             run_video)
from stdvos.segmenter import prompts_from_trajectories
from stdvos.stub_server import serve_stub
from stdvos.synthetic import easy_scene, generate, save
from stdvos.train import TrainConfig, Trainer, clip_indices

ATTN = AttentionConfig(n_heads=2, n_levels=2, k_intra=2, k_inter=2, radius=1, channels=8, n_layers=1,
                       ffn_dim=8, fusion_hidden=4)
MODEL = ModelConfig(num_queries=4, dec_layers=1, dec_points=2, reid_dim=4, first_stride=8, backbone_hidden=8)


@pytest.fixture(scope="module")
def videos():
    return [generate(easy_scene(900 + i, n_frames=6, size=48)) for i in range(3)]


def test_gt_prompts_cover_every_visible_object(videos):
    v = videos[0]
    prompts = prompts_from_trajectories(gt_trajectories(v))
    assert len(prompts) == sum(v.present(k, t) for k in range(2) for t in range(v.n_frames))


def test_written_masks_match_prompts_and_rescore(tmp_path, videos):
    names = ["a", "b", "c"]
    for v, n in zip(videos, names):
        save(v, tmp_path / "data" / n)
    report, results = run_pipeline(videos, names, tmp_path / "out", prompts_from_gt=True, jitter=0.1, seed=2)
    for r, v in zip(results, videos):
        pngs = list((tmp_path / "out" / r.name / "masks").glob("track*/*.png"))
        assert len(pngs) == len(r.masks)
        back = load_predicted_masks(tmp_path / "out" / r.name, v.n_frames, v.size)
        assert len(back) == len(r.trajectories)
    assert evaluate_outputs(tmp_path / "out", tmp_path / "data").row() == report.row()


def test_reruns_are_bitwise_identical(tmp_path, videos):
    run_pipeline(videos, ["a", "b", "c"], tmp_path / "one", prompts_from_gt=True, jitter=0.1, seed=5)
    run_pipeline(videos, ["a", "b", "c"], tmp_path / "two", prompts_from_gt=True, jitter=0.1, seed=5)
    files = sorted(p.relative_to(tmp_path / "one") for p in (tmp_path / "one").rglob("*") if p.is_file())
    assert files
    for f in files:
        assert (tmp_path / "one" / f).read_bytes() == (tmp_path / "two" / f).read_bytes()


def test_remote_backend_through_the_pipeline(videos):
    with serve_stub() as (url, state):
        res = run_video(videos[0], "a", prompts_from_gt=True, segmenter=f"remote:{url}", jobs=3)
    assert state["requests"] == len(res.masks)
    assert res.masks == sorted(res.masks, key=lambda m: (m.frame, m.track_id))


def test_untrained_model_runs_end_to_end(videos):
    torch.manual_seed(0)
    model = STDNet(ATTN, MODEL).eval()
    report, results = run_pipeline(videos[:1], ["a"], model=model)
    assert 0 <= report.jf <= 1
    assert results[0].id_switches >= 0


def test_pipeline_needs_a_model_without_gt(videos):
    with pytest.raises(ValueError):
        run_video(videos[0])


# -- training ----------------------------------------------------------------------

def test_clip_indices_replicate_edges():
    assert clip_indices(0, 2, 5) == [0, 0, 0, 1, 2]
    assert clip_indices(4, 1, 5) == [3, 4, 4]


def test_training_lowers_the_loss(videos):
    torch.manual_seed(0)
    model = STDNet(ATTN, MODEL)
    trainer = Trainer(model, videos, LossConfig(), TrainConfig(steps=50, lr=2e-3, batch_size=2), seed=0)
    totals = [r["total"] for r in trainer.run()]
    assert np.mean(totals[-10:]) < np.mean(totals[:10])


def test_resume_matches_an_uninterrupted_run(tmp_path, videos):
    def fresh():
        torch.manual_seed(0)
        return Trainer(STDNet(ATTN, MODEL), videos, LossConfig(), TrainConfig(steps=6, lr=1e-3, batch_size=2))

    straight = fresh().run()
    first = fresh()
    first.run(3)
    first.save(tmp_path / "ckpt")
    second = fresh()
    second.resume(tmp_path / "ckpt")
    tail = second.run(3)
    assert [r["step"] for r in tail] == [3, 4, 5]
    np.testing.assert_allclose([r["total"] for r in tail], [r["total"] for r in straight[3:]], rtol=1e-5)


# -- ablation harness ---------------------------------------------------------------

def _fake(cfg):
    jf = 0.5 + 0.01 * cfg.attention.radius + 0.001 * cfg.attention.k_inter + 0.02 * cfg.loss.use_contrastive
    return EvalReport(jf - 0.01, 0.9, jf + 0.01, 0.8)


@pytest.mark.parametrize("axis,values,rows", [("d", "0,1,2,3,4", 5), ("k_inter", "0,1,2,3,4,5,6", 7),
                                              ("tcl", "off,on", 2)])
def test_ablation_tables_have_the_published_shape(tmp_path, axis, values, rows):
    table = ablate.run_ablation(ExperimentConfig(), axis, values, [], [], [], tmp_path, evaluate_variant=_fake)
    parsed = list(csv.reader(table.open()))
    assert tuple(parsed[0]) == ablate.HEADERS[axis]
    assert len(parsed) == rows + 1
    assert all(len(r) == len(parsed[0]) for r in parsed)
    assert (tmp_path / f"{axis}_plot.png").stat().st_size > 0
    assert len((tmp_path / f"{axis}_plot.csv").read_text().splitlines()) == rows + 1
    assert len(ablate.REFERENCE[axis]) == rows


def test_tcl_rows_differ_only_in_the_contrastive_term():
    base = ExperimentConfig()
    off, on = ablate.variant(base, "tcl", "off"), ablate.variant(base, "tcl", "on")
    assert off.attention == on.attention and off.attention.radius == 0
    assert not off.loss.use_contrastive and on.loss.use_contrastive


@pytest.mark.parametrize("axis,raw", [("width", "1"), ("d", "x"), ("d", "-1"), ("tcl", "maybe"), ("d", "")])
def test_bad_ablation_values(axis, raw):
    with pytest.raises(ablate.AxisError):
        ablate.parse_values(axis, raw)
