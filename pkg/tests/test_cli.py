import filecmp

import pytest

from panofuse.cli import main
from panofuse.formats import read_labels


@pytest.fixture(scope="module")
def frame_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli") / "frame"
    assert main(["synth", str(d), "--seed", "5", "--objects", "3"]) == 0
    return d


def test_staged_equals_single_run(frame_dir, tmp_path):
    assert main(["run", str(frame_dir), "--dump", str(tmp_path / "one"), "--out", str(tmp_path / "p.lcpl")]) == 0
    for stage in ("project", "fuse", "voxelize", "propagate", "postprocess"):
        assert main([stage, str(frame_dir), "--dump", str(tmp_path / "two")]) == 0
    for name in ("pixel_map.lcft", "fused.lcft", "base.lcvg", "fused_grid.lcvg", "propagated.lcvg", "pred.lcpl"):
        assert filecmp.cmp(tmp_path / "one" / name, tmp_path / "two" / name, shallow=False), name
    assert read_labels(tmp_path / "p.lcpl").equals(read_labels(frame_dir / "gt.lcpl"))


def test_evaluate(frame_dir, tmp_path, capsys):
    corpus = tmp_path / "corpus"
    corpus.mkdir()
    assert main(["run", str(frame_dir), "--out", str(corpus / "f.pred.lcpl")]) == 0
    (corpus / "f.gt.lcpl").write_bytes((frame_dir / "gt.lcpl").read_bytes())
    capsys.readouterr()
    assert main(["evaluate", str(corpus), "--csv", str(tmp_path / "c.csv"), "--per-frame", str(tmp_path / "f.csv")]) == 0
    out = capsys.readouterr().out
    assert "pq = 1.000000000" in out
    assert (tmp_path / "c.csv").read_text().startswith("class_id,name,thing,pq")
    assert (tmp_path / "f.csv").read_text().splitlines()[1].startswith("f,1.000000")


def test_exit_codes(frame_dir, tmp_path):
    empty = tmp_path / "empty"
    empty.mkdir()
    assert main(["evaluate", str(empty)]) == 2
    (empty / "x.gt.lcpl").write_bytes(b"garbage")
    assert main(["evaluate", str(empty)]) == 3
    assert main(["run", str(tmp_path / "missing")]) == 3
    assert main(["run", str(frame_dir), "--grid", "kitti-60m"]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["run"])
    assert exc.value.code == 2


def test_config_overrides_flags(frame_dir, tmp_path):
    cfg = tmp_path / "cfg.txt"
    cfg.write_text("# stricter centres\nnms-threshold = 1.5\n")
    out = tmp_path / "p.lcpl"
    assert main(["run", str(frame_dir), "--nms-threshold", "0.1", "--config", str(cfg), "--out", str(out)]) == 0
    # no centre reaches 1.5, so no instances are produced
    assert read_labels(out).n_instances == 0
    cfg.write_text("bogus = 1\n")
    assert main(["run", str(frame_dir), "--config", str(cfg)]) == 2
    cfg.write_text("pool = median\n")
    assert main(["run", str(frame_dir), "--config", str(cfg)]) == 2
