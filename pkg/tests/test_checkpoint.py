import json

import pytest
import torch

from tactic_expert.checkpoint import decode_tensor, encode_tensor, load_checkpoint, save_checkpoint
from tactic_expert.errors import DataError
from tactic_expert.model import TacticExpertModel
from tactic_expert.verification import tiny_config


@pytest.mark.parametrize("dtype", [torch.float32, torch.float64, torch.int64])
def test_tensor_round_trip(dtype):
    t = (torch.randn(3, 4) * 1e3).to(dtype)
    back = decode_tensor(encode_tensor(t))
    assert back.dtype == dtype and torch.equal(back, t)


@pytest.mark.parametrize("dtype", ["float32", "float64"])
def test_model_round_trip(tmp_path, dtype):
    cfg = tiny_config(dtype=dtype, ablations=["-PE"])
    model = TacticExpertModel(cfg).to(torch.float64 if dtype == "float64" else torch.float32)
    with torch.no_grad():
        model.experts[1].patterns.normal_()
    p = save_checkpoint(tmp_path / "c.json", model, {"note": 1})
    back, extra = load_checkpoint(p)
    assert extra == {"note": 1} and back.cfg == cfg
    a, b = model.state_dict(), back.state_dict()
    assert a.keys() == b.keys()
    for k in a:
        assert a[k].dtype == b[k].dtype and torch.equal(a[k], b[k])


def test_rejects_foreign_json(tmp_path):
    p = tmp_path / "x.json"
    p.write_text(json.dumps({"format": "other"}))
    with pytest.raises(DataError):
        load_checkpoint(p)
