import re
from pathlib import Path

import pytest

from refuse.config import ConfigError, RunConfig
from refuse.model import ModelConfig
from refuse.training import TrainConfig


def test_readme_example_parses(tmp_path):
    readme = (Path(__file__).parents[1] / "README.md").read_text()
    ini = re.search(r"```ini\n(.*?)```", readme, re.S).group(1)
    (tmp_path / "run.ini").write_text(ini)
    cfg = RunConfig.load(tmp_path / "run.ini")
    assert cfg.seed == 1
    assert cfg.model_config() == ModelConfig()
    tc = cfg.train_config()
    assert (tc.margin, tc.learning_rate, tc.labels_per_batch, tc.epochs) == (0.2, 0.005, 300, 30)
    assert cfg.index_config().kind is None
    assert cfg.list_of("pool_sizes", int) == [1, 10]


def test_flags_override_file(tmp_path):
    (tmp_path / "a.ini").write_text("channels = 16\nseed = 3\n")
    cfg = RunConfig.load(tmp_path / "a.ini", {"seed": 9, "channels": None})
    assert cfg.seed == 9 and cfg.model_config().channels == 16
    assert cfg.requested_model_keys() == {"channels": 16}


@pytest.mark.parametrize("text", [
    "bogus = 1\n",
    "[a]\nk = 3\n[b]\nk = 4\n",
    "channels = lots\n",
    "scheme = MaskEverything\n",
    "window = 8\nstride = 4\n",
])
def test_bad_configs(tmp_path, text):
    (tmp_path / "bad.ini").write_text(text)
    with pytest.raises(ConfigError):
        cfg = RunConfig.load(tmp_path / "bad.ini")
        cfg.model_config()
