import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

TINY_MODEL = dict(d_model=16, enc_layers=1, dec_layers=1, n_heads=2, d_ff=32)


@pytest.fixture(scope="session")
def tiny_checkpoint(tmp_path_factory) -> Path:
    """A briefly trained small model; good enough to exercise the decode paths."""
    from actionpara.eval_harness import ExperimentSpec, desk_train_config, synthetic_corpus, train_model

    corpus = synthetic_corpus(sizes=(200, 20, 10), seed=11)
    spec = ExperimentSpec(
        model=TINY_MODEL, train=desk_train_config(max_epochs=2, patience_epochs=2, batch_size=16, warmup_steps=4)
    )
    out = tmp_path_factory.mktemp("tiny") / "ckpt"
    train_model(corpus, spec, 0, outdir=out)
    return out / "best"
