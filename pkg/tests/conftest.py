import numpy as np
import pytest

from panelrep.config import TrainConfig
from panelrep.textpipe import EOS_ID, NEWLINE_ID, NULL_ID, SENTENCE_LEN, TokenSequence
from panelrep.trainer import init_params


def make_sequence(payload_ids) -> TokenSequence:
    ids = np.full(SENTENCE_LEN, NULL_ID, dtype=np.int32)
    body = [NEWLINE_ID] + list(payload_ids) + [EOS_ID]
    ids[: len(body)] = body
    return TokenSequence(ids=ids, effective_length=len(body))


@pytest.fixture
def micro_config() -> TrainConfig:
    # smallest config that exercises every component, odd hidden width included
    return TrainConfig(
        epochs=1,
        seed=0,
        n_images=2,
        spatial=4,
        channels=3,
        embed=4,
        hidden=5,
        attn=4,
        vocab_size=6,
    )


@pytest.fixture
def micro_params(micro_config):
    return init_params(micro_config, dtype=np.float64)
