import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from errcast.corpus import ExampleRecord
from errcast.toy_lm import train_bigram


@pytest.fixture(scope="session")
def ab_model():
    """Bigram model trained on 'ab' repeated four times (vocab: start, a, b)."""
    return train_bigram(["abab" * 2])


@pytest.fixture
def idiom_record():
    return ExampleRecord(
        id="idm-1",
        sentence="He kicked the bucket.",
        task_kind="idiom",
        gold_label="i",
        expression_char_span=(3, 20),  # "kicked the bucket"
    )


@pytest.fixture
def mc_record():
    return ExampleRecord(
        id="mc-1",
        sentence="She is attracted to blue jacket.",
        task_kind="multiple_choice",
        gold_label="Sailor",
        instruction=(
            "Context: She is attracted to blue jacket.\n"
            "Question: What does 'blue jacket' refer to?"
        ),
        choices=("Colour", "Jacket", "Sailor", "Sea"),
    )
