import json

import pytest
import torch
from tokenizers import Tokenizer, decoders, models, pre_tokenizers, trainers
from transformers import GPT2Config, GPT2LMHeadModel, PreTrainedTokenizerFast

SUBJECTS = [
    "The old sailor", "My neighbour", "Her manager", "The young reporter",
    "His grandmother", "The tired actor", "Our landlord", "The committee chair",
    "A local farmer", "The night guard",
]
IDIOMS = [
    "kicked the bucket", "spilled the beans", "broke the ice", "hit the sack",
    "lost his marbles",
]
TAILS = [
    "after the long meeting", "during the storm", "before sunrise",
    "without any warning", "at the annual fair",
]


def _fixture_rows(n=50):
    rows = []
    for j in range(n):
        subject = SUBJECTS[j % len(SUBJECTS)]
        idiom = IDIOMS[j % len(IDIOMS)]
        tail = TAILS[j % len(TAILS)]
        sentence = f"{subject} {idiom} {tail}."
        start = len(subject) + 1
        rows.append(
            {
                "id": f"fx-{j:03d}",
                "sentence": sentence,
                "expression": {"start": start, "end": start + len(idiom)},
                "task": "idiom",
                "instruction": None,
                "gold": "i" if j % 2 == 0 else "l",
                "choices": None,
            }
        )
    return rows


@pytest.fixture(scope="session")
def fixture_dataset(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "fixture.jsonl"
    rows = _fixture_rows()
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n", encoding="utf-8")
    return path


def _build_tokenizer():
    corpus = []
    for row in _fixture_rows():
        corpus.append(row["sentence"])
    corpus.append(
        "Is the expression 'x' used figuratively or literally in the sentence: "
        "Answer 'i' for figurative, 'l' for literal.  Put your answer after 'output: '."
    )
    tok = Tokenizer(models.BPE(unk_token=None))
    tok.pre_tokenizer = pre_tokenizers.ByteLevel(add_prefix_space=False)
    tok.decoder = decoders.ByteLevel()
    trainer = trainers.BpeTrainer(
        vocab_size=420,
        special_tokens=["<|bos|>", "<|pad|>"],
        initial_alphabet=pre_tokenizers.ByteLevel.alphabet(),
    )
    tok.train_from_iterator(corpus, trainer)
    fast = PreTrainedTokenizerFast(
        tokenizer_object=tok, bos_token="<|bos|>", pad_token="<|pad|>"
    )
    # reachable only through generation: lets the doctored model emit a
    # parseable answer
    fast.add_tokens(["output: i"])
    return fast


def _config(tokenizer):
    return GPT2Config(
        vocab_size=len(tokenizer),
        n_positions=512,
        n_embd=64,
        n_layer=2,
        n_head=2,
        bos_token_id=tokenizer.bos_token_id,
        eos_token_id=tokenizer.bos_token_id,
    )


@pytest.fixture(scope="session")
def rich_model_dir(tmp_path_factory):
    """Random-weight tiny causal LM: nondegenerate distributions."""
    tokenizer = _build_tokenizer()
    torch.manual_seed(0)
    model = GPT2LMHeadModel(_config(tokenizer))
    model.eval()
    out = tmp_path_factory.mktemp("rich_model")
    model.save_pretrained(out)
    tokenizer.save_pretrained(out)
    return out


@pytest.fixture(scope="session")
def constant_model_dir(tmp_path_factory):
    """Doctored tiny causal LM whose greedy output is always 'output: i'.

    Zeroing the final layer norm weight makes every position's final hidden
    state equal the layer-norm bias, so one lm_head row wins everywhere;
    predictions become parseable, which gives the cross-component flow both
    error classes.
    """
    tokenizer = _build_tokenizer()
    torch.manual_seed(1)
    model = GPT2LMHeadModel(_config(tokenizer))
    with torch.no_grad():
        model.transformer.ln_f.weight.zero_()
        model.transformer.ln_f.bias.fill_(1.0)
        model.lm_head.weight.zero_()
        target = tokenizer.convert_tokens_to_ids("output: i")
        model.lm_head.weight[target].fill_(1.0)
    model.eval()
    out = tmp_path_factory.mktemp("constant_model")
    model.save_pretrained(out)
    tokenizer.save_pretrained(out)
    return out
