"""Shared fixtures: tiny randomly initialized encoders and a word-level
tokenizer, so every test runs offline."""

import pytest
import torch
from transformers import GPT2Config, GPT2Model, Wav2Vec2Config, Wav2Vec2Model

from embx_extract.encoders import SpeechEncoder, TextEncoder


class ToyTokenizer:
    """Whitespace word-level tokenizer with a grow-on-first-sight vocab;
    ids are assigned in encounter order, so a fresh instance fed the same
    stream of texts reproduces the same ids."""

    def __init__(self):
        self.vocab = {}

    def encode(self, text):
        ids = []
        for word in text.split():
            if word not in self.vocab:
                self.vocab[word] = len(self.vocab)
            ids.append(self.vocab[word])
        return ids


def make_text_encoder(n_positions=64, n_embd=16, n_layer=2):
    torch.manual_seed(1234)
    config = GPT2Config(
        vocab_size=512, n_embd=n_embd, n_layer=n_layer, n_head=2,
        n_positions=n_positions, bos_token_id=0, eos_token_id=0,
    )
    return TextEncoder(GPT2Model(config), ToyTokenizer(),
                       name="toy-text", revision="local-random")


def make_speech_encoder(hidden_size=32, num_layers=2, heads=2):
    torch.manual_seed(4321)
    config = Wav2Vec2Config(
        hidden_size=hidden_size, num_hidden_layers=num_layers,
        num_attention_heads=heads, intermediate_size=4 * hidden_size,
        vocab_size=32,
    )
    return SpeechEncoder(Wav2Vec2Model(config),
                         name="toy-speech", revision="local-random")


@pytest.fixture(scope="session")
def text_encoder():
    return make_text_encoder()


@pytest.fixture(scope="session")
def speech_encoder():
    return make_speech_encoder()
