"""Thin wrappers around pretrained encoders.

Text side: the window is turned into three aligned sequences — token
embeddings, source-type embeddings (user / system / decision marker), and
the model's own positional embeddings — summed and forwarded. The encoder
stays frozen, so the source-type table cannot be learned here; it is drawn
once from a fixed seed and recorded in the manifest metadata. Hidden states
are exported per transformer block (the input embedding layer is excluded).

Speech side: the prepared 3 s waveform goes straight through the model and
all block outputs are exported.

Everything runs in eval mode under no_grad on a fixed device, which is what
makes re-runs bit-identical.
"""

import numpy as np
import torch

from .records import ALL_MARKERS, MARKER_DECISION

SOURCE_TYPES = ("user", "system", "da_pred")
SOURCE_EMBEDDING_SEED = 7
SOURCE_EMBEDDING_STD = 0.02


def _hidden_stack(outputs):
    # hidden_states[0] is the embedding output; blocks start at [1]
    stacked = torch.stack(outputs.hidden_states[1:], dim=0)[:, 0]
    return np.ascontiguousarray(stacked.cpu().numpy(), dtype=np.float32)


class TextEncoder:
    """A frozen text model plus a tokenizer whose `encode(text)` maps marker
    tokens to single ids."""

    def __init__(self, model, tokenizer, name="unnamed", revision="unpinned"):
        self.model = model.eval()
        self.tokenizer = tokenizer
        self.name = name
        self.revision = revision
        self.dim = int(model.config.hidden_size)
        self.max_positions = int(model.config.max_position_embeddings)
        generator = torch.Generator().manual_seed(SOURCE_EMBEDDING_SEED)
        self.source_table = torch.normal(
            0.0, SOURCE_EMBEDDING_STD, (len(SOURCE_TYPES), self.dim),
            generator=generator,
        )
        marker_ids = self.tokenizer.encode(MARKER_DECISION)
        if len(marker_ids) != 1:
            raise ValueError(
                f"decision marker must be a single token, got {len(marker_ids)} ids; "
                "add the marker tokens to the tokenizer first"
            )

    def encode_window(self, segments):
        """Segments -> (token_ids, source_ids), left-truncated to the
        context size with the trailing decision token preserved."""
        token_ids, source_ids = [], []
        for text, source in segments:
            ids = self.tokenizer.encode(text)
            token_ids.extend(ids)
            source_ids.extend([SOURCE_TYPES.index(source)] * len(ids))
        if not token_ids:
            raise ValueError("window serialized to zero tokens")
        if len(token_ids) > self.max_positions:
            token_ids = token_ids[-self.max_positions:]
            source_ids = source_ids[-self.max_positions:]
        return token_ids, source_ids

    def forward_hidden(self, token_ids, source_ids):
        """(L, tokens, D) float32 stack of block outputs."""
        if len(token_ids) != len(source_ids):
            raise ValueError("token/source streams out of step")
        with torch.no_grad():
            ids = torch.tensor(token_ids, dtype=torch.long)
            embeds = self.model.get_input_embeddings()(ids)
            embeds = embeds + self.source_table[torch.tensor(source_ids)]
            outputs = self.model(
                inputs_embeds=embeds.unsqueeze(0), output_hidden_states=True
            )
        return _hidden_stack(outputs)

    def meta(self):
        return {
            "encoder": self.name,
            "revision": self.revision,
            "layer_indexing": "transformer_blocks",
            "source_embedding_seed": SOURCE_EMBEDDING_SEED,
        }


class SpeechEncoder:
    def __init__(self, model, name="unnamed", revision="unpinned"):
        self.model = model.eval()
        self.name = name
        self.revision = revision
        self.dim = int(model.config.hidden_size)

    def forward_hidden(self, waveform):
        """(L, frames, D) float32 stack of block outputs for one clip."""
        wave = np.asarray(waveform, dtype=np.float32)
        if wave.ndim != 1:
            raise ValueError(f"expected a mono waveform, got shape {wave.shape}")
        with torch.no_grad():
            outputs = self.model(
                input_values=torch.from_numpy(wave).unsqueeze(0),
                output_hidden_states=True,
            )
        return _hidden_stack(outputs)

    def meta(self):
        return {
            "encoder": self.name,
            "revision": self.revision,
            "layer_indexing": "transformer_blocks",
        }


class HfTokenizer:
    """Adapter pinning `encode` to plain ids with no special tokens."""

    def __init__(self, tokenizer):
        self.tokenizer = tokenizer

    def encode(self, text):
        return self.tokenizer.encode(text, add_special_tokens=False)


def load_text_encoder(name, revision=None):
    """Fetch a pretrained text model and register the marker tokens. Network
    path; the offline tests build TextEncoder directly instead."""
    from transformers import AutoModel, AutoTokenizer

    tokenizer = AutoTokenizer.from_pretrained(name, revision=revision)
    model = AutoModel.from_pretrained(name, revision=revision)
    added = tokenizer.add_tokens(list(ALL_MARKERS))
    if added:
        torch.manual_seed(SOURCE_EMBEDDING_SEED)  # new rows drawn reproducibly
        model.resize_token_embeddings(len(tokenizer))
    return TextEncoder(model, HfTokenizer(tokenizer), name=name,
                       revision=revision or "unpinned")


def load_speech_encoder(name, revision=None):
    from transformers import AutoModel

    model = AutoModel.from_pretrained(name, revision=revision)
    return SpeechEncoder(model, name=name, revision=revision or "unpinned")
