#!/usr/bin/env python3

"""
Assemble the joint input sequence that the model reads:

    [BOS] speech frames [SEP] text tokens [EOS] [PAD] ...

Every position gets a base embedding (a projected speech frame or a token
embedding), plus a position embedding and a segment embedding.  Speech frames
are trimmed to `max_frames` and text to `max_text`, and padding always goes at
the end, so every joint input has exactly `ModelConfig.max_positions`
positions.
"""

import logging
import numpy as np

from dataclasses import dataclass
from . import numkit as nk
from .tokenizer import PAD, BOS, SEP, EOS
from .errors import ShapeError

log = logging.getLogger(__name__)

SPEECH, TEXT = 0, 1

# The token id recorded for positions that hold speech frames.
SPEECH_FRAME = -1

@dataclass(frozen=True, eq=False)
class SpeechEmbeddingSequence:
    frames: np.ndarray
    source_id: str = ''

    def __post_init__(self):
        frames = np.array(self.frames, dtype=nk.DTYPE)

        if frames.ndim != 2 or frames.shape[0] < 1 or frames.shape[1] < 1:
            raise ShapeError(f"speech embeddings must be a non-empty S×d matrix, not {frames.shape}")
        if not np.isfinite(frames).all():
            raise ShapeError(f"speech embeddings for '{self.source_id}' contain non-finite values")

        frames.setflags(write=False)
        object.__setattr__(self, 'frames', frames)

    def __len__(self):
        return self.frames.shape[0]

    @property
    def dim(self):
        return self.frames.shape[1]


@dataclass(frozen=True, eq=False)
class JointInput:
    embeddings: nk.Tensor
    token_ids: tuple
    segment_ids: tuple
    is_pad: tuple
    speech_span: range
    text_span: range

    def __len__(self):
        return len(self.token_ids)


def project_speech(frames, weight, bias):
    """
    Map each speech frame into the model dimension with an affine layer.
    """
    frames = nk.tensor(frames)
    weight = getattr(weight, 'value', weight)
    bias = getattr(bias, 'value', bias)

    if frames.ndim != 2 or frames.shape[1] != weight.shape[0]:
        raise ShapeError(f"can't project {frames.shape} speech frames with a {weight.shape} projection")

    return nk.add(nk.matmul(frames, weight), bias)

def compose(speech, text_ids, params, *, terminal=EOS):
    """
    Build the joint input for the given speech and text.

    The *terminal* token is placed right after the (trimmed) text.  It is
    normally [EOS]; generation passes [MASK] to ask the model what comes next,
    and training passes whatever the terminal [EOS] was corrupted into.
    """
    config = params.config
    frames = speech.frames

    if len(frames) > config.max_frames:
        log.debug(f"trimming '{speech.source_id}' from {len(frames)} to {config.max_frames} frames")
        frames = frames[:config.max_frames]

    text_ids = list(text_ids)
    if len(text_ids) > config.max_text:
        log.debug(f"trimming text for '{speech.source_id}' from {len(text_ids)} to {config.max_text} tokens")
        text_ids = text_ids[:config.max_text]

    num_frames = len(frames)
    length = config.max_positions
    tail_ids = [SEP, *text_ids, terminal]
    num_pads = length - 1 - num_frames - len(tail_ids)

    token_ids = (BOS, *[SPEECH_FRAME] * num_frames, *tail_ids, *[PAD] * num_pads)
    segment_ids = (*[SPEECH] * (num_frames + 2), *[TEXT] * (length - num_frames - 2))
    is_pad = (*[False] * (length - num_pads), *[True] * num_pads)

    token_table = params['embeddings.token'].value
    base = nk.concat([
            nk.embedding_lookup(token_table, [BOS]),
            project_speech(frames, params['speech.weight'], params['speech.bias']),
            nk.embedding_lookup(token_table, [*tail_ids, *[PAD] * num_pads]),
    ])
    positions = nk.take(params['embeddings.position'].value, slice(0, length))
    segments = nk.embedding_lookup(params['embeddings.segment'].value, segment_ids)

    return JointInput(
            embeddings=nk.add(nk.add(base, positions), segments),
            token_ids=token_ids,
            segment_ids=segment_ids,
            is_pad=is_pad,
            speech_span=range(0, num_frames + 2),
            text_span=range(num_frames + 2, length - num_pads),
    )
