#!/usr/bin/env python3

import pytest
import numpy as np
import slpkit as slp

from slpkit.composer import SPEECH, TEXT, SPEECH_FRAME
from slpkit.tokenizer import PAD, BOS, SEP, EOS, MASK

@pytest.mark.parametrize(
        'frames', [
            np.zeros(3),
            np.zeros((0, 4)),
            np.zeros((3, 0)),
            [[0.0, np.nan]],
            [[np.inf, 0.0]],
        ],
)
def test_speech_embedding_sequence_errors(frames):
    with pytest.raises(slp.ShapeError):
        slp.SpeechEmbeddingSequence(frames)

def test_speech_embedding_sequence():
    speech = slp.SpeechEmbeddingSequence([[1, 2, 3], [4, 5, 6]], 'utt')

    assert len(speech) == 2
    assert speech.dim == 3
    assert speech.frames.dtype == np.float64
    assert not speech.frames.flags.writeable

@pytest.mark.parametrize(
        'num_frames, text_ids, terminal, token_ids, speech_span, text_span', [(
            3, [7, 8], EOS,
            (BOS, -1, -1, -1, SEP, 7, 8, EOS, PAD, PAD, PAD, PAD),
            range(0, 5), range(5, 8),
        ), (
            1, [], EOS,
            (BOS, -1, SEP, EOS, PAD, PAD, PAD, PAD, PAD, PAD, PAD, PAD),
            range(0, 3), range(3, 4),
        ), (
            2, [9], MASK,
            (BOS, -1, -1, SEP, 9, MASK, PAD, PAD, PAD, PAD, PAD, PAD),
            range(0, 4), range(4, 6),
        ), (
            # Too long: frames trimmed to 5, text trimmed to 4.
            7, [7, 8, 9, 10, 11, 7], EOS,
            (BOS, -1, -1, -1, -1, -1, SEP, 7, 8, 9, 10, EOS),
            range(0, 7), range(7, 12),
        ),
])
def test_compose_layout(tiny_params, speech, num_frames, text_ids, terminal, token_ids, speech_span, text_span):
    joint = slp.compose(speech(num_frames), text_ids, tiny_params, terminal=terminal)

    assert SPEECH_FRAME == -1
    assert len(joint) == tiny_params.config.max_positions == 12
    assert joint.token_ids == token_ids
    assert joint.speech_span == speech_span
    assert joint.text_span == text_span
    assert joint.is_pad == tuple(x == PAD for x in token_ids)
    assert joint.segment_ids == tuple(
            SPEECH if i < speech_span.stop else TEXT
            for i in range(len(token_ids))
    )
    assert joint.embeddings.shape == (12, 8)

def test_compose_embeddings(tiny_params, speech):
    s = speech(3)
    joint = slp.compose(s, [7, 8], tiny_params)
    x = joint.embeddings.data

    token = tiny_params['embeddings.token'].value.data
    position = tiny_params['embeddings.position'].value.data
    segment = tiny_params['embeddings.segment'].value.data
    w = tiny_params['speech.weight'].value.data
    b = tiny_params['speech.bias'].value.data

    np.testing.assert_allclose(x[0], token[BOS] + position[0] + segment[SPEECH])
    np.testing.assert_allclose(x[1], s.frames[0] @ w + b + position[1] + segment[SPEECH])
    np.testing.assert_allclose(x[3], s.frames[2] @ w + b + position[3] + segment[SPEECH])
    np.testing.assert_allclose(x[4], token[SEP] + position[4] + segment[SPEECH])
    np.testing.assert_allclose(x[5], token[7] + position[5] + segment[TEXT])
    np.testing.assert_allclose(x[7], token[EOS] + position[7] + segment[TEXT])
    np.testing.assert_allclose(x[11], token[PAD] + position[11] + segment[TEXT])

def test_compose_tracks_gradients(tiny_params, speech):
    joint = slp.compose(speech(2), [7], tiny_params)
    assert joint.embeddings.requires_grad

def test_compose_wrong_speech_dim(tiny_params, speech):
    with pytest.raises(slp.ShapeError):
        slp.compose(speech(3, dim=5), [7], tiny_params)

def test_compose_bad_token(tiny_params, speech):
    with pytest.raises(slp.ShapeError):
        slp.compose(speech(3), [12], tiny_params)
