#!/usr/bin/env python3

import os
import sys
import hashlib
import subprocess
import pytest
import numpy as np
import slpkit as slp
import slpkit.numkit as nk

from pathlib import Path
from dataclasses import replace
from slpkit.model import multi_head_attention, mask_for

def test_model_config():
    config = slp.ModelConfig()

    assert config.d_k == 16
    assert config.max_positions == config.max_frames + config.max_text + 3

@pytest.mark.parametrize(
        'kwargs', [
            dict(d_model=10, n_heads=4),
            dict(dropout=0.1),
            dict(vocab_size=7),
            dict(n_heads=0),
            dict(unknown=1),
        ],
)
def test_model_config_errors(kwargs):
    with pytest.raises(ValueError):
        slp.ModelConfig(**kwargs)

def test_full_size_preset():
    config = slp.ModelConfig.full_size_preset()

    assert config.n_layers == 12
    assert config.d_model == 768
    assert config.n_heads == 12
    assert config.d_speech == 1024
    assert config.vocab_size == 30000

def test_model_params(tiny_config):
    params = slp.ModelParams.initialize(tiny_config, seed=0)

    assert params.names[:7] == [
            'embeddings.token',
            'embeddings.position',
            'embeddings.segment',
            'embeddings.norm.gain',
            'embeddings.norm.bias',
            'speech.weight',
            'speech.bias',
    ]
    assert params.names[-1] == 'head.bias'
    assert len(params.layers) == 1
    assert params.layers[0]['attention.query.weight'] is params['layers.0.attention.query.weight']

    assert params['embeddings.token'].shape == (12, 8)
    assert params['embeddings.position'].shape == (12, 8)
    assert params['layers.0.ffn.inner.weight'].shape == (8, 16)
    assert np.all(params['speech.bias'].value.data == 0)
    assert np.all(params['embeddings.norm.gain'].value.data == 1)

    assert params.num_params == sum(x.size for x in params)

def test_model_params_deterministic(tiny_config):
    a = slp.ModelParams.initialize(tiny_config, seed=1)
    b = slp.ModelParams.initialize(tiny_config, seed=1)
    c = slp.ModelParams.initialize(tiny_config, seed=2)

    assert all(np.array_equal(x.value.data, y.value.data) for x, y in zip(a, b))
    assert not np.array_equal(a['embeddings.token'].value.data, c['embeddings.token'].value.data)

def test_model_params_errors(tiny_config, tiny_params):
    records = tiny_params.records()

    with pytest.raises(slp.ShapeError, match='missing'):
        slp.ModelParams.from_records(tiny_config, records[1:])

    with pytest.raises(slp.ShapeError, match='unexpected'):
        slp.ModelParams.from_records(tiny_config, records + [('extra', np.zeros(1))])

    with pytest.raises(slp.ShapeError, match='shape'):
        slp.ModelParams.from_records(tiny_config, [('head.bias', np.zeros(3))] + records[:-1])

    with pytest.raises(slp.ModelError):
        tiny_params['no.such.param']

def test_model_params_canonical_order(tiny_config, tiny_params):
    records = tiny_params.records()
    params = slp.ModelParams.from_records(tiny_config, records[::-1])

    assert params.names == tiny_params.names

def test_model_params_copy(tiny_params):
    copy = tiny_params.copy()
    copy['head.bias'].value = np.ones(12)

    assert np.all(tiny_params['head.bias'].value.data == 0)

@pytest.mark.parametrize(
        'speech_span, text_span, is_pad, allowed', [(
            # Speech sees speech, text sees speech plus its own prefix.
            range(0, 2), range(2, 4), [0, 0, 0, 0], [
                '11..',
                '11..',
                '111.',
                '1111',
            ]), (
            # Nothing sees pads, and pad rows see the speech part.
            range(0, 2), range(2, 3), [0, 0, 0, 1], [
                '11..',
                '11..',
                '111.',
                '11..',
            ]), (
            range(0, 3), range(3, 3), [0, 0, 0], [
                '111',
                '111',
                '111',
            ]),
])
def test_build_mask(speech_span, text_span, is_pad, allowed):
    mask = slp.build_mask(speech_span, text_span, [bool(x) for x in is_pad])

    assert mask.size == len(allowed)
    for i, row in enumerate(allowed):
        for j, x in enumerate(row):
            assert mask.allows(i, j) == (x == '1'), (i, j)

    assert set(np.unique(mask.m.data)) <= {0, -np.inf}

@pytest.mark.parametrize(
        'speech_span, text_span, is_pad', [
            (range(0, 0), range(0, 2), [0, 0]),
            (range(0, 2), range(1, 3), [0, 0, 0]),
            (range(0, 2), range(2, 5), [0, 0, 0]),
            (range(0, 2), range(2, 3), [1, 1, 0]),
        ],
)
def test_build_mask_errors(speech_span, text_span, is_pad):
    with pytest.raises(slp.ShapeError):
        slp.build_mask(speech_span, text_span, [bool(x) for x in is_pad])

@pytest.mark.parametrize(
        'm', [
            np.zeros((2, 3)),
            [[0, 1], [0, 0]],
        ],
)
def test_attention_mask_errors(m):
    with pytest.raises(slp.ShapeError):
        slp.AttentionMask(m)

def test_attention_matches_reference(tiny_params, speech):
    # Compare the per-head attention to a direct numpy implementation.
    joint = slp.compose(speech(3), [7, 8], tiny_params)
    mask = mask_for(joint)
    layer = tiny_params.layers[0]
    x = joint.embeddings

    def w(name):
        return layer[name].value.data

    X = x.data
    q = X @ w('attention.query.weight') + w('attention.query.bias')
    k = X @ w('attention.key.weight') + w('attention.key.bias')
    v = X @ w('attention.value.weight') + w('attention.value.bias')

    heads = []
    for h in range(2):
        cols = slice(4 * h, 4 * (h + 1))
        scores = q[:, cols] @ k[:, cols].T / 2 + mask.m.data
        e = np.exp(scores - scores.max(axis=1, keepdims=True))
        heads.append((e / e.sum(axis=1, keepdims=True)) @ v[:, cols])

    expected = np.hstack(heads) @ w('attention.output.weight') + w('attention.output.bias')
    actual = multi_head_attention(x, layer, mask).data

    np.testing.assert_allclose(actual, expected, rtol=1e-10, atol=1e-12)

def test_forward_shape(tiny_params, speech):
    joint = slp.compose(speech(3), [7, 8], tiny_params)
    hidden = slp.forward(joint, tiny_params)
    logits = slp.mlm_logits(hidden, tiny_params)

    assert hidden.shape == (12, 8)
    assert logits.shape == (12, 12)
    assert np.isfinite(logits.data).all()

def test_forward_text_causal(tiny_params, speech):
    s = speech(3)
    a = slp.forward(slp.compose(s, [7, 8, 9], tiny_params), tiny_params).data
    b = slp.forward(slp.compose(s, [7, 10, 11], tiny_params), tiny_params).data

    # [BOS] speech [SEP] and the first text token are unaffected.
    assert np.array_equal(a[:6], b[:6])
    assert not np.array_equal(a[6], b[6])

def test_forward_ignores_pads(tiny_params, speech):
    joint = slp.compose(speech(2), [7], tiny_params)
    embeddings = joint.embeddings.numpy()
    embeddings[list(joint.is_pad)] = 100.0

    a = slp.forward(joint, tiny_params).data
    b = slp.forward(replace(joint, embeddings=nk.tensor(embeddings)), tiny_params).data
    not_pad = ~np.array(joint.is_pad)

    assert np.array_equal(a[not_pad], b[not_pad])

def test_forward_zero_layers(speech):
    config = slp.ModelConfig(
            n_layers=0, n_heads=1, d_model=4, d_ff=4, vocab_size=8,
            d_speech=4, max_frames=2, max_text=2,
    )
    params = slp.ModelParams.initialize(config, seed=0)
    hidden = slp.forward(slp.compose(speech(2), [7], params), params)

    assert hidden.shape == (7, 4)

def forward_digest(seed):
    config = slp.ModelConfig(
            n_layers=2, n_heads=2, d_model=8, d_ff=16, vocab_size=12,
            d_speech=4, max_frames=5, max_text=4,
    )
    params = slp.ModelParams.initialize(config, seed=seed)
    frames = np.random.default_rng(seed).normal(size=(3, 4))
    joint = slp.compose(slp.SpeechEmbeddingSequence(frames), [7, 8], params)
    hidden = slp.forward(joint, params).numpy()
    return hashlib.sha256(hidden.tobytes()).hexdigest()

def test_forward_golden_digest():
    # Recompute the digest in a fresh interpreter.
    here = Path(__file__).parent
    path = [str(here), str(here.parent), os.environ.get('PYTHONPATH', '')]
    out = subprocess.run(
            [sys.executable, '-c', 'import test_model; print(test_model.forward_digest(0))'],
            env={**os.environ, 'PYTHONPATH': os.pathsep.join(path)},
            check=True, capture_output=True, text=True,
    )
    assert out.stdout.strip() == forward_digest(0)
    assert forward_digest(0) != forward_digest(1)

def test_forward_wrong_size(tiny_params):
    joint = slp.composer.JointInput(
            embeddings=nk.tensor(np.zeros((5, 8))),
            token_ids=(0,) * 5,
            segment_ids=(0,) * 5,
            is_pad=(False,) * 5,
            speech_span=range(0, 2),
            text_span=range(2, 5),
    )
    with pytest.raises(slp.ShapeError):
        slp.forward(joint, tiny_params)

def test_mlm_logits_tied(tiny_params):
    hidden = nk.tensor(np.eye(8)[:3])
    logits = slp.mlm_logits(hidden, tiny_params).data
    token = tiny_params['embeddings.token'].value.data

    np.testing.assert_allclose(logits, token[:, :3].T)

def test_checkpoint(tiny_params, tmp_path):
    path = tmp_path / 'model.ckpt'
    slp.save_checkpoint(path, tiny_params)
    params = slp.load_checkpoint(path)

    assert params.config == tiny_params.config
    assert params.names == tiny_params.names

    for a, b in zip(params, tiny_params):
        np.testing.assert_array_equal(a.value.data, b.value.data.astype(np.float32))

    # Saving what was loaded gives back the same bytes.
    path_2 = tmp_path / 'model_2.ckpt'
    slp.save_checkpoint(path_2, params)
    assert path.read_bytes() == path_2.read_bytes()

def test_checkpoint_errors(tiny_params, tmp_path):
    path = tmp_path / 'model.ckpt'
    slp.save_checkpoint(path, tiny_params)
    bytes = path.read_bytes()

    path.write_bytes(bytes.replace(b'"d_model":8', b'"d_model":16'))
    with pytest.raises(slp.ParseError) as err:
        slp.load_checkpoint(path)
    assert err.value.path == path

    path.write_bytes(bytes.replace(b'"n_layers":1', b'"n_layers":"x"'))
    with pytest.raises(slp.ParseError):
        slp.load_checkpoint(path)

    path.write_bytes(bytes[:-3])
    with pytest.raises(slp.ParseError):
        slp.load_checkpoint(path)
