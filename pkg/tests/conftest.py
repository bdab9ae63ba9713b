#!/usr/bin/env python3

import pytest
import numpy as np
import slpkit as slp

@pytest.fixture
def tiny_config():
    return slp.ModelConfig(
            n_layers=1,
            n_heads=2,
            d_model=8,
            d_ff=16,
            vocab_size=12,
            d_speech=4,
            max_frames=5,
            max_text=4,
    )

@pytest.fixture
def tiny_params(tiny_config):
    return slp.ModelParams.initialize(tiny_config, seed=0)

@pytest.fixture
def speech():

    def helper(num_frames=3, dim=4, seed=0):
        frames = np.random.default_rng(seed).normal(size=(num_frames, dim))
        return slp.SpeechEmbeddingSequence(frames, 'utt')

    return helper

@pytest.fixture
def vocab():
    corpus = [
            'turn on the lights',
            'turn off the lights',
            'turn on the music',
            'increase the heat',
    ]
    return slp.train_vocab(corpus, 60, min_freq=2, reserved=['&', '+', 'activate_lights'])

@pytest.fixture
def corpus_dir(tmp_path):
    encoder = slp.PseudoEncoderConfig(d_speech=8, frames_per_char=(1, 1))
    slp.generate_corpus('fsc-like', 6, 2, 2, encoder, 0, tmp_path)
    return tmp_path
