#!/usr/bin/env python3

"""
The transformer: attention masks, self-attention and feed-forward blocks, the
masked-LM output head, and checkpoint I/O.

The mask is what makes one stack of layers serve as both a speech encoder and
a text decoder.  Positions in the speech part (including [BOS] and [SEP]) see
the whole speech part.  Positions in the text part see the whole speech part,
plus every text position up to and including themselves.  Nothing sees a pad
position.
"""

import math
import logging
import autoprop
import numpy as np

from pydantic import BaseModel, ConfigDict, Field, model_validator
from . import numkit as nk
from . import parser
from .util import rng_from
from .errors import *
from .parser import Repr

log = logging.getLogger(__name__)

class ModelConfig(BaseModel):
    model_config = ConfigDict(extra='forbid', frozen=True)

    n_layers: int = Field(2, ge=0)
    n_heads: int = Field(4, ge=1)
    d_model: int = Field(64, ge=1)
    d_ff: int = Field(256, ge=1)
    vocab_size: int = Field(512, ge=8)
    d_speech: int = Field(32, ge=1)
    max_frames: int = Field(64, ge=1)
    max_text: int = Field(24, ge=1)
    layer_norm_eps: float = Field(1e-12, gt=0)
    init_std: float = Field(0.02, gt=0)

    # Reserved, must be 0.
    dropout: float = 0.0

    @model_validator(mode='after')
    def _check_consistency(self):
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model ({self.d_model}) must be divisible by n_heads ({self.n_heads})")
        if self.dropout != 0:
            raise ValueError("dropout is reserved for future use and must be 0")
        return self

    @classmethod
    def full_size_preset(cls, vocab_size=30000):
        """
        The full-size architecture: a BERT-Base stack fed by 1024-dimensional
        speech embeddings.
        """
        return cls(
                n_layers=12,
                n_heads=12,
                d_model=768,
                d_ff=3072,
                vocab_size=vocab_size,
                d_speech=1024,
                max_frames=500,
                max_text=30,
        )

    @property
    def d_k(self):
        return self.d_model // self.n_heads

    @property
    def max_positions(self):
        # [BOS] + frames + [SEP] + text + [EOS]
        return self.max_frames + self.max_text + 3


@autoprop
class AttentionMask(Repr):
    """
    An additive L×L attention mask: 0 where attention is allowed, -inf where
    it is blocked.
    """
    repr_attrs = ['size']

    def __init__(self, m):
        m = np.array(m, dtype=nk.DTYPE)

        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ShapeError(f"attention mask must be square, not {m.shape}")
        if not np.all((m == 0) | np.isneginf(m)):
            raise ShapeError("attention mask entries must be 0 or -inf")

        self._m = nk.tensor(m)

    def get_m(self):
        return self._m

    def get_size(self):
        return self._m.shape[0]

    def allows(self, i, j):
        return self._m.data[i, j] == 0


@autoprop
class LayerParams(Repr):
    """
    A view of the parameters belonging to one transformer block, addressed by
    their names relative to the block (e.g. ``'attention.query.weight'``).
    """
    repr_attrs = ['index']

    def __init__(self, params, index):
        self._params = params
        self._index = index

    def __getitem__(self, key):
        return self._params[f'layers.{self._index}.{key}']

    def get_index(self):
        return self._index

    def get_config(self):
        return self._params.config


@autoprop
class ModelParams(Repr):
    """
    Every trainable parameter of a model, in a fixed order.
    """
    repr_attrs = ['num_params']

    def __init__(self, config, params):
        self._config = config
        self._params = {}

        expected = dict(_parameter_shapes(config))

        for param in params:
            if param.name in self._params:
                raise ModelError(f"duplicate parameter name: '{param.name}'")
            if param.name not in expected:
                raise ShapeError(f"unexpected parameter '{param.name}'")
            if param.shape != expected[param.name]:
                raise ShapeError(f"parameter '{param.name}' has shape {param.shape}, expected {expected[param.name]}")
            self._params[param.name] = param

        missing = [k for k in expected if k not in self._params]
        if missing:
            raise ShapeError(f"missing parameters: {', '.join(missing)}")

        # Always iterate in the canonical order, whatever order the
        # parameters were given in.
        self._params = {k: self._params[k] for k in expected}

    @classmethod
    def initialize(cls, config, seed):
        """
        Create randomly initialized parameters: weights and embeddings from
        N(0, init_std²), biases at 0, and layer-norm gains at 1.
        """
        rng = rng_from(seed)
        params = []

        for name, shape in _parameter_shapes(config):
            kind = name.rsplit('.', 1)[-1]
            if kind == 'bias':
                value = np.zeros(shape)
            elif kind == 'gain':
                value = np.ones(shape)
            else:
                value = rng.normal(0, config.init_std, size=shape)
            params.append(nk.Parameter(name, value))

        self = cls(config, params)
        log.info(f"initialized a model with {self.num_params} parameters (seed={seed})")
        return self

    @classmethod
    def from_records(cls, config, records):
        return cls(config, [nk.Parameter(k, v) for k, v in records])

    def __getitem__(self, name):
        try:
            return self._params[name]
        except KeyError:
            raise ModelError(f"no such parameter: '{name}'") from None

    def __iter__(self):
        yield from self._params.values()

    def __len__(self):
        return len(self._params)

    def get_config(self):
        return self._config

    def get_names(self):
        return list(self._params)

    def get_num_params(self):
        return sum(x.size for x in self._params.values())

    def get_layers(self):
        return [LayerParams(self, i) for i in range(self._config.n_layers)]

    def records(self):
        return [(k, v.value.data) for k, v in self._params.items()]

    def copy(self):
        return self.from_records(self._config, self.records())

    def zero_grad(self):
        nk.zero_grad(self)


def build_mask(speech_span, text_span, is_pad):
    """
    Build the attention mask for a joint input.
    """
    size = len(is_pad)
    speech_span = range(speech_span.start, speech_span.stop)
    text_span = range(text_span.start, text_span.stop)

    if not speech_span:
        raise ShapeError("the speech part can't be empty")
    if text_span and speech_span.stop > text_span.start:
        raise ShapeError(f"speech positions {_fmt(speech_span)} and text positions {_fmt(text_span)} overlap or are out of order")
    if max(speech_span.stop, text_span.stop) > size:
        raise ShapeError(f"spans {_fmt(speech_span)} and {_fmt(text_span)} don't fit in {size} positions")

    is_pad = np.asarray(is_pad, dtype=bool)
    in_speech = np.zeros(size, dtype=bool)
    in_speech[speech_span.start:speech_span.stop] = True
    in_speech &= ~is_pad

    if not in_speech.any():
        raise ShapeError("every position in the speech part is padding")

    # Every row sees the speech part.  That includes pad rows, and any other
    # row outside both spans, so no softmax row is ever entirely masked.
    m = np.full((size, size), -np.inf)
    m[:, in_speech] = 0

    for i in text_span:
        if not is_pad[i]:
            m[i, text_span.start:i+1] = 0

    m[:, is_pad] = -np.inf

    return AttentionMask(m)

def mask_for(joint):
    return build_mask(joint.speech_span, joint.text_span, joint.is_pad)

def multi_head_attention(x, layer, mask):
    """
    The attention sublayer on its own: project into queries, keys and values,
    apply ``softmax(QKᵀ/√d_k + M)V`` in every head, concatenate the heads and
    project back into the model dimension.
    """
    config = layer.config
    d_k = config.d_k

    if x.ndim != 2 or x.shape[1] != config.d_model:
        raise ShapeError(f"expected hidden states with {config.d_model} columns, not {x.shape}")
    if mask.size != x.shape[0]:
        raise ShapeError(f"can't apply a {mask.size}×{mask.size} mask to {x.shape[0]} positions")

    def project(name):
        return nk.add(
                nk.matmul(x, layer[f'{name}.weight'].value),
                layer[f'{name}.bias'].value,
        )

    q = project('attention.query')
    k = project('attention.key')
    v = project('attention.value')

    heads = []
    for h in range(config.n_heads):
        cols = (slice(None), slice(h * d_k, (h + 1) * d_k))
        q_h, k_h, v_h = nk.take(q, cols), nk.take(k, cols), nk.take(v, cols)

        scores = nk.scale(nk.matmul(q_h, nk.transpose(k_h)), 1 / math.sqrt(d_k))
        weights = nk.softmax_lastdim(nk.add(scores, mask.m))
        heads.append(nk.matmul(weights, v_h))

    out = nk.concat(heads, axis=1) if len(heads) > 1 else heads[0]
    return nk.add(
            nk.matmul(out, layer['attention.output.weight'].value),
            layer['attention.output.bias'].value,
    )

def self_attention(x, layer, mask):
    """
    Attention sublayer, residual connection, then layer norm.
    """
    h = nk.add(x, multi_head_attention(x, layer, mask))
    return _norm(h, layer, 'attention.norm')

def feed_forward(x, layer):
    inner = nk.add(nk.matmul(x, layer['ffn.inner.weight'].value), layer['ffn.inner.bias'].value)
    outer = nk.add(nk.matmul(nk.gelu(inner), layer['ffn.outer.weight'].value), layer['ffn.outer.bias'].value)
    return _norm(nk.add(x, outer), layer, 'ffn.norm')

def forward(joint, params, mask=None):
    """
    Run the whole stack and return the final hidden states.

    The composed embeddings are layer-normalized first (as in BERT), then
    passed through each block in turn.  If no mask is given, the one implied
    by the joint input's spans is used.
    """
    config = params.config

    if mask is None:
        mask = mask_for(joint)
    if joint.embeddings.shape != (config.max_positions, config.d_model):
        raise ShapeError(f"expected {config.max_positions}×{config.d_model} embeddings, not {joint.embeddings.shape}")

    h = nk.layer_norm(
            joint.embeddings,
            params['embeddings.norm.gain'].value,
            params['embeddings.norm.bias'].value,
            config.layer_norm_eps,
    )
    for layer in params.layers:
        h = self_attention(h, layer, mask)
        h = feed_forward(h, layer)

    return h

def mlm_logits(hidden, params):
    """
    Score every vocabulary entry at every position.  The output weights are
    the token embedding table itself.
    """
    table = params['embeddings.token'].value
    if hidden.ndim != 2 or hidden.shape[1] != table.shape[1]:
        raise ShapeError(f"expected hidden states with {table.shape[1]} columns, not {hidden.shape}")

    return nk.add(nk.matmul(hidden, nk.transpose(table)), params['head.bias'].value)

def save_checkpoint(path, params):
    """
    Write the model configuration and every parameter (as 32-bit floats) to
    the given path.
    """
    parser.file_from_checkpoint(path, params.config.model_dump_json(), params.records())
    log.info(f"wrote checkpoint: {path}")

def load_checkpoint(path):
    config_json, records = parser.checkpoint_from_file(path)

    try:
        config = ModelConfig.model_validate_json(config_json)
        return ModelParams.from_records(config, records)

    except (ValueError, ModelError) as err:
        error = ParseError(f"invalid checkpoint: {_first_line(err)}")
        error.path = path
        raise error from None


def _parameter_shapes(config):
    d, v = config.d_model, config.vocab_size

    yield 'embeddings.token', (v, d)
    yield 'embeddings.position', (config.max_positions, d)
    yield 'embeddings.segment', (2, d)
    yield 'embeddings.norm.gain', (d,)
    yield 'embeddings.norm.bias', (d,)
    yield 'speech.weight', (config.d_speech, d)
    yield 'speech.bias', (d,)

    for i in range(config.n_layers):
        for name in ['query', 'key', 'value', 'output']:
            yield f'layers.{i}.attention.{name}.weight', (d, d)
            yield f'layers.{i}.attention.{name}.bias', (d,)
        yield f'layers.{i}.attention.norm.gain', (d,)
        yield f'layers.{i}.attention.norm.bias', (d,)
        yield f'layers.{i}.ffn.inner.weight', (d, config.d_ff)
        yield f'layers.{i}.ffn.inner.bias', (config.d_ff,)
        yield f'layers.{i}.ffn.outer.weight', (config.d_ff, d)
        yield f'layers.{i}.ffn.outer.bias', (d,)
        yield f'layers.{i}.ffn.norm.gain', (d,)
        yield f'layers.{i}.ffn.norm.bias', (d,)

    yield 'head.bias', (v,)

def _norm(x, layer, prefix):
    return nk.layer_norm(
            x,
            layer[f'{prefix}.gain'].value,
            layer[f'{prefix}.bias'].value,
            layer.config.layer_norm_eps,
    )

def _fmt(span):
    return f'[{span.start}, {span.stop})'

def _first_line(err):
    return str(err).strip().split('\n')[0]
