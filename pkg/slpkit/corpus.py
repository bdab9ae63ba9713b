#!/usr/bin/env python3

"""
Paired speech/text data: a synthetic stand-in for a speech encoder, corpus
generation from template grammars, embedding files, and manifests.

A manifest is a text file with one utterance per line:

    <id> TAB <embedding path> TAB <transcript> TAB <linearized frame>

Embedding paths are relative to the directory containing the manifest.  Lines
starting with '#' are comments.
"""

import os
import logging
import functools
import numpy as np

from dataclasses import dataclass, field
from pathlib import Path
from typing import Tuple
from pydantic import BaseModel, ConfigDict, Field, field_validator
from . import parser
from .composer import SpeechEmbeddingSequence
from .grammars import find_grammar
from .slu_codec import linearize, parse
from .tokenizer import normalize
from .util import rng_from, seed_from
from .errors import *

log = logging.getLogger(__name__)

MANIFEST_HEADER = '# slp-manifest v1'
SPLITS = 'train', 'dev', 'test'

CHARACTER_STREAM = 1
UTTERANCE_STREAM = 2

class PseudoEncoderConfig(BaseModel):
    model_config = ConfigDict(extra='forbid', frozen=True)

    d_speech: int = Field(32, ge=8)
    frames_per_char: Tuple[int, int] = (2, 4)
    jitter_std: float = Field(0.05, ge=0)
    seed: int = Field(0, ge=0)

    @field_validator('frames_per_char', mode='before')
    @classmethod
    def _parse_range(cls, value):
        if isinstance(value, str):
            lo, sep, hi = value.partition('-')
            value = (lo, hi if sep else lo)
        return value

    @field_validator('frames_per_char')
    @classmethod
    def _check_range(cls, value):
        lo, hi = value
        if not 1 <= lo <= hi:
            raise ValueError(f"frames_per_char must be a range lo-hi with 1 ≤ lo ≤ hi, not {lo}-{hi}")
        return value


class CorpusConfig(BaseModel):
    model_config = ConfigDict(extra='forbid', frozen=True)

    grammar: str = 'fsc-like'
    n_train: int = Field(2000, ge=0)
    n_dev: int = Field(200, ge=0)
    n_test: int = Field(200, ge=0)
    dir: str = 'data'


@dataclass(frozen=True)
class ManifestRecord:
    utterance_id: str
    embedding_path: str
    transcript: str
    frame_text: str

    def __post_init__(self):
        if not self.utterance_id or any(c.isspace() for c in self.utterance_id):
            raise ManifestError(f"utterance ids can't be empty or contain whitespace: {self.utterance_id!r}")

        for name in ['embedding_path', 'transcript', 'frame_text']:
            value = getattr(self, name)
            if '\t' in value or '\n' in value or '\r' in value:
                raise ManifestError(f"{name} of '{self.utterance_id}' contains a tab or newline")


@dataclass
class Manifest:
    records: list
    dir: Path = field(default_factory=Path)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        yield from self.records

    def resolve(self, record):
        return self.dir / record.embedding_path

    def load_speech(self, record):
        return read_embeddings(self.resolve(record), record.utterance_id)

    def relocate(self, record, dir):
        """
        Return a copy of the given record whose embedding path is relative to
        the given directory instead of this manifest's.
        """
        path = os.path.relpath(self.resolve(record), dir)
        return ManifestRecord(record.utterance_id, Path(path).as_posix(), record.transcript, record.frame_text)

    def subset(self, indices):
        return Manifest([self.records[i] for i in indices], self.dir)


@dataclass
class CorpusSummary:
    grammar: str
    counts: dict
    distinct_train_sentences: int
    test_sentences_seen_in_training: int

    @property
    def test_overlap(self):
        n = self.counts.get('test', 0)
        return self.test_sentences_seen_in_training / n if n else 0.0

    def format(self):
        lines = [f'grammar\t{self.grammar}']
        lines += [f'{k}\t{v}' for k, v in self.counts.items()]
        lines += [
                f'distinct_train_sentences\t{self.distinct_train_sentences}',
                f'test_sentences_seen_in_training\t{self.test_sentences_seen_in_training}',
                f'test_overlap\t{self.test_overlap:.4f}',
        ]
        return ''.join(x + '\n' for x in lines)


def draw_durations(transcript, cfg, utterance_seed):
    """
    The number of frames each character of the given transcript lasts for.
    """
    return _durations(normalize(transcript), cfg, _utterance_rng(cfg, utterance_seed))

def pseudo_encode(transcript, cfg, utterance_seed):
    """
    Turn a transcript into a sequence of fake speech embeddings.

    Each character has a fixed unit vector.  An utterance repeats each
    character's vector for a random number of frames, then adds gaussian
    noise to every frame.  The same transcript encoded with different
    utterance seeds gives different (but similar) embeddings.
    """
    chars = normalize(transcript)
    if not chars:
        raise DataError("can't encode an empty transcript")

    rng = _utterance_rng(cfg, utterance_seed)
    durations = _durations(chars, cfg, rng)
    vectors = np.array([_char_vector(cfg.seed, cfg.d_speech, c) for c in chars])
    frames = np.repeat(vectors, durations, axis=0)

    if cfg.jitter_std > 0:
        frames = frames + rng.normal(0, cfg.jitter_std, size=frames.shape)

    return SpeechEmbeddingSequence(frames)

def read_embeddings(path, source_id=None):
    frames = parser.embeddings_from_file(path)
    return SpeechEmbeddingSequence(frames, source_id or Path(path).stem)

def write_embeddings(path, frames):
    frames = getattr(frames, 'frames', frames)
    parser.file_from_embeddings(path, frames)

def read_manifest(path, check_files=True, check_frames=True):
    """
    Read a manifest file.

    If *check_files* is true, every embedding file must exist.  If
    *check_frames* is true, every frame must parse without anomalies (which is
    what reference data needs; generated hypotheses may not parse).
    """
    path = Path(path)
    manifest = Manifest([], path.parent)
    seen = set()

    try:
        lines = path.read_text(encoding='utf8').split('\n')
    except FileNotFoundError:
        raise ManifestError(f"{path}: no such manifest") from None

    for lineno, line in enumerate(lines, 1):
        line = line.rstrip('\r')
        if not line or line.startswith('#'):
            continue

        fields = line.split('\t')
        if len(fields) != 4:
            raise ManifestError(f"{path}:{lineno}: expected 4 tab-separated fields, found {len(fields)}")

        record = ManifestRecord(*fields)

        if record.utterance_id in seen:
            raise ManifestError(f"{path}:{lineno}: duplicate utterance id '{record.utterance_id}'")
        seen.add(record.utterance_id)

        if check_files and not manifest.resolve(record).exists():
            raise ManifestError(f"{path}:{lineno}: embedding file not found: {record.embedding_path}")

        if check_frames:
            result = parse(record.frame_text)
            if not result.ok:
                problems = '; '.join(result.anomalies) or 'no intent'
                raise ManifestError(f"{path}:{lineno}: invalid frame {record.frame_text!r}: {problems}")

        manifest.records.append(record)

    return manifest

def write_manifest(path, records, header=()):
    lines = [MANIFEST_HEADER, *(f'# {x}' for x in header)]
    lines += [
            '\t'.join([x.utterance_id, x.embedding_path, x.transcript, x.frame_text])
            for x in records
    ]
    Path(path).write_text(''.join(x + '\n' for x in lines), encoding='utf8')

def generate_corpus(grammar, n_train, n_dev, n_test, cfg, seed, out_dir):
    """
    Sample sentences from a grammar, pseudo-encode them, and write one
    manifest per split (plus one embedding file per utterance) to the given
    directory.

    Test sentences are drawn first and training sentences last, so that a
    grammar with disjoint splits holds out its test combinations before
    anything else.
    """
    if isinstance(grammar, str):
        grammar = find_grammar(grammar)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    counts = {'test': n_test, 'dev': n_dev, 'train': n_train}
    samples = grammar.sample(counts, rng_from(seed))

    for split_index, split in enumerate(SPLITS):
        records = []

        for i, inst in enumerate(samples[split]):
            id = f'{split}-{i:05d}'
            embedding_path = f'embeddings/{id}.slpe'
            speech = pseudo_encode(inst.transcript, cfg, seed_from(seed, split_index, i))

            (out_dir / 'embeddings').mkdir(exist_ok=True)
            write_embeddings(out_dir / embedding_path, speech)
            records.append(ManifestRecord(id, embedding_path, inst.transcript, linearize(inst.frame)))

        write_manifest(out_dir / f'{split}.tsv', records, [f'grammar = {grammar.name}'])
        log.info(f"wrote {len(records)} '{split}' utterances to {out_dir / f'{split}.tsv'}")

    train_sentences = {x.transcript for x in samples['train']}
    summary = CorpusSummary(
            grammar=grammar.name,
            counts={k: len(samples[k]) for k in SPLITS},
            distinct_train_sentences=len(train_sentences),
            test_sentences_seen_in_training=sum(
                x.transcript in train_sentences for x in samples['test']
            ),
    )
    log.info(f"{summary.test_sentences_seen_in_training} of {summary.counts['test']} test sentences also appear in the training set")
    return summary


@functools.lru_cache(maxsize=None)
def _char_vector(seed, dim, char):
    v = rng_from(seed, CHARACTER_STREAM, ord(char)).normal(size=dim)
    v /= np.linalg.norm(v)
    v.setflags(write=False)
    return v

def _utterance_rng(cfg, utterance_seed):
    return rng_from(cfg.seed, UTTERANCE_STREAM, utterance_seed)

def _durations(chars, cfg, rng):
    lo, hi = cfg.frames_per_char
    return rng.integers(lo, hi + 1, size=len(chars))
