#!/usr/bin/env python3

"""
Subword vocabularies and the conversion between text and token ids.

Vocabularies are built by repeatedly merging the most frequent pair of
adjacent symbols (as in byte-pair encoding), but the resulting pieces are
spelled the way WordPiece spells them: the first piece of a word is written
plainly and every following piece carries a "##" prefix.  Text is segmented
with WordPiece's greedy longest-match-first rule.
"""

import re
import logging
import autoprop

from collections import Counter
from pathlib import Path
from pydantic import BaseModel, ConfigDict, Field
from .errors import VocabError, ParseError
from .parser import Repr

log = logging.getLogger(__name__)

SPECIALS = '[PAD]', '[UNK]', '[BOS]', '[SEP]', '[EOS]', '[MASK]', '[SLU]'
PAD, UNK, BOS, SEP, EOS, MASK, SLU = range(len(SPECIALS))

# Characters with a structural meaning in linearized semantic frames.  They
# are always split off into words of their own, so they can be atomic tokens.
CONTROL_CHARS = '&', '+'

VOCAB_HEADER = '#slp-vocab v1'

class VocabConfig(BaseModel):
    model_config = ConfigDict(extra='forbid', frozen=True)

    size: int = Field(512, gt=len(SPECIALS))
    min_freq: int = Field(2, ge=1)


@autoprop
class Vocabulary(Repr):
    repr_attrs = ['size']

    def __init__(self, tokens):
        tokens = list(tokens)

        if tuple(tokens[:len(SPECIALS)]) != SPECIALS:
            raise VocabError(f"the first tokens must be the special tokens {', '.join(SPECIALS)}")

        index = {}
        for i, token in enumerate(tokens):
            if not token or any(c.isspace() for c in token):
                raise VocabError(f"token {i} is empty or contains whitespace: {token!r}")
            if token in index:
                raise VocabError(f"duplicate token: {token!r}")
            index[token] = i

        self._tokens = tuple(tokens)
        self._index = index

    def __len__(self):
        return len(self._tokens)

    def __contains__(self, token):
        return token in self._index

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self._tokens == other._tokens

    def get_size(self):
        return len(self._tokens)

    def get_tokens(self):
        return self._tokens

    def get_specials(self):
        return dict(zip(SPECIALS, range(len(SPECIALS))))

    def get_num_specials(self):
        return len(SPECIALS)

    def id_of(self, token):
        return self._index.get(token, UNK)

    def token_of(self, id):
        if not 0 <= id < len(self._tokens):
            raise VocabError(f"token id {id} is out of range for a vocabulary of size {len(self._tokens)}")
        return self._tokens[id]

    def is_special(self, id):
        return 0 <= id < len(SPECIALS)


def normalize(text):
    """
    Lowercase the given text, split off control characters, and collapse
    whitespace.
    """
    text = text.lower()
    text = re.sub('([{}])'.format(re.escape(''.join(CONTROL_CHARS))), r' \1 ', text)
    return ' '.join(text.split())

def train_vocab(corpus, target_size, min_freq=2, reserved=()):
    """
    Build a vocabulary from the given iterable of sentences.

    The vocabulary contains, in order: the special tokens, the *reserved*
    tokens (which are never broken into pieces), every character seen in the
    corpus, and then merged pieces in the order they were merged, until either
    *target_size* tokens exist or no pair of pieces occurs at least *min_freq*
    times.
    """
    reserved = list(dict.fromkeys(reserved))
    for token in reserved:
        if not token or any(c.isspace() for c in token):
            raise VocabError(f"reserved tokens can't be empty or contain whitespace: {token!r}")

    reserved_set = set(reserved)
    word_counts = Counter()
    num_words = 0

    for line in corpus:
        for word in normalize(line).split():
            num_words += 1
            if word not in reserved_set:
                word_counts[word] += 1

    if not num_words:
        raise VocabError("can't build a vocabulary from an empty corpus")

    words = {tuple(_spell(word)): count for word, count in word_counts.items()}
    alphabet = sorted({symbol for word in words for symbol in word})

    tokens = list(SPECIALS)
    tokens += [x for x in reserved if x not in SPECIALS]
    tokens += [x for x in alphabet if x not in reserved_set]

    if target_size <= len(tokens):
        raise VocabError(f"target size ({target_size}) must exceed the number of special, reserved, and single-character tokens ({len(tokens)})")

    known = set(tokens)
    num_merges = 0

    while len(tokens) < target_size:
        pair_counts = Counter()
        for word, count in words.items():
            for pair in zip(word, word[1:]):
                pair_counts[pair] += count

        if not pair_counts:
            break

        # Ties are broken alphabetically so that the vocabulary is
        # deterministic.
        pair, count = min(pair_counts.items(), key=lambda x: (-x[1], x[0]))
        if count < min_freq:
            break

        merged = pair[0] + pair[1][2:]
        words = {_merge(word, pair, merged): count for word, count in words.items()}
        num_merges += 1

        if merged not in known:
            known.add(merged)
            tokens.append(merged)

    log.info(f"built a vocabulary of {len(tokens)} tokens ({len(reserved)} reserved, {len(alphabet)} characters, {num_merges} merges)")
    return Vocabulary(tokens)

def tokenize(text, vocab):
    """
    Convert the given text into a list of token ids.

    Each whitespace-separated word is segmented greedily, longest piece first.
    If that fails, the word is spelled out character by character.  If even
    that isn't possible, the word becomes a single [UNK].  Special tokens are
    never produced, even if the text contains something like "[SEP]".
    """
    ids = []

    for word in normalize(text).split():
        pieces = _segment(word, vocab)
        if pieces is None:
            ids.append(UNK)
        else:
            ids += [vocab.id_of(x) for x in pieces]

    return ids

def detokenize(ids, vocab):
    """
    Convert the given token ids back into text.

    Continuation pieces are fused onto the preceding piece, [PAD] tokens are
    dropped, and any other special tokens are rendered literally.
    """
    text = ''

    for id in ids:
        token = vocab.token_of(id)
        if id == PAD:
            continue
        if token.startswith('##') and len(token) > 2 and text:
            text += token[2:]
        else:
            text += (' ' if text else '') + token

    return text

def read_vocab(path):
    """
    Read a vocabulary file: a '#slp-vocab v1' header line followed by one
    token per line, in id order.
    """
    path = Path(path)
    lines = path.read_text(encoding='utf8').split('\n')

    if lines[0] != VOCAB_HEADER:
        err = ParseError(f"not a vocabulary file (expected '{VOCAB_HEADER}' header)", 0)
        err.path = path
        raise err

    if lines[-1] == '':
        lines.pop()

    return Vocabulary(lines[1:])

def write_vocab(path, vocab):
    text = '\n'.join([VOCAB_HEADER, *vocab.tokens]) + '\n'
    Path(path).write_text(text, encoding='utf8')


def _spell(word):
    return [word[0]] + ['##' + c for c in word[1:]]

def _merge(word, pair, merged):
    out = []
    i = 0

    while i < len(word):
        if i + 1 < len(word) and (word[i], word[i+1]) == pair:
            out.append(merged)
            i += 2
        else:
            out.append(word[i])
            i += 1

    return tuple(out)

def _segment(word, vocab):
    pieces = []
    start = 0

    while start < len(word):
        end = len(word)
        piece = None

        while start < end:
            candidate = word[start:end] if start == 0 else '##' + word[start:end]
            if candidate in vocab and candidate not in SPECIALS:
                piece = candidate
                break
            end -= 1

        if piece is None:
            break

        pieces.append(piece)
        start = end

    else:
        return pieces

    # Greedy matching can paint itself into a corner; fall back to spelling
    # the word out one character at a time.
    chars = _spell(word)
    if all(x in vocab and x not in SPECIALS for x in chars):
        return chars

    return None
