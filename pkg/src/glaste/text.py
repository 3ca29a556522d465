"""Alphabet, label encoding and greedy CTC decoding."""

from __future__ import annotations

import string

import numpy as np

from .tensor import Tensor

ALPHABET = string.ascii_lowercase + string.digits
BLANK = len(ALPHABET)
N_CLASSES = len(ALPHABET) + 1

_INDEX = {ch: i for i, ch in enumerate(ALPHABET)}


class UnsupportedCharacterError(ValueError):
    pass


def encode(text: str) -> list[int]:
    try:
        return [_INDEX[ch] for ch in text]
    except KeyError as err:
        raise UnsupportedCharacterError(f"character {err.args[0]!r} is not in the alphabet") from None


def decode(indices) -> str:
    return "".join(ALPHABET[i] for i in indices)


def collapse(path, blank: int = BLANK) -> list[int]:
    """Merge adjacent repeats, then drop blanks."""
    out = []
    prev = None
    for k in path:
        k = int(k)
        if k != prev and k != blank:
            out.append(k)
        prev = k
    return out


def greedy_ctc_decode(logprobs, blank: int = BLANK, alphabet: str = ALPHABET) -> list[str]:
    """Best-path decoding of [T, N, K] log-probabilities into N strings."""
    arr = logprobs.data if isinstance(logprobs, Tensor) else np.asarray(logprobs)
    best = arr.argmax(axis=2)
    return ["".join(alphabet[k] for k in collapse(best[:, n], blank)) for n in range(arr.shape[1])]
