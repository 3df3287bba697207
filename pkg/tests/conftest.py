"""Shared helpers for the corpusforge test suite."""

from __future__ import annotations

import random

import pytest

from corpusforge.manifest import ManifestRecord
from corpusforge.textnorm import build_profile

_WORD_ALPHABET = "abcdefghijklmnopqrstuvwxyz"


def random_word(rng: random.Random, lo: int = 2, hi: int = 9) -> str:
    return "".join(rng.choice(_WORD_ALPHABET) for _ in range(rng.randint(lo, hi)))


def random_sentence(rng: random.Random, n_words: int) -> str:
    return " ".join(random_word(rng) for _ in range(n_words))


def make_record(path: str = "a.wav", duration: float = 5.0, **kwargs) -> ManifestRecord:
    return ManifestRecord(audio_filepath=path, duration=duration, **kwargs)


@pytest.fixture
def hy_profile():
    return build_profile("hy")


@pytest.fixture
def ka_profile():
    return build_profile("ka")
