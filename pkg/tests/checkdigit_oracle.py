"""Brute-force check digits written from the textbook definitions."""

import string

# ISO 6346 letter values: start at 10 and step over 11, 22 and 33
_LETTERS = {}
_v = 10
for _ch in string.ascii_uppercase:
    while _v in (11, 22, 33):
        _v += 1
    _LETTERS[_ch] = _v
    _v += 1


def iso6346_digit(prefix: str) -> int:
    total = 0
    for i, ch in enumerate(prefix):
        total += (_LETTERS[ch] if ch.isalpha() else int(ch)) * 2 ** i
    r = total % 11
    return 0 if r == 10 else r


def iso6346_remainder(prefix: str) -> int:
    return sum((_LETTERS[ch] if ch.isalpha() else int(ch)) * 2 ** i
               for i, ch in enumerate(prefix)) % 11


def imo_digit(body: str) -> int:
    # try every candidate digit; exactly one satisfies the weighted sum rule
    weights = (7, 6, 5, 4, 3, 2)
    s = sum(int(d) * w for d, w in zip(body, weights))
    return [d for d in range(10) if (s - d) % 10 == 0][0]
