"""Parsing and formatting of byte-size strings such as ``1K-2K-16K`` or ``256M``."""

import re

from .errors import SpecificationError

PAGE_SIZE = 4096

CHUNK_CLASSES = (128, 256, 512, 1024, 2048, 4096, 8192, 16384, 32768, 65536, 131072)

_UNITS = {"": 1, "B": 1, "K": 1 << 10, "M": 1 << 20, "G": 1 << 30}
_SIZE_RE = re.compile(r"^\s*(\d+)\s*([bBkKmMgG]?)\s*$")


def parse_size(token):
    """Parse ``"512B"``, ``"2k"``, ``"16K"``, ``"96M"`` or a bare integer into bytes."""
    if isinstance(token, int):
        return token
    m = _SIZE_RE.match(token)
    if not m:
        raise SpecificationError(f"invalid size token {token!r}")
    return int(m.group(1)) * _UNITS[m.group(2).upper()]


def format_size(n):
    for unit in ("G", "M", "K"):
        scale = _UNITS[unit]
        if n >= scale and n % scale == 0:
            return f"{n // scale}{unit}"
    return f"{n}B"


def check_chunk_class(n):
    if n not in CHUNK_CLASSES:
        raise SpecificationError(
            f"chunk size {n} is not one of {', '.join(format_size(c) for c in CHUNK_CLASSES)}"
        )
    return n


def parse_size_triple(text):
    """``"1K-2K-16K"`` -> ``(1024, 2048, 16384)``; every token must be a chunk class."""
    tokens = text.split("-")
    if len(tokens) != 3:
        raise SpecificationError(f"expected Small-Medium-Large, got {text!r}")
    out = []
    for tok in tokens:
        try:
            n = parse_size(tok)
        except SpecificationError:
            raise SpecificationError(f"invalid size token {tok!r} in {text!r}") from None
        if n not in CHUNK_CLASSES:
            raise SpecificationError(f"invalid size token {tok!r} in {text!r}: not a chunk class")
        out.append(n)
    return tuple(out)


def format_size_triple(sizes):
    return "-".join(format_size(n) for n in sizes)


def parse_size_range(text):
    """``"128B..128K"`` -> every chunk class in the closed range; a comma list also works."""
    if ".." in text:
        lo_s, hi_s = text.split("..", 1)
        lo, hi = parse_size(lo_s), parse_size(hi_s)
        if lo > hi:
            raise SpecificationError(f"empty size range {text!r}")
        sizes = [c for c in CHUNK_CLASSES if lo <= c <= hi]
    else:
        sizes = [parse_size(t) for t in text.split(",") if t.strip()]
    for n in sizes:
        check_chunk_class(n)
    if not sizes:
        raise SpecificationError(f"no chunk classes in {text!r}")
    return sizes
