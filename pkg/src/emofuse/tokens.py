"""Shared token conventions: reserved special IDs and the TokenSequence type."""

from __future__ import annotations

from dataclasses import dataclass

from .errors import InputError

PAD = 0
CLS = 1
SEP = 2
MASK = 3
UNK = 4
N_SPECIALS = 5

SPECIAL_TOKENS = ("<pad>", "<cls>", "<sep>", "<mask>", "<unk>")

MODALITIES = ("speech", "text")


@dataclass(frozen=True)
class TokenSequence:
    """Discrete token IDs for one modality, with CLS fixed at position 0."""

    modality: str
    ids: tuple[int, ...]

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise InputError(f"unknown modality {self.modality!r}")
        if not self.ids or self.ids[0] != CLS:
            raise InputError("token sequence must start with the CLS token")
        object.__setattr__(self, "ids", tuple(int(i) for i in self.ids))

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def body(self) -> tuple[int, ...]:
        """Token IDs after the CLS slot."""
        return self.ids[1:]
