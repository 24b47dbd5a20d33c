"""Writes the IDX fixtures used by the ingestion tests (numpy-free, stdlib only)."""
import struct
from pathlib import Path

here = Path(__file__).parent
n, rows, cols = 4, 28, 28
pixels = bytes((i * 7 + j * 3) % 256 for i in range(n) for j in range(rows * cols))
(here / "four-images.idx3").write_bytes(struct.pack(">IIII", 0x803, n, rows, cols) + pixels)
(here / "four-labels.idx1").write_bytes(struct.pack(">II", 0x801, n) + bytes([3, 1, 4, 1]))
(here / "three-labels.idx1").write_bytes(struct.pack(">II", 0x801, 3) + bytes([0, 1, 2]))
(here / "empty.idx3").write_bytes(b"")
(here / "bad-magic.idx3").write_bytes(struct.pack(">IIII", 0x801, n, rows, cols) + pixels)
(here / "truncated.idx3").write_bytes(struct.pack(">IIII", 0x803, n, rows, cols) + pixels[:100])
