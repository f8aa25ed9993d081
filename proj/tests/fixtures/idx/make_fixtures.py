#!/usr/bin/env python3
"""Writes the small IDX files used by the parser tests."""
import struct

images = bytes((i * 37 + 11) % 256 for i in range(3 * 4 * 5))
header = struct.pack(">IIII", 0x803, 3, 4, 5)

with open("golden-images-idx3-ubyte", "wb") as f:
    f.write(header + images)
with open("golden-labels-idx1-ubyte", "wb") as f:
    f.write(struct.pack(">II", 0x801, 3) + bytes([7, 0, 9]))
with open("bad-magic-images-idx3-ubyte", "wb") as f:
    f.write(struct.pack(">IIII", 0x804, 3, 4, 5) + images)
with open("truncated-images-idx3-ubyte", "wb") as f:
    f.write(header + images[:-7])
with open("short-labels-idx1-ubyte", "wb") as f:
    f.write(struct.pack(">II", 0x801, 2) + bytes([1, 2]))
