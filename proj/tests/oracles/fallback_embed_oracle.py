"""Independent re-implementation of the fallback 3-gram hashing embedder.

Prints cosine similarities used as frozen expectations in test_embeddings.cpp.
"""
import math

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
MASK = (1 << 64) - 1


def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * FNV_PRIME) & MASK
    return h


def ascii_lower(text: str) -> str:
    return "".join(chr(ord(c) + 32) if "A" <= c <= "Z" else c for c in text)


def embed(text: str, dim: int) -> list:
    cps = ascii_lower(text)
    acc = [0.0] * dim
    if len(cps) < 3:
        return acc
    for i in range(len(cps) - 2):
        h = fnv1a64(cps[i:i + 3].encode("utf-8"))
        acc[h % dim] += 1.0 if (h >> 63) == 0 else -1.0
    norm = math.sqrt(sum(v * v for v in acc))
    if norm == 0:
        return acc
    # float32 storage, as in the C++ embedder
    import struct
    return [struct.unpack("f", struct.pack("f", v / norm))[0] for v in acc]


def cosine(a, b):
    na = sum(x * x for x in a)
    nb = sum(x * x for x in b)
    if na == 0 or nb == 0:
        return 0.0
    return sum(x * y for x, y in zip(a, b)) / (math.sqrt(na) * math.sqrt(nb))


if __name__ == "__main__":
    pairs = [("pizza", "azzip"), ("Grilled Cheese", "grilled cheese sandwich"),
             ("chicken salad", "Salad, chicken"), ("ramen", "ramen noodles")]
    for a, b in pairs:
        print(f"{a!r} {b!r} dim=256 cosine={cosine(embed(a, 256), embed(b, 256)):.12f}")
    v = embed("pizza", 256)
    print("pizza nonzero buckets:", [(i, round(x, 9)) for i, x in enumerate(v) if x != 0])
