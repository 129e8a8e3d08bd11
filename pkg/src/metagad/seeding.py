import hashlib


def derive_seed(seed: int, stage: str) -> int:
    """Stable 63-bit sub-seed for ``stage`` under a global ``seed``."""
    digest = hashlib.sha256(f"{int(seed)}/{stage}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1
