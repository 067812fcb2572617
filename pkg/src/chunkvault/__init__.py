"""Deduplicating convergent-encrypted chunk storage with tiered caching.

Container layers flatten into canonical images, split into fixed-size
chunks named by ciphertext hash, and load on demand through a worker-local
cache, an erasure-coded distributed cache, and a root-namespaced origin
store, with copy-on-write block-device views on top and a discrete-event
simulator around the whole stack.
"""

__version__ = "0.1.0"
