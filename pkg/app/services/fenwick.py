"""
Fenwick (binary indexed) tree kernels over slot occupancy.

Particles live in slots of a 1-based array; occupied slots carry weight 1,
so the rank of a particle is the prefix count up to its slot. Moving a
particle to the front clears its slot and occupies the free slot in front
of the current head.
"""
import numpy as np
from numba import njit


@njit(cache=True)
def add(tree, index, value):
    while index < tree.size:
        tree[index] += value
        index += index & -index


@njit(cache=True)
def prefix(tree, index):
    total = 0
    while index > 0:
        total += tree[index]
        index -= index & -index
    return total


@njit(cache=True)
def find(tree, count):
    """Smallest slot whose prefix count reaches ``count``."""
    size = tree.size - 1
    half = 1
    while half * 2 <= size:
        half *= 2
    slot = 0
    while half > 0:
        candidate = slot + half
        if candidate <= size and tree[candidate] < count:
            slot = candidate
            count -= tree[candidate]
        half //= 2
    return slot + 1


@njit(cache=True)
def build(occupied):
    """Linear-time tree over a 0/1 occupancy array (index 0 unused)."""
    tree = occupied.copy()
    size = tree.size
    for index in range(1, size):
        parent = index + (index & -index)
        if parent < size:
            tree[parent] += tree[index]
    return tree


@njit(cache=True)
def move_to_front(tree, slot_of, particle_at, head, movers, old_ranks):
    """
    Applies the jumps in ``movers`` in order, writing each mover's rank
    before its jump into ``old_ranks``. Returns the new head slot.
    """
    for event in range(movers.size):
        particle = movers[event]
        slot = slot_of[particle]
        old_ranks[event] = prefix(tree, slot)
        add(tree, slot, -1)
        particle_at[slot] = -1
        add(tree, head, 1)
        slot_of[particle] = head
        particle_at[head] = particle
        head -= 1
    return head


@njit(cache=True)
def follow(movers, old_ranks, particle, start_rank):
    """Rank of ``particle`` after every event of a log."""
    ranks = np.empty(movers.size, dtype=np.int64)
    rank = start_rank
    for event in range(movers.size):
        if movers[event] == particle:
            rank = 1
        elif old_ranks[event] > rank:
            rank += 1
        ranks[event] = rank
    return ranks
