from __future__ import annotations

import hashlib
import random

import pytest

from poa_ca import merkle


def oracle_root(leaves: list[bytes]) -> bytes:
    """Independent root computation: iterative level-by-level pairing with
    odd-node promotion (equivalent to the recursive split definition)."""
    if not leaves:
        return hashlib.sha256(b"").digest()
    level = [hashlib.sha256(b"\x00" + leaf).digest() for leaf in leaves]
    while len(level) > 1:
        paired = []
        for i in range(0, len(level) - 1, 2):
            paired.append(hashlib.sha256(b"\x01" + level[i] + level[i + 1]).digest())
        if len(level) % 2:
            paired.append(level[-1])
        level = paired
    return level[0]


@pytest.fixture(scope="module")
def leaves():
    rng = random.Random(64)
    return [bytes(rng.getrandbits(8) for _ in range(12)) for _ in range(64)]


@pytest.fixture(scope="module")
def tree(leaves):
    t = merkle.MerkleTree()
    for leaf in leaves:
        t.append_leaf(leaf)
    return t


def test_empty_root_is_hash_of_nothing(tree):
    assert tree.root(0) == hashlib.sha256(b"").digest()


def test_single_leaf_root_is_leaf_hash(tree, leaves):
    assert tree.root(1) == merkle.leaf_hash(leaves[0])
    assert tree.inclusion_path(0, 1) == []


def test_two_leaf_tree_by_hand(tree, leaves):
    left = merkle.leaf_hash(leaves[0])
    right = merkle.leaf_hash(leaves[1])
    assert tree.root(2) == hashlib.sha256(b"\x01" + left + right).digest()
    assert tree.inclusion_path(0, 2) == [right]
    assert tree.inclusion_path(1, 2) == [left]


def test_roots_match_oracle_for_every_prefix(tree, leaves):
    for size in range(65):
        assert tree.root(size) == oracle_root(leaves[:size]), size


def test_every_inclusion_proof_verifies_against_rebuilt_root(tree, leaves):
    for size in range(1, 65):
        root = oracle_root(leaves[:size])
        for index in range(size):
            path = tree.inclusion_path(index, size)
            assert merkle.verify_inclusion(merkle.leaf_hash(leaves[index]), index, size, path, root)


def test_every_consistency_proof_verifies_against_rebuilt_roots(tree, leaves):
    for old in range(1, 33):
        for new in range(old, 33):
            path = tree.consistency_path(old, new)
            assert merkle.verify_consistency(
                old, new, oracle_root(leaves[:old]), oracle_root(leaves[:new]), path
            ), (old, new)


def test_wrong_leaf_rejected(tree, leaves):
    path = tree.inclusion_path(3, 10)
    assert not merkle.verify_inclusion(merkle.leaf_hash(b"other"), 3, 10, path, tree.root(10))


def test_wrong_index_rejected(tree, leaves):
    path = tree.inclusion_path(3, 10)
    assert not merkle.verify_inclusion(merkle.leaf_hash(leaves[3]), 4, 10, path, tree.root(10))


def test_mutated_path_rejected(tree, leaves):
    path = tree.inclusion_path(3, 10)
    tampered = list(path)
    tampered[0] = bytes(32)
    assert not merkle.verify_inclusion(merkle.leaf_hash(leaves[3]), 3, 10, tampered, tree.root(10))


def test_consistency_rejects_mismatched_roots(tree):
    path = tree.consistency_path(5, 12)
    assert not merkle.verify_consistency(5, 12, tree.root(6), tree.root(12), path)
    assert not merkle.verify_consistency(5, 12, tree.root(5), tree.root(13), path)


def test_equal_sizes_empty_proof(tree):
    assert tree.consistency_path(7, 7) == []
    assert merkle.verify_consistency(7, 7, tree.root(7), tree.root(7), [])
    assert not merkle.verify_consistency(7, 7, tree.root(7), tree.root(8), [])


def test_out_of_range_errors(tree):
    with pytest.raises(IndexError):
        tree.inclusion_path(10, 10)
    with pytest.raises(IndexError):
        tree.inclusion_path(0, 65)
    with pytest.raises(IndexError):
        tree.consistency_path(0, 5)
    with pytest.raises(IndexError):
        tree.consistency_path(9, 8)
