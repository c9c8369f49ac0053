import numpy as np
import pytest

from glad.embed import Embedder, NodeKey, embed, load_embeddings, node_text


def test_unit_norm_and_deterministic():
    a = embed("gateway dispatched order", 64)
    assert np.isclose(np.linalg.norm(a), 1.0)
    assert np.array_equal(a, embed("gateway dispatched order", 64))


def test_similar_texts_closer_than_unrelated():
    a = embed("worker w01 is a server entity", 768)
    b = embed("worker w02 is a server entity", 768)
    c = embed("payment declined for card", 768)
    assert a @ b > a @ c


def test_bad_input():
    with pytest.raises(ValueError):
        embed("", 16)
    with pytest.raises(ValueError):
        embed("x", 4)


def test_node_text():
    assert node_text(NodeKey.event("a <*> b")) == "a <*> b"
    assert node_text(NodeKey.field("server", "w1")) == "w1 is a server entity"
    with pytest.raises(ValueError):
        NodeKey("event", "ip", "x")


def test_overrides_from_tsv(tmp_path):
    p = tmp_path / "e.tsv"
    p.write_text("w1 is a server entity\t1 0 0 0 0 0 0 0\n")
    e = Embedder.from_file(p, 8)
    assert e.node(NodeKey.field("server", "w1")).tolist() == [1, 0, 0, 0, 0, 0, 0, 0]
    assert e("other").shape == (8,)


def test_embedding_file_errors(tmp_path):
    p = tmp_path / "e.tsv"
    p.write_text("a\t1 2\nb\t1 2 3\n")
    with pytest.raises(ValueError):
        load_embeddings(p)
    p.write_text("a\t1 2\na\t1 2\n")
    with pytest.raises(ValueError):
        load_embeddings(p)
