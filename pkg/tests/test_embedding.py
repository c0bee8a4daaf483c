import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memgov.embedding import cosine, drift, embed, embed_state, state_drift, tokenize

from .oracles import oracle_cos, oracle_embed


def test_empty_text_is_zero_vector():
    assert not embed("").any()
    assert not embed("  !!! ").any()


def test_embed_pure_and_unit_norm():
    a, b = embed("the cat sat on the mat"), embed("the cat sat on the mat")
    assert a.tobytes() == b.tobytes()
    assert abs(np.linalg.norm(a) - 1.0) < 1e-9


def test_embed_matches_oracle():
    text = "Memory governance keeps agents honest over long horizons"
    assert np.allclose(embed(text), oracle_embed(text), atol=1e-15)


def test_word_order_changes_bigrams_only():
    # unigrams shared, bigrams differ; no bucket collisions under the frozen hash
    got = cosine(embed("alpha beta"), embed("beta alpha"))
    assert got == pytest.approx(2 / 3, abs=1e-12)
    assert got == pytest.approx(oracle_cos(oracle_embed("alpha beta"), oracle_embed("beta alpha")), abs=1e-12)


def test_cosine_identities():
    v = embed("some unit vector text")
    assert cosine(v, v) == pytest.approx(1.0, abs=1e-12)
    assert cosine(v, -v) == pytest.approx(-1.0, abs=1e-12)
    assert cosine(np.zeros(256), v) == 0.0


def test_drift_identity_and_disjoint():
    assert drift("a b c d", "a b c d") == pytest.approx(0.0, abs=1e-12)
    # "red green" and "cat dog" occupy disjoint buckets (checked by the oracle)
    ea, eb = oracle_embed("red green"), oracle_embed("cat dog")
    assert not any(x and y for x, y in zip(ea, eb))
    assert drift("red green", "cat dog") == pytest.approx(1.0, abs=1e-9)


def test_drift_one_word_substitution():
    rng = random.Random(7)
    words = [f"w{rng.randrange(400)}" for _ in range(100)]
    original = " ".join(words)
    words[50] = "zzzreplacement"
    perturbed = " ".join(words)
    d = drift(perturbed, original)
    assert 0.0 < d < 0.1
    assert d == pytest.approx(1 - oracle_cos(oracle_embed(perturbed), oracle_embed(original)), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.text(max_size=60), st.text(max_size=60))
def test_drift_symmetric_bitwise(a, b):
    assert drift(a, b) == drift(b, a)
    assert 0.0 <= drift(a, b) <= 2.0


def test_drift_zero_iff_parallel():
    assert drift("x y z", "X Y Z") == pytest.approx(0.0, abs=1e-12)
    assert drift("x y z", "x y z x y z") > 0  # bigram "z x" breaks proportionality


def test_mean_drift_monotone_in_replacement_rate():
    rng = random.Random(11)
    vocab = [f"t{i}" for i in range(500)]
    means = []
    for p in (0.0, 0.1, 0.3, 0.6, 1.0):
        ds = []
        for _ in range(100):
            toks = [rng.choice(vocab) for _ in range(40)]
            pert = [rng.choice(vocab) if rng.random() < p else t for t in toks]
            ds.append(drift(" ".join(pert), " ".join(toks)))
        means.append(sum(ds) / len(ds))
    assert means == sorted(means)


def test_state_embedding_modes():
    contents = ["alpha beta", "gamma delta"]
    assert embed_state(contents).tobytes() == embed("alpha beta gamma delta").tobytes()
    mean = embed_state(contents, "mean")
    assert abs(np.linalg.norm(mean) - 1) < 1e-12
    assert state_drift(contents, contents, "mean") == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        embed_state(contents, "bogus")


def test_tokenize_unicode():
    assert tokenize("Café, naïve—ÉCOLE") == ["café", "naïve", "école"]


def test_empty_texts_have_zero_drift():
    assert drift("", "") == 0.0
    assert drift("", "alpha") == drift("alpha", "") == 1.0
    assert state_drift([], []) == 0.0
    assert state_drift([], [], mode="mean") == 0.0
