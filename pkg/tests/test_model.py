"""Model assembly: forward contracts, classifier, counts, export, checkpoints."""

import numpy as np
import pytest

from msdgformer import ConfigError, FormatError
from msdgformer import dictionary as dc
from msdgformer import model as md
from msdgformer import spectra as sp


def tiny_config(**over):
    base = dict(l=36, rho=8, gamma=4, h=16, heads=2, d_k=8, layers=1,
                mlp_dim=32, phi=16, alpha=8, c=4, r=2)
    base.update(over)
    return md.ModelConfig(**base).validate()


@pytest.fixture(scope="module")
def setup():
    cfg = tiny_config()
    axis = sp.linear_axis(cfg.l, 500.0, 1000.0)
    rng = np.random.default_rng(0)
    raw = dc.RawDictionary(
        rng.standard_normal((cfg.alpha, cfg.l)).astype(np.float32), (1, 2, 3, 4),
        cfg.per_class,
    )
    dictionary = dc.denoise(raw, cfg.r)
    refs_matrix = np.zeros((5, cfg.n_patches), dtype=np.float32)
    for c in range(4):
        refs_matrix[c, 2 * c] = 1.0
        refs_matrix[c, 2 * c + 1] = 1.0
    refs = md.ClassReference(refs_matrix, np.array([False] * 4 + [True]))
    weights = md.init_weights(cfg, seed=1)
    return cfg, axis, dictionary, refs, weights


# ------------------------------------------------------------------- config


def test_config_invariants():
    with pytest.raises(ConfigError):
        tiny_config(h=17)
    with pytest.raises(ConfigError):
        tiny_config(l=37)
    with pytest.raises(ConfigError):
        tiny_config(alpha=9)
    with pytest.raises(ConfigError):
        tiny_config(r=3)


def test_paper_config_patch_count():
    assert md.paper_config().n_patches == 1765


# ------------------------------------------------------------------- forward


def test_forward_output_contract(setup):
    cfg, axis, dictionary, refs, weights = setup
    spectrum = sp.Spectrum(np.random.default_rng(3).standard_normal(cfg.l), 1)
    peaks, maps = md.forward(spectrum, axis, dictionary, cfg, weights)
    assert peaks.shape == (cfg.n_patches,)
    assert np.all(peaks > 0.0) and np.all(peaks < 1.0)
    assert maps.shape == (cfg.n_patches, cfg.heads, cfg.c)


def test_forward_zero_weights_gives_sigmoid_bias(setup):
    cfg, axis, dictionary, refs, _ = setup
    weights = md.init_weights(cfg, seed=5)
    store = weights.parameter_store()
    for name, t in store.items():
        if not name.endswith(("bias", "b1", "b2", "bq", "bk", "bv", "bo",
                              "ln1_bias", "ln2_bias")):
            t.data[:] = 0
    weights.head.b2.data[:] = 0.3
    spectrum = np.random.default_rng(4).standard_normal(cfg.l)
    peaks, _ = md.forward(spectrum, axis, dictionary, cfg, weights)
    expected = 1.0 / (1.0 + np.exp(-0.3))
    np.testing.assert_allclose(peaks, expected, atol=1e-6)


def test_forward_msformer_ignores_dictionary(setup):
    cfg, axis, dictionary, refs, _ = setup
    cfg_m = tiny_config(dictionary_enabled=False)
    weights = md.init_weights(cfg_m, seed=2)
    spectrum = np.random.default_rng(5).standard_normal(cfg.l)
    a, maps = md.forward(spectrum, axis, None, cfg_m, weights)
    perturbed = dc.DenoisedDictionary(
        dictionary.spectra + 10.0, dictionary.class_ids,
        dictionary.per_class, dictionary.rank, dictionary.singular_values,
    )
    b, _ = md.forward(spectrum, axis, perturbed, cfg_m, weights)
    assert maps is None
    np.testing.assert_array_equal(a, b)


def test_forward_validates_before_compute(setup):
    cfg, axis, dictionary, refs, weights = setup
    with pytest.raises(ConfigError):
        md.forward(np.zeros(cfg.l + 1), axis, dictionary, cfg, weights)
    with pytest.raises(ConfigError):
        md.forward(np.zeros(cfg.l), axis, None, cfg, weights)
    bad_dict = dc.DenoisedDictionary(
        dictionary.spectra[:4], (1, 2), 2, 2, dictionary.singular_values[:2]
    )
    with pytest.raises(ConfigError):
        md.forward(np.zeros(cfg.l), axis, bad_dict, cfg, weights)


# ------------------------------------------------------------------- classify


def test_classify_exact_match(setup):
    _, _, _, refs, _ = setup
    assert md.classify(refs.matrix[2], refs, tau=0.5) == 3


def test_classify_similarity_one(setup):
    _, _, _, refs, _ = setup
    peaks = refs.matrix[0] * 0.73  # cosine is scale-invariant
    assert md.classify(peaks, refs, tau=0.99) == 1


def test_classify_zero_prediction_is_dust(setup):
    _, _, _, refs, _ = setup
    assert md.classify(np.zeros(refs.matrix.shape[1]), refs, tau=0.5) == 5


def test_classify_uniform_floor_below_threshold():
    # desk-sized references: cosine of a uniform 0.1 vector against a 2-hot
    # row is sqrt(2/n) ~ 0.1, below tau=0.5 -> dust; a tiny tau keeps it
    n = 199
    matrix = np.zeros((5, n), dtype=np.float32)
    for c in range(4):
        matrix[c, 3 * c : 3 * c + 2] = 1.0
    refs = md.ClassReference(matrix, np.array([False] * 4 + [True]))
    peaks = np.full(n, 0.1)
    assert md.classify(peaks, refs, tau=0.5) == 5
    assert md.classify(peaks, refs, tau=0.05) != 5


def test_classify_scale_invariance(setup):
    _, _, _, refs, _ = setup
    rng = np.random.default_rng(6)
    peaks = rng.random(refs.matrix.shape[1])
    assert md.classify(peaks, refs, 0.2) == md.classify(peaks * 7.3, refs, 0.2)


def test_classify_disjoint_peak_sets(setup):
    _, _, _, refs, _ = setup
    peaks = np.zeros(refs.matrix.shape[1])
    peaks[refs.matrix[0].astype(bool)] = 0.9
    assert md.classify(peaks, refs, tau=0.5) == 1


# ------------------------------------------------------------------- counting


def test_parameter_counts_match_reference_totals():
    cfg = md.paper_config()
    full = md.count_parameters(cfg, md.FULL)
    eff = md.count_parameters(cfg, md.EFFICIENT)
    msf = md.count_parameters(md.paper_config(dictionary_enabled=False))
    assert abs(full.weights - 8.36e6) / 8.36e6 < 0.05
    assert abs(eff.weights - 4.39e6) / 4.39e6 < 0.05
    assert abs(msf.weights - 4.13e6) / 4.13e6 < 0.05
    # 7-layer ablation lands on the published 9.39M as well
    msf7 = md.count_parameters(md.paper_config(layers=7, dictionary_enabled=False))
    assert abs(msf7.weights - 9.39e6) / 9.39e6 < 0.05


def test_parameter_count_matches_actual_tensors(setup):
    cfg, _, _, _, weights = setup
    counted = md.count_parameters(cfg, md.FULL)
    actual = sum(t.size for t in weights.parameter_store().tensors())
    assert counted.total == actual


def test_parameter_count_itemization_consistency():
    cfg = md.paper_config()
    full = md.count_parameters(cfg, md.FULL)
    assert full.weights + full.tokens == full.total
    assert set(full.items) >= {"input_embedding", "positional_embedding",
                               "input_encoder", "dictionary_encoder",
                               "learnable_tokens", "selection_attention", "peak_head"}


# ------------------------------------------------------------------- export


def test_export_forward_equivalence(setup):
    cfg, axis, dictionary, refs, weights = setup
    model = md.Model(cfg, weights, axis, refs, dictionary)
    eff = md.export_efficient(model)
    rng = np.random.default_rng(7)
    batch = rng.standard_normal((20, cfg.l)).astype(np.float32)
    assert np.abs(model.predict(batch) - eff.predict(batch)).max() < 1e-5


def test_export_strictly_smaller(setup):
    cfg, _, _, _, _ = setup
    assert md.count_parameters(cfg, md.EFFICIENT).total < md.count_parameters(cfg, md.FULL).total


def test_export_token_count_tracks_classes(setup):
    cfg, axis, _, refs, _ = setup
    # adding classes at training time only grows the cached token count
    for extra in (0, 2):
        c = 4 + extra
        cfg2 = tiny_config(alpha=2 * c, c=c)
        rng = np.random.default_rng(8)
        raw = dc.RawDictionary(
            rng.standard_normal((cfg2.alpha, cfg2.l)).astype(np.float32),
            tuple(range(1, c + 1)), cfg2.per_class,
        )
        model = md.Model(cfg2, md.init_weights(cfg2, seed=0), axis, refs,
                         dc.denoise(raw, cfg2.r))
        eff = md.export_efficient(model)
        assert eff.cached_tokens.shape == (cfg2.n_patches, c, cfg2.h)


def test_export_requires_full_model(setup):
    cfg, axis, _, refs, _ = setup
    cfg_m = tiny_config(dictionary_enabled=False)
    model = md.Model(cfg_m, md.init_weights(cfg_m, seed=0), axis, refs, None)
    with pytest.raises(ConfigError):
        md.export_efficient(model)


# ------------------------------------------------------------------- checkpoint


def test_checkpoint_roundtrip_bitexact(setup, tmp_path):
    cfg, axis, dictionary, refs, weights = setup
    model = md.Model(cfg, weights, axis, refs, dictionary)
    p1, p2 = tmp_path / "a.msdg", tmp_path / "b.msdg"
    md.save_checkpoint(p1, model)
    loaded = md.load_checkpoint(p1)
    md.save_checkpoint(p2, loaded)
    assert p1.read_bytes() == p2.read_bytes()


def test_checkpoint_forward_identical(setup, tmp_path):
    cfg, axis, dictionary, refs, weights = setup
    model = md.Model(cfg, weights, axis, refs, dictionary)
    path = tmp_path / "m.msdg"
    md.save_checkpoint(path, model)
    loaded = md.load_checkpoint(path)
    x = np.random.default_rng(9).standard_normal((4, cfg.l)).astype(np.float32)
    np.testing.assert_array_equal(model.predict(x), loaded.predict(x))


def test_checkpoint_efficient_roundtrip(setup, tmp_path):
    cfg, axis, dictionary, refs, weights = setup
    eff = md.export_efficient(md.Model(cfg, weights, axis, refs, dictionary))
    path = tmp_path / "e.msdg"
    md.save_checkpoint(path, eff)
    loaded = md.load_checkpoint(path)
    assert isinstance(loaded, md.EfficientModel)
    x = np.random.default_rng(10).standard_normal((3, cfg.l)).astype(np.float32)
    np.testing.assert_array_equal(eff.predict(x), loaded.predict(x))


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "junk.msdg"
    path.write_bytes(b"NOPE" + b"\x00" * 64)
    with pytest.raises(FormatError):
        md.load_checkpoint(path)


def test_checkpoint_shape_mismatch_names_tensor(setup, tmp_path):
    import struct

    cfg, axis, dictionary, refs, weights = setup
    model = md.Model(cfg, weights, axis, refs, dictionary)
    # write a structurally valid container whose head.b1 has the wrong shape
    entries = md._tensor_entries(model)
    entries["head.b1"] = np.zeros(cfg.phi + 1, dtype=np.float32)
    path = tmp_path / "bad_shape.msdg"
    with open(path, "wb") as fh:
        fh.write(b"MSDG")
        fh.write(struct.pack("<I", 1))
        fh.write(md._pack_config(md.FULL, cfg))
        fh.write(struct.pack("<I", len(entries)))
        for name in sorted(entries):
            arr = np.ascontiguousarray(entries[name], dtype="<f4")
            encoded = name.encode()
            fh.write(struct.pack("<H", len(encoded)) + encoded)
            fh.write(struct.pack("<B", arr.ndim))
            for extent in arr.shape:
                fh.write(struct.pack("<Q", extent))
            fh.write(arr.tobytes())
    with pytest.raises(FormatError, match="head.b1"):
        md.load_checkpoint(path)


def test_msformer_checkpoint_lacks_dictionary_tensors(setup, tmp_path):
    cfg, axis, _, refs, _ = setup
    cfg_m = tiny_config(dictionary_enabled=False)
    model = md.Model(cfg_m, md.init_weights(cfg_m, seed=0), axis, refs, None)
    path = tmp_path / "msf.msdg"
    md.save_checkpoint(path, model)
    blob = path.read_bytes()
    assert b"dict_enc" not in blob
    assert b"tokens." not in blob
    assert b"selection" not in blob
    loaded = md.load_checkpoint(path)
    assert loaded.kind == md.MS_FORMER
