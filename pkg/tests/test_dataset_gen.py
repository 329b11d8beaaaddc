import json

import numpy as np
import pytest

from skelattack.dataset_gen import (generate_formulas, load_dataset, render,
                                    write_dataset)
from skelattack.loss_metrics import tokenize
from skelattack.region_select import Mode, build_search_space
from skelattack.victim_oracle import toy_recognize


class TestGenerateFormulas:
    def test_single_formula_reproducible(self):
        a = generate_formulas(1, seed=42)
        b = generate_formulas(1, seed=42)
        assert a == b
        assert a[0].id == "img_000"

    def test_forty_distinct_in_length_bounds(self):
        specs = generate_formulas(40, seed=7)
        latexes = {s.latex for s in specs}
        assert len(latexes) == 40
        assert all(5 <= len(s.tokens) <= 15 for s in specs)

    def test_latex_round_trips_through_tokenize(self):
        for s in generate_formulas(25, seed=3):
            assert tokenize(s.latex) == list(s.tokens)

    def test_different_seeds_differ(self):
        assert generate_formulas(5, seed=1) != generate_formulas(5, seed=2)

    def test_n_zero_rejected(self):
        with pytest.raises(ValueError):
            generate_formulas(0, seed=1)

    def test_exhausted_grammar_is_generation_error(self, monkeypatch):
        import skelattack.dataset_gen as dg

        monkeypatch.setattr(dg, "MIN_TOKENS", 1000)  # nothing can satisfy this
        with pytest.raises(dg.GenerationError):
            generate_formulas(1, seed=0)


class TestRender:
    def test_height_is_exactly_target(self, atlas, corpus):
        for s, img in corpus:
            assert img.shape[0] == 50

    def test_binary_pixels_only(self, corpus):
        for _, img in corpus:
            assert set(np.unique(img).tolist()) <= {0, 255}

    def test_empty_token_list_is_blank(self, atlas):
        img = render([], atlas)
        assert img.shape[0] == 50
        assert (img == 255).all()

    def test_unknown_token_rejected(self, atlas):
        with pytest.raises(ValueError):
            render(["a", "\\frac"], atlas)

    def test_round_trip_through_toy_ocr(self, atlas, corpus):
        hits = sum(toy_recognize(atlas, img) == s.latex for s, img in corpus)
        assert hits == len(corpus) == 40

    def test_all_search_spaces_nonempty(self, corpus):
        for _, img in corpus:
            for mode in Mode:
                assert len(build_search_space(img, mode)) > 0

    def test_superscript_rides_higher(self, atlas):
        plain = render(["x", "2"], atlas)
        sup = render(["x", "^", "{", "2", "}"], atlas)
        # topmost ink row of the raised digit sits above the plain one
        top_plain = np.nonzero(plain.min(axis=1) == 0)[0][0]
        top_sup = np.nonzero(sup.min(axis=1) == 0)[0][0]
        assert top_sup < top_plain


class TestDatasetOnDisk:
    def test_write_and_load(self, tmp_path):
        manifest_path = write_dataset(tmp_path / "d", n=4, seed=11)
        manifest, images, atlas = load_dataset(tmp_path / "d")
        assert manifest_path.exists()
        assert len(images) == 4
        assert len({im.id for im in images}) == 4
        for im in images:
            assert toy_recognize(atlas, im.image) == im.ground_truth

    def test_same_seed_byte_identical_manifests(self, tmp_path):
        p1 = write_dataset(tmp_path / "a", n=4, seed=11)
        p2 = write_dataset(tmp_path / "b", n=4, seed=11)
        assert p1.read_bytes() == p2.read_bytes()
        img_a = sorted((tmp_path / "a" / "images").glob("*.png"))
        img_b = sorted((tmp_path / "b" / "images").glob("*.png"))
        assert [p.read_bytes() for p in img_a] == [p.read_bytes() for p in img_b]

    def test_hash_mismatch_detected(self, tmp_path):
        write_dataset(tmp_path / "d", n=2, seed=1)
        victim = next((tmp_path / "d" / "images").glob("*.png"))
        victim.write_bytes(victim.read_bytes() + b"tampered")
        with pytest.raises(ValueError, match="hash mismatch"):
            load_dataset(tmp_path / "d")

    def test_duplicate_ids_detected(self, tmp_path):
        write_dataset(tmp_path / "d", n=2, seed=1)
        mpath = tmp_path / "d" / "manifest.json"
        m = json.loads(mpath.read_text())
        m["entries"][1]["id"] = m["entries"][0]["id"]
        mpath.write_text(json.dumps(m))
        with pytest.raises(ValueError, match="duplicate"):
            load_dataset(tmp_path / "d")
