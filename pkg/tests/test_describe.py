import numpy as np
import pytest

from bignn.bimanual import TaxonomyLabel
from bignn.describe import (DescriptionContext, TemplateSet, chunk_starts,
                            generate, indefinite_article, window_count)

GOLDEN_CHOPPING = (
    "A person is performing an asymmetric and coordinated chopping action "
    "with a knife in his/her right hand and a cutting board in his/her left "
    "hand, while maintaining a stacked-hand spatial relationship and a high "
    "level of precision in cutting the vegetables into small pieces."
)


def chopping_context():
    return DescriptionContext(
        actor="A person",
        objects=["a knife", "a cutting board", "vegetables"],
        relations=[("a knife", "above", "a cutting board")],
        left_action="holding",
        left_object="a cutting board",
        right_action="chopping",
        right_object="a knife",
        action="chopping",
        taxonomy=TaxonomyLabel("coordinated", "asymmetric", "right",
                               "stacked", "high"),
        purpose="cutting the vegetables into small pieces",
    )


class TestWindowCount:
    def test_formula(self):
        assert window_count(100, 30, 15) == 5  # floor(70/15)+1

    def test_exact_fit(self):
        assert window_count(30, 30, 15) == 1

    def test_long_window_single_chunk(self):
        assert window_count(700, 512, 256) == 1

    def test_short_input_padded_single(self):
        assert window_count(10, 512, 256) == 1

    def test_chunk_starts(self):
        assert chunk_starts(100, 30, 15) == [0, 15, 30, 45, 60]

    def test_matches_enumeration_half_stride(self):
        rng = np.random.Generator(np.random.PCG64(0))
        for _ in range(1000):
            window = int(rng.integers(2, 600))
            length = int(rng.integers(1, 2000))
            stride = max(1, window // 2)
            n = window_count(length, window, stride)
            if length < window:
                assert n == 1
                continue
            starts = []
            start = 0
            while start + window <= length:
                starts.append(start)
                start += stride
            assert n == len(starts)

    def test_invalid_stride(self):
        with pytest.raises(ValueError):
            window_count(10, 5, 0)


class TestGenerate:
    def test_level3_golden_sentence(self):
        sentence = generate(3, chopping_context(), TemplateSet.default())
        assert sentence == GOLDEN_CHOPPING

    def test_level1_lists_objects(self):
        sentence = generate(1, chopping_context(), TemplateSet.default())
        for phrase in ("knife", "cutting board", "vegetables"):
            assert phrase in sentence
        assert sentence.endswith(".")

    def test_level2_per_hand(self):
        sentence = generate(2, chopping_context(), TemplateSet.default())
        assert "left hand" in sentence and "right hand" in sentence

    def test_optional_fields_elided(self):
        ctx = chopping_context()
        ctx.left_action = None
        ctx.left_object = None
        ctx.purpose = None
        sentence2 = generate(2, ctx, TemplateSet.default())
        assert "left hand" not in sentence2
        assert sentence2.endswith(".")
        sentence3 = generate(3, ctx, TemplateSet.default())
        assert sentence3.endswith("precision.")

    def test_plain_level3_without_taxonomy(self):
        ctx = chopping_context()
        ctx.taxonomy = None
        sentence = generate(3, ctx, TemplateSet.default())
        assert "asymmetric" not in sentence
        assert "chopping" in sentence

    def test_taxonomy_terms_present_iff_set(self):
        ctx = chopping_context()
        sentence = generate(3, ctx, TemplateSet.default())
        for term in ("asymmetric", "coordinated", "stacked-hand", "high"):
            assert term in sentence

    def test_pure_function(self):
        a = generate(3, chopping_context(), TemplateSet.default())
        b = generate(3, chopping_context(), TemplateSet.default())
        assert a == b
        assert a.encode("utf-8") == b.encode("utf-8")

    def test_unresolvable_slot_names_it(self):
        templates = TemplateSet({"level1": "{missing_slot}!"})
        with pytest.raises(ValueError, match="missing_slot"):
            generate(1, chopping_context(), templates)

    def test_bad_level(self):
        with pytest.raises(ValueError):
            generate(4, chopping_context(), TemplateSet.default())

    def test_random_contexts_deterministic(self):
        rng = np.random.Generator(np.random.PCG64(1))
        words = ["apple", "orange", "hammer", "elbow", "iron", "untensil"]
        for _ in range(200):
            ctx = DescriptionContext(
                objects=[f"a {rng.choice(words)}" for _ in range(3)],
                action=str(rng.choice(words)),
                left_action="holding",
                left_object=f"a {rng.choice(words)}",
                right_action=str(rng.choice(words)),
                right_object=f"an {rng.choice(words)}",
                taxonomy=TaxonomyLabel(
                    str(rng.choice(["coordinated", "uncoordinated"])),
                    "asymmetric",
                    str(rng.choice(["left", "right", "none"])),
                    str(rng.choice(["close", "crossed", "stacked"])),
                    str(rng.choice(["low", "medium", "high"]))),
                purpose=str(rng.choice(words)))
            assert generate(3, ctx, TemplateSet.default()) == \
                generate(3, ctx, TemplateSet.default())


class TestArticles:
    def test_vowel(self):
        assert indefinite_article("asymmetric") == "an"

    def test_consonant(self):
        assert indefinite_article("symmetric") == "a"


class TestTemplateFiles:
    def test_custom_template_file(self, tmp_path):
        path = tmp_path / "templates.json"
        path.write_text('{"level1": "Objects: {object_list}."}', encoding="utf-8")
        templates = TemplateSet.from_file(path)
        out = generate(1, chopping_context(), templates)
        assert out.startswith("Objects: a knife")

    def test_missing_template_named(self):
        with pytest.raises(ValueError, match="level2"):
            generate(2, chopping_context(), TemplateSet({"level1": "x"}))
