import random

import pytest

from cnpb.datasets import Annotation, Category, Dataset, ImageRecord
from cnpb.detections import FpHit, FpIndex
from cnpb.errors import ValidationError
from cnpb.geometry import Box
from cnpb.scoring import ScoreRecord
from cnpb.selection import (
    SelectionConfig,
    apply_removal,
    build_candidates,
    cap_per_category,
    match_pairs,
    plan_from_json,
    plan_to_json,
)

CATS = {
    name: Category(id=101 + i, name=name, split="novel")
    for i, name in enumerate(["bird", "bus", "cow"])
}


def make_index(per_category: dict[str, list[str]], total: int = 100) -> FpIndex:
    hits = []
    for name, image_ids in per_category.items():
        for j, img in enumerate(image_ids):
            hits.append(
                FpHit(
                    image_id=img,
                    novel_category=CATS[name],
                    fp_box=Box(float(j), float(j), float(j + 10), float(j + 10)),
                    score=0.9,
                )
            )
    return FpIndex(hits=tuple(hits), base_image_total=total)


def make_novel(k_per_cat: dict[str, int]) -> Dataset:
    cats = tuple(CATS[n] for n in sorted(k_per_cat))
    images = []
    for name, k in sorted(k_per_cat.items()):
        for s in range(k):
            images.append(
                ImageRecord(
                    image_id=f"{name}_{s}",
                    width=64,
                    height=64,
                    annotations=(Annotation(name, Box(4, 4, 30, 30)),),
                )
            )
    return Dataset(images=tuple(images), categories=cats, shot_count=None)


def score_record(image_id, box, max_score):
    names = sorted(CATS)
    scores = tuple((n, max_score if i == 0 else 0.05) for i, n in enumerate(names))
    return ScoreRecord(image_id=image_id, fp_box=box, scores=scores)


def all_scores(index: FpIndex, max_score=0.1, bad_images=()):
    return [
        score_record(h.image_id, h.fp_box, 0.9 if h.image_id in bad_images else max_score)
        for h in index.hits
    ]


class TestCapPerCategory:
    def test_cap_applies(self):
        index = make_index({"cow": [f"i{j}" for j in range(50)]})
        capped = cap_per_category(index, 3, random.Random(0))
        assert len(capped["cow"]) == 3

    def test_fewer_than_cap(self):
        index = make_index({"cow": ["i0", "i1"]})
        capped = cap_per_category(index, 3, random.Random(0))
        assert sorted(capped["cow"]) == ["i0", "i1"]

    def test_deterministic_under_seed(self):
        index = make_index({"cow": [f"i{j}" for j in range(50)]})
        a = cap_per_category(index, 3, random.Random(7))
        b = cap_per_category(index, 3, random.Random(7))
        assert a == b

    def test_zero_fp_category_absent(self):
        index = make_index({"cow": ["i0"]})
        capped = cap_per_category(index, 3, random.Random(0))
        assert "bus" not in capped


class TestApplyRemoval:
    def test_bad_case_removed_everywhere(self):
        index = make_index({"cow": ["i0", "i1"], "bus": ["i0", "i2"]})
        candidates = {"cow": ["i0", "i1"], "bus": ["i0", "i2"]}
        scores = all_scores(index, bad_images={"i0"})
        filtered = apply_removal(candidates, index, scores, 0.5)
        assert filtered == {"cow": ["i1"], "bus": ["i2"]}

    def test_all_clean_retained(self):
        index = make_index({"cow": ["i0", "i1"]})
        candidates = {"cow": ["i0", "i1"]}
        filtered = apply_removal(candidates, index, all_scores(index), 0.5)
        assert filtered == candidates

    def test_missing_score_record(self):
        index = make_index({"cow": ["i0"]})
        with pytest.raises(ValidationError, match="i0"):
            apply_removal({"cow": ["i0"]}, index, [], 0.5)


class TestBuildCandidates:
    def test_no_remove_keeps_all(self):
        index = make_index({"cow": ["i0", "i1"]})
        novel = make_novel({"cow": 3})
        config = SelectionConfig(no_remove=True)
        candidates, audit = build_candidates(config, index, make_base(5), novel, [])
        assert candidates["cow"] == ["i0", "i1"]
        assert audit["cow"]["removed"] == 0

    def test_removal_shrinks_without_resampling(self):
        # 5 FP images, cap 3, one capped image is bad: 2 remain, no refill.
        index = make_index({"cow": [f"i{j}" for j in range(5)]})
        novel = make_novel({"cow": 3})
        config = SelectionConfig(rng_seed=3)
        capped = cap_per_category(index, 3, random.Random("3:cap"))
        bad = capped["cow"][0]
        scores = all_scores(index, bad_images={bad})
        candidates, audit = build_candidates(config, index, make_base(5), novel, scores)
        assert len(candidates["cow"]) == 2
        assert audit["cow"] == {"mined": 5, "capped": 3, "removed": 1}

    def test_no_remove_superset_of_default(self):
        index = make_index({"cow": [f"i{j}" for j in range(5)]})
        novel = make_novel({"cow": 3})
        scores = all_scores(index, bad_images={"i1"})
        with_removal, _ = build_candidates(SelectionConfig(rng_seed=5), index, make_base(5), novel, scores)
        without, _ = build_candidates(
            SelectionConfig(rng_seed=5, no_remove=True), index, make_base(5), novel, []
        )
        assert set(with_removal["cow"]) <= set(without["cow"])

    def test_base_cap_axis_literal_reading(self):
        # 6 FP images of "cow", all containing base category "chair":
        # the base-axis cap keeps at most 3 of them.
        index = make_index({"cow": [f"i{j}" for j in range(6)]})
        novel = make_novel({"cow": 3})
        imgs = tuple(
            ImageRecord(
                image_id=f"i{j}", width=96, height=96,
                annotations=(Annotation("chair", Box(1, 1, 20, 20)),),
            )
            for j in range(6)
        )
        base = Dataset(images=imgs, categories=(Category(id=1, name="chair", split="base"),))
        config = SelectionConfig(cap_axis="base", no_remove=True, rng_seed=2)
        candidates, _ = build_candidates(config, index, base, novel, [])
        assert len(candidates["cow"]) == 3
        assert set(candidates["cow"]) <= {f"i{j}" for j in range(6)}

    def test_no_fp_draws_from_whole_base(self):
        index = make_index({})
        novel = make_novel({"cow": 3})
        base = make_base(30)
        candidates, _ = build_candidates(
            SelectionConfig(no_fp=True, no_remove=True), index, base, novel, []
        )
        base_ids = {img.image_id for img in base.images}
        assert len(candidates["cow"]) == 3
        assert set(candidates["cow"]) <= base_ids


def make_base(n: int) -> Dataset:
    imgs = tuple(
        ImageRecord(image_id=f"i{i}", width=96, height=96, annotations=())
        for i in range(n)
    )
    return Dataset(images=imgs, categories=())


class TestMatchPairs:
    def pairs_for(self, k, n_b, combination, **kwargs):
        novel = make_novel({"cow": k})
        ids = [f"i{j}" for j in range(n_b)]
        index = make_index({"cow": ids})
        config = SelectionConfig(combination=combination, rng_seed=1, **kwargs)
        return match_pairs(novel, {"cow": ids}, config, index)

    def test_minority_10_novel_3_base(self):
        plan = self.pairs_for(10, 3, "minority")
        assert plan.pair_count() == 3
        # each base image used at most once
        assert len({p.base_image_id for p in plan.pairs}) == 3

    def test_majority_10_novel_3_base(self):
        plan = self.pairs_for(10, 3, "majority")
        assert plan.pair_count() == 10

    def test_one_shot_minority_single_pair(self):
        assert self.pairs_for(1, 3, "minority").pair_count() == 1

    @pytest.mark.parametrize("k", [1, 3, 5, 10])
    @pytest.mark.parametrize("n_b", [0, 1, 2, 3, 5])
    def test_cardinality_laws(self, k, n_b):
        assert self.pairs_for(k, n_b, "minority").pair_count() == (
            min(k, n_b) if n_b else 0
        )
        assert self.pairs_for(k, n_b, "majority").pair_count() == (
            max(k, n_b) if n_b else 0
        )

    def test_zero_candidates_recorded_not_error(self):
        plan = self.pairs_for(3, 0, "minority")
        assert plan.pair_count() == 0
        assert plan.audit["per_category"]["cow"]["pairs"] == 0

    def test_sc_soundness(self):
        novel = make_novel({"cow": 3, "bus": 3})
        index = make_index({"cow": ["i0", "i1"], "bus": ["i2"]})
        candidates = {"cow": ["i0", "i1"], "bus": ["i2"]}
        plan = match_pairs(novel, candidates, SelectionConfig(rng_seed=2), index)
        by_image = index.by_image()
        for p in plan.pairs:
            assert any(
                h.novel_category.name == p.category_name
                for h in by_image[p.base_image_id]
            )

    def test_sc_violation_detected(self):
        novel = make_novel({"cow": 1})
        index = make_index({"bus": ["i0"]})
        with pytest.raises(ValidationError, match="SC violated"):
            match_pairs(novel, {"cow": ["i0"]}, SelectionConfig(), index)

    def test_no_sc_uses_pooled_candidates(self):
        novel = make_novel({"cow": 3, "bus": 3})
        index = make_index({"cow": ["i0"], "bus": ["i1"]})
        candidates = {"cow": ["i0"], "bus": ["i1"]}
        plan = match_pairs(novel, candidates, SelectionConfig(no_sc=True, rng_seed=2), index)
        # pooled set has 2 candidates per category, minority: min(3, 2) each
        assert plan.pair_count() == 4

    def test_determinism_byte_for_byte(self):
        novel = make_novel({"cow": 5, "bus": 2})
        index = make_index({"cow": ["i0", "i1"], "bus": ["i2", "i3", "i4"]})
        candidates = {"cow": ["i0", "i1"], "bus": ["i2", "i3", "i4"]}
        config = SelectionConfig(rng_seed=9)
        a = plan_to_json(match_pairs(novel, candidates, config, index))
        b = plan_to_json(match_pairs(novel, candidates, config, index))
        assert a == b

    def test_different_seeds_may_differ(self):
        novel = make_novel({"cow": 10})
        ids = ["i0", "i1", "i2"]
        index = make_index({"cow": ids})
        plans = {
            plan_to_json(
                match_pairs(novel, {"cow": ids}, SelectionConfig(rng_seed=s), index)
            )
            for s in range(20)
        }
        assert len(plans) > 1

    def test_plan_round_trip(self):
        plan = self.pairs_for(5, 3, "majority")
        assert plan_from_json(plan_to_json(plan)) == plan
